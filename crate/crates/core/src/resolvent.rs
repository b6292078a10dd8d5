//! The global resolvent `R(λ)` as the monotone limit of local resolvents on
//! growing balls, plus numerical checks of its algebraic laws.

use serde::{Deserialize, Serialize};

use crate::cutoff::cutoff_eval;
use crate::elliptic::{assemble_generator, local_resolvent_with, DriftScheme, Orientation};
use crate::error::{Error, Result};
use crate::grid::{BallDomain, Grid, GridFunction, ValueKind};
use crate::linalg::inf_norm;
use crate::model::DiffusionModel;

/// Geometry and stopping rule for an exhaustion run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Exhaustion {
    pub scale: f64,
    pub spacing: f64,
    pub max_index: usize,
    pub scheme: DriftScheme,
    /// Half-width of the observation box `[-w, w]^dim`.
    pub window: f64,
    pub tol: f64,
}

impl Exhaustion {
    pub fn domain(&self, dim: usize, index: usize) -> Result<BallDomain> {
        BallDomain::new(dim, self.scale, index, self.spacing)
    }

    pub fn largest_grid(&self, dim: usize) -> Result<Grid> {
        Ok(self.domain(dim, self.max_index)?.grid())
    }

    fn check(&self, dim: usize, lambda: f64) -> Result<()> {
        if !(lambda > 0.0) {
            return Err(Error::InvalidArgument(format!("lambda must be positive, got {lambda}")));
        }
        if !(self.tol > 0.0) {
            return Err(Error::InvalidArgument("tol must be positive".into()));
        }
        if self.max_index < 2 {
            return Err(Error::InvalidArgument("max_index must be at least 2".into()));
        }
        let corner = self.window * (dim as f64).sqrt();
        let inner = self.scale * (self.max_index - 1) as f64;
        if !(self.window >= 0.0 && corner < inner) {
            return Err(Error::InvalidArgument(format!(
                "observation window (corner radius {corner}) must lie strictly inside radius {inner}"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TraceRow {
    pub index: usize,
    pub radius: f64,
    pub sup_change: f64,
    pub interior_value_at_origin: f64,
}

#[derive(Debug, Clone)]
pub struct GlobalResolvent {
    pub lambda: f64,
    /// Last iterate, expressed on the grid of the largest ball.
    pub limit: GridFunction,
    pub converged_index: usize,
    pub last_sup_change: f64,
    /// Sup-norm of each iterate.
    pub snapshot_norms: Vec<f64>,
    pub trace: Vec<TraceRow>,
}

/// Local resolvent `R_n(λ) f` embedded into `target`.
pub fn local_resolvent_on(
    model: &DiffusionModel,
    ex: &Exhaustion,
    index: usize,
    lambda: f64,
    f: &GridFunction,
    target: &Grid,
) -> Result<GridFunction> {
    let domain = ex.domain(model.dim, index)?;
    let op = assemble_generator(model, &domain, Orientation::Backward, ex.scheme)?;
    let g = cutoff_eval(index, &domain)?;
    let solver = op.resolvent_solver(lambda)?;
    let local = local_resolvent_with(&op, &solver, lambda, f, &g)?;
    Ok(local.solution.embed(target))
}

/// Run the exhaustion `R_1 f, R_2 f, …` until successive iterates differ by
/// less than `tol` on the observation window. The zeroth iterate is `0`.
pub fn resolvent(
    model: &DiffusionModel,
    ex: &Exhaustion,
    lambda: f64,
    f: &GridFunction,
) -> Result<GlobalResolvent> {
    ex.check(model.dim, lambda)?;
    let target = ex.largest_grid(model.dim)?;
    let window = target.window_nodes(ex.window);
    let origin = target.origin();
    let mut prev = GridFunction::zeros(&target, ValueKind::Function);
    let mut trace = Vec::new();
    let mut norms = Vec::new();
    for n in 1..=ex.max_index {
        let u = local_resolvent_on(model, ex, n, lambda, f, &target)?;
        let change = window
            .iter()
            .map(|&i| (u.values[i] - prev.values[i]).abs())
            .fold(0.0, f64::max);
        trace.push(TraceRow {
            index: n,
            radius: ex.scale * n as f64,
            sup_change: change,
            interior_value_at_origin: u.values[origin],
        });
        norms.push(u.sup_norm());
        prev = u;
        if change < ex.tol {
            return Ok(GlobalResolvent {
                lambda,
                limit: prev,
                converged_index: n,
                last_sup_change: change,
                snapshot_norms: norms,
                trace,
            });
        }
    }
    Err(Error::NoConvergence {
        max_index: ex.max_index,
        trace: trace.iter().map(|t| t.sup_change).collect(),
    })
}

/// How `verify_resolvent_identity` realizes `R(λ)`.
#[derive(Debug, Clone)]
pub enum ResolventMode {
    /// Plain matrix resolvents `(λ − L_h)^{-1}` on one ball, applied to `f g_n`.
    FixedBall(BallDomain),
    /// The exhaustion limit.
    Exhaustion(Exhaustion),
}

/// `‖R(λ1)f − R(λ2)f − (λ2 − λ1) R(λ1)R(λ2)f‖_∞` on the observation window
/// (whole ball in fixed-ball mode).
pub fn verify_resolvent_identity(
    model: &DiffusionModel,
    lambda1: f64,
    lambda2: f64,
    f: &GridFunction,
    mode: &ResolventMode,
    scheme: DriftScheme,
) -> Result<f64> {
    match mode {
        ResolventMode::FixedBall(domain) => {
            let op = assemble_generator(model, domain, Orientation::Backward, scheme)?;
            let g = cutoff_eval(domain.index, domain)?;
            let rhs: Vec<f64> = op
                .nodes
                .iter()
                .zip(op.restrict(f))
                .map(|(&i, v)| v * g.values[i])
                .collect();
            let s1 = op.resolvent_solver(lambda1)?;
            let s2 = op.resolvent_solver(lambda2)?;
            let r1 = s1.solve(&rhs)?;
            let r2 = s2.solve(&rhs)?;
            let r12 = s1.solve(&r2)?;
            let d: Vec<f64> = (0..rhs.len())
                .map(|k| r1[k] - r2[k] - (lambda2 - lambda1) * r12[k])
                .collect();
            Ok(inf_norm(&d))
        }
        ResolventMode::Exhaustion(ex) => {
            if lambda1 == lambda2 {
                // the identity is trivially exact; still check the inputs
                ex.check(model.dim, lambda1)?;
                return Ok(0.0);
            }
            let r1 = resolvent(model, ex, lambda1, f)?.limit;
            let r2 = resolvent(model, ex, lambda2, f)?.limit;
            let r12 = resolvent(model, ex, lambda1, &r2)?.limit;
            let window = r1.grid.window_nodes(ex.window);
            Ok(window
                .iter()
                .map(|&i| (r1.values[i] - r2.values[i] - (lambda2 - lambda1) * r12.values[i]).abs())
                .fold(0.0, f64::max))
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ContractionReport {
    pub lambda: f64,
    /// `min_f (‖f‖ − λ‖R(λ)f‖)`; non-negative when contraction holds.
    pub worst_contraction_margin: f64,
    /// Smallest value of `R(λ)f` over the non-negative members of the suite.
    pub min_value_nonneg: f64,
    /// `‖R f − (R f⁺ − R f⁻)‖_∞` over the sign-changing members.
    pub linearity_residual: f64,
    pub passed: bool,
}

/// Contraction, positivity and `f = f⁺ − f⁻` linearity over a suite of inputs.
pub fn verify_contraction_positivity(
    model: &DiffusionModel,
    ex: &Exhaustion,
    lambda: f64,
    suite: &[GridFunction],
) -> Result<ContractionReport> {
    let mut rep = ContractionReport {
        lambda,
        worst_contraction_margin: f64::INFINITY,
        min_value_nonneg: f64::INFINITY,
        linearity_residual: 0.0,
        passed: true,
    };
    for f in suite {
        let r = resolvent(model, ex, lambda, f)?.limit;
        rep.worst_contraction_margin = rep
            .worst_contraction_margin
            .min(f.sup_norm() - lambda * r.sup_norm());
        if f.values.iter().all(|&v| v >= 0.0) {
            rep.min_value_nonneg = rep.min_value_nonneg.min(r.min());
        } else {
            let plus = f.map(|v| v.max(0.0));
            let minus = f.map(|v| (-v).max(0.0));
            let rp = resolvent(model, ex, lambda, &plus)?.limit;
            let rm = resolvent(model, ex, lambda, &minus)?.limit;
            let d = (0..r.values.len())
                .map(|i| (r.values[i] - (rp.values[i] - rm.values[i])).abs())
                .fold(0.0, f64::max);
            rep.linearity_residual = rep.linearity_residual.max(d);
        }
    }
    rep.passed = rep.worst_contraction_margin >= -1e-10
        && (rep.min_value_nonneg == f64::INFINITY || rep.min_value_nonneg >= -1e-12)
        && rep.linearity_residual <= 1e-9;
    Ok(rep)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MonotoneReport {
    pub pairs: Vec<(usize, usize)>,
    /// `min (R_{n+1} f − R_n f)` over shared nodes, per pair.
    pub min_increase: Vec<f64>,
    /// Same minimum restricted to interior nodes of the smaller ball.
    pub min_interior_increase: Vec<f64>,
    pub passed: bool,
}

/// Pointwise `R_{n+1}(λ) f ≥ R_n(λ) f` on shared nodes for consecutive indices.
pub fn verify_monotone_in_index(
    model: &DiffusionModel,
    ex: &Exhaustion,
    lambda: f64,
    f: &GridFunction,
    indices: &[usize],
) -> Result<MonotoneReport> {
    if f.values.iter().any(|&v| v < 0.0) {
        return Err(Error::InvalidArgument("monotonicity check needs f >= 0".into()));
    }
    let target = Exhaustion {
        max_index: indices.iter().copied().max().unwrap_or(1),
        ..ex.clone()
    }
    .largest_grid(model.dim)?;
    let sols = indices
        .iter()
        .map(|&n| local_resolvent_on(model, ex, n, lambda, f, &target))
        .collect::<Result<Vec<_>>>()?;
    let mut rep = MonotoneReport {
        pairs: Vec::new(),
        min_increase: Vec::new(),
        min_interior_increase: Vec::new(),
        passed: true,
    };
    for (k, w) in sols.windows(2).enumerate() {
        let (n, m) = (indices[k], indices[k + 1]);
        let small = ex.domain(model.dim, n.min(m))?.grid();
        let mut worst = f64::INFINITY;
        let mut worst_interior = f64::INFINITY;
        for i in 0..small.len() {
            let j = small.map_to(i, &target).expect("nested grids");
            let d = w[1].values[j] - w[0].values[j];
            worst = worst.min(d);
            if small.is_interior(i) {
                worst_interior = worst_interior.min(d);
            }
        }
        rep.pairs.push((n, m));
        rep.min_increase.push(worst);
        rep.min_interior_increase.push(worst_interior);
        if worst < -1e-12 {
            rep.passed = false;
        }
    }
    Ok(rep)
}
