//! Invariant density `θ`, the invariant functional `Λ`, and the escape
//! function `e(x)`.
//!
//! `θ` is computed on a reflecting (zero-flux) closure of `L*_h`; invariance
//! is then checked against the absorbing evolution, whose mass loss is the
//! leak budget.

use serde::{Deserialize, Serialize};

use crate::elliptic::{assemble_with_closure, Closure, DriftScheme, OperatorMatrix, Orientation};
use crate::error::{Error, Result};
use crate::grid::{build_grid_function, BallDomain, Grid, GridFunction, ValueKind};
use crate::linalg::{inf_norm, CsrMatrix, LinearSolver};
use crate::model::DiffusionModel;
use crate::semigroup::{EvolutionMethod, Semigroup};

/// Fraction of `θ`-mass tolerated in the outer shell `|x| ≥ 0.9 R` before the
/// density is declared an artifact of the truncation.
pub const SHELL_MASS_LIMIT: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "method")]
pub enum StationaryMethod {
    Nullspace,
    /// March the reflecting forward equation with step `dt` until the L¹
    /// change per unit time drops below `tol`, or `horizon` is reached.
    TimeAverage { dt: f64, horizon: f64, tol: f64 },
}

impl StationaryMethod {
    pub fn time_average() -> Self {
        Self::TimeAverage {
            dt: 0.05,
            horizon: 200.0,
            tol: 1e-8,
        }
    }
}

#[derive(Debug, Clone)]
pub struct StationaryDensity {
    pub theta: GridFunction,
    pub method: StationaryMethod,
    /// `‖L*_h θ‖_∞` over interior rows of the reflecting operator.
    pub residual: f64,
    /// Mass fraction in `|x| ≥ 0.9 R`.
    pub shell_mass: f64,
    /// L¹ change per unit time, one entry per step (time-average only).
    pub trace: Vec<f64>,
}

fn reflecting_forward(model: &DiffusionModel, domain: &BallDomain, scheme: DriftScheme) -> Result<OperatorMatrix> {
    assemble_with_closure(model, domain, Orientation::Forward, scheme, Closure::Reflecting)
}

fn shell_mass(grid: &Grid, theta: &GridFunction) -> f64 {
    let r2 = (0.9 * grid.radius()).powi(2);
    let total = theta.mass();
    let outer: f64 = (0..grid.len())
        .filter(|&i| grid.coords(i).iter().map(|v| v * v).sum::<f64>() >= r2)
        .map(|i| theta.values[i])
        .sum::<f64>()
        * grid.cell_volume();
    outer / total
}

/// Solve `L*_h θ = 0` with one node pinned, then normalize.
fn nullspace(op: &OperatorMatrix) -> Result<Vec<f64>> {
    let n = op.len();
    let pin = op.row_of(op.grid.origin()).unwrap_or(0);
    let shift = |j: usize| if j > pin { j - 1 } else { j };
    let mut trips = Vec::with_capacity(op.matrix.nnz());
    let mut rhs = vec![0.0; n - 1];
    for (i, j, v) in op.matrix.triplets() {
        if i == pin {
            continue;
        }
        if j == pin {
            rhs[shift(i)] -= v;
        } else {
            trips.push((shift(i), shift(j), v));
        }
    }
    let sub = CsrMatrix::from_triplets(n - 1, n - 1, trips);
    let sol = LinearSolver::new(sub, op.grid.dim >= 3)?.solve_backward_stable(&rhs)?;
    let mut out = Vec::with_capacity(n);
    out.extend_from_slice(&sol[..pin]);
    out.push(1.0);
    out.extend_from_slice(&sol[pin..]);
    Ok(out)
}

fn normalize(v: &mut [f64], vol: f64) {
    let total: f64 = v.iter().sum::<f64>() * vol;
    for x in v {
        *x /= total;
    }
}

pub fn stationary_density(
    model: &DiffusionModel,
    domain: &BallDomain,
    scheme: DriftScheme,
    method: StationaryMethod,
) -> Result<StationaryDensity> {
    stationary_density_with(model, domain, scheme, method, None, &mut |_| Ok(()))
}

/// [`stationary_density`] with checkpointing: the time-average march starts
/// from `resume` if given and hands every state to `on_step`. Both are
/// ignored by the null-space method.
pub fn stationary_density_with(
    model: &DiffusionModel,
    domain: &BallDomain,
    scheme: DriftScheme,
    method: StationaryMethod,
    resume: Option<&Checkpoint>,
    on_step: &mut dyn FnMut(&Checkpoint) -> Result<()>,
) -> Result<StationaryDensity> {
    let op = reflecting_forward(model, domain, scheme)?;
    let vol = op.cell_volume();
    let (mut v, trace) = match method {
        StationaryMethod::Nullspace => (nullspace(&op)?, Vec::new()),
        StationaryMethod::TimeAverage { dt, horizon, tol } => {
            let run = march(&op, dt, horizon, tol, resume, on_step)?;
            (run.values, run.trace)
        }
    };
    normalize(&mut v, vol);
    if let Some((row, &val)) = v.iter().enumerate().find(|(_, &x)| !(x > 0.0)) {
        return Err(Error::NegativeMass {
            value: val * vol,
            node: op.nodes[row],
        });
    }
    let lv = op.matrix.matvec(&v);
    let residual = inf_norm(&lv);
    let theta = op.extend(&v, ValueKind::Density);
    let shell = shell_mass(&op.grid, &theta);
    if shell > SHELL_MASS_LIMIT {
        return Err(Error::Ambiguous(format!(
            "{:.3}% of the mass sits in the outer shell |x| >= {:.3}; the density is a truncation artifact",
            100.0 * shell,
            0.9 * op.grid.radius()
        )));
    }
    Ok(StationaryDensity {
        theta,
        method,
        residual,
        shell_mass: shell,
        trace,
    })
}

/// State of a forward march, resumable from text.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub step: usize,
    pub dt: f64,
    /// Interior values in row order.
    pub values: Vec<f64>,
}

impl Checkpoint {
    pub fn to_text(&self) -> String {
        let mut s = format!(
            "# minsemi checkpoint\nstep {}\ndt {:.17e}\nvalues {}\n",
            self.step,
            self.dt,
            self.values.len()
        );
        for v in &self.values {
            s.push_str(&format!("{v:.17e}\n"));
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
        let mut field = |name: &str| -> Result<(usize, String)> {
            let (no, line) = lines.next().ok_or_else(|| Error::Parse {
                line: 0,
                msg: format!("missing `{name}`"),
            })?;
            match line.split_once(' ') {
                Some((k, v)) if k == name => Ok((no, v.trim().to_string())),
                _ => Err(Error::Parse {
                    line: no,
                    msg: format!("expected `{name} <value>`"),
                }),
            }
        };
        let bad = |line: usize, what: &str| Error::Parse {
            line,
            msg: format!("bad {what}"),
        };
        let (no, step) = field("step")?;
        let step: usize = step.parse().map_err(|_| bad(no, "step"))?;
        let (no, dt) = field("dt")?;
        let dt: f64 = dt.parse().map_err(|_| bad(no, "dt"))?;
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(bad(no, "dt"));
        }
        let (no, count) = field("values")?;
        let count: usize = count.parse().map_err(|_| bad(no, "count"))?;
        let mut values = Vec::with_capacity(count.min(1 << 20));
        for (no, line) in lines {
            let v: f64 = line.parse().map_err(|_| bad(no, "value"))?;
            if !v.is_finite() {
                return Err(bad(no, "value"));
            }
            values.push(v);
        }
        if values.len() != count {
            return Err(Error::Parse {
                line: 0,
                msg: format!("expected {count} values, found {}", values.len()),
            });
        }
        Ok(Self { step, dt, values })
    }
}

pub struct MarchResult {
    pub values: Vec<f64>,
    pub steps: usize,
    pub trace: Vec<f64>,
}

/// Implicit-Euler march of `∂ₜP = L*P` from a broad Gaussian (or `resume`),
/// stopping when `‖ΔP‖₁/dt < tol`. `on_step` receives every state.
pub fn march(
    op: &OperatorMatrix,
    dt: f64,
    horizon: f64,
    tol: f64,
    resume: Option<&Checkpoint>,
    on_step: &mut dyn FnMut(&Checkpoint) -> Result<()>,
) -> Result<MarchResult> {
    if !(dt > 0.0 && horizon > 0.0 && tol > 0.0) {
        return Err(Error::InvalidArgument("dt, horizon and tol must be positive".into()));
    }
    let vol = op.cell_volume();
    let (mut state, start) = match resume {
        Some(c) => {
            if c.values.len() != op.len() || c.dt != dt {
                return Err(Error::InvalidArgument("checkpoint does not match this run".into()));
            }
            (c.values.clone(), c.step)
        }
        None => {
            let s2 = (0.5 * op.grid.radius()).powi(2);
            let mut v: Vec<f64> = (0..op.len())
                .map(|r| (-op.node_coords(r).iter().map(|x| x * x).sum::<f64>() / (2.0 * s2)).exp())
                .collect();
            normalize(&mut v, vol);
            (v, 0)
        }
    };
    let solver = op.resolvent_solver(1.0 / dt)?;
    let max_steps = (horizon / dt).ceil() as usize;
    let mut trace = Vec::new();
    for step in start + 1..=max_steps {
        let mut next = solver.solve(&state)?;
        for x in &mut next {
            *x /= dt;
        }
        let change = next.iter().zip(&state).map(|(a, b)| (a - b).abs()).sum::<f64>() * vol / dt;
        state = next;
        trace.push(change);
        on_step(&Checkpoint {
            step,
            dt,
            values: state.clone(),
        })?;
        if change < tol {
            return Ok(MarchResult {
                values: state,
                steps: step,
                trace,
            });
        }
    }
    let tail = trace.len().saturating_sub(10);
    Err(Error::NotStabilized {
        what: "forward march towards the invariant density".into(),
        trace: trace.split_off(tail),
    })
}

/// The reflecting forward operator used by [`stationary_density`].
pub fn stationary_operator(model: &DiffusionModel, domain: &BallDomain, scheme: DriftScheme) -> Result<OperatorMatrix> {
    reflecting_forward(model, domain, scheme)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InvarianceReport {
    pub t: f64,
    pub l1_residual: f64,
    /// Mass lost through the absorbing boundary, `1 − ∫T̃(t)θ`.
    pub leak_budget: f64,
}

/// `‖T̃(t)θ − θ‖_{L¹}` under the absorbing evolution.
pub fn check_invariance(sg: &Semigroup, theta: &GridFunction, t: f64, steps: Option<usize>) -> Result<InvarianceReport> {
    let evolved = sg.evolve_forward(t, theta, steps)?.result;
    let start = theta.embed(&sg.forward.grid);
    Ok(InvarianceReport {
        t,
        l1_residual: evolved.l1_distance(&start),
        leak_budget: start.mass() - evolved.mass(),
    })
}

/// The observed side of the Foguel dichotomy: an invariant density, or
/// `T(t)f → 0`. Only the branch actually seen is reported; nothing here shows
/// that one of the two must occur.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "branch", rename_all = "lowercase")]
pub enum FoguelBranch {
    Density,
    /// `T(t)f(x₀)` for the bump `f = exp(−|x|²)`, strictly decreasing.
    Decaying { times: Vec<f64>, values: Vec<f64> },
    /// Neither a density nor a monotone decay on the sampled times.
    Undecided { times: Vec<f64>, values: Vec<f64> },
}

/// Sample `T(t)f(x₀)` on `times` to classify a model without a density.
pub fn decay_branch(sg: &Semigroup, x0: &[f64], times: &[f64], steps: Option<usize>) -> Result<FoguelBranch> {
    let grid = &sg.backward.grid;
    let f = build_grid_function(|x| (-x.iter().map(|v| v * v).sum::<f64>()).exp(), grid, ValueKind::Function)?;
    let mut values = Vec::with_capacity(times.len());
    for &t in times {
        let u = sg.evolve(t, &f, steps, EvolutionMethod::ImplicitEulerPower)?.result;
        values.push(u.at(x0).ok_or_else(|| Error::InvalidArgument(format!("x0 = {x0:?} is off the grid")))?);
    }
    let times = times.to_vec();
    Ok(if values.len() >= 2 && values.windows(2).all(|w| w[1] < w[0]) {
        FoguelBranch::Decaying { times, values }
    } else {
        FoguelBranch::Undecided { times, values }
    })
}

/// `Λ(f) = (1/T) ∫₀ᵀ T(s)f(x₀) ds`, stored as the averaged row `p(s, x₀, ·)`.
#[derive(Debug, Clone)]
pub struct InvariantFunctional {
    pub x0: Vec<f64>,
    pub horizon: f64,
    pub samples: usize,
    pub grid: Grid,
    /// Averaged kernel row over `[0, T]`, indexed by flat grid node.
    pub row: Vec<f64>,
    /// Same average over `[0, 0.9 T]`, for drift diagnostics.
    row_early: Vec<f64>,
}

impl InvariantFunctional {
    pub fn apply(&self, f: &GridFunction) -> f64 {
        let f = f.embed(&self.grid);
        self.row.iter().zip(&f.values).map(|(a, b)| a * b).sum()
    }

    /// Change of the average over the last tenth of the horizon.
    pub fn drift(&self, f: &GridFunction) -> f64 {
        let f = f.embed(&self.grid);
        let early: f64 = self.row_early.iter().zip(&f.values).map(|(a, b)| a * b).sum();
        (self.apply(&f) - early).abs()
    }
}

pub fn invariant_functional(sg: &Semigroup, x0: &[f64], horizon: f64, samples: usize) -> Result<InvariantFunctional> {
    if !(horizon > 0.0) || samples < 10 {
        return Err(Error::InvalidArgument("need horizon > 0 and at least 10 samples".into()));
    }
    let op = &sg.forward;
    let row0 = op
        .grid
        .nearest(x0)
        .and_then(|i| op.row_of(i))
        .ok_or_else(|| Error::InvalidArgument(format!("{x0:?} is not an interior node")))?;
    let dt = horizon / samples as f64;
    let cut = (0.9 * samples as f64).round() as usize;
    let mut v = vec![0.0; op.len()];
    v[row0] = 1.0;
    let mut acc: Vec<f64> = v.iter().map(|x| 0.5 * x).collect();
    let mut early = Vec::new();
    for k in 1..=samples {
        v = sg.power(Orientation::Forward, dt, 1, &v)?;
        let w = if k == samples { 0.5 } else { 1.0 };
        if k == cut {
            early = acc.iter().zip(&v).map(|(a, x)| (a + 0.5 * x) / k as f64).collect();
        }
        for (a, x) in acc.iter_mut().zip(&v) {
            *a += w * x;
        }
    }
    let row: Vec<f64> = acc.iter().map(|a| a / samples as f64).collect();
    Ok(InvariantFunctional {
        x0: op.node_coords(row0),
        horizon,
        samples,
        grid: op.grid.clone(),
        row: op.extend(&row, ValueKind::Function).values,
        row_early: op.extend(&early, ValueKind::Function).values,
    })
}

#[derive(Debug, Clone)]
pub struct EscapeFunction {
    pub e: GridFunction,
    pub t: f64,
    /// `‖e(t_k) − e(t_{k−1})‖_∞` for consecutive grid times.
    pub changes: Vec<f64>,
    /// `‖T(Δ)e − e‖_∞` with `Δ` the last grid spacing.
    pub harmonicity: f64,
}

/// `e(x) = lim e(t, x)`, declared once consecutive values differ by `< tol`.
pub fn escape_function(sg: &Semigroup, t_grid: &[f64], dt: f64, tol: f64) -> Result<EscapeFunction> {
    if t_grid.len() < 2 {
        return Err(Error::InvalidArgument("need at least two times".into()));
    }
    let es = sg.mass_functions(t_grid, dt)?;
    let changes: Vec<f64> = es.windows(2).map(|w| w[1].l1_sup(&w[0])).collect();
    let last = *changes.last().expect("two times");
    if last >= tol {
        return Err(Error::NotStabilized {
            what: "escape function e(t, x)".into(),
            trace: changes,
        });
    }
    let n = t_grid.len();
    let span = t_grid[n - 1] - t_grid[n - 2];
    let e = es.into_iter().last().expect("two times");
    let v = sg.backward.restrict(&e);
    let steps = (span / dt).ceil().max(1.0) as usize;
    let moved = sg.power(Orientation::Backward, span, steps, &v)?;
    let harmonicity = moved.iter().zip(&v).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    Ok(EscapeFunction {
        e,
        t: t_grid[n - 1],
        changes,
        harmonicity,
    })
}

trait SupDiff {
    fn l1_sup(&self, other: &GridFunction) -> f64;
}

impl SupDiff for GridFunction {
    fn l1_sup(&self, other: &GridFunction) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::FieldSpec;
    use serde_json::json;

    fn linear(c: f64) -> DiffusionModel {
        DiffusionModel::new(
            1,
            FieldSpec::new("linear", json!({"matrix": [[c]]})),
            FieldSpec::new("constant", json!({"scalar": 1.0})),
            c.min(0.0),
            None,
        )
        .unwrap()
    }

    fn variance(theta: &GridFunction) -> f64 {
        let g = &theta.grid;
        (0..g.len()).map(|i| g.coords(i)[0].powi(2) * theta.values[i]).sum::<f64>() * g.cell_volume()
    }

    #[test]
    fn ou_variance_is_one_half() {
        let d = BallDomain::new(1, 1.0, 6, 0.05).unwrap();
        let s = stationary_density(&linear(1.0), &d, DriftScheme::Hybrid, StationaryMethod::Nullspace).unwrap();
        assert!((variance(&s.theta) / 0.5 - 1.0).abs() < 0.01);
        assert!((s.theta.mass() - 1.0).abs() < 1e-10);
        assert!(s.residual < 1e-8, "{}", s.residual);
    }

    #[test]
    fn brownian_is_ambiguous() {
        let d = BallDomain::new(1, 1.0, 3, 0.05).unwrap();
        let r = stationary_density(&linear(0.0), &d, DriftScheme::Hybrid, StationaryMethod::Nullspace);
        assert!(matches!(r, Err(Error::Ambiguous(_))));
        let sg = Semigroup::new(&linear(0.0), &d, DriftScheme::Hybrid).unwrap();
        let b = decay_branch(&sg, &[0.0], &[0.1, 0.5, 1.0, 2.0], None).unwrap();
        assert!(matches!(b, FoguelBranch::Decaying { .. }), "{b:?}");
    }

    #[test]
    fn methods_agree() {
        let d = BallDomain::new(1, 1.0, 4, 0.05).unwrap();
        let m = linear(1.0);
        let a = stationary_density(&m, &d, DriftScheme::Hybrid, StationaryMethod::Nullspace).unwrap();
        let b = stationary_density(&m, &d, DriftScheme::Hybrid, StationaryMethod::time_average()).unwrap();
        assert!(a.theta.l1_distance(&b.theta) < 0.02);
    }

    #[test]
    fn checkpoint_round_trip_and_resume() {
        let d = BallDomain::new(1, 1.0, 3, 0.1).unwrap();
        let op = stationary_operator(&linear(1.0), &d, DriftScheme::Hybrid).unwrap();
        let mut saved = None;
        let full = march(&op, 0.1, 100.0, 1e-9, None, &mut |c| {
            if c.step == 20 {
                saved = Some(c.to_text());
            }
            Ok(())
        })
        .unwrap();
        let ck = Checkpoint::from_text(&saved.unwrap()).unwrap();
        assert_eq!(ck.step, 20);
        let resumed = march(&op, 0.1, 100.0, 1e-9, Some(&ck), &mut |_| Ok(())).unwrap();
        assert_eq!(full.steps, resumed.steps);
        assert_eq!(full.values, resumed.values);
    }

    #[test]
    fn checkpoint_parser_rejects_bad_counts() {
        assert!(Checkpoint::from_text("step 1\ndt 0.1\nvalues 2\n1.0\n").is_err());
        assert!(Checkpoint::from_text("step 1\ndt -1\nvalues 0\n").is_err());
        assert!(Checkpoint::from_text("dt 0.1\nstep 1\nvalues 0\n").is_err());
    }

    #[test]
    fn sub_invariance_under_absorbing_resolvent() {
        let d = BallDomain::new(1, 1.0, 4, 0.1).unwrap();
        let m = linear(1.0);
        let s = stationary_density(&m, &d, DriftScheme::Hybrid, StationaryMethod::Nullspace).unwrap();
        let sg = Semigroup::new(&m, &d, DriftScheme::Hybrid).unwrap();
        let th = sg.forward.restrict(&s.theta);
        let moved = sg.power(Orientation::Forward, 0.5, 8, &th).unwrap();
        for (a, b) in moved.iter().zip(&th) {
            assert!(*a <= b + 1e-10);
        }
    }

    #[test]
    fn functional_of_zero_is_zero() {
        let d = BallDomain::new(1, 1.0, 3, 0.1).unwrap();
        let sg = Semigroup::new(&linear(1.0), &d, DriftScheme::Hybrid).unwrap();
        let lam = invariant_functional(&sg, &[0.0], 5.0, 50).unwrap();
        assert_eq!(lam.apply(&GridFunction::zeros(&d.grid(), ValueKind::Function)), 0.0);
        let one = GridFunction::from_values(&d.grid(), vec![1.0; d.grid().len()], ValueKind::Function).unwrap();
        let v = lam.apply(&one);
        assert!(v <= 1.0 + 1e-12 && v > 0.9, "{v}");
    }

    #[test]
    fn outward_drift_loses_mass() {
        let d = BallDomain::new(1, 1.0, 2, 0.05).unwrap();
        let sg = Semigroup::new(&linear(-1.0), &d, DriftScheme::Hybrid).unwrap();
        let e = sg.mass_functions(&[1.0], 0.01).unwrap().pop().unwrap();
        let g = &e.grid;
        let at = |x: f64| e.values[g.nearest(&[x]).unwrap()];
        assert!(at(0.0) < 1.0);
        assert!(at(1.5) < at(0.5) && at(0.5) < at(0.0));
    }
}
