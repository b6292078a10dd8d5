//! Thermodynamic functionals of a density and the three-way reversibility test.
//!
//! Sign conventions follow the generator `L = ½ a:∇² − b·∇`: the force is
//! `F = 2A⁻¹b`, the flux `𝒥 = −½A∇P − bP`, and along the forward flow
//! `ė = epr + hdr`, so a stationary density has `hdr = −epr`.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::elliptic::{DriftScheme, Orientation};
use crate::error::{Error, Result};
use crate::grid::{BallDomain, Grid, GridFunction, ValueKind};
use crate::model::DiffusionModel;
use crate::quadrature::integrate;
use crate::semigroup::Semigroup;
use crate::stationary::{stationary_density, StationaryMethod};

/// Relative density floor below which cells are left out of log-quadratures.
pub const DENSITY_FLOOR: f64 = 1e-12;

fn neighbor(grid: &Grid, i: usize, k: usize, step: i64) -> Option<usize> {
    let mut o = grid.offsets(i);
    o[k] += step;
    grid.index_of(&o)
}

/// Fourth-order central difference of `vals` along axis `k` at node `i`,
/// dropping to second order and then one-sided near unusable neighbours.
fn partial(grid: &Grid, vals: &[f64], i: usize, k: usize, usable: &dyn Fn(usize) -> bool) -> Option<f64> {
    let h = grid.spacing;
    let at = |s: i64| neighbor(grid, i, k, s).filter(|&j| usable(j));
    match (at(2), at(1), at(-1), at(-2)) {
        (Some(u2), Some(u), Some(d), Some(d2)) => {
            Some((8.0 * (vals[u] - vals[d]) - (vals[u2] - vals[d2])) / (12.0 * h))
        }
        (_, Some(u), Some(d), _) => Some((vals[u] - vals[d]) / (2.0 * h)),
        (_, Some(u), None, _) => Some((vals[u] - vals[i]) / h),
        (_, None, Some(d), _) => Some((vals[i] - vals[d]) / h),
        (_, None, None, _) => None,
    }
}

/// Vector field on a grid, one component per axis.
#[derive(Debug, Clone)]
pub struct FluxField {
    pub grid: Grid,
    pub components: Vec<GridFunction>,
}

impl FluxField {
    pub fn sup_norm(&self) -> f64 {
        self.components.iter().map(GridFunction::sup_norm).fold(0.0, f64::max)
    }

    /// Central-difference divergence.
    pub fn divergence(&self) -> GridFunction {
        let g = &self.grid;
        let mut out = GridFunction::zeros(g, ValueKind::Function);
        for i in 0..g.len() {
            out.values[i] = (0..g.dim)
                .map(|k| partial(g, &self.components[k].values, i, k, &|_| true).unwrap_or(0.0))
                .sum();
        }
        out
    }
}

/// `𝒥 = −½ A ∇P − b P`.
pub fn probability_flux(model: &DiffusionModel, p: &GridFunction) -> FluxField {
    let g = &p.grid;
    let dim = g.dim;
    let mut comps = vec![GridFunction::zeros(g, ValueKind::Density); dim];
    for i in 0..g.len() {
        let x = g.coords(i);
        let grad: Vec<f64> = (0..dim)
            .map(|k| partial(g, &p.values, i, k, &|_| true).unwrap_or(0.0))
            .collect();
        let a = model.diffusion_at(&x);
        let b = model.drift_at(&x);
        for k in 0..dim {
            let diff: f64 = (0..dim).map(|j| a[(k, j)] * grad[j]).sum();
            comps[k].values[i] = -0.5 * diff - b[k] * p.values[i];
        }
    }
    FluxField {
        grid: g.clone(),
        components: comps,
    }
}

/// `e[P] = −∫ P log P` with `0 log 0 = 0`.
pub fn entropy(p: &GridFunction) -> f64 {
    -p.values
        .iter()
        .filter(|&&v| v > 0.0)
        .map(|&v| v * v.ln())
        .sum::<f64>()
        * p.grid.cell_volume()
}

/// Detailed-balance residual `∇log P + 2A⁻¹b` at every node above the floor.
#[derive(Debug, Clone)]
pub struct ResidualField {
    pub grid: Grid,
    /// `None` where the node was excluded.
    pub values: Vec<Option<Vec<f64>>>,
    pub excluded_mass: f64,
}

pub fn detailed_balance_residual(model: &DiffusionModel, p: &GridFunction) -> Result<ResidualField> {
    let g = &p.grid;
    let floor = DENSITY_FLOOR * p.values.iter().cloned().fold(0.0, f64::max);
    let above = |j: usize| p.values[j] > floor;
    let logp: Vec<f64> = p.values.iter().map(|&v| if v > floor { v.ln() } else { 0.0 }).collect();
    let mut values = Vec::with_capacity(g.len());
    let mut excluded = 0.0;
    for i in 0..g.len() {
        if !above(i) {
            excluded += p.values[i].max(0.0);
            values.push(None);
            continue;
        }
        let x = g.coords(i);
        let grad: Option<Vec<f64>> = (0..g.dim).map(|k| partial(g, &logp, i, k, &above)).collect();
        match grad {
            Some(grad) => {
                let f = model.force_at(&x)?;
                values.push(Some(grad.iter().zip(&f).map(|(a, b)| a + b).collect()));
            }
            None => {
                excluded += p.values[i];
                values.push(None);
            }
        }
    }
    Ok(ResidualField {
        grid: g.clone(),
        values,
        excluded_mass: excluded * g.cell_volume(),
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EprEstimate {
    pub value: f64,
    pub excluded_mass: f64,
    /// Set when more than 1% of the mass was excluded by the floor.
    pub warning: Option<String>,
}

/// `epr = ½ ∫ (∇log P + 2A⁻¹b)ᵀ A (∇log P + 2A⁻¹b) P dx`.
pub fn entropy_production_rate(model: &DiffusionModel, p: &GridFunction) -> Result<EprEstimate> {
    let r = detailed_balance_residual(model, p)?;
    let g = &p.grid;
    let mut sum = 0.0;
    for (i, v) in r.values.iter().enumerate() {
        if let Some(v) = v {
            let a = model.diffusion_at(&g.coords(i));
            let v = DVector::from_column_slice(v);
            sum += 0.5 * v.dot(&(&a * &v)) * p.values[i];
        }
    }
    let total = p.mass();
    let warning = (r.excluded_mass > 0.01 * total).then(|| {
        format!(
            "{:.2}% of the mass fell below the density floor",
            100.0 * r.excluded_mass / total
        )
    });
    Ok(EprEstimate {
        value: sum * g.cell_volume(),
        excluded_mass: r.excluded_mass,
        warning,
    })
}

/// `hdr = ∫ 2A⁻¹b · 𝒥 dx`.
pub fn heat_dissipation_rate(model: &DiffusionModel, p: &GridFunction) -> Result<f64> {
    let j = probability_flux(model, p);
    let g = &p.grid;
    let mut sum = 0.0;
    for i in 0..g.len() {
        let f = model.force_at(&g.coords(i))?;
        sum += (0..g.dim).map(|k| f[k] * j.components[k].values[i]).sum::<f64>();
    }
    Ok(sum * g.cell_volume())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BalanceCheck {
    pub dt: f64,
    /// `(e[T̃(dt)P] − e[P]) / dt`.
    pub finite_difference: f64,
    /// `epr + hdr` at `P`.
    pub predicted: f64,
    pub residual: f64,
}

/// Compare the entropy change over one implicit step with `epr + hdr`.
pub fn entropy_balance_check(model: &DiffusionModel, sg: &Semigroup, p: &GridFunction, dt: f64) -> Result<BalanceCheck> {
    let next = sg.evolve_forward(dt, p, Some(1))?.result;
    let p0 = p.embed(&sg.forward.grid);
    let fd = (entropy(&next) - entropy(&p0)) / dt;
    let predicted = entropy_production_rate(model, &p0)?.value + heat_dissipation_rate(model, &p0)?;
    Ok(BalanceCheck {
        dt,
        finite_difference: fd,
        predicted,
        residual: (fd - predicted).abs(),
    })
}

/// Largest `|∂ᵢFⱼ − ∂ⱼFᵢ|` over sample points of the grid.
pub fn curl_residual(model: &DiffusionModel, grid: &Grid) -> Result<f64> {
    if model.dim == 1 {
        return Ok(0.0);
    }
    let stride = (grid.half / 4).max(1) as i64;
    let mut worst: f64 = 0.0;
    for i in grid.interior_nodes() {
        if grid.offsets(i).iter().any(|o| o % stride != 0) {
            continue;
        }
        let x = grid.coords(i);
        let jac = force_jacobian(model, &x)?;
        for a in 0..model.dim {
            for b in 0..a {
                worst = worst.max((jac[(a, b)] - jac[(b, a)]).abs());
            }
        }
    }
    Ok(worst)
}

/// `∂Fᵢ/∂xⱼ`; exact through the drift Jacobian when `A` is constant.
fn force_jacobian(model: &DiffusionModel, x: &[f64]) -> Result<DMatrix<f64>> {
    let n = model.dim;
    if let Some(a) = model.constant_diffusion() {
        let inv = a
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::Validation("singular diffusion".into()))?;
        return Ok(inv * model.drift_jacobian_at(x) * 2.0);
    }
    let mut jac = DMatrix::zeros(n, n);
    for j in 0..n {
        let step = 1e-5 * x[j].abs().max(1.0);
        let (mut xp, mut xm) = (x.to_vec(), x.to_vec());
        xp[j] += step;
        xm[j] -= step;
        let (fp, fm) = (model.force_at(&xp)?, model.force_at(&xm)?);
        for i in 0..n {
            jac[(i, j)] = (fp[i] - fm[i]) / (2.0 * step);
        }
    }
    Ok(jac)
}

/// Tolerance on the curl below which `F` is treated as a gradient.
pub const CURL_TOL: f64 = 1e-6;

/// `U(x) = ∫₀¹ F(sx)·x ds`, so that `∇U = F` when `F` is curl-free.
pub fn potential(model: &DiffusionModel, grid: &Grid) -> Result<GridFunction> {
    let mut out = GridFunction::zeros(grid, ValueKind::Function);
    for i in 0..grid.len() {
        let x = grid.coords(i);
        if x.iter().all(|&v| v == 0.0) {
            continue;
        }
        let err = std::cell::RefCell::new(None);
        let v = integrate(
            |s| {
                let y: Vec<f64> = x.iter().map(|v| s * v).collect();
                match model.force_at(&y) {
                    Ok(f) => f.iter().zip(&x).map(|(a, b)| a * b).sum(),
                    Err(e) => {
                        err.borrow_mut().get_or_insert(e);
                        0.0
                    }
                }
            },
            0.0,
            1.0,
            1e-12,
        )?;
        if let Some(e) = err.into_inner() {
            return Err(e);
        }
        out.values[i] = v;
    }
    Ok(out)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "lowercase")]
pub enum FreeEnergy {
    Present { value: f64, internal: f64, entropy: f64 },
    Absent { curl_residual: f64 },
}

impl FreeEnergy {
    pub fn value(&self) -> Option<f64> {
        match self {
            Self::Present { value, .. } => Some(*value),
            Self::Absent { .. } => None,
        }
    }
}

/// `h[P] = u[P] − e[P]` with `u[P] = ∫ U P`, when `F = ∇U`.
pub fn free_energy(model: &DiffusionModel, p: &GridFunction) -> Result<FreeEnergy> {
    let curl = curl_residual(model, &p.grid)?;
    if curl > CURL_TOL {
        return Ok(FreeEnergy::Absent { curl_residual: curl });
    }
    let u = potential(model, &p.grid)?;
    let internal = u.values.iter().zip(&p.values).map(|(a, b)| a * b).sum::<f64>() * p.grid.cell_volume();
    let e = entropy(p);
    Ok(FreeEnergy::Present {
        value: internal - e,
        internal,
        entropy: e,
    })
}

/// `F = −∇φ + γ` with `φ = log θ` and `γ = ∇log θ + F`.
#[derive(Debug, Clone)]
pub struct Helmholtz {
    pub phi: GridFunction,
    pub gamma: ResidualField,
    pub gamma_sup: f64,
    /// `(∫ |γ|² θ)^{1/2}`.
    pub gamma_weighted: f64,
}

pub fn helmholtz_decompose(model: &DiffusionModel, theta: &GridFunction) -> Result<Helmholtz> {
    let floor = DENSITY_FLOOR * theta.sup_norm();
    let phi = theta.map(|v| if v > floor { v.ln() } else { f64::NEG_INFINITY });
    let gamma = detailed_balance_residual(model, theta)?;
    let mut sup: f64 = 0.0;
    let mut weighted = 0.0;
    for (i, v) in gamma.values.iter().enumerate() {
        if let Some(v) = v {
            let n2: f64 = v.iter().map(|c| c * c).sum();
            sup = sup.max(n2.sqrt());
            weighted += n2 * theta.values[i];
        }
    }
    Ok(Helmholtz {
        phi,
        gamma,
        gamma_sup: sup,
        gamma_weighted: (weighted * theta.grid.cell_volume()).sqrt(),
    })
}

/// Smooth Gaussian probe centred at `c` with width `s`, masked to the ball.
pub fn bump(grid: &Grid, c: &[f64], s: f64) -> GridFunction {
    let mut out = GridFunction::zeros(grid, ValueKind::Function);
    for i in grid.interior_nodes() {
        let d2: f64 = grid.coords(i).iter().zip(c).map(|(a, b)| (a - b).powi(2)).sum();
        out.values[i] = (-d2 / (2.0 * s * s)).exp();
    }
    out
}

/// Seeded probe pairs inside half the radius.
pub fn probe_pairs(grid: &Grid, count: usize, seed: u64) -> Vec<(GridFunction, GridFunction)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = grid.radius();
    let centre = |rng: &mut ChaCha8Rng| -> Vec<f64> { (0..grid.dim).map(|_| rng.random_range(-0.3 * r..0.3 * r)).collect() };
    (0..count)
        .map(|_| {
            let a = centre(&mut rng);
            let b = centre(&mut rng);
            let s = 0.08 * r;
            (bump(grid, &a, s), bump(grid, &b, s))
        })
        .collect()
}

/// `max |∫w⁻¹f L*g − ∫w⁻¹g L*f| / (|·| + |·|)` over probe pairs.
pub fn check_weighted_symmetry(
    sg: &Semigroup,
    w: &GridFunction,
    pairs: &[(GridFunction, GridFunction)],
) -> Result<f64> {
    let op = &sg.forward;
    let wv = op.restrict(w);
    if wv.iter().any(|&v| !(v > 0.0)) {
        return Err(Error::InvalidArgument("weight must be positive on the interior".into()));
    }
    let mut worst: f64 = 0.0;
    for (f, g) in pairs {
        let (fv, gv) = (op.restrict(f), op.restrict(g));
        let (lf, lg) = (op.matrix.matvec(&fv), op.matrix.matvec(&gv));
        let a: f64 = fv.iter().zip(&lg).zip(&wv).map(|((f, l), w)| f * l / w).sum();
        let b: f64 = gv.iter().zip(&lf).zip(&wv).map(|((g, l), w)| g * l / w).sum();
        let scale = a.abs() + b.abs();
        if scale > 0.0 {
            worst = worst.max((a - b).abs() / scale);
        }
    }
    Ok(worst)
}

/// Axis-aligned box `[lo, hi]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cuboid {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl Cuboid {
    pub fn indicator(&self, grid: &Grid) -> GridFunction {
        let mut out = GridFunction::zeros(grid, ValueKind::Function);
        for i in grid.interior_nodes() {
            let x = grid.coords(i);
            if x.iter().enumerate().all(|(k, v)| *v >= self.lo[k] && *v <= self.hi[k]) {
                out.values[i] = 1.0;
            }
        }
        out
    }
}

/// Seeded box pairs within the inner half of the ball.
pub fn box_pairs(grid: &Grid, count: usize, seed: u64) -> Vec<(Cuboid, Cuboid)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = grid.radius();
    let side_min = 2.0 * grid.spacing;
    let one = |rng: &mut ChaCha8Rng| {
        let mut lo = Vec::with_capacity(grid.dim);
        let mut hi = Vec::with_capacity(grid.dim);
        for _ in 0..grid.dim {
            let c = rng.random_range(-0.3 * r..0.3 * r);
            let w = rng.random_range(side_min..(0.15 * r).max(side_min * 1.5));
            lo.push(c - w);
            hi.push(c + w);
        }
        Cuboid { lo, hi }
    };
    (0..count).map(|_| (one(&mut rng), one(&mut rng))).collect()
}

/// `max |P_θ(X₀∈A, X_t∈B) − P_θ(X₀∈B, X_t∈A)|` over box pairs.
pub fn check_kernel_reversibility(
    sg: &Semigroup,
    theta: &GridFunction,
    t: f64,
    steps: usize,
    pairs: &[(Cuboid, Cuboid)],
) -> Result<f64> {
    let op = &sg.backward;
    let th = op.restrict(theta);
    let vol = op.cell_volume();
    let joint = |a: &Cuboid, b: &Cuboid| -> Result<f64> {
        let ia = op.restrict(&a.indicator(&op.grid));
        let ib = op.restrict(&b.indicator(&op.grid));
        let tb = sg.power(Orientation::Backward, t, steps, &ib)?;
        Ok(ia.iter().zip(&th).zip(&tb).map(|((i, w), v)| i * w * v).sum::<f64>() * vol)
    };
    let mut worst: f64 = 0.0;
    for (a, b) in pairs {
        if a == b {
            continue;
        }
        worst = worst.max((joint(a, b)? - joint(b, a)?).abs());
    }
    Ok(worst)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ThermoReport {
    pub entropy: f64,
    pub epr: f64,
    pub hdr: f64,
    /// `epr + hdr`, the predicted `ė`.
    pub entropy_rate: f64,
    pub free_energy: FreeEnergy,
    /// `(∫|∇log P + 2A⁻¹b|² P)^{1/2}`.
    pub detailed_balance_residual: f64,
    pub excluded_mass: f64,
    pub warning: Option<String>,
}

pub fn thermo_report(model: &DiffusionModel, p: &GridFunction) -> Result<ThermoReport> {
    let epr = entropy_production_rate(model, p)?;
    let hdr = heat_dissipation_rate(model, p)?;
    let h = helmholtz_decompose(model, p)?;
    Ok(ThermoReport {
        entropy: entropy(p),
        epr: epr.value,
        hdr,
        entropy_rate: epr.value + hdr,
        free_energy: free_energy(model, p)?,
        detailed_balance_residual: h.gamma_weighted,
        excluded_mass: epr.excluded_mass,
        warning: epr.warning,
    })
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ClassifyTolerances {
    pub kernel: f64,
    pub symmetry: f64,
    pub epr: f64,
}

impl Default for ClassifyTolerances {
    fn default() -> Self {
        Self {
            kernel: 1e-3,
            symmetry: 1e-6,
            epr: 1e-4,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Leg {
    pub residual: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl Leg {
    fn new(residual: f64, tolerance: f64) -> Self {
        Self {
            residual,
            tolerance,
            passed: residual < tolerance,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReversibilityVerdict {
    pub t: f64,
    pub kernel_symmetry: Leg,
    pub weighted_symmetry: Leg,
    pub epr: Leg,
    pub reversible: bool,
}

impl ReversibilityVerdict {
    pub fn consistent(&self) -> bool {
        let p = self.kernel_symmetry.passed;
        p == self.weighted_symmetry.passed && p == self.epr.passed
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClassifyOptions {
    pub t: f64,
    pub steps: usize,
    pub pairs: usize,
    pub seed: u64,
    pub tolerances: ClassifyTolerances,
}

impl Default for ClassifyOptions {
    fn default() -> Self {
        Self {
            t: 0.5,
            steps: 16,
            pairs: 10,
            seed: 7,
            tolerances: ClassifyTolerances::default(),
        }
    }
}

/// Run the three legs at the stationary density. Disagreement is an error
/// carrying the full verdict.
pub fn classify_reversibility(
    model: &DiffusionModel,
    domain: &BallDomain,
    scheme: DriftScheme,
    opts: &ClassifyOptions,
) -> Result<ReversibilityVerdict> {
    let theta = stationary_density(model, domain, scheme, StationaryMethod::Nullspace)?.theta;
    let sg = Semigroup::new(model, domain, scheme)?;
    classify_with(model, &sg, &theta, opts)
}

pub fn classify_with(
    model: &DiffusionModel,
    sg: &Semigroup,
    theta: &GridFunction,
    opts: &ClassifyOptions,
) -> Result<ReversibilityVerdict> {
    let grid = &sg.backward.grid;
    let tol = opts.tolerances;
    let kernel = check_kernel_reversibility(sg, theta, opts.t, opts.steps, &box_pairs(grid, opts.pairs, opts.seed))?;
    let symmetry = check_weighted_symmetry(sg, theta, &probe_pairs(grid, opts.pairs, opts.seed ^ 0x5eed))?;
    let epr = entropy_production_rate(model, theta)?.value;
    let verdict = ReversibilityVerdict {
        t: opts.t,
        kernel_symmetry: Leg::new(kernel, tol.kernel),
        weighted_symmetry: Leg::new(symmetry, tol.symmetry),
        epr: Leg::new(epr, tol.epr),
        reversible: kernel < tol.kernel && symmetry < tol.symmetry && epr < tol.epr,
    };
    if !verdict.consistent() {
        return Err(Error::Consistency(
            serde_json::to_string(&verdict).expect("verdict serializes"),
        ));
    }
    Ok(verdict)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::build_grid_function;
    use crate::model::FieldSpec;
    use serde_json::json;
    use std::f64::consts::PI;

    fn ou() -> DiffusionModel {
        DiffusionModel::new(
            1,
            FieldSpec::new("linear", json!({"matrix": [[1.0]]})),
            FieldSpec::new("constant", json!({"scalar": 1.0})),
            1.0,
            None,
        )
        .unwrap()
    }

    fn rot(omega: f64) -> DiffusionModel {
        DiffusionModel::new(
            2,
            FieldSpec::new("rotational_linear", json!({"omega": omega})),
            FieldSpec::new("constant", json!({"scalar": 1.0})),
            2.0,
            None,
        )
        .unwrap()
    }

    fn gaussian(grid: &Grid, var: f64) -> GridFunction {
        let d = grid.dim as i32;
        build_grid_function(
            |x| {
                let r2: f64 = x.iter().map(|v| v * v).sum();
                (-r2 / (2.0 * var)).exp() / (2.0 * PI * var).powf(d as f64 / 2.0)
            },
            grid,
            ValueKind::Density,
        )
        .unwrap()
    }

    #[test]
    fn entropy_closed_forms() {
        let g = Grid::new(1, 0.01, 100);
        let uniform = GridFunction::from_values(&g, vec![0.5; g.len()], ValueKind::Density).unwrap();
        // 201 cells of width 0.01 carry mass 1.005
        assert!((entropy(&uniform) - 1.005 * 2f64.ln()).abs() < 1e-12);
        let g = Grid::new(1, 0.01, 800);
        let e = entropy(&gaussian(&g, 1.0));
        assert!((e - 0.5 * (2.0 * PI * 1f64.exp()).ln()).abs() < 1e-3);
        let mut delta = GridFunction::zeros(&g, ValueKind::Density);
        delta.values[g.origin()] = 100.0;
        assert!((entropy(&delta) - 0.01f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn ou_gaussian_closed_forms() {
        let g = Grid::new(1, 0.05, 120);
        let m = ou();
        let p = gaussian(&g, 1.0);
        let epr = entropy_production_rate(&m, &p).unwrap();
        assert!((epr.value - 0.5).abs() < 1e-3, "{}", epr.value);
        let hdr = heat_dissipation_rate(&m, &p).unwrap();
        assert!((hdr + 1.0).abs() < 1e-3, "{hdr}");
        let stat = gaussian(&g, 0.5);
        assert!(entropy_production_rate(&m, &stat).unwrap().value < 1e-4);
        assert!(probability_flux(&m, &stat).sup_norm() < 1e-3);
    }

    #[test]
    fn zero_density_has_zero_flux() {
        let g = Grid::new(2, 0.1, 10);
        let z = GridFunction::zeros(&g, ValueKind::Density);
        assert_eq!(probability_flux(&rot(1.0), &z).sup_norm(), 0.0);
    }

    #[test]
    fn rotational_gaussian_circulates() {
        let g = Grid::new(2, 0.05, 80);
        let m = rot(1.0);
        let theta = gaussian(&g, 0.5);
        let j = probability_flux(&m, &theta);
        for i in g.interior_nodes() {
            let x = g.coords(i);
            let want = [x[1] * theta.values[i], -x[0] * theta.values[i]];
            assert!((j.components[0].values[i] - want[0]).abs() < 1e-3);
            assert!((j.components[1].values[i] - want[1]).abs() < 1e-3);
        }
        let epr = entropy_production_rate(&m, &theta).unwrap().value;
        let hdr = heat_dissipation_rate(&m, &theta).unwrap();
        assert!((epr - 2.0).abs() < 1e-2, "{epr}");
        assert!((hdr + epr).abs() < 1e-3 * epr, "{hdr} {epr}");
        let epr2 = entropy_production_rate(&rot(2.0), &theta).unwrap().value;
        assert!(epr2 > epr);
    }

    #[test]
    fn curl_and_free_energy() {
        let g = Grid::new(2, 0.1, 20);
        match free_energy(&rot(1.0), &gaussian(&g, 0.5)).unwrap() {
            FreeEnergy::Absent { curl_residual } => assert!((curl_residual - 4.0).abs() < 1e-9),
            other => panic!("{other:?}"),
        }
        let g = Grid::new(1, 0.05, 120);
        assert!(free_energy(&ou(), &gaussian(&g, 0.5)).unwrap().value().is_some());
    }

    #[test]
    fn potential_of_ou_is_x_squared() {
        let g = Grid::new(1, 0.5, 4);
        let u = potential(&ou(), &g).unwrap();
        for i in 0..g.len() {
            let x = g.coords(i)[0];
            assert!((u.values[i] - x * x).abs() < 1e-12);
        }
    }

    #[test]
    fn gamma_is_scale_invariant() {
        let g = Grid::new(2, 0.1, 30);
        let m = rot(1.0);
        let theta = gaussian(&g, 0.5);
        let a = helmholtz_decompose(&m, &theta).unwrap();
        let b = helmholtz_decompose(&m, &theta.map(|v| 7.0 * v)).unwrap();
        assert!((a.gamma_sup - b.gamma_sup).abs() < 1e-9 * a.gamma_sup);
        // γ = 2ωJx, so |γ| = 2|x|
        for (i, v) in a.gamma.values.iter().enumerate() {
            let edge = g.offsets(i).iter().any(|o| o.unsigned_abs() as usize == g.half);
            if let (Some(v), false) = (v, edge) {
                let r = g.coords(i).iter().map(|c| c * c).sum::<f64>().sqrt();
                let n = (v[0] * v[0] + v[1] * v[1]).sqrt();
                assert!((n - 2.0 * r).abs() < 1e-6 * (1.0 + r));
            }
        }
    }

    #[test]
    fn equal_probes_and_boxes_give_zero() {
        let d = BallDomain::new(2, 1.0, 2, 0.2).unwrap();
        let m = rot(1.0);
        let sg = Semigroup::new(&m, &d, DriftScheme::Hybrid).unwrap();
        let g = d.grid();
        let w = gaussian(&g, 0.5);
        let f = bump(&g, &[0.3, -0.2], 0.3);
        assert_eq!(check_weighted_symmetry(&sg, &w, &[(f.clone(), f)]).unwrap(), 0.0);
        let b = Cuboid {
            lo: vec![-0.5, -0.5],
            hi: vec![0.5, 0.5],
        };
        assert_eq!(check_kernel_reversibility(&sg, &w, 0.5, 8, &[(b.clone(), b)]).unwrap(), 0.0);
    }

    #[test]
    fn ou_is_reversible() {
        let d = BallDomain::new(1, 1.0, 6, 0.05).unwrap();
        let v = classify_reversibility(&ou(), &d, DriftScheme::Hybrid, &ClassifyOptions::default()).unwrap();
        assert!(v.reversible, "{v:?}");
    }
}
