//! Diffusion problems: drift `b`, diffusion `A = ΓΓᵀ`, and their validation.
//!
//! The generator acting on test functions is
//! `L u = ½ Σ a_ij ∂_i∂_j u − b·∇u`, so the simulated SDE is
//! `dx = −b(x) dt + Γ dW`. Every module in the crate uses this sign.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Error, Result};
use crate::grid::BallDomain;
use crate::poly::{norm_sq, Polynomial};

/// Largest dimension for grid-based operations.
pub const PDE_DIM_CAP: usize = 3;

/// A field as written in a config: a builtin `kind` plus its parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldSpec {
    pub kind: String,
    #[serde(default)]
    pub params: Map<String, Value>,
}

impl FieldSpec {
    pub fn new(kind: &str, params: Value) -> Self {
        let params = match params {
            Value::Object(m) => m,
            _ => Map::new(),
        };
        Self {
            kind: kind.to_string(),
            params,
        }
    }

    fn num(&self, key: &str, default: Option<f64>) -> Result<f64> {
        match self.params.get(key) {
            Some(v) => v.as_f64().ok_or_else(|| {
                Error::Config(format!("{}.params.{key} must be a number", self.kind))
            }),
            None => default.ok_or_else(|| Error::MissingKey(format!("params.{key}"))),
        }
    }

    fn matrix(&self, key: &str, dim: usize) -> Result<Vec<Vec<f64>>> {
        let rows = self
            .params
            .get(key)
            .and_then(Value::as_array)
            .ok_or_else(|| Error::MissingKey(format!("params.{key}")))?;
        if rows.len() != dim {
            return Err(Error::Config(format!("params.{key} must have {dim} rows")));
        }
        rows.iter()
            .map(|r| {
                let r = r
                    .as_array()
                    .filter(|r| r.len() == dim)
                    .ok_or_else(|| Error::Config(format!("params.{key} must be {dim}x{dim}")))?;
                r.iter()
                    .map(|v| {
                        v.as_f64()
                            .ok_or_else(|| Error::Config(format!("params.{key} entries must be numbers")))
                    })
                    .collect()
            })
            .collect()
    }
}

fn parse_terms(v: &Value, dim: usize, ctx: &str) -> Result<Polynomial> {
    let arr = v
        .as_array()
        .ok_or_else(|| Error::Config(format!("{ctx} must be a list of terms")))?;
    let mut p = Polynomial::zero();
    for t in arr {
        let coef = t
            .get("coef")
            .and_then(Value::as_f64)
            .ok_or_else(|| Error::Config(format!("{ctx}: term needs numeric `coef`")))?;
        let powers = t
            .get("powers")
            .and_then(Value::as_array)
            .ok_or_else(|| Error::Config(format!("{ctx}: term needs `powers`")))?;
        if powers.len() != dim {
            return Err(Error::Config(format!("{ctx}: powers must have length {dim}")));
        }
        let powers = powers
            .iter()
            .map(|p| {
                p.as_u64()
                    .filter(|&p| p <= 16)
                    .map(|p| p as u32)
                    .ok_or_else(|| Error::Config(format!("{ctx}: powers must be integers in 0..=16")))
            })
            .collect::<Result<Vec<_>>>()?;
        if !coef.is_finite() {
            return Err(Error::Config(format!("{ctx}: non-finite coefficient")));
        }
        p.push(coef, powers);
    }
    Ok(p)
}

/// Turn a drift spec into one polynomial per component.
pub fn drift_polynomials(spec: &FieldSpec, dim: usize) -> Result<Vec<Polynomial>> {
    match spec.kind.as_str() {
        "linear" => {
            let m = spec.matrix("matrix", dim)?;
            let offset: Vec<f64> = match spec.params.get("offset") {
                Some(Value::Array(a)) if a.len() == dim => a
                    .iter()
                    .map(|v| v.as_f64().ok_or_else(|| Error::Config("offset entries must be numbers".into())))
                    .collect::<Result<_>>()?,
                Some(_) => return Err(Error::Config(format!("params.offset must have length {dim}"))),
                None => vec![0.0; dim],
            };
            Ok((0..dim)
                .map(|i| {
                    let mut p = Polynomial::constant(dim, offset[i]);
                    for (j, &mij) in m[i].iter().enumerate() {
                        p = p.add(&Polynomial::linear(dim, j, mij));
                    }
                    p
                })
                .collect())
        }
        "rotational_linear" => {
            if dim != 2 {
                return Err(Error::Config("rotational_linear drift requires dim = 2".into()));
            }
            let gamma = spec.num("gamma", Some(1.0))?;
            let omega = spec.num("omega", None)?;
            // b = gamma x + omega (-x2, x1)
            Ok(vec![
                Polynomial::linear(2, 0, gamma).add(&Polynomial::linear(2, 1, -omega)),
                Polynomial::linear(2, 1, gamma).add(&Polynomial::linear(2, 0, omega)),
            ])
        }
        "double_well" => {
            let a = spec.num("quartic", Some(1.0))?;
            let c = spec.num("quadratic", Some(1.0))?;
            Ok((0..dim)
                .map(|i| {
                    let mut p = Polynomial::linear(dim, i, -c);
                    let mut powers = vec![0; dim];
                    powers[i] = 3;
                    p.push(a, powers);
                    p
                })
                .collect())
        }
        "gradient_polynomial" => {
            // b = grad(alpha |x|^4 / 4 + beta |x|^2 / 2) = (alpha |x|^2 + beta) x
            let alpha = spec.num("quartic", Some(0.0))?;
            let beta = spec.num("quadratic", Some(0.0))?;
            let radial = norm_sq(dim).scale(alpha).add(&Polynomial::constant(dim, beta));
            Ok((0..dim)
                .map(|i| radial.mul(&Polynomial::linear(dim, i, 1.0)))
                .collect())
        }
        "polynomial" => {
            let comps = spec
                .params
                .get("components")
                .and_then(Value::as_array)
                .ok_or_else(|| Error::MissingKey("params.components".into()))?;
            if comps.len() != dim {
                return Err(Error::Config(format!("params.components must have {dim} entries")));
            }
            comps
                .iter()
                .enumerate()
                .map(|(i, c)| parse_terms(c, dim, &format!("drift component {i}")))
                .collect()
        }
        other => Err(Error::Config(format!("unknown drift kind `{other}`"))),
    }
}

/// Turn a diffusion spec into a symmetric table of polynomials.
pub fn diffusion_polynomials(spec: &FieldSpec, dim: usize) -> Result<Vec<Vec<Polynomial>>> {
    match spec.kind.as_str() {
        "constant" => {
            if let Some(s) = spec.params.get("scalar") {
                let s = s
                    .as_f64()
                    .ok_or_else(|| Error::Config("params.scalar must be a number".into()))?;
                return Ok((0..dim)
                    .map(|i| {
                        (0..dim)
                            .map(|j| Polynomial::constant(dim, if i == j { s } else { 0.0 }))
                            .collect()
                    })
                    .collect());
            }
            let m = spec.matrix("matrix", dim)?;
            Ok(m.iter()
                .map(|row| row.iter().map(|&v| Polynomial::constant(dim, v)).collect())
                .collect())
        }
        "polynomial" => {
            let rows = spec
                .params
                .get("entries")
                .and_then(Value::as_array)
                .ok_or_else(|| Error::MissingKey("params.entries".into()))?;
            if rows.len() != dim {
                return Err(Error::Config(format!("params.entries must have {dim} rows")));
            }
            rows.iter()
                .enumerate()
                .map(|(i, r)| {
                    let r = r
                        .as_array()
                        .filter(|r| r.len() == dim)
                        .ok_or_else(|| Error::Config(format!("params.entries must be {dim}x{dim}")))?;
                    r.iter()
                        .enumerate()
                        .map(|(j, e)| parse_terms(e, dim, &format!("diffusion entry ({i},{j})")))
                        .collect()
                })
                .collect()
        }
        other => Err(Error::Config(format!("unknown diffusion kind `{other}`"))),
    }
}

/// Drift, diffusion and the structural constants of the problem.
#[derive(Debug, Clone)]
pub struct DiffusionModel {
    pub dim: usize,
    pub drift: Vec<Polynomial>,
    pub diffusion: Vec<Vec<Polynomial>>,
    pub mu0: f64,
    pub ellipticity_r: Option<f64>,
    pub drift_spec: FieldSpec,
    pub diffusion_spec: FieldSpec,
    divergence: Polynomial,
    constant_a: Option<DMatrix<f64>>,
}

impl DiffusionModel {
    pub fn new(
        dim: usize,
        drift_spec: FieldSpec,
        diffusion_spec: FieldSpec,
        mu0: f64,
        ellipticity_r: Option<f64>,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Config("dim must be at least 1".into()));
        }
        let drift = drift_polynomials(&drift_spec, dim)?;
        let diffusion = diffusion_polynomials(&diffusion_spec, dim)?;
        if !drift.iter().all(|p| p.check_dim(dim))
            || !diffusion.iter().flatten().all(|p| p.check_dim(dim))
        {
            return Err(Error::Config("field term dimension mismatch".into()));
        }
        let divergence = drift
            .iter()
            .enumerate()
            .fold(Polynomial::zero(), |acc, (i, p)| acc.add(&p.partial(i)));
        let constant_a = if diffusion.iter().flatten().all(Polynomial::is_constant) {
            let origin = vec![0.0; dim];
            Some(DMatrix::from_fn(dim, dim, |i, j| diffusion[i][j].eval(&origin)))
        } else {
            None
        };
        if !mu0.is_finite() {
            return Err(Error::Config("mu0 must be finite".into()));
        }
        Ok(Self {
            dim,
            drift,
            diffusion,
            mu0,
            ellipticity_r,
            drift_spec,
            diffusion_spec,
            divergence,
            constant_a,
        })
    }

    pub fn drift_at(&self, x: &[f64]) -> Vec<f64> {
        self.drift.iter().map(|p| p.eval(x)).collect()
    }

    pub fn diffusion_at(&self, x: &[f64]) -> DMatrix<f64> {
        match &self.constant_a {
            Some(a) => a.clone(),
            None => DMatrix::from_fn(self.dim, self.dim, |i, j| self.diffusion[i][j].eval(x)),
        }
    }

    pub fn constant_diffusion(&self) -> Option<&DMatrix<f64>> {
        self.constant_a.as_ref()
    }

    /// Exact `∇·b`.
    pub fn divergence_at(&self, x: &[f64]) -> f64 {
        self.divergence.eval(x)
    }

    /// `∂b_i/∂x_j`, exact.
    pub fn drift_jacobian_at(&self, x: &[f64]) -> DMatrix<f64> {
        DMatrix::from_fn(self.dim, self.dim, |i, j| self.drift[i].partial(j).eval(x))
    }

    /// Thermodynamic force `F = 2 A⁻¹ b`.
    pub fn force_at(&self, x: &[f64]) -> Result<Vec<f64>> {
        let a = self.diffusion_at(x);
        let b = DVector::from_vec(self.drift_at(x));
        let f = a
            .lu()
            .solve(&b)
            .ok_or_else(|| Error::Validation(format!("singular diffusion at {x:?}")))?;
        Ok(f.iter().map(|v| 2.0 * v).collect())
    }

    /// Symmetric square root `Γ = A^{1/2}`.
    pub fn noise_at(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        sym_sqrt(&self.diffusion_at(x))
    }

    pub fn is_builtin_gradient(&self) -> bool {
        matches!(
            self.drift_spec.kind.as_str(),
            "double_well" | "gradient_polynomial"
        )
    }

    pub fn ensure_pde_dim(&self) -> Result<()> {
        if self.dim > PDE_DIM_CAP {
            return Err(Error::DimensionCap {
                dim: self.dim,
                cap: PDE_DIM_CAP,
            });
        }
        Ok(())
    }
}

pub(crate) fn sym_sqrt(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let eig = SymmetricEigen::new(a.clone());
    if eig.eigenvalues.iter().any(|&l| l < -1e-12) {
        return Err(Error::Validation("diffusion matrix is not positive semidefinite".into()));
    }
    let d = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| l.max(0.0).sqrt()));
    Ok(&eig.eigenvectors * d * eig.eigenvectors.transpose())
}

/// Outcome of checking the three standing assumptions on sampled points.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ValidationReport {
    pub samples: usize,
    pub seed: u64,
    /// Minimum sampled Rayleigh quotient of `A`.
    pub min_ellipticity: f64,
    /// Minimum sampled `∇·b`, by central differences.
    pub min_divergence_fd: f64,
    /// Same minimum from the exact polynomial divergence.
    pub min_divergence_exact: f64,
    pub smoothness_ok: bool,
    pub divergence_ok: bool,
    pub ellipticity_ok: bool,
    pub worst_divergence_at: Vec<f64>,
    pub worst_ellipticity_at: Vec<f64>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.smoothness_ok && self.divergence_ok && self.ellipticity_ok
    }
}

/// Check the smoothness, divergence-bound and uniform-ellipticity assumptions.
///
/// Samples are the origin, the domain's axis extremes, and `samples` seeded
/// uniform points in the ball. A non-symmetric or non-finite `A` (or a
/// non-finite drift) is a hard error rather than a failed check.
pub fn validate_model(
    model: &DiffusionModel,
    domain: &BallDomain,
    samples: usize,
    seed: u64,
) -> Result<ValidationReport> {
    if samples == 0 {
        return Err(Error::InvalidArgument("samples must be at least 1".into()));
    }
    if domain.dim != model.dim {
        return Err(Error::InvalidArgument(format!(
            "domain dim {} does not match model dim {}",
            domain.dim, model.dim
        )));
    }
    let dim = model.dim;
    let radius = domain.radius();
    let mut points: Vec<Vec<f64>> = vec![vec![0.0; dim]];
    for i in 0..dim {
        for s in [-1.0, 1.0] {
            let mut p = vec![0.0; dim];
            p[i] = s * radius;
            points.push(p);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    while points.len() < samples + 2 * dim + 1 {
        let p: Vec<f64> = (0..dim).map(|_| rng.random_range(-radius..=radius)).collect();
        if p.iter().map(|v| v * v).sum::<f64>().sqrt() <= radius {
            points.push(p);
        }
    }

    let fd_step = 1e-5 * radius.max(1.0);
    let mut report = ValidationReport {
        samples,
        seed,
        min_ellipticity: f64::INFINITY,
        min_divergence_fd: f64::INFINITY,
        min_divergence_exact: f64::INFINITY,
        smoothness_ok: true,
        divergence_ok: true,
        ellipticity_ok: true,
        worst_divergence_at: Vec::new(),
        worst_ellipticity_at: Vec::new(),
    };
    for x in &points {
        let b = model.drift_at(x);
        if let Some(v) = b.iter().find(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                value: *v,
                location: format!("drift at {x:?}"),
            });
        }
        let a = model.diffusion_at(x);
        for i in 0..dim {
            for j in 0..dim {
                let v = a[(i, j)];
                if !v.is_finite() {
                    return Err(Error::NonFinite {
                        value: v,
                        location: format!("diffusion ({i},{j}) at {x:?}"),
                    });
                }
                let scale = a[(i, i)].abs().max(a[(j, j)].abs()).max(1.0);
                if (v - a[(j, i)]).abs() > 1e-12 * scale {
                    return Err(Error::Validation(format!(
                        "diffusion matrix not symmetric at {x:?}: a[{i}][{j}] = {v}, a[{j}][{i}] = {}",
                        a[(j, i)]
                    )));
                }
            }
        }
        let lmin = SymmetricEigen::new(a).eigenvalues.min();
        if lmin < report.min_ellipticity {
            report.min_ellipticity = lmin;
            report.worst_ellipticity_at = x.clone();
        }
        let mut div_fd = 0.0;
        for i in 0..dim {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[i] += fd_step;
            xm[i] -= fd_step;
            div_fd += (model.drift[i].eval(&xp) - model.drift[i].eval(&xm)) / (2.0 * fd_step);
        }
        if div_fd < report.min_divergence_fd {
            report.min_divergence_fd = div_fd;
            report.worst_divergence_at = x.clone();
        }
        report.min_divergence_exact = report.min_divergence_exact.min(model.divergence_at(x));
    }
    // Polynomial fields are smooth; finiteness was enforced above.
    report.smoothness_ok = true;
    let div_tol = 1e-6 * report.min_divergence_exact.abs().max(1.0);
    report.divergence_ok = report.min_divergence_fd >= model.mu0 - div_tol;
    report.ellipticity_ok = match model.ellipticity_r {
        Some(r) => r > 0.0 && report.min_ellipticity >= r * (1.0 - 1e-12),
        None => report.min_ellipticity > 0.0,
    };
    Ok(report)
}
