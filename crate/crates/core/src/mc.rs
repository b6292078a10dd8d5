//! Monte-Carlo oracle: Euler–Maruyama paths of `dx = −b dt + Γ dW` with the
//! heat functional accumulated by the Stratonovich midpoint rule.
//!
//! The heat is `W = −2 ∫ (A⁻¹b)∘dx`, the force of the simulated drift `−b`
//! integrated along the path; its stationary mean rate is the entropy
//! production rate. Each path owns the ChaCha stream `(seed, path index)`, so
//! results do not depend on thread scheduling.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Grid, GridFunction, ValueKind};
use crate::model::DiffusionModel;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Start {
    Point(Vec<f64>),
    /// Isotropic Gaussian around `mean`.
    Gaussian { mean: Vec<f64>, std: f64 },
}

impl Start {
    fn dim(&self) -> usize {
        match self {
            Start::Point(x) => x.len(),
            Start::Gaussian { mean, .. } => mean.len(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimulationParams {
    pub start: Start,
    pub dt: f64,
    pub horizon: f64,
    pub paths: usize,
    pub seed: u64,
    /// Paths reaching `|x| ≥ R` are frozen and flagged absorbed.
    pub absorb_radius: Option<f64>,
    /// Also absorb when the Brownian bridge between two steps crosses `R`.
    pub bridge: bool,
    /// Negative control: simulate `+b` instead of `−b`.
    pub flip_drift: bool,
    /// Multiplies `Γ`; `0` gives the deterministic flow.
    pub noise_scale: f64,
    /// Times at which states and heat are stored (snapped to steps).
    pub record_times: Vec<f64>,
    /// Number of leading paths kept in full, thinned by `keep_stride`.
    pub keep_paths: usize,
    pub keep_stride: usize,
}

impl SimulationParams {
    pub fn new(x0: Vec<f64>, dt: f64, horizon: f64, paths: usize, seed: u64) -> Self {
        Self {
            start: Start::Point(x0),
            dt,
            horizon,
            paths,
            seed,
            absorb_radius: None,
            bridge: true,
            flip_drift: false,
            noise_scale: 1.0,
            record_times: Vec::new(),
            keep_paths: 0,
            keep_stride: 1,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ThinnedPath {
    pub path: usize,
    /// `(t, x, W)` samples.
    pub points: Vec<(f64, Vec<f64>, f64)>,
}

#[derive(Debug, Clone)]
pub struct TrajectoryEnsemble {
    pub params: SimulationParams,
    pub dim: usize,
    /// Sorted, always contains 0 and the horizon.
    pub record_times: Vec<f64>,
    states: Vec<f64>,
    heat: Vec<f64>,
    pub exit_times: Vec<Option<f64>>,
    pub thinned: Vec<ThinnedPath>,
}

/// Per-run constants when `A` does not depend on `x`.
struct Constant {
    gamma: DMatrix<f64>,
    /// `2A⁻¹`.
    force: DMatrix<f64>,
    a: DMatrix<f64>,
}

struct PathOut {
    states: Vec<f64>,
    heat: Vec<f64>,
    exit: Option<f64>,
    thin: Option<ThinnedPath>,
}

fn outside(x: &[f64], r2: f64) -> bool {
    r2.is_finite() && x.iter().map(|v| v * v).sum::<f64>() >= r2
}

pub fn simulate(model: &DiffusionModel, params: &SimulationParams) -> Result<TrajectoryEnsemble> {
    let dim = model.dim;
    if !(params.dt > 0.0 && params.horizon >= 0.0 && params.dt.is_finite() && params.horizon.is_finite()) {
        return Err(Error::InvalidArgument("need dt > 0 and a finite horizon >= 0".into()));
    }
    if params.paths == 0 {
        return Err(Error::InvalidArgument("need at least one path".into()));
    }
    if params.start.dim() != dim {
        return Err(Error::InvalidArgument(format!("start point must have {dim} coordinates")));
    }
    let n_steps = (params.horizon / params.dt).round() as usize;
    if (n_steps as f64 * params.dt - params.horizon).abs() > 1e-9 * params.horizon.max(1.0) {
        return Err(Error::InvalidArgument("horizon must be a whole number of steps".into()));
    }
    let mut times = params.record_times.clone();
    times.extend([0.0, params.horizon]);
    times.sort_by(f64::total_cmp);
    times.dedup_by(|a, b| (*a - *b).abs() < 1e-12);
    let mut rec_steps = Vec::with_capacity(times.len());
    for &t in &times {
        let k = (t / params.dt).round();
        if !(0.0..=n_steps as f64).contains(&k) || (k * params.dt - t).abs() > 1e-9 * t.max(1.0) {
            return Err(Error::InvalidArgument(format!("record time {t} is not a step of the horizon")));
        }
        rec_steps.push(k as usize);
    }
    let constant = match model.constant_diffusion() {
        Some(a) => {
            let inv = a
                .clone()
                .try_inverse()
                .ok_or_else(|| Error::Validation("singular diffusion matrix".into()))?;
            Some(Constant {
                gamma: model.noise_at(&vec![0.0; dim])?,
                force: inv * 2.0,
                a: a.clone(),
            })
        }
        None => None,
    };
    // pre-flight: the force must exist at the start
    let probe = match &params.start {
        Start::Point(x) => x.clone(),
        Start::Gaussian { mean, .. } => mean.clone(),
    };
    model.force_at(&probe)?;
    let outs: Vec<PathOut> = (0..params.paths)
        .into_par_iter()
        .map(|p| run_path(model, params, p, n_steps, &rec_steps, constant.as_ref()))
        .collect::<Result<_>>()?;
    let nr = times.len();
    let mut states = Vec::with_capacity(params.paths * nr * dim);
    let mut heat = Vec::with_capacity(params.paths * nr);
    let mut exit_times = Vec::with_capacity(params.paths);
    let mut thinned = Vec::new();
    for o in outs {
        states.extend(o.states);
        heat.extend(o.heat);
        exit_times.push(o.exit);
        thinned.extend(o.thin);
    }
    Ok(TrajectoryEnsemble {
        params: params.clone(),
        dim,
        record_times: times,
        states,
        heat,
        exit_times,
        thinned,
    })
}

fn run_path(
    model: &DiffusionModel,
    params: &SimulationParams,
    p: usize,
    n_steps: usize,
    rec_steps: &[usize],
    constant: Option<&Constant>,
) -> Result<PathOut> {
    let dim = model.dim;
    let dt = params.dt;
    let sq = dt.sqrt() * params.noise_scale;
    let sign = if params.flip_drift { 1.0 } else { -1.0 };
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    rng.set_stream(p as u64);
    let mut x = match &params.start {
        Start::Point(x0) => x0.clone(),
        Start::Gaussian { mean, std } => mean
            .iter()
            .map(|m| m + std * rng.sample::<f64, _>(StandardNormal))
            .collect(),
    };
    let r2 = params.absorb_radius.map(|r| r * r).unwrap_or(f64::INFINITY);
    let mut w = 0.0;
    let mut exit = if outside(&x, r2) { Some(0.0) } else { None };
    let mut states = Vec::with_capacity(rec_steps.len() * dim);
    let mut heat = Vec::with_capacity(rec_steps.len());
    let keep = p < params.keep_paths;
    let mut thin = keep.then(|| ThinnedPath {
        path: p,
        points: Vec::new(),
    });
    let mut next_rec = 0;
    let mut xi = DVector::zeros(dim);
    let mut mid = vec![0.0; dim];
    let mut prev = vec![0.0; dim];
    for k in 0..=n_steps {
        while next_rec < rec_steps.len() && rec_steps[next_rec] == k {
            states.extend_from_slice(&x);
            heat.push(w);
            next_rec += 1;
        }
        if let Some(t) = thin.as_mut() {
            if k % params.keep_stride.max(1) == 0 {
                t.points.push((k as f64 * dt, x.clone(), w));
            }
        }
        if k == n_steps || exit.is_some() {
            if exit.is_some() && next_rec < rec_steps.len() {
                // frozen path: repeat the final state at remaining records
                while next_rec < rec_steps.len() {
                    states.extend_from_slice(&x);
                    heat.push(w);
                    next_rec += 1;
                }
            }
            if k == n_steps || exit.is_some() {
                break;
            }
        }
        let b = model.drift_at(&x);
        for v in xi.iter_mut() {
            *v = rng.sample(StandardNormal);
        }
        let noise = match constant {
            Some(c) => &c.gamma * &xi,
            None => model.noise_at(&x)? * &xi,
        };
        prev.copy_from_slice(&x);
        for i in 0..dim {
            x[i] += sign * b[i] * dt + sq * noise[i];
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::PathBlowup {
                step: k + 1,
                path: p,
                seed: params.seed,
            });
        }
        for i in 0..dim {
            mid[i] = 0.5 * (prev[i] + x[i]);
        }
        let f = match constant {
            Some(c) => (&c.force * DVector::from_vec(model.drift_at(&mid))).iter().copied().collect(),
            None => model.force_at(&mid)?,
        };
        w -= f.iter().zip(x.iter().zip(&prev)).map(|(f, (a, b))| f * (a - b)).sum::<f64>();
        if !w.is_finite() {
            return Err(Error::PathBlowup {
                step: k + 1,
                path: p,
                seed: params.seed,
            });
        }
        if outside(&x, r2) {
            exit = Some((k + 1) as f64 * dt);
        } else if params.bridge && r2.is_finite() && params.noise_scale > 0.0 {
            let r = r2.sqrt();
            let (d0, d1) = (r - norm(&prev), r - norm(&x));
            let var = match constant {
                Some(c) => radial_variance(&c.a, &mid, dim),
                None => radial_variance(&model.diffusion_at(&mid), &mid, dim),
            };
            let mut survive = 1.0;
            survive *= 1.0 - (-2.0 * d0 * d1 / (var * params.noise_scale.powi(2) * dt)).exp();
            if dim == 1 {
                // the far end of the interval is a second barrier
                let s = prev[0].signum();
                let (f0, f1) = (r + s * prev[0], r + s * x[0]);
                survive *= 1.0 - (-2.0 * f0 * f1 / (var * params.noise_scale.powi(2) * dt)).exp();
            }
            if rng.random::<f64>() > survive {
                exit = Some((k + 1) as f64 * dt);
            }
        }
    }
    Ok(PathOut {
        states,
        heat,
        exit,
        thin,
    })
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Variance rate of `|x|` in the outward direction.
fn radial_variance(a: &DMatrix<f64>, x: &[f64], dim: usize) -> f64 {
    let n = norm(x);
    if n == 0.0 {
        return a.diagonal().max();
    }
    let u = DVector::from_iterator(dim, x.iter().map(|v| v / n));
    u.dot(&(a * &u))
}

/// Point estimate with a standard error and a 95% interval.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub std_err: f64,
    pub ci: (f64, f64),
}

impl Estimate {
    pub fn contains(&self, v: f64) -> bool {
        self.ci.0 <= v && v <= self.ci.1
    }

    pub fn half_width(&self) -> f64 {
        0.5 * (self.ci.1 - self.ci.0)
    }
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

pub const BOOTSTRAP_RESAMPLES: usize = 200;

/// Percentile bootstrap of a vector-valued statistic; returns `(lo, hi)` per entry.
pub fn bootstrap<F>(n: usize, resamples: usize, seed: u64, stat: F) -> Vec<(f64, f64)>
where
    F: Fn(&[usize]) -> Vec<f64> + Sync,
{
    let draws: Vec<Vec<f64>> = (0..resamples)
        .into_par_iter()
        .map(|b| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(b as u64);
            let idx: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
            stat(&idx)
        })
        .collect();
    let k = draws.first().map_or(0, Vec::len);
    (0..k)
        .map(|j| {
            let mut col: Vec<f64> = draws.iter().map(|d| d[j]).collect();
            col.sort_by(f64::total_cmp);
            (quantile(&col, 0.025), quantile(&col, 0.975))
        })
        .collect()
}

fn mean_estimate(values: &[f64], seed: u64) -> Estimate {
    let n = values.len() as f64;
    let m = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    let ci = bootstrap(values.len(), BOOTSTRAP_RESAMPLES, seed, |idx| {
        vec![idx.iter().map(|&i| values[i]).sum::<f64>() / idx.len() as f64]
    })[0];
    Estimate {
        value: m,
        std_err: (var / n).sqrt(),
        ci,
    }
}

/// What a generating function is taken of.
pub enum Observable<'a> {
    Heat,
    /// `W + log θ(x₀) − log θ(x_t)` for the given `log θ`.
    EntropyProduction(&'a (dyn Fn(&[f64]) -> f64 + Sync)),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GeneratingFunctionEstimate {
    pub t: f64,
    pub lambdas: Vec<f64>,
    pub estimates: Vec<f64>,
    /// Bootstrap 95% half-widths.
    pub ci: Vec<f64>,
    pub ess: Vec<f64>,
    /// `|ê_t(λ) − ê_{0.9t}(λ)|`, when `0.9 t` was recorded.
    pub drift: Option<Vec<f64>>,
}

impl GeneratingFunctionEstimate {
    /// Largest slope decrease beyond the confidence slack; `≤ 0` means convex.
    pub fn convexity_violation(&self) -> f64 {
        let (l, e, c) = (&self.lambdas, &self.estimates, &self.ci);
        let mut worst = f64::NEG_INFINITY;
        for i in 1..l.len().saturating_sub(1) {
            let s0 = (e[i] - e[i - 1]) / (l[i] - l[i - 1]);
            let s1 = (e[i + 1] - e[i]) / (l[i + 1] - l[i]);
            let slack = (c[i - 1] + c[i]) / (l[i] - l[i - 1]) + (c[i] + c[i + 1]) / (l[i + 1] - l[i]);
            worst = worst.max(s0 - s1 - slack);
        }
        worst
    }

    pub fn is_convex(&self) -> bool {
        self.convexity_violation() <= 0.0
    }

    pub fn at(&self, lambda: f64) -> Option<usize> {
        self.lambdas.iter().position(|&l| (l - lambda).abs() < 1e-9)
    }

    /// `(λ, |ê(λ) − ê(1−λ)|, ci(λ) + ci(1−λ))` for every mirrored pair on the grid.
    pub fn symmetry_pairs(&self) -> Vec<(f64, f64, f64)> {
        self.lambdas
            .iter()
            .enumerate()
            .filter_map(|(i, &l)| {
                let j = self.at(1.0 - l)?;
                Some((l, (self.estimates[i] - self.estimates[j]).abs(), self.ci[i] + self.ci[j]))
            })
            .collect()
    }
}

impl TrajectoryEnsemble {
    pub fn paths(&self) -> usize {
        self.params.paths
    }

    fn rec_index(&self, t: f64) -> Result<usize> {
        self.record_times
            .iter()
            .position(|&r| (r - t).abs() < 1e-9 * t.max(1.0))
            .ok_or_else(|| Error::InvalidArgument(format!("time {t} was not recorded")))
    }

    pub fn state(&self, path: usize, rec: usize) -> &[f64] {
        let nr = self.record_times.len();
        let o = (path * nr + rec) * self.dim;
        &self.states[o..o + self.dim]
    }

    pub fn heat_at(&self, path: usize, rec: usize) -> f64 {
        self.heat[path * self.record_times.len() + rec]
    }

    pub fn alive_at(&self, path: usize, t: f64) -> bool {
        self.exit_times[path].is_none_or(|e| e > t)
    }

    /// Fraction of paths not absorbed by time `t`.
    pub fn survival_probability(&self, t: f64) -> Estimate {
        let n = self.paths();
        let k = (0..n).filter(|&p| self.alive_at(p, t)).count();
        let p = k as f64 / n as f64;
        // Laplace-smoothed spread so that p = 0 or 1 still reports an error
        let ps = (k as f64 + 1.0) / (n as f64 + 2.0);
        let se = (ps * (1.0 - ps) / n as f64).sqrt();
        Estimate {
            value: p,
            std_err: se,
            ci: (p - 1.96 * se, p + 1.96 * se),
        }
    }

    /// Histogram of surviving paths at `t` on the nodes of `grid`, normalized
    /// by the initial path count. Returns the density and the integer counts
    /// `(binned, absorbed, outside the box)`.
    pub fn empirical_kernel(&self, t: f64, grid: &Grid) -> Result<(GridFunction, [usize; 3])> {
        if grid.dim != self.dim {
            return Err(Error::InvalidArgument("grid dimension differs".into()));
        }
        let rec = self.rec_index(t)?;
        let mut out = GridFunction::zeros(grid, ValueKind::Density);
        let mut counts = [0usize; 3];
        let w = 1.0 / (self.paths() as f64 * grid.cell_volume());
        for p in 0..self.paths() {
            if !self.alive_at(p, t) {
                counts[1] += 1;
                continue;
            }
            match grid.nearest(self.state(p, rec)) {
                Some(i) => {
                    out.values[i] += w;
                    counts[0] += 1;
                }
                None => counts[2] += 1,
            }
        }
        Ok((out, counts))
    }

    /// Per-coordinate variance of surviving paths at `t`.
    pub fn variance(&self, t: f64) -> Result<Vec<Estimate>> {
        let rec = self.rec_index(t)?;
        let alive: Vec<usize> = (0..self.paths()).filter(|&p| self.alive_at(p, t)).collect();
        let n = alive.len() as f64;
        Ok((0..self.dim)
            .map(|k| {
                let xs: Vec<f64> = alive.iter().map(|&p| self.state(p, rec)[k]).collect();
                let m = xs.iter().sum::<f64>() / n;
                let c: Vec<f64> = xs.iter().map(|x| (x - m).powi(2)).collect();
                let v = c.iter().sum::<f64>() / (n - 1.0);
                let m4 = c.iter().map(|c| c * c).sum::<f64>() / n;
                let se = ((m4 - v * v).max(0.0) / n).sqrt();
                Estimate {
                    value: v,
                    std_err: se,
                    ci: (v - 1.96 * se, v + 1.96 * se),
                }
            })
            .collect())
    }

    /// Heat accumulated between two recorded times, per surviving path.
    pub fn heat_increments(&self, from: f64, to: f64) -> Result<Vec<f64>> {
        let (a, b) = (self.rec_index(from)?, self.rec_index(to)?);
        Ok((0..self.paths())
            .filter(|&p| self.alive_at(p, to))
            .map(|p| self.heat_at(p, b) - self.heat_at(p, a))
            .collect())
    }

    /// Mean `ΔW/Δt` over `[burn_in, horizon]` with a bootstrap interval.
    pub fn heat_rate(&self, burn_in: f64, seed: u64) -> Result<Estimate> {
        let t = self.params.horizon;
        if !(burn_in < t) {
            return Err(Error::InvalidArgument("burn-in must end before the horizon".into()));
        }
        let rates: Vec<f64> = self.heat_increments(burn_in, t)?.iter().map(|w| w / (t - burn_in)).collect();
        if rates.is_empty() {
            return Err(Error::InvalidArgument("every path was absorbed".into()));
        }
        Ok(mean_estimate(&rates, seed))
    }

    /// Values of the observable at time `t` for surviving paths.
    pub fn observable(&self, obs: &Observable, t: f64) -> Result<Vec<f64>> {
        let rec = self.rec_index(t)?;
        Ok((0..self.paths())
            .filter(|&p| self.alive_at(p, t))
            .map(|p| {
                let w = self.heat_at(p, rec);
                match obs {
                    Observable::Heat => w,
                    Observable::EntropyProduction(log_theta) => {
                        w + log_theta(self.state(p, 0)) - log_theta(self.state(p, rec))
                    }
                }
            })
            .collect())
    }

    pub fn log_generating_function(
        &self,
        obs: &Observable,
        t: f64,
        lambdas: &[f64],
        seed: u64,
    ) -> Result<GeneratingFunctionEstimate> {
        let values = self.observable(obs, t)?;
        let mut est = log_generating_function(&values, t, lambdas, seed)?;
        let early = 0.9 * t;
        if self.rec_index(early).is_ok() {
            let v0 = self.observable(obs, early)?;
            let e0 = log_generating_function(&v0, early, lambdas, seed)?;
            est.drift = Some(est.estimates.iter().zip(&e0.estimates).map(|(a, b)| (a - b).abs()).collect());
        }
        Ok(est)
    }
}

/// Smallest acceptable effective sample size, as a fraction of the sample.
pub const ESS_FRACTION: f64 = 1e-3;

fn lgf_point(values: &[f64], idx: Option<&[usize]>, t: f64, lambda: f64) -> (f64, f64) {
    if lambda == 0.0 {
        return (0.0, values.len() as f64);
    }
    let get = |k: usize| match idx {
        Some(ix) => values[ix[k]],
        None => values[k],
    };
    let n = idx.map_or(values.len(), <[usize]>::len);
    let m = (0..n).map(|k| -lambda * get(k)).fold(f64::NEG_INFINITY, f64::max);
    let (mut s, mut s2) = (0.0, 0.0);
    for k in 0..n {
        let e = (-lambda * get(k) - m).exp();
        s += e;
        s2 += e * e;
    }
    (-(m + (s / n as f64).ln()) / t, s * s / s2)
}

/// `ê(λ) = −(1/t) log mean e^{−λ v}` with bootstrap half-widths.
pub fn log_generating_function(values: &[f64], t: f64, lambdas: &[f64], seed: u64) -> Result<GeneratingFunctionEstimate> {
    if values.is_empty() || !(t > 0.0) {
        return Err(Error::InvalidArgument("need samples and t > 0".into()));
    }
    if lambdas.iter().any(|l| !l.is_finite()) {
        return Err(Error::InvalidArgument("lambda grid must be finite".into()));
    }
    let mut estimates = Vec::with_capacity(lambdas.len());
    let mut ess = Vec::with_capacity(lambdas.len());
    for &l in lambdas {
        let (e, s) = lgf_point(values, None, t, l);
        if s < (ESS_FRACTION * values.len() as f64).max(10f64.min(0.5 * values.len() as f64)) {
            return Err(Error::SampleCollapse { lambda: l, ess: s });
        }
        estimates.push(e);
        ess.push(s);
    }
    let bands = bootstrap(values.len(), BOOTSTRAP_RESAMPLES, seed, |idx| {
        lambdas.iter().map(|&l| lgf_point(values, Some(idx), t, l).0).collect()
    });
    Ok(GeneratingFunctionEstimate {
        t,
        lambdas: lambdas.to_vec(),
        estimates,
        ci: bands.iter().map(|(lo, hi)| 0.5 * (hi - lo)).collect(),
        ess,
        drift: None,
    })
}

/// Sum node masses over blocks of `m` nodes per axis.
pub fn coarsen_masses(f: &GridFunction, m: usize) -> Vec<f64> {
    let g = &f.grid;
    let per = g.axis_len().div_ceil(m);
    let mut out = vec![0.0; per.pow(g.dim as u32)];
    let vol = g.cell_volume();
    for i in 0..g.len() {
        let b = g
            .offsets(i)
            .iter()
            .fold(0usize, |acc, &o| acc * per + (o + g.half as i64) as usize / m);
        out[b] += f.values[i] * vol;
    }
    out
}

pub fn l1_masses(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}
