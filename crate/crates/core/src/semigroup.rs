//! Backward and forward semigroups built from resolvents on the largest ball.
//!
//! `T(t) f ≈ [(m/t) R(m/t)]^m f` where each factor is one solve with
//! `(m/t) I − L`; the forward semigroup uses `L*` the same way. Both are
//! positive and contractive whenever `λ − L` is an M-matrix.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::elliptic::{assemble_generator, DriftScheme, OperatorMatrix, Orientation};
use crate::error::{Error, Result};
use crate::grid::{BallDomain, GridFunction, ValueKind};
use crate::linalg::{inf_norm, CsrMatrix, LinearSolver};
use crate::model::DiffusionModel;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "method")]
pub enum EvolutionMethod {
    ImplicitEulerPower,
    /// `e^{−λt} e^{tλ² R(λ)}`; `lambda = None` picks `64/t`.
    YosidaExponential { lambda: Option<f64> },
}

#[derive(Debug, Clone)]
pub struct SemigroupEvolution {
    pub t: f64,
    pub steps: usize,
    pub method: EvolutionMethod,
    pub result: GridFunction,
    /// Resolvent parameter used by the last factor.
    pub lambda: f64,
}

/// Default step count balancing first-order time error against `O(h²)`.
pub fn default_steps(t: f64, spacing: f64) -> usize {
    16usize.max((t / spacing).ceil() as usize)
}

const TAYLOR_BUDGET: usize = 80;

type SolverCache = Mutex<HashMap<(Orientation, u64), Arc<LinearSolver>>>;

/// Discrete `L` and `L*` on one ball with cached resolvent factorizations.
pub struct Semigroup {
    pub backward: OperatorMatrix,
    pub forward: OperatorMatrix,
    cache: SolverCache,
}

impl Semigroup {
    pub fn new(model: &DiffusionModel, domain: &BallDomain, scheme: DriftScheme) -> Result<Self> {
        Ok(Self {
            backward: assemble_generator(model, domain, Orientation::Backward, scheme)?,
            forward: assemble_generator(model, domain, Orientation::Forward, scheme)?,
            cache: Mutex::new(HashMap::new()),
        })
    }

    /// Wrap already-assembled operators (e.g. with a different closure).
    pub fn from_operators(backward: OperatorMatrix, forward: OperatorMatrix) -> Self {
        Self {
            backward,
            forward,
            cache: Mutex::new(HashMap::new()),
        }
    }

    pub fn op(&self, o: Orientation) -> &OperatorMatrix {
        match o {
            Orientation::Backward => &self.backward,
            Orientation::Forward => &self.forward,
        }
    }

    pub fn spacing(&self) -> f64 {
        self.backward.grid.spacing
    }

    pub fn cell_volume(&self) -> f64 {
        self.backward.cell_volume()
    }

    pub fn solver(&self, o: Orientation, lambda: f64) -> Result<Arc<LinearSolver>> {
        let key = (o, lambda.to_bits());
        if let Some(s) = self.cache.lock().expect("cache poisoned").get(&key) {
            return Ok(s.clone());
        }
        let s = Arc::new(self.op(o).resolvent_solver(lambda)?);
        self.cache
            .lock()
            .expect("cache poisoned")
            .insert(key, s.clone());
        Ok(s)
    }

    /// `[(m/t) R(m/t)]^m v` on interior vectors.
    pub fn power(&self, o: Orientation, t: f64, steps: usize, v: &[f64]) -> Result<Vec<f64>> {
        if t == 0.0 {
            return Ok(v.to_vec());
        }
        let lambda = steps as f64 / t;
        let solver = self.solver(o, lambda)?;
        let mut x = v.to_vec();
        for _ in 0..steps {
            x = solver.solve(&x)?;
            for xi in &mut x {
                *xi *= lambda;
            }
        }
        Ok(x)
    }

    fn yosida(&self, o: Orientation, t: f64, blocks: usize, lambda: f64, v: &[f64]) -> Result<Vec<f64>> {
        let solver = self.solver(o, lambda)?;
        let tau = t / blocks as f64;
        let damp = (-lambda * tau).exp();
        let mut x = v.to_vec();
        for _ in 0..blocks {
            let mut term = x.clone();
            let mut sum = x.clone();
            let mut k = 0;
            loop {
                k += 1;
                if k > TAYLOR_BUDGET {
                    return Err(Error::TaylorBudget { terms: TAYLOR_BUDGET });
                }
                term = solver.solve(&term)?;
                let c = tau * lambda * lambda / k as f64;
                for ti in &mut term {
                    *ti *= c;
                }
                for (s, ti) in sum.iter_mut().zip(&term) {
                    *s += ti;
                }
                if inf_norm(&term) <= 1e-17 * inf_norm(&sum).max(f64::MIN_POSITIVE) {
                    break;
                }
            }
            x = sum.into_iter().map(|s| s * damp).collect();
        }
        Ok(x)
    }

    fn evolve_vec(
        &self,
        o: Orientation,
        t: f64,
        steps: usize,
        method: EvolutionMethod,
        v: &[f64],
    ) -> Result<(Vec<f64>, f64)> {
        match method {
            EvolutionMethod::ImplicitEulerPower => {
                Ok((self.power(o, t, steps, v)?, steps as f64 / t.max(f64::MIN_POSITIVE)))
            }
            EvolutionMethod::YosidaExponential { lambda } => {
                let lambda = lambda.unwrap_or(64.0 / t);
                Ok((self.yosida(o, t, steps, lambda, v)?, lambda))
            }
        }
    }

    /// `T(t) f` for an observable `f`.
    pub fn evolve(
        &self,
        t: f64,
        f: &GridFunction,
        steps: Option<usize>,
        method: EvolutionMethod,
    ) -> Result<SemigroupEvolution> {
        check_time(t)?;
        let steps = steps.unwrap_or_else(|| default_steps(t, self.spacing()));
        if steps == 0 {
            return Err(Error::InvalidArgument("steps must be at least 1".into()));
        }
        let op = &self.backward;
        if t == 0.0 {
            return Ok(SemigroupEvolution {
                t,
                steps,
                method,
                result: op.extend(&op.restrict(f), ValueKind::Function),
                lambda: f64::INFINITY,
            });
        }
        let (v, lambda) = self.evolve_vec(Orientation::Backward, t, steps, method, &op.restrict(f))?;
        Ok(SemigroupEvolution {
            t,
            steps,
            method,
            result: op.extend(&v, ValueKind::Function),
            lambda,
        })
    }

    /// `T̃(t) g` for a density `g ≥ 0`.
    pub fn evolve_forward(&self, t: f64, g: &GridFunction, steps: Option<usize>) -> Result<SemigroupEvolution> {
        check_time(t)?;
        let steps = steps.unwrap_or_else(|| default_steps(t, self.spacing()));
        if steps == 0 {
            return Err(Error::InvalidArgument("steps must be at least 1".into()));
        }
        let op = &self.forward;
        let g0 = op.restrict(g);
        if g0.iter().any(|&v| v < 0.0) {
            return Err(Error::InvalidArgument("forward evolution needs a non-negative density".into()));
        }
        let v = self.power(Orientation::Forward, t, steps, &g0)?;
        let vol = self.cell_volume();
        if let Some((node, &val)) = v.iter().enumerate().find(|(_, &x)| x * vol < -1e-10) {
            return Err(Error::NegativeMass { value: val * vol, node });
        }
        Ok(SemigroupEvolution {
            t,
            steps,
            method: EvolutionMethod::ImplicitEulerPower,
            result: op.extend(&v, ValueKind::Density),
            lambda: if t > 0.0 { steps as f64 / t } else { f64::INFINITY },
        })
    }

    /// Full transition kernel by evolving basis vectors.
    pub fn transition_kernel(
        &self,
        t: f64,
        steps: usize,
        orientation: Orientation,
        cap: usize,
    ) -> Result<TransitionKernel> {
        if !(t > 0.0) {
            return Err(Error::InvalidArgument("kernel needs t > 0".into()));
        }
        let n = self.backward.len();
        if n > cap {
            return Err(Error::KernelCap { nodes: n, cap });
        }
        // warm the factorization once before the parallel sweep
        self.solver(orientation, steps as f64 / t)?;
        let cols: Vec<Vec<f64>> = (0..n)
            .into_par_iter()
            .map(|j| {
                let mut e = vec![0.0; n];
                e[j] = 1.0;
                self.power(orientation, t, steps, &e)
            })
            .collect::<Result<_>>()?;
        let mut trips = Vec::new();
        for (j, col) in cols.iter().enumerate() {
            for (i, &v) in col.iter().enumerate() {
                if v != 0.0 {
                    trips.push((i, j, v));
                }
            }
        }
        let matrix = CsrMatrix::from_triplets(n, n, trips);
        let row_sums = (0..n).map(|i| matrix.row(i).map(|(_, v)| v).sum()).collect();
        Ok(TransitionKernel {
            t,
            steps,
            orientation,
            spacing: self.spacing(),
            radius: self.backward.grid.radius(),
            cell_volume: self.cell_volume(),
            nodes: self.backward.nodes.clone(),
            matrix,
            row_sums,
        })
    }

    /// Row `x` of the backward kernel as a density in the target point,
    /// via one forward solve chain started from a unit mass at `x`.
    pub fn kernel_row(&self, x: &[f64], t: f64, steps: usize) -> Result<GridFunction> {
        let op = &self.forward;
        let row = op
            .grid
            .nearest(x)
            .and_then(|i| op.row_of(i))
            .ok_or_else(|| Error::InvalidArgument(format!("{x:?} is not an interior node")))?;
        let mut e = vec![0.0; op.len()];
        e[row] = 1.0 / op.cell_volume();
        let v = self.power(Orientation::Forward, t, steps, &e)?;
        Ok(op.extend(&v, ValueKind::Density))
    }

    /// `‖T(t+s)f − T(t)T(s)f‖_∞` over interior nodes.
    pub fn check_chapman_kolmogorov(
        &self,
        t: f64,
        s: f64,
        f: &GridFunction,
        steps_t: usize,
        steps_s: usize,
        steps_ts: usize,
    ) -> Result<f64> {
        if !(t > 0.0 && s > 0.0) {
            return Err(Error::InvalidArgument("t and s must be positive".into()));
        }
        let v = self.backward.restrict(f);
        let whole = self.power(Orientation::Backward, t + s, steps_ts, &v)?;
        let inner = self.power(Orientation::Backward, s, steps_s, &v)?;
        let split = self.power(Orientation::Backward, t, steps_t, &inner)?;
        Ok(whole
            .iter()
            .zip(&split)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }

    /// `|⟨T(t)f, g⟩ − ⟨f, T̃(t)g⟩|` with volume-weighted sums.
    pub fn check_duality(&self, t: f64, f: &GridFunction, g: &GridFunction, steps: usize) -> Result<f64> {
        check_time(t)?;
        let fv = self.backward.restrict(f);
        let gv = self.forward.restrict(g);
        let tf = self.power(Orientation::Backward, t, steps, &fv)?;
        let tg = self.power(Orientation::Forward, t, steps, &gv)?;
        let vol = self.cell_volume();
        let lhs: f64 = tf.iter().zip(&gv).map(|(a, b)| a * b).sum::<f64>() * vol;
        let rhs: f64 = fv.iter().zip(&tg).map(|(a, b)| a * b).sum::<f64>() * vol;
        Ok((lhs - rhs).abs())
    }

    /// `e(t, ·) = T(t) 1` at each time, stepping between consecutive times
    /// with step size at most `dt`. Returns one function per time.
    pub fn mass_functions(&self, t_list: &[f64], dt: f64) -> Result<Vec<GridFunction>> {
        if t_list.windows(2).any(|w| w[1] < w[0]) || t_list.first().is_some_and(|&t| t < 0.0) {
            return Err(Error::InvalidArgument("t_list must be non-negative and increasing".into()));
        }
        let op = &self.backward;
        let mut v = vec![1.0; op.len()];
        let mut now = 0.0;
        let mut out = Vec::with_capacity(t_list.len());
        for &t in t_list {
            let span = t - now;
            if span > 0.0 {
                let steps = (span / dt).ceil().max(1.0) as usize;
                v = self.power(Orientation::Backward, span, steps, &v)?;
            }
            now = t;
            out.push(op.extend(&v, ValueKind::Function));
        }
        Ok(out)
    }

    /// `e(t, x)` for each `t` in `t_list`.
    pub fn mass_function(&self, t_list: &[f64], x: &[f64], dt: f64) -> Result<Vec<f64>> {
        let node = self
            .backward
            .grid
            .nearest(x)
            .ok_or_else(|| Error::InvalidArgument(format!("{x:?} outside the grid")))?;
        Ok(self
            .mass_functions(t_list, dt)?
            .into_iter()
            .map(|e| e.values[node])
            .collect())
    }
}

fn check_time(t: f64) -> Result<()> {
    if !(t >= 0.0) || !t.is_finite() {
        return Err(Error::InvalidArgument(format!("time must be finite and non-negative, got {t}")));
    }
    Ok(())
}

/// Discrete transition kernel: `matrix[x][y] ≈ p(t, x, cell(y))` (backward) or
/// the matrix of `T̃(t)` on density values (forward).
#[derive(Debug, Clone)]
pub struct TransitionKernel {
    pub t: f64,
    pub steps: usize,
    pub orientation: Orientation,
    pub spacing: f64,
    pub radius: f64,
    pub cell_volume: f64,
    /// Flat grid index of each row/column.
    pub nodes: Vec<usize>,
    pub matrix: CsrMatrix,
    pub row_sums: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelMeta {
    pub t: f64,
    pub h: f64,
    pub radius: f64,
    pub steps: usize,
    pub orientation: Orientation,
}

impl TransitionKernel {
    pub fn meta(&self) -> KernelMeta {
        KernelMeta {
            t: self.t,
            h: self.spacing,
            radius: self.radius,
            steps: self.steps,
            orientation: self.orientation,
        }
    }

    /// `max_x Σ_y |K_{t+s} − K_t K_s|`.
    pub fn composition_residual(whole: &TransitionKernel, a: &TransitionKernel, b: &TransitionKernel) -> f64 {
        let n = whole.matrix.nrows;
        (0..n)
            .into_par_iter()
            .map(|i| {
                let mut row = vec![0.0; n];
                for (k, v) in a.matrix.row(i) {
                    for (j, w) in b.matrix.row(k) {
                        row[j] += v * w;
                    }
                }
                for (j, v) in whole.matrix.row(i) {
                    row[j] -= v;
                }
                row.iter().map(|v| v.abs()).sum::<f64>()
            })
            .reduce(|| 0.0, f64::max)
    }
}

pub fn parse_kernel_meta(text: &str) -> Result<KernelMeta> {
    let m: KernelMeta = serde_json::from_str(text).map_err(|e| Error::Parse {
        line: e.line(),
        msg: e.to_string(),
    })?;
    if !(m.t > 0.0 && m.h > 0.0 && m.radius > 0.0 && m.t.is_finite() && m.radius.is_finite()) || m.steps == 0 {
        return Err(Error::Parse {
            line: 1,
            msg: "kernel metadata out of range".into(),
        });
    }
    Ok(m)
}
