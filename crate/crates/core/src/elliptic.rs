//! Discrete generators `L`, `L*` on a ball and the local resolvent solves.
//!
//! Every interior node gets a row `L u(x) = Σ_y c(x, y) (u(y) − u(x))` with
//! `u = 0` at nodes outside the ball (absorbing closure). Under the upwind
//! and hybrid drift schemes all couplings `c(x, y)` are non-negative, which
//! makes `λI − L` an M-matrix for every `λ > 0`.

use serde::{Deserialize, Serialize};

use crate::cutoff::CutoffFunction;
use crate::error::{Error, Result};
use crate::grid::{BallDomain, Grid, GridFunction, ValueKind};
use crate::linalg::{inf_norm, CsrMatrix, LinearSolver};
use crate::model::DiffusionModel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Orientation {
    /// `L`, acting on observables.
    Backward,
    /// `L*`, acting on densities.
    Forward,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DriftScheme {
    /// First-order upwinding everywhere.
    Upwind,
    /// Second-order central differences; may violate the maximum principle.
    Central,
    /// Central where both couplings stay non-negative, upwind elsewhere.
    Hybrid,
    /// Exponential fitting along grid edges (Scharfetter–Gummel): always an
    /// M-matrix, and gradient drifts give an exactly reversible chain. Needs a
    /// constant diagonal `A`; other models are assembled with `Hybrid`.
    #[default]
    Fitted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Closure {
    /// Exterior nodes hold zero: mass leaving the ball is killed.
    Absorbing,
    /// Couplings to exterior nodes are dropped: zero flux through the boundary.
    Reflecting,
}

/// Sparse discretization of `L` or `L*` over the interior nodes of a ball.
#[derive(Debug, Clone)]
pub struct OperatorMatrix {
    pub domain: BallDomain,
    pub grid: Grid,
    /// Flat grid index of each matrix row.
    pub nodes: Vec<usize>,
    row_of: Vec<usize>,
    pub matrix: CsrMatrix,
    pub orientation: Orientation,
    pub scheme: DriftScheme,
    pub closure: Closure,
    /// Total coupling from each row's node to exterior nodes.
    pub outflow: Vec<f64>,
}

const NO_ROW: usize = usize::MAX;

impl OperatorMatrix {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn row_of(&self, flat: usize) -> Option<usize> {
        match self.row_of.get(flat) {
            Some(&r) if r != NO_ROW => Some(r),
            _ => None,
        }
    }

    pub fn cell_volume(&self) -> f64 {
        self.grid.cell_volume()
    }

    /// Interior values of `f`, embedding it into this grid first if needed.
    pub fn restrict(&self, f: &GridFunction) -> Vec<f64> {
        if f.grid == self.grid {
            self.nodes.iter().map(|&i| f.values[i]).collect()
        } else {
            self.nodes
                .iter()
                .map(|&i| self.grid.map_to(i, &f.grid).map_or(0.0, |j| f.values[j]))
                .collect()
        }
    }

    pub fn extend(&self, v: &[f64], kind: ValueKind) -> GridFunction {
        let mut out = GridFunction::zeros(&self.grid, kind);
        for (&i, &x) in self.nodes.iter().zip(v) {
            out.values[i] = x;
        }
        out
    }

    /// The same operator with the other orientation (volume-weighted transpose).
    pub fn adjoint(&self) -> OperatorMatrix {
        let mut out = self.clone();
        out.matrix = self.matrix.transpose();
        out.orientation = match self.orientation {
            Orientation::Backward => Orientation::Forward,
            Orientation::Forward => Orientation::Backward,
        };
        out
    }

    pub fn node_coords(&self, row: usize) -> Vec<f64> {
        self.grid.coords(self.nodes[row])
    }

    /// Prepare `λI − M` for repeated solves.
    pub fn resolvent_solver(&self, lambda: f64) -> Result<LinearSolver> {
        if !(lambda > 0.0) {
            return Err(Error::InvalidArgument(format!("lambda must be positive, got {lambda}")));
        }
        LinearSolver::new(self.matrix.shifted(lambda, -1.0), self.grid.dim >= 3)
    }
}

struct Stencil {
    coupling: Vec<(Vec<i64>, f64)>,
}

impl Stencil {
    fn add(&mut self, delta: Vec<i64>, c: f64) {
        if c != 0.0 {
            self.coupling.push((delta, c));
        }
    }
}

fn unit(dim: usize, i: usize, s: i64) -> Vec<i64> {
    let mut d = vec![0; dim];
    d[i] = s;
    d
}

fn node_stencil(
    model: &DiffusionModel,
    x: &[f64],
    h: f64,
    scheme: DriftScheme,
    row: usize,
) -> Result<Stencil> {
    let dim = model.dim;
    let a = model.diffusion_at(x);
    let b = model.drift_at(x);
    let h2 = h * h;
    let mut st = Stencil {
        coupling: Vec::with_capacity(2 * dim * dim),
    };
    let mut axis = vec![0.0; dim];
    if scheme == DriftScheme::Fitted {
        return Ok(fitted_stencil(model, x, h, &a));
    }
    match scheme {
        DriftScheme::Central => {
            for i in 0..dim {
                axis[i] = a[(i, i)] / (2.0 * h2);
            }
            for i in 0..dim {
                for j in i + 1..dim {
                    let c = 0.5 * (a[(i, j)] + a[(j, i)]) / (4.0 * h2);
                    let mut pp = vec![0; dim];
                    pp[i] = 1;
                    pp[j] = 1;
                    let mut pm = pp.clone();
                    pm[j] = -1;
                    st.add(pp.clone(), c);
                    st.add(pp.iter().map(|v| -v).collect(), c);
                    st.add(pm.clone(), -c);
                    st.add(pm.iter().map(|v| -v).collect(), -c);
                }
            }
        }
        DriftScheme::Upwind | DriftScheme::Hybrid | DriftScheme::Fitted => {
            // Positive-coefficient stencil: each mixed term rides on the
            // diagonal direction matching its sign.
            for i in 0..dim {
                let off: f64 = (0..dim).filter(|&j| j != i).map(|j| a[(i, j)].abs()).sum();
                axis[i] = (a[(i, i)] - off) / (2.0 * h2);
                if axis[i] < 0.0 {
                    return Err(Error::MMatrix {
                        row,
                        coords: x.to_vec(),
                        detail: format!(
                            "mixed-derivative dominance on axis {i}: a_ii = {} < Σ|a_ij| = {off}",
                            a[(i, i)]
                        ),
                    });
                }
            }
            for i in 0..dim {
                for j in i + 1..dim {
                    let aij = 0.5 * (a[(i, j)] + a[(j, i)]);
                    let mut d = vec![0; dim];
                    d[i] = 1;
                    d[j] = if aij >= 0.0 { 1 } else { -1 };
                    let c = aij.abs() / (2.0 * h2);
                    st.add(d.clone(), c);
                    st.add(d.iter().map(|v| -v).collect(), c);
                }
            }
        }
    }
    for i in 0..dim {
        // velocity of the generator's transport term is -b
        let v = -b[i];
        let central_ok = axis[i] >= v.abs() / (2.0 * h);
        let use_central = match scheme {
            DriftScheme::Central => true,
            DriftScheme::Upwind => false,
            DriftScheme::Hybrid | DriftScheme::Fitted => central_ok,
        };
        if use_central {
            st.add(unit(dim, i, 1), axis[i] + v / (2.0 * h));
            st.add(unit(dim, i, -1), axis[i] - v / (2.0 * h));
        } else {
            st.add(unit(dim, i, 1), axis[i] + v.max(0.0) / h);
            st.add(unit(dim, i, -1), axis[i] + (-v).max(0.0) / h);
        }
    }
    Ok(st)
}

/// `z / (eᶻ − 1)`.
fn bernoulli(z: f64) -> f64 {
    if z.abs() < 1e-12 {
        1.0 - 0.5 * z
    } else {
        z / z.exp_m1()
    }
}

const GAUSS5: [(f64, f64); 5] = [
    (0.046_910_077_030_668_0, 0.118_463_442_528_094_5),
    (0.230_765_344_947_158_5, 0.239_314_335_249_683_2),
    (0.5, 0.284_444_444_444_444_4),
    (0.769_234_655_052_841_5, 0.239_314_335_249_683_2),
    (0.953_089_922_969_332_0, 0.118_463_442_528_094_5),
];

fn fitted_applies(model: &DiffusionModel) -> bool {
    let dim = model.dim;
    model
        .constant_diffusion()
        .is_some_and(|a| (0..dim).all(|i| (0..dim).all(|j| i == j || a[(i, j)] == 0.0)))
}

fn fitted_stencil(model: &DiffusionModel, x: &[f64], h: f64, a: &nalgebra::DMatrix<f64>) -> Stencil {
    let dim = model.dim;
    let mut st = Stencil {
        coupling: Vec::with_capacity(2 * dim),
    };
    for i in 0..dim {
        let aii = a[(i, i)];
        for s in [1i64, -1] {
            // ΔU = ∫ 2 b_i / a_ii along the edge towards the neighbour
            let mut y = x.to_vec();
            let du: f64 = GAUSS5
                .iter()
                .map(|&(t, w)| {
                    y[i] = x[i] + s as f64 * t * h;
                    w * 2.0 * model.drift_at(&y)[i] / aii
                })
                .sum::<f64>()
                * s as f64
                * h;
            st.add(unit(dim, i, s), aii / (2.0 * h * h) * bernoulli(du));
        }
    }
    st
}

/// Assemble the generator with an explicit boundary closure.
pub fn assemble_with_closure(
    model: &DiffusionModel,
    domain: &BallDomain,
    orientation: Orientation,
    scheme: DriftScheme,
    closure: Closure,
) -> Result<OperatorMatrix> {
    model.ensure_pde_dim()?;
    let scheme = if scheme == DriftScheme::Fitted && !fitted_applies(model) {
        DriftScheme::Hybrid
    } else {
        scheme
    };
    if domain.dim != model.dim {
        return Err(Error::InvalidArgument("domain and model dimensions differ".into()));
    }
    let grid = domain.grid();
    let h = grid.spacing;
    let nodes = grid.interior_nodes();
    let mut row_of = vec![NO_ROW; grid.len()];
    for (r, &i) in nodes.iter().enumerate() {
        row_of[i] = r;
    }
    let mut trips = Vec::with_capacity(nodes.len() * (2 * model.dim * model.dim + 1));
    let mut outflow = vec![0.0; nodes.len()];
    for (r, &p) in nodes.iter().enumerate() {
        let x = grid.coords(p);
        let st = node_stencil(model, &x, h, scheme, r)?;
        let base = grid.offsets(p);
        let mut diag = 0.0;
        for (delta, c) in st.coupling {
            let target: Vec<i64> = base.iter().zip(&delta).map(|(a, b)| a + b).collect();
            match grid.index_of(&target).map(|q| row_of[q]) {
                Some(q) if q != NO_ROW => {
                    trips.push((r, q, c));
                    diag -= c;
                }
                _ => {
                    outflow[r] += c;
                    if closure == Closure::Absorbing {
                        diag -= c;
                    }
                }
            }
        }
        trips.push((r, r, diag));
    }
    let n = nodes.len();
    let mut matrix = CsrMatrix::from_triplets(n, n, trips);
    if orientation == Orientation::Forward {
        // uniform cells: the volume-weighted transpose is the plain transpose
        matrix = matrix.transpose();
    }
    let op = OperatorMatrix {
        domain: domain.clone(),
        grid,
        nodes,
        row_of,
        matrix,
        orientation,
        scheme,
        closure,
        outflow,
    };
    if scheme != DriftScheme::Central {
        let rep = check_maximum_principle(&op, 1.0);
        if let Some(row) = rep.first_offending_row {
            return Err(Error::MMatrix {
                row,
                coords: rep.first_offending_coords.clone(),
                detail: format!("worst margin {:e}", rep.worst_margin),
            });
        }
    }
    Ok(op)
}

/// Assemble `L` (backward) or `L*` (forward) with the absorbing closure.
pub fn assemble_generator(
    model: &DiffusionModel,
    domain: &BallDomain,
    orientation: Orientation,
    scheme: DriftScheme,
) -> Result<OperatorMatrix> {
    assemble_with_closure(model, domain, orientation, scheme, Closure::Absorbing)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MaxPrincipleReport {
    pub lambda: f64,
    pub passed: bool,
    /// Smallest `(λ − L_ii) − Σ_j |L_ij|` over rows of the backward operator.
    pub worst_margin: f64,
    pub worst_row: usize,
    pub first_offending_row: Option<usize>,
    pub first_offending_coords: Vec<f64>,
}

/// Check the M-matrix conditions of `λI − L` row by row.
///
/// For a forward operator the rows of its backward counterpart are checked.
pub fn check_maximum_principle(op: &OperatorMatrix, lambda: f64) -> MaxPrincipleReport {
    let m = match op.orientation {
        Orientation::Backward => op.matrix.clone(),
        Orientation::Forward => op.matrix.transpose(),
    };
    let mut rep = MaxPrincipleReport {
        lambda,
        passed: true,
        worst_margin: f64::INFINITY,
        worst_row: 0,
        first_offending_row: None,
        first_offending_coords: Vec::new(),
    };
    for i in 0..m.nrows {
        let mut diag = 0.0;
        let mut off = 0.0;
        let mut sign_ok = true;
        for (j, v) in m.row(i) {
            if j == i {
                diag = v;
            } else {
                off += v.abs();
                if v < 0.0 {
                    sign_ok = false;
                }
            }
        }
        let margin = (lambda - diag) - off;
        if margin < rep.worst_margin {
            rep.worst_margin = margin;
            rep.worst_row = i;
        }
        let ok = sign_ok && lambda - diag > 0.0 && margin > 0.0;
        if !ok && rep.first_offending_row.is_none() {
            rep.passed = false;
            rep.first_offending_row = Some(i);
            rep.first_offending_coords = op.node_coords(i);
        }
    }
    rep
}

/// Solution of `(λ − L_h) u = f g_n` on one ball.
#[derive(Debug, Clone)]
pub struct LocalResolvent {
    pub lambda: f64,
    pub index: usize,
    pub solution: GridFunction,
    /// `‖(λ − L_h)u − f g_n‖_∞ / ‖f g_n‖_∞`.
    pub residual: f64,
}

pub fn solve_local_resolvent(
    op: &OperatorMatrix,
    lambda: f64,
    f: &GridFunction,
    g_n: &CutoffFunction,
) -> Result<LocalResolvent> {
    if op.orientation != Orientation::Backward {
        return Err(Error::InvalidArgument("local resolvent needs the backward operator".into()));
    }
    let solver = op.resolvent_solver(lambda)?;
    local_resolvent_with(op, &solver, lambda, f, g_n)
}

pub(crate) fn local_resolvent_with(
    op: &OperatorMatrix,
    solver: &LinearSolver,
    lambda: f64,
    f: &GridFunction,
    g_n: &CutoffFunction,
) -> Result<LocalResolvent> {
    let fv = op.restrict(f);
    if let Some(v) = fv.iter().find(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            value: *v,
            location: "resolvent right-hand side".into(),
        });
    }
    let rhs: Vec<f64> = op
        .nodes
        .iter()
        .zip(&fv)
        .map(|(&i, &v)| {
            let gi = g_n.grid.map_to_value(i, &op.grid, &g_n.values);
            v * gi
        })
        .collect();
    let u = solver.solve(&rhs)?;
    let au = solver.matrix().matvec(&u);
    let res: Vec<f64> = au.iter().zip(&rhs).map(|(a, b)| a - b).collect();
    let scale = inf_norm(&rhs);
    Ok(LocalResolvent {
        lambda,
        index: g_n.index,
        solution: op.extend(&u, ValueKind::Function),
        residual: if scale > 0.0 { inf_norm(&res) / scale } else { 0.0 },
    })
}

impl Grid {
    /// Value of a field stored on `self` at node `idx` of `other`.
    pub(crate) fn map_to_value(&self, idx: usize, other: &Grid, values: &[f64]) -> f64 {
        if self == other {
            values[idx]
        } else {
            other.map_to(idx, self).map_or(0.0, |j| values[j])
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cutoff::cutoff_eval;
    use crate::grid::build_grid_function;
    use crate::model::FieldSpec;
    use serde_json::json;

    fn model_1d(a: f64, b: f64) -> DiffusionModel {
        DiffusionModel::new(
            1,
            FieldSpec::new("linear", json!({"matrix": [[0.0]], "offset": [b]})),
            FieldSpec::new("constant", json!({"scalar": a})),
            0.0,
            None,
        )
        .unwrap()
    }

    fn ou_1d() -> DiffusionModel {
        DiffusionModel::new(
            1,
            FieldSpec::new("linear", json!({"matrix": [[1.0]]})),
            FieldSpec::new("constant", json!({"scalar": 1.0})),
            1.0,
            None,
        )
        .unwrap()
    }

    #[test]
    fn laplacian_stencil() {
        let d = BallDomain::new(1, 1.0, 1, 0.1).unwrap();
        let op = assemble_generator(&model_1d(2.0, 0.0), &d, Orientation::Backward, DriftScheme::Upwind).unwrap();
        let r = 5;
        let h2 = 0.01;
        assert!((-op.matrix.get(r, r - 1) - (-1.0 / h2)).abs() < 1e-9);
        assert!((-op.matrix.get(r, r) - 2.0 / h2).abs() < 1e-9);
        assert!((-op.matrix.get(r, r + 1) - (-1.0 / h2)).abs() < 1e-9);
    }

    #[test]
    fn upwind_row_sums_equal_lambda_inside() {
        let d = BallDomain::new(1, 1.0, 1, 0.1).unwrap();
        let op = assemble_generator(&model_1d(2.0, 1.0), &d, Orientation::Backward, DriftScheme::Upwind).unwrap();
        let lambda = 0.7;
        let m = op.matrix.shifted(lambda, -1.0);
        for r in 1..op.len() - 1 {
            let s: f64 = m.row(r).map(|(_, v)| v).sum();
            assert!((s - lambda).abs() < 1e-10, "row {r}: {s}");
        }
        // b = 1 means transport velocity -1: upwind couples to the left neighbour
        let r = 4;
        assert!((op.matrix.get(r, r - 1) - (1.0 / 0.01 + 1.0 / 0.1)).abs() < 1e-9);
        assert!((op.matrix.get(r, r + 1) - 1.0 / 0.01).abs() < 1e-9);
    }

    #[test]
    fn forward_is_transpose() {
        let d = BallDomain::new(1, 1.0, 2, 0.05).unwrap();
        let m = ou_1d();
        let back = assemble_generator(&m, &d, Orientation::Backward, DriftScheme::Central).unwrap();
        let fwd = assemble_generator(&m, &d, Orientation::Forward, DriftScheme::Central).unwrap();
        assert!(fwd.matrix.max_abs_diff(&back.matrix.transpose()) < 1e-12);
    }

    #[test]
    fn zero_rhs_gives_zero() {
        let d = BallDomain::new(1, 1.0, 1, 0.1).unwrap();
        let op = assemble_generator(&ou_1d(), &d, Orientation::Backward, DriftScheme::Upwind).unwrap();
        let f = GridFunction::zeros(&op.grid, ValueKind::Function);
        let g = cutoff_eval(1, &d).unwrap();
        let u = solve_local_resolvent(&op, 1.0, &f, &g).unwrap();
        assert!(u.solution.values.iter().all(|&v| v == 0.0));
    }

    fn closed_form_error(h: f64) -> f64 {
        // u'' - u = -1 on [-1, 1], u(±1) = 0  =>  u = 1 - cosh x / cosh 1
        let d = BallDomain::new(1, 1.0, 1, h).unwrap();
        let op = assemble_generator(&model_1d(2.0, 0.0), &d, Orientation::Backward, DriftScheme::Upwind).unwrap();
        let solver = op.resolvent_solver(1.0).unwrap();
        let u = solver.solve(&vec![1.0; op.len()]).unwrap();
        let origin = op.row_of(op.grid.origin()).unwrap();
        (u[origin] - (1.0 - 1.0 / 1f64.cosh())).abs()
    }

    #[test]
    fn closed_form_second_order() {
        let e1 = closed_form_error(0.1);
        let e2 = closed_form_error(0.05);
        let e3 = closed_form_error(0.025);
        assert!(e1 < 1e-3);
        assert!((e1 / e2 - 4.0).abs() < 0.2, "{}", e1 / e2);
        assert!((e2 / e3 - 4.0).abs() < 0.2, "{}", e2 / e3);
    }

    #[test]
    fn positivity_and_contraction() {
        let d = BallDomain::new(1, 1.0, 3, 0.05).unwrap();
        let op = assemble_generator(&ou_1d(), &d, Orientation::Backward, DriftScheme::Upwind).unwrap();
        let g = cutoff_eval(3, &d).unwrap();
        let f = build_grid_function(|x| (3.0 * x[0]).sin().abs() + 0.1, &op.grid, ValueKind::Function).unwrap();
        for lambda in [0.1, 1.0, 10.0] {
            let u = solve_local_resolvent(&op, lambda, &f, &g).unwrap();
            assert!(u.solution.min() >= -1e-12);
            assert!(lambda * u.solution.sup_norm() <= f.sup_norm() + 1e-10);
            assert!(u.residual <= 1e-10);
        }
    }

    #[test]
    fn peclet_threshold_decides_central_failure() {
        // |b| h / a > 1 breaks the central couplings (cell Péclet > 2 in ½a units)
        let d = BallDomain::new(1, 1.0, 1, 0.1).unwrap();
        let fast = model_1d(0.2, 5.0);
        let central = assemble_generator(&fast, &d, Orientation::Backward, DriftScheme::Central).unwrap();
        let rep = check_maximum_principle(&central, 1.0);
        assert!(!rep.passed);
        assert_eq!(rep.first_offending_row, Some(0));
        let up = assemble_generator(&fast, &d, Orientation::Backward, DriftScheme::Upwind).unwrap();
        assert!(check_maximum_principle(&up, 1.0).passed);
        let slow = model_1d(2.0, 5.0);
        let central = assemble_generator(&slow, &d, Orientation::Backward, DriftScheme::Central).unwrap();
        assert!(check_maximum_principle(&central, 1.0).passed);
    }

    #[test]
    fn pure_diffusion_passes_any_lambda() {
        let d = BallDomain::new(2, 1.0, 1, 0.25).unwrap();
        let m = DiffusionModel::new(
            2,
            FieldSpec::new("linear", json!({"matrix": [[0.0, 0.0], [0.0, 0.0]]})),
            FieldSpec::new("constant", json!({"scalar": 1.0})),
            0.0,
            None,
        )
        .unwrap();
        for scheme in [DriftScheme::Upwind, DriftScheme::Central, DriftScheme::Hybrid] {
            let op = assemble_generator(&m, &d, Orientation::Backward, scheme).unwrap();
            for lambda in [1e-6, 1.0, 1e3] {
                assert!(check_maximum_principle(&op, lambda).passed);
            }
        }
    }

    #[test]
    fn dominant_mixed_term_fails_assembly() {
        let d = BallDomain::new(2, 1.0, 1, 0.25).unwrap();
        let m = DiffusionModel::new(
            2,
            FieldSpec::new("linear", json!({"matrix": [[1.0, 0.0], [0.0, 1.0]]})),
            FieldSpec::new("constant", json!({"matrix": [[1.0, 0.9], [0.9, 0.5]]})),
            0.0,
            None,
        )
        .unwrap();
        let e = assemble_generator(&m, &d, Orientation::Backward, DriftScheme::Upwind).unwrap_err();
        assert!(matches!(e, Error::MMatrix { .. }), "{e}");
        // diagonally dominant correlation is fine
        let ok = DiffusionModel::new(
            2,
            FieldSpec::new("linear", json!({"matrix": [[1.0, 0.0], [0.0, 1.0]]})),
            FieldSpec::new("constant", json!({"matrix": [[1.0, -0.4], [-0.4, 1.0]]})),
            0.0,
            None,
        )
        .unwrap();
        let op = assemble_generator(&ok, &d, Orientation::Backward, DriftScheme::Upwind).unwrap();
        assert!(check_maximum_principle(&op, 0.5).passed);
    }

    #[test]
    fn dim_cap_enforced() {
        let m = DiffusionModel::new(
            4,
            FieldSpec::new("gradient_polynomial", json!({"quadratic": 1.0})),
            FieldSpec::new("constant", json!({"scalar": 1.0})),
            0.0,
            None,
        )
        .unwrap();
        let d = BallDomain::new(4, 1.0, 1, 0.5).unwrap();
        assert!(matches!(
            assemble_generator(&m, &d, Orientation::Backward, DriftScheme::Upwind),
            Err(Error::DimensionCap { dim: 4, cap: 3 })
        ));
    }

    #[test]
    fn fitted_rates_are_positive_even_at_high_peclet() {
        let d = BallDomain::new(1, 1.0, 1, 0.1).unwrap();
        let op = assemble_generator(&model_1d(0.2, 50.0), &d, Orientation::Backward, DriftScheme::Fitted).unwrap();
        assert_eq!(op.scheme, DriftScheme::Fitted);
        assert!(check_maximum_principle(&op, 1e-3).passed);
    }

    #[test]
    fn fitted_falls_back_for_correlated_noise() {
        let d = BallDomain::new(2, 1.0, 1, 0.25).unwrap();
        let m = DiffusionModel::new(
            2,
            FieldSpec::new("linear", json!({"matrix": [[1.0, 0.0], [0.0, 1.0]]})),
            FieldSpec::new("constant", json!({"matrix": [[1.0, -0.4], [-0.4, 1.0]]})),
            0.0,
            None,
        )
        .unwrap();
        let op = assemble_generator(&m, &d, Orientation::Backward, DriftScheme::Fitted).unwrap();
        assert_eq!(op.scheme, DriftScheme::Hybrid);
    }

    #[test]
    fn fitted_chain_balances_nodal_gibbs_weights() {
        // b = x: the reflecting chain is reversible w.r.t. exp(-x²) at the nodes
        let d = BallDomain::new(1, 1.0, 2, 0.1).unwrap();
        let op = assemble_with_closure(
            &ou_1d(),
            &d,
            Orientation::Backward,
            DriftScheme::Fitted,
            Closure::Reflecting,
        )
        .unwrap();
        for r in 0..op.len() - 1 {
            let (x, y) = (op.node_coords(r)[0], op.node_coords(r + 1)[0]);
            let lhs = (-x * x).exp() * op.matrix.get(r, r + 1);
            let rhs = (-y * y).exp() * op.matrix.get(r + 1, r);
            assert!((lhs - rhs).abs() < 1e-12 * lhs, "{x}: {lhs} vs {rhs}");
        }
    }
}
