//! Sparse matrices and the linear solvers behind the resolvent solves.
//!
//! Direct solves use a banded LU with partial pivoting (1D/2D grids have
//! small bandwidth under lexicographic ordering); 3D grids go through
//! Jacobi-preconditioned BiCGSTAB. Both enforce the same relative residual.

use std::fmt::Write as _;

use crate::error::{Error, Result};

/// Relative residual every solve must meet (infinity norms).
pub const RESIDUAL_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    pub nrows: usize,
    pub ncols: usize,
    pub indptr: Vec<usize>,
    pub indices: Vec<usize>,
    pub data: Vec<f64>,
}

impl CsrMatrix {
    /// Build from `(row, col, value)` triplets; duplicates are summed.
    pub fn from_triplets(nrows: usize, ncols: usize, mut trips: Vec<(usize, usize, f64)>) -> Self {
        trips.sort_by_key(|&(i, j, _)| (i, j));
        let mut indptr = vec![0; nrows + 1];
        let mut indices = Vec::with_capacity(trips.len());
        let mut data: Vec<f64> = Vec::with_capacity(trips.len());
        let mut last: Option<(usize, usize)> = None;
        for (i, j, v) in trips {
            assert!(i < nrows && j < ncols, "triplet ({i},{j}) out of bounds");
            if last == Some((i, j)) {
                *data.last_mut().unwrap() += v;
            } else {
                indices.push(j);
                data.push(v);
                indptr[i + 1] += 1;
                last = Some((i, j));
            }
        }
        for i in 0..nrows {
            indptr[i + 1] += indptr[i];
        }
        Self {
            nrows,
            ncols,
            indptr,
            indices,
            data,
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_triplets(n, n, (0..n).map(|i| (i, i, 1.0)).collect())
    }

    pub fn nnz(&self) -> usize {
        self.data.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.indptr[i]..self.indptr[i + 1];
        self.indices[r.clone()].iter().copied().zip(self.data[r].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.row(i).find(|&(c, _)| c == j).map_or(0.0, |(_, v)| v)
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.nrows)
            .map(|i| self.row(i).map(|(j, v)| v * x[j]).sum())
            .collect()
    }

    pub fn transpose(&self) -> CsrMatrix {
        let trips = (0..self.nrows)
            .flat_map(|i| self.row(i).map(move |(j, v)| (j, i, v)))
            .collect();
        CsrMatrix::from_triplets(self.ncols, self.nrows, trips)
    }

    pub fn triplets(&self) -> Vec<(usize, usize, f64)> {
        (0..self.nrows)
            .flat_map(|i| self.row(i).map(move |(j, v)| (i, j, v)))
            .collect()
    }

    /// `alpha * I + beta * self`
    pub fn shifted(&self, alpha: f64, beta: f64) -> CsrMatrix {
        let mut trips: Vec<_> = self.triplets().into_iter().map(|(i, j, v)| (i, j, beta * v)).collect();
        trips.extend((0..self.nrows).map(|i| (i, i, alpha)));
        CsrMatrix::from_triplets(self.nrows, self.ncols, trips)
    }

    /// Lower and upper bandwidths.
    pub fn bandwidths(&self) -> (usize, usize) {
        let mut kl = 0;
        let mut ku = 0;
        for i in 0..self.nrows {
            for (j, _) in self.row(i) {
                if j < i {
                    kl = kl.max(i - j);
                } else {
                    ku = ku.max(j - i);
                }
            }
        }
        (kl, ku)
    }

    pub fn max_abs_diff(&self, other: &CsrMatrix) -> f64 {
        let mut d: f64 = 0.0;
        for i in 0..self.nrows {
            for (j, v) in self.row(i) {
                d = d.max((v - other.get(i, j)).abs());
            }
            for (j, v) in other.row(i) {
                d = d.max((v - self.get(i, j)).abs());
            }
        }
        d
    }

    /// Plain-text triplet format: a `rows cols nnz` header then one
    /// `row col value` line per entry.
    pub fn to_triplet_text(&self) -> String {
        let mut s = format!("{} {} {}\n", self.nrows, self.ncols, self.nnz());
        for (i, j, v) in self.triplets() {
            let _ = writeln!(s, "{i} {j} {v:.17e}");
        }
        s
    }

    pub fn from_triplet_text(text: &str) -> Result<CsrMatrix> {
        let mut lines = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#'));
        let (hl, header) = lines.next().ok_or(Error::Parse {
            line: 1,
            msg: "missing header".into(),
        })?;
        let h: Vec<&str> = header.split_whitespace().collect();
        let parse_usize = |s: &str, line: usize| {
            s.parse::<usize>().map_err(|e| Error::Parse {
                line: line + 1,
                msg: e.to_string(),
            })
        };
        if h.len() != 3 {
            return Err(Error::Parse {
                line: hl + 1,
                msg: "header must be `rows cols nnz`".into(),
            });
        }
        let (nr, nc, nnz) = (
            parse_usize(h[0], hl)?,
            parse_usize(h[1], hl)?,
            parse_usize(h[2], hl)?,
        );
        if nr > MAX_TEXT_DIM || nc > MAX_TEXT_DIM {
            return Err(Error::Parse {
                line: hl + 1,
                msg: format!("matrix dimensions above {MAX_TEXT_DIM} are not accepted"),
            });
        }
        let mut trips = Vec::with_capacity(nnz.min(1 << 20));
        for (ln, l) in lines {
            let p: Vec<&str> = l.split_whitespace().collect();
            if p.len() != 3 {
                return Err(Error::Parse {
                    line: ln + 1,
                    msg: "expected `row col value`".into(),
                });
            }
            let (i, j) = (parse_usize(p[0], ln)?, parse_usize(p[1], ln)?);
            let v: f64 = p[2].parse().map_err(|_| Error::Parse {
                line: ln + 1,
                msg: format!("bad value `{}`", p[2]),
            })?;
            if i >= nr || j >= nc {
                return Err(Error::Parse {
                    line: ln + 1,
                    msg: format!("entry ({i},{j}) outside {nr}x{nc}"),
                });
            }
            if !v.is_finite() {
                return Err(Error::Parse {
                    line: ln + 1,
                    msg: "non-finite value".into(),
                });
            }
            trips.push((i, j, v));
        }
        if trips.len() != nnz {
            return Err(Error::Parse {
                line: 1,
                msg: format!("header declares {nnz} entries, found {}", trips.len()),
            });
        }
        Ok(CsrMatrix::from_triplets(nr, nc, trips))
    }
}

/// Largest row or column count accepted from triplet text.
pub const MAX_TEXT_DIM: usize = 1 << 24;

pub fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn residual(a: &CsrMatrix, x: &[f64], b: &[f64]) -> Vec<f64> {
    let ax = a.matvec(x);
    b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect()
}

/// Banded LU with row partial pivoting.
#[derive(Debug, Clone)]
pub struct BandedLu {
    n: usize,
    kl: usize,
    width: usize,
    band: Vec<f64>,
    piv: Vec<usize>,
}

impl BandedLu {
    pub fn factor(a: &CsrMatrix) -> Result<Self> {
        let n = a.nrows;
        let (kl, ku) = a.bandwidths();
        let width = 2 * kl + ku + 1;
        let mut lu = Self {
            n,
            kl,
            width,
            band: vec![0.0; n * width],
            piv: vec![0; n],
        };
        for i in 0..n {
            for (j, v) in a.row(i) {
                *lu.at_mut(i, j) = v;
            }
        }
        let reach = kl + ku;
        for k in 0..n {
            let last = (k + kl).min(n - 1);
            let mut p = k;
            let mut best = lu.at(k, k).abs();
            for i in k + 1..=last {
                let v = lu.at(i, k).abs();
                if v > best {
                    best = v;
                    p = i;
                }
            }
            if best == 0.0 {
                return Err(Error::Solver {
                    iterations: k,
                    residual: f64::INFINITY,
                });
            }
            lu.piv[k] = p;
            let jmax = (k + reach).min(n - 1);
            if p != k {
                for j in k..=jmax {
                    let t = lu.at(k, j);
                    *lu.at_mut(k, j) = lu.at(p, j);
                    *lu.at_mut(p, j) = t;
                }
            }
            let pivot = lu.at(k, k);
            for i in k + 1..=last {
                let l = lu.at(i, k) / pivot;
                if l == 0.0 {
                    continue;
                }
                *lu.at_mut(i, k) = l;
                for j in k + 1..=jmax {
                    let u = lu.at(k, j);
                    if u != 0.0 {
                        *lu.at_mut(i, j) -= l * u;
                    }
                }
            }
        }
        Ok(lu)
    }

    #[inline]
    fn slot(&self, i: usize, j: usize) -> usize {
        i * self.width + (j + self.kl - i)
    }

    #[inline]
    fn at(&self, i: usize, j: usize) -> f64 {
        self.band[self.slot(i, j)]
    }

    #[inline]
    fn at_mut(&mut self, i: usize, j: usize) -> &mut f64 {
        let s = self.slot(i, j);
        &mut self.band[s]
    }

    pub fn solve_raw(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut x = b.to_vec();
        for k in 0..n {
            let p = self.piv[k];
            if p != k {
                x.swap(k, p);
            }
            let xk = x[k];
            if xk != 0.0 {
                for i in k + 1..=(k + self.kl).min(n - 1) {
                    x[i] -= self.at(i, k) * xk;
                }
            }
        }
        let reach = self.width - self.kl - 1;
        for i in (0..n).rev() {
            let mut s = x[i];
            for j in i + 1..=(i + reach).min(n - 1) {
                s -= self.at(i, j) * x[j];
            }
            x[i] = s / self.at(i, i);
        }
        x
    }
}

#[derive(Debug, Clone)]
enum Backend {
    Banded(BandedLu),
    Iterative { inv_diag: Vec<f64> },
}

/// A matrix prepared for repeated solves with a uniform residual contract.
#[derive(Debug, Clone)]
pub struct LinearSolver {
    matrix: CsrMatrix,
    backend: Backend,
}

impl LinearSolver {
    /// Direct when `iterative` is false, preconditioned BiCGSTAB otherwise.
    pub fn new(matrix: CsrMatrix, iterative: bool) -> Result<Self> {
        let backend = if iterative {
            let inv_diag = (0..matrix.nrows)
                .map(|i| {
                    let d = matrix.get(i, i);
                    if d != 0.0 {
                        1.0 / d
                    } else {
                        1.0
                    }
                })
                .collect();
            Backend::Iterative { inv_diag }
        } else {
            Backend::Banded(BandedLu::factor(&matrix)?)
        };
        Ok(Self { matrix, backend })
    }

    pub fn matrix(&self) -> &CsrMatrix {
        &self.matrix
    }

    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        let bn = inf_norm(b);
        if bn == 0.0 {
            return Ok(vec![0.0; b.len()]);
        }
        match &self.backend {
            Backend::Banded(lu) => {
                let mut x = lu.solve_raw(b);
                let mut r = residual(&self.matrix, &x, b);
                let mut it = 0;
                while inf_norm(&r) > 1e-3 * RESIDUAL_TOL * bn && it < 3 {
                    let dx = lu.solve_raw(&r);
                    for (xi, d) in x.iter_mut().zip(&dx) {
                        *xi += d;
                    }
                    r = residual(&self.matrix, &x, b);
                    it += 1;
                }
                let rn = inf_norm(&r);
                if rn > RESIDUAL_TOL * bn || !rn.is_finite() {
                    return Err(Error::Solver {
                        iterations: it,
                        residual: rn / bn,
                    });
                }
                Ok(x)
            }
            Backend::Iterative { inv_diag } => bicgstab(&self.matrix, inv_diag, b),
        }
    }
}

impl LinearSolver {
    /// Solve under the normwise backward-error contract
    /// `‖b − Ax‖ ≤ tol (‖A‖‖x‖ + ‖b‖)`, for systems whose solution spans
    /// many orders of magnitude relative to `b`.
    pub fn solve_backward_stable(&self, b: &[f64]) -> Result<Vec<f64>> {
        match self.solve(b) {
            Err(Error::Solver { .. }) => {}
            other => return other,
        }
        let x = match &self.backend {
            Backend::Banded(lu) => {
                let mut x = lu.solve_raw(b);
                for _ in 0..3 {
                    let r = residual(&self.matrix, &x, b);
                    let dx = lu.solve_raw(&r);
                    for (xi, d) in x.iter_mut().zip(&dx) {
                        *xi += d;
                    }
                }
                x
            }
            Backend::Iterative { .. } => return self.solve(b),
        };
        let a_norm = (0..self.matrix.nrows)
            .map(|i| self.matrix.row(i).map(|(_, v)| v.abs()).sum::<f64>())
            .fold(0.0, f64::max);
        let rn = inf_norm(&residual(&self.matrix, &x, b));
        let scale = a_norm * inf_norm(&x) + inf_norm(b);
        if !(rn <= RESIDUAL_TOL * scale) {
            return Err(Error::Solver {
                iterations: 3,
                residual: rn / scale,
            });
        }
        Ok(x)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn bicgstab(a: &CsrMatrix, inv_diag: &[f64], b: &[f64]) -> Result<Vec<f64>> {
    let n = b.len();
    let bn = inf_norm(b);
    let target = 1e-2 * RESIDUAL_TOL * bn;
    let precond = |v: &[f64]| -> Vec<f64> { v.iter().zip(inv_diag).map(|(x, d)| x * d).collect() };
    let mut x = vec![0.0; n];
    let mut r = b.to_vec();
    let r0 = r.clone();
    let mut rho = 1.0;
    let mut alpha = 1.0;
    let mut omega = 1.0;
    let mut v = vec![0.0; n];
    let mut p = vec![0.0; n];
    let max_iter = 20 * n.max(100);
    for it in 0..max_iter {
        let rho_new = dot(&r0, &r);
        if rho_new == 0.0 || omega == 0.0 {
            return Err(Error::Solver {
                iterations: it,
                residual: inf_norm(&r) / bn,
            });
        }
        let beta = (rho_new / rho) * (alpha / omega);
        rho = rho_new;
        for i in 0..n {
            p[i] = r[i] + beta * (p[i] - omega * v[i]);
        }
        let ph = precond(&p);
        v = a.matvec(&ph);
        alpha = rho / dot(&r0, &v);
        let s: Vec<f64> = r.iter().zip(&v).map(|(ri, vi)| ri - alpha * vi).collect();
        if inf_norm(&s) <= target {
            for i in 0..n {
                x[i] += alpha * ph[i];
            }
            return finish(a, x, b, it);
        }
        let sh = precond(&s);
        let t = a.matvec(&sh);
        omega = dot(&t, &s) / dot(&t, &t);
        for i in 0..n {
            x[i] += alpha * ph[i] + omega * sh[i];
            r[i] = s[i] - omega * t[i];
        }
        if inf_norm(&r) <= target {
            return finish(a, x, b, it);
        }
    }
    Err(Error::Solver {
        iterations: max_iter,
        residual: inf_norm(&residual(a, &x, b)) / bn,
    })
}

fn finish(a: &CsrMatrix, x: Vec<f64>, b: &[f64], it: usize) -> Result<Vec<f64>> {
    let rn = inf_norm(&residual(a, &x, b)) / inf_norm(b);
    if rn > RESIDUAL_TOL {
        return Err(Error::Solver {
            iterations: it,
            residual: rn,
        });
    }
    Ok(x)
}
