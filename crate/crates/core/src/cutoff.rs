//! Smooth radial cutoffs `g_n` used to localize right-hand sides to `B_n`.
//!
//! `g_n(x) = ∫_{|x|²}^∞ f_n / ∫ f_n` where `f_n(t) = exp(1/((t − o)(t − i)))`
//! on `i ≤ t ≤ o`, with `i = (scale·(n − ½))²` and `o = (scale·n)²`.

use crate::error::{Error, Result};
use crate::grid::{BallDomain, Grid};
use crate::quadrature::integrate;

/// The 1-D profile of `g_n` as a function of the radius.
#[derive(Debug, Clone)]
pub struct CutoffProfile {
    pub index: usize,
    pub scale: f64,
    inner_sq: f64,
    outer_sq: f64,
    total: f64,
    tol: f64,
}

impl CutoffProfile {
    pub fn new(index: usize, scale: f64) -> Result<Self> {
        if index == 0 || !(scale > 0.0) {
            return Err(Error::InvalidArgument("cutoff needs index >= 1 and scale > 0".into()));
        }
        let inner = scale * (index as f64 - 0.5);
        let outer = scale * index as f64;
        let inner_sq = inner * inner;
        let outer_sq = outer * outer;
        let width = outer_sq - inner_sq;
        let peak = (-4.0 / (width * width)).exp();
        let mut p = Self {
            index,
            scale,
            inner_sq,
            outer_sq,
            total: 0.0,
            tol: 0.0,
        };
        let raw_tol = 1e-15 * width * peak;
        p.total = integrate(|t| p.density(t), inner_sq, outer_sq, raw_tol)?;
        p.tol = 1e-14 * p.total;
        Ok(p)
    }

    fn density(&self, t: f64) -> f64 {
        if t <= self.inner_sq || t >= self.outer_sq {
            0.0
        } else {
            (1.0 / ((t - self.outer_sq) * (t - self.inner_sq))).exp()
        }
    }

    /// `g_n` at squared radius `r_sq`. Exactly 1 on the inner ball and
    /// exactly 0 outside the outer one.
    pub fn value_sq(&self, r_sq: f64) -> Result<f64> {
        if r_sq <= self.inner_sq {
            return Ok(1.0);
        }
        if r_sq >= self.outer_sq {
            return Ok(0.0);
        }
        let mid = 0.5 * (self.inner_sq + self.outer_sq);
        let v = if r_sq < mid {
            1.0 - integrate(|t| self.density(t), self.inner_sq, r_sq, self.tol)? / self.total
        } else {
            integrate(|t| self.density(t), r_sq, self.outer_sq, self.tol)? / self.total
        };
        Ok(v.clamp(0.0, 1.0))
    }

    pub fn value(&self, r: f64) -> Result<f64> {
        self.value_sq(r * r)
    }
}

/// `g_n` sampled on a grid.
#[derive(Debug, Clone)]
pub struct CutoffFunction {
    pub index: usize,
    pub grid: Grid,
    pub values: Vec<f64>,
}

/// Sample `g_index` on `domain`'s grid; the domain must contain `B_index`.
pub fn cutoff_eval(index: usize, domain: &BallDomain) -> Result<CutoffFunction> {
    let host = domain.radius();
    let need = domain.scale * index as f64;
    if need > host * (1.0 + 1e-12) {
        return Err(Error::InvalidArgument(format!(
            "cutoff radius {need} exceeds domain radius {host}"
        )));
    }
    let profile = CutoffProfile::new(index, domain.scale)?;
    let grid = domain.grid();
    let values = (0..grid.len())
        .map(|i| {
            let x = grid.coords(i);
            profile.value_sq(x.iter().map(|v| v * v).sum())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CutoffFunction {
        index,
        grid,
        values,
    })
}
