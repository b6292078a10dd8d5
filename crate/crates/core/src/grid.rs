//! Tensor grids over nested balls and the values that live on them.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Uniform tensor grid on the box `[-R, R]^dim` with the origin as a node.
///
/// Nodes are addressed by a flat lexicographic index (last axis fastest) or
/// by integer offsets in `-half..=half` per axis. Grids with equal spacing
/// are nested: a node keeps its offsets in every larger grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub dim: usize,
    pub spacing: f64,
    pub half: usize,
}

impl Grid {
    pub fn new(dim: usize, spacing: f64, half: usize) -> Self {
        Self { dim, spacing, half }
    }

    pub fn radius(&self) -> f64 {
        self.half as f64 * self.spacing
    }

    pub fn axis_len(&self) -> usize {
        2 * self.half + 1
    }

    pub fn len(&self) -> usize {
        self.axis_len().pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn cell_volume(&self) -> f64 {
        self.spacing.powi(self.dim as i32)
    }

    pub fn offsets(&self, mut idx: usize) -> Vec<i64> {
        let n = self.axis_len();
        let mut out = vec![0i64; self.dim];
        for k in (0..self.dim).rev() {
            out[k] = (idx % n) as i64 - self.half as i64;
            idx /= n;
        }
        out
    }

    pub fn index_of(&self, offsets: &[i64]) -> Option<usize> {
        let n = self.axis_len() as i64;
        let h = self.half as i64;
        let mut idx = 0i64;
        for &o in offsets {
            if o < -h || o > h {
                return None;
            }
            idx = idx * n + (o + h);
        }
        Some(idx as usize)
    }

    pub fn coords(&self, idx: usize) -> Vec<f64> {
        self.offsets(idx)
            .into_iter()
            .map(|o| o as f64 * self.spacing)
            .collect()
    }

    pub fn origin(&self) -> usize {
        self.index_of(&vec![0; self.dim]).expect("origin is a node")
    }

    /// Node nearest to `x`, if inside the box.
    pub fn nearest(&self, x: &[f64]) -> Option<usize> {
        let offs: Vec<i64> = x.iter().map(|v| (v / self.spacing).round() as i64).collect();
        self.index_of(&offs)
    }

    /// Squared distance of node `idx` from the origin, in offset units.
    fn offset_norm_sq(&self, idx: usize) -> i64 {
        self.offsets(idx).iter().map(|o| o * o).sum()
    }

    /// Strictly inside the ball of radius `half·spacing`.
    pub fn is_interior(&self, idx: usize) -> bool {
        let h = self.half as i64;
        self.offset_norm_sq(idx) < h * h
    }

    /// Flat indices of all interior nodes in lexicographic order.
    pub fn interior_nodes(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.is_interior(i)).collect()
    }

    /// Index of the same node in a grid with equal spacing.
    pub fn map_to(&self, idx: usize, other: &Grid) -> Option<usize> {
        other.index_of(&self.offsets(idx))
    }

    /// Nodes whose coordinates all lie in `[-w, w]`.
    pub fn window_nodes(&self, half_width: f64) -> Vec<usize> {
        let lim = (half_width / self.spacing + 1e-9).floor() as i64;
        (0..self.len())
            .filter(|&i| self.offsets(i).iter().all(|o| o.abs() <= lim))
            .collect()
    }
}

/// The ball `B_n` of radius `scale · index`, realized on a box grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BallDomain {
    pub dim: usize,
    pub scale: f64,
    pub index: usize,
    pub spacing: f64,
}

impl BallDomain {
    pub fn new(dim: usize, scale: f64, index: usize, spacing: f64) -> Result<Self> {
        if index == 0 {
            return Err(Error::InvalidArgument("ball index must be at least 1".into()));
        }
        if !(scale > 0.0 && spacing > 0.0) {
            return Err(Error::InvalidArgument("scale and spacing must be positive".into()));
        }
        let d = Self {
            dim,
            scale,
            index,
            spacing,
        };
        d.half()?;
        Ok(d)
    }

    pub fn radius(&self) -> f64 {
        self.scale * self.index as f64
    }

    fn half(&self) -> Result<usize> {
        let ratio = self.radius() / self.spacing;
        let half = ratio.round();
        if (ratio - half).abs() > 1e-9 * ratio.max(1.0) || half < 1.0 {
            return Err(Error::InvalidArgument(format!(
                "radius {} is not a whole number of spacings {}",
                self.radius(),
                self.spacing
            )));
        }
        Ok(half as usize)
    }

    pub fn grid(&self) -> Grid {
        Grid::new(self.dim, self.spacing, self.half().expect("checked in new"))
    }

    pub fn with_index(&self, index: usize) -> Result<Self> {
        Self::new(self.dim, self.scale, index, self.spacing)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ValueKind {
    /// Sup-norm semantics.
    Function,
    /// Mass semantics: values are densities, integrated against cell volume.
    Density,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridFunction {
    pub grid: Grid,
    pub values: Vec<f64>,
    pub kind: ValueKind,
}

impl GridFunction {
    pub fn zeros(grid: &Grid, kind: ValueKind) -> Self {
        Self {
            grid: grid.clone(),
            values: vec![0.0; grid.len()],
            kind,
        }
    }

    pub fn from_values(grid: &Grid, values: Vec<f64>, kind: ValueKind) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::InvalidArgument(format!(
                "{} values for a grid of {} nodes",
                values.len(),
                grid.len()
            )));
        }
        Ok(Self {
            grid: grid.clone(),
            values,
            kind,
        })
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn mass(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.grid.cell_volume()
    }

    pub fn l1_distance(&self, other: &GridFunction) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
            * self.grid.cell_volume()
    }

    pub fn at(&self, x: &[f64]) -> Option<f64> {
        self.grid.nearest(x).map(|i| self.values[i])
    }

    /// Re-express on a grid with the same spacing; nodes missing from `self`
    /// become zero.
    pub fn embed(&self, target: &Grid) -> GridFunction {
        let mut out = GridFunction::zeros(target, self.kind);
        for (i, v) in out.values.iter_mut().enumerate() {
            if let Some(j) = target.map_to(i, &self.grid) {
                *v = self.values[j];
            }
        }
        out
    }

    /// Zero every node outside the open ball.
    pub fn masked(mut self) -> Self {
        for i in 0..self.values.len() {
            if !self.grid.is_interior(i) {
                self.values[i] = 0.0;
            }
        }
        self
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> GridFunction {
        GridFunction {
            grid: self.grid.clone(),
            values: self.values.iter().map(|&v| f(v)).collect(),
            kind: self.kind,
        }
    }
}

/// Evaluate `expr` at every node of the domain's grid.
pub fn build_grid_function(
    expr: impl Fn(&[f64]) -> f64,
    grid: &Grid,
    kind: ValueKind,
) -> Result<GridFunction> {
    let mut values = Vec::with_capacity(grid.len());
    for i in 0..grid.len() {
        let x = grid.coords(i);
        let v = expr(&x);
        if !v.is_finite() {
            return Err(Error::NonFinite {
                value: v,
                location: format!("node {x:?}"),
            });
        }
        values.push(v);
    }
    GridFunction::from_values(grid, values, kind)
}
