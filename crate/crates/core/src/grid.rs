//! Rectangular spatial grids (1D and 2D) for domain truncation.

use crate::error::{Error, Result};

pub const DEFAULT_NODE_CAP: usize = 4_000_000;

/// Uniform rectangular grid. Nodes are stored row-major: in 2D the node
/// index is `i0 * points[1] + i1`, with coordinate
/// `x_k = lower[k] + i_k * spacing(k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialGrid {
    lower: Vec<f64>,
    upper: Vec<f64>,
    points: Vec<usize>,
}

impl SpatialGrid {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>, points: Vec<usize>) -> Result<Self> {
        Self::with_node_cap(lower, upper, points, DEFAULT_NODE_CAP)
    }

    pub fn with_node_cap(
        lower: Vec<f64>,
        upper: Vec<f64>,
        points: Vec<usize>,
        cap: usize,
    ) -> Result<Self> {
        let dim = lower.len();
        if dim == 0 || dim > 2 {
            return Err(Error::Unsupported(format!(
                "grids must be 1D or 2D, got {}D",
                dim
            )));
        }
        if upper.len() != dim || points.len() != dim {
            return Err(Error::Config(
                "grid bounds and point counts must have the same dimension".into(),
            ));
        }
        let mut total = 1usize;
        for k in 0..dim {
            if !(lower[k].is_finite() && upper[k].is_finite() && lower[k] < upper[k]) {
                return Err(Error::Config(format!(
                    "grid dim {}: need finite lower < upper, got [{}, {}]",
                    k, lower[k], upper[k]
                )));
            }
            if points[k] < 8 {
                return Err(Error::Config(format!(
                    "grid dim {}: need at least 8 points, got {}",
                    k, points[k]
                )));
            }
            total = total.saturating_mul(points[k]);
        }
        if total > cap {
            return Err(Error::Config(format!(
                "grid has {} nodes, exceeding the cap of {}",
                total, cap
            )));
        }
        Ok(Self {
            lower,
            upper,
            points,
        })
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn points(&self) -> &[usize] {
        &self.points
    }

    pub fn spacing(&self, k: usize) -> f64 {
        (self.upper[k] - self.lower[k]) / (self.points[k] - 1) as f64
    }

    pub fn num_nodes(&self) -> usize {
        self.points.iter().product()
    }

    pub fn coord(&self, k: usize, idx: usize) -> f64 {
        self.lower[k] + self.spacing(k) * idx as f64
    }

    /// Multi-index of a flat node index.
    pub fn multi_index(&self, node: usize) -> [usize; 2] {
        match self.dim() {
            1 => [node, 0],
            _ => [node / self.points[1], node % self.points[1]],
        }
    }

    pub fn node_index(&self, mi: [usize; 2]) -> usize {
        match self.dim() {
            1 => mi[0],
            _ => mi[0] * self.points[1] + mi[1],
        }
    }

    /// Coordinates of a flat node index (length = dim).
    pub fn node_coords(&self, node: usize) -> Vec<f64> {
        let mi = self.multi_index(node);
        (0..self.dim()).map(|k| self.coord(k, mi[k])).collect()
    }

    /// True when x lies in the closed box.
    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && (0..self.dim()).all(|k| x[k] >= self.lower[k] && x[k] <= self.upper[k])
    }

    /// Clamps x componentwise into the closed box.
    pub fn clamp(&self, x: &[f64]) -> Vec<f64> {
        (0..self.dim())
            .map(|k| x[k].clamp(self.lower[k], self.upper[k]))
            .collect()
    }

    /// Lower cell corner and interpolation weight per dimension for a
    /// point inside the box.
    pub(crate) fn cell_of(&self, x: &[f64]) -> Result<(Vec<usize>, Vec<f64>)> {
        if !self.contains(x) {
            return Err(Error::OutOfDomain(format!(
                "point {:?} outside grid [{:?}, {:?}]",
                x, self.lower, self.upper
            )));
        }
        let mut cells = Vec::with_capacity(self.dim());
        let mut weights = Vec::with_capacity(self.dim());
        for k in 0..self.dim() {
            let h = self.spacing(k);
            let raw = ((x[k] - self.lower[k]) / h).floor() as isize;
            let c = raw.clamp(0, self.points[k] as isize - 2) as usize;
            let w = ((x[k] - self.coord(k, c)) / h).clamp(0.0, 1.0);
            cells.push(c);
            weights.push(w);
        }
        Ok((cells, weights))
    }
}
