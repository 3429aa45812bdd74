//! Time-indexed value-function fields with finite-difference probes.

use std::io::{BufRead, Write};

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::grid::SpatialGrid;
use crate::model::{hamiltonian, HamiltonianArgs, ProblemSpec};

/// Grid samples of the value function V(t, x). Slice `k` holds the nodal
/// values at `times[k]` in row-major node order; the last slice carries
/// the terminal cost exactly as assigned by the solver.
#[derive(Debug, Clone)]
pub struct ValueField {
    grid: SpatialGrid,
    times: Vec<f64>,
    values: Vec<f64>,
}

impl ValueField {
    pub fn from_parts(grid: SpatialGrid, times: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if times.len() < 2 {
            return Err(Error::Config(
                "a field needs at least two time slices".into(),
            ));
        }
        if times.windows(2).any(|w| !(w[0] < w[1])) || times.iter().any(|t| !t.is_finite()) {
            return Err(Error::Config(
                "time stamps must be finite and increasing".into(),
            ));
        }
        if values.len() != times.len() * grid.num_nodes() {
            return Err(Error::Config(format!(
                "value array has {} entries, expected {} slices x {} nodes",
                values.len(),
                times.len(),
                grid.num_nodes()
            )));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Divergence(format!(
                "non-finite value at slice {}, node {}",
                pos / grid.num_nodes(),
                pos % grid.num_nodes()
            )));
        }
        Ok(Self {
            grid,
            times,
            values,
        })
    }

    pub fn grid(&self) -> &SpatialGrid {
        &self.grid
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn horizon(&self) -> f64 {
        *self.times.last().unwrap()
    }

    pub fn num_slices(&self) -> usize {
        self.times.len()
    }

    pub fn slice(&self, k: usize) -> &[f64] {
        let n = self.grid.num_nodes();
        &self.values[k * n..(k + 1) * n]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Index of the stored slice nearest to t. Errors when t falls
    /// outside [t0, T] (up to rounding slack).
    pub fn snap_time(&self, t: f64) -> Result<usize> {
        let t0 = self.times[0];
        let t1 = self.horizon();
        let tol = 1e-9 * (t1 - t0).max(1.0);
        if !(t.is_finite() && t >= t0 - tol && t <= t1 + tol) {
            return Err(Error::Domain(format!(
                "time {} outside the stored range [{}, {}]",
                t, t0, t1
            )));
        }
        let k = match self.times.binary_search_by(|v| v.partial_cmp(&t).unwrap()) {
            Ok(k) => k,
            Err(0) => 0,
            Err(k) if k >= self.times.len() => self.times.len() - 1,
            Err(k) => {
                if t - self.times[k - 1] <= self.times[k] - t {
                    k - 1
                } else {
                    k
                }
            }
        };
        Ok(k)
    }

    fn interp_on_slice<F: Fn(usize) -> f64>(
        &self,
        cells: &[usize],
        weights: &[f64],
        node_val: F,
    ) -> f64 {
        match self.grid.dim() {
            1 => {
                let i = cells[0];
                let w = weights[0];
                let a = node_val(self.grid.node_index([i, 0]));
                let b = node_val(self.grid.node_index([i + 1, 0]));
                (1.0 - w) * a + w * b
            }
            _ => {
                let (i, j) = (cells[0], cells[1]);
                let (wi, wj) = (weights[0], weights[1]);
                let v00 = node_val(self.grid.node_index([i, j]));
                let v10 = node_val(self.grid.node_index([i + 1, j]));
                let v01 = node_val(self.grid.node_index([i, j + 1]));
                let v11 = node_val(self.grid.node_index([i + 1, j + 1]));
                (1.0 - wi) * ((1.0 - wj) * v00 + wj * v01) + wi * ((1.0 - wj) * v10 + wj * v11)
            }
        }
    }

    /// V(t, x): snap t to the nearest slice, multilinear in space.
    pub fn value_at(&self, t: f64, x: &[f64]) -> Result<f64> {
        let k = self.snap_time(t)?;
        let (cells, weights) = self.grid.cell_of(x)?;
        let s = self.slice(k);
        Ok(self.interp_on_slice(&cells, &weights, |n| s[n]))
    }

    /// Spatial gradient of one slice at a node: centered differences in
    /// the interior, second-order one-sided at the boundary.
    fn nodal_gradient(&self, slice: &[f64], mut mi: [usize; 2], dim: usize) -> f64 {
        let h = self.grid.spacing(dim);
        let pts = self.grid.points()[dim];
        let i = mi[dim];
        let mut at = |ii: usize| {
            mi[dim] = ii;
            slice[self.grid.node_index(mi)]
        };
        if i == 0 {
            (-3.0 * at(0) + 4.0 * at(1) - at(2)) / (2.0 * h)
        } else if i == pts - 1 {
            (3.0 * at(i) - 4.0 * at(i - 1) + at(i - 2)) / (2.0 * h)
        } else {
            (at(i + 1) - at(i - 1)) / (2.0 * h)
        }
    }

    /// D_x V(t, x): nodal gradients interpolated multilinearly to x.
    pub fn gradient_at(&self, t: f64, x: &[f64]) -> Result<Vec<f64>> {
        let k = self.snap_time(t)?;
        let (cells, weights) = self.grid.cell_of(x)?;
        let s = self.slice(k);
        let dim = self.grid.dim();
        Ok((0..dim)
            .map(|d| {
                self.interp_on_slice(&cells, &weights, |n| {
                    self.nodal_gradient(s, self.grid.multi_index(n), d)
                })
            })
            .collect())
    }

    fn nodal_second(&self, slice: &[f64], mut mi: [usize; 2], dim: usize) -> f64 {
        let h = self.grid.spacing(dim);
        let i = mi[dim];
        let mut at = |ii: usize| {
            mi[dim] = ii;
            slice[self.grid.node_index(mi)]
        };
        (at(i + 1) - 2.0 * at(i) + at(i - 1)) / (h * h)
    }

    fn nodal_cross(&self, slice: &[f64], mi: [usize; 2]) -> f64 {
        let h0 = self.grid.spacing(0);
        let h1 = self.grid.spacing(1);
        let at = |a: usize, b: usize| slice[self.grid.node_index([a, b])];
        let (i, j) = (mi[0], mi[1]);
        (at(i + 1, j + 1) - at(i + 1, j - 1) - at(i - 1, j + 1) + at(i - 1, j - 1))
            / (4.0 * h0 * h1)
    }

    /// Pointwise HJB residual `-v_t + H(x, D_x v, D_x² v)` with every
    /// derivative taken by centered finite differences on the stored
    /// field. Small at points where the true value function is smooth.
    ///
    /// t must lie strictly inside the horizon (its nearest slice cannot
    /// be the first or last) and x at least two cells from the boundary.
    pub fn hjb_residual(&self, spec: &ProblemSpec, t: f64, x: &[f64]) -> Result<f64> {
        let k = self.snap_time(t)?;
        if k == 0 || k + 1 == self.num_slices() {
            return Err(Error::Domain(
                "residual probes must avoid the initial and terminal slices".into(),
            ));
        }
        let dim = self.grid.dim();
        for d in 0..dim {
            let h = self.grid.spacing(d);
            if x[d] < self.grid.lower()[d] + 2.0 * h || x[d] > self.grid.upper()[d] - 2.0 * h {
                return Err(Error::Domain(format!(
                    "residual probe {:?} within two cells of the boundary",
                    x
                )));
            }
        }
        let (cells, weights) = self.grid.cell_of(x)?;

        let before = self.slice(k - 1);
        let after = self.slice(k + 1);
        let span = self.times[k + 1] - self.times[k - 1];
        let v_t = (self.interp_on_slice(&cells, &weights, |n| after[n])
            - self.interp_on_slice(&cells, &weights, |n| before[n]))
            / span;

        let s = self.slice(k);
        let p: Vec<f64> = (0..dim)
            .map(|d| {
                self.interp_on_slice(&cells, &weights, |n| {
                    self.nodal_gradient(s, self.grid.multi_index(n), d)
                })
            })
            .collect();
        let mut m = DMatrix::zeros(dim, dim);
        for d in 0..dim {
            m[(d, d)] = self.interp_on_slice(&cells, &weights, |n| {
                self.nodal_second(s, self.grid.multi_index(n), d)
            });
        }
        if dim == 2 {
            let cross = self.interp_on_slice(&cells, &weights, |n| {
                self.nodal_cross(s, self.grid.multi_index(n))
            });
            m[(0, 1)] = cross;
            m[(1, 0)] = cross;
        }
        let args = HamiltonianArgs::new(x.to_vec(), p, m);
        Ok(-v_t + hamiltonian(spec, &args)?)
    }

    /// Writes the field in its CSV exchange format:
    /// two `#`-prefixed header lines (grid geometry, time stamps) and one
    /// comma-separated row of node values per time slice. Numbers carry
    /// 17 significant digits so the round trip is exact.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        write!(w, "# grid {}", self.grid.dim())?;
        for lo in self.grid.lower() {
            write!(w, " {:.16e}", lo)?;
        }
        for hi in self.grid.upper() {
            write!(w, " {:.16e}", hi)?;
        }
        for p in self.grid.points() {
            write!(w, " {}", p)?;
        }
        writeln!(w)?;
        write!(w, "# times")?;
        for t in &self.times {
            write!(w, " {:.16e}", t)?;
        }
        writeln!(w)?;
        let n = self.grid.num_nodes();
        for k in 0..self.num_slices() {
            let s = self.slice(k);
            let mut line = String::with_capacity(n * 24);
            for (i, v) in s.iter().enumerate() {
                if i > 0 {
                    line.push(',');
                }
                line.push_str(&format!("{:.16e}", v));
            }
            writeln!(w, "{}", line)?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines();
        let grid_line = lines
            .next()
            .ok_or_else(|| Error::Config("empty field file".into()))??;
        let toks: Vec<&str> = grid_line.split_whitespace().collect();
        if toks.len() < 3 || toks[0] != "#" || toks[1] != "grid" {
            return Err(Error::Config(
                "field file must start with '# grid ...'".into(),
            ));
        }
        let dim: usize = toks[2]
            .parse()
            .map_err(|_| Error::Config("bad grid dimension".into()))?;
        if toks.len() != 3 + 3 * dim {
            return Err(Error::Config(format!(
                "grid header needs {} fields for dim {}",
                3 + 3 * dim,
                dim
            )));
        }
        let parse_f = |s: &str| -> Result<f64> {
            s.parse()
                .map_err(|_| Error::Config(format!("bad float '{}' in field header", s)))
        };
        let lower: Vec<f64> = toks[3..3 + dim]
            .iter()
            .map(|s| parse_f(s))
            .collect::<Result<_>>()?;
        let upper: Vec<f64> = toks[3 + dim..3 + 2 * dim]
            .iter()
            .map(|s| parse_f(s))
            .collect::<Result<_>>()?;
        let points: Vec<usize> = toks[3 + 2 * dim..]
            .iter()
            .map(|s| {
                s.parse()
                    .map_err(|_| Error::Config(format!("bad point count '{}'", s)))
            })
            .collect::<std::result::Result<_, _>>()?;
        let grid = SpatialGrid::new(lower, upper, points)?;

        let times_line = lines
            .next()
            .ok_or_else(|| Error::Config("field file missing '# times' header".into()))??;
        let ttoks: Vec<&str> = times_line.split_whitespace().collect();
        if ttoks.len() < 3 || ttoks[0] != "#" || ttoks[1] != "times" {
            return Err(Error::Config(
                "second header line must be '# times ...'".into(),
            ));
        }
        let times: Vec<f64> = ttoks[2..]
            .iter()
            .map(|s| parse_f(s))
            .collect::<Result<_>>()?;

        let n = grid.num_nodes();
        let mut values = Vec::with_capacity(times.len() * n);
        for (k, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let before = values.len();
            for tok in line.split(',') {
                values.push(parse_f(tok.trim())?);
            }
            if values.len() - before != n {
                return Err(Error::Config(format!(
                    "slice {} has {} values, expected {}",
                    k,
                    values.len() - before,
                    n
                )));
            }
        }
        Self::from_parts(grid, times, values)
    }
}
