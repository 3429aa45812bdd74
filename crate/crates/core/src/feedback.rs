//! Bang-off-bang feedback synthesis from a solved value field.
//!
//! For control-affine dynamics the sparse optimal control decomposes per
//! channel through the switching function `b_j(s,x) = D_x V(s,x) · f_j(x)`:
//!
//! ```text
//! u^(j) = U_j^-  if b_j U_j^- < -1
//! u^(j) = U_j^+  if b_j U_j^+ < -1
//! u^(j) = 0      otherwise
//! ```
//!
//! At the equalities both the extreme value and 0 maximize the channel
//! integrand; ties resolve to 0, the sparser choice, which keeps the map
//! a deterministic function of (s, x). The switching boundary of channel
//! j is the level set `b_j · U^± = -1`.

use std::io::Write;

use crate::error::{Error, Result};
use crate::field::ValueField;
use crate::model::{dot, Penalty, ProblemSpec};
use crate::sim::{Controller, SdePath};

/// Which extreme the boundary separates from "off".
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Branch {
    /// Level set b·U^- = -1 (switch between U^- and 0).
    Lower,
    /// Level set b·U^+ = -1 (switch between 0 and U^+).
    Upper,
}

impl Branch {
    pub fn label(&self) -> &'static str {
        match self {
            Branch::Lower => "-",
            Branch::Upper => "+",
        }
    }
}

#[derive(Debug, Clone)]
pub struct BoundaryPoint {
    pub branch: Branch,
    pub x: f64,
}

#[derive(Debug, Clone)]
pub struct BoundarySegment {
    pub branch: Branch,
    pub a: [f64; 2],
    pub b: [f64; 2],
}

/// Switching-boundary slice at one time for one channel: interpolated
/// roots in 1D, marching-squares segments in 2D.
#[derive(Debug, Clone)]
pub struct SwitchingBoundary {
    pub s: f64,
    pub channel: usize,
    pub points: Vec<BoundaryPoint>,
    pub segments: Vec<BoundarySegment>,
}

impl SwitchingBoundary {
    pub fn is_empty(&self) -> bool {
        self.points.is_empty() && self.segments.is_empty()
    }
}

/// Per-channel bang-off-bang rule with the off-preferring tie break.
pub(crate) fn bang_for(b: f64, lo: f64, hi: f64) -> f64 {
    if b * lo < -1.0 {
        lo
    } else if b * hi < -1.0 {
        hi
    } else {
        0.0
    }
}

/// Closed-form optimal law for the deterministic scalar problem
/// (`dx = (c x + u) dt`, terminal cost x², unit box): off inside
/// `|x| ≤ ½ e^{-2c(T-s)}`, extreme otherwise.
pub fn deterministic_scalar_law(s: f64, x: f64, c: f64, horizon: f64) -> f64 {
    let threshold = 0.5 * (-2.0 * c * (horizon - s)).exp();
    if x > threshold {
        -1.0
    } else if x < -threshold {
        1.0
    } else {
        0.0
    }
}

/// Measurable feedback map (s, x) -> u* realized through the switching
/// functions of a stored value field. Immutable and cheap to share
/// across Monte Carlo workers.
#[derive(Clone, Copy)]
pub struct FeedbackMap<'a> {
    field: &'a ValueField,
    spec: &'a ProblemSpec,
}

impl<'a> FeedbackMap<'a> {
    pub fn new(field: &'a ValueField, spec: &'a ProblemSpec) -> Result<Self> {
        if field.grid().dim() != spec.system().state_dim() {
            return Err(Error::Config(format!(
                "field grid is {}D but the system state is {}D",
                field.grid().dim(),
                spec.system().state_dim()
            )));
        }
        if spec.penalty() == Penalty::L2Energy {
            return Err(Error::Unsupported(
                "the bang-off-bang rule applies to the L0/L1 penalties only".into(),
            ));
        }
        Ok(Self { field, spec })
    }

    pub fn field(&self) -> &ValueField {
        self.field
    }

    pub fn spec(&self) -> &ProblemSpec {
        self.spec
    }

    fn check_channel(&self, j: usize) -> Result<()> {
        let m = self.spec.system().control_dim();
        if j >= m {
            return Err(Error::Config(format!(
                "channel {} out of range for {} control channels",
                j, m
            )));
        }
        Ok(())
    }

    /// Switching function b_j(s, x) = D_x V(s, x) · f_j(x).
    pub fn switching_value(&self, s: f64, x: &[f64], j: usize) -> Result<f64> {
        self.check_channel(j)?;
        let grad = self.field.gradient_at(s, x)?;
        Ok(dot(&self.spec.system().control_field(j, x), &grad))
    }

    /// The feedback control at (s, x); every channel lies exactly in
    /// {U_j^-, 0, U_j^+}.
    pub fn feedback(&self, s: f64, x: &[f64]) -> Result<Vec<f64>> {
        let grad = self.field.gradient_at(s, x)?;
        let sys = self.spec.system();
        let (lo, hi) = (self.spec.controls().lower(), self.spec.controls().upper());
        Ok((0..sys.control_dim())
            .map(|j| {
                let b = dot(&sys.control_field(j, x), &grad);
                bang_for(b, lo[j], hi[j])
            })
            .collect())
    }

    /// Nodal switching values of one slice for one channel.
    fn nodal_switching(&self, k: usize, j: usize) -> Vec<f64> {
        let grid = self.field.grid();
        let s = self.field.times()[k];
        (0..grid.num_nodes())
            .map(|node| {
                let x = grid.node_coords(node);
                // Nodal gradient through the public interpolator; at a
                // node the interpolation weights are 0/1.
                let grad = self.field.gradient_at(s, &x).expect("node inside grid");
                dot(&self.spec.system().control_field(j, &x), &grad)
            })
            .collect()
    }

    /// Extracts the switching boundary of channel j at time s: roots of
    /// `b_j · U^± + 1` by linear interpolation along grid lines in 1D,
    /// marching squares in 2D. An empty boundary is allowed.
    pub fn extract_boundary(&self, s: f64, j: usize) -> Result<SwitchingBoundary> {
        self.check_channel(j)?;
        let k = self.field.snap_time(s)?;
        let grid = self.field.grid();
        let b = self.nodal_switching(k, j);
        let (lo, hi) = (
            self.spec.controls().lower()[j],
            self.spec.controls().upper()[j],
        );
        let mut out = SwitchingBoundary {
            s: self.field.times()[k],
            channel: j,
            points: Vec::new(),
            segments: Vec::new(),
        };
        for (branch, bound) in [(Branch::Lower, lo), (Branch::Upper, hi)] {
            let r: Vec<f64> = b.iter().map(|bi| bi * bound + 1.0).collect();
            match grid.dim() {
                1 => {
                    let h = grid.spacing(0);
                    for i in 0..grid.points()[0] {
                        let xi = grid.coord(0, i);
                        if r[i] == 0.0 {
                            out.points.push(BoundaryPoint { branch, x: xi });
                        } else if i + 1 < grid.points()[0] && r[i] * r[i + 1] < 0.0 {
                            let t = r[i] / (r[i] - r[i + 1]);
                            out.points.push(BoundaryPoint {
                                branch,
                                x: xi + t * h,
                            });
                        }
                    }
                }
                _ => marching_squares(grid, &r, branch, &mut out.segments),
            }
        }
        Ok(out)
    }

    /// Distance of the switching quantities from criticality along a
    /// path: `min over samples, channels, signs of ||b_j·U^±| - 1|`.
    /// Strictly positive margins certify (at sampling resolution) that
    /// the path stays away from the switching boundary.
    pub fn normality_margin(&self, path: &SdePath) -> Result<f64> {
        let sys = self.spec.system();
        let (lo, hi) = (self.spec.controls().lower(), self.spec.controls().upper());
        let mut margin = f64::INFINITY;
        for (t, x) in path.times.iter().zip(&path.states) {
            let grad = self.field.gradient_at(*t, x)?;
            for j in 0..sys.control_dim() {
                let b = dot(&sys.control_field(j, x), &grad);
                for bound in [lo[j], hi[j]] {
                    margin = margin.min(((b * bound).abs() - 1.0).abs());
                }
            }
        }
        Ok(margin)
    }
}

impl Controller for FeedbackMap<'_> {
    fn control(&self, t: f64, x: &[f64]) -> Result<Vec<f64>> {
        self.feedback(t, x)
    }
}

/// Edge ids of a grid cell: bottom, right, top, left.
const EDGES: [(usize, usize); 4] = [(0, 1), (1, 2), (3, 2), (0, 3)];

/// Standard 16-case marching squares on the nodal residual `r`, emitting
/// the zero level set as line segments with endpoints interpolated
/// linearly on cell edges. Saddle cells are disambiguated by the cell
/// average.
fn marching_squares(
    grid: &crate::grid::SpatialGrid,
    r: &[f64],
    branch: Branch,
    segments: &mut Vec<BoundarySegment>,
) {
    let (n0, n1) = (grid.points()[0], grid.points()[1]);
    for i in 0..n0 - 1 {
        for j in 0..n1 - 1 {
            // Corner order: BL, BR, TR, TL in (x0, x1) coordinates.
            let corners = [
                [grid.coord(0, i), grid.coord(1, j)],
                [grid.coord(0, i + 1), grid.coord(1, j)],
                [grid.coord(0, i + 1), grid.coord(1, j + 1)],
                [grid.coord(0, i), grid.coord(1, j + 1)],
            ];
            let vals = [
                r[grid.node_index([i, j])],
                r[grid.node_index([i + 1, j])],
                r[grid.node_index([i + 1, j + 1])],
                r[grid.node_index([i, j + 1])],
            ];
            let mut case = 0usize;
            for (bit, v) in vals.iter().enumerate() {
                if *v >= 0.0 {
                    case |= 1 << bit;
                }
            }
            if case == 0 || case == 15 {
                continue;
            }
            let crossing = |edge: usize| -> [f64; 2] {
                let (a, b) = EDGES[edge];
                let (va, vb) = (vals[a], vals[b]);
                let t = if va == vb {
                    0.5
                } else {
                    (va / (va - vb)).clamp(0.0, 1.0)
                };
                [
                    corners[a][0] + t * (corners[b][0] - corners[a][0]),
                    corners[a][1] + t * (corners[b][1] - corners[a][1]),
                ]
            };
            // Edge pairs per case (bottom = 0, right = 1, top = 2, left = 3).
            let pairs: &[(usize, usize)] = match case {
                1 | 14 => &[(3, 0)],
                2 | 13 => &[(0, 1)],
                3 | 12 => &[(3, 1)],
                4 | 11 => &[(2, 1)],
                6 | 9 => &[(0, 2)],
                7 | 8 => &[(3, 2)],
                5 => {
                    if vals.iter().sum::<f64>() >= 0.0 {
                        &[(3, 2), (0, 1)]
                    } else {
                        &[(3, 0), (2, 1)]
                    }
                }
                10 => {
                    if vals.iter().sum::<f64>() >= 0.0 {
                        &[(3, 0), (2, 1)]
                    } else {
                        &[(3, 2), (0, 1)]
                    }
                }
                _ => unreachable!(),
            };
            for &(ea, eb) in pairs {
                segments.push(BoundarySegment {
                    branch,
                    a: crossing(ea),
                    b: crossing(eb),
                });
            }
        }
    }
}

/// Boundary CSV: one row per 1D root or 2D segment endpoint, with
/// columns (s, channel, branch, segment, x1[, x2]).
pub fn write_boundary_csv<W: Write>(
    mut w: W,
    boundaries: &[SwitchingBoundary],
    dim: usize,
) -> Result<()> {
    if dim == 1 {
        writeln!(w, "s,channel,branch,segment,x1")?;
    } else {
        writeln!(w, "s,channel,branch,segment,x1,x2")?;
    }
    for b in boundaries {
        for (idx, p) in b.points.iter().enumerate() {
            writeln!(
                w,
                "{:.16e},{},{},{},{:.16e}",
                b.s,
                b.channel,
                p.branch.label(),
                idx,
                p.x
            )?;
        }
        for (idx, seg) in b.segments.iter().enumerate() {
            for pt in [seg.a, seg.b] {
                writeln!(
                    w,
                    "{:.16e},{},{},{},{:.16e},{:.16e}",
                    b.s,
                    b.channel,
                    seg.branch.label(),
                    idx,
                    pt[0],
                    pt[1]
                )?;
            }
        }
    }
    Ok(())
}
