//! Control-affine system model, cost functionals, and Hamiltonians.
//!
//! The dynamics are
//!
//! ```text
//! dx_s = (f0(x_s) + Σ_j f_j(x_s) u_s^(j)) ds + σ(x_s) dw_s
//! ```
//!
//! with a box control set `U_j^- ≤ u^(j) ≤ U_j^+` containing 0 in the
//! interior of every channel. The running control cost is one of the
//! sparsity penalty ψ0 (count of active channels), its L1 relaxation ψ1,
//! or a quadratic energy baseline. The upper Hamiltonian
//!
//! ```text
//! H(x, p, M) = sup_u { -f(x,u)·p - ½ tr(σσᵀ(x) M) - ψ(u) } - ℓ(x)
//! ```
//!
//! decomposes across control channels for affine dynamics, so each
//! channel's supremum has a closed form (`channel_sup_l0` and friends).
//! `hamiltonian_bruteforce` maximizes over a dense control grid instead
//! and serves as an independent oracle for the closed forms.

use std::sync::Arc;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// State-indexed vector field (drift term or control column).
pub type FieldFn = Arc<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>;
/// State-indexed diffusion matrix, shape n x d.
pub type DiffusionFn = Arc<dyn Fn(&[f64]) -> DMatrix<f64> + Send + Sync>;
/// State-indexed scalar cost (terminal or running).
pub type CostFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Control-affine dynamics: drift `f0 + Σ_j f_j u^(j)` and a diffusion
/// matrix that depends on the state only.
#[derive(Clone)]
pub struct ControlAffineSystem {
    state_dim: usize,
    control_dim: usize,
    noise_dim: usize,
    f0: FieldFn,
    f_cols: Vec<FieldFn>,
    sigma: DiffusionFn,
}

impl ControlAffineSystem {
    /// Builds a system and probes every field at the origin to catch
    /// mismatched dimensions and non-finite closures early.
    pub fn new(
        state_dim: usize,
        control_dim: usize,
        noise_dim: usize,
        f0: FieldFn,
        f_cols: Vec<FieldFn>,
        sigma: DiffusionFn,
    ) -> Result<Self> {
        if state_dim == 0 || control_dim == 0 || noise_dim == 0 {
            return Err(Error::Config(
                "state, control, and noise dimensions must be positive".into(),
            ));
        }
        if f_cols.len() != control_dim {
            return Err(Error::Config(format!(
                "expected {} control columns, got {}",
                control_dim,
                f_cols.len()
            )));
        }
        let sys = Self {
            state_dim,
            control_dim,
            noise_dim,
            f0,
            f_cols,
            sigma,
        };
        let probe = vec![0.0; state_dim];
        sys.check_at(&probe)?;
        Ok(sys)
    }

    /// Validates dimensions and finiteness of all fields at one state.
    pub fn check_at(&self, x: &[f64]) -> Result<()> {
        let v = (self.f0)(x);
        if v.len() != self.state_dim || v.iter().any(|c| !c.is_finite()) {
            return Err(Error::Config(format!(
                "f0 returned a bad vector at {:?}: {:?}",
                x, v
            )));
        }
        for (j, fj) in self.f_cols.iter().enumerate() {
            let v = fj(x);
            if v.len() != self.state_dim || v.iter().any(|c| !c.is_finite()) {
                return Err(Error::Config(format!(
                    "f{} returned a bad vector at {:?}: {:?}",
                    j + 1,
                    x,
                    v
                )));
            }
        }
        let s = (self.sigma)(x);
        if s.nrows() != self.state_dim || s.ncols() != self.noise_dim {
            return Err(Error::Config(format!(
                "sigma has shape {}x{}, expected {}x{}",
                s.nrows(),
                s.ncols(),
                self.state_dim,
                self.noise_dim
            )));
        }
        if s.iter().any(|c| !c.is_finite()) {
            return Err(Error::Config(format!("sigma non-finite at {:?}", x)));
        }
        Ok(())
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn control_dim(&self) -> usize {
        self.control_dim
    }

    pub fn noise_dim(&self) -> usize {
        self.noise_dim
    }

    /// Uncontrolled drift f0(x).
    pub fn drift0(&self, x: &[f64]) -> Vec<f64> {
        (self.f0)(x)
    }

    /// Control column f_j(x), j in 0..control_dim.
    pub fn control_field(&self, j: usize, x: &[f64]) -> Vec<f64> {
        (self.f_cols[j])(x)
    }

    /// Full drift f(x,u) = f0(x) + Σ_j f_j(x) u^(j).
    pub fn drift(&self, x: &[f64], u: &[f64]) -> Vec<f64> {
        let mut v = (self.f0)(x);
        for (j, fj) in self.f_cols.iter().enumerate() {
            let col = fj(x);
            for (vi, ci) in v.iter_mut().zip(&col) {
                *vi += ci * u[j];
            }
        }
        v
    }

    pub fn sigma_at(&self, x: &[f64]) -> DMatrix<f64> {
        (self.sigma)(x)
    }

    /// σσᵀ(x), the n x n diffusion covariance.
    pub fn diffusion_sq(&self, x: &[f64]) -> DMatrix<f64> {
        let s = (self.sigma)(x);
        &s * s.transpose()
    }
}

/// Box control set with 0 strictly inside every channel.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxControlSet {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl BoxControlSet {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() || lower.is_empty() {
            return Err(Error::Config(
                "control bounds must be non-empty and of equal length".into(),
            ));
        }
        for (j, (&lo, &hi)) in lower.iter().zip(&upper).enumerate() {
            if !(lo.is_finite() && hi.is_finite() && lo < 0.0 && 0.0 < hi) {
                return Err(Error::Config(format!(
                    "channel {}: bounds must satisfy lo < 0 < hi, got [{}, {}]",
                    j, lo, hi
                )));
            }
        }
        Ok(Self { lower, upper })
    }

    /// The symmetric unit box [-1,1]^m.
    pub fn unit(m: usize) -> Self {
        Self {
            lower: vec![-1.0; m],
            upper: vec![1.0; m],
        }
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

    pub fn contains(&self, u: &[f64], tol: f64) -> bool {
        u.len() == self.dim()
            && u.iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(&ui, (&lo, &hi))| ui >= lo - tol && ui <= hi + tol)
    }

    /// All controls of the form Π_j {U_j^-, 0, U_j^+}. These are the only
    /// values a sparse optimizer can take, so they double as the exact
    /// candidate set when maximizing the L0/L1 channel integrand.
    pub fn bang_candidates(&self) -> Vec<Vec<f64>> {
        let m = self.dim();
        let mut out = Vec::with_capacity(3usize.pow(m as u32));
        let mut idx = vec![0usize; m];
        loop {
            let u: Vec<f64> = (0..m)
                .map(|j| match idx[j] {
                    0 => self.lower[j],
                    1 => 0.0,
                    _ => self.upper[j],
                })
                .collect();
            out.push(u);
            let mut j = 0;
            loop {
                if j == m {
                    return out;
                }
                idx[j] += 1;
                if idx[j] < 3 {
                    break;
                }
                idx[j] = 0;
                j += 1;
            }
        }
    }
}

/// Running control-cost selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Penalty {
    /// ψ0: number of non-zero channels (exact-zero test).
    L0,
    /// ψ1: sum of absolute channel values.
    L1,
    /// Σ_j (u^(j))²; quadratic minimum-energy baseline.
    L2Energy,
}

impl Penalty {
    /// Running cost ψ(u) for this penalty.
    pub fn cost(&self, u: &[f64]) -> f64 {
        match self {
            Penalty::L0 => psi0(u),
            Penalty::L1 => psi1(u),
            Penalty::L2Energy => u.iter().map(|v| v * v).sum(),
        }
    }

    /// Per-channel supremum of -b·u - ψ_channel(u) over u in [lo, hi].
    pub fn channel_sup(&self, b: f64, lo: f64, hi: f64) -> f64 {
        match self {
            Penalty::L0 => channel_sup_l0(b, lo, hi),
            Penalty::L1 => channel_sup_l1(b, lo, hi),
            Penalty::L2Energy => channel_sup_l2(b, lo, hi),
        }
    }
}

/// ψ0(u): the number of exactly non-zero components, with 0^0 = 0.
///
/// Uses exact comparison to zero. Synthesized feedback emits literal
/// zeros, so no epsilon threshold is introduced; a threshold would
/// silently change the cost being measured.
pub fn psi0(u: &[f64]) -> f64 {
    u.iter().filter(|&&v| v != 0.0).count() as f64
}

/// ψ1(u): the sum of absolute component values.
pub fn psi1(u: &[f64]) -> f64 {
    u.iter().map(|v| v.abs()).sum()
}

/// sup over u in [lo, hi] of -b·u - |u|^0, for lo < 0 < hi.
///
/// The integrand is linear off zero, so the supremum sits at one of
/// {lo, 0, hi}: max(0, -b·lo - 1, -b·hi - 1).
pub fn channel_sup_l0(b: f64, lo: f64, hi: f64) -> f64 {
    debug_assert!(lo < 0.0 && 0.0 < hi);
    (-b * lo - 1.0).max(-b * hi - 1.0).max(0.0)
}

/// sup over u in [lo, hi] of -b·u - |u|, for lo < 0 < hi.
///
/// Piecewise linear with a kink at 0: max(0, -b·lo - |lo|, -b·hi - |hi|).
/// On the unit box this is the case table p-1 / 0 / -p-1.
pub fn channel_sup_l1(b: f64, lo: f64, hi: f64) -> f64 {
    debug_assert!(lo < 0.0 && 0.0 < hi);
    (-b * lo - lo.abs()).max(-b * hi - hi.abs()).max(0.0)
}

/// sup over u in [lo, hi] of -b·u - u², attained at clamp(-b/2, lo, hi).
pub fn channel_sup_l2(b: f64, lo: f64, hi: f64) -> f64 {
    debug_assert!(lo < 0.0 && 0.0 < hi);
    let u = (-b / 2.0).clamp(lo, hi);
    -b * u - u * u
}

/// Finite-horizon problem: dynamics, control box, horizon, terminal cost
/// g, optional running state cost ℓ, and the penalty selector.
///
/// g must be continuous; growth (at most polynomial) is the caller's
/// obligation and is not checked. Likewise the Lipschitz modulus of the
/// dynamics is not verifiable for arbitrary closures.
#[derive(Clone)]
pub struct ProblemSpec {
    system: ControlAffineSystem,
    controls: BoxControlSet,
    horizon: f64,
    terminal_cost: CostFn,
    running_cost: Option<CostFn>,
    penalty: Penalty,
}

impl ProblemSpec {
    pub fn new(
        system: ControlAffineSystem,
        controls: BoxControlSet,
        horizon: f64,
        terminal_cost: CostFn,
        running_cost: Option<CostFn>,
        penalty: Penalty,
    ) -> Result<Self> {
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(Error::Config(format!(
                "horizon must be positive and finite, got {}",
                horizon
            )));
        }
        if controls.dim() != system.control_dim() {
            return Err(Error::Config(format!(
                "control box has {} channels but the system has {}",
                controls.dim(),
                system.control_dim()
            )));
        }
        let probe = vec![0.0; system.state_dim()];
        if !terminal_cost(&probe).is_finite() {
            return Err(Error::Config("terminal cost non-finite at origin".into()));
        }
        if let Some(ell) = &running_cost {
            if !ell(&probe).is_finite() {
                return Err(Error::Config("running cost non-finite at origin".into()));
            }
        }
        Ok(Self {
            system,
            controls,
            horizon,
            terminal_cost,
            running_cost,
            penalty,
        })
    }

    pub fn system(&self) -> &ControlAffineSystem {
        &self.system
    }

    pub fn controls(&self) -> &BoxControlSet {
        &self.controls
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn penalty(&self) -> Penalty {
        self.penalty
    }

    /// Same problem with a different penalty (used to solve L0/L1 twins).
    pub fn with_penalty(&self, penalty: Penalty) -> Self {
        let mut spec = self.clone();
        spec.penalty = penalty;
        spec
    }

    pub fn terminal_cost_at(&self, x: &[f64]) -> f64 {
        (self.terminal_cost)(x)
    }

    /// ℓ(x), or 0 when no running state cost is configured.
    pub fn running_cost_at(&self, x: &[f64]) -> f64 {
        self.running_cost.as_ref().map_or(0.0, |ell| ell(x))
    }

    pub fn has_running_cost(&self) -> bool {
        self.running_cost.is_some()
    }

    fn check_args(&self, args: &HamiltonianArgs) -> Result<()> {
        let n = self.system.state_dim();
        if args.x.len() != n || args.p.len() != n || args.m.nrows() != n || args.m.ncols() != n {
            return Err(Error::Config(format!(
                "hamiltonian arguments sized for n={}, system has n={}",
                args.x.len(),
                n
            )));
        }
        Ok(())
    }
}

/// Point arguments for a Hamiltonian evaluation: state x, gradient p, and
/// Hessian M. M is symmetrized on construction since finite-difference
/// Hessians are asymmetric at rounding level.
#[derive(Debug, Clone)]
pub struct HamiltonianArgs {
    pub x: Vec<f64>,
    pub p: Vec<f64>,
    m: DMatrix<f64>,
}

impl HamiltonianArgs {
    pub fn new(x: Vec<f64>, p: Vec<f64>, m: DMatrix<f64>) -> Self {
        assert!(m.is_square(), "Hessian must be square");
        let sym = (&m + m.transpose()) * 0.5;
        Self { x, p, m: sym }
    }

    /// Convenience constructor with a zero Hessian.
    pub fn first_order(x: Vec<f64>, p: Vec<f64>) -> Self {
        let n = x.len();
        Self {
            m: DMatrix::zeros(n, n),
            x,
            p,
        }
    }

    pub fn hessian(&self) -> &DMatrix<f64> {
        &self.m
    }
}

/// Closed-form upper Hamiltonian
/// `-f0·p - ½ tr(σσᵀ M) - ℓ(x) + Σ_j sup_u { -(f_j·p) u - ψ_j(u) }`.
pub fn hamiltonian(spec: &ProblemSpec, args: &HamiltonianArgs) -> Result<f64> {
    spec.check_args(args)?;
    let sys = spec.system();
    let f0 = sys.drift0(&args.x);
    let a = sys.diffusion_sq(&args.x);
    let mut h = -dot(&f0, &args.p) - 0.5 * (&a * &args.m).trace() - spec.running_cost_at(&args.x);
    let (lo, hi) = (spec.controls().lower(), spec.controls().upper());
    for j in 0..sys.control_dim() {
        let b = dot(&sys.control_field(j, &args.x), &args.p);
        h += spec.penalty().channel_sup(b, lo[j], hi[j]);
    }
    Ok(h)
}

/// Independent oracle for [`hamiltonian`]: maximizes the pre-supremum
/// integrand G over a dense Cartesian control grid. Each channel grid is
/// the uniform fill of [lo, hi] with {lo, 0, hi} inserted exactly, so for
/// L0/L1 the true optimizer lies on the grid and the result is exact.
pub fn hamiltonian_bruteforce(
    spec: &ProblemSpec,
    args: &HamiltonianArgs,
    grid_per_dim: usize,
) -> Result<f64> {
    spec.check_args(args)?;
    if grid_per_dim < 3 {
        return Err(Error::Config(format!(
            "grid_per_dim must be at least 3, got {}",
            grid_per_dim
        )));
    }
    let sys = spec.system();
    let m = sys.control_dim();
    if m > 3 {
        return Err(Error::Unsupported(format!(
            "brute-force supremum costs grid^m; control dimension {} > 3",
            m
        )));
    }

    let (lo, hi) = (spec.controls().lower(), spec.controls().upper());
    let grids: Vec<Vec<f64>> = (0..m)
        .map(|j| {
            let mut g: Vec<f64> = (0..grid_per_dim)
                .map(|i| lo[j] + (hi[j] - lo[j]) * i as f64 / (grid_per_dim - 1) as f64)
                .collect();
            g[0] = lo[j];
            g[grid_per_dim - 1] = hi[j];
            g.push(0.0);
            g.sort_by(|a, b| a.partial_cmp(b).unwrap());
            g.dedup();
            g
        })
        .collect();

    let f0 = sys.drift0(&args.x);
    let a = sys.diffusion_sq(&args.x);
    let base = -dot(&f0, &args.p) - 0.5 * (&a * &args.m).trace() - spec.running_cost_at(&args.x);
    let b: Vec<f64> = (0..m)
        .map(|j| dot(&sys.control_field(j, &args.x), &args.p))
        .collect();

    let mut best = f64::NEG_INFINITY;
    let mut u = vec![0.0; m];
    let mut idx = vec![0usize; m];
    loop {
        for j in 0..m {
            u[j] = grids[j][idx[j]];
        }
        let val = base - dot(&b, &u) - spec.penalty().cost(&u);
        if val > best {
            best = val;
        }
        let mut j = 0;
        loop {
            if j == m {
                return Ok(best);
            }
            idx[j] += 1;
            if idx[j] < grids[j].len() {
                break;
            }
            idx[j] = 0;
            j += 1;
        }
    }
}

/// Pre-maximization integrand
/// `G(x,u,p,M) = -f(x,u)·p - ½ tr(σσᵀ M) - ℓ(x) - ψ(u)`;
/// `hamiltonian` dominates this for every admissible u.
pub fn g_value(
    spec: &ProblemSpec,
    x: &[f64],
    u: &[f64],
    p: &[f64],
    m: &DMatrix<f64>,
) -> Result<f64> {
    let args = HamiltonianArgs::new(x.to_vec(), p.to_vec(), m.clone());
    spec.check_args(&args)?;
    if u.len() != spec.system().control_dim() {
        return Err(Error::Config(format!(
            "control has {} channels, expected {}",
            u.len(),
            spec.system().control_dim()
        )));
    }
    if !spec.controls().contains(u, 1e-12) {
        return Err(Error::Domain(format!("control {:?} outside the box", u)));
    }
    let sys = spec.system();
    let f = sys.drift(x, u);
    let a = sys.diffusion_sq(x);
    Ok(-dot(&f, &args.p)
        - 0.5 * (&a * args.hessian()).trace()
        - spec.running_cost_at(x)
        - spec.penalty().cost(u))
}
