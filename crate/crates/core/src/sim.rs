//! Euler-Maruyama closed-loop simulation and Monte Carlo estimation.
//!
//! Controls are piecewise constant over each step, sampled at the step
//! start; running costs use left-endpoint quadrature, the same order as
//! the path scheme. Noise comes from the counter-based generator in
//! [`crate::rng`] keyed by (seed, path, step, lane), so a report is a
//! pure function of its configuration regardless of worker count.

use std::io::Write;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::feedback::deterministic_scalar_law;
use crate::model::{psi0, psi1, Penalty, ProblemSpec};
use crate::rng::standard_normal;

/// Closed-loop control policy queried at each step start.
///
/// Implementations return [`Error::OutOfDomain`] when the state leaves
/// their domain of definition; the simulator then freezes the previous
/// control and flags the path.
pub trait Controller: Send + Sync {
    fn control(&self, t: f64, x: &[f64]) -> Result<Vec<f64>>;
}

/// Constant (possibly zero) control.
#[derive(Debug, Clone)]
pub struct ConstantControl(pub Vec<f64>);

impl Controller for ConstantControl {
    fn control(&self, _t: f64, _x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.0.clone())
    }
}

/// Closed-form bang-off-bang law for the deterministic scalar problem.
#[derive(Debug, Clone)]
pub struct DeterministicScalarLaw {
    pub c: f64,
    pub horizon: f64,
}

impl Controller for DeterministicScalarLaw {
    fn control(&self, t: f64, x: &[f64]) -> Result<Vec<f64>> {
        Ok(vec![deterministic_scalar_law(
            t,
            x[0],
            self.c,
            self.horizon,
        )])
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct KahanSum {
    sum: f64,
    c: f64,
}

impl KahanSum {
    fn add(&mut self, v: f64) {
        let y = v - self.c;
        let t = self.sum + y;
        self.c = (t - self.sum) - y;
        self.sum = t;
    }

    fn value(&self) -> f64 {
        self.sum
    }
}

fn kahan_mean<I: ExactSizeIterator<Item = f64> + Clone>(it: I) -> (f64, f64) {
    let n = it.len();
    let mut s = KahanSum::default();
    for v in it.clone() {
        s.add(v);
    }
    let mean = s.value() / n as f64;
    let mut d = KahanSum::default();
    for v in it {
        d.add((v - mean) * (v - mean));
    }
    let var = if n > 1 {
        d.value() / (n - 1) as f64
    } else {
        0.0
    };
    (mean, (var / n as f64).sqrt())
}

/// One simulated trajectory: N+1 states, N piecewise-constant controls.
#[derive(Debug, Clone)]
pub struct SdePath {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub controls: Vec<Vec<f64>>,
    pub seed: u64,
    pub path_id: u64,
    pub dt: f64,
    /// Set when the state left the controller's domain and the control
    /// was frozen at its previous value.
    pub exited: bool,
    /// Kahan-compensated sum of all consumed Wiener increments (unit
    /// normals); used as a pairing checksum across controllers.
    pub noise_sum: f64,
}

impl SdePath {
    pub fn steps(&self) -> usize {
        self.controls.len()
    }

    pub fn terminal_state(&self) -> &[f64] {
        self.states.last().unwrap()
    }

    /// Writes rows (t, x..., u..., exited); the final row has empty
    /// control columns since controls are per-step.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let n = self.states[0].len();
        let m = self.controls[0].len();
        write!(w, "t")?;
        for i in 0..n {
            write!(w, ",x{}", i + 1)?;
        }
        for j in 0..m {
            write!(w, ",u{}", j + 1)?;
        }
        writeln!(w, ",exited")?;
        for k in 0..self.states.len() {
            let mut line = format!("{:.16e}", self.times[k]);
            for v in &self.states[k] {
                line.push_str(&format!(",{:.16e}", v));
            }
            if k < self.controls.len() {
                for v in &self.controls[k] {
                    line.push_str(&format!(",{:.16e}", v));
                }
            } else {
                for _ in 0..m {
                    line.push(',');
                }
            }
            writeln!(w, "{},{}", line, u8::from(self.exited))?;
        }
        Ok(())
    }
}

fn checked_steps(span: f64, dt: f64) -> Result<usize> {
    if !(dt.is_finite() && dt > 0.0 && span.is_finite() && span > 0.0) {
        return Err(Error::Config(format!(
            "need positive dt and span, got dt = {}, span = {}",
            dt, span
        )));
    }
    let steps = (span / dt).round();
    if steps < 1.0 || (steps * dt - span).abs() > 1e-9 * span.max(1.0) {
        return Err(Error::Config(format!(
            "dt = {} does not divide the horizon span {}",
            dt, span
        )));
    }
    Ok(steps as usize)
}

/// Euler-Maruyama integration of the closed loop from (t0, x0) to t1.
pub fn simulate_span(
    spec: &ProblemSpec,
    controller: &dyn Controller,
    x0: &[f64],
    t0: f64,
    t1: f64,
    dt: f64,
    seed: u64,
    path_id: u64,
) -> Result<SdePath> {
    let sys = spec.system();
    let n = sys.state_dim();
    if x0.len() != n {
        return Err(Error::Config(format!(
            "initial state has {} components, system has {}",
            x0.len(),
            n
        )));
    }
    let steps = checked_steps(t1 - t0, dt)?;
    let d = sys.noise_dim();
    let sq = dt.sqrt();

    let mut times = Vec::with_capacity(steps + 1);
    let mut states = Vec::with_capacity(steps + 1);
    let mut controls = Vec::with_capacity(steps);
    let mut exited = false;
    let mut noise = KahanSum::default();

    let mut x = x0.to_vec();
    times.push(t0);
    states.push(x.clone());

    for k in 0..steps {
        let t = t0 + k as f64 * dt;
        let u = match controller.control(t, &x) {
            Ok(u) => u,
            Err(Error::OutOfDomain(_)) if !controls.is_empty() => {
                exited = true;
                controls.last().cloned().unwrap()
            }
            Err(e) => return Err(e),
        };
        if u.len() != sys.control_dim() {
            return Err(Error::Config(format!(
                "controller returned {} channels, expected {}",
                u.len(),
                sys.control_dim()
            )));
        }

        let drift = sys.drift(&x, &u);
        let sigma = sys.sigma_at(&x);
        let mut next = x.clone();
        for i in 0..n {
            next[i] += drift[i] * dt;
        }
        for lane in 0..d {
            let xi = standard_normal(seed, path_id, k as u64, lane as u64);
            noise.add(xi);
            for i in 0..n {
                next[i] += sigma[(i, lane)] * xi * sq;
            }
        }
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence(format!(
                "non-finite state at step {} (t = {:.6}) of path {}",
                k + 1,
                t + dt,
                path_id
            )));
        }
        controls.push(u);
        x = next;
        times.push(t0 + (k + 1) as f64 * dt);
        states.push(x.clone());
    }

    Ok(SdePath {
        times,
        states,
        controls,
        seed,
        path_id,
        dt,
        exited,
        noise_sum: noise.value(),
    })
}

/// Single-path simulation from t0 to the problem horizon (path id 0).
pub fn simulate(
    spec: &ProblemSpec,
    controller: &dyn Controller,
    x0: &[f64],
    t0: f64,
    dt: f64,
    seed: u64,
) -> Result<SdePath> {
    simulate_span(spec, controller, x0, t0, spec.horizon(), dt, seed, 0)
}

/// Per-path cost summary: total costs under each penalty plus path
/// statistics. Costs are ∫ψ(u)ds + ∫ℓ(x)ds + g(x_T) with left-endpoint
/// quadrature for the integrals.
#[derive(Debug, Clone)]
pub struct PathCosts {
    pub l0: f64,
    pub l1: f64,
    pub l2: f64,
    /// ψ0 time integral divided by m·(T - t0): the fraction of channel
    /// time the control is on.
    pub on_fraction: f64,
    pub sup_norm: f64,
    pub terminal: Vec<f64>,
}

pub fn path_costs(spec: &ProblemSpec, path: &SdePath) -> PathCosts {
    let dt = path.dt;
    let m = spec.system().control_dim() as f64;
    let span = path.times.last().unwrap() - path.times[0];
    let (mut c0, mut c1, mut c2, mut cell) = (
        KahanSum::default(),
        KahanSum::default(),
        KahanSum::default(),
        KahanSum::default(),
    );
    for u in &path.controls {
        c0.add(psi0(u) * dt);
        c1.add(psi1(u) * dt);
        c2.add(Penalty::L2Energy.cost(u) * dt);
    }
    if spec.has_running_cost() {
        for x in &path.states[..path.steps()] {
            cell.add(spec.running_cost_at(x) * dt);
        }
    }
    let g = spec.terminal_cost_at(path.terminal_state());
    let base = cell.value() + g;
    let sup_norm = path
        .states
        .iter()
        .map(|x| x.iter().map(|v| v * v).sum::<f64>().sqrt())
        .fold(0.0f64, f64::max);
    PathCosts {
        l0: c0.value() + base,
        l1: c1.value() + base,
        l2: c2.value() + base,
        on_fraction: c0.value() / (m * span),
        sup_norm,
        terminal: path.terminal_state().to_vec(),
    }
}

/// Monte Carlo aggregate over independent paths.
#[derive(Debug, Clone)]
pub struct SimulationReport {
    pub n_paths: usize,
    pub seed: u64,
    pub t0: f64,
    pub dt: f64,
    pub mean_cost_l0: f64,
    pub se_cost_l0: f64,
    pub mean_cost_l1: f64,
    pub se_cost_l1: f64,
    pub mean_cost_l2: f64,
    pub se_cost_l2: f64,
    /// Mean fraction of channel time with a non-zero control.
    pub sparsity_fraction: f64,
    pub se_sparsity: f64,
    pub terminal_mean: Vec<f64>,
    pub terminal_var: Vec<f64>,
    pub max_sup_norm: f64,
    /// Mean of (sup_s ‖x_s‖)² and (sup_s ‖x_s‖)⁴ over paths.
    pub mean_sup_norm_p2: f64,
    pub mean_sup_norm_p4: f64,
    /// Fraction of paths that left the controller domain at least once.
    pub exited_fraction: f64,
    /// Order-insensitive checksum of all consumed unit normals.
    pub noise_checksum: f64,
}

impl SimulationReport {
    /// Bitwise equality of every statistic; the determinism contract.
    pub fn bitwise_eq(&self, other: &Self) -> bool {
        let scalars = |r: &Self| {
            vec![
                r.t0,
                r.dt,
                r.mean_cost_l0,
                r.se_cost_l0,
                r.mean_cost_l1,
                r.se_cost_l1,
                r.mean_cost_l2,
                r.se_cost_l2,
                r.sparsity_fraction,
                r.se_sparsity,
                r.max_sup_norm,
                r.mean_sup_norm_p2,
                r.mean_sup_norm_p4,
                r.exited_fraction,
                r.noise_checksum,
            ]
        };
        self.n_paths == other.n_paths
            && self.seed == other.seed
            && scalars(self)
                .iter()
                .map(|v| v.to_bits())
                .collect::<Vec<_>>()
                == scalars(other)
                    .iter()
                    .map(|v| v.to_bits())
                    .collect::<Vec<_>>()
            && bits(&self.terminal_mean) == bits(&other.terminal_mean)
            && bits(&self.terminal_var) == bits(&other.terminal_var)
    }

    /// Single-record CSV with a named header.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let mut header = String::from(
            "n_paths,seed,t0,dt,mean_cost_l0,se_cost_l0,mean_cost_l1,se_cost_l1,\
             mean_cost_l2,se_cost_l2,sparsity_fraction,se_sparsity",
        );
        let mut row = format!(
            "{},{},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
            self.n_paths,
            self.seed,
            self.t0,
            self.dt,
            self.mean_cost_l0,
            self.se_cost_l0,
            self.mean_cost_l1,
            self.se_cost_l1,
            self.mean_cost_l2,
            self.se_cost_l2,
            self.sparsity_fraction,
            self.se_sparsity,
        );
        for (i, (m, v)) in self
            .terminal_mean
            .iter()
            .zip(&self.terminal_var)
            .enumerate()
        {
            header.push_str(&format!(",terminal_mean_{},terminal_var_{}", i + 1, i + 1));
            row.push_str(&format!(",{:.16e},{:.16e}", m, v));
        }
        header.push_str(
            ",max_sup_norm,mean_sup_norm_p2,mean_sup_norm_p4,exited_fraction,noise_checksum",
        );
        row.push_str(&format!(
            ",{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
            self.max_sup_norm,
            self.mean_sup_norm_p2,
            self.mean_sup_norm_p4,
            self.exited_fraction,
            self.noise_checksum
        ));
        writeln!(w, "{}", header)?;
        writeln!(w, "{}", row)?;
        Ok(())
    }
}

fn bits(v: &[f64]) -> Vec<u64> {
    v.iter().map(|x| x.to_bits()).collect()
}

/// Runs `n_paths` independent closed-loop simulations (path ids 0..n) and
/// aggregates costs and path statistics. Aggregation is a sequential
/// Kahan reduction in path order, so the report is bit-stable for any
/// number of workers.
pub fn monte_carlo(
    spec: &ProblemSpec,
    controller: &dyn Controller,
    x0: &[f64],
    t0: f64,
    dt: f64,
    n_paths: usize,
    seed: u64,
) -> Result<SimulationReport> {
    if n_paths < 2 {
        return Err(Error::Config("Monte Carlo needs at least 2 paths".into()));
    }
    let horizon = spec.horizon();
    let results: Vec<Result<(PathCosts, bool, f64)>> = (0..n_paths)
        .into_par_iter()
        .map(|pid| {
            let path = simulate_span(spec, controller, x0, t0, horizon, dt, seed, pid as u64)?;
            Ok((path_costs(spec, &path), path.exited, path.noise_sum))
        })
        .collect();
    let mut stats = Vec::with_capacity(n_paths);
    for r in results {
        stats.push(r?);
    }

    let n = spec.system().state_dim();
    let (mean_cost_l0, se_cost_l0) = kahan_mean(stats.iter().map(|s| s.0.l0));
    let (mean_cost_l1, se_cost_l1) = kahan_mean(stats.iter().map(|s| s.0.l1));
    let (mean_cost_l2, se_cost_l2) = kahan_mean(stats.iter().map(|s| s.0.l2));
    let (sparsity_fraction, se_sparsity) = kahan_mean(stats.iter().map(|s| s.0.on_fraction));
    let (mean_sup_norm_p2, _) = kahan_mean(stats.iter().map(|s| s.0.sup_norm.powi(2)));
    let (mean_sup_norm_p4, _) = kahan_mean(stats.iter().map(|s| s.0.sup_norm.powi(4)));
    let mut terminal_mean = Vec::with_capacity(n);
    let mut terminal_var = Vec::with_capacity(n);
    for i in 0..n {
        let (m, se) = kahan_mean(stats.iter().map(|s| s.0.terminal[i]));
        terminal_mean.push(m);
        terminal_var.push(se * se * n_paths as f64);
    }
    let max_sup_norm = stats.iter().map(|s| s.0.sup_norm).fold(0.0f64, f64::max);
    let mut exited = 0usize;
    let mut checksum = KahanSum::default();
    for s in &stats {
        if s.1 {
            exited += 1;
        }
        checksum.add(s.2);
    }

    Ok(SimulationReport {
        n_paths,
        seed,
        t0,
        dt,
        mean_cost_l0,
        se_cost_l0,
        mean_cost_l1,
        se_cost_l1,
        mean_cost_l2,
        se_cost_l2,
        sparsity_fraction,
        se_sparsity,
        terminal_mean,
        terminal_var,
        max_sup_norm,
        mean_sup_norm_p2,
        mean_sup_norm_p4,
        exited_fraction: exited as f64 / n_paths as f64,
        noise_checksum: checksum.value(),
    })
}

/// Backward gain schedule P(t) for the scalar minimum-energy baseline:
/// -Ṗ = 2cP - P²/r with P(T) = q_T, integrated by RK4.
#[derive(Debug, Clone)]
pub struct RiccatiSchedule {
    times: Vec<f64>,
    p: Vec<f64>,
}

impl RiccatiSchedule {
    pub fn gain_at(&self, t: f64) -> f64 {
        let t0 = self.times[0];
        let t1 = *self.times.last().unwrap();
        let tc = t.clamp(t0, t1);
        let h = (t1 - t0) / (self.times.len() - 1) as f64;
        let i = (((tc - t0) / h).floor() as usize).min(self.times.len() - 2);
        let w = ((tc - self.times[i]) / h).clamp(0.0, 1.0);
        (1.0 - w) * self.p[i] + w * self.p[i + 1]
    }

    pub fn p0(&self) -> f64 {
        self.p[0]
    }
}

/// The noise level does not enter the gain (certainty equivalence); the
/// argument is kept so call sites document the modeled diffusion.
pub fn riccati_baseline(
    c: f64,
    sigma: f64,
    horizon: f64,
    r: f64,
    q_t: f64,
) -> Result<RiccatiSchedule> {
    riccati_baseline_with_steps(c, sigma, horizon, r, q_t, 2000)
}

pub fn riccati_baseline_with_steps(
    c: f64,
    _sigma: f64,
    horizon: f64,
    r: f64,
    q_t: f64,
    steps: usize,
) -> Result<RiccatiSchedule> {
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(Error::Config("horizon must be positive".into()));
    }
    if !(r > 0.0) {
        return Err(Error::Config("control weight r must be positive".into()));
    }
    let steps = steps.max(1000);
    let h = horizon / steps as f64;
    // Integrate forward in τ = T - t: dQ/dτ = 2cQ - Q²/r, Q(0) = q_T.
    let f = |q: f64| 2.0 * c * q - q * q / r;
    let mut q = q_t;
    let mut rev = Vec::with_capacity(steps + 1);
    rev.push(q);
    for _ in 0..steps {
        let k1 = f(q);
        let k2 = f(q + 0.5 * h * k1);
        let k3 = f(q + 0.5 * h * k2);
        let k4 = f(q + h * k3);
        q += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        if !q.is_finite() {
            return Err(Error::Divergence(
                "Riccati gain blew up; horizon too long for these weights".into(),
            ));
        }
        rev.push(q);
    }
    let times: Vec<f64> = (0..=steps)
        .map(|i| horizon * i as f64 / steps as f64)
        .collect();
    let p: Vec<f64> = rev.into_iter().rev().collect();
    Ok(RiccatiSchedule { times, p })
}

/// Linear state feedback u = -P(t) x / r from the Riccati schedule,
/// optionally clamped into a control box.
#[derive(Debug, Clone)]
pub struct RiccatiBaseline {
    pub schedule: RiccatiSchedule,
    pub r: f64,
    pub clamp: Option<(f64, f64)>,
}

impl Controller for RiccatiBaseline {
    fn control(&self, t: f64, x: &[f64]) -> Result<Vec<f64>> {
        let mut u = -self.schedule.gain_at(t) * x[0] / self.r;
        if let Some((lo, hi)) = self.clamp {
            u = u.clamp(lo, hi);
        }
        Ok(vec![u])
    }
}

/// Ratio E[sup_s ‖x_s‖^p] / (1 + ‖x0‖^p) from a report; a desk-scale
/// proxy for the moment bound's existence, not an estimate of its
/// constant.
pub fn moment_check(report: &SimulationReport, x0: &[f64], p_order: u32) -> Result<f64> {
    let sup_mean = match p_order {
        2 => report.mean_sup_norm_p2,
        4 => report.mean_sup_norm_p4,
        _ => {
            return Err(Error::Config(format!(
                "moment order must be 2 or 4, got {}",
                p_order
            )))
        }
    };
    let norm = x0.iter().map(|v| v * v).sum::<f64>().sqrt();
    Ok(sup_mean / (1.0 + norm.powi(p_order as i32)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::scalar_linear;
    use approx::assert_relative_eq;

    #[test]
    fn deterministic_ode_limit() {
        // σ = 0, u = 0: dx = x dt, so x_T → x0 e^T as dt → 0.
        let spec = scalar_linear(1.0, 0.0, 1.0, Penalty::L0).unwrap();
        let ctrl = ConstantControl(vec![0.0]);
        let path = simulate(&spec, &ctrl, &[0.5], 0.0, 1e-4, 1).unwrap();
        let x_t = path.terminal_state()[0];
        assert!((x_t - 0.5 * 1.0f64.exp()).abs() < 1e-3);
    }

    #[test]
    fn identical_seeds_reproduce_paths_bitwise() {
        let spec = scalar_linear(1.0, 0.1, 1.0, Penalty::L0).unwrap();
        let ctrl = ConstantControl(vec![0.3]);
        let a = simulate(&spec, &ctrl, &[0.5], 0.0, 1e-2, 99).unwrap();
        let b = simulate(&spec, &ctrl, &[0.5], 0.0, 1e-2, 99).unwrap();
        for (x, y) in a.states.iter().zip(&b.states) {
            assert_eq!(x[0].to_bits(), y[0].to_bits());
        }
        let c = simulate(&spec, &ctrl, &[0.5], 0.0, 1e-2, 100).unwrap();
        assert_ne!(
            a.terminal_state()[0].to_bits(),
            c.terminal_state()[0].to_bits()
        );
    }

    #[test]
    fn scalar_law_switches_once_then_stays_off() {
        let spec = scalar_linear(1.0, 0.0, 1.0, Penalty::L0).unwrap();
        let ctrl = DeterministicScalarLaw {
            c: 1.0,
            horizon: 1.0,
        };
        let path = simulate(&spec, &ctrl, &[0.5], 0.0, 1e-3, 5).unwrap();
        let us: Vec<f64> = path.controls.iter().map(|u| u[0]).collect();
        assert_eq!(us[0], -1.0);
        let first_off = us
            .iter()
            .position(|&u| u == 0.0)
            .expect("never switched off");
        assert!(us[..first_off].iter().all(|&u| u == -1.0));
        assert!(us[first_off..].iter().all(|&u| u == 0.0));
        // ψ0 running cost never exceeds m (T - t0).
        let costs = path_costs(&spec, &path);
        assert!(costs.on_fraction <= 1.0 && costs.on_fraction > 0.0);
    }

    #[test]
    fn zero_controller_zero_cost() {
        let base = scalar_linear(1.0, 0.1, 1.0, Penalty::L0).unwrap();
        let spec = ProblemSpec::new(
            base.system().clone(),
            base.controls().clone(),
            1.0,
            std::sync::Arc::new(|_: &[f64]| 0.0),
            None,
            Penalty::L0,
        )
        .unwrap();
        let report =
            monte_carlo(&spec, &ConstantControl(vec![0.0]), &[0.5], 0.0, 0.01, 16, 7).unwrap();
        assert_eq!(report.mean_cost_l0, 0.0);
        assert_eq!(report.se_cost_l0, 0.0);
        assert_eq!(report.sparsity_fraction, 0.0);
    }

    #[test]
    fn weak_consistency_for_constant_control() {
        // E[x_T] = e^{cT} x0 + (e^{cT} - 1) u / c for the linear SDE.
        let (c, u) = (1.0, 0.3);
        let spec = scalar_linear(c, 0.1, 1.0, Penalty::L0).unwrap();
        let report = monte_carlo(
            &spec,
            &ConstantControl(vec![u]),
            &[0.5],
            0.0,
            1e-3,
            4000,
            2024,
        )
        .unwrap();
        let closed = c.exp() * 0.5 + (c.exp() - 1.0) * u / c;
        let se = (report.terminal_var[0] / report.n_paths as f64).sqrt();
        assert!(
            (report.terminal_mean[0] - closed).abs() <= 3.0 * se + 0.01,
            "mean {} vs closed form {} (se {})",
            report.terminal_mean[0],
            closed,
            se
        );
    }

    #[test]
    fn monte_carlo_is_deterministic() {
        let spec = scalar_linear(1.0, 0.1, 1.0, Penalty::L0).unwrap();
        let ctrl = ConstantControl(vec![0.0]);
        let a = monte_carlo(&spec, &ctrl, &[0.5], 0.0, 0.01, 64, 5).unwrap();
        let b = monte_carlo(&spec, &ctrl, &[0.5], 0.0, 0.01, 64, 5).unwrap();
        assert!(a.bitwise_eq(&b));
    }

    #[test]
    fn dt_must_divide_span() {
        let spec = scalar_linear(1.0, 0.1, 1.0, Penalty::L0).unwrap();
        let ctrl = ConstantControl(vec![0.0]);
        assert!(matches!(
            simulate(&spec, &ctrl, &[0.5], 0.0, 0.3, 1),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn riccati_trivial_cases() {
        let p = riccati_baseline(0.0, 0.1, 1.0, 1.0, 0.0).unwrap();
        assert_eq!(p.p0(), 0.0);
        let p = riccati_baseline(1.0, 0.1, 1e-6, 1.0, 1.0).unwrap();
        assert!((p.p0() - 1.0).abs() < 1e-5);
    }

    #[test]
    fn riccati_self_convergence() {
        let coarse = riccati_baseline_with_steps(1.0, 0.1, 1.0, 1.0, 1.0, 1000).unwrap();
        let fine = riccati_baseline_with_steps(1.0, 0.1, 1.0, 1.0, 1.0, 10000).unwrap();
        assert!((coarse.p0() - fine.p0()).abs() < 1e-8);
        // Closed form for c = r = q_T = 1: P(t) = 2e^{2(T-t)}/(1 + e^{2(T-t)}).
        let e2 = (2.0f64).exp();
        assert!((fine.p0() - 2.0 * e2 / (1.0 + e2)).abs() < 1e-10);
        assert!((fine.gain_at(0.5) - 2.0 * 1.0f64.exp() / (1.0 + 1.0f64.exp())).abs() < 1e-7);
    }

    #[test]
    fn moment_check_constant_path() {
        // f ≡ 0, σ ≡ 0: the path never moves, sup‖x‖ = ‖x0‖ exactly.
        let spec = scalar_linear(0.0, 0.0, 1.0, Penalty::L0).unwrap();
        let report =
            monte_carlo(&spec, &ConstantControl(vec![0.0]), &[0.5], 0.0, 0.1, 8, 3).unwrap();
        let r2 = moment_check(&report, &[0.5], 2).unwrap();
        assert_relative_eq!(r2, 0.25 / 1.25, epsilon = 1e-12);
        let r4 = moment_check(&report, &[0.5], 4).unwrap();
        assert_relative_eq!(r4, 0.0625 / 1.0625, epsilon = 1e-12);
        assert!(moment_check(&report, &[0.5], 3).is_err());
    }

    #[test]
    fn moment_ratio_scales_like_brownian_motion() {
        // x0 = 0, f0 ≡ 0 (c = 0), zero control: x is a scaled Brownian
        // motion, so E[sup ‖x‖²] roughly doubles when T doubles.
        let ctrl = ConstantControl(vec![0.0]);
        let spec1 = scalar_linear(0.0, 0.5, 1.0, Penalty::L0).unwrap();
        let spec2 = scalar_linear(0.0, 0.5, 2.0, Penalty::L0).unwrap();
        let r1 = monte_carlo(&spec1, &ctrl, &[0.0], 0.0, 1e-3, 3000, 11).unwrap();
        let r2 = monte_carlo(&spec2, &ctrl, &[0.0], 0.0, 1e-3, 3000, 11).unwrap();
        let m1 = moment_check(&r1, &[0.0], 2).unwrap();
        let m2 = moment_check(&r2, &[0.0], 2).unwrap();
        let ratio = m2 / m1;
        assert!(
            (1.4..=2.6).contains(&ratio),
            "doubling T changed the ratio by {}",
            ratio
        );
    }

    #[test]
    fn moment_ratio_stable_across_path_doubling() {
        let spec = scalar_linear(1.0, 0.1, 1.0, Penalty::L0).unwrap();
        let ctrl = ConstantControl(vec![0.0]);
        let a = monte_carlo(&spec, &ctrl, &[0.5], 0.0, 1e-2, 2000, 21).unwrap();
        let b = monte_carlo(&spec, &ctrl, &[0.5], 0.0, 1e-2, 4000, 22).unwrap();
        let ra = moment_check(&a, &[0.5], 2).unwrap();
        let rb = moment_check(&b, &[0.5], 2).unwrap();
        assert!((ra - rb).abs() / ra.max(rb) < 0.2);
    }
}
