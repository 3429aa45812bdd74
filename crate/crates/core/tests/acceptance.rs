//! Acceptance battery: one pass/fail line per criterion, each pinned to
//! its tolerance and runtime budget. Run with
//! `cargo test --test acceptance -- --nocapture` to see every line.

use std::time::Instant;

use nalgebra::DMatrix;
use rayon::prelude::*;

use sparse_hjb::problems::{lfc, scalar_linear};
use sparse_hjb::rng::uniform;
use sparse_hjb::sim::RiccatiBaseline;
use sparse_hjb::*;

const SEED: u64 = 42;

struct Outcome {
    id: usize,
    name: &'static str,
    pass: bool,
    detail: String,
    seconds: f64,
    budget: f64,
}

fn run(id: usize, name: &'static str, budget: f64, f: impl FnOnce() -> (bool, String)) -> Outcome {
    let start = Instant::now();
    let (pass, detail) = f();
    Outcome {
        id,
        name,
        pass,
        detail,
        seconds: start.elapsed().as_secs_f64(),
        budget,
    }
}

fn draw(seed: u64, case: u64, slot: u64) -> f64 {
    -10.0 + 20.0 * uniform(seed, case, slot, 0)
}

/// Criterion 1: closed-form Hamiltonian equals the dense-grid oracle on
/// random arguments for the scalar and LFC systems.
fn hamiltonian_oracle() -> (bool, String) {
    let scalar = scalar_linear(1.0, 0.1, 1.0, Penalty::L0).unwrap();
    let lfc_spec = lfc(1.0 / 3.0, 2.0, 0.5, 0.4, 0.5).unwrap();
    let mut worst = 0.0f64;
    for (sys_id, spec) in [(0u64, &scalar), (1u64, &lfc_spec)] {
        let n = spec.system().state_dim();
        for case in 0..1000u64 {
            let key = sys_id * 1000 + case;
            let x: Vec<f64> = (0..n).map(|i| draw(3, key, i as u64)).collect();
            let p: Vec<f64> = (0..n).map(|i| draw(4, key, i as u64)).collect();
            let m = if n == 1 {
                DMatrix::from_element(1, 1, draw(5, key, 0))
            } else {
                let (a, b, c) = (draw(5, key, 0), draw(5, key, 1), draw(5, key, 2));
                DMatrix::from_row_slice(2, 2, &[a, c, c, b])
            };
            let args = HamiltonianArgs::new(x, p, m);
            let h = hamiltonian(spec, &args).unwrap();
            let hb = hamiltonian_bruteforce(spec, &args, 10001).unwrap();
            worst = worst.max((h - hb).abs());
        }
    }
    (
        worst <= 1e-9,
        format!("max |H - brute| = {:.2e} ≤ 1e-9", worst),
    )
}

/// Criterion 2: solving the stochastic scalar problem under the L0 and
/// L1 penalties yields the same field.
fn l0_l1_field_identity(field_l0: &ValueField) -> (bool, String) {
    let spec_l1 = scalar_linear(1.0, 0.1, 1.0, Penalty::L1).unwrap();
    let grid = SpatialGrid::new(vec![-2.0], vec![2.0], vec![401]).unwrap();
    let field_l1 = solve_backward(&spec_l1, &grid, &SolverConfig::default()).unwrap();
    let mut worst = 0.0f64;
    for (a, b) in field_l0.values().iter().zip(field_l1.values()) {
        worst = worst.max((a - b).abs());
    }
    (
        worst <= 1e-12,
        format!("max nodal |ΔV| = {:.2e} ≤ 1e-12", worst),
    )
}

/// Smallest positive root of the lower switching branch at time s.
fn positive_root(map: &FeedbackMap, s: f64) -> Option<f64> {
    let b = map.extract_boundary(s, 0).ok()?;
    b.points
        .iter()
        .filter(|p| matches!(p.branch, sparse_hjb::feedback::Branch::Lower) && p.x > 0.0)
        .map(|p| p.x)
        .fold(None, |acc: Option<f64>, x| {
            Some(acc.map_or(x, |a| a.min(x)))
        })
}

/// Criterion 3: deterministic switching root matches ½e^{-2(T-s)} within
/// two grid spacings at 20 evenly spaced times.
fn deterministic_boundary(det_spec: &ProblemSpec, det_field: &ValueField) -> (bool, String) {
    let map = FeedbackMap::new(det_field, det_spec).unwrap();
    let h = det_field.grid().spacing(0);
    let mut worst = 0.0f64;
    let mut missing = 0usize;
    for i in 0..20 {
        let s = i as f64 / 19.0;
        let analytic = 0.5 * (-2.0 * (1.0 - s)).exp();
        match positive_root(&map, s) {
            Some(root) => worst = worst.max((root - analytic).abs()),
            None => missing += 1,
        }
    }
    (
        missing == 0 && worst <= 2.0 * h,
        format!(
            "max |root - analytic| = {:.4} ≤ 2h = {:.4}, missing roots: {}",
            worst,
            2.0 * h,
            missing
        ),
    )
}

/// Criterion 4: analytic value and residual probes on the deterministic
/// field.
fn analytic_value_probe(
    det_spec: &ProblemSpec,
    det_field: &ValueField,
) -> ((bool, String), (f64, f64)) {
    let exact = 0.0025 * (2.0f64).exp();
    let v = det_field.value_at(0.0, &[0.05]).unwrap();
    let value_err = (v - exact).abs();
    let residual = det_field
        .hjb_residual(det_spec, 0.5, &[0.05])
        .unwrap()
        .abs();
    let pass = value_err <= 2e-3 && residual <= 5e-2;
    (
        (
            pass,
            format!(
                "|V(0,0.05) - 0.0025e²| = {:.3e} (≤ 2e-3), |residual(0.5,0.05)| = {:.3e} (≤ 5e-2)",
                value_err, residual
            ),
        ),
        (value_err, residual),
    )
}

/// Criterion 5: the stochastic off region contains the deterministic one
/// at every stored slice, within two grid spacings.
fn stochastic_boundary_ordering(
    stoch_spec: &ProblemSpec,
    stoch_field: &ValueField,
) -> (bool, String) {
    let map = FeedbackMap::new(stoch_field, stoch_spec).unwrap();
    let h = stoch_field.grid().spacing(0);
    let mut worst_margin = f64::INFINITY;
    let mut missing = 0usize;
    for k in 0..stoch_field.num_slices() {
        let s = stoch_field.times()[k];
        let det = 0.5 * (-2.0 * (1.0 - s)).exp();
        match positive_root(&map, s) {
            Some(root) => worst_margin = worst_margin.min(root - det),
            None => missing += 1,
        }
    }
    (
        missing == 0 && worst_margin >= -2.0 * h,
        format!(
            "min (stoch root - det root) = {:.4} ≥ -2h = {:.4} over {} slices, missing: {}",
            worst_margin,
            -2.0 * h,
            stoch_field.num_slices(),
            missing
        ),
    )
}

/// Criterion 6: 10⁴ closed-loop paths emit controls only in {-1, 0, 1}.
fn bang_off_bang_paths(stoch_spec: &ProblemSpec, stoch_field: &ValueField) -> (bool, String) {
    let map = FeedbackMap::new(stoch_field, stoch_spec).unwrap();
    let violations: usize = (0..10_000u64)
        .into_par_iter()
        .map(|pid| {
            let path =
                sparse_hjb::sim::simulate_span(stoch_spec, &map, &[0.5], 0.0, 1.0, 1e-3, SEED, pid)
                    .expect("simulation failed");
            path.controls
                .iter()
                .filter(|u| !(u[0] == -1.0 || u[0] == 0.0 || u[0] == 1.0))
                .count()
        })
        .sum();
    (
        violations == 0,
        format!(
            "{} non-bang controls across 10⁴ paths (10⁷ steps)",
            violations
        ),
    )
}

/// Criterion 7: Monte Carlo closed-loop cost matches V(0, 0.5).
fn value_consistency(
    stoch_spec: &ProblemSpec,
    stoch_field: &ValueField,
) -> ((bool, String), SimulationReport) {
    let map = FeedbackMap::new(stoch_field, stoch_spec).unwrap();
    let report = monte_carlo(stoch_spec, &map, &[0.5], 0.0, 1e-3, 10_000, SEED).unwrap();
    let v = stoch_field.value_at(0.0, &[0.5]).unwrap();
    let gap = (report.mean_cost_l0 - v).abs();
    let tol = 3.0 * report.se_cost_l0 + 0.05;
    (
        (
            gap <= tol,
            format!(
                "|mean J - V(0,0.5)| = {:.4} ≤ 3·SE + 0.05 = {:.4} (J = {:.4} ± {:.4}, V = {:.4})",
                gap, tol, report.mean_cost_l0, report.se_cost_l0, v
            ),
        ),
        report,
    )
}

/// Criterion 8: paired-seed sparsity contrast against the clamped
/// minimum-energy baseline.
fn sparsity_contrast(stoch_spec: &ProblemSpec, l0_report: &SimulationReport) -> (bool, String) {
    let baseline = RiccatiBaseline {
        schedule: riccati_baseline(1.0, 0.1, 1.0, 1.0, 1.0).unwrap(),
        r: 1.0,
        clamp: Some((-1.0, 1.0)),
    };
    let l2_report = monte_carlo(stoch_spec, &baseline, &[0.5], 0.0, 1e-3, 10_000, SEED).unwrap();
    let paired = l2_report.noise_checksum.to_bits() == l0_report.noise_checksum.to_bits();
    let pass = paired
        && l0_report.sparsity_fraction < l2_report.sparsity_fraction
        && l2_report.sparsity_fraction >= 0.99;
    (
        pass,
        format!(
            "sparsity L0 = {:.3} < L2 = {:.4} ≥ 0.99, paired noise checksums: {}",
            l0_report.sparsity_fraction, l2_report.sparsity_fraction, paired
        ),
    )
}

fn lfc_zero_mask(field: &ValueField, spec: &ProblemSpec, line: usize) -> Vec<bool> {
    let map = FeedbackMap::new(field, spec).unwrap();
    let grid = field.grid();
    (0..grid.points()[line])
        .map(|i| {
            let x = match line {
                0 => vec![grid.coord(0, i), 0.0],
                _ => vec![0.0, grid.coord(1, i)],
            };
            map.feedback(0.0, &x).unwrap()[0] == 0.0
        })
        .collect()
}

/// Criterion 9: the linear-regime zero-control region strictly contains
/// the rate-limited one along both probe lines at s = 0.
fn lfc_ordering() -> (bool, String) {
    let grid = SpatialGrid::new(vec![-3.0, -3.0], vec![3.0, 3.0], vec![161, 161]).unwrap();
    let cfg = SolverConfig::default();
    let spec_sat = lfc(1.0 / 3.0, 2.0, 0.5, 0.4, 0.5).unwrap();
    let field_sat = solve_backward(&spec_sat, &grid, &cfg).unwrap();
    let sat_masks = [
        lfc_zero_mask(&field_sat, &spec_sat, 0),
        lfc_zero_mask(&field_sat, &spec_sat, 1),
    ];
    drop(field_sat);
    let spec_lin = lfc(1.0 / 3.0, 2.0, 0.5, 1e6, 0.5).unwrap();
    let field_lin = solve_backward(&spec_lin, &grid, &cfg).unwrap();
    let lin_masks = [
        lfc_zero_mask(&field_lin, &spec_lin, 0),
        lfc_zero_mask(&field_lin, &spec_lin, 1),
    ];

    let mut pass = true;
    let mut details = Vec::new();
    for (name, sat, lin) in [
        ("x2=0", &sat_masks[0], &lin_masks[0]),
        ("x1=0", &sat_masks[1], &lin_masks[1]),
    ] {
        let mut with_margin = 0usize;
        let mut total = 0usize;
        for i in 0..sat.len() {
            if sat[i] {
                total += 1;
                let lo = i.saturating_sub(1);
                let hi = (i + 1).min(lin.len() - 1);
                if lin[lo] && lin[i] && lin[hi] {
                    with_margin += 1;
                }
            }
        }
        let frac = with_margin as f64 / total.max(1) as f64;
        let strict = lin.iter().filter(|z| **z).count() > total;
        pass &= frac >= 0.8 && strict && total > 0;
        details.push(format!(
            "{}: margin containment {}/{} ({:.0}%), strictly larger: {}",
            name,
            with_margin,
            total,
            100.0 * frac,
            strict
        ));
    }
    (pass, details.join("; "))
}

/// Criterion 10: halving h and Δt shrinks the criterion-4 errors by at
/// least 1.5x.
fn convergence(coarse: (f64, f64)) -> (bool, String) {
    let spec = scalar_linear(1.0, 0.0, 1.0, Penalty::L0).unwrap();
    let grid = SpatialGrid::new(vec![-2.0], vec![2.0], vec![801]).unwrap();
    let field = solve_backward(&spec, &grid, &SolverConfig::default()).unwrap();
    let exact = 0.0025 * (2.0f64).exp();
    let value_err = (field.value_at(0.0, &[0.05]).unwrap() - exact).abs();
    let residual = field.hjb_residual(&spec, 0.5, &[0.05]).unwrap().abs();
    let rv = coarse.0 / value_err;
    let rr = coarse.1 / residual;
    (
        rv >= 1.5 && rr >= 1.5,
        format!(
            "error ratios after halving: value {:.2}, residual {:.2} (≥ 1.5)",
            rv, rr
        ),
    )
}

/// Criterion 11: repeating the Monte Carlo run reproduces the report
/// bitwise.
fn determinism(
    stoch_spec: &ProblemSpec,
    stoch_field: &ValueField,
    first: &SimulationReport,
) -> (bool, String) {
    let map = FeedbackMap::new(stoch_field, stoch_spec).unwrap();
    let rerun = monte_carlo(stoch_spec, &map, &[0.5], 0.0, 1e-3, 10_000, SEED).unwrap();
    let same = rerun.bitwise_eq(first);
    (same, format!("rerun bitwise-equal: {}", same))
}

#[test]
fn acceptance_criteria() {
    let mut outcomes = Vec::new();

    outcomes.push(run(
        1,
        "hamiltonian-oracle-equivalence",
        10.0,
        hamiltonian_oracle,
    ));

    let stoch_spec = scalar_linear(1.0, 0.1, 1.0, Penalty::L0).unwrap();
    let grid401 = SpatialGrid::new(vec![-2.0], vec![2.0], vec![401]).unwrap();
    let stoch_field = solve_backward(&stoch_spec, &grid401, &SolverConfig::default()).unwrap();

    outcomes.push(run(2, "l0-l1-field-identity", 30.0, || {
        l0_l1_field_identity(&stoch_field)
    }));

    let det_spec = scalar_linear(1.0, 0.0, 1.0, Penalty::L0).unwrap();
    let det_field = solve_backward(&det_spec, &grid401, &SolverConfig::default()).unwrap();

    outcomes.push(run(3, "deterministic-boundary-match", 30.0, || {
        deterministic_boundary(&det_spec, &det_field)
    }));

    let mut coarse_errors = (0.0, 0.0);
    outcomes.push(run(4, "analytic-value-probe", 30.0, || {
        let (outcome, errors) = analytic_value_probe(&det_spec, &det_field);
        coarse_errors = errors;
        outcome
    }));

    outcomes.push(run(5, "stochastic-boundary-ordering", 60.0, || {
        stochastic_boundary_ordering(&stoch_spec, &stoch_field)
    }));

    outcomes.push(run(6, "bang-off-bang-paths", 60.0, || {
        bang_off_bang_paths(&stoch_spec, &stoch_field)
    }));

    let mut l0_report = None;
    outcomes.push(run(7, "monte-carlo-value-consistency", 120.0, || {
        let (outcome, report) = value_consistency(&stoch_spec, &stoch_field);
        l0_report = Some(report);
        outcome
    }));
    let l0_report = l0_report.unwrap();

    outcomes.push(run(8, "sparsity-contrast", 120.0, || {
        sparsity_contrast(&stoch_spec, &l0_report)
    }));

    outcomes.push(run(9, "lfc-zero-region-ordering", 600.0, lfc_ordering));

    outcomes.push(run(10, "grid-refinement-convergence", 120.0, || {
        convergence(coarse_errors)
    }));

    outcomes.push(run(11, "determinism", 120.0, || {
        determinism(&stoch_spec, &stoch_field, &l0_report)
    }));

    println!();
    let mut failures = Vec::new();
    for o in &outcomes {
        let overtime = o.seconds > o.budget;
        let status = if o.pass && !overtime { "PASS" } else { "FAIL" };
        println!(
            "[{:2}] {}  {:<32} {}  ({:.1} s / budget {:.0} s)",
            o.id, status, o.name, o.detail, o.seconds, o.budget
        );
        if !o.pass || overtime {
            failures.push(format!(
                "criterion {} ({}): {}{}",
                o.id,
                o.name,
                o.detail,
                if overtime {
                    format!(" [over budget: {:.1} s]", o.seconds)
                } else {
                    String::new()
                }
            ));
        }
    }
    println!();
    assert!(
        failures.is_empty(),
        "acceptance failures:\n{}",
        failures.join("\n")
    );
}
