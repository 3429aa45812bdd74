//! Subcommand implementations.

use std::fs;
use std::io::{BufReader, Write};
use std::path::Path;
use std::time::Instant;

use sparse_hjb::feedback::{write_boundary_csv, Branch};
use sparse_hjb::sim::{
    simulate_span, ConstantControl, Controller, DeterministicScalarLaw, RiccatiBaseline,
};
use sparse_hjb::*;

use crate::config::{ExperimentConfig, ProblemKind};
use crate::CommonArgs;

/// Writes a file atomically: temp file in the same directory, then rename.
fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let tmp = path.with_extension("csv.tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

fn load_field(path: &Path) -> Result<ValueField> {
    let file = fs::File::open(path).map_err(|e| {
        Error::Config(format!(
            "cannot open field file {} (run `solve` first?): {}",
            path.display(),
            e
        ))
    })?;
    ValueField::read_csv(BufReader::new(file))
}

pub fn cmd_solve(args: &CommonArgs) -> Result<()> {
    let cfg = args.load_config()?;
    let spec = cfg.problem()?;
    let grid = cfg.grid()?;
    let solver_cfg = cfg.solver_config();

    let plan = cfl_report(&spec, &grid, &solver_cfg)?;
    println!(
        "problem {} | grid {:?} points {:?} | max rate {:.3e} /s",
        cfg.kind,
        grid.lower()
            .iter()
            .zip(grid.upper())
            .map(|(a, b)| format!("[{}, {}]", a, b))
            .collect::<Vec<_>>()
            .join(" x "),
        grid.points(),
        plan.max_rate
    );
    println!(
        "time steps {} | dt {:.3e} (stability bound {:.3e}, safety {})",
        plan.time_steps, plan.dt, plan.dt_bound, cfg.cfl_safety
    );

    let start = Instant::now();
    let field = solve_backward(&spec, &grid, &solver_cfg)?;
    let elapsed = start.elapsed();

    let v0 = field.value_at(0.0, &cfg.x0)?;
    println!("V(0, {:?}) = {:.6}", cfg.x0, v0);
    println!("wall time {:.3} s", elapsed.as_secs_f64());

    let mut buf = Vec::new();
    field.write_csv(&mut buf)?;
    let path = args.field_path();
    atomic_write(&path, &buf)?;
    println!("field written to {}", path.display());
    Ok(())
}

pub fn cmd_boundary(args: &CommonArgs, times_flag: Option<&str>) -> Result<()> {
    let cfg = args.load_config()?;
    let spec = cfg.problem()?;
    let field = load_field(&args.field_path())?;
    if field.grid().dim() != spec.system().state_dim() {
        return Err(Error::Config(
            "field dimension does not match the configured problem".into(),
        ));
    }

    let times: Vec<f64> = match times_flag {
        Some(list) => list
            .split_whitespace()
            .map(|t| {
                t.parse()
                    .map_err(|_| Error::Config(format!("bad time '{}' in --times", t)))
            })
            .collect::<Result<_>>()?,
        None => cfg.extraction_times(),
    };

    let map = FeedbackMap::new(&field, &spec)?;
    let mut boundaries = Vec::new();
    for &s in &times {
        for j in 0..spec.system().control_dim() {
            boundaries.push(map.extract_boundary(s, j)?);
        }
    }

    let mut buf = Vec::new();
    if cfg.kind == ProblemKind::ScalarLinear {
        // Extra overlay column: the closed-form deterministic switching
        // curve, signed to match each branch.
        writeln!(buf, "s,channel,branch,segment,x1,analytic_x1")?;
        for b in &boundaries {
            for (idx, p) in b.points.iter().enumerate() {
                let threshold = 0.5 * (-2.0 * cfg.c * (cfg.horizon - b.s)).exp();
                let analytic = match p.branch {
                    Branch::Lower => threshold,
                    Branch::Upper => -threshold,
                };
                writeln!(
                    buf,
                    "{:.16e},{},{},{},{:.16e},{:.16e}",
                    b.s,
                    b.channel,
                    p.branch.label(),
                    idx,
                    p.x,
                    analytic
                )?;
            }
        }
    } else {
        write_boundary_csv(&mut buf, &boundaries, field.grid().dim())?;
    }
    let path = args.out.join("boundary.csv");
    atomic_write(&path, &buf)?;
    let rows = boundaries
        .iter()
        .map(|b| b.points.len() + 2 * b.segments.len())
        .sum::<usize>();
    println!(
        "boundary written to {} ({} times, {} rows)",
        path.display(),
        times.len(),
        rows
    );
    Ok(())
}

fn build_controller<'a>(
    cfg: &ExperimentConfig,
    selector: &str,
    field: Option<&'a ValueField>,
    spec: &'a ProblemSpec,
) -> Result<Box<dyn Controller + 'a>> {
    match selector {
        "l0" => {
            let field = field.ok_or_else(|| {
                Error::Config("the l0 controller needs a solved field (--field)".into())
            })?;
            Ok(Box::new(FeedbackMap::new(field, spec)?))
        }
        "l2" => {
            if cfg.kind != ProblemKind::ScalarLinear {
                return Err(Error::Config(
                    "the l2 baseline is defined for the scalar-linear problem".into(),
                ));
            }
            let schedule = riccati_baseline(cfg.c, cfg.sigma, cfg.horizon, 1.0, 1.0)?;
            Ok(Box::new(RiccatiBaseline {
                schedule,
                r: 1.0,
                clamp: cfg.l2_clamped.then_some((-1.0, 1.0)),
            }))
        }
        "det-law" => {
            if cfg.kind != ProblemKind::ScalarLinear {
                return Err(Error::Config(
                    "det-law applies to the scalar-linear problem only".into(),
                ));
            }
            Ok(Box::new(DeterministicScalarLaw {
                c: cfg.c,
                horizon: cfg.horizon,
            }))
        }
        "zero" => Ok(Box::new(ConstantControl(vec![
            0.0;
            spec.system().control_dim()
        ]))),
        other => Err(Error::Config(format!("unknown controller '{}'", other))),
    }
}

pub fn cmd_simulate(args: &CommonArgs, selector: &str) -> Result<()> {
    let cfg = args.load_config()?;
    let spec = cfg.problem()?;
    let field = if selector == "l0" {
        Some(load_field(&args.field_path())?)
    } else {
        None
    };
    let controller = build_controller(&cfg, selector, field.as_ref(), &spec)?;

    let start = Instant::now();
    let report = monte_carlo(
        &spec,
        controller.as_ref(),
        &cfg.x0,
        0.0,
        cfg.dt,
        cfg.n_paths,
        cfg.seed,
    )?;
    println!(
        "{} paths under '{}' in {:.2} s | mean costs: L0 {:.5} ± {:.5}, L1 {:.5}, L2 {:.5}",
        report.n_paths,
        selector,
        start.elapsed().as_secs_f64(),
        report.mean_cost_l0,
        report.se_cost_l0,
        report.mean_cost_l1,
        report.mean_cost_l2
    );
    println!(
        "sparsity {:.4} | exited {:.4} | noise checksum {:.6e}",
        report.sparsity_fraction, report.exited_fraction, report.noise_checksum
    );

    let mut buf = Vec::new();
    report.write_csv(&mut buf)?;
    let report_path = args.out.join(format!("report_{}.csv", selector));
    atomic_write(&report_path, &buf)?;

    // Display paths reuse the Monte Carlo path ids, so they are exactly
    // the first paths of the aggregate run.
    let shown = cfg.paths_out.min(cfg.n_paths);
    for pid in 0..shown {
        let path = simulate_span(
            &spec,
            controller.as_ref(),
            &cfg.x0,
            0.0,
            spec.horizon(),
            cfg.dt,
            cfg.seed,
            pid as u64,
        )?;
        let mut buf = Vec::new();
        path.write_csv(&mut buf)?;
        atomic_write(
            &args.out.join(format!("path_{}_{}.csv", selector, pid)),
            &buf,
        )?;
    }
    println!(
        "report written to {} (+{} path files)",
        report_path.display(),
        shown
    );
    Ok(())
}

struct Check {
    name: &'static str,
    pass: bool,
    detail: String,
}

fn smallest_positive_root(map: &FeedbackMap, s: f64) -> Option<f64> {
    map.extract_boundary(s, 0)
        .ok()?
        .points
        .iter()
        .filter(|p| p.branch == Branch::Lower && p.x > 0.0)
        .map(|p| p.x)
        .fold(None, |acc: Option<f64>, x| {
            Some(acc.map_or(x, |a| a.min(x)))
        })
}

fn scalar_deterministic_battery(
    cfg: &ExperimentConfig,
    spec: &ProblemSpec,
    field: &ValueField,
) -> Result<Vec<Check>> {
    let mut checks = Vec::new();
    let map = FeedbackMap::new(field, spec)?;
    let h = field.grid().spacing(0);
    let horizon = spec.horizon();

    let mut worst = 0.0f64;
    let mut missing = 0usize;
    for i in 0..20 {
        let s = horizon * i as f64 / 19.0;
        let analytic = 0.5 * (-2.0 * cfg.c * (horizon - s)).exp();
        match smallest_positive_root(&map, s) {
            Some(root) => worst = worst.max((root - analytic).abs()),
            None => missing += 1,
        }
    }
    checks.push(Check {
        name: "boundary-vs-analytic",
        pass: missing == 0 && worst <= 2.0 * h,
        detail: format!("max |root - analytic| = {:.4} (tol {:.4})", worst, 2.0 * h),
    });

    // Probe a point whose uncontrolled trajectory stays in the off
    // region; there V(t,x) = x² e^{2c(T-t)}. The tolerance scales with
    // the first-order truncation of the scheme.
    let x_probe = 0.7 * 0.5 * (-2.0 * cfg.c * horizon).exp();
    let exact = x_probe * x_probe * (2.0 * cfg.c * horizon).exp();
    let v = field.value_at(0.0, &[x_probe])?;
    let tol = 8.0 * h * x_probe + 1e-4;
    checks.push(Check {
        name: "value-probe",
        pass: (v - exact).abs() <= tol,
        detail: format!(
            "|V - analytic| = {:.3e} (tol {:.1e})",
            (v - exact).abs(),
            tol
        ),
    });

    let residual = field.hjb_residual(spec, 0.5 * horizon, &[x_probe])?.abs();
    checks.push(Check {
        name: "hjb-residual",
        pass: residual <= 5e-2,
        detail: format!("|residual| = {:.3e} (tol 5e-2)", residual),
    });
    Ok(checks)
}

/// The L0 and L1 value functions coincide on the unit box (both built-in
/// problems and all custom problems use it).
fn identity_check(cfg: &ExperimentConfig, spec: &ProblemSpec, field: &ValueField) -> Result<Check> {
    let twin = spec.with_penalty(match spec.penalty() {
        Penalty::L0 => Penalty::L1,
        _ => Penalty::L0,
    });
    let twin_field = solve_backward(&twin, field.grid(), &cfg.solver_config())?;
    let mut dv = 0.0f64;
    for (a, b) in field.values().iter().zip(twin_field.values()) {
        dv = dv.max((a - b).abs());
    }
    Ok(Check {
        name: "l0-l1-field-identity",
        pass: dv <= 1e-12,
        detail: format!("max nodal |ΔV| = {:.2e} (tol 1e-12)", dv),
    })
}

/// Closed-loop Monte Carlo cost must estimate the value at the start.
fn mc_value_check(cfg: &ExperimentConfig, spec: &ProblemSpec, field: &ValueField) -> Result<Check> {
    let map = FeedbackMap::new(field, spec)?;
    let report = monte_carlo(spec, &map, &cfg.x0, 0.0, cfg.dt, cfg.n_paths, cfg.seed)?;
    let v0 = field.value_at(0.0, &cfg.x0)?;
    let gap = (report.mean_cost_l0 - v0).abs();
    let tol = 3.0 * report.se_cost_l0 + 0.05;
    Ok(Check {
        name: "monte-carlo-vs-value",
        pass: gap <= tol && report.exited_fraction < 0.01,
        detail: format!(
            "|mean J - V(0,x0)| = {:.4} (tol {:.4}); J = {:.4} ± {:.4}, V = {:.4}, exited {:.4}",
            gap, tol, report.mean_cost_l0, report.se_cost_l0, v0, report.exited_fraction
        ),
    })
}

fn scalar_stochastic_battery(
    cfg: &ExperimentConfig,
    spec: &ProblemSpec,
    field: &ValueField,
) -> Result<Vec<Check>> {
    let mut checks = vec![identity_check(cfg, spec, field)?];
    let h = field.grid().spacing(0);
    let horizon = spec.horizon();

    let map = FeedbackMap::new(field, spec)?;
    let mut worst_margin = f64::INFINITY;
    let mut missing = 0usize;
    for k in 0..field.num_slices() {
        let s = field.times()[k];
        let det = 0.5 * (-2.0 * cfg.c * (horizon - s)).exp();
        match smallest_positive_root(&map, s) {
            Some(root) => worst_margin = worst_margin.min(root - det),
            None => missing += 1,
        }
    }
    checks.push(Check {
        name: "stochastic-off-region-contains-deterministic",
        pass: missing == 0 && worst_margin >= -2.0 * h,
        detail: format!(
            "min (stoch - det) root gap = {:.4} (tol {:.4})",
            worst_margin,
            -2.0 * h
        ),
    });

    checks.push(mc_value_check(cfg, spec, field)?);
    Ok(checks)
}

/// Battery for custom problems: the checks that are independent of any
/// closed-form reference law.
fn custom_battery(
    cfg: &ExperimentConfig,
    spec: &ProblemSpec,
    field: &ValueField,
) -> Result<Vec<Check>> {
    Ok(vec![
        identity_check(cfg, spec, field)?,
        mc_value_check(cfg, spec, field)?,
    ])
}

fn lfc_battery(
    cfg: &ExperimentConfig,
    spec: &ProblemSpec,
    field: &ValueField,
) -> Result<Vec<Check>> {
    // Zero-control region at s = 0 must grow when the rate limiter is
    // effectively removed (d large).
    let lin_cfg = {
        let mut c = cfg.clone();
        c.d = 1e6;
        c
    };
    let lin_spec = lin_cfg.problem()?;
    let lin_field = solve_backward(&lin_spec, field.grid(), &cfg.solver_config())?;

    let zero_mask = |f: &ValueField, sp: &ProblemSpec, line: usize| -> Result<Vec<bool>> {
        let map = FeedbackMap::new(f, sp)?;
        let grid = f.grid();
        (0..grid.points()[line])
            .map(|i| {
                let x = match line {
                    0 => vec![grid.coord(0, i), 0.0],
                    _ => vec![0.0, grid.coord(1, i)],
                };
                Ok(map.feedback(0.0, &x)?[0] == 0.0)
            })
            .collect()
    };

    let mut checks = Vec::new();
    for (name, line) in [
        ("zero-region-ordering-x2=0", 0usize),
        ("zero-region-ordering-x1=0", 1),
    ] {
        let sat = zero_mask(field, spec, line)?;
        let lin = zero_mask(&lin_field, &lin_spec, line)?;
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
        checks.push(Check {
            name,
            pass: total > 0 && frac >= 0.8 && strict,
            detail: format!(
                "margin containment {}/{} ({:.0}%), linear region strictly larger: {}",
                with_margin,
                total,
                100.0 * frac,
                strict
            ),
        });
    }
    Ok(checks)
}

pub fn cmd_compare(args: &CommonArgs) -> Result<bool> {
    let cfg = args.load_config()?;
    let spec = cfg.problem()?;
    let field = load_field(&args.field_path())?;
    if field.grid().dim() != spec.system().state_dim() {
        return Err(Error::Config(
            "field dimension does not match the configured problem".into(),
        ));
    }
    if (field.horizon() - spec.horizon()).abs() > 1e-9 * spec.horizon() {
        return Err(Error::Config(format!(
            "field horizon {} does not match configured T = {}",
            field.horizon(),
            spec.horizon()
        )));
    }

    let checks = match cfg.kind {
        ProblemKind::Lfc => lfc_battery(&cfg, &spec, &field)?,
        ProblemKind::Custom => custom_battery(&cfg, &spec, &field)?,
        ProblemKind::ScalarLinear if cfg.sigma == 0.0 => {
            scalar_deterministic_battery(&cfg, &spec, &field)?
        }
        ProblemKind::ScalarLinear => scalar_stochastic_battery(&cfg, &spec, &field)?,
    };

    let mut all_pass = true;
    for c in &checks {
        println!(
            "{}  {:<44} {}",
            if c.pass { "PASS" } else { "FAIL" },
            c.name,
            c.detail
        );
        all_pass &= c.pass;
    }
    Ok(all_pass)
}
