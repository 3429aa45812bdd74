//! Strict sectioned key-value experiment configuration.
//!
//! The format is flat `key = value` lines grouped under `[section]`
//! headers, with `#` comments. Unknown sections or keys are rejected
//! with the offending line number, as are duplicate or malformed
//! entries. Every field has a default, so an empty config describes the
//! reference scalar problem.

use std::collections::BTreeMap;
use std::fmt;

use sparse_hjb::problems::{lfc, scalar_linear};
use sparse_hjb::solver::TimeSteps;
use sparse_hjb::{
    BoundaryPolicy, BoxControlSet, ControlAffineSystem, Error, Penalty, ProblemSpec, Result,
    SolverConfig, SpatialGrid,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProblemKind {
    ScalarLinear,
    Lfc,
    Custom,
}

impl fmt::Display for ProblemKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ProblemKind::ScalarLinear => write!(f, "scalar-linear"),
            ProblemKind::Lfc => write!(f, "lfc"),
            ProblemKind::Custom => write!(f, "custom"),
        }
    }
}

/// Fully parsed experiment description.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub kind: ProblemKind,
    pub penalty: Penalty,
    // scalar-linear parameters
    pub c: f64,
    pub sigma: f64,
    // lfc parameters
    pub p: f64,
    pub k: f64,
    pub d: f64,
    pub horizon: f64,
    pub x0: Vec<f64>,
    // custom-coefficients block (row-major)
    pub custom_n: usize,
    pub custom_m: usize,
    pub custom_d: usize,
    pub custom_a: Vec<f64>,
    pub custom_b: Vec<f64>,
    pub custom_sigma: Vec<f64>,
    pub custom_gq: Vec<f64>,
    // grid
    pub grid_lower: Vec<f64>,
    pub grid_upper: Vec<f64>,
    pub grid_points: Vec<usize>,
    // solver
    pub time_steps: TimeSteps,
    pub cfl_safety: f64,
    pub boundary: BoundaryPolicy,
    // simulate
    pub dt: f64,
    pub n_paths: usize,
    pub seed: u64,
    pub paths_out: usize,
    pub l2_clamped: bool,
    // boundary extraction
    pub boundary_times: Option<Vec<f64>>,
    pub num_times: usize,
}

impl ExperimentConfig {
    fn defaults_for(kind: ProblemKind) -> Self {
        let (grid_lower, grid_upper, grid_points, x0) = match kind {
            ProblemKind::Lfc => (
                vec![-3.0, -3.0],
                vec![3.0, 3.0],
                vec![161, 161],
                vec![0.5, 0.0],
            ),
            _ => (vec![-2.0], vec![2.0], vec![401], vec![0.5]),
        };
        Self {
            kind,
            penalty: Penalty::L0,
            c: 1.0,
            sigma: if kind == ProblemKind::Lfc { 0.5 } else { 0.1 },
            p: 1.0 / 3.0,
            k: 2.0,
            d: 0.4,
            horizon: if kind == ProblemKind::Lfc { 0.5 } else { 1.0 },
            x0,
            custom_n: 1,
            custom_m: 1,
            custom_d: 1,
            custom_a: vec![1.0],
            custom_b: vec![1.0],
            custom_sigma: vec![0.1],
            custom_gq: vec![1.0],
            grid_lower,
            grid_upper,
            grid_points,
            time_steps: TimeSteps::Auto,
            cfl_safety: 0.5,
            boundary: BoundaryPolicy::OneSidedStencil,
            dt: 1e-3,
            n_paths: 10_000,
            seed: 42,
            paths_out: 5,
            l2_clamped: true,
            boundary_times: None,
            num_times: 21,
        }
    }
}

fn bad(line: usize, msg: impl fmt::Display) -> Error {
    Error::Config(format!("line {}: {}", line, msg))
}

/// Raw `section.key -> (value, line)` map with strict duplicate checks.
fn collect_entries(text: &str) -> Result<BTreeMap<String, (String, usize)>> {
    let mut section = String::new();
    let mut entries = BTreeMap::new();
    for (idx, raw) in text.lines().enumerate() {
        let lineno = idx + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if let Some(name) = line.strip_prefix('[') {
            let name = name
                .strip_suffix(']')
                .ok_or_else(|| bad(lineno, "unterminated section header"))?;
            section = name.trim().to_string();
            if section.is_empty() {
                return Err(bad(lineno, "empty section name"));
            }
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| bad(lineno, format!("expected 'key = value', got '{}'", line)))?;
        let key = key.trim();
        if key.is_empty() {
            return Err(bad(lineno, "empty key"));
        }
        if section.is_empty() {
            return Err(bad(lineno, format!("key '{}' outside any [section]", key)));
        }
        let full = format!("{}.{}", section, key);
        if entries
            .insert(full.clone(), (value.trim().to_string(), lineno))
            .is_some()
        {
            return Err(bad(lineno, format!("duplicate key '{}'", full)));
        }
    }
    Ok(entries)
}

struct Entries {
    map: BTreeMap<String, (String, usize)>,
}

impl Entries {
    fn take(&mut self, key: &str) -> Option<(String, usize)> {
        self.map.remove(key)
    }

    fn parse<T: std::str::FromStr>(&mut self, key: &str, into: &mut T) -> Result<()> {
        if let Some((v, line)) = self.take(key) {
            *into = v
                .parse()
                .map_err(|_| bad(line, format!("cannot parse '{}' for key '{}'", v, key)))?;
        }
        Ok(())
    }

    fn parse_f64_list(&mut self, key: &str, into: &mut Vec<f64>) -> Result<()> {
        if let Some((v, line)) = self.take(key) {
            let parsed: std::result::Result<Vec<f64>, _> =
                v.split_whitespace().map(|t| t.parse()).collect();
            let list = parsed.map_err(|_| {
                bad(
                    line,
                    format!("cannot parse float list '{}' for '{}'", v, key),
                )
            })?;
            if list.is_empty() {
                return Err(bad(line, format!("empty list for '{}'", key)));
            }
            *into = list;
        }
        Ok(())
    }

    fn parse_usize_list(&mut self, key: &str, into: &mut Vec<usize>) -> Result<()> {
        if let Some((v, line)) = self.take(key) {
            let parsed: std::result::Result<Vec<usize>, _> =
                v.split_whitespace().map(|t| t.parse()).collect();
            *into = parsed.map_err(|_| {
                bad(
                    line,
                    format!("cannot parse integer list '{}' for '{}'", v, key),
                )
            })?;
        }
        Ok(())
    }
}

/// Parses the file content plus `--override section.key=value` pairs.
pub fn parse_config(text: &str, overrides: &[String]) -> Result<ExperimentConfig> {
    let mut map = collect_entries(text)?;
    for (i, ov) in overrides.iter().enumerate() {
        let (key, value) = ov.split_once('=').ok_or_else(|| {
            Error::Config(format!(
                "override '{}' must look like section.key=value",
                ov
            ))
        })?;
        let key = key.trim();
        if !key.contains('.') {
            return Err(Error::Config(format!(
                "override key '{}' must be qualified as section.key",
                key
            )));
        }
        map.insert(key.to_string(), (value.trim().to_string(), 100_000 + i));
    }
    let mut e = Entries { map };

    let kind = match e.take("problem.kind") {
        None => ProblemKind::ScalarLinear,
        Some((v, line)) => match v.as_str() {
            "scalar-linear" => ProblemKind::ScalarLinear,
            "lfc" => ProblemKind::Lfc,
            "custom" => ProblemKind::Custom,
            other => {
                return Err(bad(
                    line,
                    format!(
                        "problem.kind must be scalar-linear, lfc, or custom; got '{}'",
                        other
                    ),
                ))
            }
        },
    };
    let mut cfg = ExperimentConfig::defaults_for(kind);

    if let Some((v, line)) = e.take("problem.penalty") {
        cfg.penalty = match v.as_str() {
            "l0" => Penalty::L0,
            "l1" => Penalty::L1,
            "l2" => Penalty::L2Energy,
            other => return Err(bad(line, format!("unknown penalty '{}'", other))),
        };
    }
    e.parse("problem.c", &mut cfg.c)?;
    e.parse("problem.sigma", &mut cfg.sigma)?;
    e.parse("problem.p", &mut cfg.p)?;
    e.parse("problem.k", &mut cfg.k)?;
    e.parse("problem.d", &mut cfg.d)?;
    e.parse("problem.T", &mut cfg.horizon)?;
    e.parse_f64_list("problem.x0", &mut cfg.x0)?;
    e.parse("problem.n", &mut cfg.custom_n)?;
    e.parse("problem.m", &mut cfg.custom_m)?;
    e.parse("problem.noise_dim", &mut cfg.custom_d)?;
    e.parse_f64_list("problem.a", &mut cfg.custom_a)?;
    e.parse_f64_list("problem.b", &mut cfg.custom_b)?;
    e.parse_f64_list("problem.sigma_matrix", &mut cfg.custom_sigma)?;
    e.parse_f64_list("problem.g_quad", &mut cfg.custom_gq)?;

    e.parse_f64_list("grid.lower", &mut cfg.grid_lower)?;
    e.parse_f64_list("grid.upper", &mut cfg.grid_upper)?;
    e.parse_usize_list("grid.points", &mut cfg.grid_points)?;

    if let Some((v, line)) = e.take("solver.time_steps") {
        cfg.time_steps = if v == "auto" {
            TimeSteps::Auto
        } else {
            TimeSteps::Fixed(v.parse().map_err(|_| {
                bad(
                    line,
                    format!("time_steps must be 'auto' or an integer, got '{}'", v),
                )
            })?)
        };
    }
    e.parse("solver.cfl_safety", &mut cfg.cfl_safety)?;
    if let Some((v, line)) = e.take("solver.boundary") {
        cfg.boundary = match v.as_str() {
            "one-sided" => BoundaryPolicy::OneSidedStencil,
            "frozen-terminal" => BoundaryPolicy::FrozenTerminal,
            other => return Err(bad(line, format!("unknown boundary policy '{}'", other))),
        };
    }

    e.parse("simulate.dt", &mut cfg.dt)?;
    e.parse("simulate.n_paths", &mut cfg.n_paths)?;
    e.parse("simulate.seed", &mut cfg.seed)?;
    e.parse("simulate.paths_out", &mut cfg.paths_out)?;
    e.parse("simulate.l2_clamped", &mut cfg.l2_clamped)?;

    let mut times = Vec::new();
    e.parse_f64_list("boundary.times", &mut times)?;
    if !times.is_empty() {
        cfg.boundary_times = Some(times);
    }
    e.parse("boundary.num_times", &mut cfg.num_times)?;

    if let Some((key, (_, line))) = e.map.iter().next() {
        return Err(bad(*line, format!("unknown key '{}'", key)));
    }
    Ok(cfg)
}

impl ExperimentConfig {
    /// Builds the problem this configuration describes.
    pub fn problem(&self) -> Result<ProblemSpec> {
        let spec = match self.kind {
            ProblemKind::ScalarLinear => {
                scalar_linear(self.c, self.sigma, self.horizon, self.penalty)?
            }
            ProblemKind::Lfc => {
                if self.penalty != Penalty::L0 {
                    return Err(Error::Config(
                        "the lfc problem is defined with the l0 penalty".into(),
                    ));
                }
                lfc(self.p, self.k, self.sigma, self.d, self.horizon)?
            }
            ProblemKind::Custom => self.custom_problem()?,
        };
        if self.x0.len() != spec.system().state_dim() {
            return Err(Error::Config(format!(
                "x0 has {} components, state dimension is {}",
                self.x0.len(),
                spec.system().state_dim()
            )));
        }
        Ok(spec)
    }

    /// Linear custom problem `dx = (A x + B u) dt + S dw` with a diagonal
    /// quadratic terminal cost.
    fn custom_problem(&self) -> Result<ProblemSpec> {
        let (n, m, d) = (self.custom_n, self.custom_m, self.custom_d);
        if self.custom_a.len() != n * n {
            return Err(Error::Config(format!(
                "problem.a needs {} entries (n²), got {}",
                n * n,
                self.custom_a.len()
            )));
        }
        if self.custom_b.len() != n * m {
            return Err(Error::Config(format!(
                "problem.b needs {} entries (n·m), got {}",
                n * m,
                self.custom_b.len()
            )));
        }
        if self.custom_sigma.len() != n * d {
            return Err(Error::Config(format!(
                "problem.sigma_matrix needs {} entries (n·noise_dim), got {}",
                n * d,
                self.custom_sigma.len()
            )));
        }
        if self.custom_gq.len() != n {
            return Err(Error::Config(format!(
                "problem.g_quad needs {} entries (n), got {}",
                n,
                self.custom_gq.len()
            )));
        }
        let a = self.custom_a.clone();
        let b = self.custom_b.clone();
        let s = self.custom_sigma.clone();
        let gq = self.custom_gq.clone();
        let f_cols = (0..m)
            .map(|j| {
                let b = b.clone();
                let col: sparse_hjb::model::FieldFn =
                    std::sync::Arc::new(move |_: &[f64]| (0..n).map(|i| b[i * m + j]).collect());
                col
            })
            .collect();
        let system = ControlAffineSystem::new(
            n,
            m,
            d,
            std::sync::Arc::new(move |x: &[f64]| {
                (0..n)
                    .map(|i| (0..n).map(|k| a[i * n + k] * x[k]).sum::<f64>())
                    .collect()
            }),
            f_cols,
            std::sync::Arc::new(move |_: &[f64]| {
                sparse_hjb::nalgebra::DMatrix::from_row_slice(n, d, &s)
            }),
        )?;
        ProblemSpec::new(
            system,
            BoxControlSet::unit(m),
            self.horizon,
            std::sync::Arc::new(move |x: &[f64]| {
                x.iter().zip(&gq).map(|(xi, q)| q * xi * xi).sum()
            }),
            None,
            self.penalty,
        )
    }

    pub fn grid(&self) -> Result<SpatialGrid> {
        SpatialGrid::new(
            self.grid_lower.clone(),
            self.grid_upper.clone(),
            self.grid_points.clone(),
        )
    }

    pub fn solver_config(&self) -> SolverConfig {
        SolverConfig {
            time_steps: self.time_steps,
            boundary_policy: self.boundary,
            cfl_safety: self.cfl_safety,
            ..Default::default()
        }
    }

    /// Boundary-extraction times: the explicit list, or `num_times`
    /// evenly spaced stamps across the horizon.
    pub fn extraction_times(&self) -> Vec<f64> {
        match &self.boundary_times {
            Some(ts) => ts.clone(),
            None => {
                let n = self.num_times.max(2);
                (0..n)
                    .map(|i| self.horizon * i as f64 / (n - 1) as f64)
                    .collect()
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_is_scalar_defaults() {
        let cfg = parse_config("", &[]).unwrap();
        assert_eq!(cfg.kind, ProblemKind::ScalarLinear);
        assert_eq!(cfg.grid_points, vec![401]);
        assert_eq!(cfg.seed, 42);
        assert!(cfg.problem().is_ok());
    }

    #[test]
    fn unknown_keys_are_rejected_with_line_numbers() {
        let err = parse_config("[problem]\nwhat = 1\n", &[]).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("problem.what"), "{}", msg);
        assert!(msg.contains("line 2"), "{}", msg);
    }

    #[test]
    fn duplicate_and_malformed_lines_are_rejected() {
        assert!(parse_config("[problem]\nc = 1\nc = 2\n", &[]).is_err());
        assert!(parse_config("[problem]\nc 1\n", &[]).is_err());
        assert!(parse_config("c = 1\n", &[]).is_err());
        assert!(parse_config("[problem]\nc = abc\n", &[]).is_err());
    }

    #[test]
    fn overrides_apply_after_file() {
        let cfg = parse_config("[problem]\nsigma = 0.1\n", &["problem.sigma=0".into()]).unwrap();
        assert_eq!(cfg.sigma, 0.0);
        assert!(parse_config("", &["sigma=0".into()]).is_err());
        assert!(parse_config("", &["problem.sigma".into()]).is_err());
    }

    #[test]
    fn lfc_defaults_match_reference_parameters() {
        let cfg = parse_config("[problem]\nkind = lfc\n", &[]).unwrap();
        assert_eq!(cfg.grid_points, vec![161, 161]);
        assert_eq!(cfg.horizon, 0.5);
        let spec = cfg.problem().unwrap();
        assert_eq!(spec.system().state_dim(), 2);
    }

    #[test]
    fn custom_problem_dimension_checks() {
        let text = "[problem]\nkind = custom\nn = 2\nm = 1\nnoise_dim = 1\n\
                    a = 0 1 0 0\nb = 0 1\nsigma_matrix = 0.1 0\ng_quad = 1 1\nx0 = 0.5 0\n\
                    [grid]\nlower = -2 -2\nupper = 2 2\npoints = 41 41\n";
        let cfg = parse_config(text, &[]).unwrap();
        let spec = cfg.problem().unwrap();
        assert_eq!(spec.system().state_dim(), 2);
        let f = spec.system().drift(&[1.0, 2.0], &[0.5]);
        assert_eq!(f, vec![2.0, 0.5]);

        // Wrong coefficient count is caught when the problem is built.
        let short = parse_config("[problem]\nkind = custom\nn = 2\nx0 = 0 0\n", &[]).unwrap();
        assert!(matches!(short.problem(), Err(Error::Config(_))));
    }
}
