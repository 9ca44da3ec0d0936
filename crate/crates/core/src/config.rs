//! Run configuration: `key=value` files merged under command-line overrides.
//!
//! ```text
//! # comments and blank lines are ignored
//! n = 128
//! nt = 100:100:400, 800
//! schedule = 100:0.001, 500:0.004
//! ```
//!
//! Integer lists accept `start:step:end` ranges. A schedule is a list of
//! `t_end:dt` segments.

use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Duration;

use crate::energy::PhysParams;
use crate::error::{FilmError, Result};
use crate::experiments::{
    paper_schedule, paper_snapshot_times, Bdf2ConvergenceConfig, CoarseningConfig, FirstOrderConvergenceConfig,
    Segment,
};
use crate::psd::{LineSearchMode, SolverConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Converge1,
    Converge2,
    Coarsen,
    Step,
    Selftest,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Converge1 => "converge1",
            Command::Converge2 => "converge2",
            Command::Coarsen => "coarsen",
            Command::Step => "step",
            Command::Selftest => "selftest",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SchemeKind {
    FirstOrder,
    Bdf2,
}

impl FromStr for SchemeKind {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "first" => Ok(Self::FirstOrder),
            "bdf2" => Ok(Self::Bdf2),
            _ => Err(format!("expected `first` or `bdf2`, got `{s}`")),
        }
    }
}

/// Every accepted key.
pub const KEYS: &[&str] = &[
    "dim",
    "n",
    "l",
    "eps",
    "a0",
    "a_stab",
    "tol",
    "max_iters",
    "line_search",
    "alpha_safety",
    "shift",
    "schedule",
    "t_final",
    "seed",
    "out",
    "snapshots",
    "nt",
    "ns",
    "tf",
    "dt_over_h",
    "dt",
    "steps",
    "scheme",
    "dense_until",
    "record_every",
    "budget",
];

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub command: Command,
    pub dim: usize,
    pub n: usize,
    pub l: f64,
    pub params: PhysParams,
    pub solver: SolverConfig,
    pub schedule: Vec<Segment>,
    pub t_final: Option<f64>,
    pub seed: u64,
    pub out: PathBuf,
    pub snapshot_times: Vec<f64>,
    pub nt: Vec<usize>,
    pub ns: Vec<usize>,
    pub tf: f64,
    pub dt_over_h: f64,
    pub dt: f64,
    pub steps: usize,
    pub scheme: SchemeKind,
    pub dense_until: f64,
    pub record_every: usize,
    pub budget: Option<Duration>,
}

impl RunConfig {
    /// Defaults for `command` before any file or flag is applied.
    pub fn defaults(command: Command) -> Self {
        let eps = match command {
            Command::Coarsen => 0.02,
            Command::Step => 0.1,
            _ => 0.5,
        };
        let (n, l) = match command {
            Command::Coarsen => (256, 12.8),
            Command::Step => (64, 1.0),
            _ => (256, 1.0),
        };
        let co = CoarseningConfig::default();
        Self {
            command,
            dim: 2,
            n,
            l,
            params: PhysParams::with_eps(eps),
            solver: SolverConfig::default(),
            schedule: paper_schedule(),
            t_final: None,
            seed: co.seed,
            out: PathBuf::from("out"),
            snapshot_times: paper_snapshot_times(),
            nt: FirstOrderConvergenceConfig::default().nt,
            ns: Bdf2ConvergenceConfig::default().ns,
            tf: 1.0,
            dt_over_h: 0.5,
            dt: 1e-3,
            steps: 1,
            scheme: SchemeKind::FirstOrder,
            dense_until: co.dense_until,
            record_every: co.record_every,
            budget: None,
        }
    }

    pub fn first_order_convergence(&self) -> FirstOrderConvergenceConfig {
        FirstOrderConvergenceConfig { n: self.n, nt: self.nt.clone(), eps: self.params.eps, tf: self.tf, solver: self.solver }
    }

    pub fn bdf2_convergence(&self) -> Bdf2ConvergenceConfig {
        Bdf2ConvergenceConfig {
            ns: self.ns.clone(),
            dt_over_h: self.dt_over_h,
            params: self.params,
            tf: self.tf,
            solver: self.solver,
        }
    }

    pub fn coarsening(&self) -> CoarseningConfig {
        CoarseningConfig {
            n: self.n,
            l: self.l,
            seed: self.seed,
            params: self.params,
            schedule: self.schedule.clone(),
            t_final: self.t_final,
            snapshot_times: self.snapshot_times.clone(),
            dense_until: self.dense_until,
            record_every: self.record_every,
            solver: self.solver,
            wall_budget: self.budget,
        }
    }

    fn validate(&self) -> Result<()> {
        let bad = |key: &str, msg: String| Err(FilmError::Config(format!("`{key}`: {msg}")));
        if self.command != Command::Step && self.dim != 2 {
            return bad("dim", format!("{} runs in two dimensions only", self.command.name()));
        }
        if !(1..=3).contains(&self.dim) {
            return bad("dim", format!("must be 1, 2 or 3, got {}", self.dim));
        }
        let named = |key: &'static str| move |e: FilmError| FilmError::Config(format!("`{key}`: {e}"));
        self.params.validate().map_err(named("eps"))?;
        self.solver.validate().map_err(named("tol"))?;
        if matches!(self.command, Command::Converge2 | Command::Coarsen)
            || (self.command == Command::Step && self.scheme == SchemeKind::Bdf2)
        {
            self.params.check_bdf2().map_err(named("a0"))?;
        }
        if self.command == Command::Coarsen {
            self.coarsening().validate().map_err(named("schedule"))?;
        }
        for (key, v) in [("tf", self.tf), ("dt", self.dt), ("dt_over_h", self.dt_over_h), ("l", self.l)] {
            if !(v.is_finite() && v > 0.0) {
                return bad(key, format!("must be positive, got {v}"));
            }
        }
        if self.nt.is_empty() || self.ns.is_empty() {
            return bad(if self.nt.is_empty() { "nt" } else { "ns" }, "empty list".into());
        }
        Ok(())
    }
}

/// Parses `key=value` lines. Keys are not checked here.
pub fn parse_kv(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (k, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| FilmError::Config(format!("line {}: expected `key=value`, got `{line}`", k + 1)))?;
        out.push((key.trim().to_string(), value.trim().to_string()));
    }
    Ok(out)
}

/// Builds the configuration for `command` from defaults, then the file at
/// `path` (if any), then `overrides`. Later entries win.
pub fn load_config(command: Command, path: Option<&Path>, overrides: &[(String, String)]) -> Result<RunConfig> {
    let mut entries = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| FilmError::Config(format!("cannot read config file {}: {e}", p.display())))?;
            parse_kv(&text)?
        }
        None => Vec::new(),
    };
    entries.extend(overrides.iter().cloned());
    let mut cfg = RunConfig::defaults(command);
    let mut a_stab = None;
    for (key, value) in &entries {
        apply(&mut cfg, &mut a_stab, key, value)?;
    }
    cfg.params.a_stab = a_stab.unwrap_or(4.0 / 9.0 * cfg.params.a0 * cfg.params.a0);
    cfg.validate()?;
    Ok(cfg)
}

fn scalar<T: FromStr>(key: &str, v: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    v.parse().map_err(|e| FilmError::Config(format!("`{key}`: cannot parse `{v}`: {e}")))
}

fn items(v: &str) -> impl Iterator<Item = &str> {
    v.split(',').map(str::trim).filter(|s| !s.is_empty())
}

/// Comma list of integers or `start:step:end` ranges.
pub fn parse_usize_list(key: &str, v: &str) -> Result<Vec<usize>> {
    let mut out = Vec::new();
    for item in items(v) {
        let parts: Vec<&str> = item.split(':').collect();
        match parts[..] {
            [x] => out.push(scalar(key, x)?),
            [a, s, b] => {
                let (a, s, b): (usize, usize, usize) = (scalar(key, a)?, scalar(key, s)?, scalar(key, b)?);
                if s == 0 || a > b {
                    return Err(FilmError::Config(format!("`{key}`: bad range `{item}`")));
                }
                out.extend((a..=b).step_by(s));
            }
            _ => return Err(FilmError::Config(format!("`{key}`: bad list item `{item}`"))),
        }
    }
    Ok(out)
}

fn parse_f64_list(key: &str, v: &str) -> Result<Vec<f64>> {
    items(v).map(|x| scalar(key, x)).collect()
}

fn parse_schedule(key: &str, v: &str) -> Result<Vec<Segment>> {
    items(v)
        .map(|item| {
            let (t_end, dt) = item
                .split_once(':')
                .ok_or_else(|| FilmError::Config(format!("`{key}`: expected `t_end:dt`, got `{item}`")))?;
            Ok(Segment { t_end: scalar(key, t_end.trim())?, dt: scalar(key, dt.trim())? })
        })
        .collect()
}

fn optional(v: &str) -> Option<&str> {
    if v.is_empty() || v == "none" {
        None
    } else {
        Some(v)
    }
}

fn apply(cfg: &mut RunConfig, a_stab: &mut Option<f64>, key: &str, v: &str) -> Result<()> {
    match key {
        "dim" => cfg.dim = scalar(key, v)?,
        "n" => cfg.n = scalar(key, v)?,
        "l" => cfg.l = scalar(key, v)?,
        "eps" => cfg.params.eps = scalar(key, v)?,
        "a0" => cfg.params.a0 = scalar(key, v)?,
        "a_stab" => *a_stab = optional(v).map(|x| scalar(key, x)).transpose()?,
        "tol" => cfg.solver.tol = scalar(key, v)?,
        "max_iters" => cfg.solver.max_iters = scalar(key, v)?,
        "line_search" => {
            cfg.solver.mode = LineSearchMode::from_str(v).map_err(|e| FilmError::Config(format!("`{key}`: {e}")))?
        }
        "alpha_safety" => cfg.solver.alpha_safety = scalar(key, v)?,
        "shift" => cfg.solver.shift = optional(v).map(|x| scalar(key, x)).transpose()?,
        "schedule" => cfg.schedule = parse_schedule(key, v)?,
        "t_final" => cfg.t_final = optional(v).map(|x| scalar(key, x)).transpose()?,
        "seed" => cfg.seed = scalar(key, v)?,
        "out" => cfg.out = PathBuf::from(v),
        "snapshots" => cfg.snapshot_times = parse_f64_list(key, v)?,
        "nt" => cfg.nt = parse_usize_list(key, v)?,
        "ns" => cfg.ns = parse_usize_list(key, v)?,
        "tf" => cfg.tf = scalar(key, v)?,
        "dt_over_h" => cfg.dt_over_h = scalar(key, v)?,
        "dt" => cfg.dt = scalar(key, v)?,
        "steps" => cfg.steps = scalar(key, v)?,
        "scheme" => cfg.scheme = scalar(key, v)?,
        "dense_until" => cfg.dense_until = scalar(key, v)?,
        "record_every" => cfg.record_every = scalar(key, v)?,
        "budget" => {
            cfg.budget = optional(v)
                .map(|x| {
                    let secs: f64 = scalar(key, x)?;
                    Duration::try_from_secs_f64(secs).map_err(|e| FilmError::Config(format!("`{key}`: {e}")))
                })
                .transpose()?
        }
        _ => return Err(FilmError::Config(format!("unknown key `{key}`"))),
    }
    Ok(())
}
