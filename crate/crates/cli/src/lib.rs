//! Command-line driver. [`run`] parses arguments, runs one subcommand and
//! returns the process exit code.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use tfilm_core::config::{load_config, Command, RunConfig, SchemeKind};
use tfilm_core::experiments::{
    fit_power_law, random_initial_data, bdf2_start, run_convergence_bdf2, run_convergence_first_order,
    run_coarsening, ConvergenceTable, EnergyRecord,
};
use tfilm_core::schemes::Stepper;
use tfilm_core::{io, FilmError, Grid};

pub mod selftest;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;
pub const EXIT_SELFTEST: i32 = 3;

const REPO: &str = "# repo default, not from paper";

const AFTER_HELP: &str = "\
Every flag may also be given as `key=value` in the file passed to --config
(key names use underscores, e.g. `max_iters=200`). Flags override the file.
Integer lists accept `start:step:end` ranges, e.g. `--nt 100:100:1000`.

Exit codes: 0 success, 1 configuration error, 2 runtime or solver error,
3 selftest failure. On failure one line `error kind=<kind> message=\"...\"`
is written to stderr.";

#[derive(Parser, Debug)]
#[command(name = "tfilm", version, about = "Energy-stable thin-film gradient flow solvers", after_help = AFTER_HELP)]
struct Cli {
    #[command(subcommand)]
    command: Sub,
}

#[derive(Subcommand, Debug)]
enum Sub {
    /// Time refinement of the first-order scheme against a manufactured solution
    Converge1(Flags),
    /// Space-time refinement of the second-order scheme with dt = dt_over_h * h
    Converge2(Flags),
    /// Droplet coarsening from random data with the second-order scheme
    Coarsen(Flags),
    /// A few steps from random data, printing solver diagnostics
    Step(Flags),
    /// Operator, energy, solver and I/O invariant checks
    Selftest,
}

macro_rules! flags {
    ($( $field:ident => $key:literal : $help:expr ),* $(,)?) => {
        #[derive(Args, Debug, Default)]
        struct Flags {
            /// `key=value` file applied before the flags
            #[arg(long, value_name = "FILE")]
            config: Option<PathBuf>,
            $(
                #[arg(long, value_name = "VALUE", allow_hyphen_values = true, help = $help)]
                $field: Option<String>,
            )*
        }

        impl Flags {
            fn overrides(&self) -> Vec<(String, String)> {
                let mut out = Vec::new();
                $(
                    if let Some(v) = &self.$field {
                        out.push(($key.to_string(), v.clone()));
                    }
                )*
                out
            }
        }
    };
}

flags! {
    dim => "dim": format!("Spatial dimension; only `step` accepts 1 or 3 [default: 2] {REPO}"),
    n => "n": format!("Points per axis [converge1: 256; coarsen: 256 {REPO}; step: 64 {REPO}]"),
    l => "l": "Domain edge length [coarsen: 12.8; others: 1]".to_string(),
    eps => "eps": format!("Surface diffusion parameter [converge1/converge2: 0.5; coarsen: 0.02; step: 0.1 {REPO}]"),
    a0 => "a0": "Quadratic regularization A0 [default: (9/5)(2/15)^(2/3)]".to_string(),
    a_stab => "a_stab": "Stabilization A [default: (4/9) A0^2]".to_string(),
    tol => "tol": format!("Nonlinear solver tolerance in the preconditioner norm [default: 1e-9] {REPO}"),
    max_iters => "max_iters": format!("Solver iteration limit per step [default: 500] {REPO}"),
    line_search => "line_search": format!("Line search: exact, quadratic or unit [default: exact] {REPO}"),
    alpha_safety => "alpha_safety": format!("Fraction of the positivity barrier a step may cover [default: 0.99] {REPO}"),
    shift => "shift": format!("Identity coefficient of the preconditioner, or `none` for the scheme's own [default: none] {REPO}"),
    schedule => "schedule": "Time-step schedule as t_end:dt segments [default: 100:0.001,500:0.004,2000:0.008,6000:0.02]".to_string(),
    t_final => "t_final": format!("Stop coarsening at this time [default: end of schedule] {REPO}"),
    seed => "seed": format!("Seed for the random initial data [default: 7] {REPO}"),
    out => "out": format!("Output directory [default: out] {REPO}"),
    snapshots => "snapshots": "Snapshot times [default: 6,20,40,60,100,200,300,400,500,900,2000,6000]".to_string(),
    nt => "nt": "Step counts N_T for converge1 [default: 100:100:1000]".to_string(),
    ns => "ns": "Resolutions N for converge2 [default: 48:16:192]".to_string(),
    tf => "tf": "Final time of the convergence runs [default: 1]".to_string(),
    dt_over_h => "dt_over_h": "Ratio dt/h for converge2 [default: 0.5]".to_string(),
    dt => "dt": format!("Time step for `step` [default: 1e-3] {REPO}"),
    steps => "steps": format!("Number of steps for `step` [default: 1] {REPO}"),
    scheme => "scheme": format!("Scheme for `step`: first or bdf2 [default: first] {REPO}"),
    dense_until => "dense_until": format!("Record every coarsening step up to this time [default: 100] {REPO}"),
    record_every => "record_every": format!("Afterwards record every this many steps [default: 10] {REPO}"),
    budget => "budget": format!("Wall-clock limit for coarsening in seconds [default: none] {REPO}"),
}

/// Error kind and exit code for the machine-readable error line.
fn classify(err: &anyhow::Error) -> (&'static str, i32) {
    match err.downcast_ref::<FilmError>() {
        Some(FilmError::Config(_)) => ("config", EXIT_CONFIG),
        Some(FilmError::Io(_)) => ("io", EXIT_RUNTIME),
        Some(FilmError::Format(_)) => ("format", EXIT_RUNTIME),
        Some(FilmError::Unfinished { .. }) => ("unfinished", EXIT_RUNTIME),
        Some(FilmError::PositivityLost(_) | FilmError::NonPositiveField { .. }) => ("positivity", EXIT_RUNTIME),
        Some(e) if e.is_solver_failure() => ("solver", EXIT_RUNTIME),
        _ => ("runtime", EXIT_RUNTIME),
    }
}

/// Runs the CLI on `args` (including the program name).
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = write!(out, "{}", e.render());
                return EXIT_OK;
            }
            let _ = write!(err, "{}", e.render());
            let msg = e.kind().to_string();
            let _ = writeln!(err, "error kind=config message={msg:?}");
            return EXIT_CONFIG;
        }
    };
    let result = match &cli.command {
        Sub::Selftest => return selftest::run(out),
        Sub::Converge1(f) => configure(Command::Converge1, f).and_then(|c| converge1(&c, out)),
        Sub::Converge2(f) => configure(Command::Converge2, f).and_then(|c| converge2(&c, out)),
        Sub::Coarsen(f) => configure(Command::Coarsen, f).and_then(|c| coarsen(&c, out)),
        Sub::Step(f) => configure(Command::Step, f).and_then(|c| step(&c, out)),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let (kind, code) = classify(&e);
            let _ = writeln!(err, "error kind={kind} message={:?}", format!("{e:#}"));
            code
        }
    }
}

fn configure(command: Command, flags: &Flags) -> anyhow::Result<RunConfig> {
    Ok(load_config(command, flags.config.as_deref(), &flags.overrides())?)
}

fn out_dir(cfg: &RunConfig) -> anyhow::Result<&Path> {
    std::fs::create_dir_all(&cfg.out)
        .map_err(FilmError::from)
        .with_context(|| format!("creating output directory {}", cfg.out.display()))?;
    Ok(&cfg.out)
}

fn print_table(out: &mut dyn Write, table: &ConvergenceTable) -> anyhow::Result<()> {
    writeln!(out, "{:>8} {:>12} {:>24} {:>24} {:>10}", table.variable, "dt", "err_l2", "err_linf", "psd_iters")?;
    for r in &table.rows {
        writeln!(out, "{:>8} {:>12.6e} {:>24.16e} {:>24.16e} {:>10}", r.resolution, r.dt, r.err_l2, r.err_linf, r.psd_iters)?;
    }
    writeln!(out, "slope_l2={:.6} slope_linf={:.6}", table.slope_l2, table.slope_linf)?;
    Ok(())
}

fn converge1(cfg: &RunConfig, out: &mut dyn Write) -> anyhow::Result<()> {
    let dir = out_dir(cfg)?;
    let table = run_convergence_first_order(&cfg.first_order_convergence())?;
    io::write_convergence_table(&table, &dir.join("converge1.csv"))?;
    print_table(out, &table)
}

fn converge2(cfg: &RunConfig, out: &mut dyn Write) -> anyhow::Result<()> {
    let dir = out_dir(cfg)?;
    let table = run_convergence_bdf2(&cfg.bdf2_convergence())?;
    io::write_convergence_table(&table, &dir.join("converge2.csv"))?;
    print_table(out, &table)
}

/// File name of the snapshot requested at `t`.
pub fn snapshot_name(t: f64) -> String {
    format!("phi_t{t}.tfgf")
}

fn coarsen(cfg: &RunConfig, out: &mut dyn Write) -> anyhow::Result<()> {
    let dir = out_dir(cfg)?;
    let (run, failure) = match run_coarsening(&cfg.coarsening()) {
        Ok(r) => (r, None),
        Err(p) => (p.run, Some(p.error)),
    };
    io::write_energy_log(&run.records, &dir.join("energy.csv"))?;
    for s in &run.snapshots {
        io::write_field_snapshot(&s.field, s.t, &dir.join(snapshot_name(s.requested)))?;
    }
    writeln!(out, "steps={} t={} snapshots={}", run.steps, run.t, run.snapshots.len())?;
    writeln!(
        out,
        "max_energy_increase={:e} max_mass_drift={:e} min_phi={:.6} ghost_fallback={}",
        run.max_energy_increase, run.max_mass_drift, run.min_phi, run.ghost_fallback
    )?;
    if let Some(e) = failure {
        return Err(anyhow::Error::new(e).context(format!("coarsening stopped at t={} after {} steps", run.t, run.steps)));
    }
    let window = (1.0, run.t);
    if run.t > 2.0 {
        if let Ok((a, b)) = fit_power_law(&run.excess_energy_series(), window) {
            writeln!(out, "fit window=[{},{}] a_e={a:.6} b_e={b:.6}", window.0, window.1)?;
        }
    }
    Ok(())
}

fn step(cfg: &RunConfig, out: &mut dyn Write) -> anyhow::Result<()> {
    let dir = out_dir(cfg)?;
    let grid = Grid::new(cfg.dim, cfg.n, cfg.l)?;
    let stepper = Stepper::new(grid, cfg.params, cfg.solver)?;
    let phi0 = random_initial_data(grid, cfg.seed);
    let mut state = match cfg.scheme {
        SchemeKind::FirstOrder => tfilm_core::schemes::StepState::new(phi0.clone(), 0.0)?,
        SchemeKind::Bdf2 => bdf2_start(&stepper, phi0.clone(), 0.0, cfg.dt)?.0,
    };
    let e0 = tfilm_core::energy::discrete_energy(&phi0, cfg.params.eps)?;
    let mut records = vec![EnergyRecord {
        t: 0.0,
        energy: e0,
        modified_energy: None,
        mass: phi0.integral(),
        min_phi: phi0.min(),
        psd_iters: 0,
        residual: 0.0,
    }];
    writeln!(out, "{:>6} {:>10} {:>6} {:>7} {:>12} {:>24} {:>12} {:>11}", "step", "t", "iters", "evals", "residual", "energy", "min_phi", "mass_drift")?;
    for k in 1..=cfg.steps {
        let (next, rep) = match cfg.scheme {
            SchemeKind::FirstOrder => stepper.step_first_order(&state, cfg.dt, None)?,
            SchemeKind::Bdf2 => stepper.step_bdf2(&state, cfg.dt, None)?,
        };
        writeln!(
            out,
            "{k:>6} {:>10.4e} {:>6} {:>7} {:>12.4e} {:>24.16e} {:>12.6e} {:>11.3e}",
            next.t, rep.psd_iters, rep.line_evals, rep.final_residual, rep.energy, rep.min_phi, rep.mass_drift
        )?;
        records.push(EnergyRecord {
            t: next.t,
            energy: rep.energy,
            modified_energy: rep.modified_energy,
            mass: next.phi_curr.integral(),
            min_phi: rep.min_phi,
            psd_iters: rep.psd_iters,
            residual: rep.final_residual,
        });
        state = next;
    }
    io::write_energy_log(&records, &dir.join("step.csv"))?;
    io::write_field_snapshot(&state.phi_curr, state.t, &dir.join("step_final.tfgf"))?;
    Ok(())
}
