//! Manufactured-solution accuracy studies and the droplet coarsening run.

use std::f64::consts::PI;
use std::time::{Duration, Instant};

use crate::energy::{self, PhysParams};
use crate::error::{FilmError, Result};
use crate::field::CellField;
use crate::grid::Grid;
use crate::ops;
use crate::par;
use crate::psd::SolverConfig;
use crate::random;
use crate::schemes::{restart_bdf2, StepReport, StepState, Stepper};

/// `Φ(x, y, t) = 1 + a sin(2πx) cos(2πy) cos t` on the unit square, with
/// `a = 1/2π` by default.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ManufacturedSolution {
    pub amplitude: f64,
}

impl Default for ManufacturedSolution {
    fn default() -> Self {
        Self { amplitude: 1.0 / (2.0 * PI) }
    }
}

impl ManufacturedSolution {
    fn profile(x: [f64; 3]) -> f64 {
        (2.0 * PI * x[0]).sin() * (2.0 * PI * x[1]).cos()
    }

    /// `Φ(·, t)` sampled at the cell centers.
    pub fn sample(&self, grid: Grid, t: f64) -> CellField {
        let a = self.amplitude * t.cos();
        CellField::from_fn(grid, move |x| 1.0 + a * Self::profile(x))
    }

    /// `∂_t Φ(·, t)` sampled at the cell centers.
    pub fn time_derivative(&self, grid: Grid, t: f64) -> CellField {
        let a = -self.amplitude * t.sin();
        CellField::from_fn(grid, move |x| a * Self::profile(x))
    }

    /// `S = ∂_t Φ − Δ_h μ_h(Φ)`, so that the sampled profile solves
    /// `φ_t = Δ_h μ_h + S` exactly in space.
    pub fn forcing(&self, grid: Grid, t: f64, eps: f64) -> Result<CellField> {
        let mu = energy::mu_exact(&self.sample(grid, t), eps)?;
        let s = &self.time_derivative(grid, t) - &ops::lap(&mu);
        let mean = s.mean();
        if mean.abs() > 1e-12 {
            return Err(FilmError::NonZeroMean { mean, tol: 1e-12 });
        }
        Ok(s)
    }
}

/// Forcing of the default manufactured solution on a unit-square grid.
pub fn forcing_term(t: f64, grid: Grid, eps: f64) -> Result<CellField> {
    unit_square(&grid)?;
    ManufacturedSolution::default().forcing(grid, t, eps)
}

fn unit_square(grid: &Grid) -> Result<()> {
    if grid.dim() != 2 || grid.l() != 1.0 {
        return Err(FilmError::InvalidGrid(format!(
            "manufactured solution lives on the unit square, got dim={} L={}",
            grid.dim(),
            grid.l()
        )));
    }
    Ok(())
}

/// Least-squares line through `(x, y)`; returns `(slope, intercept)`.
pub fn fit_line(xs: &[f64], ys: &[f64]) -> Result<(f64, f64)> {
    if xs.len() != ys.len() {
        return Err(FilmError::LengthMismatch { expected: xs.len(), got: ys.len() });
    }
    if xs.len() < 2 {
        return Err(FilmError::InsufficientData { needed: 2, got: xs.len() });
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    if sxx == 0.0 {
        return Err(FilmError::InvalidParameter("all abscissae coincide".into()));
    }
    let slope = sxy / sxx;
    Ok((slope, my - slope * mx))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceRow {
    /// `N_T` for time refinement, `N` for space-time refinement.
    pub resolution: usize,
    pub n: usize,
    pub dt: f64,
    pub err_l2: f64,
    pub err_linf: f64,
    pub psd_iters: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceTable {
    /// Column name of `resolution`.
    pub variable: &'static str,
    pub rows: Vec<ConvergenceRow>,
    pub slope_l2: f64,
    pub intercept_l2: f64,
    pub slope_linf: f64,
    pub intercept_linf: f64,
}

impl ConvergenceTable {
    fn from_rows(variable: &'static str, rows: Vec<ConvergenceRow>) -> Result<Self> {
        if rows.len() < 3 {
            return Err(FilmError::InsufficientData { needed: 3, got: rows.len() });
        }
        let lx: Vec<f64> = rows.iter().map(|r| (r.resolution as f64).ln()).collect();
        let l2: Vec<f64> = rows.iter().map(|r| r.err_l2.ln()).collect();
        let li: Vec<f64> = rows.iter().map(|r| r.err_linf.ln()).collect();
        let (slope_l2, intercept_l2) = fit_line(&lx, &l2)?;
        let (slope_linf, intercept_linf) = fit_line(&lx, &li)?;
        Ok(Self { variable, rows, slope_l2, intercept_l2, slope_linf, intercept_linf })
    }

    /// `err[k] / err[k+1]` in the `ℓ²` column.
    pub fn ratios_l2(&self) -> Vec<f64> {
        self.rows.windows(2).map(|w| w[0].err_l2 / w[1].err_l2).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FirstOrderConvergenceConfig {
    pub n: usize,
    pub nt: Vec<usize>,
    pub eps: f64,
    pub tf: f64,
    pub solver: SolverConfig,
}

impl Default for FirstOrderConvergenceConfig {
    fn default() -> Self {
        Self { n: 256, nt: (1..=10).map(|k| 100 * k).collect(), eps: 0.5, tf: 1.0, solver: SolverConfig::default() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bdf2ConvergenceConfig {
    pub ns: Vec<usize>,
    /// `Δt ≈ dt_over_h · h`, rounded so that `tf / Δt` is an integer.
    pub dt_over_h: f64,
    pub params: PhysParams,
    pub tf: f64,
    pub solver: SolverConfig,
}

impl Default for Bdf2ConvergenceConfig {
    fn default() -> Self {
        Self {
            ns: (48..=192).step_by(16).collect(),
            dt_over_h: 0.5,
            params: PhysParams::with_eps(0.5),
            tf: 1.0,
            solver: SolverConfig::default(),
        }
    }
}

fn check_tf(tf: f64) -> Result<()> {
    if tf.is_finite() && tf > 0.0 {
        Ok(())
    } else {
        Err(FilmError::InvalidParameter(format!("final time must be positive, got {tf}")))
    }
}

fn final_error(mms: &ManufacturedSolution, phi: &CellField, tf: f64) -> (f64, f64) {
    let err = phi - &mms.sample(*phi.grid(), tf);
    (ops::norm_l2(&err), ops::norm_linf(&err))
}

/// Time refinement of the first-order scheme at fixed `N`.
pub fn run_convergence_first_order(cfg: &FirstOrderConvergenceConfig) -> Result<ConvergenceTable> {
    check_tf(cfg.tf)?;
    let grid = Grid::new(2, cfg.n, 1.0)?;
    let params = PhysParams::with_eps(cfg.eps);
    let mms = ManufacturedSolution::default();
    let rows = par::map_items(&cfg.nt, |&nt| -> Result<ConvergenceRow> {
        if nt == 0 {
            return Err(FilmError::InvalidParameter("N_T must be positive".into()));
        }
        let stepper = Stepper::new(grid, params, cfg.solver)?;
        let dt = cfg.tf / nt as f64;
        let mut state = StepState::new(mms.sample(grid, 0.0), 0.0)?;
        let mut iters = 0;
        for k in 1..=nt {
            let s = mms.forcing(grid, k as f64 * dt, cfg.eps)?;
            let (next, rep) = stepper.step_first_order(&state, dt, Some(&s))?;
            iters += rep.psd_iters;
            state = next;
        }
        let (err_l2, err_linf) = final_error(&mms, &state.phi_curr, cfg.tf);
        Ok(ConvergenceRow { resolution: nt, n: cfg.n, dt, err_l2, err_linf, psd_iters: iters })
    });
    ConvergenceTable::from_rows("N_T", rows.into_iter().collect::<Result<_>>()?)
}

/// Space-time refinement of the BDF2 scheme with `Δt ∝ h`, cold-started
/// from the ghost level.
pub fn run_convergence_bdf2(cfg: &Bdf2ConvergenceConfig) -> Result<ConvergenceTable> {
    check_tf(cfg.tf)?;
    cfg.params.validate()?;
    let mms = ManufacturedSolution::default();
    let eps = cfg.params.eps;
    let rows = par::map_items(&cfg.ns, |&n| -> Result<ConvergenceRow> {
        let grid = Grid::new(2, n, 1.0)?;
        let stepper = Stepper::new(grid, cfg.params, cfg.solver)?;
        let nt = (cfg.tf / (cfg.dt_over_h * grid.h())).round().max(1.0) as usize;
        let dt = cfg.tf / nt as f64;
        let phi0 = mms.sample(grid, 0.0);
        let s0 = mms.forcing(grid, 0.0, eps)?;
        let mut state = stepper.cold_start_bdf2(phi0, 0.0, dt, Some(&s0))?;
        let mut iters = 0;
        for k in 1..=nt {
            let s = mms.forcing(grid, k as f64 * dt, eps)?;
            let (next, rep) = stepper.step_bdf2(&state, dt, Some(&s))?;
            iters += rep.psd_iters;
            state = next;
        }
        let (err_l2, err_linf) = final_error(&mms, &state.phi_curr, cfg.tf);
        Ok(ConvergenceRow { resolution: n, n, dt, err_l2, err_linf, psd_iters: iters })
    });
    ConvergenceTable::from_rows("N", rows.into_iter().collect::<Result<_>>()?)
}

/// `φ⁰ = 2 + 0.1(2r − 1)` with `r` uniform on `[0, 1)`, drawn from ChaCha8
/// seeded by `seed` in flat-index order.
pub fn random_initial_data(grid: Grid, seed: u64) -> CellField {
    random::random_field(grid, seed, 1.9, 2.1)
}

/// Constant time step up to `t_end`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment {
    pub t_end: f64,
    pub dt: f64,
}

/// The four-stage schedule ending at `t = 6000`.
pub fn paper_schedule() -> Vec<Segment> {
    vec![
        Segment { t_end: 100.0, dt: 0.001 },
        Segment { t_end: 500.0, dt: 0.004 },
        Segment { t_end: 2000.0, dt: 0.008 },
        Segment { t_end: 6000.0, dt: 0.02 },
    ]
}

pub fn paper_snapshot_times() -> Vec<f64> {
    vec![6.0, 20.0, 40.0, 60.0, 100.0, 200.0, 300.0, 400.0, 500.0, 900.0, 2000.0, 6000.0]
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoarseningConfig {
    pub n: usize,
    pub l: f64,
    pub seed: u64,
    pub params: PhysParams,
    pub schedule: Vec<Segment>,
    /// Stop at this time even if the schedule goes further.
    pub t_final: Option<f64>,
    pub snapshot_times: Vec<f64>,
    /// Record every step while `t ≤ dense_until`, then every `record_every` steps.
    pub dense_until: f64,
    pub record_every: usize,
    pub solver: SolverConfig,
    pub wall_budget: Option<Duration>,
}

impl Default for CoarseningConfig {
    fn default() -> Self {
        Self {
            n: 256,
            l: 12.8,
            seed: 7,
            params: PhysParams::with_eps(0.02),
            schedule: paper_schedule(),
            t_final: None,
            snapshot_times: paper_snapshot_times(),
            dense_until: 100.0,
            record_every: 10,
            solver: SolverConfig::default(),
            wall_budget: None,
        }
    }
}

impl CoarseningConfig {
    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        self.params.check_bdf2()?;
        self.solver.validate()?;
        if self.schedule.is_empty() {
            return Err(FilmError::InvalidParameter("empty time-step schedule".into()));
        }
        let mut t0 = 0.0;
        let mut dt0 = 0.0;
        for s in &self.schedule {
            if !(s.dt > 0.0 && s.t_end > t0 && s.dt >= dt0) {
                return Err(FilmError::InvalidParameter(format!(
                    "schedule segments must be contiguous with increasing end times and non-decreasing dt; bad segment ending at {}",
                    s.t_end
                )));
            }
            t0 = s.t_end;
            dt0 = s.dt;
        }
        if self.record_every == 0 {
            return Err(FilmError::InvalidParameter("record_every must be positive".into()));
        }
        if let Some(tf) = self.t_final {
            check_tf(tf)?;
        }
        Ok(())
    }

    pub fn end_time(&self) -> f64 {
        let last = self.schedule.last().map_or(0.0, |s| s.t_end);
        self.t_final.map_or(last, |t| t.min(last))
    }
}

/// One row of the energy log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyRecord {
    pub t: f64,
    pub energy: f64,
    pub modified_energy: Option<f64>,
    /// `⟨φ, 1⟩`.
    pub mass: f64,
    pub min_phi: f64,
    pub psd_iters: usize,
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub requested: f64,
    pub t: f64,
    pub field: CellField,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoarseningRun {
    pub grid: Grid,
    pub records: Vec<EnergyRecord>,
    pub snapshots: Vec<Snapshot>,
    pub steps: usize,
    pub t: f64,
    /// Largest `F_h(φⁿ⁺¹) − F_h(φⁿ)` over all steps.
    pub max_energy_increase: f64,
    /// Largest relative mass drift from the initial mass.
    pub max_mass_drift: f64,
    pub min_phi: f64,
    /// True when the ghost level was not positive and `φ⁻¹ = φ⁰` was used.
    pub ghost_fallback: bool,
}

impl CoarseningRun {
    /// `(t, F_h + |Ω|)` for every record with `t > 0`. The energy density is
    /// bounded below by `−1`, so the shifted series is positive.
    pub fn excess_energy_series(&self) -> Vec<(f64, f64)> {
        let vol = self.grid.volume();
        self.records.iter().filter(|r| r.t > 0.0).map(|r| (r.t, r.energy + vol)).collect()
    }
}

/// A run that stopped early, with everything computed up to that point.
#[derive(Debug)]
pub struct PartialRun {
    pub run: CoarseningRun,
    pub error: FilmError,
}

impl std::fmt::Display for PartialRun {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} (stopped at t={} after {} steps)", self.error, self.run.t, self.run.steps)
    }
}

impl std::error::Error for PartialRun {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.error)
    }
}

fn record_of(t: f64, phi: &CellField, rep: Option<&StepReport>, energy: f64) -> EnergyRecord {
    EnergyRecord {
        t,
        energy,
        modified_energy: rep.and_then(|r| r.modified_energy),
        mass: phi.integral(),
        min_phi: phi.min(),
        psd_iters: rep.map_or(0, |r| r.psd_iters),
        residual: rep.map_or(0.0, |r| r.final_residual),
    }
}

/// Unforced two-level start: the ghost level when it is positive, otherwise
/// `φ⁻¹ = φ⁰`. The flag is true in the second case.
pub fn bdf2_start(stepper: &Stepper, phi0: CellField, t: f64, dt: f64) -> Result<(StepState, bool)> {
    match stepper.cold_start_bdf2(phi0.clone(), t, dt, None) {
        Ok(s) => Ok((s, false)),
        Err(FilmError::PositivityLost(_)) => Ok((restart_bdf2(phi0, t)?, true)),
        Err(e) => Err(e),
    }
}

/// BDF2 coarsening from random data over the time-step schedule. The first
/// segment is cold-started from the ghost level; each later segment restarts
/// with `φ⁻¹ = φ⁰`.
#[allow(clippy::result_large_err)]
pub fn run_coarsening(cfg: &CoarseningConfig) -> std::result::Result<CoarseningRun, PartialRun> {
    let grid = Grid::new(2, cfg.n, cfg.l).and_then(|g| cfg.validate().map(|_| g));
    let grid = match grid {
        Ok(g) => g,
        Err(error) => {
            let g = Grid::unit(2, 2).expect("fixed valid grid");
            let run = empty_run(g, &CellField::constant(g, 1.0), 0.0);
            return Err(PartialRun { run, error });
        }
    };
    let phi0 = random_initial_data(grid, cfg.seed);
    let e0 = energy::discrete_energy(&phi0, cfg.params.eps).expect("initial data is positive");
    let mut run = empty_run(grid, &phi0, e0);
    match coarsen_into(cfg, grid, phi0, &mut run) {
        Ok(()) => Ok(run),
        Err(error) => Err(PartialRun { run, error }),
    }
}

fn empty_run(grid: Grid, phi0: &CellField, e0: f64) -> CoarseningRun {
    CoarseningRun {
        grid,
        records: vec![record_of(0.0, phi0, None, e0)],
        snapshots: Vec::new(),
        steps: 0,
        t: 0.0,
        max_energy_increase: f64::NEG_INFINITY,
        max_mass_drift: 0.0,
        min_phi: phi0.min(),
        ghost_fallback: false,
    }
}

fn coarsen_into(cfg: &CoarseningConfig, grid: Grid, phi0: CellField, run: &mut CoarseningRun) -> Result<()> {
    let start = Instant::now();
    let stepper = Stepper::new(grid, cfg.params, cfg.solver)?;
    let t_end = cfg.end_time();
    let mass0 = phi0.integral();
    let mut snaps: Vec<f64> = cfg.snapshot_times.iter().copied().filter(|&t| t >= 0.0 && t <= t_end).collect();
    snaps.sort_by(f64::total_cmp);
    snaps.dedup();
    let mut next_snap = 0;

    let mut energy_prev = run.records[0].energy;
    let mut state: Option<StepState> = None;
    let mut phi = phi0;
    let mut seg_start = 0.0;
    for (si, seg) in cfg.schedule.iter().enumerate() {
        if seg_start >= t_end {
            break;
        }
        let stop = seg.t_end.min(t_end);
        let nsteps = ((stop - seg_start) / seg.dt).round() as usize;
        let mut st = match state.take() {
            None if si == 0 => {
                let (s, fallback) = bdf2_start(&stepper, phi.clone(), seg_start, seg.dt)?;
                run.ghost_fallback = fallback;
                s
            }
            _ => restart_bdf2(phi.clone(), seg_start)?,
        };
        let mut since_record = 0usize;
        for k in 1..=nsteps {
            let t_next = seg_start + k as f64 * seg.dt;
            // snapshot times that fall strictly before the next step
            while next_snap < snaps.len() && snaps[next_snap] < t_next - 1e-9 * seg.dt {
                run.snapshots.push(Snapshot { requested: snaps[next_snap], t: st.t, field: st.phi_curr.clone() });
                next_snap += 1;
            }
            let (mut next, rep) = stepper.step_bdf2(&st, seg.dt, None)?;
            next.t = t_next;
            run.steps += 1;
            run.t = t_next;
            run.max_energy_increase = run.max_energy_increase.max(rep.energy - energy_prev);
            energy_prev = rep.energy;
            run.min_phi = run.min_phi.min(rep.min_phi);
            let mass = next.phi_curr.integral();
            run.max_mass_drift = run.max_mass_drift.max(((mass - mass0) / mass0).abs());
            since_record += 1;
            let last = k == nsteps && stop >= t_end;
            if t_next <= cfg.dense_until + 1e-9 * seg.dt || since_record >= cfg.record_every || last {
                run.records.push(record_of(t_next, &next.phi_curr, Some(&rep), rep.energy));
                since_record = 0;
            }
            st = next;
            if let Some(budget) = cfg.wall_budget {
                if start.elapsed() > budget {
                    return Err(FilmError::Unfinished { t: t_next });
                }
            }
        }
        phi = st.phi_curr.clone();
        seg_start = stop;
        state = Some(st);
    }
    while next_snap < snaps.len() {
        run.snapshots.push(Snapshot { requested: snaps[next_snap], t: run.t, field: phi.clone() });
        next_snap += 1;
    }
    Ok(())
}

/// Least-squares fit of `E = a tᵇ` on `(ln t, ln E)` for the points with
/// `t` in `[window.0, window.1]`. Returns `(a, b)`.
pub fn fit_power_law(series: &[(f64, f64)], window: (f64, f64)) -> Result<(f64, f64)> {
    let pts: Vec<(f64, f64)> = series.iter().copied().filter(|&(t, _)| t >= window.0 && t <= window.1).collect();
    if pts.len() < 3 {
        return Err(FilmError::InsufficientData { needed: 3, got: pts.len() });
    }
    for &(t, e) in &pts {
        if !(t > 0.0) {
            return Err(FilmError::NonPositiveValue { t, value: t });
        }
        if !(e > 0.0) {
            return Err(FilmError::NonPositiveValue { t, value: e });
        }
    }
    let lx: Vec<f64> = pts.iter().map(|p| p.0.ln()).collect();
    let ly: Vec<f64> = pts.iter().map(|p| p.1.ln()).collect();
    let (b, c) = fit_line(&lx, &ly)?;
    Ok((c.exp(), b))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn power_law_recovers_exact_data() {
        let s: Vec<(f64, f64)> = (1..=20).map(|k| (k as f64, 3.0 * (k as f64).powf(-0.5))).collect();
        let (a, b) = fit_power_law(&s, (1.0, 20.0)).unwrap();
        assert!((a - 3.0).abs() < 1e-12 && (b + 0.5).abs() < 1e-12);
        let flat: Vec<(f64, f64)> = (1..=5).map(|k| (k as f64, 1.0)).collect();
        assert_eq!(fit_power_law(&flat, (0.0, 10.0)).unwrap().1, 0.0);
    }

    #[test]
    fn power_law_rejects_bad_windows() {
        let s = [(1.0, 1.0), (2.0, 0.5), (3.0, -1.0), (4.0, 0.1)];
        assert!(matches!(fit_power_law(&s, (1.0, 2.0)), Err(FilmError::InsufficientData { needed: 3, got: 2 })));
        assert!(matches!(fit_power_law(&s, (1.0, 4.0)), Err(FilmError::NonPositiveValue { .. })));
    }

    #[test]
    fn manufactured_profile_is_positive_with_unit_mean() {
        let g = Grid::new(2, 16, 1.0).unwrap();
        let m = ManufacturedSolution::default();
        for t in [0.0, 0.7, 3.0] {
            let p = m.sample(g, t);
            assert!(p.min() > 0.8);
            assert!((p.mean() - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn flat_profile_has_no_forcing() {
        let g = Grid::new(2, 8, 1.0).unwrap();
        let m = ManufacturedSolution { amplitude: 0.0 };
        assert!(ops::norm_linf(&m.forcing(g, 0.3, 0.5).unwrap()) == 0.0);
    }

    #[test]
    fn forcing_mean_vanishes() {
        let g = Grid::new(2, 32, 1.0).unwrap();
        for t in [0.0, 0.5, 1.0] {
            assert!(forcing_term(t, g, 0.5).unwrap().mean().abs() <= 1e-12);
        }
        assert!(forcing_term(0.0, Grid::new(2, 8, 2.0).unwrap(), 0.5).is_err());
    }

    #[test]
    fn forcing_matches_independent_assembly() {
        let n = 32;
        let g = Grid::new(2, n, 1.0).unwrap();
        let eps: f64 = 0.5;
        let t = 0.4;
        let h = 1.0 / n as f64;
        let a = 1.0 / (2.0 * PI);
        let phi = |i: usize, j: usize, t: f64| {
            let (x, y) = ((i as f64 + 0.5) * h, (j as f64 + 0.5) * h);
            1.0 + a * (2.0 * PI * x).sin() * (2.0 * PI * y).cos() * t.cos()
        };
        let w = |i: i64| i.rem_euclid(n as i64) as usize;
        let lap5 = |f: &dyn Fn(usize, usize) -> f64, i: i64, j: i64| {
            (f(w(i + 1), w(j)) + f(w(i - 1), w(j)) + f(w(i), w(j + 1)) + f(w(i), w(j - 1)) - 4.0 * f(w(i), w(j)))
                / (h * h)
        };
        let mu = |i: usize, j: usize| {
            let p = phi(i, j, t);
            -8.0 / 3.0 * (p.powi(-9) - p.powi(-3)) - eps * eps * lap5(&|a, b| phi(a, b, t), i as i64, j as i64)
        };
        let s = forcing_term(t, g, eps).unwrap();
        let dtau = 1e-5;
        let scale = ops::norm_linf(&s);
        for j in 0..n {
            for i in 0..n {
                let dphi = (phi(i, j, t + dtau) - phi(i, j, t - dtau)) / (2.0 * dtau);
                let expect = dphi - lap5(&mu, i as i64, j as i64);
                assert!((s[i + n * j] - expect).abs() < 1e-10 * scale, "{i},{j}: {} vs {expect}", s[i + n * j]);
            }
        }
    }

    #[test]
    fn line_fit_is_exact_on_lines() {
        let (m, c) = fit_line(&[0.0, 1.0, 2.0], &[1.0, 3.0, 5.0]).unwrap();
        assert_eq!((m, c), (2.0, 1.0));
        assert!(fit_line(&[1.0, 1.0], &[0.0, 1.0]).is_err());
    }

    #[test]
    fn random_data_range_and_mean() {
        let g = Grid::new(2, 128, 12.8).unwrap();
        let a = random_initial_data(g, 7);
        assert!(a.min() >= 1.9 && a.max() <= 2.1);
        assert_eq!(a, random_initial_data(g, 7));
        assert_ne!(a, random_initial_data(g, 8));
        let bound = 3.0 * (0.1 / 3f64.sqrt()) / 128.0;
        assert!((a.mean() - 2.0).abs() <= bound);
    }

    #[test]
    fn schedule_validation() {
        let mut c = CoarseningConfig { n: 8, ..Default::default() };
        assert!(c.validate().is_ok());
        c.schedule = vec![Segment { t_end: 1.0, dt: 0.1 }, Segment { t_end: 2.0, dt: 0.05 }];
        assert!(c.validate().is_err());
        c.schedule = vec![];
        assert!(c.validate().is_err());
    }

    #[test]
    fn short_coarsening_run_is_consistent() {
        let cfg = CoarseningConfig {
            n: 16,
            schedule: vec![Segment { t_end: 0.05, dt: 0.01 }, Segment { t_end: 0.13, dt: 0.02 }],
            snapshot_times: vec![0.0, 0.035, 0.05, 0.1, 1.0],
            dense_until: 0.05,
            record_every: 2,
            ..Default::default()
        };
        let run = run_coarsening(&cfg).unwrap();
        // 5 steps of 0.01, then 4 of 0.02 (the second segment is 0.08 long)
        assert_eq!(run.steps, 9);
        assert!((run.t - 0.13).abs() < 1e-12);
        let ts: Vec<f64> = run.records.iter().map(|r| r.t).collect();
        assert!(ts.windows(2).all(|w| w[1] > w[0]));
        assert_eq!(ts.len(), 1 + 5 + 2);
        let snap_t: Vec<(f64, f64)> = run.snapshots.iter().map(|s| (s.requested, s.t)).collect();
        assert_eq!(snap_t.len(), 4);
        assert_eq!(snap_t[0], (0.0, 0.0));
        assert!((snap_t[1].1 - 0.03).abs() < 1e-12);
        assert!((snap_t[2].1 - 0.05).abs() < 1e-12);
        assert!((snap_t[3].1 - 0.09).abs() < 1e-12);
        assert!(run.max_mass_drift < 1e-12);
        assert!(run.min_phi > 0.0);
    }

    #[test]
    fn budget_exhaustion_keeps_partial_results() {
        let cfg = CoarseningConfig {
            n: 8,
            schedule: vec![Segment { t_end: 1.0, dt: 0.01 }],
            wall_budget: Some(Duration::ZERO),
            ..Default::default()
        };
        let err = run_coarsening(&cfg).unwrap_err();
        assert!(matches!(err.error, FilmError::Unfinished { .. }));
        assert_eq!(err.run.steps, 1);
        assert_eq!(err.run.records.len(), 2);
    }
}
