//! Time steppers.
//!
//! * First order: `(φⁿ⁺¹ − φⁿ)/Δt = Δ_h μⁿ⁺¹` with
//!   `μⁿ⁺¹ = −(8/3)(φⁿ⁺¹)⁻⁹ + (8/3)(φⁿ)⁻³ − ε²Δ_h φⁿ⁺¹`.
//! * Second order (BDF2): `(3/2 φⁿ⁺¹ − 2φⁿ + 1/2 φⁿ⁻¹)/Δt = Δ_h μⁿ⁺¹` with
//!   the regularized splitting, Adams-Bashforth extrapolation of the
//!   quadratic part and Douglas-Dupont stabilization.
//!
//! An optional source `S` enters as `φ_t = Δμ + S`. Each step is solved on
//! the affine slice `mean φ = β₀` by PSD.

use crate::energy::{self, inv_powers, PhysParams};
use crate::error::{FilmError, Result};
use crate::field::CellField;
use crate::grid::Grid;
use crate::ops;
use crate::poisson::{PrecondCoeffs, SpectralSolver};
use crate::psd::{self, LinearPart, PsdTrace, SolverConfig, SplitProblem};

/// Mass drift tolerated on an accepted step, relative to `|β₀|`.
pub const MASS_TOL: f64 = 1e-10;

/// Simulation state between steps.
#[derive(Debug, Clone, PartialEq)]
pub struct StepState {
    /// `φⁿ`.
    pub phi_curr: CellField,
    /// `φⁿ⁻¹`, required by BDF2.
    pub phi_prev: Option<CellField>,
    pub t: f64,
    /// Conserved mean `β₀`.
    pub beta0: f64,
    pub step_index: usize,
}

impl StepState {
    /// One-level state for the first-order scheme.
    pub fn new(phi0: CellField, t: f64) -> Result<Self> {
        phi0.ensure_positive()?;
        let beta0 = phi0.mean();
        Ok(Self { phi_curr: phi0, phi_prev: None, t, beta0, step_index: 0 })
    }

    /// Checks positivity and mass of both levels.
    pub fn validate(&self) -> Result<()> {
        self.phi_curr.ensure_positive()?;
        check_mass(&self.phi_curr, self.beta0)?;
        if let Some(prev) = &self.phi_prev {
            prev.ensure_positive()?;
            check_mass(prev, self.beta0)?;
        }
        Ok(())
    }

    pub fn grid(&self) -> &Grid {
        self.phi_curr.grid()
    }
}

fn check_mass(phi: &CellField, beta0: f64) -> Result<()> {
    let mean = phi.mean();
    let tol = MASS_TOL * beta0.abs();
    if (mean - beta0).abs() <= tol {
        Ok(())
    } else {
        Err(FilmError::NonZeroMean { mean: mean - beta0, tol })
    }
}

/// Shifts `phi` by the rounding-level difference between its mean and
/// `beta0`, so that drift does not accumulate over long runs.
fn restore_mean(mut phi: CellField, beta0: f64) -> CellField {
    let shift = phi.mean() - beta0;
    if shift != 0.0 {
        phi.values_mut().iter_mut().for_each(|v| *v -= shift);
    }
    phi
}

/// BDF2 restart with `φ⁻¹ = φ⁰`, used when the time step changes.
pub fn restart_bdf2(phi0: CellField, t: f64) -> Result<StepState> {
    let mut s = StepState::new(phi0, t)?;
    s.phi_prev = Some(s.phi_curr.clone());
    Ok(s)
}

/// Diagnostics of one accepted step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepReport {
    pub psd_iters: usize,
    pub line_evals: usize,
    pub final_residual: f64,
    /// `F_h(φⁿ⁺¹)`.
    pub energy: f64,
    /// `F̃_h(φⁿ⁺¹, φⁿ)` for BDF2.
    pub modified_energy: Option<f64>,
    /// `Δt ‖∇_h μⁿ⁺¹‖²` for the first-order scheme.
    pub dissipation: Option<f64>,
    pub min_phi: f64,
    /// `(mean φⁿ⁺¹ − β₀) / |β₀|`.
    pub mass_drift: f64,
    pub trace: PsdTrace,
}

/// Residual form of one first-order step.
pub struct FirstOrderProblem<'a> {
    solver: &'a SpectralSolver,
    phi_n: &'a CellField,
    /// `f − ε²(−Δ_h)φⁿ`, with `f = −(8/3)(φⁿ)⁻³ + (−Δ_h)⁻¹ S`.
    offset: CellField,
    /// `(−Δ_h)⁻¹ S`, kept for the objective.
    source_lift: Option<CellField>,
    eps: f64,
    dt: f64,
}

impl<'a> FirstOrderProblem<'a> {
    pub fn new(
        solver: &'a SpectralSolver,
        phi_n: &'a CellField,
        eps: f64,
        dt: f64,
        forcing: Option<&CellField>,
    ) -> Result<Self> {
        phi_n.ensure_positive()?;
        let lap_n = ops::lap(phi_n);
        let source_lift = forcing.map(|s| solver.inv_neg_lap_projected(s));
        let (p, l) = (phi_n.values(), lap_n.values());
        let e2 = eps * eps;
        let offset = CellField::from_index_fn(*phi_n.grid(), |i| {
            let lift = source_lift.as_ref().map_or(0.0, |q| q[i]);
            -8.0 / 3.0 * inv_powers(p[i]).1 + lift + e2 * l[i]
        });
        Ok(Self { solver, phi_n, offset, source_lift, eps, dt })
    }

    pub fn preconditioner(&self, cfg: &SolverConfig) -> PrecondCoeffs {
        PrecondCoeffs { a0: 1.0 / self.dt, a1: cfg.shift.unwrap_or(1.0), a2: self.eps * self.eps }
    }
}

impl SplitProblem for FirstOrderProblem<'_> {
    fn residual(&self, phi: &CellField) -> Result<CellField> {
        phi.ensure_positive()?;
        let z = phi - self.phi_n;
        let (inv_dt, e2) = (1.0 / self.dt, self.eps * self.eps);
        let lin = self.solver.apply_symbol(&z, |lam| inv_dt / lam + e2 * lam);
        let (o, l, p) = (self.offset.values(), lin.values(), phi.values());
        Ok(CellField::from_index_fn(*phi.grid(), |i| o[i] - l[i] - self.pointwise(p[i])))
    }

    fn linear_part(&self) -> LinearPart {
        LinearPart { a0: 1.0 / self.dt, a2: self.eps * self.eps }
    }

    #[inline]
    fn pointwise(&self, x: f64) -> f64 {
        -8.0 / 3.0 * inv_powers(x).3
    }

    #[inline]
    fn pointwise_slope(&self, x: f64) -> f64 {
        24.0 * inv_powers(x).3 / x
    }

    #[inline]
    fn pointwise_pair(&self, x: f64) -> (f64, f64) {
        let inv = 1.0 / x;
        let p9 = inv_powers(x).3;
        (-8.0 / 3.0 * p9, 24.0 * p9 * inv)
    }

    /// `(1/2Δt)‖φ − φⁿ‖²₋₁ + (1/3)⟨φ⁻⁸,1⟩ + (ε²/2)‖∇_h φ‖² + (8/3)⟨φ,(φⁿ)⁻³⟩ − ⟨φ,(−Δ_h)⁻¹S⟩`.
    fn objective(&self, phi: &CellField) -> Result<f64> {
        phi.ensure_positive()?;
        let z = phi - self.phi_n;
        let hm1 = self.solver.hminus1_norm_projected(&z);
        let g = ops::grad_norm(phi);
        let (p, q) = (phi.values(), self.phi_n.values());
        let w = phi.grid().cell_volume();
        let local = crate::par::sum_indexed(p.len(), |i| {
            inv_powers(p[i]).2 / 3.0 + 8.0 / 3.0 * p[i] * inv_powers(q[i]).1
        }) * w;
        let src = self.source_lift.as_ref().map_or(0.0, |s| ops::inner_cell(phi, s));
        Ok(hm1 * hm1 / (2.0 * self.dt) + local + 0.5 * self.eps * self.eps * g * g - src)
    }
}

/// Residual form of one BDF2 step.
pub struct Bdf2Problem<'a> {
    solver: &'a SpectralSolver,
    phi_n: &'a CellField,
    /// Everything in `N[φ] − f` that does not depend on `φ`:
    /// `−(1/2Δt)(−Δ_h)⁻¹(φⁿ − φⁿ⁻¹) + ε²(−Δ_h)φⁿ − (8/3)A₀φ̌ − (−Δ_h)⁻¹S`.
    offset: CellField,
    params: PhysParams,
    dt: f64,
    pub(crate) phi_check: CellField,
    phi_prev: &'a CellField,
    source_lift: Option<CellField>,
}

impl<'a> Bdf2Problem<'a> {
    pub fn new(
        solver: &'a SpectralSolver,
        phi_n: &'a CellField,
        phi_prev: &'a CellField,
        params: PhysParams,
        dt: f64,
        forcing: Option<&CellField>,
    ) -> Result<Self> {
        phi_n.ensure_positive()?;
        let phi_check = phi_n.axpy(-1.0, phi_prev).axpy(1.0, phi_n);
        let hist = solver.inv_neg_lap_projected(&(phi_n - phi_prev));
        let lap_n = ops::lap(phi_n);
        let source_lift = forcing.map(|s| solver.inv_neg_lap_projected(s));
        let e2 = params.eps * params.eps;
        let k = 8.0 / 3.0 * params.a0;
        let (hv, lv, cv) = (hist.values(), lap_n.values(), phi_check.values());
        let offset = CellField::from_index_fn(*phi_n.grid(), |i| {
            let lift = source_lift.as_ref().map_or(0.0, |q| q[i]);
            -0.5 / dt * hv[i] - e2 * lv[i] - k * cv[i] - lift
        });
        Ok(Self { solver, phi_n, offset, params, dt, phi_check, phi_prev, source_lift })
    }

    pub fn preconditioner(&self, cfg: &SolverConfig) -> PrecondCoeffs {
        let lin = self.linear_part();
        PrecondCoeffs {
            a0: lin.a0,
            a1: cfg.shift.unwrap_or(8.0 / 3.0 * self.params.a0 + 1.0),
            a2: lin.a2,
        }
    }
}

impl SplitProblem for Bdf2Problem<'_> {
    fn residual(&self, phi: &CellField) -> Result<CellField> {
        phi.ensure_positive()?;
        let z = phi - self.phi_n;
        let lin_c = self.linear_part();
        // (1/Δt)(−Δ_h)⁻¹(3/2 z) + (ε² + AΔt)(−Δ_h) z
        let lin = self.solver.apply_symbol(&z, |lam| lin_c.a0 / lam + lin_c.a2 * lam);
        let (o, l, p) = (self.offset.values(), lin.values(), phi.values());
        Ok(CellField::from_index_fn(*phi.grid(), |i| -(l[i] + self.pointwise(p[i]) + o[i])))
    }

    fn linear_part(&self) -> LinearPart {
        LinearPart {
            a0: 1.5 / self.dt,
            a2: self.params.eps * self.params.eps + self.params.a_stab * self.dt,
        }
    }

    #[inline]
    fn pointwise(&self, x: f64) -> f64 {
        let (_, p3, _, p9) = inv_powers(x);
        -8.0 / 3.0 * (p9 - p3) + 8.0 / 3.0 * self.params.a0 * x
    }

    #[inline]
    fn pointwise_slope(&self, x: f64) -> f64 {
        let (_, p3, _, p9) = inv_powers(x);
        (24.0 * p9 - 8.0 * p3) / x + 8.0 / 3.0 * self.params.a0
    }

    #[inline]
    fn pointwise_pair(&self, x: f64) -> (f64, f64) {
        let (_, p3, _, p9) = inv_powers(x);
        let k = 8.0 / 3.0 * self.params.a0;
        (-8.0 / 3.0 * (p9 - p3) + k * x, (24.0 * p9 - 8.0 * p3) / x + k)
    }

    /// `(1/3Δt)‖3/2 φ − 2φⁿ + 1/2 φⁿ⁻¹‖²₋₁ + ⟨(1/3)φ⁻⁸ − (4/3)φ⁻² + (4/3)A₀φ², 1⟩
    ///  + ((ε² + AΔt)/2)‖∇_h φ‖² + ⟨φ, −AΔt(−Δ_h)φⁿ − (8/3)A₀φ̌ − (−Δ_h)⁻¹S⟩`.
    fn objective(&self, phi: &CellField) -> Result<f64> {
        phi.ensure_positive()?;
        let PhysParams { eps, a0, a_stab } = self.params;
        let (p, n, m) = (phi.values(), self.phi_n.values(), self.phi_prev.values());
        let bdf = CellField::from_index_fn(*phi.grid(), |i| 1.5 * p[i] - 2.0 * n[i] + 0.5 * m[i]);
        let hm1 = self.solver.hminus1_norm_projected(&bdf);
        let w = phi.grid().cell_volume();
        let local = crate::par::sum_indexed(p.len(), |i| {
            let (p2, _, p8, _) = inv_powers(p[i]);
            p8 / 3.0 - 4.0 / 3.0 * p2 + 4.0 / 3.0 * a0 * p[i] * p[i]
        }) * w;
        let g = ops::grad_norm(phi);
        let neg_lap_n = ops::lap(self.phi_n).scaled(-1.0);
        let mut lin = -a_stab * self.dt * ops::inner_cell(phi, &neg_lap_n)
            - 8.0 / 3.0 * a0 * ops::inner_cell(phi, &self.phi_check);
        if let Some(s) = &self.source_lift {
            lin -= ops::inner_cell(phi, s);
        }
        Ok(hm1 * hm1 / (3.0 * self.dt) + local + 0.5 * (eps * eps + a_stab * self.dt) * g * g + lin)
    }
}

/// Owns the spectral solver and the constants shared by every step.
#[derive(Debug, Clone)]
pub struct Stepper {
    solver: SpectralSolver,
    params: PhysParams,
    cfg: SolverConfig,
}

impl Stepper {
    pub fn new(grid: Grid, params: PhysParams, cfg: SolverConfig) -> Result<Self> {
        params.validate()?;
        cfg.validate()?;
        Ok(Self { solver: SpectralSolver::new(grid), params, cfg })
    }

    pub fn solver(&self) -> &SpectralSolver {
        &self.solver
    }

    pub fn params(&self) -> &PhysParams {
        &self.params
    }

    pub fn config(&self) -> &SolverConfig {
        &self.cfg
    }

    pub fn first_order_problem<'a>(
        &'a self,
        phi_n: &'a CellField,
        dt: f64,
        forcing: Option<&CellField>,
    ) -> Result<FirstOrderProblem<'a>> {
        FirstOrderProblem::new(&self.solver, phi_n, self.params.eps, dt, forcing)
    }

    pub fn bdf2_problem<'a>(
        &'a self,
        phi_n: &'a CellField,
        phi_prev: &'a CellField,
        dt: f64,
        forcing: Option<&CellField>,
    ) -> Result<Bdf2Problem<'a>> {
        Bdf2Problem::new(&self.solver, phi_n, phi_prev, self.params, dt, forcing)
    }

    /// `r = f − N[φ]` of the first-order step from `state`.
    pub fn residual_first_order(
        &self,
        phi: &CellField,
        state: &StepState,
        dt: f64,
        forcing: Option<&CellField>,
    ) -> Result<CellField> {
        self.first_order_problem(&state.phi_curr, dt, forcing)?.residual(phi)
    }

    /// `r = f − N[φ]` of the BDF2 step from `state`.
    pub fn residual_bdf2(
        &self,
        phi: &CellField,
        state: &StepState,
        dt: f64,
        forcing: Option<&CellField>,
    ) -> Result<CellField> {
        let prev = state.phi_prev.as_ref().ok_or(FilmError::MissingHistory)?;
        self.bdf2_problem(&state.phi_curr, prev, dt, forcing)?.residual(phi)
    }

    pub fn step_first_order(
        &self,
        state: &StepState,
        dt: f64,
        forcing: Option<&CellField>,
    ) -> Result<(StepState, StepReport)> {
        check_dt(dt)?;
        state.validate()?;
        let problem = self.first_order_problem(&state.phi_curr, dt, forcing)?;
        let precond = problem.preconditioner(&self.cfg);
        let (phi, trace) = solve(&problem, &self.solver, precond, &state.phi_curr, &self.cfg)?;
        let phi = restore_mean(phi, state.beta0);
        let mu = energy::mu_first_order(&phi, &state.phi_curr, self.params.eps)?;
        let gmu = ops::grad_norm(&mu);
        let report = self.report(&phi, state.beta0, trace, None, Some(dt * gmu * gmu))?;
        let next = StepState {
            phi_curr: phi,
            phi_prev: None,
            t: state.t + dt,
            beta0: state.beta0,
            step_index: state.step_index + 1,
        };
        Ok((next, report))
    }

    pub fn step_bdf2(
        &self,
        state: &StepState,
        dt: f64,
        forcing: Option<&CellField>,
    ) -> Result<(StepState, StepReport)> {
        check_dt(dt)?;
        self.params.check_bdf2()?;
        state.validate()?;
        let prev = state.phi_prev.as_ref().ok_or(FilmError::MissingHistory)?;
        let problem = self.bdf2_problem(&state.phi_curr, prev, dt, forcing)?;
        let precond = problem.preconditioner(&self.cfg);
        // the extrapolation is a second-order accurate start when it is admissible
        let guess = if problem.phi_check.min() > 0.0 { &problem.phi_check } else { &state.phi_curr };
        let (phi, trace) = solve(&problem, &self.solver, precond, guess, &self.cfg)?;
        let phi = restore_mean(phi, state.beta0);
        let modified =
            energy::modified_energy_bdf2(&self.solver, &phi, &state.phi_curr, &self.params, dt)?;
        let report = self.report(&phi, state.beta0, trace, Some(modified), None)?;
        let next = StepState {
            phi_prev: Some(state.phi_curr.clone()),
            phi_curr: phi,
            t: state.t + dt,
            beta0: state.beta0,
            step_index: state.step_index + 1,
        };
        Ok((next, report))
    }

    /// `φ⁻¹ = φ⁰ − Δt(Δ_h μ⁰ + S⁰)` with `μ⁰` the discrete chemical
    /// potential; the source term is included when present so the ghost level
    /// stays `O(Δt²)` accurate for forced problems.
    pub fn ghost_init(&self, phi0: &CellField, dt: f64, forcing: Option<&CellField>) -> Result<CellField> {
        check_dt(dt)?;
        let mu0 = energy::mu_exact(phi0, self.params.eps)?;
        let mut rate = ops::lap(&mu0);
        if let Some(s) = forcing {
            rate = &rate + &s.minus_mean();
        }
        let ghost = phi0.axpy(-dt, &rate);
        if let Err(FilmError::NonPositiveField { index, value }) = ghost.ensure_positive() {
            return Err(FilmError::PositivityLost(format!(
                "ghost level has {value:e} at index {index}; reduce dt or restart with phi(-1) = phi(0)"
            )));
        }
        Ok(ghost)
    }

    /// Two-level state at `t` with the ghost level from [`Self::ghost_init`].
    pub fn cold_start_bdf2(&self, phi0: CellField, t: f64, dt: f64, forcing: Option<&CellField>) -> Result<StepState> {
        let ghost = self.ghost_init(&phi0, dt, forcing)?;
        let mut s = StepState::new(phi0, t)?;
        s.phi_prev = Some(ghost);
        Ok(s)
    }

    fn report(
        &self,
        phi: &CellField,
        beta0: f64,
        trace: PsdTrace,
        modified_energy: Option<f64>,
        dissipation: Option<f64>,
    ) -> Result<StepReport> {
        let min_phi = phi.min();
        let drift = (phi.mean() - beta0) / beta0.abs();
        if drift.abs() > MASS_TOL {
            return Err(FilmError::NonZeroMean { mean: drift, tol: MASS_TOL });
        }
        Ok(StepReport {
            psd_iters: trace.iterations(),
            line_evals: trace.total_line_evals(),
            final_residual: trace.final_residual(),
            energy: energy::discrete_energy(phi, self.params.eps)?,
            modified_energy,
            dissipation,
            min_phi,
            mass_drift: drift,
            trace,
        })
    }
}

fn check_dt(dt: f64) -> Result<()> {
    if dt.is_finite() && dt > 0.0 {
        Ok(())
    } else {
        Err(FilmError::InvalidParameter(format!("time step must be positive, got {dt}")))
    }
}

fn solve<P: SplitProblem>(
    problem: &P,
    solver: &SpectralSolver,
    precond: PrecondCoeffs,
    start: &CellField,
    cfg: &SolverConfig,
) -> Result<(CellField, PsdTrace)> {
    match psd::psd_solve(problem, solver, precond, start, cfg) {
        Ok(out) => Ok(out),
        Err(FilmError::MaxItersExceeded { iters, residual, .. }) => {
            Err(FilmError::SolverDiverged { iters, residual })
        }
        Err(FilmError::BarrierCollapse { alpha, g }) => Err(FilmError::PositivityLost(format!(
            "line search collapsed at alpha={alpha:e}, g={g:e}"
        ))),
        Err(e) => Err(e),
    }
}
