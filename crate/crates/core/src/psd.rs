//! Preconditioned steepest descent for the per-step convex minimization.
//!
//! Each time step of either scheme is the minimization of a strictly convex
//! functional `J` over the mean-preserving slice. Its gradient has the form
//!
//! ```text
//! N[φ] = a0 (-Δ_h)^{-1} (φ - β₀) + a2 (-Δ_h) φ + p(φ)      (p acts pointwise)
//! ```
//!
//! and the residual is `r = f - N[φ]`. One iteration solves `L[d] = r - r̄`
//! with the constant-coefficient preconditioner `L`, then finds the exact
//! root of `g(α) = ⟨N[φ + αd] - f, d⟩` on the positivity-safe interval.
//! Because the linear part of `N` is known, `g` costs one pointwise sweep
//! per evaluation, with no transforms.

use crate::error::{FilmError, Result};
use crate::field::CellField;
use crate::ops;
use crate::par;
use crate::poisson::{PrecondCoeffs, SpectralSolver};

/// Step-size rule of the descent iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LineSearchMode {
    /// Root of `g` by safeguarded Newton iteration inside a bracket.
    Exact,
    /// Secant root of `g` from `g(0)` and one trial step (a quadratic model of `J`).
    Quadratic,
    /// Fixed `α = 1`, clipped to the positivity barrier.
    Unit,
}

impl std::str::FromStr for LineSearchMode {
    type Err = FilmError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exact" => Ok(Self::Exact),
            "quadratic" => Ok(Self::Quadratic),
            "unit" => Ok(Self::Unit),
            other => Err(FilmError::Config(format!("unknown line-search mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig {
    /// Stop when `‖r - r̄‖_{L⁻¹} ≤ tol`.
    pub tol: f64,
    pub max_iters: usize,
    /// Fraction of the distance to the positivity boundary a step may cover.
    pub alpha_safety: f64,
    pub line_tol: f64,
    /// Bracket expansion factor.
    pub growth: f64,
    pub mode: LineSearchMode,
    /// Evaluate `J` at every iterate (one extra transform per iteration).
    pub record_objective: bool,
    /// Overrides the identity coefficient `a1` of the scheme's preconditioner.
    pub shift: Option<f64>,
    /// The residual is updated incrementally; it is reassembled from scratch
    /// every this many iterations and always before convergence is accepted.
    pub refresh_every: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            tol: 1e-9,
            max_iters: 500,
            alpha_safety: 0.99,
            line_tol: 1e-12,
            growth: 2.0,
            mode: LineSearchMode::Exact,
            record_objective: false,
            shift: None,
            refresh_every: 25,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(FilmError::InvalidParameter(m.to_string()));
        if !(self.tol > 0.0) {
            return bad("solver tolerance must be positive");
        }
        if !(self.alpha_safety > 0.0 && self.alpha_safety < 1.0) {
            return bad("alpha_safety must lie in (0, 1)");
        }
        if !(self.growth > 1.0) {
            return bad("bracket growth must exceed 1");
        }
        if !(self.line_tol > 0.0) {
            return bad("line tolerance must be positive");
        }
        if self.refresh_every == 0 {
            return bad("refresh_every must be at least 1");
        }
        Ok(())
    }
}

/// Per-solve history.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PsdTrace {
    /// `‖r - r̄‖_{L⁻¹}` at every iterate, including the final one.
    pub residuals: Vec<f64>,
    /// `‖r - r̄‖_2` at every iterate.
    pub l2_residuals: Vec<f64>,
    /// Accepted step sizes.
    pub alphas: Vec<f64>,
    /// `g(0) = -⟨L d, d⟩` at every iteration.
    pub slopes: Vec<f64>,
    /// `g` evaluations spent in each line search.
    pub line_evals: Vec<usize>,
    /// `J` at every iterate when requested.
    pub objective: Vec<f64>,
}

impl PsdTrace {
    pub fn iterations(&self) -> usize {
        self.alphas.len()
    }

    pub fn final_residual(&self) -> f64 {
        self.residuals.last().copied().unwrap_or(f64::NAN)
    }

    pub fn total_line_evals(&self) -> usize {
        self.line_evals.iter().sum()
    }

    /// Geometric-mean contraction factor of the residual over the second half
    /// of the iterations; `None` with fewer than two iterations.
    pub fn tail_contraction(&self) -> Option<f64> {
        let n = self.residuals.len();
        if n < 3 {
            return None;
        }
        let mid = (n - 1) / 2;
        let steps = (n - 1 - mid) as f64;
        let (a, b) = (self.residuals[mid], self.residuals[n - 1]);
        if a <= 0.0 || b <= 0.0 {
            return None;
        }
        Some((b / a).powf(1.0 / steps))
    }
}

/// Coefficients of the linear part `a0 (-Δ_h)^{-1} + a2 (-Δ_h)` of `N`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearPart {
    pub a0: f64,
    pub a2: f64,
}

/// A per-step minimization problem in residual form.
pub trait SplitProblem: Sync {
    /// `r = f - N[φ]`, not mean-projected.
    fn residual(&self, phi: &CellField) -> Result<CellField>;
    fn linear_part(&self) -> LinearPart;
    /// Local part `p(x)` of `N`; must be nondecreasing on `x > 0`.
    fn pointwise(&self, x: f64) -> f64;
    /// `p'(x)`.
    fn pointwise_slope(&self, x: f64) -> f64;
    /// `(p(x), p'(x))`; override when the two share work.
    fn pointwise_pair(&self, x: f64) -> (f64, f64) {
        (self.pointwise(x), self.pointwise_slope(x))
    }
    /// The functional `J` whose gradient is `N - f` on the slice.
    fn objective(&self, phi: &CellField) -> Result<f64>;
}

/// Largest step keeping `φ + α d` positive, times `safety`; infinite when no
/// entry of `d` is negative.
pub fn barrier_alpha(phi: &CellField, d: &CellField, safety: f64) -> f64 {
    let (p, q) = (phi.values(), d.values());
    let (m, _) = par::min_indexed(p.len(), |i| if q[i] < 0.0 { -p[i] / q[i] } else { f64::INFINITY });
    if m.is_finite() {
        safety * m
    } else {
        f64::INFINITY
    }
}

/// Outcome of one line search.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineResult {
    pub alpha: f64,
    pub g: f64,
    pub evals: usize,
}

const MAX_LINE_EVALS: usize = 400;

/// Root of the increasing function `g` on `(0, barrier)`, given `g(0) = g0 < 0`.
pub fn line_search<G>(g: G, g0: f64, barrier: f64, cfg: &SolverConfig) -> Result<LineResult>
where
    G: Fn(f64) -> f64,
{
    let cap = if barrier.is_finite() { barrier * (1.0 - 1e-12) } else { f64::INFINITY };
    let evals = std::cell::Cell::new(0usize);
    let eval = |a: f64| -> Result<f64> {
        evals.set(evals.get() + 1);
        let v = g(a);
        if v.is_nan() {
            Err(FilmError::BarrierCollapse { alpha: a, g: v })
        } else {
            Ok(v)
        }
    };

    match cfg.mode {
        LineSearchMode::Unit => {
            let alpha = 1.0f64.min(cap);
            let v = eval(alpha)?;
            return Ok(LineResult { alpha, g: v, evals: evals.get() });
        }
        LineSearchMode::Quadratic => {
            let a1 = 1.0f64.min(barrier / 2.0);
            let g1 = eval(a1)?;
            let aq = if g1.is_finite() && g1 > g0 { a1 * (-g0) / (g1 - g0) } else { f64::NAN };
            let alpha = if aq.is_finite() && aq > 0.0 && aq < cap {
                aq
            } else if g1 > 0.0 {
                0.5 * a1
            } else {
                (a1 * cfg.growth).min(cap)
            };
            let v = eval(alpha)?;
            return Ok(LineResult { alpha, g: v, evals: evals.get() });
        }
        LineSearchMode::Exact => {}
    }

    let target = cfg.line_tol * g0.abs();
    let (mut lo, mut g_lo) = (0.0f64, g0);
    let mut alpha = 1.0f64.min(barrier / 2.0);
    let mut g_a = eval(alpha)?;
    // expand until g changes sign
    while g_a < 0.0 {
        if g_a.abs() <= target {
            return Ok(LineResult { alpha, g: g_a, evals: evals.get() });
        }
        lo = alpha;
        g_lo = g_a;
        if alpha >= cap {
            // the root lies beyond the safe interval; take the largest safe step
            return Ok(LineResult { alpha, g: g_a, evals: evals.get() });
        }
        alpha = (alpha * cfg.growth).min(cap);
        g_a = eval(alpha)?;
        if evals.get() > MAX_LINE_EVALS {
            return Err(FilmError::BarrierCollapse { alpha, g: g_a });
        }
    }
    let (mut hi, mut g_hi) = (alpha, g_a);
    if g_hi.abs() <= target {
        return Ok(LineResult { alpha: hi, g: g_hi, evals: evals.get() });
    }
    // Illinois regula falsi, with bisection whenever g_hi is not finite or
    // the secant point is too close to an end of the bracket.
    let mut side = 0i8;
    loop {
        let width = hi - lo;
        let mut a = if g_hi.is_finite() {
            lo - g_lo * width / (g_hi - g_lo)
        } else {
            f64::NAN
        };
        if !(a > lo + 1e-3 * width && a < hi - 1e-3 * width) {
            a = 0.5 * (lo + hi);
        }
        let ga = eval(a)?;
        if ga.abs() <= target {
            return Ok(LineResult { alpha: a, g: ga, evals: evals.get() });
        }
        if ga < 0.0 {
            lo = a;
            g_lo = ga;
            if side == -1 {
                g_hi *= 0.5;
            }
            side = -1;
        } else {
            hi = a;
            g_hi = ga;
            if side == 1 {
                g_lo *= 0.5;
            }
            side = 1;
        }
        if hi - lo <= cfg.line_tol * hi || hi - lo <= 4.0 * f64::EPSILON * hi {
            return Ok(LineResult { alpha: lo, g: ga.min(0.0), evals: evals.get() });
        }
        if evals.get() > MAX_LINE_EVALS {
            return Err(FilmError::BarrierCollapse { alpha: a, g: ga });
        }
    }
}

/// Exact line search for an increasing `g` whose slope is available.
/// `gd(α)` returns `(g(α), g'(α))`. Newton steps are taken inside the
/// current bracket and replaced by bisection (or bracket growth while no
/// upper end is known) whenever they leave it or fail to halve the previous
/// step. Stops when `|g| ≤ line_tol·|g0|`,
/// when the Newton correction is below `line_tol·α`, when the bracket
/// width is below `line_tol·hi`, or when `|g|` is below the rounding floor
/// `64 ε · scale`, where `scale` is the third output of `gd`: the sum of the
/// magnitudes of the terms that make up `g`.
pub fn line_search_newton<G>(gd: G, g0: f64, slope0: f64, barrier: f64, cfg: &SolverConfig) -> Result<LineResult>
where
    G: Fn(f64) -> (f64, f64, f64),
{
    let cap = if barrier.is_finite() { barrier * (1.0 - 1e-12) } else { f64::INFINITY };
    let target = cfg.line_tol * g0.abs();
    let (mut lo, mut hi) = (0.0f64, cap);
    let mut hi_known = false;
    let newton0 = -g0 / slope0;
    let mut alpha = if newton0.is_finite() && newton0 > 0.0 && newton0 < cap {
        newton0
    } else {
        1.0f64.min(barrier / 2.0)
    };
    let mut evals = 0usize;
    let mut prev_step = f64::INFINITY;
    loop {
        let (g, dg, scale) = gd(alpha);
        evals += 1;
        if g.is_nan() {
            return Err(FilmError::BarrierCollapse { alpha, g });
        }
        if g.abs() <= target.max(64.0 * f64::EPSILON * scale) {
            return Ok(LineResult { alpha, g, evals });
        }
        if g < 0.0 {
            lo = alpha;
            if alpha >= cap {
                // the root lies beyond the safe interval; take the largest safe step
                return Ok(LineResult { alpha, g, evals });
            }
        } else {
            hi = alpha;
            hi_known = true;
        }
        let step = -g / dg;
        let cand = alpha + step;
        if g < 0.0 && step.is_finite() && step.abs() <= cfg.line_tol * alpha {
            return Ok(LineResult { alpha, g, evals });
        }
        if hi_known && hi - lo <= cfg.line_tol * hi {
            return Ok(LineResult { alpha: lo, g: g.min(0.0), evals });
        }
        let upper = if hi_known { hi } else { cap };
        // Newton must stay inside the bracket and at least halve the previous step
        let newton_ok = cand.is_finite() && cand > lo && cand < upper && step.abs() <= 0.5 * prev_step;
        let next = if newton_ok {
            cand
        } else if hi_known {
            0.5 * (lo + hi)
        } else {
            (alpha * cfg.growth).min(cap)
        };
        prev_step = (next - alpha).abs();
        alpha = next;
        if evals > MAX_LINE_EVALS {
            return Err(FilmError::BarrierCollapse { alpha, g });
        }
    }
}

/// Runs the PSD iteration from `phi_init`. The result has the mean of
/// `phi_init` and a projected residual below `cfg.tol` in the `L⁻¹` norm.
pub fn psd_solve<P: SplitProblem + ?Sized>(
    problem: &P,
    solver: &SpectralSolver,
    precond: PrecondCoeffs,
    phi_init: &CellField,
    cfg: &SolverConfig,
) -> Result<(CellField, PsdTrace)> {
    cfg.validate()?;
    precond.validate()?;
    phi_init.ensure_positive()?;
    let grid = *phi_init.grid();
    let w = grid.cell_volume();
    let lin = problem.linear_part();
    let fused = lin.a0 == precond.a0 && lin.a2 == precond.a2;

    let mut trace = PsdTrace::default();
    let mut phi = phi_init.clone();
    let mut r = problem.residual(&phi)?;
    let mut fresh = true;
    let mut since_refresh = 0usize;
    if cfg.record_objective {
        trace.objective.push(problem.objective(&phi)?);
    }

    loop {
        let rp = r.minus_mean();
        let d = solver.solve_preconditioner_projected(&rp, precond);
        let dual = ops::inner_cell(&d, &rp).max(0.0);
        let norm = dual.sqrt();
        if norm <= cfg.tol {
            if !fresh {
                r = problem.residual(&phi)?;
                fresh = true;
                since_refresh = 0;
                continue;
            }
            trace.residuals.push(norm);
            trace.l2_residuals.push(ops::norm_l2(&rp));
            return Ok((phi, trace));
        }
        trace.residuals.push(norm);
        trace.l2_residuals.push(ops::norm_l2(&rp));
        if trace.iterations() >= cfg.max_iters {
            return Err(FilmError::MaxItersExceeded {
                iters: trace.iterations(),
                residual: norm,
                best: Box::new(phi),
            });
        }

        // image of d under the linear part of N
        let ld = if fused {
            rp.axpy(-precond.a1, &d)
        } else {
            solver.apply_symbol(&d, |lam| lin.a0 / lam + lin.a2 * lam)
        };
        let quad = ops::inner_cell(&ld, &d);
        let g0 = -dual;
        let barrier = barrier_alpha(&phi, &d, cfg.alpha_safety);
        let (pv, dv) = (phi.values(), d.values());
        let base: Vec<f64> = pv.iter().map(|&x| problem.pointwise(x)).collect();
        let ls = if cfg.mode == LineSearchMode::Exact {
            let slope0 = quad + w * par::sum_indexed(pv.len(), |i| problem.pointwise_slope(pv[i]) * dv[i] * dv[i]);
            let gd = |alpha: f64| {
                let (nl, dnl, mag) = par::sum3_indexed(pv.len(), |i| {
                    let x = pv[i] + alpha * dv[i];
                    let di = dv[i];
                    let ((px, sx), bx) = (problem.pointwise_pair(x), base[i]);
                    ((px - bx) * di, sx * di * di, (px.abs() + bx.abs()) * di.abs())
                });
                (g0 + alpha * quad + w * nl, quad + w * dnl, g0.abs() + alpha * quad.abs() + w * mag)
            };
            line_search_newton(gd, g0, slope0, barrier, cfg)?
        } else {
            let g = |alpha: f64| {
                let nl = par::sum_indexed(pv.len(), |i| {
                    (problem.pointwise(pv[i] + alpha * dv[i]) - base[i]) * dv[i]
                });
                g0 + alpha * quad + w * nl
            };
            line_search(g, g0, barrier, cfg)?
        };
        let alpha = ls.alpha;

        let next = phi.axpy(alpha, &d);
        if let Err(FilmError::NonPositiveField { index, value }) = next.ensure_positive() {
            return Err(FilmError::PositivityLost(format!(
                "PSD step alpha={alpha:e} produced {value:e} at index {index}"
            )));
        }
        since_refresh += 1;
        if since_refresh >= cfg.refresh_every {
            r = problem.residual(&next)?;
            fresh = true;
            since_refresh = 0;
        } else {
            let (rv, lv, nv) = (r.values(), ld.values(), next.values());
            r = CellField::from_index_fn(grid, |i| {
                rv[i] - alpha * lv[i] - (problem.pointwise(nv[i]) - base[i])
            });
            fresh = false;
        }
        phi = next;
        trace.alphas.push(alpha);
        trace.slopes.push(g0);
        trace.line_evals.push(ls.evals);
        if cfg.record_objective {
            trace.objective.push(problem.objective(&phi)?);
        }
    }
}
