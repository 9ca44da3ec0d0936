//! Small invariant checks run by `tfilm selftest`.

use std::io::Write;

use tfilm_core::energy::{a0_star, discrete_energy, min_regularized_curvature, PhysParams};
use tfilm_core::experiments::random_initial_data;
use tfilm_core::random::{random_face, random_field, random_mean_zero};
use tfilm_core::schemes::{StepState, Stepper};
use tfilm_core::{io, ops, oracle, psd, CellField, Grid, PrecondCoeffs, SpectralSolver};

use crate::{EXIT_OK, EXIT_SELFTEST};

type Check = fn() -> Result<String, String>;

pub const CHECKS: &[(&str, Check)] = &[
    ("operators", operators),
    ("summation_by_parts", summation_by_parts),
    ("energy_dissipation", energy_dissipation),
    ("psd_solver", psd_solver),
    ("convexity_threshold", convexity_threshold),
    ("io_round_trip", io_round_trip),
];

/// Runs every check, printing one line each. Returns the exit code.
pub fn run(out: &mut dyn Write) -> i32 {
    let mut failed = 0;
    for (name, check) in CHECKS {
        let (tag, detail) = match check() {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        let _ = writeln!(out, "{tag} {name}: {detail}");
    }
    let _ = writeln!(out, "{} of {} checks passed", CHECKS.len() - failed, CHECKS.len());
    if failed == 0 {
        EXIT_OK
    } else {
        EXIT_SELFTEST
    }
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn within(what: &str, err: f64, tol: f64) -> Result<String, String> {
    if err <= tol {
        Ok(format!("{what} {err:.2e} <= {tol:.0e}"))
    } else {
        Err(format!("{what} {err:.2e} > {tol:.0e}"))
    }
}

fn operators() -> Result<String, String> {
    let g = Grid::new(2, 8, 1.0).map_err(|e| e.to_string())?;
    let u = random_field(g, 11, -1.0, 1.0);
    let f = random_mean_zero(g, 12);
    let solver = SpectralSolver::new(g);
    let c = PrecondCoeffs { a0: 2.0, a1: 1.5, a2: 0.25 };
    let ev = |e: tfilm_core::FilmError| e.to_string();
    let mut err = max_diff(ops::lap(&u).values(), oracle::apply_lap(&u).map_err(ev)?.values());
    let fd = random_face(g, 13);
    err = err.max(max_diff(ops::div(&fd).values(), oracle::apply_div(&fd).map_err(ev)?.values()));
    let dense = solver.inv_neg_lap(&f).map_err(ev)?;
    err = err.max(max_diff(dense.values(), oracle::solve_neg_lap(&f).map_err(ev)?.values()));
    let p = solver.solve_preconditioner(&f, c).map_err(ev)?;
    err = err.max(max_diff(p.values(), oracle::solve_precond(&f, c).map_err(ev)?.values()));
    within("max oracle deviation", err, 1e-11)
}

fn summation_by_parts() -> Result<String, String> {
    let g = Grid::new(3, 6, 1.0).map_err(|e| e.to_string())?;
    let mut worst: f64 = 0.0;
    for seed in 0..20 {
        let u = random_field(g, seed, -1.0, 1.0);
        let f = random_face(g, seed + 1000);
        let lhs = ops::inner_cell(&u, &ops::div(&f));
        let rhs = -ops::inner_face(&ops::grad(&u), &f);
        worst = worst.max((lhs - rhs).abs() / (1.0 + lhs.abs()));
    }
    within("worst relative mismatch", worst, 1e-12)
}

fn energy_dissipation() -> Result<String, String> {
    let g = Grid::new(2, 32, 1.0).map_err(|e| e.to_string())?;
    let params = PhysParams::with_eps(0.1);
    let stepper = Stepper::new(g, params, psd::SolverConfig::default()).map_err(|e| e.to_string())?;
    let mut state = StepState::new(random_initial_data(g, 3), 0.0).map_err(|e| e.to_string())?;
    let mut e_prev = discrete_energy(&state.phi_curr, params.eps).map_err(|e| e.to_string())?;
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..10 {
        let (next, rep) = stepper.step_first_order(&state, 1e-3, None).map_err(|e| e.to_string())?;
        let excess = rep.energy + rep.dissipation.unwrap_or(0.0) - e_prev;
        worst = worst.max(excess / (1.0 + e_prev.abs()));
        if rep.min_phi <= 0.0 || rep.mass_drift.abs() > 1e-10 {
            return Err(format!("min_phi {:e}, mass drift {:e}", rep.min_phi, rep.mass_drift));
        }
        e_prev = rep.energy;
        state = next;
    }
    if worst <= 1e-8 {
        Ok(format!("largest relative energy excess {worst:.2e}"))
    } else {
        Err(format!("energy rose by {worst:.2e}"))
    }
}

fn psd_solver() -> Result<String, String> {
    let g = Grid::new(2, 32, 1.0).map_err(|e| e.to_string())?;
    let stepper = Stepper::new(g, PhysParams::with_eps(0.5), psd::SolverConfig::default()).map_err(|e| e.to_string())?;
    let state = StepState::new(random_field(g, 1, 1.9, 2.1), 0.0).map_err(|e| e.to_string())?;
    let (_, rep) = stepper.step_first_order(&state, 1e-2, None).map_err(|e| e.to_string())?;
    let rho = rep.trace.tail_contraction().unwrap_or(0.0);
    if rep.psd_iters < 100 && rep.final_residual <= 1e-9 && rho <= 0.95 {
        Ok(format!("{} iterations, residual {:.2e}, contraction {rho:.3}", rep.psd_iters, rep.final_residual))
    } else {
        Err(format!("{} iterations, residual {:.2e}, contraction {rho:.3}", rep.psd_iters, rep.final_residual))
    }
}

fn convexity_threshold() -> Result<String, String> {
    let (at, _) = min_regularized_curvature(a0_star(), 1e-2, 1e2, 20001);
    let (below, _) = min_regularized_curvature(a0_star() - 0.01, 1e-2, 1e2, 20001);
    if at >= -1e-10 && below < 0.0 {
        Ok(format!("min f'' {at:.2e} at threshold, {below:.2e} below"))
    } else {
        Err(format!("min f'' {at:.2e} at threshold, {below:.2e} below"))
    }
}

fn io_round_trip() -> Result<String, String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let g = Grid::new(2, 8, 3.0).map_err(|e| e.to_string())?;
    let field: CellField = random_field(g, 5, 0.5, 1.5);
    let path = dir.path().join("f.tfgf");
    io::write_field_snapshot(&field, 0.75, &path).map_err(|e| e.to_string())?;
    let back = io::read_field_snapshot(&path).map_err(|e| e.to_string())?;
    let same = back.t == 0.75 && back.field.values().iter().zip(field.values()).all(|(a, b)| a.to_bits() == b.to_bits());
    if same {
        Ok("snapshot bitwise identical".into())
    } else {
        Err("snapshot differs after round trip".into())
    }
}
