use tfilm_core::energy::{discrete_energy, PhysParams};
use tfilm_core::experiments::{bdf2_start, run_coarsening, CoarseningConfig, Segment};
use tfilm_core::psd::{LineSearchMode, SolverConfig};
use tfilm_core::random::random_field;
use tfilm_core::schemes::{StepState, Stepper};
use tfilm_core::Grid;

fn run_steps(dim: usize, n: usize, bdf2: bool, mode: LineSearchMode) -> (f64, f64, f64) {
    let g = Grid::new(dim, n, 1.0).unwrap();
    let params = PhysParams::with_eps(0.1);
    let stepper = Stepper::new(g, params, SolverConfig { mode, ..Default::default() }).unwrap();
    let phi0 = random_field(g, 21, 1.5, 2.5);
    let e0 = discrete_energy(&phi0, params.eps).unwrap();
    let mut state = if bdf2 {
        bdf2_start(&stepper, phi0.clone(), 0.0, 1e-3).unwrap().0
    } else {
        StepState::new(phi0.clone(), 0.0).unwrap()
    };
    let (mut worst_rise, mut min_phi) = (f64::NEG_INFINITY, f64::INFINITY);
    let mut e_prev = e0;
    for _ in 0..10 {
        let (next, rep) =
            if bdf2 { stepper.step_bdf2(&state, 1e-3, None) } else { stepper.step_first_order(&state, 1e-3, None) }
                .unwrap();
        worst_rise = worst_rise.max(rep.energy - e_prev);
        min_phi = min_phi.min(rep.min_phi);
        e_prev = rep.energy;
        assert!(rep.mass_drift.abs() < 1e-12, "drift {}", rep.mass_drift);
        state = next;
    }
    (worst_rise, min_phi, e_prev - e0)
}

#[test]
fn energy_decays_in_every_dimension() {
    for (dim, n) in [(1, 64), (2, 24), (3, 8)] {
        for bdf2 in [false, true] {
            let (rise, min_phi, total) = run_steps(dim, n, bdf2, LineSearchMode::Exact);
            assert!(rise <= 1e-10, "dim {dim} bdf2 {bdf2}: rise {rise:e}");
            assert!(min_phi > 0.0);
            assert!(total < 0.0);
        }
    }
}

#[test]
fn line_search_modes_reach_the_same_solution() {
    let g = Grid::new(2, 16, 1.0).unwrap();
    let phi0 = random_field(g, 5, 1.9, 2.1);
    let solve = |mode| {
        let cfg = SolverConfig { mode, tol: 1e-11, ..Default::default() };
        let stepper = Stepper::new(g, PhysParams::with_eps(0.5), cfg).unwrap();
        let state = StepState::new(phi0.clone(), 0.0).unwrap();
        stepper.step_first_order(&state, 1e-2, None).unwrap().0.phi_curr
    };
    let exact = solve(LineSearchMode::Exact);
    for mode in [LineSearchMode::Quadratic, LineSearchMode::Unit] {
        let other = solve(mode);
        let diff = exact.values().iter().zip(other.values()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(diff < 1e-9, "{mode:?}: {diff:e}");
    }
}

#[test]
fn coarsening_is_deterministic() {
    let cfg = CoarseningConfig {
        n: 24,
        l: 2.4,
        schedule: vec![Segment { t_end: 0.01, dt: 0.001 }, Segment { t_end: 0.03, dt: 0.004 }],
        snapshot_times: vec![0.005, 0.03],
        ..Default::default()
    };
    let a = run_coarsening(&cfg).unwrap();
    let b = run_coarsening(&cfg).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.snapshots.len(), 2);
    assert!(a.max_energy_increase <= 0.0);
}

/// FNV-1a over the bit patterns of the field after five BDF2 steps. Frozen
/// from the default build; the sequential build and any rayon thread count
/// must reproduce it.
#[test]
fn results_do_not_depend_on_the_thread_count() {
    let g = Grid::new(2, 128, 1.0).unwrap();
    let stepper = Stepper::new(g, PhysParams::with_eps(0.05), SolverConfig::default()).unwrap();
    let (mut state, _) = bdf2_start(&stepper, random_field(g, 9, 1.9, 2.1), 0.0, 1e-3).unwrap();
    for _ in 0..5 {
        state = stepper.step_bdf2(&state, 1e-3, None).unwrap().0;
    }
    let hash = state.phi_curr.values().iter().fold(0xcbf2_9ce4_8422_2325u64, |h, v| {
        (h ^ v.to_bits()).wrapping_mul(0x0000_0100_0000_01b3)
    });
    assert_eq!(hash, 0x8b14_1050_1c44_d188, "checksum {hash:#018x}");
}
