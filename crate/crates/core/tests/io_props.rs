use proptest::prelude::*;
use tfilm_core::experiments::EnergyRecord;
use tfilm_core::{io, CellField, Grid};

fn grid() -> impl Strategy<Value = Grid> {
    prop_oneof![(1usize..=1, 2usize..40), (2usize..=2, 2usize..12), (3usize..=3, 2usize..6)]
        .prop_flat_map(|(dim, n)| (Just(dim), Just(n), 1e-3f64..1e3))
        .prop_map(|(dim, n, l)| Grid::new(dim, n, l).unwrap())
}

fn field() -> impl Strategy<Value = CellField> {
    grid().prop_flat_map(|g| {
        prop::collection::vec(any::<f64>(), g.len()).prop_map(move |v| CellField::from_values(g, v).unwrap())
    })
}

fn finite() -> impl Strategy<Value = f64> {
    prop_oneof![any::<f64>().prop_filter("finite", |x| x.is_finite()), Just(0.0), Just(-0.0), Just(f64::MIN_POSITIVE)]
}

fn record() -> impl Strategy<Value = EnergyRecord> {
    (finite(), finite(), prop::option::of(finite()), finite(), finite(), any::<usize>(), finite()).prop_map(
        |(t, energy, modified_energy, mass, min_phi, psd_iters, residual)| EnergyRecord {
            t,
            energy,
            modified_energy,
            mass,
            min_phi,
            psd_iters,
            residual,
        },
    )
}

fn bits(v: &[f64]) -> Vec<u64> {
    v.iter().map(|x| x.to_bits()).collect()
}

proptest! {
    #[test]
    fn snapshot_bytes_round_trip(f in field(), t in any::<f64>()) {
        let back = io::decode_snapshot(&io::encode_snapshot(&f, t)).unwrap();
        prop_assert_eq!(back.t.to_bits(), t.to_bits());
        prop_assert_eq!(back.field.grid(), f.grid());
        prop_assert_eq!(bits(back.field.values()), bits(f.values()));
    }

    #[test]
    fn energy_log_is_a_parse_print_fixpoint(recs in prop::collection::vec(record(), 0..20)) {
        let text = io::format_energy_log(&recs);
        let parsed = io::parse_energy_log(&text).unwrap();
        prop_assert_eq!(io::format_energy_log(&parsed), text);
        for (a, b) in parsed.iter().zip(&recs) {
            prop_assert_eq!(a.t.to_bits(), b.t.to_bits());
            prop_assert_eq!(a.energy.to_bits(), b.energy.to_bits());
            prop_assert_eq!(a.modified_energy.map(f64::to_bits), b.modified_energy.map(f64::to_bits));
            prop_assert_eq!(a.psd_iters, b.psd_iters);
        }
    }
}

#[test]
fn snapshot_files_round_trip_with_sidecar() {
    let dir = tempfile::tempdir().unwrap();
    let g = Grid::new(3, 4, 2.0).unwrap();
    let f = tfilm_core::random::random_field(g, 4, 0.0, 1.0);
    let path = dir.path().join("phi.tfgf");
    io::write_field_snapshot(&f, 1.25, &path).unwrap();
    let back = io::read_field_snapshot(&path).unwrap();
    assert_eq!(back.field, f);
    let meta = std::fs::read_to_string(dir.path().join("phi.meta")).unwrap();
    for line in ["format=TFGF", "version=1", "dim=3", "n=4", "L=2.0", "t=1.25", "values=64"] {
        assert!(meta.lines().any(|l| l == line), "{line} missing from\n{meta}");
    }
    assert!(!dir.path().join("phi.tfgf.tmp").exists());
}
