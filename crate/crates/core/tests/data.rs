use proptest::prelude::*;

use transport_core::data::{build_support_map, read_csv, support_from_rule, write_csv, Mode, Observation, StudyDataset};
use transport_core::nuisance::{fit_affiliation, AffiliationSpec, Basis};
use transport_core::simlab::{gen_dataset, DgpSpec};

fn sim(n: usize) -> StudyDataset {
    gen_dataset(&DgpSpec::difference(), n, 3, 0).unwrap()
}

#[test]
fn support_from_segmented_affiliation_fit() {
    let spec = DgpSpec::difference();
    let data = sim(20_000);
    let eta = fit_affiliation(&data, &AffiliationSpec { basis: Basis::linear(3), segmentation: Some(spec.segmentation()) }).unwrap();
    let map = build_support_map(&data, &eta, 1e-3);
    assert_eq!(map.eligible(&[-1.0, 0.0, 0.0]), vec![1]);
    assert_eq!(map.eligible(&[0.0, 0.0, 0.0]), vec![1, 2, 3]);
    assert_eq!(map.eligible(&[1.5, 0.0, 0.0]), vec![3]);
    let rule = support_from_rule(&data, spec.segmentation());
    assert_eq!(rule.eligible(&[-1.0, 0.3, 0.3]), vec![1]);
    assert_eq!(rule.tau(), None);
    assert!(rule.violations.is_empty());
}

#[test]
fn zero_tau_makes_every_trial_eligible() {
    let data = sim(5000);
    let eta = fit_affiliation(&data, &AffiliationSpec { basis: Basis::linear(3), segmentation: None }).unwrap();
    let map = build_support_map(&data, &eta, 0.0);
    for x1 in [-3.0, -1.0, 0.0, 1.0, 3.0] {
        assert_eq!(map.eligible(&[x1, 0.0, 0.0]), vec![1, 2, 3]);
    }
}

fn observation(mode: Mode) -> impl Strategy<Value = Observation> {
    let x = prop::collection::vec(-1e3..1e3f64, 2);
    (any::<bool>(), 1usize..=3, any::<bool>(), 0.01..1e4f64, x).prop_map(move |(target, s, a, y, x)| {
        if target {
            let y = (mode == Mode::Ratio).then_some(y);
            Observation::target(y, x, mode)
        } else {
            Observation::source(s, u8::from(a), y, x)
        }
    })
}

/// Datasets that satisfy the construction invariants: every trial gets both
/// arms and there is at least one target row.
fn dataset(mode: Mode) -> impl Strategy<Value = StudyDataset> {
    prop::collection::vec(observation(mode), 0..40).prop_map(move |mut rows| {
        for s in 1..=3 {
            for a in 0..2u8 {
                rows.push(Observation::source(s, a, 1.0 + s as f64, vec![0.5, -0.5]));
            }
        }
        rows.push(Observation::target((mode == Mode::Ratio).then_some(2.0), vec![0.0, 0.0], mode));
        StudyDataset::new(rows, mode).unwrap()
    })
}

proptest! {
    #[test]
    fn csv_round_trip(data in prop_oneof![dataset(Mode::Difference), dataset(Mode::Ratio)]) {
        let mut buf = Vec::new();
        write_csv(&data, &mut buf).unwrap();
        let back = read_csv(buf.as_slice(), data.mode()).unwrap();
        prop_assert!(back.warnings.is_empty());
        prop_assert_eq!(&back.data, &data);
        let mut again = Vec::new();
        write_csv(&back.data, &mut again).unwrap();
        prop_assert_eq!(buf, again);
    }

    #[test]
    fn support_monotone_in_tau(x1 in -3.0..3.0f64, x2 in -3.0..3.0f64, t1 in 0.0..0.5f64, t2 in 0.0..0.5f64) {
        use std::sync::OnceLock;
        static FIT: OnceLock<(StudyDataset, transport_core::nuisance::AffiliationModel)> = OnceLock::new();
        let (data, eta) = FIT.get_or_init(|| {
            let d = sim(3000);
            let e = fit_affiliation(&d, &AffiliationSpec { basis: Basis::linear(3), segmentation: None }).unwrap();
            (d, e)
        });
        let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
        let x = [x1, x2, 0.0];
        let wide = build_support_map(data, eta, lo).eligible(&x);
        let narrow = build_support_map(data, eta, hi).eligible(&x);
        prop_assert!(narrow.iter().all(|s| wide.contains(s)));
    }
}
