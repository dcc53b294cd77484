use proptest::prelude::*;

use transport_core::data::{Mode, Observation, StudyDataset};
use transport_core::nuisance::{
    fit_affiliation, fit_outcome_difference, fit_outcome_ratio, fit_propensity, fit_selection, fit_variance, normalized_weight,
    weight_difference, weight_ratio, AffiliationModel, AffiliationSpec, Basis, ControlBasis, OutcomeModel, PropensityKind,
    VarianceKind, VarianceModel, WeightChoice,
};
use transport_core::simlab::{gen_dataset, DgpSpec};

fn per_trial() -> ControlBasis {
    ControlBasis::per_trial(Basis::linear(3))
}

/// Same covariates and assignments with every outcome replaced by its mean.
fn noiseless(spec: &DgpSpec, data: &StudyDataset) -> StudyDataset {
    let rows = data
        .rows()
        .iter()
        .map(|r| match r.s {
            Some(s) => Observation::source(s, r.a.unwrap(), spec.q(r.a.unwrap(), &r.x, s), r.x.clone()),
            None => Observation::target(spec.target_q(&r.x), r.x.clone(), data.mode()),
        })
        .collect();
    StudyDataset::new(rows, data.mode()).unwrap()
}

fn grid() -> Vec<[f64; 3]> {
    (0..1000)
        .map(|i| {
            let t = i as f64 / 999.0;
            [-3.0 + 6.0 * t, (7.0 * t).sin() * 2.0, (3.0 * t).cos() - 0.5]
        })
        .collect()
}

/// Largest disagreement of the fitted effect across trial pairs.
fn constraint_gap(model: &OutcomeModel, mode: Mode) -> f64 {
    let mut worst = 0.0f64;
    for x in grid() {
        let per: Vec<f64> = (1..=model.m)
            .map(|s| match mode {
                Mode::Difference => model.q(1, &x, s) - model.q(0, &x, s),
                Mode::Ratio => model.q(1, &x, s).ln() - model.q(0, &x, s).ln(),
            })
            .collect();
        for a in &per {
            for b in &per {
                worst = worst.max((a - b).abs() / a.abs().max(1.0));
            }
        }
    }
    worst
}

#[test]
fn difference_outcome_recovers_effect_and_keeps_constraint() {
    let spec = DgpSpec::difference();
    let data = gen_dataset(&spec, 100_000, 21, 0).unwrap();
    let fit = fit_outcome_difference(&data, &per_trial(), &Basis::linear(3)).unwrap();
    for (b, t) in fit.effect_coef.iter().zip([1.0, 2.0, 2.0, 2.0]) {
        assert!((b - t).abs() < 0.05, "{:?}", fit.effect_coef);
    }
    assert!(constraint_gap(&fit, Mode::Difference) <= 4.0 * f64::EPSILON);

    let exact = fit_outcome_difference(&noiseless(&spec, &data), &per_trial(), &Basis::linear(3)).unwrap();
    for (b, t) in exact.effect_coef.iter().zip([1.0, 2.0, 2.0, 2.0]) {
        assert!((b - t).abs() < 1e-8);
    }

    let constant = fit_outcome_difference(&data, &per_trial(), &Basis::intercept()).unwrap();
    assert_eq!(constant.effect_coef.len(), 1);
    assert!(constraint_gap(&constant, Mode::Difference) <= 4.0 * f64::EPSILON);
}

#[test]
fn ratio_outcome_recovers_log_ratio_and_keeps_constraint() {
    let spec = DgpSpec::ratio();
    let data = gen_dataset(&spec, 100_000, 22, 0).unwrap();
    let fit = fit_outcome_ratio(&data, &per_trial(), &Basis::linear(3)).unwrap();
    for b in &fit.effect_coef {
        assert!((b - 0.2).abs() < 0.05, "{:?}", fit.effect_coef);
    }
    assert!(constraint_gap(&fit, Mode::Ratio) <= 4.0 * f64::EPSILON);
}

#[test]
fn variance_models_recover_truth() {
    let spec = DgpSpec::difference();
    let data = gen_dataset(&spec, 100_000, 23, 0).unwrap();
    let outcome = fit_outcome_difference(&data, &per_trial(), &Basis::linear(3)).unwrap();
    let v = fit_variance(&data, &outcome, &VarianceKind::Empirical).unwrap();
    for a in 0..2 {
        assert!((v.v(a, &[0.0; 3], 3) / 10.0 - 1.0).abs() < 0.05);
        assert!((v.v(a, &[0.0; 3], 2) / 5.0 - 1.0).abs() < 0.05);
    }

    let spec = DgpSpec::ratio();
    let data = gen_dataset(&spec, 100_000, 24, 0).unwrap();
    let outcome = fit_outcome_ratio(&data, &per_trial(), &Basis::linear(3)).unwrap();
    match fit_variance(&data, &outcome, &VarianceKind::ConstantSnr).unwrap() {
        VarianceModel::ConstantSnr { rho, .. } => assert!((rho / 9.0 - 1.0).abs() < 0.05, "rho={rho}"),
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn selection_affiliation_and_propensity() {
    let spec = DgpSpec::difference();
    let data = gen_dataset(&spec, 50_000, 25, 0).unwrap();
    let wrong = fit_selection(&data, &Basis::linear_in(&[0])).unwrap();
    assert_eq!(wrong.coefficients.len(), 2);

    let eta = fit_affiliation(&data, &AffiliationSpec { basis: Basis::linear(3), segmentation: None }).unwrap();
    for x in grid().iter().step_by(50) {
        assert!((eta.probs(x).iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    let known = fit_propensity(&data, &PropensityKind::Known(vec![0.5, 0.4, 0.6])).unwrap();
    assert_eq!(known.e1(&[3.0, -1.0, 0.2], 2), 0.4);
    let flat = fit_propensity(&data, &PropensityKind::Known(vec![0.5; 3])).unwrap();
    assert_eq!(flat.e(0, &[0.0; 3], 3), 0.5);
    let fitted = fit_propensity(&data, &PropensityKind::Fitted(Basis::intercept())).unwrap();
    for (s, e) in [(1, 0.5), (2, 0.4), (3, 0.6)] {
        assert!((fitted.e1(&[0.0; 3], s) - e).abs() < 0.02);
    }

    let single = gen_dataset(&spec, 2000, 26, 0).unwrap();
    let rows: Vec<Observation> = single.rows().iter().filter(|r| r.s.is_none_or(|s| s == 1)).cloned().collect();
    let single = StudyDataset::new(rows, Mode::Difference).unwrap();
    let eta1 = fit_affiliation(&single, &AffiliationSpec { basis: Basis::linear(3), segmentation: None }).unwrap();
    assert!(matches!(eta1, AffiliationModel::Single));
    assert_eq!(eta1.probs(&[0.1, 0.2, 0.3]), vec![1.0]);
}

#[test]
fn weight_examples() {
    let opt = WeightChoice::Optimal;
    let w: Vec<f64> = [(1.0, 0.5), (5.0, 0.4), (10.0, 0.6)]
        .iter()
        .map(|(v, e)| weight_difference(*v, *v, *e, &opt).unwrap())
        .collect();
    assert!((w[0] - 0.25).abs() < 1e-15);
    assert!((w[1] - 1.0 / (5.0 / 0.4 + 5.0 / 0.6)).abs() < 1e-15);
    assert!((w[2] - 1.0 / (10.0 / 0.6 + 10.0 / 0.4)).abs() < 1e-15);
    assert_eq!(weight_difference(7.0, 3.0, 0.2, &WeightChoice::Constant).unwrap(), 1.0);

    // Constant signal-to-noise ratio 9: V = Q²/9.
    let (q0, q1) = (2.0, 3.0);
    let r = weight_ratio(q0 * q0 / 9.0, q1 * q1 / 9.0, 0.4, q0, q1, &opt).unwrap();
    assert!((r - 2.16).abs() < 1e-12);
    let t3 = weight_ratio(q0 * q0 / 9.0, q1 * q1 / 9.0, 0.4, q0, q1, &WeightChoice::Custom { lambda1: 1.0, lambda0: 10.0 }).unwrap();
    assert!((t3 - 9.0 / (1.0 / 0.4 + 10.0 / 0.6)).abs() < 1e-12);

    let eta = DgpSpec::difference().eta(&[0.0; 3]);
    for (e, t) in eta.iter().zip([0.2609, 0.3913, 0.3478]) {
        assert!((e - t).abs() < 5e-5, "{eta:?}");
    }
    assert_eq!(normalized_weight(&[0.7], &[1.0]).unwrap(), vec![1.0]);
    assert!(normalized_weight(&[2.0, 2.0, 2.0], &eta).unwrap().iter().all(|h| (h - 1.0).abs() < 1e-15));
}

fn simplex(k: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.01..1.0f64, k).prop_map(|v| {
        let t: f64 = v.iter().sum();
        v.iter().map(|x| x / t).collect()
    })
}

proptest! {
    #[test]
    fn normalized_weight_has_unit_eta_mean(w in prop::collection::vec(1e-3..1e3f64, 3), eta in simplex(3)) {
        let h = normalized_weight(&w, &eta).unwrap();
        let mean: f64 = h.iter().zip(&eta).map(|(h, e)| h * e).sum();
        prop_assert!((mean - 1.0).abs() < 1e-12);
    }

    #[test]
    fn optimal_weights_satisfy_cauchy_schwarz(
        v in prop::collection::vec((0.1..20.0f64, 0.1..20.0f64, 0.05..0.95f64), 3),
        eta in simplex(3),
    ) {
        let w: Vec<f64> = v.iter().map(|(v0, v1, e)| weight_difference(*v0, *v1, *e, &WeightChoice::Optimal).unwrap()).collect();
        let lhs = 1.0 / w.iter().zip(&eta).map(|(w, e)| w * e).sum::<f64>();
        let rhs: f64 = w.iter().zip(&eta).map(|(w, e)| e / w).sum();
        prop_assert!(lhs <= rhs * (1.0 + 1e-12));
    }
}
