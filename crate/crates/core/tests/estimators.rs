use transport_core::ate::{
    drlearner_fit, drlearner_pseudo, efficiency_gap, efficient_score_d, eif_ate, eif_ate_variant, gformula_ate, ipw_ate,
    psi_sp_d, solve_beta_d, ParametricCate, Variant,
};
use transport_core::cmr::{cmr_estimate, cmr_variant, efficient_score_r, gformula_cmr, single_source_cmr};
use transport_core::data::{Mode, Observation, StudyDataset};
use transport_core::numkit::Matrix;
use transport_core::nuisance::{fit_nuisances, Basis, NuisanceTable, WeightChoice};
use transport_core::simlab::{gen_dataset, scenario_model_spec, DgpSpec, Linear, Misspec, OutcomeDgp};

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

/// Difference DGP whose outcome law does not depend on the trial.
fn identical_law() -> DgpSpec {
    let mut spec = DgpSpec::difference();
    if let OutcomeDgp::Difference { control, sigma2, .. } = &mut spec.outcome {
        *control = vec![Linear::new(1.0, vec![0.5; 3]); 3];
        *sigma2 = vec![2.0; 3];
    }
    spec
}

fn only_trial_one(data: &StudyDataset) -> StudyDataset {
    let rows = data.rows().iter().filter(|r| r.s.is_none_or(|s| s == 1)).cloned().collect();
    StudyDataset::new(rows, data.mode()).unwrap()
}

fn fitted_table(spec: &DgpSpec, data: &StudyDataset) -> NuisanceTable {
    let mut ms = scenario_model_spec(spec, &Misspec::default());
    if data.m() == 1 {
        ms.affiliation.segmentation = None;
    }
    fit_nuisances(data, &ms).unwrap().evaluate(data).unwrap()
}

#[test]
fn constant_effect_and_zero_outcome() {
    let spec = DgpSpec::difference();
    let data = gen_dataset(&spec, 2000, 31, 0).unwrap();
    let mut t = spec.true_table(&data).unwrap();
    t.effect = vec![1.75; data.n()];
    assert!((gformula_ate(&data, &t).unwrap().psi_hat - 1.75).abs() < 1e-14);

    let rows = data.rows().iter().map(|r| Observation { y: r.y.map(|_| 0.0), ..r.clone() }).collect();
    let zero = StudyDataset::new(rows, Mode::Difference).unwrap();
    assert_eq!(ipw_ate(&zero, &t, None).unwrap().psi_hat, 0.0);
}

#[test]
fn noiseless_data_reduces_to_plug_in() {
    let spec = identical_law();
    let data = noiseless(&spec, &gen_dataset(&spec, 3000, 32, 0).unwrap());
    let t = spec.true_table(&data).unwrap();
    let g = gformula_ate(&data, &t).unwrap().psi_hat;
    assert_eq!(eif_ate(&data, &t, &WeightChoice::Optimal).unwrap().psi_hat, g);
    for v in [Variant::Pooled, Variant::Armwise] {
        assert!((eif_ate_variant(&data, &t, v).unwrap().psi_hat - g).abs() < 1e-10);
    }
    let z = drlearner_pseudo(&data, &t, &WeightChoice::Optimal).unwrap();
    for (i, zeta) in z.rows.iter().zip(&z.zeta) {
        assert_eq!(*zeta, t.effect[*i]);
    }
    let fit = drlearner_fit(&data, &z, &Basis::linear(3)).unwrap();
    for (b, e) in fit.coefficients.iter().zip([1.0, 2.0, 2.0, 2.0]) {
        assert!((b - e).abs() < 1e-10);
    }

    let spec = DgpSpec::ratio();
    let data = noiseless(&spec, &gen_dataset(&spec, 3000, 33, 0).unwrap());
    let t = spec.true_table(&data).unwrap();
    let g = gformula_cmr(&data, &t).unwrap().psi_hat;
    assert!((cmr_estimate(&data, &t, &WeightChoice::Optimal).unwrap().psi_hat - g).abs() < 1e-10);
}

#[test]
fn nested_variants_agree_under_identical_law() {
    let spec = identical_law();
    let data = gen_dataset(&spec, 20_000, 34, 0).unwrap();
    let t = fitted_table(&spec, &data);
    let main = eif_ate(&data, &t, &WeightChoice::Optimal).unwrap();
    for v in [Variant::Pooled, Variant::Armwise] {
        let r = eif_ate_variant(&data, &t, v).unwrap();
        assert!((r.psi_hat - main.psi_hat).abs() < 3.0 * main.se.unwrap(), "{v:?}");
    }
}

#[test]
fn single_trial_reductions() {
    let spec = DgpSpec::difference();
    let data = only_trial_one(&gen_dataset(&spec, 4000, 35, 0).unwrap());
    let t = fitted_table(&spec, &data);
    let main = eif_ate(&data, &t, &WeightChoice::Optimal).unwrap().psi_hat;
    for v in [Variant::Pooled, Variant::Armwise] {
        assert!((eif_ate_variant(&data, &t, v).unwrap().psi_hat - main).abs() < 1e-10);
    }
    assert_eq!(efficiency_gap(&data, &t).unwrap(), 0.0);

    let spec = DgpSpec::ratio();
    let data = only_trial_one(&gen_dataset(&spec, 4000, 36, 0).unwrap());
    let t = fitted_table(&spec, &data);
    let ss = single_source_cmr(&data, &t).unwrap();
    let main = cmr_estimate(&data, &t, &WeightChoice::Optimal).unwrap();
    assert!((ss.psi_hat - main.psi_hat).abs() < 1e-10);
    assert!((ss.se.unwrap() - main.se.unwrap()).abs() < 1e-10);
    for v in [Variant::Pooled, Variant::Armwise] {
        assert!((cmr_variant(&data, &t, v).unwrap().psi_hat - ss.psi_hat).abs() < 1e-10);
    }
}

#[test]
fn efficiency_gap_sign() {
    let spec = DgpSpec::difference();
    let data = gen_dataset(&spec, 5000, 37, 0).unwrap();
    let mut t = spec.true_table(&data).unwrap();
    assert!(efficiency_gap(&data, &t).unwrap() < 0.0);
    // Equal weights across trials: Cauchy-Schwarz holds with equality.
    for i in 0..t.n() {
        t.e1[i] = vec![0.3; 3];
        t.v0[i] = vec![2.0; 3];
        t.v1[i] = vec![4.0; 3];
    }
    assert!(efficiency_gap(&data, &t).unwrap().abs() < 1e-12);
}

#[test]
fn constant_weight_pseudo_outcomes_ignore_eta() {
    let spec = DgpSpec::difference();
    let data = gen_dataset(&spec, 3000, 38, 0).unwrap();
    let t = spec.true_table(&data).unwrap();
    let mut t2 = t.clone();
    for (row, r) in t2.eta.iter_mut().zip(data.rows()) {
        if let Some(k) = r.trial() {
            // Keep the own trial supported, change everything else.
            *row = vec![0.1; 3];
            row[k] = 0.8;
        }
    }
    let a = drlearner_pseudo(&data, &t, &WeightChoice::Constant).unwrap();
    let b = drlearner_pseudo(&data, &t2, &WeightChoice::Constant).unwrap();
    assert_eq!(a.rows, b.rows);
    for (u, v) in a.zeta.iter().zip(&b.zeta) {
        assert!((u - v).abs() < 1e-12 * u.abs().max(1.0));
    }
    let fit = drlearner_fit(&data, &a, &Basis::intercept()).unwrap();
    let mean = a.zeta.iter().sum::<f64>() / a.zeta.len() as f64;
    assert!((fit.coefficients[0] - mean).abs() < 1e-10);
}

#[test]
fn efficient_scores_symmetric_reduction() {
    let spec = DgpSpec::difference();
    let data = gen_dataset(&spec, 500, 39, 0).unwrap();
    let mut t = spec.true_table(&data).unwrap();
    for i in 0..t.n() {
        t.e1[i] = vec![0.5; 3];
        t.v0[i] = vec![2.0; 3];
        t.v1[i] = vec![2.0; 3];
    }
    let basis = Basis::linear(3);
    let beta = [1.0, 2.0, 2.0, 2.0];
    let s = efficient_score_d(&data, &t, &basis, &beta);
    for (r, (i, sc)) in data.rows().iter().zip(s.iter().enumerate()) {
        let Some(k) = r.trial() else {
            assert!(sc.iter().all(|v| *v == 0.0));
            continue;
        };
        let a = r.a_f64();
        let resid = r.y.unwrap() - t.q0[i][k] - a * t.effect[i];
        let expect = (a - 0.5) * 0.5 * resid;
        assert!((sc[0] - expect).abs() < 1e-12);
    }

    let spec = DgpSpec::ratio();
    let data = gen_dataset(&spec, 500, 40, 0).unwrap();
    let mut t = spec.true_table(&data).unwrap();
    for i in 0..t.n() {
        t.e1[i] = vec![0.5; 3];
        t.v0[i] = vec![2.0; 3];
        t.v1[i] = vec![2.0; 3];
    }
    let s = efficient_score_r(&data, &t, &Basis::intercept(), &[0.0]).unwrap();
    for (i, r) in data.rows().iter().enumerate() {
        let Some(k) = r.trial() else { continue };
        let resid = r.y.unwrap() - t.q0[i][k];
        let expect = t.q0[i][k] * (r.a_f64() - 0.5) * 0.5 * resid;
        assert!((s[i][0] - expect).abs() < 1e-10 * expect.abs().max(1.0));
    }
}

#[test]
fn parametric_plug_in_at_truth_is_gformula() {
    let spec = DgpSpec::difference();
    let data = gen_dataset(&spec, 2000, 41, 0).unwrap();
    let t = spec.true_table(&data).unwrap();
    let basis = Basis::linear(3);
    let cate = ParametricCate {
        basis: basis.clone(),
        beta: vec![1.0, 2.0, 2.0, 2.0],
        vcov: vec![vec![0.0; 4]; 4],
        iterations: 0,
        score_norm: 0.0,
        m_hat: Matrix::identity(4),
        scores: efficient_score_d(&data, &t, &basis, &[1.0, 2.0, 2.0, 2.0]),
    };
    let sp = psi_sp_d(&data, &cate).unwrap();
    let g = gformula_ate(&data, &t).unwrap();
    assert!((sp.psi_hat - g.psi_hat).abs() < 1e-12);

    let fit = solve_beta_d(&data, &t, &basis, &[0.0; 4]).unwrap();
    assert!(fit.score_norm <= 1e-8);
}

#[test]
fn ratio_properties() {
    let spec = DgpSpec::ratio();
    let data = gen_dataset(&spec, 3000, 42, 0).unwrap();
    let mut t = spec.true_table(&data).unwrap();
    let mut null = t.clone();
    null.effect = vec![1.0; data.n()];
    assert!((gformula_cmr(&data, &null).unwrap().psi_hat - 1.0).abs() < 1e-14);

    let base = cmr_estimate(&data, &t, &WeightChoice::Optimal).unwrap();
    assert!(base.ci.unwrap().0 > 0.0);
    let rows = data
        .rows()
        .iter()
        .map(|r| if r.is_target() { Observation { y: r.y.map(|y| 10.0 * y), ..r.clone() } } else { r.clone() })
        .collect();
    let scaled = StudyDataset::new(rows, Mode::Ratio).unwrap();
    t.target_q = t.target_q.map(|q| q.iter().map(|v| 10.0 * v).collect());
    let r = cmr_estimate(&scaled, &t, &WeightChoice::Optimal).unwrap();
    assert!((r.psi_hat - base.psi_hat).abs() < 1e-12 * base.psi_hat);

    // Weight types barely matter on one dataset.
    let data = gen_dataset(&spec, 5000, 43, 0).unwrap();
    let t = fitted_table(&spec, &data);
    let choices = [
        WeightChoice::Optimal,
        WeightChoice::Constant,
        WeightChoice::Custom { lambda1: 1.0, lambda0: 10.0 },
        WeightChoice::Custom { lambda1: 10.0, lambda0: 1.0 },
    ];
    let est: Vec<f64> = choices.iter().map(|c| cmr_estimate(&data, &t, c).unwrap().psi_hat).collect();
    let spread = est.iter().cloned().fold(f64::MIN, f64::max) - est.iter().cloned().fold(f64::MAX, f64::min);
    assert!(spread < 1e-2, "{est:?}");
}
