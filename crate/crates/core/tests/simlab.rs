use transport_core::data::Mode;
use transport_core::numkit::{logistic_fit, Matrix};
use transport_core::simlab::{
    emit_table, gen_dataset, oracle_truth, parse_table_csv, run_scenario, table1_scenario, table2_scenario, DgpSpec, EstimatorId,
    Execution, Layout, SummaryRow,
};

#[test]
fn dgp_moments_at_one_million() {
    let spec = DgpSpec::difference();
    let data = gen_dataset(&spec, 1_000_000, 51, 0).unwrap();
    let n = data.n() as f64;
    let rows = data.rows();
    for j in 0..3 {
        assert!((rows.iter().map(|r| r.x[j]).sum::<f64>() / n).abs() < 0.01);
    }
    for (i, j) in [(0, 1), (0, 2), (1, 2)] {
        let c = rows.iter().map(|r| r.x[i] * r.x[j]).sum::<f64>() / n;
        let vi = rows.iter().map(|r| r.x[i] * r.x[i]).sum::<f64>() / n;
        let vj = rows.iter().map(|r| r.x[j] * r.x[j]).sum::<f64>() / n;
        assert!((c / (vi * vj).sqrt() - 0.5).abs() < 0.01);
    }

    // P(G=1 | X=0) from a logistic fit on the full sample.
    assert!((spec.pi(&[0.0; 3]) - 0.25).abs() < 1e-15);
    let design: Vec<Vec<f64>> = rows.iter().map(|r| vec![1.0, r.x[0], r.x[1], r.x[2]]).collect();
    let g: Vec<f64> = rows.iter().map(|r| f64::from(r.g)).collect();
    let fit = logistic_fit(&Matrix::from_rows(&design).unwrap(), &g).unwrap();
    let p0 = 1.0 / (1.0 + (-fit.coefficients[0]).exp());
    assert!((p0 - 0.25).abs() < 0.01, "{p0}");

    // Enrolment is a hard constraint.
    let seg = spec.segmentation();
    for r in data.source_rows() {
        assert!(seg.allowed_at(&r.x).contains(&r.s.unwrap()));
        if r.x[0] <= -0.8 {
            assert_eq!(r.s, Some(1));
        }
    }

    let s2: Vec<_> = data.source_rows().filter(|r| r.s == Some(2)).collect();
    let treated = s2.iter().filter(|r| r.a == Some(1)).count() as f64 / s2.len() as f64;
    assert!((treated - 0.4).abs() < 0.01);
    let resid = s2.iter().map(|r| (r.y.unwrap() - spec.q(r.a.unwrap(), &r.x, 2)).powi(2)).sum::<f64>() / s2.len() as f64;
    assert!((resid - 5.0).abs() < 0.1, "{resid}");
}

#[test]
fn oracle_matches_reference_truths() {
    let ate = oracle_truth(&DgpSpec::difference(), 1_000_000, 0, Execution::Parallel).unwrap();
    assert!((ate.value - 2.87).abs() < 0.01, "{ate:?}");
    let cmr = oracle_truth(&DgpSpec::ratio(), 1_000_000, 0, Execution::Parallel).unwrap();
    assert!((cmr.value - 2.07).abs() < 0.01, "{cmr:?}");
}

fn small(k: usize, reps: usize) -> transport_core::simlab::ScenarioConfig {
    let mut c = table1_scenario(k, 800, reps, 7);
    c.oracle_draws = Some(50_000);
    c
}

#[test]
fn runs_are_deterministic_across_execution_modes() {
    let cfg = small(1, 12);
    let a = run_scenario(&cfg, Execution::Serial).unwrap();
    let b = run_scenario(&cfg, Execution::Parallel).unwrap();
    let c = run_scenario(&cfg, Execution::Threads(3)).unwrap();
    assert_eq!(a.summary, b.summary);
    assert_eq!(a.summary, c.summary);
    assert_eq!(a.records, c.records);
    assert!(a.failures.is_empty());
}

#[test]
fn summary_identities() {
    let r = run_scenario(&small(2, 15), Execution::Parallel).unwrap();
    let s = &r.summary;
    let bias = s.bias / 100.0;
    assert!((s.rmse * s.rmse - bias * bias - s.variance).abs() < 1e-12);
    assert!(s.rmse * s.rmse >= bias * bias);
    assert!((0.0..=100.0).contains(&s.coverage.unwrap()));

    let one = run_scenario(&small(1, 1), Execution::Serial).unwrap();
    assert!(matches!(one.summary.coverage, Some(c) if c == 0.0 || c == 100.0));
}

#[test]
fn config_validation() {
    let mut c = small(1, 5);
    c.estimator = EstimatorId::Cmr;
    assert!(run_scenario(&c, Execution::Serial).is_err());
    let mut c = small(1, 5);
    c.reps = 0;
    assert!(run_scenario(&c, Execution::Serial).is_err());
    let mut c = table2_scenario(1, 800, 5, 1);
    c.dgp.e[1] = 1.0;
    assert!(run_scenario(&c, Execution::Serial).is_err());
}

fn fake_row(label: &str, v: f64) -> SummaryRow {
    SummaryRow {
        label: label.into(),
        n: 1250,
        reps: 10,
        failures: 0,
        truth: 2.0,
        mean: 2.0 + v,
        bias: 100.0 * v,
        rmse: 0.1 + v.abs(),
        variance: 0.01,
        se_mean: Some(0.11 / 3.0),
        coverage: Some(95.8),
    }
}

#[test]
fn table_layout_and_round_trip() {
    let rows: Vec<SummaryRow> = (0..8).map(|i| fake_row(&format!("c{i}"), 0.013 * i as f64 - 0.031)).collect();
    for layout in [Layout::Table1, Layout::Table2] {
        let t = emit_table(&rows, layout);
        let parsed = parse_table_csv(&t.csv).unwrap();
        assert_eq!(parsed.columns.len(), 8);
        let names: Vec<&str> = parsed.rows.iter().map(|(n, _)| n.as_str()).collect();
        assert_eq!(names, ["Mean", "Bias", "RMSE", "Coverage", "SE"]);
        for (j, row) in rows.iter().enumerate() {
            let want = transport_core::simlab::display_values(row, layout);
            for (k, (_, vals)) in parsed.rows.iter().enumerate() {
                assert_eq!(vals[j], want[k]);
            }
        }
        assert_eq!(t.text.lines().count(), 6);
    }
    let scaled = parse_table_csv(&emit_table(&rows[..1], Layout::Table3).csv).unwrap();
    assert!((scaled.rows[2].1[0].unwrap() - 100.0 * rows[0].rmse).abs() < 1e-12);

    let empty = emit_table(&[], Layout::Table1);
    assert_eq!(empty.csv.trim_end(), "stat");
    assert!(parse_table_csv(&empty.csv).unwrap().rows.is_empty());
}

#[test]
fn ratio_dgp_outcomes_positive() {
    let data = gen_dataset(&DgpSpec::ratio(), 20_000, 52, 0).unwrap();
    assert_eq!(data.mode(), Mode::Ratio);
    assert!(data.rows().iter().all(|r| r.y.unwrap() > 0.0));
}
