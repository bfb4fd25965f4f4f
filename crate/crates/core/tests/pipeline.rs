use cfran::harness::{read_records, run_monte_carlo, write_results, MetricsRecord, RunOptions, CSV_HEADER};
use cfran::orchestrator::{run_scheme, SchemeId, TrialData};
use cfran::receiver::SinrCoefficients;
use cfran::scenario::ExperimentConfig;

fn small() -> ExperimentConfig {
    ExperimentConfig {
        num_orus: 9,
        antennas_per_oru: 2,
        num_uavs: 6,
        pilot_len: 3,
        n_channel_realizations: 30,
        area_side_m: 600.0,
        trials: 3,
        ..ExperimentConfig::default()
    }
}

fn without_runtime(records: &[MetricsRecord]) -> Vec<MetricsRecord> {
    records
        .iter()
        .cloned()
        .map(|mut r| {
            r.runtime_s = 0.0;
            r
        })
        .collect()
}

#[test]
fn record_count_matches_trials_and_schemes() {
    let config = ExperimentConfig { trials: 2, ..small() };
    let mut opts = RunOptions::new(&config);
    opts.schemes = vec!["BA+FP".parse().unwrap()];
    assert_eq!(run_monte_carlo(&config, &opts).unwrap().records.len(), 2);

    opts.schemes = SchemeId::ALL.to_vec();
    opts.uavs = vec![4, 6];
    let report = run_monte_carlo(&config, &opts).unwrap();
    assert_eq!(report.records.len(), 6 * 2 * 2);
    assert!(report.failures.is_empty());
}

#[test]
fn same_seed_same_records_at_any_thread_count() {
    let config = small();
    let mut opts = RunOptions::new(&config);
    opts.threads = 1;
    let a = run_monte_carlo(&config, &opts).unwrap();
    opts.threads = 4;
    let b = run_monte_carlo(&config, &opts).unwrap();
    assert_eq!(without_runtime(&a.records), without_runtime(&b.records));

    let other = ExperimentConfig {
        master_seed: config.master_seed + 1,
        ..config.clone()
    };
    let c = run_monte_carlo(&other, &opts).unwrap();
    assert_ne!(a.records[0].channel_hash, c.records[0].channel_hash);
}

#[test]
fn schemes_of_a_trial_share_channel_draws() {
    let config = small();
    let report = run_monte_carlo(&config, &RunOptions::new(&config)).unwrap();
    for trial in 0..config.trials as u64 {
        let hashes: Vec<&str> = report
            .records
            .iter()
            .filter(|r| r.trial == trial)
            .map(|r| r.channel_hash.as_str())
            .collect();
        assert_eq!(hashes.len(), 6);
        assert!(hashes.windows(2).all(|w| w[0] == w[1]));
    }
    assert_ne!(report.records[0].channel_hash, report.records[6].channel_hash);
}

#[test]
fn paired_orderings_per_trial() {
    let config = small();
    let report = run_monte_carlo(&config, &RunOptions::new(&config)).unwrap();
    let get = |trial: u64, label: &str| {
        report
            .records
            .iter()
            .find(|r| r.trial == trial && r.scheme.label() == label)
            .unwrap()
            .min_se
    };
    for trial in 0..config.trials as u64 {
        assert!(get(trial, "PA+PP") >= get(trial, "PA+FP") - 1e-9);
        assert!(get(trial, "BA+PP") >= get(trial, "BA+FP") - 1e-9);
    }
}

#[test]
fn results_round_trip_through_csv() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("runs.csv");

    write_results(&[], &path).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert_eq!(text, format!("{}\n", CSV_HEADER.join(",")));
    assert!(read_records(&path).unwrap().is_empty());

    let config = small();
    let records = run_monte_carlo(&config, &RunOptions::new(&config)).unwrap().records;
    write_results(&records, &path).unwrap();
    let back = read_records(&path).unwrap();
    assert_eq!(back.len(), records.len());
    for (a, b) in records.iter().zip(&back) {
        assert_eq!((a.trial, a.scheme, a.uavs, &a.channel_hash), (b.trial, b.scheme, b.uavs, &b.channel_hash));
        assert_eq!((a.ao_iterations, a.fp_iterations_total), (b.ao_iterations, b.fp_iterations_total));
        for (x, y) in [(a.min_se, b.min_se), (a.success_rate, b.success_rate), (a.jain_fairness, b.jain_fairness)] {
            assert!((x - y).abs() <= 1e-8 * x.abs().max(1e-300));
        }
    }
    let summary = std::fs::read_to_string(dir.path().join("runs.summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 1 + 6);
}

#[test]
fn write_reports_path_on_failure() {
    let err = write_results(&[], std::path::Path::new("/nonexistent-dir/x.csv")).unwrap_err();
    assert!(err.to_string().contains("/nonexistent-dir/x.csv"));
}

#[test]
fn gating_equals_sum_over_serving_orus() {
    let config = small();
    let data = TrialData::prepare(&config, 0).unwrap();
    let out = run_scheme("PA+FP".parse().unwrap(), &data, &config).unwrap();
    let m = &data.full_power_moments;
    let coef = data.coefficients(m, &out.association);
    let k_total = data.uavs();
    let mut a = vec![0.0; k_total];
    let mut c = vec![0.0; k_total];
    let mut b = vec![0.0; k_total * k_total];
    let mut d = vec![0.0; k_total];
    for k in 0..k_total {
        let mut signal = num_complex::Complex64::new(0.0, 0.0);
        for l in out.association.serving(k) {
            let alpha = data.beta[(k, l)].sqrt();
            signal += m.mean_gain(k, l) * alpha;
            d[k] += alpha * alpha * (m.cross_power(k, k, l) - m.mean_gain(k, l).norm_sqr()).max(0.0);
            c[k] += alpha * alpha * m.combiner_norm(k, l) * data.sigma2;
            for i in (0..k_total).filter(|&i| i != k) {
                b[k * k_total + i] += alpha * alpha * m.cross_power(k, i, l);
            }
        }
        a[k] = signal.norm_sqr();
    }
    let manual = SinrCoefficients::new(a, d, b, c);
    let close = |x: &[f64], y: &[f64]| x.iter().zip(y).all(|(p, q)| (p - q).abs() <= 1e-12 * p.abs().max(q.abs()));
    assert!(close(&coef.a, &manual.a));
    assert!(close(&coef.b, &manual.b));
    assert!(close(&coef.c, &manual.c));
    assert!(close(&coef.d, &manual.d));
    assert!(coef.a.iter().chain(&coef.b).chain(&coef.c).chain(&coef.d).all(|&x| x >= 0.0));
}
