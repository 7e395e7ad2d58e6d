use rkhs_sysid::bench::{emit_report, run_benchmark, run_data, BenchmarkConfig, BenchmarkReport, Estimator, ReportFormat, Scenario};
use rkhs_sysid::hyper::TunerConfig;

fn tiny(scenario: Scenario, runs: usize) -> BenchmarkConfig {
    let tuner = TunerConfig { starts: 1, max_evals: 40, ..Default::default() };
    BenchmarkConfig {
        scenario,
        runs,
        n_train: 60,
        n_test: 40,
        nss_tuner: tuner.clone(),
        oracle_tuner: tuner,
        m_grid: vec![2, 4],
        nss_truncation: 20,
        master_seed: 17,
        ..Default::default()
    }
}

/// Report with the wall-clock fields zeroed.
fn timeless(mut r: BenchmarkReport) -> BenchmarkReport {
    for run in &mut r.runs {
        run.seconds = 0.0;
        for f in &mut run.fits {
            f.seconds = 0.0;
        }
    }
    r
}

/// Quantile with linear interpolation between order statistics.
fn type7(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

#[test]
fn same_seed_same_report() {
    let c = tiny(Scenario::S2, 2);
    let a = timeless(run_benchmark(&c).unwrap());
    let b = timeless(run_benchmark(&c).unwrap());
    assert_eq!(a, b);
    let other = timeless(run_benchmark(&BenchmarkConfig { master_seed: 18, ..c }).unwrap());
    assert_ne!(a.runs, other.runs);
}

#[test]
fn run_streams_depend_only_on_seed_and_index() {
    let c = tiny(Scenario::S2, 5);
    let fewer = BenchmarkConfig { runs: 2, ..c.clone() };
    for i in 0..2 {
        let a = run_data(&c, i).unwrap();
        let b = run_data(&fewer, i).unwrap();
        assert_eq!(a.y_train, b.y_train);
        assert_eq!(a.system, b.system);
    }
    assert_ne!(run_data(&c, 0).unwrap().y_train, run_data(&c, 1).unwrap().y_train);
}

#[test]
fn dropping_an_estimator_leaves_the_other_unchanged() {
    let both = tiny(Scenario::S1, 2);
    let nss_only = BenchmarkConfig { estimators: vec![Estimator::Nss], ..both.clone() };
    let a = run_benchmark(&both).unwrap();
    let b = run_benchmark(&nss_only).unwrap();
    assert_eq!(a.fits_of(Estimator::Nss), b.fits_of(Estimator::Nss));
    assert!(b.summary_of(Estimator::GaussianWithOracle).is_none());
}

#[test]
fn one_run_gives_one_fit_per_estimator() {
    let r = run_benchmark(&tiny(Scenario::S2, 1)).unwrap();
    assert_eq!(r.runs.len(), 1);
    assert_eq!(r.runs[0].fits.len(), 2);
}

#[test]
fn emitted_files_agree_with_the_report() {
    let r = run_benchmark(&tiny(Scenario::S2, 4)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let paths = emit_report(&r, dir.path(), "bench", &[ReportFormat::Json, ReportFormat::Csv, ReportFormat::Svg]).unwrap();
    assert_eq!(paths.len(), 3);

    let json: BenchmarkReport = serde_json::from_str(&std::fs::read_to_string(&paths[0]).unwrap()).unwrap();
    assert_eq!(json, r);

    let mut rdr = csv::Reader::from_path(&paths[1]).unwrap();
    assert_eq!(rdr.headers().unwrap(), vec!["run", "estimator", "fit"]);
    let rows: Vec<(usize, String, f64)> = rdr.deserialize().map(|row| row.unwrap()).collect();
    let successes: usize = r.runs.iter().flat_map(|run| &run.fits).filter(|f| f.fit.is_some()).count();
    assert_eq!(rows.len(), successes);
    for s in &json.summary {
        let mut fits: Vec<f64> = rows.iter().filter(|row| row.1 == s.estimator.name()).map(|row| row.2).collect();
        fits.sort_by(f64::total_cmp);
        assert_eq!(fits.len(), s.count);
        assert_eq!(type7(&fits, 0.5), s.median);
        assert_eq!(type7(&fits, 0.25), s.q1);
        assert_eq!(type7(&fits, 0.75), s.q3);
        assert_eq!(fits[0], s.min);
        assert_eq!(*fits.last().unwrap(), s.max);
    }

    let svg = std::fs::read_to_string(&paths[2]).unwrap();
    assert!(svg.starts_with("<svg"));
    for e in [Estimator::GaussianWithOracle, Estimator::Nss] {
        assert_eq!(svg.matches(&format!("data-estimator=\"{}\"", e.name())).count(), 1, "{}", e.name());
    }
}

#[test]
fn invalid_configs_are_rejected() {
    for c in [
        BenchmarkConfig { runs: 0, ..Default::default() },
        BenchmarkConfig { n_test: 1, ..Default::default() },
        BenchmarkConfig { estimators: vec![], ..Default::default() },
    ] {
        assert!(run_benchmark(&c).is_err());
    }
}
