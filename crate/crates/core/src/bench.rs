//! Monte Carlo benchmark: NSS with marginal-likelihood tuning against the
//! Gaussian kernel with oracle-selected regressor length, on S1 or S2.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hyper::{oracle_select_m, tune_ml, KernelFamily, OracleData, TunerConfig, ORACLE_NOTE};
use crate::kernels::NssVariant;
use crate::mercer::quantile;
use crate::signal::{fit_metric, Dataset, Memory, Signal};
use crate::systems::{random_linear_system, simulate_s2, white_input, LinearSystem, S1_LAGS};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    S1,
    S2,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Estimator {
    GaussianWithOracle,
    Nss,
}

impl Estimator {
    pub fn name(&self) -> &'static str {
        match self {
            Self::GaussianWithOracle => "gaussian-with-oracle",
            Self::Nss => "nss",
        }
    }

    pub fn label(&self) -> String {
        match self {
            Self::GaussianWithOracle => format!("gaussian-with-oracle ({ORACLE_NOTE})"),
            Self::Nss => "nss (marginal likelihood on training data)".into(),
        }
    }

    fn stream_tag(&self) -> u64 {
        match self {
            Self::GaussianWithOracle => 11,
            Self::Nss => 12,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchmarkConfig {
    pub scenario: Scenario,
    pub runs: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub estimators: Vec<Estimator>,
    pub nss_tuner: TunerConfig,
    pub oracle_tuner: TunerConfig,
    pub m_grid: Vec<usize>,
    pub nss_truncation: usize,
    pub input_variance: f64,
    pub noise_variance: f64,
    pub master_seed: u64,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        Self {
            scenario: Scenario::S2,
            runs: 20,
            n_train: 500,
            n_test: 500,
            estimators: vec![Estimator::GaussianWithOracle, Estimator::Nss],
            nss_tuner: TunerConfig { starts: 4, max_evals: 200, ..Default::default() },
            oracle_tuner: TunerConfig { starts: 2, max_evals: 120, ..Default::default() },
            m_grid: (1..=25).collect(),
            nss_truncation: 100,
            input_variance: 4.0,
            noise_variance: 4.0,
            master_seed: 0,
        }
    }
}

impl BenchmarkConfig {
    /// The full-size protocol: 100 runs, 1000/1000 samples, m up to 50.
    pub fn paper_scale(scenario: Scenario) -> Self {
        Self {
            scenario,
            runs: 100,
            n_train: 1000,
            n_test: 1000,
            nss_tuner: TunerConfig::default(),
            oracle_tuner: TunerConfig::default(),
            m_grid: (1..=50).collect(),
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.runs == 0 || self.n_test < 2 || self.n_train == 0 || self.estimators.is_empty() {
            return Err(Error::InvalidArgument("need runs ≥ 1, n_test ≥ 2, n_train ≥ 1 and an estimator".into()));
        }
        if self.m_grid.is_empty() || self.m_grid.contains(&0) || self.nss_truncation == 0 {
            return Err(Error::InvalidArgument("m grid and NSS truncation must be positive".into()));
        }
        if !(self.input_variance > 0.0 && self.noise_variance >= 0.0) {
            return Err(Error::InvalidArgument("bad variances".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitRecord {
    pub estimator: Estimator,
    pub fit: Option<f64>,
    pub failure: Option<String>,
    /// Oracle choice of `m` (oracle only).
    pub m_star: Option<usize>,
    pub hyper: Option<crate::hyper::HyperPoint>,
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run: usize,
    pub fits: Vec<FitRecord>,
    pub seconds: f64,
}

/// Boxplot statistics of one estimator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub estimator: Estimator,
    pub label: String,
    pub count: usize,
    pub failures: usize,
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
    pub min: f64,
    pub max: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub config: BenchmarkConfig,
    pub runs: Vec<RunRecord>,
    pub summary: Vec<Summary>,
}

impl BenchmarkReport {
    pub fn summary_of(&self, e: Estimator) -> Option<&Summary> {
        self.summary.iter().find(|s| s.estimator == e)
    }

    pub fn fits_of(&self, e: Estimator) -> Vec<f64> {
        self.runs.iter().flat_map(|r| r.fits.iter()).filter(|f| f.estimator == e).filter_map(|f| f.fit).collect()
    }
}

/// Seed derived from the master seed and a tuple of identifiers.
fn derive_seed(master: u64, parts: &[u64]) -> u64 {
    // splitmix64 over the parts
    let mut z = master;
    for &p in parts {
        z = z.wrapping_add(p.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^= z >> 31;
    }
    z
}

/// Training and test signals of one run.
pub struct RunData {
    pub system: LinearSystem,
    pub u_train: Signal,
    pub y_train: Signal,
    pub u_test: Signal,
    /// Noiseless.
    pub y_test: Signal,
}

fn tail(y: &Signal, n: usize) -> Result<Signal> {
    let s = y.samples();
    if s.len() < n {
        return Err(Error::InvalidArgument("simulation shorter than requested".into()));
    }
    Signal::discrete(s[s.len() - n..].to_vec(), y.end_index() - n as i64 + 1)
}

/// Draws the data of run `run`; a pure function of `(master_seed, run)`.
pub fn run_data(config: &BenchmarkConfig, run: usize) -> Result<RunData> {
    let seed = |tag: u64| derive_seed(config.master_seed, &[run as u64, tag]);
    let system = match config.scenario {
        Scenario::S1 => LinearSystem::zero(),
        Scenario::S2 => random_linear_system(10, 0.95, 10.0, seed(1))?,
    };
    let m_max = *config.m_grid.iter().max().unwrap();
    let warmup = system.effective_response().len().max(config.nss_truncation).max(m_max).max(S1_LAGS) + 1;
    let mut rng = ChaCha8Rng::seed_from_u64(seed(2));
    let u_train = white_input(warmup + config.n_train, config.input_variance, 0, &mut rng)?;
    let u_test = white_input(warmup + config.n_test, config.input_variance, 0, &mut rng)?;
    let y_train = tail(&simulate_s2(&u_train, &system, config.noise_variance, seed(3))?, config.n_train)?;
    let y_test = tail(&simulate_s2(&u_test, &system, 0.0, seed(4))?, config.n_test)?;
    Ok(RunData { system, u_train, y_train, u_test, y_test })
}

fn run_estimator(config: &BenchmarkConfig, data: &RunData, e: Estimator, seed: u64) -> Result<FitRecord> {
    match e {
        Estimator::Nss => {
            let memory = Memory::Infinite { horizon: config.nss_truncation };
            let train = Dataset::from_signals(&data.u_train, &data.y_train, memory, false)?;
            let test = Dataset::from_signals(&data.u_test, &data.y_test, memory, false)?;
            let family = KernelFamily::Nss { truncation: Some(config.nss_truncation), variant: NssVariant::Full };
            let tuned = tune_ml(&family, &train, &config.nss_tuner, seed)?;
            let model = tuned.fit(&train)?;
            let fit = fit_metric(&test.outputs, &model.predict_many(&test.locations)?)?;
            Ok(FitRecord { estimator: e, fit: Some(fit), failure: None, m_star: None, hyper: Some(tuned.best), seconds: 0.0 })
        }
        Estimator::GaussianWithOracle => {
            let od = OracleData { u_train: &data.u_train, y_train: &data.y_train, u_test: &data.u_test, y_test: &data.y_test };
            let r = oracle_select_m(&od, &config.m_grid, &config.oracle_tuner, seed)?;
            let hyper = r.table.iter().find(|t| t.m == r.m_star).and_then(|t| t.hyper.clone());
            Ok(FitRecord { estimator: e, fit: Some(r.fit), failure: None, m_star: Some(r.m_star), hyper, seconds: 0.0 })
        }
    }
}

/// Runs the benchmark; runs execute on the current rayon pool and are
/// reassembled in run order.
pub fn run_benchmark(config: &BenchmarkConfig) -> Result<BenchmarkReport> {
    config.validate()?;
    let mut estimators = config.estimators.clone();
    estimators.sort();
    estimators.dedup();
    let runs: Vec<RunRecord> = (0..config.runs)
        .into_par_iter()
        .map(|run| {
            let started = Instant::now();
            let data = run_data(config, run);
            let fits = estimators
                .iter()
                .map(|&e| {
                    let t = Instant::now();
                    let seed = derive_seed(config.master_seed, &[run as u64, e.stream_tag()]);
                    let result = data.as_ref().map_err(|err| Error::InvalidArgument(err.to_string()));
                    let mut rec = match result.and_then(|d| run_estimator(config, d, e, seed)) {
                        Ok(r) => r,
                        Err(err) => FitRecord {
                            estimator: e,
                            fit: None,
                            failure: Some(err.to_string()),
                            m_star: None,
                            hyper: None,
                            seconds: 0.0,
                        },
                    };
                    rec.seconds = t.elapsed().as_secs_f64();
                    rec
                })
                .collect();
            RunRecord { run, fits, seconds: started.elapsed().as_secs_f64() }
        })
        .collect();
    let summary = estimators.iter().map(|&e| summarize(e, &runs)).collect();
    Ok(BenchmarkReport { config: config.clone(), runs, summary })
}

fn summarize(e: Estimator, runs: &[RunRecord]) -> Summary {
    let recs: Vec<&FitRecord> = runs.iter().flat_map(|r| r.fits.iter()).filter(|f| f.estimator == e).collect();
    let mut fits: Vec<f64> = recs.iter().filter_map(|f| f.fit).collect();
    fits.sort_by(f64::total_cmp);
    summary_from_sorted(e, &fits, recs.len() - fits.len())
}

/// Boxplot statistics from sorted fits (quartiles by linear interpolation).
pub fn summary_from_sorted(e: Estimator, sorted: &[f64], failures: usize) -> Summary {
    Summary {
        estimator: e,
        label: e.label(),
        count: sorted.len(),
        failures,
        median: quantile(sorted, 0.5),
        q1: quantile(sorted, 0.25),
        q3: quantile(sorted, 0.75),
        min: sorted.first().copied().unwrap_or(f64::NAN),
        max: sorted.last().copied().unwrap_or(f64::NAN),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Csv,
    Svg,
}

impl ReportFormat {
    pub fn extension(&self) -> &'static str {
        match self {
            Self::Json => "json",
            Self::Csv => "csv",
            Self::Svg => "svg",
        }
    }
}

/// Writes `<stem>.<ext>` into `dir` for each format; returns the paths.
pub fn emit_report(report: &BenchmarkReport, dir: &Path, stem: &str, formats: &[ReportFormat]) -> Result<Vec<PathBuf>> {
    if report.summary.iter().all(|s| s.count == 0) {
        return Err(Error::InvalidArgument("report has no successful fits".into()));
    }
    std::fs::create_dir_all(dir)?;
    let mut paths = Vec::new();
    for f in formats {
        let path = dir.join(format!("{stem}.{}", f.extension()));
        match f {
            ReportFormat::Json => std::fs::write(&path, serde_json::to_string_pretty(report)?)?,
            ReportFormat::Csv => {
                let mut w = csv::Writer::from_path(&path)?;
                w.write_record(["run", "estimator", "fit"])?;
                for r in &report.runs {
                    for fit in &r.fits {
                        if let Some(v) = fit.fit {
                            w.write_record([r.run.to_string(), fit.estimator.name().to_string(), v.to_string()])?;
                        }
                    }
                }
                w.flush()?;
            }
            ReportFormat::Svg => std::fs::write(&path, boxplot_svg(report))?,
        }
        paths.push(path);
    }
    Ok(paths)
}

/// One box per estimator from the summary quartiles; whiskers at min/max.
pub fn boxplot_svg(report: &BenchmarkReport) -> String {
    let boxes: Vec<&Summary> = report.summary.iter().filter(|s| s.count > 0).collect();
    let (w, h, pad) = (160.0 * boxes.len().max(1) as f64 + 80.0, 400.0, 40.0);
    let lo = boxes.iter().map(|s| s.min).fold(f64::INFINITY, f64::min).min(0.0);
    let hi = boxes.iter().map(|s| s.max).fold(f64::NEG_INFINITY, f64::max).max(100.0);
    let y = |v: f64| pad + (hi - v) / (hi - lo) * (h - 2.0 * pad);
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}">"#);
    let _ = writeln!(s, r#"<text x="{}" y="20" font-size="13">fit (%), {:?}, {} runs</text>"#, pad, report.config.scenario, report.config.runs);
    for (k, b) in boxes.iter().enumerate() {
        let cx = 80.0 + 160.0 * k as f64 + 40.0;
        let _ = writeln!(s, r#"<g class="box" data-estimator="{}">"#, b.estimator.name());
        let _ = writeln!(s, r#"<line x1="{cx}" x2="{cx}" y1="{:.2}" y2="{:.2}" stroke="black"/>"#, y(b.max), y(b.min));
        let _ = writeln!(
            s,
            r#"<rect x="{:.2}" y="{:.2}" width="60" height="{:.2}" fill="lightsteelblue" stroke="black"/>"#,
            cx - 30.0,
            y(b.q3),
            (y(b.q1) - y(b.q3)).max(0.5)
        );
        let _ = writeln!(s, r#"<line x1="{:.2}" x2="{:.2}" y1="{:.2}" y2="{:.2}" stroke="red" stroke-width="2"/>"#, cx - 30.0, cx + 30.0, y(b.median), y(b.median));
        let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" font-size="11">{}</text>"#, cx - 60.0, h - 10.0, b.estimator.name());
        let _ = writeln!(s, "</g>");
    }
    let _ = writeln!(s, r#"<text x="{pad}" y="{:.2}" font-size="10">{}</text>"#, h - 26.0, ORACLE_NOTE);
    s.push_str("</svg>\n");
    s
}
