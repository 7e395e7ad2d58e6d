use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use rkhs_sysid::bench::{self, BenchmarkConfig, Estimator, ReportFormat, Scenario};
use rkhs_sysid::hyper::{self, KernelFamily, TunerConfig};
use rkhs_sysid::io::{self, DatasetSidecar};
use rkhs_sysid::kernels::{IrKernelSpec, KernelSpec};
use rkhs_sysid::mercer::{self, ConsistencyConfig};
use rkhs_sysid::stability;
use rkhs_sysid::{Memory, RnModel};

#[derive(Parser)]
#[command(name = "rkhs-sysid", version, about = "Kernel-based system identification experiments")]
struct Cli {
    /// Master seed; overrides seeds in config files.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Directory for outputs without an explicit path.
    #[arg(long, global = true, default_value = ".")]
    out_dir: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate train/test data from the benchmark systems.
    Simulate(SimulateArgs),
    /// Fit a regularization network with a fixed kernel and γ.
    Fit(FitArgs),
    /// Predict with a fitted model; writes `t,y_hat`.
    Predict(PredictArgs),
    /// Marginal-likelihood hyperparameter search.
    Tune(TuneArgs),
    /// Stability verdict for a kernel spec.
    StabilityCheck(StabilityArgs),
    /// Compare the truncated stable-spline eigenexpansion with its closed form.
    Mercer(MercerArgs),
    /// Consistency experiment: error versus N.
    Consistency(ConsistencyArgs),
    /// Monte Carlo benchmark with boxplot reports.
    Benchmark(BenchmarkArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum ScenarioArg {
    S1,
    S2,
}

impl From<ScenarioArg> for Scenario {
    fn from(s: ScenarioArg) -> Self {
        match s {
            ScenarioArg::S1 => Scenario::S1,
            ScenarioArg::S2 => Scenario::S2,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum EstimatorArg {
    GaussianWithOracle,
    Nss,
}

impl From<EstimatorArg> for Estimator {
    fn from(e: EstimatorArg) -> Self {
        match e {
            EstimatorArg::GaussianWithOracle => Estimator::GaussianWithOracle,
            EstimatorArg::Nss => Estimator::Nss,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Json,
    Csv,
    Svg,
}

impl From<FormatArg> for ReportFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Json => ReportFormat::Json,
            FormatArg::Csv => ReportFormat::Csv,
            FormatArg::Svg => ReportFormat::Svg,
        }
    }
}

#[derive(Args)]
struct DataArgs {
    /// `t,y` CSV.
    #[arg(long)]
    data: PathBuf,
    /// Sidecar JSON (default: the data path with a .json extension).
    #[arg(long)]
    sidecar: Option<PathBuf>,
}

impl DataArgs {
    fn load(&self) -> anyhow::Result<rkhs_sysid::Dataset> {
        io::load_dataset(&self.data, self.sidecar.as_deref())
            .with_context(|| format!("loading dataset {}", self.data.display()))
    }
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long, value_enum, default_value = "s2")]
    scenario: ScenarioArg,
    #[arg(long, default_value_t = 500)]
    n_train: usize,
    #[arg(long, default_value_t = 500)]
    n_test: usize,
    #[arg(long, default_value_t = 4.0)]
    input_variance: f64,
    #[arg(long, default_value_t = 4.0)]
    noise_variance: f64,
    /// Regressor length written to the sidecars.
    #[arg(long, default_value_t = 100)]
    lags: usize,
    /// Sidecars declare finite memory instead of a truncated infinite one.
    #[arg(long)]
    finite: bool,
}

#[derive(Args)]
struct FitArgs {
    #[arg(long)]
    kernel: PathBuf,
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    gamma: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    data: DataArgs,
    /// Output CSV (default: stdout).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TuneArgs {
    /// gaussian, laplacian, nss, nss_diagonal or stable_spline_fir.
    #[arg(long)]
    kernel_family: String,
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, default_value_t = 8)]
    starts: usize,
    #[arg(long, default_value_t = 300)]
    max_evals: usize,
    /// NSS lag truncation (default: the regressor length).
    #[arg(long)]
    truncation: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write the model fitted at the optimum.
    #[arg(long)]
    model_out: Option<PathBuf>,
}

#[derive(Args)]
struct StabilityArgs {
    /// Kernel spec JSON: an input-space kernel or a lag kernel.
    #[arg(long)]
    kernel: PathBuf,
    /// Probe length for lag kernels (default: chosen from the decay rate).
    #[arg(long)]
    probe_length: Option<usize>,
    #[arg(long, default_value_t = stability::DEFAULT_PROBES)]
    probes: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct MercerArgs {
    #[arg(long, default_value_t = 1.0)]
    beta: f64,
    /// Number of eigenpairs kept.
    #[arg(long = "L", default_value_t = 2000)]
    terms: usize,
    /// Points per axis of the uniform `t` grid on `[0, t_max]`.
    #[arg(long, default_value_t = 100)]
    grid: usize,
    #[arg(long, default_value_t = 5.0)]
    t_max: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ConsistencyArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BenchmarkArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    scenario: Option<ScenarioArg>,
    #[arg(long)]
    runs: Option<usize>,
    /// 100 runs, 1000/1000 samples, oracle grid 1..50.
    #[arg(long)]
    paper_scale: bool,
    #[arg(long, value_enum, value_delimiter = ',')]
    estimators: Vec<EstimatorArg>,
    #[arg(long, value_enum, value_delimiter = ',', default_value = "json,csv,svg")]
    formats: Vec<FormatArg>,
    #[arg(long, default_value = "benchmark")]
    stem: String,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum AnyKernel {
    Input(KernelSpec),
    Lag(IrKernelSpec),
}

#[derive(Serialize)]
struct MercerSummary {
    beta: f64,
    terms: usize,
    grid: usize,
    t_max: f64,
    max_abs_error: f64,
}

#[derive(Serialize)]
struct ConsistencySummary<'a> {
    monotone_fraction: f64,
    alpha: f64,
    gamma0: f64,
    summary: &'a [mercer::CurvePoint],
}

fn out_path(cli: &Cli, explicit: &Option<PathBuf>, default: &str) -> anyhow::Result<PathBuf> {
    let p = explicit.clone().unwrap_or_else(|| cli.out_dir.join(default));
    if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    Ok(p)
}

fn simulate(cli: &Cli, a: &SimulateArgs) -> anyhow::Result<()> {
    let config = BenchmarkConfig {
        scenario: a.scenario.into(),
        runs: 1,
        n_train: a.n_train,
        n_test: a.n_test,
        nss_truncation: a.lags.max(1),
        input_variance: a.input_variance,
        noise_variance: a.noise_variance,
        master_seed: cli.seed.unwrap_or(0),
        ..Default::default()
    };
    config.validate()?;
    let d = bench::run_data(&config, 0)?;
    let memory = if a.finite { Memory::Finite(a.lags) } else { Memory::Infinite { horizon: a.lags } };
    std::fs::create_dir_all(&cli.out_dir)?;
    for (name, u, y, header) in [("train", &d.u_train, &d.y_train, "y"), ("test", &d.u_test, &d.y_test, "y")] {
        let u_name = format!("{name}_u.csv");
        io::write_signal_csv(&cli.out_dir.join(&u_name), u, "value")?;
        let data = cli.out_dir.join(format!("{name}.csv"));
        io::write_signal_csv(&data, y, header)?;
        io::write_json(&io::sidecar_path(&data), &DatasetSidecar { input: u_name.into(), memory, zero_pad: false })?;
    }
    io::write_json(&cli.out_dir.join("system.json"), &d.system)?;
    eprintln!("wrote train/test data to {}", cli.out_dir.display());
    Ok(())
}

fn fit(cli: &Cli, a: &FitArgs) -> anyhow::Result<()> {
    let kernel: KernelSpec = io::read_json(&a.kernel).with_context(|| format!("reading {}", a.kernel.display()))?;
    let data = a.data.load()?;
    let model = rkhs_sysid::fit_rn(&kernel, &data, a.gamma)?;
    let out = out_path(cli, &a.out, "model.json")?;
    io::write_json(&out, &model)?;
    eprintln!("fitted {} coefficients, residual {:.3e}; wrote {}", model.n(), model.residual, out.display());
    Ok(())
}

fn predict(a: &PredictArgs) -> anyhow::Result<()> {
    let model: RnModel = io::read_json(&a.model).with_context(|| format!("reading {}", a.model.display()))?;
    let data = a.data.load()?;
    let y_hat = model.predict_many(&data.locations)?;
    match &a.out {
        Some(p) => io::write_predictions(p, &data.timestamps, &y_hat)?,
        None => {
            println!("t,y_hat");
            for (t, y) in data.timestamps.iter().zip(&y_hat) {
                println!("{t},{y}");
            }
        }
    }
    Ok(())
}

fn tune(cli: &Cli, a: &TuneArgs) -> anyhow::Result<()> {
    let mut family: KernelFamily = a.kernel_family.parse()?;
    if let (KernelFamily::Nss { truncation, .. }, Some(t)) = (&mut family, a.truncation) {
        *truncation = Some(t);
    }
    let data = a.data.load()?;
    let config = TunerConfig { starts: a.starts, max_evals: a.max_evals, ..Default::default() };
    let result = hyper::tune_ml(&family, &data, &config, cli.seed.unwrap_or(0))?;
    let out = out_path(cli, &a.out, "hyper.json")?;
    io::write_json(&out, &result)?;
    if result.boundary {
        eprintln!("warning: optimum on the search boundary for {:?}", result.boundary_params);
    }
    if let Some(p) = &a.model_out {
        io::write_json(p, &result.fit(&data)?)?;
    }
    eprintln!("nll {:.6}, λ {:.4e}, σ² {:.4e}; wrote {}", result.nll_value, result.best.lambda, result.best.sigma2, out.display());
    Ok(())
}

fn stability_check(cli: &Cli, a: &StabilityArgs) -> anyhow::Result<()> {
    let text = std::fs::read_to_string(&a.kernel).with_context(|| format!("reading {}", a.kernel.display()))?;
    let kernel: AnyKernel = serde_json::from_str(&text).context("not a kernel spec")?;
    let verdict = match kernel {
        AnyKernel::Input(k) => {
            k.validate()?;
            stability::certify(&k)
        }
        AnyKernel::Lag(k) => {
            k.validate()?;
            let p = a.probe_length.unwrap_or_else(|| stability::default_probe_length(&k));
            stability::summability_test(&k, p, a.probes, cli.seed.unwrap_or(0))
        }
    };
    let json = serde_json::to_string_pretty(&verdict)?;
    match &a.out {
        Some(p) => io::write_json(p, &verdict)?,
        None => println!("{json}"),
    }
    Ok(())
}

fn mercer_check(cli: &Cli, a: &MercerArgs) -> anyhow::Result<()> {
    if !(a.beta > 0.0 && a.t_max > 0.0) || a.grid < 2 || a.terms == 0 {
        bail!(rkhs_sysid::Error::InvalidArgument("need beta > 0, t_max > 0, grid ≥ 2 and L ≥ 1".into()));
    }
    let ts: Vec<f64> = (0..a.grid).map(|k| a.t_max * k as f64 / (a.grid - 1) as f64).collect();
    let out = out_path(cli, &a.out, "mercer.csv")?;
    let mut w = std::fs::File::create(&out).map(std::io::BufWriter::new)?;
    use std::io::Write;
    writeln!(w, "t,s,truncated,exact,abs_error")?;
    let mut worst = 0.0f64;
    for &t in &ts {
        for &s in &ts {
            let approx = mercer::truncated_ss_kernel(a.beta, a.terms, t, s);
            let exact = (-a.beta * t.max(s)).exp();
            worst = worst.max((approx - exact).abs());
            writeln!(w, "{t},{s},{approx},{exact},{}", (approx - exact).abs())?;
        }
    }
    w.flush()?;
    let summary = MercerSummary { beta: a.beta, terms: a.terms, grid: a.grid, t_max: a.t_max, max_abs_error: worst };
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(())
}

fn consistency(cli: &Cli, a: &ConsistencyArgs) -> anyhow::Result<()> {
    let mut config: ConsistencyConfig = match &a.config {
        Some(p) => io::read_json(p).with_context(|| format!("reading {}", p.display()))?,
        None => ConsistencyConfig::default(),
    };
    if let Some(s) = cli.seed {
        config.master_seed = s;
    }
    let curve = mercer::consistency_experiment(&config)?;
    let out = out_path(cli, &a.out, "consistency.csv")?;
    let mut w = std::fs::File::create(&out).map(std::io::BufWriter::new)?;
    use std::io::Write;
    writeln!(w, "N,seed,error")?;
    for c in &curve.cells {
        let e = c.error.map_or_else(|| "NaN".to_string(), |e| e.to_string());
        writeln!(w, "{},{},{e}", c.n, c.seed)?;
    }
    w.flush()?;
    let summary = ConsistencySummary {
        monotone_fraction: curve.monotone_fraction(),
        alpha: config.alpha,
        gamma0: config.gamma0,
        summary: &curve.summary,
    };
    io::write_json(&out.with_extension("summary.json"), &summary)?;
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(())
}

fn benchmark(cli: &Cli, a: &BenchmarkArgs) -> anyhow::Result<()> {
    let mut config: BenchmarkConfig = match (&a.config, a.paper_scale) {
        (Some(p), _) => io::read_json(p).with_context(|| format!("reading {}", p.display()))?,
        (None, true) => BenchmarkConfig::paper_scale(a.scenario.map_or(Scenario::S2, Into::into)),
        (None, false) => BenchmarkConfig::default(),
    };
    if let Some(s) = a.scenario {
        config.scenario = s.into();
    }
    if let Some(r) = a.runs {
        config.runs = r;
    }
    if !a.estimators.is_empty() {
        config.estimators = a.estimators.iter().map(|&e| e.into()).collect();
    }
    if let Some(s) = cli.seed {
        config.master_seed = s;
    }
    config.validate()?;
    let report = bench::run_benchmark(&config)?;
    let formats: Vec<ReportFormat> = a.formats.iter().map(|&f| f.into()).collect();
    let paths = bench::emit_report(&report, &cli.out_dir, &a.stem, &formats)?;
    for s in &report.summary {
        eprintln!(
            "{}: median {:.2}, IQR [{:.2}, {:.2}], {} fits, {} failures",
            s.label, s.median, s.q1, s.q3, s.count, s.failures
        );
    }
    for p in paths {
        eprintln!("wrote {}", p.display());
    }
    Ok(())
}

fn run(cli: &Cli) -> anyhow::Result<()> {
    if let Some(w) = cli.workers {
        if w == 0 {
            bail!(rkhs_sysid::Error::InvalidArgument("--workers must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new().num_threads(w).build_global()?;
    }
    match &cli.command {
        Command::Simulate(a) => simulate(cli, a),
        Command::Fit(a) => fit(cli, a),
        Command::Predict(a) => predict(a),
        Command::Tune(a) => tune(cli, a),
        Command::StabilityCheck(a) => stability_check(cli, a),
        Command::Mercer(a) => mercer_check(cli, a),
        Command::Consistency(a) => consistency(cli, a),
        Command::Benchmark(a) => benchmark(cli, a),
    }
}

/// 3 for numerical failures, 2 for everything else (configuration, I/O).
fn exit_code(err: &anyhow::Error) -> u8 {
    match err.chain().find_map(|e| e.downcast_ref::<rkhs_sysid::Error>()) {
        Some(e) if e.is_numerical() => 3,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
