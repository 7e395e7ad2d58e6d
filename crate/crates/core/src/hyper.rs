//! Hyperparameter selection by Gaussian evidence (marginal likelihood).
//!
//! Outputs are modelled as `Y ~ N(0, Z)` with `Z = λ𝐊 + σ²I`. A point
//! `(θ_kernel, λ, σ²)` maps to the regularization network with kernel `λ𝒦`
//! and `γ = σ²/N`, for which `ĉ = Z⁻¹Y`.
//!
//! The search runs over the kernel parameters and `r = σ²/λ`; for fixed
//! `(θ_kernel, r)` the optimal `λ` is `Yᵀ(𝐊 + rI)⁻¹Y / N`, clamped to the
//! box, so each objective evaluation costs one Cholesky factorization.

use std::collections::BTreeMap;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{GramMatrix, IrKernelSpec, KernelSpec, LagGrid, NssVariant};
use crate::linalg::{factor_with_jitter, Matrix};
use crate::optim::{halton, nelder_mead, SimplexOptions};
use crate::rn::{fit_with_gram, RnModel};
use crate::signal::{fit_metric, Dataset, InputLocation, Memory, Signal};

const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// `½ log det Z + ½ YᵀZ⁻¹Y + (N/2) log 2π` with `Z = λ𝐊 + σ²I`.
pub fn nll(y: &[f64], gram: &GramMatrix, lambda: f64, sigma2: f64) -> Result<f64> {
    if !(lambda > 0.0 && sigma2 > 0.0) {
        return Err(Error::InvalidArgument("lambda and sigma2 must be positive".into()));
    }
    if y.len() != gram.n() {
        return Err(Error::DimensionMismatch { expected: gram.n(), found: y.len() });
    }
    let n = y.len() as f64;
    let z = Matrix::from_fn(gram.n(), gram.n(), |i, j| lambda * gram.get(i, j));
    let f = factor_with_jitter(&z, sigma2)?;
    Ok(0.5 * f.logdet() + 0.5 * f.inv_quadratic(y) + 0.5 * n * LN_2PI)
}

/// A hyperparameter vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HyperPoint {
    pub kernel_params: BTreeMap<String, f64>,
    pub lambda: f64,
    pub sigma2: f64,
}

impl HyperPoint {
    /// Regularization parameter of the equivalent network.
    pub fn gamma(&self, n: usize) -> f64 {
        self.sigma2 / n as f64
    }
}

/// Kernel families the tuner knows how to parametrize.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum KernelFamily {
    /// Parameter `eta`.
    Gaussian,
    /// Parameter `eta`.
    Laplacian,
    /// Parameters `alpha`, `eta`.
    Nss {
        #[serde(default)]
        truncation: Option<usize>,
        #[serde(default)]
        variant: NssVariant,
    },
    /// Parameter `alpha`; FIR on the location length.
    StableSplineFir,
    /// Parameter `alpha`.
    StableSplineIir { truncation: usize },
    /// Parameter `beta`.
    StableSplineCt { grid: LagGrid },
}

impl FromStr for KernelFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "gaussian" => Self::Gaussian,
            "laplacian" => Self::Laplacian,
            "nss" => Self::Nss { truncation: None, variant: NssVariant::Full },
            "nss_diagonal" => Self::Nss { truncation: None, variant: NssVariant::Diagonal },
            "stable_spline_fir" => Self::StableSplineFir,
            _ => return Err(Error::InvalidArgument(format!("unknown kernel family '{s}'"))),
        })
    }
}

impl KernelFamily {
    pub fn param_names(&self) -> &'static [&'static str] {
        match self {
            Self::Gaussian | Self::Laplacian => &["eta"],
            Self::Nss { .. } => &["alpha", "eta"],
            Self::StableSplineFir | Self::StableSplineIir { .. } => &["alpha"],
            Self::StableSplineCt { .. } => &["beta"],
        }
    }

    /// Kernel for the given parameters and location length.
    pub fn build(&self, params: &BTreeMap<String, f64>, location_len: usize) -> Result<KernelSpec> {
        let get = |name: &str| {
            params.get(name).copied().ok_or_else(|| Error::InvalidArgument(format!("missing parameter '{name}'")))
        };
        Ok(match self {
            Self::Gaussian => KernelSpec::Gaussian { eta: get("eta")? },
            Self::Laplacian => KernelSpec::Laplacian { eta: get("eta")? },
            Self::Nss { truncation, variant } => KernelSpec::Nss {
                alpha: get("alpha")?,
                eta: get("eta")?,
                truncation: *truncation,
                variant: *variant,
            },
            Self::StableSplineFir => KernelSpec::LinearFir {
                k: IrKernelSpec::StableSpline { alpha: get("alpha")? },
                dim: location_len,
            },
            Self::StableSplineIir { truncation } => KernelSpec::LinearIir {
                k: IrKernelSpec::StableSpline { alpha: get("alpha")? },
                truncation: *truncation,
            },
            Self::StableSplineCt { grid } => {
                KernelSpec::LinearCt { k: IrKernelSpec::StableSplineCt { beta: get("beta")? }, grid: *grid }
            }
        })
    }
}

/// Box bounds (natural scale; the search runs on their logarithms).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    pub lambda: (f64, f64),
    pub sigma2: (f64, f64),
    pub eta: (f64, f64),
    pub alpha: (f64, f64),
    pub beta: (f64, f64),
}

impl Default for SearchSpace {
    fn default() -> Self {
        Self { lambda: (1e-4, 1e4), sigma2: (1e-6, 1e4), eta: (1e-4, 1e4), alpha: (0.5, 0.999), beta: (1e-2, 1e2) }
    }
}

impl SearchSpace {
    fn param(&self, name: &str) -> (f64, f64) {
        match name {
            "eta" => self.eta,
            "alpha" => self.alpha,
            "beta" => self.beta,
            _ => unreachable!("unknown parameter {name}"),
        }
    }

    fn validate(&self) -> Result<()> {
        for (name, (lo, hi)) in
            [("lambda", self.lambda), ("sigma2", self.sigma2), ("eta", self.eta), ("alpha", self.alpha), ("beta", self.beta)]
        {
            if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
                return Err(Error::InvalidArgument(format!("bad bounds for {name}: [{lo}, {hi}]")));
            }
        }
        if self.alpha.1 >= 1.0 {
            return Err(Error::InvalidArgument("alpha bounds must lie inside (0, 1)".into()));
        }
        Ok(())
    }
}

/// Tuner settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TunerConfig {
    pub starts: usize,
    pub max_evals: usize,
    #[serde(default)]
    pub space: SearchSpace,
}

impl Default for TunerConfig {
    fn default() -> Self {
        Self { starts: 8, max_evals: 300, space: SearchSpace::default() }
    }
}

/// One local search.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StartRecord {
    pub start: HyperPoint,
    pub best: Option<HyperPoint>,
    pub nll_value: f64,
    pub evaluations: usize,
    /// Best objective after every simplex iteration.
    pub nll_trace: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TuneResult {
    pub best: HyperPoint,
    pub nll_value: f64,
    pub starts_tried: usize,
    /// True when some optimized coordinate sits on its bound.
    pub boundary: bool,
    pub boundary_params: Vec<String>,
    /// The `λ`-scaled kernel of the equivalent network.
    pub kernel: KernelSpec,
    /// `σ²/N`.
    pub gamma: f64,
    pub trace: Vec<StartRecord>,
}

impl TuneResult {
    /// Fits the equivalent regularization network on `data`.
    pub fn fit(&self, data: &Dataset) -> Result<RnModel> {
        let gram = self.kernel.gram(&data.locations)?;
        fit_with_gram(&self.kernel, data, gram, self.gamma)
    }
}

/// Profiled objective: for fixed kernel and `r = σ²/λ`, minimizes over `λ`.
struct Profile<'a> {
    y: &'a [f64],
    space: &'a SearchSpace,
}

impl Profile<'_> {
    /// Returns `(nll, λ, σ²)`.
    fn eval(&self, gram: &Matrix, r: f64) -> Result<(f64, f64, f64)> {
        let n = self.y.len() as f64;
        let f = factor_with_jitter(gram, r)?;
        let q = f.inv_quadratic(self.y);
        let (llo, lhi) = self.space.lambda;
        let (slo, shi) = self.space.sigma2;
        let lo = llo.max(slo / r);
        let hi = lhi.min(shi / r);
        if lo > hi * (1.0 + 1e-12) {
            return Ok((f64::INFINITY, lo, lo * r));
        }
        let lambda = (q / n).clamp(lo, hi.max(lo));
        let value = 0.5 * (n * lambda.ln() + f.logdet()) + 0.5 * q / lambda + 0.5 * n * LN_2PI;
        Ok((value, lambda, lambda * r))
    }
}

/// Builds Gram matrices for a family, caching what does not depend on the
/// parameters (pairwise squared distances for radial kernels).
enum GramCache {
    Radial { sq: Matrix, laplacian: bool },
    Generic,
}

impl GramCache {
    fn new(family: &KernelFamily, locations: &[InputLocation]) -> Self {
        match family {
            KernelFamily::Gaussian | KernelFamily::Laplacian => {
                let n = locations.len();
                let sq = Matrix::from_fn(n, n, |i, j| {
                    locations[i].values.iter().zip(&locations[j].values).map(|(a, b)| (a - b).powi(2)).sum()
                });
                Self::Radial { sq, laplacian: matches!(family, KernelFamily::Laplacian) }
            }
            _ => Self::Generic,
        }
    }

    fn gram(&self, kernel: &KernelSpec, locations: &[InputLocation]) -> Result<Matrix> {
        match (self, kernel) {
            (Self::Radial { sq, laplacian }, KernelSpec::Gaussian { eta } | KernelSpec::Laplacian { eta }) => {
                let n = sq.nrows();
                Ok(if *laplacian {
                    Matrix::from_fn(n, n, |i, j| (-sq.read(i, j).sqrt() / eta).exp())
                } else {
                    Matrix::from_fn(n, n, |i, j| (-sq.read(i, j) / eta).exp())
                })
            }
            _ => Ok(kernel.gram(locations)?.into_matrix()),
        }
    }
}

fn log_bounds(family: &KernelFamily, space: &SearchSpace) -> (Vec<f64>, Vec<f64>) {
    let mut lo = Vec::new();
    let mut hi = Vec::new();
    for name in family.param_names() {
        let (a, b) = space.param(name);
        lo.push(a.ln());
        hi.push(b.ln());
    }
    // r = σ²/λ
    lo.push((space.sigma2.0 / space.lambda.1).ln());
    hi.push((space.sigma2.1 / space.lambda.0).ln());
    (lo, hi)
}

fn near_bound(v: f64, (lo, hi): (f64, f64)) -> bool {
    let tol = 1e-3;
    (v.ln() - lo.ln()).abs() < tol || (v.ln() - hi.ln()).abs() < tol
}

/// Multi-start marginal-likelihood tuning.
///
/// Starts are a Halton sequence over the log box with a random shift drawn
/// from `seed`; each start runs a projected Nelder–Mead search. Starts are
/// independent and run on the current rayon pool.
pub fn tune_ml(family: &KernelFamily, data: &Dataset, config: &TunerConfig, seed: u64) -> Result<TuneResult> {
    config.space.validate()?;
    if config.starts == 0 {
        return Err(Error::InvalidArgument("at least one start is required".into()));
    }
    let len = data.locations[0].len();
    let names = family.param_names();
    let (lo, hi) = log_bounds(family, &config.space);
    let dim = lo.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shift: Vec<f64> = (0..dim).map(|_| rng.gen::<f64>()).collect();
    let starts: Vec<Vec<f64>> = (1..=config.starts)
        .map(|i| {
            halton(i, dim)
                .iter()
                .zip(&shift)
                .zip(lo.iter().zip(&hi))
                .map(|((h, s), (l, u))| l + (h + s).fract() * (u - l))
                .collect()
        })
        .collect();

    let cache = GramCache::new(family, &data.locations);
    let profile = Profile { y: &data.outputs, space: &config.space };
    let point = |z: &[f64]| -> Result<(f64, HyperPoint)> {
        let params: BTreeMap<String, f64> =
            names.iter().zip(z).map(|(n, v)| (n.to_string(), v.exp())).collect();
        let kernel = family.build(&params, len)?;
        let gram = cache.gram(&kernel, &data.locations)?;
        let (value, lambda, sigma2) = profile.eval(&gram, z[dim - 1].exp())?;
        Ok((value, HyperPoint { kernel_params: params, lambda, sigma2 }))
    };
    let to_point = |z: &[f64]| -> HyperPoint {
        point(z).map(|p| p.1).unwrap_or_else(|_| HyperPoint {
            kernel_params: names.iter().zip(z).map(|(n, v)| (n.to_string(), v.exp())).collect(),
            lambda: 1.0,
            sigma2: z[dim - 1].exp(),
        })
    };
    let opts = SimplexOptions { max_evals: config.max_evals, f_tol: 1e-9, x_tol: 1e-5, initial_step: 0.05 };

    let records: Vec<StartRecord> = starts
        .par_iter()
        .map(|z0| {
            let r = nelder_mead(|z| point(z).map_or(f64::INFINITY, |p| p.0), z0, &lo, &hi, opts);
            let best = point(&r.x).ok().filter(|p| p.0.is_finite());
            StartRecord {
                start: to_point(z0),
                nll_value: best.as_ref().map_or(f64::INFINITY, |b| b.0),
                best: best.map(|b| b.1),
                evaluations: r.evaluations,
                nll_trace: r.trace,
            }
        })
        .collect();

    let winner = records
        .iter()
        .filter(|r| r.best.is_some())
        .min_by(|a, b| a.nll_value.total_cmp(&b.nll_value))
        .ok_or(Error::TuningFailed { starts: records.len() })?;
    let best = winner.best.clone().unwrap();
    let nll_value = winner.nll_value;

    let mut boundary_params = Vec::new();
    for name in names {
        if near_bound(best.kernel_params[*name], config.space.param(name)) {
            boundary_params.push(name.to_string());
        }
    }
    if near_bound(best.lambda, config.space.lambda) {
        boundary_params.push("lambda".into());
    }
    if near_bound(best.sigma2, config.space.sigma2) {
        boundary_params.push("sigma2".into());
    }
    let kernel = KernelSpec::scaled(best.lambda, family.build(&best.kernel_params, len)?);
    Ok(TuneResult {
        gamma: best.gamma(data.len()),
        best,
        nll_value,
        starts_tried: records.len(),
        boundary: !boundary_params.is_empty(),
        boundary_params,
        kernel,
        trace: records,
    })
}

/// One row of the oracle table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleEntry {
    pub m: usize,
    pub fit: Option<f64>,
    pub hyper: Option<HyperPoint>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleResult {
    pub m_star: usize,
    pub fit: f64,
    pub table: Vec<OracleEntry>,
    /// Test-set access makes this a benchmark device only.
    pub note: String,
}

/// Signals for the oracle protocol. `y_test` must be noiseless.
pub struct OracleData<'a> {
    pub u_train: &'a Signal,
    pub y_train: &'a Signal,
    pub u_test: &'a Signal,
    pub y_test: &'a Signal,
}

/// Gaussian-kernel estimator with the regressor length `m` picked by test fit.
///
/// Per `m`: Gaussian-kernel regressors of length `m`, `(η, λ, σ²)` tuned on
/// the training data only, fit measured on the test outputs. Failures are
/// recorded in the table and that `m` is skipped.
pub fn oracle_select_m(data: &OracleData<'_>, m_grid: &[usize], config: &TunerConfig, seed: u64) -> Result<OracleResult> {
    if m_grid.is_empty() {
        return Err(Error::InvalidArgument("empty m grid".into()));
    }
    let eval_m = |m: usize| -> Result<(f64, HyperPoint)> {
        let train = Dataset::from_signals(data.u_train, data.y_train, Memory::Finite(m), false)?;
        let test = Dataset::from_signals(data.u_test, data.y_test, Memory::Finite(m), false)?;
        let tuned = tune_ml(&KernelFamily::Gaussian, &train, config, seed ^ (m as u64).wrapping_mul(0x9E37_79B9))?;
        let model = tuned.fit(&train)?;
        let y_hat = model.predict_many(&test.locations)?;
        Ok((fit_metric(&test.outputs, &y_hat)?, tuned.best))
    };
    let table: Vec<OracleEntry> = m_grid
        .iter()
        .map(|&m| match eval_m(m) {
            Ok((fit, hyper)) => OracleEntry { m, fit: Some(fit), hyper: Some(hyper), error: None },
            Err(e) => OracleEntry { m, fit: None, hyper: None, error: Some(e.to_string()) },
        })
        .collect();
    let best = table
        .iter()
        .filter_map(|e| e.fit.map(|f| (e.m, f)))
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .ok_or(Error::TuningFailed { starts: m_grid.len() })?;
    Ok(OracleResult { m_star: best.0, fit: best.1, table, note: ORACLE_NOTE.into() })
}

pub const ORACLE_NOTE: &str = "oracle selection uses the test set: not implementable in practice";
