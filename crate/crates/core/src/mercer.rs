//! Spectral side of the stable spline kernel and the consistency experiments.
//!
//! * closed-form eigenpairs of `e^(−β max(t, s))` and their truncated sums;
//! * empirical Mercer decompositions of Gram matrices;
//! * the lagged cross-covariance sequence `c_k = Σ_ℓ ζ_ℓ Cov(v_{ℓi}, v_{ℓ,i+k})`
//!   with `v_{ℓi} = (f(x_i) + e_i) ρ_ℓ(x_i)`;
//! * the Monte Carlo consistency experiment for continuous-time stable-spline
//!   regularization networks with `γ = γ₀ / N^α`.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{psd_check, GramMatrix, IrKernelSpec, KernelSpec, LagGrid};
use crate::linalg::{self, Matrix};
use crate::rn::fit_with_gram;
use crate::signal::{make_regressors, sample_past_trajectory, Dataset, InputLocation, Memory, Signal};

/// One term of the stable-spline expansion
/// `e^(−β max(t, s)) = Σ_ℓ ζ_ℓ ψ_ℓ(t) ψ_ℓ(s)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EigenPair {
    pub index: usize,
    pub zeta: f64,
    pub beta: f64,
}

impl EigenPair {
    pub fn new(index: usize, beta: f64) -> Self {
        let w = index as f64 * PI - PI / 2.0;
        Self { index, zeta: 1.0 / (w * w), beta }
    }

    /// `√2 sin(e^(−βt) / √ζ)`
    pub fn psi(&self, t: f64) -> f64 {
        std::f64::consts::SQRT_2 * ((-self.beta * t).exp() / self.zeta.sqrt()).sin()
    }
}

pub fn ss_eigenpairs(beta: f64, count: usize) -> Result<Vec<EigenPair>> {
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(Error::InvalidArgument(format!("beta must be positive, got {beta}")));
    }
    Ok((1..=count).map(|l| EigenPair::new(l, beta)).collect())
}

/// `Σ_{ℓ ≤ L} ζ_ℓ ψ_ℓ(t) ψ_ℓ(s)`.
pub fn truncated_ss_kernel(beta: f64, count: usize, t: f64, s: f64) -> f64 {
    // ζ ψ(t) ψ(s) = 2ζ sin(w x) sin(w y) with x = e^(−βt), w = 1/√ζ
    let (x, y) = ((-beta * t).exp(), (-beta * s).exp());
    (1..=count)
        .map(|l| {
            let w = l as f64 * PI - PI / 2.0;
            2.0 * (w * x).sin() * (w * y).sin() / (w * w)
        })
        .sum()
}

/// Eigen-decomposition of `gram / N`.
#[derive(Clone, Debug)]
pub struct EmpiricalMercer {
    /// Descending eigenvalues.
    pub zeta: Vec<f64>,
    /// Column `i` holds `ρ̂_i` at the samples, scaled so `Σ_k ρ̂_i(x_k)² / N = 1`.
    pub rho: Matrix,
}

pub fn empirical_mercer(gram: &GramMatrix) -> Result<EmpiricalMercer> {
    let report = psd_check(gram, 1e-8);
    if !report.is_psd {
        return Err(Error::NotPsd { min_eigenvalue: report.min_eigenvalue });
    }
    let n = gram.n();
    let scaled = Matrix::from_fn(n, n, |i, j| gram.get(i, j) / n as f64);
    let (zeta, u) = linalg::sym_eigen_desc(&scaled);
    let root = (n as f64).sqrt();
    let rho = Matrix::from_fn(n, n, |i, j| u.read(i, j) * root);
    Ok(EmpiricalMercer { zeta, rho })
}

/// Stationary input generators.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "process", rename_all = "snake_case")]
pub enum InputProcess {
    White { variance: f64 },
    /// Gaussian moving average with coefficients `(1 + k)^(−(1+δ))`,
    /// `k < taps`, normalized to the given variance. Its autocovariance
    /// decays as `τ^(−(1+δ))`.
    LongMemory { delta: f64, taps: usize, variance: f64 },
}

impl Default for InputProcess {
    fn default() -> Self {
        Self::LongMemory { delta: 0.5, taps: 1000, variance: 1.0 }
    }
}

impl InputProcess {
    pub fn variance(&self) -> f64 {
        match self {
            Self::White { variance } | Self::LongMemory { variance, .. } => *variance,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.variance() > 0.0 && self.variance().is_finite()) {
            return Err(Error::InvalidArgument("input variance must be positive".into()));
        }
        if let Self::LongMemory { delta, taps, .. } = self {
            if !(*delta > 0.0) || *taps == 0 {
                return Err(Error::InvalidArgument("long-memory input needs delta > 0 and taps ≥ 1".into()));
            }
        }
        Ok(())
    }

    /// Moving-average weights (unit-variance normalized).
    pub fn weights(&self) -> Vec<f64> {
        match self {
            Self::White { .. } => vec![1.0],
            Self::LongMemory { delta, taps, .. } => {
                let h: Vec<f64> = (0..*taps).map(|k| (1.0 + k as f64).powf(-(1.0 + delta))).collect();
                let norm = linalg::norm2(&h);
                h.into_iter().map(|v| v / norm).collect()
            }
        }
    }

    /// Theoretical autocovariance at integer lag `k`.
    pub fn autocovariance(&self, k: usize) -> f64 {
        let h = self.weights();
        self.variance() * h.iter().zip(h.iter().skip(k)).map(|(a, b)| a * b).sum::<f64>()
    }

    /// `len` samples of the stationary process.
    pub fn sample(&self, len: usize, rng: &mut impl Rng) -> Vec<f64> {
        let h = self.weights();
        let sd = self.variance().sqrt();
        let normal = Normal::new(0.0, 1.0).unwrap();
        let w: Vec<f64> = (0..len + h.len() - 1).map(|_| normal.sample(rng)).collect();
        (0..len)
            .map(|i| {
                let t = i + h.len() - 1;
                sd * h.iter().enumerate().map(|(k, hk)| hk * w[t - k]).sum::<f64>()
            })
            .collect()
    }
}

/// Eigenbasis of a linear kernel `𝒦(a, x) = aᵀKx` on `p` lags.
///
/// Under an input with covariance `σ_u² I` the functions
/// `ρ_ℓ(x) = ψ_ℓᵀx / σ_u` are orthonormal and `𝒦 = Σ ζ_ℓ σ_u² ρ_ℓ ρ_ℓ`.
#[derive(Clone, Debug)]
pub struct LinearEigenBasis {
    pub zeta: Vec<f64>,
    /// Row `ℓ` is the unit direction `ψ_ℓ`.
    pub directions: Vec<Vec<f64>>,
    pub input_sd: f64,
}

impl LinearEigenBasis {
    pub fn from_kernel(k: &IrKernelSpec, p: usize, input_variance: f64) -> Self {
        let (vals, vecs) = linalg::sym_eigen_desc(&k.matrix(p));
        let zeta = vals.iter().map(|v| v * input_variance).collect();
        let directions = (0..p).map(|l| (0..p).map(|i| vecs.read(i, l)).collect()).collect();
        Self { zeta, directions, input_sd: input_variance.sqrt() }
    }

    pub fn len(&self) -> usize {
        self.zeta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.zeta.is_empty()
    }

    pub fn lags(&self) -> usize {
        self.directions.first().map_or(0, Vec::len)
    }

    pub fn rho(&self, l: usize, x: &[f64]) -> f64 {
        linalg::dot(&self.directions[l], x) / self.input_sd
    }
}

/// Settings for [`estimate_ck`].
#[derive(Clone, Debug)]
pub struct CkConfig {
    pub input: InputProcess,
    pub noise_variance: f64,
    pub ell_max: usize,
    pub k_max: usize,
    pub sample_count: usize,
    /// Batches for the batch-means standard errors.
    pub batches: usize,
    pub seed: u64,
}

impl Default for CkConfig {
    fn default() -> Self {
        Self {
            input: InputProcess::White { variance: 1.0 },
            noise_variance: 1.0,
            ell_max: 200,
            k_max: 50,
            sample_count: 20_000,
            batches: 50,
            seed: 0,
        }
    }
}

/// Estimated `c_0 … c_kmax`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CkSequence {
    pub values: Vec<f64>,
    pub std_errors: Vec<f64>,
    /// `Σ_{j ≤ k} |c_j|`.
    pub partial_abs_sums: Vec<f64>,
    pub ell_truncation: usize,
    /// `Σ_{ℓ ≤ ℓmax} ζ_ℓ`.
    pub zeta_mass: f64,
    /// `max_ℓ` of the empirical variance of `v_ℓ`.
    pub max_v_moment: f64,
    pub sample_count: usize,
    pub seed: u64,
    pub warnings: Vec<String>,
}

/// Lag-`k` sample cross-covariance with `1/n` normalization.
fn lag_cov(v: &[f64], k: usize) -> f64 {
    let n = v.len();
    if k >= n {
        return 0.0;
    }
    v[..n - k].iter().zip(&v[k..]).map(|(a, b)| a * b).sum::<f64>() / n as f64
}

fn ck_from(v: &[Vec<f64>], zeta: &[f64], k_max: usize) -> Vec<f64> {
    (0..=k_max)
        .map(|k| {
            v.iter()
                .zip(zeta)
                .map(|(vl, z)| {
                    let mean = vl.iter().sum::<f64>() / vl.len() as f64;
                    let c: Vec<f64> = vl.iter().map(|x| x - mean).collect();
                    z * lag_cov(&c, k)
                })
                .sum()
        })
        .collect()
}

/// Estimates `c_k` for `f` under the given input and independent white noise.
pub fn estimate_ck<F>(f: F, basis: &LinearEigenBasis, config: &CkConfig) -> Result<CkSequence>
where
    F: Fn(&[f64]) -> f64,
{
    config.input.validate()?;
    if config.ell_max == 0 || config.k_max == 0 || config.batches < 2 {
        return Err(Error::InvalidArgument("ell_max, k_max ≥ 1 and batches ≥ 2 required".into()));
    }
    let batch_len = config.sample_count / config.batches;
    if batch_len <= config.k_max {
        return Err(Error::InvalidArgument("sample_count too small for k_max and batches".into()));
    }
    let n = batch_len * config.batches;
    let p = basis.lags();
    let ell = config.ell_max.min(basis.len());
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let u = config.input.sample(n + p - 1, &mut rng);
    let noise = Normal::new(0.0, config.noise_variance.max(0.0).sqrt())
        .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let u = Signal::discrete(u, 0)?;
    let locs = make_regressors(&u, Memory::Infinite { horizon: p }, p as i64 - 1, u.end_index(), false)?;
    let out: Vec<f64> = locs.iter().map(|x| f(&x.values) + noise.sample(&mut rng)).collect();
    let v: Vec<Vec<f64>> =
        (0..ell).map(|l| locs.iter().zip(&out).map(|(x, y)| y * basis.rho(l, &x.values)).collect()).collect();
    let zeta = &basis.zeta[..ell];

    let values = ck_from(&v, zeta, config.k_max);
    let per_batch: Vec<Vec<f64>> = (0..config.batches)
        .map(|b| {
            let chunk: Vec<Vec<f64>> = v.iter().map(|vl| vl[b * batch_len..(b + 1) * batch_len].to_vec()).collect();
            ck_from(&chunk, zeta, config.k_max)
        })
        .collect();
    let nb = config.batches as f64;
    let std_errors = (0..=config.k_max)
        .map(|k| {
            let m = per_batch.iter().map(|c| c[k]).sum::<f64>() / nb;
            let var = per_batch.iter().map(|c| (c[k] - m).powi(2)).sum::<f64>() / (nb - 1.0);
            (var / nb).sqrt()
        })
        .collect();
    let mut acc = 0.0;
    let partial_abs_sums = values
        .iter()
        .map(|c: &f64| {
            acc += c.abs();
            acc
        })
        .collect();
    let max_v_moment = (0..ell).map(|l| lag_cov(&center(&v[l]), 0)).fold(0.0, f64::max);
    let mut warnings = Vec::new();
    if max_v_moment == 0.0 {
        warnings.push("all v sequences are constant: zero variance".into());
    }
    Ok(CkSequence {
        values,
        std_errors,
        partial_abs_sums,
        ell_truncation: ell,
        zeta_mass: zeta.iter().sum(),
        max_v_moment,
        sample_count: n,
        seed: config.seed,
        warnings,
    })
}

fn center(v: &[f64]) -> Vec<f64> {
    let m = v.iter().sum::<f64>() / v.len() as f64;
    v.iter().map(|x| x - m).collect()
}

/// True continuous-time impulse response `e^(−slow·τ) − e^(−fast·τ)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExpDifference {
    pub slow: f64,
    pub fast: f64,
}

impl ExpDifference {
    pub fn eval(&self, tau: f64) -> f64 {
        (-self.slow * tau).exp() - (-self.fast * tau).exp()
    }
}

/// Configuration of the consistency experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ConsistencyConfig {
    /// Stable-spline decay of the estimator kernel.
    pub beta: f64,
    pub grid_step: f64,
    /// Memory window `T` of the sampled past trajectories.
    pub horizon: f64,
    pub truth: ExpDifference,
    pub input: InputProcess,
    /// Spacing of the input samples (linearly interpolated in between).
    pub input_period: f64,
    pub noise_variance: f64,
    /// Sampling interval `Δ`: `t_i = iΔ + δ_i`, `δ_i ~ U[0, Δ]`.
    pub sampling_step: f64,
    pub n_grid: Vec<usize>,
    /// Exponent in `γ = γ₀ / N^α`, in `(0, ½)`.
    pub alpha: f64,
    pub gamma0: f64,
    pub test_draws: usize,
    pub seeds: usize,
    pub master_seed: u64,
}

impl Default for ConsistencyConfig {
    fn default() -> Self {
        Self {
            beta: 1.0,
            grid_step: 0.1,
            horizon: 10.0,
            truth: ExpDifference { slow: 1.0, fast: 2.0 },
            input: InputProcess::default(),
            input_period: 0.5,
            noise_variance: 0.25,
            sampling_step: 1.0,
            n_grid: vec![200, 500, 1000, 2000],
            alpha: 0.25,
            gamma0: 1e-4,
            test_draws: 1000,
            seeds: 20,
            master_seed: 0,
        }
    }
}

impl ConsistencyConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 0.5) {
            return Err(Error::InvalidArgument(format!("alpha must lie in (0, 1/2), got {}", self.alpha)));
        }
        for (name, v) in [
            ("beta", self.beta),
            ("grid_step", self.grid_step),
            ("horizon", self.horizon),
            ("input_period", self.input_period),
            ("sampling_step", self.sampling_step),
            ("gamma0", self.gamma0),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidArgument(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.noise_variance >= 0.0) {
            return Err(Error::InvalidArgument("noise variance must be nonnegative".into()));
        }
        if self.n_grid.is_empty() || self.n_grid.contains(&0) || self.seeds == 0 || self.test_draws == 0 {
            return Err(Error::InvalidArgument("n_grid, seeds and test_draws must be nonempty/positive".into()));
        }
        self.input.validate()
    }

    pub fn grid(&self) -> Result<LagGrid> {
        LagGrid::covering(self.horizon, self.grid_step)
    }

    pub fn kernel(&self) -> Result<KernelSpec> {
        Ok(KernelSpec::LinearCt { k: IrKernelSpec::StableSplineCt { beta: self.beta }, grid: self.grid()? })
    }

    /// `f_ρ(x) = ∫ θ(τ) x(τ) dτ` by the kernel's quadrature.
    pub fn truth_value(&self, grid: &LagGrid, x: &InputLocation) -> f64 {
        grid.lags().iter().zip(grid.weights()).zip(&x.values).map(|((t, w), v)| self.truth.eval(*t) * w * v).sum()
    }

    /// `n` sampled past trajectories at `t_i = T + iΔ + δ_i` of a fresh input.
    pub fn draw_locations(&self, n: usize, rng: &mut ChaCha8Rng) -> Result<Vec<InputLocation>> {
        let grid = self.grid()?;
        let span = self.horizon + (n as f64 + 1.0) * self.sampling_step;
        let len = (span / self.input_period).ceil() as usize + 2;
        let u = Signal::new(self.input.sample(len, rng), 0, self.input_period)?;
        let lags = grid.lags();
        (0..n)
            .map(|i| {
                let t = self.horizon + (i as f64 + rng.gen::<f64>()) * self.sampling_step;
                sample_past_trajectory(&u, t, &lags, None)
            })
            .collect()
    }
}

/// Error of one `(N, seed)` cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyCell {
    pub n: usize,
    pub seed: u64,
    pub gamma: f64,
    pub error: Option<f64>,
    pub failure: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub n: usize,
    pub median: f64,
    pub q25: f64,
    pub q75: f64,
    pub mean: f64,
    /// Monte Carlo standard error of the mean.
    pub std_error: f64,
    pub cells: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyCurve {
    pub n_grid: Vec<usize>,
    pub alpha: f64,
    pub cells: Vec<ConsistencyCell>,
    pub summary: Vec<CurvePoint>,
}

impl ConsistencyCurve {
    /// Share of seeds whose error is nonincreasing along the N grid.
    pub fn monotone_fraction(&self) -> f64 {
        let seeds: std::collections::BTreeSet<u64> = self.cells.iter().map(|c| c.seed).collect();
        let mono = seeds
            .iter()
            .filter(|&&s| {
                let errs: Vec<Option<f64>> = self
                    .n_grid
                    .iter()
                    .map(|&n| self.cells.iter().find(|c| c.seed == s && c.n == n).and_then(|c| c.error))
                    .collect();
                errs.iter().all(Option::is_some) && errs.windows(2).all(|w| w[1].unwrap() <= w[0].unwrap())
            })
            .count();
        mono as f64 / seeds.len().max(1) as f64
    }
}

/// Quantile by linear interpolation on sorted data.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

fn stream(master: u64, tag: u64, a: u64, b: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(tag.wrapping_mul(0x1000_0000) ^ a.wrapping_mul(0x10_0000) ^ b);
    rng
}

/// Runs every `(N, seed)` cell on the current rayon pool.
///
/// A seed owns one training record of `max(n_grid)` samples and the cell
/// `(N, seed)` fits on its first `N`, so each seed traces the error of a
/// single growing record. Test locations come from a separate stream keyed
/// by the seed, shared by all `N` of that seed.
pub fn consistency_experiment(config: &ConsistencyConfig) -> Result<ConsistencyCurve> {
    config.validate()?;
    let kernel = config.kernel()?;
    let grid = config.grid()?;
    let noise = Normal::new(0.0, config.noise_variance.sqrt()).unwrap();
    let cells: Vec<(usize, u64)> =
        config.n_grid.iter().flat_map(|&n| (0..config.seeds as u64).map(move |s| (n, s))).collect();

    let n_max = *config.n_grid.iter().max().unwrap();
    let run = |n: usize, seed: u64| -> Result<f64> {
        let mut rng = stream(config.master_seed, 1, 0, seed);
        let mut locations = config.draw_locations(n_max, &mut rng)?;
        let mut outputs: Vec<f64> =
            locations.iter().map(|x| config.truth_value(&grid, x) + noise.sample(&mut rng)).collect();
        locations.truncate(n);
        outputs.truncate(n);
        let data = Dataset::new(locations, outputs, (0..n).map(|i| i as f64).collect())?;
        let gamma = config.gamma0 / (n as f64).powf(config.alpha);
        let gram = kernel.gram(&data.locations)?;
        let model = fit_with_gram(&kernel, &data, gram, gamma)?;
        let mut test_rng = stream(config.master_seed, 2, 0, seed);
        let test = config.draw_locations(config.test_draws, &mut test_rng)?;
        let pred = model.predict_many(&test)?;
        let mse = test.iter().zip(&pred).map(|(x, p)| (p - config.truth_value(&grid, x)).powi(2)).sum::<f64>()
            / test.len() as f64;
        Ok(mse.sqrt())
    };

    let results: Vec<ConsistencyCell> = cells
        .par_iter()
        .map(|&(n, seed)| {
            let gamma = config.gamma0 / (n as f64).powf(config.alpha);
            match run(n, seed) {
                Ok(e) => ConsistencyCell { n, seed, gamma, error: Some(e), failure: None },
                Err(e) => ConsistencyCell { n, seed, gamma, error: None, failure: Some(e.to_string()) },
            }
        })
        .collect();

    let summary = config
        .n_grid
        .iter()
        .map(|&n| {
            let mut errs: Vec<f64> = results.iter().filter(|c| c.n == n).filter_map(|c| c.error).collect();
            errs.sort_by(f64::total_cmp);
            let k = errs.len() as f64;
            let mean = errs.iter().sum::<f64>() / k;
            let var = errs.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (k - 1.0).max(1.0);
            CurvePoint {
                n,
                median: quantile(&errs, 0.5),
                q25: quantile(&errs, 0.25),
                q75: quantile(&errs, 0.75),
                mean,
                std_error: (var / k).sqrt(),
                cells: errs.len(),
            }
        })
        .collect();
    Ok(ConsistencyCurve { n_grid: config.n_grid.clone(), alpha: config.alpha, cells: results, summary })
}
