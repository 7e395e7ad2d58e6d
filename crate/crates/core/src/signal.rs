//! Signals, input locations and the prediction-fit metric.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A real-valued sequence sampled at `start_index + k` (times `sample_period`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Signal {
    samples: Vec<f64>,
    start_index: i64,
    sample_period: f64,
}

impl Signal {
    pub fn new(samples: Vec<f64>, start_index: i64, sample_period: f64) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::InvalidArgument("signal must have at least one sample".into()));
        }
        if let Some(k) = samples.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!("non-finite sample at offset {k}")));
        }
        if !(sample_period.is_finite() && sample_period > 0.0) {
            return Err(Error::InvalidArgument(format!("sample period must be positive, got {sample_period}")));
        }
        Ok(Self { samples, start_index, sample_period })
    }

    /// Discrete-time signal with unit sample period.
    pub fn discrete(samples: Vec<f64>, start_index: i64) -> Result<Self> {
        Self::new(samples, start_index, 1.0)
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn start_index(&self) -> i64 {
        self.start_index
    }

    /// Index of the last sample (inclusive).
    pub fn end_index(&self) -> i64 {
        self.start_index + self.samples.len() as i64 - 1
    }

    pub fn sample_period(&self) -> f64 {
        self.sample_period
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Sample at integer time `t`, if inside the signal.
    pub fn at(&self, t: i64) -> Option<f64> {
        let k = t - self.start_index;
        if k < 0 {
            return None;
        }
        self.samples.get(k as usize).copied()
    }

    /// Integer times covered by the signal.
    pub fn times(&self) -> impl Iterator<Item = i64> + '_ {
        self.start_index..=self.end_index()
    }
}

/// Something that can be evaluated at a real time: a continuous-time input.
pub trait Trajectory {
    /// Value at time `s`, or `None` outside the support.
    fn value(&self, s: f64) -> Option<f64>;
}

/// Piecewise-linear interpolation between samples placed at
/// `(start_index + k) · sample_period`.
impl Trajectory for Signal {
    fn value(&self, s: f64) -> Option<f64> {
        let pos = s / self.sample_period - self.start_index as f64;
        let last = (self.samples.len() - 1) as f64;
        let tol = 1e-9;
        if pos < -tol || pos > last + tol {
            return None;
        }
        let pos = pos.clamp(0.0, last);
        let k = pos.floor() as usize;
        let frac = pos - k as f64;
        if k + 1 >= self.samples.len() || frac == 0.0 {
            return Some(self.samples[k]);
        }
        Some(self.samples[k] * (1.0 - frac) + self.samples[k + 1] * frac)
    }
}

/// A closure viewed as a trajectory defined everywhere.
pub struct FnTrajectory<F>(pub F);

impl<F: Fn(f64) -> f64> Trajectory for FnTrajectory<F> {
    fn value(&self, s: f64) -> Option<f64> {
        Some((self.0)(s))
    }
}

/// Causal convention: the wrapped input is zero before its support starts.
pub struct Causal<'a, T: ?Sized>(pub &'a T);

impl<T: Trajectory + ?Sized> Trajectory for Causal<'_, T> {
    fn value(&self, s: f64) -> Option<f64> {
        self.0.value(s).or(Some(0.0))
    }
}

/// How the values of an [`InputLocation`] were produced.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LocationKind {
    /// `[u_t, …, u_{t−m+1}]`
    FiniteMemory { memory: usize },
    /// `[u_t, u_{t−1}, …]` cut at `horizon` entries.
    TruncatedInfinite { horizon: usize },
    /// `u(t − τ_k)` on a lag grid starting at 0.
    SampledTrajectory { grid: Vec<f64> },
}

/// A regressor: the input seen from time `t`, newest sample first.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InputLocation {
    pub values: Vec<f64>,
    #[serde(flatten)]
    pub kind: LocationKind,
}

impl InputLocation {
    pub fn finite(values: Vec<f64>) -> Self {
        let memory = values.len();
        Self { values, kind: LocationKind::FiniteMemory { memory } }
    }

    pub fn truncated(values: Vec<f64>) -> Self {
        let horizon = values.len();
        Self { values, kind: LocationKind::TruncatedInfinite { horizon } }
    }

    pub fn sampled(values: Vec<f64>, grid: Vec<f64>) -> Self {
        Self { values, kind: LocationKind::SampledTrajectory { grid } }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_sampled(&self) -> bool {
        matches!(self.kind, LocationKind::SampledTrajectory { .. })
    }
}

/// System memory used to build discrete regressors.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Memory {
    Finite(usize),
    /// Infinite memory, truncated to `horizon` lags.
    Infinite { horizon: usize },
}

impl Memory {
    pub fn len(&self) -> usize {
        match *self {
            Memory::Finite(m) => m,
            Memory::Infinite { horizon } => horizon,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Builds the regressors `x_t` for `t ∈ [from, to]` (inclusive).
///
/// Without `zero_pad`, every requested `t` must have all its lags inside the
/// signal; the first offending `t` is reported together with the first valid
/// one. With `zero_pad`, samples before the signal start are taken as zero.
pub fn make_regressors(
    u: &Signal,
    memory: Memory,
    from: i64,
    to: i64,
    zero_pad: bool,
) -> Result<Vec<InputLocation>> {
    let len = memory.len();
    if len == 0 {
        return Err(Error::InvalidArgument("memory must be positive".into()));
    }
    if from > to {
        return Err(Error::InvalidArgument(format!("empty time window [{from}, {to}]")));
    }
    let first_valid = u.start_index() + len as i64 - 1;
    if to > u.end_index() {
        return Err(Error::InvalidArgument(format!(
            "window end {to} is past the last sample {}",
            u.end_index()
        )));
    }
    if !zero_pad && from < first_valid {
        return Err(Error::Boundary { requested: from, first_valid });
    }
    if zero_pad && from < u.start_index() {
        return Err(Error::Boundary { requested: from, first_valid: u.start_index() });
    }
    let locs = (from..=to)
        .map(|t| {
            let values = (0..len as i64).map(|k| u.at(t - k).unwrap_or(0.0)).collect();
            match memory {
                Memory::Finite(_) => InputLocation::finite(values),
                Memory::Infinite { .. } => InputLocation::truncated(values),
            }
        })
        .collect();
    Ok(locs)
}

/// Samples the past trajectory `τ ↦ u(t − τ)` on `grid`; with a window `T`,
/// lags beyond `T` are zeroed (indicator of `[0, T]`) without evaluating `u`.
pub fn sample_past_trajectory<T: Trajectory + ?Sized>(
    u: &T,
    t: f64,
    grid: &[f64],
    window: Option<f64>,
) -> Result<InputLocation> {
    if grid.is_empty() {
        return Err(Error::InvalidArgument("empty lag grid".into()));
    }
    if grid[0] < 0.0 || grid.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::InvalidArgument("lag grid must be sorted ascending from 0".into()));
    }
    if let Some(w) = window {
        if !(w > 0.0) {
            return Err(Error::InvalidArgument(format!("window must be positive, got {w}")));
        }
    }
    let mut values = Vec::with_capacity(grid.len());
    for &tau in grid {
        if window.is_some_and(|w| tau > w) {
            values.push(0.0);
            continue;
        }
        let s = t - tau;
        values.push(u.value(s).ok_or(Error::OutOfSupport { time: s })?);
    }
    Ok(InputLocation::sampled(values, grid.to_vec()))
}

/// Causal convolution `y_t = Σ_k θ_k u_{t−k}` (lag 0 first), with `u` taken as
/// zero before its start. The output has the same support as `u`.
pub fn convolve(theta: &[f64], u: &Signal) -> Signal {
    let x = u.samples();
    let y = (0..x.len())
        .map(|i| theta.iter().take(i + 1).enumerate().map(|(k, th)| th * x[i - k]).sum())
        .collect();
    Signal::new(y, u.start_index(), u.sample_period()).expect("convolution of finite data")
}

/// Percentage fit `100·(1 − ‖y − ŷ‖ / ‖y − ȳ‖)`.
pub fn fit_metric(y_test: &[f64], y_hat: &[f64]) -> Result<f64> {
    if y_test.len() != y_hat.len() {
        return Err(Error::DimensionMismatch { expected: y_test.len(), found: y_hat.len() });
    }
    if y_test.len() < 2 {
        return Err(Error::InvalidArgument("fit needs at least two test points".into()));
    }
    let mean = y_test.iter().sum::<f64>() / y_test.len() as f64;
    let spread = y_test.iter().map(|y| (y - mean).powi(2)).sum::<f64>().sqrt();
    if spread == 0.0 {
        return Err(Error::UndefinedFit);
    }
    let err = y_test.iter().zip(y_hat).map(|(y, h)| (y - h).powi(2)).sum::<f64>().sqrt();
    Ok(100.0 * (1.0 - err / spread))
}

/// Input/output pairs `{x_i, y_i}` with their sampling instants.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub locations: Vec<InputLocation>,
    pub outputs: Vec<f64>,
    pub timestamps: Vec<f64>,
}

impl Dataset {
    pub fn new(locations: Vec<InputLocation>, outputs: Vec<f64>, timestamps: Vec<f64>) -> Result<Self> {
        if locations.is_empty() {
            return Err(Error::InvalidArgument("dataset must not be empty".into()));
        }
        if outputs.len() != locations.len() {
            return Err(Error::DimensionMismatch { expected: locations.len(), found: outputs.len() });
        }
        if timestamps.len() != locations.len() {
            return Err(Error::DimensionMismatch { expected: locations.len(), found: timestamps.len() });
        }
        Ok(Self { locations, outputs, timestamps })
    }

    /// Pairs the regressors of `u` with the samples of `y` over `y`'s support.
    pub fn from_signals(u: &Signal, y: &Signal, memory: Memory, zero_pad: bool) -> Result<Self> {
        let locations = make_regressors(u, memory, y.start_index(), y.end_index(), zero_pad)?;
        let timestamps = y.times().map(|t| t as f64).collect();
        Self::new(locations, y.samples().to_vec(), timestamps)
    }

    pub fn len(&self) -> usize {
        self.outputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.outputs.is_empty()
    }
}
