//! Kernels over input locations.
//!
//! Two layers:
//!
//! * [`IrKernelSpec`]: a kernel over lags (an "impulse response" kernel `K`),
//!   e.g. the stable spline `K(i, j) = α^max(i, j)`. Discrete lags are
//!   1-based, so `values[k]` of a location pairs with lag `k + 1`.
//! * [`KernelSpec`]: a kernel over input locations. Linear kernels are built
//!   from an `IrKernelSpec` (`aᵀ K x`, or its double integral in continuous
//!   time); radial kernels and the nonlinear stable spline (NSS) act on the
//!   regressor vectors directly; sums, products and positive scalings compose.
//!
//! Specs serialize as tagged JSON, e.g.
//! `{"family": "nss", "alpha": 0.9, "eta": 1.0, "truncation": 200}`.

use faer::Mat;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, Matrix, SpdFactor};
use crate::signal::InputLocation;

/// Decay level used to pick default truncations: `α^p < TRUNCATION_DECAY`.
pub const TRUNCATION_DECAY: f64 = 1e-12;

/// Kernel over lags.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum IrKernelSpec {
    /// `α^max(i, j)`
    StableSpline { alpha: f64 },
    /// `α^i` on the diagonal, zero elsewhere.
    DiagonalSs { alpha: f64 },
    /// `e^(−β max(t, s))`
    StableSplineCt { beta: f64 },
    /// `exp(−(i − j)² / η)`
    RadialGaussian { eta: f64 },
    /// `exp(−|i − j| / η)`
    RadialLaplacian { eta: f64 },
    /// `cos(ω (i − j))`, sign-indefinite and not summable.
    Cosine { omega: f64 },
    /// `α^max(i, j) cos(ω (i − j))`
    DampedCosine { alpha: f64, omega: f64 },
    /// Finite matrix; entries beyond its size are zero.
    Explicit { matrix: Vec<Vec<f64>> },
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("{name} must be positive, got {v}")))
    }
}

fn unit_interval(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("{name} must lie in (0, 1), got {v}")))
    }
}

impl IrKernelSpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            Self::StableSpline { alpha } | Self::DiagonalSs { alpha } => unit_interval("alpha", *alpha),
            Self::StableSplineCt { beta } => positive("beta", *beta),
            Self::RadialGaussian { eta } | Self::RadialLaplacian { eta } => positive("eta", *eta),
            Self::Cosine { omega } => {
                if omega.is_finite() {
                    Ok(())
                } else {
                    Err(Error::InvalidArgument("omega must be finite".into()))
                }
            }
            Self::DampedCosine { alpha, omega } => {
                unit_interval("alpha", *alpha)?;
                if omega.is_finite() {
                    Ok(())
                } else {
                    Err(Error::InvalidArgument("omega must be finite".into()))
                }
            }
            Self::Explicit { matrix } => {
                let m = linalg::from_rows(matrix)?;
                if m.nrows() != m.ncols() {
                    return Err(Error::DimensionMismatch { expected: m.nrows(), found: m.ncols() });
                }
                let asym = linalg::max_asymmetry(&m);
                if asym > 1e-12 * linalg::max_abs(&m).max(1.0) {
                    return Err(Error::NotSymmetric { max_asymmetry: asym });
                }
                let min = linalg::sym_eigenvalues(&m).first().copied().unwrap_or(0.0);
                if min < -1e-10 * linalg::trace(&m).abs() {
                    return Err(Error::NotPsd { min_eigenvalue: min });
                }
                Ok(())
            }
        }
    }

    /// Discrete entry `K(i, j)` for 1-based lags.
    pub fn entry(&self, i: usize, j: usize) -> f64 {
        let hi = i.max(j) as i32;
        let diff = i as f64 - j as f64;
        match self {
            Self::StableSpline { alpha } => alpha.powi(hi),
            Self::DiagonalSs { alpha } => {
                if i == j {
                    alpha.powi(hi)
                } else {
                    0.0
                }
            }
            Self::StableSplineCt { beta } => (-beta * hi as f64).exp(),
            Self::RadialGaussian { eta } => (-diff * diff / eta).exp(),
            Self::RadialLaplacian { eta } => (-diff.abs() / eta).exp(),
            Self::Cosine { omega } => (omega * diff).cos(),
            Self::DampedCosine { alpha, omega } => alpha.powi(hi) * (omega * diff).cos(),
            Self::Explicit { matrix } => {
                matrix.get(i.wrapping_sub(1)).and_then(|r| r.get(j.wrapping_sub(1))).copied().unwrap_or(0.0)
            }
        }
    }

    /// Continuous-time value `K(t, s)` for `t, s ≥ 0`, where defined.
    pub fn eval_ct(&self, t: f64, s: f64) -> Option<f64> {
        let hi = t.max(s);
        let diff = t - s;
        Some(match self {
            Self::StableSplineCt { beta } => (-beta * hi).exp(),
            Self::StableSpline { alpha } => alpha.powf(hi),
            Self::RadialGaussian { eta } => (-diff * diff / eta).exp(),
            Self::RadialLaplacian { eta } => (-diff.abs() / eta).exp(),
            Self::Cosine { omega } => (omega * diff).cos(),
            Self::DampedCosine { alpha, omega } => alpha.powf(hi) * (omega * diff).cos(),
            Self::DiagonalSs { .. } | Self::Explicit { .. } => return None,
        })
    }

    pub fn is_nonnegative(&self) -> bool {
        match self {
            Self::Cosine { .. } | Self::DampedCosine { .. } => false,
            Self::Explicit { matrix } => matrix.iter().flatten().all(|&v| v >= 0.0),
            _ => true,
        }
    }

    /// Geometric decay rate of the stable-spline families.
    pub fn decay_rate(&self) -> Option<f64> {
        match self {
            Self::StableSpline { alpha } | Self::DiagonalSs { alpha } | Self::DampedCosine { alpha, .. } => {
                Some(*alpha)
            }
            Self::StableSplineCt { beta } => Some((-beta).exp()),
            _ => None,
        }
    }

    /// Smallest `p` with `α^p < TRUNCATION_DECAY`, or the matrix size for
    /// explicit kernels.
    pub fn default_truncation(&self) -> Option<usize> {
        if let Self::Explicit { matrix } = self {
            return Some(matrix.len());
        }
        self.decay_rate().map(|a| default_truncation(a))
    }

    /// `Σ_{i,j≥1} |K(i, j)|` when known in closed form.
    pub fn abs_sum_closed_form(&self) -> Option<f64> {
        match self {
            Self::StableSpline { .. } | Self::StableSplineCt { .. } => {
                let a = self.decay_rate()?;
                Some(a * (1.0 + a) / (1.0 - a).powi(2))
            }
            Self::DiagonalSs { alpha } => Some(alpha / (1.0 - alpha)),
            Self::Explicit { matrix } => Some(matrix.iter().flatten().map(|v| v.abs()).sum()),
            _ => None,
        }
    }

    /// `∫∫_{R+²} |K(t, s)| dt ds` when known in closed form.
    pub fn abs_integral_closed_form(&self) -> Option<f64> {
        match self {
            Self::StableSplineCt { beta } => Some(2.0 / (beta * beta)),
            Self::StableSpline { alpha } => Some(2.0 / alpha.ln().powi(2)),
            _ => None,
        }
    }

    /// The leading `p × p` block.
    pub fn matrix(&self, p: usize) -> Matrix {
        Mat::from_fn(p, p, |i, j| self.entry(i + 1, j + 1))
    }

    /// `K x` restricted to the first `x.len()` lags. Stable-spline families
    /// use their `O(p)` structure, the rest a dense product.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let p = x.len();
        match self {
            Self::StableSpline { .. } | Self::StableSplineCt { .. } => {
                let a = self.decay_rate().unwrap();
                // (Kx)_i = α^i Σ_{j≤i} x_j + Σ_{j>i} α^j x_j
                let pow: Vec<f64> = (1..=p).map(|i| a.powi(i as i32)).collect();
                let mut suffix = vec![0.0; p + 1];
                for i in (0..p).rev() {
                    suffix[i] = suffix[i + 1] + pow[i] * x[i];
                }
                let mut prefix = 0.0;
                (0..p)
                    .map(|i| {
                        prefix += x[i];
                        pow[i] * prefix + suffix[i + 1]
                    })
                    .collect()
            }
            Self::DiagonalSs { alpha } => {
                x.iter().enumerate().map(|(i, v)| alpha.powi(i as i32 + 1) * v).collect()
            }
            _ => (0..p).map(|i| (0..p).map(|j| self.entry(i + 1, j + 1) * x[j]).sum()).collect(),
        }
    }
}

/// Smallest `p` with `rate^p < TRUNCATION_DECAY`.
pub fn default_truncation(rate: f64) -> usize {
    ((TRUNCATION_DECAY.ln() / rate.ln()).floor() as usize + 1).max(1)
}

/// Uniform lag grid `τ_k = k·step`, `k = 0..points`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LagGrid {
    pub step: f64,
    pub points: usize,
}

impl LagGrid {
    pub fn new(step: f64, points: usize) -> Result<Self> {
        let g = Self { step, points };
        g.validate()?;
        Ok(g)
    }

    /// Grid covering `[0, horizon]` with the given step (rounded to fit).
    pub fn covering(horizon: f64, step: f64) -> Result<Self> {
        Self::new(step, (horizon / step).round() as usize + 1)
    }

    pub fn validate(&self) -> Result<()> {
        positive("grid step", self.step)?;
        if self.points < 2 {
            return Err(Error::InvalidArgument("lag grid needs at least 2 points".into()));
        }
        Ok(())
    }

    pub fn lags(&self) -> Vec<f64> {
        (0..self.points).map(|k| k as f64 * self.step).collect()
    }

    pub fn horizon(&self) -> f64 {
        (self.points - 1) as f64 * self.step
    }

    /// Trapezoidal weights.
    pub fn weights(&self) -> Vec<f64> {
        let mut w = vec![self.step; self.points];
        w[0] *= 0.5;
        w[self.points - 1] *= 0.5;
        w
    }
}

/// Which stable-spline matrix weights the NSS kernel.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NssVariant {
    /// `K_α(i, j) = α^max(i, j)`
    #[default]
    Full,
    /// `K_α(i, i) = α^i`
    Diagonal,
}

/// Kernel over input locations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum KernelSpec {
    /// `aᵀ K x` on `dim`-dimensional regressors.
    LinearFir { k: IrKernelSpec, dim: usize },
    /// `aᵀ K x` on sequences truncated at `truncation` lags.
    LinearIir { k: IrKernelSpec, truncation: usize },
    /// `∫∫ K(t, s) a(t) x(s) dt ds` by the trapezoidal rule on `grid`.
    LinearCt { k: IrKernelSpec, grid: LagGrid },
    /// `exp(−‖a − x‖² / η)`
    Gaussian { eta: f64 },
    /// `exp(−‖a − x‖ / η)`
    Laplacian { eta: f64 },
    /// `aᵀK_α x · exp(−(a − x)ᵀK_α(a − x) / η)`
    Nss {
        alpha: f64,
        eta: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        truncation: Option<usize>,
        #[serde(default)]
        variant: NssVariant,
    },
    Sum { left: Box<KernelSpec>, right: Box<KernelSpec> },
    Product { left: Box<KernelSpec>, right: Box<KernelSpec> },
    /// `scale · kernel`
    Scaled { scale: f64, kernel: Box<KernelSpec> },
}

impl KernelSpec {
    pub fn nss(alpha: f64, eta: f64, truncation: Option<usize>) -> Self {
        Self::Nss { alpha, eta, truncation, variant: NssVariant::Full }
    }

    pub fn sum(left: KernelSpec, right: KernelSpec) -> Self {
        Self::Sum { left: Box::new(left), right: Box::new(right) }
    }

    pub fn product(left: KernelSpec, right: KernelSpec) -> Self {
        Self::Product { left: Box::new(left), right: Box::new(right) }
    }

    pub fn scaled(scale: f64, kernel: KernelSpec) -> Self {
        Self::Scaled { scale, kernel: Box::new(kernel) }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Self::LinearFir { k, dim } => {
                k.validate()?;
                if *dim == 0 {
                    return Err(Error::InvalidArgument("FIR dimension must be positive".into()));
                }
                if let IrKernelSpec::Explicit { matrix } = k {
                    if matrix.len() != *dim {
                        return Err(Error::DimensionMismatch { expected: *dim, found: matrix.len() });
                    }
                }
                Ok(())
            }
            Self::LinearIir { k, truncation } => {
                k.validate()?;
                if *truncation == 0 {
                    return Err(Error::InvalidArgument("truncation must be positive".into()));
                }
                Ok(())
            }
            Self::LinearCt { k, grid } => {
                k.validate()?;
                grid.validate()?;
                if k.eval_ct(0.0, 0.0).is_none() {
                    return Err(Error::InvalidArgument(format!("{k:?} has no continuous-time form")));
                }
                Ok(())
            }
            Self::Gaussian { eta } | Self::Laplacian { eta } => positive("eta", *eta),
            Self::Nss { alpha, eta, truncation, .. } => {
                unit_interval("alpha", *alpha)?;
                positive("eta", *eta)?;
                if *truncation == Some(0) {
                    return Err(Error::InvalidArgument("truncation must be positive".into()));
                }
                Ok(())
            }
            Self::Sum { left, right } | Self::Product { left, right } => {
                left.validate()?;
                right.validate()?;
                if left.expects_sampled() != right.expects_sampled() {
                    return Err(Error::KindMismatch("operands act on different location kinds".into()));
                }
                Ok(())
            }
            Self::Scaled { scale, kernel } => {
                positive("scale", *scale)?;
                kernel.validate()
            }
        }
    }

    /// True if the kernel acts on sampled continuous-time trajectories.
    pub fn expects_sampled(&self) -> bool {
        match self {
            Self::LinearCt { .. } => true,
            Self::Sum { left, .. } | Self::Product { left, .. } => left.expects_sampled(),
            Self::Scaled { kernel, .. } => kernel.expects_sampled(),
            _ => false,
        }
    }

    /// Truncation level of the NSS kernel (explicit or from the α decay).
    pub fn nss_truncation(alpha: f64, truncation: Option<usize>) -> usize {
        truncation.unwrap_or_else(|| default_truncation(alpha))
    }

    /// Linear kernels in impulse-response form: `(K, p, scale)`, with `p` the
    /// number of lags a location contributes.
    pub fn linear_parts(&self) -> Option<(&IrKernelSpec, usize, f64)> {
        match self {
            Self::LinearFir { k, dim } => Some((k, *dim, 1.0)),
            Self::LinearIir { k, truncation } => Some((k, *truncation, 1.0)),
            Self::Scaled { scale, kernel } => kernel.linear_parts().map(|(k, p, s)| (k, p, s * scale)),
            _ => None,
        }
    }

    /// Continuous-time linear kernel: `(K, grid, scale)`.
    pub fn ct_parts(&self) -> Option<(&IrKernelSpec, &LagGrid, f64)> {
        match self {
            Self::LinearCt { k, grid } => Some((k, grid, 1.0)),
            Self::Scaled { scale, kernel } => kernel.ct_parts().map(|(k, g, s)| (k, g, s * scale)),
            _ => None,
        }
    }

    fn check_location(&self, x: &InputLocation) -> Result<()> {
        match self {
            Self::LinearCt { grid, .. } => {
                if !x.is_sampled() {
                    return Err(Error::KindMismatch("continuous-time kernel needs a sampled trajectory".into()));
                }
                if x.len() != grid.points {
                    return Err(Error::DimensionMismatch { expected: grid.points, found: x.len() });
                }
            }
            _ if x.is_sampled() => {
                return Err(Error::KindMismatch("discrete kernel given a sampled trajectory".into()));
            }
            Self::LinearFir { dim, .. } if x.len() != *dim => {
                return Err(Error::DimensionMismatch { expected: *dim, found: x.len() });
            }
            Self::Sum { left, right } | Self::Product { left, right } => {
                left.check_location(x)?;
                right.check_location(x)?;
            }
            Self::Scaled { kernel, .. } => kernel.check_location(x)?,
            _ => {}
        }
        if x.is_empty() {
            return Err(Error::InvalidArgument("empty input location".into()));
        }
        Ok(())
    }

    fn check_pair(&self, a: &InputLocation, x: &InputLocation) -> Result<()> {
        self.check_location(a)?;
        self.check_location(x)?;
        if a.len() != x.len() {
            return Err(Error::DimensionMismatch { expected: a.len(), found: x.len() });
        }
        Ok(())
    }

    /// `K(a, x)`.
    pub fn eval(&self, a: &InputLocation, x: &InputLocation) -> Result<f64> {
        self.check_pair(a, x)?;
        Ok(self.eval_unchecked(&a.values, &x.values))
    }

    fn eval_unchecked(&self, a: &[f64], x: &[f64]) -> f64 {
        match self {
            Self::LinearFir { k, .. } => linalg::dot(a, &k.apply(x)),
            Self::LinearIir { k, truncation } => {
                let p = (*truncation).min(a.len());
                linalg::dot(&a[..p], &k.apply(&x[..p]))
            }
            Self::LinearCt { k, grid } => {
                let lags = grid.lags();
                let w = grid.weights();
                let mut total = 0.0;
                for (i, (ti, wi)) in lags.iter().zip(&w).enumerate() {
                    if a[i] == 0.0 {
                        continue;
                    }
                    let inner: f64 = lags
                        .iter()
                        .zip(&w)
                        .zip(x)
                        .map(|((tj, wj), xj)| k.eval_ct(*ti, *tj).unwrap() * wj * xj)
                        .sum();
                    total += wi * a[i] * inner;
                }
                total
            }
            Self::Gaussian { eta } => (-sq_dist(a, x) / eta).exp(),
            Self::Laplacian { eta } => (-sq_dist(a, x).sqrt() / eta).exp(),
            Self::Nss { alpha, eta, truncation, variant } => {
                let p = Self::nss_truncation(*alpha, *truncation).min(a.len());
                let k = nss_matrix_spec(*alpha, *variant);
                let lin = linalg::dot(&a[..p], &k.apply(&x[..p]));
                let d: Vec<f64> = a[..p].iter().zip(&x[..p]).map(|(u, v)| u - v).collect();
                let q = linalg::dot(&d, &k.apply(&d)).max(0.0);
                lin * (-q / eta).exp()
            }
            Self::Sum { left, right } => left.eval_unchecked(a, x) + right.eval_unchecked(a, x),
            Self::Product { left, right } => left.eval_unchecked(a, x) * right.eval_unchecked(a, x),
            Self::Scaled { scale, kernel } => scale * kernel.eval_unchecked(a, x),
        }
    }

    /// Kernel block `[K(r_i, c_j)]` (rows × cols).
    pub fn cross_gram(&self, rows: &[InputLocation], cols: &[InputLocation]) -> Result<Matrix> {
        let len = rows.first().or(cols.first()).map_or(0, InputLocation::len);
        for x in rows.iter().chain(cols) {
            self.check_location(x)?;
            if x.len() != len {
                return Err(Error::DimensionMismatch { expected: len, found: x.len() });
            }
        }
        Ok(self.block(rows, cols, false))
    }

    fn block(&self, rows: &[InputLocation], cols: &[InputLocation], symmetric: bool) -> Matrix {
        let (m, n) = (rows.len(), cols.len());
        // leaves are symmetrized; sums, products and scalings of exactly
        // symmetric blocks stay exactly symmetric
        let mut g = match self {
            Self::LinearFir { k, dim } => linear_block(k, *dim, rows, cols),
            Self::LinearIir { k, truncation } => {
                let p = (*truncation).min(rows.first().or(cols.first()).map_or(0, InputLocation::len));
                linear_block(k, p, rows, cols)
            }
            Self::LinearCt { k, grid } => ct_block(k, grid, rows, cols),
            Self::Gaussian { eta } => radial_block(rows, cols, symmetric, |d2| (-d2 / eta).exp()),
            Self::Laplacian { eta } => radial_block(rows, cols, symmetric, |d2| (-d2.sqrt() / eta).exp()),
            Self::Nss { alpha, eta, truncation, variant } => {
                let len = rows.first().or(cols.first()).map_or(0, InputLocation::len);
                let p = Self::nss_truncation(*alpha, *truncation).min(len);
                let k = nss_matrix_spec(*alpha, *variant);
                let lin = linear_block(&k, p, rows, cols);
                let energy = |x: &InputLocation| linalg::dot(&x.values[..p], &k.apply(&x.values[..p]));
                let dr: Vec<f64> = rows.iter().map(energy).collect();
                let dc: Vec<f64> = if symmetric { dr.clone() } else { cols.iter().map(energy).collect() };
                Mat::from_fn(m, n, |i, j| {
                    let l = lin.read(i, j);
                    let q = (dr[i] + dc[j] - 2.0 * l).max(0.0);
                    l * (-q / eta).exp()
                })
            }
            Self::Sum { left, right } => {
                let a = left.block(rows, cols, symmetric);
                let b = right.block(rows, cols, symmetric);
                return Mat::from_fn(m, n, |i, j| a.read(i, j) + b.read(i, j));
            }
            Self::Product { left, right } => {
                let a = left.block(rows, cols, symmetric);
                let b = right.block(rows, cols, symmetric);
                return Mat::from_fn(m, n, |i, j| a.read(i, j) * b.read(i, j));
            }
            Self::Scaled { scale, kernel } => {
                let a = kernel.block(rows, cols, symmetric);
                return Mat::from_fn(m, n, |i, j| scale * a.read(i, j));
            }
        };
        if symmetric {
            linalg::symmetrize(&mut g);
        }
        g
    }

    /// Gram matrix over a homogeneous set of locations.
    pub fn gram(&self, locations: &[InputLocation]) -> Result<GramMatrix> {
        if locations.is_empty() {
            return Err(Error::InvalidArgument("Gram matrix of an empty location set".into()));
        }
        let len = locations[0].len();
        for x in locations {
            self.check_location(x)?;
            if x.len() != len {
                return Err(Error::DimensionMismatch { expected: len, found: x.len() });
            }
        }
        Ok(GramMatrix { entries: self.block(locations, locations, true) })
    }
}

fn nss_matrix_spec(alpha: f64, variant: NssVariant) -> IrKernelSpec {
    match variant {
        NssVariant::Full => IrKernelSpec::StableSpline { alpha },
        NssVariant::Diagonal => IrKernelSpec::DiagonalSs { alpha },
    }
}

fn sq_dist(a: &[f64], x: &[f64]) -> f64 {
    a.iter().zip(x).map(|(u, v)| (u - v).powi(2)).sum()
}

/// Stacks the first `p` values of every location as rows (zero-padded).
fn sample_matrix(locs: &[InputLocation], p: usize, weights: Option<&[f64]>) -> Matrix {
    Mat::from_fn(locs.len(), p, |i, j| {
        let v = locs[i].values.get(j).copied().unwrap_or(0.0);
        weights.map_or(v, |w| v * w[j])
    })
}

fn linear_block(k: &IrKernelSpec, p: usize, rows: &[InputLocation], cols: &[InputLocation]) -> Matrix {
    let a = sample_matrix(rows, p, None);
    let kx = Mat::from_fn(cols.len(), p, |_, _| 0.0);
    let mut kx = kx;
    for (i, x) in cols.iter().enumerate() {
        let v: Vec<f64> = (0..p).map(|j| x.values.get(j).copied().unwrap_or(0.0)).collect();
        for (j, kv) in k.apply(&v).into_iter().enumerate() {
            kx.write(i, j, kv);
        }
    }
    linalg::mul_abt(&a, &kx)
}

fn ct_matrix(k: &IrKernelSpec, grid: &LagGrid) -> Matrix {
    let lags = grid.lags();
    Mat::from_fn(grid.points, grid.points, |i, j| k.eval_ct(lags[i], lags[j]).unwrap())
}

fn ct_block(k: &IrKernelSpec, grid: &LagGrid, rows: &[InputLocation], cols: &[InputLocation]) -> Matrix {
    let w = grid.weights();
    let a = sample_matrix(rows, grid.points, Some(&w));
    let b = sample_matrix(cols, grid.points, Some(&w));
    let bk = linalg::mul(&b, &ct_matrix(k, grid));
    linalg::mul_abt(&a, &bk)
}

fn radial_block(
    rows: &[InputLocation],
    cols: &[InputLocation],
    symmetric: bool,
    h: impl Fn(f64) -> f64,
) -> Matrix {
    let (m, n) = (rows.len(), cols.len());
    let mut out = Mat::<f64>::zeros(m, n);
    for j in 0..n {
        let start = if symmetric { j } else { 0 };
        for i in start..m {
            let v = h(sq_dist(&rows[i].values, &cols[j].values));
            out.write(i, j, v);
            if symmetric {
                out.write(j, i, v);
            }
        }
    }
    out
}

/// Weights-times-kernel image `∫ K(τ, t) w(t) x(t)` of a sampled location,
/// evaluated at arbitrary lags `taus` (zero outside the grid's support).
pub fn ct_section(k: &IrKernelSpec, grid: &LagGrid, x: &[f64], taus: &[f64]) -> Vec<f64> {
    let lags = grid.lags();
    let w = grid.weights();
    let horizon = grid.horizon() * (1.0 + 1e-12);
    taus.iter()
        .map(|&tau| {
            if !(0.0..=horizon).contains(&tau) {
                return 0.0;
            }
            lags.iter().zip(&w).zip(x).map(|((t, wt), xt)| k.eval_ct(tau, *t).unwrap() * wt * xt).sum()
        })
        .collect()
}

/// Symmetric kernel matrix `[K(x_i, x_j)]`.
#[derive(Clone, Debug)]
pub struct GramMatrix {
    entries: Matrix,
}

impl GramMatrix {
    /// Wraps a matrix, rejecting asymmetry beyond `1e-12` (relative to the
    /// largest entry when that exceeds one).
    pub fn new(entries: Matrix) -> Result<Self> {
        if entries.nrows() != entries.ncols() {
            return Err(Error::DimensionMismatch { expected: entries.nrows(), found: entries.ncols() });
        }
        let asym = linalg::max_asymmetry(&entries);
        if asym > 1e-12 * linalg::max_abs(&entries).max(1.0) {
            return Err(Error::NotSymmetric { max_asymmetry: asym });
        }
        Ok(Self { entries })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        Self::new(linalg::from_rows(rows)?)
    }

    pub fn n(&self) -> usize {
        self.entries.nrows()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries.read(i, j)
    }

    pub fn matrix(&self) -> &Matrix {
        &self.entries
    }

    pub fn into_matrix(self) -> Matrix {
        self.entries
    }

    pub fn trace(&self) -> f64 {
        linalg::trace(&self.entries)
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        linalg::to_rows(&self.entries)
    }
}

/// Outcome of [`psd_check`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PsdReport {
    pub is_psd: bool,
    pub min_eigenvalue: f64,
    pub trace: f64,
    pub tolerance: f64,
}

/// `λ_min ≥ −tol · trace` via a full symmetric eigensolve.
pub fn psd_check(g: &GramMatrix, tol: f64) -> PsdReport {
    let min_eigenvalue = linalg::sym_eigenvalues(g.matrix()).first().copied().unwrap_or(0.0);
    let trace = g.trace();
    PsdReport { is_psd: min_eigenvalue >= -tol * trace.abs(), min_eigenvalue, trace, tolerance: tol }
}

/// `θᵀ K⁻¹ θ` through a Cholesky factor of `K`.
pub fn quadratic_norm(k: &Matrix, theta: &[f64]) -> Result<f64> {
    if k.nrows() != theta.len() {
        return Err(Error::DimensionMismatch { expected: k.nrows(), found: theta.len() });
    }
    if theta.iter().all(|&v| v == 0.0) {
        return Ok(0.0);
    }
    Ok(SpdFactor::new(k)?.inv_quadratic(theta))
}

/// [`quadratic_norm`] on the leading `θ.len()` block of a lag kernel.
pub fn quadratic_norm_ir(k: &IrKernelSpec, theta: &[f64]) -> Result<f64> {
    quadratic_norm(&k.matrix(theta.len()), theta)
}
