//! Regularization networks: `ĉ = (𝐊 + γN I)⁻¹ Y`, prediction, and
//! impulse-response extraction for linear kernels.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{self, psd_check, GramMatrix, KernelSpec};
use crate::linalg::{self, factor_with_jitter, Matrix, SpdFactor};
use crate::signal::{Dataset, InputLocation};

/// PSD tolerance applied to training Gram matrices (relative to the trace).
pub const GRAM_PSD_TOL: f64 = 1e-8;

/// A fitted regularization network `ĝ = Σ ĉ_i 𝒦(x_i, ·)`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RnModel {
    pub kernel: KernelSpec,
    pub locations: Vec<InputLocation>,
    pub coefficients: Vec<f64>,
    pub gamma: f64,
    /// `‖(𝐊 + γN I)ĉ − Y‖ / ‖Y‖` at fit time (0 when `Y = 0`).
    pub residual: f64,
    /// Diagonal jitter that was needed to factor the system (0 if none).
    #[serde(default)]
    pub jitter: f64,
    #[serde(skip)]
    gram: Option<GramMatrix>,
}

/// Solves `(g + shift I) c = y`, with jitter escalation and two steps of
/// iterative refinement against the unjittered system.
pub(crate) fn regularized_solve(g: &Matrix, shift: f64, y: &[f64]) -> Result<(Vec<f64>, f64, f64)> {
    let factor = factor_with_jitter(g, shift)?;
    let mut c = factor.solve(y);
    let apply = |c: &[f64]| -> Vec<f64> {
        let mut r = linalg::matvec(g, c);
        for (ri, ci) in r.iter_mut().zip(c) {
            *ri += shift * ci;
        }
        r
    };
    for _ in 0..2 {
        let r: Vec<f64> = y.iter().zip(apply(&c)).map(|(a, b)| a - b).collect();
        let d = factor.solve(&r);
        for (ci, di) in c.iter_mut().zip(d) {
            *ci += di;
        }
    }
    let ynorm = linalg::norm2(y);
    let r: Vec<f64> = y.iter().zip(apply(&c)).map(|(a, b)| a - b).collect();
    let residual = if ynorm > 0.0 { linalg::norm2(&r) / ynorm } else { linalg::norm2(&r) };
    Ok((c, residual, factor.jitter - shift))
}

/// Fits the regularization network with loss `(1/N) Σ (y_i − g(x_i))² + γ‖g‖²`.
pub fn fit_rn(kernel: &KernelSpec, data: &Dataset, gamma: f64) -> Result<RnModel> {
    kernel.validate()?;
    if !(gamma.is_finite() && gamma > 0.0) {
        return Err(Error::InvalidArgument(format!("gamma must be positive, got {gamma}")));
    }
    let gram = kernel.gram(&data.locations)?;
    fit_with_gram(kernel, data, gram, gamma)
}

/// As [`fit_rn`] with a precomputed Gram matrix of `data.locations`.
pub fn fit_with_gram(kernel: &KernelSpec, data: &Dataset, gram: GramMatrix, gamma: f64) -> Result<RnModel> {
    let n = data.len();
    if gram.n() != n {
        return Err(Error::DimensionMismatch { expected: n, found: gram.n() });
    }
    let report = psd_check(&gram, GRAM_PSD_TOL);
    if !report.is_psd {
        return Err(Error::NotPsd { min_eigenvalue: report.min_eigenvalue });
    }
    let (coefficients, residual, jitter) = regularized_solve(gram.matrix(), gamma * n as f64, &data.outputs)?;
    Ok(RnModel {
        kernel: kernel.clone(),
        locations: data.locations.clone(),
        coefficients,
        gamma,
        residual,
        jitter,
        gram: Some(gram),
    })
}

impl RnModel {
    pub fn n(&self) -> usize {
        self.coefficients.len()
    }

    /// Training Gram matrix (recomputed after deserialization).
    pub fn gram(&mut self) -> Result<&GramMatrix> {
        if self.gram.is_none() {
            self.gram = Some(self.kernel.gram(&self.locations)?);
        }
        Ok(self.gram.as_ref().unwrap())
    }

    /// `ĝ(x) = Σ ĉ_i 𝒦(x_i, x)`.
    pub fn predict(&self, x: &InputLocation) -> Result<f64> {
        Ok(self.predict_many(std::slice::from_ref(x))?[0])
    }

    pub fn predict_many(&self, xs: &[InputLocation]) -> Result<Vec<f64>> {
        if xs.is_empty() {
            return Ok(Vec::new());
        }
        let cross = self.kernel.cross_gram(xs, &self.locations)?;
        Ok(linalg::matvec(&cross, &self.coefficients))
    }

    /// `‖ĝ‖²_H = ĉᵀ𝐊ĉ`.
    pub fn rkhs_norm_sq(&mut self) -> Result<f64> {
        let c = self.coefficients.clone();
        let g = self.gram()?;
        Ok(linalg::dot(&c, &linalg::matvec(g.matrix(), &c)))
    }

    /// Objective `(1/N) Σ (y_i − ĝ(x_i))² + γ‖ĝ‖²` for `ĝ + h`, where `h` is
    /// given by its coefficients on the training sections.
    pub fn objective_with(&mut self, outputs: &[f64], delta: &[f64]) -> Result<f64> {
        let n = self.n() as f64;
        let c: Vec<f64> = self.coefficients.iter().zip(delta).map(|(a, b)| a + b).collect();
        let gamma = self.gamma;
        let g = self.gram()?;
        let fitted = linalg::matvec(g.matrix(), &c);
        let loss: f64 = outputs.iter().zip(&fitted).map(|(y, f)| (y - f).powi(2)).sum::<f64>() / n;
        Ok(loss + gamma * linalg::dot(&c, &fitted))
    }
}

/// Regularized FIR estimate `argmin ‖Y − Φθ‖² + γ θᵀK⁻¹θ`.
///
/// Solved in the whitened coordinates `θ = Lβ` (`K = LLᵀ`), which needs no
/// inverse of `K` and tolerates `γ = 0` when `Φ` has full column rank.
pub fn fit_fir_regularized(phi: &Matrix, y: &[f64], k: &Matrix, gamma: f64) -> Result<Vec<f64>> {
    let (n, m) = (phi.nrows(), phi.ncols());
    if y.len() != n {
        return Err(Error::DimensionMismatch { expected: n, found: y.len() });
    }
    if k.nrows() != m || k.ncols() != m {
        return Err(Error::DimensionMismatch { expected: m, found: k.nrows() });
    }
    if !(gamma >= 0.0 && gamma.is_finite()) {
        return Err(Error::InvalidArgument(format!("gamma must be nonnegative, got {gamma}")));
    }
    let kf = SpdFactor::new(k)?;
    let l = kf.lower();
    let pl = linalg::mul(phi, l); // Φ L
    let mut a = Matrix::zeros(m, m);
    faer::linalg::matmul::matmul(
        a.as_mut(),
        pl.transpose(),
        pl.as_ref(),
        None,
        1.0,
        faer::Parallelism::None,
    );
    let rhs: Vec<f64> = (0..m).map(|j| (0..n).map(|i| pl.read(i, j) * y[i]).sum()).collect();
    let f = SpdFactor::new_shifted(&a, gamma)?;
    let beta = f.solve(&rhs);
    Ok(linalg::matvec(l, &beta))
}

/// `θ̂ = Σ ĉ_i K x_i`, truncated (or zero-extended) to `p` lags.
pub fn extract_impulse_response(model: &RnModel, p: usize) -> Result<Vec<f64>> {
    let (k, width, scale) = model.kernel.linear_parts().ok_or_else(|| {
        Error::UnsupportedExtraction("impulse responses exist only for linear FIR/IIR kernels".into())
    })?;
    let width = width.min(model.locations.first().map_or(0, InputLocation::len));
    let mut theta = vec![0.0; width];
    for (x, c) in model.locations.iter().zip(&model.coefficients) {
        if *c == 0.0 {
            continue;
        }
        for (t, v) in theta.iter_mut().zip(&x.values[..width]) {
            *t += c * v;
        }
    }
    let mut theta: Vec<f64> = k.apply(&theta).into_iter().map(|v| v * scale).collect();
    theta.resize(p, 0.0);
    Ok(theta)
}

/// `θ̂(τ) = Σ ĉ_i ∫ K(τ, t) x_i(t) dt` at the lags `taus`, by the kernel's
/// own quadrature; zero beyond the kernel's grid.
pub fn extract_ir_ct(model: &RnModel, taus: &[f64]) -> Result<Vec<f64>> {
    let (k, grid, scale) = model.kernel.ct_parts().ok_or_else(|| {
        Error::UnsupportedExtraction("continuous-time extraction needs a linear continuous-time kernel".into())
    })?;
    if taus.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidArgument("extraction grid must be strictly increasing".into()));
    }
    let mut combined = vec![0.0; grid.points];
    for (x, c) in model.locations.iter().zip(&model.coefficients) {
        for (s, v) in combined.iter_mut().zip(&x.values) {
            *s += c * v;
        }
    }
    Ok(kernels::ct_section(k, grid, &combined, taus).into_iter().map(|v| v * scale).collect())
}
