//! Dense symmetric linear algebra on top of `faer`.
//!
//! Everything runs with `Parallelism::None` so that results are bit-for-bit
//! reproducible regardless of the thread pool.

use faer::dyn_stack::{GlobalPodBuffer, PodStack};
use faer::linalg::cholesky::llt::compute as llt;
use faer::{Mat, Parallelism, Side};

use crate::error::{Error, Result};

pub type Matrix = Mat<f64>;

/// Lower Cholesky factor `A = L Lᵀ` of a symmetric positive definite matrix.
#[derive(Clone, Debug)]
pub struct SpdFactor {
    l: Matrix,
    /// Diagonal shift that was added before factorization (0 if none).
    pub jitter: f64,
}

impl SpdFactor {
    /// Factors `a + shift·I`. Only the lower triangle of `a` is read.
    pub fn new_shifted(a: &Matrix, shift: f64) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(Error::DimensionMismatch { expected: n, found: a.ncols() });
        }
        let mut l = Mat::from_fn(n, n, |i, j| if i >= j { a.read(i, j) } else { 0.0 });
        if shift != 0.0 {
            for i in 0..n {
                l.write(i, i, l.read(i, i) + shift);
            }
        }
        let params = Default::default();
        let req = llt::cholesky_in_place_req::<f64>(n, Parallelism::None, params)
            .expect("cholesky workspace size");
        let mut buf = GlobalPodBuffer::new(req);
        llt::cholesky_in_place(
            l.as_mut(),
            Default::default(),
            Parallelism::None,
            PodStack::new(&mut buf),
            params,
        )
        .map_err(|e| Error::RankDeficient { dim: e.non_positive_definite_minor, size: n })?;
        // faer leaves the strict upper triangle untouched; it is already zero.
        Ok(Self { l, jitter: shift })
    }

    pub fn new(a: &Matrix) -> Result<Self> {
        Self::new_shifted(a, 0.0)
    }

    pub fn dim(&self) -> usize {
        self.l.nrows()
    }

    pub fn lower(&self) -> &Matrix {
        &self.l
    }

    /// log det(A) = 2 Σ log L_ii
    pub fn logdet(&self) -> f64 {
        (0..self.dim()).map(|i| self.l.read(i, i).ln()).sum::<f64>() * 2.0
    }

    /// Solves `L z = b` in place.
    pub fn forward(&self, b: &mut [f64]) {
        let n = self.dim();
        assert_eq!(b.len(), n);
        let mut rhs = faer::mat::from_column_major_slice_mut::<f64, usize, usize>(b, n, 1);
        faer::linalg::triangular_solve::solve_lower_triangular_in_place(
            self.l.as_ref(),
            rhs.as_mut(),
            Parallelism::None,
        );
    }

    /// Solves `Lᵀ x = z` in place.
    pub fn backward(&self, z: &mut [f64]) {
        let n = self.dim();
        assert_eq!(z.len(), n);
        let mut rhs = faer::mat::from_column_major_slice_mut::<f64, usize, usize>(z, n, 1);
        faer::linalg::triangular_solve::solve_upper_triangular_in_place(
            self.l.transpose(),
            rhs.as_mut(),
            Parallelism::None,
        );
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        self.forward(&mut x);
        self.backward(&mut x);
        x
    }

    /// Solves for every column of `b`.
    pub fn solve_mat(&self, b: &Matrix) -> Matrix {
        let mut x = b.clone();
        faer::linalg::triangular_solve::solve_lower_triangular_in_place(
            self.l.as_ref(),
            x.as_mut(),
            Parallelism::None,
        );
        faer::linalg::triangular_solve::solve_upper_triangular_in_place(
            self.l.transpose(),
            x.as_mut(),
            Parallelism::None,
        );
        x
    }

    /// bᵀA⁻¹b = ‖L⁻¹b‖²
    pub fn inv_quadratic(&self, b: &[f64]) -> f64 {
        let mut z = b.to_vec();
        self.forward(&mut z);
        z.iter().map(|v| v * v).sum()
    }

    /// Rough 2-norm condition estimate from the factor diagonal.
    pub fn condition_estimate(&self) -> f64 {
        let d: Vec<f64> = (0..self.dim()).map(|i| self.l.read(i, i).powi(2)).collect();
        let max = d.iter().cloned().fold(0.0, f64::max);
        let min = d.iter().cloned().fold(f64::INFINITY, f64::min);
        max / min
    }
}

/// Factors `a + shift·I`, escalating a diagonal jitter from `1e-12·tr(a)` up to
/// `1e-8·tr(a)` (by decades) when the plain factorization fails.
pub fn factor_with_jitter(a: &Matrix, shift: f64) -> Result<SpdFactor> {
    if let Ok(f) = SpdFactor::new_shifted(a, shift) {
        return Ok(f);
    }
    let tr = trace(a).abs().max(f64::MIN_POSITIVE);
    let mut rel = 1e-12;
    while rel <= 1e-8 * 1.0001 {
        if let Ok(f) = SpdFactor::new_shifted(a, shift + rel * tr) {
            return Ok(f);
        }
        rel *= 10.0;
    }
    let eig = sym_eigenvalues(a);
    let max = eig.last().copied().unwrap_or(0.0) + shift;
    let min = eig.first().copied().unwrap_or(0.0) + shift;
    let condition_estimate = if min > 0.0 { max / min } else { f64::INFINITY };
    Err(Error::Conditioning { condition_estimate })
}

pub fn trace(a: &Matrix) -> f64 {
    (0..a.nrows().min(a.ncols())).map(|i| a.read(i, i)).sum()
}

pub fn max_asymmetry(a: &Matrix) -> f64 {
    let n = a.nrows();
    let mut worst = 0.0f64;
    for j in 0..n {
        for i in (j + 1)..n {
            worst = worst.max((a.read(i, j) - a.read(j, i)).abs());
        }
    }
    worst
}

pub fn max_abs(a: &Matrix) -> f64 {
    let mut m = 0.0f64;
    for j in 0..a.ncols() {
        for i in 0..a.nrows() {
            m = m.max(a.read(i, j).abs());
        }
    }
    m
}

/// Copies the average of `a` and `aᵀ` into both triangles.
pub fn symmetrize(a: &mut Matrix) {
    let n = a.nrows();
    for j in 0..n {
        for i in (j + 1)..n {
            let v = 0.5 * (a.read(i, j) + a.read(j, i));
            a.write(i, j, v);
            a.write(j, i, v);
        }
    }
}

/// Eigenvalues of a symmetric matrix in ascending order.
pub fn sym_eigenvalues(a: &Matrix) -> Vec<f64> {
    if a.nrows() == 0 {
        return Vec::new();
    }
    let mut ev = a.selfadjoint_eigenvalues(Side::Lower);
    ev.sort_by(|x, y| x.total_cmp(y));
    ev
}

/// Eigenpairs of a symmetric matrix, eigenvalues descending; column `k` of the
/// returned matrix is the unit eigenvector of the `k`-th value.
pub fn sym_eigen_desc(a: &Matrix) -> (Vec<f64>, Matrix) {
    let n = a.nrows();
    let evd = a.selfadjoint_eigendecomposition(Side::Lower);
    let s = evd.s().column_vector();
    let u = evd.u();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| s.read(y).total_cmp(&s.read(x)));
    let values = order.iter().map(|&k| s.read(k)).collect();
    let vectors = Mat::from_fn(n, n, |i, k| u.read(i, order[k]));
    (values, vectors)
}

/// `a · bᵀ` for row-major sample matrices given as column-major `Mat`s.
pub fn mul_abt(a: &Matrix, b: &Matrix) -> Matrix {
    let mut out = Mat::<f64>::zeros(a.nrows(), b.nrows());
    faer::linalg::matmul::matmul(out.as_mut(), a.as_ref(), b.transpose(), None, 1.0, Parallelism::None);
    out
}

pub fn mul(a: &Matrix, b: &Matrix) -> Matrix {
    let mut out = Mat::<f64>::zeros(a.nrows(), b.ncols());
    faer::linalg::matmul::matmul(out.as_mut(), a.as_ref(), b.as_ref(), None, 1.0, Parallelism::None);
    out
}

pub fn matvec(a: &Matrix, x: &[f64]) -> Vec<f64> {
    assert_eq!(a.ncols(), x.len());
    let mut y = vec![0.0; a.nrows()];
    for (j, &xj) in x.iter().enumerate() {
        if xj == 0.0 {
            continue;
        }
        let col = a.col_as_slice(j);
        for (yi, aij) in y.iter_mut().zip(col) {
            *yi += aij * xj;
        }
    }
    y
}

pub fn from_rows(rows: &[Vec<f64>]) -> Result<Matrix> {
    let n = rows.len();
    let m = rows.first().map_or(0, Vec::len);
    if let Some(bad) = rows.iter().find(|r| r.len() != m) {
        return Err(Error::DimensionMismatch { expected: m, found: bad.len() });
    }
    Ok(Mat::from_fn(n, m, |i, j| rows[i][j]))
}

pub fn to_rows(a: &Matrix) -> Vec<Vec<f64>> {
    (0..a.nrows()).map(|i| (0..a.ncols()).map(|j| a.read(i, j)).collect()).collect()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}
