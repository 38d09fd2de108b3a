//! Self-contained linear-algebra and statistics kernels.
//!
//! Everything here operates on small dense matrices (latent dimensions are
//! single digits, batches a few dozen rows), so the implementations favor
//! clarity and deterministic behavior over asymptotic speed: eigendecomposition
//! is cyclic Jacobi, the chi-square quantile is bisection on a regularized
//! incomplete gamma. All functions are pure.

use crate::error::{CoreError, Result};
use serde::{Deserialize, Serialize};

/// A real vector with dimension at least 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "VectorRaw")]
pub struct Vector {
    data: Vec<f64>,
}

#[derive(Deserialize)]
struct VectorRaw {
    data: Vec<f64>,
}

impl TryFrom<VectorRaw> for Vector {
    type Error = String;
    fn try_from(raw: VectorRaw) -> std::result::Result<Self, String> {
        Vector::new(raw.data).map_err(|e| e.to_string())
    }
}

impl Vector {
    pub fn new(data: Vec<f64>) -> Result<Self> {
        if data.is_empty() {
            return Err(CoreError::Dimension("vector must have dim >= 1".into()));
        }
        Ok(Vector { data })
    }

    pub fn zeros(dim: usize) -> Self {
        assert!(dim >= 1, "vector must have dim >= 1");
        Vector {
            data: vec![0.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.data.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn norm_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>()
    }
}

impl From<Vec<f64>> for Vector {
    fn from(data: Vec<f64>) -> Self {
        assert!(!data.is_empty(), "vector must have dim >= 1");
        Vector { data }
    }
}

impl std::ops::Index<usize> for Vector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.data[i]
    }
}

/// General dense matrix, row-major. Used for eigenvector bases and products;
/// symmetric data lives in [`SymMatrix`].
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        assert!(rows >= 1 && cols >= 1);
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(dim: usize) -> Self {
        let mut m = Matrix::zeros(dim, dim);
        for i in 0..dim {
            m.set(i, i, 1.0);
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    /// Column `j` as a vector.
    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.get(i, j)).collect()
    }

    pub fn mat_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(self.cols, x.len());
        (0..self.rows)
            .map(|i| (0..self.cols).map(|j| self.get(i, j) * x[j]).sum())
            .collect()
    }

    pub fn transpose_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(self.rows, x.len());
        (0..self.cols)
            .map(|j| (0..self.rows).map(|i| self.get(i, j) * x[i]).sum())
            .collect()
    }
}

/// A symmetric real matrix. The constructor symmetrizes its input via
/// `(A + Aᵀ)/2`, so `get(i, j) == get(j, i)` holds exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SymMatrixRaw")]
pub struct SymMatrix {
    dim: usize,
    data: Vec<f64>,
}

#[derive(Deserialize)]
struct SymMatrixRaw {
    dim: usize,
    data: Vec<f64>,
}

impl TryFrom<SymMatrixRaw> for SymMatrix {
    type Error = String;
    fn try_from(raw: SymMatrixRaw) -> std::result::Result<Self, String> {
        SymMatrix::new(raw.dim, raw.data).map_err(|e| e.to_string())
    }
}

impl SymMatrix {
    /// Builds a symmetric matrix from row-major entries, symmetrizing.
    pub fn new(dim: usize, entries: Vec<f64>) -> Result<Self> {
        if dim < 1 {
            return Err(CoreError::Dimension("matrix must have dim >= 1".into()));
        }
        if entries.len() != dim * dim {
            return Err(CoreError::Dimension(format!(
                "expected {} entries for a {dim}x{dim} matrix, got {}",
                dim * dim,
                entries.len()
            )));
        }
        let mut data = entries;
        for i in 0..dim {
            for j in (i + 1)..dim {
                let avg = 0.5 * (data[i * dim + j] + data[j * dim + i]);
                data[i * dim + j] = avg;
                data[j * dim + i] = avg;
            }
        }
        Ok(SymMatrix { dim, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.len();
        let mut entries = Vec::with_capacity(dim * dim);
        for r in rows {
            if r.len() != dim {
                return Err(CoreError::Dimension("matrix rows must be square".into()));
            }
            entries.extend_from_slice(r);
        }
        SymMatrix::new(dim, entries)
    }

    pub fn zeros(dim: usize) -> Self {
        assert!(dim >= 1);
        SymMatrix {
            dim,
            data: vec![0.0; dim * dim],
        }
    }

    pub fn identity(dim: usize) -> Self {
        let mut m = SymMatrix::zeros(dim);
        for i in 0..dim {
            m.data[i * dim + i] = 1.0;
        }
        m
    }

    pub fn diagonal(values: &[f64]) -> Self {
        let dim = values.len();
        let mut m = SymMatrix::zeros(dim);
        for (i, &v) in values.iter().enumerate() {
            m.data[i * dim + i] = v;
        }
        m
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.dim + j]
    }

    /// Sets entry (i, j) and its mirror (j, i).
    #[inline]
    pub fn set_sym(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.dim + j] = v;
        self.data[j * self.dim + i] = v;
    }

    pub fn trace(&self) -> f64 {
        (0..self.dim).map(|i| self.get(i, i)).sum()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn mat_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(self.dim, x.len());
        (0..self.dim)
            .map(|i| (0..self.dim).map(|j| self.get(i, j) * x[j]).sum())
            .collect()
    }

    /// `self · other` as a general matrix (the product of two symmetric
    /// matrices is not symmetric in general).
    pub fn mat_mul(&self, other: &SymMatrix) -> Matrix {
        assert_eq!(self.dim, other.dim);
        let mut out = Matrix::zeros(self.dim, self.dim);
        for i in 0..self.dim {
            for j in 0..self.dim {
                let mut acc = 0.0;
                for k in 0..self.dim {
                    acc += self.get(i, k) * other.get(k, j);
                }
                out.set(i, j, acc);
            }
        }
        out
    }

    pub fn add_scaled_identity(&self, s: f64) -> SymMatrix {
        let mut out = self.clone();
        for i in 0..self.dim {
            out.data[i * self.dim + i] += s;
        }
        out
    }
}

/// Eigendecomposition of a symmetric matrix: eigenvalues in descending order,
/// eigenvectors as the columns of an orthonormal matrix.
#[derive(Debug, Clone)]
pub struct EigenDecomp {
    pub values: Vec<f64>,
    pub vectors: Matrix,
}

// Jacobi sweep cap; each sweep reduces the off-diagonal norm quadratically
// near convergence, so well-conditioned inputs finish in ~6-10 sweeps.
const JACOBI_MAX_SWEEPS: usize = 64;

/// Symmetric eigendecomposition via cyclic Jacobi rotations.
///
/// Deterministic given the input. Fails if the off-diagonal mass has not
/// vanished after [`JACOBI_MAX_SWEEPS`] sweeps.
pub fn sym_eig(s: &SymMatrix) -> Result<EigenDecomp> {
    let n = s.dim;
    let mut a = s.clone();
    let mut v = Matrix::identity(n);

    if n == 1 {
        return Ok(EigenDecomp {
            values: vec![a.get(0, 0)],
            vectors: v,
        });
    }

    let scale = s.frobenius_norm().max(f64::MIN_POSITIVE);
    let tol = 1e-15 * scale;

    let mut converged = false;
    for _ in 0..JACOBI_MAX_SWEEPS {
        let off: f64 = (0..n)
            .flat_map(|p| ((p + 1)..n).map(move |q| (p, q)))
            .map(|(p, q)| a.get(p, q) * a.get(p, q))
            .sum::<f64>()
            .sqrt();
        if off <= tol {
            converged = true;
            break;
        }
        for p in 0..(n - 1) {
            for q in (p + 1)..n {
                let apq = a.get(p, q);
                if apq.abs() <= tol / (n as f64) {
                    continue;
                }
                let app = a.get(p, p);
                let aqq = a.get(q, q);
                let theta = 0.5 * (aqq - app) / apq;
                let t = theta.signum() / (theta.abs() + (1.0 + theta * theta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let sn = t * c;

                // Apply the rotation on rows/columns p and q.
                for k in 0..n {
                    if k != p && k != q {
                        let akp = a.get(k, p);
                        let akq = a.get(k, q);
                        a.set_sym(k, p, c * akp - sn * akq);
                        a.set_sym(k, q, sn * akp + c * akq);
                    }
                }
                a.set_sym(p, p, app - t * apq);
                a.set_sym(q, q, aqq + t * apq);
                a.set_sym(p, q, 0.0);

                // Accumulate eigenvectors.
                for k in 0..n {
                    let vkp = v.get(k, p);
                    let vkq = v.get(k, q);
                    v.set(k, p, c * vkp - sn * vkq);
                    v.set(k, q, sn * vkp + c * vkq);
                }
            }
        }
    }
    if !converged {
        // Final check: the last sweep may have finished the job.
        let off: f64 = (0..n)
            .flat_map(|p| ((p + 1)..n).map(move |q| (p, q)))
            .map(|(p, q)| a.get(p, q) * a.get(p, q))
            .sum::<f64>()
            .sqrt();
        if off > tol {
            return Err(CoreError::Numerical(format!(
                "Jacobi eigendecomposition did not converge after {JACOBI_MAX_SWEEPS} sweeps \
                 (off-diagonal norm {off:.3e}, tolerance {tol:.3e})"
            )));
        }
    }

    // Sort eigenpairs by descending eigenvalue, reordering the columns of V.
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| {
        a.get(j, j)
            .partial_cmp(&a.get(i, i))
            .expect("eigenvalues are finite")
    });
    let values: Vec<f64> = order.iter().map(|&i| a.get(i, i)).collect();
    let mut vectors = Matrix::zeros(n, n);
    for (new_col, &old_col) in order.iter().enumerate() {
        for row in 0..n {
            vectors.set(row, new_col, v.get(row, old_col));
        }
    }
    Ok(EigenDecomp { values, vectors })
}

// Eigenvalues this far below zero (after regularization) are treated as
// round-off and clamped; anything lower is a genuine domain violation.
const EIG_CLAMP_TOL: f64 = 1e-10;

fn spectral_map(
    s: &SymMatrix,
    shift: f64,
    f: impl Fn(f64) -> Result<f64>,
) -> Result<SymMatrix> {
    let eig = sym_eig(s)?;
    let mapped: Vec<f64> = eig
        .values
        .iter()
        .map(|&lam| f(lam + shift))
        .collect::<Result<_>>()?;
    let n = s.dim;
    let mut out = SymMatrix::zeros(n);
    for i in 0..n {
        for j in i..n {
            let mut acc = 0.0;
            for (k, &m) in mapped.iter().enumerate() {
                acc += eig.vectors.get(i, k) * m * eig.vectors.get(j, k);
            }
            out.set_sym(i, j, acc);
        }
    }
    Ok(out)
}

/// Symmetric square root of `S + eps·I`.
///
/// Eigenvalues of the shifted matrix within `-1e-10` of zero are clamped to
/// zero before the square root; more negative values are a domain error.
pub fn spd_sqrt(s: &SymMatrix, eps: f64) -> Result<SymMatrix> {
    spectral_map(s, eps, |lam| {
        if lam < -EIG_CLAMP_TOL {
            Err(CoreError::Domain(format!(
                "matrix square root requires eigenvalues >= -eps; found shifted eigenvalue {lam:.6e}"
            )))
        } else {
            Ok(lam.max(0.0).sqrt())
        }
    })
}

/// Inverse of `S + ridge·I`, which must be positive definite.
pub fn spd_inverse(s: &SymMatrix, ridge: f64) -> Result<SymMatrix> {
    spectral_map(s, ridge, |lam| {
        if lam <= 0.0 {
            Err(CoreError::Singular(format!(
                "matrix inverse requires positive eigenvalues; found shifted eigenvalue {lam:.6e}"
            )))
        } else {
            Ok(1.0 / lam)
        }
    })
}

/// Inverse square root of `S + shift·I`, which must be positive definite.
pub fn spd_inverse_sqrt(s: &SymMatrix, shift: f64) -> Result<SymMatrix> {
    spectral_map(s, shift, |lam| {
        if lam <= 0.0 {
            Err(CoreError::Singular(format!(
                "inverse square root requires positive eigenvalues; found shifted eigenvalue {lam:.6e}"
            )))
        } else {
            Ok(1.0 / lam.sqrt())
        }
    })
}

/// Sample mean and population covariance (1/N normalization) of a batch of
/// row vectors. A single row yields zero covariance.
pub fn batch_mean_cov(rows: &[Vec<f64>]) -> Result<(Vector, SymMatrix)> {
    let n = rows.len();
    if n == 0 {
        return Err(CoreError::Dimension("batch must be nonempty".into()));
    }
    let l = rows[0].len();
    if l == 0 {
        return Err(CoreError::Dimension("rows must have dim >= 1".into()));
    }
    for r in rows {
        if r.len() != l {
            return Err(CoreError::Dimension(format!(
                "inconsistent row lengths: {} vs {l}",
                r.len()
            )));
        }
    }
    let inv_n = 1.0 / n as f64;
    let mut mu = vec![0.0; l];
    for r in rows {
        for (m, &x) in mu.iter_mut().zip(r) {
            *m += x;
        }
    }
    for m in mu.iter_mut() {
        *m *= inv_n;
    }
    let mut sigma = SymMatrix::zeros(l);
    for r in rows {
        for i in 0..l {
            let ci = r[i] - mu[i];
            for j in i..l {
                let cj = r[j] - mu[j];
                let cur = sigma.get(i, j);
                sigma.set_sym(i, j, cur + ci * cj);
            }
        }
    }
    for i in 0..l {
        for j in i..l {
            let cur = sigma.get(i, j);
            sigma.set_sym(i, j, cur * inv_n);
        }
    }
    Ok((Vector { data: mu }, sigma))
}

/// Squared Mahalanobis distance `(z − mu)ᵀ Σ⁻¹ (z − mu)` given the
/// precomputed inverse covariance.
pub fn mahalanobis_sq(z: &Vector, mu: &Vector, sigma_inv: &SymMatrix) -> Result<f64> {
    let dim = z.dim();
    if mu.dim() != dim || sigma_inv.dim() != dim {
        return Err(CoreError::Dimension(format!(
            "mahalanobis operands disagree: z dim {dim}, mu dim {}, sigma dim {}",
            mu.dim(),
            sigma_inv.dim()
        )));
    }
    let diff: Vec<f64> = z
        .as_slice()
        .iter()
        .zip(mu.as_slice())
        .map(|(a, b)| a - b)
        .collect();
    let tmp = sigma_inv.mat_vec(&diff);
    Ok(diff.iter().zip(&tmp).map(|(a, b)| a * b).sum())
}

// Lanczos approximation (g = 7, 9 coefficients), accurate to ~15 digits for
// positive arguments.
const LANCZOS_G: f64 = 7.0;
const LANCZOS_COEF: [f64; 9] = [
    0.999_999_999_999_809_93,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_13,
    -176.615_029_162_140_6,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_572e-6,
    1.505_632_735_149_311_6e-7,
];

fn ln_gamma(x: f64) -> f64 {
    debug_assert!(x > 0.0);
    if x < 0.5 {
        // Reflection formula; only reached for x in (0, 0.5).
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let z = x - 1.0;
    let mut acc = LANCZOS_COEF[0];
    for (i, &c) in LANCZOS_COEF.iter().enumerate().skip(1) {
        acc += c / (z + i as f64);
    }
    let t = z + LANCZOS_G + 0.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (z + 0.5) * t.ln() - t + acc.ln()
}

/// Regularized lower incomplete gamma P(a, x) via the series (x < a + 1) or
/// the Lentz continued fraction for the complement.
fn gamma_p(a: f64, x: f64) -> f64 {
    debug_assert!(a > 0.0);
    if x <= 0.0 {
        return 0.0;
    }
    let log_prefactor = a * x.ln() - x - ln_gamma(a);
    if x < a + 1.0 {
        let mut term = 1.0 / a;
        let mut sum = term;
        let mut k = a;
        loop {
            k += 1.0;
            term *= x / k;
            sum += term;
            if term.abs() < sum.abs() * 1e-16 {
                break;
            }
        }
        (log_prefactor.exp() * sum).min(1.0)
    } else {
        // Continued fraction for Q(a, x).
        const TINY: f64 = 1e-300;
        let mut b = x + 1.0 - a;
        let mut c = 1.0 / TINY;
        let mut d = 1.0 / b;
        let mut h = d;
        for i in 1..500 {
            let an = -(i as f64) * (i as f64 - a);
            b += 2.0;
            d = an * d + b;
            if d.abs() < TINY {
                d = TINY;
            }
            c = b + an / c;
            if c.abs() < TINY {
                c = TINY;
            }
            d = 1.0 / d;
            let delta = d * c;
            h *= delta;
            if (delta - 1.0).abs() < 1e-16 {
                break;
            }
        }
        let q = log_prefactor.exp() * h;
        (1.0 - q).clamp(0.0, 1.0)
    }
}

/// Chi-square CDF with `df` degrees of freedom.
pub fn chi2_cdf(df: u32, x: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else {
        gamma_p(df as f64 / 2.0, x / 2.0)
    }
}

/// Chi-square quantile: the `q` with `chi2_cdf(df, q) == p`, located by
/// bisection to a CDF error below 1e-6 (the bracket is shrunk far past that).
pub fn chi2_quantile(df: u32, p: f64) -> Result<f64> {
    if df < 1 {
        return Err(CoreError::Config("chi-square df must be >= 1".into()));
    }
    if !(p > 0.0 && p < 1.0) {
        return Err(CoreError::Config(format!(
            "chi-square quantile requires p in (0, 1), got {p}"
        )));
    }
    let dff = df as f64;
    let mut hi = dff + 10.0 * (2.0 * dff).sqrt() + 50.0;
    while chi2_cdf(df, hi) < p {
        hi *= 2.0;
        if hi > 1e308 {
            return Err(CoreError::Numerical("chi-square bracket overflow".into()));
        }
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if chi2_cdf(df, mid) < p {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-13 * hi.max(1.0) {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Median: the middle element for odd length, the midpoint of the two middle
/// elements for even length.
pub fn median(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(CoreError::Eval("median of an empty sequence".into()));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("median inputs must be ordered"));
    let n = sorted.len();
    if n % 2 == 1 {
        Ok(sorted[n / 2])
    } else {
        Ok(0.5 * (sorted[n / 2 - 1] + sorted[n / 2]))
    }
}
