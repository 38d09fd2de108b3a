//! Helpers shared by unit, integration, and acceptance tests.
//!
//! Nothing here is used by the library itself; the module is public so the
//! integration suites of downstream crates can reuse the same fixtures.

use crate::numstat::{Matrix, SymMatrix};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    use rand::SeedableRng;
    ChaCha8Rng::seed_from_u64(seed)
}

#[track_caller]
pub fn assert_close(actual: f64, expected: f64, tol: f64, what: &str) {
    assert!(
        (actual - expected).abs() <= tol,
        "{what}: {actual} differs from {expected} by {} (tol {tol})",
        (actual - expected).abs()
    );
}

/// Random symmetric positive semidefinite matrix built as BᵀB with a small
/// diagonal lift so it is comfortably positive definite.
pub fn random_spd(dim: usize, rng: &mut ChaCha8Rng) -> SymMatrix {
    let b: Vec<f64> = (0..dim * dim).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mut entries = vec![0.0; dim * dim];
    for i in 0..dim {
        for j in 0..dim {
            let mut acc = 0.0;
            for k in 0..dim {
                acc += b[k * dim + i] * b[k * dim + j];
            }
            entries[i * dim + j] = acc;
        }
    }
    for i in 0..dim {
        entries[i * dim + i] += 0.05;
    }
    SymMatrix::new(dim, entries).expect("square entry count")
}

/// Random orthonormal matrix via Gram-Schmidt on Gaussian-ish columns.
/// Independent of the library's eigendecomposition on purpose: it serves as
/// the basis-change oracle in invariance tests.
pub fn random_orthonormal(dim: usize, rng: &mut ChaCha8Rng) -> Matrix {
    loop {
        let mut cols: Vec<Vec<f64>> = Vec::with_capacity(dim);
        let mut degenerate = false;
        for _ in 0..dim {
            let mut v: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
            for c in &cols {
                let dot: f64 = v.iter().zip(c).map(|(a, b)| a * b).sum();
                for (vi, ci) in v.iter_mut().zip(c) {
                    *vi -= dot * ci;
                }
            }
            let norm: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm < 1e-6 {
                degenerate = true;
                break;
            }
            for vi in v.iter_mut() {
                *vi /= norm;
            }
            cols.push(v);
        }
        if degenerate {
            continue;
        }
        let mut q = Matrix::zeros(dim, dim);
        for (j, c) in cols.iter().enumerate() {
            for (i, &v) in c.iter().enumerate() {
                q.set(i, j, v);
            }
        }
        return q;
    }
}

/// Central finite difference of a scalar function along one coordinate of a
/// flat parameter vector.
pub fn central_difference(f: &mut dyn FnMut(&[f64]) -> f64, x: &[f64], i: usize, h: f64) -> f64 {
    let mut plus = x.to_vec();
    let mut minus = x.to_vec();
    plus[i] += h;
    minus[i] -= h;
    (f(&plus) - f(&minus)) / (2.0 * h)
}

/// Relative gradient error with an absolute floor, the standard metric for
/// finite-difference checks.
pub fn grad_rel_err(analytic: f64, numeric: f64, floor: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(floor);
    (analytic - numeric).abs() / denom
}
