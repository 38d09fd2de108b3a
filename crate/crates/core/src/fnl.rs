//! Fréchet normal loss.
//!
//! For a batch of latent vectors with sample mean μ and population covariance
//! Σ, the loss is the squared Fréchet (2-Wasserstein) distance between
//! N(μ, Σ) and the standard normal N(0, I):
//!
//! ```text
//! d² = ‖μ‖² + tr(Σ + I − 2·(Σ + ε·I)^{1/2})
//! ```
//!
//! where ε keeps the square root defined for rank-deficient Σ. The gradient
//! treats μ and Σ as functions of the batch, so it is the full derivative of
//! d² with respect to every latent vector.

use crate::error::{CoreError, Result};
use crate::numstat::{self, SymMatrix};
use serde::{Deserialize, Serialize};

/// A batch of n latent vectors of dimension l, all entries finite.
#[derive(Debug, Clone)]
pub struct LatentBatch {
    rows: Vec<Vec<f64>>,
    latent_dim: usize,
}

impl LatentBatch {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        if rows.is_empty() {
            return Err(CoreError::Dimension("latent batch must be nonempty".into()));
        }
        let latent_dim = rows[0].len();
        if latent_dim == 0 {
            return Err(CoreError::Dimension("latent dim must be >= 1".into()));
        }
        for (i, r) in rows.iter().enumerate() {
            if r.len() != latent_dim {
                return Err(CoreError::Dimension(format!(
                    "latent row {i} has dim {}, expected {latent_dim}",
                    r.len()
                )));
            }
            if r.iter().any(|v| !v.is_finite()) {
                return Err(CoreError::Numerical(format!(
                    "latent row {i} contains a non-finite value"
                )));
            }
        }
        Ok(LatentBatch { rows, latent_dim })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }
}

/// The ε of the regularized matrix square root.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct FnlConfig {
    pub eps: f64,
}

impl Default for FnlConfig {
    fn default() -> Self {
        FnlConfig { eps: 1e-6 }
    }
}

impl FnlConfig {
    /// Range check for configuration-file input. Test fixtures may bypass it
    /// (ε = 0 is mathematically fine whenever Σ is nonsingular).
    pub fn validate(&self) -> Result<()> {
        if !(self.eps > 0.0 && self.eps <= 1e-2) {
            return Err(CoreError::Config(format!(
                "fnl eps must lie in (0, 1e-2], got {}",
                self.eps
            )));
        }
        Ok(())
    }
}

/// Evaluates the loss on a batch.
pub fn fnl_forward(batch: &LatentBatch, cfg: &FnlConfig) -> Result<f64> {
    let (mu, sigma) = numstat::batch_mean_cov(batch.rows())?;
    let root = numstat::spd_sqrt(&sigma, cfg.eps)?;
    let l = batch.latent_dim() as f64;
    Ok(mu.norm_sq() + sigma.trace() + l - 2.0 * root.trace())
}

/// Gradient of the loss with respect to every latent vector.
///
/// With G = I − (Σ + εI)^{−1/2}, the derivative for row k is
/// `(2/n)·μ + (2/n)·G·(z_k − μ)`; the mean-centering cross terms cancel
/// because the centered rows sum to zero.
pub fn fnl_backward(batch: &LatentBatch, cfg: &FnlConfig) -> Result<Vec<Vec<f64>>> {
    let (mu, sigma) = numstat::batch_mean_cov(batch.rows())?;
    let inv_root = numstat::spd_inverse_sqrt(&sigma, cfg.eps).map_err(|e| match e {
        CoreError::Singular(msg) => {
            CoreError::Numerical(format!("fnl gradient needs nonsingular Σ + εI: {msg}"))
        }
        other => other,
    })?;
    let l = batch.latent_dim();
    let n = batch.len() as f64;
    let mut g = SymMatrix::zeros(l);
    for i in 0..l {
        for j in i..l {
            let eye = if i == j { 1.0 } else { 0.0 };
            g.set_sym(i, j, eye - inv_root.get(i, j));
        }
    }
    let two_over_n = 2.0 / n;
    let grads = batch
        .rows()
        .iter()
        .map(|row| {
            let centered: Vec<f64> = row
                .iter()
                .zip(mu.as_slice())
                .map(|(z, m)| z - m)
                .collect();
            let gc = g.mat_vec(&centered);
            mu.as_slice()
                .iter()
                .zip(&gc)
                .map(|(m, v)| two_over_n * (m + v))
                .collect()
        })
        .collect();
    Ok(grads)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testing::{assert_close, central_difference, grad_rel_err, seeded_rng};
    use rand::Rng;

    fn four_point_batch() -> LatentBatch {
        let r2 = 2.0_f64.sqrt();
        LatentBatch::new(vec![
            vec![r2, 0.0],
            vec![-r2, 0.0],
            vec![0.0, r2],
            vec![0.0, -r2],
        ])
        .unwrap()
    }

    #[test]
    fn forward_vanishes_on_whitened_batch() {
        let eps = 1e-6;
        let d2 = fnl_forward(&four_point_batch(), &FnlConfig { eps }).unwrap();
        // Each latent dimension contributes 1 + 1 − 2√(1+ε) ≈ −ε.
        assert!(d2.abs() <= 2.0 * 2.0 * eps, "|d²| = {} above 2·l·eps", d2.abs());
        assert_close(d2, 4.0 * (1.0 - (1.0 + eps).sqrt()), 1e-12, "closed form");
    }

    #[test]
    fn forward_matches_1d_closed_form() {
        // m = 1, s = 1: m² + s + 1 − 2√s = 1.
        let batch = LatentBatch::new(vec![vec![0.0], vec![2.0]]).unwrap();
        let d2 = fnl_forward(&batch, &FnlConfig { eps: 0.0 }).unwrap();
        assert_close(d2, 1.0, 1e-9, "1D closed form");
    }

    #[test]
    fn forward_degenerate_batch_at_origin() {
        // Σ = 0, μ = 0: d² = l − 2·l·√ε = 4 − 8e-3.
        let batch = LatentBatch::new(vec![vec![0.0; 4]; 3]).unwrap();
        let d2 = fnl_forward(&batch, &FnlConfig { eps: 1e-6 }).unwrap();
        assert_close(d2, 3.992, 1e-12, "degenerate batch");
    }

    #[test]
    fn forward_rejects_non_finite() {
        assert!(LatentBatch::new(vec![vec![f64::NAN, 0.0]]).is_err());
        assert!(LatentBatch::new(vec![vec![f64::INFINITY]]).is_err());
    }

    #[test]
    fn backward_zero_at_loss_minimum() {
        // μ = 0, Σ = I is the stationary point; with tiny ε the gradient is O(ε).
        let grads = fnl_backward(&four_point_batch(), &FnlConfig { eps: 1e-9 }).unwrap();
        for row in &grads {
            for &g in row {
                assert!(g.abs() < 1e-8, "gradient {g} not ~0 at the minimum");
            }
        }
    }

    #[test]
    fn backward_matches_1d_hand_derivative() {
        // ∂d²/∂z_i = 2μ/n + (1 − 1/√s)·2(z_i − μ)/n = (1, 1) for z = (0, 2).
        let batch = LatentBatch::new(vec![vec![0.0], vec![2.0]]).unwrap();
        let grads = fnl_backward(&batch, &FnlConfig { eps: 0.0 }).unwrap();
        assert_close(grads[0][0], 1.0, 1e-12, "grad z0");
        assert_close(grads[1][0], 1.0, 1e-12, "grad z1");
    }

    #[test]
    fn backward_matches_finite_differences_8x4() {
        let mut rng = seeded_rng(101);
        let rows: Vec<Vec<f64>> = (0..8)
            .map(|_| (0..4).map(|_| rng.random_range(-1.5..1.5)).collect())
            .collect();
        let cfg = FnlConfig { eps: 1e-6 };
        let batch = LatentBatch::new(rows.clone()).unwrap();
        let grads = fnl_backward(&batch, &cfg).unwrap();

        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        let mut f = |x: &[f64]| {
            let rows: Vec<Vec<f64>> = x.chunks(4).map(|c| c.to_vec()).collect();
            fnl_forward(&LatentBatch::new(rows).unwrap(), &cfg).unwrap()
        };
        for (k, &analytic) in grads.iter().flatten().enumerate() {
            let numeric = central_difference(&mut f, &flat, k, 1e-5);
            let err = grad_rel_err(analytic, numeric, 1e-6);
            assert!(err < 1e-4, "component {k}: rel err {err}");
        }
    }

    #[test]
    fn backward_rejects_singular_sigma_without_eps() {
        // Two identical rows: Σ = 0, ε = 0 has no inverse square root.
        let batch = LatentBatch::new(vec![vec![1.0, 2.0], vec![1.0, 2.0]]).unwrap();
        assert!(matches!(
            fnl_backward(&batch, &FnlConfig { eps: 0.0 }),
            Err(CoreError::Numerical(_))
        ));
    }

    #[test]
    fn forward_invariant_under_row_permutation() {
        let mut rng = seeded_rng(55);
        let rows: Vec<Vec<f64>> = (0..6)
            .map(|_| (0..3).map(|_| rng.random_range(-2.0..2.0)).collect())
            .collect();
        let cfg = FnlConfig::default();
        let base = fnl_forward(&LatentBatch::new(rows.clone()).unwrap(), &cfg).unwrap();
        let mut shuffled = rows;
        shuffled.reverse();
        shuffled.swap(0, 2);
        let permuted = fnl_forward(&LatentBatch::new(shuffled).unwrap(), &cfg).unwrap();
        assert_close(permuted, base, 1e-12, "row permutation");
    }

    #[test]
    fn forward_invariant_under_rotation() {
        use crate::testing::random_orthonormal;
        let mut rng = seeded_rng(77);
        let cfg = FnlConfig::default();
        for _ in 0..10 {
            let l = rng.random_range(2..6);
            let n = rng.random_range(2..12);
            let rows: Vec<Vec<f64>> = (0..n)
                .map(|_| (0..l).map(|_| rng.random_range(-2.0..2.0)).collect())
                .collect();
            let base = fnl_forward(&LatentBatch::new(rows.clone()).unwrap(), &cfg).unwrap();
            let q = random_orthonormal(l, &mut rng);
            let rotated: Vec<Vec<f64>> = rows.iter().map(|r| q.mat_vec(r)).collect();
            let rot = fnl_forward(&LatentBatch::new(rotated).unwrap(), &cfg).unwrap();
            assert!(
                (rot - base).abs() <= 1e-8,
                "rotation changed the loss: {base} vs {rot}"
            );
        }
    }

    #[test]
    fn forward_bounded_below() {
        let mut rng = seeded_rng(91);
        let cfg = FnlConfig { eps: 1e-4 };
        for _ in 0..50 {
            let l = rng.random_range(1..8);
            let n = rng.random_range(1..20);
            let rows: Vec<Vec<f64>> = (0..n)
                .map(|_| (0..l).map(|_| rng.random_range(-3.0..3.0)).collect())
                .collect();
            let d2 = fnl_forward(&LatentBatch::new(rows).unwrap(), &cfg).unwrap();
            assert!(
                d2 >= -(l as f64) * cfg.eps - 1e-12,
                "d² = {d2} below the −l·eps bound for l = {l}"
            );
        }
    }

    #[test]
    fn descent_step_does_not_increase_loss() {
        let mut rng = seeded_rng(13);
        let cfg = FnlConfig::default();
        for _ in 0..50 {
            let l = rng.random_range(1..6);
            let n = rng.random_range(2..16);
            let rows: Vec<Vec<f64>> = (0..n)
                .map(|_| (0..l).map(|_| rng.random_range(-2.0..2.0)).collect())
                .collect();
            let batch = LatentBatch::new(rows.clone()).unwrap();
            let before = fnl_forward(&batch, &cfg).unwrap();
            let grads = fnl_backward(&batch, &cfg).unwrap();
            let step = 1e-6;
            let moved: Vec<Vec<f64>> = rows
                .iter()
                .zip(&grads)
                .map(|(r, g)| r.iter().zip(g).map(|(z, gz)| z - step * gz).collect())
                .collect();
            let after = fnl_forward(&LatentBatch::new(moved).unwrap(), &cfg).unwrap();
            assert!(
                after <= before + 1e-12,
                "descent step increased the loss: {before} -> {after}"
            );
        }
    }

    #[test]
    fn large_standard_normal_batch_scores_near_zero() {
        use rand_distr::{Distribution, StandardNormal};
        let mut rng = seeded_rng(2024);
        let rows: Vec<Vec<f64>> = (0..10_000)
            .map(|_| {
                (0..4)
                    .map(|_| StandardNormal.sample(&mut rng))
                    .collect()
            })
            .collect();
        let d2 = fnl_forward(&LatentBatch::new(rows).unwrap(), &FnlConfig::default()).unwrap();
        assert!(d2 < 0.05, "N(0,I) sample scored {d2}");
        assert!(d2 > -1e-3, "suspiciously negative {d2}");
    }

    #[test]
    fn config_validation_bounds() {
        assert!(FnlConfig { eps: 1e-6 }.validate().is_ok());
        assert!(FnlConfig { eps: 0.0 }.validate().is_err());
        assert!(FnlConfig { eps: 0.5 }.validate().is_err());
    }
}
