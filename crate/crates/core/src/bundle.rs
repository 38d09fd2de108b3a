//! Model persistence.
//!
//! A [`ModelBundle`] is everything needed to score new exams: the trained
//! network, the forced-distribution fit (μ_f, Σ_f), the calibrated threshold
//! ψ, and the training provenance. Bundles are stored as versioned,
//! self-describing JSON; floats round-trip exactly (shortest-representation
//! encoding), so save → load reproduces every weight bit for bit.

use crate::error::{CoreError, Result};
use crate::net::{LossWeights, NetParams, OptimConfig};
use crate::numstat::{SymMatrix, Vector};
use serde::{Deserialize, Serialize};
use std::path::Path;

pub const BUNDLE_FORMAT_VERSION: u32 = 1;

/// Trained model plus the inference-time state derived from training data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelBundle {
    pub format_version: u32,
    /// "fnl" for the forced-latent objective, "baseline" for w_fnl = 0 runs.
    pub variant: String,
    pub net: NetParams,
    /// Mean of the forced distribution fitted to training-positive latents.
    pub mu_f: Vector,
    /// Covariance of the forced distribution.
    pub sigma_f: SymMatrix,
    /// Ridge used when inverting sigma_f.
    pub forced_fit_ridge: f64,
    /// Number of latents used for the fit, with an optional degeneracy note.
    pub forced_fit_count: usize,
    pub forced_fit_warning: Option<String>,
    /// Calibrated classification threshold (detection is strictly above).
    pub psi: f64,
    pub achieved_sensitivity: f64,
    /// Chi-square quantile level for the generalizability flag.
    pub quantile_p: f64,
    pub loss_weights: LossWeights,
    pub optim: OptimConfig,
    pub fnl_eps: f64,
    pub train_seed: u64,
    pub data_fingerprint: String,
}

impl ModelBundle {
    pub fn latent_dim(&self) -> usize {
        self.net.config.latent_dim
    }

    fn validate(&self) -> Result<()> {
        self.net
            .validate_shapes()
            .map_err(|e| CoreError::BundleShape(e.to_string()))?;
        let l = self.net.config.latent_dim;
        if self.mu_f.dim() != l || self.sigma_f.dim() != l {
            return Err(CoreError::BundleShape(format!(
                "forced distribution has dim {} / {} but the latent layer is {l}-dimensional",
                self.mu_f.dim(),
                self.sigma_f.dim()
            )));
        }
        if !self.psi.is_finite() || !(self.quantile_p > 0.0 && self.quantile_p < 1.0) {
            return Err(CoreError::BundleShape(
                "psi must be finite and quantile_p in (0, 1)".into(),
            ));
        }
        Ok(())
    }
}

pub fn save_bundle(bundle: &ModelBundle, path: &Path) -> Result<()> {
    bundle.validate()?;
    let json = serde_json::to_string_pretty(bundle)
        .map_err(|e| CoreError::BundleMalformed(e.to_string()))?;
    std::fs::write(path, json + "\n").map_err(|e| CoreError::io(path.display().to_string(), e))
}

pub fn load_bundle(path: &Path) -> Result<ModelBundle> {
    let text =
        std::fs::read_to_string(path).map_err(|e| CoreError::io(path.display().to_string(), e))?;
    // Version gate first so an old file reports a version error, not a
    // field-by-field parse failure.
    let value: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| CoreError::BundleMalformed(format!("{path:?}: {e}", path = path.display())))?;
    let found = value
        .get("format_version")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| CoreError::BundleMalformed("missing format_version field".into()))?
        as u32;
    if found != BUNDLE_FORMAT_VERSION {
        return Err(CoreError::BundleVersion {
            found,
            expected: BUNDLE_FORMAT_VERSION,
        });
    }
    let bundle: ModelBundle =
        serde_json::from_value(value).map_err(|e| CoreError::BundleMalformed(e.to_string()))?;
    bundle.validate()?;
    Ok(bundle)
}
