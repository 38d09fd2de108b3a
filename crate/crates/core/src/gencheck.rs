//! The generalizability engine.
//!
//! After training, the positive-class latents are summarized by a fitted
//! Gaussian N(μ_f, Σ_f). At inference an exam's candidates are run through the
//! network; the latents of those scoring above ψ (the pseudo-positives) give a
//! set D of squared Mahalanobis distances to the fit. The exam is flagged low
//! generalizability when the median of D exceeds the chi-square quantile with
//! latent-dimension degrees of freedom: squared distances of Gaussian samples
//! follow exactly that law, which is why the comparison is on squares.

use crate::bundle::ModelBundle;
use crate::error::{CoreError, Result};
use crate::fnl::{self, FnlConfig, LatentBatch};
use crate::net::{self, NetParams};
use crate::numstat::{self, SymMatrix, Vector};
use crate::synth::Exam;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::Path;

/// Default ridge applied when inverting Σ_f.
pub const DEFAULT_FIT_RIDGE: f64 = 1e-8;

/// Default quantile level of the flag threshold.
pub const DEFAULT_QUANTILE_P: f64 = 0.95;

pub const WARN_HIGH: &str = "model generalizes";
pub const WARN_LOW: &str = "low model generalizability";
pub const WARN_INDETERMINATE: &str = "no findings above threshold";

/// Gaussian fitted to the training-positive latents, with the ridge-inverted
/// covariance cached for Mahalanobis queries.
#[derive(Debug, Clone)]
pub struct ForcedDist {
    pub mu_f: Vector,
    pub sigma_f: SymMatrix,
    sigma_f_inv: SymMatrix,
    pub ridge: f64,
    pub n_fit: usize,
    pub warning: Option<String>,
}

impl ForcedDist {
    /// Rebuilds the cached inverse from stored parameters (bundle loading).
    pub fn from_parts(
        mu_f: Vector,
        sigma_f: SymMatrix,
        ridge: f64,
        n_fit: usize,
        warning: Option<String>,
    ) -> Result<Self> {
        if mu_f.dim() != sigma_f.dim() {
            return Err(CoreError::Dimension(format!(
                "mu_f dim {} disagrees with sigma_f dim {}",
                mu_f.dim(),
                sigma_f.dim()
            )));
        }
        let sigma_f_inv = numstat::spd_inverse(&sigma_f, ridge)?;
        Ok(ForcedDist {
            mu_f,
            sigma_f,
            sigma_f_inv,
            ridge,
            n_fit,
            warning,
        })
    }

    pub fn latent_dim(&self) -> usize {
        self.mu_f.dim()
    }

    pub fn sigma_f_inv(&self) -> &SymMatrix {
        &self.sigma_f_inv
    }

    pub fn mahalanobis_sq(&self, z: &[f64]) -> Result<f64> {
        numstat::mahalanobis_sq(&Vector::new(z.to_vec())?, &self.mu_f, &self.sigma_f_inv)
    }
}

/// Population mean/covariance fit over all training-positive latents.
///
/// Needs at least 2 latents; with fewer than L+1 the covariance is rank
/// deficient and only the ridge keeps it invertible, which is recorded as a
/// warning rather than an error.
pub fn fit_forced_dist(latents: &[Vec<f64>], ridge: f64) -> Result<ForcedDist> {
    if latents.len() < 2 {
        return Err(CoreError::Fit(format!(
            "forced-distribution fit needs at least 2 latents, got {}",
            latents.len()
        )));
    }
    if ridge < 0.0 {
        return Err(CoreError::Config("fit ridge must be >= 0".into()));
    }
    let (mu_f, sigma_f) = numstat::batch_mean_cov(latents)?;
    let l = mu_f.dim();
    let mut warning = None;
    if latents.len() < l + 1 {
        warning = Some(format!(
            "only {} latents for a {l}-dimensional fit; covariance is rank deficient",
            latents.len()
        ));
    }
    let sigma_f_inv = match numstat::spd_inverse(&sigma_f, ridge) {
        Ok(inv) => inv,
        Err(CoreError::Singular(_)) if ridge == 0.0 => {
            return Err(CoreError::Fit(
                "covariance is singular and no ridge was provided".into(),
            ))
        }
        Err(e) => return Err(e),
    };
    if warning.is_none() {
        let eig = numstat::sym_eig(&sigma_f)?;
        if eig.values.last().copied().unwrap_or(0.0) <= ridge.max(f64::MIN_POSITIVE) {
            warning = Some(
                "covariance is numerically degenerate; inversion leaned on the ridge".into(),
            );
        }
    }
    Ok(ForcedDist {
        mu_f,
        sigma_f,
        sigma_f_inv,
        ridge,
        n_fit: latents.len(),
        warning,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GenStatus {
    HighGeneralizability,
    LowGeneralizability,
    Indeterminate,
}

impl GenStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            GenStatus::HighGeneralizability => "High",
            GenStatus::LowGeneralizability => "Low",
            GenStatus::Indeterminate => "Indeterminate",
        }
    }

    pub fn warning_text(self) -> &'static str {
        match self {
            GenStatus::HighGeneralizability => WARN_HIGH,
            GenStatus::LowGeneralizability => WARN_LOW,
            GenStatus::Indeterminate => WARN_INDETERMINATE,
        }
    }
}

/// Per-exam verdict.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GenReport {
    pub exam_id: String,
    pub site_tag: String,
    pub n_pseudo_positives: usize,
    pub distances: Vec<f64>,
    pub median_d: Option<f64>,
    pub threshold: f64,
    pub status: GenStatus,
    pub warning_text: String,
}

/// The decision rule on a set of pseudo-positive latents: median of squared
/// Mahalanobis distances against the chi-square quantile. Exposed separately
/// from [`score_exam`] so the rule can be driven with synthetic latents.
pub fn flag_latents(
    dist: &ForcedDist,
    latents: &[Vec<f64>],
    quantile_p: f64,
) -> Result<(Vec<f64>, Option<f64>, f64, GenStatus)> {
    let threshold = numstat::chi2_quantile(dist.latent_dim() as u32, quantile_p)?;
    let distances: Vec<f64> = latents
        .iter()
        .map(|z| dist.mahalanobis_sq(z))
        .collect::<Result<_>>()?;
    if distances.is_empty() {
        return Ok((distances, None, threshold, GenStatus::Indeterminate));
    }
    let med = numstat::median(&distances)?;
    let status = if med > threshold {
        GenStatus::LowGeneralizability
    } else {
        GenStatus::HighGeneralizability
    };
    Ok((distances, Some(med), threshold, status))
}

/// Scores one exam with a prebuilt forced distribution (the hot path when a
/// cohort is scored exam by exam).
pub fn score_exam_with(
    params: &NetParams,
    dist: &ForcedDist,
    psi: f64,
    quantile_p: f64,
    exam: &Exam,
) -> Result<GenReport> {
    let mut pseudo_latents = Vec::new();
    for c in &exam.candidates {
        let trace = net::forward(params, &c.features)?;
        if trace.y > psi {
            pseudo_latents.push(trace.latent().to_vec());
        }
    }
    let (distances, median_d, threshold, status) =
        flag_latents(dist, &pseudo_latents, quantile_p)?;
    Ok(GenReport {
        exam_id: exam.exam_id.clone(),
        site_tag: exam.site_tag.as_str().to_string(),
        n_pseudo_positives: pseudo_latents.len(),
        distances,
        median_d,
        threshold,
        status,
        warning_text: status.warning_text().to_string(),
    })
}

/// Scores one exam against a bundle.
pub fn score_exam(bundle: &ModelBundle, exam: &Exam) -> Result<GenReport> {
    let dist = ForcedDist::from_parts(
        bundle.mu_f.clone(),
        bundle.sigma_f.clone(),
        bundle.forced_fit_ridge,
        bundle.forced_fit_count,
        bundle.forced_fit_warning.clone(),
    )?;
    score_exam_with(&bundle.net, &dist, bundle.psi, bundle.quantile_p, exam)
}

/// Dataset-level latent diagnostics over a labeled positive set: mean L2 norm,
/// median distance to origin, and the Fréchet divergence from N(0, I).
#[derive(Debug, Clone, Copy, Serialize)]
pub struct LsmDiagnostics {
    pub mean_l2: f64,
    pub median_dist_origin: f64,
    pub fnl_value: f64,
    pub n: usize,
}

pub fn dataset_lsm_diagnostics(
    params: &NetParams,
    positives: &[Vec<f64>],
    fnl_cfg: &FnlConfig,
) -> Result<LsmDiagnostics> {
    if positives.is_empty() {
        return Err(CoreError::Eval(
            "latent diagnostics need at least one positive".into(),
        ));
    }
    let latents: Vec<Vec<f64>> = positives
        .iter()
        .map(|x| Ok(net::forward(params, x)?.latent().to_vec()))
        .collect::<Result<_>>()?;
    let norms: Vec<f64> = latents
        .iter()
        .map(|z| z.iter().map(|v| v * v).sum::<f64>().sqrt())
        .collect();
    let mean_l2 = norms.iter().sum::<f64>() / norms.len() as f64;
    let median_dist_origin = numstat::median(&norms)?;
    let fnl_value = fnl::fnl_forward(&LatentBatch::new(latents)?, fnl_cfg)?;
    Ok(LsmDiagnostics {
        mean_l2,
        median_dist_origin,
        fnl_value,
        n: positives.len(),
    })
}

/// Rectangular grid over two latent coordinates; the remaining coordinates
/// are pinned to μ_f.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridSpec {
    pub dim_a: usize,
    pub dim_b: usize,
    pub a_range: (f64, f64),
    pub b_range: (f64, f64),
    pub n_a: usize,
    pub n_b: usize,
}

/// Head probabilities over a latent grid, CSV-ready as (z_a, z_b, probability).
pub fn export_decision_surface(
    bundle: &ModelBundle,
    grid: &GridSpec,
) -> Result<Vec<(f64, f64, f64)>> {
    let l = bundle.latent_dim();
    if grid.dim_a >= l || grid.dim_b >= l {
        return Err(CoreError::Config(format!(
            "grid dims ({}, {}) out of range for latent dim {l}",
            grid.dim_a, grid.dim_b
        )));
    }
    if grid.n_a < 1 || grid.n_b < 1 {
        return Err(CoreError::Config("grid must have at least one point per axis".into()));
    }
    let coord = |range: (f64, f64), steps: usize, i: usize| {
        if steps == 1 {
            range.0
        } else {
            range.0 + (range.1 - range.0) * i as f64 / (steps - 1) as f64
        }
    };
    let mut out = Vec::with_capacity(grid.n_a * grid.n_b);
    for ia in 0..grid.n_a {
        let za = coord(grid.a_range, grid.n_a, ia);
        for ib in 0..grid.n_b {
            let zb = coord(grid.b_range, grid.n_b, ib);
            let mut z: Vec<f64> = bundle.mu_f.as_slice().to_vec();
            z[grid.dim_a] = za;
            z[grid.dim_b] = zb;
            out.push((za, zb, net::head_probability(&bundle.net, &z)?));
        }
    }
    Ok(out)
}

/// One CSV row per exam plus a JSON document for machine consumption.
pub fn write_gen_reports_csv(reports: &[GenReport], path: &Path) -> Result<()> {
    let mut out = Vec::new();
    writeln!(
        out,
        "exam_id,site_tag,n_pseudo_positives,median_d,threshold,status,warning_text"
    )
    .expect("vec write");
    for r in reports {
        let median = match r.median_d {
            Some(m) => format!("{m}"),
            None => "NA".into(),
        };
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.exam_id,
            r.site_tag,
            r.n_pseudo_positives,
            median,
            r.threshold,
            r.status.as_str(),
            r.warning_text
        )
        .expect("vec write");
    }
    std::fs::write(path, out).map_err(|e| CoreError::io(path.display().to_string(), e))
}

pub fn write_gen_reports_json(reports: &[GenReport], path: &Path) -> Result<()> {
    let json = serde_json::to_string_pretty(reports)
        .map_err(|e| CoreError::Eval(format!("report serialization failed: {e}")))?;
    std::fs::write(path, json + "\n").map_err(|e| CoreError::io(path.display().to_string(), e))
}

pub fn load_gen_reports_json(path: &Path) -> Result<Vec<GenReport>> {
    let text =
        std::fs::read_to_string(path).map_err(|e| CoreError::io(path.display().to_string(), e))?;
    serde_json::from_str(&text).map_err(|e| {
        CoreError::Config(format!("malformed reports file {}: {e}", path.display()))
    })
}
