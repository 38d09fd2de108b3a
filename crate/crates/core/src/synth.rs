//! Synthetic cohort generation.
//!
//! Stands in for an imaging pipeline: each exam is a pool of feature-vector
//! candidates, a few of them positive. The positive-class distribution of a
//! cohort can be pushed through an affine shift (mean offset, covariance
//! scaling about the class mean, a plane rotation, additive noise) to emulate
//! data from an external site, while negatives stay untouched. Generation is
//! pure given the spec; every exam draws from its own RNG stream derived from
//! `(seed, exam index)`.

use crate::error::{CoreError, Result};
use crate::numstat::{self, SymMatrix};
use crate::seed::derive_seed;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::Path;

pub const COHORT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SiteTag {
    Internal,
    Shifted,
}

impl SiteTag {
    pub fn as_str(self) -> &'static str {
        match self {
            SiteTag::Internal => "internal",
            SiteTag::Shifted => "shifted",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub candidate_id: u64,
    pub features: Vec<f64>,
    pub label: u8,
}

/// A group of candidates scored together; the unit that receives one
/// generalizability verdict.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exam {
    pub exam_id: String,
    pub site_tag: SiteTag,
    pub candidates: Vec<Candidate>,
}

impl Exam {
    pub fn n_positives(&self) -> usize {
        self.candidates.iter().filter(|c| c.label == 1).count()
    }
}

/// Gaussian component: mean and SPD covariance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianParams {
    pub mean: Vec<f64>,
    pub cov: SymMatrix,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureComponent {
    pub weight: f64,
    pub mean: Vec<f64>,
    pub cov: SymMatrix,
}

/// One support point of the positives-per-exam distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountWeight {
    pub count: usize,
    pub weight: f64,
}

/// Affine domain shift for positive-class features:
///
/// ```text
/// x' = R · (mean_shift + (x − center)·√cov_scale + center) + η
/// ```
///
/// with R a rotation by `rotation_angle` in the `rotation_plane` coordinate
/// plane and η ~ N(0, noise_sigma²·I). The identity spec returns its input
/// bit-exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShiftSpec {
    pub mean_shift: Vec<f64>,
    pub cov_scale: f64,
    pub rotation_angle: f64,
    pub rotation_plane: (usize, usize),
    pub noise_sigma: f64,
}

impl ShiftSpec {
    pub fn identity(dim: usize) -> Self {
        ShiftSpec {
            mean_shift: vec![0.0; dim],
            cov_scale: 1.0,
            rotation_angle: 0.0,
            rotation_plane: (0, usize::from(dim > 1)),
            noise_sigma: 0.0,
        }
    }

    pub fn is_identity(&self) -> bool {
        self.mean_shift.iter().all(|&v| v == 0.0)
            && self.cov_scale == 1.0
            && self.rotation_angle == 0.0
            && self.noise_sigma == 0.0
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        if self.mean_shift.len() != dim {
            return Err(CoreError::Config(format!(
                "mean_shift has dim {}, features have dim {dim}",
                self.mean_shift.len()
            )));
        }
        if self.cov_scale <= 0.0 {
            return Err(CoreError::Config("cov_scale must be > 0".into()));
        }
        if self.noise_sigma < 0.0 {
            return Err(CoreError::Config("noise_sigma must be >= 0".into()));
        }
        let (a, b) = self.rotation_plane;
        if a >= dim || b >= dim || (a == b && dim > 1) {
            return Err(CoreError::Config(format!(
                "rotation_plane ({a}, {b}) out of range for dim {dim}"
            )));
        }
        Ok(())
    }
}

/// Applies the shift to one feature vector. `center` is the positive-class
/// mean the covariance scaling pivots around.
pub fn apply_shift(
    x: &[f64],
    shift: &ShiftSpec,
    center: &[f64],
    rng: &mut ChaCha8Rng,
) -> Vec<f64> {
    debug_assert_eq!(x.len(), shift.mean_shift.len());
    debug_assert_eq!(x.len(), center.len());
    if shift.is_identity() {
        return x.to_vec();
    }
    let sqrt_scale = shift.cov_scale.sqrt();
    let mut out: Vec<f64> = x
        .iter()
        .zip(center)
        .zip(&shift.mean_shift)
        .map(|((&xi, &ci), &mi)| {
            // Scaling by exactly 1 keeps the centering out of the arithmetic
            // so a pure mean shift changes features by exactly mean_shift.
            let scaled = if shift.cov_scale == 1.0 {
                xi
            } else {
                (xi - ci) * sqrt_scale + ci
            };
            mi + scaled
        })
        .collect();
    if shift.rotation_angle != 0.0 && x.len() > 1 {
        let (a, b) = shift.rotation_plane;
        let (sin, cos) = shift.rotation_angle.sin_cos();
        let (va, vb) = (out[a], out[b]);
        out[a] = cos * va - sin * vb;
        out[b] = sin * va + cos * vb;
    }
    if shift.noise_sigma > 0.0 {
        for v in out.iter_mut() {
            let noise: f64 = StandardNormal.sample(rng);
            *v += shift.noise_sigma * noise;
        }
    }
    out
}

/// Everything needed to generate a cohort deterministically.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortSpec {
    pub exam_id_prefix: String,
    pub n_exams: usize,
    pub candidates_per_exam: usize,
    pub positives_per_exam: Vec<CountWeight>,
    pub feature_dim: usize,
    pub pos_params: GaussianParams,
    pub neg_params: Vec<MixtureComponent>,
    pub shift: ShiftSpec,
    pub seed: u64,
}

impl CohortSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_exams < 1 {
            return Err(CoreError::Config("n_exams must be >= 1".into()));
        }
        if self.candidates_per_exam < 1 {
            return Err(CoreError::Config("candidates_per_exam must be >= 1".into()));
        }
        if self.feature_dim < 1 {
            return Err(CoreError::Config("feature_dim must be >= 1".into()));
        }
        if self.positives_per_exam.is_empty() {
            return Err(CoreError::Config("positives_per_exam must be nonempty".into()));
        }
        for cw in &self.positives_per_exam {
            if cw.count < 1 || cw.count > self.candidates_per_exam {
                return Err(CoreError::Config(format!(
                    "positive count {} outside [1, candidates_per_exam]",
                    cw.count
                )));
            }
            if !(cw.weight > 0.0) {
                return Err(CoreError::Config("positive count weights must be > 0".into()));
            }
        }
        validate_gaussian(&self.pos_params.mean, &self.pos_params.cov, self.feature_dim)?;
        if self.neg_params.is_empty() {
            return Err(CoreError::Config("neg_params must have >= 1 component".into()));
        }
        for comp in &self.neg_params {
            if !(comp.weight > 0.0) {
                return Err(CoreError::Config("mixture weights must be > 0".into()));
            }
            validate_gaussian(&comp.mean, &comp.cov, self.feature_dim)?;
        }
        self.shift.validate(self.feature_dim)?;
        Ok(())
    }
}

fn validate_gaussian(mean: &[f64], cov: &SymMatrix, dim: usize) -> Result<()> {
    if mean.len() != dim || cov.dim() != dim {
        return Err(CoreError::Config(format!(
            "component dims {} / {} disagree with feature_dim {dim}",
            mean.len(),
            cov.dim()
        )));
    }
    let eig = numstat::sym_eig(cov)?;
    if eig.values.iter().any(|&l| l <= 0.0) {
        return Err(CoreError::Config(
            "covariance must be symmetric positive definite".into(),
        ));
    }
    Ok(())
}

/// Cohort file payload: the generating spec plus the exams.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cohort {
    pub format_version: u32,
    pub spec: CohortSpec,
    pub exams: Vec<Exam>,
}

impl Cohort {
    pub fn n_positives(&self) -> usize {
        self.exams.iter().map(Exam::n_positives).sum()
    }

    pub fn positive_features(&self) -> Vec<&[f64]> {
        self.exams
            .iter()
            .flat_map(|e| e.candidates.iter())
            .filter(|c| c.label == 1)
            .map(|c| c.features.as_slice())
            .collect()
    }
}

struct GaussianSampler {
    mean: Vec<f64>,
    factor: SymMatrix,
}

impl GaussianSampler {
    fn new(mean: &[f64], cov: &SymMatrix) -> Result<Self> {
        Ok(GaussianSampler {
            mean: mean.to_vec(),
            factor: numstat::spd_sqrt(cov, 0.0)?,
        })
    }

    fn draw(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let xi: Vec<f64> = (0..self.mean.len())
            .map(|_| StandardNormal.sample(rng))
            .collect();
        let correlated = self.factor.mat_vec(&xi);
        self.mean
            .iter()
            .zip(&correlated)
            .map(|(m, c)| m + c)
            .collect()
    }
}

fn sample_categorical<T: Copy>(items: &[(T, f64)], rng: &mut ChaCha8Rng) -> T {
    let total: f64 = items.iter().map(|(_, w)| w).sum();
    let mut u = rng.random_range(0.0..total);
    for &(item, w) in items {
        if u < w {
            return item;
        }
        u -= w;
    }
    items.last().expect("categorical support is nonempty").0
}

/// Generates the cohort described by `spec`. Positives come first within each
/// exam (candidate identity, not position, is what downstream matching uses).
pub fn generate_cohort(spec: &CohortSpec) -> Result<Cohort> {
    use rand::SeedableRng;
    spec.validate()?;
    let site_tag = if spec.shift.is_identity() {
        SiteTag::Internal
    } else {
        SiteTag::Shifted
    };
    let pos_sampler = GaussianSampler::new(&spec.pos_params.mean, &spec.pos_params.cov)?;
    let neg_samplers: Vec<(GaussianSampler, f64)> = spec
        .neg_params
        .iter()
        .map(|c| Ok((GaussianSampler::new(&c.mean, &c.cov)?, c.weight)))
        .collect::<Result<_>>()?;
    let count_support: Vec<(usize, f64)> = spec
        .positives_per_exam
        .iter()
        .map(|cw| (cw.count, cw.weight))
        .collect();
    let neg_index_support: Vec<(usize, f64)> = neg_samplers
        .iter()
        .enumerate()
        .map(|(i, (_, w))| (i, *w))
        .collect();

    let exams = (0..spec.n_exams)
        .map(|e| {
            let mut rng =
                ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, &format!("exam-{e}")));
            let n_pos = sample_categorical(&count_support, &mut rng);
            let mut candidates = Vec::with_capacity(spec.candidates_per_exam);
            for id in 0..spec.candidates_per_exam as u64 {
                let (features, label) = if (id as usize) < n_pos {
                    let raw = pos_sampler.draw(&mut rng);
                    (
                        apply_shift(&raw, &spec.shift, &spec.pos_params.mean, &mut rng),
                        1,
                    )
                } else {
                    let comp = sample_categorical(&neg_index_support, &mut rng);
                    (neg_samplers[comp].0.draw(&mut rng), 0)
                };
                candidates.push(Candidate {
                    candidate_id: id,
                    features,
                    label,
                });
            }
            Exam {
                exam_id: format!("{}-{e:04}", spec.exam_id_prefix),
                site_tag,
                candidates,
            }
        })
        .collect();
    Ok(Cohort {
        format_version: COHORT_FORMAT_VERSION,
        spec: spec.clone(),
        exams,
    })
}

pub fn save_cohort(cohort: &Cohort, path: &Path) -> Result<()> {
    let json = serde_json::to_string(cohort)
        .map_err(|e| CoreError::Config(format!("cohort serialization failed: {e}")))?;
    std::fs::write(path, json + "\n").map_err(|e| CoreError::io(path.display().to_string(), e))
}

pub fn load_cohort(path: &Path) -> Result<Cohort> {
    let text =
        std::fs::read_to_string(path).map_err(|e| CoreError::io(path.display().to_string(), e))?;
    let cohort: Cohort = serde_json::from_str(&text).map_err(|e| {
        CoreError::Config(format!("malformed cohort file {}: {e}", path.display()))
    })?;
    if cohort.format_version != COHORT_FORMAT_VERSION {
        return Err(CoreError::Config(format!(
            "cohort format version {} unsupported (expected {COHORT_FORMAT_VERSION})",
            cohort.format_version
        )));
    }
    if cohort.exams.is_empty() {
        return Err(CoreError::Config(format!(
            "cohort file {} contains no exams",
            path.display()
        )));
    }
    Ok(cohort)
}

/// Flat CSV export: `exam_id,candidate_id,label,site_tag,f_0,…,f_{F-1}`.
pub fn write_cohort_csv(cohort: &Cohort, path: &Path) -> Result<()> {
    let mut out = Vec::new();
    write!(out, "exam_id,candidate_id,label,site_tag").expect("vec write");
    for i in 0..cohort.spec.feature_dim {
        write!(out, ",f_{i}").expect("vec write");
    }
    writeln!(out).expect("vec write");
    for exam in &cohort.exams {
        for c in &exam.candidates {
            write!(
                out,
                "{},{},{},{}",
                exam.exam_id,
                c.candidate_id,
                c.label,
                exam.site_tag.as_str()
            )
            .expect("vec write");
            for f in &c.features {
                write!(out, ",{f}").expect("vec write");
            }
            writeln!(out).expect("vec write");
        }
    }
    std::fs::write(path, out).map_err(|e| CoreError::io(path.display().to_string(), e))
}

/// Reads candidates back from the flat CSV (the diagnostics command accepts
/// either format).
pub fn read_candidates_csv(path: &Path) -> Result<Vec<(String, Candidate)>> {
    let text =
        std::fs::read_to_string(path).map_err(|e| CoreError::io(path.display().to_string(), e))?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| CoreError::Config(format!("empty CSV file {}", path.display())))?;
    if !header.starts_with("exam_id,candidate_id,label,site_tag") {
        return Err(CoreError::Config(format!(
            "unrecognized CSV header in {}",
            path.display()
        )));
    }
    let mut out = Vec::new();
    for (lineno, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() < 5 {
            return Err(CoreError::Config(format!(
                "line {} of {} has too few fields",
                lineno + 2,
                path.display()
            )));
        }
        let parse_err = |what: &str| {
            CoreError::Config(format!(
                "line {} of {}: bad {what}",
                lineno + 2,
                path.display()
            ))
        };
        let candidate_id: u64 = fields[1].parse().map_err(|_| parse_err("candidate_id"))?;
        let label: u8 = fields[2].parse().map_err(|_| parse_err("label"))?;
        let features: Vec<f64> = fields[4..]
            .iter()
            .map(|f| f.parse().map_err(|_| parse_err("feature")))
            .collect::<Result<_>>()?;
        out.push((
            fields[0].to_string(),
            Candidate {
                candidate_id,
                features,
                label,
            },
        ));
    }
    Ok(out)
}
