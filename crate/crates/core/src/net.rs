//! Feedforward classifier with a dual head.
//!
//! The network maps a feature vector through its hidden layers into an
//! L-dimensional latent layer (the latent space mapping, linear on purpose so
//! the forced N(0, I) target's unbounded support is reachable) and from there
//! through a single sigmoid unit into a class probability. Training combines
//! binary cross-entropy over the whole batch with the Fréchet normal loss
//! over the latents of positive-labeled items only.

use crate::error::{CoreError, Result};
use crate::fnl::{self, FnlConfig, LatentBatch};
use serde::{Deserialize, Serialize};

/// Guard on the classification logit so the sigmoid output stays strictly
/// inside (0, 1) and cross-entropy stays finite.
pub const LOGIT_CLAMP: f64 = 30.0;

/// Probabilities are clamped to this range inside [`bce_loss`].
pub const BCE_PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
        }
    }

    /// Derivative given preactivation `x` and post-activation `a`.
    fn derivative(self, x: f64, a: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - a * a,
        }
    }
}

/// Architecture of the classifier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetConfig {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub latent_dim: usize,
    pub activation: Activation,
    pub seed: u64,
}

impl NetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim < 1 {
            return Err(CoreError::Config("input_dim must be >= 1".into()));
        }
        if self.latent_dim < 1 {
            return Err(CoreError::Config("latent_dim must be >= 1".into()));
        }
        if self.hidden_dims.is_empty() {
            return Err(CoreError::Config("at least one hidden layer is required".into()));
        }
        if self.hidden_dims.iter().any(|&d| d < 1) {
            return Err(CoreError::Config("hidden layer widths must be >= 1".into()));
        }
        Ok(())
    }
}

/// One dense layer, weights row-major `out_dim x in_dim`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl DenseLayer {
    fn zeros(in_dim: usize, out_dim: usize) -> Self {
        DenseLayer {
            in_dim,
            out_dim,
            weights: vec![0.0; in_dim * out_dim],
            bias: vec![0.0; out_dim],
        }
    }

    fn affine(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.in_dim);
        (0..self.out_dim)
            .map(|o| {
                let row = &self.weights[o * self.in_dim..(o + 1) * self.in_dim];
                self.bias[o] + row.iter().zip(x).map(|(w, xi)| w * xi).sum::<f64>()
            })
            .collect()
    }
}

/// All trainable parameters. `layers` holds the hidden layers in order,
/// then the linear latent layer, then the one-unit classification head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetParams {
    pub config: NetConfig,
    pub layers: Vec<DenseLayer>,
}

impl NetParams {
    fn hidden_count(&self) -> usize {
        self.config.hidden_dims.len()
    }

    fn latent_index(&self) -> usize {
        self.hidden_count()
    }

    fn head_index(&self) -> usize {
        self.hidden_count() + 1
    }

    pub fn head(&self) -> &DenseLayer {
        &self.layers[self.head_index()]
    }

    /// Layer dimensions implied by the config, in `layers` order.
    fn layer_dims(config: &NetConfig) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(config.hidden_dims.len() + 2);
        let mut prev = config.input_dim;
        for &h in &config.hidden_dims {
            dims.push((prev, h));
            prev = h;
        }
        dims.push((prev, config.latent_dim));
        dims.push((config.latent_dim, 1));
        dims
    }

    pub fn validate_shapes(&self) -> Result<()> {
        self.config.validate()?;
        let dims = Self::layer_dims(&self.config);
        if self.layers.len() != dims.len() {
            return Err(CoreError::Dimension(format!(
                "expected {} layers, found {}",
                dims.len(),
                self.layers.len()
            )));
        }
        for (i, (layer, &(ind, outd))) in self.layers.iter().zip(&dims).enumerate() {
            if layer.in_dim != ind
                || layer.out_dim != outd
                || layer.weights.len() != ind * outd
                || layer.bias.len() != outd
            {
                return Err(CoreError::Dimension(format!(
                    "layer {i} has shape {}x{} (weights {}, bias {}), expected {outd}x{ind}",
                    layer.out_dim,
                    layer.in_dim,
                    layer.weights.len(),
                    layer.bias.len()
                )));
            }
            if layer.weights.iter().chain(&layer.bias).any(|v| !v.is_finite()) {
                return Err(CoreError::Numerical(format!(
                    "layer {i} contains a non-finite parameter"
                )));
            }
        }
        Ok(())
    }
}

/// Glorot-uniform initialization, `U(±√(6/(fan_in + fan_out)))`, biases zero,
/// draw order fixed by layer then row-major weight index.
pub fn init_params(config: &NetConfig) -> Result<NetParams> {
    use rand::{Rng, SeedableRng};
    config.validate()?;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(config.seed);
    let layers = NetParams::layer_dims(config)
        .iter()
        .map(|&(ind, outd)| {
            let bound = (6.0 / (ind + outd) as f64).sqrt();
            DenseLayer {
                in_dim: ind,
                out_dim: outd,
                weights: (0..ind * outd)
                    .map(|_| rng.random_range(-bound..bound))
                    .collect(),
                bias: vec![0.0; outd],
            }
        })
        .collect();
    Ok(NetParams {
        config: config.clone(),
        layers,
    })
}

/// Forward pass record: post-activation of every layer up to and including
/// the latent (z_1 … z_d), plus the head output.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub activations: Vec<Vec<f64>>,
    preacts: Vec<Vec<f64>>,
    input: Vec<f64>,
    pub raw_logit: f64,
    pub y: f64,
}

impl ForwardTrace {
    /// The latent space mapping z_d.
    pub fn latent(&self) -> &[f64] {
        self.activations.last().expect("trace has a latent layer")
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Deterministic forward pass through hidden layers, latent layer, and head.
pub fn forward(params: &NetParams, x: &[f64]) -> Result<ForwardTrace> {
    if x.len() != params.config.input_dim {
        return Err(CoreError::Dimension(format!(
            "input has dim {}, network expects {}",
            x.len(),
            params.config.input_dim
        )));
    }
    let n_hidden = params.hidden_count();
    let mut activations = Vec::with_capacity(n_hidden + 1);
    let mut preacts = Vec::with_capacity(n_hidden + 1);
    let mut a: Vec<f64> = x.to_vec();
    for (idx, layer) in params.layers.iter().enumerate() {
        let s = layer.affine(&a);
        if s.iter().any(|v| !v.is_finite()) {
            return Err(CoreError::Numerical(format!(
                "non-finite activation in layer {idx}"
            )));
        }
        if idx < n_hidden {
            let act: Vec<f64> = s.iter().map(|&v| params.config.activation.apply(v)).collect();
            preacts.push(s);
            activations.push(act.clone());
            a = act;
        } else if idx == params.latent_index() {
            preacts.push(s.clone());
            activations.push(s.clone());
            a = s;
        } else {
            let raw_logit = s[0];
            let y = sigmoid(raw_logit.clamp(-LOGIT_CLAMP, LOGIT_CLAMP));
            return Ok(ForwardTrace {
                activations,
                preacts,
                input: x.to_vec(),
                raw_logit,
                y,
            });
        }
    }
    unreachable!("layer stack always ends with a head")
}

/// Head probability for a synthetic latent point (decision-surface export).
pub fn head_probability(params: &NetParams, latent: &[f64]) -> Result<f64> {
    let head = params.head();
    if latent.len() != head.in_dim {
        return Err(CoreError::Dimension(format!(
            "latent has dim {}, head expects {}",
            latent.len(),
            head.in_dim
        )));
    }
    let s = head.affine(latent)[0];
    Ok(sigmoid(s.clamp(-LOGIT_CLAMP, LOGIT_CLAMP)))
}

/// Binary cross-entropy with the probability clamped away from 0 and 1.
pub fn bce_loss(y_hat: f64, y: f64) -> f64 {
    let p = y_hat.clamp(BCE_PROB_FLOOR, 1.0 - BCE_PROB_FLOOR);
    -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
}

/// Relative weights of the two loss terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub w_bce: f64,
    pub w_fnl: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            w_bce: 0.9,
            w_fnl: 0.1,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if self.w_bce < 0.0 || self.w_fnl < 0.0 || self.w_bce + self.w_fnl <= 0.0 {
            return Err(CoreError::Config(
                "loss weights must be nonnegative with a positive sum".into(),
            ));
        }
        Ok(())
    }
}

/// One labeled training item.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Sample {
    pub features: Vec<f64>,
    pub label: u8,
}

/// Loss value split into its components.
#[derive(Debug, Clone, Copy)]
pub struct CombinedLoss {
    pub total: f64,
    pub bce: f64,
    pub fnl: f64,
}

/// Gradient (or moment) buffers shaped like the parameter stack.
#[derive(Debug, Clone)]
pub struct ParamBuffers {
    pub layers: Vec<DenseLayer>,
}

impl ParamBuffers {
    pub fn zeros_like(params: &NetParams) -> Self {
        ParamBuffers {
            layers: params
                .layers
                .iter()
                .map(|l| DenseLayer::zeros(l.in_dim, l.out_dim))
                .collect(),
        }
    }

    fn shape_matches(&self, params: &NetParams) -> bool {
        self.layers.len() == params.layers.len()
            && self
                .layers
                .iter()
                .zip(&params.layers)
                .all(|(a, b)| a.in_dim == b.in_dim && a.out_dim == b.out_dim)
    }
}

/// Gradient of the BCE path with respect to the raw logit, honoring both
/// clamps exactly: where either clamp is active the composed loss is locally
/// constant, so the true derivative is zero. This is what makes the analytic
/// gradient agree with finite differences everywhere.
fn bce_logit_grad(raw_logit: f64, y_hat: f64, label: f64) -> f64 {
    if raw_logit.abs() > LOGIT_CLAMP {
        return 0.0;
    }
    if y_hat <= BCE_PROB_FLOOR || y_hat >= 1.0 - BCE_PROB_FLOOR {
        return 0.0;
    }
    y_hat - label
}

/// Backpropagates one item's head-logit gradient and latent-space gradient
/// through the stack, accumulating into `grads`.
fn backprop_item(
    params: &NetParams,
    trace: &ForwardTrace,
    d_logit: f64,
    d_latent_extra: Option<&[f64]>,
    grads: &mut ParamBuffers,
) {
    let head_idx = params.head_index();
    let latent = trace.latent();

    // Head layer.
    {
        let g = &mut grads.layers[head_idx];
        for (w, &z) in g.weights.iter_mut().zip(latent) {
            *w += d_logit * z;
        }
        g.bias[0] += d_logit;
    }
    let head = &params.layers[head_idx];
    let mut d_act: Vec<f64> = head.weights.iter().map(|w| w * d_logit).collect();
    if let Some(extra) = d_latent_extra {
        for (d, e) in d_act.iter_mut().zip(extra) {
            *d += e;
        }
    }

    // Latent layer (linear) and hidden layers, walking backwards.
    for idx in (0..=params.latent_index()).rev() {
        let layer = &params.layers[idx];
        let d_pre: Vec<f64> = if idx == params.latent_index() {
            d_act
        } else {
            let pre = &trace.preacts[idx];
            let act = &trace.activations[idx];
            d_act
                .iter()
                .zip(pre.iter().zip(act))
                .map(|(&d, (&s, &a))| d * params.config.activation.derivative(s, a))
                .collect()
        };
        let a_prev: &[f64] = if idx == 0 {
            &trace.input
        } else {
            &trace.activations[idx - 1]
        };
        {
            let g = &mut grads.layers[idx];
            for (o, &dp) in d_pre.iter().enumerate() {
                let row = &mut g.weights[o * layer.in_dim..(o + 1) * layer.in_dim];
                for (w, &ap) in row.iter_mut().zip(a_prev) {
                    *w += dp * ap;
                }
                g.bias[o] += dp;
            }
        }
        if idx > 0 {
            let mut d_prev = vec![0.0; layer.in_dim];
            for (o, &dp) in d_pre.iter().enumerate() {
                let row = &layer.weights[o * layer.in_dim..(o + 1) * layer.in_dim];
                for (d, &w) in d_prev.iter_mut().zip(row) {
                    *d += dp * w;
                }
            }
            d_act = d_prev;
        } else {
            break;
        }
    }
}

/// Combined loss `w_bce·mean(BCE) + w_fnl·FNL(positive latents)` and its
/// gradient with respect to every parameter.
///
/// The FNL term is skipped entirely (value and gradient exactly zero) when
/// the batch has no positive item or `w_fnl == 0`, so a pure-BCE run is
/// bit-identical to one that never constructed the FNL machinery.
pub fn combined_loss_and_grads(
    params: &NetParams,
    batch: &[Sample],
    weights: &LossWeights,
    fnl_cfg: &FnlConfig,
) -> Result<(CombinedLoss, ParamBuffers)> {
    if batch.is_empty() {
        return Err(CoreError::Dimension("training batch must be nonempty".into()));
    }
    weights.validate()?;
    let n = batch.len() as f64;

    let traces: Vec<ForwardTrace> = batch
        .iter()
        .map(|s| forward(params, &s.features))
        .collect::<Result<_>>()?;

    let bce_mean = traces
        .iter()
        .zip(batch)
        .map(|(t, s)| bce_loss(t.y, s.label as f64))
        .sum::<f64>()
        / n;

    let positive_indices: Vec<usize> = batch
        .iter()
        .enumerate()
        .filter(|(_, s)| s.label == 1)
        .map(|(i, _)| i)
        .collect();

    let (fnl_value, fnl_grads) = if weights.w_fnl > 0.0 && !positive_indices.is_empty() {
        let latents: Vec<Vec<f64>> = positive_indices
            .iter()
            .map(|&i| traces[i].latent().to_vec())
            .collect();
        let lb = LatentBatch::new(latents)?;
        let value = fnl::fnl_forward(&lb, fnl_cfg)?;
        let grads = fnl::fnl_backward(&lb, fnl_cfg)?;
        (value, Some(grads))
    } else {
        (0.0, None)
    };

    let mut grads = ParamBuffers::zeros_like(params);
    let mut latent_grad_of = vec![None::<Vec<f64>>; batch.len()];
    if let Some(fg) = &fnl_grads {
        for (slot, g) in positive_indices.iter().zip(fg) {
            latent_grad_of[*slot] = Some(g.iter().map(|v| weights.w_fnl * v).collect());
        }
    }
    for ((sample, trace), latent_extra) in batch.iter().zip(&traces).zip(&latent_grad_of) {
        let d_logit =
            weights.w_bce / n * bce_logit_grad(trace.raw_logit, trace.y, sample.label as f64);
        backprop_item(params, trace, d_logit, latent_extra.as_deref(), &mut grads);
    }

    Ok((
        CombinedLoss {
            total: weights.w_bce * bce_mean + weights.w_fnl * fnl_value,
            bce: bce_mean,
            fnl: fnl_value,
        },
        grads,
    ))
}

/// Adam hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        OptimConfig {
            learning_rate: 5e-5,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
        }
    }
}

impl OptimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.learning_rate <= 0.0 {
            return Err(CoreError::Config("learning_rate must be > 0".into()));
        }
        if !(self.beta1 > 0.0 && self.beta1 < 1.0 && self.beta2 > 0.0 && self.beta2 < 1.0) {
            return Err(CoreError::Config("betas must lie in (0, 1)".into()));
        }
        Ok(())
    }
}

/// First and second moment estimates.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub m: ParamBuffers,
    pub v: ParamBuffers,
}

impl AdamState {
    pub fn new(params: &NetParams) -> Self {
        AdamState {
            m: ParamBuffers::zeros_like(params),
            v: ParamBuffers::zeros_like(params),
        }
    }
}

/// One Adam update with bias correction; `t` is the 1-based step index.
pub fn adam_step(
    params: &mut NetParams,
    grads: &ParamBuffers,
    state: &mut AdamState,
    cfg: &OptimConfig,
    t: u64,
) -> Result<()> {
    assert!(t >= 1, "Adam step index is 1-based");
    if !grads.shape_matches(params)
        || !state.m.shape_matches(params)
        || !state.v.shape_matches(params)
    {
        return Err(CoreError::Dimension(
            "gradient/state buffers do not match parameter shapes".into(),
        ));
    }
    let bc1 = 1.0 - cfg.beta1.powi(t as i32);
    let bc2 = 1.0 - cfg.beta2.powi(t as i32);
    for (li, layer) in params.layers.iter_mut().enumerate() {
        let g = &grads.layers[li];
        let m = &mut state.m.layers[li];
        let v = &mut state.v.layers[li];
        let update = |p: &mut f64, g: f64, m: &mut f64, v: &mut f64| {
            *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
            *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.adam_eps);
        };
        for i in 0..layer.weights.len() {
            update(
                &mut layer.weights[i],
                g.weights[i],
                &mut m.weights[i],
                &mut v.weights[i],
            );
        }
        for i in 0..layer.bias.len() {
            update(&mut layer.bias[i], g.bias[i], &mut m.bias[i], &mut v.bias[i]);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testing::{assert_close, seeded_rng};
    use rand::Rng;

    fn tiny_config(seed: u64) -> NetConfig {
        NetConfig {
            input_dim: 2,
            hidden_dims: vec![2],
            latent_dim: 2,
            activation: Activation::Tanh,
            seed,
        }
    }

    #[test]
    fn zero_net_outputs_half() {
        let cfg = tiny_config(0);
        let mut params = init_params(&cfg).unwrap();
        for l in &mut params.layers {
            l.weights.iter_mut().for_each(|w| *w = 0.0);
            l.bias.iter_mut().for_each(|b| *b = 0.0);
        }
        let trace = forward(&params, &[3.0, -4.0]).unwrap();
        assert_eq!(trace.latent(), &[0.0, 0.0]);
        assert_close(trace.y, 0.5, 1e-15, "sigmoid(0)");
    }

    #[test]
    fn hand_computed_trace_2x2x1() {
        // One tanh hidden layer, one-dimensional latent, hand-set weights.
        let config = NetConfig {
            input_dim: 2,
            hidden_dims: vec![2],
            latent_dim: 1,
            activation: Activation::Tanh,
            seed: 0,
        };
        let params = NetParams {
            config,
            layers: vec![
                DenseLayer {
                    in_dim: 2,
                    out_dim: 2,
                    weights: vec![1.0, 0.0, 0.0, 1.0],
                    bias: vec![0.1, -0.2],
                },
                DenseLayer {
                    in_dim: 2,
                    out_dim: 1,
                    weights: vec![0.5, 0.5],
                    bias: vec![0.0],
                },
                DenseLayer {
                    in_dim: 1,
                    out_dim: 1,
                    weights: vec![2.0],
                    bias: vec![0.1],
                },
            ],
        };
        let trace = forward(&params, &[1.0, 0.5]).unwrap();
        let h0 = (1.0_f64 + 0.1).tanh();
        let h1 = (0.5_f64 - 0.2).tanh();
        assert_close(trace.activations[0][0], h0, 1e-15, "hidden 0");
        assert_close(trace.activations[0][1], h1, 1e-15, "hidden 1");
        let z = 0.5 * (h0 + h1);
        assert_close(trace.latent()[0], z, 1e-15, "latent");
        let y = 1.0 / (1.0 + (-(2.0 * z + 0.1)).exp());
        assert_close(trace.y, y, 1e-15, "head");
    }

    #[test]
    fn forward_deterministic() {
        let params = init_params(&tiny_config(9)).unwrap();
        let x = [0.3, -1.2];
        let a = forward(&params, &x).unwrap();
        let b = forward(&params, &x).unwrap();
        assert_eq!(a.y.to_bits(), b.y.to_bits());
        assert_eq!(a.latent(), b.latent());
    }

    #[test]
    fn forward_rejects_wrong_dim() {
        let params = init_params(&tiny_config(1)).unwrap();
        assert!(matches!(
            forward(&params, &[1.0]),
            Err(CoreError::Dimension(_))
        ));
    }

    #[test]
    fn output_stays_strictly_inside_unit_interval() {
        let params = init_params(&tiny_config(3)).unwrap();
        for x in [[1e12, -1e12], [-1e9, 1e9], [0.0, 0.0]] {
            let trace = forward(&params, &x).unwrap();
            assert!(trace.y > 0.0 && trace.y < 1.0, "y = {}", trace.y);
        }
    }

    #[test]
    fn bce_known_values() {
        assert_close(bce_loss(0.5, 1.0), 2.0_f64.ln(), 1e-12, "(0.5, 1)");
        assert_close(bce_loss(0.5, 0.0), 2.0_f64.ln(), 1e-12, "(0.5, 0)");
        assert_close(bce_loss(0.9, 1.0), -(0.9_f64.ln()), 1e-12, "(0.9, 1)");
        // Degenerate probabilities are clamped, not infinite.
        assert!(bce_loss(0.0, 1.0).is_finite());
        assert!(bce_loss(1.0, 0.0).is_finite());
    }

    fn random_batch(
        rng: &mut rand_chacha::ChaCha8Rng,
        n: usize,
        dim: usize,
        with_positives: bool,
    ) -> Vec<Sample> {
        (0..n)
            .map(|i| Sample {
                features: (0..dim).map(|_| rng.random_range(-1.5..1.5)).collect(),
                label: if with_positives { (i % 2) as u8 } else { 0 },
            })
            .collect()
    }

    #[test]
    fn no_positives_means_pure_bce() {
        let params = init_params(&tiny_config(17)).unwrap();
        let mut rng = seeded_rng(18);
        let batch = random_batch(&mut rng, 6, 2, false);
        let weights = LossWeights::default();
        let (loss, _) =
            combined_loss_and_grads(&params, &batch, &weights, &FnlConfig::default()).unwrap();
        assert_eq!(loss.fnl, 0.0);
        let manual: f64 = batch
            .iter()
            .map(|s| bce_loss(forward(&params, &s.features).unwrap().y, s.label as f64))
            .sum::<f64>()
            / batch.len() as f64;
        assert_eq!(loss.total.to_bits(), (weights.w_bce * manual).to_bits());
        assert_eq!(loss.bce.to_bits(), manual.to_bits());
    }

    #[test]
    fn zero_fnl_weight_is_bit_identical_to_pure_bce() {
        let params = init_params(&tiny_config(21)).unwrap();
        let mut rng = seeded_rng(22);
        let batch = random_batch(&mut rng, 8, 2, true);
        let weights = LossWeights {
            w_bce: 0.9,
            w_fnl: 0.0,
        };
        let (loss, _) =
            combined_loss_and_grads(&params, &batch, &weights, &FnlConfig::default()).unwrap();
        assert_eq!(loss.fnl, 0.0);
        let manual: f64 = batch
            .iter()
            .map(|s| bce_loss(forward(&params, &s.features).unwrap().y, s.label as f64))
            .sum::<f64>()
            / batch.len() as f64;
        assert_eq!(loss.total.to_bits(), (0.9 * manual).to_bits());
    }

    #[test]
    fn adam_zero_gradient_leaves_params() {
        let mut params = init_params(&tiny_config(5)).unwrap();
        let before = params.clone();
        let grads = ParamBuffers::zeros_like(&params);
        let mut state = AdamState::new(&params);
        // Pre-load a moment so the decay is observable.
        state.m.layers[0].weights[0] = 0.5;
        adam_step(&mut params, &grads, &mut state, &OptimConfig::default(), 1).unwrap();
        assert_close(
            state.m.layers[0].weights[0],
            0.45,
            1e-15,
            "first moment decayed by beta1",
        );
        // Slots with zero moments and zero gradient stay put exactly.
        for li in 0..params.layers.len() {
            for wi in 0..params.layers[li].weights.len() {
                if li == 0 && wi == 0 {
                    continue;
                }
                assert_eq!(
                    params.layers[li].weights[wi].to_bits(),
                    before.layers[li].weights[wi].to_bits()
                );
            }
        }
    }

    #[test]
    fn adam_single_scalar_hand_step() {
        // g = 1 at t = 1: bias-corrected m̂ = v̂ = 1, update = −lr/(1 + eps).
        let config = NetConfig {
            input_dim: 1,
            hidden_dims: vec![1],
            latent_dim: 1,
            activation: Activation::Relu,
            seed: 0,
        };
        let mut params = init_params(&config).unwrap();
        let p0 = params.layers[0].weights[0];
        let mut grads = ParamBuffers::zeros_like(&params);
        grads.layers[0].weights[0] = 1.0;
        let mut state = AdamState::new(&params);
        let cfg = OptimConfig::default();
        adam_step(&mut params, &grads, &mut state, &cfg, 1).unwrap();
        let expected = p0 - cfg.learning_rate / (1.0 + cfg.adam_eps);
        assert_close(params.layers[0].weights[0], expected, 1e-18, "one Adam step");
    }

    #[test]
    fn adam_two_steps_match_hand_recurrence() {
        let config = NetConfig {
            input_dim: 1,
            hidden_dims: vec![1],
            latent_dim: 1,
            activation: Activation::Relu,
            seed: 1,
        };
        let mut params = init_params(&config).unwrap();
        let p0 = params.layers[0].weights[0];
        let mut grads = ParamBuffers::zeros_like(&params);
        grads.layers[0].weights[0] = 1.0;
        let mut state = AdamState::new(&params);
        let cfg = OptimConfig::default();
        adam_step(&mut params, &grads, &mut state, &cfg, 1).unwrap();
        adam_step(&mut params, &grads, &mut state, &cfg, 2).unwrap();

        // Hand recurrence for constant gradient 1.
        let (mut m, mut v, mut p) = (0.0, 0.0, p0);
        for t in 1..=2 {
            m = cfg.beta1 * m + (1.0 - cfg.beta1);
            v = cfg.beta2 * v + (1.0 - cfg.beta2);
            let m_hat = m / (1.0 - cfg.beta1.powi(t));
            let v_hat: f64 = v / (1.0 - cfg.beta2.powi(t));
            p -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.adam_eps);
        }
        assert_close(params.layers[0].weights[0], p, 1e-16, "two-step recurrence");
    }

    #[test]
    fn adam_rejects_mismatched_shapes() {
        let mut params = init_params(&tiny_config(2)).unwrap();
        let other = init_params(&NetConfig {
            hidden_dims: vec![3],
            ..tiny_config(2)
        })
        .unwrap();
        let grads = ParamBuffers::zeros_like(&other);
        let mut state = AdamState::new(&params);
        assert!(adam_step(&mut params, &grads, &mut state, &OptimConfig::default(), 1).is_err());
    }

    #[test]
    fn fnl_descends_on_all_positive_batch() {
        let config = NetConfig {
            input_dim: 3,
            hidden_dims: vec![8],
            latent_dim: 4,
            activation: Activation::Tanh,
            seed: 77,
        };
        let mut params = init_params(&config).unwrap();
        let mut rng = seeded_rng(78);
        let batch: Vec<Sample> = (0..12)
            .map(|_| Sample {
                features: (0..3).map(|_| rng.random_range(-1.0..1.0)).collect(),
                label: 1,
            })
            .collect();
        let weights = LossWeights {
            w_bce: 0.0,
            w_fnl: 1.0,
        };
        let fnl_cfg = FnlConfig::default();
        let (before, grads) =
            combined_loss_and_grads(&params, &batch, &weights, &fnl_cfg).unwrap();
        let mut state = AdamState::new(&params);
        let cfg = OptimConfig {
            learning_rate: 1e-6,
            ..OptimConfig::default()
        };
        adam_step(&mut params, &grads, &mut state, &cfg, 1).unwrap();
        let (after, _) = combined_loss_and_grads(&params, &batch, &weights, &fnl_cfg).unwrap();
        assert!(
            after.fnl < before.fnl,
            "FNL did not decrease: {} -> {}",
            before.fnl,
            after.fnl
        );
    }
}
