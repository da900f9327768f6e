//! The forecasting network: learned input projection plus sinusoidal
//! positional encoding, a stack of encoder layers (multi-head self-attention
//! and a GELU feed-forward sublayer, each with residual connection and
//! optional layer normalization), mean-pooled into a small MLP head whose
//! tanh output is the normalized next-cell grid id.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nn::{NnError, NodeId, Tape, Tensor};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("input window must be {expected_rows}x{expected_cols}, got {rows}x{cols}")]
    BadInputShape {
        expected_rows: usize,
        expected_cols: usize,
        rows: usize,
        cols: usize,
    },
    #[error(transparent)]
    Nn(#[from] NnError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Input window length in 6-hour steps.
    pub seq_len: usize,
    /// Features per step.
    pub in_features: usize,
    /// Embedding width.
    pub d_model: usize,
    /// Attention heads; must divide `d_model`.
    pub n_heads: usize,
    /// Encoder layers.
    pub n_layers: usize,
    /// Feed-forward hidden width.
    pub ffn_hidden: usize,
    /// Hidden units in the MLP head.
    pub head_hidden: usize,
    pub use_layer_norm: bool,
    /// Seed for parameter initialization.
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            seq_len: 12,
            in_features: 5,
            d_model: 32,
            n_heads: 4,
            n_layers: 3,
            ffn_hidden: 64,
            head_hidden: 12,
            use_layer_norm: true,
            seed: 42,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.d_model == 0 || self.n_heads == 0 {
            return Err(ModelError::InvalidConfig(
                "d_model and n_heads must be positive".into(),
            ));
        }
        if self.d_model % self.n_heads != 0 {
            return Err(ModelError::InvalidConfig(format!(
                "n_heads {} does not divide d_model {}",
                self.n_heads, self.d_model
            )));
        }
        if self.seq_len == 0 || self.in_features == 0 || self.n_layers == 0 {
            return Err(ModelError::InvalidConfig(
                "seq_len, in_features and n_layers must be positive".into(),
            ));
        }
        if self.ffn_hidden == 0 || self.head_hidden == 0 {
            return Err(ModelError::InvalidConfig(
                "ffn_hidden and head_hidden must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    /// Total number of stored parameter values, including the frozen
    /// positional table and (whether or not they are active) the norm
    /// gains/biases. Asserted against the actual tensors in tests.
    pub fn param_count(&self) -> usize {
        let (d, f) = (self.d_model, self.ffn_hidden);
        let embed = self.in_features * d + d + self.seq_len * d;
        let per_layer = 4 * d * d + d * f + f + f * d + d + 4 * d;
        let head = d * self.head_hidden + self.head_hidden + self.head_hidden + 1;
        embed + self.n_layers * per_layer + head
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub w_q: Tensor,
    pub w_k: Tensor,
    pub w_v: Tensor,
    pub w_o: Tensor,
    pub ffn_w1: Tensor,
    pub ffn_b1: Tensor,
    pub ffn_w2: Tensor,
    pub ffn_b2: Tensor,
    pub norm1_gain: Tensor,
    pub norm1_bias: Tensor,
    pub norm2_gain: Tensor,
    pub norm2_bias: Tensor,
}

/// All model weights as named tensors. Shapes are derivable from
/// [`ModelConfig`] alone; `named_tensors` yields a stable order used by the
/// optimizer and the checkpoint format.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub input_proj: Tensor,
    pub input_bias: Tensor,
    /// Sinusoidal position table; saved with the rest but not trained.
    pub positional: Tensor,
    pub layers: Vec<LayerParams>,
    pub head_w1: Tensor,
    pub head_b1: Tensor,
    pub head_w2: Tensor,
    pub head_b2: Tensor,
}

/// The one non-trainable entry in the named-tensor list.
pub const FROZEN_TENSOR: &str = "positional";

impl ModelParams {
    pub fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out: Vec<(String, &Tensor)> = vec![
            ("input_proj".into(), &self.input_proj),
            ("input_bias".into(), &self.input_bias),
            (FROZEN_TENSOR.into(), &self.positional),
        ];
        for (i, l) in self.layers.iter().enumerate() {
            out.push((format!("layer{i}.w_q"), &l.w_q));
            out.push((format!("layer{i}.w_k"), &l.w_k));
            out.push((format!("layer{i}.w_v"), &l.w_v));
            out.push((format!("layer{i}.w_o"), &l.w_o));
            out.push((format!("layer{i}.ffn_w1"), &l.ffn_w1));
            out.push((format!("layer{i}.ffn_b1"), &l.ffn_b1));
            out.push((format!("layer{i}.ffn_w2"), &l.ffn_w2));
            out.push((format!("layer{i}.ffn_b2"), &l.ffn_b2));
            out.push((format!("layer{i}.norm1_gain"), &l.norm1_gain));
            out.push((format!("layer{i}.norm1_bias"), &l.norm1_bias));
            out.push((format!("layer{i}.norm2_gain"), &l.norm2_gain));
            out.push((format!("layer{i}.norm2_bias"), &l.norm2_bias));
        }
        out.push(("head_w1".into(), &self.head_w1));
        out.push(("head_b1".into(), &self.head_b1));
        out.push(("head_w2".into(), &self.head_w2));
        out.push(("head_b2".into(), &self.head_b2));
        out
    }

    pub fn named_tensors_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out: Vec<(String, &mut Tensor)> = vec![
            ("input_proj".into(), &mut self.input_proj),
            ("input_bias".into(), &mut self.input_bias),
            (FROZEN_TENSOR.into(), &mut self.positional),
        ];
        for (i, l) in self.layers.iter_mut().enumerate() {
            out.push((format!("layer{i}.w_q"), &mut l.w_q));
            out.push((format!("layer{i}.w_k"), &mut l.w_k));
            out.push((format!("layer{i}.w_v"), &mut l.w_v));
            out.push((format!("layer{i}.w_o"), &mut l.w_o));
            out.push((format!("layer{i}.ffn_w1"), &mut l.ffn_w1));
            out.push((format!("layer{i}.ffn_b1"), &mut l.ffn_b1));
            out.push((format!("layer{i}.ffn_w2"), &mut l.ffn_w2));
            out.push((format!("layer{i}.ffn_b2"), &mut l.ffn_b2));
            out.push((format!("layer{i}.norm1_gain"), &mut l.norm1_gain));
            out.push((format!("layer{i}.norm1_bias"), &mut l.norm1_bias));
            out.push((format!("layer{i}.norm2_gain"), &mut l.norm2_gain));
            out.push((format!("layer{i}.norm2_bias"), &mut l.norm2_bias));
        }
        out.push(("head_w1".into(), &mut self.head_w1));
        out.push(("head_b1".into(), &mut self.head_b1));
        out.push(("head_w2".into(), &mut self.head_w2));
        out.push(("head_b2".into(), &mut self.head_b2));
        out
    }

    /// Names of tensors the optimizer updates, in `named_tensors` order.
    pub fn trainable_names(&self) -> Vec<String> {
        self.named_tensors()
            .into_iter()
            .map(|(n, _)| n)
            .filter(|n| n != FROZEN_TENSOR)
            .collect()
    }
}

fn uniform_init(rng: &mut ChaCha8Rng, rows: usize, cols: usize, fan_in: usize) -> Tensor {
    let bound = 1.0 / (fan_in as f64).sqrt();
    let data = (0..rows * cols)
        .map(|_| rng.random_range(-bound..bound))
        .collect();
    Tensor::from_vec(rows, cols, data).expect("finite by construction")
}

/// Fixed sinusoidal positional table, `seq_len x d_model`.
pub fn sinusoidal_positional(seq_len: usize, d_model: usize) -> Tensor {
    let mut t = Tensor::zeros(seq_len, d_model);
    for pos in 0..seq_len {
        for i in 0..d_model {
            let exponent = (2 * (i / 2)) as f64 / d_model as f64;
            let angle = pos as f64 / 10000f64.powf(exponent);
            t.set(pos, i, if i % 2 == 0 { angle.sin() } else { angle.cos() });
        }
    }
    t
}

/// Deterministically initialize all weights: uniform in
/// `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`, biases zero, norm gains one,
/// positional table sinusoidal.
pub fn init_params(config: &ModelConfig) -> Result<ModelParams, ModelError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let d = config.d_model;
    let f = config.ffn_hidden;

    let input_proj = uniform_init(&mut rng, config.in_features, d, config.in_features);
    let input_bias = Tensor::zeros(1, d);
    let positional = sinusoidal_positional(config.seq_len, d);

    let layers = (0..config.n_layers)
        .map(|_| LayerParams {
            w_q: uniform_init(&mut rng, d, d, d),
            w_k: uniform_init(&mut rng, d, d, d),
            w_v: uniform_init(&mut rng, d, d, d),
            w_o: uniform_init(&mut rng, d, d, d),
            ffn_w1: uniform_init(&mut rng, d, f, d),
            ffn_b1: Tensor::zeros(1, f),
            ffn_w2: uniform_init(&mut rng, f, d, f),
            ffn_b2: Tensor::zeros(1, d),
            norm1_gain: Tensor::from_vec(1, d, vec![1.0; d]).expect("ones"),
            norm1_bias: Tensor::zeros(1, d),
            norm2_gain: Tensor::from_vec(1, d, vec![1.0; d]).expect("ones"),
            norm2_bias: Tensor::zeros(1, d),
        })
        .collect();

    Ok(ModelParams {
        input_proj,
        input_bias,
        positional,
        layers,
        head_w1: uniform_init(&mut rng, d, config.head_hidden, d),
        head_b1: Tensor::zeros(1, config.head_hidden),
        head_w2: uniform_init(&mut rng, config.head_hidden, 1, config.head_hidden),
        head_b2: Tensor::zeros(1, 1),
    })
}

/// Parameter leaves mounted on a tape, in `named_tensors` order.
pub(crate) struct MountedParams {
    pub input_proj: NodeId,
    pub input_bias: NodeId,
    pub positional: NodeId,
    pub layers: Vec<MountedLayer>,
    pub head_w1: NodeId,
    pub head_b1: NodeId,
    pub head_w2: NodeId,
    pub head_b2: NodeId,
}

pub(crate) struct MountedLayer {
    pub w_q: NodeId,
    pub w_k: NodeId,
    pub w_v: NodeId,
    pub w_o: NodeId,
    pub ffn_w1: NodeId,
    pub ffn_b1: NodeId,
    pub ffn_w2: NodeId,
    pub ffn_b2: NodeId,
    pub norm1_gain: NodeId,
    pub norm1_bias: NodeId,
    pub norm2_gain: NodeId,
    pub norm2_bias: NodeId,
}

impl MountedParams {
    /// Trainable leaves in `trainable_names` order.
    pub fn trainable_ids(&self) -> Vec<NodeId> {
        let mut out = vec![self.input_proj, self.input_bias];
        for l in &self.layers {
            out.extend([
                l.w_q,
                l.w_k,
                l.w_v,
                l.w_o,
                l.ffn_w1,
                l.ffn_b1,
                l.ffn_w2,
                l.ffn_b2,
                l.norm1_gain,
                l.norm1_bias,
                l.norm2_gain,
                l.norm2_bias,
            ]);
        }
        out.extend([self.head_w1, self.head_b1, self.head_w2, self.head_b2]);
        out
    }
}

/// Mount every parameter tensor on the tape. The positional table is always
/// a constant; the rest are trainable when `trainable` is set.
pub(crate) fn mount(
    tape: &mut Tape,
    params: &ModelParams,
    trainable: bool,
) -> Result<MountedParams, NnError> {
    let input_proj = leaf_on(tape, &params.input_proj, trainable)?;
    let input_bias = leaf_on(tape, &params.input_bias, trainable)?;
    let positional = tape.constant(params.positional.clone())?;
    let mut layers = Vec::with_capacity(params.layers.len());
    for l in &params.layers {
        layers.push(MountedLayer {
            w_q: leaf_on(tape, &l.w_q, trainable)?,
            w_k: leaf_on(tape, &l.w_k, trainable)?,
            w_v: leaf_on(tape, &l.w_v, trainable)?,
            w_o: leaf_on(tape, &l.w_o, trainable)?,
            ffn_w1: leaf_on(tape, &l.ffn_w1, trainable)?,
            ffn_b1: leaf_on(tape, &l.ffn_b1, trainable)?,
            ffn_w2: leaf_on(tape, &l.ffn_w2, trainable)?,
            ffn_b2: leaf_on(tape, &l.ffn_b2, trainable)?,
            norm1_gain: leaf_on(tape, &l.norm1_gain, trainable)?,
            norm1_bias: leaf_on(tape, &l.norm1_bias, trainable)?,
            norm2_gain: leaf_on(tape, &l.norm2_gain, trainable)?,
            norm2_bias: leaf_on(tape, &l.norm2_bias, trainable)?,
        });
    }
    let head_w1 = leaf_on(tape, &params.head_w1, trainable)?;
    let head_b1 = leaf_on(tape, &params.head_b1, trainable)?;
    let head_w2 = leaf_on(tape, &params.head_w2, trainable)?;
    let head_b2 = leaf_on(tape, &params.head_b2, trainable)?;
    Ok(MountedParams {
        input_proj,
        input_bias,
        positional,
        layers,
        head_w1,
        head_b1,
        head_w2,
        head_b2,
    })
}

fn leaf_on(tape: &mut Tape, t: &Tensor, trainable: bool) -> Result<NodeId, NnError> {
    if trainable {
        tape.param(t.clone())
    } else {
        tape.constant(t.clone())
    }
}

/// One encoder layer: self-attention sublayer then feed-forward sublayer,
/// each with a residual connection and optional post-norm. Returns the new
/// hidden state and the per-head attention matrices.
fn encoder_layer(
    tape: &mut Tape,
    config: &ModelConfig,
    layer: &MountedLayer,
    h: NodeId,
) -> Result<(NodeId, Vec<NodeId>), NnError> {
    let dh = config.head_dim();
    let q = tape.matmul(h, layer.w_q)?;
    let k = tape.matmul(h, layer.w_k)?;
    let v = tape.matmul(h, layer.w_v)?;

    let mut head_outputs = Vec::with_capacity(config.n_heads);
    let mut attention = Vec::with_capacity(config.n_heads);
    for head in 0..config.n_heads {
        let start = head * dh;
        let qh = tape.slice_cols(q, start, dh)?;
        let kh = tape.slice_cols(k, start, dh)?;
        let vh = tape.slice_cols(v, start, dh)?;
        let kt = tape.transpose(kh)?;
        let scores = tape.matmul(qh, kt)?;
        let scaled = tape.scale(scores, 1.0 / (dh as f64).sqrt())?;
        let weights = tape.softmax_rows(scaled)?;
        attention.push(weights);
        head_outputs.push(tape.matmul(weights, vh)?);
    }
    let concat = tape.concat_cols(&head_outputs)?;
    let projected = tape.matmul(concat, layer.w_o)?;
    let mut h = tape.add(h, projected)?;
    if config.use_layer_norm {
        h = tape.layer_norm(h, layer.norm1_gain, layer.norm1_bias)?;
    }

    let f1 = tape.matmul(h, layer.ffn_w1)?;
    let f1 = tape.add_row(f1, layer.ffn_b1)?;
    let act = tape.gelu(f1)?;
    let f2 = tape.matmul(act, layer.ffn_w2)?;
    let f2 = tape.add_row(f2, layer.ffn_b2)?;
    let mut out = tape.add(h, f2)?;
    if config.use_layer_norm {
        out = tape.layer_norm(out, layer.norm2_gain, layer.norm2_bias)?;
    }
    Ok((out, attention))
}

/// Full forward graph for one window. Returns the scalar output node and
/// every attention-weight node (`n_layers * n_heads` of them).
pub(crate) fn forward_graph(
    tape: &mut Tape,
    config: &ModelConfig,
    mounted: &MountedParams,
    window: NodeId,
) -> Result<(NodeId, Vec<NodeId>), NnError> {
    let projected = tape.matmul(window, mounted.input_proj)?;
    let embedded = tape.add_row(projected, mounted.input_bias)?;
    let mut h = tape.add(embedded, mounted.positional)?;

    let mut attention = Vec::new();
    for layer in &mounted.layers {
        let (next, attn) = encoder_layer(tape, config, layer, h)?;
        attention.extend(attn);
        h = next;
    }

    let pooled = tape.mean_rows(h)?;
    let hidden = tape.matmul(pooled, mounted.head_w1)?;
    let hidden = tape.add_row(hidden, mounted.head_b1)?;
    let hidden = tape.relu(hidden)?;
    let out = tape.matmul(hidden, mounted.head_w2)?;
    let out = tape.add_row(out, mounted.head_b2)?;
    let out = tape.tanh(out)?;
    Ok((out, attention))
}

fn check_window(config: &ModelConfig, window: &Tensor) -> Result<(), ModelError> {
    if window.shape() != (config.seq_len, config.in_features) {
        return Err(ModelError::BadInputShape {
            expected_rows: config.seq_len,
            expected_cols: config.in_features,
            rows: window.rows(),
            cols: window.cols(),
        });
    }
    Ok(())
}

/// Scalar prediction in `[-1, 1]` for one normalized window.
pub fn forward(
    params: &ModelParams,
    config: &ModelConfig,
    window: &Tensor,
) -> Result<f64, ModelError> {
    check_window(config, window)?;
    let mut tape = Tape::new();
    let mounted = mount(&mut tape, params, false)?;
    let x = tape.constant(window.clone())?;
    let (out, _) = forward_graph(&mut tape, config, &mounted, x)?;
    Ok(tape.value(out).get(0, 0))
}

/// Forward pass that also returns the attention matrices, row-stochastic
/// `seq_len x seq_len` tensors in layer-major, head-minor order.
pub fn forward_traced(
    params: &ModelParams,
    config: &ModelConfig,
    window: &Tensor,
) -> Result<(f64, Vec<Tensor>), ModelError> {
    check_window(config, window)?;
    let mut tape = Tape::new();
    let mounted = mount(&mut tape, params, false)?;
    let x = tape.constant(window.clone())?;
    let (out, attn) = forward_graph(&mut tape, config, &mounted, x)?;
    let mats = attn.iter().map(|&id| tape.value(id).clone()).collect();
    Ok((tape.value(out).get(0, 0), mats))
}

/// Mean squared error of a batch against scalar targets. Reference path for
/// finite-difference checks; the trainer has its own chunked equivalent.
pub fn loss_for_params(
    params: &ModelParams,
    config: &ModelConfig,
    windows: &[Tensor],
    targets: &[f64],
) -> Result<f64, ModelError> {
    let (loss, _) = batch_loss_graph(params, config, windows, targets, false)?;
    Ok(loss)
}

/// Batch mean squared error and its gradient for every trainable tensor, in
/// `trainable_names` order.
pub fn forward_loss_gradients(
    params: &ModelParams,
    config: &ModelConfig,
    windows: &[Tensor],
    targets: &[f64],
) -> Result<(f64, Vec<Tensor>), ModelError> {
    let (loss, grads) = batch_loss_graph(params, config, windows, targets, true)?;
    Ok((loss, grads.expect("gradients requested")))
}

fn batch_loss_graph(
    params: &ModelParams,
    config: &ModelConfig,
    windows: &[Tensor],
    targets: &[f64],
    with_grads: bool,
) -> Result<(f64, Option<Vec<Tensor>>), ModelError> {
    assert_eq!(windows.len(), targets.len(), "window/target count mismatch");
    let mut tape = Tape::new();
    let mounted = mount(&mut tape, params, with_grads)?;
    let mut losses = Vec::with_capacity(windows.len());
    for (w, &t) in windows.iter().zip(targets) {
        check_window(config, w)?;
        let x = tape.constant(w.clone())?;
        let (y, _) = forward_graph(&mut tape, config, &mounted, x)?;
        let target = tape.constant(Tensor::scalar(t)?)?;
        losses.push(tape.mse(y, target)?);
    }
    let total = tape.add_n(&losses)?;
    let loss = tape.scale(total, 1.0 / windows.len() as f64)?;
    let loss_value = tape.value(loss).item()?;
    if !with_grads {
        return Ok((loss_value, None));
    }
    let mut grads = tape.backward(loss)?;
    let out: Vec<Tensor> = mounted
        .trainable_ids()
        .into_iter()
        .map(|id| {
            grads.take(id).unwrap_or_else(|| {
                let t = tape.value(id);
                Tensor::zeros(t.rows(), t.cols())
            })
        })
        .collect();
    Ok((loss_value, Some(out)))
}

/// Independent forwards for a batch of windows; row `k` equals
/// `forward(windows[k])`.
pub fn forward_batch(
    params: &ModelParams,
    config: &ModelConfig,
    windows: &[Tensor],
) -> Result<Vec<f64>, ModelError> {
    if windows.is_empty() {
        return Ok(Vec::new());
    }
    let mut tape = Tape::new();
    let mounted = mount(&mut tape, params, false)?;
    let mut out = Vec::with_capacity(windows.len());
    for w in windows {
        check_window(config, w)?;
        let x = tape.constant(w.clone())?;
        let (y, _) = forward_graph(&mut tape, config, &mounted, x)?;
        out.push(tape.value(y).get(0, 0));
    }
    Ok(out)
}
