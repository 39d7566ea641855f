//! Transformer building blocks: linear layers, embedding tables, multi-head
//! self-attention, pre-layer-norm encoder blocks, and inverted dropout.

use crate::error::{Error, Result};
use crate::params::ModelParameters;
use crate::rng::{Rng, RngRegistry};
use crate::tensor::{Tape, Tensor};

/// Attention logits at masked positions get this added before softmax.
pub const MASK_LOGIT: f64 = -1e9;

/// Standard deviation for weight init, zeros for biases.
pub const INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

fn init_normal(n: usize, std: f64, rng: &mut Rng) -> Vec<f64> {
    (0..n).map(|_| std * rng.normal()).collect()
}

/// Dense layer `y = x·W + b` with `W: [in×out]`, `b: [out]`.
/// Clones share the underlying weight storage.
#[derive(Clone)]
pub struct LinearLayer {
    pub weight: Tensor,
    pub bias: Option<Tensor>,
}

impl LinearLayer {
    pub fn new(
        params: &mut ModelParameters,
        name: &str,
        in_d: usize,
        out_d: usize,
        rng: &mut Rng,
    ) -> LinearLayer {
        let weight = params.register(
            &format!("{name}.weight"),
            Tensor::param(init_normal(in_d * out_d, INIT_STD, rng), &[in_d, out_d]).unwrap(),
        );
        let bias = params.register(
            &format!("{name}.bias"),
            Tensor::param(vec![0.0; out_d], &[out_d]).unwrap(),
        );
        LinearLayer {
            weight,
            bias: Some(bias),
        }
    }

    /// A projection without a bias term. Used for the attention key
    /// projection, whose bias is cancelled exactly by softmax shift
    /// invariance and would otherwise be a dead parameter.
    pub fn new_unbiased(
        params: &mut ModelParameters,
        name: &str,
        in_d: usize,
        out_d: usize,
        rng: &mut Rng,
    ) -> LinearLayer {
        let weight = params.register(
            &format!("{name}.weight"),
            Tensor::param(init_normal(in_d * out_d, INIT_STD, rng), &[in_d, out_d]).unwrap(),
        );
        LinearLayer { weight, bias: None }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn out_dim(&self) -> usize {
        self.weight.shape()[1]
    }

    /// `x: [n×in] -> [n×out]`.
    pub fn forward(&self, tape: &Tape, x: &Tensor) -> Result<Tensor> {
        let y = tape.matmul(x, &self.weight)?;
        match &self.bias {
            Some(b) => tape.add_row_vector(&y, b),
            None => Ok(y),
        }
    }

    /// Vector in, vector out: `x: [in] -> [out]`.
    pub fn forward_vec(&self, tape: &Tape, x: &Tensor) -> Result<Tensor> {
        let row = tape.reshape(x, &[1, self.in_dim()])?;
        let y = self.forward(tape, &row)?;
        tape.reshape(&y, &[self.out_dim()])
    }
}

/// Lookup table of learned row vectors.
pub struct EmbeddingTable {
    pub table: Tensor,
}

impl EmbeddingTable {
    pub fn new(
        params: &mut ModelParameters,
        name: &str,
        rows: usize,
        d: usize,
        rng: &mut Rng,
    ) -> EmbeddingTable {
        let table = params.register(
            name,
            Tensor::param(init_normal(rows * d, INIT_STD, rng), &[rows, d]).unwrap(),
        );
        EmbeddingTable { table }
    }

    pub fn rows(&self) -> usize {
        self.table.shape()[0]
    }

    pub fn dim(&self) -> usize {
        self.table.shape()[1]
    }

    /// Gather the rows at `indices`; gradients scatter back additively.
    pub fn lookup(&self, tape: &Tape, indices: &[usize]) -> Result<Tensor> {
        tape.gather_rows(&self.table, indices)
    }
}

/// Width/head-count contract for one attention stack.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AttentionConfig {
    pub hidden_d: usize,
    pub heads: usize,
}

impl AttentionConfig {
    pub fn new(hidden_d: usize, heads: usize) -> Result<Self> {
        if hidden_d == 0 || heads == 0 || !hidden_d.is_multiple_of(heads) {
            return Err(Error::Config(format!(
                "hidden_d {hidden_d} must be a positive multiple of heads {heads}"
            )));
        }
        Ok(AttentionConfig { hidden_d, heads })
    }

    pub fn head_d(&self) -> usize {
        self.hidden_d / self.heads
    }
}

/// Dropout behavior: probability of zeroing an element, the mode, and the
/// named random stream the mask is drawn from. In eval mode the layer is
/// the identity.
#[derive(Debug, Clone)]
pub struct DropoutSpec {
    pub rate: f64,
    pub mode: Mode,
    pub rng_stream: String,
}

impl DropoutSpec {
    pub fn new(rate: f64, mode: Mode, rng_stream: &str) -> Result<Self> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Contract(format!(
                "dropout rate must be in [0, 1), got {rate}"
            )));
        }
        Ok(DropoutSpec {
            rate,
            mode,
            rng_stream: rng_stream.to_string(),
        })
    }
}

/// Draw an inverted-dropout mask: each element is `0` with probability
/// `rate`, else `1/(1-rate)`.
pub fn draw_dropout_mask(n: usize, rate: f64, rng: &mut Rng) -> Vec<f64> {
    let keep_scale = 1.0 / (1.0 - rate);
    (0..n)
        .map(|_| if rng.next_f64() < rate { 0.0 } else { keep_scale })
        .collect()
}

/// Inverted dropout. Train mode zeroes each element independently with
/// probability `spec.rate` and scales survivors by `1/(1-rate)`; eval mode
/// and rate 0 pass the input through untouched (and draw nothing from the
/// stream).
pub fn dropout(tape: &Tape, x: &Tensor, spec: &DropoutSpec, rng: &mut RngRegistry) -> Result<Tensor> {
    if !(0.0..1.0).contains(&spec.rate) {
        return Err(Error::Contract(format!(
            "dropout rate must be in [0, 1), got {}",
            spec.rate
        )));
    }
    if spec.mode == Mode::Eval || spec.rate == 0.0 {
        return Ok(x.clone());
    }
    let mask = draw_dropout_mask(x.numel(), spec.rate, rng.stream(&spec.rng_stream));
    apply_dropout_mask(tape, x, &mask)
}

/// Multiply `x` by an explicit mask (test hook for forcing identical masks
/// across samples).
pub fn apply_dropout_mask(tape: &Tape, x: &Tensor, mask: &[f64]) -> Result<Tensor> {
    let m = Tensor::from_vec(mask.to_vec(), &x.shape())?;
    tape.mul(x, &m)
}

/// Projection weights for one multi-head attention sublayer.
pub struct AttentionParams {
    pub query: LinearLayer,
    pub key: LinearLayer,
    pub value: LinearLayer,
    pub output: LinearLayer,
}

impl AttentionParams {
    pub fn new(
        params: &mut ModelParameters,
        name: &str,
        cfg: AttentionConfig,
        rng: &mut Rng,
    ) -> AttentionParams {
        let d = cfg.hidden_d;
        AttentionParams {
            query: LinearLayer::new(params, &format!("{name}.q"), d, d, rng),
            key: LinearLayer::new_unbiased(params, &format!("{name}.k"), d, d, rng),
            value: LinearLayer::new(params, &format!("{name}.v"), d, d, rng),
            output: LinearLayer::new(params, &format!("{name}.o"), d, d, rng),
        }
    }
}

fn mask_row(mask: &[bool]) -> Tensor {
    let add: Vec<f64> = mask.iter().map(|&m| if m { 0.0 } else { MASK_LOGIT }).collect();
    Tensor::from_vec(add, &[mask.len()]).unwrap()
}

/// Scaled dot-product self-attention over `x: [seq×d]`, returning the
/// projected context and the per-head attention weight matrices.
pub fn multi_head_attention_with_weights(
    tape: &Tape,
    x: &Tensor,
    mask: &[bool],
    cfg: AttentionConfig,
    p: &AttentionParams,
) -> Result<(Tensor, Vec<Tensor>)> {
    let xs = x.shape();
    if xs.len() != 2 || xs[1] != cfg.hidden_d {
        return Err(Error::Dimension(format!(
            "attention expects [seq×{}], got {xs:?}",
            cfg.hidden_d
        )));
    }
    let seq = xs[0];
    if mask.len() != seq {
        return Err(Error::Dimension(format!(
            "mask length {} does not match sequence length {seq}",
            mask.len()
        )));
    }
    if !mask.iter().any(|&m| m) {
        return Err(Error::Contract(
            "attention over a fully masked sequence".into(),
        ));
    }
    let q = p.query.forward(tape, x)?;
    let k = p.key.forward(tape, x)?;
    let v = p.value.forward(tape, x)?;
    let hd = cfg.head_d();
    let scale = 1.0 / (hd as f64).sqrt();
    let mask_add = mask_row(mask);
    let mut contexts = Vec::with_capacity(cfg.heads);
    let mut weights = Vec::with_capacity(cfg.heads);
    for h in 0..cfg.heads {
        let qh = tape.slice_cols(&q, h * hd, hd)?;
        let kh = tape.slice_cols(&k, h * hd, hd)?;
        let vh = tape.slice_cols(&v, h * hd, hd)?;
        let scores = tape.scale(&tape.matmul(&qh, &tape.transpose(&kh)?)?, scale);
        let masked = tape.add_row_vector(&scores, &mask_add)?;
        let attn = tape.softmax(&masked, 1)?;
        contexts.push(tape.matmul(&attn, &vh)?);
        weights.push(attn);
    }
    let merged = tape.concat(&contexts, 1)?;
    Ok((p.output.forward(tape, &merged)?, weights))
}

/// As [`multi_head_attention_with_weights`] but discarding the weights.
pub fn multi_head_attention(
    tape: &Tape,
    x: &Tensor,
    mask: &[bool],
    cfg: AttentionConfig,
    p: &AttentionParams,
) -> Result<Tensor> {
    multi_head_attention_with_weights(tape, x, mask, cfg, p).map(|(out, _)| out)
}

/// Attention + feed-forward widths of one encoder block.
#[derive(Debug, Clone, Copy)]
pub struct BlockConfig {
    pub attn: AttentionConfig,
    pub mlp_d: usize,
}

/// Weights of one pre-layer-norm encoder block.
pub struct BlockParameters {
    pub ln1_gain: Tensor,
    pub ln1_bias: Tensor,
    pub attn: AttentionParams,
    pub ln2_gain: Tensor,
    pub ln2_bias: Tensor,
    pub ffn1: LinearLayer,
    pub ffn2: LinearLayer,
}

impl BlockParameters {
    pub fn new(
        params: &mut ModelParameters,
        name: &str,
        cfg: BlockConfig,
        rng: &mut Rng,
    ) -> BlockParameters {
        let d = cfg.attn.hidden_d;
        let ln = |params: &mut ModelParameters, n: String, v: f64| {
            params.register(&n, Tensor::param(vec![v; d], &[d]).unwrap())
        };
        BlockParameters {
            ln1_gain: ln(params, format!("{name}.ln1.gain"), 1.0),
            ln1_bias: ln(params, format!("{name}.ln1.bias"), 0.0),
            attn: AttentionParams::new(params, &format!("{name}.attn"), cfg.attn, rng),
            ln2_gain: ln(params, format!("{name}.ln2.gain"), 1.0),
            ln2_bias: ln(params, format!("{name}.ln2.bias"), 0.0),
            ffn1: LinearLayer::new(params, &format!("{name}.ffn1"), d, cfg.mlp_d, rng),
            ffn2: LinearLayer::new(params, &format!("{name}.ffn2"), cfg.mlp_d, d, rng),
        }
    }
}

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Pre-layer-norm residual block:
/// `x + MHA(LN(x))`, then `+ FFN(LN(·))` with a gelu feed-forward.
/// `drop` regularizes the two sublayer outputs before the residual adds;
/// rate 0 or eval mode makes it a no-op that draws nothing.
pub fn transformer_block(
    tape: &Tape,
    x: &Tensor,
    mask: &[bool],
    cfg: &BlockConfig,
    p: &BlockParameters,
    drop: &DropoutSpec,
    rng: &mut RngRegistry,
) -> Result<Tensor> {
    let normed = tape.layer_norm(x, &p.ln1_gain, &p.ln1_bias, LAYER_NORM_EPS)?;
    let attn_out = multi_head_attention(tape, &normed, mask, cfg.attn, &p.attn)?;
    let attn_out = dropout(tape, &attn_out, drop, rng)?;
    let h = tape.add(x, &attn_out)?;
    let normed2 = tape.layer_norm(&h, &p.ln2_gain, &p.ln2_bias, LAYER_NORM_EPS)?;
    let mid = tape.gelu(&p.ffn1.forward(tape, &normed2)?);
    let ffn_out = p.ffn2.forward(tape, &mid)?;
    let ffn_out = dropout(tape, &ffn_out, drop, rng)?;
    tape.add(&h, &ffn_out)
}
