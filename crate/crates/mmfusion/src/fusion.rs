//! Fusion of the two pooled branch vectors and the classification heads:
//! early fusion (concatenate pooler outputs, then the multi-sample dropout
//! head) and the late-fusion alternative (per-branch dense stacks before
//! concatenation).

use crate::error::{Error, Result};
use crate::layers::{dropout, DropoutSpec, LinearLayer, Mode};
use crate::params::ModelParameters;
use crate::rng::{Rng, RngRegistry};
use crate::tensor::{Tape, Tensor};

/// The integrated feature vector: both pooled outputs, concatenated.
#[derive(Debug, Clone)]
pub struct FusedFeature {
    pub vector: Tensor,
}

/// Concatenate the two pooled vectors, first branch first. Gradients split
/// back to the branches through the concat.
pub fn early_fuse(tape: &Tape, v_pool: &Tensor, va_pool: &Tensor) -> Result<FusedFeature> {
    for (name, t) in [("first", v_pool), ("second", va_pool)] {
        if t.data().iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!(
                "{name} pooled vector contains non-finite values"
            )));
        }
    }
    Ok(FusedFeature {
        vector: tape.concat(&[v_pool.clone(), va_pool.clone()], 0)?,
    })
}

/// Multi-sample dropout head: one base dropout, several sample rates, and
/// a single shared output layer.
pub struct MsdHead {
    pub base_dropout: DropoutSpec,
    pub sample_rates: Vec<f64>,
    pub output_layer: LinearLayer,
}

pub const DEFAULT_MSD_RATES: [f64; 3] = [0.1, 0.2, 0.3];

impl MsdHead {
    pub fn new(
        params: &mut ModelParameters,
        name: &str,
        fused_d: usize,
        k: usize,
        d0_rate: f64,
        sample_rates: Vec<f64>,
        rng: &mut Rng,
    ) -> Result<MsdHead> {
        let output_layer = LinearLayer::new(params, &format!("{name}.output_layer"), fused_d, k, rng);
        MsdHead::with_output_layer(output_layer, d0_rate, sample_rates)
    }

    /// Build around an existing output layer (the late-fusion path shares
    /// its output layer with the sampling head, so there is always exactly
    /// one).
    pub fn with_output_layer(
        output_layer: LinearLayer,
        d0_rate: f64,
        sample_rates: Vec<f64>,
    ) -> Result<MsdHead> {
        let base_dropout = DropoutSpec::new(d0_rate, Mode::Train, "dropout.d0")?;
        if sample_rates.is_empty() {
            return Err(Error::Contract("msd needs at least one sample rate".into()));
        }
        for &r in &sample_rates {
            if !(0.0..1.0).contains(&r) {
                return Err(Error::Contract(format!(
                    "msd sample rate must be in [0, 1), got {r}"
                )));
            }
        }
        Ok(MsdHead {
            base_dropout,
            sample_rates,
            output_layer,
        })
    }

    pub fn k(&self) -> usize {
        self.output_layer.out_dim()
    }
}

/// Train-mode output is one logit vector per sample rate; eval mode
/// collapses to a single plain forward because every dropout is the
/// identity there.
#[derive(Debug)]
pub enum MsdOutput {
    Train(Vec<Tensor>),
    Eval(Tensor),
}

impl MsdOutput {
    pub fn eval_logits(&self) -> Option<&Tensor> {
        match self {
            MsdOutput::Eval(t) => Some(t),
            MsdOutput::Train(_) => None,
        }
    }

    pub fn sample_logits(&self) -> Option<&[Tensor]> {
        match self {
            MsdOutput::Train(v) => Some(v),
            MsdOutput::Eval(_) => None,
        }
    }
}

/// Forward through the multi-sample dropout head.
///
/// Train: `x = D0(ifv)`, then for each rate an independent mask and the
/// shared output layer. Eval: all dropouts are identities, so the samples
/// coincide and one forward is returned.
pub fn msd_forward(
    tape: &Tape,
    ifv: &FusedFeature,
    head: &MsdHead,
    mode: Mode,
    rng: &mut RngRegistry,
) -> Result<MsdOutput> {
    if mode == Mode::Eval {
        return Ok(MsdOutput::Eval(
            head.output_layer.forward_vec(tape, &ifv.vector)?,
        ));
    }
    let d0 = DropoutSpec {
        mode: Mode::Train,
        ..head.base_dropout.clone()
    };
    let x = dropout(tape, &ifv.vector, &d0, rng)?;
    let mut samples = Vec::with_capacity(head.sample_rates.len());
    for (i, &rate) in head.sample_rates.iter().enumerate() {
        let spec = DropoutSpec::new(rate, Mode::Train, &format!("dropout.msd{i}"))?;
        let dropped = dropout(tape, &x, &spec, rng)?;
        samples.push(head.output_layer.forward_vec(tape, &dropped)?);
    }
    Ok(MsdOutput::Train(samples))
}

/// Mean of the per-sample cross-entropy losses against one target class.
pub fn msd_loss(tape: &Tape, sample_logits: &[Tensor], target: usize) -> Result<Tensor> {
    if sample_logits.is_empty() {
        return Err(Error::Contract("msd_loss needs at least one sample".into()));
    }
    let mut total: Option<Tensor> = None;
    for logits in sample_logits {
        let k = logits.numel();
        let row = tape.reshape(logits, &[1, k])?;
        let l = tape.cross_entropy(&row, &[target])?;
        total = Some(match total {
            Some(t) => tape.add(&t, &l)?,
            None => l,
        });
    }
    Ok(tape.scale(&total.unwrap(), 1.0 / sample_logits.len() as f64))
}

/// Per-branch dense refinement applied before late-fusion concatenation:
/// two width-preserving gelu layers.
pub struct BranchStack {
    pub dense1: LinearLayer,
    pub dense2: LinearLayer,
}

impl BranchStack {
    pub fn new(params: &mut ModelParameters, name: &str, d: usize, rng: &mut Rng) -> BranchStack {
        BranchStack {
            dense1: LinearLayer::new(params, &format!("{name}.dense1"), d, d, rng),
            dense2: LinearLayer::new(params, &format!("{name}.dense2"), d, d, rng),
        }
    }

    pub fn forward_vec(&self, tape: &Tape, x: &Tensor) -> Result<Tensor> {
        let h = tape.gelu(&self.dense1.forward_vec(tape, x)?);
        Ok(tape.gelu(&self.dense2.forward_vec(tape, &h)?))
    }
}

/// Late fusion: branch features pass through parameter-disjoint dense
/// stacks, are concatenated near the output, and scored by a single output
/// layer.
pub struct LateFusionHead {
    pub stacks: Vec<BranchStack>,
    pub output_layer: LinearLayer,
}

impl LateFusionHead {
    pub fn new(
        params: &mut ModelParameters,
        name: &str,
        branch_widths: &[usize],
        k: usize,
        rng: &mut Rng,
    ) -> Result<LateFusionHead> {
        if branch_widths.is_empty() {
            return Err(Error::Contract("late fusion needs at least one branch".into()));
        }
        let stacks = branch_widths
            .iter()
            .enumerate()
            .map(|(i, &d)| BranchStack::new(params, &format!("{name}.stack{i}"), d, rng))
            .collect();
        let fused: usize = branch_widths.iter().sum();
        Ok(LateFusionHead {
            stacks,
            output_layer: LinearLayer::new(params, &format!("{name}.output_layer"), fused, k, rng),
        })
    }

    /// The concatenated post-stack feature (before the output layer).
    pub fn feature(&self, tape: &Tape, pools: &[Tensor]) -> Result<Tensor> {
        if pools.len() != self.stacks.len() {
            return Err(Error::Contract(format!(
                "late fusion built for {} branches, got {} pooled vectors",
                self.stacks.len(),
                pools.len()
            )));
        }
        let mut refined = Vec::with_capacity(pools.len());
        for (stack, pool) in self.stacks.iter().zip(pools) {
            refined.push(stack.forward_vec(tape, pool)?);
        }
        tape.concat(&refined, 0)
    }
}

/// Late-fusion logits for the dual-branch case.
pub fn late_fuse_forward(
    tape: &Tape,
    v_pool: &Tensor,
    va_pool: &Tensor,
    head: &LateFusionHead,
) -> Result<Tensor> {
    let feature = head.feature(tape, &[v_pool.clone(), va_pool.clone()])?;
    head.output_layer.forward_vec(tape, &feature)
}

/// Argmax over a logit vector; ties break toward the lowest class index.
pub fn predict(logits: &Tensor) -> Result<usize> {
    let d = logits.data();
    if d.len() < 2 {
        return Err(Error::Contract(format!(
            "predict needs at least 2 classes, got {}",
            d.len()
        )));
    }
    if d.iter().any(|v| v.is_nan()) {
        return Err(Error::Numeric("NaN logits in predict".into()));
    }
    let mut best = 0;
    for (i, &v) in d.iter().enumerate() {
        if v > d[best] {
            best = i;
        }
    }
    Ok(best)
}
