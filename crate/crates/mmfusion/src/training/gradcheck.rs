//! End-to-end gradient check of the full dual-branch model with the
//! multi-sample dropout loss, against central finite differences.

use crate::config::TrainConfig;
use crate::data::{build_vocab, MultimodalExample, Task};
use crate::encoders::BranchConfig;
use crate::error::Result;
use crate::model::Model;
use crate::rng::{Rng, RngRegistry};
use crate::tensor::{grad_check, GradCheckReport, Tape, Tensor};

/// A complete-but-small configuration: both branches, the aux encoder,
/// multi-head attention, and the sampled dropout head, at dimensions where
/// hundreds of finite-difference evaluations stay fast.
pub fn gradcheck_config(seed: u64) -> TrainConfig {
    let mut cfg = TrainConfig::desk(Task::Sentiment);
    cfg.seed = seed;
    cfg.max_length = 10;
    cfg.model.image_h = 8;
    cfg.model.image_w = 8;
    cfg.model.patch = 4;
    let dims = BranchConfig {
        hidden_d: 16,
        heads: 2,
        mlp_d: 32,
        layers: 2,
    };
    cfg.model.vilt = dims;
    cfg.model.vault = dims;
    cfg.model.aux = BranchConfig { layers: 1, ..dims };
    cfg
}

fn fixture_examples() -> Vec<MultimodalExample> {
    let mk = |id: &str, title: &str, caption: &str, label: &str| MultimodalExample {
        id: id.into(),
        title: title.into(),
        caption: caption.into(),
        image_path: String::new(),
        sentiment: Some(label.into()),
        emotion: None,
        desire: None,
    };
    vec![
        mk("g0", "bright harbor stone", "a quiet morning scene", "positive"),
        mk("g1", "ember drift canyon", "clouds over the meadow", "negative"),
    ]
}

fn fixture_image(seed: u64, h: usize, w: usize) -> Tensor {
    let mut rng = Rng::seeded(seed);
    Tensor::from_vec((0..h * w).map(|_| rng.next_f64()).collect(), &[h, w]).unwrap()
}

/// Gradient-check `n_coords` randomly chosen parameter coordinates of a
/// freshly built model on a two-example batch. The loss is the train-mode
/// multi-sample dropout loss; the dropout streams are re-seeded inside the
/// closure so every evaluation sees identical masks.
pub fn model_grad_check(
    config: &TrainConfig,
    seed: u64,
    n_coords: usize,
    h: f64,
    tol: f64,
) -> Result<GradCheckReport> {
    let examples = fixture_examples();
    let vocab = build_vocab(&examples)?;
    let mut rng = RngRegistry::new(seed);
    let model = Model::new(config.clone(), vocab.clone(), vocab, &mut rng)?;
    // amplify the freshly initialized weights: near-zero init leaves the
    // attention logits almost uniform, where some analytic gradients sit
    // at the finite-difference noise floor and a wrong backward rule could
    // hide; generic-scale weights make every path numerically visible
    const GENERIC_SCALE: f64 = 4.0;
    for (_, t) in model.params.iter() {
        let data: Vec<f64> = t.data().iter().map(|v| v * GENERIC_SCALE).collect();
        t.set_data(data)?;
    }

    let encoded: Vec<_> = examples
        .iter()
        .enumerate()
        .map(|(i, ex)| {
            let img = fixture_image(
                seed.wrapping_add(i as u64),
                config.model.image_h,
                config.model.image_w,
            );
            let enc = model.encode_example(ex, &img)?;
            let target = ex.label_index(config.task)?;
            Ok((enc, target))
        })
        .collect::<Result<Vec<_>>>()?;

    let named = model.params.named_handles();
    let mut pick_rng = Rng::seeded(seed ^ 0x6772_6164_7069_636b);
    let picks: Vec<(usize, usize)> = (0..n_coords)
        .map(|_| {
            let pi = pick_rng.below(named.len());
            (pi, pick_rng.below(named[pi].1.numel()))
        })
        .collect();

    let mut f = |tape: &Tape| {
        // fresh streams per evaluation: identical dropout masks every call
        let mut drop_rng = RngRegistry::new(seed ^ 0x6d61_736b_7365_6564);
        let mut total = None;
        for (enc, target) in &encoded {
            let l = model.example_loss(tape, enc, *target, &mut drop_rng)?;
            total = Some(match total {
                Some(acc) => tape.add(&acc, &l)?,
                None => l,
            });
        }
        Ok(tape.scale(&total.unwrap(), 1.0 / encoded.len() as f64))
    };
    grad_check(&mut f, &named, &picks, h, tol)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_model_passes_gradient_check() {
        let cfg = gradcheck_config(1);
        let report = model_grad_check(&cfg, 1, 10, 1e-5, 1e-4).unwrap();
        assert!(report.pass, "max rel error {}", report.max_rel_error);
        assert_eq!(report.entries.len(), 10);
    }
}
