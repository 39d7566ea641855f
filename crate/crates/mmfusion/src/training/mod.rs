//! Per-task optimization: the epoch loop with best-validation-loss
//! selection, evaluation, the hyperparameter sweep, and the ablation grid.

pub mod ablate;
pub mod adam;
pub mod gradcheck;
pub mod metrics;
pub mod sweep;

pub use ablate::{ablate, AblationCell, AblationReport};
pub use adam::{adam_step, AdamState};
pub use gradcheck::{gradcheck_config, model_grad_check};
pub use metrics::{macro_metrics, pct, MetricsReport};
pub use sweep::{sweep, sweep_table, SweepRow, SweepSpace};

use serde::{Deserialize, Serialize};

use crate::config::TrainConfig;
use crate::data::{build_vocab, Dataset, LabelVocabulary, Split};
use crate::error::{Error, Result};
use crate::fusion::predict;
use crate::model::{EncodedExample, Model};
use crate::rng::RngRegistry;
use crate::tensor::Tape;

/// One line of the training log.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_macro_f1: f64,
}

/// A trained model with its best-validation state restored, plus the log.
pub struct TrainOutcome {
    pub model: Model,
    pub rng: RngRegistry,
    pub logs: Vec<EpochLog>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub config_flags: Vec<String>,
}

/// Encodings and targets of one split, computed once up front.
pub struct PreparedSplit {
    pub items: Vec<(EncodedExample, usize)>,
}

pub fn prepare_split(model: &Model, dataset: &Dataset, split: Split) -> Result<PreparedSplit> {
    let examples = dataset.split(split);
    if examples.is_empty() {
        return Err(Error::Contract(format!(
            "{} split is empty",
            split.name()
        )));
    }
    let mut items = Vec::with_capacity(examples.len());
    for ex in examples {
        let image = dataset.image_for(ex)?;
        let enc = model.encode_example(ex, &image)?;
        items.push((enc, ex.label_index(model.config.task)?));
    }
    Ok(PreparedSplit { items })
}

/// Eval-mode pass over a prepared split: mean loss plus (pred, gold) pairs.
pub fn eval_pass(model: &Model, split: &PreparedSplit) -> Result<(f64, Vec<(usize, usize)>)> {
    let mut loss_sum = 0.0;
    let mut pairs = Vec::with_capacity(split.items.len());
    for (enc, target) in &split.items {
        let tape = Tape::no_grad();
        let logits = model.forward_eval(&tape, enc)?;
        loss_sum += model.example_eval_loss(&tape, enc, *target)?.item();
        pairs.push((predict(&logits)?, *target));
    }
    Ok((loss_sum / split.items.len() as f64, pairs))
}

fn report_from_pairs(model: &Model, pairs: &[(usize, usize)]) -> Result<MetricsReport> {
    let preds: Vec<usize> = pairs.iter().map(|p| p.0).collect();
    let golds: Vec<usize> = pairs.iter().map(|p| p.1).collect();
    let vocab = LabelVocabulary::for_task(model.config.task);
    Ok(macro_metrics(&preds, &golds, vocab.len())?.with_labels(&vocab.labels))
}

/// Evaluate a split of a dataset directory with the model in eval mode.
pub fn evaluate(model: &Model, dataset: &Dataset, split: Split) -> Result<MetricsReport> {
    let prepared = prepare_split(model, dataset, split)?;
    let (_, pairs) = eval_pass(model, &prepared)?;
    report_from_pairs(model, &pairs)
}

fn snapshot_params(model: &Model) -> Vec<Vec<f64>> {
    model.params.iter().map(|(_, t)| t.data()).collect()
}

fn restore_params(model: &Model, snapshot: &[Vec<f64>]) {
    for ((_, t), data) in model.params.iter().zip(snapshot) {
        t.set_data(data.clone()).expect("snapshot shapes match");
    }
}

/// Train a model on the dataset: seeded shuffled mini-batches, the
/// configured fusion/head path, Adam updates, per-epoch validation, and
/// best-validation-loss checkpoint selection. The returned model holds the
/// best epoch's weights.
pub fn train(config: TrainConfig, dataset: &Dataset) -> Result<TrainOutcome> {
    let config_flags = config.validate()?;
    // two separately instantiated vocabularies, one per branch tokenizer
    let vocab_vilt = build_vocab(&dataset.train)?;
    let vocab_vault = build_vocab(&dataset.train)?;
    let mut rng = RngRegistry::new(config.seed);
    let model = Model::new(config.clone(), vocab_vilt, vocab_vault, &mut rng)?;

    let train_split = prepare_split(&model, dataset, Split::Train)?;
    let val_split = prepare_split(&model, dataset, Split::Val)?;

    let mut adam = AdamState::new(&model.params);
    let n_train = train_split.items.len();
    let mut logs = Vec::with_capacity(config.epochs);
    let mut best_val_loss = f64::INFINITY;
    let mut best_epoch = 0;
    let mut best_params = snapshot_params(&model);

    for epoch in 1..=config.epochs {
        let mut order: Vec<usize> = (0..n_train).collect();
        rng.stream("train.shuffle").shuffle(&mut order);
        let mut loss_sum = 0.0;
        for batch in order.chunks(config.train_batch) {
            let tape = Tape::new();
            let mut batch_loss = None;
            for &i in batch {
                let (enc, target) = &train_split.items[i];
                let l = model.example_loss(&tape, enc, *target, &mut rng)?;
                batch_loss = Some(match batch_loss {
                    Some(acc) => tape.add(&acc, &l)?,
                    None => l,
                });
            }
            let batch_loss = tape.scale(&batch_loss.unwrap(), 1.0 / batch.len() as f64);
            tape.backward(&batch_loss)?;
            adam_step(&model.params, &mut adam, config.learning_rate)?;
            loss_sum += batch_loss.item() * batch.len() as f64;
        }
        let train_loss = loss_sum / n_train as f64;
        let (val_loss, pairs) = eval_pass(&model, &val_split)?;
        let val_macro_f1 = report_from_pairs(&model, &pairs)?.macro_f1;
        logs.push(EpochLog {
            epoch,
            train_loss,
            val_loss,
            val_macro_f1,
        });
        if val_loss < best_val_loss {
            best_val_loss = val_loss;
            best_epoch = epoch;
            best_params = snapshot_params(&model);
        }
    }
    restore_params(&model, &best_params);
    Ok(TrainOutcome {
        model,
        rng,
        logs,
        best_epoch,
        best_val_loss,
        config_flags,
    })
}
