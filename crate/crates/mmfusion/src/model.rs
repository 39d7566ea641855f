//! Assembly of the full classifier: the configured branches, the auxiliary
//! language encoder, the fusion strategy, and the classification head,
//! behind one forward/loss interface used by training, evaluation, and
//! gradient checking.

use crate::config::{BranchChoice, FusionStrategy, Modality, TrainConfig};
use crate::data::{MultimodalExample, TokenVocabulary};
use crate::encoders::{
    encode_pair, vault_branch_forward, vilt_branch_forward, AuxLanguageEncoder, BranchParameters,
    EncodeConfig, PairEncoding,
};
use crate::error::{Error, Result};
use crate::fusion::{msd_forward, msd_loss, LateFusionHead, FusedFeature, MsdHead, MsdOutput};
use crate::layers::{DropoutSpec, Mode};
use crate::params::ModelParameters;
use crate::rng::RngRegistry;
use crate::tensor::{Tape, Tensor};

/// Both branches' encodings of one example, with modality masking already
/// applied. Branches that are ablated away have no encoding.
pub struct EncodedExample {
    pub vilt: Option<PairEncoding>,
    pub vault: Option<PairEncoding>,
}

pub struct Model {
    pub config: TrainConfig,
    pub vocab_vilt: TokenVocabulary,
    pub vocab_vault: TokenVocabulary,
    pub vilt: Option<BranchParameters>,
    pub vault: Option<BranchParameters>,
    pub aux: Option<AuxLanguageEncoder>,
    pub late_head: Option<LateFusionHead>,
    pub msd_head: MsdHead,
    pub params: ModelParameters,
}

impl Model {
    /// Build a model for `config`, drawing initial weights from the
    /// registry's `init` stream. Construction order is fixed, so equal
    /// seeds give bitwise-equal weights.
    pub fn new(
        config: TrainConfig,
        vocab_vilt: TokenVocabulary,
        vocab_vault: TokenVocabulary,
        rng: &mut RngRegistry,
    ) -> Result<Model> {
        config.validate()?;
        let enc = config.encode_config();
        let k = config.task.k();
        let mut params = ModelParameters::new();
        let init = rng.stream("init");

        let vilt = match config.branches {
            BranchChoice::VaultOnly => None,
            _ => Some(BranchParameters::new(
                &mut params,
                "vilt",
                config.model.vilt,
                &enc,
                Some(vocab_vilt.len()),
                init,
            )?),
        };
        let (vault, aux) = match config.branches {
            BranchChoice::ViltOnly => (None, None),
            _ => {
                let vault = BranchParameters::new(
                    &mut params,
                    "vault",
                    config.model.vault,
                    &enc,
                    None,
                    init,
                )?;
                let aux = AuxLanguageEncoder::new(
                    &mut params,
                    "aux",
                    config.model.aux,
                    config.max_length,
                    vocab_vault.len(),
                    init,
                )?;
                (Some(vault), Some(aux))
            }
        };

        let mut widths = Vec::new();
        if let Some(b) = &vilt {
            widths.push(b.cfg.hidden_d);
        }
        if let Some(b) = &vault {
            widths.push(b.cfg.hidden_d);
        }
        let fused_d: usize = widths.iter().sum();

        let (late_head, msd_head) = match config.fusion {
            FusionStrategy::Early => (
                None,
                MsdHead::new(
                    &mut params,
                    "head",
                    fused_d,
                    k,
                    config.d0_dropout,
                    config.msd_rates.clone(),
                    init,
                )?,
            ),
            FusionStrategy::Late => {
                let late = LateFusionHead::new(&mut params, "late_head", &widths, k, init)?;
                // the sampling head scores through the late head's output
                // layer; there is exactly one output layer either way
                let msd = MsdHead::with_output_layer(
                    late.output_layer.clone(),
                    config.d0_dropout,
                    config.msd_rates.clone(),
                )?;
                (Some(late), msd)
            }
        };

        Ok(Model {
            config,
            vocab_vilt,
            vocab_vault,
            vilt,
            vault,
            aux,
            late_head,
            msd_head,
            params,
        })
    }

    pub fn encode_config(&self) -> EncodeConfig {
        self.config.encode_config()
    }

    /// Encode one example for every active branch and apply the configured
    /// modality masking.
    pub fn encode_example(&self, ex: &MultimodalExample, image: &Tensor) -> Result<EncodedExample> {
        let cfg = self.encode_config();
        let mask = |enc: PairEncoding| match self.config.modality {
            Modality::Both => enc,
            Modality::TextOnly => enc.with_image_blanked(),
            Modality::ImageOnly => enc.with_text_blanked(),
        };
        let vilt = match &self.vilt {
            Some(_) => Some(mask(encode_pair(ex, image, &self.vocab_vilt, &cfg)?)),
            None => None,
        };
        let vault = match &self.vault {
            Some(_) => Some(mask(encode_pair(ex, image, &self.vocab_vault, &cfg)?)),
            None => None,
        };
        Ok(EncodedExample { vilt, vault })
    }

    fn block_dropout(&self, mode: Mode) -> DropoutSpec {
        DropoutSpec {
            rate: self.config.model.block_dropout,
            mode,
            rng_stream: "dropout.block".to_string(),
        }
    }

    /// Pooled vectors of the active branches, vilt first.
    pub fn pooled(
        &self,
        tape: &Tape,
        enc: &EncodedExample,
        mode: Mode,
        rng: &mut RngRegistry,
    ) -> Result<Vec<Tensor>> {
        let drop = self.block_dropout(mode);
        let mut pools = Vec::new();
        if let (Some(p), Some(e)) = (&self.vilt, &enc.vilt) {
            pools.push(vilt_branch_forward(tape, e, p, &drop, rng)?);
        }
        if let (Some(p), Some(e)) = (&self.vault, &enc.vault) {
            let aux = self.aux.as_ref().expect("vault branch implies aux encoder");
            pools.push(vault_branch_forward(tape, e, aux, p, &drop, rng)?);
        }
        if pools.is_empty() {
            return Err(Error::Contract("no active branch produced a pooled vector".into()));
        }
        Ok(pools)
    }

    /// The classification feature under the configured fusion strategy.
    pub fn feature(
        &self,
        tape: &Tape,
        enc: &EncodedExample,
        mode: Mode,
        rng: &mut RngRegistry,
    ) -> Result<FusedFeature> {
        let pools = self.pooled(tape, enc, mode, rng)?;
        let vector = match (&self.config.fusion, self.late_head.as_ref()) {
            (FusionStrategy::Early, _) => tape.concat(&pools, 0)?,
            (FusionStrategy::Late, Some(head)) => head.feature(tape, &pools)?,
            (FusionStrategy::Late, None) => {
                return Err(Error::Contract("late fusion configured without its head".into()))
            }
        };
        Ok(FusedFeature { vector })
    }

    /// Train-mode sample logits: multiple samples with multi-sample
    /// dropout enabled, a single dropout-regularized sample otherwise.
    pub fn forward_train(
        &self,
        tape: &Tape,
        enc: &EncodedExample,
        rng: &mut RngRegistry,
    ) -> Result<Vec<Tensor>> {
        let feature = self.feature(tape, enc, Mode::Train, rng)?;
        if self.config.msd {
            match msd_forward(tape, &feature, &self.msd_head, Mode::Train, rng)? {
                MsdOutput::Train(samples) => Ok(samples),
                MsdOutput::Eval(_) => unreachable!("train mode returns samples"),
            }
        } else {
            let d0 = DropoutSpec {
                mode: Mode::Train,
                ..self.msd_head.base_dropout.clone()
            };
            let x = crate::layers::dropout(tape, &feature.vector, &d0, rng)?;
            Ok(vec![self.msd_head.output_layer.forward_vec(tape, &x)?])
        }
    }

    /// Eval-mode logits: every dropout is the identity, so this is one
    /// plain forward through the shared output layer.
    pub fn forward_eval(&self, tape: &Tape, enc: &EncodedExample) -> Result<Tensor> {
        let mut rng = RngRegistry::new(0); // eval draws nothing
        let feature = self.feature(tape, enc, Mode::Eval, &mut rng)?;
        match msd_forward(tape, &feature, &self.msd_head, Mode::Eval, &mut rng)? {
            MsdOutput::Eval(logits) => Ok(logits),
            MsdOutput::Train(_) => unreachable!("eval mode returns one forward"),
        }
    }

    /// Training loss of one example.
    pub fn example_loss(
        &self,
        tape: &Tape,
        enc: &EncodedExample,
        target: usize,
        rng: &mut RngRegistry,
    ) -> Result<Tensor> {
        let samples = self.forward_train(tape, enc, rng)?;
        msd_loss(tape, &samples, target)
    }

    /// Eval-mode cross-entropy of one example.
    pub fn example_eval_loss(
        &self,
        tape: &Tape,
        enc: &EncodedExample,
        target: usize,
    ) -> Result<Tensor> {
        let logits = self.forward_eval(tape, enc)?;
        msd_loss(tape, &[logits], target)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::TrainConfig;
    use crate::data::{build_vocab, Task};
    use crate::fusion::predict;

    pub(crate) fn tiny_config(task: Task) -> TrainConfig {
        let mut cfg = TrainConfig::desk(task);
        cfg.max_length = 8;
        cfg.model.image_h = 8;
        cfg.model.image_w = 8;
        cfg.model.patch = 4;
        cfg.model.vilt = crate::encoders::BranchConfig {
            hidden_d: 8,
            heads: 2,
            mlp_d: 16,
            layers: 1,
        };
        cfg.model.vault = cfg.model.vilt;
        cfg.model.aux = crate::encoders::BranchConfig {
            layers: 1,
            ..cfg.model.vilt
        };
        cfg
    }

    fn example(title: &str, caption: &str) -> MultimodalExample {
        MultimodalExample {
            id: "m0".into(),
            title: title.into(),
            caption: caption.into(),
            image_path: String::new(),
            sentiment: Some("positive".into()),
            emotion: None,
            desire: None,
        }
    }

    fn fixture(cfg: TrainConfig) -> (Model, MultimodalExample, Tensor) {
        let exs = vec![example("a b", "c d"), example("b c", "e")];
        let vocab = build_vocab(&exs).unwrap();
        let mut rng = RngRegistry::new(cfg.seed);
        let model = Model::new(cfg, vocab.clone(), vocab, &mut rng).unwrap();
        let image = Tensor::from_vec((0..64).map(|i| i as f64 / 64.0).collect(), &[8, 8]).unwrap();
        (model, example("a b", "c"), image)
    }

    #[test]
    fn dual_branch_model_runs_and_predicts() {
        let (model, ex, img) = fixture(tiny_config(Task::Sentiment));
        let enc = model.encode_example(&ex, &img).unwrap();
        let tape = Tape::no_grad();
        let logits = model.forward_eval(&tape, &enc).unwrap();
        assert_eq!(logits.numel(), 3);
        assert!(predict(&logits).unwrap() < 3);
    }

    #[test]
    fn single_branch_models_have_fewer_parameters() {
        let both = fixture(tiny_config(Task::Sentiment)).0;
        let mut cfg = tiny_config(Task::Sentiment);
        cfg.branches = BranchChoice::ViltOnly;
        let vilt_only = fixture(cfg).0;
        let mut cfg = tiny_config(Task::Sentiment);
        cfg.branches = BranchChoice::VaultOnly;
        let vault_only = fixture(cfg).0;
        assert!(both.params.total_numel() > vilt_only.params.total_numel());
        assert!(both.params.total_numel() > vault_only.params.total_numel());
        assert!(vilt_only.vault.is_none() && vilt_only.aux.is_none());
        assert!(vault_only.vilt.is_none());
    }

    #[test]
    fn late_fusion_shares_one_output_layer() {
        let mut cfg = tiny_config(Task::Sentiment);
        cfg.fusion = FusionStrategy::Late;
        let (model, ex, img) = fixture(cfg);
        let late = model.late_head.as_ref().unwrap();
        assert!(Tensor::ptr_eq(
            &late.output_layer.weight,
            &model.msd_head.output_layer.weight
        ));
        let enc = model.encode_example(&ex, &img).unwrap();
        let tape = Tape::no_grad();
        assert_eq!(model.forward_eval(&tape, &enc).unwrap().numel(), 3);
    }

    #[test]
    fn msd_off_keeps_parameter_count() {
        let on = fixture(tiny_config(Task::Sentiment)).0;
        let mut cfg = tiny_config(Task::Sentiment);
        cfg.msd = false;
        let off = fixture(cfg).0;
        assert_eq!(on.params.total_numel(), off.params.total_numel());
        assert_eq!(on.params.len(), off.params.len());
    }

    #[test]
    fn modality_masking_blanks_exactly_one_side() {
        let mut cfg = tiny_config(Task::Sentiment);
        cfg.modality = Modality::TextOnly;
        let (model, ex, img) = fixture(cfg);
        let enc = model.encode_example(&ex, &img).unwrap();
        let v = enc.vilt.unwrap();
        assert!(v.patches.data().iter().all(|&x| x == 0.0));
        assert!(v.token_ids.iter().any(|&t| t > 3));

        let mut cfg = tiny_config(Task::Sentiment);
        cfg.modality = Modality::ImageOnly;
        let (model, ex, img) = fixture(cfg);
        let enc = model.encode_example(&ex, &img).unwrap();
        let v = enc.vilt.unwrap();
        assert!(v.token_ids.iter().all(|&t| t <= 3));
        assert!(v.patches.data().iter().any(|&x| x != 0.0));
    }

    #[test]
    fn same_seed_builds_identical_models() {
        let build = || {
            let (model, ex, img) = fixture(tiny_config(Task::Sentiment));
            let enc = model.encode_example(&ex, &img).unwrap();
            let tape = Tape::no_grad();
            model
                .forward_eval(&tape, &enc)
                .unwrap()
                .data()
                .iter()
                .map(|v| v.to_bits())
                .collect::<Vec<_>>()
        };
        assert_eq!(build(), build());
    }

    #[test]
    fn one_backward_reaches_both_branches() {
        let (model, ex, img) = fixture(tiny_config(Task::Sentiment));
        let enc = model.encode_example(&ex, &img).unwrap();
        let tape = Tape::new();
        let mut rng = RngRegistry::new(3);
        let loss = model.example_loss(&tape, &enc, 1, &mut rng).unwrap();
        tape.backward(&loss).unwrap();
        let nonzero = |prefix: &str| {
            model
                .params
                .iter()
                .filter(|(n, _)| n.starts_with(prefix))
                .any(|(_, t)| t.grad().unwrap().iter().any(|&g| g != 0.0))
        };
        assert!(nonzero("vilt."), "no gradient reached the vilt branch");
        assert!(nonzero("vault."), "no gradient reached the vault branch");
        assert!(nonzero("aux."), "no gradient reached the aux encoder");
    }
}
