//! The two multimodal branches. Each consumes a text pair plus image
//! patches as one token stream and produces a pooled vector. The `vilt`
//! branch embeds text with its own token table; the `vault` branch instead
//! takes per-token features from a jointly trained auxiliary language
//! encoder.

use crate::data::{MultimodalExample, TokenVocabulary, CLS_ID, PAD_ID, SEP_ID};
use crate::error::{Error, Result};
use crate::layers::{
    transformer_block, AttentionConfig, BlockConfig, BlockParameters, DropoutSpec, EmbeddingTable,
    LinearLayer, Mode,
};
use crate::params::ModelParameters;
use crate::rng::{Rng, RngRegistry};
use crate::tensor::{Tape, Tensor};

/// How raw examples become model inputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct EncodeConfig {
    pub max_length: usize,
    pub image_h: usize,
    pub image_w: usize,
    pub patch: usize,
}

impl EncodeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_length < 3 {
            return Err(Error::Config(format!(
                "max_length must be at least 3 ([CLS] + two [SEP]), got {}",
                self.max_length
            )));
        }
        if self.patch == 0 || !self.image_h.is_multiple_of(self.patch) || !self.image_w.is_multiple_of(self.patch) {
            return Err(Error::Format(format!(
                "image {}x{} is not divisible by patch size {}",
                self.image_h, self.image_w, self.patch
            )));
        }
        Ok(())
    }

    pub fn n_patches(&self) -> usize {
        (self.image_h / self.patch) * (self.image_w / self.patch)
    }

    pub fn patch_dim(&self) -> usize {
        self.patch * self.patch
    }
}

/// Model-ready form of one example: `[CLS] title [SEP] caption [SEP]`
/// token/segment/mask vectors padded to `max_length`, plus the flattened
/// image patch sequence.
#[derive(Debug, Clone)]
pub struct PairEncoding {
    pub token_ids: Vec<usize>,
    pub segment_ids: Vec<usize>,
    pub text_mask: Vec<bool>,
    pub patches: Tensor,
    pub has_image_cls: bool,
}

impl PairEncoding {
    /// Replace the text content with the bare `[CLS] [SEP] [SEP]` skeleton
    /// (image-only ablation input).
    pub fn with_text_blanked(&self) -> PairEncoding {
        let l = self.token_ids.len();
        let mut token_ids = vec![PAD_ID; l];
        let mut segment_ids = vec![0usize; l];
        let mut text_mask = vec![false; l];
        token_ids[0] = CLS_ID;
        token_ids[1] = SEP_ID;
        token_ids[2] = SEP_ID;
        segment_ids[2] = 1;
        text_mask[..3].fill(true);
        PairEncoding {
            token_ids,
            segment_ids,
            text_mask,
            patches: self.patches.clone(),
            has_image_cls: self.has_image_cls,
        }
    }

    /// Replace the patch content with zeros (text-only ablation input).
    pub fn with_image_blanked(&self) -> PairEncoding {
        PairEncoding {
            token_ids: self.token_ids.clone(),
            segment_ids: self.segment_ids.clone(),
            text_mask: self.text_mask.clone(),
            patches: Tensor::zeros(&self.patches.shape()),
            has_image_cls: self.has_image_cls,
        }
    }
}

/// Cut a `[h×w]` image into non-overlapping `patch×patch` squares in
/// row-major grid order, each flattened row-major.
pub fn patchify(image: &Tensor, patch: usize) -> Result<Tensor> {
    let s = image.shape();
    if s.len() != 2 {
        return Err(Error::Format(format!(
            "expected a single-channel [h×w] image, got shape {s:?}"
        )));
    }
    let (h, w) = (s[0], s[1]);
    if patch == 0 || h % patch != 0 || w % patch != 0 {
        return Err(Error::Format(format!(
            "image {h}x{w} is not divisible by patch size {patch}"
        )));
    }
    let (gh, gw) = (h / patch, w / patch);
    let data = image.data();
    let mut out = Vec::with_capacity(h * w);
    for gr in 0..gh {
        for gc in 0..gw {
            for r in 0..patch {
                for c in 0..patch {
                    out.push(data[(gr * patch + r) * w + gc * patch + c]);
                }
            }
        }
    }
    Tensor::from_vec(out, &[gh * gw, patch * patch])
}

/// Deterministic tokenization and layout of one example. Truncation keeps
/// the title intact first, then trims the caption from its end.
pub fn encode_pair(
    ex: &MultimodalExample,
    image: &Tensor,
    vocab: &TokenVocabulary,
    cfg: &EncodeConfig,
) -> Result<PairEncoding> {
    cfg.validate()?;
    let s = image.shape();
    if s != vec![cfg.image_h, cfg.image_w] {
        return Err(Error::Format(format!(
            "example `{}`: image shape {s:?} does not match configured {}x{}",
            ex.id, cfg.image_h, cfg.image_w
        )));
    }
    let title_toks = crate::data::tokenize(&ex.title);
    let caption_toks = crate::data::tokenize(&ex.caption);
    if title_toks.is_empty() && caption_toks.is_empty() {
        return Err(Error::Format(format!(
            "example `{}` has empty title and caption",
            ex.id
        )));
    }
    let avail = cfg.max_length - 3;
    let title_keep = title_toks.len().min(avail);
    let caption_keep = caption_toks.len().min(avail - title_keep);

    let mut token_ids = Vec::with_capacity(cfg.max_length);
    let mut segment_ids = Vec::with_capacity(cfg.max_length);
    token_ids.push(CLS_ID);
    segment_ids.push(0);
    for t in &title_toks[..title_keep] {
        token_ids.push(vocab.id_of(t));
        segment_ids.push(0);
    }
    token_ids.push(SEP_ID);
    segment_ids.push(0);
    for t in &caption_toks[..caption_keep] {
        token_ids.push(vocab.id_of(t));
        segment_ids.push(1);
    }
    token_ids.push(SEP_ID);
    segment_ids.push(1);
    let used = token_ids.len();
    let mut text_mask = vec![true; used];
    token_ids.resize(cfg.max_length, PAD_ID);
    segment_ids.resize(cfg.max_length, 0);
    text_mask.resize(cfg.max_length, false);

    Ok(PairEncoding {
        token_ids,
        segment_ids,
        text_mask,
        patches: patchify(image, cfg.patch)?,
        has_image_cls: true,
    })
}

/// Transformer dimensions of one branch (or of the aux encoder).
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct BranchConfig {
    pub hidden_d: usize,
    pub heads: usize,
    pub mlp_d: usize,
    pub layers: usize,
}

impl BranchConfig {
    /// Desk-scale dimensions: small enough to gradient-check and train on
    /// one core, large enough to exercise multi-head attention.
    pub fn desk() -> BranchConfig {
        BranchConfig {
            hidden_d: 64,
            heads: 4,
            mlp_d: 128,
            layers: 2,
        }
    }

    /// The published full-scale dimensions; a preset, never the default.
    pub fn full_scale() -> BranchConfig {
        BranchConfig {
            hidden_d: 768,
            heads: 12,
            mlp_d: 3072,
            layers: 12,
        }
    }

    pub fn attention(&self) -> Result<AttentionConfig> {
        AttentionConfig::new(self.hidden_d, self.heads)
    }

    pub fn block(&self) -> Result<BlockConfig> {
        Ok(BlockConfig {
            attn: self.attention()?,
            mlp_d: self.mlp_d,
        })
    }
}

/// Every learnable piece of one single-stream branch. The vault branch
/// leaves `token_embed` unset because its text features come from the aux
/// encoder instead.
pub struct BranchParameters {
    pub token_embed: Option<EmbeddingTable>,
    pub position_embed: EmbeddingTable,
    pub segment_embed: EmbeddingTable,
    pub modality_embed: EmbeddingTable,
    pub patch_projection: LinearLayer,
    pub image_cls: Tensor,
    pub blocks: Vec<BlockParameters>,
    pub pooler: LinearLayer,
    pub cfg: BranchConfig,
    pub block_cfg: BlockConfig,
}

impl BranchParameters {
    pub fn new(
        params: &mut ModelParameters,
        name: &str,
        cfg: BranchConfig,
        enc: &EncodeConfig,
        vocab_size: Option<usize>,
        rng: &mut Rng,
    ) -> Result<BranchParameters> {
        enc.validate()?;
        let block_cfg = cfg.block()?;
        let d = cfg.hidden_d;
        let positions = enc.max_length.max(enc.n_patches() + 1);
        let token_embed = vocab_size
            .map(|v| EmbeddingTable::new(params, &format!("{name}.token_embed"), v, d, rng));
        let position_embed =
            EmbeddingTable::new(params, &format!("{name}.position_embed"), positions, d, rng);
        let segment_embed =
            EmbeddingTable::new(params, &format!("{name}.segment_embed"), 2, d, rng);
        let modality_embed =
            EmbeddingTable::new(params, &format!("{name}.modality_embed"), 2, d, rng);
        let patch_projection = LinearLayer::new(
            params,
            &format!("{name}.patch_projection"),
            enc.patch_dim(),
            d,
            rng,
        );
        let image_cls = params.register(
            &format!("{name}.image_cls"),
            Tensor::param((0..d).map(|_| 0.02 * rng.normal()).collect(), &[1, d]).unwrap(),
        );
        let blocks = (0..cfg.layers)
            .map(|i| BlockParameters::new(params, &format!("{name}.block{i}"), block_cfg, rng))
            .collect();
        let pooler = LinearLayer::new(params, &format!("{name}.pooler"), d, d, rng);
        Ok(BranchParameters {
            token_embed,
            position_embed,
            segment_embed,
            modality_embed,
            patch_projection,
            image_cls,
            blocks,
            pooler,
            cfg,
            block_cfg,
        })
    }
}

const TEXT_MODALITY: usize = 0;
const IMAGE_MODALITY: usize = 1;

fn indices(n: usize, v: usize) -> Vec<usize> {
    vec![v; n]
}

fn ramp(n: usize) -> Vec<usize> {
    (0..n).collect()
}

/// Assemble the joint stream from per-token text features and the image
/// patches, run the blocks, and pool at the text `[CLS]` state
/// (`tanh(W·h_cls + b)`).
fn branch_core(
    tape: &Tape,
    text_features: &Tensor,
    enc: &PairEncoding,
    p: &BranchParameters,
    drop: &DropoutSpec,
    rng: &mut RngRegistry,
) -> Result<Tensor> {
    let l = enc.token_ids.len();
    let d = p.cfg.hidden_d;
    let pos_t = p.position_embed.lookup(tape, &ramp(l))?;
    let seg = p.segment_embed.lookup(tape, &enc.segment_ids)?;
    let modal_t = p.modality_embed.lookup(tape, &indices(l, TEXT_MODALITY))?;
    let text = tape.add(
        &tape.add(text_features, &pos_t)?,
        &tape.add(&seg, &modal_t)?,
    )?;

    let projected = p.patch_projection.forward(tape, &enc.patches)?;
    let img_tokens = tape.concat(&[p.image_cls.clone(), projected], 0)?;
    let n_img = img_tokens.shape()[0];
    let pos_i = p.position_embed.lookup(tape, &ramp(n_img))?;
    let modal_i = p
        .modality_embed
        .lookup(tape, &indices(n_img, IMAGE_MODALITY))?;
    let image = tape.add(&tape.add(&img_tokens, &pos_i)?, &modal_i)?;

    let mut x = tape.concat(&[text, image], 0)?;
    let mut mask = enc.text_mask.clone();
    mask.extend(std::iter::repeat_n(true, n_img));
    for b in &p.blocks {
        x = transformer_block(tape, &x, &mask, &p.block_cfg, b, drop, rng)?;
    }
    let cls = tape.slice_rows(&x, 0, 1)?;
    let pooled = tape.tanh(&p.pooler.forward(tape, &cls)?);
    tape.reshape(&pooled, &[d])
}

/// Pooled vector of the branch whose text features are its own token
/// embeddings.
pub fn vilt_branch_forward(
    tape: &Tape,
    enc: &PairEncoding,
    p: &BranchParameters,
    drop: &DropoutSpec,
    rng: &mut RngRegistry,
) -> Result<Tensor> {
    let table = p.token_embed.as_ref().ok_or_else(|| {
        Error::Contract("this branch was built without a token embedding table".into())
    })?;
    let text_features = table.lookup(tape, &enc.token_ids)?;
    branch_core(tape, &text_features, enc, p, drop, rng)
}

/// Standalone language encoder producing per-token features of the branch
/// width; trained jointly with the branch consuming it.
pub struct AuxLanguageEncoder {
    pub token_embed: EmbeddingTable,
    pub position_embed: EmbeddingTable,
    pub blocks: Vec<BlockParameters>,
    pub block_cfg: BlockConfig,
}

impl AuxLanguageEncoder {
    pub fn new(
        params: &mut ModelParameters,
        name: &str,
        cfg: BranchConfig,
        max_length: usize,
        vocab_size: usize,
        rng: &mut Rng,
    ) -> Result<AuxLanguageEncoder> {
        let block_cfg = cfg.block()?;
        let d = cfg.hidden_d;
        Ok(AuxLanguageEncoder {
            token_embed: EmbeddingTable::new(
                params,
                &format!("{name}.token_embed"),
                vocab_size,
                d,
                rng,
            ),
            position_embed: EmbeddingTable::new(
                params,
                &format!("{name}.position_embed"),
                max_length,
                d,
                rng,
            ),
            blocks: (0..cfg.layers)
                .map(|i| BlockParameters::new(params, &format!("{name}.block{i}"), block_cfg, rng))
                .collect(),
            block_cfg,
        })
    }

    /// Per-token output features, one row per input position.
    pub fn forward(
        &self,
        tape: &Tape,
        token_ids: &[usize],
        text_mask: &[bool],
        drop: &DropoutSpec,
        rng: &mut RngRegistry,
    ) -> Result<Tensor> {
        let l = token_ids.len();
        let tok = self.token_embed.lookup(tape, token_ids)?;
        let pos = self.position_embed.lookup(tape, &ramp(l))?;
        let mut x = tape.add(&tok, &pos)?;
        for b in &self.blocks {
            x = transformer_block(tape, &x, text_mask, &self.block_cfg, b, drop, rng)?;
        }
        Ok(x)
    }
}

/// Pooled vector of the branch whose text features come from the aux
/// encoder; gradients flow into both.
pub fn vault_branch_forward(
    tape: &Tape,
    enc: &PairEncoding,
    aux: &AuxLanguageEncoder,
    p: &BranchParameters,
    drop: &DropoutSpec,
    rng: &mut RngRegistry,
) -> Result<Tensor> {
    let text_features = aux.forward(tape, &enc.token_ids, &enc.text_mask, drop, rng)?;
    branch_core(tape, &text_features, enc, p, drop, rng)
}

/// Dropout spec used wherever a branch runs without block dropout.
pub fn no_block_dropout(mode: Mode) -> DropoutSpec {
    DropoutSpec {
        rate: 0.0,
        mode,
        rng_stream: "dropout.block".to_string(),
    }
}
