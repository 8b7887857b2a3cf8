//! The captioning model: five part-of-speech encoder blocks, a noun anchor,
//! and an attention-guided caption decoder, trained against a composite
//! loss.
//!
//! Information flows in a fixed cascade. Object vectors are encoded into a
//! noun anchor sequence `n_f`. The verb block reads the temporal stream
//! conditioned on `n_f`; the subject-determinant block reads the spatial
//! stream conditioned on the verb features and `n_f`; the auxiliary-verb
//! block adds the subject features; the object-determinant block adds the
//! auxiliary features; and the global-local fusion block conditions on all
//! four. Every block is a bidirectional LSTM over its base stream
//! concatenated with attention-pooled summaries of its conditioning
//! sequences, plus a projection head whose output is pulled toward the
//! embedding of the block's ground-truth phrase. The caption decoder is a
//! single-direction LSTM fed, at each step, the previous word embedding, an
//! attention summary of the fusion features (keyed by that embedding), and
//! all five block projections.
//!
//! Any subset of the five blocks plus the feature-masking stage can be
//! removed ([`Wiring`]); a removed block's features and projection are
//! exact zeros, its loss term is dropped, and — when the fusion block is
//! gone — the decoder attends over the raw spatial stream instead.

pub mod checkpoint;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Error as GraphError, Tensor, Var};
use crate::data::{PosTargets, VideoSample};
use crate::layers::{Attention, BiLstm, Embedding, Fc, Init, LayerError, LstmCell};
use crate::masking::{mask_spatial, mask_temporal_chunk, MaskConfig, MaskError};
use crate::vocab::{BOS, EOS};

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error(transparent)]
    Graph(#[from] GraphError),

    #[error(transparent)]
    Layer(#[from] LayerError),

    #[error(transparent)]
    Mask(#[from] MaskError),

    #[error("invalid model config: {detail}")]
    InvalidConfig { detail: String },

    #[error("feature shape mismatch: {detail}")]
    FeatureShape { detail: String },

    #[error("unknown block name {name:?} (expected verb, det-subject, aux-verb, det-object, glfb, or vfm)")]
    UnknownBlockName { name: String },

    #[error("{what} embedding is a zero vector; cosine distance is undefined")]
    ZeroVector { what: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("corrupt checkpoint: {reason}")]
    CorruptCheckpoint { reason: String },

    #[error("unsupported checkpoint version {found} (expected {expected})")]
    CheckpointVersion { found: u16, expected: u16 },
}

/// Distance between a block projection and its target embedding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DistanceKind {
    /// Mean squared error (default).
    Mse,
    /// `1 - cos(pred, target)`.
    Cosine,
}

/// Architecture hyperparameters. `hidden` is the LSTM state width per
/// direction; block features are `2 * hidden` wide. `embed` is both the
/// word embedding width and the block projection width.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub hidden: usize,
    pub embed: usize,
    pub spatial_dim: usize,
    pub temporal_dim: usize,
    pub noun_dim: usize,
    pub vocab: usize,
    pub max_len: usize,
    pub distance: DistanceKind,
}

impl ModelConfig {
    /// Desk-scale defaults; feature dims and vocabulary must still be
    /// supplied because they are corpus properties.
    pub fn desk(spatial_dim: usize, temporal_dim: usize, noun_dim: usize, vocab: usize) -> Self {
        ModelConfig {
            hidden: 64,
            embed: 32,
            spatial_dim,
            temporal_dim,
            noun_dim,
            vocab,
            max_len: 16,
            distance: DistanceKind::Mse,
        }
    }

    /// Reads feature dims off a corpus and validates their consistency.
    pub fn for_corpus(samples: &[VideoSample], vocab: usize) -> Result<Self, ModelError> {
        let first = samples.first().ok_or_else(|| ModelError::InvalidConfig {
            detail: "corpus is empty".to_string(),
        })?;
        let dims = (
            first.spatial.shape()[1],
            first.temporal.shape()[1],
            first.objects.shape()[1],
        );
        for s in samples {
            let got = (
                s.spatial.shape()[1],
                s.temporal.shape()[1],
                s.objects.shape()[1],
            );
            if got != dims {
                return Err(ModelError::FeatureShape {
                    detail: format!(
                        "video {:?} has feature dims {:?}, expected {:?}",
                        s.video_id, got, dims
                    ),
                });
            }
        }
        Ok(Self::desk(dims.0, dims.1, dims.2, vocab))
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let checks = [
            ("hidden", self.hidden),
            ("embed", self.embed),
            ("spatial_dim", self.spatial_dim),
            ("temporal_dim", self.temporal_dim),
            ("noun_dim", self.noun_dim),
            ("max_len", self.max_len),
        ];
        for (name, v) in checks {
            if v == 0 {
                return Err(ModelError::InvalidConfig {
                    detail: format!("{name} must be positive"),
                });
            }
        }
        if self.vocab < 3 {
            return Err(ModelError::InvalidConfig {
                detail: format!(
                    "vocab must hold BOS, EOS, and at least one word, got {}",
                    self.vocab
                ),
            });
        }
        Ok(())
    }
}

/// The removable stages of the architecture.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Block {
    Verb,
    DetSubject,
    AuxVerb,
    DetObject,
    Glfb,
    Vfm,
}

impl Block {
    pub const ALL: [Block; 6] = [
        Block::Verb,
        Block::DetSubject,
        Block::AuxVerb,
        Block::DetObject,
        Block::Glfb,
        Block::Vfm,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Block::Verb => "verb",
            Block::DetSubject => "det-subject",
            Block::AuxVerb => "aux-verb",
            Block::DetObject => "det-object",
            Block::Glfb => "glfb",
            Block::Vfm => "vfm",
        }
    }

    pub fn parse(name: &str) -> Result<Block, ModelError> {
        let key = name.trim().to_lowercase().replace('_', "-");
        Block::ALL
            .into_iter()
            .find(|b| b.name() == key)
            .ok_or_else(|| ModelError::UnknownBlockName {
                name: name.to_string(),
            })
    }

    fn bit(self) -> u8 {
        match self {
            Block::Verb => 1,
            Block::DetSubject => 2,
            Block::AuxVerb => 4,
            Block::DetObject => 8,
            Block::Glfb => 16,
            Block::Vfm => 32,
        }
    }
}

/// Which stages are active. The default wiring keeps everything.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Wiring {
    removed: u8,
}

impl Wiring {
    pub fn full() -> Self {
        Wiring::default()
    }

    pub fn without(blocks: &[Block]) -> Self {
        let mut w = Wiring::full();
        for &b in blocks {
            w.remove(b);
        }
        w
    }

    pub fn remove(&mut self, block: Block) {
        self.removed |= block.bit();
    }

    pub fn has(&self, block: Block) -> bool {
        self.removed & block.bit() == 0
    }

    pub fn is_full(&self) -> bool {
        self.removed == 0
    }

    pub fn removed_blocks(&self) -> Vec<Block> {
        Block::ALL.into_iter().filter(|b| !self.has(*b)).collect()
    }

    pub fn bitmask(&self) -> u8 {
        self.removed
    }

    pub fn from_bitmask(mask: u8) -> Result<Self, ModelError> {
        if mask & !0x3F != 0 {
            return Err(ModelError::CorruptCheckpoint {
                reason: format!("wiring bitmask {mask:#x} has unknown bits"),
            });
        }
        Ok(Wiring { removed: mask })
    }

    /// Human-readable variant label, e.g. `full` or `no-verb+no-glfb`.
    pub fn label(&self) -> String {
        if self.is_full() {
            return "full".to_string();
        }
        self.removed_blocks()
            .iter()
            .map(|b| format!("no-{}", b.name()))
            .collect::<Vec<_>>()
            .join("+")
    }
}

/// Multipliers for the loss components. `anchor` scales the noun-anchor
/// regularizer, which is accounted inside the fusion component.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub caption: f64,
    pub verb: f64,
    pub det_subject: f64,
    pub aux_verb: f64,
    pub det_object: f64,
    pub glfb: f64,
    pub anchor: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            caption: 1.0,
            verb: 1.0,
            det_subject: 1.0,
            aux_verb: 1.0,
            det_object: 1.0,
            glfb: 1.0,
            anchor: 1.0,
        }
    }
}

/// The six loss components and their sum. `total` is always the exact
/// floating-point left-to-right sum of the six components in declaration
/// order — the graph builds the total with the same fold.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub caption: f64,
    pub verb: f64,
    pub det_subject: f64,
    pub aux_verb: f64,
    pub det_object: f64,
    pub glfb: f64,
    pub total: f64,
}

impl LossBreakdown {
    /// Left-to-right fold of the six components; equals `total` exactly.
    pub fn component_sum(&self) -> f64 {
        ((((self.caption + self.verb) + self.det_subject) + self.aux_verb) + self.det_object)
            + self.glfb
    }

    pub(crate) fn accumulate(&mut self, other: &LossBreakdown) {
        self.caption += other.caption;
        self.verb += other.verb;
        self.det_subject += other.det_subject;
        self.aux_verb += other.aux_verb;
        self.det_object += other.det_object;
        self.glfb += other.glfb;
        self.total += other.total;
    }

    pub(crate) fn scale(&mut self, c: f64) {
        self.caption *= c;
        self.verb *= c;
        self.det_subject *= c;
        self.aux_verb *= c;
        self.det_object *= c;
        self.glfb *= c;
        self.total *= c;
    }
}

/// Borrowed view of one video's three feature matrices.
#[derive(Clone, Copy)]
pub struct Features<'a> {
    pub spatial: &'a Tensor,
    pub temporal: &'a Tensor,
    pub objects: &'a Tensor,
}

impl<'a> From<&'a VideoSample> for Features<'a> {
    fn from(s: &'a VideoSample) -> Self {
        Features {
            spatial: &s.spatial,
            temporal: &s.temporal,
            objects: &s.objects,
        }
    }
}

/// Ground truth for one training example: the caption as token ids (no
/// BOS/EOS framing) plus the embedding targets for the encoder blocks.
#[derive(Debug, Clone)]
pub struct CaptionTarget {
    pub token_ids: Vec<usize>,
    pub pos: PosTargets,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Result of one forward pass.
pub struct Forward {
    pub losses: LossBreakdown,
    /// Noun-anchor distance (already folded into `losses.glfb`), reported
    /// separately for diagnostics.
    pub anchor: f64,
    /// Graph root; call `.backward()` to accumulate gradients.
    pub loss: Var,
    /// `[steps + 1, vocab]` next-token logits under teacher forcing.
    pub logits: Tensor,
}

/// One part-of-speech encoder block.
struct PosBlock {
    attns: Vec<Attention>,
    lstm: BiLstm,
    head: Fc,
}

impl PosBlock {
    fn new(
        init: &Init,
        name: &str,
        base_dim: usize,
        conds: &[&str],
        hidden: usize,
        embed: usize,
    ) -> Self {
        let h2 = 2 * hidden;
        let attns = conds
            .iter()
            .map(|cond| {
                Attention::new(init, &format!("{name}.attn_{cond}"), base_dim, h2, hidden)
            })
            .collect();
        PosBlock {
            attns,
            lstm: BiLstm::new(
                init,
                &format!("{name}.lstm"),
                base_dim + h2 * conds.len(),
                hidden,
            ),
            head: Fc::new(init, &format!("{name}.head"), h2, embed),
        }
    }

    /// `base: [t, base_dim]`, `ctx`: pooled base `[base_dim]`, `conds`:
    /// conditioning sequences `[*, 2*hidden]`. Returns the block feature
    /// sequence `[t, 2*hidden]` and the projection `[embed]`.
    fn apply(&self, base: &Var, ctx: &Var, conds: &[&Var]) -> Result<(Var, Var), ModelError> {
        debug_assert_eq!(conds.len(), self.attns.len());
        let t = base.shape()[0];
        let mut parts = vec![base.clone()];
        for (attn, cond) in self.attns.iter().zip(conds) {
            let (_, attended) = attn.apply(ctx, cond)?;
            parts.push(attended.tile_rows(t)?);
        }
        let f = self.lstm.apply(&Var::concat(&parts, 1)?)?;
        let p = self.head.apply(&f.mean_rows()?)?;
        Ok((f, p))
    }

    fn collect_params(&self, out: &mut Vec<(String, Var)>) {
        for a in &self.attns {
            a.collect_params(out);
        }
        self.lstm.collect_params(out);
        self.head.collect_params(out);
    }
}

/// Caption decoder. Each step attends one visual context stream: the fused
/// sequence when the fusion block is wired in, or the raw spatial rows when
/// it is removed — so the degenerate all-blocks-removed wiring leaves the
/// decoder conditioned on the spatial features alone.
struct CaptionBlock {
    embedding: Embedding,
    attn: Attention,
    lstm: LstmCell,
    out: Fc,
}

impl CaptionBlock {
    fn new(init: &Init, cfg: &ModelConfig, ctx_dim: usize) -> Self {
        let input = cfg.embed + ctx_dim + 5 * cfg.embed;
        CaptionBlock {
            embedding: Embedding::new(init, "caption.embedding", cfg.vocab, cfg.embed),
            attn: Attention::new(init, "caption.attn", cfg.embed, ctx_dim, cfg.hidden),
            lstm: LstmCell::new(init, "caption.lstm", input, cfg.hidden),
            out: Fc::new(init, "caption.out", cfg.hidden, cfg.vocab),
        }
    }

    fn collect_params(&self, out: &mut Vec<(String, Var)>) {
        self.embedding.collect_params(out);
        self.attn.collect_params(out);
        self.lstm.collect_params(out);
        self.out.collect_params(out);
    }
}

/// Everything the decoder needs from the encoder side.
struct Encoded {
    projections: [Var; 5], // verb, det_subject, aux_verb, det_object, glfb
    anchor: Var,
    /// Rows the decoder attends: fused sequence, or raw spatial rows when
    /// the fusion block is removed.
    ctx_rows: Var,
    dists: EncodedDists,
}

/// Projection vars paired with names for loss construction.
struct EncodedDists {
    verb: Var,
    det_subject: Var,
    aux_verb: Var,
    det_object: Var,
    glfb: Var,
}

pub struct Model {
    cfg: ModelConfig,
    wiring: Wiring,
    weights: LossWeights,
    nouns_fc: Fc,
    anchor_head: Fc,
    verb: Option<PosBlock>,
    det_subject: Option<PosBlock>,
    aux_verb: Option<PosBlock>,
    det_object: Option<PosBlock>,
    glfb: Option<PosBlock>,
    caption: CaptionBlock,
}

impl Model {
    pub fn new(
        cfg: ModelConfig,
        wiring: Wiring,
        weights: LossWeights,
        seed: u64,
    ) -> Result<Model, ModelError> {
        cfg.validate()?;
        let init = Init::new(seed);
        let h2 = 2 * cfg.hidden;

        let nouns_fc = Fc::new(&init, "nouns.fc", cfg.noun_dim, h2);
        let anchor_head = Fc::new(&init, "nouns.head", h2, cfg.embed);

        let pos = |name: &str, base: usize, conds: &[&str]| {
            PosBlock::new(&init, name, base, conds, cfg.hidden, cfg.embed)
        };
        let verb = wiring
            .has(Block::Verb)
            .then(|| pos("verb", cfg.temporal_dim, &["nouns"]));
        let det_subject = wiring
            .has(Block::DetSubject)
            .then(|| pos("det_subject", cfg.spatial_dim, &["verb", "nouns"]));
        let aux_verb = wiring.has(Block::AuxVerb).then(|| {
            pos(
                "aux_verb",
                cfg.temporal_dim,
                &["verb", "nouns", "det_subject"],
            )
        });
        let det_object = wiring.has(Block::DetObject).then(|| {
            pos(
                "det_object",
                cfg.spatial_dim,
                &["verb", "nouns", "det_subject", "aux_verb"],
            )
        });
        let glfb = wiring.has(Block::Glfb).then(|| {
            pos(
                "glfb",
                cfg.spatial_dim,
                &["verb", "nouns", "det_subject", "aux_verb", "det_object"],
            )
        });

        let ctx_dim = if wiring.has(Block::Glfb) {
            h2
        } else {
            cfg.spatial_dim
        };
        let caption = CaptionBlock::new(&init, &cfg, ctx_dim);

        Ok(Model {
            cfg,
            wiring,
            weights,
            nouns_fc,
            anchor_head,
            verb,
            det_subject,
            aux_verb,
            det_object,
            glfb,
            caption,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn wiring(&self) -> Wiring {
        self.wiring
    }

    pub fn weights(&self) -> LossWeights {
        self.weights
    }

    pub fn set_weights(&mut self, weights: LossWeights) {
        self.weights = weights;
    }

    /// Parameters in fixed registry order (construction order).
    pub fn named_params(&self) -> Vec<(String, Var)> {
        let mut out = Vec::new();
        self.nouns_fc.collect_params(&mut out);
        self.anchor_head.collect_params(&mut out);
        for block in [
            &self.verb,
            &self.det_subject,
            &self.aux_verb,
            &self.det_object,
            &self.glfb,
        ]
        .into_iter()
        .flatten()
        {
            block.collect_params(&mut out);
        }
        self.caption.collect_params(&mut out);
        out
    }

    pub fn param_count(&self) -> usize {
        self.named_params().iter().map(|(_, p)| p.numel()).sum()
    }

    pub fn zero_grads(&self) {
        for (_, p) in self.named_params() {
            p.zero_grad();
        }
    }

    /// Copies of all parameter tensors, aligned with `named_params` order.
    pub fn snapshot(&self) -> Vec<Tensor> {
        self.named_params().into_iter().map(|(_, p)| p.value()).collect()
    }

    pub fn restore(&self, snapshot: &[Tensor]) {
        let params = self.named_params();
        assert_eq!(params.len(), snapshot.len(), "snapshot/model mismatch");
        for ((_, p), saved) in params.iter().zip(snapshot) {
            p.with_value_mut(|t| t.data_mut().copy_from_slice(saved.data()));
        }
    }

    fn check_features(&self, f: &Features) -> Result<usize, ModelError> {
        let err = |detail: String| Err(ModelError::FeatureShape { detail });
        if f.spatial.rank() != 2 || f.temporal.rank() != 2 || f.objects.rank() != 2 {
            return err("all feature tensors must be rank 2".to_string());
        }
        let t = f.spatial.rows();
        if t == 0 || f.objects.rows() == 0 {
            return err("features must have at least one row".to_string());
        }
        if f.temporal.rows() != t {
            return err(format!(
                "spatial has {t} frames but temporal has {}",
                f.temporal.rows()
            ));
        }
        let dims = [
            ("spatial", f.spatial.cols(), self.cfg.spatial_dim),
            ("temporal", f.temporal.cols(), self.cfg.temporal_dim),
            ("objects", f.objects.cols(), self.cfg.noun_dim),
        ];
        for (name, got, want) in dims {
            if got != want {
                return err(format!("{name} feature dim {got} != configured {want}"));
            }
        }
        Ok(t)
    }

    /// Encoder side: builds every block feature and projection. Removed
    /// blocks contribute exact-zero features and projections.
    fn encode(&self, features: &Features) -> Result<Encoded, ModelError> {
        let t = self.check_features(features)?;
        let h2 = 2 * self.cfg.hidden;
        let e = self.cfg.embed;

        let s = Var::leaf(features.spatial.clone());
        let tm = Var::leaf(features.temporal.clone());
        let o = Var::leaf(features.objects.clone());

        let n_f = self.nouns_fc.apply(&o)?.tanh(); // [k, 2h]
        let anchor = self.anchor_head.apply(&n_f.mean_rows()?)?;

        let t_ctx = tm.mean_rows()?;
        let s_ctx = s.mean_rows()?;

        let zero_f = || Var::leaf(Tensor::zeros(vec![t, h2]));
        let zero_p = || Var::leaf(Tensor::zeros(vec![e]));

        let (v_f, v_p) = match &self.verb {
            Some(b) => b.apply(&tm, &t_ctx, &[&n_f])?,
            None => (zero_f(), zero_p()),
        };
        let (ds_f, ds_p) = match &self.det_subject {
            Some(b) => b.apply(&s, &s_ctx, &[&v_f, &n_f])?,
            None => (zero_f(), zero_p()),
        };
        let (a_f, a_p) = match &self.aux_verb {
            Some(b) => b.apply(&tm, &t_ctx, &[&v_f, &n_f, &ds_f])?,
            None => (zero_f(), zero_p()),
        };
        let (do_f, do_p) = match &self.det_object {
            Some(b) => b.apply(&s, &s_ctx, &[&v_f, &n_f, &ds_f, &a_f])?,
            None => (zero_f(), zero_p()),
        };
        let (g_f, g_p) = match &self.glfb {
            Some(b) => b.apply(&s, &s_ctx, &[&v_f, &n_f, &ds_f, &a_f, &do_f])?,
            None => (zero_f(), zero_p()),
        };

        let ctx_rows = if self.wiring.has(Block::Glfb) { g_f } else { s };

        Ok(Encoded {
            dists: EncodedDists {
                verb: v_p.clone(),
                det_subject: ds_p.clone(),
                aux_verb: a_p.clone(),
                det_object: do_p.clone(),
                glfb: g_p.clone(),
            },
            projections: [v_p, ds_p, a_p, do_p, g_p],
            anchor,
            ctx_rows,
        })
    }

    /// One decoder step: previous token id in, next-token logits out.
    fn caption_step(
        &self,
        prev: usize,
        h: &Var,
        c: &Var,
        enc: &Encoded,
    ) -> Result<(Var, Var, Var), ModelError> {
        let emb = self.caption.embedding.lookup(prev)?;
        let (_, attended) = self.caption.attn.apply(&emb, &enc.ctx_rows)?;
        let mut parts = vec![emb, attended];
        parts.extend(enc.projections.iter().cloned());
        let input = Var::concat(&parts, 0)?;
        let (h2, c2) = self.caption.lstm.step(&input, h, c)?;
        let logits = self.caption.out.apply(&h2)?;
        Ok((logits, h2, c2))
    }

    /// Distance between a projection and a target embedding, per the
    /// configured metric.
    fn distance(&self, pred: &Var, target: &[f64], what: &str) -> Result<Var, ModelError> {
        if target.len() != self.cfg.embed {
            return Err(ModelError::FeatureShape {
                detail: format!(
                    "{what} target embedding has dim {}, model uses {}",
                    target.len(),
                    self.cfg.embed
                ),
            });
        }
        let t = Var::leaf(Tensor::new(vec![target.len()], target.to_vec())?);
        match self.cfg.distance {
            DistanceKind::Mse => {
                let diff = pred.sub(&t)?;
                Ok(diff.mul(&diff)?.mean_all()?)
            }
            DistanceKind::Cosine => {
                if target.iter().all(|&v| v == 0.0) {
                    return Err(ModelError::ZeroVector {
                        what: what.to_string(),
                    });
                }
                let dot = pred.dot(&t)?;
                let denom = pred.dot(pred)?.sqrt().mul(&t.dot(&t)?.sqrt())?;
                Ok(Var::scalar(1.0).sub(&dot.div(&denom)?)?)
            }
        }
    }

    /// Full training/eval forward pass for one example.
    ///
    /// In [`Mode::Train`] with the masking stage wired in, `vfm` supplies
    /// the mask configuration and the stream to draw from: the spatial
    /// features receive position masking, the temporal features receive
    /// column-band masking, and a fresh mask is drawn per call. In
    /// [`Mode::Eval`] (or with the stage removed) features pass through
    /// unchanged.
    ///
    /// The component losses are: summed next-token cross-entropy for the
    /// caption; embedding distance to the annotated phrase for each present
    /// block with a present target (absent either way contributes an exact
    /// 0 with no gradient); and the fusion component additionally carries
    /// the noun-anchor distance. The total is the left-to-right sum in
    /// declaration order of [`LossBreakdown`].
    pub fn forward(
        &self,
        features: &Features,
        target: &CaptionTarget,
        mode: Mode,
        vfm: Option<(&MaskConfig, &mut ChaCha8Rng)>,
    ) -> Result<Forward, ModelError> {
        self.check_features(features)?;

        let masked;
        let effective = match vfm {
            Some((cfg, rng)) if mode == Mode::Train && self.wiring.has(Block::Vfm) => {
                let (sp, _) = mask_spatial(features.spatial, cfg.spatial_ratio, rng)?;
                let (tm, _) = mask_temporal_chunk(features.temporal, cfg.temporal_ratio, rng)?;
                masked = (sp, tm);
                Features {
                    spatial: &masked.0,
                    temporal: &masked.1,
                    objects: features.objects,
                }
            }
            _ => *features,
        };

        let enc = self.encode(&effective)?;

        // Teacher-forced decode: inputs BOS ++ ids, targets ids ++ EOS.
        for &id in &target.token_ids {
            if id >= self.cfg.vocab {
                return Err(ModelError::Layer(LayerError::OutOfVocabulary {
                    id,
                    vocab: self.cfg.vocab,
                }));
            }
        }
        let (mut h, mut c) = self.caption.lstm.zero_state();
        let mut logit_rows = Vec::with_capacity(target.token_ids.len() + 1);
        let mut prev = BOS;
        for i in 0..=target.token_ids.len() {
            let (logits, h2, c2) = self.caption_step(prev, &h, &c, &enc)?;
            logit_rows.push(logits);
            h = h2;
            c = c2;
            if i < target.token_ids.len() {
                prev = target.token_ids[i];
            }
        }
        let logits = Var::stack_rows(&logit_rows)?;
        let mut ce_targets = target.token_ids.clone();
        ce_targets.push(EOS);
        let ce = logits.cross_entropy_logits(&ce_targets)?;

        let zero = Var::scalar(0.0);
        let weighted = |present: bool,
                        pred: &Var,
                        comp: &Option<crate::data::PosComponent>,
                        weight: f64,
                        what: &str|
         -> Result<Var, ModelError> {
            match comp {
                Some(c) if present => Ok(self.distance(pred, &c.embedding, what)?.scale(weight)),
                _ => Ok(zero.clone()),
            }
        };

        let pos = &target.pos;
        let l_c = ce.scale(self.weights.caption);
        let l_v = weighted(
            self.wiring.has(Block::Verb),
            &enc.dists.verb,
            &pos.verb,
            self.weights.verb,
            "verb",
        )?;
        let l_ds = weighted(
            self.wiring.has(Block::DetSubject),
            &enc.dists.det_subject,
            &pos.det_subject,
            self.weights.det_subject,
            "det-subject",
        )?;
        let l_a = weighted(
            self.wiring.has(Block::AuxVerb),
            &enc.dists.aux_verb,
            &pos.aux_verb,
            self.weights.aux_verb,
            "aux-verb",
        )?;
        let l_do = weighted(
            self.wiring.has(Block::DetObject),
            &enc.dists.det_object,
            &pos.det_object,
            self.weights.det_object,
            "det-object",
        )?;

        // Fusion component: distance to the full-caption embedding, plus
        // the noun-anchor regularizer (the anchor supervises the backbone
        // and survives fusion removal).
        let g_dist = weighted(
            self.wiring.has(Block::Glfb),
            &enc.dists.glfb,
            &Some(pos.caption.clone()),
            self.weights.glfb,
            "glfb",
        )?;
        let anchor_dist = match &pos.nouns {
            Some(n) => self
                .distance(&enc.anchor, &n.embedding, "nouns")?
                .scale(self.weights.anchor),
            None => zero.clone(),
        };
        let anchor_value = anchor_dist.item()?;
        let l_g = g_dist.add(&anchor_dist)?;

        // Canonical fold; LossBreakdown::component_sum repeats it exactly.
        let total = l_c
            .add(&l_v)?
            .add(&l_ds)?
            .add(&l_a)?
            .add(&l_do)?
            .add(&l_g)?;

        let losses = LossBreakdown {
            caption: l_c.item()?,
            verb: l_v.item()?,
            det_subject: l_ds.item()?,
            aux_verb: l_a.item()?,
            det_object: l_do.item()?,
            glfb: l_g.item()?,
            total: total.item()?,
        };

        Ok(Forward {
            losses,
            anchor: anchor_value,
            loss: total,
            logits: logits.value(),
        })
    }

    /// Greedy caption decode: argmax at each step (ties break toward the
    /// lowest token id), stopping at EOS or after `max_len` tokens. Returns
    /// raw token ids without BOS/EOS framing.
    pub fn decode_greedy(
        &self,
        features: &Features,
        max_len: usize,
    ) -> Result<Vec<usize>, ModelError> {
        let enc = self.encode(features)?;
        let (mut h, mut c) = self.caption.lstm.zero_state();
        let mut prev = BOS;
        let mut out = Vec::new();
        for _ in 0..max_len {
            let (logits, h2, c2) = self.caption_step(prev, &h, &c, &enc)?;
            h = h2;
            c = c2;
            let values = logits.value();
            let mut best = 0usize;
            for (i, &v) in values.data().iter().enumerate() {
                if v > values.data()[best] {
                    best = i;
                }
            }
            if best == EOS {
                break;
            }
            out.push(best);
            prev = best;
        }
        Ok(out)
    }
}
