//! Training loop, optimizer, evaluation, and run reports.
//!
//! One optimization step per mini-batch: gradients accumulate over the
//! batch, are averaged, clipped to a global norm, and fed to Adam. Every
//! stochastic choice (epoch shuffling, reference sampling, feature masks)
//! draws from its own seeded stream, so a run is a pure function of its
//! inputs: same corpus, same config, same floats out.

pub mod ablate;

use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Error as GraphError, Tensor, Var};
use crate::data::embed::Embedder;
use crate::data::{DataError, VideoSample};
use crate::masking::MaskConfig;
use crate::metrics::lm::{grammatical_score, NGramLm};
use crate::metrics::{bleu4, cider, meteor_lite, rouge_l, EvalCorpus, EvalEntry, MetricsError};
use crate::model::{
    CaptionTarget, Features, LossBreakdown, LossWeights, Mode, Model, ModelConfig, ModelError,
};
use crate::rng::{fnv1a, purpose_stream, Purpose};
use crate::vocab::{Vocabulary, VocabError};

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error(transparent)]
    Model(#[from] ModelError),

    #[error(transparent)]
    Graph(#[from] GraphError),

    #[error(transparent)]
    Data(#[from] DataError),

    #[error(transparent)]
    Metrics(#[from] MetricsError),

    #[error(transparent)]
    Vocab(#[from] VocabError),

    #[error("loss became non-finite at epoch {epoch} on video {video_id:?}; lower the learning rate")]
    NonFiniteLoss { epoch: usize, video_id: String },

    #[error("invalid training config: {detail}")]
    InvalidConfig { detail: String },

    #[error("corpus and targets disagree: {detail}")]
    TargetMismatch { detail: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("failed to serialize report: {0}")]
    Report(#[from] serde_json::Error),
}

/// Optimization knobs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Gradient global-norm ceiling, applied to the batch-mean gradient.
    pub clip_norm: f64,
    pub seed: u64,
    pub masks: MaskConfig,
    /// Every n-th video (by id hash) is held out for validation; 0 holds
    /// out nothing and validates on the training set itself.
    pub holdout_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            batch_size: 16,
            epochs: 300,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            clip_norm: 5.0,
            seed: 42,
            masks: MaskConfig::default(),
            holdout_every: 10,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let err = |detail: String| Err(TrainError::InvalidConfig { detail });
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return err(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return err("batch_size and epochs must be positive".to_string());
        }
        for (name, beta) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&beta) {
                return err(format!("{name} must lie in [0, 1), got {beta}"));
            }
        }
        if !(self.epsilon.is_finite() && self.epsilon > 0.0) {
            return err(format!("epsilon must be positive, got {}", self.epsilon));
        }
        if !(self.clip_norm.is_finite() && self.clip_norm > 0.0) {
            return err(format!("clip_norm must be positive, got {}", self.clip_norm));
        }
        Ok(())
    }
}

/// Adam with bias correction. Moment buffers align with the parameter list
/// passed at construction; `step` must receive gradients in the same order.
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
    t: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Adam {
    pub fn new(params: &[(String, Var)], cfg: &TrainConfig) -> Adam {
        let zeros: Vec<Tensor> = params.iter().map(|(_, p)| Tensor::zeros(p.shape())).collect();
        Adam {
            lr: cfg.learning_rate,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            epsilon: cfg.epsilon,
            t: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    /// One update from pre-averaged, pre-clipped gradients. A parameter
    /// with a zero gradient still decays its moments.
    pub fn step(&mut self, params: &[(String, Var)], grads: &[Tensor]) {
        assert_eq!(params.len(), grads.len(), "gradient list out of step");
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (i, ((_, p), g)) in params.iter().zip(grads).enumerate() {
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            p.with_value_mut(|value| {
                let x = value.data_mut();
                for (j, &gj) in g.data().iter().enumerate() {
                    m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * gj;
                    v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * gj * gj;
                    let m_hat = m[j] / bc1;
                    let v_hat = v[j] / bc2;
                    x[j] -= self.lr * m_hat / (v_hat.sqrt() + self.epsilon);
                }
            });
        }
    }
}

/// Scales every gradient so their joint L2 norm is at most `max_norm`.
/// Returns the pre-clip norm.
pub fn clip_global_norm(grads: &mut [Tensor], max_norm: f64) -> f64 {
    let sq: f64 = grads
        .iter()
        .map(|g| g.data().iter().map(|v| v * v).sum::<f64>())
        .sum();
    let norm = sq.sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        for g in grads {
            for v in g.data_mut() {
                *v *= s;
            }
        }
    }
    norm
}

/// Splits video indices into (train, validation) by id hash: every
/// `every`-th hash bucket is held out. `every == 0` disables the split —
/// both sides get every video. If hashing leaves either side empty, the
/// other side is mirrored so both remain usable.
pub fn holdout_split(samples: &[VideoSample], every: usize) -> (Vec<usize>, Vec<usize>) {
    let all: Vec<usize> = (0..samples.len()).collect();
    if every == 0 {
        return (all.clone(), all);
    }
    let mut train = Vec::new();
    let mut val = Vec::new();
    for (i, s) in samples.iter().enumerate() {
        if fnv1a(s.video_id.as_bytes()) % every as u64 == 0 {
            val.push(i);
        } else {
            train.push(i);
        }
    }
    if train.is_empty() {
        train = val.clone();
    }
    if val.is_empty() {
        val = train.clone();
    }
    (train, val)
}

/// Encodes every reference caption of every video into decoder targets.
/// Returned as `[video][reference]`, aligned with `samples`.
pub fn caption_targets(
    samples: &[VideoSample],
    vocab: &Vocabulary,
    embedder: &dyn Embedder,
) -> Result<Vec<Vec<CaptionTarget>>, TrainError> {
    let mut out = Vec::with_capacity(samples.len());
    for s in samples {
        let mut per_video = Vec::with_capacity(s.references.len());
        for r in &s.references {
            per_video.push(CaptionTarget {
                token_ids: vocab.encode(&r.tokens)?,
                pos: crate::data::extract_pos_targets(r, embedder)?,
            });
        }
        if per_video.is_empty() {
            return Err(TrainError::TargetMismatch {
                detail: format!("video {:?} has no reference captions", s.video_id),
            });
        }
        out.push(per_video);
    }
    Ok(out)
}

/// Mean losses over one epoch of training plus the validation loss that
/// followed it.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train: LossBreakdown,
    pub anchor: f64,
    pub val_total: f64,
}

/// Outcome of a training run. The model is left holding the parameters of
/// the best validation epoch.
pub struct TrainRun {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val: f64,
    pub train_videos: Vec<String>,
    pub holdout_videos: Vec<String>,
    pub wall_secs: f64,
}

/// Trains `model` in place. `targets` must align with `samples` (one entry
/// per video, one target per reference); build it with [`caption_targets`].
///
/// Per epoch: the training videos are reshuffled, one reference per video
/// is sampled, and each mini-batch takes one Adam step on the batch-mean,
/// norm-clipped gradient. Feature masks are redrawn per example. After
/// each epoch the full validation split is scored in eval mode (no
/// masking, all references); the best-scoring parameters are restored at
/// the end.
pub fn train(
    model: &Model,
    samples: &[VideoSample],
    targets: &[Vec<CaptionTarget>],
    cfg: &TrainConfig,
) -> Result<TrainRun, TrainError> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(TrainError::TargetMismatch {
            detail: "corpus is empty".to_string(),
        });
    }
    if targets.len() != samples.len() {
        return Err(TrainError::TargetMismatch {
            detail: format!("{} videos but {} target lists", samples.len(), targets.len()),
        });
    }
    for (s, t) in samples.iter().zip(targets) {
        if s.references.len() != t.len() {
            return Err(TrainError::TargetMismatch {
                detail: format!(
                    "video {:?} has {} references but {} targets",
                    s.video_id,
                    s.references.len(),
                    t.len()
                ),
            });
        }
    }

    let (train_idx, val_idx) = holdout_split(samples, cfg.holdout_every);
    let mut shuffle_rng = purpose_stream(cfg.seed, Purpose::Shuffle);
    let mut sample_rng = purpose_stream(cfg.seed, Purpose::Sample);
    let mut mask_rng = purpose_stream(cfg.seed, Purpose::Mask);

    let params = model.named_params();
    let mut optimizer = Adam::new(&params, cfg);
    let start = Instant::now();

    let mut records = Vec::with_capacity(cfg.epochs);
    let mut best_epoch = 0usize;
    let mut best_val = f64::INFINITY;
    let mut best_params: Option<Vec<Tensor>> = None;

    for epoch in 1..=cfg.epochs {
        let mut order = train_idx.clone();
        order.shuffle(&mut shuffle_rng);

        let mut train_sum = LossBreakdown::default();
        let mut anchor_sum = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            model.zero_grads();
            for &vi in batch {
                let refs = &targets[vi];
                let ri = if refs.len() == 1 {
                    0
                } else {
                    sample_rng.gen_range(0..refs.len())
                };
                let fwd = model.forward(
                    &Features::from(&samples[vi]),
                    &refs[ri],
                    Mode::Train,
                    Some((&cfg.masks, &mut mask_rng)),
                )?;
                if !fwd.losses.total.is_finite() {
                    return Err(TrainError::NonFiniteLoss {
                        epoch,
                        video_id: samples[vi].video_id.clone(),
                    });
                }
                train_sum.accumulate(&fwd.losses);
                anchor_sum += fwd.anchor;
                fwd.loss.backward()?;
            }

            let scale = 1.0 / batch.len() as f64;
            let mut grads: Vec<Tensor> = params
                .iter()
                .map(|(_, p)| match p.grad() {
                    Some(mut g) => {
                        for v in g.data_mut() {
                            *v *= scale;
                        }
                        g
                    }
                    None => Tensor::zeros(p.shape()),
                })
                .collect();
            clip_global_norm(&mut grads, cfg.clip_norm);
            optimizer.step(&params, &grads);
        }
        model.zero_grads();
        let n = order.len() as f64;
        train_sum.scale(1.0 / n);
        let anchor = anchor_sum / n;

        let mut val_total = 0.0;
        let mut val_n = 0usize;
        for &vi in &val_idx {
            for target in &targets[vi] {
                let fwd =
                    model.forward(&Features::from(&samples[vi]), target, Mode::Eval, None)?;
                if !fwd.losses.total.is_finite() {
                    return Err(TrainError::NonFiniteLoss {
                        epoch,
                        video_id: samples[vi].video_id.clone(),
                    });
                }
                val_total += fwd.losses.total;
                val_n += 1;
            }
        }
        let val_total = val_total / val_n as f64;
        if val_total < best_val {
            best_val = val_total;
            best_epoch = epoch;
            best_params = Some(model.snapshot());
        }

        records.push(EpochRecord {
            epoch,
            train: train_sum,
            anchor,
            val_total,
        });
    }

    if let Some(best) = &best_params {
        model.restore(best);
    }

    let id = |i: &usize| samples[*i].video_id.clone();
    Ok(TrainRun {
        epochs: records,
        best_epoch,
        best_val,
        train_videos: train_idx.iter().map(id).collect(),
        holdout_videos: val_idx.iter().map(id).collect(),
        wall_secs: start.elapsed().as_secs_f64(),
    })
}

/// Caption quality of greedy decodes against the reference captions.
/// `gs_perplexity` is the mean per-token perplexity of the decoded
/// captions under an add-k bigram model fitted to the references (lower
/// is more fluent); it is `None` when every decode is empty.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct EvalReport {
    pub n_videos: usize,
    pub bleu4: f64,
    pub rouge_l: f64,
    pub cider: f64,
    pub meteor: f64,
    pub gs_perplexity: Option<f64>,
}

/// Smoothing for the fluency bigram model.
const GS_ADD_K: f64 = 1.0;

/// Scores candidate/reference entries. The fluency bigram model is fitted
/// to the references of the entries themselves; empty candidates score
/// zero on the overlap metrics and are excluded from fluency.
pub fn score_entries(entries: Vec<EvalEntry>) -> Result<EvalReport, TrainError> {
    let corpus = EvalCorpus::new(entries)?;
    let references: Vec<Vec<String>> = corpus
        .entries()
        .iter()
        .flat_map(|e| e.references.iter().cloned())
        .collect();
    let lm = NGramLm::train(&references, 2, GS_ADD_K)?;
    let decoded: Vec<Vec<String>> = corpus
        .entries()
        .iter()
        .map(|e| e.candidate.clone())
        .filter(|c| !c.is_empty())
        .collect();
    let gs_perplexity = if decoded.is_empty() {
        None
    } else {
        Some(grammatical_score(&decoded, &lm)?)
    };

    Ok(EvalReport {
        n_videos: corpus.len(),
        bleu4: bleu4(&corpus),
        rouge_l: rouge_l(&corpus),
        cider: cider(&corpus),
        meteor: meteor_lite(&corpus),
        gs_perplexity,
    })
}

/// Greedy-decodes every video and scores the result. Also returns the
/// decoded captions as `(video_id, tokens)` pairs, in corpus order.
pub fn evaluate(
    model: &Model,
    samples: &[VideoSample],
    vocab: &Vocabulary,
) -> Result<(EvalReport, Vec<(String, Vec<String>)>), TrainError> {
    let mut candidates = Vec::with_capacity(samples.len());
    let mut entries = Vec::with_capacity(samples.len());
    for s in samples {
        let ids = model.decode_greedy(&Features::from(s), model.config().max_len)?;
        let tokens = vocab.decode(&ids);
        candidates.push((s.video_id.clone(), tokens.clone()));
        entries.push(EvalEntry {
            video_id: s.video_id.clone(),
            candidate: tokens,
            references: s.references.iter().map(|r| r.tokens.clone()).collect(),
        });
    }
    let report = score_entries(entries)?;
    Ok((report, candidates))
}

/// Everything worth keeping from a training run. Serializes
/// deterministically: equal runs produce byte-identical reports (wall
/// time is deliberately excluded).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunReport {
    pub model: ModelConfig,
    pub wiring: String,
    pub weights: LossWeights,
    pub train: TrainConfig,
    pub best_epoch: usize,
    pub best_val: f64,
    pub train_videos: Vec<String>,
    pub holdout_videos: Vec<String>,
    pub epochs: Vec<EpochRecord>,
    pub eval: EvalReport,
}

pub fn write_report(path: &Path, report: &RunReport) -> Result<(), TrainError> {
    let mut text = serde_json::to_string_pretty(report)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

pub fn read_report(path: &Path) -> Result<RunReport, TrainError> {
    Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::embed::PseudoEmbedder;
    use crate::data::{generate_corpus, CorpusParams, SceneGrammar};
    use crate::model::Wiring;

    fn tiny_corpus(n: usize, seed: u64) -> Vec<VideoSample> {
        let grammar = SceneGrammar::desk_default(6, 0.02, 7);
        generate_corpus(
            &grammar,
            &CorpusParams {
                n_videos: n,
                refs_per_video: 2,
                frames: 3,
                objects_per_video: 2,
                seed,
            },
        )
        .unwrap()
    }

    fn tiny_setup(n: usize) -> (Model, Vec<VideoSample>, Vocabulary, Vec<Vec<CaptionTarget>>) {
        let samples = tiny_corpus(n, 31);
        let vocab = Vocabulary::build(
            samples
                .iter()
                .flat_map(|s| s.references.iter().map(|r| r.tokens.as_slice())),
        );
        let mut cfg = ModelConfig::for_corpus(&samples, vocab.len()).unwrap();
        cfg.hidden = 6;
        cfg.embed = 8;
        cfg.max_len = 8;
        let model = Model::new(cfg, Wiring::full(), LossWeights::default(), 3).unwrap();
        let embedder = PseudoEmbedder::new(cfg.embed, 11);
        let targets = caption_targets(&samples, &vocab, &embedder).unwrap();
        (model, samples, vocab, targets)
    }

    fn quick_train_cfg() -> TrainConfig {
        TrainConfig {
            learning_rate: 3e-3,
            batch_size: 4,
            epochs: 12,
            holdout_every: 0,
            masks: MaskConfig::disabled(),
            ..TrainConfig::default()
        }
    }

    #[test]
    fn adam_constant_gradient_steps_by_learning_rate() {
        // With a constant gradient, bias-corrected Adam moves each step by
        // almost exactly the learning rate, independent of gradient scale.
        let p = Var::parameter(Tensor::new(vec![1], vec![1.0]).unwrap());
        let params = vec![("p".to_string(), p.clone())];
        let cfg = TrainConfig {
            learning_rate: 0.1,
            ..TrainConfig::default()
        };
        let mut adam = Adam::new(&params, &cfg);
        let g = Tensor::new(vec![1], vec![2.0]).unwrap();
        adam.step(&params, std::slice::from_ref(&g));
        assert!((p.value().data()[0] - 0.9).abs() < 1e-7);
        adam.step(&params, std::slice::from_ref(&g));
        assert!((p.value().data()[0] - 0.8).abs() < 1e-6);
    }

    #[test]
    fn adam_leaves_zero_gradient_params_in_place_on_first_steps() {
        let p = Var::parameter(Tensor::new(vec![2], vec![1.5, -0.5]).unwrap());
        let params = vec![("p".to_string(), p.clone())];
        let mut adam = Adam::new(&params, &TrainConfig::default());
        let g = Tensor::zeros(vec![2]);
        adam.step(&params, std::slice::from_ref(&g));
        assert_eq!(p.value().data(), &[1.5, -0.5]);
    }

    #[test]
    fn clip_rescales_only_above_the_ceiling() {
        // Norm of [3, 4] is 5; ceiling 2.5 halves it.
        let mut grads = vec![Tensor::new(vec![2], vec![3.0, 4.0]).unwrap()];
        let norm = clip_global_norm(&mut grads, 2.5);
        assert!((norm - 5.0).abs() < 1e-12);
        assert_eq!(grads[0].data(), &[1.5, 2.0]);

        let mut grads = vec![Tensor::new(vec![2], vec![0.3, 0.4]).unwrap()];
        clip_global_norm(&mut grads, 2.5);
        assert_eq!(grads[0].data(), &[0.3, 0.4]);
    }

    #[test]
    fn holdout_split_is_deterministic_and_covers_everything() {
        let samples = tiny_corpus(20, 5);
        let (train, val) = holdout_split(&samples, 4);
        let (train2, val2) = holdout_split(&samples, 4);
        assert_eq!(train, train2);
        assert_eq!(val, val2);
        assert!(!train.is_empty() && !val.is_empty());
        let mut union = [train.clone(), val.clone()].concat();
        union.sort();
        union.dedup();
        assert_eq!(union, (0..20).collect::<Vec<_>>());

        // Disabled split mirrors the corpus on both sides.
        let (train, val) = holdout_split(&samples, 0);
        assert_eq!(train, val);
        assert_eq!(train.len(), 20);

        // Degenerate hash bucket: everything lands in validation, so the
        // training side mirrors it instead of starving.
        let (train, val) = holdout_split(&samples, 1);
        assert_eq!(train, val);
    }

    #[test]
    fn training_reduces_loss_and_restores_best_epoch() {
        let (model, samples, _, targets) = tiny_setup(4);
        let run = train(&model, &samples, &targets, &quick_train_cfg()).unwrap();
        assert_eq!(run.epochs.len(), 12);
        let first = run.epochs.first().unwrap();
        let last = run.epochs.last().unwrap();
        assert!(
            last.train.total < first.train.total,
            "loss did not improve: {} -> {}",
            first.train.total,
            last.train.total
        );
        assert!(run.best_val <= run.epochs.iter().map(|e| e.val_total).fold(f64::INFINITY, f64::min) + 1e-12);
        assert_eq!(run.train_videos.len(), 4);

        // The model must hold exactly the best epoch's parameters: its
        // validation loss must reproduce best_val.
        let mut total = 0.0;
        let mut n = 0;
        for (s, ts) in samples.iter().zip(&targets) {
            for t in ts {
                total += model
                    .forward(&Features::from(s), t, Mode::Eval, None)
                    .unwrap()
                    .losses
                    .total;
                n += 1;
            }
        }
        assert!((total / n as f64 - run.best_val).abs() < 1e-9);
    }

    #[test]
    fn training_is_deterministic() {
        let (model_a, samples, _, targets) = tiny_setup(4);
        let cfg = TrainConfig {
            epochs: 5,
            masks: MaskConfig::default(),
            ..quick_train_cfg()
        };
        let run_a = train(&model_a, &samples, &targets, &cfg).unwrap();

        let (model_b, _, _, _) = tiny_setup(4);
        let run_b = train(&model_b, &samples, &targets, &cfg).unwrap();

        for (a, b) in run_a.epochs.iter().zip(&run_b.epochs) {
            assert_eq!(a.train.total.to_bits(), b.train.total.to_bits());
            assert_eq!(a.val_total.to_bits(), b.val_total.to_bits());
        }
        for ((_, pa), (_, pb)) in model_a.named_params().iter().zip(&model_b.named_params()) {
            for (x, y) in pa.value().data().iter().zip(pb.value().data()) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }

    #[test]
    fn exploding_learning_rate_aborts_with_a_clear_error() {
        let (model, samples, _, targets) = tiny_setup(3);
        let cfg = TrainConfig {
            learning_rate: 1e200,
            epochs: 4,
            ..quick_train_cfg()
        };
        assert!(matches!(
            train(&model, &samples, &targets, &cfg),
            Err(TrainError::NonFiniteLoss { .. })
        ));
    }

    #[test]
    fn evaluate_scores_decodes_against_references() {
        let (model, samples, vocab, targets) = tiny_setup(4);
        let cfg = TrainConfig {
            epochs: 25,
            ..quick_train_cfg()
        };
        train(&model, &samples, &targets, &cfg).unwrap();
        let (report, candidates) = evaluate(&model, &samples, &vocab).unwrap();
        assert_eq!(report.n_videos, 4);
        assert_eq!(candidates.len(), 4);
        for metric in [report.bleu4, report.rouge_l, report.meteor] {
            assert!((0.0..=1.0).contains(&metric), "metric {metric} out of range");
        }
        assert!((0.0..=10.0).contains(&report.cider));
        if let Some(ppl) = report.gs_perplexity {
            assert!(ppl >= 1.0);
        }
        // Decoded tokens never include the sequence markers.
        for (_, tokens) in &candidates {
            assert!(tokens.iter().all(|t| t != "<bos>" && t != "<eos>"));
        }
    }

    #[test]
    fn reports_round_trip_and_serialize_deterministically() {
        let (model, samples, vocab, targets) = tiny_setup(3);
        let cfg = quick_train_cfg();
        let run = train(&model, &samples, &targets, &cfg).unwrap();
        let (eval, _) = evaluate(&model, &samples, &vocab).unwrap();
        let report = RunReport {
            model: *model.config(),
            wiring: model.wiring().label(),
            weights: model.weights(),
            train: cfg,
            best_epoch: run.best_epoch,
            best_val: run.best_val,
            train_videos: run.train_videos.clone(),
            holdout_videos: run.holdout_videos.clone(),
            epochs: run.epochs.clone(),
            eval,
        };
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("a.json");
        let p2 = dir.path().join("b.json");
        write_report(&p1, &report).unwrap();
        write_report(&p2, &report).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
        let back = read_report(&p1).unwrap();
        assert_eq!(back.best_epoch, report.best_epoch);
        assert_eq!(back.epochs.len(), report.epochs.len());
        assert_eq!(back.eval.cider.to_bits(), report.eval.cider.to_bits());
    }

    #[test]
    fn config_validation_rejects_degenerate_values() {
        let bad = [
            TrainConfig { learning_rate: 0.0, ..TrainConfig::default() },
            TrainConfig { batch_size: 0, ..TrainConfig::default() },
            TrainConfig { beta1: 1.0, ..TrainConfig::default() },
            TrainConfig { clip_norm: f64::NAN, ..TrainConfig::default() },
        ];
        for cfg in bad {
            assert!(matches!(
                cfg.validate(),
                Err(TrainError::InvalidConfig { .. })
            ));
        }
    }
}
