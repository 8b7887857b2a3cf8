//! Ablation harness: trains architecture variants side by side.
//!
//! For each seed a fresh training corpus and a disjoint evaluation corpus
//! are synthesized from the same grammar; every wiring variant is then
//! initialized (shared parameters identically — initialization is keyed
//! by parameter name), trained with the same schedule, and scored on the
//! evaluation corpus. Comparing a variant against the full wiring across
//! seeds shows whether a block earns its place.

use serde::{Deserialize, Serialize};

use crate::data::embed::PseudoEmbedder;
use crate::data::{generate_corpus, CorpusParams, SceneGrammar};
use crate::model::{LossWeights, Model, ModelConfig, Wiring};
use crate::rng::{fnv1a, mix};
use crate::vocab::Vocabulary;

use super::{caption_targets, evaluate, train, EvalReport, TrainConfig, TrainError};

/// Sizing for one ablation study. `corpus.seed` and `train.seed` are
/// overridden per run seed.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AblationConfig {
    pub seeds: Vec<u64>,
    pub corpus: CorpusParams,
    /// Videos in the per-seed evaluation corpus (disjoint from training).
    pub eval_videos: usize,
    pub hidden: usize,
    pub embed: usize,
    pub max_len: usize,
    pub train: TrainConfig,
}

/// One trained variant's scores under one seed.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AblationCell {
    pub wiring: String,
    pub best_val: f64,
    pub eval: EvalReport,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AblationRow {
    pub seed: u64,
    pub cells: Vec<AblationCell>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AblationReport {
    pub wirings: Vec<String>,
    pub rows: Vec<AblationRow>,
}

impl AblationReport {
    fn cell<'a>(&self, row: &'a AblationRow, wiring: &str) -> Option<&'a AblationCell> {
        row.cells.iter().find(|c| c.wiring == wiring)
    }

    /// Number of seeds where `baseline` scored at least as much CIDEr as
    /// `variant`.
    pub fn cider_wins_or_ties(&self, baseline: &str, variant: &str) -> usize {
        self.rows
            .iter()
            .filter(|row| {
                match (self.cell(row, baseline), self.cell(row, variant)) {
                    (Some(b), Some(v)) => b.eval.cider >= v.eval.cider,
                    _ => false,
                }
            })
            .count()
    }

    /// Mean CIDEr of one wiring across seeds.
    pub fn mean_cider(&self, wiring: &str) -> Option<f64> {
        let scores: Vec<f64> = self
            .rows
            .iter()
            .filter_map(|row| self.cell(row, wiring).map(|c| c.eval.cider))
            .collect();
        if scores.is_empty() {
            return None;
        }
        Some(scores.iter().sum::<f64>() / scores.len() as f64)
    }
}

/// Trains every wiring under every seed and scores each on its seed's
/// held-out corpus.
pub fn run_ablation(
    grammar: &SceneGrammar,
    wirings: &[Wiring],
    cfg: &AblationConfig,
) -> Result<AblationReport, TrainError> {
    if cfg.seeds.is_empty() || wirings.is_empty() {
        return Err(TrainError::InvalidConfig {
            detail: "ablation needs at least one seed and one wiring".to_string(),
        });
    }
    if cfg.eval_videos == 0 {
        return Err(TrainError::InvalidConfig {
            detail: "eval_videos must be positive".to_string(),
        });
    }

    let mut rows = Vec::with_capacity(cfg.seeds.len());
    for &seed in &cfg.seeds {
        let train_params = CorpusParams {
            seed,
            ..cfg.corpus
        };
        let eval_params = CorpusParams {
            seed: mix(seed, fnv1a(b"ablation-eval")),
            n_videos: cfg.eval_videos,
            ..cfg.corpus
        };
        let train_samples = generate_corpus(grammar, &train_params)?;
        let eval_samples = generate_corpus(grammar, &eval_params)?;

        let vocab = Vocabulary::build(
            train_samples
                .iter()
                .flat_map(|s| s.references.iter().map(|r| r.tokens.as_slice())),
        );
        let mut model_cfg = ModelConfig::for_corpus(&train_samples, vocab.len())?;
        model_cfg.hidden = cfg.hidden;
        model_cfg.embed = cfg.embed;
        model_cfg.max_len = cfg.max_len;

        let embedder = PseudoEmbedder::new(model_cfg.embed, seed);
        let targets = caption_targets(&train_samples, &vocab, &embedder)?;
        let train_cfg = TrainConfig {
            seed,
            ..cfg.train
        };

        let mut cells = Vec::with_capacity(wirings.len());
        for &wiring in wirings {
            let model = Model::new(model_cfg, wiring, LossWeights::default(), seed)?;
            let run = train(&model, &train_samples, &targets, &train_cfg)?;
            let (eval, _) = evaluate(&model, &eval_samples, &vocab)?;
            cells.push(AblationCell {
                wiring: wiring.label(),
                best_val: run.best_val,
                eval,
            });
        }
        rows.push(AblationRow { seed, cells });
    }

    Ok(AblationReport {
        wirings: wirings.iter().map(|w| w.label()).collect(),
        rows,
    })
}
