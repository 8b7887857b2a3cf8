//! Language models and the grammar score.
//!
//! The grammar score of a caption set is the mean per-token perplexity
//! under a language model: `exp(-(1/N) Σ ln p(w_i | w_<i))`, averaged over
//! captions. Lower is better. The model is pluggable; the built-in choices
//! are an add-k smoothed n-gram model trained on reference captions and a
//! uniform model (useful as a calibration point — its perplexity is exactly
//! the vocabulary size for any caption).

use std::collections::HashMap;

use super::MetricsError;

pub const UNK_TOKEN: &str = "<unk>";

pub trait LanguageModel {
    /// Number of token types the model normalizes over.
    fn vocab_size(&self) -> usize;

    /// `ln p(token | context)` where `context` is every preceding token of
    /// the caption, in order. Implementations handle unknown tokens.
    fn log_prob(&self, context: &[String], token: &str) -> f64;
}

/// Uniform distribution over a fixed vocabulary size: every token costs
/// `ln v`, so caption perplexity is exactly `v`.
pub struct UniformLm {
    pub vocab: usize,
}

impl LanguageModel for UniformLm {
    fn vocab_size(&self) -> usize {
        self.vocab
    }

    fn log_prob(&self, _context: &[String], _token: &str) -> f64 {
        -(self.vocab as f64).ln()
    }
}

/// Add-k smoothed n-gram model with begin-of-sentence padding and an
/// unknown-token class.
///
/// `p(w | ctx) = (count(ctx, w) + k) / (count(ctx) + k * V)` where `V`
/// counts the training vocabulary plus the unknown class; probabilities
/// per context sum to exactly 1 over that vocabulary.
pub struct NGramLm {
    order: usize,
    k: f64,
    vocab: Vec<String>,
    index: HashMap<String, usize>,
    /// count(ctx, w) keyed by the id sequence ctx ++ [w].
    ngram_counts: HashMap<Vec<usize>, f64>,
    /// count(ctx) = Σ_w count(ctx, w).
    context_counts: HashMap<Vec<usize>, f64>,
}

/// Internal id of the begin-of-sentence padding symbol. It sits outside the
/// prediction vocabulary: it can appear in contexts but is never scored.
const BOS_ID: usize = usize::MAX;

impl NGramLm {
    pub fn train(sentences: &[Vec<String>], order: usize, k: f64) -> Result<Self, MetricsError> {
        if order == 0 {
            return Err(MetricsError::InvalidOrder { order });
        }
        if !(k > 0.0) {
            return Err(MetricsError::InvalidSmoothing { k });
        }
        if sentences.is_empty() || sentences.iter().all(|s| s.is_empty()) {
            return Err(MetricsError::EmptyCorpus);
        }

        let mut vocab: Vec<String> = sentences
            .iter()
            .flatten()
            .map(|t| t.to_lowercase())
            .collect();
        vocab.sort();
        vocab.dedup();
        vocab.push(UNK_TOKEN.to_string());
        let index: HashMap<String, usize> = vocab
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();

        let mut ngram_counts: HashMap<Vec<usize>, f64> = HashMap::new();
        let mut context_counts: HashMap<Vec<usize>, f64> = HashMap::new();
        for sentence in sentences {
            let ids: Vec<usize> = sentence
                .iter()
                .map(|t| index[&t.to_lowercase()])
                .collect();
            for (i, &w) in ids.iter().enumerate() {
                let mut key = Vec::with_capacity(order);
                // Left-pad with BOS to a fixed context width of order - 1.
                for j in 0..order - 1 {
                    let pos = i as isize - (order - 1 - j) as isize;
                    key.push(if pos < 0 { BOS_ID } else { ids[pos as usize] });
                }
                *context_counts.entry(key.clone()).or_insert(0.0) += 1.0;
                key.push(w);
                *ngram_counts.entry(key).or_insert(0.0) += 1.0;
            }
        }

        Ok(NGramLm {
            order,
            k,
            vocab,
            index,
            ngram_counts,
            context_counts,
        })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    fn id_of(&self, token: &str) -> usize {
        self.index
            .get(&token.to_lowercase())
            .copied()
            .unwrap_or_else(|| self.index[UNK_TOKEN])
    }

    fn context_key(&self, context: &[String]) -> Vec<usize> {
        let width = self.order - 1;
        let mut key = Vec::with_capacity(width);
        for j in 0..width {
            let pos = context.len() as isize - (width - j) as isize;
            key.push(if pos < 0 {
                BOS_ID
            } else {
                self.id_of(&context[pos as usize])
            });
        }
        key
    }

    /// Tokens the model can score, including the unknown class.
    pub fn vocab(&self) -> &[String] {
        &self.vocab
    }
}

impl LanguageModel for NGramLm {
    fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    fn log_prob(&self, context: &[String], token: &str) -> f64 {
        let mut key = self.context_key(context);
        let ctx_count = self.context_counts.get(&key).copied().unwrap_or(0.0);
        key.push(self.id_of(token));
        let joint = self.ngram_counts.get(&key).copied().unwrap_or(0.0);
        let v = self.vocab.len() as f64;
        ((joint + self.k) / (ctx_count + self.k * v)).ln()
    }
}

/// Mean per-token perplexity of `captions` under `lm`. Errors on an empty
/// caption set or any empty caption.
pub fn grammatical_score(
    captions: &[Vec<String>],
    lm: &dyn LanguageModel,
) -> Result<f64, MetricsError> {
    if captions.is_empty() {
        return Err(MetricsError::EmptyCorpus);
    }
    let mut total = 0.0;
    for caption in captions {
        if caption.is_empty() {
            return Err(MetricsError::EmptyCaption);
        }
        let mut log_sum = 0.0;
        for i in 0..caption.len() {
            log_sum += lm.log_prob(&caption[..i], &caption[i]);
        }
        total += (-log_sum / caption.len() as f64).exp();
    }
    Ok(total / captions.len() as f64)
}
