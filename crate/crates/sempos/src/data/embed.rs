//! Text-to-vector embedders for supervision targets.
//!
//! Training supervises each encoder block against an embedding of its
//! ground-truth phrase. Two sources are provided: a deterministic
//! hash-seeded pseudo-embedder (self-contained, no external files) and a
//! lookup table loaded from a tab-separated file for precomputed vectors.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use super::DataError;
use crate::rng::{named_stream, standard_normal};

pub trait Embedder {
    fn dim(&self) -> usize;

    /// Embeds a phrase (single word or several). Case-insensitive; leading
    /// and trailing whitespace is ignored. Empty text is an error.
    fn embed(&self, text: &str) -> Result<Vec<f64>, DataError>;
}

/// Deterministic unit-norm embedding: each word hashes to a seeded Gaussian
/// direction, and a multi-word phrase embeds as the renormalized sum of its
/// word vectors. The same (seed, text) pair always yields the same vector;
/// distinct words yield independent directions.
///
/// The additive composition matters: phrases sharing words land near each
/// other, so supervision targets built from novel word combinations remain
/// predictable from their parts — the property pretrained sentence encoders
/// provide at full scale.
pub struct PseudoEmbedder {
    dim: usize,
    seed: u64,
}

impl PseudoEmbedder {
    pub fn new(dim: usize, seed: u64) -> Self {
        PseudoEmbedder { dim, seed }
    }

    /// Unit-norm Gaussian draw keyed by one word.
    fn word_vector(&self, word: &str) -> Vec<f64> {
        let mut rng = named_stream(self.seed, &format!("embed:{word}"));
        let mut v: Vec<f64> = (0..self.dim).map(|_| standard_normal(&mut rng)).collect();
        normalize_or_basis(&mut v);
        v
    }
}

/// Scales `v` to unit norm; a (probability-zero) degenerate vector falls
/// back to the first basis direction so the unit-norm postcondition holds
/// unconditionally.
fn normalize_or_basis(v: &mut [f64]) {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm < 1e-12 {
        for (i, x) in v.iter_mut().enumerate() {
            *x = if i == 0 { 1.0 } else { 0.0 };
        }
        return;
    }
    for x in v.iter_mut() {
        *x /= norm;
    }
}

impl Embedder for PseudoEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>, DataError> {
        let key = text.trim().to_lowercase();
        if key.is_empty() {
            return Err(DataError::EmptyText);
        }
        let mut words = key.split_whitespace();
        let first = words.next().expect("non-empty after trim");
        let mut v = self.word_vector(first);
        let mut extra = 0;
        for word in words {
            extra += 1;
            for (acc, w) in v.iter_mut().zip(self.word_vector(word)) {
                *acc += w;
            }
        }
        if extra > 0 {
            normalize_or_basis(&mut v);
        }
        Ok(v)
    }
}

/// Embeddings read from a file of `text<TAB>v1 v2 ... vd` lines.
pub struct LookupEmbedder {
    dim: usize,
    map: HashMap<String, Vec<f64>>,
}

impl LookupEmbedder {
    pub fn from_file(path: &Path) -> Result<Self, DataError> {
        let file = std::fs::File::open(path)?;
        let mut map = HashMap::new();
        let mut dim = None;
        for (lineno, line) in BufReader::new(file).lines().enumerate() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let (text, rest) = line.split_once('\t').ok_or(DataError::Parse {
                line: lineno + 1,
                detail: "expected `text<TAB>values`".to_string(),
            })?;
            let values: Vec<f64> = rest
                .split_whitespace()
                .map(|v| v.parse::<f64>())
                .collect::<Result<_, _>>()
                .map_err(|e| DataError::Parse {
                    line: lineno + 1,
                    detail: e.to_string(),
                })?;
            if values.is_empty() || values.iter().any(|v| !v.is_finite()) {
                return Err(DataError::Parse {
                    line: lineno + 1,
                    detail: "need at least one finite value".to_string(),
                });
            }
            match dim {
                None => dim = Some(values.len()),
                Some(d) if d != values.len() => {
                    return Err(DataError::Parse {
                        line: lineno + 1,
                        detail: format!("dimension {} != {}", values.len(), d),
                    });
                }
                _ => {}
            }
            map.insert(text.trim().to_lowercase(), values);
        }
        let dim = dim.ok_or(DataError::Parse {
            line: 0,
            detail: "embedding file has no entries".to_string(),
        })?;
        Ok(LookupEmbedder { dim, map })
    }

    /// Writes entries in sorted order so equal tables produce equal files.
    pub fn save(path: &Path, entries: &HashMap<String, Vec<f64>>) -> Result<(), DataError> {
        let mut keys: Vec<&String> = entries.keys().collect();
        keys.sort();
        let mut out = std::fs::File::create(path)?;
        for key in keys {
            let values: Vec<String> = entries[key].iter().map(|v| format!("{v:?}")).collect();
            writeln!(out, "{}\t{}", key, values.join(" "))?;
        }
        Ok(())
    }
}

impl Embedder for LookupEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>, DataError> {
        let key = text.trim().to_lowercase();
        if key.is_empty() {
            return Err(DataError::EmptyText);
        }
        self.map
            .get(&key)
            .cloned()
            .ok_or(DataError::UnknownText { text: key })
    }
}
