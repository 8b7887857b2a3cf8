//! Synthetic corpus generation, annotation types, and supervision targets.
//!
//! A corpus is a set of videos; each video carries three feature matrices
//! (spatial appearance per frame, temporal motion per frame, detected object
//! vectors) plus one or more reference captions annotated with their
//! part-of-speech phrases. The generator builds scenes from a small grammar
//! — every video depicts `determinant subject aux verb determinant object` —
//! and derives features from per-word concept vectors plus Gaussian noise,
//! so features genuinely predict captions and a capable model can overfit a
//! small corpus to near-zero loss.

pub mod embed;
pub mod files;

use std::collections::HashMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::rng::{named_stream, purpose_stream, standard_normal, Purpose};
use embed::Embedder;

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("line {line}: {source}")]
    Json {
        line: usize,
        source: serde_json::Error,
    },

    #[error(transparent)]
    Tensor(#[from] crate::autodiff::Error),

    #[error("cannot embed empty text")]
    EmptyText,

    #[error("no embedding for {text:?}")]
    UnknownText { text: String },

    #[error("line {line}: {detail}")]
    Parse { line: usize, detail: String },

    #[error("invalid corpus parameters: {detail}")]
    InvalidParams { detail: String },

    #[error("corpus contains no captions")]
    EmptyCorpus,

    #[error("malformed annotation: {reason}")]
    MalformedAnnotation { reason: String },

    #[error("corrupt {what}: {reason}")]
    Corrupt { what: &'static str, reason: String },

    #[error("unsupported {what} version {found} (expected {expected})")]
    VersionMismatch {
        what: &'static str,
        found: u16,
        expected: u16,
    },

    #[error("video {video_id:?} present in only one of the two corpus files")]
    CorpusFilesDisagree { video_id: String },
}

/// One reference caption with optional part-of-speech phrase annotations.
/// Each present phrase must be a contiguous token subsequence of `tokens`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaptionAnnotation {
    pub tokens: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub det_subject: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub aux_verb: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub verb: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub det_object: Option<String>,
}

impl CaptionAnnotation {
    pub fn plain(tokens: Vec<String>) -> Self {
        CaptionAnnotation {
            tokens,
            det_subject: None,
            aux_verb: None,
            verb: None,
            det_object: None,
        }
    }
}

/// One video: three feature matrices plus reference captions.
#[derive(Debug, Clone)]
pub struct VideoSample {
    pub video_id: String,
    /// `[frames, spatial_dim]` appearance features.
    pub spatial: Tensor,
    /// `[frames, temporal_dim]` motion features.
    pub temporal: Tensor,
    /// `[objects, noun_dim]` detected-object features.
    pub objects: Tensor,
    pub references: Vec<CaptionAnnotation>,
}

/// Scene vocabulary plus the concept vectors features are synthesized from.
pub struct SceneGrammar {
    pub determinants: Vec<String>,
    pub subjects: Vec<String>,
    pub aux_verbs: Vec<String>,
    pub verbs: Vec<String>,
    pub objects: Vec<String>,
    pub concept_dim: usize,
    pub noise_sigma: f64,
    concepts: HashMap<String, Vec<f64>>,
}

impl SceneGrammar {
    pub fn new(
        determinants: Vec<String>,
        subjects: Vec<String>,
        aux_verbs: Vec<String>,
        verbs: Vec<String>,
        objects: Vec<String>,
        concept_dim: usize,
        noise_sigma: f64,
        seed: u64,
    ) -> Result<Self, DataError> {
        for (name, list) in [
            ("determinants", &determinants),
            ("subjects", &subjects),
            ("aux_verbs", &aux_verbs),
            ("verbs", &verbs),
            ("objects", &objects),
        ] {
            if list.is_empty() {
                return Err(DataError::InvalidParams {
                    detail: format!("{name} list is empty"),
                });
            }
        }
        if concept_dim == 0 {
            return Err(DataError::InvalidParams {
                detail: "concept_dim must be positive".to_string(),
            });
        }
        if !(noise_sigma >= 0.0) {
            return Err(DataError::InvalidParams {
                detail: format!("noise_sigma must be non-negative, got {noise_sigma}"),
            });
        }

        // Unit concept vector per content word, seeded by the word itself.
        let mut concepts = HashMap::new();
        for word in subjects.iter().chain(verbs.iter()).chain(objects.iter()) {
            concepts.entry(word.clone()).or_insert_with(|| {
                let mut rng = named_stream(seed, &format!("concept:{word}"));
                let mut v: Vec<f64> =
                    (0..concept_dim).map(|_| standard_normal(&mut rng)).collect();
                let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
                for x in &mut v {
                    *x /= norm;
                }
                v
            });
        }

        Ok(SceneGrammar {
            determinants,
            subjects,
            aux_verbs,
            verbs,
            objects,
            concept_dim,
            noise_sigma,
            concepts,
        })
    }

    /// Eight subjects/verbs/objects, two auxiliaries, two determinants:
    /// 28 distinct words, comfortably inside a 64-token vocabulary budget.
    pub fn desk_default(concept_dim: usize, noise_sigma: f64, seed: u64) -> Self {
        let s = |words: &[&str]| words.iter().map(|w| w.to_string()).collect();
        Self::new(
            s(&["a", "the"]),
            s(&["man", "woman", "dog", "cat", "girl", "boy", "chef", "robot"]),
            s(&["is", "was"]),
            s(&[
                "holding", "carrying", "cooking", "throwing", "washing", "kicking", "eating",
                "playing",
            ]),
            s(&[
                "ball", "guitar", "sandwich", "piano", "kite", "drum", "apple", "rope",
            ]),
            concept_dim,
            noise_sigma,
            seed,
        )
        .expect("built-in grammar is valid")
    }

    /// Benchmark grammar for wiring comparisons: the first `pool` words of
    /// each content category (clamped to 1..=8) with a single determinant
    /// and a single auxiliary. Function words have no visual evidence in
    /// the features, so leaving them a free choice would add coin-flip
    /// noise to held-out scores; fixing them keeps comparisons focused on
    /// the visually grounded content words.
    pub fn desk_benchmark(pool: usize, concept_dim: usize, noise_sigma: f64, seed: u64) -> Self {
        let pool = pool.clamp(1, 8);
        let full = Self::desk_default(concept_dim, noise_sigma, seed);
        let take = |words: &[String]| words[..pool].to_vec();
        Self::new(
            vec!["the".to_string()],
            take(&full.subjects),
            vec!["is".to_string()],
            take(&full.verbs),
            take(&full.objects),
            concept_dim,
            noise_sigma,
            seed,
        )
        .expect("built-in grammar is valid")
    }

    pub fn concept(&self, word: &str) -> Option<&[f64]> {
        self.concepts.get(word).map(|v| v.as_slice())
    }
}

/// Corpus sizing knobs.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct CorpusParams {
    pub n_videos: usize,
    pub refs_per_video: usize,
    pub frames: usize,
    pub objects_per_video: usize,
    pub seed: u64,
}

impl Default for CorpusParams {
    fn default() -> Self {
        CorpusParams {
            n_videos: 32,
            refs_per_video: 2,
            frames: 8,
            objects_per_video: 4,
            seed: 42,
        }
    }
}

/// Synthesizes a corpus. Deterministic: the same grammar and params always
/// produce the same samples. With `noise_sigma` 0 every temporal frame
/// equals the verb's concept vector exactly.
pub fn generate_corpus(
    grammar: &SceneGrammar,
    params: &CorpusParams,
) -> Result<Vec<VideoSample>, DataError> {
    for (name, v) in [
        ("n_videos", params.n_videos),
        ("refs_per_video", params.refs_per_video),
        ("frames", params.frames),
        ("objects_per_video", params.objects_per_video),
    ] {
        if v == 0 {
            return Err(DataError::InvalidParams {
                detail: format!("{name} must be positive"),
            });
        }
    }

    let mut rng = purpose_stream(params.seed, Purpose::DataGen);
    let sigma = grammar.noise_sigma;
    let mut samples = Vec::with_capacity(params.n_videos);

    for v in 0..params.n_videos {
        let subject = &grammar.subjects[rng.gen_range(0..grammar.subjects.len())];
        let aux = &grammar.aux_verbs[rng.gen_range(0..grammar.aux_verbs.len())];
        let verb = &grammar.verbs[rng.gen_range(0..grammar.verbs.len())];
        let object = &grammar.objects[rng.gen_range(0..grammar.objects.len())];

        let subject_c = grammar.concept(subject).expect("grammar covers subjects");
        let verb_c = grammar.concept(verb).expect("grammar covers verbs");
        let object_c = grammar.concept(object).expect("grammar covers objects");

        // Always draw the noise so the stream position is independent of
        // sigma; at sigma 0 the features equal the concepts exactly.
        let noisy_row = |base: &[f64], rng: &mut rand_chacha::ChaCha8Rng| -> Vec<f64> {
            base.iter()
                .map(|&b| b + sigma * standard_normal(rng))
                .collect()
        };

        let temporal_rows: Vec<Vec<f64>> = (0..params.frames)
            .map(|_| noisy_row(verb_c, &mut rng))
            .collect();
        // Each frame blends subject and object with its own weight, so no
        // single frame separates the two concepts — recovering both takes
        // integration across frames.
        let spatial_rows: Vec<Vec<f64>> = (0..params.frames)
            .map(|_| {
                let alpha = rng.gen_range(0.25..0.75);
                let mix: Vec<f64> = subject_c
                    .iter()
                    .zip(object_c.iter())
                    .map(|(s, o)| alpha * s + (1.0 - alpha) * o)
                    .collect();
                noisy_row(&mix, &mut rng)
            })
            .collect();
        let object_rows: Vec<Vec<f64>> = (0..params.objects_per_video)
            .map(|k| {
                let base = if k % 2 == 0 { subject_c } else { object_c };
                noisy_row(base, &mut rng)
            })
            .collect();

        let mut references = Vec::with_capacity(params.refs_per_video);
        for _ in 0..params.refs_per_video {
            let det_s = &grammar.determinants[rng.gen_range(0..grammar.determinants.len())];
            let det_o = &grammar.determinants[rng.gen_range(0..grammar.determinants.len())];
            let tokens: Vec<String> = [det_s, subject, aux, verb, det_o, object]
                .iter()
                .map(|w| w.to_string())
                .collect();
            references.push(CaptionAnnotation {
                tokens,
                det_subject: Some(format!("{det_s} {subject}")),
                aux_verb: Some(aux.clone()),
                verb: Some(verb.clone()),
                det_object: Some(format!("{det_o} {object}")),
            });
        }

        samples.push(VideoSample {
            video_id: format!("video{v:04}"),
            spatial: Tensor::from_rows(&spatial_rows)?,
            temporal: Tensor::from_rows(&temporal_rows)?,
            objects: Tensor::from_rows(&object_rows)?,
            references,
        });
    }
    Ok(samples)
}

/// One supervision phrase and its target embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct PosComponent {
    pub text: String,
    pub embedding: Vec<f64>,
}

/// Per-caption supervision targets for the encoder blocks. `caption` is the
/// full-sentence embedding (global target); the rest are present only when
/// the annotation carries the phrase. `nouns` averages the embeddings of
/// the subject and object head nouns.
#[derive(Debug, Clone)]
pub struct PosTargets {
    pub caption: PosComponent,
    pub verb: Option<PosComponent>,
    pub det_subject: Option<PosComponent>,
    pub aux_verb: Option<PosComponent>,
    pub det_object: Option<PosComponent>,
    pub nouns: Option<PosComponent>,
}

fn is_contiguous_subsequence(needle: &[String], hay: &[String]) -> bool {
    if needle.is_empty() || needle.len() > hay.len() {
        return false;
    }
    hay.windows(needle.len()).any(|w| w == needle)
}

/// Derives embedding targets from an annotation. Every present phrase is
/// validated to be a contiguous (case-insensitive) subsequence of the
/// caption tokens.
pub fn extract_pos_targets(
    annotation: &CaptionAnnotation,
    embedder: &dyn Embedder,
) -> Result<PosTargets, DataError> {
    if annotation.tokens.is_empty() {
        return Err(DataError::MalformedAnnotation {
            reason: "caption has no tokens".to_string(),
        });
    }
    let tokens: Vec<String> = annotation
        .tokens
        .iter()
        .map(|t| t.to_lowercase())
        .collect();

    let component = |phrase: &Option<String>| -> Result<Option<PosComponent>, DataError> {
        let Some(phrase) = phrase else {
            return Ok(None);
        };
        let words: Vec<String> = phrase.to_lowercase().split_whitespace().map(String::from).collect();
        if !is_contiguous_subsequence(&words, &tokens) {
            return Err(DataError::MalformedAnnotation {
                reason: format!(
                    "phrase {:?} is not a contiguous subsequence of {:?}",
                    phrase, annotation.tokens
                ),
            });
        }
        let text = words.join(" ");
        let embedding = embedder.embed(&text)?;
        Ok(Some(PosComponent { text, embedding }))
    };

    let caption_text = tokens.join(" ");
    let caption = PosComponent {
        embedding: embedder.embed(&caption_text)?,
        text: caption_text,
    };
    let det_subject = component(&annotation.det_subject)?;
    let aux_verb = component(&annotation.aux_verb)?;
    let verb = component(&annotation.verb)?;
    let det_object = component(&annotation.det_object)?;

    // Head nouns: final word of each determinant phrase; target is the mean
    // of their embeddings.
    let mut noun_words: Vec<String> = Vec::new();
    for phrase in [&det_subject, &det_object].into_iter().flatten() {
        if let Some(last) = phrase.text.split_whitespace().last() {
            noun_words.push(last.to_string());
        }
    }
    let nouns = if noun_words.is_empty() {
        None
    } else {
        let mut acc = vec![0.0; embedder.dim()];
        for word in &noun_words {
            for (a, v) in acc.iter_mut().zip(embedder.embed(word)?) {
                *a += v;
            }
        }
        let n = noun_words.len() as f64;
        for a in &mut acc {
            *a /= n;
        }
        Some(PosComponent {
            text: noun_words.join(" "),
            embedding: acc,
        })
    };

    Ok(PosTargets {
        caption,
        verb,
        det_subject,
        aux_verb,
        det_object,
        nouns,
    })
}

/// Annotation coverage percentages across all captions of a corpus.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct PosStats {
    pub captions: usize,
    pub det_subject_pct: f64,
    pub aux_verb_pct: f64,
    pub verb_pct: f64,
    pub det_object_pct: f64,
    pub mean_tokens: f64,
}

pub fn pos_stats<'a>(
    captions_in: impl IntoIterator<Item = &'a CaptionAnnotation>,
) -> Result<PosStats, DataError> {
    let mut captions = 0usize;
    let (mut ds, mut av, mut vb, mut dobj) = (0usize, 0usize, 0usize, 0usize);
    let mut token_total = 0usize;
    for r in captions_in {
        captions += 1;
        token_total += r.tokens.len();
        ds += r.det_subject.is_some() as usize;
        av += r.aux_verb.is_some() as usize;
        vb += r.verb.is_some() as usize;
        dobj += r.det_object.is_some() as usize;
    }
    if captions == 0 {
        return Err(DataError::EmptyCorpus);
    }
    let pct = |n: usize| 100.0 * n as f64 / captions as f64;
    Ok(PosStats {
        captions,
        det_subject_pct: pct(ds),
        aux_verb_pct: pct(av),
        verb_pct: pct(vb),
        det_object_pct: pct(dobj),
        mean_tokens: token_total as f64 / captions as f64,
    })
}
