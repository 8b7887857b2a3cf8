//! Caption quality metrics: corpus BLEU@4, ROUGE-L, CIDEr, a deterministic
//! METEOR variant, and a language-model grammar score.
//!
//! All metrics lower-case tokens at corpus construction and are pure
//! functions of the token sequences — scores are reproducible to the bit.

pub mod lm;

use std::collections::BTreeMap;

#[derive(Debug, thiserror::Error)]
pub enum MetricsError {
    #[error("evaluation corpus has no entries")]
    EmptyCorpus,

    #[error("video {video_id:?} has no reference captions")]
    NoReferences { video_id: String },

    #[error("video {video_id:?} has an empty reference caption")]
    EmptyReference { video_id: String },

    #[error("cannot score an empty caption")]
    EmptyCaption,

    #[error("smoothing constant must be positive, got {k}")]
    InvalidSmoothing { k: f64 },

    #[error("n-gram order must be at least 1, got {order}")]
    InvalidOrder { order: usize },
}

/// One video's candidate caption and its references.
#[derive(Debug, Clone)]
pub struct EvalEntry {
    pub video_id: String,
    pub candidate: Vec<String>,
    pub references: Vec<Vec<String>>,
}

/// Validated, lower-cased evaluation corpus. Candidates may be empty (they
/// simply score zero); every entry needs at least one non-empty reference.
#[derive(Debug, Clone)]
pub struct EvalCorpus {
    entries: Vec<EvalEntry>,
}

impl EvalCorpus {
    pub fn new(entries: Vec<EvalEntry>) -> Result<Self, MetricsError> {
        if entries.is_empty() {
            return Err(MetricsError::EmptyCorpus);
        }
        let lower = |v: &[String]| -> Vec<String> { v.iter().map(|t| t.to_lowercase()).collect() };
        let mut out = Vec::with_capacity(entries.len());
        for e in entries {
            if e.references.is_empty() {
                return Err(MetricsError::NoReferences {
                    video_id: e.video_id,
                });
            }
            if e.references.iter().any(|r| r.is_empty()) {
                return Err(MetricsError::EmptyReference {
                    video_id: e.video_id,
                });
            }
            out.push(EvalEntry {
                candidate: lower(&e.candidate),
                references: e.references.iter().map(|r| lower(r)).collect(),
                video_id: e.video_id,
            });
        }
        Ok(EvalCorpus { entries: out })
    }

    pub fn entries(&self) -> &[EvalEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

// BTreeMap rather than HashMap: scores fold floating-point products in
// map iteration order, and only a sorted order keeps those sums (and thus
// serialized reports) bit-identical across runs.
fn ngram_counts(tokens: &[String], n: usize) -> BTreeMap<&[String], usize> {
    let mut counts = BTreeMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
}

/// Corpus-level BLEU with n-grams up to 4, uniform weights, no smoothing.
///
/// Modified precision clips each candidate n-gram count by the maximum count
/// across that entry's references; the brevity penalty compares total
/// candidate length against the sum of closest reference lengths (ties go
/// to the shorter reference). Any order with zero candidate n-grams or zero
/// matches corpus-wide yields a score of 0.
pub fn bleu4(corpus: &EvalCorpus) -> f64 {
    const N: usize = 4;
    let mut matches = [0usize; N];
    let mut totals = [0usize; N];
    let mut cand_len = 0usize;
    let mut ref_len = 0usize;

    for entry in &corpus.entries {
        let c = entry.candidate.len();
        cand_len += c;
        let closest = entry
            .references
            .iter()
            .map(|r| r.len())
            .min_by_key(|&r| {
                let diff = r.abs_diff(c);
                (diff, r)
            })
            .expect("validated: at least one reference");
        ref_len += closest;

        for (i, slot) in totals.iter_mut().enumerate() {
            let n = i + 1;
            let cand_counts = ngram_counts(&entry.candidate, n);
            if cand_counts.is_empty() {
                continue;
            }
            let mut max_ref: BTreeMap<&[String], usize> = BTreeMap::new();
            for r in &entry.references {
                for (gram, count) in ngram_counts(r, n) {
                    let slot = max_ref.entry(gram).or_insert(0);
                    *slot = (*slot).max(count);
                }
            }
            for (gram, count) in &cand_counts {
                *slot += count;
                matches[i] += (*count).min(max_ref.get(gram).copied().unwrap_or(0));
            }
        }
    }

    if cand_len == 0 || totals.iter().any(|&t| t == 0) || matches.iter().any(|&m| m == 0) {
        return 0.0;
    }
    let log_precision: f64 = (0..N)
        .map(|i| (matches[i] as f64 / totals[i] as f64).ln())
        .sum::<f64>()
        / N as f64;
    let bp = if cand_len > ref_len {
        1.0
    } else {
        (1.0 - ref_len as f64 / cand_len as f64).exp()
    };
    bp * log_precision.exp()
}

fn lcs_len(a: &[String], b: &[String]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y {
                prev[j] + 1
            } else {
                prev[j + 1].max(cur[j])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// ROUGE-L: longest-common-subsequence F-measure with beta = 1.2, taking
/// the best reference per video and averaging over videos.
pub fn rouge_l(corpus: &EvalCorpus) -> f64 {
    const BETA: f64 = 1.2;
    let beta_sq = BETA * BETA;
    let mut total = 0.0;
    for entry in &corpus.entries {
        let mut best = 0.0f64;
        if !entry.candidate.is_empty() {
            for r in &entry.references {
                let lcs = lcs_len(&entry.candidate, r) as f64;
                if lcs == 0.0 {
                    continue;
                }
                let p = lcs / entry.candidate.len() as f64;
                let rec = lcs / r.len() as f64;
                let f = ((1.0 + beta_sq) * p * rec) / (rec + beta_sq * p);
                best = best.max(f);
            }
        }
        total += best;
    }
    total / corpus.entries.len() as f64
}

/// CIDEr: mean over n = 1..4 of TF-IDF n-gram cosine similarity against
/// each reference, averaged over references and videos, scaled by 10.
///
/// IDF is computed from the reference side of the corpus:
/// `idf(g) = ln((N + 1) / max(1, df(g)))` where `df` counts videos whose
/// references contain `g`. The +1 keeps n-grams seen in every video at
/// positive weight, so a candidate identical to the sole reference of a
/// one-video corpus scores exactly 10. Meaningful relative scores need a
/// multi-video corpus (IDF degenerates to a constant otherwise).
pub fn cider(corpus: &EvalCorpus) -> f64 {
    const N: usize = 4;
    let videos = corpus.entries.len() as f64;

    let mut total = 0.0;
    for n in 1..=N {
        // Document frequency per n-gram over each video's reference set.
        let mut df: BTreeMap<&[String], f64> = BTreeMap::new();
        for entry in &corpus.entries {
            let mut seen: Vec<&[String]> = Vec::new();
            for r in &entry.references {
                for gram in ngram_counts(r, n).into_keys() {
                    if !seen.contains(&gram) {
                        seen.push(gram);
                    }
                }
            }
            for gram in seen {
                *df.entry(gram).or_insert(0.0) += 1.0;
            }
        }
        let idf = |gram: &[String]| -> f64 {
            let d = df.get(gram).copied().unwrap_or(0.0).max(1.0);
            ((videos + 1.0) / d).ln()
        };

        let mut level = 0.0;
        for entry in &corpus.entries {
            let cand = ngram_counts(&entry.candidate, n);
            let cand_vec: BTreeMap<&[String], f64> = cand
                .iter()
                .map(|(&g, &c)| (g, c as f64 * idf(g)))
                .collect();
            let cand_norm = cand_vec.values().map(|v| v * v).sum::<f64>().sqrt();

            let mut entry_score = 0.0;
            for r in &entry.references {
                let rvec: BTreeMap<&[String], f64> = ngram_counts(r, n)
                    .iter()
                    .map(|(&g, &c)| (g, c as f64 * idf(g)))
                    .collect();
                let rnorm = rvec.values().map(|v| v * v).sum::<f64>().sqrt();
                if cand_norm > 0.0 && rnorm > 0.0 {
                    let dot: f64 = cand_vec
                        .iter()
                        .filter_map(|(g, v)| rvec.get(g).map(|w| v * w))
                        .sum();
                    entry_score += dot / (cand_norm * rnorm);
                }
            }
            level += entry_score / entry.references.len() as f64;
        }
        total += level / videos;
    }
    10.0 * total / N as f64
}

/// Strips one plural/tense suffix (`ing`, `es`, `ed`, `s`, longest first)
/// when a stem of at least two characters remains.
fn stem(word: &str) -> &str {
    for suffix in ["ing", "es", "ed", "s"] {
        if word.len() > suffix.len() + 1 {
            if let Some(s) = word.strip_suffix(suffix) {
                return s;
            }
        }
    }
    word
}

/// Deterministic METEOR variant: two greedy leftmost matching stages
/// (exact, then stemmed), harmonic mean Fmean = 10PR / (R + 9P), and the
/// fragmentation penalty 0.5 * (chunks / matches)^3. Best reference per
/// video, averaged over videos.
pub fn meteor_lite(corpus: &EvalCorpus) -> f64 {
    let mut total = 0.0;
    for entry in &corpus.entries {
        let mut best = 0.0f64;
        for r in &entry.references {
            best = best.max(meteor_pair(&entry.candidate, r));
        }
        total += best;
    }
    total / corpus.entries.len() as f64
}

fn meteor_pair(cand: &[String], reference: &[String]) -> f64 {
    if cand.is_empty() {
        return 0.0;
    }
    let mut cand_matched = vec![false; cand.len()];
    let mut ref_matched = vec![false; reference.len()];
    // (candidate index, reference index) pairs in candidate order.
    let mut pairs: Vec<(usize, usize)> = Vec::new();

    let stage = |eq: &dyn Fn(&str, &str) -> bool,
                 cand_matched: &mut Vec<bool>,
                 ref_matched: &mut Vec<bool>,
                 pairs: &mut Vec<(usize, usize)>| {
        for (ci, cw) in cand.iter().enumerate() {
            if cand_matched[ci] {
                continue;
            }
            for (ri, rw) in reference.iter().enumerate() {
                if !ref_matched[ri] && eq(cw, rw) {
                    cand_matched[ci] = true;
                    ref_matched[ri] = true;
                    pairs.push((ci, ri));
                    break;
                }
            }
        }
    };
    stage(&|a, b| a == b, &mut cand_matched, &mut ref_matched, &mut pairs);
    stage(
        &|a, b| stem(a) == stem(b),
        &mut cand_matched,
        &mut ref_matched,
        &mut pairs,
    );

    let matches = pairs.len();
    if matches == 0 {
        return 0.0;
    }
    let p = matches as f64 / cand.len() as f64;
    let r = matches as f64 / reference.len() as f64;
    let fmean = 10.0 * p * r / (r + 9.0 * p);

    pairs.sort_unstable();
    let mut chunks = 1usize;
    for w in pairs.windows(2) {
        let contiguous = w[1].0 == w[0].0 + 1 && w[1].1 == w[0].1 + 1;
        if !contiguous {
            chunks += 1;
        }
    }
    let penalty = 0.5 * (chunks as f64 / matches as f64).powi(3);
    fmean * (1.0 - penalty)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashMap;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    fn one(cand: &str, refs: &[&str]) -> EvalCorpus {
        EvalCorpus::new(vec![EvalEntry {
            video_id: "v0".to_string(),
            candidate: toks(cand),
            references: refs.iter().map(|r| toks(r)).collect(),
        }])
        .unwrap()
    }

    #[test]
    fn corpus_rejects_missing_or_empty_references() {
        let err = EvalCorpus::new(vec![EvalEntry {
            video_id: "v".into(),
            candidate: toks("a"),
            references: vec![],
        }])
        .unwrap_err();
        assert!(matches!(err, MetricsError::NoReferences { .. }));

        let err = EvalCorpus::new(vec![EvalEntry {
            video_id: "v".into(),
            candidate: toks("a"),
            references: vec![vec![]],
        }])
        .unwrap_err();
        assert!(matches!(err, MetricsError::EmptyReference { .. }));

        assert!(matches!(
            EvalCorpus::new(vec![]),
            Err(MetricsError::EmptyCorpus)
        ));
    }

    #[test]
    fn bleu_identity_is_one() {
        let c = one("a b c d e", &["a b c d e"]);
        assert_eq!(bleu4(&c), 1.0);
    }

    #[test]
    fn bleu_matches_hand_computation() {
        // cand "the cat sat on mat" vs ref "the cat sat on the mat":
        // p1 = 5/5, p2 = 3/4, p3 = 2/3, p4 = 1/2; BP = exp(1 - 6/5).
        let c = one("the cat sat on mat", &["the cat sat on the mat"]);
        let expect = (1.0f64 - 6.0 / 5.0).exp()
            * (1.0f64 * 0.75 * (2.0 / 3.0) * 0.5).powf(0.25);
        assert!((bleu4(&c) - expect).abs() < 1e-12);
    }

    #[test]
    fn bleu_clips_repeated_ngrams() {
        // Candidate shorter than 4 tokens has no 4-grams: score is 0.
        let c = one("the the the", &["the cat"]);
        assert_eq!(bleu4(&c), 0.0);
        // And with 4-grams present but no match at some order, still 0.
        let c = one("the the the the", &["the cat sat down low"]);
        assert_eq!(bleu4(&c), 0.0);
    }

    #[test]
    fn bleu_brevity_tie_goes_to_shorter_reference() {
        // cand len 4; refs len 3 and 5 tie on |diff| = 1; shorter wins, so
        // r = 3 < c = 4 and BP = 1. All orders match the len-5 reference.
        let c = one("a b c d", &["a b c d e", "a b c"]);
        let with_tie = bleu4(&c);
        let c_swapped = one("a b c d", &["a b c", "a b c d e"]);
        assert_eq!(with_tie, bleu4(&c_swapped));
        // p4 = 1/1, p3 = 2/2, p2 = 3/3, p1 = 4/4; BP = 1.
        assert!((with_tie - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rouge_identity_is_one_and_hand_case_is_three_quarters() {
        assert!((rouge_l(&one("x y z", &["x y z"])) - 1.0).abs() < 1e-12);
        // LCS("a b c d", "a c d e") = 3; P = R = 3/4 makes F = 3/4 at any
        // beta.
        let c = one("a b c d", &["a c d e"]);
        assert!((rouge_l(&c) - 0.75).abs() < 1e-12);
    }

    #[test]
    fn rouge_takes_best_reference_and_empty_candidate_scores_zero() {
        let best = one("a b c", &["z z z", "a b c"]);
        assert!((rouge_l(&best) - 1.0).abs() < 1e-12);
        assert_eq!(rouge_l(&one("", &["a b"])), 0.0);
    }

    #[test]
    fn cider_identity_scores_ten_disjoint_scores_zero() {
        let c = one("a b c d e", &["a b c d e"]);
        assert!((cider(&c) - 10.0).abs() < 1e-9);
        let d = one("p q r s t", &["a b c d e"]);
        assert_eq!(cider(&d), 0.0);
    }

    #[test]
    fn cider_matches_brute_force_reference() {
        // Independent implementation: build TF-IDF maps with explicit
        // loops over string-keyed maps, no shared helpers.
        let entries = vec![
            EvalEntry {
                video_id: "a".into(),
                candidate: toks("a man is playing a guitar"),
                references: vec![toks("a man is playing a guitar"), toks("the man plays guitar")],
            },
            EvalEntry {
                video_id: "b".into(),
                candidate: toks("a dog runs"),
                references: vec![toks("the dog is running fast")],
            },
            EvalEntry {
                video_id: "c".into(),
                candidate: toks("the chef was cooking a sandwich"),
                references: vec![
                    toks("a chef was cooking a sandwich"),
                    toks("the chef is cooking food"),
                ],
            },
        ];
        let corpus = EvalCorpus::new(entries.clone()).unwrap();

        let grams = |tokens: &[String], n: usize| -> HashMap<String, f64> {
            let mut m = HashMap::new();
            if tokens.len() >= n {
                for i in 0..=tokens.len() - n {
                    *m.entry(tokens[i..i + n].join("\u{1f}")).or_insert(0.0) += 1.0;
                }
            }
            m
        };
        let n_videos = entries.len() as f64;
        let mut expect = 0.0;
        for n in 1..=4 {
            let mut df: HashMap<String, f64> = HashMap::new();
            for e in &entries {
                let mut seen: Vec<String> = Vec::new();
                for r in &e.references {
                    for g in grams(r, n).into_keys() {
                        if !seen.contains(&g) {
                            seen.push(g);
                        }
                    }
                }
                for g in seen {
                    *df.entry(g).or_insert(0.0) += 1.0;
                }
            }
            let mut level = 0.0;
            for e in &entries {
                let weigh = |counts: HashMap<String, f64>| -> HashMap<String, f64> {
                    counts
                        .into_iter()
                        .map(|(g, c)| {
                            let d = df.get(&g).copied().unwrap_or(0.0).max(1.0);
                            let idf = ((n_videos + 1.0) / d).ln();
                            (g, c * idf)
                        })
                        .collect()
                };
                let cv = weigh(grams(&e.candidate, n));
                let cn = cv.values().map(|v| v * v).sum::<f64>().sqrt();
                let mut score = 0.0;
                for r in &e.references {
                    let rv = weigh(grams(r, n));
                    let rn = rv.values().map(|v| v * v).sum::<f64>().sqrt();
                    if cn > 0.0 && rn > 0.0 {
                        let dot: f64 =
                            cv.iter().filter_map(|(g, v)| rv.get(g).map(|w| v * w)).sum();
                        score += dot / (cn * rn);
                    }
                }
                level += score / e.references.len() as f64;
            }
            expect += level / n_videos;
        }
        expect = 10.0 * expect / 4.0;

        assert!((cider(&corpus) - expect).abs() < 1e-12);
    }

    #[test]
    fn meteor_identity_is_fifty_three_fifty_fourths() {
        // 3 matches in 1 chunk: Fmean = 1, penalty = 0.5/27 = 1/54.
        let c = one("a b c", &["a b c"]);
        assert!((meteor_lite(&c) - 53.0 / 54.0).abs() < 1e-12);
    }

    #[test]
    fn meteor_stem_stage_hand_case() {
        // "the dogs running" vs "the dog runs": exact {the}, stems match
        // dogs/dog but not running/runs; 2 matches, 1 chunk, P = R = 2/3.
        // Fmean = 2/3, penalty = 0.5 * (1/2)^3 -> score = 0.625.
        let c = one("the dogs running", &["the dog runs"]);
        assert!((meteor_lite(&c) - 0.625).abs() < 1e-12);
    }

    #[test]
    fn meteor_zero_overlap_scores_zero() {
        assert_eq!(meteor_lite(&one("x y", &["p q"])), 0.0);
        assert_eq!(meteor_lite(&one("", &["p q"])), 0.0);
    }

    #[test]
    fn stemmer_strips_one_suffix_with_nonempty_stem() {
        assert_eq!(stem("running"), "runn");
        assert_eq!(stem("dogs"), "dog");
        assert_eq!(stem("boxes"), "box");
        assert_eq!(stem("walked"), "walk");
        assert_eq!(stem("is"), "is"); // stem would be too short
        assert_eq!(stem("s"), "s");
    }

    #[test]
    fn metrics_ignore_case() {
        let c = EvalCorpus::new(vec![EvalEntry {
            video_id: "v".into(),
            candidate: toks("The CAT"),
            references: vec![toks("the cat")],
        }])
        .unwrap();
        assert!((rouge_l(&c) - 1.0).abs() < 1e-12);
        assert!((meteor_lite(&c) - meteor_lite(&one("the cat", &["the cat"]))).abs() < 1e-12);
    }

    #[test]
    fn metrics_are_order_invariant_over_entries() {
        let make = |order: &[usize]| {
            let base = [
                ("a", "a man is playing a guitar", "a man was playing a guitar"),
                ("b", "the dog runs", "a dog is running fast"),
                ("c", "a chef was cooking", "the chef was cooking a sandwich"),
            ];
            EvalCorpus::new(
                order
                    .iter()
                    .map(|&i| EvalEntry {
                        video_id: base[i].0.to_string(),
                        candidate: toks(base[i].1),
                        references: vec![toks(base[i].2)],
                    })
                    .collect(),
            )
            .unwrap()
        };
        let a = make(&[0, 1, 2]);
        let b = make(&[2, 0, 1]);
        // Integer tallies make BLEU exactly invariant; the rest accumulate
        // floats per entry, so reordering shifts the last few bits.
        assert_eq!(bleu4(&a), bleu4(&b));
        assert!((rouge_l(&a) - rouge_l(&b)).abs() < 1e-12);
        assert!((cider(&a) - cider(&b)).abs() < 1e-12);
        assert!((meteor_lite(&a) - meteor_lite(&b)).abs() < 1e-12);
    }
}
