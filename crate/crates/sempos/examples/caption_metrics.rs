//! Score a toy candidate set with the caption metrics, then measure
//! fluency with a bigram language model fitted on the references.

use sempos::metrics::lm::{grammatical_score, NGramLm, UniformLm};
use sempos::metrics::{bleu4, cider, meteor_lite, rouge_l, EvalCorpus, EvalEntry};

fn toks(s: &str) -> Vec<String> {
    s.split_whitespace().map(String::from).collect()
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let entries = vec![
        EvalEntry {
            video_id: "clip-a".into(),
            candidate: toks("a man is typing on a keyboard"),
            references: vec![
                toks("a man is typing on a keyboard"),
                toks("the man types on the keyboard"),
            ],
        },
        EvalEntry {
            video_id: "clip-b".into(),
            candidate: toks("a woman lifts a mug"),
            references: vec![toks("a woman is lifting a mug")],
        },
        EvalEntry {
            video_id: "clip-c".into(),
            candidate: toks("keyboard keyboard keyboard"),
            references: vec![toks("a man closes a laptop")],
        },
    ];
    let corpus = EvalCorpus::new(entries)?;

    println!("bleu4   = {:.4}", bleu4(&corpus));
    println!("rouge_l = {:.4}", rouge_l(&corpus));
    println!("cider   = {:.4}", cider(&corpus));
    println!("meteor  = {:.4}", meteor_lite(&corpus));

    // Fluency: per-token perplexity of the candidates under a bigram model
    // of the reference language. Lower reads as more grammatical.
    let references: Vec<Vec<String>> = corpus
        .entries()
        .iter()
        .flat_map(|e| e.references.clone())
        .collect();
    let lm = NGramLm::train(&references, 2, 1.0)?;
    let candidates: Vec<Vec<String>> = corpus
        .entries()
        .iter()
        .map(|e| e.candidate.clone())
        .collect();
    println!(
        "bigram perplexity  = {:.2}",
        grammatical_score(&candidates, &lm)?
    );

    // Under a uniform model every caption costs exactly the vocabulary
    // size, a handy calibration point.
    let uniform = UniformLm { vocab: 50 };
    println!(
        "uniform perplexity = {:.2}",
        grammatical_score(&candidates, &uniform)?
    );
    Ok(())
}
