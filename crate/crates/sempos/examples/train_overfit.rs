//! Overfit a small model on a six-video corpus and watch it learn to
//! reproduce the reference captions. Runs in a few seconds.

use sempos::data::embed::PseudoEmbedder;
use sempos::data::{generate_corpus, CorpusParams, SceneGrammar};
use sempos::masking::MaskConfig;
use sempos::model::{LossWeights, Model, ModelConfig, Wiring};
use sempos::train::{caption_targets, evaluate, train, TrainConfig};
use sempos::vocab::Vocabulary;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let grammar = SceneGrammar::desk_default(10, 0.02, 13);
    let params = CorpusParams {
        n_videos: 6,
        refs_per_video: 1,
        frames: 4,
        objects_per_video: 2,
        seed: 13,
    };
    let samples = generate_corpus(&grammar, &params)?;
    let vocab = Vocabulary::build(
        samples
            .iter()
            .flat_map(|s| s.references.iter().map(|r| r.tokens.as_slice())),
    );

    let mut cfg = ModelConfig::for_corpus(&samples, vocab.len())?;
    cfg.hidden = 24;
    cfg.embed = 16;
    cfg.max_len = 10;
    let model = Model::new(cfg, Wiring::full(), LossWeights::default(), 13)?;
    let embedder = PseudoEmbedder::new(cfg.embed, 13);
    let targets = caption_targets(&samples, &vocab, &embedder)?;

    let train_cfg = TrainConfig {
        learning_rate: 3e-3,
        batch_size: 3,
        epochs: 120,
        masks: MaskConfig::disabled(),
        holdout_every: 0, // validate on the training set: this is a memorization demo
        ..TrainConfig::default()
    };
    let run = train(&model, &samples, &targets, &train_cfg)?;
    for r in run.epochs.iter().step_by(20) {
        println!("epoch {:>3}  total {:>8.4}  caption {:>8.4}", r.epoch, r.train.total, r.train.caption);
    }
    println!("best epoch {} (val {:.4})", run.best_epoch, run.best_val);

    let (report, decodes) = evaluate(&model, &samples, &vocab)?;
    let mut exact = 0;
    for ((id, tokens), sample) in decodes.iter().zip(&samples) {
        let reference = sample.references[0].tokens.join(" ");
        let decoded = tokens.join(" ");
        let mark = if decoded == reference { exact += 1; "=" } else { "~" };
        println!("{mark} {id}: \"{decoded}\" (ref \"{reference}\")");
    }
    println!(
        "{exact}/{} reproduced exactly; bleu4={:.3} cider={:.3}",
        samples.len(),
        report.bleu4,
        report.cider
    );
    Ok(())
}
