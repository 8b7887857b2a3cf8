//! Save a model to the binary checkpoint format, load it back, and show
//! that the copy decodes identically and serializes to identical bytes.

use sempos::data::{generate_corpus, CorpusParams, SceneGrammar};
use sempos::model::checkpoint::{load_model, save_model};
use sempos::model::{Block, Features, LossWeights, Model, ModelConfig, Wiring};
use sempos::vocab::Vocabulary;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let grammar = SceneGrammar::desk_default(8, 0.05, 21);
    let params = CorpusParams {
        n_videos: 3,
        refs_per_video: 1,
        frames: 4,
        objects_per_video: 2,
        seed: 21,
    };
    let samples = generate_corpus(&grammar, &params)?;
    let vocab = Vocabulary::build(
        samples
            .iter()
            .flat_map(|s| s.references.iter().map(|r| r.tokens.as_slice())),
    );

    let mut cfg = ModelConfig::for_corpus(&samples, vocab.len())?;
    cfg.hidden = 8;
    cfg.embed = 8;
    let mut wiring = Wiring::full();
    wiring.remove(Block::AuxVerb);
    let model = Model::new(cfg, wiring, LossWeights::default(), 21)?;
    println!(
        "model: wiring={} params={} tensors={}",
        model.wiring().label(),
        model.param_count(),
        model.named_params().len()
    );

    let dir = std::env::temp_dir().join("sempos-checkpoint-example");
    std::fs::create_dir_all(&dir)?;
    let path = dir.join("model.semp");
    save_model(&path, &model)?;
    println!(
        "saved {} bytes to {}",
        std::fs::metadata(&path)?.len(),
        path.display()
    );

    let restored = load_model(&path)?;
    assert_eq!(restored.wiring(), model.wiring());
    assert_eq!(restored.config(), model.config());

    let features = Features::from(&samples[0]);
    let a = model.decode_greedy(&features, cfg.max_len)?;
    let b = restored.decode_greedy(&features, cfg.max_len)?;
    assert_eq!(a, b);
    println!("both copies decode: \"{}\"", vocab.decode(&a).join(" "));

    let resaved = dir.join("model2.semp");
    save_model(&resaved, &restored)?;
    assert_eq!(std::fs::read(&path)?, std::fs::read(&resaved)?);
    println!("re-serialized checkpoint is byte-identical");
    Ok(())
}
