//! Train the full wiring and two cut-down variants across three seeds and
//! compare held-out CIDEr. A miniature version of the `ablate` command.

use sempos::data::{CorpusParams, SceneGrammar};
use sempos::model::{Block, Wiring};
use sempos::train::ablate::{run_ablation, AblationConfig};
use sempos::train::TrainConfig;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let grammar = SceneGrammar::desk_default(10, 0.05, 7);
    let wirings = [
        Wiring::full(),
        Wiring::without(&[Block::Verb]),
        Wiring::without(&[Block::Glfb]),
    ];
    let cfg = AblationConfig {
        seeds: vec![1, 2, 3],
        corpus: CorpusParams {
            n_videos: 8,
            refs_per_video: 1,
            frames: 4,
            objects_per_video: 2,
            seed: 0, // overridden per run seed
        },
        eval_videos: 6,
        hidden: 12,
        embed: 12,
        max_len: 10,
        train: TrainConfig {
            learning_rate: 3e-3,
            batch_size: 4,
            epochs: 15,
            holdout_every: 0,
            ..TrainConfig::default()
        },
    };

    let report = run_ablation(&grammar, &wirings, &cfg)?;
    for row in &report.rows {
        print!("seed {}:", row.seed);
        for cell in &row.cells {
            print!("  {} {:.3}", cell.wiring, cell.eval.cider);
        }
        println!();
    }
    for wiring in &report.wirings {
        println!(
            "mean cider [{wiring}] = {:.3}",
            report.mean_cider(wiring).unwrap()
        );
    }
    let full = &report.wirings[0];
    for variant in &report.wirings[1..] {
        println!(
            "full >= {variant} in {}/{} seeds",
            report.cider_wins_or_ties(full, variant),
            report.rows.len()
        );
    }
    Ok(())
}
