//! Command-line front end: corpus synthesis, training, scoring, decoding,
//! ablation studies, annotation statistics, and gradient verification.
//! Every command is a thin wrapper over the library; `sempos <command>
//! --help` documents the knobs.

use std::collections::HashMap;
use std::error::Error;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use sempos::autodiff::{grad_check, DEFAULT_STEP, DEFAULT_TOLERANCE};
use sempos::data::embed::PseudoEmbedder;
use sempos::data::files::{
    load_annotations, load_candidates, load_corpus, load_features, save_candidates, save_corpus,
};
use sempos::data::{generate_corpus, pos_stats, CorpusParams, SceneGrammar, VideoSample};
use sempos::masking::MaskConfig;
use sempos::metrics::EvalEntry;
use sempos::model::checkpoint::{load_model, save_model};
use sempos::model::{Block, DistanceKind, Features, LossWeights, Mode, Model, ModelConfig, Wiring};
use sempos::train::ablate::{run_ablation, AblationConfig};
use sempos::train::{
    caption_targets, evaluate, score_entries, train, write_report, EvalReport, RunReport,
    TrainConfig,
};
use sempos::vocab::Vocabulary;

#[derive(Parser)]
#[command(
    name = "sempos",
    version,
    about = "Part-of-speech supervised video captioning toolkit"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize a feature file and annotation sidecar.
    GenData(GenDataArgs),
    /// Train a captioning model on a corpus.
    Train(TrainArgs),
    /// Score decoded captions against reference annotations.
    Eval(EvalArgs),
    /// Greedy-decode captions for every video in a feature file.
    Caption(CaptionArgs),
    /// Train wiring variants across seeds and compare their scores.
    Ablate(AblateArgs),
    /// Report phrase-annotation coverage of a sidecar.
    PosStats(PosStatsArgs),
    /// Verify model gradients against central finite differences.
    Gradcheck(GradcheckArgs),
}

#[derive(Args)]
struct GenDataArgs {
    /// Output feature file (binary).
    #[arg(long)]
    features: PathBuf,
    /// Output annotation sidecar (JSON lines).
    #[arg(long)]
    annotations: PathBuf,
    #[arg(long, visible_alias = "n", default_value_t = 32)]
    videos: usize,
    /// Reference captions per video.
    #[arg(long, default_value_t = 2)]
    refs: usize,
    #[arg(long, default_value_t = 8)]
    frames: usize,
    /// Detected objects per video.
    #[arg(long, default_value_t = 4)]
    objects: usize,
    /// Width of every feature stream.
    #[arg(long, default_value_t = 16)]
    concept_dim: usize,
    /// Feature noise level (standard deviation around the concept vectors).
    #[arg(long, default_value_t = 0.05)]
    noise: f64,
    #[arg(long, default_value_t = 42)]
    seed: u64,
}

#[derive(Clone, Copy, ValueEnum)]
enum DistanceArg {
    Mse,
    Cosine,
}

impl From<DistanceArg> for DistanceKind {
    fn from(d: DistanceArg) -> Self {
        match d {
            DistanceArg::Mse => DistanceKind::Mse,
            DistanceArg::Cosine => DistanceKind::Cosine,
        }
    }
}

#[derive(Args)]
struct TrainArgs {
    /// Input feature file.
    #[arg(long)]
    features: PathBuf,
    /// Input annotation sidecar.
    #[arg(long)]
    annotations: PathBuf,
    /// Output checkpoint.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Optional JSON run report.
    #[arg(long)]
    report: Option<PathBuf>,
    /// LSTM width per direction.
    #[arg(long, default_value_t = 64)]
    hidden: usize,
    /// Word-embedding and block-projection width.
    #[arg(long, default_value_t = 32)]
    embed: usize,
    /// Decode length ceiling.
    #[arg(long, default_value_t = 16)]
    max_len: usize,
    /// Projection-to-target distance.
    #[arg(long, value_enum, default_value_t = DistanceArg::Mse)]
    distance: DistanceArg,
    /// Drop an architecture stage (repeatable): verb, det-subject,
    /// aux-verb, det-object, glfb, or vfm.
    #[arg(long = "remove", value_name = "BLOCK")]
    remove: Vec<String>,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, default_value_t = 16)]
    batch: usize,
    #[arg(long, default_value_t = 300)]
    epochs: usize,
    /// Fraction of feature positions zeroed during training.
    #[arg(long, default_value_t = MaskConfig::DEFAULT_SPATIAL)]
    spatial_mask: f64,
    /// Fraction of temporal-feature columns zeroed as one band.
    #[arg(long, default_value_t = MaskConfig::DEFAULT_TEMPORAL)]
    temporal_mask: f64,
    /// Hold out every n-th video for validation (0 = none).
    #[arg(long, default_value_t = 10)]
    holdout: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
}

#[derive(Args)]
#[command(group(
    clap::ArgGroup::new("source").required(true).args(["checkpoint", "candidates"])
))]
struct EvalArgs {
    /// Reference annotation sidecar.
    #[arg(long)]
    annotations: PathBuf,
    /// Decode captions with this checkpoint (needs --features).
    #[arg(long, requires = "features")]
    checkpoint: Option<PathBuf>,
    /// Feature file for decoding.
    #[arg(long)]
    features: Option<PathBuf>,
    /// Score an existing candidate file instead of decoding.
    #[arg(long)]
    candidates: Option<PathBuf>,
    /// Save the decoded captions (checkpoint mode only).
    #[arg(long, requires = "checkpoint")]
    candidates_out: Option<PathBuf>,
    /// Optional JSON metrics report.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct CaptionArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Feature file to decode.
    #[arg(long)]
    features: PathBuf,
    /// Annotation sidecar the model was trained on (supplies the
    /// vocabulary).
    #[arg(long)]
    annotations: PathBuf,
    /// Output candidate file; omitted prints to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct AblateArgs {
    /// Run seeds, comma separated.
    #[arg(long, value_delimiter = ',', default_values_t = [1u64, 2, 3, 4, 5])]
    seeds: Vec<u64>,
    /// Wiring variants, comma separated: `full` or `no-<block>` joined
    /// with `+` (e.g. `no-verb+no-vfm`).
    #[arg(long, value_delimiter = ',', default_values_t = [
        "full".to_string(), "no-verb".to_string(), "no-glfb".to_string()
    ])]
    wirings: Vec<String>,
    #[arg(long, default_value_t = 24)]
    videos: usize,
    #[arg(long, default_value_t = 1)]
    refs: usize,
    #[arg(long, default_value_t = 6)]
    frames: usize,
    #[arg(long, default_value_t = 3)]
    objects: usize,
    #[arg(long, default_value_t = 16)]
    concept_dim: usize,
    #[arg(long, default_value_t = 0.05)]
    noise: f64,
    /// Content words per category (subjects/verbs/objects, 1-8). The
    /// benchmark grammar fixes the determinant and auxiliary so held-out
    /// scores reflect only visually grounded words.
    #[arg(long, default_value_t = 3)]
    pool: usize,
    /// Seed for the shared scene grammar (fixed across run seeds).
    #[arg(long, default_value_t = 7)]
    grammar_seed: u64,
    /// Videos in each seed's held-out evaluation corpus.
    #[arg(long, default_value_t = 12)]
    eval_videos: usize,
    #[arg(long, default_value_t = 32)]
    hidden: usize,
    #[arg(long, default_value_t = 16)]
    embed: usize,
    #[arg(long, default_value_t = 16)]
    max_len: usize,
    #[arg(long, default_value_t = 150)]
    epochs: usize,
    #[arg(long, default_value_t = 3e-3)]
    lr: f64,
    #[arg(long, default_value_t = 4)]
    batch: usize,
    /// Optional JSON study report.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct PosStatsArgs {
    #[arg(long)]
    annotations: PathBuf,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Central-difference step.
    #[arg(long, default_value_t = DEFAULT_STEP)]
    step: f64,
    /// Maximum tolerated relative error.
    #[arg(long, default_value_t = DEFAULT_TOLERANCE)]
    tolerance: f64,
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {e}");
        let mut source = e.source();
        while let Some(s) = source {
            eprintln!("  caused by: {s}");
            source = s.source();
        }
        std::process::exit(1);
    }
}

fn run(cli: Cli) -> Result<(), Box<dyn Error>> {
    match cli.command {
        Command::GenData(args) => gen_data(args),
        Command::Train(args) => cmd_train(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Caption(args) => cmd_caption(args),
        Command::Ablate(args) => cmd_ablate(args),
        Command::PosStats(args) => cmd_pos_stats(args),
        Command::Gradcheck(args) => cmd_gradcheck(args),
    }
}

/// Prefix file-level errors with the offending path; library errors
/// otherwise surface without saying which argument they came from.
fn at_path<T, E: std::fmt::Display>(
    result: Result<T, E>,
    path: &std::path::Path,
) -> Result<T, Box<dyn Error>> {
    result.map_err(|e| format!("{}: {e}", path.display()).into())
}

fn load_corpus_at(
    features: &std::path::Path,
    annotations: &std::path::Path,
) -> Result<Vec<VideoSample>, Box<dyn Error>> {
    load_corpus(features, annotations)
        .map_err(|e| format!("{} + {}: {e}", features.display(), annotations.display()).into())
}

fn build_vocab(samples: &[VideoSample]) -> Vocabulary {
    Vocabulary::build(
        samples
            .iter()
            .flat_map(|s| s.references.iter().map(|r| r.tokens.as_slice())),
    )
}

fn parse_wiring(label: &str) -> Result<Wiring, Box<dyn Error>> {
    let label = label.trim();
    if label.eq_ignore_ascii_case("full") {
        return Ok(Wiring::full());
    }
    let mut wiring = Wiring::full();
    for part in label.split('+') {
        let name = part.trim().strip_prefix("no-").ok_or_else(|| {
            format!("wiring {label:?}: expected `full` or `no-<block>` terms joined with `+`")
        })?;
        wiring.remove(Block::parse(name)?);
    }
    Ok(wiring)
}

fn print_eval(report: &EvalReport) {
    println!("n_videos={}", report.n_videos);
    println!("bleu4={:.6}", report.bleu4);
    println!("rouge_l={:.6}", report.rouge_l);
    println!("cider={:.6}", report.cider);
    println!("meteor={:.6}", report.meteor);
    match report.gs_perplexity {
        Some(p) => println!("gs_perplexity={p:.6}"),
        None => println!("gs_perplexity=n/a"),
    }
}

fn gen_data(args: GenDataArgs) -> Result<(), Box<dyn Error>> {
    let grammar = SceneGrammar::desk_default(args.concept_dim, args.noise, args.seed);
    let params = CorpusParams {
        n_videos: args.videos,
        refs_per_video: args.refs,
        frames: args.frames,
        objects_per_video: args.objects,
        seed: args.seed,
    };
    let samples = generate_corpus(&grammar, &params)?;
    save_corpus(&args.features, &args.annotations, &samples)
        .map_err(|e| format!("{} + {}: {e}", args.features.display(), args.annotations.display()))?;
    let stats = pos_stats(samples.iter().flat_map(|s| &s.references))?;
    println!(
        "wrote {} videos x {} refs to {} + {}",
        samples.len(),
        args.refs,
        args.features.display(),
        args.annotations.display()
    );
    println!(
        "captions={} mean_tokens={:.2} verb_pct={:.1} det_subject_pct={:.1}",
        stats.captions, stats.mean_tokens, stats.verb_pct, stats.det_subject_pct
    );
    Ok(())
}

fn cmd_train(args: TrainArgs) -> Result<(), Box<dyn Error>> {
    let samples = load_corpus_at(&args.features, &args.annotations)?;
    let vocab = build_vocab(&samples);

    let mut cfg = ModelConfig::for_corpus(&samples, vocab.len())?;
    cfg.hidden = args.hidden;
    cfg.embed = args.embed;
    cfg.max_len = args.max_len;
    cfg.distance = args.distance.into();

    let mut wiring = Wiring::full();
    for name in &args.remove {
        wiring.remove(Block::parse(name)?);
    }

    let model = Model::new(cfg, wiring, LossWeights::default(), args.seed)?;
    let embedder = PseudoEmbedder::new(cfg.embed, args.seed);
    let targets = caption_targets(&samples, &vocab, &embedder)?;

    let train_cfg = TrainConfig {
        learning_rate: args.lr,
        batch_size: args.batch,
        epochs: args.epochs,
        seed: args.seed,
        masks: MaskConfig::new(args.spatial_mask, args.temporal_mask)?,
        holdout_every: args.holdout,
        ..TrainConfig::default()
    };

    println!(
        "training wiring={} params={} videos={} vocab={}",
        wiring.label(),
        model.param_count(),
        samples.len(),
        vocab.len()
    );
    let run = train(&model, &samples, &targets, &train_cfg)?;
    let stride = (args.epochs / 10).max(1);
    for r in &run.epochs {
        if r.epoch == 1 || r.epoch % stride == 0 || r.epoch == args.epochs {
            println!(
                "epoch {:>4}  train {:>9.4}  caption {:>9.4}  val {:>9.4}",
                r.epoch, r.train.total, r.train.caption, r.val_total
            );
        }
    }
    println!(
        "best epoch {} (val {:.4}), wall {:.1}s",
        run.best_epoch, run.best_val, run.wall_secs
    );

    // Score the held-out videos (the whole corpus when nothing is held
    // out) with the restored best parameters.
    let by_id: HashMap<&str, &VideoSample> =
        samples.iter().map(|s| (s.video_id.as_str(), s)).collect();
    let holdout: Vec<VideoSample> = run
        .holdout_videos
        .iter()
        .map(|id| (*by_id[id.as_str()]).clone())
        .collect();
    let (eval, _) = evaluate(&model, &holdout, &vocab)?;
    print_eval(&eval);

    at_path(save_model(&args.checkpoint, &model), &args.checkpoint)?;
    println!("checkpoint -> {}", args.checkpoint.display());
    if let Some(path) = &args.report {
        let report = RunReport {
            model: cfg,
            wiring: wiring.label(),
            weights: model.weights(),
            train: train_cfg,
            best_epoch: run.best_epoch,
            best_val: run.best_val,
            train_videos: run.train_videos,
            holdout_videos: run.holdout_videos,
            epochs: run.epochs,
            eval,
        };
        at_path(write_report(path, &report), path)?;
        println!("report -> {}", path.display());
    }
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> Result<(), Box<dyn Error>> {
    let report = if let Some(checkpoint) = &args.checkpoint {
        let features = args.features.as_ref().expect("clap enforces --features");
        let samples = load_corpus_at(features, &args.annotations)?;
        let model = at_path(load_model(checkpoint), checkpoint)?;
        let vocab = build_vocab(&samples);
        if vocab.len() != model.config().vocab {
            return Err(format!(
                "annotations define {} vocabulary tokens but the checkpoint was trained with {}; \
                 pass the sidecar the model was trained on",
                vocab.len(),
                model.config().vocab
            )
            .into());
        }
        let (report, candidates) = evaluate(&model, &samples, &vocab)?;
        if let Some(out) = &args.candidates_out {
            at_path(save_candidates(out, &candidates), out)?;
            println!("candidates -> {}", out.display());
        }
        report
    } else {
        let path = args.candidates.as_ref().expect("clap enforces source");
        let candidates = at_path(load_candidates(path), path)?;
        let annotations = at_path(load_annotations(&args.annotations), &args.annotations)?;
        let refs: HashMap<String, Vec<Vec<String>>> = annotations
            .into_iter()
            .map(|r| {
                let tokens = r.captions.iter().map(|c| c.tokens.clone()).collect();
                (r.video_id, tokens)
            })
            .collect();
        let mut entries = Vec::with_capacity(candidates.len());
        for (video_id, candidate) in candidates {
            let references = refs
                .get(&video_id)
                .ok_or_else(|| format!("candidate video {video_id:?} has no annotations"))?
                .clone();
            entries.push(EvalEntry {
                video_id,
                candidate,
                references,
            });
        }
        score_entries(entries)?
    };

    print_eval(&report);
    if let Some(path) = &args.report {
        let mut text = serde_json::to_string_pretty(&report)?;
        text.push('\n');
        at_path(std::fs::write(path, text), path)?;
        println!("report -> {}", path.display());
    }
    Ok(())
}

fn cmd_caption(args: CaptionArgs) -> Result<(), Box<dyn Error>> {
    let model = at_path(load_model(&args.checkpoint), &args.checkpoint)?;
    let records = at_path(load_features(&args.features), &args.features)?;
    let annotations = at_path(load_annotations(&args.annotations), &args.annotations)?;
    let vocab = Vocabulary::build(
        annotations
            .iter()
            .flat_map(|r| r.captions.iter().map(|c| c.tokens.as_slice())),
    );
    if vocab.len() != model.config().vocab {
        return Err(format!(
            "annotations define {} vocabulary tokens but the checkpoint was trained with {}",
            vocab.len(),
            model.config().vocab
        )
        .into());
    }

    let mut candidates = Vec::with_capacity(records.len());
    for rec in &records {
        let features = Features {
            spatial: &rec.spatial,
            temporal: &rec.temporal,
            objects: &rec.objects,
        };
        let ids = model.decode_greedy(&features, model.config().max_len)?;
        candidates.push((rec.video_id.clone(), vocab.decode(&ids)));
    }
    match &args.out {
        Some(path) => {
            at_path(save_candidates(path, &candidates), path)?;
            println!("captions -> {}", path.display());
        }
        None => {
            for (id, tokens) in &candidates {
                println!("{id}\t{}", tokens.join(" "));
            }
        }
    }
    Ok(())
}

fn cmd_ablate(args: AblateArgs) -> Result<(), Box<dyn Error>> {
    let grammar =
        SceneGrammar::desk_benchmark(args.pool, args.concept_dim, args.noise, args.grammar_seed);
    let mut wirings = Vec::with_capacity(args.wirings.len());
    for label in &args.wirings {
        wirings.push(parse_wiring(label)?);
    }
    let cfg = AblationConfig {
        seeds: args.seeds.clone(),
        corpus: CorpusParams {
            n_videos: args.videos,
            refs_per_video: args.refs,
            frames: args.frames,
            objects_per_video: args.objects,
            seed: 0, // overridden per run seed
        },
        eval_videos: args.eval_videos,
        hidden: args.hidden,
        embed: args.embed,
        max_len: args.max_len,
        train: TrainConfig {
            learning_rate: args.lr,
            batch_size: args.batch,
            epochs: args.epochs,
            holdout_every: 0,
            ..TrainConfig::default()
        },
    };

    let report = run_ablation(&grammar, &wirings, &cfg)?;
    for row in &report.rows {
        let cells: Vec<String> = row
            .cells
            .iter()
            .map(|c| format!("{}={:.4}", c.wiring, c.eval.cider))
            .collect();
        println!("seed={} cider: {}", row.seed, cells.join(" "));
    }
    for wiring in &report.wirings {
        if let Some(mean) = report.mean_cider(wiring) {
            println!("mean_cider[{wiring}]={mean:.4}");
        }
    }
    if let Some(full) = report.wirings.first() {
        for variant in report.wirings.iter().skip(1) {
            println!(
                "wins_or_ties[{full} >= {variant}]={}/{}",
                report.cider_wins_or_ties(full, variant),
                report.rows.len()
            );
        }
    }
    if let Some(path) = &args.report {
        let mut text = serde_json::to_string_pretty(&report)?;
        text.push('\n');
        at_path(std::fs::write(path, text), path)?;
        println!("report -> {}", path.display());
    }
    Ok(())
}

fn cmd_pos_stats(args: PosStatsArgs) -> Result<(), Box<dyn Error>> {
    let annotations = at_path(load_annotations(&args.annotations), &args.annotations)?;
    let stats = pos_stats(annotations.iter().flat_map(|r| &r.captions))?;
    println!("captions={}", stats.captions);
    println!("mean_tokens={:.4}", stats.mean_tokens);
    println!("det_subject_pct={:.2}", stats.det_subject_pct);
    println!("aux_verb_pct={:.2}", stats.aux_verb_pct);
    println!("verb_pct={:.2}", stats.verb_pct);
    println!("det_object_pct={:.2}", stats.det_object_pct);
    Ok(())
}

fn cmd_gradcheck(args: GradcheckArgs) -> Result<(), Box<dyn Error>> {
    // A desk-sized corpus and model keep the coordinate sweep fast while
    // still exercising every block of the full wiring.
    let grammar = SceneGrammar::desk_default(3, 0.02, args.seed);
    let samples = generate_corpus(
        &grammar,
        &CorpusParams {
            n_videos: 2,
            refs_per_video: 1,
            frames: 2,
            objects_per_video: 2,
            seed: args.seed,
        },
    )?;
    let vocab = build_vocab(&samples);
    let mut cfg = ModelConfig::for_corpus(&samples, vocab.len())?;
    cfg.hidden = 3;
    cfg.embed = 4;
    cfg.max_len = 6;

    let model = Model::new(cfg, Wiring::full(), LossWeights::default(), args.seed)?;
    let embedder = PseudoEmbedder::new(cfg.embed, args.seed);
    let targets = caption_targets(&samples, &vocab, &embedder)?;

    let features = Features::from(&samples[0]);
    let target = &targets[0][0];
    let loss = || {
        model
            .forward(&features, target, Mode::Eval, None)
            .map(|f| f.loss)
    };
    let params: Vec<_> = model.named_params().into_iter().map(|(_, p)| p).collect();
    let coords: usize = params.iter().map(|p| p.numel()).sum();
    let worst = grad_check(loss, &params, args.step)?;

    let ok = worst < args.tolerance;
    println!(
        "wiring=full coords={} worst_rel_err={:.3e} tolerance={:.1e} status={}",
        coords,
        worst,
        args.tolerance,
        if ok { "ok" } else { "FAIL" }
    );
    if !ok {
        return Err(format!(
            "gradient check failed: worst relative error {worst:.3e} exceeds {:.1e}",
            args.tolerance
        )
        .into());
    }
    Ok(())
}
