//! Operator CLI: data generation, training (with sweeps), evaluation,
//! hard-set construction and static report emission.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::Deserialize;

use mmbt::blocks::EncoderConfig;
use mmbt::checkpoint::{load_checkpoint, save_checkpoint};
use mmbt::data::{generate_dataset, read_dataset, write_dataset, GenSpec, TaskKind};
use mmbt::encoders::{build_vocab, ImageEncoderConfig};
use mmbt::error::Error;
use mmbt::eval::{
    build_hard_set, evaluate, read_predictions, score_predictions, write_predictions,
    HardnessVariant, Target,
};
use mmbt::model::{Model, ModelConfig, ModelKind};
use mmbt::report::{
    history_report, read_history, read_sweep_table, sweep_report, write_history, write_sweep_table,
};
use mmbt::train::{sweep, train, FreezeSchedule, SweepCell, TrainConfig};

#[derive(Parser)]
#[command(name = "mmbt", about = "Multimodal bitransformer workbench", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic multimodal dataset splits from a spec file.
    GenerateData {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model (sweeping any configured grids) and write the best
    /// checkpoint, history and sweep table.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Override the learning-rate grid with a single value.
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        freeze_text: Option<usize>,
        #[arg(long)]
        freeze_image: Option<usize>,
        #[arg(long)]
        num_image_embeddings: Option<usize>,
    },
    /// Evaluate a checkpoint on a dataset file.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build a hard test set from two unimodal prediction files.
    BuildHardset {
        #[arg(long)]
        img_preds: PathBuf,
        #[arg(long)]
        bow_preds: PathBuf,
        #[arg(long, default_value = "ground_truth")]
        variant: String,
        #[arg(long, default_value_t = 0.10)]
        fraction: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Emit tables and SVG curves from history and/or sweep files.
    Report {
        #[arg(long)]
        history: Option<PathBuf>,
        #[arg(long)]
        sweep: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::InvalidSpec(_) => 2,
        Error::EmptySplit(_) | Error::ParseError { .. } | Error::EmptyInput(_) | Error::Io(_) => 3,
        Error::ConfigMismatch(_) | Error::Checkpoint(_) | Error::UnknownLabel(_) => 4,
        Error::IdMismatch(_) => 5,
        _ => 1,
    }
}

fn default_true() -> bool {
    true
}
fn default_noise_std() -> f64 {
    0.1
}
fn default_vocab_max() -> usize {
    1000
}

#[derive(Deserialize)]
struct FileModelCfg {
    kind: ModelKind,
    task: TaskKind,
    encoder: EncoderConfig,
    image: ImageEncoderConfig,
    num_text_segments: usize,
    max_positions: usize,
    #[serde(default = "default_vocab_max")]
    vocab_max_size: usize,
    #[serde(default)]
    bow_dim: usize,
    #[serde(default = "default_true")]
    image_first: bool,
    #[serde(default = "default_noise_std")]
    extra_segment_noise_std: f64,
}

#[derive(Deserialize, Default)]
struct SweepAxes {
    #[serde(default)]
    text_frozen_epochs: Vec<usize>,
    #[serde(default)]
    image_frozen_epochs: Vec<usize>,
    #[serde(default)]
    num_image_embeddings: Vec<usize>,
}

#[derive(Deserialize)]
struct RunConfig {
    data_dir: PathBuf,
    model: FileModelCfg,
    train: TrainConfig,
    #[serde(default)]
    sweep: Option<SweepAxes>,
}

/// Near-square K×M factorization of N for the pooling grid.
fn grid_for_n(n: usize) -> (usize, usize) {
    let mut k = (n as f64).sqrt().floor() as usize;
    while k > 1 && n % k != 0 {
        k -= 1;
    }
    (k.max(1), n / k.max(1))
}

fn run_generate(spec_path: &Path, out: &Path) -> mmbt::Result<()> {
    let text = std::fs::read_to_string(spec_path)?;
    let spec: GenSpec =
        serde_json::from_str(&text).map_err(|e| Error::InvalidSpec(e.to_string()))?;
    let gen = generate_dataset(&spec)?;
    std::fs::create_dir_all(out)?;
    write_dataset(&gen.train, &out.join("train.jsonl"))?;
    write_dataset(&gen.dev, &out.join("dev.jsonl"))?;
    write_dataset(&gen.test, &out.join("test.jsonl"))?;
    println!(
        "wrote {} train / {} dev / {} test examples to {}",
        gen.train.len(),
        gen.dev.len(),
        gen.test.len(),
        out.display()
    );
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn run_train(
    config_path: &Path,
    out: Option<PathBuf>,
    seed: Option<u64>,
    lr: Option<f64>,
    freeze_text: Option<usize>,
    freeze_image: Option<usize>,
    num_image_embeddings: Option<usize>,
) -> mmbt::Result<()> {
    let text = std::fs::read_to_string(config_path)?;
    let mut cfg: RunConfig =
        serde_json::from_str(&text).map_err(|e| Error::InvalidSpec(e.to_string()))?;
    // flags win over the config file
    if let Some(s) = seed {
        cfg.train.seed = s;
    }
    if let Some(lr) = lr {
        cfg.train.lr_grid = vec![lr];
    }
    if let Some(ft) = freeze_text {
        cfg.train.freeze.text_frozen_epochs = ft;
    }
    if let Some(fi) = freeze_image {
        cfg.train.freeze.image_frozen_epochs = fi;
    }
    let out = out.unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&out)?;

    let train_ds = read_dataset(&cfg.data_dir.join("train.jsonl"))?;
    let dev_ds = read_dataset(&cfg.data_dir.join("dev.jsonl"))?;
    if train_ds.is_empty() {
        return Err(Error::EmptySplit("train".into()));
    }
    if dev_ds.is_empty() {
        return Err(Error::EmptySplit("dev".into()));
    }

    let corpus: Vec<String> = train_ds
        .examples
        .iter()
        .flat_map(|e| e.texts.iter().cloned())
        .collect();
    let vocab = build_vocab(&corpus, cfg.model.vocab_max_size)?;
    let bow_dim = if cfg.model.bow_dim == 0 { 16 } else { cfg.model.bow_dim };
    let mut image = cfg.model.image.clone();
    if let Some(n) = num_image_embeddings {
        let (k, m) = grid_for_n(n);
        image.grid_rows = k;
        image.grid_cols = m;
    }
    let model_cfg = ModelConfig {
        kind: cfg.model.kind,
        task: cfg.model.task,
        classes: train_ds.classes.clone(),
        vocab,
        encoder: cfg.model.encoder.clone(),
        image,
        num_text_segments: cfg.model.num_text_segments,
        max_positions: cfg.model.max_positions,
        bow_dim,
        image_first: cfg.model.image_first,
        extra_segment_noise_std: cfg.model.extra_segment_noise_std,
    };

    // build the sweep grid (singleton axes when not swept)
    let axes = cfg.sweep.unwrap_or_default();
    let ft_grid = if axes.text_frozen_epochs.is_empty() || freeze_text.is_some() {
        vec![cfg.train.freeze.text_frozen_epochs]
    } else {
        axes.text_frozen_epochs
    };
    let fi_grid = if axes.image_frozen_epochs.is_empty() || freeze_image.is_some() {
        vec![cfg.train.freeze.image_frozen_epochs]
    } else {
        axes.image_frozen_epochs
    };
    let n_grid = if axes.num_image_embeddings.is_empty() || num_image_embeddings.is_some() {
        vec![model_cfg.num_image_embeddings()]
    } else {
        axes.num_image_embeddings
    };
    let mut cells = Vec::new();
    for &lr in &cfg.train.lr_grid {
        for &ft in &ft_grid {
            for &fi in &fi_grid {
                for &n in &n_grid {
                    cells.push(SweepCell {
                        lr,
                        text_frozen_epochs: ft,
                        image_frozen_epochs: fi,
                        num_image_embeddings: n,
                    });
                }
            }
        }
    }

    let mut best_run: Option<(f64, Model, mmbt::train::TrainResult)> = None;
    let base_seed = cfg.train.seed;
    let result = sweep(&cells, |cell, idx| {
        let mut mc = model_cfg.clone();
        let (k, m) = grid_for_n(cell.num_image_embeddings);
        mc.image.grid_rows = k;
        mc.image.grid_cols = m;
        let mut tc = cfg.train.clone();
        tc.seed = base_seed.wrapping_add(idx as u64);
        tc.freeze = FreezeSchedule {
            text_frozen_epochs: cell.text_frozen_epochs,
            image_frozen_epochs: cell.image_frozen_epochs,
        };
        let mut model = Model::new(mc, tc.seed)?;
        let tr = train(&mut model, &train_ds, &dev_ds, &tc, cell.lr)?;
        let metric = tr.best_metric;
        let better = best_run.as_ref().map_or(true, |(m, _, _)| metric > *m);
        if better {
            model.params = tr.best_params.clone();
            best_run = Some((metric, model, tr));
        }
        Ok(metric)
    })?;
    let (_, best_model, best_tr) = best_run.unwrap();

    save_checkpoint(&best_model, &out.join("best.ckpt"))?;
    write_history(&best_tr.history, &out.join("history.jsonl"))?;
    if cells.len() > 1 {
        write_sweep_table(&result.table, &out.join("sweep.csv"))?;
    }
    println!(
        "best epoch {} dev metric {:.6} (lr {}, freeze text {} image {}, N {})",
        best_tr.best_epoch,
        best_tr.best_metric,
        result.best.lr,
        result.best.text_frozen_epochs,
        result.best.image_frozen_epochs,
        result.best.num_image_embeddings
    );
    Ok(())
}

fn run_eval(checkpoint: &Path, data: &Path, out: &Path) -> mmbt::Result<()> {
    let model = load_checkpoint(checkpoint)?;
    let dataset = read_dataset(data)?;
    for class in &dataset.classes {
        if !model.config.classes.contains(class) {
            return Err(Error::ConfigMismatch(format!(
                "dataset class `{class}` unknown to the checkpoint"
            )));
        }
    }
    let report = evaluate(&model, &dataset)?;
    write_predictions(&report.records, out)?;
    let metrics_path = out.with_extension("metrics.json");
    std::fs::write(&metrics_path, serde_json::to_string_pretty(&report.metric)?)?;
    match model.config.task {
        TaskKind::Multiclass => println!("accuracy {:.6}", report.metric.accuracy.unwrap()),
        TaskKind::Multilabel => println!(
            "macro_f1 {:.6} micro_f1 {:.6}",
            report.metric.macro_f1.unwrap(),
            report.metric.micro_f1.unwrap()
        ),
    }
    Ok(())
}

fn run_build_hardset(
    img_preds: &Path,
    bow_preds: &Path,
    variant: &str,
    fraction: f64,
    out: &Path,
) -> mmbt::Result<()> {
    let variant: HardnessVariant = variant.parse()?;
    let img = read_predictions(img_preds)?;
    let bow = read_predictions(bow_preds)?;
    let task = match img.first().map(|r| &r.target) {
        Some(Target::Bits(_)) => TaskKind::Multilabel,
        _ => TaskKind::Multiclass,
    };
    let scored = score_predictions(&img, &bow, variant, task)?;
    let ids = build_hard_set(&scored, fraction)?;
    std::fs::write(out, ids.join("\n") + "\n")?;
    println!("{} hard ids written to {}", ids.len(), out.display());
    Ok(())
}

fn run_report(history: Option<&Path>, sweep_file: Option<&Path>, out: &Path) -> mmbt::Result<()> {
    if history.is_none() && sweep_file.is_none() {
        return Err(Error::InvalidSpec("need --history and/or --sweep".into()));
    }
    let mut written = Vec::new();
    if let Some(h) = history {
        written.extend(history_report(&read_history(h)?, out)?);
    }
    if let Some(s) = sweep_file {
        written.extend(sweep_report(&read_sweep_table(s)?, out)?);
    }
    for p in written {
        println!("wrote {}", p.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenerateData { spec, out } => run_generate(&spec, &out),
        Command::Train { config, out, seed, lr, freeze_text, freeze_image, num_image_embeddings } => {
            run_train(&config, out, seed, lr, freeze_text, freeze_image, num_image_embeddings)
        }
        Command::Eval { checkpoint, data, out } => run_eval(&checkpoint, &data, &out),
        Command::BuildHardset { img_preds, bow_preds, variant, fraction, out } => {
            run_build_hardset(&img_preds, &bow_preds, &variant, fraction, &out)
        }
        Command::Report { history, sweep, out } => {
            run_report(history.as_deref(), sweep.as_deref(), &out)
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
