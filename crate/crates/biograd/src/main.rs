use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use biograd::checkpoint::{self, Checkpoint};
use biograd::config::{parse_config, RunConfig};
use biograd::error::Result;
use biograd::trainer::{evaluate, export_hidden_counts, train, write_epoch_csv, Corpus, Split};

#[derive(Parser)]
#[command(name = "biograd", about = "Spiking-network trainer with local three-factor learning")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(clap::Args)]
struct CommonOpts {
    /// Config file of `key = value` lines
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override the run seed
    #[arg(long)]
    seed: Option<u64>,
    /// Override the dataset (mnist or nmnist)
    #[arg(long)]
    dataset: Option<String>,
    /// Override the data directory
    #[arg(long)]
    data_dir: Option<PathBuf>,
    /// Output directory for logs and checkpoints
    #[arg(long)]
    out: Option<PathBuf>,
    /// Extra `key=value` config overrides
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train a network and write per-epoch logs plus the best checkpoint
    Train(CommonOpts),
    /// Report test accuracy of a saved checkpoint
    Eval {
        #[command(flatten)]
        common: CommonOpts,
        /// Checkpoint to evaluate
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Run a small comparison study and print one result line per setting
    Ablate {
        #[command(flatten)]
        common: CommonOpts,
        #[arg(long, value_enum)]
        study: Study,
    },
    /// Dump per-sample hidden/output spike counts for a trained network
    ExportActivations {
        #[command(flatten)]
        common: CommonOpts,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Cap on exported samples (0 = whole split)
        #[arg(long, default_value_t = 0)]
        limit: usize,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Study {
    /// Sleep phase on vs off
    Sleep,
    /// Sleep cadence: a phase every 1, 2, 4, 8 batches
    SleepFreq,
    /// Weight/trace precision: 8, 16, 32 bits
    Precision,
    /// Depth: one vs two hidden layers
    Layers,
}

fn build_config(common: &CommonOpts) -> Result<RunConfig> {
    let mut overrides: Vec<(String, String)> = Vec::new();
    for kv in &common.set {
        let (k, v) = kv.split_once('=').ok_or_else(|| {
            biograd::Error::Config(format!("--set expects KEY=VALUE, got '{kv}'"))
        })?;
        overrides.push((k.trim().to_string(), v.trim().to_string()));
    }
    if let Some(ds) = &common.dataset {
        overrides.push(("dataset".into(), ds.clone()));
    }
    if let Some(seed) = common.seed {
        overrides.push(("seed".into(), seed.to_string()));
    }
    if let Some(dir) = &common.data_dir {
        overrides.push(("data_dir".into(), dir.display().to_string()));
    }
    if let Some(out) = &common.out {
        overrides.push(("out_dir".into(), out.display().to_string()));
    }
    parse_config(common.config.as_deref(), &overrides)
}

fn run_train(cfg: &RunConfig) -> Result<()> {
    std::fs::create_dir_all(&cfg.out_dir)
        .map_err(|e| biograd::Error::io(&cfg.out_dir, e))?;
    let corpus = Corpus::load(cfg)?;
    let ckpt_path = cfg.out_dir.join("best.ckpt");
    let mut best_val = f64::NEG_INFINITY;
    let outcome = train(cfg, &corpus, |stats, params| {
        let angles: Vec<String> = stats.align_deg.iter().map(|a| format!("{a:.2}")).collect();
        println!(
            "epoch {:>3}  train {:.4}  val {:.4}  align [{}]",
            stats.epoch,
            stats.train_acc,
            stats.val_acc,
            angles.join(", ")
        );
        if stats.val_acc > best_val {
            best_val = stats.val_acc;
            checkpoint::save(
                &ckpt_path,
                &Checkpoint { params: params.clone(), seed: cfg.seed, epoch: stats.epoch as u32 },
            )?;
        }
        Ok(())
    })?;
    write_epoch_csv(&cfg.out_dir.join("epochs.csv"), &outcome.history)?;
    println!(
        "best val {:.4} at epoch {}; test {:.4}",
        outcome.best_val, outcome.best_epoch, outcome.test_acc
    );
    Ok(())
}

fn run_eval(cfg: &RunConfig, ckpt: &PathBuf) -> Result<()> {
    let loaded = checkpoint::load(ckpt)?;
    let mut cfg = cfg.clone();
    cfg.arch = loaded.params.dims.clone();
    let corpus = Corpus::load(&cfg)?;
    let acc = evaluate(&loaded.params, &corpus, Split::Test, &cfg)?;
    println!("test accuracy {acc:.4}");
    Ok(())
}

fn run_ablate(base: &RunConfig, study: Study) -> Result<()> {
    let corpus = Corpus::load(base)?;
    let variants: Vec<(String, RunConfig)> = match study {
        Study::Sleep => ["on", "off"]
            .iter()
            .map(|&mode| {
                let mut cfg = base.clone();
                cfg.sleep_enabled = mode == "on";
                (format!("sleep={mode}"), cfg)
            })
            .collect(),
        Study::SleepFreq => [1usize, 2, 4, 8]
            .iter()
            .map(|&x| {
                let mut cfg = base.clone();
                cfg.sleep_enabled = true;
                cfg.sleep.batches_per_phase = x;
                (format!("sleep_every={x}"), cfg)
            })
            .collect(),
        Study::Precision => [8u32, 16, 32]
            .iter()
            .map(|&bits| {
                let mut cfg = base.clone();
                cfg.bits = bits;
                (format!("bits={bits}"), cfg)
            })
            .collect(),
        Study::Layers => {
            let n_in = base.arch[0];
            vec![
                (
                    "hidden=500".to_string(),
                    RunConfig { arch: vec![n_in, 500, 10], ..base.clone() },
                ),
                (
                    "hidden=500-100".to_string(),
                    RunConfig { arch: vec![n_in, 500, 100, 10], ..base.clone() },
                ),
            ]
        }
    };
    for (name, cfg) in variants {
        cfg.validate()?;
        let outcome = train(&cfg, &corpus, |_, _| Ok(()))?;
        println!(
            "{name}  best_val {:.4}  test {:.4}",
            outcome.best_val, outcome.test_acc
        );
    }
    Ok(())
}

fn run_export(cfg: &RunConfig, ckpt: &PathBuf, limit: usize) -> Result<()> {
    let loaded = checkpoint::load(ckpt)?;
    let mut cfg = cfg.clone();
    cfg.arch = loaded.params.dims.clone();
    std::fs::create_dir_all(&cfg.out_dir)
        .map_err(|e| biograd::Error::io(&cfg.out_dir, e))?;
    let corpus = Corpus::load(&cfg)?;
    let path = cfg.out_dir.join("activations.csv");
    export_hidden_counts(&path, &loaded.params, &corpus, Split::Test, &cfg, limit)?;
    println!("wrote {}", path.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = (|| -> Result<()> {
        match &cli.cmd {
            Cmd::Train(common) => run_train(&build_config(common)?),
            Cmd::Eval { common, checkpoint } => run_eval(&build_config(common)?, checkpoint),
            Cmd::Ablate { common, study } => run_ablate(&build_config(common)?, *study),
            Cmd::ExportActivations { common, checkpoint, limit } => {
                run_export(&build_config(common)?, checkpoint, *limit)
            }
        }
    })();
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
