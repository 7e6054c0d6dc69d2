//! `gar`: prepare modalities, train streams, fuse and evaluate from one JSON
//! run configuration.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use gar_core::config::RunConfig;
use gar_core::datasets::SyntheticPreset;
use gar_core::fusion::FusionMode;
use gar_core::io_util;
use gar_core::pipeline::{self, Split};
use gar_core::{Error, ModalityKind, Result};
use serde_json::{json, Value};

#[derive(Parser, Debug)]
#[command(name = "gar", version, about = "Multi-stream group activity recognition")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

/// Options shared by every subcommand. Each flag overrides one config key.
#[derive(Args, Debug)]
struct Common {
    /// Run configuration (JSON).
    #[arg(long, short, global = true)]
    config: Option<PathBuf>,
    /// Override any config key, e.g. `--set streams.0.lr=1e-4`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    epochs: Option<usize>,
    #[arg(long, global = true)]
    batch_size: Option<usize>,
    #[arg(long, global = true)]
    deterministic: Option<bool>,
    #[arg(long, global = true)]
    output_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    cache_dir: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a ready-to-run config for a synthetic preset.
    Init {
        #[arg(long, value_enum, default_value = "motion")]
        preset: Preset,
        /// Directory that receives `config.json`, the data, cache and outputs.
        #[arg(long)]
        dir: PathBuf,
    },
    /// Render the synthetic dataset described by the config.
    GenSynthetic,
    /// Compute and cache one modality for every clip.
    Prepare {
        #[arg(long)]
        modality: ModalityKind,
    },
    /// Train one stream and dump its train and test scores.
    Train {
        #[arg(long)]
        stream: ModalityKind,
    },
    /// Re-score clips with a trained stream checkpoint.
    DumpScores {
        /// Defaults to every configured stream.
        #[arg(long)]
        stream: Option<ModalityKind>,
        /// Defaults to both splits.
        #[arg(long, value_enum)]
        split: Option<SplitArg>,
    },
    /// Fuse stream score dumps into group and action predictions.
    Fuse {
        #[arg(long)]
        mode: Option<FusionMode>,
        /// Use the spatial streams only.
        #[arg(long)]
        single_frame: bool,
    },
    /// Score fused predictions against the test split.
    Evaluate {
        /// Merge crossing and walking into moving.
        #[arg(long)]
        merge_moving: bool,
        #[arg(long)]
        single_frame: bool,
    },
    /// Write CSV tables and SVG figures for the run.
    Report,
    /// Generate (if configured), prepare, train, fuse and evaluate.
    Run,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum Preset {
    Motion,
    Context,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum SplitArg {
    Train,
    Test,
}

impl Common {
    fn overrides(&self) -> Vec<String> {
        let mut out = Vec::new();
        let mut push = |key: &str, value: Value| out.push(format!("{key}={value}"));
        if let Some(v) = self.seed {
            push("seed", json!(v));
        }
        if let Some(v) = self.epochs {
            push("epochs", json!(v));
        }
        if let Some(v) = self.batch_size {
            push("batch_size", json!(v));
        }
        if let Some(v) = self.deterministic {
            push("deterministic", json!(v));
        }
        if let Some(v) = &self.output_dir {
            push("output_dir", json!(v));
        }
        if let Some(v) = &self.cache_dir {
            push("cache_dir", json!(v));
        }
        out.extend(self.set.iter().cloned());
        out
    }

    fn load(&self) -> Result<RunConfig> {
        let path = self.config.as_deref().ok_or_else(|| Error::Config("--config is required".into()))?;
        RunConfig::load(path, &self.overrides())
    }
}

fn paths(files: &[PathBuf]) -> Value {
    json!(files.iter().map(|p| p.display().to_string()).collect::<Vec<_>>())
}

fn execute(cli: &Cli) -> Result<Value> {
    if let Command::Init { preset, dir } = &cli.command {
        return init(*preset, dir, &cli.common);
    }
    let cfg = cli.common.load()?;
    let layout = pipeline::Layout(&cfg);
    Ok(match &cli.command {
        Command::Init { .. } => unreachable!("handled above"),
        Command::GenSynthetic => {
            let ds = pipeline::gen_synthetic(&cfg)?;
            json!({ "root": ds.root, "train_clips": ds.train.len(), "test_clips": ds.test.len() })
        }
        Command::Prepare { modality } => {
            let n = pipeline::prepare(&cfg, *modality)?;
            json!({ "modality": modality, "clips": n, "cache_dir": cfg.cache_dir.join(modality.as_str()) })
        }
        Command::Train { stream } => {
            let history = pipeline::train(&cfg, *stream)?;
            json!({
                "stream": stream,
                "epochs": history.len(),
                "final_loss": history.last().map(|r| r.loss),
                "checkpoint": layout.checkpoint(*stream),
            })
        }
        Command::DumpScores { stream, split } => {
            let kinds: Vec<ModalityKind> = match stream {
                Some(k) => vec![*k],
                None => cfg.streams.iter().map(|s| s.modality).collect(),
            };
            let splits = match split {
                Some(SplitArg::Train) => vec![Split::Train],
                Some(SplitArg::Test) => vec![Split::Test],
                None => vec![Split::Train, Split::Test],
            };
            let mut written = Vec::new();
            for &k in &kinds {
                for &s in &splits {
                    pipeline::dump_scores(&cfg, k, s)?;
                    written.push(layout.scores(k, s));
                }
            }
            json!({ "written": paths(&written) })
        }
        Command::Fuse { mode, single_frame } => {
            let mode = mode.unwrap_or(cfg.fusion.mode);
            let preds = pipeline::fuse(&cfg, mode, *single_frame)?;
            json!({ "mode": mode, "clips": preds.len(), "predictions": layout.predictions() })
        }
        Command::Evaluate { merge_moving, single_frame } => {
            let m = pipeline::evaluate_run(&cfg, *merge_moving, *single_frame)?;
            json!({
                "mca": m.evaluation.mca,
                "mpca": m.evaluation.mpca,
                "action_accuracy": m.evaluation.action_accuracy,
                "clips": m.evaluation.group.total(),
                "metrics": layout.metrics(),
            })
        }
        Command::Report => json!({ "written": paths(&pipeline::report(&cfg)?) }),
        Command::Run => {
            let summary = pipeline::run_all(&cfg)?;
            json!({
                "mca": summary.metrics.evaluation.mca,
                "mpca": summary.metrics.evaluation.mpca,
                "streams": summary.histories.iter().map(|(k, h)| json!({ "stream": k, "final_loss": h.last().map(|r| r.loss) })).collect::<Vec<_>>(),
            })
        }
    })
}

fn init(preset: Preset, dir: &Path, common: &Common) -> Result<Value> {
    let preset = match preset {
        Preset::Motion => SyntheticPreset::Motion,
        Preset::Context => SyntheticPreset::Context,
    };
    // paths are written relative to the config file
    let mut cfg = RunConfig::synthetic(preset, "");
    cfg = cfg.with_overrides(&common.overrides())?;
    let path = dir.join("config.json");
    io_util::write_json(&path, &cfg)?;
    Ok(json!({ "config": path }))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => e.exit(),
        Err(e) => {
            let message = e.render().to_string();
            let first = message.lines().next().unwrap_or_default().trim_start_matches("error: ");
            eprintln!("{}", json!({ "error": "usage", "message": first }));
            return ExitCode::from(2);
        }
    };
    match execute(&cli) {
        Ok(v) => {
            println!("{v}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", json!({ "error": e.kind(), "message": e.to_string() }));
            ExitCode::FAILURE
        }
    }
}
