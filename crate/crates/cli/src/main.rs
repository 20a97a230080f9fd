//! `beatgraph` command-line pipeline.
//!
//! Stages read and write plain files in one output directory:
//! `ingest → features → fit-pca → build-index → build-graph → generate → blend`,
//! with `stats` and `synth-corpus` on the side.

mod commands;
mod config;
mod error;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::config::PipelineConfig;
use crate::error::CliError;

#[derive(Debug, Parser)]
#[command(name = "beatgraph", version, about = "Graph-based co-speech beat gesture synthesis")]
struct Cli {
    /// TOML pipeline configuration; unknown keys are rejected.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the generation seed (and the synthetic corpus seed).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory for stage files.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Repeat for more detail.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Segment a corpus directory and compute raw features.
    Ingest {
        /// Corpus directory (one subdirectory per recording).
        #[arg(long)]
        corpus: Option<PathBuf>,
    },
    /// Assemble per-frame features, fit z-scores and split half windows.
    Features,
    /// Fit per-modality PCA and write reduced feature bundles.
    FitPca,
    /// Build the nearest-neighbor indexes.
    BuildIndex,
    /// Build the gesture graph and its frame store.
    BuildGraph,
    /// Generate a motion timeline for new speech.
    Generate(GenerateArgs),
    /// Blend iconic clips into a timeline at explicit placements.
    Blend(BlendArgs),
    /// Print graph statistics.
    Stats {
        #[arg(long)]
        graph: Option<PathBuf>,
    },
    /// Write a deterministic synthetic corpus.
    SynthCorpus(SynthArgs),
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// Graph file; its frame store is read from `frames.bin` beside it.
    #[arg(long)]
    pub graph: Option<PathBuf>,
    /// Precomputed query features (jsonl, audio and text vectors per segment).
    #[arg(long, conflicts_with_all = ["audio", "words"])]
    pub queries: Option<PathBuf>,
    /// Speech audio (wav), featurized with the fitted model.
    #[arg(long, requires = "words")]
    pub audio: Option<PathBuf>,
    /// Word timings for `--audio` (jsonl with word, start_s, end_s).
    #[arg(long, requires = "audio")]
    pub words: Option<PathBuf>,
    /// Context vectors for `--audio` when the text encoder is precomputed.
    #[arg(long)]
    pub text_context: Option<PathBuf>,
    /// Fitted feature model (defaults to `pca_models.json` in the output directory).
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Timeline directory (defaults to `timeline/` in the output directory).
    #[arg(long)]
    pub timeline_dir: Option<PathBuf>,
    /// Also write `frames.csv`.
    #[arg(long)]
    pub csv: bool,
}

#[derive(Debug, Args)]
pub struct BlendArgs {
    /// Input timeline directory (defaults to `timeline/` in the output directory).
    #[arg(long)]
    pub timeline: Option<PathBuf>,
    /// Iconic library directory (`iconic.jsonl` + `frames.bin`).
    #[arg(long)]
    pub library: PathBuf,
    /// `placements.json`: `[{"t_s": .., "clip_id": .., "blend_s": ..}]`.
    #[arg(long)]
    pub placements: PathBuf,
    /// Output directory (defaults to `blended/` in the output directory).
    #[arg(long)]
    pub timeline_out: Option<PathBuf>,
    #[arg(long)]
    pub csv: bool,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 2)]
    pub sources: usize,
    /// Seconds per recording.
    #[arg(long, default_value_t = 60.0)]
    pub duration: f64,
    #[arg(long, default_value_t = 30.0)]
    pub fps: f64,
    #[arg(long, default_value_t = 8)]
    pub joints: usize,
    /// Also write an iconic library with three variants per label under `iconic/`.
    #[arg(long, value_delimiter = ',')]
    pub iconic_labels: Vec<String>,
}

fn resolve(cli: &Cli) -> Result<PipelineConfig, CliError> {
    let mut cfg = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.generation.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.out = out.clone();
    }
    if let Command::Ingest { corpus: Some(c) } = &cli.command {
        cfg.corpus = Some(c.clone());
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), CliError> {
    let cfg = resolve(&cli)?;
    match &cli.command {
        Command::Ingest { .. } => commands::ingest(&cfg),
        Command::Features => commands::features(&cfg),
        Command::FitPca => commands::fit_pca(&cfg),
        Command::BuildIndex => commands::build_index(&cfg),
        Command::BuildGraph => commands::build_graph(&cfg),
        Command::Generate(args) => commands::generate(&cfg, args),
        Command::Blend(args) => commands::blend(&cfg, args),
        Command::Stats { graph } => commands::stats(&cfg, graph.as_deref()),
        Command::SynthCorpus(args) => commands::synth_corpus(&cfg, args, cli.seed.unwrap_or(0)),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        2 => "debug",
        _ => "trace",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
