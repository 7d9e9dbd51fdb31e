use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

mod commands;

#[derive(Parser)]
#[command(name = "bevloc", version, about = "BEV-grid place recognition and metric localization")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset from a benchmark or world config.
    SynthGen {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a decoder weight archive.
    WeightsInit {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = Preset::ChannelCentered)]
        preset: Preset,
        #[arg(long, default_value_t = 16)]
        channels: usize,
        /// Seed for the random preset.
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Decode all map frames of a dataset into a descriptor index.
    IndexBuild {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        weights: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Retrieve, rerank and localize every query frame of a dataset.
    GlobalLocalize {
        #[arg(long)]
        index: PathBuf,
        #[arg(long)]
        queries: PathBuf,
        #[arg(long)]
        weights: PathBuf,
        #[arg(long, default_value_t = bevloc::localizer::DEFAULT_TOP_K)]
        topk: usize,
        #[arg(long)]
        report: PathBuf,
    },
    /// Detect loop pairs among indexed frames and estimate their poses.
    LoopDetect {
        #[arg(long)]
        index: PathBuf,
        #[arg(long, default_value_t = bevloc::localizer::DEFAULT_LOOP_THRESHOLD)]
        threshold: f64,
        #[arg(long)]
        report: PathBuf,
        /// Dataset to read source grids from; defaults to the one the index was built from.
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Defaults to the weights the index was built with.
        #[arg(long)]
        weights: Option<PathBuf>,
    },
    /// Metric localization on listed (source_id, target_id) pairs.
    PoseEstimate {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        pairs: PathBuf,
        #[arg(long)]
        weights: PathBuf,
        #[arg(long)]
        report: PathBuf,
    },
    /// Compute every metric of a report against a dataset manifest.
    Eval {
        #[arg(long)]
        report: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        metrics: PathBuf,
    },
    /// Check losses against scalar oracles and gradients against finite differences.
    VerifyLosses {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Draw report edges over frame positions as SVG.
    Plot {
        #[arg(long)]
        report: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Preset {
    ChannelCentered,
    Identity,
    Random,
}

fn init_threads() -> Result<()> {
    let Ok(v) = std::env::var("BEVLOC_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .with_context(|| format!("BEVLOC_THREADS must be a positive integer, got {v:?}"))?;
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    Ok(())
}

fn run(cli: Cli) -> Result<bool> {
    init_threads()?;
    match cli.command {
        Command::SynthGen { config, out } => commands::synth_gen(&config, &out)?,
        Command::WeightsInit {
            out,
            preset,
            channels,
            seed,
        } => commands::weights_init(&out, preset, channels, seed)?,
        Command::IndexBuild { dataset, weights, out } => commands::index_build(&dataset, &weights, &out)?,
        Command::GlobalLocalize {
            index,
            queries,
            weights,
            topk,
            report,
        } => commands::global_localize(&index, &queries, &weights, topk, &report)?,
        Command::LoopDetect {
            index,
            threshold,
            report,
            dataset,
            weights,
        } => commands::loop_detect(&index, threshold, &report, dataset.as_deref(), weights.as_deref())?,
        Command::PoseEstimate {
            dataset,
            pairs,
            weights,
            report,
        } => commands::pose_estimate(&dataset, &pairs, &weights, &report)?,
        Command::Eval {
            report,
            manifest,
            metrics,
        } => commands::eval(&report, &manifest, &metrics)?,
        Command::VerifyLosses { seed } => return commands::verify_losses(seed),
        Command::Plot { report, out } => commands::plot(&report, &out)?,
    }
    Ok(true)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            // library errors already append their cause to the message
            let mut msg = String::new();
            for cause in e.chain() {
                let text = cause.to_string();
                if !msg.ends_with(&text) {
                    msg = if msg.is_empty() { text } else { format!("{msg}: {text}") };
                }
            }
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}
