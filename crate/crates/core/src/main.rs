// SPDX-License-Identifier: MIT OR Apache-2.0

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use premise_lab::experiment::{ExperimentConfig, RunManifest, Workspace, CACHE_ENV};
use premise_lab::Result;

/// Toy false-premise laboratory.
#[derive(Parser)]
#[command(version, about)]
struct Cli {
    /// Experiment config (TOML with `schema_version`); defaults apply without one.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory for artifacts.
    #[arg(long, global = true, default_value = "run")]
    out: PathBuf,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Head set file for `mitigate` (and `attn-pattern`).
    #[arg(long, global = true)]
    heads: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Generate the synthetic world and train the toy model.
    TrainToy,
    /// Select known triples, corrupt them and render false-premise questions.
    BuildDataset,
    /// U1/U2/U3 scores and ROC/AUC for hallucination detection.
    Uncertainty,
    /// Per-layer attribution flow by cohort.
    InfoFlow,
    /// Per-head influence map.
    Influence,
    /// Threshold-and-count head localization.
    Localize,
    /// Constrained decoding, random baselines and template transfer.
    Mitigate,
    /// Attention-pattern heatmaps.
    AttnPattern,
    /// SVG charts from the tables of a run.
    Report,
    /// Every stage in order.
    Run,
}

fn execute(cli: &Cli) -> Result<Vec<RunManifest>> {
    let mut config = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    let mut ws = Workspace::new(&config, &cli.out);
    ws.cache = std::env::var_os(CACHE_ENV).map(PathBuf::from);
    let heads = cli.heads.as_deref();
    Ok(match cli.command {
        Command::TrainToy => vec![ws.train_toy()?],
        Command::BuildDataset => vec![ws.build_dataset()?],
        Command::Uncertainty => vec![ws.uncertainty()?],
        Command::InfoFlow => vec![ws.info_flow()?],
        Command::Influence => vec![ws.influence()?],
        Command::Localize => vec![ws.localize()?],
        Command::Mitigate => vec![ws.mitigate(heads)?],
        Command::AttnPattern => vec![ws.attn_pattern(heads)?],
        Command::Report => vec![ws.report()?],
        Command::Run => ws.run_all()?,
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(manifests) => {
            for m in manifests {
                for a in &m.artifacts {
                    println!("{}\t{}", m.subcommand, cli.out.join(&a.file).display());
                }
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
