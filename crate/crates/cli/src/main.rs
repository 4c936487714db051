use std::path::PathBuf;
use std::process::ExitCode;

use activesearch_cli::{commands, ExperimentConfig};
use anyhow::Result;
use clap::{Parser, Subcommand};

/// Rare-class active search experiments on synthetic feature spaces.
#[derive(Parser)]
#[command(version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write dataset.csv and split.csv for a config.
    Generate {
        config: PathBuf,
        /// Output directory (overrides the config and ACTIVESEARCH_OUT).
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Run the active loop and write run, aggregate and audit CSVs.
    Run {
        config: PathBuf,
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Run several configs and write one comparison table.
    Compare {
        #[arg(required = true)]
        configs: Vec<PathBuf>,
        #[arg(short, long)]
        out: Option<PathBuf>,
        /// Also write overlay plots.
        #[arg(long)]
        plots: bool,
    },
    /// Project the validation set onto a rare class's principal axes.
    Dissect {
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Membership CSV to use instead of the configured split.
        #[arg(long)]
        split: Option<PathBuf>,
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate { config, out } => {
            let cfg = ExperimentConfig::load(&config)?;
            let dir = cfg.out_dir(out.as_deref());
            print!("{}", commands::generate(&cfg, &dir)?);
            println!("wrote {}", dir.display());
        }
        Command::Run { config, out } => {
            let cfg = ExperimentConfig::load(&config)?;
            let dir = cfg.out_dir(out.as_deref());
            let report = commands::run(&cfg, &dir)?;
            for row in &report.aggregate {
                println!("t={} n_rare={:.3} f1={:.3}", row.t, row.n_rare_mean, row.f1_mean);
            }
            println!("wrote {}", dir.display());
        }
        Command::Compare { configs, out, plots } => {
            let loaded = configs
                .iter()
                .map(|p| {
                    let name = p.file_stem().map_or_else(|| p.display().to_string(), |s| s.to_string_lossy().into_owned());
                    Ok((name, ExperimentConfig::load(p)?))
                })
                .collect::<Result<Vec<_>>>()?;
            let dir = loaded[0].1.out_dir(out.as_deref());
            print!("{}", commands::compare(&loaded, &dir, plots)?);
            println!("wrote {}", dir.join("compare.csv").display());
        }
        Command::Dissect { config, checkpoint, split, out } => {
            let cfg = ExperimentConfig::load(&config)?;
            let dir = cfg.out_dir(out.as_deref());
            let path = commands::dissect(&cfg, &checkpoint, split.as_deref(), &dir)?;
            println!("wrote {}", path.display());
        }
    }
    Ok(())
}
