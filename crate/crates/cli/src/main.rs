use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use csa_core::runner::{emit, render, table_text, EmitFormat, SeedSpec, PRESETS};
use csa_core::{preset, run_experiment, CsaError, ExperimentConfig, ResultBundle};

#[derive(Parser)]
#[command(name = "csa", version, about = "Run selective-release experiments and emit their tables")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a TOML config file or a built-in preset.
    Run {
        /// Path to a config file, or a preset name.
        target: String,
        /// Comma-separated replication seeds, replacing the config's seeds.
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
        /// Number of replications from the config's base seed.
        #[arg(long, conflicts_with = "seeds")]
        reps: Option<u64>,
        /// Output directory for summary.json, table.csv and trajectory.csv.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Worker threads (defaults to all cores).
        #[arg(long)]
        threads: Option<usize>,
    },
    /// List built-in presets.
    ListPresets,
    /// Print a preset as a TOML config.
    ShowPreset { name: String },
    /// Re-emit a saved bundle in another format.
    Emit {
        bundle: PathBuf,
        /// summary-json, table-csv or trajectory-csv.
        #[arg(long)]
        format: String,
        /// Directory to write into; prints to stdout if omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load_target(target: &str) -> Result<ExperimentConfig, CsaError> {
    let path = Path::new(target);
    if path.is_file() {
        ExperimentConfig::load(path)
    } else {
        preset(target)
    }
}

fn run(cli: Cli) -> Result<(), CsaError> {
    match cli.command {
        Command::Run {
            target,
            seeds,
            reps,
            out,
            threads,
        } => {
            let mut cfg = load_target(&target)?;
            if let Some(seeds) = seeds {
                cfg.seeds = SeedSpec::List { seeds };
            }
            if let Some(n) = reps {
                cfg.seeds = match cfg.seeds {
                    SeedSpec::Replications { base, .. } => SeedSpec::Replications { base, n_reps: n },
                    SeedSpec::List { seeds } => SeedSpec::List {
                        seeds: seeds.into_iter().take(n as usize).collect(),
                    },
                };
            }
            let bundle = run_experiment(&cfg, threads)?;
            let dir = out
                .or_else(|| cfg.out_dir.clone())
                .unwrap_or_else(|| PathBuf::from("results").join(&cfg.name));
            for f in EmitFormat::ALL {
                emit(&bundle, f, &dir)?;
            }
            print!("{}", table_text(&bundle)?);
            eprintln!("wrote {}", dir.display());
        }
        Command::ListPresets => {
            for name in PRESETS {
                println!("{name}");
            }
        }
        Command::ShowPreset { name } => {
            print!("{}", preset(&name)?.to_toml()?);
        }
        Command::Emit { bundle, format, out } => {
            let format: EmitFormat = format.parse()?;
            let bundle = ResultBundle::load(bundle)?;
            match out {
                Some(dir) => println!("{}", emit(&bundle, format, dir)?.display()),
                None => print!("{}", render(&bundle, format)?),
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let record = serde_json::json!({ "error": e.kind(), "message": e.to_string() });
            eprintln!("{record}");
            ExitCode::FAILURE
        }
    }
}
