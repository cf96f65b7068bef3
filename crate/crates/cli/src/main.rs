//! Command-line driver. Exit codes: 0 success, 1 user error (bad inputs or
//! configuration), 2 internal error.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use hvrnn_cli::commands::{self, CommandCtx};
use hvrnn_cli::config::RunConfig;
use hvrnn_core::net::Module;

#[derive(Parser)]
#[command(
    name = "hvrnn",
    about = "Hierarchical variational RNN: data generation, free-energy training, online inference and analysis",
    version
)]
struct Cli {
    /// Configuration file (TOML); defaults apply for every omitted field.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Output directory for the run.
    #[arg(long, global = true, default_value = "run")]
    out: PathBuf,
    /// Worker threads (default: HVRNN_THREADS or the logical CPU count).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Deterministic diagnostics: fixed per-step noise and mean-collapsed
    /// latents in recorded passes and rollouts.
    #[arg(long, global = true, default_value_t = false)]
    deterministic: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic multimodal dataset.
    GenData,
    /// Train a network on a dataset file.
    Train {
        /// Dataset container produced by gen-data.
        #[arg(long)]
        data: PathBuf,
    },
    /// Run online inference trials over the test sequences of a dataset.
    Infer {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
    },
    /// Rebuild predictions from a trial log with one module's latents
    /// zeroed and export the contribution map.
    Ablate {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Trial log produced by infer.
        #[arg(long)]
        trials: PathBuf,
        /// Module to ablate: Exe, Mul, Ext, Pro, or "none".
        #[arg(long)]
        module: String,
    },
    /// Run one of the three experiment protocols end to end.
    Exp {
        /// 1 = uncertainty dynamics, 2 = degraded vision, 3 = data balance.
        which: u8,
    },
    /// Finite-difference gradient check on the tiny test topology.
    Check {
        /// Maximum tolerated relative error.
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
    },
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let threads = hvrnn_cli::runner::init_threads(cli.threads);
    let config = RunConfig::load(cli.config.as_deref())?;
    let ctx = CommandCtx {
        config,
        config_path: cli.config.clone(),
        seed: cli.seed,
        out: cli.out.clone(),
        threads,
        deterministic: cli.deterministic,
    };
    match cli.command {
        Command::GenData => commands::cmd_gen_data(&ctx),
        Command::Train { data } => commands::cmd_train(&ctx, &data),
        Command::Infer { checkpoint, data } => commands::cmd_infer(&ctx, &checkpoint, &data),
        Command::Ablate {
            checkpoint,
            trials,
            module,
        } => {
            let module = match module.as_str() {
                "none" => None,
                other => Some(Module::from_label(other).ok_or_else(|| {
                    anyhow::anyhow!(
                        "unknown module {other:?} (expected Exe, Mul, Ext, Pro or none)"
                    )
                })?),
            };
            commands::cmd_ablate(&ctx, &checkpoint, &trials, module)
        }
        Command::Exp { which } => match which {
            1 => commands::cmd_exp1(&ctx),
            2 => commands::cmd_exp2(&ctx),
            3 => commands::cmd_exp3(&ctx),
            other => anyhow::bail!("unknown experiment {other} (expected 1, 2 or 3)"),
        },
        Command::Check { tolerance } => commands::cmd_check(tolerance, cli.seed),
    }
}

/// User errors (bad inputs, bad config, malformed files) exit 1; everything
/// unexpected exits 2.
fn classify(err: &anyhow::Error) -> u8 {
    let msg = format!("{err:#}");
    let user = [
        "config",
        "cannot read",
        "unknown",
        "not a ",
        "dataset",
        "checkpoint",
        "no test sequences",
        "data error",
        "file integrity",
        "trial log",
        "tensor",
    ];
    if user.iter().any(|k| msg.to_lowercase().contains(k)) {
        1
    } else {
        2
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(classify(&e))
        }
    }
}
