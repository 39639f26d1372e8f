//! Thin CLI over the pipeline module.
//!
//! Exit codes: 0 success, 1 usage error, 2 validation error, 3 gate
//! failure, 4 divergence.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use flowerase::pipeline::{self, BaselineMethod, EvalTarget};
use flowerase::{Error, RunConfig};

#[derive(Parser)]
#[command(name = "flowerase", version, about = "Concept erasure for toy flow-matching models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// Flat "key = value" config file; defaults apply when omitted.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Master seed (overrides the config's seed).
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
    /// Run directory for checkpoints, CSVs and reports.
    #[arg(long, value_name = "DIR", default_value = "run")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic concept dataset.
    GenData {
        #[command(flatten)]
        common: Common,
    },
    /// Train the perception models and the base flow model (with gates).
    TrainBase {
        #[command(flatten)]
        common: Common,
    },
    /// Run the policy-optimization erasure loop on a trained base model.
    Erase {
        #[command(flatten)]
        common: Common,
        /// Force every batch onto the erasure path (ablation).
        #[arg(long)]
        no_dual_path: bool,
    },
    /// Run a comparator method against the trained base model.
    Baseline {
        /// Which method: "esd" (fine-tuning) or "dve" (training-free).
        method: String,
        #[command(flatten)]
        common: Common,
    },
    /// Evaluate a checkpoint or correction artifact and write a report.
    Eval {
        /// Model checkpoint (.ferl) or correction artifact to score.
        model: PathBuf,
        #[command(flatten)]
        common: Common,
    },
}

fn load_config(common: &Common) -> flowerase::Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> flowerase::Result<()> {
    match cli.command {
        Command::GenData { common } => {
            let cfg = load_config(&common)?;
            let path = pipeline::cmd_gen_data(&cfg, &common.out)?;
            println!("dataset written to {}", path.display());
        }
        Command::TrainBase { common } => {
            let cfg = load_config(&common)?;
            pipeline::cmd_train_base(&cfg, &common.out)?;
            println!("base checkpoint written to {}", common.out.join("base.ferl").display());
        }
        Command::Erase { common, no_dual_path } => {
            let cfg = load_config(&common)?;
            pipeline::cmd_erase(&cfg, &common.out, !no_dual_path, None)?;
            println!("erased checkpoint written to {}", common.out.join("erased.ferl").display());
        }
        Command::Baseline { method, common } => {
            let cfg = load_config(&common)?;
            let method: BaselineMethod = match method.parse() {
                Ok(m) => m,
                Err(e) => {
                    eprintln!("error: {e}");
                    std::process::exit(1);
                }
            };
            let path = pipeline::cmd_baseline(&cfg, &common.out, method)?;
            println!("baseline artifact written to {}", path.display());
        }
        Command::Eval { model, common } => {
            let cfg = load_config(&common)?;
            let target = EvalTarget::detect(&model)?;
            let report = pipeline::cmd_eval(&cfg, &common.out, &target)?;
            print!("{}", report.text());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let code = match e {
                Error::Gate(_) => 3,
                Error::Divergence(_) => 4,
                _ => 2,
            };
            ExitCode::from(code)
        }
    }
}
