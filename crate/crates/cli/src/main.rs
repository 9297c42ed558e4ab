use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use savehr_cli::{execute, CliError, Command, RunConfig};

#[derive(Parser)]
#[command(name = "savehr", version, about = "Disease-onset prediction pipeline on synthetic EHR populations")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Args)]
struct Common {
    /// Directory holding every artifact of the run.
    #[arg(long, default_value = "run")]
    run_dir: PathBuf,
    /// `key = value` config file; manifests written by earlier runs work too.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one key, e.g. `--set lr=0.005`. Applied after --config.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Overwrite existing outputs.
    #[arg(long)]
    force: bool,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate the P1 and P2 populations.
    Gen {
        #[command(flatten)]
        common: Common,
        /// Population shift applied to P2: `none` or `random`.
        #[arg(long)]
        shift: Option<String>,
    },
    /// Build the case-control cohort for one condition.
    Cohort {
        #[command(flatten)]
        common: Common,
    },
    /// Train the configured model on the P1 training split.
    Train {
        #[command(flatten)]
        common: Common,
    },
    /// Evaluate a trained model on P1 test and P2.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Also run k-fold cross-validation on the P1 training split.
        #[arg(long, value_name = "K")]
        cv: Option<usize>,
    },
    /// Export attention heatmaps and the quarter-attention summary.
    Explain {
        #[command(flatten)]
        common: Common,
        /// Patient id for a per-patient heatmap; repeatable.
        #[arg(long = "patient", value_name = "ID")]
        patients: Vec<u32>,
    },
}

fn build_config(common: &Common, extra: Vec<String>) -> Result<RunConfig, CliError> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    for o in common.overrides.iter().chain(&extra) {
        cfg.apply_override(o)?;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<String, CliError> {
    let (command, common, extra) = match cli.command {
        Cmd::Gen { common, shift } => (Command::Gen, common, shift.map(|s| format!("shift={s}")).into_iter().collect()),
        Cmd::Cohort { common } => (Command::Cohort, common, vec![]),
        Cmd::Train { common } => (Command::Train, common, vec![]),
        Cmd::Eval { common, cv } => (Command::Eval, common, cv.map(|k| format!("cv={k}")).into_iter().collect()),
        Cmd::Explain { common, patients } => {
            let extra = if patients.is_empty() {
                vec![]
            } else {
                let ids: Vec<String> = patients.iter().map(u32::to_string).collect();
                vec![format!("patients={}", ids.join(","))]
            };
            (Command::Explain, common, extra)
        }
    };
    let cfg = build_config(&common, extra)?;
    execute(command, &common.run_dir, &cfg, common.force)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(text) => {
            print!("{text}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("savehr: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
