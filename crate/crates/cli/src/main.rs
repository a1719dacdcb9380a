use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use amalgam_cli::commands::{self, CliError, SynthOptions};
use amalgam_cli::config;

#[derive(Parser)]
#[command(name = "amalgam", version, about = "Gated fusion of frozen expert embeddings")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides `experiment.out`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides `experiment.seed`.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Normalize a review corpus.
    Preprocess(RunArgs),
    /// Train a model and write its checkpoint and epoch log.
    Train(RunArgs),
    /// Evaluate a checkpoint and write metrics, predictions and gate weights.
    Eval(RunArgs),
    /// Compare analytic gradients of a fresh model with finite differences.
    Gradcheck(RunArgs),
    /// Gate-weight entropy and histograms across softmax temperatures.
    GateReport(RunArgs),
    /// Write the planted-expert synthetic task and a config for it.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 2000)]
        train_size: usize,
        #[arg(long, default_value_t = 1000)]
        test_size: usize,
        #[arg(long, default_value_t = 3)]
        experts: usize,
        #[arg(long, default_value_t = 0)]
        informative: usize,
    },
}

fn load(args: &RunArgs) -> Result<config::ExperimentConfig, CliError> {
    let mut cfg = config::load_config(&args.config)?;
    if let Some(out) = &args.out {
        cfg.set_out(out.clone());
    }
    if let Some(seed) = args.seed {
        if seed > i64::MAX as u64 {
            return Err(CliError::Usage("--seed must be below 2^63".into()));
        }
        cfg.set_seed(seed);
    }
    Ok(cfg)
}

fn run(command: Command) -> Result<(), CliError> {
    match command {
        Command::Preprocess(a) => commands::preprocess_cmd(&load(&a)?),
        Command::Train(a) => commands::train_cmd(&load(&a)?),
        Command::Eval(a) => commands::eval_cmd(&load(&a)?),
        Command::Gradcheck(a) => commands::gradcheck_cmd(&load(&a)?),
        Command::GateReport(a) => commands::gate_report_cmd(&load(&a)?),
        Command::Synth {
            out,
            seed,
            train_size,
            test_size,
            experts,
            informative,
        } => commands::synth_cmd(&SynthOptions {
            out,
            seed,
            train_size,
            test_size,
            experts,
            informative,
        }),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
