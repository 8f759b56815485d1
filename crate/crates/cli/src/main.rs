mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "lgrpool", version, about = "Hierarchical graph pooling: training, evaluation and diagnostics")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train one model per seed and write checkpoints, metrics and a summary.
    Train(TrainArgs),
    /// Score a checkpoint on a split of its dataset.
    Eval(EvalArgs),
    /// Finite-difference check of every primitive and the total loss.
    Gradcheck(GradcheckArgs),
    /// Test accuracy over seeds for each value of the regularizer weight.
    Ablate(AblateArgs),
    /// Dataset statistics, optionally with a pooling trace of one graph.
    Inspect(InspectArgs),
}

#[derive(Args, Debug, Clone)]
pub struct RunArgs {
    /// Dataset directory, or a name looked up under $LGRPOOL_DATA.
    #[arg(long)]
    pub dataset: String,
    /// Config file path, or a built-in profile name (`desk`, `paper`).
    #[arg(long, default_value = "desk")]
    pub config: String,
    /// Override one config key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Output directory (default: runs/<command>-<dataset>-<input hash>).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Inclusive seed range `A..B`, or a single seed.
    #[arg(long, default_value = "0..9")]
    pub seeds: String,
    /// Seeds trained concurrently.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Recompute test accuracy from the checkpoints in --out instead of training.
    #[arg(long)]
    pub eval_only: bool,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Dataset directory, or a name looked up under $LGRPOOL_DATA.
    #[arg(long)]
    pub dataset: String,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// `train`, `val`, `test` or `all`.
    #[arg(long, default_value = "test")]
    pub split: String,
}

#[derive(Args, Debug)]
pub struct GradcheckArgs {
    /// Finite-difference step.
    #[arg(long, default_value_t = 1e-6)]
    pub eps: f64,
    /// Relative-error tolerance.
    #[arg(long, default_value_t = lgrpool::selfcheck::GRADCHECK_TOLERANCE)]
    pub tol: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Deliberately wrong derivative, to exercise the failure path.
    #[arg(long, hide = true, value_name = "sigmoid")]
    pub inject_fault: Option<String>,
}

#[derive(Args, Debug)]
pub struct AblateArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Comma-separated weights.
    #[arg(long, default_value = "0.10,0.15,0.20,0.25,0.30")]
    pub gamma: String,
}

#[derive(Args, Debug)]
pub struct InspectArgs {
    /// Dataset directory, or a name looked up under $LGRPOOL_DATA.
    #[arg(long)]
    pub dataset: String,
    /// Graph index for --trace.
    #[arg(long)]
    pub graph: Option<usize>,
    /// Dump the pooling trace of --graph under untrained parameters.
    #[arg(long, requires = "graph")]
    pub trace: bool,
    #[arg(long, default_value = "desk")]
    pub config: String,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(a) => commands::train(&a),
        Command::Eval(a) => commands::eval(&a),
        Command::Gradcheck(a) => commands::gradcheck(&a),
        Command::Ablate(a) => commands::ablate(&a),
        Command::Inspect(a) => commands::inspect(&a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            commands::exit_code_for(&e)
        }
    }
}
