use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;
mod manifest;

#[derive(Parser, Debug)]
#[command(name = "rankgan", version, about = "Ranking-based adversarial training for sequence generators")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

/// Flags shared by every command.
#[derive(Args, Debug, Clone, Default)]
pub struct Common {
    /// key = value configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads; defaults to the number of available cores.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Output directory for make-oracle and train
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Create a random oracle LSTM and a synthetic corpus sampled from it.
    MakeOracle(commands::MakeOracleArgs),
    /// Pretrain with maximum likelihood, then run adversarial rounds.
    Train(commands::TrainArgs),
    /// Print sentences sampled from a generator checkpoint.
    Sample(commands::SampleArgs),
    /// Oracle NLL of a generator, or a run's learning curve.
    EvalNll(commands::EvalNllArgs),
    /// Corpus BLEU of candidates against references, one row per order.
    EvalBleu(commands::EvalBleuArgs),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let run = || -> anyhow::Result<()> {
        if let Some(n) = cli.common.threads {
            rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
        }
        match &cli.command {
            Command::MakeOracle(a) => commands::make_oracle(&cli.common, a),
            Command::Train(a) => commands::train(&cli.common, a),
            Command::Sample(a) => commands::sample(&cli.common, a),
            Command::EvalNll(a) => commands::eval_nll(&cli.common, a),
            Command::EvalBleu(a) => commands::eval_bleu(&cli.common, a),
        }
    };
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
