use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use crafted::commands::{cmd_attack, cmd_evaluate, cmd_report, cmd_selfcheck, cmd_train_base, GlobalOptions};

#[derive(Parser)]
#[command(name = "crafted", version, about = "Constrained fine-tuning attack on a toy class-conditional diffusion model")]
struct Cli {
    /// Experiment config (JSON). Missing keys take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override the config's seed_base.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads used during evaluation.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the base noise predictor and the frozen classifier.
    TrainBase,
    /// Fine-tune the base predictor against one class.
    Attack {
        #[arg(long)]
        target_class: usize,
    },
    /// Compute accuracy, paired-L2 and FID-proxy matrices.
    Evaluate {
        /// Directory of attacked checkpoints (default: the experiment's attacks/).
        #[arg(long)]
        models: Option<PathBuf>,
    },
    /// Summarise an evaluation results directory.
    Report { results: PathBuf },
    /// Run the analytic oracle checks.
    Selfcheck,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let opts = GlobalOptions { config: cli.config, seed: cli.seed, jobs: cli.jobs };
    let outcome = match cli.command {
        Command::TrainBase => cmd_train_base(&opts),
        Command::Attack { target_class } => cmd_attack(&opts, target_class),
        Command::Evaluate { models } => cmd_evaluate(&opts, models.as_deref()),
        Command::Report { results } => cmd_report(&results),
        Command::Selfcheck => cmd_selfcheck(),
    };
    if outcome.success() {
        print!("{}", outcome.message);
        if !outcome.message.ends_with('\n') {
            println!();
        }
        for p in &outcome.artifacts {
            println!("wrote {}", p.display());
        }
        eprintln!("done in {:.1?}", outcome.duration);
    } else {
        eprintln!("{}", outcome.message);
    }
    ExitCode::from(outcome.exit_code as u8)
}
