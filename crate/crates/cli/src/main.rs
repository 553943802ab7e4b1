use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use freematch_lab::ablate::{cmd_ablate, Suite};
use freematch_lab::theory::{cmd_theory, DEFAULT_MC_SAMPLES};
use freematch_lab::train::cmd_train;
use freematch_lab::CliResult;

#[derive(Parser)]
#[command(name = "freematch-lab", version, about = "Semi-supervised thresholding experiments on synthetic data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one model and write trace, checkpoint and plots.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Output directory; defaults to the config's out_dir, then ./out.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Closed-form pseudo-label statistics on a Gaussian mixture, checked by simulation.
    Theory {
        /// Grid and sweep definition; the built-in defaults are used when absent.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Draws per Monte-Carlo estimate; 0 writes analytic rows only.
        #[arg(long, default_value_t = DEFAULT_MC_SAMPLES)]
        mc_samples: u64,
    },
    /// Run a scheme or fairness matrix over several seeds.
    Ablate {
        #[arg(long, value_enum)]
        suite: Suite,
        #[arg(long, default_value_t = 5)]
        seeds: u64,
        #[arg(long)]
        out: PathBuf,
        /// Base experiment; the bundled two-moon FreeMatch config when absent.
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

fn dispatch(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Train { config, out } => {
            let (dir, result) = cmd_train(&config, out.as_deref())?;
            println!(
                "final error {:.4} (best {:.4}); artifacts in {}",
                result.final_error(),
                result.best_error,
                dir.display()
            );
        }
        Command::Theory { config, out, mc_samples } => {
            let report = cmd_theory(config.as_deref(), &out, mc_samples)?;
            print!("{}", freematch_lab::theory::verdicts_text(&report));
        }
        Command::Ablate { suite, seeds, out, config } => {
            let report = cmd_ablate(config.as_deref(), suite, seeds, &out)?;
            print!("{}", freematch_lab::ablate::ablation_csv(&report));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("freematch-lab: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
