use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fedaq_cli::commands::{self, Overrides, Threshold};
use fedaq_cli::CliError;

#[derive(Parser)]
#[command(
    name = "fedaq",
    version,
    about = "Federated learning with adaptive uplink/downlink quantization"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Output directory, replacing `run.out_dir`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Seed, replacing `run.seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment.
    Run {
        config: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Run several experiments and compare energy to a common target.
    Compare {
        #[arg(required = true, num_args = 2..)]
        configs: Vec<PathBuf>,
        /// Test accuracy to reach; defaults to the weakest run's best accuracy.
        #[arg(long, conflicts_with = "threshold_loss")]
        threshold_acc: Option<f64>,
        /// Test loss to reach instead of an accuracy.
        #[arg(long)]
        threshold_loss: Option<f64>,
        #[command(flatten)]
        common: Common,
    },
    /// Record per-round ranges of a lossless run.
    Trace {
        config: PathBuf,
        /// Rounds excluded from the trend fit.
        #[arg(long, default_value_t = 0)]
        skip: usize,
        #[command(flatten)]
        common: Common,
    },
}

fn overrides(c: Common) -> Overrides {
    Overrides {
        out_dir: c.out,
        seed: c.seed,
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or("n/a".into(), |v| format!("{v:.4}"))
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Run { config, common } => {
            let ov = overrides(common);
            let s = commands::cmd_run(&config, &ov)?;
            println!(
                "{}: {} rounds, final test accuracy {}, total energy {:.4e} pJ",
                s.policy,
                s.rounds,
                fmt_opt(s.final_test_accuracy),
                s.energy_total_pj
            );
        }
        Command::Compare {
            configs,
            threshold_acc,
            threshold_loss,
            common,
        } => {
            let threshold = threshold_acc
                .map(Threshold::Accuracy)
                .or(threshold_loss.map(Threshold::Loss));
            let cmp = commands::cmd_compare(&configs, threshold, &overrides(common))?;
            print!("{}", cmp.render());
        }
        Command::Trace {
            config,
            skip,
            common,
        } => {
            let r = commands::cmd_trace(&config, skip, &overrides(common))?;
            for (name, t) in [("uplink", r.uplink), ("downlink", r.downlink)] {
                println!(
                    "{name} range: slope {:+.4e} ({}), spearman {}",
                    t.slope,
                    t.direction(),
                    fmt_opt(t.spearman)
                );
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
