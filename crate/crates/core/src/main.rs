use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use fedgsp::config::RunConfig;
use fedgsp::orchestrator::GrowthKind;
use fedgsp::runner::{self, GridSpec, RunOptions, RunnerError, OUTPUT_DIR_ENV};

#[derive(Parser)]
#[command(name = "fedgsp", version, about = "Grouped sequential-to-parallel federated training simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Config file; omitted keys take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// `key=value` override applied after the file. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Output root directory.
    #[arg(long, env = OUTPUT_DIR_ENV)]
    out: Option<PathBuf>,
    /// Subdirectory name under the output root. Defaults to one derived
    /// from the config hash.
    #[arg(long)]
    name: Option<String>,
}

impl Common {
    fn load(&self) -> Result<RunConfig, RunnerError> {
        runner::load_config(self.config.as_deref(), &self.overrides)
    }

    fn dir(&self, default_name: String) -> PathBuf {
        runner::output_root(self.out.as_deref()).join(self.name.clone().unwrap_or(default_name))
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train one configuration.
    Run {
        #[command(flatten)]
        common: Common,
        /// Also write every round's grouping plan to plans.jsonl.
        #[arg(long)]
        dump_plans: bool,
        /// Write checkpoint.json after every round.
        #[arg(long)]
        checkpoint: bool,
        /// Continue the run directory from its checkpoint.
        #[arg(long)]
        resume: bool,
    },
    /// Run the naive_gsp, naive_gsp_icg, fedgsp and fedavg arms side by side.
    Ablation {
        #[command(flatten)]
        common: Common,
    },
    /// Sweep growth functions for fedgsp.
    Grid {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', required = true)]
        kinds: Vec<GrowthKind>,
        #[arg(long, value_delimiter = ',', required = true)]
        alphas: Vec<f64>,
        #[arg(long, value_delimiter = ',', required = true)]
        betas: Vec<u64>,
    },
    /// Recompute a summary from a rounds.csv and print it as JSON.
    Report {
        #[arg(long)]
        csv: PathBuf,
        #[arg(long, default_value_t = 0.8)]
        target: f64,
    },
}

fn dispatch(cmd: Command) -> Result<(), RunnerError> {
    match cmd {
        Command::Run { common, dump_plans, checkpoint, resume } => {
            let cfg = common.load()?;
            let dir = common.dir(runner::default_run_name(&cfg));
            let summary = runner::execute_run(&cfg, &dir, &RunOptions { dump_plans, checkpoint, resume })?;
            println!("{}", dir.display());
            eprintln!(
                "rounds={} final_accuracy={:?} rounds_to_target={:?}",
                summary.rounds, summary.final_accuracy, summary.rounds_to_target
            );
        }
        Command::Ablation { common } => {
            let cfg = common.load()?;
            let dir = common.dir(format!("ablation-{}", &cfg.content_hash()[..12]));
            for arm in runner::execute_ablation(&cfg, &dir)? {
                eprintln!(
                    "{:<14} mean_acc_last_10={:?} round1_median_cpd={:.6}",
                    arm.algorithm, arm.mean_accuracy_last_10, arm.round1_median_group_cpd
                );
            }
            println!("{}", dir.display());
        }
        Command::Grid { common, kinds, alphas, betas } => {
            let cfg = common.load()?;
            let dir = common.dir(format!("grid-{}", &cfg.content_hash()[..12]));
            let rows = runner::execute_grid(&cfg, &GridSpec { kinds, alphas, betas }, &dir)?;
            eprintln!("{} cells", rows.len());
            println!("{}", dir.display());
        }
        Command::Report { csv, target } => {
            let summary = runner::report(&csv, target)?;
            println!("{}", serde_json::to_string_pretty(&summary).expect("summary serialises"));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
