use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use cachesim::runner::{
    cmd_ablate, cmd_simulate, cmd_verify, policies_table, AblationDimension, Overrides,
};
use cachesim::Error;
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "cachesim", version, about = "Prompt-cache strategy simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunFlags {
    /// Worker threads for running conditions (default: available cores).
    #[arg(long)]
    jobs: Option<usize>,
    /// Master seed, replacing the config's `seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory, replacing the config's `output_dir`.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl RunFlags {
    fn overrides(&self) -> Overrides {
        Overrides {
            jobs: self.jobs,
            seed: self.seed,
            out: self.out.clone(),
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Dimension {
    PromptSize,
    ToolCount,
}

impl From<Dimension> for AblationDimension {
    fn from(d: Dimension) -> Self {
        match d {
            Dimension::PromptSize => AblationDimension::PromptSize,
            Dimension::ToolCount => AblationDimension::ToolCount,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run every (policy, mode) condition and write a run directory.
    Simulate {
        config: PathBuf,
        #[command(flatten)]
        flags: RunFlags,
    },
    /// Sweep the system prompt size or the tool-call count.
    Ablate {
        config: PathBuf,
        #[arg(long, value_enum)]
        dimension: Dimension,
        #[arg(long, num_args = 1.., value_delimiter = ',')]
        values: Option<Vec<u64>>,
        #[command(flatten)]
        flags: RunFlags,
    },
    /// Print the built-in provider policies.
    Policies,
    /// Recompute a run directory's summary from its call files and diff it.
    Verify { run_dir: PathBuf },
}

fn run(cli: Cli) -> Result<String, Error> {
    let out = match cli.command {
        Command::Simulate { config, flags } => {
            let run = cmd_simulate(&config, &flags.overrides())?;
            run.report.render_table()
        }
        Command::Ablate {
            config,
            dimension,
            values,
            flags,
        } => {
            let rows = cmd_ablate(&config, dimension.into(), values, &flags.overrides())?;
            let mut out = format!(
                "{:<10} {:<20} {:<22} {:>14} {:>14} {:>10}\n",
                "value", "policy", "mode", "median $", "median ttft", "saving %"
            );
            for r in rows {
                out.push_str(&format!(
                    "{:<10} {:<20} {:<22} {:>14.6} {:>14.1} {:>9.1}%\n",
                    r.value,
                    r.policy,
                    r.mode.as_str(),
                    r.median_cost_usd,
                    r.median_ttft_ms,
                    r.median_cost_saving_pct
                ));
            }
            out
        }
        Command::Policies => policies_table(),
        Command::Verify { run_dir } => {
            let report = cmd_verify(&run_dir)?;
            let conditions: usize = report.policies.iter().map(|p| 1 + p.modes.len()).sum();
            format!(
                "{}: summary matches call files ({} policies, {} conditions)\n",
                run_dir.display(),
                report.policies.len(),
                conditions
            )
        }
    };
    Ok(out)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(text) => {
            // A closed pipe (e.g. `| head`) is not a failure of the run.
            let _ = std::io::stdout().write_all(text.as_bytes());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
