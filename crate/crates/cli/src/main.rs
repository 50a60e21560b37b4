use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use relprior_cli::{
    cmd_eval, cmd_export, cmd_report, cmd_run, cmd_selftest, cmd_stats, render_metrics, AppConfig, CliError,
};
use relprior_core::task::TaskKind;

#[derive(Parser)]
#[command(name = "relprior", version, about = "Document-level relation extraction with relation priors")]
struct Cli {
    /// Configuration file (TOML, flat dotted keys).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override a config key, e.g. --set backend.temperature=0.2
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    /// More log output (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ExportTask {
    Epf,
    Rc,
    Head,
    Tail,
    All,
}

#[derive(Subcommand)]
enum Command {
    /// Corpus statistics per split.
    Stats {
        /// Split names; all configured splits when omitted.
        splits: Vec<String>,
    },
    /// Write fine-tuning datasets as JSONL.
    Export {
        #[arg(long, value_enum, default_value = "all")]
        task: ExportTask,
        #[arg(long, default_value = "train")]
        split: String,
    },
    /// Run the pipeline over a split.
    Run {
        #[arg(long, default_value = "dev")]
        split: String,
        /// Stop after this many documents.
        #[arg(long)]
        stop_after: Option<usize>,
    },
    /// Score a predictions file.
    Eval {
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long, default_value = "dev")]
        split: String,
        /// Split whose facts are excluded for Ign F1.
        #[arg(long)]
        train_split: Option<String>,
    },
    /// Stage-count report from a per-document results file.
    Report {
        results: PathBuf,
        /// Also write the report as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// End-to-end check with the noise-free oracle on bundled documents.
    Selftest,
}

fn run(cli: Cli) -> Result<String, CliError> {
    let config = AppConfig::load(cli.config.as_deref(), &cli.overrides)?;
    match cli.command {
        Command::Stats { splits } => cmd_stats(&config, &splits),
        Command::Export { task, split } => {
            let task = match task {
                ExportTask::Epf => Some(TaskKind::Epf),
                ExportTask::Rc => Some(TaskKind::Rc),
                ExportTask::Head => Some(TaskKind::Head),
                ExportTask::Tail => Some(TaskKind::Tail),
                ExportTask::All => None,
            };
            let files = cmd_export(&config, &split, task)?;
            Ok(files.iter().map(|p| format!("wrote {}\n", p.display())).collect())
        }
        Command::Run { split, stop_after } => cmd_run(&config, &split, stop_after).map(|s| s.render()),
        Command::Eval { predictions, split, train_split } => {
            let out = cmd_eval(&config, &predictions, &split, train_split.as_deref())?;
            Ok(format!(
                "{}wrote {}\nwrote {}\n",
                render_metrics(&out.report),
                out.metrics_path.display(),
                out.relations_path.display()
            ))
        }
        Command::Report { results, csv } => cmd_report(&results, csv.as_deref()),
        Command::Selftest => cmd_selftest(&config),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(text) => {
            print!("{text}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
