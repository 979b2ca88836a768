use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use kgdg::config::PipelineConfig;
use kgdg::error::RunError;
use kgdg::evaluation::{self, DEFAULT_CAP_MONTHS};
use kgdg::exec::Executor;
use kgdg::gateway::BackendKind;
use kgdg::orchestrator::{self, RunOutcome};

#[derive(Debug, Clone, Copy, ValueEnum)]
enum BackendArg {
    Http,
    Mock,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ReportFormat {
    Json,
    Table,
}

#[derive(Parser)]
#[command(name = "kgdg", version, about = "Knowledge-guided data generation pipeline for legal reasoning")]
struct Cli {
    /// Run configuration file (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override the run seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Force every stage onto one backend kind.
    #[arg(long, global = true, value_enum)]
    backend: Option<BackendArg>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the generation loop until the verified target is reached.
    Generate {
        /// Override target_count.
        #[arg(long)]
        target: Option<u64>,
        /// Override batch_size.
        #[arg(long)]
        batch_size: Option<usize>,
        /// Override the output directory.
        #[arg(long)]
        output_dir: Option<PathBuf>,
        /// Crash-recovery test hook: stop without finalizing after this
        /// many acceptances.
        #[arg(long)]
        abort_after: Option<u64>,
    },
    /// Expand verified records into paired training examples.
    Expand {
        /// Emit pairs record by record instead of grouped by variant.
        #[arg(long)]
        interleave: bool,
    },
    /// Score predictions on the four-task suite.
    Eval {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = DEFAULT_CAP_MONTHS)]
        cap_months: f64,
        #[arg(long, value_enum, default_value = "table")]
        report: ReportFormat,
    },
    /// Print the statistics of a finished run.
    Stats {
        #[arg(long)]
        output_dir: Option<PathBuf>,
    },
    /// Re-run repair and verification over an existing draft file.
    VerifyOnly {
        #[arg(long)]
        drafts: PathBuf,
    },
}

fn load_config(cli: &Cli) -> Result<PipelineConfig, RunError> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| RunError::Config("--config is required for this command".into()))?;
    let mut config = PipelineConfig::load(path)?;
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(kind) = cli.backend {
        config.override_backend_kind(match kind {
            BackendArg::Http => BackendKind::Http,
            BackendArg::Mock => BackendKind::Mock,
        });
    }
    Ok(config)
}

fn run(cli: Cli) -> Result<(), RunError> {
    match &cli.command {
        Command::Generate {
            target,
            batch_size,
            output_dir,
            abort_after,
        } => {
            let mut config = load_config(&cli)?;
            if let Some(target) = target {
                config.target_count = *target;
            }
            if let Some(batch_size) = batch_size {
                config.batch_size = *batch_size;
            }
            if let Some(dir) = output_dir {
                config.paths.output_dir = dir.clone();
            }
            if abort_after.is_some() {
                config.abort_after_accepted = *abort_after;
            }
            config.validate()?;
            let summary = orchestrator::run_generate(&config)?;
            match summary.outcome {
                RunOutcome::Completed => {
                    println!(
                        "completed: {} verified records in {}",
                        summary.stats.accepted,
                        summary.paths.output_dir.display()
                    );
                    print!("{}", summary.stats.render_table());
                }
                RunOutcome::Aborted => {
                    println!(
                        "aborted by hook after {} acceptances; resume by re-running generate",
                        summary.stats.accepted
                    );
                }
            }
            Ok(())
        }
        Command::Expand { interleave } => {
            let mut config = load_config(&cli)?;
            if *interleave {
                config.expansion.interleave = true;
            }
            let (path, examples) = orchestrator::run_expand(&config)?;
            println!("wrote {} training examples to {}", examples.len(), path.display());
            Ok(())
        }
        Command::Eval {
            input,
            cap_months,
            report,
        } => {
            let items = evaluation::load_items(input)
                .map_err(|e| RunError::Config(format!("eval input: {e}")))?;
            let executor = Executor::new(16);
            let result = evaluation::evaluate_items(&items, *cap_months, &executor)
                .map_err(|e| RunError::Config(format!("eval: {e}")))?;
            match report {
                ReportFormat::Json => println!(
                    "{}",
                    serde_json::to_string_pretty(&result.to_json()).expect("report serializes")
                ),
                ReportFormat::Table => print!("{}", result.render_table()),
            }
            Ok(())
        }
        Command::Stats { output_dir } => {
            let dir = match (output_dir, &cli.config) {
                (Some(dir), _) => dir.clone(),
                (None, Some(_)) => load_config(&cli)?.paths.output_dir,
                (None, None) => {
                    return Err(RunError::Config(
                        "stats needs --output-dir or --config".into(),
                    ))
                }
            };
            let stats = orchestrator::run_stats(&dir)?;
            print!("{}", stats.render_table());
            println!(
                "{}",
                serde_json::to_string_pretty(&stats).expect("stats serialize")
            );
            Ok(())
        }
        Command::VerifyOnly { drafts } => {
            let config = load_config(&cli)?;
            let stats = orchestrator::verify_only(&config, drafts)?;
            print!("{}", stats.render_table());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
