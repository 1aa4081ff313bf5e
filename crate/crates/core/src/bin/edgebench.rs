use std::io;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use edgebench::cli::config::load_config;
use edgebench::cli::dataset_io::Format;
use edgebench::cli::ingest::Schema;
use edgebench::cli::report::Figure;
use edgebench::cli::{
    cmd_analyze, cmd_ingest, cmd_recommend, cmd_report, cmd_sweep, parse_queries, CliError,
};
use edgebench::model::{SweepPlan, DEFAULT_TOKEN_TARGET};
use edgebench::recommender::{Constraint, Direction, Query};

#[derive(Debug, Parser)]
#[command(version, about = "Edge-device LLM benchmark sweeps and analysis")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum FormatArg {
    Csv,
    JsonLines,
}

impl From<FormatArg> for Format {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Csv => Format::Csv,
            FormatArg::JsonLines => Format::JsonLines,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SchemaArg {
    LoadLatency,
    GenLatency,
    Accuracy,
    Full,
}

impl From<SchemaArg> for Schema {
    fn from(s: SchemaArg) -> Self {
        match s {
            SchemaArg::LoadLatency => Schema::LoadLatency,
            SchemaArg::GenLatency => Schema::GenLatency,
            SchemaArg::Accuracy => Schema::Accuracy,
            SchemaArg::Full => Schema::Full,
        }
    }
}

#[derive(Debug, Args)]
struct Shared {
    /// Toolkit configuration file; supplies the device and model matrix.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dataset output format.
    #[arg(long, value_enum, default_value = "csv")]
    format: FormatArg,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run every configuration of a sweep, one log file per run.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// Directory for the run logs.
        #[arg(long)]
        out: PathBuf,
    },
    /// Aggregate a directory of run logs into a dataset.
    Analyze {
        log_dir: PathBuf,
        /// Dataset file to write.
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        shared: Shared,
    },
    /// Import a result table into a dataset, merging with an existing one.
    Ingest {
        table: PathBuf,
        #[arg(long, value_enum)]
        schema: SchemaArg,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        shared: Shared,
    },
    /// Select the best configuration under constraints.
    Recommend {
        dataset: PathBuf,
        /// Query file with one [[query]] table per query.
        #[arg(long, conflicts_with_all = ["constraint", "objective"])]
        query: Option<PathBuf>,
        /// Inline constraint such as gen_latency<=7.0; repeatable.
        #[arg(long)]
        constraint: Vec<String>,
        #[arg(long)]
        objective: Option<String>,
        #[arg(long, default_value = "min")]
        direction: String,
        /// Also write the selections as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Emit plot-ready series for a figure family, or all of them.
    Report {
        dataset: PathBuf,
        /// latency, memory, power, energy, time-per-token, quant-comp or all.
        #[arg(long)]
        figure: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Tokens per generation, for deriving time per token.
        #[arg(long)]
        tokens: Option<u32>,
    },
}

fn validation(e: impl std::fmt::Display) -> CliError {
    CliError::Validation(e.to_string())
}

fn plan_from(config: Option<&PathBuf>) -> Result<Option<SweepPlan>, CliError> {
    config
        .map(|p| {
            load_config(p)
                .map(|c| c.plan)
                .map_err(|e| validation(format!("{}: {e}", p.display())))
        })
        .transpose()
}

fn run(command: Command) -> Result<(), CliError> {
    let mut stdout = io::stdout();
    match command {
        Command::Sweep { config, out } => {
            let summary = cmd_sweep(&config, &out, &mut stdout)?;
            println!("{} run(s), {} failed", summary.runs, summary.failed);
        }
        Command::Analyze {
            log_dir,
            out,
            shared,
        } => {
            let plan = plan_from(shared.config.as_ref())?;
            cmd_analyze(
                &log_dir,
                &out,
                shared.format.into(),
                plan.as_ref(),
                &mut stdout,
            )?;
        }
        Command::Ingest {
            table,
            schema,
            out,
            shared,
        } => {
            let plan = plan_from(shared.config.as_ref())?;
            cmd_ingest(
                &table,
                schema.into(),
                &out,
                shared.format.into(),
                plan.as_ref(),
                &mut stdout,
            )?;
        }
        Command::Recommend {
            dataset,
            query,
            constraint,
            objective,
            direction,
            csv,
        } => {
            let queries = match (query, objective) {
                (Some(path), _) => {
                    let text = std::fs::read_to_string(&path)
                        .map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
                    parse_queries(&text)
                        .map_err(|e| validation(format!("{}: {e}", path.display())))?
                }
                (None, Some(objective)) => vec![Query {
                    constraints: constraint
                        .iter()
                        .map(|c| c.parse::<Constraint>())
                        .collect::<Result<_, _>>()
                        .map_err(validation)?,
                    objective: objective.parse().map_err(validation)?,
                    direction: direction.parse::<Direction>().map_err(validation)?,
                }],
                (None, None) => {
                    return Err(validation("either --query or --objective is required"))
                }
            };
            cmd_recommend(&dataset, &queries, csv.as_deref(), &mut stdout)?;
        }
        Command::Report {
            dataset,
            figure,
            out,
            config,
            tokens,
        } => {
            let figures = if figure == "all" {
                Figure::ALL.to_vec()
            } else {
                vec![figure.parse::<Figure>().map_err(validation)?]
            };
            let plan = plan_from(config.as_ref())?;
            let tokens = tokens
                .or(plan.as_ref().map(|p| p.token_target))
                .unwrap_or(DEFAULT_TOKEN_TARGET);
            cmd_report(&dataset, &figures, &out, plan.as_ref(), tokens, &mut stdout)?;
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
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
