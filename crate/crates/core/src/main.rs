use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use riskprobe::backends::{request_body, write_fixture, CompletionParams};
use riskprobe::contexts::{self, render_prompt_with, ContextPlacement};
use riskprobe::metrics::{compute_all, Distance, HumanBenchmark};
use riskprobe::report::{emit, Format, ReportBundle};
use riskprobe::runner::{
    self, fixture_from_records, ExperimentConfig, RunDir, RunManifest, RunStatus, Runner,
};

#[derive(Parser)]
#[command(
    name = "riskprobe",
    version,
    about = "Holt-Laury risk-attitude elicitation for language models"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run an experiment, or continue an interrupted one.
    ///
    /// Exit code 0: complete; 2: complete with unwanted answers; 1: failed or interrupted.
    Run {
        #[arg(long, required_unless_present = "resume")]
        config: Option<PathBuf>,
        /// Run directory to continue; its stored config is used.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Progress and accounting of a run directory.
    Status { run_dir: PathBuf },
    /// Per-model metrics as JSON.
    Metrics {
        run_dir: PathBuf,
        #[arg(long)]
        benchmark: Option<PathBuf>,
        #[arg(long, default_value = "euclidean")]
        distance: Distance,
    },
    /// Write metric tables, rankings, curves and accounting.
    Report {
        run_dir: PathBuf,
        #[arg(long)]
        format: Format,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        benchmark: Option<PathBuf>,
        #[arg(long, default_value = "euclidean")]
        distance: Distance,
    },
    /// List the built-in context battery, or export it as TOML.
    Contexts {
        #[arg(long)]
        export: Option<PathBuf>,
    },
    /// Print the request body that would be sent for a context.
    Prompt {
        context_id: String,
        #[arg(long, default_value = "gpt-5")]
        model: String,
        /// Put the context text in the user message instead of a system message.
        #[arg(long)]
        prepend: bool,
    },
    /// Write a replay fixture holding every completion a run received.
    ExportReplay { run_dir: PathBuf, out: PathBuf },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match dispatch(Cli::parse().cmd) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn dispatch(cmd: Cmd) -> Result<u8> {
    match cmd {
        Cmd::Run { config, resume } => run(config, resume),
        Cmd::Status { run_dir } => {
            let s = runner::status(&run_dir)?;
            say(&serde_json::to_string_pretty(&s)?)?;
            Ok(0)
        }
        Cmd::Metrics {
            run_dir,
            benchmark,
            distance,
        } => {
            let (records, _) = load_run(&run_dir)?;
            let bench = load_benchmark(benchmark.as_deref())?;
            let ms = compute_all(&records, bench.as_ref(), distance);
            say(&serde_json::to_string_pretty(&ms)?)?;
            Ok(0)
        }
        Cmd::Report {
            run_dir,
            format,
            out,
            benchmark,
            distance,
        } => {
            let (records, followups) = load_run(&run_dir)?;
            let bench = load_benchmark(benchmark.as_deref())?;
            let ms = compute_all(&records, bench.as_ref(), distance);
            let bundle = ReportBundle::build(ms, &records, &followups, bench.as_ref(), distance);
            for p in emit(&bundle, format, &out)? {
                say(&p.display().to_string())?;
            }
            Ok(0)
        }
        Cmd::Contexts { export } => {
            let cat = contexts::catalog();
            match export {
                Some(path) => contexts::save_contexts(&path, &cat)?,
                None => {
                    for c in &cat {
                        say(&format!("{:<26} {:?}  {}", c.id, c.category, c.legend))?;
                    }
                }
            }
            Ok(0)
        }
        Cmd::Prompt {
            context_id,
            model,
            prepend,
        } => {
            let cat = contexts::catalog();
            let Some(ctx) = contexts::find(&cat, &context_id) else {
                bail!("unknown context {context_id:?}");
            };
            let placement = if prepend {
                ContextPlacement::PrependToUser
            } else {
                ContextPlacement::SystemMessage
            };
            let bundle = render_prompt_with(ctx, placement);
            say(&request_body(&model, &bundle, &CompletionParams::default()))?;
            Ok(0)
        }
        Cmd::ExportReplay { run_dir, out } => {
            let (records, followups) = load_run(&run_dir)?;
            let entries = fixture_from_records(&records, &followups);
            write_fixture(&out, &entries).with_context(|| format!("writing {}", out.display()))?;
            eprintln!("{} entries -> {}", entries.len(), out.display());
            Ok(0)
        }
    }
}

fn run(config: Option<PathBuf>, resume: Option<PathBuf>) -> Result<u8> {
    let runner = match (resume, config) {
        (Some(dir), _) => Runner::resume(&dir)?,
        (None, Some(path)) => Runner::new(ExperimentConfig::load(&path)?)?,
        (None, None) => bail!("either --config or --resume is required"),
    };
    let outcome = runner.run()?;
    let m = &outcome.manifest;
    eprintln!(
        "{}: {:?}, {} cells this invocation, {} unwanted, {} requests",
        outcome.run_dir.display(),
        m.status,
        outcome.executed,
        m.total_unwanted(),
        m.total_requests()
    );
    Ok(outcome.exit_code() as u8)
}

fn load_run(dir: &Path) -> Result<(Vec<runner::TrialRecord>, Vec<runner::FollowupRecord>)> {
    let manifest = RunManifest::load(dir)?;
    if manifest.status != RunStatus::Complete {
        log::warn!(
            "run in {} is {:?}; metrics cover completed cells only",
            dir.display(),
            manifest.status
        );
    }
    let rd = RunDir::new(dir);
    Ok((rd.load_records_strict()?, rd.load_followups()?))
}

fn load_benchmark(path: Option<&Path>) -> Result<Option<HumanBenchmark>> {
    path.map(|p| HumanBenchmark::load(p).with_context(|| format!("benchmark {}", p.display())))
        .transpose()
}

/// Prints a line; a closed pipe (e.g. `| head`) is not an error.
fn say(line: &str) -> Result<()> {
    let mut stdout = io::stdout().lock();
    match writeln!(stdout, "{line}").and_then(|_| stdout.flush()) {
        Err(e) if e.kind() == io::ErrorKind::BrokenPipe => Ok(()),
        r => Ok(r?),
    }
}
