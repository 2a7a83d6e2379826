use std::fs;
use std::io::{self, BufWriter, Write};
use std::net::IpAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use tactvest_analytics::log::{read_log, trial_sessions};
use tactvest_analytics::metrics::report;
use tactvest_analytics::path::{score, synthetic_batch, PathRecord, ScoreConfig};
use tactvest_core::{compile, validate, CodingStrategy, PatternLibrary};
use tactvest_gateway::engine::{EngineConfig, NorthMode};
use tactvest_gateway::export::export_metrics;
use tactvest_gateway::headless::{run_headless, HeadlessConfig, ResponderKind};
use tactvest_gateway::ingest::OdometryIngest;
use tactvest_gateway::replay::{replay, verify, CsvSink, FrameSink, NullSink};
use tactvest_gateway::server::{self, ServeConfig};
use tactvest_gateway::store::SessionStore;

#[derive(Parser)]
#[command(name = "tactvest", version, about = "Vibrotactile vest coding engine and trial analytics")]
struct Cli {
    /// Directory holding stored sessions.
    #[arg(long, global = true, env = "TACTVEST_SESSIONS_DIR", default_value = "sessions")]
    sessions_dir: PathBuf,
    /// Directory of pattern JSON files overriding the built-in library.
    #[arg(long, global = true, env = "TACTVEST_PATTERNS_DIR")]
    patterns_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run the real-time frame service.
    Serve(ServeArgs),
    /// Re-run a stored session and emit its frame dump.
    Replay(ReplayArgs),
    /// Metrics report over stored sessions.
    Analyze {
        ids: Vec<String>,
        #[arg(long, value_enum, env = "TACTVEST_FORMAT", default_value_t = Format::Both)]
        format: Format,
    },
    #[command(subcommand)]
    Trial(TrialCmd),
    #[command(subcommand)]
    Path(PathCmd),
    /// Print the vest topology JSON.
    Topology,
    #[command(subcommand)]
    Patterns(PatternsCmd),
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long, env = "TACTVEST_PORT", default_value_t = 8080)]
    port: u16,
    #[arg(long, env = "TACTVEST_BIND", default_value = "127.0.0.1")]
    bind: IpAddr,
    #[arg(long, env = "TACTVEST_TICK_MS", default_value_t = 20)]
    tick_ms: u32,
    /// Pin north: with a value, that heading in degrees; without, the
    /// heading of the first odometry sample.
    #[arg(long, env = "TACTVEST_NORTH_CALIBRATE", num_args = 0..=1, default_missing_value = "first")]
    north_calibrate: Option<String>,
}

#[derive(Clone, Copy, ValueEnum)]
enum SinkKind {
    Csv,
    Null,
}

#[derive(Args)]
struct ReplayArgs {
    id: String,
    #[arg(long, value_enum, env = "TACTVEST_SINK", default_value_t = SinkKind::Csv)]
    sink: SinkKind,
    /// Output file for the csv sink; stdout when absent.
    #[arg(long, env = "TACTVEST_OUT")]
    out: Option<PathBuf>,
    /// Compare against the archived dump instead of writing frames.
    #[arg(long)]
    verify: bool,
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum Format {
    Json,
    Table,
    Both,
}

#[derive(Subcommand)]
enum TrialCmd {
    /// Run the six-test protocol headless with a simulated responder.
    Run(TrialRunArgs),
    /// Metrics report over session log files.
    Analyze {
        #[arg(long, env = "TACTVEST_GLOB")]
        glob: String,
        #[arg(long, value_enum, env = "TACTVEST_FORMAT", default_value_t = Format::Both)]
        format: Format,
    },
}

#[derive(Args)]
struct TrialRunArgs {
    #[arg(long, env = "TACTVEST_STRATEGY")]
    strategy: CodingStrategy,
    #[arg(long, env = "TACTVEST_SEED", default_value_t = 1)]
    seed: u64,
    /// `perfect`, `silent`, or a correct-answer probability in [0, 1].
    #[arg(long, env = "TACTVEST_RESPONDER", default_value = "0.8", value_parser = parse_responder)]
    responder: ResponderKind,
    /// JSON-lines odometry replay file.
    #[arg(long, env = "TACTVEST_ODOMETRY")]
    odometry: Option<PathBuf>,
    #[arg(long, env = "TACTVEST_TRIALS", default_value_t = 6)]
    trials: u32,
    #[arg(long, env = "TACTVEST_STIMULI", default_value_t = 8)]
    stimuli: usize,
    #[arg(long, env = "TACTVEST_PARTICIPANT", default_value = "sim")]
    participant: String,
    #[arg(long, env = "TACTVEST_TICK_MS", default_value_t = 20)]
    tick_ms: u32,
    /// Session id; derived from the clock when absent.
    #[arg(long, env = "TACTVEST_SESSION_ID")]
    id: Option<String>,
}

#[derive(Subcommand)]
enum PathCmd {
    /// Score one path record and print the score JSON.
    Score {
        #[arg(long, env = "TACTVEST_RECORD")]
        record: PathBuf,
    },
    /// Write a synthetic batch of path records.
    Synth {
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 41)]
        total: usize,
        #[arg(long, default_value_t = 31)]
        passes: usize,
        #[arg(long)]
        out_dir: PathBuf,
    },
}

#[derive(Subcommand)]
enum PatternsCmd {
    /// Print the effective pattern library.
    Dump,
    /// Validate and compile every pattern; fails on any violation.
    Check {
        #[arg(long, env = "TACTVEST_TICK_MS", default_value_t = 20)]
        tick_ms: u32,
    },
}

fn parse_responder(s: &str) -> Result<ResponderKind, String> {
    match s {
        "perfect" => Ok(ResponderKind::Perfect),
        "silent" => Ok(ResponderKind::Silent),
        _ => match s.parse::<f64>() {
            Ok(p) if (0.0..=1.0).contains(&p) => Ok(ResponderKind::Accuracy(p)),
            _ => Err(format!("expected perfect, silent or a probability, got {s:?}")),
        },
    }
}

fn library(dir: Option<&Path>) -> Result<PatternLibrary> {
    Ok(match dir {
        Some(d) => PatternLibrary::with_overrides(d)?,
        None => PatternLibrary::builtin().clone(),
    })
}

fn print_json(v: &impl Serialize) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

fn emit<T: Serialize>(v: &T, table: impl FnOnce(&T) -> String, format: Format) -> Result<()> {
    if format != Format::Json {
        print!("{}", table(v));
    }
    if format == Format::Both {
        println!();
    }
    if format != Format::Table {
        print_json(v)?;
    }
    Ok(())
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()))
        .with_writer(io::stderr)
        .init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    let patterns_dir = cli.patterns_dir.as_deref();
    match cli.command {
        Cmd::Serve(a) => {
            let north = match a.north_calibrate.as_deref() {
                None => NorthMode::OdometryZero,
                Some("first") => NorthMode::FirstSample,
                Some(v) => NorthMode::Fixed(v.parse().with_context(|| format!("--north-calibrate {v:?}"))?),
            };
            let cfg = ServeConfig {
                bind: a.bind,
                port: a.port,
                tick_ms: a.tick_ms,
                patterns_dir: cli.patterns_dir.clone(),
                sessions_dir: cli.sessions_dir.clone(),
                north,
            };
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(async {
                let srv = server::start(cfg).await?;
                eprintln!("listening on http://{}", srv.addr);
                tokio::signal::ctrl_c().await?;
                eprintln!("shutting down");
                srv.stop().await?;
                anyhow::Ok(())
            })?;
        }
        Cmd::Replay(a) => {
            let store = SessionStore::open(&cli.sessions_dir)?;
            if a.verify {
                let ok = verify(&store, &a.id)?;
                println!("{}: {}", a.id, if ok { "identical" } else { "DIFFERS" });
                return Ok(if ok { ExitCode::SUCCESS } else { ExitCode::FAILURE });
            }
            let summary = match (a.sink, &a.out) {
                (SinkKind::Null, _) => replay(&store, &a.id, &mut NullSink)?,
                (SinkKind::Csv, Some(p)) => {
                    let f = fs::File::create(p).with_context(|| p.display().to_string())?;
                    run_sink(&store, &a.id, CsvSink::new(BufWriter::new(f)))?
                }
                (SinkKind::Csv, None) => run_sink(&store, &a.id, CsvSink::new(BufWriter::new(io::stdout().lock())))?,
            };
            eprintln!(
                "replayed {}: {} frames, {} inputs, {} emitted records",
                a.id,
                summary.frames,
                summary.inputs,
                summary.emitted.len()
            );
        }
        Cmd::Analyze { ids, format } => {
            let store = SessionStore::open(&cli.sessions_dir)?;
            let r = export_metrics(&store, &ids)?;
            emit(&r, |r| r.to_table(), format)?;
        }
        Cmd::Trial(TrialCmd::Run(a)) => {
            let store = SessionStore::open(&cli.sessions_dir)?;
            let odometry = match &a.odometry {
                Some(p) => read_odometry(p)?,
                None => Vec::new(),
            };
            let cfg = HeadlessConfig {
                strategy: a.strategy,
                seed: a.seed,
                participant: a.participant,
                trials: a.trials,
                stimuli: a.stimuli,
                responder: a.responder,
                engine: EngineConfig::new(a.tick_ms),
                ..HeadlessConfig::default()
            };
            let id = run_headless(&store, Arc::new(library(patterns_dir)?), &cfg, &odometry, a.id.as_deref())?;
            println!("{id}");
        }
        Cmd::Trial(TrialCmd::Analyze { glob: pattern, format }) => {
            let mut sessions = Vec::new();
            let mut files = 0;
            for entry in glob::glob(&pattern)? {
                let path = entry?;
                sessions.extend(trial_sessions(&read_log(&path)?));
                files += 1;
            }
            if files == 0 {
                eprintln!("no files match {pattern:?}");
            }
            emit(&report(&sessions), |r| r.to_table(), format)?;
        }
        Cmd::Path(PathCmd::Score { record }) => {
            let text = fs::read_to_string(&record).with_context(|| record.display().to_string())?;
            let rec: PathRecord = serde_json::from_str(&text).with_context(|| record.display().to_string())?;
            print_json(&score(&rec.drawn, &rec.truth, &ScoreConfig::default())?)?;
        }
        Cmd::Path(PathCmd::Synth {
            seed,
            total,
            passes,
            out_dir,
        }) => {
            if passes > total {
                bail!("passes must not exceed total");
            }
            fs::create_dir_all(&out_dir)?;
            for (rec, _) in synthetic_batch(seed, total, passes) {
                let p = out_dir.join(format!("{}.json", rec.id));
                fs::write(&p, serde_json::to_string_pretty(&rec)?).with_context(|| p.display().to_string())?;
            }
            println!("{total} records in {}", out_dir.display());
        }
        Cmd::Topology => print_json(&tactvest_core::vest::topology())?,
        Cmd::Patterns(PatternsCmd::Dump) => println!("{}", library(patterns_dir)?.to_json()),
        Cmd::Patterns(PatternsCmd::Check { tick_ms }) => {
            let lib = library(patterns_dir)?;
            let mut failed = false;
            for spec in lib.all() {
                let violations = validate(spec);
                let frames = compile(spec, tick_ms);
                match (&frames, violations.is_empty()) {
                    (Ok(f), true) => println!("ok    {:<32} {} frames", spec.name, f.len()),
                    _ => {
                        failed = true;
                        println!("FAIL  {}", spec.name);
                        for v in &violations {
                            println!("      {v}");
                        }
                        if let Err(e) = frames {
                            println!("      {e}");
                        }
                    }
                }
            }
            return Ok(if failed { ExitCode::FAILURE } else { ExitCode::SUCCESS });
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn run_sink<W: Write>(store: &SessionStore, id: &str, mut sink: CsvSink<W>) -> Result<tactvest_gateway::replay::ReplaySummary> {
    let s = replay(store, id, &mut sink as &mut dyn FrameSink)?;
    sink.into_inner().flush()?;
    Ok(s)
}

fn read_odometry(path: &Path) -> Result<Vec<tactvest_core::direction::OdometrySample>> {
    let text = fs::read(path).with_context(|| path.display().to_string())?;
    let mut ingest = OdometryIngest::new(Default::default(), Default::default());
    let samples: Vec<_> = text.split(|b| *b == b'\n').filter_map(|l| ingest.line(l)).filter_map(Result::ok).collect();
    if ingest.rejected() > 0 {
        eprintln!("{}: skipped {} invalid odometry lines", path.display(), ingest.rejected());
    }
    Ok(samples)
}
