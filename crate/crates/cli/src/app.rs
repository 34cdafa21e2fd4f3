//! Argument parsing and subcommand dispatch.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::Context;
use breathwatch_core::corpus::{Corpus, PublishedAverages};
use breathwatch_core::domain::Parameter;
use breathwatch_core::sim::{parse_with_corpus, run_node, FileSink, RetryPolicy, TcpSink};
use breathwatch_gateway::{GatewayConfig, Stamping, SystemClock};
use clap::{Args, Parser, Subcommand};

use crate::report::{self, TABLE_ORDER};

/// Process exit codes.
pub mod exit {
    pub const OK: i32 = 0;
    pub const USAGE: i32 = 1;
    pub const RUNTIME: i32 = 2;
    pub const MISMATCH: i32 = 3;
    pub const GAPPY: i32 = 4;
    pub const NO_DATA: i32 = 5;
}

#[derive(Debug, Parser)]
#[command(
    name = "breathwatch",
    version,
    about = "Asthma vitals monitoring: node simulator, gateway and report tools",
    after_help = "Exit codes: 0 success, 1 usage, 2 runtime failure, 3 validation or golden mismatch, \
                  4 report has gaps, 5 no data."
)]
pub struct Cli {
    /// Gateway configuration file (TOML). Used by `gateway serve`.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Log filter, e.g. `info` or `breathwatch_gateway=debug` [default: warn; info for `gateway serve`]
    #[arg(long, global = true, env = "LOG_LEVEL", value_name = "FILTER")]
    pub log_level: Option<String>,
    /// RNG seed; overrides the scenario's `rng_seed` for `node simulate`.
    #[arg(long, global = true, value_name = "N")]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulated sensor nodes.
    #[command(subcommand)]
    Node(NodeCommand),
    /// Ingestion gateway.
    #[command(subcommand)]
    Gateway(GatewayCommand),
    /// Result tables.
    #[command(subcommand)]
    Report(ReportCommand),
    /// The bundled study corpus.
    #[command(subcommand)]
    Corpus(CorpusCommand),
}

#[derive(Debug, Subcommand)]
pub enum NodeCommand {
    /// Run one node from a scenario file and print its run report.
    Simulate(SimulateArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Scenario file (TOML).
    #[arg(long, value_name = "FILE")]
    pub scenario: PathBuf,
    /// Gateway ingest address.
    #[arg(long, value_name = "HOST:PORT", required_unless_present = "out", conflicts_with = "out")]
    pub connect: Option<String>,
    /// Append frames to this file instead of connecting.
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
    /// Wall-clock pacing as virtual time over wall time, e.g. 3600 plays an
    /// hour per second [default: unpaced, as fast as the link allows]
    #[arg(long, value_name = "FACTOR", value_parser = positive_f64)]
    pub speed: Option<f64>,
    /// Corpus CSV for replay scenarios [default: bundled corpus]
    #[arg(long, value_name = "FILE")]
    pub corpus: Option<PathBuf>,
    /// Connection attempts before giving up.
    #[arg(long, value_name = "N", default_value_t = 5)]
    pub retries: u32,
}

#[derive(Debug, Subcommand)]
pub enum GatewayCommand {
    /// Serve ingest and HTTP until interrupted.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// Ingest port, or address:port [default: 7070]
    #[arg(long, value_name = "PORT", value_parser = listen_addr)]
    pub listen: Option<SocketAddr>,
    /// HTTP port, or address:port [default: 8080; env PORT]
    #[arg(long, value_name = "PORT", value_parser = listen_addr)]
    pub http: Option<SocketAddr>,
    /// Store directory, created if missing [default: ./breathwatch-store; env STORE_DIR]
    #[arg(long, value_name = "DIR")]
    pub store: Option<PathBuf>,
    /// Static dashboard files served under /ui/.
    #[arg(long, value_name = "DIR")]
    pub ui: Option<PathBuf>,
    /// Consecutive Emergency samples before an alert is raised [default: 3]
    #[arg(long, value_name = "N")]
    pub raise_after: Option<u32>,
    /// Consecutive Normal samples before an alert clears [default: 5]
    #[arg(long, value_name = "N")]
    pub clear_after: Option<u32>,
    /// Stamp samples on the node's own timeline, one cadence (ms) per
    /// sequence step, instead of wall-clock arrival time.
    #[arg(long, value_name = "MS")]
    pub paced: Option<i64>,
}

#[derive(Debug, Subcommand)]
pub enum ReportCommand {
    /// Write table_<parameter>.csv and series_<parameter>.csv files.
    Tables(TablesArgs),
}

#[derive(Debug, Args)]
pub struct TablesArgs {
    /// Build tables from a gateway store.
    #[arg(long, value_name = "DIR", conflicts_with = "corpus", required_unless_present = "corpus")]
    pub store: Option<PathBuf>,
    /// Build tables from a corpus CSV, or the bundled corpus when given
    /// without a value
    #[arg(long, value_name = "FILE", num_args = 0..=1, default_missing_value = BUNDLED)]
    pub corpus: Option<PathBuf>,
    /// Parameter to report; repeatable. One of body_temp (°C), heart_rate
    /// (bpm), ambient_temp (°C), humidity (%), air_quality (ppm) [default: all]
    #[arg(long, value_name = "NAME")]
    pub parameter: Vec<Parameter>,
    /// Output directory.
    #[arg(long, value_name = "DIR", default_value = "report")]
    pub out: PathBuf,
    /// Number of hours per table.
    #[arg(long, value_name = "N", default_value_t = 6)]
    pub hours: i64,
}

#[derive(Debug, Subcommand)]
pub enum CorpusCommand {
    /// Check every cell, Average row and grand mean against the reference.
    Validate(ValidateArgs),
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    /// Corpus CSV to check [default: bundled corpus]
    #[arg(long, value_name = "FILE")]
    pub corpus: Option<PathBuf>,
    /// Published averages CSV [default: bundled]
    #[arg(long, value_name = "FILE")]
    pub averages: Option<PathBuf>,
}

/// Stands for the compiled-in corpus wherever a corpus file is accepted.
pub const BUNDLED: &str = "bundled";

fn positive_f64(s: &str) -> Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if v.is_finite() && v > 0.0 => Ok(v),
        _ => Err(format!("{s:?} is not a positive number")),
    }
}

/// A bare port binds every interface.
fn listen_addr(s: &str) -> Result<SocketAddr, String> {
    if let Ok(port) = s.parse::<u16>() {
        return Ok(SocketAddr::from(([0, 0, 0, 0], port)));
    }
    s.parse().map_err(|_| format!("{s:?} is neither a port nor address:port"))
}

fn init_logging(filter: &str) {
    let filter = tracing_subscriber::EnvFilter::try_new(filter).unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("warn"));
    let _ = tracing_subscriber::fmt()
        .with_env_filter(filter)
        .with_writer(std::io::stderr)
        .with_ansi(std::io::IsTerminal::is_terminal(&std::io::stderr()))
        .try_init();
}

/// Parses `args` and runs the command, returning the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { exit::USAGE } else { exit::OK };
            let _ = e.print();
            return code;
        }
    };
    let result = match &cli.command {
        Command::Node(NodeCommand::Simulate(a)) => simulate(&cli, a),
        Command::Gateway(GatewayCommand::Serve(a)) => serve(&cli, a),
        Command::Report(ReportCommand::Tables(a)) => tables(&cli, a),
        Command::Corpus(CorpusCommand::Validate(a)) => validate(&cli, a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            exit::RUNTIME
        }
    }
}

fn load_corpus(path: Option<&Path>) -> anyhow::Result<Corpus> {
    match path {
        None => Ok(Corpus::bundled()),
        Some(p) if p.as_os_str() == BUNDLED => Ok(Corpus::bundled()),
        Some(p) => Corpus::load(p).with_context(|| format!("loading corpus {}", p.display())),
    }
}

fn simulate(cli: &Cli, args: &SimulateArgs) -> anyhow::Result<i32> {
    init_logging(cli.log_level.as_deref().unwrap_or("warn"));
    let text = std::fs::read_to_string(&args.scenario)
        .with_context(|| format!("reading scenario {}", args.scenario.display()))?;
    let corpus = load_corpus(args.corpus.as_deref())?;
    let mut config = match parse_with_corpus(&text, &corpus) {
        Ok(c) => c,
        Err(e) => {
            for issue in &e.issues {
                eprintln!("{}:{}: {}", args.scenario.display(), issue.line, issue.message);
            }
            return Ok(exit::MISMATCH);
        }
    };
    if let Some(seed) = cli.seed {
        config.rng_seed = seed;
    }
    let result = match (&args.connect, &args.out) {
        (Some(addr), _) => {
            let retry = RetryPolicy {
                attempts: args.retries.max(1),
                ..RetryPolicy::default()
            };
            match TcpSink::connect(addr, args.speed, retry) {
                Ok(sink) => run_node(config, sink),
                Err(e) => {
                    eprintln!("error: cannot reach gateway at {addr}: {e}");
                    return Ok(exit::RUNTIME);
                }
            }
        }
        (None, Some(path)) => {
            let sink = FileSink::append(path).with_context(|| format!("opening {}", path.display()))?;
            run_node(config, sink)
        }
        (None, None) => unreachable!("clap requires --connect or --out"),
    };
    match result {
        Ok(report) => {
            println!("{}", serde_json::to_string_pretty(&report)?);
            Ok(if report.completed { exit::OK } else { exit::RUNTIME })
        }
        Err(aborted) => {
            println!("{}", serde_json::to_string_pretty(&aborted.report)?);
            eprintln!("error: {}", aborted.error);
            Ok(exit::RUNTIME)
        }
    }
}

fn serve(cli: &Cli, args: &ServeArgs) -> anyhow::Result<i32> {
    let mut config = match &cli.config {
        Some(path) => GatewayConfig::load(path)?,
        None => GatewayConfig::default(),
    };
    config.apply_env(|k| std::env::var(k).ok())?;
    if let Some(level) = &cli.log_level {
        config.log_level = level.clone();
    }
    if let Some(addr) = args.listen {
        config.ingest.listen = addr;
    }
    if let Some(addr) = args.http {
        config.http.listen = addr;
    }
    if let Some(dir) = &args.store {
        config.store.dir = dir.clone();
    }
    if let Some(dir) = &args.ui {
        config.ui_dir = Some(dir.clone());
    }
    if let Some(n) = args.raise_after {
        config.alerts.raise_after = n;
    }
    if let Some(n) = args.clear_after {
        config.alerts.clear_after = n;
    }
    if let Some(cadence_ms) = args.paced {
        config.clock = Stamping::Paced { cadence_ms };
    }
    if let Err(e) = config.validate() {
        eprintln!("error: {e}");
        return Ok(exit::USAGE);
    }
    init_logging(&config.log_level);

    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(async {
        let running = breathwatch_gateway::start(&config, Arc::new(SystemClock)).await?;
        eprintln!(
            "breathwatch gateway: ingest {} http {} store {}",
            running.ingest_addr,
            running.http_addr,
            config.store.dir.display()
        );
        running.run_until(shutdown_signal()).await?;
        Ok::<_, anyhow::Error>(exit::OK)
    })
}

async fn shutdown_signal() {
    #[cfg(unix)]
    {
        use tokio::signal::unix::{signal, SignalKind};
        let mut term = match signal(SignalKind::terminate()) {
            Ok(s) => s,
            Err(_) => {
                let _ = tokio::signal::ctrl_c().await;
                return;
            }
        };
        tokio::select! {
            _ = tokio::signal::ctrl_c() => {}
            _ = term.recv() => {}
        }
    }
    #[cfg(not(unix))]
    {
        let _ = tokio::signal::ctrl_c().await;
    }
}

fn tables(cli: &Cli, args: &TablesArgs) -> anyhow::Result<i32> {
    init_logging(cli.log_level.as_deref().unwrap_or("warn"));
    if args.hours < 1 {
        eprintln!("error: --hours must be at least 1");
        return Ok(exit::USAGE);
    }
    let data = match &args.store {
        Some(dir) if !dir.is_dir() => {
            eprintln!("no data: store {} does not exist", dir.display());
            return Ok(exit::NO_DATA);
        }
        Some(dir) => {
            let records = breathwatch_gateway::store::read_all_records(dir)
                .with_context(|| format!("reading store {}", dir.display()))?;
            report::store_hours(&records)?
        }
        None => breathwatch_core::analytics::corpus_hours(&load_corpus(args.corpus.as_deref())?),
    };
    if data.is_empty() {
        eprintln!("no data");
        return Ok(exit::NO_DATA);
    }
    let parameters: Vec<Parameter> = if args.parameter.is_empty() {
        TABLE_ORDER.to_vec()
    } else {
        TABLE_ORDER.into_iter().filter(|p| args.parameter.contains(p)).collect()
    };
    let hours: Vec<i64> = (1..=args.hours).collect();
    let written = report::write_tables(&data, &parameters, &hours, &args.out)
        .with_context(|| format!("writing to {}", args.out.display()))?;
    let mut gappy = false;
    for w in &written {
        let p = w.report.parameter;
        let averages: Vec<String> = w
            .report
            .average_row()
            .into_iter()
            .map(|v| v.map_or("NA".into(), |v| breathwatch_core::analytics::format_value(p, v)))
            .collect();
        println!("{p} ({}) average: {}", p.unit(), averages.join(" "));
        for (hour, person) in w.report.gaps() {
            gappy = true;
            println!("  gap: person {person} hour {hour}");
        }
    }
    println!("wrote {} tables to {}", written.len(), args.out.display());
    Ok(if gappy { exit::GAPPY } else { exit::OK })
}

fn validate(cli: &Cli, args: &ValidateArgs) -> anyhow::Result<i32> {
    init_logging(cli.log_level.as_deref().unwrap_or("warn"));
    let corpus = load_corpus(args.corpus.as_deref())?;
    let published = match &args.averages {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            PublishedAverages::parse(&text).with_context(|| format!("parsing {}", p.display()))?
        }
        None => PublishedAverages::bundled(),
    };
    let mismatches = report::validate_corpus(&corpus, &Corpus::bundled(), &published);
    if mismatches.is_empty() {
        let data = breathwatch_core::analytics::corpus_hours(&corpus);
        for p in TABLE_ORDER {
            let r = breathwatch_core::analytics::table_report(p, &data, &breathwatch_core::analytics::STUDY_HOURS);
            let row: Vec<String> = r
                .average_row()
                .into_iter()
                .flatten()
                .map(|v| breathwatch_core::analytics::format_value(p, v))
                .collect();
            println!("{p} average: {}", row.join(" "));
        }
        println!("corpus valid: {} rows, every cell and average matches", corpus.len());
        Ok(exit::OK)
    } else {
        for m in &mismatches {
            println!("mismatch: {m}");
        }
        println!("corpus invalid: {} mismatches", mismatches.len());
        Ok(exit::MISMATCH)
    }
}
