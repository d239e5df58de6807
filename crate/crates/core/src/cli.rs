//! Command-line front end: scenario runner, analysis reports and trace
//! listing.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use thiserror::Error;

use crate::analysis::entropy::{DEFAULT_MIN_LEN, DEFAULT_THRESHOLD};
use crate::analysis::{self, BlobFinding};
use crate::scenario::{self, ScenarioName, ScenarioOptions};
use crate::simnet::TraceRecord;
use crate::testbed::BELKIN_OUI;

pub const OUTPUT_DIR_ENV: &str = "PLUGNET_OUTPUT_DIR";
pub const DEFAULT_OUTPUT_DIR: &str = "plugnet-out";

pub const EXIT_OK: i32 = 0;
pub const EXIT_POSTCONDITION: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: line {line}: {reason}")]
    Parse {
        path: PathBuf,
        line: usize,
        reason: String,
    },
}

#[derive(Debug, Parser)]
#[command(
    name = "plugnet",
    version,
    about = "Smart-plug protocol emulator and triage tools"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run named scenarios.
    #[command(subcommand)]
    Scenario(ScenarioCommand),
    /// Entropy, certificate and filesystem reports as JSON.
    #[command(subcommand)]
    Analyze(AnalyzeCommand),
    /// Read captured traces.
    #[command(subcommand)]
    Trace(TraceCommand),
}

#[derive(Debug, Subcommand)]
pub enum ScenarioCommand {
    Run(RunArgs),
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// benign, sharing-attack, sharing-attack-patched, hijack or local-control
    #[arg(long)]
    pub name: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Run against the fixed server.
    #[arg(long)]
    pub patched: bool,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
    /// Vendor OUI used by the wardriving step, e.g. ec:1a:59
    #[arg(long)]
    pub vendor_oui: Option<String>,
}

#[derive(Debug, Subcommand)]
pub enum AnalyzeCommand {
    Entropy {
        #[arg(long)]
        trace: PathBuf,
        #[arg(long)]
        threshold: Option<f64>,
        #[arg(long)]
        min_len: Option<usize>,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    FindCert {
        #[arg(long)]
        blob: PathBuf,
    },
    FsMagic {
        #[arg(long)]
        blob: PathBuf,
    },
}

#[derive(Debug, Subcommand)]
pub enum TraceCommand {
    Inspect {
        #[arg(long)]
        trace: PathBuf,
        /// kind=, src= or dst=; repeat to combine
        #[arg(long)]
        filter: Vec<String>,
    },
}

/// Values read from a config file. Every field is optional.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FileConfig {
    pub scenario: Option<ScenarioName>,
    pub seed: Option<u64>,
    pub patched: Option<bool>,
    pub vendor_oui: Option<[u8; 3]>,
    pub output_dir: Option<PathBuf>,
    pub entropy_threshold: Option<f64>,
    pub entropy_min_len: Option<usize>,
}

fn parse_bool(s: &str) -> Option<bool> {
    match s {
        "true" | "yes" | "1" => Some(true),
        "false" | "no" | "0" => Some(false),
        _ => None,
    }
}

pub fn parse_oui(s: &str) -> Result<[u8; 3], String> {
    let hex: String = s.chars().filter(|c| !matches!(c, ':' | '-')).collect();
    let bytes = hex::decode(&hex).map_err(|e| format!("bad OUI {s:?}: {e}"))?;
    bytes
        .try_into()
        .map_err(|_| format!("bad OUI {s:?}: expected 3 bytes"))
}

impl FileConfig {
    /// `key = value` lines; `#` starts a comment line.
    pub fn parse(text: &str) -> Result<Self, (usize, String)> {
        let mut cfg = FileConfig::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |reason: String| (i + 1, reason);
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| err("expected key = value".into()))?;
            let (key, value) = (key.trim(), value.trim());
            let bad = || err(format!("bad value for {key}: {value:?}"));
            match key {
                "scenario" => cfg.scenario = Some(value.parse().map_err(err)?),
                "seed" => cfg.seed = Some(value.parse().map_err(|_| bad())?),
                "patched" => cfg.patched = Some(parse_bool(value).ok_or_else(bad)?),
                "vendor_oui" => cfg.vendor_oui = Some(parse_oui(value).map_err(err)?),
                "output_dir" => cfg.output_dir = Some(PathBuf::from(value)),
                "entropy_threshold" => {
                    cfg.entropy_threshold = Some(value.parse().map_err(|_| bad())?)
                }
                "entropy_min_len" => cfg.entropy_min_len = Some(value.parse().map_err(|_| bad())?),
                other => return Err(err(format!("unknown key {other:?}"))),
            }
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = read_text(path)?;
        FileConfig::parse(&text).map_err(|(line, reason)| CliError::Parse {
            path: path.to_path_buf(),
            line,
            reason,
        })
    }
}

/// Fully resolved settings for one scenario run.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub scenario: ScenarioName,
    pub seed: u64,
    pub patched: bool,
    pub vendor_oui: [u8; 3],
    pub output_dir: PathBuf,
}

impl ScenarioConfig {
    /// Flags win over the config file, which wins over the environment
    /// fallback for the output directory, which wins over built-in defaults.
    pub fn resolve(
        args: &RunArgs,
        file: &FileConfig,
        env_output_dir: Option<PathBuf>,
    ) -> Result<Self, CliError> {
        let scenario = match &args.name {
            Some(name) => name.parse().map_err(CliError::Usage)?,
            None => file
                .scenario
                .ok_or_else(|| CliError::Usage("missing --name".into()))?,
        };
        let seed = args
            .seed
            .or(file.seed)
            .ok_or_else(|| CliError::Usage("missing --seed".into()))?;
        let vendor_oui = match &args.vendor_oui {
            Some(s) => parse_oui(s).map_err(CliError::Usage)?,
            None => file.vendor_oui.unwrap_or(BELKIN_OUI),
        };
        let output_dir = args
            .output_dir
            .clone()
            .or_else(|| file.output_dir.clone())
            .or(env_output_dir)
            .unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT_DIR));
        Ok(ScenarioConfig {
            scenario,
            seed,
            patched: args.patched || file.patched.unwrap_or(false),
            vendor_oui,
            output_dir,
        })
    }
}

fn read_text(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn read_bytes(path: &Path) -> Result<Vec<u8>, CliError> {
    fs::read(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    fs::write(path, bytes).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn pretty<T: Serialize>(value: &T) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(value).expect("reports serialize");
    out.push(b'\n');
    out
}

fn io_err(source: std::io::Error) -> CliError {
    CliError::Io {
        path: PathBuf::from("<stdout>"),
        source,
    }
}

fn scenario_run(args: &RunArgs, out: &mut dyn Write) -> Result<i32, CliError> {
    let file = match &args.config {
        Some(path) => FileConfig::load(path)?,
        None => FileConfig::default(),
    };
    let env_dir = std::env::var_os(OUTPUT_DIR_ENV).map(PathBuf::from);
    let cfg = ScenarioConfig::resolve(args, &file, env_dir)?;

    let options = ScenarioOptions {
        seed: cfg.seed,
        patched: cfg.patched,
        vendor_oui: cfg.vendor_oui,
    };
    let run = scenario::run(cfg.scenario, &options)
        .map_err(|e| CliError::Usage(format!("scenario aborted: {e}")))?;

    fs::create_dir_all(&cfg.output_dir).map_err(|source| CliError::Io {
        path: cfg.output_dir.clone(),
        source,
    })?;
    write_file(&cfg.output_dir.join("trace.jsonl"), &run.trace_jsonl())?;
    write_file(&cfg.output_dir.join("report.json"), &pretty(&run.report))?;
    write_file(
        &cfg.output_dir.join("final_states.json"),
        &pretty(&run.report.final_states),
    )?;

    let report = &run.report;
    for check in &report.checks {
        let mark = if check.passed { "ok" } else { "FAILED" };
        writeln!(out, "  {mark:6} {}", check.name).map_err(io_err)?;
    }
    let passed = report.checks.iter().filter(|c| c.passed).count();
    writeln!(
        out,
        "{} seed={} patched={} outcome={} checks={}/{} output={}",
        report.scenario,
        report.seed,
        report.patched,
        report.outcome,
        passed,
        report.checks.len(),
        cfg.output_dir.display()
    )
    .map_err(io_err)?;
    Ok(if report.passed() {
        EXIT_OK
    } else {
        EXIT_POSTCONDITION
    })
}

#[derive(Serialize)]
struct Findings {
    findings: Vec<BlobFinding>,
}

fn analyze(cmd: &AnalyzeCommand, out: &mut dyn Write) -> Result<i32, CliError> {
    let json = match cmd {
        AnalyzeCommand::Entropy {
            trace,
            threshold,
            min_len,
            config,
        } => {
            let file = match config {
                Some(path) => FileConfig::load(path)?,
                None => FileConfig::default(),
            };
            let threshold = threshold
                .or(file.entropy_threshold)
                .unwrap_or(DEFAULT_THRESHOLD);
            let min_len = min_len.or(file.entropy_min_len).unwrap_or(DEFAULT_MIN_LEN);
            let text = read_text(trace)?;
            let report = analysis::classify_trace_fields(&text, threshold, min_len).map_err(
                |e| match e {
                    analysis::EntropyError::Parse { line, reason } => CliError::Parse {
                        path: trace.clone(),
                        line,
                        reason,
                    },
                    other => CliError::Usage(other.to_string()),
                },
            )?;
            pretty(&report)
        }
        AnalyzeCommand::FindCert { blob } => pretty(&Findings {
            findings: analysis::find_pem_certificates(&read_bytes(blob)?),
        }),
        AnalyzeCommand::FsMagic { blob } => pretty(&Findings {
            findings: analysis::identify_filesystems(&read_bytes(blob)?),
        }),
    };
    out.write_all(&json).map_err(io_err)?;
    Ok(EXIT_OK)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TraceFilter {
    Kind(String),
    Src(String),
    Dst(String),
}

impl TraceFilter {
    pub fn parse(s: &str) -> Result<Self, String> {
        match s.split_once('=') {
            Some(("kind", v)) => Ok(TraceFilter::Kind(v.to_string())),
            Some(("src", v)) => Ok(TraceFilter::Src(v.to_string())),
            Some(("dst", v)) => Ok(TraceFilter::Dst(v.to_string())),
            _ => Err(format!("bad filter {s:?}: expected kind=, src= or dst=")),
        }
    }

    /// Endpoints match on label or address.
    pub fn matches(&self, r: &TraceRecord) -> bool {
        match self {
            TraceFilter::Kind(k) => &r.kind == k,
            TraceFilter::Src(v) => &r.src.label == v || &r.src.addr == v,
            TraceFilter::Dst(v) => &r.dst.label == v || &r.dst.addr == v,
        }
    }
}

const REDACTED_FIELDS: [&str; 1] = ["wifi.passphrase"];

fn render_value(bytes: &[u8]) -> String {
    let printable = !bytes.is_empty() && bytes.iter().all(|b| b.is_ascii_graphic() || *b == b' ');
    if printable {
        format!("{:?}", String::from_utf8_lossy(bytes))
    } else {
        hex::encode(bytes)
    }
}

/// One line per record.
pub fn render_record(r: &TraceRecord) -> Result<String, String> {
    let msg = r.message().map_err(|e| e.to_string())?.redacted();
    let event = r
        .annotations
        .get("event")
        .map(String::as_str)
        .unwrap_or("-");
    let mut line = format!(
        "{:06} t={} {} {}({}) -> {}({}) {:?} {}",
        r.seq, r.vtime, event, r.src.label, r.src.addr, r.dst.label, r.dst.addr, r.channel, r.kind
    );
    for (name, bytes) in msg.fields() {
        let value = if REDACTED_FIELDS.contains(&name.as_str()) {
            "<redacted>".to_string()
        } else {
            render_value(&bytes)
        };
        line.push_str(&format!(" {name}={value}"));
    }
    Ok(line)
}

fn trace_inspect(trace: &Path, filters: &[String], out: &mut dyn Write) -> Result<i32, CliError> {
    let filters: Vec<TraceFilter> = filters
        .iter()
        .map(|f| TraceFilter::parse(f))
        .collect::<Result<_, _>>()
        .map_err(CliError::Usage)?;
    let text = read_text(trace)?;
    let mut lines = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parse = |reason: String| CliError::Parse {
            path: trace.to_path_buf(),
            line: i + 1,
            reason,
        };
        let record: TraceRecord = serde_json::from_str(line).map_err(|e| parse(e.to_string()))?;
        let rendered = render_record(&record).map_err(parse)?;
        if filters.iter().all(|f| f.matches(&record)) {
            lines.push(rendered);
        }
    }
    for line in lines {
        writeln!(out, "{line}").map_err(io_err)?;
    }
    Ok(EXIT_OK)
}

pub fn execute(cli: &Cli, out: &mut dyn Write) -> Result<i32, CliError> {
    match &cli.command {
        Command::Scenario(ScenarioCommand::Run(args)) => scenario_run(args, out),
        Command::Analyze(cmd) => analyze(cmd, out),
        Command::Trace(TraceCommand::Inspect { trace, filter }) => {
            trace_inspect(trace, filter, out)
        }
    }
}

/// Parse `args` (including the program name) and run. Returns the exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if e.use_stderr() {
                err.write_all(text.as_bytes())
            } else {
                out.write_all(text.as_bytes())
            };
            return code;
        }
    };
    match execute(&cli, out) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "plugnet: {e}");
            EXIT_USAGE
        }
    }
}
