//! Command-line front end.
//!
//! `detect` streams observations from CSV or JSON Lines through a conformal
//! e-predictor and a stopping rule, writing each alarm as a JSON line the
//! moment it fires and a summary line at the end. `validate` and
//! `bench-delay` drive the Monte Carlo harness.
//!
//! Exit codes: 0 success, 1 validation gate failed, 2 usage or I/O error.

use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::detector::{AlarmRecord, Detector, DetectorConfig, Procedure, SummaryRecord};
use crate::epredictor::{BuiltinPredictor, EValueStream, Observation};
use crate::error::Error;
use crate::sim::{self, Distribution, ScenarioSpec, ValidityReport};

pub const EXIT_OK: u8 = 0;
pub const EXIT_GATE_FAILED: u8 = 1;
pub const EXIT_USAGE: u8 = 2;

/// Environment variable holding the `env_logger` filter.
pub const LOG_ENV: &str = "DRIFTGUARD_LOG";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("line {line}: {reason}")]
    BadRecord { line: u64, reason: String },
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Core(#[from] Error),
}

#[derive(Debug, Parser)]
#[command(
    name = "driftguard",
    version,
    about = "Detect violations of the IID assumption in a data stream"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Stream observations through a detector and emit alarms as JSON Lines.
    Detect(DetectArgs),
    /// Monte Carlo check of the false-alarm bound under an IID null.
    Validate(ValidateArgs),
    /// Exploratory detection-delay benchmark for a scenario with a change point.
    BenchDelay(BenchDelayArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Default)]
pub enum InputFormat {
    #[default]
    Csv,
    Jsonl,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Default)]
pub enum PredictorKind {
    #[default]
    Knn,
    DistMean,
    Const,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ProcedureArg {
    Rs,
    Musuc,
}

impl From<ProcedureArg> for Procedure {
    fn from(p: ProcedureArg) -> Self {
        match p {
            ProcedureArg::Rs => Procedure::RobertsShiryaev,
            ProcedureArg::Musuc => Procedure::Musuc,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Default)]
pub enum BadRecordPolicy {
    #[default]
    Fail,
    Skip,
}

/// A column given by zero-based position or by header name.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ColumnSelector {
    Index(usize),
    Name(String),
}

impl std::str::FromStr for ColumnSelector {
    type Err = std::convert::Infallible;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        Ok(match s.parse::<usize>() {
            Ok(i) => Self::Index(i),
            Err(_) => Self::Name(s.to_owned()),
        })
    }
}

#[derive(Debug, Clone, Args)]
pub struct PredictorArgs {
    #[arg(long, value_enum, default_value_t = PredictorKind::Knn)]
    pub predictor: PredictorKind,
    /// Neighbours averaged by the kNN score.
    #[arg(long, default_value_t = 1)]
    pub k: usize,
}

impl PredictorArgs {
    pub fn build(&self) -> Result<BuiltinPredictor, CliError> {
        build_predictor(self.predictor, self.k)
    }
}

#[derive(Debug, Clone, Args)]
pub struct DetectArgs {
    /// Input file; standard input when absent.
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = InputFormat::Csv)]
    pub format: InputFormat,
    /// Comma-separated column indices (from 0) or header names.
    #[arg(long, value_delimiter = ',')]
    pub columns: Option<Vec<ColumnSelector>>,
    #[command(flatten)]
    pub predictor: PredictorArgs,
    /// Condition each e-value on at most this many preceding observations.
    #[arg(long)]
    pub window: Option<usize>,
    #[arg(long, value_enum, default_value_t = ProcedureArg::Rs)]
    pub procedure: ProcedureArg,
    /// Alarm threshold c, which must exceed 1.
    #[arg(long, default_value_t = 20.0)]
    pub threshold: f64,
    #[arg(long, value_enum, default_value_t = BadRecordPolicy::Fail)]
    pub on_bad_record: BadRecordPolicy,
    /// Output file; standard output when absent.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct ScenarioArgs {
    /// Pre-change law of every coordinate, e.g. `gaussian:0,1`.
    #[arg(long, default_value = "gaussian:0,1")]
    pub pre: Distribution,
    #[arg(long, default_value_t = 1)]
    pub dim: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Args)]
pub struct ValidateArgs {
    #[command(flatten)]
    pub scenario: ScenarioArgs,
    /// Stream length per trial.
    #[arg(long, default_value_t = 20_000)]
    pub n: u64,
    #[arg(long, default_value_t = 500, value_parser = clap::value_parser!(u64).range(1..))]
    pub trials: u64,
    #[arg(long, default_value_t = 0.02)]
    pub epsilon: f64,
    /// Largest acceptable exceed fraction.
    #[arg(long, default_value_t = 0.05)]
    pub slack: f64,
    #[command(flatten)]
    pub predictor: PredictorArgs,
    /// Both procedures are checked when absent.
    #[arg(long, value_enum)]
    pub procedure: Option<ProcedureArg>,
    #[arg(long, default_value_t = 20.0)]
    pub threshold: f64,
    /// Report file; standard output when absent.
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Per-trial alarm frequencies as CSV.
    #[arg(long)]
    pub frequencies: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct BenchDelayArgs {
    #[command(flatten)]
    pub scenario: ScenarioArgs,
    /// First step drawn from the post-change law.
    #[arg(long)]
    pub change: u64,
    #[arg(long)]
    pub post: Distribution,
    #[arg(long, default_value_t = 2_000)]
    pub n: u64,
    #[arg(long, default_value_t = 100, value_parser = clap::value_parser!(u64).range(1..))]
    pub trials: u64,
    #[command(flatten)]
    pub predictor: PredictorArgs,
    #[arg(long, value_enum, default_value_t = ProcedureArg::Rs)]
    pub procedure: ProcedureArg,
    #[arg(long, default_value_t = 20.0)]
    pub threshold: f64,
    #[arg(long)]
    pub output: Option<PathBuf>,
}

fn build_predictor(kind: PredictorKind, k: usize) -> Result<BuiltinPredictor, CliError> {
    Ok(match kind {
        PredictorKind::Knn => BuiltinPredictor::knn(k)?,
        PredictorKind::DistMean => BuiltinPredictor::DistanceToMean,
        PredictorKind::Const => BuiltinPredictor::Constant,
    })
}

/// Validated settings of one `detect` run.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub input: Option<PathBuf>,
    pub format: InputFormat,
    pub columns: Option<Vec<ColumnSelector>>,
    pub predictor: BuiltinPredictor,
    pub window: Option<usize>,
    pub detector: DetectorConfig<f64>,
    pub on_bad_record: BadRecordPolicy,
    pub output: Option<PathBuf>,
}

impl RunConfig {
    /// Settings reading CSV from standard input and writing to standard output.
    pub fn new(predictor: BuiltinPredictor, detector: DetectorConfig<f64>) -> Self {
        Self {
            input: None,
            format: InputFormat::Csv,
            columns: None,
            predictor,
            window: None,
            detector,
            on_bad_record: BadRecordPolicy::Fail,
            output: None,
        }
    }
}

impl TryFrom<DetectArgs> for RunConfig {
    type Error = CliError;

    fn try_from(args: DetectArgs) -> Result<Self, CliError> {
        if args.window == Some(0) {
            return Err(Error::InvalidWindow.into());
        }
        Ok(Self {
            predictor: args.predictor.build()?,
            detector: DetectorConfig::new(args.threshold, args.procedure.into())?,
            input: args.input,
            format: args.format,
            columns: args.columns,
            window: args.window,
            on_bad_record: args.on_bad_record,
            output: args.output,
        })
    }
}

/// One parsed input record and the line it came from.
type Record = (u64, Result<Vec<f64>, String>);

#[derive(Deserialize)]
struct JsonRecord {
    x: Vec<f64>,
}

fn parse_fields<'a, I: Iterator<Item = &'a str>>(fields: I) -> Result<Vec<f64>, String> {
    fields
        .map(|f| {
            f.trim()
                .parse::<f64>()
                .map_err(|_| format!("not a number: {f:?}"))
        })
        .collect()
}

fn select(values: Vec<f64>, columns: &Option<Vec<usize>>) -> Result<Vec<f64>, String> {
    let Some(columns) = columns else {
        return Ok(values);
    };
    columns
        .iter()
        .map(|&i| {
            values
                .get(i)
                .copied()
                .ok_or_else(|| format!("missing column {i} (record has {})", values.len()))
        })
        .collect()
}

fn resolve_columns(
    selectors: &Option<Vec<ColumnSelector>>,
    header: Option<&csv::StringRecord>,
) -> Result<Option<Vec<usize>>, CliError> {
    let Some(selectors) = selectors else {
        return Ok(None);
    };
    if selectors.is_empty() {
        return Err(CliError::Usage("--columns selects no column".into()));
    }
    selectors
        .iter()
        .map(|s| match (s, header) {
            (ColumnSelector::Index(i), Some(h)) if *i >= h.len() => Err(CliError::Usage(format!(
                "column {i} does not exist: the header has {} columns",
                h.len()
            ))),
            (ColumnSelector::Index(i), _) => Ok(*i),
            (ColumnSelector::Name(name), Some(h)) => h
                .iter()
                .position(|f| f.trim() == name)
                .ok_or_else(|| CliError::Usage(format!("column {name:?} not found in header"))),
            (ColumnSelector::Name(name), None) => Err(CliError::Usage(format!(
                "column {name:?} selected by name but the input has no header"
            ))),
        })
        .collect::<Result<Vec<_>, _>>()
        .map(Some)
}

fn csv_records<'r, R: Read + 'r>(
    input: R,
    selectors: &Option<Vec<ColumnSelector>>,
) -> Result<Box<dyn Iterator<Item = Result<Record, CliError>> + 'r>, CliError> {
    let reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(input);
    let mut rows = reader.into_records().peekable();
    // A first row with any non-numeric field is a header.
    let header = match rows.peek() {
        Some(Ok(first)) if first.iter().any(|f| f.trim().parse::<f64>().is_err()) => {
            rows.next().transpose()?
        }
        _ => None,
    };
    let columns = resolve_columns(selectors, header.as_ref())?;
    Ok(Box::new(rows.map(move |row| {
        let row = row?;
        let line = row.position().map_or(0, |p| p.line());
        let parsed = parse_fields(row.iter()).and_then(|v| select(v, &columns));
        Ok((line, parsed))
    })))
}

fn jsonl_records<'r, R: Read + 'r>(
    input: R,
    selectors: &Option<Vec<ColumnSelector>>,
) -> Result<Box<dyn Iterator<Item = Result<Record, CliError>> + 'r>, CliError> {
    let columns = resolve_columns(selectors, None)?;
    let lines = BufReader::new(input).lines().enumerate();
    Ok(Box::new(lines.filter_map(move |(i, line)| {
        let line = match line {
            Ok(line) => line,
            Err(e) => return Some(Err(e.into())),
        };
        if line.trim().is_empty() {
            return None;
        }
        let parsed = serde_json::from_str::<JsonRecord>(&line)
            .map_err(|e| e.to_string())
            .and_then(|r| select(r.x, &columns));
        Some(Ok((i as u64 + 1, parsed)))
    })))
}

fn write_json_line<W: Write, S: Serialize>(out: &mut W, value: &S) -> Result<(), CliError> {
    serde_json::to_writer(&mut *out, value).map_err(io::Error::from)?;
    writeln!(out)?;
    out.flush()?;
    Ok(())
}

/// Runs the detector over `input`, writing each alarm to `output` as soon
/// as it fires and the summary after the last record.
pub fn detect_records<R: Read, W: Write>(
    config: &RunConfig,
    input: R,
    mut output: W,
) -> Result<SummaryRecord, CliError> {
    let records = match config.format {
        InputFormat::Csv => csv_records(input, &config.columns)?,
        InputFormat::Jsonl => jsonl_records(input, &config.columns)?,
    };
    let mut e_values = match config.window {
        Some(w) => EValueStream::windowed(&config.predictor, w)?,
        None => EValueStream::new(&config.predictor),
    };
    let mut detector = Detector::new(config.detector);
    let mut dim = None;
    for record in records {
        let (line, parsed) = record?;
        let observation = parsed.and_then(|values| {
            let z = Observation::new(values).map_err(|e| e.to_string())?;
            match dim {
                Some(d) if d != z.dim() => Err(format!("expected {d} values, found {}", z.dim())),
                _ => Ok(z),
            }
        });
        let z = match (observation, config.on_bad_record) {
            (Ok(z), _) => z,
            (Err(reason), BadRecordPolicy::Fail) => {
                return Err(CliError::BadRecord { line, reason })
            }
            (Err(reason), BadRecordPolicy::Skip) => {
                log::warn!("skipping line {line}: {reason}");
                continue;
            }
        };
        dim = Some(z.dim());
        let e = e_values.push(z)?.get();
        log::trace!("step {}: e = {e}", e_values.steps());
        if let Some(alarm) = detector.observe(e)? {
            log::debug!("alarm {} at step {}", alarm.k, alarm.sigma);
            write_json_line(&mut output, &alarm)?;
        }
    }
    let summary = detector.log().summary();
    write_json_line(&mut output, &summary)?;
    Ok(summary)
}

/// Parses the alarm and summary lines written by [`detect_records`].
pub fn parse_detect_output(
    text: &str,
) -> Result<(Vec<AlarmRecord>, Option<SummaryRecord>), CliError> {
    let mut alarms = Vec::new();
    let mut summary = None;
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let value: serde_json::Value = serde_json::from_str(line).map_err(io::Error::from)?;
        if value.get("sigma").is_some() {
            alarms.push(serde_json::from_value(value).map_err(io::Error::from)?);
        } else {
            summary = Some(serde_json::from_value(value).map_err(io::Error::from)?);
        }
    }
    Ok((alarms, summary))
}

fn open_input(path: &Option<PathBuf>) -> Result<Box<dyn Read>, CliError> {
    Ok(match path {
        Some(p) => Box::new(File::open(p).map_err(|e| with_path(e, p))?),
        None => Box::new(io::stdin().lock()),
    })
}

fn open_output(path: &Option<PathBuf>) -> Result<Box<dyn Write>, CliError> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).map_err(|e| with_path(e, p))?,
        )),
        None => Box::new(io::stdout().lock()),
    })
}

fn with_path(e: io::Error, path: &Path) -> io::Error {
    io::Error::new(e.kind(), format!("{}: {e}", path.display()))
}

pub fn cmd_detect(config: &RunConfig) -> Result<u8, CliError> {
    let input = open_input(&config.input)?;
    let output = open_output(&config.output)?;
    let summary = detect_records(config, input, output)?;
    log::info!("{} observations, {} alarms", summary.n, summary.a_n);
    Ok(EXIT_OK)
}

/// A validity report with the gate applied.
#[derive(Debug, Clone, Serialize)]
pub struct GateReport {
    #[serde(flatten)]
    pub report: ValidityReport,
    pub predictor: &'static str,
    pub slack: f64,
    pub passed: bool,
}

pub fn cmd_validate(args: &ValidateArgs) -> Result<u8, CliError> {
    if !(args.slack.is_finite() && args.slack >= 0.0) {
        return Err(CliError::Usage(format!(
            "--slack must be non-negative, got {}",
            args.slack
        )));
    }
    let predictor = args.predictor.build()?;
    let procedures = match args.procedure {
        Some(p) => vec![p.into()],
        None => vec![Procedure::RobertsShiryaev, Procedure::Musuc],
    };
    let configs = procedures
        .into_iter()
        .map(|p| DetectorConfig::new(args.threshold, p))
        .collect::<Result<Vec<_>, _>>()?;
    let spec = ScenarioSpec {
        dim: args.scenario.dim,
        ..ScenarioSpec::iid(args.scenario.pre, args.n, args.scenario.seed)
    };
    let reports =
        sim::validity_experiments(&spec, &predictor, &configs, args.trials, args.epsilon)?;
    let mut out = open_output(&args.output)?;
    let mut passed = true;
    for report in reports {
        if let Some(path) = &args.frequencies {
            let path = frequencies_path(path, report.procedure, configs.len());
            let file = File::create(&path).map_err(|e| with_path(e, &path))?;
            report.write_frequencies_csv(BufWriter::new(file))?;
        }
        let gate = GateReport {
            passed: report.exceed_fraction <= args.slack,
            predictor: predictor.name(),
            slack: args.slack,
            report,
        };
        passed &= gate.passed;
        write_json_line(&mut out, &gate)?;
    }
    Ok(if passed { EXIT_OK } else { EXIT_GATE_FAILED })
}

/// With several procedures each gets its own file, `stem.<procedure>.ext`.
fn frequencies_path(path: &Path, procedure: Procedure, reports: usize) -> PathBuf {
    if reports == 1 {
        return path.to_path_buf();
    }
    let stem = path
        .file_stem()
        .map_or_else(Default::default, |s| s.to_string_lossy());
    let name = match path.extension() {
        Some(ext) => format!("{stem}.{procedure}.{}", ext.to_string_lossy()),
        None => format!("{stem}.{procedure}"),
    };
    path.with_file_name(name)
}

pub fn cmd_bench_delay(args: &BenchDelayArgs) -> Result<u8, CliError> {
    let predictor = args.predictor.build()?;
    let config = DetectorConfig::new(args.threshold, args.procedure.into())?;
    let spec = ScenarioSpec {
        dim: args.scenario.dim,
        ..ScenarioSpec::iid(args.scenario.pre, args.n, args.scenario.seed)
    }
    .with_change(args.change, args.post);
    let summary = sim::delay_experiment(&spec, &predictor, config, args.trials)?;
    write_json_line(&mut open_output(&args.output)?, &summary)?;
    Ok(EXIT_OK)
}

fn init_logging() {
    let env = env_logger::Env::new().filter_or(LOG_ENV, "warn");
    // A second initialisation in the same process is harmless.
    let _ = env_logger::Builder::from_env(env)
        .format_timestamp(None)
        .try_init();
}

/// Runs a parsed command and maps the outcome to an exit status.
pub fn run(cli: Cli) -> u8 {
    let outcome = match cli.command {
        Command::Detect(args) => RunConfig::try_from(args).and_then(|c| cmd_detect(&c)),
        Command::Validate(args) => cmd_validate(&args),
        Command::BenchDelay(args) => cmd_bench_delay(&args),
    };
    match outcome {
        Ok(code) => code,
        // A reader that stops early, such as `head`, is not an error.
        Err(CliError::Io(e)) if e.kind() == io::ErrorKind::BrokenPipe => EXIT_OK,
        Err(e) => {
            eprintln!("driftguard: {e}");
            EXIT_USAGE
        }
    }
}

pub fn main() -> ExitCode {
    init_logging();
    // clap exits with status 2 on usage errors.
    ExitCode::from(run(Cli::parse()))
}
