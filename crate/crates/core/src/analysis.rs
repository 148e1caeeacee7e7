//! Whole-analysis driver: sources, region filtering, reports and the
//! differential comparison of two reports.

use std::fmt;
use std::fs::File;
use std::io::BufReader;
use std::net::TcpListener;
use std::ops::Range;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::broker::{Broker, BrokerError, FileBroker, QueueBroker, SocketBroker, SocketConfig};
use crate::lsunit::AliasPolicy;
use crate::model::{MachineModel, ModelError};
use crate::pipeline::{Pipeline, PipelineConfig, PipelineError, PoolStats, RetiredInstr, RunStatus};
use crate::toy::{self, ToyError, ToyProgram};
use crate::trace::{Batch, TraceInstruction};
use crate::views::{self, SummaryStats, ViewError};

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Toy(#[from] ToyError),
    #[error(transparent)]
    View(#[from] ViewError),
    #[error("region file line {line}: {message}")]
    Region { line: usize, message: String },
    #[error("ground-truth file line {line}: {message}")]
    Ground { line: usize, message: String },
    #[error("bad report: {0}")]
    Report(String),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("differential throughput undefined: base has zero cycles")]
    UndefinedRatio,
    #[error("reports use different models: `{base}` vs `{cand}`")]
    ModelMismatch { base: String, cand: String },
}

impl From<BrokerError> for AnalysisError {
    fn from(e: BrokerError) -> Self {
        AnalysisError::Pipeline(PipelineError::Broker(e))
    }
}

/// Coarse failure classes, used for process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Input,
    Protocol,
    Analysis,
}

impl AnalysisError {
    pub fn kind(&self) -> ErrorKind {
        match self {
            AnalysisError::Pipeline(PipelineError::Broker(b)) => match b {
                BrokerError::Parse(_) | BrokerError::Io(_) => ErrorKind::Input,
                BrokerError::Protocol(_) | BrokerError::Truncated => ErrorKind::Protocol,
            },
            AnalysisError::Model(_)
            | AnalysisError::Toy(ToyError::Parse { .. })
            | AnalysisError::Region { .. }
            | AnalysisError::Ground { .. }
            | AnalysisError::Report(_)
            | AnalysisError::Io { .. } => ErrorKind::Input,
            _ => ErrorKind::Analysis,
        }
    }
}

fn read_file(path: &std::path::Path) -> Result<String, AnalysisError> {
    std::fs::read_to_string(path)
        .map_err(|e| AnalysisError::Io { path: path.display().to_string(), message: e.to_string() })
}

fn parse_hex(tok: &str) -> Option<u64> {
    let digits = tok.strip_prefix("0x").or_else(|| tok.strip_prefix("0X")).unwrap_or(tok);
    u64::from_str_radix(digits, 16).ok()
}

// ---------------------------------------------------------------- regions

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegionRange {
    pub start: u64,
    pub end: u64,
    /// Symbols whose ranges were merged into this one.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub symbols: Vec<String>,
}

/// Address ranges to analyze, sorted and with overlaps merged.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegionSpec {
    pub ranges: Vec<RegionRange>,
    pub max_visits: Option<u64>,
}

impl RegionSpec {
    pub fn new(ranges: impl IntoIterator<Item = RegionRange>, max_visits: Option<u64>) -> Self {
        let mut all: Vec<RegionRange> = ranges.into_iter().filter(|r| r.start < r.end).collect();
        all.sort_by_key(|r| (r.start, r.end));
        let mut merged: Vec<RegionRange> = Vec::with_capacity(all.len());
        for r in all {
            match merged.last_mut() {
                Some(last) if r.start < last.end => {
                    last.end = last.end.max(r.end);
                    last.symbols.extend(r.symbols);
                }
                _ => merged.push(r),
            }
        }
        RegionSpec { ranges: merged, max_visits }
    }

    /// Parses `R <start> <end>`, `S <symbol> <start> <end>` and `V <max>`
    /// lines; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self, AnalysisError> {
        let mut ranges = Vec::new();
        let mut max_visits = None;
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let err = |message: String| AnalysisError::Region { line, message };
            let toks: Vec<&str> = raw.split('#').next().unwrap().split_whitespace().collect();
            let (symbol, bounds) = match toks.as_slice() {
                [] => continue,
                ["R", s, e] => (None, (*s, *e)),
                ["S", sym, s, e] => (Some(sym.to_string()), (*s, *e)),
                ["V", n] => {
                    max_visits = Some(n.parse().map_err(|_| err(format!("bad visit limit `{n}`")))?);
                    continue;
                }
                _ => return Err(err(format!("unrecognized line `{}`", raw.trim()))),
            };
            let start = parse_hex(bounds.0).ok_or_else(|| err(format!("bad address `{}`", bounds.0)))?;
            let end = parse_hex(bounds.1).ok_or_else(|| err(format!("bad address `{}`", bounds.1)))?;
            if start >= end {
                return Err(err(format!("empty range {start:#x}..{end:#x}")));
            }
            ranges.push(RegionRange { start, end, symbols: symbol.into_iter().collect() });
        }
        Ok(RegionSpec::new(ranges, max_visits))
    }

    /// Index of the range containing `addr`.
    pub fn find(&self, addr: u64) -> Option<usize> {
        let i = self.ranges.partition_point(|r| r.end <= addr);
        self.ranges.get(i).filter(|r| r.start <= addr).map(|_| i)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegionStats {
    pub start: u64,
    pub end: u64,
    pub visits: u64,
    pub instructions: u64,
    /// Sum of per-visit cycles; each visit starts from an empty pipeline.
    pub cycles: u64,
}

// ---------------------------------------------------------------- reports

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub model: String,
    pub source: String,
    /// SHA-256 over the canonical text form of every received instruction.
    pub digest: String,
    pub trace_instructions: u64,
    pub alias_policy: String,
    pub summary: SummaryStats,
    pub pool: PoolStats,
    pub missing_mem_metadata: u64,
    pub truncated: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub regions: Option<Vec<RegionStats>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timeline: Option<String>,
}

impl AnalysisReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, AnalysisError> {
        serde_json::from_str(text).map_err(|e| AnalysisError::Report(e.to_string()))
    }

    /// True if the two reports agree on everything but where the trace came from.
    pub fn same_analysis(&self, other: &AnalysisReport) -> bool {
        AnalysisReport { source: String::new(), ..self.clone() }
            == AnalysisReport { source: String::new(), ..other.clone() }
    }
}

impl fmt::Display for AnalysisReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Model:             {}", self.model)?;
        writeln!(f, "Source:            {}", self.source)?;
        writeln!(f, "Trace digest:      {}", self.digest)?;
        writeln!(f, "Note:              Block RThroughput treats the whole trace as one block")?;
        if self.truncated {
            writeln!(f, "Warning:           trace truncated; results cover the received prefix")?;
        }
        if self.missing_mem_metadata > 0 {
            writeln!(f, "Missing mem info:  {}", self.missing_mem_metadata)?;
        }
        writeln!(f)?;
        write!(f, "{}", self.summary)?;
        if let Some(regions) = &self.regions {
            writeln!(f)?;
            writeln!(f, "Regions (each visit drains the pipeline):")?;
            for r in regions {
                writeln!(
                    f,
                    "  [{:#x}, {:#x})  visits {:<6} instructions {:<8} cycles {}",
                    r.start, r.end, r.visits, r.instructions, r.cycles
                )?;
            }
        }
        if let Some(t) = &self.timeline {
            writeln!(f)?;
            writeln!(f, "Timeline:")?;
            write!(f, "{t}")?;
        }
        Ok(())
    }
}

/// Hex SHA-256 of a trace in canonical text form.
pub fn trace_digest(trace: &[TraceInstruction]) -> String {
    let mut h = Sha256::new();
    let mut line = String::new();
    for t in trace {
        line.clear();
        t.write_line(&mut line);
        line.push('\n');
        h.update(line.as_bytes());
    }
    hex::encode(h.finalize())
}

/// Hashes everything that passes through, and turns a long silence into
/// truncation when an idle timeout is set.
struct Digesting<B> {
    inner: B,
    hasher: Sha256,
    line: String,
    count: u64,
    idle_timeout: Option<Duration>,
    last_data: Instant,
}

impl<B: Broker> Digesting<B> {
    fn new(inner: B, idle_timeout: Option<Duration>) -> Self {
        Digesting {
            inner,
            hasher: Sha256::new(),
            line: String::new(),
            count: 0,
            idle_timeout,
            last_data: Instant::now(),
        }
    }

    fn finish(self) -> (String, u64) {
        (hex::encode(self.hasher.finalize()), self.count)
    }
}

impl<B: Broker> Broker for Digesting<B> {
    fn fetch_batch(&mut self, max_n: usize) -> Result<Batch, BrokerError> {
        let batch = self.inner.fetch_batch(max_n)?;
        if batch.is_starved() {
            if let Some(limit) = self.idle_timeout {
                if self.last_data.elapsed() > limit {
                    log::warn!("no trace data for {limit:?}; giving up");
                    return Err(BrokerError::Truncated);
                }
            }
        } else {
            self.last_data = Instant::now();
        }
        for t in &batch.instructions {
            self.line.clear();
            t.write_line(&mut self.line);
            self.line.push('\n');
            self.hasher.update(self.line.as_bytes());
        }
        self.count += batch.instructions.len() as u64;
        Ok(batch)
    }
}

// ---------------------------------------------------------------- analyze

#[derive(Debug, Clone)]
pub struct AnalysisOptions {
    pub alias_policy: AliasPolicy,
    pub regions: Option<RegionSpec>,
    /// Seq window for the timeline view and browser trace.
    pub timeline: Option<Range<u64>>,
    pub batch_size: usize,
    pub socket: SocketConfig,
    /// Treat a live source that sends nothing for this long as truncated.
    pub idle_timeout: Option<Duration>,
    /// Step budget when the source is a toy program.
    pub max_steps: u64,
}

impl Default for AnalysisOptions {
    fn default() -> Self {
        AnalysisOptions {
            alias_policy: AliasPolicy::default(),
            regions: None,
            timeline: None,
            batch_size: 64,
            socket: SocketConfig::default(),
            idle_timeout: None,
            max_steps: 10_000_000,
        }
    }
}

pub enum Source {
    File(PathBuf),
    /// Connect to a producer that is listening.
    Connect(String),
    /// Accept one producer on the given listener.
    Listen(TcpListener),
    Program(PathBuf),
    Trace { label: String, trace: Vec<TraceInstruction> },
}

impl Source {
    pub fn label(&self) -> String {
        match self {
            Source::File(p) => format!("file:{}", p.display()),
            Source::Connect(e) => format!("connect:{e}"),
            Source::Listen(l) => match l.local_addr() {
                Ok(a) => format!("listen:{}", a.port()),
                Err(_) => "listen".into(),
            },
            Source::Program(p) => format!("program:{}", p.display()),
            Source::Trace { label, .. } => label.clone(),
        }
    }
}

/// A finished analysis: the report plus the recorded timeline rows.
#[derive(Debug, Clone)]
pub struct Analysis {
    pub report: AnalysisReport,
    pub retired: Vec<RetiredInstr>,
}

pub fn analyze(
    model: Arc<MachineModel>,
    source: Source,
    options: &AnalysisOptions,
) -> Result<Analysis, AnalysisError> {
    let label = source.label();
    match source {
        Source::File(path) => {
            let file = File::open(&path).map_err(|e| AnalysisError::Io {
                path: path.display().to_string(),
                message: e.to_string(),
            })?;
            analyze_broker(model, FileBroker::from_reader(BufReader::new(file)), label, options)
        }
        Source::Connect(endpoint) => {
            let broker = SocketBroker::connect(endpoint.as_str(), options.socket.clone())?;
            analyze_broker(model, broker, label, options)
        }
        Source::Listen(listener) => {
            let broker = SocketBroker::accept(&listener, options.socket.clone())?;
            analyze_broker(model, broker, label, options)
        }
        Source::Program(path) => {
            let program = ToyProgram::parse(&read_file(&path)?)?;
            let (trace, truncated) = match toy::execute(&program, options.max_steps) {
                Ok(t) => (t, false),
                Err(ToyError::Truncated { partial, .. }) => (partial, true),
                Err(e) => return Err(e.into()),
            };
            let mut a = analyze_broker(model, QueueBroker::from_trace(trace), label, options)?;
            a.report.truncated |= truncated;
            Ok(a)
        }
        Source::Trace { trace, .. } => {
            analyze_broker(model, QueueBroker::from_trace(trace), label, options)
        }
    }
}

/// Runs a complete analysis over any broker.
pub fn analyze_broker<B: Broker>(
    model: Arc<MachineModel>,
    broker: B,
    source: String,
    options: &AnalysisOptions,
) -> Result<Analysis, AnalysisError> {
    let config = PipelineConfig {
        alias_policy: options.alias_policy,
        entry_capacity: options.batch_size.max(1),
        record: options.timeline.clone(),
    };
    let mut pipeline = Pipeline::new(model.clone(), config);
    let mut src = Digesting::new(broker, options.idle_timeout);

    let regions = match &options.regions {
        Some(spec) if !spec.ranges.is_empty() => Some(run_regions(&mut pipeline, &mut src, spec, options)?),
        _ => {
            while pipeline.run_until_starved(&mut src)? == RunStatus::Suspended {}
            None
        }
    };

    let (digest, trace_instructions) = src.finish();
    let run = pipeline.into_result();
    let summary = views::summarize(&run)?;
    let timeline = options.timeline.clone().map(|w| views::render_timeline(&run.retired, w));
    Ok(Analysis {
        report: AnalysisReport {
            model: model.name.clone(),
            source,
            digest,
            trace_instructions,
            alias_policy: options.alias_policy.to_string(),
            summary,
            pool: run.pool,
            missing_mem_metadata: run.missing_mem_metadata,
            truncated: run.truncated,
            regions,
            timeline,
        },
        retired: run.retired,
    })
}

struct Visit {
    range: usize,
    start_cycle: u64,
    instructions: u64,
}

fn run_regions<B: Broker>(
    pipeline: &mut Pipeline,
    src: &mut Digesting<B>,
    spec: &RegionSpec,
    options: &AnalysisOptions,
) -> Result<Vec<RegionStats>, AnalysisError> {
    let mut stats: Vec<RegionStats> = spec
        .ranges
        .iter()
        .map(|r| RegionStats { start: r.start, end: r.end, ..Default::default() })
        .collect();
    let mut staging = QueueBroker::new();
    let mut visit: Option<Visit> = None;
    let mut visits = 0u64;
    let limit = spec.max_visits.unwrap_or(u64::MAX);

    let mut close = |pipeline: &mut Pipeline, staging: &mut QueueBroker, v: Visit| {
        staging.close();
        let status = pipeline.run_until_starved(staging)?;
        debug_assert_eq!(status, RunStatus::Drained);
        staging.reopen();
        let s = &mut stats[v.range];
        s.visits += 1;
        s.instructions += v.instructions;
        s.cycles += pipeline.total_cycles().saturating_sub(v.start_cycle);
        Ok::<(), AnalysisError>(())
    };

    loop {
        let batch = match src.fetch_batch(options.batch_size.max(1)) {
            Ok(b) => b,
            Err(BrokerError::Truncated) => {
                log::warn!("trace truncated; finishing the current region visit");
                pipeline.mark_truncated();
                break;
            }
            Err(e) => return Err(e.into()),
        };
        let ended = batch.end_of_stream;
        for t in batch.instructions {
            let here = spec.find(t.addr);
            if visit.as_ref().map(|v| v.range) != here {
                if let Some(v) = visit.take() {
                    close(pipeline, &mut staging, v)?;
                }
                if let Some(range) = here.filter(|_| visits < limit) {
                    pipeline.begin_iteration(visits);
                    visits += 1;
                    visit = Some(Visit { range, start_cycle: pipeline.cycle(), instructions: 0 });
                }
            }
            if let Some(v) = visit.as_mut() {
                v.instructions += 1;
                staging.push(t);
            }
        }
        if !staging.is_empty() {
            pipeline.run_until_starved(&mut staging)?;
        }
        if ended {
            break;
        }
    }
    if let Some(v) = visit.take() {
        close(pipeline, &mut staging, v)?;
    }
    Ok(stats)
}

// ---------------------------------------------------------------- diff

/// Ratio of version j's cycles to version i's.
pub fn differential_throughput(cycles_i: u64, cycles_j: u64) -> Result<f64, AnalysisError> {
    if cycles_i == 0 {
        return Err(AnalysisError::UndefinedRatio);
    }
    Ok(cycles_j as f64 / cycles_i as f64)
}

pub fn prediction_error(delta_ground: f64, delta_pred: f64) -> f64 {
    (delta_ground - delta_pred).abs()
}

/// Geometric mean of non-negative values; `None` for an empty slice.
pub fn geometric_mean(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    if values.contains(&0.0) {
        return Some(0.0);
    }
    Some((values.iter().map(|v| v.ln()).sum::<f64>() / values.len() as f64).exp())
}

/// Measured cycle counts for the two versions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub cycles_i: u64,
    pub cycles_j: u64,
}

impl GroundTruth {
    /// Parses a `G <cycles_i> <cycles_j>` line; blank lines and `#` comments
    /// are ignored.
    pub fn parse(text: &str) -> Result<Self, AnalysisError> {
        let mut found = None;
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let err = |message: String| AnalysisError::Ground { line, message };
            let toks: Vec<&str> = raw.split('#').next().unwrap().split_whitespace().collect();
            match toks.as_slice() {
                [] => continue,
                ["G", i, j] => {
                    if found.is_some() {
                        return Err(err("more than one `G` line".into()));
                    }
                    let num = |s: &str| s.parse::<u64>().map_err(|_| err(format!("bad cycle count `{s}`")));
                    found = Some(GroundTruth { cycles_i: num(i)?, cycles_j: num(j)? });
                }
                _ => return Err(err(format!("unrecognized line `{}`", raw.trim()))),
            }
        }
        found.ok_or(AnalysisError::Ground { line: 0, message: "no `G` line".into() })
    }

    pub fn delta(&self) -> Result<f64, AnalysisError> {
        differential_throughput(self.cycles_i, self.cycles_j)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VersionSummary {
    pub source: String,
    pub digest: String,
    pub cycles: u64,
    pub instructions: u64,
}

impl From<&AnalysisReport> for VersionSummary {
    fn from(r: &AnalysisReport) -> Self {
        VersionSummary {
            source: r.source.clone(),
            digest: r.digest.clone(),
            cycles: r.summary.total_cycles,
            instructions: r.summary.instructions,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiffReport {
    pub model: String,
    pub base: VersionSummary,
    pub cand: VersionSummary,
    pub delta: f64,
    pub ground_truth_delta: Option<f64>,
    pub error: Option<f64>,
}

pub fn diff(
    base: &AnalysisReport,
    cand: &AnalysisReport,
    ground_truth_delta: Option<f64>,
) -> Result<DiffReport, AnalysisError> {
    if base.model != cand.model {
        return Err(AnalysisError::ModelMismatch { base: base.model.clone(), cand: cand.model.clone() });
    }
    let delta = differential_throughput(base.summary.total_cycles, cand.summary.total_cycles)?;
    Ok(DiffReport {
        model: base.model.clone(),
        base: base.into(),
        cand: cand.into(),
        delta,
        ground_truth_delta,
        error: ground_truth_delta.map(|g| prediction_error(g, delta)),
    })
}

impl fmt::Display for DiffReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Model: {}", self.model)?;
        writeln!(f, "{:<8}{:>12}{:>14}  digest", "version", "cycles", "instructions")?;
        for (name, v) in [("base", &self.base), ("cand", &self.cand)] {
            writeln!(f, "{:<8}{:>12}{:>14}  {:.16}", name, v.cycles, v.instructions, v.digest)?;
        }
        writeln!(f, "{:<16}{:.6}", "delta (pred):", self.delta)?;
        if let (Some(g), Some(e)) = (self.ground_truth_delta, self.error) {
            writeln!(f, "{:<16}{:.6}", "delta (ground):", g)?;
            writeln!(f, "{:<16}{:.6}", "error:", e)?;
        }
        Ok(())
    }
}
