use std::fs;
use std::net::{TcpListener, TcpStream};
use std::ops::Range;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use log::{info, warn};

use tpsim::analysis::{self, AnalysisError, AnalysisOptions, ErrorKind, GroundTruth, RegionSpec, Source};
use tpsim::broker::{BrokerError, TraceSender};
use tpsim::toy::{self, ToyError, ToyProgram};
use tpsim::trace::TraceInstruction;
use tpsim::{views, AliasPolicy, MachineModel};

#[derive(Parser)]
#[command(name = "tpsim", version, about = "Streaming instruction throughput estimation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Analyze a trace against a machine model
    Analyze(AnalyzeArgs),
    /// Compare two analysis reports
    Diff(DiffArgs),
    /// Run a toy program and emit its trace
    Trace(TraceArgs),
    /// Validate a machine model file
    ModelCheck {
        #[arg(long)]
        model: PathBuf,
    },
}

#[derive(Args)]
#[group(id = "source", required = true, multiple = false)]
struct SourceArgs {
    /// Trace file
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Connect to a listening producer
    #[arg(long, value_name = "HOST:PORT")]
    connect: Option<String>,
    /// Accept one producer connection on this port
    #[arg(long, value_name = "PORT")]
    listen: Option<u16>,
    /// Toy program to execute and analyze
    #[arg(long)]
    program: Option<PathBuf>,
}

#[derive(Args)]
struct AnalyzeArgs {
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    source: SourceArgs,
    #[arg(long, default_value = "metadata", value_parser = parse_policy)]
    alias_policy: AliasPolicy,
    /// Region file restricting the analysis to address ranges
    #[arg(long)]
    regions: Option<PathBuf>,
    /// Record and render the timeline for seq ids A..B
    #[arg(long, value_name = "A..B", value_parser = parse_window)]
    timeline: Option<Range<u64>>,
    /// Write the browser trace of the timeline window here
    #[arg(long, requires = "timeline")]
    browser_trace: Option<PathBuf>,
    /// Write the report (JSON) here
    #[arg(long)]
    out: Option<PathBuf>,
    /// Entry buffer capacity / batch size
    #[arg(long, default_value_t = 64)]
    batch: usize,
    /// Give up on a silent producer after this many seconds
    #[arg(long, value_name = "SECS")]
    idle_timeout: Option<u64>,
    /// Step budget for --program
    #[arg(long, default_value_t = 10_000_000)]
    max_steps: u64,
    /// Address to bind for --listen
    #[arg(long, default_value = "127.0.0.1")]
    bind: String,
}

#[derive(Args)]
struct DiffArgs {
    #[arg(long)]
    base: PathBuf,
    #[arg(long)]
    cand: PathBuf,
    /// Ground-truth file with a `G <cycles_base> <cycles_cand>` line
    #[arg(long)]
    ground: Option<PathBuf>,
    /// Print the diff as JSON
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
#[group(id = "sink", required = true, multiple = false)]
struct SinkArgs {
    /// Write the trace to a file
    #[arg(long)]
    out: Option<PathBuf>,
    /// Stream to a listening analyzer
    #[arg(long, value_name = "HOST:PORT")]
    connect: Option<String>,
    /// Wait for an analyzer to connect on this port, then stream
    #[arg(long, value_name = "PORT")]
    listen: Option<u16>,
}

#[derive(Args)]
struct TraceArgs {
    #[arg(long)]
    program: PathBuf,
    #[command(flatten)]
    sink: SinkArgs,
    #[arg(long, default_value_t = 10_000_000)]
    max_steps: u64,
    /// Instructions per frame when streaming
    #[arg(long, default_value_t = 256)]
    batch: usize,
    /// Model name announced to the analyzer
    #[arg(long, default_value = "")]
    model_hint: String,
    #[arg(long, default_value = "127.0.0.1")]
    bind: String,
}

fn parse_policy(s: &str) -> Result<AliasPolicy, String> {
    s.parse()
}

fn parse_window(s: &str) -> Result<Range<u64>, String> {
    let (a, b) = s.split_once("..").ok_or("expected A..B")?;
    let a: u64 = a.trim().parse().map_err(|_| format!("bad bound `{a}`"))?;
    let b: u64 = b.trim().parse().map_err(|_| format!("bad bound `{b}`"))?;
    if a > b {
        return Err(format!("empty window {a}..{b}"));
    }
    Ok(a..b)
}

enum Failure {
    Input(String),
    Protocol(String),
    Analysis(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Input(_) => 2,
            Failure::Protocol(_) => 3,
            Failure::Analysis(_) => 4,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Input(m) | Failure::Protocol(m) | Failure::Analysis(m) => m,
        }
    }
}

impl From<AnalysisError> for Failure {
    fn from(e: AnalysisError) -> Self {
        match e.kind() {
            ErrorKind::Input => Failure::Input(e.to_string()),
            ErrorKind::Protocol => Failure::Protocol(e.to_string()),
            ErrorKind::Analysis => Failure::Analysis(e.to_string()),
        }
    }
}

impl From<BrokerError> for Failure {
    fn from(e: BrokerError) -> Self {
        AnalysisError::from(e).into()
    }
}

fn read(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))
}

fn write(path: &Path, text: &str) -> Result<(), Failure> {
    fs::write(path, text).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))
}

fn load_model(path: &Path) -> Result<MachineModel, Failure> {
    tpsim::load_model(&read(path)?).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))
}

fn listen(bind: &str, port: u16) -> Result<TcpListener, Failure> {
    let listener =
        TcpListener::bind((bind, port)).map_err(|e| Failure::Protocol(format!("bind {bind}:{port}: {e}")))?;
    let addr = listener.local_addr().map_err(|e| Failure::Protocol(e.to_string()))?;
    // scripts (and tests) read the chosen port from this line
    eprintln!("listening on {addr}");
    Ok(listener)
}

fn run_analyze(args: AnalyzeArgs) -> Result<(), Failure> {
    let model = Arc::new(load_model(&args.model)?);
    let regions = match &args.regions {
        Some(p) => Some(RegionSpec::parse(&read(p)?)?),
        None => None,
    };
    let options = AnalysisOptions {
        alias_policy: args.alias_policy,
        regions,
        timeline: args.timeline.clone(),
        batch_size: args.batch.max(1),
        idle_timeout: args.idle_timeout.map(Duration::from_secs),
        max_steps: args.max_steps,
        ..Default::default()
    };
    let s = args.source;
    let source = if let Some(p) = s.trace {
        Source::File(p)
    } else if let Some(e) = s.connect {
        Source::Connect(e)
    } else if let Some(port) = s.listen {
        Source::Listen(listen(&args.bind, port)?)
    } else if let Some(p) = s.program {
        Source::Program(p)
    } else {
        unreachable!("clap enforces one source")
    };

    let result = analysis::analyze(model, source, &options)?;
    if result.report.truncated {
        warn!("trace was truncated; the report covers the received prefix only");
    }
    print!("{}", result.report);
    if let Some(path) = &args.out {
        write(path, &result.report.to_json())?;
        info!("report written to {}", path.display());
    }
    if let Some(path) = &args.browser_trace {
        let file = fs::File::create(path).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))?;
        views::export_browser_trace(&result.retired, std::io::BufWriter::new(file))
            .map_err(|e| Failure::Input(format!("{}: {e}", path.display())))?;
    }
    Ok(())
}

fn run_diff(args: DiffArgs) -> Result<(), Failure> {
    let base = analysis::AnalysisReport::from_json(&read(&args.base)?)?;
    let cand = analysis::AnalysisReport::from_json(&read(&args.cand)?)?;
    let ground = match &args.ground {
        Some(p) => Some(GroundTruth::parse(&read(p)?)?.delta()?),
        None => None,
    };
    let report = analysis::diff(&base, &cand, ground)?;
    if args.json {
        println!("{}", serde_json::to_string_pretty(&report).expect("diff serializes"));
    } else {
        print!("{report}");
    }
    Ok(())
}

fn stream_program(
    program: &ToyProgram,
    max_steps: u64,
    batch: usize,
    mut sender: TraceSender,
) -> Result<(), Failure> {
    let mut buf: Vec<TraceInstruction> = Vec::with_capacity(batch);
    let done = toy::execute_with(program, max_steps, |t| {
        buf.push(t);
        if buf.len() >= batch {
            sender.send_batch(&buf)?;
            buf.clear();
        }
        Ok::<(), BrokerError>(())
    })?;
    sender.send_batch(&buf)?;
    match done {
        Some(n) => {
            sender.finish()?;
            info!("streamed {n} instructions");
            Ok(())
        }
        None => {
            // closing without END tells the analyzer the trace is incomplete
            sender.flush()?;
            Err(Failure::Input(format!("step budget of {max_steps} exhausted; stream left unterminated")))
        }
    }
}

fn run_trace(args: TraceArgs) -> Result<(), Failure> {
    let program = ToyProgram::parse(&read(&args.program)?).map_err(|e| Failure::Input(e.to_string()))?;
    let batch = args.batch.max(1);
    if let Some(path) = &args.sink.out {
        return match toy::execute(&program, args.max_steps) {
            Ok(trace) => write(path, &tpsim::trace::render_trace(&trace)),
            Err(ToyError::Truncated { partial, max_steps }) => {
                write(path, &tpsim::trace::render_trace(&partial))?;
                Err(Failure::Input(format!("step budget of {max_steps} exhausted; partial trace written")))
            }
            Err(e) => Err(Failure::Input(e.to_string())),
        };
    }
    let stream = if let Some(endpoint) = &args.sink.connect {
        TcpStream::connect(endpoint.as_str()).map_err(|e| Failure::Protocol(format!("{endpoint}: {e}")))?
    } else if let Some(port) = args.sink.listen {
        let (s, peer) = listen(&args.bind, port)?.accept().map_err(|e| Failure::Protocol(e.to_string()))?;
        info!("analyzer connected from {peer}");
        s
    } else {
        unreachable!("clap enforces one sink")
    };
    let sender = TraceSender::handshake(stream, &args.model_hint)?;
    stream_program(&program, args.max_steps, batch, sender)
}

fn run_model_check(path: &Path) -> Result<(), Failure> {
    let model = load_model(path)?;
    println!("{model}");
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::Analyze(a) => run_analyze(a),
        Command::Diff(d) => run_diff(d),
        Command::Trace(t) => run_trace(t),
        Command::ModelCheck { model } => run_model_check(&model),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}
