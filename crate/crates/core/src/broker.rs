//! Instruction brokers: sources that hand the trace to the pipeline in
//! batches, plus the socket wire protocol used to stream traces between
//! processes.
//!
//! The wire protocol is a stream of newline-delimited JSON objects:
//!
//! ```text
//! producer -> {"t":"hello","version":1,"model_hint":"..."}
//! consumer -> {"t":"ok"}
//! producer -> {"t":"insts","batch":[...]}      (one or more)
//! producer -> {"t":"end"}
//! ```
//!
//! There are no other acknowledgements; flow control is left to TCP.

use std::collections::{HashMap, VecDeque};
use std::io::{self, BufRead, BufReader, Cursor, Write};
use std::net::{TcpListener, TcpStream, ToSocketAddrs};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, SyncSender};
use std::thread::{self, JoinHandle};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::trace::{parse_line, Batch, Context, MemoryAccess, TraceInstruction, TraceParseError};

pub const PROTOCOL_VERSION: u32 = 1;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum BrokerError {
    #[error(transparent)]
    Parse(#[from] TraceParseError),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("trace truncated: producer disconnected before end of stream")]
    Truncated,
    #[error("i/o error: {0}")]
    Io(String),
}

impl From<io::Error> for BrokerError {
    fn from(e: io::Error) -> Self {
        BrokerError::Io(e.to_string())
    }
}

/// A source of trace batches. Not reentrant; owned by one consumer.
pub trait Broker {
    /// Returns at most `max_n` instructions. An empty batch without
    /// `end_of_stream` means no data is available yet. Once the end of the
    /// stream has been reported, every further call reports it again.
    fn fetch_batch(&mut self, max_n: usize) -> Result<Batch, BrokerError>;
}

impl<B: Broker + ?Sized> Broker for &mut B {
    fn fetch_batch(&mut self, max_n: usize) -> Result<Batch, BrokerError> {
        (**self).fetch_batch(max_n)
    }
}

impl<B: Broker + ?Sized> Broker for Box<B> {
    fn fetch_batch(&mut self, max_n: usize) -> Result<Batch, BrokerError> {
        (**self).fetch_batch(max_n)
    }
}

/// Reads a trace file lazily, line by line.
pub struct FileBroker<R> {
    reader: R,
    line_no: usize,
    last_seq: Option<u64>,
    ended: bool,
    buf: String,
}

/// Opens a broker over in-memory trace file text.
pub fn open_file_broker(trace_text: impl Into<String>) -> FileBroker<Cursor<String>> {
    FileBroker::from_reader(Cursor::new(trace_text.into()))
}

impl<R: BufRead> FileBroker<R> {
    pub fn from_reader(reader: R) -> Self {
        FileBroker { reader, line_no: 0, last_seq: None, ended: false, buf: String::new() }
    }

    fn next_instruction(&mut self) -> Result<Option<TraceInstruction>, BrokerError> {
        loop {
            self.buf.clear();
            if self.reader.read_line(&mut self.buf)? == 0 {
                return Ok(None);
            }
            self.line_no += 1;
            if let Some(inst) = parse_line(&self.buf, self.line_no)? {
                if let Some(prev) = self.last_seq {
                    if inst.seq <= prev {
                        return Err(TraceParseError {
                            line: self.line_no,
                            message: format!(
                                "sequence number {} does not follow {}",
                                inst.seq, prev
                            ),
                        }
                        .into());
                    }
                }
                self.last_seq = Some(inst.seq);
                return Ok(Some(inst));
            }
        }
    }
}

impl<R: BufRead> Broker for FileBroker<R> {
    fn fetch_batch(&mut self, max_n: usize) -> Result<Batch, BrokerError> {
        if self.ended {
            return Ok(Batch::end());
        }
        let mut out = Vec::with_capacity(max_n.min(4096));
        while out.len() < max_n {
            match self.next_instruction()? {
                Some(inst) => out.push(inst),
                None => {
                    self.ended = true;
                    break;
                }
            }
        }
        Ok(Batch { instructions: out, end_of_stream: self.ended })
    }
}

/// An in-memory broker fed by its owner. Reports "no data yet" while open
/// and empty.
#[derive(Debug, Default)]
pub struct QueueBroker {
    queue: VecDeque<TraceInstruction>,
    closed: bool,
}

impl QueueBroker {
    pub fn new() -> Self {
        Self::default()
    }

    /// A closed broker over a fixed trace.
    pub fn from_trace(trace: impl IntoIterator<Item = TraceInstruction>) -> Self {
        QueueBroker { queue: trace.into_iter().collect(), closed: true }
    }

    pub fn push(&mut self, inst: TraceInstruction) {
        debug_assert!(!self.closed, "push after close");
        self.queue.push_back(inst);
    }

    pub fn close(&mut self) {
        self.closed = true;
    }

    /// Makes a drained broker accept instructions again.
    pub fn reopen(&mut self) {
        self.closed = false;
    }

    pub fn len(&self) -> usize {
        self.queue.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queue.is_empty()
    }
}

impl Broker for QueueBroker {
    fn fetch_batch(&mut self, max_n: usize) -> Result<Batch, BrokerError> {
        let n = max_n.min(self.queue.len());
        let instructions: Vec<_> = self.queue.drain(..n).collect();
        Ok(Batch { end_of_stream: self.closed && self.queue.is_empty(), instructions })
    }
}

/// A batch of instructions handed to a broker by the caller, which also
/// decides each time whether more batches follow. Mostly useful for tests
/// that want a specific batching.
pub struct ScriptedBroker {
    batches: VecDeque<Batch>,
}

impl ScriptedBroker {
    /// Splits `trace` into chunks of `chunk` instructions, ending the stream
    /// after the last one.
    pub fn chunked(trace: &[TraceInstruction], chunk: usize) -> Self {
        let chunk = chunk.max(1);
        let mut batches: VecDeque<Batch> =
            trace.chunks(chunk).map(|c| Batch::data(c.to_vec())).collect();
        batches.push_back(Batch::end());
        ScriptedBroker { batches }
    }

    pub fn from_batches(batches: impl IntoIterator<Item = Batch>) -> Self {
        ScriptedBroker { batches: batches.into_iter().collect() }
    }
}

impl Broker for ScriptedBroker {
    fn fetch_batch(&mut self, max_n: usize) -> Result<Batch, BrokerError> {
        let Some(front) = self.batches.front_mut() else {
            return Ok(Batch::end());
        };
        if front.end_of_stream {
            return Ok(Batch::end());
        }
        if front.instructions.len() <= max_n {
            return Ok(self.batches.pop_front().unwrap());
        }
        let rest = front.instructions.split_off(max_n);
        let head = std::mem::replace(&mut front.instructions, rest);
        Ok(Batch::data(head))
    }
}

/// Metadata the broker attached to an in-flight instruction.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Metadata {
    pub mem: Vec<MemoryAccess>,
    pub ctx: Option<Context>,
}

/// Per-instruction metadata kept while the instruction is in flight.
/// Entries are inserted when an instruction enters the pipeline and removed
/// when it retires.
#[derive(Debug, Default)]
pub struct MetadataRegistry {
    entries: HashMap<u64, Metadata>,
    peak: usize,
}

impl MetadataRegistry {
    pub fn insert(&mut self, seq: u64, meta: Metadata) {
        self.entries.insert(seq, meta);
        self.peak = self.peak.max(self.entries.len());
    }

    pub fn get(&self, seq: u64) -> Option<&Metadata> {
        self.entries.get(&seq)
    }

    pub fn remove(&mut self, seq: u64) -> Option<Metadata> {
        self.entries.remove(&seq)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn peak(&self) -> usize {
        self.peak
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "t", rename_all = "lowercase")]
pub enum Frame {
    Hello { version: u32, model_hint: String },
    Insts { batch: Vec<TraceInstruction> },
    End,
    Ok,
}

impl Frame {
    pub fn encode(&self) -> String {
        let mut s = serde_json::to_string(self).expect("frame serialization cannot fail");
        s.push('\n');
        s
    }

    pub fn decode(line: &str) -> Result<Frame, BrokerError> {
        serde_json::from_str(line.trim_end())
            .map_err(|e| BrokerError::Protocol(format!("bad frame: {e}")))
    }
}

#[derive(Debug, Clone)]
pub struct SocketConfig {
    /// How long `fetch_batch` waits for data before reporting "no data yet".
    pub poll_timeout: Duration,
    /// Frames buffered by the receiver thread before TCP backpressure kicks in.
    pub queue_depth: usize,
}

impl Default for SocketConfig {
    fn default() -> Self {
        SocketConfig { poll_timeout: Duration::from_millis(50), queue_depth: 64 }
    }
}

enum Msg {
    Insts(Vec<TraceInstruction>),
    End,
    Failed(BrokerError),
}

/// Consumer end of a trace stream. A background thread performs the
/// handshake, validates frames and queues batches in arrival order.
pub struct SocketBroker {
    rx: Receiver<Msg>,
    pending: VecDeque<TraceInstruction>,
    poll_timeout: Duration,
    model_hint: Option<String>,
    ended: bool,
    failure: Option<BrokerError>,
    worker: Option<JoinHandle<()>>,
}

/// Connects to a producer at `endpoint`.
pub fn open_socket_broker(endpoint: impl ToSocketAddrs) -> Result<SocketBroker, BrokerError> {
    SocketBroker::connect(endpoint, SocketConfig::default())
}

impl SocketBroker {
    pub fn connect(endpoint: impl ToSocketAddrs, config: SocketConfig) -> Result<Self, BrokerError> {
        let stream = TcpStream::connect(endpoint)?;
        Self::from_stream(stream, config)
    }

    /// Accepts exactly one producer connection.
    pub fn accept(listener: &TcpListener, config: SocketConfig) -> Result<Self, BrokerError> {
        let (stream, peer) = listener.accept()?;
        log::info!("accepted trace producer from {peer}");
        Self::from_stream(stream, config)
    }

    pub fn from_stream(stream: TcpStream, config: SocketConfig) -> Result<Self, BrokerError> {
        let writer = stream.try_clone()?;
        let (tx, rx) = mpsc::sync_channel(config.queue_depth.max(1));
        let worker = thread::Builder::new()
            .name("trace-receiver".into())
            .spawn(move || receive(BufReader::new(stream), writer, tx))?;
        Ok(SocketBroker {
            rx,
            pending: VecDeque::new(),
            poll_timeout: config.poll_timeout,
            model_hint: None,
            ended: false,
            failure: None,
            worker: Some(worker),
        })
    }

    /// The model hint from the producer's hello, once it has arrived.
    pub fn model_hint(&self) -> Option<&str> {
        self.model_hint.as_deref()
    }

    fn take(&mut self, max_n: usize) -> Batch {
        let n = max_n.min(self.pending.len());
        Batch::data(self.pending.drain(..n).collect())
    }
}

impl Broker for SocketBroker {
    fn fetch_batch(&mut self, max_n: usize) -> Result<Batch, BrokerError> {
        if let Some(e) = &self.failure {
            return Err(e.clone());
        }
        if !self.pending.is_empty() {
            return Ok(self.take(max_n));
        }
        if self.ended {
            return Ok(Batch::end());
        }
        match self.rx.recv_timeout(self.poll_timeout) {
            Ok(Msg::Insts(batch)) => {
                self.pending.extend(batch);
                Ok(self.take(max_n))
            }
            Ok(Msg::End) => {
                self.ended = true;
                Ok(Batch::end())
            }
            Ok(Msg::Failed(e)) => {
                self.failure = Some(e.clone());
                Err(e)
            }
            Err(RecvTimeoutError::Timeout) => Ok(Batch::starved()),
            Err(RecvTimeoutError::Disconnected) => {
                self.failure = Some(BrokerError::Truncated);
                Err(BrokerError::Truncated)
            }
        }
    }
}

impl Drop for SocketBroker {
    fn drop(&mut self) {
        // Only join a receiver that has finished; a live one may be blocked
        // on a read from a producer that never sends END.
        if self.ended || self.failure.is_some() {
            if let Some(w) = self.worker.take() {
                let _ = w.join();
            }
        }
    }
}

fn receive(mut reader: BufReader<TcpStream>, mut writer: TcpStream, tx: SyncSender<Msg>) {
    let result = receive_frames(&mut reader, &mut writer, &tx);
    let msg = match result {
        Ok(()) => Msg::End,
        Err(e) => Msg::Failed(e),
    };
    let _ = tx.send(msg);
}

fn receive_frames(
    reader: &mut BufReader<TcpStream>,
    writer: &mut TcpStream,
    tx: &SyncSender<Msg>,
) -> Result<(), BrokerError> {
    let mut line = String::new();
    let mut greeted = false;
    let mut last_seq: Option<u64> = None;
    loop {
        line.clear();
        let n = reader.read_line(&mut line).map_err(|_| BrokerError::Truncated)?;
        if n == 0 {
            return Err(BrokerError::Truncated);
        }
        if line.trim().is_empty() {
            continue;
        }
        match Frame::decode(&line)? {
            Frame::Hello { version, model_hint } => {
                if greeted {
                    return Err(BrokerError::Protocol("duplicate hello".into()));
                }
                if version != PROTOCOL_VERSION {
                    return Err(BrokerError::Protocol(format!(
                        "unsupported protocol version {version}"
                    )));
                }
                log::debug!("producer hello, model hint `{model_hint}`");
                writer.write_all(Frame::Ok.encode().as_bytes())?;
                writer.flush()?;
                greeted = true;
            }
            Frame::Insts { batch } => {
                if !greeted {
                    return Err(BrokerError::Protocol("insts frame before hello".into()));
                }
                for inst in &batch {
                    if let Some(prev) = last_seq {
                        if inst.seq <= prev {
                            return Err(BrokerError::Protocol(format!(
                                "non-monotonic seq_id {} after {}",
                                inst.seq, prev
                            )));
                        }
                    }
                    if let Some(m) = inst.mem.iter().find(|m| !m.is_valid()) {
                        return Err(BrokerError::Protocol(format!(
                            "seq_id {}: invalid memory access at {:#x} size {}",
                            inst.seq, m.address, m.size
                        )));
                    }
                    last_seq = Some(inst.seq);
                }
                if tx.send(Msg::Insts(batch)).is_err() {
                    // consumer went away
                    return Ok(());
                }
            }
            Frame::End => {
                if !greeted {
                    return Err(BrokerError::Protocol("end frame before hello".into()));
                }
                return Ok(());
            }
            Frame::Ok => return Err(BrokerError::Protocol("unexpected ok frame from producer".into())),
        }
    }
}

/// Producer end of a trace stream.
pub struct TraceSender {
    reader: BufReader<TcpStream>,
    writer: io::BufWriter<TcpStream>,
}

impl TraceSender {
    /// Connects to a listening consumer and performs the handshake.
    pub fn connect(endpoint: impl ToSocketAddrs, model_hint: &str) -> Result<Self, BrokerError> {
        Self::handshake(TcpStream::connect(endpoint)?, model_hint)
    }

    pub fn handshake(stream: TcpStream, model_hint: &str) -> Result<Self, BrokerError> {
        let reader = BufReader::new(stream.try_clone()?);
        let writer = io::BufWriter::new(stream);
        let mut sender = TraceSender { reader, writer };
        sender.send(&Frame::Hello {
            version: PROTOCOL_VERSION,
            model_hint: model_hint.to_string(),
        })?;
        sender.writer.flush()?;
        let mut line = String::new();
        if sender.reader.read_line(&mut line)? == 0 {
            return Err(BrokerError::Protocol("consumer closed before acknowledging hello".into()));
        }
        match Frame::decode(&line)? {
            Frame::Ok => Ok(sender),
            other => Err(BrokerError::Protocol(format!("expected ok, got {other:?}"))),
        }
    }

    fn send(&mut self, frame: &Frame) -> Result<(), BrokerError> {
        self.writer.write_all(frame.encode().as_bytes())?;
        Ok(())
    }

    pub fn send_batch(&mut self, batch: &[TraceInstruction]) -> Result<(), BrokerError> {
        if batch.is_empty() {
            return Ok(());
        }
        self.send(&Frame::Insts { batch: batch.to_vec() })
    }

    pub fn flush(&mut self) -> Result<(), BrokerError> {
        self.writer.flush()?;
        Ok(())
    }

    /// Sends END and flushes.
    pub fn finish(mut self) -> Result<(), BrokerError> {
        self.send(&Frame::End)?;
        self.writer.flush()?;
        Ok(())
    }
}

/// Streams a whole trace over an established sender in `batch`-sized frames.
pub fn send_trace(
    mut sender: TraceSender,
    trace: &[TraceInstruction],
    batch: usize,
) -> Result<(), BrokerError> {
    for chunk in trace.chunks(batch.max(1)) {
        sender.send_batch(chunk)?;
    }
    sender.finish()
}
