//! Streaming whole-trace instruction throughput estimation.
//!
//! Traces of dynamically executed instructions, annotated with memory
//! addresses and execution-context metadata, are pushed through a
//! configurable out-of-order pipeline model in bounded memory. The crate also
//! contains a small deterministic toy ISA that produces such traces, the
//! analysis views (summary, timeline, browser trace export) and differential
//! throughput between program versions.

pub mod analysis;
pub mod broker;
pub mod lsunit;
pub mod model;
pub mod pipeline;
pub mod toy;
pub mod trace;
pub mod views;

pub use broker::{open_file_broker, open_socket_broker, Broker, BrokerError};
pub use lsunit::{ranges_overlap, AliasPolicy};
pub use model::{load_model, MachineModel, ModelError};
pub use pipeline::{Pipeline, PipelineConfig, PipelineError, RunResult, RunStatus};
pub use trace::{Batch, MemoryAccess, TraceInstruction};
