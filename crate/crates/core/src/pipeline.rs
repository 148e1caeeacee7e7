//! Streaming out-of-order pipeline simulator.
//!
//! Each simulated cycle runs five steps in a fixed order:
//!
//! 1. retire up to `retire_width` Executed records from the ROB head;
//! 2. complete executions whose remaining latency reaches zero;
//! 3. issue Ready records oldest-first, subject to free resource units and
//!    load/store admission;
//! 4. wake records whose producers completed this cycle;
//! 5. dispatch from the entry buffer into the ROB, spending the dispatch
//!    width in micro-ops.
//!
//! An instruction issued at cycle `i` with latency `L` executes during
//! cycles `i..=i+L-1`; its consumers wake in step 4 of cycle `i+L-1` and can
//! issue from cycle `i+L`. Issue is never earlier than one cycle after
//! dispatch.
//!
//! Instructions arrive incrementally. The pipeline only advances time while
//! its entry buffer is full or the input has ended, so the simulated timing
//! does not depend on how the trace was split into batches or on when the
//! batches arrived. When the broker has nothing to offer, the pipeline keeps
//! its state and returns; feeding more input later resumes where it stopped.
//!
//! Instruction records live in a slab and are recycled at retirement, so the
//! number of records ever allocated is bounded by the ROB plus the entry
//! buffer, independent of trace length.

use std::collections::{HashMap, VecDeque};
use std::ops::Range;
use std::sync::Arc;

use thiserror::Error;

use crate::broker::{Broker, BrokerError, Metadata, MetadataRegistry};
use crate::lsunit::{Admission, AliasPolicy, MemQueues};
use crate::model::{ClassId, ContextLatencyError, MachineModel};
use crate::trace::{Reg, TraceInstruction};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PipelineError {
    #[error("seq {seq}: unknown instruction class `{class}`")]
    UnknownClass { seq: u64, class: String },
    #[error("seq {seq}: class `{class}` cannot perform a {kind}")]
    IllegalMemoryAccess { seq: u64, class: String, kind: &'static str },
    #[error("seq {seq}: sequence number does not follow {prev}")]
    NonMonotonic { seq: u64, prev: u64 },
    #[error(transparent)]
    ContextLatency(#[from] ContextLatencyError),
    #[error(transparent)]
    Broker(#[from] BrokerError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum InstrState {
    /// Accepted into the entry buffer, not yet dispatched.
    Entry,
    /// In the ROB, waiting on operands.
    Dispatched,
    Ready,
    Executing,
    /// Finished executing, waiting to retire.
    Executed,
    Retired,
}

type SlotId = usize;

/// In-flight state of one instruction. Records are recycled through the
/// pipeline's pool; every field is reset when a record is reused.
#[derive(Debug, Clone)]
pub struct InstrRecord {
    pub seq: u64,
    pub addr: u64,
    pub class: ClassId,
    pub state: InstrState,
    pub dispatched_at: Option<u64>,
    pub issued_at: Option<u64>,
    pub executed_at: Option<u64>,
    pub retired_at: Option<u64>,
    pub remaining_latency: u32,
    pub effective_latency: u32,
    pub uops: u32,
    /// Producers (by seq) whose results are still outstanding.
    pub waiting_on: Vec<u64>,
    pub iteration: u64,
    pub position: u64,
    is_load: bool,
    is_store: bool,
    reads: Vec<Reg>,
    writes: Vec<Reg>,
    consumers: Vec<SlotId>,
}

impl InstrRecord {
    fn blank() -> Self {
        InstrRecord {
            seq: 0,
            addr: 0,
            class: ClassId(0),
            state: InstrState::Entry,
            dispatched_at: None,
            issued_at: None,
            executed_at: None,
            retired_at: None,
            remaining_latency: 0,
            effective_latency: 0,
            uops: 0,
            waiting_on: Vec::new(),
            iteration: 0,
            position: 0,
            is_load: false,
            is_store: false,
            reads: Vec::new(),
            writes: Vec::new(),
            consumers: Vec::new(),
        }
    }

    fn reset(&mut self) {
        self.state = InstrState::Entry;
        self.dispatched_at = None;
        self.issued_at = None;
        self.executed_at = None;
        self.retired_at = None;
        self.remaining_latency = 0;
        self.waiting_on.clear();
        self.reads.clear();
        self.writes.clear();
        self.consumers.clear();
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct PoolStats {
    pub total_allocated: u64,
    pub total_recycled: u64,
    pub peak_live: u64,
}

/// Free list of instruction records.
#[derive(Debug, Default)]
struct RecyclePool {
    slots: Vec<InstrRecord>,
    free: Vec<SlotId>,
    total_recycled: u64,
    peak_live: u64,
}

impl RecyclePool {
    fn acquire(&mut self) -> SlotId {
        let id = match self.free.pop() {
            Some(id) => id,
            None => {
                self.slots.push(InstrRecord::blank());
                self.slots.len() - 1
            }
        };
        let live = (self.slots.len() - self.free.len()) as u64;
        self.peak_live = self.peak_live.max(live);
        id
    }

    fn release(&mut self, id: SlotId) {
        self.slots[id].reset();
        self.free.push(id);
        self.total_recycled += 1;
    }

    fn stats(&self) -> PoolStats {
        PoolStats {
            total_allocated: self.slots.len() as u64,
            total_recycled: self.total_recycled,
            peak_live: self.peak_live,
        }
    }
}

/// Timestamps of one retired instruction, kept when timeline recording is on.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct RetiredInstr {
    pub seq: u64,
    pub addr: u64,
    pub class: String,
    pub iteration: u64,
    pub position: u64,
    pub dispatched_at: u64,
    pub issued_at: u64,
    pub executed_at: u64,
    pub retired_at: u64,
    pub latency: u32,
    pub uops: u32,
}

#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub alias_policy: AliasPolicy,
    /// Entry buffer capacity, normally the maximum batch size. Raised to the
    /// dispatch width if smaller.
    pub entry_capacity: usize,
    /// Seq range whose timestamps are recorded at retirement.
    pub record: Option<Range<u64>>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig { alias_policy: AliasPolicy::default(), entry_capacity: 64, record: None }
    }
}

impl PipelineConfig {
    pub fn record_all(mut self) -> Self {
        self.record = Some(0..u64::MAX);
        self
    }
}

/// What happened during one call to [`Pipeline::run_cycle`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CycleEvents {
    pub cycle: u64,
    pub retired: u32,
    pub completed: u32,
    pub issued: u32,
    pub dispatched: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunStatus {
    /// The broker had no data; state is preserved for a later call.
    Suspended,
    /// The input ended and every instruction has retired.
    Drained,
}

/// Counters and (optionally) per-instruction timestamps of a run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunResult {
    pub instructions: u64,
    pub total_uops: u64,
    pub total_cycles: u64,
    pub dispatch_width: u32,
    /// Occupancy cycles claimed per resource, with the resource's unit count.
    pub resource_pressure: Vec<(String, u64, u32)>,
    pub retired: Vec<RetiredInstr>,
    pub pool: PoolStats,
    pub missing_mem_metadata: u64,
    pub truncated: bool,
    pub drained: bool,
}

pub struct Pipeline {
    model: Arc<MachineModel>,
    config: PipelineConfig,
    entry_capacity: usize,
    cycle: u64,
    pool: RecyclePool,
    entry: VecDeque<SlotId>,
    rob: VecDeque<SlotId>,
    ready: Vec<SlotId>,
    executing: Vec<SlotId>,
    completed_now: Vec<SlotId>,
    scoreboard: HashMap<Reg, (u64, SlotId)>,
    resource_busy: Vec<Vec<u64>>,
    lsu: MemQueues,
    registry: MetadataRegistry,
    dispatch_stall: u64,
    last_seq: Option<u64>,
    input_ended: bool,
    suspended: bool,
    truncated: bool,
    iteration: u64,
    next_position: u64,
    instructions_retired: u64,
    uops_retired: u64,
    last_retire: Option<u64>,
    occupancy: Vec<u64>,
    missing_mem_metadata: u64,
    retired_log: Vec<RetiredInstr>,
    claim_scratch: Vec<(usize, usize)>,
    stall_bound: u64,
}

impl Pipeline {
    pub fn new(model: Arc<MachineModel>, config: PipelineConfig) -> Self {
        let entry_capacity = config.entry_capacity.max(model.dispatch_width as usize);
        let resource_busy = model.resources.iter().map(|r| vec![0; r.units as usize]).collect();
        let lsu = MemQueues::new(model.load_queue_size as usize, model.store_queue_size as usize);
        let occupancy = vec![0; model.resources.len()];
        let stall_bound = model
            .classes
            .iter()
            .flat_map(|c| {
                let dispatch = c.num_uops.div_ceil(model.dispatch_width) as u64;
                c.resource_usage.iter().map(|u| u.cycles as u64).chain([dispatch])
            })
            .max()
            .unwrap_or(0)
            + 2;
        Pipeline {
            stall_bound,
            entry: VecDeque::with_capacity(entry_capacity),
            rob: VecDeque::with_capacity(model.reorder_buffer_size as usize),
            model,
            config,
            entry_capacity,
            cycle: 0,
            pool: RecyclePool::default(),
            ready: Vec::new(),
            executing: Vec::new(),
            completed_now: Vec::new(),
            scoreboard: HashMap::new(),
            resource_busy,
            lsu,
            registry: MetadataRegistry::default(),
            dispatch_stall: 0,
            last_seq: None,
            input_ended: false,
            suspended: false,
            truncated: false,
            iteration: 0,
            next_position: 0,
            instructions_retired: 0,
            uops_retired: 0,
            last_retire: None,
            occupancy,
            missing_mem_metadata: 0,
            retired_log: Vec::new(),
            claim_scratch: Vec::new(),
        }
    }

    pub fn model(&self) -> &MachineModel {
        &self.model
    }

    pub fn cycle(&self) -> u64 {
        self.cycle
    }

    pub fn entry_capacity(&self) -> usize {
        self.entry_capacity
    }

    pub fn entry_space(&self) -> usize {
        self.entry_capacity - self.entry.len()
    }

    pub fn rob_len(&self) -> usize {
        self.rob.len()
    }

    pub fn entry_len(&self) -> usize {
        self.entry.len()
    }

    pub fn live_records(&self) -> usize {
        self.pool.slots.len() - self.pool.free.len()
    }

    pub fn registry_len(&self) -> usize {
        self.registry.len()
    }

    pub fn is_suspended(&self) -> bool {
        self.suspended
    }

    /// Nothing is buffered or in flight.
    pub fn is_idle(&self) -> bool {
        self.entry.is_empty() && self.rob.is_empty()
    }

    pub fn instructions_retired(&self) -> u64 {
        self.instructions_retired
    }

    pub fn pool_stats(&self) -> PoolStats {
        self.pool.stats()
    }

    /// Cycle count so far: last retirement cycle plus one.
    pub fn total_cycles(&self) -> u64 {
        self.last_retire.map_or(0, |c| c + 1)
    }

    /// Tags subsequently fed instructions with `iteration` and restarts their
    /// position numbering.
    pub fn begin_iteration(&mut self, iteration: u64) {
        self.iteration = iteration;
        self.next_position = 0;
    }

    /// Moves instructions from the front of `instructions` into the entry
    /// buffer, up to its free capacity. Returns how many were accepted; the
    /// rest stay in `instructions` for a later call.
    pub fn feed(&mut self, instructions: &mut Vec<TraceInstruction>) -> Result<usize, PipelineError> {
        let n = self.entry_space().min(instructions.len());
        let mut accepted = 0;
        let result = (|| {
            for inst in instructions.iter_mut().take(n) {
                self.accept(inst)?;
                accepted += 1;
            }
            Ok(())
        })();
        instructions.drain(..accepted);
        result.map(|()| accepted)
    }

    fn accept(&mut self, inst: &mut TraceInstruction) -> Result<(), PipelineError> {
        if let Some(prev) = self.last_seq {
            if inst.seq <= prev {
                return Err(PipelineError::NonMonotonic { seq: inst.seq, prev });
            }
        }
        let class_id = self.model.class_id(&inst.class).ok_or_else(|| PipelineError::UnknownClass {
            seq: inst.seq,
            class: inst.class.clone(),
        })?;
        let class = self.model.class(class_id);
        let has_load = inst.has_load();
        let has_store = inst.has_store();
        for (present, allowed, kind) in
            [(has_load, class.may_load, "load"), (has_store, class.may_store, "store")]
        {
            if present && !allowed {
                return Err(PipelineError::IllegalMemoryAccess {
                    seq: inst.seq,
                    class: class.name.clone(),
                    kind,
                });
            }
        }
        let latency = self.model.effective_latency(class, inst.context(), inst.seq)?;
        let (is_load, is_store) = if inst.mem.is_empty() {
            if class.may_load || class.may_store {
                self.missing_mem_metadata += 1;
            }
            (class.may_load, class.may_store)
        } else {
            (has_load, has_store)
        };
        let uops = class.num_uops;

        let id = self.pool.acquire();
        let rec = &mut self.pool.slots[id];
        rec.seq = inst.seq;
        rec.addr = inst.addr;
        rec.class = class_id;
        rec.state = InstrState::Entry;
        rec.effective_latency = latency;
        rec.remaining_latency = latency;
        rec.uops = uops;
        rec.is_load = is_load;
        rec.is_store = is_store;
        rec.iteration = self.iteration;
        rec.position = self.next_position;
        rec.reads.append(&mut inst.reads);
        rec.writes.append(&mut inst.writes);
        self.registry.insert(
            inst.seq,
            Metadata { mem: std::mem::take(&mut inst.mem), ctx: inst.ctx.take() },
        );
        self.next_position += 1;
        self.last_seq = Some(inst.seq);
        self.entry.push_back(id);
        Ok(())
    }

    /// Simulates one cycle.
    pub fn run_cycle(&mut self) -> CycleEvents {
        let mut ev = CycleEvents { cycle: self.cycle, ..Default::default() };
        ev.retired = self.retire();
        ev.completed = self.complete();
        ev.issued = self.issue();
        self.wake();
        ev.dispatched = self.dispatch();
        self.cycle += 1;
        ev
    }

    fn retire(&mut self) -> u32 {
        let c = self.cycle;
        let mut n = 0;
        while n < self.model.retire_width {
            let Some(&id) = self.rob.front() else { break };
            if self.pool.slots[id].state != InstrState::Executed {
                break;
            }
            self.rob.pop_front();
            n += 1;
            let rec = &mut self.pool.slots[id];
            rec.state = InstrState::Retired;
            rec.retired_at = Some(c);
            let seq = rec.seq;
            for w in &rec.writes {
                if let Some(&(s, _)) = self.scoreboard.get(w) {
                    if s == seq {
                        self.scoreboard.remove(w);
                    }
                }
            }
            if rec.is_load || rec.is_store {
                self.lsu.remove(seq);
            }
            self.registry.remove(seq);
            for &(rid, cycles) in self.model.claims(rec.class) {
                self.occupancy[rid.0] += cycles as u64;
            }
            self.instructions_retired += 1;
            self.uops_retired += rec.uops as u64;
            self.last_retire = Some(c);
            if self.config.record.as_ref().is_some_and(|w| w.contains(&seq)) {
                let rec = &self.pool.slots[id];
                self.retired_log.push(RetiredInstr {
                    seq,
                    addr: rec.addr,
                    class: self.model.class(rec.class).name.clone(),
                    iteration: rec.iteration,
                    position: rec.position,
                    dispatched_at: rec.dispatched_at.expect("retired record was dispatched"),
                    issued_at: rec.issued_at.expect("retired record was issued"),
                    executed_at: rec.executed_at.expect("retired record was executed"),
                    retired_at: c,
                    latency: rec.effective_latency,
                    uops: rec.uops,
                });
            }
            self.pool.release(id);
        }
        n
    }

    fn complete(&mut self) -> u32 {
        let c = self.cycle;
        let slots = &mut self.pool.slots;
        let done = &mut self.completed_now;
        let before = done.len();
        self.executing.retain(|&id| {
            let rec = &mut slots[id];
            rec.remaining_latency -= 1;
            if rec.remaining_latency == 0 {
                rec.state = InstrState::Executed;
                rec.executed_at = Some(c);
                done.push(id);
                false
            } else {
                true
            }
        });
        (done.len() - before) as u32
    }

    fn issue(&mut self) -> u32 {
        let c = self.cycle;
        let mut issued = 0;
        let mut i = 0;
        while i < self.ready.len() {
            let id = self.ready[i];
            if self.try_issue(id, c) {
                self.ready.remove(i);
                issued += 1;
            } else {
                i += 1;
            }
        }
        issued
    }

    fn try_issue(&mut self, id: SlotId, c: u64) -> bool {
        let rec = &self.pool.slots[id];
        debug_assert_eq!(rec.state, InstrState::Ready);
        debug_assert!(rec.dispatched_at.is_some_and(|d| d < c));
        let claims = self.model.claims(rec.class);

        self.claim_scratch.clear();
        for &(rid, _) in claims {
            let units = &self.resource_busy[rid.0];
            let taken = &self.claim_scratch;
            let free = (0..units.len())
                .find(|&u| units[u] <= c && !taken.iter().any(|&(r, tu)| r == rid.0 && tu == u));
            match free {
                Some(u) => self.claim_scratch.push((rid.0, u)),
                None => return false,
            }
        }
        if (rec.is_load || rec.is_store)
            && self.lsu.admit(self.config.alias_policy, rec.seq) != Admission::Admit
        {
            return false;
        }

        for (&(_, cycles), &(r, u)) in claims.iter().zip(&self.claim_scratch) {
            self.resource_busy[r][u] = c + cycles as u64;
        }
        let rec = &mut self.pool.slots[id];
        rec.issued_at = Some(c);
        rec.remaining_latency -= 1;
        if rec.remaining_latency == 0 {
            rec.state = InstrState::Executed;
            rec.executed_at = Some(c);
            self.completed_now.push(id);
        } else {
            rec.state = InstrState::Executing;
            self.executing.push(id);
        }
        true
    }

    fn wake(&mut self) {
        let done = std::mem::take(&mut self.completed_now);
        for &id in &done {
            let (seq, mem) = {
                let r = &self.pool.slots[id];
                (r.seq, r.is_load || r.is_store)
            };
            if mem {
                self.lsu.mark_executed(seq);
            }
            let consumers = std::mem::take(&mut self.pool.slots[id].consumers);
            for &cid in &consumers {
                let cons = &mut self.pool.slots[cid];
                cons.waiting_on.retain(|&p| p != seq);
                if cons.waiting_on.is_empty() && cons.state == InstrState::Dispatched {
                    cons.state = InstrState::Ready;
                    insert_ready(&mut self.ready, &self.pool.slots, cid);
                }
            }
            // hand the allocation back for reuse
            let mut consumers = consumers;
            consumers.clear();
            self.pool.slots[id].consumers = consumers;
        }
        let mut done = done;
        done.clear();
        self.completed_now = done;
    }

    fn dispatch(&mut self) -> u32 {
        if self.dispatch_stall > 0 {
            self.dispatch_stall -= 1;
            return 0;
        }
        let width = self.model.dispatch_width;
        let mut budget = width;
        let mut n = 0;
        while let Some(&id) = self.entry.front() {
            if self.rob.len() >= self.model.reorder_buffer_size as usize {
                break;
            }
            let rec = &self.pool.slots[id];
            if !self.lsu.has_space(rec.is_load, rec.is_store) {
                break;
            }
            let uops = rec.uops;
            if uops > width {
                // Monopolizes dispatch for ceil(uops / width) cycles.
                if budget != width {
                    break;
                }
                self.dispatch_stall = (uops.div_ceil(width) - 1) as u64;
                budget = 0;
            } else if uops <= budget {
                budget -= uops;
            } else {
                break;
            }
            self.entry.pop_front();
            self.dispatch_one(id);
            n += 1;
            if budget == 0 {
                break;
            }
        }
        n
    }

    fn dispatch_one(&mut self, id: SlotId) {
        let c = self.cycle;
        let (seq, reads, writes) = {
            let r = &mut self.pool.slots[id];
            r.dispatched_at = Some(c);
            (r.seq, std::mem::take(&mut r.reads), std::mem::take(&mut r.writes))
        };

        let mut waiting = std::mem::take(&mut self.pool.slots[id].waiting_on);
        for reg in &reads {
            if let Some(&(pseq, pid)) = self.scoreboard.get(reg) {
                let producer = &mut self.pool.slots[pid];
                if producer.state < InstrState::Executed && !waiting.contains(&pseq) {
                    waiting.push(pseq);
                    producer.consumers.push(id);
                }
            }
        }
        for reg in &writes {
            match self.scoreboard.get_mut(reg) {
                Some(entry) => *entry = (seq, id),
                None => {
                    self.scoreboard.insert(reg.clone(), (seq, id));
                }
            }
        }

        let rec = &mut self.pool.slots[id];
        rec.reads = reads;
        rec.writes = writes;
        let ready = waiting.is_empty();
        rec.waiting_on = waiting;
        if rec.is_load || rec.is_store {
            let (is_load, is_store) = (rec.is_load, rec.is_store);
            let mem = self.registry.get(seq).map(|m| m.mem.as_slice()).unwrap_or(&[]);
            self.lsu.insert(seq, is_load, is_store, mem);
        }
        self.rob.push_back(id);
        if ready {
            self.pool.slots[id].state = InstrState::Ready;
            insert_ready(&mut self.ready, &self.pool.slots, id);
        } else {
            self.pool.slots[id].state = InstrState::Dispatched;
        }
    }

    /// Cycles until every buffered and in-flight instruction has retired.
    pub fn drain(&mut self) {
        let mut idle_cycles = 0u64;
        while !self.is_idle() {
            let ev = self.run_cycle();
            if ev.retired + ev.completed + ev.issued + ev.dispatched == 0 && self.executing.is_empty() {
                idle_cycles += 1;
                // Resource occupancy and multi-cycle dispatch can stall the
                // pipeline only for a bounded number of cycles.
                assert!(
                    idle_cycles <= self.stall_bound,
                    "pipeline deadlock at cycle {}: rob={} entry={} ready={}",
                    self.cycle,
                    self.rob.len(),
                    self.entry.len(),
                    self.ready.len()
                );
            } else {
                idle_cycles = 0;
            }
        }
    }

    /// Pulls batches from `broker` and simulates until either the broker has
    /// no data (the pipeline suspends, keeping its state) or the input has
    /// ended and everything has retired.
    ///
    /// A truncated stream drains what arrived and marks the run truncated.
    pub fn run_until_starved<B: Broker + ?Sized>(
        &mut self,
        broker: &mut B,
    ) -> Result<RunStatus, PipelineError> {
        let mut staged = Vec::new();
        loop {
            while !self.input_ended && self.entry_space() > 0 {
                let batch = match broker.fetch_batch(self.entry_space()) {
                    Ok(b) => b,
                    Err(BrokerError::Truncated) => {
                        log::warn!("trace truncated after {} instructions", self.last_seq.map_or(0, |s| s + 1));
                        self.truncated = true;
                        self.input_ended = true;
                        break;
                    }
                    Err(e) => return Err(e.into()),
                };
                let starved = batch.is_starved();
                self.input_ended = batch.end_of_stream;
                staged = batch.instructions;
                while !staged.is_empty() {
                    let before = staged.len();
                    self.feed(&mut staged)?;
                    // the broker never returns more than the free space
                    assert!(staged.len() < before, "feed made no progress");
                }
                if starved {
                    self.suspended = true;
                    return Ok(RunStatus::Suspended);
                }
            }
            self.suspended = false;
            if self.input_ended {
                self.drain();
                self.input_ended = false;
                return Ok(RunStatus::Drained);
            }
            self.run_cycle();
            debug_assert!(staged.is_empty());
        }
    }

    pub fn is_truncated(&self) -> bool {
        self.truncated
    }

    pub fn mark_truncated(&mut self) {
        self.truncated = true;
    }

    /// Takes the recorded retirement rows so far.
    pub fn take_retired(&mut self) -> Vec<RetiredInstr> {
        std::mem::take(&mut self.retired_log)
    }

    pub fn result(&self) -> RunResult {
        RunResult {
            instructions: self.instructions_retired,
            total_uops: self.uops_retired,
            total_cycles: self.total_cycles(),
            dispatch_width: self.model.dispatch_width,
            resource_pressure: self
                .model
                .resources
                .iter()
                .zip(&self.occupancy)
                .map(|(r, &occ)| (r.name.clone(), occ, r.units))
                .collect(),
            retired: self.retired_log.clone(),
            pool: self.pool.stats(),
            missing_mem_metadata: self.missing_mem_metadata,
            truncated: self.truncated,
            drained: self.is_idle(),
        }
    }

    pub fn into_result(mut self) -> RunResult {
        let mut r = self.result();
        r.retired = std::mem::take(&mut self.retired_log);
        r
    }
}

fn insert_ready(ready: &mut Vec<SlotId>, slots: &[InstrRecord], id: SlotId) {
    let seq = slots[id].seq;
    let pos = ready.partition_point(|&r| slots[r].seq < seq);
    ready.insert(pos, id);
}

/// Runs a complete in-memory trace through a fresh pipeline.
pub fn simulate(
    model: Arc<MachineModel>,
    config: PipelineConfig,
    trace: Vec<TraceInstruction>,
) -> Result<RunResult, PipelineError> {
    let mut p = Pipeline::new(model, config);
    let mut broker = crate::broker::QueueBroker::from_trace(trace);
    let status = p.run_until_starved(&mut broker)?;
    debug_assert_eq!(status, RunStatus::Drained);
    Ok(p.into_result())
}
