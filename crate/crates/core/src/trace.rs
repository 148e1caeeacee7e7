//! Dynamic trace records and the line-oriented trace file format.
//!
//! ```text
//! I <seq> <hex-addr> <class> R:<r,...> W:<r,...> [L:<hex-addr>:<size>]* [S:<hex-addr>:<size>]* [C:<key>=<value>]
//! ```
//!
//! `#` starts a comment, blank lines are ignored and an empty register list
//! is written `R:-`.

use std::fmt::{self, Write as _};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("trace line {line}: {message}")]
pub struct TraceParseError {
    pub line: usize,
    pub message: String,
}

/// An architectural register as named by the trace producer. Only equality
/// matters to the simulator.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Reg(pub String);

impl Reg {
    pub fn new(name: impl Into<String>) -> Self {
        Reg(name.into())
    }
}

impl fmt::Display for Reg {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AccessKind {
    Load,
    Store,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MemoryAccess {
    pub kind: AccessKind,
    pub address: u64,
    pub size: u32,
}

impl MemoryAccess {
    pub fn load(address: u64, size: u32) -> Self {
        MemoryAccess { kind: AccessKind::Load, address, size }
    }

    pub fn store(address: u64, size: u32) -> Self {
        MemoryAccess { kind: AccessKind::Store, address, size }
    }

    /// Exclusive end of the byte range, `None` if the access is empty or
    /// wraps the address space.
    pub fn end(&self) -> Option<u64> {
        if self.size == 0 {
            return None;
        }
        self.address.checked_add(self.size as u64)
    }

    pub fn is_valid(&self) -> bool {
        self.end().is_some()
    }
}

/// Execution-context metadata such as a vector length multiplier.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Context {
    pub key: String,
    pub value: String,
}

/// One dynamically executed instruction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceInstruction {
    pub seq: u64,
    pub addr: u64,
    pub class: String,
    #[serde(default)]
    pub reads: Vec<Reg>,
    #[serde(default)]
    pub writes: Vec<Reg>,
    #[serde(default)]
    pub mem: Vec<MemoryAccess>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ctx: Option<Context>,
}

impl TraceInstruction {
    pub fn new(seq: u64, addr: u64, class: impl Into<String>) -> Self {
        TraceInstruction {
            seq,
            addr,
            class: class.into(),
            reads: Vec::new(),
            writes: Vec::new(),
            mem: Vec::new(),
            ctx: None,
        }
    }

    pub fn reads<I, S>(mut self, regs: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.reads = regs.into_iter().map(|r| Reg(r.into())).collect();
        self
    }

    pub fn writes<I, S>(mut self, regs: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.writes = regs.into_iter().map(|r| Reg(r.into())).collect();
        self
    }

    pub fn with_mem(mut self, access: MemoryAccess) -> Self {
        self.mem.push(access);
        self
    }

    pub fn with_ctx(mut self, key: impl Into<String>, value: impl Into<String>) -> Self {
        self.ctx = Some(Context { key: key.into(), value: value.into() });
        self
    }

    pub fn context(&self) -> Option<(&str, &str)> {
        self.ctx.as_ref().map(|c| (c.key.as_str(), c.value.as_str()))
    }

    pub fn has_load(&self) -> bool {
        self.mem.iter().any(|m| m.kind == AccessKind::Load)
    }

    pub fn has_store(&self) -> bool {
        self.mem.iter().any(|m| m.kind == AccessKind::Store)
    }

    /// Renders the instruction as one trace file line (no trailing newline).
    pub fn to_line(&self) -> String {
        let mut s = String::with_capacity(64);
        self.write_line(&mut s);
        s
    }

    pub(crate) fn write_line(&self, s: &mut String) {
        let _ = write!(s, "I {} {:#x} {} R:", self.seq, self.addr, self.class);
        write_regs(s, &self.reads);
        s.push_str(" W:");
        write_regs(s, &self.writes);
        for kind in [AccessKind::Load, AccessKind::Store] {
            for m in self.mem.iter().filter(|m| m.kind == kind) {
                let tag = if kind == AccessKind::Load { 'L' } else { 'S' };
                let _ = write!(s, " {tag}:{:#x}:{}", m.address, m.size);
            }
        }
        if let Some(c) = &self.ctx {
            let _ = write!(s, " C:{}={}", c.key, c.value);
        }
    }
}

fn write_regs(s: &mut String, regs: &[Reg]) {
    if regs.is_empty() {
        s.push('-');
        return;
    }
    for (i, r) in regs.iter().enumerate() {
        if i > 0 {
            s.push(',');
        }
        s.push_str(&r.0);
    }
}

fn parse_hex(tok: &str) -> Option<u64> {
    let digits = tok.strip_prefix("0x").or_else(|| tok.strip_prefix("0X"))?;
    u64::from_str_radix(digits, 16).ok()
}

fn parse_regs(list: &str) -> Option<Vec<Reg>> {
    if list == "-" || list.is_empty() {
        return Some(Vec::new());
    }
    list.split(',')
        .map(|r| (!r.is_empty()).then(|| Reg(r.to_string())))
        .collect()
}

fn parse_access(kind: AccessKind, body: &str) -> Option<MemoryAccess> {
    let (addr, size) = body.rsplit_once(':')?;
    let access = MemoryAccess { kind, address: parse_hex(addr)?, size: size.parse().ok()? };
    access.is_valid().then_some(access)
}

/// Parses one line. Returns `Ok(None)` for blank and comment lines.
pub fn parse_line(text: &str, line: usize) -> Result<Option<TraceInstruction>, TraceParseError> {
    let err = |message: String| TraceParseError { line, message };
    let content = match text.find('#') {
        Some(i) => &text[..i],
        None => text,
    };
    let mut toks = content.split_whitespace();
    let Some(tag) = toks.next() else {
        return Ok(None);
    };
    if tag != "I" {
        return Err(err(format!("expected record tag `I`, found `{tag}`")));
    }
    let seq = toks
        .next()
        .and_then(|t| t.parse::<u64>().ok())
        .ok_or_else(|| err("missing or malformed sequence number".into()))?;
    let addr = toks
        .next()
        .and_then(parse_hex)
        .ok_or_else(|| err("missing or malformed hex instruction address".into()))?;
    let class = toks.next().ok_or_else(|| err("missing class name".into()))?;

    let reads = toks
        .next()
        .and_then(|t| t.strip_prefix("R:"))
        .and_then(parse_regs)
        .ok_or_else(|| err("expected `R:<regs>`".into()))?;
    let writes = toks
        .next()
        .and_then(|t| t.strip_prefix("W:"))
        .and_then(parse_regs)
        .ok_or_else(|| err("expected `W:<regs>`".into()))?;

    let mut inst = TraceInstruction::new(seq, addr, class);
    inst.reads = reads;
    inst.writes = writes;
    for tok in toks {
        if inst.ctx.is_some() {
            return Err(err(format!("unexpected `{tok}` after context field")));
        }
        if let Some(body) = tok.strip_prefix("L:") {
            let a = parse_access(AccessKind::Load, body)
                .ok_or_else(|| err(format!("malformed load `{tok}`")))?;
            inst.mem.push(a);
        } else if let Some(body) = tok.strip_prefix("S:") {
            let a = parse_access(AccessKind::Store, body)
                .ok_or_else(|| err(format!("malformed store `{tok}`")))?;
            inst.mem.push(a);
        } else if let Some(body) = tok.strip_prefix("C:") {
            let (key, value) = body
                .split_once('=')
                .filter(|(k, v)| !k.is_empty() && !v.is_empty())
                .ok_or_else(|| err(format!("malformed context `{tok}`")))?;
            inst.ctx = Some(Context { key: key.into(), value: value.into() });
        } else {
            return Err(err(format!("unknown field `{tok}`")));
        }
    }
    Ok(Some(inst))
}

/// Renders a whole trace in file format, one line per instruction.
pub fn render_trace(trace: &[TraceInstruction]) -> String {
    let mut s = String::with_capacity(trace.len() * 48);
    for inst in trace {
        inst.write_line(&mut s);
        s.push('\n');
    }
    s
}

/// An ordered group of instructions handed from a broker to the pipeline.
///
/// An empty batch without `end_of_stream` means "no data yet": the producer
/// is alive but has nothing buffered.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Batch {
    pub instructions: Vec<TraceInstruction>,
    pub end_of_stream: bool,
}

impl Batch {
    pub fn data(instructions: Vec<TraceInstruction>) -> Self {
        Batch { instructions, end_of_stream: false }
    }

    pub fn end() -> Self {
        Batch { instructions: Vec::new(), end_of_stream: true }
    }

    pub fn starved() -> Self {
        Batch::default()
    }

    pub fn is_starved(&self) -> bool {
        self.instructions.is_empty() && !self.end_of_stream
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_documented_line() {
        let inst = parse_line("I 7 0x400a vhaddps R:x2,x2 W:x3", 1).unwrap().unwrap();
        assert_eq!(inst.seq, 7);
        assert_eq!(inst.addr, 0x400a);
        assert_eq!(inst.class, "vhaddps");
        assert_eq!(inst.reads, vec![Reg::new("x2"), Reg::new("x2")]);
        assert_eq!(inst.writes, vec![Reg::new("x3")]);
        assert!(inst.mem.is_empty());
        assert!(inst.ctx.is_none());
    }

    #[test]
    fn parses_memory_and_context() {
        let inst = parse_line("I 3 0x10 rmw R:- W:- L:0x1000:8 S:0x2000:4 C:lmul=2 # note", 4)
            .unwrap()
            .unwrap();
        assert!(inst.reads.is_empty() && inst.writes.is_empty());
        assert_eq!(inst.mem, vec![MemoryAccess::load(0x1000, 8), MemoryAccess::store(0x2000, 4)]);
        assert_eq!(inst.context(), Some(("lmul", "2")));
        assert_eq!(inst.to_line(), "I 3 0x10 rmw R:- W:- L:0x1000:8 S:0x2000:4 C:lmul=2");
    }

    #[test]
    fn skips_comments_and_blanks() {
        assert_eq!(parse_line("   ", 1), Ok(None));
        assert_eq!(parse_line("# just a comment", 2), Ok(None));
    }

    #[test]
    fn reports_line_numbers() {
        for bad in [
            "X 1 0x0 a R:- W:-",
            "I one 0x0 a R:- W:-",
            "I 1 400 a R:- W:-",
            "I 1 0x0 a W:- R:-",
            "I 1 0x0 a R:- W:- L:0x10:0",
            "I 1 0x0 a R:- W:- L:0xffffffffffffffff:8",
            "I 1 0x0 a R:- W:- Q:1",
            "I 1 0x0 a R:x1,,x2 W:-",
        ] {
            let e = parse_line(bad, 9).unwrap_err();
            assert_eq!(e.line, 9, "{bad}");
        }
    }

    #[test]
    fn access_end_detects_wrap() {
        assert_eq!(MemoryAccess::load(0x10, 8).end(), Some(0x18));
        assert_eq!(MemoryAccess::load(u64::MAX - 7, 8).end(), None);
        assert_eq!(MemoryAccess::load(u64::MAX - 8, 8).end(), Some(u64::MAX));
    }

    #[test]
    fn batch_states_are_distinct() {
        assert!(Batch::starved().is_starved());
        assert!(!Batch::end().is_starved());
        assert!(!Batch::data(vec![TraceInstruction::new(0, 0, "a")]).is_starved());
    }
}
