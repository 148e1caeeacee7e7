//! A tiny deterministic ISA used to produce execution traces.
//!
//! Program files are line oriented:
//!
//! ```text
//! .entry start            # entry label (defaults to the first instruction)
//! .map mul.q mulq         # mnemonic -> model class
//! start:
//!     const r1, 0x2000
//!     mul.q r7, r7, r8    # `mul` semantics, traced as class `mulq`
//!     load r5, [r1+16]
//!     ble r6, start
//! ```
//!
//! A mnemonic is a base opcode optionally followed by `.suffix`; the suffix
//! only selects a class mapping. Class lookup tries the full mnemonic, then
//! the base opcode, and finally falls back to the mnemonic itself.
//!
//! Opcodes: `const rd, imm`, `add rd, ra, rb|imm`, `mul rd, ra, rb|imm`,
//! `load rd, [ra+off]`, `store rs, [ra+off]`, `cmp rd, ra, rb|imm` (rd = sign
//! of ra - rb), `ble rc, label` (branch if rc <= 0), `jump label`, `halt`,
//! `setctx key, value|reg`. Registers are `r0`..`r31`, 64 bits wide; memory
//! accesses are 8 bytes, little endian, and unwritten memory reads as zero.
//! The context set by `setctx` is attached to every following instruction.

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use thiserror::Error;

use crate::trace::{Context, MemoryAccess, Reg, TraceInstruction};

/// Address of the first instruction; instructions are 4 bytes apart.
pub const CODE_BASE: u64 = 0x1000;
pub const INSTR_BYTES: u64 = 4;
pub const WORD_BYTES: u32 = 8;
pub const NUM_REGS: usize = 32;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ToyError {
    #[error("program line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("step budget of {max_steps} exhausted after {} instructions", partial.len())]
    Truncated { max_steps: u64, partial: Vec<TraceInstruction> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Operand {
    Reg(u8),
    Imm(i64),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CtxValue {
    Literal(String),
    Reg(u8),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Op {
    Const { rd: u8, imm: i64 },
    Add { rd: u8, a: u8, b: Operand },
    Mul { rd: u8, a: u8, b: Operand },
    Load { rd: u8, base: u8, offset: i64 },
    Store { rs: u8, base: u8, offset: i64 },
    Cmp { rd: u8, a: u8, b: Operand },
    Ble { rc: u8, target: usize },
    Jump { target: usize },
    Halt,
    SetCtx { key: String, value: CtxValue },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ToyInstr {
    pub op: Op,
    pub mnemonic: String,
    pub class: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ToyProgram {
    pub instructions: Vec<ToyInstr>,
    pub labels: BTreeMap<String, usize>,
    pub entry: usize,
    pub class_map: BTreeMap<String, String>,
}

fn reg_name(r: u8) -> Reg {
    Reg(format!("r{r}"))
}

fn parse_reg(tok: &str) -> Result<u8, String> {
    tok.strip_prefix('r')
        .and_then(|n| n.parse::<u8>().ok())
        .filter(|&n| (n as usize) < NUM_REGS)
        .ok_or_else(|| format!("bad register `{tok}`"))
}

fn parse_imm(tok: &str) -> Result<i64, String> {
    let (neg, body) = match tok.strip_prefix('-') {
        Some(b) => (true, b),
        None => (false, tok),
    };
    let v = match body.strip_prefix("0x") {
        Some(hex) => i64::from_str_radix(hex, 16),
        None => body.parse::<i64>(),
    }
    .map_err(|_| format!("bad immediate `{tok}`"))?;
    Ok(if neg { v.wrapping_neg() } else { v })
}

fn parse_operand(tok: &str) -> Result<Operand, String> {
    if tok.starts_with('r') {
        parse_reg(tok).map(Operand::Reg)
    } else {
        parse_imm(tok).map(Operand::Imm)
    }
}

/// `[rN]`, `[rN+off]` or `[rN-off]`
fn parse_mem(tok: &str) -> Result<(u8, i64), String> {
    let inner = tok
        .strip_prefix('[')
        .and_then(|t| t.strip_suffix(']'))
        .ok_or_else(|| format!("bad memory operand `{tok}`"))?;
    if let Some((r, off)) = inner.split_once('+') {
        Ok((parse_reg(r.trim())?, parse_imm(off.trim())?))
    } else if let Some((r, off)) = inner.split_once('-') {
        Ok((parse_reg(r.trim())?, parse_imm(off.trim())?.wrapping_neg()))
    } else {
        Ok((parse_reg(inner.trim())?, 0))
    }
}

fn is_label(s: &str) -> bool {
    !s.is_empty()
        && s.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '.')
        && !s.starts_with(|c: char| c.is_ascii_digit())
}

enum Pending {
    Ready(Op),
    Branch { rc: Option<u8>, label: String },
}

impl ToyProgram {
    pub fn parse(text: &str) -> Result<Self, ToyError> {
        let mut labels = BTreeMap::new();
        let mut class_map = BTreeMap::new();
        let mut entry_label: Option<(String, usize)> = None;
        let mut pending: Vec<(Pending, String, usize)> = Vec::new();

        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let err = |message: String| ToyError::Parse { line, message };
            let content = raw.split('#').next().unwrap().trim();
            if content.is_empty() {
                continue;
            }
            if let Some(rest) = content.strip_prefix(".map") {
                let parts: Vec<_> = rest.split_whitespace().collect();
                let [mnemonic, class] = parts[..] else {
                    return Err(err("expected `.map <mnemonic> <class>`".into()));
                };
                class_map.insert(mnemonic.to_string(), class.to_string());
                continue;
            }
            if let Some(rest) = content.strip_prefix(".entry") {
                let name = rest.trim();
                if !is_label(name) {
                    return Err(err(format!("bad entry label `{name}`")));
                }
                entry_label = Some((name.to_string(), line));
                continue;
            }
            if let Some(name) = content.strip_suffix(':') {
                let name = name.trim();
                if !is_label(name) {
                    return Err(err(format!("bad label `{name}`")));
                }
                if labels.insert(name.to_string(), pending.len()).is_some() {
                    return Err(err(format!("duplicate label `{name}`")));
                }
                continue;
            }

            let (mnemonic, operands) = match content.split_once(char::is_whitespace) {
                Some((m, rest)) => (m, rest.trim()),
                None => (content, ""),
            };
            let args: Vec<&str> = if operands.is_empty() {
                Vec::new()
            } else {
                operands.split(',').map(str::trim).collect()
            };
            let base = mnemonic.split('.').next().unwrap();
            let arity = |n: usize| {
                if args.len() == n {
                    Ok(())
                } else {
                    Err(err(format!("`{base}` takes {n} operand(s), got {}", args.len())))
                }
            };
            let op = match base {
                "const" => {
                    arity(2)?;
                    Pending::Ready(Op::Const {
                        rd: parse_reg(args[0]).map_err(err)?,
                        imm: parse_imm(args[1]).map_err(err)?,
                    })
                }
                "add" | "mul" | "cmp" => {
                    arity(3)?;
                    let rd = parse_reg(args[0]).map_err(err)?;
                    let a = parse_reg(args[1]).map_err(err)?;
                    let b = parse_operand(args[2]).map_err(err)?;
                    Pending::Ready(match base {
                        "add" => Op::Add { rd, a, b },
                        "mul" => Op::Mul { rd, a, b },
                        _ => Op::Cmp { rd, a, b },
                    })
                }
                "load" => {
                    arity(2)?;
                    let rd = parse_reg(args[0]).map_err(err)?;
                    let (base, offset) = parse_mem(args[1]).map_err(err)?;
                    Pending::Ready(Op::Load { rd, base, offset })
                }
                "store" => {
                    arity(2)?;
                    let rs = parse_reg(args[0]).map_err(err)?;
                    let (base, offset) = parse_mem(args[1]).map_err(err)?;
                    Pending::Ready(Op::Store { rs, base, offset })
                }
                "ble" => {
                    arity(2)?;
                    Pending::Branch {
                        rc: Some(parse_reg(args[0]).map_err(err)?),
                        label: args[1].to_string(),
                    }
                }
                "jump" => {
                    arity(1)?;
                    Pending::Branch { rc: None, label: args[0].to_string() }
                }
                "halt" => {
                    arity(0)?;
                    Pending::Ready(Op::Halt)
                }
                "setctx" => {
                    arity(2)?;
                    if !is_label(args[0]) {
                        return Err(err(format!("bad context key `{}`", args[0])));
                    }
                    let value = if args[1].starts_with('r') {
                        CtxValue::Reg(parse_reg(args[1]).map_err(err)?)
                    } else if !args[1].is_empty() && !args[1].contains(char::is_whitespace) {
                        CtxValue::Literal(args[1].to_string())
                    } else {
                        return Err(err(format!("bad context value `{}`", args[1])));
                    };
                    Pending::Ready(Op::SetCtx { key: args[0].to_string(), value })
                }
                other => return Err(err(format!("unknown opcode `{other}`"))),
            };
            pending.push((op, mnemonic.to_string(), line));
        }

        let mut instructions = Vec::with_capacity(pending.len());
        for (op, mnemonic, line) in pending {
            let op = match op {
                Pending::Ready(op) => op,
                Pending::Branch { rc, label } => {
                    let target = *labels.get(&label).ok_or_else(|| ToyError::Parse {
                        line,
                        message: format!("unknown label `{label}`"),
                    })?;
                    match rc {
                        Some(rc) => Op::Ble { rc, target },
                        None => Op::Jump { target },
                    }
                }
            };
            let base = mnemonic.split('.').next().unwrap();
            let class = class_map
                .get(&mnemonic)
                .or_else(|| class_map.get(base))
                .cloned()
                .unwrap_or_else(|| mnemonic.clone());
            instructions.push(ToyInstr { op, mnemonic, class });
        }

        let entry = match entry_label {
            Some((name, line)) => *labels.get(&name).ok_or_else(|| ToyError::Parse {
                line,
                message: format!("unknown entry label `{name}`"),
            })?,
            None => 0,
        };
        Ok(ToyProgram { instructions, labels, entry, class_map })
    }

    pub fn address_of(index: usize) -> u64 {
        CODE_BASE + INSTR_BYTES * index as u64
    }

    /// Address range `[start, end)` of the block starting at `label`, up to
    /// the next label or the end of the program.
    pub fn block_range(&self, label: &str) -> Option<(u64, u64)> {
        let start = *self.labels.get(label)?;
        let end = self
            .labels
            .values()
            .copied()
            .filter(|&i| i > start)
            .min()
            .unwrap_or(self.instructions.len());
        Some((Self::address_of(start), Self::address_of(end)))
    }
}

/// Interpreter state.
#[derive(Debug, Clone, Default)]
pub struct ToyState {
    pub regs: [u64; NUM_REGS],
    pub memory: HashMap<u64, u8>,
    pub pc: usize,
    pub ctx: BTreeMap<String, String>,
    current_ctx: Option<Context>,
}

impl ToyState {
    fn read_word(&self, addr: u64) -> u64 {
        let mut bytes = [0u8; 8];
        for (i, b) in bytes.iter_mut().enumerate() {
            *b = self.memory.get(&addr.wrapping_add(i as u64)).copied().unwrap_or(0);
        }
        u64::from_le_bytes(bytes)
    }

    fn write_word(&mut self, addr: u64, value: u64) {
        for (i, b) in value.to_le_bytes().into_iter().enumerate() {
            self.memory.insert(addr.wrapping_add(i as u64), b);
        }
    }

    fn operand(&self, o: Operand) -> u64 {
        match o {
            Operand::Reg(r) => self.regs[r as usize],
            Operand::Imm(i) => i as u64,
        }
    }
}

fn operand_reads(o: Operand) -> Option<u8> {
    match o {
        Operand::Reg(r) => Some(r),
        Operand::Imm(_) => None,
    }
}

/// Word-sized access at `addr`, moved down if it would wrap the address space.
fn access_at(addr: u64) -> u64 {
    addr.min(u64::MAX - (WORD_BYTES as u64 - 1))
}

/// Runs `program`, passing each executed instruction to `sink` as it
/// retires from the interpreter. Returns the number of instructions emitted.
///
/// Stops at `halt` (which is itself traced) or when execution falls off the
/// end of the program. Exceeding `max_steps` yields `Ok(None)`.
pub fn execute_with<E>(
    program: &ToyProgram,
    max_steps: u64,
    mut sink: impl FnMut(TraceInstruction) -> Result<(), E>,
) -> Result<Option<u64>, E> {
    let mut st = ToyState { pc: program.entry, ..Default::default() };
    let mut seq = 0u64;
    while st.pc < program.instructions.len() {
        if seq >= max_steps {
            return Ok(None);
        }
        let pc = st.pc;
        let instr = &program.instructions[pc];
        let mut t = TraceInstruction::new(seq, ToyProgram::address_of(pc), instr.class.clone());
        t.ctx = st.current_ctx.clone();
        let mut next = pc + 1;
        let mut halt = false;
        match &instr.op {
            Op::Const { rd, imm } => {
                st.regs[*rd as usize] = *imm as u64;
                t.writes.push(reg_name(*rd));
            }
            Op::Add { rd, a, b } | Op::Mul { rd, a, b } | Op::Cmp { rd, a, b } => {
                let x = st.regs[*a as usize];
                let y = st.operand(*b);
                st.regs[*rd as usize] = match &instr.op {
                    Op::Add { .. } => x.wrapping_add(y),
                    Op::Mul { .. } => x.wrapping_mul(y),
                    _ => ((x as i64).cmp(&(y as i64)) as i64) as u64,
                };
                t.reads.push(reg_name(*a));
                t.reads.extend(operand_reads(*b).map(reg_name));
                t.writes.push(reg_name(*rd));
            }
            Op::Load { rd, base, offset } => {
                let addr = access_at(st.regs[*base as usize].wrapping_add(*offset as u64));
                st.regs[*rd as usize] = st.read_word(addr);
                t.reads.push(reg_name(*base));
                t.writes.push(reg_name(*rd));
                t.mem.push(MemoryAccess::load(addr, WORD_BYTES));
            }
            Op::Store { rs, base, offset } => {
                let addr = access_at(st.regs[*base as usize].wrapping_add(*offset as u64));
                st.write_word(addr, st.regs[*rs as usize]);
                t.reads.push(reg_name(*rs));
                t.reads.push(reg_name(*base));
                t.mem.push(MemoryAccess::store(addr, WORD_BYTES));
            }
            Op::Ble { rc, target } => {
                if (st.regs[*rc as usize] as i64) <= 0 {
                    next = *target;
                }
                t.reads.push(reg_name(*rc));
            }
            Op::Jump { target } => next = *target,
            Op::Halt => halt = true,
            Op::SetCtx { key, value } => {
                let v = match value {
                    CtxValue::Literal(s) => s.clone(),
                    CtxValue::Reg(r) => {
                        t.reads.push(reg_name(*r));
                        st.regs[*r as usize].to_string()
                    }
                };
                st.ctx.insert(key.clone(), v.clone());
                st.current_ctx = Some(Context { key: key.clone(), value: v });
            }
        }
        sink(t)?;
        seq += 1;
        if halt {
            break;
        }
        st.pc = next;
    }
    Ok(Some(seq))
}

/// Runs `program` to completion and returns its trace.
pub fn execute(program: &ToyProgram, max_steps: u64) -> Result<Vec<TraceInstruction>, ToyError> {
    let mut trace = Vec::new();
    let done = execute_with(program, max_steps, |t| {
        trace.push(t);
        Ok::<(), std::convert::Infallible>(())
    })
    .unwrap_or_else(|never| match never {});
    match done {
        Some(_) => Ok(trace),
        None => Err(ToyError::Truncated { max_steps, partial: trace }),
    }
}

impl fmt::Display for ToyProgram {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, ins) in self.instructions.iter().enumerate() {
            for (name, _) in self.labels.iter().filter(|(_, &at)| at == i) {
                writeln!(f, "{name}:")?;
            }
            writeln!(f, "    {:#06x}  {:<10} -> {}", Self::address_of(i), ins.mnemonic, ins.class)?;
        }
        Ok(())
    }
}
