//! Shared fixtures: test models, random trace and toy program generators.
#![allow(dead_code)]

pub mod reference;

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::Rng;
use tpsim::model::{InstrClass, ResourceDesc, ResourceUse};
use tpsim::trace::{MemoryAccess, TraceInstruction};
use tpsim::MachineModel;

pub const CFL_MODEL: &str = include_str!("../../../../samples/cfl-toy.json");
pub const CONTENTION_L0: &str = include_str!("../../../../samples/contention_l0.toy");
pub const CONTENTION_L1: &str = include_str!("../../../../samples/contention_l1.toy");

fn class(name: &str, latency: u32, uops: u32, uses: &[(&str, u32)]) -> InstrClass {
    InstrClass {
        name: name.into(),
        latency,
        num_uops: uops,
        resource_usage: uses
            .iter()
            .map(|(r, c)| ResourceUse { resource: r.to_string(), cycles: *c })
            .collect(),
        may_load: false,
        may_store: false,
        is_branch: false,
        context_latency_key: None,
    }
}

/// (dispatch, retire, rob, lq, sq) for each test model variant.
pub const VARIANTS: [(u32, u32, u32, u32, u32); 4] =
    [(4, 4, 32, 8, 8), (2, 1, 8, 2, 2), (3, 2, 12, 3, 2), (6, 6, 64, 16, 16)];

/// Classes are named after the toy opcodes, plus a few extra shapes reached
/// through `.map` suffixes: `wide` (more uops than most dispatch widths),
/// `div` (holds its unit for several cycles), `rmw` and the context-keyed
/// `vadd`.
pub fn test_model(variant: usize) -> Arc<MachineModel> {
    let (w, rw, rob, lq, sq) = VARIANTS[variant % VARIANTS.len()];
    let resources = vec![
        ResourceDesc { name: "ALU".into(), units: 2 },
        ResourceDesc { name: "MUL".into(), units: 1 },
        ResourceDesc { name: "LSU".into(), units: 2 },
        ResourceDesc { name: "VEC".into(), units: 1 },
    ];
    let mut load = class("load", 4, 1, &[("LSU", 1)]);
    load.may_load = true;
    let mut store = class("store", 1, 2, &[("LSU", 1)]);
    store.may_store = true;
    let mut rmw = class("rmw", 5, 3, &[("LSU", 1), ("ALU", 1)]);
    rmw.may_load = true;
    rmw.may_store = true;
    let mut vadd = class("vadd", 4, 1, &[("VEC", 1)]);
    vadd.context_latency_key = Some("lmul".into());
    let mut ble = class("ble", 1, 1, &[("ALU", 1)]);
    ble.is_branch = true;
    let classes = vec![
        class("const", 1, 1, &[("ALU", 1)]),
        class("add", 1, 1, &[("ALU", 1)]),
        class("cmp", 1, 1, &[("ALU", 1)]),
        class("mul", 3, 1, &[("MUL", 1)]),
        class("div", 8, 2, &[("MUL", 3)]),
        class("wide", 2, 5, &[("ALU", 1), ("ALU", 1)]),
        load,
        store,
        rmw,
        vadd,
        ble,
        class("jump", 1, 1, &[]),
        class("halt", 1, 1, &[]),
        class("setctx", 1, 1, &[]),
    ];
    let tables = BTreeMap::from([(
        "lmul".to_string(),
        BTreeMap::from([
            ("1".to_string(), 4),
            ("2".to_string(), 8),
            ("4".to_string(), 16),
            ("8".to_string(), 2),
        ]),
    )]);
    Arc::new(MachineModel::new("test", w, rw, rob, lq, sq, resources, classes, tables).unwrap())
}

pub fn cfl_model() -> Arc<MachineModel> {
    Arc::new(tpsim::load_model(CFL_MODEL).unwrap())
}

#[derive(Debug, Clone, Copy)]
pub struct GenOptions {
    /// Probability that a memory op carries no address metadata.
    pub strip_mem: f64,
    /// Number of distinct 4-byte address slots; fewer means more overlap.
    pub addr_slots: u64,
    /// Relative weight of memory operations.
    pub mem_weight: u32,
}

impl Default for GenOptions {
    fn default() -> Self {
        GenOptions { strip_mem: 0.1, addr_slots: 6, mem_weight: 3 }
    }
}

const REGS: [&str; 6] = ["r0", "r1", "r2", "r3", "r4", "r5"];

/// Random trace over the test model's classes: short register names make
/// RAW chains common, few address slots make memory conflicts common.
pub fn random_trace(rng: &mut impl Rng, n: usize, opts: GenOptions) -> Vec<TraceInstruction> {
    let mut weighted: Vec<&str> = vec!["const", "add", "add", "cmp", "mul", "mul", "div", "wide", "vadd", "vadd", "ble", "jump"];
    for _ in 0..opts.mem_weight {
        weighted.extend(["load", "store", "rmw"]);
    }
    (0..n as u64)
        .map(|seq| {
            let class = *weighted.choose(rng).unwrap();
            let mut t = TraceInstruction::new(seq, 0x1000 + 4 * seq, class);
            let nreads = if class == "const" { 0 } else { rng.gen_range(0..=2) };
            t = t.reads((0..nreads).map(|_| *REGS.choose(rng).unwrap()));
            if !matches!(class, "store" | "ble" | "jump") && rng.gen_bool(0.8) {
                t = t.writes([*REGS.choose(rng).unwrap()]);
            }
            let addr = |rng: &mut dyn rand::RngCore| 0x8000 + 4 * rng.gen_range(0..opts.addr_slots);
            let size = |rng: &mut dyn rand::RngCore| if rng.gen_bool(0.5) { 4 } else { 8 };
            match class {
                "load" => t = t.with_mem(MemoryAccess::load(addr(rng), size(rng))),
                "store" => t = t.with_mem(MemoryAccess::store(addr(rng), size(rng))),
                "rmw" => {
                    let (a, s) = (addr(rng), size(rng));
                    t = t.with_mem(MemoryAccess::load(a, s)).with_mem(MemoryAccess::store(a, s));
                }
                _ => {}
            }
            if !t.mem.is_empty() && rng.gen_bool(opts.strip_mem) {
                t.mem.clear();
            }
            if class == "vadd" && rng.gen_bool(0.8) || rng.gen_bool(0.05) {
                let v = *["1", "2", "4", "8"].choose(rng).unwrap();
                t = t.with_ctx("lmul", v);
            }
            t
        })
        .collect()
}

/// A random loop-shaped toy program for the test model. Runs forever; cut
/// it with a step budget.
pub fn random_toy_program(rng: &mut impl Rng) -> String {
    let mut s = String::from(
        ".map mul.w wide\n.map mul.d div\n.map add.v vadd\n\
         const r1, 0x4000\nconst r2, 3\nconst r3, 5\nconst r9, 1\nloop:\n",
    );
    let body = rng.gen_range(2..12);
    let reg = |rng: &mut dyn rand::RngCore| format!("r{}", rng.gen_range(2..8));
    for _ in 0..body {
        let line = match rng.gen_range(0..10) {
            0 => format!("add {}, {}, {}", reg(rng), reg(rng), reg(rng)),
            1 => format!("add {}, {}, {}", reg(rng), reg(rng), rng.gen_range(-4..5)),
            2 => format!("mul {}, {}, {}", reg(rng), reg(rng), reg(rng)),
            3 => format!("mul.{} {}, {}, {}", ["w", "d"][rng.gen_range(0..2)], reg(rng), reg(rng), reg(rng)),
            4 => format!("add.v {}, {}, {}", reg(rng), reg(rng), reg(rng)),
            5 => format!("load {}, [r1+{}]", reg(rng), 4 * rng.gen_range(0..6)),
            6 => format!("store {}, [r1+{}]", reg(rng), 4 * rng.gen_range(0..6)),
            7 => format!("setctx lmul, {}", ["1", "2", "4", "8"][rng.gen_range(0..4)]),
            8 => "add r1, r1, 8".to_string(),
            _ => format!("cmp {}, {}, {}", reg(rng), reg(rng), reg(rng)),
        };
        s.push_str(&line);
        s.push('\n');
    }
    s.push_str("ble r0, loop\njump loop\n");
    s
}

/// Trace of `n` instructions from a random toy program.
pub fn random_toy_trace(rng: &mut impl Rng, n: u64) -> Vec<TraceInstruction> {
    let program = tpsim::toy::ToyProgram::parse(&random_toy_program(rng)).unwrap();
    match tpsim::toy::execute(&program, n) {
        Err(tpsim::toy::ToyError::Truncated { partial, .. }) => partial,
        other => panic!("loop program terminated: {other:?}"),
    }
}

/// Deterministic periodic trace: a 16-instruction kernel with a long
/// multiply chain, loads, stores and a divide bottleneck.
pub fn synthetic_trace(n: u64) -> Vec<TraceInstruction> {
    const KERNEL: [(&str, &[&str], &[&str]); 16] = [
        ("load", &["r1"], &["r2"]),
        ("mul", &["r2", "r3"], &["r3"]),
        ("add", &["r3"], &["r4"]),
        ("div", &["r4", "r5"], &["r5"]),
        ("store", &["r4", "r1"], &[]),
        ("add", &["r1"], &["r1"]),
        ("cmp", &["r1", "r6"], &["r7"]),
        ("vadd", &["r8", "r8"], &["r8"]),
        ("const", &[], &["r6"]),
        ("mul", &["r6", "r6"], &["r9"]),
        ("load", &["r1"], &["r10"]),
        ("add", &["r10", "r9"], &["r11"]),
        ("wide", &["r11"], &["r12"]),
        ("store", &["r12", "r1"], &[]),
        ("add", &["r2"], &["r13"]),
        ("ble", &["r7"], &[]),
    ];
    (0..n)
        .map(|seq| {
            let (class, reads, writes) = KERNEL[(seq % 16) as usize];
            let iter = seq / 16;
            let mut t = TraceInstruction::new(seq, 0x1000 + 4 * (seq % 16), class)
                .reads(reads.iter().copied())
                .writes(writes.iter().copied());
            let base = 0x10_0000 + 64 * (iter % 1024);
            match class {
                "load" => t = t.with_mem(MemoryAccess::load(base + 8 * (seq % 3), 8)),
                "store" => t = t.with_mem(MemoryAccess::store(base + 8 * (seq % 5), 8)),
                "vadd" => t = t.with_ctx("lmul", if iter % 2 == 0 { "1" } else { "2" }),
                _ => {}
            }
            t
        })
        .collect()
}
