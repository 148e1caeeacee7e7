//! Naive cycle-stepping reference simulator.
//!
//! Holds the whole trace in memory, never recycles anything and re-derives
//! every decision from timestamps each cycle:
//!
//! 1. retire: up to retire_width oldest instructions with executed_at < c
//! 2. complete: implicit; executed_at = issued_at + latency - 1
//! 3. issue: dispatched_at < c, every producer executed_at < c, free resource
//!    units, and no older conflicting memory op with executed_at >= c (or
//!    unissued). Oldest first.
//! 4. wake: implicit in the `< c` comparisons above
//! 5. dispatch: in order, up to dispatch_width uops, bounded by ROB and LQ/SQ
//!    occupancy; an instruction wider than the dispatch width starts a fresh
//!    cycle and blocks dispatch for ceil(uops / width) - 1 more cycles.

use tpsim::model::MachineModel;
use tpsim::trace::{AccessKind, MemoryAccess, TraceInstruction};
use tpsim::AliasPolicy;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RefTimes {
    pub dispatched: u64,
    pub issued: u64,
    pub executed: u64,
    pub retired: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RefRun {
    pub total_cycles: u64,
    pub times: Vec<RefTimes>,
}

struct Ins<'a> {
    t: &'a TraceInstruction,
    latency: u64,
    uops: u64,
    is_load: bool,
    is_store: bool,
    claims: Vec<(usize, u64)>,
    deps: Vec<usize>,
    d: Option<u64>,
    i: Option<u64>,
    x: Option<u64>,
    r: Option<u64>,
}

fn overlap(a: &MemoryAccess, b: &MemoryAccess) -> bool {
    let (a0, a1) = (a.address as u128, a.address as u128 + a.size as u128);
    let (b0, b1) = (b.address as u128, b.address as u128 + b.size as u128);
    a0 < b1 && b0 < a1
}

fn conflict(policy: AliasPolicy, cand: &Ins, ck: AccessKind, older: &Ins, ok: AccessKind) -> bool {
    match policy {
        AliasPolicy::NoAlias => false,
        AliasPolicy::AllAlias => true,
        AliasPolicy::MetadataExact => {
            if cand.t.mem.is_empty() || older.t.mem.is_empty() {
                return true;
            }
            cand.t.mem.iter().filter(|a| a.kind == ck).any(|a| {
                older.t.mem.iter().filter(|b| b.kind == ok).any(|b| overlap(a, b))
            })
        }
    }
}

pub fn reference(model: &MachineModel, policy: AliasPolicy, trace: &[TraceInstruction]) -> RefRun {
    let mut ins: Vec<Ins> = trace
        .iter()
        .map(|t| {
            let class = model.classes.iter().find(|c| c.name == t.class).expect("known class");
            let latency = match (&class.context_latency_key, &t.ctx) {
                (Some(key), Some(ctx)) if *key == ctx.key => {
                    model.context_latency_tables[key][&ctx.value] as u64
                }
                _ => class.latency as u64,
            };
            let (is_load, is_store) = if t.mem.is_empty() {
                (class.may_load, class.may_store)
            } else {
                (
                    t.mem.iter().any(|m| m.kind == AccessKind::Load),
                    t.mem.iter().any(|m| m.kind == AccessKind::Store),
                )
            };
            let claims = class
                .resource_usage
                .iter()
                .map(|u| {
                    let idx = model.resources.iter().position(|r| r.name == u.resource).unwrap();
                    (idx, u.cycles as u64)
                })
                .collect();
            Ins {
                t,
                latency,
                uops: class.num_uops as u64,
                is_load,
                is_store,
                claims,
                deps: Vec::new(),
                d: None,
                i: None,
                x: None,
                r: None,
            }
        })
        .collect();

    let n = ins.len();
    let width = model.dispatch_width as u64;
    let mut busy: Vec<Vec<u64>> = model.resources.iter().map(|r| vec![0; r.units as usize]).collect();
    let mut head = 0usize; // oldest unretired
    let mut next = 0usize; // next to dispatch
    let mut stall = 0u64;
    let mut c = 0u64;
    let guard = 1_000 + 200 * n as u64;

    while head < n {
        assert!(c < guard, "reference simulator stuck at cycle {c}");

        // 1. retire
        let mut k = 0;
        while k < model.retire_width && head < next && ins[head].x.is_some_and(|x| x < c) {
            ins[head].r = Some(c);
            head += 1;
            k += 1;
        }

        // 3. issue
        for j in head..next {
            if ins[j].i.is_some() || ins[j].d.unwrap() >= c {
                continue;
            }
            if !ins[j].deps.iter().all(|&p| ins[p].x.is_some_and(|x| x < c)) {
                continue;
            }
            let mut chosen: Vec<(usize, usize)> = Vec::new();
            let mut ok = true;
            for &(res, _) in &ins[j].claims {
                let unit = (0..busy[res].len())
                    .find(|&u| busy[res][u] <= c && !chosen.contains(&(res, u)));
                match unit {
                    Some(u) => chosen.push((res, u)),
                    None => {
                        ok = false;
                        break;
                    }
                }
            }
            if !ok {
                continue;
            }
            if ins[j].is_load || ins[j].is_store {
                let pending = |k: usize| !ins[k].x.is_some_and(|x| x < c);
                let blocked = (head..j).any(|k| {
                    let older = &ins[k];
                    let cand = &ins[j];
                    pending(k)
                        && ((cand.is_load
                            && older.is_store
                            && conflict(policy, cand, AccessKind::Load, older, AccessKind::Store))
                            || (cand.is_store
                                && older.is_store
                                && conflict(policy, cand, AccessKind::Store, older, AccessKind::Store))
                            || (cand.is_store
                                && older.is_load
                                && conflict(policy, cand, AccessKind::Store, older, AccessKind::Load)))
                });
                if blocked {
                    continue;
                }
            }
            for (&(res, cycles), &(_, u)) in ins[j].claims.iter().zip(&chosen) {
                busy[res][u] = c + cycles;
            }
            ins[j].i = Some(c);
            ins[j].x = Some(c + ins[j].latency - 1);
        }

        // 5. dispatch
        if stall > 0 {
            stall -= 1;
        } else {
            let mut budget = width;
            while next < n {
                if (next - head) as u64 >= model.reorder_buffer_size as u64 {
                    break;
                }
                let loads = (head..next).filter(|&k| ins[k].is_load).count() as u32;
                let stores = (head..next).filter(|&k| ins[k].is_store).count() as u32;
                if (ins[next].is_load && loads >= model.load_queue_size)
                    || (ins[next].is_store && stores >= model.store_queue_size)
                {
                    break;
                }
                let uops = ins[next].uops;
                if uops > width {
                    if budget != width {
                        break;
                    }
                    stall = uops.div_ceil(width) - 1;
                    budget = 0;
                } else if uops <= budget {
                    budget -= uops;
                } else {
                    break;
                }
                // producers that have not executed by now are dependencies
                let mut deps = Vec::new();
                for reg in &ins[next].t.reads {
                    let producer = (0..next).rev().find(|&k| ins[k].t.writes.contains(reg));
                    if let Some(p) = producer {
                        if !ins[p].x.is_some_and(|x| x <= c) && !deps.contains(&p) {
                            deps.push(p);
                        }
                    }
                }
                ins[next].deps = deps;
                ins[next].d = Some(c);
                next += 1;
                if budget == 0 {
                    break;
                }
            }
        }
        c += 1;
    }

    RefRun {
        total_cycles: ins.last().and_then(|l| l.r).map_or(0, |r| r + 1),
        times: ins
            .iter()
            .map(|i| RefTimes {
                dispatched: i.d.unwrap(),
                issued: i.i.unwrap(),
                executed: i.x.unwrap(),
                retired: i.r.unwrap(),
            })
            .collect(),
    }
}
