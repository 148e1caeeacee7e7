//! Text and browser renderings of a finished run.

use std::fmt;
use std::io::{self, Write};
use std::ops::Range;

use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::pipeline::{RetiredInstr, RunResult};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ViewError {
    #[error("run has not drained; summary would be incomplete")]
    Undrained,
}

/// Exact non-negative rational; a zero denominator reads as zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ratio {
    pub num: u64,
    pub den: u64,
}

impl Ratio {
    pub fn new(num: u64, den: u64) -> Self {
        Ratio { num, den }
    }

    pub fn to_f64(self) -> f64 {
        if self.den == 0 {
            0.0
        } else {
            self.num as f64 / self.den as f64
        }
    }

    /// Decimal rendering with `places` digits, rounded half-up.
    pub fn render(self, places: u32) -> String {
        let scale = 10u128.pow(places);
        let scaled = if self.den == 0 {
            0
        } else {
            let (n, d) = (self.num as u128, self.den as u128);
            (2 * n * scale + d) / (2 * d)
        };
        if places == 0 {
            return scaled.to_string();
        }
        format!("{}.{:0width$}", scaled / scale, scaled % scale, width = places as usize)
    }

    fn max(self, other: Ratio) -> Ratio {
        // a/b < c/d  <=>  a*d < c*b
        if (self.num as u128) * (other.den as u128) < (other.num as u128) * (self.den as u128) {
            other
        } else {
            self
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SummaryStats {
    pub instructions: u64,
    pub total_cycles: u64,
    pub total_uops: u64,
    pub dispatch_width: u32,
    pub uops_per_cycle: Ratio,
    pub ipc: Ratio,
    /// Whole-trace bound: the larger of dispatch pressure and the busiest
    /// resource's occupancy per unit.
    pub block_rthroughput: Ratio,
}

impl SummaryStats {
    /// `pressure` lists (resource, occupancy cycles, units).
    pub fn from_counters(
        instructions: u64,
        total_cycles: u64,
        total_uops: u64,
        dispatch_width: u32,
        pressure: &[(String, u64, u32)],
    ) -> Self {
        let block_rthroughput = pressure
            .iter()
            .map(|(_, busy, units)| Ratio::new(*busy, *units as u64))
            .fold(Ratio::new(total_uops, dispatch_width as u64), Ratio::max);
        SummaryStats {
            instructions,
            total_cycles,
            total_uops,
            dispatch_width,
            uops_per_cycle: Ratio::new(total_uops, total_cycles),
            ipc: Ratio::new(instructions, total_cycles),
            block_rthroughput,
        }
    }
}

pub fn summarize(run: &RunResult) -> Result<SummaryStats, ViewError> {
    if !run.drained {
        return Err(ViewError::Undrained);
    }
    Ok(SummaryStats::from_counters(
        run.instructions,
        run.total_cycles,
        run.total_uops,
        run.dispatch_width,
        &run.resource_pressure,
    ))
}

impl fmt::Display for SummaryStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let rows = [
            ("Instructions:", self.instructions.to_string()),
            ("Total Cycles:", self.total_cycles.to_string()),
            ("Total uOps:", self.total_uops.to_string()),
            ("Dispatch Width:", self.dispatch_width.to_string()),
            ("uOps Per Cycle:", self.uops_per_cycle.render(2)),
            ("IPC:", self.ipc.render(2)),
            ("Block RThroughput:", self.block_rthroughput.render(1)),
        ];
        for (label, value) in rows {
            writeln!(f, "{label:<19}{value}")?;
        }
        Ok(())
    }
}

/// Glyphs for one instruction, columns relative to `origin`, padded out to
/// `last` (inclusive). Idle columns show '.' every fifth cycle and on the
/// final column, blank otherwise.
pub fn timeline_glyphs(r: &RetiredInstr, origin: u64, last: u64) -> String {
    let idle = |c: u64| if c.is_multiple_of(5) || c == last { '.' } else { ' ' };
    let (d, i, x, rt) = (
        r.dispatched_at - origin,
        r.issued_at - origin,
        r.executed_at - origin,
        r.retired_at - origin,
    );
    let mut s = String::with_capacity(last as usize + 1);
    s.extend((0..d).map(idle));
    s.push('D');
    s.extend((d + 1..i).map(|_| '='));
    s.extend((i.max(d + 1)..x).map(|_| 'e'));
    if x > d {
        s.push('E');
    }
    s.extend((x + 1..rt).map(|_| '-'));
    s.push('R');
    s.extend((rt + 1..=last).map(idle));
    s
}

fn timeline_with_origin(rows: &[&RetiredInstr], origin: u64) -> String {
    let Some(last) = rows.iter().map(|r| r.retired_at - origin).max() else {
        return String::new();
    };
    let mut out = String::new();
    for r in rows {
        let tag = format!("[{},{}]", r.iteration, r.position);
        out.push_str(&format!("{tag:<10}{}   {}\n", timeline_glyphs(r, origin, last), r.class));
    }
    out
}

/// Timeline rows for every retired instruction whose seq falls in `window`,
/// aligned to the earliest dispatch among them.
pub fn render_timeline(retired: &[RetiredInstr], window: Range<u64>) -> String {
    let rows: Vec<&RetiredInstr> = retired.iter().filter(|r| window.contains(&r.seq)).collect();
    let origin = rows.iter().map(|r| r.dispatched_at).min().unwrap_or(0);
    timeline_with_origin(&rows, origin)
}

/// Like [`render_timeline`] but with an explicit cycle origin, for rows that
/// continue an earlier rendering.
pub fn render_timeline_from(retired: &[RetiredInstr], window: Range<u64>, origin: u64) -> String {
    let rows: Vec<&RetiredInstr> = retired
        .iter()
        .filter(|r| window.contains(&r.seq) && r.dispatched_at >= origin)
        .collect();
    timeline_with_origin(&rows, origin)
}

/// Trace-event document (array form). Cycles are presented as microseconds;
/// events are spread over lanes so none overlap within a lane.
pub fn browser_trace(retired: &[RetiredInstr]) -> serde_json::Value {
    let mut order: Vec<&RetiredInstr> = retired.iter().collect();
    order.sort_by_key(|r| (r.dispatched_at, r.seq));
    let mut lane_free_at: Vec<u64> = Vec::new();
    let events: Vec<_> = order
        .into_iter()
        .map(|r| {
            let lane = match lane_free_at.iter().position(|&t| t <= r.dispatched_at) {
                Some(l) => l,
                None => {
                    lane_free_at.push(0);
                    lane_free_at.len() - 1
                }
            };
            lane_free_at[lane] = r.retired_at;
            json!({
                "name": r.class,
                "cat": "instruction",
                "ph": "X",
                "ts": r.dispatched_at,
                "dur": r.retired_at - r.dispatched_at,
                "pid": 1,
                "tid": lane + 1,
                "args": {
                    "seq": r.seq,
                    "addr": format!("{:#x}", r.addr),
                    "iteration": r.iteration,
                    "position": r.position,
                    "issued_at": r.issued_at,
                    "executed_at": r.executed_at,
                    "retired_at": r.retired_at,
                    "latency": r.latency,
                    "uops": r.uops,
                },
            })
        })
        .collect();
    serde_json::Value::Array(events)
}

pub fn export_browser_trace(retired: &[RetiredInstr], mut sink: impl Write) -> io::Result<()> {
    serde_json::to_writer(&mut sink, &browser_trace(retired))?;
    sink.write_all(b"\n")?;
    sink.flush()
}
