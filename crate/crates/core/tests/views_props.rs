mod common;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tpsim::pipeline::simulate;
use tpsim::views::{browser_trace, render_timeline, summarize, timeline_glyphs, Ratio, SummaryStats, ViewError};
use tpsim::{Pipeline, PipelineConfig};

use common::{random_trace, test_model, GenOptions};

/// Checks one glyph row against the D (=)* (e)* E (-)* R state machine.
fn check_row(glyphs: &str, d: u64, i: u64, x: u64, r: u64, latency: u32) -> Result<(), String> {
    let g: Vec<char> = glyphs.chars().collect();
    let count = |c: char| g.iter().filter(|&&x| x == c).count();
    if (count('D'), count('E'), count('R')) != (1, 1, 1) {
        return Err(format!("markers in `{glyphs}`"));
    }
    if g.get(d as usize) != Some(&'D') || g.get(x as usize) != Some(&'E') || g.get(r as usize) != Some(&'R') {
        return Err(format!("marker positions in `{glyphs}`"));
    }
    if count('e') + count('E') != latency as usize {
        return Err(format!("latency {latency} vs `{glyphs}`"));
    }
    let active: String = g[d as usize..=r as usize].iter().collect();
    let expect = format!(
        "D{}{}E{}R",
        "=".repeat((i - d - 1) as usize),
        "e".repeat((x - i) as usize),
        "-".repeat((r - x - 1) as usize)
    );
    if active != expect {
        return Err(format!("`{active}` != `{expect}`"));
    }
    if g[..d as usize].iter().chain(&g[r as usize + 1..]).any(|c| !matches!(c, ' ' | '.')) {
        return Err(format!("stray glyphs in `{glyphs}`"));
    }
    Ok(())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn glyphs_reconcile_with_timestamps(seed in any::<u64>(), variant in 0usize..4, lo in 0u64..100, len in 1u64..60) {
        let model = test_model(variant);
        let trace = random_trace(&mut ChaCha8Rng::seed_from_u64(seed), 160, GenOptions::default());
        let config = PipelineConfig { record: Some(lo..lo + len), ..Default::default() };
        let run = simulate(model, config, trace).unwrap();
        prop_assert_eq!(run.retired.len() as u64, len.min(160u64.saturating_sub(lo)));
        let Some(origin) = run.retired.iter().map(|r| r.dispatched_at).min() else { return Ok(()); };
        let last = run.retired.iter().map(|r| r.retired_at).max().unwrap() - origin;
        for r in &run.retired {
            let glyphs = timeline_glyphs(r, origin, last);
            prop_assert_eq!(glyphs.chars().count() as u64, last + 1);
            let (d, i, x, rt) = (r.dispatched_at - origin, r.issued_at - origin, r.executed_at - origin, r.retired_at - origin);
            if let Err(e) = check_row(&glyphs, d, i, x, rt, r.latency) {
                return Err(TestCaseError::fail(format!("seq {}: {e}", r.seq)));
            }
        }
        let text = render_timeline(&run.retired, lo..lo + len);
        prop_assert_eq!(text.lines().count(), run.retired.len());
        for (line, r) in text.lines().zip(&run.retired) {
            let tag = format!("[{},{}]", r.iteration, r.position);
            prop_assert!(line.starts_with(&tag));
            prop_assert!(line.trim_end().ends_with(&r.class));
        }
    }

    #[test]
    fn summarize_is_pure(seed in any::<u64>(), variant in 0usize..4) {
        let model = test_model(variant);
        let trace = random_trace(&mut ChaCha8Rng::seed_from_u64(seed), 120, GenOptions::default());
        let run = simulate(model, PipelineConfig::default(), trace).unwrap();
        let a = summarize(&run).unwrap();
        let b = summarize(&run.clone()).unwrap();
        prop_assert_eq!(a.to_string(), b.to_string());
        prop_assert_eq!(&a, &b);
        prop_assert_eq!(a.instructions, run.instructions);
        prop_assert_eq!(a.ipc, Ratio::new(run.instructions, run.total_cycles));
        // the bound can never exceed the simulated cycle count
        prop_assert!(a.block_rthroughput.to_f64() <= run.total_cycles as f64);
    }

    #[test]
    fn browser_events_match_rows(seed in any::<u64>()) {
        let model = test_model(0);
        let trace = random_trace(&mut ChaCha8Rng::seed_from_u64(seed), 80, GenOptions::default());
        let run = simulate(model, PipelineConfig::default().record_all(), trace).unwrap();
        let events = browser_trace(&run.retired);
        let events = events.as_array().unwrap();
        prop_assert_eq!(events.len(), run.retired.len());
        let mut lanes: std::collections::BTreeMap<u64, Vec<(u64, u64)>> = Default::default();
        for e in events {
            let seq = e["args"]["seq"].as_u64().unwrap();
            let r = &run.retired[seq as usize];
            prop_assert_eq!(e["ph"].as_str(), Some("X"));
            prop_assert_eq!(e["ts"].as_u64(), Some(r.dispatched_at));
            prop_assert_eq!(e["dur"].as_u64(), Some(r.retired_at - r.dispatched_at));
            lanes.entry(e["tid"].as_u64().unwrap()).or_default().push((r.dispatched_at, r.retired_at));
        }
        for spans in lanes.values_mut() {
            spans.sort();
            for w in spans.windows(2) {
                prop_assert!(w[0].1 <= w[1].0, "overlapping events in one lane");
            }
        }
    }

    #[test]
    fn ratio_rendering_is_half_up(num in 0u64..10_000_000, den in 1u64..10_000) {
        let r = Ratio::new(num, den);
        let two: f64 = r.render(2).parse().unwrap();
        // exact: floor(num * 100 / den + 1/2)
        let expect = (2 * num as u128 * 100 + den as u128) / (2 * den as u128);
        prop_assert_eq!((two * 100.0).round() as u128, expect);
        prop_assert_eq!(r.render(2).split('.').nth(1).map(str::len), Some(2));
    }
}

#[test]
fn summary_layout() {
    let s = SummaryStats::from_counters(
        1200,
        10_303,
        2100,
        4,
        &[("P0".to_string(), 1000, 1), ("P1".to_string(), 300, 2)],
    );
    let expected = "\
Instructions:      1200
Total Cycles:      10303
Total uOps:        2100
Dispatch Width:    4
uOps Per Cycle:    0.20
IPC:               0.12
Block RThroughput: 1000.0
";
    assert_eq!(s.to_string(), expected);
    let tied = SummaryStats::from_counters(1, 8, 1, 4, &[]);
    assert_eq!(tied.ipc.render(2), "0.13");
    assert_eq!(tied.block_rthroughput.render(1), "0.3");
}

#[test]
fn undrained_runs_cannot_be_summarized() {
    let model = test_model(0);
    let mut p = Pipeline::new(model, PipelineConfig::default());
    let mut batch = vec![tpsim::TraceInstruction::new(0, 0x1000, "div")];
    p.feed(&mut batch).unwrap();
    p.run_cycle();
    assert_eq!(summarize(&p.result()), Err(ViewError::Undrained));
    p.drain();
    assert!(summarize(&p.result()).is_ok());
}
