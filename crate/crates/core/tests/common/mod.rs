//! Seeded random inputs and brute-force oracles shared by the test targets.
#![allow(dead_code)]

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use tdvqa::trace::Word;
use tdvqa::vcd::{Timescale, VarDecl, VarKind, VcdEvent};
use tdvqa::{Annotation, CycleValue, Edge, Logic, LogicValue, SignalTrace, TimingDiagram, VcdDocument};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn logic(r: &mut ChaCha8Rng) -> Logic {
    match r.gen_range(0..10) {
        0 => Logic::Unknown,
        1 => Logic::HighZ,
        k if k < 6 => Logic::Zero,
        _ => Logic::One,
    }
}

fn value(r: &mut ChaCha8Rng, width: u32) -> LogicValue {
    match r.gen_range(0..8) {
        0 => LogicValue(vec![Logic::HighZ; width as usize]),
        1 => LogicValue(vec![Logic::Unknown; width as usize]),
        _ => LogicValue((0..width).map(|_| logic(r)).collect()),
    }
}

/// A random dump: a clock `!` toggling with jitter and glitches, plus up
/// to five variables changing at arbitrary, possibly shared, timestamps.
pub fn random_vcd(seed: u64) -> VcdDocument {
    let mut r = rng(seed);
    let n_vars = r.gen_range(1..=5);
    let mut decls = vec![VarDecl {
        id_code: "!".into(),
        reference_name: "tb.clk".into(),
        width: 1,
        kind: VarKind::Wire,
        aliases: vec![],
    }];
    for i in 0..n_vars {
        decls.push(VarDecl {
            id_code: char::from(b'#' + i as u8).to_string(),
            reference_name: format!("tb.dut.s{i}"),
            width: if r.gen_bool(0.5) { 1 } else { r.gen_range(2..=16) },
            kind: if r.gen_bool(0.5) { VarKind::Wire } else { VarKind::Reg },
            aliases: vec![],
        });
    }
    let mut events = Vec::new();
    let mut t = 0u64;
    let mut clk = Logic::Zero;
    let steps = r.gen_range(2..40);
    for _ in 0..steps {
        events.push(VcdEvent {
            time: t,
            id: "!".into(),
            value: LogicValue::scalar(clk),
        });
        if r.gen_bool(0.1) {
            // glitch at the same timestamp; the settled value is what counts
            events.push(VcdEvent {
                time: t,
                id: "!".into(),
                value: LogicValue::scalar(if clk == Logic::One { Logic::Zero } else { Logic::One }),
            });
            events.push(VcdEvent {
                time: t,
                id: "!".into(),
                value: LogicValue::scalar(clk),
            });
        }
        for d in &decls[1..] {
            if r.gen_bool(0.4) {
                events.push(VcdEvent {
                    time: t,
                    id: d.id_code.clone(),
                    value: value(&mut r, d.width),
                });
            }
        }
        let half = r.gen_range(1..=6);
        for d in &decls[1..] {
            if r.gen_bool(0.2) {
                events.push(VcdEvent {
                    time: t + r.gen_range(0..half),
                    id: d.id_code.clone(),
                    value: value(&mut r, d.width),
                });
            }
        }
        events.sort_by_key(|e| e.time);
        t += half;
        clk = if clk == Logic::One { Logic::Zero } else { Logic::One };
    }
    events.sort_by_key(|e| e.time);
    VcdDocument::new(Timescale::default(), decls, events, t).unwrap()
}

/// Linear scan over every event: last value of `id` at or before `t`.
pub fn scan_value(doc: &VcdDocument, id: &str, t: u64) -> LogicValue {
    let width = doc.declarations.iter().find(|d| d.id_code == id).unwrap().width;
    doc.events
        .iter()
        .filter(|e| e.id == id && e.time <= t)
        .last()
        .map_or_else(|| LogicValue::unknown(width), |e| e.value.clone())
}

/// Edge times by brute force: the clock's settled value at every distinct
/// timestamp, compared with the settled value before it.
pub fn scan_edges(doc: &VcdDocument, clock_id: &str, edge: Edge) -> Vec<u64> {
    let mut times: Vec<u64> = doc.events.iter().filter(|e| e.id == clock_id).map(|e| e.time).collect();
    times.dedup();
    let (from, to) = match edge {
        Edge::Rising => (Logic::Zero, Logic::One),
        Edge::Falling => (Logic::One, Logic::Zero),
    };
    let mut prev = Logic::Unknown;
    let mut out = Vec::new();
    for t in times {
        let now = scan_value(doc, clock_id, t).0[0];
        if prev == from && now == to {
            out.push(t);
        }
        prev = now;
    }
    out
}

/// The cycle value a sampled logic vector should display as.
pub fn expected_cycle_value(v: &LogicValue) -> CycleValue {
    if v.0.len() == 1 {
        return CycleValue::Bit(v.0[0]);
    }
    if v.0.iter().all(|b| matches!(b, Logic::Zero | Logic::One)) {
        let n = v.0.iter().fold(0u64, |acc, b| (acc << 1) | u64::from(*b == Logic::One));
        return CycleValue::num(n);
    }
    if v.0.iter().all(|b| *b == Logic::HighZ) {
        return CycleValue::Word(Word::HighZ);
    }
    CycleValue::Word(Word::Unknown)
}

const SYMBOLS: [&str; 5] = ["S0", "S1", "IDLE", "RUN", "WAIT_ACK"];

/// A random diagram with scalar and bus lanes, X/Z values, symbolic buses
/// and bands.
pub fn random_diagram(seed: u64) -> TimingDiagram {
    let mut r = rng(seed);
    let n = r.gen_range(1..=40);
    let mut signals = vec![SignalTrace::new("clk", 1, vec![CycleValue::bit(true); n])];
    for i in 0..r.gen_range(1..=6) {
        let kind = r.gen_range(0..3);
        let width = if kind == 0 { 1 } else { r.gen_range(2..=32) };
        let mut samples = Vec::with_capacity(n);
        let mut prev: Option<CycleValue> = None;
        for _ in 0..n {
            if let Some(p) = prev.as_ref().filter(|_| r.gen_bool(0.4)) {
                samples.push(p.clone());
                continue;
            }
            let v = match kind {
                0 => CycleValue::Bit(logic(&mut r)),
                1 => match r.gen_range(0..10) {
                    0 => CycleValue::Word(Word::Unknown),
                    1 => CycleValue::Word(Word::HighZ),
                    _ => CycleValue::num(r.gen_range(0..(1u64 << width))),
                },
                _ => CycleValue::symbol(*SYMBOLS.choose(&mut r).unwrap()),
            };
            prev = Some(v.clone());
            samples.push(v);
        }
        signals.push(SignalTrace::new(format!("sig_{i}"), width, samples));
    }
    let mut bands = Vec::new();
    for (k, label) in ["a", "b", "k"].iter().enumerate() {
        if r.gen_bool(0.5) {
            let start = r.gen_range(0..n);
            let end = r.gen_range(start..n);
            bands.push(Annotation {
                label: format!("{label}{k}"),
                start,
                end,
            });
        }
    }
    TimingDiagram::new(signals, "clk", bands).unwrap()
}
