//! Cycle-sampled timing diagrams and the analytic queries over them.
//!
//! Cycles are 0-indexed here. Question text uses 1-indexed cycles; that
//! conversion happens only in the QA modules.

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::vcd::{Logic, LogicValue, VcdDocument, VcdError};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TraceError {
    #[error("unknown signal `{0}`")]
    UnknownSignal(String),
    #[error("cycle {cycle} out of range (diagram has {num_cycles} cycles)")]
    IndexOutOfRange { cycle: usize, num_cycles: usize },
    #[error("signal `{0}` is not a scalar")]
    NotScalar(String),
    #[error("clock `{0}` has no edges of the requested kind")]
    NoClockEdges(String),
    #[error("invalid diagram: {0}")]
    Invalid(String),
    #[error("signal `{name}` is {width} bits wide; at most 64 are supported")]
    TooWide { name: String, width: u32 },
    #[error(transparent)]
    Vcd(#[from] VcdError),
}

/// The value of a bus during one cycle.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Word {
    Num(u64),
    Unknown,
    HighZ,
    /// A named value such as an FSM state (`S1`), displayed verbatim.
    Symbol(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum CycleValue {
    Bit(Logic),
    Word(Word),
}

impl CycleValue {
    pub fn bit(b: bool) -> Self {
        CycleValue::Bit(Logic::from(b))
    }

    pub fn num(n: u64) -> Self {
        CycleValue::Word(Word::Num(n))
    }

    pub fn symbol(s: impl Into<String>) -> Self {
        CycleValue::Word(Word::Symbol(s.into()))
    }

    pub fn as_logic(&self) -> Option<Logic> {
        match self {
            CycleValue::Bit(b) => Some(*b),
            CycleValue::Word(_) => None,
        }
    }
}

/// Text used on the diagram and in answers: `0`/`1`/`x`/`z` for bits,
/// `0x3C`-style hex for numeric words, symbols verbatim.
impl fmt::Display for CycleValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CycleValue::Bit(b) => write!(f, "{}", b.as_char()),
            CycleValue::Word(Word::Num(n)) => write!(f, "0x{n:X}"),
            CycleValue::Word(Word::Unknown) => f.write_str("x"),
            CycleValue::Word(Word::HighZ) => f.write_str("z"),
            CycleValue::Word(Word::Symbol(s)) => f.write_str(s),
        }
    }
}

/// True when `s` would be read back as a hex word or a bit value.
pub(crate) fn looks_numeric(s: &str) -> bool {
    matches!(s, "x" | "z" | "0" | "1")
        || s.strip_prefix("0x")
            .or_else(|| s.strip_prefix("0X"))
            .is_some_and(|h| !h.is_empty() && h.chars().all(|c| c.is_ascii_hexdigit()))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SignalTrace {
    pub name: String,
    pub width: u32,
    pub samples: Vec<CycleValue>,
}

impl SignalTrace {
    pub fn new(name: impl Into<String>, width: u32, samples: Vec<CycleValue>) -> Self {
        SignalTrace {
            name: name.into(),
            width,
            samples,
        }
    }

    pub fn scalar(name: impl Into<String>, bits: &[u8]) -> Self {
        Self::new(
            name,
            1,
            bits.iter().map(|&b| CycleValue::bit(b != 0)).collect(),
        )
    }

    pub fn is_scalar(&self) -> bool {
        self.width == 1
    }
}

/// An inclusive cycle range with a label, e.g. a stimulus band.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Annotation {
    pub label: String,
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TimingDiagram {
    signals: Vec<SignalTrace>,
    clock_name: String,
    num_cycles: usize,
    annotations: Vec<Annotation>,
}

impl TimingDiagram {
    /// Validates and builds a diagram. The clock must be one of the signals: a
    /// scalar holding a constant defined level (its post-edge sample).
    pub fn new(
        signals: Vec<SignalTrace>,
        clock_name: impl Into<String>,
        annotations: Vec<Annotation>,
    ) -> Result<Self, TraceError> {
        let clock_name = clock_name.into();
        let num_cycles = signals.first().map_or(0, |s| s.samples.len());
        if num_cycles == 0 {
            return Err(TraceError::Invalid("diagram has no cycles".into()));
        }
        let mut seen = HashSet::new();
        for s in &signals {
            if s.name.is_empty() || !seen.insert(s.name.as_str()) {
                return Err(TraceError::Invalid(format!(
                    "empty or duplicate signal name `{}`",
                    s.name
                )));
            }
            if s.samples.len() != num_cycles {
                return Err(TraceError::Invalid(format!(
                    "signal `{}` has {} samples, expected {num_cycles}",
                    s.name,
                    s.samples.len()
                )));
            }
            if s.width == 0 || s.width > 64 {
                return Err(TraceError::TooWide {
                    name: s.name.clone(),
                    width: s.width,
                });
            }
            for v in &s.samples {
                let ok = match (s.width, v) {
                    (1, CycleValue::Bit(_)) => true,
                    (w, CycleValue::Word(Word::Num(n))) if w > 1 => w == 64 || *n < (1u64 << w),
                    (w, CycleValue::Word(Word::Symbol(sym))) if w > 1 => {
                        !sym.is_empty() && !looks_numeric(sym)
                    }
                    (w, CycleValue::Word(_)) => w > 1,
                    _ => false,
                };
                if !ok {
                    return Err(TraceError::Invalid(format!(
                        "value {v} inconsistent with width {} of `{}`",
                        s.width, s.name
                    )));
                }
            }
        }
        let clock = signals
            .iter()
            .find(|s| s.name == clock_name)
            .ok_or_else(|| TraceError::UnknownSignal(clock_name.clone()))?;
        let level = clock.samples[0].as_logic();
        if !clock.is_scalar()
            || !level.is_some_and(Logic::is_defined)
            || clock.samples.iter().any(|v| v.as_logic() != level)
        {
            return Err(TraceError::Invalid(format!(
                "clock `{clock_name}` must be a constant 0/1 scalar when sampled on its edges"
            )));
        }
        for a in &annotations {
            if a.start > a.end || a.end >= num_cycles {
                return Err(TraceError::Invalid(format!(
                    "annotation `{}` [{}, {}] outside {num_cycles} cycles",
                    a.label, a.start, a.end
                )));
            }
        }
        Ok(TimingDiagram {
            signals,
            clock_name,
            num_cycles,
            annotations,
        })
    }

    pub fn signals(&self) -> &[SignalTrace] {
        &self.signals
    }

    pub fn clock_name(&self) -> &str {
        &self.clock_name
    }

    pub fn num_cycles(&self) -> usize {
        self.num_cycles
    }

    pub fn annotations(&self) -> &[Annotation] {
        &self.annotations
    }

    pub fn annotation(&self, label: &str) -> Option<&Annotation> {
        self.annotations.iter().find(|a| a.label == label)
    }

    pub fn signal(&self, name: &str) -> Result<&SignalTrace, TraceError> {
        self.signals
            .iter()
            .find(|s| s.name == name)
            .ok_or_else(|| TraceError::UnknownSignal(name.to_string()))
    }

    /// Signals other than the clock.
    pub fn data_signals(&self) -> impl Iterator<Item = &SignalTrace> {
        self.signals.iter().filter(move |s| s.name != self.clock_name)
    }

    pub fn value_at_cycle(&self, signal: &str, cycle: usize) -> Result<&CycleValue, TraceError> {
        let s = self.signal(signal)?;
        s.samples.get(cycle).ok_or(TraceError::IndexOutOfRange {
            cycle,
            num_cycles: self.num_cycles,
        })
    }

    pub fn value_sequence(&self, signal: &str) -> Result<&[CycleValue], TraceError> {
        Ok(&self.signal(signal)?.samples)
    }

    fn scalar_pairs(&self, signal: &str) -> Result<Vec<(Logic, Logic)>, TraceError> {
        let s = self.signal(signal)?;
        if !s.is_scalar() {
            return Err(TraceError::NotScalar(signal.to_string()));
        }
        Ok(s.samples
            .windows(2)
            .filter_map(|w| Some((w[0].as_logic()?, w[1].as_logic()?)))
            .collect())
    }

    /// Adjacent pairs with differing defined values; pairs touching x/z are ignored.
    pub fn count_transitions(&self, signal: &str) -> Result<usize, TraceError> {
        Ok(self
            .scalar_pairs(signal)?
            .into_iter()
            .filter(|(a, b)| a.is_defined() && b.is_defined() && a != b)
            .count())
    }

    pub fn count_rising_edges(&self, signal: &str) -> Result<usize, TraceError> {
        Ok(self
            .scalar_pairs(signal)?
            .into_iter()
            .filter(|p| *p == (Logic::Zero, Logic::One))
            .count())
    }

    pub fn count_falling_edges(&self, signal: &str) -> Result<usize, TraceError> {
        Ok(self
            .scalar_pairs(signal)?
            .into_iter()
            .filter(|p| *p == (Logic::One, Logic::Zero))
            .count())
    }

    /// Returns a copy with different annotations.
    pub fn with_annotations(&self, annotations: Vec<Annotation>) -> Result<Self, TraceError> {
        TimingDiagram::new(self.signals.clone(), self.clock_name.clone(), annotations)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Edge {
    #[default]
    Rising,
    Falling,
}

fn to_cycle_value(v: &LogicValue, name: &str) -> Result<CycleValue, TraceError> {
    let w = v.width();
    if w == 1 {
        return Ok(CycleValue::Bit(v.bits()[0]));
    }
    if w > 64 {
        return Err(TraceError::TooWide {
            name: name.to_string(),
            width: w,
        });
    }
    Ok(CycleValue::Word(match v.to_u64() {
        Some(n) => Word::Num(n),
        None if v.bits().iter().all(|&b| b == Logic::HighZ) => Word::HighZ,
        None => Word::Unknown,
    }))
}

/// Samples every variable of `doc` right after each requested edge of `clock`.
///
/// Cycle `n` holds the value once all changes at the timestamp of the n-th edge
/// have been applied. Signals are named by leaf name when it is unique within
/// the document and by full hierarchical name otherwise.
pub fn sample_to_diagram(
    doc: &VcdDocument,
    clock: &str,
    edge: Edge,
) -> Result<TimingDiagram, TraceError> {
    let clk = doc
        .find_var(clock)
        .ok_or_else(|| TraceError::UnknownSignal(clock.to_string()))?;
    if clk.width != 1 {
        return Err(TraceError::NotScalar(clock.to_string()));
    }
    let (from, to) = match edge {
        Edge::Rising => (Logic::Zero, Logic::One),
        Edge::Falling => (Logic::One, Logic::Zero),
    };
    let mut edges = Vec::new();
    let mut prev = Logic::Unknown;
    let mut changes = doc.changes_of(&clk.id_code)?.peekable();
    while let Some(ev) = changes.next() {
        // Only the settled value at each timestamp counts.
        if changes.peek().is_some_and(|n| n.time == ev.time) {
            continue;
        }
        let now = ev.value.bits()[0];
        if prev == from && now == to {
            edges.push(ev.time);
        }
        prev = now;
    }
    if edges.is_empty() {
        return Err(TraceError::NoClockEdges(clock.to_string()));
    }

    let leaf_count = |leaf: &str| {
        doc.declarations
            .iter()
            .filter(|d| d.leaf_name() == leaf)
            .count()
    };
    let mut signals = Vec::with_capacity(doc.declarations.len());
    let mut clock_name = String::new();
    for d in &doc.declarations {
        let name = if leaf_count(d.leaf_name()) == 1 {
            d.leaf_name().to_string()
        } else {
            d.reference_name.clone()
        };
        let mut samples = Vec::with_capacity(edges.len());
        let list: Vec<_> = doc.changes_of(&d.id_code)?.collect();
        let mut k = 0;
        let mut current = LogicValue::unknown(d.width);
        for &t in &edges {
            while k < list.len() && list[k].time <= t {
                current = list[k].value.clone();
                k += 1;
            }
            samples.push(to_cycle_value(&current, &name)?);
        }
        if d.id_code == clk.id_code {
            clock_name = name.clone();
        }
        signals.push(SignalTrace {
            name,
            width: d.width,
            samples,
        });
    }
    TimingDiagram::new(signals, clock_name, Vec::new())
}
