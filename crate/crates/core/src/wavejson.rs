//! WaveJSON emission, parsing and presentation randomization.
//!
//! Lane grammar: `p`/`n` only as the first character of the clock lane,
//! `0 1 x z` for scalars, `=` for a new bus value (label taken from `data`),
//! `.` to repeat the previous cycle. Buses additionally carry a `width` key,
//! which wavedrom ignores; band markers go under a top-level `bands` key.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::trace::{looks_numeric, Annotation, CycleValue, SignalTrace, TimingDiagram, TraceError, Word};
use crate::vcd::Logic;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum WaveError {
    #[error("lane `{lane}`: unsupported wave character `{ch}` at position {pos}")]
    UnsupportedWaveChar { lane: String, ch: char, pos: usize },
    #[error("lane `{lane}`: {markers} `=` markers but {labels} data labels")]
    DataCountMismatch {
        lane: String,
        markers: usize,
        labels: usize,
    },
    #[error("lane `{lane}` has {got} cycles, expected {expected}")]
    RaggedLanes {
        lane: String,
        expected: usize,
        got: usize,
    },
    #[error("malformed WaveJSON: {0}")]
    Malformed(String),
    #[error(transparent)]
    Trace(#[from] TraceError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WaveLane {
    pub name: String,
    pub wave: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub width: Option<u32>,
}

impl WaveLane {
    pub fn cycles(&self) -> usize {
        self.wave.chars().count()
    }

    pub fn is_clock(&self) -> bool {
        self.wave.starts_with(['p', 'n'])
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WaveDocument {
    pub lanes: Vec<WaveLane>,
    pub hscale: u32,
    pub bands: Vec<Annotation>,
}

impl WaveDocument {
    pub fn num_cycles(&self) -> usize {
        self.lanes.first().map_or(0, WaveLane::cycles)
    }

    pub fn to_json_value(&self) -> Value {
        let mut obj = json!({
            "signal": self.lanes,
            "config": { "hscale": self.hscale },
        });
        if !self.bands.is_empty() {
            obj["bands"] = serde_json::to_value(&self.bands).expect("bands serialize");
        }
        obj
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.to_json_value()).expect("wavejson serialize")
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(&self.to_json_value()).expect("wavejson serialize")
    }

    /// Reads the lanes of a WaveJSON document. Spacer entries (`{}`) are skipped.
    pub fn from_json(text: &str) -> Result<Self, WaveError> {
        let v: Value =
            serde_json::from_str(text).map_err(|e| WaveError::Malformed(e.to_string()))?;
        Self::from_json_value(&v)
    }

    pub fn from_json_value(v: &Value) -> Result<Self, WaveError> {
        let signal = v
            .get("signal")
            .and_then(Value::as_array)
            .ok_or_else(|| WaveError::Malformed("missing \"signal\" array".into()))?;
        let mut lanes = Vec::new();
        for entry in signal {
            let obj = entry.as_object().ok_or_else(|| {
                WaveError::Malformed("lane groups (nested arrays) are not supported".into())
            })?;
            let Some(wave) = obj.get("wave") else {
                continue;
            };
            let wave = wave
                .as_str()
                .ok_or_else(|| WaveError::Malformed("\"wave\" must be a string".into()))?;
            let name = obj
                .get("name")
                .and_then(Value::as_str)
                .unwrap_or_default()
                .to_string();
            let data = match obj.get("data") {
                None | Some(Value::Null) => None,
                Some(Value::String(s)) => Some(s.split_whitespace().map(str::to_string).collect()),
                Some(Value::Array(items)) => Some(
                    items
                        .iter()
                        .map(|i| match i {
                            Value::String(s) => s.clone(),
                            other => other.to_string(),
                        })
                        .collect(),
                ),
                Some(_) => return Err(WaveError::Malformed(format!("lane `{name}`: bad \"data\""))),
            };
            let width = match obj.get("width") {
                None => None,
                Some(w) => Some(
                    w.as_u64()
                        .filter(|&w| (2..=64).contains(&w))
                        .ok_or_else(|| WaveError::Malformed(format!("lane `{name}`: bad \"width\"")))?
                        as u32,
                ),
            };
            lanes.push(WaveLane {
                name,
                wave: wave.to_string(),
                data,
                width,
            });
        }
        let hscale = v
            .pointer("/config/hscale")
            .and_then(Value::as_u64)
            .filter(|&h| h > 0)
            .unwrap_or(1) as u32;
        let bands = match v.get("bands") {
            None => Vec::new(),
            Some(b) => serde_json::from_value(b.clone())
                .map_err(|e| WaveError::Malformed(format!("bad \"bands\": {e}")))?,
        };
        Ok(WaveDocument { lanes, hscale, bands })
    }

    /// Decodes the lanes into a validated diagram.
    pub fn to_diagram(&self) -> Result<TimingDiagram, WaveError> {
        let expected = self.num_cycles();
        let mut signals = Vec::with_capacity(self.lanes.len() + 1);
        let mut clock: Option<String> = None;
        for lane in &self.lanes {
            if lane.cycles() != expected {
                return Err(WaveError::RaggedLanes {
                    lane: lane.name.clone(),
                    expected,
                    got: lane.cycles(),
                });
            }
            let trace = decode_lane(lane)?;
            if clock.is_none() && lane.is_clock() {
                clock = Some(lane.name.clone());
            }
            signals.push(trace);
        }
        if expected == 0 {
            return Err(WaveError::Malformed("document has no cycles".into()));
        }
        let clock = match clock {
            Some(c) => c,
            None => {
                // Abstract diagrams sometimes omit the clock; add the implicit one.
                let name = ["clk", "CLK", "clk_implicit"]
                    .into_iter()
                    .find(|n| signals.iter().all(|s| s.name != *n))
                    .unwrap_or("clk_implicit")
                    .to_string();
                signals.insert(0, SignalTrace::scalar(name.clone(), &vec![1; expected]));
                name
            }
        };
        Ok(TimingDiagram::new(signals, clock, self.bands.clone())?)
    }
}

fn decode_lane(lane: &WaveLane) -> Result<SignalTrace, WaveError> {
    let unsupported = |ch, pos| WaveError::UnsupportedWaveChar {
        lane: lane.name.clone(),
        ch,
        pos,
    };
    let chars: Vec<char> = lane.wave.chars().collect();
    if let Some(&c @ ('p' | 'n')) = chars.first() {
        if let Some(pos) = chars.iter().skip(1).position(|&c| c != '.') {
            return Err(unsupported(chars[pos + 1], pos + 1));
        }
        // Clock lanes decode to their post-edge level; only the first one
        // becomes the diagram clock.
        let level = u8::from(c == 'p');
        return Ok(SignalTrace::scalar(lane.name.clone(), &vec![level; chars.len()]));
    }
    let markers = chars.iter().filter(|&&c| c == '=').count();
    let labels = lane.data.as_ref().map_or(0, Vec::len);
    if markers != labels {
        return Err(WaveError::DataCountMismatch {
            lane: lane.name.clone(),
            markers,
            labels,
        });
    }
    let is_bus = markers > 0 || lane.width.is_some();
    let mut data = lane.data.iter().flatten();
    let mut samples: Vec<CycleValue> = Vec::with_capacity(chars.len());
    for (pos, &c) in chars.iter().enumerate() {
        let v = match c {
            '.' => match samples.last() {
                Some(prev) => prev.clone(),
                None => return Err(unsupported('.', 0)),
            },
            '=' => CycleValue::Word(parse_label(data.next().expect("counted"))),
            '0' | '1' | 'x' | 'z' if !is_bus => CycleValue::Bit(Logic::from_char(c).unwrap()),
            'x' => CycleValue::Word(Word::Unknown),
            'z' => CycleValue::Word(Word::HighZ),
            _ => return Err(unsupported(c, pos)),
        };
        samples.push(v);
    }
    let width = if is_bus {
        let needed = samples
            .iter()
            .filter_map(|v| match v {
                CycleValue::Word(Word::Num(n)) => Some(64 - n.leading_zeros()),
                _ => None,
            })
            .max()
            .unwrap_or(0);
        match lane.width {
            Some(w) if w >= needed => w,
            Some(w) => {
                return Err(WaveError::Malformed(format!(
                    "lane `{}`: value needs {needed} bits but width is {w}",
                    lane.name
                )))
            }
            None => needed.max(2),
        }
    } else {
        1
    };
    Ok(SignalTrace::new(lane.name.clone(), width, samples))
}

fn parse_label(label: &str) -> Word {
    if let Some(hex) = label.strip_prefix("0x").or_else(|| label.strip_prefix("0X")) {
        if let Ok(n) = u64::from_str_radix(hex, 16) {
            return Word::Num(n);
        }
    }
    match label {
        "x" | "X" => Word::Unknown,
        "z" | "Z" => Word::HighZ,
        "0" => Word::Num(0),
        "1" => Word::Num(1),
        s if looks_numeric(s) => Word::Unknown,
        s => Word::Symbol(s.to_string()),
    }
}

/// Encodes a diagram as WaveJSON lanes, one per signal, in signal order.
pub fn emit_wavejson(td: &TimingDiagram) -> WaveDocument {
    let lanes = td
        .signals()
        .iter()
        .map(|s| {
            if s.name == td.clock_name() {
                let first = if s.samples[0] == CycleValue::bit(true) { 'p' } else { 'n' };
                let wave = std::iter::once(first)
                    .chain(std::iter::repeat_n('.', s.samples.len() - 1))
                    .collect();
                return WaveLane {
                    name: s.name.clone(),
                    wave,
                    data: None,
                    width: None,
                };
            }
            let mut wave = String::with_capacity(s.samples.len());
            let mut data = Vec::new();
            let mut prev: Option<&CycleValue> = None;
            for v in &s.samples {
                if prev == Some(v) {
                    wave.push('.');
                } else {
                    match v {
                        CycleValue::Bit(b) => wave.push(b.as_char()),
                        CycleValue::Word(Word::Unknown) => wave.push('x'),
                        CycleValue::Word(Word::HighZ) => wave.push('z'),
                        CycleValue::Word(_) => {
                            wave.push('=');
                            data.push(v.to_string());
                        }
                    }
                }
                prev = Some(v);
            }
            WaveLane {
                name: s.name.clone(),
                wave,
                data: (!data.is_empty()).then_some(data),
                width: (s.width > 1).then_some(s.width),
            }
        })
        .collect();
    WaveDocument {
        lanes,
        hscale: 1,
        bands: td.annotations().to_vec(),
    }
}

/// Parses WaveJSON text straight into a diagram.
pub fn parse_wavejson(text: &str) -> Result<TimingDiagram, WaveError> {
    WaveDocument::from_json(text)?.to_diagram()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct PresentationOptions {
    pub shuffle_lanes: bool,
    /// Upper bound on idle cycles appended to every lane.
    pub max_pad: usize,
    pub flip_case: bool,
}

impl Default for PresentationOptions {
    fn default() -> Self {
        PresentationOptions {
            shuffle_lanes: true,
            max_pad: 2,
            flip_case: true,
        }
    }
}

impl PresentationOptions {
    pub fn off() -> Self {
        PresentationOptions {
            shuffle_lanes: false,
            max_pad: 0,
            flip_case: false,
        }
    }
}

/// Varies how a diagram looks without changing what it says: non-clock lanes
/// are permuted, `k ∈ [0, max_pad]` hold cycles are appended, and lane names
/// are upper- or lower-cased. Names are left alone if case changes would make
/// two of them collide.
pub fn randomize_presentation(doc: &WaveDocument, seed: u64, opts: &PresentationOptions) -> WaveDocument {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = doc.clone();
    if opts.shuffle_lanes {
        let clock = out.lanes.iter().position(WaveLane::is_clock);
        let mut movable: Vec<usize> = (0..out.lanes.len()).filter(|&i| Some(i) != clock).collect();
        let mut order = movable.clone();
        order.shuffle(&mut rng);
        let original = out.lanes.clone();
        for (slot, src) in movable.drain(..).zip(order) {
            out.lanes[slot] = original[src].clone();
        }
    }
    if opts.max_pad > 0 && out.num_cycles() > 0 {
        let k = rng.gen_range(0..=opts.max_pad);
        for lane in &mut out.lanes {
            lane.wave.extend(std::iter::repeat_n('.', k));
        }
    }
    if opts.flip_case {
        let flipped: Vec<String> = out
            .lanes
            .iter()
            .map(|l| {
                if rng.gen_bool(0.5) {
                    l.name.to_uppercase()
                } else {
                    l.name.to_lowercase()
                }
            })
            .collect();
        let mut uniq = flipped.clone();
        uniq.sort();
        uniq.dedup();
        if uniq.len() == flipped.len() {
            for (lane, name) in out.lanes.iter_mut().zip(flipped) {
                lane.name = name;
            }
        }
    }
    out
}
