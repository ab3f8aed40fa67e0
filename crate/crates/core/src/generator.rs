//! Top-down conditioned random stimulus.
//!
//! A scenario fixes a [`BandPlan`]: clamped input bands force the machine
//! along a known trajectory while constrained-random bands add variety. The
//! machine response inside designated motif bands is then the same for every
//! seed, which is what reasoning questions are anchored to.
//!
//! Serial receiver layout (0-indexed cycles, tail length `t`):
//!
//! | band | cycles  | content                                  |
//! |------|---------|------------------------------------------|
//! | a    | 0..=2   | `110`: idle, idle, start bit             |
//! | b    | 3..=10  | 8 data bits, even popcount               |
//! | c    | 11      | parity bit `1`                           |
//! | d    | 12..=14 | stop bit, idle `1`, start bit `0`        |
//! | e    | 15..=22 | 8 data bits, odd popcount                |
//! | f    | 23      | parity bit `1`                           |
//! | g    | 24      | stop bit                                 |
//! | h    | 25..    | free tail, `t` in 1..=6                  |
//!
//! Motif bands: `k` (11..=13, the `odd` pulse), `i` (13, first verdict),
//! `l` (24..=25, `odd` low), `j` (25, second frame rejected).

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fsm::{counter_machine, serial_receiver_machine, simulate, FsmError, InputSchedule, SerialVariant, StepTrace, TaskMachine};
use crate::seed;
use crate::trace::{Annotation, TimingDiagram, TraceError};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GenError {
    #[error("unknown task `{0}`")]
    UnknownTask(String),
    #[error("task `{task}` has no {scenario} scenario")]
    UnsupportedScenario { task: String, scenario: Scenario },
    #[error("band `{0}` has a parity constraint but length 0")]
    InfeasibleConstraint(String),
    #[error("invalid band plan: {0}")]
    InvalidPlan(String),
    #[error("diagram lacks band annotation `{0}`")]
    MissingAnnotations(String),
    #[error(transparent)]
    Fsm(#[from] FsmError),
    #[error(transparent)]
    Trace(#[from] TraceError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scenario {
    Success,
    Failure,
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scenario::Success => "success",
            Scenario::Failure => "failure",
        })
    }
}

impl FromStr for Scenario {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "success" => Ok(Scenario::Success),
            "failure" => Ok(Scenario::Failure),
            _ => Err(format!("unknown scenario `{s}` (expected success or failure)")),
        }
    }
}

/// Tasks with a machine, a band plan and question templates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    SerialParityStop,
    SerialParityWait,
    WCounter,
}

/// Further task names that are recognized but have no definitions yet.
pub const DECLARED_TASKS: &[&str] = &[
    "serial_datapath_stop",
    "serial_datapath_wait",
    "hdlc_correct",
    "hdlc_discard",
    "hdlc_error",
    "motor_timer_success",
    "motor_timer_failure",
    "complete_fsm",
    "fancy_timer",
    "sync_fifo",
    "async_fifo",
    "spi_no_clk",
    "spi_with_clk",
    "adc",
    "axi_ahb_apb",
];

/// Width of the `w_counter` task's counter.
pub const COUNTER_WIDTH: u32 = 3;

impl Task {
    pub const ALL: [Task; 3] = [Task::SerialParityStop, Task::SerialParityWait, Task::WCounter];

    pub fn name(self) -> &'static str {
        match self {
            Task::SerialParityStop => "serial_parity_stop",
            Task::SerialParityWait => "serial_parity_wait",
            Task::WCounter => "w_counter",
        }
    }

    pub fn scenarios(self) -> &'static [Scenario] {
        match self {
            Task::WCounter => &[Scenario::Success],
            _ => &[Scenario::Success, Scenario::Failure],
        }
    }

    pub fn machine(self) -> TaskMachine {
        match self {
            Task::SerialParityStop => serial_receiver_machine(SerialVariant::Stop),
            Task::SerialParityWait => serial_receiver_machine(SerialVariant::Wait),
            Task::WCounter => counter_machine(COUNTER_WIDTH, Some("en")).expect("valid width"),
        }
    }

    pub fn is_serial(self) -> bool {
        matches!(self, Task::SerialParityStop | Task::SerialParityWait)
    }

    /// The input driven by the band plan.
    pub fn primary_input(self) -> &'static str {
        if self.is_serial() {
            "in"
        } else {
            "en"
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Task {
    type Err = GenError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Task::ALL
            .into_iter()
            .find(|t| t.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| GenError::UnknownTask(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Constraint {
    ParityEven,
    ParityOdd,
    Free,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum BandKind {
    Clamp(Vec<u8>),
    /// Length drawn uniformly from `min_len..=max_len`.
    Random {
        min_len: usize,
        max_len: usize,
        constraint: Constraint,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Band {
    pub label: String,
    pub kind: BandKind,
}

/// A band of machine response, positioned relative to an input band.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MotifBand {
    pub label: String,
    pub anchor: String,
    pub offset: usize,
    pub len: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BandPlan {
    pub task: Task,
    pub scenario: Scenario,
    pub bands: Vec<Band>,
    pub motif_bands: Vec<MotifBand>,
}

/// Expected diagram text for `signal` over every cycle of a band.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MotifSpec {
    pub band: String,
    pub signal: String,
    pub values: Vec<String>,
}

fn clamp(label: &str, bits: &[u8]) -> Band {
    Band {
        label: label.into(),
        kind: BandKind::Clamp(bits.to_vec()),
    }
}

fn random(label: &str, min_len: usize, max_len: usize, constraint: Constraint) -> Band {
    Band {
        label: label.into(),
        kind: BandKind::Random {
            min_len,
            max_len,
            constraint,
        },
    }
}

fn motif(label: &str, anchor: &str, offset: usize, len: usize) -> MotifBand {
    MotifBand {
        label: label.into(),
        anchor: anchor.into(),
        offset,
        len,
    }
}

fn check_scenario(task: Task, scenario: Scenario) -> Result<(), GenError> {
    if task.scenarios().contains(&scenario) {
        Ok(())
    } else {
        Err(GenError::UnsupportedScenario {
            task: task.name().into(),
            scenario,
        })
    }
}

pub fn build_band_plan(task: Task, scenario: Scenario) -> Result<BandPlan, GenError> {
    check_scenario(task, scenario)?;
    let (bands, motif_bands) = if task.is_serial() {
        let stop = u8::from(scenario == Scenario::Success);
        (
            vec![
                clamp("a", &[1, 1, 0]),
                random("b", 8, 8, Constraint::ParityEven),
                clamp("c", &[1]),
                clamp("d", &[stop, 1, 0]),
                random("e", 8, 8, Constraint::ParityOdd),
                clamp("f", &[1]),
                clamp("g", &[stop]),
                random("h", 1, 6, Constraint::Free),
            ],
            vec![motif("k", "c", 0, 3), motif("i", "d", 1, 1), motif("l", "g", 0, 2), motif("j", "g", 1, 1)],
        )
    } else {
        // cycle 0 holds rst; eight enabled cycles then sweep every count
        (
            vec![
                clamp("a", &[0]),
                clamp("b", &[1; 8]),
                random("c", 4, 10, Constraint::Free),
            ],
            vec![motif("k", "b", 7, 2)],
        )
    };
    let plan = BandPlan {
        task,
        scenario,
        bands,
        motif_bands,
    };
    validate_plan(&plan)?;
    Ok(plan)
}

fn validate_plan(plan: &BandPlan) -> Result<(), GenError> {
    let mut labels = std::collections::HashSet::new();
    for l in plan.bands.iter().map(|b| &b.label).chain(plan.motif_bands.iter().map(|m| &m.label)) {
        if !labels.insert(l.as_str()) {
            return Err(GenError::InvalidPlan(format!("duplicate label `{l}`")));
        }
    }
    for b in &plan.bands {
        match &b.kind {
            BandKind::Clamp(bits) if bits.iter().any(|&x| x > 1) => {
                return Err(GenError::InvalidPlan(format!("band `{}` clamps a non-bit", b.label)))
            }
            BandKind::Random { min_len, max_len, .. } if min_len > max_len => {
                return Err(GenError::InvalidPlan(format!("band `{}` has an empty length range", b.label)))
            }
            _ => {}
        }
    }
    for m in &plan.motif_bands {
        if !plan.bands.iter().any(|b| b.label == m.anchor) || m.len == 0 {
            return Err(GenError::InvalidPlan(format!("motif band `{}` is not anchored", m.label)));
        }
    }
    Ok(())
}

/// Realized input bits and the cycle extent of every input band.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RealizedInputs {
    pub bits: Vec<u8>,
    pub bands: Vec<Annotation>,
}

/// Draws `len` bits whose popcount parity is `odd`, uniformly over that set.
fn parity_word<R: Rng>(rng: &mut R, len: usize, odd: bool) -> Vec<u8> {
    let mut v: Vec<u8> = (0..len - 1).map(|_| u8::from(rng.gen::<bool>())).collect();
    let ones = v.iter().filter(|&&b| b == 1).count() % 2 == 1;
    v.push(u8::from(ones != odd));
    v
}

pub fn realize_inputs(plan: &BandPlan, seed: u64) -> Result<RealizedInputs, GenError> {
    validate_plan(plan)?;
    let mut rng = seed::rng(seed);
    let mut bits = Vec::new();
    let mut bands = Vec::new();
    for b in &plan.bands {
        let start = bits.len();
        match &b.kind {
            BandKind::Clamp(c) => bits.extend_from_slice(c),
            BandKind::Random {
                min_len,
                max_len,
                constraint,
            } => {
                let len = rng.gen_range(*min_len..=*max_len);
                match constraint {
                    Constraint::Free => bits.extend((0..len).map(|_| u8::from(rng.gen::<bool>()))),
                    _ if len == 0 => return Err(GenError::InfeasibleConstraint(b.label.clone())),
                    Constraint::ParityEven => bits.extend(parity_word(&mut rng, len, false)),
                    Constraint::ParityOdd => bits.extend(parity_word(&mut rng, len, true)),
                }
            }
        }
        if bits.len() > start {
            bands.push(Annotation {
                label: b.label.clone(),
                start,
                end: bits.len() - 1,
            });
        }
    }
    Ok(RealizedInputs { bits, bands })
}

/// Expected machine response inside the motif bands.
pub fn motif_specs(task: Task, scenario: Scenario) -> Result<Vec<MotifSpec>, GenError> {
    check_scenario(task, scenario)?;
    let spec = |band: &str, signal: &str, values: &[&str]| MotifSpec {
        band: band.into(),
        signal: signal.into(),
        values: values.iter().map(|s| s.to_string()).collect(),
    };
    Ok(if task.is_serial() {
        let (verdict, done, err) = match scenario {
            Scenario::Success => ("S2", "1", "0"),
            Scenario::Failure => ("S3", "0", "1"),
        };
        vec![
            spec("k", "odd", &["0", "1", "0"]),
            spec("i", "state", &[verdict]),
            spec("i", "done", &[done]),
            spec("i", "err", &[err]),
            spec("l", "odd", &["0", "0"]),
            spec("j", "state", &["S3"]),
            spec("j", "err", &["1"]),
            spec("j", "done", &["0"]),
        ]
    } else {
        vec![spec("k", "cnt", &["0x7", "0x0"]), spec("k", "tc", &["1", "0"])]
    })
}

/// One received frame of the serial receiver.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Frame {
    /// Cycle carrying the start bit (state S0, `in` = 0).
    pub start_bit: usize,
    /// Cycle with `data_cnt` = 9; `in` holds the stop bit.
    pub check: usize,
    /// Cycle whose state is the verdict.
    pub verdict: usize,
    pub accepted: bool,
    pub data: u8,
}

/// Everything the reasoning templates need besides the diagram itself.
#[derive(Debug, Clone)]
pub struct GenContext {
    pub task: Task,
    pub scenario: Scenario,
    pub seed: u64,
    pub inputs: Vec<u8>,
    pub input_bands: Vec<Annotation>,
    pub motif_bands: Vec<Annotation>,
    pub frames: Vec<Frame>,
    pub trace: StepTrace,
}

impl GenContext {
    /// Stable identifier of the generated diagram.
    pub fn td_id(&self) -> String {
        format!("{}_{}_{:016x}", self.task, self.scenario, self.seed)
    }

    pub fn band(&self, label: &str) -> Option<&Annotation> {
        self.input_bands.iter().chain(&self.motif_bands).find(|a| a.label == label)
    }
}

fn frames_of(trace: &StepTrace) -> Vec<Frame> {
    let mut out = Vec::new();
    for c in 1..trace.len() {
        if trace.state_name(c) == "S1" && trace.state_name(c - 1) == "S0" {
            let check = (c..trace.len()).find(|&k| trace.state_name(k) == "S1" && trace.value("data_cnt", k) == Some(9));
            if let Some(check) = check.filter(|k| k + 1 < trace.len()) {
                out.push(Frame {
                    start_bit: c - 1,
                    check,
                    verdict: check + 1,
                    accepted: trace.state_name(check + 1) == "S2",
                    data: trace.value("out_byte", check).unwrap_or(0) as u8,
                });
            }
        }
    }
    out
}

/// Full stimulus for the machine given the realized primary input.
fn schedule(task: Task, bits: &[u8]) -> InputSchedule {
    let mut s = BTreeMap::new();
    s.insert(task.primary_input().to_string(), bits.to_vec());
    if task == Task::WCounter {
        let mut rst = vec![0; bits.len()];
        rst[0] = 1;
        s.insert("rst".to_string(), rst);
    }
    s
}

pub fn generate_td(task: Task, scenario: Scenario, seed: u64) -> Result<(TimingDiagram, GenContext), GenError> {
    let plan = build_band_plan(task, scenario)?;
    let realized = realize_inputs(&plan, seed)?;
    let machine = task.machine();
    let n = realized.bits.len();
    let (trace, td) = simulate(&machine, &schedule(task, &realized.bits), n)?;
    let mut motif_bands = Vec::new();
    for m in &plan.motif_bands {
        let anchor = realized
            .bands
            .iter()
            .find(|a| a.label == m.anchor)
            .ok_or_else(|| GenError::InvalidPlan(format!("anchor `{}` realized empty", m.anchor)))?;
        let start = anchor.start + m.offset;
        motif_bands.push(Annotation {
            label: m.label.clone(),
            start,
            end: start + m.len - 1,
        });
    }
    let annotations = realized.bands.iter().chain(&motif_bands).cloned().collect();
    let td = td.with_annotations(annotations)?;
    let frames = if task.is_serial() { frames_of(&trace) } else { vec![] };
    Ok((
        td,
        GenContext {
            task,
            scenario,
            seed,
            inputs: realized.bits,
            input_bands: realized.bands,
            motif_bands,
            frames,
            trace,
        },
    ))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MotifCheck {
    Pass,
    Fail {
        band: String,
        signal: String,
        cycle: usize,
        expected: String,
        got: String,
    },
}

pub fn check_motifs(td: &TimingDiagram, task: Task, scenario: Scenario) -> Result<MotifCheck, GenError> {
    for spec in motif_specs(task, scenario)? {
        let band = td
            .annotation(&spec.band)
            .ok_or_else(|| GenError::MissingAnnotations(spec.band.clone()))?;
        if band.end + 1 - band.start != spec.values.len() {
            return Err(GenError::MissingAnnotations(format!("{} (wrong extent)", spec.band)));
        }
        for (k, want) in spec.values.iter().enumerate() {
            let cycle = band.start + k;
            let got = td.value_at_cycle(&spec.signal, cycle)?.to_string();
            if &got != want {
                return Ok(MotifCheck::Fail {
                    band: spec.band,
                    signal: spec.signal,
                    cycle,
                    expected: want.clone(),
                    got,
                });
            }
        }
    }
    Ok(MotifCheck::Pass)
}
