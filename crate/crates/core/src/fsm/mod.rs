//! Synchronous Moore machines with a small register datapath.
//!
//! Each cycle the engine evaluates, from the sampled state, registers and the
//! current inputs: the next state (first matching transition, else stay),
//! every register's next value (first matching update, else hold) and the
//! outputs. State and registers take their new values at the following edge.

pub mod expr;
mod machines;

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::trace::{CycleValue, SignalTrace, TimingDiagram, TraceError};
pub use expr::Expr;
pub use machines::{counter_machine, serial_receiver_machine, SerialVariant};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FsmError {
    #[error("expression error: {0}")]
    Expr(String),
    #[error("invalid machine: {0}")]
    InvalidMachine(String),
    #[error("input `{input}` has {got} cycles scheduled, {needed} needed")]
    IncompleteSchedule { input: String, got: usize, needed: usize },
    #[error("schedule names `{0}`, which is not an input of the machine")]
    UnknownInput(String),
    #[error("input `{input}` at cycle {cycle} is {value}; inputs are single bits")]
    InputOutOfRange { input: String, cycle: usize, value: u64 },
    #[error(transparent)]
    Trace(#[from] TraceError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GuardedValue {
    pub when: String,
    pub value: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegisterDef {
    pub name: String,
    pub width: u32,
    #[serde(default)]
    pub reset: u64,
    #[serde(default)]
    pub updates: Vec<GuardedValue>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransitionDef {
    pub from: String,
    #[serde(default = "always")]
    pub when: String,
    pub to: String,
}

fn always() -> String {
    "1".into()
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MooreOutputDef {
    pub name: String,
    #[serde(default = "one")]
    pub width: u32,
    /// Per-state values; states not listed output 0.
    pub values: BTreeMap<String, u64>,
}

fn one() -> u32 {
    1
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CombOutputDef {
    pub name: String,
    #[serde(default = "one")]
    pub width: u32,
    pub expr: String,
}

/// The JSON form of a machine.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MachineDef {
    pub name: String,
    #[serde(default)]
    pub description: String,
    pub states: Vec<String>,
    pub initial_state: String,
    pub inputs: Vec<String>,
    #[serde(default)]
    pub registers: Vec<RegisterDef>,
    #[serde(default)]
    pub transitions: Vec<TransitionDef>,
    #[serde(default)]
    pub moore_outputs: Vec<MooreOutputDef>,
    #[serde(default)]
    pub comb_outputs: Vec<CombOutputDef>,
    /// Whether the diagram shows the `state` and `next_state` lanes.
    #[serde(default = "yes")]
    pub show_state: bool,
}

#[derive(Debug, Clone)]
struct Transition {
    from: usize,
    when: Expr,
    to: usize,
}

#[derive(Debug, Clone)]
struct Register {
    name: String,
    width: u32,
    reset: u64,
    updates: Vec<(Expr, Expr)>,
}

/// A validated machine with resolved expressions. Slot layout for
/// expressions: `[state, inputs.., registers..]`.
#[derive(Debug, Clone)]
pub struct TaskMachine {
    def: MachineDef,
    initial: usize,
    transitions: Vec<Transition>,
    registers: Vec<Register>,
    moore: Vec<(String, u32, Vec<u64>)>,
    comb: Vec<(String, u32, Expr)>,
}

pub const CLOCK: &str = "clk";
pub const STATE: &str = "state";
pub const NEXT_STATE: &str = "next_state";

fn mask(width: u32) -> u64 {
    if width >= 64 {
        u64::MAX
    } else {
        (1u64 << width) - 1
    }
}

fn invalid(msg: impl Into<String>) -> FsmError {
    FsmError::InvalidMachine(msg.into())
}

impl TaskMachine {
    pub fn from_def(def: MachineDef) -> Result<Self, FsmError> {
        if def.states.is_empty() {
            return Err(invalid("no states"));
        }
        let mut names: HashSet<&str> = [CLOCK, STATE, NEXT_STATE].into_iter().collect();
        for n in def
            .inputs
            .iter()
            .chain(def.registers.iter().map(|r| &r.name))
            .chain(def.moore_outputs.iter().map(|o| &o.name))
            .chain(def.comb_outputs.iter().map(|o| &o.name))
        {
            if !is_ident(n) || !names.insert(n) {
                return Err(invalid(format!("signal name `{n}` is invalid, reserved or duplicated")));
            }
        }
        let mut state_set = HashSet::new();
        for s in &def.states {
            if !is_ident(s) || names.contains(s.as_str()) || !state_set.insert(s.as_str()) {
                return Err(invalid(format!("state name `{s}` is invalid or clashes")));
            }
            if crate::trace::looks_numeric(s) {
                return Err(invalid(format!("state name `{s}` reads as a number")));
            }
        }
        let state_index = |s: &str| def.states.iter().position(|x| x == s);
        let initial = state_index(&def.initial_state)
            .ok_or_else(|| invalid(format!("initial state `{}` is not declared", def.initial_state)))?;

        let n_in = def.inputs.len();
        let lookup = |name: &str| -> Option<Expr> {
            if name == STATE {
                return Some(Expr::Slot(0));
            }
            if let Some(i) = def.inputs.iter().position(|x| x == name) {
                return Some(Expr::Slot(1 + i));
            }
            if let Some(i) = def.registers.iter().position(|r| r.name == name) {
                return Some(Expr::Slot(1 + n_in + i));
            }
            state_index(name).map(|i| Expr::Num(i as u64))
        };
        let compile = |src: &str| Expr::parse(src)?.resolve(&lookup);

        let mut transitions = Vec::new();
        for t in &def.transitions {
            let from = state_index(&t.from).ok_or_else(|| invalid(format!("unknown state `{}`", t.from)))?;
            let to = state_index(&t.to).ok_or_else(|| invalid(format!("unknown state `{}`", t.to)))?;
            transitions.push(Transition {
                from,
                when: compile(&t.when)?,
                to,
            });
        }
        let mut registers = Vec::new();
        for r in &def.registers {
            if r.width == 0 || r.width > 64 {
                return Err(invalid(format!("register `{}` width {} outside 1..=64", r.name, r.width)));
            }
            if r.reset & !mask(r.width) != 0 {
                return Err(invalid(format!("register `{}` reset does not fit its width", r.name)));
            }
            let updates = r
                .updates
                .iter()
                .map(|u| Ok((compile(&u.when)?, compile(&u.value)?)))
                .collect::<Result<_, FsmError>>()?;
            registers.push(Register {
                name: r.name.clone(),
                width: r.width,
                reset: r.reset,
                updates,
            });
        }
        let mut moore = Vec::new();
        for o in &def.moore_outputs {
            check_width(&o.name, o.width)?;
            let mut values = vec![0; def.states.len()];
            for (s, v) in &o.values {
                let i = state_index(s).ok_or_else(|| invalid(format!("unknown state `{s}`")))?;
                if v & !mask(o.width) != 0 {
                    return Err(invalid(format!("output `{}` value {v} does not fit its width", o.name)));
                }
                values[i] = *v;
            }
            moore.push((o.name.clone(), o.width, values));
        }
        let mut comb = Vec::new();
        for o in &def.comb_outputs {
            check_width(&o.name, o.width)?;
            comb.push((o.name.clone(), o.width, compile(&o.expr)?));
        }
        Ok(TaskMachine {
            initial,
            transitions,
            registers,
            moore,
            comb,
            def,
        })
    }

    pub fn from_json(text: &str) -> Result<Self, FsmError> {
        let def: MachineDef = serde_json::from_str(text).map_err(|e| invalid(e.to_string()))?;
        Self::from_def(def)
    }

    pub fn def(&self) -> &MachineDef {
        &self.def
    }

    pub fn name(&self) -> &str {
        &self.def.name
    }

    pub fn state_names(&self) -> &[String] {
        &self.def.states
    }

    pub fn initial_state(&self) -> &str {
        &self.def.states[self.initial]
    }

    pub fn inputs(&self) -> &[String] {
        &self.def.inputs
    }

    pub fn register_names(&self) -> Vec<&str> {
        self.registers.iter().map(|r| r.name.as_str()).collect()
    }

    pub fn register_width(&self, name: &str) -> Option<u32> {
        self.registers.iter().find(|r| r.name == name).map(|r| r.width)
    }

    pub fn output_names(&self) -> Vec<&str> {
        self.moore
            .iter()
            .map(|o| o.0.as_str())
            .chain(self.comb.iter().map(|o| o.0.as_str()))
            .collect()
    }

    /// One combinational evaluation: (next state, next registers, outputs).
    fn eval(&self, slots: &[u64]) -> (usize, Vec<u64>, Vec<u64>) {
        let state = slots[0] as usize;
        let next_state = self
            .transitions
            .iter()
            .find(|t| t.from == state && t.when.eval(slots) != 0)
            .map_or(state, |t| t.to);
        let n_in = self.def.inputs.len();
        let next_regs = self
            .registers
            .iter()
            .enumerate()
            .map(|(i, r)| {
                r.updates
                    .iter()
                    .find(|(when, _)| when.eval(slots) != 0)
                    .map_or(slots[1 + n_in + i], |(_, v)| v.eval(slots) & mask(r.width))
            })
            .collect();
        let outputs = self
            .moore
            .iter()
            .map(|(_, _, vals)| vals[state])
            .chain(self.comb.iter().map(|(_, w, e)| e.eval(slots) & mask(*w)))
            .collect();
        (next_state, next_regs, outputs)
    }
}

fn is_ident(s: &str) -> bool {
    let mut c = s.chars();
    c.next().is_some_and(|f| f.is_ascii_alphabetic() || f == '_')
        && c.all(|x| x.is_ascii_alphanumeric() || x == '_')
        && s != "parity"
}

fn check_width(name: &str, width: u32) -> Result<(), FsmError> {
    if width == 0 || width > 64 {
        return Err(invalid(format!("output `{name}` width {width} outside 1..=64")));
    }
    Ok(())
}

/// Per-input bit sequences, keyed by input name.
pub type InputSchedule = BTreeMap<String, Vec<u8>>;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Step {
    pub state: usize,
    pub next_state: usize,
    pub inputs: Vec<u64>,
    pub registers: Vec<u64>,
    /// Moore outputs first, then combinational outputs.
    pub outputs: Vec<u64>,
}

/// Cycle-by-cycle record of a simulation, self-describing so it can be
/// queried without the machine.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StepTrace {
    pub state_names: Vec<String>,
    pub input_names: Vec<String>,
    pub register_names: Vec<String>,
    pub register_widths: Vec<u32>,
    pub output_names: Vec<String>,
    pub output_widths: Vec<u32>,
    pub steps: Vec<Step>,
}

impl StepTrace {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn state_name(&self, cycle: usize) -> &str {
        &self.state_names[self.steps[cycle].state]
    }

    pub fn states(&self) -> impl Iterator<Item = &str> + '_ {
        self.steps.iter().map(|s| self.state_names[s.state].as_str())
    }

    /// Numeric value of an input, register or output at a cycle.
    pub fn value(&self, name: &str, cycle: usize) -> Option<u64> {
        let step = self.steps.get(cycle)?;
        if let Some(i) = self.input_names.iter().position(|n| n == name) {
            return Some(step.inputs[i]);
        }
        if let Some(i) = self.register_names.iter().position(|n| n == name) {
            return Some(step.registers[i]);
        }
        let i = self.output_names.iter().position(|n| n == name)?;
        Some(step.outputs[i])
    }

    /// Bit width of an input, register or output.
    pub fn width(&self, name: &str) -> Option<u32> {
        if self.input_names.iter().any(|n| n == name) {
            return Some(1);
        }
        if let Some(i) = self.register_names.iter().position(|n| n == name) {
            return Some(self.register_widths[i]);
        }
        let i = self.output_names.iter().position(|n| n == name)?;
        Some(self.output_widths[i])
    }

    /// The same value the diagram shows for `name` (including `state`).
    pub fn cycle_value(&self, name: &str, cycle: usize) -> Option<CycleValue> {
        let step = self.steps.get(cycle)?;
        match name {
            STATE => Some(CycleValue::symbol(&self.state_names[step.state])),
            NEXT_STATE => Some(CycleValue::symbol(&self.state_names[step.next_state])),
            CLOCK => Some(CycleValue::bit(true)),
            _ => {
                let v = self.value(name, cycle)?;
                Some(if self.width(name)? == 1 {
                    CycleValue::bit(v != 0)
                } else {
                    CycleValue::num(v)
                })
            }
        }
    }
}

/// Runs `machine` for `cycles` cycles and builds the matching diagram.
pub fn simulate(
    machine: &TaskMachine,
    schedule: &InputSchedule,
    cycles: usize,
) -> Result<(StepTrace, TimingDiagram), FsmError> {
    if let Some(extra) = schedule.keys().find(|k| !machine.def.inputs.contains(k)) {
        return Err(FsmError::UnknownInput(extra.clone()));
    }
    let mut columns = Vec::with_capacity(machine.def.inputs.len());
    for name in &machine.def.inputs {
        let col = schedule.get(name).map(Vec::as_slice).unwrap_or(&[]);
        if col.len() < cycles {
            return Err(FsmError::IncompleteSchedule {
                input: name.clone(),
                got: col.len(),
                needed: cycles,
            });
        }
        if let Some((cycle, &v)) = col[..cycles].iter().enumerate().find(|(_, &v)| v > 1) {
            return Err(FsmError::InputOutOfRange {
                input: name.clone(),
                cycle,
                value: v.into(),
            });
        }
        columns.push(col);
    }

    let n_in = columns.len();
    let mut slots = vec![0u64; 1 + n_in + machine.registers.len()];
    slots[0] = machine.initial as u64;
    for (i, r) in machine.registers.iter().enumerate() {
        slots[1 + n_in + i] = r.reset;
    }
    let mut steps = Vec::with_capacity(cycles);
    for c in 0..cycles {
        for (i, col) in columns.iter().enumerate() {
            slots[1 + i] = col[c].into();
        }
        let (next_state, next_regs, outputs) = machine.eval(&slots);
        steps.push(Step {
            state: slots[0] as usize,
            next_state,
            inputs: slots[1..1 + n_in].to_vec(),
            registers: slots[1 + n_in..].to_vec(),
            outputs,
        });
        slots[0] = next_state as u64;
        slots[1 + n_in..].copy_from_slice(&next_regs);
    }
    let trace = StepTrace {
        state_names: machine.def.states.clone(),
        input_names: machine.def.inputs.clone(),
        register_names: machine.registers.iter().map(|r| r.name.clone()).collect(),
        register_widths: machine.registers.iter().map(|r| r.width).collect(),
        output_names: machine.output_names().into_iter().map(String::from).collect(),
        output_widths: machine.moore.iter().map(|o| o.1).chain(machine.comb.iter().map(|o| o.1)).collect(),
        steps,
    };
    let td = diagram(machine, &trace)?;
    Ok((trace, td))
}

fn diagram(machine: &TaskMachine, trace: &StepTrace) -> Result<TimingDiagram, FsmError> {
    let mut lanes: Vec<(String, u32)> = vec![(CLOCK.into(), 1)];
    lanes.extend(machine.def.inputs.iter().map(|n| (n.clone(), 1)));
    if machine.def.show_state {
        let w = state_width(machine.def.states.len());
        lanes.push((STATE.into(), w));
        lanes.push((NEXT_STATE.into(), w));
    }
    lanes.extend(machine.registers.iter().map(|r| (r.name.clone(), r.width)));
    lanes.extend(machine.moore.iter().map(|o| (o.0.clone(), o.1)));
    lanes.extend(machine.comb.iter().map(|o| (o.0.clone(), o.1)));

    let signals = lanes
        .into_iter()
        .map(|(name, width)| {
            let samples = (0..trace.len())
                .map(|c| trace.cycle_value(&name, c).expect("lane is part of the trace"))
                .collect();
            SignalTrace::new(name, width, samples)
        })
        .collect();
    Ok(TimingDiagram::new(signals, CLOCK, vec![])?)
}

/// State lanes are drawn as buses; their nominal width is enough bits to
/// encode every state, and at least 2 so they never read as a scalar.
pub fn state_width(n_states: usize) -> u32 {
    (usize::BITS - n_states.saturating_sub(1).leading_zeros()).max(2)
}
