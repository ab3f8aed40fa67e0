//! Machine-checkable facts about a diagram and the checker that verifies them.
//!
//! Every analytic answer carries the clauses it asserts. The checker works on
//! the displayed text of each value (`0`, `x`, `0x1F`, `S2`), through the
//! [`SignalLookup`] trait, so the same clause can be verified against a
//! rendered [`TimingDiagram`] or directly against a simulator [`StepTrace`].
//! Cycles are 0-indexed here and 1-indexed in every rendered sentence.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::fsm::{StepTrace, CLOCK, NEXT_STATE, STATE};
use crate::trace::TimingDiagram;

/// Per-cycle text access to a set of signals.
pub trait SignalLookup {
    fn num_cycles(&self) -> usize;

    fn text(&self, signal: &str, cycle: usize) -> Option<String>;

    /// Values the signal can plausibly take, used to build distractors.
    fn domain(&self, signal: &str) -> Vec<String> {
        let seen: BTreeSet<String> = (0..self.num_cycles()).filter_map(|c| self.text(signal, c)).collect();
        seen.into_iter().collect()
    }

    fn is_scalar(&self, signal: &str) -> bool {
        (0..self.num_cycles())
            .filter_map(|c| self.text(signal, c))
            .all(|t| matches!(t.as_str(), "0" | "1" | "x" | "z"))
    }
}

impl SignalLookup for TimingDiagram {
    fn num_cycles(&self) -> usize {
        TimingDiagram::num_cycles(self)
    }

    fn text(&self, signal: &str, cycle: usize) -> Option<String> {
        self.value_at_cycle(signal, cycle).ok().map(ToString::to_string)
    }

    fn is_scalar(&self, signal: &str) -> bool {
        self.signal(signal).is_ok_and(|s| s.is_scalar())
    }
}

/// Reads the simulator record directly, without going through the diagram.
impl SignalLookup for StepTrace {
    fn num_cycles(&self) -> usize {
        self.steps.len()
    }

    fn text(&self, signal: &str, cycle: usize) -> Option<String> {
        let step = self.steps.get(cycle)?;
        match signal {
            STATE => Some(self.state_names[step.state].clone()),
            NEXT_STATE => Some(self.state_names[step.next_state].clone()),
            CLOCK => Some("1".into()),
            _ => {
                let v = self.value(signal, cycle)?;
                Some(if self.width(signal)? == 1 { v.to_string() } else { format!("0x{v:X}") })
            }
        }
    }

    fn domain(&self, signal: &str) -> Vec<String> {
        match signal {
            STATE | NEXT_STATE => self.state_names.clone(),
            _ => {
                let seen: BTreeSet<String> = (0..self.steps.len()).filter_map(|c| self.text(signal, c)).collect();
                seen.into_iter().collect()
            }
        }
    }

    fn is_scalar(&self, signal: &str) -> bool {
        self.width(signal) == Some(1) || signal == CLOCK
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CountKind {
    /// Adjacent cycles with different values, neither of them `x` or `z`.
    Changes,
    Rising,
    Falling,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "clause", rename_all = "snake_case")]
pub enum Clause {
    ValueAt {
        signal: String,
        cycle: usize,
        value: String,
    },
    /// The value is `value` for every cycle in `from..=to`.
    Holds {
        signal: String,
        from: usize,
        to: usize,
        value: String,
    },
    /// Number of `kind` events between consecutive cycles within `from..=to`.
    Count {
        signal: String,
        kind: CountKind,
        from: usize,
        to: usize,
        count: usize,
    },
    /// Values from `start` on, one per cycle.
    Sequence {
        signal: String,
        start: usize,
        values: Vec<String>,
    },
    /// First cycle at or after `after` showing `value`; `None` means never.
    First {
        signal: String,
        value: String,
        after: usize,
        cycle: Option<usize>,
    },
    /// Exactly the cycles in which the signal shows `value`.
    Occurrences {
        signal: String,
        value: String,
        cycles: Vec<usize>,
    },
}

fn is_defined(t: &str) -> bool {
    !matches!(t, "x" | "z")
}

pub fn count_events(lookup: &dyn SignalLookup, signal: &str, kind: CountKind, from: usize, to: usize) -> Option<usize> {
    if to >= lookup.num_cycles() || from > to {
        return None;
    }
    let texts: Vec<String> = (from..=to).map(|c| lookup.text(signal, c)).collect::<Option<_>>()?;
    Some(
        texts
            .windows(2)
            .filter(|w| match kind {
                CountKind::Changes => w[0] != w[1] && is_defined(&w[0]) && is_defined(&w[1]),
                CountKind::Rising => w[0] == "0" && w[1] == "1",
                CountKind::Falling => w[0] == "1" && w[1] == "0",
            })
            .count(),
    )
}

impl Clause {
    pub fn signal(&self) -> &str {
        match self {
            Clause::ValueAt { signal, .. }
            | Clause::Holds { signal, .. }
            | Clause::Count { signal, .. }
            | Clause::Sequence { signal, .. }
            | Clause::First { signal, .. }
            | Clause::Occurrences { signal, .. } => signal,
        }
    }

    /// True when the clause holds. Unknown signals or cycles make it false.
    pub fn check(&self, lookup: &dyn SignalLookup) -> bool {
        let n = lookup.num_cycles();
        let at = |s: &str, c: usize| lookup.text(s, c);
        match self {
            Clause::ValueAt { signal, cycle, value } => at(signal, *cycle).as_ref() == Some(value),
            Clause::Holds { signal, from, to, value } => {
                from <= to && *to < n && (*from..=*to).all(|c| at(signal, c).as_ref() == Some(value))
            }
            Clause::Count {
                signal,
                kind,
                from,
                to,
                count,
            } => count_events(lookup, signal, *kind, *from, *to) == Some(*count),
            Clause::Sequence { signal, start, values } => {
                !values.is_empty()
                    && start + values.len() <= n
                    && values.iter().enumerate().all(|(i, v)| at(signal, start + i).as_ref() == Some(v))
            }
            Clause::First {
                signal,
                value,
                after,
                cycle,
            } => {
                if at(signal, 0).is_none() {
                    return false;
                }
                let found = (*after..n).find(|&c| at(signal, c).as_ref() == Some(value));
                found == *cycle
            }
            Clause::Occurrences { signal, value, cycles } => {
                if at(signal, 0).is_none() {
                    return false;
                }
                let found: Vec<usize> = (0..n).filter(|&c| at(signal, c).as_ref() == Some(value)).collect();
                &found == cycles
            }
        }
    }

    /// A sentence stating the clause, with 1-indexed cycles.
    pub fn describe(&self) -> String {
        match self {
            Clause::ValueAt { signal, cycle, value } => {
                format!("\"{signal}\" is {value} in clock cycle {}", cycle + 1)
            }
            Clause::Holds { signal, from, to, value } => {
                format!("\"{signal}\" stays {value} from clock cycle {} to clock cycle {}", from + 1, to + 1)
            }
            Clause::Count {
                signal,
                kind,
                from,
                to,
                count,
            } => {
                let what = match kind {
                    CountKind::Changes => "value changes",
                    CountKind::Rising => "rising edges",
                    CountKind::Falling => "falling edges",
                };
                format!("\"{signal}\" has {count} {what} between clock cycle {} and clock cycle {}", from + 1, to + 1)
            }
            Clause::Sequence { signal, start, values } => {
                format!("\"{signal}\" takes the values {} starting at clock cycle {}", values.join(", "), start + 1)
            }
            Clause::First {
                signal,
                value,
                after,
                cycle,
            } => {
                let scope = if *after > 0 {
                    format!(" at or after clock cycle {}", after + 1)
                } else {
                    String::new()
                };
                match cycle {
                    Some(c) => format!("\"{signal}\" first equals {value}{scope} in clock cycle {}", c + 1),
                    None => format!("\"{signal}\" never equals {value}{scope}"),
                }
            }
            Clause::Occurrences { signal, value, cycles } => {
                if cycles.is_empty() {
                    format!("\"{signal}\" never equals {value}")
                } else {
                    format!("\"{signal}\" equals {value} exactly in clock cycles {}", cycle_list(cycles))
                }
            }
        }
    }

    /// The bare answer to a direct question about this clause.
    pub fn bare(&self) -> String {
        match self {
            Clause::ValueAt { value, .. } => value.clone(),
            Clause::Count { count, .. } => count.to_string(),
            Clause::Sequence { values, .. } => values.join(", "),
            Clause::First { cycle, .. } => cycle.map_or("never".into(), |c| (c + 1).to_string()),
            Clause::Occurrences { cycles, .. } => {
                if cycles.is_empty() {
                    "none".into()
                } else {
                    cycle_list(cycles)
                }
            }
            Clause::Holds { .. } => self.describe(),
        }
    }

    /// Nearby variants of the clause, most plausible first. Some of them may
    /// still be true; callers filter with [`Clause::check`].
    pub fn perturbations(&self, lookup: &dyn SignalLookup) -> Vec<Clause> {
        let n = lookup.num_cycles();
        let mut out = Vec::new();
        let alt_values = |signal: &str, value: &str| -> Vec<String> {
            let mut vals: Vec<String> = Vec::new();
            if lookup.is_scalar(signal) {
                vals.extend(["0", "1", "x", "z"].map(String::from));
            } else if let Some(v) = parse_hex(value) {
                vals.extend([v.wrapping_add(1), v.wrapping_sub(1), v.wrapping_add(2), v ^ 0x8].map(|x| format!("0x{x:X}")));
            }
            vals.extend(lookup.domain(signal));
            let mut seen = BTreeSet::new();
            vals.retain(|v| v != value && seen.insert(v.clone()));
            vals
        };
        let shifts = |c: usize| -> Vec<usize> {
            [c + 1, c.wrapping_sub(1), c + 2, c.wrapping_sub(2)]
                .into_iter()
                .filter(|&x| x < n)
                .collect()
        };
        match self {
            Clause::ValueAt { signal, cycle, value } => {
                for v in alt_values(signal, value) {
                    out.push(Clause::ValueAt {
                        signal: signal.clone(),
                        cycle: *cycle,
                        value: v,
                    });
                }
                for c in shifts(*cycle) {
                    out.push(Clause::ValueAt {
                        signal: signal.clone(),
                        cycle: c,
                        value: value.clone(),
                    });
                }
            }
            Clause::Holds { signal, from, to, value } => {
                for v in alt_values(signal, value) {
                    out.push(Clause::Holds {
                        signal: signal.clone(),
                        from: *from,
                        to: *to,
                        value: v,
                    });
                }
                if *to + 1 < n {
                    out.push(Clause::Holds {
                        signal: signal.clone(),
                        from: *from,
                        to: to + 1,
                        value: value.clone(),
                    });
                }
                if *from > 0 {
                    out.push(Clause::Holds {
                        signal: signal.clone(),
                        from: from - 1,
                        to: *to,
                        value: value.clone(),
                    });
                }
            }
            Clause::Count { count, .. } => {
                for d in [1i64, -1, 2, 3, -2, 4] {
                    let c = *count as i64 + d;
                    if c >= 0 {
                        let mut p = self.clone();
                        if let Clause::Count { count, .. } = &mut p {
                            *count = c as usize;
                        }
                        out.push(p);
                    }
                }
            }
            Clause::Sequence { signal, start, values } => {
                for i in 0..values.len() {
                    for v in alt_values(signal, &values[i]).into_iter().take(2) {
                        let mut vals = values.clone();
                        vals[i] = v;
                        out.push(Clause::Sequence {
                            signal: signal.clone(),
                            start: *start,
                            values: vals,
                        });
                    }
                }
                for i in 1..values.len() {
                    if values[i] != values[i - 1] {
                        let mut vals = values.clone();
                        vals.swap(i, i - 1);
                        out.push(Clause::Sequence {
                            signal: signal.clone(),
                            start: *start,
                            values: vals,
                        });
                    }
                }
            }
            Clause::First {
                signal,
                value,
                after,
                cycle,
            } => {
                let candidates: Vec<Option<usize>> = match cycle {
                    Some(c) => shifts(*c).into_iter().filter(|x| x >= after).map(Some).chain([None]).collect(),
                    None => (*after..n).take(4).map(Some).collect(),
                };
                for c in candidates {
                    out.push(Clause::First {
                        signal: signal.clone(),
                        value: value.clone(),
                        after: *after,
                        cycle: c,
                    });
                }
            }
            Clause::Occurrences { signal, value, cycles } => {
                let mut variants: Vec<Vec<usize>> = Vec::new();
                if !cycles.is_empty() {
                    variants.push(cycles.iter().map(|c| c + 1).filter(|&c| c < n).collect());
                    variants.push(cycles.iter().filter(|&&c| c > 0).map(|c| c - 1).collect());
                    variants.push(cycles[1..].to_vec());
                }
                for extra in (0..n).filter(|c| !cycles.contains(c)).take(3) {
                    let mut v = cycles.clone();
                    v.push(extra);
                    v.sort_unstable();
                    variants.push(v);
                }
                for v in variants {
                    out.push(Clause::Occurrences {
                        signal: signal.clone(),
                        value: value.clone(),
                        cycles: v,
                    });
                }
            }
        }
        out.retain(|c| c != self);
        out
    }
}

fn parse_hex(s: &str) -> Option<u64> {
    u64::from_str_radix(s.strip_prefix("0x")?, 16).ok()
}

/// "3, 7 and 9" with 1-indexed cycle numbers.
pub fn cycle_list(cycles: &[usize]) -> String {
    let items: Vec<String> = cycles.iter().map(|c| (c + 1).to_string()).collect();
    match items.len() {
        0 => String::new(),
        1 => items[0].clone(),
        k => format!("{} and {}", items[..k - 1].join(", "), items[k - 1]),
    }
}
