//! Reasoning questions over generated scenario diagrams.
//!
//! Question wording and slot metadata live in a JSON file; each template id
//! has an answer builder here. Builders read what the diagram shows and
//! write the answer in cause, mechanism, sampled-effect order, listing every
//! checkable statement as a [`Clause`].

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::clause::{count_events, cycle_list, Clause, CountKind, SignalLookup};
use super::{ordinal, Category, Format, Grounding, QaError, QaPair};
use crate::generator::{Frame, GenContext, Scenario, Task, COUNTER_WIDTH, DECLARED_TASKS};
use crate::seed;
use crate::trace::TimingDiagram;

const TEMPLATES: &str = include_str!("../../assets/reasoning_templates.json");

fn all_scenarios() -> Vec<Scenario> {
    vec![Scenario::Success, Scenario::Failure]
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReasoningTemplate {
    pub id: String,
    pub category: Category,
    /// Signals the answer's clauses may reference.
    pub signals: Vec<String>,
    /// Set for single-cycle questions that read several signals.
    #[serde(default)]
    pub single_cycle: bool,
    #[serde(default = "all_scenarios")]
    pub scenarios: Vec<Scenario>,
    pub question: String,
    /// What the template is modeled on.
    pub note: String,
}

#[derive(Debug, Deserialize)]
struct TemplateFile {
    serial: Vec<ReasoningTemplate>,
    counter: Vec<ReasoningTemplate>,
}

fn load() -> TemplateFile {
    serde_json::from_str(TEMPLATES).expect("bundled reasoning templates are valid")
}

/// Templates for a task name. Recognized tasks without definitions yield an
/// empty list.
pub fn template_registry(task: &str) -> Result<Vec<ReasoningTemplate>, QaError> {
    match task.parse::<Task>() {
        Ok(t) if t.is_serial() => Ok(load().serial),
        Ok(_) => Ok(load().counter),
        Err(_) if DECLARED_TASKS.iter().any(|d| d.eq_ignore_ascii_case(task)) => Ok(vec![]),
        Err(_) => Err(QaError::UnknownTask(task.to_string())),
    }
}

struct Built {
    slots: Vec<(&'static str, String)>,
    answer: String,
    facts: Vec<Clause>,
    key: Clause,
}

type Builder = fn(&mut Ctx) -> Result<Built, String>;

struct Ctx<'a> {
    td: &'a TimingDiagram,
    gen: &'a GenContext,
    rng: ChaCha8Rng,
}

impl Ctx<'_> {
    fn n(&self) -> usize {
        self.td.num_cycles()
    }

    fn t(&self, signal: &str, cycle: usize) -> Result<String, String> {
        self.td
            .text(signal, cycle)
            .ok_or_else(|| format!("`{signal}` has no value in cycle {cycle}"))
    }

    fn range(&self, signal: &str, from: usize, len: usize) -> Result<Vec<String>, String> {
        (from..from + len).map(|c| self.t(signal, c)).collect()
    }

    fn occurrences(&self, signal: &str, value: &str) -> Vec<usize> {
        (0..self.n()).filter(|&c| self.td.text(signal, c).as_deref() == Some(value)).collect()
    }

    fn first(&self, signal: &str, value: &str, after: usize) -> Option<usize> {
        (after..self.n()).find(|&c| self.td.text(signal, c).as_deref() == Some(value))
    }

    fn frames(&self) -> Result<(&Frame, &Frame), String> {
        match self.gen.frames.as_slice() {
            [a, b, ..] => Ok((a, b)),
            _ => Err("diagram does not contain two received bytes".into()),
        }
    }

    fn task(&self) -> Task {
        self.gen.task
    }
}

fn at(signal: &str, cycle: usize, value: &str) -> Clause {
    Clause::ValueAt {
        signal: signal.into(),
        cycle,
        value: value.into(),
    }
}

fn holds(signal: &str, from: usize, to: usize, value: &str) -> Clause {
    Clause::Holds {
        signal: signal.into(),
        from,
        to,
        value: value.into(),
    }
}

fn sequence(signal: &str, start: usize, values: Vec<String>) -> Clause {
    Clause::Sequence {
        signal: signal.into(),
        start,
        values,
    }
}

fn first(signal: &str, value: &str, after: usize, cycle: Option<usize>) -> Clause {
    Clause::First {
        signal: signal.into(),
        value: value.into(),
        after,
        cycle,
    }
}

fn occurrences(signal: &str, value: &str, cycles: Vec<usize>) -> Clause {
    Clause::Occurrences {
        signal: signal.into(),
        value: value.into(),
        cycles,
    }
}

fn need(cond: bool, why: &str) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(why.to_string())
    }
}

/// "clock cycle 5" or "clock cycles 5, 6 and 9".
fn cycles_phrase(cycles: &[usize]) -> String {
    match cycles.len() {
        1 => format!("clock cycle {}", cycles[0] + 1),
        _ => format!("clock cycles {}", cycle_list(cycles)),
    }
}

fn plural(k: usize, one: &str, many: &str) -> String {
    if k == 1 {
        format!("1 {one}")
    } else {
        format!("{k} {many}")
    }
}

fn ones(bits: &[String]) -> usize {
    bits.iter().filter(|b| b.as_str() == "1").count()
}

fn parse_hex(s: &str) -> Option<u64> {
    u64::from_str_radix(s.strip_prefix("0x")?, 16).ok()
}

fn built(answer: String, facts: Vec<Clause>, key: Clause) -> Built {
    Built {
        slots: vec![],
        answer,
        facts,
        key,
    }
}

fn state_meaning(state: &str, data_cnt: &str) -> String {
    match state {
        "S0" => "The receiver is idle and waits for a start bit.".into(),
        "S1" => match parse_hex(data_cnt) {
            Some(9) => "The receiver has taken 9 bits and checks the stop bit in this cycle.".into(),
            Some(k) => format!("The receiver is taking bit {} of the current byte.", k + 1),
            None => "The receiver is taking the bits of a byte.".into(),
        },
        "S2" => "A byte has just been accepted.".into(),
        _ => "A byte has just been rejected.".into(),
    }
}

// ----- serial receiver -----

fn start_edge(c: &mut Ctx) -> Result<Built, String> {
    let (f, _) = c.frames()?;
    let s = f.start_bit;
    let (st, i, ns, st1) = (c.t("state", s)?, c.t("in", s)?, c.t("next_state", s)?, c.t("state", s + 1)?);
    need(st == "S0" && i == "0" && ns == "S1" && st1 == "S1", "no start bit at the first frame boundary")?;
    let answer = format!(
        "At the {} rising edge, state={st}. However, \"in={i}\" in the subsequent clk cycle, which triggers \"next_state\" to become {ns} through combinational logic. Then at the {} clk rising edge, \"state\" gets sampled as {st1} through sequential logic.",
        ordinal(s + 1),
        ordinal(s + 2)
    );
    let key = at("state", s + 1, &st1);
    let mut b = built(answer, vec![at("state", s, &st), at("in", s, &i), at("next_state", s, &ns), key.clone()], key);
    b.slots.push(("edge", ordinal(s + 1)));
    Ok(b)
}

fn verdict_reason(odd: &str, stop: &str) -> &'static str {
    match (odd, stop) {
        ("1", "1") => "both requirements hold, since the first 9 bits contain an odd number of 1s and the 10th bit is 1",
        ("1", _) => "the parity requirement holds but the 10th bit is not 1",
        (_, "1") => "the 10th bit is 1 but the first 9 bits contain an even number of 1s",
        _ => "neither the parity requirement nor the stop-bit requirement holds",
    }
}

fn data_cnt_nine(c: &mut Ctx) -> Result<Built, String> {
    let (f, _) = c.frames()?;
    let (k, v) = (f.check, f.verdict);
    let (stop, odd, ns, sv) = (c.t("in", k)?, c.t("odd", k)?, c.t("next_state", k)?, c.t("state", v)?);
    need(c.first("data_cnt", "0x9", 0) == Some(k), "data_cnt does not reach 9 at the first check")?;
    let out = if sv == "S2" { "done" } else { "err" };
    let answer = format!(
        "\"data_cnt\" reaches 9 in clock cycle {}, after the 8 data bits and the parity bit have been shifted in. In that cycle \"in\" carries the stop bit, which is {stop}, and \"odd\" is {odd}; {}. The transition logic therefore sets \"next_state\" to {ns}, and at the {} rising edge \"state\" is sampled as {sv}, which raises \"{out}\".",
        k + 1,
        verdict_reason(&odd, &stop),
        ordinal(v + 1)
    );
    let key = at("state", v, &sv);
    Ok(built(
        answer,
        vec![
            first("data_cnt", "0x9", 0, Some(k)),
            at("in", k, &stop),
            at("odd", k, &odd),
            at("next_state", k, &ns),
            key.clone(),
            at(out, v, "1"),
        ],
        key,
    ))
}

fn states_visited(c: &mut Ctx) -> Result<Built, String> {
    let (f, _) = c.frames()?;
    let mut facts = Vec::new();
    let mut seen = Vec::new();
    let mut missing = Vec::new();
    for s in &c.gen.trace.state_names {
        let at_cycle = c.first("state", s, 0);
        facts.push(first("state", s, 0, at_cycle));
        match at_cycle {
            Some(0) => seen.push(format!("{s} (from clock cycle 1)")),
            Some(k) => seen.push(format!("{s} (first in clock cycle {})", k + 1)),
            None => missing.push(s.clone()),
        }
    }
    let mut answer = format!("The FSM visits {}.", join_and(&seen));
    if !missing.is_empty() {
        answer.push_str(&format!(" It never reaches {} in this diagram.", join_and(&missing)));
    }
    let verdict = c.t("state", f.verdict)?;
    let key = first("state", &verdict, 0, c.first("state", &verdict, 0));
    Ok(built(answer, facts, key))
}

fn join_and(items: &[String]) -> String {
    match items.len() {
        0 => String::new(),
        1 => items[0].clone(),
        k => format!("{} and {}", items[..k - 1].join(", "), items[k - 1]),
    }
}

fn first_frame_verdict(c: &mut Ctx) -> Result<Built, String> {
    let (f, _) = c.frames()?;
    let start = f.start_bit + 1;
    let sv = c.t("state", f.verdict)?;
    let (flag, other) = if sv == "S2" { ("done", "S2") } else { ("err", "S3") };
    let lead = if sv == "S2" { "Yes." } else { "No." };
    let answer = format!(
        "{lead} \"state\" is S1 from clock cycle {} to clock cycle {} while the bits arrive, then it is sampled as {sv} in clock cycle {}, where \"{flag}\" is 1. For this byte the states transit between S0, S1 and {other}.",
        start + 1,
        f.check + 1,
        f.verdict + 1
    );
    let key = at("state", f.verdict, &sv);
    Ok(built(answer, vec![holds("state", start, f.check, "S1"), key.clone(), at(flag, f.verdict, "1")], key))
}

fn flag_cycles(c: &mut Ctx, flag: &str, state: &str) -> Result<Built, String> {
    let occ = c.occurrences(flag, "1");
    let in_state = c.occurrences("state", state);
    let meaning = if flag == "done" {
        "that a byte was received correctly: odd parity over the first 9 bits and a stop bit of 1"
    } else {
        "that a byte was rejected: the first 9 bits held an even number of 1s or the stop bit was 0"
    };
    let answer = if occ.is_empty() {
        format!("\"{flag}\" never goes high in this diagram. It is the Moore output of {state}, which is never reached, so no cycle signals {meaning}.")
    } else {
        format!(
            "\"{flag}\" is high in {}, exactly the cycles in which \"state\" is {state}. It signals {meaning}.",
            cycles_phrase(&occ)
        )
    };
    let key = occurrences(flag, "1", occ);
    Ok(built(answer, vec![key.clone(), occurrences("state", state, in_state)], key))
}

fn done_cycles(c: &mut Ctx) -> Result<Built, String> {
    flag_cycles(c, "done", "S2")
}

fn err_cycles(c: &mut Ctx) -> Result<Built, String> {
    flag_cycles(c, "err", "S3")
}

fn moore_outputs(c: &mut Ctx) -> Result<Built, String> {
    let (d, s2, e, s3) = (
        c.occurrences("done", "1"),
        c.occurrences("state", "S2"),
        c.occurrences("err", "1"),
        c.occurrences("state", "S3"),
    );
    need(d == s2 && e == s3, "outputs do not follow the state")?;
    let phrase = |v: &[usize]| if v.is_empty() { "in no cycle".to_string() } else { format!("in {}", cycles_phrase(v)) };
    let answer = format!(
        "Yes. Both depend only on the current state and never react to \"in\" within a cycle: \"done\" is 1 exactly when \"state\" is S2 ({}) and \"err\" is 1 exactly when \"state\" is S3 ({}).",
        phrase(&d),
        phrase(&e)
    );
    let key = occurrences("err", "1", e.clone());
    Ok(built(
        answer,
        vec![occurrences("done", "1", d), occurrences("state", "S2", s2), key.clone(), occurrences("state", "S3", s3)],
        key,
    ))
}

fn after_verdict(c: &mut Ctx) -> Result<Built, String> {
    let (f, _) = c.frames()?;
    let v = f.verdict;
    need(v + 1 < c.n(), "diagram ends at the verdict")?;
    let (sv, next, inv) = (c.t("state", v)?, c.t("state", v + 1)?, c.t("in", v)?);
    let edge = ordinal(v + 2);
    let mut facts = vec![at("state", v, &sv)];
    let answer = if sv == "S2" {
        format!("The first byte ends in S2, which returns to idle unconditionally: at the {edge} rising edge \"state\" is sampled as {next} again, whatever the value of \"in\".")
    } else if c.task() == Task::SerialParityStop {
        format!("The first byte ends in S3. In this design S3 returns to idle directly, so at the {edge} rising edge \"state\" is sampled as {next}.")
    } else {
        facts.push(at("in", v, &inv));
        format!(
            "The first byte ends in S3, which waits for \"in\" to be 1 before returning to idle. \"in\" is {inv} in clock cycle {}, so at the {edge} rising edge \"state\" is sampled as {next}.",
            v + 1
        )
    };
    let key = at("state", v + 1, &next);
    facts.push(key.clone());
    Ok(built(answer, facts, key))
}

fn leave_s3(c: &mut Ctx) -> Result<Built, String> {
    let (_, f2) = c.frames()?;
    let v = f2.verdict;
    let n = c.n();
    need(c.t("state", v)? == "S3", "second byte is not rejected")?;
    if c.task() == Task::SerialParityStop {
        if v + 1 < n {
            let next = c.t("state", v + 1)?;
            let key = at("state", v + 1, &next);
            let answer = format!(
                "\"state\" is S3 in clock cycle {}. In this design S3 returns to idle after one cycle whatever the value of \"in\", so at the {} rising edge \"state\" is sampled as {next}.",
                v + 1,
                ordinal(v + 2)
            );
            return Ok(built(answer, vec![at("state", v, "S3"), key.clone()], key));
        }
        let key = at("state", v, "S3");
        let answer = format!(
            "The diagram ends in clock cycle {} with \"state\" still S3. In this design the next rising edge returns it to S0 whatever the value of \"in\".",
            v + 1
        );
        return Ok(built(answer, vec![key.clone()], key));
    }
    match c.first("in", "1", v) {
        Some(k) if k + 1 < n => {
            let mut facts = vec![holds("state", v, k, "S3")];
            let mut answer = String::from("S3 waits for \"in\" to be 1 before returning to idle. ");
            if k > v {
                facts.push(holds("in", v, k - 1, "0"));
                answer.push_str(&format!(
                    "\"in\" stays 0 from clock cycle {} to clock cycle {}, so \"state\" holds S3 meanwhile. ",
                    v + 1,
                    k
                ));
            }
            let next = c.t("state", k + 1)?;
            answer.push_str(&format!(
                "\"in\" is 1 in clock cycle {}, so at the {} rising edge \"state\" is sampled as {next}.",
                k + 1,
                ordinal(k + 2)
            ));
            facts.push(at("in", k, "1"));
            let key = at("state", k + 1, &next);
            facts.push(key.clone());
            Ok(built(answer, facts, key))
        }
        other => {
            let key = holds("state", v, n - 1, "S3");
            let mut facts = vec![key.clone()];
            let why = if other.is_some() {
                facts.push(at("in", n - 1, "1"));
                "\"in\" returns to 1 only in the last clock cycle"
            } else {
                facts.push(holds("in", v, n - 1, "0"));
                "\"in\" stays 0 until the end"
            };
            let answer = format!(
                "S3 waits for \"in\" to be 1 before returning to idle. Here {why}, so \"state\" holds S3 from clock cycle {} to the end of the diagram (clock cycle {n}).",
                v + 1
            );
            Ok(built(answer, facts, key))
        }
    }
}

fn data_cnt_behaviour(c: &mut Ctx) -> Result<Built, String> {
    let (f, _) = c.frames()?;
    let n = c.n();
    let s0 = c.occurrences("state", "S0");
    let r = s0
        .iter()
        .copied()
        .find(|&r| r + 1 < n && c.td.text("data_cnt", r).as_deref() != Some("0x0"))
        .or_else(|| s0.iter().copied().find(|&r| r + 1 < n))
        .ok_or("no idle cycle to witness the reset")?;
    let a = f.start_bit + 1;
    let (x, y) = (c.t("data_cnt", a)?, c.t("data_cnt", a + 1)?);
    let h0 = f.check;
    let mut h1 = h0;
    while h1 + 1 < n && c.t("data_cnt", h1 + 1)? == "0x9" {
        h1 += 1;
    }
    need(c.t("data_cnt", h0)? == "0x9" && c.t("data_cnt", r + 1)? == "0x0", "counter witnesses missing")?;
    let answer = format!(
        "\"data_cnt\" becomes 0 whenever \"state\" is S0: for example \"state\" is S0 in clock cycle {} and \"data_cnt\" is 0x0 in clock cycle {}. It adds 1 in every cycle where \"state\" is S1 and the count is below 9: it goes from {x} in clock cycle {} to {y} in clock cycle {}. It keeps unchanged in the remaining cases, i.e. once it has reached 9 and while the FSM is in S2 or S3: it stays 0x9 from clock cycle {} to clock cycle {}.",
        r + 1,
        r + 2,
        a + 1,
        a + 2,
        h0 + 1,
        h1 + 1
    );
    let key = at("data_cnt", r + 1, "0x0");
    Ok(built(
        answer,
        vec![
            at("state", r, "S0"),
            key.clone(),
            at("state", a, "S1"),
            at("data_cnt", a, &x),
            at("data_cnt", a + 1, &y),
            holds("data_cnt", h0, h1, "0x9"),
        ],
        key,
    ))
}

fn out_byte_shift(c: &mut Ctx) -> Result<Built, String> {
    let (f, _) = c.frames()?;
    let d0 = f.start_bit + 1;
    let bits = c.range("in", d0, 8)?;
    let byte = c.t("out_byte", d0 + 8)?;
    let answer = format!(
        "While the 8 data bits arrive (clock cycles {} to {}), \"out_byte\" shifts right by one position every cycle and the current bit of \"in\" enters at bit 7, so the first received bit ends up as the least significant bit. Here \"in\" carries {}, so after the last data bit \"out_byte\" holds {byte} in clock cycle {}: the data bits read from the last one to the first one.",
        d0 + 1,
        d0 + 8,
        bits.join(", "),
        d0 + 9
    );
    let key = at("out_byte", d0 + 8, &byte);
    Ok(built(answer, vec![sequence("in", d0, bits), key.clone()], key))
}

fn data_cnt_peak(c: &mut Ctx) -> Result<Built, String> {
    let (f, _) = c.frames()?;
    let k = c.first("data_cnt", "0x9", 0).ok_or("data_cnt never reaches 9")?;
    need(k == f.check, "unexpected first check")?;
    let answer = format!(
        "\"data_cnt\" counts up to 0x9, first reached in clock cycle {}. It never goes higher because it only increments while it is below 9; when it is 9 the FSM evaluates the stop bit instead.",
        k + 1
    );
    let key = first("data_cnt", "0x9", 0, Some(k));
    Ok(built(answer, vec![key.clone(), first("data_cnt", "0xA", 0, None)], key))
}

fn odd_register(c: &mut Ctx) -> Result<Built, String> {
    let (f, _) = c.frames()?;
    let d0 = f.start_bit + 1;
    let k = f.check;
    let p = k - 1;
    let bits = c.range("in", d0, 8)?;
    let (par, op, ok, on) = (c.t("in", p)?, c.t("odd", p)?, c.t("odd", k)?, c.t("odd", k + 1)?);
    let answer = format!(
        "\"odd\" is the running XOR of the bits received while \"state\" is S1: it toggles in the cycle after \"in\" is 1 and is cleared in every other cycle. The 8 data bits of the first byte contain {} and the parity bit in clock cycle {} is {par}, so \"odd\" is {op} in clock cycle {} and {ok} in clock cycle {}, when the stop bit is checked. It is {on} again in clock cycle {}.",
        plural(ones(&bits), "one", "ones"),
        p + 1,
        p + 1,
        k + 1,
        k + 2
    );
    let key = at("odd", k, &ok);
    Ok(built(
        answer,
        vec![sequence("in", d0, bits), at("in", p, &par), at("odd", p, &op), key.clone(), at("odd", k + 1, &on)],
        key,
    ))
}

fn second_byte(c: &mut Ctx) -> Result<Built, String> {
    let (_, f2) = c.frames()?;
    let d0 = f2.start_bit + 1;
    let byte = c.t("out_byte", d0 + 8)?;
    need(c.t("odd", f2.check)? == "0" && c.t("state", f2.verdict)? == "S3", "second byte is not a parity failure")?;
    let answer = format!(
        "After the 8 data bits of the second byte (clock cycles {} to {}), \"out_byte\" holds {byte} in clock cycle {}. The byte is still rejected: \"odd\" is 0 in clock cycle {} because the nine bits contain an even number of 1s, so \"state\" is sampled as S3 in clock cycle {}. The shift register keeps the data either way; only the FSM reports the verdict.",
        d0 + 1,
        d0 + 8,
        d0 + 9,
        f2.check + 1,
        f2.verdict + 1
    );
    let key = at("out_byte", d0 + 8, &byte);
    Ok(built(answer, vec![key.clone(), at("odd", f2.check, "0"), at("state", f2.verdict, "S3")], key))
}

fn data_cnt_at(c: &mut Ctx) -> Result<Built, String> {
    let (f, _) = c.frames()?;
    let lo = f.start_bit + 1;
    let hi = (f.verdict + 1).min(c.n() - 1);
    let k = c.rng.gen_range(lo..=hi);
    let (v, ps, pv) = (c.t("data_cnt", k)?, c.t("state", k - 1)?, c.t("data_cnt", k - 1)?);
    let reason = match (ps.as_str(), parse_hex(&pv)) {
        ("S0", _) => format!("it was cleared because \"state\" was S0 in clock cycle {k}"),
        ("S1", Some(x)) if x < 9 => format!("it was incremented from {pv} because \"state\" was S1 in clock cycle {k} and the count was below 9"),
        ("S1", _) => format!("it kept its value {pv} from clock cycle {k}, where the count had already reached 9"),
        _ => format!("it kept its value {pv} from clock cycle {k} because \"state\" was {ps}, not S1"),
    };
    let answer = format!("\"data_cnt\" is {v} in clock cycle {}: {reason}.", k + 1);
    let key = at("data_cnt", k, &v);
    let mut b = built(answer, vec![key.clone(), at("state", k - 1, &ps), at("data_cnt", k - 1, &pv)], key);
    b.slots.push(("cycle", (k + 1).to_string()));
    Ok(b)
}

fn in_band_a(c: &mut Ctx) -> Result<Built, String> {
    let seq = c.range("in", 0, 3)?;
    need(seq == ["1", "1", "0"], "first cycles are not the 110 clamp")?;
    let answer = "\"in\" is 1 in clock cycles 1 and 2, the idle level of the line, and drops to 0 in clock cycle 3. That 0 is the start bit of the first byte, which moves the FSM from S0 to S1 at the next rising edge.".to_string();
    let key = at("in", 2, "0");
    Ok(built(answer, vec![sequence("in", 0, seq), key.clone()], key))
}

fn edges(c: &mut Ctx, signal: &str, meaning: &str) -> Result<Built, String> {
    let n = c.n();
    let k = count_events(c.td, signal, CountKind::Rising, 0, n - 1).ok_or("unknown signal")?;
    let answer = format!("\"{signal}\" has {}. {meaning}", plural(k, "rising edge", "rising edges"));
    let key = Clause::Count {
        signal: signal.into(),
        kind: CountKind::Rising,
        from: 0,
        to: n - 1,
        count: k,
    };
    Ok(built(answer, vec![key.clone()], key))
}

fn done_edges(c: &mut Ctx) -> Result<Built, String> {
    edges(c, "done", "Each one marks a byte received correctly, since \"done\" is 1 only while the FSM is in S2.")
}

fn odd_edges(c: &mut Ctx) -> Result<Built, String> {
    edges(c, "odd", "It rises whenever the number of 1s received so far in the current byte becomes odd.")
}

fn cycle_snapshot(c: &mut Ctx) -> Result<Built, String> {
    let k = c.rng.gen_range(0..c.n());
    let (s, d, i, o) = (c.t("state", k)?, c.t("data_cnt", k)?, c.t("in", k)?, c.t("odd", k)?);
    let answer = format!(
        "In clock cycle {}, \"state\" is {s}, \"data_cnt\" is {d}, \"in\" is {i} and \"odd\" is {o}. {}",
        k + 1,
        state_meaning(&s, &d)
    );
    let key = at("state", k, &s);
    let mut b = built(answer, vec![key.clone(), at("data_cnt", k, &d), at("in", k, &i), at("odd", k, &o)], key);
    b.slots.push(("cycle", (k + 1).to_string()));
    Ok(b)
}

fn state_at(c: &mut Ctx) -> Result<Built, String> {
    let k = c.rng.gen_range(0..c.n());
    let s = c.t("state", k)?;
    let d = c.t("data_cnt", k)?;
    let answer = format!("\"state\" is {s} in clock cycle {}. {}", k + 1, state_meaning(&s, &d));
    let key = at("state", k, &s);
    let mut b = built(answer, vec![key.clone()], key);
    b.slots.push(("cycle", (k + 1).to_string()));
    Ok(b)
}

fn err_first(c: &mut Ctx) -> Result<Built, String> {
    let k = c.first("err", "1", 0);
    let answer = match k {
        Some(k) => format!("\"err\" first goes high in clock cycle {}, the first cycle in which the FSM is in S3.", k + 1),
        None => "\"err\" never goes high in this diagram, because the FSM never enters S3.".to_string(),
    };
    let key = first("err", "1", 0, k);
    Ok(built(answer, vec![key.clone()], key))
}

fn stop_bit_cycle(c: &mut Ctx) -> Result<Built, String> {
    let (f, _) = c.frames()?;
    let k = f.check;
    let stop = c.t("in", k)?;
    let tail = if stop == "1" {
        "and here it is 1"
    } else {
        "but here it is 0, so the byte is rejected"
    };
    let answer = format!(
        "\"in\" is {stop} in clock cycle {}. \"data_cnt\" is 0x9 in this cycle, so this is the 10th bit of the byte, the stop bit. It must be 1 for the byte to be accepted, {tail}.",
        k + 1
    );
    let key = at("in", k, &stop);
    let mut b = built(answer, vec![key.clone(), at("data_cnt", k, "0x9")], key);
    b.slots.push(("cycle", (k + 1).to_string()));
    Ok(b)
}

fn odd_band_k(c: &mut Ctx) -> Result<Built, String> {
    let (f, _) = c.frames()?;
    let d0 = f.start_bit + 1;
    let k = f.check;
    let bits = c.range("in", d0, 8)?;
    need(
        c.t("odd", k - 1)? == "0" && c.t("odd", k)? == "1" && c.t("odd", k + 1)? == "0" && c.t("in", k - 1)? == "1",
        "no odd pulse at the first check",
    )?;
    let answer = format!(
        "The 8 data bits of the first byte (clock cycles {} to {}) contain {}, an even number, and the parity bit in clock cycle {k} is 1. \"odd\" holds the running XOR of the received bits, so it is 0 in clock cycle {k} and becomes 1 in clock cycle {}: the nine bits contain an odd number of 1s. In the next cycle the byte has been evaluated and \"odd\" is cleared, which ends the pulse in clock cycle {}.",
        d0 + 1,
        d0 + 8,
        plural(ones(&bits), "one", "ones"),
        k + 1,
        k + 2
    );
    let key = at("odd", k, "1");
    let mut b = built(
        answer,
        vec![sequence("in", d0, bits), at("in", k - 1, "1"), at("odd", k - 1, "0"), key.clone(), at("odd", k + 1, "0")],
        key,
    );
    b.slots.push(("cycle", (k + 1).to_string()));
    Ok(b)
}

fn odd_band_l(c: &mut Ctx) -> Result<Built, String> {
    let (_, f2) = c.frames()?;
    let d0 = f2.start_bit + 1;
    let k = f2.check;
    let bits = c.range("in", d0, 8)?;
    need(c.t("odd", k)? == "0" && c.t("in", k - 1)? == "1", "second byte does not fail parity")?;
    let answer = format!(
        "The 8 data bits of the second byte (clock cycles {} to {}) contain {}, an odd number, and the parity bit in clock cycle {k} is 1, so the nine bits contain an even number of 1s. \"odd\", the running XOR of the received bits, is therefore 0 in clock cycle {}, when the stop bit is checked, and the second byte fails the parity requirement.",
        d0 + 1,
        d0 + 8,
        plural(ones(&bits), "one", "ones"),
        k + 1
    );
    let key = at("odd", k, "0");
    let mut b = built(answer, vec![sequence("in", d0, bits), at("in", k - 1, "1"), key.clone()], key);
    b.slots.push(("cycle", (k + 1).to_string()));
    Ok(b)
}

fn verdict_chain(c: &mut Ctx) -> Result<Built, String> {
    let (f, _) = c.frames()?;
    let (k, v) = (f.check, f.verdict);
    let (stop, odd, ns, done, err) = (c.t("in", k)?, c.t("odd", k)?, c.t("next_state", k)?, c.t("done", v)?, c.t("err", v)?);
    let effect = if stop == "1" && odd == "1" {
        "Both are 1, so \"next_state\" is S2 and".to_string()
    } else if stop == "1" {
        "\"odd\" is 0, so \"next_state\" is S3 and".to_string()
    } else {
        "The stop bit is 0, so \"next_state\" is S3 and".to_string()
    };
    let answer = format!(
        "The check happens in clock cycle {}, when \"data_cnt\" is 9: \"in\" carries the stop bit ({stop}) and \"odd\" is {odd}. The byte is accepted only if both are 1. {effect} at the {} rising edge \"done\" becomes {done} while \"err\" becomes {err}.",
        k + 1,
        ordinal(v + 1)
    );
    let key = at("done", v, &done);
    Ok(built(
        answer,
        vec![at("data_cnt", k, "0x9"), at("in", k, &stop), at("odd", k, &odd), at("next_state", k, &ns), key.clone(), at("err", v, &err)],
        key,
    ))
}

fn second_rejection(c: &mut Ctx) -> Result<Built, String> {
    let (_, f2) = c.frames()?;
    let (k, v) = (f2.check, f2.verdict);
    let g = c.t("in", k)?;
    need(
        c.t("odd", k)? == "0" && c.t("next_state", k)? == "S3" && c.t("err", v)? == "1",
        "second byte is not a parity failure",
    )?;
    let answer = format!(
        "In clock cycle {} \"data_cnt\" is 9 and the second byte is checked. \"odd\" is 0 because the nine received bits contain an even number of 1s, so the parity requirement fails whatever the stop bit ({g}) is. \"next_state\" becomes S3 and at the {} rising edge \"state\" is sampled as S3; \"err\" is a Moore output of S3, so it goes high in clock cycle {}.",
        k + 1,
        ordinal(v + 1),
        v + 1
    );
    let key = at("err", v, "1");
    let mut b = built(
        answer,
        vec![at("data_cnt", k, "0x9"), at("odd", k, "0"), at("in", k, &g), at("next_state", k, "S3"), at("state", v, "S3"), key.clone()],
        key,
    );
    b.slots.push(("cycle", (v + 1).to_string()));
    Ok(b)
}

fn next_state_lead(c: &mut Ctx) -> Result<Built, String> {
    let (f, _) = c.frames()?;
    let (s, k, v) = (f.start_bit, f.check, f.verdict);
    let (a, b, x, y) = (c.t("next_state", s)?, c.t("state", s + 1)?, c.t("next_state", k)?, c.t("state", v)?);
    need(a == b && x == y, "state does not follow next_state")?;
    let answer = format!(
        "\"next_state\" is the combinational output of the transition logic and \"state\" samples it at every rising edge, so \"state\" always equals the \"next_state\" of the previous cycle. For example, \"next_state\" is {a} in clock cycle {} and \"state\" becomes {b} in clock cycle {}; \"next_state\" is {x} in clock cycle {} and \"state\" is {y} in clock cycle {}.",
        s + 1,
        s + 2,
        k + 1,
        v + 1
    );
    let key = at("state", v, &y);
    Ok(built(answer, vec![at("next_state", s, &a), at("state", s + 1, &b), at("next_state", k, &x), key.clone()], key))
}

fn cdc_crossing(_: &mut Ctx) -> Result<Built, String> {
    Err("the diagram has a single clock domain; crossing questions need a multi-clock machine".into())
}

// ----- counter -----

fn counter_max() -> String {
    format!("0x{:X}", (1u64 << COUNTER_WIDTH) - 1)
}

fn first_tc(c: &Ctx) -> Result<usize, String> {
    c.first("tc", "1", 0).ok_or_else(|| "tc never fires".to_string())
}

fn c_reset(c: &mut Ctx) -> Result<Built, String> {
    let n = c.n();
    need(c.t("rst", 0)? == "1", "no reset in the first cycle")?;
    let answer = "\"rst\" is 1 in clock cycle 1. The reset is synchronous, so \"cnt\" is sampled as 0x0 at the 2nd rising edge (clock cycle 2). \"rst\" stays 0 afterwards and the counter then follows \"en\".".to_string();
    let key = at("cnt", 1, "0x0");
    Ok(built(answer, vec![at("rst", 0, "1"), key.clone(), holds("rst", 1, n - 1, "0")], key))
}

fn c_wrap(c: &mut Ctx) -> Result<Built, String> {
    let max = counter_max();
    let k = (0..c.n() - 1)
        .find(|&k| c.td.text("cnt", k).as_deref() == Some(max.as_str()) && c.td.text("cnt", k + 1).as_deref() == Some("0x0"))
        .ok_or("cnt never wraps")?;
    need(c.t("en", k)? == "1", "wrap without enable")?;
    let answer = format!(
        "\"cnt\" is {COUNTER_WIDTH} bits wide, so its maximum is {max}. It reaches {max} in clock cycle {} and, because \"en\" is 1 in that cycle, wraps to 0x0 in clock cycle {}.",
        k + 1,
        k + 2
    );
    let key = at("cnt", k + 1, "0x0");
    Ok(built(answer, vec![at("cnt", k, &max), at("en", k, "1"), key.clone()], key))
}

fn c_tc_cycles(c: &mut Ctx) -> Result<Built, String> {
    let occ = c.occurrences("tc", "1");
    need(!occ.is_empty(), "tc never fires")?;
    let answer = format!(
        "\"tc\" is high in {}. It is the terminal-count flag: high exactly when \"cnt\" is at its maximum {} while the counter is enabled.",
        cycles_phrase(&occ),
        counter_max()
    );
    let key = occurrences("tc", "1", occ);
    Ok(built(answer, vec![key.clone()], key))
}

fn c_hold(c: &mut Ctx) -> Result<Built, String> {
    let n = c.n();
    let witness = (1..n - 1).find(|&k| c.td.text("en", k).as_deref() == Some("0") && c.td.text("rst", k).as_deref() == Some("0"));
    match witness {
        Some(k) => {
            let v = c.t("cnt", k)?;
            need(c.t("cnt", k + 1)? == v, "cnt changed while disabled")?;
            let answer = format!(
                "\"cnt\" keeps its value while \"en\" is 0. For example, \"en\" is 0 in clock cycle {} and \"cnt\" is {v} both in clock cycle {} and in clock cycle {}.",
                k + 1,
                k + 1,
                k + 2
            );
            let key = at("cnt", k + 1, &v);
            Ok(built(answer, vec![at("en", k, "0"), at("cnt", k, &v), key.clone()], key))
        }
        None => {
            let answer = format!(
                "\"cnt\" would keep its value while \"en\" is 0, but after the reset cycle \"en\" stays 1 from clock cycle 2 to clock cycle {}, so the counter never holds in this diagram.",
                n - 1
            );
            let key = holds("en", 1, n - 2, "1");
            Ok(built(answer, vec![key.clone()], key))
        }
    }
}

fn c_value_at(c: &mut Ctx) -> Result<Built, String> {
    let k = c.rng.gen_range(0..c.n());
    let v = c.t("cnt", k)?;
    let answer = format!("\"cnt\" is {v} in clock cycle {}.", k + 1);
    let key = at("cnt", k, &v);
    let mut b = built(answer, vec![key.clone()], key);
    b.slots.push(("cycle", (k + 1).to_string()));
    Ok(b)
}

fn c_en_edges(c: &mut Ctx) -> Result<Built, String> {
    edges(c, "en", "Each rising edge starts a run of cycles in which the counter advances.")
}

fn c_tc_condition(c: &mut Ctx) -> Result<Built, String> {
    let k = first_tc(c)?;
    let max = counter_max();
    need(c.t("cnt", k)? == max && c.t("en", k)? == "1", "tc without terminal count")?;
    let answer = format!(
        "\"tc\" is high when \"cnt\" is at its maximum {max} while \"en\" is 1, i.e. in the cycle just before the counter wraps. In clock cycle {}, \"cnt\" is {max} and \"en\" is 1, so \"tc\" is 1.",
        k + 1
    );
    let key = at("tc", k, "1");
    Ok(built(answer, vec![at("cnt", k, &max), at("en", k, "1"), key.clone()], key))
}

fn c_final(c: &mut Ctx) -> Result<Built, String> {
    let n = c.n();
    let l = n - 1;
    let v = c.t("cnt", l)?;
    let en = c.range("en", 1, l - 1)?;
    let e = ones(&en);
    let modulus = 1u64 << COUNTER_WIDTH;
    need(parse_hex(&v) == Some(e as u64 % modulus), "final count does not match enables")?;
    let answer = format!(
        "\"cnt\" is {v} in clock cycle {n}. After the reset in clock cycle 1, \"en\" is 1 in {e} of the clock cycles 2 to {l}, and \"cnt\" counts modulo {modulus}, so it ends at {e} mod {modulus} = {}.",
        e as u64 % modulus
    );
    let key = at("cnt", l, &v);
    Ok(built(answer, vec![key.clone(), sequence("en", 1, en)], key))
}

fn c_changes(c: &mut Ctx) -> Result<Built, String> {
    let n = c.n();
    let k = count_events(c.td, "cnt", CountKind::Changes, 1, n - 1).ok_or("unknown signal")?;
    let en = c.range("en", 1, n - 2)?;
    need(ones(&en) == k, "changes do not match enables")?;
    let answer = format!(
        "\"cnt\" changes {} between clock cycle 2 and clock cycle {n}. It advances once after every cycle in which \"en\" is 1, and \"en\" is 1 in {k} of the clock cycles 2 to {}; the step from {} back to 0x0 counts as one of them.",
        plural(k, "time", "times"),
        n - 1,
        counter_max()
    );
    let key = Clause::Count {
        signal: "cnt".into(),
        kind: CountKind::Changes,
        from: 1,
        to: n - 1,
        count: k,
    };
    Ok(built(answer, vec![key.clone(), sequence("en", 1, en)], key))
}

fn c_sequence(c: &mut Ctx) -> Result<Built, String> {
    let vals = c.range("cnt", 1, 8)?;
    let answer = format!(
        "\"cnt\" takes the values {} in clock cycles 2 to 9: it sweeps its whole range once, one step per cycle.",
        vals.join(", ")
    );
    let key = sequence("cnt", 1, vals);
    Ok(built(answer, vec![key.clone()], key))
}

fn c_tc_comb(c: &mut Ctx) -> Result<Built, String> {
    let k = first_tc(c)?;
    let max = counter_max();
    need(k + 1 < c.n(), "diagram ends at terminal count")?;
    let (after_cnt, after_tc) = (c.t("cnt", k + 1)?, c.t("tc", k + 1)?);
    need(c.t("cnt", k)? == max && after_tc == "0", "tc does not track cnt")?;
    let answer = format!(
        "\"tc\" is combinational. It is 1 in clock cycle {}, the same cycle in which \"cnt\" shows {max} with \"en\" at 1, not one cycle later; in clock cycle {} \"cnt\" has wrapped to {after_cnt} and \"tc\" is already 0 again.",
        k + 1,
        k + 2
    );
    let key = at("tc", k, "1");
    Ok(built(
        answer,
        vec![key.clone(), at("cnt", k, &max), at("en", k, "1"), at("cnt", k + 1, &after_cnt), at("tc", k + 1, &after_tc)],
        key,
    ))
}

fn builders() -> BTreeMap<&'static str, Builder> {
    let list: [(&'static str, Builder); 39] = [
        ("start_edge", start_edge),
        ("data_cnt_nine", data_cnt_nine),
        ("states_visited", states_visited),
        ("first_frame_verdict", first_frame_verdict),
        ("done_cycles", done_cycles),
        ("err_cycles", err_cycles),
        ("moore_outputs", moore_outputs),
        ("after_verdict", after_verdict),
        ("leave_s3", leave_s3),
        ("data_cnt_behaviour", data_cnt_behaviour),
        ("out_byte_shift", out_byte_shift),
        ("data_cnt_peak", data_cnt_peak),
        ("odd_register", odd_register),
        ("second_byte", second_byte),
        ("data_cnt_at", data_cnt_at),
        ("in_band_a", in_band_a),
        ("done_edges", done_edges),
        ("odd_edges", odd_edges),
        ("cycle_snapshot", cycle_snapshot),
        ("state_at", state_at),
        ("err_first", err_first),
        ("stop_bit_cycle", stop_bit_cycle),
        ("odd_band_k", odd_band_k),
        ("odd_band_l", odd_band_l),
        ("verdict_chain", verdict_chain),
        ("second_rejection", second_rejection),
        ("next_state_lead", next_state_lead),
        ("cdc_crossing", cdc_crossing),
        ("c_reset", c_reset),
        ("c_wrap", c_wrap),
        ("c_tc_cycles", c_tc_cycles),
        ("c_hold", c_hold),
        ("c_value_at", c_value_at),
        ("c_en_edges", c_en_edges),
        ("c_tc_condition", c_tc_condition),
        ("c_final", c_final),
        ("c_changes", c_changes),
        ("c_sequence", c_sequence),
        ("c_tc_comb", c_tc_comb),
    ];
    list.into_iter().collect()
}

/// Fills `template` for one generated diagram. `seed` picks any free slot
/// (such as a cycle to ask about).
pub fn instantiate(template: &ReasoningTemplate, td: &TimingDiagram, ctx: &GenContext, seed: u64) -> Result<QaPair, QaError> {
    let not_applicable = |reason: String| QaError::NotApplicable {
        template: template.id.clone(),
        reason,
    };
    let own = template_registry(ctx.task.name())?;
    if !own.iter().any(|t| t.id == template.id) {
        return Err(not_applicable(format!("belongs to another task than {}", ctx.task)));
    }
    if !template.scenarios.contains(&ctx.scenario) {
        return Err(not_applicable(format!("not written for the {} scenario", ctx.scenario)));
    }
    let builder = *builders()
        .get(template.id.as_str())
        .ok_or_else(|| not_applicable("no answer builder".into()))?;
    let mut c = Ctx {
        td,
        gen: ctx,
        rng: seed::rng(seed),
    };
    let b = builder(&mut c).map_err(not_applicable)?;
    let mut question = template.question.clone();
    for (slot, value) in &b.slots {
        question = question.replace(&format!("{{{slot}}}"), value);
    }
    Ok(QaPair {
        question,
        answer: b.answer,
        category: template.category,
        format: Format::Statement,
        source_td: ctx.td_id(),
        template: Some(template.id.clone()),
        grounding: Some(Grounding {
            facts: b.facts,
            key: b.key,
            choices: vec![],
            answer_index: None,
            refuted: None,
        }),
    })
}
