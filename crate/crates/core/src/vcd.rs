//! Value Change Dump reader and writer.
//!
//! Supported subset: `$timescale`, `$scope`/`$upscope` (flattened into dotted
//! hierarchical names), `$var wire|reg`, `$dumpvars`/`$dumpall`, scalar and
//! vector value changes. `$date`, `$version` and `$comment` blocks are skipped.
//! Everything else is rejected with an error instead of being guessed at.

use std::collections::HashMap;
use std::fmt;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum VcdError {
    #[error("malformed header: {0}")]
    MalformedHeader(String),
    #[error("unknown variable id `{0}`")]
    UnknownVarId(String),
    #[error("width mismatch for `{id}`: declared {declared}, got {got}")]
    WidthMismatch { id: String, declared: u32, got: u32 },
    #[error("unsupported VCD construct `{0}`")]
    Unsupported(String),
    #[error("syntax error near token {index}: {message}")]
    Syntax { index: usize, message: String },
    #[error("timestamp #{got} goes backwards (previous #{previous})")]
    NonMonotonicTime { previous: u64, got: u64 },
}

/// A single four-state bit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Logic {
    Zero,
    One,
    Unknown,
    HighZ,
}

impl Logic {
    pub fn from_char(c: char) -> Option<Logic> {
        match c {
            '0' => Some(Logic::Zero),
            '1' => Some(Logic::One),
            'x' | 'X' => Some(Logic::Unknown),
            'z' | 'Z' => Some(Logic::HighZ),
            _ => None,
        }
    }

    pub fn as_char(self) -> char {
        match self {
            Logic::Zero => '0',
            Logic::One => '1',
            Logic::Unknown => 'x',
            Logic::HighZ => 'z',
        }
    }

    pub fn is_defined(self) -> bool {
        matches!(self, Logic::Zero | Logic::One)
    }
}

impl From<bool> for Logic {
    fn from(b: bool) -> Self {
        if b {
            Logic::One
        } else {
            Logic::Zero
        }
    }
}

impl fmt::Display for Logic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.as_char())
    }
}

/// A value of a declared variable, most significant bit first.
/// Scalars are one-element vectors.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct LogicValue(pub Vec<Logic>);

impl LogicValue {
    pub fn scalar(bit: Logic) -> Self {
        LogicValue(vec![bit])
    }

    pub fn unknown(width: u32) -> Self {
        LogicValue(vec![Logic::Unknown; width as usize])
    }

    pub fn width(&self) -> u32 {
        self.0.len() as u32
    }

    pub fn bits(&self) -> &[Logic] {
        &self.0
    }

    /// Numeric value when every bit is 0/1 and the value fits in 64 bits.
    pub fn to_u64(&self) -> Option<u64> {
        if self.0.len() > 64 {
            return None;
        }
        self.0.iter().try_fold(0u64, |acc, b| match b {
            Logic::Zero => Some(acc << 1),
            Logic::One => Some((acc << 1) | 1),
            _ => None,
        })
    }

    pub fn from_u64(value: u64, width: u32) -> Self {
        LogicValue(
            (0..width)
                .rev()
                .map(|i| Logic::from(i < 64 && (value >> i) & 1 == 1))
                .collect(),
        )
    }

    /// Parses the digits of a `b...` vector change, left-extending to `width`
    /// per the VCD rules (0/1 extend with 0, x with x, z with z).
    fn parse_vector(digits: &str, width: u32) -> Option<Result<Self, u32>> {
        let bits: Option<Vec<Logic>> = digits.chars().map(Logic::from_char).collect();
        let mut bits = bits?;
        if bits.is_empty() {
            return None;
        }
        let got = bits.len() as u32;
        if got > width {
            return Some(Err(got));
        }
        let fill = match bits[0] {
            Logic::One | Logic::Zero => Logic::Zero,
            other => other,
        };
        let mut padded = vec![fill; (width - got) as usize];
        padded.append(&mut bits);
        Some(Ok(LogicValue(padded)))
    }
}

impl fmt::Display for LogicValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for b in &self.0 {
            write!(f, "{}", b.as_char())?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Timescale {
    pub magnitude: u32,
    pub unit: String,
}

impl Default for Timescale {
    fn default() -> Self {
        Timescale {
            magnitude: 1,
            unit: "ns".to_string(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VarKind {
    Wire,
    Reg,
}

impl VarKind {
    fn keyword(self) -> &'static str {
        match self {
            VarKind::Wire => "wire",
            VarKind::Reg => "reg",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VarDecl {
    pub id_code: String,
    /// Dotted hierarchical name, e.g. `tb.dut.clk`.
    pub reference_name: String,
    pub width: u32,
    pub kind: VarKind,
    /// Further hierarchical names sharing this id code (simulators dump
    /// connected nets once under several scopes).
    pub aliases: Vec<String>,
}

impl VarDecl {
    pub fn leaf_name(&self) -> &str {
        self.reference_name
            .rsplit('.')
            .next()
            .unwrap_or(&self.reference_name)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VcdEvent {
    pub time: u64,
    pub id: String,
    pub value: LogicValue,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VcdDocument {
    pub timescale: Timescale,
    pub declarations: Vec<VarDecl>,
    pub events: Vec<VcdEvent>,
    pub end_time: u64,
    // id code -> declaration index; derived from `declarations`.
    index: HashMap<String, usize>,
    // per declaration, indices into `events` in time order.
    changes: Vec<Vec<usize>>,
}

impl VcdDocument {
    /// Builds a document, checking every invariant.
    pub fn new(
        timescale: Timescale,
        declarations: Vec<VarDecl>,
        events: Vec<VcdEvent>,
        end_time: u64,
    ) -> Result<Self, VcdError> {
        let mut index = HashMap::new();
        for (i, d) in declarations.iter().enumerate() {
            if d.width == 0 {
                return Err(VcdError::MalformedHeader(format!(
                    "variable `{}` has zero width",
                    d.reference_name
                )));
            }
            if index.insert(d.id_code.clone(), i).is_some() {
                return Err(VcdError::MalformedHeader(format!(
                    "duplicate id code `{}`",
                    d.id_code
                )));
            }
        }
        let mut changes = vec![Vec::new(); declarations.len()];
        let mut last = 0u64;
        for (ei, ev) in events.iter().enumerate() {
            if ev.time < last {
                return Err(VcdError::NonMonotonicTime {
                    previous: last,
                    got: ev.time,
                });
            }
            last = ev.time;
            let di = *index
                .get(&ev.id)
                .ok_or_else(|| VcdError::UnknownVarId(ev.id.clone()))?;
            if ev.value.width() != declarations[di].width {
                return Err(VcdError::WidthMismatch {
                    id: ev.id.clone(),
                    declared: declarations[di].width,
                    got: ev.value.width(),
                });
            }
            changes[di].push(ei);
        }
        Ok(VcdDocument {
            timescale,
            declarations,
            events,
            end_time: end_time.max(last),
            index,
            changes,
        })
    }

    pub fn declaration(&self, id: &str) -> Option<&VarDecl> {
        self.index.get(id).map(|&i| &self.declarations[i])
    }

    /// Looks a variable up by full hierarchical name, alias, or unique leaf name.
    pub fn find_var(&self, name: &str) -> Option<&VarDecl> {
        if let Some(d) = self
            .declarations
            .iter()
            .find(|d| d.reference_name == name || d.aliases.iter().any(|a| a == name))
        {
            return Some(d);
        }
        let mut leaf = self.declarations.iter().filter(|d| {
            d.leaf_name() == name
                || d.aliases
                    .iter()
                    .any(|a| a.rsplit('.').next() == Some(name))
        });
        match (leaf.next(), leaf.next()) {
            (Some(d), None) => Some(d),
            _ => None,
        }
    }

    /// Time-ordered value changes of one variable.
    pub fn changes_of(&self, id: &str) -> Result<impl Iterator<Item = &VcdEvent> + '_, VcdError> {
        let di = *self
            .index
            .get(id)
            .ok_or_else(|| VcdError::UnknownVarId(id.to_string()))?;
        Ok(self.changes[di].iter().map(move |&i| &self.events[i]))
    }

    /// Value of `id` after all events at or before `t`; all-`x` before the first event.
    pub fn value_at_time(&self, id: &str, t: u64) -> Result<LogicValue, VcdError> {
        let di = *self
            .index
            .get(id)
            .ok_or_else(|| VcdError::UnknownVarId(id.to_string()))?;
        let list = &self.changes[di];
        let n = list.partition_point(|&ei| self.events[ei].time <= t);
        Ok(match n {
            0 => LogicValue::unknown(self.declarations[di].width),
            _ => self.events[list[n - 1]].value.clone(),
        })
    }
}

struct Tokens<'a> {
    toks: Vec<&'a str>,
    pos: usize,
}

impl<'a> Tokens<'a> {
    fn next(&mut self) -> Option<&'a str> {
        let t = self.toks.get(self.pos).copied();
        if t.is_some() {
            self.pos += 1;
        }
        t
    }

    /// Collects tokens up to (not including) the closing `$end`.
    fn until_end(&mut self, what: &str) -> Result<Vec<&'a str>, VcdError> {
        let mut out = Vec::new();
        loop {
            match self.next() {
                Some("$end") => return Ok(out),
                Some(t) => out.push(t),
                None => {
                    return Err(VcdError::MalformedHeader(format!(
                        "unterminated {what} block"
                    )))
                }
            }
        }
    }

    fn syntax(&self, message: impl Into<String>) -> VcdError {
        VcdError::Syntax {
            index: self.pos,
            message: message.into(),
        }
    }
}

fn parse_timescale(parts: &[&str]) -> Result<Timescale, VcdError> {
    let joined: String = parts.concat();
    let split = joined
        .find(|c: char| !c.is_ascii_digit())
        .ok_or_else(|| VcdError::MalformedHeader(format!("bad timescale `{joined}`")))?;
    let (mag, unit) = joined.split_at(split);
    let magnitude = mag
        .parse()
        .map_err(|_| VcdError::MalformedHeader(format!("bad timescale `{joined}`")))?;
    if !matches!(unit, "s" | "ms" | "us" | "ns" | "ps" | "fs") {
        return Err(VcdError::MalformedHeader(format!(
            "bad timescale unit `{unit}`"
        )));
    }
    Ok(Timescale {
        magnitude,
        unit: unit.to_string(),
    })
}

/// Parses VCD text into a [`VcdDocument`].
pub fn parse_vcd(text: &str) -> Result<VcdDocument, VcdError> {
    let mut tk = Tokens {
        toks: text.split_ascii_whitespace().collect(),
        pos: 0,
    };
    let mut timescale = Timescale::default();
    let mut scopes: Vec<String> = Vec::new();
    let mut decls: Vec<VarDecl> = Vec::new();
    let mut by_id: HashMap<String, usize> = HashMap::new();
    let mut saw_end = false;

    while let Some(tok) = tk.next() {
        match tok {
            "$date" | "$version" | "$comment" => {
                tk.until_end(tok)?;
            }
            "$timescale" => timescale = parse_timescale(&tk.until_end(tok)?)?,
            "$scope" => {
                let body = tk.until_end(tok)?;
                let name = body
                    .get(1)
                    .ok_or_else(|| VcdError::MalformedHeader("$scope without name".into()))?;
                scopes.push(name.to_string());
            }
            "$upscope" => {
                tk.until_end(tok)?;
                if scopes.pop().is_none() {
                    return Err(VcdError::MalformedHeader("unbalanced $upscope".into()));
                }
            }
            "$var" => {
                let body = tk.until_end(tok)?;
                if body.len() < 4 {
                    return Err(VcdError::MalformedHeader(format!(
                        "short $var declaration `{}`",
                        body.join(" ")
                    )));
                }
                let kind = match body[0] {
                    "wire" => VarKind::Wire,
                    "reg" => VarKind::Reg,
                    other => return Err(VcdError::Unsupported(format!("$var {other}"))),
                };
                let width: u32 = body[1]
                    .parse()
                    .ok()
                    .filter(|&w| w > 0)
                    .ok_or_else(|| {
                        VcdError::MalformedHeader(format!("bad width `{}`", body[1]))
                    })?;
                let id = body[2];
                if !id.chars().all(|c| c.is_ascii_graphic()) {
                    return Err(VcdError::MalformedHeader(format!("bad id code `{id}`")));
                }
                // Bit-select suffixes such as `[7:0]` are dropped.
                let mut name = body[3].to_string();
                if let Some(p) = name.find('[') {
                    if p > 0 {
                        name.truncate(p);
                    }
                }
                let mut full = scopes.clone();
                full.push(name);
                let full = full.join(".");
                match by_id.get(id) {
                    Some(&i) => {
                        if decls[i].width != width {
                            return Err(VcdError::WidthMismatch {
                                id: id.to_string(),
                                declared: decls[i].width,
                                got: width,
                            });
                        }
                        decls[i].aliases.push(full);
                    }
                    None => {
                        by_id.insert(id.to_string(), decls.len());
                        decls.push(VarDecl {
                            id_code: id.to_string(),
                            reference_name: full,
                            width,
                            kind,
                            aliases: Vec::new(),
                        });
                    }
                }
            }
            "$enddefinitions" => {
                tk.until_end(tok)?;
                saw_end = true;
                break;
            }
            other if other.starts_with('$') => {
                return Err(VcdError::Unsupported(other.to_string()));
            }
            other => {
                return Err(VcdError::MalformedHeader(format!(
                    "unexpected token `{other}` in header"
                )))
            }
        }
    }
    if !saw_end {
        return Err(VcdError::MalformedHeader("missing $enddefinitions".into()));
    }

    let width_of = |id: &str| -> Result<u32, VcdError> {
        by_id
            .get(id)
            .map(|&i| decls[i].width)
            .ok_or_else(|| VcdError::UnknownVarId(id.to_string()))
    };

    let mut events = Vec::new();
    let mut now = 0u64;
    let mut end_time = 0u64;
    while let Some(tok) = tk.next() {
        let first = tok.chars().next().unwrap_or(' ');
        match first {
            '#' => {
                let t: u64 = tok[1..]
                    .parse()
                    .map_err(|_| tk.syntax(format!("bad timestamp `{tok}`")))?;
                if t < now {
                    return Err(VcdError::NonMonotonicTime { previous: now, got: t });
                }
                now = t;
                end_time = t;
            }
            '$' => match tok {
                "$dumpvars" | "$dumpall" | "$end" => {}
                "$comment" => {
                    tk.until_end(tok)?;
                }
                _ => return Err(VcdError::Unsupported(tok.to_string())),
            },
            '0' | '1' | 'x' | 'X' | 'z' | 'Z' => {
                let id = &tok[1..];
                if id.is_empty() {
                    return Err(tk.syntax(format!("scalar change `{tok}` without id")));
                }
                let width = width_of(id)?;
                if width != 1 {
                    return Err(VcdError::WidthMismatch {
                        id: id.to_string(),
                        declared: width,
                        got: 1,
                    });
                }
                events.push(VcdEvent {
                    time: now,
                    id: id.to_string(),
                    value: LogicValue::scalar(Logic::from_char(first).unwrap()),
                });
            }
            'b' | 'B' => {
                let id = tk
                    .next()
                    .ok_or_else(|| tk.syntax(format!("vector change `{tok}` without id")))?;
                let width = width_of(id)?;
                let value = match LogicValue::parse_vector(&tok[1..], width) {
                    None => return Err(tk.syntax(format!("bad vector value `{tok}`"))),
                    Some(Err(got)) => {
                        return Err(VcdError::WidthMismatch {
                            id: id.to_string(),
                            declared: width,
                            got,
                        })
                    }
                    Some(Ok(v)) => v,
                };
                events.push(VcdEvent {
                    time: now,
                    id: id.to_string(),
                    value,
                });
            }
            'r' | 'R' => return Err(VcdError::Unsupported("real value change".into())),
            _ => return Err(tk.syntax(format!("unexpected token `{tok}`"))),
        }
    }

    VcdDocument::new(timescale, decls, events, end_time)
}

/// Serializes a document back to VCD text. Parsing the output yields an equal document.
pub fn write_vcd(doc: &VcdDocument) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "$timescale {}{} $end\n",
        doc.timescale.magnitude, doc.timescale.unit
    ));
    // Each name (primary or alias) is emitted as its own $var line, reopening
    // scopes as needed so that declaration order is preserved.
    let mut open: Vec<&str> = Vec::new();
    for d in &doc.declarations {
        for name in std::iter::once(&d.reference_name).chain(d.aliases.iter()) {
            let mut parts: Vec<&str> = name.split('.').collect();
            let leaf = parts.pop().unwrap_or("");
            let common = open
                .iter()
                .zip(parts.iter())
                .take_while(|(a, b)| a == b)
                .count();
            while open.len() > common {
                open.pop();
                out.push_str("$upscope $end\n");
            }
            for p in &parts[common..] {
                out.push_str(&format!("$scope module {p} $end\n"));
                open.push(p);
            }
            out.push_str(&format!(
                "$var {} {} {} {} $end\n",
                d.kind.keyword(),
                d.width,
                d.id_code,
                leaf
            ));
        }
    }
    for _ in open {
        out.push_str("$upscope $end\n");
    }
    out.push_str("$enddefinitions $end\n");
    let mut current: Option<u64> = None;
    for ev in &doc.events {
        if current != Some(ev.time) {
            out.push_str(&format!("#{}\n", ev.time));
            current = Some(ev.time);
        }
        if ev.value.width() == 1 {
            out.push_str(&format!("{}{}\n", ev.value, ev.id));
        } else {
            out.push_str(&format!("b{} {}\n", ev.value, ev.id));
        }
    }
    if current != Some(doc.end_time) && doc.end_time > 0 {
        out.push_str(&format!("#{}\n", doc.end_time));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    const CLK: &str = "$timescale 1ns $end\n$scope module tb $end\n$var wire 1 ! clk $end\n$upscope $end\n$enddefinitions $end\n#0\n0!\n#5\n1!\n";

    #[test]
    fn minimal_fixture() {
        let doc = parse_vcd(CLK).unwrap();
        assert_eq!(doc.events.len(), 2);
        assert_eq!(doc.end_time, 5);
        assert_eq!(doc.declarations[0].reference_name, "tb.clk");
        assert_eq!(doc.value_at_time("!", 4).unwrap(), LogicValue::scalar(Logic::Zero));
        assert_eq!(doc.value_at_time("!", 5).unwrap(), LogicValue::scalar(Logic::One));
    }

    #[test]
    fn empty_body() {
        let doc = parse_vcd("$var wire 1 ! a $end $enddefinitions $end").unwrap();
        assert!(doc.events.is_empty());
        assert_eq!(doc.end_time, 0);
    }

    #[test]
    fn before_first_event_is_unknown() {
        let doc = parse_vcd("$var wire 4 # d $end $enddefinitions $end #3 b1 #").unwrap();
        assert_eq!(doc.value_at_time("#", 2).unwrap(), LogicValue::unknown(4));
        assert_eq!(doc.value_at_time("#", 3).unwrap().to_u64(), Some(1));
    }

    #[test]
    fn vector_padding_rules() {
        let doc = parse_vcd(
            "$var reg 4 a v $end $enddefinitions $end #0 b10 a #1 bx0 a #2 bz a",
        )
        .unwrap();
        assert_eq!(doc.events[0].value.to_string(), "0010");
        assert_eq!(doc.events[1].value.to_string(), "xxx0");
        assert_eq!(doc.events[2].value.to_string(), "zzzz");
    }

    #[test]
    fn dumpvars_block() {
        let doc = parse_vcd(
            "$var wire 1 ! a $end $var wire 2 \" b $end $enddefinitions $end\n#0\n$dumpvars\nx!\nbzz \"\n$end\n#10\n1!\n",
        )
        .unwrap();
        assert_eq!(doc.events.len(), 3);
        assert_eq!(doc.value_at_time("\"", 10).unwrap().to_string(), "zz");
    }

    #[test]
    fn errors() {
        assert!(matches!(
            parse_vcd("$var wire 1 ! a $end #0 1!"),
            Err(VcdError::MalformedHeader(_))
        ));
        assert_eq!(
            parse_vcd("$var wire 1 ! a $end $enddefinitions $end #0 1?"),
            Err(VcdError::UnknownVarId("?".into()))
        );
        assert!(matches!(
            parse_vcd("$var wire 2 ! a $end $enddefinitions $end #0 b101 !"),
            Err(VcdError::WidthMismatch { declared: 2, got: 3, .. })
        ));
        assert!(matches!(
            parse_vcd("$var wire 2 ! a $end $enddefinitions $end #0 1!"),
            Err(VcdError::WidthMismatch { .. })
        ));
        assert!(matches!(
            parse_vcd("$var wire 1 ! a $end $enddefinitions $end #0 $dumpoff"),
            Err(VcdError::Unsupported(_))
        ));
        assert!(matches!(
            parse_vcd("$var wire 1 ! a $end $enddefinitions $end #5 1! #3 0!"),
            Err(VcdError::NonMonotonicTime { .. })
        ));
        assert_eq!(
            parse_vcd(CLK).unwrap().value_at_time("%", 0),
            Err(VcdError::UnknownVarId("%".into()))
        );
    }

    #[test]
    fn aliases_share_an_id() {
        let text = "$scope module tb $end $var wire 1 ! clk $end $scope module dut $end $var wire 1 ! clk $end $upscope $end $upscope $end $enddefinitions $end #0 0!";
        let doc = parse_vcd(text).unwrap();
        assert_eq!(doc.declarations.len(), 1);
        assert_eq!(doc.declarations[0].aliases, vec!["tb.dut.clk".to_string()]);
        assert_eq!(doc.find_var("tb.dut.clk").unwrap().id_code, "!");
        assert_eq!(parse_vcd(&write_vcd(&doc)).unwrap(), doc);
    }

    #[test]
    fn bit_select_suffix_is_dropped() {
        let doc = parse_vcd("$var wire 8 # data [7:0] $end $var wire 8 $ q[7:0] $end $enddefinitions $end").unwrap();
        assert_eq!(doc.declarations[0].reference_name, "data");
        assert_eq!(doc.declarations[1].reference_name, "q");
    }

    #[test]
    fn writer_round_trip() {
        let text = "$timescale 10 ps $end $scope module a $end $var reg 3 x q $end $upscope $end $scope module b $end $var wire 1 y r $end $upscope $end $enddefinitions $end #0 b101 x 1y #7 b0 x #9";
        let doc = parse_vcd(text).unwrap();
        assert_eq!(doc.timescale.magnitude, 10);
        assert_eq!(doc.end_time, 9);
        let again = parse_vcd(&write_vcd(&doc)).unwrap();
        assert_eq!(again, doc);
    }
}
