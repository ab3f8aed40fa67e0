//! Verilog module-header extraction and random-stimulus testbench generation.
//!
//! Only the header is understood: module name, parameters with literal or
//! simple arithmetic defaults, and ANSI or non-ANSI port declarations. The
//! body is ignored. Simulation is left to an external tool (iverilog/vvp).

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::Command;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum VerilogError {
    #[error("no module declaration found")]
    NoModuleFound,
    #[error("found {0} module declarations; expected exactly one")]
    MultipleModules(usize),
    #[error("unparsable port list: {0}")]
    UnparsablePortList(String),
    #[error("simulator unavailable: {0}")]
    SimulatorUnavailable(String),
    #[error("simulation failed: {0}")]
    SimulationFailed(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Input,
    Output,
    Inout,
}

impl Direction {
    fn keyword(self) -> &'static str {
        match self {
            Direction::Input => "input",
            Direction::Output => "output",
            Direction::Inout => "inout",
        }
    }

    fn from_keyword(s: &str) -> Option<Self> {
        match s {
            "input" => Some(Direction::Input),
            "output" => Some(Direction::Output),
            "inout" => Some(Direction::Inout),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Port {
    pub name: String,
    pub direction: Direction,
    pub width: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModuleInfo {
    pub name: String,
    pub ports: Vec<Port>,
    pub name_parts: Vec<String>,
}

impl ModuleInfo {
    pub fn new(name: impl Into<String>, ports: Vec<Port>) -> Self {
        let name = name.into();
        let name_parts = name.split('_').map(str::to_string).collect();
        ModuleInfo {
            name,
            ports,
            name_parts,
        }
    }

    pub fn inputs(&self) -> impl Iterator<Item = &Port> {
        self.ports.iter().filter(|p| p.direction == Direction::Input)
    }

    pub fn outputs(&self) -> impl Iterator<Item = &Port> {
        self.ports.iter().filter(|p| p.direction == Direction::Output)
    }

    /// The input driven by the generated clock, if the module has one.
    pub fn clock_port(&self) -> Option<&Port> {
        self.inputs().find(|p| {
            p.width == 1 && {
                let n = p.name.to_ascii_lowercase();
                n == "clk" || n == "clock" || n.starts_with("clk_") || n.ends_with("_clk")
            }
        })
    }

    /// Inputs that receive random stimulus: every input except the clock.
    pub fn stimulus_inputs(&self) -> impl Iterator<Item = &Port> {
        let clk = self.clock_port().map(|p| p.name.clone());
        self.inputs().filter(move |p| Some(&p.name) != clk.as_ref())
    }

    /// An ANSI header that parses back to the same info.
    pub fn to_header(&self) -> String {
        let ports: Vec<String> = self
            .ports
            .iter()
            .map(|p| {
                if p.width > 1 {
                    format!("{} [{}:0] {}", p.direction.keyword(), p.width - 1, p.name)
                } else {
                    format!("{} {}", p.direction.keyword(), p.name)
                }
            })
            .collect();
        format!("module {}({});\nendmodule\n", self.name, ports.join(", "))
    }
}

fn strip_comments(src: &str) -> String {
    let mut out = String::with_capacity(src.len());
    let mut chars = src.chars().peekable();
    while let Some(c) = chars.next() {
        match (c, chars.peek()) {
            ('/', Some('/')) => {
                for c in chars.by_ref() {
                    if c == '\n' {
                        out.push('\n');
                        break;
                    }
                }
            }
            ('/', Some('*')) => {
                chars.next();
                let mut prev = ' ';
                for c in chars.by_ref() {
                    if prev == '*' && c == '/' {
                        break;
                    }
                    prev = c;
                }
                out.push(' ');
            }
            _ => out.push(c),
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Num(i64),
    Punct(char),
}

fn tokenize(src: &str) -> Vec<Tok> {
    let mut toks = Vec::new();
    let chars: Vec<char> = src.chars().collect();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            i += 1;
        } else if c.is_ascii_alphabetic() || c == '_' || c == '$' || c == '`' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_' || chars[i] == '$' || chars[i] == '`') {
                i += 1;
            }
            toks.push(Tok::Ident(chars[start..i].iter().collect()));
        } else if c == '\\' {
            // escaped identifier, terminated by whitespace
            let start = i + 1;
            while i < chars.len() && !chars[i].is_whitespace() {
                i += 1;
            }
            toks.push(Tok::Ident(chars[start..i].iter().collect()));
        } else if c.is_ascii_digit() {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '\'' || chars[i] == '_') {
                i += 1;
            }
            let text: String = chars[start..i].iter().filter(|&&c| c != '_').collect();
            toks.push(number_token(&text));
        } else if c == '\'' {
            // unsized based literal such as 'd10
            let start = i;
            i += 1;
            while i < chars.len() && chars[i].is_ascii_alphanumeric() {
                i += 1;
            }
            let text: String = chars[start..i].iter().collect();
            toks.push(number_token(&format!("32{text}")));
        } else if c == '"' {
            i += 1;
            while i < chars.len() && chars[i] != '"' {
                i += 1;
            }
            i += 1;
        } else {
            toks.push(Tok::Punct(c));
            i += 1;
        }
    }
    toks
}

// Literals with x/z digits only occur in bodies; they never size a port.
fn number_token(text: &str) -> Tok {
    parse_number(text).map(Tok::Num).unwrap_or(Tok::Punct('?'))
}

fn parse_number(text: &str) -> Result<i64, VerilogError> {
    let bad = || VerilogError::UnparsablePortList(format!("bad number `{text}`"));
    match text.split_once('\'') {
        None => text.parse().map_err(|_| bad()),
        Some((_, based)) => {
            let based = based.trim_start_matches(['s', 'S']);
            let (radix, digits) = match based.chars().next() {
                Some('d' | 'D') => (10, &based[1..]),
                Some('h' | 'H') => (16, &based[1..]),
                Some('b' | 'B') => (2, &based[1..]),
                Some('o' | 'O') => (8, &based[1..]),
                _ => return Err(bad()),
            };
            i64::from_str_radix(digits, radix).map_err(|_| bad())
        }
    }
}

struct Parser<'a> {
    toks: &'a [Tok],
    pos: usize,
    params: HashMap<String, i64>,
}

impl<'a> Parser<'a> {
    fn peek(&self) -> Option<&'a Tok> {
        self.toks.get(self.pos)
    }

    fn bump(&mut self) -> Option<&'a Tok> {
        let t = self.toks.get(self.pos);
        self.pos += 1;
        t
    }

    fn err(&self, msg: &str) -> VerilogError {
        VerilogError::UnparsablePortList(format!("{msg} (at token {})", self.pos))
    }

    fn is_punct(&self, c: char) -> bool {
        self.peek() == Some(&Tok::Punct(c))
    }

    fn expect_punct(&mut self, c: char) -> Result<(), VerilogError> {
        if self.is_punct(c) {
            self.pos += 1;
            Ok(())
        } else {
            Err(self.err(&format!("expected `{c}`")))
        }
    }

    fn ident(&mut self) -> Result<String, VerilogError> {
        match self.bump() {
            Some(Tok::Ident(s)) => Ok(s.clone()),
            _ => Err(self.err("expected identifier")),
        }
    }

    // Constant expressions: + - * / and parentheses over numbers and parameters.
    fn expr(&mut self) -> Result<i64, VerilogError> {
        let mut v = self.term()?;
        loop {
            if self.is_punct('+') {
                self.pos += 1;
                v += self.term()?;
            } else if self.is_punct('-') {
                self.pos += 1;
                v -= self.term()?;
            } else {
                return Ok(v);
            }
        }
    }

    fn term(&mut self) -> Result<i64, VerilogError> {
        let mut v = self.atom()?;
        loop {
            if self.is_punct('*') {
                self.pos += 1;
                v *= self.atom()?;
            } else if self.is_punct('/') {
                self.pos += 1;
                let d = self.atom()?;
                if d == 0 {
                    return Err(self.err("division by zero"));
                }
                v /= d;
            } else {
                return Ok(v);
            }
        }
    }

    fn atom(&mut self) -> Result<i64, VerilogError> {
        match self.bump() {
            Some(Tok::Num(n)) => Ok(*n),
            Some(Tok::Ident(name)) => self
                .params
                .get(name)
                .copied()
                .ok_or_else(|| self.err(&format!("unknown parameter `{name}`"))),
            Some(Tok::Punct('(')) => {
                let v = self.expr()?;
                self.expect_punct(')')?;
                Ok(v)
            }
            Some(Tok::Punct('-')) => Ok(-self.atom()?),
            _ => Err(self.err("expected constant expression")),
        }
    }

    /// `[msb:lsb]` → width; absent → 1.
    fn range(&mut self) -> Result<u32, VerilogError> {
        if !self.is_punct('[') {
            return Ok(1);
        }
        self.pos += 1;
        let msb = self.expr()?;
        self.expect_punct(':')?;
        let lsb = self.expr()?;
        self.expect_punct(']')?;
        let w = (msb - lsb).unsigned_abs() + 1;
        u32::try_from(w).map_err(|_| self.err("range too wide"))
    }

    /// `parameter [type] [range] NAME = expr {, NAME = expr}`; stops before `;`, `)` or the next `parameter`.
    fn parameter_list(&mut self) -> Result<(), VerilogError> {
        loop {
            while matches!(self.peek(), Some(Tok::Ident(k)) if matches!(k.as_str(), "parameter" | "localparam" | "integer" | "signed" | "unsigned")) {
                self.pos += 1;
            }
            self.range()?;
            let name = self.ident()?;
            self.expect_punct('=')?;
            let v = self.expr()?;
            self.params.insert(name, v);
            if self.is_punct(',') {
                self.pos += 1;
                continue;
            }
            return Ok(());
        }
    }

    fn skip_types(&mut self) {
        while matches!(self.peek(), Some(Tok::Ident(k)) if matches!(k.as_str(), "wire" | "reg" | "logic" | "signed" | "unsigned" | "tri" | "var")) {
            self.pos += 1;
        }
    }
}

/// Extracts the interface of the single module in `source`.
pub fn parse_module_header(source: &str) -> Result<ModuleInfo, VerilogError> {
    let toks = tokenize(&strip_comments(source));
    let starts: Vec<usize> = toks
        .iter()
        .enumerate()
        .filter(|(_, t)| matches!(t, Tok::Ident(k) if k == "module" || k == "macromodule"))
        .map(|(i, _)| i)
        .collect();
    match starts.len() {
        0 => return Err(VerilogError::NoModuleFound),
        1 => {}
        n => return Err(VerilogError::MultipleModules(n)),
    }
    let end = toks
        .iter()
        .position(|t| matches!(t, Tok::Ident(k) if k == "endmodule"))
        .unwrap_or(toks.len());
    let mut p = Parser {
        toks: &toks[..end],
        pos: starts[0] + 1,
        params: HashMap::new(),
    };
    let name = p.ident()?;

    if p.is_punct('#') {
        p.pos += 1;
        p.expect_punct('(')?;
        if !p.is_punct(')') {
            p.parameter_list()?;
        }
        p.expect_punct(')')?;
    }

    let mut ports: Vec<Port> = Vec::new();
    let mut non_ansi: Vec<String> = Vec::new();
    if p.is_punct('(') {
        p.pos += 1;
        let mut current: Option<(Direction, u32)> = None;
        while !p.is_punct(')') {
            if let Some(Tok::Ident(k)) = p.peek() {
                if let Some(dir) = Direction::from_keyword(k) {
                    p.pos += 1;
                    p.skip_types();
                    let w = p.range()?;
                    current = Some((dir, w));
                }
            }
            let port = p.ident()?;
            match current {
                Some((direction, width)) => ports.push(Port {
                    name: port,
                    direction,
                    width,
                }),
                None => non_ansi.push(port),
            }
            // unpacked dimensions on ports are not supported
            if p.is_punct('[') {
                return Err(p.err("unpacked port dimensions"));
            }
            if p.is_punct(',') {
                p.pos += 1;
            } else if !p.is_punct(')') {
                return Err(p.err("expected `,` or `)` in port list"));
            }
        }
        p.pos += 1;
        if !ports.is_empty() && !non_ansi.is_empty() {
            return Err(p.err("mixed ANSI and non-ANSI ports"));
        }
    }
    p.expect_punct(';')?;

    if !non_ansi.is_empty() {
        // Non-ANSI: directions come from body declarations.
        let mut found: HashMap<String, (Direction, u32)> = HashMap::new();
        while let Some(t) = p.bump() {
            match t {
                Tok::Ident(k) if k == "parameter" || k == "localparam" => {
                    p.parameter_list()?;
                }
                Tok::Ident(k) if Direction::from_keyword(k).is_some() => {
                    let dir = Direction::from_keyword(k).unwrap();
                    p.skip_types();
                    let w = p.range()?;
                    loop {
                        let n = p.ident()?;
                        found.insert(n, (dir, w));
                        if p.is_punct(',') {
                            p.pos += 1;
                        } else {
                            break;
                        }
                    }
                }
                _ => {}
            }
        }
        for n in non_ansi {
            let (direction, width) = found
                .get(&n)
                .copied()
                .ok_or_else(|| VerilogError::UnparsablePortList(format!("port `{n}` has no direction declaration")))?;
            ports.push(Port {
                name: n,
                direction,
                width,
            });
        }
    }

    let mut seen = std::collections::HashSet::new();
    for port in &ports {
        if !seen.insert(port.name.as_str()) {
            return Err(VerilogError::UnparsablePortList(format!("duplicate port `{}`", port.name)));
        }
        if port.width == 0 {
            return Err(VerilogError::UnparsablePortList(format!("port `{}` has zero width", port.name)));
        }
    }
    Ok(ModuleInfo::new(name, ports))
}

/// Writes a self-checking-free stimulus testbench for `m`.
///
/// A generated clock starts low with period `clock_period_ticks` (rounded down
/// to an even number, minimum 2). Random values for every non-clock input are
/// precomputed from `seed` and applied at time 0 and then on each falling
/// edge, so the rising edges sample stable inputs. The run finishes on the
/// falling edge after the `num_cycles`-th rising edge.
pub fn generate_testbench(m: &ModuleInfo, seed: u64, num_cycles: usize, clock_period_ticks: u64) -> String {
    let half = (clock_period_ticks / 2).max(1);
    let num_cycles = num_cycles.max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tb = format!("tb_{}", m.name);
    let clock = m.clock_port().map(|p| p.name.clone()).unwrap_or_else(|| "tb_clk".to_string());
    let stim: Vec<&Port> = m.stimulus_inputs().collect();

    let mut s = String::new();
    let _ = writeln!(s, "`timescale 1ns/1ns");
    let _ = writeln!(s, "// random stimulus for {}: seed {seed}, {num_cycles} cycles", m.name);
    let _ = writeln!(s, "module {tb};");
    let _ = writeln!(s, "  reg {clock} = 1'b0;");
    for p in &stim {
        let _ = writeln!(s, "  reg {}{};", range_decl(p.width), p.name);
    }
    for p in m.ports.iter().filter(|p| p.direction != Direction::Input) {
        let _ = writeln!(s, "  wire {}{};", range_decl(p.width), p.name);
    }
    let conns: Vec<String> = m.ports.iter().map(|p| format!(".{0}({0})", p.name)).collect();
    let _ = writeln!(s, "  {} dut ({});", m.name, conns.join(", "));
    let _ = writeln!(s, "  always #{half} {clock} = ~{clock};");
    let _ = writeln!(s, "  initial begin");
    let _ = writeln!(s, "    $dumpfile(\"{}.vcd\");", m.name);
    let _ = writeln!(s, "    $dumpvars(0, {tb});");
    for cycle in 0..num_cycles {
        if cycle > 0 {
            let _ = writeln!(s, "    #{};", 2 * half);
        }
        for p in &stim {
            let bits: String = (0..p.width).map(|_| if rng.gen::<bool>() { '1' } else { '0' }).collect();
            let _ = writeln!(s, "    {} = {}'b{};", p.name, p.width, bits);
        }
    }
    let _ = writeln!(s, "    #{};", 2 * half);
    let _ = writeln!(s, "    $finish;");
    let _ = writeln!(s, "  end");
    let _ = writeln!(s, "endmodule");
    s
}

fn range_decl(width: u32) -> String {
    if width > 1 {
        format!("[{}:0] ", width - 1)
    } else {
        String::new()
    }
}

/// Compiles and runs `testbench` against `module_src` with iverilog/vvp in
/// `work_dir`, returning the path of the dumped VCD.
pub fn run_simulator(module_src: &Path, testbench: &Path, module_name: &str, work_dir: &Path) -> Result<PathBuf, VerilogError> {
    let sim = work_dir.join("sim.vvp");
    let out = Command::new("iverilog")
        .arg("-o")
        .arg(&sim)
        .arg(module_src)
        .arg(testbench)
        .output()
        .map_err(|e| VerilogError::SimulatorUnavailable(format!("iverilog: {e}")))?;
    if !out.status.success() {
        return Err(VerilogError::SimulationFailed(String::from_utf8_lossy(&out.stderr).into_owned()));
    }
    let out = Command::new("vvp")
        .arg(&sim)
        .current_dir(work_dir)
        .output()
        .map_err(|e| VerilogError::SimulatorUnavailable(format!("vvp: {e}")))?;
    if !out.status.success() {
        return Err(VerilogError::SimulationFailed(String::from_utf8_lossy(&out.stderr).into_owned()));
    }
    let vcd = work_dir.join(format!("{module_name}.vcd"));
    if !vcd.exists() {
        return Err(VerilogError::SimulationFailed(format!("{} was not written", vcd.display())));
    }
    Ok(vcd)
}
