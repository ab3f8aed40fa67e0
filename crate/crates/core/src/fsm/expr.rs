//! Expression language for machine definitions.
//!
//! Unsigned 64-bit wrapping arithmetic; comparisons and logical operators
//! yield 0/1. Precedence, lowest first: `?:`, `||`, `&&`, `|`, `^`, `&`,
//! `== !=`, `< <= > >=`, `<< >>`, `+ -`, unary `! ~ -`. The only function is
//! `parity(e)`, the XOR-reduction of `e`.

use std::fmt;

use super::FsmError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Or,
    And,
    BitOr,
    BitXor,
    BitAnd,
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
    Shl,
    Shr,
    Add,
    Sub,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnOp {
    Not,
    BitNot,
    Neg,
}

/// Parsed expression; identifiers are resolved to slots by [`Expr::resolve`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Expr {
    Num(u64),
    Ident(String),
    Slot(usize),
    Unary(UnOp, Box<Expr>),
    Binary(BinOp, Box<Expr>, Box<Expr>),
    Cond(Box<Expr>, Box<Expr>, Box<Expr>),
    Parity(Box<Expr>),
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Tok {
    Num(u64),
    Ident(String),
    Op(&'static str),
}

const OPS: [&str; 24] = [
    "<<", ">>", "<=", ">=", "==", "!=", "&&", "||", "<", ">", "+", "-", "!", "~", "^", "&", "|", "(", ")", "?", ":", "*", "/", "%",
];

fn lex(src: &str) -> Result<Vec<Tok>, FsmError> {
    let mut out = Vec::new();
    let b = src.as_bytes();
    let mut i = 0;
    while i < b.len() {
        let c = b[i] as char;
        if c.is_ascii_whitespace() {
            i += 1;
        } else if c.is_ascii_digit() {
            let start = i;
            while i < b.len() && (b[i] as char).is_ascii_alphanumeric() {
                i += 1;
            }
            let text = &src[start..i];
            let n = if let Some(h) = text.strip_prefix("0x") {
                u64::from_str_radix(h, 16)
            } else if let Some(bin) = text.strip_prefix("0b") {
                u64::from_str_radix(bin, 2)
            } else {
                text.parse()
            }
            .map_err(|_| FsmError::Expr(format!("bad number `{text}` in `{src}`")))?;
            out.push(Tok::Num(n));
        } else if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < b.len() && ((b[i] as char).is_ascii_alphanumeric() || b[i] == b'_') {
                i += 1;
            }
            out.push(Tok::Ident(src[start..i].to_string()));
        } else {
            let op = OPS
                .iter()
                .find(|op| src[i..].starts_with(**op))
                .ok_or_else(|| FsmError::Expr(format!("unexpected `{c}` in `{src}`")))?;
            if matches!(*op, "*" | "/" | "%") {
                return Err(FsmError::Expr(format!("operator `{op}` is not supported in `{src}`")));
            }
            out.push(Tok::Op(op));
            i += op.len();
        }
    }
    Ok(out)
}

struct Parser<'a> {
    toks: Vec<Tok>,
    pos: usize,
    src: &'a str,
}

const LEVELS: [&[(&str, BinOp)]; 9] = [
    &[("||", BinOp::Or)],
    &[("&&", BinOp::And)],
    &[("|", BinOp::BitOr)],
    &[("^", BinOp::BitXor)],
    &[("&", BinOp::BitAnd)],
    &[("==", BinOp::Eq), ("!=", BinOp::Ne)],
    &[("<=", BinOp::Le), (">=", BinOp::Ge), ("<", BinOp::Lt), (">", BinOp::Gt)],
    &[("<<", BinOp::Shl), (">>", BinOp::Shr)],
    &[("+", BinOp::Add), ("-", BinOp::Sub)],
];

impl Parser<'_> {
    fn err(&self, msg: &str) -> FsmError {
        FsmError::Expr(format!("{msg} in `{}`", self.src))
    }

    fn eat(&mut self, op: &str) -> bool {
        if matches!(self.toks.get(self.pos), Some(Tok::Op(o)) if *o == op) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn cond(&mut self) -> Result<Expr, FsmError> {
        let c = self.binary(0)?;
        if self.eat("?") {
            let a = self.cond()?;
            if !self.eat(":") {
                return Err(self.err("expected `:`"));
            }
            let b = self.cond()?;
            return Ok(Expr::Cond(Box::new(c), Box::new(a), Box::new(b)));
        }
        Ok(c)
    }

    fn binary(&mut self, level: usize) -> Result<Expr, FsmError> {
        if level == LEVELS.len() {
            return self.unary();
        }
        let mut lhs = self.binary(level + 1)?;
        'outer: loop {
            for (sym, op) in LEVELS[level] {
                if self.eat(sym) {
                    let rhs = self.binary(level + 1)?;
                    lhs = Expr::Binary(*op, Box::new(lhs), Box::new(rhs));
                    continue 'outer;
                }
            }
            return Ok(lhs);
        }
    }

    fn unary(&mut self) -> Result<Expr, FsmError> {
        for (sym, op) in [("!", UnOp::Not), ("~", UnOp::BitNot), ("-", UnOp::Neg)] {
            if self.eat(sym) {
                return Ok(Expr::Unary(op, Box::new(self.unary()?)));
            }
        }
        self.primary()
    }

    fn primary(&mut self) -> Result<Expr, FsmError> {
        match self.toks.get(self.pos).cloned() {
            Some(Tok::Num(n)) => {
                self.pos += 1;
                Ok(Expr::Num(n))
            }
            Some(Tok::Ident(name)) => {
                self.pos += 1;
                if name == "parity" {
                    if !self.eat("(") {
                        return Err(self.err("expected `(` after parity"));
                    }
                    let e = self.cond()?;
                    if !self.eat(")") {
                        return Err(self.err("expected `)`"));
                    }
                    return Ok(Expr::Parity(Box::new(e)));
                }
                Ok(Expr::Ident(name))
            }
            Some(Tok::Op("(")) => {
                self.pos += 1;
                let e = self.cond()?;
                if !self.eat(")") {
                    return Err(self.err("expected `)`"));
                }
                Ok(e)
            }
            _ => Err(self.err("expected operand")),
        }
    }
}

impl Expr {
    pub fn parse(src: &str) -> Result<Expr, FsmError> {
        let mut p = Parser {
            toks: lex(src)?,
            pos: 0,
            src,
        };
        if p.toks.is_empty() {
            return Err(FsmError::Expr("empty expression".into()));
        }
        let e = p.cond()?;
        if p.pos != p.toks.len() {
            return Err(p.err("trailing tokens"));
        }
        Ok(e)
    }

    /// Replaces identifiers by slot indices (or constants, for state names).
    pub fn resolve(&self, lookup: &dyn Fn(&str) -> Option<Expr>) -> Result<Expr, FsmError> {
        Ok(match self {
            Expr::Ident(name) => lookup(name).ok_or_else(|| FsmError::Expr(format!("unknown identifier `{name}`")))?,
            Expr::Num(_) | Expr::Slot(_) => self.clone(),
            Expr::Unary(op, e) => Expr::Unary(*op, Box::new(e.resolve(lookup)?)),
            Expr::Binary(op, a, b) => Expr::Binary(*op, Box::new(a.resolve(lookup)?), Box::new(b.resolve(lookup)?)),
            Expr::Cond(c, a, b) => Expr::Cond(
                Box::new(c.resolve(lookup)?),
                Box::new(a.resolve(lookup)?),
                Box::new(b.resolve(lookup)?),
            ),
            Expr::Parity(e) => Expr::Parity(Box::new(e.resolve(lookup)?)),
        })
    }

    /// Evaluates a resolved expression against slot values.
    pub fn eval(&self, slots: &[u64]) -> u64 {
        match self {
            Expr::Num(n) => *n,
            Expr::Slot(i) => slots[*i],
            Expr::Ident(name) => panic!("unresolved identifier `{name}`"),
            Expr::Unary(op, e) => {
                let v = e.eval(slots);
                match op {
                    UnOp::Not => u64::from(v == 0),
                    UnOp::BitNot => !v,
                    UnOp::Neg => v.wrapping_neg(),
                }
            }
            Expr::Binary(op, a, b) => {
                let x = a.eval(slots);
                // short-circuit forms
                match op {
                    BinOp::And if x == 0 => return 0,
                    BinOp::Or if x != 0 => return 1,
                    _ => {}
                }
                let y = b.eval(slots);
                match op {
                    BinOp::Or | BinOp::And => u64::from(y != 0),
                    BinOp::BitOr => x | y,
                    BinOp::BitXor => x ^ y,
                    BinOp::BitAnd => x & y,
                    BinOp::Eq => u64::from(x == y),
                    BinOp::Ne => u64::from(x != y),
                    BinOp::Lt => u64::from(x < y),
                    BinOp::Le => u64::from(x <= y),
                    BinOp::Gt => u64::from(x > y),
                    BinOp::Ge => u64::from(x >= y),
                    BinOp::Shl => x.checked_shl(y as u32).unwrap_or(0),
                    BinOp::Shr => x.checked_shr(y as u32).unwrap_or(0),
                    BinOp::Add => x.wrapping_add(y),
                    BinOp::Sub => x.wrapping_sub(y),
                }
            }
            Expr::Cond(c, a, b) => {
                if c.eval(slots) != 0 {
                    a.eval(slots)
                } else {
                    b.eval(slots)
                }
            }
            Expr::Parity(e) => u64::from(e.eval(slots).count_ones() % 2 == 1),
        }
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Num(n) => write!(f, "{n}"),
            Expr::Ident(s) => f.write_str(s),
            Expr::Slot(i) => write!(f, "${i}"),
            Expr::Unary(op, e) => {
                let s = match op {
                    UnOp::Not => "!",
                    UnOp::BitNot => "~",
                    UnOp::Neg => "-",
                };
                write!(f, "{s}({e})")
            }
            Expr::Binary(op, a, b) => {
                let s = LEVELS
                    .iter()
                    .flat_map(|l| l.iter())
                    .find(|(_, o)| o == op)
                    .map(|(s, _)| *s)
                    .unwrap_or("?");
                write!(f, "({a} {s} {b})")
            }
            Expr::Cond(c, a, b) => write!(f, "({c} ? {a} : {b})"),
            Expr::Parity(e) => write!(f, "parity({e})"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn eval(src: &str, vars: &[(&str, u64)]) -> u64 {
        let e = Expr::parse(src).unwrap();
        let r = e
            .resolve(&|n| vars.iter().position(|(v, _)| *v == n).map(Expr::Slot))
            .unwrap();
        let slots: Vec<u64> = vars.iter().map(|(_, v)| *v).collect();
        r.eval(&slots)
    }

    #[test]
    fn precedence() {
        assert_eq!(eval("1 + 2 << 1", &[]), 6);
        assert_eq!(eval("1 | 2 ^ 3 & 1", &[]), 1 | (2 ^ (3 & 1)));
        assert_eq!(eval("a == 1 && b < 9 || 0", &[("a", 1), ("b", 3)]), 1);
        assert_eq!(eval("!a ? 5 : b + 1", &[("a", 0), ("b", 3)]), 5);
        assert_eq!(eval("a ? 1 : b ? 2 : 3", &[("a", 0), ("b", 1)]), 2);
        assert_eq!(eval("(out >> 1) | (in << 7)", &[("out", 0b10), ("in", 1)]), 0x81);
        assert_eq!(eval("parity(0b1011)", &[]), 1);
        assert_eq!(eval("parity(0x3)", &[]), 0);
        assert_eq!(eval("0 - 1", &[]), u64::MAX);
        assert_eq!(eval("~0 >> 63", &[]), 1);
    }

    #[test]
    fn errors() {
        assert!(Expr::parse("").is_err());
        assert!(Expr::parse("1 +").is_err());
        assert!(Expr::parse("a b").is_err());
        assert!(Expr::parse("a * 2").is_err());
        assert!(Expr::parse("(a").is_err());
        assert!(Expr::parse("a ? b").is_err());
        let e = Expr::parse("nope + 1").unwrap();
        assert!(e.resolve(&|_| None).is_err());
    }
}
