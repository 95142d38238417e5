//! Coefficient expressions `b(f, x)` and `a(f, x)`.
//!
//! A small, fixed grammar over the two variables `f` (control) and `x`
//! (state):
//!
//! ```text
//! expr    := sum
//! sum     := product (('+' | '-') product)*
//! product := unary (('*' | '/') unary)*
//! unary   := '-' unary | power
//! power   := primary ('^' unary)?          right-associative
//! primary := number | 'f' | 'x' | func '(' args ')' | '(' expr ')'
//! func    := sin | cos | exp | sqrt | abs  (one argument)
//!          | min | max                     (two arguments)
//! ```
//!
//! `^` binds tighter than unary minus, so `-x^2` is `-(x^2)`.

use std::fmt;

use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Var {
    F,
    X,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Func1 {
    Sin,
    Cos,
    Exp,
    Sqrt,
    Abs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Func2 {
    Min,
    Max,
}

/// Parsed expression tree. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Num(f64),
    Var(Var),
    Neg(Box<Expr>),
    Binary(BinOp, Box<Expr>, Box<Expr>),
    Call1(Func1, Box<Expr>),
    Call2(Func2, Box<Expr>, Box<Expr>),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParseError {
    #[error("syntax error at offset {offset}: expected one of [{}], found {found}", expected.join(", "))]
    Syntax {
        offset: usize,
        expected: Vec<&'static str>,
        found: String,
    },
    #[error("unknown identifier `{name}` at offset {offset}")]
    UnknownIdentifier { name: String, offset: usize },
}

impl ParseError {
    pub fn offset(&self) -> usize {
        match self {
            ParseError::Syntax { offset, .. } | ParseError::UnknownIdentifier { offset, .. } => {
                *offset
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("{op} outside its domain at f={f}, x={x}")]
    Domain { op: &'static str, f: f64, x: f64 },
    #[error("{op} produced a non-finite value at f={f}, x={x}")]
    NonFinite { op: &'static str, f: f64, x: f64 },
}

impl Func1 {
    fn name(self) -> &'static str {
        match self {
            Func1::Sin => "sin",
            Func1::Cos => "cos",
            Func1::Exp => "exp",
            Func1::Sqrt => "sqrt",
            Func1::Abs => "abs",
        }
    }
}

impl Func2 {
    fn name(self) -> &'static str {
        match self {
            Func2::Min => "min",
            Func2::Max => "max",
        }
    }
}

impl BinOp {
    fn symbol(self) -> &'static str {
        match self {
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Mul => "*",
            BinOp::Div => "/",
            BinOp::Pow => "^",
        }
    }
}

impl Expr {
    pub fn parse(text: &str) -> Result<Expr, ParseError> {
        parse(text)
    }

    /// Evaluates the tree in IEEE-754 double precision. Every intermediate
    /// result must be finite.
    pub fn eval(&self, f: f64, x: f64) -> Result<f64, EvalError> {
        let check = |op: &'static str, v: f64| {
            if v.is_finite() {
                Ok(v)
            } else {
                Err(EvalError::NonFinite { op, f, x })
            }
        };
        match self {
            Expr::Num(v) => Ok(*v),
            Expr::Var(Var::F) => check("variable f", f),
            Expr::Var(Var::X) => check("variable x", x),
            Expr::Neg(e) => Ok(-e.eval(f, x)?),
            Expr::Binary(op, l, r) => {
                let a = l.eval(f, x)?;
                let b = r.eval(f, x)?;
                let v = match op {
                    BinOp::Add => a + b,
                    BinOp::Sub => a - b,
                    BinOp::Mul => a * b,
                    BinOp::Div => {
                        if b == 0.0 {
                            return Err(EvalError::Domain { op: "/", f, x });
                        }
                        a / b
                    }
                    BinOp::Pow => {
                        if a < 0.0 && b.fract() != 0.0 {
                            return Err(EvalError::Domain { op: "^", f, x });
                        }
                        if a == 0.0 && b < 0.0 {
                            return Err(EvalError::Domain { op: "^", f, x });
                        }
                        a.powf(b)
                    }
                };
                check(op.symbol(), v)
            }
            Expr::Call1(func, arg) => {
                let a = arg.eval(f, x)?;
                let v = match func {
                    Func1::Sin => a.sin(),
                    Func1::Cos => a.cos(),
                    Func1::Exp => a.exp(),
                    Func1::Sqrt => {
                        if a < 0.0 {
                            return Err(EvalError::Domain { op: "sqrt", f, x });
                        }
                        a.sqrt()
                    }
                    Func1::Abs => a.abs(),
                };
                check(func.name(), v)
            }
            Expr::Call2(func, l, r) => {
                let a = l.eval(f, x)?;
                let b = r.eval(f, x)?;
                Ok(match func {
                    Func2::Min => a.min(b),
                    Func2::Max => a.max(b),
                })
            }
        }
    }

    pub fn uses(&self, var: Var) -> bool {
        match self {
            Expr::Num(_) => false,
            Expr::Var(v) => *v == var,
            Expr::Neg(e) | Expr::Call1(_, e) => e.uses(var),
            Expr::Binary(_, l, r) | Expr::Call2(_, l, r) => l.uses(var) || r.uses(var),
        }
    }
}

/// Fully parenthesized rendering; `parse(e.to_string())` rebuilds `e`.
impl fmt::Display for Expr {
    fn fmt(&self, out: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Num(v) => write!(out, "{v:?}"),
            Expr::Var(Var::F) => out.write_str("f"),
            Expr::Var(Var::X) => out.write_str("x"),
            Expr::Neg(e) => write!(out, "(-{e})"),
            Expr::Binary(op, l, r) => write!(out, "({l} {} {r})", op.symbol()),
            Expr::Call1(func, a) => write!(out, "{}({a})", func.name()),
            Expr::Call2(func, a, b) => write!(out, "{}({a}, {b})", func.name()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Plus,
    Minus,
    Star,
    Slash,
    Caret,
    LParen,
    RParen,
    Comma,
    End,
}

impl Tok {
    fn describe(&self) -> String {
        match self {
            Tok::Num(v) => format!("number {v}"),
            Tok::Ident(s) => format!("identifier `{s}`"),
            Tok::Plus => "'+'".into(),
            Tok::Minus => "'-'".into(),
            Tok::Star => "'*'".into(),
            Tok::Slash => "'/'".into(),
            Tok::Caret => "'^'".into(),
            Tok::LParen => "'('".into(),
            Tok::RParen => "')'".into(),
            Tok::Comma => "','".into(),
            Tok::End => "end of input".into(),
        }
    }
}

const OPERAND: &[&str] = &["number", "identifier", "'('", "'-'"];
const OPERATOR: &[&str] = &["'+'", "'-'", "'*'", "'/'", "'^'", "end of input"];

fn lex(text: &str) -> Result<Vec<(Tok, usize)>, ParseError> {
    let bytes = text.as_bytes();
    let mut toks = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        let start = i;
        let tok = match c {
            b' ' | b'\t' | b'\n' | b'\r' => {
                i += 1;
                continue;
            }
            b'+' => Tok::Plus,
            b'-' => Tok::Minus,
            b'*' => Tok::Star,
            b'/' => Tok::Slash,
            b'^' => Tok::Caret,
            b'(' => Tok::LParen,
            b')' => Tok::RParen,
            b',' => Tok::Comma,
            b'0'..=b'9' | b'.' => {
                let mut j = i;
                while j < bytes.len() && (bytes[j].is_ascii_digit() || bytes[j] == b'.') {
                    j += 1;
                }
                if j < bytes.len() && (bytes[j] == b'e' || bytes[j] == b'E') {
                    let mut k = j + 1;
                    if k < bytes.len() && (bytes[k] == b'+' || bytes[k] == b'-') {
                        k += 1;
                    }
                    if k < bytes.len() && bytes[k].is_ascii_digit() {
                        while k < bytes.len() && bytes[k].is_ascii_digit() {
                            k += 1;
                        }
                        j = k;
                    }
                }
                let lit = &text[i..j];
                let value: f64 = lit.parse().map_err(|_| ParseError::Syntax {
                    offset: start,
                    expected: vec!["number"],
                    found: format!("malformed literal `{lit}`"),
                })?;
                if !value.is_finite() {
                    return Err(ParseError::Syntax {
                        offset: start,
                        expected: vec!["finite number"],
                        found: format!("literal `{lit}` out of range"),
                    });
                }
                toks.push((Tok::Num(value), start));
                i = j;
                continue;
            }
            c if c.is_ascii_alphabetic() || c == b'_' => {
                let mut j = i;
                while j < bytes.len() && (bytes[j].is_ascii_alphanumeric() || bytes[j] == b'_') {
                    j += 1;
                }
                toks.push((Tok::Ident(text[i..j].to_string()), start));
                i = j;
                continue;
            }
            _ => {
                let ch = text[i..].chars().next().unwrap_or('?');
                return Err(ParseError::Syntax {
                    offset: start,
                    expected: OPERAND.to_vec(),
                    found: format!("character {ch:?}"),
                });
            }
        };
        toks.push((tok, start));
        i += 1;
    }
    toks.push((Tok::End, text.len()));
    Ok(toks)
}

struct Parser {
    toks: Vec<(Tok, usize)>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.pos].0
    }

    fn offset(&self) -> usize {
        self.toks[self.pos].1
    }

    fn bump(&mut self) -> (Tok, usize) {
        let t = self.toks[self.pos].clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn error(&self, expected: &[&'static str]) -> ParseError {
        ParseError::Syntax {
            offset: self.offset(),
            expected: expected.to_vec(),
            found: self.peek().describe(),
        }
    }

    fn expect(&mut self, tok: Tok, name: &'static str) -> Result<(), ParseError> {
        if *self.peek() == tok {
            self.bump();
            Ok(())
        } else {
            Err(self.error(&[name]))
        }
    }

    fn sum(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.product()?;
        loop {
            let op = match self.peek() {
                Tok::Plus => BinOp::Add,
                Tok::Minus => BinOp::Sub,
                _ => return Ok(lhs),
            };
            self.bump();
            let rhs = self.product()?;
            lhs = Expr::Binary(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn product(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.unary()?;
        loop {
            let op = match self.peek() {
                Tok::Star => BinOp::Mul,
                Tok::Slash => BinOp::Div,
                _ => return Ok(lhs),
            };
            self.bump();
            let rhs = self.unary()?;
            lhs = Expr::Binary(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn unary(&mut self) -> Result<Expr, ParseError> {
        if *self.peek() == Tok::Minus {
            self.bump();
            return Ok(Expr::Neg(Box::new(self.unary()?)));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr, ParseError> {
        let base = self.primary()?;
        if *self.peek() == Tok::Caret {
            self.bump();
            let exponent = self.unary()?;
            return Ok(Expr::Binary(BinOp::Pow, Box::new(base), Box::new(exponent)));
        }
        Ok(base)
    }

    fn primary(&mut self) -> Result<Expr, ParseError> {
        match self.peek().clone() {
            Tok::Num(v) => {
                self.bump();
                Ok(Expr::Num(v))
            }
            Tok::LParen => {
                self.bump();
                let inner = self.sum()?;
                self.expect(Tok::RParen, "')'")?;
                Ok(inner)
            }
            Tok::Ident(name) => {
                let offset = self.offset();
                self.bump();
                match name.as_str() {
                    "f" => return Ok(Expr::Var(Var::F)),
                    "x" => return Ok(Expr::Var(Var::X)),
                    _ => {}
                }
                let unary = match name.as_str() {
                    "sin" => Some(Func1::Sin),
                    "cos" => Some(Func1::Cos),
                    "exp" => Some(Func1::Exp),
                    "sqrt" => Some(Func1::Sqrt),
                    "abs" => Some(Func1::Abs),
                    _ => None,
                };
                let binary = match name.as_str() {
                    "min" => Some(Func2::Min),
                    "max" => Some(Func2::Max),
                    _ => None,
                };
                if unary.is_none() && binary.is_none() {
                    return Err(ParseError::UnknownIdentifier { name, offset });
                }
                self.expect(Tok::LParen, "'('")?;
                let first = self.sum()?;
                if let Some(func) = unary {
                    self.expect(Tok::RParen, "')'")?;
                    return Ok(Expr::Call1(func, Box::new(first)));
                }
                self.expect(Tok::Comma, "','")?;
                let second = self.sum()?;
                self.expect(Tok::RParen, "')'")?;
                Ok(Expr::Call2(
                    binary.expect("checked above"),
                    Box::new(first),
                    Box::new(second),
                ))
            }
            _ => Err(self.error(OPERAND)),
        }
    }
}

pub fn parse(text: &str) -> Result<Expr, ParseError> {
    let toks = lex(text)?;
    let mut parser = Parser { toks, pos: 0 };
    let expr = parser.sum()?;
    if *parser.peek() != Tok::End {
        return Err(parser.error(OPERATOR));
    }
    Ok(expr)
}
