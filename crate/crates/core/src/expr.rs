//! Real-valued expressions in named coordinates, with symbolic derivatives.
//!
//! Grammar: identifiers, decimal literals, `+ - * / ^`, unary minus,
//! parentheses, the functions `sin cos tan exp log sqrt` and the constant `pi`.
//! `^` binds tighter than unary minus and is right-associative.

use std::fmt;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Sin,
    Cos,
    Tan,
    Exp,
    Log,
    Sqrt,
}

impl Func {
    fn from_name(s: &str) -> Option<Func> {
        Some(match s {
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "tan" => Func::Tan,
            "exp" => Func::Exp,
            "log" => Func::Log,
            "sqrt" => Func::Sqrt,
            _ => return None,
        })
    }

    fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Tan => "tan",
            Func::Exp => "exp",
            Func::Log => "log",
            Func::Sqrt => "sqrt",
        }
    }

    fn apply(self, x: f64) -> f64 {
        match self {
            Func::Sin => x.sin(),
            Func::Cos => x.cos(),
            Func::Tan => x.tan(),
            Func::Exp => x.exp(),
            Func::Log => x.ln(),
            Func::Sqrt => x.sqrt(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Num(f64),
    Var(usize),
    Neg(Box<Expr>),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    Pow(Box<Expr>, Box<Expr>),
    Call(Func, Box<Expr>),
}

use Expr::*;

fn b(e: Expr) -> Box<Expr> {
    Box::new(e)
}

impl Expr {
    /// Parses `src` with `vars` as the admissible identifiers. Error positions
    /// are offset by (`line`, `col0`) so callers can report file positions.
    pub fn parse_at(src: &str, vars: &[String], line: usize, col0: usize) -> Result<Expr> {
        let tokens = lex(src, line, col0)?;
        let mut p = Parser { tokens, pos: 0, vars, line, end_col: col0 + src.chars().count() };
        let e = p.expr()?;
        if let Some(t) = p.peek() {
            return Err(p.error_at(t.col, format!("unexpected {}", t.kind.describe())));
        }
        Ok(e)
    }

    pub fn parse(src: &str, vars: &[String]) -> Result<Expr> {
        Self::parse_at(src, vars, 1, 1)
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            Num(v) => *v,
            Var(i) => x[*i],
            Neg(a) => -a.eval(x),
            Add(a, c) => a.eval(x) + c.eval(x),
            Sub(a, c) => a.eval(x) - c.eval(x),
            Mul(a, c) => a.eval(x) * c.eval(x),
            Div(a, c) => a.eval(x) / c.eval(x),
            Pow(a, c) => {
                let base = a.eval(x);
                match **c {
                    Num(k) if k == k.trunc() && k.abs() < 64.0 => base.powi(k as i32),
                    _ => base.powf(c.eval(x)),
                }
            }
            Call(f, a) => f.apply(a.eval(x)),
        }
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, Num(v) if *v == 0.0)
    }

    pub fn is_const(&self) -> bool {
        match self {
            Num(_) => true,
            Var(_) => false,
            Neg(a) | Call(_, a) => a.is_const(),
            Add(a, c) | Sub(a, c) | Mul(a, c) | Div(a, c) | Pow(a, c) => a.is_const() && c.is_const(),
        }
    }

    /// Symbolic partial derivative with respect to variable `v`.
    pub fn diff(&self, v: usize) -> Expr {
        let d = match self {
            Num(_) => Num(0.0),
            Var(i) => Num(if *i == v { 1.0 } else { 0.0 }),
            Neg(a) => neg(a.diff(v)),
            Add(a, c) => add(a.diff(v), c.diff(v)),
            Sub(a, c) => sub(a.diff(v), c.diff(v)),
            Mul(a, c) => add(mul(a.diff(v), (**c).clone()), mul((**a).clone(), c.diff(v))),
            Div(a, c) => div(
                sub(mul(a.diff(v), (**c).clone()), mul((**a).clone(), c.diff(v))),
                pow((**c).clone(), Num(2.0)),
            ),
            Pow(a, c) => {
                if c.is_const() {
                    let k = c.eval(&[]);
                    mul(mul(Num(k), pow((**a).clone(), Num(k - 1.0))), a.diff(v))
                } else {
                    // d(u^w) = u^w (w' ln u + w u'/u)
                    mul(
                        self.clone(),
                        add(
                            mul(c.diff(v), call(Func::Log, (**a).clone())),
                            div(mul((**c).clone(), a.diff(v)), (**a).clone()),
                        ),
                    )
                }
            }
            Call(f, a) => {
                let inner = a.diff(v);
                let u = (**a).clone();
                let outer = match f {
                    Func::Sin => call(Func::Cos, u),
                    Func::Cos => neg(call(Func::Sin, u)),
                    Func::Tan => add(Num(1.0), pow(call(Func::Tan, u), Num(2.0))),
                    Func::Exp => call(Func::Exp, u),
                    Func::Log => div(Num(1.0), u),
                    Func::Sqrt => div(Num(0.5), call(Func::Sqrt, u)),
                };
                mul(outer, inner)
            }
        };
        d
    }
}

fn neg(a: Expr) -> Expr {
    match a {
        Num(v) => Num(-v),
        Neg(x) => *x,
        x => Neg(b(x)),
    }
}

fn add(a: Expr, c: Expr) -> Expr {
    match (a, c) {
        (Num(x), Num(y)) => Num(x + y),
        (x, y) if x.is_zero() => y,
        (x, y) if y.is_zero() => x,
        (x, Neg(y)) => sub(x, *y),
        (x, y) => Add(b(x), b(y)),
    }
}

fn sub(a: Expr, c: Expr) -> Expr {
    match (a, c) {
        (Num(x), Num(y)) => Num(x - y),
        (x, y) if y.is_zero() => x,
        (x, y) if x.is_zero() => neg(y),
        (x, y) => Sub(b(x), b(y)),
    }
}

fn mul(a: Expr, c: Expr) -> Expr {
    match (a, c) {
        (Num(x), Num(y)) => Num(x * y),
        (x, _) if x.is_zero() => Num(0.0),
        (_, y) if y.is_zero() => Num(0.0),
        (Num(o), y) if o == 1.0 => y,
        (x, Num(o)) if o == 1.0 => x,
        (Num(o), y) if o == -1.0 => neg(y),
        (x, Num(o)) if o == -1.0 => neg(x),
        (x, y) => Mul(b(x), b(y)),
    }
}

fn div(a: Expr, c: Expr) -> Expr {
    match (a, c) {
        (Num(x), Num(y)) if y != 0.0 => Num(x / y),
        (x, _) if x.is_zero() => Num(0.0),
        (x, Num(o)) if o == 1.0 => x,
        (x, y) => Div(b(x), b(y)),
    }
}

fn pow(a: Expr, c: Expr) -> Expr {
    match (a, c) {
        (_, Num(k)) if k == 0.0 => Num(1.0),
        (x, Num(k)) if k == 1.0 => x,
        (Num(x), Num(k)) => Num(x.powf(k)),
        (x, y) => Pow(b(x), b(y)),
    }
}

fn call(f: Func, a: Expr) -> Expr {
    match a {
        Num(x) => Num(f.apply(x)),
        x => Call(f, b(x)),
    }
}

/// Prints with coordinate indices as `x0, x1, ...`; use [`Expr::display_with`]
/// for named output.
impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.display_with(&[]))
    }
}

impl Expr {
    pub fn display_with(&self, names: &[String]) -> String {
        match self {
            Num(v) => {
                if *v < 0.0 {
                    format!("({v:?})")
                } else {
                    format!("{v:?}")
                }
            }
            Var(i) => names.get(*i).cloned().unwrap_or_else(|| format!("x{i}")),
            Neg(a) => format!("(-{})", a.display_with(names)),
            Add(a, c) => format!("({} + {})", a.display_with(names), c.display_with(names)),
            Sub(a, c) => format!("({} - {})", a.display_with(names), c.display_with(names)),
            Mul(a, c) => format!("({} * {})", a.display_with(names), c.display_with(names)),
            Div(a, c) => format!("({} / {})", a.display_with(names), c.display_with(names)),
            Pow(a, c) => format!("({} ^ {})", a.display_with(names), c.display_with(names)),
            Call(g, a) => format!("{}({})", g.name(), a.display_with(names)),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum TokKind {
    Num(f64),
    Ident(String),
    Op(char),
    LParen,
    RParen,
}

impl TokKind {
    fn describe(&self) -> String {
        match self {
            TokKind::Num(v) => format!("number {v}"),
            TokKind::Ident(s) => format!("identifier '{s}'"),
            TokKind::Op(c) => format!("'{c}'"),
            TokKind::LParen => "'('".into(),
            TokKind::RParen => "')'".into(),
        }
    }
}

#[derive(Debug, Clone)]
struct Token {
    kind: TokKind,
    col: usize,
}

fn lex(src: &str, line: usize, col0: usize) -> Result<Vec<Token>> {
    let chars: Vec<char> = src.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        let col = col0 + i;
        if c.is_whitespace() {
            i += 1;
        } else if c.is_ascii_digit() || c == '.' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '.') {
                i += 1;
            }
            if i < chars.len() && (chars[i] == 'e' || chars[i] == 'E') {
                let mut j = i + 1;
                if j < chars.len() && (chars[j] == '+' || chars[j] == '-') {
                    j += 1;
                }
                if j < chars.len() && chars[j].is_ascii_digit() {
                    i = j;
                    while i < chars.len() && chars[i].is_ascii_digit() {
                        i += 1;
                    }
                }
            }
            let text: String = chars[start..i].iter().collect();
            let v: f64 = text.parse().map_err(|_| Error::Parse {
                line,
                column: col,
                message: format!("malformed number '{text}'"),
            })?;
            out.push(Token { kind: TokKind::Num(v), col });
        } else if c.is_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            out.push(Token { kind: TokKind::Ident(chars[start..i].iter().collect()), col });
        } else if "+-*/^".contains(c) {
            out.push(Token { kind: TokKind::Op(c), col });
            i += 1;
        } else if c == '(' {
            out.push(Token { kind: TokKind::LParen, col });
            i += 1;
        } else if c == ')' {
            out.push(Token { kind: TokKind::RParen, col });
            i += 1;
        } else {
            return Err(Error::Parse { line, column: col, message: format!("unexpected character '{c}'") });
        }
    }
    Ok(out)
}

struct Parser<'a> {
    tokens: Vec<Token>,
    pos: usize,
    vars: &'a [String],
    line: usize,
    end_col: usize,
}

impl<'a> Parser<'a> {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos)
    }

    fn error_at(&self, column: usize, message: String) -> Error {
        Error::Parse { line: self.line, column, message }
    }

    fn eof_error(&self) -> Error {
        self.error_at(self.end_col, "unexpected end of expression".into())
    }

    fn expr(&mut self) -> Result<Expr> {
        let mut lhs = self.term()?;
        while let Some(Token { kind: TokKind::Op(op @ ('+' | '-')), .. }) = self.peek().cloned() {
            self.pos += 1;
            let rhs = self.term()?;
            lhs = if op == '+' { Add(b(lhs), b(rhs)) } else { Sub(b(lhs), b(rhs)) };
        }
        Ok(lhs)
    }

    fn term(&mut self) -> Result<Expr> {
        let mut lhs = self.unary()?;
        while let Some(Token { kind: TokKind::Op(op @ ('*' | '/')), .. }) = self.peek().cloned() {
            self.pos += 1;
            let rhs = self.unary()?;
            lhs = if op == '*' { Mul(b(lhs), b(rhs)) } else { Div(b(lhs), b(rhs)) };
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Expr> {
        if let Some(Token { kind: TokKind::Op('-'), .. }) = self.peek() {
            self.pos += 1;
            return Ok(Neg(b(self.unary()?)));
        }
        if let Some(Token { kind: TokKind::Op('+'), .. }) = self.peek() {
            self.pos += 1;
            return self.unary();
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr> {
        let base = self.primary()?;
        if let Some(Token { kind: TokKind::Op('^'), .. }) = self.peek() {
            self.pos += 1;
            let exp = self.unary()?;
            return Ok(Pow(b(base), b(exp)));
        }
        Ok(base)
    }

    fn primary(&mut self) -> Result<Expr> {
        let tok = self.peek().cloned().ok_or_else(|| self.eof_error())?;
        self.pos += 1;
        match tok.kind {
            TokKind::Num(v) => Ok(Num(v)),
            TokKind::LParen => {
                let e = self.expr()?;
                match self.peek() {
                    Some(Token { kind: TokKind::RParen, .. }) => {
                        self.pos += 1;
                        Ok(e)
                    }
                    Some(t) => Err(self.error_at(t.col, format!("expected ')' but found {}", t.kind.describe()))),
                    None => Err(self.error_at(self.end_col, "missing ')'".into())),
                }
            }
            TokKind::Ident(name) => {
                if let Some(f) = Func::from_name(&name) {
                    match self.peek() {
                        Some(Token { kind: TokKind::LParen, .. }) => {
                            let arg = self.primary()?;
                            Ok(Call(f, b(arg)))
                        }
                        _ => Err(self.error_at(tok.col, format!("function '{name}' needs a parenthesized argument"))),
                    }
                } else if name == "pi" {
                    Ok(Num(std::f64::consts::PI))
                } else if let Some(i) = self.vars.iter().position(|v| *v == name) {
                    Ok(Var(i))
                } else {
                    Err(self.error_at(tok.col, format!("unknown identifier '{name}'")))
                }
            }
            other => Err(self.error_at(tok.col, format!("unexpected {}", other.describe()))),
        }
    }
}
