//! A small arithmetic expression language for rates and payoffs.
//!
//! Expressions range over the time `t`, the distribution coordinates
//! `m1..md` and the scalar action `u`. There are no loops and no user
//! functions, so evaluation always terminates.

use std::fmt;
use std::ops::{Add, Div, Mul, Neg, Sub};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Var {
    T,
    /// Zero-based distribution coordinate (`m1` is `M(0)`).
    M(usize),
    U,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Exp,
    Log,
    Abs,
    Min,
    Max,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CmpOp {
    Lt,
    Le,
    Eq,
    Ge,
    Gt,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Num(f64),
    Var(Var),
    Neg(Box<Expr>),
    Bin(BinOp, Box<Expr>, Box<Expr>),
    Call(Func, Vec<Expr>),
    If {
        op: CmpOp,
        lhs: Box<Expr>,
        rhs: Box<Expr>,
        then: Box<Expr>,
        otherwise: Box<Expr>,
    },
}

/// Which variables an expression may reference.
#[derive(Debug, Clone, Copy)]
pub struct Symbols {
    /// Number of distribution coordinates (`m1..md`).
    pub dim: usize,
    pub time: bool,
    pub action: bool,
}

impl Symbols {
    pub fn full(dim: usize) -> Self {
        Symbols {
            dim,
            time: true,
            action: true,
        }
    }

    pub fn constant() -> Self {
        Symbols {
            dim: 0,
            time: false,
            action: false,
        }
    }
}

/// Scalar type the evaluator runs on: plain `f64` or a forward-mode dual.
pub trait Scalar:
    Copy + Add<Output = Self> + Sub<Output = Self> + Mul<Output = Self> + Div<Output = Self> + Neg<Output = Self>
{
    fn constant(v: f64) -> Self;
    fn value(self) -> f64;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn abs(self) -> Self;
    fn pow(self, exponent: Self) -> Self;
}

impl Scalar for f64 {
    fn constant(v: f64) -> Self {
        v
    }
    fn value(self) -> f64 {
        self
    }
    fn exp(self) -> Self {
        f64::exp(self)
    }
    fn ln(self) -> Self {
        f64::ln(self)
    }
    fn abs(self) -> Self {
        f64::abs(self)
    }
    fn pow(self, exponent: Self) -> Self {
        self.powf(exponent)
    }
}

/// First-order dual number `re + eps·ε`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dual {
    pub re: f64,
    pub eps: f64,
}

impl Dual {
    pub fn new(re: f64, eps: f64) -> Self {
        Dual { re, eps }
    }
}

impl Add for Dual {
    type Output = Dual;
    fn add(self, o: Dual) -> Dual {
        Dual::new(self.re + o.re, self.eps + o.eps)
    }
}

impl Sub for Dual {
    type Output = Dual;
    fn sub(self, o: Dual) -> Dual {
        Dual::new(self.re - o.re, self.eps - o.eps)
    }
}

impl Mul for Dual {
    type Output = Dual;
    fn mul(self, o: Dual) -> Dual {
        Dual::new(self.re * o.re, self.eps * o.re + self.re * o.eps)
    }
}

impl Div for Dual {
    type Output = Dual;
    fn div(self, o: Dual) -> Dual {
        let re = self.re / o.re;
        Dual::new(re, (self.eps - re * o.eps) / o.re)
    }
}

impl Neg for Dual {
    type Output = Dual;
    fn neg(self) -> Dual {
        Dual::new(-self.re, -self.eps)
    }
}

impl Scalar for Dual {
    fn constant(v: f64) -> Self {
        Dual::new(v, 0.0)
    }
    fn value(self) -> f64 {
        self.re
    }
    fn exp(self) -> Self {
        let e = self.re.exp();
        Dual::new(e, e * self.eps)
    }
    fn ln(self) -> Self {
        Dual::new(self.re.ln(), self.eps / self.re)
    }
    fn abs(self) -> Self {
        if self.re < 0.0 {
            -self
        } else {
            self
        }
    }
    fn pow(self, exponent: Self) -> Self {
        let re = self.re.powf(exponent.re);
        let mut eps = 0.0;
        if self.eps != 0.0 && exponent.re != 0.0 {
            eps += exponent.re * self.re.powf(exponent.re - 1.0) * self.eps;
        }
        if exponent.eps != 0.0 {
            eps += re * self.re.ln() * exponent.eps;
        }
        Dual::new(re, eps)
    }
}

/// Variable bindings for one evaluation.
#[derive(Debug, Clone, Copy)]
pub struct Env<'a, S> {
    pub t: S,
    pub m: &'a [S],
    pub u: S,
}

impl Expr {
    pub fn num(v: f64) -> Expr {
        Expr::Num(v)
    }

    pub fn var(v: Var) -> Expr {
        Expr::Var(v)
    }

    pub fn bin(op: BinOp, a: Expr, b: Expr) -> Expr {
        Expr::Bin(op, Box::new(a), Box::new(b))
    }

    #[allow(clippy::should_implement_trait)]
    pub fn neg(a: Expr) -> Expr {
        Expr::Neg(Box::new(a))
    }

    pub fn is_zero_literal(&self) -> bool {
        matches!(self, Expr::Num(v) if *v == 0.0)
    }

    fn visit_vars(&self, f: &mut impl FnMut(Var)) {
        match self {
            Expr::Num(_) => {}
            Expr::Var(v) => f(*v),
            Expr::Neg(a) => a.visit_vars(f),
            Expr::Bin(_, a, b) => {
                a.visit_vars(f);
                b.visit_vars(f);
            }
            Expr::Call(_, args) => args.iter().for_each(|a| a.visit_vars(f)),
            Expr::If {
                lhs,
                rhs,
                then,
                otherwise,
                ..
            } => {
                lhs.visit_vars(f);
                rhs.visit_vars(f);
                then.visit_vars(f);
                otherwise.visit_vars(f);
            }
        }
    }

    pub fn depends_on_m(&self) -> bool {
        let mut hit = false;
        self.visit_vars(&mut |v| hit |= matches!(v, Var::M(_)));
        hit
    }

    pub fn depends_on_u(&self) -> bool {
        let mut hit = false;
        self.visit_vars(&mut |v| hit |= v == Var::U);
        hit
    }

    pub fn depends_on_t(&self) -> bool {
        let mut hit = false;
        self.visit_vars(&mut |v| hit |= v == Var::T);
        hit
    }

    /// Evaluate under `env`. Domain errors name the offending subexpression.
    pub fn eval<S: Scalar>(&self, env: &Env<'_, S>) -> Result<S> {
        let out = match self {
            Expr::Num(v) => S::constant(*v),
            Expr::Var(Var::T) => env.t,
            Expr::Var(Var::U) => env.u,
            Expr::Var(Var::M(i)) => *env.m.get(*i).ok_or_else(|| Error::UnknownVariable {
                name: format!("m{}", i + 1),
            })?,
            Expr::Neg(a) => -a.eval(env)?,
            Expr::Bin(op, a, b) => {
                let x = a.eval(env)?;
                let y = b.eval(env)?;
                match op {
                    BinOp::Add => x + y,
                    BinOp::Sub => x - y,
                    BinOp::Mul => x * y,
                    BinOp::Div => {
                        if y.value() == 0.0 {
                            return Err(Error::DivisionByZero { expr: self.to_string() });
                        }
                        x / y
                    }
                    BinOp::Pow => {
                        let r = x.pow(y);
                        if !r.value().is_finite() {
                            return Err(Error::NonFinite { expr: self.to_string() });
                        }
                        r
                    }
                }
            }
            Expr::Call(func, args) => {
                let x = args[0].eval(env)?;
                match func {
                    Func::Exp => x.exp(),
                    Func::Log => {
                        if x.value() <= 0.0 {
                            return Err(Error::LogDomain {
                                expr: self.to_string(),
                                value: x.value(),
                            });
                        }
                        x.ln()
                    }
                    Func::Abs => x.abs(),
                    Func::Min | Func::Max => {
                        let mut best = x;
                        for a in &args[1..] {
                            let y = a.eval(env)?;
                            let better = if *func == Func::Min {
                                y.value() < best.value()
                            } else {
                                y.value() > best.value()
                            };
                            if better {
                                best = y;
                            }
                        }
                        best
                    }
                }
            }
            Expr::If {
                op,
                lhs,
                rhs,
                then,
                otherwise,
            } => {
                let a = lhs.eval(env)?.value();
                let b = rhs.eval(env)?.value();
                let hold = match op {
                    CmpOp::Lt => a < b,
                    CmpOp::Le => a <= b,
                    CmpOp::Eq => a == b,
                    CmpOp::Ge => a >= b,
                    CmpOp::Gt => a > b,
                };
                if hold {
                    then.eval(env)?
                } else {
                    otherwise.eval(env)?
                }
            }
        };
        if !out.value().is_finite() {
            return Err(Error::NonFinite { expr: self.to_string() });
        }
        Ok(out)
    }

    /// Convenience evaluation with plain floats.
    pub fn eval_at(&self, t: f64, m: &[f64], u: f64) -> Result<f64> {
        self.eval(&Env { t, m, u })
    }
}

// Printing. Precedence levels mirror the parser so that printing and
// re-parsing reproduces the same tree.
const PREC_ADD: u8 = 1;
const PREC_MUL: u8 = 2;
const PREC_UNARY: u8 = 3;
const PREC_POW: u8 = 4;
const PREC_ATOM: u8 = 5;

impl Expr {
    fn prec(&self) -> u8 {
        match self {
            Expr::Bin(BinOp::Add | BinOp::Sub, ..) => PREC_ADD,
            Expr::Bin(BinOp::Mul | BinOp::Div, ..) => PREC_MUL,
            Expr::Neg(_) => PREC_UNARY,
            Expr::Bin(BinOp::Pow, ..) => PREC_POW,
            Expr::Num(v) if *v < 0.0 || v.is_sign_negative() => PREC_UNARY,
            _ => PREC_ATOM,
        }
    }

    fn write_prec(&self, f: &mut fmt::Formatter<'_>, min: u8) -> fmt::Result {
        let paren = self.prec() < min;
        if paren {
            f.write_str("(")?;
        }
        match self {
            Expr::Num(v) => write!(f, "{v:?}")?,
            Expr::Var(Var::T) => f.write_str("t")?,
            Expr::Var(Var::U) => f.write_str("u")?,
            Expr::Var(Var::M(i)) => write!(f, "m{}", i + 1)?,
            Expr::Neg(a) => {
                f.write_str("-")?;
                a.write_prec(f, PREC_UNARY)?;
            }
            Expr::Bin(op, a, b) => {
                let (sym, lmin, rmin) = match op {
                    BinOp::Add => (" + ", PREC_ADD, PREC_MUL),
                    BinOp::Sub => (" - ", PREC_ADD, PREC_MUL),
                    BinOp::Mul => (" * ", PREC_MUL, PREC_UNARY),
                    BinOp::Div => (" / ", PREC_MUL, PREC_UNARY),
                    BinOp::Pow => ("^", PREC_ATOM, PREC_UNARY),
                };
                a.write_prec(f, lmin)?;
                f.write_str(sym)?;
                b.write_prec(f, rmin)?;
            }
            Expr::Call(func, args) => {
                let name = match func {
                    Func::Exp => "exp",
                    Func::Log => "log",
                    Func::Abs => "abs",
                    Func::Min => "min",
                    Func::Max => "max",
                };
                write!(f, "{name}(")?;
                for (k, a) in args.iter().enumerate() {
                    if k > 0 {
                        f.write_str(", ")?;
                    }
                    a.write_prec(f, 0)?;
                }
                f.write_str(")")?;
            }
            Expr::If {
                op,
                lhs,
                rhs,
                then,
                otherwise,
            } => {
                let sym = match op {
                    CmpOp::Lt => "<",
                    CmpOp::Le => "<=",
                    CmpOp::Eq => "=",
                    CmpOp::Ge => ">=",
                    CmpOp::Gt => ">",
                };
                f.write_str("if(")?;
                lhs.write_prec(f, 0)?;
                write!(f, " {sym} ")?;
                rhs.write_prec(f, 0)?;
                f.write_str(", ")?;
                then.write_prec(f, 0)?;
                f.write_str(", ")?;
                otherwise.write_prec(f, 0)?;
                f.write_str(")")?;
            }
        }
        if paren {
            f.write_str(")")?;
        }
        Ok(())
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.write_prec(f, 0)
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Op(&'static str),
    LParen,
    RParen,
    Comma,
}

struct Lexer {
    toks: Vec<(Tok, usize)>,
}

fn lex(src: &str, line: usize, col0: usize) -> Result<Lexer> {
    let bytes = src.as_bytes();
    let mut toks = Vec::new();
    let mut i = 0;
    let err = |pos: usize, message: String| Error::Syntax {
        line,
        column: col0 + pos + 1,
        message,
    };
    while i < bytes.len() {
        let c = bytes[i] as char;
        if c.is_ascii_whitespace() {
            i += 1;
            continue;
        }
        let start = i;
        if c.is_ascii_digit() || (c == '.' && bytes.get(i + 1).is_some_and(u8::is_ascii_digit)) {
            while i < bytes.len() && (bytes[i].is_ascii_digit() || bytes[i] == b'.') {
                i += 1;
            }
            if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
                let mut j = i + 1;
                if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
                    j += 1;
                }
                if j < bytes.len() && bytes[j].is_ascii_digit() {
                    while j < bytes.len() && bytes[j].is_ascii_digit() {
                        j += 1;
                    }
                    i = j;
                }
            }
            let text = &src[start..i];
            let v: f64 = text
                .parse()
                .map_err(|_| err(start, format!("malformed number `{text}`")))?;
            toks.push((Tok::Num(v), start));
            continue;
        }
        if c.is_ascii_alphabetic() || c == '_' {
            while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                i += 1;
            }
            toks.push((Tok::Ident(src[start..i].to_string()), start));
            continue;
        }
        let two = src.get(i..i + 2);
        let tok = match (c, two) {
            (_, Some("<=")) => Tok::Op("<="),
            (_, Some(">=")) => Tok::Op(">="),
            (_, Some("==")) => Tok::Op("="),
            ('<', _) => Tok::Op("<"),
            ('>', _) => Tok::Op(">"),
            ('=', _) => Tok::Op("="),
            ('+', _) => Tok::Op("+"),
            ('-', _) => Tok::Op("-"),
            ('*', _) => Tok::Op("*"),
            ('/', _) => Tok::Op("/"),
            ('^', _) => Tok::Op("^"),
            ('(', _) => Tok::LParen,
            (')', _) => Tok::RParen,
            (',', _) => Tok::Comma,
            _ => return Err(err(start, format!("unexpected character `{c}`"))),
        };
        i += match tok {
            Tok::Op(s) if s.len() == 2 => 2,
            Tok::Op("=") if two == Some("==") => 2,
            _ => 1,
        };
        toks.push((tok, start));
    }
    Ok(Lexer { toks })
}

struct Parser<'a> {
    toks: &'a [(Tok, usize)],
    pos: usize,
    symbols: Symbols,
    line: usize,
    col0: usize,
    end: usize,
}

impl Parser<'_> {
    fn err(&self, message: impl Into<String>) -> Error {
        let at = self.toks.get(self.pos).map_or(self.end, |t| t.1);
        Error::Syntax {
            line: self.line,
            column: self.col0 + at + 1,
            message: message.into(),
        }
    }

    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|t| &t.0)
    }

    fn eat_op(&mut self, op: &str) -> bool {
        if matches!(self.peek(), Some(Tok::Op(o)) if *o == op) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect(&mut self, tok: Tok, what: &str) -> Result<()> {
        if self.peek() == Some(&tok) {
            self.pos += 1;
            Ok(())
        } else {
            Err(self.err(format!("expected {what}")))
        }
    }

    fn additive(&mut self) -> Result<Expr> {
        let mut lhs = self.multiplicative()?;
        loop {
            let op = if self.eat_op("+") {
                BinOp::Add
            } else if self.eat_op("-") {
                BinOp::Sub
            } else {
                return Ok(lhs);
            };
            let rhs = self.multiplicative()?;
            lhs = Expr::bin(op, lhs, rhs);
        }
    }

    fn multiplicative(&mut self) -> Result<Expr> {
        let mut lhs = self.unary()?;
        loop {
            let op = if self.eat_op("*") {
                BinOp::Mul
            } else if self.eat_op("/") {
                BinOp::Div
            } else {
                return Ok(lhs);
            };
            let rhs = self.unary()?;
            lhs = Expr::bin(op, lhs, rhs);
        }
    }

    fn unary(&mut self) -> Result<Expr> {
        if self.eat_op("-") {
            return Ok(Expr::neg(self.unary()?));
        }
        if self.eat_op("+") {
            return self.unary();
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr> {
        let base = self.primary()?;
        if self.eat_op("^") {
            let exponent = self.unary()?;
            return Ok(Expr::bin(BinOp::Pow, base, exponent));
        }
        Ok(base)
    }

    fn args(&mut self) -> Result<Vec<Expr>> {
        self.expect(Tok::LParen, "`(`")?;
        let mut out = vec![self.additive()?];
        while self.peek() == Some(&Tok::Comma) {
            self.pos += 1;
            out.push(self.additive()?);
        }
        self.expect(Tok::RParen, "`)`")?;
        Ok(out)
    }

    fn primary(&mut self) -> Result<Expr> {
        match self.peek().cloned() {
            Some(Tok::Num(v)) => {
                self.pos += 1;
                Ok(Expr::Num(v))
            }
            Some(Tok::LParen) => {
                self.pos += 1;
                let e = self.additive()?;
                self.expect(Tok::RParen, "`)`")?;
                Ok(e)
            }
            Some(Tok::Ident(name)) => {
                let at = self.pos;
                self.pos += 1;
                if self.peek() == Some(&Tok::LParen) {
                    return self.call(&name, at);
                }
                self.variable(&name, at)
            }
            Some(_) => Err(self.err("expected a number, variable or `(`")),
            None => Err(self.err("unexpected end of expression")),
        }
    }

    fn call(&mut self, name: &str, at: usize) -> Result<Expr> {
        if name == "if" {
            self.expect(Tok::LParen, "`(`")?;
            let lhs = self.additive()?;
            let op = match self.peek() {
                Some(Tok::Op("<")) => CmpOp::Lt,
                Some(Tok::Op("<=")) => CmpOp::Le,
                Some(Tok::Op("=")) => CmpOp::Eq,
                Some(Tok::Op(">=")) => CmpOp::Ge,
                Some(Tok::Op(">")) => CmpOp::Gt,
                _ => return Err(self.err("expected a comparison operator")),
            };
            self.pos += 1;
            let rhs = self.additive()?;
            self.expect(Tok::Comma, "`,`")?;
            let then = self.additive()?;
            self.expect(Tok::Comma, "`,`")?;
            let otherwise = self.additive()?;
            self.expect(Tok::RParen, "`)`")?;
            return Ok(Expr::If {
                op,
                lhs: Box::new(lhs),
                rhs: Box::new(rhs),
                then: Box::new(then),
                otherwise: Box::new(otherwise),
            });
        }
        let func = match name {
            "exp" => Func::Exp,
            "log" => Func::Log,
            "abs" => Func::Abs,
            "min" => Func::Min,
            "max" => Func::Max,
            _ => {
                self.pos = at;
                return Err(self.err(format!("unknown function `{name}`")));
            }
        };
        let args = self.args()?;
        let ok = match func {
            Func::Min | Func::Max => args.len() >= 2,
            _ => args.len() == 1,
        };
        if !ok {
            self.pos = at;
            return Err(self.err(format!("wrong number of arguments to `{name}`")));
        }
        Ok(Expr::Call(func, args))
    }

    fn variable(&mut self, name: &str, at: usize) -> Result<Expr> {
        let unknown = || Error::UnknownVariable { name: name.to_string() };
        match name {
            "t" if self.symbols.time => Ok(Expr::Var(Var::T)),
            "u" if self.symbols.action => Ok(Expr::Var(Var::U)),
            _ => {
                if let Some(idx) = name.strip_prefix('m').and_then(|s| s.parse::<usize>().ok()) {
                    if idx >= 1 && idx <= self.symbols.dim {
                        return Ok(Expr::Var(Var::M(idx - 1)));
                    }
                }
                if self.symbols.action
                    && name.len() > 1
                    && name.strip_prefix('u').is_some_and(|s| s.parse::<usize>().is_ok())
                {
                    self.pos = at;
                    return Err(self.err("tuple-valued actions are not supported"));
                }
                Err(unknown())
            }
        }
    }
}

/// Parse one expression. `line` and `col0` only position error messages.
pub fn parse_expr_at(src: &str, symbols: Symbols, line: usize, col0: usize) -> Result<Expr> {
    let lexer = lex(src, line, col0)?;
    let mut p = Parser {
        toks: &lexer.toks,
        pos: 0,
        symbols,
        line,
        col0,
        end: src.len(),
    };
    let e = p.additive()?;
    if p.pos != p.toks.len() {
        return Err(p.err("unexpected trailing input"));
    }
    Ok(e)
}

pub fn parse_expr(src: &str, symbols: Symbols) -> Result<Expr> {
    parse_expr_at(src, symbols, 1, 0)
}

/// Evaluate a variable-free expression such as `1 - exp(-1/3)`.
pub fn eval_const(src: &str) -> Result<f64> {
    parse_expr(src, Symbols::constant())?.eval_at(0.0, &[], 0.0)
}
