//! Right-hand sides a(x, u, ∇u, …) as small expression trees.
//!
//! Variables: `xK` (coordinate K), `uI` (component I) and `dI_<digits>`
//! (D^β u_I with one digit per coordinate, so `d1_100` is ∂₁u₁ in n = 3;
//! `dI_0…0` is `uI`). Functions: `abs`, `exp`, `sin`, `cos`, `sign` and the
//! primitive `abspow(e, p) = |e|^p`. Powers `e^k` take integer exponents.

use std::collections::{BTreeSet, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::multiindex::MultiIndex;
use crate::polys::Polynomial;

/// Variables are 0-based internally and 1-based in source text.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Var {
    X(usize),
    /// D^β u_i; β = 0 is the plain component.
    D(usize, MultiIndex),
}

impl Var {
    pub fn u(i: usize, n: usize) -> Var {
        Var::D(i, MultiIndex::zero(n))
    }

    /// |β| for derivative variables, 0 otherwise.
    pub fn order(&self) -> u32 {
        match self {
            Var::X(_) => 0,
            Var::D(_, b) => b.order(),
        }
    }
}

impl fmt::Display for Var {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Var::X(k) => write!(f, "x{}", k + 1),
            Var::D(i, b) if b.is_zero() => write!(f, "u{}", i + 1),
            Var::D(i, b) => {
                write!(f, "d{}_", i + 1)?;
                b.entries().iter().try_for_each(|e| write!(f, "{e}"))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Func {
    Abs,
    Exp,
    Sin,
    Cos,
    Sign,
}

impl Func {
    fn name(&self) -> &'static str {
        match self {
            Func::Abs => "abs",
            Func::Exp => "exp",
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Sign => "sign",
        }
    }

    fn from_name(s: &str) -> Option<Func> {
        Some(match s {
            "abs" => Func::Abs,
            "exp" => Func::Exp,
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "sign" => Func::Sign,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Const(f64),
    Var(Var),
    Neg(Box<Expr>),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    Pow(Box<Expr>, i32),
    Call(Func, Box<Expr>),
    AbsPow(Box<Expr>, f64),
}

/// Which variables a system declares.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SymbolTable {
    pub n: usize,
    pub components: usize,
    /// Highest derivative order allowed in `dI_…` variables.
    pub max_order: u32,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DslError {
    #[error("syntax error at {pos}: {msg}")]
    Syntax { pos: usize, msg: String },
    #[error("unknown identifier `{name}` at {pos}")]
    UnknownIdentifier { pos: usize, name: String },
    #[error("division by zero")]
    DivisionByZero,
    #[error("no binding for `{0}`")]
    MissingBinding(String),
    #[error("{0} is not differentiable at this point")]
    NonDifferentiable(String),
    #[error("non-finite value from {0}")]
    Domain(String),
}

// ---------------------------------------------------------------- parsing

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64, bool),
    Ident(String),
    Sym(char),
    End,
}

struct Lexer<'a> {
    src: &'a [u8],
    pos: usize,
}

impl Lexer<'_> {
    fn next(&mut self) -> Result<(usize, Tok), DslError> {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        let start = self.pos;
        let Some(&c) = self.src.get(self.pos) else {
            return Ok((start, Tok::End));
        };
        if c.is_ascii_digit() || c == b'.' {
            let mut integral = true;
            while self.pos < self.src.len() && (self.src[self.pos].is_ascii_digit() || self.src[self.pos] == b'.') {
                integral &= self.src[self.pos] != b'.';
                self.pos += 1;
            }
            if self.pos < self.src.len() && (self.src[self.pos] == b'e' || self.src[self.pos] == b'E') {
                integral = false;
                self.pos += 1;
                if self.pos < self.src.len() && (self.src[self.pos] == b'+' || self.src[self.pos] == b'-') {
                    self.pos += 1;
                }
                while self.pos < self.src.len() && self.src[self.pos].is_ascii_digit() {
                    self.pos += 1;
                }
            }
            let text = std::str::from_utf8(&self.src[start..self.pos]).unwrap();
            let v = text
                .parse::<f64>()
                .map_err(|_| DslError::Syntax { pos: start, msg: format!("bad number `{text}`") })?;
            return Ok((start, Tok::Num(v, integral)));
        }
        if c.is_ascii_alphabetic() {
            while self.pos < self.src.len() && (self.src[self.pos].is_ascii_alphanumeric() || self.src[self.pos] == b'_') {
                self.pos += 1;
            }
            let text = std::str::from_utf8(&self.src[start..self.pos]).unwrap();
            return Ok((start, Tok::Ident(text.to_string())));
        }
        if b"+-*/^(),".contains(&c) {
            self.pos += 1;
            return Ok((start, Tok::Sym(c as char)));
        }
        Err(DslError::Syntax { pos: start, msg: format!("unexpected character `{}`", c as char) })
    }
}

struct Parser<'a> {
    lex: Lexer<'a>,
    tok: Tok,
    pos: usize,
    table: SymbolTable,
}

impl Parser<'_> {
    fn bump(&mut self) -> Result<(), DslError> {
        let (p, t) = self.lex.next()?;
        self.pos = p;
        self.tok = t;
        Ok(())
    }

    fn err<T>(&self, msg: impl Into<String>) -> Result<T, DslError> {
        Err(DslError::Syntax { pos: self.pos, msg: msg.into() })
    }

    fn expect(&mut self, c: char) -> Result<(), DslError> {
        if self.tok == Tok::Sym(c) {
            self.bump()
        } else {
            self.err(format!("expected `{c}`"))
        }
    }

    fn expr(&mut self) -> Result<Expr, DslError> {
        let mut lhs = self.term()?;
        loop {
            match self.tok {
                Tok::Sym('+') => {
                    self.bump()?;
                    lhs = Expr::Add(Box::new(lhs), Box::new(self.term()?));
                }
                Tok::Sym('-') => {
                    self.bump()?;
                    lhs = Expr::Sub(Box::new(lhs), Box::new(self.term()?));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn term(&mut self) -> Result<Expr, DslError> {
        let mut lhs = self.unary()?;
        loop {
            match self.tok {
                Tok::Sym('*') => {
                    self.bump()?;
                    lhs = Expr::Mul(Box::new(lhs), Box::new(self.unary()?));
                }
                Tok::Sym('/') => {
                    self.bump()?;
                    lhs = Expr::Div(Box::new(lhs), Box::new(self.unary()?));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn unary(&mut self) -> Result<Expr, DslError> {
        if self.tok == Tok::Sym('-') {
            self.bump()?;
            // a negated literal is a negative constant
            return Ok(match self.unary()? {
                Expr::Const(c) => Expr::Const(-c),
                e => Expr::Neg(Box::new(e)),
            });
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr, DslError> {
        let mut base = self.primary()?;
        while self.tok == Tok::Sym('^') {
            self.bump()?;
            let neg = if self.tok == Tok::Sym('-') {
                self.bump()?;
                true
            } else {
                false
            };
            match self.tok {
                Tok::Num(v, true) if v <= i32::MAX as f64 => {
                    self.bump()?;
                    let k = v as i32;
                    base = Expr::Pow(Box::new(base), if neg { -k } else { k });
                }
                Tok::Num(..) => return self.err("exponents must be integers; write abspow(e, p) for |e|^p"),
                _ => return self.err("expected an integer exponent"),
            }
        }
        Ok(base)
    }

    fn primary(&mut self) -> Result<Expr, DslError> {
        match self.tok.clone() {
            Tok::Num(v, _) => {
                self.bump()?;
                Ok(Expr::Const(v))
            }
            Tok::Sym('(') => {
                self.bump()?;
                let e = self.expr()?;
                self.expect(')')?;
                Ok(e)
            }
            Tok::Ident(name) => {
                let at = self.pos;
                self.bump()?;
                if self.tok == Tok::Sym('(') {
                    self.bump()?;
                    let arg = self.expr()?;
                    if name == "abspow" {
                        self.expect(',')?;
                        let neg = if self.tok == Tok::Sym('-') {
                            self.bump()?;
                            true
                        } else {
                            false
                        };
                        let Tok::Num(p, _) = self.tok else {
                            return self.err("abspow needs a numeric exponent");
                        };
                        self.bump()?;
                        self.expect(')')?;
                        return Ok(Expr::AbsPow(Box::new(arg), if neg { -p } else { p }));
                    }
                    let f = Func::from_name(&name).ok_or(DslError::UnknownIdentifier { pos: at, name })?;
                    self.expect(')')?;
                    return Ok(Expr::Call(f, Box::new(arg)));
                }
                resolve_var(&name, &self.table).map(Expr::Var).ok_or(DslError::UnknownIdentifier { pos: at, name })
            }
            Tok::End => self.err("unexpected end of input"),
            Tok::Sym(c) => self.err(format!("unexpected `{c}`")),
        }
    }
}

fn resolve_var(name: &str, t: &SymbolTable) -> Option<Var> {
    let index = |s: &str, max: usize| -> Option<usize> {
        let v: usize = s.parse().ok()?;
        (s.chars().all(|c| c.is_ascii_digit()) && (1..=max).contains(&v)).then(|| v - 1)
    };
    if let Some(rest) = name.strip_prefix('x') {
        return index(rest, t.n).map(Var::X);
    }
    if let Some(rest) = name.strip_prefix('u') {
        return index(rest, t.components).map(|i| Var::u(i, t.n));
    }
    let rest = name.strip_prefix('d')?;
    let (comp, digits) = rest.split_once('_')?;
    let i = index(comp, t.components)?;
    if digits.len() != t.n || !digits.chars().all(|c| c.is_ascii_digit()) {
        return None;
    }
    let e: Vec<u32> = digits.chars().map(|c| c.to_digit(10).unwrap()).collect();
    let beta = MultiIndex::new(&e).ok()?;
    (beta.order() <= t.max_order).then_some(Var::D(i, beta))
}

/// Parse `src` against the declared symbols.
pub fn parse(src: &str, table: &SymbolTable) -> Result<Expr, DslError> {
    let mut p = Parser { lex: Lexer { src: src.as_bytes(), pos: 0 }, tok: Tok::End, pos: 0, table: *table };
    p.bump()?;
    let e = p.expr()?;
    if p.tok != Tok::End {
        return p.err("trailing input");
    }
    Ok(e)
}

// ---------------------------------------------------------------- printing

fn fmt_const(c: f64, f: &mut fmt::Formatter<'_>) -> fmt::Result {
    if c < 0.0 || (c == 0.0 && c.is_sign_negative()) {
        write!(f, "(-{:?})", -c)
    } else {
        write!(f, "{c:?}")
    }
}

/// Fully parenthesised, so printing and re-parsing is a fixed point.
impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Const(c) => fmt_const(*c, f),
            Expr::Var(v) => write!(f, "{v}"),
            Expr::Neg(a) => write!(f, "(-{a})"),
            Expr::Add(a, b) => write!(f, "({a} + {b})"),
            Expr::Sub(a, b) => write!(f, "({a} - {b})"),
            Expr::Mul(a, b) => write!(f, "({a} * {b})"),
            Expr::Div(a, b) => write!(f, "({a} / {b})"),
            Expr::Pow(a, k) => write!(f, "({a}^{k})"),
            Expr::Call(g, a) => write!(f, "{}({a})", g.name()),
            Expr::AbsPow(a, p) => write!(f, "abspow({a}, {p:?})"),
        }
    }
}

// ---------------------------------------------------------------- evaluation

impl Expr {
    pub fn constant(c: f64) -> Expr {
        Expr::Const(c)
    }

    pub fn var(v: Var) -> Expr {
        Expr::Var(v)
    }

    /// Evaluate with variables looked up through `lookup`.
    pub fn eval_with(&self, lookup: &dyn Fn(&Var) -> Option<f64>) -> Result<f64, DslError> {
        let v = match self {
            Expr::Const(c) => *c,
            Expr::Var(v) => lookup(v).ok_or_else(|| DslError::MissingBinding(v.to_string()))?,
            Expr::Neg(a) => -a.eval_with(lookup)?,
            Expr::Add(a, b) => a.eval_with(lookup)? + b.eval_with(lookup)?,
            Expr::Sub(a, b) => a.eval_with(lookup)? - b.eval_with(lookup)?,
            Expr::Mul(a, b) => a.eval_with(lookup)? * b.eval_with(lookup)?,
            Expr::Div(a, b) => {
                let d = b.eval_with(lookup)?;
                if d == 0.0 {
                    return Err(DslError::DivisionByZero);
                }
                a.eval_with(lookup)? / d
            }
            Expr::Pow(a, k) => {
                let base = a.eval_with(lookup)?;
                if base == 0.0 && *k < 0 {
                    return Err(DslError::DivisionByZero);
                }
                base.powi(*k)
            }
            Expr::Call(g, a) => {
                let t = a.eval_with(lookup)?;
                match g {
                    Func::Abs => t.abs(),
                    Func::Exp => t.exp(),
                    Func::Sin => t.sin(),
                    Func::Cos => t.cos(),
                    Func::Sign => sign(t),
                }
            }
            Expr::AbsPow(a, p) => {
                let t = a.eval_with(lookup)?;
                if t == 0.0 && *p <= 0.0 {
                    return Err(DslError::NonDifferentiable(self.to_string()));
                }
                t.abs().powf(*p)
            }
        };
        if !v.is_finite() {
            return Err(DslError::Domain(self.to_string()));
        }
        Ok(v)
    }

    pub fn eval(&self, bindings: &HashMap<Var, f64>) -> Result<f64, DslError> {
        self.eval_with(&|v| bindings.get(v).copied())
    }

    pub fn vars(&self) -> BTreeSet<Var> {
        let mut out = BTreeSet::new();
        self.visit(&mut |e| {
            if let Expr::Var(v) = e {
                out.insert(*v);
            }
        });
        out
    }

    fn visit(&self, f: &mut impl FnMut(&Expr)) {
        f(self);
        match self {
            Expr::Const(_) | Expr::Var(_) => {}
            Expr::Neg(a) | Expr::Pow(a, _) | Expr::Call(_, a) | Expr::AbsPow(a, _) => a.visit(f),
            Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) | Expr::Div(a, b) => {
                a.visit(f);
                b.visit(f);
            }
        }
    }

    /// Highest derivative order referenced.
    pub fn order(&self) -> u32 {
        self.vars().iter().map(Var::order).max().unwrap_or(0)
    }

    pub fn references_x(&self) -> bool {
        self.vars().iter().any(|v| matches!(v, Var::X(_)))
    }

    /// Replace variables for which `sub` returns an expression.
    pub fn substitute(&self, sub: &dyn Fn(&Var) -> Option<Expr>) -> Expr {
        let s = |a: &Expr| Box::new(a.substitute(sub));
        match self {
            Expr::Const(_) => self.clone(),
            Expr::Var(v) => sub(v).unwrap_or_else(|| self.clone()),
            Expr::Neg(a) => Expr::Neg(s(a)),
            Expr::Add(a, b) => Expr::Add(s(a), s(b)),
            Expr::Sub(a, b) => Expr::Sub(s(a), s(b)),
            Expr::Mul(a, b) => Expr::Mul(s(a), s(b)),
            Expr::Div(a, b) => Expr::Div(s(a), s(b)),
            Expr::Pow(a, k) => Expr::Pow(s(a), *k),
            Expr::Call(g, a) => Expr::Call(*g, s(a)),
            Expr::AbsPow(a, p) => Expr::AbsPow(s(a), *p),
        }
    }

    /// Build Σ c_β x^β, constant first and then by increasing degree.
    pub fn from_polynomial(p: &Polynomial) -> Expr {
        let mut terms: Vec<(MultiIndex, f64)> = p.terms().map(|(b, c)| (*b, *c)).collect();
        terms.sort_by(|a, b| a.0.order().cmp(&b.0.order()).then(b.0.cmp(&a.0)));
        let mut acc: Option<Expr> = None;
        for (b, c) in terms {
            let mut mono: Option<Expr> = None;
            for k in 0..b.dim() {
                let e = b.get(k);
                if e == 0 {
                    continue;
                }
                let f = if e == 1 { Expr::Var(Var::X(k)) } else { Expr::Pow(Box::new(Expr::Var(Var::X(k))), e as i32) };
                mono = Some(match mono {
                    None => f,
                    Some(m) => Expr::Mul(Box::new(m), Box::new(f)),
                });
            }
            let term = match mono {
                None => Expr::Const(c),
                Some(m) if c == 1.0 => m,
                Some(m) => Expr::Mul(Box::new(Expr::Const(c)), Box::new(m)),
            };
            acc = Some(match acc {
                None => term,
                Some(a) => Expr::Add(Box::new(a), Box::new(term)),
            });
        }
        acc.unwrap_or(Expr::Const(0.0))
    }
}

fn sign(t: f64) -> f64 {
    if t > 0.0 {
        1.0
    } else if t < 0.0 {
        -1.0
    } else {
        0.0
    }
}

// ---------------------------------------------------------------- partials

fn is_zero(e: &Expr) -> bool {
    matches!(e, Expr::Const(c) if *c == 0.0)
}

fn is_one(e: &Expr) -> bool {
    matches!(e, Expr::Const(c) if *c == 1.0)
}

fn add(a: Expr, b: Expr) -> Expr {
    match (is_zero(&a), is_zero(&b)) {
        (true, _) => b,
        (_, true) => a,
        _ => Expr::Add(Box::new(a), Box::new(b)),
    }
}

fn sub(a: Expr, b: Expr) -> Expr {
    match (is_zero(&a), is_zero(&b)) {
        (_, true) => a,
        (true, _) => neg(b),
        _ => Expr::Sub(Box::new(a), Box::new(b)),
    }
}

fn neg(a: Expr) -> Expr {
    match a {
        Expr::Const(c) => Expr::Const(-c),
        e => Expr::Neg(Box::new(e)),
    }
}

fn mul(a: Expr, b: Expr) -> Expr {
    if is_zero(&a) || is_zero(&b) {
        return Expr::Const(0.0);
    }
    if is_one(&a) {
        return b;
    }
    if is_one(&b) {
        return a;
    }
    if let (Expr::Const(x), Expr::Const(y)) = (&a, &b) {
        return Expr::Const(x * y);
    }
    Expr::Mul(Box::new(a), Box::new(b))
}

/// Symbolic ∂e/∂v with light constant folding. `abspow(e, p)` differentiates
/// to p·sign(e)·abspow(e, p−1), which evaluates to 0 at e = 0 when p > 1 and
/// raises an error there when p ≤ 1.
pub fn partial(e: &Expr, v: &Var) -> Expr {
    match e {
        Expr::Const(_) => Expr::Const(0.0),
        Expr::Var(w) => Expr::Const(if w == v { 1.0 } else { 0.0 }),
        Expr::Neg(a) => neg(partial(a, v)),
        Expr::Add(a, b) => add(partial(a, v), partial(b, v)),
        Expr::Sub(a, b) => sub(partial(a, v), partial(b, v)),
        Expr::Mul(a, b) => add(mul(partial(a, v), (**b).clone()), mul((**a).clone(), partial(b, v))),
        Expr::Div(a, b) => {
            let da = partial(a, v);
            let db = partial(b, v);
            if is_zero(&db) {
                return if is_zero(&da) { Expr::Const(0.0) } else { Expr::Div(Box::new(da), b.clone()) };
            }
            let num = sub(mul(da, (**b).clone()), mul((**a).clone(), db));
            Expr::Div(Box::new(num), Box::new(Expr::Pow(b.clone(), 2)))
        }
        Expr::Pow(a, k) => {
            let da = partial(a, v);
            if is_zero(&da) || *k == 0 {
                return Expr::Const(0.0);
            }
            let inner = if *k == 2 { (**a).clone() } else { Expr::Pow(a.clone(), k - 1) };
            mul(mul(Expr::Const(*k as f64), inner), da)
        }
        Expr::Call(g, a) => {
            let da = partial(a, v);
            if is_zero(&da) {
                return Expr::Const(0.0);
            }
            let outer = match g {
                Func::Abs => Expr::Call(Func::Sign, a.clone()),
                Func::Exp => e.clone(),
                Func::Sin => Expr::Call(Func::Cos, a.clone()),
                Func::Cos => neg(Expr::Call(Func::Sin, a.clone())),
                Func::Sign => return Expr::Const(0.0),
            };
            mul(outer, da)
        }
        Expr::AbsPow(a, p) => {
            let da = partial(a, v);
            if is_zero(&da) {
                return Expr::Const(0.0);
            }
            let outer = mul(
                mul(Expr::Const(*p), Expr::Call(Func::Sign, a.clone())),
                Expr::AbsPow(a.clone(), p - 1.0),
            );
            mul(outer, da)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const T3: SymbolTable = SymbolTable { n: 3, components: 1, max_order: 2 };

    fn u1() -> Var {
        Var::u(0, 3)
    }

    #[test]
    fn parse_examples() {
        assert_eq!(parse("u1^2", &T3).unwrap(), Expr::Pow(Box::new(Expr::Var(u1())), 2));
        assert!(matches!(parse("abs(u1)^1.5", &T3), Err(DslError::Syntax { .. })));
        let d = parse("d1_100 * d1_010", &T3).unwrap();
        let e1 = Var::D(0, MultiIndex::from_slice(&[1, 0, 0]));
        let e2 = Var::D(0, MultiIndex::from_slice(&[0, 1, 0]));
        assert_eq!(d, Expr::Mul(Box::new(Expr::Var(e1)), Box::new(Expr::Var(e2))));
        assert_eq!(parse("d1_000", &T3).unwrap(), Expr::Var(u1()));
        assert_eq!(parse(" 1 + 2*3 - 4 ", &T3).unwrap().eval(&HashMap::new()).unwrap(), 3.0);
        assert_eq!(parse("2^3^2", &T3).unwrap().eval(&HashMap::new()).unwrap(), 64.0);
        assert_eq!(parse("-2^2", &T3).unwrap().eval(&HashMap::new()).unwrap(), -4.0);
    }

    #[test]
    fn parse_errors_carry_positions() {
        assert_eq!(parse("u1 + u2", &T3), Err(DslError::UnknownIdentifier { pos: 5, name: "u2".into() }));
        assert!(matches!(parse("x4", &T3), Err(DslError::UnknownIdentifier { pos: 0, .. })));
        assert!(matches!(parse("d1_300", &T3), Err(DslError::UnknownIdentifier { .. })));
        assert!(matches!(parse("(u1 + 1", &T3), Err(DslError::Syntax { pos: 7, .. })));
        assert!(matches!(parse("u1 $ 2", &T3), Err(DslError::Syntax { pos: 3, .. })));
        assert!(matches!(parse("foo(u1)", &T3), Err(DslError::UnknownIdentifier { .. })));
    }

    #[test]
    fn evaluation_examples() {
        let b = |pairs: &[(Var, f64)]| pairs.iter().copied().collect::<HashMap<_, _>>();
        assert_eq!(parse("u1^2", &T3).unwrap().eval(&b(&[(u1(), 3.0)])).unwrap(), 9.0);
        let v = parse("abspow(u1, 2.5)", &T3).unwrap().eval(&b(&[(u1(), -2.0)])).unwrap();
        assert!((v - 5.656854249492381).abs() < 1e-14);
        let d = Var::D(0, MultiIndex::from_slice(&[1, 0, 0]));
        assert_eq!(parse("x1*d1_100", &T3).unwrap().eval(&b(&[(Var::X(0), 0.5), (d, 4.0)])).unwrap(), 2.0);
        assert_eq!(parse("1/u1", &T3).unwrap().eval(&b(&[(u1(), 0.0)])), Err(DslError::DivisionByZero));
        assert_eq!(parse("u1", &T3).unwrap().eval(&HashMap::new()), Err(DslError::MissingBinding("u1".into())));
    }

    #[test]
    fn partial_examples() {
        let e = parse("u1^2", &T3).unwrap();
        assert_eq!(partial(&e, &u1()), parse("2*u1", &T3).unwrap());
        assert_eq!(partial(&e, &Var::X(0)), Expr::Const(0.0));
        let a = parse("abspow(u1, 2.5)", &T3).unwrap();
        let da = partial(&a, &u1());
        assert_eq!(da, parse("2.5*sign(u1)*abspow(u1, 1.5)", &T3).unwrap());
        let at = |t: f64| da.eval_with(&|_| Some(t));
        assert_eq!(at(0.0).unwrap(), 0.0);
        let lin = partial(&parse("abspow(u1, 1)", &T3).unwrap(), &u1());
        assert!(matches!(lin.eval_with(&|_| Some(0.0)), Err(DslError::NonDifferentiable(_))));
    }

    const CORPUS: [&str; 10] = [
        "u1^2",
        "abspow(u1, 2.5)",
        "x1*d1_100 + u1*d1_010",
        "exp(u1)*sin(x2)",
        "cos(u1*x3) - u1^3/2",
        "u1/(1 + x1^2)",
        "abs(u1 - 3)*d1_011",
        "(u1 + 1 + 2*x1)^2",
        "-u1^-2 + d1_200",
        "abspow(d1_001, 3.5) * x2",
    ];

    #[test]
    fn partials_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for src in CORPUS {
            let e = parse(src, &T3).unwrap();
            for v in e.vars() {
                let de = partial(&e, &v);
                for _ in 0..100 {
                    let point: HashMap<Var, f64> = e.vars().into_iter().map(|w| (w, rng.gen_range(0.2..1.5))).collect();
                    let h = 1e-5;
                    let mut p = point.clone();
                    *p.get_mut(&v).unwrap() += h;
                    let up = e.eval(&p).unwrap();
                    *p.get_mut(&v).unwrap() -= 2.0 * h;
                    let down = e.eval(&p).unwrap();
                    let fd = (up - down) / (2.0 * h);
                    let exact = de.eval(&point).unwrap();
                    assert!((fd - exact).abs() <= 1e-6 * exact.abs().max(1.0), "{src} d/d{v}: {exact} vs {fd}");
                }
            }
        }
    }

    #[test]
    fn substitution_and_polynomials() {
        let e = parse("u1^2", &T3).unwrap();
        let p = Polynomial::from_terms(3, [(MultiIndex::zero(3), 1.0), (MultiIndex::from_slice(&[1, 0, 0]), 2.0)]);
        let shifted = e.substitute(&|v| {
            (*v == u1()).then(|| Expr::Add(Box::new(Expr::Var(u1())), Box::new(Expr::from_polynomial(&p))))
        });
        assert_eq!(shifted, parse("(u1 + (1 + 2*x1))^2", &T3).unwrap());
        assert_eq!(shifted.order(), 0);
        assert!(shifted.references_x());
    }

    fn arb_expr() -> impl Strategy<Value = Expr> {
        let leaf = prop_oneof![
            (-5.0f64..5.0).prop_map(Expr::Const),
            (0usize..3).prop_map(|k| Expr::Var(Var::X(k))),
            Just(Expr::Var(Var::u(0, 3))),
        ];
        leaf.prop_recursive(4, 32, 2, |inner| {
            prop_oneof![
                (inner.clone(), inner.clone()).prop_map(|(a, b)| Expr::Add(Box::new(a), Box::new(b))),
                (inner.clone(), inner.clone()).prop_map(|(a, b)| Expr::Mul(Box::new(a), Box::new(b))),
                (inner.clone(), inner.clone()).prop_map(|(a, b)| Expr::Sub(Box::new(a), Box::new(b))),
                (inner.clone(), -3i32..4).prop_map(|(a, k)| Expr::Pow(Box::new(a), k)),
                inner.clone().prop_map(|a| Expr::Neg(Box::new(a))),
                inner.clone().prop_map(|a| Expr::Call(Func::Sin, Box::new(a))),
                (inner, 1.0f64..3.0).prop_map(|(a, p)| Expr::AbsPow(Box::new(a), p)),
            ]
        })
    }

    proptest! {
        #[test]
        fn print_parse_round_trip(e in arb_expr()) {
            let once = parse(&e.to_string(), &T3).unwrap();
            let twice = parse(&once.to_string(), &T3).unwrap();
            prop_assert_eq!(once, twice);
        }
    }
}
