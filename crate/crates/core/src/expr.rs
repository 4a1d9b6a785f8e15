//! A small closed-form expression language for `ψ(x, z)` and `φ(x)`.
//!
//! Supported: numbers, `pi`, variables `x1..x9` (or `x_1..x_9`) and `z`,
//! the operators `+ - * / ^`, and the functions `sqrt`, `exp`, `log`, `pow`.
//! Expressions can be differentiated symbolically.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Var {
    /// 0-based spatial coordinate.
    X(usize),
    Z,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Const(f64),
    Var(Var),
    Neg(Arc<Expr>),
    Add(Arc<Expr>, Arc<Expr>),
    Sub(Arc<Expr>, Arc<Expr>),
    Mul(Arc<Expr>, Arc<Expr>),
    Div(Arc<Expr>, Arc<Expr>),
    Pow(Arc<Expr>, Arc<Expr>),
    Sqrt(Arc<Expr>),
    Exp(Arc<Expr>),
    Log(Arc<Expr>),
}

use Expr::*;

impl Expr {
    pub fn parse(src: &str) -> Result<Expr> {
        let mut p = Parser {
            src: src.as_bytes(),
            pos: 0,
        };
        let e = p.expr()?;
        p.skip_ws();
        if p.pos != p.src.len() {
            return Err(p.err("unexpected trailing input"));
        }
        Ok(e)
    }

    pub fn constant(v: f64) -> Expr {
        Const(v)
    }

    pub fn x(i: usize) -> Expr {
        Var(Var::X(i))
    }

    pub fn z() -> Expr {
        Var(Var::Z)
    }

    pub fn eval(&self, x: &[f64], z: f64) -> f64 {
        match self {
            Const(c) => *c,
            Var(Var::X(i)) => x.get(*i).copied().unwrap_or(f64::NAN),
            Var(Var::Z) => z,
            Neg(a) => -a.eval(x, z),
            Add(a, b) => a.eval(x, z) + b.eval(x, z),
            Sub(a, b) => a.eval(x, z) - b.eval(x, z),
            Mul(a, b) => a.eval(x, z) * b.eval(x, z),
            Div(a, b) => a.eval(x, z) / b.eval(x, z),
            Pow(a, b) => {
                let base = a.eval(x, z);
                match b.as_ref() {
                    Const(c) if c.fract() == 0.0 && c.abs() < 64.0 => base.powi(*c as i32),
                    _ => base.powf(b.eval(x, z)),
                }
            }
            Sqrt(a) => a.eval(x, z).sqrt(),
            Exp(a) => a.eval(x, z).exp(),
            Log(a) => a.eval(x, z).ln(),
        }
    }

    /// Symbolic partial derivative.
    pub fn diff(&self, v: Var) -> Expr {
        match self {
            Const(_) => Const(0.0),
            Var(w) => Const(if *w == v { 1.0 } else { 0.0 }),
            Neg(a) => neg(a.diff(v)),
            Add(a, b) => add(a.diff(v), b.diff(v)),
            Sub(a, b) => sub(a.diff(v), b.diff(v)),
            Mul(a, b) => add(mul(a.diff(v), (**b).clone()), mul((**a).clone(), b.diff(v))),
            Div(a, b) => div(
                sub(mul(a.diff(v), (**b).clone()), mul((**a).clone(), b.diff(v))),
                pow((**b).clone(), Const(2.0)),
            ),
            Pow(a, b) => {
                if let Const(c) = b.as_ref() {
                    mul(
                        mul(Const(*c), pow((**a).clone(), Const(c - 1.0))),
                        a.diff(v),
                    )
                } else {
                    // a^b (b' ln a + b a'/a)
                    mul(
                        self.clone(),
                        add(
                            mul(b.diff(v), log((**a).clone())),
                            div(mul((**b).clone(), a.diff(v)), (**a).clone()),
                        ),
                    )
                }
            }
            Sqrt(a) => div(a.diff(v), mul(Const(2.0), self.clone())),
            Exp(a) => mul(self.clone(), a.diff(v)),
            Log(a) => div(a.diff(v), (**a).clone()),
        }
    }

    pub fn depends_on(&self, v: Var) -> bool {
        match self {
            Const(_) => false,
            Var(w) => *w == v,
            Neg(a) | Sqrt(a) | Exp(a) | Log(a) => a.depends_on(v),
            Add(a, b) | Sub(a, b) | Mul(a, b) | Div(a, b) | Pow(a, b) => {
                a.depends_on(v) || b.depends_on(v)
            }
        }
    }

    /// Largest spatial index referenced, plus one.
    pub fn spatial_arity(&self) -> usize {
        match self {
            Const(_) | Var(Var::Z) => 0,
            Var(Var::X(i)) => i + 1,
            Neg(a) | Sqrt(a) | Exp(a) | Log(a) => a.spatial_arity(),
            Add(a, b) | Sub(a, b) | Mul(a, b) | Div(a, b) | Pow(a, b) => {
                a.spatial_arity().max(b.spatial_arity())
            }
        }
    }

    pub fn is_constant(&self) -> bool {
        matches!(self, Const(_))
    }

    /// Spatial gradient `(∂/∂x_1, …, ∂/∂x_n)`.
    pub fn gradient(&self, n: usize) -> Vec<Expr> {
        (0..n).map(|i| self.diff(Var::X(i))).collect()
    }

    /// Spatial Hessian, row-major `n × n`.
    pub fn hessian(&self, n: usize) -> Vec<Vec<Expr>> {
        self.gradient(n).iter().map(|g| g.gradient(n)).collect()
    }
}

pub fn neg(a: Expr) -> Expr {
    match a {
        Const(c) => Const(-c),
        Neg(inner) => (*inner).clone(),
        a => Neg(Arc::new(a)),
    }
}

pub fn add(a: Expr, b: Expr) -> Expr {
    match (a, b) {
        (Const(x), Const(y)) => Const(x + y),
        (Const(z), e) | (e, Const(z)) if z == 0.0 => e,
        (a, b) => Add(Arc::new(a), Arc::new(b)),
    }
}

pub fn sub(a: Expr, b: Expr) -> Expr {
    match (a, b) {
        (Const(x), Const(y)) => Const(x - y),
        (e, Const(0.0)) => e,
        (Const(0.0), e) => neg(e),
        (a, b) => Sub(Arc::new(a), Arc::new(b)),
    }
}

pub fn mul(a: Expr, b: Expr) -> Expr {
    match (a, b) {
        (Const(x), Const(y)) => Const(x * y),
        (Const(z), _) | (_, Const(z)) if z == 0.0 => Const(0.0),
        (Const(o), e) | (e, Const(o)) if o == 1.0 => e,
        (a, b) => Mul(Arc::new(a), Arc::new(b)),
    }
}

pub fn div(a: Expr, b: Expr) -> Expr {
    match (a, b) {
        (Const(x), Const(y)) if y != 0.0 => Const(x / y),
        (Const(0.0), _) => Const(0.0),
        (e, Const(1.0)) => e,
        (a, b) => Div(Arc::new(a), Arc::new(b)),
    }
}

pub fn pow(a: Expr, b: Expr) -> Expr {
    match (a, b) {
        (Const(x), Const(y)) => Const(x.powf(y)),
        (_, Const(0.0)) => Const(1.0),
        (e, Const(1.0)) => e,
        (a, b) => Pow(Arc::new(a), Arc::new(b)),
    }
}

pub fn sqrt(a: Expr) -> Expr {
    match a {
        Const(c) => Const(c.sqrt()),
        a => Sqrt(Arc::new(a)),
    }
}

pub fn exp(a: Expr) -> Expr {
    match a {
        Const(c) => Const(c.exp()),
        a => Exp(Arc::new(a)),
    }
}

pub fn log(a: Expr) -> Expr {
    match a {
        Const(c) => Const(c.ln()),
        a => Log(Arc::new(a)),
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Const(c) => write!(f, "{c:?}"),
            Var(Var::X(i)) => write!(f, "x{}", i + 1),
            Var(Var::Z) => write!(f, "z"),
            Neg(a) => write!(f, "(-{a})"),
            Add(a, b) => write!(f, "({a} + {b})"),
            Sub(a, b) => write!(f, "({a} - {b})"),
            Mul(a, b) => write!(f, "({a} * {b})"),
            Div(a, b) => write!(f, "({a} / {b})"),
            Pow(a, b) => write!(f, "({a} ^ {b})"),
            Sqrt(a) => write!(f, "sqrt({a})"),
            Exp(a) => write!(f, "exp({a})"),
            Log(a) => write!(f, "log({a})"),
        }
    }
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
}

impl Parser<'_> {
    fn err(&self, msg: &str) -> Error {
        Error::Parse {
            pos: self.pos,
            msg: msg.to_string(),
        }
    }

    fn skip_ws(&mut self) {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.src.get(self.pos).copied()
    }

    fn eat(&mut self, c: u8) -> bool {
        if self.peek() == Some(c) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expr(&mut self) -> Result<Expr> {
        let mut lhs = self.term()?;
        loop {
            if self.eat(b'+') {
                lhs = Add(Arc::new(lhs), Arc::new(self.term()?));
            } else if self.eat(b'-') {
                lhs = Sub(Arc::new(lhs), Arc::new(self.term()?));
            } else {
                return Ok(lhs);
            }
        }
    }

    fn term(&mut self) -> Result<Expr> {
        let mut lhs = self.unary()?;
        loop {
            if self.eat(b'*') {
                lhs = Mul(Arc::new(lhs), Arc::new(self.unary()?));
            } else if self.eat(b'/') {
                lhs = Div(Arc::new(lhs), Arc::new(self.unary()?));
            } else {
                return Ok(lhs);
            }
        }
    }

    fn unary(&mut self) -> Result<Expr> {
        if self.eat(b'-') {
            return Ok(Neg(Arc::new(self.unary()?)));
        }
        if self.eat(b'+') {
            return self.unary();
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr> {
        let base = self.atom()?;
        if self.eat(b'^') {
            let exponent = self.unary()?;
            return Ok(Pow(Arc::new(base), Arc::new(exponent)));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Expr> {
        match self.peek() {
            None => Err(self.err("unexpected end of input")),
            Some(b'(') => {
                self.pos += 1;
                let e = self.expr()?;
                if !self.eat(b')') {
                    return Err(self.err("expected ')'"));
                }
                Ok(e)
            }
            Some(c) if c.is_ascii_digit() || c == b'.' => self.number(),
            Some(c) if c.is_ascii_alphabetic() => self.ident(),
            Some(_) => Err(self.err("unexpected character")),
        }
    }

    fn number(&mut self) -> Result<Expr> {
        let start = self.pos;
        while self.pos < self.src.len()
            && (self.src[self.pos].is_ascii_digit() || self.src[self.pos] == b'.')
        {
            self.pos += 1;
        }
        if self.pos < self.src.len() && matches!(self.src[self.pos], b'e' | b'E') {
            let save = self.pos;
            self.pos += 1;
            if self.pos < self.src.len() && matches!(self.src[self.pos], b'+' | b'-') {
                self.pos += 1;
            }
            let digits = self.pos;
            while self.pos < self.src.len() && self.src[self.pos].is_ascii_digit() {
                self.pos += 1;
            }
            if self.pos == digits {
                self.pos = save;
            }
        }
        let text = std::str::from_utf8(&self.src[start..self.pos]).expect("ascii");
        text.parse::<f64>().map(Const).map_err(|_| Error::Parse {
            pos: start,
            msg: format!("bad number '{text}'"),
        })
    }

    fn ident(&mut self) -> Result<Expr> {
        let start = self.pos;
        while self.pos < self.src.len()
            && (self.src[self.pos].is_ascii_alphanumeric() || self.src[self.pos] == b'_')
        {
            self.pos += 1;
        }
        let name = std::str::from_utf8(&self.src[start..self.pos]).expect("ascii");
        if self.peek() == Some(b'(') {
            self.pos += 1;
            let mut args = vec![self.expr()?];
            while self.eat(b',') {
                args.push(self.expr()?);
            }
            if !self.eat(b')') {
                return Err(self.err("expected ')' after arguments"));
            }
            let arity = |k: usize| {
                if args.len() == k {
                    Ok(())
                } else {
                    Err(Error::Parse {
                        pos: start,
                        msg: format!("{name} takes {k} argument(s)"),
                    })
                }
            };
            return match name {
                "sqrt" => arity(1).map(|_| Sqrt(Arc::new(args.remove(0)))),
                "exp" => arity(1).map(|_| Exp(Arc::new(args.remove(0)))),
                "log" | "ln" => arity(1).map(|_| Log(Arc::new(args.remove(0)))),
                "pow" => arity(2).map(|_| {
                    let b = args.pop().expect("two args");
                    let a = args.pop().expect("two args");
                    Pow(Arc::new(a), Arc::new(b))
                }),
                _ => Err(Error::Parse {
                    pos: start,
                    msg: format!("unknown function '{name}'"),
                }),
            };
        }
        match name {
            "z" => Ok(Var(Var::Z)),
            "pi" => Ok(Const(std::f64::consts::PI)),
            _ => {
                let digits = name.strip_prefix("x_").or_else(|| name.strip_prefix('x'));
                match digits.and_then(|d| d.parse::<usize>().ok()) {
                    Some(i) if (1..=9).contains(&i) => Ok(Var(Var::X(i - 1))),
                    _ => Err(Error::Parse {
                        pos: start,
                        msg: format!("unknown identifier '{name}'"),
                    }),
                }
            }
        }
    }
}
