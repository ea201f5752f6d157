//! Coefficient expressions.
//!
//! A closed arithmetic language over real literals, the state coordinates
//! `x0, x1, ...` (also written `x[0]`), the control coordinates `u0, u1, ...`
//! (`u[0]`), the binary operators `+ - * / ^`, unary minus and the functions
//! `exp log sin cos sqrt abs min max tanh`.
//!
//! Precedence from tightest to loosest: `^` (right associative), unary `-`,
//! `* /`, `+ -`. So `-x0^2` is `-(x0^2)`.

use alloc::boxed::Box;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;
use core::ops;

use crate::error::{Error, Result};
use crate::jet::{Jet, Scalar};

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
    Sin,
    Cos,
    Sqrt,
    Abs,
    Tanh,
    Min,
    Max,
}

impl Func {
    fn from_name(name: &str) -> Option<Func> {
        Some(match name {
            "exp" => Func::Exp,
            "log" => Func::Log,
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "sqrt" => Func::Sqrt,
            "abs" => Func::Abs,
            "tanh" => Func::Tanh,
            "min" => Func::Min,
            "max" => Func::Max,
            _ => return None,
        })
    }

    fn name(self) -> &'static str {
        match self {
            Func::Exp => "exp",
            Func::Log => "log",
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Sqrt => "sqrt",
            Func::Abs => "abs",
            Func::Tanh => "tanh",
            Func::Min => "min",
            Func::Max => "max",
        }
    }

    fn is_variadic(self) -> bool {
        matches!(self, Func::Min | Func::Max)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Num(f64),
    /// State coordinate `x[i]`.
    X(usize),
    /// Control coordinate `u[j]`.
    U(usize),
    Neg(Box<Expr>),
    Bin(BinOp, Box<Expr>, Box<Expr>),
    Call(Func, Vec<Expr>),
}

/// Parses an expression. See the module docs for the grammar.
pub fn parse_expr(source: &str) -> Result<Expr> {
    let mut p = Parser {
        src: source.as_bytes(),
        pos: 0,
    };
    p.skip_ws();
    if p.pos == p.src.len() {
        return Err(Error::Syntax {
            offset: 0,
            message: "empty expression".into(),
        });
    }
    let e = p.expr()?;
    p.skip_ws();
    if p.pos != p.src.len() {
        return Err(p.err("unexpected trailing input"));
    }
    Ok(e)
}

impl core::str::FromStr for Expr {
    type Err = Error;
    fn from_str(s: &str) -> Result<Expr> {
        parse_expr(s)
    }
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
}

impl Parser<'_> {
    fn err(&self, message: &str) -> Error {
        Error::Syntax {
            offset: self.pos,
            message: message.to_string(),
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

    fn expect(&mut self, c: u8) -> Result<()> {
        if self.eat(c) {
            Ok(())
        } else {
            Err(self.err(&alloc::format!("expected `{}`", c as char)))
        }
    }

    fn expr(&mut self) -> Result<Expr> {
        let mut lhs = self.term()?;
        loop {
            let op = match self.peek() {
                Some(b'+') => BinOp::Add,
                Some(b'-') => BinOp::Sub,
                _ => return Ok(lhs),
            };
            self.pos += 1;
            let rhs = self.term()?;
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn term(&mut self) -> Result<Expr> {
        let mut lhs = self.unary()?;
        loop {
            let op = match self.peek() {
                Some(b'*') => BinOp::Mul,
                Some(b'/') => BinOp::Div,
                _ => return Ok(lhs),
            };
            self.pos += 1;
            let rhs = self.unary()?;
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn unary(&mut self) -> Result<Expr> {
        if self.eat(b'-') {
            Ok(Expr::Neg(Box::new(self.unary()?)))
        } else if self.eat(b'+') {
            self.unary()
        } else {
            self.power()
        }
    }

    fn power(&mut self) -> Result<Expr> {
        let base = self.primary()?;
        if self.eat(b'^') {
            let exponent = self.unary()?;
            Ok(Expr::Bin(BinOp::Pow, Box::new(base), Box::new(exponent)))
        } else {
            Ok(base)
        }
    }

    fn primary(&mut self) -> Result<Expr> {
        match self.peek() {
            Some(b'(') => {
                self.pos += 1;
                let e = self.expr()?;
                self.expect(b')')?;
                Ok(e)
            }
            Some(c) if c.is_ascii_digit() || c == b'.' => self.number(),
            Some(c) if c.is_ascii_alphabetic() || c == b'_' => self.identifier(),
            Some(_) => Err(self.err("unexpected character")),
            None => Err(self.err("unexpected end of input")),
        }
    }

    fn number(&mut self) -> Result<Expr> {
        let start = self.pos;
        let bytes = self.src;
        let mut end = start;
        while end < bytes.len() && (bytes[end].is_ascii_digit() || bytes[end] == b'.') {
            end += 1;
        }
        if end < bytes.len() && (bytes[end] == b'e' || bytes[end] == b'E') {
            let mut k = end + 1;
            if k < bytes.len() && (bytes[k] == b'+' || bytes[k] == b'-') {
                k += 1;
            }
            if k < bytes.len() && bytes[k].is_ascii_digit() {
                while k < bytes.len() && bytes[k].is_ascii_digit() {
                    k += 1;
                }
                end = k;
            }
        }
        let text = core::str::from_utf8(&bytes[start..end]).map_err(|_| self.err("bad number"))?;
        let v: f64 = text.parse().map_err(|_| Error::Syntax {
            offset: start,
            message: alloc::format!("malformed number `{text}`"),
        })?;
        self.pos = end;
        Ok(Expr::Num(v))
    }

    fn index_suffix(&mut self, digits: &str, start: usize) -> Result<Option<usize>> {
        if !digits.is_empty() {
            return digits
                .parse()
                .map(Some)
                .map_err(|_| Error::Syntax {
                    offset: start,
                    message: "bad coordinate index".into(),
                });
        }
        if self.eat(b'[') {
            self.skip_ws();
            let s = self.pos;
            while self.pos < self.src.len() && self.src[self.pos].is_ascii_digit() {
                self.pos += 1;
            }
            let idx = core::str::from_utf8(&self.src[s..self.pos])
                .ok()
                .and_then(|t| t.parse().ok())
                .ok_or_else(|| self.err("expected coordinate index"))?;
            self.expect(b']')?;
            return Ok(Some(idx));
        }
        Ok(None)
    }

    fn identifier(&mut self) -> Result<Expr> {
        let start = self.pos;
        while self.pos < self.src.len()
            && (self.src[self.pos].is_ascii_alphanumeric() || self.src[self.pos] == b'_')
        {
            self.pos += 1;
        }
        // identifiers are ASCII by construction
        let name = core::str::from_utf8(&self.src[start..self.pos]).unwrap_or("");
        let (head, tail) = name.split_at(1);
        if (head == "x" || head == "u") && tail.bytes().all(|b| b.is_ascii_digit()) {
            if let Some(i) = self.index_suffix(tail, start)? {
                return Ok(if head == "x" { Expr::X(i) } else { Expr::U(i) });
            }
        }
        let func = Func::from_name(name).ok_or_else(|| Error::UnknownIdentifier {
            name: name.to_string(),
            offset: start,
        })?;
        self.expect(b'(')?;
        let mut args = Vec::new();
        if !self.eat(b')') {
            loop {
                args.push(self.expr()?);
                if self.eat(b')') {
                    break;
                }
                self.expect(b',')?;
            }
        }
        let ok = if func.is_variadic() {
            args.len() >= 2
        } else {
            args.len() == 1
        };
        if !ok {
            return Err(Error::Syntax {
                offset: start,
                message: alloc::format!("wrong number of arguments to `{}`", func.name()),
            });
        }
        Ok(Expr::Call(func, args))
    }
}

impl Expr {
    /// Evaluates at state `x` and control `u`.
    pub fn eval(&self, x: &[f64], u: &[f64]) -> f64 {
        self.eval_with(x, u)
    }

    /// Evaluates with values, gradient and Hessian in `x` (at most three
    /// coordinates). Controls are treated as constants.
    pub fn eval_jet(&self, x: &[f64], u: &[f64]) -> (f64, [f64; 3], [[f64; 3]; 3]) {
        let xs: Vec<Jet> = x
            .iter()
            .enumerate()
            .map(|(i, &v)| Jet::variable(v, i))
            .collect();
        let us: Vec<Jet> = u.iter().map(|&v| Jet::constant(v)).collect();
        let j = self.eval_with(&xs, &us);
        (j.v, j.g, j.h)
    }

    pub fn eval_with<S: Scalar>(&self, x: &[S], u: &[S]) -> S {
        match self {
            Expr::Num(v) => S::constant(*v),
            Expr::X(i) => x.get(*i).copied().unwrap_or(S::constant(f64::NAN)),
            Expr::U(j) => u.get(*j).copied().unwrap_or(S::constant(f64::NAN)),
            Expr::Neg(e) => -e.eval_with(x, u),
            Expr::Bin(op, a, b) => {
                let (a, b) = (a.eval_with(x, u), b.eval_with(x, u));
                match op {
                    BinOp::Add => a + b,
                    BinOp::Sub => a - b,
                    BinOp::Mul => a * b,
                    BinOp::Div => a / b,
                    BinOp::Pow => a.pow(b),
                }
            }
            Expr::Call(f, args) => {
                let mut vals = args.iter().map(|a| a.eval_with(x, u));
                let first = vals.next().unwrap_or(S::constant(f64::NAN));
                match f {
                    Func::Exp => first.exp(),
                    Func::Log => first.ln(),
                    Func::Sin => first.sin(),
                    Func::Cos => first.cos(),
                    Func::Sqrt => first.sqrt(),
                    Func::Abs => first.abs(),
                    Func::Tanh => first.tanh(),
                    Func::Min => vals.fold(first, |m, v| m.min(v)),
                    Func::Max => vals.fold(first, |m, v| m.max(v)),
                }
            }
        }
    }

    fn visit(&self, f: &mut impl FnMut(&Expr)) {
        f(self);
        match self {
            Expr::Neg(e) => e.visit(f),
            Expr::Bin(_, a, b) => {
                a.visit(f);
                b.visit(f);
            }
            Expr::Call(_, args) => args.iter().for_each(|a| a.visit(f)),
            _ => {}
        }
    }

    /// Number of state coordinates referenced (largest index + 1).
    pub fn x_arity(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |e| {
            if let Expr::X(i) = e {
                n = n.max(i + 1);
            }
        });
        n
    }

    /// Number of control coordinates referenced (largest index + 1).
    pub fn u_arity(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |e| {
            if let Expr::U(j) = e {
                n = n.max(j + 1);
            }
        });
        n
    }

    pub fn depends_on_x(&self) -> bool {
        self.x_arity() > 0
    }

    pub fn depends_on_u(&self) -> bool {
        self.u_arity() > 0
    }

    pub fn is_constant(&self) -> bool {
        !self.depends_on_x() && !self.depends_on_u()
    }

    pub fn num(v: f64) -> Expr {
        Expr::Num(v)
    }

    pub fn call(f: Func, args: Vec<Expr>) -> Expr {
        Expr::Call(f, args)
    }

    /// Euclidean norm of the first `dim` state coordinates.
    pub fn radius(dim: usize) -> Expr {
        let sum = (0..dim)
            .map(|i| Expr::X(i) * Expr::X(i))
            .reduce(|a, b| a + b)
            .unwrap_or(Expr::Num(0.0));
        Expr::Call(Func::Sqrt, alloc::vec![sum])
    }

    pub fn pow(self, exponent: Expr) -> Expr {
        Expr::Bin(BinOp::Pow, Box::new(self), Box::new(exponent))
    }
}

macro_rules! expr_binop {
    ($trait:ident, $method:ident, $op:expr) => {
        impl ops::$trait for Expr {
            type Output = Expr;
            fn $method(self, rhs: Expr) -> Expr {
                Expr::Bin($op, Box::new(self), Box::new(rhs))
            }
        }
    };
}

expr_binop!(Add, add, BinOp::Add);
expr_binop!(Sub, sub, BinOp::Sub);
expr_binop!(Mul, mul, BinOp::Mul);
expr_binop!(Div, div, BinOp::Div);

impl ops::Neg for Expr {
    type Output = Expr;
    fn neg(self) -> Expr {
        Expr::Neg(Box::new(self))
    }
}

impl fmt::Display for Expr {
    /// Fully parenthesized; literals use the shortest round-trip form.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Num(v) if *v < 0.0 => write!(f, "(-{:?})", -v),
            Expr::Num(v) => write!(f, "{v:?}"),
            Expr::X(i) => write!(f, "x{i}"),
            Expr::U(j) => write!(f, "u{j}"),
            Expr::Neg(e) => write!(f, "(-{e})"),
            Expr::Bin(op, a, b) => {
                let sym = match op {
                    BinOp::Add => "+",
                    BinOp::Sub => "-",
                    BinOp::Mul => "*",
                    BinOp::Div => "/",
                    BinOp::Pow => "^",
                };
                write!(f, "({a} {sym} {b})")
            }
            Expr::Call(func, args) => {
                write!(f, "{}(", func.name())?;
                for (k, a) in args.iter().enumerate() {
                    if k > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{a}")?;
                }
                f.write_str(")")
            }
        }
    }
}

impl Expr {
    pub fn to_source(&self) -> String {
        alloc::format!("{self}")
    }
}
