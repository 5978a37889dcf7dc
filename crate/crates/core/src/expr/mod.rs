//! Coefficient expression language.
//!
//! Every coefficient of a problem (drift, diffusion, drivers, terminal
//! payoffs, switching costs) is written as a small arithmetic expression
//! over a reserved alphabet of variables:
//!
//! ```text
//! t                 time
//! x1 .. xd          state coordinates
//! y1 .. ym          components of Y
//! z11 .. zmd        Z^{i,l}: component i, Brownian coordinate l
//! z10_2             long form z{i}_{l}, needed once i or l exceed 9
//! ```
//!
//! Grammar (EBNF), loosest binding first:
//!
//! ```text
//! expr    = term { ("+" | "-") term } ;
//! term    = unary { ("*" | "/") unary } ;
//! unary   = "-" unary | power ;
//! power   = primary [ "^" unary ] ;
//! primary = number | symbol | call | "(" expr ")" ;
//! call    = ("min" | "max") "(" expr "," expr ")"
//!         | ("exp" | "log" | "sin" | "cos" | "abs" | "sqrt" | "pos" | "neg") "(" expr ")" ;
//! number  = digits [ "." digits ] [ ("e" | "E") [ "+" | "-" ] digits ] ;
//! ```
//!
//! `^` binds tighter than unary minus, so `-x1^2` is `-(x1^2)`, and it is
//! right associative. `pos(u) = max(u, 0)` and `neg(u) = max(-u, 0)`.

mod diff;
mod parse;

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use diff::{default_step, finite_diff, finite_diff_mixed, finite_diff_with, Stencil};
pub use parse::parse;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExprError {
    #[error("syntax error at byte {pos}: expected {expected}, found {found}")]
    Syntax {
        pos: usize,
        expected: String,
        found: String,
    },
    #[error("variable `{symbol}` is not admissible in a {slot} expression")]
    InadmissibleVariable { symbol: String, slot: Slot },
    #[error("domain error: {0}")]
    Domain(String),
    #[error("unbound variable `{0}`")]
    UnboundVariable(String),
}

/// A reserved variable. Indices are zero-based internally and printed
/// one-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Symbol {
    T,
    X(usize),
    Y(usize),
    Z(usize, usize),
}

impl fmt::Display for Symbol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Symbol::T => write!(f, "t"),
            Symbol::X(k) => write!(f, "x{}", k + 1),
            Symbol::Y(i) => write!(f, "y{}", i + 1),
            Symbol::Z(i, l) if i < 9 && l < 9 => write!(f, "z{}{}", i + 1, l + 1),
            Symbol::Z(i, l) => write!(f, "z{}_{}", i + 1, l + 1),
        }
    }
}

/// Which coefficient an expression is written for; decides the admissible
/// variables.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Slot {
    /// b and sigma: (t, x).
    Drift,
    /// f_i: everything.
    Driver,
    /// h_i: x only.
    Terminal,
    /// g_ij: (t, x).
    Cost,
    /// No restriction.
    Any,
}

impl Slot {
    pub fn admits(self, symbol: Symbol) -> bool {
        match self {
            Slot::Driver | Slot::Any => true,
            Slot::Drift | Slot::Cost => matches!(symbol, Symbol::T | Symbol::X(_)),
            Slot::Terminal => matches!(symbol, Symbol::X(_)),
        }
    }
}

impl fmt::Display for Slot {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Slot::Drift => "drift/diffusion",
            Slot::Driver => "driver",
            Slot::Terminal => "terminal",
            Slot::Cost => "switching-cost",
            Slot::Any => "free",
        };
        f.write_str(name)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
    Min,
    Max,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Exp,
    Log,
    Sin,
    Cos,
    Abs,
    Sqrt,
    Pos,
    Neg,
}

impl Func {
    fn name(self) -> &'static str {
        match self {
            Func::Exp => "exp",
            Func::Log => "log",
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Abs => "abs",
            Func::Sqrt => "sqrt",
            Func::Pos => "pos",
            Func::Neg => "neg",
        }
    }

    fn from_name(name: &str) -> Option<Func> {
        Some(match name {
            "exp" => Func::Exp,
            "log" => Func::Log,
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "abs" => Func::Abs,
            "sqrt" => Func::Sqrt,
            "pos" => Func::Pos,
            "neg" => Func::Neg,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Num(f64),
    Var(Symbol),
    Neg(Box<Expr>),
    Bin(BinOp, Box<Expr>, Box<Expr>),
    Call(Func, Box<Expr>),
}

/// Variable lookup used by [`Expr::eval`].
pub trait Bindings {
    fn lookup(&self, symbol: Symbol) -> Option<f64>;
}

impl Bindings for HashMap<Symbol, f64> {
    fn lookup(&self, symbol: Symbol) -> Option<f64> {
        self.get(&symbol).copied()
    }
}

impl Bindings for BTreeMap<Symbol, f64> {
    fn lookup(&self, symbol: Symbol) -> Option<f64> {
        self.get(&symbol).copied()
    }
}

/// Slice-backed bindings for the hot loops: `z` is the m×d matrix stored row
/// by row.
#[derive(Debug, Clone, Copy, Default)]
pub struct Env<'a> {
    pub t: f64,
    pub x: &'a [f64],
    pub y: &'a [f64],
    pub z: &'a [f64],
    pub z_cols: usize,
}

impl<'a> Env<'a> {
    pub fn new(t: f64, x: &'a [f64]) -> Self {
        Env {
            t,
            x,
            y: &[],
            z: &[],
            z_cols: 0,
        }
    }

    pub fn with_y(mut self, y: &'a [f64]) -> Self {
        self.y = y;
        self
    }

    pub fn with_z(mut self, z: &'a [f64], cols: usize) -> Self {
        self.z = z;
        self.z_cols = cols;
        self
    }
}

impl Bindings for Env<'_> {
    #[inline]
    fn lookup(&self, symbol: Symbol) -> Option<f64> {
        match symbol {
            Symbol::T => Some(self.t),
            Symbol::X(k) => self.x.get(k).copied(),
            Symbol::Y(i) => self.y.get(i).copied(),
            Symbol::Z(i, l) => {
                if l >= self.z_cols {
                    return None;
                }
                self.z.get(i * self.z_cols + l).copied()
            }
        }
    }
}

/// Overrides a single symbol of an underlying binding set.
pub(crate) struct Shifted<'a, B: ?Sized> {
    pub base: &'a B,
    pub symbol: Symbol,
    pub value: f64,
}

impl<B: Bindings + ?Sized> Bindings for Shifted<'_, B> {
    #[inline]
    fn lookup(&self, symbol: Symbol) -> Option<f64> {
        if symbol == self.symbol {
            Some(self.value)
        } else {
            self.base.lookup(symbol)
        }
    }
}

impl Expr {
    pub fn num(v: f64) -> Expr {
        Expr::Num(v)
    }

    pub fn var(s: Symbol) -> Expr {
        Expr::Var(s)
    }

    pub fn bin(op: BinOp, a: Expr, b: Expr) -> Expr {
        Expr::Bin(op, Box::new(a), Box::new(b))
    }

    pub fn eval<B: Bindings + ?Sized>(&self, env: &B) -> Result<f64, ExprError> {
        match self {
            Expr::Num(v) => Ok(*v),
            Expr::Var(s) => env.lookup(*s).ok_or_else(|| ExprError::UnboundVariable(s.to_string())),
            Expr::Neg(a) => Ok(-a.eval(env)?),
            Expr::Bin(op, a, b) => {
                let a = a.eval(env)?;
                let b = b.eval(env)?;
                match op {
                    BinOp::Add => Ok(a + b),
                    BinOp::Sub => Ok(a - b),
                    BinOp::Mul => Ok(a * b),
                    BinOp::Div => {
                        if b == 0.0 {
                            Err(ExprError::Domain(format!("division by zero ({a} / 0)")))
                        } else {
                            Ok(a / b)
                        }
                    }
                    BinOp::Pow => pow(a, b),
                    BinOp::Min => Ok(a.min(b)),
                    BinOp::Max => Ok(a.max(b)),
                }
            }
            Expr::Call(func, a) => {
                let a = a.eval(env)?;
                match func {
                    Func::Exp => finite(a.exp(), || format!("exp({a}) overflows")),
                    Func::Log => {
                        if a <= 0.0 {
                            Err(ExprError::Domain(format!("log of non-positive value {a}")))
                        } else {
                            Ok(a.ln())
                        }
                    }
                    Func::Sin => Ok(a.sin()),
                    Func::Cos => Ok(a.cos()),
                    Func::Abs => Ok(a.abs()),
                    Func::Sqrt => {
                        if a < 0.0 {
                            Err(ExprError::Domain(format!("sqrt of negative value {a}")))
                        } else {
                            Ok(a.sqrt())
                        }
                    }
                    Func::Pos => Ok(a.max(0.0)),
                    Func::Neg => Ok((-a).max(0.0)),
                }
            }
        }
    }

    /// Visits every variable occurrence.
    pub fn for_each_symbol(&self, visit: &mut impl FnMut(Symbol)) {
        match self {
            Expr::Num(_) => {}
            Expr::Var(s) => visit(*s),
            Expr::Neg(a) | Expr::Call(_, a) => a.for_each_symbol(visit),
            Expr::Bin(_, a, b) => {
                a.for_each_symbol(visit);
                b.for_each_symbol(visit);
            }
        }
    }

    pub fn symbols(&self) -> Vec<Symbol> {
        let mut out = Vec::new();
        self.for_each_symbol(&mut |s| out.push(s));
        out.sort();
        out.dedup();
        out
    }

    /// True when the expression is a literal zero (after stripping negations).
    pub fn is_literal_zero(&self) -> bool {
        match self {
            Expr::Num(v) => *v == 0.0,
            Expr::Neg(a) => a.is_literal_zero(),
            _ => false,
        }
    }

    /// Constant value if the tree contains no variables.
    pub fn constant_value(&self) -> Option<f64> {
        if self.symbols().is_empty() {
            self.eval(&BTreeMap::new()).ok()
        } else {
            None
        }
    }

    fn precedence(&self) -> u8 {
        match self {
            Expr::Bin(BinOp::Add | BinOp::Sub, ..) => 1,
            Expr::Bin(BinOp::Mul | BinOp::Div, ..) => 2,
            Expr::Neg(_) => 3,
            Expr::Num(v) if *v < 0.0 || (*v == 0.0 && v.is_sign_negative()) => 3,
            Expr::Bin(BinOp::Pow, ..) => 4,
            _ => 5,
        }
    }
}

fn finite(v: f64, msg: impl FnOnce() -> String) -> Result<f64, ExprError> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(ExprError::Domain(msg()))
    }
}

fn pow(base: f64, exponent: f64) -> Result<f64, ExprError> {
    let v = if exponent.fract() == 0.0 && exponent.abs() <= 64.0 {
        base.powi(exponent as i32)
    } else {
        base.powf(exponent)
    };
    if v.is_finite() || !(base.is_finite() && exponent.is_finite()) {
        Ok(v)
    } else {
        Err(ExprError::Domain(format!("{base}^{exponent} is not a real number")))
    }
}

struct Wrapped<'a>(&'a Expr, bool);

impl fmt::Display for Wrapped<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.1 {
            write!(f, "({})", self.0)
        } else {
            write!(f, "{}", self.0)
        }
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Num(v) if *v < 0.0 || (*v == 0.0 && v.is_sign_negative()) => {
                write!(f, "-{}", -v)
            }
            Expr::Num(v) => write!(f, "{v}"),
            Expr::Var(s) => write!(f, "{s}"),
            Expr::Neg(a) => write!(f, "-{}", Wrapped(a, a.precedence() < 3)),
            Expr::Call(func, a) => write!(f, "{}({})", func.name(), a),
            Expr::Bin(op @ (BinOp::Min | BinOp::Max), a, b) => {
                let name = if *op == BinOp::Min { "min" } else { "max" };
                write!(f, "{name}({a}, {b})")
            }
            Expr::Bin(BinOp::Pow, a, b) => write!(
                f,
                "{}^{}",
                Wrapped(a, a.precedence() <= 4),
                Wrapped(b, b.precedence() < 3)
            ),
            Expr::Bin(op, a, b) => {
                let (sym, prec) = match op {
                    BinOp::Add => ("+", 1),
                    BinOp::Sub => ("-", 1),
                    BinOp::Mul => ("*", 2),
                    _ => ("/", 2),
                };
                write!(
                    f,
                    "{} {} {}",
                    Wrapped(a, a.precedence() < prec),
                    sym,
                    Wrapped(b, b.precedence() <= prec)
                )
            }
        }
    }
}
