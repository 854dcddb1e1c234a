//! Symbolic expression trees.
//!
//! An [`Expr`] is an immutable tree over named variables, finite constants and
//! the primitive set `{add, sub, mul, protected-div, neg, exp}`. Evaluation is
//! total: protected division returns 1 for near-zero denominators, `exp`
//! clamps its argument to `[-700, 700]`, and every intermediate value is
//! saturated to the finite range, so no NaN or infinity is ever produced from
//! finite bindings.

mod compiled;
mod config;
mod parse;
mod render;
mod serde_repr;
mod simplify;
mod variation;

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use compiled::CompiledExpr;
pub use config::{ExprConfig, MutationWeights};
pub use parse::ParseError;
pub use render::{format_sig3, Precision};
pub use variation::{crossover, crossover_at, mutate, mutate_with, random_tree, Mutation};

/// Denominators smaller than this in magnitude make division return 1.
pub const PROTECTED_DIV_EPS: f64 = 1e-12;
/// Symmetric clamp applied to the argument of `exp`.
pub const EXP_ARG_LIMIT: f64 = 700.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnaryOp {
    Neg,
    Exp,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
}

/// A member of the function set available to tree generation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Primitive {
    Add,
    Sub,
    Mul,
    Div,
    Neg,
    Exp,
}

impl Primitive {
    pub const ALL: [Primitive; 6] = [
        Primitive::Add,
        Primitive::Sub,
        Primitive::Mul,
        Primitive::Div,
        Primitive::Neg,
        Primitive::Exp,
    ];

    pub fn arity(self) -> usize {
        match self {
            Primitive::Neg | Primitive::Exp => 1,
            _ => 2,
        }
    }
}

impl From<UnaryOp> for Primitive {
    fn from(op: UnaryOp) -> Self {
        match op {
            UnaryOp::Neg => Primitive::Neg,
            UnaryOp::Exp => Primitive::Exp,
        }
    }
}

impl From<BinaryOp> for Primitive {
    fn from(op: BinaryOp) -> Self {
        match op {
            BinaryOp::Add => Primitive::Add,
            BinaryOp::Sub => Primitive::Sub,
            BinaryOp::Mul => Primitive::Mul,
            BinaryOp::Div => Primitive::Div,
        }
    }
}

impl UnaryOp {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            UnaryOp::Neg => -x,
            UnaryOp::Exp => guarded_exp(x),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            UnaryOp::Neg => "neg",
            UnaryOp::Exp => "exp",
        }
    }
}

impl BinaryOp {
    #[inline]
    pub fn apply(self, a: f64, b: f64) -> f64 {
        match self {
            BinaryOp::Add => saturate(a + b),
            BinaryOp::Sub => saturate(a - b),
            BinaryOp::Mul => saturate(a * b),
            BinaryOp::Div => protected_div(a, b),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            BinaryOp::Add => "add",
            BinaryOp::Sub => "sub",
            BinaryOp::Mul => "mul",
            BinaryOp::Div => "div",
        }
    }
}

/// Clamp to the finite `f64` range. NaN passes through unchanged.
#[inline]
pub fn saturate(v: f64) -> f64 {
    v.clamp(-f64::MAX, f64::MAX)
}

#[inline]
pub fn protected_div(a: f64, b: f64) -> f64 {
    if b.abs() < PROTECTED_DIV_EPS {
        1.0
    } else {
        saturate(a / b)
    }
}

#[inline]
pub fn guarded_exp(x: f64) -> f64 {
    saturate(x.clamp(-EXP_ARG_LIMIT, EXP_ARG_LIMIT).exp())
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("unbound variable `{0}`")]
    UnboundVariable(String),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExprError {
    #[error("constant {0} is not finite")]
    NonFiniteConstant(f64),
    #[error("variable `{0}` is not in the declared variable set")]
    UndeclaredVariable(String),
    #[error("tree depth {depth} exceeds the cap of {cap}")]
    TooDeep { depth: usize, cap: usize },
    #[error("malformed node: {0}")]
    Malformed(String),
}

/// Variable lookup used by [`Expr::eval`].
pub trait Bindings {
    fn value(&self, name: &str) -> Option<f64>;
}

impl Bindings for HashMap<String, f64> {
    fn value(&self, name: &str) -> Option<f64> {
        self.get(name).copied()
    }
}

impl Bindings for BTreeMap<String, f64> {
    fn value(&self, name: &str) -> Option<f64> {
        self.get(name).copied()
    }
}

impl Bindings for [(&str, f64)] {
    fn value(&self, name: &str) -> Option<f64> {
        self.iter().find(|(n, _)| *n == name).map(|(_, v)| *v)
    }
}

impl<const N: usize> Bindings for [(&str, f64); N] {
    fn value(&self, name: &str) -> Option<f64> {
        self.as_slice().value(name)
    }
}

/// Symbolic expression tree.
#[derive(Clone, Debug, PartialEq)]
pub enum Expr {
    Const(f64),
    Var(Arc<str>),
    Unary(UnaryOp, Box<Expr>),
    Binary(BinaryOp, Box<Expr>, Box<Expr>),
}

impl Expr {
    pub fn constant(v: f64) -> Self {
        Expr::Const(v)
    }

    pub fn var(name: &str) -> Self {
        Expr::Var(Arc::from(name))
    }

    pub fn unary(op: UnaryOp, child: Expr) -> Self {
        Expr::Unary(op, Box::new(child))
    }

    pub fn binary(op: BinaryOp, lhs: Expr, rhs: Expr) -> Self {
        Expr::Binary(op, Box::new(lhs), Box::new(rhs))
    }

    /// Parse infix text over the declared variables.
    pub fn parse(text: &str, variables: &[&str]) -> Result<Self, ParseError> {
        parse::parse(text, variables)
    }

    pub fn eval<B: Bindings + ?Sized>(&self, bindings: &B) -> Result<f64, EvalError> {
        Ok(match self {
            Expr::Const(v) => *v,
            Expr::Var(name) => bindings
                .value(name)
                .ok_or_else(|| EvalError::UnboundVariable(name.to_string()))?,
            Expr::Unary(op, c) => op.apply(c.eval(bindings)?),
            Expr::Binary(op, a, b) => op.apply(a.eval(bindings)?, b.eval(bindings)?),
        })
    }

    pub fn is_leaf(&self) -> bool {
        matches!(self, Expr::Const(_) | Expr::Var(_))
    }

    pub fn as_const(&self) -> Option<f64> {
        match self {
            Expr::Const(v) => Some(*v),
            _ => None,
        }
    }

    /// Total node count.
    pub fn node_count(&self) -> usize {
        match self {
            Expr::Const(_) | Expr::Var(_) => 1,
            Expr::Unary(_, c) => 1 + c.node_count(),
            Expr::Binary(_, a, b) => 1 + a.node_count() + b.node_count(),
        }
    }

    pub fn constant_count(&self) -> usize {
        match self {
            Expr::Const(_) => 1,
            Expr::Var(_) => 0,
            Expr::Unary(_, c) => c.constant_count(),
            Expr::Binary(_, a, b) => a.constant_count() + b.constant_count(),
        }
    }

    pub fn complexity(&self) -> Complexity {
        Complexity {
            nodes: self.node_count(),
            constants: self.constant_count(),
        }
    }

    /// Depth with a single leaf counting as 1.
    pub fn depth(&self) -> usize {
        match self {
            Expr::Const(_) | Expr::Var(_) => 1,
            Expr::Unary(_, c) => 1 + c.depth(),
            Expr::Binary(_, a, b) => 1 + a.depth().max(b.depth()),
        }
    }

    /// Constants in pre-order.
    pub fn constants(&self) -> Vec<f64> {
        let mut out = Vec::new();
        self.visit(&mut |e| {
            if let Expr::Const(v) = e {
                out.push(*v);
            }
        });
        out
    }

    /// Replace constants in pre-order. Extra values are ignored; missing
    /// values leave the remaining constants untouched.
    pub fn with_constants(&self, values: &[f64]) -> Expr {
        let mut it = values.iter().copied();
        self.map_constants(&mut it)
    }

    fn map_constants(&self, it: &mut impl Iterator<Item = f64>) -> Expr {
        match self {
            Expr::Const(v) => Expr::Const(it.next().unwrap_or(*v)),
            Expr::Var(_) => self.clone(),
            Expr::Unary(op, c) => Expr::unary(*op, c.map_constants(it)),
            Expr::Binary(op, a, b) => {
                let a = a.map_constants(it);
                let b = b.map_constants(it);
                Expr::binary(*op, a, b)
            }
        }
    }

    /// Sorted, deduplicated variable names referenced by the tree.
    pub fn variables(&self) -> Vec<String> {
        let mut names = Vec::new();
        self.visit(&mut |e| {
            if let Expr::Var(n) = e {
                names.push(n.to_string());
            }
        });
        names.sort();
        names.dedup();
        names
    }

    /// Pre-order traversal.
    pub fn visit<'a>(&'a self, f: &mut impl FnMut(&'a Expr)) {
        f(self);
        match self {
            Expr::Const(_) | Expr::Var(_) => {}
            Expr::Unary(_, c) => c.visit(f),
            Expr::Binary(_, a, b) => {
                a.visit(f);
                b.visit(f);
            }
        }
    }

    /// The `index`-th node in pre-order.
    pub fn subtree(&self, index: usize) -> Option<&Expr> {
        let mut remaining = index;
        self.find_subtree(&mut remaining)
    }

    fn find_subtree(&self, remaining: &mut usize) -> Option<&Expr> {
        if *remaining == 0 {
            return Some(self);
        }
        *remaining -= 1;
        match self {
            Expr::Const(_) | Expr::Var(_) => None,
            Expr::Unary(_, c) => c.find_subtree(remaining),
            Expr::Binary(_, a, b) => a.find_subtree(remaining).or_else(|| b.find_subtree(remaining)),
        }
    }

    /// Depth of the `index`-th pre-order node below the root (root = 1).
    pub fn node_depth(&self, index: usize) -> Option<usize> {
        fn go(e: &Expr, remaining: &mut usize, level: usize) -> Option<usize> {
            if *remaining == 0 {
                return Some(level);
            }
            *remaining -= 1;
            match e {
                Expr::Const(_) | Expr::Var(_) => None,
                Expr::Unary(_, c) => go(c, remaining, level + 1),
                Expr::Binary(_, a, b) => go(a, remaining, level + 1).or_else(|| go(b, remaining, level + 1)),
            }
        }
        let mut remaining = index;
        go(self, &mut remaining, 1)
    }

    /// Copy of `self` with the `index`-th pre-order node replaced.
    pub fn replace_subtree(&self, index: usize, replacement: &Expr) -> Expr {
        fn go(e: &Expr, remaining: &mut usize, replacement: &Expr) -> Expr {
            if *remaining == 0 {
                *remaining = usize::MAX;
                return replacement.clone();
            }
            if *remaining == usize::MAX {
                return e.clone();
            }
            *remaining -= 1;
            match e {
                Expr::Const(_) | Expr::Var(_) => e.clone(),
                Expr::Unary(op, c) => Expr::unary(*op, go(c, remaining, replacement)),
                Expr::Binary(op, a, b) => {
                    let a = go(a, remaining, replacement);
                    let b = go(b, remaining, replacement);
                    Expr::binary(*op, a, b)
                }
            }
        }
        let mut remaining = index;
        go(self, &mut remaining, replacement)
    }

    /// Check the structural invariants: finite constants, declared
    /// variables, and the depth cap.
    pub fn validate(&self, variables: &[&str], max_depth: usize) -> Result<(), ExprError> {
        let mut err = None;
        self.visit(&mut |e| {
            if err.is_some() {
                return;
            }
            match e {
                Expr::Const(v) if !v.is_finite() => err = Some(ExprError::NonFiniteConstant(*v)),
                Expr::Var(n) if !variables.contains(&n.as_ref()) => {
                    err = Some(ExprError::UndeclaredVariable(n.to_string()))
                }
                _ => {}
            }
        });
        if let Some(e) = err {
            return Err(e);
        }
        let depth = self.depth();
        if depth > max_depth {
            return Err(ExprError::TooDeep { depth, cap: max_depth });
        }
        Ok(())
    }

    pub fn simplify(&self) -> Expr {
        simplify::simplify(self)
    }

    /// Infix text with constants at full round-trip precision.
    pub fn render(&self) -> String {
        render::render(self, Precision::Full)
    }

    /// Infix text with constants at three significant digits.
    pub fn render_short(&self) -> String {
        render::render(self, Precision::Sig3)
    }

    /// Compile to a stack program over `variables` (in that column order).
    pub fn compile(&self, variables: &[&str]) -> Result<CompiledExpr, EvalError> {
        CompiledExpr::compile(self, variables)
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Complexity {
    pub nodes: usize,
    pub constants: usize,
}
