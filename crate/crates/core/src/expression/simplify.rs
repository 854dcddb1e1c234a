//! Bottom-up local rewrites: constant folding and identity elimination.
//!
//! Every rule is exact under the evaluation semantics (saturated values are
//! always finite, and protected division makes `x/x` equal to 1 everywhere).

use super::{BinaryOp, Expr, UnaryOp};

pub(crate) fn simplify(e: &Expr) -> Expr {
    match e {
        Expr::Const(_) | Expr::Var(_) => e.clone(),
        Expr::Unary(op, c) => unary(*op, simplify(c)),
        Expr::Binary(op, a, b) => binary(*op, simplify(a), simplify(b)),
    }
}

fn unary(op: UnaryOp, c: Expr) -> Expr {
    if let Some(v) = c.as_const() {
        return Expr::Const(op.apply(v));
    }
    match (op, c) {
        (UnaryOp::Neg, Expr::Unary(UnaryOp::Neg, inner)) => *inner,
        (op, c) => Expr::unary(op, c),
    }
}

fn is(e: &Expr, v: f64) -> bool {
    e.as_const() == Some(v)
}

fn binary(op: BinaryOp, a: Expr, b: Expr) -> Expr {
    if let (Some(x), Some(y)) = (a.as_const(), b.as_const()) {
        return Expr::Const(op.apply(x, y));
    }
    match op {
        BinaryOp::Add if is(&a, 0.0) => b,
        BinaryOp::Add if is(&b, 0.0) => a,
        BinaryOp::Sub if is(&b, 0.0) => a,
        BinaryOp::Sub if a == b => Expr::Const(0.0),
        BinaryOp::Sub if is(&a, 0.0) => unary(UnaryOp::Neg, b),
        BinaryOp::Mul if is(&a, 0.0) || is(&b, 0.0) => Expr::Const(0.0),
        BinaryOp::Mul if is(&a, 1.0) => b,
        BinaryOp::Mul if is(&b, 1.0) => a,
        BinaryOp::Div if is(&b, 1.0) => a,
        BinaryOp::Div if a == b => Expr::Const(1.0),
        _ => Expr::binary(op, a, b),
    }
}
