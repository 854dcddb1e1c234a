//! Infix rendering that preserves tree structure under re-parsing.
//!
//! Right operands of the same precedence are parenthesized so the
//! left-associative parser rebuilds the exact same tree. Right-nested
//! products of identical subtrees print as integer powers.

use super::parse::{MAX_EXPONENT, MIN_EXPONENT};
use super::{BinaryOp, Expr, UnaryOp};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Precision {
    /// Shortest text that round-trips to the same `f64`.
    Full,
    /// Three significant digits, for human-facing tables.
    Sig3,
}

const PREC_SUM: u8 = 1;
const PREC_PRODUCT: u8 = 2;
const PREC_UNARY: u8 = 3;
const PREC_POWER: u8 = 4;
const PREC_ATOM: u8 = 5;

/// Format with three significant digits, trimming trailing zeros.
pub fn format_sig3(v: f64) -> String {
    if v == 0.0 {
        return "0".to_string();
    }
    let magnitude = v.abs().log10().floor() as i32;
    let decimals = (2 - magnitude).max(0) as usize;
    let mut s = format!("{v:.decimals$}");
    if s.contains('.') {
        while s.ends_with('0') {
            s.pop();
        }
        if s.ends_with('.') {
            s.pop();
        }
    }
    if s == "-0" {
        s = "0".to_string();
    }
    s
}

fn format_const(v: f64, precision: Precision) -> String {
    match precision {
        Precision::Full => format!("{v}"),
        Precision::Sig3 => format_sig3(v),
    }
}

/// If `e` is `mul(b, mul(b, ... b))` with `n` copies of `b`, return `(b, n)`.
fn as_power(e: &Expr) -> Option<(&Expr, u32)> {
    let Expr::Binary(BinaryOp::Mul, base, rest) = e else {
        return None;
    };
    if **rest == **base {
        return Some((base, 2));
    }
    match as_power(rest) {
        Some((b, n)) if b == &**base => Some((base, n + 1)),
        _ => None,
    }
}

fn is_negative_literal(e: &Expr) -> bool {
    matches!(e, Expr::Const(v) if v.is_sign_negative())
}

fn write(e: &Expr, precision: Precision, out: &mut String) -> u8 {
    match e {
        Expr::Const(v) => {
            out.push_str(&format_const(*v, precision));
            if v.is_sign_negative() {
                PREC_UNARY
            } else {
                PREC_ATOM
            }
        }
        Expr::Var(name) => {
            out.push_str(name);
            PREC_ATOM
        }
        Expr::Unary(UnaryOp::Exp, c) => {
            out.push_str("exp(");
            write(c, precision, out);
            out.push(')');
            PREC_ATOM
        }
        Expr::Unary(UnaryOp::Neg, c) => {
            out.push('-');
            // A bare `-<number>` would re-parse as a literal, and `--x` needs
            // a separator, so anything short of an atom gets parentheses.
            let needs_parens = c.as_const().is_some() || child_prec(c) < PREC_POWER;
            write_wrapped(c, precision, needs_parens, out);
            PREC_UNARY
        }
        Expr::Binary(op, a, b) => {
            if let Some((base, n)) = as_power(e) {
                if (MIN_EXPONENT..=MAX_EXPONENT).contains(&n) {
                    let wrap = child_prec(base) < PREC_ATOM;
                    write_wrapped(base, precision, wrap, out);
                    out.push('^');
                    out.push_str(&n.to_string());
                    return PREC_POWER;
                }
            }
            let (prec, sym) = match op {
                BinaryOp::Add => (PREC_SUM, " + "),
                BinaryOp::Sub => (PREC_SUM, " - "),
                BinaryOp::Mul => (PREC_PRODUCT, "*"),
                BinaryOp::Div => (PREC_PRODUCT, "/"),
            };
            let left_wrap = child_prec(a) < prec;
            write_wrapped(a, precision, left_wrap, out);
            out.push_str(sym);
            let right_wrap =
                child_prec(b) <= prec || is_negative_literal(b) || matches!(**b, Expr::Unary(UnaryOp::Neg, _));
            write_wrapped(b, precision, right_wrap, out);
            prec
        }
    }
}

fn child_prec(e: &Expr) -> u8 {
    match e {
        Expr::Const(v) if v.is_sign_negative() => PREC_UNARY,
        Expr::Const(_) | Expr::Var(_) | Expr::Unary(UnaryOp::Exp, _) => PREC_ATOM,
        Expr::Unary(UnaryOp::Neg, _) => PREC_UNARY,
        Expr::Binary(op, _, _) => {
            if let Some((_, n)) = as_power(e) {
                if (MIN_EXPONENT..=MAX_EXPONENT).contains(&n) {
                    return PREC_POWER;
                }
            }
            match op {
                BinaryOp::Add | BinaryOp::Sub => PREC_SUM,
                BinaryOp::Mul | BinaryOp::Div => PREC_PRODUCT,
            }
        }
    }
}

fn write_wrapped(e: &Expr, precision: Precision, wrap: bool, out: &mut String) {
    if wrap {
        out.push('(');
    }
    write(e, precision, out);
    if wrap {
        out.push(')');
    }
}

pub(crate) fn render(e: &Expr, precision: Precision) -> String {
    let mut out = String::new();
    write(e, precision, &mut out);
    out
}
