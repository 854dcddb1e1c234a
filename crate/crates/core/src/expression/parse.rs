//! Recursive-descent parser for the infix grammar:
//!
//! ```text
//! sum     := product (('+' | '-') product)*
//! product := unary (('*' | '/') unary)*
//! unary   := '-' unary | power
//! power   := primary ('^' integer)?
//! primary := number | identifier | 'exp' '(' sum ')' | '(' sum ')'
//! ```
//!
//! Integer powers 2..=6 expand to right-nested products, so `H^3` becomes
//! `mul(H, mul(H, H))`. A minus sign directly in front of a numeric literal
//! produces a negative constant.

use thiserror::Error;

use super::{BinaryOp, Expr, UnaryOp};

pub const MIN_EXPONENT: u32 = 2;
pub const MAX_EXPONENT: u32 = 6;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParseError {
    #[error("syntax error at position {pos}: {message}")]
    Syntax { pos: usize, message: String },
    #[error("unknown identifier `{name}` at position {pos}")]
    UnknownIdentifier { name: String, pos: usize },
    #[error("non-integer exponent `{text}` at position {pos}")]
    NonIntegerExponent { text: String, pos: usize },
    #[error("exponent {exponent} at position {pos} is outside the supported range 2..=6")]
    ExponentOutOfRange { exponent: f64, pos: usize },
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64, String),
    Ident(String),
    Plus,
    Minus,
    Star,
    Slash,
    Caret,
    LParen,
    RParen,
    End,
}

fn tokenize(text: &str) -> Result<Vec<(Tok, usize)>, ParseError> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        let start = i;
        match c {
            b' ' | b'\t' | b'\n' | b'\r' => {
                i += 1;
                continue;
            }
            b'+' => out.push((Tok::Plus, start)),
            b'-' => out.push((Tok::Minus, start)),
            b'*' => out.push((Tok::Star, start)),
            b'/' => out.push((Tok::Slash, start)),
            b'^' => out.push((Tok::Caret, start)),
            b'(' => out.push((Tok::LParen, start)),
            b')' => out.push((Tok::RParen, start)),
            b'0'..=b'9' | b'.' => {
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
                let s = &text[start..i];
                let v: f64 = s.parse().map_err(|_| ParseError::Syntax {
                    pos: start,
                    message: format!("malformed number `{s}`"),
                })?;
                if !v.is_finite() {
                    return Err(ParseError::Syntax {
                        pos: start,
                        message: format!("number `{s}` is not finite"),
                    });
                }
                out.push((Tok::Num(v, s.to_string()), start));
                continue;
            }
            c if c.is_ascii_alphabetic() || c == b'_' => {
                while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                    i += 1;
                }
                out.push((Tok::Ident(text[start..i].to_string()), start));
                continue;
            }
            _ => {
                let ch = text[start..].chars().next().unwrap_or('?');
                return Err(ParseError::Syntax {
                    pos: start,
                    message: format!("unexpected character `{ch}`"),
                });
            }
        }
        i += 1;
    }
    out.push((Tok::End, text.len()));
    Ok(out)
}

struct Parser<'a> {
    toks: Vec<(Tok, usize)>,
    at: usize,
    variables: &'a [&'a str],
}

impl Parser<'_> {
    fn peek(&self) -> &Tok {
        &self.toks[self.at].0
    }

    fn pos(&self) -> usize {
        self.toks[self.at].1
    }

    fn bump(&mut self) -> (Tok, usize) {
        let t = self.toks[self.at].clone();
        if self.at + 1 < self.toks.len() {
            self.at += 1;
        }
        t
    }

    fn expect(&mut self, tok: Tok, what: &str) -> Result<(), ParseError> {
        if *self.peek() == tok {
            self.bump();
            Ok(())
        } else {
            Err(ParseError::Syntax {
                pos: self.pos(),
                message: format!("expected {what}"),
            })
        }
    }

    fn sum(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.product()?;
        loop {
            let op = match self.peek() {
                Tok::Plus => BinaryOp::Add,
                Tok::Minus => BinaryOp::Sub,
                _ => return Ok(lhs),
            };
            self.bump();
            let rhs = self.product()?;
            lhs = Expr::binary(op, lhs, rhs);
        }
    }

    fn product(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.unary()?;
        loop {
            let op = match self.peek() {
                Tok::Star => BinaryOp::Mul,
                Tok::Slash => BinaryOp::Div,
                _ => return Ok(lhs),
            };
            self.bump();
            let rhs = self.unary()?;
            lhs = Expr::binary(op, lhs, rhs);
        }
    }

    fn unary(&mut self) -> Result<Expr, ParseError> {
        if *self.peek() == Tok::Minus {
            self.bump();
            // `-2.5` is a literal, but `-2^2` is `-(2^2)`.
            if let Tok::Num(v, _) = *self.peek() {
                if self.toks.get(self.at + 1).map(|t| &t.0) != Some(&Tok::Caret) {
                    self.bump();
                    return Ok(Expr::Const(-v));
                }
            }
            let inner = self.unary()?;
            return Ok(Expr::unary(UnaryOp::Neg, inner));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr, ParseError> {
        let base = self.primary()?;
        if *self.peek() != Tok::Caret {
            return Ok(base);
        }
        self.bump();
        let pos = self.pos();
        let (v, text) = match self.bump() {
            (Tok::Num(v, text), _) => (v, text),
            _ => {
                return Err(ParseError::Syntax {
                    pos,
                    message: "expected an integer exponent".into(),
                })
            }
        };
        if v.fract() != 0.0 {
            return Err(ParseError::NonIntegerExponent { text, pos });
        }
        if v < MIN_EXPONENT as f64 || v > MAX_EXPONENT as f64 {
            return Err(ParseError::ExponentOutOfRange { exponent: v, pos });
        }
        if *self.peek() == Tok::Caret {
            return Err(ParseError::Syntax {
                pos: self.pos(),
                message: "chained powers need parentheses".into(),
            });
        }
        Ok(expand_power(&base, v as u32))
    }

    fn primary(&mut self) -> Result<Expr, ParseError> {
        let (tok, pos) = self.bump();
        match tok {
            Tok::Num(v, _) => Ok(Expr::Const(v)),
            Tok::Ident(name) => {
                if *self.peek() == Tok::LParen {
                    if name != "exp" {
                        return Err(ParseError::UnknownIdentifier { name, pos });
                    }
                    self.bump();
                    let inner = self.sum()?;
                    self.expect(Tok::RParen, "`)` closing exp(")?;
                    return Ok(Expr::unary(UnaryOp::Exp, inner));
                }
                if self.variables.contains(&name.as_str()) {
                    Ok(Expr::var(&name))
                } else {
                    Err(ParseError::UnknownIdentifier { name, pos })
                }
            }
            Tok::LParen => {
                let inner = self.sum()?;
                self.expect(Tok::RParen, "`)`")?;
                Ok(inner)
            }
            Tok::End => Err(ParseError::Syntax {
                pos,
                message: "unexpected end of input".into(),
            }),
            other => Err(ParseError::Syntax {
                pos,
                message: format!("unexpected token {other:?}"),
            }),
        }
    }
}

/// `base^n` as `mul(base, mul(base, ... base))`.
pub(crate) fn expand_power(base: &Expr, n: u32) -> Expr {
    let mut acc = base.clone();
    for _ in 1..n {
        acc = Expr::binary(BinaryOp::Mul, base.clone(), acc);
    }
    acc
}

pub(crate) fn parse(text: &str, variables: &[&str]) -> Result<Expr, ParseError> {
    let toks = tokenize(text)?;
    let mut p = Parser { toks, at: 0, variables };
    let e = p.sum()?;
    if *p.peek() != Tok::End {
        return Err(ParseError::Syntax {
            pos: p.pos(),
            message: "unexpected trailing input".into(),
        });
    }
    Ok(e)
}
