//! Recursive-descent parser.
//!
//! Precedence, tightest first: `^`, unary minus, `*` `/`, `+` `-`. Binary
//! operators of equal precedence associate to the left, `^` included. The
//! right operand of `^` must be an integer literal, optionally negated and
//! optionally parenthesised. `pi` and `e` are constants.

use std::collections::HashSet;

use thiserror::Error;

use crate::ast::{BinOp, Expr, UnaryOp};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParseError {
    #[error("syntax error at byte {offset}: {message}")]
    Syntax { offset: usize, message: String },
    #[error("unknown identifier `{name}` at byte {offset}")]
    UnknownIdentifier { name: String, offset: usize },
}

impl ParseError {
    pub fn offset(&self) -> usize {
        match self {
            ParseError::Syntax { offset, .. } | ParseError::UnknownIdentifier { offset, .. } => {
                *offset
            }
        }
    }
}

/// Names that cannot be declared as variables.
pub const RESERVED: [&str; 2] = ["pi", "e"];

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Op(char),
    End,
}

struct Lexer<'a> {
    src: &'a str,
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Lexer<'a> {
    fn skip_ws(&mut self) {
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn next(&mut self) -> Result<(Tok, usize), ParseError> {
        self.skip_ws();
        let start = self.pos;
        let Some(&c) = self.bytes.get(self.pos) else {
            return Ok((Tok::End, start));
        };
        if c.is_ascii_digit() || c == b'.' {
            return self.number(start).map(|v| (Tok::Num(v), start));
        }
        if c.is_ascii_alphabetic() || c == b'_' {
            while self
                .bytes
                .get(self.pos)
                .is_some_and(|b| b.is_ascii_alphanumeric() || *b == b'_')
            {
                self.pos += 1;
            }
            return Ok((Tok::Ident(self.src[start..self.pos].to_string()), start));
        }
        if b"+-*/^()".contains(&c) {
            self.pos += 1;
            return Ok((Tok::Op(c as char), start));
        }
        let ch = self.src[start..].chars().next().unwrap_or('?');
        Err(ParseError::Syntax {
            offset: start,
            message: format!("unexpected character `{ch}`"),
        })
    }

    fn number(&mut self, start: usize) -> Result<f64, ParseError> {
        let digits = |lx: &mut Self| {
            let s = lx.pos;
            while lx.bytes.get(lx.pos).is_some_and(u8::is_ascii_digit) {
                lx.pos += 1;
            }
            lx.pos - s
        };
        let mut n = digits(self);
        if self.bytes.get(self.pos) == Some(&b'.') {
            self.pos += 1;
            n += digits(self);
        }
        if n == 0 {
            return Err(ParseError::Syntax {
                offset: start,
                message: "malformed number".into(),
            });
        }
        if matches!(self.bytes.get(self.pos), Some(b'e' | b'E')) {
            let save = self.pos;
            self.pos += 1;
            if matches!(self.bytes.get(self.pos), Some(b'+' | b'-')) {
                self.pos += 1;
            }
            if digits(self) == 0 {
                // `2e` followed by something else: the `e` is not an exponent.
                self.pos = save;
            }
        }
        self.src[start..self.pos]
            .parse::<f64>()
            .map_err(|_| ParseError::Syntax {
                offset: start,
                message: "malformed number".into(),
            })
    }
}

struct Parser<'a> {
    lexer: Lexer<'a>,
    tok: Tok,
    at: usize,
    allowed: &'a HashSet<String>,
}

impl<'a> Parser<'a> {
    fn advance(&mut self) -> Result<(), ParseError> {
        let (tok, at) = self.lexer.next()?;
        self.tok = tok;
        self.at = at;
        Ok(())
    }

    fn syntax<T>(&self, message: impl Into<String>) -> Result<T, ParseError> {
        Err(ParseError::Syntax {
            offset: self.at,
            message: message.into(),
        })
    }

    fn expect(&mut self, op: char) -> Result<(), ParseError> {
        if self.tok == Tok::Op(op) {
            self.advance()
        } else {
            self.syntax(format!("expected `{op}`"))
        }
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.term()?;
        loop {
            let op = match self.tok {
                Tok::Op('+') => BinOp::Add,
                Tok::Op('-') => BinOp::Sub,
                _ => return Ok(lhs),
            };
            self.advance()?;
            let rhs = self.term()?;
            lhs = Expr::binary(op, lhs, rhs);
        }
    }

    fn term(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.unary()?;
        loop {
            let op = match self.tok {
                Tok::Op('*') => BinOp::Mul,
                Tok::Op('/') => BinOp::Div,
                _ => return Ok(lhs),
            };
            self.advance()?;
            let rhs = self.unary()?;
            lhs = Expr::binary(op, lhs, rhs);
        }
    }

    fn unary(&mut self) -> Result<Expr, ParseError> {
        match self.tok {
            Tok::Op('-') => {
                self.advance()?;
                Ok(match self.unary()? {
                    Expr::Num(v) => Expr::Num(-v),
                    e => Expr::unary(UnaryOp::Neg, e),
                })
            }
            Tok::Op('+') => {
                self.advance()?;
                self.unary()
            }
            _ => self.power(),
        }
    }

    fn power(&mut self) -> Result<Expr, ParseError> {
        let mut base = self.primary()?;
        while self.tok == Tok::Op('^') {
            self.advance()?;
            let n = self.exponent()?;
            base = Expr::pow(base, n);
        }
        Ok(base)
    }

    fn exponent(&mut self) -> Result<i32, ParseError> {
        let paren = self.tok == Tok::Op('(');
        if paren {
            self.advance()?;
        }
        let neg = self.tok == Tok::Op('-');
        if neg {
            self.advance()?;
        }
        let Tok::Num(v) = self.tok else {
            return self.syntax("exponent must be an integer constant");
        };
        if v.fract() != 0.0 || v > i32::MAX as f64 {
            return self.syntax("exponent must be an integer constant");
        }
        self.advance()?;
        if paren {
            self.expect(')')?;
        }
        let n = v as i32;
        Ok(if neg { -n } else { n })
    }

    fn primary(&mut self) -> Result<Expr, ParseError> {
        match self.tok.clone() {
            Tok::Num(v) => {
                self.advance()?;
                Ok(Expr::Num(v))
            }
            Tok::Op('(') => {
                self.advance()?;
                let e = self.expr()?;
                self.expect(')')?;
                Ok(e)
            }
            Tok::Ident(name) => {
                let at = self.at;
                self.advance()?;
                if let Some(op) = UnaryOp::from_name(&name) {
                    if self.tok != Tok::Op('(') {
                        return self.syntax(format!("expected `(` after `{name}`"));
                    }
                    self.advance()?;
                    let arg = self.expr()?;
                    self.expect(')')?;
                    return Ok(Expr::unary(op, arg));
                }
                match name.as_str() {
                    "pi" => Ok(Expr::Num(std::f64::consts::PI)),
                    "e" => Ok(Expr::Num(std::f64::consts::E)),
                    _ if self.allowed.contains(&name) => Ok(Expr::Var(name)),
                    _ => Err(ParseError::UnknownIdentifier { name, offset: at }),
                }
            }
            Tok::End => self.syntax("unexpected end of input"),
            Tok::Op(c) => self.syntax(format!("unexpected `{c}`")),
        }
    }
}

/// Parses `src`, accepting only the variables in `allowed`.
pub fn parse_expression(src: &str, allowed: &HashSet<String>) -> Result<Expr, ParseError> {
    if src.trim().is_empty() {
        return Err(ParseError::Syntax {
            offset: 0,
            message: "empty expression".into(),
        });
    }
    let mut p = Parser {
        lexer: Lexer {
            src,
            bytes: src.as_bytes(),
            pos: 0,
        },
        tok: Tok::End,
        at: 0,
        allowed,
    };
    p.advance()?;
    let e = p.expr()?;
    if p.tok != Tok::End {
        return p.syntax("trailing input");
    }
    Ok(e)
}

/// Convenience wrapper taking the allowed names as a slice.
pub fn parse_with(src: &str, allowed: &[&str]) -> Result<Expr, ParseError> {
    let set: HashSet<String> = allowed.iter().map(|s| s.to_string()).collect();
    parse_expression(src, &set)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(src: &str) -> Expr {
        parse_with(src, &["x", "y", "r", "theta", "x_1"]).unwrap()
    }

    #[test]
    fn product_of_sine_and_variable() {
        let e = p("sin(theta)*r");
        assert_eq!(
            e,
            Expr::binary(
                BinOp::Mul,
                Expr::unary(UnaryOp::Sin, Expr::var("theta")),
                Expr::var("r")
            )
        );
    }

    #[test]
    fn precedence_and_associativity() {
        assert_eq!(p("x - y - 1").to_string(), "x - y - 1");
        assert_eq!(
            p("x - y - 1"),
            Expr::binary(
                BinOp::Sub,
                Expr::binary(BinOp::Sub, Expr::var("x"), Expr::var("y")),
                Expr::num(1.0)
            )
        );
        // `^` binds tighter than unary minus
        assert_eq!(
            p("-x^2"),
            Expr::unary(UnaryOp::Neg, Expr::pow(Expr::var("x"), 2))
        );
        assert_eq!(p("2*x^-1"), p("2*x^(-1)"));
        assert_eq!(p(" x *\t y "), p("x*y"));
    }

    #[test]
    fn negative_literals_fold() {
        assert_eq!(p("-2"), Expr::Num(-2.0));
        assert_eq!(p("-(2)"), Expr::Num(-2.0));
        assert_eq!(p("1e-3"), Expr::Num(1e-3));
        assert_eq!(p("2*e"), Expr::binary(BinOp::Mul, Expr::num(2.0), Expr::num(std::f64::consts::E)));
    }

    #[test]
    fn dangling_operator_reports_end_offset() {
        let err = parse_with("x_1 +", &["x_1"]).unwrap_err();
        assert!(matches!(err, ParseError::Syntax { offset: 5, .. }), "{err:?}");
    }

    #[test]
    fn unknown_identifier_is_named() {
        let err = parse_with("x + foo", &["x"]).unwrap_err();
        assert_eq!(
            err,
            ParseError::UnknownIdentifier {
                name: "foo".into(),
                offset: 4
            }
        );
    }

    #[test]
    fn rejects_fractional_exponent_and_empty_input() {
        assert!(parse_with("x^1.5", &["x"]).is_err());
        assert!(parse_with("x^y", &["x", "y"]).is_err());
        assert!(parse_with("  ", &[]).is_err());
        assert!(parse_with("sin x", &["x"]).is_err());
        assert!(parse_with("(x", &["x"]).is_err());
    }
}
