use std::collections::HashMap;
use std::fmt;

use thiserror::Error;

use crate::ast::{BinOp, Expr, UnaryOp};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalErrorKind {
    DivisionByZero,
    LogDomain,
    SqrtDomain,
    UnboundVariable,
}

impl fmt::Display for EvalErrorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EvalErrorKind::DivisionByZero => "division by zero",
            EvalErrorKind::LogDomain => "log of a non-positive value",
            EvalErrorKind::SqrtDomain => "sqrt of a negative value",
            EvalErrorKind::UnboundVariable => "unbound variable",
        })
    }
}

/// Evaluation failure, carrying the printed sub-expression that failed.
#[derive(Debug, Clone, PartialEq, Error)]
#[error("{kind} in `{node}`")]
pub struct EvalError {
    pub kind: EvalErrorKind,
    pub node: String,
}

fn apply_unary(op: UnaryOp, v: f64) -> Result<f64, EvalErrorKind> {
    Ok(match op {
        UnaryOp::Neg => -v,
        UnaryOp::Sin => v.sin(),
        UnaryOp::Cos => v.cos(),
        UnaryOp::Tan => v.tan(),
        UnaryOp::Exp => v.exp(),
        UnaryOp::Log => {
            if v <= 0.0 {
                return Err(EvalErrorKind::LogDomain);
            }
            v.ln()
        }
        UnaryOp::Sqrt => {
            if v < 0.0 {
                return Err(EvalErrorKind::SqrtDomain);
            }
            v.sqrt()
        }
        UnaryOp::Abs => v.abs(),
    })
}

fn apply_binary(op: BinOp, a: f64, b: f64) -> Result<f64, EvalErrorKind> {
    Ok(match op {
        BinOp::Add => a + b,
        BinOp::Sub => a - b,
        BinOp::Mul => a * b,
        BinOp::Div => {
            if b == 0.0 {
                return Err(EvalErrorKind::DivisionByZero);
            }
            a / b
        }
    })
}

fn apply_pow(base: f64, n: i32) -> Result<f64, EvalErrorKind> {
    if n < 0 && base == 0.0 {
        return Err(EvalErrorKind::DivisionByZero);
    }
    Ok(base.powi(n))
}

impl Expr {
    /// Evaluates the tree in IEEE double precision.
    pub fn eval(&self, env: &HashMap<String, f64>) -> Result<f64, EvalError> {
        let fail = |kind| EvalError {
            kind,
            node: self.to_string(),
        };
        match self {
            Expr::Num(v) => Ok(*v),
            Expr::Var(name) => env
                .get(name)
                .copied()
                .ok_or_else(|| fail(EvalErrorKind::UnboundVariable)),
            Expr::Unary(op, a) => apply_unary(*op, a.eval(env)?).map_err(fail),
            Expr::Binary(op, a, b) => apply_binary(*op, a.eval(env)?, b.eval(env)?).map_err(fail),
            Expr::Pow(a, n) => apply_pow(a.eval(env)?, *n).map_err(fail),
        }
    }

    /// Evaluates the tree as a constant expression (no variables).
    pub fn eval_const(&self) -> Result<f64, EvalError> {
        self.eval(&HashMap::new())
    }
}

#[derive(Debug, Clone)]
enum Node {
    Num(f64),
    Slot(usize),
    Unary(UnaryOp, Box<Node>),
    Binary(BinOp, Box<Node>, Box<Node>),
    Pow(Box<Node>, i32),
}

/// An expression with variables resolved to positions in a value slice.
///
/// Compiled expressions are immutable and may be evaluated concurrently.
#[derive(Debug, Clone)]
pub struct CompiledExpr {
    root: Node,
    source: Expr,
}

/// Maps variable names to slots; several names may share a slot.
pub type SlotMap = HashMap<String, usize>;

impl CompiledExpr {
    /// Resolves every variable of `expr` through `slots`. Returns the name of
    /// the first unresolved variable on failure.
    pub fn compile(expr: &Expr, slots: &SlotMap) -> Result<CompiledExpr, String> {
        fn go(e: &Expr, slots: &SlotMap) -> Result<Node, String> {
            Ok(match e {
                Expr::Num(v) => Node::Num(*v),
                Expr::Var(name) => Node::Slot(*slots.get(name).ok_or_else(|| name.clone())?),
                Expr::Unary(op, a) => Node::Unary(*op, Box::new(go(a, slots)?)),
                Expr::Binary(op, a, b) => {
                    Node::Binary(*op, Box::new(go(a, slots)?), Box::new(go(b, slots)?))
                }
                Expr::Pow(a, n) => Node::Pow(Box::new(go(a, slots)?), *n),
            })
        }
        Ok(CompiledExpr {
            root: go(expr, slots)?,
            source: expr.clone(),
        })
    }

    pub fn source(&self) -> &Expr {
        &self.source
    }

    /// Evaluates against `vals`; slots must be in range.
    #[inline]
    pub fn eval(&self, vals: &[f64]) -> Result<f64, EvalError> {
        eval_node(&self.root, vals).map_err(|kind| {
            // Re-run on the source tree to locate the failing node by name.
            locate_failure(&self.source, &self.root, vals).unwrap_or(EvalError {
                kind,
                node: self.source.to_string(),
            })
        })
    }
}

fn eval_node(n: &Node, vals: &[f64]) -> Result<f64, EvalErrorKind> {
    match n {
        Node::Num(v) => Ok(*v),
        Node::Slot(i) => Ok(vals[*i]),
        Node::Unary(op, a) => apply_unary(*op, eval_node(a, vals)?),
        Node::Binary(op, a, b) => apply_binary(*op, eval_node(a, vals)?, eval_node(b, vals)?),
        Node::Pow(a, k) => apply_pow(eval_node(a, vals)?, *k),
    }
}

fn locate_failure(e: &Expr, n: &Node, vals: &[f64]) -> Option<EvalError> {
    let here = |kind| {
        Some(EvalError {
            kind,
            node: e.to_string(),
        })
    };
    match (e, n) {
        (Expr::Unary(_, ea), Node::Unary(op, na)) => {
            if let Some(err) = locate_failure(ea, na, vals) {
                return Some(err);
            }
            apply_unary(*op, eval_node(na, vals).ok()?).err().and_then(here)
        }
        (Expr::Binary(_, ea, eb), Node::Binary(op, na, nb)) => {
            if let Some(err) = locate_failure(ea, na, vals) {
                return Some(err);
            }
            if let Some(err) = locate_failure(eb, nb, vals) {
                return Some(err);
            }
            let a = eval_node(na, vals).ok()?;
            let b = eval_node(nb, vals).ok()?;
            apply_binary(*op, a, b).err().and_then(here)
        }
        (Expr::Pow(ea, _), Node::Pow(na, k)) => {
            if let Some(err) = locate_failure(ea, na, vals) {
                return Some(err);
            }
            apply_pow(eval_node(na, vals).ok()?, *k).err().and_then(here)
        }
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parser::parse_with;

    fn env(pairs: &[(&str, f64)]) -> HashMap<String, f64> {
        pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
    }

    #[test]
    fn arithmetic_precedence() {
        let e = parse_with("2+3*4", &[]).unwrap();
        assert_eq!(e.eval(&env(&[])).unwrap(), 14.0);
    }

    #[test]
    fn exponential_of_two_pi() {
        let e = parse_with("exp(2*pi)", &[]).unwrap();
        // independent evaluation: e^(2 pi) by repeated squaring of e^(pi/8)
        let mut v = (std::f64::consts::PI / 8.0).exp();
        for _ in 0..4 {
            v *= v;
        }
        let got = e.eval_const().unwrap();
        assert!((got - 535.491_655_524_764_7).abs() < 1e-9);
        assert!((got - v).abs() / v < 1e-14);
    }

    #[test]
    fn quotient_from_fourzone_zone_one() {
        let e = parse_with(
            "r*(sin(theta)-cos(theta))/(sin(theta)+cos(theta))",
            &["r", "theta"],
        )
        .unwrap();
        let v = e.eval(&env(&[("theta", 0.0), ("r", 2.0)])).unwrap();
        assert_eq!(v, -2.0);
    }

    #[test]
    fn division_by_zero_names_the_node() {
        let e = parse_with("1 + 1/x", &["x"]).unwrap();
        let err = e.eval(&env(&[("x", 0.0)])).unwrap_err();
        assert_eq!(err.kind, EvalErrorKind::DivisionByZero);
        assert_eq!(err.node, "1/x");

        let mut slots = SlotMap::new();
        slots.insert("x".into(), 0);
        let c = CompiledExpr::compile(&e, &slots).unwrap();
        let err = c.eval(&[0.0]).unwrap_err();
        assert_eq!(err.node, "1/x");
    }

    #[test]
    fn domain_errors() {
        let e = parse_with("log(x) + sqrt(y)", &["x", "y"]).unwrap();
        assert_eq!(
            e.eval(&env(&[("x", 0.0), ("y", 1.0)])).unwrap_err().kind,
            EvalErrorKind::LogDomain
        );
        assert_eq!(
            e.eval(&env(&[("x", 1.0), ("y", -1.0)])).unwrap_err().kind,
            EvalErrorKind::SqrtDomain
        );
        let e = parse_with("x^(-2)", &["x"]).unwrap();
        assert!(e.eval(&env(&[("x", 0.0)])).is_err());
    }

    #[test]
    fn compiled_matches_tree_walk() {
        let e = parse_with("sin(x)*exp(-y/2) + x^3 - abs(y)", &["x", "y"]).unwrap();
        let mut slots = SlotMap::new();
        slots.insert("x".into(), 1);
        slots.insert("y".into(), 0);
        let c = CompiledExpr::compile(&e, &slots).unwrap();
        let a = e.eval(&env(&[("x", 0.7), ("y", -1.3)])).unwrap();
        let b = c.eval(&[-1.3, 0.7]).unwrap();
        assert_eq!(a, b);
        assert_eq!(CompiledExpr::compile(&e, &SlotMap::new()).unwrap_err(), "x");
    }
}
