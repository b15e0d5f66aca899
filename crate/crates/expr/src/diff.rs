//! Symbolic differentiation and a light constant-folding pass.
//!
//! Derivative trees are not canonicalised; they are only kept small enough to
//! evaluate quickly. `abs` differentiates to `u/abs(u)*u'`, which fails to
//! evaluate where `u = 0`.

use crate::ast::{BinOp, Expr, UnaryOp};

fn fold_unary(op: UnaryOp, v: f64) -> Option<f64> {
    let r = match op {
        UnaryOp::Neg => -v,
        UnaryOp::Sin => v.sin(),
        UnaryOp::Cos => v.cos(),
        UnaryOp::Tan => v.tan(),
        UnaryOp::Exp => v.exp(),
        UnaryOp::Log if v > 0.0 => v.ln(),
        UnaryOp::Sqrt if v >= 0.0 => v.sqrt(),
        UnaryOp::Abs => v.abs(),
        _ => return None,
    };
    r.is_finite().then_some(r)
}

/// Smart constructors that fold constants and drop neutral elements.
pub fn neg(a: Expr) -> Expr {
    match a {
        Expr::Num(v) => Expr::Num(-v),
        Expr::Unary(UnaryOp::Neg, inner) => *inner,
        a => Expr::unary(UnaryOp::Neg, a),
    }
}

pub fn unary(op: UnaryOp, a: Expr) -> Expr {
    if op == UnaryOp::Neg {
        return neg(a);
    }
    if let Expr::Num(v) = a {
        if let Some(r) = fold_unary(op, v) {
            return Expr::Num(r);
        }
    }
    Expr::unary(op, a)
}

pub fn add(a: Expr, b: Expr) -> Expr {
    match (a, b) {
        (Expr::Num(x), Expr::Num(y)) => Expr::Num(x + y),
        (a, b) if a.is_zero() => b,
        (a, b) if b.is_zero() => a,
        (a, Expr::Unary(UnaryOp::Neg, b)) => sub(a, *b),
        (a, b) => Expr::binary(BinOp::Add, a, b),
    }
}

pub fn sub(a: Expr, b: Expr) -> Expr {
    match (a, b) {
        (Expr::Num(x), Expr::Num(y)) => Expr::Num(x - y),
        (a, b) if b.is_zero() => a,
        (a, b) if a.is_zero() => neg(b),
        (a, Expr::Unary(UnaryOp::Neg, b)) => add(a, *b),
        (a, b) => Expr::binary(BinOp::Sub, a, b),
    }
}

pub fn mul(a: Expr, b: Expr) -> Expr {
    match (a, b) {
        (Expr::Num(x), Expr::Num(y)) => Expr::Num(x * y),
        (a, b) if a.is_zero() || b.is_zero() => Expr::Num(0.0),
        (a, b) if a.is_one() => b,
        (a, b) if b.is_one() => a,
        (Expr::Num(-1.0), b) => neg(b),
        (a, Expr::Num(-1.0)) => neg(a),
        (Expr::Unary(UnaryOp::Neg, a), b) => neg(mul(*a, b)),
        (a, Expr::Unary(UnaryOp::Neg, b)) => neg(mul(a, *b)),
        (a, b) => Expr::binary(BinOp::Mul, a, b),
    }
}

pub fn div(a: Expr, b: Expr) -> Expr {
    match (a, b) {
        (Expr::Num(x), Expr::Num(y)) if y != 0.0 && (x / y).is_finite() => Expr::Num(x / y),
        (a, b) if a.is_zero() && !b.is_zero() => Expr::Num(0.0),
        (a, b) if b.is_one() => a,
        (a, b) => Expr::binary(BinOp::Div, a, b),
    }
}

pub fn pow(a: Expr, n: i32) -> Expr {
    match (a, n) {
        (_, 0) => Expr::Num(1.0),
        (a, 1) => a,
        (Expr::Num(x), n) if x.powi(n).is_finite() && !(x == 0.0 && n < 0) => {
            Expr::Num(x.powi(n))
        }
        (Expr::Pow(inner, m), n) if m.checked_mul(n).is_some() => Expr::pow(*inner, m * n),
        (a, n) => Expr::pow(a, n),
    }
}

/// Bottom-up constant folding. Produces trees in parser normal form.
pub fn simplify(e: &Expr) -> Expr {
    match e {
        Expr::Num(_) | Expr::Var(_) => e.clone(),
        Expr::Unary(op, a) => unary(*op, simplify(a)),
        Expr::Pow(a, n) => pow(simplify(a), *n),
        Expr::Binary(op, a, b) => {
            let (a, b) = (simplify(a), simplify(b));
            match op {
                BinOp::Add => add(a, b),
                BinOp::Sub => sub(a, b),
                BinOp::Mul => mul(a, b),
                BinOp::Div => div(a, b),
            }
        }
    }
}

/// Exact partial derivative with respect to `var`.
pub fn differentiate(e: &Expr, var: &str) -> Expr {
    if !e.depends_on(var) {
        return Expr::Num(0.0);
    }
    match e {
        Expr::Num(_) => Expr::Num(0.0),
        Expr::Var(v) => Expr::Num(if v == var { 1.0 } else { 0.0 }),
        Expr::Binary(op, a, b) => {
            let (da, db) = (differentiate(a, var), differentiate(b, var));
            let (a, b) = (simplify(a), simplify(b));
            match op {
                BinOp::Add => add(da, db),
                BinOp::Sub => sub(da, db),
                BinOp::Mul => add(mul(da, b.clone()), mul(a, db)),
                BinOp::Div => {
                    if db.is_zero() {
                        div(da, b)
                    } else {
                        div(sub(mul(da, b.clone()), mul(a, db)), pow(b, 2))
                    }
                }
            }
        }
        Expr::Pow(a, n) => {
            let da = differentiate(a, var);
            let a = simplify(a);
            mul(mul(Expr::Num(*n as f64), pow(a, n - 1)), da)
        }
        Expr::Unary(op, a) => {
            let da = differentiate(a, var);
            let a = simplify(a);
            let outer = match op {
                UnaryOp::Neg => return neg(da),
                UnaryOp::Sin => unary(UnaryOp::Cos, a),
                UnaryOp::Cos => neg(unary(UnaryOp::Sin, a)),
                UnaryOp::Tan => pow(unary(UnaryOp::Cos, a), -2),
                UnaryOp::Exp => unary(UnaryOp::Exp, a),
                UnaryOp::Log => return div(da, a),
                UnaryOp::Sqrt => {
                    return div(da, mul(Expr::Num(2.0), unary(UnaryOp::Sqrt, a)));
                }
                UnaryOp::Abs => {
                    let abs = unary(UnaryOp::Abs, a.clone());
                    div(a, abs)
                }
            };
            mul(outer, da)
        }
    }
}
