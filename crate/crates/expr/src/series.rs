//! Truncated Taylor expansion in a distinguished small parameter.
//!
//! Each subtree maps to its coefficient list `c_0..c_k`; sums and products
//! combine termwise and by Cauchy convolution, quotients invert the
//! denominator's series recursively, and elementary functions use the usual
//! power-series recurrences obtained from their differential equations.

use thiserror::Error;

use crate::ast::{BinOp, Expr, UnaryOp};
use crate::diff::{add, div, mul, neg, simplify, sub, unary};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SeriesError {
    #[error("constant term of the denominator `{0}` is identically zero")]
    SingularDenominator(String),
    #[error("constant term of `{0}` is identically zero; {1} has no series there")]
    SingularArgument(String, &'static str),
    #[error("abs() of a parameter-dependent expression `{0}` has no series")]
    AbsOfSeries(String),
}

type Series = Vec<Expr>;

fn zeros(k: usize) -> Series {
    vec![Expr::Num(0.0); k + 1]
}

fn constant(e: Expr, k: usize) -> Series {
    let mut s = zeros(k);
    s[0] = e;
    s
}

fn convolve(a: &Series, b: &Series) -> Series {
    let k = a.len() - 1;
    (0..=k)
        .map(|n| {
            (0..=n).fold(Expr::Num(0.0), |acc, j| {
                add(acc, mul(a[j].clone(), b[n - j].clone()))
            })
        })
        .collect()
}

fn reciprocal_quotient(a: &Series, b: &Series, den_src: &Expr) -> Result<Series, SeriesError> {
    if b[0].is_zero() {
        return Err(SeriesError::SingularDenominator(den_src.to_string()));
    }
    let k = a.len() - 1;
    let mut q: Series = Vec::with_capacity(k + 1);
    for n in 0..=k {
        let mut num = a[n].clone();
        for j in 1..=n {
            num = sub(num, mul(b[j].clone(), q[n - j].clone()));
        }
        q.push(div(num, b[0].clone()));
    }
    Ok(q)
}

fn scaled(c: f64, e: Expr) -> Expr {
    mul(Expr::Num(c), e)
}

fn expand(e: &Expr, eps: &str, k: usize) -> Result<Series, SeriesError> {
    if !e.depends_on(eps) {
        return Ok(constant(simplify(e), k));
    }
    Ok(match e {
        Expr::Num(_) => unreachable!("constants do not depend on eps"),
        Expr::Var(_) => {
            let mut s = zeros(k);
            if k >= 1 {
                s[1] = Expr::Num(1.0);
            }
            s
        }
        Expr::Binary(op, a, b) => {
            let (sa, sb) = (expand(a, eps, k)?, expand(b, eps, k)?);
            match op {
                BinOp::Add => sa.into_iter().zip(sb).map(|(x, y)| add(x, y)).collect(),
                BinOp::Sub => sa.into_iter().zip(sb).map(|(x, y)| sub(x, y)).collect(),
                BinOp::Mul => convolve(&sa, &sb),
                BinOp::Div => reciprocal_quotient(&sa, &sb, b)?,
            }
        }
        Expr::Pow(a, n) => {
            let sa = expand(a, eps, k)?;
            let mut acc = constant(Expr::Num(1.0), k);
            for _ in 0..n.unsigned_abs() {
                acc = convolve(&acc, &sa);
            }
            if *n < 0 {
                reciprocal_quotient(&constant(Expr::Num(1.0), k), &acc, a)?
            } else {
                acc
            }
        }
        Expr::Unary(op, a) => {
            let s = expand(a, eps, k)?;
            match op {
                UnaryOp::Neg => s.into_iter().map(neg).collect(),
                UnaryOp::Exp => {
                    let mut out = vec![unary(UnaryOp::Exp, s[0].clone())];
                    for n in 1..=k {
                        let mut acc = Expr::Num(0.0);
                        for j in 1..=n {
                            acc = add(acc, scaled(j as f64, mul(s[j].clone(), out[n - j].clone())));
                        }
                        out.push(scaled(1.0 / n as f64, acc));
                    }
                    out
                }
                UnaryOp::Sin | UnaryOp::Cos | UnaryOp::Tan => {
                    let (sn, cs) = sin_cos(&s);
                    match op {
                        UnaryOp::Sin => sn,
                        UnaryOp::Cos => cs,
                        _ => reciprocal_quotient(&sn, &cs, &Expr::unary(UnaryOp::Cos, (**a).clone()))?,
                    }
                }
                UnaryOp::Log => {
                    if s[0].is_zero() {
                        return Err(SeriesError::SingularArgument(a.to_string(), "log"));
                    }
                    let mut out = vec![unary(UnaryOp::Log, s[0].clone())];
                    for n in 1..=k {
                        let mut acc = Expr::Num(0.0);
                        for j in 1..n {
                            acc = add(acc, scaled(j as f64, mul(out[j].clone(), s[n - j].clone())));
                        }
                        let num = sub(s[n].clone(), scaled(1.0 / n as f64, acc));
                        out.push(div(num, s[0].clone()));
                    }
                    out
                }
                UnaryOp::Sqrt => {
                    if s[0].is_zero() {
                        return Err(SeriesError::SingularArgument(a.to_string(), "sqrt"));
                    }
                    let mut out = vec![unary(UnaryOp::Sqrt, s[0].clone())];
                    for n in 1..=k {
                        let mut num = s[n].clone();
                        for j in 1..n {
                            num = sub(num, mul(out[j].clone(), out[n - j].clone()));
                        }
                        out.push(div(num, scaled(2.0, out[0].clone())));
                    }
                    out
                }
                UnaryOp::Abs => {
                    if s[1..].iter().all(Expr::is_zero) {
                        constant(unary(UnaryOp::Abs, s[0].clone()), k)
                    } else {
                        return Err(SeriesError::AbsOfSeries(a.to_string()));
                    }
                }
            }
        }
    })
}

fn sin_cos(s: &Series) -> (Series, Series) {
    let k = s.len() - 1;
    let mut sn = vec![unary(UnaryOp::Sin, s[0].clone())];
    let mut cs = vec![unary(UnaryOp::Cos, s[0].clone())];
    for n in 1..=k {
        let mut a = Expr::Num(0.0);
        let mut b = Expr::Num(0.0);
        for j in 1..=n {
            a = add(a, scaled(j as f64, mul(s[j].clone(), cs[n - j].clone())));
            b = add(b, scaled(j as f64, mul(s[j].clone(), sn[n - j].clone())));
        }
        sn.push(scaled(1.0 / n as f64, a));
        cs.push(neg(scaled(1.0 / n as f64, b)));
    }
    (sn, cs)
}

/// Coefficients `c_0..c_k` with `e = sum c_i eps^i + O(eps^(k+1))`; the
/// coefficients do not reference `eps`.
pub fn epsilon_series(e: &Expr, eps: &str, k: usize) -> Result<Vec<Expr>, SeriesError> {
    let out = expand(e, eps, k)?;
    Ok(out.iter().map(simplify).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parser::parse_with;
    use std::collections::HashMap;

    fn env(pairs: &[(&str, f64)]) -> HashMap<String, f64> {
        pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
    }

    #[test]
    fn geometric_series() {
        let e = parse_with("a*eps/(1-b*eps)", &["a", "b", "eps"]).unwrap();
        let c = epsilon_series(&e, "eps", 2).unwrap();
        assert_eq!(c.len(), 3);
        assert!(c[0].is_zero());
        let v = env(&[("a", 1.7), ("b", -0.3)]);
        assert_eq!(c[1].eval(&v).unwrap(), 1.7);
        assert!((c[2].eval(&v).unwrap() - 1.7 * -0.3).abs() < 1e-15);
    }

    #[test]
    fn high_power_truncates_to_zero() {
        let e = parse_with("eps^3", &["eps"]).unwrap();
        let c = epsilon_series(&e, "eps", 2).unwrap();
        assert!(c.iter().all(Expr::is_zero));
    }

    #[test]
    fn zero_denominator_is_rejected() {
        let e = parse_with("1/(eps*x)", &["eps", "x"]).unwrap();
        assert!(matches!(
            epsilon_series(&e, "eps", 1),
            Err(SeriesError::SingularDenominator(_))
        ));
    }

    #[test]
    fn elementary_functions_match_finite_eps() {
        let src = "exp(x*eps)*sin(1 + eps*y) + cos(eps*x)^2 + log(2 + eps) + sqrt(4 + y*eps) + tan(eps + x)";
        let e = parse_with(src, &["x", "y", "eps"]).unwrap();
        let k = 4;
        let c = epsilon_series(&e, "eps", k).unwrap();
        let (x, y) = (0.3, -0.8);
        let eps: f64 = 1e-3;
        let mut series = 0.0;
        for (i, ci) in c.iter().enumerate() {
            series += ci.eval(&env(&[("x", x), ("y", y)])).unwrap() * eps.powi(i as i32);
        }
        let direct = e.eval(&env(&[("x", x), ("y", y), ("eps", eps)])).unwrap();
        assert!((series - direct).abs() < 1e-13, "{series} vs {direct}");
    }
}
