use super::{BinaryOp, Expr, UnaryOp};
use crate::error::{Error, Result};

// Constructors with local constant folding; keeps derivative trees small
// without attempting general simplification.

fn c(v: f64) -> Expr {
    Expr::Const(v)
}

fn is_const(e: &Expr, v: f64) -> bool {
    matches!(e, Expr::Const(x) if *x == v)
}

fn add(a: Expr, b: Expr) -> Expr {
    match (&a, &b) {
        (Expr::Const(x), Expr::Const(y)) => c(x + y),
        _ if is_const(&a, 0.0) => b,
        _ if is_const(&b, 0.0) => a,
        _ => Expr::Binary(BinaryOp::Add, Box::new(a), Box::new(b)),
    }
}

fn sub(a: Expr, b: Expr) -> Expr {
    match (&a, &b) {
        (Expr::Const(x), Expr::Const(y)) => c(x - y),
        _ if is_const(&b, 0.0) => a,
        _ if is_const(&a, 0.0) => neg(b),
        _ => Expr::Binary(BinaryOp::Sub, Box::new(a), Box::new(b)),
    }
}

fn mul(a: Expr, b: Expr) -> Expr {
    match (&a, &b) {
        (Expr::Const(x), Expr::Const(y)) => c(x * y),
        _ if is_const(&a, 0.0) || is_const(&b, 0.0) => c(0.0),
        _ if is_const(&a, 1.0) => b,
        _ if is_const(&b, 1.0) => a,
        _ => Expr::Binary(BinaryOp::Mul, Box::new(a), Box::new(b)),
    }
}

fn div(a: Expr, b: Expr) -> Expr {
    if is_const(&a, 0.0) {
        return c(0.0);
    }
    if is_const(&b, 1.0) {
        return a;
    }
    Expr::Binary(BinaryOp::Div, Box::new(a), Box::new(b))
}

fn neg(a: Expr) -> Expr {
    match a {
        Expr::Const(x) => c(-x),
        Expr::Unary(UnaryOp::Neg, inner) => *inner,
        other => Expr::Unary(UnaryOp::Neg, Box::new(other)),
    }
}

fn pow(a: Expr, k: f64) -> Expr {
    if k == 0.0 {
        return c(1.0);
    }
    if k == 1.0 {
        return a;
    }
    Expr::Binary(BinaryOp::Pow, Box::new(a), Box::new(c(k)))
}

fn un(op: UnaryOp, a: &Expr) -> Expr {
    Expr::Unary(op, Box::new(a.clone()))
}

pub(super) fn derivative(e: &Expr, i: usize) -> Result<Expr> {
    if !e.depends_on(i) {
        return Ok(c(0.0));
    }
    Ok(match e {
        Expr::Const(_) => c(0.0),
        Expr::Var(j) => c(if *j == i { 1.0 } else { 0.0 }),
        Expr::Unary(op, a) => {
            let da = derivative(a, i)?;
            match op {
                UnaryOp::Neg => neg(da),
                UnaryOp::Sin => mul(un(UnaryOp::Cos, a), da),
                UnaryOp::Cos => neg(mul(un(UnaryOp::Sin, a), da)),
                UnaryOp::Exp => mul(un(UnaryOp::Exp, a), da),
                UnaryOp::Sqrt => div(da, mul(c(2.0), un(UnaryOp::Sqrt, a))),
                UnaryOp::Tanh => mul(sub(c(1.0), pow(un(UnaryOp::Tanh, a), 2.0)), da),
                UnaryOp::Abs => return Err(Error::NonDifferentiable("abs")),
            }
        }
        Expr::Binary(op, a, b) => match op {
            BinaryOp::Add => add(derivative(a, i)?, derivative(b, i)?),
            BinaryOp::Sub => sub(derivative(a, i)?, derivative(b, i)?),
            BinaryOp::Mul => add(
                mul(derivative(a, i)?, (**b).clone()),
                mul((**a).clone(), derivative(b, i)?),
            ),
            BinaryOp::Div => div(
                sub(
                    mul(derivative(a, i)?, (**b).clone()),
                    mul((**a).clone(), derivative(b, i)?),
                ),
                pow((**b).clone(), 2.0),
            ),
            BinaryOp::Pow => {
                let Expr::Const(k) = **b else {
                    return Err(Error::invalid("exponent must be a constant"));
                };
                mul(mul(c(k), pow((**a).clone(), k - 1.0)), derivative(a, i)?)
            }
        },
        Expr::Nary(op, _) => {
            return Err(Error::NonDifferentiable(match op {
                super::NaryOp::Min => "min",
                super::NaryOp::Max => "max",
            }))
        }
    })
}
