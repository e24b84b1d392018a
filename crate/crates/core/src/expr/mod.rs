//! Expression language for vector fields and candidate Lyapunov functions.
//!
//! Grammar, loosest binding first: `+ -`, then `* /`, then unary minus, then
//! `^` (right associative, constant exponent). Identifiers `x1..xn` name the
//! state coordinates; `pi` is the only named constant. Functions: `sin cos exp
//! sqrt abs tanh` (one argument) and `min max` (two or more).

mod diff;
mod parse;

use std::fmt;

use crate::error::{Error, Result};
use crate::geometry::StatePoint;

pub use parse::parse;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnaryOp {
    Neg,
    Sin,
    Cos,
    Exp,
    Sqrt,
    Abs,
    Tanh,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NaryOp {
    Min,
    Max,
}

/// Expression tree. Variables are stored zero-based (`x1` is `Var(0)`).
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Const(f64),
    Var(usize),
    Unary(UnaryOp, Box<Expr>),
    Binary(BinaryOp, Box<Expr>, Box<Expr>),
    Nary(NaryOp, Vec<Expr>),
}

impl UnaryOp {
    pub(crate) fn from_name(name: &str) -> Option<Self> {
        Some(match name {
            "sin" => UnaryOp::Sin,
            "cos" => UnaryOp::Cos,
            "exp" => UnaryOp::Exp,
            "sqrt" => UnaryOp::Sqrt,
            "abs" => UnaryOp::Abs,
            "tanh" => UnaryOp::Tanh,
            _ => return None,
        })
    }

    fn name(self) -> &'static str {
        match self {
            UnaryOp::Neg => "-",
            UnaryOp::Sin => "sin",
            UnaryOp::Cos => "cos",
            UnaryOp::Exp => "exp",
            UnaryOp::Sqrt => "sqrt",
            UnaryOp::Abs => "abs",
            UnaryOp::Tanh => "tanh",
        }
    }
}

impl NaryOp {
    fn name(self) -> &'static str {
        match self {
            NaryOp::Min => "min",
            NaryOp::Max => "max",
        }
    }
}

fn domain(msg: impl Into<String>) -> Error {
    Error::Domain(msg.into())
}

fn finite(v: f64, what: &str) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(domain(format!("{what} produced {v}")))
    }
}

impl Expr {
    /// Evaluates at the coordinate slice `x`. Non-finite intermediate values are errors.
    pub fn eval_at(&self, x: &[f64]) -> Result<f64> {
        match self {
            Expr::Const(c) => Ok(*c),
            Expr::Var(i) => x.get(*i).copied().ok_or(Error::DimensionMismatch {
                expected: i + 1,
                found: x.len(),
            }),
            Expr::Unary(op, a) => {
                let a = a.eval_at(x)?;
                match op {
                    UnaryOp::Neg => Ok(-a),
                    UnaryOp::Sin => Ok(a.sin()),
                    UnaryOp::Cos => Ok(a.cos()),
                    UnaryOp::Exp => finite(a.exp(), "exp"),
                    UnaryOp::Sqrt if a < 0.0 => Err(domain(format!("sqrt of negative value {a}"))),
                    UnaryOp::Sqrt => Ok(a.sqrt()),
                    UnaryOp::Abs => Ok(a.abs()),
                    UnaryOp::Tanh => Ok(a.tanh()),
                }
            }
            Expr::Binary(op, a, b) => {
                let a = a.eval_at(x)?;
                let b = b.eval_at(x)?;
                match op {
                    BinaryOp::Add => finite(a + b, "addition"),
                    BinaryOp::Sub => finite(a - b, "subtraction"),
                    BinaryOp::Mul => finite(a * b, "multiplication"),
                    BinaryOp::Div if b == 0.0 => Err(domain("division by zero")),
                    BinaryOp::Div => finite(a / b, "division"),
                    BinaryOp::Pow => {
                        let v = if b.fract() == 0.0 && b.abs() <= i32::MAX as f64 {
                            if a == 0.0 && b < 0.0 {
                                return Err(domain("zero raised to a negative power"));
                            }
                            a.powi(b as i32)
                        } else {
                            a.powf(b)
                        };
                        finite(v, "power")
                    }
                }
            }
            Expr::Nary(op, args) => {
                let mut acc = args[0].eval_at(x)?;
                for a in &args[1..] {
                    let v = a.eval_at(x)?;
                    acc = match op {
                        NaryOp::Min => acc.min(v),
                        NaryOp::Max => acc.max(v),
                    };
                }
                Ok(acc)
            }
        }
    }

    pub fn eval(&self, x: &StatePoint) -> Result<f64> {
        self.eval_at(x.coords())
    }

    /// Largest zero-based variable index referenced, if any.
    pub fn max_var(&self) -> Option<usize> {
        match self {
            Expr::Const(_) => None,
            Expr::Var(i) => Some(*i),
            Expr::Unary(_, a) => a.max_var(),
            Expr::Binary(_, a, b) => a.max_var().max(b.max_var()),
            Expr::Nary(_, args) => args.iter().filter_map(Expr::max_var).max(),
        }
    }

    pub fn depends_on(&self, i: usize) -> bool {
        match self {
            Expr::Const(_) => false,
            Expr::Var(j) => *j == i,
            Expr::Unary(_, a) => a.depends_on(i),
            Expr::Binary(_, a, b) => a.depends_on(i) || b.depends_on(i),
            Expr::Nary(_, args) => args.iter().any(|a| a.depends_on(i)),
        }
    }

    /// Symbolic partial derivative with respect to the zero-based variable `i`.
    pub fn differentiate(&self, i: usize) -> Result<Expr> {
        diff::derivative(self, i)
    }
}

/// Prints fully parenthesized compound nodes so that printing a parsed
/// expression and parsing it again is a fixed point.
impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Const(c) if c.is_sign_negative() => write!(f, "(-{})", -c),
            Expr::Const(c) => write!(f, "{c}"),
            Expr::Var(i) => write!(f, "x{}", i + 1),
            Expr::Unary(UnaryOp::Neg, a) => write!(f, "(-{a})"),
            Expr::Unary(op, a) => write!(f, "{}({a})", op.name()),
            Expr::Binary(op, a, b) => {
                let sym = match op {
                    BinaryOp::Add => "+",
                    BinaryOp::Sub => "-",
                    BinaryOp::Mul => "*",
                    BinaryOp::Div => "/",
                    BinaryOp::Pow => "^",
                };
                write!(f, "({a} {sym} {b})")
            }
            Expr::Nary(op, args) => {
                write!(f, "{}(", op.name())?;
                for (k, a) in args.iter().enumerate() {
                    if k > 0 {
                        write!(f, ", ")?;
                    }
                    write!(f, "{a}")?;
                }
                write!(f, ")")
            }
        }
    }
}

/// The right-hand side `V` of `ẋ = V(x)`: one expression per coordinate.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorFieldSpec {
    components: Vec<Expr>,
}

impl VectorFieldSpec {
    /// Parses one expression per coordinate; the dimension is the component count.
    pub fn parse<S: AsRef<str>>(components: &[S]) -> Result<Self> {
        let n = components.len();
        if n == 0 {
            return Err(Error::invalid("vector field needs at least one component"));
        }
        let components = components
            .iter()
            .map(|s| parse(s.as_ref(), n))
            .collect::<Result<Vec<_>>>()?;
        Ok(VectorFieldSpec { components })
    }

    pub fn from_exprs(components: Vec<Expr>) -> Result<Self> {
        let n = components.len();
        if n == 0 {
            return Err(Error::invalid("vector field needs at least one component"));
        }
        if let Some(i) = components.iter().filter_map(Expr::max_var).max() {
            if i >= n {
                return Err(Error::VariableOutOfRange {
                    index: i + 1,
                    dim: n,
                    pos: 0,
                });
            }
        }
        Ok(VectorFieldSpec { components })
    }

    pub fn dim(&self) -> usize {
        self.components.len()
    }

    pub fn components(&self) -> &[Expr] {
        &self.components
    }

    /// Writes `V(x)` into `out`.
    pub fn eval_into(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        for (o, c) in out.iter_mut().zip(&self.components) {
            *o = c.eval_at(x)?;
        }
        Ok(())
    }

    pub fn eval(&self, x: &StatePoint) -> Result<Vec<f64>> {
        if x.dim() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: x.dim(),
            });
        }
        let mut out = vec![0.0; self.dim()];
        self.eval_into(x.coords(), &mut out)?;
        Ok(out)
    }

    /// Canonical text form, e.g. `(x2, (-x1))`; used as provenance in trajectories.
    pub fn id(&self) -> String {
        let parts: Vec<String> = self.components.iter().map(ToString::to_string).collect();
        format!("({})", parts.join(", "))
    }
}

/// A scalar function on ℝⁿ such as a candidate Lyapunov function.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarFieldSpec {
    body: Expr,
    dim: usize,
}

impl ScalarFieldSpec {
    pub fn parse(text: &str, dim: usize) -> Result<Self> {
        Ok(ScalarFieldSpec {
            body: parse(text, dim)?,
            dim,
        })
    }

    pub fn body(&self) -> &Expr {
        &self.body
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn eval_at(&self, x: &[f64]) -> Result<f64> {
        self.body.eval_at(x)
    }

    /// Symbolic partials `∂L/∂x1 .. ∂L/∂xn`.
    pub fn gradient_exprs(&self) -> Result<Vec<Expr>> {
        (0..self.dim).map(|i| self.body.differentiate(i)).collect()
    }
}

pub fn eval(e: &Expr, x: &StatePoint) -> Result<f64> {
    e.eval(x)
}

/// Partial derivative with respect to the one-based variable index `i` (`x_i`).
pub fn differentiate(e: &Expr, i: usize) -> Result<Expr> {
    if i == 0 {
        return Err(Error::invalid("variable indices are one-based"));
    }
    e.differentiate(i - 1)
}

/// `∇s(x)` via symbolic differentiation.
pub fn gradient(s: &ScalarFieldSpec, x: &StatePoint) -> Result<StatePoint> {
    if x.dim() != s.dim {
        return Err(Error::DimensionMismatch {
            expected: s.dim,
            found: x.dim(),
        });
    }
    let g = s
        .gradient_exprs()?
        .iter()
        .map(|d| d.eval(x))
        .collect::<Result<Vec<_>>>()?;
    StatePoint::new(g)
}

/// Central-difference gradient with step `1e-6·max(1, |x_i|)`.
pub fn gradient_fd(s: &ScalarFieldSpec, x: &[f64]) -> Result<Vec<f64>> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let h = 1e-6 * x[i].abs().max(1.0);
            probe[i] = x[i] + h;
            let up = s.eval_at(&probe)?;
            probe[i] = x[i] - h;
            let down = s.eval_at(&probe)?;
            probe[i] = x[i];
            Ok((up - down) / (2.0 * h))
        })
        .collect()
}

/// Random expression over `x1..x_dim` built only from everywhere-smooth
/// operations (`+ - *`, small integer powers, `sin cos tanh exp`). Depth is
/// the maximum nesting; leaves are variables or constants in `[-2, 2]`.
pub fn random_smooth_expr<R: rand::Rng + ?Sized>(rng: &mut R, dim: usize, depth: usize) -> Expr {
    if depth == 0 || rng.random_bool(0.25) {
        return if dim > 0 && rng.random_bool(0.7) {
            Expr::Var(rng.random_range(0..dim))
        } else {
            Expr::Const((rng.random_range(-2.0..2.0f64) * 100.0).round() / 100.0)
        };
    }
    let sub = |rng: &mut R| Box::new(random_smooth_expr(rng, dim, depth - 1));
    match rng.random_range(0..8) {
        0 => Expr::Binary(BinaryOp::Add, sub(rng), sub(rng)),
        1 => Expr::Binary(BinaryOp::Sub, sub(rng), sub(rng)),
        2 => Expr::Binary(BinaryOp::Mul, sub(rng), sub(rng)),
        3 => Expr::Binary(
            BinaryOp::Pow,
            sub(rng),
            Box::new(Expr::Const(rng.random_range(2..4) as f64)),
        ),
        4 => Expr::Unary(UnaryOp::Sin, sub(rng)),
        5 => Expr::Unary(UnaryOp::Cos, sub(rng)),
        6 => Expr::Unary(UnaryOp::Tanh, sub(rng)),
        _ => Expr::Unary(UnaryOp::Exp, sub(rng)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pt;

    fn at(text: &str, n: usize, x: &[f64]) -> Result<f64> {
        parse(text, n)?.eval_at(x)
    }

    #[test]
    fn parse_examples() {
        assert_eq!(at("x1*x1 + x2*x2", 2, &[3.0, 4.0]).unwrap(), 25.0);
        assert_eq!(at("-x1^2", 1, &[2.0]).unwrap(), -4.0);
        assert!(matches!(
            parse("x3", 2),
            Err(Error::VariableOutOfRange { index: 3, dim: 2, .. })
        ));
    }

    #[test]
    fn eval_examples() {
        assert_eq!(eval(&parse("exp(0)", 1).unwrap(), &pt![5]).unwrap(), 1.0);
        assert!(matches!(
            eval(&parse("1/x1", 1).unwrap(), &pt![0]),
            Err(Error::Domain(_))
        ));
        assert_eq!(eval(&parse("min(x1, x2, 3)", 2).unwrap(), &pt![7, -1]).unwrap(), -1.0);
    }

    #[test]
    fn eval_domain_errors() {
        assert!(matches!(at("sqrt(x1)", 1, &[-1.0]), Err(Error::Domain(_))));
        assert!(matches!(at("exp(x1)", 1, &[1000.0]), Err(Error::Domain(_))));
        assert!(matches!(at("x1^0.5", 1, &[-4.0]), Err(Error::Domain(_))));
        assert!(matches!(at("x1^-1", 1, &[0.0]), Err(Error::Domain(_))));
        assert!(matches!(
            at("max(x1, 0) * 1e308 * 10", 1, &[1.0]),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn differentiate_examples() {
        let d = differentiate(&parse("x1^2", 1).unwrap(), 1).unwrap();
        assert_eq!(d.eval_at(&[3.0]).unwrap(), 6.0);
        let d = differentiate(&parse("x1*x2 + sin(x1)", 2).unwrap(), 1).unwrap();
        assert_eq!(d.eval_at(&[0.0, 2.0]).unwrap(), 3.0);
        assert_eq!(
            differentiate(&parse("abs(x1)", 1).unwrap(), 1),
            Err(Error::NonDifferentiable("abs"))
        );
    }

    #[test]
    fn nondifferentiable_nodes_off_the_path_are_fine() {
        let e = parse("x1^2 + abs(x2) + max(x2, 1)", 2).unwrap();
        let d = differentiate(&e, 1).unwrap();
        assert_eq!(d.eval_at(&[2.0, -3.0]).unwrap(), 4.0);
        assert!(differentiate(&e, 2).is_err());
    }

    #[test]
    fn gradient_examples() {
        let s = ScalarFieldSpec::parse("x1^2+x2^2", 2).unwrap();
        assert_eq!(gradient(&s, &pt![1, 2]).unwrap(), pt![2, 4]);
        let s = ScalarFieldSpec::parse("x1*x2", 2).unwrap();
        assert_eq!(gradient(&s, &pt![0, 0]).unwrap(), pt![0, 0]);
    }

    #[test]
    fn gradient_of_exp_cos_matches_finite_differences() {
        let s = ScalarFieldSpec::parse("exp(x1)*cos(x2)", 2).unwrap();
        let fd = gradient_fd(&s, &[0.0, 0.0]).unwrap();
        let g = gradient(&s, &pt![0, 0]).unwrap();
        assert!((fd[0] - 1.0).abs() < 1e-8 && fd[1].abs() < 1e-8);
        assert!((g.coords()[0] - fd[0]).abs() < 1e-5 && (g.coords()[1] - fd[1]).abs() < 1e-5);
        assert_eq!(g, pt![1, 0]);
    }

    #[test]
    fn vector_field_checks_dimension() {
        let v = VectorFieldSpec::parse(&["x2", "-x1"]).unwrap();
        assert_eq!(v.eval(&pt![1, 2]).unwrap(), vec![2.0, -1.0]);
        assert!(v.eval(&pt![1]).is_err());
        assert!(VectorFieldSpec::parse(&["x2"]).is_err());
        assert_eq!(v.id(), "(x2, (-x1))");
    }

    fn smooth_case(seed: u64) -> (ScalarFieldSpec, Vec<f64>) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let body = random_smooth_expr(&mut rng, 3, 4);
        let x = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
        (ScalarFieldSpec::parse(&body.to_string(), 3).unwrap(), x)
    }

    proptest::proptest! {
        #[test]
        fn printed_expressions_reparse_identically(seed in 0u64..u64::MAX) {
            let (s, x) = smooth_case(seed);
            let again = parse(&s.body().to_string(), 3).unwrap();
            proptest::prop_assert_eq!(&again, s.body());
            if let Ok(v) = s.eval_at(&x) {
                proptest::prop_assert_eq!(again.eval_at(&x).unwrap(), v);
            }
        }

        #[test]
        fn symbolic_gradient_matches_central_differences(seed in 0u64..u64::MAX) {
            let (s, x) = smooth_case(seed);
            let Ok(v) = s.eval_at(&x) else { return Ok(()) };
            proptest::prop_assume!(v.abs() < 1e3);
            let g = gradient(&s, &StatePoint::new(x.clone()).unwrap()).unwrap();
            let fd = gradient_fd(&s, &x).unwrap();
            for (a, b) in g.coords().iter().zip(&fd) {
                proptest::prop_assert!((a - b).abs() <= 1e-5 * a.abs().max(1.0), "{} vs {} for {}", a, b, s.body());
            }
        }
    }
}
