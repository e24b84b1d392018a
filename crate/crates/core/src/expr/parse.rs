use super::{BinaryOp, Expr, NaryOp, UnaryOp};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Op(char),
    LParen,
    RParen,
    Comma,
    End,
}

fn syntax(pos: usize, msg: impl Into<String>) -> Error {
    Error::Syntax { pos, msg: msg.into() }
}

fn tokenize(text: &str) -> Result<Vec<(Tok, usize)>> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        if c.is_ascii_whitespace() {
            i += 1;
            continue;
        }
        let start = i;
        if c.is_ascii_digit() || c == b'.' {
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
            let lit = &text[start..i];
            let v: f64 = lit
                .parse()
                .map_err(|_| syntax(start, format!("malformed number `{lit}`")))?;
            if !v.is_finite() {
                return Err(syntax(start, format!("number `{lit}` is out of range")));
            }
            out.push((Tok::Num(v), start));
        } else if c.is_ascii_alphabetic() || c == b'_' {
            while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                i += 1;
            }
            out.push((Tok::Ident(text[start..i].to_string()), start));
        } else {
            let tok = match c {
                b'+' | b'-' | b'*' | b'/' | b'^' => Tok::Op(c as char),
                b'(' => Tok::LParen,
                b')' => Tok::RParen,
                b',' => Tok::Comma,
                _ => {
                    let ch = text[start..].chars().next().unwrap_or('?');
                    return Err(syntax(start, format!("unexpected character `{ch}`")));
                }
            };
            i += 1;
            out.push((tok, start));
        }
    }
    out.push((Tok::End, text.len()));
    Ok(out)
}

struct Parser {
    toks: Vec<(Tok, usize)>,
    at: usize,
    dim: usize,
}

impl Parser {
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

    fn expect(&mut self, want: Tok, what: &str) -> Result<()> {
        if *self.peek() == want {
            self.bump();
            Ok(())
        } else {
            Err(syntax(self.pos(), format!("expected {what}")))
        }
    }

    fn sum(&mut self) -> Result<Expr> {
        let mut lhs = self.product()?;
        loop {
            let op = match self.peek() {
                Tok::Op('+') => BinaryOp::Add,
                Tok::Op('-') => BinaryOp::Sub,
                _ => return Ok(lhs),
            };
            self.bump();
            let rhs = self.product()?;
            lhs = Expr::Binary(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn product(&mut self) -> Result<Expr> {
        let mut lhs = self.unary()?;
        loop {
            let op = match self.peek() {
                Tok::Op('*') => BinaryOp::Mul,
                Tok::Op('/') => BinaryOp::Div,
                _ => return Ok(lhs),
            };
            self.bump();
            let rhs = self.unary()?;
            lhs = Expr::Binary(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn unary(&mut self) -> Result<Expr> {
        if *self.peek() == Tok::Op('-') {
            self.bump();
            let inner = self.unary()?;
            return Ok(Expr::Unary(UnaryOp::Neg, Box::new(inner)));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr> {
        let base = self.primary()?;
        if *self.peek() != Tok::Op('^') {
            return Ok(base);
        }
        self.bump();
        let pos = self.pos();
        // Right associative: the exponent may itself be `a^b` (or `-a`).
        let exponent = self.unary()?;
        if exponent.max_var().is_some() {
            return Err(syntax(pos, "exponent must be a constant expression"));
        }
        let value = exponent
            .eval_at(&[])
            .map_err(|e| syntax(pos, format!("exponent does not evaluate: {e}")))?;
        Ok(Expr::Binary(
            BinaryOp::Pow,
            Box::new(base),
            Box::new(Expr::Const(value)),
        ))
    }

    fn primary(&mut self) -> Result<Expr> {
        let (tok, pos) = self.bump();
        match tok {
            Tok::Num(v) => Ok(Expr::Const(v)),
            Tok::LParen => {
                let e = self.sum()?;
                self.expect(Tok::RParen, "`)`")?;
                Ok(e)
            }
            Tok::Ident(name) => self.identifier(name, pos),
            Tok::End => Err(syntax(pos, "unexpected end of input")),
            other => Err(syntax(pos, format!("unexpected token {other:?}"))),
        }
    }

    fn identifier(&mut self, name: String, pos: usize) -> Result<Expr> {
        if *self.peek() == Tok::LParen {
            let unary = UnaryOp::from_name(&name);
            let nary = match name.as_str() {
                "min" => Some(NaryOp::Min),
                "max" => Some(NaryOp::Max),
                _ => None,
            };
            if unary.is_none() && nary.is_none() {
                return Err(Error::UnknownIdentifier { name, pos });
            }
            self.bump();
            let mut args = vec![self.sum()?];
            while *self.peek() == Tok::Comma {
                self.bump();
                args.push(self.sum()?);
            }
            self.expect(Tok::RParen, "`,` or `)`")?;
            return match (unary, nary) {
                (Some(op), _) if args.len() == 1 => Ok(Expr::Unary(op, Box::new(args.pop().expect("one argument")))),
                (Some(_), _) => Err(Error::Arity {
                    func: name,
                    expected: "1".into(),
                    found: args.len(),
                }),
                (None, Some(op)) if args.len() >= 2 => Ok(Expr::Nary(op, args)),
                _ => Err(Error::Arity {
                    func: name,
                    expected: "at least 2".into(),
                    found: args.len(),
                }),
            };
        }
        if name == "pi" {
            return Ok(Expr::Const(std::f64::consts::PI));
        }
        if let Some(digits) = name.strip_prefix('x') {
            if !digits.is_empty() && digits.bytes().all(|b| b.is_ascii_digit()) && !digits.starts_with('0') {
                let index: usize = digits.parse().map_err(|_| Error::UnknownIdentifier {
                    name: name.clone(),
                    pos,
                })?;
                if index > self.dim {
                    return Err(Error::VariableOutOfRange {
                        index,
                        dim: self.dim,
                        pos,
                    });
                }
                return Ok(Expr::Var(index - 1));
            }
        }
        Err(Error::UnknownIdentifier { name, pos })
    }
}

/// Parses `text` as an expression over the variables `x1..x{dim}`.
pub fn parse(text: &str, dim: usize) -> Result<Expr> {
    if dim == 0 {
        return Err(Error::invalid("expression dimension must be >= 1"));
    }
    let mut p = Parser {
        toks: tokenize(text)?,
        at: 0,
        dim,
    };
    let e = p.sum()?;
    if *p.peek() != Tok::End {
        return Err(syntax(p.pos(), "unexpected trailing input"));
    }
    Ok(e)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn val(text: &str) -> f64 {
        parse(text, 2).unwrap().eval_at(&[2.0, 3.0]).unwrap()
    }

    #[test]
    fn precedence_and_associativity() {
        assert_eq!(val("1 + 2 * 3"), 7.0);
        assert_eq!(val("8 - 3 - 2"), 3.0);
        assert_eq!(val("8 / 4 / 2"), 1.0);
        assert_eq!(val("2 ^ 3 ^ 2"), 512.0);
        assert_eq!(val("-x1^2"), -4.0);
        assert_eq!(val("-2^2"), -4.0);
        assert_eq!(val("(-2)^2"), 4.0);
        assert_eq!(val("2 * -x2"), -6.0);
        assert_eq!(val("x1^-1"), 0.5);
        assert_eq!(val("--x1"), 2.0);
        assert_eq!(val("1.5e1 + .5"), 15.5);
        assert_eq!(val("2e-1"), 0.2);
        assert!((val("pi") - std::f64::consts::PI).abs() < 1e-15);
    }

    #[test]
    fn whitespace_is_insignificant() {
        assert_eq!(parse(" x1 *\tx2 ", 2).unwrap(), parse("x1*x2", 2).unwrap());
    }

    #[test]
    fn errors_carry_positions() {
        assert_eq!(parse("x1 + ", 1).unwrap_err(), syntax(5, "unexpected end of input"));
        assert!(matches!(parse("x1 $ 2", 1), Err(Error::Syntax { pos: 3, .. })));
        assert!(matches!(parse("(x1", 1), Err(Error::Syntax { pos: 3, .. })));
        assert!(matches!(parse("x1 x1", 1), Err(Error::Syntax { pos: 3, .. })));
        assert!(matches!(
            parse("y + 1", 1),
            Err(Error::UnknownIdentifier { pos: 0, .. })
        ));
        assert!(matches!(
            parse("1 + foo(x1)", 1),
            Err(Error::UnknownIdentifier { pos: 4, .. })
        ));
        assert!(matches!(parse("x0", 1), Err(Error::UnknownIdentifier { .. })));
        assert!(matches!(
            parse("x1 + x3", 2),
            Err(Error::VariableOutOfRange {
                index: 3,
                dim: 2,
                pos: 5
            })
        ));
    }

    #[test]
    fn arity_and_exponent_checks() {
        assert!(matches!(parse("sin(x1, x2)", 2), Err(Error::Arity { .. })));
        assert!(matches!(parse("max(x1)", 2), Err(Error::Arity { .. })));
        assert!(matches!(parse("x1 ^ x2", 2), Err(Error::Syntax { pos: 5, .. })));
        assert!(parse("x1 ^ (1/2)", 2).is_ok());
    }

    #[test]
    fn no_implicit_multiplication() {
        assert!(parse("2x1", 1).is_err());
        assert!(parse("2 (x1)", 1).is_err());
    }
}
