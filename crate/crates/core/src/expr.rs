//! A small arithmetic expression language over named variables.
//!
//! Grammar: `+ - * /`, unary minus, parentheses, numeric literals, and the
//! functions `abs`, `exp`, `tanh`, `min`, `max`. Custom generators use the
//! variables (t, y, z); terminal conditions use x. Derivatives are obtained
//! by forward-mode duals, with abs'(0) = 0 and ties in min/max resolved
//! toward the first argument.

use std::fmt;

use crate::error::Error;
use crate::Result;

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Num(f64),
    Var(usize),
    Neg(Box<Expr>),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    Abs(Box<Expr>),
    Exp(Box<Expr>),
    Tanh(Box<Expr>),
    Min(Box<Expr>, Box<Expr>),
    Max(Box<Expr>, Box<Expr>),
}

/// A parsed expression together with its variable names.
#[derive(Debug, Clone)]
pub struct Compiled {
    ast: Expr,
    vars: Vec<String>,
    source: String,
}

impl fmt::Display for Compiled {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.source)
    }
}

impl Compiled {
    /// Parse `source`, allowing exactly the given variable names.
    pub fn parse(source: &str, vars: &[&str]) -> Result<Self> {
        let mut p = Parser {
            bytes: source.as_bytes(),
            pos: 0,
            vars,
        };
        let ast = p.expr()?;
        p.skip_ws();
        if p.pos != p.bytes.len() {
            return Err(Error::Parse {
                offset: p.pos,
                message: format!("unexpected trailing input in '{source}'"),
            });
        }
        Ok(Compiled {
            ast,
            vars: vars.iter().map(|s| s.to_string()).collect(),
            source: source.to_string(),
        })
    }

    pub fn vars(&self) -> &[String] {
        &self.vars
    }

    pub fn eval(&self, env: &[f64]) -> f64 {
        debug_assert_eq!(env.len(), self.vars.len());
        eval(&self.ast, env)
    }

    /// Value and partial derivative with respect to variable `wrt`.
    pub fn eval_d(&self, env: &[f64], wrt: usize) -> (f64, f64) {
        debug_assert!(wrt < self.vars.len());
        eval_dual(&self.ast, env, wrt)
    }
}

fn eval(e: &Expr, env: &[f64]) -> f64 {
    match e {
        Expr::Num(v) => *v,
        Expr::Var(i) => env[*i],
        Expr::Neg(a) => -eval(a, env),
        Expr::Add(a, b) => eval(a, env) + eval(b, env),
        Expr::Sub(a, b) => eval(a, env) - eval(b, env),
        Expr::Mul(a, b) => eval(a, env) * eval(b, env),
        Expr::Div(a, b) => eval(a, env) / eval(b, env),
        Expr::Abs(a) => eval(a, env).abs(),
        Expr::Exp(a) => eval(a, env).exp(),
        Expr::Tanh(a) => eval(a, env).tanh(),
        Expr::Min(a, b) => eval(a, env).min(eval(b, env)),
        Expr::Max(a, b) => eval(a, env).max(eval(b, env)),
    }
}

fn eval_dual(e: &Expr, env: &[f64], wrt: usize) -> (f64, f64) {
    match e {
        Expr::Num(v) => (*v, 0.0),
        Expr::Var(i) => (env[*i], if *i == wrt { 1.0 } else { 0.0 }),
        Expr::Neg(a) => {
            let (v, d) = eval_dual(a, env, wrt);
            (-v, -d)
        }
        Expr::Add(a, b) => {
            let (va, da) = eval_dual(a, env, wrt);
            let (vb, db) = eval_dual(b, env, wrt);
            (va + vb, da + db)
        }
        Expr::Sub(a, b) => {
            let (va, da) = eval_dual(a, env, wrt);
            let (vb, db) = eval_dual(b, env, wrt);
            (va - vb, da - db)
        }
        Expr::Mul(a, b) => {
            let (va, da) = eval_dual(a, env, wrt);
            let (vb, db) = eval_dual(b, env, wrt);
            (va * vb, da * vb + va * db)
        }
        Expr::Div(a, b) => {
            let (va, da) = eval_dual(a, env, wrt);
            let (vb, db) = eval_dual(b, env, wrt);
            (va / vb, (da * vb - va * db) / (vb * vb))
        }
        Expr::Abs(a) => {
            let (v, d) = eval_dual(a, env, wrt);
            // Symmetric subgradient choice at the kink.
            let s = if v > 0.0 {
                1.0
            } else if v < 0.0 {
                -1.0
            } else {
                0.0
            };
            (v.abs(), s * d)
        }
        Expr::Exp(a) => {
            let (v, d) = eval_dual(a, env, wrt);
            let ev = v.exp();
            (ev, ev * d)
        }
        Expr::Tanh(a) => {
            let (v, d) = eval_dual(a, env, wrt);
            let tv = v.tanh();
            (tv, (1.0 - tv * tv) * d)
        }
        Expr::Min(a, b) => {
            let (va, da) = eval_dual(a, env, wrt);
            let (vb, db) = eval_dual(b, env, wrt);
            if va <= vb {
                (va, da)
            } else {
                (vb, db)
            }
        }
        Expr::Max(a, b) => {
            let (va, da) = eval_dual(a, env, wrt);
            let (vb, db) = eval_dual(b, env, wrt);
            if va >= vb {
                (va, da)
            } else {
                (vb, db)
            }
        }
    }
}

struct Parser<'a> {
    bytes: &'a [u8],
    pos: usize,
    vars: &'a [&'a str],
}

impl<'a> Parser<'a> {
    fn skip_ws(&mut self) {
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.bytes.get(self.pos).copied()
    }

    fn expect(&mut self, c: u8) -> Result<()> {
        if self.peek() == Some(c) {
            self.pos += 1;
            Ok(())
        } else {
            Err(Error::Parse {
                offset: self.pos,
                message: format!("expected '{}'", c as char),
            })
        }
    }

    fn expr(&mut self) -> Result<Expr> {
        let mut lhs = self.term()?;
        loop {
            match self.peek() {
                Some(b'+') => {
                    self.pos += 1;
                    lhs = Expr::Add(Box::new(lhs), Box::new(self.term()?));
                }
                Some(b'-') => {
                    self.pos += 1;
                    lhs = Expr::Sub(Box::new(lhs), Box::new(self.term()?));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn term(&mut self) -> Result<Expr> {
        let mut lhs = self.factor()?;
        loop {
            match self.peek() {
                Some(b'*') => {
                    self.pos += 1;
                    lhs = Expr::Mul(Box::new(lhs), Box::new(self.factor()?));
                }
                Some(b'/') => {
                    self.pos += 1;
                    lhs = Expr::Div(Box::new(lhs), Box::new(self.factor()?));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn factor(&mut self) -> Result<Expr> {
        if self.peek() == Some(b'-') {
            self.pos += 1;
            return Ok(Expr::Neg(Box::new(self.factor()?)));
        }
        self.atom()
    }

    fn atom(&mut self) -> Result<Expr> {
        match self.peek() {
            Some(b'(') => {
                self.pos += 1;
                let inner = self.expr()?;
                self.expect(b')')?;
                Ok(inner)
            }
            Some(c) if c.is_ascii_digit() || c == b'.' => self.number(),
            Some(c) if c.is_ascii_alphabetic() || c == b'_' => self.ident(),
            _ => Err(Error::Parse {
                offset: self.pos,
                message: "expected a number, variable, function or '('".into(),
            }),
        }
    }

    fn number(&mut self) -> Result<Expr> {
        self.skip_ws();
        let start = self.pos;
        while self.pos < self.bytes.len() {
            let c = self.bytes[self.pos];
            let exp_sign = (c == b'+' || c == b'-')
                && self.pos > start
                && matches!(self.bytes[self.pos - 1], b'e' | b'E');
            if c.is_ascii_digit() || c == b'.' || c == b'e' || c == b'E' || exp_sign {
                self.pos += 1;
            } else {
                break;
            }
        }
        let text = std::str::from_utf8(&self.bytes[start..self.pos]).unwrap();
        text.parse::<f64>()
            .map(Expr::Num)
            .map_err(|_| Error::Parse {
                offset: start,
                message: format!("bad numeric literal '{text}'"),
            })
    }

    fn ident(&mut self) -> Result<Expr> {
        self.skip_ws();
        let start = self.pos;
        while self.pos < self.bytes.len()
            && (self.bytes[self.pos].is_ascii_alphanumeric() || self.bytes[self.pos] == b'_')
        {
            self.pos += 1;
        }
        let name = std::str::from_utf8(&self.bytes[start..self.pos]).unwrap();
        if self.peek() == Some(b'(') {
            self.pos += 1;
            let first = self.expr()?;
            let expr = match name {
                "abs" | "exp" | "tanh" => {
                    let inner = Box::new(first);
                    match name {
                        "abs" => Expr::Abs(inner),
                        "exp" => Expr::Exp(inner),
                        _ => Expr::Tanh(inner),
                    }
                }
                "min" | "max" => {
                    self.expect(b',')?;
                    let second = self.expr()?;
                    if name == "min" {
                        Expr::Min(Box::new(first), Box::new(second))
                    } else {
                        Expr::Max(Box::new(first), Box::new(second))
                    }
                }
                other => {
                    return Err(Error::Parse {
                        offset: start,
                        message: format!(
                            "unknown function '{other}' (have abs, exp, tanh, min, max)"
                        ),
                    })
                }
            };
            self.expect(b')')?;
            return Ok(expr);
        }
        if let Some(i) = self.vars.iter().position(|v| *v == name) {
            Ok(Expr::Var(i))
        } else {
            Err(Error::Parse {
                offset: start,
                message: format!("unknown variable '{name}' (have {:?})", self.vars),
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn parses_and_evaluates() {
        let e = Compiled::parse("0.5*z*z + y - exp(-t)", &["t", "y", "z"]).unwrap();
        let v = e.eval(&[0.0, 1.0, 2.0]);
        assert!((v - (2.0 + 1.0 - 1.0)).abs() < 1e-15);
    }

    #[test]
    fn clip_via_min_max() {
        let e = Compiled::parse("min(max(x, -2), 2)", &["x"]).unwrap();
        assert_eq!(e.eval(&[-5.0]), -2.0);
        assert_eq!(e.eval(&[0.7]), 0.7);
        assert_eq!(e.eval(&[9.0]), 2.0);
    }

    #[test]
    fn forward_derivative_matches_hand_computation() {
        let e = Compiled::parse("0.5*z*z + abs(z)", &["t", "y", "z"]).unwrap();
        let (v, d) = e.eval_d(&[0.0, 0.0, 3.0], 2);
        assert!((v - 7.5).abs() < 1e-15);
        assert!((d - 4.0).abs() < 1e-15);
        let (_, d0) = e.eval_d(&[0.0, 0.0, 0.0], 2);
        assert_eq!(d0, 0.0); // symmetric subgradient at the kink
    }

    #[test]
    fn reports_parse_errors_with_offsets() {
        assert!(matches!(
            Compiled::parse("z*", &["z"]),
            Err(Error::Parse { .. })
        ));
        assert!(matches!(
            Compiled::parse("sin(z)", &["z"]),
            Err(Error::Parse { .. })
        ));
        assert!(matches!(
            Compiled::parse("w + 1", &["z"]),
            Err(Error::Parse { .. })
        ));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        // Forward-mode derivative agrees with central differences away from
        // kinks.
        #[test]
        fn dual_matches_finite_difference(z in -3.0f64..3.0, y in -2.0f64..2.0) {
            prop_assume!(z.abs() > 1e-3);
            let e = Compiled::parse("0.3*z*z - tanh(z)*y + exp(-abs(z))", &["t", "y", "z"]).unwrap();
            let h = 1e-6;
            let (_, d) = e.eval_d(&[0.1, y, z], 2);
            let fd = (e.eval(&[0.1, y, z + h]) - e.eval(&[0.1, y, z - h])) / (2.0 * h);
            prop_assert!((d - fd).abs() < 1e-6 * (1.0 + fd.abs()), "{d} vs {fd}");
        }
    }
}
