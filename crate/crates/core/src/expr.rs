//! Small expression language for user-defined Hamiltonians and deformation
//! laws: numbers, named variables, `+ - * / ^`, unary minus, and the
//! functions `pow, sqrt, exp, log, ln, sin, cos`.

use std::collections::HashMap;
use std::fmt;

use crate::error::{EngineError, Result};
use crate::jets::{Jet, ScalarField};

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Num(f64),
    Var(usize),
    Neg(Box<Expr>),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    Pow(Box<Expr>, Box<Expr>),
    Call(Func, Box<Expr>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Sqrt,
    Exp,
    Log,
    Sin,
    Cos,
}

/// A parsed expression together with the variable names it was parsed against.
#[derive(Clone, PartialEq)]
pub struct Expression {
    source: String,
    vars: Vec<String>,
    root: Expr,
}

impl fmt::Debug for Expression {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Expression({:?})", self.source)
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Op(char),
}

fn tokenize(src: &str) -> Result<Vec<(usize, Tok)>> {
    let chars: Vec<char> = src.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            i += 1;
        } else if c.is_ascii_digit() || c == '.' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '.') {
                i += 1;
            }
            if i < chars.len() && (chars[i] == 'e' || chars[i] == 'E') {
                let mut j = i + 1;
                if j < chars.len() && (chars[j] == '+' || chars[j] == '-') {
                    j += 1;
                }
                if j < chars.len() && chars[j].is_ascii_digit() {
                    i = j;
                    while i < chars.len() && chars[i].is_ascii_digit() {
                        i += 1;
                    }
                }
            }
            let text: String = chars[start..i].iter().collect();
            let v = text
                .parse::<f64>()
                .map_err(|_| EngineError::Expression(format!("bad number '{text}' at {start}")))?;
            out.push((start, Tok::Num(v)));
        } else if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            out.push((start, Tok::Ident(chars[start..i].iter().collect())));
        } else if "+-*/^(),".contains(c) {
            out.push((i, Tok::Op(c)));
            i += 1;
        } else {
            return Err(EngineError::Expression(format!("unexpected '{c}' at {i}")));
        }
    }
    Ok(out)
}

struct Parser<'a> {
    toks: Vec<(usize, Tok)>,
    pos: usize,
    vars: &'a HashMap<&'a str, usize>,
}

impl Parser<'_> {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|(_, t)| t)
    }

    fn here(&self) -> usize {
        self.toks
            .get(self.pos)
            .map(|(p, _)| *p)
            .unwrap_or(usize::MAX)
    }

    fn expect(&mut self, c: char) -> Result<()> {
        if self.peek() == Some(&Tok::Op(c)) {
            self.pos += 1;
            Ok(())
        } else {
            Err(EngineError::Expression(format!(
                "expected '{c}' at {}",
                self.here()
            )))
        }
    }

    fn sum(&mut self) -> Result<Expr> {
        let mut lhs = self.product()?;
        while let Some(Tok::Op(c @ ('+' | '-'))) = self.peek().cloned() {
            self.pos += 1;
            let rhs = self.product()?;
            lhs = if c == '+' {
                Expr::Add(Box::new(lhs), Box::new(rhs))
            } else {
                Expr::Sub(Box::new(lhs), Box::new(rhs))
            };
        }
        Ok(lhs)
    }

    fn product(&mut self) -> Result<Expr> {
        let mut lhs = self.unary()?;
        while let Some(Tok::Op(c @ ('*' | '/'))) = self.peek().cloned() {
            self.pos += 1;
            let rhs = self.unary()?;
            lhs = if c == '*' {
                Expr::Mul(Box::new(lhs), Box::new(rhs))
            } else {
                Expr::Div(Box::new(lhs), Box::new(rhs))
            };
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Expr> {
        match self.peek() {
            Some(Tok::Op('-')) => {
                self.pos += 1;
                Ok(Expr::Neg(Box::new(self.unary()?)))
            }
            Some(Tok::Op('+')) => {
                self.pos += 1;
                self.unary()
            }
            _ => self.power(),
        }
    }

    fn power(&mut self) -> Result<Expr> {
        let base = self.atom()?;
        if self.peek() == Some(&Tok::Op('^')) {
            self.pos += 1;
            // right associative, binds tighter than unary minus on the left
            let exp = self.unary()?;
            return Ok(Expr::Pow(Box::new(base), Box::new(exp)));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Expr> {
        let at = self.here();
        match self.toks.get(self.pos).map(|(_, t)| t.clone()) {
            Some(Tok::Num(v)) => {
                self.pos += 1;
                Ok(Expr::Num(v))
            }
            Some(Tok::Op('(')) => {
                self.pos += 1;
                let e = self.sum()?;
                self.expect(')')?;
                Ok(e)
            }
            Some(Tok::Ident(name)) => {
                self.pos += 1;
                if self.peek() == Some(&Tok::Op('(')) {
                    self.pos += 1;
                    let arg = self.sum()?;
                    if name == "pow" {
                        self.expect(',')?;
                        let e = self.sum()?;
                        self.expect(')')?;
                        return Ok(Expr::Pow(Box::new(arg), Box::new(e)));
                    }
                    self.expect(')')?;
                    let f = match name.as_str() {
                        "sqrt" => Func::Sqrt,
                        "exp" => Func::Exp,
                        "log" | "ln" => Func::Log,
                        "sin" => Func::Sin,
                        "cos" => Func::Cos,
                        _ => {
                            return Err(EngineError::Expression(format!(
                                "unknown function '{name}' at {at}"
                            )))
                        }
                    };
                    return Ok(Expr::Call(f, Box::new(arg)));
                }
                match self.vars.get(name.as_str()) {
                    Some(&i) => Ok(Expr::Var(i)),
                    None => Err(EngineError::Expression(format!(
                        "unknown variable '{name}' at {at}"
                    ))),
                }
            }
            _ => Err(EngineError::Expression(format!("unexpected token at {at}"))),
        }
    }
}

impl Expression {
    pub fn parse(source: &str, vars: &[&str]) -> Result<Self> {
        let map: HashMap<&str, usize> = vars.iter().enumerate().map(|(i, v)| (*v, i)).collect();
        let mut parser = Parser {
            toks: tokenize(source)?,
            pos: 0,
            vars: &map,
        };
        if parser.toks.is_empty() {
            return Err(EngineError::Expression("empty expression".into()));
        }
        let root = parser.sum()?;
        if parser.pos != parser.toks.len() {
            return Err(EngineError::Expression(format!(
                "trailing input at {}",
                parser.here()
            )));
        }
        Ok(Self {
            source: source.to_string(),
            vars: vars.iter().map(|s| s.to_string()).collect(),
            root,
        })
    }

    /// Parses an expression over `x1..xn, p1..pn`.
    pub fn parse_chart(source: &str, n: usize) -> Result<Self> {
        let names: Vec<String> = (1..=n)
            .map(|i| format!("x{i}"))
            .chain((1..=n).map(|i| format!("p{i}")))
            .collect();
        let refs: Vec<&str> = names.iter().map(String::as_str).collect();
        Self::parse(source, &refs)
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn variables(&self) -> &[String] {
        &self.vars
    }

    pub fn eval_jet(&self, vars: &[Jet]) -> Result<Jet> {
        if vars.len() != self.vars.len() {
            return Err(EngineError::Expression(format!(
                "expected {} variables, got {}",
                self.vars.len(),
                vars.len()
            )));
        }
        let template = match vars.first() {
            Some(v) => Jet::constant(v.space(), 0.0).truncate(v.order()),
            None => Jet::constant(&crate::jets::JetSpace::get(1, 0), 0.0),
        };
        eval(&self.root, vars, &template)
    }

    pub fn eval_f64(&self, vars: &[f64]) -> Result<f64> {
        let space = crate::jets::JetSpace::get(1, 0);
        let jets: Vec<Jet> = vars.iter().map(|&v| Jet::constant(&space, v)).collect();
        self.eval_jet(&jets).map(|j| j.value())
    }
}

impl ScalarField for Expression {
    fn eval(&self, vars: &[Jet]) -> Result<Jet> {
        self.eval_jet(vars)
    }
}

fn eval(e: &Expr, vars: &[Jet], t: &Jet) -> Result<Jet> {
    let out = match e {
        Expr::Num(v) => t.add_scalar(*v),
        Expr::Var(i) => vars[*i].clone(),
        Expr::Neg(a) => -eval(a, vars, t)?,
        Expr::Add(a, b) => eval(a, vars, t)? + eval(b, vars, t)?,
        Expr::Sub(a, b) => eval(a, vars, t)? - eval(b, vars, t)?,
        Expr::Mul(a, b) => eval(a, vars, t)? * eval(b, vars, t)?,
        Expr::Div(a, b) => eval(a, vars, t)?.div_jet(&eval(b, vars, t)?)?,
        Expr::Pow(a, b) => {
            let base = eval(a, vars, t)?;
            match b.as_ref() {
                Expr::Num(k) if *k >= 0.0 && k.fract() == 0.0 && *k <= 64.0 => base.powi(*k as u32),
                Expr::Num(k) => base.powf(*k)?,
                other => {
                    let exponent = eval(other, vars, t)?;
                    (base.ln()? * exponent).exp()
                }
            }
        }
        Expr::Call(f, a) => {
            let x = eval(a, vars, t)?;
            match f {
                Func::Sqrt => x.sqrt()?,
                Func::Exp => x.exp(),
                Func::Log => x.ln()?,
                Func::Sin => x.sin(),
                Func::Cos => x.cos(),
            }
        }
    };
    if !out.value().is_finite() {
        return Err(EngineError::Domain(
            "expression produced a non-finite value".into(),
        ));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn precedence_and_functions() {
        let e = Expression::parse("1 + 2*x^2 - sqrt(y)/2", &["x", "y"]).unwrap();
        assert_eq!(e.eval_f64(&[3.0, 4.0]).unwrap(), 1.0 + 18.0 - 1.0);
        let e = Expression::parse("-x^2", &["x"]).unwrap();
        assert_eq!(e.eval_f64(&[3.0]).unwrap(), -9.0);
        let e =
            Expression::parse("pow(x, 0.5) + exp(0) + log(1) + cos(0) + sin(0)", &["x"]).unwrap();
        assert!((e.eval_f64(&[4.0]).unwrap() - 4.0).abs() < 1e-15);
        let e = Expression::parse("2^3^2", &[]).unwrap();
        assert_eq!(
            e.root,
            Expr::Pow(
                Box::new(Expr::Num(2.0)),
                Box::new(Expr::Pow(
                    Box::new(Expr::Num(3.0)),
                    Box::new(Expr::Num(2.0))
                ))
            )
        );
        let e = Expression::parse("1.5e-1*x", &["x"]).unwrap();
        assert!((e.eval_f64(&[2.0]).unwrap() - 0.3).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(Expression::parse("x +", &["x"]).is_err());
        assert!(Expression::parse("z", &["x"]).is_err());
        assert!(Expression::parse("foo(x)", &["x"]).is_err());
        assert!(Expression::parse("(x", &["x"]).is_err());
        assert!(Expression::parse("x $ 2", &["x"]).is_err());
        assert!(Expression::parse("", &["x"]).is_err());
    }

    #[test]
    fn chart_expression_matches_flat_hamiltonian() {
        let e = Expression::parse_chart("p1^2 + p2^2", 2).unwrap();
        let at = crate::jets::ChartPoint::new(vec![0.1, 0.2], vec![0.3, 0.4]).unwrap();
        let j = e.eval_jet(&crate::jets::coordinate_jets(&at, 2)).unwrap();
        assert!((j.value() - 0.25).abs() < 1e-15);
        assert_eq!(j.partial_along(&[2, 2]), Some(2.0));
        assert_eq!(j.partial_along(&[2, 3]), Some(0.0));
    }

    #[test]
    fn log_of_negative_is_domain_error() {
        let e = Expression::parse("log(x)", &["x"]).unwrap();
        assert!(matches!(e.eval_f64(&[-1.0]), Err(EngineError::Domain(_))));
    }
}
