//! Minimal arithmetic expression grammar for config-defined coefficients:
//! `+ - * /`, `pow(a, b)`, `exp`, `sin`, `cos`, `abs`, `sqrt`, numeric
//! literals, parentheses, and named state variables.

use std::fmt;
use std::sync::Arc;

use thiserror::Error;

use crate::field::{DiffusionField, VectorField};

#[derive(Debug, Error, PartialEq)]
pub enum ExprError {
    #[error("parse error at byte {pos}: {msg}")]
    Parse { pos: usize, msg: String },
    #[error("unknown identifier `{0}`")]
    UnknownIdentifier(String),
    #[error("function `{name}` takes {expected} argument(s), got {got}")]
    WrongArity {
        name: String,
        expected: usize,
        got: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Exp,
    Sin,
    Cos,
    Abs,
    Sqrt,
    Pow,
}

impl Func {
    fn arity(self) -> usize {
        match self {
            Func::Pow => 2,
            _ => 1,
        }
    }

    fn from_name(name: &str) -> Option<Self> {
        Some(match name {
            "exp" => Func::Exp,
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "abs" => Func::Abs,
            "sqrt" => Func::Sqrt,
            "pow" => Func::Pow,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Num(f64),
    Var(usize),
    Neg(Box<Expr>),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    Call(Func, Vec<Expr>),
}

impl Expr {
    pub fn eval(&self, vars: &[f64]) -> f64 {
        match self {
            Expr::Num(v) => *v,
            Expr::Var(i) => vars[*i],
            Expr::Neg(e) => -e.eval(vars),
            Expr::Add(a, b) => a.eval(vars) + b.eval(vars),
            Expr::Sub(a, b) => a.eval(vars) - b.eval(vars),
            Expr::Mul(a, b) => a.eval(vars) * b.eval(vars),
            Expr::Div(a, b) => a.eval(vars) / b.eval(vars),
            Expr::Call(f, args) => {
                let a = args[0].eval(vars);
                match f {
                    Func::Exp => a.exp(),
                    Func::Sin => a.sin(),
                    Func::Cos => a.cos(),
                    Func::Abs => a.abs(),
                    Func::Sqrt => a.sqrt(),
                    Func::Pow => a.powf(args[1].eval(vars)),
                }
            }
        }
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "<expr>")
    }
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
    vars: &'a [&'a str],
}

impl<'a> Parser<'a> {
    fn skip_ws(&mut self) {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.src.get(self.pos).copied()
    }

    fn bump(&mut self) -> Option<u8> {
        let c = self.peek()?;
        self.pos += 1;
        Some(c)
    }

    fn expect(&mut self, c: u8) -> Result<(), ExprError> {
        match self.bump() {
            Some(got) if got == c => Ok(()),
            got => Err(ExprError::Parse {
                pos: self.pos,
                msg: format!(
                    "expected `{}`, found {}",
                    c as char,
                    got.map_or("end of input".to_string(), |g| format!("`{}`", g as char))
                ),
            }),
        }
    }

    fn parse_expr(&mut self) -> Result<Expr, ExprError> {
        let mut lhs = self.parse_term()?;
        loop {
            match self.peek() {
                Some(b'+') => {
                    self.pos += 1;
                    lhs = Expr::Add(Box::new(lhs), Box::new(self.parse_term()?));
                }
                Some(b'-') => {
                    self.pos += 1;
                    lhs = Expr::Sub(Box::new(lhs), Box::new(self.parse_term()?));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn parse_term(&mut self) -> Result<Expr, ExprError> {
        let mut lhs = self.parse_factor()?;
        loop {
            match self.peek() {
                Some(b'*') => {
                    self.pos += 1;
                    lhs = Expr::Mul(Box::new(lhs), Box::new(self.parse_factor()?));
                }
                Some(b'/') => {
                    self.pos += 1;
                    lhs = Expr::Div(Box::new(lhs), Box::new(self.parse_factor()?));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn parse_factor(&mut self) -> Result<Expr, ExprError> {
        match self.peek() {
            Some(b'-') => {
                self.pos += 1;
                Ok(Expr::Neg(Box::new(self.parse_factor()?)))
            }
            Some(b'(') => {
                self.pos += 1;
                let inner = self.parse_expr()?;
                self.expect(b')')?;
                Ok(inner)
            }
            Some(c) if c.is_ascii_digit() || c == b'.' => self.parse_number(),
            Some(c) if c.is_ascii_alphabetic() || c == b'_' => self.parse_ident(),
            other => Err(ExprError::Parse {
                pos: self.pos,
                msg: other.map_or("unexpected end of input".to_string(), |c| {
                    format!("unexpected character `{}`", c as char)
                }),
            }),
        }
    }

    fn parse_number(&mut self) -> Result<Expr, ExprError> {
        self.skip_ws();
        let start = self.pos;
        while self.pos < self.src.len() {
            let c = self.src[self.pos];
            if c.is_ascii_digit() || c == b'.' {
                self.pos += 1;
            } else if (c == b'e' || c == b'E') && self.pos > start {
                self.pos += 1;
                if let Some(b'+' | b'-') = self.src.get(self.pos) {
                    self.pos += 1;
                }
            } else {
                break;
            }
        }
        let text = std::str::from_utf8(&self.src[start..self.pos]).unwrap();
        text.parse::<f64>()
            .map(Expr::Num)
            .map_err(|_| ExprError::Parse {
                pos: start,
                msg: format!("bad numeric literal `{text}`"),
            })
    }

    fn parse_ident(&mut self) -> Result<Expr, ExprError> {
        self.skip_ws();
        let start = self.pos;
        while self.pos < self.src.len()
            && (self.src[self.pos].is_ascii_alphanumeric() || self.src[self.pos] == b'_')
        {
            self.pos += 1;
        }
        let name = std::str::from_utf8(&self.src[start..self.pos]).unwrap();
        if let Some(func) = Func::from_name(name) {
            self.expect(b'(')?;
            let mut args = vec![self.parse_expr()?];
            while self.peek() == Some(b',') {
                self.pos += 1;
                args.push(self.parse_expr()?);
            }
            self.expect(b')')?;
            if args.len() != func.arity() {
                return Err(ExprError::WrongArity {
                    name: name.to_string(),
                    expected: func.arity(),
                    got: args.len(),
                });
            }
            return Ok(Expr::Call(func, args));
        }
        if let Some(idx) = self.vars.iter().position(|v| *v == name) {
            return Ok(Expr::Var(idx));
        }
        Err(ExprError::UnknownIdentifier(name.to_string()))
    }
}

/// Parse `src` against the named variable table; variables evaluate to the
/// slice entry at their table position.
pub fn parse_expr(src: &str, vars: &[&str]) -> Result<Expr, ExprError> {
    let mut parser = Parser {
        src: src.as_bytes(),
        pos: 0,
        vars,
    };
    let expr = parser.parse_expr()?;
    parser.skip_ws();
    if parser.pos != parser.src.len() {
        return Err(ExprError::Parse {
            pos: parser.pos,
            msg: "trailing input".to_string(),
        });
    }
    Ok(expr)
}

/// Drift field from one expression per component. Variables are `x1..xn`,
/// with `x` as an alias for `x1`.
pub fn vector_field_from_exprs(exprs: &[String]) -> Result<VectorField, ExprError> {
    let dim = exprs.len();
    let names = state_variable_names(dim);
    let name_refs: Vec<&str> = names.iter().map(|s| s.as_str()).collect();
    let parsed: Vec<Expr> = exprs
        .iter()
        .map(|e| parse_expr(e, &name_refs))
        .collect::<Result<_, _>>()?;
    let parsed = Arc::new(parsed);
    Ok(VectorField::new(dim, move |x, out| {
        let vars = alias_vars(x);
        for (slot, expr) in out.iter_mut().zip(parsed.iter()) {
            *slot = expr.eval(&vars);
        }
    }))
}

/// Diffusion field from a row-major matrix of expressions over `x1..xn`.
pub fn diffusion_field_from_exprs(
    rows: &[Vec<String>],
    state_dim: usize,
) -> Result<DiffusionField, ExprError> {
    let n = rows.len();
    assert!(n >= 1);
    let k = rows[0].len();
    assert!(rows.iter().all(|r| r.len() == k), "ragged diffusion matrix");
    let names = state_variable_names(state_dim);
    let name_refs: Vec<&str> = names.iter().map(|s| s.as_str()).collect();
    let mut parsed = Vec::with_capacity(n * k);
    for row in rows {
        for e in row {
            parsed.push(parse_expr(e, &name_refs)?);
        }
    }
    let parsed = Arc::new(parsed);
    Ok(DiffusionField::new(n, k, move |x, out| {
        let vars = alias_vars(x);
        for (slot, expr) in out.iter_mut().zip(parsed.iter()) {
            *slot = expr.eval(&vars);
        }
    }))
}

/// `x1..xn` plus the alias `x` (for `x1`) and `y` (for `x2`), appended after
/// the positional names so indices line up with an extended value slice.
fn state_variable_names(dim: usize) -> Vec<String> {
    let mut names: Vec<String> = (1..=dim).map(|i| format!("x{i}")).collect();
    names.push("x".to_string());
    if dim >= 2 {
        names.push("y".to_string());
    }
    names
}

fn alias_vars(x: &[f64]) -> Vec<f64> {
    let mut vars = x.to_vec();
    vars.push(x[0]); // alias `x`
    if x.len() >= 2 {
        vars.push(x[1]); // alias `y`
    }
    vars
}

#[cfg(test)]
mod tests {
    use super::*;

    fn eval1(src: &str, x: f64) -> f64 {
        parse_expr(src, &["x"]).unwrap().eval(&[x])
    }

    #[test]
    fn arithmetic_and_precedence() {
        assert_eq!(eval1("1 + 2 * 3", 0.0), 7.0);
        assert_eq!(eval1("(1 + 2) * 3", 0.0), 9.0);
        assert_eq!(eval1("2 - 3 - 4", 0.0), -5.0);
        assert_eq!(eval1("12 / 3 / 2", 0.0), 2.0);
        assert_eq!(eval1("-x * -x", 3.0), 9.0);
    }

    #[test]
    fn functions_and_literals() {
        assert!((eval1("exp(1)", 0.0) - std::f64::consts::E).abs() < 1e-15);
        assert!((eval1("pow(x, 3)", 2.0) - 8.0).abs() < 1e-15);
        assert!((eval1("abs(-2.5e1)", 0.0) - 25.0).abs() < 1e-15);
        assert!((eval1("sin(0)", 0.0)).abs() < 1e-15);
        assert!((eval1("sqrt(9)", 0.0) - 3.0).abs() < 1e-15);
    }

    #[test]
    fn cubic_drift_matches_closure() {
        let f = vector_field_from_exprs(&["x - pow(x, 3)".to_string()]).unwrap();
        for v in [-1.5, -0.3, 0.0, 0.9, 2.0] {
            assert!((f.eval_vec(&[v])[0] - (v - v.powi(3))).abs() < 1e-14);
        }
    }

    #[test]
    fn two_dimensional_rotation() {
        let f = vector_field_from_exprs(&["x2".to_string(), "-x1".to_string()]).unwrap();
        let out = f.eval_vec(&[0.5, -0.25]);
        assert_eq!(out, vec![-0.25, -0.5]);
        // Aliases x (= x1) and y (= x2) work too.
        let g = vector_field_from_exprs(&["y".to_string(), "-x".to_string()]).unwrap();
        assert_eq!(g.eval_vec(&[0.5, -0.25]), vec![-0.25, -0.5]);
    }

    #[test]
    fn diffusion_matrix_shape() {
        let sigma = diffusion_field_from_exprs(
            &[
                vec!["1 + 0.1 * sin(x)".to_string(), "0".to_string()],
                vec!["0".to_string(), "2".to_string()],
            ],
            2,
        )
        .unwrap();
        let m = sigma.matrix_at(&[0.0, 9.0]);
        assert_eq!(m.nrows(), 2);
        assert_eq!(m.ncols(), 2);
        assert!((m[(0, 0)] - 1.0).abs() < 1e-15);
        assert!((m[(1, 1)] - 2.0).abs() < 1e-15);
    }

    #[test]
    fn errors_are_reported() {
        assert!(matches!(
            parse_expr("1 +", &[]),
            Err(ExprError::Parse { .. })
        ));
        assert_eq!(
            parse_expr("foo + 1", &[]),
            Err(ExprError::UnknownIdentifier("foo".to_string()))
        );
        assert!(matches!(
            parse_expr("pow(1)", &[]),
            Err(ExprError::WrongArity { .. })
        ));
        assert!(matches!(
            parse_expr("1 2", &[]),
            Err(ExprError::Parse { .. })
        ));
    }
}
