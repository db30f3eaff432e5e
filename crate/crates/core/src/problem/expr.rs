//! A small arithmetic expression language over the variables `t, x, y, z`.
//!
//! Grammar (usual precedence, `^` binds tightest and is right-associative):
//!
//! ```text
//! expr  := term (('+' | '-') term)*
//! term  := unary (('*' | '/') unary)*
//! unary := '-' unary | power
//! power := atom ('^' unary)?
//! atom  := number | var | func '(' expr (',' expr)* ')' | '(' expr ')'
//! ```
//!
//! Functions: `abs exp sin cos sqrt` (unary) and `pow min max` (binary).

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Vars {
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Var {
    T,
    X,
    Y,
    Z,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Func1 {
    Abs,
    Exp,
    Sin,
    Cos,
    Sqrt,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Func2 {
    Pow,
    Min,
    Max,
}

#[derive(Debug, Clone, PartialEq)]
enum Node {
    Const(f64),
    Var(Var),
    Neg(Box<Node>),
    Add(Box<Node>, Box<Node>),
    Sub(Box<Node>, Box<Node>),
    Mul(Box<Node>, Box<Node>),
    Div(Box<Node>, Box<Node>),
    Pow(Box<Node>, Box<Node>),
    Call1(Func1, Box<Node>),
    Call2(Func2, Box<Node>, Box<Node>),
}

impl Node {
    fn eval(&self, v: &Vars) -> f64 {
        match self {
            Node::Const(c) => *c,
            Node::Var(Var::T) => v.t,
            Node::Var(Var::X) => v.x,
            Node::Var(Var::Y) => v.y,
            Node::Var(Var::Z) => v.z,
            Node::Neg(a) => -a.eval(v),
            Node::Add(a, b) => a.eval(v) + b.eval(v),
            Node::Sub(a, b) => a.eval(v) - b.eval(v),
            Node::Mul(a, b) => a.eval(v) * b.eval(v),
            Node::Div(a, b) => a.eval(v) / b.eval(v),
            Node::Pow(a, b) => a.eval(v).powf(b.eval(v)),
            Node::Call1(f, a) => {
                let a = a.eval(v);
                match f {
                    Func1::Abs => a.abs(),
                    Func1::Exp => a.exp(),
                    Func1::Sin => a.sin(),
                    Func1::Cos => a.cos(),
                    Func1::Sqrt => a.sqrt(),
                }
            }
            Node::Call2(f, a, b) => {
                let (a, b) = (a.eval(v), b.eval(v));
                match f {
                    Func2::Pow => a.powf(b),
                    Func2::Min => a.min(b),
                    Func2::Max => a.max(b),
                }
            }
        }
    }

    fn uses(&self, var: Var) -> bool {
        match self {
            Node::Const(_) => false,
            Node::Var(v) => *v == var,
            Node::Neg(a) | Node::Call1(_, a) => a.uses(var),
            Node::Add(a, b)
            | Node::Sub(a, b)
            | Node::Mul(a, b)
            | Node::Div(a, b)
            | Node::Pow(a, b)
            | Node::Call2(_, a, b) => a.uses(var) || b.uses(var),
        }
    }
}

/// A parsed expression that remembers its source text.
#[derive(Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Expr {
    source: String,
    root: Node,
}

impl Expr {
    pub fn parse(source: &str) -> Result<Self> {
        let mut p = Parser {
            src: source.as_bytes(),
            pos: 0,
        };
        let root = p.expr()?;
        p.skip_ws();
        if p.pos != p.src.len() {
            return Err(p.error("unexpected trailing input"));
        }
        Ok(Expr {
            source: source.to_string(),
            root,
        })
    }

    pub fn eval(&self, vars: &Vars) -> f64 {
        self.root.eval(vars)
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn uses_x(&self) -> bool {
        self.root.uses(Var::X)
    }

    pub fn uses_t(&self) -> bool {
        self.root.uses(Var::T)
    }
}

impl fmt::Debug for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Expr({:?})", self.source)
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.source)
    }
}

impl TryFrom<String> for Expr {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        Expr::parse(&s)
    }
}

impl From<Expr> for String {
    fn from(e: Expr) -> String {
        e.source
    }
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
}

impl Parser<'_> {
    fn error(&self, message: &str) -> Error {
        Error::Expression {
            offset: self.pos,
            message: message.to_string(),
        }
    }

    fn skip_ws(&mut self) {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.src.get(self.pos).copied()
    }

    fn eat(&mut self, c: u8) -> bool {
        if self.peek() == Some(c) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expr(&mut self) -> Result<Node> {
        let mut lhs = self.term()?;
        loop {
            if self.eat(b'+') {
                lhs = Node::Add(Box::new(lhs), Box::new(self.term()?));
            } else if self.eat(b'-') {
                lhs = Node::Sub(Box::new(lhs), Box::new(self.term()?));
            } else {
                return Ok(lhs);
            }
        }
    }

    fn term(&mut self) -> Result<Node> {
        let mut lhs = self.unary()?;
        loop {
            if self.eat(b'*') {
                lhs = Node::Mul(Box::new(lhs), Box::new(self.unary()?));
            } else if self.eat(b'/') {
                lhs = Node::Div(Box::new(lhs), Box::new(self.unary()?));
            } else {
                return Ok(lhs);
            }
        }
    }

    fn unary(&mut self) -> Result<Node> {
        if self.eat(b'-') {
            return Ok(Node::Neg(Box::new(self.unary()?)));
        }
        let base = self.atom()?;
        if self.eat(b'^') {
            let exp = self.unary()?;
            return Ok(Node::Pow(Box::new(base), Box::new(exp)));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Node> {
        match self.peek() {
            None => Err(self.error("unexpected end of expression")),
            Some(b'(') => {
                self.pos += 1;
                let e = self.expr()?;
                if !self.eat(b')') {
                    return Err(self.error("expected `)`"));
                }
                Ok(e)
            }
            Some(c) if c.is_ascii_digit() || c == b'.' => self.number(),
            Some(c) if c.is_ascii_alphabetic() => {
                let start = self.pos;
                while self.pos < self.src.len()
                    && (self.src[self.pos].is_ascii_alphanumeric() || self.src[self.pos] == b'_')
                {
                    self.pos += 1;
                }
                let ident = std::str::from_utf8(&self.src[start..self.pos]).unwrap_or("");
                self.ident(ident, start)
            }
            Some(_) => Err(self.error("unexpected character")),
        }
    }

    fn ident(&mut self, ident: &str, start: usize) -> Result<Node> {
        let var = match ident {
            "t" => Some(Var::T),
            "x" => Some(Var::X),
            "y" => Some(Var::Y),
            "z" => Some(Var::Z),
            _ => None,
        };
        if let Some(v) = var {
            return Ok(Node::Var(v));
        }
        let f1 = match ident {
            "abs" => Some(Func1::Abs),
            "exp" => Some(Func1::Exp),
            "sin" => Some(Func1::Sin),
            "cos" => Some(Func1::Cos),
            "sqrt" => Some(Func1::Sqrt),
            _ => None,
        };
        let f2 = match ident {
            "pow" => Some(Func2::Pow),
            "min" => Some(Func2::Min),
            "max" => Some(Func2::Max),
            _ => None,
        };
        if f1.is_none() && f2.is_none() {
            self.pos = start;
            return Err(self.error(&format!("unknown identifier `{ident}`")));
        }
        if !self.eat(b'(') {
            return Err(self.error("expected `(` after function name"));
        }
        let a = self.expr()?;
        let node = if let Some(f) = f1 {
            Node::Call1(f, Box::new(a))
        } else {
            if !self.eat(b',') {
                return Err(self.error("expected `,` in binary function call"));
            }
            let b = self.expr()?;
            Node::Call2(f2.unwrap(), Box::new(a), Box::new(b))
        };
        if !self.eat(b')') {
            return Err(self.error("expected `)`"));
        }
        Ok(node)
    }

    fn number(&mut self) -> Result<Node> {
        let start = self.pos;
        let s = self.src;
        while self.pos < s.len() && (s[self.pos].is_ascii_digit() || s[self.pos] == b'.') {
            self.pos += 1;
        }
        if self.pos < s.len() && (s[self.pos] == b'e' || s[self.pos] == b'E') {
            let save = self.pos;
            self.pos += 1;
            if self.pos < s.len() && (s[self.pos] == b'+' || s[self.pos] == b'-') {
                self.pos += 1;
            }
            let digits = self.pos;
            while self.pos < s.len() && s[self.pos].is_ascii_digit() {
                self.pos += 1;
            }
            if self.pos == digits {
                self.pos = save;
            }
        }
        let text = std::str::from_utf8(&s[start..self.pos]).unwrap_or("");
        text.parse::<f64>().map(Node::Const).map_err(|_| {
            self.pos = start;
            self.error("malformed number")
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(src: &str, x: f64, z: f64) -> f64 {
        Expr::parse(src).unwrap().eval(&Vars {
            t: 0.5,
            x,
            y: -1.0,
            z,
        })
    }

    #[test]
    fn precedence_and_associativity() {
        assert_eq!(ev("1 + 2 * 3", 0.0, 0.0), 7.0);
        assert_eq!(ev("2 ^ 3 ^ 2", 0.0, 0.0), 512.0);
        assert_eq!(ev("-2 ^ 2", 0.0, 0.0), -4.0);
        assert_eq!(ev("(1 - 2) - 3", 0.0, 0.0), -4.0);
        assert_eq!(ev("8 / 4 / 2", 0.0, 0.0), 1.0);
    }

    #[test]
    fn variables_and_functions() {
        assert_eq!(ev("pow(abs(z), 3)", 0.0, -2.0), 8.0);
        assert_eq!(ev("max(x, y) + min(t, 1)", 3.0, 0.0), 3.5);
        assert!((ev("exp(-t)*sin(x)", 1.0, 0.0) - (-0.5f64).exp() * 1.0f64.sin()).abs() < 1e-15);
        assert_eq!(ev("1.5e1 + sqrt(4)", 0.0, 0.0), 17.0);
    }

    #[test]
    fn rejects_malformed_input() {
        assert!(Expr::parse("1 +").is_err());
        assert!(Expr::parse("foo(x)").is_err());
        assert!(Expr::parse("pow(x)").is_err());
        assert!(Expr::parse("(x").is_err());
        assert!(Expr::parse("x y").is_err());
    }

    #[test]
    fn serde_round_trip_keeps_source() {
        let e = Expr::parse("abs(x) + 1").unwrap();
        let json = serde_json::to_string(&e).unwrap();
        assert_eq!(json, "\"abs(x) + 1\"");
        let back: Expr = serde_json::from_str(&json).unwrap();
        assert_eq!(back, e);
    }
}
