//! Arithmetic expressions over state coordinates and named parameters.
//!
//! Grammar: sums and products of factors, `^` (right associative), unary
//! minus, numbers, `pi`, coordinates `x1..xd` (plus `x`, `y`, `z` when d ≤ 3),
//! parameters, and calls to sin, cos, tan, exp, log, sqrt, abs, pow.

use std::collections::BTreeMap;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Const(f64),
    Var(usize),
    Neg(Box<Expr>),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    Pow(Box<Expr>, Box<Expr>),
    Call(Func, Vec<Expr>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Sin,
    Cos,
    Tan,
    Exp,
    Log,
    Sqrt,
    Abs,
    Pow,
}

impl Func {
    fn lookup(name: &str) -> Option<Func> {
        Some(match name {
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "tan" => Func::Tan,
            "exp" => Func::Exp,
            "log" | "ln" => Func::Log,
            "sqrt" => Func::Sqrt,
            "abs" => Func::Abs,
            "pow" => Func::Pow,
            _ => return None,
        })
    }

    fn arity(self) -> usize {
        if self == Func::Pow {
            2
        } else {
            1
        }
    }
}

impl Expr {
    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            Expr::Const(c) => *c,
            Expr::Var(i) => x[*i],
            Expr::Neg(a) => -a.eval(x),
            Expr::Add(a, b) => a.eval(x) + b.eval(x),
            Expr::Sub(a, b) => a.eval(x) - b.eval(x),
            Expr::Mul(a, b) => a.eval(x) * b.eval(x),
            Expr::Div(a, b) => a.eval(x) / b.eval(x),
            Expr::Pow(a, b) => pow(a.eval(x), b.eval(x)),
            Expr::Call(f, args) => {
                let a = args[0].eval(x);
                match f {
                    Func::Sin => a.sin(),
                    Func::Cos => a.cos(),
                    Func::Tan => a.tan(),
                    Func::Exp => a.exp(),
                    Func::Log => a.ln(),
                    Func::Sqrt => a.sqrt(),
                    Func::Abs => a.abs(),
                    Func::Pow => pow(a, args[1].eval(x)),
                }
            }
        }
    }
}

fn pow(a: f64, b: f64) -> f64 {
    if b.fract() == 0.0 && b.abs() <= 64.0 {
        a.powi(b as i32)
    } else {
        a.powf(b)
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Op(char),
    End,
}

struct Lexer {
    toks: Vec<(Tok, usize, String)>,
}

fn lex(src: &str) -> Result<Lexer> {
    let chars: Vec<(usize, char)> = src.char_indices().collect();
    let mut toks = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let (pos, c) = chars[i];
        if c.is_whitespace() {
            i += 1;
        } else if c.is_ascii_digit() || c == '.' {
            let start = i;
            while i < chars.len() && (chars[i].1.is_ascii_digit() || chars[i].1 == '.') {
                i += 1;
            }
            if i < chars.len() && (chars[i].1 == 'e' || chars[i].1 == 'E') {
                let mut j = i + 1;
                if j < chars.len() && (chars[j].1 == '+' || chars[j].1 == '-') {
                    j += 1;
                }
                if j < chars.len() && chars[j].1.is_ascii_digit() {
                    i = j;
                    while i < chars.len() && chars[i].1.is_ascii_digit() {
                        i += 1;
                    }
                }
            }
            let text: String = chars[start..i].iter().map(|p| p.1).collect();
            let v: f64 = text.parse().map_err(|_| Error::Parse {
                pos,
                token: text.clone(),
                message: "malformed number".into(),
            })?;
            toks.push((Tok::Num(v), pos, text));
        } else if c.is_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].1.is_alphanumeric() || chars[i].1 == '_') {
                i += 1;
            }
            let text: String = chars[start..i].iter().map(|p| p.1).collect();
            toks.push((Tok::Ident(text.clone()), pos, text));
        } else if "+-*/^(),".contains(c) {
            toks.push((Tok::Op(c), pos, c.to_string()));
            i += 1;
        } else {
            return Err(Error::Parse {
                pos,
                token: c.to_string(),
                message: "unexpected character".into(),
            });
        }
    }
    toks.push((Tok::End, src.len(), "<end>".into()));
    Ok(Lexer { toks })
}

/// Symbol table used while parsing.
pub struct Scope<'a> {
    pub dimension: usize,
    pub params: &'a BTreeMap<String, f64>,
    /// Extra variable names, each bound to a coordinate index.
    pub aliases: &'a [(&'a str, usize)],
}

impl Scope<'_> {
    fn resolve(&self, name: &str) -> Option<Expr> {
        if let Some(v) = self.params.get(name) {
            return Some(Expr::Const(*v));
        }
        if let Some(&(_, i)) = self.aliases.iter().find(|a| a.0 == name) {
            return (i < self.dimension).then_some(Expr::Var(i));
        }
        if name == "pi" {
            return Some(Expr::Const(std::f64::consts::PI));
        }
        if let Some(rest) = name.strip_prefix('x') {
            if let Ok(k) = rest.parse::<usize>() {
                if k >= 1 && k <= self.dimension {
                    return Some(Expr::Var(k - 1));
                }
            }
        }
        let alias = match name {
            "x" => Some(0),
            "y" => Some(1),
            "z" => Some(2),
            _ => None,
        };
        match alias {
            Some(i) if self.dimension <= 3 && i < self.dimension => Some(Expr::Var(i)),
            _ => None,
        }
    }
}

struct Parser<'a, 'b> {
    lex: Lexer,
    at: usize,
    scope: &'a Scope<'b>,
}

impl Parser<'_, '_> {
    fn peek(&self) -> &Tok {
        &self.lex.toks[self.at].0
    }

    fn err(&self, message: &str) -> Error {
        let (_, pos, text) = &self.lex.toks[self.at];
        Error::Parse {
            pos: *pos,
            token: text.clone(),
            message: message.into(),
        }
    }

    fn expect(&mut self, c: char) -> Result<()> {
        if *self.peek() == Tok::Op(c) {
            self.at += 1;
            Ok(())
        } else {
            Err(self.err(&format!("expected '{c}'")))
        }
    }

    fn sum(&mut self) -> Result<Expr> {
        let mut lhs = self.product()?;
        loop {
            match self.peek() {
                Tok::Op('+') => {
                    self.at += 1;
                    lhs = Expr::Add(Box::new(lhs), Box::new(self.product()?));
                }
                Tok::Op('-') => {
                    self.at += 1;
                    lhs = Expr::Sub(Box::new(lhs), Box::new(self.product()?));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn product(&mut self) -> Result<Expr> {
        let mut lhs = self.unary()?;
        loop {
            match self.peek() {
                Tok::Op('*') => {
                    self.at += 1;
                    lhs = Expr::Mul(Box::new(lhs), Box::new(self.unary()?));
                }
                Tok::Op('/') => {
                    self.at += 1;
                    lhs = Expr::Div(Box::new(lhs), Box::new(self.unary()?));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn unary(&mut self) -> Result<Expr> {
        match self.peek() {
            Tok::Op('-') => {
                self.at += 1;
                Ok(Expr::Neg(Box::new(self.unary()?)))
            }
            Tok::Op('+') => {
                self.at += 1;
                self.unary()
            }
            _ => self.power(),
        }
    }

    fn power(&mut self) -> Result<Expr> {
        let base = self.atom()?;
        if *self.peek() == Tok::Op('^') {
            self.at += 1;
            let exp = self.unary()?;
            return Ok(Expr::Pow(Box::new(base), Box::new(exp)));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Expr> {
        let (tok, pos, _) = self.lex.toks[self.at].clone();
        match tok {
            Tok::Num(v) => {
                self.at += 1;
                Ok(Expr::Const(v))
            }
            Tok::Op('(') => {
                self.at += 1;
                let e = self.sum()?;
                self.expect(')')?;
                Ok(e)
            }
            Tok::Ident(name) => {
                self.at += 1;
                if *self.peek() == Tok::Op('(') {
                    let f = Func::lookup(&name).ok_or(Error::UndefinedSymbol { name: name.clone(), pos })?;
                    self.at += 1;
                    let mut args = vec![self.sum()?];
                    while *self.peek() == Tok::Op(',') {
                        self.at += 1;
                        args.push(self.sum()?);
                    }
                    if args.len() != f.arity() {
                        return Err(Error::Parse {
                            pos,
                            token: name,
                            message: format!("expects {} argument(s), got {}", f.arity(), args.len()),
                        });
                    }
                    self.expect(')')?;
                    return Ok(Expr::Call(f, args));
                }
                self.scope.resolve(&name).ok_or(Error::UndefinedSymbol { name, pos })
            }
            Tok::End => Err(self.err("unexpected end of expression")),
            Tok::Op(_) => Err(self.err("unexpected operator")),
        }
    }
}

/// Parses one expression against the given symbol table.
pub fn parse(src: &str, scope: &Scope<'_>) -> Result<Expr> {
    let lex = lex(src)?;
    let mut p = Parser { lex, at: 0, scope };
    let e = p.sum()?;
    if *p.peek() != Tok::End {
        return Err(p.err("unexpected trailing input"));
    }
    Ok(e)
}
