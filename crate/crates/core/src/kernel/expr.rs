//! Small arithmetic language for custom kernels.
//!
//! Grammar (EBNF); whitespace is ignored between tokens:
//!
//! ```text
//! expr    = term , { ( "+" | "-" ) , term } ;
//! term    = unary , { ( "*" | "/" ) , unary } ;
//! unary   = ( "-" | "+" ) , unary | power ;
//! power   = atom , [ "^" , unary ] ;
//! atom    = number | call | ident | "(" , expr , ")" ;
//! call    = func , "(" , expr , { "," , expr } , ")" ;
//! func    = "abs" | "sqrt" | "exp" | "log" | "sin" | "cos" | "pow" | "sign" ;
//! ident   = "x" , digit , { digit }      (* coordinate, 1-based *)
//!         | "norm" | "r"                 (* norm of the argument *)
//!         | "pi" ;
//! number  = ( digit , { digit } , [ "." , { digit } ] | "." , digit , { digit } ) ,
//!           [ ( "e" | "E" ) , [ "+" | "-" ] , digit , { digit } ] ;
//! ```
//!
//! `^` is right-associative and binds tighter than unary minus, so `-x1^2`
//! is `-(x1^2)`. `r` and `norm` are synonyms.

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Func {
    Abs,
    Sqrt,
    Exp,
    Log,
    Sin,
    Cos,
    Pow,
    Sign,
}

impl Func {
    fn from_name(s: &str) -> Option<Func> {
        Some(match s {
            "abs" => Func::Abs,
            "sqrt" => Func::Sqrt,
            "exp" => Func::Exp,
            "log" => Func::Log,
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "pow" => Func::Pow,
            "sign" => Func::Sign,
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

#[derive(Clone, Debug, PartialEq)]
pub enum Expr {
    Num(f64),
    Coord(usize),
    Norm,
    Neg(Box<Expr>),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    Pow(Box<Expr>, Box<Expr>),
    Call(Func, Vec<Expr>),
}

impl Expr {
    pub fn parse(src: &str) -> Result<Expr> {
        let mut p = Parser { src: src.as_bytes(), pos: 0 };
        let e = p.expr()?;
        p.skip_ws();
        if p.pos != p.src.len() {
            return Err(p.error("unexpected trailing input"));
        }
        Ok(e)
    }

    /// Evaluates at coordinates `x` with precomputed `norm`.
    pub fn eval(&self, x: &[f64], norm: f64) -> f64 {
        match self {
            Expr::Num(v) => *v,
            Expr::Coord(i) => x.get(*i).copied().unwrap_or(f64::NAN),
            Expr::Norm => norm,
            Expr::Neg(a) => -a.eval(x, norm),
            Expr::Add(a, b) => a.eval(x, norm) + b.eval(x, norm),
            Expr::Sub(a, b) => a.eval(x, norm) - b.eval(x, norm),
            Expr::Mul(a, b) => a.eval(x, norm) * b.eval(x, norm),
            Expr::Div(a, b) => a.eval(x, norm) / b.eval(x, norm),
            Expr::Pow(a, b) => pow(a.eval(x, norm), b.eval(x, norm)),
            Expr::Call(f, args) => {
                let a = args[0].eval(x, norm);
                match f {
                    Func::Abs => a.abs(),
                    Func::Sqrt => a.sqrt(),
                    Func::Exp => a.exp(),
                    Func::Log => a.ln(),
                    Func::Sin => a.sin(),
                    Func::Cos => a.cos(),
                    Func::Pow => pow(a, args[1].eval(x, norm)),
                    Func::Sign => {
                        if a > 0.0 {
                            1.0
                        } else if a < 0.0 {
                            -1.0
                        } else {
                            0.0
                        }
                    }
                }
            }
        }
    }

    /// Largest coordinate index referenced (1-based), 0 if none.
    pub fn max_coord(&self) -> usize {
        match self {
            Expr::Num(_) | Expr::Norm => 0,
            Expr::Coord(i) => i + 1,
            Expr::Neg(a) => a.max_coord(),
            Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) | Expr::Div(a, b) | Expr::Pow(a, b) => {
                a.max_coord().max(b.max_coord())
            }
            Expr::Call(_, args) => args.iter().map(Expr::max_coord).max().unwrap_or(0),
        }
    }
}

// integer exponents go through powi so that x^2 is exact
fn pow(a: f64, b: f64) -> f64 {
    if b.fract() == 0.0 && b.abs() <= 64.0 {
        a.powi(b as i32)
    } else {
        a.powf(b)
    }
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
}

impl Parser<'_> {
    fn error(&self, msg: &str) -> Error {
        Error::Parse {
            pos: self.pos,
            msg: msg.to_string(),
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

    fn expr(&mut self) -> Result<Expr> {
        let mut lhs = self.term()?;
        loop {
            if self.eat(b'+') {
                lhs = Expr::Add(Box::new(lhs), Box::new(self.term()?));
            } else if self.eat(b'-') {
                lhs = Expr::Sub(Box::new(lhs), Box::new(self.term()?));
            } else {
                return Ok(lhs);
            }
        }
    }

    fn term(&mut self) -> Result<Expr> {
        let mut lhs = self.unary()?;
        loop {
            if self.eat(b'*') {
                lhs = Expr::Mul(Box::new(lhs), Box::new(self.unary()?));
            } else if self.eat(b'/') {
                lhs = Expr::Div(Box::new(lhs), Box::new(self.unary()?));
            } else {
                return Ok(lhs);
            }
        }
    }

    fn unary(&mut self) -> Result<Expr> {
        if self.eat(b'-') {
            return Ok(Expr::Neg(Box::new(self.unary()?)));
        }
        if self.eat(b'+') {
            return self.unary();
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr> {
        let base = self.atom()?;
        if self.eat(b'^') {
            return Ok(Expr::Pow(Box::new(base), Box::new(self.unary()?)));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Expr> {
        match self.peek() {
            None => Err(self.error("unexpected end of input")),
            Some(b'(') => {
                self.pos += 1;
                let e = self.expr()?;
                if !self.eat(b')') {
                    return Err(self.error("expected ')'"));
                }
                Ok(e)
            }
            Some(c) if c.is_ascii_digit() || c == b'.' => self.number(),
            Some(c) if c.is_ascii_alphabetic() => self.ident(),
            Some(_) => Err(self.error("unexpected character")),
        }
    }

    fn number(&mut self) -> Result<Expr> {
        let start = self.pos;
        let digits = |p: &mut Self| {
            let s = p.pos;
            while p.pos < p.src.len() && p.src[p.pos].is_ascii_digit() {
                p.pos += 1;
            }
            p.pos - s
        };
        let mut n = digits(self);
        if self.src.get(self.pos) == Some(&b'.') {
            self.pos += 1;
            n += digits(self);
        }
        if n == 0 {
            self.pos = start;
            return Err(self.error("malformed number"));
        }
        if matches!(self.src.get(self.pos), Some(b'e' | b'E')) {
            let save = self.pos;
            self.pos += 1;
            if matches!(self.src.get(self.pos), Some(b'+' | b'-')) {
                self.pos += 1;
            }
            if digits(self) == 0 {
                self.pos = save;
                return Err(self.error("malformed exponent"));
            }
        }
        let text = std::str::from_utf8(&self.src[start..self.pos]).expect("ascii");
        text.parse::<f64>().map(Expr::Num).map_err(|_| Error::Parse {
            pos: start,
            msg: format!("bad number '{text}'"),
        })
    }

    fn ident(&mut self) -> Result<Expr> {
        let start = self.pos;
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_alphanumeric() {
            self.pos += 1;
        }
        let name = std::str::from_utf8(&self.src[start..self.pos]).expect("ascii");
        if let Some(f) = Func::from_name(name) {
            if !self.eat(b'(') {
                return Err(self.error("expected '(' after function name"));
            }
            let mut args = vec![self.expr()?];
            while self.eat(b',') {
                args.push(self.expr()?);
            }
            if !self.eat(b')') {
                return Err(self.error("expected ')'"));
            }
            if args.len() != f.arity() {
                return Err(Error::Parse {
                    pos: start,
                    msg: format!("{name} takes {} argument(s), got {}", f.arity(), args.len()),
                });
            }
            return Ok(Expr::Call(f, args));
        }
        match name {
            "norm" | "r" => Ok(Expr::Norm),
            "pi" => Ok(Expr::Num(std::f64::consts::PI)),
            _ => {
                if let Some(rest) = name.strip_prefix('x') {
                    if let Ok(k) = rest.parse::<usize>() {
                        if k >= 1 && !rest.starts_with('0') {
                            return Ok(Expr::Coord(k - 1));
                        }
                    }
                }
                Err(Error::Parse {
                    pos: start,
                    msg: format!("unknown identifier '{name}'"),
                })
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(s: &str, x: &[f64]) -> f64 {
        let n = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        Expr::parse(s).unwrap().eval(x, n)
    }

    #[test]
    fn precedence_and_associativity() {
        assert_eq!(ev("1 + 2 * 3", &[]), 7.0);
        assert_eq!(ev("(1 + 2) * 3", &[]), 9.0);
        assert_eq!(ev("2 ^ 3 ^ 2", &[]), 512.0);
        assert_eq!(ev("-2 ^ 2", &[]), -4.0);
        assert_eq!(ev("8 / 4 / 2", &[]), 1.0);
        assert_eq!(ev("1 - 2 - 3", &[]), -4.0);
        assert_eq!(ev("2^-1", &[]), 0.5);
    }

    #[test]
    fn variables_and_functions() {
        assert_eq!(ev("x1 / norm^2", &[3.0, 4.0]), 0.12);
        assert_eq!(ev("x2/r^2", &[3.0, 4.0]), 4.0 / 25.0);
        assert_eq!(ev("pow(x1, 2) + abs(-x2)", &[3.0, 4.0]), 13.0);
        assert_eq!(ev("sign(x1) * sqrt(4)", &[-1.0]), -2.0);
        assert!((ev("exp(log(2.5))", &[]) - 2.5).abs() < 1e-15);
        assert!((ev("cos(pi) + sin(0)", &[]) + 1.0).abs() < 1e-15);
        assert_eq!(ev("1.5e2 + 2E-1", &[]), 150.2);
        assert_eq!(Expr::parse("x3 * x1").unwrap().max_coord(), 3);
    }

    #[test]
    fn parse_errors_carry_positions() {
        let err = |s: &str| match Expr::parse(s) {
            Err(Error::Parse { pos, .. }) => pos,
            other => panic!("{s}: {other:?}"),
        };
        assert_eq!(err("1 +"), 3);
        assert_eq!(err("(1"), 2);
        assert_eq!(err("foo"), 0);
        assert_eq!(err("x0"), 0);
        assert_eq!(err("1 2"), 2);
        assert_eq!(err("pow(1)"), 0);
        assert_eq!(err("1e"), 1);
        assert_eq!(err("#"), 0);
        assert_eq!(err("sqrt 2"), 5);
    }
}
