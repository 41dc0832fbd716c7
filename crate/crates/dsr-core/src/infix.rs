//! Small infix expression grammar.
//!
//! Used for two things: evaluating benchmark ground-truth formulas (which
//! may use `^` and `sqrt`, outside the search library) and parsing
//! user-supplied candidate expressions for the `eval` command (which must
//! stay within the library's token set).
//!
//! Grammar: `expr := term (('+'|'-') term)*`, `term := factor (('*'|'/')
//! factor)*`, `factor := ('-')* power`, `power := atom ('^' factor)?`,
//! `atom := number | ident | ident '(' expr ')' | '(' expr ')'`.

use crate::error::CoreError;
use crate::expr::Expression;
use crate::token::{BinaryOp, Token, UnaryOp};

#[derive(Debug, Clone, PartialEq)]
pub enum Ast {
    Num(f64),
    Var(usize),
    Neg(Box<Ast>),
    Add(Box<Ast>, Box<Ast>),
    Sub(Box<Ast>, Box<Ast>),
    Mul(Box<Ast>, Box<Ast>),
    Div(Box<Ast>, Box<Ast>),
    Pow(Box<Ast>, Box<Ast>),
    Sin(Box<Ast>),
    Cos(Box<Ast>),
    Exp(Box<Ast>),
    Log(Box<Ast>),
    Sqrt(Box<Ast>),
}

impl Ast {
    /// Direct (unprotected) evaluation; benchmark formulas are finite on
    /// their sampling domains.
    pub fn eval(&self, row: &[f64]) -> f64 {
        match self {
            Ast::Num(v) => *v,
            Ast::Var(i) => row[*i],
            Ast::Neg(a) => -a.eval(row),
            Ast::Add(a, b) => a.eval(row) + b.eval(row),
            Ast::Sub(a, b) => a.eval(row) - b.eval(row),
            Ast::Mul(a, b) => a.eval(row) * b.eval(row),
            Ast::Div(a, b) => a.eval(row) / b.eval(row),
            Ast::Pow(a, b) => a.eval(row).powf(b.eval(row)),
            Ast::Sin(a) => a.eval(row).sin(),
            Ast::Cos(a) => a.eval(row).cos(),
            Ast::Exp(a) => a.eval(row).exp(),
            Ast::Log(a) => a.eval(row).ln(),
            Ast::Sqrt(a) => a.eval(row).sqrt(),
        }
    }

    pub fn max_var(&self) -> usize {
        match self {
            Ast::Num(_) => 0,
            Ast::Var(i) => i + 1,
            Ast::Neg(a) | Ast::Sin(a) | Ast::Cos(a) | Ast::Exp(a) | Ast::Log(a) | Ast::Sqrt(a) => {
                a.max_var()
            }
            Ast::Add(a, b) | Ast::Sub(a, b) | Ast::Mul(a, b) | Ast::Div(a, b) | Ast::Pow(a, b) => {
                a.max_var().max(b.max_var())
            }
        }
    }

    /// Lower to a library expression. Small positive-integer powers expand
    /// to products; other `^` uses and `sqrt` fail, being outside the search
    /// token set. Numeric literals become constant placeholders with their
    /// values; a lone negation becomes `0 - e`.
    pub fn to_expression(&self) -> Result<Expression, CoreError> {
        let mut traversal = Vec::new();
        let mut constants = Vec::new();
        self.lower(&mut traversal, &mut constants)?;
        Expression::new(traversal, constants)
    }

    fn lower(&self, tr: &mut Vec<Token>, consts: &mut Vec<f64>) -> Result<(), CoreError> {
        let bin = |op: BinaryOp,
                   a: &Ast,
                   b: &Ast,
                   tr: &mut Vec<Token>,
                   consts: &mut Vec<f64>|
         -> Result<(), CoreError> {
            tr.push(Token::Binary(op));
            a.lower(tr, consts)?;
            b.lower(tr, consts)
        };
        match self {
            Ast::Num(v) => {
                tr.push(Token::Const);
                consts.push(*v);
                Ok(())
            }
            Ast::Var(i) => {
                tr.push(Token::Variable(*i));
                Ok(())
            }
            Ast::Neg(a) => {
                if let Ast::Num(v) = **a {
                    tr.push(Token::Const);
                    consts.push(-v);
                    Ok(())
                } else {
                    tr.push(Token::Binary(BinaryOp::Sub));
                    tr.push(Token::Const);
                    consts.push(0.0);
                    a.lower(tr, consts)
                }
            }
            Ast::Add(a, b) => bin(BinaryOp::Add, a, b, tr, consts),
            Ast::Sub(a, b) => bin(BinaryOp::Sub, a, b, tr, consts),
            Ast::Mul(a, b) => bin(BinaryOp::Mul, a, b, tr, consts),
            Ast::Div(a, b) => bin(BinaryOp::Div, a, b, tr, consts),
            Ast::Pow(base, exp) => {
                let k = match **exp {
                    Ast::Num(v) if v.fract() == 0.0 && (1.0..=16.0).contains(&v) => v as usize,
                    _ => {
                        return Err(CoreError::Format(
                            "`^` is outside the search library; only small positive integer \
                             exponents can be expanded as products"
                                .into(),
                        ))
                    }
                };
                for _ in 0..k - 1 {
                    tr.push(Token::Binary(BinaryOp::Mul));
                    base.lower(tr, consts)?;
                }
                base.lower(tr, consts)
            }
            Ast::Sqrt(_) => Err(CoreError::Format("`sqrt` is outside the search library".into())),
            Ast::Sin(a) => {
                tr.push(Token::Unary(UnaryOp::Sin));
                a.lower(tr, consts)
            }
            Ast::Cos(a) => {
                tr.push(Token::Unary(UnaryOp::Cos));
                a.lower(tr, consts)
            }
            Ast::Exp(a) => {
                tr.push(Token::Unary(UnaryOp::Exp));
                a.lower(tr, consts)
            }
            Ast::Log(a) => {
                tr.push(Token::Unary(UnaryOp::Log));
                a.lower(tr, consts)
            }
        }
    }
}

pub fn parse(text: &str) -> Result<Ast, CoreError> {
    let mut p = Parser { text: text.as_bytes(), pos: 0 };
    let ast = p.expr()?;
    p.skip_ws();
    if p.pos != p.text.len() {
        return Err(p.error("unexpected trailing input"));
    }
    Ok(ast)
}

struct Parser<'a> {
    text: &'a [u8],
    pos: usize,
}

impl Parser<'_> {
    fn error(&self, msg: &str) -> CoreError {
        CoreError::Parse { pos: self.pos, msg: msg.to_string() }
    }

    fn skip_ws(&mut self) {
        while self.pos < self.text.len() && self.text[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.text.get(self.pos).copied()
    }

    fn eat(&mut self, c: u8) -> bool {
        if self.peek() == Some(c) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expr(&mut self) -> Result<Ast, CoreError> {
        let mut lhs = self.term()?;
        loop {
            if self.eat(b'+') {
                lhs = Ast::Add(Box::new(lhs), Box::new(self.term()?));
            } else if self.eat(b'-') {
                lhs = Ast::Sub(Box::new(lhs), Box::new(self.term()?));
            } else {
                return Ok(lhs);
            }
        }
    }

    fn term(&mut self) -> Result<Ast, CoreError> {
        let mut lhs = self.factor()?;
        loop {
            if self.eat(b'*') {
                lhs = Ast::Mul(Box::new(lhs), Box::new(self.factor()?));
            } else if self.eat(b'/') {
                lhs = Ast::Div(Box::new(lhs), Box::new(self.factor()?));
            } else {
                return Ok(lhs);
            }
        }
    }

    fn factor(&mut self) -> Result<Ast, CoreError> {
        if self.eat(b'-') {
            return Ok(Ast::Neg(Box::new(self.factor()?)));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Ast, CoreError> {
        let base = self.atom()?;
        if self.eat(b'^') {
            let exp = self.factor()?;
            return Ok(Ast::Pow(Box::new(base), Box::new(exp)));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Ast, CoreError> {
        match self.peek() {
            Some(b'(') => {
                self.pos += 1;
                let inner = self.expr()?;
                if !self.eat(b')') {
                    return Err(self.error("expected `)`"));
                }
                Ok(inner)
            }
            Some(c) if c.is_ascii_digit() || c == b'.' => self.number(),
            Some(c) if c.is_ascii_alphabetic() => self.ident(),
            _ => Err(self.error("expected a number, name, or `(`")),
        }
    }

    fn number(&mut self) -> Result<Ast, CoreError> {
        self.skip_ws();
        let start = self.pos;
        while self.pos < self.text.len()
            && (self.text[self.pos].is_ascii_digit() || self.text[self.pos] == b'.')
        {
            self.pos += 1;
        }
        let s = std::str::from_utf8(&self.text[start..self.pos]).unwrap();
        s.parse::<f64>().map(Ast::Num).map_err(|_| self.error("bad number"))
    }

    fn ident(&mut self) -> Result<Ast, CoreError> {
        self.skip_ws();
        let start = self.pos;
        while self.pos < self.text.len()
            && (self.text[self.pos].is_ascii_alphanumeric() || self.text[self.pos] == b'_')
        {
            self.pos += 1;
        }
        let name = std::str::from_utf8(&self.text[start..self.pos]).unwrap().to_string();
        if self.eat(b'(') {
            let arg = Box::new(self.expr()?);
            if !self.eat(b')') {
                return Err(self.error("expected `)`"));
            }
            return match name.as_str() {
                "sin" => Ok(Ast::Sin(arg)),
                "cos" => Ok(Ast::Cos(arg)),
                "exp" => Ok(Ast::Exp(arg)),
                "log" | "ln" => Ok(Ast::Log(arg)),
                "sqrt" => Ok(Ast::Sqrt(arg)),
                _ => Err(CoreError::Parse { pos: start, msg: format!("unknown function `{name}`") }),
            };
        }
        match name.as_str() {
            "x" => Ok(Ast::Var(0)),
            "y" => Ok(Ast::Var(1)),
            _ => {
                if let Some(idx) = name
                    .strip_prefix('x')
                    .and_then(|s| s.parse::<usize>().ok())
                    .filter(|&i| i >= 1)
                {
                    Ok(Ast::Var(idx - 1))
                } else {
                    Err(CoreError::Parse { pos: start, msg: format!("unknown name `{name}`") })
                }
            }
        }
    }
}
