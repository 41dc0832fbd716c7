//! Tokens and token libraries.
//!
//! A token is one symbol in the expression vocabulary: a binary or unary
//! operator, an input variable, or the constant placeholder whose numeric
//! value is fitted later by the inner optimization loop. A [`Library`] is the
//! ordered vocabulary the sampler draws from; token order defines the index
//! space of the policy's categorical output.

use std::fmt;

use crate::error::CoreError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum UnaryOp {
    Sin,
    Cos,
    Exp,
    Log,
}

impl UnaryOp {
    pub fn is_trig(self) -> bool {
        matches!(self, UnaryOp::Sin | UnaryOp::Cos)
    }

    /// The operator this one inverts, if any (`log`/`exp`).
    pub fn inverse(self) -> Option<UnaryOp> {
        match self {
            UnaryOp::Exp => Some(UnaryOp::Log),
            UnaryOp::Log => Some(UnaryOp::Exp),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Token {
    Binary(BinaryOp),
    Unary(UnaryOp),
    /// Input variable by column index into the dataset.
    Variable(usize),
    /// Placeholder constant; its value lives in `Expression::constants`.
    Const,
}

impl Token {
    pub fn arity(self) -> usize {
        match self {
            Token::Binary(_) => 2,
            Token::Unary(_) => 1,
            Token::Variable(_) | Token::Const => 0,
        }
    }

    pub fn is_terminal(self) -> bool {
        self.arity() == 0
    }

    pub fn is_trig(self) -> bool {
        matches!(self, Token::Unary(u) if u.is_trig())
    }

    /// Canonical symbol. Variables are `x1`, `x2`, ...
    pub fn symbol(self) -> String {
        match self {
            Token::Binary(BinaryOp::Add) => "add".into(),
            Token::Binary(BinaryOp::Sub) => "sub".into(),
            Token::Binary(BinaryOp::Mul) => "mul".into(),
            Token::Binary(BinaryOp::Div) => "div".into(),
            Token::Unary(UnaryOp::Sin) => "sin".into(),
            Token::Unary(UnaryOp::Cos) => "cos".into(),
            Token::Unary(UnaryOp::Exp) => "exp".into(),
            Token::Unary(UnaryOp::Log) => "log".into(),
            Token::Variable(i) => format!("x{}", i + 1),
            Token::Const => "const".into(),
        }
    }

    /// Parse a symbol. Accepts `x`/`y` as aliases for `x1`/`x2`.
    pub fn parse(sym: &str) -> Result<Token, CoreError> {
        let tok = match sym {
            "add" | "+" => Token::Binary(BinaryOp::Add),
            "sub" | "-" => Token::Binary(BinaryOp::Sub),
            "mul" | "*" => Token::Binary(BinaryOp::Mul),
            "div" | "/" => Token::Binary(BinaryOp::Div),
            "sin" => Token::Unary(UnaryOp::Sin),
            "cos" => Token::Unary(UnaryOp::Cos),
            "exp" => Token::Unary(UnaryOp::Exp),
            "log" => Token::Unary(UnaryOp::Log),
            "const" | "c" => Token::Const,
            "x" => Token::Variable(0),
            "y" => Token::Variable(1),
            _ => {
                let idx = sym
                    .strip_prefix('x')
                    .and_then(|s| s.parse::<usize>().ok())
                    .filter(|&i| i >= 1);
                match idx {
                    Some(i) => Token::Variable(i - 1),
                    None => return Err(CoreError::UnknownToken(sym.to_string())),
                }
            }
        };
        Ok(tok)
    }
}

impl fmt::Display for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.symbol())
    }
}

/// Ordered vocabulary of tokens. The position of a token in `tokens` is its
/// index in the policy's categorical distribution.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Library {
    tokens: Vec<Token>,
}

impl Library {
    pub fn new(tokens: Vec<Token>) -> Result<Library, CoreError> {
        if !tokens.iter().any(|t| t.is_terminal()) {
            return Err(CoreError::NoTerminal);
        }
        for (i, a) in tokens.iter().enumerate() {
            if tokens[i + 1..].contains(a) {
                return Err(CoreError::DuplicateToken(a.symbol()));
            }
        }
        Ok(Library { tokens })
    }

    /// The default operator set plus `n_vars` input variables and,
    /// optionally, the constant placeholder.
    pub fn standard(n_vars: usize, with_const: bool) -> Library {
        let mut tokens = vec![
            Token::Binary(BinaryOp::Add),
            Token::Binary(BinaryOp::Sub),
            Token::Binary(BinaryOp::Mul),
            Token::Binary(BinaryOp::Div),
            Token::Unary(UnaryOp::Sin),
            Token::Unary(UnaryOp::Cos),
            Token::Unary(UnaryOp::Exp),
            Token::Unary(UnaryOp::Log),
        ];
        for i in 0..n_vars {
            tokens.push(Token::Variable(i));
        }
        if with_const {
            tokens.push(Token::Const);
        }
        Library { tokens }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[Token] {
        &self.tokens
    }

    pub fn get(&self, idx: usize) -> Token {
        self.tokens[idx]
    }

    pub fn index_of(&self, tok: Token) -> Option<usize> {
        self.tokens.iter().position(|&t| t == tok)
    }

    pub fn by_symbol(&self, sym: &str) -> Option<usize> {
        let tok = Token::parse(sym).ok()?;
        self.index_of(tok)
    }

    /// Index of the first input variable; used to pad out overlong
    /// traversals when the length constraint is disabled.
    pub fn first_variable(&self) -> Option<usize> {
        self.tokens
            .iter()
            .position(|t| matches!(t, Token::Variable(_)))
    }

    /// Number of distinct input variables referenced by the library.
    pub fn n_vars(&self) -> usize {
        self.tokens
            .iter()
            .filter_map(|t| match t {
                Token::Variable(i) => Some(i + 1),
                _ => None,
            })
            .max()
            .unwrap_or(0)
    }

    pub fn has_const(&self) -> bool {
        self.tokens.contains(&Token::Const)
    }
}
