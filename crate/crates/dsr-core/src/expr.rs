//! Expressions as pre-order traversals with protected evaluation.
//!
//! An expression is stored as the pre-order traversal of its tree plus one
//! fitted value per constant placeholder, in traversal order. Because every
//! token's arity is known, the traversal uniquely encodes the tree.
//!
//! Evaluation uses protected operator semantics so it is total over finite
//! inputs: `log` takes the absolute value of its argument, and any operation
//! whose result would be non-finite (division by ~0, `exp` overflow, `log`
//! of ~0) yields 1 instead.

use std::fmt::Write as _;

use crate::error::CoreError;
use crate::token::{BinaryOp, Token, UnaryOp};

/// Threshold below which a divisor or log argument counts as zero.
pub const PROTECT_EPS: f64 = 1e-12;
/// `exp` arguments above this would overflow f64.
pub const EXP_OVERFLOW: f64 = 700.0;

/// Running completeness counter: start at 1, add `arity - 1` per token.
/// Zero means the traversal encodes a complete tree; `k > 0` means `k`
/// nodes remain unselected. Errors if tokens follow completion.
pub fn completeness_counter(traversal: &[Token]) -> Result<usize, CoreError> {
    let mut counter = 1usize;
    for (i, tok) in traversal.iter().enumerate() {
        if counter == 0 {
            return Err(CoreError::TrailingToken(i));
        }
        counter = counter + tok.arity() - 1;
    }
    Ok(counter)
}

/// True iff `traversal` encodes exactly one complete tree.
pub fn is_complete(traversal: &[Token]) -> bool {
    matches!(completeness_counter(traversal), Ok(0))
}

/// Half-open index range of the subtree rooted at `root` within a complete
/// (or sufficiently long) traversal.
pub fn subtree_span(traversal: &[Token], root: usize) -> std::ops::Range<usize> {
    let mut need = 1usize;
    let mut end = root;
    while need > 0 {
        need = need + traversal[end].arity() - 1;
        end += 1;
    }
    root..end
}

fn protect(v: f64) -> f64 {
    if v.is_finite() {
        v
    } else {
        1.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Expression {
    traversal: Vec<Token>,
    constants: Vec<f64>,
}

impl Expression {
    /// Build from a complete traversal and matching constant vector.
    pub fn new(traversal: Vec<Token>, constants: Vec<f64>) -> Result<Expression, CoreError> {
        let counter = completeness_counter(&traversal)?;
        if counter != 0 {
            return Err(CoreError::IncompleteTraversal(counter));
        }
        let n_const = traversal.iter().filter(|t| **t == Token::Const).count();
        if constants.len() != n_const {
            return Err(CoreError::ConstantCountMismatch {
                expected: n_const,
                got: constants.len(),
            });
        }
        Ok(Expression { traversal, constants })
    }

    /// Build from a complete traversal, initializing every constant to 1.0
    /// (the inner optimizer's starting point).
    pub fn with_unit_constants(traversal: Vec<Token>) -> Result<Expression, CoreError> {
        let n = traversal.iter().filter(|t| **t == Token::Const).count();
        Expression::new(traversal, vec![1.0; n])
    }

    pub fn traversal(&self) -> &[Token] {
        &self.traversal
    }

    pub fn constants(&self) -> &[f64] {
        &self.constants
    }

    /// Replace the constant vector (positionally).
    pub fn set_constants(&mut self, constants: Vec<f64>) -> Result<(), CoreError> {
        if constants.len() != self.constants.len() {
            return Err(CoreError::ConstantCountMismatch {
                expected: self.constants.len(),
                got: constants.len(),
            });
        }
        self.constants = constants;
        Ok(())
    }

    /// Number of nodes in the tree, `|traversal|`.
    pub fn complexity(&self) -> usize {
        self.traversal.len()
    }

    pub fn count_constants(&self) -> usize {
        count_constants(&self.traversal)
    }

    /// Largest variable index used, plus one. Zero if no variables appear.
    pub fn dims_required(&self) -> usize {
        self.traversal
            .iter()
            .filter_map(|t| match t {
                Token::Variable(i) => Some(i + 1),
                _ => None,
            })
            .max()
            .unwrap_or(0)
    }

    /// Evaluate on one input row with protected semantics.
    pub fn eval_row(&self, row: &[f64]) -> Result<f64, CoreError> {
        eval_with_constants(&self.traversal, &self.constants, row)
    }

    /// Evaluate over every row of `x`.
    pub fn eval_rows(&self, x: &[Vec<f64>]) -> Result<Vec<f64>, CoreError> {
        x.iter().map(|row| self.eval_row(row)).collect()
    }

    /// Parenthesized infix rendering. Variables print as `x`, `y`, `x3`, ...
    pub fn render_infix(&self) -> String {
        let mut const_idx = 0usize;
        let mut pos = 0usize;
        let mut out = String::new();
        render_rec(&self.traversal, &self.constants, &mut pos, &mut const_idx, &mut out);
        out
    }

    /// Serialized text form: whitespace-separated pre-order symbols, then a
    /// semicolon and the constant list, e.g. `div sin mul const x1 log x2 ; 1.5`.
    pub fn serialize(&self) -> String {
        let mut s = self
            .traversal
            .iter()
            .map(|t| t.symbol())
            .collect::<Vec<_>>()
            .join(" ");
        if !self.constants.is_empty() {
            s.push_str(" ;");
            for c in &self.constants {
                write!(s, " {c}").unwrap();
            }
        }
        s
    }

    /// Parse the serialized text form.
    pub fn parse(text: &str) -> Result<Expression, CoreError> {
        let (toks, consts) = match text.split_once(';') {
            Some((t, c)) => (t, Some(c)),
            None => (text, None),
        };
        let mut traversal = Vec::new();
        for sym in toks.split_whitespace() {
            traversal.push(Token::parse(sym)?);
        }
        if traversal.is_empty() {
            return Err(CoreError::EmptyTraversal);
        }
        let constants = match consts {
            None => {
                let n = count_constants(&traversal);
                vec![1.0; n]
            }
            Some(c) => c
                .split(|ch: char| ch == ';' || ch.is_whitespace())
                .filter(|s| !s.is_empty())
                .map(|s| {
                    s.parse::<f64>().map_err(|_| CoreError::Parse {
                        pos: 0,
                        msg: format!("bad constant `{s}`"),
                    })
                })
                .collect::<Result<Vec<_>, _>>()?,
        };
        Expression::new(traversal, constants)
    }
}

/// Count constant placeholders in a (possibly partial) traversal.
pub fn count_constants(traversal: &[Token]) -> usize {
    traversal.iter().filter(|t| **t == Token::Const).count()
}

/// Protected evaluation of a complete traversal on one row, with the
/// constant values supplied separately so the optimizer can probe candidate
/// values without cloning the expression.
pub fn eval_with_constants(
    traversal: &[Token],
    constants: &[f64],
    row: &[f64],
) -> Result<f64, CoreError> {
    let mut pos = 0usize;
    let mut const_idx = 0usize;
    let v = eval_rec(traversal, constants, row, &mut pos, &mut const_idx)?;
    if pos != traversal.len() {
        return Err(CoreError::TrailingToken(pos));
    }
    Ok(v)
}

fn eval_rec(
    traversal: &[Token],
    constants: &[f64],
    row: &[f64],
    pos: &mut usize,
    const_idx: &mut usize,
) -> Result<f64, CoreError> {
    let tok = *traversal
        .get(*pos)
        .ok_or(CoreError::IncompleteTraversal(1))?;
    *pos += 1;
    let v = match tok {
        Token::Variable(i) => {
            if i >= row.len() {
                return Err(CoreError::VariableOutOfRange { index: i, dims: row.len() });
            }
            row[i]
        }
        Token::Const => {
            let c = *constants
                .get(*const_idx)
                .ok_or(CoreError::ConstantCountMismatch {
                    expected: *const_idx + 1,
                    got: constants.len(),
                })?;
            *const_idx += 1;
            c
        }
        Token::Unary(op) => {
            let a = eval_rec(traversal, constants, row, pos, const_idx)?;
            match op {
                UnaryOp::Sin => a.sin(),
                UnaryOp::Cos => a.cos(),
                UnaryOp::Exp => {
                    if a > EXP_OVERFLOW {
                        1.0
                    } else {
                        a.exp()
                    }
                }
                UnaryOp::Log => {
                    if a.abs() < PROTECT_EPS {
                        1.0
                    } else {
                        a.abs().ln()
                    }
                }
            }
        }
        Token::Binary(op) => {
            let a = eval_rec(traversal, constants, row, pos, const_idx)?;
            let b = eval_rec(traversal, constants, row, pos, const_idx)?;
            match op {
                BinaryOp::Add => protect(a + b),
                BinaryOp::Sub => protect(a - b),
                BinaryOp::Mul => protect(a * b),
                BinaryOp::Div => {
                    if b.abs() < PROTECT_EPS {
                        1.0
                    } else {
                        protect(a / b)
                    }
                }
            }
        }
    };
    Ok(v)
}

fn infix_var_name(i: usize) -> String {
    match i {
        0 => "x".into(),
        1 => "y".into(),
        _ => format!("x{}", i + 1),
    }
}

fn render_rec(
    traversal: &[Token],
    constants: &[f64],
    pos: &mut usize,
    const_idx: &mut usize,
    out: &mut String,
) {
    let tok = traversal[*pos];
    *pos += 1;
    match tok {
        Token::Variable(i) => out.push_str(&infix_var_name(i)),
        Token::Const => {
            let c = constants.get(*const_idx).copied().unwrap_or(f64::NAN);
            *const_idx += 1;
            write!(out, "{c}").unwrap();
        }
        Token::Unary(op) => {
            let name = Token::Unary(op).symbol();
            out.push_str(&name);
            out.push('(');
            render_rec(traversal, constants, pos, const_idx, out);
            out.push(')');
        }
        Token::Binary(op) => {
            let sym = match op {
                BinaryOp::Add => "+",
                BinaryOp::Sub => "-",
                BinaryOp::Mul => "*",
                BinaryOp::Div => "/",
            };
            out.push('(');
            render_rec(traversal, constants, pos, const_idx, out);
            write!(out, " {sym} ").unwrap();
            render_rec(traversal, constants, pos, const_idx, out);
            out.push(')');
        }
    }
}
