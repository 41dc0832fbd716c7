//! Constraint-masked autoregressive sampling of expression traversals.
//!
//! Tokens are drawn one at a time from a policy-supplied categorical
//! distribution. Before each draw, the probabilities of tokens that would
//! violate an enabled constraint are zeroed and the remainder renormalized,
//! so every sample satisfies all constraints by construction. The masked,
//! renormalized per-step distributions are recorded so likelihoods and
//! gradients can be recomputed exactly.

use rand::Rng;

use crate::error::CoreError;
use crate::expr::{completeness_counter, count_constants, Expression};
use crate::token::{Library, Token};

/// Search-space constraints with per-rule toggles for the ablation studies.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintSet {
    pub min_length: usize,
    pub max_length: usize,
    /// Enforce the min/max length bounds in situ. When off, traversals that
    /// hit `max_length` are padded with the first input variable.
    pub length_enabled: bool,
    /// Children of an operator should not all be constants.
    pub forbid_all_const_children: bool,
    /// The child of a unary operator should not be its inverse.
    pub forbid_inverse_unary: bool,
    /// Descendants of trigonometric operators should not be trigonometric.
    pub forbid_nested_trig: bool,
    pub max_constants: usize,
}

impl Default for ConstraintSet {
    fn default() -> Self {
        ConstraintSet {
            min_length: 2,
            max_length: 30,
            length_enabled: true,
            forbid_all_const_children: true,
            forbid_inverse_unary: true,
            forbid_nested_trig: true,
            max_constants: 3,
        }
    }
}

impl ConstraintSet {
    /// The "all constraints" ablation: length, inverse, and trig rules off.
    pub fn ablated(&self) -> ConstraintSet {
        ConstraintSet {
            length_enabled: false,
            forbid_inverse_unary: false,
            forbid_nested_trig: false,
            ..self.clone()
        }
    }
}

/// Parent and sibling of the next token to be sampled, given a nonempty,
/// incomplete partial traversal. If the last token is an operator it is the
/// parent and there is no sibling; otherwise iterate backward until the
/// running counter of unselected children hits zero.
pub fn parent_sibling(partial: &[Token]) -> Result<(Token, Option<Token>), CoreError> {
    if partial.is_empty() {
        return Err(CoreError::EmptyTraversal);
    }
    let last = partial[partial.len() - 1];
    if last.arity() > 0 {
        return Ok((last, None));
    }
    let mut counter: isize = 0;
    for i in (0..partial.len()).rev() {
        counter += partial[i].arity() as isize - 1;
        if counter == 0 {
            return Ok((partial[i], Some(partial[i + 1])));
        }
    }
    // Complete traversals have no next token.
    Err(CoreError::TrailingToken(partial.len()))
}

/// Tokens on the ancestor path of the next position, root first. Computed by
/// replaying the partial traversal against a stack of open operator slots.
pub fn open_ancestors(partial: &[Token]) -> Vec<Token> {
    let mut stack: Vec<(Token, usize)> = Vec::new();
    for &tok in partial {
        if let Some(top) = stack.last_mut() {
            top.1 -= 1;
        }
        if tok.arity() > 0 {
            stack.push((tok, tok.arity()));
        } else {
            while matches!(stack.last(), Some(&(_, 0))) {
                stack.pop();
            }
        }
    }
    stack.into_iter().map(|(t, _)| t).collect()
}

/// Feasibility mask for the next token of `partial` under `constraints`.
/// `mask[i]` is true iff appending library token `i` cannot violate an
/// enabled constraint.
pub fn feasible_mask(partial: &[Token], lib: &Library, cs: &ConstraintSet) -> Vec<bool> {
    let len = partial.len();
    let counter = completeness_counter(partial).expect("valid partial traversal") as isize;
    debug_assert!(counter > 0, "mask requested for a complete traversal");
    let (parent, sibling) = if partial.is_empty() {
        (None, None)
    } else {
        let (p, s) = parent_sibling(partial).expect("incomplete traversal");
        (Some(p), s)
    };
    let ancestors = if cs.forbid_nested_trig {
        open_ancestors(partial)
    } else {
        Vec::new()
    };
    let trig_ancestor = ancestors.iter().any(|t| t.is_trig());
    let n_const = count_constants(partial);

    lib.tokens()
        .iter()
        .map(|&tok| {
            let arity = tok.arity() as isize;
            if cs.length_enabled {
                // Shortest possible final length if `tok` is selected next.
                let min_final = (len as isize + 1) + (counter - 1 + arity);
                if min_final > cs.max_length as isize {
                    return false;
                }
                if arity == 0 && counter == 1 && len + 1 < cs.min_length {
                    return false;
                }
            }
            if tok == Token::Const && n_const >= cs.max_constants {
                return false;
            }
            if cs.forbid_all_const_children && tok == Token::Const {
                match parent {
                    Some(Token::Unary(_)) => return false,
                    Some(Token::Binary(_)) if sibling == Some(Token::Const) => return false,
                    _ => {}
                }
            }
            if cs.forbid_inverse_unary {
                if let (Some(Token::Unary(p)), Token::Unary(u)) = (parent, tok) {
                    if p.inverse() == Some(u) {
                        return false;
                    }
                }
            }
            if cs.forbid_nested_trig && tok.is_trig() && trig_ancestor {
                return false;
            }
            true
        })
        .collect()
}

/// Zero out infeasible tokens in `psi` and renormalize to sum 1.
///
/// Panics if every token is infeasible; the masking rules guarantee at least
/// one feasible token for any library containing an input variable.
pub fn apply_constraints(
    psi: &[f64],
    lib: &Library,
    partial: &[Token],
    cs: &ConstraintSet,
) -> (Vec<f64>, Vec<bool>) {
    let mask = feasible_mask(partial, lib, cs);
    let mut out: Vec<f64> = psi
        .iter()
        .zip(&mask)
        .map(|(&p, &m)| if m { p } else { 0.0 })
        .collect();
    let sum: f64 = out.iter().sum();
    assert!(sum > 0.0, "constraint masking left no feasible token");
    for p in &mut out {
        *p /= sum;
    }
    (out, mask)
}

/// Post hoc constraint check over a complete traversal; returns the name of
/// the first violated rule. Used to validate that in-situ masking neither
/// over- nor under-constrains.
pub fn violates_constraints(traversal: &[Token], cs: &ConstraintSet) -> Option<&'static str> {
    if cs.length_enabled
        && (traversal.len() < cs.min_length || traversal.len() > cs.max_length)
    {
        return Some("length");
    }
    if count_constants(traversal) > cs.max_constants {
        return Some("max_constants");
    }
    for (i, &tok) in traversal.iter().enumerate() {
        match tok {
            Token::Unary(op) => {
                let child = traversal[i + 1];
                if cs.forbid_all_const_children && child == Token::Const {
                    return Some("all_const_children");
                }
                if cs.forbid_inverse_unary {
                    if let Token::Unary(c) = child {
                        if op.inverse() == Some(c) {
                            return Some("inverse_unary");
                        }
                    }
                }
                if cs.forbid_nested_trig && tok.is_trig() {
                    let span = crate::expr::subtree_span(traversal, i);
                    if traversal[span.start + 1..span.end].iter().any(|t| t.is_trig()) {
                        return Some("nested_trig");
                    }
                }
            }
            Token::Binary(_) => {
                if cs.forbid_all_const_children {
                    let left = crate::expr::subtree_span(traversal, i + 1);
                    let right_root = left.end;
                    if traversal[i + 1] == Token::Const && traversal[right_root] == Token::Const {
                        return Some("all_const_children");
                    }
                }
            }
            _ => {}
        }
    }
    None
}

/// Inputs visible to the policy when emitting the next token distribution,
/// as library indices. `None` is the empty token.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StepContext {
    pub parent: Option<usize>,
    pub sibling: Option<usize>,
    pub prev: Option<usize>,
}

/// Anything that emits a probability vector over the library per step.
/// Implementations carry their own recurrent state for one rollout.
pub trait TokenPolicy {
    fn next_probs(&mut self, ctx: &StepContext) -> Vec<f64>;
}

/// Uniform distribution at every step; handy for tests and enumeration.
#[derive(Debug, Clone)]
pub struct UniformPolicy {
    pub lib_size: usize,
}

impl TokenPolicy for UniformPolicy {
    fn next_probs(&mut self, _ctx: &StepContext) -> Vec<f64> {
        vec![1.0 / self.lib_size as f64; self.lib_size]
    }
}

/// One sampling step: the context fed to the policy, the feasibility mask,
/// the masked renormalized distribution actually sampled from, and the
/// chosen token index. `forced` marks padding tokens appended when the
/// length constraint is disabled; they are not policy decisions.
#[derive(Debug, Clone)]
pub struct SampleStep {
    pub ctx: StepContext,
    pub mask: Vec<bool>,
    pub probs: Vec<f64>,
    pub chosen: usize,
    pub forced: bool,
}

#[derive(Debug, Clone, Default)]
pub struct SampleRecord {
    pub steps: Vec<SampleStep>,
}

fn categorical(probs: &[f64], rng: &mut impl Rng) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // Guard against accumulated rounding at the tail.
    probs.iter().rposition(|&p| p > 0.0).unwrap()
}

fn step_context(partial: &[Token], lib: &Library) -> StepContext {
    if partial.is_empty() {
        return StepContext { parent: None, sibling: None, prev: None };
    }
    let (p, s) = parent_sibling(partial).expect("incomplete traversal");
    StepContext {
        parent: lib.index_of(p),
        sibling: s.and_then(|t| lib.index_of(t)),
        prev: lib.index_of(partial[partial.len() - 1]),
    }
}

/// Sample one complete constrained traversal from `policy`. Constants are
/// initialized to 1.0 (unset until the inner optimizer runs).
pub fn sample_expression<P: TokenPolicy>(
    policy: &mut P,
    lib: &Library,
    cs: &ConstraintSet,
    rng: &mut impl Rng,
) -> (Expression, SampleRecord) {
    let mut partial: Vec<Token> = Vec::new();
    let mut counter = 1usize;
    let mut record = SampleRecord::default();

    while counter > 0 {
        if !cs.length_enabled && partial.len() >= cs.max_length {
            // Pad with the first input variable until complete.
            let var = lib.first_variable().expect("library has an input variable");
            let mut probs = vec![0.0; lib.len()];
            probs[var] = 1.0;
            let mut mask = vec![false; lib.len()];
            mask[var] = true;
            record.steps.push(SampleStep {
                ctx: step_context(&partial, lib),
                mask,
                probs,
                chosen: var,
                forced: true,
            });
            partial.push(lib.get(var));
            counter -= 1;
            continue;
        }
        let ctx = step_context(&partial, lib);
        let raw = policy.next_probs(&ctx);
        debug_assert_eq!(raw.len(), lib.len());
        let (probs, mask) = apply_constraints(&raw, lib, &partial, cs);
        let chosen = categorical(&probs, rng);
        let tok = lib.get(chosen);
        counter = counter + tok.arity() - 1;
        partial.push(tok);
        record.steps.push(SampleStep { ctx, mask, probs, chosen, forced: false });
    }

    let expr = Expression::with_unit_constants(partial).expect("sampled traversal is complete");
    (expr, record)
}

/// Exhaustively enumerate every complete constrained traversal reachable
/// from `policy`, with its exact probability. Only tractable for small
/// libraries and length bounds; used by normalization and soundness tests.
pub fn enumerate_expressions<P: TokenPolicy + Clone>(
    policy: &P,
    lib: &Library,
    cs: &ConstraintSet,
) -> Vec<(Vec<Token>, f64)> {
    let mut out = Vec::new();
    let mut partial = Vec::new();
    enumerate_rec(policy.clone(), lib, cs, &mut partial, 1.0, &mut out);
    out
}

fn enumerate_rec<P: TokenPolicy + Clone>(
    mut policy: P,
    lib: &Library,
    cs: &ConstraintSet,
    partial: &mut Vec<Token>,
    prob: f64,
    out: &mut Vec<(Vec<Token>, f64)>,
) {
    let ctx = step_context(partial, lib);
    let raw = policy.next_probs(&ctx);
    let (probs, _) = apply_constraints(&raw, lib, partial, cs);
    for (i, &p) in probs.iter().enumerate() {
        if p == 0.0 {
            continue;
        }
        let tok = lib.get(i);
        partial.push(tok);
        let counter = completeness_counter(partial).unwrap();
        if counter == 0 {
            out.push((partial.clone(), prob * p));
        } else {
            enumerate_rec(policy.clone(), lib, cs, partial, prob * p, out);
        }
        partial.pop();
    }
}
