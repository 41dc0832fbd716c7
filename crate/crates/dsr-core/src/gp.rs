//! Genetic-programming baseline: full-method initialization, deterministic
//! tournament selection, subtree crossover and subtree mutation, NRMSE
//! fitness with the shared constant optimizer. No elitism in the population;
//! the best-ever individual is tracked separately for reporting only.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::constopt::optimize_constants;
use crate::dataset::Dataset;
use crate::error::CoreError;
use crate::expr::{count_constants, subtree_span, Expression};
use crate::token::{Library, Token};

#[derive(Debug, Clone)]
pub struct GpConfig {
    pub population: usize,
    pub generations: usize,
    pub tournament_size: usize,
    pub crossover_prob: f64,
    pub mutation_prob: f64,
    pub depth_min: usize,
    pub depth_max: usize,
    pub max_constants: usize,
    /// Offspring longer than this are rejected (the parent passes through);
    /// keeps late-generation bloat bounded.
    pub max_length: usize,
    pub seed: u64,
}

impl Default for GpConfig {
    fn default() -> Self {
        GpConfig {
            population: 1000,
            generations: 1000,
            tournament_size: 3,
            crossover_prob: 0.5,
            mutation_prob: 0.1,
            depth_min: 0,
            depth_max: 2,
            max_constants: 3,
            max_length: 64,
            seed: 0,
        }
    }
}

impl GpConfig {
    pub fn validate(&self) -> Result<(), CoreError> {
        if self.population == 0 || self.tournament_size == 0 {
            return Err(CoreError::Format("population and tournament size must be >= 1".into()));
        }
        if self.depth_min > self.depth_max {
            return Err(CoreError::Format("depth_min must be <= depth_max".into()));
        }
        if !(0.0..=1.0).contains(&self.crossover_prob) || !(0.0..=1.0).contains(&self.mutation_prob)
        {
            return Err(CoreError::Format("probabilities must be in [0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Individual {
    pub expr: Expression,
    /// NRMSE after constant optimization.
    pub fitness: f64,
}

/// "Full" initialization: operators at every level above `depth`, terminals
/// exactly at `depth`. Depth 0 is a single terminal.
pub fn init_full(lib: &Library, depth: usize, rng: &mut impl Rng) -> Result<Expression, CoreError> {
    let operators: Vec<Token> = lib.tokens().iter().copied().filter(|t| t.arity() > 0).collect();
    let terminals: Vec<Token> = lib.tokens().iter().copied().filter(|t| t.arity() == 0).collect();
    if depth > 0 && operators.is_empty() {
        return Err(CoreError::Format("library has no operators for depth > 0".into()));
    }
    let mut traversal = Vec::new();
    full_rec(&operators, &terminals, depth, rng, &mut traversal);
    Expression::with_unit_constants(traversal)
}

fn full_rec(
    operators: &[Token],
    terminals: &[Token],
    depth: usize,
    rng: &mut impl Rng,
    out: &mut Vec<Token>,
) {
    if depth == 0 {
        out.push(terminals[rng.gen_range(0..terminals.len())]);
        return;
    }
    let op = operators[rng.gen_range(0..operators.len())];
    out.push(op);
    for _ in 0..op.arity() {
        full_rec(operators, terminals, depth - 1, rng, out);
    }
}

/// Full-method tree with depth drawn uniformly from the configured range,
/// resampled until the constant cap is respected.
fn init_individual(lib: &Library, config: &GpConfig, rng: &mut impl Rng) -> Expression {
    for _ in 0..200 {
        let depth = rng.gen_range(config.depth_min..=config.depth_max);
        let expr = init_full(lib, depth, rng).expect("library supports full init");
        if expr.count_constants() <= config.max_constants {
            return expr;
        }
    }
    // Constant-heavy libraries: fall back to a bare variable.
    let var = lib.get(lib.first_variable().expect("library has a variable"));
    Expression::new(vec![var], vec![]).unwrap()
}

/// Deterministic tournament: draw `k` individuals uniformly with
/// replacement, return the index of the one with the lowest NRMSE,
/// breaking ties toward the lowest population index.
pub fn tournament_select(population: &[Individual], k: usize, rng: &mut impl Rng) -> usize {
    assert!(!population.is_empty());
    let mut best: Option<usize> = None;
    for _ in 0..k {
        let i = rng.gen_range(0..population.len());
        best = Some(match best {
            None => i,
            Some(b) => {
                let (fi, fb) = (population[i].fitness, population[b].fitness);
                if fi < fb || (fi == fb && i < b) {
                    i
                } else {
                    b
                }
            }
        });
    }
    best.unwrap()
}

/// Constant values belonging to the subtree `span` of `expr`, along with
/// the count of constants preceding it.
fn const_window(expr: &Expression, span: &std::ops::Range<usize>) -> (usize, usize) {
    let before = count_constants(&expr.traversal()[..span.start]);
    let inside = count_constants(&expr.traversal()[span.clone()]);
    (before, inside)
}

/// Swap uniformly chosen subtrees between two expressions.
pub fn subtree_crossover(
    a: &Expression,
    b: &Expression,
    rng: &mut impl Rng,
) -> (Expression, Expression) {
    let ia = rng.gen_range(0..a.traversal().len());
    let ib = rng.gen_range(0..b.traversal().len());
    let (child_a, child_b) = swap_subtrees(a, b, ia, ib);
    (child_a, child_b)
}

/// Deterministic subtree swap at the given node indices; constants travel
/// with their subtrees.
pub fn swap_subtrees(
    a: &Expression,
    b: &Expression,
    ia: usize,
    ib: usize,
) -> (Expression, Expression) {
    let span_a = subtree_span(a.traversal(), ia);
    let span_b = subtree_span(b.traversal(), ib);
    let (a_before, a_inside) = const_window(a, &span_a);
    let (b_before, b_inside) = const_window(b, &span_b);

    let mut tr_a = a.traversal()[..span_a.start].to_vec();
    tr_a.extend_from_slice(&b.traversal()[span_b.clone()]);
    tr_a.extend_from_slice(&a.traversal()[span_a.end..]);
    let mut const_a = a.constants()[..a_before].to_vec();
    const_a.extend_from_slice(&b.constants()[b_before..b_before + b_inside]);
    const_a.extend_from_slice(&a.constants()[a_before + a_inside..]);

    let mut tr_b = b.traversal()[..span_b.start].to_vec();
    tr_b.extend_from_slice(&a.traversal()[span_a.clone()]);
    tr_b.extend_from_slice(&b.traversal()[span_b.end..]);
    let mut const_b = b.constants()[..b_before].to_vec();
    const_b.extend_from_slice(&a.constants()[a_before..a_before + a_inside]);
    const_b.extend_from_slice(&b.constants()[b_before + b_inside..]);

    (
        Expression::new(tr_a, const_a).expect("crossover preserves completeness"),
        Expression::new(tr_b, const_b).expect("crossover preserves completeness"),
    )
}

/// Replace a uniformly chosen subtree with a fresh full-method subtree of
/// depth in the configured range. Resamples if the result would exceed the
/// constant cap.
pub fn subtree_mutation(
    a: &Expression,
    lib: &Library,
    config: &GpConfig,
    rng: &mut impl Rng,
) -> Expression {
    for _ in 0..200 {
        let i = rng.gen_range(0..a.traversal().len());
        let span = subtree_span(a.traversal(), i);
        let depth = rng.gen_range(config.depth_min..=config.depth_max);
        let replacement = init_full(lib, depth, rng).expect("library supports full init");
        let (before, inside) = const_window(a, &span);

        let mut tr = a.traversal()[..span.start].to_vec();
        tr.extend_from_slice(replacement.traversal());
        tr.extend_from_slice(&a.traversal()[span.end..]);
        if count_constants(&tr) > config.max_constants {
            continue;
        }
        let mut consts = a.constants()[..before].to_vec();
        consts.extend_from_slice(replacement.constants());
        consts.extend_from_slice(&a.constants()[before + inside..]);
        return Expression::new(tr, consts).expect("mutation preserves completeness");
    }
    a.clone()
}

#[derive(Debug, Clone)]
pub struct GenerationRecord {
    pub generation: usize,
    /// Best-ever NRMSE (non-increasing).
    pub best_nrmse: f64,
    /// Best-ever squashed reward, for curves comparable with the trainer.
    pub best_reward: f64,
    pub mean_nrmse: f64,
    pub best_expr: String,
}

#[derive(Debug, Clone)]
pub struct GpResult {
    pub best: Option<(Expression, f64)>,
    pub history: Vec<GenerationRecord>,
    pub evaluated: usize,
}

fn evaluate(expr: &Expression, data: &Dataset, sigma: f64) -> (Expression, f64) {
    let (fitted, _) = optimize_constants(expr, data);
    let fitness = match fitted.eval_rows(data.x()) {
        Ok(yhat) => {
            let n = data.len() as f64;
            let rmse =
                (data.y().iter().zip(&yhat).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / n).sqrt();
            let v = rmse / sigma;
            if v.is_finite() {
                v
            } else {
                f64::MAX
            }
        }
        Err(_) => f64::MAX,
    };
    (fitted, fitness)
}

pub fn gp_train(config: &GpConfig, lib: &Library, data: &Dataset) -> Result<GpResult, CoreError> {
    gp_train_with(config, lib, data, |_, _, _| false)
}

/// Generational loop; `stop` is consulted when the best-ever individual
/// improves and may end the run early.
pub fn gp_train_with<F>(
    config: &GpConfig,
    lib: &Library,
    data: &Dataset,
    mut stop: F,
) -> Result<GpResult, CoreError>
where
    F: FnMut(usize, &Expression, f64) -> bool,
{
    config.validate()?;
    if data.y_std() == 0.0 {
        return Err(CoreError::ConstantTargets);
    }
    let sigma = data.y_std();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut evaluated = 0usize;

    let exprs: Vec<Expression> =
        (0..config.population).map(|_| init_individual(lib, config, &mut rng)).collect();
    let mut population = eval_population(exprs, data, sigma);
    evaluated += population.len();

    let mut best: Option<(Expression, f64)> = None;
    let mut history = Vec::new();
    let mut stop_now = false;
    track_best(&population, &mut best, &mut |e, f| stop_now = stop(0, e, f));
    push_record(&mut history, 0, &population, &best);

    for generation in 1..=config.generations {
        if stop_now {
            break;
        }
        // Selection, then variation: crossover on consecutive pairs, then
        // mutation, each with its own probability.
        let mut offspring: Vec<Expression> = (0..config.population)
            .map(|_| population[tournament_select(&population, config.tournament_size, &mut rng)]
                .expr
                .clone())
            .collect();
        for pair in 0..config.population / 2 {
            if rng.gen::<f64>() < config.crossover_prob {
                let (a, b) = (offspring[2 * pair].clone(), offspring[2 * pair + 1].clone());
                let (ca, cb) = subtree_crossover(&a, &b, &mut rng);
                if ca.traversal().len() <= config.max_length
                    && ca.count_constants() <= config.max_constants
                {
                    offspring[2 * pair] = ca;
                }
                if cb.traversal().len() <= config.max_length
                    && cb.count_constants() <= config.max_constants
                {
                    offspring[2 * pair + 1] = cb;
                }
            }
        }
        for child in &mut offspring {
            if rng.gen::<f64>() < config.mutation_prob {
                let mutated = subtree_mutation(child, lib, config, &mut rng);
                if mutated.traversal().len() <= config.max_length {
                    *child = mutated;
                }
            }
        }

        population = eval_population(offspring, data, sigma);
        evaluated += population.len();
        track_best(&population, &mut best, &mut |e, f| {
            stop_now = stop(generation, e, f)
        });
        push_record(&mut history, generation, &population, &best);
    }

    Ok(GpResult { best, history, evaluated })
}

fn eval_population(exprs: Vec<Expression>, data: &Dataset, sigma: f64) -> Vec<Individual> {
    exprs
        .into_par_iter()
        .map(|e| {
            let (fitted, fitness) = evaluate(&e, data, sigma);
            Individual { expr: fitted, fitness }
        })
        .collect()
}

fn track_best(
    population: &[Individual],
    best: &mut Option<(Expression, f64)>,
    on_improve: &mut impl FnMut(&Expression, f64),
) {
    for ind in population {
        let current = best.as_ref().map(|(_, f)| *f).unwrap_or(f64::INFINITY);
        if ind.fitness < current {
            *best = Some((ind.expr.clone(), ind.fitness));
            on_improve(&ind.expr, ind.fitness);
        }
    }
}

fn push_record(
    history: &mut Vec<GenerationRecord>,
    generation: usize,
    population: &[Individual],
    best: &Option<(Expression, f64)>,
) {
    let (best_nrmse, best_expr) = best
        .as_ref()
        .map(|(e, f)| (*f, e.serialize()))
        .unwrap_or((f64::INFINITY, String::new()));
    let mean_nrmse =
        population.iter().map(|i| i.fitness).sum::<f64>() / population.len() as f64;
    history.push(GenerationRecord {
        generation,
        best_nrmse,
        best_reward: 1.0 / (1.0 + best_nrmse),
        mean_nrmse,
        best_expr,
    });
}
