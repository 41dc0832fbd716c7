//! Outer training loop: sample a batch, fit constants, compute squashed
//! rewards, keep the top-epsilon fraction, take a baseline-adjusted policy
//! gradient step, and track the best expression found so far.

use rayon::prelude::*;

use crate::constopt::optimize_constants;
use crate::dataset::Dataset;
use crate::error::CoreError;
use crate::expr::Expression;
use crate::policy::{
    self, apply_update, mix_seed, policy_gradients, AdamState, InputMode, PolicyParams,
    DEFAULT_HIDDEN,
};
use crate::sampler::ConstraintSet;
use crate::token::Library;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizerKind {
    /// Literal gradient ascent, `theta <- theta + alpha * g`.
    Sgd,
    /// Adaptive switch; off in the reference configuration.
    Adam,
}

impl OptimizerKind {
    pub fn as_str(self) -> &'static str {
        match self {
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::Adam => "adam",
        }
    }

    pub fn parse(s: &str) -> Result<OptimizerKind, CoreError> {
        match s {
            "sgd" => Ok(OptimizerKind::Sgd),
            "adam" => Ok(OptimizerKind::Adam),
            _ => Err(CoreError::Format(format!("unknown optimizer `{s}`"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    /// Learning rate (alpha).
    pub learning_rate: f64,
    /// Moving-average coefficient for the reward baseline (beta).
    pub baseline_coeff: f64,
    /// Complexity penalty coefficient (lambda_C).
    pub complexity_coeff: f64,
    /// Entropy bonus coefficient (lambda_H).
    pub entropy_coeff: f64,
    /// Risk factor (epsilon): fraction of the batch kept for the update.
    pub risk_factor: f64,
    pub batch_size: usize,
    pub iterations: usize,
    pub seed: u64,
    pub hidden: usize,
    pub constraints: ConstraintSet,
    pub input_mode: InputMode,
    pub optimizer: OptimizerKind,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.0003,
            baseline_coeff: 0.5,
            complexity_coeff: 0.0,
            entropy_coeff: 0.08,
            risk_factor: 0.1,
            batch_size: 1000,
            iterations: 1000,
            seed: 0,
            hidden: DEFAULT_HIDDEN,
            constraints: ConstraintSet::default(),
            input_mode: InputMode::ParentSibling,
            optimizer: OptimizerKind::Sgd,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), CoreError> {
        if !(self.risk_factor > 0.0 && self.risk_factor <= 1.0) {
            return Err(CoreError::Format("risk factor must be in (0, 1]".into()));
        }
        if !(0.0..=1.0).contains(&self.baseline_coeff) {
            return Err(CoreError::Format("baseline coefficient must be in [0, 1]".into()));
        }
        if self.batch_size == 0 {
            return Err(CoreError::Format("batch size must be >= 1".into()));
        }
        Ok(())
    }
}

/// Root-mean-square error normalized by the population standard deviation
/// of the targets.
pub fn nrmse(y: &[f64], yhat: &[f64]) -> Result<f64, CoreError> {
    if y.len() != yhat.len() || y.len() < 2 {
        return Err(CoreError::DatasetTooSmall(y.len().min(yhat.len())));
    }
    let n = y.len() as f64;
    let mean = y.iter().sum::<f64>() / n;
    let sigma = (y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    if sigma == 0.0 {
        return Err(CoreError::ConstantTargets);
    }
    Ok(nrmse_with_sigma(y, yhat, sigma))
}

fn nrmse_with_sigma(y: &[f64], yhat: &[f64], sigma: f64) -> f64 {
    let n = y.len() as f64;
    let rmse = (y.iter().zip(yhat).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / n).sqrt();
    rmse / sigma
}

/// Squashed reward `1/(1 + NRMSE)` minus the complexity penalty.
pub fn reward(expr: &Expression, data: &Dataset, lambda_c: f64) -> Result<f64, CoreError> {
    let yhat = expr.eval_rows(data.x())?;
    let e = nrmse(data.y(), &yhat)?;
    Ok(squash(e) - lambda_c * expr.complexity() as f64)
}

pub fn squash(nrmse: f64) -> f64 {
    1.0 / (1.0 + nrmse)
}

/// Risk-seeking filter: keep the top `epsilon` fraction of the batch.
/// The threshold is the nearest-rank (1 - epsilon) percentile, i.e. the
/// `ceil(epsilon * n)`-th largest reward; ties at the threshold are kept.
pub fn risk_filter(rewards: &[f64], epsilon: f64) -> (f64, Vec<usize>) {
    assert!(!rewards.is_empty());
    let n = rewards.len();
    let k = ((epsilon * n as f64).ceil() as usize).clamp(1, n);
    let mut sorted: Vec<f64> = rewards.to_vec();
    sorted.sort_by(|a, b| b.partial_cmp(a).unwrap_or(std::cmp::Ordering::Equal));
    let threshold = sorted[k - 1];
    let selected: Vec<usize> = (0..n).filter(|&i| rewards[i] >= threshold).collect();
    (threshold, selected)
}

/// Exponentially-weighted moving-average baseline update.
pub fn update_baseline(b: f64, selected_rewards: &[f64], beta: f64) -> f64 {
    assert!(!selected_rewards.is_empty());
    let mean = selected_rewards.iter().sum::<f64>() / selected_rewards.len() as f64;
    beta * mean + (1.0 - beta) * b
}

#[derive(Debug, Clone)]
pub struct IterationRecord {
    pub iteration: usize,
    /// Best-so-far unpenalized squashed reward.
    pub best_reward: f64,
    /// Mean penalized reward over the full batch.
    pub mean_reward: f64,
    /// Risk threshold R_epsilon of this batch.
    pub threshold: f64,
    pub baseline: f64,
    pub best_expr: String,
}

#[derive(Debug, Clone)]
pub struct TrainResult {
    pub best: Option<(Expression, f64)>,
    pub history: Vec<IterationRecord>,
    pub params: PolicyParams,
    /// Total expressions evaluated (for budget accounting).
    pub evaluated: usize,
}

pub fn train(config: &TrainConfig, lib: &Library, data: &Dataset) -> Result<TrainResult, CoreError> {
    train_with(config, lib, data, |_, _, _| false)
}

/// Run the training loop; `stop` is consulted whenever the best expression
/// improves (arguments: iteration, best expression, its reward) and may end
/// the run early.
pub fn train_with<F>(
    config: &TrainConfig,
    lib: &Library,
    data: &Dataset,
    mut stop: F,
) -> Result<TrainResult, CoreError>
where
    F: FnMut(usize, &Expression, f64) -> bool,
{
    config.validate()?;
    if data.y_std() == 0.0 {
        return Err(CoreError::ConstantTargets);
    }
    if lib.n_vars() > data.dims() {
        return Err(CoreError::VariableOutOfRange { index: lib.n_vars() - 1, dims: data.dims() });
    }

    let sigma = data.y_std();
    let mut params =
        PolicyParams::init(lib.len(), config.hidden, config.input_mode, config.seed);
    let mut adam = AdamState::new(&params);
    let mut baseline = 0.0f64;
    let mut best: Option<(Expression, f64)> = None;
    let mut history = Vec::with_capacity(config.iterations);
    let mut evaluated = 0usize;

    for iteration in 0..config.iterations {
        let batch_seed = mix_seed(config.seed, 1 + iteration as u64);
        let sampled = policy::sample_batch(
            &params,
            lib,
            &config.constraints,
            config.batch_size,
            batch_seed,
        );
        evaluated += sampled.len();

        // Inner loop: constant fitting, then penalized reward. Parallel per
        // sample; order is preserved by index so runs are deterministic.
        let scored: Vec<(Expression, crate::sampler::SampleRecord, f64, f64)> = sampled
            .into_par_iter()
            .map(|(expr, record)| {
                let (fitted, _) = optimize_constants(&expr, data);
                let raw = match fitted.eval_rows(data.x()) {
                    Ok(yhat) => squash(nrmse_with_sigma(data.y(), &yhat, sigma)),
                    Err(_) => 0.0,
                };
                let penalized = raw - config.complexity_coeff * fitted.complexity() as f64;
                (fitted, record, raw, penalized)
            })
            .collect();

        let penalized: Vec<f64> = scored.iter().map(|s| s.3).collect();
        let (threshold, selected) = risk_filter(&penalized, config.risk_factor);

        // Best-expression update uses the unpenalized squashed reward.
        let mut improved: Option<(Expression, f64)> = None;
        for (expr, _, raw, _) in &scored {
            let current = best.as_ref().map(|(_, r)| *r).unwrap_or(f64::NEG_INFINITY);
            if *raw > current {
                best = Some((expr.clone(), *raw));
                improved = Some((expr.clone(), *raw));
            }
        }

        let records: Vec<crate::sampler::SampleRecord> =
            selected.iter().map(|&i| scored[i].1.clone()).collect();
        let advantages: Vec<f64> =
            selected.iter().map(|&i| penalized[i] - baseline).collect();
        let grad = policy_gradients(&params, &records, &advantages, config.entropy_coeff);
        match config.optimizer {
            OptimizerKind::Sgd => apply_update(&mut params, &grad, config.learning_rate),
            OptimizerKind::Adam => adam.apply(&mut params, &grad, config.learning_rate),
        }

        let selected_rewards: Vec<f64> = selected.iter().map(|&i| penalized[i]).collect();
        baseline = update_baseline(baseline, &selected_rewards, config.baseline_coeff);

        let (best_reward, best_expr) = best
            .as_ref()
            .map(|(e, r)| (*r, e.serialize()))
            .unwrap_or((f64::NEG_INFINITY, String::new()));
        history.push(IterationRecord {
            iteration,
            best_reward,
            mean_reward: penalized.iter().sum::<f64>() / penalized.len() as f64,
            threshold,
            baseline,
            best_expr,
        });

        if let Some((expr, r)) = improved {
            if stop(iteration, &expr, r) {
                break;
            }
        }
    }

    Ok(TrainResult { best, history, params, evaluated })
}
