//! Single-layer LSTM policy over token traversals.
//!
//! The cell is 32 hidden units by default, followed by a softmax projection
//! shared across time steps. Inputs are concatenated one-hot encodings of
//! the parent and sibling of the position being sampled (or of the previous
//! token, under that ablation), each with a dedicated empty slot.
//!
//! Gradients are exact reverse-mode derivatives through the LSTM unroll and
//! the masked, renormalized softmax: the masked distribution is the softmax
//! of the feasible logits, so masked-out entries receive no gradient.

use std::fmt::Write as _;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::CoreError;
use crate::sampler::{SampleRecord, StepContext, TokenPolicy};
use crate::token::{Library, Token};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InputMode {
    ParentSibling,
    /// Ablation: feed the previously sampled token instead.
    PrevToken,
}

impl InputMode {
    pub fn as_str(self) -> &'static str {
        match self {
            InputMode::ParentSibling => "parent_sibling",
            InputMode::PrevToken => "prev_token",
        }
    }

    pub fn parse(s: &str) -> Result<InputMode, CoreError> {
        match s {
            "parent_sibling" => Ok(InputMode::ParentSibling),
            "prev_token" => Ok(InputMode::PrevToken),
            _ => Err(CoreError::Format(format!("unknown input mode `{s}`"))),
        }
    }
}

pub const DEFAULT_HIDDEN: usize = 32;
const INIT_SCALE: f64 = 0.08;

/// LSTM weights plus the shared softmax projection. Gate order within the
/// stacked dimension is input, forget, cell, output.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParams {
    pub lib_size: usize,
    pub hidden: usize,
    pub input_mode: InputMode,
    /// (4*hidden) x input_dim
    pub w_x: Vec<f64>,
    /// (4*hidden) x hidden
    pub w_h: Vec<f64>,
    /// 4*hidden
    pub b: Vec<f64>,
    /// lib_size x hidden
    pub w_out: Vec<f64>,
    /// lib_size
    pub b_out: Vec<f64>,
}

impl PolicyParams {
    /// Two one-hot halves of `lib_size + 1` (the extra slot is the empty
    /// token).
    pub fn input_dim(&self) -> usize {
        2 * (self.lib_size + 1)
    }

    /// Uniform init in [-0.08, 0.08], zero biases, forget-gate bias +1.
    pub fn init(lib_size: usize, hidden: usize, input_mode: InputMode, seed: u64) -> PolicyParams {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let input_dim = 2 * (lib_size + 1);
        let mut uniform = |n: usize| -> Vec<f64> {
            (0..n).map(|_| rng.gen_range(-INIT_SCALE..INIT_SCALE)).collect()
        };
        let w_x = uniform(4 * hidden * input_dim);
        let w_h = uniform(4 * hidden * hidden);
        let w_out = uniform(lib_size * hidden);
        let mut b = vec![0.0; 4 * hidden];
        for v in &mut b[hidden..2 * hidden] {
            *v = 1.0;
        }
        PolicyParams { lib_size, hidden, input_mode, w_x, w_h, b, w_out, b_out: vec![0.0; lib_size] }
    }

    pub fn param_count(&self) -> usize {
        self.w_x.len() + self.w_h.len() + self.b.len() + self.w_out.len() + self.b_out.len()
    }

    fn tensors(&self) -> [&Vec<f64>; 5] {
        [&self.w_x, &self.w_h, &self.b, &self.w_out, &self.b_out]
    }

    fn tensors_mut(&mut self) -> [&mut Vec<f64>; 5] {
        [&mut self.w_x, &mut self.w_h, &mut self.b, &mut self.w_out, &mut self.b_out]
    }

    pub fn get_flat(&self, mut idx: usize) -> f64 {
        for t in self.tensors() {
            if idx < t.len() {
                return t[idx];
            }
            idx -= t.len();
        }
        panic!("flat index out of range");
    }

    pub fn set_flat(&mut self, mut idx: usize, v: f64) {
        for t in self.tensors_mut() {
            if idx < t.len() {
                t[idx] = v;
                return;
            }
            idx -= t.len();
        }
        panic!("flat index out of range");
    }

    /// Active one-hot indices (two, one per half) for a step context.
    pub fn encode(&self, ctx: &StepContext) -> (usize, usize) {
        let l = self.lib_size;
        match self.input_mode {
            InputMode::ParentSibling => {
                (ctx.parent.unwrap_or(l), (l + 1) + ctx.sibling.unwrap_or(l))
            }
            InputMode::PrevToken => (ctx.prev.unwrap_or(l), (l + 1) + l),
        }
    }
}

/// Hidden and cell vectors; zero-initialized at the start of each rollout.
#[derive(Debug, Clone, PartialEq)]
pub struct CellState {
    pub h: Vec<f64>,
    pub c: Vec<f64>,
}

impl CellState {
    pub fn zeros(hidden: usize) -> CellState {
        CellState { h: vec![0.0; hidden], c: vec![0.0; hidden] }
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Intermediates of one LSTM step, kept for the backward pass.
#[derive(Debug, Clone)]
struct StepCache {
    ia: usize,
    ib: usize,
    h_prev: Vec<f64>,
    c_prev: Vec<f64>,
    gi: Vec<f64>,
    gf: Vec<f64>,
    gg: Vec<f64>,
    go: Vec<f64>,
    tanh_c: Vec<f64>,
    h: Vec<f64>,
    logits: Vec<f64>,
}

fn lstm_step(params: &PolicyParams, ia: usize, ib: usize, state: &CellState) -> StepCache {
    let h = params.hidden;
    let input_dim = params.input_dim();
    let mut z = params.b.clone();
    for (r, zr) in z.iter_mut().enumerate() {
        *zr += params.w_x[r * input_dim + ia] + params.w_x[r * input_dim + ib];
        let row = &params.w_h[r * h..(r + 1) * h];
        let mut acc = 0.0;
        for (w, hp) in row.iter().zip(&state.h) {
            acc += w * hp;
        }
        *zr += acc;
    }
    let gi: Vec<f64> = z[..h].iter().map(|&v| sigmoid(v)).collect();
    let gf: Vec<f64> = z[h..2 * h].iter().map(|&v| sigmoid(v)).collect();
    let gg: Vec<f64> = z[2 * h..3 * h].iter().map(|&v| v.tanh()).collect();
    let go: Vec<f64> = z[3 * h..4 * h].iter().map(|&v| sigmoid(v)).collect();
    let c: Vec<f64> = (0..h).map(|j| gf[j] * state.c[j] + gi[j] * gg[j]).collect();
    let tanh_c: Vec<f64> = c.iter().map(|v| v.tanh()).collect();
    let h_new: Vec<f64> = (0..h).map(|j| go[j] * tanh_c[j]).collect();
    let logits: Vec<f64> = (0..params.lib_size)
        .map(|k| {
            let row = &params.w_out[k * h..(k + 1) * h];
            params.b_out[k] + row.iter().zip(&h_new).map(|(w, v)| w * v).sum::<f64>()
        })
        .collect();
    StepCache {
        ia,
        ib,
        h_prev: state.h.clone(),
        c_prev: state.c.clone(),
        gi,
        gf,
        gg,
        go,
        tanh_c,
        h: h_new,
        logits,
    }
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|&l| (l - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Softmax restricted to feasible entries; masked entries get exactly 0.
fn masked_softmax(logits: &[f64], mask: &[bool]) -> Vec<f64> {
    let m = logits
        .iter()
        .zip(mask)
        .filter(|(_, &m)| m)
        .map(|(&l, _)| l)
        .fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits
        .iter()
        .zip(mask)
        .map(|(&l, &keep)| if keep { (l - m).exp() } else { 0.0 })
        .collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// One forward step: raw (unmasked) token probabilities and the next state.
pub fn forward_step(
    params: &PolicyParams,
    ctx: &StepContext,
    state: &CellState,
) -> (Vec<f64>, CellState) {
    let (ia, ib) = params.encode(ctx);
    let cache = lstm_step(params, ia, ib, state);
    let psi = softmax(&cache.logits);
    let mut c = cache.c_prev.clone();
    for j in 0..params.hidden {
        c[j] = cache.gf[j] * cache.c_prev[j] + cache.gi[j] * cache.gg[j];
    }
    (psi, CellState { h: cache.h, c })
}

/// A single sampling rollout against an immutable parameter snapshot.
#[derive(Debug, Clone)]
pub struct PolicyRollout<'a> {
    params: &'a PolicyParams,
    state: CellState,
}

impl<'a> PolicyRollout<'a> {
    pub fn new(params: &'a PolicyParams) -> PolicyRollout<'a> {
        PolicyRollout { params, state: CellState::zeros(params.hidden) }
    }
}

impl TokenPolicy for PolicyRollout<'_> {
    fn next_probs(&mut self, ctx: &StepContext) -> Vec<f64> {
        let (psi, state) = forward_step(self.params, ctx, &self.state);
        self.state = state;
        psi
    }
}

/// Sum of per-step log masked probabilities of the chosen tokens. Forced
/// padding steps contribute zero.
pub fn sequence_log_prob(traversal: &[Token], record: &SampleRecord) -> Result<f64, CoreError> {
    if traversal.len() != record.steps.len() {
        return Err(CoreError::RecordLengthMismatch {
            record: record.steps.len(),
            traversal: traversal.len(),
        });
    }
    Ok(record
        .steps
        .iter()
        .filter(|s| !s.forced)
        .map(|s| s.probs[s.chosen].ln())
        .sum())
}

/// Sum of per-step categorical entropies of the masked distributions.
pub fn sequence_entropy(record: &SampleRecord) -> f64 {
    record
        .steps
        .iter()
        .filter(|s| !s.forced)
        .map(|s| -s.probs.iter().filter(|&&p| p > 0.0).map(|&p| p * p.ln()).sum::<f64>())
        .sum()
}

/// Gradients with the same shapes as [`PolicyParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyGrad {
    pub w_x: Vec<f64>,
    pub w_h: Vec<f64>,
    pub b: Vec<f64>,
    pub w_out: Vec<f64>,
    pub b_out: Vec<f64>,
}

impl PolicyGrad {
    pub fn zeros(params: &PolicyParams) -> PolicyGrad {
        PolicyGrad {
            w_x: vec![0.0; params.w_x.len()],
            w_h: vec![0.0; params.w_h.len()],
            b: vec![0.0; params.b.len()],
            w_out: vec![0.0; params.w_out.len()],
            b_out: vec![0.0; params.b_out.len()],
        }
    }

    fn tensors(&self) -> [&Vec<f64>; 5] {
        [&self.w_x, &self.w_h, &self.b, &self.w_out, &self.b_out]
    }

    fn tensors_mut(&mut self) -> [&mut Vec<f64>; 5] {
        [&mut self.w_x, &mut self.w_h, &mut self.b, &mut self.w_out, &mut self.b_out]
    }

    pub fn get_flat(&self, mut idx: usize) -> f64 {
        for t in self.tensors() {
            if idx < t.len() {
                return t[idx];
            }
            idx -= t.len();
        }
        panic!("flat index out of range");
    }

    pub fn add(&mut self, other: &PolicyGrad) {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        for t in self.tensors_mut() {
            for x in t.iter_mut() {
                *x *= s;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }
}

/// Replay one record through the network, returning the per-step caches and
/// masked distributions.
fn replay(params: &PolicyParams, record: &SampleRecord) -> Vec<(StepCache, Vec<f64>)> {
    let mut state = CellState::zeros(params.hidden);
    let mut out = Vec::with_capacity(record.steps.len());
    for step in &record.steps {
        if step.forced {
            continue;
        }
        let (ia, ib) = params.encode(&step.ctx);
        let cache = lstm_step(params, ia, ib, &state);
        let mut c = vec![0.0; params.hidden];
        for j in 0..params.hidden {
            c[j] = cache.gf[j] * cache.c_prev[j] + cache.gi[j] * cache.gg[j];
        }
        state = CellState { h: cache.h.clone(), c };
        let q = masked_softmax(&cache.logits, &step.mask);
        out.push((cache, q));
    }
    out
}

/// The scalar the policy gradient differentiates:
/// `mean_i (advantage_i * log p(tau_i) + lambda_h * H(tau_i))`, recomputed
/// from `params` (not from the recorded probabilities).
pub fn batch_objective(
    params: &PolicyParams,
    records: &[SampleRecord],
    advantages: &[f64],
    lambda_h: f64,
) -> f64 {
    let mut total = 0.0;
    for (record, &adv) in records.iter().zip(advantages) {
        let steps = replay(params, record);
        let unforced: Vec<&crate::sampler::SampleStep> =
            record.steps.iter().filter(|s| !s.forced).collect();
        for ((_, q), step) in steps.iter().zip(&unforced) {
            total += adv * q[step.chosen].ln();
            total -= lambda_h
                * q.iter().filter(|&&p| p > 0.0).map(|&p| p * p.ln()).sum::<f64>();
        }
    }
    total / records.len() as f64
}

/// Exact policy gradient of [`batch_objective`] w.r.t. every parameter:
/// the REINFORCE term plus the entropy bonus, averaged over the batch.
pub fn policy_gradients(
    params: &PolicyParams,
    records: &[SampleRecord],
    advantages: &[f64],
    lambda_h: f64,
) -> PolicyGrad {
    assert_eq!(records.len(), advantages.len());
    let mut grad = PolicyGrad::zeros(params);
    for (record, &adv) in records.iter().zip(advantages) {
        accumulate_sample_grad(params, record, adv, lambda_h, &mut grad);
    }
    grad.scale(1.0 / records.len() as f64);
    assert!(grad.is_finite(), "non-finite policy gradient");
    grad
}

fn accumulate_sample_grad(
    params: &PolicyParams,
    record: &SampleRecord,
    adv: f64,
    lambda_h: f64,
    grad: &mut PolicyGrad,
) {
    let h = params.hidden;
    let input_dim = params.input_dim();
    let steps = replay(params, record);
    let unforced: Vec<&crate::sampler::SampleStep> =
        record.steps.iter().filter(|s| !s.forced).collect();

    let mut dh_next = vec![0.0; h];
    let mut dc_next = vec![0.0; h];
    for t in (0..steps.len()).rev() {
        let (cache, q) = &steps[t];
        let step = unforced[t];

        // d objective / d logits through the masked softmax.
        let entropy: f64 = -q.iter().filter(|&&p| p > 0.0).map(|&p| p * p.ln()).sum::<f64>();
        let mut dlogits = vec![0.0; params.lib_size];
        for k in 0..params.lib_size {
            if !step.mask[k] {
                continue;
            }
            let indicator = if k == step.chosen { 1.0 } else { 0.0 };
            let mut d = adv * (indicator - q[k]);
            if lambda_h != 0.0 && q[k] > 0.0 {
                d += lambda_h * (-q[k] * (q[k].ln() + entropy));
            }
            dlogits[k] = d;
        }

        // Projection layer.
        let mut dh = dh_next.clone();
        for k in 0..params.lib_size {
            let d = dlogits[k];
            if d == 0.0 {
                continue;
            }
            grad.b_out[k] += d;
            let row = &mut grad.w_out[k * h..(k + 1) * h];
            let wrow = &params.w_out[k * h..(k + 1) * h];
            for j in 0..h {
                row[j] += d * cache.h[j];
                dh[j] += d * wrow[j];
            }
        }

        // LSTM cell backward.
        let mut dz = vec![0.0; 4 * h];
        let mut dc_prev = vec![0.0; h];
        for j in 0..h {
            let do_ = dh[j] * cache.tanh_c[j];
            let dc = dc_next[j] + dh[j] * cache.go[j] * (1.0 - cache.tanh_c[j].powi(2));
            let di = dc * cache.gg[j];
            let df = dc * cache.c_prev[j];
            let dg = dc * cache.gi[j];
            dz[j] = di * cache.gi[j] * (1.0 - cache.gi[j]);
            dz[h + j] = df * cache.gf[j] * (1.0 - cache.gf[j]);
            dz[2 * h + j] = dg * (1.0 - cache.gg[j].powi(2));
            dz[3 * h + j] = do_ * cache.go[j] * (1.0 - cache.go[j]);
            dc_prev[j] = dc * cache.gf[j];
        }

        let mut dh_prev = vec![0.0; h];
        for r in 0..4 * h {
            let d = dz[r];
            if d == 0.0 {
                continue;
            }
            grad.b[r] += d;
            grad.w_x[r * input_dim + cache.ia] += d;
            grad.w_x[r * input_dim + cache.ib] += d;
            let wrow = &params.w_h[r * h..(r + 1) * h];
            let grow = &mut grad.w_h[r * h..(r + 1) * h];
            for j in 0..h {
                grow[j] += d * cache.h_prev[j];
                dh_prev[j] += d * wrow[j];
            }
        }
        dh_next = dh_prev;
        dc_next = dc_prev;
    }
}

/// Plain gradient-ascent update, `theta <- theta + alpha * g`.
pub fn apply_update(params: &mut PolicyParams, grad: &PolicyGrad, alpha: f64) {
    for (t, g) in params.tensors_mut().into_iter().zip(grad.tensors()) {
        for (x, d) in t.iter_mut().zip(g) {
            *x += alpha * d;
        }
    }
}

/// Adam state for the optional adaptive-optimizer switch (still ascent:
/// the update adds the preconditioned gradient).
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(params: &PolicyParams) -> AdamState {
        let n = params.param_count();
        AdamState { m: vec![0.0; n], v: vec![0.0; n], t: 0, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }

    pub fn apply(&mut self, params: &mut PolicyParams, grad: &PolicyGrad, alpha: f64) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        let mut idx = 0usize;
        for (t, g) in params.tensors_mut().into_iter().zip(grad.tensors()) {
            for (x, &d) in t.iter_mut().zip(g) {
                self.m[idx] = self.beta1 * self.m[idx] + (1.0 - self.beta1) * d;
                self.v[idx] = self.beta2 * self.v[idx] + (1.0 - self.beta2) * d * d;
                let mhat = self.m[idx] / bc1;
                let vhat = self.v[idx] / bc2;
                *x += alpha * mhat / (vhat.sqrt() + self.eps);
                idx += 1;
            }
        }
    }
}

/// Serialize parameters as a text tensor list with a shape header.
pub fn save_checkpoint(params: &PolicyParams) -> String {
    let mut s = String::new();
    writeln!(s, "dsr-policy v1").unwrap();
    writeln!(s, "lib_size {}", params.lib_size).unwrap();
    writeln!(s, "hidden {}", params.hidden).unwrap();
    writeln!(s, "input_mode {}", params.input_mode.as_str()).unwrap();
    let names = ["w_x", "w_h", "b", "w_out", "b_out"];
    for (name, t) in names.iter().zip(params.tensors()) {
        writeln!(s, "tensor {name} {}", t.len()).unwrap();
        for v in t.iter() {
            writeln!(s, "{v:?}").unwrap();
        }
    }
    s
}

pub fn load_checkpoint(text: &str) -> Result<PolicyParams, CoreError> {
    let mut lines = text.lines();
    let bad = |msg: &str| CoreError::Format(format!("checkpoint: {msg}"));
    if lines.next() != Some("dsr-policy v1") {
        return Err(bad("bad magic"));
    }
    let mut field = |name: &str| -> Result<String, CoreError> {
        let line = lines.next().ok_or_else(|| bad("truncated header"))?;
        line.strip_prefix(&format!("{name} "))
            .map(|v| v.to_string())
            .ok_or_else(|| bad(&format!("expected `{name}`")))
    };
    let lib_size: usize = field("lib_size")?.parse().map_err(|_| bad("lib_size"))?;
    let hidden: usize = field("hidden")?.parse().map_err(|_| bad("hidden"))?;
    let input_mode = InputMode::parse(&field("input_mode")?)?;
    let mut params = PolicyParams::init(lib_size, hidden, input_mode, 0);
    for (name, t) in ["w_x", "w_h", "b", "w_out", "b_out"]
        .iter()
        .zip(params.tensors_mut())
    {
        let header = lines.next().ok_or_else(|| bad("missing tensor header"))?;
        let expect = format!("tensor {name} {}", t.len());
        if header != expect {
            return Err(bad(&format!("expected `{expect}`, got `{header}`")));
        }
        for v in t.iter_mut() {
            let line = lines.next().ok_or_else(|| bad("truncated tensor"))?;
            *v = line.parse().map_err(|_| bad("bad value"))?;
        }
    }
    Ok(params)
}

/// Sample a batch of expressions from a parameter snapshot, with one
/// deterministic RNG per sample derived from `(seed, index)`. Safe to call
/// in parallel; see [`crate::trainer`].
pub fn sample_batch(
    params: &PolicyParams,
    lib: &Library,
    cs: &crate::sampler::ConstraintSet,
    n: usize,
    seed: u64,
) -> Vec<(crate::expr::Expression, SampleRecord)> {
    use rayon::prelude::*;
    (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, i as u64));
            let mut rollout = PolicyRollout::new(params);
            crate::sampler::sample_expression(&mut rollout, lib, cs, &mut rng)
        })
        .collect()
}

/// SplitMix64-style mixing for deriving independent per-sample seeds.
pub fn mix_seed(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_mul(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}
