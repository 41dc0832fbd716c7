//! Multi-seed benchmark campaigns: runs DSR and/or GP over benchmark ×
//! seed cells, judges recovery, and aggregates recovery percentage and
//! test-NRMSE statistics. Cells are independent and run in parallel; every
//! output is plain CSV.

use std::time::Instant;

use rayon::prelude::*;

use crate::benchmarks::{add_noise, by_name, BenchmarkSpec, NoiseSpec, Split};
use crate::error::CoreError;
use crate::gp::{gp_train_with, GpConfig};
use crate::policy::{mix_seed, InputMode};
use crate::token::Library;
use crate::trainer::{nrmse, train_with, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Dsr,
    Gp,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Dsr => "dsr",
            Method::Gp => "gp",
        }
    }

    pub fn parse(s: &str) -> Result<Method, CoreError> {
        match s {
            "dsr" => Ok(Method::Dsr),
            "gp" => Ok(Method::Gp),
            _ => Err(CoreError::Format(format!("unknown method `{s}` (expected dsr|gp)"))),
        }
    }
}

/// Ablations from the appendix: each removes one improvement or constraint
/// family from the full method.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Ablation {
    None,
    /// Replace parent/sibling input with the previously sampled token.
    ParentSibling,
    /// Risk-neutral policy gradient (ε = 1).
    Risk,
    /// No entropy bonus (λ_H = 0).
    Entropy,
    /// No reward baseline (β = 0).
    Baseline,
    /// All four improvement ablations combined.
    AllImprovements,
    /// Allow nested trigonometric operators.
    ConstrainTrig,
    /// Allow unary inverse pairs like log(exp(x)).
    ConstrainInverse,
    /// Drop the length bounds (pad with a variable at the cap).
    ConstrainMinMax,
    /// All three constraint ablations combined.
    AllConstraints,
    /// Everything above at once.
    All,
}

impl Ablation {
    pub const ALL: [Ablation; 11] = [
        Ablation::None,
        Ablation::ParentSibling,
        Ablation::Risk,
        Ablation::Entropy,
        Ablation::Baseline,
        Ablation::AllImprovements,
        Ablation::ConstrainTrig,
        Ablation::ConstrainInverse,
        Ablation::ConstrainMinMax,
        Ablation::AllConstraints,
        Ablation::All,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Ablation::None => "none",
            Ablation::ParentSibling => "parent-sibling",
            Ablation::Risk => "risk",
            Ablation::Entropy => "entropy",
            Ablation::Baseline => "baseline",
            Ablation::AllImprovements => "all-improvements",
            Ablation::ConstrainTrig => "constrain-trig",
            Ablation::ConstrainInverse => "constrain-inverse",
            Ablation::ConstrainMinMax => "constrain-min-max",
            Ablation::AllConstraints => "all-constraints",
            Ablation::All => "all",
        }
    }

    pub fn parse(s: &str) -> Result<Ablation, CoreError> {
        Ablation::ALL
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| CoreError::Format(format!("unknown ablation `{s}`")))
    }

    /// Apply this ablation's switches to a DSR configuration.
    pub fn apply(self, config: &TrainConfig) -> TrainConfig {
        let mut c = config.clone();
        match self {
            Ablation::None => {}
            Ablation::ParentSibling => c.input_mode = InputMode::PrevToken,
            Ablation::Risk => c.risk_factor = 1.0,
            Ablation::Entropy => c.entropy_coeff = 0.0,
            Ablation::Baseline => c.baseline_coeff = 0.0,
            Ablation::ConstrainTrig => c.constraints.forbid_nested_trig = false,
            Ablation::ConstrainInverse => c.constraints.forbid_inverse_unary = false,
            Ablation::ConstrainMinMax => c.constraints.length_enabled = false,
            Ablation::AllImprovements => {
                for a in
                    [Ablation::ParentSibling, Ablation::Risk, Ablation::Entropy, Ablation::Baseline]
                {
                    c = a.apply(&c);
                }
            }
            Ablation::AllConstraints => {
                for a in [
                    Ablation::ConstrainTrig,
                    Ablation::ConstrainInverse,
                    Ablation::ConstrainMinMax,
                ] {
                    c = a.apply(&c);
                }
            }
            Ablation::All => {
                c = Ablation::AllImprovements.apply(&Ablation::AllConstraints.apply(&c));
            }
        }
        c
    }
}

#[derive(Debug, Clone)]
pub struct CampaignConfig {
    pub methods: Vec<Method>,
    pub benchmarks: Vec<String>,
    pub runs: usize,
    pub noise: NoiseSpec,
    pub ablation: Ablation,
    pub base_seed: u64,
    pub dsr: TrainConfig,
    pub gp: GpConfig,
    /// Stop a cell as soon as its best expression passes the recovery
    /// check; best-so-far metrics are monotone, so later steps cannot
    /// change the outcome.
    pub early_stop: bool,
}

impl Default for CampaignConfig {
    fn default() -> Self {
        CampaignConfig {
            methods: vec![Method::Dsr, Method::Gp],
            benchmarks: crate::benchmarks::all_benchmarks().into_iter().map(|b| b.name).collect(),
            runs: 5,
            noise: NoiseSpec::default(),
            ablation: Ablation::None,
            base_seed: 0,
            dsr: TrainConfig::default(),
            gp: GpConfig::default(),
            early_stop: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CurvePoint {
    pub step: usize,
    pub best_reward: f64,
}

#[derive(Debug, Clone)]
pub struct RunRecord {
    pub method: Method,
    pub benchmark: String,
    pub seed: u64,
    pub recovered: bool,
    pub test_nrmse: f64,
    pub steps_to_recover: Option<usize>,
    pub expression: String,
    pub wall_time_secs: f64,
    pub history: Vec<CurvePoint>,
    pub error: Option<String>,
}

#[derive(Debug, Clone)]
pub struct AggregateRow {
    pub method: Method,
    pub benchmark: String,
    pub runs: usize,
    pub recovery_pct: f64,
    pub mean_test_nrmse: f64,
    pub std_test_nrmse: f64,
}

/// Run one (method, benchmark, seed) cell.
pub fn run_cell(
    method: Method,
    spec: &BenchmarkSpec,
    seed: u64,
    config: &CampaignConfig,
) -> RunRecord {
    let started = Instant::now();
    let mut record = RunRecord {
        method,
        benchmark: spec.name.clone(),
        seed,
        recovered: false,
        test_nrmse: f64::NAN,
        steps_to_recover: None,
        expression: String::new(),
        wall_time_secs: 0.0,
        history: Vec::new(),
        error: None,
    };

    let n_train = spec.n * config.noise.data_mult;
    let train_clean = spec.generate_dataset_sized(seed, Split::Train, n_train);
    let train = add_noise(&train_clean, config.noise.gamma, mix_seed(seed, 0x6e6f6973));
    let test = spec.generate_dataset(seed, Split::Test);
    let lib = Library::standard(spec.variables, spec.has_constants);

    let mut steps_to_recover = None;
    let early = config.early_stop;
    let outcome: Result<(Option<crate::Expression>, Vec<CurvePoint>), CoreError> = match method {
        Method::Dsr => {
            let mut cfg = config.ablation.apply(&config.dsr);
            cfg.seed = mix_seed(config.base_seed, mix_seed(seed, 1));
            train_with(&cfg, &lib, &train, |step, expr, _| {
                if steps_to_recover.is_none() && spec.recovery_check(expr) {
                    steps_to_recover = Some(step);
                }
                early && steps_to_recover.is_some()
            })
            .map(|r| {
                let history = r
                    .history
                    .iter()
                    .map(|h| CurvePoint { step: h.iteration, best_reward: h.best_reward })
                    .collect();
                (r.best.map(|(e, _)| e), history)
            })
        }
        Method::Gp => {
            let mut cfg = config.gp.clone();
            cfg.seed = mix_seed(config.base_seed, mix_seed(seed, 2));
            gp_train_with(&cfg, &lib, &train, |step, expr, _| {
                if steps_to_recover.is_none() && spec.recovery_check(expr) {
                    steps_to_recover = Some(step);
                }
                early && steps_to_recover.is_some()
            })
            .map(|r| {
                let history = r
                    .history
                    .iter()
                    .map(|h| CurvePoint { step: h.generation, best_reward: h.best_reward })
                    .collect();
                (r.best.map(|(e, _)| e), history)
            })
        }
    };

    match outcome {
        Ok((Some(best), history)) => {
            record.recovered = spec.recovery_check(&best);
            record.steps_to_recover = if record.recovered { steps_to_recover } else { None };
            record.test_nrmse = best
                .eval_rows(test.x())
                .ok()
                .and_then(|yhat| nrmse(test.y(), &yhat).ok())
                .unwrap_or(f64::NAN);
            record.expression = best.serialize();
            record.history = history;
        }
        Ok((None, history)) => {
            record.history = history;
            record.error = Some("no expression produced".into());
        }
        Err(e) => record.error = Some(e.to_string()),
    }
    record.wall_time_secs = started.elapsed().as_secs_f64();
    record
}

/// Execute every (method, benchmark, seed) cell. Cells run in parallel but
/// each is seeded independently, so record contents do not depend on thread
/// count. Failed cells carry an error string and the campaign continues.
pub fn run_campaign(config: &CampaignConfig) -> Result<Vec<RunRecord>, CoreError> {
    let specs: Vec<BenchmarkSpec> =
        config.benchmarks.iter().map(|n| by_name(n)).collect::<Result<_, _>>()?;
    let mut cells = Vec::new();
    for method in &config.methods {
        for spec in &specs {
            for run in 0..config.runs {
                cells.push((*method, spec.clone(), config.base_seed + run as u64));
            }
        }
    }
    Ok(cells
        .into_par_iter()
        .map(|(method, spec, seed)| run_cell(method, &spec, seed, config))
        .collect())
}

/// Pure fold over records: recovery percentage and test-NRMSE mean ± std
/// per (method, benchmark) cell, in first-appearance order.
pub fn aggregate(records: &[RunRecord]) -> Vec<AggregateRow> {
    let mut order: Vec<(Method, String)> = Vec::new();
    for r in records {
        let key = (r.method, r.benchmark.clone());
        if !order.contains(&key) {
            order.push(key);
        }
    }
    order
        .into_iter()
        .map(|(method, benchmark)| {
            let cell: Vec<&RunRecord> = records
                .iter()
                .filter(|r| r.method == method && r.benchmark == benchmark)
                .collect();
            let runs = cell.len();
            let recovered = cell.iter().filter(|r| r.recovered).count();
            let nrmses: Vec<f64> =
                cell.iter().map(|r| r.test_nrmse).filter(|v| v.is_finite()).collect();
            let (mean, std) = if nrmses.is_empty() {
                (f64::NAN, f64::NAN)
            } else {
                let m = nrmses.iter().sum::<f64>() / nrmses.len() as f64;
                let v = nrmses.iter().map(|x| (x - m).powi(2)).sum::<f64>() / nrmses.len() as f64;
                (m, v.sqrt())
            };
            AggregateRow {
                method,
                benchmark,
                runs,
                recovery_pct: 100.0 * recovered as f64 / runs.max(1) as f64,
                mean_test_nrmse: mean,
                std_test_nrmse: std,
            }
        })
        .collect()
}

/// Deterministic record columns; wall time is reported separately (see
/// `timings_csv`) so reruns from a manifest reproduce this file exactly.
pub const RECORDS_HEADER: &str =
    "method,benchmark,seed,recovered,test_nrmse,steps_to_recover,error,expression";

pub fn records_csv(records: &[RunRecord]) -> String {
    let mut out = String::from(RECORDS_HEADER);
    out.push('\n');
    for r in records {
        let steps = r.steps_to_recover.map(|s| s.to_string()).unwrap_or_default();
        let error = r.error.clone().unwrap_or_default().replace(',', ";");
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.method.as_str(),
            r.benchmark,
            r.seed,
            r.recovered,
            r.test_nrmse,
            steps,
            error,
            r.expression.replace(',', ";"),
        ));
    }
    out
}

pub fn timings_csv(records: &[RunRecord]) -> String {
    let mut out = String::from("method,benchmark,seed,wall_time_secs\n");
    for r in records {
        out.push_str(&format!(
            "{},{},{},{}\n",
            r.method.as_str(),
            r.benchmark,
            r.seed,
            r.wall_time_secs
        ));
    }
    out
}

pub const AGGREGATE_HEADER: &str =
    "method,benchmark,runs,recovery_pct,mean_test_nrmse,std_test_nrmse";

pub fn aggregate_csv(rows: &[AggregateRow]) -> String {
    let mut out = String::from(AGGREGATE_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.method.as_str(),
            r.benchmark,
            r.runs,
            r.recovery_pct,
            r.mean_test_nrmse,
            r.std_test_nrmse,
        ));
    }
    out
}

/// Training curve for one (method, benchmark) cell across its runs: mean
/// best-so-far reward and cumulative recovery fraction per step.
pub fn curve_csv(records: &[RunRecord]) -> String {
    let mut out = String::from("step,best_reward,recovery_fraction\n");
    let runs: Vec<&RunRecord> = records.iter().collect();
    if runs.is_empty() {
        return out;
    }
    let max_step = runs.iter().filter_map(|r| r.history.last()).map(|p| p.step).max().unwrap_or(0);
    for step in 0..=max_step {
        let mut rewards = Vec::new();
        for r in &runs {
            // Best-so-far reward is a step function; carry the last value
            // forward for runs that stopped early.
            let v = r
                .history
                .iter()
                .take_while(|p| p.step <= step)
                .last()
                .map(|p| p.best_reward);
            if let Some(v) = v {
                rewards.push(v);
            }
        }
        if rewards.is_empty() {
            continue;
        }
        let mean = rewards.iter().sum::<f64>() / rewards.len() as f64;
        let recovered = runs
            .iter()
            .filter(|r| r.steps_to_recover.map(|s| s <= step).unwrap_or(false))
            .count();
        out.push_str(&format!("{},{},{}\n", step, mean, recovered as f64 / runs.len() as f64));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trainer::OptimizerKind;

    fn desk_dsr() -> TrainConfig {
        TrainConfig {
            batch_size: 100,
            iterations: 5,
            optimizer: OptimizerKind::Adam,
            learning_rate: 0.005,
            ..Default::default()
        }
    }

    #[test]
    fn ablation_switches_match_their_definitions() {
        let base = TrainConfig::default();
        assert_eq!(Ablation::ParentSibling.apply(&base).input_mode, InputMode::PrevToken);
        assert_eq!(Ablation::Risk.apply(&base).risk_factor, 1.0);
        assert_eq!(Ablation::Entropy.apply(&base).entropy_coeff, 0.0);
        assert_eq!(Ablation::Baseline.apply(&base).baseline_coeff, 0.0);
        assert!(!Ablation::ConstrainTrig.apply(&base).constraints.forbid_nested_trig);
        assert!(!Ablation::ConstrainInverse.apply(&base).constraints.forbid_inverse_unary);
        assert!(!Ablation::ConstrainMinMax.apply(&base).constraints.length_enabled);

        let imp = Ablation::AllImprovements.apply(&base);
        assert_eq!(imp.input_mode, InputMode::PrevToken);
        assert_eq!(imp.risk_factor, 1.0);
        assert_eq!(imp.entropy_coeff, 0.0);
        assert_eq!(imp.baseline_coeff, 0.0);
        // Constraints stay on for the improvements-only ablation.
        assert!(imp.constraints.forbid_nested_trig);

        let all = Ablation::All.apply(&base);
        assert_eq!(all.input_mode, InputMode::PrevToken);
        assert_eq!(all.risk_factor, 1.0);
        assert_eq!(all.entropy_coeff, 0.0);
        assert_eq!(all.baseline_coeff, 0.0);
        assert!(!all.constraints.forbid_nested_trig);
        assert!(!all.constraints.forbid_inverse_unary);
        assert!(!all.constraints.length_enabled);

        assert_eq!(Ablation::None.apply(&base).input_mode, base.input_mode);
        for a in Ablation::ALL {
            assert_eq!(Ablation::parse(a.as_str()).unwrap(), a);
        }
    }

    #[test]
    fn campaign_bookkeeping() {
        let config = CampaignConfig {
            methods: vec![Method::Dsr],
            benchmarks: vec!["Nguyen-1".into()],
            runs: 3,
            dsr: desk_dsr(),
            base_seed: 11,
            ..Default::default()
        };
        let records = run_campaign(&config).unwrap();
        assert_eq!(records.len(), 3);
        let seeds: Vec<u64> = records.iter().map(|r| r.seed).collect();
        assert_eq!(seeds, vec![11, 12, 13]);
        assert!(records.iter().all(|r| r.benchmark == "Nguyen-1"));
        assert!(records.iter().all(|r| r.error.is_some() || !r.history.is_empty()));

        let agg = aggregate(&records);
        assert_eq!(agg.len(), 1);
        assert_eq!(agg[0].runs, 3);
    }

    #[test]
    fn recovery_aggregate_is_a_percentage() {
        let rec = |recovered, nrmse| RunRecord {
            method: Method::Gp,
            benchmark: "Nguyen-1".into(),
            seed: 0,
            recovered,
            test_nrmse: nrmse,
            steps_to_recover: None,
            expression: String::new(),
            wall_time_secs: 0.0,
            history: Vec::new(),
            error: None,
        };
        let records =
            vec![rec(true, 0.0), rec(true, 0.0), rec(false, 0.5), rec(true, 0.0), rec(true, 0.0)];
        let agg = aggregate(&records);
        assert_eq!(agg[0].recovery_pct, 80.0);
        assert!((agg[0].mean_test_nrmse - 0.1).abs() < 1e-12);
    }

    #[test]
    fn aggregates_recompute_from_persisted_records() {
        let config = CampaignConfig {
            methods: vec![Method::Gp],
            benchmarks: vec!["Nguyen-1".into(), "Nguyen-5".into()],
            runs: 2,
            gp: GpConfig { population: 30, generations: 3, ..Default::default() },
            base_seed: 5,
            ..Default::default()
        };
        let records = run_campaign(&config).unwrap();
        assert_eq!(records.len(), 4);
        let a1 = aggregate(&records);
        let a2 = aggregate(&records);
        assert_eq!(a1.len(), 2);
        for (x, y) in a1.iter().zip(&a2) {
            assert_eq!(x.recovery_pct, y.recovery_pct);
            assert!(x.mean_test_nrmse == y.mean_test_nrmse || x.mean_test_nrmse.is_nan());
        }
        // CSV round trip keeps one line per record plus the header.
        let csv = records_csv(&records);
        assert_eq!(csv.lines().count(), 5);
        assert!(csv.starts_with(RECORDS_HEADER));
        assert_eq!(timings_csv(&records).lines().count(), 5);
        let agg_csv = aggregate_csv(&a1);
        assert_eq!(agg_csv.lines().count(), 3);
    }

    #[test]
    fn campaign_is_deterministic_across_reruns() {
        let config = CampaignConfig {
            methods: vec![Method::Gp],
            benchmarks: vec!["Nguyen-1".into()],
            runs: 2,
            gp: GpConfig { population: 25, generations: 3, ..Default::default() },
            base_seed: 7,
            ..Default::default()
        };
        let a = run_campaign(&config).unwrap();
        let b = run_campaign(&config).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.expression, y.expression);
            assert_eq!(x.recovered, y.recovered);
            assert_eq!(x.test_nrmse.to_bits(), y.test_nrmse.to_bits());
        }
    }

    #[test]
    fn curve_csv_carries_best_forward() {
        let mut rec = RunRecord {
            method: Method::Dsr,
            benchmark: "Nguyen-1".into(),
            seed: 0,
            recovered: true,
            test_nrmse: 0.0,
            steps_to_recover: Some(1),
            expression: String::new(),
            wall_time_secs: 0.0,
            history: vec![
                CurvePoint { step: 0, best_reward: 0.4 },
                CurvePoint { step: 1, best_reward: 1.0 },
            ],
            error: None,
        };
        let mut other = rec.clone();
        other.steps_to_recover = None;
        other.recovered = false;
        other.history = vec![
            CurvePoint { step: 0, best_reward: 0.2 },
            CurvePoint { step: 1, best_reward: 0.2 },
            CurvePoint { step: 2, best_reward: 0.3 },
        ];
        rec.history.truncate(2);
        let csv = curve_csv(&[rec, other]);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "step,best_reward,recovery_fraction");
        // Step 2: first run carries 1.0 forward, recovery fraction is 1/2.
        assert_eq!(lines[3], format!("2,{},0.5", (1.0 + 0.3) / 2.0));
    }
}
