//! The 16 benchmark problems (Nguyen-1..12, Constant-1..4), dataset
//! generation, train-only Gaussian noise, and the numeric recovery check.
//!
//! Definitions live in a versioned CSV (`data/benchmarks_v1.csv`) compiled
//! into the library; formulas are parsed with the infix grammar, which
//! supports `^` and `sqrt` for ground truth even though neither is in the
//! search library.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::dataset::Dataset;
use crate::error::CoreError;
use crate::expr::Expression;
use crate::infix::{self, Ast};
use crate::policy::mix_seed;

const BENCHMARKS_V1: &str = include_str!("../data/benchmarks_v1.csv");

/// Fixed seed for the recovery probe grid, independent of run seeds.
const PROBE_SEED: u64 = 0x9e37_79b9_7f4a_7c15;
const PROBE_POINTS: usize = 1000;

#[derive(Debug, Clone)]
pub struct BenchmarkSpec {
    pub name: String,
    pub variables: usize,
    pub expression: String,
    pub ground_truth: Ast,
    pub lo: f64,
    pub hi: f64,
    pub n: usize,
    pub has_constants: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, Copy)]
pub struct NoiseSpec {
    /// Noise std as a fraction of RMS(y_train).
    pub gamma: f64,
    /// Training-set size multiplier (typically 1, or 10 for the data-rich
    /// variant of the noise experiments).
    pub data_mult: usize,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        NoiseSpec { gamma: 0.0, data_mult: 1 }
    }
}

/// The noise levels swept in the noise-robustness experiment.
pub fn default_noise_grid() -> Vec<f64> {
    vec![0.0, 1e-3, 10f64.powf(-2.5), 1e-2, 10f64.powf(-1.5), 1e-1]
}

fn parse_row(line: &str) -> Result<BenchmarkSpec, CoreError> {
    let fields: Vec<&str> = line.split(',').map(str::trim).collect();
    if fields.len() != 7 {
        return Err(CoreError::Format(format!("bad benchmark row: {line}")));
    }
    let expression = fields[2].to_string();
    let ground_truth = infix::parse(&expression)?;
    let variables: usize =
        fields[1].parse().map_err(|_| CoreError::Format(format!("bad variable count: {line}")))?;
    if ground_truth.max_var() > variables {
        return Err(CoreError::Format(format!("formula uses undeclared variables: {line}")));
    }
    let num = |s: &str| {
        s.parse::<f64>().map_err(|_| CoreError::Format(format!("bad number `{s}` in: {line}")))
    };
    Ok(BenchmarkSpec {
        name: fields[0].to_string(),
        variables,
        expression,
        ground_truth,
        lo: num(fields[3])?,
        hi: num(fields[4])?,
        n: fields[5].parse().map_err(|_| CoreError::Format(format!("bad n in: {line}")))?,
        has_constants: fields[6] == "yes",
    })
}

pub fn all_benchmarks() -> Vec<BenchmarkSpec> {
    BENCHMARKS_V1
        .lines()
        .skip(1)
        .filter(|l| !l.trim().is_empty())
        .map(|l| parse_row(l).expect("embedded benchmark table is well-formed"))
        .collect()
}

pub fn by_name(name: &str) -> Result<BenchmarkSpec, CoreError> {
    all_benchmarks()
        .into_iter()
        .find(|b| b.name.eq_ignore_ascii_case(name))
        .ok_or_else(|| CoreError::UnknownBenchmark(name.to_string()))
}

impl BenchmarkSpec {
    /// Uniform inputs on the benchmark domain, targets from the ground
    /// truth. Train and test draws come from different derived seeds.
    pub fn generate_dataset(&self, seed: u64, split: Split) -> Dataset {
        self.generate_dataset_sized(seed, split, self.n)
    }

    pub fn generate_dataset_sized(&self, seed: u64, split: Split, n: usize) -> Dataset {
        let tag = match split {
            Split::Train => 1,
            Split::Test => 2,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, tag));
        let x: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..self.variables).map(|_| rng.gen_range(self.lo..self.hi)).collect())
            .collect();
        let y = x.iter().map(|row| self.ground_truth.eval(row)).collect();
        Dataset::new(x, y).expect("benchmark formulas are finite on their domains")
    }

    /// True iff `candidate` matches the ground truth everywhere on a dense
    /// random probe grid over the training domain. Tolerance is relative to
    /// the ground truth's magnitude; constant benchmarks get the looser
    /// fitted-constant tolerance.
    pub fn recovery_check(&self, candidate: &Expression) -> bool {
        let mut rng = ChaCha8Rng::seed_from_u64(PROBE_SEED);
        let probes: Vec<Vec<f64>> = (0..PROBE_POINTS)
            .map(|_| (0..self.variables).map(|_| rng.gen_range(self.lo..self.hi)).collect())
            .collect();
        let truth: Vec<f64> = probes.iter().map(|row| self.ground_truth.eval(row)).collect();
        let scale = 1.0 + truth.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let tol = if self.has_constants { 1e-4 * scale } else { 1e-10 * scale };
        for (row, t) in probes.iter().zip(&truth) {
            match candidate.eval_row(row) {
                Ok(v) if (v - t).abs() <= tol => {}
                _ => return false,
            }
        }
        true
    }
}

/// Add zero-mean Gaussian noise to the targets with standard deviation
/// `gamma * RMS(y)`. Applied to training data only; `gamma = 0` is exact
/// identity.
pub fn add_noise(data: &Dataset, gamma: f64, seed: u64) -> Dataset {
    assert!(gamma >= 0.0, "noise level must be non-negative");
    if gamma == 0.0 {
        return data.clone();
    }
    let std = gamma * data.y_rms();
    let normal = Normal::new(0.0, std).expect("std is finite and positive");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let y = data.y().iter().map(|v| v + normal.sample(&mut rng)).collect();
    data.with_targets(y).expect("noise preserves dataset shape")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn loads_all_sixteen() {
        let all = all_benchmarks();
        assert_eq!(all.len(), 16);
        assert_eq!(all[0].name, "Nguyen-1");
        assert_eq!(all[15].name, "Constant-4");
        assert_eq!(all.iter().filter(|b| b.has_constants).count(), 4);
        assert_eq!(all.iter().filter(|b| b.variables == 2).count(), 6);
    }

    #[test]
    fn lookup_is_case_insensitive() {
        assert_eq!(by_name("nguyen-7").unwrap().lo, 0.0);
        assert_eq!(by_name("nguyen-7").unwrap().hi, 2.0);
        assert!(matches!(by_name("nguyen-99"), Err(CoreError::UnknownBenchmark(_))));
    }

    #[test]
    fn datasets_match_the_table() {
        let b = by_name("Nguyen-1").unwrap();
        let d = b.generate_dataset(7, Split::Train);
        assert_eq!(d.len(), 20);
        assert_eq!(d.dims(), 1);
        for (row, y) in d.x().iter().zip(d.y()) {
            let x = row[0];
            assert!((-1.0..1.0).contains(&x));
            assert!((y - (x.powi(3) + x.powi(2) + x)).abs() < 1e-12);
        }

        let n7 = by_name("Nguyen-7").unwrap().generate_dataset(3, Split::Train);
        assert!(n7.x().iter().all(|r| (0.0..2.0).contains(&r[0])));
    }

    #[test]
    fn train_and_test_differ_but_reruns_match() {
        let b = by_name("Nguyen-9").unwrap();
        let train = b.generate_dataset(5, Split::Train);
        let test = b.generate_dataset(5, Split::Test);
        assert_ne!(train.x(), test.x());
        let again = b.generate_dataset(5, Split::Train);
        assert_eq!(train.x(), again.x());
        assert_eq!(train.y(), again.y());
    }

    #[test]
    fn zero_noise_is_identity() {
        let b = by_name("Nguyen-2").unwrap();
        let d = b.generate_dataset(1, Split::Train);
        let noisy = add_noise(&d, 0.0, 99);
        assert_eq!(d.y(), noisy.y());
    }

    #[test]
    fn noise_std_matches_gamma_times_rms() {
        // y = [1,1,1,1] has RMS 1, so gamma = 0.1 gives noise std 0.1.
        let d = Dataset::new(vec![vec![0.0], vec![1.0], vec![2.0], vec![3.0]], vec![1.0; 4])
            .unwrap();
        let mut deltas = Vec::new();
        for seed in 0..25_000u64 {
            let noisy = add_noise(&d, 0.1, seed);
            for (a, b) in noisy.y().iter().zip(d.y()) {
                deltas.push(a - b);
            }
        }
        let n = deltas.len() as f64;
        let mean = deltas.iter().sum::<f64>() / n;
        let var = deltas.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        assert!(mean.abs() < 0.002, "mean {mean}");
        assert!((var.sqrt() - 0.1).abs() < 0.002, "std {}", var.sqrt());
    }

    #[test]
    fn noise_is_deterministic_per_seed() {
        let d = by_name("Nguyen-3").unwrap().generate_dataset(2, Split::Train);
        assert_eq!(add_noise(&d, 0.01, 5).y(), add_noise(&d, 0.01, 5).y());
        assert_ne!(add_noise(&d, 0.01, 5).y(), add_noise(&d, 0.01, 6).y());
    }

    #[test]
    fn ground_truth_recovers_itself_on_all_benchmarks() {
        // Lowerable formulas go through the library expression; the rest
        // (sqrt, ^) use known equivalent library forms from the appendix.
        for b in all_benchmarks() {
            let candidate = match b.name.as_str() {
                "Nguyen-8" => Expression::parse("exp mul div x1 add x1 x1 log x1").unwrap(),
                "Nguyen-11" => Expression::parse("exp mul x2 log x1").unwrap(),
                "Constant-4" => {
                    Expression::parse("mul const exp mul x2 log x1 ; 2.7").unwrap()
                }
                _ => b.ground_truth.to_expression().unwrap(),
            };
            assert!(b.recovery_check(&candidate), "{} failed self-recovery", b.name);
        }
    }

    #[test]
    fn near_miss_is_rejected() {
        let b = by_name("Nguyen-1").unwrap();
        // x^3 + x^2, missing the linear term.
        let miss = infix::parse("x^3 + x^2").unwrap().to_expression();
        assert!(miss.is_err() || !b.recovery_check(&miss.unwrap()));
        let miss = Expression::parse("add mul x mul x x mul x x").unwrap();
        assert!(!b.recovery_check(&miss));
        // x*x*x + x*x + x, an equivalent tree, is accepted.
        let equiv = Expression::parse("add add mul x mul x x mul x x x").unwrap();
        assert!(b.recovery_check(&equiv));
    }

    #[test]
    fn constant_tolerance_accepts_fitted_values() {
        let b = by_name("Constant-1").unwrap();
        let fitted = Expression::new(
            Expression::parse(
                "add add mul const mul x mul x x mul const mul x x mul const x",
            )
            .unwrap()
            .traversal()
            .to_vec(),
            vec![3.390_000_4, 2.119_999_6, 1.780_000_2],
        )
        .unwrap();
        assert!(b.recovery_check(&fitted));
        let off = Expression::new(
            fitted.traversal().to_vec(),
            vec![3.39, 2.12, 1.9],
        )
        .unwrap();
        assert!(!b.recovery_check(&off));
    }
}
