//! Flat key=value configuration shared by the config-file format, `--set`
//! overrides, and persisted run manifests. A manifest is just a complete
//! settings file, so `--config <manifest>` reruns it.

use std::fmt::Write as _;
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};

use dsr_core::campaign::{Ablation, CampaignConfig, Method};
use dsr_core::gp::GpConfig;
use dsr_core::policy::InputMode;
use dsr_core::trainer::{OptimizerKind, TrainConfig};

#[derive(Debug, Clone)]
pub struct Settings {
    pub methods: Vec<Method>,
    pub benchmarks: Vec<String>,
    pub data: Option<String>,
    pub seed: u64,
    pub runs: usize,
    pub gamma: f64,
    pub data_mult: usize,
    pub ablation: Ablation,
    pub early_stop: bool,
    pub train: TrainConfig,
    pub gp: GpConfig,
}

impl Default for Settings {
    fn default() -> Self {
        Settings {
            methods: vec![Method::Dsr],
            benchmarks: Vec::new(),
            data: None,
            seed: 0,
            runs: 1,
            gamma: 0.0,
            data_mult: 1,
            ablation: Ablation::None,
            early_stop: true,
            train: TrainConfig::default(),
            gp: GpConfig::default(),
        }
    }
}

fn parse_bool(v: &str) -> Result<bool> {
    match v {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => bail!("expected a boolean, got `{v}`"),
    }
}

fn input_mode_str(m: InputMode) -> &'static str {
    match m {
        InputMode::ParentSibling => "parent-sibling",
        InputMode::PrevToken => "prev-token",
    }
}

impl Settings {
    pub fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        let num = |v: &str| v.parse::<f64>().with_context(|| format!("bad number `{v}`"));
        let int = |v: &str| v.parse::<usize>().with_context(|| format!("bad integer `{v}`"));
        match key.trim() {
            "method" => {
                self.methods = match v {
                    "both" => vec![Method::Dsr, Method::Gp],
                    _ => vec![Method::parse(v)?],
                }
            }
            "benchmark" => {
                self.benchmarks =
                    v.split(',').map(str::trim).filter(|s| !s.is_empty()).map(String::from).collect()
            }
            "data" => self.data = if v.is_empty() { None } else { Some(v.to_string()) },
            "seed" => self.seed = v.parse().with_context(|| format!("bad seed `{v}`"))?,
            "runs" => self.runs = int(v)?,
            "gamma" => self.gamma = num(v)?,
            "data_mult" => self.data_mult = int(v)?,
            "ablation" => self.ablation = Ablation::parse(v)?,
            "early_stop" => self.early_stop = parse_bool(v)?,

            "learning_rate" => self.train.learning_rate = num(v)?,
            "baseline_coeff" => self.train.baseline_coeff = num(v)?,
            "complexity_coeff" => self.train.complexity_coeff = num(v)?,
            "entropy_coeff" => self.train.entropy_coeff = num(v)?,
            "risk_factor" => self.train.risk_factor = num(v)?,
            "batch_size" => self.train.batch_size = int(v)?,
            "iterations" => self.train.iterations = int(v)?,
            "hidden" => self.train.hidden = int(v)?,
            "optimizer" => self.train.optimizer = OptimizerKind::parse(v)?,
            "input_mode" => {
                self.train.input_mode = match v {
                    "parent-sibling" => InputMode::ParentSibling,
                    "prev-token" => InputMode::PrevToken,
                    _ => bail!("unknown input mode `{v}` (expected parent-sibling|prev-token)"),
                }
            }
            "min_length" => self.train.constraints.min_length = int(v)?,
            "max_length" => self.train.constraints.max_length = int(v)?,
            "length_enabled" => self.train.constraints.length_enabled = parse_bool(v)?,
            "forbid_all_const_children" => {
                self.train.constraints.forbid_all_const_children = parse_bool(v)?
            }
            "forbid_inverse_unary" => self.train.constraints.forbid_inverse_unary = parse_bool(v)?,
            "forbid_nested_trig" => self.train.constraints.forbid_nested_trig = parse_bool(v)?,
            "max_constants" => self.train.constraints.max_constants = int(v)?,

            "gp_population" => self.gp.population = int(v)?,
            "gp_generations" => self.gp.generations = int(v)?,
            "gp_tournament" => self.gp.tournament_size = int(v)?,
            "gp_crossover_prob" => self.gp.crossover_prob = num(v)?,
            "gp_mutation_prob" => self.gp.mutation_prob = num(v)?,
            "gp_depth_min" => self.gp.depth_min = int(v)?,
            "gp_depth_max" => self.gp.depth_max = int(v)?,
            "gp_max_constants" => self.gp.max_constants = int(v)?,
            "gp_max_length" => self.gp.max_length = int(v)?,
            other => bail!("unknown configuration key `{other}`"),
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config file {}", path.display()))?;
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| anyhow!("{}:{}: expected key=value", path.display(), lineno + 1))?;
            self.apply(key, value)
                .with_context(|| format!("{}:{}", path.display(), lineno + 1))?;
        }
        Ok(())
    }

    pub fn apply_overrides(&mut self, sets: &[String]) -> Result<()> {
        for s in sets {
            let (key, value) =
                s.split_once('=').ok_or_else(|| anyhow!("--set expects key=value, got `{s}`"))?;
            self.apply(key, value)?;
        }
        Ok(())
    }

    /// Full resolved configuration as a reusable settings file. Informational
    /// context (library, dataset) goes in comments.
    pub fn manifest(&self, info: &[(&str, String)]) -> String {
        let mut out = String::from("# dsr run manifest; rerun with `dsr <command> --config <this file>`\n");
        for (k, v) in info {
            writeln!(out, "# {k} = {v}").unwrap();
        }
        let method = match self.methods.as_slice() {
            [Method::Dsr, Method::Gp] => "both".to_string(),
            [m] => m.as_str().to_string(),
            other => other.iter().map(|m| m.as_str()).collect::<Vec<_>>().join(","),
        };
        writeln!(out, "method = {method}").unwrap();
        writeln!(out, "benchmark = {}", self.benchmarks.join(",")).unwrap();
        writeln!(out, "data = {}", self.data.clone().unwrap_or_default()).unwrap();
        writeln!(out, "seed = {}", self.seed).unwrap();
        writeln!(out, "runs = {}", self.runs).unwrap();
        writeln!(out, "gamma = {}", self.gamma).unwrap();
        writeln!(out, "data_mult = {}", self.data_mult).unwrap();
        writeln!(out, "ablation = {}", self.ablation.as_str()).unwrap();
        writeln!(out, "early_stop = {}", self.early_stop).unwrap();
        let t = &self.train;
        writeln!(out, "learning_rate = {}", t.learning_rate).unwrap();
        writeln!(out, "baseline_coeff = {}", t.baseline_coeff).unwrap();
        writeln!(out, "complexity_coeff = {}", t.complexity_coeff).unwrap();
        writeln!(out, "entropy_coeff = {}", t.entropy_coeff).unwrap();
        writeln!(out, "risk_factor = {}", t.risk_factor).unwrap();
        writeln!(out, "batch_size = {}", t.batch_size).unwrap();
        writeln!(out, "iterations = {}", t.iterations).unwrap();
        writeln!(out, "hidden = {}", t.hidden).unwrap();
        writeln!(out, "optimizer = {}", t.optimizer.as_str()).unwrap();
        writeln!(out, "input_mode = {}", input_mode_str(t.input_mode)).unwrap();
        let c = &t.constraints;
        writeln!(out, "min_length = {}", c.min_length).unwrap();
        writeln!(out, "max_length = {}", c.max_length).unwrap();
        writeln!(out, "length_enabled = {}", c.length_enabled).unwrap();
        writeln!(out, "forbid_all_const_children = {}", c.forbid_all_const_children).unwrap();
        writeln!(out, "forbid_inverse_unary = {}", c.forbid_inverse_unary).unwrap();
        writeln!(out, "forbid_nested_trig = {}", c.forbid_nested_trig).unwrap();
        writeln!(out, "max_constants = {}", c.max_constants).unwrap();
        let g = &self.gp;
        writeln!(out, "gp_population = {}", g.population).unwrap();
        writeln!(out, "gp_generations = {}", g.generations).unwrap();
        writeln!(out, "gp_tournament = {}", g.tournament_size).unwrap();
        writeln!(out, "gp_crossover_prob = {}", g.crossover_prob).unwrap();
        writeln!(out, "gp_mutation_prob = {}", g.mutation_prob).unwrap();
        writeln!(out, "gp_depth_min = {}", g.depth_min).unwrap();
        writeln!(out, "gp_depth_max = {}", g.depth_max).unwrap();
        writeln!(out, "gp_max_constants = {}", g.max_constants).unwrap();
        writeln!(out, "gp_max_length = {}", g.max_length).unwrap();
        out
    }

    pub fn campaign_config(&self) -> CampaignConfig {
        CampaignConfig {
            methods: self.methods.clone(),
            benchmarks: self.benchmarks.clone(),
            runs: self.runs,
            noise: dsr_core::benchmarks::NoiseSpec { gamma: self.gamma, data_mult: self.data_mult },
            ablation: self.ablation,
            base_seed: self.seed,
            dsr: self.train.clone(),
            gp: self.gp.clone(),
            early_stop: self.early_stop,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_mirror_the_hyperparameter_tables() {
        let s = Settings::default();
        assert_eq!(s.train.learning_rate, 0.0003);
        assert_eq!(s.train.baseline_coeff, 0.5);
        assert_eq!(s.train.complexity_coeff, 0.0);
        assert_eq!(s.train.entropy_coeff, 0.08);
        assert_eq!(s.train.risk_factor, 0.1);
        assert_eq!(s.train.batch_size, 1000);
        assert_eq!(s.train.iterations, 1000);
        assert_eq!(s.gp.population, 1000);
        assert_eq!(s.gp.generations, 1000);
        assert_eq!(s.gp.tournament_size, 3);
        assert_eq!(s.gp.crossover_prob, 0.5);
        assert_eq!(s.gp.mutation_prob, 0.1);
        assert_eq!(s.gp.depth_min, 0);
        assert_eq!(s.gp.depth_max, 2);
    }

    #[test]
    fn manifest_round_trips_every_key() {
        let mut s = Settings::default();
        s.apply_overrides(&[
            "method=both".into(),
            "benchmark=Nguyen-1,Nguyen-5".into(),
            "seed=42".into(),
            "runs=3".into(),
            "gamma=0.01".into(),
            "data_mult=10".into(),
            "ablation=all-improvements".into(),
            "learning_rate=0.005".into(),
            "entropy_coeff=0.003".into(),
            "optimizer=adam".into(),
            "input_mode=prev-token".into(),
            "batch_size=500".into(),
            "iterations=300".into(),
            "forbid_nested_trig=false".into(),
            "gp_population=500".into(),
        ])
        .unwrap();
        let manifest = s.manifest(&[("note", "test".into())]);

        let mut restored = Settings::default();
        for line in manifest.lines().filter(|l| !l.trim().starts_with('#')) {
            let (k, v) = line.split_once('=').unwrap();
            restored.apply(k, v).unwrap();
        }
        assert_eq!(restored.manifest(&[("note", "test".into())]), manifest);
        assert_eq!(restored.methods, vec![Method::Dsr, Method::Gp]);
        assert_eq!(restored.benchmarks, vec!["Nguyen-1", "Nguyen-5"]);
        assert_eq!(restored.train.entropy_coeff, 0.003);
        assert_eq!(restored.ablation, Ablation::AllImprovements);
        assert!(!restored.train.constraints.forbid_nested_trig);
    }

    #[test]
    fn unknown_keys_and_bad_values_are_rejected() {
        let mut s = Settings::default();
        assert!(s.apply("no_such_key", "1").is_err());
        assert!(s.apply("learning_rate", "fast").is_err());
        assert!(s.apply("method", "annealing").is_err());
        assert!(s.apply("length_enabled", "maybe").is_err());
    }
}
