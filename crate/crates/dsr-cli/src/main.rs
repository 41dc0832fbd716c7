mod data;
mod settings;

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use dsr_core::benchmarks::{add_noise, by_name, BenchmarkSpec, Split};
use dsr_core::campaign::{
    aggregate, aggregate_csv, curve_csv, records_csv, run_campaign, timings_csv, Method,
};
use dsr_core::gp::gp_train_with;
use dsr_core::infix;
use dsr_core::policy::mix_seed;
use dsr_core::trainer::{nrmse, squash, train_with};
use dsr_core::{Dataset, Expression, Library};

use settings::Settings;

#[derive(Parser)]
#[command(name = "dsr", version, about = "Symbolic regression by deep RL, with a GP baseline")]
struct Cli {
    /// Size of the worker thread pool; 1 guarantees a fully deterministic,
    /// serial run.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit one dataset or benchmark with DSR or GP
    Fit(FitArgs),
    /// Run a multi-seed benchmark campaign and write records/aggregates
    Bench(BenchArgs),
    /// Evaluate an expression (prefix or infix) against a dataset
    Eval(EvalArgs),
}

#[derive(Args)]
struct CommonArgs {
    /// Config file (flat key=value; a saved manifest works here)
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one configuration key, e.g. --set learning_rate=0.005
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
    /// Output root; runs go in <out>/<timestamp>-<name>/
    #[arg(long, default_value = "runs")]
    out: PathBuf,
    /// Run name (defaults to benchmark/method)
    #[arg(long)]
    name: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Training-noise level gamma (std = gamma * RMS of training targets)
    #[arg(long)]
    noise: Option<f64>,
    /// Training-set size multiplier
    #[arg(long)]
    data_mult: Option<usize>,
}

#[derive(Args)]
struct FitArgs {
    #[arg(long, conflicts_with = "data")]
    benchmark: Option<String>,
    /// CSV dataset with a header row; target column is `y` or the last one
    #[arg(long)]
    data: Option<PathBuf>,
    /// dsr | gp
    #[arg(long)]
    method: Option<String>,
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Args)]
struct BenchArgs {
    /// all | nguyen | constant
    #[arg(long)]
    suite: Option<String>,
    /// Explicit benchmark names (repeatable); overrides --suite
    #[arg(long = "benchmark")]
    benchmarks: Vec<String>,
    /// dsr | gp | both
    #[arg(long)]
    method: Option<String>,
    #[arg(long)]
    runs: Option<usize>,
    /// Appendix ablation name, e.g. all-improvements
    #[arg(long)]
    ablation: Option<String>,
    /// Sweep the default noise grid instead of a single gamma
    #[arg(long)]
    noise_grid: bool,
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Args)]
struct EvalArgs {
    /// Expression: serialized prefix form ("add x x") or infix ("x*x + x")
    #[arg(long)]
    expr: String,
    #[arg(long, conflicts_with = "data")]
    benchmark: Option<String>,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn main() {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .expect("thread pool is configured once at startup");
    }
    let result = match cli.command {
        Command::Fit(args) => cmd_fit(args),
        Command::Bench(args) => cmd_bench(args),
        Command::Eval(args) => cmd_eval(args),
    };
    if let Err(e) = result {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn resolve_settings(common: &CommonArgs, mut settings: Settings) -> Result<Settings> {
    if let Some(path) = &common.config {
        settings.apply_file(path)?;
    }
    if let Some(seed) = common.seed {
        settings.seed = seed;
    }
    if let Some(gamma) = common.noise {
        settings.gamma = gamma;
    }
    if let Some(mult) = common.data_mult {
        settings.data_mult = mult;
    }
    settings.apply_overrides(&common.sets)?;
    Ok(settings)
}

fn run_dir(out: &Path, name: &str) -> Result<PathBuf> {
    let stamp = SystemTime::now().duration_since(UNIX_EPOCH).unwrap().as_secs();
    let dir = out.join(format!("{stamp}-{name}"));
    std::fs::create_dir_all(&dir)
        .with_context(|| format!("cannot create output directory {}", dir.display()))?;
    Ok(dir)
}

fn suite_names(suite: &str) -> Result<Vec<String>> {
    let all = dsr_core::benchmarks::all_benchmarks();
    let names = |prefix: &str| {
        all.iter().map(|b| b.name.clone()).filter(|n| n.starts_with(prefix)).collect::<Vec<_>>()
    };
    match suite {
        "all" => Ok(all.iter().map(|b| b.name.clone()).collect()),
        "nguyen" => Ok(names("Nguyen")),
        "constant" => Ok(names("Constant")),
        _ => bail!("unknown suite `{suite}` (expected all|nguyen|constant)"),
    }
}

fn cmd_fit(args: FitArgs) -> Result<()> {
    let mut settings = resolve_settings(&args.common, Settings::default())?;
    if let Some(m) = &args.method {
        settings.apply("method", m)?;
    }
    if let Some(b) = &args.benchmark {
        settings.apply("benchmark", b)?;
    }
    if let Some(d) = &args.data {
        settings.data = Some(d.display().to_string());
    }
    let method = *settings.methods.first().expect("method list is never empty");

    // Resolve the training (and optional test) data.
    let (train, test, spec, library, data_desc): (
        Dataset,
        Option<Dataset>,
        Option<BenchmarkSpec>,
        Library,
        String,
    ) = if let Some(name) = settings.benchmarks.first() {
        let spec = by_name(name)?;
        let n = spec.n * settings.data_mult;
        let clean = spec.generate_dataset_sized(settings.seed, Split::Train, n);
        let train = add_noise(&clean, settings.gamma, mix_seed(settings.seed, 0x6e6f6973));
        let test = spec.generate_dataset(settings.seed, Split::Test);
        let lib = Library::standard(spec.variables, spec.has_constants);
        let desc = format!("benchmark {} ({} train points, gamma {})", spec.name, n, settings.gamma);
        (train, Some(test), Some(spec), lib, desc)
    } else if let Some(path) = &settings.data {
        let loaded = data::load_csv(Path::new(path))?;
        let train = add_noise(&loaded.dataset, settings.gamma, mix_seed(settings.seed, 0x6e6f6973));
        let lib = Library::standard(train.dims(), true);
        let desc = format!(
            "file {path} ({} points, variables {}, target {})",
            train.len(),
            loaded.variable_names.join(" "),
            loaded.target_name
        );
        (train, None, None, lib, desc)
    } else {
        bail!("fit needs --benchmark NAME or --data FILE");
    };

    let default_name = settings
        .benchmarks
        .first()
        .map(|b| format!("{}-{}", b.to_lowercase(), method.as_str()))
        .unwrap_or_else(|| format!("fit-{}", method.as_str()));
    let name = args.common.name.clone().unwrap_or(default_name);
    let dir = run_dir(&args.common.out, &name)?;

    let lib_desc =
        library.tokens().iter().map(|t| t.symbol()).collect::<Vec<_>>().join(" ");
    let manifest = settings.manifest(&[
        ("command", "fit".to_string()),
        ("library", lib_desc),
        ("dataset", data_desc),
    ]);
    std::fs::write(dir.join("manifest"), &manifest)?;

    let mut recovered_at: Option<usize> = None;
    let early = settings.early_stop;
    let check = |step: usize, expr: &Expression, recovered_at: &mut Option<usize>| -> bool {
        if let Some(spec) = &spec {
            if recovered_at.is_none() && spec.recovery_check(expr) {
                *recovered_at = Some(step);
            }
        }
        early && recovered_at.is_some()
    };

    let (best, history_csv) = match method {
        Method::Dsr => {
            let mut cfg = settings.train.clone();
            cfg.seed = settings.seed;
            let result = train_with(&cfg, &library, &train, |step, expr, _| {
                check(step, expr, &mut recovered_at)
            })?;
            let mut csv =
                String::from("iteration,best_reward,mean_reward,threshold,baseline,best_expr\n");
            for h in &result.history {
                csv.push_str(&format!(
                    "{},{},{},{},{},{}\n",
                    h.iteration,
                    h.best_reward,
                    h.mean_reward,
                    h.threshold,
                    h.baseline,
                    h.best_expr.replace(',', ";")
                ));
            }
            (result.best, csv)
        }
        Method::Gp => {
            let mut cfg = settings.gp.clone();
            cfg.seed = settings.seed;
            let result = gp_train_with(&cfg, &library, &train, |step, expr, _| {
                check(step, expr, &mut recovered_at)
            })?;
            let mut csv =
                String::from("generation,best_nrmse,best_reward,mean_nrmse,best_expr\n");
            for h in &result.history {
                csv.push_str(&format!(
                    "{},{},{},{},{}\n",
                    h.generation,
                    h.best_nrmse,
                    h.best_reward,
                    h.mean_nrmse,
                    h.best_expr.replace(',', ";")
                ));
            }
            let best = result.best.map(|(e, f)| (e, 1.0 / (1.0 + f)));
            (best, csv)
        }
    };
    std::fs::write(dir.join("history.csv"), &history_csv)?;

    let (expr, reward) = best.context("no expression was produced")?;
    println!("best expression: {}", expr.render_infix());
    println!("prefix form:     {}", expr.serialize());
    println!("training reward: {reward:.6}");
    if let Some(test) = &test {
        let test_nrmse = expr
            .eval_rows(test.x())
            .ok()
            .and_then(|yhat| nrmse(test.y(), &yhat).ok())
            .unwrap_or(f64::NAN);
        println!("test NRMSE:      {test_nrmse:.6}");
    }
    if spec.is_some() {
        match recovered_at {
            Some(step) => println!("recovered:       yes (step {step})"),
            None => println!("recovered:       no"),
        }
    }
    println!("artifacts:       {}", dir.display());
    Ok(())
}

fn cmd_bench(args: BenchArgs) -> Result<()> {
    let mut settings = resolve_settings(&args.common, Settings::default())?;
    if let Some(m) = &args.method {
        settings.apply("method", m)?;
    }
    if let Some(r) = args.runs {
        settings.runs = r;
    }
    if let Some(a) = &args.ablation {
        settings.apply("ablation", a)?;
    }
    if !args.benchmarks.is_empty() {
        settings.benchmarks = args.benchmarks.clone();
    } else if let Some(suite) = &args.suite {
        settings.benchmarks = suite_names(suite)?;
    }
    if settings.benchmarks.is_empty() {
        bail!("bench needs --suite or --benchmark");
    }

    let gammas = if args.noise_grid {
        dsr_core::benchmarks::default_noise_grid()
    } else {
        vec![settings.gamma]
    };

    let name = args.common.name.clone().unwrap_or_else(|| {
        format!("bench-{}", settings.methods.iter().map(|m| m.as_str()).collect::<Vec<_>>().join("-"))
    });
    let dir = run_dir(&args.common.out, &name)?;
    let curves_dir = dir.join("curves");
    std::fs::create_dir_all(&curves_dir)?;

    let mut all_records = Vec::new();
    for &gamma in &gammas {
        let mut s = settings.clone();
        s.gamma = gamma;
        let records = run_campaign(&s.campaign_config())?;
        for r in &records {
            // Per-cell curves, one file per (gamma, method, benchmark).
            let cell: Vec<_> = records
                .iter()
                .filter(|q| q.method == r.method && q.benchmark == r.benchmark)
                .cloned()
                .collect();
            let fname = format!("gamma{}-{}-{}.csv", gamma, r.method.as_str(), r.benchmark);
            let path = curves_dir.join(fname.to_lowercase());
            if !path.exists() {
                std::fs::write(path, curve_csv(&cell))?;
            }
        }
        all_records.extend(records);
    }

    std::fs::write(dir.join("manifest"), settings.manifest(&[("command", "bench".to_string())]))?;
    std::fs::write(dir.join("records.csv"), records_csv(&all_records))?;
    std::fs::write(dir.join("timings.csv"), timings_csv(&all_records))?;
    let agg = aggregate(&all_records);
    let agg_csv = aggregate_csv(&agg);
    std::fs::write(dir.join("aggregate.csv"), &agg_csv)?;

    println!("{}", "-".repeat(72));
    println!("{:<6} {:<12} {:>5} {:>10} {:>22}", "method", "benchmark", "runs", "recovery", "test NRMSE (mean ± std)");
    for row in &agg {
        println!(
            "{:<6} {:<12} {:>5} {:>9.0}% {:>14.4} ± {:.4}",
            row.method.as_str(),
            row.benchmark,
            row.runs,
            row.recovery_pct,
            row.mean_test_nrmse,
            row.std_test_nrmse
        );
    }
    println!("artifacts: {}", dir.display());

    let failures: Vec<_> = all_records.iter().filter(|r| r.error.is_some()).collect();
    if !failures.is_empty() {
        for f in &failures {
            eprintln!(
                "cell failed: {} {} seed {}: {}",
                f.method.as_str(),
                f.benchmark,
                f.seed,
                f.error.as_deref().unwrap_or("")
            );
        }
        bail!("{} of {} cells failed", failures.len(), all_records.len());
    }
    Ok(())
}

fn parse_expression(text: &str) -> Result<Expression> {
    match Expression::parse(text) {
        Ok(e) => Ok(e),
        Err(prefix_err) => match infix::parse(text).and_then(|ast| ast.to_expression()) {
            Ok(e) => Ok(e),
            Err(infix_err) => bail!(
                "cannot parse expression `{text}`: as prefix: {prefix_err}; as infix: {infix_err}"
            ),
        },
    }
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    let expr = parse_expression(&args.expr)?;
    let dataset = if let Some(name) = &args.benchmark {
        by_name(name)?.generate_dataset(args.seed, Split::Train)
    } else if let Some(path) = &args.data {
        data::load_csv(path)?.dataset
    } else {
        bail!("eval needs --benchmark NAME or --data FILE");
    };
    if expr.dims_required() > dataset.dims() {
        bail!(
            "expression uses {} variables but the dataset has {}",
            expr.dims_required(),
            dataset.dims()
        );
    }
    let yhat = expr.eval_rows(dataset.x())?;
    let value = nrmse(dataset.y(), &yhat)?;
    println!("expression: {}", expr.render_infix());
    println!("NRMSE:      {value:.6}");
    println!("reward:     {:.6}", squash(value));
    println!("complexity: {}", expr.complexity());
    Ok(())
}
