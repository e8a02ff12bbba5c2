//! `ewrls`: experiment runner for the sliding-window QR-RLS filter and its
//! baselines. Every command writes CSV output plus a JSON run manifest.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;

use ewrls::data::{gen_nonlinear_ar, lag_embed, read_csv_series, standardize_causal, ColumnRef};
use ewrls::harness::{
    bandwidth_grid, bench_csv, bench_runtime, default_grid, sweep_csv, sweep_dimensions, walk_forward, FoldSpec, ModelKind,
    ModelParams, SweepConfig, GRID_WINDOWS,
};
use ewrls::verify::{run_suite, VerifyOptions};

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_VERIFY: u8 = 3;

#[derive(Parser, Debug)]
#[command(name = "ewrls", version, about = "Sliding-window QR-RLS experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate the synthetic nonlinear AR series as a one-column CSV.
    Synth(SynthArgs),
    /// Prequential sweep over random-feature dimensions.
    Sweep(SweepArgs),
    /// Single-threaded wall-clock timing per dimension.
    Bench(BenchArgs),
    /// Walk-forward grid search and evaluation on a CSV column.
    Run(RunArgs),
    /// Numerical invariant suite.
    Verify(VerifyArgs),
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

/// Flags shared by `sweep` and `bench`. Unset flags keep the config default.
#[derive(Args, Debug, Default)]
struct ExperimentFlags {
    /// Sliding window length N.
    #[arg(long)]
    window: Option<usize>,
    /// Forgetting factor in (0, 1].
    #[arg(long)]
    lambda: Option<f64>,
    /// Comma-separated feature dimensions.
    #[arg(long, value_delimiter = ',')]
    dims: Option<Vec<usize>>,
    /// Kernel length-scale.
    #[arg(long)]
    bandwidth: Option<f64>,
    #[arg(long)]
    lags: Option<usize>,
    /// abo, cov_rls, qrd_rls or krls.
    #[arg(long)]
    model: Option<ModelKind>,
    /// Number of prequential updates.
    #[arg(long, alias = "updates")]
    steps: Option<usize>,
    /// Length of the generated series.
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker lanes, 0 for all cores.
    #[arg(long)]
    workers: Option<usize>,
    /// JSON object whose keys override the flags.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SweepArgs {
    #[command(flatten)]
    flags: ExperimentFlags,
    /// Track the per-step deviation from the batch pseudoinverse solution.
    #[arg(long)]
    oracle: bool,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct BenchArgs {
    #[command(flatten)]
    flags: ExperimentFlags,
    #[arg(long, default_value_t = 10)]
    reps: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct RunArgs {
    #[arg(long)]
    csv: PathBuf,
    /// Column name or zero-based index.
    #[arg(long)]
    column: String,
    #[arg(long, default_value = "abo")]
    model: ModelKind,
    /// Fix the window instead of searching the default window grid.
    #[arg(long)]
    window: Option<usize>,
    /// Fix the bandwidth instead of searching the log grid.
    #[arg(long)]
    bandwidth: Option<f64>,
    /// Number of log-spaced bandwidths searched.
    #[arg(long, default_value_t = 6)]
    grid_points: usize,
    /// Feature dimension (random-feature models only). The default keeps
    /// the model well below the interpolation threshold for every window
    /// in the search grid larger than 64.
    #[arg(long, default_value_t = 64)]
    dims: usize,
    #[arg(long, default_value_t = 1.0)]
    lambda: f64,
    #[arg(long, default_value_t = 7)]
    lags: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Initialisation samples before every fold (defaults to the largest window).
    #[arg(long)]
    warmup: Option<usize>,
    #[arg(long, default_value_t = 500)]
    val_len: usize,
    #[arg(long, default_value_t = 500)]
    test_len: usize,
    #[arg(long, default_value_t = 8)]
    val_folds: usize,
    #[arg(long, default_value_t = 5)]
    test_folds: usize,
    #[arg(long, default_value_t = 0)]
    workers: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct VerifyArgs {
    /// Reduced configurations for a fast check.
    #[arg(long)]
    quick: bool,
    /// Override the rank-test tolerance (fault injection).
    #[arg(long)]
    rank_tolerance: Option<f64>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Optional directory for a CSV report and manifest.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Bad flags or configuration.
#[derive(Debug)]
struct UsageError(String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

#[derive(Debug)]
struct VerifyFailed {
    failed: usize,
    total: usize,
}

impl fmt::Display for VerifyFailed {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} of {} invariant checks failed", self.failed, self.total)
    }
}

impl std::error::Error for VerifyFailed {}

#[derive(Serialize)]
struct RunManifest {
    command: String,
    args: Vec<String>,
    config: Value,
    seeds: BTreeMap<String, u64>,
    timestamp: String,
    outputs: Vec<PathBuf>,
    version: String,
    /// Clock used for timings.
    clock: &'static str,
}

impl RunManifest {
    fn new(command: &str, config: &impl Serialize, seeds: BTreeMap<String, u64>, outputs: Vec<PathBuf>) -> Result<Self> {
        Ok(Self {
            command: command.into(),
            args: std::env::args().collect(),
            config: serde_json::to_value(config)?,
            seeds,
            timestamp: chrono::Utc::now().to_rfc3339(),
            outputs,
            version: env!("CARGO_PKG_VERSION").into(),
            clock: "monotonic wall clock (std::time::Instant)",
        })
    }

    fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self)? + "\n").with_context(|| format!("writing {}", path.display()))
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_USAGE) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Bench(a) => cmd_bench(a),
        Command::Run(a) => cmd_run(a),
        Command::Verify(a) => cmd_verify(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<VerifyFailed>().is_some() {
        return EXIT_VERIFY;
    }
    if err.downcast_ref::<UsageError>().is_some() {
        return EXIT_USAGE;
    }
    match err.downcast_ref::<ewrls::Error>() {
        Some(ewrls::Error::InvalidArgument(_)) => EXIT_USAGE,
        _ => EXIT_DATA,
    }
}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

/// Overlays the keys of a JSON object file onto `base`. Unknown keys are
/// rejected so that typos do not silently fall back to defaults.
fn apply_config<T: Serialize + DeserializeOwned>(base: T, path: Option<&Path>) -> Result<T> {
    let Some(path) = path else { return Ok(base) };
    let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    let overrides: Value = serde_json::from_str(&text).map_err(|e| usage(format!("config {}: {e}", path.display())))?;
    let Value::Object(overrides) = overrides else {
        return Err(usage(format!("config {} must be a JSON object", path.display())));
    };
    let mut merged = serde_json::to_value(base)?;
    let obj = merged.as_object_mut().expect("config serialises to an object");
    for (k, v) in overrides {
        if !obj.contains_key(&k) {
            return Err(usage(format!("unknown config key {k:?}")));
        }
        obj.insert(k, v);
    }
    serde_json::from_value(merged).map_err(|e| usage(format!("config {}: {e}", path.display())))
}

fn experiment_config(flags: &ExperimentFlags, base: SweepConfig) -> Result<SweepConfig> {
    let mut cfg = base;
    if let Some(w) = flags.window {
        cfg.window = w;
    }
    if let Some(l) = flags.lambda {
        cfg.lambda = l;
    }
    if let Some(d) = &flags.dims {
        cfg.dims = d.clone();
    } else if flags.window.is_some() {
        // Keep the interpolation row aligned with the chosen window.
        cfg.dims = (1..=14).map(|k| 1usize << k).collect();
        cfg.dims.push(cfg.window);
    }
    if let Some(b) = flags.bandwidth {
        cfg.bandwidth = b;
    }
    if let Some(l) = flags.lags {
        cfg.lags = l;
    }
    if let Some(m) = flags.model {
        cfg.model = m;
    }
    if let Some(s) = flags.steps {
        cfg.steps = s;
    }
    if let Some(n) = flags.n {
        cfg.series_len = n;
    }
    if let Some(s) = flags.seed {
        cfg.seed = s;
    }
    if let Some(w) = flags.workers {
        cfg.workers = w;
    }
    let cfg = apply_config(cfg, flags.config.as_deref())?;
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    if cfg.series_len < cfg.window + cfg.steps + cfg.lags {
        return Err(usage(format!(
            "series length {} too short for window + steps + lags = {}",
            cfg.series_len,
            cfg.window + cfg.steps + cfg.lags
        )));
    }
    Ok(cfg)
}

fn feature_seeds(cfg: &SweepConfig) -> BTreeMap<String, u64> {
    let mut seeds = BTreeMap::new();
    seeds.insert("data".into(), cfg.seed);
    if cfg.model.uses_features() {
        for &d in &cfg.dims {
            seeds.insert(format!("feature_map_d{d}"), ewrls::harness::derive_seed(cfg.seed, d));
        }
    }
    seeds
}

fn cmd_synth(a: SynthArgs) -> Result<()> {
    if a.n == 0 {
        return Err(usage("--n must be at least 1"));
    }
    let series = gen_nonlinear_ar(a.n, a.seed)?;
    let mut text = String::with_capacity(a.n * 24 + 8);
    text.push_str("value\n");
    for v in &series.values {
        text.push_str(&format!("{v:?}\n"));
    }
    if let Some(parent) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    write_file(&a.out, &text)?;
    let manifest_path = a.out.with_extension("manifest.json");
    let config = serde_json::json!({ "n": a.n, "seed": a.seed });
    let seeds = BTreeMap::from([("data".to_string(), a.seed)]);
    RunManifest::new("synth", &config, seeds, vec![a.out.clone()])?.write(&manifest_path)?;
    println!("wrote {} values to {}", a.n, a.out.display());
    Ok(())
}

fn cmd_sweep(a: SweepArgs) -> Result<()> {
    let mut base = SweepConfig::default();
    base.oracle = a.oracle;
    let mut cfg = experiment_config(&a.flags, base)?;
    if cfg.model == ModelKind::CovRls {
        cfg.oracle = true;
    }
    if cfg.oracle && !cfg.model.uses_features() {
        return Err(usage(format!("--oracle needs a random-feature model, not {}", cfg.model)));
    }
    create_dir(&a.out)?;
    let rows = sweep_dimensions(&cfg)?;
    let csv_path = a.out.join("sweep.csv");
    write_file(&csv_path, &sweep_csv(&rows))?;
    RunManifest::new("sweep", &cfg, feature_seeds(&cfg), vec![csv_path.clone()])?.write(&a.out.join("manifest.json"))?;
    for r in &rows {
        let cond = if r.cond_infinite { "inf".to_string() } else { format!("{:.4}", r.cond.mean) };
        println!(
            "D={:<6} train={:.3e} test={:.4} median={:.4} cond={}",
            r.dim, r.train.mean, r.test.mean, r.test_median, cond
        );
    }
    println!("wrote {}", csv_path.display());
    Ok(())
}

fn cmd_bench(a: BenchArgs) -> Result<()> {
    let base = SweepConfig {
        dims: (5..=14).map(|k| 1usize << k).collect(),
        steps: 1000,
        track_condition: false,
        ..SweepConfig::default()
    };
    let mut cfg = experiment_config(&a.flags, base)?;
    // Timing runs on a single lane regardless of the worker flag.
    cfg.workers = 1;
    cfg.track_condition = false;
    if a.reps == 0 {
        return Err(usage("--reps must be positive"));
    }
    create_dir(&a.out)?;
    let rows = bench_runtime(&cfg, a.reps)?;
    let csv_path = a.out.join("bench.csv");
    write_file(&csv_path, &bench_csv(&rows))?;
    RunManifest::new("bench", &serde_json::json!({ "sweep": cfg, "reps": a.reps }), feature_seeds(&cfg), vec![csv_path.clone()])?
        .write(&a.out.join("manifest.json"))?;
    for r in &rows {
        println!("D={:<6} {:.3} ms (sd {:.3})", r.dim, r.mean_ms, r.sd_ms);
    }
    println!("wrote {}", csv_path.display());
    Ok(())
}

fn cmd_run(a: RunArgs) -> Result<()> {
    if a.lags == 0 || a.dims == 0 || a.grid_points == 0 {
        return Err(usage("--lags, --dims and --grid-points must be positive"));
    }
    let windows: Vec<usize> = match a.window {
        Some(w) => vec![w],
        None => GRID_WINDOWS.to_vec(),
    };
    let bandwidths = match a.bandwidth {
        Some(b) => vec![b],
        None => bandwidth_grid(a.grid_points),
    };
    let base = ModelParams { kind: a.model, ..ModelParams::abo(windows[0], a.dims, bandwidths[0], a.lambda, a.lags, a.seed) };
    let grid = default_grid(&base, &windows, &bandwidths);
    if grid.is_empty() {
        return Err(usage("parameter grid is empty (windows shorter than the lag count?)"));
    }
    let max_window = grid.iter().map(|p| p.window).max().unwrap_or(0);
    let warmup = a.warmup.unwrap_or(max_window);
    let spec = FoldSpec {
        n_val_folds: a.val_folds,
        n_test_folds: a.test_folds,
        ..FoldSpec::standard(warmup, a.val_len, a.test_len)
    };
    spec.validate().map_err(|e| usage(e.to_string()))?;

    let series = read_csv_series(&a.csv, &ColumnRef::parse(&a.column))?;
    let stream = lag_embed(&standardize_causal(&series.values), a.lags)?;
    let report = walk_forward(&spec, &stream, &grid, a.workers)?;

    create_dir(&a.out)?;
    let folds_path = a.out.join("folds.csv");
    write_file(&folds_path, &report.fold_csv())?;
    let grid_path = a.out.join("grid.csv");
    let mut grid_csv = String::from("model,window,dim,bandwidth,lambda,val_mse\n");
    for g in &report.grid {
        let p = &g.params;
        grid_csv.push_str(&format!("{},{},{},{},{},{:e}\n", p.kind, p.window, p.dim, p.bandwidth, p.lambda, g.val_mse));
    }
    write_file(&grid_path, &grid_csv)?;

    let config = serde_json::json!({
        "csv": a.csv,
        "column": a.column,
        "model": a.model,
        "dims": a.dims,
        "lambda": a.lambda,
        "lags": a.lags,
        "windows": windows,
        "bandwidths": bandwidths,
        "folds": spec,
        "workers": a.workers,
        "selected": report.selected,
    });
    let mut seeds = BTreeMap::from([("feature_map_base".to_string(), a.seed)]);
    if a.model.uses_features() {
        seeds.insert(format!("feature_map_d{}", a.dims), ewrls::harness::derive_seed(a.seed, a.dims));
    }
    RunManifest::new("run", &config, seeds, vec![folds_path.clone(), grid_path.clone()])?.write(&a.out.join("manifest.json"))?;

    let p = &report.selected;
    println!("selected {} window={} bandwidth={:.4}", p.kind, p.window, p.bandwidth);
    println!("mean test ResMSE={:.6} ResVar={:.6}", report.mean_test_mse, report.mean_test_var);
    println!("wrote {}", folds_path.display());
    Ok(())
}

fn cmd_verify(a: VerifyArgs) -> Result<()> {
    if let Some(t) = a.rank_tolerance {
        if !(t > 0.0 && t.is_finite()) {
            return Err(usage("--rank-tolerance must be positive"));
        }
    }
    let opts = VerifyOptions { quick: a.quick, rank_tolerance: a.rank_tolerance, seed: a.seed };
    let start = std::time::Instant::now();
    let checks = run_suite(&opts)?;
    let failed = checks.iter().filter(|c| !c.passed).count();
    for c in &checks {
        let status = if c.passed { "PASS" } else { "FAIL" };
        println!("{status} {:<42} value={:.3e} tol={:.0e}  {}", c.name, c.value, c.tolerance, c.detail);
    }
    println!("{} checks, {} failed, {:.1} s", checks.len(), failed, start.elapsed().as_secs_f64());
    if let Some(dir) = &a.out {
        create_dir(dir)?;
        let path = dir.join("verify.csv");
        let mut text = String::from("check,passed,value,tolerance,detail\n");
        for c in &checks {
            text.push_str(&format!("{},{},{:e},{:e},{}\n", c.name, c.passed, c.value, c.tolerance, c.detail.replace(',', ";")));
        }
        write_file(&path, &text)?;
        let seeds = BTreeMap::from([("fuzz".to_string(), a.seed)]);
        RunManifest::new("verify", &opts, seeds, vec![path])?.write(&dir.join("manifest.json"))?;
    }
    if failed > 0 {
        return Err(VerifyFailed { failed, total: checks.len() }.into());
    }
    Ok(())
}
