//! Experiment drivers: prequential runs, dimension sweeps, runtime
//! benchmarks, oracle traces and walk-forward grid search.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{CovRlsState, KrlsState, QrdRlsState, DEFAULT_RIDGE};
use crate::data::{gen_nonlinear_ar, prepare_stream, LaggedSample};
use crate::error::{Error, Result};
use crate::filter::{FilterState, StepOutput};
use crate::linalg::matrix::max_abs_diff;
use crate::linalg::{batch_weighted_minnorm, DenseMatrix, TAU_RANK};
use crate::rff::FeatureMap;

/// Running mean and population variance (Welford). Non-finite inputs are
/// counted separately and do not enter the moments.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ResidualStats {
    pub count: u64,
    pub mean: f64,
    m2: f64,
    pub non_finite: u64,
}

impl ResidualStats {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, x: f64) {
        if !x.is_finite() {
            self.non_finite += 1;
            return;
        }
        self.count += 1;
        let delta = x - self.mean;
        self.mean += delta / self.count as f64;
        self.m2 += delta * (x - self.mean);
    }

    pub fn variance(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            (self.m2 / self.count as f64).max(0.0)
        }
    }

    /// Chan et al. pairwise combination.
    pub fn merge(&mut self, other: &ResidualStats) {
        if other.count == 0 {
            self.non_finite += other.non_finite;
            return;
        }
        if self.count == 0 {
            let nf = self.non_finite;
            *self = *other;
            self.non_finite += nf;
            return;
        }
        let n = (self.count + other.count) as f64;
        let delta = other.mean - self.mean;
        self.mean += delta * other.count as f64 / n;
        self.m2 += other.m2 + delta * delta * self.count as f64 * other.count as f64 / n;
        self.count += other.count;
        self.non_finite += other.non_finite;
    }

    pub fn from_slice(values: &[f64]) -> Self {
        let mut s = Self::new();
        values.iter().for_each(|&v| s.push(v));
        s
    }
}

/// SplitMix64 mix of a base seed and a dimension, so every `D` of a sweep
/// gets its own reproducible feature map.
pub fn derive_seed(seed: u64, dim: usize) -> u64 {
    let mut z = seed ^ (dim as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Abo,
    CovRls,
    QrdRls,
    Krls,
}

impl ModelKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ModelKind::Abo => "abo",
            ModelKind::CovRls => "cov_rls",
            ModelKind::QrdRls => "qrd_rls",
            ModelKind::Krls => "krls",
        }
    }

    /// Whether the model regresses on random features (and so has a
    /// weight vector comparable with the batch oracle).
    pub fn uses_features(&self) -> bool {
        matches!(self, ModelKind::Abo | ModelKind::CovRls)
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "abo" => Ok(ModelKind::Abo),
            "cov" | "cov_rls" => Ok(ModelKind::CovRls),
            "qrd" | "qrd_rls" => Ok(ModelKind::QrdRls),
            "krls" | "krls_rbf" => Ok(ModelKind::Krls),
            other => Err(Error::InvalidArgument(format!("unknown model {other:?}"))),
        }
    }
}

/// Everything needed to build one model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub kind: ModelKind,
    /// Window length `N` (or `W`).
    pub window: usize,
    pub lambda: f64,
    /// Random-feature dimension `D` (ignored by QRD-RLS and KRLS).
    pub dim: usize,
    /// Kernel length-scale `σ` (ignored by QRD-RLS).
    pub bandwidth: f64,
    pub lags: usize,
    pub ridge: f64,
    /// Base seed; the feature map uses `derive_seed(seed, dim)`.
    pub seed: u64,
}

impl ModelParams {
    pub fn abo(window: usize, dim: usize, bandwidth: f64, lambda: f64, lags: usize, seed: u64) -> Self {
        Self { kind: ModelKind::Abo, window, lambda, dim, bandwidth, lags, ridge: DEFAULT_RIDGE, seed }
    }

    pub fn with_kind(&self, kind: ModelKind) -> Self {
        Self { kind, ..self.clone() }
    }
}

/// Weights of a recursive model next to the weighted system they should
/// solve, for comparison with [`batch_weighted_minnorm`].
pub struct OracleView {
    pub beta: Vec<f64>,
    pub z: DenseMatrix,
    pub y: Vec<f64>,
    pub lambda: f64,
}

impl OracleView {
    /// `‖β − β_batch‖_∞`.
    pub fn deviation(&self) -> Result<f64> {
        let reference = batch_weighted_minnorm(&self.z, &self.y, self.lambda)?;
        Ok(max_abs_diff(&self.beta, &reference))
    }
}

/// Common stepping interface over the filter and the baselines. Models
/// consume raw lag vectors; feature models embed internally.
pub trait OnlineModel: Send {
    fn kind(&self) -> ModelKind;

    /// Prequential step: predict, then learn from `(x, y)`.
    fn step(&mut self, x: &[f64], y: f64, track_condition: bool) -> Result<StepOutput>;

    fn restarts(&self) -> u64 {
        0
    }

    fn divergences(&self) -> u64 {
        0
    }

    fn oracle_view(&self) -> Option<OracleView> {
        None
    }
}

pub struct AboModel {
    map: FeatureMap,
    filter: FilterState,
    z: Vec<f64>,
}

impl AboModel {
    pub fn filter(&self) -> &FilterState {
        &self.filter
    }

    pub fn filter_mut(&mut self) -> &mut FilterState {
        &mut self.filter
    }

    pub fn map(&self) -> &FeatureMap {
        &self.map
    }
}

impl OnlineModel for AboModel {
    fn kind(&self) -> ModelKind {
        ModelKind::Abo
    }

    fn step(&mut self, x: &[f64], y: f64, track_condition: bool) -> Result<StepOutput> {
        self.map.embed_into(x, &mut self.z)?;
        self.filter.step_with(&self.z, y, track_condition)
    }

    fn restarts(&self) -> u64 {
        self.filter.restart_count()
    }

    fn oracle_view(&self) -> Option<OracleView> {
        let (z, y) = self.filter.window();
        Some(OracleView { beta: self.filter.beta().to_vec(), z, y, lambda: self.filter.lambda() })
    }
}

pub struct CovRlsModel {
    map: FeatureMap,
    state: CovRlsState,
    z: Vec<f64>,
}

impl CovRlsModel {
    pub fn state(&self) -> &CovRlsState {
        &self.state
    }
}

impl OnlineModel for CovRlsModel {
    fn kind(&self) -> ModelKind {
        ModelKind::CovRls
    }

    fn step(&mut self, x: &[f64], y: f64, _track_condition: bool) -> Result<StepOutput> {
        self.map.embed_into(x, &mut self.z)?;
        self.state.step(&self.z, y)
    }

    fn divergences(&self) -> u64 {
        self.state.divergences()
    }

    fn oracle_view(&self) -> Option<OracleView> {
        let (z, y) = self.state.window();
        Some(OracleView { beta: self.state.beta().to_vec(), z, y, lambda: self.state.lambda() })
    }
}

impl OnlineModel for QrdRlsState {
    fn kind(&self) -> ModelKind {
        ModelKind::QrdRls
    }

    fn step(&mut self, x: &[f64], y: f64, track_condition: bool) -> Result<StepOutput> {
        let mut out = QrdRlsState::step(self, x, y)?;
        if !track_condition {
            out.condition_number = f64::NAN;
        }
        Ok(out)
    }

    fn restarts(&self) -> u64 {
        self.failed_downdates()
    }
}

impl OnlineModel for KrlsState {
    fn kind(&self) -> ModelKind {
        ModelKind::Krls
    }

    fn step(&mut self, x: &[f64], y: f64, _track_condition: bool) -> Result<StepOutput> {
        KrlsState::step(self, x, y)
    }
}

fn embed_window(map: &FeatureMap, init: &[LaggedSample]) -> Result<(DenseMatrix, Vec<f64>)> {
    let rows = init.iter().map(|s| map.embed(&s.x)).collect::<Result<Vec<_>>>()?;
    let y = init.iter().map(|s| s.y).collect();
    Ok((DenseMatrix::from_rows(&rows)?, y))
}

/// Builds a model warmed up on `init` (exactly `params.window` samples).
pub fn build_model(params: &ModelParams, init: &[LaggedSample]) -> Result<Box<dyn OnlineModel>> {
    if init.len() != params.window {
        return Err(Error::DimensionMismatch { expected: params.window, got: init.len() });
    }
    if let Some(s) = init.first() {
        if s.x.len() != params.lags {
            return Err(Error::DimensionMismatch { expected: params.lags, got: s.x.len() });
        }
    }
    match params.kind {
        ModelKind::Abo | ModelKind::CovRls => {
            let map = FeatureMap::sample(params.lags, params.dim, params.bandwidth, derive_seed(params.seed, params.dim))?;
            let (z0, y0) = embed_window(&map, init)?;
            let z = vec![0.0; params.dim];
            if params.kind == ModelKind::Abo {
                let filter = FilterState::init(&z0, &y0, params.lambda)?;
                Ok(Box::new(AboModel { map, filter, z }))
            } else {
                let state = CovRlsState::init(&z0, &y0, params.lambda)?;
                Ok(Box::new(CovRlsModel { map, state, z }))
            }
        }
        ModelKind::QrdRls => {
            let mut m = QrdRlsState::new(params.lags, params.window, params.ridge)?;
            for s in init {
                m.push(&s.x, s.y)?;
            }
            Ok(Box::new(m))
        }
        ModelKind::Krls => {
            let mut m = KrlsState::new(params.window, params.bandwidth, params.ridge)?;
            for s in init {
                m.push(&s.x, s.y)?;
            }
            Ok(Box::new(m))
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunOptions {
    pub track_condition: bool,
    pub oracle: bool,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct RunResult {
    pub train: ResidualStats,
    /// Statistics of `|y − ŷ|`.
    pub test: ResidualStats,
    pub cond: ResidualStats,
    /// Per-step `|y − ŷ|`.
    pub test_trace: Vec<f64>,
    /// Per-step signed residuals `y − ŷ`.
    pub residuals: Vec<f64>,
    /// Per-step oracle deviation (empty unless requested).
    pub oracle_trace: Vec<f64>,
    pub max_condition: f64,
    pub wall_ms: f64,
    pub restarts: u64,
    pub divergences: u64,
}

impl RunResult {
    pub fn test_median(&self) -> f64 {
        median(&self.test_trace)
    }

    pub fn oracle_max(&self) -> f64 {
        self.oracle_trace.iter().copied().fold(f64::NAN, |a, b| if a.is_nan() || b > a { b } else { a })
    }

    pub fn oracle_median(&self) -> f64 {
        median(&self.oracle_trace)
    }

    /// Mean squared one-step error.
    pub fn res_mse(&self) -> f64 {
        let n = self.residuals.len().max(1) as f64;
        self.residuals.iter().map(|r| r * r).sum::<f64>() / n
    }

    /// Variance of the signed one-step error.
    pub fn res_var(&self) -> f64 {
        ResidualStats::from_slice(&self.residuals).variance()
    }
}

pub fn median(values: &[f64]) -> f64 {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| !x.is_nan()).collect();
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Runs `model` over `stream` one sample at a time.
pub fn prequential_run(model: &mut dyn OnlineModel, stream: &[LaggedSample], opts: RunOptions) -> Result<RunResult> {
    let mut out = RunResult { max_condition: f64::NAN, ..Default::default() };
    out.test_trace.reserve(stream.len());
    out.residuals.reserve(stream.len());
    let start = Instant::now();
    for s in stream {
        let step = model.step(&s.x, s.y, opts.track_condition)?;
        let abs = step.test_residual.abs();
        out.test.push(abs);
        out.test_trace.push(abs);
        out.residuals.push(step.test_residual);
        out.train.push(step.train_residual_mean);
        if opts.track_condition && !step.condition_number.is_nan() {
            out.cond.push(step.condition_number);
            if out.max_condition.is_nan() || step.condition_number > out.max_condition {
                out.max_condition = step.condition_number;
            }
        }
        if opts.oracle {
            if let Some(view) = model.oracle_view() {
                out.oracle_trace.push(view.deviation().unwrap_or(f64::INFINITY));
            }
        }
    }
    out.wall_ms = start.elapsed().as_secs_f64() * 1e3;
    out.restarts = model.restarts();
    out.divergences = model.divergences();
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepConfig {
    pub dims: Vec<usize>,
    pub window: usize,
    pub lambda: f64,
    pub steps: usize,
    pub lags: usize,
    pub bandwidth: f64,
    pub seed: u64,
    pub model: ModelKind,
    /// Length of the generated series.
    pub series_len: usize,
    pub ridge: f64,
    pub track_condition: bool,
    pub oracle: bool,
    /// Worker lanes for the sweep (`0` = all cores).
    pub workers: usize,
}

impl Default for SweepConfig {
    fn default() -> Self {
        let window = 20;
        let mut dims: Vec<usize> = (1..=14).map(|k| 1usize << k).collect();
        dims.push(window);
        Self {
            dims,
            window,
            lambda: 1.0,
            steps: 10_000,
            lags: 7,
            bandwidth: 1.0,
            seed: 1,
            model: ModelKind::Abo,
            series_len: 10_500,
            ridge: DEFAULT_RIDGE,
            track_condition: true,
            oracle: false,
            workers: 0,
        }
    }
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dims.is_empty() || self.dims.contains(&0) {
            return Err(Error::InvalidArgument("dims must be non-empty and positive".into()));
        }
        if self.window == 0 || self.steps == 0 || self.lags == 0 {
            return Err(Error::InvalidArgument("window, steps and lags must be positive".into()));
        }
        if self.steps <= self.window {
            return Err(Error::InvalidArgument(format!(
                "steps ({}) must exceed the window ({})",
                self.steps, self.window
            )));
        }
        if !(self.lambda > 0.0 && self.lambda <= 1.0) {
            return Err(Error::InvalidArgument(format!("forgetting factor {} outside (0, 1]", self.lambda)));
        }
        if !(self.bandwidth > 0.0 && self.bandwidth.is_finite()) {
            return Err(Error::InvalidArgument(format!("bandwidth must be positive, got {}", self.bandwidth)));
        }
        Ok(())
    }

    pub fn params(&self, dim: usize) -> ModelParams {
        ModelParams {
            kind: self.model,
            window: self.window,
            lambda: self.lambda,
            dim,
            bandwidth: self.bandwidth,
            lags: self.lags,
            ridge: self.ridge,
            seed: self.seed,
        }
    }

    /// The shared prequential stream: `window` warm-up samples followed by
    /// `steps` evaluation samples.
    pub fn stream(&self) -> Result<Vec<LaggedSample>> {
        let series = gen_nonlinear_ar(self.series_len, self.seed)?;
        prepare_stream(&series.values, self.lags, self.window, self.steps)
    }
}

/// One row of a dimension sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub dim: usize,
    pub log2_dim: f64,
    /// `D == N`, the interpolation threshold.
    pub interpolation: bool,
    pub train: ResidualStats,
    pub test: ResidualStats,
    pub test_median: f64,
    pub cond: ResidualStats,
    /// Mean condition number reported as infinite (see [`cond_is_infinite`]).
    pub cond_infinite: bool,
    pub max_condition: f64,
    pub wall_ms: f64,
    pub oracle_dev_max: f64,
    pub oracle_dev_median: f64,
    pub restarts: u64,
    pub divergences: u64,
    /// Set when the model could not be built for this `D`.
    pub skipped: Option<String>,
}

/// The mean of `κ` is reported as infinite for a square window system:
/// the smallest singular value of a square random design has a density
/// that does not vanish at zero, so `E[κ]` diverges and the sample mean
/// is not an estimate of anything. It is also infinite when any step was
/// numerically singular (`κ ≥ 1/τ_rank` or non-finite).
pub fn cond_is_infinite(dim: usize, window: usize, cond: &ResidualStats, max_condition: f64) -> bool {
    dim == window || cond.non_finite > 0 || max_condition >= 1.0 / TAU_RANK
}

fn run_in_pool<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if workers > 0 {
        builder = builder.num_threads(workers);
    }
    let pool = builder.build().map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

/// Runs one prequential pass per `D` on the same stream, in parallel.
pub fn sweep_dimensions(cfg: &SweepConfig) -> Result<Vec<SweepRow>> {
    cfg.validate()?;
    let stream = cfg.stream()?;
    let (init, eval) = stream.split_at(cfg.window);
    let opts = RunOptions { track_condition: cfg.track_condition, oracle: cfg.oracle };
    let rows = run_in_pool(cfg.workers, || {
        cfg.dims
            .par_iter()
            .map(|&dim| sweep_one(cfg, dim, init, eval, opts))
            .collect::<Result<Vec<_>>>()
    })??;
    Ok(rows)
}

fn sweep_one(cfg: &SweepConfig, dim: usize, init: &[LaggedSample], eval: &[LaggedSample], opts: RunOptions) -> Result<SweepRow> {
    let mut row = SweepRow {
        dim,
        log2_dim: (dim as f64).log2(),
        interpolation: dim == cfg.window && cfg.model.uses_features(),
        train: ResidualStats::new(),
        test: ResidualStats::new(),
        test_median: f64::NAN,
        cond: ResidualStats::new(),
        cond_infinite: false,
        max_condition: f64::NAN,
        wall_ms: 0.0,
        oracle_dev_max: f64::NAN,
        oracle_dev_median: f64::NAN,
        restarts: 0,
        divergences: 0,
        skipped: None,
    };
    let mut model = match build_model(&cfg.params(dim), init) {
        Ok(m) => m,
        Err(Error::InvalidArgument(msg)) => {
            row.skipped = Some(msg);
            return Ok(row);
        }
        Err(e) => return Err(e),
    };
    let res = prequential_run(model.as_mut(), eval, opts)?;
    row.train = res.train;
    row.test = res.test;
    row.test_median = res.test_median();
    row.cond = res.cond;
    row.max_condition = res.max_condition;
    let threshold = if cfg.model.uses_features() { cfg.window } else { 0 };
    row.cond_infinite = opts.track_condition && cond_is_infinite(dim, threshold, &res.cond, res.max_condition);
    row.wall_ms = res.wall_ms;
    row.oracle_dev_max = res.oracle_max();
    row.oracle_dev_median = res.oracle_median();
    row.restarts = res.restarts;
    row.divergences = res.divergences;
    Ok(row)
}

pub const SWEEP_CSV_HEADER: &str = "dim,log2_dim,interpolation,train_mean,train_var,test_mean,test_var,test_median,cond_mean,cond_var,cond_mean_raw,cond_max,wall_ms,oracle_dev_max,oracle_dev_median,restarts,divergences,skipped";

fn fmt_f(v: f64) -> String {
    if v.is_nan() {
        "NA".into()
    } else if v.is_infinite() {
        if v > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{v:.10e}")
    }
}

impl SweepRow {
    pub fn csv_line(&self) -> String {
        let (cond_mean, cond_var) = if self.cond_infinite {
            (f64::INFINITY, f64::NAN)
        } else if self.cond.count == 0 {
            (f64::NAN, f64::NAN)
        } else {
            (self.cond.mean, self.cond.variance())
        };
        let raw = if self.cond.count == 0 { f64::NAN } else { self.cond.mean };
        let skipped = self.skipped.as_deref().unwrap_or("").replace(',', ";");
        [
            self.dim.to_string(),
            format!("{:.4}", self.log2_dim),
            (self.interpolation as u8).to_string(),
            fmt_f(self.train.mean),
            fmt_f(self.train.variance()),
            fmt_f(self.test.mean),
            fmt_f(self.test.variance()),
            fmt_f(self.test_median),
            fmt_f(cond_mean),
            fmt_f(cond_var),
            fmt_f(raw),
            fmt_f(self.max_condition),
            format!("{:.3}", self.wall_ms),
            fmt_f(self.oracle_dev_max),
            fmt_f(self.oracle_dev_median),
            self.restarts.to_string(),
            self.divergences.to_string(),
            skipped,
        ]
        .join(",")
    }
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut s = String::from(SWEEP_CSV_HEADER);
    s.push('\n');
    for r in rows {
        s.push_str(&r.csv_line());
        s.push('\n');
    }
    s
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub dim: usize,
    pub repetitions: usize,
    pub steps: usize,
    pub mean_ms: f64,
    pub sd_ms: f64,
    pub cv_pct: f64,
}

pub const BENCH_CSV_HEADER: &str = "dim,log2_dim,repetitions,steps,mean_ms,sd_ms,cv_pct";

impl BenchRow {
    pub fn csv_line(&self) -> String {
        format!(
            "{},{:.4},{},{},{:.6},{:.6},{:.3}",
            self.dim,
            (self.dim as f64).log2(),
            self.repetitions,
            self.steps,
            self.mean_ms,
            self.sd_ms,
            self.cv_pct
        )
    }
}

pub fn bench_csv(rows: &[BenchRow]) -> String {
    let mut s = String::from(BENCH_CSV_HEADER);
    s.push('\n');
    for r in rows {
        s.push_str(&r.csv_line());
        s.push('\n');
    }
    s
}

/// Wall time of `cfg.steps` predict-update steps per `D`, repeated
/// `repetitions` times from the same warm state. Runs on the calling
/// thread only, with the monotonic clock and without condition numbers.
pub fn bench_runtime(cfg: &SweepConfig, repetitions: usize) -> Result<Vec<BenchRow>> {
    cfg.validate()?;
    if repetitions == 0 {
        return Err(Error::InvalidArgument("repetitions must be positive".into()));
    }
    let stream = cfg.stream()?;
    let (init, eval) = stream.split_at(cfg.window);
    let opts = RunOptions { track_condition: false, oracle: false };
    let mut rows = Vec::with_capacity(cfg.dims.len());
    for &dim in &cfg.dims {
        let params = cfg.params(dim);
        // One untimed pass to warm caches and the allocator.
        let mut warm = build_model(&params, init)?;
        prequential_run(warm.as_mut(), &eval[..eval.len().min(50)], opts)?;
        let mut times = ResidualStats::new();
        for _ in 0..repetitions {
            let mut model = build_model(&params, init)?;
            let start = Instant::now();
            for s in eval {
                std::hint::black_box(model.step(&s.x, s.y, false)?);
            }
            times.push(start.elapsed().as_secs_f64() * 1e3);
        }
        let sd = times.variance().sqrt();
        rows.push(BenchRow {
            dim,
            repetitions,
            steps: eval.len(),
            mean_ms: times.mean,
            sd_ms: sd,
            cv_pct: 100.0 * sd / times.mean,
        });
    }
    Ok(rows)
}

/// Per-step `‖β_recursive − β_batch‖_∞` of the configured model at one `D`.
pub fn oracle_trace(cfg: &SweepConfig, dim: usize) -> Result<Vec<f64>> {
    cfg.validate()?;
    if !cfg.model.uses_features() {
        return Err(Error::InvalidArgument(format!("{} has no feature-space weights", cfg.model)));
    }
    let stream = cfg.stream()?;
    let (init, eval) = stream.split_at(cfg.window);
    let mut model = build_model(&cfg.params(dim), init)?;
    let res = prequential_run(model.as_mut(), eval, RunOptions { track_condition: false, oracle: true })?;
    Ok(res.oracle_trace)
}

/// Layout of walk-forward evaluation over a sample stream.
///
/// Validation fold `k` scores samples `[warmup + k·stride, … + val_len)`.
/// Test folds follow the last validation segment back to back, each made
/// of `warmup` initialisation samples and `test_len` scored samples, so
/// no scored index is shared between folds. Every scored segment is
/// preceded by at least `warmup` samples used to initialise the model.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldSpec {
    pub warmup: usize,
    pub val_len: usize,
    pub test_len: usize,
    pub n_val_folds: usize,
    pub n_test_folds: usize,
    pub stride: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FoldKind {
    Validation,
    Test,
}

/// Scored range `[start, end)` of one fold.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub kind: FoldKind,
    pub index: usize,
    pub start: usize,
    pub end: usize,
}

impl FoldSpec {
    /// Eight overlapping validation folds and five disjoint test folds.
    pub fn standard(warmup: usize, val_len: usize, test_len: usize) -> Self {
        Self { warmup, val_len, test_len, n_val_folds: 8, n_test_folds: 5, stride: val_len.div_ceil(2).max(1) }
    }

    pub fn validate(&self) -> Result<()> {
        if self.warmup == 0 || self.val_len == 0 || self.test_len == 0 || self.stride == 0 {
            return Err(Error::InvalidArgument("fold lengths and stride must be positive".into()));
        }
        if self.n_val_folds == 0 || self.n_test_folds == 0 {
            return Err(Error::InvalidArgument("need at least one validation and one test fold".into()));
        }
        Ok(())
    }

    fn validation_end(&self) -> usize {
        self.warmup + (self.n_val_folds - 1) * self.stride + self.val_len
    }

    /// Samples needed for the whole layout.
    pub fn required_len(&self) -> usize {
        self.validation_end() + self.n_test_folds * (self.warmup + self.test_len)
    }

    pub fn folds(&self) -> Vec<Fold> {
        let mut out = Vec::with_capacity(self.n_val_folds + self.n_test_folds);
        for k in 0..self.n_val_folds {
            let start = self.warmup + k * self.stride;
            out.push(Fold { kind: FoldKind::Validation, index: k, start, end: start + self.val_len });
        }
        let base = self.validation_end();
        for j in 0..self.n_test_folds {
            let start = base + j * (self.warmup + self.test_len) + self.warmup;
            out.push(Fold { kind: FoldKind::Test, index: j, start, end: start + self.test_len });
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldMetrics {
    pub kind: FoldKind,
    pub fold: usize,
    pub start: usize,
    pub end: usize,
    pub res_mse: f64,
    pub res_var: f64,
    pub restarts: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridScore {
    pub params: ModelParams,
    /// Mean validation ResMSE, `inf` if the configuration failed.
    pub val_mse: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WalkForwardReport {
    pub selected: ModelParams,
    pub grid: Vec<GridScore>,
    pub validation: Vec<FoldMetrics>,
    pub test: Vec<FoldMetrics>,
    pub mean_test_mse: f64,
    pub mean_test_var: f64,
}

pub const FOLD_CSV_HEADER: &str = "model,kind,fold,start,end,window,dim,bandwidth,lambda,res_mse,res_var,restarts";

impl WalkForwardReport {
    pub fn fold_csv(&self) -> String {
        let p = &self.selected;
        let mut s = String::from(FOLD_CSV_HEADER);
        s.push('\n');
        for m in self.validation.iter().chain(&self.test) {
            let kind = match m.kind {
                FoldKind::Validation => "validation",
                FoldKind::Test => "test",
            };
            s.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{},{},{}\n",
                p.kind,
                kind,
                m.fold,
                m.start,
                m.end,
                p.window,
                p.dim,
                p.bandwidth,
                p.lambda,
                fmt_f(m.res_mse),
                fmt_f(m.res_var),
                m.restarts
            ));
        }
        s.push_str(&format!(
            "{},test_mean,,,,{},{},{},{},{},{},\n",
            p.kind,
            p.window,
            p.dim,
            p.bandwidth,
            p.lambda,
            fmt_f(self.mean_test_mse),
            fmt_f(self.mean_test_var)
        ));
        s
    }
}

fn eval_fold(params: &ModelParams, stream: &[LaggedSample], fold: &Fold) -> Result<FoldMetrics> {
    let init = &stream[fold.start - params.window..fold.start];
    let mut model = build_model(params, init)?;
    let res = prequential_run(model.as_mut(), &stream[fold.start..fold.end], RunOptions::default())?;
    Ok(FoldMetrics {
        kind: fold.kind,
        fold: fold.index,
        start: fold.start,
        end: fold.end,
        res_mse: res.res_mse(),
        res_var: res.res_var(),
        restarts: res.restarts,
    })
}

/// Grid search over `grid` on the validation folds (lowest mean ResMSE,
/// ties to the earlier entry), then evaluation of the winner on the test
/// folds. Grid points run in parallel on `workers` lanes.
pub fn walk_forward(spec: &FoldSpec, stream: &[LaggedSample], grid: &[ModelParams], workers: usize) -> Result<WalkForwardReport> {
    spec.validate()?;
    if grid.is_empty() {
        return Err(Error::InvalidArgument("parameter grid is empty".into()));
    }
    if let Some(p) = grid.iter().find(|p| p.window > spec.warmup) {
        return Err(Error::InvalidArgument(format!(
            "grid window {} exceeds the fold warm-up {}",
            p.window, spec.warmup
        )));
    }
    let required = spec.required_len();
    if stream.len() < required {
        return Err(Error::InsufficientData { required, available: stream.len() });
    }
    let folds = spec.folds();
    let val_folds: Vec<Fold> = folds.iter().copied().filter(|f| f.kind == FoldKind::Validation).collect();
    let test_folds: Vec<Fold> = folds.iter().copied().filter(|f| f.kind == FoldKind::Test).collect();

    let scored: Vec<(GridScore, Vec<FoldMetrics>)> = run_in_pool(workers, || {
        grid.par_iter()
            .map(|params| {
                let metrics: Result<Vec<FoldMetrics>> = val_folds.iter().map(|f| eval_fold(params, stream, f)).collect();
                match metrics {
                    Ok(m) => {
                        let mse = m.iter().map(|x| x.res_mse).sum::<f64>() / m.len() as f64;
                        let mse = if mse.is_finite() { mse } else { f64::INFINITY };
                        (GridScore { params: params.clone(), val_mse: mse }, m)
                    }
                    Err(_) => (GridScore { params: params.clone(), val_mse: f64::INFINITY }, Vec::new()),
                }
            })
            .collect()
    })?;

    let mut best = 0;
    for (i, (s, _)) in scored.iter().enumerate() {
        if s.val_mse < scored[best].0.val_mse {
            best = i;
        }
    }
    if !scored[best].0.val_mse.is_finite() {
        return Err(Error::InvalidArgument("every grid configuration failed on the validation folds".into()));
    }
    let selected = scored[best].0.params.clone();
    let validation = scored[best].1.clone();
    let test = test_folds.iter().map(|f| eval_fold(&selected, stream, f)).collect::<Result<Vec<_>>>()?;
    let k = test.len() as f64;
    let mean_test_mse = test.iter().map(|m| m.res_mse).sum::<f64>() / k;
    let mean_test_var = test.iter().map(|m| m.res_var).sum::<f64>() / k;
    Ok(WalkForwardReport {
        selected,
        grid: scored.into_iter().map(|(s, _)| s).collect(),
        validation,
        test,
        mean_test_mse,
        mean_test_var,
    })
}

/// Window sizes searched by default.
pub const GRID_WINDOWS: [usize; 6] = [21, 51, 101, 201, 421, 761];

/// `points` log-spaced bandwidths from 0.1 to 16.
pub fn bandwidth_grid(points: usize) -> Vec<f64> {
    let (lo, hi) = (0.1f64, 16.0f64);
    match points {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..points).map(|i| lo * (hi / lo).powf(i as f64 / (points - 1) as f64)).collect(),
    }
}

/// Cartesian grid over windows and bandwidths for `base.kind`. QRD-RLS
/// ignores the bandwidth, so it only varies the window.
pub fn default_grid(base: &ModelParams, windows: &[usize], bandwidths: &[f64]) -> Vec<ModelParams> {
    let mut out = Vec::new();
    for &w in windows {
        if base.kind == ModelKind::QrdRls {
            if w >= base.lags {
                out.push(ModelParams { window: w, ..base.clone() });
            }
            continue;
        }
        for &b in bandwidths {
            out.push(ModelParams { window: w, bandwidth: b, ..base.clone() });
        }
    }
    out
}
