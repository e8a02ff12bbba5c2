//! Invariant suite run by `ewrls verify`: oracle equivalence, Penrose
//! axioms, the weighted Gramian downdate identity, orthogonality of `Q`
//! and null-space removal.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::filter::FilterState;
use crate::harness::{derive_seed, SweepConfig};
use crate::linalg::matrix::{dot, max_abs_diff, norm2};
use crate::linalg::{batch_weighted_minnorm, penrose_residual, DenseMatrix, DowndateBranch};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    /// Worst observed value of the checked quantity.
    pub value: f64,
    pub tolerance: f64,
    pub detail: String,
}

impl CheckResult {
    fn new(name: &str, value: f64, tolerance: f64, detail: String) -> Self {
        Self { name: name.into(), passed: value <= tolerance, value, tolerance, detail }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct VerifyOptions {
    /// Smaller configurations and shorter runs.
    pub quick: bool,
    /// Overrides the rank-test threshold of every filter (fault injection).
    pub rank_tolerance: Option<f64>,
    pub seed: u64,
}

/// Gaussian random rows for fuzzing.
pub struct RowSource {
    rng: ChaCha20Rng,
}

impl RowSource {
    pub fn new(seed: u64) -> Self {
        Self { rng: ChaCha20Rng::seed_from_u64(seed) }
    }

    pub fn row(&mut self, d: usize) -> Vec<f64> {
        (0..d).map(|_| StandardNormal.sample(&mut self.rng)).collect()
    }

    pub fn scalar(&mut self) -> f64 {
        StandardNormal.sample(&mut self.rng)
    }

    pub fn matrix(&mut self, n: usize, d: usize) -> DenseMatrix {
        let rows: Vec<Vec<f64>> = (0..n).map(|_| self.row(d)).collect();
        DenseMatrix::from_rows(&rows).expect("equal row lengths")
    }
}

/// `max_t ‖β_t − β_batch,t‖_∞` for the filter on the synthetic stream.
pub fn oracle_max_deviation(window: usize, dim: usize, lambda: f64, steps: usize, seed: u64, rank_tolerance: Option<f64>) -> Result<f64> {
    let cfg = SweepConfig { window, lambda, steps, seed, dims: vec![dim], ..SweepConfig::default() };
    let stream = cfg.stream()?;
    let (init, eval) = stream.split_at(window);
    let map = crate::rff::FeatureMap::sample(cfg.lags, dim, cfg.bandwidth, derive_seed(seed, dim))?;
    let rows = init.iter().map(|s| map.embed(&s.x)).collect::<Result<Vec<_>>>()?;
    let y0: Vec<f64> = init.iter().map(|s| s.y).collect();
    let mut f = FilterState::init(&DenseMatrix::from_rows(&rows)?, &y0, lambda)?;
    if let Some(tau) = rank_tolerance {
        f.set_rank_tolerance(tau);
    }
    let mut worst: f64 = 0.0;
    for s in eval {
        let z = map.embed(&s.x)?;
        f.advance(&z, s.y)?;
        let (zw, yw) = f.window();
        let reference = batch_weighted_minnorm(&zw, &yw, lambda)?;
        let dev = max_abs_diff(f.beta(), &reference);
        worst = if dev.is_nan() { f64::INFINITY } else { worst.max(dev) };
    }
    Ok(worst)
}

/// Largest Penrose residual of `(R, R†)` after every update and every
/// downdate of a random stream, plus the final `‖QᵀQ − I‖_max`.
pub fn penrose_fuzz(window: usize, dim: usize, lambda: f64, steps: usize, seed: u64, rank_tolerance: Option<f64>) -> Result<(f64, f64)> {
    let mut src = RowSource::new(seed);
    let z0 = src.matrix(window, dim);
    let y0: Vec<f64> = (0..window).map(|_| src.scalar()).collect();
    let mut f = FilterState::init(&z0, &y0, lambda)?;
    if let Some(tau) = rank_tolerance {
        f.set_rank_tolerance(tau);
    }
    let mut worst: f64 = 0.0;
    let mut track = |f: &FilterState| {
        let r = penrose_residual(f.factors().r(), &f.factors().r_pinv());
        worst = if r.is_nan() { f64::INFINITY } else { worst.max(r) };
    };
    for _ in 0..steps {
        let z = src.row(dim);
        let y = src.scalar();
        f.update(&z, y)?;
        track(&f);
        f.downdate()?;
        track(&f);
    }
    let q = f.factors().q();
    let qtq = q.transpose().matmul(&q)?;
    let orth = qtq.max_abs_diff(&DenseMatrix::identity(q.rows()));
    Ok((worst, orth))
}

/// Largest relative violation of `RᵀR_after = RᵀR_before − λᴺ z_old z_oldᵀ`
/// over a random run, relative to `‖RᵀR_before‖_max`.
pub fn gramian_identity(window: usize, dim: usize, lambda: f64, steps: usize, seed: u64) -> Result<f64> {
    let mut src = RowSource::new(seed);
    let z0 = src.matrix(window, dim);
    let y0: Vec<f64> = (0..window).map(|_| src.scalar()).collect();
    let mut f = FilterState::init(&z0, &y0, lambda)?;
    let weight = lambda.powi(window as i32);
    let mut worst: f64 = 0.0;
    for _ in 0..steps {
        let z = src.row(dim);
        let y = src.scalar();
        f.update(&z, y)?;
        let (zw, _) = f.window();
        let z_old = zw.row(0).to_vec();
        let r_before = f.factors().r().clone();
        let g_before = r_before.transpose().matmul(&r_before)?;
        f.downdate()?;
        let r_after = f.factors().r();
        let g_after = r_after.transpose().matmul(r_after)?;
        let mut expected = g_before.clone();
        for i in 0..dim {
            for j in 0..dim {
                expected.set(i, j, expected.get(i, j) - weight * z_old[i] * z_old[j]);
            }
        }
        let rel = g_after.max_abs_diff(&expected) / g_before.max_abs();
        worst = if rel.is_nan() { f64::INFINITY } else { worst.max(rel) };
    }
    Ok(worst)
}

/// Largest `|kᵀβ| / (‖k‖‖β‖)` after rank-decreasing downdates.
pub fn null_space_removal(window: usize, dim: usize, steps: usize, seed: u64) -> Result<f64> {
    let mut src = RowSource::new(seed);
    let z0 = src.matrix(window, dim);
    let y0: Vec<f64> = (0..window).map(|_| src.scalar()).collect();
    let mut f = FilterState::init(&z0, &y0, 1.0)?;
    let mut worst: f64 = 0.0;
    for _ in 0..steps {
        f.update(&src.row(dim), src.scalar())?;
        let rep = f.downdate()?;
        if rep.branch == Some(DowndateBranch::RankDecreasing) {
            let k = f.last_downdate_gain();
            let scale = norm2(k) * norm2(f.beta());
            if scale > 0.0 {
                worst = worst.max(dot(k, f.beta()).abs() / scale);
            }
        }
    }
    Ok(worst)
}

pub fn run_suite(opts: &VerifyOptions) -> Result<Vec<CheckResult>> {
    let seed = opts.seed;
    let tau = opts.rank_tolerance;
    let (oracle_dims, oracle_steps): (&[usize], usize) =
        if opts.quick { (&[8, 20, 64], 200) } else { (&[8, 20, 64, 1024], 500) };
    let (fuzz_dims, fuzz_steps): (&[usize], usize) = if opts.quick { (&[4, 20, 64], 200) } else { (&[4, 20, 64, 512], 1000) };
    let gram_steps = if opts.quick { 200 } else { 1000 };

    let mut out = Vec::new();
    for &lambda in &[1.0, 0.9] {
        for &d in oracle_dims {
            let dev = oracle_max_deviation(20, d, lambda, oracle_steps, seed, tau)?;
            out.push(CheckResult::new(
                &format!("oracle equivalence D={d} lambda={lambda}"),
                dev,
                1e-6,
                format!("max |beta - beta_batch| over {oracle_steps} steps, N=20"),
            ));
        }
    }
    let mut orth_worst: f64 = 0.0;
    for (i, &d) in fuzz_dims.iter().enumerate() {
        let lambda = if i % 2 == 0 { 1.0 } else { 0.9 };
        let (penrose, orth) = penrose_fuzz(20, d, lambda, fuzz_steps, seed.wrapping_add(d as u64), tau)?;
        orth_worst = orth_worst.max(orth);
        out.push(CheckResult::new(
            &format!("penrose axioms D={d}"),
            penrose,
            1e-8,
            format!("after every update and downdate, {fuzz_steps} steps, lambda={lambda}"),
        ));
    }
    out.push(CheckResult::new("orthogonality of Q", orth_worst, 1e-6, "max |Q^T Q - I| at end of fuzz runs".into()));
    let gram = gramian_identity(20, 64, 0.9, gram_steps, seed.wrapping_add(99))?;
    out.push(CheckResult::new(
        "weighted gramian downdate identity",
        gram,
        1e-8,
        format!("relative to max|R^T R|, N=20, D=64, lambda=0.9, {gram_steps} steps"),
    ));
    let null = null_space_removal(20, 64, gram_steps, seed.wrapping_add(7))?;
    out.push(CheckResult::new("null-space removal", null, 1e-8, "|k^T beta| / (|k||beta|) after rank-decreasing downdates".into()));
    Ok(out)
}
