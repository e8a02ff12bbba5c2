//! Sliding-window exponentially weighted QR-RLS over random features.
//!
//! The filter keeps `Λ Z = Q R` for the current window (oldest row first,
//! row `i` weighted by `sqrt(λ)^(N-1-i)`), the pseudoinverse `R†`, the
//! transformed right-hand side `w = Qᵀ Λ Y` and the weights `β = R† w`.
//! One step is:
//!
//! 1. predict `ŷ = zᵀβ` with the weights of the previous step;
//! 2. scale `R`, `w` by `sqrt(λ)` and `R†` by `1/sqrt(λ)`;
//! 3. append `(z, y)` with Givens rotations and a Greville/Cline update of
//!    `R†`, moving `β` by the gain times the innovation;
//! 4. remove the oldest (now `λ^(N/2)`-weighted) row and correct `R†`, `β`.
//!
//! Whenever a guard trips the whole state is rebuilt from the buffered raw
//! window by one batch factorisation, and `restart_count` is bumped.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::matrix::{axpy, dot};
use crate::linalg::qr::{qr_decompose, DowndateBranch, QrFactors, UpdateWorkspace};
use crate::linalg::svd::{effective_condition_number, weight_rows};
use crate::linalg::DenseMatrix;

/// Rank-preserving downdates with `|1 − vᵀk|` below this trigger one
/// Newton–Schulz refinement of `R†`.
pub const TAU_REFINE: f64 = 1e-2;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FilterState {
    factors: QrFactors,
    beta: Vec<f64>,
    window_z: VecDeque<Vec<f64>>,
    window_y: VecDeque<f64>,
    transformed_rhs: Vec<f64>,
    lambda: f64,
    window_len: usize,
    feature_dim: usize,
    step_count: u64,
    restart_count: u64,
    /// Pseudoinverse refinements after small-denominator downdates.
    #[serde(default)]
    refine_count: u64,
    #[serde(default)]
    rank_tolerance: Option<f64>,
    /// Guard that triggered the most recent cold restart.
    #[serde(default)]
    last_fault: Option<String>,
    #[serde(skip)]
    ws: UpdateWorkspace,
}

/// Result of one prequential step.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepOutput {
    /// `zᵀβ` issued before the observation is used.
    pub prediction: f64,
    /// `y − prediction`.
    pub test_residual: f64,
    /// Mean `|y_i − z_iᵀβ|` over the window after the step.
    pub train_residual_mean: f64,
    /// Effective condition number of `R` after the step (NaN if not tracked).
    pub condition_number: f64,
    /// Whether the step fell back to a batch refactorisation.
    pub restarted: bool,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UpdateReport {
    pub rank_increased: bool,
    pub innovation: f64,
    pub restarted: bool,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DowndateReport {
    pub branch: Option<DowndateBranch>,
    pub denominator: f64,
    pub restarted: bool,
}

impl FilterState {
    /// Batch initialisation from the first window (oldest row first).
    pub fn init(z0: &DenseMatrix, y0: &[f64], lambda: f64) -> Result<Self> {
        let (n, d) = z0.shape();
        if n == 0 || d == 0 {
            return Err(Error::InvalidArgument("initial window must be non-empty".into()));
        }
        if y0.len() != n {
            return Err(Error::DimensionMismatch { expected: n, got: y0.len() });
        }
        if !(lambda > 0.0 && lambda <= 1.0) {
            return Err(Error::InvalidArgument(format!("forgetting factor {lambda} outside (0, 1]")));
        }
        if !z0.is_finite() || y0.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("initial window"));
        }
        let mut state = Self {
            factors: QrFactors::empty(d),
            beta: vec![0.0; d],
            window_z: (0..n).map(|i| z0.row(i).to_vec()).collect(),
            window_y: y0.iter().copied().collect(),
            transformed_rhs: Vec::new(),
            lambda,
            window_len: n,
            feature_dim: d,
            step_count: 0,
            restart_count: 0,
            refine_count: 0,
            rank_tolerance: None,
            last_fault: None,
            ws: UpdateWorkspace::new(),
        };
        state.refactor()?;
        Ok(state)
    }

    /// Rebuilds factors, rhs and weights from the buffered window.
    fn refactor(&mut self) -> Result<()> {
        let rows: Vec<&[f64]> = self.window_z.iter().map(Vec::as_slice).collect();
        let z = DenseMatrix::from_rows(&rows)?;
        let y: Vec<f64> = self.window_y.iter().copied().collect();
        let (zw, yw) = weight_rows(&z, &y, self.lambda);
        self.factors = qr_decompose(&zw)?;
        if let Some(tau) = self.rank_tolerance {
            self.factors.set_rank_tolerance(tau);
        }
        self.transformed_rhs = self.factors.q_t().matvec(&yw)?;
        self.beta = self.factors.pinv_apply(&self.transformed_rhs);
        Ok(())
    }

    /// Overrides the rank-test threshold of the maintained factors. Kept
    /// across cold restarts; meant for fault-injection checks.
    pub fn set_rank_tolerance(&mut self, tau: f64) {
        self.rank_tolerance = Some(tau);
        self.factors.set_rank_tolerance(tau);
    }

    /// Drops all but the newest `window_len` rows and refactorises.
    fn cold_restart(&mut self) -> Result<()> {
        while self.window_z.len() > self.window_len {
            self.window_z.pop_front();
            self.window_y.pop_front();
        }
        self.refactor()?;
        self.restart_count += 1;
        Ok(())
    }

    pub fn predict(&self, z: &[f64]) -> Result<f64> {
        if z.len() != self.feature_dim {
            return Err(Error::DimensionMismatch { expected: self.feature_dim, got: z.len() });
        }
        Ok(dot(z, &self.beta))
    }

    fn check_observation(&self, z: &[f64], y: f64) -> Result<()> {
        if z.len() != self.feature_dim {
            return Err(Error::DimensionMismatch { expected: self.feature_dim, got: z.len() });
        }
        if !y.is_finite() || z.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("observation"));
        }
        Ok(())
    }

    /// Forgetting-factor scaling plus row append. Leaves `N + 1` rows.
    pub fn update(&mut self, z: &[f64], y: f64) -> Result<UpdateReport> {
        self.check_observation(z, y)?;
        let innovation = y - dot(z, &self.beta);
        self.window_z.push_back(z.to_vec());
        self.window_y.push_back(y);
        match self.try_update(z, y, innovation) {
            Ok(rank_increased) => Ok(UpdateReport { rank_increased, innovation, restarted: false }),
            Err(e) => {
                self.last_fault = Some(e.to_string());
                self.cold_restart()?;
                Ok(UpdateReport { rank_increased: false, innovation, restarted: true })
            }
        }
    }

    fn try_update(&mut self, z: &[f64], y: f64, innovation: f64) -> Result<bool> {
        let root = self.lambda.sqrt();
        if root != 1.0 {
            self.factors.scale(root);
            self.transformed_rhs.iter_mut().for_each(|v| *v *= root);
        }
        let outcome = self.factors.append_row(z, &mut self.ws)?;
        self.transformed_rhs.push(y);
        for g in &self.ws.rotations {
            g.apply_vec(&mut self.transformed_rhs);
        }
        axpy(innovation, &self.ws.gain_b, &mut self.beta);
        if self.beta.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("weights after update"));
        }
        Ok(outcome.rank_increased)
    }

    /// Removes the oldest row. A no-op when the window is not over-full.
    pub fn downdate(&mut self) -> Result<DowndateReport> {
        if self.window_z.len() <= self.window_len {
            return Ok(DowndateReport { branch: None, denominator: f64::NAN, restarted: false });
        }
        match self.try_downdate() {
            Ok((branch, denominator)) => {
                self.window_z.pop_front();
                self.window_y.pop_front();
                Ok(DowndateReport { branch: Some(branch), denominator, restarted: false })
            }
            Err(e) => {
                self.last_fault = Some(e.to_string());
                self.cold_restart()?;
                Ok(DowndateReport { branch: None, denominator: f64::NAN, restarted: true })
            }
        }
    }

    fn try_downdate(&mut self) -> Result<(DowndateBranch, f64)> {
        let weight = self.lambda.sqrt().powi(self.window_len as i32);
        let expected: Vec<f64> = self.window_z[0].iter().map(|v| v * weight).collect();
        let outcome = self.factors.remove_row(0, Some(&expected), &mut self.ws)?;
        for g in &self.ws.rotations {
            g.apply_vec(&mut self.transformed_rhs);
        }
        let w0 = self.transformed_rhs.remove(0);
        let k = &self.ws.k;
        match outcome.branch {
            DowndateBranch::RankDecreasing => {
                // β ← (I − k k†) β
                let kk = dot(k, k);
                if kk > 0.0 {
                    let coef = dot(k, &self.beta) / kk;
                    axpy(-coef, k, &mut self.beta);
                }
            }
            DowndateBranch::RankPreserving => {
                // β ← β − k (w₀ − vᵀβ) / (1 − vᵀk)
                let v = &self.ws.removed_row;
                let coef = (w0 - dot(v, &self.beta)) / outcome.denominator;
                axpy(-coef, k, &mut self.beta);
            }
        }
        if outcome.branch == DowndateBranch::RankPreserving && outcome.denominator.abs() < TAU_REFINE {
            // The rational downdate amplifies existing error in R† by roughly
            // 1/denominator; pull R† back towards the pseudoinverse of the
            // (accurate) triangular factor and re-derive the weights.
            self.factors.refine_pinv();
            self.beta = self.factors.pinv_apply(&self.transformed_rhs);
            self.refine_count += 1;
        }
        if self.beta.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("weights after downdate"));
        }
        Ok((outcome.branch, outcome.denominator))
    }

    /// One prequential step: predict, update, downdate, diagnostics.
    pub fn step(&mut self, z: &[f64], y: f64) -> Result<StepOutput> {
        self.step_with(z, y, true)
    }

    /// Like [`step`](Self::step) but optionally skips the SVD behind the
    /// condition number, which dominates the cost at large `D`.
    pub fn step_with(&mut self, z: &[f64], y: f64, track_condition: bool) -> Result<StepOutput> {
        self.check_observation(z, y)?;
        let prediction = dot(z, &self.beta);
        let up = self.update(z, y)?;
        let down = self.downdate()?;
        self.step_count += 1;
        let condition_number = if track_condition { self.condition_number() } else { f64::NAN };
        Ok(StepOutput {
            prediction,
            test_residual: y - prediction,
            train_residual_mean: self.train_residual_mean(),
            condition_number,
            restarted: up.restarted || down.restarted,
        })
    }

    /// Prediction, update and downdate only; no diagnostics.
    pub fn advance(&mut self, z: &[f64], y: f64) -> Result<f64> {
        self.check_observation(z, y)?;
        let prediction = dot(z, &self.beta);
        self.update(z, y)?;
        self.downdate()?;
        self.step_count += 1;
        Ok(prediction)
    }

    /// Mean absolute misfit of the current weights over the buffered window.
    pub fn train_residual_mean(&self) -> f64 {
        let n = self.window_z.len();
        if n == 0 {
            return 0.0;
        }
        let total: f64 = self.window_z.iter().zip(&self.window_y).map(|(z, y)| (y - dot(z, &self.beta)).abs()).sum();
        total / n as f64
    }

    /// `σ_max(R) / σ_min⁺(R)`.
    pub fn condition_number(&self) -> f64 {
        effective_condition_number(self.factors.r())
    }

    pub fn beta(&self) -> &[f64] {
        &self.beta
    }

    pub fn factors(&self) -> &QrFactors {
        &self.factors
    }

    pub fn transformed_rhs(&self) -> &[f64] {
        &self.transformed_rhs
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn window_len(&self) -> usize {
        self.window_len
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub fn restart_count(&self) -> u64 {
        self.restart_count
    }

    pub fn refine_count(&self) -> u64 {
        self.refine_count
    }

    pub fn last_fault(&self) -> Option<&str> {
        self.last_fault.as_deref()
    }

    /// Rows currently buffered (`N`, or `N + 1` between update and downdate).
    pub fn buffered_rows(&self) -> usize {
        self.window_z.len()
    }

    /// Raw (unweighted) window, oldest first.
    pub fn window(&self) -> (DenseMatrix, Vec<f64>) {
        let rows: Vec<&[f64]> = self.window_z.iter().map(Vec::as_slice).collect();
        let z = DenseMatrix::from_rows(&rows).expect("rows share a length");
        (z, self.window_y.iter().copied().collect())
    }

    /// Weight of the buffered row `i` in the current objective.
    pub fn row_weight(&self, i: usize) -> f64 {
        let n = self.window_z.len();
        self.lambda.powi((n - 1 - i) as i32)
    }

    /// Most recent downdate gain `k = R† G e₁` (valid right after a downdate).
    pub fn last_downdate_gain(&self) -> &[f64] {
        &self.ws.k
    }

    /// `‖β − R† w‖_∞`, the drift between the recursive weights and the
    /// maintained factors.
    pub fn weight_consistency(&self) -> f64 {
        let direct = self.factors.pinv_apply(&self.transformed_rhs);
        crate::linalg::matrix::max_abs_diff(&direct, &self.beta)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::batch_weighted_minnorm;

    fn lcg(seed: u64) -> impl FnMut() -> f64 {
        let mut s = seed.wrapping_add(0x9E3779B97F4A7C15);
        move || {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((s >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
        }
    }

    fn random_window(n: usize, d: usize, seed: u64) -> (DenseMatrix, Vec<f64>) {
        let mut r = lcg(seed);
        let z = DenseMatrix::from_fn(n, d, |_, _| r());
        let y = (0..n).map(|_| r()).collect();
        (z, y)
    }

    #[test]
    fn identity_design_interpolates() {
        let y = vec![0.5, -1.0, 2.0, 3.0];
        let f = FilterState::init(&DenseMatrix::identity(4), &y, 1.0).unwrap();
        for (b, e) in f.beta().iter().zip(&y) {
            assert!((b - e).abs() < 1e-14);
        }
        for (i, e) in y.iter().enumerate() {
            let mut z = vec![0.0; 4];
            z[i] = 1.0;
            assert!((f.predict(&z).unwrap() - e).abs() < 1e-14);
        }
    }

    #[test]
    fn init_matches_batch_oracle() {
        for (n, d, lambda) in [(6, 3, 1.0), (5, 12, 0.9), (4, 4, 0.8)] {
            let (z, y) = random_window(n, d, n as u64 * 31 + d as u64);
            let f = FilterState::init(&z, &y, lambda).unwrap();
            let oracle = batch_weighted_minnorm(&z, &y, lambda).unwrap();
            let dev = crate::linalg::matrix::max_abs_diff(f.beta(), &oracle);
            assert!(dev < 1e-10, "{n}x{d}: {dev}");
        }
    }

    #[test]
    fn zero_weights_and_zero_input_predict_zero() {
        let f = FilterState::init(&DenseMatrix::identity(2), &[0.0, 0.0], 1.0).unwrap();
        assert_eq!(f.predict(&[0.3, 0.7]).unwrap(), 0.0);
        let g = FilterState::init(&DenseMatrix::identity(2), &[1.0, 2.0], 1.0).unwrap();
        assert_eq!(g.predict(&[0.0, 0.0]).unwrap(), 0.0);
        assert!(g.predict(&[1.0]).is_err());
    }

    #[test]
    fn init_rejects_bad_arguments() {
        let z = DenseMatrix::identity(2);
        assert!(FilterState::init(&z, &[1.0], 1.0).is_err());
        assert!(FilterState::init(&z, &[1.0, 2.0], 0.0).is_err());
        assert!(FilterState::init(&z, &[1.0, f64::INFINITY], 1.0).is_err());
    }

    #[test]
    fn duplicate_row_with_consistent_target_leaves_weights() {
        let (z, y) = random_window(4, 3, 5);
        let mut f = FilterState::init(&z, &y, 1.0).unwrap();
        let before = f.beta().to_vec();
        let row = z.row(2).to_vec();
        let target = f.predict(&row).unwrap();
        let rep = f.update(&row, target).unwrap();
        assert!(!rep.rank_increased);
        assert!(crate::linalg::matrix::max_abs_diff(&before, f.beta()) < 1e-10);
    }

    #[test]
    fn update_then_downdate_of_same_row_restores_weights() {
        let (z, y) = random_window(5, 9, 8);
        let mut f = FilterState::init(&z, &y, 1.0).unwrap();
        let before = f.beta().to_vec();
        // Appending the oldest row again and removing the oldest is an exchange.
        f.update(&z.row(0).to_vec(), y[0]).unwrap();
        f.downdate().unwrap();
        assert!(crate::linalg::matrix::max_abs_diff(&before, f.beta()) < 1e-8);
    }

    #[test]
    fn checkpoint_roundtrip_continues_identically() {
        let (z, y) = random_window(4, 10, 2);
        let mut f = FilterState::init(&z, &y, 0.95).unwrap();
        let (z2, y2) = random_window(6, 10, 3);
        f.step(z2.row(0), y2[0]).unwrap();
        let mut g = FilterState::from_json(&f.to_json().unwrap()).unwrap();
        for i in 1..6 {
            let a = f.step(z2.row(i), y2[i]).unwrap();
            let b = g.step(z2.row(i), y2[i]).unwrap();
            assert_eq!(a.prediction.to_bits(), b.prediction.to_bits());
        }
    }
}
