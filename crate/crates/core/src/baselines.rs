//! Comparison models: covariance-form rank-one RLS, windowed QRD-RLS over
//! raw lags, and sliding-window kernel RLS with a Gaussian kernel.

use std::collections::VecDeque;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::filter::StepOutput;
use crate::linalg::matrix::dot;
use crate::linalg::svd::{effective_condition_number, pinv, weight_rows};
use crate::linalg::{DenseMatrix, TAU_RANK};
use crate::rff::gaussian_kernel;

/// Diagonal loading shared by QRD-RLS and KRLS.
pub const DEFAULT_RIDGE: f64 = 1e-2;

/// Largest feature dimension the covariance form accepts (two `D × D`
/// matrices are held in memory).
pub const COV_MAX_DIM: usize = 4096;

/// Which rank-one formulas the covariance form uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CovRegime {
    /// `D ≤ N`: Sherman–Morrison on the inverse Gramian.
    Inverse,
    /// `D > N`: Campbell–Meyer pseudoinverse forms.
    Pseudoinverse,
}

/// Covariance-form RLS. Keeps `A = ZᵀΛZ`, `P ≈ A†` and `s = ZᵀΛY` and
/// moves `P` with rank-one formulas only. It never symmetrises `P` and
/// never restarts, so its drift is visible.
#[derive(Clone, Debug)]
pub struct CovRlsState {
    gram: DenseMatrix,
    gram_pinv: DenseMatrix,
    xty: Vec<f64>,
    beta: Vec<f64>,
    window_z: VecDeque<Vec<f64>>,
    window_y: VecDeque<f64>,
    lambda: f64,
    window_len: usize,
    regime: CovRegime,
    divergences: u64,
    first_divergence: Option<u64>,
    step_count: u64,
    last_symmetry_drift: f64,
    max_symmetry_drift: f64,
}

impl CovRlsState {
    pub fn init(z0: &DenseMatrix, y0: &[f64], lambda: f64) -> Result<Self> {
        let (n, d) = z0.shape();
        if n == 0 || d == 0 {
            return Err(Error::InvalidArgument("initial window must be non-empty".into()));
        }
        if d > COV_MAX_DIM {
            return Err(Error::InvalidArgument(format!(
                "covariance form limited to D <= {COV_MAX_DIM}, got {d}"
            )));
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
        let (zw, yw) = weight_rows(z0, y0, lambda);
        let zt = zw.transpose();
        let gram = zt.matmul(&zw)?;
        let zp = pinv(&zw, TAU_RANK)?;
        let gram_pinv = zp.matmul(&zp.transpose())?;
        let xty = zt.matvec(&yw)?;
        let beta = gram_pinv.matvec(&xty)?;
        Ok(Self {
            gram,
            gram_pinv,
            xty,
            beta,
            window_z: (0..n).map(|i| z0.row(i).to_vec()).collect(),
            window_y: y0.iter().copied().collect(),
            lambda,
            window_len: n,
            regime: if d <= n { CovRegime::Inverse } else { CovRegime::Pseudoinverse },
            divergences: 0,
            first_divergence: None,
            step_count: 0,
            last_symmetry_drift: 0.0,
            max_symmetry_drift: 0.0,
        })
    }

    pub fn predict(&self, z: &[f64]) -> Result<f64> {
        if z.len() != self.beta.len() {
            return Err(Error::DimensionMismatch { expected: self.beta.len(), got: z.len() });
        }
        Ok(dot(z, &self.beta))
    }

    /// Prequential step. Non-finite state is counted as a divergence and
    /// carried forward.
    pub fn step(&mut self, z: &[f64], y: f64) -> Result<StepOutput> {
        let d = self.beta.len();
        if z.len() != d {
            return Err(Error::DimensionMismatch { expected: d, got: z.len() });
        }
        if !y.is_finite() || z.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("observation"));
        }
        let prediction = dot(z, &self.beta);

        // Forgetting: A ← λA, s ← λs, P ← P/λ.
        if self.lambda != 1.0 {
            self.gram.scale(self.lambda);
            self.gram_pinv.scale(1.0 / self.lambda);
            self.xty.iter_mut().for_each(|v| *v *= self.lambda);
        }
        self.add_row(z, y);
        self.window_z.push_back(z.to_vec());
        self.window_y.push_back(y);

        let weight = self.lambda.powi(self.window_len as i32);
        let old_z = self.window_z.pop_front().expect("window non-empty");
        let old_y = self.window_y.pop_front().expect("window non-empty");
        let x: Vec<f64> = old_z.iter().map(|v| v * weight.sqrt()).collect();
        self.remove_row(&x, &old_z, old_y * weight);

        self.beta = self.gram_pinv.matvec(&self.xty)?;
        self.step_count += 1;
        self.last_symmetry_drift = self.gram_pinv.max_abs_diff(&self.gram_pinv.transpose());
        self.max_symmetry_drift = self.max_symmetry_drift.max(self.last_symmetry_drift);
        let diverged = self.beta.iter().any(|v| !v.is_finite()) || !self.last_symmetry_drift.is_finite();
        if diverged {
            self.divergences += 1;
            self.first_divergence.get_or_insert(self.step_count);
        }
        Ok(StepOutput {
            prediction,
            test_residual: y - prediction,
            train_residual_mean: self.train_residual_mean(),
            condition_number: f64::NAN,
            restarted: false,
        })
    }

    fn add_row(&mut self, z: &[f64], y: f64) {
        let d = z.len();
        let p = &self.gram_pinv;
        // k = P z, h = zᵀ P (distinct once P has drifted from symmetry).
        let k = p.matvec(z).expect("sizes match");
        let h = p.tr_matvec(z).expect("sizes match");
        let beta = 1.0 + dot(z, &k);
        match self.regime {
            CovRegime::Inverse => {
                // (A + zzᵀ)⁻¹ = P − k h / (1 + zᵀPz)
                rank_one(&mut self.gram_pinv, -1.0 / beta, &k, &h);
            }
            CovRegime::Pseudoinverse => {
                // u = (I − A P) z, v = zᵀ(I − P A)
                let ak = self.gram.matvec(&k).expect("sizes match");
                let u: Vec<f64> = z.iter().zip(&ak).map(|(a, b)| a - b).collect();
                let ha = self.gram.tr_matvec(&h).expect("sizes match");
                let v: Vec<f64> = z.iter().zip(&ha).map(|(a, b)| a - b).collect();
                let uu = dot(&u, &u);
                let vv = dot(&v, &v);
                if uu > 0.0 && vv > 0.0 {
                    // A† − k u† − v† h + β v† u†
                    rank_one(&mut self.gram_pinv, -1.0 / uu, &k, &u);
                    rank_one(&mut self.gram_pinv, -1.0 / vv, &v, &h);
                    rank_one(&mut self.gram_pinv, beta / (uu * vv), &v, &u);
                } else {
                    rank_one(&mut self.gram_pinv, -1.0 / beta, &k, &h);
                }
            }
        }
        rank_one(&mut self.gram, 1.0, z, z);
        for (s, zi) in self.xty.iter_mut().zip(z) {
            *s += zi * y;
        }
        debug_assert_eq!(self.gram.rows(), d);
    }

    /// Removes `x xᵀ` from the Gramian (`x` already weighted) and
    /// `weighted_y · raw` from `s`.
    fn remove_row(&mut self, x: &[f64], raw: &[f64], weighted_y: f64) {
        let p = &self.gram_pinv;
        let a = p.matvec(x).expect("sizes match");
        let at = p.tr_matvec(x).expect("sizes match");
        match self.regime {
            CovRegime::Inverse => {
                // (A − xxᵀ)⁻¹ = P + a aᵗ / (1 − xᵀPx)
                let denom = 1.0 - dot(x, &a);
                rank_one(&mut self.gram_pinv, 1.0 / denom, &a, &at);
            }
            CovRegime::Pseudoinverse => {
                // x lies in the range with 1 − xᵀA†x = 0; the pseudoinverse
                // loses the direction a = A†x: (I − a a†) P (I − a a†).
                let n = dot(&a, &a);
                if n > 0.0 {
                    let pa = self.gram_pinv.matvec(&a).expect("sizes match");
                    let ap = self.gram_pinv.tr_matvec(&a).expect("sizes match");
                    let apa = dot(&a, &pa);
                    rank_one(&mut self.gram_pinv, -1.0 / n, &a, &ap);
                    rank_one(&mut self.gram_pinv, -1.0 / n, &pa, &a);
                    rank_one(&mut self.gram_pinv, apa / (n * n), &a, &a);
                }
            }
        }
        rank_one(&mut self.gram, -1.0, x, x);
        for (s, ri) in self.xty.iter_mut().zip(raw) {
            *s -= weighted_y * ri;
        }
    }

    pub fn train_residual_mean(&self) -> f64 {
        let n = self.window_z.len();
        let total: f64 = self.window_z.iter().zip(&self.window_y).map(|(z, y)| (y - dot(z, &self.beta)).abs()).sum();
        total / n as f64
    }

    pub fn beta(&self) -> &[f64] {
        &self.beta
    }

    pub fn gram_pinv(&self) -> &DenseMatrix {
        &self.gram_pinv
    }

    pub fn regime(&self) -> CovRegime {
        self.regime
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn divergences(&self) -> u64 {
        self.divergences
    }

    pub fn first_divergence(&self) -> Option<u64> {
        self.first_divergence
    }

    /// `‖P − Pᵀ‖_max` after the last step.
    pub fn symmetry_drift(&self) -> f64 {
        self.last_symmetry_drift
    }

    pub fn max_symmetry_drift(&self) -> f64 {
        self.max_symmetry_drift
    }

    pub fn window(&self) -> (DenseMatrix, Vec<f64>) {
        let rows: Vec<&[f64]> = self.window_z.iter().map(Vec::as_slice).collect();
        (DenseMatrix::from_rows(&rows).expect("rows share a length"), self.window_y.iter().copied().collect())
    }
}

/// `m ← m + alpha · a bᵀ`.
fn rank_one(m: &mut DenseMatrix, alpha: f64, a: &[f64], b: &[f64]) {
    for (i, &ai) in a.iter().enumerate() {
        let f = alpha * ai;
        if f != 0.0 {
            for (x, &bj) in m.row_mut(i).iter_mut().zip(b) {
                *x += f * bj;
            }
        }
    }
}

/// Sliding-window linear least squares over raw lags, with `RᵀR = δI +
/// Σ x xᵀ` held as an upper-triangular factor. Rows enter by Givens
/// rotations and leave by the LINPACK-style orthogonal Cholesky downdate.
#[derive(Clone, Debug)]
pub struct QrdRlsState {
    r: DenseMatrix,
    rhs: Vec<f64>,
    beta: Vec<f64>,
    window: usize,
    ridge: f64,
    buf_x: VecDeque<Vec<f64>>,
    buf_y: VecDeque<f64>,
    failed_downdates: u64,
}

impl QrdRlsState {
    pub fn new(lags: usize, window: usize, ridge: f64) -> Result<Self> {
        if lags == 0 || window == 0 {
            return Err(Error::InvalidArgument("lags and window must be positive".into()));
        }
        if lags > window {
            return Err(Error::InvalidArgument(format!("QRD-RLS needs lags <= window, got {lags} > {window}")));
        }
        if !(ridge >= 0.0 && ridge.is_finite()) {
            return Err(Error::InvalidArgument(format!("ridge must be non-negative, got {ridge}")));
        }
        let mut r = DenseMatrix::zeros(lags, lags);
        for i in 0..lags {
            r.set(i, i, ridge.sqrt());
        }
        Ok(Self {
            r,
            rhs: vec![0.0; lags],
            beta: vec![0.0; lags],
            window,
            ridge,
            buf_x: VecDeque::with_capacity(window + 1),
            buf_y: VecDeque::with_capacity(window + 1),
            failed_downdates: 0,
        })
    }

    pub fn lags(&self) -> usize {
        self.rhs.len()
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn ridge(&self) -> f64 {
        self.ridge
    }

    pub fn beta(&self) -> &[f64] {
        &self.beta
    }

    pub fn failed_downdates(&self) -> u64 {
        self.failed_downdates
    }

    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.lags() {
            return Err(Error::DimensionMismatch { expected: self.lags(), got: x.len() });
        }
        Ok(dot(x, &self.beta))
    }

    /// Adds a row without removing anything (used while the window fills).
    pub fn push(&mut self, x: &[f64], y: f64) -> Result<()> {
        if x.len() != self.lags() {
            return Err(Error::DimensionMismatch { expected: self.lags(), got: x.len() });
        }
        self.append(x, y);
        self.buf_x.push_back(x.to_vec());
        self.buf_y.push_back(y);
        if self.buf_x.len() > self.window {
            let ox = self.buf_x.pop_front().expect("non-empty");
            let oy = self.buf_y.pop_front().expect("non-empty");
            if self.downdate(&ox, oy).is_err() {
                self.failed_downdates += 1;
                self.rebuild();
            }
        }
        self.solve();
        Ok(())
    }

    pub fn step(&mut self, x: &[f64], y: f64) -> Result<StepOutput> {
        let prediction = self.predict(x)?;
        self.push(x, y)?;
        Ok(StepOutput {
            prediction,
            test_residual: y - prediction,
            train_residual_mean: self.train_residual_mean(),
            condition_number: effective_condition_number(&self.r),
            restarted: false,
        })
    }

    fn append(&mut self, x: &[f64], y: f64) {
        let l = self.lags();
        let mut row = x.to_vec();
        let mut eta = y;
        for j in 0..l {
            let (c, s, rr) = crate::linalg::givens_from(self.r.get(j, j), row[j]);
            if s == 0.0 && c == 1.0 {
                continue;
            }
            self.r.set(j, j, rr);
            row[j] = 0.0;
            for k in j + 1..l {
                let (a, b) = (self.r.get(j, k), row[k]);
                self.r.set(j, k, c * a + s * b);
                row[k] = -s * a + c * b;
            }
            let (a, b) = (self.rhs[j], eta);
            self.rhs[j] = c * a + s * b;
            eta = -s * a + c * b;
        }
    }

    /// Removes `(x, y)` from `RᵀR` and the right-hand side.
    fn downdate(&mut self, x: &[f64], y: f64) -> Result<()> {
        let l = self.lags();
        // Solve Rᵀ a = x.
        let mut a = vec![0.0; l];
        for i in 0..l {
            let mut acc = x[i];
            for k in 0..i {
                acc -= self.r.get(k, i) * a[k];
            }
            let rii = self.r.get(i, i);
            if rii == 0.0 {
                return Err(Error::DowndateBreakdown { denominator: 0.0 });
            }
            a[i] = acc / rii;
        }
        let norm2 = dot(&a, &a);
        if !(norm2 < 1.0) {
            return Err(Error::DowndateBreakdown { denominator: 1.0 - norm2 });
        }
        let mut alpha = (1.0 - norm2).sqrt();
        let mut c = vec![0.0; l];
        let mut s = vec![0.0; l];
        for i in (0..l).rev() {
            let scale = alpha + a[i].abs();
            let (p, q) = (alpha / scale, a[i] / scale);
            let nrm = p.hypot(q);
            c[i] = p / nrm;
            s[i] = q / nrm;
            alpha = scale * nrm;
        }
        for j in 0..l {
            let mut xx = 0.0;
            for i in (0..=j).rev() {
                let rij = self.r.get(i, j);
                let t = c[i] * xx + s[i] * rij;
                self.r.set(i, j, c[i] * rij - s[i] * xx);
                xx = t;
            }
        }
        let mut zeta = y;
        for i in 0..l {
            self.rhs[i] = (self.rhs[i] - s[i] * zeta) / c[i];
            zeta = c[i] * zeta - s[i] * self.rhs[i];
        }
        Ok(())
    }

    /// Refactorises from the buffered window after a failed downdate.
    fn rebuild(&mut self) {
        let l = self.lags();
        self.r = DenseMatrix::zeros(l, l);
        for i in 0..l {
            self.r.set(i, i, self.ridge.sqrt());
        }
        self.rhs = vec![0.0; l];
        let rows: Vec<(Vec<f64>, f64)> = self.buf_x.iter().cloned().zip(self.buf_y.iter().copied()).collect();
        for (x, y) in rows {
            self.append(&x, y);
        }
    }

    /// Back substitution `R β = rhs`, skipping zero pivots.
    fn solve(&mut self) {
        let l = self.lags();
        for i in (0..l).rev() {
            let rii = self.r.get(i, i);
            let mut acc = self.rhs[i];
            for k in i + 1..l {
                acc -= self.r.get(i, k) * self.beta[k];
            }
            self.beta[i] = if rii.abs() > 0.0 { acc / rii } else { 0.0 };
        }
    }

    pub fn train_residual_mean(&self) -> f64 {
        let n = self.buf_x.len();
        if n == 0 {
            return 0.0;
        }
        let total: f64 = self.buf_x.iter().zip(&self.buf_y).map(|(x, y)| (y - dot(x, &self.beta)).abs()).sum();
        total / n as f64
    }
}

/// Sliding-window kernel ridge regression with a Gaussian kernel. The
/// inverse `(K + δI)⁻¹` is moved by block up/downdates and refreshed by a
/// Cholesky solve once per `window` steps to bound drift.
#[derive(Clone, Debug)]
pub struct KrlsState {
    dictionary: VecDeque<Vec<f64>>,
    targets: VecDeque<f64>,
    inverse: DenseMatrix,
    alpha: Vec<f64>,
    kernel_bandwidth: f64,
    ridge: f64,
    window: usize,
    since_refresh: usize,
}

impl KrlsState {
    pub fn new(window: usize, kernel_bandwidth: f64, ridge: f64) -> Result<Self> {
        if window == 0 {
            return Err(Error::InvalidArgument("KRLS window must be positive".into()));
        }
        if !(kernel_bandwidth > 0.0 && kernel_bandwidth.is_finite()) {
            return Err(Error::InvalidArgument(format!("bandwidth must be positive, got {kernel_bandwidth}")));
        }
        if !(ridge > 0.0 && ridge.is_finite()) {
            return Err(Error::InvalidArgument(format!("KRLS ridge must be positive, got {ridge}")));
        }
        Ok(Self {
            dictionary: VecDeque::with_capacity(window + 1),
            targets: VecDeque::with_capacity(window + 1),
            inverse: DenseMatrix::zeros(0, 0),
            alpha: Vec::new(),
            kernel_bandwidth,
            ridge,
            window,
            since_refresh: 0,
        })
    }

    pub fn len(&self) -> usize {
        self.dictionary.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dictionary.is_empty()
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        self.dictionary
            .iter()
            .zip(&self.alpha)
            .map(|(d, a)| a * gaussian_kernel(x, d, self.kernel_bandwidth))
            .sum()
    }

    pub fn push(&mut self, x: &[f64], y: f64) -> Result<()> {
        if let Some(first) = self.dictionary.front() {
            if first.len() != x.len() {
                return Err(Error::DimensionMismatch { expected: first.len(), got: x.len() });
            }
        }
        if !y.is_finite() || x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("observation"));
        }
        let k: Vec<f64> = self.dictionary.iter().map(|d| gaussian_kernel(x, d, self.kernel_bandwidth)).collect();
        let knn = 1.0 + self.ridge;
        self.grow(&k, knn);
        self.dictionary.push_back(x.to_vec());
        self.targets.push_back(y);
        if self.dictionary.len() > self.window {
            self.shrink_front();
            self.dictionary.pop_front();
            self.targets.pop_front();
        }
        self.since_refresh += 1;
        if self.since_refresh >= self.window || !self.inverse.is_finite() {
            self.refresh()?;
        }
        let t: Vec<f64> = self.targets.iter().copied().collect();
        self.alpha = self.inverse.matvec(&t)?;
        Ok(())
    }

    pub fn step(&mut self, x: &[f64], y: f64) -> Result<StepOutput> {
        let prediction = self.predict(x);
        self.push(x, y)?;
        Ok(StepOutput {
            prediction,
            test_residual: y - prediction,
            train_residual_mean: self.train_residual_mean(),
            condition_number: f64::NAN,
            restarted: false,
        })
    }

    /// Bordered inverse for `[[K, k], [kᵀ, knn]]`.
    fn grow(&mut self, k: &[f64], knn: f64) {
        let m = k.len();
        let pk = self.inverse.matvec(k).expect("sizes match");
        let gamma = knn - dot(k, &pk);
        let mut next = DenseMatrix::zeros(m + 1, m + 1);
        for i in 0..m {
            for j in 0..m {
                next.set(i, j, self.inverse.get(i, j) + pk[i] * pk[j] / gamma);
            }
            next.set(i, m, -pk[i] / gamma);
            next.set(m, i, -pk[i] / gamma);
        }
        next.set(m, m, 1.0 / gamma);
        self.inverse = next;
    }

    /// Inverse of the trailing block: `G − f fᵀ / e` for `P = [[e, fᵀ], [f, G]]`.
    fn shrink_front(&mut self) {
        let m = self.inverse.rows();
        let e = self.inverse.get(0, 0);
        let mut next = DenseMatrix::zeros(m - 1, m - 1);
        for i in 1..m {
            let fi = self.inverse.get(i, 0);
            for j in 1..m {
                next.set(i - 1, j - 1, self.inverse.get(i, j) - fi * self.inverse.get(0, j) / e);
            }
        }
        self.inverse = next;
    }

    /// Recomputes the inverse from the dictionary by Cholesky.
    pub fn refresh(&mut self) -> Result<()> {
        let m = self.dictionary.len();
        let mut kmat = DMatrix::<f64>::zeros(m, m);
        for i in 0..m {
            for j in 0..=i {
                let v = gaussian_kernel(&self.dictionary[i], &self.dictionary[j], self.kernel_bandwidth);
                kmat[(i, j)] = v;
                kmat[(j, i)] = v;
            }
            kmat[(i, i)] += self.ridge;
        }
        let chol = kmat
            .cholesky()
            .ok_or_else(|| Error::InvalidArgument("kernel matrix lost positive definiteness".into()))?;
        self.inverse = DenseMatrix::from_nalgebra(&chol.inverse());
        self.since_refresh = 0;
        Ok(())
    }

    pub fn train_residual_mean(&self) -> f64 {
        let n = self.dictionary.len();
        if n == 0 {
            return 0.0;
        }
        let total: f64 = self.dictionary.iter().zip(&self.targets).map(|(x, y)| (y - self.predict(x)).abs()).sum();
        total / n as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::batch_weighted_minnorm;
    use crate::linalg::matrix::max_abs_diff;

    fn lcg(seed: u64) -> impl FnMut() -> f64 {
        let mut s = seed.wrapping_add(0x9E3779B97F4A7C15);
        move || {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((s >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
        }
    }

    #[test]
    fn cov_orthonormal_stream_matches_batch() {
        let z0 = DenseMatrix::identity(2);
        let mut cov = CovRlsState::init(&z0, &[1.0, 2.0], 1.0).unwrap();
        assert_eq!(cov.regime(), CovRegime::Inverse);
        let rows = [[1.0, 0.0], [0.0, 1.0], [1.0, 0.0], [0.0, 1.0]];
        let ys = [3.0, -1.0, 0.5, 4.0];
        for (r, &y) in rows.iter().zip(&ys) {
            cov.step(r, y).unwrap();
            let (z, yy) = cov.window();
            let oracle = batch_weighted_minnorm(&z, &yy, 1.0).unwrap();
            assert!(max_abs_diff(cov.beta(), &oracle) < 1e-12);
        }
    }

    #[test]
    fn cov_tracks_oracle_in_both_regimes() {
        for (n, d, lambda) in [(8, 4, 1.0), (6, 16, 1.0), (8, 4, 0.9), (6, 16, 0.95)] {
            let mut r = lcg((n * d) as u64);
            let z0 = DenseMatrix::from_fn(n, d, |_, _| r());
            let y0: Vec<f64> = (0..n).map(|_| r()).collect();
            let mut cov = CovRlsState::init(&z0, &y0, lambda).unwrap();
            for _ in 0..20 {
                let z: Vec<f64> = (0..d).map(|_| r()).collect();
                cov.step(&z, r()).unwrap();
            }
            let (z, y) = cov.window();
            let oracle = batch_weighted_minnorm(&z, &y, lambda).unwrap();
            let dev = max_abs_diff(cov.beta(), &oracle);
            assert!(dev < 1e-6, "{n}x{d} λ={lambda}: {dev}");
        }
    }

    #[test]
    fn cov_rejects_oversized_dimension() {
        let z = DenseMatrix::zeros(2, COV_MAX_DIM + 1);
        assert!(CovRlsState::init(&z, &[0.0, 0.0], 1.0).is_err());
    }

    #[test]
    fn qrd_recovers_linear_target() {
        let w = [0.5, -0.25, 0.125];
        let mut q = QrdRlsState::new(3, 30, 1e-8).unwrap();
        let mut r = lcg(4);
        let mut last = f64::INFINITY;
        for _ in 0..200 {
            let x: Vec<f64> = (0..3).map(|_| r()).collect();
            let y = dot(&x, &w);
            last = q.step(&x, y).unwrap().test_residual;
        }
        assert!(last.abs() < 1e-6);
        assert!(max_abs_diff(q.beta(), &w) < 1e-6);
        assert_eq!(q.failed_downdates(), 0);
    }

    #[test]
    fn qrd_without_ridge_matches_sliding_least_squares() {
        let (l, w) = (4, 12);
        let mut q = QrdRlsState::new(l, w, 0.0).unwrap();
        let mut r = lcg(11);
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for _ in 0..60 {
            let x: Vec<f64> = (0..l).map(|_| r()).collect();
            let y = r();
            q.push(&x, y).unwrap();
            xs.push(x);
            ys.push(y);
        }
        let rows: Vec<&[f64]> = xs[xs.len() - w..].iter().map(Vec::as_slice).collect();
        let z = DenseMatrix::from_rows(&rows).unwrap();
        let oracle = batch_weighted_minnorm(&z, &ys[ys.len() - w..], 1.0).unwrap();
        assert!(max_abs_diff(q.beta(), &oracle) < 1e-8);
    }

    #[test]
    fn qrd_square_window_interpolates() {
        let mut q = QrdRlsState::new(3, 3, 0.0).unwrap();
        let mut r = lcg(2);
        for _ in 0..10 {
            let x: Vec<f64> = (0..3).map(|_| r()).collect();
            q.push(&x, r()).unwrap();
        }
        assert!(q.train_residual_mean() < 1e-8);
    }

    #[test]
    fn krls_single_point() {
        let mut k = KrlsState::new(5, 1.0, 1e-12).unwrap();
        k.push(&[0.3, 0.1], 2.0).unwrap();
        assert!((k.alpha()[0] - 2.0).abs() < 1e-9);
        assert!((k.predict(&[0.3, 0.1]) - 2.0).abs() < 1e-9);
    }

    #[test]
    fn krls_duplicates_give_shrunk_mean() {
        let delta = 0.5;
        let mut k = KrlsState::new(3, 1.0, delta).unwrap();
        for y in [1.0, 2.0, 6.0] {
            k.push(&[1.0], y).unwrap();
        }
        // K = J (all ones), (J + δI)⁻¹ y summed gives 3·mean / (3 + δ).
        let expect = 9.0 / (3.0 + delta);
        assert!((k.predict(&[1.0]) - expect).abs() < 1e-10);
    }

    #[test]
    fn krls_inverse_matches_refresh() {
        let mut k = KrlsState::new(7, 0.8, 1e-2).unwrap();
        let mut r = lcg(9);
        for _ in 0..30 {
            let x: Vec<f64> = (0..2).map(|_| r()).collect();
            k.push(&x, r()).unwrap();
        }
        let recursive = k.inverse.clone();
        k.refresh().unwrap();
        assert!(recursive.max_abs_diff(&k.inverse) < 1e-8);
        assert_eq!(k.len(), 7);
    }
}
