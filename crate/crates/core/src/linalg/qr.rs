//! Explicit-Q QR factorisation with a maintained pseudoinverse of the
//! triangular factor, updated by appending a row (Greville/Cline) and
//! downdated by removing one (generalised inverse sum formulas).
//!
//! Internally both `Q` and `R†` are stored transposed so that every Givens
//! rotation acts on rows of contiguous memory: with `A = Q R`, a rotation
//! `Θ` applied to `R` from the left becomes `Q ← Q Θᵀ` and `R† ← R† Θᵀ`,
//! i.e. the same row operation on `Qᵀ` and `R†ᵀ`.

use serde::{Deserialize, Serialize};

use super::givens::GivensRotation;
use super::matrix::{axpy, dot, norm2, DenseMatrix};
use super::svd::pinv_with_rank;
use super::{TAU_DENOM, TAU_RANK, TAU_RANGE};
use crate::error::{Error, Result};

/// `A = Q R` with `R` upper trapezoidal and its Moore–Penrose pseudoinverse.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QrFactors {
    /// `Qᵀ`, `m × m`.
    q_t: DenseMatrix,
    /// `R`, `m × d`.
    r: DenseMatrix,
    /// `(R†)ᵀ`, `m × d`.
    r_pinv_t: DenseMatrix,
    /// Numerical row rank of `R`, tracked through updates.
    rank: usize,
    /// Relative threshold of the rank test in [`append_row`](Self::append_row).
    #[serde(default = "default_tau_rank")]
    tau_rank: f64,
}

fn default_tau_rank() -> f64 {
    TAU_RANK
}

/// Scratch vectors reused across updates and downdates.
///
/// Contents are only meaningful right after the call that filled them.
#[derive(Clone, Debug, Default)]
pub struct UpdateWorkspace {
    /// Component of the new row outside the row space of `R`.
    pub c: Vec<f64>,
    /// `zᵀ R†` for an update.
    pub h: Vec<f64>,
    /// `R† G e₁` for a downdate.
    pub k: Vec<f64>,
    /// Rotated copy of the row removed by a downdate.
    pub removed_row: Vec<f64>,
    /// Gain vector `b` of the last update.
    pub gain_b: Vec<f64>,
    /// Rotations applied by the last update or downdate, in order.
    pub rotations: Vec<GivensRotation>,
    tmp_n: Vec<f64>,
    tmp_d: Vec<f64>,
}

impl UpdateWorkspace {
    pub fn new() -> Self {
        Self::default()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AppendOutcome {
    pub rank_increased: bool,
    /// `‖(I − R†R) z‖₂`
    pub c_norm: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum DowndateBranch {
    /// Removed row was linearly independent of the others; projector form.
    RankDecreasing,
    /// Removed row lies in the span of the others; rational form.
    RankPreserving,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RemoveOutcome {
    pub branch: DowndateBranch,
    /// `1 − vᵀk`, with `v` the removed row and `k = R† G e₁`.
    pub denominator: f64,
    /// Sign `α` the rotations left on the isolated row of `Q`, before flipping.
    pub alpha: f64,
    /// Relative residual of `vᵀ(I − R†R)`.
    pub row_space_residual: f64,
    /// Relative residual of `(I − R R†) G e₁`; only computed when rank decreases.
    pub col_space_residual: f64,
}

impl QrFactors {
    /// Wraps already consistent factors. Used by tests and checkpoint loading.
    pub fn from_parts(q: DenseMatrix, r: DenseMatrix, r_pinv: DenseMatrix, rank: usize) -> Result<Self> {
        let m = r.rows();
        if q.shape() != (m, m) {
            return Err(Error::DimensionMismatch { expected: m, got: q.rows() });
        }
        if r_pinv.shape() != (r.cols(), m) {
            return Err(Error::DimensionMismatch { expected: r.cols(), got: r_pinv.rows() });
        }
        Ok(Self { q_t: q.transpose(), r, r_pinv_t: r_pinv.transpose(), rank, tau_rank: TAU_RANK })
    }

    /// Empty factorisation of a `0 × d` matrix.
    pub fn empty(d: usize) -> Self {
        Self {
            q_t: DenseMatrix::zeros(0, 0),
            r: DenseMatrix::zeros(0, d),
            r_pinv_t: DenseMatrix::zeros(0, d),
            rank: 0,
            tau_rank: TAU_RANK,
        }
    }

    /// Overrides the rank-test threshold (fault injection and experiments).
    pub fn set_rank_tolerance(&mut self, tau: f64) {
        self.tau_rank = tau;
    }

    pub fn rank_tolerance(&self) -> f64 {
        self.tau_rank
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.r.rows()
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.r.cols()
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn r(&self) -> &DenseMatrix {
        &self.r
    }

    pub fn q(&self) -> DenseMatrix {
        self.q_t.transpose()
    }

    pub fn q_t(&self) -> &DenseMatrix {
        &self.q_t
    }

    pub fn r_pinv(&self) -> DenseMatrix {
        self.r_pinv_t.transpose()
    }

    /// `(R†)ᵀ`; row `j` is column `j` of `R†`.
    pub fn r_pinv_t(&self) -> &DenseMatrix {
        &self.r_pinv_t
    }

    /// `R† x` for `x` of length `rows()`.
    pub fn pinv_apply(&self, x: &[f64]) -> Vec<f64> {
        self.r_pinv_t.tr_matvec(x).expect("length checked by caller")
    }

    /// Multiplies `R` by `alpha` and `R†` by `1/alpha`.
    pub fn scale(&mut self, alpha: f64) {
        if alpha != 1.0 {
            self.r.scale(alpha);
            self.r_pinv_t.scale(1.0 / alpha);
        }
    }

    /// Rebuilds `R†` from `R` by SVD, leaving `Q` and `R` untouched.
    pub fn refresh_pinv(&mut self) -> Result<()> {
        let (p, rank) = pinv_with_rank(&self.r, TAU_RANK)?;
        self.r_pinv_t = p.transpose();
        self.rank = rank;
        Ok(())
    }

    /// One Newton–Schulz step `R† ← 2R† − R† R R†`, which squares the
    /// relative error of a nearby pseudoinverse. Costs `O(N² D)`.
    pub fn refine_pinv(&mut self) {
        let m = self.rows();
        if m == 0 {
            return;
        }
        // Transposed: T ← 2T − (T Rᵀ) T with T = R†ᵀ.
        let mut trt = DenseMatrix::zeros(m, m);
        for i in 0..m {
            for j in 0..m {
                trt.set(i, j, dot(self.r_pinv_t.row(i), self.r.row(j)));
            }
        }
        let old = self.r_pinv_t.clone();
        self.r_pinv_t.scale(2.0);
        for i in 0..m {
            for j in 0..m {
                let a = trt.get(i, j);
                if a != 0.0 {
                    axpy(-a, old.row(j), self.r_pinv_t.row_mut(i));
                }
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.q_t.is_finite() && self.r.is_finite() && self.r_pinv_t.is_finite()
    }

    /// Appends `zᵀ` as a new last row of `A` and restores trapezoidal form.
    ///
    /// The pseudoinverse of `[R; zᵀ]` is formed first by the Greville/Cline
    /// row update `[R† − b h, b]`, then the triangularising rotations are
    /// absorbed on the right, `(G A)† = A† Gᵀ`. The gain `b` is left in
    /// `ws.gain_b` and the rotations in `ws.rotations`, so callers can carry
    /// a right-hand side along.
    pub fn append_row(&mut self, z: &[f64], ws: &mut UpdateWorkspace) -> Result<AppendOutcome> {
        let n = self.rows();
        let d = self.cols();
        if z.len() != d {
            return Err(Error::DimensionMismatch { expected: d, got: z.len() });
        }
        if z.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("appended row"));
        }

        // h = zᵀ R†  and  R z
        ws.h.clear();
        ws.h.extend((0..n).map(|j| dot(z, self.r_pinv_t.row(j))));
        ws.tmp_n.clear();
        ws.tmp_n.extend((0..n).map(|i| dot(self.r.row(i), z)));

        // c = (I − R†R) z
        ws.c.clear();
        ws.c.extend_from_slice(z);
        for j in 0..n {
            axpy(-ws.tmp_n[j], self.r_pinv_t.row(j), &mut ws.c);
        }
        let c_norm = norm2(&ws.c);
        let z_norm = norm2(z);
        // With full column rank R†R = I, so c is pure drift in the maintained
        // pseudoinverse; the rank cannot grow past D either way.
        if self.rank == d && !(c_norm <= TAU_RANGE * z_norm.max(1.0)) {
            return Err(Error::RangeCondition { which: "column complement (c)", residual: c_norm });
        }
        let rank_increased = self.rank < d && c_norm > self.tau_rank * z_norm.max(1.0);

        ws.gain_b.clear();
        if rank_increased {
            let inv = 1.0 / (c_norm * c_norm);
            ws.gain_b.extend(ws.c.iter().map(|v| v * inv));
        } else {
            ws.gain_b.resize(d, 0.0);
            let hh = dot(&ws.h, &ws.h);
            for j in 0..n {
                axpy(ws.h[j], self.r_pinv_t.row(j), &mut ws.gain_b);
            }
            let inv = 1.0 / (1.0 + hh);
            ws.gain_b.iter_mut().for_each(|v| *v *= inv);
        }
        if ws.gain_b.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("update gain"));
        }

        // [R†  − b h, b]
        for j in 0..n {
            axpy(-ws.h[j], &ws.gain_b, self.r_pinv_t.row_mut(j));
        }
        self.r_pinv_t.push_row(&ws.gain_b)?;
        self.r.push_row(z)?;
        self.q_t = self.q_t.bordered_identity();

        // Zero the new row against the leading pivots.
        ws.rotations.clear();
        for j in 0..n.min(d) {
            let (x, y) = (self.r.get(j, j), self.r.get(n, j));
            if y == 0.0 {
                continue;
            }
            let g = GivensRotation::zeroing(j, n, x, y);
            self.rotate(&g, j);
            self.r.set(n, j, 0.0);
            ws.rotations.push(g);
        }
        if rank_increased {
            self.rank += 1;
        }
        Ok(AppendOutcome { rank_increased, c_norm })
    }

    /// Removes row `p` of `A` (a row of `Q`) from the factorisation.
    ///
    /// Rotations chosen bottom-up map `Q`'s row `p` onto `±e₁`, which brings
    /// the removed row of `A` to the top of `Gᵀ R`; a sign flip of the last
    /// rotation makes it `+e₁`. With `M = Gᵀ R = [vᵀ; B]` and
    /// `M† = [k, K]`, the pseudoinverse of the remainder is
    ///
    /// * `B† = (I − k k†) K` when `v` is independent of the other rows, and
    /// * `B† = K + k vᵀK / (1 − vᵀk)` when it lies in their span.
    ///
    /// `expected_row`, when given, is the row the caller believes is being
    /// removed (already weighted); a mismatch with the rotated row beyond
    /// the range tolerance is reported as an inconsistent state.
    pub fn remove_row(
        &mut self,
        p: usize,
        expected_row: Option<&[f64]>,
        ws: &mut UpdateWorkspace,
    ) -> Result<RemoveOutcome> {
        let m = self.rows();
        let d = self.cols();
        if p >= m {
            return Err(Error::IndexOutOfRange { index: p, len: m });
        }

        ws.rotations.clear();
        for i in (1..m).rev() {
            let (x, y) = (self.q_t.get(i - 1, p), self.q_t.get(i, p));
            let g = GivensRotation::zeroing(i - 1, i, x, y);
            self.rotate(&g, i - 1);
            ws.rotations.push(g);
        }
        let alpha = if m > 0 { self.q_t.get(0, p) } else { 1.0 };
        if alpha < 0.0 && m > 1 {
            // Undo the last rotation and apply its negative instead, i.e.
            // negate rows 0 and 1.
            let last = ws.rotations.pop().expect("m > 1");
            for row in [0, 1] {
                self.q_t.row_mut(row).iter_mut().for_each(|v| *v = -*v);
                self.r.row_mut(row).iter_mut().for_each(|v| *v = -*v);
                self.r_pinv_t.row_mut(row).iter_mut().for_each(|v| *v = -*v);
            }
            ws.rotations.push(last.negated());
        }

        ws.removed_row.clear();
        ws.removed_row.extend_from_slice(self.r.row(0));
        ws.k.clear();
        ws.k.extend_from_slice(self.r_pinv_t.row(0));
        let v = &ws.removed_row;
        let k = &ws.k;
        let v_norm = norm2(v);
        let denominator = 1.0 - dot(v, k);

        if let Some(expected) = expected_row {
            if expected.len() != d {
                return Err(Error::DimensionMismatch { expected: d, got: expected.len() });
            }
            let mismatch = v.iter().zip(expected).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            let rel = mismatch / norm2(expected).max(1.0);
            if !(rel <= TAU_RANGE) {
                return Err(Error::RangeCondition { which: "restored row", residual: rel });
            }
        }

        // v must lie in the row space of R: ‖v − R†(R v)‖.
        ws.tmp_n.clear();
        ws.tmp_n.extend((0..m).map(|i| dot(self.r.row(i), v)));
        ws.tmp_d.clear();
        ws.tmp_d.extend_from_slice(v);
        for j in 0..m {
            axpy(-ws.tmp_n[j], self.r_pinv_t.row(j), &mut ws.tmp_d);
        }
        let row_space_residual = norm2(&ws.tmp_d) / v_norm.max(1.0);
        if !(row_space_residual <= TAU_RANGE) {
            return Err(Error::RangeCondition { which: "row space (v)", residual: row_space_residual });
        }

        let branch = if self.rank >= m { DowndateBranch::RankDecreasing } else { DowndateBranch::RankPreserving };
        let mut col_space_residual = 0.0;
        match branch {
            DowndateBranch::RankDecreasing => {
                // G e₁ must lie in the range of R: ‖e₁ − R k‖.
                let mut acc = 0.0;
                for i in 0..m {
                    let rk = dot(self.r.row(i), k);
                    let e = if i == 0 { 1.0 } else { 0.0 };
                    acc += (e - rk) * (e - rk);
                }
                col_space_residual = acc.sqrt();
                if !(col_space_residual <= TAU_RANGE) {
                    return Err(Error::RangeCondition { which: "column space (u)", residual: col_space_residual });
                }
                let kk = dot(k, k);
                if kk > 0.0 {
                    for j in 1..m {
                        let coef = dot(k, self.r_pinv_t.row(j)) / kk;
                        axpy(-coef, k, self.r_pinv_t.row_mut(j));
                    }
                }
                self.rank -= 1;
            }
            DowndateBranch::RankPreserving => {
                if !(denominator.abs() > TAU_DENOM) {
                    return Err(Error::DowndateBreakdown { denominator });
                }
                for j in 1..m {
                    let coef = dot(v, self.r_pinv_t.row(j)) / denominator;
                    axpy(coef, k, self.r_pinv_t.row_mut(j));
                }
            }
        }

        self.r.remove_row(0)?;
        self.r_pinv_t.remove_row(0)?;
        self.q_t = self.q_t.minor(0, p);
        if !self.r_pinv_t.is_finite() {
            return Err(Error::NonFinite("downdated pseudoinverse"));
        }
        Ok(RemoveOutcome { branch, denominator, alpha, row_space_residual, col_space_residual })
    }

    /// Applies `g` to rows of `R` (from column `from`), `R†ᵀ` and `Qᵀ`.
    fn rotate(&mut self, g: &GivensRotation, from: usize) {
        let from = from.min(self.cols());
        let (a, b) = self.r.two_rows_mut(g.i, g.j);
        g.rotate_slices(&mut a[from..], &mut b[from..]);
        let (a, b) = self.r_pinv_t.two_rows_mut(g.i, g.j);
        g.rotate_slices(a, b);
        let (a, b) = self.q_t.two_rows_mut(g.i, g.j);
        g.rotate_slices(a, b);
    }
}

/// Factorises `z = Q R` by Givens rotations and computes `R†` by SVD.
pub fn qr_decompose(z: &DenseMatrix) -> Result<QrFactors> {
    if !z.is_finite() {
        return Err(Error::NonFinite("matrix to factorise"));
    }
    let (n, d) = z.shape();
    let mut f = QrFactors {
        q_t: DenseMatrix::identity(n),
        r: z.clone(),
        r_pinv_t: DenseMatrix::zeros(n, d),
        rank: 0,
        tau_rank: TAU_RANK,
    };
    for j in 0..n.min(d) {
        for i in j + 1..n {
            let (x, y) = (f.r.get(j, j), f.r.get(i, j));
            if y == 0.0 {
                continue;
            }
            let g = GivensRotation::zeroing(j, i, x, y);
            f.rotate(&g, j);
            f.r.set(i, j, 0.0);
        }
    }
    f.refresh_pinv()?;
    Ok(f)
}

/// Largest violation of the four Penrose conditions for `(a, p)`.
pub fn penrose_residual(a: &DenseMatrix, p: &DenseMatrix) -> f64 {
    let ap = a.matmul(p).expect("shapes");
    let pa = p.matmul(a).expect("shapes");
    let apa = ap.matmul(a).expect("shapes");
    let pap = pa.matmul(p).expect("shapes");
    let r1 = apa.max_abs_diff(a);
    let r2 = pap.max_abs_diff(p);
    let r3 = ap.max_abs_diff(&ap.transpose());
    let r4 = pa.max_abs_diff(&pa.transpose());
    r1.max(r2).max(r3).max(r4)
}
