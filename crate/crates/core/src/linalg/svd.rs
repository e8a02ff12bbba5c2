//! Rank-revealing batch routines backed by nalgebra's SVD.
//!
//! These are the one-shot references the recursive updates are checked
//! against, and the cold-start path of the filter.

use nalgebra::DMatrix;

use super::matrix::DenseMatrix;
use super::TAU_RANK;
use crate::error::{Error, Result};

/// Singular values of `a`, descending.
pub fn singular_values(a: &DenseMatrix) -> Vec<f64> {
    if a.rows() == 0 || a.cols() == 0 {
        return Vec::new();
    }
    // Row-major `a` is column-major `aᵀ`; nalgebra prefers the tall side.
    let m = if a.rows() >= a.cols() {
        a.to_nalgebra()
    } else {
        DMatrix::from_column_slice(a.cols(), a.rows(), a.as_slice())
    };
    let mut s: Vec<f64> = m.singular_values().iter().copied().collect();
    s.sort_by(|x, y| y.total_cmp(x));
    s
}

/// Number of singular values above `tol * sigma_max`.
pub fn numerical_rank(a: &DenseMatrix, tol: f64) -> usize {
    let s = singular_values(a);
    match s.first() {
        Some(&smax) if smax > 0.0 => s.iter().filter(|&&v| v > tol * smax).count(),
        _ => 0,
    }
}

/// Moore–Penrose pseudoinverse with relative cutoff `tol`, plus the
/// numerical rank it used.
pub fn pinv_with_rank(a: &DenseMatrix, tol: f64) -> Result<(DenseMatrix, usize)> {
    if !a.is_finite() {
        return Err(Error::NonFinite("pseudoinverse input"));
    }
    let (rows, cols) = a.shape();
    if rows == 0 || cols == 0 {
        return Ok((DenseMatrix::zeros(cols, rows), 0));
    }
    let tall = rows >= cols;
    let m = if tall { a.to_nalgebra() } else { DMatrix::from_column_slice(cols, rows, a.as_slice()) };
    let (mr, mc) = m.shape();
    let svd = m.svd(true, true);
    let u = svd.u.as_ref().expect("u requested");
    let vt = svd.v_t.as_ref().expect("v_t requested");
    let smax = svd.singular_values.iter().fold(0.0_f64, |acc, v| acc.max(*v));
    let cutoff = tol * smax;
    // pinv(m) = V diag(1/s) Uᵀ
    let mut pm = DMatrix::<f64>::zeros(mc, mr);
    let mut rank = 0;
    for (k, &sv) in svd.singular_values.iter().enumerate() {
        if smax == 0.0 || sv <= cutoff {
            continue;
        }
        rank += 1;
        let inv = 1.0 / sv;
        let vk = vt.row(k).transpose();
        let uk = u.column(k);
        pm.ger(inv, &vk, &uk, 1.0);
    }
    // For the wide case m = aᵀ, so pinv(a) = pinv(m)ᵀ.
    let out = if tall { DenseMatrix::from_nalgebra(&pm) } else { DenseMatrix::from_nalgebra(&pm.transpose()) };
    Ok((out, rank))
}

pub fn pinv(a: &DenseMatrix, tol: f64) -> Result<DenseMatrix> {
    pinv_with_rank(a, tol).map(|(p, _)| p)
}

/// Effective condition number: `sigma_max / sigma_min+`, where `sigma_min+`
/// is the smallest singular value above `TAU_RANK * sigma_max`.
///
/// Returns 1 for the zero matrix.
pub fn effective_condition_number(a: &DenseMatrix) -> f64 {
    let s = singular_values(a);
    let smax = match s.first() {
        Some(&v) if v > 0.0 => v,
        _ => return 1.0,
    };
    let smin = s.iter().copied().filter(|&v| v > TAU_RANK * smax).fold(smax, f64::min);
    smax / smin
}

/// Minimum-norm minimiser of `sum_i lambda^(N-1-i) (y_i - z_iᵀ g)^2`, rows
/// ordered oldest first so the last row carries unit weight.
///
/// Solved in one shot from the SVD of the `sqrt(lambda)`-weighted stack,
/// with no recursion; this is the reference the recursive filter must
/// reproduce.
pub fn batch_weighted_minnorm(z: &DenseMatrix, y: &[f64], lambda: f64) -> Result<Vec<f64>> {
    if y.len() != z.rows() {
        return Err(Error::DimensionMismatch { expected: z.rows(), got: y.len() });
    }
    if !(lambda > 0.0 && lambda <= 1.0) {
        return Err(Error::InvalidArgument(format!("forgetting factor {lambda} outside (0, 1]")));
    }
    if !z.is_finite() || y.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("batch least-squares input"));
    }
    let (zw, yw) = weight_rows(z, y, lambda);
    let p = pinv(&zw, TAU_RANK)?;
    p.matvec(&yw)
}

/// Applies `sqrt(lambda)^(N-1-i)` to row `i` of `z` and entry `i` of `y`.
pub fn weight_rows(z: &DenseMatrix, y: &[f64], lambda: f64) -> (DenseMatrix, Vec<f64>) {
    let n = z.rows();
    let mut zw = z.clone();
    let mut yw = y.to_vec();
    let root = lambda.sqrt();
    for i in 0..n {
        let w = root.powi((n - 1 - i) as i32);
        zw.row_mut(i).iter_mut().for_each(|v| *v *= w);
        yw[i] *= w;
    }
    (zw, yw)
}
