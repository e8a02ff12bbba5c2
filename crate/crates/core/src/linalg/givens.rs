use serde::{Deserialize, Serialize};

use super::matrix::DenseMatrix;
use crate::error::{Error, Result};

/// Plane rotation acting on coordinates `i` and `j`.
///
/// Applied from the left it replaces rows `(i, j)` by
/// `[c s; -s c] · [row_i; row_j]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GivensRotation {
    pub i: usize,
    pub j: usize,
    pub c: f64,
    pub s: f64,
}

/// Rotation magnitude for the pair `(x, y)`: `c = x/r`, `s = y/r` with
/// `r = hypot(x, y)`, so that `(x, y)` maps to `(r, 0)`.
///
/// Both zero gives the identity.
pub fn givens_from(x: f64, y: f64) -> (f64, f64, f64) {
    if y == 0.0 {
        // Keep r >= 0 even for negative pivots.
        if x >= 0.0 {
            (1.0, 0.0, x)
        } else {
            (-1.0, 0.0, -x)
        }
    } else if x == 0.0 {
        (0.0, y.signum(), y.abs())
    } else {
        let r = x.hypot(y);
        (x / r, y / r, r)
    }
}

impl GivensRotation {
    pub fn identity(i: usize, j: usize) -> Self {
        Self { i, j, c: 1.0, s: 0.0 }
    }

    /// Rotation on rows `(i, j)` that zeroes the second component of `(x, y)`.
    pub fn zeroing(i: usize, j: usize, x: f64, y: f64) -> Self {
        let (c, s, _) = givens_from(x, y);
        Self { i, j, c, s }
    }

    pub fn negated(self) -> Self {
        Self { c: -self.c, s: -self.s, ..self }
    }

    #[inline]
    pub fn apply_pair(&self, x: f64, y: f64) -> (f64, f64) {
        (self.c * x + self.s * y, -self.s * x + self.c * y)
    }

    /// Rotates two equally long slices in place.
    #[inline]
    pub fn rotate_slices(&self, a: &mut [f64], b: &mut [f64]) {
        let (c, s) = (self.c, self.s);
        if c == 1.0 && s == 0.0 {
            return;
        }
        for (x, y) in a.iter_mut().zip(b.iter_mut()) {
            let (xi, yi) = (*x, *y);
            *x = c * xi + s * yi;
            *y = -s * xi + c * yi;
        }
    }

    /// Applies the rotation to rows `i`, `j` of `m` in place.
    pub fn apply_rows(&self, m: &mut DenseMatrix) -> Result<()> {
        let n = m.rows();
        for idx in [self.i, self.j] {
            if idx >= n {
                return Err(Error::IndexOutOfRange { index: idx, len: n });
            }
        }
        if self.i == self.j {
            return Err(Error::InvalidArgument("rotation rows must differ".into()));
        }
        let (a, b) = m.two_rows_mut(self.i, self.j);
        self.rotate_slices(a, b);
        Ok(())
    }

    /// Applies the rotation to entries `i`, `j` of a vector.
    pub fn apply_vec(&self, v: &mut [f64]) {
        let (x, y) = self.apply_pair(v[self.i], v[self.j]);
        v[self.i] = x;
        v[self.j] = y;
    }
}

/// Returns `g · m` as a new matrix.
pub fn apply_rotation_left(m: &DenseMatrix, g: &GivensRotation) -> Result<DenseMatrix> {
    let mut out = m.clone();
    g.apply_rows(&mut out)?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn three_four_five() {
        let g = GivensRotation::zeroing(0, 1, 3.0, 4.0);
        assert!((g.c - 0.6).abs() < 1e-15 && (g.s - 0.8).abs() < 1e-15);
        let (r, z) = g.apply_pair(3.0, 4.0);
        assert!((r - 5.0).abs() < 1e-15 && z.abs() < 1e-15);
    }

    #[test]
    fn zero_and_aligned_inputs_give_identity() {
        assert_eq!(givens_from(0.0, 0.0), (1.0, 0.0, 0.0));
        assert_eq!(givens_from(2.5, 0.0), (1.0, 0.0, 2.5));
    }

    #[test]
    fn negative_pivot_keeps_nonnegative_radius() {
        for (x, y) in [(-3.0, 0.0), (0.0, -2.0), (-1.0, -1.0)] {
            let (c, s, r) = givens_from(x, y);
            assert!(r >= 0.0);
            assert!((c * c + s * s - 1.0).abs() < 1e-15);
            let g = GivensRotation { i: 0, j: 1, c, s };
            let (a, b) = g.apply_pair(x, y);
            assert!((a - r).abs() < 1e-15 && b.abs() < 1e-15);
        }
    }

    #[test]
    fn quarter_turn_on_identity() {
        let g = GivensRotation { i: 0, j: 1, c: 0.0, s: 1.0 };
        let out = apply_rotation_left(&DenseMatrix::identity(2), &g).unwrap();
        assert_eq!(out.as_slice(), &[0.0, 1.0, -1.0, 0.0]);
    }

    #[test]
    fn out_of_range_row_is_rejected() {
        let g = GivensRotation::identity(0, 3);
        assert!(matches!(
            apply_rotation_left(&DenseMatrix::identity(2), &g),
            Err(Error::IndexOutOfRange { index: 3, len: 2 })
        ));
    }
}
