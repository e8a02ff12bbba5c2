//! Dense kernels, Givens rotations and rank-aware QR up/downdating.

pub mod givens;
pub mod matrix;
pub mod qr;
pub mod svd;

pub use givens::{apply_rotation_left, givens_from, GivensRotation};
pub use matrix::DenseMatrix;
pub use qr::{
    penrose_residual, qr_decompose, AppendOutcome, DowndateBranch, QrFactors, RemoveOutcome,
    UpdateWorkspace,
};
pub use svd::{batch_weighted_minnorm, effective_condition_number, pinv, singular_values};

/// Relative threshold separating a new row direction from round-off.
pub const TAU_RANK: f64 = 1e-10;
/// Relative tolerance on the downdate range conditions.
pub const TAU_RANGE: f64 = 1e-8;
/// Smallest admissible `|1 − vᵀk|` in a rank-preserving downdate.
pub const TAU_DENOM: f64 = 1e-12;
