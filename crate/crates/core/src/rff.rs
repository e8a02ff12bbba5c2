//! Random Fourier features for the Gaussian kernel.
//!
//! `z(x) = sqrt(2/D) · cos(Aᵀx + b)` with the columns of `A` drawn from
//! `Normal(0, σ⁻² I)` and `b` uniform on `[0, 2π)`, so that
//! `z(x)ᵀz(x') ≈ exp(−‖x − x'‖² / (2σ²))`. The bandwidth `σ` is a
//! length-scale, not a variance.

use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::linalg::matrix::dot;

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMap {
    input_dim: usize,
    feature_dim: usize,
    bandwidth: f64,
    seed: u64,
    /// Row `j` is the frequency vector `ω_j` (length `input_dim`).
    frequencies: Vec<f64>,
    phases: Vec<f64>,
    scale: f64,
    sampled: bool,
}

impl FeatureMap {
    /// Draws a map from a ChaCha20 stream seeded with `seed`. Frequencies
    /// are drawn first (feature by feature), then phases.
    pub fn sample(input_dim: usize, feature_dim: usize, bandwidth: f64, seed: u64) -> Result<Self> {
        if input_dim == 0 || feature_dim == 0 {
            return Err(Error::InvalidArgument("feature map dimensions must be positive".into()));
        }
        if !(bandwidth > 0.0 && bandwidth.is_finite()) {
            return Err(Error::InvalidArgument(format!("bandwidth must be positive, got {bandwidth}")));
        }
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, 1.0 / bandwidth).expect("finite positive sd");
        let frequencies: Vec<f64> = (0..input_dim * feature_dim).map(|_| normal.sample(&mut rng)).collect();
        let phases: Vec<f64> = (0..feature_dim).map(|_| rng.random_range(0.0..TAU)).collect();
        Ok(Self {
            input_dim,
            feature_dim,
            bandwidth,
            seed,
            frequencies,
            phases,
            scale: (2.0 / feature_dim as f64).sqrt(),
            sampled: true,
        })
    }

    /// Builds a map from explicit parameters. `frequencies` is `d × D`
    /// row-major (column `j` is `ω_j`), as in `Aᵀx`.
    ///
    /// Such maps cannot be serialised, since only sampled maps can be
    /// regenerated from their seed.
    pub fn with_parameters(input_dim: usize, frequencies: &[f64], phases: &[f64]) -> Result<Self> {
        let feature_dim = phases.len();
        if input_dim == 0 || feature_dim == 0 {
            return Err(Error::InvalidArgument("feature map dimensions must be positive".into()));
        }
        if frequencies.len() != input_dim * feature_dim {
            return Err(Error::DimensionMismatch { expected: input_dim * feature_dim, got: frequencies.len() });
        }
        let mut freq = vec![0.0; input_dim * feature_dim];
        for i in 0..input_dim {
            for j in 0..feature_dim {
                freq[j * input_dim + i] = frequencies[i * feature_dim + j];
            }
        }
        Ok(Self {
            input_dim,
            feature_dim,
            bandwidth: f64::NAN,
            seed: 0,
            frequencies: freq,
            phases: phases.to_vec(),
            scale: (2.0 / feature_dim as f64).sqrt(),
            sampled: false,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn phases(&self) -> &[f64] {
        &self.phases
    }

    /// Frequency vector `ω_j`.
    pub fn frequency(&self, j: usize) -> &[f64] {
        &self.frequencies[j * self.input_dim..(j + 1) * self.input_dim]
    }

    pub fn embed(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.feature_dim];
        self.embed_into(x, &mut out)?;
        Ok(out)
    }

    pub fn embed_into(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        if x.len() != self.input_dim {
            return Err(Error::DimensionMismatch { expected: self.input_dim, got: x.len() });
        }
        if out.len() != self.feature_dim {
            return Err(Error::DimensionMismatch { expected: self.feature_dim, got: out.len() });
        }
        for (j, o) in out.iter_mut().enumerate() {
            *o = self.scale * (dot(self.frequency(j), x) + self.phases[j]).cos();
        }
        Ok(())
    }

    /// `z(x)ᵀ z(x2)`, the Monte-Carlo estimate of the Gaussian kernel.
    pub fn kernel_estimate(&self, x: &[f64], x2: &[f64]) -> Result<f64> {
        let a = self.embed(x)?;
        let b = self.embed(x2)?;
        Ok(dot(&a, &b))
    }
}

/// Exact Gaussian kernel `exp(−‖x − x'‖² / (2σ²))`.
pub fn gaussian_kernel(x: &[f64], x2: &[f64], bandwidth: f64) -> f64 {
    let d2: f64 = x.iter().zip(x2).map(|(a, b)| (a - b) * (a - b)).sum();
    (-d2 / (2.0 * bandwidth * bandwidth)).exp()
}

#[derive(Serialize, Deserialize)]
struct FeatureMapSpec {
    input_dim: usize,
    feature_dim: usize,
    bandwidth: f64,
    seed: u64,
}

impl Serialize for FeatureMap {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        if !self.sampled {
            return Err(serde::ser::Error::custom("only seeded feature maps can be serialised"));
        }
        FeatureMapSpec {
            input_dim: self.input_dim,
            feature_dim: self.feature_dim,
            bandwidth: self.bandwidth,
            seed: self.seed,
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for FeatureMap {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let spec = FeatureMapSpec::deserialize(deserializer)?;
        FeatureMap::sample(spec.input_dim, spec.feature_dim, spec.bandwidth, spec.seed)
            .map_err(serde::de::Error::custom)
    }
}
