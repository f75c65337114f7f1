//! Random reset maps. The model fixes only the first two conditional moments
//! of a reset, so the law used in simulation is a choice.

use rand::Rng;
use rand_distr::{Binomial, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::linalg::{Matrix, Vector};

/// Law of the state right after a renewal-timed reset.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ResetSampler {
    /// `x -> J x + R`, ignoring the noise terms.
    AffineDeterministic,
    /// Gaussian with the model's conditional mean and covariance. With
    /// `clamp_negative` the drawn state is clipped at zero, which biases the
    /// moments and is meant for illustration only.
    MomentMatchedGaussian { clamp_negative: bool },
    /// One-dimensional models only: `Binomial(round(x), p)`.
    BinomialPartition {
        #[serde(default = "half")]
        p: f64,
    },
}

fn half() -> f64 {
    0.5
}

impl Default for ResetSampler {
    fn default() -> Self {
        ResetSampler::MomentMatchedGaussian {
            clamp_negative: false,
        }
    }
}

/// Law of the random offset `R` of a Poisson-timed reset.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OffsetSampler {
    /// Deterministic when `E[R R^T] = E[R] E[R]^T`, Gaussian otherwise.
    #[default]
    Auto,
    /// Always the mean offset (the second moment is ignored).
    Deterministic,
    /// Gaussian with the given first two moments.
    Gaussian,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Samplers {
    pub general: ResetSampler,
    pub poisson: OffsetSampler,
}

/// Counters for draws that had to be adjusted.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SamplerStats {
    pub poisson_events: u64,
    pub general_events: u64,
    /// Gaussian resets whose conditional covariance had a negative
    /// eigenvalue (set to zero before drawing).
    pub negative_variance_clamped: u64,
    /// Gaussian draws clipped at zero (`clamp_negative`).
    pub negative_state_clamped: u64,
    /// Binomial partitions of a negative state (treated as zero molecules).
    pub negative_count_clamped: u64,
}

impl SamplerStats {
    pub fn merge(&mut self, o: &SamplerStats) {
        self.poisson_events += o.poisson_events;
        self.general_events += o.general_events;
        self.negative_variance_clamped += o.negative_variance_clamped;
        self.negative_state_clamped += o.negative_state_clamped;
        self.negative_count_clamped += o.negative_count_clamped;
    }
}

/// Square-root factor `L` with `L L^T = cov`, clipping negative eigenvalues.
/// Returns whether clipping beyond round-off happened.
pub(crate) fn psd_factor(cov: &Matrix) -> (Matrix, bool) {
    let n = cov.nrows();
    if n == 1 {
        let v = cov[(0, 0)];
        return (Matrix::from_element(1, 1, v.max(0.0).sqrt()), v < 0.0);
    }
    let sym = (cov + cov.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let scale = eig.eigenvalues.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let mut clamped = false;
    let mut l = eig.eigenvectors.clone();
    for (j, &lambda) in eig.eigenvalues.iter().enumerate() {
        if lambda < -1e-12 * scale {
            clamped = true;
        }
        let s = lambda.max(0.0).sqrt();
        l.column_mut(j).scale_mut(s);
    }
    (l, clamped)
}

pub(crate) fn gaussian<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

/// Adds `L z` with `z` standard normal to `out`.
pub(crate) fn add_gaussian<R: Rng + ?Sized>(rng: &mut R, factor: &Matrix, out: &mut Vector) {
    let n = factor.ncols();
    for j in 0..n {
        let z = gaussian(rng);
        for i in 0..factor.nrows() {
            out[i] += factor[(i, j)] * z;
        }
    }
}

pub(crate) fn binomial<R: Rng + ?Sized>(rng: &mut R, count: u64, p: f64) -> f64 {
    if count == 0 {
        return 0.0;
    }
    Binomial::new(count, p).expect("p validated").sample(rng) as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn factor_reproduces_covariance() {
        let cov = Matrix::from_row_slice(2, 2, &[2.0, 0.6, 0.6, 1.0]);
        let (l, clamped) = psd_factor(&cov);
        assert!(!clamped);
        assert!((&l * l.transpose() - cov).amax() < 1e-14);
        let (l, clamped) = psd_factor(&Matrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]));
        assert!(clamped);
        assert!(
            (&l * l.transpose() - Matrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0])).amax()
                < 1e-14
        );
    }
}
