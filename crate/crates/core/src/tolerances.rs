//! Numerical constants shared by every module.
//!
//! Anything that compares floating-point results against a threshold reads it
//! from here, so a tolerance change is a one-line edit.

use serde::{Deserialize, Serialize};

/// Relative tolerance for algebraic kernels (Kronecker identities, solves).
pub const ALGEBRAIC_REL: f64 = 1e-10;

/// Survival mass discarded above the upper truncation point of quadrature.
pub const UPPER_TAIL_MASS: f64 = 1e-12;

/// Probability mass discarded below the lower truncation point of quadrature
/// over the inter-event law (timer integrals always start at zero).
pub const LOWER_TAIL_MASS: f64 = 1e-15;

/// Survival values below this are treated as "beyond the support".
pub const SURVIVAL_UNDERFLOW: f64 = 1e-300;

/// Spectral radii must sit below `1 - STABILITY_MARGIN` to count as stable.
pub const STABILITY_MARGIN: f64 = 1e-9;

/// Allowed relative disagreement between the first-order block of the
/// lifted solution and the direct first-order solution.
pub const MEAN_CONSISTENCY_REL: f64 = 1e-6;

/// Condition number above which the renewal system is reported as
/// near-singular.
pub const CONDITION_WARNING: f64 = 1e10;

/// Relative slack for symmetry and positive-semidefiniteness checks.
pub const SYMMETRY_REL: f64 = 1e-9;
pub const PSD_REL: f64 = 1e-7;

/// |mean| below `CV2_MEAN_FLOOR * state_scale` leaves CV² undefined.
pub const CV2_MEAN_FLOOR: f64 = 1e-12;

/// Maximum number of interval bisections in adaptive quadrature.
pub const QUAD_MAX_SUBDIVISIONS: usize = 4000;

/// Requested accuracy of an expectation functional: the estimate is accepted
/// once `error <= max(abs, rel * |value|)` (norms are max-abs over entries).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tolerance {
    pub abs: f64,
    pub rel: f64,
}

impl Tolerance {
    pub const fn new(abs: f64, rel: f64) -> Self {
        Self { abs, rel }
    }

    /// Purely relative tolerance, for functionals whose magnitude is tiny.
    pub const fn relative(rel: f64) -> Self {
        Self { abs: 0.0, rel }
    }

    pub fn target(&self, magnitude: f64) -> f64 {
        self.abs.max(self.rel * magnitude.abs())
    }
}

impl Default for Tolerance {
    fn default() -> Self {
        Self::new(1e-10, 1e-10)
    }
}
