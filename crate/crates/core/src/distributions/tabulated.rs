//! Empirical inter-event law from a grid of `(t, pdf)` points.
//!
//! The grid pdf is integrated by the trapezoid rule to CDF nodes, which are
//! renormalized to end at 1 and interpolated by a monotone (Fritsch–Carlson /
//! PCHIP) cubic. The reported density is the derivative of that cubic, so pdf,
//! CDF and moments are mutually consistent and the density integrates to 1.

use serde::{Deserialize, Serialize};

use super::{DistributionError, Result};
use crate::quadrature::integrate_scalar;
use crate::tolerances::Tolerance;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TabulatedLaw {
    points: Vec<[f64; 2]>,
    t: Vec<f64>,
    cdf: Vec<f64>,
    slope: Vec<f64>,
    moments: [f64; 3],
}

impl TabulatedLaw {
    pub fn new(points: &[[f64; 2]]) -> Result<Self> {
        if points.len() < 2 {
            return Err(DistributionError::InvalidTable(
                "need at least two (t, pdf) points".into(),
            ));
        }
        for (i, p) in points.iter().enumerate() {
            if !p[0].is_finite() || !p[1].is_finite() {
                return Err(DistributionError::InvalidTable(format!(
                    "point {i} is not finite"
                )));
            }
            if p[0] < 0.0 {
                return Err(DistributionError::InvalidTable(format!(
                    "point {i}: t = {} is negative",
                    p[0]
                )));
            }
            if p[1] < 0.0 {
                return Err(DistributionError::InvalidTable(format!(
                    "point {i}: pdf = {} is negative",
                    p[1]
                )));
            }
            if i > 0 && p[0] <= points[i - 1][0] {
                return Err(DistributionError::InvalidTable(format!(
                    "t values must be strictly increasing (point {i})"
                )));
            }
        }
        let t: Vec<f64> = points.iter().map(|p| p[0]).collect();
        let mut cdf = vec![0.0; t.len()];
        for i in 1..t.len() {
            cdf[i] = cdf[i - 1] + 0.5 * (points[i][1] + points[i - 1][1]) * (t[i] - t[i - 1]);
        }
        let total = *cdf.last().unwrap();
        if total <= 0.0 {
            return Err(DistributionError::InvalidTable(
                "the tabulated pdf has zero mass".into(),
            ));
        }
        for c in cdf.iter_mut() {
            *c /= total;
        }
        *cdf.last_mut().unwrap() = 1.0;
        let slope = pchip_slopes(&t, &cdf);
        let mut law = TabulatedLaw {
            points: points.to_vec(),
            t,
            cdf,
            slope,
            moments: [0.0; 3],
        };
        for k in 1..=3 {
            let mut m = 0.0;
            for w in law.t.windows(2) {
                // Integrand is a polynomial of degree <= 5 on each panel.
                let (v, _) = integrate_scalar(
                    |x| x.powi(k) * law.pdf(x),
                    &[w[0], w[1]],
                    Tolerance::new(0.0, 1e-14),
                )
                .map_err(|e| DistributionError::InvalidTable(e.to_string()))?;
                m += v;
            }
            law.moments[k as usize - 1] = m;
        }
        if law.moments[0] <= 0.0 {
            return Err(DistributionError::InvalidTable(
                "mean is not positive".into(),
            ));
        }
        Ok(law)
    }

    /// The `(t, pdf)` grid as supplied (before renormalization).
    pub fn points(&self) -> &[[f64; 2]] {
        &self.points
    }

    pub fn grid(&self) -> &[f64] {
        &self.t
    }

    pub fn support_start(&self) -> f64 {
        self.t[0]
    }

    pub fn support_end(&self) -> f64 {
        *self.t.last().unwrap()
    }

    pub(crate) fn moment(&self, order: u32) -> f64 {
        self.moments[order as usize - 1]
    }

    fn segment(&self, x: f64) -> usize {
        let i = self.t.partition_point(|&ti| ti <= x);
        i.clamp(1, self.t.len() - 1) - 1
    }

    fn hermite(&self, k: usize, x: f64) -> (f64, f64) {
        let h = self.t[k + 1] - self.t[k];
        let s = (x - self.t[k]) / h;
        let (y0, y1) = (self.cdf[k], self.cdf[k + 1]);
        let (d0, d1) = (self.slope[k], self.slope[k + 1]);
        let s2 = s * s;
        let s3 = s2 * s;
        let value = (2.0 * s3 - 3.0 * s2 + 1.0) * y0
            + (s3 - 2.0 * s2 + s) * h * d0
            + (-2.0 * s3 + 3.0 * s2) * y1
            + (s3 - s2) * h * d1;
        let deriv = (6.0 * s2 - 6.0 * s) / h * y0
            + (3.0 * s2 - 4.0 * s + 1.0) * d0
            + (6.0 * s - 6.0 * s2) / h * y1
            + (3.0 * s2 - 2.0 * s) * d1;
        (value, deriv)
    }

    pub fn cdf(&self, x: f64) -> f64 {
        if x <= self.t[0] {
            return 0.0;
        }
        if x >= self.support_end() {
            return 1.0;
        }
        self.hermite(self.segment(x), x).0.clamp(0.0, 1.0)
    }

    pub fn survival(&self, x: f64) -> f64 {
        1.0 - self.cdf(x)
    }

    pub fn pdf(&self, x: f64) -> f64 {
        if x < self.t[0] || x > self.support_end() {
            return 0.0;
        }
        self.hermite(self.segment(x), x).1.max(0.0)
    }

    /// Smallest `x` with `cdf(x) >= u`.
    pub fn inverse_cdf(&self, u: f64) -> f64 {
        if u <= 0.0 {
            return self.t[0];
        }
        if u >= 1.0 {
            return self.support_end();
        }
        // First node strictly above u identifies a segment with positive mass.
        let j = self.cdf.partition_point(|&c| c < u).max(1);
        let k = j - 1;
        let (mut lo, mut hi) = (self.t[k], self.t[k + 1]);
        let mut x = lo + (hi - lo) * (u - self.cdf[k]) / (self.cdf[k + 1] - self.cdf[k]);
        for _ in 0..100 {
            let (f, df) = self.hermite(k, x);
            let r = f - u;
            if r.abs() <= 1e-15 {
                break;
            }
            if r > 0.0 {
                hi = x;
            } else {
                lo = x;
            }
            let newton = if df > 0.0 { x - r / df } else { f64::NAN };
            x = if newton > lo && newton < hi {
                newton
            } else {
                0.5 * (lo + hi)
            };
            if hi - lo <= 1e-15 * hi.abs().max(1e-300) {
                break;
            }
        }
        x
    }

    pub fn upper_quantile(&self, tail: f64) -> f64 {
        self.inverse_cdf(1.0 - tail)
    }

    pub fn lower_quantile(&self, mass: f64) -> f64 {
        self.inverse_cdf(mass)
    }
}

/// Node derivatives of the shape-preserving piecewise cubic through `(x, y)`,
/// using the weighted harmonic mean in the interior and the three-point
/// one-sided formula at the ends.
fn pchip_slopes(x: &[f64], y: &[f64]) -> Vec<f64> {
    let n = x.len();
    let h: Vec<f64> = x.windows(2).map(|w| w[1] - w[0]).collect();
    let delta: Vec<f64> = (0..n - 1).map(|k| (y[k + 1] - y[k]) / h[k]).collect();
    if n == 2 {
        return vec![delta[0], delta[0]];
    }
    let mut d = vec![0.0; n];
    for k in 1..n - 1 {
        if delta[k - 1] * delta[k] > 0.0 {
            let w1 = 2.0 * h[k] + h[k - 1];
            let w2 = h[k] + 2.0 * h[k - 1];
            d[k] = (w1 + w2) / (w1 / delta[k - 1] + w2 / delta[k]);
        }
    }
    let edge = |h0: f64, h1: f64, m0: f64, m1: f64| {
        let d = ((2.0 * h0 + h1) * m0 - h0 * m1) / (h0 + h1);
        if d.signum() != m0.signum() || m0 == 0.0 {
            0.0
        } else if m0.signum() != m1.signum() && d.abs() > 3.0 * m0.abs() {
            3.0 * m0
        } else {
            d
        }
    };
    d[0] = edge(h[0], h[1], delta[0], delta[1]);
    d[n - 1] = edge(h[n - 2], h[n - 3], delta[n - 2], delta[n - 3]);
    d
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_table_is_exact() {
        let law = TabulatedLaw::new(&[[1.0, 0.5], [2.0, 0.5], [3.0, 0.5]]).unwrap();
        assert!((law.cdf(2.5) - 0.75).abs() < 1e-15);
        assert!((law.pdf(1.7) - 0.5).abs() < 1e-14);
        assert!((law.moment(1) - 2.0).abs() < 1e-13);
        assert!((law.moment(2) - 13.0 / 3.0).abs() < 1e-13);
        assert!((law.inverse_cdf(0.25) - 1.5).abs() < 1e-13);
    }

    #[test]
    fn cdf_is_monotone_and_inverse_roundtrips() {
        let pts: Vec<[f64; 2]> = (0..40)
            .map(|i| {
                let t = 0.1 * i as f64;
                [t, t * (-t).exp() + if i == 17 { 0.4 } else { 0.0 }]
            })
            .collect();
        let law = TabulatedLaw::new(&pts).unwrap();
        let mut prev = 0.0;
        for i in 0..=4000 {
            let x = 0.001 * i as f64;
            let c = law.cdf(x);
            assert!(c + 1e-15 >= prev);
            prev = c;
        }
        for u in [1e-6, 0.1, 0.5, 0.9, 0.999] {
            assert!((law.cdf(law.inverse_cdf(u)) - u).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_bad_tables() {
        assert!(TabulatedLaw::new(&[[0.0, 1.0]]).is_err());
        assert!(TabulatedLaw::new(&[[1.0, 1.0], [0.5, 1.0]]).is_err());
        assert!(TabulatedLaw::new(&[[0.0, 0.0], [1.0, 0.0]]).is_err());
        assert!(TabulatedLaw::new(&[[0.0, -1.0], [1.0, 1.0]]).is_err());
    }
}
