//! The PDMP model: linear flow `x' = a_hat + A x`, any number of
//! Poisson-timed affine reset families and exactly one renewal-timed family.

mod lift;

pub use lift::{lift_second_order, LiftedModel, LiftedPoissonFamily};

use std::fmt;

use crate::distributions::InterEventDistribution;
use crate::linalg::{is_symmetric, min_symmetric_eigenvalue, Matrix, Vector};
use crate::tolerances::{PSD_REL, SYMMETRY_REL};

/// Flow between events, `x' = a_hat + A x`.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearDynamics {
    pub a_hat: Vector,
    pub a: Matrix,
}

/// Resets `x -> J x + R` arriving at constant rate. `R` may be random; only
/// its first two raw moments enter the moment equations.
#[derive(Clone, Debug, PartialEq)]
pub struct PoissonResetFamily {
    pub rate: f64,
    pub j: Matrix,
    pub r_mean: Vector,
    /// `E[R R^T]`
    pub r_second: Matrix,
}

impl PoissonResetFamily {
    /// A family with a deterministic offset, `E[R R^T] = R R^T`.
    pub fn deterministic(rate: f64, j: Matrix, r: Vector) -> Self {
        let r_second = &r * r.transpose();
        PoissonResetFamily {
            rate,
            j,
            r_mean: r,
            r_second,
        }
    }
}

/// Renewal-timed resets with conditional moments
/// `E[x+ | x] = J x + R` and
/// `Cov[x+ | x] = Q x x^T Q^T + B x C^T + C x^T B^T + D`.
#[derive(Clone, Debug, PartialEq)]
pub struct GeneralResetFamily {
    pub dist: InterEventDistribution,
    pub j: Matrix,
    pub r: Vector,
    pub q: Matrix,
    pub b: Matrix,
    pub c: Vector,
    pub d: Matrix,
}

impl GeneralResetFamily {
    /// Deterministic affine reset `x -> J x + R` (all noise terms zero).
    pub fn affine(dist: InterEventDistribution, j: Matrix, r: Vector) -> Self {
        let n = j.nrows();
        GeneralResetFamily {
            dist,
            j,
            r,
            q: Matrix::zeros(n, n),
            b: Matrix::zeros(n, n),
            c: Vector::zeros(n),
            d: Matrix::zeros(n, n),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PdmpModel {
    pub dynamics: LinearDynamics,
    pub poisson: Vec<PoissonResetFamily>,
    pub general: GeneralResetFamily,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Violation {
    pub path: String,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    fn push(&mut self, path: impl Into<String>, message: impl Into<String>) {
        self.violations.push(Violation {
            path: path.into(),
            message: message.into(),
        });
    }

    /// True when some violation is reported at `path` (or below it).
    pub fn mentions(&self, path: &str) -> bool {
        self.violations.iter().any(|v| v.path.starts_with(path))
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_valid() {
            return write!(f, "model is valid");
        }
        for (i, v) in self.violations.iter().enumerate() {
            if i > 0 {
                writeln!(f)?;
            }
            write!(f, "{v}")?;
        }
        Ok(())
    }
}

struct Checker<'a> {
    n: usize,
    report: &'a mut ValidationReport,
}

impl Checker<'_> {
    /// Shape and finiteness; returns whether the matrix can be used further.
    fn matrix(&mut self, path: &str, m: &Matrix) -> bool {
        if m.shape() != (self.n, self.n) {
            self.report.push(
                path,
                format!(
                    "dimension mismatch: expected {n}x{n}, got {}x{}",
                    m.nrows(),
                    m.ncols(),
                    n = self.n
                ),
            );
            return false;
        }
        self.finite(path, m.as_slice())
    }

    fn vector(&mut self, path: &str, v: &Vector) -> bool {
        if v.len() != self.n {
            self.report.push(
                path,
                format!(
                    "dimension mismatch: expected length {}, got {}",
                    self.n,
                    v.len()
                ),
            );
            return false;
        }
        self.finite(path, v.as_slice())
    }

    fn finite(&mut self, path: &str, values: &[f64]) -> bool {
        if values.iter().all(|x| x.is_finite()) {
            true
        } else {
            self.report.push(path, "entries must be finite");
            false
        }
    }

    fn symmetric(&mut self, path: &str, m: &Matrix) -> bool {
        if is_symmetric(m, SYMMETRY_REL) {
            true
        } else {
            self.report.push(path, "must be symmetric");
            false
        }
    }

    fn psd(&mut self, path: &str, m: &Matrix, what: &str) {
        let scale = m
            .diagonal()
            .iter()
            .map(|x| x.abs())
            .sum::<f64>()
            .max(f64::MIN_POSITIVE);
        let lo = min_symmetric_eigenvalue(m);
        if lo < -PSD_REL * scale {
            self.report.push(
                path,
                format!("{what} must be positive semidefinite (smallest eigenvalue {lo:.3e})"),
            );
        }
    }
}

impl PdmpModel {
    pub fn dim(&self) -> usize {
        self.dynamics.a_hat.len()
    }

    /// Checks every structural invariant and lists each violation with the
    /// path of the offending field.
    pub fn validate(&self) -> ValidationReport {
        let mut report = ValidationReport::default();
        let n = self.dim();
        if n == 0 {
            report.push("dynamics.a_hat", "state dimension must be at least 1");
            return report;
        }
        let mut c = Checker {
            n,
            report: &mut report,
        };
        c.vector("dynamics.a_hat", &self.dynamics.a_hat);
        c.matrix("dynamics.A", &self.dynamics.a);
        for (i, p) in self.poisson.iter().enumerate() {
            let at = |f: &str| format!("poisson_resets[{i}].{f}");
            if !(p.rate.is_finite() && p.rate > 0.0) {
                c.report.push(
                    at("rate"),
                    format!("must be finite and > 0, got {}", p.rate),
                );
            }
            c.matrix(&at("J"), &p.j);
            let mean_ok = c.vector(&at("R_mean"), &p.r_mean);
            if c.matrix(&at("R_second"), &p.r_second) && c.symmetric(&at("R_second"), &p.r_second) {
                c.psd(&at("R_second"), &p.r_second, "the second moment");
                if mean_ok {
                    let cov = &p.r_second - &p.r_mean * p.r_mean.transpose();
                    c.psd(&at("R_second"), &cov, "R_second - R_mean R_mean^T");
                }
            }
        }
        let g = &self.general;
        c.matrix("general_reset.J", &g.j);
        c.vector("general_reset.R", &g.r);
        c.matrix("general_reset.Q", &g.q);
        c.matrix("general_reset.B", &g.b);
        c.vector("general_reset.C", &g.c);
        if c.matrix("general_reset.D", &g.d) {
            c.symmetric("general_reset.D", &g.d);
        }
        report
    }

    /// `A_bar = A + sum h (J - I)` and `a_bar = a_hat + sum h E[R]`: the flow
    /// of the conditional mean between renewal-timed resets.
    pub fn effective_matrices(&self) -> (Matrix, Vector) {
        let n = self.dim();
        let mut a = self.dynamics.a.clone();
        let mut a_hat = self.dynamics.a_hat.clone();
        for p in &self.poisson {
            a += (&p.j - Matrix::identity(n, n)) * p.rate;
            a_hat += &p.r_mean * p.rate;
        }
        (a, a_hat)
    }

    /// Every vector/matrix entry that carries state units scaled by `s`
    /// (first-order terms linearly, second-order terms quadratically).
    pub fn scaled_inputs(&self, s: f64) -> PdmpModel {
        let mut m = self.clone();
        m.dynamics.a_hat *= s;
        for p in m.poisson.iter_mut() {
            p.r_mean *= s;
            p.r_second *= s * s;
        }
        m.general.r *= s;
        m.general.c *= s;
        m.general.d *= s * s;
        m
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn protein() -> PdmpModel {
        let one = |x: f64| Matrix::from_element(1, 1, x);
        let v = |x: f64| Vector::from_element(1, x);
        PdmpModel {
            dynamics: LinearDynamics {
                a_hat: v(0.0),
                a: one(-0.3),
            },
            poisson: vec![PoissonResetFamily {
                rate: 10.0,
                j: one(1.0),
                r_mean: v(2.0),
                r_second: one(6.0),
            }],
            general: GeneralResetFamily {
                dist: InterEventDistribution::gamma(4.0, 0.25).unwrap(),
                j: one(0.5),
                r: v(0.0),
                q: one(0.0),
                b: one(0.125),
                c: v(1.0),
                d: one(0.0),
            },
        }
    }

    #[test]
    fn protein_model_is_valid() {
        assert!(protein().validate().is_valid());
    }

    #[test]
    fn asymmetric_d_is_named() {
        let mut m = protein();
        m.dynamics = LinearDynamics {
            a_hat: Vector::zeros(2),
            a: Matrix::identity(2, 2) * -1.0,
        };
        m.poisson.clear();
        m.general = GeneralResetFamily::affine(
            InterEventDistribution::exponential(1.0).unwrap(),
            Matrix::identity(2, 2),
            Vector::zeros(2),
        );
        m.general.d = Matrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        let r = m.validate();
        assert!(r.mentions("general_reset.D"));
        assert!(r.to_string().contains("symmetric"));
    }

    #[test]
    fn wrong_j2_dimension_is_named() {
        let mut m = protein();
        m.general.j = Matrix::identity(2, 2);
        let r = m.validate();
        assert!(r.mentions("general_reset.J"));
        assert!(r.to_string().contains("dimension mismatch"));
    }

    #[test]
    fn bad_poisson_moments() {
        let mut m = protein();
        m.poisson[0].r_second = Matrix::from_element(1, 1, 3.0);
        assert!(m.validate().mentions("poisson_resets[0].R_second"));
        m.poisson[0].r_second = Matrix::from_element(1, 1, 4.0);
        m.poisson[0].rate = 0.0;
        let r = m.validate();
        assert!(r.mentions("poisson_resets[0].rate"));
        assert_eq!(r.violations.len(), 1);
    }

    #[test]
    fn effective_matrices_examples() {
        let m = protein();
        let (a, a_hat) = m.effective_matrices();
        assert_eq!(a[(0, 0)], -0.3);
        assert_eq!(a_hat[0], 20.0);

        let mut m = protein();
        m.poisson.clear();
        assert_eq!(
            m.effective_matrices(),
            (m.dynamics.a.clone(), m.dynamics.a_hat.clone())
        );

        let mut m = protein();
        m.poisson[0].r_mean = Vector::zeros(1);
        m.poisson[0].r_second = Matrix::zeros(1, 1);
        assert_eq!(
            m.effective_matrices(),
            (m.dynamics.a.clone(), m.dynamics.a_hat.clone())
        );
    }
}
