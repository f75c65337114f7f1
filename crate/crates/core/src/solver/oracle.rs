//! Independent check of the stationary mean through the conditional mean
//! `m(tau) = E[x | timer = tau]`, which solves `m' = a_bar + A_bar m` from
//! `m(0)`, the post-reset fixed point. All averages are composite Simpson sums
//! on a caller-supplied grid, so nothing here shares code with the
//! expectation functionals.

use super::{ensure_valid, Result, SolveOptions, SolverError, StabilityReport};
use crate::distributions::InterEventDistribution;
use crate::linalg::{flow_with_integral, solve, spectral_radius, LinalgError, Matrix, Vector};
use crate::model::PdmpModel;

#[derive(Clone, Debug)]
pub struct ConditionalMeanCurve {
    pub tau: Vec<f64>,
    pub conditional_mean: Vec<Vector>,
    /// `E[x | tau = 0]`
    pub initial: Vector,
    /// The conditional mean averaged over the stationary timer law.
    pub unconditioned_mean: Vector,
}

/// Composite Simpson weights on an arbitrary increasing grid; a leftover last
/// interval gets the trapezoid rule.
fn simpson_weights(x: &[f64]) -> Vec<f64> {
    let mut w = vec![0.0; x.len()];
    let mut i = 0;
    while i + 2 < x.len() {
        let h0 = x[i + 1] - x[i];
        let h1 = x[i + 2] - x[i + 1];
        let s = (h0 + h1) / 6.0;
        w[i] += s * (2.0 - h1 / h0);
        w[i + 1] += s * (h0 + h1) * (h0 + h1) / (h0 * h1);
        w[i + 2] += s * (2.0 - h0 / h1);
        i += 2;
    }
    if i + 1 < x.len() {
        let h = x[i + 1] - x[i];
        w[i] += 0.5 * h;
        w[i + 1] += 0.5 * h;
    }
    w
}

fn timer_density(d: &InterEventDistribution, t: f64) -> f64 {
    match d {
        InterEventDistribution::Deterministic { value } if t <= *value => 1.0 / value,
        _ => d.timer_pdf(t),
    }
}

/// The grid must start at 0, increase strictly and cover the support of the
/// timer (up to the point where the survival function is negligible).
pub fn conditional_mean_ode_oracle(
    m: &PdmpModel,
    tau_grid: &[f64],
    opts: &SolveOptions,
) -> Result<ConditionalMeanCurve> {
    ensure_valid(m)?;
    if tau_grid.len() < 3 || tau_grid[0] != 0.0 || tau_grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(SolverError::Linalg(LinalgError::Dimension {
            op: "conditional_mean_ode_oracle",
            detail: "timer grid must start at 0 and increase strictly (at least 3 points)".into(),
        }));
    }
    let n = m.dim();
    let (a_bar, a_hat_bar) = m.effective_matrices();
    let dist = &m.general.dist;
    let flows: Vec<(Matrix, Vector)> = tau_grid
        .iter()
        .map(|&t| flow_with_integral(&a_bar, &a_hat_bar, t))
        .collect::<std::result::Result<_, _>>()?;

    let (exp_t, phi_t) = match dist {
        InterEventDistribution::Deterministic { value } => {
            flow_with_integral(&a_bar, &a_hat_bar, *value)?
        }
        _ => {
            let w = simpson_weights(tau_grid);
            let mut e = Matrix::zeros(n, n);
            let mut p = Vector::zeros(n);
            for ((&t, wi), (ft, pt)) in tau_grid.iter().zip(&w).zip(&flows) {
                let f = dist.pdf(t).map_err(SolverError::Distribution)?;
                if !f.is_finite() {
                    return Err(SolverError::Linalg(LinalgError::NonFinite {
                        op: "conditional_mean_ode_oracle (density at grid point)",
                    }));
                }
                e += ft * (wi * f);
                p += pt * (wi * f);
            }
            (e, p)
        }
    };
    let cycle = &m.general.j * &exp_t;
    let rho = spectral_radius(&cycle)?;
    let report = StabilityReport::new(1, rho, opts.stability_margin, super::ORDER1_MATRIX);
    if !report.stable {
        return Err(SolverError::Unstable(report));
    }
    let s = Matrix::identity(n, n) - cycle;
    let rhs = &m.general.r + &m.general.j * phi_t;
    let initial = solve(&s, &Matrix::from_column_slice(n, 1, rhs.as_slice()))?
        .solution
        .column(0)
        .into_owned();

    let conditional_mean: Vec<Vector> = flows.iter().map(|(e, phi)| e * &initial + phi).collect();
    let w = simpson_weights(tau_grid);
    let mut unconditioned = Vector::zeros(n);
    for ((&t, wi), c) in tau_grid.iter().zip(&w).zip(&conditional_mean) {
        unconditioned += c * (wi * timer_density(dist, t));
    }
    Ok(ConditionalMeanCurve {
        tau: tau_grid.to_vec(),
        conditional_mean,
        initial,
        unconditioned_mean: unconditioned,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn simpson_is_exact_for_cubics() {
        let x = [0.0, 0.3, 0.5, 1.1, 1.2];
        let w = simpson_weights(&x);
        let s: f64 = x.iter().zip(&w).map(|(t, w)| w * t * t).sum();
        assert!((s - 1.2f64.powi(3) / 3.0).abs() < 1e-14);
        let x: Vec<f64> = (0..=10).map(|i| i as f64 * 0.2).collect();
        let w = simpson_weights(&x);
        let s: f64 = x.iter().zip(&w).map(|(t, w)| w * t.powi(3)).sum();
        assert!((s - 4.0).abs() < 1e-13);
    }
}
