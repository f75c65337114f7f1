//! Exact stationary first and second moments.
//!
//! Let `y` be the mean just after a renewal-timed reset. Over one cycle of
//! length `T` the mean flows under `x' = A_bar x + a_bar`, so
//! `y = J E[e^{A_bar T}] y + R + J E[Phi(T)]`, and the stationary mean is the
//! flow from `y` averaged over the timer:
//! `E[e^{A_bar tau}] y + E[Phi(tau)]`. Second moments are the same computation
//! on the lifted system for `[x; vec(x x^T)]`. A stationary solution exists
//! exactly when the cycle map `J E[e^{A_bar T}]` is a contraction.

mod oracle;

pub use oracle::{conditional_mean_ode_oracle, ConditionalMeanCurve};

use log::warn;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::distributions::{
    expect_matrix_exp_t, renewal_averages, DistributionError, InterEventDistribution,
};
use crate::linalg::{
    max_abs, min_symmetric_eigenvalue, solve, spectral_radius, unvec, LinalgError, Matrix, Vector,
};
use crate::model::{lift_second_order, PdmpModel, ValidationReport};
use crate::tolerances::{
    Tolerance, CONDITION_WARNING, CV2_MEAN_FLOOR, MEAN_CONSISTENCY_REL, PSD_REL, STABILITY_MARGIN,
};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveOptions {
    pub tol: Tolerance,
    pub stability_margin: f64,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            tol: Tolerance::default(),
            stability_margin: STABILITY_MARGIN,
        }
    }
}

impl SolveOptions {
    pub fn with_tolerance(tol: Tolerance) -> Self {
        SolveOptions {
            tol,
            ..Self::default()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub order: u8,
    pub spectral_radius: f64,
    pub stable: bool,
    pub matrix_checked: String,
    /// Order 2 only: radius of the block acting on `vec(x x^T)` alone.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub second_order_block_radius: Option<f64>,
}

impl StabilityReport {
    fn new(order: u8, rho: f64, margin: f64, matrix_checked: &str) -> Self {
        StabilityReport {
            order,
            spectral_radius: rho,
            stable: rho < 1.0 - margin,
            matrix_checked: matrix_checked.to_string(),
            second_order_block_radius: None,
        }
    }
}

const ORDER1_MATRIX: &str = "J2 E[exp(A_bar T)]";
const ORDER2_MATRIX: &str = "J_mu2 E[exp(A_mu_bar T)]";

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("invalid model:\n{0}")]
    Invalid(ValidationReport),
    #[error("no stationary moments of order {}: spectral radius of {} is {:.6} (must be < 1)", .0.order, .0.matrix_checked, .0.spectral_radius)]
    Unstable(StabilityReport),
    #[error(transparent)]
    Distribution(#[from] DistributionError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error("lifted mean {lifted:?} disagrees with the direct mean {direct:?} (relative difference {relative:.3e})")]
    Inconsistent {
        lifted: Vec<f64>,
        direct: Vec<f64>,
        relative: f64,
    },
}

impl SolverError {
    /// Instability or a divergent expectation: the model has no finite
    /// stationary moments, as opposed to a numerical failure.
    pub fn is_infeasible(&self) -> bool {
        matches!(
            self,
            SolverError::Unstable(_) | SolverError::Distribution(DistributionError::Divergent(_))
        )
    }
}

pub type Result<T> = std::result::Result<T, SolverError>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanSolution {
    pub mean: Vec<f64>,
    pub stability: StabilityReport,
    pub numerical_error_estimate: f64,
    /// 1-norm condition number of `I - J E[e^{A_bar T}]`.
    pub condition_number: f64,
    pub warnings: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentSolution {
    pub mean: Vec<f64>,
    /// Row-major `E[x x^T]`.
    pub second_moment: Vec<Vec<f64>>,
    pub covariance: Vec<Vec<f64>>,
    /// `None` where the mean is numerically zero.
    pub cv2: Vec<Option<f64>>,
    pub stability: Vec<StabilityReport>,
    pub numerical_error_estimate: f64,
    pub condition_number: f64,
    pub warnings: Vec<String>,
}

impl MomentSolution {
    pub fn second_moment_matrix(&self) -> Matrix {
        rows_to_matrix(&self.second_moment)
    }

    pub fn covariance_matrix(&self) -> Matrix {
        rows_to_matrix(&self.covariance)
    }
}

fn rows_to_matrix(rows: &[Vec<f64>]) -> Matrix {
    let n = rows.len();
    Matrix::from_fn(n, n, |i, j| rows[i][j])
}

fn matrix_to_rows(m: &Matrix) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| m.row(i).iter().copied().collect())
        .collect()
}

fn ensure_valid(m: &PdmpModel) -> Result<()> {
    let report = m.validate();
    if report.is_valid() {
        Ok(())
    } else {
        Err(SolverError::Invalid(report))
    }
}

/// Spectral radius of the cycle map for moments of the given order (1 or 2).
pub fn check_stability(m: &PdmpModel, order: u8, opts: &SolveOptions) -> Result<StabilityReport> {
    ensure_valid(m)?;
    let dist = &m.general.dist;
    match order {
        1 => {
            let (a_bar, _) = m.effective_matrices();
            let e = expect_matrix_exp_t(dist, &a_bar, opts.tol)?;
            let rho = spectral_radius(&(&m.general.j * e.value))?;
            Ok(StabilityReport::new(
                1,
                rho,
                opts.stability_margin,
                ORDER1_MATRIX,
            ))
        }
        _ => {
            let lifted = lift_second_order(m);
            let (a_bar, _) = lifted.effective_matrices();
            let e = expect_matrix_exp_t(dist, &a_bar, opts.tol)?;
            Ok(order2_report(
                &(&lifted.j_mu2 * e.value),
                m.dim(),
                opts.stability_margin,
            )?)
        }
    }
}

fn order2_report(cycle: &Matrix, n: usize, margin: f64) -> Result<StabilityReport> {
    let rho = spectral_radius(cycle)?;
    let block = cycle.view((n, n), (n * n, n * n)).into_owned();
    let mut r = StabilityReport::new(2, rho, margin, ORDER2_MATRIX);
    r.second_order_block_radius = Some(spectral_radius(&block)?);
    Ok(r)
}

struct Stationary {
    value: Vector,
    cycle: Matrix,
    abs_error: f64,
    condition: f64,
}

/// Stationary mean of a system with flow `x' = a x + forcing` and
/// renewal-timed affine resets `x -> j x + r`.
fn renewal_stationary(
    dist: &InterEventDistribution,
    a: &Matrix,
    forcing: &Vector,
    j: &Matrix,
    r: &Vector,
    tol: Tolerance,
    check: impl FnOnce(&Matrix) -> Result<StabilityReport>,
) -> Result<(Stationary, StabilityReport)> {
    let n = a.nrows();
    let avg = renewal_averages(dist, a, forcing, tol)?;
    let cycle = j * &avg.exp_t;
    let report = check(&cycle)?;
    if !report.stable {
        return Err(SolverError::Unstable(report));
    }
    let s = Matrix::identity(n, n) - &cycle;
    let rhs = r + j * &avg.phi_t;
    let solved = solve(&s, &Matrix::from_column_slice(n, 1, rhs.as_slice()))?;
    let y = solved.solution.column(0).into_owned();
    let value = &avg.exp_tau * &y + &avg.phi_tau;

    // First-order propagation of the expectation errors through the solve,
    // entry by entry (the lifted systems are badly scaled, so normwise
    // bounds are far too pessimistic).
    let [e_exp_t, e_exp_tau, e_phi_t, e_phi_tau] = avg.block_errors;
    let inv = solve(&s, &Matrix::identity(n, n))?.solution.abs();
    let y_abs = y.abs();
    let y_sum = y_abs.sum();
    let j_abs = j.abs();
    let forcing_err = &j_abs * Vector::from_element(n, e_exp_t * y_sum + e_phi_t);
    let roundoff = (s.abs() * &y_abs + rhs.abs()) * (f64::EPSILON * n as f64);
    let dy = &inv * (forcing_err + roundoff);
    let err = avg.exp_tau.abs() * dy + Vector::from_element(n, e_exp_tau * y_sum + e_phi_tau);
    let abs_error = max_abs(err.as_slice());
    Ok((
        Stationary {
            value,
            cycle,
            abs_error,
            condition: solved.condition,
        },
        report,
    ))
}

fn condition_warning(condition: f64, what: &str) -> Option<String> {
    if condition > CONDITION_WARNING {
        let msg = format!(
            "{what} is ill-conditioned (condition number {condition:.3e}); results may be inaccurate"
        );
        warn!("{msg}");
        Some(msg)
    } else {
        None
    }
}

/// Stationary mean `lim E[x(t)]`.
pub fn stationary_mean(m: &PdmpModel, opts: &SolveOptions) -> Result<MeanSolution> {
    ensure_valid(m)?;
    let (a_bar, a_hat_bar) = m.effective_matrices();
    let margin = opts.stability_margin;
    let (st, report) = renewal_stationary(
        &m.general.dist,
        &a_bar,
        &a_hat_bar,
        &m.general.j,
        &m.general.r,
        opts.tol,
        |cycle| {
            Ok(StabilityReport::new(
                1,
                spectral_radius(cycle)?,
                margin,
                ORDER1_MATRIX,
            ))
        },
    )?;
    let warnings = condition_warning(st.condition, "I - J2 E[exp(A_bar T)]")
        .into_iter()
        .collect();
    Ok(MeanSolution {
        mean: st.value.as_slice().to_vec(),
        stability: report,
        numerical_error_estimate: st.abs_error,
        condition_number: st.condition,
        warnings,
    })
}

/// Stationary mean, second moment, covariance and CV².
pub fn stationary_second(m: &PdmpModel, opts: &SolveOptions) -> Result<MomentSolution> {
    let first = stationary_mean(m, opts)?;
    let n = m.dim();
    let lifted = lift_second_order(m);
    let (a_bar, a_hat_bar) = lifted.effective_matrices();
    let margin = opts.stability_margin;
    let (st, report2) = renewal_stationary(
        &m.general.dist,
        &a_bar,
        &a_hat_bar,
        &lifted.j_mu2,
        &lifted.r_mu2,
        opts.tol,
        |cycle| order2_report(cycle, n, margin),
    )?;
    debug_assert_eq!(st.cycle.nrows(), n + n * n);

    let lifted_mean = st.value.rows(0, n).into_owned();
    let direct = Vector::from_column_slice(&first.mean);
    let diff = max_abs((&lifted_mean - &direct).as_slice());
    let scale = max_abs(direct.as_slice());
    let slack = 10.0 * (first.numerical_error_estimate + st.abs_error);
    if diff > MEAN_CONSISTENCY_REL * scale + slack {
        return Err(SolverError::Inconsistent {
            lifted: lifted_mean.as_slice().to_vec(),
            direct: first.mean.clone(),
            relative: diff / scale.max(f64::MIN_POSITIVE),
        });
    }

    let raw = unvec(&st.value.rows(n, n * n).into_owned(), n)?;
    let second = (&raw + raw.transpose()) * 0.5;
    let covariance = &second - &direct * direct.transpose();
    let covariance = (&covariance + covariance.transpose()) * 0.5;

    let mut warnings = first.warnings.clone();
    warnings.extend(condition_warning(
        st.condition,
        "I - J_mu2 E[exp(A_mu_bar T)]",
    ));
    let trace: f64 = covariance.diagonal().iter().map(|x| x.abs()).sum();
    let lowest = min_symmetric_eigenvalue(&covariance);
    if lowest < -PSD_REL * trace.max(f64::MIN_POSITIVE) {
        let msg = format!(
            "covariance has a negative eigenvalue {lowest:.3e} beyond round-off (trace {trace:.3e})"
        );
        warn!("{msg}");
        warnings.push(msg);
    }

    let state_scale = scale.max(second.diagonal().amax().sqrt());
    let cv2 = (0..n)
        .map(|i| {
            let mu = direct[i];
            if mu.abs() > CV2_MEAN_FLOOR * state_scale && mu != 0.0 {
                Some(covariance[(i, i)] / (mu * mu))
            } else {
                None
            }
        })
        .collect();

    Ok(MomentSolution {
        mean: first.mean,
        second_moment: matrix_to_rows(&second),
        covariance: matrix_to_rows(&covariance),
        cv2,
        stability: vec![first.stability, report2],
        numerical_error_estimate: first.numerical_error_estimate.max(st.abs_error),
        condition_number: first.condition_number.max(st.condition),
        warnings,
    })
}

#[cfg(test)]
mod tests;
