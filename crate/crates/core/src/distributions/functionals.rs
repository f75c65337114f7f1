//! Expectations over the inter-event time `T` and over the stationary timer
//! `tau` (density `S(t)/E[T]`).
//!
//! Timer expectations use `E_tau[g] = E_T[int_0^T g(u) du] / E[T]`, which for
//! matrix exponentials turns into blocks of a single augmented exponential:
//! with `B = [[A, I, a, 0], [0, 0, 0, 0], [0, 0, 0, 1], [0, 0, 0, 0]]` the
//! first block row of `e^{Bt}` holds `e^{At}`, `int_0^t e^{As} ds`,
//! `Phi(t) = int_0^t e^{As} a ds` and `int_0^t Phi(s) ds`. Gamma laws with
//! integer shape (and the exponential) use `E[e^{BT}] = (I - theta B)^{-k}`;
//! other laws integrate `e^{Bt}` numerically.

use std::fmt::Display;

use super::{DistributionError, InterEventDistribution, Result};
use crate::linalg::{expm, matrix_power, max_abs, norm1, solve, spectral_abscissa, Matrix, Vector};
use crate::quadrature::{integrate, uniform_breaks};
use crate::tolerances::{Tolerance, LOWER_TAIL_MASS};

const INITIAL_PANELS: usize = 16;
const MAX_TAIL_DOUBLINGS: usize = 60;
const MAX_INTEGER_SHAPE: f64 = 1e6;

/// A computed expectation with an estimate of its absolute error.
#[derive(Clone, Debug, PartialEq)]
pub struct Estimate<T> {
    pub value: T,
    pub abs_error: f64,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Weight {
    /// Against the inter-event density `f`.
    Density,
    /// Against the timer density `S(t)/E[T]`.
    Timer,
}

fn weight_at(d: &InterEventDistribution, w: Weight, t: f64) -> f64 {
    match w {
        Weight::Density => d.pdf(t).unwrap_or(0.0),
        Weight::Timer => d.timer_pdf(t),
    }
}

/// `int g(t) w(t) dt` for vector-valued `g` over the numerical support,
/// extending the upper end by doubling until the added pieces are negligible.
fn integrate_weighted<E, F>(
    d: &InterEventDistribution,
    w: Weight,
    mut g: F,
    dim: usize,
    tol: Tolerance,
) -> Result<Estimate<Vec<f64>>>
where
    E: Display,
    F: FnMut(f64) -> std::result::Result<Vec<f64>, E>,
{
    let mut weighted = |t: f64| -> std::result::Result<Vec<f64>, E> {
        let wt = weight_at(d, w, t);
        if wt == 0.0 {
            return Ok(vec![0.0; dim]);
        }
        let mut v = g(t)?;
        for x in v.iter_mut() {
            *x *= wt;
        }
        Ok(v)
    };
    let breaks = match (d, w) {
        (InterEventDistribution::Deterministic { value }, Weight::Density) => {
            let v = weighted_point_mass(&mut g, *value)?;
            return Ok(Estimate {
                value: v,
                abs_error: 0.0,
            });
        }
        (InterEventDistribution::Deterministic { value }, Weight::Timer) => {
            uniform_breaks(0.0, *value, INITIAL_PANELS)
        }
        (InterEventDistribution::Tabulated(tab), _) => {
            let mut b = Vec::with_capacity(tab.grid().len() + 1);
            if w == Weight::Timer && tab.support_start() > 0.0 {
                b.push(0.0);
            }
            b.extend_from_slice(tab.grid());
            b
        }
        (_, Weight::Density) => uniform_breaks(
            d.lower_quantile(LOWER_TAIL_MASS),
            d.upper_truncation(),
            INITIAL_PANELS,
        ),
        (_, Weight::Timer) => uniform_breaks(0.0, d.upper_truncation(), INITIAL_PANELS),
    };
    let main = integrate(&mut weighted, &breaks, dim, tol)?;
    let mut value = main.value;
    let mut abs_error = main.abs_error;
    if matches!(
        d,
        InterEventDistribution::Deterministic { .. } | InterEventDistribution::Tabulated(_)
    ) {
        return Ok(Estimate { value, abs_error });
    }
    let mut lo = *breaks.last().unwrap();
    let mut quiet = 0;
    for _ in 0..MAX_TAIL_DOUBLINGS {
        let hi = 2.0 * lo;
        let piece_tol = Tolerance::new(tol.abs.max(tol.rel * max_abs(&value)), tol.rel);
        let piece = integrate(&mut weighted, &uniform_breaks(lo, hi, 4), dim, piece_tol)?;
        for (v, p) in value.iter_mut().zip(&piece.value) {
            *v += p;
        }
        abs_error += piece.abs_error;
        let target = tol.target(max_abs(&value));
        if max_abs(&piece.value) <= target {
            quiet += 1;
            if quiet == 2 {
                return Ok(Estimate { value, abs_error });
            }
        } else {
            quiet = 0;
        }
        lo = hi;
    }
    Err(DistributionError::Divergent(format!(
        "the {} tail contribution did not decay up to t = {lo:.3e}",
        d.kind()
    )))
}

fn weighted_point_mass<E: Display, F: FnMut(f64) -> std::result::Result<Vec<f64>, E>>(
    g: &mut F,
    t: f64,
) -> Result<Vec<f64>> {
    let v = g(t).map_err(|e| DistributionError::Integrand(e.to_string()))?;
    if v.iter().any(|x| !x.is_finite()) {
        return Err(DistributionError::Divergent(format!(
            "integrand is non-finite at t = {t}"
        )));
    }
    Ok(v)
}

/// `E[g(T)]`.
pub fn expect_over_t<F: FnMut(f64) -> f64>(
    d: &InterEventDistribution,
    mut g: F,
    tol: Tolerance,
) -> Result<Estimate<f64>> {
    let r = integrate_weighted(
        d,
        Weight::Density,
        |t| Ok::<_, std::convert::Infallible>(vec![g(t)]),
        1,
        tol,
    )?;
    Ok(Estimate {
        value: r.value[0],
        abs_error: r.abs_error,
    })
}

/// `E[g(T)]` for a vector-valued (e.g. flattened matrix) integrand.
pub fn expect_vector_over_t<E, F>(
    d: &InterEventDistribution,
    g: F,
    dim: usize,
    tol: Tolerance,
) -> Result<Estimate<Vec<f64>>>
where
    E: Display,
    F: FnMut(f64) -> std::result::Result<Vec<f64>, E>,
{
    integrate_weighted(d, Weight::Density, g, dim, tol)
}

/// `E[g(tau)]`, integrating `g` against the timer density.
pub fn expect_over_tau<F: FnMut(f64) -> f64>(
    d: &InterEventDistribution,
    mut g: F,
    tol: Tolerance,
) -> Result<Estimate<f64>> {
    let r = integrate_weighted(
        d,
        Weight::Timer,
        |t| Ok::<_, std::convert::Infallible>(vec![g(t)]),
        1,
        tol,
    )?;
    Ok(Estimate {
        value: r.value[0],
        abs_error: r.abs_error,
    })
}

/// `E[g(tau)]` in its cumulative form `E_T[G(T)] / E[T]`, where
/// `G(t) = int_0^t g(u) du` is supplied by the caller.
pub fn expect_over_tau_cumulative<F: FnMut(f64) -> f64>(
    d: &InterEventDistribution,
    cumulative: F,
    tol: Tolerance,
) -> Result<Estimate<f64>> {
    let mean = d.mean();
    let r = expect_over_t(d, cumulative, tol)?;
    Ok(Estimate {
        value: r.value / mean,
        abs_error: r.abs_error / mean,
    })
}

/// Fails when `E[e^{alpha T}]`-type growth is not integrable under the law.
fn check_growth(d: &InterEventDistribution, alpha: f64, scale: f64) -> Result<()> {
    let rate = d.tail_decay_rate();
    if rate.is_infinite() {
        return Ok(());
    }
    let divergent = if rate == 0.0 {
        alpha > 1e-7 * scale.max(1.0)
    } else {
        alpha >= rate * (1.0 - 1e-12)
    };
    if divergent {
        return Err(DistributionError::Divergent(format!(
            "the flow grows at rate {alpha:.6e}, but the {} law only decays at rate {rate:.6e}",
            d.kind()
        )));
    }
    Ok(())
}

fn integer_shape(d: &InterEventDistribution) -> Option<(u64, f64)> {
    match d {
        InterEventDistribution::Exponential { rate } => Some((1, 1.0 / rate)),
        InterEventDistribution::Gamma { shape, scale } => {
            let k = shape.round();
            if k >= 1.0 && k <= MAX_INTEGER_SHAPE && (shape - k).abs() <= 1e-12 * k {
                Some((k as u64, *scale))
            } else {
                None
            }
        }
        _ => None,
    }
}

/// `E[e^{BT}]`, where `alpha` is the growth rate of `e^{Bt}` (spectral
/// abscissa of the generator `B` embeds).
fn expect_exp(
    d: &InterEventDistribution,
    b: &Matrix,
    alpha: f64,
    tol: Tolerance,
) -> Result<Estimate<Matrix>> {
    let n = b.nrows();
    check_growth(d, alpha, norm1(b))?;
    if let InterEventDistribution::Deterministic { value } = d {
        let e = expm(&(b * *value))?;
        let err = f64::EPSILON * max_abs(e.as_slice()) * n as f64;
        return Ok(Estimate {
            value: e,
            abs_error: err,
        });
    }
    if let Some((k, theta)) = integer_shape(d) {
        // Laplace transform of the gamma law: E[e^{BT}] = (I - theta B)^{-k}
        let m = Matrix::identity(n, n) - b * theta;
        let inv = solve(&m, &Matrix::identity(n, n))?;
        let value = matrix_power(&inv.solution, k)?;
        let err = f64::EPSILON * inv.condition * k as f64 * max_abs(value.as_slice());
        return Ok(Estimate {
            value,
            abs_error: err,
        });
    }
    let r = integrate_weighted(
        d,
        Weight::Density,
        |t| expm(&(b * t)).map(|e| e.as_slice().to_vec()),
        n * n,
        tol,
    )?;
    Ok(Estimate {
        value: Matrix::from_column_slice(n, n, &r.value),
        abs_error: r.abs_error,
    })
}

/// `E[e^{MT}]`.
pub fn expect_matrix_exp_t(
    d: &InterEventDistribution,
    m: &Matrix,
    tol: Tolerance,
) -> Result<Estimate<Matrix>> {
    let alpha = spectral_abscissa(m)?;
    expect_exp(d, m, alpha, tol)
}

/// `E[e^{M tau}]` as `E_T[int_0^T e^{Ms} ds] / E[T]`, read off the augmented
/// exponential of `[[M, I], [0, 0]]`. Works for singular `M`.
pub fn expect_matrix_exp_tau_integral(
    d: &InterEventDistribution,
    m: &Matrix,
    tol: Tolerance,
) -> Result<Estimate<Matrix>> {
    let n = m.nrows();
    let alpha = spectral_abscissa(m)?.max(0.0);
    let mut b = Matrix::zeros(2 * n, 2 * n);
    b.view_mut((0, 0), (n, n)).copy_from(m);
    b.view_mut((0, n), (n, n)).fill_with_identity();
    let e = expect_exp(d, &b, alpha, tol)?;
    let mean = d.mean();
    Ok(Estimate {
        value: e.value.view((0, n), (n, n)) / mean,
        abs_error: e.abs_error / mean,
    })
}

/// `E[e^{M tau}]` as `M^{-1} (E[e^{MT}] - I) / E[T]`. The error estimate
/// includes the amplification by `||M^{-1}||`.
pub fn expect_matrix_exp_tau_resolvent(
    d: &InterEventDistribution,
    m: &Matrix,
    tol: Tolerance,
) -> Result<Estimate<Matrix>> {
    let n = m.nrows();
    let e = expect_matrix_exp_t(d, m, tol)?;
    let rhs = &e.value - Matrix::identity(n, n);
    let s = solve(m, &rhs)?;
    let mean = d.mean();
    let inv_norm = s.condition / norm1(m).max(f64::MIN_POSITIVE);
    let err = inv_norm * (e.abs_error + f64::EPSILON * (1.0 + norm1(&e.value)) * n as f64) / mean;
    Ok(Estimate {
        value: s.solution / mean,
        abs_error: err,
    })
}

/// `E[e^{M tau}]`: the resolvent form when `M` is well enough conditioned for
/// it to meet `tol`, the augmented-integral form otherwise.
pub fn expect_matrix_exp_tau(
    d: &InterEventDistribution,
    m: &Matrix,
    tol: Tolerance,
) -> Result<Estimate<Matrix>> {
    match expect_matrix_exp_tau_resolvent(d, m, tol) {
        Ok(r) if r.abs_error <= tol.target(max_abs(r.value.as_slice())) => Ok(r),
        Ok(_) | Err(DistributionError::Linalg(_)) => expect_matrix_exp_tau_integral(d, m, tol),
        Err(e) => Err(e),
    }
}

/// Every renewal-cycle average the stationary-moment formulas need for the
/// flow `x' = A x + a`, with `Phi(t) = int_0^t e^{As} a ds`.
#[derive(Clone, Debug)]
pub struct RenewalAverages {
    /// `E[e^{AT}]`
    pub exp_t: Matrix,
    /// `E[e^{A tau}]`
    pub exp_tau: Matrix,
    /// `E[Phi(T)]`
    pub phi_t: Vector,
    /// `E[Phi(tau)]`
    pub phi_tau: Vector,
    /// Absolute error estimates of `exp_t`, `exp_tau`, `phi_t`, `phi_tau`
    /// (max-abs over entries).
    pub block_errors: [f64; 4],
    /// Largest of `block_errors`.
    pub abs_error: f64,
}

pub fn renewal_averages(
    d: &InterEventDistribution,
    a: &Matrix,
    forcing: &Vector,
    tol: Tolerance,
) -> Result<RenewalAverages> {
    let n = a.nrows();
    if a.ncols() != n || forcing.len() != n {
        return Err(DistributionError::Linalg(
            crate::linalg::LinalgError::Dimension {
                op: "renewal_averages",
                detail: format!(
                    "generator is {}x{}, forcing has length {}",
                    a.nrows(),
                    a.ncols(),
                    forcing.len()
                ),
            },
        ));
    }
    let alpha = spectral_abscissa(a)?.max(0.0);
    check_growth(d, alpha, norm1(a))?;
    let size = 2 * n + 2;
    let mut b = Matrix::zeros(size, size);
    b.view_mut((0, 0), (n, n)).copy_from(a);
    b.view_mut((0, n), (n, n)).fill_with_identity();
    b.view_mut((0, 2 * n), (n, 1)).copy_from(forcing);
    b[(2 * n, 2 * n + 1)] = 1.0;
    let mean = d.mean();

    let (top, block_errors) = if d.is_point_mass() || integer_shape(d).is_some() {
        // the closed forms are accurate relative to each block's own size
        let e = expect_exp(d, &b, alpha, tol)?;
        let top = e.value.rows(0, n).into_owned();
        let rel = e.abs_error / max_abs(e.value.as_slice()).max(f64::MIN_POSITIVE);
        let blk = |c: usize, w: usize| {
            let v = top.columns(c, w);
            rel * v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
        };
        let errs = [blk(0, n), blk(n, n), blk(2 * n, 1), blk(2 * n + 1, 1)];
        (top, errs)
    } else {
        // Integrate the first block row only, each block rescaled to unit
        // size at t = E[T] so the tolerance applies to every block alike.
        let ref_block = expm(&(&b * mean))?;
        let cols = [(0, n), (n, n), (2 * n, 1), (2 * n + 1, 1)];
        let scales: Vec<f64> = cols
            .iter()
            .map(|&(c, w)| {
                let blk = ref_block.view((0, c), (n, w));
                blk.iter().fold(0.0f64, |m, x| m.max(x.abs())).max(1e-300)
            })
            .collect();
        let col_scale: Vec<f64> = cols
            .iter()
            .zip(&scales)
            .flat_map(|(&(_, w), &s)| std::iter::repeat(s).take(w))
            .collect();
        let r = integrate_weighted(
            d,
            Weight::Density,
            |t| -> std::result::Result<Vec<f64>, crate::linalg::LinalgError> {
                let e = expm(&(&b * t))?;
                let mut out = Vec::with_capacity(n * size);
                for (j, s) in col_scale.iter().enumerate() {
                    for i in 0..n {
                        out.push(e[(i, j)] / s);
                    }
                }
                Ok(out)
            },
            n * size,
            tol,
        )?;
        let mut top = Matrix::from_column_slice(n, size, &r.value);
        for (j, s) in col_scale.iter().enumerate() {
            top.column_mut(j).scale_mut(*s);
        }
        let errs = [
            r.abs_error * scales[0],
            r.abs_error * scales[1],
            r.abs_error * scales[2],
            r.abs_error * scales[3],
        ];
        (top, errs)
    };
    Ok(RenewalAverages {
        exp_t: top.columns(0, n).into_owned(),
        exp_tau: top.columns(n, n) / mean,
        phi_t: top.column(2 * n).into_owned(),
        phi_tau: top.column(2 * n + 1) / mean,
        block_errors: [
            block_errors[0],
            block_errors[1] / mean,
            block_errors[2],
            block_errors[3] / mean,
        ],
        abs_error: block_errors[0]
            .max(block_errors[1] / mean)
            .max(block_errors[2])
            .max(block_errors[3] / mean),
    })
}
