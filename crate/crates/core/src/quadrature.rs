//! Globally adaptive Gauss–Kronrod (10/21) quadrature for vector-valued
//! integrands.
//!
//! Matrix-valued expectations are integrated as flattened vectors so that
//! every entry shares the same subdivision; the error of an interval is the
//! max-abs difference between the Kronrod and Gauss estimates.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use thiserror::Error;

use crate::tolerances::{Tolerance, QUAD_MAX_SUBDIVISIONS};

const XGK: [f64; 11] = [
    0.995657163025808080735527280689003,
    0.973906528517171720077964012084452,
    0.930157491355708226001207180059508,
    0.865063366688984510732096688423493,
    0.780817726586416897063717578345042,
    0.679409568299024406234327365114874,
    0.562757134668604683339000099272694,
    0.433395394129247190799265943165784,
    0.294392862701460198131126603103866,
    0.148874338981631210884826001129720,
    0.0,
];
const WGK: [f64; 11] = [
    0.011694638867371874278064396062192,
    0.032558162307964727478818972459390,
    0.054755896574351996031381300244580,
    0.075039674810919952767043140916190,
    0.093125454583697605535065465083366,
    0.109387158802297641899210590325805,
    0.123491976262065851077600525398850,
    0.134709217311473325928054001771707,
    0.142775938577060080797094273138717,
    0.147739104901338491374841515972068,
    0.149445554002916905664936468389821,
];
// Gauss weights for the nodes XGK[1], XGK[3], ..., XGK[9].
const WG: [f64; 5] = [
    0.066671344308688137593568809893332,
    0.149451349150580593145776339657697,
    0.219086362515982043995534934228163,
    0.269266719309996355091226921569469,
    0.295524224714752870173892994651338,
];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QuadError<E> {
    #[error("quadrature did not reach tolerance {target:.3e} after {subdivisions} subdivisions (error estimate {achieved:.3e})")]
    NoConvergence {
        achieved: f64,
        target: f64,
        subdivisions: usize,
    },
    #[error("integrand returned non-finite values at t = {0}")]
    NonFinite(f64),
    #[error("integrand failed: {0}")]
    Integrand(E),
}

/// Integral estimate with its absolute (max-abs) error estimate.
#[derive(Clone, Debug, PartialEq)]
pub struct Integral {
    pub value: Vec<f64>,
    pub abs_error: f64,
    pub evaluations: usize,
}

struct Panel {
    a: f64,
    b: f64,
    value: Vec<f64>,
    error: f64,
}

impl PartialEq for Panel {
    fn eq(&self, other: &Self) -> bool {
        self.error == other.error
    }
}
impl Eq for Panel {}
impl PartialOrd for Panel {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Panel {
    fn cmp(&self, other: &Self) -> Ordering {
        self.error.total_cmp(&other.error)
    }
}

fn gk21<E, F>(f: &mut F, a: f64, b: f64, dim: usize) -> Result<Panel, QuadError<E>>
where
    F: FnMut(f64) -> Result<Vec<f64>, E>,
{
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let mut kronrod = vec![0.0; dim];
    let mut gauss = vec![0.0; dim];
    let mut eval = |t: f64| -> Result<Vec<f64>, QuadError<E>> {
        let v = f(t).map_err(QuadError::Integrand)?;
        debug_assert_eq!(v.len(), dim);
        if v.iter().any(|x| !x.is_finite()) {
            return Err(QuadError::NonFinite(t));
        }
        Ok(v)
    };
    let mid = eval(center)?;
    for (k, m) in kronrod.iter_mut().zip(&mid) {
        *k = WGK[10] * m;
    }
    for j in 0..10 {
        let dx = half * XGK[j];
        let lo = eval(center - dx)?;
        let hi = eval(center + dx)?;
        for i in 0..dim {
            let s = lo[i] + hi[i];
            kronrod[i] += WGK[j] * s;
            if j % 2 == 1 {
                gauss[i] += WG[j / 2] * s;
            }
        }
    }
    let mut error: f64 = 0.0;
    for i in 0..dim {
        kronrod[i] *= half;
        gauss[i] *= half;
        error = error.max((kronrod[i] - gauss[i]).abs());
    }
    Ok(Panel {
        a,
        b,
        value: kronrod,
        error,
    })
}

/// Integrates `f` over `[breaks[0], breaks[last]]`, starting from the panels
/// delimited by `breaks` and bisecting the worst panel until the total error
/// meets `tol`.
pub fn integrate<E, F>(
    mut f: F,
    breaks: &[f64],
    dim: usize,
    tol: Tolerance,
) -> Result<Integral, QuadError<E>>
where
    F: FnMut(f64) -> Result<Vec<f64>, E>,
{
    assert!(breaks.len() >= 2, "need at least one panel");
    let mut heap = BinaryHeap::new();
    let mut evaluations = 0;
    for w in breaks.windows(2) {
        if w[1] > w[0] {
            heap.push(gk21(&mut f, w[0], w[1], dim)?);
            evaluations += 21;
        }
    }
    let mut subdivisions = 0;
    loop {
        let mut total = vec![0.0; dim];
        let mut err = 0.0;
        for p in heap.iter() {
            for (t, v) in total.iter_mut().zip(&p.value) {
                *t += v;
            }
            err += p.error;
        }
        let magnitude = crate::linalg::max_abs(&total);
        let target = tol.target(magnitude);
        if err <= target {
            return Ok(Integral {
                value: total,
                abs_error: err,
                evaluations,
            });
        }
        let worst = match heap.pop() {
            Some(p) => p,
            None => {
                return Ok(Integral {
                    value: total,
                    abs_error: err,
                    evaluations,
                })
            }
        };
        let mid = 0.5 * (worst.a + worst.b);
        // Panels narrower than a few ulps cannot be refined further.
        if subdivisions >= QUAD_MAX_SUBDIVISIONS || mid <= worst.a || mid >= worst.b {
            return Err(QuadError::NoConvergence {
                achieved: err,
                target,
                subdivisions,
            });
        }
        heap.push(gk21(&mut f, worst.a, mid, dim)?);
        heap.push(gk21(&mut f, mid, worst.b, dim)?);
        evaluations += 42;
        subdivisions += 1;
    }
}

/// Scalar convenience wrapper around [`integrate`].
pub fn integrate_scalar<F>(
    mut f: F,
    breaks: &[f64],
    tol: Tolerance,
) -> Result<(f64, f64), QuadError<std::convert::Infallible>>
where
    F: FnMut(f64) -> f64,
{
    let r = integrate(|t| Ok(vec![f(t)]), breaks, 1, tol)?;
    Ok((r.value[0], r.abs_error))
}

/// `n` equal panels over `[a, b]`.
pub fn uniform_breaks(a: f64, b: f64, n: usize) -> Vec<f64> {
    let n = n.max(1);
    (0..=n)
        .map(|i| {
            if i == n {
                b
            } else {
                a + (b - a) * i as f64 / n as f64
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polynomials_are_exact() {
        let (v, e) =
            integrate_scalar(|t| t.powi(7) - 3.0 * t, &[0.0, 2.0], Tolerance::default()).unwrap();
        assert!((v - (2f64.powi(8) / 8.0 - 6.0)).abs() < 1e-12);
        assert!(e < 1e-10);
    }

    #[test]
    fn vector_integrand_and_refinement() {
        let r = integrate(
            |t: f64| -> Result<Vec<f64>, ()> { Ok(vec![t.sqrt(), (-t).exp()]) },
            &[0.0, 1.0],
            2,
            Tolerance::new(0.0, 1e-12),
        )
        .unwrap();
        assert!((r.value[0] - 2.0 / 3.0).abs() < 1e-11);
        assert!((r.value[1] - (1.0 - (-1f64).exp())).abs() < 1e-13);
    }

    #[test]
    fn non_finite_integrand_is_reported() {
        let r = integrate_scalar(|t| 1.0 / t, &[0.0, 1.0], Tolerance::default());
        // 1/t at a Kronrod node is finite, so this fails by non-convergence.
        assert!(r.is_err());
        let r = integrate_scalar(|_| f64::NAN, &[0.0, 1.0], Tolerance::default());
        assert!(matches!(r, Err(QuadError::NonFinite(_))));
    }
}
