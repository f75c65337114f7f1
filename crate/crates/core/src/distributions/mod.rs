//! Inter-event time laws for the renewal-timed reset family.
//!
//! Besides the usual pdf/cdf/moments, every law exposes the two derived
//! objects the moment formulas need: the hazard `h(t) = f(t)/S(t)` and the
//! stationary density of the timer (time since the last renewal),
//! `p(t) = S(t)/E[T]`. The expectation functionals live in [`functionals`].

mod functionals;
mod tabulated;

pub use functionals::{
    expect_matrix_exp_t, expect_matrix_exp_tau, expect_matrix_exp_tau_integral,
    expect_matrix_exp_tau_resolvent, expect_over_t, expect_over_tau, expect_over_tau_cumulative,
    expect_vector_over_t, renewal_averages, Estimate, RenewalAverages,
};
pub use tabulated::TabulatedLaw;

use rand::Rng;
use rand_distr::{Distribution, Exp, Gamma, LogNormal, Weibull};
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;
use statrs::function::gamma::{gamma as gamma_fn, gamma_ur, ln_gamma};
use thiserror::Error;

use crate::linalg::LinalgError;
use crate::quadrature::QuadError;
use crate::tolerances::{SURVIVAL_UNDERFLOW, UPPER_TAIL_MASS};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DistributionError {
    #[error("invalid {kind} parameter `{name}` = {value}: {reason}")]
    InvalidParameter {
        kind: &'static str,
        name: &'static str,
        value: f64,
        reason: &'static str,
    },
    #[error("invalid tabulated law: {0}")]
    InvalidTable(String),
    #[error("the deterministic law has no density or hazard; evaluate it as a point mass")]
    PointMass,
    #[error("t = {t} is beyond the numerical support (survival underflows; truncation point {truncation:.6e})")]
    BeyondSupport { t: f64, truncation: f64 },
    #[error("t = {0} is negative")]
    NegativeTime(f64),
    #[error("raw moment of order {0} is not available (orders 1..=3)")]
    MomentOrder(u32),
    #[error("expectation diverges: {0}")]
    Divergent(String),
    #[error("quadrature failed to converge (achieved error {achieved:.3e}, target {target:.3e})")]
    Quadrature { achieved: f64, target: f64 },
    #[error("integrand evaluation failed: {0}")]
    Integrand(String),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

impl<E: std::fmt::Display> From<QuadError<E>> for DistributionError {
    fn from(e: QuadError<E>) -> Self {
        match e {
            QuadError::NoConvergence {
                achieved, target, ..
            } => DistributionError::Quadrature { achieved, target },
            QuadError::NonFinite(t) => {
                DistributionError::Divergent(format!("integrand is non-finite at t = {t}"))
            }
            QuadError::Integrand(e) => DistributionError::Integrand(e.to_string()),
        }
    }
}

pub type Result<T> = std::result::Result<T, DistributionError>;

/// A continuous law on `(0, inf)` (plus the deterministic point mass) for the
/// i.i.d. times between renewal-timed resets.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "DistributionSpec", into = "DistributionSpec")]
pub enum InterEventDistribution {
    Exponential { rate: f64 },
    Gamma { shape: f64, scale: f64 },
    Deterministic { value: f64 },
    LogNormal { log_mean: f64, log_sd: f64 },
    Weibull { shape: f64, scale: f64 },
    Tabulated(TabulatedLaw),
}

/// JSON form of a law, e.g. `{"type": "gamma", "shape": 8.0, "scale": 0.25}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum DistributionSpec {
    Exponential {
        rate: f64,
    },
    Gamma {
        shape: f64,
        scale: f64,
    },
    Deterministic {
        value: f64,
    },
    #[serde(alias = "log_normal")]
    Lognormal {
        log_mean: f64,
        log_sd: f64,
    },
    Weibull {
        shape: f64,
        scale: f64,
    },
    Tabulated {
        points: Vec<[f64; 2]>,
    },
}

impl TryFrom<DistributionSpec> for InterEventDistribution {
    type Error = DistributionError;

    fn try_from(spec: DistributionSpec) -> Result<Self> {
        match spec {
            DistributionSpec::Exponential { rate } => Self::exponential(rate),
            DistributionSpec::Gamma { shape, scale } => Self::gamma(shape, scale),
            DistributionSpec::Deterministic { value } => Self::deterministic(value),
            DistributionSpec::Lognormal { log_mean, log_sd } => Self::lognormal(log_mean, log_sd),
            DistributionSpec::Weibull { shape, scale } => Self::weibull(shape, scale),
            DistributionSpec::Tabulated { points } => {
                Ok(Self::Tabulated(TabulatedLaw::new(&points)?))
            }
        }
    }
}

impl From<InterEventDistribution> for DistributionSpec {
    fn from(d: InterEventDistribution) -> Self {
        match d {
            InterEventDistribution::Exponential { rate } => Self::Exponential { rate },
            InterEventDistribution::Gamma { shape, scale } => Self::Gamma { shape, scale },
            InterEventDistribution::Deterministic { value } => Self::Deterministic { value },
            InterEventDistribution::LogNormal { log_mean, log_sd } => {
                Self::Lognormal { log_mean, log_sd }
            }
            InterEventDistribution::Weibull { shape, scale } => Self::Weibull { shape, scale },
            InterEventDistribution::Tabulated(t) => Self::Tabulated {
                points: t.points().to_vec(),
            },
        }
    }
}

fn positive(kind: &'static str, name: &'static str, value: f64) -> Result<f64> {
    if value.is_finite() && value > 0.0 {
        Ok(value)
    } else {
        Err(DistributionError::InvalidParameter {
            kind,
            name,
            value,
            reason: "must be finite and strictly positive",
        })
    }
}

impl InterEventDistribution {
    pub fn exponential(rate: f64) -> Result<Self> {
        Ok(Self::Exponential {
            rate: positive("exponential", "rate", rate)?,
        })
    }

    pub fn gamma(shape: f64, scale: f64) -> Result<Self> {
        Ok(Self::Gamma {
            shape: positive("gamma", "shape", shape)?,
            scale: positive("gamma", "scale", scale)?,
        })
    }

    pub fn deterministic(value: f64) -> Result<Self> {
        Ok(Self::Deterministic {
            value: positive("deterministic", "value", value)?,
        })
    }

    pub fn lognormal(log_mean: f64, log_sd: f64) -> Result<Self> {
        if !log_mean.is_finite() {
            return Err(DistributionError::InvalidParameter {
                kind: "lognormal",
                name: "log_mean",
                value: log_mean,
                reason: "must be finite",
            });
        }
        Ok(Self::LogNormal {
            log_mean,
            log_sd: positive("lognormal", "log_sd", log_sd)?,
        })
    }

    pub fn weibull(shape: f64, scale: f64) -> Result<Self> {
        Ok(Self::Weibull {
            shape: positive("weibull", "shape", shape)?,
            scale: positive("weibull", "scale", scale)?,
        })
    }

    pub fn tabulated(points: &[[f64; 2]]) -> Result<Self> {
        Ok(Self::Tabulated(TabulatedLaw::new(points)?))
    }

    /// Gamma law with the given mean and squared coefficient of variation
    /// (`shape = 1/cv2`, `scale = mean * cv2`); `cv2 = 0` gives the
    /// deterministic law.
    pub fn gamma_with_mean_cv2(mean: f64, cv2: f64) -> Result<Self> {
        positive("gamma", "mean", mean)?;
        if cv2 == 0.0 {
            return Self::deterministic(mean);
        }
        let cv2 = positive("gamma", "cv2", cv2)?;
        Self::gamma(1.0 / cv2, mean * cv2)
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Self::Exponential { .. } => "exponential",
            Self::Gamma { .. } => "gamma",
            Self::Deterministic { .. } => "deterministic",
            Self::LogNormal { .. } => "lognormal",
            Self::Weibull { .. } => "weibull",
            Self::Tabulated(_) => "tabulated",
        }
    }

    pub fn is_point_mass(&self) -> bool {
        matches!(self, Self::Deterministic { .. })
    }

    /// Density `f(t)`.
    pub fn pdf(&self, t: f64) -> Result<f64> {
        if t.is_nan() {
            return Err(DistributionError::NegativeTime(t));
        }
        if t <= 0.0 && !matches!(self, Self::Tabulated(_)) {
            return Ok(match self {
                Self::Exponential { rate } if t == 0.0 => *rate,
                Self::Gamma { shape, scale } if t == 0.0 && *shape == 1.0 => 1.0 / scale,
                Self::Weibull { shape, scale } if t == 0.0 && *shape == 1.0 => 1.0 / scale,
                Self::Deterministic { .. } => return Err(DistributionError::PointMass),
                _ => 0.0,
            });
        }
        Ok(match self {
            Self::Exponential { rate } => rate * (-rate * t).exp(),
            Self::Gamma { shape, scale } => gamma_pdf(*shape, *scale, t),
            Self::Deterministic { .. } => return Err(DistributionError::PointMass),
            Self::LogNormal { log_mean, log_sd } => {
                let z = (t.ln() - log_mean) / log_sd;
                (-0.5 * z * z).exp() / (t * log_sd * (2.0 * std::f64::consts::PI).sqrt())
            }
            Self::Weibull { shape, scale } => {
                let r = t / scale;
                shape / scale * r.powf(shape - 1.0) * (-r.powf(*shape)).exp()
            }
            Self::Tabulated(tab) => tab.pdf(t),
        })
    }

    pub fn cdf(&self, t: f64) -> f64 {
        1.0 - self.survival(t)
    }

    /// Survival function `S(t) = P(T > t)`, evaluated directly (not as
    /// `1 - cdf`) so that tail values keep their relative accuracy.
    pub fn survival(&self, t: f64) -> f64 {
        if t <= 0.0 {
            return match self {
                Self::Tabulated(tab) => tab.survival(t),
                _ => 1.0,
            };
        }
        match self {
            Self::Exponential { rate } => (-rate * t).exp(),
            Self::Gamma { shape, scale } => gamma_ur(*shape, t / scale),
            Self::Deterministic { value } => {
                if t < *value {
                    1.0
                } else {
                    0.0
                }
            }
            Self::LogNormal { log_mean, log_sd } => {
                0.5 * erfc((t.ln() - log_mean) / (log_sd * std::f64::consts::SQRT_2))
            }
            Self::Weibull { shape, scale } => (-(t / scale).powf(*shape)).exp(),
            Self::Tabulated(tab) => tab.survival(t),
        }
    }

    /// Hazard rate `f(t) / S(t)`.
    pub fn hazard(&self, t: f64) -> Result<f64> {
        if t < 0.0 || t.is_nan() {
            return Err(DistributionError::NegativeTime(t));
        }
        if self.is_point_mass() {
            return Err(DistributionError::PointMass);
        }
        if let Self::Exponential { rate } = self {
            return Ok(*rate);
        }
        let s = self.survival(t);
        if s <= SURVIVAL_UNDERFLOW {
            return Err(DistributionError::BeyondSupport {
                t,
                truncation: self.upper_truncation(),
            });
        }
        Ok(self.pdf(t)? / s)
    }

    /// Stationary density of the timer, `S(t) / E[T]`.
    pub fn timer_pdf(&self, t: f64) -> f64 {
        if t < 0.0 {
            return 0.0;
        }
        self.survival(t) / self.mean()
    }

    pub fn mean(&self) -> f64 {
        match self {
            Self::Exponential { rate } => 1.0 / rate,
            Self::Gamma { shape, scale } => shape * scale,
            Self::Deterministic { value } => *value,
            Self::LogNormal { log_mean, log_sd } => (log_mean + 0.5 * log_sd * log_sd).exp(),
            Self::Weibull { shape, scale } => scale * gamma_fn(1.0 + 1.0 / shape),
            Self::Tabulated(tab) => tab.moment(1),
        }
    }

    /// `E[T^order]` for `order` in `1..=3`, in closed form for every kind.
    pub fn raw_moment(&self, order: u32) -> Result<f64> {
        if !(1..=3).contains(&order) {
            return Err(DistributionError::MomentOrder(order));
        }
        let k = order as f64;
        Ok(match self {
            Self::Exponential { rate } => gamma_fn(k + 1.0) / rate.powi(order as i32),
            Self::Gamma { shape, scale } => {
                (0..order).map(|i| shape + i as f64).product::<f64>() * scale.powi(order as i32)
            }
            Self::Deterministic { value } => value.powi(order as i32),
            Self::LogNormal { log_mean, log_sd } => {
                (k * log_mean + 0.5 * k * k * log_sd * log_sd).exp()
            }
            Self::Weibull { shape, scale } => scale.powf(k) * gamma_fn(1.0 + k / shape),
            Self::Tabulated(tab) => tab.moment(order),
        })
    }

    /// Squared coefficient of variation `E[T^2]/E[T]^2 - 1`.
    pub fn cv2(&self) -> f64 {
        match self {
            Self::Exponential { .. } => 1.0,
            Self::Gamma { shape, .. } => 1.0 / shape,
            Self::Deterministic { .. } => 0.0,
            Self::LogNormal { log_sd, .. } => (log_sd * log_sd).exp_m1(),
            _ => {
                let m = self.mean();
                (self.raw_moment(2).unwrap_or(f64::NAN) / (m * m) - 1.0).max(0.0)
            }
        }
    }

    /// Smallest `t` with `S(t) <= tail` (bracketing plus bisection, closed
    /// form where available).
    pub fn upper_quantile(&self, tail: f64) -> f64 {
        let tail = tail.clamp(f64::MIN_POSITIVE, 1.0);
        match self {
            Self::Exponential { rate } => -tail.ln() / rate,
            Self::Deterministic { value } => *value,
            Self::Weibull { shape, scale } => scale * (-tail.ln()).powf(1.0 / shape),
            Self::Tabulated(tab) => tab.upper_quantile(tail),
            _ => {
                let mut hi = self.mean().max(f64::MIN_POSITIVE);
                let mut lo = 0.0;
                while self.survival(hi) > tail {
                    lo = hi;
                    hi *= 2.0;
                    if !hi.is_finite() {
                        return f64::MAX;
                    }
                }
                bisect(|t| self.survival(t) > tail, lo, hi)
            }
        }
    }

    /// Largest `t` with `cdf(t) <= mass`.
    pub fn lower_quantile(&self, mass: f64) -> f64 {
        match self {
            Self::Exponential { rate } => -(-mass).ln_1p() / rate,
            Self::Deterministic { value } => *value,
            Self::Weibull { shape, scale } => scale * (-(-mass).ln_1p()).powf(1.0 / shape),
            Self::Tabulated(tab) => tab.lower_quantile(mass),
            Self::Gamma { shape, scale } => {
                let hi = self.mean();
                let cdf = |t: f64| {
                    if t <= 0.0 {
                        0.0
                    } else {
                        statrs::function::gamma::gamma_lr(*shape, t / scale)
                    }
                };
                if cdf(hi) <= mass {
                    return hi;
                }
                bisect(|t| cdf(t) <= mass, 0.0, hi)
            }
            Self::LogNormal { .. } => {
                let hi = self.mean();
                bisect(|t| self.cdf(t) <= mass, 0.0, hi)
            }
        }
    }

    /// Upper end of the integration domain used by quadrature.
    pub fn upper_truncation(&self) -> f64 {
        self.upper_quantile(UPPER_TAIL_MASS)
    }

    /// Exponential decay rate of the density's tail: `E[e^{sT}]` is finite
    /// for `s` below it. Infinite for bounded support or faster-than
    /// exponential tails, zero for subexponential tails.
    pub fn tail_decay_rate(&self) -> f64 {
        match self {
            Self::Exponential { rate } => *rate,
            Self::Gamma { scale, .. } => 1.0 / scale,
            Self::Deterministic { .. } | Self::Tabulated(_) => f64::INFINITY,
            Self::LogNormal { .. } => 0.0,
            Self::Weibull { shape, scale } => {
                if *shape > 1.0 {
                    f64::INFINITY
                } else if *shape == 1.0 {
                    1.0 / scale
                } else {
                    0.0
                }
            }
        }
    }

    /// One draw of `T`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        self.sampler().sample(rng)
    }

    /// Reusable sampler (avoids re-validating parameters on every draw).
    pub fn sampler(&self) -> TimeSampler {
        match self {
            Self::Exponential { rate } => TimeSampler::Exp(Exp::new(*rate).expect("validated")),
            Self::Gamma { shape, scale } => {
                TimeSampler::Gamma(Gamma::new(*shape, *scale).expect("validated"))
            }
            Self::Deterministic { value } => TimeSampler::Fixed(*value),
            Self::LogNormal { log_mean, log_sd } => {
                TimeSampler::LogNormal(LogNormal::new(*log_mean, *log_sd).expect("validated"))
            }
            Self::Weibull { shape, scale } => {
                TimeSampler::Weibull(Weibull::new(*scale, *shape).expect("validated"))
            }
            Self::Tabulated(t) => TimeSampler::Tabulated(Box::new(t.clone())),
        }
    }

    /// Sampler for the length-biased law `t f(t) / E[T]`: the law of the
    /// renewal interval that covers a fixed inspection time.
    pub fn length_biased_sampler(&self) -> TimeSampler {
        match self {
            Self::Exponential { rate } => {
                TimeSampler::Gamma(Gamma::new(2.0, 1.0 / rate).expect("validated"))
            }
            Self::Gamma { shape, scale } => {
                TimeSampler::Gamma(Gamma::new(shape + 1.0, *scale).expect("validated"))
            }
            Self::Deterministic { value } => TimeSampler::Fixed(*value),
            Self::LogNormal { log_mean, log_sd } => TimeSampler::LogNormal(
                LogNormal::new(log_mean + log_sd * log_sd, *log_sd).expect("validated"),
            ),
            // (T/scale)^shape ~ Gamma(1 + 1/shape) under length biasing
            Self::Weibull { shape, scale } => TimeSampler::PowerGamma {
                gamma: Gamma::new(1.0 + 1.0 / shape, 1.0).expect("validated"),
                power: 1.0 / shape,
                scale: *scale,
            },
            Self::Tabulated(t) => TimeSampler::TabulatedLengthBiased(Box::new(t.clone())),
        }
    }
}

/// Prepared sampler returned by [`InterEventDistribution::sampler`].
#[derive(Clone, Debug)]
pub enum TimeSampler {
    Exp(Exp<f64>),
    Gamma(Gamma<f64>),
    Fixed(f64),
    LogNormal(LogNormal<f64>),
    Weibull(Weibull<f64>),
    PowerGamma {
        gamma: Gamma<f64>,
        power: f64,
        scale: f64,
    },
    Tabulated(Box<TabulatedLaw>),
    TabulatedLengthBiased(Box<TabulatedLaw>),
}

impl TimeSampler {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            Self::Exp(d) => d.sample(rng),
            Self::Gamma(d) => d.sample(rng),
            Self::Fixed(v) => *v,
            Self::LogNormal(d) => d.sample(rng),
            Self::Weibull(d) => d.sample(rng),
            Self::PowerGamma {
                gamma,
                power,
                scale,
            } => scale * gamma.sample(rng).powf(*power),
            Self::Tabulated(t) => t.inverse_cdf(rng.random::<f64>()),
            Self::TabulatedLengthBiased(t) => {
                // accept a draw from f with probability t / t_max
                let t_max = t.support_end();
                loop {
                    let x = t.inverse_cdf(rng.random::<f64>());
                    if rng.random::<f64>() * t_max < x {
                        return x;
                    }
                }
            }
        }
    }
}

/// Gamma density through the Poisson-probability form
/// `f(t) = dpois(k - 1, t/theta) / theta` with Loader's saddle-point
/// evaluation, which stays accurate for very large shapes where
/// `exp((k-1) ln t - ln Gamma(k) - ...)` loses digits.
fn gamma_pdf(shape: f64, scale: f64, t: f64) -> f64 {
    let x = t / scale;
    if shape < 1.0 {
        poisson_raw(shape, x) * shape / t
    } else {
        poisson_raw(shape - 1.0, x) / scale
    }
}

/// `lambda^x e^{-lambda} / Gamma(x + 1)` for real `x >= 0`.
fn poisson_raw(x: f64, lambda: f64) -> f64 {
    if x == 0.0 {
        return (-lambda).exp();
    }
    if lambda == 0.0 {
        return 0.0;
    }
    (-stirling_error(x) - deviance_term(x, lambda)).exp() / (2.0 * std::f64::consts::PI * x).sqrt()
}

/// `ln Gamma(n + 1) - (n + 1/2) ln n + n - ln sqrt(2 pi)`
fn stirling_error(n: f64) -> f64 {
    const S0: f64 = 1.0 / 12.0;
    const S1: f64 = 1.0 / 360.0;
    const S2: f64 = 1.0 / 1260.0;
    const S3: f64 = 1.0 / 1680.0;
    const S4: f64 = 1.0 / 1188.0;
    if n <= 15.0 {
        return ln_gamma(n + 1.0) - (n + 0.5) * n.ln() + n
            - 0.5 * (2.0 * std::f64::consts::PI).ln();
    }
    let nn = n * n;
    if n > 500.0 {
        (S0 - S1 / nn) / n
    } else if n > 80.0 {
        (S0 - (S1 - S2 / nn) / nn) / n
    } else if n > 35.0 {
        (S0 - (S1 - (S2 - S3 / nn) / nn) / nn) / n
    } else {
        (S0 - (S1 - (S2 - (S3 - S4 / nn) / nn) / nn) / nn) / n
    }
}

/// `x ln(x / m) + m - x`, by series when `x` is close to `m`.
fn deviance_term(x: f64, m: f64) -> f64 {
    if (x - m).abs() < 0.1 * (x + m) {
        let mut v = (x - m) / (x + m);
        let mut s = (x - m) * v;
        let mut ej = 2.0 * x * v;
        v *= v;
        for j in 1..1000 {
            ej *= v;
            let s1 = s + ej / (2 * j + 1) as f64;
            if s1 == s {
                return s1;
            }
            s = s1;
        }
        s
    } else {
        x * (x / m).ln() + m - x
    }
}

/// Bisection for the boundary of a predicate that is true on `[lo, x*)`.
fn bisect(pred: impl Fn(f64) -> bool, mut lo: f64, mut hi: f64) -> f64 {
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if pred(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-15 * hi {
            break;
        }
    }
    hi
}

#[cfg(test)]
mod tests;
