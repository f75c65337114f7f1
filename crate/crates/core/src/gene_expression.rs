//! Protein expression with bursty synthesis, first-order decay and random
//! partitioning at cell division.
//!
//! Bursts of size `U` arrive at rate `k`, proteins decay at rate `gamma`, and
//! at division (cell-cycle time `T` drawn from any inter-event law) each
//! molecule goes to the tracked daughter so that `E[x+ | x] = x/2` and
//! `Var[x+ | x] = b x`.
//!
//! The closed forms below are rewritten in terms of
//! `D1 = E[1 - e^{-gamma T}]`, `D2 = E[1 - e^{-2 gamma T}]` and
//! expectations of `e^{-z} - 1 + z` and `4e^{-z} - e^{-2z} - 3 + 2z`
//! (evaluated by series for small `z`), so they keep full relative accuracy
//! as `gamma -> 0` instead of cancelling.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::distributions::{expect_over_t, DistributionError, InterEventDistribution};
use crate::linalg::{Matrix, Vector};
use crate::model::{GeneralResetFamily, LinearDynamics, PdmpModel, PoissonResetFamily};
use crate::tolerances::Tolerance;

#[derive(Debug, Error)]
pub enum GeneExpressionError {
    #[error("invalid protein parameter `{name}` = {value}: {reason}")]
    InvalidParameter {
        name: &'static str,
        value: f64,
        reason: &'static str,
    },
    #[error(transparent)]
    Distribution(#[from] DistributionError),
}

pub type Result<T> = std::result::Result<T, GeneExpressionError>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProteinModelParams {
    /// Burst arrival rate.
    pub k: f64,
    /// `E[U]`
    pub u_mean: f64,
    /// `E[U^2]`
    pub u_second: f64,
    /// Decay rate; 0 for a stable protein.
    pub gamma: f64,
    /// Partitioning-noise slope, `Var[x+ | x] = b x`.
    pub b: f64,
    /// Cell-cycle time law.
    pub t_dist: InterEventDistribution,
}

impl ProteinModelParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |name, value, reason| {
            Err(GeneExpressionError::InvalidParameter {
                name,
                value,
                reason,
            })
        };
        if !(self.k.is_finite() && self.k > 0.0) {
            return bad("k", self.k, "must be finite and > 0");
        }
        if !(self.u_mean.is_finite() && self.u_mean > 0.0) {
            return bad("u_mean", self.u_mean, "must be finite and > 0");
        }
        if !(self.u_second.is_finite()
            && self.u_second >= self.u_mean * self.u_mean * (1.0 - 1e-12))
        {
            return bad("u_second", self.u_second, "must be finite and >= u_mean^2");
        }
        if !(self.gamma.is_finite() && self.gamma >= 0.0) {
            return bad("gamma", self.gamma, "must be finite and >= 0");
        }
        if !(self.b.is_finite() && self.b >= 0.0) {
            return bad("b", self.b, "must be finite and >= 0");
        }
        Ok(())
    }

    /// `E[U^2]/E[U]`, the burst size that enters the synthesis noise term
    /// (equal to `U` for deterministic bursts).
    pub fn effective_burst(&self) -> f64 {
        self.u_second / self.u_mean
    }
}

/// The three noise sources of the protein CV² and their sum.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseDecomposition {
    pub mean: f64,
    pub total: f64,
    pub cell_cycle: f64,
    pub synthesis: f64,
    pub partitioning: f64,
}

impl NoiseDecomposition {
    fn new(mean: f64, cell_cycle: f64, synthesis: f64, partitioning: f64) -> Self {
        NoiseDecomposition {
            mean,
            total: cell_cycle + synthesis + partitioning,
            cell_cycle,
            synthesis,
            partitioning,
        }
    }
}

/// One-dimensional PDMP for the protein count.
pub fn build_protein_model(p: &ProteinModelParams) -> Result<PdmpModel> {
    p.validate()?;
    let one = |x: f64| Matrix::from_element(1, 1, x);
    let v = |x: f64| Vector::from_element(1, x);
    Ok(PdmpModel {
        dynamics: LinearDynamics {
            a_hat: v(0.0),
            a: one(-p.gamma),
        },
        poisson: vec![PoissonResetFamily {
            rate: p.k,
            j: one(1.0),
            r_mean: v(p.u_mean),
            r_second: one(p.u_second),
        }],
        general: GeneralResetFamily {
            dist: p.t_dist.clone(),
            j: one(0.5),
            r: v(0.0),
            q: one(0.0),
            b: one(p.b / 2.0),
            c: v(1.0),
            d: one(0.0),
        },
    })
}

const SERIES_CUTOFF: f64 = 1.0;

/// `e^{-z} - 1 + z`
fn phi2(z: f64) -> f64 {
    if z.abs() < SERIES_CUTOFF {
        let mut term = z * z / 2.0;
        let mut sum = term;
        for n in 3..40 {
            term *= -z / n as f64;
            sum += term;
            if term.abs() <= 1e-17 * sum.abs() {
                break;
            }
        }
        sum
    } else {
        (-z).exp_m1() + z
    }
}

/// `4 e^{-z} - e^{-2z} - 3 + 2z`, which is `O(z^3)`.
fn r3(z: f64) -> f64 {
    if z.abs() < SERIES_CUTOFF {
        // sum over n >= 3 of (-1)^n (4 - 2^n) z^n / n!
        let mut pow = z * z * z / 6.0; // z^n / n!
        let mut two = 8.0;
        let mut sum = 0.0;
        for n in 3..60 {
            if n > 3 {
                pow *= z / n as f64;
                two *= 2.0;
            }
            let sign = if n % 2 == 0 { 1.0 } else { -1.0 };
            let term = sign * (4.0 - two) * pow;
            sum += term;
            if term.abs() <= 1e-17 * sum.abs() {
                break;
            }
        }
        sum
    } else {
        4.0 * (-z).exp() - (-2.0 * z).exp() - 3.0 + 2.0 * z
    }
}

struct Averages {
    a: f64,
    d1: f64,
    d2: f64,
    e1: f64,
    e2: f64,
    e3: f64,
}

fn averages(gamma: f64, d: &InterEventDistribution) -> Result<Averages> {
    let tol = Tolerance::new(0.0, 1e-13);
    let e = |f: &dyn Fn(f64) -> f64| -> Result<f64> { Ok(expect_over_t(d, f, tol)?.value) };
    Ok(Averages {
        a: gamma * d.mean(),
        d1: e(&|t| -(-gamma * t).exp_m1())?,
        d2: e(&|t| -(-2.0 * gamma * t).exp_m1())?,
        e1: e(&|t| phi2(gamma * t))?,
        e2: e(&|t| phi2(2.0 * gamma * t))?,
        e3: e(&|t| r3(gamma * t))?,
    })
}

impl Averages {
    /// `E[e^{-z}] - 1 + 2a(1 - E[e^{-z}]/2)`
    fn g(&self) -> f64 {
        self.e1 + self.a * self.d1
    }
}

/// Stationary mean protein count. `gamma = 0` gives the stable-protein
/// limit `k E[U] E[T] (3 + CV_T^2) / 2`.
pub fn protein_mean_closed(p: &ProteinModelParams) -> Result<f64> {
    p.validate()?;
    let d = &p.t_dist;
    let ku = p.k * p.u_mean;
    if p.gamma == 0.0 {
        return Ok(ku * d.mean() * (3.0 + d.cv2()) / 2.0);
    }
    let av = averages(p.gamma, d)?;
    Ok(mean_from(ku, p.gamma, d.mean(), &av))
}

fn mean_from(ku: f64, gamma: f64, t_mean: f64, av: &Averages) -> f64 {
    ku * av.g() / (gamma * gamma * t_mean * (1.0 + av.d1))
}

/// CV² of the protein count split into its cell-cycle, synthesis and
/// partitioning contributions.
pub fn protein_cv2(p: &ProteinModelParams) -> Result<NoiseDecomposition> {
    p.validate()?;
    if p.gamma == 0.0 {
        return protein_cv2_stable_limit(p);
    }
    let d = &p.t_dist;
    let av = averages(p.gamma, d)?;
    let mean = mean_from(p.k * p.u_mean, p.gamma, d.mean(), &av);
    let (a, d1, d2, e1, e2, e3) = (av.a, av.d1, av.d2, av.e1, av.e2, av.e3);
    let g = av.g();

    let numerator = if a < 0.1 {
        // D1 = a - e1 and D2 = 2a - 4e1 + e3 substituted and expanded, so the
        // O(a^4) result is assembled without cancelling O(a^2) pieces.
        let (a2, a3, a4) = (a * a, a * a * a, a * a * a * a);
        let (e1s, e1c) = (e1 * e1, e1 * e1 * e1);
        -2.0 * a4 + 8.0 * a3 * e1 - a3 * e3 - 10.0 * a2 * e1s
            + 2.0 * a2 * e1 * e3
            + 4.0 * a2 * e1
            + 4.0 * a * e1c
            - a * e1s * e3
            - 12.0 * a * e1s
            + 2.0 * a * e1 * e3
            + 3.0 * a * e3
            + 8.0 * e1c
            - 2.0 * e1s * e3
            - 6.0 * e1s
    } else {
        -2.0 * (3.0 + d2) * d1 * d1 + a * (1.0 + d1) * (3.0 - d1) * d2
    };
    let cell_cycle = numerator / (2.0 * (3.0 + d2) * g * g);
    let synthesis = (1.0 + d1) / (4.0 * (3.0 + d2)) * (3.0 * e2 + 2.0 * a * d2) / g
        * p.effective_burst()
        / mean;
    let partitioning = 4.0 * p.b * d2 * d1 / ((3.0 + d2) * g * mean);
    Ok(NoiseDecomposition::new(
        mean,
        cell_cycle,
        synthesis,
        partitioning,
    ))
}

/// The `gamma -> 0` limit, which depends on the cell-cycle law only through
/// its first three moments.
pub fn protein_cv2_stable_limit(p: &ProteinModelParams) -> Result<NoiseDecomposition> {
    p.validate()?;
    let d = &p.t_dist;
    let t1 = d.mean();
    let c = d.cv2();
    let r = d.raw_moment(3)? / (t1 * t1 * t1);
    let mean = p.k * p.u_mean * t1 * (3.0 + c) / 2.0;
    let cell_cycle =
        1.0 / 27.0 + 4.0 * (9.0 * r - 9.0 - 6.0 * c - 7.0 * c * c) / (27.0 * (3.0 + c) * (3.0 + c));
    let partitioning = 16.0 * p.b / (3.0 * (3.0 + c)) / mean;
    let synthesis = (3.0 * c + 5.0) / (3.0 * (3.0 + c)) * p.effective_burst() / mean;
    Ok(NoiseDecomposition::new(
        mean,
        cell_cycle,
        synthesis,
        partitioning,
    ))
}

/// One row of a noise sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    /// The swept value (`CV_T^2` or `gamma`).
    pub parameter: f64,
    /// Burst rate used for this row.
    pub k: f64,
    pub noise: NoiseDecomposition,
    /// Each component divided by its value at the reference point
    /// (`CV_T^2 = 0` or `gamma = 0`); `mean` is left unnormalized.
    pub normalized: NoiseDecomposition,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SweepMode {
    /// Keep `k` fixed.
    FreeMean,
    /// Rescale `k` on every row so the mean protein count equals that of the
    /// base parameters.
    HoldMean,
}

fn hold(p: &ProteinModelParams, target: Option<f64>) -> Result<ProteinModelParams> {
    let mut q = p.clone();
    if let Some(target) = target {
        let m = protein_mean_closed(&q)?;
        q.k *= target / m;
    }
    Ok(q)
}

fn ratio(x: f64, r: f64) -> f64 {
    if r == 0.0 {
        if x == 0.0 {
            0.0
        } else {
            f64::NAN
        }
    } else {
        x / r
    }
}

fn normalize(n: &NoiseDecomposition, r: &NoiseDecomposition) -> NoiseDecomposition {
    NoiseDecomposition {
        mean: n.mean,
        total: ratio(n.total, r.total),
        cell_cycle: ratio(n.cell_cycle, r.cell_cycle),
        synthesis: ratio(n.synthesis, r.synthesis),
        partitioning: ratio(n.partitioning, r.partitioning),
    }
}

fn sweep(
    p: &ProteinModelParams,
    grid: &[f64],
    mode: SweepMode,
    reference: f64,
    at: impl Fn(f64) -> Result<ProteinModelParams>,
) -> Result<Vec<SweepRow>> {
    let target = match mode {
        SweepMode::HoldMean => Some(protein_mean_closed(p)?),
        SweepMode::FreeMean => None,
    };
    let base = protein_cv2(&hold(&at(reference)?, target)?)?;
    grid.iter()
        .map(|&x| {
            let q = hold(&at(x)?, target)?;
            let noise = protein_cv2(&q)?;
            Ok(SweepRow {
                parameter: x,
                k: q.k,
                noise,
                normalized: normalize(&noise, &base),
            })
        })
        .collect()
}

/// Noise against `CV_T^2` for gamma-distributed cell-cycle times with the
/// mean of `p.t_dist` (`shape = 1/CV_T^2`, `scale = E[T] CV_T^2`;
/// `CV_T^2 = 0` is the deterministic law). Normalized to `CV_T^2 = 0`.
pub fn sweep_noise_vs_cvt(
    p: &ProteinModelParams,
    cv2_grid: &[f64],
    mode: SweepMode,
) -> Result<Vec<SweepRow>> {
    let t_mean = p.t_dist.mean();
    sweep(p, cv2_grid, mode, 0.0, |cv2| {
        let mut q = p.clone();
        q.t_dist = InterEventDistribution::gamma_with_mean_cv2(t_mean, cv2)?;
        Ok(q)
    })
}

/// Noise against the decay rate, normalized to `gamma = 0`.
pub fn sweep_noise_vs_gamma(
    p: &ProteinModelParams,
    gamma_grid: &[f64],
    mode: SweepMode,
) -> Result<Vec<SweepRow>> {
    sweep(p, gamma_grid, mode, 0.0, |gamma| {
        let mut q = p.clone();
        q.gamma = gamma;
        q.validate()?;
        Ok(q)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(gamma: f64, b: f64, t: InterEventDistribution) -> ProteinModelParams {
        ProteinModelParams {
            k: 30.0,
            u_mean: 2.0,
            u_second: 7.0,
            gamma,
            b,
            t_dist: t,
        }
    }

    #[test]
    fn series_match_direct_forms() {
        for z in [1e-3f64, 0.2, 0.7, 0.99] {
            let direct = (-z).exp() - 1.0 + z;
            assert!((phi2(z) - direct).abs() < 1e-15);
            let direct = 4.0 * (-z).exp() - (-2.0 * z).exp() - 3.0 + 2.0 * z;
            assert!((r3(z) - direct).abs() < 1e-14);
        }
        let z = 1e-4f64;
        assert!((r3(z) - (2.0 * z.powi(3) / 3.0 - z.powi(4) / 2.0)).abs() < 1e-20);
    }

    #[test]
    fn model_mapping() {
        let m = build_protein_model(&params(
            0.3,
            0.5,
            InterEventDistribution::exponential(1.0).unwrap(),
        ))
        .unwrap();
        assert_eq!(m.general.j[(0, 0)], 0.5);
        assert_eq!(m.general.b[(0, 0)], 0.25);
        assert_eq!(m.general.c[0], 1.0);
        assert_eq!(m.general.r[0], 0.0);
        assert_eq!(m.general.q[(0, 0)], 0.0);
        assert_eq!(m.general.d[(0, 0)], 0.0);
        assert!(m.validate().is_valid());
        assert!(build_protein_model(&params(
            0.0,
            0.0,
            InterEventDistribution::exponential(1.0).unwrap()
        ))
        .is_ok());
    }

    #[test]
    fn stable_limit_means() {
        let det = params(
            0.0,
            0.0,
            InterEventDistribution::deterministic(2.0).unwrap(),
        );
        assert!((protein_mean_closed(&det).unwrap() - 1.5 * 60.0 * 2.0).abs() < 1e-12);
        let exp = params(0.0, 0.0, InterEventDistribution::exponential(0.5).unwrap());
        assert!((protein_mean_closed(&exp).unwrap() - 2.0 * 60.0 * 2.0).abs() < 1e-12);
    }

    #[test]
    fn small_gamma_is_continuous() {
        for t in [
            InterEventDistribution::deterministic(1.0).unwrap(),
            InterEventDistribution::exponential(1.0).unwrap(),
            InterEventDistribution::gamma(4.0, 0.25).unwrap(),
        ] {
            let limit = protein_cv2_stable_limit(&params(0.0, 0.4, t.clone())).unwrap();
            let mut prev = f64::INFINITY;
            for g in [1e-2, 1e-3, 1e-4, 1e-6] {
                let x = protein_cv2(&params(g, 0.4, t.clone())).unwrap();
                let gap = (x.mean - limit.mean).abs();
                assert!(gap < prev);
                prev = gap;
            }
            let x = protein_cv2(&params(1e-7, 0.4, t.clone())).unwrap();
            assert!((x.cell_cycle / limit.cell_cycle - 1.0).abs() < 1e-6);
            assert!((x.synthesis / limit.synthesis - 1.0).abs() < 1e-6);
            assert!((x.partitioning / limit.partitioning - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn exponential_stable_cell_cycle_term() {
        let x = protein_cv2_stable_limit(&params(
            0.0,
            0.0,
            InterEventDistribution::exponential(1.0).unwrap(),
        ))
        .unwrap();
        let expected = 1.0 / 27.0 + 128.0 / 432.0;
        assert!((x.cell_cycle - expected).abs() < 1e-14);
        assert!((x.cell_cycle - 1.0 / 3.0).abs() < 1e-14);
    }

    #[test]
    fn partitioning_is_linear_in_b() {
        let t = InterEventDistribution::gamma(3.0, 0.5).unwrap();
        let x1 = protein_cv2(&params(0.4, 0.3, t.clone())).unwrap();
        let x2 = protein_cv2(&params(0.4, 0.6, t)).unwrap();
        assert!((x2.partitioning / x1.partitioning - 2.0).abs() < 1e-14);
        assert_eq!(x1.cell_cycle, x2.cell_cycle);
    }

    #[test]
    fn invalid_parameters() {
        let t = InterEventDistribution::exponential(1.0).unwrap();
        let mut p = params(0.1, 0.1, t);
        p.u_second = 1.0;
        assert!(protein_cv2(&p).is_err());
        p.u_second = 7.0;
        p.gamma = -1.0;
        assert!(build_protein_model(&p).is_err());
    }
}
