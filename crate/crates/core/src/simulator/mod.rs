//! Event-exact Monte Carlo simulation. The flow between events is applied in
//! closed form and event times are drawn exactly, so the only error in an
//! ensemble estimate is sampling error.

mod samplers;
mod stats;

pub use samplers::{OffsetSampler, ResetSampler, SamplerStats, Samplers};
pub use stats::{compare_with_solution, EnsembleStats, ZScore};

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Exp};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::distributions::TimeSampler;
use crate::linalg::{flow_with_integral, scalar_flow, LinalgError, Matrix, Vector};
use crate::model::{PdmpModel, ValidationReport};
use crate::solver::{check_stability, SolveOptions};

use samplers::{add_gaussian, binomial, gaussian, psd_factor};

pub const MIN_ENSEMBLE: usize = 100;
pub const DEFAULT_BURNIN_CYCLES: usize = 50;

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error("invalid model:\n{0}")]
    Invalid(ValidationReport),
    #[error("invalid sampler: {0}")]
    Sampler(String),
    #[error("invalid argument: {0}")]
    Argument(String),
    /// The state overflowed, which usually means the model is unstable.
    #[error("state became non-finite at t = {time} in trajectory {trajectory_index}")]
    NonFinite {
        trajectory_index: u64,
        time: f64,
        /// Events and observations recorded before the overflow
        /// (`simulate_trajectory` only).
        prefix: Option<Box<Trajectory>>,
    },
}

pub type Result<T> = std::result::Result<T, SimError>;

/// Independent stream for one trajectory: ChaCha20 keyed by the master seed
/// (expanded by `seed_from_u64`) with the trajectory index as stream number.
/// ChaCha output is specified bit for bit, so streams are platform-stable.
pub fn rng_stream(seed: u64, trajectory_index: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(trajectory_index);
    rng
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum EventKind {
    Poisson(usize),
    General,
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EventKind::Poisson(i) => write!(f, "poisson-{i}"),
            EventKind::General => write!(f, "general"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub time: f64,
    pub kind: EventKind,
    pub before: Vec<f64>,
    pub after: Vec<f64>,
}

/// State at an observation time. At an event time this is the state just
/// before the event.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub time: f64,
    pub state: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub seed: u64,
    pub t_end: f64,
    pub events: Vec<EventRecord>,
    pub observations: Vec<Observation>,
    pub final_state: Vec<f64>,
    pub sampler_stats: SamplerStats,
}

/// One stationary draw: the state and the time since the last renewal.
#[derive(Clone, Debug, PartialEq)]
pub struct StationaryDraw {
    pub state: Vec<f64>,
    pub timer: f64,
}

struct PreparedPoisson {
    j: Matrix,
    mean: Vector,
    /// `None` for a deterministic offset.
    factor: Option<Matrix>,
}

/// Model data arranged for fast repeated use.
struct Engine<'m> {
    m: &'m PdmpModel,
    n: usize,
    reset: ResetSampler,
    poisson: Vec<PreparedPoisson>,
    total_rate: f64,
    cumulative_rates: Vec<f64>,
    gap: Option<Exp<f64>>,
    period: TimeSampler,
    biased_period: TimeSampler,
}

/// Mutable per-trajectory state.
struct Walker {
    x: Vector,
    scratch: Vector,
    stats: SamplerStats,
    rng: ChaCha20Rng,
}

impl<'m> Engine<'m> {
    fn new(m: &'m PdmpModel, samplers: &Samplers) -> Result<Self> {
        let report = m.validate();
        if !report.is_valid() {
            return Err(SimError::Invalid(report));
        }
        let n = m.dim();
        match samplers.general {
            ResetSampler::BinomialPartition { p } => {
                if n != 1 {
                    return Err(SimError::Sampler(format!(
                        "binomial partitioning needs a one-dimensional state, model has {n}"
                    )));
                }
                if !(0.0..=1.0).contains(&p) {
                    return Err(SimError::Sampler(format!(
                        "binomial p must lie in [0, 1], got {p}"
                    )));
                }
            }
            ResetSampler::AffineDeterministic | ResetSampler::MomentMatchedGaussian { .. } => {}
        }
        let poisson = m
            .poisson
            .iter()
            .map(|p| {
                let cov = &p.r_second - &p.r_mean * p.r_mean.transpose();
                let random = match samplers.poisson {
                    OffsetSampler::Deterministic => false,
                    OffsetSampler::Gaussian => true,
                    OffsetSampler::Auto => cov.iter().any(|&v| v != 0.0),
                };
                PreparedPoisson {
                    j: p.j.clone(),
                    mean: p.r_mean.clone(),
                    factor: random.then(|| psd_factor(&cov).0),
                }
            })
            .collect();
        let mut total_rate = 0.0;
        let cumulative_rates = m
            .poisson
            .iter()
            .map(|p| {
                total_rate += p.rate;
                total_rate
            })
            .collect();
        let gap = (total_rate > 0.0).then(|| Exp::new(total_rate).expect("rates validated"));
        Ok(Engine {
            m,
            n,
            reset: samplers.general,
            poisson,
            total_rate,
            cumulative_rates,
            gap,
            period: m.general.dist.sampler(),
            biased_period: m.general.dist.length_biased_sampler(),
        })
    }

    fn walker(&self, rng: ChaCha20Rng, x0: Vector) -> Walker {
        Walker {
            x: x0,
            scratch: Vector::zeros(self.n),
            stats: SamplerStats::default(),
            rng,
        }
    }

    fn next_gap(&self, rng: &mut ChaCha20Rng) -> f64 {
        match &self.gap {
            Some(e) => e.sample(rng),
            None => f64::INFINITY,
        }
    }

    /// Advances `x` along the flow. `false` if the state overflowed.
    fn flow_into(&self, x: &Vector, dt: f64, out: &mut Vector) -> bool {
        let d = &self.m.dynamics;
        if dt == 0.0 {
            out.copy_from(x);
            return true;
        }
        if self.n == 1 {
            let (e, i) = scalar_flow(d.a[(0, 0)], d.a_hat[0], dt);
            out[0] = e * x[0] + i;
            return out[0].is_finite();
        }
        match flow_with_integral(&d.a, &d.a_hat, dt) {
            Ok((e, i)) => {
                out.gemv(1.0, &e, x, 0.0);
                *out += i;
                out.iter().all(|v| v.is_finite())
            }
            Err(LinalgError::ExpOverflow { .. }) => false,
            Err(e) => panic!("flow on a validated model failed: {e}"),
        }
    }

    fn flow(&self, w: &mut Walker, dt: f64) -> bool {
        let ok = self.flow_into(&w.x, dt, &mut w.scratch);
        std::mem::swap(&mut w.x, &mut w.scratch);
        ok
    }

    fn pick_family(&self, rng: &mut ChaCha20Rng) -> usize {
        if self.poisson.len() == 1 {
            return 0;
        }
        let u = rng.random::<f64>() * self.total_rate;
        self.cumulative_rates
            .iter()
            .position(|&c| u < c)
            .unwrap_or(self.poisson.len() - 1)
    }

    fn poisson_reset(&self, w: &mut Walker, family: usize) -> bool {
        let p = &self.poisson[family];
        w.stats.poisson_events += 1;
        if self.n == 1 {
            let mut r = p.mean[0];
            if let Some(f) = &p.factor {
                r += f[(0, 0)] * gaussian(&mut w.rng);
            }
            w.x[0] = p.j[(0, 0)] * w.x[0] + r;
            return w.x[0].is_finite();
        }
        w.scratch.copy_from(&p.mean);
        w.scratch.gemv(1.0, &p.j, &w.x, 1.0);
        if let Some(f) = &p.factor {
            add_gaussian(&mut w.rng, f, &mut w.scratch);
        }
        std::mem::swap(&mut w.x, &mut w.scratch);
        w.x.iter().all(|v| v.is_finite())
    }

    fn general_reset(&self, w: &mut Walker) -> bool {
        let g = &self.m.general;
        w.stats.general_events += 1;
        match self.reset {
            ResetSampler::BinomialPartition { p } => {
                let x = w.x[0];
                if x < 0.0 {
                    w.stats.negative_count_clamped += 1;
                }
                let count = x.max(0.0).round();
                if !count.is_finite() || count > u64::MAX as f64 {
                    return false;
                }
                w.x[0] = binomial(&mut w.rng, count as u64, p);
                true
            }
            ResetSampler::AffineDeterministic if self.n == 1 => {
                w.x[0] = g.j[(0, 0)] * w.x[0] + g.r[0];
                w.x[0].is_finite()
            }
            ResetSampler::MomentMatchedGaussian { clamp_negative } if self.n == 1 => {
                let x = w.x[0];
                let qx = g.q[(0, 0)] * x;
                let var = qx * qx + 2.0 * g.b[(0, 0)] * x * g.c[0] + g.d[(0, 0)];
                if var < 0.0 {
                    w.stats.negative_variance_clamped += 1;
                }
                let mut y = g.j[(0, 0)] * x + g.r[0] + var.max(0.0).sqrt() * gaussian(&mut w.rng);
                if clamp_negative && y < 0.0 {
                    w.stats.negative_state_clamped += 1;
                    y = 0.0;
                }
                w.x[0] = y;
                y.is_finite()
            }
            ResetSampler::AffineDeterministic => {
                w.scratch.copy_from(&g.r);
                w.scratch.gemv(1.0, &g.j, &w.x, 1.0);
                std::mem::swap(&mut w.x, &mut w.scratch);
                w.x.iter().all(|v| v.is_finite())
            }
            ResetSampler::MomentMatchedGaussian { clamp_negative } => {
                let qx = &g.q * &w.x;
                let bx = &g.b * &w.x;
                let cross = &bx * g.c.transpose();
                let cov = &qx * qx.transpose() + &cross + cross.transpose() + &g.d;
                let (factor, clamped) = psd_factor(&cov);
                if clamped {
                    w.stats.negative_variance_clamped += 1;
                }
                w.scratch.copy_from(&g.r);
                w.scratch.gemv(1.0, &g.j, &w.x, 1.0);
                add_gaussian(&mut w.rng, &factor, &mut w.scratch);
                if clamp_negative && w.scratch.iter().any(|&v| v < 0.0) {
                    w.stats.negative_state_clamped += 1;
                    w.scratch.apply(|v| *v = v.max(0.0));
                }
                std::mem::swap(&mut w.x, &mut w.scratch);
                w.x.iter().all(|v| v.is_finite())
            }
        }
    }

    /// Runs Poisson resets and flow for `len` time units with no renewal.
    fn segment(&self, w: &mut Walker, len: f64) -> bool {
        let mut t = 0.0;
        loop {
            let gap = self.next_gap(&mut w.rng);
            if t + gap >= len {
                return self.flow(w, len - t);
            }
            if !self.flow(w, gap) {
                return false;
            }
            t += gap;
            let family = self.pick_family(&mut w.rng);
            if !self.poisson_reset(w, family) {
                return false;
            }
        }
    }

    /// One full renewal period followed by the renewal-timed reset.
    fn cycle(&self, w: &mut Walker) -> bool {
        let len = self.period.sample(&mut w.rng);
        self.segment(w, len) && self.general_reset(w)
    }

    /// Burn-in cycles, then a phase drawn from the stationary timer law:
    /// the period containing a typical time is length-biased and the time
    /// already elapsed in it is uniform.
    fn stationary_draw(&self, w: &mut Walker, burnin: usize) -> std::result::Result<f64, usize> {
        for c in 0..burnin {
            if !self.cycle(w) {
                return Err(c);
            }
        }
        let period = self.biased_period.sample(&mut w.rng);
        let timer = w.rng.random::<f64>() * period;
        if self.segment(w, timer) {
            Ok(timer)
        } else {
            Err(burnin)
        }
    }
}

fn check_dim(m: &PdmpModel, x0: &[f64]) -> Result<()> {
    if x0.len() != m.dim() {
        return Err(SimError::Argument(format!(
            "initial state has length {}, model dimension is {}",
            x0.len(),
            m.dim()
        )));
    }
    if x0.iter().any(|v| !v.is_finite()) {
        return Err(SimError::Argument("initial state must be finite".into()));
    }
    Ok(())
}

/// Simulates one trajectory on `[0, t_end]` with a renewal at time zero,
/// recording every event and the state at each time in `observe`.
pub fn simulate_trajectory(
    m: &PdmpModel,
    samplers: &Samplers,
    x0: &[f64],
    t_end: f64,
    seed: u64,
    observe: &[f64],
) -> Result<Trajectory> {
    if !(t_end.is_finite() && t_end > 0.0) {
        return Err(SimError::Argument(format!(
            "t_end must be finite and > 0, got {t_end}"
        )));
    }
    check_dim(m, x0)?;
    if let Some(bad) = observe.iter().find(|&&t| !(0.0..=t_end).contains(&t)) {
        return Err(SimError::Argument(format!(
            "observation time {bad} outside [0, {t_end}]"
        )));
    }
    let mut observe = observe.to_vec();
    observe.sort_by(f64::total_cmp);

    let engine = Engine::new(m, samplers)?;
    let mut w = engine.walker(rng_stream(seed, 0), Vector::from_column_slice(x0));
    let mut traj = Trajectory {
        seed,
        t_end,
        events: Vec::new(),
        observations: Vec::with_capacity(observe.len()),
        final_state: Vec::new(),
        sampler_stats: SamplerStats::default(),
    };
    let overflow = |time: f64, mut traj: Trajectory, w: &Walker| {
        traj.final_state = w.x.iter().copied().collect();
        traj.sampler_stats = w.stats;
        SimError::NonFinite {
            trajectory_index: 0,
            time,
            prefix: Some(Box::new(traj)),
        }
    };

    let mut t = 0.0;
    let mut next_obs = 0;
    let mut next_general = engine.period.sample(&mut w.rng);
    let mut tmp = Vector::zeros(engine.n);
    loop {
        let next_poisson = t + engine.next_gap(&mut w.rng);
        let t_next = next_poisson.min(next_general).min(t_end);
        while next_obs < observe.len() && observe[next_obs] <= t_next {
            let at = observe[next_obs];
            engine.flow_into(&w.x, at - t, &mut tmp);
            traj.observations.push(Observation {
                time: at,
                state: tmp.iter().copied().collect(),
            });
            next_obs += 1;
        }
        if !engine.flow(&mut w, t_next - t) {
            return Err(overflow(t_next, traj, &w));
        }
        t = t_next;
        if t_end <= next_poisson.min(next_general) {
            break;
        }
        let before: Vec<f64> = w.x.iter().copied().collect();
        let (kind, ok) = if next_poisson < next_general {
            let family = engine.pick_family(&mut w.rng);
            (
                EventKind::Poisson(family),
                engine.poisson_reset(&mut w, family),
            )
        } else {
            next_general = t + engine.period.sample(&mut w.rng);
            (EventKind::General, engine.general_reset(&mut w))
        };
        traj.events.push(EventRecord {
            time: t,
            kind,
            before,
            after: w.x.iter().copied().collect(),
        });
        if !ok {
            return Err(overflow(t, traj, &w));
        }
    }
    traj.final_state = w.x.iter().copied().collect();
    traj.sampler_stats = w.stats;
    Ok(traj)
}

/// Draws `n_traj` independent stationary samples, trajectory `i` using
/// `rng_stream(seed, i)`. Each starts from zero, runs `burnin_cycles`
/// renewal cycles and is then observed at a stationary renewal phase.
pub fn stationary_draws(
    m: &PdmpModel,
    samplers: &Samplers,
    n_traj: usize,
    burnin_cycles: usize,
    seed: u64,
) -> Result<(Vec<StationaryDraw>, SamplerStats)> {
    let engine = Engine::new(m, samplers)?;
    let results: Vec<_> = (0..n_traj as u64)
        .into_par_iter()
        .map(|i| {
            let mut w = engine.walker(rng_stream(seed, i), Vector::zeros(engine.n));
            let r = engine.stationary_draw(&mut w, burnin_cycles);
            (i, r, w)
        })
        .collect();
    let mut draws = Vec::with_capacity(n_traj);
    let mut stats = SamplerStats::default();
    for (i, r, w) in results {
        match r {
            Ok(timer) => draws.push(StationaryDraw {
                state: w.x.iter().copied().collect(),
                timer,
            }),
            Err(cycle) => {
                return Err(SimError::NonFinite {
                    trajectory_index: i,
                    time: cycle as f64,
                    prefix: None,
                })
            }
        }
        stats.merge(&w.stats);
    }
    Ok((draws, stats))
}

/// Monte Carlo estimate of the stationary first and second moments.
pub fn estimate_stationary_moments(
    m: &PdmpModel,
    samplers: &Samplers,
    n_traj: usize,
    burnin_cycles: usize,
    seed: u64,
) -> Result<EnsembleStats> {
    if n_traj < MIN_ENSEMBLE {
        return Err(SimError::Argument(format!(
            "n_traj must be at least {MIN_ENSEMBLE}, got {n_traj}"
        )));
    }
    let mut warnings = Vec::new();
    match check_stability(m, 2, &SolveOptions::default()) {
        Ok(r) if r.stable => {}
        Ok(r) => warnings.push(format!(
            "second-order cycle map has spectral radius {:.6}; moments may not be stationary",
            r.spectral_radius
        )),
        Err(e) => warnings.push(format!("stability could not be checked: {e}")),
    }
    for w in &warnings {
        log::warn!("{w}");
    }
    let (draws, sampler_stats) = stationary_draws(m, samplers, n_traj, burnin_cycles, seed)?;
    let mut stats = EnsembleStats::from_draws(&draws, burnin_cycles, seed, sampler_stats);
    stats.warnings = warnings;
    Ok(stats)
}

/// Ensemble mean of the state at the end of each renewal period (just
/// before the reset), for `n_cycles` periods starting from zero. Used to
/// see growth in unstable models; stops early at overflow.
pub fn cycle_end_means(
    m: &PdmpModel,
    samplers: &Samplers,
    n_traj: usize,
    n_cycles: usize,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    let engine = Engine::new(m, samplers)?;
    let paths: Vec<Vec<Vector>> = (0..n_traj as u64)
        .into_par_iter()
        .map(|i| {
            let mut w = engine.walker(rng_stream(seed, i), Vector::zeros(engine.n));
            let mut ends = Vec::with_capacity(n_cycles);
            for _ in 0..n_cycles {
                let len = engine.period.sample(&mut w.rng);
                if !engine.segment(&mut w, len) {
                    break;
                }
                ends.push(w.x.clone());
                if !engine.general_reset(&mut w) {
                    break;
                }
            }
            ends
        })
        .collect();
    let reached = paths.iter().map(Vec::len).min().unwrap_or(0);
    Ok((0..reached)
        .map(|c| {
            let mut sum = Vector::zeros(engine.n);
            for p in &paths {
                sum += &p[c];
            }
            (sum / n_traj as f64).iter().copied().collect()
        })
        .collect())
}
