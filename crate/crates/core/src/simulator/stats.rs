use serde::{Deserialize, Serialize};

use super::{SamplerStats, StationaryDraw};
use crate::solver::MomentSolution;

/// Monte Carlo moment estimates. Standard errors are sample sd / sqrt(n).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleStats {
    pub n_traj: usize,
    pub burnin_cycles: usize,
    pub seed: u64,
    /// Average time since the last renewal at observation.
    pub mean_timer: f64,
    pub mean: Vec<f64>,
    pub mean_se: Vec<f64>,
    /// Row-major `E[x x^T]`.
    pub second_moment: Vec<Vec<f64>>,
    pub second_moment_se: Vec<Vec<f64>>,
    pub covariance: Vec<Vec<f64>>,
    /// `None` where the estimated mean is zero.
    pub cv2: Vec<Option<f64>>,
    /// Delta-method standard error of `cv2`.
    pub cv2_se: Vec<Option<f64>>,
    pub sampler_stats: SamplerStats,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

fn mean_and_se(values: impl Iterator<Item = f64> + Clone, n: f64) -> (f64, f64) {
    let mean = values.clone().sum::<f64>() / n;
    let ss: f64 = values.map(|v| (v - mean) * (v - mean)).sum();
    let sd = (ss / (n - 1.0)).sqrt();
    (mean, sd / n.sqrt())
}

impl EnsembleStats {
    pub fn from_draws(
        draws: &[StationaryDraw],
        burnin_cycles: usize,
        seed: u64,
        sampler_stats: SamplerStats,
    ) -> Self {
        let n_traj = draws.len();
        let nf = n_traj as f64;
        let dim = draws.first().map_or(0, |d| d.state.len());
        let col = |i: usize| draws.iter().map(move |d| d.state[i]);
        let mut mean = vec![0.0; dim];
        let mut mean_se = vec![0.0; dim];
        for i in 0..dim {
            (mean[i], mean_se[i]) = mean_and_se(col(i), nf);
        }
        let mut second_moment = vec![vec![0.0; dim]; dim];
        let mut second_moment_se = vec![vec![0.0; dim]; dim];
        for i in 0..dim {
            for j in i..dim {
                let (m, se) = mean_and_se(draws.iter().map(|d| d.state[i] * d.state[j]), nf);
                second_moment[i][j] = m;
                second_moment[j][i] = m;
                second_moment_se[i][j] = se;
                second_moment_se[j][i] = se;
            }
        }
        let covariance: Vec<Vec<f64>> = (0..dim)
            .map(|i| {
                (0..dim)
                    .map(|j| second_moment[i][j] - mean[i] * mean[j])
                    .collect()
            })
            .collect();
        let mut cv2 = vec![None; dim];
        let mut cv2_se = vec![None; dim];
        for i in 0..dim {
            let (m1, m2) = (mean[i], second_moment[i][i]);
            if m1 == 0.0 {
                continue;
            }
            cv2[i] = Some(m2 / (m1 * m1) - 1.0);
            // delta method on g(m1, m2) = m2 / m1^2 - 1
            let (g1, g2) = (-2.0 * m2 / (m1 * m1 * m1), 1.0 / (m1 * m1));
            let mut var = 0.0;
            for d in draws {
                let x = d.state[i];
                let lin = g1 * (x - m1) + g2 * (x * x - m2);
                var += lin * lin;
            }
            cv2_se[i] = Some((var / (nf - 1.0)).sqrt() / nf.sqrt());
        }
        EnsembleStats {
            n_traj,
            burnin_cycles,
            seed,
            mean_timer: draws.iter().map(|d| d.timer).sum::<f64>() / nf,
            mean,
            mean_se,
            second_moment,
            second_moment_se,
            covariance,
            cv2,
            cv2_se,
            sampler_stats,
            warnings: Vec::new(),
        }
    }
}

/// Discrepancy between one Monte Carlo estimate and the exact value.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ZScore {
    pub quantity: String,
    pub simulated: f64,
    pub standard_error: f64,
    pub exact: f64,
    /// `(simulated - exact) / standard_error`
    pub z: f64,
}

/// Z-scores of every mean, second-moment (upper triangle) and CV² entry.
pub fn compare_with_solution(stats: &EnsembleStats, exact: &MomentSolution) -> Vec<ZScore> {
    let mut out = Vec::new();
    let mut push = |quantity: String, simulated: f64, standard_error: f64, exact: f64| {
        out.push(ZScore {
            quantity,
            simulated,
            standard_error,
            exact,
            z: (simulated - exact) / standard_error,
        })
    };
    let dim = stats.mean.len().min(exact.mean.len());
    for i in 0..dim {
        push(
            format!("mean[{i}]"),
            stats.mean[i],
            stats.mean_se[i],
            exact.mean[i],
        );
    }
    for i in 0..dim {
        for j in i..dim {
            push(
                format!("second_moment[{i}][{j}]"),
                stats.second_moment[i][j],
                stats.second_moment_se[i][j],
                exact.second_moment[i][j],
            );
        }
    }
    for i in 0..dim {
        if let (Some(s), Some(se), Some(e)) = (stats.cv2[i], stats.cv2_se[i], exact.cv2[i]) {
            push(format!("cv2[{i}]"), s, se, e);
        }
    }
    out
}
