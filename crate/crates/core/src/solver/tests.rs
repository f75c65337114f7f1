use super::*;
use crate::distributions::expect_over_t;
use crate::linalg::flow_with_integral;
use crate::model::{GeneralResetFamily, LinearDynamics, PoissonResetFamily};

fn one(x: f64) -> Matrix {
    Matrix::from_element(1, 1, x)
}

fn v1(x: f64) -> Vector {
    Vector::from_element(1, x)
}

fn protein(k: f64, u: f64, u2: f64, gamma: f64, b: f64, dist: InterEventDistribution) -> PdmpModel {
    PdmpModel {
        dynamics: LinearDynamics {
            a_hat: v1(0.0),
            a: one(-gamma),
        },
        poisson: vec![PoissonResetFamily {
            rate: k,
            j: one(1.0),
            r_mean: v1(u),
            r_second: one(u2),
        }],
        general: GeneralResetFamily {
            dist,
            j: one(0.5),
            r: v1(0.0),
            q: one(0.0),
            b: one(b / 2.0),
            c: v1(1.0),
            d: one(0.0),
        },
    }
}

fn two_dim() -> PdmpModel {
    PdmpModel {
        dynamics: LinearDynamics {
            a_hat: Vector::from_vec(vec![0.5, 0.0]),
            a: Matrix::from_row_slice(2, 2, &[-0.8, 0.1, 0.6, -1.2]),
        },
        poisson: vec![
            PoissonResetFamily {
                rate: 2.0,
                j: Matrix::identity(2, 2),
                r_mean: Vector::from_vec(vec![1.0, 0.0]),
                r_second: Matrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 0.0]),
            },
            PoissonResetFamily::deterministic(
                0.7,
                Matrix::from_row_slice(2, 2, &[0.9, 0.0, 0.0, 0.8]),
                Vector::from_vec(vec![0.0, 0.3]),
            ),
        ],
        general: GeneralResetFamily {
            dist: InterEventDistribution::gamma(2.5, 0.6).unwrap(),
            j: Matrix::from_row_slice(2, 2, &[0.5, 0.1, 0.0, 0.6]),
            r: Vector::from_vec(vec![0.1, 0.2]),
            q: Matrix::from_row_slice(2, 2, &[0.2, 0.0, 0.1, 0.1]),
            b: Matrix::from_row_slice(2, 2, &[0.1, 0.0, 0.0, 0.05]),
            c: Vector::from_vec(vec![1.0, 0.5]),
            d: Matrix::from_row_slice(2, 2, &[0.3, 0.1, 0.1, 0.2]),
        },
    }
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

#[test]
fn protein_stability_is_half_laplace_transform() {
    let gamma = 0.4;
    let d = InterEventDistribution::gamma(3.0, 0.5).unwrap();
    let m = protein(10.0, 1.0, 1.0, gamma, 0.0, d.clone());
    let r = check_stability(&m, 1, &SolveOptions::default()).unwrap();
    let lt = (1.0 + gamma * 0.5f64).powi(-3);
    assert!((r.spectral_radius - 0.5 * lt).abs() < 1e-14);
    assert!(r.stable);
}

#[test]
fn stability_boundary_cases() {
    let mut m = protein(
        1.0,
        1.0,
        1.0,
        0.0,
        0.0,
        InterEventDistribution::exponential(1.0).unwrap(),
    );
    m.general.j = one(1.0);
    let r = check_stability(&m, 1, &SolveOptions::default()).unwrap();
    assert!((r.spectral_radius - 1.0).abs() < 1e-14);
    assert!(!r.stable);
    assert!(matches!(
        stationary_mean(&m, &SolveOptions::default()),
        Err(SolverError::Unstable(_))
    ));
    m.general.j = one(0.0);
    let r = check_stability(&m, 1, &SolveOptions::default()).unwrap();
    assert_eq!(r.spectral_radius, 0.0);
    assert!(r.stable);
}

#[test]
fn zero_forcing_gives_zero_moments() {
    let mut m = two_dim();
    m.dynamics.a_hat = Vector::zeros(2);
    for p in m.poisson.iter_mut() {
        p.r_mean = Vector::zeros(2);
        p.r_second = Matrix::zeros(2, 2);
    }
    m.general.r = Vector::zeros(2);
    m.general.c = Vector::zeros(2);
    m.general.d = Matrix::zeros(2, 2);
    let s = stationary_second(&m, &SolveOptions::default()).unwrap();
    assert!(s.mean.iter().all(|x| x.abs() < 1e-15));
    assert!(s.second_moment_matrix().amax() < 1e-15);
    assert!(s.cv2.iter().all(Option::is_none));
}

#[test]
fn protein_mean_matches_closed_form() {
    let (k, u, gamma) = (20.0, 1.5, 0.7);
    let d = InterEventDistribution::gamma(4.0, 0.25).unwrap();
    let m = protein(k, u, 3.0, gamma, 0.3, d.clone());
    let lt = expect_over_t(&d, |t| (-gamma * t).exp(), Tolerance::new(0.0, 1e-14))
        .unwrap()
        .value;
    let expected =
        k * u / gamma - k * u / (2.0 * gamma * gamma * d.mean()) * (1.0 - lt) / (1.0 - 0.5 * lt);
    let s = stationary_mean(&m, &SolveOptions::default()).unwrap();
    assert!(rel(s.mean[0], expected) < 1e-11);
    assert!(s.numerical_error_estimate < 1e-8 * expected);
}

#[test]
fn noop_general_resets_reduce_to_poisson_system() {
    let mut m = two_dim();
    m.general = GeneralResetFamily::affine(
        InterEventDistribution::lognormal(0.0, 0.4).unwrap(),
        Matrix::identity(2, 2),
        Vector::zeros(2),
    );
    let opts = SolveOptions::default();
    let s = stationary_second(&m, &opts).unwrap();
    let (a_bar, a_hat_bar) = m.effective_matrices();
    let expected = -a_bar.clone().lu().solve(&a_hat_bar).unwrap();
    for i in 0..2 {
        assert!(rel(s.mean[i], expected[i]) < 1e-8);
    }
    // run the lifted moment ODE from zero until it has converged
    let lifted = lift_second_order(&m);
    let (la, lb) = lifted.effective_matrices();
    let (_, mu) = flow_with_integral(&la, &lb, 200.0).unwrap();
    let second = s.second_moment_matrix();
    for i in 0..2 {
        for j in 0..2 {
            assert!(rel(second[(i, j)], mu[2 + i + 2 * j]) < 1e-6);
        }
    }
}

#[test]
fn lifted_mean_block_matches_direct_mean() {
    let m = two_dim();
    let opts = SolveOptions::default();
    let first = stationary_mean(&m, &opts).unwrap();
    let s = stationary_second(&m, &opts).unwrap();
    let lifted = lift_second_order(&m);
    let (a, b) = lifted.effective_matrices();
    let (st, _) = renewal_stationary(
        &m.general.dist,
        &a,
        &b,
        &lifted.j_mu2,
        &lifted.r_mu2,
        opts.tol,
        |c| Ok(StabilityReport::new(2, spectral_radius(c)?, 1e-9, "")),
    )
    .unwrap();
    for i in 0..2 {
        assert!(rel(st.value[i], first.mean[i]) < 1e-8);
        assert_eq!(s.mean[i], first.mean[i]);
    }
    assert_eq!(s.stability.len(), 2);
    assert!(
        s.stability[1].second_order_block_radius.unwrap() <= s.stability[1].spectral_radius + 1e-12
    );
}

#[test]
fn moments_scale_with_inputs() {
    let m = two_dim();
    let opts = SolveOptions::default();
    let s1 = stationary_second(&m, &opts).unwrap();
    let s2 = stationary_second(&m.scaled_inputs(2.0), &opts).unwrap();
    for i in 0..2 {
        assert!(rel(s2.mean[i], 2.0 * s1.mean[i]) < 1e-10);
        for j in 0..2 {
            assert!(rel(s2.second_moment[i][j], 4.0 * s1.second_moment[i][j]) < 1e-10);
        }
    }
}

#[test]
fn output_is_symmetric_and_psd() {
    let s = stationary_second(&two_dim(), &SolveOptions::default()).unwrap();
    let sm = s.second_moment_matrix();
    assert_eq!(sm, sm.transpose());
    let cov = s.covariance_matrix();
    assert!(min_symmetric_eigenvalue(&cov) > -1e-7 * cov.trace());
    assert!(s.warnings.is_empty());
    for i in 0..2 {
        let cv2 = s.cv2[i].unwrap();
        assert!(rel(cv2, cov[(i, i)] / (s.mean[i] * s.mean[i])) < 1e-15);
    }
}

#[test]
fn oracle_agrees_with_solver() {
    let opts = SolveOptions::default();
    let grid =
        |end: f64, n: usize| -> Vec<f64> { (0..=n).map(|i| end * i as f64 / n as f64).collect() };
    let m = protein(
        20.0,
        1.0,
        1.0,
        0.5,
        0.2,
        InterEventDistribution::gamma(4.0, 0.25).unwrap(),
    );
    let curve = conditional_mean_ode_oracle(&m, &grid(12.0, 4000), &opts).unwrap();
    let s = stationary_mean(&m, &opts).unwrap();
    assert!(rel(curve.unconditioned_mean[0], s.mean[0]) < 1e-6);

    let m = protein(
        20.0,
        1.0,
        1.0,
        0.5,
        0.2,
        InterEventDistribution::deterministic(1.5).unwrap(),
    );
    let curve = conditional_mean_ode_oracle(&m, &grid(1.5, 200), &opts).unwrap();
    let s = stationary_mean(&m, &opts).unwrap();
    assert!(rel(curve.unconditioned_mean[0], s.mean[0]) < 1e-9);

    let m = two_dim();
    let curve = conditional_mean_ode_oracle(&m, &grid(40.0, 8000), &opts).unwrap();
    let s = stationary_mean(&m, &opts).unwrap();
    for i in 0..2 {
        assert!(rel(curve.unconditioned_mean[i], s.mean[i]) < 1e-6);
    }
}

#[test]
fn oracle_homogeneous_curve() {
    // no forcing, reset to a constant: m(tau) = e^{A tau} c
    let c = 3.0;
    let mut m = protein(
        1.0,
        0.0,
        0.0,
        0.8,
        0.0,
        InterEventDistribution::deterministic(1.0).unwrap(),
    );
    m.general.j = one(0.0);
    m.general.r = v1(c);
    let grid: Vec<f64> = (0..=10).map(|i| 0.1 * i as f64).collect();
    let curve = conditional_mean_ode_oracle(&m, &grid, &SolveOptions::default()).unwrap();
    for (t, x) in grid.iter().zip(&curve.conditional_mean) {
        assert!((x[0] - c * (-0.8 * t).exp()).abs() < 1e-14);
    }
}

#[test]
fn invalid_models_are_rejected() {
    let mut m = two_dim();
    m.general.d = Matrix::from_row_slice(2, 2, &[1.0, 2.0, 0.0, 1.0]);
    assert!(matches!(
        stationary_mean(&m, &SolveOptions::default()),
        Err(SolverError::Invalid(_))
    ));
}

#[test]
fn heavy_tail_with_growth_is_infeasible() {
    let mut m = protein(
        1.0,
        1.0,
        1.0,
        0.0,
        0.0,
        InterEventDistribution::lognormal(0.0, 1.0).unwrap(),
    );
    m.dynamics.a = one(0.2);
    let e = stationary_mean(&m, &SolveOptions::default()).unwrap_err();
    assert!(e.is_infeasible());
}
