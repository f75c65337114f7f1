use super::*;
use crate::linalg::{expm, Matrix, Vector};
use crate::quadrature::{integrate_scalar, uniform_breaks};
use crate::tolerances::Tolerance;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

fn close(a: f64, b: f64, rel: f64) -> bool {
    (a - b).abs() <= rel * b.abs().max(1e-300)
}

fn all_kinds() -> Vec<InterEventDistribution> {
    vec![
        InterEventDistribution::exponential(1.3).unwrap(),
        InterEventDistribution::gamma(2.5, 0.4).unwrap(),
        InterEventDistribution::gamma(0.6, 2.0).unwrap(),
        InterEventDistribution::lognormal(-0.2, 0.5).unwrap(),
        InterEventDistribution::weibull(1.7, 1.1).unwrap(),
        InterEventDistribution::weibull(0.8, 1.1).unwrap(),
        InterEventDistribution::tabulated(
            &(0..=60)
                .map(|i| {
                    let t = 0.05 * i as f64;
                    [t, t * t * (3.0 - t)]
                })
                .collect::<Vec<_>>(),
        )
        .unwrap(),
    ]
}

#[test]
fn hazard_examples() {
    let e = InterEventDistribution::exponential(2.0).unwrap();
    for t in [0.0, 0.3, 7.0] {
        assert_eq!(e.hazard(t).unwrap(), 2.0);
    }
    let g = InterEventDistribution::gamma(2.0, 1.0).unwrap();
    assert!(close(g.hazard(1.0).unwrap(), 0.5, 1e-13));
    let d = InterEventDistribution::deterministic(1.0).unwrap();
    assert_eq!(d.hazard(0.5), Err(DistributionError::PointMass));
    assert!(matches!(
        g.hazard(1e4),
        Err(DistributionError::BeyondSupport { .. })
    ));
}

#[test]
fn timer_pdf_examples() {
    let e = InterEventDistribution::exponential(1.5).unwrap();
    assert!(close(e.timer_pdf(0.7), 1.5 * (-1.05f64).exp(), 1e-14));
    let d = InterEventDistribution::deterministic(2.0).unwrap();
    assert_eq!(d.timer_pdf(1.0), 0.5);
    assert_eq!(d.timer_pdf(2.5), 0.0);
    let g = InterEventDistribution::gamma(2.0, 1.0).unwrap();
    assert_eq!(g.timer_pdf(0.0), 0.5);
}

#[test]
fn moments_in_closed_form() {
    let e = InterEventDistribution::exponential(2.0).unwrap();
    assert!(close(e.raw_moment(1).unwrap(), 0.5, 1e-15));
    assert!(close(e.raw_moment(2).unwrap(), 0.5, 1e-14));
    assert!(close(e.raw_moment(3).unwrap(), 0.75, 1e-14));
    let d = InterEventDistribution::deterministic(3.0).unwrap();
    assert_eq!(d.raw_moment(3).unwrap(), 27.0);
    assert!(d.raw_moment(4).is_err());
    for law in all_kinds() {
        for k in 1..=3 {
            let q = expect_over_t(&law, |t| t.powi(k), Tolerance::new(0.0, 1e-12)).unwrap();
            assert!(
                close(q.value, law.raw_moment(k as u32).unwrap(), 1e-9),
                "{} order {k}: {} vs {}",
                law.kind(),
                q.value,
                law.raw_moment(k as u32).unwrap()
            );
        }
    }
}

#[test]
fn densities_and_timer_densities_normalize() {
    for law in all_kinds() {
        let one = expect_over_t(&law, |_| 1.0, Tolerance::new(0.0, 1e-12)).unwrap();
        assert!((one.value - 1.0).abs() < 1e-8, "{}", law.kind());
        let one = expect_over_tau(&law, |_| 1.0, Tolerance::new(0.0, 1e-12)).unwrap();
        assert!((one.value - 1.0).abs() < 1e-8, "{}", law.kind());
    }
    let d = InterEventDistribution::deterministic(1.7).unwrap();
    let one = expect_over_tau(&d, |_| 1.0, Tolerance::default()).unwrap();
    assert!((one.value - 1.0).abs() < 1e-12);
}

#[test]
fn density_is_rebuilt_from_hazard() {
    for law in all_kinds() {
        if matches!(law, InterEventDistribution::Tabulated(_)) {
            continue;
        }
        for t in [0.2, 0.9, 1.6] {
            let (cum, _) = integrate_scalar(
                |s| law.hazard(s).unwrap(),
                &uniform_breaks(0.0, t, 8),
                Tolerance::new(0.0, 1e-13),
            )
            .unwrap();
            let rebuilt = law.hazard(t).unwrap() * (-cum).exp();
            assert!(close(rebuilt, law.pdf(t).unwrap(), 1e-8), "{}", law.kind());
        }
    }
}

#[test]
fn laplace_transforms() {
    let gamma = 0.7;
    let e = InterEventDistribution::exponential(2.0).unwrap();
    let r = expect_over_t(&e, |t| (-gamma * t).exp(), Tolerance::default()).unwrap();
    assert!(close(r.value, 2.0 / 2.7, 1e-10));
    let g = InterEventDistribution::gamma(3.5, 0.3).unwrap();
    let r = expect_over_t(&g, |t| (-gamma * t).exp(), Tolerance::default()).unwrap();
    assert!(close(r.value, (1.0 + gamma * 0.3f64).powf(-3.5), 1e-10));
    let d = InterEventDistribution::deterministic(1.3).unwrap();
    let r = expect_over_t(&d, |t| t * t, Tolerance::default()).unwrap();
    assert_eq!(r.value, 1.3 * 1.3);
}

#[test]
fn timer_laplace_identities() {
    let gamma = 0.9;
    for law in all_kinds() {
        let tol = Tolerance::new(0.0, 1e-12);
        let lt = |s: f64| expect_over_t(&law, |t| (-s * t).exp(), tol).unwrap().value;
        let mean = law.mean();
        let direct = expect_over_tau(&law, |t| (-gamma * t).exp(), tol).unwrap();
        assert!(close(
            direct.value,
            (1.0 - lt(gamma)) / (gamma * mean),
            1e-9
        ));
        let twice = expect_over_tau(&law, |t| (-2.0 * gamma * t).exp(), tol).unwrap();
        assert!(close(
            twice.value,
            (1.0 - lt(2.0 * gamma)) / (2.0 * gamma * mean),
            1e-9
        ));
        let cum =
            expect_over_tau_cumulative(&law, |t| -(-gamma * t).exp_m1() / gamma, tol).unwrap();
        assert!(close(cum.value, direct.value, 1e-9));
    }
}

#[test]
fn matrix_expectations_examples() {
    let g = InterEventDistribution::gamma(3.0, 0.5).unwrap();
    let zero = Matrix::zeros(2, 2);
    let r = expect_matrix_exp_t(&g, &zero, Tolerance::default()).unwrap();
    assert!((r.value - Matrix::identity(2, 2)).amax() < 1e-14);
    let r = expect_matrix_exp_tau(&g, &zero, Tolerance::default()).unwrap();
    assert!((r.value - Matrix::identity(2, 2)).amax() < 1e-14);

    let m = Matrix::from_element(1, 1, -0.8);
    let r = expect_matrix_exp_t(&g, &m, Tolerance::default()).unwrap();
    assert!(close(r.value[(0, 0)], (1.0 + 0.8 * 0.5f64).powi(-3), 1e-13));

    let d = InterEventDistribution::deterministic(1.2).unwrap();
    let lt = Matrix::from_row_slice(2, 2, &[-1.0, 0.0, 0.5, -2.0]);
    let r = expect_matrix_exp_t(&d, &lt, Tolerance::default()).unwrap();
    assert!((r.value - expm(&(&lt * 1.2)).unwrap()).amax() < 1e-15);
}

#[test]
fn scalar_timer_matrix_identity() {
    let gamma = 1.3;
    let m = Matrix::from_element(1, 1, -gamma);
    for law in all_kinds() {
        let tol = Tolerance::new(0.0, 1e-12);
        let lt = expect_over_t(&law, |t| (-gamma * t).exp(), tol)
            .unwrap()
            .value;
        let expected = (1.0 - lt) / (gamma * law.mean());
        for r in [
            expect_matrix_exp_tau(&law, &m, tol).unwrap(),
            expect_matrix_exp_tau_integral(&law, &m, tol).unwrap(),
            expect_matrix_exp_tau_resolvent(&law, &m, tol).unwrap(),
        ] {
            assert!(close(r.value[(0, 0)], expected, 1e-9), "{}", law.kind());
        }
    }
}

#[test]
fn gamma_fast_path_matches_quadrature() {
    let m = Matrix::from_row_slice(3, 3, &[-1.0, 0.4, 0.0, -0.3, -0.7, 0.2, 0.1, 0.0, -1.5]);
    let fast = InterEventDistribution::gamma(4.0, 0.3).unwrap();
    let slow = InterEventDistribution::gamma(4.0 + 1e-9, 0.3).unwrap();
    let tol = Tolerance::new(0.0, 1e-12);
    let a = expect_matrix_exp_t(&fast, &m, tol).unwrap();
    let b = expect_matrix_exp_t(&slow, &m, tol).unwrap();
    assert!((&a.value - &b.value).amax() < 1e-8);
    let a = expect_matrix_exp_tau_resolvent(&fast, &m, tol).unwrap();
    let b = expect_matrix_exp_tau_integral(&slow, &m, tol).unwrap();
    assert!((&a.value - &b.value).amax() < 1e-8);
}

#[test]
fn exponential_timer_equals_inter_event_average() {
    let m = Matrix::from_row_slice(2, 2, &[-0.5, 1.0, -0.2, -1.1]);
    let e = InterEventDistribution::exponential(0.8).unwrap();
    let t = expect_matrix_exp_t(&e, &m, Tolerance::default()).unwrap();
    let tau = expect_matrix_exp_tau(&e, &m, Tolerance::default()).unwrap();
    assert!((&t.value - &tau.value).amax() < 1e-10);
}

#[test]
fn singular_generator_uses_integral_route() {
    let m = Matrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]);
    let d = InterEventDistribution::gamma(2.0, 0.5).unwrap();
    let r = expect_matrix_exp_tau(&d, &m, Tolerance::default()).unwrap();
    // E[tau] = E[T^2] / (2 E[T])
    let e_tau = d.raw_moment(2).unwrap() / (2.0 * d.mean());
    let expected = Matrix::from_row_slice(2, 2, &[1.0, e_tau, 0.0, 1.0]);
    assert!((r.value - expected).amax() < 1e-12);
}

#[test]
fn divergence_is_reported() {
    let m = Matrix::from_element(1, 1, 0.5);
    let e = InterEventDistribution::exponential(0.4).unwrap();
    assert!(matches!(
        expect_matrix_exp_t(&e, &m, Tolerance::default()),
        Err(DistributionError::Divergent(_))
    ));
    let ln = InterEventDistribution::lognormal(0.0, 0.5).unwrap();
    assert!(matches!(
        expect_matrix_exp_t(&ln, &m, Tolerance::default()),
        Err(DistributionError::Divergent(_))
    ));
    // growth below the decay rate is fine
    let e = InterEventDistribution::exponential(2.0).unwrap();
    let r = expect_matrix_exp_t(&e, &m, Tolerance::default()).unwrap();
    assert!(close(r.value[(0, 0)], 2.0 / 1.5, 1e-12));
}

#[test]
fn renewal_averages_agree_across_routes() {
    let a = Matrix::from_row_slice(2, 2, &[-0.9, 0.3, 0.2, -1.4]);
    let forcing = Vector::from_vec(vec![1.0, -0.5]);
    let tol = Tolerance::new(0.0, 1e-12);
    let fast = InterEventDistribution::gamma(3.0, 0.4).unwrap();
    let slow = InterEventDistribution::gamma(3.0 * (1.0 + 1e-10), 0.4).unwrap();
    let x = renewal_averages(&fast, &a, &forcing, tol).unwrap();
    let y = renewal_averages(&slow, &a, &forcing, tol).unwrap();
    assert!((&x.exp_t - &y.exp_t).amax() < 1e-8);
    assert!((&x.exp_tau - &y.exp_tau).amax() < 1e-8);
    assert!((&x.phi_t - &y.phi_t).amax() < 1e-8);
    assert!((&x.phi_tau - &y.phi_tau).amax() < 1e-8);
    let tau = expect_matrix_exp_tau_resolvent(&fast, &a, tol).unwrap();
    assert!((&x.exp_tau - &tau.value).amax() < 1e-10);
    // Phi(t) = A^{-1}(e^{At} - I) a
    let lu = a.clone().lu();
    let phi = lu
        .solve(&((&x.exp_t - Matrix::identity(2, 2)) * &forcing))
        .unwrap();
    assert!((&x.phi_t - phi).amax() < 1e-12);
    let phi_tau = lu
        .solve(&((&x.exp_tau - Matrix::identity(2, 2)) * &forcing))
        .unwrap();
    assert!((&x.phi_tau - phi_tau).amax() < 1e-12);
}

#[test]
fn quantiles_invert_survival() {
    for law in all_kinds() {
        let q = law.upper_quantile(1e-6);
        assert!(close(law.survival(q), 1e-6, 1e-6), "{}", law.kind());
        let q = law.lower_quantile(1e-3);
        assert!(close(law.cdf(q), 1e-3, 1e-6), "{}", law.kind());
    }
}

#[test]
fn sampling_matches_moments() {
    let mut rng = ChaCha20Rng::seed_from_u64(11);
    let n = 200_000;
    let e = InterEventDistribution::exponential(2.0).unwrap();
    let xs: Vec<f64> = (0..n).map(|_| e.sample(&mut rng)).collect();
    let mean = xs.iter().sum::<f64>() / n as f64;
    let se = 0.5 / (n as f64).sqrt();
    assert!((mean - 0.5).abs() < 4.0 * se);

    let g = InterEventDistribution::gamma(4.0, 0.25).unwrap();
    let s = g.sampler();
    let xs: Vec<f64> = (0..n).map(|_| s.sample(&mut rng)).collect();
    let m1 = xs.iter().sum::<f64>() / n as f64;
    let m2 = xs.iter().map(|x| x * x).sum::<f64>() / n as f64;
    let cv2 = m2 / (m1 * m1) - 1.0;
    // delta-method standard error of the sample CV^2 for gamma(4): about 0.43/sqrt(n)
    assert!((cv2 - 0.25).abs() < 4.0 * 0.5 / (n as f64).sqrt());

    let d = InterEventDistribution::deterministic(0.3).unwrap();
    assert_eq!(d.sample(&mut rng), 0.3);
}

#[test]
fn length_biased_samplers_have_the_right_mean() {
    // E[T] under t f(t)/E[T] is E[T^2]/E[T]
    let mut rng = ChaCha20Rng::seed_from_u64(5);
    let n = 100_000;
    for law in all_kinds() {
        let s = law.length_biased_sampler();
        let xs: Vec<f64> = (0..n).map(|_| s.sample(&mut rng)).collect();
        let m = xs.iter().sum::<f64>() / n as f64;
        let v = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1) as f64;
        let expected = law.raw_moment(2).unwrap() / law.mean();
        assert!(
            (m - expected).abs() < 4.5 * (v / n as f64).sqrt(),
            "{}: {m} vs {expected}",
            law.kind()
        );
    }
}

#[test]
fn json_round_trip_and_strictness() {
    let g: InterEventDistribution =
        serde_json::from_str(r#"{"type": "gamma", "shape": 8.0, "scale": 0.25}"#).unwrap();
    assert_eq!(g, InterEventDistribution::gamma(8.0, 0.25).unwrap());
    let tab: InterEventDistribution =
        serde_json::from_str(r#"{"type": "tabulated", "points": [[0, 1], [1, 1]]}"#).unwrap();
    let back: InterEventDistribution =
        serde_json::from_str(&serde_json::to_string(&tab).unwrap()).unwrap();
    assert_eq!(tab, back);
    assert!(serde_json::from_str::<InterEventDistribution>(
        r#"{"type": "gamma", "shape": 8.0, "scael": 0.25}"#
    )
    .is_err());
    assert!(serde_json::from_str::<InterEventDistribution>(
        r#"{"type": "exponential", "rate": -1}"#
    )
    .is_err());
}

#[test]
fn gamma_with_mean_cv2() {
    let g = InterEventDistribution::gamma_with_mean_cv2(2.0, 0.25).unwrap();
    assert!(close(g.mean(), 2.0, 1e-15));
    assert!(close(g.cv2(), 0.25, 1e-15));
    assert!(InterEventDistribution::gamma_with_mean_cv2(2.0, 0.0)
        .unwrap()
        .is_point_mass());
}
