use super::*;
use crate::geom::Cube;
use crate::measures::spec::DensitySpec;
use crate::measures::{DensityFn, GaussianKernel};
use crate::parametrix::QuadMode;
use approx::assert_relative_eq;

fn zero_cfg(dim: usize, step: f64, horizon: f64, paths: usize, seed: u64) -> SdeConfig {
    SdeConfig::new(DriftMeasure::zero(dim), step, horizon, paths, seed)
}

fn constant_drift(dim: usize, c: &[f64]) -> DriftMeasure {
    let comps: Vec<SignedMeasure> = c
        .iter()
        .map(|&ci| {
            SignedMeasure::density(DensityFn::new(dim, move |_| ci, None, Some(ci.abs())))
        })
        .collect();
    DriftMeasure::new(comps).unwrap()
}

fn bump_measure(dim: usize, amplitude: f64, width: f64) -> SignedMeasure {
    SignedMeasure::density(
        DensityFn::from_spec(
            dim,
            &DensitySpec::GaussianBump {
                amplitude,
                width,
                center: vec![0.0; dim],
            },
        )
        .unwrap(),
    )
}

#[test]
fn brownian_mean_square_displacement() {
    // E|X_T - x|^2 = d T for zero drift.
    let cfg = zero_cfg(3, 0.01, 0.5, 4000, 7);
    let ens = simulate_paths(&cfg, &[0.2, -0.1, 0.0]).unwrap();
    let j = ens.times.len() - 1;
    let samples: Vec<f64> = (0..ens.kept_paths)
        .map(|p| dist2(ens.state(p, j), &ens.x0))
        .collect();
    let r = EstimatorResult::from_samples(&samples);
    assert!(
        (r.mean - 1.5).abs() <= 3.0 * r.stderr,
        "E|X_T-x|^2 = {} +- {} vs 1.5",
        r.mean,
        r.stderr
    );
}

#[test]
fn constant_drift_translates_the_mean() {
    let c = [0.8, -0.5, 0.3];
    let cfg = SdeConfig::new(constant_drift(3, &c), 0.01, 0.5, 4000, 21);
    let x0 = [0.0, 0.0, 0.0];
    let ens = simulate_paths(&cfg, &x0).unwrap();
    let j = ens.times.len() - 1;
    for i in 0..3 {
        let samples: Vec<f64> = (0..ens.kept_paths).map(|p| ens.state(p, j)[i]).collect();
        let r = EstimatorResult::from_samples(&samples);
        let expect = x0[i] + c[i] * 0.5;
        assert!(
            (r.mean - expect).abs() <= 3.5 * r.stderr,
            "coordinate {i}: {} +- {} vs {expect}",
            r.mean,
            r.stderr
        );
    }
}

#[test]
fn bookkeeping_identity_is_exact() {
    let cfg = SdeConfig::new(
        DriftMeasure::new(vec![
            bump_measure(2, 1.0, 0.7),
            bump_measure(2, -0.5, 1.2),
        ])
        .unwrap(),
        0.01,
        0.3,
        50,
        3,
    );
    let x0 = [0.1, -0.2];
    let ens = simulate_paths(&cfg, &x0).unwrap();
    for p in 0..ens.kept_paths {
        for j in 0..ens.times.len() {
            let x = ens.state(p, j);
            let w = ens.brownian_at(p, j);
            let a = ens.drift_at(p, j);
            for i in 0..2 {
                // The state is defined as x0 + W + A: equality is bitwise.
                assert_eq!(x[i], x0[i] + w[i] + a[i]);
            }
        }
    }
}

#[test]
fn identical_seeds_reproduce_bitwise() {
    let cfg = SdeConfig::new(
        DriftMeasure::new(vec![bump_measure(1, 0.8, 0.9)]).unwrap(),
        0.02,
        0.4,
        64,
        99,
    );
    let a = simulate_paths(&cfg, &[0.0]).unwrap();
    let b = simulate_paths(&cfg, &[0.0]).unwrap();
    assert_eq!(a.states, b.states);
    assert_eq!(a.brownian, b.brownian);
    let mut other = cfg.clone();
    other.seed = 100;
    let c = simulate_paths(&other, &[0.0]).unwrap();
    assert_ne!(a.states, c.states);
}

#[test]
fn step_safeguard_enforced_for_mollified_drift() {
    let mu = DriftMeasure::new(vec![bump_measure(1, 1.0, 1.0)]).unwrap();
    let cfg = SdeConfig::new(mu, 0.1, 0.5, 10, 1).with_eval(DriftEval::Mollified { level: 2 });
    // 2^{-2*2} = 1/16 < 0.1: must be rejected.
    assert!(cfg.validate().is_err());
    let mut ok = cfg.clone();
    ok.step = 0.05;
    assert!(ok.validate().is_ok());
}

// ---------------------------------------------------------------------------
// Moment and Laplace estimators
// ---------------------------------------------------------------------------

/// Semi-analytic oracle for the second moment of the bump functional under
/// drift-free dynamics: the spatial integrals of the two-kernel chain are
/// Gaussian closed forms, leaving a 2-d time quadrature.
fn second_moment_oracle_gaussian_chain(bump_amp: f64, w: f64, x: &[f64], t: f64) -> f64 {
    let d = x.len() as f64;
    let x2 = crate::geom::dist2(x, &vec![0.0; x.len()]);
    // g(s1, delta) = B^2 (w^2/(w^2+delta))^{d/2} (sig2/(sig2+s1))^{d/2}
    //                exp(-x^2 / (2 (sig2 + s1))),
    // with 1/sig2 = 1/w^2 + 1/(w^2+delta).
    let g = |s1: f64, delta: f64| -> f64 {
        let wd = w * w + delta;
        let sig2 = 1.0 / (1.0 / (w * w) + 1.0 / wd);
        bump_amp
            * bump_amp
            * (w * w / wd).powf(d / 2.0)
            * (sig2 / (sig2 + s1)).powf(d / 2.0)
            * (-x2 / (2.0 * (sig2 + s1))).exp()
    };
    // M2 = 2 int_0^t int_0^{t-s1} g(s1, delta) ddelta ds1
    2.0 * crate::quad::integrate_gl(0.0, t, 48, |s1| {
        crate::quad::integrate_gl(0.0, t - s1, 48, |delta| g(s1, delta))
    })
}

#[test]
fn moment_power_zero_is_one_and_large_powers_rejected() {
    let cfg = zero_cfg(3, 0.02, 0.1, 50, 5);
    let functional = bump_measure(3, 1.0, 0.75);
    let kernel = GaussianKernel { dim: 3 };
    let r = estimate_moment(&cfg, &[0.0; 3], &functional, 0, 0.1, &kernel).unwrap();
    assert_eq!(r.estimate.mean, 1.0);
    assert!(estimate_moment(&cfg, &[0.0; 3], &functional, 7, 0.1, &kernel).is_err());
}

#[test]
fn first_moment_below_lambda_bound() {
    // Drift-free dynamics, bump functional: the mean of the additive
    // functional stays below sqrt(t) Lambda_t(f).
    let cfg = zero_cfg(3, 0.005, 0.2, 20_000, 11);
    let functional = bump_measure(3, 1.0, 0.75);
    let kernel = GaussianKernel { dim: 3 };
    let r = estimate_moment(&cfg, &[0.0; 3], &functional, 1, 0.2, &kernel).unwrap();
    assert!(
        r.estimate.mean <= r.bound + 3.0 * r.estimate.stderr,
        "mean {} vs bound {}",
        r.estimate.mean,
        r.bound
    );
    // The bound is within an order of magnitude (not vacuous).
    assert!(r.bound < 10.0 * r.estimate.mean.max(1e-6));
}

#[test]
fn second_moment_matches_nested_quadrature_oracle() {
    let amp = 1.0;
    let w = 0.75;
    let t = 0.2;
    let cfg = zero_cfg(3, 0.002, t, 30_000, 13);
    let functional = bump_measure(3, amp, w);
    let kernel = GaussianKernel { dim: 3 };
    let x0 = [0.0; 3];
    let r = estimate_moment(&cfg, &x0, &functional, 2, t, &kernel).unwrap();
    let oracle = second_moment_oracle_gaussian_chain(amp, w, &x0, t);
    assert!(
        (r.estimate.mean - oracle).abs() <= 3.0 * r.estimate.stderr + 2e-3 * oracle,
        "MC {} +- {} vs oracle {}",
        r.estimate.mean,
        r.estimate.stderr,
        oracle
    );
}

#[test]
fn moment_bound_suite_holds() {
    let t_grid = [0.1, 0.2];
    let cfg = zero_cfg(3, 0.005, 0.2, 8_000, 17);
    let functional = bump_measure(3, 1.0, 0.75);
    let kernel = GaussianKernel { dim: 3 };
    for n in 1..=4 {
        for &t in &t_grid {
            let r = estimate_moment(&cfg, &[0.0; 3], &functional, n, t, &kernel).unwrap();
            assert!(
                r.estimate.mean <= r.bound + 3.0 * r.estimate.stderr,
                "n={n}, t={t}: mean {} bound {}",
                r.estimate.mean,
                r.bound
            );
        }
    }
}

#[test]
fn laplace_of_constant_functional_is_exact() {
    // Constant functional beta with drift-free dynamics: the Riemann sum is
    // exactly beta * t on the grid, so the estimate is e^{lambda beta t}.
    let beta = 0.7;
    let cfg = zero_cfg(1, 0.01, 0.1, 200, 23);
    let functional =
        SignedMeasure::density(DensityFn::new(1, move |_| beta, None, Some(beta)));
    let kernel = GaussianKernel { dim: 1 };
    let r = estimate_laplace(&cfg, &[0.0], &functional, 1.3, 0.1, &kernel).unwrap();
    assert_relative_eq!(r.estimate.mean, (1.3 * beta * 0.1).exp(), epsilon = 1e-12);
    assert!(r.estimate.mean <= r.bound_product_form);
    assert!(r.bound_product_form <= r.bound_exponential_form * (1.0 + 1e-12));
}

#[test]
fn laplace_bound_suite_and_series_cross_check() {
    let t = 0.1;
    let cfg = zero_cfg(3, 0.005, t, 8_000, 29);
    let functional = bump_measure(3, 1.0, 0.75);
    let kernel = GaussianKernel { dim: 3 };
    let lambda = 0.8;
    let lap = estimate_laplace(&cfg, &[0.0; 3], &functional, lambda, t, &kernel).unwrap();
    assert!(
        lap.estimate.mean <= lap.bound_exponential_form + 3.0 * lap.estimate.stderr,
        "Laplace {} vs bound {}",
        lap.estimate.mean,
        lap.bound_exponential_form
    );
    // Truncated exponential series from the moment estimates.
    let mut series = 0.0;
    let mut series_err = 0.0;
    let mut fact = 1.0;
    for n in 0..=4 {
        if n > 0 {
            fact *= n as f64;
        }
        let m = estimate_moment(&cfg, &[0.0; 3], &functional, n, t, &kernel).unwrap();
        series += lambda.powi(n as i32) / fact * m.estimate.mean;
        series_err += lambda.powi(n as i32) / fact * m.estimate.stderr;
    }
    let combined = 3.0 * (lap.estimate.stderr + series_err) + 1e-5;
    assert!(
        (lap.estimate.mean - series).abs() <= combined,
        "Laplace {} vs truncated series {} (slack {combined})",
        lap.estimate.mean,
        series
    );
}

#[test]
fn laplace_overflow_guard_triggers() {
    let cfg = zero_cfg(1, 0.01, 1.0, 10, 1);
    let functional =
        SignedMeasure::density(DensityFn::new(1, |_| 300.0, None, Some(300.0)));
    let kernel = GaussianKernel { dim: 1 };
    let err = estimate_laplace(&cfg, &[0.0], &functional, 2.0, 1.0, &kernel).unwrap_err();
    assert!(matches!(err, Error::OverflowGuard(_)));
}

// ---------------------------------------------------------------------------
// Tails and balls
// ---------------------------------------------------------------------------

#[test]
fn sup_tail_respects_pathwise_bound() {
    // delta above eps * sup|b|: exact zero, no simulation noise.
    let mu = DriftMeasure::new(vec![bump_measure(1, 2.0, 1.0)]).unwrap();
    let cfg = SdeConfig::new(mu, 0.001, 1.0, 100, 3);
    let r = sup_a_tail(&cfg, &[0.0], 0.5, 0.1).unwrap();
    assert!(r.deterministic_zero);
    assert_eq!(r.estimate.mean, 0.0);
    assert_eq!(r.estimate.upper(), 0.0);
}

#[test]
fn sup_tail_monotone_in_eps() {
    let mu = DriftMeasure::new(vec![bump_measure(1, 4.0, 1.0)]).unwrap();
    let cfg = SdeConfig::new(mu, 0.002, 1.0, 20_000, 31);
    let mut prev_hi = f64::INFINITY;
    let mut prev_lo = f64::INFINITY;
    for eps in [0.2, 0.1, 0.05] {
        let r = sup_a_tail(&cfg, &[0.0], 0.25, eps).unwrap();
        // Monotone event family: allow CI slack.
        assert!(
            r.estimate.lower() <= prev_hi,
            "tail not nonincreasing within CI at eps={eps}"
        );
        prev_hi = r.estimate.upper();
        prev_lo = prev_lo.min(r.estimate.lower());
    }
}

#[test]
fn ball_probability_matches_gaussian_oracle() {
    // Drift-free: P(|W_r + x - y| < eps) against the 1-d radial reduction of
    // the Gaussian ball integral in d = 3:
    //   P = int_0^eps rho/(c sqrt(2 pi r)) [e^{-(rho-c)^2/2r} - e^{-(rho+c)^2/2r}] drho,
    // with c = |x - y| (noncentral radial density).
    let cfg = zero_cfg(3, 0.01, 0.2, 40_000, 37);
    let x0 = [0.0; 3];
    let env = EnvelopeConstants::default();
    for (y, eps, r) in [
        (vec![0.3, 0.0, 0.0], 0.4, 0.1),
        (vec![0.0, 0.5, 0.0], 0.3, 0.2),
        (vec![0.2, 0.2, 0.1], 0.5, 0.05),
    ] {
        let rep = ball_probability(&cfg, &x0, &y, eps, r, &env).unwrap();
        let c = dist2(&x0, &y).sqrt();
        let oracle = crate::quad::integrate_gl(0.0, eps, 200, |rho| {
            rho / (c * (2.0 * PI * r).sqrt())
                * ((-(rho - c) * (rho - c) / (2.0 * r)).exp()
                    - (-(rho + c) * (rho + c) / (2.0 * r)).exp())
        });
        assert!(
            (rep.estimate.mean - oracle).abs() <= 3.0 * rep.estimate.stderr + 5e-4,
            "ball estimate {} +- {} vs oracle {oracle}",
            rep.estimate.mean,
            rep.estimate.stderr
        );
        // Drift-free: the subtracted tail term vanishes and the lower bound
        // must actually sit below the estimate.
        assert_eq!(rep.tail_term, 0.0);
        assert!(rep.lower_bound <= rep.estimate.mean + 3.0 * rep.estimate.stderr);
    }
}

#[test]
fn ball_probability_approaches_one_for_shrinking_time() {
    let cfg = zero_cfg(3, 0.001, 0.1, 4000, 41);
    let x0 = [0.1, 0.2, 0.3];
    let env = EnvelopeConstants::default();
    let mut prev = 0.0;
    for r in [0.1, 0.02, 0.004] {
        let rep = ball_probability(&cfg, &x0, &x0, 0.25, r, &env).unwrap();
        assert!(
            rep.estimate.mean >= prev - 0.02,
            "ball probability should increase as r decreases"
        );
        prev = rep.estimate.mean;
    }
    assert!(prev > 0.99);
}

// ---------------------------------------------------------------------------
// KDE
// ---------------------------------------------------------------------------

#[test]
fn kde_matches_exact_gaussian_for_zero_drift() {
    let t = 0.25;
    let cfg = zero_cfg(2, 0.01, t, 60_000, 43);
    let x0 = [0.0, 0.0];
    let ens = simulate_paths(&cfg, &x0).unwrap();
    for y in [[0.0, 0.0], [0.3, -0.2]] {
        let kde = kde_density(&ens, t, &y, None).unwrap();
        let exact = crate::kernels::gaussian_p(t, &x0, &y).unwrap();
        // Tolerance: 3 stderr plus an O(h^2) smoothing-bias budget.
        let bias = exact * kde.bandwidth * kde.bandwidth / t;
        assert!(
            (kde.estimate.mean - exact).abs() <= 3.0 * kde.estimate.stderr + 2.0 * bias,
            "kde {} +- {} vs exact {exact} (bias budget {bias})",
            kde.estimate.mean,
            kde.estimate.stderr
        );
        assert!(!kde.flagged_few_samples);
    }
}

#[test]
fn kde_matches_translated_gaussian_for_constant_drift() {
    let t = 0.25;
    let c = [0.8, 0.0];
    let cfg = SdeConfig::new(constant_drift(2, &c), 0.005, t, 60_000, 47);
    let x0 = [0.0, 0.0];
    let ens = simulate_paths(&cfg, &x0).unwrap();
    let y = [0.25, 0.1];
    let kde = kde_density(&ens, t, &y, None).unwrap();
    let shifted = [x0[0] + c[0] * t, x0[1] + c[1] * t];
    let exact = crate::kernels::gaussian_p(t, &shifted, &y).unwrap();
    let bias = exact * kde.bandwidth * kde.bandwidth / t;
    assert!(
        (kde.estimate.mean - exact).abs() <= 3.0 * kde.estimate.stderr + 2.0 * bias,
        "kde {} vs translated Gaussian {exact}",
        kde.estimate.mean
    );
}

#[test]
fn kde_cross_checks_the_series_for_smooth_drift() {
    // d = 1 bump drift: smoothed empirical density against the series.
    let t = 0.25;
    let mu = DriftMeasure::new(vec![bump_measure(1, 0.8, 1.0)]).unwrap();
    let cfg = SdeConfig::new(mu.clone(), 0.005, t, 60_000, 53);
    let x0 = [0.0];
    let ens = simulate_paths(&cfg, &x0).unwrap();
    let drift = DriftField::from_densities(&mu).unwrap();
    let series = SeriesConfig::new(drift, 0.3, 4, QuadMode::deterministic(24, 16)).unwrap();
    for y in [[0.2], [0.6]] {
        let kde = kde_density(&ens, t, &y, None).unwrap();
        let q = heat_kernel(t, &x0, &y, &series, 1e-4).unwrap();
        let bias = q.value * kde.bandwidth * kde.bandwidth / t;
        assert!(
            (kde.estimate.mean - q.value).abs()
                <= 3.0 * kde.estimate.stderr + 2.0 * bias + q.quad_error,
            "kde {} vs series {} at y={:?}",
            kde.estimate.mean,
            q.value,
            y
        );
    }
}

// ---------------------------------------------------------------------------
// Chain rule
// ---------------------------------------------------------------------------

#[test]
fn chapman_product_is_a_lower_bound_for_zero_drift() {
    let cfg = zero_cfg(1, 0.005, 0.25, 30_000, 59);
    let series = SeriesConfig::new(DriftField::zero(1), 0.3, 2, QuadMode::deterministic(8, 4))
        .unwrap();
    let rep = chapman_lower_bound(0.25, 0.5, 0.3, &[0.0], &[0.4], &cfg, &series, 1e-6).unwrap();
    assert!(rep.consistent, "{rep:?}");
    assert!(rep.product_lower_bound > 0.0);
    // Closed-form sanity: inf over the ball of p(eta t, z, y) at distance eps.
    let p_edge = crate::kernels::gaussian_p(0.125, &[0.3 - 0.0], &[0.0]).unwrap();
    assert!(rep.inf_kernel <= p_edge * 1.0001);
}

#[test]
fn chapman_product_vanishes_with_the_ball() {
    let cfg = zero_cfg(1, 0.005, 0.25, 5_000, 61);
    let series =
        SeriesConfig::new(DriftField::zero(1), 0.3, 2, QuadMode::deterministic(8, 4)).unwrap();
    let wide = chapman_lower_bound(0.25, 0.5, 0.4, &[0.0], &[0.3], &cfg, &series, 1e-6).unwrap();
    let tiny = chapman_lower_bound(0.25, 0.5, 0.02, &[0.0], &[0.3], &cfg, &series, 1e-6).unwrap();
    assert!(tiny.product_lower_bound < wide.product_lower_bound);
    assert!(tiny.consistent);
}

// ---------------------------------------------------------------------------
// Mollification coupling
// ---------------------------------------------------------------------------

#[test]
fn coupled_cantor_levels_contract() {
    // Successive mollification levels of the Cantor-product drift, coupled
    // on shared Brownian increments: the median sup gap decreases in n.
    let region = Cube::new(vec![-1.0, 0.0], vec![1.0, 1.0]).unwrap();
    let cantor = SignedMeasure::cantor_product(2, 1, 0.5, region).unwrap();
    let mu = DriftMeasure::new(vec![cantor.clone(), cantor]).unwrap();
    let mut cfg = SdeConfig::new(mu, 0.25 * 0.25 * 0.25, 0.25, 48, 67);
    cfg.measure_quad.space_nodes = 8;
    cfg.measure_quad.cantor_divisor = 8.0;
    let x0 = [0.0, 0.3];
    let g1 = coupled_level_gap(&cfg, &x0, 1).unwrap();
    let g2 = coupled_level_gap(&cfg, &x0, 2).unwrap();
    assert!(
        g2.median_gap() < g1.median_gap(),
        "coupled gaps should shrink: {} -> {}",
        g1.median_gap(),
        g2.median_gap()
    );
    // Monitored integrals stay finite and comparable across levels.
    assert!(g2.integral_quantile(0.9).is_finite());
}

#[test]
fn halving_the_step_keeps_smooth_statistics_within_ci() {
    // Weak-order sanity: half step vs base step moves the mean by less than
    // the statistical resolution.
    let mu = DriftMeasure::new(vec![bump_measure(1, 1.0, 1.0)]).unwrap();
    let coarse = SdeConfig::new(mu.clone(), 0.02, 0.5, 20_000, 71);
    let fine = SdeConfig::new(mu, 0.01, 0.5, 20_000, 73);
    let ens_c = simulate_paths(&coarse, &[0.0]).unwrap();
    let ens_f = simulate_paths(&fine, &[0.0]).unwrap();
    let jc = ens_c.times.len() - 1;
    let jf = ens_f.times.len() - 1;
    let mc: Vec<f64> = (0..ens_c.kept_paths).map(|p| ens_c.state(p, jc)[0]).collect();
    let mf: Vec<f64> = (0..ens_f.kept_paths).map(|p| ens_f.state(p, jf)[0]).collect();
    let rc = EstimatorResult::from_samples(&mc);
    let rf = EstimatorResult::from_samples(&mf);
    assert!(
        (rc.mean - rf.mean).abs() <= 3.0 * (rc.stderr + rf.stderr),
        "step halving moved the mean beyond CI: {} vs {}",
        rc.mean,
        rf.mean
    );
}
