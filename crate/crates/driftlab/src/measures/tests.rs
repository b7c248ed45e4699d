use super::spec::*;
use super::*;
use crate::geom::SupGrid;
use approx::assert_relative_eq;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn quick_quad() -> MeasureQuad {
    MeasureQuad {
        space_nodes: 16,
        time_nodes: 24,
        cantor_divisor: 8.0,
        sup_per_axis: 3,
        residual_rtol: 5e-3,
    }
}

fn lebesgue(dim: usize) -> SignedMeasure {
    SignedMeasure::density(DensityFn::new(dim, |_| 1.0, None, Some(1.0)))
}

fn gaussian_bump_measure(dim: usize, amplitude: f64, width: f64) -> SignedMeasure {
    SignedMeasure::from_spec(
        dim,
        &MeasureSpec::Density {
            profile: DensitySpec::GaussianBump {
                amplitude,
                width,
                center: vec![0.0; dim],
            },
            support: None,
        },
    )
    .unwrap()
}

fn cantor_measure_d3() -> SignedMeasure {
    SignedMeasure::cantor_product(
        3,
        2,
        1.0,
        Cube::new(vec![-1.0, -1.0, 0.0], vec![1.0, 1.0, 1.0]).unwrap(),
    )
    .unwrap()
}

// -------------------------------------------------------------------------
// Mollifier
// -------------------------------------------------------------------------

#[test]
fn mollifier_has_unit_mass_at_every_level() {
    for d in 1..=3 {
        for level in 0..=3 {
            let m = Mollifier::new(d, level);
            let nodes = if d == 3 { 28 } else { 48 };
            let mass = m.mass_by_quadrature(nodes);
            assert_relative_eq!(mass, 1.0, max_relative = 2e-4);
        }
    }
}

#[test]
fn mollifier_is_nonnegative_with_compact_support() {
    let m = Mollifier::new(3, 2);
    assert_eq!(m.support_radius(), 0.25);
    assert!(m.eval(&[0.3, 0.0, 0.0]) == 0.0);
    assert!(m.eval(&[0.0, 0.0, 0.0]) > 0.0);
    assert!(m.eval(&[0.1, 0.1, 0.1]) > 0.0);
}

#[test]
fn mollified_constant_density_returns_the_constant() {
    // Convolving a constant with a unit-mass kernel reproduces the constant.
    let c = 2.75;
    let comps: Vec<SignedMeasure> = (0..3)
        .map(|_| SignedMeasure::density(DensityFn::new(3, move |_| c, None, Some(c))))
        .collect();
    let mu = DriftMeasure::new(comps).unwrap();
    let q = MeasureQuad {
        space_nodes: 20,
        ..quick_quad()
    };
    for n in [0u32, 2, 4] {
        for x in [[0.0, 0.0, 0.0], [1.3, -0.4, 2.0]] {
            let b = mollified_drift(&mu, n, &x, &q).unwrap();
            for bi in b {
                assert_relative_eq!(bi, c, max_relative = 2e-4);
            }
        }
    }
}

#[test]
fn mollified_drift_converges_to_continuous_density() {
    // Approximate identity: b^(n) -> f pointwise for continuous f.
    let f = |x: &[f64]| (1.0 + x[0]).sin() + 0.5 * x[0] * x[0];
    let comp = SignedMeasure::density(DensityFn::new(
        1,
        f,
        Some(Cube::new(vec![-8.0], vec![8.0]).unwrap()),
        None,
    ));
    let mu = DriftMeasure::new(vec![comp]).unwrap();
    let q = MeasureQuad {
        space_nodes: 32,
        ..quick_quad()
    };
    let xs = [[-1.0], [0.0], [0.7]];
    let mut errs = Vec::new();
    for n in [0u32, 1, 2, 3, 4] {
        let e = xs
            .iter()
            .map(|x| (mollified_drift(&mu, n, x, &q).unwrap()[0] - f(x)).abs())
            .fold(0.0_f64, f64::max);
        errs.push(e);
    }
    for w in errs.windows(2) {
        assert!(w[1] < w[0], "mollification error should shrink: {errs:?}");
    }
    assert!(errs[4] < 1e-3, "level-4 error too large: {errs:?}");
}

#[test]
fn cantor_mollified_drift_recursion_agrees_with_sampling_oracle() {
    // Self-similar recursion vs direct Monte Carlo integration of phi_n
    // against sampled points of the measure.
    let cantor = cantor_measure_d3();
    let mu = DriftMeasure::new(vec![cantor.clone(), cantor.clone(), cantor.clone()]).unwrap();
    let q = MeasureQuad {
        space_nodes: 12,
        cantor_divisor: 16.0,
        ..quick_quad()
    };
    let n = 2u32;
    let x = [0.1, -0.2, 0.0]; // on the carrier plane, inside the cross-section
    let rec = mollified_drift(&mu, n, &x, &q).unwrap()[0];

    let moll = Mollifier::new(3, n);
    let cube = Cube::from_center_half(&x, moll.support_radius());
    let mass = cantor.abs_mass_on(&cube, &q).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let samples = cantor.sample_abs(&cube, 60_000, &mut rng, &q).unwrap();
    let vals: Vec<f64> = samples
        .iter()
        .map(|y| {
            let v: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).collect();
            mass * moll.eval(&v)
        })
        .collect();
    let mc = crate::stats::EstimatorResult::from_samples(&vals);
    assert!(
        (rec - mc.mean).abs() <= 3.0 * mc.stderr + 2e-3 * rec.abs(),
        "recursion {rec} vs sampling {} +- {}",
        mc.mean,
        mc.stderr
    );
}

// -------------------------------------------------------------------------
// Kato norm N_t^alpha
// -------------------------------------------------------------------------

#[test]
fn kato_norm_of_zero_measure_is_zero() {
    let mu = SignedMeasure::zero(3);
    let grid = SupGrid::single(vec![0.0; 3]);
    for (t, alpha) in [(0.1, 1.0), (1.0, 0.5), (2.0, 2.0)] {
        let n = kato_norm_n(&mu, t, alpha, &grid, &quick_quad()).unwrap();
        assert_eq!(n, 0.0);
    }
}

#[test]
fn kato_norm_of_lebesgue_matches_closed_form() {
    // Inner spatial integral is (pi s / alpha)^{d/2}, so
    // N_t^alpha = 2 (pi/alpha)^{3/2} sqrt(t) in d = 3.
    let mu = lebesgue(3);
    let grid = SupGrid::single(vec![0.0; 3]);
    let q = MeasureQuad {
        space_nodes: 32,
        time_nodes: 32,
        ..quick_quad()
    };
    for (t, alpha) in [(0.5, 1.0), (0.25, 0.5), (1.0, 2.0)] {
        let n = kato_norm_n(&mu, t, alpha, &grid, &q).unwrap();
        let exact = 2.0 * (PI / alpha).powf(1.5) * t.sqrt();
        assert_relative_eq!(n, exact, max_relative = 1e-5);
    }
}

#[test]
fn kato_norm_monotone_in_t_and_alpha() {
    let mu = gaussian_bump_measure(3, 1.0, 0.75);
    let q = MeasureQuad {
        space_nodes: 16,
        time_nodes: 16,
        ..quick_quad()
    };
    let grid = kato_sup_grid(&mu, 0.4, 0.5, 3);
    let tol = 1e-9;
    let mut prev = 0.0;
    for t in [0.05, 0.1, 0.2, 0.4] {
        let n = kato_norm_n(&mu, t, 0.5, &grid, &q).unwrap();
        assert!(n + tol >= prev, "N not nondecreasing in t");
        prev = n;
    }
    let n_small_alpha = kato_norm_n(&mu, 0.2, 0.25, &grid, &q).unwrap();
    let n_large_alpha = kato_norm_n(&mu, 0.2, 1.0, &grid, &q).unwrap();
    assert!(n_small_alpha + tol >= n_large_alpha, "N not nonincreasing in alpha");
}

#[test]
fn kato_norm_is_positively_homogeneous() {
    let base = gaussian_bump_measure(3, 1.0, 0.75);
    let scaled = SignedMeasure::weighted_sum(vec![(2.5, base.clone())]).unwrap();
    let grid = kato_sup_grid(&base, 0.2, 1.0, 3);
    let q = quick_quad();
    let n1 = kato_norm_n(&base, 0.2, 1.0, &grid, &q).unwrap();
    let n2 = kato_norm_n(&scaled, 0.2, 1.0, &grid, &q).unwrap();
    assert_relative_eq!(n2, 2.5 * n1, max_relative = 1e-12);
}

#[test]
fn cantor_kato_norm_vanishes_like_half_regularity_power() {
    // mu(B(x,r)) <= k r^{d-1+gamma} with gamma = log2/log3 makes
    // N_t decay like t^{gamma/2} ~ t^0.315.
    let mu = cantor_measure_d3();
    let grid = profile_grid(&mu, 3);
    let q = MeasureQuad {
        time_nodes: 24,
        cantor_divisor: 8.0,
        ..quick_quad()
    };
    let ts: Vec<f64> = vec![0.4, 0.2, 0.1, 0.05, 0.025];
    let ns: Vec<f64> = ts
        .iter()
        .map(|&t| kato_norm_n(&mu, t, 0.5, &grid, &q).unwrap())
        .collect();
    let slope = crate::stats::loglog_slope(&ts, &ns);
    let gamma = (2.0_f64).ln() / (3.0_f64).ln();
    assert!(
        (slope - gamma / 2.0).abs() < 0.12,
        "fitted N-rate {slope} not near gamma/2 = {}",
        gamma / 2.0
    );
}

#[test]
fn kato_norm_vanishes_for_every_shipped_measure() {
    // Membership characterization: N_t -> 0 as t -> 0 along a dyadic grid.
    let q = quick_quad();
    let measures: Vec<SignedMeasure> = vec![
        lebesgue(3),
        gaussian_bump_measure(3, 2.0, 0.5),
        SignedMeasure::from_spec(
            3,
            &MeasureSpec::Density {
                profile: DensitySpec::RadialPower {
                    exponent: 0.5,
                    radius: 1.0,
                    center: vec![0.0; 3],
                },
                support: None,
            },
        )
        .unwrap(),
        cantor_measure_d3(),
    ];
    for mu in &measures {
        let grid = kato_sup_grid(mu, 0.4, 1.0, 3);
        let mut values = Vec::new();
        for k in 0..5 {
            let t = 0.4 / 4.0_f64.powi(k);
            values.push(kato_norm_n(mu, t, 1.0, &grid, &q).unwrap());
        }
        for w in values.windows(2) {
            assert!(w[1] <= w[0] * (1.0 + 1e-9), "N increased along dyadic t: {values:?}");
        }
        assert!(
            values[4] < 0.35 * values[0],
            "N does not vanish along dyadic t: {values:?}"
        );
    }
}

#[test]
fn near_hyperplane_measure_is_flagged_divergent() {
    // A surface-like slab (thickness far below the probe resolution) makes
    // the inner integrand behave like 1/u: diagnosed, not crashed.
    let mu = SignedMeasure::from_spec(
        3,
        &MeasureSpec::Density {
            profile: DensitySpec::Slab {
                axis: 2,
                position: 0.0,
                thickness: 1e-8,
                cross_half_width: 2.0,
            },
            support: None,
        },
    )
    .unwrap();
    let grid = SupGrid::single(vec![0.0; 3]);
    let err = kato_norm_n(&mu, 0.25, 0.5, &grid, &quick_quad()).unwrap_err();
    match err {
        Error::KatoDivergent { slope, .. } => assert!(slope <= -0.98),
        other => panic!("expected KatoDivergent, got {other:?}"),
    }
}

// -------------------------------------------------------------------------
// Lambda_t
// -------------------------------------------------------------------------

#[test]
fn lambda_of_zero_measure_is_zero() {
    let mu = SignedMeasure::zero(3);
    let kernel = GaussianKernel { dim: 3 };
    let grid = SupGrid::single(vec![0.0; 3]);
    let v = lambda_norm(&mu, 0.5, &kernel, &grid, &quick_quad()).unwrap();
    assert_eq!(v, 0.0);
}

#[test]
fn lambda_of_lebesgue_under_exact_gaussian_kernel() {
    // Spatial integral is 1 by normalization, so Lambda_t = 2 sqrt(t).
    let mu = lebesgue(3);
    let kernel = GaussianKernel { dim: 3 };
    let grid = SupGrid::single(vec![0.0; 3]);
    let q = MeasureQuad {
        space_nodes: 32,
        ..quick_quad()
    };
    for t in [0.1, 0.5, 1.0] {
        let v = lambda_norm(&mu, t, &kernel, &grid, &q).unwrap();
        assert_relative_eq!(v, 2.0 * t.sqrt(), max_relative = 1e-6);
    }
}

#[test]
fn lambda_nondecreasing_in_t() {
    let mu = gaussian_bump_measure(3, 1.0, 0.75);
    let kernel = GaussianKernel { dim: 3 };
    let grid = kato_sup_grid(&mu, 0.4, 1.0, 3);
    let q = quick_quad();
    let mut prev = 0.0;
    for t in [0.05, 0.1, 0.2, 0.4] {
        let v = lambda_norm(&mu, t, &kernel, &grid, &q).unwrap();
        assert!(v >= prev - 1e-12);
        prev = v;
    }
}

#[test]
fn lambda_of_mollified_drift_below_envelope_chain() {
    // For every level n, Lambda_t(|b^(n)|) computed with the exact Gaussian
    // kernel stays below C4 e^{C5} N_t^{C6}(|mu|) with the default envelope
    // constants, since p lies below that envelope pointwise.
    let env = EnvelopeConstants::default();

    // d = 1 smooth bump measure, truly mollified at level n = 1.
    let f = DensityFn::from_spec(
        1,
        &DensitySpec::GaussianBump {
            amplitude: 1.0,
            width: 0.5,
            center: vec![0.0],
        },
    )
    .unwrap();
    let mu1 = DriftMeasure::new(vec![SignedMeasure::density(f)]).unwrap();
    let q = MeasureQuad {
        space_nodes: 20,
        time_nodes: 16,
        ..quick_quad()
    };
    let level = 1u32;
    let mu_c = mu1.clone();
    let q_inner = q;
    let mollified_abs = SignedMeasure::density(DensityFn::new(
        1,
        move |x: &[f64]| {
            mollified_drift_unchecked(&mu_c, level, x, &q_inner).unwrap()[0].abs()
        },
        Some(Cube::new(vec![-5.0], vec![5.0]).unwrap()),
        Some(1.0),
    ));
    let kernel = GaussianKernel { dim: 1 };
    let t = 0.5;
    let grid = kato_sup_grid(&mollified_abs, t, env.c6, 3);
    let lam = lambda_norm(&mollified_abs, t, &kernel, &grid, &q).unwrap();
    let n_c6 = kato_norm_n(&mu1.component(0).abs(), t, env.c6, &grid, &q).unwrap();
    let rhs = env.c4 * env.c5.exp() * n_c6;
    assert!(
        lam <= rhs,
        "envelope chain violated in d=1: Lambda={lam} vs C4 e^C5 N = {rhs}"
    );

    // d = 3 constant density (its mollification is itself).
    let c = 0.7;
    let mu3 = lebesgue(3);
    let scaled = SignedMeasure::weighted_sum(vec![(c, mu3)]).unwrap();
    let grid3 = SupGrid::single(vec![0.0; 3]);
    let q3 = MeasureQuad {
        space_nodes: 28,
        ..quick_quad()
    };
    let lam3 = lambda_norm(&scaled, t, &GaussianKernel { dim: 3 }, &grid3, &q3).unwrap();
    let n3 = kato_norm_n(&scaled, t, env.c6, &grid3, &q3).unwrap();
    assert!(lam3 <= env.c4 * env.c5.exp() * n3);
}

// -------------------------------------------------------------------------
// Membership profile
// -------------------------------------------------------------------------

#[test]
fn profile_of_bounded_density_is_linear_in_radius() {
    // For f == M the radial integral is exactly M sigma_{d-1} r.
    let m_val = 1.4;
    let mu = SignedMeasure::density(DensityFn::new(
        3,
        move |_| m_val,
        Some(Cube::from_center_half(&[0.0, 0.0, 0.0], 4.0)),
        Some(m_val),
    ));
    let radii = [0.5, 0.25, 0.1, 0.05];
    let grid = SupGrid::single(vec![0.0; 3]);
    let prof = kato_membership_profile(&mu, &radii, &grid, 0.2, &quick_quad()).unwrap();
    for (r, v) in prof.radii.iter().zip(&prof.values) {
        let bound = bounded_density_profile_bound(m_val, 3, *r);
        assert_relative_eq!(*v, bound, max_relative = 1e-8);
        assert!(*v <= bound * (1.0 + 1e-8));
    }
    assert!(prof.consistent_with_kd1);
    assert!(!prof.outside_theory_dim);
}

#[test]
fn profile_of_lp_density_vanishes() {
    // f(y) = |y|^{-1/2} on the unit ball lies in L^p for p < 6, so some
    // p > d = 3 works; its profile must decay to zero.
    let mu = SignedMeasure::from_spec(
        3,
        &MeasureSpec::Density {
            profile: DensitySpec::RadialPower {
                exponent: 0.5,
                radius: 1.0,
                center: vec![0.0; 3],
            },
            support: None,
        },
    )
    .unwrap();
    let radii = [0.5, 0.2, 0.1, 0.02, 0.005];
    let grid = SupGrid::single(vec![0.0; 3]);
    let prof = kato_membership_profile(&mu, &radii, &grid, 0.2, &quick_quad()).unwrap();
    // Exact value at the center: 4 pi int_0^r rho^{-1/2} drho = 8 pi sqrt(r).
    for (r, v) in prof.radii.iter().zip(&prof.values) {
        assert_relative_eq!(*v, 8.0 * PI * r.sqrt(), max_relative = 1e-6);
    }
    assert!(prof.consistent_with_kd1);
}

#[test]
fn cantor_profile_scales_with_the_self_similar_exponent() {
    let mu = cantor_measure_d3();
    let grid = profile_grid(&mu, 3);
    let radii = [0.3, 0.2, 0.1, 0.06, 0.03, 0.015];
    let prof = kato_membership_profile(&mu, &radii, &grid, 0.3, &quick_quad()).unwrap();
    let p = prof.fitted_exponent();
    assert!(
        (0.5..=0.75).contains(&p),
        "Cantor profile exponent {p} outside [0.5, 0.75]: values {:?}",
        prof.values
    );
    assert!(prof.consistent_with_kd1);
}

#[test]
fn near_surface_density_profile_plateaus_and_is_rejected() {
    // A thin smooth slab behaves like a hyperplane surface measure down to
    // its thickness: the profile stalls (log-type growth in r) and the
    // membership flag must come back false.
    let h = 0.05;
    let mu = SignedMeasure::density(DensityFn::new(
        3,
        move |y: &[f64]| {
            let cross = y[0].abs() <= 2.0 && y[1].abs() <= 2.0;
            if cross {
                (-(y[2] * y[2]) / (2.0 * h * h)).exp() / (h * (2.0 * PI).sqrt())
            } else {
                0.0
            }
        },
        Some(Cube::new(vec![-2.0, -2.0, -0.5], vec![2.0, 2.0, 0.5]).unwrap()),
        Some(1.0 / (h * (2.0 * PI).sqrt())),
    ));
    let radii = [0.6, 0.4, 0.25, 0.15, 0.1];
    let grid = SupGrid::single(vec![0.0; 3]);
    let q = MeasureQuad {
        space_nodes: 48,
        time_nodes: 32,
        ..quick_quad()
    };
    let prof = kato_membership_profile(&mu, &radii, &grid, 0.2, &q).unwrap();
    assert!(
        !prof.consistent_with_kd1,
        "surface-like measure must fail the membership diagnostic: {:?}",
        prof.values
    );
}

#[test]
fn profile_rejects_bad_radii() {
    let mu = lebesgue(3);
    let grid = SupGrid::single(vec![0.0; 3]);
    assert!(kato_membership_profile(&mu, &[], &grid, 0.2, &quick_quad()).is_err());
    assert!(kato_membership_profile(&mu, &[0.1, 0.2], &grid, 0.2, &quick_quad()).is_err());
    assert!(kato_membership_profile(&mu, &[0.2, -0.1], &grid, 0.2, &quick_quad()).is_err());
}

// -------------------------------------------------------------------------
// Measure plumbing
// -------------------------------------------------------------------------

#[test]
fn sum_of_densities_takes_exact_total_variation() {
    // f1 = 1, f2 = -1 on overlapping supports: |f1 + f2| = 0 there.
    let a = SignedMeasure::density(DensityFn::new(
        1,
        |_| 1.0,
        Some(Cube::new(vec![0.0], vec![2.0]).unwrap()),
        Some(1.0),
    ));
    let b = SignedMeasure::density(DensityFn::new(
        1,
        |_| -1.0,
        Some(Cube::new(vec![1.0], vec![3.0]).unwrap()),
        Some(1.0),
    ));
    let sum = SignedMeasure::weighted_sum(vec![(1.0, a), (1.0, b)]).unwrap();
    let abs = sum.abs();
    let q = quick_quad();
    // Cancellation region [1,2] carries no total variation...
    let mid = Cube::new(vec![1.0], vec![2.0]).unwrap();
    assert_relative_eq!(abs.abs_mass_on(&mid, &q).unwrap(), 0.0, epsilon = 1e-12);
    // ...while the unshared pieces carry full mass.
    let left = Cube::new(vec![0.0], vec![1.0]).unwrap();
    let right = Cube::new(vec![2.0], vec![3.0]).unwrap();
    assert_relative_eq!(abs.abs_mass_on(&left, &q).unwrap(), 1.0, max_relative = 1e-9);
    assert_relative_eq!(abs.abs_mass_on(&right, &q).unwrap(), 1.0, max_relative = 1e-9);
}

#[test]
fn mass_and_sampling_agree_for_cantor_product() {
    let mu = cantor_measure_d3();
    let q = quick_quad();
    let cube = Cube::new(vec![-0.5, -0.5, 0.0], vec![0.5, 0.5, 0.4]).unwrap();
    // axis mass of [0, 0.4]: contains [0,1/3] fully (mass 1/2) plus part of
    // the right third ([2/3,1]) -> none. Exact: mass([0,0.4]) = 1/2.
    let mass = mu.abs_mass_on(&cube, &q).unwrap();
    assert_relative_eq!(mass, 0.5, max_relative = 1e-10);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let pts = mu.sample_abs(&cube, 500, &mut rng, &q).unwrap();
    for p in pts {
        assert!(cube.contains(&p));
        // On the Cantor support: never in the middle third of [0,1].
        assert!(!(p[2] > 1.0 / 3.0 + 1e-9 && p[2] < 2.0 / 3.0 - 1e-9));
    }
}

#[test]
fn integrate_against_requires_a_window_for_unbounded_densities() {
    let mu = lebesgue(2);
    let err = mu
        .integrate_against(&mut |_| 1.0, None, 1e-3, &quick_quad())
        .unwrap_err();
    assert!(matches!(err, Error::Domain(_)));
}

#[test]
fn mollified_drift_flags_unresolved_quadrature() {
    let f = |x: &[f64]| (500.0 * x[0]).cos();
    let comp = SignedMeasure::density(DensityFn::new(
        1,
        f,
        Some(Cube::new(vec![-4.0], vec![4.0]).unwrap()),
        Some(1.0),
    ));
    let mu = DriftMeasure::new(vec![comp]).unwrap();
    let q = MeasureQuad {
        space_nodes: 10,
        residual_rtol: 1e-4,
        ..quick_quad()
    };
    let r = mollified_drift(&mu, 0, &[0.3], &q);
    assert!(matches!(r, Err(Error::QuadratureResidual { .. })));
}

#[test]
fn drift_measure_shape_checks() {
    assert!(DriftMeasure::new(vec![SignedMeasure::zero(3)]).is_err());
    let ok = DriftMeasure::zero(3);
    assert_eq!(ok.dim(), 3);
    assert!(ok.effective_support().is_none());
}

#[test]
fn measure_from_json_schema() {
    let text = r#"{
        "kind": "sum",
        "terms": [
            { "coefficient": 1.5,
              "measure": { "kind": "density",
                           "profile": { "name": "gaussian_bump", "amplitude": 1.0,
                                        "width": 0.5, "center": [0.0, 0.0, 0.0] } } },
            { "coefficient": 1.0,
              "measure": { "kind": "cantor_product", "axis": 2, "weight": 1.0,
                           "region": { "lo": [-1.0, -1.0, 0.0], "hi": [1.0, 1.0, 1.0] } } }
        ]
    }"#;
    let mu = SignedMeasure::from_json(3, text).unwrap();
    assert_eq!(mu.dim(), 3);
    let support = mu.effective_support().unwrap();
    assert!(support.contains(&[0.0, 0.0, 0.5]));
    assert!(SignedMeasure::from_json(3, "{\"kind\": \"unknown\"}").is_err());
}
