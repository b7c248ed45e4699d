//! Closed-form Gaussian kernels, their gradients, the `G_a` family, and the
//! elementary analytic functions used by the series and moment bounds.
//!
//! All kernels are computed in log space internally and exponentiated at the
//! boundary: the small-time experiments push `t` down to `1e-3` with
//! `|x - y|` up to several units, where the direct product form underflows.

use crate::error::{Error, Result};
use crate::geom::dist2;
use crate::quad::ln_factorial;
use std::f64::consts::PI;

/// `ln p(t,x,y)` for the standard heat kernel
/// `p(t,x,y) = (2 pi t)^{-d/2} exp(-|x-y|^2 / 2t)`.
#[inline]
pub fn log_gaussian_p(t: f64, x: &[f64], y: &[f64]) -> f64 {
    debug_assert!(t > 0.0);
    let d = x.len() as f64;
    -0.5 * d * (2.0 * PI * t).ln() - dist2(x, y) / (2.0 * t)
}

/// The Gaussian transition density `p(t,x,y)`. Errors on `t <= 0`.
pub fn gaussian_p(t: f64, x: &[f64], y: &[f64]) -> Result<f64> {
    if !(t > 0.0) {
        return Err(Error::Domain(format!("gaussian_p requires t > 0, got {t}")));
    }
    if x.len() != y.len() {
        return Err(Error::Domain("gaussian_p: dimension mismatch".into()));
    }
    Ok(log_gaussian_p(t, x, y).exp())
}

/// Gradient in the first spatial argument:
/// `grad_z p(s,z,y) = -((z - y)/s) p(s,z,y)`.
pub fn gaussian_grad(s: f64, z: &[f64], y: &[f64]) -> Result<Vec<f64>> {
    if !(s > 0.0) {
        return Err(Error::Domain(format!("gaussian_grad requires s > 0, got {s}")));
    }
    let p = gaussian_p(s, z, y)?;
    Ok(z.iter().zip(y).map(|(zi, yi)| -(zi - yi) / s * p).collect())
}

/// `ln G_a(s,x,y)` for `G_a(s,x,y) = s^{-d/2} exp(-a |x-y|^2 / 2s)`.
#[inline]
pub fn log_g_kernel(a: f64, s: f64, x: &[f64], y: &[f64]) -> f64 {
    debug_assert!(a > 0.0 && s > 0.0);
    let d = x.len() as f64;
    -0.5 * d * s.ln() - a * dist2(x, y) / (2.0 * s)
}

/// The `G_a` kernel. Note `p = (2 pi)^{-d/2} G_1`.
pub fn g_kernel(a: f64, s: f64, x: &[f64], y: &[f64]) -> Result<f64> {
    if !(a > 0.0) {
        return Err(Error::Domain(format!("g_kernel requires a > 0, got {a}")));
    }
    if !(s > 0.0) {
        return Err(Error::Domain(format!("g_kernel requires s > 0, got {s}")));
    }
    Ok(log_g_kernel(a, s, x, y).exp())
}

/// `m_delta = sup_{r>0} r e^{-delta r^2 / 2} = 1/sqrt(e delta)`, restricted
/// to the range `0 < delta < 1` in which it is used by the series bounds.
pub fn m_delta(delta: f64) -> Result<f64> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::Domain(format!(
            "m_delta expects delta in (0,1), got {delta}"
        )));
    }
    Ok(m_delta_unchecked(delta))
}

/// The same formula for any `delta > 0` (the supremum formula itself does
/// not need the restriction; oracle tests probe it outside `(0,1)`).
#[inline]
pub fn m_delta_unchecked(delta: f64) -> f64 {
    debug_assert!(delta > 0.0);
    1.0 / (std::f64::consts::E * delta).sqrt()
}

/// Constant in the pointwise gradient bound
/// `|grad_z G_1(s,z,y)| <= C(delta) s^{-1/2} G_{1-delta/2}(s,z,y)`.
///
/// Splitting the exponent as `1 = delta/2 + (1 - delta/2)` leaves the
/// prefactor `rho e^{-(delta/2) rho^2/2}` with `rho = |z-y|/sqrt(s)`, whose
/// supremum is `m_{delta/2}`. (The constant `m_delta` is too small by a
/// factor `sqrt 2`; see the tests.)
#[inline]
pub fn grad_bound_constant(delta: f64) -> f64 {
    m_delta_unchecked(0.5 * delta)
}

/// Partial sum of `Phi(z) = sum_n z^n / sqrt(n!)` with a certified tail.
#[derive(Clone, Debug)]
pub struct PhiSum {
    pub value: f64,
    /// Geometric bound on the dropped tail.
    pub tail_bound: f64,
    pub terms_used: usize,
}

/// Evaluate `Phi(z) = sum_{n>=0} z^n / sqrt(n!)` for `z >= 0`.
///
/// At least `terms` terms are summed; the sum is auto-extended until the
/// running term drops below `1e-12` relative and the term ratio certifies a
/// geometric tail. Satisfies `Phi(z) <= (1+z) e^{z^2}`.
pub fn phi_series(z: f64, terms: usize) -> Result<PhiSum> {
    if !(z >= 0.0) {
        return Err(Error::Domain(format!("phi_series requires z >= 0, got {z}")));
    }
    let mut value = 0.0_f64;
    let mut n = 0usize;
    let mut term = 1.0_f64; // z^0 / sqrt(0!)
    let cap = 10_000usize;
    loop {
        value += term;
        n += 1;
        term *= z / (n as f64).sqrt();
        let ratio = z / ((n + 1) as f64).sqrt();
        let settled = term < 1e-12 * value.max(1.0) && ratio < 0.5;
        if (n >= terms && settled) || n >= cap {
            let tail = if ratio < 1.0 { term / (1.0 - ratio) } else { f64::INFINITY };
            return Ok(PhiSum {
                value,
                tail_bound: tail,
                terms_used: n,
            });
        }
    }
}

/// Upper envelope `(1 + z) e^{z^2}` for `Phi(z)`.
pub fn phi_envelope(z: f64) -> f64 {
    (1.0 + z) * (z * z).exp()
}

/// Moment coefficients: `alpha_0 = alpha_1 = 1` and
/// `alpha_n = prod_{k=2}^n (1 - 1/k)^{(k-1)/2} (1/k)^{1/2}` for `n >= 2`.
///
/// Computed in log space; satisfies `alpha_n <= 1/sqrt(n!)`.
pub fn alpha_coeff(n: usize) -> f64 {
    if n <= 1 {
        return 1.0;
    }
    let mut log_a = 0.0_f64;
    for k in 2..=n {
        let kf = k as f64;
        log_a += 0.5 * (kf - 1.0) * (1.0 - 1.0 / kf).ln() - 0.5 * kf.ln();
    }
    log_a.exp()
}

/// One induction step of the moment coefficients:
/// `alpha_{k+1} = alpha_k (k/(k+1))^{k/2} (1/(k+1))^{1/2}`.
pub fn alpha_step(alpha_k: f64, k: usize) -> f64 {
    let kf = k as f64;
    alpha_k * (kf / (kf + 1.0)).powf(0.5 * kf) / (kf + 1.0).sqrt()
}

/// `1/sqrt(n!)`, the upper bound on `alpha_n`.
pub fn inv_sqrt_factorial(n: u64) -> f64 {
    (-0.5 * ln_factorial(n)).exp()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quad::{integrate_gl, tensor_gl};
    use approx::assert_relative_eq;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn p_at_coincident_points_d3() {
        // (2 pi)^{-3/2}
        let x = [0.0, 0.0, 0.0];
        let p = gaussian_p(1.0, &x, &x).unwrap();
        assert_relative_eq!(p, 0.06349363593424097, epsilon = 1e-15);
    }

    #[test]
    fn p_rejects_nonpositive_time() {
        assert!(gaussian_p(0.0, &[0.0], &[0.0]).is_err());
        assert!(gaussian_p(-1.0, &[0.0], &[0.0]).is_err());
        assert!(gaussian_grad(0.0, &[0.0], &[0.0]).is_err());
        assert!(g_kernel(1.0, 0.0, &[0.0], &[0.0]).is_err());
        assert!(g_kernel(0.0, 1.0, &[0.0], &[0.0]).is_err());
    }

    #[test]
    fn p_is_symmetric_and_normalized() {
        let x = [0.3, -0.7, 1.1];
        let y = [-0.2, 0.4, 0.9];
        let t = 0.37;
        assert_relative_eq!(
            gaussian_p(t, &x, &y).unwrap(),
            gaussian_p(t, &y, &x).unwrap(),
            epsilon = 1e-16
        );
        // d = 1 normalization by quadrature
        let mass = integrate_gl(-8.0, 8.0, 64, |u| {
            gaussian_p(0.5, &[0.25], &[u]).unwrap()
        });
        assert_relative_eq!(mass, 1.0, max_relative = 1e-10);
        // d = 2 normalization
        let cube = crate::geom::Cube::new(vec![-7.0, -7.0], vec![7.0, 7.0]).unwrap();
        let mass2 = tensor_gl(&cube, 40, &mut |u: &[f64]| {
            gaussian_p(0.8, &[0.1, -0.3], u).unwrap()
        });
        assert_relative_eq!(mass2, 1.0, max_relative = 1e-9);
    }

    #[test]
    fn chapman_kolmogorov_on_sampled_points() {
        // int p(s,x,z) p(t,z,y) dz = p(s+t,x,y), d = 1.
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..5 {
            let s = 0.1 + rng.random::<f64>() * 0.5;
            let t = 0.1 + rng.random::<f64>() * 0.5;
            let x = [rng.random::<f64>() * 2.0 - 1.0];
            let y = [rng.random::<f64>() * 2.0 - 1.0];
            let conv = integrate_gl(-6.0, 6.0, 128, |z| {
                gaussian_p(s, &x, &[z]).unwrap() * gaussian_p(t, &[z], &y).unwrap()
            });
            assert_relative_eq!(conv, gaussian_p(s + t, &x, &y).unwrap(), max_relative = 1e-8);
        }
    }

    #[test]
    fn gradient_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..10 {
            let s = 0.2 + rng.random::<f64>();
            let z: Vec<f64> = (0..3).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
            let y: Vec<f64> = (0..3).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
            let g = gaussian_grad(s, &z, &y).unwrap();
            let h = 1e-5;
            for i in 0..3 {
                let mut zp = z.clone();
                let mut zm = z.clone();
                zp[i] += h;
                zm[i] -= h;
                let fd = (gaussian_p(s, &zp, &y).unwrap() - gaussian_p(s, &zm, &y).unwrap())
                    / (2.0 * h);
                assert_relative_eq!(g[i], fd, max_relative = 1e-6, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn gradient_vanishes_at_coincident_points() {
        let z = [0.5, -0.5, 0.25];
        let g = gaussian_grad(0.3, &z, &z).unwrap();
        assert!(g.iter().all(|gi| *gi == 0.0));
    }

    /// `|grad G_1| <= C(delta) s^{-1/2} G_{1-delta/2}` with
    /// `C(delta) = m_{delta/2}`; sharp on a grid that straddles the
    /// maximizing ratio `|z-y|/sqrt(s) = sqrt(2/delta)`.
    #[test]
    fn gradient_bound_with_half_delta_constant() {
        for &delta in &[0.1, 0.5, 0.9] {
            let c = grad_bound_constant(delta);
            for &s in &[0.05, 0.3, 1.0] {
                for k in 1..=40 {
                    let r = 0.2 * k as f64; // |z - y|
                    let z = [0.0, 0.0, 0.0];
                    let y = [r, 0.0, 0.0];
                    let lhs = r / s * g_kernel(1.0, s, &z, &y).unwrap();
                    let rhs = c / s.sqrt() * g_kernel(1.0 - 0.5 * delta, s, &z, &y).unwrap();
                    assert!(
                        lhs <= rhs * (1.0 + 1e-12),
                        "violated at delta={delta}, s={s}, r={r}: {lhs} > {rhs}"
                    );
                }
            }
        }
    }

    /// The analogous bound with constant `m_delta` instead of `m_{delta/2}`
    /// fails near the maximizing ratio by a factor `sqrt 2`: the exponent
    /// split leaves `delta/2`, not `delta`, in the prefactor.
    #[test]
    fn gradient_bound_with_m_delta_alone_is_violated() {
        let delta = 0.5_f64;
        let s = 0.3_f64;
        let r = (2.0_f64 / delta).sqrt() * s.sqrt(); // maximizing |z-y|
        let z = [0.0, 0.0, 0.0];
        let y = [r, 0.0, 0.0];
        let lhs = r / s * g_kernel(1.0, s, &z, &y).unwrap();
        let rhs = m_delta(delta).unwrap() / s.sqrt()
            * g_kernel(1.0 - 0.5 * delta, s, &z, &y).unwrap();
        assert!(lhs > rhs, "expected the m_delta-only constant to be too small");
        assert_relative_eq!(lhs / rhs, std::f64::consts::SQRT_2, max_relative = 1e-12);
    }

    #[test]
    fn g_kernel_closed_forms_and_monotonicity() {
        let x = [0.0, 0.0, 0.0];
        let y = [1.0, 0.0, 0.0];
        // d=3, a=2, s=1, |x-y|=1 -> e^{-1}
        assert_relative_eq!(
            g_kernel(2.0, 1.0, &x, &y).unwrap(),
            (-1.0_f64).exp(),
            epsilon = 1e-15
        );
        // p = (2 pi)^{-d/2} G_1
        let t = 0.7;
        assert_relative_eq!(
            gaussian_p(t, &x, &y).unwrap(),
            (2.0 * PI).powf(-1.5) * g_kernel(1.0, t, &x, &y).unwrap(),
            max_relative = 1e-14
        );
        // decreasing in a for x != y
        assert!(g_kernel(0.5, t, &x, &y).unwrap() > g_kernel(0.9, t, &x, &y).unwrap());
    }

    #[test]
    fn m_delta_formula_and_domain() {
        assert_relative_eq!(m_delta_unchecked(1.0), 0.6065306597126334, epsilon = 1e-15);
        assert_relative_eq!(m_delta(0.25).unwrap(), 1.2130613194252668, epsilon = 1e-15);
        assert!(m_delta(0.0).is_err());
        assert!(m_delta(1.0).is_err());
        assert!(m_delta(1.5).is_err());
    }

    /// Golden-section maximization of `r e^{-delta r^2/2}` agrees with the
    /// closed form to 1e-8.
    #[test]
    fn m_delta_matches_numeric_maximization() {
        for k in 1..=9 {
            let delta = 0.1 * k as f64;
            let f = |r: f64| r * (-delta * r * r / 2.0).exp();
            let (mut a, mut b) = (0.0_f64, 20.0_f64);
            let phi = (5.0_f64.sqrt() - 1.0) / 2.0;
            for _ in 0..200 {
                let c = b - phi * (b - a);
                let d = a + phi * (b - a);
                if f(c) < f(d) {
                    a = c;
                } else {
                    b = d;
                }
            }
            let numeric = f(0.5 * (a + b));
            assert_relative_eq!(numeric, m_delta_unchecked(delta), epsilon = 1e-8);
        }
    }

    #[test]
    fn phi_series_values_and_envelope() {
        assert_relative_eq!(phi_series(0.0, 1).unwrap().value, 1.0, epsilon = 1e-15);
        // High-precision reference partial sums.
        let p1 = phi_series(1.0, 8).unwrap();
        assert_relative_eq!(p1.value, 3.469506314521047, max_relative = 1e-11);
        assert!(p1.tail_bound < 1e-11);
        let p2 = phi_series(2.0, 8).unwrap();
        assert_relative_eq!(p2.value, 22.858619788663695, max_relative = 1e-12);
        // Envelope at z = 1: 2e >= Phi(1).
        assert!(phi_envelope(1.0) >= p1.value);
        assert_relative_eq!(phi_envelope(1.0), 5.43656365691809, epsilon = 1e-10);
    }

    #[test]
    fn phi_series_below_envelope_on_grid() {
        for i in 0..50 {
            let z = 5.0 * i as f64 / 49.0;
            let p = phi_series(z, 4).unwrap();
            assert!(
                p.value <= phi_envelope(z),
                "Phi({z}) = {} exceeds envelope {}",
                p.value,
                phi_envelope(z)
            );
        }
    }

    /// The even/odd split used to prove the envelope is an identity:
    /// `sum z^{2n}/n! + z sum z^{2n}/n! = (1+z) e^{z^2}`.
    #[test]
    fn phi_envelope_split_identity() {
        for &z in &[0.0, 0.3, 1.0, 2.5] {
            let mut even = 0.0_f64;
            let mut term: f64 = 1.0;
            for n in 0..200 {
                even += term;
                term *= z * z / (n as f64 + 1.0);
            }
            let total = even + z * even;
            assert_relative_eq!(total, phi_envelope(z), max_relative = 1e-12);
        }
    }

    #[test]
    fn alpha_coefficients() {
        assert_eq!(alpha_coeff(0), 1.0);
        assert_eq!(alpha_coeff(1), 1.0);
        assert_relative_eq!(alpha_coeff(2), 0.5, epsilon = 1e-14);
        // 1/(3 sqrt 3)
        assert_relative_eq!(alpha_coeff(3), 0.19245008972987526, epsilon = 1e-14);
        for n in 0..=20 {
            assert!(
                alpha_coeff(n) <= inv_sqrt_factorial(n as u64) * (1.0 + 1e-13),
                "alpha_{n} exceeds 1/sqrt(n!)"
            );
        }
    }

    #[test]
    fn alpha_recursion_consistency() {
        for k in 1..25 {
            let direct = alpha_coeff(k + 1);
            let stepped = alpha_step(alpha_coeff(k), k);
            assert_relative_eq!(direct, stepped, max_relative = 1e-12);
        }
    }
}
