//! Quadrature rules and integration helpers.
//!
//! Gauss–Legendre and Gauss–Hermite rules are built by Newton iteration on
//! the orthogonal-polynomial recurrences. Time integrals with an integrable
//! `s^{-1/2}` endpoint singularity are handled by the substitution `s = u^2`
//! (and its mirror at the right endpoint), which restores smoothness for the
//! Legendre rules.

use crate::error::{Error, Result};
use crate::geom::Cube;
use statrs::function::gamma::ln_gamma;
use std::f64::consts::PI;

/// Gauss–Legendre nodes and weights on `[-1, 1]`. Weights sum to 2.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        let mut z = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut pp = 0.0;
        for _ in 0..100 {
            let mut p1 = 1.0;
            let mut p2 = 0.0;
            for j in 0..n {
                let p3 = p2;
                p2 = p1;
                p1 = ((2 * j + 1) as f64 * z * p2 - j as f64 * p3) / (j + 1) as f64;
            }
            pp = n as f64 * (z * p1 - p2) / (z * z - 1.0);
            let z1 = z;
            z = z1 - p1 / pp;
            if (z - z1).abs() < 1e-15 {
                break;
            }
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        let wi = 2.0 / ((1.0 - z * z) * pp * pp);
        w[i] = wi;
        w[n - 1 - i] = wi;
    }
    (x, w)
}

/// Gauss–Legendre rule mapped onto `[a, b]` as `(node, weight)` pairs.
pub fn gl_on(a: f64, b: f64, n: usize) -> Vec<(f64, f64)> {
    let (x, w) = gauss_legendre(n);
    let k = 0.5 * (b - a);
    let m = 0.5 * (a + b);
    x.iter().zip(&w).map(|(xi, wi)| (k * xi + m, k * wi)).collect()
}

/// `int_a^b f`.
pub fn integrate_gl(a: f64, b: f64, n: usize, mut f: impl FnMut(f64) -> f64) -> f64 {
    gl_on(a, b, n).into_iter().map(|(x, w)| w * f(x)).sum()
}

/// Probabilists' Gauss–Hermite rule: nodes `z_i` and weights `w_i` with
/// `sum_i w_i f(z_i) ~ E[f(Z)]`, `Z ~ N(0,1)`. Weights sum to 1.
pub fn gauss_hermite_prob(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    // Physicists' rule for weight exp(-x^2), then rescale.
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let pim4 = 0.751_125_544_464_942_5_f64;
    let m = n.div_ceil(2);
    let nf = n as f64;
    let mut z = 0.0_f64;
    for i in 0..m {
        z = match i {
            0 => (2.0 * nf + 1.0).sqrt() - 1.85575 * (2.0 * nf + 1.0).powf(-1.0 / 6.0),
            1 => z - 1.14 * nf.powf(0.426) / z,
            2 => 1.86 * z - 0.86 * x[0],
            3 => 1.91 * z - 0.91 * x[1],
            _ => 2.0 * z - x[i - 2],
        };
        let mut pp = 0.0;
        for _ in 0..200 {
            let mut p1 = pim4;
            let mut p2 = 0.0;
            for j in 0..n {
                let p3 = p2;
                p2 = p1;
                p1 = z * (2.0 / (j as f64 + 1.0)).sqrt() * p2
                    - (j as f64 / (j as f64 + 1.0)).sqrt() * p3;
            }
            pp = (2.0 * nf).sqrt() * p2;
            let z1 = z;
            z = z1 - p1 / pp;
            if (z - z1).abs() < 1e-14 {
                break;
            }
        }
        x[i] = z;
        x[n - 1 - i] = -z;
        w[i] = 2.0 / (pp * pp);
        w[n - 1 - i] = w[i];
    }
    // x, w integrate against exp(-x^2); switch to the standard normal.
    let nodes: Vec<f64> = x.iter().map(|xi| xi * std::f64::consts::SQRT_2).collect();
    let sqrt_pi = PI.sqrt();
    let weights: Vec<f64> = w.iter().map(|wi| wi / sqrt_pi).collect();
    (nodes, weights)
}

/// Tensor-product Gauss–Legendre integral of `f` over a box.
pub fn tensor_gl(cube: &Cube, per_axis: usize, f: &mut dyn FnMut(&[f64]) -> f64) -> f64 {
    let d = cube.dim();
    let rules: Vec<Vec<(f64, f64)>> = (0..d)
        .map(|i| gl_on(cube.lo[i], cube.hi[i], per_axis))
        .collect();
    let mut point = vec![0.0; d];
    fn recurse(
        rules: &[Vec<(f64, f64)>],
        axis: usize,
        point: &mut Vec<f64>,
        weight: f64,
        f: &mut dyn FnMut(&[f64]) -> f64,
    ) -> f64 {
        if axis == rules.len() {
            return weight * f(point);
        }
        let mut acc = 0.0;
        for &(x, w) in &rules[axis] {
            point[axis] = x;
            acc += recurse(rules, axis + 1, point, weight * w, f);
        }
        acc
    }
    recurse(&rules, 0, &mut point, 1.0, f)
}

/// `int_0^t f(s) ds` where `f` may carry integrable inverse-square-root
/// singularities at both endpoints: split at `t/2` and substitute `s = u^2`
/// on the left, `s = t - v^2` on the right.
pub fn integrate_time_twosided(t: f64, n: usize, mut f: impl FnMut(f64) -> f64) -> f64 {
    debug_assert!(t > 0.0);
    let half = (0.5 * t).sqrt();
    let left: f64 = gl_on(0.0, half, n)
        .into_iter()
        .map(|(u, w)| 2.0 * u * w * f(u * u))
        .sum();
    let right: f64 = gl_on(0.0, half, n)
        .into_iter()
        .map(|(v, w)| 2.0 * v * w * f(t - v * v))
        .sum();
    left + right
}

/// `int_0^t f(s) ds` with the substitution `s = u^power` absorbing an
/// integrable singularity at `s = 0`.
pub fn integrate_time_power(t: f64, n: usize, power: u32, mut f: impl FnMut(f64) -> f64) -> f64 {
    debug_assert!(t > 0.0 && power >= 1);
    let p = power as f64;
    let upper = t.powf(1.0 / p);
    gl_on(0.0, upper, n)
        .into_iter()
        .map(|(u, w)| w * p * u.powf(p - 1.0) * f(u.powf(p)))
        .sum()
}

/// Surface area of the unit sphere `S^{d-1}` in `R^d`.
pub fn unit_sphere_area(d: usize) -> f64 {
    debug_assert!(d >= 1);
    2.0 * PI.powf(d as f64 / 2.0) / (ln_gamma(d as f64 / 2.0)).exp()
}

/// Volume of the unit ball in `R^d`.
pub fn unit_ball_volume(d: usize) -> f64 {
    PI.powf(d as f64 / 2.0) / (ln_gamma(d as f64 / 2.0 + 1.0)).exp()
}

/// Quadrature rule on the unit sphere `S^{d-1}`: `(direction, weight)` pairs
/// whose weights sum to the sphere area. Supports `d <= 3`.
pub fn sphere_rule(d: usize, resolution: usize) -> Result<Vec<(Vec<f64>, f64)>> {
    match d {
        1 => Ok(vec![(vec![1.0], 1.0), (vec![-1.0], 1.0)]),
        2 => {
            let n = (4 * resolution).max(8);
            let w = 2.0 * PI / n as f64;
            Ok((0..n)
                .map(|i| {
                    let th = 2.0 * PI * (i as f64 + 0.5) / n as f64;
                    (vec![th.cos(), th.sin()], w)
                })
                .collect())
        }
        3 => {
            // Product rule: Gauss-Legendre in cos(theta), midpoint in phi.
            let nu = resolution.max(4);
            let nphi = (2 * resolution).max(8);
            let mut out = Vec::with_capacity(nu * nphi);
            for (u, wu) in gl_on(-1.0, 1.0, nu) {
                let r = (1.0 - u * u).max(0.0).sqrt();
                for i in 0..nphi {
                    let phi = 2.0 * PI * (i as f64 + 0.5) / nphi as f64;
                    out.push((vec![r * phi.cos(), r * phi.sin(), u], wu * 2.0 * PI / nphi as f64));
                }
            }
            Ok(out)
        }
        _ => Err(Error::Domain(format!(
            "sphere quadrature implemented for d <= 3, got d = {d}"
        ))),
    }
}

/// `ln n!` through the log-gamma function.
pub fn ln_factorial(n: u64) -> f64 {
    ln_gamma(n as f64 + 1.0)
}
