//! The middle-thirds Cantor probability measure on an interval.
//!
//! The measure is characterized by the self-similar recursion
//! `mu(E) = mu(3E)/2 + mu(3E - 2)/2`: it splits evenly between the left and
//! right thirds of its carrier at every scale. Integration descends that
//! recursion and stops once a cell is smaller than the requested resolution,
//! evaluating the integrand at the cell midpoint (second-order accurate for
//! smooth integrands). Interval masses are computed by the same descent and
//! are exact up to the depth cap. Sampling draws the base-3 digits
//! `0/2` with fair coins.

use rand::Rng;

/// Cantor measure of total mass 1 carried by the physical interval `[lo, hi]`.
#[derive(Clone, Debug)]
pub struct CantorInterval {
    pub lo: f64,
    pub hi: f64,
}

const MAX_DEPTH: u32 = 48;

impl CantorInterval {
    pub fn new(lo: f64, hi: f64) -> Self {
        assert!(lo < hi, "Cantor carrier must be a nondegenerate interval");
        CantorInterval { lo, hi }
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    /// `int g dmu`, descending until cells are narrower than `resolution`.
    pub fn integrate(&self, resolution: f64, g: &mut dyn FnMut(f64) -> f64) -> f64 {
        let res = resolution.max(self.width() * 1e-14);
        integrate_rec(self.lo, self.hi, 1.0, res, 0, g)
    }

    /// Mass of `[a, b]` under the measure (exact up to `2^-depth_cap`).
    pub fn interval_mass(&self, a: f64, b: f64) -> f64 {
        if b <= a {
            return 0.0;
        }
        mass_rec(self.lo, self.hi, 1.0, a, b, 0)
    }

    /// Sample a point distributed by the measure.
    pub fn sample(&self, rng: &mut impl Rng) -> f64 {
        // 36 base-3 digits reach the double-precision floor.
        let mut u = 0.0_f64;
        let mut scale = 1.0_f64;
        for _ in 0..36 {
            scale /= 3.0;
            if rng.random::<bool>() {
                u += 2.0 * scale;
            }
        }
        self.lo + self.width() * u
    }
}

fn integrate_rec(
    lo: f64,
    hi: f64,
    mass: f64,
    resolution: f64,
    depth: u32,
    g: &mut dyn FnMut(f64) -> f64,
) -> f64 {
    let w = hi - lo;
    if w <= resolution || depth >= MAX_DEPTH {
        return mass * g(0.5 * (lo + hi));
    }
    let third = w / 3.0;
    integrate_rec(lo, lo + third, 0.5 * mass, resolution, depth + 1, g)
        + integrate_rec(hi - third, hi, 0.5 * mass, resolution, depth + 1, g)
}

fn mass_rec(lo: f64, hi: f64, mass: f64, a: f64, b: f64, depth: u32) -> f64 {
    if b <= lo || a >= hi {
        return 0.0;
    }
    if a <= lo && b >= hi {
        return mass;
    }
    if depth >= MAX_DEPTH {
        // Split the cell mass in proportion to overlap.
        let overlap = (b.min(hi) - a.max(lo)).max(0.0);
        return mass * overlap / (hi - lo);
    }
    let third = (hi - lo) / 3.0;
    mass_rec(lo, lo + third, 0.5 * mass, a, b, depth + 1)
        + mass_rec(hi - third, hi, 0.5 * mass, a, b, depth + 1)
}
