//! Drift measures, mollified drifts, and the Kato-type norms.
//!
//! A [`SignedMeasure`] is one of three constructive representations: a
//! pointwise-evaluable density, a Cantor-product singular measure
//! (middle-thirds Cantor measure along one axis, Lebesgue on the others,
//! restricted to a box), or a weighted sum. A [`DriftMeasure`] is one signed
//! measure per coordinate.
//!
//! The two norms that control everything downstream are
//!
//! * `N_t^alpha(mu) = sup_x int_0^t int s^{-(d+1)/2} e^{-alpha|x-y|^2/s}
//!   |mu|(dy) ds`, and
//! * `Lambda_t(mu) = sup_x int_0^t int q(s,x,y)/sqrt(s) |mu|(dy) ds` for a
//!   transition kernel `q`.
//!
//! Both decay to zero as `t -> 0` exactly when the measure is of Kato type;
//! [`kato_membership_profile`] checks the defining small-radius averages
//! directly. Suprema over `x` are taken over configurable finite grids
//! covering the measure's effective support plus a kernel-scale margin
//! (outside that region the integrand is dominated by interior values for
//! the measures shipped here). The inner time integrals carry an integrable
//! `s^{-1/2}` singularity after the spatial integral; the substitution
//! `s = u^2` removes it before Gauss-Legendre quadrature.

pub mod cantor;
pub mod spec;

use crate::error::{Error, Result};
use crate::geom::{dist2, Cube, SupGrid};
use crate::quad::{gl_on, sphere_rule, tensor_gl, unit_sphere_area};
use cantor::CantorInterval;
use rand::Rng;
use serde::{Deserialize, Serialize};
use spec::{DensitySpec, DriftSpec, MeasureSpec};
use statrs::function::erf::erf;
use std::f64::consts::PI;
use std::sync::Arc;

/// Quadrature configuration for measure integrals.
#[derive(Clone, Copy, Debug)]
pub struct MeasureQuad {
    /// Gauss-Legendre nodes per spatial axis.
    pub space_nodes: usize,
    /// Gauss-Legendre nodes for time integrals (after substitution).
    pub time_nodes: usize,
    /// Cantor cells are refined until narrower than `scale / cantor_divisor`.
    pub cantor_divisor: f64,
    /// Points per axis for supremum grids.
    pub sup_per_axis: usize,
    /// Relative tolerance for residual checks where an operation demands one.
    pub residual_rtol: f64,
}

impl Default for MeasureQuad {
    fn default() -> Self {
        MeasureQuad {
            space_nodes: 24,
            time_nodes: 32,
            cantor_divisor: 8.0,
            sup_per_axis: 5,
            residual_rtol: 5e-3,
        }
    }
}

// ---------------------------------------------------------------------------
// Densities
// ---------------------------------------------------------------------------

/// A pointwise-evaluable density with an effective support box.
#[derive(Clone)]
pub struct DensityFn {
    dim: usize,
    f: Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>,
    /// `None` means the density extends over the whole space (e.g. constant).
    pub support: Option<Cube>,
    /// Upper bound for `|f|` when known.
    pub sup_bound: Option<f64>,
}

impl std::fmt::Debug for DensityFn {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DensityFn")
            .field("dim", &self.dim)
            .field("support", &self.support)
            .field("sup_bound", &self.sup_bound)
            .finish()
    }
}

impl DensityFn {
    pub fn new(
        dim: usize,
        f: impl Fn(&[f64]) -> f64 + Send + Sync + 'static,
        support: Option<Cube>,
        sup_bound: Option<f64>,
    ) -> Self {
        DensityFn {
            dim,
            f: Arc::new(f),
            support,
            sup_bound,
        }
    }

    pub fn from_spec(dim: usize, spec: &DensitySpec) -> Result<Self> {
        spec.validate(dim)?;
        let support = spec.support(dim)?;
        let sup_bound = spec.sup_bound();
        let owned = spec.clone();
        Ok(DensityFn {
            dim,
            f: Arc::new(move |x: &[f64]| owned.eval(x)),
            support,
            sup_bound,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Pointwise value; the declared support box clips evaluation, so sums
    /// of densities with different supports combine consistently.
    #[inline]
    pub fn eval(&self, x: &[f64]) -> f64 {
        if let Some(s) = &self.support {
            if !s.contains(x) {
                return 0.0;
            }
        }
        (self.f)(x)
    }

    /// Pointwise absolute value.
    pub fn abs(&self) -> DensityFn {
        let f = self.f.clone();
        DensityFn {
            dim: self.dim,
            f: Arc::new(move |x: &[f64]| f(x).abs()),
            support: self.support.clone(),
            sup_bound: self.sup_bound,
        }
    }
}

// ---------------------------------------------------------------------------
// Signed measures
// ---------------------------------------------------------------------------

#[derive(Clone, Debug)]
pub enum Repr {
    Density(DensityFn),
    CantorProduct {
        axis: usize,
        weight: f64,
        region: Cube,
    },
    Sum(Vec<(f64, SignedMeasure)>),
}

/// A signed measure on R^d given by a constructive representation.
#[derive(Clone, Debug)]
pub struct SignedMeasure {
    dim: usize,
    repr: Repr,
}

impl SignedMeasure {
    pub fn density(f: DensityFn) -> Self {
        SignedMeasure {
            dim: f.dim(),
            repr: Repr::Density(f),
        }
    }

    pub fn cantor_product(dim: usize, axis: usize, weight: f64, region: Cube) -> Result<Self> {
        if axis >= dim || region.dim() != dim {
            return Err(Error::Domain(
                "cantor_product: axis/region dimension mismatch".into(),
            ));
        }
        Ok(SignedMeasure {
            dim,
            repr: Repr::CantorProduct {
                axis,
                weight,
                region,
            },
        })
    }

    pub fn weighted_sum(terms: Vec<(f64, SignedMeasure)>) -> Result<Self> {
        let dim = terms
            .first()
            .map(|(_, m)| m.dim)
            .ok_or_else(|| Error::Domain("weighted sum needs at least one term".into()))?;
        if terms.iter().any(|(_, m)| m.dim != dim) {
            return Err(Error::Domain(
                "weighted sum terms disagree on dimension".into(),
            ));
        }
        Ok(SignedMeasure {
            dim,
            repr: Repr::Sum(terms),
        })
    }

    pub fn zero(dim: usize) -> Self {
        SignedMeasure::density(DensityFn::new(dim, |_| 0.0, None, Some(0.0)))
    }

    pub fn from_spec(dim: usize, spec: &MeasureSpec) -> Result<Self> {
        match spec {
            MeasureSpec::Density { profile, support } => {
                let mut f = DensityFn::from_spec(dim, profile)?;
                if let Some(s) = support {
                    f.support = Some(s.build()?);
                }
                Ok(SignedMeasure::density(f))
            }
            MeasureSpec::CantorProduct {
                axis,
                weight,
                region,
            } => SignedMeasure::cantor_product(dim, *axis, *weight, region.build()?),
            MeasureSpec::Sum { terms } => {
                let built: Result<Vec<(f64, SignedMeasure)>> = terms
                    .iter()
                    .map(|t| Ok((t.coefficient, SignedMeasure::from_spec(dim, &t.measure)?)))
                    .collect();
                SignedMeasure::weighted_sum(built?)
            }
        }
    }

    /// Parse from a JSON description.
    pub fn from_json(dim: usize, text: &str) -> Result<Self> {
        let spec: MeasureSpec =
            serde_json::from_str(text).map_err(|e| Error::Config(format!("measure JSON: {e}")))?;
        SignedMeasure::from_spec(dim, &spec)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn repr(&self) -> &Repr {
        &self.repr
    }

    /// Flatten to a single signed density when every leaf is a density.
    pub fn as_pointwise_density(&self) -> Option<DensityFn> {
        match &self.repr {
            Repr::Density(f) => Some(f.clone()),
            Repr::CantorProduct { .. } => None,
            Repr::Sum(terms) => {
                let parts: Option<Vec<(f64, DensityFn)>> = terms
                    .iter()
                    .map(|(c, m)| m.as_pointwise_density().map(|f| (*c, f)))
                    .collect();
                let parts = parts?;
                let dim = self.dim;
                // Hull of supports; any unbounded leaf makes the sum unbounded.
                let mut support: Option<Cube> = None;
                let mut unbounded = false;
                for (_, f) in &parts {
                    match &f.support {
                        None => {
                            unbounded = true;
                            break;
                        }
                        Some(s) => {
                            support = Some(match support {
                                None => s.clone(),
                                Some(a) => a.hull(s),
                            });
                        }
                    }
                }
                let support = if unbounded { None } else { support };
                let bound = parts
                    .iter()
                    .map(|(c, f)| f.sup_bound.map(|b| c.abs() * b))
                    .try_fold(0.0, |acc, b| b.map(|b| acc + b));
                let fns: Vec<(f64, DensityFn)> = parts;
                Some(DensityFn::new(
                    dim,
                    move |x: &[f64]| fns.iter().map(|(c, f)| c * f.eval(x)).sum(),
                    support,
                    bound,
                ))
            }
        }
    }

    /// The total-variation measure `|mu|` as another (nonnegative) measure.
    ///
    /// Exact for densities (pointwise `|f|`; sums of densities are flattened
    /// first, so cancellations are respected) and for Cantor products. For
    /// sums that mix singular and density parts it is the
    /// triangle-inequality majorant `sum |c_i| |mu_i|`, exact when the parts
    /// do not cancel.
    pub fn abs(&self) -> SignedMeasure {
        if let Some(f) = self.as_pointwise_density() {
            return SignedMeasure::density(f.abs());
        }
        match &self.repr {
            Repr::Density(f) => SignedMeasure::density(f.abs()),
            Repr::CantorProduct {
                axis,
                weight,
                region,
            } => SignedMeasure {
                dim: self.dim,
                repr: Repr::CantorProduct {
                    axis: *axis,
                    weight: weight.abs(),
                    region: region.clone(),
                },
            },
            Repr::Sum(terms) => SignedMeasure {
                dim: self.dim,
                repr: Repr::Sum(terms.iter().map(|(c, m)| (c.abs(), m.abs())).collect()),
            },
        }
    }

    /// Effective support box; `None` when the measure extends everywhere.
    pub fn effective_support(&self) -> Option<Cube> {
        match &self.repr {
            Repr::Density(f) => f.support.clone(),
            Repr::CantorProduct { region, .. } => Some(region.clone()),
            Repr::Sum(terms) => {
                let mut acc: Option<Cube> = None;
                for (_, m) in terms {
                    let s = m.effective_support()?;
                    acc = Some(match acc {
                        None => s,
                        Some(a) => a.hull(&s),
                    });
                }
                acc
            }
        }
    }

    /// `int g dmu` for a bounded integrand. `window` restricts the domain
    /// (mandatory when both the window and the support are unbounded);
    /// `resolution` controls Cantor cell refinement and should match the
    /// integrand's length scale.
    pub fn integrate_against(
        &self,
        g: &mut dyn FnMut(&[f64]) -> f64,
        window: Option<&Cube>,
        resolution: f64,
        q: &MeasureQuad,
    ) -> Result<f64> {
        match &self.repr {
            Repr::Density(f) => {
                let domain = match (&f.support, window) {
                    (Some(s), Some(w)) => match s.intersect(w) {
                        Some(d) => d,
                        None => return Ok(0.0),
                    },
                    (Some(s), None) => s.clone(),
                    (None, Some(w)) => w.clone(),
                    (None, None) => {
                        return Err(Error::Domain(
                            "integration domain unbounded: density has no support box and no window was given"
                                .into(),
                        ))
                    }
                };
                Ok(tensor_gl(&domain, q.space_nodes, &mut |y: &[f64]| {
                    f.eval(y) * g(y)
                }))
            }
            Repr::CantorProduct {
                axis,
                weight,
                region,
            } => {
                let carrier = CantorInterval::new(region.lo[*axis], region.hi[*axis]);
                let clip = window.map(|w| (w.lo[*axis], w.hi[*axis]));
                let d = self.dim;
                if d == 1 {
                    let mut total = 0.0;
                    cantor_cells(&carrier, clip, resolution, &mut |center, mass| {
                        total += mass * g(&[center]);
                    });
                    return Ok(weight * total);
                }
                let cross = match transverse_cube(region, *axis, window) {
                    Some(c) => c,
                    None => return Ok(0.0),
                };
                let mut total = 0.0;
                let mut point = vec![0.0; d];
                cantor_cells(&carrier, clip, resolution, &mut |center, mass| {
                    let inner = tensor_gl(&cross, q.space_nodes, &mut |yt: &[f64]| {
                        let mut k = 0;
                        for i in 0..d {
                            if i == *axis {
                                point[i] = center;
                            } else {
                                point[i] = yt[k];
                                k += 1;
                            }
                        }
                        g(&point)
                    });
                    total += mass * inner;
                });
                Ok(weight * total)
            }
            Repr::Sum(terms) => {
                let mut acc = 0.0;
                for (c, m) in terms {
                    acc += c * m.integrate_against(g, window, resolution, q)?;
                }
                Ok(acc)
            }
        }
    }

    /// `int exp(-coeff |x - y|^2) dmu(y)`, the spatial integral underlying
    /// the Kato norms. Exploits the product structure: closed-form `erf`
    /// factors on Lebesgue axes of a Cantor product, recursion on the Cantor
    /// axis, windowed tensor quadrature for densities.
    pub fn integrate_gaussian(&self, x: &[f64], coeff: f64, q: &MeasureQuad) -> Result<f64> {
        debug_assert!(coeff > 0.0);
        match &self.repr {
            Repr::Density(f) => {
                // e^{-37} ~ 9e-17: the window captures the kernel mass.
                let half = (37.0 / coeff).sqrt();
                let window = Cube::from_center_half(x, half);
                let domain = match &f.support {
                    Some(s) => match s.intersect(&window) {
                        Some(d) => d,
                        None => return Ok(0.0),
                    },
                    None => window,
                };
                Ok(tensor_gl(&domain, q.space_nodes, &mut |y: &[f64]| {
                    f.eval(y) * (-coeff * dist2(x, y)).exp()
                }))
            }
            Repr::CantorProduct {
                axis,
                weight,
                region,
            } => {
                let mut prod = *weight;
                for i in 0..self.dim {
                    if i == *axis {
                        continue;
                    }
                    prod *= gaussian_segment_integral(coeff, region.lo[i], region.hi[i], x[i]);
                    if prod == 0.0 {
                        return Ok(0.0);
                    }
                }
                let carrier = CantorInterval::new(region.lo[*axis], region.hi[*axis]);
                let sigma = 1.0 / (2.0 * coeff).sqrt();
                let res = sigma / q.cantor_divisor;
                let xa = x[*axis];
                let axis_int =
                    carrier.integrate(res, &mut |u| (-coeff * (u - xa) * (u - xa)).exp());
                Ok(prod * axis_int)
            }
            Repr::Sum(terms) => {
                let mut acc = 0.0;
                for (c, m) in terms {
                    acc += c * m.integrate_gaussian(x, coeff, q)?;
                }
                Ok(acc)
            }
        }
    }

    /// Mass of `|mu|` restricted to a box.
    pub fn abs_mass_on(&self, cube: &Cube, q: &MeasureQuad) -> Result<f64> {
        match &self.repr {
            Repr::Density(f) => {
                let domain = match &f.support {
                    Some(s) => match s.intersect(cube) {
                        Some(d) => d,
                        None => return Ok(0.0),
                    },
                    None => cube.clone(),
                };
                Ok(tensor_gl(&domain, q.space_nodes, &mut |y: &[f64]| {
                    f.eval(y).abs()
                }))
            }
            Repr::CantorProduct {
                axis,
                weight,
                region,
            } => {
                let carrier = CantorInterval::new(region.lo[*axis], region.hi[*axis]);
                let axis_mass = carrier.interval_mass(cube.lo[*axis], cube.hi[*axis]);
                let mut prod = weight.abs() * axis_mass;
                for i in 0..self.dim {
                    if i == *axis {
                        continue;
                    }
                    let overlap =
                        (cube.hi[i].min(region.hi[i]) - cube.lo[i].max(region.lo[i])).max(0.0);
                    prod *= overlap;
                }
                Ok(prod)
            }
            Repr::Sum(terms) => {
                let mut acc = 0.0;
                for (c, m) in terms {
                    acc += c.abs() * m.abs_mass_on(cube, q)?;
                }
                Ok(acc)
            }
        }
    }

    /// Draw `count` points distributed as `|mu|` restricted to `cube`.
    pub fn sample_abs(
        &self,
        cube: &Cube,
        count: usize,
        rng: &mut impl Rng,
        q: &MeasureQuad,
    ) -> Result<Vec<Vec<f64>>> {
        let mut out = Vec::with_capacity(count);
        for _ in 0..count {
            out.push(self.sample_abs_one(cube, rng, q)?);
        }
        Ok(out)
    }

    fn sample_abs_one(
        &self,
        cube: &Cube,
        rng: &mut impl Rng,
        q: &MeasureQuad,
    ) -> Result<Vec<f64>> {
        match &self.repr {
            Repr::Density(f) => {
                let domain = match &f.support {
                    Some(s) => s.intersect(cube).ok_or_else(|| {
                        Error::Domain("sampling: support does not meet the cube".into())
                    })?,
                    None => cube.clone(),
                };
                // Rejection sampling with a scanned envelope.
                let mut bound: f64 = f.sup_bound.unwrap_or(0.0);
                if bound == 0.0 {
                    for p in domain.grid(8) {
                        bound = bound.max(f.eval(&p).abs());
                    }
                }
                if bound == 0.0 {
                    return Err(Error::Domain(
                        "sampling: measure vanishes on the cube".into(),
                    ));
                }
                let mut envelope = bound * 1.2;
                for _ in 0..1_000_000 {
                    let y: Vec<f64> = (0..self.dim)
                        .map(|i| {
                            domain.lo[i] + rng.random::<f64>() * (domain.hi[i] - domain.lo[i])
                        })
                        .collect();
                    let v = f.eval(&y).abs();
                    if v > envelope {
                        envelope = v * 1.2; // adapt and keep going
                    }
                    if rng.random::<f64>() * envelope < v {
                        return Ok(y);
                    }
                }
                Err(Error::BudgetExhausted(
                    "rejection sampling found no mass".into(),
                ))
            }
            Repr::CantorProduct { axis, region, .. } => {
                let carrier = CantorInterval::new(region.lo[*axis], region.hi[*axis]);
                for _ in 0..1_000_000 {
                    let u = carrier.sample(rng);
                    if u < cube.lo[*axis] || u > cube.hi[*axis] {
                        continue;
                    }
                    let mut y = vec![0.0; self.dim];
                    let mut ok = true;
                    for i in 0..self.dim {
                        if i == *axis {
                            y[i] = u;
                        } else {
                            let lo = cube.lo[i].max(region.lo[i]);
                            let hi = cube.hi[i].min(region.hi[i]);
                            if !(lo < hi) {
                                ok = false;
                                break;
                            }
                            y[i] = lo + rng.random::<f64>() * (hi - lo);
                        }
                    }
                    if ok {
                        return Ok(y);
                    }
                }
                Err(Error::BudgetExhausted(
                    "Cantor sampling: cube carries too little mass".into(),
                ))
            }
            Repr::Sum(terms) => {
                let masses: Result<Vec<f64>> = terms
                    .iter()
                    .map(|(c, m)| Ok(c.abs() * m.abs_mass_on(cube, q)?))
                    .collect();
                let masses = masses?;
                let total: f64 = masses.iter().sum();
                if total <= 0.0 {
                    return Err(Error::Domain(
                        "sampling: measure vanishes on the cube".into(),
                    ));
                }
                let mut pick = rng.random::<f64>() * total;
                for ((_, m), mass) in terms.iter().zip(&masses) {
                    if pick <= *mass {
                        return m.sample_abs_one(cube, rng, q);
                    }
                    pick -= mass;
                }
                terms.last().unwrap().1.sample_abs_one(cube, rng, q)
            }
        }
    }
}

/// Closed form `int_a^b exp(-coeff (x - y)^2) dy`.
fn gaussian_segment_integral(coeff: f64, a: f64, b: f64, x: f64) -> f64 {
    let s = coeff.sqrt();
    0.5 * (PI / coeff).sqrt() * (erf(s * (b - x)) - erf(s * (a - x)))
}

/// Cross-section of `region` orthogonal to `axis`, intersected with `window`.
fn transverse_cube(region: &Cube, axis: usize, window: Option<&Cube>) -> Option<Cube> {
    let d = region.dim();
    debug_assert!(d >= 2);
    let mut lo = Vec::with_capacity(d - 1);
    let mut hi = Vec::with_capacity(d - 1);
    for i in 0..d {
        if i == axis {
            continue;
        }
        let (mut l, mut h) = (region.lo[i], region.hi[i]);
        if let Some(w) = window {
            l = l.max(w.lo[i]);
            h = h.min(w.hi[i]);
        }
        if !(l < h) {
            return None;
        }
        lo.push(l);
        hi.push(h);
    }
    Some(Cube { lo, hi })
}

/// Enumerate Cantor leaf cells `(center, mass)` intersecting the clip range.
fn cantor_cells(
    carrier: &CantorInterval,
    clip: Option<(f64, f64)>,
    resolution: f64,
    visit: &mut impl FnMut(f64, f64),
) {
    fn rec(
        lo: f64,
        hi: f64,
        mass: f64,
        clip: Option<(f64, f64)>,
        resolution: f64,
        depth: u32,
        visit: &mut impl FnMut(f64, f64),
    ) {
        if let Some((a, b)) = clip {
            if hi < a || lo > b {
                return;
            }
        }
        let w = hi - lo;
        if w <= resolution || depth >= 48 {
            visit(0.5 * (lo + hi), mass);
            return;
        }
        let third = w / 3.0;
        rec(lo, lo + third, 0.5 * mass, clip, resolution, depth + 1, visit);
        rec(hi - third, hi, 0.5 * mass, clip, resolution, depth + 1, visit);
    }
    let res = resolution.max(carrier.width() * 1e-14);
    rec(carrier.lo, carrier.hi, 1.0, clip, res, 0, visit);
}

// ---------------------------------------------------------------------------
// Drift measures
// ---------------------------------------------------------------------------

/// A vector of `d` signed measures: the drift of the diffusion.
#[derive(Clone, Debug)]
pub struct DriftMeasure {
    dim: usize,
    components: Vec<SignedMeasure>,
}

impl DriftMeasure {
    pub fn new(components: Vec<SignedMeasure>) -> Result<Self> {
        let dim = components
            .first()
            .map(|m| m.dim())
            .ok_or_else(|| Error::Domain("drift needs at least one component".into()))?;
        if components.len() != dim {
            return Err(Error::Domain(format!(
                "drift must have d components in dimension d (got {} in d={dim})",
                components.len()
            )));
        }
        if components.iter().any(|m| m.dim() != dim) {
            return Err(Error::Domain(
                "drift components disagree on dimension".into(),
            ));
        }
        Ok(DriftMeasure { dim, components })
    }

    pub fn zero(dim: usize) -> Self {
        DriftMeasure {
            dim,
            components: (0..dim).map(|_| SignedMeasure::zero(dim)).collect(),
        }
    }

    pub fn from_spec(spec: &DriftSpec) -> Result<Self> {
        if spec.components.len() != spec.dimension {
            return Err(Error::Config(format!(
                "drift spec: {} components for dimension {}",
                spec.components.len(),
                spec.dimension
            )));
        }
        let comps: Result<Vec<SignedMeasure>> = spec
            .components
            .iter()
            .map(|m| SignedMeasure::from_spec(spec.dimension, m))
            .collect();
        DriftMeasure::new(comps?)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn components(&self) -> &[SignedMeasure] {
        &self.components
    }

    pub fn component(&self, i: usize) -> &SignedMeasure {
        &self.components[i]
    }

    /// `sum_i |mu_i|`, the measure entering the drift-part tail bounds.
    pub fn sum_abs(&self) -> SignedMeasure {
        SignedMeasure::weighted_sum(self.components.iter().map(|m| (1.0, m.abs())).collect())
            .expect("nonempty by construction")
    }

    /// Hull of component supports (`None` when any component is unbounded).
    pub fn effective_support(&self) -> Option<Cube> {
        let mut acc: Option<Cube> = None;
        for m in &self.components {
            let s = m.effective_support()?;
            acc = Some(match acc {
                None => s,
                Some(a) => a.hull(&s),
            });
        }
        acc
    }
}

// ---------------------------------------------------------------------------
// Mollifiers
// ---------------------------------------------------------------------------

/// The standard smooth bump `phi(x) = c_d exp(-1/(1-|x|^2))` on the unit
/// ball, normalized to unit mass, with its dyadic rescalings
/// `phi_n(x) = 2^{nd} phi(2^n x)` (support radius `2^{-n}`).
#[derive(Clone, Copy, Debug)]
pub struct Mollifier {
    pub dim: usize,
    pub level: u32,
}

impl Mollifier {
    pub fn new(dim: usize, level: u32) -> Self {
        Mollifier { dim, level }
    }

    /// Normalizing constant of the base bump in dimension `d <= 8`.
    pub fn normalizer(dim: usize) -> f64 {
        use std::sync::OnceLock;
        static CACHE: OnceLock<Vec<f64>> = OnceLock::new();
        let cache = CACHE.get_or_init(|| {
            (0..=8)
                .map(|d| {
                    if d == 0 {
                        return f64::NAN;
                    }
                    let radial: f64 = gl_on(0.0, 1.0, 80)
                        .into_iter()
                        .map(|(r, w)| {
                            let u = 1.0 - r * r;
                            if u <= 0.0 {
                                0.0
                            } else {
                                w * (-1.0 / u).exp() * r.powi(d as i32 - 1)
                            }
                        })
                        .sum();
                    1.0 / (unit_sphere_area(d) * radial)
                })
                .collect()
        });
        cache[dim]
    }

    pub fn support_radius(&self) -> f64 {
        0.5_f64.powi(self.level as i32)
    }

    /// `phi_n(v)`.
    #[inline]
    pub fn eval(&self, v: &[f64]) -> f64 {
        let scale = 2.0_f64.powi(self.level as i32);
        let r2: f64 = v
            .iter()
            .map(|vi| {
                let s = vi * scale;
                s * s
            })
            .sum();
        if r2 >= 1.0 {
            return 0.0;
        }
        Self::normalizer(self.dim) * scale.powi(self.dim as i32) * (-1.0 / (1.0 - r2)).exp()
    }

    /// Quadrature check of the unit mass (any level).
    pub fn mass_by_quadrature(&self, nodes: usize) -> f64 {
        let r = self.support_radius();
        let cube = Cube::from_center_half(&vec![0.0; self.dim], r);
        tensor_gl(&cube, nodes, &mut |v: &[f64]| self.eval(v))
    }
}

/// The mollified drift `b^(n)(x)`, one convolution `phi_n * mu_i` per
/// coordinate. Errors with a residual estimate if refinement moves the value
/// by more than `q.residual_rtol` relatively.
pub fn mollified_drift(
    mu: &DriftMeasure,
    level: u32,
    x: &[f64],
    q: &MeasureQuad,
) -> Result<Vec<f64>> {
    let coarse = mollified_drift_unchecked(mu, level, x, q)?;
    let mut finer = *q;
    finer.space_nodes += 6;
    finer.cantor_divisor *= 2.0;
    let fine = mollified_drift_unchecked(mu, level, x, &finer)?;
    let scale = fine
        .iter()
        .map(|v| v.abs())
        .fold(0.0_f64, f64::max)
        .max(1e-12);
    for (c, f) in coarse.iter().zip(&fine) {
        let residual = (c - f).abs();
        if residual > q.residual_rtol * scale {
            return Err(Error::QuadratureResidual {
                value: *f,
                residual,
            });
        }
    }
    Ok(fine)
}

/// Same convolution without the refinement check (hot paths).
pub fn mollified_drift_unchecked(
    mu: &DriftMeasure,
    level: u32,
    x: &[f64],
    q: &MeasureQuad,
) -> Result<Vec<f64>> {
    let moll = Mollifier::new(mu.dim(), level);
    let r = moll.support_radius();
    let window = Cube::from_center_half(x, r);
    let resolution = r / q.cantor_divisor;
    let mut out = Vec::with_capacity(mu.dim());
    let mut diff = vec![0.0; mu.dim()];
    for comp in mu.components() {
        let v = comp.integrate_against(
            &mut |y: &[f64]| {
                for i in 0..y.len() {
                    diff[i] = x[i] - y[i];
                }
                moll.eval(&diff)
            },
            Some(&window),
            resolution,
            q,
        )?;
        if !v.is_finite() {
            return Err(Error::Domain(
                "mollified drift evaluated to a non-finite value".into(),
            ));
        }
        out.push(v);
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Transition kernels (for Lambda_t)
// ---------------------------------------------------------------------------

/// Envelope constants `(C4, C5, C6)` for the Gaussian upper bound
/// `q(s,x,y) <= C4 e^{C5 s} s^{-d/2} e^{-C6 |x-y|^2/s}`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvelopeConstants {
    pub c4: f64,
    pub c5: f64,
    pub c6: f64,
}

impl Default for EnvelopeConstants {
    fn default() -> Self {
        EnvelopeConstants {
            c4: 2.0,
            c5: 1.0,
            c6: 0.25,
        }
    }
}

/// A transition-kernel evaluator `q(s, x, y)`.
pub trait TransitionKernel: Sync {
    fn dim(&self) -> usize;

    fn eval(&self, s: f64, x: &[f64], y: &[f64]) -> Result<f64>;

    /// `int q(s, x, y) dmu(y)`; kernels with Gaussian structure override
    /// this with the closed-form reduction.
    fn integrate_measure(
        &self,
        s: f64,
        x: &[f64],
        mu: &SignedMeasure,
        q: &MeasureQuad,
    ) -> Result<f64> {
        let window = Cube::from_center_half(x, 9.0 * s.sqrt());
        let mut failure: Option<Error> = None;
        let val = mu.integrate_against(
            &mut |y: &[f64]| match self.eval(s, x, y) {
                Ok(v) => v,
                Err(e) => {
                    if failure.is_none() {
                        failure = Some(e);
                    }
                    0.0
                }
            },
            Some(&window),
            (s.sqrt() / q.cantor_divisor).max(1e-12),
            q,
        )?;
        match failure {
            Some(e) => Err(e),
            None => Ok(val),
        }
    }
}

/// The drift-free Gaussian kernel `q = p`.
pub struct GaussianKernel {
    pub dim: usize,
}

impl TransitionKernel for GaussianKernel {
    fn dim(&self) -> usize {
        self.dim
    }

    fn eval(&self, s: f64, x: &[f64], y: &[f64]) -> Result<f64> {
        crate::kernels::gaussian_p(s, x, y)
    }

    fn integrate_measure(
        &self,
        s: f64,
        x: &[f64],
        mu: &SignedMeasure,
        q: &MeasureQuad,
    ) -> Result<f64> {
        let norm = (2.0 * PI * s).powf(-(self.dim as f64) / 2.0);
        Ok(norm * mu.integrate_gaussian(x, 1.0 / (2.0 * s), q)?)
    }
}

/// The Gaussian envelope proxy with constants `(C4, C5, C6)`.
pub struct EnvelopeKernel {
    pub dim: usize,
    pub constants: EnvelopeConstants,
}

impl TransitionKernel for EnvelopeKernel {
    fn dim(&self) -> usize {
        self.dim
    }

    fn eval(&self, s: f64, x: &[f64], y: &[f64]) -> Result<f64> {
        if !(s > 0.0) {
            return Err(Error::Domain("envelope kernel requires s > 0".into()));
        }
        let c = self.constants;
        Ok(c.c4
            * (c.c5 * s).exp()
            * s.powf(-(self.dim as f64) / 2.0)
            * (-c.c6 * dist2(x, y) / s).exp())
    }

    fn integrate_measure(
        &self,
        s: f64,
        x: &[f64],
        mu: &SignedMeasure,
        q: &MeasureQuad,
    ) -> Result<f64> {
        let c = self.constants;
        let norm = c.c4 * (c.c5 * s).exp() * s.powf(-(self.dim as f64) / 2.0);
        Ok(norm * mu.integrate_gaussian(x, c.c6 / s, q)?)
    }
}

// ---------------------------------------------------------------------------
// Kato norms
// ---------------------------------------------------------------------------

/// Supremum grid covering the measure's effective support plus a margin of
/// three kernel standard deviations `sqrt(t / 2 alpha)`. Translation-
/// invariant (unbounded) measures use a single point.
pub fn kato_sup_grid(mu: &SignedMeasure, t: f64, alpha: f64, per_axis: usize) -> SupGrid {
    match mu.effective_support() {
        Some(s) => {
            let margin = 3.0 * (t / (2.0 * alpha)).sqrt();
            SupGrid::over_cube(&s.inflate(margin), per_axis)
        }
        None => SupGrid::single(vec![0.0; mu.dim()]),
    }
}

/// The Kato norm
/// `N_t^alpha(mu) = sup_x int_0^t int s^{-(d+1)/2} e^{-alpha|x-y|^2/s} |mu|(dy) ds`,
/// with the supremum over the given grid.
///
/// A divergent inner integral (integrand slope `<= -1` at small times) is
/// reported as [`Error::KatoDivergent`]: the measure is not of Kato type at
/// this resolution.
pub fn kato_norm_n(
    mu_abs: &SignedMeasure,
    t: f64,
    alpha: f64,
    grid: &SupGrid,
    q: &MeasureQuad,
) -> Result<f64> {
    if !(t > 0.0 && alpha > 0.0) {
        return Err(Error::Domain(format!(
            "kato_norm_n requires t > 0 and alpha > 0 (got t={t}, alpha={alpha})"
        )));
    }
    let d = mu_abs.dim() as f64;
    let mut sup = 0.0_f64;
    for x in &grid.points {
        // s = u^2: ds s^{-(d+1)/2} = 2 u^{-d} du, removing the s^{-1/2}
        // left after the spatial integral.
        let rule = gl_on(0.0, t.sqrt(), q.time_nodes);
        let mut integrand = Vec::with_capacity(rule.len());
        for &(u, _) in &rule {
            let s = u * u;
            let spatial = mu_abs.integrate_gaussian(x, alpha / s, q)?;
            integrand.push(2.0 * u.powf(-d) * spatial);
        }
        // Integrability check at the two smallest nodes.
        let (f1, f2) = (integrand[0], integrand[1]);
        if f1 > 1e-300 && f2 > 1e-300 {
            let slope = (f1 / f2).ln() / (rule[0].0 / rule[1].0).ln();
            if slope <= -0.98 {
                let partial: f64 = rule
                    .iter()
                    .zip(&integrand)
                    .map(|(&(_, w), &f)| w * f)
                    .sum();
                return Err(Error::KatoDivergent { partial, slope });
            }
        }
        let val: f64 = rule
            .iter()
            .zip(&integrand)
            .map(|(&(_, w), &f)| w * f)
            .sum();
        sup = sup.max(val);
    }
    Ok(sup)
}

/// `Lambda_t(mu) = sup_x int_0^t int q(s,x,y)/sqrt(s) |mu|(dy) ds` for a
/// transition-kernel evaluator (exact Gaussian, parametrix, or envelope).
pub fn lambda_norm(
    mu_abs: &SignedMeasure,
    t: f64,
    kernel: &dyn TransitionKernel,
    grid: &SupGrid,
    q: &MeasureQuad,
) -> Result<f64> {
    if !(t > 0.0) {
        return Err(Error::Domain("lambda_norm requires t > 0".into()));
    }
    let mut sup = 0.0_f64;
    for x in &grid.points {
        let mut val = 0.0;
        for (u, w) in gl_on(0.0, t.sqrt(), q.time_nodes) {
            let s = u * u;
            // ds / sqrt(s) = 2 du
            val += 2.0 * w * kernel.integrate_measure(s, x, mu_abs, q)?;
        }
        sup = sup.max(val);
    }
    Ok(sup)
}

// ---------------------------------------------------------------------------
// Kato membership profile
// ---------------------------------------------------------------------------

/// Small-radius averages `sup_x int_{|x-y|<=r} |mu|(dy) / |x-y|^{d-1}`
/// against a decreasing grid of radii, with a decay diagnostic.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct KatoProfile {
    pub radii: Vec<f64>,
    pub values: Vec<f64>,
    /// Values decayed below `threshold_ratio * max`: consistent with
    /// membership in the Kato class at this resolution.
    pub consistent_with_kd1: bool,
    pub threshold_ratio: f64,
    pub dim: usize,
    /// The class is a hypothesis of the theory only for `d >= 3`.
    pub outside_theory_dim: bool,
}

impl KatoProfile {
    /// CSV with columns `(r, value)`.
    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["r", "value"])?;
        for (r, v) in self.radii.iter().zip(&self.values) {
            wtr.write_record([r.to_string(), v.to_string()])?;
        }
        wtr.flush()?;
        Ok(())
    }

    /// Fitted exponent of `value ~ C r^p`.
    pub fn fitted_exponent(&self) -> f64 {
        crate::stats::loglog_slope(&self.radii, &self.values)
    }
}

/// Default profile grid: interior points of the support for densities, and
/// points on the Cantor carrier (where the averages peak) for Cantor
/// products.
pub fn profile_grid(mu: &SignedMeasure, per_axis: usize) -> SupGrid {
    fn cantor_points(m: &SignedMeasure) -> Option<Vec<Vec<f64>>> {
        match m.repr() {
            Repr::CantorProduct { axis, region, .. } => {
                let c = region.center();
                let (lo, hi) = (region.lo[*axis], region.hi[*axis]);
                let w = hi - lo;
                // 0, 1/4, 3/4, 1 in carrier coordinates all lie on the support.
                Some(
                    [0.0, 0.25, 0.75, 1.0]
                        .iter()
                        .map(|f| {
                            let mut p = c.clone();
                            p[*axis] = lo + f * w;
                            p
                        })
                        .collect(),
                )
            }
            Repr::Sum(terms) => {
                let mut pts = Vec::new();
                for (_, t) in terms {
                    if let Some(mut p) = cantor_points(t) {
                        pts.append(&mut p);
                    }
                }
                if pts.is_empty() {
                    None
                } else {
                    Some(pts)
                }
            }
            _ => None,
        }
    }
    if let Some(pts) = cantor_points(mu) {
        return SupGrid::from_points(pts);
    }
    match mu.effective_support() {
        Some(s) => SupGrid::over_cube(&s, per_axis),
        None => SupGrid::single(vec![0.0; mu.dim()]),
    }
}

/// Evaluate the membership profile over a decreasing grid of radii.
pub fn kato_membership_profile(
    mu_abs: &SignedMeasure,
    radii: &[f64],
    grid: &SupGrid,
    threshold_ratio: f64,
    q: &MeasureQuad,
) -> Result<KatoProfile> {
    if radii.is_empty() || radii.iter().any(|r| *r <= 0.0) {
        return Err(Error::Domain("profile radii must be positive".into()));
    }
    if radii.windows(2).any(|w| w[0] <= w[1]) {
        return Err(Error::Domain(
            "profile radii must be strictly decreasing".into(),
        ));
    }
    let mut values = Vec::with_capacity(radii.len());
    for &r in radii {
        let mut sup = 0.0_f64;
        for x in &grid.points {
            sup = sup.max(profile_integral(mu_abs, x, r, q)?);
        }
        values.push(sup);
    }
    let peak = values.iter().cloned().fold(0.0_f64, f64::max);
    let last = *values.last().unwrap();
    let consistent = peak > 0.0 && last < threshold_ratio * peak;
    Ok(KatoProfile {
        radii: radii.to_vec(),
        values,
        consistent_with_kd1: consistent,
        threshold_ratio,
        dim: mu_abs.dim(),
        outside_theory_dim: mu_abs.dim() < 3,
    })
}

/// `int_{|x-y|<=r} |x-y|^{1-d} dmu(y)` for one center.
fn profile_integral(mu: &SignedMeasure, x: &[f64], r: f64, q: &MeasureQuad) -> Result<f64> {
    let d = mu.dim();
    if d > 3 {
        return Err(Error::Domain(
            "membership profile implemented for d <= 3".into(),
        ));
    }
    match mu.repr() {
        Repr::Density(f) => {
            // In polar coordinates the |x-y|^{1-d} weight cancels the
            // Jacobian: int_0^r [sphere sum of f] drho. The substitution
            // rho = v^2 additionally absorbs inverse-square-root density
            // singularities at the center.
            let sphere = sphere_rule(d, (q.space_nodes / 2).max(6))?;
            let mut y = vec![0.0; d];
            let val = gl_on(0.0, r.sqrt(), q.time_nodes)
                .into_iter()
                .map(|(v, w)| {
                    let rho = v * v;
                    let shell: f64 = sphere
                        .iter()
                        .map(|(omega, sw)| {
                            for i in 0..d {
                                y[i] = x[i] + rho * omega[i];
                            }
                            sw * f.eval(&y)
                        })
                        .sum();
                    2.0 * v * w * shell
                })
                .sum();
            Ok(val)
        }
        Repr::CantorProduct {
            axis,
            weight,
            region,
        } => {
            let carrier = CantorInterval::new(region.lo[*axis], region.hi[*axis]);
            // Transverse clearance from x to the region boundary clips the
            // cross-section disc; keep probe radii below the clearance for
            // the exact closed forms.
            let mut clearance = f64::INFINITY;
            for i in 0..d {
                if i == *axis {
                    continue;
                }
                clearance = clearance.min((x[i] - region.lo[i]).min(region.hi[i] - x[i]));
            }
            let xa = x[*axis];
            let res = r * 1e-4;
            let val = carrier.integrate(res, &mut |ya| {
                let u = (ya - xa).abs().max(res * 0.5);
                if u >= r {
                    return 0.0;
                }
                let cap = (r * r - u * u).sqrt().min(clearance.max(0.0));
                match d {
                    1 => 1.0,
                    2 => 2.0 * (cap / u).asinh(),
                    _ => PI * (1.0 + (cap / u).powi(2)).ln(),
                }
            });
            Ok(weight.abs() * val)
        }
        Repr::Sum(terms) => {
            let mut acc = 0.0;
            for (c, m) in terms {
                acc += c.abs() * profile_integral(&m.abs(), x, r, q)?;
            }
            Ok(acc)
        }
    }
}

/// Profile value bound for a bounded density: `M sigma_{d-1} r` (radial
/// integral of a constant).
pub fn bounded_density_profile_bound(sup: f64, d: usize, r: f64) -> f64 {
    sup * unit_sphere_area(d) * r
}

#[cfg(test)]
mod tests;
