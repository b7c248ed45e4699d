//! JSON-facing descriptions of measures and drifts.
//!
//! Example:
//!
//! ```json
//! { "kind": "density",
//!   "profile": { "name": "gaussian_bump", "amplitude": 1.0, "width": 1.0,
//!                "center": [0.0, 0.0, 0.0] } }
//! ```
//!
//! ```json
//! { "kind": "cantor_product", "axis": 2, "weight": 1.0,
//!   "region": { "lo": [-1, -1, 0], "hi": [1, 1, 1] } }
//! ```
//!
//! ```json
//! { "kind": "sum", "terms": [
//!     { "coefficient": 0.5, "measure": { "kind": "density",
//!         "profile": { "name": "constant", "value": 1.0 } } } ] }
//! ```

use crate::error::{Error, Result};
use crate::geom::Cube;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CubeSpec {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl CubeSpec {
    pub fn build(&self) -> Result<Cube> {
        Cube::new(self.lo.clone(), self.hi.clone())
    }

    pub fn from_cube(c: &Cube) -> Self {
        CubeSpec {
            lo: c.lo.clone(),
            hi: c.hi.clone(),
        }
    }
}

/// Named scalar density profiles.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case", deny_unknown_fields)]
pub enum DensitySpec {
    /// `f = value` everywhere (Lebesgue measure scaled by `value`).
    Constant { value: f64 },
    /// `f(x) = amplitude * exp(-|x - center|^2 / (2 width^2))`.
    GaussianBump {
        amplitude: f64,
        width: f64,
        center: Vec<f64>,
    },
    /// Compactly supported smooth bump:
    /// `f(x) = amplitude * exp(1 - 1/(1 - |x-center|^2/radius^2))` inside the
    /// ball of `radius`, zero outside (normalized to peak `amplitude`).
    SmoothBump {
        amplitude: f64,
        radius: f64,
        center: Vec<f64>,
    },
    /// `f(x) = |x - center|^{-exponent}` inside the ball of `radius`, zero
    /// outside. For `exponent * p < d` this is an L^p density with `p > d`
    /// achievable, while still unbounded at the center.
    RadialPower {
        exponent: f64,
        radius: f64,
        center: Vec<f64>,
    },
    /// Thin slab of total thickness `thickness` orthogonal to `axis` at
    /// `position`, value `1/thickness` inside, cross-section `[-cross_half_width,
    /// cross_half_width]` on the other axes. As `thickness -> 0` this
    /// approximates a hyperplane surface measure (which is *not* of Kato
    /// type for the Newtonian kernel: its profile plateaus).
    Slab {
        axis: usize,
        position: f64,
        thickness: f64,
        cross_half_width: f64,
    },
    /// `f(x) = coefficient * x[axis]` on `region`, zero outside. Useful for
    /// linear (Ornstein-Uhlenbeck type) drifts restricted to a large box.
    Linear {
        axis: usize,
        coefficient: f64,
        region: CubeSpec,
    },
}

impl DensitySpec {
    /// Pointwise evaluation in dimension `dim`.
    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            DensitySpec::Constant { value } => *value,
            DensitySpec::GaussianBump {
                amplitude,
                width,
                center,
            } => {
                let r2 = crate::geom::dist2(x, center);
                amplitude * (-r2 / (2.0 * width * width)).exp()
            }
            DensitySpec::SmoothBump {
                amplitude,
                radius,
                center,
            } => {
                let u = crate::geom::dist2(x, center) / (radius * radius);
                if u >= 1.0 {
                    0.0
                } else {
                    amplitude * (1.0 - 1.0 / (1.0 - u)).exp()
                }
            }
            DensitySpec::RadialPower {
                exponent,
                radius,
                center,
            } => {
                let r = crate::geom::dist2(x, center).sqrt();
                if r > *radius {
                    0.0
                } else {
                    r.powf(-exponent)
                }
            }
            DensitySpec::Slab {
                axis,
                position,
                thickness,
                cross_half_width,
            } => {
                let inside_axis = (x[*axis] - position).abs() <= 0.5 * thickness;
                let inside_cross = x
                    .iter()
                    .enumerate()
                    .all(|(i, xi)| i == *axis || xi.abs() <= *cross_half_width);
                if inside_axis && inside_cross {
                    1.0 / thickness
                } else {
                    0.0
                }
            }
            DensitySpec::Linear {
                axis,
                coefficient,
                region,
            } => {
                let inside = x
                    .iter()
                    .enumerate()
                    .all(|(i, xi)| region.lo[i] <= *xi && *xi <= region.hi[i]);
                if inside {
                    coefficient * x[*axis]
                } else {
                    0.0
                }
            }
        }
    }

    /// Effective support box (`None` = the whole space). Rapidly decaying
    /// profiles report the box outside which they are numerically zero.
    pub fn support(&self, dim: usize) -> Result<Option<Cube>> {
        Ok(match self {
            DensitySpec::Constant { .. } => None,
            DensitySpec::GaussianBump { width, center, .. } => Some(Cube::from_center_half(
                center,
                // exp(-32) ~ 1.3e-14: numerically zero against any O(1) kernel
                8.0 * width,
            )),
            DensitySpec::SmoothBump { radius, center, .. } => {
                Some(Cube::from_center_half(center, *radius))
            }
            DensitySpec::RadialPower { radius, center, .. } => {
                Some(Cube::from_center_half(center, *radius))
            }
            DensitySpec::Slab {
                axis,
                position,
                thickness,
                cross_half_width,
            } => {
                let mut lo = vec![-cross_half_width; dim];
                let mut hi = vec![*cross_half_width; dim];
                lo[*axis] = position - 0.5 * thickness;
                hi[*axis] = position + 0.5 * thickness;
                Some(Cube::new(lo, hi)?)
            }
            DensitySpec::Linear { region, .. } => Some(region.build()?),
        })
    }

    /// A cheap upper bound for `|f|` when one is available in closed form.
    pub fn sup_bound(&self) -> Option<f64> {
        match self {
            DensitySpec::Constant { value } => Some(value.abs()),
            DensitySpec::GaussianBump { amplitude, .. } => Some(amplitude.abs()),
            DensitySpec::SmoothBump { amplitude, .. } => Some(amplitude.abs()),
            DensitySpec::RadialPower { .. } => None,
            DensitySpec::Slab { thickness, .. } => Some(1.0 / thickness),
            DensitySpec::Linear {
                coefficient,
                region,
                axis,
            } => {
                let m = region.lo[*axis].abs().max(region.hi[*axis].abs());
                Some(coefficient.abs() * m)
            }
        }
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        let check_center = |c: &Vec<f64>| -> Result<()> {
            if c.len() != dim {
                return Err(Error::Config(format!(
                    "density center has dimension {}, expected {dim}",
                    c.len()
                )));
            }
            Ok(())
        };
        match self {
            DensitySpec::Constant { .. } => Ok(()),
            DensitySpec::GaussianBump { width, center, .. } => {
                if *width <= 0.0 {
                    return Err(Error::Config("gaussian_bump width must be positive".into()));
                }
                check_center(center)
            }
            DensitySpec::SmoothBump { radius, center, .. }
            | DensitySpec::RadialPower { radius, center, .. } => {
                if *radius <= 0.0 {
                    return Err(Error::Config("bump radius must be positive".into()));
                }
                check_center(center)
            }
            DensitySpec::Slab {
                axis, thickness, ..
            } => {
                if *axis >= dim {
                    return Err(Error::Config(format!("slab axis {axis} out of range")));
                }
                if *thickness <= 0.0 {
                    return Err(Error::Config("slab thickness must be positive".into()));
                }
                Ok(())
            }
            DensitySpec::Linear { axis, region, .. } => {
                if *axis >= dim {
                    return Err(Error::Config(format!("linear axis {axis} out of range")));
                }
                if region.lo.len() != dim {
                    return Err(Error::Config("linear region dimension mismatch".into()));
                }
                region.build().map(|_| ())
            }
        }
    }
}

/// JSON description of a signed measure on R^d.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum MeasureSpec {
    /// `mu(dy) = f(y) dy`. The optional `support` overrides the profile's
    /// own effective support box.
    Density {
        profile: DensitySpec,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        support: Option<CubeSpec>,
    },
    /// Product of the middle-thirds Cantor measure along `axis` with
    /// Lebesgue measure on the other axes, restricted to `region`, scaled by
    /// `weight`. Realizes the boundary-regularity exponent `log 2 / log 3`.
    CantorProduct {
        axis: usize,
        weight: f64,
        region: CubeSpec,
    },
    /// Weighted sum of measures.
    Sum { terms: Vec<WeightedTerm> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightedTerm {
    pub coefficient: f64,
    pub measure: MeasureSpec,
}

/// JSON description of a vector drift: one signed measure per coordinate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DriftSpec {
    pub dimension: usize,
    pub components: Vec<MeasureSpec>,
}
