//! Small geometric helpers: axis-aligned boxes, point arithmetic, grids.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Squared Euclidean distance.
#[inline]
pub fn dist2(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(ai, bi)| (ai - bi) * (ai - bi)).sum()
}

/// Euclidean norm.
#[inline]
pub fn norm(a: &[f64]) -> f64 {
    a.iter().map(|ai| ai * ai).sum::<f64>().sqrt()
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(ai, bi)| ai * bi).sum()
}

/// Axis-aligned box `[lo_1,hi_1] x ... x [lo_d,hi_d]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cube {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl Cube {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.len() != hi.len() || lo.is_empty() {
            return Err(Error::Domain("cube bounds must have equal positive length".into()));
        }
        if lo.iter().zip(&hi).any(|(l, h)| !(l < h)) {
            return Err(Error::Domain("cube must satisfy lo < hi on every axis".into()));
        }
        Ok(Cube { lo, hi })
    }

    pub fn from_center_half(center: &[f64], half: f64) -> Self {
        Cube {
            lo: center.iter().map(|c| c - half).collect(),
            hi: center.iter().map(|c| c + half).collect(),
        }
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn center(&self) -> Vec<f64> {
        self.lo.iter().zip(&self.hi).map(|(l, h)| 0.5 * (l + h)).collect()
    }

    pub fn volume(&self) -> f64 {
        self.lo.iter().zip(&self.hi).map(|(l, h)| h - l).product()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter()
            .zip(self.lo.iter().zip(&self.hi))
            .all(|(xi, (l, h))| *l <= *xi && *xi <= *h)
    }

    /// Grow the box by `margin` on every side.
    pub fn inflate(&self, margin: f64) -> Cube {
        Cube {
            lo: self.lo.iter().map(|l| l - margin).collect(),
            hi: self.hi.iter().map(|h| h + margin).collect(),
        }
    }

    /// Intersection, or `None` when empty.
    pub fn intersect(&self, other: &Cube) -> Option<Cube> {
        let lo: Vec<f64> = self
            .lo
            .iter()
            .zip(&other.lo)
            .map(|(a, b)| a.max(*b))
            .collect();
        let hi: Vec<f64> = self
            .hi
            .iter()
            .zip(&other.hi)
            .map(|(a, b)| a.min(*b))
            .collect();
        if lo.iter().zip(&hi).all(|(l, h)| l < h) {
            Some(Cube { lo, hi })
        } else {
            None
        }
    }

    /// Smallest box containing both.
    pub fn hull(&self, other: &Cube) -> Cube {
        Cube {
            lo: self
                .lo
                .iter()
                .zip(&other.lo)
                .map(|(a, b)| a.min(*b))
                .collect(),
            hi: self
                .hi
                .iter()
                .zip(&other.hi)
                .map(|(a, b)| a.max(*b))
                .collect(),
        }
    }

    /// Tensor grid with `per_axis` points per axis (cell midpoints for
    /// `per_axis == 1`, endpoints included otherwise).
    pub fn grid(&self, per_axis: usize) -> Vec<Vec<f64>> {
        let d = self.dim();
        let axis_points: Vec<Vec<f64>> = (0..d)
            .map(|i| {
                if per_axis <= 1 {
                    vec![0.5 * (self.lo[i] + self.hi[i])]
                } else {
                    (0..per_axis)
                        .map(|j| {
                            self.lo[i]
                                + (self.hi[i] - self.lo[i]) * j as f64 / (per_axis - 1) as f64
                        })
                        .collect()
                }
            })
            .collect();
        let mut out = Vec::with_capacity(axis_points.iter().map(Vec::len).product());
        let mut idx = vec![0usize; d];
        loop {
            out.push((0..d).map(|i| axis_points[i][idx[i]]).collect());
            let mut k = 0;
            loop {
                idx[k] += 1;
                if idx[k] < axis_points[k].len() {
                    break;
                }
                idx[k] = 0;
                k += 1;
                if k == d {
                    return out;
                }
            }
        }
    }
}

/// Finite grid standing in for a supremum over `x in R^d`.
#[derive(Clone, Debug)]
pub struct SupGrid {
    pub points: Vec<Vec<f64>>,
}

impl SupGrid {
    pub fn single(x: Vec<f64>) -> Self {
        SupGrid { points: vec![x] }
    }

    pub fn from_points(points: Vec<Vec<f64>>) -> Self {
        SupGrid { points }
    }

    /// Grid over `cube` with `per_axis` points per axis.
    pub fn over_cube(cube: &Cube, per_axis: usize) -> Self {
        SupGrid {
            points: cube.grid(per_axis),
        }
    }

    pub fn max_of(&self, mut f: impl FnMut(&[f64]) -> Result<f64>) -> Result<f64> {
        let mut best = f64::NEG_INFINITY;
        for p in &self.points {
            best = best.max(f(p)?);
        }
        Ok(best)
    }
}
