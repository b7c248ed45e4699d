//! Small-time experiments: the Varadhan limit of `t log q`, the path-space
//! rate function, tube probabilities for the scaled laws, and the
//! exponential-equivalence diagnostic for the drift part.
//!
//! The scaled process `{X_{eps t}, t in [0,1]}` concentrates, as `eps -> 0`,
//! around paths of low energy `I(f) = (1/2) int_0^1 |f'(t)|^2 dt`; its
//! density satisfies `t log q(t,x,y) -> -|x-y|^2/2`. At desk scale:
//!
//! * [`rate_function`] evaluates `I` on piecewise-linear paths exactly;
//! * [`varadhan_curve`] assembles `t log qhat(t,x,y)` against a decreasing
//!   time grid, with the drift-free closed form as reference and a
//!   small-time extrapolation `a + b t log t + c t` fitted to the smallest
//!   reliable points (the model matches the exact drift-free expansion);
//! * [`ldp_tube_experiment`] estimates `P_x(sup_t |X_{eps t} - f(t)| < rho)`
//!   and compares `eps log P` with `-inf { I(g) : g in the tube }`, the
//!   infimum computed by projecting onto the tube constraints on a uniform
//!   knot refinement (a convex QP solved by projected gradient descent);
//! * [`exp_equivalence_diag`] tabulates `eps log P(sup |A_{eps t}| > delta)`
//!   whose divergence to `-infinity` is what makes the scaled laws share
//!   the Brownian rate function.

use crate::error::{Error, Result};
use crate::geom::dist2;
use crate::measures::{kato_norm_n, kato_sup_grid, EnvelopeConstants};
use crate::parametrix::{heat_kernel, SeriesConfig};
use crate::simulate::{kde_density, simulate_paths, sup_a_tail, SdeConfig};
use crate::stats::{fit_small_time, EstimatorResult};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;
use std::f64::consts::PI;

// ---------------------------------------------------------------------------
// Paths and the rate function
// ---------------------------------------------------------------------------

/// A piecewise-linear path on `[0,1]` with `f(0) = x`.
#[derive(Clone, Debug, Serialize)]
pub struct PiecewiseLinearPath {
    knots: Vec<f64>,
    values: Vec<Vec<f64>>,
}

impl PiecewiseLinearPath {
    pub fn new(knots: Vec<f64>, values: Vec<Vec<f64>>) -> Result<Self> {
        if knots.len() < 2 || knots.len() != values.len() {
            return Err(Error::Domain(
                "path needs at least two knots with matching values".into(),
            ));
        }
        if (knots[0] - 0.0).abs() > 1e-12 || (knots[knots.len() - 1] - 1.0).abs() > 1e-12 {
            return Err(Error::Domain(
                "path knots must start at 0 and end at 1".into(),
            ));
        }
        if knots.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Domain(
                "degenerate knot spacing: knots must strictly increase".into(),
            ));
        }
        let d = values[0].len();
        if values.iter().any(|v| v.len() != d) {
            return Err(Error::Domain("path values disagree on dimension".into()));
        }
        Ok(PiecewiseLinearPath { knots, values })
    }

    /// Constant path at `x`.
    pub fn constant(x: Vec<f64>) -> Self {
        PiecewiseLinearPath {
            knots: vec![0.0, 1.0],
            values: vec![x.clone(), x],
        }
    }

    /// Straight line from `x` with velocity `v` (so `f(1) = x + v`).
    pub fn line(x: Vec<f64>, v: Vec<f64>) -> Self {
        let end: Vec<f64> = x.iter().zip(&v).map(|(a, b)| a + b).collect();
        PiecewiseLinearPath {
            knots: vec![0.0, 1.0],
            values: vec![x, end],
        }
    }

    pub fn dim(&self) -> usize {
        self.values[0].len()
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn values(&self) -> &[Vec<f64>] {
        &self.values
    }

    pub fn start(&self) -> &[f64] {
        &self.values[0]
    }

    pub fn eval(&self, t: f64) -> Vec<f64> {
        let t = t.clamp(0.0, 1.0);
        let i = match self.knots.iter().position(|k| *k >= t) {
            Some(0) => return self.values[0].clone(),
            Some(i) => i,
            None => return self.values[self.values.len() - 1].clone(),
        };
        let (t0, t1) = (self.knots[i - 1], self.knots[i]);
        let w = (t - t0) / (t1 - t0);
        self.values[i - 1]
            .iter()
            .zip(&self.values[i])
            .map(|(a, b)| a + w * (b - a))
            .collect()
    }

    /// Resample on `n` uniform knots (linear interpolation).
    pub fn refine(&self, n: usize) -> PiecewiseLinearPath {
        let n = n.max(2);
        let knots: Vec<f64> = (0..n).map(|j| j as f64 / (n - 1) as f64).collect();
        let values = knots.iter().map(|t| self.eval(*t)).collect();
        PiecewiseLinearPath { knots, values }
    }
}

/// The energy `I(f) = (1/2) int_0^1 |f'|^2 dt`, evaluated exactly on the
/// piecewise-linear path: `sum_i |df_i|^2 / (2 dt_i)`. Zero iff constant.
pub fn rate_function(f: &PiecewiseLinearPath) -> f64 {
    let mut total = 0.0;
    for i in 1..f.knots.len() {
        let dt = f.knots[i] - f.knots[i - 1];
        let d2 = dist2(&f.values[i], &f.values[i - 1]);
        total += d2 / (2.0 * dt);
    }
    total
}

/// `inf { I(g) : g(0) = f(0), sup_j |g(t_j) - f(t_j)| <= rho }` on the
/// path's knot discretization: a convex QP over products of balls, solved
/// by projected gradient descent (exact Euclidean projection per knot).
pub fn tube_rate_infimum(f: &PiecewiseLinearPath, rho: f64) -> f64 {
    let m = f.knots.len();
    let d = f.dim();
    let mut v = vec![vec![0.0; d]; m]; // v[0] stays 0 (start pinned)
    let dts: Vec<f64> = (1..m).map(|i| f.knots[i] - f.knots[i - 1]).collect();
    let min_dt = dts.iter().cloned().fold(f64::INFINITY, f64::min);
    let step = min_dt / 4.0;
    let objective = |v: &Vec<Vec<f64>>| -> f64 {
        let mut total = 0.0;
        for i in 1..m {
            let mut d2 = 0.0;
            for c in 0..d {
                let diff = f.values[i][c] + v[i][c] - f.values[i - 1][c] - v[i - 1][c];
                d2 += diff * diff;
            }
            total += d2 / (2.0 * dts[i - 1]);
        }
        total
    };
    let mut grad = vec![vec![0.0; d]; m];
    let mut prev_obj = objective(&v);
    for _ in 0..200_000 {
        for g in grad.iter_mut() {
            g.fill(0.0);
        }
        for i in 1..m {
            for c in 0..d {
                let diff =
                    (f.values[i][c] + v[i][c] - f.values[i - 1][c] - v[i - 1][c]) / dts[i - 1];
                grad[i][c] += diff;
                grad[i - 1][c] -= diff;
            }
        }
        for i in 1..m {
            let mut norm2 = 0.0;
            for c in 0..d {
                v[i][c] -= step * grad[i][c];
                norm2 += v[i][c] * v[i][c];
            }
            // Euclidean projection onto the rho-ball.
            if norm2 > rho * rho {
                let scale = rho / norm2.sqrt();
                for c in 0..d {
                    v[i][c] *= scale;
                }
            }
        }
        let obj = objective(&v);
        if (prev_obj - obj).abs() < 1e-14 * obj.max(1.0) {
            prev_obj = obj;
            break;
        }
        prev_obj = obj;
    }
    prev_obj
}

// ---------------------------------------------------------------------------
// Varadhan curve
// ---------------------------------------------------------------------------

/// How the density is estimated along the small-time curve.
pub enum DensityEstimator<'a> {
    Parametrix {
        cfg: &'a SeriesConfig,
        tol: f64,
    },
    Kde {
        base: &'a SdeConfig,
        bandwidth: Option<f64>,
    },
}

/// `t log qhat(t,x,y)` against a decreasing time grid with the drift-free
/// closed form as reference and a small-time extrapolated limit.
#[derive(Clone, Debug, Serialize)]
pub struct AsymptoticCurve {
    pub t_grid: Vec<f64>,
    /// `t log qhat` per grid time.
    pub values: Vec<f64>,
    /// Propagated error bars of `t log qhat`.
    pub errors: Vec<f64>,
    /// Drift-free closed form `-|x-y|^2/2 - (d/2) t log(2 pi t)`.
    pub reference: Vec<f64>,
    pub extrapolated_limit: f64,
    pub extrapolated_err: f64,
    /// Grid times dropped (with reasons).
    pub excluded: Vec<(f64, String)>,
    pub fit_points: usize,
}

impl AsymptoticCurve {
    /// CSV `(t, tlogq, err, reference)`.
    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["t", "tlogq", "err", "reference"])?;
        for i in 0..self.t_grid.len() {
            wtr.write_record([
                self.t_grid[i].to_string(),
                self.values[i].to_string(),
                self.errors[i].to_string(),
                self.reference[i].to_string(),
            ])?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Drift-free closed form of `t log p(t,x,y)`.
pub fn drift_free_t_log_p(t: f64, x: &[f64], y: &[f64]) -> f64 {
    let d = x.len() as f64;
    -dist2(x, y) / 2.0 - 0.5 * d * t * (2.0 * PI * t).ln()
}

/// Assemble the small-time curve of `t log qhat(t,x,y)`.
///
/// `t_grid` must be strictly decreasing. The extrapolated limit comes from
/// a weighted least-squares fit of `a + b t log t + c t` on the
/// `fit_points` smallest reliable grid times; unconverged or non-positive
/// density estimates are excluded and reported.
pub fn varadhan_curve(
    x: &[f64],
    y: &[f64],
    t_grid: &[f64],
    mode: &DensityEstimator,
    fit_points: usize,
) -> Result<AsymptoticCurve> {
    if t_grid.len() < 3 {
        return Err(Error::Domain("need at least three grid times".into()));
    }
    if t_grid.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::Domain("t grid must be strictly decreasing".into()));
    }
    let mut kept_t = Vec::new();
    let mut values = Vec::new();
    let mut errors = Vec::new();
    let mut reference = Vec::new();
    let mut excluded = Vec::new();

    for &t in t_grid {
        let point = match mode {
            DensityEstimator::Parametrix { cfg, tol } => {
                let est = heat_kernel(t, x, y, cfg, *tol)?;
                if !est.converged {
                    excluded.push((t, "series unconverged".to_string()));
                    continue;
                }
                match est.log_value {
                    Some(lq) => {
                        // sigma(log q) ~ (quad error + tail)/q, in ratio units.
                        let trunc_ratio = if est.truncation_bound.is_finite() && est.value > 0.0 {
                            est.truncation_bound / est.value * est.ratio_to_gaussian
                        } else {
                            0.0
                        };
                        let sigma_log =
                            (est.ratio_stderr + trunc_ratio) / est.ratio_to_gaussian.max(1e-300);
                        Some((lq, sigma_log))
                    }
                    None => {
                        excluded.push((t, "non-positive density estimate".to_string()));
                        continue;
                    }
                }
            }
            DensityEstimator::Kde { base, bandwidth } => {
                let mut cfg = (*base).clone();
                cfg.horizon = t;
                cfg.step = cfg.step.min(t / 32.0);
                let ens = simulate_paths(&cfg, x)?;
                let kde = kde_density(&ens, t, y, *bandwidth)?;
                if kde.estimate.mean <= 0.0 {
                    excluded.push((t, "empty kernel density".to_string()));
                    continue;
                }
                if kde.flagged_few_samples {
                    excluded.push((t, "too few effective samples".to_string()));
                    continue;
                }
                let sigma_log = kde.estimate.stderr / kde.estimate.mean;
                Some((kde.estimate.mean.ln(), sigma_log))
            }
        };
        if let Some((lq, sigma_log)) = point {
            kept_t.push(t);
            values.push(t * lq);
            errors.push(t * sigma_log);
            reference.push(drift_free_t_log_p(t, x, y));
        }
    }

    if kept_t.len() < 3 {
        return Err(Error::Domain(format!(
            "fewer than three usable grid times survived ({} excluded)",
            excluded.len()
        )));
    }
    let fit_points = fit_points.max(3).min(kept_t.len());
    let lo = kept_t.len() - fit_points;
    let (a, _b, _c, se_a) = fit_small_time(&kept_t[lo..], &values[lo..], &errors[lo..]);
    Ok(AsymptoticCurve {
        t_grid: kept_t,
        values,
        errors,
        reference,
        extrapolated_limit: a,
        extrapolated_err: se_a,
        excluded,
        fit_points,
    })
}

// ---------------------------------------------------------------------------
// Tube probabilities
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, Serialize)]
pub struct TubeRow {
    pub eps: f64,
    pub estimate: EstimatorResult,
    /// `eps log phat` (absent when no path stayed in the tube).
    pub eps_log_estimate: Option<f64>,
    /// `eps log` of the upper 95% bound.
    pub eps_log_upper: f64,
    /// `-inf { I(g) : g in the tube }` from the knot projection.
    pub reference: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct TubeTable {
    pub rho: f64,
    pub rate_infimum: f64,
    pub rows: Vec<TubeRow>,
}

impl TubeTable {
    /// CSV `(epsilon, estimate, lo, hi, reference)`.
    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["epsilon", "estimate", "lo", "hi", "reference"])?;
        for r in &self.rows {
            wtr.write_record([
                r.eps.to_string(),
                r.estimate.mean.to_string(),
                r.estimate.lower().to_string(),
                r.estimate.upper().to_string(),
                r.reference.to_string(),
            ])?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Estimate `P_x(sup_{t<=1} |X_{eps t} - f(t)| < rho)` along a decreasing
/// grid of `eps`, with the discretized rate infimum as reference.
///
/// The supremum is taken over `knots` uniform comparison times — the same
/// discretization the reference projection uses, so both sides of the
/// comparison share their surrogate.
pub fn ldp_tube_experiment(
    x: &[f64],
    f: &PiecewiseLinearPath,
    rho: f64,
    eps_grid: &[f64],
    sde: &SdeConfig,
    knots: usize,
) -> Result<TubeTable> {
    if !(rho > 0.0) {
        return Err(Error::Domain("tube radius must be positive".into()));
    }
    if f.start() != x {
        return Err(Error::Domain("tube path must start at x".into()));
    }
    let refined = f.refine(knots.max(2));
    let rate_inf = tube_rate_infimum(&refined, rho);
    let m = refined.knots.len() - 1;
    let mut rows = Vec::with_capacity(eps_grid.len());
    for &eps in eps_grid {
        // Steps per knot interval, resolving the configured base step.
        let sub = ((eps / m as f64) / sde.step).ceil().max(1.0) as usize;
        let mut cfg = sde.clone();
        cfg.horizon = eps;
        cfg.step = eps / (m * sub) as f64;
        cfg.validate()?;
        let field = cfg.field()?;
        let hits: Vec<Option<bool>> = (0..cfg.paths)
            .into_par_iter()
            .map(|p| {
                let mut inside = true;
                let ok = crate::simulate::walk_path(
                    &cfg,
                    &field,
                    x,
                    p as u64,
                    &mut |j, _t, xs, _w, _a| {
                        if inside && j % sub == 0 {
                            let knot = j / sub;
                            if knot <= m && dist2(xs, &refined.values[knot]).sqrt() >= rho {
                                inside = false;
                            }
                        }
                    },
                );
                if ok {
                    Some(inside)
                } else {
                    None
                }
            })
            .collect();
        let mut count = 0usize;
        let mut n = 0usize;
        for h in hits.into_iter().flatten() {
            n += 1;
            if h {
                count += 1;
            }
        }
        let estimate = EstimatorResult::bernoulli(count, n.max(1));
        rows.push(TubeRow {
            eps,
            eps_log_estimate: if estimate.mean > 0.0 {
                Some(eps * estimate.mean.ln())
            } else {
                None
            },
            eps_log_upper: eps * estimate.upper().max(f64::MIN_POSITIVE).ln(),
            estimate,
            reference: -rate_inf,
        });
    }
    Ok(TubeTable {
        rho,
        rate_infimum: rate_inf,
        rows,
    })
}

/// Brownian-only tube probability on the same comparison grid, for paired
/// drift-vs-no-drift equivalence checks at matching seeds.
pub fn brownian_tube_probability(
    x: &[f64],
    f: &PiecewiseLinearPath,
    rho: f64,
    eps: f64,
    knots: usize,
    paths: usize,
    seed: u64,
) -> EstimatorResult {
    let refined = f.refine(knots.max(2));
    let m = refined.knots.len() - 1;
    let d = x.len();
    let hits: Vec<bool> = (0..paths)
        .into_par_iter()
        .map(|p| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(p as u64);
            let h = eps / m as f64;
            let sqrt_h = h.sqrt();
            let mut w = vec![0.0; d];
            for knot in 1..=m {
                for wi in w.iter_mut() {
                    let xi: f64 = StandardNormal.sample(&mut rng);
                    *wi += sqrt_h * xi;
                }
                let fv = &refined.values[knot];
                let mut d2 = 0.0;
                for c in 0..d {
                    let diff = x[c] + w[c] - fv[c];
                    d2 += diff * diff;
                }
                if d2.sqrt() >= rho {
                    return false;
                }
            }
            true
        })
        .collect();
    let count = hits.iter().filter(|h| **h).count();
    EstimatorResult::bernoulli(count, paths)
}

// ---------------------------------------------------------------------------
// Exponential equivalence
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, Serialize)]
pub struct ExpEquivRow {
    pub eps: f64,
    pub estimate: EstimatorResult,
    pub exceedances: usize,
    /// `eps log phat` when at least one exceedance was observed.
    pub eps_log_estimate: Option<f64>,
    /// `eps log` of the one-sided upper bound (rule of three on zero rows);
    /// `-infinity` on deterministic-zero rows.
    pub eps_log_upper: f64,
    /// `eps log` of the envelope-based tail bound
    /// `2 exp(-delta^2/(8 eps C4^2 e^{2C5} N_eps^2))`.
    pub reference: f64,
    pub deterministic_zero: bool,
    pub n_kato: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct ExpEquivTable {
    pub delta: f64,
    pub rows: Vec<ExpEquivRow>,
    /// Strict decrease of the upper bounds along the (decreasing) eps grid.
    pub upper_strictly_decreasing: bool,
}

impl ExpEquivTable {
    /// CSV `(epsilon, estimate, lo, hi, eps_log_upper, reference)`.
    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["epsilon", "estimate", "lo", "hi", "eps_log_upper", "reference"])?;
        for r in &self.rows {
            wtr.write_record([
                r.eps.to_string(),
                r.estimate.mean.to_string(),
                r.estimate.lower().to_string(),
                r.estimate.upper().to_string(),
                r.eps_log_upper.to_string(),
                r.reference.to_string(),
            ])?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Tabulate `eps log P_x(sup_{t<=1} |A_{eps t}| > delta)` along a decreasing
/// `eps` grid with one-sided intervals and the envelope reference bound.
pub fn exp_equivalence_diag(
    x: &[f64],
    delta: f64,
    eps_grid: &[f64],
    sde: &SdeConfig,
    envelope: &EnvelopeConstants,
) -> Result<ExpEquivTable> {
    if eps_grid.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::Domain("eps grid must be strictly decreasing".into()));
    }
    let sum_abs = sde.drift.sum_abs();
    let mut rows = Vec::with_capacity(eps_grid.len());
    for &eps in eps_grid {
        let tail = sup_a_tail(sde, x, delta, eps)?;
        let n_kato = {
            let grid = kato_sup_grid(&sum_abs, eps, envelope.c6, sde.measure_quad.sup_per_axis);
            match kato_norm_n(&sum_abs, eps, envelope.c6, &grid, &sde.measure_quad) {
                Ok(v) => v,
                Err(Error::KatoDivergent { partial, .. }) => partial,
                Err(e) => return Err(e),
            }
        };
        let reference = if n_kato > 0.0 {
            eps * (2.0_f64).ln()
                - delta * delta
                    / (8.0
                        * envelope.c4
                        * envelope.c4
                        * (2.0 * envelope.c5).exp()
                        * n_kato
                        * n_kato)
        } else {
            f64::NEG_INFINITY
        };
        let upper = tail.estimate.upper();
        rows.push(ExpEquivRow {
            eps,
            eps_log_estimate: if tail.estimate.mean > 0.0 {
                Some(eps * tail.estimate.mean.ln())
            } else {
                None
            },
            eps_log_upper: if tail.deterministic_zero {
                f64::NEG_INFINITY
            } else {
                eps * upper.max(f64::MIN_POSITIVE).ln()
            },
            estimate: tail.estimate,
            exceedances: tail.exceedances,
            reference,
            deterministic_zero: tail.deterministic_zero,
            n_kato,
        });
    }
    let decreasing = rows
        .windows(2)
        .all(|w| w[1].eps_log_upper < w[0].eps_log_upper);
    Ok(ExpEquivTable {
        delta,
        rows,
        upper_strictly_decreasing: decreasing,
    })
}
