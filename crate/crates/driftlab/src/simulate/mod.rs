//! Euler-Maruyama simulation of `X = x + W + A` and Monte Carlo estimators
//! for the drift-functional bounds.
//!
//! Paths keep the Brownian part `W` and the drift part `A` in separate
//! accumulators and *define* the state as `X = x + W + A` at every grid
//! time, so the decomposition holds exactly in floating point. The drift is
//! evaluated either directly (density-representable measures; the
//! mollification limit) or through an explicit mollification level `n`, in
//! which case the step must satisfy `h <= 2^{-2n}`: the mollified field has
//! a Lipschitz constant growing like `2^{n(d+1)}` and an unresolved step
//! would masquerade as drift singularity.
//!
//! Every path owns a deterministically derived random stream
//! `(seed, path index)`; estimator reductions run in fixed order, so a
//! configuration reproduces bit for bit regardless of worker count.

use crate::error::{Error, Result};
use crate::geom::{dist2, norm};
use crate::kernels::alpha_coeff;
use crate::measures::{
    kato_norm_n, kato_sup_grid, lambda_norm, DriftMeasure, EnvelopeConstants, MeasureQuad,
    SignedMeasure, TransitionKernel,
};
use crate::parametrix::{heat_kernel, DriftField, SeriesConfig};
use crate::quad::unit_ball_volume;
use crate::stats::EstimatorResult;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

/// How the drift measure is turned into a pointwise field for the dynamics.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DriftEval {
    /// Evaluate density components directly (the mollification limit; valid
    /// when every component is density-representable).
    Direct,
    /// Evaluate the mollified drift `b^(n)` by convolution quadrature.
    Mollified { level: u32 },
}

/// Simulation configuration.
#[derive(Clone, Debug)]
pub struct SdeConfig {
    pub drift: DriftMeasure,
    pub eval: DriftEval,
    /// Step size `h` (the effective step divides the horizon evenly).
    pub step: f64,
    pub horizon: f64,
    pub paths: usize,
    pub seed: u64,
    /// Quadrature options for mollified evaluation and paired bounds.
    pub measure_quad: MeasureQuad,
}

impl SdeConfig {
    pub fn new(drift: DriftMeasure, step: f64, horizon: f64, paths: usize, seed: u64) -> Self {
        SdeConfig {
            drift,
            eval: DriftEval::Direct,
            step,
            horizon,
            paths,
            seed,
            measure_quad: MeasureQuad {
                space_nodes: 12,
                time_nodes: 16,
                ..MeasureQuad::default()
            },
        }
    }

    pub fn with_eval(mut self, eval: DriftEval) -> Self {
        self.eval = eval;
        self
    }

    pub fn dim(&self) -> usize {
        self.drift.dim()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.step > 0.0) {
            return Err(Error::Domain("step must be positive".into()));
        }
        if !(self.horizon >= self.step * 0.5) {
            return Err(Error::Domain("horizon must cover at least one step".into()));
        }
        if self.paths == 0 {
            return Err(Error::Domain("need at least one path".into()));
        }
        if let DriftEval::Mollified { level } = self.eval {
            let cap = 0.25_f64.powi(level as i32);
            if self.step > cap {
                return Err(Error::Domain(format!(
                    "step {} exceeds the mollification safeguard 2^(-2n) = {cap} at level {level}",
                    self.step
                )));
            }
        }
        Ok(())
    }

    /// Number of steps; the effective step is `horizon / steps`.
    pub fn steps(&self) -> usize {
        ((self.horizon / self.step).round() as usize).max(1)
    }

    pub fn effective_step(&self) -> f64 {
        self.horizon / self.steps() as f64
    }

    /// Build the pointwise drift field for the configured evaluation mode.
    pub fn field(&self) -> Result<DriftField> {
        match self.eval {
            DriftEval::Direct => DriftField::from_densities(&self.drift),
            DriftEval::Mollified { level } => {
                Ok(DriftField::mollified(&self.drift, level, self.measure_quad))
            }
        }
    }

    fn with_horizon(&self, horizon: f64) -> SdeConfig {
        let mut c = self.clone();
        c.horizon = horizon;
        c
    }
}

// ---------------------------------------------------------------------------
// Path walking
// ---------------------------------------------------------------------------

/// Walk one path, calling `visit(j, t_j, x, w, a)` at every grid time
/// (including `j = 0`). Returns `false` if the drift evaluation failed at
/// some state (the path must then be discarded).
pub fn walk_path(
    cfg: &SdeConfig,
    field: &DriftField,
    x0: &[f64],
    path_index: u64,
    visit: &mut dyn FnMut(usize, f64, &[f64], &[f64], &[f64]),
) -> bool {
    let d = cfg.dim();
    let steps = cfg.steps();
    let h = cfg.effective_step();
    let sqrt_h = h.sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(path_index);

    let mut w = vec![0.0; d];
    let mut a = vec![0.0; d];
    let mut x = x0.to_vec();
    let mut b = vec![0.0; d];
    let drift_is_zero = field.is_zero();

    visit(0, 0.0, &x, &w, &a);
    for j in 0..steps {
        if !drift_is_zero {
            field.eval_into(&x, &mut b);
            if b.iter().any(|v| !v.is_finite()) {
                return false;
            }
            for i in 0..d {
                a[i] += b[i] * h;
            }
        }
        for i in 0..d {
            let xi: f64 = StandardNormal.sample(&mut rng);
            w[i] += sqrt_h * xi;
            // The decomposition is the definition of the state.
            x[i] = x0[i] + w[i] + a[i];
        }
        visit(j + 1, (j + 1) as f64 * h, &x, &w, &a);
    }
    true
}

/// Parallel fold over paths producing one summary per path (ordered by path
/// index); drift-failure paths yield `None`.
fn fold_paths<T: Send>(
    cfg: &SdeConfig,
    field: &DriftField,
    x0: &[f64],
    make: impl Fn() -> T + Sync,
    step_fn: impl Fn(&mut T, usize, f64, &[f64], &[f64], &[f64]) + Sync,
) -> Vec<Option<T>> {
    (0..cfg.paths)
        .into_par_iter()
        .map(|p| {
            let mut acc = make();
            let ok = walk_path(cfg, field, x0, p as u64, &mut |j, t, x, w, a| {
                step_fn(&mut acc, j, t, x, w, a);
            });
            if ok {
                Some(acc)
            } else {
                None
            }
        })
        .collect()
}

fn collect_samples<T>(results: Vec<Option<T>>) -> (Vec<T>, usize) {
    let mut out = Vec::with_capacity(results.len());
    let mut dropped = 0;
    for r in results {
        match r {
            Some(v) => out.push(v),
            None => dropped += 1,
        }
    }
    (out, dropped)
}

// ---------------------------------------------------------------------------
// Ensembles
// ---------------------------------------------------------------------------

/// Simulated paths with the Brownian and drift parts stored separately.
#[derive(Clone, Debug)]
pub struct PathEnsemble {
    pub dim: usize,
    pub times: Vec<f64>,
    /// Path-major storage: `[path][time][coordinate]`, flattened.
    pub states: Vec<f64>,
    pub brownian: Vec<f64>,
    pub drift_part: Vec<f64>,
    pub kept_paths: usize,
    pub dropped_paths: usize,
    pub x0: Vec<f64>,
}

impl PathEnsemble {
    fn idx(&self, path: usize, j: usize) -> std::ops::Range<usize> {
        let stride = self.times.len() * self.dim;
        let base = path * stride + j * self.dim;
        base..base + self.dim
    }

    pub fn state(&self, path: usize, j: usize) -> &[f64] {
        &self.states[self.idx(path, j)]
    }

    pub fn brownian_at(&self, path: usize, j: usize) -> &[f64] {
        &self.brownian[self.idx(path, j)]
    }

    pub fn drift_at(&self, path: usize, j: usize) -> &[f64] {
        &self.drift_part[self.idx(path, j)]
    }

    /// Index of the grid time matching `t` within 1e-9.
    pub fn time_index(&self, t: f64) -> Result<usize> {
        self.times
            .iter()
            .position(|u| (u - t).abs() < 1e-9)
            .ok_or_else(|| Error::Domain(format!("time {t} is not on the ensemble grid")))
    }

    /// Columnar CSV `(path_id, t, X..., W..., A...)`.
    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        let mut header = vec!["path_id".to_string(), "t".to_string()];
        for i in 0..self.dim {
            header.push(format!("x{i}"));
        }
        for i in 0..self.dim {
            header.push(format!("w{i}"));
        }
        for i in 0..self.dim {
            header.push(format!("a{i}"));
        }
        wtr.write_record(&header)?;
        for p in 0..self.kept_paths {
            for (j, t) in self.times.iter().enumerate() {
                let mut rec = vec![p.to_string(), t.to_string()];
                rec.extend(self.state(p, j).iter().map(|v| v.to_string()));
                rec.extend(self.brownian_at(p, j).iter().map(|v| v.to_string()));
                rec.extend(self.drift_at(p, j).iter().map(|v| v.to_string()));
                wtr.write_record(&rec)?;
            }
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Simulate and store the full ensemble (memory: paths x steps x dim x 3).
pub fn simulate_paths(cfg: &SdeConfig, x0: &[f64]) -> Result<PathEnsemble> {
    cfg.validate()?;
    let field = cfg.field()?;
    let d = cfg.dim();
    let steps = cfg.steps();
    let h = cfg.effective_step();
    let per_path = (steps + 1) * d;

    let results: Vec<Option<(Vec<f64>, Vec<f64>, Vec<f64>)>> = (0..cfg.paths)
        .into_par_iter()
        .map(|p| {
            let mut xs = Vec::with_capacity(per_path);
            let mut ws = Vec::with_capacity(per_path);
            let mut drift = Vec::with_capacity(per_path);
            let ok = walk_path(cfg, &field, x0, p as u64, &mut |_, _, x, w, a| {
                xs.extend_from_slice(x);
                ws.extend_from_slice(w);
                drift.extend_from_slice(a);
            });
            if ok {
                Some((xs, ws, drift))
            } else {
                None
            }
        })
        .collect();

    let mut states = Vec::new();
    let mut brownian = Vec::new();
    let mut drift_part = Vec::new();
    let mut dropped = 0usize;
    for r in results {
        match r {
            Some((xs, ws, drift)) => {
                states.extend(xs);
                brownian.extend(ws);
                drift_part.extend(drift);
            }
            None => dropped += 1,
        }
    }
    Ok(PathEnsemble {
        dim: d,
        times: (0..=steps).map(|j| j as f64 * h).collect(),
        kept_paths: cfg.paths - dropped,
        dropped_paths: dropped,
        states,
        brownian,
        drift_part,
        x0: x0.to_vec(),
    })
}

// ---------------------------------------------------------------------------
// Drift-functional estimators
// ---------------------------------------------------------------------------

/// Moment estimate of the additive functional, paired with its bound
/// `n! alpha_n (sqrt(t) Lambda_t(f))^n`.
#[derive(Clone, Debug, Serialize)]
pub struct MomentReport {
    pub n_power: usize,
    pub t: f64,
    pub estimate: EstimatorResult,
    pub bound: f64,
    pub lambda_norm: f64,
    pub alpha_n: f64,
    pub dropped_paths: usize,
}

/// `E_x[(int_0^t f(X_s) ds)^n]` by left-endpoint Riemann sums along the
/// simulated dynamics, with the moment bound evaluated through the supplied
/// transition kernel. The functional `f` must be a nonnegative
/// density-representable measure.
pub fn estimate_moment(
    cfg: &SdeConfig,
    x0: &[f64],
    functional: &SignedMeasure,
    n_power: usize,
    t: f64,
    kernel: &dyn TransitionKernel,
) -> Result<MomentReport> {
    if n_power > 6 {
        return Err(Error::Domain(
            "moment power > 6 rejected: variance blow-up".into(),
        ));
    }
    cfg.validate()?;
    if t > cfg.horizon + 1e-12 {
        return Err(Error::Domain("moment time exceeds the horizon".into()));
    }
    let f = functional
        .as_pointwise_density()
        .ok_or_else(|| Error::Domain("moment functional must be density-representable".into()))?;
    let field = cfg.field()?;
    let h = cfg.effective_step();
    let cut = (t / h).round() as usize;

    let results = fold_paths(
        cfg,
        &field,
        x0,
        || 0.0_f64,
        |acc, j, _tj, x, _w, _a| {
            if j < cut {
                *acc += f.eval(x) * h;
            }
        },
    );
    let (integrals, dropped) = collect_samples(results);
    let estimate = if n_power == 0 {
        EstimatorResult::from_mean_stderr(1.0, 0.0, integrals.len())
    } else {
        let samples: Vec<f64> = integrals.iter().map(|v| v.powi(n_power as i32)).collect();
        EstimatorResult::from_samples(&samples)
    };

    let abs = functional.abs();
    let grid = kato_sup_grid(&abs, t, 0.5, cfg.measure_quad.sup_per_axis);
    let lam = lambda_norm(&abs, t, kernel, &grid, &cfg.measure_quad)?;
    let alpha = alpha_coeff(n_power);
    let factorial: f64 = (1..=n_power).map(|i| i as f64).product::<f64>().max(1.0);
    let bound = factorial * alpha * (t.sqrt() * lam).powi(n_power as i32);
    Ok(MomentReport {
        n_power,
        t,
        estimate,
        bound,
        lambda_norm: lam,
        alpha_n: alpha,
        dropped_paths: dropped,
    })
}

/// Laplace-transform estimate with both bound forms:
/// `(1+z) e^{z^2}` and `2 e^{2 z^2}`, `z = lambda sqrt(t) Lambda_t(f)`.
#[derive(Clone, Debug, Serialize)]
pub struct LaplaceReport {
    pub lambda: f64,
    pub t: f64,
    pub estimate: EstimatorResult,
    pub bound_product_form: f64,
    pub bound_exponential_form: f64,
    pub lambda_norm: f64,
    pub dropped_paths: usize,
}

/// `E_x[exp(lambda int_0^t f(X_s) ds)]`, guarded against overflow through
/// the functional's supremum bound.
pub fn estimate_laplace(
    cfg: &SdeConfig,
    x0: &[f64],
    functional: &SignedMeasure,
    lambda: f64,
    t: f64,
    kernel: &dyn TransitionKernel,
) -> Result<LaplaceReport> {
    if !(lambda > 0.0) {
        return Err(Error::Domain("lambda must be positive".into()));
    }
    cfg.validate()?;
    let f = functional
        .as_pointwise_density()
        .ok_or_else(|| Error::Domain("Laplace functional must be density-representable".into()))?;
    let sup = match f.sup_bound {
        Some(b) => b,
        None => {
            let support = f.support.clone().ok_or_else(|| {
                Error::OverflowGuard(
                    "cannot bound the functional: no sup bound and unbounded support".into(),
                )
            })?;
            support
                .grid(8)
                .iter()
                .map(|p| f.eval(p).abs())
                .fold(0.0, f64::max)
                * 1.5
        }
    };
    if lambda * sup * t > 200.0 {
        return Err(Error::OverflowGuard(format!(
            "lambda * sup|f| * t = {} would overflow the exponential moment",
            lambda * sup * t
        )));
    }
    let field = cfg.field()?;
    let h = cfg.effective_step();
    let cut = (t / h).round() as usize;
    let results = fold_paths(
        cfg,
        &field,
        x0,
        || 0.0_f64,
        |acc, j, _tj, x, _w, _a| {
            if j < cut {
                *acc += f.eval(x) * h;
            }
        },
    );
    let (integrals, dropped) = collect_samples(results);
    let samples: Vec<f64> = integrals.iter().map(|v| (lambda * v).exp()).collect();
    let estimate = EstimatorResult::from_samples(&samples);

    let abs = functional.abs();
    let grid = kato_sup_grid(&abs, t, 0.5, cfg.measure_quad.sup_per_axis);
    let lam = lambda_norm(&abs, t, kernel, &grid, &cfg.measure_quad)?;
    let z = lambda * t.sqrt() * lam;
    Ok(LaplaceReport {
        lambda,
        t,
        estimate,
        bound_product_form: (1.0 + z) * (z * z).exp(),
        bound_exponential_form: 2.0 * (2.0 * z * z).exp(),
        lambda_norm: lam,
        dropped_paths: dropped,
    })
}

// ---------------------------------------------------------------------------
// Tail and ball probabilities
// ---------------------------------------------------------------------------

/// Tail estimate for the running supremum of the drift part.
#[derive(Clone, Debug, Serialize)]
pub struct TailReport {
    pub delta: f64,
    pub eps: f64,
    pub estimate: EstimatorResult,
    pub exceedances: usize,
    /// Fewer than 10 exceedances: treat as a rare-event row.
    pub rare_event: bool,
    /// The pathwise bound `eps * sup|b| < delta` forces probability zero.
    pub deterministic_zero: bool,
    pub dropped_paths: usize,
}

/// `P_x(sup_{s<=eps} |A_s| > delta)`.
pub fn sup_a_tail(cfg: &SdeConfig, x0: &[f64], delta: f64, eps: f64) -> Result<TailReport> {
    if !(delta > 0.0 && eps > 0.0) {
        return Err(Error::Domain(
            "sup_a_tail needs positive delta and eps".into(),
        ));
    }
    let local = cfg.with_horizon(eps);
    local.validate()?;
    let field = local.field()?;
    if let Some(m) = field.speed_bound {
        if eps * m < delta {
            return Ok(TailReport {
                delta,
                eps,
                estimate: EstimatorResult {
                    mean: 0.0,
                    stderr: 0.0,
                    ci95: (0.0, 0.0),
                    n_samples: cfg.paths,
                    one_sided: false,
                },
                exceedances: 0,
                rare_event: false,
                deterministic_zero: true,
                dropped_paths: 0,
            });
        }
    }
    let results = fold_paths(
        &local,
        &field,
        x0,
        || 0.0_f64,
        |acc, _j, _t, _x, _w, a| {
            let n = norm(a);
            if n > *acc {
                *acc = n;
            }
        },
    );
    let (sups, dropped) = collect_samples(results);
    let exceed = sups.iter().filter(|s| **s > delta).count();
    Ok(TailReport {
        delta,
        eps,
        estimate: EstimatorResult::bernoulli(exceed, sups.len()),
        exceedances: exceed,
        rare_event: exceed < 10,
        deterministic_zero: false,
        dropped_paths: dropped,
    })
}

/// Ball-probability estimate paired with the explicit lower bound
/// (Gaussian small-ball term minus the drift-tail term, maximized over the
/// free split parameter).
#[derive(Clone, Debug, Serialize)]
pub struct BallReport {
    pub r: f64,
    pub eps_ball: f64,
    pub estimate: EstimatorResult,
    pub lower_bound: f64,
    pub delta_star: f64,
    pub gauss_term: f64,
    pub tail_term: f64,
    pub n_kato: f64,
    pub dropped_paths: usize,
}

/// The two closed-form pieces of the ball lower bound at split `delta`:
/// `(2 pi r)^{-d/2} omega_d (eps-delta)^d exp(-(|x-y|+eps-delta)^2/2r)` and
/// the subtracted drift-tail term
/// `2 exp(-delta^2 / (8 r C4^2 e^{2 C5} N^2))`.
pub fn ball_lower_bound_terms(
    d: usize,
    dist: f64,
    eps_ball: f64,
    delta: f64,
    r: f64,
    n_kato: f64,
    env: &EnvelopeConstants,
) -> (f64, f64) {
    let gauss = (2.0 * PI * r).powf(-(d as f64) / 2.0)
        * unit_ball_volume(d)
        * (eps_ball - delta).powi(d as i32)
        * (-(dist + eps_ball - delta).powi(2) / (2.0 * r)).exp();
    let tail = if n_kato > 0.0 {
        2.0 * (-delta * delta
            / (8.0 * r * env.c4 * env.c4 * (2.0 * env.c5).exp() * n_kato * n_kato))
            .exp()
    } else {
        0.0
    };
    (gauss, tail)
}

/// `P_x(X_r in B(y, eps_ball))` with the paired lower bound (maximized over
/// the free split `delta in (0, eps_ball)`).
pub fn ball_probability(
    cfg: &SdeConfig,
    x0: &[f64],
    y: &[f64],
    eps_ball: f64,
    r: f64,
    envelope: &EnvelopeConstants,
) -> Result<BallReport> {
    if !(eps_ball > 0.0 && r > 0.0) {
        return Err(Error::Domain(
            "ball probability needs positive radius and time".into(),
        ));
    }
    let local = cfg.with_horizon(r);
    local.validate()?;
    let field = local.field()?;
    let steps = local.steps();
    let results = fold_paths(
        &local,
        &field,
        x0,
        || false,
        |acc, j, _t, x, _w, _a| {
            if j == steps {
                *acc = dist2(x, y).sqrt() < eps_ball;
            }
        },
    );
    let (hits, dropped) = collect_samples(results);
    let count = hits.iter().filter(|h| **h).count();
    let estimate = EstimatorResult::bernoulli(count, hits.len());

    // Kato norm of sum_i |mu_i| at the envelope exponent C6.
    let sum_abs = cfg.drift.sum_abs();
    let grid = kato_sup_grid(&sum_abs, r, envelope.c6, cfg.measure_quad.sup_per_axis);
    let n_kato = match kato_norm_n(&sum_abs, r, envelope.c6, &grid, &cfg.measure_quad) {
        Ok(v) => v,
        Err(Error::KatoDivergent { partial, .. }) => partial,
        Err(e) => return Err(e),
    };

    let d = cfg.dim();
    let dist = dist2(x0, y).sqrt();
    let mut best = (f64::NEG_INFINITY, 0.0, 0.0, 0.0);
    for i in 1..200 {
        let delta = eps_ball * i as f64 / 200.0;
        let (g, tl) = ball_lower_bound_terms(d, dist, eps_ball, delta, r, n_kato, envelope);
        if g - tl > best.0 {
            best = (g - tl, delta, g, tl);
        }
    }
    Ok(BallReport {
        r,
        eps_ball,
        estimate,
        lower_bound: best.0,
        delta_star: best.1,
        gauss_term: best.2,
        tail_term: best.3,
        n_kato,
        dropped_paths: dropped,
    })
}

// ---------------------------------------------------------------------------
// Kernel density estimation
// ---------------------------------------------------------------------------

/// Smoothed density estimate with bandwidth sensitivity.
#[derive(Clone, Debug, Serialize)]
pub struct KdeReport {
    pub t: f64,
    pub estimate: EstimatorResult,
    pub bandwidth: f64,
    /// Estimates at double and half bandwidth.
    pub sensitivity: [(f64, f64); 2],
    pub effective_samples: usize,
    pub flagged_few_samples: bool,
}

/// Gaussian-kernel density estimate of the law of `X_t` at `y` from a
/// stored ensemble. Default bandwidth: mean per-coordinate standard
/// deviation times `paths^{-1/(d+4)}`; sensitivity at double and half
/// bandwidth is always co-reported.
pub fn kde_density(
    ensemble: &PathEnsemble,
    t: f64,
    y: &[f64],
    bandwidth: Option<f64>,
) -> Result<KdeReport> {
    let j = ensemble.time_index(t)?;
    let n = ensemble.kept_paths;
    if n == 0 {
        return Err(Error::Domain("empty ensemble".into()));
    }
    if !(t > 0.0) {
        return Err(Error::Domain("kde needs t > 0".into()));
    }
    let d = ensemble.dim;
    let bw = match bandwidth {
        Some(b) => {
            if !(b > 0.0) {
                return Err(Error::Domain("bandwidth must be positive".into()));
            }
            b
        }
        None => {
            let mut mean = vec![0.0; d];
            for p in 0..n {
                for (i, v) in ensemble.state(p, j).iter().enumerate() {
                    mean[i] += v;
                }
            }
            for m in mean.iter_mut() {
                *m /= n as f64;
            }
            let mut var = 0.0;
            for p in 0..n {
                for (i, v) in ensemble.state(p, j).iter().enumerate() {
                    var += (v - mean[i]) * (v - mean[i]);
                }
            }
            let sigma = (var / (n as f64 * d as f64)).sqrt();
            sigma * (n as f64).powf(-1.0 / (d as f64 + 4.0))
        }
    };

    let eval_at = |h: f64| -> (Vec<f64>, usize) {
        let log_norm = -(d as f64) / 2.0 * (2.0 * PI * h * h).ln();
        let mut vals = Vec::with_capacity(n);
        let mut effective = 0usize;
        for p in 0..n {
            let r2 = dist2(ensemble.state(p, j), y);
            if r2 <= 9.0 * h * h {
                effective += 1;
            }
            vals.push((log_norm - r2 / (2.0 * h * h)).exp());
        }
        (vals, effective)
    };

    let (vals, effective) = eval_at(bw);
    let estimate = EstimatorResult::from_samples(&vals);
    let (v2, _) = eval_at(2.0 * bw);
    let (vh, _) = eval_at(0.5 * bw);
    let m2 = v2.iter().sum::<f64>() / n as f64;
    let mh = vh.iter().sum::<f64>() / n as f64;
    Ok(KdeReport {
        t,
        estimate,
        bandwidth: bw,
        sensitivity: [(2.0 * bw, m2), (0.5 * bw, mh)],
        effective_samples: effective,
        flagged_few_samples: effective < 30,
    })
}

// ---------------------------------------------------------------------------
// Chain-rule lower bound
// ---------------------------------------------------------------------------

/// Product lower bound
/// `inf_{z in B(y,eps)} q(eta t, z, y) * P_x(X_{(1-eta)t} in B(y,eps))`
/// compared against a direct density estimate.
#[derive(Clone, Debug, Serialize)]
pub struct ChapmanReport {
    pub t: f64,
    pub eta: f64,
    pub eps_ball: f64,
    pub inf_kernel: f64,
    pub ball_prob: EstimatorResult,
    pub product_lower_bound: f64,
    pub direct_estimate: EstimatorResult,
    pub direct_bandwidth: f64,
    /// `product <= direct` within the combined confidence slack.
    pub consistent: bool,
}

/// Check the chain-rule lower bound at one `(t, x, y)`: the series supplies
/// the infimum factor on a ball grid, the simulator supplies both the ball
/// probability and an independent direct estimate of the density.
pub fn chapman_lower_bound(
    t: f64,
    eta: f64,
    eps_ball: f64,
    x: &[f64],
    y: &[f64],
    sde: &SdeConfig,
    series: &SeriesConfig,
    tol: f64,
) -> Result<ChapmanReport> {
    if !(eta > 0.0 && eta < 1.0) {
        return Err(Error::Domain("eta must lie in (0,1)".into()));
    }
    let d = x.len();
    let mut inf_q = f64::INFINITY;
    let sphere = crate::quad::sphere_rule(d, 4)?;
    let mut probes: Vec<Vec<f64>> = vec![y.to_vec()];
    for frac in [0.5, 1.0] {
        for (omega, _) in &sphere {
            probes.push((0..d).map(|i| y[i] + frac * eps_ball * omega[i]).collect());
        }
    }
    for z in &probes {
        let est = heat_kernel(eta * t, z, y, series, tol)?;
        inf_q = inf_q.min(est.value);
    }

    let env = EnvelopeConstants::default();
    let ball = ball_probability(sde, x, y, eps_ball, (1.0 - eta) * t, &env)?;

    // Direct estimate of q(t,x,y) by kernel density smoothing.
    let ens = simulate_paths(&sde.with_horizon(t), x)?;
    let kde = kde_density(&ens, t, y, None)?;

    let product = inf_q * ball.estimate.mean;
    let slack = inf_q * 3.0 * ball.estimate.stderr + 3.0 * kde.estimate.stderr;
    // Bandwidth bias allowance for the smoothed direct estimate.
    let bias = 0.5 * kde.bandwidth * kde.bandwidth / t * kde.estimate.mean.abs().max(1e-300);
    let consistent = product <= kde.estimate.mean + slack + bias;
    Ok(ChapmanReport {
        t,
        eta,
        eps_ball,
        inf_kernel: inf_q,
        ball_prob: ball.estimate,
        product_lower_bound: product,
        direct_estimate: kde.estimate,
        direct_bandwidth: kde.bandwidth,
        consistent,
    })
}

// ---------------------------------------------------------------------------
// Mollification coupling
// ---------------------------------------------------------------------------

/// Coupled comparison of consecutive mollification levels on shared
/// Brownian increments.
#[derive(Clone, Debug, Serialize)]
pub struct CouplingReport {
    pub level: u32,
    /// Per path: `max_t |A^(n+1)_t - A^(n)_t|`.
    pub sup_gaps: Vec<f64>,
    /// Per path: `int_0^T |b^(n)(X^(n)_s)| ds` (monitored quantiles stand in
    /// for the uniform-integrability condition, which has no finite-sample
    /// test).
    pub integral_low: Vec<f64>,
    /// Same at level `n+1`.
    pub integral_high: Vec<f64>,
}

impl CouplingReport {
    pub fn median_gap(&self) -> f64 {
        let mut v = self.sup_gaps.clone();
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        if v.is_empty() {
            f64::NAN
        } else {
            v[v.len() / 2]
        }
    }

    pub fn integral_quantile(&self, q: f64) -> f64 {
        let mut v = self.integral_high.clone();
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        if v.is_empty() {
            f64::NAN
        } else {
            v[((v.len() as f64 - 1.0) * q) as usize]
        }
    }
}

/// Simulate mollification levels `n` and `n+1` on shared Brownian
/// increments and record the drift-part gaps; a decreasing median across
/// `n` is the measurable surrogate for convergence in probability of the
/// approximating drift parts.
pub fn coupled_level_gap(cfg: &SdeConfig, x0: &[f64], level: u32) -> Result<CouplingReport> {
    let mut local = cfg.clone();
    local.eval = DriftEval::Mollified { level: level + 1 };
    local.validate()?; // enforces the step safeguard at the finer level
    let d = cfg.dim();
    let steps = local.steps();
    let h = local.effective_step();
    let sqrt_h = h.sqrt();
    let f_lo = DriftField::mollified(&cfg.drift, level, cfg.measure_quad);
    let f_hi = DriftField::mollified(&cfg.drift, level + 1, cfg.measure_quad);

    let rows: Vec<Option<(f64, f64, f64)>> = (0..cfg.paths)
        .into_par_iter()
        .map(|p| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(p as u64);
            let mut w = vec![0.0; d];
            let mut a_lo = vec![0.0; d];
            let mut a_hi = vec![0.0; d];
            let mut x_lo = x0.to_vec();
            let mut x_hi = x0.to_vec();
            let mut b = vec![0.0; d];
            let mut sup_gap = 0.0_f64;
            let mut int_lo = 0.0_f64;
            let mut int_hi = 0.0_f64;
            for _ in 0..steps {
                f_lo.eval_into(&x_lo, &mut b);
                if b.iter().any(|v| !v.is_finite()) {
                    return None;
                }
                int_lo += norm(&b) * h;
                for i in 0..d {
                    a_lo[i] += b[i] * h;
                }
                f_hi.eval_into(&x_hi, &mut b);
                if b.iter().any(|v| !v.is_finite()) {
                    return None;
                }
                int_hi += norm(&b) * h;
                for i in 0..d {
                    a_hi[i] += b[i] * h;
                }
                for i in 0..d {
                    let xi: f64 = StandardNormal.sample(&mut rng);
                    w[i] += sqrt_h * xi;
                    x_lo[i] = x0[i] + w[i] + a_lo[i];
                    x_hi[i] = x0[i] + w[i] + a_hi[i];
                }
                let gap: f64 = (0..d)
                    .map(|i| (a_hi[i] - a_lo[i]) * (a_hi[i] - a_lo[i]))
                    .sum::<f64>()
                    .sqrt();
                sup_gap = sup_gap.max(gap);
            }
            Some((sup_gap, int_lo, int_hi))
        })
        .collect();

    let mut sup_gaps = Vec::new();
    let mut integral_low = Vec::new();
    let mut integral_high = Vec::new();
    for r in rows.into_iter().flatten() {
        sup_gaps.push(r.0);
        integral_low.push(r.1);
        integral_high.push(r.2);
    }
    Ok(CouplingReport {
        level,
        sup_gaps,
        integral_low,
        integral_high,
    })
}

#[cfg(test)]
mod tests;
