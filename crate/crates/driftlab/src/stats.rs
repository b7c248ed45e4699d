//! Estimator summaries and small fitting helpers.

use serde::{Deserialize, Serialize};

/// Monte Carlo estimate with standard error and 95% confidence interval.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EstimatorResult {
    pub mean: f64,
    pub stderr: f64,
    /// `mean +/- 1.96 stderr`, or a one-sided interval for rare events.
    pub ci95: (f64, f64),
    pub n_samples: usize,
    /// True when the interval is a one-sided rule-of-three bound.
    #[serde(default)]
    pub one_sided: bool,
}

impl EstimatorResult {
    pub fn from_samples(samples: &[f64]) -> Self {
        let mut acc = MeanVar::new();
        for &s in samples {
            acc.update(s);
        }
        acc.finish()
    }

    pub fn from_mean_stderr(mean: f64, stderr: f64, n: usize) -> Self {
        EstimatorResult {
            mean,
            stderr,
            ci95: (mean - 1.96 * stderr, mean + 1.96 * stderr),
            n_samples: n,
            one_sided: false,
        }
    }

    /// Bernoulli proportion: `k` successes in `n` trials. With zero observed
    /// successes the one-sided 95% upper bound `3/n` (rule of three) is used.
    pub fn bernoulli(k: usize, n: usize) -> Self {
        assert!(n > 0);
        if k == 0 {
            return EstimatorResult {
                mean: 0.0,
                stderr: 0.0,
                ci95: (0.0, 3.0 / n as f64),
                n_samples: n,
                one_sided: true,
            };
        }
        let p = k as f64 / n as f64;
        let se = (p * (1.0 - p) / n as f64).sqrt();
        EstimatorResult::from_mean_stderr(p, se, n)
    }

    pub fn upper(&self) -> f64 {
        self.ci95.1
    }

    pub fn lower(&self) -> f64 {
        self.ci95.0
    }
}

/// Welford online mean/variance accumulator.
#[derive(Clone, Debug, Default)]
pub struct MeanVar {
    mean: f64,
    m2: f64,
    count: usize,
}

impl MeanVar {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn update(&mut self, sample: f64) {
        self.count += 1;
        let delta = sample - self.mean;
        self.mean += delta / self.count as f64;
        self.m2 += delta * (sample - self.mean);
    }

    pub fn merge(&mut self, other: &MeanVar) {
        if other.count == 0 {
            return;
        }
        if self.count == 0 {
            *self = other.clone();
            return;
        }
        let n1 = self.count as f64;
        let n2 = other.count as f64;
        let delta = other.mean - self.mean;
        let n = n1 + n2;
        self.mean += delta * n2 / n;
        self.m2 += other.m2 + delta * delta * n1 * n2 / n;
        self.count += other.count;
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn variance(&self) -> f64 {
        if self.count > 1 {
            self.m2 / (self.count as f64 - 1.0)
        } else {
            0.0
        }
    }

    pub fn stderr(&self) -> f64 {
        if self.count > 1 {
            (self.variance() / self.count as f64).sqrt()
        } else {
            0.0
        }
    }

    pub fn finish(&self) -> EstimatorResult {
        EstimatorResult::from_mean_stderr(self.mean, self.stderr(), self.count)
    }
}

/// Ordinary least squares line `y = a + b x`; returns `(a, b)`.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    assert_eq!(xs.len(), ys.len());
    let n = xs.len() as f64;
    let sx: f64 = xs.iter().sum();
    let sy: f64 = ys.iter().sum();
    let sxx: f64 = xs.iter().map(|x| x * x).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| x * y).sum();
    let denom = n * sxx - sx * sx;
    let b = (n * sxy - sx * sy) / denom;
    let a = (sy - b * sx) / n;
    (a, b)
}

/// Log-log slope: the exponent `p` in `y ~ C x^p`. Points with
/// non-positive coordinates are skipped.
pub fn loglog_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let pts: (Vec<f64>, Vec<f64>) = xs
        .iter()
        .zip(ys)
        .filter(|(x, y)| **x > 0.0 && **y > 0.0)
        .map(|(x, y)| (x.ln(), y.ln()))
        .unzip();
    linear_fit(&pts.0, &pts.1).1
}

/// Weighted least squares for the small-time expansion
/// `y(t) = a + b t ln t + c t`; returns `(a, b, c, stderr_a)`.
///
/// Weights are `1/sigma^2`; zero sigmas are treated as a tiny floor so exact
/// closed-form inputs behave as equal weights.
pub fn fit_small_time(ts: &[f64], ys: &[f64], sigmas: &[f64]) -> (f64, f64, f64, f64) {
    assert!(ts.len() >= 3, "need at least three points for a 3-parameter fit");
    let floor = sigmas
        .iter()
        .cloned()
        .filter(|s| *s > 0.0)
        .fold(f64::INFINITY, f64::min);
    let floor = if floor.is_finite() { floor * 1e-3 } else { 1e-12 };
    let mut ata = [[0.0_f64; 3]; 3];
    let mut atb = [0.0_f64; 3];
    for ((&t, &y), &s) in ts.iter().zip(ys).zip(sigmas) {
        let w = 1.0 / (s.max(floor)).powi(2);
        let row = [1.0, t * t.ln(), t];
        for i in 0..3 {
            for j in 0..3 {
                ata[i][j] += w * row[i] * row[j];
            }
            atb[i] += w * row[i] * y;
        }
    }
    let inv = invert3(&ata);
    let sol = [
        inv[0][0] * atb[0] + inv[0][1] * atb[1] + inv[0][2] * atb[2],
        inv[1][0] * atb[0] + inv[1][1] * atb[1] + inv[1][2] * atb[2],
        inv[2][0] * atb[0] + inv[2][1] * atb[1] + inv[2][2] * atb[2],
    ];
    // Var(a) = [(A^T W A)^{-1}]_{00} under the stated noise model.
    let stderr_a = inv[0][0].max(0.0).sqrt();
    (sol[0], sol[1], sol[2], stderr_a)
}

fn invert3(m: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
        - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
    assert!(det.abs() > 0.0, "singular design matrix");
    let c = [
        [
            m[1][1] * m[2][2] - m[1][2] * m[2][1],
            m[0][2] * m[2][1] - m[0][1] * m[2][2],
            m[0][1] * m[1][2] - m[0][2] * m[1][1],
        ],
        [
            m[1][2] * m[2][0] - m[1][0] * m[2][2],
            m[0][0] * m[2][2] - m[0][2] * m[2][0],
            m[0][2] * m[1][0] - m[0][0] * m[1][2],
        ],
        [
            m[1][0] * m[2][1] - m[1][1] * m[2][0],
            m[0][1] * m[2][0] - m[0][0] * m[2][1],
            m[0][0] * m[1][1] - m[0][1] * m[1][0],
        ],
    ];
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = c[i][j] / det;
        }
    }
    out
}
