//! driftlab: a numerical laboratory for Brownian motion with singular drift.
//!
//! The library studies diffusions `X = x + W + A` on R^d whose generator is
//! `(1/2) Delta + mu . grad`, where each component of the drift `mu` is a
//! signed measure of Kato type (its Newtonian-kernel averages vanish at small
//! radii). Everything is organized around constructive, desk-scale versions
//! of the objects that make that theory run:
//!
//! * [`measures`] — drift measures (densities, a Cantor-type singular
//!   product measure, weighted sums), mollified drifts `b^(n) = phi_n * mu`,
//!   Kato norms `N_t^alpha` and `Lambda_t`, and membership profiles.
//! * [`kernels`] — Gaussian transition kernels, their gradients, the
//!   `G_a(s,x,y) = s^{-d/2} exp(-a|x-y|^2/2s)` family, and the elementary
//!   analytic bounds (`Phi(z) = sum z^n/sqrt(n!)`, `m_delta`, the moment
//!   coefficients `alpha_n`).
//! * [`parametrix`] — the transition density `q(t,x,y) = sum_k I_k(t,x,y)`
//!   built by convolving the Gaussian kernel against `b . grad p`, with
//!   controlled truncation and both deterministic-tensor and
//!   importance-sampled quadrature.
//! * [`simulate`] — Euler–Maruyama path simulation with the Brownian and
//!   drift parts stored separately, plus Monte Carlo estimators for drift
//!   functionals (moments, Laplace transforms, sup tails, ball
//!   probabilities, kernel density estimates).
//! * [`asymptotics`] — small-time experiments: the `t log q -> -|x-y|^2/2`
//!   limit, the path-space rate function `I(f) = (1/2) int |f'|^2`, tube
//!   probabilities for scaled laws, and the exponential-equivalence
//!   diagnostic for the drift part.
//! * [`experiments`] — a JSON-configured experiment runner with presets,
//!   CSV/JSON artifacts and a run manifest; the `driftlab` binary is a thin
//!   wrapper around it.
//!
//! The crate's primary human interface is the `examples/` directory: one
//! runnable example per capability (`cargo run --release --example varadhan`,
//! etc.).
//!
//! Numerical conventions used throughout:
//!
//! * kernels are computed in log space and exponentiated at the boundary, so
//!   small-time regimes do not underflow;
//! * every Monte Carlo routine takes an explicit seed and derives one
//!   independent, deterministic stream per path/stratum, with a fixed
//!   reduction order, so results are reproducible bit for bit at a fixed
//!   partition;
//! * suprema over `x in R^d` are replaced by configurable finite grids that
//!   cover the effective support of the measure plus a kernel-scale margin.

pub mod asymptotics;
pub mod error;
pub mod experiments;
pub mod geom;
pub mod kernels;
pub mod measures;
pub mod parametrix;
pub mod quad;
pub mod simulate;
pub mod stats;

pub use error::{Error, Result};
