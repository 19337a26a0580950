//! Entropically regularized Wasserstein proximal step on a weighted cloud.
//!
//! Given the previous weights `rho_prev`, the potential vector `psi` and a
//! ground-cost matrix `C`, one step solves the dual fixed-point system
//!
//! ```text
//! y ⊙ (Γ z)  = rho_prev
//! z ⊙ (Γᵀ y) = ξ ⊙ z^(-βε/h)
//! ```
//!
//! with `Γ = exp(-C / 2ε)` and `ξ = exp(-βψ - 1)`, and returns the new weights
//! `z ⊙ (Γᵀ y)`. Rows of `C` are indexed by the particles carrying
//! `rho_prev`, columns by the particles receiving the new weights.
//!
//! The `z` half-step is computed in the log domain so that very large
//! potentials (where `ξ` itself underflows) do not break positivity.

use std::time::{Duration, Instant};

use ndarray::{Array1, Array2, ArrayView1};
use rand::Rng;
use rand::distr::Open01;
use serde::Serialize;

use crate::cloud::{normalize, SimplexWeights, StateMatrix};
use crate::error::{Error, Result};

/// Scalars governing one proximal step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProxConfig {
    /// Time step.
    pub h: f64,
    /// Inverse temperature.
    pub beta: f64,
    /// Entropic regularization strength.
    pub epsilon: f64,
    /// Fixed-point tolerance on successive iterates (Euclidean norm).
    pub delta: f64,
    /// Maximum number of sub-iterations.
    pub max_iters: usize,
    pub underflow: UnderflowPolicy,
}

impl ProxConfig {
    pub fn new(h: f64, beta: f64, epsilon: f64, delta: f64, max_iters: usize) -> Result<Self> {
        let cfg = Self {
            h,
            beta,
            epsilon,
            delta,
            max_iters,
            underflow: UnderflowPolicy::Strict,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_underflow(mut self, policy: UnderflowPolicy) -> Self {
        self.underflow = policy;
        self
    }

    pub fn validate(&self) -> Result<()> {
        for (name, value) in [
            ("h", self.h),
            ("beta", self.beta),
            ("epsilon", self.epsilon),
            ("delta", self.delta),
        ] {
            if !(value > 0.0) || !value.is_finite() {
                return Err(Error::InvalidParameter {
                    name,
                    value,
                    reason: "must be positive and finite",
                });
            }
        }
        if self.max_iters == 0 {
            return Err(Error::InvalidParameter {
                name: "max_iters",
                value: 0.0,
                reason: "must be at least 1",
            });
        }
        Ok(())
    }

    /// βε/h.
    pub fn stiffness(&self) -> f64 {
        self.beta * self.epsilon / self.h
    }
}

/// `1 / (1 + βε/h)`, the Thompson-metric contraction factor of the `z` update.
pub fn contraction_factor(cfg: &ProxConfig) -> f64 {
    1.0 / (1.0 + cfg.stiffness())
}

/// How [`gibbs_kernel_with`] treats entries of `exp(-C/2ε)` that underflow.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum UnderflowPolicy {
    /// Any entry that evaluates to zero is an error.
    #[default]
    Strict,
    /// Zero entries are kept as exact zeros (subnormals are flushed to zero);
    /// only a row or column with no positive entry is an error.
    Sparse,
}

impl std::str::FromStr for UnderflowPolicy {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "strict" => Ok(Self::Strict),
            "sparse" => Ok(Self::Sparse),
            other => Err(format!("unknown underflow policy `{other}`")),
        }
    }
}

impl std::fmt::Display for UnderflowPolicy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Strict => "strict",
            Self::Sparse => "sparse",
        })
    }
}

/// Square ground-cost matrix with finite nonnegative entries.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix(Array2<f64>);

impl CostMatrix {
    pub fn new(c: Array2<f64>) -> Result<Self> {
        if c.nrows() != c.ncols() {
            return Err(Error::DimensionMismatch {
                context: "cost matrix must be square",
                expected: c.nrows(),
                got: c.ncols(),
            });
        }
        if c.is_empty() {
            return Err(Error::Empty("cost matrix"));
        }
        if let Some(index) = c.iter().position(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::NonFinite {
                context: "cost matrix (entries must be finite and >= 0)",
                index,
            });
        }
        Ok(Self(c))
    }

    pub fn as_array(&self) -> &Array2<f64> {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn transpose(&self) -> CostMatrix {
        CostMatrix(self.0.t().to_owned())
    }

    pub fn max(&self) -> f64 {
        self.0.iter().copied().fold(0.0, f64::max)
    }
}

/// Entrywise `exp(-C / 2ε)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GibbsKernel(Array2<f64>);

impl GibbsKernel {
    pub fn as_array(&self) -> &Array2<f64> {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Wraps a matrix with entries in `[0, 1]` (used by property tests that
    /// draw kernels directly).
    pub fn from_array(g: Array2<f64>) -> Result<Self> {
        if g.nrows() != g.ncols() {
            return Err(Error::DimensionMismatch {
                context: "kernel must be square",
                expected: g.nrows(),
                got: g.ncols(),
            });
        }
        if let Some(index) = g.iter().position(|v| !(*v >= 0.0 && *v <= 1.0)) {
            return Err(Error::NonFinite {
                context: "kernel entries must lie in [0, 1]",
                index,
            });
        }
        Ok(Self(g))
    }
}

/// Per-particle potential values.
#[derive(Debug, Clone, PartialEq)]
pub struct PotentialVector(Array1<f64>);

impl PotentialVector {
    pub fn new(psi: Array1<f64>) -> Result<Self> {
        if let Some(index) = psi.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: "potential vector",
                index,
            });
        }
        Ok(Self(psi))
    }

    pub fn from_vec(psi: Vec<f64>) -> Result<Self> {
        Self::new(Array1::from(psi))
    }

    pub fn as_array(&self) -> &Array1<f64> {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Convergence data for one proximal step.
#[derive(Debug, Clone, PartialEq)]
pub struct ProxReport {
    /// Sub-iterations performed (at most `max_iters`).
    pub iterations: usize,
    /// `‖y_{l+1} - y_l‖₂` at the last sub-iteration.
    pub res_y: f64,
    /// `‖z_{l+1} - z_l‖₂` at the last sub-iteration.
    pub res_z: f64,
    pub wall: Duration,
    pub converged: bool,
    /// Total mass of `z ⊙ Γᵀy` before re-normalization.
    pub raw_mass: f64,
}

/// One line of the timing log.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProxLogRecord {
    pub k: usize,
    pub iters: usize,
    pub res_y: f64,
    pub res_z: f64,
    pub converged: bool,
    pub wall_ns: u128,
    /// Mass before renormalization.
    pub raw_mass: f64,
}

impl ProxReport {
    pub fn log_record(&self, k: usize) -> ProxLogRecord {
        ProxLogRecord {
            k,
            iters: self.iterations,
            res_y: self.res_y,
            res_z: self.res_z,
            converged: self.converged,
            wall_ns: self.wall.as_nanos(),
            raw_mass: self.raw_mass,
        }
    }
}

/// Result of [`prox_recur`].
#[derive(Debug, Clone)]
pub struct ProxOutput {
    pub weights: SimplexWeights,
    pub report: ProxReport,
    /// Terminal dual scalings `y = exp(λ₀h/ε)`, `z = exp(λ₁h/ε)`.
    pub y: Array1<f64>,
    pub z: Array1<f64>,
}

/// `C(i, j) = ‖X_k[i] - X_prev[j]‖²`.
pub fn cost_matrix_euclidean(current: &StateMatrix, previous: &StateMatrix) -> Result<CostMatrix> {
    if current.dim() != previous.dim() {
        return Err(Error::DimensionMismatch {
            context: "cost matrix state dimension",
            expected: current.dim(),
            got: previous.dim(),
        });
    }
    if current.len() != previous.len() {
        return Err(Error::DimensionMismatch {
            context: "cost matrix particle count",
            expected: current.len(),
            got: previous.len(),
        });
    }
    let a = current.as_array();
    let b = previous.as_array();
    let n = a.nrows();
    let mut c = Array2::<f64>::zeros((n, n));
    for (i, xi) in a.rows().into_iter().enumerate() {
        for (j, xj) in b.rows().into_iter().enumerate() {
            let mut d2 = 0.0;
            for (u, v) in xi.iter().zip(xj.iter()) {
                let d = u - v;
                d2 += d * d;
            }
            c[[i, j]] = d2;
        }
    }
    CostMatrix::new(c)
}

/// Kinetic transport cost
/// `ŝ_h(q,p; q̃,p̃) = ‖p̃ − p + h∇V(q)‖² + 12‖(q̃ − q)/h − (p̃ + p)/2‖²`
/// with `(q, p)` row `i` of the current cloud and `(q̃, p̃)` row `j` of the
/// previous one. The matrix is not symmetric in general.
pub fn cost_matrix_underdamped<G>(
    q_cur: &StateMatrix,
    p_cur: &StateMatrix,
    q_prev: &StateMatrix,
    p_prev: &StateMatrix,
    grad_v: G,
    h: f64,
) -> Result<CostMatrix>
where
    G: Fn(ArrayView1<f64>, &mut [f64]) -> Result<()>,
{
    if !(h > 0.0) || !h.is_finite() {
        return Err(Error::InvalidParameter {
            name: "h",
            value: h,
            reason: "kinetic cost divides by the time step",
        });
    }
    let n = q_cur.len();
    let d = q_cur.dim();
    for m in [p_cur, q_prev, p_prev] {
        if m.len() != n {
            return Err(Error::DimensionMismatch {
                context: "kinetic cost particle count",
                expected: n,
                got: m.len(),
            });
        }
        if m.dim() != d {
            return Err(Error::DimensionMismatch {
                context: "kinetic cost block width",
                expected: d,
                got: m.dim(),
            });
        }
    }
    // h∇V(q_i) is shared across a row
    let mut kick = Array2::<f64>::zeros((n, d));
    for i in 0..n {
        let mut row = vec![0.0; d];
        grad_v(q_cur.row(i), &mut row)?;
        for (k, g) in row.iter().enumerate() {
            if !g.is_finite() {
                return Err(Error::NonFiniteDrift { particle: i });
            }
            kick[[i, k]] = h * g;
        }
    }
    let (qc, pc, qp, pp) = (
        q_cur.as_array(),
        p_cur.as_array(),
        q_prev.as_array(),
        p_prev.as_array(),
    );
    let mut c = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        for j in 0..n {
            let mut momentum = 0.0;
            let mut position = 0.0;
            for k in 0..d {
                let a = pp[[j, k]] - pc[[i, k]] + kick[[i, k]];
                momentum += a * a;
                let b = (qp[[j, k]] - qc[[i, k]]) / h - 0.5 * (pp[[j, k]] + pc[[i, k]]);
                position += b * b;
            }
            c[[i, j]] = momentum + 12.0 * position;
        }
    }
    CostMatrix::new(c)
}

/// `exp(-C / 2ε)`, failing if any entry underflows to zero.
pub fn gibbs_kernel(cost: &CostMatrix, epsilon: f64) -> Result<GibbsKernel> {
    gibbs_kernel_with(cost, epsilon, UnderflowPolicy::Strict)
}

pub fn gibbs_kernel_with(
    cost: &CostMatrix,
    epsilon: f64,
    policy: UnderflowPolicy,
) -> Result<GibbsKernel> {
    if !(epsilon > 0.0) || !epsilon.is_finite() {
        return Err(Error::InvalidParameter {
            name: "epsilon",
            value: epsilon,
            reason: "must be positive and finite",
        });
    }
    let scale = -0.5 / epsilon;
    let max_ratio = cost.max() / (2.0 * epsilon);
    let mut g = cost.as_array().mapv(|c| (c * scale).exp());
    match policy {
        UnderflowPolicy::Strict => {
            if g.iter().any(|&v| v == 0.0) {
                return Err(Error::KernelUnderflow { max_ratio });
            }
        }
        UnderflowPolicy::Sparse => {
            g.mapv_inplace(|v| if v < f64::MIN_POSITIVE { 0.0 } else { v });
            let n = g.nrows();
            for i in 0..n {
                if g.row(i).iter().all(|&v| v == 0.0) || g.column(i).iter().all(|&v| v == 0.0) {
                    return Err(Error::KernelUnderflow { max_ratio });
                }
            }
        }
    }
    Ok(GibbsKernel(g))
}

/// `exp(-βψ - 1)` entrywise.
pub fn xi_vector(psi: &PotentialVector, beta: f64) -> Result<Array1<f64>> {
    if !(beta > 0.0) || !beta.is_finite() {
        return Err(Error::InvalidParameter {
            name: "beta",
            value: beta,
            reason: "must be positive and finite",
        });
    }
    psi.as_array()
        .iter()
        .enumerate()
        .map(|(index, &p)| {
            let v = (-beta * p - 1.0).exp();
            if v.is_finite() {
                Ok(v)
            } else {
                Err(Error::XiOverflow { index, psi: p })
            }
        })
        .collect::<Result<Vec<_>>>()
        .map(Array1::from)
}

fn log_xi(psi: &PotentialVector, beta: f64) -> Array1<f64> {
    psi.as_array().mapv(|p| -beta * p - 1.0)
}

fn checked_ratio(num: &Array1<f64>, den: &Array1<f64>, context: &'static str) -> Result<Array1<f64>> {
    let mut out = Array1::<f64>::zeros(num.len());
    for (index, ((o, n), d)) in out.iter_mut().zip(num).zip(den).enumerate() {
        if !(*d > 0.0) || !d.is_finite() {
            return Err(Error::ZeroDenominator { context, index });
        }
        *o = n / d;
    }
    Ok(out)
}

fn z_half_step(
    gamma: &GibbsKernel,
    log_xi: &Array1<f64>,
    y: &Array1<f64>,
    r: f64,
) -> Result<Array1<f64>> {
    let gty = gamma.0.t().dot(y);
    let mut z = Array1::<f64>::zeros(gty.len());
    for (index, (zi, (lx, g))) in z.iter_mut().zip(log_xi.iter().zip(gty.iter())).enumerate() {
        if !(*g > 0.0) || !g.is_finite() {
            return Err(Error::ZeroDenominator {
                context: "Γᵀy",
                index,
            });
        }
        *zi = (r * (lx - g.ln())).exp();
        if !(*zi > 0.0) || !zi.is_finite() {
            return Err(Error::ZeroDenominator {
                context: "z iterate left the positive cone",
                index,
            });
        }
    }
    Ok(z)
}

/// The composite map `θ(z) = (ξ ⊘ Γᵀ(rho_prev ⊘ Γz))^r` that one `z`
/// sub-iteration applies.
pub fn z_update(
    gamma: &GibbsKernel,
    psi: &PotentialVector,
    beta: f64,
    prev: &SimplexWeights,
    z: &Array1<f64>,
    r: f64,
) -> Result<Array1<f64>> {
    let y = checked_ratio(prev.as_array(), &gamma.0.dot(z), "Γz")?;
    z_half_step(gamma, &log_xi(psi, beta), &y, r)
}

fn check_sizes(prev: &SimplexWeights, psi: &PotentialVector, n: usize) -> Result<()> {
    for (context, got) in [("previous weights", prev.len()), ("potential vector", psi.len())] {
        if got != n {
            return Err(Error::DimensionMismatch {
                context,
                expected: n,
                got,
            });
        }
    }
    Ok(())
}

/// One proximal step: block-coordinate iteration on `(y, z)` from a random
/// positive `z⁰` (i.i.d. uniform on `(0, 1)`, drawn from `rng`).
///
/// Non-convergence within `max_iters` is not an error; the report carries
/// `converged = false`. The returned weights are re-normalized; the report's
/// `raw_mass` keeps the pre-normalization total.
pub fn prox_recur<R: Rng + ?Sized>(
    prev: &SimplexWeights,
    psi: &PotentialVector,
    cost: &CostMatrix,
    cfg: &ProxConfig,
    rng: &mut R,
) -> Result<ProxOutput> {
    let started = Instant::now();
    cfg.validate()?;
    check_sizes(prev, psi, cost.len())?;
    let gamma = gibbs_kernel_with(cost, cfg.epsilon, cfg.underflow)?;
    let z0: Array1<f64> = (0..cost.len()).map(|_| rng.sample(Open01)).collect();
    let mut out = iterate(prev, psi, &gamma, cfg, z0)?;
    out.report.wall = started.elapsed();
    Ok(out)
}

/// The iteration of [`prox_recur`] from a caller-supplied kernel and start.
pub fn prox_recur_from(
    prev: &SimplexWeights,
    psi: &PotentialVector,
    gamma: &GibbsKernel,
    cfg: &ProxConfig,
    z0: Array1<f64>,
) -> Result<ProxOutput> {
    let started = Instant::now();
    cfg.validate()?;
    check_sizes(prev, psi, gamma.len())?;
    if z0.len() != gamma.len() {
        return Err(Error::DimensionMismatch {
            context: "initial z",
            expected: gamma.len(),
            got: z0.len(),
        });
    }
    if let Some(index) = z0.iter().position(|v| !(*v > 0.0) || !v.is_finite()) {
        return Err(Error::ZeroDenominator {
            context: "initial z must be positive",
            index,
        });
    }
    let mut out = iterate(prev, psi, gamma, cfg, z0)?;
    out.report.wall = started.elapsed();
    Ok(out)
}

fn iterate(
    prev: &SimplexWeights,
    psi: &PotentialVector,
    gamma: &GibbsKernel,
    cfg: &ProxConfig,
    mut z: Array1<f64>,
) -> Result<ProxOutput> {
    let r = contraction_factor(cfg);
    let lx = log_xi(psi, cfg.beta);
    let rho = prev.as_array();
    let mut y = checked_ratio(rho, &gamma.0.dot(&z), "Γz")?;

    let mut iterations = 0;
    let mut res_y = f64::INFINITY;
    let mut res_z = f64::INFINITY;
    let mut converged = false;
    while iterations < cfg.max_iters {
        iterations += 1;
        let z_next = z_half_step(gamma, &lx, &y, r)?;
        let y_next = checked_ratio(rho, &gamma.0.dot(&z_next), "Γz")?;
        res_z = l2_distance(&z_next, &z);
        res_y = l2_distance(&y_next, &y);
        z = z_next;
        y = y_next;
        if res_y < cfg.delta && res_z < cfg.delta {
            converged = true;
            break;
        }
    }

    // the (y, z) pair is matched, so y ⊙ Γz = rho_prev holds to rounding and
    // the returned mass equals the previous mass
    let raw = &z * &gamma.0.t().dot(&y);
    let raw_mass = raw.sum();
    let weights = normalize(raw.as_slice().expect("contiguous"))?;
    Ok(ProxOutput {
        weights,
        report: ProxReport {
            iterations,
            res_y,
            res_z,
            wall: Duration::ZERO,
            converged,
            raw_mass,
        },
        y,
        z,
    })
}

fn l2_distance(a: &Array1<f64>, b: &Array1<f64>) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(u, v)| (u - v) * (u - v))
        .sum::<f64>()
        .sqrt()
}

/// ∞-norm residuals of the two fixed-point equations at `(y, z)`:
/// `y ⊙ Γz − rho_prev` and `z ⊙ Γᵀy − ξ ⊙ z^(−βε/h)`.
pub fn fixed_point_residuals(
    prev: &SimplexWeights,
    psi: &PotentialVector,
    gamma: &GibbsKernel,
    cfg: &ProxConfig,
    y: &Array1<f64>,
    z: &Array1<f64>,
) -> (f64, f64) {
    let first = (y * &gamma.0.dot(z) - prev.as_array())
        .iter()
        .fold(0.0_f64, |m, v| m.max(v.abs()));
    let stiffness = cfg.stiffness();
    let lx = log_xi(psi, cfg.beta);
    let gty = gamma.0.t().dot(y);
    let second = z
        .iter()
        .zip(gty.iter())
        .zip(lx.iter())
        .map(|((zi, g), l)| zi * g - (l - stiffness * zi.ln()).exp())
        .fold(0.0_f64, |m, v| m.max(v.abs()));
    (first, second)
}

/// Optimal coupling `M = diag(y) Γ diag(z)`.
pub fn coupling(gamma: &GibbsKernel, y: &Array1<f64>, z: &Array1<f64>) -> Array2<f64> {
    let mut m = gamma.0.clone();
    for ((i, j), v) in m.indexed_iter_mut() {
        *v *= y[i] * z[j];
    }
    m
}

/// Thompson metric on the positive orthant: `log max_i max(z_i/z̃_i, z̃_i/z_i)`.
pub fn thompson_distance(z: &[f64], zt: &[f64]) -> Result<f64> {
    if z.len() != zt.len() {
        return Err(Error::DimensionMismatch {
            context: "Thompson metric",
            expected: z.len(),
            got: zt.len(),
        });
    }
    if z.is_empty() {
        return Err(Error::Empty("Thompson metric of empty vectors"));
    }
    let mut worst = 0.0_f64;
    for (a, b) in z.iter().zip(zt) {
        if !(*a > 0.0) || !(*b > 0.0) || !a.is_finite() || !b.is_finite() {
            return Err(Error::InvalidParameter {
                name: "Thompson metric argument",
                value: if *a > 0.0 { *b } else { *a },
                reason: "entries must be strictly positive and finite",
            });
        }
        // |log a - log b| = log max(a/b, b/a)
        worst = worst.max((a.ln() - b.ln()).abs());
    }
    Ok(worst)
}
