//! Euler–Maruyama transport of particle states, the Lamperti change of
//! variables for the CIR model and satellite nondimensionalization.

use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::cloud::{normalize, ParticleCloud, SimplexWeights, StateMatrix};
use crate::error::{Error, Result};

/// A vector field `∇f : Rⁿ → Rⁿ`.
pub trait GradientField {
    fn dim(&self) -> usize;
    fn gradient(&self, x: &[f64], out: &mut [f64]);
}

/// A scalar potential together with its gradient.
pub trait Potential: GradientField {
    fn value(&self, x: &[f64]) -> f64;
}

impl<T: GradientField + ?Sized> GradientField for &T {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn gradient(&self, x: &[f64], out: &mut [f64]) {
        (**self).gradient(x, out)
    }
}

impl<T: Potential + ?Sized> Potential for &T {
    fn value(&self, x: &[f64]) -> f64 {
        (**self).value(x)
    }
}

impl<T: GradientField + ?Sized> GradientField for Box<T> {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn gradient(&self, x: &[f64], out: &mut [f64]) {
        (**self).gradient(x, out)
    }
}

impl<T: Potential + ?Sized> Potential for Box<T> {
    fn value(&self, x: &[f64]) -> f64 {
        (**self).value(x)
    }
}

/// Source of standard normal increments.
pub trait NoiseSource {
    fn standard_normals(&mut self, out: &mut [f64]);
}

impl<R: Rng + ?Sized> NoiseSource for R {
    fn standard_normals(&mut self, out: &mut [f64]) {
        for v in out.iter_mut() {
            *v = self.sample(StandardNormal);
        }
    }
}

/// Suppresses the Brownian increment (ΔW = 0). For deterministic tests and
/// noise-free reference trajectories.
#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroNoise;

impl NoiseSource for ZeroNoise {
    fn standard_normals(&mut self, out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
    }
}

/// `dx = -∇ψ(x) dt + √(2/β) dw`.
#[derive(Debug, Clone)]
pub struct GradientDriftSystem<P> {
    pub potential: P,
    pub beta: f64,
}

impl<P: Potential> GradientDriftSystem<P> {
    pub fn new(potential: P, beta: f64) -> Result<Self> {
        positive("beta", beta)?;
        Ok(Self { potential, beta })
    }
}

/// `dx = -(∇ψ(x) + ∇(φ * ρ)(x)) dt + √(2/β) dw` with a symmetric interaction `φ`.
#[derive(Debug, Clone)]
pub struct McKeanVlasovSystem<P, Q> {
    pub potential: P,
    pub interaction: Q,
    pub beta: f64,
}

impl<P: Potential, Q: Potential> McKeanVlasovSystem<P, Q> {
    pub fn new(potential: P, interaction: Q, beta: f64) -> Result<Self> {
        positive("beta", beta)?;
        if potential.dim() != interaction.dim() {
            return Err(Error::DimensionMismatch {
                context: "interaction potential dimension",
                expected: potential.dim(),
                got: interaction.dim(),
            });
        }
        Ok(Self {
            potential,
            interaction,
            beta,
        })
    }
}

/// Langevin dynamics on `(q, p)`:
/// `dq = p dt`, `dp = (-∇V(q) - γp) dt + √(2γ/β) dw`.
///
/// The state row is `[q | p]`, so the state dimension is twice the position
/// dimension.
#[derive(Debug, Clone)]
pub struct UnderdampedSystem<V> {
    pub potential: V,
    pub gamma: f64,
    pub beta: f64,
}

impl<V: GradientField> UnderdampedSystem<V> {
    pub fn new(potential: V, gamma: f64, beta: f64) -> Result<Self> {
        positive("gamma", gamma)?;
        positive("beta", beta)?;
        Ok(Self {
            potential,
            gamma,
            beta,
        })
    }

    pub fn n_pos(&self) -> usize {
        self.potential.dim()
    }

    /// `H(q, p) = ½‖p‖² + V(q)`.
    pub fn hamiltonian(&self, state: &[f64]) -> f64
    where
        V: Potential,
    {
        let n = self.n_pos();
        0.5 * state[n..].iter().map(|p| p * p).sum::<f64>() + self.potential.value(&state[..n])
    }
}

fn positive(name: &'static str, value: f64) -> Result<()> {
    if value > 0.0 && value.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter {
            name,
            value,
            reason: "must be positive and finite",
        })
    }
}

fn check_field_dim(cloud: &ParticleCloud, expected: usize) -> Result<()> {
    if cloud.dim() != expected {
        return Err(Error::DimensionMismatch {
            context: "state dimension of the system",
            expected,
            got: cloud.dim(),
        });
    }
    Ok(())
}

/// One Euler–Maruyama step for a gradient system.
/// Noise is drawn particle-major, `n` normals per particle.
pub fn em_step_gradient<P: Potential, N: NoiseSource + ?Sized>(
    cloud: &ParticleCloud,
    sys: &GradientDriftSystem<P>,
    h: f64,
    noise: &mut N,
) -> Result<StateMatrix> {
    positive("h", h)?;
    let n = sys.potential.dim();
    check_field_dim(cloud, n)?;
    let scale = (2.0 * h / sys.beta).sqrt();
    let mut next = cloud.states().as_array().clone();
    let mut grad = vec![0.0; n];
    let mut dw = vec![0.0; n];
    for (i, mut row) in next.rows_mut().into_iter().enumerate() {
        let x = row.as_slice_mut().expect("standard layout");
        sys.potential.gradient(x, &mut grad);
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFiniteDrift { particle: i });
        }
        noise.standard_normals(&mut dw);
        for k in 0..n {
            x[k] += -h * grad[k] + scale * dw[k];
        }
    }
    StateMatrix::new(next)
}

/// One Euler–Maruyama step for a McKean–Vlasov system. The convolution
/// `∇(φ * ρ)(xᵢ)` is approximated by `Σⱼ ∇φ(xᵢ − xⱼ) ϱⱼ` with the current
/// weights.
pub fn em_step_mckean_vlasov<P: Potential, Q: Potential, N: NoiseSource + ?Sized>(
    cloud: &ParticleCloud,
    sys: &McKeanVlasovSystem<P, Q>,
    h: f64,
    noise: &mut N,
) -> Result<StateMatrix> {
    positive("h", h)?;
    let n = sys.potential.dim();
    check_field_dim(cloud, n)?;
    let scale = (2.0 * h / sys.beta).sqrt();
    let x = cloud.states().as_array();
    let w = cloud.weights();
    let mut next = x.clone();
    let mut grad = vec![0.0; n];
    let mut pair = vec![0.0; n];
    let mut diff = vec![0.0; n];
    let mut dw = vec![0.0; n];
    for i in 0..x.nrows() {
        let xi = x.row(i);
        sys.potential
            .gradient(xi.as_slice().expect("standard layout"), &mut grad);
        for (j, xj) in x.rows().into_iter().enumerate() {
            for k in 0..n {
                diff[k] = xi[k] - xj[k];
            }
            sys.interaction.gradient(&diff, &mut pair);
            for k in 0..n {
                grad[k] += pair[k] * w[j];
            }
        }
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFiniteDrift { particle: i });
        }
        noise.standard_normals(&mut dw);
        for k in 0..n {
            next[[i, k]] += -h * grad[k] + scale * dw[k];
        }
    }
    StateMatrix::new(next)
}

/// One Euler–Maruyama step for Langevin dynamics. Positions use the previous
/// momenta; noise (`n_pos` normals per particle) enters the momenta only.
pub fn em_step_underdamped<V: GradientField, N: NoiseSource + ?Sized>(
    cloud: &ParticleCloud,
    sys: &UnderdampedSystem<V>,
    h: f64,
    noise: &mut N,
) -> Result<StateMatrix> {
    positive("h", h)?;
    let n = sys.n_pos();
    check_field_dim(cloud, 2 * n)?;
    let scale = (2.0 * sys.gamma * h / sys.beta).sqrt();
    let mut next = cloud.states().as_array().clone();
    let mut grad = vec![0.0; n];
    let mut dw = vec![0.0; n];
    for (i, mut row) in next.rows_mut().into_iter().enumerate() {
        let s = row.as_slice_mut().expect("standard layout");
        sys.potential.gradient(&s[..n], &mut grad);
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFiniteDrift { particle: i });
        }
        noise.standard_normals(&mut dw);
        for k in 0..n {
            let p = s[n + k];
            s[k] += h * p;
            s[n + k] = p - h * (grad[k] + sys.gamma * p) + scale * dw[k];
        }
    }
    StateMatrix::new(next)
}

/// Change of state variable `y = ς(x)` with its inverse and `|det ∂ς/∂x|`.
pub trait CoordinateMap {
    fn forward(&self, x: &[f64], y: &mut [f64]);
    fn inverse(&self, y: &[f64], x: &mut [f64]);
    /// `|det ∂ς/∂x|` at `x`.
    fn jacobian(&self, x: &[f64]) -> f64;
}

/// Maps a `y`-space cloud back to `x`-space. Weights (density values up to a
/// constant) pick up the factor `|∂ς/∂x|` at the mapped points and are
/// re-normalized.
pub fn pushforward_density<M: CoordinateMap + ?Sized>(
    weights: &SimplexWeights,
    states_y: &StateMatrix,
    map: &M,
) -> Result<(SimplexWeights, StateMatrix)> {
    if weights.len() != states_y.len() {
        return Err(Error::DimensionMismatch {
            context: "pushforward weights",
            expected: states_y.len(),
            got: weights.len(),
        });
    }
    let y = states_y.as_array();
    let mut x = Array2::<f64>::zeros(y.raw_dim());
    let mut raw = Vec::with_capacity(weights.len());
    for (i, (yr, mut xr)) in y.rows().into_iter().zip(x.rows_mut()).enumerate() {
        let xs = xr.as_slice_mut().expect("standard layout");
        map.inverse(yr.as_slice().expect("standard layout"), xs);
        let jac = map.jacobian(xs);
        if !(jac > 0.0) || !jac.is_finite() {
            return Err(Error::InvalidJacobian { index: i, value: jac });
        }
        raw.push(weights[i] * jac);
    }
    Ok((normalize(&raw)?, StateMatrix::new(x)?))
}

/// `ψ(y) = a y²/4 − (q + ½) log y`, the CIR potential after the Lamperti
/// transform, with `q = 2aθ/b² − 1`. Defined for `y > 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CirLampertiPotential {
    pub a: f64,
    pub q: f64,
}

impl GradientField for CirLampertiPotential {
    fn dim(&self) -> usize {
        1
    }
    fn gradient(&self, x: &[f64], out: &mut [f64]) {
        let y = x[0];
        out[0] = if y > 0.0 {
            0.5 * self.a * y - (self.q + 0.5) / y
        } else {
            f64::NAN
        };
    }
}

impl Potential for CirLampertiPotential {
    fn value(&self, x: &[f64]) -> f64 {
        let y = x[0];
        if y > 0.0 {
            0.25 * self.a * y * y - (self.q + 0.5) * y.ln()
        } else {
            f64::NAN
        }
    }
}

/// `ς(x) = 2√x / b`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SqrtMap {
    pub b: f64,
}

impl CoordinateMap for SqrtMap {
    fn forward(&self, x: &[f64], y: &mut [f64]) {
        y[0] = 2.0 * x[0].sqrt() / self.b;
    }
    fn inverse(&self, y: &[f64], x: &mut [f64]) {
        x[0] = self.b * self.b * y[0] * y[0] / 4.0;
    }
    fn jacobian(&self, x: &[f64]) -> f64 {
        1.0 / (self.b * x[0].sqrt())
    }
}

/// A gradient system simulated in transformed coordinates, with the map back
/// to the original state.
#[derive(Debug, Clone)]
pub struct LampertiWrappedSystem<P, M> {
    pub inner: GradientDriftSystem<P>,
    pub map: M,
}

/// CIR `dx = a(θ − x) dt + b√x dw` in Lamperti coordinates: unit diffusion
/// (`β = 2`) and the potential [`CirLampertiPotential`].
pub fn lamperti_transform_cir(
    a: f64,
    b: f64,
    theta: f64,
) -> Result<LampertiWrappedSystem<CirLampertiPotential, SqrtMap>> {
    let feller = a.is_finite() && b.is_finite() && theta.is_finite();
    if !(feller && b * b > 0.0 && 2.0 * a > b * b && theta > 0.0) {
        return Err(Error::FellerViolated { a, b, theta });
    }
    let q = 2.0 * a * theta / (b * b) - 1.0;
    Ok(LampertiWrappedSystem {
        inner: GradientDriftSystem {
            potential: CirLampertiPotential { a, q },
            beta: 2.0,
        },
        map: SqrtMap { b },
    })
}

/// Length and time scales for the `[q | p]` satellite state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scales {
    pub length: f64,
    pub time: f64,
}

/// Radius of the nominal geostationary orbit, m.
pub const GEO_RADIUS: f64 = 4.2164e7;
/// Sidereal day, s.
pub const SIDEREAL_DAY: f64 = 86164.0;

impl Default for Scales {
    fn default() -> Self {
        Self {
            length: GEO_RADIUS,
            time: SIDEREAL_DAY,
        }
    }
}

impl Scales {
    pub fn new(length: f64, time: f64) -> Result<Self> {
        positive("length scale", length)?;
        positive("time scale", time)?;
        Ok(Self { length, time })
    }

    fn rescale(&self, cloud: &ParticleCloud, pos: f64, vel: f64, t: f64) -> Result<ParticleCloud> {
        let d = cloud.dim();
        if !d.is_multiple_of(2) {
            return Err(Error::DimensionMismatch {
                context: "position/momentum state must have even width",
                expected: d + 1,
                got: d,
            });
        }
        let n = d / 2;
        let mut s = cloud.states().as_array().clone();
        for mut row in s.rows_mut() {
            for k in 0..n {
                row[k] *= pos;
                row[n + k] *= vel;
            }
        }
        // linear map with a constant Jacobian: simplex weights are unchanged
        ParticleCloud::new(StateMatrix::new(s)?, cloud.weights().clone(), cloud.time() * t)
    }

    /// `q' = q/R`, `p' = p/(R/T)`, `t' = t/T`.
    pub fn to_nondim(&self, cloud: &ParticleCloud) -> Result<ParticleCloud> {
        let (r, t) = (self.length, self.time);
        self.rescale(cloud, 1.0 / r, t / r, 1.0 / t)
    }

    pub fn to_dim(&self, cloud: &ParticleCloud) -> Result<ParticleCloud> {
        let (r, t) = (self.length, self.time);
        self.rescale(cloud, r, r / t, t)
    }
}

/// Coefficients of the Langevin system after scaling with [`Scales`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NondimCoefficients {
    /// `T²μ/R³`.
    pub gravity: f64,
    /// `T²/R`, multiplying the dimensional perturbing acceleration at `R q'`.
    pub perturbation: f64,
    /// `γT`.
    pub gamma: f64,
    /// `βR²/T²`.
    pub beta: f64,
    /// `(T^{3/2}/R) √(2γ/β)`.
    pub noise: f64,
}

impl NondimCoefficients {
    pub fn new(scales: &Scales, mu: f64, gamma: f64, beta: f64) -> Result<Self> {
        positive("mu", mu)?;
        positive("gamma", gamma)?;
        positive("beta", beta)?;
        let (r, t) = (scales.length, scales.time);
        Ok(Self {
            gravity: t * t * mu / (r * r * r),
            perturbation: t * t / r,
            gamma: gamma * t,
            beta: beta * r * r / (t * t),
            noise: t.powf(1.5) / r * (2.0 * gamma / beta).sqrt(),
        })
    }
}
