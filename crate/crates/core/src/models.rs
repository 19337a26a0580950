//! Benchmark potentials and closed-form reference solutions.

use ndarray::{Array1, Array2};
use statrs::function::gamma::ln_gamma;

use crate::cloud::{normalize, SimplexWeights, StateMatrix};
use crate::error::{Error, Result};
use crate::sde::{GradientField, NondimCoefficients, Potential, Scales};

pub use crate::sde::CirLampertiPotential;

/// `ψ(x) = (a/2)‖x‖²`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quadratic {
    pub a: f64,
    pub dim: usize,
}

impl GradientField for Quadratic {
    fn dim(&self) -> usize {
        self.dim
    }
    fn gradient(&self, x: &[f64], out: &mut [f64]) {
        for (o, v) in out.iter_mut().zip(x) {
            *o = self.a * v;
        }
    }
}

impl Potential for Quadratic {
    fn value(&self, x: &[f64]) -> f64 {
        0.5 * self.a * x.iter().map(|v| v * v).sum::<f64>()
    }
}

/// `ψ(x₁, x₂) = (1 + x₁⁴)/4 + (x₂² − x₁²)/2`, whose Gibbs density is bimodal.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DoubleWell;

impl GradientField for DoubleWell {
    fn dim(&self) -> usize {
        2
    }
    fn gradient(&self, x: &[f64], out: &mut [f64]) {
        out[0] = x[0] * x[0] * x[0] - x[0];
        out[1] = x[1];
    }
}

impl Potential for DoubleWell {
    fn value(&self, x: &[f64]) -> f64 {
        let (a, b) = (x[0], x[1]);
        0.25 * (1.0 + a * a * a * a) + 0.5 * (b * b - a * a)
    }
}

/// Normal density `N(mean, var)` at `x`.
pub fn normal_pdf(x: f64, mean: f64, var: f64) -> f64 {
    let d = x - mean;
    (-0.5 * d * d / var).exp() / (2.0 * std::f64::consts::PI * var).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OuParams {
    pub a: f64,
    pub beta: f64,
    pub mu0: f64,
    pub sigma0_sq: f64,
}

impl Default for OuParams {
    fn default() -> Self {
        Self {
            a: 1.0,
            beta: 1.0,
            mu0: 5.0,
            sigma0_sq: 4e-2,
        }
    }
}

/// Mean and variance of `dx = −ax dt + √(2/β) dw` started from `N(μ₀, σ₀²)`.
pub fn ou_analytic(p: &OuParams, t: f64) -> (f64, f64) {
    if t == 0.0 {
        return (p.mu0, p.sigma0_sq);
    }
    let stat = 1.0 / (p.a * p.beta);
    (
        p.mu0 * (-p.a * t).exp(),
        (p.sigma0_sq - stat) * (-2.0 * p.a * t).exp() + stat,
    )
}

/// Mean and variance of the McKean–Vlasov flow with `ψ = a x²/2`,
/// `φ = b v²/2`.
pub fn mv_analytic(a: f64, b: f64, beta: f64, mu0: f64, sigma0_sq: f64, t: f64) -> (f64, f64) {
    if t == 0.0 {
        return (mu0, sigma0_sq);
    }
    let stat = 1.0 / ((a + b) * beta);
    (
        mu0 * (-a * t).exp(),
        (sigma0_sq - stat) * (-2.0 * (a + b) * t).exp() + stat,
    )
}

/// `dx = Ax dt + B dw`, `x₀ ~ N(μ₀, Σ₀)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LtiParams {
    pub a: Array2<f64>,
    pub b: Array2<f64>,
    pub mu0: Array1<f64>,
    pub sigma0: Array2<f64>,
}

impl Default for LtiParams {
    fn default() -> Self {
        Self {
            a: ndarray::array![[-10.0, 5.0], [-30.0, 0.0]],
            b: ndarray::array![[2.0], [2.5]],
            mu0: ndarray::array![4.0, 4.0],
            sigma0: Array2::eye(2) * 4.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LtiMoments {
    pub mean: Array1<f64>,
    pub covariance: Array2<f64>,
    /// `false` when `A` has an eigenvalue with nonnegative real part; the
    /// moments are still a valid finite-horizon solution.
    pub hurwitz: bool,
}

/// Integrates `μ̇ = Aμ`, `Σ̇ = AΣ + ΣAᵀ + BBᵀ` with classical RK4, starting
/// at step `1e-4·max(1, t)` and halving until two successive results agree
/// to `1e-8`.
pub fn lti_moments(p: &LtiParams, t: f64) -> Result<LtiMoments> {
    let n = p.a.nrows();
    if p.a.ncols() != n || p.b.nrows() != n || p.mu0.len() != n || p.sigma0.dim() != (n, n) {
        return Err(Error::DimensionMismatch {
            context: "LTI parameter shapes",
            expected: n,
            got: p.a.ncols(),
        });
    }
    if !(t >= 0.0) || !t.is_finite() {
        return Err(Error::InvalidParameter {
            name: "t",
            value: t,
            reason: "must be finite and nonnegative",
        });
    }
    let hurwitz = is_hurwitz(&p.a);
    if t == 0.0 {
        return Ok(LtiMoments {
            mean: p.mu0.clone(),
            covariance: p.sigma0.clone(),
            hurwitz,
        });
    }
    let mut steps = (t / (1e-4 * t.max(1.0))).ceil() as usize;
    let mut coarse = integrate_moments(p, t, steps);
    for _ in 0..8 {
        steps *= 2;
        let fine = integrate_moments(p, t, steps);
        let gap = max_abs_diff(coarse.0.iter(), fine.0.iter())
            .max(max_abs_diff(coarse.1.iter(), fine.1.iter()));
        coarse = fine;
        if gap <= 1e-8 {
            break;
        }
    }
    Ok(LtiMoments {
        mean: coarse.0,
        covariance: coarse.1,
        hurwitz,
    })
}

fn max_abs_diff<'a>(a: impl Iterator<Item = &'a f64>, b: impl Iterator<Item = &'a f64>) -> f64 {
    a.zip(b).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

fn integrate_moments(p: &LtiParams, t: f64, steps: usize) -> (Array1<f64>, Array2<f64>) {
    let a = &p.a;
    let bbt = p.b.dot(&p.b.t());
    let h = t / steps as f64;
    let fm = |m: &Array1<f64>| a.dot(m);
    let fs = |s: &Array2<f64>| a.dot(s) + s.dot(&a.t()) + &bbt;
    let mut m = p.mu0.clone();
    let mut s = p.sigma0.clone();
    for _ in 0..steps {
        let k1 = fm(&m);
        let k2 = fm(&(&m + &(&k1 * (h / 2.0))));
        let k3 = fm(&(&m + &(&k2 * (h / 2.0))));
        let k4 = fm(&(&m + &(&k3 * h)));
        m = &m + &((k1 + &k2 * 2.0 + &k3 * 2.0 + k4) * (h / 6.0));

        let l1 = fs(&s);
        let l2 = fs(&(&s + &(&l1 * (h / 2.0))));
        let l3 = fs(&(&s + &(&l2 * (h / 2.0))));
        let l4 = fs(&(&s + &(&l3 * h)));
        s = &s + &((l1 + &l2 * 2.0 + &l3 * 2.0 + l4) * (h / 6.0));
    }
    (m, s)
}

/// Characteristic polynomial by Faddeev–LeVerrier, then the Routh test.
fn is_hurwitz(a: &Array2<f64>) -> bool {
    let n = a.nrows();
    // coeffs[k] multiplies λ^(n-k); coeffs[0] = 1
    let mut coeffs = vec![1.0];
    let mut m = Array2::<f64>::zeros((n, n));
    for k in 1..=n {
        m = a.dot(&m) + Array2::<f64>::eye(n) * coeffs[k - 1];
        let am = a.dot(&m);
        coeffs.push(-am.diag().sum() / k as f64);
    }
    routh_stable(&coeffs)
}

fn routh_stable(coeffs: &[f64]) -> bool {
    if coeffs.iter().any(|c| !(*c > 0.0)) {
        return false;
    }
    let mut prev: Vec<f64> = coeffs.iter().step_by(2).copied().collect();
    let mut cur: Vec<f64> = coeffs.iter().skip(1).step_by(2).copied().collect();
    for _ in 0..coeffs.len().saturating_sub(2) {
        let pivot = cur.first().copied().unwrap_or(0.0);
        if !(pivot > 0.0) {
            return false;
        }
        let next: Vec<f64> = (0..prev.len().saturating_sub(1))
            .map(|j| {
                let c = cur.get(j + 1).copied().unwrap_or(0.0);
                (pivot * prev[j + 1] - prev[0] * c) / pivot
            })
            .collect();
        prev = cur;
        cur = next;
    }
    cur.first().is_none_or(|c| *c > 0.0)
}

/// `dx = a(θ − x) dt + b√x dw` started at `x₀`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CirParams {
    pub a: f64,
    pub b: f64,
    pub theta: f64,
    pub x0: f64,
}

impl Default for CirParams {
    fn default() -> Self {
        Self {
            a: 3.0,
            b: 2.0,
            theta: 2.0,
            x0: 5.0,
        }
    }
}

impl CirParams {
    pub fn validate(&self) -> Result<()> {
        let (a, b, theta) = (self.a, self.b, self.theta);
        if !(b * b > 0.0 && 2.0 * a > b * b && theta > 0.0) {
            return Err(Error::FellerViolated { a, b, theta });
        }
        if !(self.x0 > 0.0) {
            return Err(Error::InvalidParameter {
                name: "x0",
                value: self.x0,
                reason: "must be positive",
            });
        }
        Ok(())
    }

    /// `2aθ/b² − 1`.
    pub fn order(&self) -> f64 {
        2.0 * self.a * self.theta / (self.b * self.b) - 1.0
    }
}

/// Transient density of the CIR process at `x`, time `t > 0`.
/// Zero for `x ≤ 0`.
pub fn cir_transient_pdf(p: &CirParams, x: f64, t: f64) -> Result<f64> {
    p.validate()?;
    if !(t > 0.0) {
        return Err(Error::InvalidParameter {
            name: "t",
            value: t,
            reason: "the law at t = 0 is a point mass",
        });
    }
    if !(x > 0.0) {
        return Ok(0.0);
    }
    let q = p.order();
    let decay = (-p.a * t).exp();
    let c = 2.0 * p.a / (p.b * p.b * (1.0 - decay));
    let u = c * p.x0 * decay;
    let v = c * x;
    let arg = 2.0 * (u * v).sqrt();
    // exp(-(u+v)) I_q(2√(uv)) = exp(-(√u-√v)²) · e^{-z} I_q(z)
    let gap = u.sqrt() - v.sqrt();
    Ok(c * (-gap * gap).exp() * (v / u).powf(q / 2.0) * bessel_i_scaled(q, arg)?)
}

/// `θ + (x₀ − θ)e^{−at}`.
pub fn cir_mean(p: &CirParams, t: f64) -> f64 {
    p.theta + (p.x0 - p.theta) * (-p.a * t).exp()
}

/// Largest argument accepted by [`bessel_i`].
pub const BESSEL_MAX_ARG: f64 = 700.0;

/// Modified Bessel function of the first kind `I_q(x)` by its power series.
pub fn bessel_i(q: f64, x: f64) -> Result<f64> {
    if x > BESSEL_MAX_ARG {
        return Err(Error::BesselRange { x });
    }
    Ok(bessel_i_scaled(q, x)? * x.exp())
}

/// `e^{−x} I_q(x)`, summed in scaled form so that large arguments do not
/// overflow.
pub fn bessel_i_scaled(q: f64, x: f64) -> Result<f64> {
    if !(q >= 0.0) || !q.is_finite() {
        return Err(Error::InvalidParameter {
            name: "order",
            value: q,
            reason: "must be finite and nonnegative",
        });
    }
    if !(x >= 0.0) || x > 1e5 {
        return Err(Error::BesselRange { x });
    }
    if x == 0.0 {
        return Ok(if q == 0.0 { 1.0 } else { 0.0 });
    }
    let half = 0.5 * x;
    let quarter_sq = half * half;
    let mut term = (q * half.ln() - ln_gamma(q + 1.0) - x).exp();
    let mut sum = term;
    let mut m = 0.0;
    loop {
        let ratio = quarter_sq / ((m + 1.0) * (m + q + 1.0));
        term *= ratio;
        sum += term;
        m += 1.0;
        if ratio < 1.0 && term <= 1e-16 * sum {
            break;
        }
        if m > 1e6 {
            return Err(Error::BesselRange { x });
        }
    }
    Ok(sum)
}

/// Adaptive Simpson quadrature on `[a, b]` with absolute tolerance `tol`.
pub fn integrate<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> f64 {
    let fa = f(a);
    let fb = f(b);
    let m = 0.5 * (a + b);
    let fm = f(m);
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    simpson_step(f, a, b, fa, fm, fb, whole, tol, 50)
}

#[allow(clippy::too_many_arguments)]
fn simpson_step<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> f64 {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        return left + right + delta / 15.0;
    }
    simpson_step(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
        + simpson_step(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
}

/// `∫₀^∞ f` for a density-like integrand: adaptive Simpson on `[0, w]`, then
/// on doubling panels until a panel contributes less than `tol`.
pub fn integrate_half_line<F: Fn(f64) -> f64>(f: &F, w: f64, tol: f64) -> f64 {
    let mut total = integrate(f, 0.0, w, tol);
    let mut lo = w;
    for _ in 0..60 {
        let part = integrate(f, lo, 2.0 * lo, tol);
        total += part;
        lo *= 2.0;
        if part.abs() < tol {
            break;
        }
    }
    total
}

/// `∫ x ρ(x, t) dx` by quadrature of [`cir_transient_pdf`].
pub fn cir_mean_quadrature(p: &CirParams, t: f64) -> Result<f64> {
    cir_transient_pdf(p, 1.0, t)?;
    let f = |x: f64| x * cir_transient_pdf(p, x, t).unwrap_or(f64::NAN);
    Ok(integrate_half_line(&f, 4.0 * (p.x0 + p.theta), 1e-12))
}

/// Gibbs weights `exp(−βψ(xᵢ))` normalized over the given points.
pub fn gibbs_stationary<P: Potential + ?Sized>(psi: &P, beta: f64, points: &StateMatrix) -> Result<SimplexWeights> {
    let values: Vec<f64> = points
        .as_array()
        .rows()
        .into_iter()
        .map(|r| beta * psi.value(r.as_slice().expect("standard layout")))
        .collect();
    if let Some(index) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            context: "Gibbs potential",
            index,
        });
    }
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let raw: Vec<f64> = values.iter().map(|v| (min - v).exp()).collect();
    normalize(&raw)
}

/// Physical constants and scales of the perturbed two-body problem.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SatelliteParams {
    /// Gravitational parameter, m³/s².
    pub mu: f64,
    pub j2: f64,
    /// Earth radius, m.
    pub r_earth: f64,
    /// Linear drag, 1/s.
    pub gamma: f64,
    /// Inverse temperature, s²/m².
    pub beta: f64,
    pub scales: Scales,
}

impl Default for SatelliteParams {
    fn default() -> Self {
        Self {
            mu: 3.9859e14,
            j2: 1.082e-3,
            r_earth: 6.3781e6,
            gamma: 1.0,
            beta: 1.0,
            scales: Scales::default(),
        }
    }
}

impl SatelliteParams {
    /// `k = 3 J₂ R_E² μ`.
    pub fn k(&self) -> f64 {
        3.0 * self.j2 * self.r_earth * self.r_earth * self.mu
    }

    pub fn coefficients(&self) -> Result<NondimCoefficients> {
        NondimCoefficients::new(&self.scales, self.mu, self.gamma, self.beta)
    }
}

/// Oblateness perturbation in spherical components `(f_r, f_θ)`, with `θ`
/// the angle whose cosine is `z/r`.
fn oblateness_spherical(k: f64, r: f64, s_theta: f64, c_theta: f64) -> (f64, f64) {
    let r4 = r.powi(4);
    (
        k / (2.0 * r4) * (3.0 * s_theta * s_theta - 1.0),
        -k / (r4 * r) * s_theta * c_theta,
    )
}

/// Gravitational acceleration `−μq/‖q‖³` and the cartesian oblateness
/// perturbation at `q` (meters).
pub fn satellite_drift(q: &[f64; 3], p: &SatelliteParams) -> Result<([f64; 3], [f64; 3])> {
    let r = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2]).sqrt();
    if !(r > 0.0) || !r.is_finite() {
        return Err(Error::Singularity("satellite drift at the origin"));
    }
    let r3 = r * r * r;
    let grav = [-p.mu * q[0] / r3, -p.mu * q[1] / r3, -p.mu * q[2] / r3];
    Ok((grav, perturbation(q, r, p.k())))
}

fn perturbation(q: &[f64], r: f64, k: f64) -> [f64; 3] {
    let c_theta = (q[2] / r).clamp(-1.0, 1.0);
    let s_theta = (1.0 - c_theta * c_theta).sqrt();
    let (c_phi, s_phi) = if s_theta > 1e-12 {
        (q[0] / (r * s_theta), q[1] / (r * s_theta))
    } else {
        // pole: the azimuth is undefined and f_θ vanishes
        (1.0, 0.0)
    };
    let (f_r, f_t) = oblateness_spherical(k, r, s_theta, c_theta);
    [
        s_theta * c_phi * f_r + c_theta * c_phi * f_t,
        s_theta * s_phi * f_r + c_theta * s_phi * f_t,
        c_theta * f_r - s_theta * f_t,
    ]
}

/// `∇V` in scaled coordinates:
/// `(T²μ/R³) q'/‖q'‖³ − (T²/R) f_pert(R q')`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SatelliteField {
    pub params: SatelliteParams,
    pub coefficients: NondimCoefficients,
}

impl SatelliteField {
    pub fn new(params: SatelliteParams) -> Result<Self> {
        Ok(Self {
            params,
            coefficients: params.coefficients()?,
        })
    }

    /// The scaled gravitational potential `−(T²μ/R³)/‖q'‖` (perturbation
    /// excluded).
    pub fn gravity_potential(&self, x: &[f64]) -> f64 {
        let r = (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]).sqrt();
        -self.coefficients.gravity / r
    }
}

impl GradientField for SatelliteField {
    fn dim(&self) -> usize {
        3
    }
    fn gradient(&self, x: &[f64], out: &mut [f64]) {
        let r = (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]).sqrt();
        if !(r > 0.0) {
            out.iter_mut().for_each(|v| *v = f64::NAN);
            return;
        }
        let len = self.params.scales.length;
        let dim = [x[0] * len, x[1] * len, x[2] * len];
        let pert = perturbation(&dim, r * len, self.params.k());
        let g = self.coefficients.gravity / (r * r * r);
        for k in 0..3 {
            out[k] = g * x[k] - self.coefficients.perturbation * pert[k];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn ou_examples() {
        let p = OuParams::default();
        assert_eq!(ou_analytic(&p, 0.0), (5.0, 0.04));
        let (m, v) = ou_analytic(&p, 1.0);
        assert!((m - 1.8393972058572117).abs() < 1e-12);
        assert!((v - ((0.04 - 1.0) * (-2.0f64).exp() + 1.0)).abs() < 1e-15);
        assert!((v - 0.87008).abs() < 1e-5);
        let (m, v) = ou_analytic(&p, 200.0);
        assert!(m.abs() < 1e-80 && (v - 1.0).abs() < 1e-15);
    }

    #[test]
    fn mv_examples() {
        assert_eq!(mv_analytic(1.0, 1.0, 1.0, 5.0, 9.0, 0.0), (5.0, 9.0));
        let (m, v) = mv_analytic(1.0, 1.0, 1.0, 5.0, 9.0, 1.0);
        assert!((m - 1.8393972058572117).abs() < 1e-12);
        assert!((v - 0.65568).abs() < 1e-5);
        let (_, v) = mv_analytic(1.0, 1.0, 1.0, 5.0, 9.0, 100.0);
        assert!((v - 0.5).abs() < 1e-15);
    }

    #[test]
    fn lti_initial_condition_is_exact() {
        let p = LtiParams::default();
        let m = lti_moments(&p, 0.0).unwrap();
        assert_eq!(m.mean, p.mu0);
        assert_eq!(m.covariance, p.sigma0);
        assert!(m.hurwitz);
    }

    #[test]
    fn lti_decoupled_decay() {
        let p = LtiParams {
            a: -Array2::<f64>::eye(2),
            b: Array2::zeros((2, 1)),
            mu0: ndarray::array![1.0, -2.0],
            sigma0: ndarray::array![[2.0, 0.5], [0.5, 1.0]],
        };
        let m = lti_moments(&p, 1.5).unwrap();
        let e = (-3.0f64).exp();
        for ((i, j), v) in m.covariance.indexed_iter() {
            assert!((v - p.sigma0[[i, j]] * e).abs() < 1e-10);
        }
        assert!((m.mean[1] + 2.0 * (-1.5f64).exp()).abs() < 1e-10);
    }

    #[test]
    fn hurwitz_flag() {
        assert!(is_hurwitz(&ndarray::array![[-10.0, 5.0], [-30.0, 0.0]]));
        assert!(!is_hurwitz(&ndarray::array![[1.0, 0.0], [0.0, -1.0]]));
        assert!(!is_hurwitz(&ndarray::array![[0.0, 1.0], [-1.0, 0.0]]));
        assert!(is_hurwitz(&ndarray::array![
            [-1.0, 2.0, 0.0],
            [-2.0, -1.0, 0.0],
            [0.0, 0.0, -3.0]
        ]));
        assert!(!is_hurwitz(&ndarray::array![
            [1.0, 2.0, 0.0],
            [-2.0, 1.0, 0.0],
            [0.0, 0.0, -3.0]
        ]));
    }

    #[test]
    fn lti_covariance_stays_symmetric_positive_definite() {
        let p = LtiParams::default();
        for t in [0.01, 0.1, 0.5, 2.0] {
            let s = lti_moments(&p, t).unwrap().covariance;
            assert!((s[[0, 1]] - s[[1, 0]]).abs() <= 1e-10);
            let det = s[[0, 0]] * s[[1, 1]] - s[[0, 1]] * s[[1, 0]];
            assert!(s[[0, 0]] > 0.0 && det > 0.0);
        }
    }

    #[test]
    fn bessel_examples() {
        assert_eq!(bessel_i(0.0, 0.0).unwrap(), 1.0);
        assert_eq!(bessel_i(2.0, 0.0).unwrap(), 0.0);
        assert!((bessel_i(0.0, 1.0).unwrap() - 1.2660658777520082).abs() < 1e-15);
        // I_1(1), I_2(5), I_0.5(x) = √(2/(πx)) sinh x
        assert!((bessel_i(1.0, 1.0).unwrap() / 0.5651591039924851 - 1.0).abs() < 1e-12);
        assert!((bessel_i(2.0, 5.0).unwrap() / 17.505614966624236 - 1.0).abs() < 1e-12);
        for x in [0.1, 3.0, 17.0, 30.0] {
            let exact = (2.0 / (std::f64::consts::PI * x)).sqrt() * x.sinh();
            assert!((bessel_i(0.5, x).unwrap() / exact - 1.0).abs() < 1e-10);
        }
        assert!(matches!(bessel_i(0.0, 701.0), Err(Error::BesselRange { .. })));
    }

    #[test]
    fn cir_pdf_edge_cases() {
        let p = CirParams::default();
        assert_eq!(cir_transient_pdf(&p, 0.0, 1.0).unwrap(), 0.0);
        assert_eq!(cir_transient_pdf(&p, -2.0, 1.0).unwrap(), 0.0);
        assert!(cir_transient_pdf(&p, 1.0, 0.0).is_err());
    }

    #[test]
    fn cir_pdf_normalizes_and_matches_mean() {
        let p = CirParams::default();
        for t in [0.1, 0.5, 1.0] {
            let mass = integrate_half_line(&|x| cir_transient_pdf(&p, x, t).unwrap(), 28.0, 1e-12);
            assert!((mass - 1.0).abs() < 1e-6, "t = {t}: mass {mass}");
        }
        let m = cir_mean_quadrature(&p, 1.0).unwrap();
        assert!((m - cir_mean(&p, 1.0)).abs() < 1e-6);
        assert!((m - 2.1494).abs() < 1e-4);
    }

    #[test]
    fn gibbs_examples() {
        let pts = StateMatrix::from_scalars(&[-1.0, 0.0, 1.0]).unwrap();
        struct Flat;
        impl GradientField for Flat {
            fn dim(&self) -> usize {
                1
            }
            fn gradient(&self, _: &[f64], o: &mut [f64]) {
                o[0] = 0.0;
            }
        }
        impl Potential for Flat {
            fn value(&self, _: &[f64]) -> f64 {
                3.0
            }
        }
        let w = gibbs_stationary(&Flat, 1.0, &pts).unwrap();
        assert!(w.iter().all(|v| (v - 1.0 / 3.0).abs() < 1e-15));
        let w = gibbs_stationary(&Quadratic { a: 1.0, dim: 1 }, 1.0, &pts).unwrap();
        let e = (-0.5f64).exp();
        let z = 1.0 + 2.0 * e;
        assert!((w[0] - e / z).abs() < 1e-15 && (w[1] - 1.0 / z).abs() < 1e-15);
    }

    #[test]
    fn double_well_critical_points() {
        let mut g = [0.0; 2];
        for x1 in [-1.0, 0.0, 1.0] {
            DoubleWell.gradient(&[x1, 0.0], &mut g);
            assert_eq!(g, [0.0, 0.0]);
        }
        let pts = StateMatrix::from_rows(&[vec![-1.0, 0.0], vec![0.0, 0.0], vec![1.0, 0.0], vec![1.0, 0.5]])
            .unwrap();
        let w = gibbs_stationary(&DoubleWell, 1.0, &pts).unwrap();
        assert!((w[0] - w[2]).abs() < 1e-15);
        assert!(w[0] > w[1] && w[2] > w[3]);
    }

    #[test]
    fn satellite_drift_examples() {
        let p = SatelliteParams::default();
        let k = p.k();
        let r = 4.2164e7;
        let (g, f) = satellite_drift(&[r, 0.0, 0.0], &p).unwrap();
        assert!((g[0] + p.mu / (r * r)).abs() < 1e-15);
        let fr = k / r.powi(4);
        assert!((f[0] - fr).abs() <= 1e-12 * fr && f[1].abs() < 1e-20 && f[2].abs() < 1e-20);
        let norm = (f[0] * f[0] + f[1] * f[1] + f[2] * f[2]).sqrt();
        let expected = 3.0 * 1.082e-3 * 6.3781e6f64.powi(2) * 3.9859e14 / r.powi(4);
        assert!((norm / expected - 1.0).abs() < 1e-12);

        let (_, f) = satellite_drift(&[0.0, 0.0, r], &p).unwrap();
        assert!((f[2] + k / (2.0 * r.powi(4))).abs() <= 1e-12 * fr);
        assert!(f[0].abs() < 1e-20 && f[1].abs() < 1e-20);

        assert!((p.mu / (r * r)) / norm >= 1e3);
        assert!(matches!(
            satellite_drift(&[0.0; 3], &p),
            Err(Error::Singularity(_))
        ));
    }

    #[test]
    fn satellite_field_scales_the_dimensional_drift() {
        let p = SatelliteParams::default();
        let field = SatelliteField::new(p).unwrap();
        let x = [0.9, 0.3, -0.2];
        let (r, t) = (p.scales.length, p.scales.time);
        let (g, f) = satellite_drift(&[x[0] * r, x[1] * r, x[2] * r], &p).unwrap();
        let mut out = [0.0; 3];
        field.gradient(&x, &mut out);
        for k in 0..3 {
            // -∇V' = (T²/R)(gravity + perturbation)
            let expected = -(t * t / r) * (g[k] + f[k]);
            assert!((out[k] - expected).abs() <= 1e-10 * expected.abs().max(1.0));
        }
    }

    proptest! {
        #[test]
        fn double_well_gradient_consistent(x1 in -3.0f64..3.0, x2 in -3.0f64..3.0) {
            let e = 1e-6;
            let mut g = [0.0; 2];
            DoubleWell.gradient(&[x1, x2], &mut g);
            let d1 = (DoubleWell.value(&[x1 + e, x2]) - DoubleWell.value(&[x1 - e, x2])) / (2.0 * e);
            let d2 = (DoubleWell.value(&[x1, x2 + e]) - DoubleWell.value(&[x1, x2 - e])) / (2.0 * e);
            prop_assert!((d1 - g[0]).abs() < 1e-5 && (d2 - g[1]).abs() < 1e-5);
        }

        #[test]
        fn quadratic_gradient_consistent(v in prop::collection::vec(-5.0f64..5.0, 1..4), a in 0.1f64..3.0) {
            let q = Quadratic { a, dim: v.len() };
            let mut g = vec![0.0; v.len()];
            q.gradient(&v, &mut g);
            let e = 1e-6;
            for i in 0..v.len() {
                let mut hi = v.clone();
                let mut lo = v.clone();
                hi[i] += e;
                lo[i] -= e;
                prop_assert!(((q.value(&hi) - q.value(&lo)) / (2.0 * e) - g[i]).abs() < 1e-5);
            }
        }

        #[test]
        fn satellite_gravity_gradient_consistent(v in prop::collection::vec(0.5f64..1.5, 3), s in prop::collection::vec(prop::bool::ANY, 3)) {
            let p = SatelliteParams { j2: 0.0, ..SatelliteParams::default() };
            let field = SatelliteField::new(p).unwrap();
            let x: Vec<f64> = v.iter().zip(&s).map(|(a, neg)| if *neg { -a } else { *a }).collect();
            let mut g = [0.0; 3];
            field.gradient(&x, &mut g);
            let e = 1e-6;
            for i in 0..3 {
                let mut hi = x.clone();
                let mut lo = x.clone();
                hi[i] += e;
                lo[i] -= e;
                let fd = (field.gravity_potential(&hi) - field.gravity_potential(&lo)) / (2.0 * e);
                prop_assert!((fd - g[i]).abs() < 1e-5 * g[i].abs().max(1.0));
            }
        }

        #[test]
        fn gibbs_is_shift_invariant(v in prop::collection::vec(-4.0f64..4.0, 1..30), c in -50.0f64..50.0) {
            struct Shifted(f64);
            impl GradientField for Shifted {
                fn dim(&self) -> usize { 1 }
                fn gradient(&self, x: &[f64], o: &mut [f64]) { o[0] = x[0]; }
            }
            impl Potential for Shifted {
                fn value(&self, x: &[f64]) -> f64 { 0.5 * x[0] * x[0] + self.0 }
            }
            let pts = StateMatrix::from_scalars(&v).unwrap();
            let a = gibbs_stationary(&Shifted(0.0), 1.0, &pts).unwrap();
            let b = gibbs_stationary(&Shifted(c), 1.0, &pts).unwrap();
            for (x, y) in a.iter().zip(b.iter()) {
                prop_assert!((x - y).abs() <= 1e-14);
            }
        }
    }
}
