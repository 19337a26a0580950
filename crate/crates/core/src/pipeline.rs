//! The propagation loop: Euler–Maruyama moves the particles, then one
//! proximal step re-weights them.
//!
//! Per step `k` the order is fixed: (1) Euler–Maruyama from `X_{k-1}`
//! (interaction drifts read `ϱ_{k-1}`), (2) cost between `X_k` and `X_{k-1}`,
//! (3) potential at `X_{k-1}`, (4) proximal update. RNG draws follow the same
//! order: the step's Gaussian increments (particle-major), then the `N`
//! uniforms that seed the proximal iteration.

use rand::Rng;
use thiserror::Error;

use crate::cloud::{ParticleCloud, StateMatrix};
use crate::energy::{
    discrete_free_energy, interaction_matrix, semi_implicit_potential, underdamped_free_energy,
};
use crate::error::{Error, Result};
use crate::prox::{
    cost_matrix_euclidean, cost_matrix_underdamped, prox_recur, CostMatrix, PotentialVector,
    ProxConfig, ProxReport, UnderflowPolicy,
};
use crate::sde::{
    em_step_gradient, em_step_mckean_vlasov, em_step_underdamped, pushforward_density,
    CirLampertiPotential, GradientDriftSystem, GradientField, LampertiWrappedSystem,
    McKeanVlasovSystem, Potential, Scales, SqrtMap, UnderdampedSystem,
};

pub type DynPotential = Box<dyn Potential + Send + Sync>;
pub type DynField = Box<dyn GradientField + Send + Sync>;

/// The drift class being propagated, in the coordinates the recursion runs in.
pub enum Dynamics {
    Gradient(GradientDriftSystem<DynPotential>),
    /// Weights are updated with the semi-implicit potential `ψ + D ϱ_{k-1}`.
    McKeanVlasov(McKeanVlasovSystem<DynPotential, DynPotential>),
    /// Simulated in Lamperti coordinates; reported through the inverse map.
    Lamperti(LampertiWrappedSystem<CirLampertiPotential, SqrtMap>),
    /// `[q | p]` states; reported through `scales` when present.
    Underdamped {
        system: UnderdampedSystem<DynField>,
        scales: Option<Scales>,
    },
}

impl std::fmt::Debug for Dynamics {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            Dynamics::Gradient(_) => "Gradient",
            Dynamics::McKeanVlasov(_) => "McKeanVlasov",
            Dynamics::Lamperti(_) => "Lamperti",
            Dynamics::Underdamped { .. } => "Underdamped",
        };
        f.write_str(name)
    }
}

/// Stages of one step, in execution order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    EulerMaruyama,
    Cost,
    Potential,
    Prox,
}

impl Stage {
    pub fn as_str(&self) -> &'static str {
        match self {
            Stage::EulerMaruyama => "euler_maruyama",
            Stage::Cost => "cost",
            Stage::Potential => "potential",
            Stage::Prox => "prox",
        }
    }
}

#[derive(Debug, Clone)]
pub struct StepResult {
    pub cloud: ParticleCloud,
    pub report: ProxReport,
    pub stages: Vec<Stage>,
}

/// A step that failed, with the step index.
#[derive(Debug, Clone, PartialEq, Error)]
#[error("step {k}: {source}")]
pub struct StepFailure {
    pub k: usize,
    pub source: Error,
}

#[derive(Debug)]
pub struct Propagator {
    pub dynamics: Dynamics,
    h: f64,
    prox: ProxConfig,
}

impl Propagator {
    /// `h` is the step in the propagation coordinates. The proximal inverse
    /// temperature comes from the dynamics (`β/γ` for Langevin systems, with
    /// the potential scaled by `γ`).
    pub fn new(
        dynamics: Dynamics,
        h: f64,
        epsilon: f64,
        delta: f64,
        max_iters: usize,
        underflow: UnderflowPolicy,
    ) -> Result<Self> {
        let beta = match &dynamics {
            Dynamics::Gradient(s) => s.beta,
            Dynamics::McKeanVlasov(s) => s.beta,
            Dynamics::Lamperti(s) => s.inner.beta,
            Dynamics::Underdamped { system, .. } => system.beta / system.gamma,
        };
        let prox = ProxConfig::new(h, beta, epsilon, delta, max_iters)?.with_underflow(underflow);
        Ok(Self { dynamics, h, prox })
    }

    pub fn prox_config(&self) -> &ProxConfig {
        &self.prox
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    /// One full step from `cloud` (time `t_{k-1}`) to time `t_k = k h`.
    pub fn step<R: Rng + ?Sized>(&self, cloud: &ParticleCloud, k: usize, rng: &mut R) -> Result<StepResult> {
        let mut stages = Vec::with_capacity(4);
        let prev = cloud.states();

        stages.push(Stage::EulerMaruyama);
        let next = match &self.dynamics {
            Dynamics::Gradient(s) => em_step_gradient(cloud, s, self.h, rng)?,
            Dynamics::McKeanVlasov(s) => em_step_mckean_vlasov(cloud, s, self.h, rng)?,
            Dynamics::Lamperti(s) => em_step_gradient(cloud, &s.inner, self.h, rng)?,
            Dynamics::Underdamped { system, .. } => em_step_underdamped(cloud, system, self.h, rng)?,
        };

        stages.push(Stage::Cost);
        let cost = self.cost(&next, prev)?;

        stages.push(Stage::Potential);
        let psi = self.potential_vector(cloud)?;

        stages.push(Stage::Prox);
        let out = prox_recur(cloud.weights(), &psi, &cost, &self.prox, rng)?;

        let cloud = ParticleCloud::new(next, out.weights, k as f64 * self.h)?;
        Ok(StepResult {
            cloud,
            report: out.report,
            stages,
        })
    }

    /// Cost in the orientation the proximal step expects: rows indexed by the
    /// previous particles.
    fn cost(&self, next: &StateMatrix, prev: &StateMatrix) -> Result<CostMatrix> {
        let c = match &self.dynamics {
            Dynamics::Underdamped { system, .. } => {
                let n = system.n_pos();
                let grad = |q: ndarray::ArrayView1<f64>, out: &mut [f64]| {
                    system
                        .potential
                        .gradient(q.as_slice().expect("standard layout"), out);
                    Ok(())
                };
                cost_matrix_underdamped(
                    &next.columns(0, n)?,
                    &next.columns(n, n)?,
                    &prev.columns(0, n)?,
                    &prev.columns(n, n)?,
                    grad,
                    self.h,
                )?
            }
            _ => cost_matrix_euclidean(next, prev)?,
        };
        Ok(c.transpose())
    }

    /// `ψ_{k-1}` at the previous particles (effective potential for
    /// interacting and Langevin systems).
    pub fn potential_vector(&self, cloud: &ParticleCloud) -> Result<PotentialVector> {
        let x = cloud.states().as_array();
        let eval = |p: &dyn Potential| -> Vec<f64> {
            x.rows()
                .into_iter()
                .map(|r| p.value(r.as_slice().expect("standard layout")))
                .collect()
        };
        match &self.dynamics {
            Dynamics::Gradient(s) => PotentialVector::from_vec(eval(&s.potential)),
            Dynamics::McKeanVlasov(s) => {
                let psi = PotentialVector::from_vec(eval(&s.potential))?;
                let d = interaction_matrix(cloud.states(), &s.interaction)?;
                semi_implicit_potential(&psi, &d, cloud.weights())
            }
            Dynamics::Lamperti(s) => PotentialVector::from_vec(eval(&s.inner.potential)),
            Dynamics::Underdamped { system, .. } => {
                let n = system.n_pos();
                let g = system.gamma;
                PotentialVector::from_vec(
                    x.rows()
                        .into_iter()
                        .map(|r| 0.5 * g * r.iter().skip(n).map(|p| p * p).sum::<f64>())
                        .collect(),
                )
            }
        }
        .map_err(|e| match e {
            Error::NonFinite { index, .. } => Error::NonFiniteDrift { particle: index },
            other => other,
        })
    }

    /// Discrete free energy of the cloud in the propagation coordinates:
    /// `⟨ψ + β⁻¹ log ϱ, ϱ⟩`, with the interaction energy `½⟨Dϱ, ϱ⟩` for
    /// McKean–Vlasov systems and the kinetic energy for Langevin systems.
    pub fn free_energy(&self, cloud: &ParticleCloud) -> Result<f64> {
        let w = cloud.weights();
        match &self.dynamics {
            Dynamics::Gradient(s) => {
                discrete_free_energy(w, &self.potential_vector(cloud)?, s.beta)
            }
            Dynamics::McKeanVlasov(s) => {
                let x = cloud.states().as_array();
                let psi: Vec<f64> = x
                    .rows()
                    .into_iter()
                    .map(|r| s.potential.value(r.as_slice().expect("standard layout")))
                    .collect();
                let d = interaction_matrix(cloud.states(), &s.interaction)?;
                let half = d.as_array().dot(w.as_array()) * 0.5;
                let total: Vec<f64> = psi.iter().zip(half.iter()).map(|(a, b)| a + b).collect();
                discrete_free_energy(w, &PotentialVector::from_vec(total)?, s.beta)
            }
            Dynamics::Lamperti(s) => {
                discrete_free_energy(w, &self.potential_vector(cloud)?, s.inner.beta)
            }
            Dynamics::Underdamped { system, .. } => {
                let n = system.n_pos();
                underdamped_free_energy(w, &cloud.states().columns(n, n)?, system.beta)
            }
        }
    }

    /// The cloud in reporting coordinates (`x`-space for Lamperti systems,
    /// dimensional units for scaled Langevin systems).
    pub fn physical(&self, cloud: &ParticleCloud) -> Result<ParticleCloud> {
        match &self.dynamics {
            Dynamics::Lamperti(s) => {
                let (w, x) = pushforward_density(cloud.weights(), cloud.states(), &s.map)?;
                ParticleCloud::new(x, w, cloud.time())
            }
            Dynamics::Underdamped {
                scales: Some(scales),
                ..
            } => scales.to_dim(cloud),
            _ => Ok(cloud.clone()),
        }
    }

    /// Whether the propagation coordinates differ from the reporting ones
    /// through a nonlinear change of variables.
    pub fn has_latent_coordinates(&self) -> bool {
        matches!(self.dynamics, Dynamics::Lamperti(_))
    }
}

/// Runs `steps` steps from `init`. `observe` sees every new cloud with its
/// step index and report; the first failure aborts the run and is tagged
/// with its step.
pub fn propagate<R, F>(
    prop: &Propagator,
    init: ParticleCloud,
    steps: usize,
    rng: &mut R,
    mut observe: F,
) -> std::result::Result<ParticleCloud, StepFailure>
where
    R: Rng + ?Sized,
    F: FnMut(usize, &StepResult) -> Result<()>,
{
    let mut cloud = init;
    for k in 1..=steps {
        let step = prop
            .step(&cloud, k, rng)
            .map_err(|source| StepFailure { k, source })?;
        observe(k, &step).map_err(|source| StepFailure { k, source })?;
        cloud = step.cloud;
    }
    Ok(cloud)
}
