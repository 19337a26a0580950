//! Scenario runner behind the `proxflow` binary.

pub mod config;
pub mod output;
pub mod scenario;

use std::path::PathBuf;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::cloud::{cloud_mean, empirical_moments, ParticleCloud};
use crate::error::Error;
use crate::models::{lti_moments, LtiParams};
use crate::pipeline::{propagate, Propagator, Stage, StepFailure};
use crate::prox::ProxReport;

pub use config::{load_config, validate_config, ConfigError, RunConfig};
pub use output::{write_outputs, Manifest};
pub use scenario::{Built, ScenarioDef, SCENARIOS};

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("initialization: {0}")]
    Init(Error),
    #[error(transparent)]
    Step(#[from] StepFailure),
    #[error("writing outputs: {0}")]
    Io(#[from] std::io::Error),
}

impl RunError {
    /// Process exit status: 2 for configuration errors, 3 for numerical
    /// failures, 1 for I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) => 2,
            RunError::Init(_) | RunError::Step(_) => 3,
            RunError::Io(_) => 1,
        }
    }

    pub fn code(&self) -> &'static str {
        match self {
            RunError::Config(e) => e.code(),
            RunError::Init(_) => "E_INIT",
            RunError::Step(_) => "E_NUMERICAL",
            RunError::Io(_) => "E_IO",
        }
    }

    /// Step at which the run stopped (0 for initialization).
    pub fn step(&self) -> Option<usize> {
        match self {
            RunError::Init(_) => Some(0),
            RunError::Step(f) => Some(f.k),
            _ => None,
        }
    }
}

/// Mean and covariance of the reported cloud at time `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentRow {
    pub t: f64,
    pub mean: Vec<f64>,
    /// NaN when the cloud has a single particle.
    pub covariance: Array2<f64>,
}

#[derive(Debug, Clone)]
pub struct StepRecord {
    pub k: usize,
    pub report: ProxReport,
    pub stages: Vec<Stage>,
}

/// Everything a run produces, in memory.
#[derive(Debug, Clone)]
pub struct RunSummary {
    pub config: RunConfig,
    /// Reporting-coordinate snapshots at `k = 0`, every stride, and the last step.
    pub snapshots: Vec<(usize, ParticleCloud)>,
    /// Propagation-coordinate snapshots, for scenarios whose coordinates differ.
    pub latent_snapshots: Vec<(usize, ParticleCloud)>,
    /// One row per step, starting at `t = 0`.
    pub moments: Vec<MomentRow>,
    /// `(t, F)` per step, in propagation coordinates.
    pub free_energy: Vec<(f64, f64)>,
    pub steps: Vec<StepRecord>,
}

impl RunSummary {
    fn new(config: RunConfig) -> Self {
        Self {
            config,
            snapshots: Vec::new(),
            latent_snapshots: Vec::new(),
            moments: Vec::new(),
            free_energy: Vec::new(),
            steps: Vec::new(),
        }
    }

    /// Snapshot at step `k`, if one was kept.
    pub fn snapshot(&self, k: usize) -> Option<&ParticleCloud> {
        self.snapshots.iter().find(|(j, _)| *j == k).map(|(_, c)| c)
    }

    pub fn latent_snapshot(&self, k: usize) -> Option<&ParticleCloud> {
        self.latent_snapshots.iter().find(|(j, _)| *j == k).map(|(_, c)| c)
    }
}

/// A finished or aborted simulation: the summary holds everything up to the
/// failing step.
#[derive(Debug)]
pub struct Outcome {
    pub summary: RunSummary,
    pub failure: Option<RunError>,
}

fn moment_row(cloud: &ParticleCloud, cfg: &RunConfig) -> MomentRow {
    let (mean, covariance) = match empirical_moments(cloud, cfg.moment_mode) {
        Ok(m) => (m.mean.to_vec(), m.covariance),
        Err(_) => {
            let d = cloud.dim();
            (cloud_mean(cloud, cfg.moment_mode).to_vec(), Array2::from_elem((d, d), f64::NAN))
        }
    };
    MomentRow {
        t: cloud.time(),
        mean,
        covariance,
    }
}

fn keep_snapshot(k: usize, cfg: &RunConfig) -> bool {
    k.is_multiple_of(cfg.stride) || k == cfg.steps
}

fn record(
    summary: &mut RunSummary,
    prop: &Propagator,
    k: usize,
    cloud: &ParticleCloud,
) -> crate::error::Result<()> {
    let physical = prop.physical(cloud)?;
    let f = prop.free_energy(cloud)?;
    if !f.is_finite() {
        return Err(Error::NonFinite {
            context: "free energy",
            index: k,
        });
    }
    summary.free_energy.push((physical.time(), f));
    summary.moments.push(moment_row(&physical, &summary.config));
    if keep_snapshot(k, &summary.config) {
        if prop.has_latent_coordinates() {
            summary.latent_snapshots.push((k, cloud.clone()));
        }
        summary.snapshots.push((k, physical));
    }
    Ok(())
}

/// Runs the configured scenario in memory with one generator seeded from
/// `config.seed`; the initial sampling draws first, then each step.
pub fn simulate(config: &RunConfig) -> Outcome {
    let mut summary = RunSummary::new(config.clone());
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let built = match scenario::build(config, &mut rng) {
        Ok(b) => b,
        Err(e) => {
            return Outcome {
                summary,
                failure: Some(RunError::Init(e)),
            }
        }
    };
    let (propagator, init) = match built {
        Built::Reference => {
            let failure = reference_curves(&mut summary).err().map(RunError::Init);
            return Outcome { summary, failure };
        }
        Built::Propagated { propagator, init } => (propagator, init),
    };
    if let Err(e) = record(&mut summary, &propagator, 0, &init) {
        return Outcome {
            summary,
            failure: Some(RunError::Init(e)),
        };
    }
    let result = propagate(&propagator, init, config.steps, &mut rng, |k, step| {
        summary.steps.push(StepRecord {
            k,
            report: step.report.clone(),
            stages: step.stages.clone(),
        });
        record(&mut summary, &propagator, k, &step.cloud)
    });
    Outcome {
        summary,
        failure: result.err().map(RunError::Step),
    }
}

fn reference_curves(summary: &mut RunSummary) -> crate::error::Result<()> {
    let cfg = summary.config.clone();
    let p = LtiParams::default();
    for k in (0..=cfg.steps).filter(|k| keep_snapshot(*k, &cfg)) {
        let t = k as f64 * cfg.h;
        let m = lti_moments(&p, t)?;
        summary.moments.push(MomentRow {
            t,
            mean: m.mean.to_vec(),
            covariance: m.covariance,
        });
    }
    Ok(())
}

/// Output directory: the configured one, or `runs/<scenario>`.
pub fn output_dir(config: &RunConfig) -> PathBuf {
    config
        .out_dir
        .clone()
        .unwrap_or_else(|| PathBuf::from("runs").join(&config.scenario))
}

/// Simulates and writes all artifacts (partial ones plus `error.json` on
/// failure) to [`output_dir`].
pub fn run_scenario(config: &RunConfig) -> Result<RunSummary, RunError> {
    let Outcome { summary, failure } = simulate(config);
    write_outputs(&output_dir(config), &summary, failure.as_ref())?;
    match failure {
        Some(e) => Err(e),
        None => Ok(summary),
    }
}
