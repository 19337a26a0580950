//! Registered scenarios: defaults, parameter checks and construction of the
//! propagator plus initial cloud.

use rand::Rng;

use crate::cloud::{init_cloud, DiagonalGaussian, ParticleCloud};
use crate::error::{Error, Result};
use crate::models::{CirParams, DoubleWell, Quadratic, SatelliteField, SatelliteParams};
use crate::pipeline::{DynField, DynPotential, Dynamics, Propagator};
use crate::prox::UnderflowPolicy;
use crate::sde::{
    lamperti_transform_cir, CoordinateMap, GradientDriftSystem, McKeanVlasovSystem, Scales,
    UnderdampedSystem,
};

use super::config::{ConfigError, RunConfig};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScenarioDefaults {
    pub h: f64,
    pub beta: f64,
    pub epsilon: f64,
    pub delta: f64,
    pub max_iters: usize,
    pub n: usize,
    pub steps: usize,
    pub stride: usize,
    pub underflow: UnderflowPolicy,
}

const STANDARD: ScenarioDefaults = ScenarioDefaults {
    h: 1e-3,
    beta: 1.0,
    epsilon: 5e-2,
    delta: 1e-3,
    max_iters: 100,
    n: 400,
    steps: 1000,
    stride: 50,
    underflow: UnderflowPolicy::Strict,
};

pub struct ScenarioDef {
    pub name: &'static str,
    pub summary: &'static str,
    pub defaults: ScenarioDefaults,
    /// Tunable parameters with their default values.
    pub params: &'static [(&'static str, f64)],
    pub check: fn(&RunConfig) -> std::result::Result<(), ConfigError>,
}

impl std::fmt::Debug for ScenarioDef {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ScenarioDef").field("name", &self.name).finish_non_exhaustive()
    }
}

/// Mean of the scaled initial satellite state `[q' | p']`.
pub const SATELLITE_MEAN: [f64; 6] = [1.0, 0.0, 0.0, 0.0, 0.0, 0.0];
/// Diagonal of the scaled initial satellite covariance.
pub const SATELLITE_VAR: [f64; 6] = [3.335e-4, 6.133e-4, 3.933e-4, 6.562e-4, 9.246e-4, 5.761e-4];

pub static SCENARIOS: &[ScenarioDef] = &[
    ScenarioDef {
        name: "ou",
        summary: "1-D Ornstein-Uhlenbeck process, psi = a x^2/2",
        defaults: STANDARD,
        params: &[("a", 1.0), ("mu0", 5.0), ("sigma0_sq", 4e-2)],
        check: check_ou,
    },
    ScenarioDef {
        name: "lti",
        summary: "2-D linear system dx = Ax dt + B dw; reference mean and covariance curves only",
        defaults: ScenarioDefaults {
            steps: 10_000,
            stride: 100,
            ..STANDARD
        },
        params: &[],
        check: |_| Ok(()),
    },
    ScenarioDef {
        name: "bimodal",
        summary: "2-D gradient system with a double-well potential and bimodal Gibbs density",
        defaults: ScenarioDefaults {
            steps: 3000,
            underflow: UnderflowPolicy::Sparse,
            ..STANDARD
        },
        params: &[("mu0_1", 2.0), ("mu0_2", 2.0), ("sigma0_sq", 4.0)],
        check: check_bimodal,
    },
    ScenarioDef {
        name: "mckean-vlasov",
        summary: "1-D mean-field system, psi = a x^2/2 with interaction b v^2/2",
        defaults: ScenarioDefaults {
            steps: 3000,
            underflow: UnderflowPolicy::Sparse,
            ..STANDARD
        },
        params: &[("a", 1.0), ("b", 1.0), ("mu0", 5.0), ("sigma0_sq", 9.0)],
        check: check_mv,
    },
    ScenarioDef {
        name: "cir",
        summary: "Cox-Ingersoll-Ross process propagated in Lamperti coordinates",
        defaults: ScenarioDefaults {
            beta: 2.0,
            ..STANDARD
        },
        params: &[("a", 3.0), ("b", 2.0), ("theta", 2.0), ("x0", 5.0), ("x0_var", 1e-4)],
        check: check_cir,
    },
    ScenarioDef {
        name: "satellite",
        summary: "6-D perturbed two-body Langevin system; h in seconds, propagated in scaled units",
        defaults: ScenarioDefaults {
            h: 1e-5,
            underflow: UnderflowPolicy::Sparse,
            ..STANDARD
        },
        params: &[
            ("gamma", 1.0),
            ("mu", 3.9859e14),
            ("j2", 1.082e-3),
            ("r_earth", 6.3781e6),
            ("length_scale", crate::sde::GEO_RADIUS),
            ("time_scale", crate::sde::SIDEREAL_DAY),
        ],
        check: check_satellite,
    },
];

pub fn find(name: &str) -> Option<&'static ScenarioDef> {
    SCENARIOS.iter().find(|s| s.name == name)
}

fn require(cfg: &RunConfig, name: &str, ok: fn(f64) -> bool, reason: &'static str) -> std::result::Result<(), ConfigError> {
    let value = cfg.param(name);
    if ok(value) && value.is_finite() {
        Ok(())
    } else {
        Err(ConfigError::Parameter {
            name: name.to_string(),
            value,
            reason,
        })
    }
}

fn positive(v: f64) -> bool {
    v > 0.0
}

fn any(_: f64) -> bool {
    true
}

fn check_ou(cfg: &RunConfig) -> std::result::Result<(), ConfigError> {
    require(cfg, "a", positive, "must be positive")?;
    require(cfg, "mu0", any, "must be finite")?;
    require(cfg, "sigma0_sq", positive, "must be positive")
}

fn check_bimodal(cfg: &RunConfig) -> std::result::Result<(), ConfigError> {
    require(cfg, "mu0_1", any, "must be finite")?;
    require(cfg, "mu0_2", any, "must be finite")?;
    require(cfg, "sigma0_sq", positive, "must be positive")
}

fn check_mv(cfg: &RunConfig) -> std::result::Result<(), ConfigError> {
    require(cfg, "a", positive, "must be positive")?;
    require(cfg, "b", |b| b >= 0.0, "must be nonnegative")?;
    require(cfg, "mu0", any, "must be finite")?;
    require(cfg, "sigma0_sq", positive, "must be positive")
}

fn check_cir(cfg: &RunConfig) -> std::result::Result<(), ConfigError> {
    if cfg.beta != 2.0 {
        return Err(ConfigError::Parameter {
            name: "beta".into(),
            value: cfg.beta,
            reason: "the Lamperti-transformed process has unit diffusion, so beta must be 2",
        });
    }
    require(cfg, "x0", positive, "must be positive")?;
    require(cfg, "x0_var", positive, "must be positive")?;
    let p = cir_params(cfg);
    p.validate().map_err(|_| ConfigError::Parameter {
        name: "a".into(),
        value: p.a,
        reason: "needs 2a > b^2 and a, b, theta > 0",
    })
}

fn check_satellite(cfg: &RunConfig) -> std::result::Result<(), ConfigError> {
    for name in ["gamma", "mu", "r_earth", "length_scale", "time_scale"] {
        require(cfg, name, positive, "must be positive")?;
    }
    require(cfg, "j2", |v| v >= 0.0, "must be nonnegative")
}

pub fn cir_params(cfg: &RunConfig) -> CirParams {
    CirParams {
        a: cfg.param("a"),
        b: cfg.param("b"),
        theta: cfg.param("theta"),
        x0: cfg.param("x0"),
    }
}

pub fn satellite_params(cfg: &RunConfig) -> Result<SatelliteParams> {
    Ok(SatelliteParams {
        mu: cfg.param("mu"),
        j2: cfg.param("j2"),
        r_earth: cfg.param("r_earth"),
        gamma: cfg.param("gamma"),
        beta: cfg.beta,
        scales: Scales::new(cfg.param("length_scale"), cfg.param("time_scale"))?,
    })
}

/// What a scenario runs.
#[derive(Debug)]
pub enum Built {
    Propagated {
        propagator: Box<Propagator>,
        init: ParticleCloud,
    },
    /// Closed-form reference curves only; no particles.
    Reference,
}

fn gaussian_cloud<R: Rng + ?Sized>(g: &DiagonalGaussian, n: usize, rng: &mut R) -> Result<ParticleCloud> {
    init_cloud(|x| g.pdf(x), |r, out| g.sample(r, out), n, g.dim(), rng)
}

/// Builds the propagator and samples the initial cloud (the first RNG use
/// of a run).
pub fn build<R: Rng + ?Sized>(cfg: &RunConfig, rng: &mut R) -> Result<Built> {
    let prop = |dynamics: Dynamics, h: f64| {
        Propagator::new(dynamics, h, cfg.epsilon, cfg.delta, cfg.max_iters, cfg.underflow).map(Box::new)
    };
    let built = match cfg.scenario.as_str() {
        "ou" => {
            let psi: DynPotential = Box::new(Quadratic {
                a: cfg.param("a"),
                dim: 1,
            });
            let sys = GradientDriftSystem::new(psi, cfg.beta)?;
            let g = DiagonalGaussian::new(vec![cfg.param("mu0")], vec![cfg.param("sigma0_sq")])?;
            Built::Propagated {
                propagator: prop(Dynamics::Gradient(sys), cfg.h)?,
                init: gaussian_cloud(&g, cfg.n, rng)?,
            }
        }
        "bimodal" => {
            let sys = GradientDriftSystem::new(Box::new(DoubleWell) as DynPotential, cfg.beta)?;
            let v = cfg.param("sigma0_sq");
            let g = DiagonalGaussian::new(vec![cfg.param("mu0_1"), cfg.param("mu0_2")], vec![v, v])?;
            Built::Propagated {
                propagator: prop(Dynamics::Gradient(sys), cfg.h)?,
                init: gaussian_cloud(&g, cfg.n, rng)?,
            }
        }
        "mckean-vlasov" => {
            let psi: DynPotential = Box::new(Quadratic {
                a: cfg.param("a"),
                dim: 1,
            });
            let phi: DynPotential = Box::new(Quadratic {
                a: cfg.param("b"),
                dim: 1,
            });
            let sys = McKeanVlasovSystem::new(psi, phi, cfg.beta)?;
            let g = DiagonalGaussian::new(vec![cfg.param("mu0")], vec![cfg.param("sigma0_sq")])?;
            Built::Propagated {
                propagator: prop(Dynamics::McKeanVlasov(sys), cfg.h)?,
                init: gaussian_cloud(&g, cfg.n, rng)?,
            }
        }
        "cir" => {
            let p = cir_params(cfg);
            let sys = lamperti_transform_cir(p.a, p.b, p.theta)?;
            let map = sys.map;
            let g = DiagonalGaussian::new(vec![p.x0], vec![cfg.param("x0_var")])?;
            // sample x, move to y; the y-density is ρ_X(x) / |dy/dx|
            let init = init_cloud(
                |y| {
                    let mut x = [0.0];
                    map.inverse(y, &mut x);
                    g.pdf(&x) / map.jacobian(&x)
                },
                |r, out| {
                    let mut x = [0.0];
                    g.sample(r, &mut x);
                    map.forward(&x, out);
                },
                cfg.n,
                1,
                rng,
            )?;
            Built::Propagated {
                propagator: prop(Dynamics::Lamperti(sys), cfg.h)?,
                init,
            }
        }
        "satellite" => {
            let params = satellite_params(cfg)?;
            let field = SatelliteField::new(params)?;
            let c = field.coefficients;
            let system = UnderdampedSystem::new(Box::new(field) as DynField, c.gamma, c.beta)?;
            let g = DiagonalGaussian::new(SATELLITE_MEAN.to_vec(), SATELLITE_VAR.to_vec())?;
            let dynamics = Dynamics::Underdamped {
                system,
                scales: Some(params.scales),
            };
            Built::Propagated {
                propagator: prop(dynamics, cfg.h / params.scales.time)?,
                init: gaussian_cloud(&g, cfg.n, rng)?,
            }
        }
        "lti" => Built::Reference,
        other => {
            return Err(Error::InvalidParameter {
                name: "scenario",
                value: f64::NAN,
                reason: if other.is_empty() { "empty scenario name" } else { "unregistered scenario" },
            })
        }
    };
    Ok(built)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn registry_names_are_unique_and_complete() {
        let names: Vec<_> = SCENARIOS.iter().map(|s| s.name).collect();
        assert_eq!(names, ["ou", "lti", "bimodal", "mckean-vlasov", "cir", "satellite"]);
    }

    #[test]
    fn every_default_config_builds() {
        for def in SCENARIOS {
            let mut cfg = RunConfig::defaults(def);
            cfg.n = 10;
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            match build(&cfg, &mut rng).unwrap() {
                Built::Propagated { init, .. } => {
                    assert_eq!(init.len(), 10);
                    assert!((init.weights().sum() - 1.0).abs() < 1e-12);
                }
                Built::Reference => assert_eq!(def.name, "lti"),
            }
        }
    }

    #[test]
    fn cir_cloud_lives_in_lamperti_coordinates() {
        let cfg = RunConfig::for_scenario("cir").unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let Built::Propagated { init, propagator } = build(&cfg, &mut rng).unwrap() else {
            panic!("cir propagates particles");
        };
        // x ≈ 5, b = 2 → y = √5
        for y in init.states().as_array().iter() {
            assert!((y - 5f64.sqrt()).abs() < 0.05);
        }
        let x = propagator.physical(&init).unwrap();
        for v in x.states().as_array().iter() {
            assert!((v - 5.0).abs() < 0.05);
        }
    }

    #[test]
    fn satellite_step_is_scaled_by_the_time_unit() {
        let cfg = RunConfig::for_scenario("satellite").unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let Built::Propagated { propagator, init } = build(&cfg, &mut rng).unwrap() else {
            panic!("satellite propagates particles");
        };
        assert!((propagator.h() - 1e-5 / crate::sde::SIDEREAL_DAY).abs() < 1e-24);
        assert_eq!(init.dim(), 6);
    }

    #[test]
    fn cir_rejects_other_temperatures() {
        let mut cfg = RunConfig::for_scenario("cir").unwrap();
        cfg.beta = 1.0;
        assert_eq!(check_cir(&cfg).unwrap_err().code(), "E_PARAMETER");
    }
}
