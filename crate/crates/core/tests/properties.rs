use ndarray::{Array1, Array2};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use proxflow::cli::{simulate, RunConfig};
use proxflow::cloud::normalize;
use proxflow::energy::discrete_free_energy;
use proxflow::prox::{
    contraction_factor, fixed_point_residuals, gibbs_kernel, prox_recur, thompson_distance, z_update, CostMatrix,
    GibbsKernel, PotentialVector, ProxConfig,
};
use proxflow::SimplexWeights;

fn simplex(rng: &mut ChaCha8Rng, n: usize) -> SimplexWeights {
    let raw: Vec<f64> = (0..n).map(|_| rng.random_range(0.01..1.0)).collect();
    normalize(&raw).unwrap()
}

fn squared_distance_cost(rng: &mut ChaCha8Rng, n: usize, spread: f64) -> CostMatrix {
    let prev: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let next: Vec<f64> = prev.iter().map(|x| x + rng.random_range(-spread..spread)).collect();
    CostMatrix::new(Array2::from_shape_fn((n, n), |(i, j)| (prev[i] - next[j]).powi(2))).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn z_map_contracts_in_thompson_metric(
        n in 1usize..12,
        seed in any::<u64>(),
        log_h in -4.0f64..-1.0,
        beta in 0.1f64..10.0,
        log_eps in -3.0f64..0.0,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (h, eps) = (10f64.powf(log_h), 10f64.powf(log_eps));
        let cfg = ProxConfig::new(h, beta, eps, 1e-3, 100).unwrap();
        let r = contraction_factor(&cfg);
        let gamma = GibbsKernel::from_array(Array2::from_shape_fn((n, n), |_| rng.random_range(1e-3..=1.0))).unwrap();
        let psi = PotentialVector::from_vec((0..n).map(|_| rng.random_range(-3.0..3.0)).collect()).unwrap();
        let prev = simplex(&mut rng, n);
        let z: Array1<f64> = (0..n).map(|_| rng.random_range(-4.0f64..4.0).exp()).collect();
        let zt: Array1<f64> = (0..n).map(|_| rng.random_range(-4.0f64..4.0).exp()).collect();
        let before = thompson_distance(z.as_slice().unwrap(), zt.as_slice().unwrap()).unwrap();
        let a = z_update(&gamma, &psi, beta, &prev, &z, r).unwrap();
        let b = z_update(&gamma, &psi, beta, &prev, &zt, r).unwrap();
        let after = thompson_distance(a.as_slice().unwrap(), b.as_slice().unwrap()).unwrap();
        prop_assert!(after <= r * before + 1e-12, "{after} > {r} * {before}");
    }

    #[test]
    fn prox_step_lands_on_simplex_and_solves_first_order_conditions(
        n in 2usize..40,
        seed in any::<u64>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let eps = 5e-2;
        let cfg = ProxConfig::new(1e-3, 1.0, eps, 1e-10, 200).unwrap();
        let cost = squared_distance_cost(&mut rng, n, 0.1);
        let psi = PotentialVector::from_vec((0..n).map(|_| rng.random_range(0.0..2.0)).collect()).unwrap();
        let prev = simplex(&mut rng, n);
        let out = prox_recur(&prev, &psi, &cost, &cfg, &mut rng).unwrap();
        prop_assert!(out.report.converged);
        prop_assert!((out.weights.sum() - 1.0).abs() <= 1e-12);
        prop_assert!(out.weights.min() > 0.0);
        prop_assert!((out.report.raw_mass - 1.0).abs() <= 1e-8);
        let gamma = gibbs_kernel(&cost, eps).unwrap();
        let (ra, rb) = fixed_point_residuals(&prev, &psi, &gamma, &cfg, &out.y, &out.z);
        prop_assert!(ra <= 1e-8 && rb <= 1e-8, "{ra} {rb}");
    }

    #[test]
    fn free_energy_shifts_with_the_potential(
        n in 1usize..30,
        seed in any::<u64>(),
        shift in -10.0f64..10.0,
        beta in 0.1f64..10.0,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = simplex(&mut rng, n);
        let psi: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let shifted: Vec<f64> = psi.iter().map(|p| p + shift).collect();
        let f0 = discrete_free_energy(&w, &PotentialVector::from_vec(psi).unwrap(), beta).unwrap();
        let f1 = discrete_free_energy(&w, &PotentialVector::from_vec(shifted).unwrap(), beta).unwrap();
        prop_assert!((f1 - f0 - shift).abs() <= 1e-10);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn runs_are_reproducible_from_the_seed(
        scenario in prop::sample::select(vec!["ou", "bimodal", "mckean-vlasov", "cir", "satellite"]),
        seed in any::<u64>(),
    ) {
        let mut cfg = RunConfig::for_scenario(scenario).unwrap();
        cfg.n = 25;
        cfg.steps = 6;
        cfg.stride = 3;
        cfg.seed = seed;
        let a = simulate(&cfg);
        let b = simulate(&cfg);
        prop_assert!(a.failure.is_none() && b.failure.is_none());
        prop_assert_eq!(a.summary.snapshots.len(), 3);
        for ((ka, ca), (kb, cb)) in a.summary.snapshots.iter().zip(&b.summary.snapshots) {
            prop_assert_eq!(ka, kb);
            prop_assert_eq!(ca.states().as_array(), cb.states().as_array());
            prop_assert_eq!(ca.weights().as_array(), cb.weights().as_array());
            prop_assert!((ca.weights().sum() - 1.0).abs() <= 1e-8);
        }
        for s in &a.summary.steps {
            prop_assert!(s.report.converged);
        }
    }
}
