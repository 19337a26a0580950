//! Scalar functionals of weighted clouds: free energies, relative entropy,
//! the pairwise interaction matrix and a diagnostic entropic transport cost.

use ndarray::{Array1, Array2};

use crate::cloud::{SimplexWeights, StateMatrix};
use crate::error::{Error, Result};
use crate::prox::{CostMatrix, PotentialVector};
use crate::sde::Potential;

/// `⟨ψ + β⁻¹ log ϱ, ϱ⟩`.
pub fn discrete_free_energy(weights: &SimplexWeights, psi: &PotentialVector, beta: f64) -> Result<f64> {
    if psi.len() != weights.len() {
        return Err(Error::DimensionMismatch {
            context: "free energy potential",
            expected: weights.len(),
            got: psi.len(),
        });
    }
    if !(beta > 0.0) {
        return Err(Error::InvalidParameter {
            name: "beta",
            value: beta,
            reason: "must be positive",
        });
    }
    let inv_beta = if beta.is_infinite() { 0.0 } else { 1.0 / beta };
    let mut total = 0.0;
    for (i, (&w, &p)) in weights.iter().zip(psi.as_array().iter()).enumerate() {
        if !(w > 0.0) {
            return Err(Error::NegativeWeight { index: i, value: w });
        }
        total += (p + inv_beta * w.ln()) * w;
    }
    Ok(total)
}

/// `E[½‖p‖² + β⁻¹ log ϱ]` over the momentum block.
pub fn underdamped_free_energy(weights: &SimplexWeights, momenta: &StateMatrix, beta: f64) -> Result<f64> {
    let kinetic: Vec<f64> = momenta
        .as_array()
        .rows()
        .into_iter()
        .map(|p| 0.5 * p.dot(&p))
        .collect();
    discrete_free_energy(weights, &PotentialVector::from_vec(kinetic)?, beta)
}

/// `D(i, j) = φ(xᵢ − xⱼ)` for a symmetric interaction potential.
#[derive(Debug, Clone, PartialEq)]
pub struct InteractionMatrix(Array2<f64>);

impl InteractionMatrix {
    pub fn as_array(&self) -> &Array2<f64> {
        &self.0
    }
}

pub fn interaction_matrix<Q: Potential + ?Sized>(states: &StateMatrix, phi: &Q) -> Result<InteractionMatrix> {
    if phi.dim() != states.dim() {
        return Err(Error::DimensionMismatch {
            context: "interaction potential dimension",
            expected: states.dim(),
            got: phi.dim(),
        });
    }
    let x = states.as_array();
    let n = x.nrows();
    let mut d = Array2::<f64>::zeros((n, n));
    let mut diff = vec![0.0; x.ncols()];
    for i in 0..n {
        for j in i..n {
            for (k, v) in diff.iter_mut().enumerate() {
                *v = x[[i, k]] - x[[j, k]];
            }
            let v = phi.value(&diff);
            if !v.is_finite() {
                return Err(Error::NonFinite {
                    context: "interaction potential",
                    index: i * n + j,
                });
            }
            d[[i, j]] = v;
            d[[j, i]] = v;
        }
    }
    Ok(InteractionMatrix(d))
}

/// `ψ + D ϱ_prev`: the potential that makes one McKean–Vlasov proximal step
/// an ordinary one.
pub fn semi_implicit_potential(
    psi: &PotentialVector,
    d: &InteractionMatrix,
    prev: &SimplexWeights,
) -> Result<PotentialVector> {
    let n = psi.len();
    if d.0.nrows() != n || prev.len() != n {
        return Err(Error::DimensionMismatch {
            context: "semi-implicit potential",
            expected: n,
            got: if d.0.nrows() != n { d.0.nrows() } else { prev.len() },
        });
    }
    PotentialVector::new(psi.as_array() + &d.0.dot(prev.as_array()))
}

/// `Σ pᵢ log(pᵢ/qᵢ)` with `0 log 0 = 0`.
pub fn kl_divergence(p: &SimplexWeights, q: &SimplexWeights) -> Result<f64> {
    kl_divergence_raw(p.as_slice(), q.as_slice())
}

/// [`kl_divergence`] on plain slices (entries need not be strictly positive).
pub fn kl_divergence_raw(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::DimensionMismatch {
            context: "KL divergence",
            expected: p.len(),
            got: q.len(),
        });
    }
    let mut total = 0.0;
    for (index, (&pi, &qi)) in p.iter().zip(q).enumerate() {
        if pi > 0.0 {
            if !(qi > 0.0) {
                return Err(Error::SupportViolation { index });
            }
            total += pi * (pi / qi).ln();
        }
    }
    // rounding can push a zero divergence slightly negative
    Ok(total.max(0.0))
}

/// Result of [`sinkhorn_distance`].
#[derive(Debug, Clone)]
pub struct SinkhornResult {
    /// `⟨C, M⟩` at the final coupling.
    pub cost: f64,
    pub coupling: Array2<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// ∞-norm marginal error at exit.
    pub marginal_error: f64,
}

/// Two-sided Sinkhorn scaling of `exp(-C/2ε)` to marginals `(μ, ν)`.
/// Zero-mass entries are allowed in either marginal.
pub fn sinkhorn_distance(
    mu: &[f64],
    nu: &[f64],
    cost: &CostMatrix,
    epsilon: f64,
    tol: f64,
    max_iter: usize,
) -> Result<SinkhornResult> {
    let n = cost.len();
    for (context, got) in [("sinkhorn source", mu.len()), ("sinkhorn target", nu.len())] {
        if got != n {
            return Err(Error::DimensionMismatch {
                context,
                expected: n,
                got,
            });
        }
    }
    if !(epsilon > 0.0) {
        return Err(Error::InvalidParameter {
            name: "epsilon",
            value: epsilon,
            reason: "must be positive",
        });
    }
    let c = cost.as_array();
    let k = c.mapv(|v| (-v / (2.0 * epsilon)).exp());
    let mu = Array1::from(mu.to_vec());
    let nu = Array1::from(nu.to_vec());
    let mut u = Array1::<f64>::ones(n);
    let mut v = Array1::<f64>::ones(n);
    let safe_div = |a: &Array1<f64>, b: &Array1<f64>| -> Array1<f64> {
        a.iter()
            .zip(b.iter())
            .map(|(x, y)| if *x == 0.0 { 0.0 } else { x / y })
            .collect()
    };
    let mut iterations = 0;
    let mut marginal_error = f64::INFINITY;
    let mut converged = false;
    while iterations < max_iter {
        iterations += 1;
        u = safe_div(&mu, &k.dot(&v));
        v = safe_div(&nu, &k.t().dot(&u));
        // column marginals are exact after the v update; check the rows
        let rows = &u * &k.dot(&v);
        marginal_error = (&rows - &mu).iter().fold(0.0_f64, |m, e| m.max(e.abs()));
        if !marginal_error.is_finite() {
            return Err(Error::ZeroDenominator {
                context: "sinkhorn scaling",
                index: 0,
            });
        }
        if marginal_error < tol {
            converged = true;
            break;
        }
    }
    let mut m = k;
    for ((i, j), e) in m.indexed_iter_mut() {
        *e *= u[i] * v[j];
    }
    let total = (&m * c).sum();
    Ok(SinkhornResult {
        cost: total,
        coupling: m,
        iterations,
        converged,
        marginal_error,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cloud::normalize;
    use crate::sde::GradientField;
    use ndarray::array;
    use proptest::prelude::*;

    struct HalfSquare;
    impl GradientField for HalfSquare {
        fn dim(&self) -> usize {
            1
        }
        fn gradient(&self, x: &[f64], out: &mut [f64]) {
            out[0] = x[0];
        }
    }
    impl Potential for HalfSquare {
        fn value(&self, x: &[f64]) -> f64 {
            0.5 * x[0] * x[0]
        }
    }

    fn pv(v: &[f64]) -> PotentialVector {
        PotentialVector::from_vec(v.to_vec()).unwrap()
    }

    #[test]
    fn free_energy_examples() {
        let n = 7;
        let f = discrete_free_energy(&SimplexWeights::uniform(n).unwrap(), &pv(&[0.0; 7]), 1.0).unwrap();
        assert!((f + (n as f64).ln()).abs() < 1e-14);

        let w = normalize(&[0.5, 0.5]).unwrap();
        let f = discrete_free_energy(&w, &pv(&[1.0, 1.0]), 1.0).unwrap();
        assert!((f - 0.30685281944005466).abs() < 1e-14);

        let w = normalize(&[0.2, 0.8]).unwrap();
        let f = discrete_free_energy(&w, &pv(&[1.0, 3.0]), f64::INFINITY).unwrap();
        assert!((f - 2.6).abs() < 1e-14);
        let f = discrete_free_energy(&w, &pv(&[1.0, 3.0]), 1e12).unwrap();
        assert!((f - 2.6).abs() < 1e-11);
    }

    #[test]
    fn free_energy_rejects_zero_weight() {
        let w = normalize(&[0.0, 1.0]).unwrap();
        assert!(discrete_free_energy(&w, &pv(&[0.0, 0.0]), 1.0).is_err());
    }

    #[test]
    fn underdamped_free_energy_examples() {
        let p = StateMatrix::from_rows(&[vec![0.0, 0.0, 0.0], vec![0.0, 0.0, 0.0]]).unwrap();
        let f = underdamped_free_energy(&SimplexWeights::uniform(2).unwrap(), &p, 1.0).unwrap();
        assert!((f + 2f64.ln()).abs() < 1e-14);

        let p = StateMatrix::from_rows(&[vec![1.0, 0.0, 0.0]]).unwrap();
        let f = underdamped_free_energy(&SimplexWeights::uniform(1).unwrap(), &p, 1.0).unwrap();
        assert!((f - 0.5).abs() < 1e-15);

        let p = StateMatrix::from_scalars(&[0.0, 2.0]).unwrap();
        let f = underdamped_free_energy(&SimplexWeights::uniform(2).unwrap(), &p, 1.0).unwrap();
        assert!((f - 0.30685281944005466).abs() < 1e-14);
    }

    #[test]
    fn interaction_matrix_examples() {
        let d = interaction_matrix(&StateMatrix::from_scalars(&[0.0, 2.0]).unwrap(), &HalfSquare).unwrap();
        assert_eq!(d.as_array(), &array![[0.0, 2.0], [2.0, 0.0]]);
        let d = interaction_matrix(&StateMatrix::from_scalars(&[4.0]).unwrap(), &HalfSquare).unwrap();
        assert_eq!(d.as_array(), &array![[0.0]]);
        let d = interaction_matrix(&StateMatrix::from_scalars(&[0.0, 1.0, 3.0]).unwrap(), &HalfSquare).unwrap();
        assert_eq!(
            d.as_array(),
            &array![[0.0, 0.5, 4.5], [0.5, 0.0, 2.0], [4.5, 2.0, 0.0]]
        );
    }

    #[test]
    fn semi_implicit_examples() {
        let x = StateMatrix::from_scalars(&[0.0, 2.0]).unwrap();
        let d = interaction_matrix(&x, &HalfSquare).unwrap();
        let prev = normalize(&[0.5, 0.5]).unwrap();
        let out = semi_implicit_potential(&pv(&[0.3, -1.0]), &d, &prev).unwrap();
        assert_eq!(out.as_array(), &array![1.3, 0.0]);

        let zero = InteractionMatrix(Array2::zeros((2, 2)));
        let out = semi_implicit_potential(&pv(&[0.3, -1.0]), &zero, &prev).unwrap();
        assert_eq!(out.as_array(), &array![0.3, -1.0]);

        let one = StateMatrix::from_scalars(&[1.5]).unwrap();
        let d = interaction_matrix(&one, &HalfSquare).unwrap();
        let out = semi_implicit_potential(&pv(&[0.7]), &d, &SimplexWeights::uniform(1).unwrap()).unwrap();
        assert_eq!(out.as_array(), &array![0.7]);
    }

    #[test]
    fn kl_examples() {
        let p = normalize(&[0.2, 0.8]).unwrap();
        assert_eq!(kl_divergence(&p, &p).unwrap(), 0.0);
        let q = normalize(&[0.5, 0.5]).unwrap();
        let one_zero = normalize(&[1.0, 0.0]).unwrap();
        assert!((kl_divergence(&one_zero, &q).unwrap() - 2f64.ln()).abs() < 1e-15);
        let p = normalize(&[0.75, 0.25]).unwrap();
        assert!((kl_divergence(&p, &q).unwrap() - 0.13081203594113694).abs() < 1e-14);
        assert!(matches!(
            kl_divergence(&q, &one_zero),
            Err(Error::SupportViolation { index: 1 })
        ));
    }

    #[test]
    fn sinkhorn_examples() {
        let c = CostMatrix::new(array![[0.0]]).unwrap();
        let r = sinkhorn_distance(&[1.0], &[1.0], &c, 0.05, 1e-12, 100).unwrap();
        assert_eq!(r.cost, 0.0);

        let c = CostMatrix::new(array![[0.0, 4.0], [4.0, 0.0]]).unwrap();
        let r = sinkhorn_distance(&[1.0, 0.0], &[0.0, 1.0], &c, 0.05, 1e-12, 100).unwrap();
        assert!((r.cost - 4.0).abs() < 1e-12);
        assert!(r.converged);

        let c = CostMatrix::new(array![[0.0, 1.0], [1.0, 0.0]]).unwrap();
        let r = sinkhorn_distance(&[0.5, 0.5], &[0.5, 0.5], &c, 0.05, 1e-14, 1000).unwrap();
        assert!(r.converged);
        assert!(r.cost <= 0.01);
        // symmetric 2×2: off-diagonal mass is e^{-10}/(1+e^{-10}) in total
        let g = (-10.0f64).exp();
        assert!((r.cost - g / (1.0 + g)).abs() < 1e-12);
    }

    #[test]
    fn sinkhorn_vanishes_with_small_epsilon() {
        let pts: [f64; 5] = [0.0, 0.3, 0.7, 1.0, 1.6];
        let c = Array2::from_shape_fn((5, 5), |(i, j)| (pts[i] - pts[j]).powi(2));
        let c = CostMatrix::new(c).unwrap();
        let mu = [0.1, 0.3, 0.2, 0.25, 0.15];
        let r = sinkhorn_distance(&mu, &mu, &c, 1e-3, 1e-12, 10_000).unwrap();
        assert!(r.cost <= 1e-2);
    }

    proptest! {
        #[test]
        fn kl_is_nonnegative(v in prop::collection::vec((0.01f64..1.0, 0.01f64..1.0), 1..30)) {
            let p = normalize(&v.iter().map(|x| x.0).collect::<Vec<_>>()).unwrap();
            let q = normalize(&v.iter().map(|x| x.1).collect::<Vec<_>>()).unwrap();
            let d = kl_divergence(&p, &q).unwrap();
            prop_assert!(d >= 0.0);
            prop_assert_eq!(kl_divergence(&p, &p).unwrap(), 0.0);
            let differs = p.iter().zip(q.iter()).any(|(a, b)| (a - b).abs() > 1e-6);
            if differs {
                prop_assert!(d > 0.0);
            }
        }

        #[test]
        fn interaction_matrix_is_symmetric(x in prop::collection::vec(-10.0f64..10.0, 1..25)) {
            let d = interaction_matrix(&StateMatrix::from_scalars(&x).unwrap(), &HalfSquare).unwrap();
            let a = d.as_array();
            for i in 0..x.len() {
                for j in 0..x.len() {
                    prop_assert!((a[[i, j]] - a[[j, i]]).abs() <= 1e-12);
                }
            }
        }

        #[test]
        fn free_energy_is_translation_covariant(
            v in prop::collection::vec((0.01f64..1.0, -5.0f64..5.0), 1..30),
            c in -100.0f64..100.0,
        ) {
            let w = normalize(&v.iter().map(|x| x.0).collect::<Vec<_>>()).unwrap();
            let psi: Vec<f64> = v.iter().map(|x| x.1).collect();
            let shifted: Vec<f64> = psi.iter().map(|p| p + c).collect();
            let a = discrete_free_energy(&w, &pv(&psi), 1.0).unwrap();
            let b = discrete_free_energy(&w, &pv(&shifted), 1.0).unwrap();
            prop_assert!((b - a - c).abs() <= 1e-11 * (1.0 + c.abs()));
        }
    }
}
