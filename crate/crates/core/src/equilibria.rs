//! Reconstruction of fast equilibria from fast-conserved coordinates.
//!
//! `R(q)` minimizes the relative entropy `H(x|x*)` subject to `Q_fast x = q`.
//! The minimizer has the form `x = x* ⊙ exp(Q_fastᵀ λ)`, and `λ` minimizes the
//! strictly convex dual `φ(λ) = Σ x_i(λ) − q·λ`, which is solved by damped Newton.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use thiserror::Error;

use crate::kinetics::{self, KineticsError};
use crate::model::Network;
use crate::stoich::{build_structure, StoichStructure};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EquilibriumError {
    #[error("equilibria: q is on or beyond the boundary of the reachable set ({0})")]
    Boundary(String),
    #[error(
        "equilibria: dual Newton did not converge in {iters} iterations (residual {residual:e})"
    )]
    NonConvergence { iters: usize, residual: f64 },
    #[error("equilibria: singular normal matrix")]
    Singular,
    #[error("equilibria: dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
}

pub const MAX_ITERS: usize = 100;
const ARMIJO_C: f64 = 1e-4;
const EXP_LIMIT: f64 = 700.0;
/// Entries below this fraction of the largest one count as boundary states.
const BOUNDARY_RATIO: f64 = 1e-9;

/// A network with fast detailed balance together with its structure and
/// reference equilibrium `x*`.
#[derive(Debug, Clone)]
pub struct FastSlowSystem {
    pub network: Network,
    pub structure: StoichStructure,
    pub x_star: DVector<f64>,
}

impl FastSlowSystem {
    pub fn new(network: Network) -> Result<Self, KineticsError> {
        let fdb = kinetics::fdb_solve(&network)?;
        let Some(x_star) = fdb.x_star else {
            return Err(KineticsError::NoDetailedBalance {
                residual: fdb.log_residual,
            });
        };
        let structure = build_structure(&network);
        Ok(FastSlowSystem {
            network,
            structure,
            x_star: DVector::from_vec(x_star),
        })
    }

    /// Same system expressed in another fast-conserved basis.
    pub fn with_structure(&self, structure: StoichStructure) -> Self {
        FastSlowSystem {
            network: self.network.clone(),
            structure,
            x_star: self.x_star.clone(),
        }
    }

    pub fn species(&self) -> usize {
        self.structure.species
    }

    pub fn m_fast(&self) -> usize {
        self.structure.m_fast()
    }

    pub fn reconstruct(&self, q: &DVector<f64>) -> Result<ReconstructionResult, EquilibriumError> {
        reconstruct(&self.structure, &self.x_star, q)
    }

    pub fn reconstruct_from(
        &self,
        q: &DVector<f64>,
        lambda0: &DVector<f64>,
    ) -> Result<ReconstructionResult, EquilibriumError> {
        reconstruct_from(&self.structure, &self.x_star, q, lambda0)
    }

    /// `R(Q_fast x)`.
    pub fn project(&self, x: &DVector<f64>) -> Result<ReconstructionResult, EquilibriumError> {
        self.reconstruct(&self.structure.q_fast_apply(x))
    }
}

#[derive(Debug, Clone)]
pub struct ReconstructionResult {
    pub x: DVector<f64>,
    pub q: DVector<f64>,
    pub dual: DVector<f64>,
    /// `‖Q_fast x − q‖`.
    pub kkt_residual: f64,
    pub newton_iters: usize,
    /// Dual objective after each accepted iterate, starting with the initial one.
    pub merit_trace: Vec<f64>,
}

pub fn reconstruct(
    structure: &StoichStructure,
    x_star: &DVector<f64>,
    q: &DVector<f64>,
) -> Result<ReconstructionResult, EquilibriumError> {
    let lambda0 = DVector::zeros(structure.m_fast());
    reconstruct_from(structure, x_star, q, &lambda0)
}

fn primal(qf: &DMatrix<f64>, x_star: &DVector<f64>, lambda: &DVector<f64>) -> Option<DVector<f64>> {
    let s = qf.transpose() * lambda;
    if s.amax() > EXP_LIMIT {
        return None;
    }
    Some(x_star.component_mul(&s.map(f64::exp)))
}

pub fn reconstruct_from(
    structure: &StoichStructure,
    x_star: &DVector<f64>,
    q: &DVector<f64>,
    lambda0: &DVector<f64>,
) -> Result<ReconstructionResult, EquilibriumError> {
    let mf = structure.m_fast();
    if q.len() != mf {
        return Err(EquilibriumError::Dimension {
            expected: mf,
            got: q.len(),
        });
    }
    if q.iter().any(|v| !v.is_finite()) {
        return Err(EquilibriumError::Boundary("non-finite q".into()));
    }
    let qf = structure.q_fast_f64();
    let tol = 1e-12 * (1.0 + q.norm());
    let mut lambda = lambda0.clone();
    let mut x = primal(qf, x_star, &lambda)
        .ok_or_else(|| EquilibriumError::Boundary("initial multiplier overflows".into()))?;
    let mut phi = x.sum() - q.dot(&lambda);
    let mut trace = vec![phi];

    for it in 0..=MAX_ITERS {
        let g = qf * &x - q;
        let gnorm = g.norm();
        if gnorm <= tol {
            if x.min() <= BOUNDARY_RATIO * x.amax() {
                return Err(EquilibriumError::Boundary(format!(
                    "reconstructed state touches the boundary (min entry {:e})",
                    x.min()
                )));
            }
            return Ok(ReconstructionResult {
                x,
                q: q.clone(),
                dual: lambda,
                kkt_residual: gnorm,
                newton_iters: it,
                merit_trace: trace,
            });
        }
        if it == MAX_ITERS {
            break;
        }
        let hess = qf * DMatrix::from_diagonal(&x) * qf.transpose();
        let Some(chol) = hess.cholesky() else {
            return Err(EquilibriumError::Boundary(
                "dual Hessian lost definiteness".into(),
            ));
        };
        let dir = -chol.solve(&g);
        let slope = g.dot(&dir);
        let mut step = 1.0;
        let mut accepted = false;
        // Below rounding the merit cannot resolve the decrease; take the Newton step.
        let trust_newton = -slope <= 1e-14 * (1.0 + phi.abs());
        while step > 1e-12 {
            let trial = &lambda + &dir * step;
            if let Some(xt) = primal(qf, x_star, &trial) {
                let phit = xt.sum() - q.dot(&trial);
                if trust_newton || phit <= phi + ARMIJO_C * step * slope {
                    lambda = trial;
                    x = xt;
                    phi = phit.min(phi);
                    accepted = true;
                    break;
                }
            }
            step *= 0.5;
        }
        if !accepted {
            if gnorm <= 1e-9 * (1.0 + q.norm()) {
                return Ok(ReconstructionResult {
                    x,
                    q: q.clone(),
                    dual: lambda,
                    kkt_residual: gnorm,
                    newton_iters: it,
                    merit_trace: trace,
                });
            }
            return Err(EquilibriumError::Boundary(format!(
                "line search failed with residual {gnorm:e}"
            )));
        }
        trace.push(phi);
    }
    let residual = (qf * &x - q).norm();
    let spread = (qf.transpose() * &lambda).amax();
    if spread > 30.0 {
        Err(EquilibriumError::Boundary(format!(
            "multiplier diverging (|Q_fastᵀλ| = {spread:.1})"
        )))
    } else {
        Err(EquilibriumError::NonConvergence {
            iters: MAX_ITERS,
            residual,
        })
    }
}

/// Tangent data of the manifold at a positive point.
#[derive(Debug, Clone)]
pub struct ManifoldChart {
    /// `DR = X Q_fastᵀ (Q_fast X Q_fastᵀ)⁻¹`.
    pub dr: DMatrix<f64>,
    /// `P = I − DR Q_fast`, the projector onto `Γ_fast` along the tangent space.
    pub p: DMatrix<f64>,
    /// Diagonal of `D²H(x) = diag(1/x)`.
    pub h_diag: DVector<f64>,
}

pub fn chart(
    structure: &StoichStructure,
    recon: &ReconstructionResult,
) -> Result<ManifoldChart, EquilibriumError> {
    chart_at(structure, &recon.x)
}

pub fn chart_at(
    structure: &StoichStructure,
    x: &DVector<f64>,
) -> Result<ManifoldChart, EquilibriumError> {
    let n = structure.species;
    if x.len() != n {
        return Err(EquilibriumError::Dimension {
            expected: n,
            got: x.len(),
        });
    }
    if x.iter().any(|&v| !(v > 0.0)) {
        return Err(EquilibriumError::Singular);
    }
    let qf = structure.q_fast_f64();
    let xq = DMatrix::from_diagonal(x) * qf.transpose();
    let normal = qf * &xq;
    let chol = normal.cholesky().ok_or(EquilibriumError::Singular)?;
    let dr = chol.solve(&xq.transpose()).transpose();
    let p = DMatrix::identity(n, n) - &dr * qf;
    Ok(ManifoldChart {
        dr,
        p,
        h_diag: x.map(|v| 1.0 / v),
    })
}

/// `fast_defect(x) ≤ tol`, with the shared manifold tolerance by default.
pub fn is_fast_equilibrium(net: &Network, x: &DVector<f64>, tol: Option<f64>) -> bool {
    kinetics::fast_defect(net, x) <= tol.unwrap_or_else(|| kinetics::manifold_tol(x))
}

#[derive(Debug, Clone)]
pub struct ManifoldSample {
    pub node: Vec<usize>,
    pub q: DVector<f64>,
    pub result: Result<ReconstructionResult, EquilibriumError>,
}

/// Reconstructs a tensor lattice with `n` nodes per axis over `[q_lo, q_hi]`.
/// With `n = 1` the single node is the box center.
pub fn sample_manifold(
    sys: &FastSlowSystem,
    q_lo: &DVector<f64>,
    q_hi: &DVector<f64>,
    n: usize,
) -> Vec<ManifoldSample> {
    let d = q_lo.len();
    let total = n.max(1).pow(d as u32);
    (0..total)
        .into_par_iter()
        .map(|flat| {
            let mut rest = flat;
            let mut node = vec![0; d];
            let mut q = DVector::zeros(d);
            for k in (0..d).rev() {
                node[k] = rest % n;
                rest /= n;
                q[k] = if n == 1 {
                    0.5 * (q_lo[k] + q_hi[k])
                } else {
                    q_lo[k] + (q_hi[k] - q_lo[k]) * node[k] as f64 / (n - 1) as f64
                };
            }
            let result = sys.reconstruct(&q);
            ManifoldSample { node, q, result }
        })
        .collect()
}

/// Relative entropy `H(x|y)`.
pub fn relative_entropy_vec(x: &DVector<f64>, y: &DVector<f64>) -> f64 {
    x.iter()
        .zip(y.iter())
        .map(|(&u, &a)| crate::rate_functions::relative_entropy(u, a))
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::parse_network;

    fn chain_sys() -> FastSlowSystem {
        FastSlowSystem::new(
            parse_network("species A B C\nfast: A <-> B ; 1 1\nslow: B <-> C ; 2 1").unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn chain_reconstruction_splits_evenly() {
        let sys = chain_sys();
        for c in [0.3, 1.0, 2.5] {
            let rec = sys
                .reconstruct(&DVector::from_vec(vec![2.0 + c, c]))
                .unwrap();
            assert!((&rec.x - DVector::from_vec(vec![1.0, 1.0, c])).amax() < 1e-12);
        }
    }

    #[test]
    fn reference_point_is_its_own_reconstruction() {
        let sys = chain_sys();
        let q = sys.structure.q_fast_apply(&sys.x_star);
        let rec = sys.reconstruct(&q).unwrap();
        assert_eq!(rec.newton_iters, 0);
        assert!(rec.dual.amax() == 0.0);
    }

    #[test]
    fn binding_reconstruction_matches_cubic_root() {
        let sys = FastSlowSystem::new(
            parse_network("species A B C\nfast: A + B <-> C ; 1 1\nslow: C <-> A ; 1 1").unwrap(),
        )
        .unwrap();
        // Q_fast rows span {A + C, B + C}; at (2,2,4) both equal 6 and a = b.
        let x0 = DVector::from_vec(vec![2.0, 2.0, 4.0]);
        let rec = sys.project(&x0).unwrap();
        // a² = c with a + c = 6 → a = (−1 + 5)/2 = 2.
        let a = (-1.0 + (1.0f64 + 24.0).sqrt()) / 2.0;
        assert!((&rec.x - DVector::from_vec(vec![a, a, 6.0 - a])).amax() < 1e-10);
    }

    #[test]
    fn infeasible_q_is_a_boundary_error() {
        let sys = chain_sys();
        let err = sys
            .reconstruct(&DVector::from_vec(vec![-1.0, 0.5]))
            .unwrap_err();
        assert!(matches!(err, EquilibriumError::Boundary(_)), "{err:?}");
        let err = sys
            .reconstruct(&DVector::from_vec(vec![1.0, 1.0]))
            .unwrap_err();
        assert!(matches!(err, EquilibriumError::Boundary(_)), "{err:?}");
    }

    #[test]
    fn single_node_sample_is_center() {
        let sys = chain_sys();
        let q = sys.structure.q_fast_apply(&sys.x_star);
        let s = sample_manifold(&sys, &q, &q, 1);
        assert_eq!(s.len(), 1);
        let rec = s[0].result.as_ref().unwrap();
        assert!((&rec.x - &sys.x_star).amax() < 1e-14);
    }
}
