//! Mass-action kinetics, the ε-dependent reaction-rate equation and the
//! effective slow dynamics on the manifold of fast equilibria.

use std::cell::RefCell;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use thiserror::Error;

use crate::equilibria::{self, EquilibriumError, FastSlowSystem};
use crate::model::Network;
use crate::ode::{self, Method, OdeError, StepControl, Trajectory};
use crate::stoich::{self, to_dmatrix};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KineticsError {
    #[error("kinetics: fast reaction {reaction} has a zero rate")]
    ZeroFastRate { reaction: usize },
    #[error("kinetics: fast detailed balance fails (log residual {residual:e})")]
    NoDetailedBalance { residual: f64 },
    #[error("kinetics: state is off the fast manifold (defect {defect:e} > {tol:e})")]
    OffManifold { defect: f64, tol: f64 },
    #[error("kinetics: state must be strictly positive")]
    NotPositive,
    #[error(transparent)]
    Ode(#[from] OdeError),
    #[error(transparent)]
    Equilibrium(#[from] EquilibriumError),
}

/// `(ψ⁺, ψ⁻)` for reaction `r`, with `0^0 = 1`.
pub fn intensity(net: &Network, x: &DVector<f64>, r: usize) -> (f64, f64) {
    let rx = &net.reactions()[r];
    (
        rx.k_plus * monomial(x, &rx.gamma_plus),
        rx.k_minus * monomial(x, &rx.gamma_minus),
    )
}

fn monomial(x: &DVector<f64>, powers: &[u32]) -> f64 {
    powers
        .iter()
        .zip(x.iter())
        .filter(|(&g, _)| g > 0)
        .map(|(&g, &xi)| xi.powi(g as i32))
        .product()
}

fn monomial_gradient(x: &DVector<f64>, powers: &[u32]) -> DVector<f64> {
    let mut grad = DVector::zeros(x.len());
    for (i, &gi) in powers.iter().enumerate() {
        if gi == 0 {
            continue;
        }
        let mut v = gi as f64 * x[i].powi(gi as i32 - 1);
        for (j, &gj) in powers.iter().enumerate() {
            if j != i && gj > 0 {
                v *= x[j].powi(gj as i32);
            }
        }
        grad[i] = v;
    }
    grad
}

/// `(∇ψ⁺, ∇ψ⁻)` for reaction `r`.
pub fn intensity_gradient(
    net: &Network,
    x: &DVector<f64>,
    r: usize,
) -> (DVector<f64>, DVector<f64>) {
    let rx = &net.reactions()[r];
    (
        monomial_gradient(x, &rx.gamma_plus) * rx.k_plus,
        monomial_gradient(x, &rx.gamma_minus) * rx.k_minus,
    )
}

pub fn intensities(net: &Network, x: &DVector<f64>) -> Vec<(f64, f64)> {
    (0..net.reaction_count())
        .map(|r| intensity(net, x, r))
        .collect()
}

fn gamma(net: &Network, r: usize) -> DVector<f64> {
    let g = net.reactions()[r].reaction_vector();
    DVector::from_iterator(g.len(), g.into_iter().map(|v| v as f64))
}

/// `R_slow(x) + R_fast(x)/ε`.
pub fn rre_rhs(net: &Network, x: &DVector<f64>, eps: f64) -> DVector<f64> {
    let mut v = DVector::zeros(x.len());
    for r in 0..net.reaction_count() {
        let (a, b) = intensity(net, x, r);
        v.axpy(net.rate_scale(r, eps) * (a - b), &gamma(net, r), 1.0);
    }
    v
}

/// `R_slow(x)`.
pub fn slow_rhs(net: &Network, x: &DVector<f64>) -> DVector<f64> {
    let mut v = DVector::zeros(x.len());
    for r in net.slow_reactions() {
        let (a, b) = intensity(net, x, r);
        v.axpy(a - b, &gamma(net, r), 1.0);
    }
    v
}

pub fn rre_jacobian(net: &Network, x: &DVector<f64>, eps: f64) -> DMatrix<f64> {
    let n = x.len();
    let mut jac = DMatrix::zeros(n, n);
    for r in 0..net.reaction_count() {
        let (gp, gm) = intensity_gradient(net, x, r);
        let d = (gp - gm) * net.rate_scale(r, eps);
        jac += gamma(net, r) * d.transpose();
    }
    jac
}

/// Integrates the full RRE. States are recorded at every step unless the
/// control lists output times.
pub fn integrate_rre(
    net: &Network,
    x0: &DVector<f64>,
    eps: f64,
    t_final: f64,
    ctrl: &StepControl,
) -> Result<Trajectory, KineticsError> {
    if x0.iter().any(|&v| v <= 0.0) {
        return Err(KineticsError::NotPositive);
    }
    let f = |_t: f64, x: &DVector<f64>| rre_rhs(net, x, eps);
    let j = |_t: f64, x: &DVector<f64>| rre_jacobian(net, x, eps);
    Ok(ode::integrate(&f, Some(&j), x0, 0.0, t_final, ctrl, None)?)
}

#[derive(Debug, Clone, Serialize)]
pub struct FdbResult {
    pub x_star: Option<Vec<f64>>,
    pub log_residual: f64,
}

/// Minimum-norm least-squares solution of `γ_r · y = log(k⁺_r/k⁻_r)` over fast
/// reactions; `x* = exp(y)` when the residual is at most `1e-10`.
pub fn fdb_solve(net: &Network) -> Result<FdbResult, KineticsError> {
    let n = net.species_count();
    let fast = net.fast_reactions();
    for &r in &fast {
        let rx = &net.reactions()[r];
        if rx.k_plus == 0.0 || rx.k_minus == 0.0 {
            return Err(KineticsError::ZeroFastRate { reaction: r });
        }
    }
    if fast.is_empty() {
        return Ok(FdbResult {
            x_star: Some(vec![1.0; n]),
            log_residual: 0.0,
        });
    }
    let rows: Vec<Vec<i64>> = fast
        .iter()
        .map(|&r| net.reactions()[r].reaction_vector())
        .collect();
    let a = to_dmatrix(&rows, n);
    let b = DVector::from_iterator(
        fast.len(),
        fast.iter().map(|&r| {
            let rx = &net.reactions()[r];
            (rx.k_plus / rx.k_minus).ln()
        }),
    );
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let y = svd
        .solve(&b, 1e-12 * smax.max(1.0))
        .expect("SVD with both factors");
    let residual = (&a * &y - &b).amax();
    Ok(FdbResult {
        x_star: (residual <= 1e-10).then(|| y.iter().map(|v| v.exp()).collect()),
        log_residual: residual,
    })
}

/// `Σ_fast (√ψ⁺ − √ψ⁻)²`.
pub fn fast_defect(net: &Network, x: &DVector<f64>) -> f64 {
    net.fast_reactions()
        .into_iter()
        .map(|r| {
            let (a, b) = intensity(net, x, r);
            (a.sqrt() - b.sqrt()).powi(2)
        })
        .sum()
}

/// Shared manifold-membership tolerance `1e-10·(1 + ‖x‖²)`.
pub fn manifold_tol(x: &DVector<f64>) -> f64 {
    1e-10 * (1.0 + x.norm_squared())
}

fn check_on_manifold(net: &Network, x: &DVector<f64>) -> Result<(), KineticsError> {
    if x.iter().any(|&v| v <= 0.0) {
        return Err(KineticsError::NotPositive);
    }
    let defect = fast_defect(net, x);
    let tol = manifold_tol(x);
    if defect > tol {
        return Err(KineticsError::OffManifold { defect, tol });
    }
    Ok(())
}

/// `(I − P(x)) R_slow(x)` for `x` on the fast manifold.
pub fn effective_rhs_projected(
    sys: &FastSlowSystem,
    x: &DVector<f64>,
) -> Result<DVector<f64>, KineticsError> {
    check_on_manifold(&sys.network, x)?;
    projected_unchecked(sys, x)
}

fn projected_unchecked(
    sys: &FastSlowSystem,
    x: &DVector<f64>,
) -> Result<DVector<f64>, KineticsError> {
    let chart = equilibria::chart_at(&sys.structure, x)?;
    let rs = slow_rhs(&sys.network, x);
    let n = x.len();
    Ok((DMatrix::identity(n, n) - &chart.p) * rs)
}

/// `Q_fast R_slow(R(q))`.
pub fn effective_rhs_coarse(
    sys: &FastSlowSystem,
    q: &DVector<f64>,
) -> Result<DVector<f64>, KineticsError> {
    let rec = sys.reconstruct(q)?;
    Ok(sys.structure.q_fast_apply(&slow_rhs(&sys.network, &rec.x)))
}

/// Fast-reaction multiplier `λ ∈ Γ_fast` keeping `R_slow + λ` tangent to the
/// manifold, from `B X⁻¹ (R_slow + Bᵀμ) = 0` with `B` a basis of `Γ_fast`.
pub fn lagrange_multiplier(
    sys: &FastSlowSystem,
    x: &DVector<f64>,
) -> Result<DVector<f64>, KineticsError> {
    let b = to_dmatrix(&sys.structure.gamma_fast_basis, x.len());
    let rs = slow_rhs(&sys.network, x);
    if b.nrows() == 0 {
        return Ok(DVector::zeros(x.len()));
    }
    let xinv = DMatrix::from_diagonal(&x.map(|v| 1.0 / v));
    let normal = &b * &xinv * b.transpose();
    let rhs = -(&b * &xinv * rs);
    let mu = normal
        .cholesky()
        .ok_or(EquilibriumError::Singular)?
        .solve(&rhs);
    Ok(b.transpose() * mu)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum EffectiveMode {
    Projected,
    Coarse,
    Lagrange,
}

#[derive(Debug, Clone, Default)]
pub struct EffectivePath {
    pub times: Vec<f64>,
    pub states: Vec<DVector<f64>>,
    pub q: Vec<DVector<f64>>,
    /// Fast multiplier `λ(t)` (lagrange mode only).
    pub lambda: Vec<DVector<f64>>,
    pub max_manifold_defect: f64,
}

/// Effective dynamics started from `x0` (projected/lagrange) or from the
/// manifold point with the same fast-conserved coordinates (coarse). Off-manifold
/// starts are first mapped to `R(Q_fast x0)`.
pub fn integrate_effective(
    sys: &FastSlowSystem,
    x0: &DVector<f64>,
    t_final: f64,
    mode: EffectiveMode,
    ctrl: &StepControl,
) -> Result<EffectivePath, KineticsError> {
    let q0 = sys.structure.q_fast_apply(x0);
    let start = sys.reconstruct(&q0)?;
    let ctrl = StepControl {
        method: Method::Explicit,
        nonnegative: false,
        ..ctrl.clone()
    };
    let warm = RefCell::new(start.dual.clone());
    let recon = |q: &DVector<f64>| -> Result<DVector<f64>, EquilibriumError> {
        let lam0 = warm.borrow().clone();
        let rec = sys.reconstruct_from(q, &lam0)?;
        *warm.borrow_mut() = rec.dual.clone();
        Ok(rec.x)
    };
    let failure: RefCell<Option<KineticsError>> = RefCell::new(None);
    let nan = |n: usize| DVector::from_element(n, f64::NAN);

    let traj = match mode {
        EffectiveMode::Coarse => {
            let f = |_t: f64, q: &DVector<f64>| match recon(q) {
                Ok(x) => sys.structure.q_fast_apply(&slow_rhs(&sys.network, &x)),
                Err(e) => {
                    failure.borrow_mut().get_or_insert(e.into());
                    nan(q.len())
                }
            };
            ode::integrate(&f, None, &q0, 0.0, t_final, &ctrl, None)
        }
        EffectiveMode::Projected | EffectiveMode::Lagrange => {
            let f = |_t: f64, x: &DVector<f64>| {
                let v = if mode == EffectiveMode::Projected {
                    projected_unchecked(sys, x)
                } else {
                    lagrange_multiplier(sys, x).map(|lam| slow_rhs(&sys.network, x) + lam)
                };
                v.unwrap_or_else(|e| {
                    failure.borrow_mut().get_or_insert(e);
                    nan(x.len())
                })
            };
            let mut hook = |_t: f64, x: &mut DVector<f64>| -> Result<(), String> {
                let q = sys.structure.q_fast_apply(x);
                *x = recon(&q).map_err(|e| e.to_string())?;
                Ok(())
            };
            ode::integrate(&f, None, &start.x, 0.0, t_final, &ctrl, Some(&mut hook))
        }
    };
    if let Some(e) = failure.into_inner() {
        return Err(e);
    }
    let traj = traj?;

    let mut out = EffectivePath::default();
    for (t, y) in traj.times.iter().zip(traj.states) {
        let (x, q) = match mode {
            EffectiveMode::Coarse => (recon(&y)?, y),
            _ => {
                let q = sys.structure.q_fast_apply(&y);
                (y, q)
            }
        };
        if mode == EffectiveMode::Lagrange {
            out.lambda.push(lagrange_multiplier(sys, &x)?);
        }
        out.max_manifold_defect = out.max_manifold_defect.max(fast_defect(&sys.network, &x));
        out.times.push(*t);
        out.states.push(x);
        out.q.push(q);
    }
    Ok(out)
}

/// `‖Q x − Q x0‖∞` over a trajectory, relative to `1 + ‖Q x0‖∞`.
pub fn conserved_drift(q: &[Vec<i64>], states: &[DVector<f64>]) -> f64 {
    if q.is_empty() || states.is_empty() {
        return 0.0;
    }
    let qm = to_dmatrix(q, states[0].len());
    let q0 = &qm * &states[0];
    let worst = states
        .iter()
        .map(|x| (&qm * x - &q0).amax())
        .fold(0.0, f64::max);
    worst / (1.0 + q0.amax())
}

/// Distance of a positive state from the manifold, measured as `‖x − R(Q_fast x)‖`.
pub fn manifold_distance(sys: &FastSlowSystem, x: &DVector<f64>) -> Result<f64, KineticsError> {
    let rec = sys.reconstruct(&sys.structure.q_fast_apply(x))?;
    Ok((x - rec.x).norm())
}

pub use stoich::membership_tol;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::parse_network;

    fn chain() -> Network {
        parse_network("species A B C\nfast: A <-> B ; 1 1\nslow: B <-> C ; 2 1").unwrap()
    }

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(xs)
    }

    #[test]
    fn intensity_examples() {
        let ab = parse_network("species A B\nfast: A <-> B ; 2 3").unwrap();
        assert_eq!(intensity(&ab, &v(&[1.0, 1.0]), 0), (2.0, 3.0));
        let bind = parse_network("species A B C\nslow: A + B <-> C ; 1 1").unwrap();
        assert_eq!(intensity(&bind, &v(&[2.0, 3.0, 5.0]), 0), (6.0, 5.0));
        assert_eq!(intensity(&bind, &v(&[0.0, 3.0, 5.0]), 0).0, 0.0);
        let src = parse_network("species A\nslow: 0 <-> A ; 1.5 1").unwrap();
        assert_eq!(intensity(&src, &v(&[0.0]), 0), (1.5, 0.0));
    }

    #[test]
    fn chain_rhs_example() {
        let rhs = rre_rhs(&chain(), &v(&[1.0, 1.0, 1.0]), 0.1);
        assert!((rhs - v(&[0.0, -1.0, 1.0])).amax() < 1e-15);
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let net = parse_network("species A B C\nfast: A + B <-> C ; 2 1\nslow: 2C <-> A ; 0.5 3")
            .unwrap();
        let x = v(&[0.7, 1.3, 0.4]);
        let jac = rre_jacobian(&net, &x, 0.1);
        let h = 1e-6;
        for j in 0..3 {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[j] += h;
            xm[j] -= h;
            let fd = (rre_rhs(&net, &xp, 0.1) - rre_rhs(&net, &xm, 0.1)) / (2.0 * h);
            assert!((fd - jac.column(j)).amax() < 1e-6 * (1.0 + jac.amax()));
        }
    }

    #[test]
    fn fdb_examples() {
        let sym = parse_network("species A B\nfast: A <-> B ; 1 1").unwrap();
        let res = fdb_solve(&sym).unwrap();
        assert_eq!(res.x_star.unwrap(), vec![1.0, 1.0]);

        // Minimum-norm solution of a single equation is along the row itself.
        let bind = parse_network("species A B C\nfast: A + B <-> C ; 2 1").unwrap();
        let res = fdb_solve(&bind).unwrap();
        let l = 2f64.ln() / 3.0;
        let expect = [-l, -l, l];
        for (xs, e) in res.x_star.unwrap().iter().zip(expect) {
            assert!((xs.ln() - e).abs() < 1e-14);
        }

        let cyc = parse_network(
            "species A B C\nfast: A <-> B ; 2 1\nfast: B <-> C ; 1 1\nfast: C <-> A ; 1 1",
        )
        .unwrap();
        let res = fdb_solve(&cyc).unwrap();
        assert!(res.x_star.is_none());
        // Normal-equation oracle: the residual is the projection of b onto (1,1,1), ln2/3 per row.
        assert!((res.log_residual - 2f64.ln() / 3.0).abs() < 1e-12);
    }

    #[test]
    fn defect_example() {
        let ab = parse_network("species A B\nfast: A <-> B ; 1 1").unwrap();
        assert_eq!(fast_defect(&ab, &v(&[4.0, 1.0])), 1.0);
        assert_eq!(fast_defect(&ab, &v(&[2.0, 2.0])), 0.0);
    }

    #[test]
    fn only_fast_reactions_stay_at_equilibrium() {
        let ab = parse_network("species A B\nfast: A <-> B ; 2 1").unwrap();
        let x0 = v(&[0.5, 1.0]);
        assert!(rre_rhs(&ab, &x0, 0.01).amax() < 1e-15);
        let traj = integrate_rre(&ab, &x0, 0.01, 1.0, &StepControl::default()).unwrap();
        assert!((traj.last() - &x0).amax() < 1e-14);
    }
}
