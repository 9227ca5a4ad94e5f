//! Exponential Hamiltonians of mass-action networks and their Legendre duals.
//!
//! Every Hamiltonian here is a sum of channel terms `S*(c_r·z; α_r, β_r)`.
//! Lagrangians are evaluated by maximizing `w·z − H(z)` over `z` in the span of
//! the channel directions, in an orthonormal basis of that span.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::equilibria::{chart_at, EquilibriumError, FastSlowSystem};
use crate::kinetics::{self, intensity, intensity_gradient};
use crate::model::Network;
use crate::stoich::{self, membership_tol, StoichStructure};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RateError {
    #[error("rate_functions: state is off the fast manifold (defect {defect:e})")]
    OffManifold { defect: f64 },
    #[error("rate_functions: state must be strictly positive")]
    NotPositive,
    #[error("rate_functions: coercivity fails: {0}")]
    Coercivity(String),
    #[error(transparent)]
    Equilibrium(#[from] EquilibriumError),
}

/// Largest exponent evaluated; beyond it `S*` is reported as `+∞`.
pub const EXP_GUARD: f64 = 700.0;

/// `C*(p) = 2(cosh p − 1)`, written as `4 sinh²(p/2)` to keep small `p` accurate.
pub fn cosh_star(p: f64) -> f64 {
    let s = (0.5 * p).sinh();
    4.0 * s * s
}

/// `C(s) = s·asinh(s/2) − 2(√(1 + s²/4) − 1)`, the Legendre dual of `C*`.
pub fn cosh_legendre(s: f64) -> f64 {
    let h = 0.5 * s;
    let root = h.hypot(1.0);
    // √(1+h²) − 1 = h²/(√(1+h²) + 1) avoids cancellation at small h.
    s * h.asinh() - 2.0 * h * (h / (root + 1.0))
}

/// `S*(p; α, β) = α(eᵖ − 1) + β(e⁻ᵖ − 1)`.
pub fn s_star(p: f64, alpha: f64, beta: f64) -> f64 {
    if p > EXP_GUARD {
        return if alpha > 0.0 { f64::INFINITY } else { -beta };
    }
    if p < -EXP_GUARD {
        return if beta > 0.0 { f64::INFINITY } else { -alpha };
    }
    alpha * p.exp_m1() + beta * (-p).exp_m1()
}

fn s_star_d1(p: f64, alpha: f64, beta: f64) -> f64 {
    let p = p.clamp(-EXP_GUARD, EXP_GUARD);
    alpha * p.exp() - beta * (-p).exp()
}

fn s_star_d2(p: f64, alpha: f64, beta: f64) -> f64 {
    let p = p.clamp(-EXP_GUARD, EXP_GUARD);
    alpha * p.exp() + beta * (-p).exp()
}

/// Scalar relative entropy `u log(u/α) − u + α`.
pub fn relative_entropy(u: f64, alpha: f64) -> f64 {
    if u == 0.0 {
        alpha
    } else if alpha == 0.0 || u < 0.0 {
        f64::INFINITY
    } else {
        u * (u / alpha).ln() - u + alpha
    }
}

/// `S(J | α, β)`, the Legendre dual of `S*(·; α, β)`.
pub fn s_cost(j: f64, alpha: f64, beta: f64) -> f64 {
    match (alpha > 0.0, beta > 0.0) {
        (true, true) => {
            let m = (alpha * beta).sqrt();
            let gap = alpha.sqrt() - beta.sqrt();
            m * cosh_legendre(j / m) - 0.5 * j * (alpha / beta).ln() + gap * gap
        }
        (false, true) => {
            if j <= 0.0 {
                relative_entropy(-j, beta)
            } else {
                f64::INFINITY
            }
        }
        (true, false) => {
            if j >= 0.0 {
                relative_entropy(j, alpha)
            } else {
                f64::INFINITY
            }
        }
        (false, false) => {
            if j == 0.0 {
                0.0
            } else {
                f64::INFINITY
            }
        }
    }
}

/// Result of a Legendre-dual evaluation.
#[derive(Debug, Clone)]
pub struct DualEvaluation {
    pub value: f64,
    /// Optimal momentum (dual forms) or flux vector (flux form).
    pub optimizer: DVector<f64>,
    pub converged: bool,
    /// Stationarity residual `‖∂H(z*) − w‖`, or the off-span residual when the value is `+∞`.
    pub constraint_residual: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone)]
pub(crate) struct Channel {
    pub c: DVector<f64>,
    pub alpha: f64,
    pub beta: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct NewtonOptions {
    pub max_iters: usize,
    pub grad_tol: f64,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        NewtonOptions {
            max_iters: 60,
            grad_tol: 1e-11,
        }
    }
}

fn channel_h(channels: &[Channel], z: &DVector<f64>) -> f64 {
    channels
        .iter()
        .map(|ch| s_star(ch.c.dot(z), ch.alpha, ch.beta))
        .sum()
}

/// `sup_z { w·z − Σ S*(c·z) }` over `z` in the row span of `onb`.
pub(crate) fn legendre(
    channels: &[Channel],
    onb: &DMatrix<f64>,
    w: &DVector<f64>,
    z0: Option<&DVector<f64>>,
    opts: NewtonOptions,
) -> DualEvaluation {
    let d = w.len();
    let off = stoich::span_residual(onb, w);
    if off > membership_tol(w) {
        return DualEvaluation {
            value: f64::INFINITY,
            optimizer: DVector::zeros(d),
            converged: true,
            constraint_residual: off,
            iterations: 0,
        };
    }
    let k = onb.nrows();
    if k == 0 {
        return DualEvaluation {
            value: 0.0,
            optimizer: DVector::zeros(d),
            converged: true,
            constraint_residual: 0.0,
            iterations: 0,
        };
    }
    let a: Vec<DVector<f64>> = channels.iter().map(|ch| onb * &ch.c).collect();
    let wy = onb * w;
    let objective = |y: &DVector<f64>| -> f64 {
        let mut h = 0.0;
        for (ch, ar) in channels.iter().zip(&a) {
            h += s_star(ar.dot(y), ch.alpha, ch.beta);
        }
        wy.dot(y) - h
    };
    let mut y = DVector::zeros(k);
    let mut f = 0.0;
    if let Some(z0) = z0 {
        let y0 = onb * z0;
        let f0 = objective(&y0);
        if f0.is_finite() && f0 > 0.0 {
            y = y0;
            f = f0;
        }
    }
    let mut converged = false;
    let mut gnorm = f64::INFINITY;
    let mut iters = 0;
    for it in 0..=opts.max_iters {
        iters = it;
        let mut g = wy.clone();
        let mut hess = DMatrix::zeros(k, k);
        for (ch, ar) in channels.iter().zip(&a) {
            let s = ar.dot(&y);
            g.axpy(-s_star_d1(s, ch.alpha, ch.beta), ar, 1.0);
            hess.ger(s_star_d2(s, ch.alpha, ch.beta), ar, ar, 1.0);
        }
        gnorm = g.norm();
        if gnorm <= opts.grad_tol * (1.0 + f.abs()) {
            converged = true;
            break;
        }
        if it == opts.max_iters {
            break;
        }
        let Some(chol) = hess.cholesky() else {
            break;
        };
        let dir = chol.solve(&g);
        let predicted = g.dot(&dir);
        if predicted <= 1e-18 * (1.0 + f.abs()) && gnorm <= 1e-9 * (1.0 + f.abs()) {
            converged = true;
            break;
        }
        let rounding = predicted <= 1e-14 * (1.0 + f.abs());
        let mut step = 1.0;
        let mut moved = false;
        while step > 1e-12 {
            let trial = &y + &dir * step;
            let ft = objective(&trial);
            if ft.is_finite() && (rounding || ft >= f + 1e-4 * step * predicted) {
                y = trial;
                f = ft.max(f);
                moved = true;
                break;
            }
            step *= 0.5;
        }
        if !moved {
            break;
        }
    }
    DualEvaluation {
        value: f.max(0.0),
        optimizer: onb.transpose() * y,
        converged,
        constraint_residual: gnorm,
        iterations: iters,
    }
}

/// Value and gradients of a Hamiltonian.
#[derive(Debug, Clone)]
pub struct HamiltonianEval {
    pub value: f64,
    pub grad_p: DVector<f64>,
    pub grad_x: DVector<f64>,
}

fn gamma_f64(net: &Network, r: usize) -> DVector<f64> {
    let g = net.reactions()[r].reaction_vector();
    DVector::from_iterator(g.len(), g.into_iter().map(|v| v as f64))
}

/// `H_ε(x, p) = Σ_slow S*(γ_r·p; ψ±_r) + ε⁻¹ Σ_fast S*(γ_r·p; ψ±_r)`.
pub fn hamiltonian_eps(
    net: &Network,
    x: &DVector<f64>,
    p: &DVector<f64>,
    eps: f64,
) -> HamiltonianEval {
    let n = x.len();
    let mut value = 0.0;
    let mut grad_p = DVector::zeros(n);
    let mut grad_x = DVector::zeros(n);
    for r in 0..net.reaction_count() {
        let scale = net.rate_scale(r, eps);
        let g = gamma_f64(net, r);
        let s = g.dot(p);
        let (a, b) = intensity(net, x, r);
        value += scale * s_star(s, a, b);
        grad_p.axpy(scale * s_star_d1(s, a, b), &g, 1.0);
        let (ga, gb) = intensity_gradient(net, x, r);
        let sc = s.clamp(-EXP_GUARD, EXP_GUARD);
        grad_x.axpy(scale * sc.exp_m1(), &ga, 1.0);
        grad_x.axpy(scale * (-sc).exp_m1(), &gb, 1.0);
    }
    HamiltonianEval {
        value,
        grad_p,
        grad_x,
    }
}

fn eps_channels(net: &Network, x: &DVector<f64>, eps: f64) -> Vec<Channel> {
    (0..net.reaction_count())
        .map(|r| {
            let scale = net.rate_scale(r, eps);
            let (a, b) = intensity(net, x, r);
            Channel {
                c: gamma_f64(net, r),
                alpha: scale * a,
                beta: scale * b,
            }
        })
        .collect()
}

/// `L_ε(x, v) = sup_p { p·v − H_ε(x, p) }`; `+∞` when `v ∉ Γ`.
pub fn lagrangian_eps(
    net: &Network,
    structure: &StoichStructure,
    x: &DVector<f64>,
    v: &DVector<f64>,
    eps: f64,
) -> DualEvaluation {
    lagrangian_eps_from(net, structure, x, v, eps, None, NewtonOptions::default())
}

pub fn lagrangian_eps_from(
    net: &Network,
    structure: &StoichStructure,
    x: &DVector<f64>,
    v: &DVector<f64>,
    eps: f64,
    p0: Option<&DVector<f64>>,
    opts: NewtonOptions,
) -> DualEvaluation {
    legendre(
        &eps_channels(net, x, eps),
        structure.gamma_onb(),
        v,
        p0,
        opts,
    )
}

/// Primal flux form: minimizes `Σ S(J_r | ψ±_r,ε)` subject to `Gᵀ J = v`, with `J`
/// recovered from the dual optimizer. The optimizer field holds `J`.
pub fn lagrangian_eps_flux(
    net: &Network,
    structure: &StoichStructure,
    x: &DVector<f64>,
    v: &DVector<f64>,
    eps: f64,
) -> DualEvaluation {
    let dual = lagrangian_eps(net, structure, x, v, eps);
    if dual.value.is_infinite() {
        return dual;
    }
    let channels = eps_channels(net, x, eps);
    let p = &dual.optimizer;
    let mut flux = DVector::zeros(channels.len());
    let mut value = 0.0;
    let mut continuity = DVector::zeros(v.len());
    for (r, ch) in channels.iter().enumerate() {
        let s = ch.c.dot(p);
        flux[r] = s_star_d1(s, ch.alpha, ch.beta);
        value += s_cost(flux[r], ch.alpha, ch.beta);
        continuity.axpy(flux[r], &ch.c, 1.0);
    }
    DualEvaluation {
        value,
        optimizer: flux,
        converged: dual.converged,
        constraint_residual: (continuity - v).norm(),
        iterations: dual.iterations,
    }
}

fn check_manifold(net: &Network, x: &DVector<f64>) -> Result<(), RateError> {
    if x.iter().any(|&v| v <= 0.0) {
        return Err(RateError::NotPositive);
    }
    let defect = kinetics::fast_defect(net, x);
    if defect > kinetics::manifold_tol(x) {
        return Err(RateError::OffManifold { defect });
    }
    Ok(())
}

/// `H_eff(x, p) = Σ_slow S*(γ_r·p; ψ±_r) + χ_{Γ_fast^⊥}(p)`.
pub fn hamiltonian_eff(
    sys: &FastSlowSystem,
    x: &DVector<f64>,
    p: &DVector<f64>,
) -> Result<f64, RateError> {
    check_manifold(&sys.network, x)?;
    let fast_part = sys.structure.gamma_fast_onb() * p;
    if fast_part.norm() > membership_tol(p) {
        return Ok(f64::INFINITY);
    }
    Ok(sys
        .structure
        .slow_rows
        .iter()
        .map(|&r| {
            let (a, b) = intensity(&sys.network, x, r);
            s_star(gamma_f64(&sys.network, r).dot(p), a, b)
        })
        .sum())
}

fn coarse_channels(sys: &FastSlowSystem, x: &DVector<f64>) -> Vec<Channel> {
    sys.structure
        .slow_rows
        .iter()
        .map(|&r| {
            let (a, b) = intensity(&sys.network, x, r);
            Channel {
                c: sys.structure.coarse_gamma_f64(r),
                alpha: a,
                beta: b,
            }
        })
        .collect()
}

fn check_coercive(channels: &[Channel]) -> Result<(), RateError> {
    for (i, ch) in channels.iter().enumerate() {
        if ch.c.amax() > 0.0 && !(ch.alpha > 0.0 && ch.beta > 0.0) {
            return Err(RateError::Coercivity(format!(
                "slow channel {i} has a vanishing intensity (ψ⁺ = {}, ψ⁻ = {})",
                ch.alpha, ch.beta
            )));
        }
    }
    Ok(())
}

/// `L_eff(x, v)` on the manifold, computed as `L_cg(Q_fast x, Q_fast v)`.
/// The optimizer is the coarse momentum `ξ`.
pub fn lagrangian_eff(
    sys: &FastSlowSystem,
    x: &DVector<f64>,
    v: &DVector<f64>,
) -> Result<DualEvaluation, RateError> {
    check_manifold(&sys.network, x)?;
    let channels = coarse_channels(sys, x);
    check_coercive(&channels)?;
    let vcg = sys.structure.q_fast_apply(v);
    Ok(legendre(
        &channels,
        sys.structure.coarse_slow_onb(),
        &vcg,
        None,
        NewtonOptions::default(),
    ))
}

/// `H(q, ξ) = Σ_slow S*(Q_fast γ_r·ξ; ψ±_r(R(q)))` with gradients in `ξ` and `q`.
pub fn hamiltonian_cg(
    sys: &FastSlowSystem,
    q: &DVector<f64>,
    sp: &DVector<f64>,
) -> Result<HamiltonianEval, RateError> {
    let rec = sys.reconstruct(q)?;
    hamiltonian_cg_at(sys, &rec.x, sp)
}

/// Coarse Hamiltonian evaluated at a known manifold point `x = R(q)`.
pub fn hamiltonian_cg_at(
    sys: &FastSlowSystem,
    x: &DVector<f64>,
    sp: &DVector<f64>,
) -> Result<HamiltonianEval, RateError> {
    let chart = chart_at(&sys.structure, x)?;
    let mf = sys.m_fast();
    let mut value = 0.0;
    let mut grad_p = DVector::zeros(mf);
    let mut grad_x = DVector::zeros(x.len());
    for &r in &sys.structure.slow_rows {
        let c = sys.structure.coarse_gamma_f64(r);
        let s = c.dot(sp);
        let (a, b) = intensity(&sys.network, x, r);
        value += s_star(s, a, b);
        grad_p.axpy(s_star_d1(s, a, b), &c, 1.0);
        let (ga, gb) = intensity_gradient(&sys.network, x, r);
        let sc = s.clamp(-EXP_GUARD, EXP_GUARD);
        grad_x.axpy(sc.exp_m1(), &ga, 1.0);
        grad_x.axpy((-sc).exp_m1(), &gb, 1.0);
    }
    Ok(HamiltonianEval {
        value,
        grad_p,
        // ∂_q through x = R(q): DRᵀ ∂_x.
        grad_x: chart.dr.transpose() * grad_x,
    })
}

/// `L_cg(q, v) = sup_ξ { v·ξ − H(q, ξ) }`.
pub fn lagrangian_cg(
    sys: &FastSlowSystem,
    q: &DVector<f64>,
    v: &DVector<f64>,
) -> Result<DualEvaluation, RateError> {
    let rec = sys.reconstruct(q)?;
    lagrangian_cg_at(sys, &rec.x, v, None, NewtonOptions::default())
}

pub fn lagrangian_cg_at(
    sys: &FastSlowSystem,
    x: &DVector<f64>,
    v: &DVector<f64>,
    sp0: Option<&DVector<f64>>,
    opts: NewtonOptions,
) -> Result<DualEvaluation, RateError> {
    let channels = coarse_channels(sys, x);
    check_coercive(&channels)?;
    Ok(legendre(
        &channels,
        sys.structure.coarse_slow_onb(),
        v,
        sp0,
        opts,
    ))
}

/// Plain evaluation of a channel Hamiltonian, used by consistency tests.
pub fn hamiltonian_eps_value(net: &Network, x: &DVector<f64>, p: &DVector<f64>, eps: f64) -> f64 {
    channel_h(&eps_channels(net, x, eps), p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::parse_network;
    use crate::stoich::build_structure;

    #[test]
    fn cosh_pair_basics() {
        assert_eq!(cosh_star(0.0), 0.0);
        assert_eq!(cosh_legendre(0.0), 0.0);
        for s in [0.1, 1.0, 7.0, 1e8] {
            assert_eq!(cosh_legendre(s), cosh_legendre(-s));
        }
        // Fenchel equality at s = C*'(p) = 2 sinh p.
        for p in [0.5f64, 1.0, 3.0] {
            let s = 2.0 * p.sinh();
            let lhs = cosh_legendre(s) + cosh_star(p);
            assert!((lhs - 2.0 * p * p.sinh()).abs() < 1e-12 * (1.0 + lhs));
        }
    }

    #[test]
    fn cosh_legendre_matches_grid_supremum() {
        for s in [0.3, 1.0, 4.0] {
            let best = (0..=200_000)
                .map(|i| -5.0 + 10.0 * i as f64 / 200_000.0)
                .map(|p| s * p - cosh_star(p))
                .fold(f64::NEG_INFINITY, f64::max);
            assert!((best - cosh_legendre(s)).abs() < 1e-8, "{s}");
        }
    }

    #[test]
    fn s_star_examples() {
        assert_eq!(s_star(0.0, 2.0, 3.0), 0.0);
        assert!((s_star(2f64.ln(), 1.0, 1.0) - 0.5).abs() < 1e-15);
        assert_eq!(s_star(800.0, 1.0, 1.0), f64::INFINITY);
        assert_eq!(s_star(800.0, 0.0, 2.0), -2.0);
    }

    #[test]
    fn s_cost_examples() {
        assert_eq!(s_cost(0.0, 2.5, 2.5), 0.0);
        let c1 = 0.5f64.asinh() - 2.0 * (5f64.sqrt() / 2.0 - 1.0);
        assert!((s_cost(1.0, 1.0, 1.0) - c1).abs() < 1e-15);
        assert_eq!(s_cost(1.0, 0.0, 1.0), f64::INFINITY);
        assert!((s_cost(-2.0, 0.0, 1.0) - relative_entropy(2.0, 1.0)).abs() < 1e-15);
        assert_eq!(s_cost(0.0, 0.0, 0.0), 0.0);
        assert_eq!(s_cost(0.0, 0.0, 3.0), 3.0);
    }

    #[test]
    fn relative_entropy_examples() {
        assert_eq!(relative_entropy(1.7, 1.7), 0.0);
        assert_eq!(relative_entropy(0.0, 1.7), 1.7);
        assert!((relative_entropy(2.0, 1.0) - (2.0 * 2f64.ln() - 1.0)).abs() < 1e-15);
    }

    #[test]
    fn single_reaction_zero_velocity() {
        let net = parse_network("species A B\nfast: A <-> B ; 1 1").unwrap();
        let s = build_structure(&net);
        let x = DVector::from_vec(vec![4.0, 1.0]);
        let v = DVector::zeros(2);
        let eps = 0.5;
        let dual = lagrangian_eps(&net, &s, &x, &v, eps);
        let flux = lagrangian_eps_flux(&net, &s, &x, &v, eps);
        let expect = ((4.0f64 / eps).sqrt() - (1.0f64 / eps).sqrt()).powi(2);
        assert!((dual.value - expect).abs() < 1e-12);
        assert!((flux.value - dual.value).abs() < 1e-9);
    }

    #[test]
    fn velocity_off_gamma_is_infinite() {
        let net = parse_network("species A B\nslow: A <-> B ; 1 2").unwrap();
        let s = build_structure(&net);
        let x = DVector::from_vec(vec![1.0, 1.0]);
        let eval = lagrangian_eps(&net, &s, &x, &DVector::from_vec(vec![1.0, 1.0]), 1.0);
        assert_eq!(eval.value, f64::INFINITY);
    }
}
