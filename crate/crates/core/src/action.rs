//! Discrete action functionals and least-action paths.
//!
//! Paths live on a uniform grid and are evaluated with the midpoint rule:
//! step `k` costs `Δt·L((x_k + x_{k+1})/2, (x_{k+1} − x_k)/Δt)`. Minimization
//! runs over the free knots `x_0 … x_{N−1}` with `x_N` pinned. Knots are
//! parametrized in the affine space `x_N + Γ` (or `q_N + span{Q_fast γ_r}` in
//! coarse coordinates) so every velocity is admissible by construction.

use std::cell::RefCell;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use thiserror::Error;

use crate::domain::{BoxDomain, Path, PathKind};
use crate::equilibria::{chart_at, is_fast_equilibrium, EquilibriumError, FastSlowSystem};
use crate::kinetics::{self, slow_rhs};
use crate::ode::{self, Method, StepControl};
use crate::optim::{self, LbfgsOptions};
use crate::rate_functions::{
    self, hamiltonian_cg_at, hamiltonian_eps, lagrangian_cg_at, lagrangian_eps_from, s_cost,
    NewtonOptions, RateError,
};
use crate::stoich::StoichStructure;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ActionError {
    #[error("action: {0}")]
    Invalid(String),
    #[error("action: path states must be strictly positive (step {step})")]
    NotPositive { step: usize },
    #[error("action: Lagrangian did not converge at step {step}")]
    Lagrangian { step: usize },
    #[error("action: every start failed")]
    AllStartsFailed,
    #[error(transparent)]
    Equilibrium(#[from] EquilibriumError),
    #[error(transparent)]
    Rate(#[from] RateError),
}

/// Initial cost `u0`.
#[derive(Debug, Clone)]
pub enum InitialCost {
    Constant(f64),
    /// `offset + weight/2·‖x − center‖²`.
    Quadratic {
        center: DVector<f64>,
        weight: f64,
        offset: f64,
    },
    /// `offset + weight/2·‖Q_fast x − center‖²`, constant along fast directions.
    CoarseQuadratic {
        q_fast: DMatrix<f64>,
        center: DVector<f64>,
        weight: f64,
        offset: f64,
    },
}

impl InitialCost {
    pub fn coarse_quadratic(
        structure: &StoichStructure,
        center: DVector<f64>,
        weight: f64,
    ) -> Self {
        InitialCost::CoarseQuadratic {
            q_fast: structure.q_fast_f64().clone(),
            center,
            weight,
            offset: 0.0,
        }
    }

    pub fn with_offset(self, extra: f64) -> Self {
        match self {
            InitialCost::Constant(c) => InitialCost::Constant(c + extra),
            InitialCost::Quadratic {
                center,
                weight,
                offset,
            } => InitialCost::Quadratic {
                center,
                weight,
                offset: offset + extra,
            },
            InitialCost::CoarseQuadratic {
                q_fast,
                center,
                weight,
                offset,
            } => InitialCost::CoarseQuadratic {
                q_fast,
                center,
                weight,
                offset: offset + extra,
            },
        }
    }

    pub fn value(&self, x: &DVector<f64>) -> f64 {
        match self {
            InitialCost::Constant(c) => *c,
            InitialCost::Quadratic {
                center,
                weight,
                offset,
            } => offset + 0.5 * weight * (x - center).norm_squared(),
            InitialCost::CoarseQuadratic {
                q_fast,
                center,
                weight,
                offset,
            } => offset + 0.5 * weight * (q_fast * x - center).norm_squared(),
        }
    }

    pub fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        match self {
            InitialCost::Constant(_) => DVector::zeros(x.len()),
            InitialCost::Quadratic { center, weight, .. } => (x - center) * *weight,
            InitialCost::CoarseQuadratic {
                q_fast,
                center,
                weight,
                ..
            } => q_fast.transpose() * (q_fast * x - center) * *weight,
        }
    }

    /// `max_r fast |γ_r·∇u0(x)|`; zero for well-prepared data.
    pub fn fast_gradient(&self, structure: &StoichStructure, x: &DVector<f64>) -> f64 {
        let g = self.gradient(x);
        structure
            .fast_rows
            .iter()
            .map(|&r| structure.gamma_f64(r).dot(&g).abs())
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone)]
pub struct StartOutcome {
    pub label: String,
    pub value: f64,
    pub converged: bool,
    pub iterations: usize,
}

#[derive(Debug, Clone)]
pub struct ActionResult {
    pub value: f64,
    pub initial_cost: f64,
    pub path: Path,
    pub per_step_cost: Vec<f64>,
    /// Share of the running cost carried by the `1/ε`-scaled fast terms.
    pub fast_cost_share: f64,
    pub converged: bool,
    pub iterations: usize,
    /// Final reduced-gradient norm of the optimizer (zero for plain evaluations).
    pub grad_norm: f64,
    pub starts: Vec<StartOutcome>,
}

fn midpoint(path: &Path, k: usize) -> (f64, DVector<f64>, DVector<f64>) {
    let dt = path.times[k + 1] - path.times[k];
    let mid = (&path.states[k] + &path.states[k + 1]) * 0.5;
    let vel = (&path.states[k + 1] - &path.states[k]) / dt;
    (dt, mid, vel)
}

fn infinite_result(path: &Path, initial_cost: f64) -> ActionResult {
    ActionResult {
        value: f64::INFINITY,
        initial_cost,
        path: path.clone(),
        per_step_cost: vec![f64::INFINITY; path.steps()],
        fast_cost_share: 0.0,
        converged: true,
        iterations: 0,
        grad_norm: 0.0,
        starts: Vec::new(),
    }
}

/// `u0(x_0) + Σ Δt·L_ε(mid, vel)` on a full path.
pub fn action_eps(
    sys: &FastSlowSystem,
    path: &Path,
    eps: f64,
    u0: &InitialCost,
) -> Result<ActionResult, ActionError> {
    if path.kind != PathKind::Full {
        return Err(ActionError::Invalid("action_eps needs a full path".into()));
    }
    if let Some(step) = path.states.iter().position(|x| x.iter().any(|&v| v <= 0.0)) {
        return Err(ActionError::NotPositive { step });
    }
    let net = &sys.network;
    let initial_cost = u0.value(&path.states[0]);
    let mut per_step = Vec::with_capacity(path.steps());
    let mut fast_total = 0.0;
    let mut p_prev: Option<DVector<f64>> = None;
    for k in 0..path.steps() {
        let (dt, mid, vel) = midpoint(path, k);
        let eval = lagrangian_eps_from(
            net,
            &sys.structure,
            &mid,
            &vel,
            eps,
            p_prev.as_ref(),
            NewtonOptions::default(),
        );
        if eval.value.is_infinite() {
            return Ok(infinite_result(path, initial_cost));
        }
        if !eval.converged {
            return Err(ActionError::Lagrangian { step: k });
        }
        for &r in &sys.structure.fast_rows {
            let g = sys.structure.gamma_f64(r);
            let (a, b) = kinetics::intensity(net, &mid, r);
            let scale = net.rate_scale(r, eps);
            let s = g
                .dot(&eval.optimizer)
                .clamp(-rate_functions::EXP_GUARD, rate_functions::EXP_GUARD);
            let flux = scale * (a * s.exp() - b * (-s).exp());
            fast_total += dt * s_cost(flux, scale * a, scale * b);
        }
        per_step.push(dt * eval.value);
        p_prev = Some(eval.optimizer);
    }
    let running: f64 = per_step.iter().sum();
    Ok(ActionResult {
        value: initial_cost + running,
        initial_cost,
        path: path.clone(),
        per_step_cost: per_step,
        fast_cost_share: if running > 0.0 {
            (fast_total / running).clamp(0.0, 1.0)
        } else {
            0.0
        },
        converged: true,
        iterations: 0,
        grad_norm: 0.0,
        starts: Vec::new(),
    })
}

/// Effective action. Full paths must lie on the fast manifold at every knot;
/// each step is evaluated at `R(Q_fast·mid)` with velocity `Q_fast·vel`, which
/// coincides with the coarse evaluation of the image path.
pub fn action_eff(
    sys: &FastSlowSystem,
    path: &Path,
    u0: &InitialCost,
) -> Result<ActionResult, ActionError> {
    let coarse = match path.kind {
        PathKind::Coarse => path.clone(),
        PathKind::Full => {
            for x in &path.states {
                if x.iter().any(|&v| v <= 0.0) || !is_fast_equilibrium(&sys.network, x, None) {
                    let ic = u0.value(&path.states[0]);
                    return Ok(infinite_result(path, ic));
                }
            }
            Path {
                times: path.times.clone(),
                states: path
                    .states
                    .iter()
                    .map(|x| sys.structure.q_fast_apply(x))
                    .collect(),
                kind: PathKind::Coarse,
            }
        }
    };
    let x0 = sys.reconstruct(&coarse.states[0])?.x;
    let initial_cost = u0.value(&x0);
    let mut per_step = Vec::with_capacity(coarse.steps());
    for k in 0..coarse.steps() {
        let (dt, mid, vel) = midpoint(&coarse, k);
        let xm = sys.reconstruct(&mid)?.x;
        let eval = lagrangian_cg_at(sys, &xm, &vel, None, NewtonOptions::default())?;
        if eval.value.is_infinite() {
            return Ok(infinite_result(path, initial_cost));
        }
        if !eval.converged {
            return Err(ActionError::Lagrangian { step: k });
        }
        per_step.push(dt * eval.value);
    }
    Ok(ActionResult {
        value: initial_cost + per_step.iter().sum::<f64>(),
        initial_cost,
        path: path.clone(),
        per_step_cost: per_step,
        fast_cost_share: 0.0,
        converged: true,
        iterations: 0,
        grad_norm: 0.0,
        starts: Vec::new(),
    })
}

#[derive(Debug, Clone)]
pub struct ActionOptions {
    pub n_steps: usize,
    pub domain: BoxDomain,
    pub lbfgs: LbfgsOptions,
    pub constant_start: bool,
    pub backward_start: bool,
    pub line_start: bool,
    /// Additional full-space starting paths (resampled to `n_steps`).
    pub extra_starts: Vec<Path>,
}

impl ActionOptions {
    pub fn new(n_steps: usize, domain: BoxDomain) -> Self {
        ActionOptions {
            n_steps,
            domain,
            lbfgs: LbfgsOptions::default(),
            constant_start: true,
            backward_start: true,
            line_start: true,
            extra_starts: Vec::new(),
        }
    }
}

/// Free-knot parametrization `z_j = end + Bᵀ y_j`, `j < N`.
struct Knots {
    end: DVector<f64>,
    basis: DMatrix<f64>,
    n: usize,
}

impl Knots {
    fn dim(&self) -> usize {
        self.basis.nrows() * self.n
    }

    fn states(&self, y: &DVector<f64>) -> Vec<DVector<f64>> {
        let k = self.basis.nrows();
        let mut out: Vec<DVector<f64>> = (0..self.n)
            .map(|j| &self.end + self.basis.tr_mul(&y.rows(j * k, k).into_owned()))
            .collect();
        out.push(self.end.clone());
        out
    }

    fn coords(&self, states: &[DVector<f64>]) -> DVector<f64> {
        let k = self.basis.nrows();
        let mut y = DVector::zeros(self.dim());
        for j in 0..self.n {
            y.rows_mut(j * k, k)
                .copy_from(&(&self.basis * (&states[j] - &self.end)));
        }
        y
    }

    fn reduce(&self, grads: &[DVector<f64>]) -> DVector<f64> {
        let k = self.basis.nrows();
        let mut g = DVector::zeros(self.dim());
        for j in 0..self.n {
            g.rows_mut(j * k, k).copy_from(&(&self.basis * &grads[j]));
        }
        g
    }
}

fn infeasible(dim: usize) -> (f64, DVector<f64>) {
    (f64::INFINITY, DVector::zeros(dim))
}

/// Objective and envelope gradient of the discrete ε-action.
fn eps_objective(
    sys: &FastSlowSystem,
    eps: f64,
    u0: &InitialCost,
    domain: &BoxDomain,
    knots: &Knots,
    dt: f64,
    y: &DVector<f64>,
    cache: &mut [Option<DVector<f64>>],
) -> (f64, DVector<f64>) {
    let xs = knots.states(y);
    if xs
        .iter()
        .any(|x| !domain.contains(x) || x.iter().any(|&v| v <= 0.0))
    {
        return infeasible(knots.dim());
    }
    let n = knots.n;
    let mut grads = vec![DVector::zeros(xs[0].len()); n + 1];
    let mut f = u0.value(&xs[0]);
    grads[0] += u0.gradient(&xs[0]);
    for k in 0..n {
        let mid = (&xs[k] + &xs[k + 1]) * 0.5;
        let vel = (&xs[k + 1] - &xs[k]) / dt;
        let eval = lagrangian_eps_from(
            &sys.network,
            &sys.structure,
            &mid,
            &vel,
            eps,
            cache[k].as_ref(),
            NewtonOptions::default(),
        );
        if !eval.value.is_finite() || !eval.converged {
            return infeasible(knots.dim());
        }
        f += dt * eval.value;
        let p = eval.optimizer;
        let dldx = -hamiltonian_eps(&sys.network, &mid, &p, eps).grad_x;
        grads[k] += &dldx * (0.5 * dt) - &p;
        grads[k + 1] += &dldx * (0.5 * dt) + &p;
        cache[k] = Some(p);
    }
    (f, knots.reduce(&grads))
}

/// Objective and envelope gradient of the discrete coarse action.
#[allow(clippy::too_many_arguments)]
fn coarse_objective(
    sys: &FastSlowSystem,
    u0: &InitialCost,
    domain: &BoxDomain,
    knots: &Knots,
    dt: f64,
    y: &DVector<f64>,
    sp_cache: &mut [Option<DVector<f64>>],
    lam_cache: &mut [DVector<f64>],
) -> (f64, DVector<f64>) {
    let qs = knots.states(y);
    let n = knots.n;
    let mut recon = |q: &DVector<f64>, slot: usize| -> Option<DVector<f64>> {
        let rec = sys.reconstruct_from(q, &lam_cache[slot]).ok()?;
        lam_cache[slot] = rec.dual.clone();
        domain.contains(&rec.x).then_some(rec.x)
    };
    let Some(x0) = recon(&qs[0], 0) else {
        return infeasible(knots.dim());
    };
    let Ok(chart0) = chart_at(&sys.structure, &x0) else {
        return infeasible(knots.dim());
    };
    let mut grads = vec![DVector::zeros(qs[0].len()); n + 1];
    let mut f = u0.value(&x0);
    grads[0] += chart0.dr.transpose() * u0.gradient(&x0);
    for k in 0..n {
        let mid = (&qs[k] + &qs[k + 1]) * 0.5;
        let vel = (&qs[k + 1] - &qs[k]) / dt;
        let Some(xm) = recon(&mid, k + 1) else {
            return infeasible(knots.dim());
        };
        let Ok(eval) = lagrangian_cg_at(
            sys,
            &xm,
            &vel,
            sp_cache[k].as_ref(),
            NewtonOptions::default(),
        ) else {
            return infeasible(knots.dim());
        };
        if !eval.value.is_finite() || !eval.converged {
            return infeasible(knots.dim());
        }
        f += dt * eval.value;
        let sp = eval.optimizer;
        let Ok(h) = hamiltonian_cg_at(sys, &xm, &sp) else {
            return infeasible(knots.dim());
        };
        let dldq = -h.grad_x;
        grads[k] += &dldq * (0.5 * dt) - &sp;
        grads[k + 1] += &dldq * (0.5 * dt) + &sp;
        sp_cache[k] = Some(sp);
    }
    (f, knots.reduce(&grads))
}

/// Rough minimizer of `u0` over `end + span(basisᵀ)`, measured through `map`.
fn argmin_offset(
    u0: &InitialCost,
    map: &DMatrix<f64>,
    end: &DVector<f64>,
    basis: &DMatrix<f64>,
) -> Option<DVector<f64>> {
    let (target, m) = match u0 {
        InitialCost::Constant(_) => return None,
        InitialCost::Quadratic { center, .. } => (map * center, map.clone()),
        InitialCost::CoarseQuadratic { q_fast, center, .. } => {
            if q_fast.ncols() == map.ncols() {
                (center.clone(), q_fast.clone())
            } else {
                (
                    center.clone(),
                    DMatrix::identity(center.len(), center.len()),
                )
            }
        }
    };
    let a = &m * basis.transpose();
    let rhs = target - &m * end;
    let y = a.svd(true, true).solve(&rhs, 1e-12).ok()?;
    Some(basis.transpose() * y)
}

fn line_path(start: &DVector<f64>, end: &DVector<f64>, n: usize) -> Vec<DVector<f64>> {
    (0..=n)
        .map(|j| {
            let w = j as f64 / n as f64;
            start * (1.0 - w) + end * w
        })
        .collect()
}

/// Integrates `dz/ds = −f(z)` from the endpoint and returns knots ordered in
/// forward time. An explicit method is used: the reversed flow is unstable in
/// fast directions and implicit stages amplify that near their poles.
fn backward_knots(
    f: &dyn Fn(&DVector<f64>) -> DVector<f64>,
    end: &DVector<f64>,
    t_final: f64,
    n: usize,
) -> Option<Vec<DVector<f64>>> {
    let rhs = |_t: f64, z: &DVector<f64>| -f(z);
    let outputs: Vec<f64> = (0..=n).map(|k| t_final * k as f64 / n as f64).collect();
    let ctrl = StepControl {
        rtol: 1e-8,
        atol: 1e-10,
        max_steps: 200_000,
        method: Method::Explicit,
        output_times: Some(outputs),
        ..Default::default()
    };
    let traj = ode::integrate(&rhs, None, end, 0.0, t_final, &ctrl, None).ok()?;
    if traj.states.len() != n + 1 || traj.states.iter().any(|z| z.iter().any(|v| !v.is_finite())) {
        return None;
    }
    Some(traj.states.into_iter().rev().collect())
}

/// Backward effective flow in fast-conserved coordinates.
fn backward_coarse_knots(
    sys: &FastSlowSystem,
    q_end: &DVector<f64>,
    t_final: f64,
    n: usize,
) -> Option<Vec<DVector<f64>>> {
    let warm = RefCell::new(DVector::zeros(sys.m_fast()));
    let f = |q: &DVector<f64>| {
        let lam0 = warm.borrow().clone();
        match sys.reconstruct_from(q, &lam0) {
            Ok(rec) => {
                let v = sys.structure.q_fast_apply(&slow_rhs(&sys.network, &rec.x));
                *warm.borrow_mut() = rec.dual;
                v
            }
            Err(_) => DVector::from_element(q.len(), f64::NAN),
        }
    };
    backward_knots(&f, q_end, t_final, n)
}

struct Start {
    label: String,
    knots: Vec<DVector<f64>>,
}

fn run_starts<F>(
    starts: Vec<Start>,
    objective: F,
    knots: &Knots,
    opts: &LbfgsOptions,
) -> Vec<(String, optim::LbfgsResult)>
where
    F: Fn(&DVector<f64>, &RefCell<Vec<Option<DVector<f64>>>>) -> (f64, DVector<f64>) + Sync,
{
    starts
        .into_par_iter()
        .filter_map(|s| {
            let cache = RefCell::new(vec![None; knots.n]);
            let y0 = knots.coords(&s.knots);
            let (f0, _) = objective(&y0, &cache);
            if !f0.is_finite() {
                return None;
            }
            let res = optim::minimize(|y| objective(y, &cache), y0, *opts);
            Some((s.label, res))
        })
        .collect()
}

fn check_common(t_final: f64, opts: &ActionOptions) -> Result<(), ActionError> {
    if opts.n_steps < 4 {
        return Err(ActionError::Invalid(format!(
            "need at least 4 steps, got {}",
            opts.n_steps
        )));
    }
    if !(t_final > 0.0) {
        return Err(ActionError::Invalid("final time must be positive".into()));
    }
    Ok(())
}

fn pick_best(
    runs: Vec<(String, optim::LbfgsResult)>,
) -> Result<(optim::LbfgsResult, Vec<StartOutcome>), ActionError> {
    let outcomes: Vec<StartOutcome> = runs
        .iter()
        .map(|(label, r)| StartOutcome {
            label: label.clone(),
            value: r.value,
            converged: r.converged,
            iterations: r.iterations,
        })
        .collect();
    let best = runs
        .into_iter()
        .map(|(_, r)| r)
        .filter(|r| r.value.is_finite())
        .min_by(|a, b| a.value.partial_cmp(&b.value).unwrap())
        .ok_or(ActionError::AllStartsFailed)?;
    Ok((best, outcomes))
}

/// `u^ε(x_end, T)` by least action over discrete paths in the domain.
pub fn minimize_action_eps(
    sys: &FastSlowSystem,
    x_end: &DVector<f64>,
    t_final: f64,
    eps: f64,
    u0: &InitialCost,
    opts: &ActionOptions,
) -> Result<ActionResult, ActionError> {
    check_common(t_final, opts)?;
    if !opts.domain.contains(x_end) {
        return Err(ActionError::Invalid("endpoint outside the domain".into()));
    }
    let n = opts.n_steps;
    let dt = t_final / n as f64;
    let knots = Knots {
        end: x_end.clone(),
        basis: sys.structure.gamma_onb().clone(),
        n,
    };
    let net = &sys.network;

    let mut starts = Vec::new();
    if opts.constant_start {
        starts.push(Start {
            label: "constant".into(),
            knots: vec![x_end.clone(); n + 1],
        });
    }
    if opts.backward_start {
        let f = |x: &DVector<f64>| kinetics::rre_rhs(net, x, eps);
        if let Some(ks) = backward_knots(&f, x_end, t_final, n) {
            starts.push(Start {
                label: "backward".into(),
                knots: ks,
            });
        }
        if is_fast_equilibrium(net, x_end, None) {
            let q_end = sys.structure.q_fast_apply(x_end);
            let lifted = backward_coarse_knots(sys, &q_end, t_final, n).and_then(|qs| {
                qs.iter()
                    .map(|q| sys.reconstruct(q).ok().map(|r| r.x))
                    .collect::<Option<Vec<_>>>()
            });
            if let Some(mut ks) = lifted {
                ks[n] = x_end.clone();
                starts.push(Start {
                    label: "backward-effective".into(),
                    knots: ks,
                });
            }
        }
    }
    if opts.line_start {
        let id = DMatrix::identity(x_end.len(), x_end.len());
        if let Some(offset) = argmin_offset(u0, &id, x_end, &knots.basis) {
            let mut w = 1.0;
            while w > 1e-3 {
                let x0 = x_end + &offset * w;
                if opts.domain.contains(&x0) {
                    starts.push(Start {
                        label: "line".into(),
                        knots: line_path(&x0, x_end, n),
                    });
                    break;
                }
                w *= 0.5;
            }
        }
    }
    for (i, p) in opts.extra_starts.iter().enumerate() {
        if p.kind == PathKind::Full {
            starts.push(Start {
                label: format!("extra{i}"),
                knots: p.resample(n).states,
            });
        }
    }

    let objective = |y: &DVector<f64>, cache: &RefCell<Vec<Option<DVector<f64>>>>| {
        eps_objective(
            sys,
            eps,
            u0,
            &opts.domain,
            &knots,
            dt,
            y,
            &mut cache.borrow_mut(),
        )
    };
    let (best, outcomes) = pick_best(run_starts(starts, objective, &knots, &opts.lbfgs))?;
    let path = Path::uniform(t_final, knots.states(&best.x), PathKind::Full);
    let mut result = action_eps(sys, &path, eps, u0)?;
    result.converged = best.converged;
    result.iterations = best.iterations;
    result.grad_norm = best.grad_norm;
    result.starts = outcomes;
    Ok(result)
}

/// `u*(x_end, T)`: least action in fast-conserved coordinates with cost
/// `L_cg` and initial cost `u0(R(q_0))`. The returned path is the
/// reconstructed full path `R(q_k)`.
pub fn minimize_action_eff(
    sys: &FastSlowSystem,
    x_end: &DVector<f64>,
    t_final: f64,
    u0: &InitialCost,
    opts: &ActionOptions,
) -> Result<ActionResult, ActionError> {
    check_common(t_final, opts)?;
    if !opts.domain.contains(x_end) || !is_fast_equilibrium(&sys.network, x_end, None) {
        return Err(ActionError::Invalid(
            "endpoint must lie on the slow manifold inside the domain".into(),
        ));
    }
    let n = opts.n_steps;
    let dt = t_final / n as f64;
    let q_end = sys.structure.q_fast_apply(x_end);
    let knots = Knots {
        end: q_end.clone(),
        basis: sys.structure.coarse_slow_onb().clone(),
        n,
    };

    let mut starts = Vec::new();
    if opts.constant_start {
        starts.push(Start {
            label: "constant".into(),
            knots: vec![q_end.clone(); n + 1],
        });
    }
    if opts.backward_start {
        if let Some(ks) = backward_coarse_knots(sys, &q_end, t_final, n) {
            starts.push(Start {
                label: "backward".into(),
                knots: ks,
            });
        }
    }
    if opts.line_start {
        let qf = sys.structure.q_fast_f64();
        let map = DMatrix::identity(q_end.len(), q_end.len());
        let projected = match u0 {
            InitialCost::Quadratic {
                center,
                weight,
                offset,
            } => Some(InitialCost::Quadratic {
                center: qf * center,
                weight: *weight,
                offset: *offset,
            }),
            other => Some(other.clone()),
        };
        if let Some(offset) = projected.and_then(|c| argmin_offset(&c, &map, &q_end, &knots.basis))
        {
            let mut w = 1.0;
            while w > 1e-3 {
                let q0 = &q_end + &offset * w;
                if sys
                    .reconstruct(&q0)
                    .is_ok_and(|r| opts.domain.contains(&r.x))
                {
                    starts.push(Start {
                        label: "line".into(),
                        knots: line_path(&q0, &q_end, n),
                    });
                    break;
                }
                w *= 0.5;
            }
        }
    }
    for (i, p) in opts.extra_starts.iter().enumerate() {
        let resampled = p.resample(n);
        let ks = match p.kind {
            PathKind::Coarse => resampled.states,
            PathKind::Full => resampled
                .states
                .iter()
                .map(|x| sys.structure.q_fast_apply(x))
                .collect(),
        };
        starts.push(Start {
            label: format!("extra{i}"),
            knots: ks,
        });
    }

    let objective = |y: &DVector<f64>, cache: &RefCell<Vec<Option<DVector<f64>>>>| {
        thread_local! {
            static LAMBDA: RefCell<Vec<DVector<f64>>> = const { RefCell::new(Vec::new()) };
        }
        LAMBDA.with(|lam| {
            let mut lam = lam.borrow_mut();
            if lam.len() != n + 1 || lam.first().is_some_and(|v| v.len() != sys.m_fast()) {
                *lam = vec![DVector::zeros(sys.m_fast()); n + 1];
            }
            coarse_objective(
                sys,
                u0,
                &opts.domain,
                &knots,
                dt,
                y,
                &mut cache.borrow_mut(),
                &mut lam,
            )
        })
    };
    let (best, outcomes) = pick_best(run_starts(starts, objective, &knots, &opts.lbfgs))?;
    let coarse = Path::uniform(t_final, knots.states(&best.x), PathKind::Coarse);
    let mut result = action_eff(sys, &coarse, u0)?;
    let full: Result<Vec<DVector<f64>>, EquilibriumError> = coarse
        .states
        .iter()
        .map(|q| sys.reconstruct(q).map(|r| r.x))
        .collect();
    result.path = Path::uniform(t_final, full?, PathKind::Full);
    result.converged = best.converged;
    result.iterations = best.iterations;
    result.grad_norm = best.grad_norm;
    result.starts = outcomes;
    Ok(result)
}

#[derive(Debug, Clone)]
pub struct SweepRow {
    pub eps: f64,
    pub value: f64,
    pub gap: f64,
    pub fast_cost_share: f64,
    pub iters: usize,
    pub converged: bool,
    /// `action_eps` of the effective minimizer, and its excess over `u*`.
    pub recovery_value: f64,
    pub recovery_gap: f64,
}

#[derive(Debug, Clone)]
pub struct SweepTable {
    pub u_star: f64,
    pub u_star_converged: bool,
    pub effective_path: Path,
    pub rows: Vec<Result<SweepRow, ActionError>>,
}

/// Compares `u^ε(x_end, T)` with `u*(x_end, T)` over `eps_list`. Every ε-run
/// also starts from the effective minimizer.
pub fn mosco_sweep(
    sys: &FastSlowSystem,
    x_end: &DVector<f64>,
    t_final: f64,
    u0: &InitialCost,
    eps_list: &[f64],
    opts: &ActionOptions,
) -> Result<SweepTable, ActionError> {
    let probe = u0.fast_gradient(&sys.structure, x_end);
    if probe > 1e-10 * (1.0 + u0.gradient(x_end).norm()) {
        return Err(ActionError::Invalid(format!(
            "initial cost is not constant along fast directions (|γ·∇u0| = {probe:e})"
        )));
    }
    let eff = minimize_action_eff(sys, x_end, t_final, u0, opts)?;
    let mut eps_opts = opts.clone();
    eps_opts.extra_starts.push(eff.path.clone());
    let rows = eps_list
        .par_iter()
        .map(|&eps| {
            let res = minimize_action_eps(sys, x_end, t_final, eps, u0, &eps_opts)?;
            let recovery = action_eps(sys, &eff.path, eps, u0)?;
            Ok(SweepRow {
                eps,
                value: res.value,
                gap: (res.value - eff.value).abs(),
                fast_cost_share: res.fast_cost_share,
                iters: res.iterations,
                converged: res.converged,
                recovery_value: recovery.value,
                recovery_gap: recovery.value - eff.value,
            })
        })
        .collect();
    Ok(SweepTable {
        u_star: eff.value,
        u_star_converged: eff.converged,
        effective_path: eff.path,
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::parse_network;

    fn chain() -> FastSlowSystem {
        FastSlowSystem::new(
            parse_network("species A B C\nfast: A <-> B ; 1 1\nslow: B <-> C ; 2 1").unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn constant_path_off_manifold_costs_fast_defect() {
        let sys = chain();
        let x = DVector::from_vec(vec![4.0, 1.0, 1.0]);
        let t = 0.5;
        for eps in [0.1, 0.01] {
            let path = Path::uniform(t, vec![x.clone(); 5], PathKind::Full);
            let res = action_eps(&sys, &path, eps, &InitialCost::Constant(0.0)).unwrap();
            // Constant path: fast part S(0|ψ/ε) = (√ψ⁺ − √ψ⁻)²/ε; slow part S(0|2, 1) is ε-independent.
            let slow = (2f64.sqrt() - 1.0).powi(2);
            let expect = t * (1.0 / eps + slow);
            assert!(
                (res.value - expect).abs() < 1e-9 * expect,
                "{} vs {expect}",
                res.value
            );
        }
    }

    #[test]
    fn off_gamma_step_is_infinite() {
        let sys = chain();
        let a = DVector::from_vec(vec![1.0, 1.0, 1.0]);
        let b = DVector::from_vec(vec![1.1, 1.0, 1.0]);
        let path = Path::uniform(
            1.0,
            vec![a.clone(), b, a.clone(), a.clone(), a],
            PathKind::Full,
        );
        let res = action_eps(&sys, &path, 0.1, &InitialCost::Constant(0.0)).unwrap();
        assert_eq!(res.value, f64::INFINITY);
    }

    #[test]
    fn full_and_coarse_effective_actions_agree() {
        let sys = chain();
        let qs: Vec<DVector<f64>> = (0..=6)
            .map(|k| DVector::from_vec(vec![3.0 + 0.0 * k as f64, 1.0 + 0.1 * k as f64]))
            .collect();
        let xs: Vec<DVector<f64>> = qs.iter().map(|q| sys.reconstruct(q).unwrap().x).collect();
        let u0 =
            InitialCost::coarse_quadratic(&sys.structure, DVector::from_vec(vec![3.0, 1.2]), 1.0);
        let coarse = action_eff(&sys, &Path::uniform(1.0, qs, PathKind::Coarse), &u0).unwrap();
        let full = action_eff(&sys, &Path::uniform(1.0, xs.clone(), PathKind::Full), &u0).unwrap();
        assert!((coarse.value - full.value).abs() < 1e-9);

        let mut off = xs;
        off[2][0] += 0.1;
        off[2][1] -= 0.1;
        let res = action_eff(&sys, &Path::uniform(1.0, off, PathKind::Full), &u0).unwrap();
        assert_eq!(res.value, f64::INFINITY);
    }
}
