use fastslow::action::{
    action_eff, action_eps, minimize_action_eff, minimize_action_eps, ActionOptions, InitialCost,
};
use fastslow::domain::{BoxDomain, Path, PathKind};
use fastslow::kinetics::{effective_rhs_coarse, integrate_rre};
use fastslow::ode::StepControl;
use fastslow::{networks, FastSlowSystem};
use nalgebra::DVector;

fn chain() -> FastSlowSystem {
    FastSlowSystem::new(networks::by_name("chain").unwrap()).unwrap()
}

fn options(n: usize) -> ActionOptions {
    ActionOptions::new(n, BoxDomain::uniform(3, 0.05, 5.0))
}

fn check_bookkeeping(res: &fastslow::action::ActionResult, x_end: &DVector<f64>) {
    let sum: f64 = res.per_step_cost.iter().sum();
    assert!((res.value - res.initial_cost - sum).abs() < 1e-12 * (1.0 + res.value.abs()));
    assert!((0.0..=1.0).contains(&res.fast_cost_share));
    assert_eq!(res.path.states.last().unwrap(), x_end);
}

#[test]
fn constant_initial_cost_is_reached_for_free() {
    // Near equilibrium the backward flow stays in the box, so a zero-cost path exists.
    let sys = FastSlowSystem::new(networks::by_name("slow_pair").unwrap()).unwrap();
    let x_end = DVector::from_vec(vec![1.3, 0.7]);
    let u0 = InitialCost::Constant(0.4);
    let opts = ActionOptions::new(12, BoxDomain::uniform(2, 0.05, 5.0));
    let res = minimize_action_eps(&sys, &x_end, 0.5, 1.0, &u0, &opts).unwrap();
    assert!(
        res.value >= 0.4 - 1e-12 && res.value - 0.4 < 1e-8,
        "{} {:?}",
        res.value,
        res.starts
    );
    check_bookkeeping(&res, &x_end);
}

#[test]
fn value_is_monotone_in_the_initial_cost() {
    let sys = chain();
    let x_end = sys
        .reconstruct(&DVector::from_vec(vec![2.5, 1.2]))
        .unwrap()
        .x;
    let center = DVector::from_vec(vec![3.0, 1.6]);
    let low = InitialCost::coarse_quadratic(&sys.structure, center.clone(), 1.0);
    let high = InitialCost::coarse_quadratic(&sys.structure, center, 2.0).with_offset(0.05);
    let a = minimize_action_eps(&sys, &x_end, 0.5, 0.1, &low, &options(12)).unwrap();
    let b = minimize_action_eps(&sys, &x_end, 0.5, 0.1, &high, &options(12)).unwrap();
    assert!(a.value <= b.value + 1e-10, "{} > {}", a.value, b.value);
    check_bookkeeping(&a, &x_end);
    check_bookkeeping(&b, &x_end);
}

#[test]
fn forward_relaxation_path_has_vanishing_cost() {
    let sys = chain();
    let x0 = DVector::from_vec(vec![1.5, 0.4, 0.6]);
    let mut costs = Vec::new();
    for n in [10, 20, 40] {
        let times: Vec<f64> = (0..=n).map(|k| k as f64 / n as f64).collect();
        let ctrl = StepControl {
            rtol: 1e-11,
            atol: 1e-13,
            output_times: Some(times),
            ..Default::default()
        };
        let traj = integrate_rre(&sys.network, &x0, 0.5, 1.0, &ctrl).unwrap();
        let path = Path::uniform(1.0, traj.states, PathKind::Full);
        let res = action_eps(&sys, &path, 0.5, &InitialCost::Constant(0.0)).unwrap();
        costs.push(res.value);
    }
    assert!(
        costs[0] > costs[1] && costs[1] > costs[2] && costs[2] < 1e-4,
        "{costs:?}"
    );
}

#[test]
fn coarse_relaxation_path_costs_nothing() {
    let sys = chain();
    let n = 40;
    let mut q = DVector::from_vec(vec![3.0, 0.5]);
    let mut qs = vec![q.clone()];
    let dt = 1.0 / n as f64;
    for _ in 0..n {
        // Implicit midpoint by fixed-point iteration makes each step exactly zero-cost.
        let mut next = &q + effective_rhs_coarse(&sys, &q).unwrap() * dt;
        for _ in 0..50 {
            let mid = (&q + &next) * 0.5;
            next = &q + effective_rhs_coarse(&sys, &mid).unwrap() * dt;
        }
        q = next;
        qs.push(q.clone());
    }
    let res = action_eff(
        &sys,
        &Path::uniform(1.0, qs, PathKind::Coarse),
        &InitialCost::Constant(0.2),
    )
    .unwrap();
    assert!((res.value - 0.2).abs() < 1e-10, "{}", res.value);
}

#[test]
fn effective_value_does_not_depend_on_the_fast_basis() {
    let sys = chain();
    let alt = sys.with_structure(
        sys.structure
            .with_fast_extension(vec![vec![1, 1, 1], vec![1, 1, 2]])
            .unwrap(),
    );
    let x_end = sys
        .reconstruct(&DVector::from_vec(vec![3.0, 1.1]))
        .unwrap()
        .x;
    let u0 = InitialCost::coarse_quadratic(&sys.structure, DVector::from_vec(vec![3.0, 1.6]), 1.0);
    let a = minimize_action_eff(&sys, &x_end, 0.5, &u0, &options(16)).unwrap();
    let b = minimize_action_eff(&alt, &x_end, 0.5, &u0, &options(16)).unwrap();
    assert!(
        (a.value - b.value).abs() < 1e-8,
        "{} vs {}",
        a.value,
        b.value
    );
    assert!(a.path.states.last().unwrap() == &x_end);
}

#[test]
fn refinement_changes_shrink() {
    let sys = chain();
    let x_end = sys
        .reconstruct(&DVector::from_vec(vec![3.0, 1.1]))
        .unwrap()
        .x;
    let u0 = InitialCost::coarse_quadratic(&sys.structure, DVector::from_vec(vec![3.0, 1.6]), 1.0);
    let values: Vec<f64> = [8, 16, 32]
        .iter()
        .map(|&n| {
            minimize_action_eff(&sys, &x_end, 0.5, &u0, &options(n))
                .unwrap()
                .value
        })
        .collect();
    let d1 = (values[1] - values[0]).abs();
    let d2 = (values[2] - values[1]).abs();
    assert!(d2 <= d1, "{values:?}");
}

#[test]
fn endpoint_off_the_manifold_is_refused_for_the_effective_problem() {
    let sys = chain();
    let x_end = DVector::from_vec(vec![1.5, 0.5, 1.0]);
    assert!(
        minimize_action_eff(&sys, &x_end, 0.5, &InitialCost::Constant(0.0), &options(8)).is_err()
    );
}
