use fastslow::kinetics::{conserved_drift, integrate_effective, integrate_rre, EffectiveMode};
use fastslow::ode::StepControl;
use fastslow::{networks, FastSlowSystem};
use nalgebra::DVector;

fn system(name: &str) -> FastSlowSystem {
    FastSlowSystem::new(networks::by_name(name).unwrap()).unwrap()
}

fn grid(t0: f64, t1: f64, n: usize) -> Vec<f64> {
    (0..=n)
        .map(|k| t0 + (t1 - t0) * k as f64 / n as f64)
        .collect()
}

#[test]
fn effective_formulations_agree() {
    for name in ["chain", "binding", "cycle"] {
        let sys = system(name);
        let x0 = DVector::from_element(sys.species(), 1.0)
            + DVector::from_fn(sys.species(), |i, _| 0.3 * i as f64);
        let ctrl = StepControl {
            rtol: 1e-10,
            atol: 1e-12,
            output_times: Some(grid(0.0, 3.0, 30)),
            ..Default::default()
        };
        let paths: Vec<_> = [
            EffectiveMode::Projected,
            EffectiveMode::Coarse,
            EffectiveMode::Lagrange,
        ]
        .into_iter()
        .map(|m| integrate_effective(&sys, &x0, 3.0, m, &ctrl).unwrap())
        .collect();
        for p in &paths[1..] {
            for (a, b) in p.states.iter().zip(&paths[0].states) {
                assert!((a - b).amax() < 1e-6, "{name}");
            }
        }
        assert!(paths[0].max_manifold_defect < 1e-9, "{name}");
        assert!(conserved_drift(&sys.structure.q, &paths[0].states) < 1e-9);
    }
}

#[test]
fn fast_limit_approaches_the_effective_path() {
    let sys = system("chain");
    let x0 = DVector::from_vec(vec![2.0, 0.5, 0.5]);
    let times = grid(0.1, 2.0, 19);
    let mut out = vec![0.0];
    out.extend(&times);
    let ctrl = StepControl {
        output_times: Some(out),
        ..Default::default()
    };
    let eff = integrate_effective(&sys, &x0, 2.0, EffectiveMode::Coarse, &ctrl).unwrap();
    let mut gaps = Vec::new();
    for eps in [1e-1, 1e-2, 1e-3] {
        let traj = integrate_rre(&sys.network, &x0, eps, 2.0, &ctrl).unwrap();
        let gap = traj.states[1..]
            .iter()
            .zip(&eff.states[1..])
            .map(|(a, b)| (a - b).amax())
            .fold(0.0, f64::max);
        assert!(conserved_drift(&sys.structure.q, &traj.states) < 1e-9);
        gaps.push(gap);
    }
    assert!(gaps[0] > gaps[1] && gaps[1] > gaps[2], "{gaps:?}");
    assert!(gaps[2] < 1e-2);
}
