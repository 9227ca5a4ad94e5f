use fastslow::equilibria::{chart_at, is_fast_equilibrium, sample_manifold};
use fastslow::kinetics::{fast_defect, fdb_solve};
use fastslow::{networks, FastSlowSystem};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn system(name: &str) -> FastSlowSystem {
    FastSlowSystem::new(networks::by_name(name).unwrap()).unwrap()
}

fn positive_state(n: usize) -> impl Strategy<Value = DVector<f64>> {
    prop::collection::vec(0.2f64..3.0, n).prop_map(DVector::from_vec)
}

#[test]
fn binding_matches_quadratic_root() {
    let sys = system("binding");
    let q = sys
        .structure
        .q_fast_apply(&DVector::from_vec(vec![2.0, 2.0, 4.0, 1.0]));
    let x = sys.reconstruct(&q).unwrap().x;
    // a - b = 0, a + c = 6, a·b = c  =>  a² + a - 6 = 0  =>  a = 2, c = 4.
    assert!((x[0] - 2.0).abs() < 1e-10 && (x[1] - 2.0).abs() < 1e-10 && (x[2] - 4.0).abs() < 1e-10);
    assert!((x[3] - 1.0).abs() < 1e-10);
}

#[test]
fn cycle_reference_state_equilibrates_every_fast_reaction() {
    let net = networks::by_name("cycle").unwrap();
    let x = DVector::from_vec(fdb_solve(&net).unwrap().x_star.unwrap());
    assert!(fast_defect(&net, &x) < 1e-12);
    let bad = fdb_solve(&networks::by_name("cycle_bad").unwrap()).unwrap();
    assert!(bad.x_star.is_none() && bad.log_residual > 0.1);
}

#[test]
fn manifold_lattice_points_are_fast_equilibria() {
    let sys = system("binding");
    let lo = DVector::from_vec(vec![2.0, 2.0, 0.5]);
    let hi = DVector::from_vec(vec![4.0, 5.0, 1.5]);
    let samples = sample_manifold(&sys, &lo, &hi, 4);
    assert_eq!(samples.len(), 64);
    for s in samples {
        let r = s.result.unwrap();
        assert!(is_fast_equilibrium(&sys.network, &r.x, None));
        assert!((sys.structure.q_fast_apply(&r.x) - &s.q).amax() < 1e-10 * (1.0 + s.q.amax()));
    }
}

#[test]
fn large_fast_perturbation_leaves_the_manifold() {
    let sys = system("chain");
    let x = &sys.x_star + DVector::from_vec(vec![0.5, -0.5, 0.0]);
    assert!(!is_fast_equilibrium(&sys.network, &x, None));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn reconstruction_contract(name in prop::sample::select(vec!["chain", "binding", "cycle", "exchange"]),
                               seed in positive_state(4)) {
        let sys = system(name);
        let x0 = seed.rows(0, sys.species()).into_owned();
        let q = sys.structure.q_fast_apply(&x0);
        let r = sys.reconstruct(&q).unwrap();
        let qn = 1.0 + q.amax();
        prop_assert!((sys.structure.q_fast_apply(&r.x) - &q).amax() <= 1e-10 * qn);
        prop_assert!(fast_defect(&sys.network, &r.x) <= 1e-10);
        let logs = r.x.zip_map(&sys.x_star, |a, b| (a / b).ln());
        let qt = sys.structure.q_fast_f64().transpose() * &r.dual;
        prop_assert!((logs - qt).amax() <= 1e-10 * (1.0 + r.dual.amax()));
        // Fast equilibria are fixed points of the projection.
        let again = sys.project(&r.x).unwrap();
        prop_assert!((again.x - &r.x).amax() <= 1e-10 * (1.0 + r.x.amax()));
    }

    #[test]
    fn newton_start_does_not_matter(seed in positive_state(4), lam in prop::collection::vec(-2.0f64..2.0, 3)) {
        let sys = system("binding");
        let q = sys.structure.q_fast_apply(&seed);
        let a = sys.reconstruct(&q).unwrap();
        let b = sys.reconstruct_from(&q, &DVector::from_vec(lam)).unwrap();
        prop_assert!((a.x - b.x).amax() <= 1e-9);
    }

    #[test]
    fn chart_identities(name in prop::sample::select(vec!["chain", "binding", "cycle"]), seed in positive_state(4)) {
        let sys = system(name);
        let x0 = seed.rows(0, sys.species()).into_owned();
        let r = sys.project(&x0).unwrap();
        let c = chart_at(&sys.structure, &r.x).unwrap();
        let qf = sys.structure.q_fast_f64();
        let n = sys.species();
        prop_assert!((qf * &c.dr - DMatrix::identity(sys.m_fast(), sys.m_fast())).amax() < 1e-9);
        prop_assert!((&c.p * &c.p - &c.p).amax() < 1e-9);
        prop_assert!((&c.p * &c.dr).amax() < 1e-9);
        prop_assert!((DMatrix::identity(n, n) - &c.p - &c.dr * qf).amax() < 1e-9);
        for &f in &sys.structure.fast_rows {
            let g = sys.structure.gamma_f64(f);
            prop_assert!((&c.p * &g - &g).amax() < 1e-9);
        }
        // Central differences of R against DR.
        let h = 1e-5;
        for j in 0..sys.m_fast() {
            let mut e = DVector::zeros(sys.m_fast());
            e[j] = h;
            let plus = sys.reconstruct(&(&r.q + &e)).unwrap().x;
            let minus = sys.reconstruct(&(&r.q - &e)).unwrap().x;
            let fd = (plus - minus) / (2.0 * h);
            let col = c.dr.column(j).into_owned();
            prop_assert!((&fd - &col).amax() <= 1e-5 * (1.0 + col.amax()));
        }
    }
}
