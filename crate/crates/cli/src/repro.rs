//! Reproduction suite: one check per acceptance criterion.

use std::time::Instant;

use fastslow::action::{
    minimize_action_eff, minimize_action_eps, mosco_sweep, ActionOptions, InitialCost,
};
use fastslow::domain::BoxDomain;
use fastslow::equilibria::{chart_at, sample_manifold};
use fastslow::exact;
use fastslow::hje::{
    eps_scheme, lipschitz_report, make_well_prepared, solve_hje_cg, solve_hje_eps, HjeOptions,
    Lattice, WellPreparedData,
};
use fastslow::kinetics::{
    effective_rhs_coarse, fast_defect, fdb_solve, integrate_effective, integrate_rre, intensity,
    rre_rhs, EffectiveMode,
};
use fastslow::ode::StepControl;
use fastslow::rate_functions::{
    lagrangian_cg, lagrangian_eps, lagrangian_eps_flux, s_cost, s_star,
};
use fastslow::{networks, FastSlowSystem};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

pub const CRITERIA: [(u8, &str); 10] = [
    (1, "exact conservation structure"),
    (2, "fast detailed balance"),
    (3, "reconstruction contract"),
    (4, "duality"),
    (5, "zero-cost typical paths"),
    (6, "fast-limit convergence"),
    (7, "value convergence sweep"),
    (8, "grid vs least action"),
    (9, "Lipschitz uniformity"),
    (10, "effective HJE consistency"),
];

#[derive(Debug, Clone, Serialize)]
pub struct Outcome {
    pub id: u8,
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

impl Outcome {
    pub fn line(&self) -> String {
        format!(
            "{} [{:>2}] {}: {} ({:.1}s)",
            if self.passed { "PASS" } else { "FAIL" },
            self.id,
            self.name,
            self.detail,
            self.seconds
        )
    }
}

type Check = Result<String, String>;

pub fn run_criterion(id: u8, seed: u64) -> Outcome {
    let name = CRITERIA
        .iter()
        .find(|c| c.0 == id)
        .map(|c| c.1)
        .unwrap_or("unknown criterion");
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(id as u64));
    let start = Instant::now();
    let result = match id {
        1 => conservation(),
        2 => detailed_balance(&mut rng),
        3 => reconstruction(&mut rng),
        4 => duality(&mut rng),
        5 => zero_cost(&mut rng),
        6 => fast_limit(),
        7 => value_sweep(),
        8 => grid_vs_action(&mut rng),
        9 => lipschitz(),
        10 => effective_hje(),
        _ => Err(format!("no criterion {id}")),
    };
    let (passed, detail) = match result {
        Ok(d) => (true, d),
        Err(d) => (false, d),
    };
    Outcome {
        id,
        name,
        passed,
        detail,
        seconds: start.elapsed().as_secs_f64(),
    }
}

pub fn run(ids: &[u8], seed: u64) -> Vec<Outcome> {
    ids.iter().map(|&id| run_criterion(id, seed)).collect()
}

pub fn summary_table(outcomes: &[Outcome]) -> String {
    let mut s = String::new();
    for o in outcomes {
        s.push_str(&o.line());
        s.push('\n');
    }
    let passed = outcomes.iter().filter(|o| o.passed).count();
    s.push_str(&format!("{passed}/{} criteria passed\n", outcomes.len()));
    s
}

fn system(name: &str) -> Result<FastSlowSystem, String> {
    let net = networks::by_name(name).ok_or_else(|| format!("unknown network {name}"))?;
    FastSlowSystem::new(net).map_err(|e| format!("{name}: {e}"))
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn log_uniform(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.random_range(lo.ln()..hi.ln()).exp())
}

fn conservation() -> Check {
    for (name, _) in networks::ALL {
        let net = networks::by_name(name).unwrap();
        let st = fastslow::build_structure(&net);
        let n = st.species;
        let gq = exact::mul_transpose(&st.g, &st.q);
        ensure(gq.iter().flatten().all(|&v| v == 0), || {
            format!("{name}: G·Qᵀ ≠ 0")
        })?;
        let fast: Vec<Vec<i64>> = st.fast_rows.iter().map(|&r| st.g[r].clone()).collect();
        let gf = exact::mul_transpose(&fast, &st.q_fast);
        ensure(gf.iter().flatten().all(|&v| v == 0), || {
            format!("{name}: G_fast·Q_fastᵀ ≠ 0")
        })?;
        let rank = exact::rank(&st.g, n);
        ensure(st.q.len() + rank == n, || {
            format!("{name}: m + rank(G) ≠ I")
        })?;
        ensure(st.q_fast.len() + exact::rank(&fast, n) == n, || {
            format!("{name}: m_fast + rank(G_fast) ≠ I")
        })?;
        let bad = st.check_invariants();
        ensure(bad.is_empty(), || format!("{name}: {}", bad.join("; ")))?;
    }
    Ok(format!("{} networks exact", networks::ALL.len()))
}

fn detailed_balance(rng: &mut ChaCha8Rng) -> Check {
    let mut worst = 0.0f64;
    let mut checked = 0;
    for (name, _) in networks::ALL {
        let net = networks::by_name(name).unwrap();
        let fdb = fdb_solve(&net).map_err(|e| format!("{name}: {e}"))?;
        if name == "cycle_bad" {
            ensure(fdb.x_star.is_none() && fdb.log_residual > 0.0, || {
                format!("cycle_bad accepted (residual {:e})", fdb.log_residual)
            })?;
            continue;
        }
        let x_star = DVector::from_vec(
            fdb.x_star
                .ok_or_else(|| format!("{name}: no fast equilibrium"))?,
        );
        for _ in 0..100 {
            let x = log_uniform(rng, net.species_count(), 0.05, 20.0);
            let logq = x.zip_map(&x_star, |a, b| (a / b).ln());
            for r in net.fast_reactions() {
                let g = net.reactions()[r].reaction_vector();
                let lhs: f64 = g
                    .iter()
                    .zip(logq.iter())
                    .map(|(&gi, &l)| gi as f64 * l)
                    .sum();
                let (a, b) = intensity(&net, &x, r);
                let rhs = (b / a).ln();
                let err = (lhs - rhs).abs() / (1.0 + rhs.abs());
                worst = worst.max(err);
                checked += 1;
            }
        }
    }
    ensure(worst <= 1e-12, || format!("worst relative error {worst:e}"))?;
    Ok(format!(
        "{checked} identities, worst {worst:.1e}; inconsistent cycle rejected"
    ))
}

/// A q-box around `Q_fast x*` that every shipped network can reconstruct.
fn q_box(sys: &FastSlowSystem) -> (DVector<f64>, DVector<f64>) {
    let q = sys.structure.q_fast_apply(&sys.x_star);
    let half = 0.25
        * q.iter()
            .cloned()
            .filter(|v| *v > 0.0)
            .fold(f64::INFINITY, f64::min);
    (q.map(|v| v - half), q.map(|v| v + half))
}

fn reconstruction(rng: &mut ChaCha8Rng) -> Check {
    let mut points = 0;
    let mut worst_fd = 0.0f64;
    for name in ["chain", "binding", "cycle", "exchange"] {
        let sys = system(name)?;
        let (lo, hi) = q_box(&sys);
        let d = lo.len();
        let per_axis = (1..).find(|n: &usize| n.pow(d as u32) >= 100).unwrap();
        for sample in sample_manifold(&sys, &lo, &hi, per_axis) {
            let rec = sample
                .result
                .map_err(|e| format!("{name} q={:?}: {e}", sample.q.as_slice()))?;
            points += 1;
            let qerr = (sys.structure.q_fast_apply(&rec.x) - &sample.q).amax();
            ensure(qerr <= 1e-10 * (1.0 + sample.q.amax()), || {
                format!("{name}: Q_fast R(q) ≠ q by {qerr:e}")
            })?;
            let defect = fast_defect(&sys.network, &rec.x);
            ensure(defect <= 1e-10, || {
                format!("{name}: fast defect {defect:e}")
            })?;
            for _ in 0..10 {
                let lam0 = DVector::from_fn(d, |_, _| rng.random_range(-1.0..1.0));
                let other = sys
                    .reconstruct_from(&sample.q, &lam0)
                    .map_err(|e| format!("{name}: random start failed: {e}"))?;
                let diff = (&other.x - &rec.x).amax();
                ensure(diff <= 1e-9, || {
                    format!("{name}: Newton starts disagree by {diff:e}")
                })?;
            }
            let chart = chart_at(&sys.structure, &rec.x).map_err(|e| e.to_string())?;
            let delta = 1e-5 * (1.0 + sample.q.amax());
            for k in 0..d {
                let mut qp = sample.q.clone();
                let mut qm = sample.q.clone();
                qp[k] += delta;
                qm[k] -= delta;
                let xp = sys
                    .reconstruct_from(&qp, &rec.dual)
                    .map_err(|e| e.to_string())?
                    .x;
                let xm = sys
                    .reconstruct_from(&qm, &rec.dual)
                    .map_err(|e| e.to_string())?
                    .x;
                let fd = (xp - xm) / (2.0 * delta);
                let col = chart.dr.column(k).into_owned();
                let rel = (&fd - &col).norm() / col.norm().max(1e-300);
                worst_fd = worst_fd.max(rel);
            }
            let n = sys.species();
            let lhs = DMatrix::identity(n, n) - &chart.p;
            let rhs = &chart.dr * sys.structure.q_fast_f64();
            let id_err = (lhs - rhs).amax();
            ensure(id_err <= 1e-9, || {
                format!("{name}: (I−P) − DR·Q_fast = {id_err:e}")
            })?;
            let proj_err = (sys.structure.q_fast_f64() * &chart.p).amax();
            ensure(proj_err <= 1e-9, || {
                format!("{name}: Q_fast·P = {proj_err:e}")
            })?;
        }
    }
    ensure(worst_fd <= 1e-5, || {
        format!("DR finite-difference error {worst_fd:e}")
    })?;
    Ok(format!(
        "{points} lattice points, DR finite-difference error {worst_fd:.1e}"
    ))
}

fn random_velocity(sys: &FastSlowSystem, rng: &mut ChaCha8Rng) -> DVector<f64> {
    let n = sys.species();
    let mut v = DVector::zeros(n);
    for g in &sys.structure.g {
        let c: f64 = rng.random_range(-1.5..1.5);
        for i in 0..n {
            v[i] += c * g[i] as f64;
        }
    }
    v
}

fn duality(rng: &mut ChaCha8Rng) -> Check {
    let names = ["chain", "binding", "cycle", "exchange", "slow_pair"];
    let systems: Vec<FastSlowSystem> = names.iter().map(|n| system(n)).collect::<Result<_, _>>()?;
    let mut worst_flux = 0.0f64;
    for k in 0..200 {
        let sys = &systems[k % systems.len()];
        let x = log_uniform(rng, sys.species(), 0.2, 5.0);
        let v = random_velocity(sys, rng);
        let eps = 10f64.powf(rng.random_range(-3.0..0.0));
        let dual = lagrangian_eps(&sys.network, &sys.structure, &x, &v, eps);
        let flux = lagrangian_eps_flux(&sys.network, &sys.structure, &x, &v, eps);
        ensure(dual.value.is_finite() && flux.value.is_finite(), || {
            format!(
                "{}: non-finite Lagrangian at ε={eps:e}",
                names[k % names.len()]
            )
        })?;
        let err = (flux.value - dual.value).abs() / (1.0 + dual.value.abs());
        worst_flux = worst_flux.max(err);
    }
    ensure(worst_flux <= 1e-8, || {
        format!("flux vs dual error {worst_flux:e}")
    })?;

    let mut worst_s = 0.0f64;
    let grid = 100_000;
    let (p_lo, p_hi) = (-2.5, 2.5);
    for _ in 0..50 {
        let alpha = rng.random_range(0.1..2.0);
        let beta = rng.random_range(0.1..2.0);
        let p_opt: f64 = rng.random_range(-1.5..1.5);
        let j = alpha * p_opt.exp() - beta * (-p_opt).exp();
        let brute = (0..grid)
            .map(|i| {
                let p = p_lo + (p_hi - p_lo) * i as f64 / (grid - 1) as f64;
                p * j - s_star(p, alpha, beta)
            })
            .fold(f64::NEG_INFINITY, f64::max);
        let closed = s_cost(j, alpha, beta);
        worst_s = worst_s.max((closed - brute).abs());
    }
    ensure(worst_s <= 1e-8, || {
        format!("S closed form vs grid {worst_s:e}")
    })?;
    Ok(format!(
        "flux/dual {worst_flux:.1e}, S vs grid {worst_s:.1e}"
    ))
}

fn zero_cost(rng: &mut ChaCha8Rng) -> Check {
    let names = ["chain", "binding", "cycle", "exchange"];
    let systems: Vec<FastSlowSystem> = names.iter().map(|n| system(n)).collect::<Result<_, _>>()?;
    let mut worst_eps = 0.0f64;
    let mut worst_cg = 0.0f64;
    for k in 0..100 {
        let sys = &systems[k % systems.len()];
        let x = log_uniform(rng, sys.species(), 0.2, 5.0);
        let eps = 10f64.powf(rng.random_range(-3.0..0.0));
        let v = rre_rhs(&sys.network, &x, eps);
        let l = lagrangian_eps(&sys.network, &sys.structure, &x, &v, eps);
        worst_eps = worst_eps.max(l.value.abs());
    }
    for k in 0..100 {
        let sys = &systems[k % systems.len()];
        let x = log_uniform(rng, sys.species(), 0.2, 5.0);
        let q = sys.structure.q_fast_apply(&x);
        let v = effective_rhs_coarse(sys, &q).map_err(|e| e.to_string())?;
        let l = lagrangian_cg(sys, &q, &v).map_err(|e| e.to_string())?;
        worst_cg = worst_cg.max(l.value.abs());
    }
    ensure(worst_eps <= 1e-10, || {
        format!("max L_ε along the flow {worst_eps:e}")
    })?;
    ensure(worst_cg <= 1e-10, || {
        format!("max L_cg along the flow {worst_cg:e}")
    })?;
    Ok(format!("max L_ε {worst_eps:.1e}, max L_cg {worst_cg:.1e}"))
}

fn fast_limit() -> Check {
    let mut details = Vec::new();
    let times: Vec<f64> = (1..=50).map(|k| 0.1 * k as f64).collect();
    let mut out = vec![0.0];
    out.extend(&times);
    for (name, x0) in [
        ("chain", vec![2.0, 0.5, 0.5]),
        ("binding", vec![2.0, 1.0, 0.5, 0.5]),
    ] {
        let sys = system(name)?;
        let x0 = DVector::from_vec(x0);
        let ctrl = StepControl {
            rtol: 1e-10,
            atol: 1e-12,
            output_times: Some(out.clone()),
            ..Default::default()
        };
        let modes = [
            EffectiveMode::Lagrange,
            EffectiveMode::Projected,
            EffectiveMode::Coarse,
        ];
        let paths = modes
            .iter()
            .map(|&m| integrate_effective(&sys, &x0, 5.0, m, &ctrl))
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| format!("{name}: {e}"))?;
        let mut spread = 0.0f64;
        for p in &paths[1..] {
            for (a, b) in p.states.iter().zip(&paths[0].states) {
                spread = spread.max((a - b).amax());
            }
        }
        ensure(spread <= 1e-6, || {
            format!("{name}: effective formulations differ by {spread:e}")
        })?;
        let mut gaps = Vec::new();
        for eps in [1e-1, 1e-2, 1e-3] {
            let traj = integrate_rre(&sys.network, &x0, eps, 5.0, &ctrl)
                .map_err(|e| format!("{name}: {e}"))?;
            let gap = traj.states[1..]
                .iter()
                .zip(&paths[0].states[1..])
                .map(|(a, b)| (a - b).norm())
                .fold(0.0, f64::max);
            gaps.push(gap);
        }
        ensure(gaps[0] > gaps[1] && gaps[1] > gaps[2], || {
            format!("{name}: gaps not decreasing {gaps:?}")
        })?;
        ensure(gaps[2] <= 1e-2, || {
            format!("{name}: final gap {:e}", gaps[2])
        })?;
        details.push(format!(
            "{name} gaps {:.1e}/{:.1e}/{:.1e} spread {spread:.0e}",
            gaps[0], gaps[1], gaps[2]
        ));
    }
    Ok(details.join("; "))
}

fn value_sweep() -> Check {
    let sys = system("chain")?;
    let u0 = InitialCost::coarse_quadratic(&sys.structure, DVector::from_vec(vec![3.0, 1.5]), 1.0);
    let opts = ActionOptions::new(16, BoxDomain::uniform(3, 0.02, 5.0));
    let eps_list = [1.0, 1e-1, 1e-2, 1e-3];
    let mut details = Vec::new();
    for q_end in [[3.0, 1.0], [2.5, 1.2], [3.5, 1.4]] {
        let x_end = sys
            .reconstruct(&DVector::from_vec(q_end.to_vec()))
            .map_err(|e| e.to_string())?
            .x;
        let table =
            mosco_sweep(&sys, &x_end, 1.0, &u0, &eps_list, &opts).map_err(|e| e.to_string())?;
        let rows = table
            .rows
            .iter()
            .map(|r| r.as_ref().map_err(|e| e.to_string()))
            .collect::<Result<Vec<_>, _>>()?;
        let gaps: Vec<f64> = rows.iter().map(|r| r.gap.abs()).collect();
        ensure(gaps.windows(2).all(|w| w[1] <= w[0]), || {
            format!("q={q_end:?}: gaps not monotone {gaps:?}")
        })?;
        let last = gaps[gaps.len() - 1];
        ensure(last <= 5e-2 * (1.0 + table.u_star.abs()), || {
            format!("q={q_end:?}: smallest gap {last:e}")
        })?;
        let rec = rows[rows.len() - 1].recovery_gap;
        ensure(rec < 1e-3, || {
            format!("q={q_end:?}: recovery gap {rec:e} at ε=1e-3")
        })?;
        details.push(format!("gaps {:.1e}..{last:.1e} rec {rec:.1e}", gaps[0]));
    }
    Ok(details.join("; "))
}

fn grid_vs_action(rng: &mut ChaCha8Rng) -> Check {
    let sys = system("slow_pair")?;
    let net = &sys.network;
    let dom = BoxDomain::uniform(2, 0.2, 2.2);
    let center = DVector::from_vec(vec![1.0, 1.0]);
    let u0 = InitialCost::Quadratic {
        center: center.clone(),
        weight: 1.0,
        offset: 0.0,
    };
    let t_final = 0.5;
    let points = [(0.6, 1.2), (1.0, 1.0), (1.4, 0.8), (0.8, 0.6), (1.2, 1.6)];
    let mut opts = ActionOptions::new(64, dom.clone());
    opts.lbfgs.max_iters = 2000;
    let mut actions = Vec::new();
    for p in points {
        let x_end = DVector::from_vec(vec![p.0, p.1]);
        let r = minimize_action_eps(&sys, &x_end, t_final, 1.0, &u0, &opts)
            .map_err(|e| e.to_string())?;
        actions.push(r.value);
    }
    let mut max_gaps = Vec::new();
    for h in [0.02, 0.01] {
        let lat = Lattice::covering(&dom, h).map_err(|e| e.to_string())?;
        let data = make_well_prepared(&sys.structure, lat, &|x| 0.5 * (x - &center).norm_squared())
            .map_err(|e| e.to_string())?;
        let field = solve_hje_eps(
            net,
            &sys.structure,
            &data,
            1.0,
            t_final,
            HjeOptions::default(),
        )
        .map_err(|e| e.to_string())?;
        let mut worst = 0.0f64;
        for (p, a) in points.iter().zip(&actions) {
            let u = field
                .value_at(&DVector::from_vec(vec![p.0, p.1]))
                .ok_or_else(|| format!("{p:?} is not a lattice node"))?;
            worst = worst.max((u - a).abs());
        }
        ensure(worst <= 3.0 * h, || {
            format!("h={h}: gap {worst:e} exceeds 3h")
        })?;
        max_gaps.push(worst);
    }
    let ratio = max_gaps[0] / max_gaps[1];
    ensure(ratio >= 1.5, || {
        format!("gap ratio under halving {ratio:.2}")
    })?;

    let lat = Lattice::covering(&dom, 0.05).map_err(|e| e.to_string())?;
    let constant = WellPreparedData::constant(lat.clone(), 0.75);
    let field = solve_hje_eps(
        net,
        &sys.structure,
        &constant,
        1.0,
        t_final,
        HjeOptions::default(),
    )
    .map_err(|e| e.to_string())?;
    ensure(field.values.iter().all(|&v| v == 0.75), || {
        "constant data changed".into()
    })?;

    let scheme = eps_scheme(net, &sys.structure, lat.clone(), 1.0).map_err(|e| e.to_string())?;
    for trial in 0..1000 {
        let u: Vec<f64> = (0..lat.len())
            .map(|i| {
                let x = lat.node(i);
                0.5 * (&x - &center).norm_squared() + rng.random_range(-0.05..0.05)
            })
            .collect();
        let mut w = u.clone();
        let node = rng.random_range(0..lat.len());
        w[node] += rng.random_range(0.0..0.1);
        let dt = 0.99 * scheme.stable_dt(&u).min(scheme.stable_dt(&w));
        let a = scheme.step(&u, dt).map_err(|e| e.to_string())?;
        let b = scheme.step(&w, dt).map_err(|e| e.to_string())?;
        let drop = a
            .iter()
            .zip(&b)
            .map(|(x, y)| x - y)
            .fold(f64::NEG_INFINITY, f64::max);
        ensure(drop <= 1e-13, || {
            format!("perturbation {trial}: update decreased by {drop:e}")
        })?;
    }
    Ok(format!(
        "gaps {:.4}/{:.4} (ratio {ratio:.2}), constants exact, 1000 monotone updates",
        max_gaps[0], max_gaps[1]
    ))
}

fn lipschitz() -> Check {
    let sys = system("exchange")?;
    let lat =
        Lattice::covering(&BoxDomain::uniform(2, 0.2, 2.2), 0.05).map_err(|e| e.to_string())?;
    let data = make_well_prepared(&sys.structure, lat, &|x| 0.5 * (x[0] + x[1] - 2.0).powi(2))
        .map_err(|e| e.to_string())?;
    let fields = [1.0, 1e-1, 1e-2, 1e-3]
        .iter()
        .map(|&eps| {
            solve_hje_eps(
                &sys.network,
                &sys.structure,
                &data,
                eps,
                0.5,
                HjeOptions::default(),
            )
            .map(|f| (eps, f))
            .map_err(|e| e.to_string())
        })
        .collect::<Result<Vec<_>, _>>()?;
    let report = lipschitz_report(&sys, &fields).map_err(|e| e.to_string())?;
    let band = report.slow_band();
    ensure(band <= 2.0, || {
        format!("slow constants spread by factor {band:.2}")
    })?;
    let decay = report.fast_decay();
    for (measured, sqrt_ratio) in &decay {
        ensure(*measured <= 2.0 * sqrt_ratio, || {
            format!(
                "fast gradient ratio {measured:.3} exceeds {:.3}",
                2.0 * sqrt_ratio
            )
        })?;
    }
    let ratios: Vec<String> = decay.iter().map(|d| format!("{:.2}", d.0)).collect();
    Ok(format!(
        "slow band {band:.2}, fast ratios {}",
        ratios.join("/")
    ))
}

fn effective_hje() -> Check {
    let sys = system("chain")?;
    let center = DVector::from_vec(vec![3.0, 1.5]);
    let u0 = InitialCost::coarse_quadratic(&sys.structure, center.clone(), 1.0);
    let t_final = 0.5;
    let mut opts = ActionOptions::new(32, BoxDomain::uniform(3, 0.05, 5.0));
    opts.lbfgs.max_iters = 2000;
    let alt_structure = sys
        .structure
        .with_fast_extension(vec![vec![1, 1, 1], vec![1, 1, 2]])
        .map_err(|e| e.to_string())?;
    let alt = sys.with_structure(alt_structure);
    let levels = [0.8, 1.0, 1.2, 1.4, 1.6];
    let mut values = Vec::new();
    let mut basis_err = 0.0f64;
    for c in levels {
        let x_end = sys
            .reconstruct(&DVector::from_vec(vec![3.0, c]))
            .map_err(|e| e.to_string())?
            .x;
        let a =
            minimize_action_eff(&sys, &x_end, t_final, &u0, &opts).map_err(|e| e.to_string())?;
        let b =
            minimize_action_eff(&alt, &x_end, t_final, &u0, &opts).map_err(|e| e.to_string())?;
        basis_err = basis_err.max((a.value - b.value).abs());
        values.push(a.value);
    }
    ensure(basis_err <= 1e-8, || {
        format!("basis change moved u* by {basis_err:e}")
    })?;
    let mut gaps = Vec::new();
    for h in [0.02, 0.01] {
        let n = ((2.7f64 - 0.3) / h + 1e-9).floor() as usize + 1;
        let lat = Lattice::new(DVector::from_vec(vec![3.0, 0.3]), h, vec![1, n])
            .map_err(|e| e.to_string())?;
        let data = WellPreparedData::coarse(lat, &|q| 0.5 * (q - &center).norm_squared());
        let field =
            solve_hje_cg(&sys, &data, t_final, HjeOptions::default()).map_err(|e| e.to_string())?;
        let mut worst = 0.0f64;
        for (c, v) in levels.iter().zip(&values) {
            let u = field
                .value_at(&DVector::from_vec(vec![3.0, *c]))
                .ok_or_else(|| format!("q2={c} is not a lattice node"))?;
            worst = worst.max((u - v).abs());
        }
        ensure(worst <= 3.0 * h, || {
            format!("h={h}: gap {worst:e} exceeds 3h")
        })?;
        gaps.push(worst);
    }
    Ok(format!(
        "gaps {:.4}/{:.4}, basis change {basis_err:.1e}",
        gaps[0], gaps[1]
    ))
}
