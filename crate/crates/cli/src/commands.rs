//! Subcommand implementations.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use fastslow::action::{
    minimize_action_eff, minimize_action_eps, mosco_sweep, ActionOptions, ActionResult, InitialCost,
};
use fastslow::domain::{BoxDomain, Path as DiscretePath, PathKind};
use fastslow::equilibria::{chart, ReconstructionResult};
use fastslow::hje::{
    lipschitz_report, make_well_prepared, solve_hje_cg, solve_hje_eps, GridField, HjeOptions,
    Lattice, WellPreparedData,
};
use fastslow::kinetics::{
    fast_defect, fdb_solve, integrate_effective, integrate_rre, EffectiveMode,
};
use fastslow::model::{validate, Severity};
use fastslow::ode::StepControl;
use fastslow::rate_functions::{
    hamiltonian_cg, hamiltonian_eff, hamiltonian_eps, lagrangian_cg, lagrangian_eff,
    lagrangian_eps, DualEvaluation,
};
use fastslow::{build_structure, networks, parse_network, FastSlowSystem, Network};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use crate::{
    domain, repro, usage, ActionArgs, AnalyzeArgs, CliError, EvalArgs, HjeArgs, NetworkArg,
    PathProblemArgs, ReconstructArgs, ReproArgs, SimulateArgs, SweepArgs,
};

pub struct Context {
    pub out_dir: Option<PathBuf>,
    pub command: &'static str,
}

impl Context {
    /// Explicit `--out`, else `<out-dir>/<command>.<ext>`, else stdout.
    fn sink(&self, out: &Option<PathBuf>, ext: &str) -> Result<Box<dyn Write>, CliError> {
        let path = match (out, &self.out_dir) {
            (Some(p), Some(dir)) if p.is_relative() => Some(dir.join(p)),
            (Some(p), _) => Some(p.clone()),
            (None, Some(dir)) => Some(dir.join(format!("{}.{ext}", self.command))),
            (None, None) => None,
        };
        match path {
            Some(p) => open(&p),
            None => Ok(Box::new(BufWriter::new(io::stdout()))),
        }
    }
}

fn open(path: &Path) -> Result<Box<dyn Write>, CliError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    Ok(Box::new(BufWriter::new(File::create(path)?)))
}

fn write_json(mut w: Box<dyn Write>, value: &Value) -> Result<(), CliError> {
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| CliError::Io(e.into()))?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

fn csv_writer(w: Box<dyn Write>) -> csv::Writer<Box<dyn Write>> {
    csv::Writer::from_writer(w)
}

fn csv_err(e: csv::Error) -> CliError {
    CliError::Io(io::Error::other(e))
}

/// Shortest round-trip text of a float.
fn num(v: f64) -> String {
    format!("{v:?}")
}

fn vec_json(v: &DVector<f64>) -> Value {
    json!(v.as_slice())
}

fn mat_json(m: &DMatrix<f64>) -> Value {
    let rows: Vec<Vec<f64>> = (0..m.nrows())
        .map(|i| m.row(i).iter().cloned().collect())
        .collect();
    json!(rows)
}

pub fn load_network(arg: &NetworkArg) -> Result<Network, CliError> {
    let spec = arg
        .network
        .as_deref()
        .ok_or_else(|| usage("a network file, shipped name or inline text is required"))?;
    let path = Path::new(spec);
    if path.is_file() {
        let text = std::fs::read_to_string(path)?;
        return parse_network(&text).map_err(domain);
    }
    if let Some(net) = networks::by_name(spec) {
        return Ok(net);
    }
    if spec.contains("<->") {
        return parse_network(spec).map_err(domain);
    }
    Err(usage(format!("network file `{spec}` does not exist")))
}

fn load_system(arg: &NetworkArg) -> Result<FastSlowSystem, CliError> {
    FastSlowSystem::new(load_network(arg)?).map_err(domain)
}

pub fn parse_list(s: &str, what: &str) -> Result<Vec<f64>, CliError> {
    s.split(',')
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .map_err(|_| usage(format!("{what}: `{t}` is not a number")))
        })
        .collect()
}

fn parse_vector(s: &Option<String>, what: &str, len: usize) -> Result<DVector<f64>, CliError> {
    let s = s
        .as_deref()
        .ok_or_else(|| usage(format!("--{what} is required")))?;
    let v = parse_list(s, what)?;
    if v.len() != len {
        return Err(usage(format!(
            "--{what} needs {len} entries, got {}",
            v.len()
        )));
    }
    Ok(DVector::from_vec(v))
}

/// `lo:hi` for every axis, or one `lo:hi` per axis.
pub fn parse_box(s: &str, dim: usize) -> Result<BoxDomain, CliError> {
    let axes: Vec<(f64, f64)> = s
        .split(',')
        .map(|part| {
            let (lo, hi) = part
                .split_once(':')
                .ok_or_else(|| usage(format!("box axis `{part}` is not lo:hi")))?;
            let lo: f64 = lo
                .trim()
                .parse()
                .map_err(|_| usage(format!("box bound `{lo}`")))?;
            let hi: f64 = hi
                .trim()
                .parse()
                .map_err(|_| usage(format!("box bound `{hi}`")))?;
            if !(lo < hi) {
                return Err(usage(format!("box axis `{part}` is empty")));
            }
            Ok((lo, hi))
        })
        .collect::<Result<_, _>>()?;
    let axes = match axes.len() {
        1 => vec![axes[0]; dim],
        n if n == dim => axes,
        n => return Err(usage(format!("box has {n} axes, expected {dim}"))),
    };
    Ok(BoxDomain::new(
        DVector::from_iterator(dim, axes.iter().map(|a| a.0)),
        DVector::from_iterator(dim, axes.iter().map(|a| a.1)),
    ))
}

/// `zero`, `const:<c>`, `quadratic:<center>` or `coarse:<q-center>`.
pub fn parse_u0(
    spec: Option<&str>,
    weight: f64,
    structure: &fastslow::StoichStructure,
) -> Result<InitialCost, CliError> {
    let spec = spec.unwrap_or("zero");
    let (kind, arg) = spec.split_once(':').unwrap_or((spec, ""));
    match kind {
        "zero" => Ok(InitialCost::Constant(0.0)),
        "const" => Ok(InitialCost::Constant(
            parse_list(arg, "u0")?.first().copied().unwrap_or(0.0),
        )),
        "quadratic" => {
            let c = parse_list(arg, "u0")?;
            if c.len() != structure.species {
                return Err(usage(format!(
                    "u0 center needs {} entries",
                    structure.species
                )));
            }
            Ok(InitialCost::Quadratic {
                center: DVector::from_vec(c),
                weight,
                offset: 0.0,
            })
        }
        "coarse" => {
            let c = parse_list(arg, "u0")?;
            if c.len() != structure.m_fast() {
                return Err(usage(format!(
                    "u0 coarse center needs {} entries",
                    structure.m_fast()
                )));
            }
            Ok(InitialCost::coarse_quadratic(
                structure,
                DVector::from_vec(c),
                weight,
            ))
        }
        other => Err(usage(format!("unknown u0 `{other}`"))),
    }
}

pub fn analyze(ctx: &Context, args: AnalyzeArgs) -> Result<(), CliError> {
    let net = load_network(&args.net)?;
    let violations = validate(&net);
    let structure = build_structure(&net);
    let fdb = fdb_solve(&net).map_err(domain)?;
    let report = json!({
        "species": net.species(),
        "reactions": net.to_text().lines().skip(1).collect::<Vec<_>>(),
        "valid": !violations.iter().any(|v| v.severity == Severity::Error),
        "violations": violations,
        "m": structure.m(),
        "m_fast": structure.m_fast(),
        "rank_g": structure.rank_g,
        "structure": structure,
        "invariant_failures": structure.check_invariants(),
        "fdb": fdb,
    });
    write_json(ctx.sink(&args.out, "json")?, &report)
}

pub fn simulate(ctx: &Context, args: SimulateArgs) -> Result<(), CliError> {
    let net = load_network(&args.net)?;
    let n = net.species_count();
    let x0 = parse_vector(&args.x0, "x0", n)?;
    let t_final = args.t_final.unwrap_or(1.0);
    let samples = args.samples.unwrap_or(100).max(1);
    if !(t_final > 0.0) {
        return Err(usage("--t-final must be positive"));
    }
    let times: Vec<f64> = (0..=samples)
        .map(|k| t_final * k as f64 / samples as f64)
        .collect();
    let ctrl = StepControl {
        rtol: 1e-10,
        atol: 1e-12,
        output_times: Some(times),
        ..Default::default()
    };
    let structure = build_structure(&net);
    let mode = args.mode.as_deref().unwrap_or("full");
    let (times, states) = match mode {
        "full" => {
            let eps = args.eps.unwrap_or(1.0);
            if !(eps > 0.0) {
                return Err(usage("--eps must be positive"));
            }
            let traj = integrate_rre(&net, &x0, eps, t_final, &ctrl).map_err(domain)?;
            (traj.times, traj.states)
        }
        "projected" | "coarse" | "lagrange" => {
            let sys = FastSlowSystem::new(net.clone()).map_err(domain)?;
            let mode = match mode {
                "projected" => EffectiveMode::Projected,
                "coarse" => EffectiveMode::Coarse,
                _ => EffectiveMode::Lagrange,
            };
            let path = integrate_effective(&sys, &x0, t_final, mode, &ctrl).map_err(domain)?;
            (path.times, path.states)
        }
        other => return Err(usage(format!("unknown mode `{other}`"))),
    };
    let mut w = csv_writer(ctx.sink(&args.out, "csv")?);
    let mut header = vec!["t".to_string()];
    header.extend(net.species().iter().cloned());
    header.extend((1..=structure.m_fast()).map(|k| format!("q_{k}")));
    header.push("defect".into());
    w.write_record(&header).map_err(csv_err)?;
    for (t, x) in times.iter().zip(&states) {
        let mut row = vec![num(*t)];
        row.extend(x.iter().map(|v| num(*v)));
        row.extend(structure.q_fast_apply(x).iter().map(|v| num(*v)));
        row.push(num(fast_defect(&net, x)));
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

fn reconstruction_json(
    sys: &FastSlowSystem,
    rec: &ReconstructionResult,
) -> Result<Value, CliError> {
    let ch = chart(&sys.structure, rec).map_err(domain)?;
    Ok(json!({
        "x": vec_json(&rec.x),
        "q": vec_json(&rec.q),
        "dual": vec_json(&rec.dual),
        "kkt_residual": rec.kkt_residual,
        "newton_iters": rec.newton_iters,
        "merit_trace": rec.merit_trace,
        "fast_defect": fast_defect(&sys.network, &rec.x),
        "chart": {
            "dr": mat_json(&ch.dr),
            "p": mat_json(&ch.p),
            "h_diag": vec_json(&ch.h_diag),
        },
    }))
}

pub fn reconstruct(ctx: &Context, args: ReconstructArgs) -> Result<(), CliError> {
    let sys = load_system(&args.net)?;
    let rec = match (&args.q, &args.x) {
        (Some(_), None) => sys.reconstruct(&parse_vector(&args.q, "q", sys.m_fast())?),
        (None, Some(_)) => sys.project(&parse_vector(&args.x, "x", sys.species())?),
        _ => return Err(usage("exactly one of --q and --x is required")),
    }
    .map_err(domain)?;
    write_json(
        ctx.sink(&args.out, "json")?,
        &reconstruction_json(&sys, &rec)?,
    )
}

fn dual_json(d: &DualEvaluation) -> Value {
    json!({
        "value": d.value,
        "optimizer": vec_json(&d.optimizer),
        "converged": d.converged,
        "constraint_residual": d.constraint_residual,
        "iterations": d.iterations,
    })
}

pub fn eval(ctx: &Context, args: EvalArgs) -> Result<(), CliError> {
    let net = load_network(&args.net)?;
    let n = net.species_count();
    let eps = args.eps.unwrap_or(1.0);
    if !(eps > 0.0) {
        return Err(usage("--eps must be positive"));
    }
    let function = args
        .function
        .as_deref()
        .ok_or_else(|| usage("--fn is required"))?;
    let out = match function {
        "Heps" => {
            let x = parse_vector(&args.x, "x", n)?;
            let p = parse_vector(&args.p, "p", n)?;
            let h = hamiltonian_eps(&net, &x, &p, eps);
            json!({"value": h.value, "grad_p": vec_json(&h.grad_p), "grad_x": vec_json(&h.grad_x)})
        }
        "Leps" => {
            let x = parse_vector(&args.x, "x", n)?;
            let v = parse_vector(&args.v, "v", n)?;
            dual_json(&lagrangian_eps(&net, &build_structure(&net), &x, &v, eps))
        }
        "Heff" | "Leff" | "Hcg" | "Lcg" => {
            let sys = FastSlowSystem::new(net).map_err(domain)?;
            let mf = sys.m_fast();
            match function {
                "Heff" => {
                    let x = parse_vector(&args.x, "x", n)?;
                    let p = parse_vector(&args.p, "p", n)?;
                    json!({"value": hamiltonian_eff(&sys, &x, &p).map_err(domain)?})
                }
                "Leff" => {
                    let x = parse_vector(&args.x, "x", n)?;
                    let v = parse_vector(&args.v, "v", n)?;
                    dual_json(&lagrangian_eff(&sys, &x, &v).map_err(domain)?)
                }
                "Hcg" => {
                    let q = parse_vector(&args.x, "x", mf)?;
                    let p = parse_vector(&args.p, "p", mf)?;
                    let h = hamiltonian_cg(&sys, &q, &p).map_err(domain)?;
                    json!({"value": h.value, "grad_p": vec_json(&h.grad_p), "grad_x": vec_json(&h.grad_x)})
                }
                _ => {
                    let q = parse_vector(&args.x, "x", mf)?;
                    let v = parse_vector(&args.v, "v", mf)?;
                    dual_json(&lagrangian_cg(&sys, &q, &v).map_err(domain)?)
                }
            }
        }
        other => return Err(usage(format!("unknown function `{other}`"))),
    };
    write_json(ctx.sink(&args.out, "json")?, &out)
}

struct PathProblem {
    x_end: DVector<f64>,
    t_final: f64,
    u0: InitialCost,
    opts: ActionOptions,
}

fn path_problem(sys: &FastSlowSystem, p: &PathProblemArgs) -> Result<PathProblem, CliError> {
    let n = sys.species();
    let x_end = parse_vector(&p.x_end, "x-end", n)?;
    let t_final = p.t_final.unwrap_or(1.0);
    if !(t_final > 0.0) {
        return Err(usage("--t-final must be positive"));
    }
    let steps = p.steps.unwrap_or(32);
    if steps == 0 {
        return Err(usage("--steps must be positive"));
    }
    let domain_box = match &p.domain {
        Some(s) => parse_box(s, n)?,
        None => BoxDomain::default_for(&sys.x_star.sup(&x_end)),
    };
    let u0 = parse_u0(p.u0.as_deref(), p.u0_weight.unwrap_or(1.0), &sys.structure)?;
    let mut opts = ActionOptions::new(steps, domain_box.clone());
    if let Some(it) = p.max_iters {
        opts.lbfgs.max_iters = it;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed.unwrap_or(0));
    for _ in 0..p.random_starts.unwrap_or(0) {
        let x0 = DVector::from_fn(n, |i, _| {
            let (lo, hi) = (domain_box.lo[i], domain_box.hi[i]);
            rng.random_range(lo + 0.1 * (hi - lo)..hi - 0.1 * (hi - lo))
        });
        let states = (0..=steps)
            .map(|k| {
                let w = k as f64 / steps as f64;
                &x0 * (1.0 - w) + &x_end * w
            })
            .collect();
        opts.extra_starts
            .push(DiscretePath::uniform(t_final, states, PathKind::Full));
    }
    Ok(PathProblem {
        x_end,
        t_final,
        u0,
        opts,
    })
}

const SWEEP_HEADER: [&str; 6] = [
    "eps",
    "value",
    "gap",
    "fast_cost_share",
    "iters",
    "converged",
];

fn write_path(path: &Path, result: &ActionResult, names: &[String]) -> Result<(), CliError> {
    let mut w = csv_writer(open(path)?);
    let mut header = vec!["t".to_string()];
    header.extend(names.iter().cloned());
    header.push("step_cost".into());
    w.write_record(&header).map_err(csv_err)?;
    for (k, (t, x)) in result
        .path
        .times
        .iter()
        .zip(&result.path.states)
        .enumerate()
    {
        let mut row = vec![num(*t)];
        row.extend(x.iter().map(|v| num(*v)));
        row.push(
            result
                .per_step_cost
                .get(k)
                .map(|c| num(*c))
                .unwrap_or_default(),
        );
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn action(ctx: &Context, args: ActionArgs) -> Result<(), CliError> {
    let sys = load_system(&args.net)?;
    let prob = path_problem(&sys, &args.problem)?;
    let result = match args.eps {
        Some(eps) if !(eps > 0.0) => return Err(usage("--eps must be positive")),
        Some(eps) => {
            minimize_action_eps(&sys, &prob.x_end, prob.t_final, eps, &prob.u0, &prob.opts)
        }
        None => minimize_action_eff(&sys, &prob.x_end, prob.t_final, &prob.u0, &prob.opts),
    }
    .map_err(domain)?;
    let mut w = csv_writer(ctx.sink(&args.out, "csv")?);
    w.write_record(SWEEP_HEADER).map_err(csv_err)?;
    w.write_record([
        args.eps.map(num).unwrap_or_else(|| "eff".into()),
        num(result.value),
        String::new(),
        num(result.fast_cost_share),
        result.iterations.to_string(),
        result.converged.to_string(),
    ])
    .map_err(csv_err)?;
    w.flush()?;
    if let Some(p) = &args.path_out {
        let p = match (&ctx.out_dir, p.is_relative()) {
            (Some(dir), true) => dir.join(p),
            _ => p.clone(),
        };
        write_path(&p, &result, sys.network.species())?;
    }
    Ok(())
}

pub fn sweep(ctx: &Context, args: SweepArgs) -> Result<(), CliError> {
    let sys = load_system(&args.net)?;
    let prob = path_problem(&sys, &args.problem)?;
    let eps_list = parse_list(args.eps.as_deref().unwrap_or("1,0.1,0.01,0.001"), "eps")?;
    if eps_list.iter().any(|e| !(*e > 0.0)) {
        return Err(usage("every ε must be positive"));
    }
    let table = mosco_sweep(
        &sys,
        &prob.x_end,
        prob.t_final,
        &prob.u0,
        &eps_list,
        &prob.opts,
    )
    .map_err(domain)?;
    let mut w = csv_writer(ctx.sink(&args.out, "csv")?);
    let mut header: Vec<&str> = SWEEP_HEADER.to_vec();
    header.extend(["recovery_value", "recovery_gap", "u_star"]);
    w.write_record(&header).map_err(csv_err)?;
    let mut failures = Vec::new();
    for (eps, row) in eps_list.iter().zip(&table.rows) {
        match row {
            Ok(r) => w.write_record([
                num(r.eps),
                num(r.value),
                num(r.gap),
                num(r.fast_cost_share),
                r.iters.to_string(),
                r.converged.to_string(),
                num(r.recovery_value),
                num(r.recovery_gap),
                num(table.u_star),
            ]),
            Err(e) => {
                failures.push(format!("ε = {eps}: {e}"));
                w.write_record([
                    num(*eps),
                    String::new(),
                    String::new(),
                    String::new(),
                    String::new(),
                    "false".into(),
                    String::new(),
                    String::new(),
                    num(table.u_star),
                ])
            }
        }
        .map_err(csv_err)?;
    }
    w.flush()?;
    if failures.is_empty() {
        Ok(())
    } else {
        Err(CliError::Domain(failures.join("; ")))
    }
}

fn field_json(eps: Option<f64>, f: &GridField) -> Value {
    json!({
        "eps": eps,
        "time": f.time,
        "steps": f.steps,
        "dt_min": f.dt_min,
        "dt_max": f.dt_max,
        "boundary_nodes": f.boundary.iter().filter(|b| **b).count(),
        "masked_nodes": f.masked.iter().filter(|b| **b).count(),
    })
}

pub fn hje(ctx: &Context, args: HjeArgs) -> Result<(), CliError> {
    let net = load_network(&args.net)?;
    let h = args.h.unwrap_or(0.05);
    let t_final = args.t_final.unwrap_or(0.5);
    if !(h > 0.0) || !(t_final > 0.0) {
        return Err(usage("--h and --t-final must be positive"));
    }
    let mut opts = HjeOptions::default();
    if let Some(c) = args.cfl {
        if !(c > 0.0 && c <= 1.0) {
            return Err(usage("--cfl must lie in (0, 1]"));
        }
        opts.cfl = c;
    }
    let weight = args.u0_weight.unwrap_or(1.0);
    let spec = args
        .domain
        .as_deref()
        .ok_or_else(|| usage("--box is required"))?;
    let mode = args.mode.as_deref().unwrap_or("eps");
    let (names, fields, lipschitz) = match mode {
        "eps" => {
            let structure = build_structure(&net);
            let domain_box = parse_box(spec, net.species_count())?;
            let lattice = Lattice::covering(&domain_box, h).map_err(domain)?;
            let u0 = parse_u0(args.u0.as_deref(), weight, &structure)?;
            let data = make_well_prepared(&structure, lattice, &|x| u0.value(x)).map_err(domain)?;
            let eps_list = parse_list(args.eps.as_deref().unwrap_or("1"), "eps")?;
            let fields = eps_list
                .iter()
                .map(|&eps| {
                    solve_hje_eps(&net, &structure, &data, eps, t_final, opts)
                        .map(|f| (Some(eps), f))
                        .map_err(domain)
                })
                .collect::<Result<Vec<_>, _>>()?;
            let lipschitz = if fields.len() >= 2 {
                let sys = FastSlowSystem::new(net.clone()).map_err(domain)?;
                let pairs: Vec<(f64, GridField)> = fields
                    .iter()
                    .map(|(e, f)| (e.unwrap(), f.clone()))
                    .collect();
                let report = lipschitz_report(&sys, &pairs).map_err(domain)?;
                let rows: Vec<Value> = report
                    .rows
                    .iter()
                    .map(|r| {
                        json!({
                            "eps": r.eps,
                            "time_constant": r.time_constant,
                            "slow_constant": r.slow_constant,
                            "fast_on_manifold": r.fast_on_manifold,
                            "fast_normalized": r.fast_normalized,
                            "fast_adjacent_raw": r.fast_adjacent_raw,
                            "manifold_nodes": r.manifold_nodes,
                        })
                    })
                    .collect();
                let decay: Vec<Value> = report
                    .fast_decay()
                    .iter()
                    .map(|(m, s)| json!({"measured": m, "sqrt_eps_ratio": s}))
                    .collect();
                json!({"rows": rows, "slow_band": report.slow_band(), "fast_decay": decay})
            } else {
                Value::Null
            };
            (net.species().to_vec(), fields, lipschitz)
        }
        "coarse" => {
            let sys = FastSlowSystem::new(net.clone()).map_err(domain)?;
            let mf = sys.m_fast();
            let domain_box = parse_box(spec, mf)?;
            let lattice = Lattice::covering(&domain_box, h).map_err(domain)?;
            let u0 = match args.u0.as_deref().unwrap_or("zero") {
                s if s.starts_with("quadratic:") || s.starts_with("coarse:") => {
                    let c = parse_list(s.split_once(':').unwrap().1, "u0")?;
                    if c.len() != mf {
                        return Err(usage(format!("u0 center needs {mf} entries")));
                    }
                    let c = DVector::from_vec(c);
                    WellPreparedData::coarse(lattice, &|q| 0.5 * weight * (q - &c).norm_squared())
                }
                s => {
                    let cost = parse_u0(Some(s), weight, &sys.structure)?;
                    let InitialCost::Constant(v) = cost else {
                        return Err(usage(format!("u0 `{s}` is not available in coarse mode")));
                    };
                    WellPreparedData::constant(lattice, v)
                }
            };
            let field = solve_hje_cg(&sys, &u0, t_final, opts).map_err(domain)?;
            let names = (1..=mf).map(|k| format!("q_{k}")).collect();
            (names, vec![(None, field)], Value::Null)
        }
        other => return Err(usage(format!("unknown mode `{other}`"))),
    };

    let mut w = csv_writer(ctx.sink(&args.out, "csv")?);
    let mut header = names.clone();
    for (eps, _) in &fields {
        header.push(match eps {
            Some(e) => format!("u_eps={}", num(*e)),
            None => "u".into(),
        });
    }
    w.write_record(&header).map_err(csv_err)?;
    let lattice = &fields[0].1.lattice;
    for i in 0..lattice.len() {
        let mut row: Vec<String> = lattice.node(i).iter().map(|v| num(*v)).collect();
        for (_, f) in &fields {
            row.push(if f.masked[i] {
                String::new()
            } else {
                num(f.values[i])
            });
        }
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush()?;
    drop(w);

    let diagnostics = json!({
        "mode": mode,
        "h": h,
        "nodes": lattice.len(),
        "runs": fields.iter().map(|(e, f)| field_json(*e, f)).collect::<Vec<_>>(),
        "lipschitz": lipschitz,
    });
    if let Some(p) = &args.diagnostics {
        let p = match (&ctx.out_dir, p.is_relative()) {
            (Some(dir), true) => dir.join(p),
            _ => p.clone(),
        };
        write_json(open(&p)?, &diagnostics)?;
    } else if args.out.is_some() || ctx.out_dir.is_some() {
        write_json(Box::new(BufWriter::new(io::stdout())), &diagnostics)?;
    }
    Ok(())
}

pub fn parse_ids(only: Option<&str>) -> Result<Vec<u8>, CliError> {
    match only {
        None => Ok(repro::CRITERIA.iter().map(|c| c.0).collect()),
        Some(s) => s
            .split(',')
            .map(|t| {
                t.trim()
                    .parse::<u8>()
                    .ok()
                    .filter(|id| repro::CRITERIA.iter().any(|c| c.0 == *id))
                    .ok_or_else(|| usage(format!("unknown criterion `{t}`")))
            })
            .collect(),
    }
}

pub fn repro(ctx: &Context, args: ReproArgs) -> Result<(), CliError> {
    let ids = parse_ids(args.only.as_deref())?;
    let seed = args.seed.unwrap_or(0);
    let mut out = io::stdout();
    let mut outcomes = Vec::new();
    for id in ids {
        let o = repro::run_criterion(id, seed);
        writeln!(out, "{}", o.line())?;
        out.flush()?;
        outcomes.push(o);
    }
    let passed = outcomes.iter().filter(|o| o.passed).count();
    writeln!(out, "{passed}/{} criteria passed", outcomes.len())?;
    let json_path = args
        .json
        .clone()
        .or_else(|| ctx.out_dir.as_ref().map(|d| d.join("repro.json")));
    if let Some(p) = json_path {
        write_json(open(&p)?, &json!({"seed": seed, "outcomes": outcomes}))?;
    }
    if passed == outcomes.len() {
        Ok(())
    } else {
        Err(CliError::Domain(format!(
            "repro: {} of {} criteria failed",
            outcomes.len() - passed,
            outcomes.len()
        )))
    }
}
