//! Adaptive one-step integrators: a linearly implicit second-order Rosenbrock
//! method (the ode23s pair) for stiff problems and Dormand–Prince 5(4) for
//! non-stiff ones.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OdeError {
    #[error("ode: step size underflow at t = {t} (h = {h:e})")]
    StepUnderflow { t: f64, h: f64 },
    #[error("ode: negative state {value:e} in component {index} at t = {t}")]
    NegativeOvershoot { t: f64, index: usize, value: f64 },
    #[error("ode: maximum number of steps reached at t = {t}")]
    MaxSteps { t: f64 },
    #[error("ode: non-finite state at t = {t}")]
    NonFinite { t: f64 },
    #[error("ode: singular iteration matrix at t = {t}")]
    Singular { t: f64 },
    #[error("ode: {0}")]
    Hook(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    /// Rosenbrock when a Jacobian is available, otherwise Dormand–Prince.
    Auto,
    Rosenbrock,
    Explicit,
}

#[derive(Debug, Clone)]
pub struct StepControl {
    pub rtol: f64,
    pub atol: f64,
    pub h_init: Option<f64>,
    pub h_min: f64,
    pub h_max: Option<f64>,
    pub max_steps: usize,
    pub method: Method,
    /// Record only these times (hit exactly). `None` records every accepted step.
    pub output_times: Option<Vec<f64>>,
    /// Enforce nonnegative states: clamp entries in `[-1e-12, 0)`, reject steps below.
    pub nonnegative: bool,
}

impl Default for StepControl {
    fn default() -> Self {
        StepControl {
            rtol: 1e-8,
            atol: 1e-11,
            h_init: None,
            h_min: 1e-14,
            h_max: None,
            max_steps: 2_000_000,
            method: Method::Auto,
            output_times: None,
            nonnegative: true,
        }
    }
}

pub const NEGATIVE_CLAMP: f64 = 1e-12;
/// A trajectory that keeps hitting zero without a clean step is aborted.
const MAX_NEGATIVE_STREAK: usize = 60;

#[derive(Debug, Clone, Default)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<DVector<f64>>,
    pub accepted: usize,
    pub rejected: usize,
}

impl Trajectory {
    pub fn last(&self) -> &DVector<f64> {
        self.states.last().expect("empty trajectory")
    }
}

pub type Rhs<'a> = dyn Fn(f64, &DVector<f64>) -> DVector<f64> + 'a;
pub type Jac<'a> = dyn Fn(f64, &DVector<f64>) -> DMatrix<f64> + 'a;
pub type Hook<'a> = dyn FnMut(f64, &mut DVector<f64>) -> Result<(), String> + 'a;

struct Attempt {
    y: DVector<f64>,
    err: f64,
    order: f64,
}

fn err_norm(err: &DVector<f64>, y0: &DVector<f64>, y1: &DVector<f64>, ctrl: &StepControl) -> f64 {
    let mut worst: f64 = 0.0;
    for i in 0..err.len() {
        let scale = ctrl.atol + ctrl.rtol * y0[i].abs().max(y1[i].abs());
        worst = worst.max(err[i].abs() / scale);
    }
    if worst.is_nan() {
        f64::INFINITY
    } else {
        worst
    }
}

fn rosenbrock_step(
    f: &Rhs,
    jac: &Jac,
    t: f64,
    y: &DVector<f64>,
    f0: &DVector<f64>,
    h: f64,
    ctrl: &StepControl,
) -> Result<Attempt, OdeError> {
    let d = 1.0 / (2.0 + std::f64::consts::SQRT_2);
    let e32 = 6.0 + std::f64::consts::SQRT_2;
    let n = y.len();
    let w = DMatrix::identity(n, n) - jac(t, y) * (h * d);
    let lu = w.lu();
    let solve = |b: DVector<f64>| lu.solve(&b).ok_or(OdeError::Singular { t });
    let k1 = solve(f0.clone())?;
    let f1 = f(t + 0.5 * h, &(y + &k1 * (0.5 * h)));
    let k2 = solve(&f1 - &k1)? + &k1;
    let y1 = y + &k2 * h;
    let f2 = f(t + h, &y1);
    let k3 = solve(&f2 - (&k2 - &f1) * e32 - (&k1 - f0) * 2.0)?;
    let err = (&k1 - &k2 * 2.0 + &k3) * (h / 6.0);
    let e = err_norm(&err, y, &y1, ctrl);
    Ok(Attempt {
        y: y1,
        err: e,
        order: 3.0,
    })
}

const DP_C: [f64; 6] = [0.2, 0.3, 0.8, 8.0 / 9.0, 1.0, 1.0];
const DP_A: [[f64; 6]; 6] = [
    [0.2, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
    [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];
const DP_E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

fn dopri_step(
    f: &Rhs,
    t: f64,
    y: &DVector<f64>,
    f0: &DVector<f64>,
    h: f64,
    ctrl: &StepControl,
) -> Attempt {
    let mut k: Vec<DVector<f64>> = Vec::with_capacity(7);
    k.push(f0.clone());
    for s in 0..6 {
        let mut ys = y.clone();
        for (j, kj) in k.iter().enumerate() {
            let a = DP_A[s][j];
            if a != 0.0 {
                ys.axpy(h * a, kj, 1.0);
            }
        }
        let ks = f(t + DP_C[s] * h, &ys);
        k.push(ks);
        if s == 5 {
            let mut err = DVector::zeros(y.len());
            for (j, kj) in k.iter().enumerate() {
                if DP_E[j] != 0.0 {
                    err.axpy(h * DP_E[j], kj, 1.0);
                }
            }
            let e = err_norm(&err, y, &ys, ctrl);
            return Attempt {
                y: ys,
                err: e,
                order: 5.0,
            };
        }
    }
    unreachable!()
}

/// Integrates `y' = f(t, y)` from `t0` to `t1`. The optional hook runs after
/// each accepted step and may modify the state (e.g. re-projection).
pub fn integrate(
    f: &Rhs,
    jac: Option<&Jac>,
    y0: &DVector<f64>,
    t0: f64,
    t1: f64,
    ctrl: &StepControl,
    mut hook: Option<&mut Hook>,
) -> Result<Trajectory, OdeError> {
    let method = match (ctrl.method, jac) {
        (Method::Rosenbrock, None) => {
            return Err(OdeError::Hook("Rosenbrock method needs a Jacobian".into()))
        }
        (Method::Auto, Some(_)) | (Method::Rosenbrock, Some(_)) => Method::Rosenbrock,
        _ => Method::Explicit,
    };
    let span = t1 - t0;
    let mut out = Trajectory::default();
    let mut targets: Vec<f64> = match &ctrl.output_times {
        Some(ts) => ts.iter().copied().filter(|&s| s > t0 && s <= t1).collect(),
        None => Vec::new(),
    };
    targets.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let record_all = ctrl.output_times.is_none();
    let record_start = record_all
        || ctrl
            .output_times
            .as_ref()
            .is_some_and(|ts| ts.contains(&t0));
    if record_start {
        out.times.push(t0);
        out.states.push(y0.clone());
    }
    if span <= 0.0 {
        return Ok(out);
    }

    let mut t = t0;
    let mut y = y0.clone();
    let mut fy = f(t, &y);
    let h_max = ctrl.h_max.unwrap_or(span);
    let mut h = ctrl.h_init.unwrap_or_else(|| {
        let ynorm = y.amax() + ctrl.atol;
        let fnorm = fy.amax() + 1e-300;
        (0.01 * ynorm / fnorm).min(0.01 * span).max(1e-10 * span)
    });
    h = h.min(h_max);
    let mut next_target = 0;
    let mut last_negative: Option<(usize, f64)> = None;
    // Negativity rejections since the last step that needed no clamping.
    let mut negative_streak = 0usize;

    while t < t1 {
        if out.accepted + out.rejected >= ctrl.max_steps {
            return Err(OdeError::MaxSteps { t });
        }
        let stop = if record_all {
            t1
        } else {
            targets.get(next_target).copied().unwrap_or(t1)
        };
        let mut h_try = h;
        let mut hits = false;
        if t + h_try >= stop - 1e-14 * span.max(1.0) {
            h_try = stop - t;
            hits = true;
        }
        if h_try < ctrl.h_min && !hits {
            return Err(match last_negative {
                Some((index, value)) => OdeError::NegativeOvershoot { t, index, value },
                None => OdeError::StepUnderflow { t, h: h_try },
            });
        }
        let attempt = match method {
            Method::Rosenbrock => rosenbrock_step(f, jac.unwrap(), t, &y, &fy, h_try, ctrl)?,
            _ => dopri_step(f, t, &y, &fy, h_try, ctrl),
        };
        let factor = if attempt.err == 0.0 {
            5.0
        } else {
            (0.9 * attempt.err.powf(-1.0 / attempt.order)).clamp(0.2, 5.0)
        };
        if !(attempt.err <= 1.0) {
            out.rejected += 1;
            h = h_try * factor.min(0.9);
            if h < ctrl.h_min {
                return Err(OdeError::StepUnderflow { t, h });
            }
            continue;
        }
        let mut y1 = attempt.y;
        if y1.iter().any(|v| !v.is_finite()) {
            return Err(OdeError::NonFinite { t: t + h_try });
        }
        if ctrl.nonnegative {
            let worst = y1
                .iter()
                .enumerate()
                .min_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .map(|(i, &v)| (i, v));
            if let Some((index, value)) = worst {
                if value < -NEGATIVE_CLAMP {
                    out.rejected += 1;
                    negative_streak += 1;
                    last_negative = Some((index, value));
                    h = h_try * 0.5;
                    if h < ctrl.h_min || negative_streak > MAX_NEGATIVE_STREAK {
                        return Err(OdeError::NegativeOvershoot {
                            t: t + h_try,
                            index,
                            value,
                        });
                    }
                    continue;
                }
            }
            let mut clamped = false;
            for v in y1.iter_mut() {
                if *v < 0.0 {
                    *v = 0.0;
                    clamped = true;
                }
            }
            if !clamped {
                negative_streak = 0;
                last_negative = None;
            }
        }
        t = if hits { stop } else { t + h_try };
        if let Some(hook) = hook.as_deref_mut() {
            hook(t, &mut y1).map_err(OdeError::Hook)?;
        }
        y = y1;
        fy = f(t, &y);
        out.accepted += 1;
        let hit_target = hits && !record_all && next_target < targets.len();
        if record_all || hit_target {
            out.times.push(t);
            out.states.push(y.clone());
        }
        if hit_target {
            next_target += 1;
        }
        // Keep the unclipped proposal so hitting an output time does not shrink later steps.
        h = if hits {
            h.max(h_try * factor)
        } else {
            h_try * factor
        }
        .min(h_max);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn exp_decay(method: Method) -> f64 {
        let f = |_t: f64, y: &DVector<f64>| -y.clone();
        let j = |_t: f64, y: &DVector<f64>| -DMatrix::identity(y.len(), y.len());
        let ctrl = StepControl {
            method,
            rtol: 1e-10,
            atol: 1e-13,
            ..Default::default()
        };
        let y0 = DVector::from_vec(vec![1.0, 2.0]);
        let traj = integrate(&f, Some(&j), &y0, 0.0, 2.0, &ctrl, None).unwrap();
        assert_eq!(*traj.times.last().unwrap(), 2.0);
        (traj.last()[1] - 2.0 * (-2.0f64).exp()).abs()
    }

    #[test]
    fn both_methods_converge_on_linear_decay() {
        let e = exp_decay(Method::Rosenbrock);
        assert!(e < 1e-7, "{e:e}");
        assert!(exp_decay(Method::Explicit) < 1e-9);
    }

    #[test]
    fn rosenbrock_handles_stiffness() {
        // y0 relaxes onto y1 = e^{-t} on a 1e-6 time scale.
        let f = |_t: f64, y: &DVector<f64>| DVector::from_vec(vec![-1e6 * (y[0] - y[1]), -y[1]]);
        let j = |_t: f64, _y: &DVector<f64>| DMatrix::from_row_slice(2, 2, &[-1e6, 1e6, 0.0, -1.0]);
        let ctrl = StepControl {
            method: Method::Rosenbrock,
            rtol: 1e-6,
            atol: 1e-9,
            nonnegative: false,
            ..Default::default()
        };
        let traj = integrate(
            &f,
            Some(&j),
            &DVector::from_vec(vec![0.0, 1.0]),
            0.0,
            1.0,
            &ctrl,
            None,
        )
        .unwrap();
        assert!((traj.last()[0] - (-1f64).exp()).abs() < 1e-5);
        assert!(traj.accepted < 5000, "{} steps", traj.accepted);
    }

    #[test]
    fn output_times_hit_exactly() {
        let f = |_t: f64, y: &DVector<f64>| -y.clone();
        let ctrl = StepControl {
            method: Method::Explicit,
            output_times: Some(vec![0.0, 0.25, 0.5, 1.0]),
            ..Default::default()
        };
        let traj = integrate(
            &f,
            None,
            &DVector::from_vec(vec![1.0]),
            0.0,
            1.0,
            &ctrl,
            None,
        )
        .unwrap();
        assert_eq!(traj.times, vec![0.0, 0.25, 0.5, 1.0]);
        for (t, y) in traj.times.iter().zip(&traj.states) {
            assert!((y[0] - (-t).exp()).abs() < 1e-7);
        }
    }

    #[test]
    fn negative_states_are_rejected_not_accepted() {
        // y' = -1 reaches zero at t = 1; the integrator must stop there.
        let f = |_t: f64, _y: &DVector<f64>| DVector::from_vec(vec![-1.0]);
        let ctrl = StepControl {
            method: Method::Explicit,
            ..Default::default()
        };
        let err = integrate(
            &f,
            None,
            &DVector::from_vec(vec![1.0]),
            0.0,
            2.0,
            &ctrl,
            None,
        )
        .unwrap_err();
        assert!(matches!(err, OdeError::NegativeOvershoot { .. }), "{err:?}");
    }

    #[test]
    fn hook_can_modify_state() {
        let f = |_t: f64, y: &DVector<f64>| DVector::from_vec(vec![1.0, -y[1]]);
        let mut calls = 0;
        let mut hook = |_t: f64, y: &mut DVector<f64>| {
            calls += 1;
            y[0] = 0.0;
            Ok(())
        };
        let ctrl = StepControl {
            method: Method::Explicit,
            ..Default::default()
        };
        let traj = integrate(
            &f,
            None,
            &DVector::from_vec(vec![0.0, 1.0]),
            0.0,
            1.0,
            &ctrl,
            Some(&mut hook),
        )
        .unwrap();
        assert_eq!(traj.last()[0], 0.0);
        assert!(calls > 0);
    }
}
