//! Limited-memory BFGS with a backtracking line search that treats `+∞` as
//! an infeasible trial point.

use std::collections::VecDeque;

use nalgebra::DVector;

#[derive(Debug, Clone, Copy)]
pub struct LbfgsOptions {
    pub memory: usize,
    pub max_iters: usize,
    /// Converged when `‖∇f‖ ≤ grad_tol·(1 + |f|)`.
    pub grad_tol: f64,
}

impl Default for LbfgsOptions {
    fn default() -> Self {
        LbfgsOptions {
            memory: 10,
            max_iters: 500,
            grad_tol: 1e-8,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LbfgsResult {
    pub x: DVector<f64>,
    pub value: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Minimizes `f`, which returns the value and gradient (value `+∞` when `x`
/// is infeasible). The starting point must be feasible.
pub fn minimize<F>(mut f: F, x0: DVector<f64>, opts: LbfgsOptions) -> LbfgsResult
where
    F: FnMut(&DVector<f64>) -> (f64, DVector<f64>),
{
    let mut x = x0;
    let (mut fx, mut g) = f(&x);
    let mut history: VecDeque<(DVector<f64>, DVector<f64>, f64)> = VecDeque::new();
    let mut stalls = 0;
    let mut iterations = 0;
    let mut converged = false;
    // Predicted first-order decrease of the last search direction.
    let mut last_slope = f64::INFINITY;

    while iterations < opts.max_iters {
        let gnorm = g.norm();
        if !fx.is_finite() {
            break;
        }
        if gnorm <= opts.grad_tol * (1.0 + fx.abs()) {
            converged = true;
            break;
        }
        iterations += 1;

        // Two-loop recursion.
        let mut d = -g.clone();
        let mut alphas = Vec::with_capacity(history.len());
        for (s, y, rho) in history.iter().rev() {
            let a = rho * s.dot(&d);
            d.axpy(-a, y, 1.0);
            alphas.push(a);
        }
        if let Some((s, y, _)) = history.back() {
            d *= s.dot(y) / y.dot(y);
        } else {
            d *= 1.0 / gnorm.max(1.0);
        }
        for ((s, y, rho), a) in history.iter().zip(alphas.iter().rev()) {
            let b = rho * y.dot(&d);
            d.axpy(a - b, s, 1.0);
        }
        let mut slope = g.dot(&d);
        if !(slope < 0.0) {
            history.clear();
            d = -g.clone() / gnorm.max(1.0);
            slope = g.dot(&d);
        }

        last_slope = slope.abs();
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let trial = &x + &d * step;
            let (ft, gt) = f(&trial);
            if ft.is_finite() && ft <= fx + 1e-4 * step * slope {
                accepted = Some((trial, ft, gt));
                break;
            }
            step *= 0.5;
        }
        let Some((xn, fnew, gn)) = accepted else {
            if history.is_empty() {
                break;
            }
            history.clear();
            continue;
        };
        let s = &xn - &x;
        let y = &gn - &g;
        let sy = s.dot(&y);
        if sy > 1e-12 * s.norm() * y.norm() {
            if history.len() == opts.memory {
                history.pop_front();
            }
            history.push_back((s, y, 1.0 / sy));
        }
        let decrease = fx - fnew;
        x = xn;
        fx = fnew;
        g = gn;
        if decrease <= 1e-15 * (1.0 + fx.abs()) {
            stalls += 1;
            if stalls >= 5 {
                break;
            }
        } else {
            stalls = 0;
        }
    }
    let grad_norm = g.norm();
    // A direction whose predicted decrease is below rounding cannot be improved on.
    let at_floor = fx.is_finite() && last_slope <= 1e-13 * (1.0 + fx.abs());
    LbfgsResult {
        x,
        value: fx,
        grad_norm,
        iterations,
        converged: converged || at_floor || grad_norm <= opts.grad_tol * (1.0 + fx.abs()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rosenbrock_function() {
        let f = |x: &DVector<f64>| {
            let (a, b) = (x[0], x[1]);
            let v = (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2);
            let g = DVector::from_vec(vec![
                -2.0 * (1.0 - a) - 400.0 * a * (b - a * a),
                200.0 * (b - a * a),
            ]);
            (v, g)
        };
        let res = minimize(
            f,
            DVector::from_vec(vec![-1.2, 1.0]),
            LbfgsOptions::default(),
        );
        assert!(res.converged);
        assert!((res.x[0] - 1.0).abs() < 1e-6 && (res.x[1] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn infeasible_region_is_avoided() {
        // Minimum of (x-2)² restricted to x ≤ 1 by returning +∞ outside.
        let f = |x: &DVector<f64>| {
            if x[0] > 1.0 {
                (f64::INFINITY, DVector::zeros(1))
            } else {
                (
                    (x[0] - 2.0).powi(2),
                    DVector::from_vec(vec![2.0 * (x[0] - 2.0)]),
                )
            }
        };
        let res = minimize(f, DVector::from_vec(vec![0.0]), LbfgsOptions::default());
        assert!(res.x[0] <= 1.0 && res.x[0] > 0.99);
        assert!(!res.converged);
    }
}
