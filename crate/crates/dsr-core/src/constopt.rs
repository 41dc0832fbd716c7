//! Inner optimization loop: fit an expression's placeholder constants to a
//! dataset by BFGS minimization of mean squared error, with gradients from
//! central finite differences. Expressions carry at most a handful of
//! constants, so the dense inverse-Hessian update is cheap.

use crate::dataset::Dataset;
use crate::expr::{eval_with_constants, Expression};

pub const MAX_ITERS: usize = 100;
pub const GRAD_TOL: f64 = 1e-5;
pub const ARMIJO_C1: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub constants: Vec<f64>,
    pub mse: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Mean squared error of `expr` (with its current constants) on the dataset.
pub fn mse(expr: &Expression, data: &Dataset) -> f64 {
    mse_at(expr, expr.constants(), data)
}

fn mse_at(expr: &Expression, constants: &[f64], data: &Dataset) -> f64 {
    let n = data.len() as f64;
    data.x()
        .iter()
        .zip(data.y())
        .map(|(row, &y)| {
            let yhat = eval_with_constants(expr.traversal(), constants, row)
                .expect("complete expression");
            (y - yhat).powi(2)
        })
        .sum::<f64>()
        / n
}

fn grad_fd(expr: &Expression, c: &[f64], data: &Dataset) -> Vec<f64> {
    let mut g = vec![0.0; c.len()];
    let mut probe = c.to_vec();
    for j in 0..c.len() {
        let h = 1e-6 * (1.0 + c[j].abs());
        probe[j] = c[j] + h;
        let up = mse_at(expr, &probe, data);
        probe[j] = c[j] - h;
        let down = mse_at(expr, &probe, data);
        probe[j] = c[j];
        g[j] = (up - down) / (2.0 * h);
    }
    g
}

/// BFGS from the all-ones start. Returns the best finite iterate seen, so
/// the result is never worse than the initial point.
pub fn optimize_constants(expr: &Expression, data: &Dataset) -> (Expression, FitResult) {
    let k = expr.count_constants();
    if k == 0 {
        let m = mse(expr, data);
        return (
            expr.clone(),
            FitResult { constants: vec![], mse: m, iterations: 0, converged: true },
        );
    }
    let start = vec![1.0; k];
    let result = bfgs(expr, start, data);
    let mut fitted = expr.clone();
    fitted.set_constants(result.constants.clone()).expect("constant count unchanged");
    (fitted, result)
}

/// Re-optimize starting from the expression's current constants.
pub fn reoptimize_constants(expr: &Expression, data: &Dataset) -> (Expression, FitResult) {
    let k = expr.count_constants();
    if k == 0 {
        return optimize_constants(expr, data);
    }
    let result = bfgs(expr, expr.constants().to_vec(), data);
    let mut fitted = expr.clone();
    fitted.set_constants(result.constants.clone()).expect("constant count unchanged");
    (fitted, result)
}

fn bfgs(expr: &Expression, start: Vec<f64>, data: &Dataset) -> FitResult {
    let k = start.len();
    let mut c = start.clone();
    let mut f = mse_at(expr, &c, data);
    let mut best_c = c.clone();
    let mut best_f = f;
    if !f.is_finite() {
        // Protected evaluation keeps values finite; squares can still
        // overflow. Fall back to the start.
        return FitResult { constants: start, mse: f64::INFINITY, iterations: 0, converged: false };
    }
    let mut g = grad_fd(expr, &c, data);
    // Inverse Hessian approximation, identity to start.
    let mut hinv = identity(k);
    let mut iterations = 0usize;
    let mut converged = false;

    for _ in 0..MAX_ITERS {
        iterations += 1;
        if norm(&g) < GRAD_TOL || !g.iter().all(|v| v.is_finite()) {
            converged = norm(&g) < GRAD_TOL;
            break;
        }
        let mut dir = matvec(&hinv, &g);
        dir.iter_mut().for_each(|v| *v = -*v);
        let mut slope: f64 = dir.iter().zip(&g).map(|(d, gv)| d * gv).sum();
        if slope >= 0.0 {
            // Not a descent direction; reset to steepest descent.
            hinv = identity(k);
            dir = g.iter().map(|v| -v).collect();
            slope = -g.iter().map(|v| v * v).sum::<f64>();
        }

        // Backtracking line search with the Armijo condition.
        let mut step = 1.0;
        let mut c_new = c.clone();
        let mut f_new = f;
        let mut ok = false;
        for _ in 0..40 {
            for j in 0..k {
                c_new[j] = c[j] + step * dir[j];
            }
            f_new = mse_at(expr, &c_new, data);
            if f_new.is_finite() && f_new <= f + ARMIJO_C1 * step * slope {
                ok = true;
                break;
            }
            step *= 0.5;
        }
        if !ok {
            break;
        }

        let g_new = grad_fd(expr, &c_new, data);
        let s: Vec<f64> = (0..k).map(|j| c_new[j] - c[j]).collect();
        let yv: Vec<f64> = (0..k).map(|j| g_new[j] - g[j]).collect();
        let sy: f64 = s.iter().zip(&yv).map(|(a, b)| a * b).sum();
        if sy > 1e-10 {
            bfgs_update(&mut hinv, &s, &yv, sy);
        }
        c = c_new;
        f = f_new;
        g = g_new;
        if f < best_f {
            best_f = f;
            best_c = c.clone();
        }
    }
    if norm(&g) < GRAD_TOL {
        converged = true;
    }
    FitResult { constants: best_c, mse: best_f, iterations, converged }
}

fn identity(k: usize) -> Vec<f64> {
    let mut m = vec![0.0; k * k];
    for j in 0..k {
        m[j * k + j] = 1.0;
    }
    m
}

fn matvec(m: &[f64], v: &[f64]) -> Vec<f64> {
    let k = v.len();
    (0..k).map(|i| (0..k).map(|j| m[i * k + j] * v[j]).sum()).collect()
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Standard BFGS inverse-Hessian update:
/// `H <- (I - rho s y^T) H (I - rho y s^T) + rho s s^T`.
fn bfgs_update(hinv: &mut Vec<f64>, s: &[f64], y: &[f64], sy: f64) {
    let k = s.len();
    let rho = 1.0 / sy;
    let hy = matvec(hinv, y);
    let yhy: f64 = y.iter().zip(&hy).map(|(a, b)| a * b).sum();
    let mut next = vec![0.0; k * k];
    for i in 0..k {
        for j in 0..k {
            next[i * k + j] = hinv[i * k + j] - rho * (s[i] * hy[j] + hy[i] * s[j])
                + rho * rho * yhy * s[i] * s[j]
                + rho * s[i] * s[j];
        }
    }
    *hinv = next;
}
