//! Limited-memory BFGS with a strong-Wolfe line search (two-loop recursion,
//! cubic-free bisection zoom). Objectives may fail at a trial point (for
//! example an inverted strain state); such trials are treated as "too far"
//! and the line search backs off.

use crate::error::Result;
use nalgebra::DVector;
use std::collections::VecDeque;

#[derive(Debug, Clone, Copy)]
pub struct LbfgsOptions {
    pub memory: usize,
    pub max_iter: usize,
    pub grad_tol: f64,
    pub c1: f64,
    pub c2: f64,
}

impl Default for LbfgsOptions {
    fn default() -> Self {
        Self {
            memory: 10,
            max_iter: 500,
            grad_tol: 1e-8,
            c1: 1e-4,
            c2: 0.9,
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
    /// Set when a line search failed; the best iterate seen is returned.
    pub line_search_failed: bool,
}

struct Eval {
    value: f64,
    grad: DVector<f64>,
}

/// Minimize `objective` from `x0`. The objective returns value and gradient;
/// an `Err` at the starting point propagates, an `Err` at a trial point
/// shortens the step.
pub fn lbfgs_minimize<F>(
    mut objective: F,
    x0: DVector<f64>,
    opts: LbfgsOptions,
) -> Result<LbfgsResult>
where
    F: FnMut(&DVector<f64>) -> Result<(f64, DVector<f64>)>,
{
    let n = x0.len();
    let mut x = x0;
    let (f0, g0) = objective(&x)?;
    let mut eval = Eval {
        value: f0,
        grad: g0,
    };

    let mut best_x = x.clone();
    let mut best_f = eval.value;
    let mut pairs: VecDeque<(DVector<f64>, DVector<f64>, f64)> = VecDeque::new();
    let mut line_search_failed = false;
    let mut iterations = 0usize;

    let converged = |e: &Eval| e.grad.norm() <= opts.grad_tol * (1.0 + e.value.abs());

    while !converged(&eval) && iterations < opts.max_iter {
        // Two-loop recursion for p = -H g.
        let mut q = eval.grad.clone();
        let mut alphas = Vec::with_capacity(pairs.len());
        for (s, y, rho) in pairs.iter().rev() {
            let a = rho * s.dot(&q);
            q.axpy(-a, y, 1.0);
            alphas.push(a);
        }
        if let Some((s, y, _)) = pairs.back() {
            let gamma = s.dot(y) / y.dot(y);
            q *= gamma;
        }
        for ((s, y, rho), a) in pairs.iter().zip(alphas.into_iter().rev()) {
            let b = rho * y.dot(&q);
            q.axpy(a - b, s, 1.0);
        }
        let mut p = -q;
        let mut dphi0 = p.dot(&eval.grad);
        if dphi0 >= 0.0 {
            // Curvature information went bad; restart from steepest descent.
            pairs.clear();
            p = -eval.grad.clone();
            dphi0 = p.dot(&eval.grad);
            if dphi0 == 0.0 {
                break;
            }
        }

        match strong_wolfe(&mut objective, &x, &eval, &p, dphi0, &opts) {
            Some((alpha, new_eval)) => {
                let step = &p * alpha;
                let new_x = &x + &step;
                let y = &new_eval.grad - &eval.grad;
                let sy = step.dot(&y);
                if sy > 1e-10 * step.norm() * y.norm() {
                    if pairs.len() == opts.memory {
                        pairs.pop_front();
                    }
                    let rho = 1.0 / sy;
                    pairs.push_back((step, y, rho));
                }
                x = new_x;
                eval = new_eval;
                if eval.value < best_f {
                    best_f = eval.value;
                    best_x = x.clone();
                }
            }
            None => {
                line_search_failed = true;
                break;
            }
        }
        iterations += 1;
    }

    let done = converged(&eval);
    let (x, value, grad_norm) = if done || eval.value <= best_f {
        let gn = eval.grad.norm();
        (x, eval.value, gn)
    } else {
        // Return the best iterate when the search broke down.
        let (fv, gv) = objective(&best_x)?;
        (best_x, fv, gv.norm())
    };
    let _ = n;
    Ok(LbfgsResult {
        x,
        value,
        grad_norm,
        iterations,
        converged: done,
        line_search_failed,
    })
}

/// Strong-Wolfe line search; returns the accepted step and its evaluation.
fn strong_wolfe<F>(
    objective: &mut F,
    x: &DVector<f64>,
    at: &Eval,
    p: &DVector<f64>,
    dphi0: f64,
    opts: &LbfgsOptions,
) -> Option<(f64, Eval)>
where
    F: FnMut(&DVector<f64>) -> Result<(f64, DVector<f64>)>,
{
    let phi0 = at.value;
    let mut try_eval = |alpha: f64| -> Option<(f64, f64, Eval)> {
        let xt = x + p * alpha;
        match objective(&xt) {
            Ok((f, g)) => {
                let d = g.dot(p);
                Some((f, d, Eval { value: f, grad: g }))
            }
            Err(_) => None,
        }
    };

    let armijo = |alpha: f64, f: f64| f <= phi0 + opts.c1 * alpha * dphi0;
    let curvature = |d: f64| d.abs() <= opts.c2 * dphi0.abs();

    let zoom = |objective_eval: &mut dyn FnMut(f64) -> Option<(f64, f64, Eval)>,
                mut lo: f64,
                mut f_lo: f64,
                mut hi: f64|
     -> Option<(f64, Eval)> {
        for _ in 0..50 {
            let mid = 0.5 * (lo + hi);
            match objective_eval(mid) {
                None => {
                    hi = mid;
                }
                Some((f, d, e)) => {
                    if !armijo(mid, f) || f >= f_lo {
                        hi = mid;
                    } else {
                        if curvature(d) {
                            return Some((mid, e));
                        }
                        if d * (hi - lo) >= 0.0 {
                            hi = lo;
                        }
                        lo = mid;
                        f_lo = f;
                    }
                }
            }
            if (hi - lo).abs() <= 1e-16 * lo.abs().max(1.0) {
                break;
            }
        }
        None
    };

    let mut prev_alpha = 0.0f64;
    let mut prev_f = phi0;
    let mut alpha = 1.0f64;
    const ALPHA_MAX: f64 = 1e6;
    for i in 0..60 {
        match try_eval(alpha) {
            None => {
                // Inadmissible trial point: bisect back toward the last good one.
                return zoom(&mut try_eval, prev_alpha, prev_f, alpha);
            }
            Some((f, d, e)) => {
                if !armijo(alpha, f) || (i > 0 && f >= prev_f) {
                    return zoom(&mut try_eval, prev_alpha, prev_f, alpha);
                }
                if curvature(d) {
                    return Some((alpha, e));
                }
                if d >= 0.0 {
                    return zoom(&mut try_eval, alpha, f, prev_alpha);
                }
                prev_alpha = alpha;
                prev_f = f;
                alpha = (2.0 * alpha).min(ALPHA_MAX);
                if alpha >= ALPHA_MAX {
                    return None;
                }
            }
        }
    }
    None
}
