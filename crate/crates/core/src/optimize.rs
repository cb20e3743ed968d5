//! Small numerical optimizers used by the recalibrators.

use std::collections::VecDeque;

/// Golden-section search for a minimum of `f` on `[lo, hi]`.
///
/// Stops once the bracket is narrower than `tol`. Returns the best point
/// evaluated, which is never worse than the bracket midpoint.
pub fn golden_section<F: FnMut(f64) -> f64>(mut f: F, lo: f64, hi: f64, tol: f64) -> (f64, f64) {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (lo.min(hi), lo.max(hi));
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    let (mut best_x, mut best_f) = if fc <= fd { (c, fc) } else { (d, fd) };
    while b - a > tol {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
            if fc < best_f {
                best_x = c;
                best_f = fc;
            }
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
            if fd < best_f {
                best_x = d;
                best_f = fd;
            }
        }
    }
    let mid = 0.5 * (a + b);
    let fm = f(mid);
    if fm <= best_f {
        (mid, fm)
    } else {
        (best_x, best_f)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Limited-memory BFGS with a backtracking (Armijo) line search, projected
/// onto the box `|x_i| <= bound`.
///
/// `objective` returns the value and writes the gradient into its second
/// argument. Falls back to steepest descent whenever the quasi-Newton
/// direction is not a descent direction. Converged means the gradient
/// infinity-norm, ignoring coordinates held at the box, dropped below
/// `grad_tol`; the value never increases from the starting point.
pub fn lbfgs<F>(mut objective: F, x0: Vec<f64>, bound: f64, max_iter: usize, grad_tol: f64) -> Minimum
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    const MEMORY: usize = 10;
    let n = x0.len();
    let mut x: Vec<f64> = x0.into_iter().map(|v| v.clamp(-bound, bound)).collect();
    let mut grad = vec![0.0; n];
    let mut value = objective(&x, &mut grad);
    let mut history: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(MEMORY);
    let mut trial = vec![0.0; n];
    let mut trial_grad = vec![0.0; n];
    // A coordinate is held at the box when the gradient pushes it outward.
    let held = |x: &[f64], g: &[f64], i: usize| (x[i] >= bound && g[i] < 0.0) || (x[i] <= -bound && g[i] > 0.0);
    let projected = |x: &[f64], g: &[f64]| -> Vec<f64> {
        (0..n).map(|i| if held(x, g, i) { 0.0 } else { g[i] }).collect()
    };

    for iter in 0..max_iter {
        let pg = projected(&x, &grad);
        if inf_norm(&pg) < grad_tol {
            return Minimum { x, value, iterations: iter, converged: true };
        }
        // two-loop recursion
        let mut dir: Vec<f64> = pg.iter().map(|g| -g).collect();
        let mut alphas = Vec::with_capacity(history.len());
        for (s, y, rho) in history.iter().rev() {
            let a = rho * dot(s, &dir);
            dir.iter_mut().zip(y).for_each(|(d, yi)| *d -= a * yi);
            alphas.push(a);
        }
        if let Some((s, y, _)) = history.back() {
            let gamma = dot(s, y) / dot(y, y);
            dir.iter_mut().for_each(|d| *d *= gamma);
        }
        for ((s, y, rho), a) in history.iter().zip(alphas.iter().rev()) {
            let b = rho * dot(y, &dir);
            dir.iter_mut().zip(s).for_each(|(d, si)| *d += (a - b) * si);
        }
        for (i, d) in dir.iter_mut().enumerate() {
            if held(&x, &grad, i) {
                *d = 0.0;
            }
        }
        let mut slope = dot(&pg, &dir);
        if !(slope < 0.0) {
            history.clear();
            dir = pg.iter().map(|g| -g).collect();
            slope = dot(&pg, &dir);
        }
        // First step of a steepest-descent restart is scaled to unit length.
        let first_step = if history.is_empty() { 1.0 / inf_norm(&dir).max(1.0) } else { 1.0 };
        let mut step = first_step;

        let mut accepted = None;
        for _ in 0..60 {
            for i in 0..n {
                trial[i] = (x[i] + step * dir[i]).clamp(-bound, bound);
            }
            let v = objective(&trial, &mut trial_grad);
            let full = step == first_step;
            // Near the optimum a full step may only tie up to rounding.
            if v.is_finite() && (v <= value + 1e-4 * step * slope || (full && v <= value + 1e-13 * value.abs())) {
                accepted = Some(v);
                break;
            }
            step *= 0.5;
        }
        let Some(new_value) = accepted else {
            return Minimum { x, value, iterations: iter, converged: false };
        };
        let s: Vec<f64> = trial.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = trial_grad.iter().zip(&grad).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-18 {
            if history.len() == MEMORY {
                history.pop_front();
            }
            history.push_back((s, y, 1.0 / sy));
        }
        x.copy_from_slice(&trial);
        grad.copy_from_slice(&trial_grad);
        value = new_value;
    }
    let converged = inf_norm(&projected(&x, &grad)) < grad_tol;
    Minimum { x, value, iterations: max_iter, converged }
}
