//! Optimizers: L-BFGS with Armijo backtracking, proximal gradient for the
//! l1 penalty, and Adam for mini-batch training.

use std::collections::VecDeque;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn inf_norm(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, x| m.max(x.abs()))
}

const ARMIJO_C1: f64 = 1e-4;
const MAX_BACKTRACKS: usize = 60;

/// Minimizes a smooth objective in place. `objective(x, grad)` returns the
/// value at `x` and writes the gradient. Returns the objective after every
/// accepted iterate, starting with the initial point; the sequence is
/// non-increasing.
pub(crate) fn lbfgs(
    x: &mut [f64],
    mut objective: impl FnMut(&[f64], &mut [f64]) -> f64,
    max_iter: usize,
    tolerance: f64,
    memory: usize,
) -> Vec<f64> {
    let n = x.len();
    let mut grad = vec![0.0; n];
    let mut f = objective(x, &mut grad);
    let mut trace = vec![f];
    let mut history: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(memory);
    let mut dir = vec![0.0; n];
    let mut x_new = vec![0.0; n];
    let mut g_new = vec![0.0; n];
    let mut alpha = vec![0.0; memory];

    for _ in 0..max_iter {
        if !f.is_finite() || inf_norm(&grad) < tolerance {
            break;
        }
        // two-loop recursion: dir = -H·grad
        dir.iter_mut().zip(&grad).for_each(|(d, g)| *d = *g);
        for (i, (s, y, rho)) in history.iter().enumerate().rev() {
            let a = rho * dot(s, &dir);
            alpha[i] = a;
            dir.iter_mut().zip(y).for_each(|(d, yv)| *d -= a * yv);
        }
        if let Some((s, y, _)) = history.back() {
            let gamma = dot(s, y) / dot(y, y);
            dir.iter_mut().for_each(|d| *d *= gamma);
        }
        for (i, (s, y, rho)) in history.iter().enumerate() {
            let b = rho * dot(y, &dir);
            let a = alpha[i];
            dir.iter_mut().zip(s).for_each(|(d, sv)| *d += (a - b) * sv);
        }
        dir.iter_mut().for_each(|d| *d = -*d);

        let mut slope = dot(&grad, &dir);
        if slope >= 0.0 || !slope.is_finite() {
            history.clear();
            dir.iter_mut().zip(&grad).for_each(|(d, g)| *d = -g);
            slope = dot(&grad, &dir);
        }
        let mut step = if history.is_empty() { (1.0 / inf_norm(&grad).max(1e-300)).min(1.0) } else { 1.0 };

        let mut accepted = None;
        for _ in 0..MAX_BACKTRACKS {
            x_new.iter_mut().zip(x.iter().zip(&dir)).for_each(|(xn, (xv, d))| *xn = xv + step * d);
            let f_new = objective(&x_new, &mut g_new);
            if f_new.is_finite() && f_new <= f + ARMIJO_C1 * step * slope {
                accepted = Some(f_new);
                break;
            }
            step *= 0.5;
        }
        let Some(f_new) = accepted else { break };

        let s: Vec<f64> = x_new.iter().zip(x.iter()).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_new.iter().zip(&grad).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        x.copy_from_slice(&x_new);
        grad.copy_from_slice(&g_new);
        let decrease = f - f_new;
        f = f_new;
        trace.push(f);
        if sy > 1e-12 * dot(&y, &y).max(1e-300) {
            if history.len() == memory {
                history.pop_front();
            }
            history.push_back((s, y, 1.0 / sy));
        }
        if decrease <= 1e-15 * f.abs().max(1.0) {
            break;
        }
    }
    trace
}

/// Proximal gradient descent (ISTA with backtracking) for
/// `smooth(x) + lambda · Σ_{penalized} |x_i|`. Returns the full objective
/// after every accepted iterate; the sequence is non-increasing.
pub(crate) fn proximal_gradient(
    x: &mut [f64],
    mut smooth: impl FnMut(&[f64], &mut [f64]) -> f64,
    lambda: f64,
    penalized: impl Fn(usize) -> bool,
    max_iter: usize,
    tolerance: f64,
) -> Vec<f64> {
    let n = x.len();
    let l1 = |v: &[f64]| -> f64 { v.iter().enumerate().filter(|(i, _)| penalized(*i)).map(|(_, a)| a.abs()).sum() };
    let mut grad = vec![0.0; n];
    let mut f = smooth(x, &mut grad);
    let mut trace = vec![f + lambda * l1(x)];
    let mut step = 1.0;
    let mut x_new = vec![0.0; n];
    let mut g_new = vec![0.0; n];

    for _ in 0..max_iter {
        if !f.is_finite() {
            break;
        }
        let mut accepted = None;
        for _ in 0..MAX_BACKTRACKS {
            for i in 0..n {
                let z = x[i] - step * grad[i];
                x_new[i] = if penalized(i) { soft_threshold(z, step * lambda) } else { z };
            }
            let f_new = smooth(&x_new, &mut g_new);
            let mut lin = 0.0;
            let mut quad = 0.0;
            for i in 0..n {
                let d = x_new[i] - x[i];
                lin += grad[i] * d;
                quad += d * d;
            }
            if f_new.is_finite() && f_new <= f + lin + quad / (2.0 * step) {
                accepted = Some((f_new, quad.sqrt()));
                break;
            }
            step *= 0.5;
        }
        let Some((f_new, moved)) = accepted else { break };
        x.copy_from_slice(&x_new);
        grad.copy_from_slice(&g_new);
        let total = f_new + lambda * l1(x);
        let prev = *trace.last().unwrap();
        f = f_new;
        trace.push(total);
        if moved / step < tolerance || prev - total <= 1e-15 * total.abs().max(1.0) {
            break;
        }
        step *= 2.0;
    }
    trace
}

fn soft_threshold(z: f64, t: f64) -> f64 {
    if z > t {
        z - t
    } else if z < -t {
        z + t
    } else {
        0.0
    }
}

/// Adam with bias-corrected first and second moment estimates.
#[derive(Clone, Debug)]
pub(crate) struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
    beta1: f64,
    beta2: f64,
    eps: f64,
}

impl Adam {
    pub(crate) fn new(n: usize) -> Self {
        Adam { m: vec![0.0; n], v: vec![0.0; n], t: 0, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }

    /// Advances the step counter; returns the bias corrections for this step.
    pub(crate) fn begin_step(&mut self) -> (f64, f64) {
        self.t += 1;
        (1.0 - self.beta1.powi(self.t), 1.0 - self.beta2.powi(self.t))
    }

    /// Updates `params`, a contiguous slice starting at `offset` of the
    /// optimizer's parameter space.
    pub(crate) fn update(&mut self, offset: usize, params: &mut [f64], grads: &[f64], lr: f64, corr: (f64, f64)) {
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        let m = &mut self.m[offset..offset + params.len()];
        let v = &mut self.v[offset..offset + params.len()];
        for i in 0..params.len() {
            let g = grads[i];
            m[i] = b1 * m[i] + (1.0 - b1) * g;
            v[i] = b2 * v[i] + (1.0 - b2) * g * g;
            let mhat = m[i] / corr.0;
            let vhat = v[i] / corr.1;
            params[i] -= lr * mhat / (vhat.sqrt() + eps);
        }
    }
}
