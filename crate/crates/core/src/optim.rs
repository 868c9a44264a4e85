//! First-order optimizers shared by the GP and structured-SVM code.
//!
//! * [`lbfgs`]: limited-memory BFGS with a bisection weak-Wolfe line search.
//!   The weak (not strong) Wolfe conditions keep it usable on piecewise-smooth
//!   objectives such as hinge losses, where it is fed subgradients.
//! * [`spg`]: spectral projected gradient for box-constrained problems.
//!
//! Both minimize. Objectives are closures `f(x, grad_out) -> value`; a
//! non-finite value is treated as `+inf` and rejected by the line search.

use std::collections::VecDeque;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    /// Gradient infinity-norm fell below the tolerance.
    GradientTolerance,
    /// Relative decrease of one iteration fell below the tolerance.
    FunctionTolerance,
    /// Line search could not find an acceptable step. On nonsmooth
    /// objectives this is the normal way to stop at a kink.
    NoProgress,
    MaxIterations,
}

#[derive(Debug, Clone)]
pub struct LbfgsConfig {
    pub memory: usize,
    pub max_iter: usize,
    pub grad_tol: f64,
    pub f_tol: f64,
    /// Sufficient-decrease constant.
    pub c1: f64,
    /// Curvature constant (weak Wolfe).
    pub c2: f64,
    pub max_line_search: usize,
}

impl Default for LbfgsConfig {
    fn default() -> Self {
        Self {
            memory: 10,
            max_iter: 100,
            grad_tol: 1e-6,
            f_tol: 0.0,
            c1: 1e-4,
            c2: 0.9,
            max_line_search: 60,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub grad: Vec<f64>,
    pub iterations: usize,
    pub evaluations: usize,
    pub termination: Termination,
    /// Objective value after each accepted iteration (index 0 is the start).
    pub history: Vec<f64>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn inf_norm(a: &[f64]) -> f64 {
    a.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

fn eval<F>(f: &mut F, x: &[f64], g: &mut [f64]) -> f64
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    let v = f(x, g);
    if v.is_finite() && g.iter().all(|x| x.is_finite()) {
        v
    } else {
        f64::INFINITY
    }
}

pub fn lbfgs<F>(mut f: F, x0: &[f64], cfg: &LbfgsConfig) -> Minimum
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    let n = x0.len();
    let mut x = x0.to_vec();
    let mut g = vec![0.0; n];
    let mut fx = eval(&mut f, &x, &mut g);
    let mut evaluations = 1;
    let mut history = vec![fx];
    let mut pairs: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(cfg.memory);

    let mut x_new = vec![0.0; n];
    let mut g_new = vec![0.0; n];
    let mut d = vec![0.0; n];
    let mut alpha_buf = vec![0.0; cfg.memory.max(1)];

    if !fx.is_finite() {
        return Minimum {
            x,
            value: fx,
            grad: g,
            iterations: 0,
            evaluations,
            termination: Termination::NoProgress,
            history,
        };
    }

    let mut termination = Termination::MaxIterations;
    let mut iterations = 0;
    while iterations < cfg.max_iter {
        if inf_norm(&g) <= cfg.grad_tol {
            termination = Termination::GradientTolerance;
            break;
        }

        // two-loop recursion: d = -H g
        d.copy_from_slice(&g);
        for (k, (s, y, rho)) in pairs.iter().enumerate().rev() {
            let a = rho * dot(s, &d);
            alpha_buf[k] = a;
            for (di, yi) in d.iter_mut().zip(y) {
                *di -= a * yi;
            }
        }
        let gamma = match pairs.back() {
            Some((s, y, _)) => dot(s, y) / dot(y, y),
            None => 1.0 / inf_norm(&g).max(1.0),
        };
        for di in d.iter_mut() {
            *di *= gamma;
        }
        for (k, (s, y, rho)) in pairs.iter().enumerate() {
            let b = rho * dot(y, &d);
            for (di, si) in d.iter_mut().zip(s) {
                *di += (alpha_buf[k] - b) * si;
            }
        }
        for di in d.iter_mut() {
            *di = -*di;
        }
        let mut slope = dot(&g, &d);
        if slope >= 0.0 || !slope.is_finite() {
            // not a descent direction; restart from steepest descent
            pairs.clear();
            let scale = 1.0 / inf_norm(&g).max(1.0);
            for (di, gi) in d.iter_mut().zip(&g) {
                *di = -scale * gi;
            }
            slope = dot(&g, &d);
        }

        // weak Wolfe bisection
        let mut lo = 0.0;
        let mut hi = f64::INFINITY;
        let mut step = 1.0;
        let mut accepted = None;
        let mut best_decrease: Option<(f64, f64)> = None;
        for _ in 0..cfg.max_line_search {
            for i in 0..n {
                x_new[i] = x[i] + step * d[i];
            }
            let f_new = eval(&mut f, &x_new, &mut g_new);
            evaluations += 1;
            if f_new > fx + cfg.c1 * step * slope {
                hi = step;
            } else {
                if best_decrease.map_or(true, |(_, v)| f_new < v) {
                    best_decrease = Some((step, f_new));
                }
                if dot(&g_new, &d) < cfg.c2 * slope {
                    lo = step;
                } else {
                    accepted = Some(f_new);
                    break;
                }
            }
            step = if hi.is_finite() { 0.5 * (lo + hi) } else { 2.0 * lo.max(step) };
            if hi.is_finite() && (hi - lo) <= 1e-16 * hi.max(1.0) {
                break;
            }
        }
        let f_new = match accepted {
            Some(v) => v,
            None => match best_decrease {
                // Armijo holds but curvature never did; take the best decrease seen.
                Some((s, v)) if v < fx => {
                    step = s;
                    for i in 0..n {
                        x_new[i] = x[i] + step * d[i];
                    }
                    eval(&mut f, &x_new, &mut g_new);
                    evaluations += 1;
                    v
                }
                _ => {
                    termination = Termination::NoProgress;
                    break;
                }
            },
        };

        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() && sy > 0.0 {
            if pairs.len() == cfg.memory {
                pairs.pop_front();
            }
            pairs.push_back((s, y, 1.0 / sy));
        }
        let decrease = fx - f_new;
        x.copy_from_slice(&x_new);
        g.copy_from_slice(&g_new);
        fx = f_new;
        history.push(fx);
        iterations += 1;
        if cfg.f_tol > 0.0 && decrease <= cfg.f_tol * fx.abs().max(1.0) {
            termination = Termination::FunctionTolerance;
            break;
        }
    }

    Minimum { x, value: fx, grad: g, iterations, evaluations, termination, history }
}

#[derive(Debug, Clone)]
pub struct SpgConfig {
    pub max_iter: usize,
    /// Stop when the projected-gradient step is below this (infinity norm).
    pub tol: f64,
    pub max_backtrack: usize,
}

impl Default for SpgConfig {
    fn default() -> Self {
        Self { max_iter: 60, tol: 1e-8, max_backtrack: 30 }
    }
}

fn project(x: &mut [f64], lo: &[f64], hi: &[f64]) {
    for ((xi, l), h) in x.iter_mut().zip(lo).zip(hi) {
        *xi = xi.clamp(*l, *h);
    }
}

/// Minimizes `f` over the box `[lo, hi]` by spectral projected gradient with
/// monotone Armijo backtracking along the projected direction.
pub fn spg<F>(mut f: F, x0: &[f64], lo: &[f64], hi: &[f64], cfg: &SpgConfig) -> Minimum
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    let n = x0.len();
    let mut x = x0.to_vec();
    project(&mut x, lo, hi);
    let mut g = vec![0.0; n];
    let mut fx = eval(&mut f, &x, &mut g);
    let mut evaluations = 1;
    let mut history = vec![fx];
    let mut termination = Termination::MaxIterations;
    if !fx.is_finite() {
        return Minimum {
            x,
            value: fx,
            grad: g,
            iterations: 0,
            evaluations,
            termination: Termination::NoProgress,
            history,
        };
    }

    let pg_norm = |x: &[f64], g: &[f64]| {
        let mut p: Vec<f64> = x.iter().zip(g).map(|(a, b)| a - b).collect();
        project(&mut p, lo, hi);
        p.iter().zip(x).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()))
    };
    let mut lambda = {
        let p = pg_norm(&x, &g);
        if p > 0.0 {
            (1.0 / p).clamp(1e-10, 1e10)
        } else {
            1.0
        }
    };
    let mut x_new = vec![0.0; n];
    let mut g_new = vec![0.0; n];
    let mut d = vec![0.0; n];
    let mut iterations = 0;
    while iterations < cfg.max_iter {
        for i in 0..n {
            d[i] = x[i] - lambda * g[i];
        }
        project(&mut d, lo, hi);
        for i in 0..n {
            d[i] -= x[i];
        }
        if inf_norm(&d) <= cfg.tol || pg_norm(&x, &g) <= cfg.tol {
            termination = Termination::GradientTolerance;
            break;
        }
        let slope = dot(&g, &d);
        let mut step = 1.0;
        let mut f_new = f64::INFINITY;
        let mut ok = false;
        for _ in 0..cfg.max_backtrack {
            for i in 0..n {
                x_new[i] = x[i] + step * d[i];
            }
            f_new = eval(&mut f, &x_new, &mut g_new);
            evaluations += 1;
            if f_new <= fx + 1e-4 * step * slope {
                ok = true;
                break;
            }
            step *= 0.5;
        }
        if !ok {
            termination = Termination::NoProgress;
            break;
        }
        let mut ss = 0.0;
        let mut sy = 0.0;
        for i in 0..n {
            let s = x_new[i] - x[i];
            ss += s * s;
            sy += s * (g_new[i] - g[i]);
        }
        lambda = if sy > 0.0 { (ss / sy).clamp(1e-10, 1e10) } else { 1e10 };
        x.copy_from_slice(&x_new);
        g.copy_from_slice(&g_new);
        fx = f_new;
        history.push(fx);
        iterations += 1;
    }
    Minimum { x, value: fx, grad: g, iterations, evaluations, termination, history }
}
