//! Unconstrained minimizers used for the inner likelihood problem.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OptimMethod {
    /// Limited-memory BFGS; selected by "L-BFGS-B" (no bounds are needed here).
    Lbfgs,
    /// Dense BFGS; selected by "BFGS_2" or "BFGS".
    Bfgs,
    /// A Nelder-Mead pass followed by BFGS polishing.
    NelderMeadBfgs,
}

impl OptimMethod {
    pub fn name(self) -> &'static str {
        match self {
            OptimMethod::Lbfgs => "L-BFGS-B",
            OptimMethod::Bfgs => "BFGS_2",
            OptimMethod::NelderMeadBfgs => "Nelder-Mead-BFGS",
        }
    }
}

impl fmt::Display for OptimMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for OptimMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "L-BFGS-B" | "L-BFGS" | "lbfgs" => Ok(OptimMethod::Lbfgs),
            "BFGS_2" | "BFGS" | "bfgs" => Ok(OptimMethod::Bfgs),
            "Nelder-Mead-BFGS" | "nelder-mead-bfgs" => Ok(OptimMethod::NelderMeadBfgs),
            other => Err(Error::InvalidArgument(format!("unknown optimization method {other}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimOptions {
    pub max_iter: usize,
    /// Convergence when the gradient's largest absolute entry falls below this.
    pub grad_tol: f64,
}

impl Default for OptimOptions {
    fn default() -> Self {
        OptimOptions {
            max_iter: 500,
            grad_tol: 1e-5,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Minimizes `f`, which writes the gradient into its second argument and returns the value.
/// Non-finite values are treated as infeasible points by the line search.
pub fn minimize<F>(mut f: F, x0: &[f64], method: OptimMethod, opts: &OptimOptions) -> OptimResult
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    match method {
        OptimMethod::Bfgs => bfgs(&mut f, x0, opts, 0),
        OptimMethod::Lbfgs => lbfgs(&mut f, x0, opts),
        OptimMethod::NelderMeadBfgs => {
            let mut scratch = vec![0.0; x0.len()];
            let budget = 200 * (x0.len() + 1);
            let (x, evals) = nelder_mead(|x| f(x, &mut scratch), x0, budget);
            bfgs(&mut f, &x, opts, evals)
        }
    }
}

struct LineSearch {
    x: Vec<f64>,
    value: f64,
    grad: Vec<f64>,
    step: f64,
}

/// Backtracking search along `dir` satisfying the Armijo condition.
fn backtrack<F>(
    f: &mut F,
    x: &[f64],
    value: f64,
    grad: &[f64],
    dir: &[f64],
    first_step: f64,
    evals: &mut usize,
) -> Option<LineSearch>
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    let slope = dot(grad, dir);
    if !(slope < 0.0) {
        return None;
    }
    let mut step = first_step;
    let mut xn = vec![0.0; x.len()];
    let mut gn = vec![0.0; x.len()];
    for _ in 0..60 {
        for i in 0..x.len() {
            xn[i] = x[i] + step * dir[i];
        }
        let v = f(&xn, &mut gn);
        *evals += 1;
        if v.is_finite() && gn.iter().all(|g| g.is_finite()) && v <= value + 1e-4 * step * slope {
            return Some(LineSearch {
                x: xn,
                value: v,
                grad: gn,
                step,
            });
        }
        step *= if v.is_finite() { 0.5 } else { 0.1 };
    }
    None
}

fn bfgs<F>(f: &mut F, x0: &[f64], opts: &OptimOptions, prior_evals: usize) -> OptimResult
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    let n = x0.len();
    let mut x = x0.to_vec();
    let mut g = vec![0.0; n];
    let mut value = f(&x, &mut g);
    let mut evals = prior_evals + 1;
    let result = |x: Vec<f64>, value: f64, g: &[f64], it: usize, evals: usize, ok: bool| OptimResult {
        grad_norm: inf_norm(g),
        converged: ok,
        x,
        value,
        iterations: it,
        evaluations: evals,
    };
    if !value.is_finite() || g.iter().any(|v| !v.is_finite()) {
        return result(x, f64::NAN, &g, 0, evals, false);
    }
    // Inverse Hessian approximation, row-major.
    let mut h = identity(n);
    let mut scaled = false;
    for it in 0..opts.max_iter {
        if inf_norm(&g) <= opts.grad_tol {
            return result(x, value, &g, it, evals, true);
        }
        let mut dir: Vec<f64> = (0..n).map(|i| -dot(&h[i * n..(i + 1) * n], &g)).collect();
        if dot(&dir, &g) >= 0.0 {
            h = identity(n);
            scaled = false;
            dir = g.iter().map(|v| -v).collect();
        }
        let first = if scaled { 1.0 } else { (1.0 / inf_norm(&g)).min(1.0) };
        let ls = match backtrack(f, &x, value, &g, &dir, first, &mut evals) {
            Some(ls) => ls,
            None if scaled => {
                h = identity(n);
                scaled = false;
                continue;
            }
            None => return result(x, value, &g, it, evals, false),
        };
        let s: Vec<f64> = ls.x.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = ls.grad.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        let improvement = value - ls.value;
        x = ls.x;
        g = ls.grad;
        value = ls.value;
        if sy > 1e-12 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() {
            if !scaled {
                let gamma = sy / dot(&y, &y);
                h.iter_mut().for_each(|v| *v *= gamma);
                scaled = true;
            }
            let hy: Vec<f64> = (0..n).map(|i| dot(&h[i * n..(i + 1) * n], &y)).collect();
            let yhy = dot(&y, &hy);
            let rho = 1.0 / sy;
            for i in 0..n {
                for j in 0..n {
                    h[i * n + j] += rho * ((1.0 + rho * yhy) * s[i] * s[j] - hy[i] * s[j] - s[i] * hy[j]);
                }
            }
        }
        if improvement.abs() <= 1e-15 * value.abs().max(1.0) && ls.step < 1e-10 {
            let ok = inf_norm(&g) <= opts.grad_tol;
            return result(x, value, &g, it + 1, evals, ok);
        }
    }
    let ok = inf_norm(&g) <= opts.grad_tol;
    result(x, value, &g, opts.max_iter, evals, ok)
}

fn identity(n: usize) -> Vec<f64> {
    let mut h = vec![0.0; n * n];
    for i in 0..n {
        h[i * n + i] = 1.0;
    }
    h
}

fn lbfgs<F>(f: &mut F, x0: &[f64], opts: &OptimOptions) -> OptimResult
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    const MEMORY: usize = 10;
    let n = x0.len();
    let mut x = x0.to_vec();
    let mut g = vec![0.0; n];
    let mut value = f(&x, &mut g);
    let mut evals = 1;
    let done = |x: Vec<f64>, value: f64, g: &[f64], it: usize, evals: usize, ok: bool| OptimResult {
        grad_norm: inf_norm(g),
        converged: ok,
        x,
        value,
        iterations: it,
        evaluations: evals,
    };
    if !value.is_finite() || g.iter().any(|v| !v.is_finite()) {
        return done(x, f64::NAN, &g, 0, evals, false);
    }
    let mut hist: Vec<(Vec<f64>, Vec<f64>, f64)> = Vec::new();
    for it in 0..opts.max_iter {
        if inf_norm(&g) <= opts.grad_tol {
            return done(x, value, &g, it, evals, true);
        }
        let mut q = g.clone();
        let mut alphas = Vec::with_capacity(hist.len());
        for (s, y, rho) in hist.iter().rev() {
            let a = rho * dot(s, &q);
            q.iter_mut().zip(y).for_each(|(qi, yi)| *qi -= a * yi);
            alphas.push(a);
        }
        let gamma = hist
            .last()
            .map_or(1.0, |(s, y, _)| dot(s, y) / dot(y, y));
        q.iter_mut().for_each(|v| *v *= gamma);
        for ((s, y, rho), a) in hist.iter().zip(alphas.iter().rev()) {
            let b = rho * dot(y, &q);
            q.iter_mut().zip(s).for_each(|(qi, si)| *qi += (a - b) * si);
        }
        let mut dir: Vec<f64> = q.iter().map(|v| -v).collect();
        if dot(&dir, &g) >= 0.0 {
            hist.clear();
            dir = g.iter().map(|v| -v).collect();
        }
        let first = if hist.is_empty() { (1.0 / inf_norm(&g)).min(1.0) } else { 1.0 };
        let ls = match backtrack(f, &x, value, &g, &dir, first, &mut evals) {
            Some(ls) => ls,
            None if !hist.is_empty() => {
                hist.clear();
                continue;
            }
            None => return done(x, value, &g, it, evals, false),
        };
        let s: Vec<f64> = ls.x.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = ls.grad.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        let improvement = value - ls.value;
        x = ls.x;
        g = ls.grad;
        value = ls.value;
        if sy > 1e-12 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() {
            if hist.len() == MEMORY {
                hist.remove(0);
            }
            hist.push((s, y, 1.0 / sy));
        }
        if improvement.abs() <= 1e-15 * value.abs().max(1.0) && ls.step < 1e-10 {
            let ok = inf_norm(&g) <= opts.grad_tol;
            return done(x, value, &g, it + 1, evals, ok);
        }
    }
    let ok = inf_norm(&g) <= opts.grad_tol;
    done(x, value, &g, opts.max_iter, evals, ok)
}

/// Derivative-free simplex search; returns the best vertex and the evaluation count.
pub fn nelder_mead<F>(mut f: F, x0: &[f64], max_evals: usize) -> (Vec<f64>, usize)
where
    F: FnMut(&[f64]) -> f64,
{
    let n = x0.len();
    let mut eval = |x: &[f64]| {
        let v = f(x);
        if v.is_finite() {
            v
        } else {
            f64::INFINITY
        }
    };
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
    simplex.push((x0.to_vec(), eval(x0)));
    for i in 0..n {
        let mut v = x0.to_vec();
        v[i] += if v[i].abs() > 1e-3 { 0.1 * v[i].abs() } else { 0.1 };
        let fv = eval(&v);
        simplex.push((v, fv));
    }
    let mut evals = n + 1;
    while evals < max_evals {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let spread = simplex[n].1 - simplex[0].1;
        if spread.abs() <= 1e-12 * simplex[0].1.abs().max(1.0) {
            break;
        }
        let centroid: Vec<f64> = (0..n)
            .map(|j| simplex[..n].iter().map(|(v, _)| v[j]).sum::<f64>() / n as f64)
            .collect();
        let towards = |t: f64| -> Vec<f64> {
            (0..n)
                .map(|j| centroid[j] + t * (simplex[n].0[j] - centroid[j]))
                .collect()
        };
        let xr = towards(-1.0);
        let fr = eval(&xr);
        evals += 1;
        if fr < simplex[0].1 {
            let xe = towards(-2.0);
            let fe = eval(&xe);
            evals += 1;
            simplex[n] = if fe < fr { (xe, fe) } else { (xr, fr) };
        } else if fr < simplex[n - 1].1 {
            simplex[n] = (xr, fr);
        } else {
            let xc = if fr < simplex[n].1 { towards(-0.5) } else { towards(0.5) };
            let fc = eval(&xc);
            evals += 1;
            if fc < simplex[n].1.min(fr) {
                simplex[n] = (xc, fc);
            } else {
                let best = simplex[0].0.clone();
                for vertex in simplex.iter_mut().skip(1) {
                    for j in 0..n {
                        vertex.0[j] = best[j] + 0.5 * (vertex.0[j] - best[j]);
                    }
                    vertex.1 = eval(&vertex.0);
                    evals += 1;
                }
            }
        }
    }
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    (simplex.swap_remove(0).0, evals)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rosenbrock(x: &[f64], g: &mut [f64]) -> f64 {
        let (a, b) = (x[0], x[1]);
        g[0] = -2.0 * (1.0 - a) - 400.0 * a * (b - a * a);
        g[1] = 200.0 * (b - a * a);
        (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2)
    }

    #[test]
    fn methods_solve_rosenbrock() {
        let opts = OptimOptions {
            max_iter: 2000,
            grad_tol: 1e-8,
        };
        for m in [OptimMethod::Bfgs, OptimMethod::Lbfgs, OptimMethod::NelderMeadBfgs] {
            let r = minimize(rosenbrock, &[-1.2, 1.0], m, &opts);
            assert!(r.converged, "{m}: {r:?}");
            assert!((r.x[0] - 1.0).abs() < 1e-5 && (r.x[1] - 1.0).abs() < 1e-5, "{m}: {r:?}");
        }
    }

    #[test]
    fn quadratic_in_ten_dims() {
        let f = |x: &[f64], g: &mut [f64]| {
            let mut v = 0.0;
            for i in 0..x.len() {
                let w = (i + 1) as f64;
                g[i] = w * (x[i] - 1.0);
                v += 0.5 * w * (x[i] - 1.0).powi(2);
            }
            v
        };
        for m in [OptimMethod::Bfgs, OptimMethod::Lbfgs] {
            let r = minimize(f, &[0.0; 10], m, &OptimOptions::default());
            assert!(r.converged);
            assert!(r.x.iter().all(|v| (v - 1.0).abs() < 1e-5));
        }
    }

    #[test]
    fn non_finite_start_reports_failure() {
        let r = minimize(|_, _| f64::NAN, &[0.0], OptimMethod::Bfgs, &OptimOptions::default());
        assert!(!r.converged);
    }

    #[test]
    fn method_names_parse() {
        for m in [OptimMethod::Bfgs, OptimMethod::Lbfgs, OptimMethod::NelderMeadBfgs] {
            assert_eq!(m.name().parse::<OptimMethod>().unwrap(), m);
        }
        assert!("Powell".parse::<OptimMethod>().is_err());
    }
}
