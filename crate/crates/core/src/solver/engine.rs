//! Block-coordinate projected descent shared by the centralized solvers and
//! the region subproblems of the consensus solver.
//!
//! Each iteration minimizes every price and discount fraction exactly along
//! its own coordinate, then takes one projected-gradient step on the traded
//! quantities with an Armijo backtracking line search. Price gradients are
//! several orders of magnitude smaller than trade gradients, so a joint
//! gradient step would stall on the prices.

use super::projection::TradePolytope;
use crate::transform::FreeVars;

pub const ARMIJO: f64 = 1e-4;
pub const SHRINK: f64 = 0.5;
/// Relative objective change treated as rounding noise.
pub const FLAT: f64 = 1e-12;

pub trait BlockProblem {
    /// Pair indices this problem optimizes; the others stay fixed.
    fn owned(&self) -> &[usize];
    /// Objective value, `+inf` where undefined.
    fn value(&self, z: &FreeVars) -> f64;
    fn gradient(&self, z: &FreeVars) -> FreeVars;
    /// Exact minimization over each owned price in turn.
    fn update_prices(&self, z: &mut FreeVars);
    /// Exact minimization over each owned discount fraction in turn.
    fn update_sigmas(&self, z: &mut FreeVars);
    /// Trade constraint set over the owned pairs, in `owned()` order.
    fn polytope(&self) -> &TradePolytope;
    fn price_bounds(&self, pair: usize) -> (f64, f64);
    fn sigma_bounds(&self, pair: usize) -> (f64, f64);
}

#[derive(Debug, Clone, Copy)]
pub struct EngineOptions {
    pub max_iter: usize,
    pub tol_grad: f64,
    pub tol_step: f64,
}

#[derive(Debug, Clone)]
pub struct EngineResult {
    pub vars: FreeVars,
    pub value: f64,
    pub residual: f64,
    pub converged: bool,
    pub iterations: usize,
}

fn owned_trades<P: BlockProblem + ?Sized>(p: &P, z: &FreeVars) -> Vec<f64> {
    p.owned().iter().map(|&k| z.trade[k]).collect()
}

fn set_owned_trades<P: BlockProblem + ?Sized>(p: &P, z: &mut FreeVars, x: &[f64]) {
    for (&k, v) in p.owned().iter().zip(x) {
        z.trade[k] = *v;
    }
}

/// Largest gradient entry among trades that a step can move: a trade on its
/// lower bound with the gradient pushing it further down stays put.
fn movable_gradient(polytope: &TradePolytope, x: &[f64], g: &[f64]) -> f64 {
    x.iter()
        .zip(g)
        .zip(&polytope.lower)
        .filter(|((xk, gk), lo)| !(**xk <= **lo && **gk > 0.0))
        .fold(0.0f64, |m, ((_, gk), _)| m.max(gk.abs()))
}

/// Projects the owned variables of `z` onto the feasible set.
pub fn project_start<P: BlockProblem + ?Sized>(p: &P, z: &mut FreeVars) {
    let x = p.polytope().project(&owned_trades(p, z));
    set_owned_trades(p, z, &x);
    for &k in p.owned() {
        let (lo, hi) = p.price_bounds(k);
        z.price[k] = z.price[k].clamp(lo, hi);
        let (lo, hi) = p.sigma_bounds(k);
        z.sigma[k] = z.sigma[k].clamp(lo, hi);
    }
}

/// First-order stationarity measure `||z - Π(z - ∇f(z))||_∞` over the owned
/// variables. Zero exactly at KKT points.
///
/// When the trade gradient is far larger than the polytope, the trade part
/// uses the step `s = extent / ||∇f||_∞` and reports `||x - Π(x - s∇f)|| / s`,
/// which never falls below the unit-step value (the scaled residual is
/// nonincreasing in `s`) and keeps the projected point near the set.
pub fn natural_residual<P: BlockProblem + ?Sized>(p: &P, z: &FreeVars) -> f64 {
    let grad = p.gradient(z);
    natural_residual_with(p, z, &grad)
}

pub fn natural_residual_with<P: BlockProblem + ?Sized>(p: &P, z: &FreeVars, grad: &FreeVars) -> f64 {
    let x = owned_trades(p, z);
    let g: Vec<f64> = p.owned().iter().map(|&k| grad.trade[k]).collect();
    let gmax = movable_gradient(p.polytope(), &x, &g);
    let extent = p.polytope().extent().max(1.0);
    let step = if gmax > extent { extent / gmax } else { 1.0 };
    let moved: Vec<f64> = p
        .owned()
        .iter()
        .zip(&x)
        .map(|(&k, v)| v - step * grad.trade[k])
        .collect();
    let proj = p.polytope().project(&moved);
    let mut res = x
        .iter()
        .zip(&proj)
        .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()))
        / step;
    for &k in p.owned() {
        let (lo, hi) = p.price_bounds(k);
        res = res.max((z.price[k] - (z.price[k] - grad.price[k]).clamp(lo, hi)).abs());
        let (lo, hi) = p.sigma_bounds(k);
        res = res.max((z.sigma[k] - (z.sigma[k] - grad.sigma[k]).clamp(lo, hi)).abs());
    }
    res
}

/// Runs the block iteration from `start` (projected first).
pub fn minimize<P: BlockProblem + ?Sized>(p: &P, start: FreeVars, opts: EngineOptions) -> EngineResult {
    let mut z = start;
    project_start(p, &mut z);
    let mut value = p.value(&z);
    let mut step: f64 = 1.0;
    let mut prev: Option<Vec<f64>> = None;
    let mut residual = f64::INFINITY;
    let mut iterations = 0;

    if !value.is_finite() || p.owned().is_empty() {
        let residual = if value.is_finite() { natural_residual(p, &z) } else { f64::INFINITY };
        return EngineResult {
            vars: z,
            value,
            residual,
            converged: value.is_finite(),
            iterations: 0,
        };
    }

    for it in 1..=opts.max_iter {
        iterations = it;
        let before = z.clone();
        p.update_prices(&mut z);
        p.update_sigmas(&mut z);
        value = p.value(&z);

        let grad = p.gradient(&z);
        let g: Vec<f64> = p.owned().iter().map(|&k| grad.trade[k]).collect();
        let x = owned_trades(p, &z);

        // Barzilai-Borwein guess for the initial step, with both gradients
        // taken at the current prices so price moves do not pollute it
        if let Some(px) = &prev {
            let mut back = z.clone();
            set_owned_trades(p, &mut back, px);
            let pg = p.gradient(&back);
            let (mut ss, mut sy) = (0.0, 0.0);
            for (n, &k) in p.owned().iter().enumerate() {
                let s = x[n] - px[n];
                ss += s * s;
                sy += s * (g[n] - pg.trade[k]);
            }
            if sy > 0.0 && ss > 0.0 {
                step = (ss / sy).clamp(1e-12, 1e12);
            }
        }

        // longer steps only overshoot the whole polytope
        let gmax = movable_gradient(p.polytope(), &x, &g);
        let t_max = if gmax > 0.0 { 2.0 * p.polytope().extent().max(1.0) / gmax } else { f64::INFINITY };
        let mut t = step.min(t_max);
        let mut shrunk = false;
        let mut accepted = None;
        // first trial whose change is lost in rounding, used when Armijo
        // cannot resolve the decrease at any step length
        let mut flat = None;
        while t > 1e-20 {
            let trial: Vec<f64> = x.iter().zip(&g).map(|(a, b)| a - t * b).collect();
            let xn = p.polytope().project(&trial);
            let decrease: f64 = g.iter().zip(xn.iter().zip(&x)).map(|(gk, (a, b))| gk * (a - b)).sum();
            if decrease >= 0.0 {
                // either stationary on a face, or the step is so short that
                // rounding in the projection hides the descent
                if !shrunk && t < 1e6 && t < t_max {
                    t = (t * 16.0).min(t_max);
                    continue;
                }
                break;
            }
            let mut cand = z.clone();
            set_owned_trades(p, &mut cand, &xn);
            let fv = p.value(&cand);
            // near a minimizer the predicted decrease drops below the
            // rounding error of the objective itself
            let noise = 8.0 * f64::EPSILON * value.abs();
            if fv <= value + ARMIJO * decrease + noise {
                accepted = Some((cand, fv));
                break;
            }
            if flat.is_none() && fv - value <= FLAT * value.abs().max(1.0) {
                flat = Some((cand, fv, t));
            }
            t *= SHRINK;
            shrunk = true;
        }
        prev = Some(x);
        if accepted.is_none() {
            if let Some((cand, fv, ft)) = flat {
                accepted = Some((cand, fv));
                t = ft;
            }
        }
        if let Some((cand, fv)) = accepted {
            z = cand;
            value = fv;
            step = (t * 2.0).min(1e12);
        }

        residual = natural_residual(p, &z);
        if residual < opts.tol_grad {
            return EngineResult {
                vars: z,
                value,
                residual,
                converged: true,
                iterations,
            };
        }
        let moved = z
            .iter_all()
            .zip(before.iter_all())
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        if moved < opts.tol_step {
            break;
        }
    }
    EngineResult {
        vars: z,
        value,
        residual,
        converged: residual < opts.tol_grad,
        iterations,
    }
}

/// Minimizes a scalar function over `[lo, hi]` given its interior
/// stationary points. Ties go to the smaller argument.
pub fn argmin_1d(f: impl Fn(f64) -> f64, lo: f64, hi: f64, stationary: &[f64]) -> f64 {
    let mut best = (f(lo), lo);
    let mut consider = |x: f64| {
        if x.is_finite() && x >= lo && x <= hi {
            let fx = f(x);
            if fx < best.0 || (fx == best.0 && x < best.1) {
                best = (fx, x);
            }
        }
    };
    for &s in stationary {
        consider(s);
    }
    consider(hi);
    best.1
}

/// Real roots of `a x² + b x + c`.
pub fn quadratic_roots(a: f64, b: f64, c: f64) -> Vec<f64> {
    if a == 0.0 {
        return if b != 0.0 { vec![-c / b] } else { Vec::new() };
    }
    let disc = b * b - 4.0 * a * c;
    if disc < 0.0 {
        return Vec::new();
    }
    // numerically stable form
    let q = -0.5 * (b + b.signum() * disc.sqrt());
    let mut roots = vec![q / a];
    if q != 0.0 {
        roots.push(c / q);
    }
    roots
}
