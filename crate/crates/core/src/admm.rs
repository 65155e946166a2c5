//! Region-partitioned consensus solver for the surrogate (sum-of-logs)
//! scalarization.
//!
//! Each region owns the pairs touching its agents. Pairs with both endpoints
//! inside one region are private to it; pairs straddling two regions are
//! shared, and both regions hold a copy of their trade, price and discount
//! fraction. The coordinator keeps the global value of every shared entry
//! together with the scaled duals, and minimizes the cross-region trade
//! terms in the global step.

use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{MarketError, Result};
use crate::model::{check_feasible, MarketInstance, ObjectiveValues};
use crate::solver::engine::{self, argmin_1d, quadratic_roots, BlockProblem};
use crate::solver::projection::TradePolytope;
use crate::solver::{
    multi_start, sigma_upper, starting_point, solver_price_bounds, tradable_layout, trade_polytope, Solution, SolverOptions,
};
use crate::transform::{FreeVars, PairLayout, Surrogate, SurrogateTerm, Weights};

pub const DEFAULT_RHO: f64 = 1.0;
pub const DEFAULT_TOL_ADMM: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegionPartition {
    /// DER ids of each region (0-based ids, region `k` at index `k - 1`).
    pub ders: Vec<Vec<usize>>,
    pub loads: Vec<Vec<usize>>,
}

impl RegionPartition {
    pub fn num_regions(&self) -> usize {
        self.ders.len()
    }

    pub fn region_of_der(&self, der: usize) -> usize {
        self.ders.iter().position(|m| m.contains(&der)).expect("partition covers every DER")
    }

    pub fn region_of_load(&self, load: usize) -> usize {
        self.loads.iter().position(|m| m.contains(&load)).expect("partition covers every load")
    }

    /// Checks that the regions are disjoint and cover the instance agents.
    pub fn validate(&self, inst: &MarketInstance) -> Result<()> {
        if self.ders.len() != self.loads.len() || self.ders.is_empty() {
            return Err(MarketError::Partition("need the same positive region count for DERs and loads".into()));
        }
        let check = |groups: &Vec<Vec<usize>>, n: usize, what: &str| -> Result<()> {
            let mut seen = vec![false; n];
            for m in groups.iter().flatten() {
                if *m >= n {
                    return Err(MarketError::Partition(format!("{what} {} does not exist", m + 1)));
                }
                if std::mem::replace(&mut seen[*m], true) {
                    return Err(MarketError::Partition(format!("{what} {} is in two regions", m + 1)));
                }
            }
            match seen.iter().position(|s| !s) {
                Some(m) => Err(MarketError::Partition(format!("{what} {} has no region", m + 1))),
                None => Ok(()),
            }
        };
        check(&self.ders, inst.num_ders, "DER")?;
        check(&self.loads, inst.num_loads, "load")?;
        for k in 0..self.num_regions() {
            if self.ders[k].is_empty() && self.loads[k].is_empty() {
                return Err(MarketError::Partition(format!("region {} has no agents", k + 1)));
            }
        }
        Ok(())
    }
}

/// Groups agents by their `region_of_agent` id (1-based, DERs first).
pub fn partition_by_branch(inst: &MarketInstance) -> Result<RegionPartition> {
    let regions = inst
        .region_of_agent
        .as_ref()
        .ok_or_else(|| MarketError::Partition("instance has no region assignment".into()))?;
    let (g, l) = (inst.num_ders, inst.num_loads);
    if regions.len() != g + l {
        return Err(MarketError::Partition(format!(
            "expected {} region ids, got {}",
            g + l,
            regions.len()
        )));
    }
    if let Some(a) = regions.iter().position(|&r| r == 0) {
        let who = if a < g { format!("DER {}", a + 1) } else { format!("load {}", a - g + 1) };
        return Err(MarketError::Partition(format!("{who} has region id 0 (ids start at 1)")));
    }
    let k = regions.iter().copied().max().unwrap_or(0);
    let mut part = RegionPartition {
        ders: vec![Vec::new(); k],
        loads: vec![Vec::new(); k],
    };
    for (a, &r) in regions.iter().enumerate() {
        if a < g {
            part.ders[r - 1].push(a);
        } else {
            part.loads[r - 1].push(a - g);
        }
    }
    part.validate(inst)?;
    Ok(part)
}

/// Surrogate terms grouped by region, plus the cross-region trade terms.
#[derive(Debug, Clone)]
pub struct SplitObjective {
    pub layout: PairLayout,
    pub local: Vec<Vec<SurrogateTerm>>,
    pub cross: Vec<SurrogateTerm>,
}

impl SplitObjective {
    pub fn local_value(&self, inst: &MarketInstance, weights: &Weights, region: usize, vars: &FreeVars) -> f64 {
        let s = Surrogate::new(inst, weights, &self.layout);
        self.local[region].iter().map(|t| s.term_value(*t, vars)).sum()
    }

    pub fn cross_value(&self, inst: &MarketInstance, weights: &Weights, vars: &FreeVars) -> f64 {
        let s = Surrogate::new(inst, weights, &self.layout);
        self.cross.iter().map(|t| s.term_value(*t, vars)).sum()
    }

    /// Sum of every region sum and the cross sum.
    pub fn total(&self, inst: &MarketInstance, weights: &Weights, vars: &FreeVars) -> f64 {
        (0..self.local.len())
            .map(|k| self.local_value(inst, weights, k, vars))
            .sum::<f64>()
            + self.cross_value(inst, weights, vars)
    }
}

/// Assigns every surrogate term to one region or to the cross sum. Slack and
/// PCC terms follow their agent; trade terms go to a region only when both
/// endpoints are in it.
pub fn split_objective(inst: &MarketInstance, weights: &Weights, partition: &RegionPartition) -> Result<SplitObjective> {
    weights.check(inst)?;
    partition.validate(inst)?;
    let layout = tradable_layout(inst);
    let mut local = vec![Vec::new(); partition.num_regions()];
    let mut cross = Vec::new();
    let terms = Surrogate::new(inst, weights, &layout).terms();
    for term in terms {
        let region = match term {
            SurrogateTerm::DerSlack { der } => Some(partition.region_of_der(der)),
            SurrogateTerm::LoadSlack { load } => Some(partition.region_of_load(load)),
            SurrogateTerm::Pcc { pair } => Some(partition.region_of_load(layout.pair(pair).1)),
            SurrogateTerm::PccIdle { load, .. } => Some(partition.region_of_load(load)),
            SurrogateTerm::DerTrade { pair } | SurrogateTerm::LoadTrade { pair } => {
                let (i, j) = layout.pair(pair);
                let r = partition.region_of_der(i);
                (r == partition.region_of_load(j)).then_some(r)
            }
        };
        match region {
            Some(r) => local[r].push(term),
            None => cross.push(term),
        }
    }
    Ok(SplitObjective { layout, local, cross })
}

/// Surrogate terms over a set of owned pairs, optionally with a proximal
/// pull `(ρ/2)||v - t||²` on some of them.
pub(crate) struct SurrogateProblem<'a> {
    surrogate: Surrogate<'a>,
    terms: Vec<SurrogateTerm>,
    owned: Vec<usize>,
    polytope: TradePolytope,
    sigma_hi: f64,
    price_coeff: Vec<f64>,
    sigma_coeff: Vec<f64>,
    rho: f64,
    /// proximal targets `(x, p, σ)` per layout pair
    prox: Vec<Option<[f64; 3]>>,
}

impl<'a> SurrogateProblem<'a> {
    pub(crate) fn new(
        inst: &'a MarketInstance,
        weights: &'a Weights,
        layout: &'a PairLayout,
        terms: Vec<SurrogateTerm>,
        owned: Vec<usize>,
        polytope: TradePolytope,
    ) -> Self {
        let mut price_coeff = vec![0.0; layout.len()];
        let mut sigma_coeff = vec![0.0; layout.len()];
        for t in &terms {
            match *t {
                SurrogateTerm::DerTrade { pair } => price_coeff[pair] -= weights.der(layout.pair(pair).0),
                SurrogateTerm::LoadTrade { pair } => {
                    let w = weights.load(layout.pair(pair).1);
                    price_coeff[pair] += w;
                    sigma_coeff[pair] += w;
                }
                _ => {}
            }
        }
        Self {
            surrogate: Surrogate::new(inst, weights, layout),
            terms,
            owned,
            polytope,
            sigma_hi: sigma_upper(inst),
            price_coeff,
            sigma_coeff,
            rho: 0.0,
            prox: vec![None; layout.len()],
        }
    }

    /// The whole surrogate over every tradable pair.
    pub(crate) fn central(inst: &'a MarketInstance, weights: &'a Weights, layout: &'a PairLayout, floor: f64) -> Self {
        let owned: Vec<usize> = (0..layout.len()).collect();
        let polytope = trade_polytope(inst, layout, &owned, floor, floor, 0..inst.num_ders, 0..inst.num_loads);
        let terms = Surrogate::new(inst, weights, layout).terms();
        Self::new(inst, weights, layout, terms, owned, polytope)
    }

    fn prox_of(&self, pair: usize, slot: usize) -> (f64, f64) {
        match self.prox[pair] {
            Some(t) => (self.rho, t[slot]),
            None => (0.0, 0.0),
        }
    }
}

impl BlockProblem for SurrogateProblem<'_> {
    fn owned(&self) -> &[usize] {
        &self.owned
    }

    fn value(&self, z: &FreeVars) -> f64 {
        let mut v: f64 = self.terms.iter().map(|t| self.surrogate.term_value(*t, z)).sum();
        for &k in &self.owned {
            if let Some(t) = self.prox[k] {
                let d = [z.trade[k] - t[0], z.price[k] - t[1], z.sigma[k] - t[2]];
                v += 0.5 * self.rho * d.iter().map(|e| e * e).sum::<f64>();
            }
        }
        v
    }

    fn gradient(&self, z: &FreeVars) -> FreeVars {
        let mut g = FreeVars::zeros(z.len());
        for t in &self.terms {
            self.surrogate.add_term_gradient(*t, z, &mut g);
        }
        for &k in &self.owned {
            if let Some(t) = self.prox[k] {
                g.trade[k] += self.rho * (z.trade[k] - t[0]);
                g.price[k] += self.rho * (z.price[k] - t[1]);
                g.sigma[k] += self.rho * (z.sigma[k] - t[2]);
            }
        }
        g
    }

    fn update_prices(&self, z: &mut FreeVars) {
        for &k in &self.owned {
            let c = self.price_coeff[k];
            let (r, t) = self.prox_of(k, 1);
            let (lo, hi) = self.price_bounds(k);
            let f = |p: f64| c * p.ln() + 0.5 * r * (p - t) * (p - t);
            z.price[k] = argmin_1d(f, lo, hi, &quadratic_roots(r, -r * t, c));
        }
    }

    fn update_sigmas(&self, z: &mut FreeVars) {
        let alpha = self.surrogate.inst.discount_cap;
        for &k in &self.owned {
            let lam = self.sigma_coeff[k];
            let (r, t) = self.prox_of(k, 2);
            let (lo, hi) = self.sigma_bounds(k);
            let f = |s: f64| lam * (1.0 - alpha * s).ln() + 0.5 * r * (s - t) * (s - t);
            let roots = quadratic_roots(r * alpha, -r * (1.0 + alpha * t), r * t + lam * alpha);
            z.sigma[k] = argmin_1d(f, lo, hi, &roots);
        }
    }

    fn polytope(&self) -> &TradePolytope {
        &self.polytope
    }

    fn price_bounds(&self, pair: usize) -> (f64, f64) {
        let (i, j) = self.surrogate.layout.pair(pair);
        solver_price_bounds(self.surrogate.inst, i, j).expect("tradable pair")
    }

    fn sigma_bounds(&self, _pair: usize) -> (f64, f64) {
        (0.0, self.sigma_hi)
    }
}

fn surrogate_solution(
    inst: &MarketInstance,
    weights: &Weights,
    layout: &PairLayout,
    vars: &FreeVars,
    floor: f64,
) -> (Solution, f64) {
    let problem = SurrogateProblem::central(inst, weights, layout, floor);
    let state = layout.to_state(inst, vars);
    let objective = problem.value(vars);
    let residual = engine::natural_residual(&problem, vars);
    let solution = Solution {
        objective_parts: ObjectiveValues::evaluate(inst, &state),
        state,
        objective,
        kkt_residual: residual,
        converged: false,
        iterations: 0,
        restarts_used: 0,
        note: None,
    };
    (solution, residual)
}

/// Centralized multi-start minimization of the surrogate scalarization.
///
/// Trades stay at or above the variable floor and PCC slacks stay at or
/// above it too, since the surrogate takes the log of each. The reported
/// state keeps these floors.
pub fn solve_surrogate(inst: &MarketInstance, weights: &Weights, opts: &SolverOptions) -> Result<Solution> {
    crate::solver::check_inputs(inst, weights, opts)?;
    let layout = tradable_layout(inst);
    let problem = SurrogateProblem::central(inst, weights, &layout, opts.floor);
    let (best, _, used) = multi_start(&problem, inst, &layout, opts, None, None)
        .ok_or_else(|| MarketError::SolverFailed("surrogate not finite from any start".into()))?;
    let (mut solution, _) = surrogate_solution(inst, weights, &layout, &best.vars, opts.floor);
    solution.converged = best.converged;
    solution.iterations = best.iterations;
    solution.restarts_used = used;
    Ok(solution)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdmmOptions {
    pub max_iter: usize,
    pub tol: f64,
    /// Options of the region subproblem solves.
    pub local: SolverOptions,
    /// Solve the region subproblems on the rayon pool.
    pub parallel: bool,
}

impl Default for AdmmOptions {
    fn default() -> Self {
        Self {
            max_iter: 2000,
            tol: DEFAULT_TOL_ADMM,
            local: SolverOptions::default(),
            parallel: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub iteration: usize,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub objective: f64,
}

#[derive(Debug, Clone)]
pub struct AdmmResult {
    pub solution: Solution,
    pub trace: Vec<TraceEntry>,
}

/// Global values, per-region copies and scaled duals. Only the entries a
/// region touches are meaningful in its copy and dual.
#[derive(Debug, Clone)]
pub struct ConsensusState {
    pub global: FreeVars,
    pub locals: Vec<FreeVars>,
    pub duals: Vec<FreeVars>,
    pub rho: f64,
}

/// What the coordinator sends a region each round.
#[derive(Debug, Clone)]
pub struct LocalRequest {
    /// `W - U` for every shared pair the region holds.
    pub targets: Vec<(usize, [f64; 3])>,
    pub warm_start: Option<FreeVars>,
}

/// A region's reply: its new copy of the variables it owns.
#[derive(Debug, Clone)]
pub struct LocalResponse {
    pub vars: FreeVars,
    pub converged: bool,
}

/// One region's view of the problem.
pub struct RegionSolver<'a> {
    inst: &'a MarketInstance,
    weights: &'a Weights,
    layout: &'a PairLayout,
    terms: Vec<SurrogateTerm>,
    owned: Vec<usize>,
    ders: Vec<usize>,
    loads: Vec<usize>,
    rho: f64,
    opts: SolverOptions,
}

impl RegionSolver<'_> {
    pub fn owned(&self) -> &[usize] {
        &self.owned
    }

    pub fn solve(&self, request: &LocalRequest) -> LocalResponse {
        let floor = self.opts.floor;
        let polytope = trade_polytope(
            self.inst,
            self.layout,
            &self.owned,
            floor,
            floor,
            self.ders.iter().copied(),
            self.loads.iter().copied(),
        );
        let mut problem = SurrogateProblem::new(
            self.inst,
            self.weights,
            self.layout,
            self.terms.clone(),
            self.owned.clone(),
            polytope,
        );
        problem.rho = self.rho;
        for (k, t) in &request.targets {
            problem.prox[*k] = Some(*t);
        }
        let res = match &request.warm_start {
            Some(z) => engine::minimize(&problem, z.clone(), self.opts.engine()),
            None => {
                multi_start(&problem, self.inst, self.layout, &self.opts, None, None)
                    .map(|(r, _, _)| r)
                    .unwrap_or_else(|| engine::minimize(&problem, FreeVars::zeros(self.layout.len()), self.opts.engine()))
            }
        };
        LocalResponse {
            vars: res.vars,
            converged: res.converged,
        }
    }
}

/// Minimizes `c ln w + (a/2)(w - v)²` over `[lo, hi]`.
fn prox_log(c: f64, a: f64, v: f64, lo: f64, hi: f64) -> f64 {
    let f = |w: f64| c * w.ln() + 0.5 * a * (w - v) * (w - v);
    argmin_1d(f, lo, hi, &quadratic_roots(a, -a * v, c))
}

/// Consensus ADMM on the surrogate scalarization.
///
/// The price and discount fraction of a shared pair appear in the cross
/// terms only, so the coordinator fixes them at their exact minimizers up
/// front and the regions just hold them. Consensus runs on the shared
/// trades. Per round: every region minimizes its terms plus
/// `(ρ/2)||V - W + U||²` over the pairs it touches; the coordinator then
/// minimizes the cross terms plus the proximal pulls of both copies over
/// each shared trade, and updates the duals `U += V - W`. Residuals are RMS
/// over shared trade copies; the run stops once both are below `tol`.
pub fn admm_solve(
    inst: &MarketInstance,
    weights: &Weights,
    partition: &RegionPartition,
    rho: f64,
    opts: &AdmmOptions,
) -> Result<AdmmResult> {
    crate::solver::check_inputs(inst, weights, &opts.local)?;
    if !(rho > 0.0 && rho.is_finite()) {
        return Err(MarketError::SolverFailed(format!("rho must be > 0 (got {rho})")));
    }
    if opts.max_iter == 0 || !(opts.tol > 0.0) {
        return Err(MarketError::SolverFailed("max_iter must be >= 1 and tol > 0".into()));
    }
    let split = split_objective(inst, weights, partition)?;
    let layout = &split.layout;
    let n = layout.len();
    let num_regions = partition.num_regions();

    let regions: Vec<RegionSolver> = (0..num_regions)
        .map(|r| {
            let owned = (0..n)
                .filter(|&k| {
                    let (i, j) = layout.pair(k);
                    partition.region_of_der(i) == r || partition.region_of_load(j) == r
                })
                .collect();
            RegionSolver {
                inst,
                weights,
                layout,
                terms: split.local[r].clone(),
                owned,
                ders: partition.ders[r].clone(),
                loads: partition.loads[r].clone(),
                rho,
                opts: opts.local.clone(),
            }
        })
        .collect();
    // shared pair -> the two regions holding a copy
    let shared: Vec<(usize, [usize; 2])> = (0..n)
        .filter_map(|k| {
            let (i, j) = layout.pair(k);
            let (a, b) = (partition.region_of_der(i), partition.region_of_load(j));
            (a != b).then_some((k, [a, b]))
        })
        .collect();
    let private_owner: Vec<Option<usize>> = (0..n)
        .map(|k| {
            let (i, j) = layout.pair(k);
            let r = partition.region_of_der(i);
            (r == partition.region_of_load(j)).then_some(r)
        })
        .collect();

    let mut cross_price = vec![0.0; n];
    let mut cross_sigma = vec![0.0; n];
    for t in &split.cross {
        match *t {
            SurrogateTerm::DerTrade { pair } => cross_price[pair] -= weights.der(layout.pair(pair).0),
            SurrogateTerm::LoadTrade { pair } => {
                let w = weights.load(layout.pair(pair).1);
                cross_price[pair] += w;
                cross_sigma[pair] += w;
            }
            _ => {}
        }
    }

    let floor = opts.local.floor;
    let sigma_hi = sigma_upper(inst);
    let alpha = inst.discount_cap;
    let central = SurrogateProblem::central(inst, weights, layout, floor);
    // start the global copy at the target demands rather than at zero, where
    // the first proximal pull would drag shared trades into the log well
    let mut start = starting_point(inst, layout, 1, &mut ChaCha8Rng::seed_from_u64(opts.local.rng_seed));
    start.trade = central.polytope().project(&start.trade);
    for &(k, _) in &shared {
        let (i, j) = layout.pair(k);
        let (plo, phi) = solver_price_bounds(inst, i, j).expect("tradable pair");
        let (cp, cs) = (cross_price[k], cross_sigma[k]);
        start.price[k] = argmin_1d(|p| cp * p.ln(), plo, phi, &[]);
        start.sigma[k] = argmin_1d(|s| cs * (1.0 - alpha * s).ln(), 0.0, sigma_hi, &[]);
    }
    let mut cs = ConsensusState {
        global: start.clone(),
        locals: vec![start; num_regions],
        duals: vec![FreeVars::zeros(n); num_regions],
        rho,
    };
    let copies = (shared.len() * 2) as f64;
    let mut trace = Vec::new();
    let mut best: Option<(f64, FreeVars, usize)> = None;
    let mut converged = false;

    for it in 1..=opts.max_iter {
        let requests: Vec<LocalRequest> = (0..num_regions)
            .map(|r| LocalRequest {
                targets: shared
                    .iter()
                    .filter(|(_, rs)| rs.contains(&r))
                    .map(|&(k, _)| {
                        let (w, u) = (&cs.global, &cs.duals[r]);
                        (k, [w.trade[k] - u.trade[k], w.price[k], w.sigma[k]])
                    })
                    .collect(),
                warm_start: (it > 1).then(|| cs.locals[r].clone()),
            })
            .collect();
        let responses: Vec<LocalResponse> = if opts.parallel {
            regions.par_iter().zip(&requests).map(|(s, q)| s.solve(q)).collect()
        } else {
            regions.iter().zip(&requests).map(|(s, q)| s.solve(q)).collect()
        };
        for (r, resp) in responses.into_iter().enumerate() {
            cs.locals[r] = resp.vars;
        }

        let previous = cs.global.clone();
        for k in 0..n {
            if let Some(r) = private_owner[k] {
                let v = &cs.locals[r];
                cs.global.trade[k] = v.trade[k];
                cs.global.price[k] = v.price[k];
                cs.global.sigma[k] = v.sigma[k];
            }
        }
        let mut dual_sq = 0.0;
        for &(k, rs) in &shared {
            let (i, j) = layout.pair(k);
            let avg = rs.iter().map(|&r| cs.locals[r].trade[k] + cs.duals[r].trade[k]).sum::<f64>() / 2.0;
            let xhi = (inst.surplus[i].min(inst.demand[j]) - floor).max(floor);
            // the trade enters the cross terms through ln(p x)
            cs.global.trade[k] = prox_log(cross_price[k], 2.0 * rho, avg, floor, xhi);
            let d = cs.global.trade[k] - previous.trade[k];
            dual_sq += 2.0 * d * d;
        }

        let mut primal_sq = 0.0;
        for &(k, rs) in &shared {
            for r in rs {
                let (v, w, u) = (&cs.locals[r], &cs.global, &mut cs.duals[r]);
                let d = v.trade[k] - w.trade[k];
                u.trade[k] += d;
                primal_sq += d * d;
            }
        }
        let (primal, dual) = if copies > 0.0 {
            ((primal_sq / copies).sqrt(), rho * (dual_sq / copies).sqrt())
        } else {
            (0.0, 0.0)
        };
        // the consensus point may overshoot a cap until it settles
        let mut feasible = cs.global.clone();
        feasible.trade = central.polytope().project(&cs.global.trade);
        let objective = central.value(&feasible);
        trace.push(TraceEntry {
            iteration: it,
            primal_residual: primal,
            dual_residual: dual,
            objective,
        });
        let score = primal.max(dual);
        if best.as_ref().is_none_or(|(s, _, _)| score < *s) {
            best = Some((score, cs.global.clone(), it));
        }
        if primal < opts.tol && dual < opts.tol {
            converged = true;
            break;
        }
    }

    let (_, mut vars, _) = best.expect("at least one iteration");
    if converged {
        vars = cs.global.clone();
    }
    // reconcile to feasibility
    let x = central.polytope().project(&vars.trade);
    vars.trade = x;
    let (mut solution, _) = surrogate_solution(inst, weights, layout, &vars, floor);
    solution.converged = converged;
    solution.iterations = trace.len();
    solution.restarts_used = opts.local.num_restarts;
    debug_assert!(check_feasible(inst, &solution.state).is_empty());
    Ok(AdmmResult { solution, trace })
}

/// Per-iteration `(primal, dual)` residuals of a run.
pub fn residual_trace(trace: &[TraceEntry]) -> Result<Vec<(f64, f64)>> {
    if trace.is_empty() {
        return Err(MarketError::EmptyTrace);
    }
    Ok(trace.iter().map(|t| (t.primal_residual, t.dual_residual)).collect())
}

/// Writes a trace as CSV: `iteration,primal_residual,dual_residual,objective`.
pub fn write_trace_csv<W: Write>(trace: &[TraceEntry], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["iteration", "primal_residual", "dual_residual", "objective"])?;
    for t in trace {
        w.write_record([
            t.iteration.to_string(),
            format!("{:e}", t.primal_residual),
            format!("{:e}", t.dual_residual),
            format!("{:e}", t.objective),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// `|a - b| / max(1, |b|)`.
pub fn normalized_gap(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::fixtures::two_by_two;
    use crate::solver::default_lambda;

    #[test]
    fn partition_examples() {
        let mut inst = two_by_two();
        let p = partition_by_branch(&inst).unwrap();
        assert_eq!(p.num_regions(), 2);
        assert_eq!(p.ders, vec![vec![0], vec![1]]);
        assert_eq!(p.loads, vec![vec![0], vec![1]]);

        inst.region_of_agent = Some(vec![1; 4]);
        assert_eq!(partition_by_branch(&inst).unwrap().num_regions(), 1);

        inst.region_of_agent = Some(vec![1, 0, 1, 1]);
        assert!(partition_by_branch(&inst).is_err());
        inst.region_of_agent = Some(vec![1, 1, 1]);
        assert!(partition_by_branch(&inst).is_err());
        inst.region_of_agent = None;
        assert!(partition_by_branch(&inst).is_err());
    }

    #[test]
    fn single_region_has_no_cross_terms() {
        let mut inst = two_by_two();
        inst.region_of_agent = Some(vec![1; 4]);
        let w = default_lambda(2, 2);
        let split = split_objective(&inst, &w, &partition_by_branch(&inst).unwrap()).unwrap();
        assert!(split.cross.is_empty());
    }

    #[test]
    fn cross_only_trades_all_in_cross() {
        // DER 1 with load 2 in region 1, DER 2 with load 1 in region 2, and
        // only the off-diagonal pairs can trade
        let mut inst = two_by_two();
        inst.region_of_agent = Some(vec![1, 2, 2, 1]);
        inst.pcc_sell_price = vec![50.0, 50.0];
        inst.pcc_buy_price = vec![20.0, 20.0];
        let w = default_lambda(2, 2);
        let part = partition_by_branch(&inst).unwrap();
        let split = split_objective(&inst, &w, &part).unwrap();
        for t in split.local.iter().flatten() {
            if let SurrogateTerm::DerTrade { pair } | SurrogateTerm::LoadTrade { pair } = t {
                let (i, j) = split.layout.pair(*pair);
                assert_eq!(part.region_of_der(i), part.region_of_load(j));
            }
        }
        assert!(!split.cross.is_empty());
    }

    #[test]
    fn prox_helpers_hit_stationary_points() {
        // c = 0 reduces to clamping
        assert!((prox_log(0.0, 2.0, 3.0, 1.0, 5.0) - 3.0).abs() < 1e-15);
        assert_eq!(prox_log(0.0, 2.0, 9.0, 1.0, 5.0), 5.0);
        let w = prox_log(1.0, 2.0, 3.0, 0.1, 5.0);
        assert!((1.0 / w + 2.0 * (w - 3.0)).abs() < 1e-12);
    }

    #[test]
    fn trace_csv_and_residual_trace() {
        assert!(matches!(residual_trace(&[]), Err(MarketError::EmptyTrace)));
        let t = [TraceEntry {
            iteration: 1,
            primal_residual: 0.5,
            dual_residual: 0.25,
            objective: -1.0,
        }];
        assert_eq!(residual_trace(&t).unwrap(), vec![(0.5, 0.25)]);
        let mut buf = Vec::new();
        write_trace_csv(&t, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("iteration,primal_residual,dual_residual,objective\n1,"));
    }
}
