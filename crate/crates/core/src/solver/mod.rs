//! Centralized scalarized solver, KKT residuals, the brute-force oracle and
//! Pareto sweeps over weights and discount caps.

pub mod engine;
mod oracle;
pub mod projection;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{MarketError, Result};
use crate::model::{
    check_feasible, compute_trade_mask, report_distance, validate_instance, MarketInstance, ObjectiveValues,
    TradeState,
};
use crate::scenarios::{der_gain, load_gain, SweepRecord};
use crate::transform::{
    gradient_at, objective_at, scalarized_objective, AgentTotals, FreeVars, PairLayout, Weights, VAR_FLOOR,
};
use engine::{argmin_1d, BlockProblem, EngineOptions};
use projection::{Group, TradePolytope};

pub use oracle::{brute_force_oracle, OracleResult};

/// Trade prices stay this far inside the open side of the rational window,
/// so a priced trade is strictly better than the PCC for both parties.
pub const PRICE_MARGIN: f64 = 1e-6;

/// Agents with less surplus or demand than this never trade.
pub const MIN_CAPACITY: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    pub max_iter: usize,
    pub tol_grad: f64,
    pub tol_step: f64,
    pub num_restarts: usize,
    pub rng_seed: u64,
    pub floor: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            max_iter: 5000,
            tol_grad: 1e-7,
            tol_step: 1e-10,
            num_restarts: 8,
            rng_seed: 0,
            floor: VAR_FLOOR,
        }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> Result<()> {
        if self.max_iter == 0 || self.num_restarts == 0 {
            return Err(MarketError::SolverFailed("max_iter and num_restarts must be >= 1".into()));
        }
        if !(self.tol_grad > 0.0 && self.tol_step > 0.0 && self.floor > 0.0) {
            return Err(MarketError::SolverFailed("tolerances must be > 0".into()));
        }
        Ok(())
    }

    pub(crate) fn engine(&self) -> EngineOptions {
        EngineOptions {
            max_iter: self.max_iter,
            tol_grad: self.tol_grad,
            tol_step: self.tol_step,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Solution {
    pub state: TradeState,
    pub objective: f64,
    pub objective_parts: ObjectiveValues,
    pub kkt_residual: f64,
    pub converged: bool,
    pub iterations: usize,
    pub restarts_used: usize,
    pub note: Option<String>,
}

/// Weights with equal entries per objective class and the class ratios
/// `λ_DER = 0.3 λ_load` and `λ_DER = 0.1 λ_PCC`, normalized.
pub fn default_lambda(num_ders: usize, num_loads: usize) -> Weights {
    let total = num_ders as f64 + num_loads as f64 / 0.3 + 10.0 * num_loads as f64;
    let der = 1.0 / total;
    let mut values = vec![der; num_ders];
    values.extend(std::iter::repeat_n(der / 0.3, num_loads));
    values.extend(std::iter::repeat_n(10.0 * der, num_loads));
    Weights::normalized(values, num_ders, num_loads).expect("positive weights")
}

/// Admissible price box of a pair as used by the solvers: the rational
/// window shrunk by [`PRICE_MARGIN`] on its open sides.
pub fn solver_price_bounds(inst: &MarketInstance, der: usize, load: usize) -> Option<(f64, f64)> {
    let (lo, _) = inst.price_window(der, load)?;
    let lo = lo.max(VAR_FLOOR) + PRICE_MARGIN;
    let hi = inst.price_cap[der].min(inst.discounted_price_limit(load) - PRICE_MARGIN);
    (hi > lo).then_some((lo, hi))
}

/// Upper bound on the discount fraction `σ`; keeps the discounted price
/// strictly positive when `α = 1`.
pub fn sigma_upper(inst: &MarketInstance) -> f64 {
    let alpha = inst.discount_cap;
    if alpha <= 0.0 {
        0.0
    } else {
        (1.0f64).min((1.0 - 1e-8) / alpha)
    }
}

/// Pairs the solvers optimize: a nonempty price box and positive capacity on
/// both sides.
pub fn tradable_layout(inst: &MarketInstance) -> PairLayout {
    let mask = compute_trade_mask(inst);
    let pairs = mask
        .active_pairs()
        .into_iter()
        .filter(|&(i, j)| {
            solver_price_bounds(inst, i, j).is_some()
                && inst.surplus[i] > MIN_CAPACITY
                && inst.demand[j] > MIN_CAPACITY
        })
        .collect();
    PairLayout::new(inst.num_ders, inst.num_loads, pairs)
}

/// Trade polytope of a layout restricted to `owned` pairs, with per-DER and
/// per-load caps shrunk by `slack_floor`. Agents absent from `rows`/`cols`
/// contribute no group.
pub(crate) fn trade_polytope(
    inst: &MarketInstance,
    layout: &PairLayout,
    owned: &[usize],
    lower: f64,
    slack_floor: f64,
    ders: impl Iterator<Item = usize>,
    loads: impl Iterator<Item = usize>,
) -> TradePolytope {
    let local = |k: usize| owned.iter().position(|&o| o == k);
    let rows = ders
        .filter(|&i| !layout.der_pairs(i).is_empty())
        .map(|i| Group {
            members: layout.der_pairs(i).iter().filter_map(|&k| local(k)).collect(),
            cap: inst.surplus[i] - slack_floor,
        })
        .collect();
    let cols = loads
        .filter(|&j| !layout.load_pairs(j).is_empty())
        .map(|j| Group {
            members: layout.load_pairs(j).iter().filter_map(|&k| local(k)).collect(),
            cap: inst.demand[j] - slack_floor,
        })
        .collect();
    TradePolytope {
        lower: vec![lower; owned.len()],
        rows,
        cols,
    }
}

/// The original (log-of-sums) scalarized objective over a layout.
pub(crate) struct OriginalProblem<'a> {
    inst: &'a MarketInstance,
    weights: &'a Weights,
    layout: &'a PairLayout,
    owned: Vec<usize>,
    polytope: TradePolytope,
    prices: Vec<(f64, f64)>,
    sigma_hi: f64,
}

impl<'a> OriginalProblem<'a> {
    pub(crate) fn new(inst: &'a MarketInstance, weights: &'a Weights, layout: &'a PairLayout, lower: f64) -> Self {
        let owned: Vec<usize> = (0..layout.len()).collect();
        let polytope = trade_polytope(inst, layout, &owned, lower, 0.0, 0..inst.num_ders, 0..inst.num_loads);
        let prices = layout
            .pairs()
            .iter()
            .map(|&(i, j)| solver_price_bounds(inst, i, j).expect("tradable pair"))
            .collect();
        Self {
            inst,
            weights,
            layout,
            owned,
            polytope,
            prices,
            sigma_hi: sigma_upper(inst),
        }
    }
}

impl BlockProblem for OriginalProblem<'_> {
    fn owned(&self) -> &[usize] {
        &self.owned
    }

    fn value(&self, z: &FreeVars) -> f64 {
        objective_at(self.inst, self.weights, self.layout, z).unwrap_or(f64::INFINITY)
    }

    fn gradient(&self, z: &FreeVars) -> FreeVars {
        gradient_at(self.inst, self.weights, self.layout, z)
    }

    fn update_prices(&self, z: &mut FreeVars) {
        let inst = self.inst;
        let alpha = inst.discount_cap;
        for k in 0..self.layout.len() {
            let (i, j) = self.layout.pair(k);
            let totals = AgentTotals::compute(inst, self.layout, z);
            let (x, p0) = (z.trade[k], z.price[k]);
            let keep = 1.0 - z.sigma[k] * alpha;
            // revenue and expense without this pair's price-dependent part
            let a_rest = totals.revenue[i] - x * p0;
            let b_rest = totals.expense[j] - x * keep * p0;
            let (a, b) = (self.weights.der(i), self.weights.load(j));
            let f = |p: f64| {
                let mut v = 0.0;
                if a != 0.0 {
                    let u = a_rest + x * p;
                    v -= if u > 0.0 { a * u.ln() } else { f64::NEG_INFINITY };
                }
                if b != 0.0 {
                    let u = b_rest + keep * x * p;
                    v += if u > 0.0 { b * u.ln() } else { f64::NEG_INFINITY };
                }
                v
            };
            let mut stationary = Vec::new();
            if x > 0.0 && keep > 0.0 && a != b {
                stationary.push((b * keep * a_rest - a * b_rest) / (keep * x * (a - b)));
            }
            let (lo, hi) = self.prices[k];
            z.price[k] = argmin_1d(f, lo, hi, &stationary);
        }
    }

    fn update_sigmas(&self, z: &mut FreeVars) {
        // the objective is non-increasing in σ: discounts only lower expenses
        for k in 0..self.layout.len() {
            z.sigma[k] = if z.trade[k] > 0.0 { self.sigma_hi } else { 0.0 };
        }
    }

    fn polytope(&self) -> &TradePolytope {
        &self.polytope
    }

    fn price_bounds(&self, pair: usize) -> (f64, f64) {
        self.prices[pair]
    }

    fn sigma_bounds(&self, _pair: usize) -> (f64, f64) {
        (0.0, self.sigma_hi)
    }
}

/// Starting points: no trade, the target demands, then uniform random draws.
pub(crate) fn starting_point(
    inst: &MarketInstance,
    layout: &PairLayout,
    index: usize,
    rng: &mut ChaCha8Rng,
) -> FreeVars {
    let n = layout.len();
    let sigma_hi = sigma_upper(inst);
    let mut z = FreeVars::zeros(n);
    for (k, &(i, j)) in layout.pairs().iter().enumerate() {
        let (lo, hi) = solver_price_bounds(inst, i, j).expect("tradable pair");
        match index {
            0 => {
                z.trade[k] = 0.0;
                z.price[k] = lo;
                z.sigma[k] = sigma_hi;
            }
            1 => {
                z.trade[k] = inst.target_demand[(j, i)];
                z.price[k] = 0.5 * (lo + hi);
                z.sigma[k] = sigma_hi;
            }
            _ => {
                let cap = inst.surplus[i].min(inst.demand[j]);
                z.trade[k] = rng.gen::<f64>() * cap;
                z.price[k] = lo + rng.gen::<f64>() * (hi - lo);
                z.sigma[k] = rng.gen::<f64>() * sigma_hi;
            }
        }
    }
    z
}

/// Runs the engine from every starting point (plus `warm`, tried first when
/// given) and keeps the lowest finite `score` (the engine value when `None`).
/// Returns the winner with its score and the number of starts used.
pub(crate) fn multi_start<P: BlockProblem>(
    problem: &P,
    inst: &MarketInstance,
    layout: &PairLayout,
    opts: &SolverOptions,
    warm: Option<FreeVars>,
    score: Option<&dyn Fn(&FreeVars) -> f64>,
) -> Option<(engine::EngineResult, f64, usize)> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.rng_seed);
    let owned = problem.owned();
    let key = |z: &FreeVars| -> Vec<f64> {
        let pick = |v: &[f64]| owned.iter().map(|&k| v[k]).collect::<Vec<_>>();
        [pick(&z.price), pick(&z.trade), pick(&z.sigma)].concat()
    };
    let mut best: Option<(engine::EngineResult, f64)> = None;
    let mut used = 0;
    let generated = (0..opts.num_restarts).map(|k| (k, None));
    for (index, start) in warm.map(|z| (usize::MAX, Some(z))).into_iter().chain(generated) {
        let z0 = match start {
            Some(z) => z,
            None => starting_point(inst, layout, index, &mut rng),
        };
        used += 1;
        let res = engine::minimize(problem, z0, opts.engine());
        let value = match score {
            Some(f) if res.value.is_finite() => f(&res.vars),
            _ => res.value,
        };
        if !value.is_finite() {
            continue;
        }
        let better = match &best {
            None => true,
            Some((b, bv)) => value < *bv || (value == *bv && key(&res.vars) < key(&b.vars)),
        };
        if better {
            best = Some((res, value));
        }
    }
    best.map(|(b, v)| (b, v, used))
}

/// Trades below this are reported as zero.
pub fn report_floor(opts: &SolverOptions) -> f64 {
    10.0 * opts.floor
}

/// Builds the reported state: trades under [`report_floor`] become zero.
pub(crate) fn finalize_state(inst: &MarketInstance, layout: &PairLayout, vars: &FreeVars, floor: f64) -> TradeState {
    let mut vars = vars.clone();
    for x in vars.trade.iter_mut() {
        if *x < floor {
            *x = 0.0;
        }
    }
    layout.to_state(inst, &vars)
}

pub(crate) fn check_inputs(inst: &MarketInstance, weights: &Weights, opts: &SolverOptions) -> Result<()> {
    let violations = validate_instance(inst);
    if !violations.is_empty() {
        let msgs: Vec<String> = violations.iter().map(ToString::to_string).collect();
        return Err(MarketError::InvalidInstance(msgs.join("; ")));
    }
    if weights.num_ders() != inst.num_ders || weights.num_loads() != inst.num_loads {
        return Err(MarketError::InvalidWeights("weights do not match the instance size".into()));
    }
    opts.validate()
}

fn baseline_solution(inst: &MarketInstance, weights: &Weights) -> Result<Solution> {
    let state = inst.baseline_state();
    let objective = scalarized_objective(inst, weights, &state)?;
    let unreachable = (0..inst.num_loads).any(|j| weights.pcc(j) > 0.0 && inst.target_demand.row(j).iter().any(|t| *t > 0.0));
    Ok(Solution {
        objective_parts: ObjectiveValues::evaluate(inst, &state),
        state,
        objective,
        kkt_residual: 0.0,
        converged: true,
        iterations: 0,
        restarts_used: 0,
        note: unreachable.then(|| "target unreachable: no pair can trade".to_string()),
    })
}

/// Multi-start minimization of the scalarized objective.
///
/// Trades are optimized as load demands (allocations follow by
/// consistency) inside the capacity polytope, prices inside their rational
/// windows, and discounts through `σ ∈ [0, 1]` with `s = σ α p`.
pub fn solve_scalarized(inst: &MarketInstance, weights: &Weights, opts: &SolverOptions) -> Result<Solution> {
    check_inputs(inst, weights, opts)?;
    let layout = tradable_layout(inst);
    if layout.is_empty() {
        return baseline_solution(inst, weights);
    }
    let problem = OriginalProblem::new(inst, weights, &layout, opts.floor);
    let floor = report_floor(opts);
    let reported = |z: &FreeVars| {
        scalarized_objective(inst, weights, &finalize_state(inst, &layout, z, floor)).unwrap_or(f64::INFINITY)
    };
    let (best, _, restarts_used) = multi_start(&problem, inst, &layout, opts, None, Some(&reported)).ok_or_else(|| {
        MarketError::SolverFailed(format!("objective not finite from any of {} starts", opts.num_restarts))
    })?;

    let state = finalize_state(inst, &layout, &best.vars, report_floor(opts));
    let objective = scalarized_objective(inst, weights, &state)?;
    let mut solution = Solution {
        objective_parts: ObjectiveValues::evaluate(inst, &state),
        state,
        objective,
        kkt_residual: 0.0,
        converged: best.converged,
        iterations: best.iterations,
        restarts_used,
        note: None,
    };
    solution.kkt_residual = kkt_residual(inst, weights, &solution);
    debug_assert!(check_feasible(inst, &solution.state).is_empty());
    Ok(solution)
}

/// First-order stationarity of a reported solution: the largest component of
/// `z - Π(z - ∇U(z))` over the free variables, with trades bounded below by
/// zero. Fixed (untradable) variables do not count.
pub fn kkt_residual(inst: &MarketInstance, weights: &Weights, solution: &Solution) -> f64 {
    kkt_residual_of_state(inst, weights, &solution.state)
}

pub fn kkt_residual_of_state(inst: &MarketInstance, weights: &Weights, state: &TradeState) -> f64 {
    let layout = tradable_layout(inst);
    if layout.is_empty() {
        return 0.0;
    }
    let problem = OriginalProblem::new(inst, weights, &layout, 0.0);
    let vars = layout.extract(inst, state);
    engine::natural_residual(&problem, &vars)
}

/// Solves every `(λ, α)` combination; records are ordered `λ`-major and a
/// failed point yields a record with `converged = false` and NaN metrics.
/// `jobs` caps the worker threads (`None` uses the global pool).
pub fn pareto_sweep(
    inst: &MarketInstance,
    lambdas: &[Weights],
    alphas: &[f64],
    opts: &SolverOptions,
    jobs: Option<usize>,
) -> Vec<SweepRecord> {
    sweep_with(lambdas, alphas, jobs, |weights, alpha| {
        let inst = inst.with_discount_cap(alpha);
        solve_scalarized(&inst, weights, opts).map(|s| (inst, s))
    })
}

pub(crate) fn sweep_with<F>(lambdas: &[Weights], alphas: &[f64], jobs: Option<usize>, solve: F) -> Vec<SweepRecord>
where
    F: Fn(&Weights, f64) -> Result<(MarketInstance, Solution)> + Sync,
{
    let points: Vec<(usize, f64)> = (0..lambdas.len())
        .flat_map(|l| alphas.iter().map(move |a| (l, *a)))
        .collect();
    let run = || {
        points
            .par_iter()
            .map(|&(l, alpha)| match solve(&lambdas[l], alpha) {
                Ok((inst, sol)) => record_for(&inst, alpha, &sol),
                Err(_) => SweepRecord::failed(alpha),
            })
            .collect::<Vec<_>>()
    };
    match jobs {
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build() {
            Ok(pool) => pool.install(run),
            Err(_) => run(),
        },
        None => run(),
    }
}

pub(crate) fn record_for(inst: &MarketInstance, alpha: f64, sol: &Solution) -> SweepRecord {
    SweepRecord {
        alpha,
        der_gain_pct: der_gain(inst, sol),
        load_gain_pct: load_gain(inst, sol),
        distance: report_distance(inst, &sol.state),
        objective: sol.objective,
        converged: sol.converged,
    }
}
