//! Exhaustive grid search over the free variables of at most two active
//! pairs. Used as ground truth by the solver tests.

use crate::error::{MarketError, Result};
use crate::model::{compute_trade_mask, MarketInstance, TradeState};
use crate::transform::{scalarized_objective, FreeVars, PairLayout, Weights};

use super::sigma_upper;

#[derive(Debug, Clone)]
pub struct OracleResult {
    pub state: TradeState,
    pub objective: f64,
    /// Sum over axes of the largest objective change to a grid neighbour of
    /// the best point; infinite when the grid has a single point per axis.
    pub cell_bound: f64,
    pub evaluations: usize,
}

fn axis(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![0.5 * (lo + hi)];
    }
    let step = (hi - lo) / (n - 1) as f64;
    (0..n)
        .map(|k| if k + 1 == n { hi } else { lo + step * k as f64 })
        .collect()
}

/// Objective over the grid; pairs are independent except through the agent
/// totals they share.
struct GridObjective<'a> {
    inst: &'a MarketInstance,
    weights: &'a Weights,
    layout: &'a PairLayout,
    /// contribution of agents no active pair touches
    constant: f64,
    ders: Vec<usize>,
    loads: Vec<usize>,
}

impl<'a> GridObjective<'a> {
    fn new(inst: &'a MarketInstance, weights: &'a Weights, layout: &'a PairLayout) -> Self {
        let mut ders: Vec<usize> = layout.pairs().iter().map(|p| p.0).collect();
        let mut loads: Vec<usize> = layout.pairs().iter().map(|p| p.1).collect();
        ders.sort_unstable();
        ders.dedup();
        loads.sort_unstable();
        loads.dedup();
        let mut constant = 0.0;
        for i in (0..inst.num_ders).filter(|i| !ders.contains(i)) {
            if weights.der(i) != 0.0 {
                constant -= weights.der(i) * (inst.surplus[i] * inst.pcc_buy_price[i]).ln();
            }
        }
        for j in 0..inst.num_loads {
            let dist: f64 = inst.target_demand.row(j).iter().map(|t| t * t).sum();
            constant += weights.pcc(j) * dist;
            if !loads.contains(&j) && weights.load(j) != 0.0 {
                constant += weights.load(j) * (inst.demand[j] * inst.pcc_sell_price[j]).ln();
            }
        }
        Self {
            inst,
            weights,
            layout,
            constant,
            ders,
            loads,
        }
    }

    /// Objective at per-pair `(p, x, σ)`, NaN when a logarithm is undefined.
    fn eval(&self, vars: &[[f64; 3]]) -> f64 {
        let inst = self.inst;
        let alpha = inst.discount_cap;
        let mut total = self.constant;
        for &i in &self.ders {
            let mut u = inst.surplus[i] * inst.pcc_buy_price[i];
            for (k, &(pi, _)) in self.layout.pairs().iter().enumerate() {
                if pi == i {
                    let [p, x, _] = vars[k];
                    u += x * (p - inst.pcc_buy_price[i]);
                }
            }
            let w = self.weights.der(i);
            if w != 0.0 {
                if u <= 0.0 {
                    return f64::NAN;
                }
                total -= w * u.ln();
            }
        }
        for &j in &self.loads {
            let mut u = inst.demand[j] * inst.pcc_sell_price[j];
            for (k, &(i, pj)) in self.layout.pairs().iter().enumerate() {
                if pj == j {
                    let [p, x, s] = vars[k];
                    u += x * (p * (1.0 - s * alpha) - inst.pcc_sell_price[j]);
                    let t = inst.target_demand[(j, i)];
                    total += self.weights.pcc(j) * ((x - t) * (x - t) - t * t);
                }
            }
            let w = self.weights.load(j);
            if w != 0.0 {
                if u <= 0.0 {
                    return f64::NAN;
                }
                total += w * u.ln();
            }
        }
        total
    }

    fn feasible(&self, vars: &[[f64; 3]]) -> bool {
        let inst = self.inst;
        let sum_over = |pick: &dyn Fn(usize) -> bool| -> f64 {
            (0..self.layout.len()).filter(|&k| pick(k)).map(|k| vars[k][1]).sum()
        };
        self.ders
            .iter()
            .all(|&i| sum_over(&|k| self.layout.pair(k).0 == i) <= inst.surplus[i])
            && self
                .loads
                .iter()
                .all(|&j| sum_over(&|k| self.layout.pair(k).1 == j) <= inst.demand[j])
    }
}

/// Grid search over `(p, x, σ)` of every active pair, `grid_per_axis` points
/// per axis. With one point per axis the axis midpoints are used; otherwise
/// the grid spans each axis inclusively. Trades range over
/// `[0, min(E_i, D_j)]`, prices over the pricing window and discount
/// fractions over `[0, 1]` (slightly less at `α = 1`). Ties keep the first
/// point in ascending grid order.
pub fn brute_force_oracle(inst: &MarketInstance, weights: &Weights, grid_per_axis: usize) -> Result<OracleResult> {
    weights.check(inst)?;
    if grid_per_axis == 0 {
        return Err(MarketError::SolverFailed("grid_per_axis must be >= 1".into()));
    }
    let mask = compute_trade_mask(inst);
    let layout = PairLayout::from_mask(inst, &mask);
    if layout.len() > 2 {
        return Err(MarketError::TooManyActivePairs(layout.len()));
    }
    let n = grid_per_axis;
    let sigma_hi = if inst.discount_cap > 0.0 { sigma_upper(inst) } else { 1.0 };
    let axes: Vec<[Vec<f64>; 3]> = layout
        .pairs()
        .iter()
        .map(|&(i, j)| {
            let (lo, hi) = inst.price_window(i, j).expect("active pair");
            [
                axis(lo, hi, n),
                axis(0.0, inst.surplus[i].min(inst.demand[j]), n),
                axis(0.0, sigma_hi, n),
            ]
        })
        .collect();
    let dims = 3 * layout.len();
    let objective = GridObjective::new(inst, weights, &layout);

    let point = |idx: &[usize]| -> Vec<[f64; 3]> {
        axes.iter()
            .enumerate()
            .map(|(k, a)| [a[0][idx[3 * k]], a[1][idx[3 * k + 1]], a[2][idx[3 * k + 2]]])
            .collect()
    };
    let value_at = |idx: &[usize]| -> Option<f64> {
        let v = point(idx);
        if !objective.feasible(&v) {
            return None;
        }
        let f = objective.eval(&v);
        f.is_finite().then_some(f)
    };

    let mut idx = vec![0usize; dims];
    let mut best: Option<(f64, Vec<usize>)> = None;
    let mut evaluations = 0;
    let mut vars = vec![[0.0; 3]; layout.len()];
    loop {
        for (k, a) in axes.iter().enumerate() {
            vars[k] = [a[0][idx[3 * k]], a[1][idx[3 * k + 1]], a[2][idx[3 * k + 2]]];
        }
        if objective.feasible(&vars) {
            evaluations += 1;
            let f = objective.eval(&vars);
            if f.is_finite() && best.as_ref().is_none_or(|(b, _)| f < *b) {
                best = Some((f, idx.clone()));
            }
        }
        // odometer, last axis fastest
        let mut d = dims;
        loop {
            if d == 0 {
                break;
            }
            d -= 1;
            idx[d] += 1;
            if idx[d] < n {
                break;
            }
            idx[d] = 0;
        }
        if dims == 0 || idx.iter().all(|&v| v == 0) {
            break;
        }
    }

    let (best_value, best_idx) = match best {
        Some(b) => b,
        None if dims == 0 => (objective.eval(&[]), Vec::new()),
        None => return Err(MarketError::SolverFailed("no finite grid point".into())),
    };
    let mut cell_bound = if dims == 0 || n == 1 { f64::INFINITY } else { 0.0 };
    if cell_bound == 0.0 {
        for d in 0..dims {
            let mut worst = 0.0f64;
            for delta in [-1i64, 1] {
                let v = best_idx[d] as i64 + delta;
                if v < 0 || v >= n as i64 {
                    continue;
                }
                let mut nb = best_idx.clone();
                nb[d] = v as usize;
                if let Some(f) = value_at(&nb) {
                    worst = worst.max((f - best_value).abs());
                }
            }
            cell_bound += worst;
        }
    }

    let best_point = point(&best_idx);
    let mut fv = FreeVars::zeros(layout.len());
    for (k, [p, x, s]) in best_point.iter().enumerate() {
        fv.price[k] = *p;
        fv.trade[k] = *x;
        fv.sigma[k] = *s;
    }
    let state = layout.to_state(inst, &fv);
    let objective = scalarized_objective(inst, weights, &state)?;
    Ok(OracleResult {
        state,
        objective,
        cell_bound,
        evaluations,
    })
}
