//! Random instances and states shared by the integration tests.
#![allow(dead_code)]

use gridmarket::model::Matrix;
use gridmarket::{MarketInstance, TradeState};
use rand::Rng;

pub struct InstanceRanges {
    pub surplus: (f64, f64),
    pub demand: (f64, f64),
    pub buy: (f64, f64),
    pub sell: (f64, f64),
    pub cap: (f64, f64),
    pub alpha: (f64, f64),
}

impl Default for InstanceRanges {
    fn default() -> Self {
        Self {
            surplus: (5.0, 60.0),
            demand: (5.0, 60.0),
            buy: (20.0, 20.0),
            sell: (50.0, 50.0),
            cap: (60.0, 110.0),
            alpha: (0.1, 0.9),
        }
    }
}

fn draw<R: Rng>(rng: &mut R, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.gen_range(lo..hi)
    }
}

/// A valid instance; targets stay below both the demand and the surplus.
pub fn random_instance<R: Rng>(rng: &mut R, g: usize, l: usize, r: &InstanceRanges) -> MarketInstance {
    let surplus: Vec<f64> = (0..g).map(|_| draw(rng, r.surplus)).collect();
    let demand: Vec<f64> = (0..l).map(|_| draw(rng, r.demand)).collect();
    let target: Vec<Vec<f64>> = (0..l)
        .map(|j| {
            (0..g)
                .map(|i| rng.gen_range(0.0..1.0) * surplus[i].min(demand[j]) / g.max(l) as f64)
                .collect()
        })
        .collect();
    MarketInstance {
        num_ders: g,
        num_loads: l,
        pcc_buy_price: (0..g).map(|_| draw(rng, r.buy)).collect(),
        pcc_sell_price: (0..l).map(|_| draw(rng, r.sell)).collect(),
        price_cap: (0..g).map(|_| draw(rng, r.cap)).collect(),
        discount_cap: draw(rng, r.alpha),
        target_demand: Matrix::from_rows(&target).unwrap(),
        surplus,
        demand,
        region_of_agent: None,
    }
}

/// A feasible state with every trade, slack, price and discount strictly
/// positive.
pub fn random_positive_state<R: Rng>(rng: &mut R, inst: &MarketInstance) -> TradeState {
    let (g, l) = (inst.num_ders, inst.num_loads);
    let mut s = inst.baseline_state();
    let share = (g.max(l) + 1) as f64;
    for i in 0..g {
        for j in 0..l {
            let qty = rng.gen_range(0.01..1.0) * inst.surplus[i].min(inst.demand[j]) / share;
            let p = rng.gen_range(0.01..1.0) * inst.price_cap[i];
            s.prices[(i, j)] = p;
            s.disc[(j, i)] = rng.gen_range(0.01..0.99) * inst.discount_cap * p;
            s.alloc[(i, j + 1)] = qty;
            s.dem[(j, i + 1)] = qty;
        }
    }
    s.reconcile_slacks(inst);
    s
}

/// Whether a pair has a nonempty rational price window, computed from the
/// instance fields alone.
pub fn pair_can_trade(inst: &MarketInstance, i: usize, j: usize) -> bool {
    let keep = 1.0 - inst.discount_cap;
    let upper = if keep > 0.0 {
        inst.pcc_sell_price[j] / keep
    } else {
        f64::INFINITY
    };
    inst.pcc_buy_price[i] < inst.price_cap[i].min(upper)
}

/// DER revenue summed by hand from the state matrices.
pub fn revenue(inst: &MarketInstance, s: &TradeState, i: usize) -> f64 {
    let peer: f64 = (0..inst.num_loads).map(|j| s.prices[(i, j)] * s.alloc[(i, j + 1)]).sum();
    peer + s.alloc[(i, 0)] * inst.pcc_buy_price[i]
}

/// Load expense summed by hand from the state matrices.
pub fn expense(inst: &MarketInstance, s: &TradeState, j: usize) -> f64 {
    let peer: f64 = (0..inst.num_ders)
        .map(|i| (s.prices[(i, j)] - s.disc[(j, i)]) * s.dem[(j, i + 1)])
        .sum();
    peer + s.dem[(j, 0)] * inst.pcc_sell_price[j]
}

/// Pairs trading more than `tol`, in row-major order.
pub fn support(inst: &MarketInstance, s: &TradeState, tol: f64) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for i in 0..inst.num_ders {
        for j in 0..inst.num_loads {
            if s.trade(i, j) > tol {
                out.push((i, j));
            }
        }
    }
    out
}

/// The fixed 2x2 market used for the distributed-solver checks.
pub fn two_by_two(regions: Vec<usize>) -> MarketInstance {
    MarketInstance {
        num_ders: 2,
        num_loads: 2,
        surplus: vec![30.0, 20.0],
        demand: vec![25.0, 35.0],
        pcc_buy_price: vec![20.0, 20.0],
        pcc_sell_price: vec![50.0, 50.0],
        price_cap: vec![80.0, 80.0],
        discount_cap: 0.3,
        target_demand: Matrix::from_rows(&[vec![15.0, 5.0], vec![10.0, 12.0]]).unwrap(),
        region_of_agent: Some(regions),
    }
}
