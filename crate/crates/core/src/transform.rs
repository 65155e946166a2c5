//! Posynomial and log-domain forms of the agent objectives, the scalarized
//! objective with its analytic gradient, and the Jensen (sum-of-logs)
//! surrogate used by the distributed solver.
//!
//! Solvers work on a reduced set of free variables: for every tradable pair
//! `(i, j)` the traded energy `x = h_ij = d_ji`, the price `p_ij`, and the
//! discount fraction `σ` with `s_ji = σ α p_ij`. Consistency holds by
//! construction and the PCC slacks are implied.

use serde::{Deserialize, Serialize};

use crate::error::{MarketError, Result};
use crate::model::{MarketInstance, TradeMask, TradeState};

/// Floor on log-domain quantities (kWh).
pub const VAR_FLOOR: f64 = 1e-8;

/// Posynomial exponents and coefficients of both objective families.
///
/// For DER `i` the term `j = 0` (PCC) has exponent 0 and coefficient `γ_i`;
/// every peer term has exponent 1 and coefficient 1. Loads mirror this with
/// `π_j`. The dummy price multiplying the PCC term is fixed to 1.
#[derive(Debug, Clone, PartialEq)]
pub struct PosyCoefficients {
    pub der_exponents: Vec<i32>,
    pub der_coeffs: Vec<Vec<f64>>,
    pub load_exponents: Vec<i32>,
    pub load_coeffs: Vec<Vec<f64>>,
}

pub const DUMMY_PRICE: f64 = 1.0;

impl PosyCoefficients {
    pub fn new(inst: &MarketInstance) -> Self {
        let (g, l) = (inst.num_ders, inst.num_loads);
        let exps = |n: usize| (0..=n).map(|j| i32::from(j != 0)).collect();
        Self {
            der_exponents: exps(l),
            der_coeffs: (0..g)
                .map(|i| {
                    (0..=l)
                        .map(|j| if j == 0 { inst.pcc_buy_price[i] } else { 1.0 })
                        .collect()
                })
                .collect(),
            load_exponents: exps(g),
            load_coeffs: (0..l)
                .map(|j| {
                    (0..=g)
                        .map(|i| if i == 0 { inst.pcc_sell_price[j] } else { 1.0 })
                        .collect()
                })
                .collect(),
        }
    }
}

/// `[1, p_i1, .., p_iL]`: DER `i`'s price row with the dummy PCC price.
pub fn der_price_row(state: &TradeState, der: usize) -> Vec<f64> {
    std::iter::once(DUMMY_PRICE)
        .chain(state.prices.row(der).iter().copied())
        .collect()
}

/// `[1, p_1j - s_j1, .., p_Gj - s_jG]`: load `j`'s discounted price row.
pub fn load_price_row(state: &TradeState, load: usize) -> Vec<f64> {
    let g = state.prices.rows();
    std::iter::once(DUMMY_PRICE)
        .chain((0..g).map(|i| state.prices[(i, load)] - state.disc[(load, i)]))
        .collect()
}

fn posy(coeffs: &[f64], exps: &[i32], prices: &[f64], qty: &[f64]) -> f64 {
    coeffs
        .iter()
        .zip(exps)
        .zip(prices.iter().zip(qty))
        .map(|((c, e), (p, q))| c * p.powi(*e) * q)
        .sum()
}

/// DER revenue as the posynomial `Σ_j c_ij p_ij^a_j h_ij` over `j = 0..L`.
pub fn posy_der_objective(coeffs: &PosyCoefficients, der: usize, p_row: &[f64], h_row: &[f64]) -> f64 {
    posy(&coeffs.der_coeffs[der], &coeffs.der_exponents, p_row, h_row)
}

/// Load expense as a posynomial in the discounted prices `p' = p - s`.
pub fn posy_load_objective(
    coeffs: &PosyCoefficients,
    load: usize,
    pprime_row: &[f64],
    d_row: &[f64],
) -> f64 {
    posy(&coeffs.load_coeffs[load], &coeffs.load_exponents, pprime_row, d_row)
}

fn log_domain(
    coeffs: &[f64],
    exps: &[i32],
    prices: &[f64],
    qty: &[f64],
    support: &[usize],
) -> Result<f64> {
    let mut total = 0.0;
    for &j in support {
        let (p, q) = (prices[j], qty[j]);
        if p <= 0.0 || q <= 0.0 {
            return Err(MarketError::NonPositiveLog {
                what: format!("log-domain term {j}"),
                value: p.min(q),
            });
        }
        total += (f64::from(exps[j]) * p.ln() + q.ln() + coeffs[j].ln()).exp();
    }
    Ok(total)
}

/// `Σ_{j ∈ support} exp(a_j log p_ij + log h_ij + log c_ij)`.
pub fn log_domain_der_objective(
    coeffs: &PosyCoefficients,
    der: usize,
    p_row: &[f64],
    h_row: &[f64],
    support: &[usize],
) -> Result<f64> {
    log_domain(&coeffs.der_coeffs[der], &coeffs.der_exponents, p_row, h_row, support)
}

pub fn log_domain_load_objective(
    coeffs: &PosyCoefficients,
    load: usize,
    pprime_row: &[f64],
    d_row: &[f64],
    support: &[usize],
) -> Result<f64> {
    log_domain(&coeffs.load_coeffs[load], &coeffs.load_exponents, pprime_row, d_row, support)
}

/// Log-domain support of a DER row: the PCC slack plus every active pair.
pub fn der_support(mask: &TradeMask, der: usize, num_loads: usize) -> Vec<usize> {
    std::iter::once(0)
        .chain((0..num_loads).filter(|&j| mask.is_active(der, j)).map(|j| j + 1))
        .collect()
}

pub fn load_support(mask: &TradeMask, load: usize, num_ders: usize) -> Vec<usize> {
    std::iter::once(0)
        .chain((0..num_ders).filter(|&i| mask.is_active(i, load)).map(|i| i + 1))
        .collect()
}

/// Scalarization weights on the `(G + 2L)`-simplex, ordered
/// `[DER 1..G | load 1..L | PCC 1..L]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Weights {
    values: Vec<f64>,
    num_ders: usize,
    num_loads: usize,
}

impl Weights {
    pub fn new(values: Vec<f64>, num_ders: usize, num_loads: usize) -> Result<Self> {
        if values.len() != num_ders + 2 * num_loads {
            return Err(MarketError::InvalidWeights(format!(
                "expected {} entries, got {}",
                num_ders + 2 * num_loads,
                values.len()
            )));
        }
        if values.iter().any(|w| !(0.0..=1.0).contains(w)) {
            return Err(MarketError::InvalidWeights("entries must lie in [0,1]".into()));
        }
        let sum: f64 = values.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(MarketError::InvalidWeights(format!("entries sum to {sum}, not 1")));
        }
        Ok(Self {
            values,
            num_ders,
            num_loads,
        })
    }

    /// Rescales nonnegative entries onto the simplex.
    pub fn normalized(values: Vec<f64>, num_ders: usize, num_loads: usize) -> Result<Self> {
        let sum: f64 = values.iter().sum();
        if !(sum > 0.0) || values.iter().any(|w| *w < 0.0 || !w.is_finite()) {
            return Err(MarketError::InvalidWeights("need nonnegative entries with a positive sum".into()));
        }
        let mut values: Vec<f64> = values.into_iter().map(|w| w / sum).collect();
        // absorb rounding so the entries sum to 1 within 1e-12
        let drift = 1.0 - values.iter().sum::<f64>();
        if let Some(max) = values.iter_mut().max_by(|a, b| a.total_cmp(b)) {
            *max += drift;
        }
        Self::new(values, num_ders, num_loads)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn der(&self, i: usize) -> f64 {
        self.values[i]
    }

    pub fn load(&self, j: usize) -> f64 {
        self.values[self.num_ders + j]
    }

    pub fn pcc(&self, j: usize) -> f64 {
        self.values[self.num_ders + self.num_loads + j]
    }

    pub fn num_ders(&self) -> usize {
        self.num_ders
    }

    pub fn num_loads(&self) -> usize {
        self.num_loads
    }

    pub(crate) fn check(&self, inst: &MarketInstance) -> Result<()> {
        if self.num_ders != inst.num_ders || self.num_loads != inst.num_loads {
            return Err(MarketError::InvalidWeights(format!(
                "weights sized for {}x{}, instance is {}x{}",
                self.num_ders, self.num_loads, inst.num_ders, inst.num_loads
            )));
        }
        Ok(())
    }
}

fn weighted_log(weight: f64, value: f64, what: impl FnOnce() -> String) -> Result<f64> {
    if weight == 0.0 {
        return Ok(0.0);
    }
    if value <= 0.0 || !value.is_finite() {
        return Err(MarketError::NonPositiveLog { what: what(), value });
    }
    Ok(weight * value.ln())
}

/// `-Σ λ_i log U'^G_i + Σ λ_{G+j} log U'^L_j + Σ λ_{G+L+j} U^PCC_j`.
///
/// The log-domain sums are evaluated over the positive support of `state`,
/// where they coincide with the posynomials. Zero-weight terms are skipped.
pub fn scalarized_objective(inst: &MarketInstance, weights: &Weights, state: &TradeState) -> Result<f64> {
    weights.check(inst)?;
    let (g, l) = (inst.num_ders, inst.num_loads);
    let mut total = 0.0;
    for i in 0..g {
        let mut u = 0.0;
        for j in 0..=l {
            let h = state.alloc[(i, j)];
            u += if j == 0 {
                inst.pcc_buy_price[i] * h
            } else {
                state.prices[(i, j - 1)] * h
            };
        }
        total -= weighted_log(weights.der(i), u, || format!("revenue of DER {}", i + 1))?;
    }
    for j in 0..l {
        let mut u = 0.0;
        let mut dist = 0.0;
        for i in 0..=g {
            let d = state.dem[(j, i)];
            if i == 0 {
                u += inst.pcc_sell_price[j] * d;
            } else {
                u += (state.prices[(i - 1, j)] - state.disc[(j, i - 1)]) * d;
                let r = d - inst.target_demand[(j, i - 1)];
                dist += r * r;
            }
        }
        total += weighted_log(weights.load(j), u, || format!("expense of load {}", j + 1))?;
        total += weights.pcc(j) * dist;
    }
    Ok(total)
}

/// The tradable pairs a solver optimizes over, with row/column lookups.
#[derive(Debug, Clone, PartialEq)]
pub struct PairLayout {
    pairs: Vec<(usize, usize)>,
    der_pairs: Vec<Vec<usize>>,
    load_pairs: Vec<Vec<usize>>,
}

impl PairLayout {
    pub fn new(num_ders: usize, num_loads: usize, pairs: Vec<(usize, usize)>) -> Self {
        let mut der_pairs = vec![Vec::new(); num_ders];
        let mut load_pairs = vec![Vec::new(); num_loads];
        for (k, &(i, j)) in pairs.iter().enumerate() {
            der_pairs[i].push(k);
            load_pairs[j].push(k);
        }
        Self {
            pairs,
            der_pairs,
            load_pairs,
        }
    }

    pub fn from_mask(inst: &MarketInstance, mask: &TradeMask) -> Self {
        Self::new(inst.num_ders, inst.num_loads, mask.active_pairs())
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    pub fn pair(&self, k: usize) -> (usize, usize) {
        self.pairs[k]
    }

    /// Pair indices in DER `i`'s row.
    pub fn der_pairs(&self, der: usize) -> &[usize] {
        &self.der_pairs[der]
    }

    /// Pair indices in load `j`'s column.
    pub fn load_pairs(&self, load: usize) -> &[usize] {
        &self.load_pairs[load]
    }

    pub fn num_ders(&self) -> usize {
        self.der_pairs.len()
    }

    pub fn num_loads(&self) -> usize {
        self.load_pairs.len()
    }

    /// Materializes a full state; pairs outside the layout do not trade.
    pub fn to_state(&self, inst: &MarketInstance, vars: &FreeVars) -> TradeState {
        let mut state = inst.baseline_state();
        let alpha = inst.discount_cap;
        for (k, &(i, j)) in self.pairs.iter().enumerate() {
            state.prices[(i, j)] = vars.price[k];
            state.disc[(j, i)] = vars.sigma[k] * alpha * vars.price[k];
            state.alloc[(i, j + 1)] = vars.trade[k];
            state.dem[(j, i + 1)] = vars.trade[k];
        }
        state.reconcile_slacks(inst);
        state
    }

    /// Reads the free variables of this layout back out of a state.
    pub fn extract(&self, inst: &MarketInstance, state: &TradeState) -> FreeVars {
        let alpha = inst.discount_cap;
        let mut vars = FreeVars::zeros(self.len());
        for (k, &(i, j)) in self.pairs.iter().enumerate() {
            let p = state.prices[(i, j)];
            vars.trade[k] = state.dem[(j, i + 1)];
            vars.price[k] = p;
            vars.sigma[k] = if alpha * p > 0.0 {
                state.disc[(j, i)] / (alpha * p)
            } else {
                0.0
            };
        }
        vars
    }
}

/// Free variables (or a gradient over them), aligned with a [`PairLayout`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FreeVars {
    pub trade: Vec<f64>,
    pub price: Vec<f64>,
    pub sigma: Vec<f64>,
}

impl FreeVars {
    pub fn zeros(n: usize) -> Self {
        Self {
            trade: vec![0.0; n],
            price: vec![0.0; n],
            sigma: vec![0.0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.trade.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trade.is_empty()
    }

    pub fn iter_all(&self) -> impl Iterator<Item = f64> + '_ {
        self.trade
            .iter()
            .chain(&self.price)
            .chain(&self.sigma)
            .copied()
    }
}

/// Aggregate revenue and expense of every agent for a set of free variables.
#[derive(Debug, Clone)]
pub struct AgentTotals {
    pub revenue: Vec<f64>,
    pub expense: Vec<f64>,
}

impl AgentTotals {
    pub fn compute(inst: &MarketInstance, layout: &PairLayout, vars: &FreeVars) -> Self {
        let alpha = inst.discount_cap;
        let mut revenue: Vec<f64> = (0..inst.num_ders)
            .map(|i| inst.surplus[i] * inst.pcc_buy_price[i])
            .collect();
        let mut expense: Vec<f64> = (0..inst.num_loads)
            .map(|j| inst.demand[j] * inst.pcc_sell_price[j])
            .collect();
        for (k, &(i, j)) in layout.pairs().iter().enumerate() {
            let (x, p, s) = (vars.trade[k], vars.price[k], vars.sigma[k]);
            revenue[i] += x * (p - inst.pcc_buy_price[i]);
            expense[j] += x * (p * (1.0 - s * alpha) - inst.pcc_sell_price[j]);
        }
        Self { revenue, expense }
    }
}

/// Scalarized objective evaluated directly on free variables.
pub fn objective_at(inst: &MarketInstance, weights: &Weights, layout: &PairLayout, vars: &FreeVars) -> Result<f64> {
    let totals = AgentTotals::compute(inst, layout, vars);
    let mut total = 0.0;
    for i in 0..inst.num_ders {
        total -= weighted_log(weights.der(i), totals.revenue[i], || format!("revenue of DER {}", i + 1))?;
    }
    for j in 0..inst.num_loads {
        total += weighted_log(weights.load(j), totals.expense[j], || format!("expense of load {}", j + 1))?;
    }
    total += pcc_penalty(inst, weights, layout, &vars.trade);
    Ok(total)
}

/// `Σ_j λ_PCC,j ||d_j - D*_j||²` where non-layout pairs do not trade.
pub fn pcc_penalty(inst: &MarketInstance, weights: &Weights, layout: &PairLayout, trade: &[f64]) -> f64 {
    let mut total = 0.0;
    for j in 0..inst.num_loads {
        let w = weights.pcc(j);
        if w == 0.0 {
            continue;
        }
        let mut dist: f64 = inst.target_demand.row(j).iter().map(|t| t * t).sum();
        for &k in layout.load_pairs(j) {
            let target = inst.target_demand[(j, layout.pair(k).0)];
            let r = trade[k] - target;
            dist += r * r - target * target;
        }
        total += w * dist;
    }
    total
}

/// Analytic gradient of [`objective_at`].
pub fn gradient_at(inst: &MarketInstance, weights: &Weights, layout: &PairLayout, vars: &FreeVars) -> FreeVars {
    let totals = AgentTotals::compute(inst, layout, vars);
    let alpha = inst.discount_cap;
    let mut grad = FreeVars::zeros(layout.len());
    for (k, &(i, j)) in layout.pairs().iter().enumerate() {
        let (x, p, s) = (vars.trade[k], vars.price[k], vars.sigma[k]);
        let keep = 1.0 - s * alpha;
        let der_w = weights.der(i) / totals.revenue[i];
        let load_w = weights.load(j) / totals.expense[j];
        let der_w = if weights.der(i) == 0.0 { 0.0 } else { der_w };
        let load_w = if weights.load(j) == 0.0 { 0.0 } else { load_w };
        grad.trade[k] = -der_w * (p - inst.pcc_buy_price[i])
            + load_w * (p * keep - inst.pcc_sell_price[j])
            + 2.0 * weights.pcc(j) * (x - inst.target_demand[(j, i)]);
        grad.price[k] = -der_w * x + load_w * x * keep;
        grad.sigma[k] = -load_w * x * alpha * p;
    }
    grad
}

/// Gradient of the scalarized objective with respect to the free variables of
/// the pairs active in `mask`, at `state`.
pub fn scalarized_gradient(
    inst: &MarketInstance,
    weights: &Weights,
    state: &TradeState,
    mask: &TradeMask,
) -> Result<(PairLayout, FreeVars)> {
    weights.check(inst)?;
    let layout = PairLayout::from_mask(inst, mask);
    let vars = layout.extract(inst, state);
    Ok((layout.clone(), gradient_at(inst, weights, &layout, &vars)))
}

/// `Σ log y` over a row of positive log-domain terms.
pub fn jensen_surrogate(terms: &[f64]) -> Result<f64> {
    terms.iter().try_fold(0.0, |acc, &y| {
        if y > 0.0 && y.is_finite() {
            Ok(acc + y.ln())
        } else {
            Err(MarketError::NonPositiveLog {
                what: "surrogate term".into(),
                value: y,
            })
        }
    })
}

fn terms_of(coeffs: &[f64], exps: &[i32], prices: &[f64], qty: &[f64], support: &[usize]) -> Result<Vec<f64>> {
    support
        .iter()
        .map(|&j| {
            let (p, q) = (prices[j], qty[j]);
            if p <= 0.0 || q <= 0.0 {
                return Err(MarketError::NonPositiveLog {
                    what: format!("log-domain term {j}"),
                    value: p.min(q),
                });
            }
            Ok((f64::from(exps[j]) * p.ln() + q.ln() + coeffs[j].ln()).exp())
        })
        .collect()
}

/// The terms `y_ij` of DER `i`'s log-domain revenue over `support`.
pub fn der_terms(coeffs: &PosyCoefficients, der: usize, p_row: &[f64], h_row: &[f64], support: &[usize]) -> Result<Vec<f64>> {
    terms_of(&coeffs.der_coeffs[der], &coeffs.der_exponents, p_row, h_row, support)
}

/// The terms `z_ji` of load `j`'s log-domain expense over `support`.
pub fn load_terms(coeffs: &PosyCoefficients, load: usize, pprime_row: &[f64], d_row: &[f64], support: &[usize]) -> Result<Vec<f64>> {
    terms_of(&coeffs.load_coeffs[load], &coeffs.load_exponents, pprime_row, d_row, support)
}

/// Jensen surrogate `Σ_j log y_ij` of DER `der` for a state.
pub fn jensen_surrogate_der(inst: &MarketInstance, state: &TradeState, der: usize, support: &[usize]) -> Result<f64> {
    let coeffs = PosyCoefficients::new(inst);
    jensen_surrogate(&der_terms(&coeffs, der, &der_price_row(state, der), state.alloc.row(der), support)?)
}

/// Jensen surrogate `Σ_i log z_ji` of load `load` for a state.
pub fn jensen_surrogate_load(inst: &MarketInstance, state: &TradeState, load: usize, support: &[usize]) -> Result<f64> {
    let coeffs = PosyCoefficients::new(inst);
    jensen_surrogate(&load_terms(&coeffs, load, &load_price_row(state, load), state.dem.row(load), support)?)
}

/// One additive piece of the surrogate scalarization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SurrogateTerm {
    /// `-λ_i log(γ_i h_i0)`.
    DerSlack { der: usize },
    /// `λ_{G+j} log(π_j d_j0)`.
    LoadSlack { load: usize },
    /// `-λ_i log(p x)` of a layout pair.
    DerTrade { pair: usize },
    /// `λ_{G+j} log(p (1 - σα) x)` of a layout pair.
    LoadTrade { pair: usize },
    /// `λ_PCC,j (x - D*_ji)²` of a layout pair.
    Pcc { pair: usize },
    /// `λ_PCC,j (D*_ji)²` of a pair that never trades.
    PccIdle { der: usize, load: usize },
}

/// The sum-of-logs surrogate of the scalarized objective over a layout.
#[derive(Debug, Clone)]
pub struct Surrogate<'a> {
    pub inst: &'a MarketInstance,
    pub weights: &'a Weights,
    pub layout: &'a PairLayout,
}

impl<'a> Surrogate<'a> {
    pub fn new(inst: &'a MarketInstance, weights: &'a Weights, layout: &'a PairLayout) -> Self {
        Self { inst, weights, layout }
    }

    /// Every term of the surrogate. Slack terms are present for agents with
    /// positive surplus or demand; zero-weight terms are omitted.
    pub fn terms(&self) -> Vec<SurrogateTerm> {
        let (inst, w, layout) = (self.inst, self.weights, self.layout);
        let mut out = Vec::new();
        for i in 0..inst.num_ders {
            if w.der(i) != 0.0 && inst.surplus[i] > 0.0 {
                out.push(SurrogateTerm::DerSlack { der: i });
            }
        }
        for j in 0..inst.num_loads {
            if w.load(j) != 0.0 && inst.demand[j] > 0.0 {
                out.push(SurrogateTerm::LoadSlack { load: j });
            }
        }
        for (k, &(i, j)) in layout.pairs().iter().enumerate() {
            if w.der(i) != 0.0 {
                out.push(SurrogateTerm::DerTrade { pair: k });
            }
            if w.load(j) != 0.0 {
                out.push(SurrogateTerm::LoadTrade { pair: k });
            }
            if w.pcc(j) != 0.0 {
                out.push(SurrogateTerm::Pcc { pair: k });
            }
        }
        for j in 0..inst.num_loads {
            if w.pcc(j) == 0.0 {
                continue;
            }
            for i in 0..inst.num_ders {
                let in_layout = layout.load_pairs(j).iter().any(|&k| layout.pair(k).0 == i);
                if !in_layout {
                    out.push(SurrogateTerm::PccIdle { der: i, load: j });
                }
            }
        }
        out
    }

    pub fn der_slack(&self, der: usize, trade: &[f64]) -> f64 {
        self.inst.surplus[der] - self.layout.der_pairs(der).iter().map(|&k| trade[k]).sum::<f64>()
    }

    pub fn load_slack(&self, load: usize, trade: &[f64]) -> f64 {
        self.inst.demand[load] - self.layout.load_pairs(load).iter().map(|&k| trade[k]).sum::<f64>()
    }

    /// Value of one term; `+inf` when a logarithm argument is not positive.
    pub fn term_value(&self, term: SurrogateTerm, vars: &FreeVars) -> f64 {
        let (inst, w) = (self.inst, self.weights);
        let alpha = inst.discount_cap;
        let log_or_inf = |v: f64| if v > 0.0 { v.ln() } else { f64::NAN };
        let v = match term {
            SurrogateTerm::DerSlack { der } => {
                -w.der(der) * log_or_inf(inst.pcc_buy_price[der] * self.der_slack(der, &vars.trade))
            }
            SurrogateTerm::LoadSlack { load } => {
                w.load(load) * log_or_inf(inst.pcc_sell_price[load] * self.load_slack(load, &vars.trade))
            }
            SurrogateTerm::DerTrade { pair } => {
                let i = self.layout.pair(pair).0;
                -w.der(i) * log_or_inf(vars.price[pair] * vars.trade[pair])
            }
            SurrogateTerm::LoadTrade { pair } => {
                let j = self.layout.pair(pair).1;
                let pprime = vars.price[pair] * (1.0 - vars.sigma[pair] * alpha);
                w.load(j) * log_or_inf(pprime * vars.trade[pair])
            }
            SurrogateTerm::Pcc { pair } => {
                let (i, j) = self.layout.pair(pair);
                let r = vars.trade[pair] - inst.target_demand[(j, i)];
                w.pcc(j) * r * r
            }
            SurrogateTerm::PccIdle { der, load } => {
                let t = inst.target_demand[(load, der)];
                w.pcc(load) * t * t
            }
        };
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    }

    /// Adds `∂term/∂vars` into `grad`.
    pub fn add_term_gradient(&self, term: SurrogateTerm, vars: &FreeVars, grad: &mut FreeVars) {
        let (inst, w, layout) = (self.inst, self.weights, self.layout);
        let alpha = inst.discount_cap;
        match term {
            SurrogateTerm::DerSlack { der } => {
                let c = w.der(der) / self.der_slack(der, &vars.trade);
                for &k in layout.der_pairs(der) {
                    grad.trade[k] += c;
                }
            }
            SurrogateTerm::LoadSlack { load } => {
                let c = w.load(load) / self.load_slack(load, &vars.trade);
                for &k in layout.load_pairs(load) {
                    grad.trade[k] -= c;
                }
            }
            SurrogateTerm::DerTrade { pair } => {
                let wi = w.der(layout.pair(pair).0);
                grad.trade[pair] -= wi / vars.trade[pair];
                grad.price[pair] -= wi / vars.price[pair];
            }
            SurrogateTerm::LoadTrade { pair } => {
                let wj = w.load(layout.pair(pair).1);
                grad.trade[pair] += wj / vars.trade[pair];
                grad.price[pair] += wj / vars.price[pair];
                grad.sigma[pair] -= wj * alpha / (1.0 - vars.sigma[pair] * alpha);
            }
            SurrogateTerm::Pcc { pair } => {
                let (i, j) = layout.pair(pair);
                grad.trade[pair] += 2.0 * w.pcc(j) * (vars.trade[pair] - inst.target_demand[(j, i)]);
            }
            SurrogateTerm::PccIdle { .. } => {}
        }
    }

    pub fn value(&self, vars: &FreeVars) -> f64 {
        self.terms().into_iter().map(|t| self.term_value(t, vars)).sum()
    }

    pub fn gradient(&self, vars: &FreeVars) -> FreeVars {
        let mut grad = FreeVars::zeros(self.layout.len());
        for t in self.terms() {
            self.add_term_gradient(t, vars, &mut grad);
        }
        grad
    }
}

/// Surrogate scalarization of a full state: per-agent Jensen sums over the
/// layout support (slack index always included), plus the PCC distances.
pub fn surrogate_objective(inst: &MarketInstance, weights: &Weights, layout: &PairLayout, state: &TradeState) -> Result<f64> {
    weights.check(inst)?;
    let mut total = 0.0;
    for i in 0..inst.num_ders {
        if weights.der(i) == 0.0 || inst.surplus[i] <= 0.0 {
            continue;
        }
        let support: Vec<usize> = std::iter::once(0)
            .chain(layout.der_pairs(i).iter().map(|&k| layout.pair(k).1 + 1))
            .collect();
        total -= weights.der(i) * jensen_surrogate_der(inst, state, i, &support)?;
    }
    for j in 0..inst.num_loads {
        let dist: f64 = (0..inst.num_ders)
            .map(|i| (state.dem[(j, i + 1)] - inst.target_demand[(j, i)]).powi(2))
            .sum();
        total += weights.pcc(j) * dist;
        if weights.load(j) == 0.0 || inst.demand[j] <= 0.0 {
            continue;
        }
        let support: Vec<usize> = std::iter::once(0)
            .chain(layout.load_pairs(j).iter().map(|&k| layout.pair(k).0 + 1))
            .collect();
        total += weights.load(j) * jensen_surrogate_load(inst, state, j, &support)?;
    }
    Ok(total)
}
