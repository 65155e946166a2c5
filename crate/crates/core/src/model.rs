//! Market domain types, agent objective evaluators, feasibility checking and
//! the pricing-window pruning / rationality checks.
//!
//! Indexing convention: DERs are `0..G`, loads are `0..L`. The allocation
//! matrix `alloc` is `G x (L+1)` and the demand matrix `dem` is `L x (G+1)`;
//! in both, column 0 is the PCC slack. Prices are `G x L`, discounts `L x G`,
//! and the electrically optimal target demand `target_demand` is `L x G`
//! (no PCC column). Human-readable messages use 1-based agent numbers.

use std::fmt;
use std::ops::{Index, IndexMut};

use serde::{Deserialize, Serialize};

use crate::error::{MarketError, Result};

/// Quantities below this are "no trade" when deciding supports and rationality.
pub const TOL_ZERO: f64 = 1e-6;

/// Dense row-major matrix of `f64`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::filled(rows, cols, 0.0)
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Self {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    /// Builds a matrix from nested rows; every row must have the same length.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(MarketError::Shape("ragged matrix rows".into()));
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data: rows.iter().flatten().copied().collect(),
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.rows).map(|r| self.row(r).to_vec()).collect()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Element-wise `theta * self + (1 - theta) * other`.
    pub fn blend(&self, other: &Matrix, theta: f64) -> Matrix {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| theta * a + (1.0 - theta) * b)
                .collect(),
        }
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;

    fn index(&self, (r, c): (usize, usize)) -> &f64 {
        debug_assert!(r < self.rows && c < self.cols);
        &self.data[r * self.cols + c]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut f64 {
        debug_assert!(r < self.rows && c < self.cols);
        &mut self.data[r * self.cols + c]
    }
}

/// A market snapshot: agents, PCC contract prices, caps and the target demands.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarketInstance {
    pub num_ders: usize,
    pub num_loads: usize,
    /// Surplus energy `E_i` of each DER (kWh).
    pub surplus: Vec<f64>,
    /// Demand `D_j` of each load (kWh).
    pub demand: Vec<f64>,
    /// Price `γ_i` the PCC pays DER `i`.
    pub pcc_buy_price: Vec<f64>,
    /// Price `π_j` the PCC charges load `j`.
    pub pcc_sell_price: Vec<f64>,
    /// Maximum unitary price `P_i` DER `i` may propose.
    pub price_cap: Vec<f64>,
    /// Maximum discount factor `α`.
    pub discount_cap: f64,
    /// `L x G` electrically optimal demands.
    pub target_demand: Matrix,
    /// Region id (1-based) of each agent: DERs first, then loads.
    pub region_of_agent: Option<Vec<usize>>,
}

impl MarketInstance {
    pub fn with_discount_cap(&self, alpha: f64) -> Self {
        Self {
            discount_cap: alpha,
            ..self.clone()
        }
    }

    /// Upper end of the admissible price window, before the cap `P_i`.
    /// Unbounded when `α = 1`.
    pub fn discounted_price_limit(&self, load: usize) -> f64 {
        let keep = 1.0 - self.discount_cap;
        if keep <= 0.0 {
            f64::INFINITY
        } else {
            self.pcc_sell_price[load] / keep
        }
    }

    /// The price window `[γ_i, min(P_i, π_j / (1-α))]` of a pair, if nonempty.
    pub fn price_window(&self, der: usize, load: usize) -> Option<(f64, f64)> {
        let lo = self.pcc_buy_price[der];
        let hi = self.price_cap[der].min(self.discounted_price_limit(load));
        (lo <= hi && hi > 0.0).then_some((lo, hi))
    }

    /// The no-trade state: every DER sells all to the PCC and every load buys
    /// all from the PCC. Prices sit at [`idle_price`](Self::idle_price) and
    /// discounts are zero.
    pub fn baseline_state(&self) -> TradeState {
        let (g, l) = (self.num_ders, self.num_loads);
        let mut state = TradeState {
            prices: Matrix::zeros(g, l),
            alloc: Matrix::zeros(g, l + 1),
            dem: Matrix::zeros(l, g + 1),
            disc: Matrix::zeros(l, g),
        };
        for i in 0..g {
            state.alloc[(i, 0)] = self.surplus[i];
            for j in 0..l {
                state.prices[(i, j)] = self.idle_price(i, j);
            }
        }
        for j in 0..l {
            state.dem[(j, 0)] = self.demand[j];
        }
        state
    }

    /// Price recorded for a pair that does not trade: the lower end of its
    /// window when one exists, otherwise `γ_i` clipped into `(0, P_i]`.
    pub fn idle_price(&self, der: usize, load: usize) -> f64 {
        match self.price_window(der, load) {
            Some((lo, _)) => lo,
            None => self.pcc_buy_price[der].min(self.price_cap[der]),
        }
    }

    pub fn baseline_der_revenue(&self) -> f64 {
        self.surplus
            .iter()
            .zip(&self.pcc_buy_price)
            .map(|(e, g)| e * g)
            .sum()
    }

    pub fn baseline_load_expense(&self) -> f64 {
        self.demand
            .iter()
            .zip(&self.pcc_sell_price)
            .map(|(d, p)| d * p)
            .sum()
    }

    fn tol_eq(&self, der: Option<usize>, load: Option<usize>) -> f64 {
        let e = der.map_or(0.0, |i| self.surplus[i]);
        let d = load.map_or(0.0, |j| self.demand[j]);
        1e-9 * e.max(d).max(1.0)
    }
}

/// The four decision matrices of the market.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TradeState {
    /// `G x L` unitary prices `p_ij`.
    pub prices: Matrix,
    /// `G x (L+1)` energy sold; column 0 goes to the PCC.
    pub alloc: Matrix,
    /// `L x (G+1)` energy bought; column 0 comes from the PCC.
    pub dem: Matrix,
    /// `L x G` discounts `s_ji` on the price DER `i` proposes to load `j`.
    pub disc: Matrix,
}

impl TradeState {
    /// Energy traded between DER `der` and load `load`, as seen by the load.
    pub fn trade(&self, der: usize, load: usize) -> f64 {
        self.dem[(load, der + 1)]
    }

    /// Sets both sides of a trade and re-derives the two PCC slacks from the
    /// instance totals.
    pub fn set_trade(&mut self, inst: &MarketInstance, der: usize, load: usize, qty: f64) {
        self.alloc[(der, load + 1)] = qty;
        self.dem[(load, der + 1)] = qty;
        self.reconcile_slacks(inst);
    }

    pub fn reconcile_slacks(&mut self, inst: &MarketInstance) {
        for i in 0..inst.num_ders {
            let sold: f64 = self.alloc.row(i)[1..].iter().sum();
            self.alloc[(i, 0)] = inst.surplus[i] - sold;
        }
        for j in 0..inst.num_loads {
            let bought: f64 = self.dem.row(j)[1..].iter().sum();
            self.dem[(j, 0)] = inst.demand[j] - bought;
        }
    }

    pub fn blend(&self, other: &TradeState, theta: f64) -> TradeState {
        TradeState {
            prices: self.prices.blend(&other.prices, theta),
            alloc: self.alloc.blend(&other.alloc, theta),
            dem: self.dem.blend(&other.dem, theta),
            disc: self.disc.blend(&other.disc, theta),
        }
    }
}

/// Which (DER, load) pairs can trade at all.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TradeMask {
    num_loads: usize,
    active: Vec<bool>,
}

impl TradeMask {
    pub fn is_active(&self, der: usize, load: usize) -> bool {
        self.active[der * self.num_loads + load]
    }

    pub fn active_pairs(&self) -> Vec<(usize, usize)> {
        self.active
            .iter()
            .enumerate()
            .filter(|(_, a)| **a)
            .map(|(k, _)| (k / self.num_loads, k % self.num_loads))
            .collect()
    }

    pub fn any_active(&self) -> bool {
        self.active.iter().any(|a| *a)
    }
}

/// Per-agent values of the three objective families.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveValues {
    pub der_revenue: Vec<f64>,
    pub load_expense: Vec<f64>,
    pub pcc_distance: Vec<f64>,
}

impl ObjectiveValues {
    pub fn evaluate(inst: &MarketInstance, state: &TradeState) -> Self {
        Self {
            der_revenue: (0..inst.num_ders)
                .map(|i| der_revenue_unchecked(inst, state, i))
                .collect(),
            load_expense: (0..inst.num_loads)
                .map(|j| load_expense_unchecked(inst, state, j))
                .collect(),
            pcc_distance: (0..inst.num_loads)
                .map(|j| pcc_distance_unchecked(inst, state, j))
                .collect(),
        }
    }
}

/// A broken invariant. Violations are data, reported in bulk.
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    Shape(String),
    NonFinite(String),
    Negative(String),
    DiscountCapRange(f64),
    TargetExceedsDemand { load: usize },
    DerOversold { der: usize },
    LoadOverbought { load: usize },
    DerBalance { der: usize },
    LoadBalance { load: usize },
    PriceCap { der: usize, load: usize },
    NonPositivePrice { der: usize, load: usize },
    DiscountCap { load: usize, der: usize },
    NegativeDiscountedPrice { load: usize, der: usize },
    Consistency { der: usize, load: usize },
    PriceBelowBuyPrice { der: usize, load: usize },
    DiscountedPriceAboveSellPrice { der: usize, load: usize },
    MaskedTrade { der: usize, load: usize },
    RevenueBelowBaseline { der: usize },
    ExpenseAboveBaseline { load: usize },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        use Violation::*;
        match self {
            Shape(what) => write!(f, "shape mismatch: {what}"),
            NonFinite(what) => write!(f, "non-finite value in {what}"),
            Negative(what) => write!(f, "negative value in {what}"),
            DiscountCapRange(a) => write!(f, "discount_cap out of [0,1] (got {a})"),
            TargetExceedsDemand { load } => {
                write!(f, "target exceeds demand for load {}", load + 1)
            }
            DerOversold { der } => write!(f, "DER {} sells more than its surplus", der + 1),
            LoadOverbought { load } => write!(f, "load {} buys more than its demand", load + 1),
            DerBalance { der } => write!(f, "allocation balance for DER {}", der + 1),
            LoadBalance { load } => write!(f, "demand balance for load {}", load + 1),
            PriceCap { der, load } => write!(f, "price cap ({},{})", der + 1, load + 1),
            NonPositivePrice { der, load } => {
                write!(f, "non-positive price ({},{})", der + 1, load + 1)
            }
            DiscountCap { load, der } => write!(f, "discount cap ({},{})", load + 1, der + 1),
            NegativeDiscountedPrice { load, der } => {
                write!(f, "negative discounted price ({},{})", load + 1, der + 1)
            }
            Consistency { der, load } => write!(f, "consistency ({},{})", der + 1, load + 1),
            PriceBelowBuyPrice { der, load } => write!(
                f,
                "trade price not above PCC buy price at ({},{})",
                der + 1,
                load + 1
            ),
            DiscountedPriceAboveSellPrice { der, load } => write!(
                f,
                "discounted price not below PCC sell price at ({},{})",
                der + 1,
                load + 1
            ),
            MaskedTrade { der, load } => {
                write!(f, "trade on inactive pair ({},{})", der + 1, load + 1)
            }
            RevenueBelowBaseline { der } => {
                write!(f, "DER {} earns less than selling all to the PCC", der + 1)
            }
            ExpenseAboveBaseline { load } => {
                write!(f, "load {} pays more than buying all from the PCC", load + 1)
            }
        }
    }
}

fn check_vec(out: &mut Vec<Violation>, name: &str, v: &[f64], len: usize, positive: bool) {
    if v.len() != len {
        out.push(Violation::Shape(format!(
            "{name} has length {} (expected {len})",
            v.len()
        )));
        return;
    }
    if v.iter().any(|x| !x.is_finite()) {
        out.push(Violation::NonFinite(name.into()));
    } else if positive && v.iter().any(|x| *x <= 0.0) {
        out.push(Violation::Negative(format!("{name} (must be > 0)")));
    } else if v.iter().any(|x| *x < 0.0) {
        out.push(Violation::Negative(name.into()));
    }
}

/// Lists every violated instance invariant. Empty means valid.
pub fn validate_instance(inst: &MarketInstance) -> Vec<Violation> {
    let mut out = Vec::new();
    let (g, l) = (inst.num_ders, inst.num_loads);
    if g == 0 || l == 0 {
        out.push(Violation::Shape("need at least one DER and one load".into()));
        return out;
    }
    check_vec(&mut out, "surplus", &inst.surplus, g, false);
    check_vec(&mut out, "demand", &inst.demand, l, false);
    check_vec(&mut out, "pcc_buy_price", &inst.pcc_buy_price, g, true);
    check_vec(&mut out, "pcc_sell_price", &inst.pcc_sell_price, l, true);
    check_vec(&mut out, "price_cap", &inst.price_cap, g, true);
    if !(0.0..=1.0).contains(&inst.discount_cap) {
        out.push(Violation::DiscountCapRange(inst.discount_cap));
    }
    let t = &inst.target_demand;
    if t.rows() != l || t.cols() != g {
        out.push(Violation::Shape(format!(
            "target_demand is {}x{} (expected {l}x{g})",
            t.rows(),
            t.cols()
        )));
    } else if t.as_slice().iter().any(|x| !x.is_finite()) {
        out.push(Violation::NonFinite("target_demand".into()));
    } else if t.as_slice().iter().any(|x| *x < 0.0) {
        out.push(Violation::Negative("target_demand".into()));
    } else if inst.demand.len() == l {
        for j in 0..l {
            let want: f64 = t.row(j).iter().sum();
            if want > inst.demand[j] + inst.tol_eq(None, Some(j)) {
                out.push(Violation::TargetExceedsDemand { load: j });
            }
        }
    }
    if let Some(regions) = &inst.region_of_agent {
        if regions.len() != g + l {
            out.push(Violation::Shape(format!(
                "region_of_agent has length {} (expected {})",
                regions.len(),
                g + l
            )));
        } else if regions.contains(&0) {
            out.push(Violation::Shape("region ids are 1-based".into()));
        }
    }
    out
}

fn check_der(inst: &MarketInstance, state: &TradeState, der: usize) -> Result<()> {
    if der >= inst.num_ders || state.alloc.rows() != inst.num_ders {
        return Err(MarketError::IndexOutOfRange {
            what: "DER",
            index: der,
            len: inst.num_ders,
        });
    }
    Ok(())
}

fn check_load(inst: &MarketInstance, state: &TradeState, load: usize) -> Result<()> {
    if load >= inst.num_loads || state.dem.rows() != inst.num_loads {
        return Err(MarketError::IndexOutOfRange {
            what: "load",
            index: load,
            len: inst.num_loads,
        });
    }
    Ok(())
}

/// Revenue of DER `der`: peer sales at the proposed prices plus whatever is
/// left of the surplus sold to the PCC at `γ_i`.
pub fn der_revenue(inst: &MarketInstance, state: &TradeState, der: usize) -> Result<f64> {
    check_der(inst, state, der)?;
    Ok(der_revenue_unchecked(inst, state, der))
}

fn der_revenue_unchecked(inst: &MarketInstance, state: &TradeState, i: usize) -> f64 {
    let mut peer = 0.0;
    let mut sold = 0.0;
    for j in 0..inst.num_loads {
        let h = state.alloc[(i, j + 1)];
        peer += state.prices[(i, j)] * h;
        sold += h;
    }
    peer + (inst.surplus[i] - sold) * inst.pcc_buy_price[i]
}

/// Expense of load `load`: discounted peer purchases plus the PCC remainder.
pub fn load_expense(inst: &MarketInstance, state: &TradeState, load: usize) -> Result<f64> {
    check_load(inst, state, load)?;
    Ok(load_expense_unchecked(inst, state, load))
}

fn load_expense_unchecked(inst: &MarketInstance, state: &TradeState, j: usize) -> f64 {
    let mut peer = 0.0;
    for i in 0..inst.num_ders {
        peer += (state.prices[(i, j)] - state.disc[(j, i)]) * state.dem[(j, i + 1)];
    }
    peer + state.dem[(j, 0)] * inst.pcc_sell_price[j]
}

/// Squared distance of a load's DER-facing demand row from its target.
pub fn pcc_distance(inst: &MarketInstance, state: &TradeState, load: usize) -> Result<f64> {
    check_load(inst, state, load)?;
    Ok(pcc_distance_unchecked(inst, state, load))
}

fn pcc_distance_unchecked(inst: &MarketInstance, state: &TradeState, j: usize) -> f64 {
    (0..inst.num_ders)
        .map(|i| {
            let r = state.dem[(j, i + 1)] - inst.target_demand[(j, i)];
            r * r
        })
        .sum()
}

/// Reporting metric: the sum over loads of the (non-squared) distance of each
/// demand row from its target.
pub fn report_distance(inst: &MarketInstance, state: &TradeState) -> f64 {
    (0..inst.num_loads)
        .map(|j| pcc_distance_unchecked(inst, state, j).sqrt())
        .sum()
}

/// Checks the market constraints on a state. Empty means feasible.
pub fn check_feasible(inst: &MarketInstance, state: &TradeState) -> Vec<Violation> {
    let mut out = Vec::new();
    let (g, l) = (inst.num_ders, inst.num_loads);
    let shapes = [
        ("prices", &state.prices, g, l),
        ("alloc", &state.alloc, g, l + 1),
        ("dem", &state.dem, l, g + 1),
        ("disc", &state.disc, l, g),
    ];
    for (name, m, r, c) in shapes {
        if m.rows() != r || m.cols() != c {
            out.push(Violation::Shape(format!(
                "{name} is {}x{} (expected {r}x{c})",
                m.rows(),
                m.cols()
            )));
        } else if m.as_slice().iter().any(|x| !x.is_finite()) {
            out.push(Violation::NonFinite(name.into()));
        }
    }
    if !out.is_empty() {
        return out;
    }
    let alpha = inst.discount_cap;

    for i in 0..g {
        let tol = inst.tol_eq(Some(i), None);
        let row = state.alloc.row(i);
        if row.iter().any(|h| *h < -tol) {
            out.push(Violation::Negative(format!("allocation row of DER {}", i + 1)));
        }
        let sold: f64 = row[1..].iter().sum();
        if sold > inst.surplus[i] + tol {
            out.push(Violation::DerOversold { der: i });
        }
        let total: f64 = row.iter().sum();
        if (total - inst.surplus[i]).abs() > tol {
            out.push(Violation::DerBalance { der: i });
        }
    }
    for j in 0..l {
        let tol = inst.tol_eq(None, Some(j));
        let row = state.dem.row(j);
        if row.iter().any(|d| *d < -tol) {
            out.push(Violation::Negative(format!("demand row of load {}", j + 1)));
        }
        let bought: f64 = row[1..].iter().sum();
        if bought > inst.demand[j] + tol {
            out.push(Violation::LoadOverbought { load: j });
        }
        let total: f64 = row.iter().sum();
        if (total - inst.demand[j]).abs() > tol {
            out.push(Violation::LoadBalance { load: j });
        }
    }
    for i in 0..g {
        for j in 0..l {
            let tol = inst.tol_eq(Some(i), Some(j));
            let p = state.prices[(i, j)];
            let s = state.disc[(j, i)];
            if p <= 0.0 {
                out.push(Violation::NonPositivePrice { der: i, load: j });
            }
            if p > inst.price_cap[i] + tol {
                out.push(Violation::PriceCap { der: i, load: j });
            }
            if s < -tol {
                out.push(Violation::Negative(format!("discount ({},{})", j + 1, i + 1)));
            }
            if s > alpha * p + tol {
                out.push(Violation::DiscountCap { load: j, der: i });
            }
            if p - s < -tol {
                out.push(Violation::NegativeDiscountedPrice { load: j, der: i });
            }
            if (state.alloc[(i, j + 1)] - state.dem[(j, i + 1)]).abs() > tol {
                out.push(Violation::Consistency { der: i, load: j });
            }
        }
    }
    out
}

/// Marks each pair whose price window `[γ_i, π_j/(1-α)] ∩ (0, P_i]` is
/// nonempty. Pairs outside it can never trade at a P-optimal point.
pub fn compute_trade_mask(inst: &MarketInstance) -> TradeMask {
    let l = inst.num_loads;
    let active = (0..inst.num_ders * l)
        .map(|k| inst.price_window(k / l, k % l).is_some())
        .collect();
    TradeMask {
        num_loads: l,
        active,
    }
}

/// Checks that a (feasible) solution is acceptable to rational agents:
/// every real trade is priced above `γ_i` and, after discount, below `π_j`;
/// inactive pairs do not trade; and no agent does worse than the
/// all-through-the-PCC baseline.
pub fn rationality_check(inst: &MarketInstance, state: &TradeState) -> Vec<Violation> {
    let mut out = Vec::new();
    let mask = compute_trade_mask(inst);
    for i in 0..inst.num_ders {
        for j in 0..inst.num_loads {
            let h = state.alloc[(i, j + 1)];
            let d = state.dem[(j, i + 1)];
            let qty = h.max(d);
            if !mask.is_active(i, j) {
                if qty > TOL_ZERO {
                    out.push(Violation::MaskedTrade { der: i, load: j });
                }
                continue;
            }
            if h > TOL_ZERO && d > TOL_ZERO {
                let p = state.prices[(i, j)];
                if p <= inst.pcc_buy_price[i] {
                    out.push(Violation::PriceBelowBuyPrice { der: i, load: j });
                }
                if p - state.disc[(j, i)] >= inst.pcc_sell_price[j] {
                    out.push(Violation::DiscountedPriceAboveSellPrice { der: i, load: j });
                }
            }
        }
    }
    for i in 0..inst.num_ders {
        let tol = TOL_ZERO * inst.pcc_buy_price[i].max(1.0);
        if der_revenue_unchecked(inst, state, i) < inst.surplus[i] * inst.pcc_buy_price[i] - tol {
            out.push(Violation::RevenueBelowBaseline { der: i });
        }
    }
    for j in 0..inst.num_loads {
        let tol = TOL_ZERO * inst.pcc_sell_price[j].max(1.0);
        if load_expense_unchecked(inst, state, j) > inst.demand[j] * inst.pcc_sell_price[j] + tol {
            out.push(Violation::ExpenseAboveBaseline { load: j });
        }
    }
    out
}

#[cfg(test)]
pub(crate) mod fixtures {
    use super::*;

    /// G=1, L=1, E=[10], D=[5], γ=[20], π=[50], α=0.2, D*=[[5]].
    pub fn single_pair() -> MarketInstance {
        MarketInstance {
            num_ders: 1,
            num_loads: 1,
            surplus: vec![10.0],
            demand: vec![5.0],
            pcc_buy_price: vec![20.0],
            pcc_sell_price: vec![50.0],
            price_cap: vec![100.0],
            discount_cap: 0.2,
            target_demand: Matrix::from_rows(&[vec![5.0]]).unwrap(),
            region_of_agent: None,
        }
    }

    pub fn two_by_two() -> MarketInstance {
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
            region_of_agent: Some(vec![1, 2, 1, 2]),
        }
    }
}
