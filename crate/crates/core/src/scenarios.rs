//! Scenario configs, gain and distance metrics, discount-factor sweeps and
//! their CSV form.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::admm::{admm_solve, partition_by_branch, AdmmOptions, DEFAULT_RHO};
use crate::error::{MarketError, Result};
use crate::model::{validate_instance, MarketInstance, Matrix, ObjectiveValues};
use crate::solver::{default_lambda, pareto_sweep, sweep_with, Solution, SolverOptions};
use crate::transform::Weights;

pub const CSV_HEADER: [&str; 6] = ["alpha", "der_gain_pct", "load_gain_pct", "distance", "objective", "converged"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SolverKind {
    #[default]
    Central,
    Admm,
}

/// `"default"` or an explicit weight vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LambdaSpec {
    Named(String),
    Explicit(Vec<f64>),
}

impl Default for LambdaSpec {
    fn default() -> Self {
        LambdaSpec::Named("default".into())
    }
}

impl LambdaSpec {
    /// Resolves to simplex weights. Explicit vectors must already sum to 1
    /// within 1e-6 and are then renormalized.
    pub fn resolve(&self, num_ders: usize, num_loads: usize) -> Result<Weights> {
        match self {
            LambdaSpec::Named(name) if name == "default" => Ok(default_lambda(num_ders, num_loads)),
            LambdaSpec::Named(name) => Err(MarketError::InvalidWeights(format!(
                "lambda must be \"default\" or a list of numbers (got \"{name}\")"
            ))),
            LambdaSpec::Explicit(values) => {
                let n = num_ders + 2 * num_loads;
                if values.len() != n {
                    return Err(MarketError::InvalidWeights(format!(
                        "lambda needs {n} entries (G + 2L), got {}",
                        values.len()
                    )));
                }
                let sum: f64 = values.iter().sum();
                if values.iter().any(|v| !(0.0..=1.0).contains(v)) || (sum - 1.0).abs() > 1e-6 {
                    return Err(MarketError::InvalidWeights(format!(
                        "lambda entries must lie in [0, 1] and sum to 1 (sum {sum})"
                    )));
                }
                Weights::normalized(values.clone(), num_ders, num_loads)
            }
        }
    }

    /// Parses a command-line value: `default` or comma-separated numbers.
    pub fn parse(text: &str) -> Result<Self> {
        let text = text.trim();
        if text == "default" {
            return Ok(LambdaSpec::default());
        }
        text.split(',')
            .map(|t| {
                t.trim()
                    .parse::<f64>()
                    .map_err(|_| MarketError::InvalidWeights(format!("lambda entry \"{}\" is not a number", t.trim())))
            })
            .collect::<Result<Vec<_>>>()
            .map(LambdaSpec::Explicit)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub num_ders: usize,
    pub num_loads: usize,
    pub surplus: Vec<f64>,
    pub demand: Vec<f64>,
    pub pcc_buy_price: Vec<f64>,
    pub pcc_sell_price: Vec<f64>,
    pub price_cap: Vec<f64>,
    pub alpha_grid: Vec<f64>,
    /// `L x G` rows.
    pub target_demand: Vec<Vec<f64>>,
    #[serde(default)]
    pub lambda: LambdaSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub regions: Option<Vec<usize>>,
    #[serde(default)]
    pub solver: SolverKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub notes: Option<String>,
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// The market at discount cap `alpha`. Shapes are checked here; value
    /// invariants are left to [`validate_instance`].
    pub fn instance(&self, alpha: f64) -> Result<MarketInstance> {
        let (g, l) = (self.num_ders, self.num_loads);
        let lens = [
            ("surplus", self.surplus.len(), g),
            ("demand", self.demand.len(), l),
            ("pcc_buy_price", self.pcc_buy_price.len(), g),
            ("pcc_sell_price", self.pcc_sell_price.len(), l),
            ("price_cap", self.price_cap.len(), g),
            ("target_demand", self.target_demand.len(), l),
        ];
        for (field, got, want) in lens {
            if got != want {
                return Err(MarketError::Shape(format!("{field} has {got} entries, expected {want}")));
            }
        }
        if let Some(j) = self.target_demand.iter().position(|r| r.len() != g) {
            return Err(MarketError::Shape(format!(
                "target_demand row {} has {} entries, expected {g}",
                j + 1,
                self.target_demand[j].len()
            )));
        }
        if let Some(r) = &self.regions {
            if r.len() != g + l {
                return Err(MarketError::Shape(format!("regions has {} entries, expected {}", r.len(), g + l)));
            }
        }
        Ok(MarketInstance {
            num_ders: g,
            num_loads: l,
            surplus: self.surplus.clone(),
            demand: self.demand.clone(),
            pcc_buy_price: self.pcc_buy_price.clone(),
            pcc_sell_price: self.pcc_sell_price.clone(),
            price_cap: self.price_cap.clone(),
            discount_cap: alpha,
            target_demand: Matrix::from_rows(&self.target_demand)?,
            region_of_agent: self.regions.clone(),
        })
    }

    /// Every problem with the scenario, one message per line item.
    pub fn validate(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.num_ders == 0 || self.num_loads == 0 {
            out.push("num_ders and num_loads must be >= 1".to_string());
            return out;
        }
        if self.alpha_grid.is_empty() {
            out.push("alpha_grid is empty".to_string());
        }
        for (k, a) in self.alpha_grid.iter().enumerate() {
            if !(0.0..=1.0).contains(a) {
                out.push(format!("alpha_grid[{k}] = {a} is outside [0, 1]"));
            }
        }
        if self.alpha_grid.windows(2).any(|w| w[1] <= w[0]) {
            out.push("alpha_grid must be strictly increasing".to_string());
        }
        match self.instance(self.alpha_grid.first().copied().unwrap_or(0.0)) {
            Ok(inst) => out.extend(validate_instance(&inst).iter().map(ToString::to_string)),
            Err(e) => out.push(e.to_string()),
        }
        if let Err(e) = self.lambda.resolve(self.num_ders, self.num_loads) {
            out.push(e.to_string());
        }
        if self.solver == SolverKind::Admm && self.regions.is_none() {
            out.push("solver \"admm\" needs regions".to_string());
        }
        out
    }
}

/// One point of a discount-factor sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRecord {
    pub alpha: f64,
    pub der_gain_pct: f64,
    pub load_gain_pct: f64,
    pub distance: f64,
    pub objective: f64,
    pub converged: bool,
}

impl SweepRecord {
    pub fn failed(alpha: f64) -> Self {
        Self {
            alpha,
            der_gain_pct: f64::NAN,
            load_gain_pct: f64::NAN,
            distance: f64::NAN,
            objective: f64::NAN,
            converged: false,
        }
    }
}

/// Aggregate DER revenue gain over selling everything to the PCC, in
/// percent. NaN when the baseline revenue is zero.
pub fn der_gain(inst: &MarketInstance, solution: &Solution) -> f64 {
    let base = inst.baseline_der_revenue();
    if base == 0.0 {
        return f64::NAN;
    }
    let opt: f64 = ObjectiveValues::evaluate(inst, &solution.state).der_revenue.iter().sum();
    (opt - base) / base * 100.0
}

/// Aggregate load expense saving over buying everything from the PCC, in
/// percent. NaN when the baseline expense is zero.
pub fn load_gain(inst: &MarketInstance, solution: &Solution) -> f64 {
    let base = inst.baseline_load_expense();
    if base == 0.0 {
        return f64::NAN;
    }
    let opt: f64 = ObjectiveValues::evaluate(inst, &solution.state).load_expense.iter().sum();
    (base - opt) / base * 100.0
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub solver: SolverOptions,
    pub admm: AdmmOptions,
    /// ADMM penalty; [`DEFAULT_RHO`] when unset.
    pub rho: Option<f64>,
    /// Overrides the scenario's solver choice.
    pub solver_kind: Option<SolverKind>,
    /// Overrides the scenario's weights.
    pub lambda: Option<LambdaSpec>,
    pub jobs: Option<usize>,
}

/// Sweeps the scenario's discount grid with its weights.
pub fn run_scenario(scenario: &Scenario, opts: &RunOptions) -> Result<Vec<SweepRecord>> {
    let problems = scenario.validate();
    if !problems.is_empty() {
        return Err(MarketError::Scenario(problems.join("; ")));
    }
    let inst = scenario.instance(scenario.alpha_grid[0])?;
    let spec = opts.lambda.as_ref().unwrap_or(&scenario.lambda);
    let weights = spec.resolve(inst.num_ders, inst.num_loads)?;
    let lambdas = [weights];
    let kind = opts.solver_kind.unwrap_or(scenario.solver);
    let records = match kind {
        SolverKind::Central => pareto_sweep(&inst, &lambdas, &scenario.alpha_grid, &opts.solver, opts.jobs),
        SolverKind::Admm => {
            let partition = partition_by_branch(&inst)?;
            let rho = opts.rho.unwrap_or(DEFAULT_RHO);
            let admm = AdmmOptions {
                local: opts.solver.clone(),
                // the sweep already runs points in parallel
                parallel: false,
                ..opts.admm.clone()
            };
            sweep_with(&lambdas, &scenario.alpha_grid, opts.jobs, |w, alpha| {
                let inst = inst.with_discount_cap(alpha);
                admm_solve(&inst, w, &partition, rho, &admm).map(|r| (inst, r.solution))
            })
        }
    };
    Ok(records)
}

/// `0.10, 0.11, ..., 0.90`.
pub fn default_alpha_grid() -> Vec<f64> {
    (10..=90).map(|k| k as f64 / 100.0).collect()
}

fn builtin(name: &str, surplus: [f64; 2], demand: [f64; 2], target: [[f64; 2]; 2], notes: &str) -> Scenario {
    Scenario {
        name: name.to_string(),
        num_ders: 2,
        num_loads: 2,
        surplus: surplus.to_vec(),
        demand: demand.to_vec(),
        pcc_buy_price: vec![20.0; 2],
        pcc_sell_price: vec![50.0; 2],
        price_cap: vec![100.0; 2],
        alpha_grid: default_alpha_grid(),
        target_demand: target.iter().map(|r| r.to_vec()).collect(),
        lambda: LambdaSpec::default(),
        regions: Some(vec![1, 2, 1, 2]),
        solver: SolverKind::Central,
        notes: Some(notes.to_string()),
    }
}

/// The three shipped 2-DER / 2-load scenarios. Surplus, demand and target
/// values are synthetic; each is built to have its scenario's structure.
pub fn builtin_scenarios() -> Vec<Scenario> {
    vec![
        builtin(
            "tight",
            [60.0, 60.0],
            [150.0, 150.0],
            [[60.0, 0.0], [0.0, 60.0]],
            "synthetic: each DER's surplus equals the target it must deliver",
        ),
        builtin(
            "unbalanced_tight",
            [60.0, 50.0],
            [150.0, 150.0],
            [[10.0, 60.0], [40.0, 0.0]],
            "synthetic: DER 1 has 10 kWh more than its targets, DER 2 10 kWh less",
        ),
        builtin(
            "loose",
            [90.0, 40.0],
            [150.0, 150.0],
            [[50.0, 10.0], [10.0, 30.0]],
            "synthetic: DER 1 (50 kWh target to load 1) has 30 kWh beyond its targets, DER 2 matches",
        ),
    ]
}

pub fn builtin_scenario(name: &str) -> Option<Scenario> {
    builtin_scenarios().into_iter().find(|s| s.name == name)
}

/// `%g`-style formatting with six significant digits.
pub fn format_sig6(x: f64) -> String {
    if x.is_nan() {
        return "NaN".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return "0".into();
    }
    let sci = format!("{x:.5e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent");
    let exp: i32 = exp.parse().expect("integer exponent");
    let trim = |s: &str| -> String {
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s.to_string()
        }
    };
    if (-4..6).contains(&exp) {
        let decimals = (5 - exp).max(0) as usize;
        trim(&format!("{x:.decimals$}"))
    } else {
        format!("{}e{}", trim(mantissa), exp)
    }
}

/// Rounds to what [`format_sig6`] prints.
pub fn quantize(x: f64) -> f64 {
    parse_number(&format_sig6(x)).expect("formatter output parses")
}

fn parse_number(text: &str) -> Option<f64> {
    match text {
        "NaN" => Some(f64::NAN),
        "inf" => Some(f64::INFINITY),
        "-inf" => Some(f64::NEG_INFINITY),
        t => t.parse().ok(),
    }
}

pub fn write_csv<W: Write>(records: &[SweepRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER)?;
    for r in records {
        w.write_record([
            format_sig6(r.alpha),
            format_sig6(r.der_gain_pct),
            format_sig6(r.load_gain_pct),
            format_sig6(r.distance),
            format_sig6(r.objective),
            r.converged.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv<R: Read>(input: R) -> Result<Vec<SweepRecord>> {
    let mut rdr = csv::Reader::from_reader(input);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if header != CSV_HEADER {
        return Err(MarketError::Scenario(format!("unexpected CSV header {}", header.join(","))));
    }
    let mut out = Vec::new();
    for (line, row) in rdr.records().enumerate() {
        let row = row?;
        let bad = |what: &str| MarketError::Scenario(format!("row {}: bad {what}", line + 1));
        let num = |k: usize| parse_number(&row[k]).ok_or_else(|| bad(CSV_HEADER[k]));
        out.push(SweepRecord {
            alpha: num(0)?,
            der_gain_pct: num(1)?,
            load_gain_pct: num(2)?,
            distance: num(3)?,
            objective: num(4)?,
            converged: row[5].parse().map_err(|_| bad("converged"))?,
        });
    }
    Ok(out)
}

/// Index of the smallest distance; `None` when another point is within
/// `tie` of it or no distance is finite.
pub fn unique_minimizer(records: &[SweepRecord], tie: f64) -> Option<usize> {
    let (best, min) = records
        .iter()
        .enumerate()
        .filter(|(_, r)| r.distance.is_finite())
        .min_by(|a, b| a.1.distance.total_cmp(&b.1.distance))
        .map(|(k, r)| (k, r.distance))?;
    let ties = records
        .iter()
        .filter(|r| r.distance.is_finite() && r.distance - min <= tie)
        .count();
    (ties == 1).then_some(best)
}
