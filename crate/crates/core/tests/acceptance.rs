//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero when any criterion fails.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use gridmarket::admm::{admm_solve, partition_by_branch, solve_surrogate, normalized_gap, AdmmOptions};
use gridmarket::model::{check_feasible, der_revenue, load_expense, rationality_check, TOL_ZERO};
use gridmarket::scenarios::{builtin_scenario, run_scenario, unique_minimizer, RunOptions};
use gridmarket::solver::{brute_force_oracle, solver_price_bounds, sigma_upper, tradable_layout};
use gridmarket::transform::{
    der_price_row, der_terms, gradient_at, load_price_row, load_terms, log_domain_der_objective,
    log_domain_load_objective, objective_at, posy_der_objective, posy_load_objective, FreeVars, PosyCoefficients,
};
use gridmarket::{default_lambda, solve_scalarized, MarketInstance, Solution, SolverOptions, TradeState};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{expense, pair_can_trade, random_instance, random_positive_state, revenue, support, two_by_two, InstanceRanges};

type Outcome = Result<String, String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
}

fn secs(d: Duration) -> String {
    format!("{:.2}s", d.as_secs_f64())
}

fn objective_equivalence() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let (g, l) = (rng.gen_range(1..=3), rng.gen_range(1..=3));
        let ranges = InstanceRanges {
            buy: (5.0, 30.0),
            sell: (40.0, 60.0),
            ..Default::default()
        };
        let inst = random_instance(&mut rng, g, l, &ranges);
        let s = random_positive_state(&mut rng, &inst);
        ensure(check_feasible(&inst, &s).is_empty(), || "generated state is infeasible".into())?;
        let coeffs = PosyCoefficients::new(&inst);
        for i in 0..g {
            let full: Vec<usize> = (0..=l).collect();
            let direct = der_revenue(&inst, &s, i).map_err(|e| e.to_string())?;
            let posy = posy_der_objective(&coeffs, i, &der_price_row(&s, i), s.alloc.row(i));
            let logd = log_domain_der_objective(&coeffs, i, &der_price_row(&s, i), s.alloc.row(i), &full)
                .map_err(|e| e.to_string())?;
            let hand = revenue(&inst, &s, i);
            worst = worst.max(rel_err(direct, hand)).max(rel_err(posy, hand)).max(rel_err(logd, hand));
        }
        for j in 0..l {
            let full: Vec<usize> = (0..=g).collect();
            let direct = load_expense(&inst, &s, j).map_err(|e| e.to_string())?;
            let posy = posy_load_objective(&coeffs, j, &load_price_row(&s, j), s.dem.row(j));
            let logd = log_domain_load_objective(&coeffs, j, &load_price_row(&s, j), s.dem.row(j), &full)
                .map_err(|e| e.to_string())?;
            let hand = expense(&inst, &s, j);
            worst = worst.max(rel_err(direct, hand)).max(rel_err(posy, hand)).max(rel_err(logd, hand));
        }
    }
    let took = start.elapsed();
    ensure(worst <= 1e-12, || format!("max relative error {worst:e}"))?;
    ensure(took < Duration::from_secs(5), || format!("took {}", secs(took)))?;
    Ok(format!("1000 states, max relative error {worst:.1e}, {}", secs(took)))
}

fn nonconvexity_witness() -> Outcome {
    let inst = random_instance(&mut ChaCha8Rng::seed_from_u64(202), 1, 1, &InstanceRanges::default());
    let coeffs = PosyCoefficients::new(&inst);
    // DER revenue as a function of (p, h) with the PCC slack fixed
    let f = |p: f64, h: f64| posy_der_objective(&coeffs, 0, &[1.0, p], &[5.0, h]);
    let (p0, h0, step) = (40.0, 3.0, 1e-2);
    let quad = |z: [f64; 2]| {
        // second directional difference: z' H z
        let at = |t: f64| f(p0 + t * z[0], h0 + t * z[1]);
        (at(step) - 2.0 * at(0.0) + at(-step)) / (step * step)
    };
    let plus = quad([1.0, 1.0]);
    let minus = quad([1.0, -1.0]);
    ensure((plus - 2.0).abs() <= 1e-6 && (minus + 2.0).abs() <= 1e-6, || {
        format!("z'Hz = {plus}, {minus}")
    })?;
    Ok(format!("z'Hz = {plus:+.6} on (1,1), {minus:+.6} on (1,-1)"))
}

fn component(v: &FreeVars, field: usize, k: usize) -> f64 {
    [v.trade[k], v.price[k], v.sigma[k]][field]
}

fn component_mut(v: &mut FreeVars, field: usize, k: usize) -> &mut f64 {
    match field {
        0 => &mut v.trade[k],
        1 => &mut v.price[k],
        _ => &mut v.sigma[k],
    }
}

fn bumped(v: &FreeVars, field: usize, k: usize, h: f64) -> FreeVars {
    let mut out = v.clone();
    *component_mut(&mut out, field, k) += h;
    out
}

fn gradient_check() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let mut worst = 0.0f64;
    let mut points = 0;
    for (g, l) in [(1, 1), (2, 2), (3, 2)] {
        let mut done = 0;
        while done < 100 {
            let inst = random_instance(&mut rng, g, l, &InstanceRanges::default());
            let w = default_lambda(g, l);
            let layout = tradable_layout(&inst);
            let n = layout.len();
            if n == 0 {
                continue;
            }
            let mut v = FreeVars::zeros(n);
            let share = (g.max(l) + 1) as f64;
            for (k, &(i, j)) in layout.pairs().iter().enumerate() {
                let (lo, hi) = solver_price_bounds(&inst, i, j).unwrap();
                v.price[k] = lo + rng.gen_range(0.05..0.95) * (hi - lo);
                v.sigma[k] = rng.gen_range(0.05..0.95) * sigma_upper(&inst);
                v.trade[k] = rng.gen_range(0.05..0.95) * inst.surplus[i].min(inst.demand[j]) / share;
            }
            let analytic = gradient_at(&inst, &w, &layout, &v);
            let f = |v: &FreeVars| objective_at(&inst, &w, &layout, v).unwrap();
            let mut numeric = FreeVars::zeros(n);
            for k in 0..n {
                for field in 0..3 {
                    // near the cube root of machine epsilon, relative to the coordinate
                    let h = 1e-5 * component(&v, field, k).abs().max(1.0);
                    let d = (f(&bumped(&v, field, k, h)) - f(&bumped(&v, field, k, -h))) / (2.0 * h);
                    *component_mut(&mut numeric, field, k) = d;
                }
            }
            let scale = numeric.iter_all().fold(0.0f64, |m, x| m.max(x.abs()));
            for (a, b) in analytic.iter_all().zip(numeric.iter_all()) {
                // components far below the gradient's scale are compared against that scale
                let e = (a - b).abs() / a.abs().max(b.abs()).max(1e-6 * scale).max(1e-12);
                worst = worst.max(e);
            }
            done += 1;
            points += 1;
        }
    }
    ensure(worst <= 1e-4, || format!("max relative error {worst:e}"))?;
    Ok(format!("{points} points over 1x1, 2x2, 3x2, max relative error {worst:.1e}"))
}

/// Solutions produced by the oracle check, reused by the rationality suite.
struct Solved {
    inst: MarketInstance,
    solution: Solution,
}

fn oracle_optimality(solved: &mut Vec<Solved>) -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let ranges = InstanceRanges {
        surplus: (5.0, 40.0),
        demand: (5.0, 40.0),
        ..Default::default()
    };
    let mut worst_ratio = 0.0f64;
    for n in 0..20 {
        let inst = random_instance(&mut rng, 1, 1, &ranges);
        let w = default_lambda(1, 1);
        let sol = solve_scalarized(&inst, &w, &SolverOptions::default()).map_err(|e| e.to_string())?;
        let oracle = brute_force_oracle(&inst, &w, 200).map_err(|e| e.to_string())?;
        let gap = (sol.objective - oracle.objective).abs();
        ensure(gap <= oracle.cell_bound, || {
            format!(
                "instance {n}: solver {} vs oracle {} (gap {gap:e} > cell bound {:e})",
                sol.objective, oracle.objective, oracle.cell_bound
            )
        })?;
        worst_ratio = worst_ratio.max(gap / oracle.cell_bound);
        solved.push(Solved { inst, solution: sol });
    }
    let took = start.elapsed();
    ensure(took < Duration::from_secs(120), || format!("took {}", secs(took)))?;
    Ok(format!("20 instances, max gap / cell bound = {worst_ratio:.3}, {}", secs(took)))
}

fn check_rationality(inst: &MarketInstance, s: &TradeState) -> Result<(), String> {
    for i in 0..inst.num_ders {
        for j in 0..inst.num_loads {
            let x = s.trade(i, j);
            if !pair_can_trade(inst, i, j) {
                ensure(x <= 1e-6, || format!("masked pair ({i},{j}) trades {x}"))?;
            } else if x > TOL_ZERO {
                let p = s.prices[(i, j)];
                let paid = p - s.disc[(j, i)];
                ensure(p > inst.pcc_buy_price[i], || format!("pair ({i},{j}) priced {p} <= buy price"))?;
                ensure(paid < inst.pcc_sell_price[j], || format!("pair ({i},{j}) pays {paid} >= sell price"))?;
            }
        }
    }
    for i in 0..inst.num_ders {
        let (got, floor) = (revenue(inst, s, i), inst.surplus[i] * inst.pcc_buy_price[i]);
        ensure(got >= floor - 1e-6, || format!("DER {i} revenue {got} < {floor}"))?;
    }
    for j in 0..inst.num_loads {
        let (got, ceil) = (expense(inst, s, j), inst.demand[j] * inst.pcc_sell_price[j]);
        ensure(got <= ceil + 1e-6, || format!("load {j} expense {got} > {ceil}"))?;
    }
    let v = rationality_check(inst, s);
    ensure(v.is_empty(), || format!("rationality_check: {}", v[0]))?;
    let v = check_feasible(inst, s);
    ensure(v.is_empty(), || format!("check_feasible: {}", v[0]))
}

fn rationality_suite(mut solved: Vec<Solved>) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(505);
    // markets where some pairs fall outside their price window
    let ranges = InstanceRanges {
        buy: (10.0, 70.0),
        sell: (30.0, 60.0),
        cap: (40.0, 100.0),
        ..Default::default()
    };
    let mut masked = 0;
    for (g, l) in [(2, 2), (3, 2), (2, 3)].into_iter().cycle().take(15) {
        let inst = random_instance(&mut rng, g, l, &ranges);
        masked += (0..g).flat_map(|i| (0..l).map(move |j| (i, j))).filter(|&(i, j)| !pair_can_trade(&inst, i, j)).count();
        let solution = solve_scalarized(&inst, &default_lambda(g, l), &SolverOptions::default()).map_err(|e| e.to_string())?;
        solved.push(Solved { inst, solution });
    }
    for name in ["tight", "unbalanced_tight", "loose"] {
        let sc = builtin_scenario(name).unwrap();
        for alpha in [0.1, 0.5, 0.9] {
            let inst = sc.instance(alpha).map_err(|e| e.to_string())?;
            let solution = solve_scalarized(&inst, &default_lambda(2, 2), &SolverOptions::default()).map_err(|e| e.to_string())?;
            solved.push(Solved { inst, solution });
        }
    }
    for (n, s) in solved.iter().enumerate() {
        check_rationality(&s.inst, &s.solution.state).map_err(|e| format!("solve {n}: {e}"))?;
    }
    Ok(format!("{} solves, {masked} masked pairs", solved.len()))
}

fn domain_convexity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(606);
    let trials = 10_000;
    let mut counts = [0usize; 4];
    for _ in 0..trials {
        let (g, l) = (rng.gen_range(1..=3), rng.gen_range(1..=3));
        let inst = random_instance(&mut rng, g, l, &InstanceRanges::default());
        let a = random_positive_state(&mut rng, &inst);
        let mut b = random_positive_state(&mut rng, &inst);
        // push b onto faces of the sets as well
        if rng.gen_bool(0.5) {
            let (i, j) = (rng.gen_range(0..g), rng.gen_range(0..l));
            b.prices[(i, j)] = inst.price_cap[i];
            b.disc[(j, i)] = inst.discount_cap * b.prices[(i, j)];
        }
        let t = rng.gen_range(0.0..=1.0);
        let c = a.blend(&b, t);
        let tol = 1e-9;
        let in_p = (0..g).all(|i| (0..l).all(|j| c.prices[(i, j)] > 0.0 && c.prices[(i, j)] <= inst.price_cap[i] + tol));
        let in_h = (0..g).all(|i| {
            let row = c.alloc.row(i);
            row.iter().all(|h| *h >= -tol) && (row.iter().sum::<f64>() - inst.surplus[i]).abs() <= tol * inst.surplus[i].max(1.0)
        });
        let in_d = (0..l).all(|j| {
            let row = c.dem.row(j);
            row.iter().all(|d| *d >= -tol) && (row.iter().sum::<f64>() - inst.demand[j]).abs() <= tol * inst.demand[j].max(1.0)
        });
        let in_s = (0..l).all(|j| {
            (0..g).all(|i| c.disc[(j, i)] >= 0.0 && c.disc[(j, i)] <= inst.discount_cap * c.prices[(i, j)] * (1.0 + tol))
        });
        for (k, ok) in [in_p, in_h, in_d, in_s].into_iter().enumerate() {
            counts[k] += usize::from(!ok);
        }
        let v = check_feasible(&inst, &c);
        ensure(v.is_empty(), || format!("blend at theta={t}: {}", v[0]))?;
    }
    ensure(counts == [0; 4], || format!("membership failures P/H/D/S = {counts:?}"))?;
    Ok(format!("{trials} trials per set, no membership failures"))
}

/// Index of the largest (or smallest) value; the first one wins ties.
fn arg_best(values: &[f64], max: bool) -> usize {
    let mut best = 0;
    for (k, v) in values.iter().enumerate() {
        let better = if max { *v > values[best] } else { *v < values[best] };
        if better {
            best = k;
        }
    }
    best
}

fn jensen_argmax() -> (Outcome, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(707);
    let n = 41;
    let grid = |lo: f64, hi: f64| -> Vec<f64> { (0..n).map(|k| lo + (hi - lo) * k as f64 / (n - 1) as f64).collect() };
    let mut coupled_agree = 0;
    let mut failure = None;
    for case in 0..10 {
        let inst = random_instance(&mut rng, 1, 1, &InstanceRanges::default());
        let coeffs = PosyCoefficients::new(&inst);
        let (e, d) = (inst.surplus[0], inst.demand[0]);
        let m = e.min(d);
        let (lo, hi) = inst.price_window(0, 0).unwrap();
        let prices = grid(lo, hi);
        let slack_h = grid(e / n as f64, e);
        let trade = grid(m / n as f64, m);
        let slack_d = grid(d / n as f64, d);
        let paid = grid(lo * (1.0 - inst.discount_cap), hi);

        // every term over its own box
        let (mut der_sum, mut der_log, mut load_sum, mut load_log) = (vec![], vec![], vec![], vec![]);
        for &p in &prices {
            for &h0 in &slack_h {
                for &h1 in &trade {
                    let y = der_terms(&coeffs, 0, &[1.0, p], &[h0, h1], &[0, 1]).unwrap();
                    der_sum.push(y.iter().sum::<f64>());
                    der_log.push(y.iter().map(|v| v.ln()).sum::<f64>());
                }
            }
        }
        for &q in &paid {
            for &d0 in &slack_d {
                for &d1 in &trade {
                    let z = load_terms(&coeffs, 0, &[1.0, q], &[d0, d1], &[0, 1]).unwrap();
                    load_sum.push(z.iter().sum::<f64>());
                    load_log.push(z.iter().map(|v| v.ln()).sum::<f64>());
                }
            }
        }
        let der_ok = arg_best(&der_sum, true) == arg_best(&der_log, true);
        let load_ok = arg_best(&load_sum, false) == arg_best(&load_log, false);
        if !(der_ok && load_ok) && failure.is_none() {
            failure = Some(format!("instance {case}: DER agree {der_ok}, load agree {load_ok}"));
        }

        // with the slack tied to the trade, h0 = E - h1
        let (mut sum, mut log) = (vec![], vec![]);
        for &p in &prices {
            for &h1 in &trade {
                let h0 = e - h1;
                if h0 <= 0.0 {
                    sum.push(f64::NEG_INFINITY);
                    log.push(f64::NEG_INFINITY);
                    continue;
                }
                let y = der_terms(&coeffs, 0, &[1.0, p], &[h0, h1], &[0, 1]).unwrap();
                sum.push(y.iter().sum::<f64>());
                log.push(y.iter().map(|v| v.ln()).sum::<f64>());
            }
        }
        coupled_agree += usize::from(arg_best(&sum, true) == arg_best(&log, true));
    }
    let note = format!("with h0 = E - h1 the DER argmaxes agree on {coupled_agree}/10 instances");
    let outcome = match failure {
        Some(f) => Err(f),
        None => Ok(format!("10 instances, {n}^3 box grids, DER and load argmaxes agree")),
    };
    (outcome, note)
}

fn admm_equivalence() -> Outcome {
    let w = default_lambda(2, 2);
    let opts = AdmmOptions::default();
    let mut lines = Vec::new();

    let single = two_by_two(vec![1, 1, 1, 1]);
    let central = solve_surrogate(&single, &w, &opts.local).map_err(|e| e.to_string())?;
    let part = partition_by_branch(&single).map_err(|e| e.to_string())?;
    let r = admm_solve(&single, &w, &part, 1.0, &opts).map_err(|e| e.to_string())?;
    let gap = normalized_gap(r.solution.objective, central.objective);
    ensure(gap <= 1e-8, || format!("K=1 gap {gap:e}"))?;
    lines.push(format!("K=1 gap {gap:.1e}"));

    let mut cases: Vec<(String, MarketInstance)> = [vec![1, 2, 1, 2], vec![1, 2, 2, 1]]
        .into_iter()
        .map(|r| (format!("2x2 {r:?}"), two_by_two(r)))
        .collect();
    for name in ["tight", "unbalanced_tight", "loose"] {
        cases.push((name.to_string(), builtin_scenario(name).unwrap().instance(0.3).map_err(|e| e.to_string())?));
    }
    let mut worst = 0.0f64;
    for (label, inst) in &cases {
        let central = solve_surrogate(inst, &w, &opts.local).map_err(|e| e.to_string())?;
        let part = partition_by_branch(inst).map_err(|e| e.to_string())?;
        ensure(part.num_regions() == 2, || format!("{label}: {} regions", part.num_regions()))?;
        for rho in [1.0, 10.0] {
            let r = admm_solve(inst, &w, &part, rho, &opts).map_err(|e| e.to_string())?;
            let gap = normalized_gap(r.solution.objective, central.objective);
            ensure(gap <= 1e-4, || format!("{label} rho={rho}: gap {gap:e}"))?;
            let (a, b) = (support(inst, &r.solution.state, 1e-6), support(inst, &central.state, 1e-6));
            ensure(a == b, || format!("{label} rho={rho}: support {a:?} vs {b:?}"))?;
            ensure(r.solution.converged, || format!("{label} rho={rho}: not converged"))?;
            let primal = r.trace.last().unwrap().primal_residual;
            ensure(primal < 1e-6, || format!("{label} rho={rho}: final primal residual {primal:e}"))?;
            worst = worst.max(gap);
        }
    }
    lines.push(format!("{} two-region cases at rho 1 and 10, max gap {worst:.1e}", cases.len()));
    Ok(lines.join("; "))
}

fn scenario_properties() -> Outcome {
    let start = Instant::now();
    let opts = RunOptions::default();
    let tight = run_scenario(&builtin_scenario("tight").unwrap(), &opts).map_err(|e| e.to_string())?;
    let near = tight
        .iter()
        .filter(|r| r.alpha <= 0.25 + 1e-12)
        .map(|r| r.distance)
        .fold(f64::INFINITY, f64::min);
    ensure(near <= 1e-3, || format!("tight: smallest distance for alpha <= 0.25 is {near:e}"))?;
    let mut parts = vec![format!("tight min distance {near:.1e}")];
    for name in ["unbalanced_tight", "loose"] {
        let records = run_scenario(&builtin_scenario(name).unwrap(), &opts).map_err(|e| e.to_string())?;
        ensure(records.len() == 81, || format!("{name}: {} records", records.len()))?;
        let k = unique_minimizer(&records, 1e-6).ok_or_else(|| format!("{name}: no unique minimizing alpha"))?;
        let bad = records
            .iter()
            .find(|r| !(r.der_gain_pct > 0.0 && r.load_gain_pct > 0.0))
            .map(|r| r.alpha);
        ensure(bad.is_none(), || format!("{name}: non-positive gain at alpha {:?}", bad))?;
        parts.push(format!("{name} minimizer alpha {}", records[k].alpha));
    }
    let took = start.elapsed();
    ensure(took < Duration::from_secs(300), || format!("took {}", secs(took)))?;
    parts.push(secs(took));
    Ok(parts.join(", "))
}

fn default_weights() -> Outcome {
    let w = default_lambda(2, 2);
    let want = [0.034884, 0.034884, 0.116279, 0.116279, 0.348837, 0.348837];
    let got = w.as_slice();
    ensure(got.iter().zip(want).all(|(a, b)| (a - b).abs() <= 1e-6), || format!("got {got:?}"))?;
    ensure((got.iter().sum::<f64>() - 1.0).abs() <= 1e-12, || "weights do not sum to 1".into())?;
    ensure(
        (got[0] - 0.3 * got[2]).abs() <= 1e-12 && (got[0] - 0.1 * got[4]).abs() <= 1e-12,
        || "class ratios broken".into(),
    )?;
    Ok(format!("{got:.6?}"))
}

fn guarded(f: impl FnOnce() -> Outcome) -> Outcome {
    catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        let msg = p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_default();
        Err(format!("panicked: {msg}"))
    })
}

fn main() -> ExitCode {
    let mut solved = Vec::new();
    let mut results: Vec<(&str, Outcome)> = Vec::new();
    results.push(("objective equivalence", guarded(objective_equivalence)));
    results.push(("non-convexity witness", guarded(nonconvexity_witness)));
    results.push(("gradient check", guarded(gradient_check)));
    results.push(("oracle optimality", guarded(|| oracle_optimality(&mut solved))));
    results.push(("rationality suite", guarded(move || rationality_suite(solved))));
    results.push(("domain convexity", guarded(domain_convexity)));
    let mut note = String::new();
    results.push((
        "surrogate argmax",
        guarded(|| {
            let (o, n) = jensen_argmax();
            note = n;
            o
        }),
    ));
    results.push(("distributed solver", guarded(admm_equivalence)));
    results.push(("scenario properties", guarded(scenario_properties)));
    results.push(("default weights", guarded(default_weights)));

    let mut failed = 0;
    for (k, (name, outcome)) in results.iter().enumerate() {
        match outcome {
            Ok(detail) => println!("PASS {:>2} {name}: {detail}", k + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL {:>2} {name}: {why}", k + 1);
            }
        }
    }
    if !note.is_empty() {
        println!("note: {note}");
    }
    println!("{} of {} criteria passed", results.len() - failed, results.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
