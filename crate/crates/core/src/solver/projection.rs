//! Euclidean projections used by the projected solvers.

/// Smallest `τ >= 0` with `Σ max(lo_k, v_k - τ) <= cap`. When the lower
/// bounds alone exceed `cap` the set is empty and the `τ` returned pushes
/// every entry to its bound.
fn cap_shift(v: &[f64], lo: &[f64], cap: f64) -> f64 {
    let sum: f64 = v.iter().zip(lo).map(|(x, l)| x.max(*l)).sum();
    if sum <= cap {
        return 0.0;
    }
    let budget = cap - lo.iter().sum::<f64>();
    let mut w: Vec<f64> = v.iter().zip(lo).map(|(x, l)| x - l).collect();
    w.sort_by(|a, b| b.total_cmp(a));
    if budget <= 0.0 {
        return w[0].max(0.0);
    }
    // water level over the excess above the lower bounds
    let mut acc = 0.0;
    let mut tau = 0.0;
    for (k, wk) in w.iter().enumerate() {
        acc += wk;
        let t = (acc - budget) / (k + 1) as f64;
        if wk - t > 0.0 {
            tau = t;
        } else {
            break;
        }
    }
    tau.max(0.0)
}

/// Projects `v` onto `{x : x_k >= lo_k, Σ x_k <= cap}` in place.
///
/// If the lower bounds alone exceed `cap` the set is empty and `v` is
/// clamped to the lower bounds.
pub fn project_capped(v: &mut [f64], lo: &[f64], cap: f64) {
    let tau = cap_shift(v, lo, cap);
    for (x, l) in v.iter_mut().zip(lo) {
        *x = (*x - tau).max(*l);
    }
}

const MAX_SWEEPS: usize = 10_000;

/// A capped group of variables: `Σ_{k ∈ members} x_k <= cap`.
#[derive(Debug, Clone)]
pub struct Group {
    pub members: Vec<usize>,
    pub cap: f64,
}

/// `{x : x >= lo, row groups capped, column groups capped}` where the row
/// groups are pairwise disjoint and so are the column groups.
#[derive(Debug, Clone)]
pub struct TradePolytope {
    pub lower: Vec<f64>,
    pub rows: Vec<Group>,
    pub cols: Vec<Group>,
}

impl TradePolytope {
    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    fn project_family(&self, groups: &[Group], v: &mut [f64]) {
        for (x, l) in v.iter_mut().zip(&self.lower) {
            *x = x.max(*l);
        }
        let mut buf = Vec::new();
        let mut lo = Vec::new();
        for group in groups {
            buf.clear();
            lo.clear();
            buf.extend(group.members.iter().map(|&k| v[k]));
            lo.extend(group.members.iter().map(|&k| self.lower[k]));
            project_capped(&mut buf, &lo, group.cap);
            for (&k, x) in group.members.iter().zip(&buf) {
                v[k] = *x;
            }
        }
    }

    /// Exact projection by two-block coordinate ascent on the multipliers
    /// of the row and column caps, with the lower bounds kept explicit so
    /// that `x = max(lo, v - μ_row - μ_col)`. Each block update is exact.
    /// Sweeps grow with the distance from `v` to the set, so callers keep
    /// their points within a few extents of it. Finished with one
    /// row-then-column pass so the result is feasible to rounding.
    pub fn project(&self, v: &[f64]) -> Vec<f64> {
        let n = v.len();
        let mut x = v.to_vec();
        if self.cols.is_empty() || self.rows.is_empty() {
            self.project_family(&self.rows, &mut x);
            self.project_family(&self.cols, &mut x);
            return x;
        }
        // a projection onto one family that lands inside the other is the
        // projection onto the intersection
        let mut r = x.clone();
        self.project_family(&self.rows, &mut r);
        if self.family_contains(&self.cols, &r) {
            return r;
        }
        let mut c = x;
        self.project_family(&self.cols, &mut c);
        if self.family_contains(&self.rows, &c) {
            return c;
        }

        let group_of = |groups: &[Group]| {
            let mut of = vec![None; n];
            for (g, group) in groups.iter().enumerate() {
                for &k in &group.members {
                    of[k] = Some(g);
                }
            }
            of
        };
        let (row_of, col_of) = (group_of(&self.rows), group_of(&self.cols));
        let mut mu_row = vec![0.0; self.rows.len()];
        let mut mu_col = vec![0.0; self.cols.len()];
        let scale = v.iter().fold(1.0f64, |m, a| m.max(a.abs()));
        let (mut w, mut lo) = (Vec::new(), Vec::new());
        let mut sweep = |groups: &[Group], mu: &mut [f64], other: &[f64], other_of: &[Option<usize>]| -> f64 {
            let mut change = 0.0f64;
            for (g, group) in groups.iter().enumerate() {
                w.clear();
                lo.clear();
                for &k in &group.members {
                    w.push(v[k] - other_of[k].map_or(0.0, |o| other[o]));
                    lo.push(self.lower[k]);
                }
                let tau = cap_shift(&w, &lo, group.cap);
                change = change.max((tau - mu[g]).abs());
                mu[g] = tau;
            }
            change
        };
        for _ in 0..MAX_SWEEPS {
            let a = sweep(&self.rows, &mut mu_row, &mu_col, &col_of);
            let b = sweep(&self.cols, &mut mu_col, &mu_row, &row_of);
            if a.max(b) <= 1e-15 * scale {
                break;
            }
        }
        let mut x: Vec<f64> = (0..n)
            .map(|k| {
                let shift = row_of[k].map_or(0.0, |g| mu_row[g]) + col_of[k].map_or(0.0, |g| mu_col[g]);
                (v[k] - shift).max(self.lower[k])
            })
            .collect();
        self.project_family(&self.rows, &mut x);
        self.project_family(&self.cols, &mut x);
        x
    }

    /// Largest group cap: no point of the set moves further than this
    /// from another along a coordinate.
    pub fn extent(&self) -> f64 {
        self.rows.iter().chain(&self.cols).map(|g| g.cap).fold(0.0, f64::max)
    }

    fn family_contains(&self, groups: &[Group], x: &[f64]) -> bool {
        groups.iter().all(|g| g.members.iter().map(|&k| x[k]).sum::<f64>() <= g.cap)
    }

    pub fn contains(&self, x: &[f64], tol: f64) -> bool {
        x.iter().zip(&self.lower).all(|(a, l)| *a >= l - tol)
            && self
                .rows
                .iter()
                .chain(&self.cols)
                .all(|g| g.members.iter().map(|&k| x[k]).sum::<f64>() <= g.cap + tol)
    }
}
