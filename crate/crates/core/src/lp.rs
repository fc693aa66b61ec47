//! Dense bounded-variable simplex.
//!
//! Every constraint row is turned into an equality by a slack column (for
//! inequalities) and, when the starting point violates it, an artificial
//! column. Phase 1 minimises the sum of artificials, phase 2 the user
//! objective. The full tableau `B^-1 A` is kept in row-major form; problem
//! sizes here stay in the low thousands of columns.
//!
//! A dual simplex pass is available on a solved tableau after bound changes,
//! which is what branch-and-bound uses to re-optimise a child node from its
//! parent.

use std::fmt;

use thiserror::Error;

pub const DEFAULT_FEAS_TOL: f64 = 1e-7;
pub const DEFAULT_PIVOT_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Relation {
    Le,
    Eq,
    Ge,
}

impl fmt::Display for Relation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Relation::Le => "<=",
            Relation::Eq => "=",
            Relation::Ge => ">=",
        })
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LpError {
    #[error("variable {index}: lower bound {lower} exceeds upper bound {upper}")]
    InvertedBounds { index: usize, lower: f64, upper: f64 },
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("constraint references variable {index} but the program has {n_vars} variables")]
    IndexOutOfRange { index: usize, n_vars: usize },
    #[error("coefficient vector has length {got}, expected {expected}")]
    DimensionMismatch { got: usize, expected: usize },
    #[error("simplex stopped after {0} pivots")]
    IterationLimit(usize),
    #[error("numerical failure: {0}")]
    Numerical(String),
}

/// One linear row `sum(coef * x[index]) (<=|=|>=) rhs`, stored sparsely.
#[derive(Clone, Debug, PartialEq)]
pub struct Constraint {
    pub terms: Vec<(usize, f64)>,
    pub relation: Relation,
    pub rhs: f64,
}

impl Constraint {
    pub fn activity(&self, x: &[f64]) -> f64 {
        self.terms.iter().map(|&(j, a)| a * x[j]).sum()
    }

    /// Amount by which `x` violates this row (0 when satisfied).
    pub fn violation(&self, x: &[f64]) -> f64 {
        let act = self.activity(x);
        match self.relation {
            Relation::Le => (act - self.rhs).max(0.0),
            Relation::Ge => (self.rhs - act).max(0.0),
            Relation::Eq => (act - self.rhs).abs(),
        }
    }

    /// Magnitude used to make violation checks relative.
    fn scale(&self, x: &[f64]) -> f64 {
        self.terms
            .iter()
            .map(|&(j, a)| (a * x[j]).abs())
            .fold(self.rhs.abs().max(1.0), f64::max)
    }
}

/// Minimisation LP over bounded variables. Bounds may be infinite.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LinearProgram {
    objective: Vec<f64>,
    offset: f64,
    lower: Vec<f64>,
    upper: Vec<f64>,
    constraints: Vec<Constraint>,
}

fn check_bounds(index: usize, lower: f64, upper: f64) -> Result<(), LpError> {
    if lower.is_nan() || upper.is_nan() || lower == f64::INFINITY || upper == f64::NEG_INFINITY {
        return Err(LpError::NonFinite(format!("bounds of variable {index}")));
    }
    if lower > upper {
        return Err(LpError::InvertedBounds { index, lower, upper });
    }
    Ok(())
}

impl LinearProgram {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds a program from dense data; every row must have `objective.len()` entries.
    pub fn from_dense(
        objective: Vec<f64>,
        bounds: &[(f64, f64)],
        rows: &[(Vec<f64>, Relation, f64)],
    ) -> Result<Self, LpError> {
        if bounds.len() != objective.len() {
            return Err(LpError::DimensionMismatch { got: bounds.len(), expected: objective.len() });
        }
        let mut lp = Self::new();
        for (&c, &(lo, hi)) in objective.iter().zip(bounds) {
            lp.add_var(lo, hi, c)?;
        }
        for (coeffs, rel, rhs) in rows {
            lp.add_dense_constraint(coeffs, *rel, *rhs)?;
        }
        Ok(lp)
    }

    pub fn add_var(&mut self, lower: f64, upper: f64, cost: f64) -> Result<usize, LpError> {
        let index = self.objective.len();
        check_bounds(index, lower, upper)?;
        if !cost.is_finite() {
            return Err(LpError::NonFinite(format!("objective coefficient of variable {index}")));
        }
        self.objective.push(cost);
        self.lower.push(lower);
        self.upper.push(upper);
        Ok(index)
    }

    /// Adds a sparse row. Repeated indices are summed and zero coefficients dropped.
    pub fn add_constraint(
        &mut self,
        terms: &[(usize, f64)],
        relation: Relation,
        rhs: f64,
    ) -> Result<usize, LpError> {
        let n = self.n_vars();
        if !rhs.is_finite() {
            return Err(LpError::NonFinite(format!("rhs of constraint {}", self.constraints.len())));
        }
        let mut merged: Vec<(usize, f64)> = Vec::with_capacity(terms.len());
        for &(j, a) in terms {
            if j >= n {
                return Err(LpError::IndexOutOfRange { index: j, n_vars: n });
            }
            if !a.is_finite() {
                return Err(LpError::NonFinite(format!(
                    "coefficient of variable {j} in constraint {}",
                    self.constraints.len()
                )));
            }
            match merged.iter_mut().find(|(k, _)| *k == j) {
                Some(entry) => entry.1 += a,
                None => merged.push((j, a)),
            }
        }
        merged.retain(|&(_, a)| a != 0.0);
        self.constraints.push(Constraint { terms: merged, relation, rhs });
        Ok(self.constraints.len() - 1)
    }

    pub fn add_dense_constraint(
        &mut self,
        coeffs: &[f64],
        relation: Relation,
        rhs: f64,
    ) -> Result<usize, LpError> {
        if coeffs.len() != self.n_vars() {
            return Err(LpError::DimensionMismatch { got: coeffs.len(), expected: self.n_vars() });
        }
        let terms: Vec<(usize, f64)> =
            coeffs.iter().enumerate().filter(|(_, a)| **a != 0.0).map(|(j, a)| (j, *a)).collect();
        self.add_constraint(&terms, relation, rhs)
    }

    pub fn set_bounds(&mut self, index: usize, lower: f64, upper: f64) -> Result<(), LpError> {
        if index >= self.n_vars() {
            return Err(LpError::IndexOutOfRange { index, n_vars: self.n_vars() });
        }
        check_bounds(index, lower, upper)?;
        self.lower[index] = lower;
        self.upper[index] = upper;
        Ok(())
    }

    pub fn set_cost(&mut self, index: usize, cost: f64) {
        self.objective[index] = cost;
    }

    pub fn set_offset(&mut self, offset: f64) {
        self.offset = offset;
    }

    pub fn add_offset(&mut self, delta: f64) {
        self.offset += delta;
    }

    pub fn n_vars(&self) -> usize {
        self.objective.len()
    }

    pub fn n_constraints(&self) -> usize {
        self.constraints.len()
    }

    pub fn objective(&self) -> &[f64] {
        &self.objective
    }

    pub fn offset(&self) -> f64 {
        self.offset
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn constraints(&self) -> &[Constraint] {
        &self.constraints
    }

    pub fn evaluate(&self, x: &[f64]) -> f64 {
        self.offset + self.objective.iter().zip(x).map(|(c, v)| c * v).sum::<f64>()
    }

    /// Largest relative violation of rows and bounds at `x`.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let mut worst = 0.0f64;
        for (j, &v) in x.iter().enumerate() {
            let scale = v.abs().max(1.0);
            worst = worst.max((self.lower[j] - v).max(0.0) / scale);
            worst = worst.max((v - self.upper[j]).max(0.0) / scale);
        }
        for row in &self.constraints {
            worst = worst.max(row.violation(x) / row.scale(x));
        }
        worst
    }

    pub fn is_feasible(&self, x: &[f64], tol: f64) -> bool {
        x.len() == self.n_vars() && self.max_violation(x) <= tol
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LpOutcome {
    pub status: LpStatus,
    /// Objective value; `+inf` when infeasible, `-inf` when unbounded.
    pub objective: f64,
    pub solution: Option<Vec<f64>>,
    pub pivots: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SimplexOptions {
    pub feas_tol: f64,
    pub pivot_tol: f64,
    /// Reduced-cost tolerance for optimality.
    pub opt_tol: f64,
    pub max_pivots: usize,
    /// Consecutive degenerate pivots before switching to Bland's rule.
    pub bland_after: usize,
}

impl Default for SimplexOptions {
    fn default() -> Self {
        Self {
            feas_tol: DEFAULT_FEAS_TOL,
            pivot_tol: DEFAULT_PIVOT_TOL,
            opt_tol: 1e-9,
            max_pivots: 50_000,
            bland_after: 50,
        }
    }
}

impl SimplexOptions {
    pub fn with_feas_tol(tol: f64) -> Self {
        Self { feas_tol: tol, ..Self::default() }
    }
}

/// Solves `lp` with default pivoting parameters and the given feasibility tolerance.
pub fn solve_lp(lp: &LinearProgram, tol: f64) -> Result<LpOutcome, LpError> {
    solve_lp_with(lp, &SimplexOptions::with_feas_tol(tol))
}

pub fn solve_lp_with(lp: &LinearProgram, opts: &SimplexOptions) -> Result<LpOutcome, LpError> {
    let mut tab = Tableau::new(lp, lp.lower(), lp.upper(), *opts)?;
    let status = tab.solve()?;
    Ok(tab.outcome(lp, status))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum ColState {
    Basic,
    AtLower,
    AtUpper,
    /// Non-basic free column held at zero.
    Zero,
}

/// Solver state: the tableau plus primal values and reduced costs of every column.
#[derive(Clone, Debug)]
pub(crate) struct Tableau {
    m: usize,
    ncols: usize,
    n_struct: usize,
    art_start: usize,
    a: Vec<f64>,
    basis: Vec<usize>,
    state: Vec<ColState>,
    x: Vec<f64>,
    lo: Vec<f64>,
    hi: Vec<f64>,
    cost: Vec<f64>,
    offset: f64,
    d: Vec<f64>,
    /// Per row: a column that was a signed unit vector in the original matrix.
    unit: Vec<(usize, f64)>,
    rhs: Vec<f64>,
    opts: SimplexOptions,
    pivots: usize,
    phase_two: bool,
    scratch: Vec<usize>,
}

impl Tableau {
    /// Builds the initial tableau for `lp` with structural bounds overridden by `lower`/`upper`.
    pub(crate) fn new(
        lp: &LinearProgram,
        lower: &[f64],
        upper: &[f64],
        opts: SimplexOptions,
    ) -> Result<Self, LpError> {
        let n = lp.n_vars();
        for j in 0..n {
            check_bounds(j, lower[j], upper[j])?;
        }
        let m = lp.n_constraints();
        let n_slack = lp.constraints.iter().filter(|c| c.relation != Relation::Eq).count();

        let mut x = vec![0.0; n];
        let mut state = vec![ColState::Zero; n];
        for j in 0..n {
            if lower[j].is_finite() {
                x[j] = lower[j];
                state[j] = ColState::AtLower;
            } else if upper[j].is_finite() {
                x[j] = upper[j];
                state[j] = ColState::AtUpper;
            }
        }

        // Decide which rows need an artificial before sizing the tableau.
        let mut residual = Vec::with_capacity(m);
        let mut needs_art = Vec::with_capacity(m);
        for row in &lp.constraints {
            let r = row.rhs - row.activity(&x);
            let slack_ok = match row.relation {
                Relation::Le => r >= 0.0,
                Relation::Ge => r <= 0.0,
                Relation::Eq => false,
            };
            residual.push(r);
            needs_art.push(!slack_ok);
        }
        let n_art = needs_art.iter().filter(|b| **b).count();
        let art_start = n + n_slack;
        let ncols = art_start + n_art;

        let mut a = vec![0.0; m * ncols];
        let mut lo = lower.to_vec();
        let mut hi = upper.to_vec();
        let mut cost = lp.objective.clone();
        x.resize(ncols, 0.0);
        state.resize(ncols, ColState::AtLower);
        lo.resize(ncols, 0.0);
        hi.resize(ncols, 0.0);
        cost.resize(ncols, 0.0);
        let mut basis = vec![0; m];
        let mut unit = vec![(0, 1.0); m];

        let mut next_slack = n;
        let mut next_art = art_start;
        for (i, row) in lp.constraints.iter().enumerate() {
            let base = i * ncols;
            for &(j, v) in &row.terms {
                a[base + j] = v;
            }
            let slack = match row.relation {
                Relation::Eq => None,
                rel => {
                    let s = next_slack;
                    next_slack += 1;
                    a[base + s] = 1.0;
                    if rel == Relation::Le {
                        lo[s] = 0.0;
                        hi[s] = f64::INFINITY;
                    } else {
                        lo[s] = f64::NEG_INFINITY;
                        hi[s] = 0.0;
                    }
                    Some(s)
                }
            };
            let r = residual[i];
            if needs_art[i] {
                let art = next_art;
                next_art += 1;
                let sign = if r >= 0.0 { 1.0 } else { -1.0 };
                a[base + art] = sign;
                lo[art] = 0.0;
                hi[art] = f64::INFINITY;
                // Row scaled so the artificial has coefficient one.
                if sign < 0.0 {
                    for v in &mut a[base..base + ncols] {
                        *v = -*v;
                    }
                }
                basis[i] = art;
                state[art] = ColState::Basic;
                x[art] = r.abs();
                if let Some(s) = slack {
                    x[s] = 0.0;
                    state[s] = if row.relation == Relation::Le { ColState::AtLower } else { ColState::AtUpper };
                    unit[i] = (s, 1.0);
                } else {
                    unit[i] = (art, sign);
                }
            } else {
                let s = slack.expect("inequality row has a slack");
                basis[i] = s;
                state[s] = ColState::Basic;
                x[s] = r;
                unit[i] = (s, 1.0);
            }
        }

        Ok(Self {
            m,
            ncols,
            n_struct: n,
            art_start,
            a,
            basis,
            state,
            x,
            lo,
            hi,
            cost,
            offset: lp.offset,
            d: vec![0.0; ncols],
            unit,
            rhs: lp.constraints.iter().map(|c| c.rhs).collect(),
            opts,
            pivots: 0,
            phase_two: false,
            scratch: Vec::with_capacity(ncols),
        })
    }

    /// Two-phase primal simplex from the initial basis.
    pub(crate) fn solve(&mut self) -> Result<LpStatus, LpError> {
        if self.art_start < self.ncols {
            let phase_one: Vec<f64> =
                (0..self.ncols).map(|j| if j >= self.art_start { 1.0 } else { 0.0 }).collect();
            self.price_from(&phase_one);
            let status = self.primal(&phase_one)?;
            debug_assert_ne!(status, LpStatus::Unbounded);
            self.refresh_values();
            let infeas: f64 = (self.art_start..self.ncols).map(|j| self.x[j]).sum();
            let scale = self.rhs.iter().fold(1.0f64, |acc, b| acc.max(b.abs()));
            if infeas > self.opts.feas_tol * scale {
                return Ok(LpStatus::Infeasible);
            }
            self.retire_artificials();
        }
        self.phase_two = true;
        let costs = self.cost.clone();
        self.price_from(&costs);
        let status = self.primal(&costs)?;
        self.refresh_values();
        Ok(status)
    }

    /// Fixes artificials at zero and pivots basic ones out where the row allows it.
    fn retire_artificials(&mut self) {
        for j in self.art_start..self.ncols {
            self.lo[j] = 0.0;
            self.hi[j] = 0.0;
            if self.state[j] != ColState::Basic {
                self.x[j] = 0.0;
                self.state[j] = ColState::AtLower;
            }
        }
        for r in 0..self.m {
            let b = self.basis[r];
            if b < self.art_start {
                continue;
            }
            let row = &self.a[r * self.ncols..r * self.ncols + self.art_start];
            let mut best: Option<(usize, f64)> = None;
            for (j, &v) in row.iter().enumerate() {
                if self.state[j] != ColState::Basic && v.abs() > 1e-7 && best.is_none_or(|(_, bv)| v.abs() > bv) {
                    best = Some((j, v.abs()));
                }
            }
            if let Some((q, _)) = best {
                // Degenerate exchange: the artificial is (numerically) zero.
                let delta_b = -self.x[b];
                let alpha = self.a[r * self.ncols + q];
                let step = -delta_b / alpha;
                self.apply_step(q, step);
                self.x[b] = 0.0;
                self.state[b] = ColState::AtLower;
                self.pivot(r, q);
            }
        }
    }

    fn price_from(&mut self, costs: &[f64]) {
        self.d.copy_from_slice(costs);
        for i in 0..self.m {
            let cb = costs[self.basis[i]];
            if cb != 0.0 {
                let row = &self.a[i * self.ncols..(i + 1) * self.ncols];
                for (dj, aij) in self.d.iter_mut().zip(row) {
                    *dj -= cb * aij;
                }
            }
        }
        for i in 0..self.m {
            self.d[self.basis[i]] = 0.0;
        }
    }

    /// Moves non-basic column `q` by `step` and updates basic values accordingly.
    fn apply_step(&mut self, q: usize, step: f64) {
        if step == 0.0 {
            return;
        }
        self.x[q] += step;
        for i in 0..self.m {
            let alpha = self.a[i * self.ncols + q];
            if alpha != 0.0 {
                self.x[self.basis[i]] -= step * alpha;
            }
        }
    }

    fn pivot(&mut self, r: usize, q: usize) {
        let nc = self.ncols;
        let piv = self.a[r * nc + q];
        {
            let row = &mut self.a[r * nc..(r + 1) * nc];
            let inv = 1.0 / piv;
            for v in row.iter_mut() {
                *v *= inv;
            }
            row[q] = 1.0;
        }
        self.scratch.clear();
        for j in 0..nc {
            let v = self.a[r * nc + j];
            if v.abs() > 1e-14 {
                self.scratch.push(j);
            } else {
                self.a[r * nc + j] = 0.0;
            }
        }
        let (before, rest) = self.a.split_at_mut(r * nc);
        let (prow, after) = rest.split_at_mut(nc);
        let nz = &self.scratch;
        for row in before.chunks_exact_mut(nc).chain(after.chunks_exact_mut(nc)) {
            let f = row[q];
            if f != 0.0 {
                for &j in nz {
                    row[j] -= f * prow[j];
                }
                row[q] = 0.0;
            }
        }
        let dq = self.d[q];
        if dq != 0.0 {
            for &j in nz {
                self.d[j] -= dq * prow[j];
            }
            self.d[q] = 0.0;
        }
        let leaving = self.basis[r];
        self.basis[r] = q;
        self.state[q] = ColState::Basic;
        debug_assert_ne!(self.state[leaving], ColState::Basic);
        self.pivots += 1;
    }

    fn entering_direction(&self, j: usize) -> Option<f64> {
        let tol = self.opts.opt_tol;
        let dj = self.d[j];
        match self.state[j] {
            ColState::Basic => None,
            _ if self.lo[j] == self.hi[j] => None,
            ColState::AtLower if dj < -tol => Some(1.0),
            ColState::AtUpper if dj > tol => Some(-1.0),
            ColState::Zero if dj.abs() > tol => Some(-dj.signum()),
            _ => None,
        }
    }

    /// Primal simplex on the current cost vector; `d` must already be priced.
    fn primal(&mut self, costs: &[f64]) -> Result<LpStatus, LpError> {
        let mut degenerate_run = 0usize;
        let mut since_refresh = 0usize;
        loop {
            if self.pivots >= self.opts.max_pivots {
                return Err(LpError::IterationLimit(self.pivots));
            }
            let bland = degenerate_run >= self.opts.bland_after;
            let mut entering: Option<(usize, f64)> = None;
            let mut best = 0.0;
            for j in 0..self.ncols {
                if let Some(dir) = self.entering_direction(j) {
                    if bland {
                        entering = Some((j, dir));
                        break;
                    }
                    let score = self.d[j].abs();
                    if score > best {
                        best = score;
                        entering = Some((j, dir));
                    }
                }
            }
            let Some((q, dir)) = entering else {
                return Ok(LpStatus::Optimal);
            };

            let (leave, step) = self.ratio_test(q, dir, bland);
            let flip_range = if self.lo[q].is_finite() && self.hi[q].is_finite() {
                Some(self.hi[q] - self.lo[q])
            } else {
                None
            };
            let flip = match (leave, flip_range) {
                (None, None) => return Ok(LpStatus::Unbounded),
                (None, Some(_)) => true,
                (Some(_), Some(range)) => range <= step,
                (Some(_), None) => false,
            };
            match leave {
                _ if flip => {
                    let range = flip_range.expect("flip needs a finite range");
                    self.apply_step(q, dir * range);
                    if dir > 0.0 {
                        self.x[q] = self.hi[q];
                        self.state[q] = ColState::AtUpper;
                    } else {
                        self.x[q] = self.lo[q];
                        self.state[q] = ColState::AtLower;
                    }
                    degenerate_run = 0;
                }
                Some((r, to_upper)) => {
                    self.apply_step(q, dir * step);
                    let b = self.basis[r];
                    if to_upper {
                        self.x[b] = self.hi[b];
                        self.state[b] = ColState::AtUpper;
                    } else {
                        self.x[b] = self.lo[b];
                        self.state[b] = ColState::AtLower;
                    }
                    self.pivot(r, q);
                    if step <= 1e-12 {
                        degenerate_run += 1;
                    } else {
                        degenerate_run = 0;
                    }
                    since_refresh += 1;
                    if since_refresh >= 200 {
                        since_refresh = 0;
                        self.refresh_values();
                        self.price_from(costs);
                    }
                }
                None => unreachable!("no leaving row without a bound flip"),
            }
        }
    }

    /// Harris-style two-pass ratio test. Returns the leaving row (and whether
    /// the leaving column goes to its upper bound) with the step length.
    fn ratio_test(&self, q: usize, dir: f64, bland: bool) -> (Option<(usize, bool)>, f64) {
        let tol = self.opts.feas_tol;
        let ptol = self.opts.pivot_tol;
        let nc = self.ncols;
        // A basic value already past its bound by more than `tol` must still
        // block, so every relaxed ratio is clamped at zero.
        let mut relaxed = f64::INFINITY;
        for i in 0..self.m {
            let g = dir * self.a[i * nc + q];
            let b = self.basis[i];
            if g > ptol && self.lo[b].is_finite() {
                relaxed = relaxed.min(((self.x[b] - self.lo[b] + tol) / g).max(0.0));
            } else if g < -ptol && self.hi[b].is_finite() {
                relaxed = relaxed.min(((self.hi[b] - self.x[b] + tol) / -g).max(0.0));
            }
        }
        if relaxed == f64::INFINITY {
            return (None, f64::INFINITY);
        }
        let mut pick: Option<(usize, bool, f64, f64)> = None;
        for i in 0..self.m {
            let g = dir * self.a[i * nc + q];
            let b = self.basis[i];
            let (ratio, to_upper) = if g > ptol && self.lo[b].is_finite() {
                (((self.x[b] - self.lo[b]) / g).max(0.0), false)
            } else if g < -ptol && self.hi[b].is_finite() {
                (((self.hi[b] - self.x[b]) / -g).max(0.0), true)
            } else {
                continue;
            };
            if ratio <= relaxed {
                let better = match pick {
                    None => true,
                    Some((pi, _, _, pg)) => {
                        if bland {
                            b < self.basis[pi]
                        } else {
                            g.abs() > pg
                        }
                    }
                };
                if better {
                    pick = Some((i, to_upper, ratio, g.abs()));
                }
            }
        }
        match pick {
            Some((i, up, ratio, _)) => (Some((i, up)), ratio),
            None => (None, f64::INFINITY),
        }
    }

    /// Recomputes basic values from `B^-1 b` and the non-basic values.
    fn refresh_values(&mut self) {
        let nc = self.ncols;
        let mut xb = vec![0.0; self.m];
        for (k, &(col, sign)) in self.unit.iter().enumerate() {
            let bk = self.rhs[k] * sign;
            if bk != 0.0 {
                for (i, v) in xb.iter_mut().enumerate() {
                    *v += self.a[i * nc + col] * bk;
                }
            }
        }
        for j in 0..nc {
            if self.state[j] != ColState::Basic && self.x[j] != 0.0 {
                let xj = self.x[j];
                for (i, v) in xb.iter_mut().enumerate() {
                    *v -= self.a[i * nc + j] * xj;
                }
            }
        }
        for (i, v) in xb.into_iter().enumerate() {
            self.x[self.basis[i]] = v;
        }
    }

    /// Changes the bounds of structural column `j` on a solved tableau.
    pub(crate) fn set_bounds(&mut self, j: usize, lower: f64, upper: f64) {
        debug_assert!(j < self.n_struct);
        self.lo[j] = lower;
        self.hi[j] = upper;
        if self.state[j] == ColState::Basic {
            return;
        }
        let (target, state) = if lower == upper {
            (lower, ColState::AtLower)
        } else if self.state[j] == ColState::AtUpper && upper.is_finite() {
            (upper, ColState::AtUpper)
        } else if lower.is_finite() {
            (lower, ColState::AtLower)
        } else if upper.is_finite() {
            (upper, ColState::AtUpper)
        } else {
            (0.0, ColState::Zero)
        };
        self.state[j] = state;
        let step = target - self.x[j];
        self.apply_step(j, step);
        self.x[j] = target;
    }

    /// Moves every structural bound to the given values.
    pub(crate) fn rebound(&mut self, lower: &[f64], upper: &[f64]) {
        for j in 0..self.n_struct {
            if self.lo[j] != lower[j] || self.hi[j] != upper[j] {
                self.set_bounds(j, lower[j], upper[j]);
            }
        }
    }

    /// Restores primal feasibility with dual simplex, then polishes with
    /// primal phase 2. Requires a tableau that finished phase 2.
    pub(crate) fn reoptimize(&mut self) -> Result<LpStatus, LpError> {
        debug_assert!(self.phase_two);
        if self.dual()? == LpStatus::Infeasible {
            return Ok(LpStatus::Infeasible);
        }
        self.refresh_values();
        if self.primal_infeasibility() > self.opts.feas_tol {
            // Drift after many updates: fall back on a second dual pass.
            if self.dual()? == LpStatus::Infeasible {
                return Ok(LpStatus::Infeasible);
            }
        }
        let costs = self.cost.clone();
        self.price_from(&costs);
        let status = self.primal(&costs)?;
        self.refresh_values();
        Ok(status)
    }

    fn primal_infeasibility(&self) -> f64 {
        self.basis
            .iter()
            .map(|&b| (self.lo[b] - self.x[b]).max(self.x[b] - self.hi[b]).max(0.0))
            .fold(0.0, f64::max)
    }

    fn dual(&mut self) -> Result<LpStatus, LpError> {
        let tol = self.opts.feas_tol;
        let ptol = self.opts.pivot_tol;
        let nc = self.ncols;
        loop {
            if self.pivots >= self.opts.max_pivots {
                return Err(LpError::IterationLimit(self.pivots));
            }
            let mut leave: Option<(usize, f64)> = None;
            let mut worst = 0.0;
            for i in 0..self.m {
                let b = self.basis[i];
                let below = self.lo[b] - self.x[b];
                let above = self.x[b] - self.hi[b];
                let (infeas, target) = if below > tol {
                    (below, self.lo[b])
                } else if above > tol {
                    (above, self.hi[b])
                } else {
                    continue;
                };
                // Steepest edge: infeasibility relative to the norm of row i of B^-1.
                let row = &self.a[i * nc..(i + 1) * nc];
                let w: f64 = self.unit.iter().map(|&(c, _)| row[c] * row[c]).sum();
                let score = infeas * infeas / w.max(1e-12);
                if score > worst {
                    worst = score;
                    leave = Some((i, target));
                }
            }
            let Some((r, target)) = leave else {
                return Ok(LpStatus::Optimal);
            };
            let b = self.basis[r];
            // sign > 0: the basic value must increase.
            let sign = if target > self.x[b] { 1.0 } else { -1.0 };
            let row = &self.a[r * nc..(r + 1) * nc];
            let mut pick: Option<(usize, f64, f64)> = None;
            for j in 0..nc {
                let st = self.state[j];
                if st == ColState::Basic || self.lo[j] == self.hi[j] {
                    continue;
                }
                let alpha = row[j];
                if alpha.abs() <= ptol {
                    continue;
                }
                // Moving x_j by t changes x_b by -alpha * t.
                let eligible = match st {
                    ColState::AtLower => -alpha * sign > 0.0,
                    ColState::AtUpper => alpha * sign > 0.0,
                    ColState::Zero => true,
                    ColState::Basic => false,
                };
                if !eligible {
                    continue;
                }
                let ratio = self.d[j].abs() / alpha.abs();
                let better = match pick {
                    None => true,
                    Some((_, pr, pa)) => ratio < pr - 1e-12 || (ratio <= pr + 1e-12 && alpha.abs() > pa),
                };
                if better {
                    pick = Some((j, ratio, alpha.abs()));
                }
            }
            let Some((q, _, _)) = pick else {
                return Ok(LpStatus::Infeasible);
            };
            let alpha = self.a[r * nc + q];
            let step = (target - self.x[b]) / -alpha;
            self.apply_step(q, step);
            self.x[b] = target;
            self.state[b] = if target == self.lo[b] { ColState::AtLower } else { ColState::AtUpper };
            self.pivot(r, q);
        }
    }

    pub(crate) fn structural_values(&self) -> Vec<f64> {
        let mut x = self.x[..self.n_struct].to_vec();
        // Snap values that drifted marginally past a bound.
        for (j, v) in x.iter_mut().enumerate() {
            if *v < self.lo[j] {
                *v = self.lo[j];
            } else if *v > self.hi[j] {
                *v = self.hi[j];
            }
        }
        x
    }

    pub(crate) fn objective_value(&self) -> f64 {
        self.offset
            + self.cost[..self.n_struct]
                .iter()
                .zip(&self.x[..self.n_struct])
                .map(|(c, v)| c * v)
                .sum::<f64>()
    }

    pub(crate) fn pivots(&self) -> usize {
        self.pivots
    }

    pub(crate) fn outcome(&self, lp: &LinearProgram, status: LpStatus) -> LpOutcome {
        match status {
            LpStatus::Optimal => {
                let x = self.structural_values();
                LpOutcome { status, objective: lp.evaluate(&x), solution: Some(x), pivots: self.pivots }
            }
            LpStatus::Infeasible => {
                LpOutcome { status, objective: f64::INFINITY, solution: None, pivots: self.pivots }
            }
            LpStatus::Unbounded => {
                LpOutcome { status, objective: f64::NEG_INFINITY, solution: None, pivots: self.pivots }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn assert_feasible(lp: &LinearProgram, out: &LpOutcome) {
        let x = out.solution.as_ref().expect("optimal has solution");
        assert!(lp.max_violation(x) <= 1e-7, "violation {}", lp.max_violation(x));
    }

    #[test]
    fn single_active_constraint() {
        let lp = LinearProgram::from_dense(
            vec![-1.0, -1.0],
            &[(0.0, 1.0), (0.0, 1.0)],
            &[(vec![1.0, 1.0], Relation::Le, 1.0)],
        )
        .unwrap();
        let out = solve_lp(&lp, DEFAULT_FEAS_TOL).unwrap();
        assert_eq!(out.status, LpStatus::Optimal);
        assert!((out.objective + 1.0).abs() < 1e-12);
        assert_feasible(&lp, &out);
    }

    #[test]
    fn contradictory_rows_are_infeasible() {
        let lp = LinearProgram::from_dense(
            vec![1.0],
            &[(f64::NEG_INFINITY, f64::INFINITY)],
            &[(vec![1.0], Relation::Ge, 2.0), (vec![1.0], Relation::Le, 1.0)],
        )
        .unwrap();
        let out = solve_lp(&lp, DEFAULT_FEAS_TOL).unwrap();
        assert_eq!(out.status, LpStatus::Infeasible);
        assert!(out.solution.is_none());
    }

    #[test]
    fn unbounded_ray() {
        let lp = LinearProgram::from_dense(
            vec![-1.0, 0.0],
            &[(0.0, f64::INFINITY), (0.0, 1.0)],
            &[(vec![1.0, -1.0], Relation::Ge, 0.0)],
        )
        .unwrap();
        assert_eq!(solve_lp(&lp, DEFAULT_FEAS_TOL).unwrap().status, LpStatus::Unbounded);
    }

    #[test]
    fn free_variables_and_equalities() {
        // min x + 2y  s.t. x - y = 1, x + y >= 3, x,y free
        let inf = f64::INFINITY;
        let lp = LinearProgram::from_dense(
            vec![1.0, 2.0],
            &[(-inf, inf), (-inf, inf)],
            &[(vec![1.0, -1.0], Relation::Eq, 1.0), (vec![1.0, 1.0], Relation::Ge, 3.0)],
        )
        .unwrap();
        let out = solve_lp(&lp, DEFAULT_FEAS_TOL).unwrap();
        assert_eq!(out.status, LpStatus::Optimal);
        let x = out.solution.unwrap();
        assert!((x[0] - 2.0).abs() < 1e-9 && (x[1] - 1.0).abs() < 1e-9);
        assert!((out.objective - 4.0).abs() < 1e-9);
    }

    #[test]
    fn redundant_equalities_are_tolerated() {
        let lp = LinearProgram::from_dense(
            vec![1.0, 1.0],
            &[(0.0, 10.0), (0.0, 10.0)],
            &[
                (vec![1.0, 1.0], Relation::Eq, 4.0),
                (vec![2.0, 2.0], Relation::Eq, 8.0),
                (vec![1.0, -1.0], Relation::Le, 0.0),
            ],
        )
        .unwrap();
        let out = solve_lp(&lp, DEFAULT_FEAS_TOL).unwrap();
        assert_eq!(out.status, LpStatus::Optimal);
        assert!((out.objective - 4.0).abs() < 1e-9);
        assert_feasible(&lp, &out);
    }

    #[test]
    fn objective_offset_is_reported() {
        let mut lp = LinearProgram::new();
        let x = lp.add_var(1.0, 2.0, 3.0).unwrap();
        lp.set_offset(-10.0);
        let out = solve_lp(&lp, DEFAULT_FEAS_TOL).unwrap();
        assert_eq!(out.solution.unwrap()[x], 1.0);
        assert_eq!(out.objective, -7.0);
    }

    #[test]
    fn construction_errors() {
        let mut lp = LinearProgram::new();
        assert!(matches!(lp.add_var(2.0, 1.0, 0.0), Err(LpError::InvertedBounds { .. })));
        lp.add_var(0.0, 1.0, 0.0).unwrap();
        assert!(matches!(
            lp.add_constraint(&[(3, 1.0)], Relation::Le, 0.0),
            Err(LpError::IndexOutOfRange { index: 3, n_vars: 1 })
        ));
        assert!(matches!(
            lp.add_dense_constraint(&[1.0, 2.0], Relation::Le, 0.0),
            Err(LpError::DimensionMismatch { got: 2, expected: 1 })
        ));
        assert!(lp.add_constraint(&[(0, f64::NAN)], Relation::Le, 0.0).is_err());
    }

    #[test]
    fn iteration_limit_is_reported() {
        let lp = LinearProgram::from_dense(
            vec![-1.0, -1.0],
            &[(0.0, 5.0), (0.0, 5.0)],
            &[(vec![1.0, 2.0], Relation::Le, 6.0), (vec![2.0, 1.0], Relation::Le, 6.0)],
        )
        .unwrap();
        let opts = SimplexOptions { max_pivots: 0, ..SimplexOptions::default() };
        assert_eq!(solve_lp_with(&lp, &opts), Err(LpError::IterationLimit(0)));
    }

    #[test]
    fn bound_change_reoptimizes_like_cold_solve() {
        let mut lp = LinearProgram::from_dense(
            vec![-3.0, -2.0, -4.0],
            &[(0.0, 4.0), (0.0, 4.0), (0.0, 4.0)],
            &[
                (vec![1.0, 1.0, 2.0], Relation::Le, 6.0),
                (vec![2.0, 0.0, 1.0], Relation::Le, 5.0),
                (vec![0.0, 1.0, 1.0], Relation::Ge, 1.0),
            ],
        )
        .unwrap();
        let mut tab = Tableau::new(&lp, lp.lower(), lp.upper(), SimplexOptions::default()).unwrap();
        assert_eq!(tab.solve().unwrap(), LpStatus::Optimal);
        for (j, lo, hi) in [(2, 0.0, 1.0), (0, 2.0, 2.0)] {
            tab.set_bounds(j, lo, hi);
            lp.set_bounds(j, lo, hi).unwrap();
            let warm = tab.reoptimize().unwrap();
            let cold = solve_lp(&lp, DEFAULT_FEAS_TOL).unwrap();
            assert_eq!(warm, cold.status);
            assert!((tab.objective_value() - cold.objective).abs() < 1e-9);
        }
        tab.set_bounds(1, 4.0, 4.0);
        tab.set_bounds(2, 1.0, 1.0);
        assert_eq!(tab.reoptimize().unwrap(), LpStatus::Infeasible);
    }
}
