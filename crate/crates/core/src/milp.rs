//! Branch-and-bound over binary variables on top of [`crate::lp`].
//!
//! Node selection is best-bound. After branching, one child is re-optimised
//! immediately from the parent's tableau by dual simplex (a "plunge"); its
//! sibling goes to the open list, carrying a snapshot of the parent tableau
//! while the snapshot memory budget allows, otherwise it is solved cold when
//! popped.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap, HashMap};
use std::fmt::Write as _;
use std::time::{Duration, Instant};

use thiserror::Error;

use crate::lp::{Constraint, LinearProgram, LpError, LpStatus, Relation, SimplexOptions, Tableau};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MilpError {
    #[error(transparent)]
    Lp(#[from] LpError),
    #[error("variable name `{0}` is already in use")]
    DuplicateName(String),
    #[error("variable {0} is not binary")]
    NotBinary(usize),
    #[error("binary variable {index} must have bounds within [0, 1], got [{lower}, {upper}]")]
    BinaryBounds { index: usize, lower: f64, upper: f64 },
    #[error("name map has {got} entries for {expected} variables")]
    NameCount { got: usize, expected: usize },
    #[error("the LP relaxation is unbounded")]
    Unbounded,
}

/// A minimisation MILP whose integer variables are all binary.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MilpModel {
    lp: LinearProgram,
    is_binary: Vec<bool>,
    names: Vec<String>,
    lookup: HashMap<String, usize>,
}

impl MilpModel {
    pub fn new() -> Self {
        Self::default()
    }

    /// Wraps an existing LP. `names` must be injective and cover every variable.
    pub fn from_parts(
        lp: LinearProgram,
        binaries: &[usize],
        names: Vec<String>,
    ) -> Result<Self, MilpError> {
        if names.len() != lp.n_vars() {
            return Err(MilpError::NameCount { got: names.len(), expected: lp.n_vars() });
        }
        let mut lookup = HashMap::with_capacity(names.len());
        for (j, name) in names.iter().enumerate() {
            if lookup.insert(name.clone(), j).is_some() {
                return Err(MilpError::DuplicateName(name.clone()));
            }
        }
        let mut is_binary = vec![false; lp.n_vars()];
        for &j in binaries {
            if j >= lp.n_vars() {
                return Err(LpError::IndexOutOfRange { index: j, n_vars: lp.n_vars() }.into());
            }
            let (lower, upper) = (lp.lower()[j], lp.upper()[j]);
            if lower < 0.0 || upper > 1.0 {
                return Err(MilpError::BinaryBounds { index: j, lower, upper });
            }
            is_binary[j] = true;
        }
        Ok(Self { lp, is_binary, names, lookup })
    }

    fn push_name(&mut self, name: String) -> Result<(), MilpError> {
        if self.lookup.contains_key(&name) {
            return Err(MilpError::DuplicateName(name));
        }
        self.lookup.insert(name.clone(), self.names.len());
        self.names.push(name);
        Ok(())
    }

    pub fn add_continuous(
        &mut self,
        name: impl Into<String>,
        lower: f64,
        upper: f64,
        cost: f64,
    ) -> Result<usize, MilpError> {
        let name = name.into();
        if self.lookup.contains_key(&name) {
            return Err(MilpError::DuplicateName(name));
        }
        let j = self.lp.add_var(lower, upper, cost)?;
        self.push_name(name)?;
        self.is_binary.push(false);
        Ok(j)
    }

    pub fn add_binary(&mut self, name: impl Into<String>, cost: f64) -> Result<usize, MilpError> {
        let j = self.add_continuous(name, 0.0, 1.0, cost)?;
        self.is_binary[j] = true;
        Ok(j)
    }

    pub fn add_constraint(
        &mut self,
        terms: &[(usize, f64)],
        relation: Relation,
        rhs: f64,
    ) -> Result<usize, MilpError> {
        Ok(self.lp.add_constraint(terms, relation, rhs)?)
    }

    pub fn set_bounds(&mut self, index: usize, lower: f64, upper: f64) -> Result<(), MilpError> {
        if self.is_binary.get(index).copied().unwrap_or(false) && (lower < 0.0 || upper > 1.0) {
            return Err(MilpError::BinaryBounds { index, lower, upper });
        }
        Ok(self.lp.set_bounds(index, lower, upper)?)
    }

    pub fn set_cost(&mut self, index: usize, cost: f64) {
        self.lp.set_cost(index, cost);
    }

    pub fn add_offset(&mut self, delta: f64) {
        self.lp.add_offset(delta);
    }

    pub fn lp(&self) -> &LinearProgram {
        &self.lp
    }

    pub fn n_vars(&self) -> usize {
        self.lp.n_vars()
    }

    pub fn binaries(&self) -> Vec<usize> {
        (0..self.n_vars()).filter(|&j| self.is_binary[j]).collect()
    }

    pub fn n_binaries(&self) -> usize {
        self.is_binary.iter().filter(|b| **b).count()
    }

    pub fn is_binary(&self, index: usize) -> bool {
        self.is_binary[index]
    }

    pub fn name(&self, index: usize) -> &str {
        &self.names[index]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.lookup.get(name).copied()
    }

    /// Values of `solution` keyed by the variable names starting with `prefix`.
    pub fn values_with_prefix<'a>(
        &'a self,
        prefix: &'a str,
        solution: &'a [f64],
    ) -> impl Iterator<Item = (&'a str, f64)> + 'a {
        self.names
            .iter()
            .enumerate()
            .filter(move |(_, n)| n.starts_with(prefix))
            .map(move |(j, n)| (n.as_str(), solution[j]))
    }

    /// Writes the model in CPLEX LP text format. Numbers use the shortest
    /// representation that round-trips.
    pub fn to_lp_format(&self) -> String {
        let names = self.lp_names();
        let mut out = String::new();
        let _ = writeln!(out, "\\ surro2sp MILP: {} vars, {} rows", self.n_vars(), self.lp.n_constraints());
        out.push_str("Minimize\n obj:");
        let mut any = false;
        for (j, &c) in self.lp.objective().iter().enumerate() {
            if c != 0.0 {
                write_term(&mut out, c, &names[j], !any);
                any = true;
            }
        }
        let offset = self.lp.offset();
        if offset != 0.0 || !any {
            if offset < 0.0 {
                let _ = write!(out, " - {}", -offset);
            } else {
                let _ = write!(out, " + {offset}");
            }
        }
        out.push_str("\nSubject To\n");
        for (i, row) in self.lp.constraints().iter().enumerate() {
            let _ = write!(out, " c{i}:");
            if row.terms.is_empty() {
                let _ = write!(out, " 0 {}", names.first().map(String::as_str).unwrap_or("x"));
            }
            for (k, &(j, a)) in row.terms.iter().enumerate() {
                write_term(&mut out, a, &names[j], k == 0);
            }
            let _ = writeln!(out, " {} {}", row.relation, row.rhs);
        }
        out.push_str("Bounds\n");
        for j in 0..self.n_vars() {
            let (lo, hi) = (self.lp.lower()[j], self.lp.upper()[j]);
            let name = &names[j];
            match (lo.is_finite(), hi.is_finite()) {
                (false, false) => {
                    let _ = writeln!(out, " {name} free");
                }
                (true, false) => {
                    let _ = writeln!(out, " {name} >= {lo}");
                }
                (false, true) => {
                    let _ = writeln!(out, " -inf <= {name} <= {hi}");
                }
                (true, true) if lo == hi => {
                    let _ = writeln!(out, " {name} = {lo}");
                }
                (true, true) => {
                    let _ = writeln!(out, " {lo} <= {name} <= {hi}");
                }
            }
        }
        let bins = self.binaries();
        if !bins.is_empty() {
            out.push_str("Binaries\n");
            for j in bins {
                let _ = writeln!(out, " {}", names[j]);
            }
        }
        out.push_str("End\n");
        out
    }

    fn lp_names(&self) -> Vec<String> {
        let mut seen = HashMap::new();
        self.names
            .iter()
            .enumerate()
            .map(|(j, n)| {
                let mut s: String = n
                    .chars()
                    .map(|c| if c.is_ascii_alphanumeric() || c == '_' || c == '.' { c } else { '_' })
                    .collect();
                if s.is_empty() || s.starts_with(|c: char| c.is_ascii_digit() || c == '.') {
                    s.insert(0, 'v');
                }
                if seen.insert(s.clone(), j).is_some() {
                    s = format!("{s}__{j}");
                }
                s
            })
            .collect()
    }
}

fn write_term(out: &mut String, coef: f64, name: &str, first: bool) {
    let sign = if coef < 0.0 { "-" } else { "+" };
    let mag = coef.abs();
    if first && coef >= 0.0 {
        let _ = write!(out, " {mag} {name}");
    } else {
        let _ = write!(out, " {sign} {mag} {name}");
    }
}

/// Pins binaries to the given values; other variables are untouched.
pub fn fix_binaries(
    model: &MilpModel,
    assignment: &BTreeMap<usize, bool>,
) -> Result<MilpModel, MilpError> {
    let mut out = model.clone();
    for (&j, &v) in assignment {
        if j >= model.n_vars() || !model.is_binary(j) {
            return Err(MilpError::NotBinary(j));
        }
        let val = if v { 1.0 } else { 0.0 };
        out.lp.set_bounds(j, val, val)?;
    }
    Ok(out)
}

/// Problem-specific completion of an LP relaxation point into a candidate
/// MILP solution. The solver checks integrality and feasibility itself.
pub trait PrimalHeuristic: Sync {
    fn propose(&self, relaxation: &[f64]) -> Option<Vec<f64>>;

    /// A starting incumbent offered before the root is solved.
    fn initial(&self) -> Option<Vec<f64>> {
        None
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MilpOptions {
    pub gap_tol: f64,
    pub int_tol: f64,
    pub node_limit: Option<usize>,
    pub time_limit: Option<Duration>,
    pub lp: SimplexOptions,
    /// Upper bound on memory held by parent snapshots in the open list.
    pub snapshot_bytes: usize,
    pub record_bound_trace: bool,
}

impl Default for MilpOptions {
    fn default() -> Self {
        Self {
            gap_tol: 1e-6,
            int_tol: 1e-6,
            node_limit: None,
            time_limit: None,
            lp: SimplexOptions::default(),
            snapshot_bytes: 512 << 20,
            record_bound_trace: false,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MilpStatus {
    Optimal,
    Infeasible,
    /// A node or time limit stopped the search with an incumbent in hand.
    GapLimit,
    /// A node or time limit stopped the search before any incumbent was found.
    NodeLimit,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MilpOutcome {
    pub status: MilpStatus,
    /// Incumbent objective, `+inf` without incumbent.
    pub objective: f64,
    pub best_bound: f64,
    pub solution: Option<Vec<f64>>,
    pub nodes: usize,
    pub lp_pivots: usize,
    /// Nodes whose warm reoptimization had to be redone from scratch.
    pub cold_fallbacks: usize,
    pub wall_time: Duration,
    /// Global lower bound after each processed node, when requested.
    pub bound_trace: Vec<f64>,
}

impl MilpOutcome {
    pub fn relative_gap(&self) -> f64 {
        relative_gap(self.objective, self.best_bound)
    }

    pub fn has_solution(&self) -> bool {
        self.solution.is_some()
    }
}

fn relative_gap(incumbent: f64, bound: f64) -> f64 {
    if !incumbent.is_finite() {
        return f64::INFINITY;
    }
    ((incumbent - bound) / incumbent.abs().max(1.0)).max(0.0)
}

struct OpenNode {
    bound: f64,
    depth: usize,
    seq: u64,
    fixings: Vec<(usize, f64)>,
    snapshot: Option<Box<Tableau>>,
}

impl PartialEq for OpenNode {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for OpenNode {}
impl PartialOrd for OpenNode {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for OpenNode {
    // BinaryHeap is a max-heap: the "greatest" node is the one with the lowest bound.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .bound
            .total_cmp(&self.bound)
            .then(self.depth.cmp(&other.depth))
            .then(other.seq.cmp(&self.seq))
    }
}

fn tableau_bytes(m: &MilpModel) -> usize {
    let rows = m.lp.n_constraints();
    let cols = m.n_vars() + 2 * rows;
    8 * rows * cols + 40 * cols
}

pub fn solve_milp(model: &MilpModel, opts: &MilpOptions) -> Result<MilpOutcome, MilpError> {
    solve_milp_with(model, opts, None)
}

pub fn solve_milp_with(
    model: &MilpModel,
    opts: &MilpOptions,
    heuristic: Option<&dyn PrimalHeuristic>,
) -> Result<MilpOutcome, MilpError> {
    let mut search = Search::new(model, opts, heuristic);
    search.run(None)?;
    Ok(search.finish())
}

/// Root relaxation carried from one solve to the next. Models that share
/// constraints and objective and differ only in variable bounds start their
/// root from the previous optimal basis instead of from scratch.
#[derive(Clone, Debug)]
pub struct WarmStart {
    root: Option<Box<Tableau>>,
    structure: Option<(Vec<Constraint>, Vec<f64>, f64)>,
    since_cold: usize,
    /// Number of consecutive warm roots before the next root is solved cold.
    pub refresh_every: usize,
    pub warm_roots: usize,
    pub cold_roots: usize,
}

impl Default for WarmStart {
    fn default() -> Self {
        Self {
            root: None,
            structure: None,
            since_cold: 0,
            refresh_every: 64,
            warm_roots: 0,
            cold_roots: 0,
        }
    }
}

impl WarmStart {
    pub fn new() -> Self {
        Self::default()
    }

    fn matches(&self, lp: &LinearProgram) -> bool {
        match &self.structure {
            Some((rows, cost, offset)) => {
                rows.len() == lp.n_constraints()
                    && cost.as_slice() == lp.objective()
                    && *offset == lp.offset()
                    && rows.as_slice() == lp.constraints()
            }
            None => false,
        }
    }

    fn take_root(&mut self, lp: &LinearProgram) -> Option<Box<Tableau>> {
        if self.since_cold >= self.refresh_every || !self.matches(lp) {
            return None;
        }
        self.root.clone()
    }

    fn store(&mut self, lp: &LinearProgram, tab: &Tableau, cold: bool) {
        if !self.matches(lp) {
            self.structure = Some((lp.constraints().to_vec(), lp.objective().to_vec(), lp.offset()));
        }
        self.root = Some(Box::new(tab.clone()));
        if cold {
            self.since_cold = 0;
            self.cold_roots += 1;
        } else {
            self.since_cold += 1;
            self.warm_roots += 1;
        }
    }
}

/// Like [`solve_milp_with`], reusing and updating `warm` for the root relaxation.
pub fn solve_milp_warm(
    model: &MilpModel,
    opts: &MilpOptions,
    heuristic: Option<&dyn PrimalHeuristic>,
    warm: &mut WarmStart,
) -> Result<MilpOutcome, MilpError> {
    let mut search = Search::new(model, opts, heuristic);
    search.run(Some(warm))?;
    Ok(search.finish())
}

struct Search<'a> {
    model: &'a MilpModel,
    opts: &'a MilpOptions,
    heuristic: Option<&'a dyn PrimalHeuristic>,
    binaries: Vec<usize>,
    incumbent: Option<Vec<f64>>,
    incumbent_obj: f64,
    open: BinaryHeap<OpenNode>,
    snapshot_bytes_each: usize,
    snapshots_held: usize,
    pruned_min: f64,
    nodes: usize,
    pivots: usize,
    cold_fallbacks: usize,
    seq: u64,
    start: Instant,
    limit_hit: bool,
    trace: Vec<f64>,
    last_global: f64,
}

impl<'a> Search<'a> {
    fn new(
        model: &'a MilpModel,
        opts: &'a MilpOptions,
        heuristic: Option<&'a dyn PrimalHeuristic>,
    ) -> Self {
        Self {
            model,
            opts,
            heuristic,
            binaries: model.binaries(),
            incumbent: None,
            incumbent_obj: f64::INFINITY,
            open: BinaryHeap::new(),
            snapshot_bytes_each: tableau_bytes(model),
            snapshots_held: 0,
            pruned_min: f64::INFINITY,
            nodes: 0,
            pivots: 0,
            cold_fallbacks: 0,
            seq: 0,
            start: Instant::now(),
            limit_hit: false,
            trace: Vec::new(),
            last_global: f64::NEG_INFINITY,
        }
    }

    fn prune_threshold(&self) -> f64 {
        if self.incumbent_obj.is_finite() {
            self.incumbent_obj - self.opts.gap_tol * self.incumbent_obj.abs().max(1.0)
        } else {
            f64::INFINITY
        }
    }

    fn out_of_budget(&self) -> bool {
        if let Some(limit) = self.opts.node_limit {
            if self.nodes >= limit {
                return true;
            }
        }
        if let Some(limit) = self.opts.time_limit {
            if self.start.elapsed() >= limit {
                return true;
            }
        }
        false
    }

    fn open_min(&self) -> f64 {
        self.open.peek().map(|n| n.bound).unwrap_or(f64::INFINITY)
    }

    fn note_bound(&mut self, current: f64) {
        if self.opts.record_bound_trace {
            let global = current.min(self.open_min()).min(self.pruned_min).min(self.incumbent_obj);
            let global = global.max(self.last_global);
            self.last_global = global;
            self.trace.push(global);
        }
    }

    fn solve_root(&mut self, warm: Option<&mut WarmStart>) -> Result<Option<Tableau>, MilpError> {
        let lp = &self.model.lp;
        if let Some(w) = warm {
            if let Some(mut tab) = w.take_root(lp) {
                let before = tab.pivots();
                tab.rebound(lp.lower(), lp.upper());
                let status = tab.reoptimize();
                self.pivots += tab.pivots() - before;
                // Only an optimal warm root is trusted; anything else is settled cold.
                if let Ok(LpStatus::Optimal) = status {
                    w.store(lp, &tab, false);
                    return Ok(Some(*tab));
                }
            }
            let root = self.solve_root_cold()?;
            if let Some(tab) = &root {
                w.store(lp, tab, true);
            }
            return Ok(root);
        }
        self.solve_root_cold()
    }

    fn solve_root_cold(&mut self) -> Result<Option<Tableau>, MilpError> {
        let lp = &self.model.lp;
        let mut tab = Tableau::new(lp, lp.lower(), lp.upper(), self.opts.lp)?;
        let status = tab.solve()?;
        self.pivots += tab.pivots();
        match status {
            LpStatus::Infeasible => Ok(None),
            LpStatus::Unbounded => Err(MilpError::Unbounded),
            LpStatus::Optimal => Ok(Some(tab)),
        }
    }

    fn run(&mut self, warm: Option<&mut WarmStart>) -> Result<(), MilpError> {
        if let Some(start) = self.heuristic.and_then(|h| h.initial()) {
            self.try_incumbent(start);
        }
        let root = self.solve_root(warm)?;
        self.nodes += 1;
        let Some(tab) = root else { return Ok(()) };
        // Nodes pushed without a snapshot restart from the root basis.
        let root_copy = tab.clone();
        let mut current = Some((tab, Vec::new(), f64::NEG_INFINITY, 0usize));

        loop {
            // Plunge as long as the current node produces a child.
            while let Some((tab, fixings, parent_bound, depth)) = current.take() {
                current = self.process(tab, fixings, parent_bound, depth)?;
                if current.is_some() && self.out_of_budget() {
                    self.limit_hit = true;
                    if let Some((_, _, b, _)) = &current {
                        self.pruned_min = self.pruned_min.min(*b);
                    }
                    return Ok(());
                }
            }
            // Pop the best open node.
            let Some(node) = self.open.pop() else { return Ok(()) };
            if node.snapshot.is_some() {
                self.snapshots_held -= 1;
            }
            if node.bound >= self.prune_threshold() {
                self.pruned_min = self.pruned_min.min(node.bound);
                // Every remaining node is at least as bad.
                while let Some(rest) = self.open.pop() {
                    self.pruned_min = self.pruned_min.min(rest.bound);
                }
                self.snapshots_held = 0;
                return Ok(());
            }
            if self.out_of_budget() {
                self.limit_hit = true;
                self.pruned_min = self.pruned_min.min(node.bound);
                return Ok(());
            }
            let tab = match node.snapshot {
                Some(mut snap) => {
                    let &(j, v) = node.fixings.last().expect("snapshot nodes carry a fixing");
                    let before = snap.pivots();
                    snap.set_bounds(j, v, v);
                    let status = snap.reoptimize();
                    self.finish_warm(*snap, before, status, &node.fixings)?
                }
                None => {
                    let mut tab = root_copy.clone();
                    let before = tab.pivots();
                    for &(j, v) in &node.fixings {
                        tab.set_bounds(j, v, v);
                    }
                    let status = tab.reoptimize();
                    self.finish_warm(tab, before, status, &node.fixings)?
                }
            };
            self.nodes += 1;
            if let Some(tab) = tab {
                current = Some((tab, node.fixings, node.bound, node.depth));
            }
        }
    }

    /// Solves the root relaxation restricted by `fixings` from scratch.
    fn solve_cold(&mut self, fixings: &[(usize, f64)]) -> Result<Option<Tableau>, MilpError> {
        let lp = &self.model.lp;
        let mut lower = lp.lower().to_vec();
        let mut upper = lp.upper().to_vec();
        for &(j, v) in fixings {
            lower[j] = v;
            upper[j] = v;
        }
        let mut fresh = Tableau::new(lp, &lower, &upper, self.opts.lp)?;
        let status = fresh.solve()?;
        self.pivots += fresh.pivots();
        match status {
            LpStatus::Optimal => Ok(Some(fresh)),
            LpStatus::Infeasible => Ok(None),
            LpStatus::Unbounded => Err(MilpError::Unbounded),
        }
    }

    /// Accepts a reoptimized tableau. The root was bounded, so an unbounded
    /// or failed reoptimization is numerical drift: the node is re-solved cold.
    fn finish_warm(
        &mut self,
        tab: Tableau,
        pivots_before: usize,
        status: Result<LpStatus, LpError>,
        fixings: &[(usize, f64)],
    ) -> Result<Option<Tableau>, MilpError> {
        self.pivots += tab.pivots() - pivots_before;
        match status {
            Ok(LpStatus::Optimal) => Ok(Some(tab)),
            Ok(LpStatus::Infeasible) => Ok(None),
            Ok(LpStatus::Unbounded) | Err(_) => {
                log::debug!("reoptimization drifted at node {}; re-solving cold", self.nodes);
                self.cold_fallbacks += 1;
                self.solve_cold(fixings)
            }
        }
    }

    fn try_incumbent(&mut self, mut candidate: Vec<f64>) {
        let lp = &self.model.lp;
        if candidate.len() != lp.n_vars() {
            return;
        }
        let integral = self
            .binaries
            .iter()
            .all(|&j| candidate[j].min(1.0 - candidate[j]).abs() <= self.opts.int_tol);
        for &j in &self.binaries {
            candidate[j] = candidate[j].round();
        }
        if !integral || !lp.is_feasible(&candidate, self.opts.lp.feas_tol) {
            return;
        }
        let obj = lp.evaluate(&candidate);
        if obj < self.incumbent_obj {
            log::trace!("incumbent {obj} at node {}", self.nodes);
            self.incumbent_obj = obj;
            self.incumbent = Some(candidate);
        }
    }

    /// Binaries within tolerance of integrality are pinned to their rounded
    /// values and the relaxation re-solved, so the incumbent is exact for
    /// that assignment rather than carrying `int_tol`-sized leakage.
    fn polish(&mut self, mut tab: Tableau, x: Vec<f64>) -> Result<(), MilpError> {
        if self.binaries.iter().all(|&j| x[j] == 0.0 || x[j] == 1.0) {
            self.try_incumbent(x);
            return Ok(());
        }
        let before = tab.pivots();
        let fixings: Vec<(usize, f64)> = self.binaries.iter().map(|&j| (j, x[j].round())).collect();
        for &(j, r) in &fixings {
            tab.set_bounds(j, r, r);
        }
        let status = tab.reoptimize();
        if let Some(t) = self.finish_warm(tab, before, status, &fixings)? {
            self.try_incumbent(t.structural_values());
        }
        Ok(())
    }

    /// Handles a solved node. Returns the child to plunge into, if any.
    #[allow(clippy::type_complexity)]
    fn process(
        &mut self,
        mut tab: Tableau,
        fixings: Vec<(usize, f64)>,
        parent_bound: f64,
        depth: usize,
    ) -> Result<Option<(Tableau, Vec<(usize, f64)>, f64, usize)>, MilpError> {
        let bound = tab.objective_value().max(parent_bound);
        self.note_bound(bound);
        if bound >= self.prune_threshold() {
            self.pruned_min = self.pruned_min.min(bound);
            return Ok(None);
        }
        let x = tab.structural_values();
        let int_tol = self.opts.int_tol;
        let mut branch: Option<(usize, f64)> = None;
        for &j in &self.binaries {
            let frac = x[j] - x[j].floor();
            let dist = frac.min(1.0 - frac);
            if dist > int_tol {
                let score = (frac - 0.5).abs();
                if branch.is_none_or(|(_, s)| score < s) {
                    branch = Some((j, score));
                }
            }
        }
        let Some((var, _)) = branch else {
            self.polish(tab, x)?;
            return Ok(None);
        };

        self.try_incumbent(
            x.iter()
                .enumerate()
                .map(|(j, &v)| if self.model.is_binary(j) { v.round() } else { v })
                .collect(),
        );
        self.try_incumbent(
            x.iter()
                .enumerate()
                .map(|(j, &v)| if self.model.is_binary(j) && v > int_tol { 1.0 } else if self.model.is_binary(j) { 0.0 } else { v })
                .collect(),
        );
        if let Some(h) = self.heuristic {
            if let Some(candidate) = h.propose(&x) {
                self.try_incumbent(candidate);
            }
        }
        if bound >= self.prune_threshold() {
            self.pruned_min = self.pruned_min.min(bound);
            return Ok(None);
        }

        let (first, second) = if x[var] >= 0.5 { (1.0, 0.0) } else { (0.0, 1.0) };
        let budget_ok = (self.snapshots_held + 1) * self.snapshot_bytes_each <= self.opts.snapshot_bytes;
        let snapshot = if budget_ok {
            self.snapshots_held += 1;
            Some(Box::new(tab.clone()))
        } else {
            None
        };
        let mut sibling = fixings.clone();
        sibling.push((var, second));
        self.seq += 1;
        self.open.push(OpenNode { bound, depth: depth + 1, seq: self.seq, fixings: sibling, snapshot });

        let mut child = fixings;
        child.push((var, first));
        let before = tab.pivots();
        tab.set_bounds(var, first, first);
        let status = tab.reoptimize();
        self.nodes += 1;
        let solved = self.finish_warm(tab, before, status, &child)?;
        Ok(solved.map(|t| (t, child, bound, depth + 1)))
    }

    fn finish(self) -> MilpOutcome {
        let open_min = self.open_min();
        let best_bound = self.pruned_min.min(open_min).min(self.incumbent_obj);
        let gap = relative_gap(self.incumbent_obj, best_bound);
        let status = match (&self.incumbent, self.limit_hit) {
            (None, false) => MilpStatus::Infeasible,
            (None, true) => MilpStatus::NodeLimit,
            (Some(_), false) => MilpStatus::Optimal,
            (Some(_), true) if gap <= self.opts.gap_tol => MilpStatus::Optimal,
            (Some(_), true) => MilpStatus::GapLimit,
        };
        let best_bound = if status == MilpStatus::Infeasible { f64::INFINITY } else { best_bound };
        MilpOutcome {
            status,
            objective: self.incumbent_obj,
            best_bound,
            solution: self.incumbent,
            nodes: self.nodes,
            lp_pivots: self.pivots,
            cold_fallbacks: self.cold_fallbacks,
            wall_time: self.start.elapsed(),
            bound_trace: self.trace,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn knapsack() -> MilpModel {
        let mut m = MilpModel::new();
        let values = [6.0, 10.0, 12.0];
        let weights = [1.0, 2.0, 3.0];
        let vars: Vec<usize> =
            values.iter().enumerate().map(|(i, v)| m.add_binary(format!("item{}", i + 1), -v).unwrap()).collect();
        let terms: Vec<(usize, f64)> = vars.iter().zip(weights).map(|(&j, w)| (j, w)).collect();
        m.add_constraint(&terms, Relation::Le, 5.0).unwrap();
        m
    }

    #[test]
    fn knapsack_optimum() {
        let out = solve_milp(&knapsack(), &MilpOptions::default()).unwrap();
        assert_eq!(out.status, MilpStatus::Optimal);
        assert!((out.objective + 22.0).abs() < 1e-9);
        let x = out.solution.unwrap();
        assert!(x[0] < 0.5 && x[1] > 0.5 && x[2] > 0.5);
        assert!(out.best_bound <= out.objective + 1e-12);
    }

    #[test]
    fn knapsack_with_item_three_fixed_out() {
        let fixed = fix_binaries(&knapsack(), &BTreeMap::from([(2, false)])).unwrap();
        let out = solve_milp(&fixed, &MilpOptions::default()).unwrap();
        assert!((out.objective + 16.0).abs() < 1e-9);
    }

    #[test]
    fn empty_assignment_leaves_model_unchanged() {
        let m = knapsack();
        assert_eq!(fix_binaries(&m, &BTreeMap::new()).unwrap(), m);
    }

    #[test]
    fn fixing_a_continuous_variable_is_rejected() {
        let mut m = knapsack();
        let y = m.add_continuous("y", 0.0, 1.0, 0.0).unwrap();
        assert_eq!(fix_binaries(&m, &BTreeMap::from([(y, true)])), Err(MilpError::NotBinary(y)));
        assert_eq!(fix_binaries(&m, &BTreeMap::from([(99, true)])), Err(MilpError::NotBinary(99)));
    }

    #[test]
    fn duplicate_names_are_rejected() {
        let mut m = MilpModel::new();
        m.add_continuous("a", 0.0, 1.0, 0.0).unwrap();
        assert_eq!(m.add_binary("a", 0.0), Err(MilpError::DuplicateName("a".into())));
        assert_eq!(m.n_vars(), 1);
    }

    #[test]
    fn infeasible_milp() {
        let mut m = MilpModel::new();
        let a = m.add_binary("a", 1.0).unwrap();
        let b = m.add_binary("b", 1.0).unwrap();
        m.add_constraint(&[(a, 1.0), (b, 1.0)], Relation::Ge, 1.5).unwrap();
        m.add_constraint(&[(a, 1.0), (b, -1.0)], Relation::Eq, 0.5).unwrap();
        let out = solve_milp(&m, &MilpOptions::default()).unwrap();
        assert_eq!(out.status, MilpStatus::Infeasible);
        assert!(out.solution.is_none());
    }

    #[test]
    fn node_limit_without_incumbent() {
        // Parity constraint: LP optimum is fractional and rounding fails.
        let mut m = MilpModel::new();
        let xs: Vec<usize> = (0..6).map(|i| m.add_binary(format!("x{i}"), -1.0 - 0.01 * i as f64).unwrap()).collect();
        let terms: Vec<(usize, f64)> = xs.iter().map(|&j| (j, 2.0)).collect();
        m.add_constraint(&terms, Relation::Le, 7.0).unwrap();
        let opts = MilpOptions { node_limit: Some(1), ..MilpOptions::default() };
        let out = solve_milp(&m, &opts).unwrap();
        assert!(matches!(out.status, MilpStatus::NodeLimit | MilpStatus::GapLimit));
        let full = solve_milp(&m, &MilpOptions::default()).unwrap();
        assert_eq!(full.status, MilpStatus::Optimal);
        assert!((full.objective + 3.12).abs() < 1e-9, "{}", full.objective);
    }

    #[test]
    fn lp_format_dump_lists_sections() {
        let mut m = knapsack();
        m.add_continuous("flow[1,2]", f64::NEG_INFINITY, f64::INFINITY, 0.5).unwrap();
        let text = m.to_lp_format();
        assert!(text.contains("Minimize"));
        assert!(text.contains(" - 6 item1 - 10 item2 - 12 item3 + 0.5 flow_1_2_"));
        assert!(text.contains("c0: 1 item1 + 2 item2 + 3 item3 <= 5"));
        assert!(text.contains("flow_1_2_ free"));
        assert!(text.contains("Binaries\n item1\n item2\n item3\n"));
        assert!(text.ends_with("End\n"));
    }
}
