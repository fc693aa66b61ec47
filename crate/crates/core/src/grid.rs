//! DC power-flow day-ahead/intra-day scheduling problem with storage.
//!
//! First stage: conventional generator set points `P_G[i,t]` and day-ahead
//! trade `P_fl[t]`. Second stage, per renewable scenario: regulation,
//! renewable deviations, intra-day trade, storage operation with charge and
//! discharge indicator binaries, and DC line flows.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::io::Read;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lp::{Constraint, Relation};
use crate::milp::{MilpError, MilpModel};
use crate::two_stage::{
    second_stage_model, AffineDependent, PolytopeSpec, SeparableQuadratic, TwoStageError, TwoStageProblem,
};

pub const CASE5_SYNTHETIC: &str = include_str!("../data/case5_synthetic.json");
pub const TINY3: &str = include_str!("../data/tiny3.json");
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum GridError {
    #[error("instance json: {0}")]
    Json(String),
    #[error("invalid instance: {0}")]
    Invalid(String),
    #[error("profile csv: {0}")]
    Profile(String),
}

fn invalid(msg: impl Into<String>) -> GridError {
    GridError::Invalid(msg.into())
}

/// A per-period parameter given either as one value for every period or as a series.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PerPeriod {
    Scalar(f64),
    Series(Vec<f64>),
}

impl PerPeriod {
    pub fn at(&self, t: usize) -> f64 {
        match self {
            PerPeriod::Scalar(v) => *v,
            PerPeriod::Series(s) => s[t],
        }
    }

    fn check(&self, name: &str, periods: usize) -> Result<(), GridError> {
        match self {
            PerPeriod::Scalar(v) if !v.is_finite() => Err(invalid(format!("{name} is not finite"))),
            PerPeriod::Series(s) if s.len() != periods => {
                Err(invalid(format!("{name} has {} entries, horizon is {periods}", s.len())))
            }
            PerPeriod::Series(s) if s.iter().any(|v| !v.is_finite()) => {
                Err(invalid(format!("{name} contains a non-finite entry")))
            }
            _ => Ok(()),
        }
    }

    fn truncate(&mut self, periods: usize) {
        if let PerPeriod::Series(s) = self {
            s.truncate(periods);
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Bus {
    pub id: u32,
    /// Base demand in MW, scaled per period by `profiles.delta_d`.
    pub demand: f64,
    #[serde(default)]
    pub slack: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Line {
    pub from: u32,
    pub to: u32,
    /// Per-unit reactance.
    pub reactance: f64,
    /// Thermal limit in MW.
    pub s_max: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Generator {
    pub bus: u32,
    pub p_min: PerPeriod,
    pub p_max: PerPeriod,
    /// $/MW²h
    pub c2: f64,
    /// $/MWh
    pub c1: f64,
    /// $ per period
    #[serde(default)]
    pub c0: f64,
    /// Upper bound of upward regulation; defaults to `p_max - p_min`.
    #[serde(default)]
    pub reg_up_max: Option<PerPeriod>,
    /// Lower bound of downward regulation (non-positive); defaults to `p_min - p_max`.
    #[serde(default)]
    pub reg_down_min: Option<PerPeriod>,
    pub r_up: PerPeriod,
    /// Multiplies the non-positive downward regulation, so it must be non-positive.
    pub r_down: PerPeriod,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DgUnit {
    pub bus: u32,
    pub p_min: f64,
    /// Nameplate bound used in the forecast formula.
    pub p_max: f64,
    /// Technical limit: scenarios are clipped into `[0, p_plus]`.
    pub p_plus: PerPeriod,
    pub f_up: f64,
    /// Multiplies the non-positive downward deviation, so it must be non-positive.
    pub f_down: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Storage {
    pub bus: u32,
    /// MWh
    pub capacity: f64,
    pub soc_min: PerPeriod,
    pub soc_max: PerPeriod,
    /// Defaults to the midpoint of the first period's soc bounds.
    #[serde(default)]
    pub soc_init: Option<f64>,
    pub p_ch_min: PerPeriod,
    pub p_ch_max: PerPeriod,
    pub p_dch_min: PerPeriod,
    pub p_dch_max: PerPeriod,
}

impl Storage {
    pub fn initial_soc(&self) -> f64 {
        self.soc_init.unwrap_or(0.5 * (self.soc_min.at(0) + self.soc_max.at(0)))
    }
}

fn one() -> f64 {
    1.0
}

fn schema_version() -> u32 {
    SCHEMA_VERSION
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Horizon {
    pub periods: usize,
    /// Period length in hours.
    #[serde(default = "one")]
    pub dt: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Profiles {
    pub delta_d: Vec<f64>,
    pub delta_dg: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Prices {
    /// Day-ahead price, $/MWh.
    pub p_fl: Vec<f64>,
    /// Intra-day price, $/MWh.
    pub p_sl: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridInstance {
    #[serde(default = "schema_version")]
    pub version: u32,
    #[serde(default)]
    pub name: String,
    pub buses: Vec<Bus>,
    pub lines: Vec<Line>,
    pub generators: Vec<Generator>,
    pub dg_units: Vec<DgUnit>,
    pub storages: Vec<Storage>,
    pub horizon: Horizon,
    pub profiles: Profiles,
    pub prices: Prices,
}

pub fn parse_instance(text: &str) -> Result<GridInstance, GridError> {
    let inst: GridInstance = serde_json::from_str(text).map_err(|e| GridError::Json(e.to_string()))?;
    inst.validate()?;
    Ok(inst)
}

impl GridInstance {
    pub fn periods(&self) -> usize {
        self.horizon.periods
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("instance serializes")
    }

    pub fn slack_bus(&self) -> u32 {
        self.buses.iter().find(|b| b.slack).map(|b| b.id).expect("validated instance has a slack bus")
    }

    pub fn bus_position(&self, id: u32) -> Option<usize> {
        self.buses.iter().position(|b| b.id == id)
    }

    pub fn validate(&self) -> Result<(), GridError> {
        if self.version != SCHEMA_VERSION {
            return Err(invalid(format!("unsupported schema version {}", self.version)));
        }
        let t = self.horizon.periods;
        if t == 0 {
            return Err(invalid("horizon must have at least one period"));
        }
        if !(self.horizon.dt > 0.0 && self.horizon.dt.is_finite()) {
            return Err(invalid("period length must be positive"));
        }
        for (name, series) in [
            ("profiles.delta_d", &self.profiles.delta_d),
            ("profiles.delta_dg", &self.profiles.delta_dg),
            ("prices.p_fl", &self.prices.p_fl),
            ("prices.p_sl", &self.prices.p_sl),
        ] {
            if series.len() != t {
                return Err(invalid(format!("{name} has {} entries, horizon is {t}", series.len())));
            }
            if series.iter().any(|v| !v.is_finite()) {
                return Err(invalid(format!("{name} contains a non-finite entry")));
            }
        }
        if self.profiles.delta_dg.iter().any(|v| *v < 0.0) {
            return Err(invalid("profiles.delta_dg must be non-negative"));
        }

        let mut ids = BTreeSet::new();
        for b in &self.buses {
            if !ids.insert(b.id) {
                return Err(invalid(format!("duplicate bus id {}", b.id)));
            }
            if !b.demand.is_finite() {
                return Err(invalid(format!("bus {} demand is not finite", b.id)));
            }
        }
        match self.buses.iter().filter(|b| b.slack).count() {
            1 => {}
            n => return Err(invalid(format!("exactly one slack bus required, found {n}"))),
        }
        let known = |id: u32, what: &str| -> Result<(), GridError> {
            if ids.contains(&id) {
                Ok(())
            } else {
                Err(invalid(format!("{what} refers to unknown bus {id}")))
            }
        };
        for (k, l) in self.lines.iter().enumerate() {
            known(l.from, &format!("line {k}"))?;
            known(l.to, &format!("line {k}"))?;
            if l.from == l.to {
                return Err(invalid(format!("line {k} is a self-loop")));
            }
            if !(l.reactance > 0.0 && l.reactance.is_finite()) {
                return Err(invalid(format!("line {k} reactance must be positive, got {}", l.reactance)));
            }
            if !(l.s_max >= 0.0) {
                return Err(invalid(format!("line {k} thermal limit must be non-negative")));
            }
        }
        self.check_connected()?;

        for (i, g) in self.generators.iter().enumerate() {
            let n = |f: &str| format!("generator {i} {f}");
            known(g.bus, &n("bus"))?;
            for (f, p) in [("p_min", &g.p_min), ("p_max", &g.p_max), ("r_up", &g.r_up), ("r_down", &g.r_down)] {
                p.check(&n(f), t)?;
            }
            for (f, p) in [("reg_up_max", &g.reg_up_max), ("reg_down_min", &g.reg_down_min)] {
                if let Some(p) = p {
                    p.check(&n(f), t)?;
                }
            }
            if ![g.c2, g.c1, g.c0].iter().all(|v| v.is_finite()) || g.c2 < 0.0 {
                return Err(invalid(n("cost must be finite with c2 >= 0")));
            }
            for s in 0..t {
                if g.p_min.at(s) > g.p_max.at(s) {
                    return Err(invalid(n(&format!("p_min exceeds p_max in period {s}"))));
                }
                if self.reg_up_max(i, s) < 0.0 || self.reg_down_min(i, s) > 0.0 {
                    return Err(invalid(n("regulation bounds must bracket zero")));
                }
                if g.r_down.at(s) > 0.0 {
                    return Err(invalid(n("r_down must be non-positive")));
                }
            }
        }
        for (i, d) in self.dg_units.iter().enumerate() {
            let n = |f: &str| format!("dg unit {i} {f}");
            known(d.bus, &n("bus"))?;
            d.p_plus.check(&n("p_plus"), t)?;
            if ![d.p_min, d.p_max, d.f_up, d.f_down].iter().all(|v| v.is_finite()) {
                return Err(invalid(n("parameters must be finite")));
            }
            if d.p_min > d.p_max {
                return Err(invalid(n("p_min exceeds p_max")));
            }
            if d.f_down > 0.0 {
                return Err(invalid(n("f_down must be non-positive")));
            }
            if (0..t).any(|s| d.p_plus.at(s) < 0.0) {
                return Err(invalid(n("p_plus must be non-negative")));
            }
        }
        for (i, s) in self.storages.iter().enumerate() {
            let n = |f: &str| format!("storage {i} {f}");
            known(s.bus, &n("bus"))?;
            for (f, p) in [
                ("soc_min", &s.soc_min),
                ("soc_max", &s.soc_max),
                ("p_ch_min", &s.p_ch_min),
                ("p_ch_max", &s.p_ch_max),
                ("p_dch_min", &s.p_dch_min),
                ("p_dch_max", &s.p_dch_max),
            ] {
                p.check(&n(f), t)?;
            }
            if !(s.capacity > 0.0 && s.capacity.is_finite()) {
                return Err(invalid(n("capacity must be positive")));
            }
            let init = s.initial_soc();
            if !(s.soc_min.at(0) <= init && init <= s.soc_max.at(0)) {
                return Err(invalid(n("soc_init must lie within the soc bounds")));
            }
            for p in 0..t {
                if s.soc_min.at(p) > s.soc_max.at(p) {
                    return Err(invalid(n(&format!("soc_min exceeds soc_max in period {p}"))));
                }
                let ch = (s.p_ch_min.at(p), s.p_ch_max.at(p));
                let dch = (s.p_dch_min.at(p), s.p_dch_max.at(p));
                if ch.0 < 0.0 || ch.0 > ch.1 || dch.0 < 0.0 || dch.0 > dch.1 {
                    return Err(invalid(n(&format!("charge bounds inconsistent in period {p}"))));
                }
            }
        }
        Ok(())
    }

    fn check_connected(&self) -> Result<(), GridError> {
        let mut adj: BTreeMap<u32, Vec<u32>> = self.buses.iter().map(|b| (b.id, Vec::new())).collect();
        for l in &self.lines {
            adj.get_mut(&l.from).unwrap().push(l.to);
            adj.get_mut(&l.to).unwrap().push(l.from);
        }
        let start = self.slack_bus();
        let mut seen = BTreeSet::from([start]);
        let mut queue = VecDeque::from([start]);
        while let Some(b) = queue.pop_front() {
            for &n in &adj[&b] {
                if seen.insert(n) {
                    queue.push_back(n);
                }
            }
        }
        if seen.len() != self.buses.len() {
            let missing: Vec<u32> = adj.keys().filter(|b| !seen.contains(b)).copied().collect();
            return Err(invalid(format!("buses {missing:?} are not connected to the slack bus")));
        }
        Ok(())
    }

    pub fn reg_up_max(&self, gen: usize, t: usize) -> f64 {
        let g = &self.generators[gen];
        g.reg_up_max.as_ref().map_or(g.p_max.at(t) - g.p_min.at(t), |p| p.at(t))
    }

    pub fn reg_down_min(&self, gen: usize, t: usize) -> f64 {
        let g = &self.generators[gen];
        g.reg_down_min.as_ref().map_or(g.p_min.at(t) - g.p_max.at(t), |p| p.at(t))
    }

    /// `P_d[k,t] = demand_k · delta_d[t]`.
    pub fn demand(&self, bus: usize, t: usize) -> f64 {
        self.buses[bus].demand * self.profiles.delta_d[t]
    }

    pub fn total_demand(&self, t: usize) -> f64 {
        (0..self.buses.len()).map(|k| self.demand(k, t)).sum()
    }

    /// `min((p_min + p_max)/2 · delta_dg[t], p_plus[t])` per unit, unit-major.
    pub fn forecast(&self) -> Vec<f64> {
        let t = self.periods();
        let mut out = Vec::with_capacity(self.dg_units.len() * t);
        for d in &self.dg_units {
            for s in 0..t {
                out.push((0.5 * (d.p_min + d.p_max) * self.profiles.delta_dg[s]).min(d.p_plus.at(s)));
            }
        }
        out
    }

    /// Keeps the first `periods` periods of every series.
    pub fn truncated(&self, periods: usize) -> Result<GridInstance, GridError> {
        if periods == 0 || periods > self.periods() {
            return Err(invalid(format!("cannot truncate a {}-period horizon to {periods}", self.periods())));
        }
        let mut inst = self.clone();
        inst.horizon.periods = periods;
        inst.profiles.delta_d.truncate(periods);
        inst.profiles.delta_dg.truncate(periods);
        inst.prices.p_fl.truncate(periods);
        inst.prices.p_sl.truncate(periods);
        for g in &mut inst.generators {
            for p in [&mut g.p_min, &mut g.p_max, &mut g.r_up, &mut g.r_down] {
                p.truncate(periods);
            }
            for p in [&mut g.reg_up_max, &mut g.reg_down_min].into_iter().flatten() {
                p.truncate(periods);
            }
        }
        for d in &mut inst.dg_units {
            d.p_plus.truncate(periods);
        }
        for s in &mut inst.storages {
            for p in [
                &mut s.soc_min,
                &mut s.soc_max,
                &mut s.p_ch_min,
                &mut s.p_ch_max,
                &mut s.p_dch_min,
                &mut s.p_dch_max,
            ] {
                p.truncate(periods);
            }
        }
        inst.validate()?;
        Ok(inst)
    }

    /// Replaces profiles and prices from a CSV with columns
    /// `t, delta_d, delta_dg, p_fl, p_sl`, one row per period in order.
    pub fn merge_profile_csv(&mut self, input: impl Read) -> Result<(), GridError> {
        #[derive(Deserialize)]
        struct Row {
            t: usize,
            delta_d: f64,
            delta_dg: f64,
            p_fl: f64,
            p_sl: f64,
        }
        let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
        let headers = reader.headers().map_err(|e| GridError::Profile(e.to_string()))?.clone();
        let expected = ["t", "delta_d", "delta_dg", "p_fl", "p_sl"];
        if headers.iter().ne(expected) {
            return Err(GridError::Profile(format!("expected columns {expected:?}, found {headers:?}")));
        }
        let rows: Vec<Row> = reader
            .deserialize()
            .collect::<Result<_, _>>()
            .map_err(|e| GridError::Profile(e.to_string()))?;
        if rows.len() != self.periods() {
            return Err(GridError::Profile(format!(
                "{} rows for a {}-period horizon",
                rows.len(),
                self.periods()
            )));
        }
        let first = rows[0].t;
        if first > 1 || rows.iter().enumerate().any(|(k, r)| r.t != first + k) {
            return Err(GridError::Profile("column t must count periods consecutively from 0 or 1".into()));
        }
        self.profiles.delta_d = rows.iter().map(|r| r.delta_d).collect();
        self.profiles.delta_dg = rows.iter().map(|r| r.delta_dg).collect();
        self.prices.p_fl = rows.iter().map(|r| r.p_fl).collect();
        self.prices.p_sl = rows.iter().map(|r| r.p_sl).collect();
        self.validate()
    }
}

/// Renewable capacities `P_DG,max[i,t]`, unit-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Scenario(pub Vec<f64>);

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct GridOptions {
    /// Only bound flows from above instead of `|p| <= s_max`.
    pub literal_thermal: bool,
}

/// Column indices of one recourse block, `[unit][t]`.
#[derive(Clone, Debug, PartialEq)]
pub struct RecourseLayout {
    pub pg_reg: Vec<Vec<usize>>,
    pub pg_up: Vec<Vec<usize>>,
    pub pg_down: Vec<Vec<usize>>,
    pub p_dg: Vec<Vec<usize>>,
    pub p_dg_up: Vec<Vec<usize>>,
    pub p_dg_down: Vec<Vec<usize>>,
    pub p_sl: Vec<usize>,
    pub p_ch: Vec<Vec<usize>>,
    pub p_dch: Vec<Vec<usize>>,
    pub soc: Vec<Vec<usize>>,
    pub mu_ch: Vec<Vec<usize>>,
    pub mu_dch: Vec<Vec<usize>>,
    pub flow: Vec<Vec<usize>>,
    pub theta: Vec<Vec<usize>>,
}

/// Recourse decisions in instance units, `[unit][t]`.
#[derive(Clone, Debug, PartialEq)]
pub struct SecondStageSolution {
    pub pg_reg: Vec<Vec<f64>>,
    pub pg_up: Vec<Vec<f64>>,
    pub pg_down: Vec<Vec<f64>>,
    pub p_dg: Vec<Vec<f64>>,
    pub p_dg_up: Vec<Vec<f64>>,
    pub p_dg_down: Vec<Vec<f64>>,
    pub p_sl: Vec<f64>,
    pub p_ch: Vec<Vec<f64>>,
    pub p_dch: Vec<Vec<f64>>,
    pub soc: Vec<Vec<f64>>,
    pub mu_ch: Vec<Vec<f64>>,
    pub mu_dch: Vec<Vec<f64>>,
    pub flow: Vec<Vec<f64>>,
    pub theta: Vec<Vec<f64>>,
}

impl RecourseLayout {
    pub fn extract(&self, x: &[f64]) -> SecondStageSolution {
        let m = |cols: &Vec<Vec<usize>>| -> Vec<Vec<f64>> {
            cols.iter().map(|r| r.iter().map(|&j| x[j]).collect()).collect()
        };
        SecondStageSolution {
            pg_reg: m(&self.pg_reg),
            pg_up: m(&self.pg_up),
            pg_down: m(&self.pg_down),
            p_dg: m(&self.p_dg),
            p_dg_up: m(&self.p_dg_up),
            p_dg_down: m(&self.p_dg_down),
            p_sl: self.p_sl.iter().map(|&j| x[j]).collect(),
            p_ch: m(&self.p_ch),
            p_dch: m(&self.p_dch),
            soc: m(&self.soc),
            mu_ch: m(&self.mu_ch),
            mu_dch: m(&self.mu_dch),
            flow: m(&self.flow),
            theta: m(&self.theta),
        }
    }
}

/// A validated instance with its first-stage polytope and cost.
#[derive(Clone, Debug)]
pub struct GridProblem {
    pub instance: GridInstance,
    pub options: GridOptions,
    forecast: Vec<f64>,
    polytope: PolytopeSpec,
    cost: SeparableQuadratic,
}

impl GridProblem {
    pub fn new(instance: GridInstance, options: GridOptions) -> Result<Self, GridError> {
        instance.validate()?;
        let forecast = instance.forecast();
        let polytope = first_stage_polytope(&instance, &forecast);
        let cost = first_stage_cost(&instance);
        Ok(Self { instance, options, forecast, polytope, cost })
    }

    pub fn forecast(&self) -> &[f64] {
        &self.forecast
    }

    fn t(&self) -> usize {
        self.instance.periods()
    }

    pub fn pg_index(&self, gen: usize, t: usize) -> usize {
        gen * self.t() + t
    }

    pub fn pfl_index(&self, t: usize) -> usize {
        self.instance.generators.len() * self.t() + t
    }

    /// Recourse MILP for a fixed first stage, with the layout of its columns.
    pub fn build_second_stage(
        &self,
        x: &[f64],
        scenario: &Scenario,
    ) -> Result<(MilpModel, RecourseLayout), TwoStageError> {
        let model = second_stage_model(self, x, scenario)?;
        let layout = self.layout_of(&model, "");
        Ok((model, layout))
    }

    fn layout_of(&self, model: &MilpModel, prefix: &str) -> RecourseLayout {
        let t = self.t();
        let col = |name: &str, i: usize, s: usize| -> usize {
            model.index_of(&format!("{prefix}{name}[{i},{s}]")).expect("recourse column exists")
        };
        let grid = |name: &str, n: usize| -> Vec<Vec<usize>> {
            (0..n).map(|i| (0..t).map(|s| col(name, i, s)).collect()).collect()
        };
        let inst = &self.instance;
        RecourseLayout {
            pg_reg: grid("P_G_reg", inst.generators.len()),
            pg_up: grid("P_G_up", inst.generators.len()),
            pg_down: grid("P_G_down", inst.generators.len()),
            p_dg: grid("P_DG", inst.dg_units.len()),
            p_dg_up: grid("P_DG_up", inst.dg_units.len()),
            p_dg_down: grid("P_DG_down", inst.dg_units.len()),
            p_sl: (0..t).map(|s| model.index_of(&format!("{prefix}P_sl[{s}]")).expect("P_sl exists")).collect(),
            p_ch: grid("P_ch", inst.storages.len()),
            p_dch: grid("P_dch", inst.storages.len()),
            soc: grid("soc", inst.storages.len()),
            mu_ch: grid("mu_ch", inst.storages.len()),
            mu_dch: grid("mu_dch", inst.storages.len()),
            flow: grid("p", inst.lines.len()),
            theta: grid("theta", inst.buses.len()),
        }
    }

    /// Nodal balance residuals `[bus][t]`, recomputed from instance data.
    pub fn nodal_residuals(&self, sol: &SecondStageSolution) -> Vec<Vec<f64>> {
        let inst = &self.instance;
        let slack = inst.slack_bus();
        (0..inst.buses.len())
            .map(|k| {
                let id = inst.buses[k].id;
                (0..self.t())
                    .map(|t| {
                        let mut out = 0.0;
                        for (l, line) in inst.lines.iter().enumerate() {
                            if line.from == id {
                                out += sol.flow[l][t];
                            }
                            if line.to == id {
                                out -= sol.flow[l][t];
                            }
                        }
                        let mut inj = -inst.demand(k, t);
                        for (i, g) in inst.generators.iter().enumerate() {
                            if g.bus == id {
                                inj += sol.pg_reg[i][t];
                            }
                        }
                        for (i, d) in inst.dg_units.iter().enumerate() {
                            if d.bus == id {
                                inj += sol.p_dg[i][t];
                            }
                        }
                        for (i, s) in inst.storages.iter().enumerate() {
                            if s.bus == id {
                                inj += sol.p_dch[i][t] - sol.p_ch[i][t];
                            }
                        }
                        if id == slack {
                            inj += sol.p_sl[t];
                        }
                        out - inj
                    })
                    .collect()
            })
            .collect()
    }

    /// Recourse objective recomputed from a solution and the first stage.
    pub fn recourse_cost(&self, x: &[f64], sol: &SecondStageSolution) -> f64 {
        let inst = &self.instance;
        let mut total = 0.0;
        for t in 0..self.t() {
            for (i, g) in inst.generators.iter().enumerate() {
                total += g.r_up.at(t) * sol.pg_up[i][t] + g.r_down.at(t) * sol.pg_down[i][t];
            }
            total += inst.prices.p_sl[t] * (sol.p_sl[t] - x[self.pfl_index(t)]);
            for (i, d) in inst.dg_units.iter().enumerate() {
                total += d.f_up * sol.p_dg_up[i][t] + d.f_down * sol.p_dg_down[i][t];
            }
        }
        total
    }
}

/// `P_fl[t] = Σ_k P_d[k,t] - Σ_i P_G[i,t] - Σ_i P_DG,forecast[i,t]` with the
/// generator box; `P_fl` gets the box implied by that identity.
fn first_stage_polytope(inst: &GridInstance, forecast: &[f64]) -> PolytopeSpec {
    let t = inst.periods();
    let ng = inst.generators.len();
    let mut names = Vec::with_capacity(ng * t + t);
    let mut lower = Vec::with_capacity(ng * t + t);
    let mut upper = Vec::with_capacity(ng * t + t);
    for (i, g) in inst.generators.iter().enumerate() {
        for s in 0..t {
            names.push(format!("P_G[{i},{s}]"));
            lower.push(g.p_min.at(s));
            upper.push(g.p_max.at(s));
        }
    }
    let mut rows = Vec::with_capacity(t);
    let mut row_names = Vec::with_capacity(t);
    let mut dependents = Vec::with_capacity(t);
    for s in 0..t {
        let net = inst.total_demand(s) - (0..inst.dg_units.len()).map(|i| forecast[i * t + s]).sum::<f64>();
        let gmin: f64 = inst.generators.iter().map(|g| g.p_min.at(s)).sum();
        let gmax: f64 = inst.generators.iter().map(|g| g.p_max.at(s)).sum();
        let idx = ng * t + s;
        names.push(format!("P_fl[{s}]"));
        lower.push(net - gmax);
        upper.push(net - gmin);
        let mut terms = vec![(idx, 1.0)];
        terms.extend((0..ng).map(|i| (i * t + s, 1.0)));
        rows.push(Constraint { terms, relation: Relation::Eq, rhs: net });
        row_names.push(format!("market_clearing[{s}]"));
        dependents.push(AffineDependent {
            index: idx,
            constant: net,
            terms: (0..ng).map(|i| (i * t + s, -1.0)).collect(),
        });
    }
    PolytopeSpec { names, lower, upper, rows, row_names, dependents }
}

/// Generator costs on the `P_G` coordinates, day-ahead price on `P_fl`.
fn first_stage_cost(inst: &GridInstance) -> SeparableQuadratic {
    let t = inst.periods();
    let mut quad = Vec::new();
    let mut lin = Vec::new();
    let mut constant = 0.0;
    for g in &inst.generators {
        quad.extend(std::iter::repeat_n(g.c2, t));
        lin.extend(std::iter::repeat_n(g.c1, t));
        constant += g.c0 * t as f64;
    }
    quad.extend(std::iter::repeat_n(0.0, t));
    lin.extend(inst.prices.p_fl.iter().copied());
    SeparableQuadratic { quad, lin, constant }
}

impl TwoStageProblem for GridProblem {
    type Scenario = Scenario;

    fn polytope(&self) -> &PolytopeSpec {
        &self.polytope
    }

    fn first_stage_cost(&self) -> &SeparableQuadratic {
        &self.cost
    }

    fn add_recourse(
        &self,
        model: &mut MilpModel,
        x_vars: &[usize],
        scenario: &Scenario,
        w: f64,
        prefix: &str,
    ) -> Result<(), MilpError> {
        let inst = &self.instance;
        let t_len = self.t();
        let dt = inst.horizon.dt;
        let name = |n: &str, i: usize, t: usize| format!("{prefix}{n}[{i},{t}]");
        let slack = inst.slack_bus();
        let mut prev_soc: Vec<Option<usize>> = vec![None; inst.storages.len()];
        for t in 0..t_len {
            let p_sl_price = inst.prices.p_sl[t];
            let pfl = x_vars[self.pfl_index(t)];
            let cur = model.lp().objective()[pfl];
            model.set_cost(pfl, cur - w * p_sl_price);
            let p_sl = model.add_continuous(format!("{prefix}P_sl[{t}]"), f64::NEG_INFINITY, f64::INFINITY, w * p_sl_price)?;
            // Intra-day market clearing: P_sl - P_fl + Σ deviations + Σ (P_dch - P_ch) = 0.
            let mut clearing = vec![(p_sl, 1.0), (pfl, -1.0)];
            let mut injections: Vec<Vec<(usize, f64)>> = vec![Vec::new(); inst.buses.len()];
            let bus_of = |id: u32| inst.bus_position(id).expect("validated bus");

            for (i, g) in inst.generators.iter().enumerate() {
                let reg = model.add_continuous(name("P_G_reg", i, t), g.p_min.at(t), g.p_max.at(t), 0.0)?;
                let up = model.add_continuous(name("P_G_up", i, t), 0.0, inst.reg_up_max(i, t), w * g.r_up.at(t))?;
                let down =
                    model.add_continuous(name("P_G_down", i, t), inst.reg_down_min(i, t), 0.0, w * g.r_down.at(t))?;
                let pg = x_vars[self.pg_index(i, t)];
                model.add_constraint(&[(reg, 1.0), (pg, -1.0), (up, -1.0), (down, -1.0)], Relation::Eq, 0.0)?;
                clearing.push((up, 1.0));
                clearing.push((down, 1.0));
                injections[bus_of(g.bus)].push((reg, 1.0));
            }
            for (i, d) in inst.dg_units.iter().enumerate() {
                let cap = scenario.0[i * t_len + t];
                let (lo, hi) = if cap >= d.p_min { (d.p_min, cap) } else { (d.p_min, d.p_min) };
                let p = model.add_continuous(name("P_DG", i, t), lo, hi, 0.0)?;
                if cap < d.p_min {
                    // The capacity falls below the minimum output: keep the row so
                    // the recourse problem is reported infeasible.
                    model.add_constraint(&[(p, 1.0)], Relation::Le, cap)?;
                }
                let up = model.add_continuous(name("P_DG_up", i, t), 0.0, f64::INFINITY, w * d.f_up)?;
                let down = model.add_continuous(name("P_DG_down", i, t), f64::NEG_INFINITY, 0.0, w * d.f_down)?;
                model.add_constraint(&[(p, 1.0), (up, -1.0), (down, -1.0)], Relation::Eq, self.forecast[i * t_len + t])?;
                clearing.push((up, 1.0));
                clearing.push((down, 1.0));
                injections[bus_of(d.bus)].push((p, 1.0));
            }
            for (i, s) in inst.storages.iter().enumerate() {
                let ch = model.add_continuous(name("P_ch", i, t), 0.0, s.p_ch_max.at(t), 0.0)?;
                let dch = model.add_continuous(name("P_dch", i, t), 0.0, s.p_dch_max.at(t), 0.0)?;
                let soc = model.add_continuous(name("soc", i, t), s.soc_min.at(t), s.soc_max.at(t), 0.0)?;
                let mu_ch = model.add_binary(name("mu_ch", i, t), 0.0)?;
                let mu_dch = model.add_binary(name("mu_dch", i, t), 0.0)?;
                let k = dt / s.capacity;
                match prev_soc[i] {
                    Some(prev) => model.add_constraint(
                        &[(soc, 1.0), (prev, -1.0), (ch, -k), (dch, k)],
                        Relation::Eq,
                        0.0,
                    )?,
                    None => model.add_constraint(&[(soc, 1.0), (ch, -k), (dch, k)], Relation::Eq, s.initial_soc())?,
                };
                prev_soc[i] = Some(soc);
                model.add_constraint(&[(ch, 1.0), (mu_ch, -s.p_ch_min.at(t))], Relation::Ge, 0.0)?;
                model.add_constraint(&[(ch, 1.0), (mu_ch, -s.p_ch_max.at(t))], Relation::Le, 0.0)?;
                model.add_constraint(&[(dch, 1.0), (mu_dch, -s.p_dch_min.at(t))], Relation::Ge, 0.0)?;
                model.add_constraint(&[(dch, 1.0), (mu_dch, -s.p_dch_max.at(t))], Relation::Le, 0.0)?;
                model.add_constraint(&[(mu_ch, 1.0), (mu_dch, 1.0)], Relation::Le, 1.0)?;
                clearing.push((dch, 1.0));
                clearing.push((ch, -1.0));
                injections[bus_of(s.bus)].push((dch, 1.0));
                injections[bus_of(s.bus)].push((ch, -1.0));
            }
            model.add_constraint(&clearing, Relation::Eq, 0.0)?;

            let theta: Vec<usize> = inst
                .buses
                .iter()
                .enumerate()
                .map(|(k, b)| {
                    let (lo, hi) = if b.id == slack { (0.0, 0.0) } else { (f64::NEG_INFINITY, f64::INFINITY) };
                    model.add_continuous(name("theta", k, t), lo, hi, 0.0)
                })
                .collect::<Result<_, _>>()?;
            let mut outflow: Vec<Vec<(usize, f64)>> = vec![Vec::new(); inst.buses.len()];
            for (l, line) in inst.lines.iter().enumerate() {
                let lo = if self.options.literal_thermal { f64::NEG_INFINITY } else { -line.s_max };
                let p = model.add_continuous(name("p", l, t), lo, line.s_max, 0.0)?;
                let (a, b) = (bus_of(line.from), bus_of(line.to));
                // p = (θ_a - θ_b) / x, scaled by the reactance.
                model.add_constraint(
                    &[(p, line.reactance), (theta[a], -1.0), (theta[b], 1.0)],
                    Relation::Eq,
                    0.0,
                )?;
                outflow[a].push((p, 1.0));
                outflow[b].push((p, -1.0));
            }
            for (k, bus) in inst.buses.iter().enumerate() {
                let mut terms = outflow[k].clone();
                terms.extend(injections[k].iter().map(|&(j, a)| (j, -a)));
                if bus.id == slack {
                    terms.push((p_sl, -1.0));
                }
                model.add_constraint(&terms, Relation::Eq, -inst.demand(k, t))?;
            }
        }
        Ok(())
    }

    fn sample_scenarios(&self, m: usize, seed: u64) -> Result<Vec<Scenario>, TwoStageError> {
        sample_scenarios(&self.instance, &self.forecast, m, seed)
    }
}

/// Draws `m` scenarios: each entry from `N(forecast, 0.1·forecast)`, clipped into `[0, p_plus]`.
pub fn sample_scenarios(
    inst: &GridInstance,
    forecast: &[f64],
    m: usize,
    seed: u64,
) -> Result<Vec<Scenario>, TwoStageError> {
    if m == 0 {
        return Err(TwoStageError::NoScenarios);
    }
    let t = inst.periods();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(m);
    for _ in 0..m {
        let mut xi = Vec::with_capacity(forecast.len());
        for (i, d) in inst.dg_units.iter().enumerate() {
            for s in 0..t {
                let f = forecast[i * t + s];
                let cap = d.p_plus.at(s);
                let raw = if f == 0.0 {
                    0.0
                } else {
                    Normal::new(f, 0.1 * f.abs()).expect("finite forecast").sample(&mut rng)
                };
                xi.push(clip_capacity(raw, cap));
            }
        }
        out.push(Scenario(xi));
    }
    Ok(out)
}

/// Three-case truncation of a raw capacity draw into `[0, cap]`.
pub fn clip_capacity(raw: f64, cap: f64) -> f64 {
    if raw <= 0.0 {
        0.0
    } else if raw >= cap {
        cap
    } else {
        raw
    }
}
