//! The alternating loop: solve the MILP master over the current surrogate,
//! sample new first-stage points around its optimum, label them with the
//! sampled recourse cost, retrain, repeat. The baseline swaps the sampler for
//! uniform draws over the whole first-stage polytope.

use std::io::{Read, Write};
use std::time::Instant;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::encoder::{build_master, propagate_bounds_on, tighten_bounds, EncodeOptions, EncoderError, PwlCost};
use crate::milp::MilpOptions;
use crate::neural::{fit_scaler, train, Dataset, NeuralError, ReluNetwork, Surrogate, TrainConfig};
use crate::two_stage::{
    expected_value, label_dataset, EvalOptions, PolytopeSpec, TwoStageError, TwoStageProblem,
};

#[derive(Debug, Error)]
pub enum RunError {
    #[error("invalid run configuration: {0}")]
    Config(String),
    #[error("iteration {iteration}: {source}")]
    Iteration {
        iteration: usize,
        #[source]
        source: Box<RunError>,
    },
    #[error(transparent)]
    TwoStage(#[from] TwoStageError),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Neural(#[from] NeuralError),
    #[error("run log: {0}")]
    Log(String),
}

impl RunError {
    /// Iteration at which the run aborted, if it got past initial training.
    pub fn iteration(&self) -> Option<usize> {
        match self {
            RunError::Iteration { iteration, .. } => Some(*iteration),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub iterations: usize,
    /// Points labeled and added per iteration.
    pub batch: usize,
    pub alpha: f64,
    pub initial_samples: usize,
    pub scenarios: usize,
    pub hidden: Vec<usize>,
    pub seed: u64,
    pub initial_train: TrainConfig,
    pub retrain: TrainConfig,
    /// Retrain from a fresh initialization instead of the previous network.
    pub fresh_retrain: bool,
    pub pwl_segments: usize,
    pub master: MilpOptions,
    pub eval: EvalOptions,
    pub encode: EncodeOptions,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            iterations: 100,
            batch: 50,
            alpha: 0.99,
            initial_samples: 3000,
            scenarios: 400,
            hidden: vec![40, 40],
            seed: 0,
            initial_train: TrainConfig { epochs: 500, ..TrainConfig::default() },
            retrain: TrainConfig { epochs: 200, warm_start: true, ..TrainConfig::default() },
            fresh_retrain: false,
            pwl_segments: 16,
            master: MilpOptions::default(),
            eval: EvalOptions::default(),
            encode: EncodeOptions::default(),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), RunError> {
        let bad = |m: &str| Err(RunError::Config(m.into()));
        if !(0.0..=1.0).contains(&self.alpha) {
            return bad("alpha must lie in [0, 1]");
        }
        if self.batch == 0 || self.initial_samples == 0 || self.scenarios == 0 {
            return bad("batch, initial sample count and scenario count must be at least 1");
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return bad("hidden layer widths must be positive");
        }
        if self.pwl_segments == 0 {
            return bad("pwl segment count must be at least 1");
        }
        Ok(())
    }
}

fn fnv1a(name: &str) -> u64 {
    name.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3))
}

/// Independent generator for a named purpose under one root seed.
pub fn stream(root: u64, name: &str) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(root);
    rng.set_stream(fnv1a(name));
    rng
}

pub fn stream_seed(root: u64, name: &str) -> u64 {
    stream(root, name).next_u64()
}

/// `count` points `α·x* + (1−α)·u` with `u` uniform over the polytope.
pub fn resample_around(
    x_star: &[f64],
    polytope: &PolytopeSpec,
    alpha: f64,
    count: usize,
    rng: &mut impl rand::Rng,
) -> Result<Vec<Vec<f64>>, TwoStageError> {
    if x_star.len() != polytope.dim() {
        return Err(TwoStageError::Dimension { expected: polytope.dim(), got: x_star.len() });
    }
    let free = polytope.free_indices();
    let mut points = polytope.sample_uniform(count, rng)?;
    for x in &mut points {
        for &j in &free {
            let v = alpha * x_star[j] + (1.0 - alpha) * x[j];
            // Clamping only absorbs rounding: the combination is in the box.
            x[j] = v.clamp(polytope.lower[j], polytope.upper[j]);
        }
        polytope.complete(x);
    }
    Ok(points)
}

pub fn sample_uniform(
    polytope: &PolytopeSpec,
    count: usize,
    rng: &mut impl rand::Rng,
) -> Result<Vec<Vec<f64>>, TwoStageError> {
    polytope.sample_uniform(count, rng)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Sampler {
    /// Resample around the current master optimum.
    Around,
    Uniform,
}

#[derive(Clone, Debug, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    pub x: Vec<f64>,
    /// `G(x*) + NN(x*)` with exact `G`.
    pub master_obj: f64,
    /// `G(x*) + Q̂(x*)`.
    pub sampled_obj: f64,
    pub gap: f64,
    pub n_points: usize,
    pub t_master_ms: f64,
    pub t_label_ms: f64,
    pub t_train_ms: f64,
    pub train_loss: f64,
    /// Optimal value of the master MILP, `PWL(G)(x*) + NN(x*)`.
    pub milp_obj: f64,
    /// `PWL(G)(x*) − G(x*)`.
    pub pwl_error: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunResult {
    pub records: Vec<IterationRecord>,
    pub final_x: Option<Vec<f64>>,
    pub surrogate: Surrogate,
    pub config: RunConfig,
    pub sampler: Sampler,
    pub scenario_seed: u64,
}

impl RunResult {
    pub fn final_gap(&self) -> Option<f64> {
        self.records.last().map(|r| r.gap)
    }

    /// Iterate with the lowest sampled objective.
    pub fn best(&self) -> Option<&IterationRecord> {
        self.records.iter().min_by(|a, b| a.sampled_obj.total_cmp(&b.sampled_obj))
    }
}

/// Scenarios and the labeled initial dataset, shared by paired runs.
#[derive(Clone, Debug)]
pub struct Prepared<S> {
    pub scenarios: Vec<S>,
    pub scenario_seed: u64,
    pub initial: Dataset,
}

pub fn prepare<P: TwoStageProblem>(problem: &P, cfg: &RunConfig) -> Result<Prepared<P::Scenario>, RunError> {
    cfg.validate()?;
    let scenario_seed = stream_seed(cfg.seed, "scenarios");
    let scenarios = problem.sample_scenarios(cfg.scenarios, scenario_seed)?;
    let xs = sample_uniform(problem.polytope(), cfg.initial_samples, &mut stream(cfg.seed, "initial"))?;
    let t = Instant::now();
    let initial = label_dataset(problem, &xs, &scenarios, &cfg.eval)?;
    log::info!("labeled {} initial points in {:.1} s", xs.len(), t.elapsed().as_secs_f64());
    Ok(Prepared { scenarios, scenario_seed, initial })
}

pub fn run_alternating<P: TwoStageProblem>(problem: &P, cfg: &RunConfig) -> Result<RunResult, RunError> {
    let prepared = prepare(problem, cfg)?;
    run_prepared(problem, cfg, &prepared, Sampler::Around)
}

pub fn run_baseline<P: TwoStageProblem>(problem: &P, cfg: &RunConfig) -> Result<RunResult, RunError> {
    let prepared = prepare(problem, cfg)?;
    run_prepared(problem, cfg, &prepared, Sampler::Uniform)
}

fn ms(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

pub fn run_prepared<P: TwoStageProblem>(
    problem: &P,
    cfg: &RunConfig,
    prepared: &Prepared<P::Scenario>,
    sampler: Sampler,
) -> Result<RunResult, RunError> {
    cfg.validate()?;
    let poly = problem.polytope();
    let g = problem.first_stage_cost();
    let pwl = PwlCost::from_quadratic(g, &poly.lower, &poly.upper, cfg.pwl_segments)?;
    let scenarios = &prepared.scenarios;

    let mut data = prepared.initial.clone();
    let scaler = fit_scaler(&data)?;
    let init = ReluNetwork::he_uniform(poly.dim(), &cfg.hidden, &mut stream(cfg.seed, "nn-init"));
    let train_cfg = TrainConfig { seed: stream_seed(cfg.seed, "train-0"), warm_start: true, ..cfg.initial_train };
    let t = Instant::now();
    let (mut net, history) = train(&init, &data, &scaler, &train_cfg)?;
    log::info!(
        "initial training: {} epochs, loss {:.4e} -> {:.4e} in {:.1} s",
        history.len(),
        history[0],
        history[history.len() - 1],
        t.elapsed().as_secs_f64()
    );

    let mut records = Vec::with_capacity(cfg.iterations);
    for k in 1..=cfg.iterations {
        let wrap = |e: RunError| RunError::Iteration { iteration: k, source: Box::new(e) };
        let surrogate = Surrogate { net: net.clone(), scaler: scaler.clone() };
        let folded = surrogate.folded();

        let t = Instant::now();
        let bounds = propagate_bounds_on(&folded, poly).and_then(|b| tighten_bounds(&folded, poly, &b)).map_err(|e| wrap(e.into()))?;
        let master = build_master(&folded, &bounds, poly, &pwl, cfg.encode).map_err(|e| wrap(e.into()))?;
        let hint = records.last().map(|r: &IterationRecord| r.x.as_slice());
        let sol = master.solve_from(&cfg.master, hint).map_err(|e| wrap(e.into()))?;
        let t_master_ms = ms(t);
        let x_star = sol.x;
        let g_exact = g.evaluate(&x_star);
        let q_hat = expected_value(problem, &x_star, scenarios, &cfg.eval).map_err(|e| wrap(e.into()))?;

        let t = Instant::now();
        let mut rng = stream(cfg.seed, &format!("batch-{k}"));
        let xs = match sampler {
            Sampler::Around => resample_around(&x_star, poly, cfg.alpha, cfg.batch, &mut rng),
            Sampler::Uniform => sample_uniform(poly, cfg.batch, &mut rng),
        }
        .map_err(|e| wrap(e.into()))?;
        let labeled = label_dataset(problem, &xs, scenarios, &cfg.eval).map_err(|e| wrap(e.into()))?;
        data.extend(&labeled).map_err(|e| wrap(e.into()))?;
        let t_label_ms = ms(t);

        let t = Instant::now();
        let retrain = TrainConfig {
            seed: stream_seed(cfg.seed, &format!("train-{k}")),
            warm_start: !cfg.fresh_retrain,
            ..cfg.retrain
        };
        let (next, history) = train(&net, &data, &scaler, &retrain).map_err(|e| wrap(e.into()))?;
        net = next;
        let t_train_ms = ms(t);

        let master_obj = g_exact + sol.nn_value;
        let sampled_obj = g_exact + q_hat;
        let record = IterationRecord {
            iteration: k,
            x: x_star,
            master_obj,
            sampled_obj,
            gap: (master_obj - sampled_obj).abs(),
            n_points: data.len(),
            t_master_ms,
            t_label_ms,
            t_train_ms,
            train_loss: history[history.len() - 1],
            milp_obj: sol.objective,
            pwl_error: sol.pwl_value - g_exact,
        };
        log::info!(
            "iter {k}: master {:.2} sampled {:.2} gap {:.2} ({} binaries, {} nodes, {:.0} ms)",
            record.master_obj,
            record.sampled_obj,
            record.gap,
            master.n_binaries(),
            sol.outcome.nodes,
            t_master_ms
        );
        records.push(record);
    }
    Ok(RunResult {
        final_x: records.last().map(|r| r.x.clone()),
        records,
        surrogate: Surrogate { net, scaler },
        config: cfg.clone(),
        sampler,
        scenario_seed: prepared.scenario_seed,
    })
}

pub const LOG_COLUMNS: [&str; 9] = [
    "iter",
    "master_obj",
    "sampled_obj",
    "gap",
    "n_points",
    "t_master_ms",
    "t_label_ms",
    "t_train_ms",
    "train_loss",
];

/// Writes one row per record. With `timings` off the three wall-time
/// columns are written as 0 so the file depends only on the inputs.
pub fn write_run_csv(records: &[IterationRecord], timings: bool, out: impl Write) -> Result<(), RunError> {
    let err = |e: csv::Error| RunError::Log(e.to_string());
    let mut w = csv::Writer::from_writer(out);
    w.write_record(LOG_COLUMNS).map_err(err)?;
    let time = |v: f64| if timings { format!("{v:.3}") } else { "0".to_string() };
    for r in records {
        w.write_record([
            r.iteration.to_string(),
            r.master_obj.to_string(),
            r.sampled_obj.to_string(),
            r.gap.to_string(),
            r.n_points.to_string(),
            time(r.t_master_ms),
            time(r.t_label_ms),
            time(r.t_train_ms),
            r.train_loss.to_string(),
        ])
        .map_err(err)?;
    }
    w.flush().map_err(|e| RunError::Log(e.to_string()))
}

/// The logged columns of one CSV row.
#[derive(Clone, Debug, PartialEq, serde::Deserialize)]
pub struct LogRow {
    pub iter: usize,
    pub master_obj: f64,
    pub sampled_obj: f64,
    pub gap: f64,
    pub n_points: usize,
    pub t_master_ms: f64,
    pub t_label_ms: f64,
    pub t_train_ms: f64,
    pub train_loss: f64,
}

pub fn read_run_csv(input: impl Read) -> Result<Vec<LogRow>, RunError> {
    let mut r = csv::Reader::from_reader(input);
    let headers = r.headers().map_err(|e| RunError::Log(e.to_string()))?.clone();
    if headers.iter().ne(LOG_COLUMNS) {
        return Err(RunError::Log(format!("unexpected columns {headers:?}")));
    }
    r.deserialize().collect::<Result<_, _>>().map_err(|e| RunError::Log(e.to_string()))
}
