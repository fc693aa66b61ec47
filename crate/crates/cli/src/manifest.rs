//! JSON record of one `run` invocation: what was run, on which instance
//! bytes, where the artifacts went and how it ended.

use std::path::Path;

use serde::{Deserialize, Serialize};
use surro2sp_core::alternating::{RunConfig, RunError, RunResult};

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct InstanceInfo {
    pub path: String,
    /// Hex SHA-256 of the instance file as read.
    pub sha256: String,
    pub name: String,
    pub periods: usize,
    pub literal_thermal: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ConfigEcho {
    pub iterations: usize,
    pub batch: usize,
    pub alpha: f64,
    pub initial_samples: usize,
    pub scenarios: usize,
    pub hidden: Vec<usize>,
    pub seed: u64,
    pub initial_epochs: usize,
    pub retrain_epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub fresh_retrain: bool,
    pub pwl_segments: usize,
    pub master_gap_tol: f64,
    pub penalty: Option<f64>,
    pub stabilize: bool,
}

impl ConfigEcho {
    fn of(cfg: &RunConfig) -> Self {
        Self {
            iterations: cfg.iterations,
            batch: cfg.batch,
            alpha: cfg.alpha,
            initial_samples: cfg.initial_samples,
            scenarios: cfg.scenarios,
            hidden: cfg.hidden.clone(),
            seed: cfg.seed,
            initial_epochs: cfg.initial_train.epochs,
            retrain_epochs: cfg.retrain.epochs,
            batch_size: cfg.initial_train.batch_size,
            learning_rate: cfg.initial_train.learning_rate,
            fresh_retrain: cfg.fresh_retrain,
            pwl_segments: cfg.pwl_segments,
            master_gap_tol: cfg.master.gap_tol,
            penalty: cfg.eval.penalty,
            stabilize: cfg.encode.stabilize,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunSummary {
    pub mode: String,
    pub files: Vec<String>,
    pub iterations: usize,
    pub final_x: Option<Vec<f64>>,
    pub final_master_obj: Option<f64>,
    pub final_sampled_obj: Option<f64>,
    pub final_gap: Option<f64>,
    /// Iteration with the lowest sampled objective.
    pub best_iteration: Option<usize>,
    pub best_sampled_obj: Option<f64>,
}

impl RunSummary {
    pub fn of(mode: &str, r: &RunResult, files: Vec<String>) -> Self {
        let last = r.records.last();
        let best = r.best();
        Self {
            mode: mode.into(),
            files,
            iterations: r.records.len(),
            final_x: r.final_x.clone(),
            final_master_obj: last.map(|l| l.master_obj),
            final_sampled_obj: last.map(|l| l.sampled_obj),
            final_gap: last.map(|l| l.gap),
            best_iteration: best.map(|b| b.iteration),
            best_sampled_obj: best.map(|b| b.sampled_obj),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub args: Vec<String>,
    pub instance: InstanceInfo,
    pub config: ConfigEcho,
    pub out_dir: String,
    pub started_at: String,
    pub finished_at: Option<String>,
    pub status: String,
    pub scenario_seed: Option<u64>,
    pub runs: Vec<RunSummary>,
    pub error: Option<String>,
    pub failed_run: Option<String>,
    pub failed_iteration: Option<usize>,
}

fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

impl Manifest {
    pub fn start(instance: InstanceInfo, cfg: &RunConfig, out: &Path) -> Self {
        Self {
            tool: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            args: std::env::args().collect(),
            instance,
            config: ConfigEcho::of(cfg),
            out_dir: out.display().to_string(),
            started_at: now(),
            finished_at: None,
            status: "running".into(),
            scenario_seed: None,
            runs: Vec::new(),
            error: None,
            failed_run: None,
            failed_iteration: None,
        }
    }

    pub fn fail(&mut self, run: Option<&str>, e: &RunError) {
        self.status = "failed".into();
        self.error = Some(e.to_string());
        self.failed_run = run.map(str::to_string);
        self.failed_iteration = e.iteration();
    }

    pub fn finish(&mut self) {
        if self.status == "running" {
            self.status = "ok".into();
        }
        self.finished_at = Some(now());
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }
}
