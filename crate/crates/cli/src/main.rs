use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;
use sha2::{Digest, Sha256};

use surro2sp_core::alternating::{
    prepare, run_prepared, stream_seed, write_run_csv, RunConfig, RunError, RunResult, Sampler,
};
use surro2sp_core::encoder::PwlCost;
use surro2sp_core::grid::{parse_instance, GridInstance, GridOptions, GridProblem, CASE5_SYNTHETIC, TINY3};
use surro2sp_core::milp::{solve_milp, MilpOptions, MilpStatus};
use surro2sp_core::neural::TrainConfig;
use surro2sp_core::two_stage::{
    build_deterministic_equivalent, expected_value, scenario_values, EvalOptions, TwoStageProblem,
};

mod manifest;

use manifest::{InstanceInfo, Manifest, RunSummary};

/// Largest `scenarios × binaries per scenario` solved without `--force`.
const DETEQUIV_GUARD: usize = 200;

#[derive(Parser, Debug)]
#[command(name = "surro2sp", version, about = "Neural-surrogate solver for two-stage grid scheduling")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run the alternating algorithm, the uniform baseline, or both.
    Run(RunArgs),
    /// Print G(x) + Q̂(x) for a first-stage vector.
    Eval(EvalArgs),
    /// Solve the deterministic equivalent and check its decomposition.
    Detequiv(DetequivArgs),
    /// Write a bundled instance, optionally shortened or with merged profiles.
    GenInstance(GenArgs),
}

#[derive(Args, Debug)]
struct InstanceArgs {
    #[arg(long)]
    instance: PathBuf,
    /// Keep only the first T periods.
    #[arg(long)]
    horizon: Option<usize>,
    /// Bound line flows only from above.
    #[arg(long)]
    literal_thermal: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    threads: Option<usize>,
    /// Recourse value used when a scenario is infeasible; abort if unset.
    #[arg(long)]
    penalty: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Mode {
    Alt,
    Base,
    Both,
}

#[derive(Args, Debug)]
struct RunArgs {
    #[command(flatten)]
    common: InstanceArgs,
    #[arg(long, value_enum, default_value_t = Mode::Both)]
    mode: Mode,
    #[arg(long, default_value_t = 100, value_parser = clap::value_parser!(u64).range(1..))]
    iters: u64,
    #[arg(long, default_value_t = 50, value_parser = clap::value_parser!(u64).range(1..))]
    batch: u64,
    #[arg(long, default_value_t = 0.99, value_parser = unit_interval)]
    alpha: f64,
    #[arg(long, default_value_t = 3000, value_parser = clap::value_parser!(u64).range(1..))]
    init_samples: u64,
    #[arg(long, default_value_t = 400, value_parser = clap::value_parser!(u64).range(1..))]
    scenarios: u64,
    /// Hidden layer widths, comma separated.
    #[arg(long, default_value = "40,40", value_parser = widths)]
    nn: Widths,
    /// Relative optimality gap of the master MILP.
    #[arg(long, default_value_t = 1e-6, value_parser = non_negative)]
    gap_tol: f64,
    #[arg(long, default_value_t = 16, value_parser = clap::value_parser!(u64).range(1..))]
    pwl_segments: u64,
    #[arg(long, default_value_t = 500, value_parser = clap::value_parser!(u64).range(1..))]
    epochs: u64,
    #[arg(long, default_value_t = 200, value_parser = clap::value_parser!(u64).range(1..))]
    retrain_epochs: u64,
    /// Retrain from a fresh initialization each iteration.
    #[arg(long)]
    fresh_retrain: bool,
    /// Write the timing columns as 0 so that logs are byte-reproducible.
    #[arg(long)]
    zero_timings: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[command(flatten)]
    common: InstanceArgs,
    /// JSON array, or a file holding an array or an object with an "x" field.
    #[arg(long)]
    x: String,
    #[arg(long, default_value_t = 400, value_parser = clap::value_parser!(u64).range(1..))]
    scenarios: u64,
}

#[derive(Args, Debug)]
struct DetequivArgs {
    #[command(flatten)]
    common: InstanceArgs,
    #[arg(long, default_value_t = 3, value_parser = clap::value_parser!(u64).range(1..))]
    scenarios: u64,
    #[arg(long, default_value_t = 16, value_parser = clap::value_parser!(u64).range(1..))]
    pwl_segments: u64,
    /// Solve even when the model exceeds the size guard.
    #[arg(long)]
    force: bool,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Bundled {
    Case5,
    Tiny3,
}

#[derive(Args, Debug)]
struct GenArgs {
    #[arg(long, value_enum, default_value_t = Bundled::Case5)]
    base: Bundled,
    #[arg(long)]
    horizon: Option<usize>,
    /// CSV with columns t, delta_d, delta_dg, p_fl, p_sl.
    #[arg(long)]
    profiles: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Debug)]
struct Widths(Vec<usize>);

fn widths(s: &str) -> Result<Widths, String> {
    let w = s
        .split(',')
        .map(|p| p.trim().parse::<usize>().map_err(|e| format!("{p:?}: {e}")))
        .collect::<Result<Vec<_>, _>>()?;
    if w.is_empty() || w.contains(&0) {
        return Err("widths must be positive".into());
    }
    Ok(Widths(w))
}

fn unit_interval(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if (0.0..=1.0).contains(&v) {
        Ok(v)
    } else {
        Err(format!("{v} is outside [0, 1]"))
    }
}

fn non_negative(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if v >= 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(format!("{v} must be a finite non-negative number"))
    }
}

/// Failure classes with distinct exit codes.
#[derive(Debug)]
enum Failure {
    Usage(String),
    Solver(anyhow::Error),
    Other(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Other(e)
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("SURRO2SP_LOG", "warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Detequiv(a) => cmd_detequiv(a),
        Command::GenInstance(a) => cmd_gen(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Solver(e)) | Err(Failure::Other(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

struct Loaded {
    problem: GridProblem,
    info: InstanceInfo,
}

fn load(args: &InstanceArgs) -> Result<Loaded, Failure> {
    if let Some(n) = args.threads {
        if n == 0 {
            return Err(Failure::Usage("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the worker pool")?;
    }
    if let Some(p) = args.penalty {
        if !p.is_finite() {
            return Err(Failure::Usage("--penalty must be finite".into()));
        }
    }
    let bytes = fs::read(&args.instance)
        .map_err(|e| Failure::Usage(format!("cannot read {}: {e}", args.instance.display())))?;
    let sha256 = hex::encode(Sha256::digest(&bytes));
    let text = String::from_utf8(bytes).map_err(|_| Failure::Usage("instance is not UTF-8".into()))?;
    let mut inst = parse_instance(&text).map_err(|e| Failure::Usage(format!("{}: {e}", args.instance.display())))?;
    if let Some(t) = args.horizon {
        inst = inst.truncated(t).map_err(|e| Failure::Usage(format!("--horizon: {e}")))?;
    }
    let info = InstanceInfo {
        path: args.instance.display().to_string(),
        sha256,
        name: inst.name.clone(),
        periods: inst.periods(),
        literal_thermal: args.literal_thermal,
    };
    let problem = GridProblem::new(inst, GridOptions { literal_thermal: args.literal_thermal })
        .map_err(|e| Failure::Usage(e.to_string()))?;
    Ok(Loaded { problem, info })
}

fn eval_options(args: &InstanceArgs) -> EvalOptions {
    EvalOptions { penalty: args.penalty, ..EvalOptions::default() }
}

fn run_config(a: &RunArgs) -> RunConfig {
    RunConfig {
        iterations: a.iters as usize,
        batch: a.batch as usize,
        alpha: a.alpha,
        initial_samples: a.init_samples as usize,
        scenarios: a.scenarios as usize,
        hidden: a.nn.0.clone(),
        seed: a.common.seed,
        initial_train: TrainConfig { epochs: a.epochs as usize, ..TrainConfig::default() },
        retrain: TrainConfig { epochs: a.retrain_epochs as usize, warm_start: true, ..TrainConfig::default() },
        fresh_retrain: a.fresh_retrain,
        pwl_segments: a.pwl_segments as usize,
        master: MilpOptions { gap_tol: a.gap_tol, ..MilpOptions::default() },
        eval: eval_options(&a.common),
        ..RunConfig::default()
    }
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> anyhow::Result<()> {
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn cmd_run(a: RunArgs) -> Result<(), Failure> {
    let loaded = load(&a.common)?;
    let cfg = run_config(&a);
    cfg.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let mut manifest = Manifest::start(loaded.info, &cfg, &a.out);
    let manifest_path = a.out.join("manifest.json");

    let plan: Vec<(&str, Sampler)> = match a.mode {
        Mode::Alt => vec![("alt", Sampler::Around)],
        Mode::Base => vec![("base", Sampler::Uniform)],
        Mode::Both => vec![("alt", Sampler::Around), ("base", Sampler::Uniform)],
    };
    let outcome = (|| -> Result<(), (Option<&str>, RunError)> {
        let prepared = prepare(&loaded.problem, &cfg).map_err(|e| (None, e))?;
        manifest.scenario_seed = Some(prepared.scenario_seed);
        for &(label, sampler) in &plan {
            let result = run_prepared(&loaded.problem, &cfg, &prepared, sampler).map_err(|e| (Some(label), e))?;
            let files = save_run(&a.out, label, &result, !a.zero_timings).map_err(|e| (Some(label), RunError::Log(format!("{e:#}"))))?;
            manifest.runs.push(RunSummary::of(label, &result, files));
        }
        Ok(())
    })();
    let failure = outcome.err().map(|(label, e)| {
        manifest.fail(label, &e);
        e
    });
    manifest.finish();
    write(&manifest_path, manifest.to_json())?;
    match failure {
        None => {
            for r in &manifest.runs {
                println!("{}: final gap {} after {} iterations", r.mode, r.final_gap.unwrap_or(0.0), r.iterations);
            }
            Ok(())
        }
        Some(e) => Err(Failure::Solver(anyhow!(e))),
    }
}

/// Writes the log CSV, network and final first-stage vector of one run.
fn save_run(out: &Path, label: &str, result: &RunResult, timings: bool) -> anyhow::Result<Vec<String>> {
    let csv_path = out.join(format!("{label}.csv"));
    let mut buf = Vec::new();
    write_run_csv(&result.records, timings, &mut buf)?;
    write(&csv_path, buf)?;
    let net_path = out.join(format!("{label}_network.json"));
    write(&net_path, result.surrogate.to_json())?;
    let mut files = vec![csv_path, net_path];
    if let Some(x) = &result.final_x {
        let x_path = out.join(format!("{label}_final_x.json"));
        write(&x_path, serde_json::to_string(x)?)?;
        files.push(x_path);
    }
    Ok(files.iter().map(|p| p.display().to_string()).collect())
}

fn parse_x(arg: &str) -> Result<Vec<f64>, Failure> {
    let text = if arg.trim_start().starts_with('[') {
        arg.to_string()
    } else {
        fs::read_to_string(arg).map_err(|e| Failure::Usage(format!("--x: cannot read {arg}: {e}")))?
    };
    let value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| Failure::Usage(format!("--x: {e}")))?;
    let arr = match &value {
        serde_json::Value::Object(o) => o.get("x").cloned().unwrap_or(serde_json::Value::Null),
        v => v.clone(),
    };
    serde_json::from_value(arr).map_err(|e| Failure::Usage(format!("--x: expected an array of numbers ({e})")))
}

fn cmd_eval(a: EvalArgs) -> Result<(), Failure> {
    let loaded = load(&a.common)?;
    let p = &loaded.problem;
    let x = parse_x(&a.x)?;
    p.polytope().check(&x, 1e-7).map_err(|e| Failure::Usage(format!("--x is not in X: {e}")))?;
    let seed = stream_seed(a.common.seed, "scenarios");
    let scenarios = p.sample_scenarios(a.scenarios as usize, seed).context("sampling scenarios")?;
    let opts = eval_options(&a.common);
    let g = p.first_stage_cost().evaluate(&x);
    let q_hat = expected_value(p, &x, &scenarios, &opts).map_err(|e| Failure::Solver(e.into()))?;
    let doc = json!({
        "sampled_obj": g + q_hat,
        "first_stage_cost": g,
        "expected_recourse": q_hat,
        "scenarios": scenarios.len(),
        "scenario_seed": seed,
        "instance_sha256": loaded.info.sha256,
    });
    println!("{}", serde_json::to_string_pretty(&doc).expect("serializable"));
    Ok(())
}

fn cmd_detequiv(a: DetequivArgs) -> Result<(), Failure> {
    let loaded = load(&a.common)?;
    let p = &loaded.problem;
    let inst = &p.instance;
    let m = a.scenarios as usize;
    let per_scenario = 2 * inst.storages.len() * inst.periods();
    if m * per_scenario > DETEQUIV_GUARD {
        let msg = format!(
            "deterministic equivalent has {} binaries ({m} scenarios x {per_scenario}), above the guard of {DETEQUIV_GUARD}; pass --force to solve anyway",
            m * per_scenario
        );
        if !a.force {
            return Err(Failure::Usage(msg));
        }
        log::warn!("{msg}");
    }
    let seed = stream_seed(a.common.seed, "scenarios");
    let scenarios = p.sample_scenarios(m, seed).context("sampling scenarios")?;
    let poly = p.polytope();
    let pwl = PwlCost::from_quadratic(p.first_stage_cost(), &poly.lower, &poly.upper, a.pwl_segments as usize)
        .context("linearizing the first-stage cost")?;
    let de = build_deterministic_equivalent(p, &scenarios, &pwl).context("building the model")?;
    let opts = MilpOptions { gap_tol: 1e-9, ..MilpOptions::default() };
    let out = solve_milp(&de.model, &opts).map_err(|e| Failure::Solver(e.into()))?;
    if out.status != MilpStatus::Optimal {
        return Err(Failure::Solver(anyhow!("deterministic equivalent ended with status {:?}", out.status)));
    }
    let x = de.first_stage(out.solution.as_ref().expect("optimal solution"));
    let eval = EvalOptions { milp: opts, penalty: a.common.penalty };
    let values = scenario_values(p, &x, &scenarios, &eval).map_err(|e| Failure::Solver(e.into()))?;
    let q_hat = values.iter().sum::<f64>() / values.len() as f64;
    let pwl_g = pwl.evaluate(&x);
    let doc = json!({
        "objective": out.objective,
        "x": x,
        "pwl_first_stage_cost": pwl_g,
        "expected_recourse": q_hat,
        "scenario_values": values,
        "decomposed": pwl_g + q_hat,
        "residual": (out.objective - pwl_g - q_hat).abs(),
        "binaries": de.model.n_binaries(),
        "nodes": out.nodes,
        "scenario_seed": seed,
    });
    println!("{}", serde_json::to_string_pretty(&doc).expect("serializable"));
    Ok(())
}

fn cmd_gen(a: GenArgs) -> Result<(), Failure> {
    let text = match a.base {
        Bundled::Case5 => CASE5_SYNTHETIC,
        Bundled::Tiny3 => TINY3,
    };
    let mut inst: GridInstance = parse_instance(text).context("bundled instance")?;
    if let Some(path) = &a.profiles {
        let f = fs::File::open(path).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
        inst.merge_profile_csv(f).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
    }
    if let Some(t) = a.horizon {
        inst = inst.truncated(t).map_err(|e| Failure::Usage(format!("--horizon: {e}")))?;
    }
    write(&a.out, inst.to_json())?;
    Ok(())
}
