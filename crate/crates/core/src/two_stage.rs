//! Generic two-stage stochastic program plumbing: the first-stage polytope,
//! the separable quadratic first-stage cost, the recourse value `Q(x, ξ)`,
//! its sample average, dataset labeling and the deterministic equivalent.

use std::fmt;
use std::io::{Read, Write};

use thiserror::Error;

use crate::encoder::PwlCost;
use crate::lp::Constraint;
use crate::milp::{
    solve_milp_warm, MilpError, MilpModel, MilpOptions, MilpStatus, WarmStart,
};
use crate::neural::{Dataset, NeuralError};
use crate::parallel;

#[derive(Debug, Error)]
pub enum TwoStageError {
    #[error(transparent)]
    Milp(#[from] MilpError),
    #[error("recourse problem infeasible for scenario {scenario} at x = {x:?}")]
    RecourseInfeasible { x: Vec<f64>, scenario: usize, detail: String },
    #[error("solver stopped without a recourse solution for scenario {scenario} ({status:?})")]
    SolverLimit { scenario: usize, status: MilpStatus },
    #[error("scenario set is empty")]
    NoScenarios,
    #[error("first-stage vector has dimension {got}, expected {expected}")]
    Dimension { expected: usize, got: usize },
    #[error("first-stage point violates {0}")]
    Infeasible(String),
    #[error("polytope cannot be sampled: {0}")]
    Unsampleable(String),
    #[error(transparent)]
    Neural(#[from] NeuralError),
    #[error(transparent)]
    Encoder(#[from] crate::encoder::EncoderError),
    #[error("csv: {0}")]
    Csv(String),
}

impl From<csv::Error> for TwoStageError {
    fn from(e: csv::Error) -> Self {
        TwoStageError::Csv(e.to_string())
    }
}

/// A coordinate fixed by the others: `x[index] = constant + Σ coef · x[j]`.
#[derive(Clone, Debug, PartialEq)]
pub struct AffineDependent {
    pub index: usize,
    pub constant: f64,
    pub terms: Vec<(usize, f64)>,
}

impl AffineDependent {
    pub fn value(&self, x: &[f64]) -> f64 {
        self.terms.iter().fold(self.constant, |acc, &(j, a)| acc + a * x[j])
    }
}

/// Feasible first-stage set: a finite box plus linear rows. When
/// `dependents` is non-empty, every coordinate not listed there is a free box
/// coordinate and the rows are exactly the dependent equalities.
#[derive(Clone, Debug, PartialEq)]
pub struct PolytopeSpec {
    pub names: Vec<String>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub rows: Vec<Constraint>,
    pub row_names: Vec<String>,
    pub dependents: Vec<AffineDependent>,
}

impl PolytopeSpec {
    pub fn dim(&self) -> usize {
        self.names.len()
    }

    pub fn free_indices(&self) -> Vec<usize> {
        let mut dep = vec![false; self.dim()];
        for d in &self.dependents {
            dep[d.index] = true;
        }
        (0..self.dim()).filter(|&j| !dep[j]).collect()
    }

    /// Fills the dependent coordinates of `x` from its free coordinates.
    pub fn complete(&self, x: &mut [f64]) {
        for d in &self.dependents {
            x[d.index] = d.value(x);
        }
    }

    /// Checks membership, naming the first violated bound or row.
    pub fn check(&self, x: &[f64], tol: f64) -> Result<(), TwoStageError> {
        if x.len() != self.dim() {
            return Err(TwoStageError::Dimension { expected: self.dim(), got: x.len() });
        }
        for (j, &v) in x.iter().enumerate() {
            let scale = 1.0 + self.lower[j].abs().max(self.upper[j].abs());
            if !v.is_finite() || v < self.lower[j] - tol * scale || v > self.upper[j] + tol * scale {
                return Err(TwoStageError::Infeasible(format!(
                    "bound {} <= {} <= {} (value {v})",
                    self.lower[j], self.names[j], self.upper[j]
                )));
            }
        }
        for (row, name) in self.rows.iter().zip(&self.row_names) {
            let scale = 1.0 + row.rhs.abs() + row.terms.iter().map(|&(j, a)| (a * x[j]).abs()).sum::<f64>();
            if row.violation(x) > tol * scale {
                return Err(TwoStageError::Infeasible(format!(
                    "{name}: activity {} {} {}",
                    row.activity(x),
                    row.relation,
                    row.rhs
                )));
            }
        }
        Ok(())
    }

    /// Adds the first-stage variables and rows to `model`; returns their indices.
    pub fn add_to_model(&self, model: &mut MilpModel) -> Result<Vec<usize>, MilpError> {
        let vars = (0..self.dim())
            .map(|j| model.add_continuous(self.names[j].clone(), self.lower[j], self.upper[j], 0.0))
            .collect::<Result<Vec<_>, _>>()?;
        for row in &self.rows {
            let terms: Vec<(usize, f64)> = row.terms.iter().map(|&(j, a)| (vars[j], a)).collect();
            model.add_constraint(&terms, row.relation, row.rhs)?;
        }
        Ok(vars)
    }

    fn check_sampleable(&self) -> Result<(), TwoStageError> {
        if self.dependents.len() != self.rows.len() {
            return Err(TwoStageError::Unsampleable(
                "rows other than affine definitions of dependent coordinates".into(),
            ));
        }
        let free = self.free_indices();
        let mut is_free = vec![false; self.dim()];
        for &j in &free {
            is_free[j] = true;
        }
        for d in &self.dependents {
            if d.terms.iter().any(|&(j, _)| !is_free[j]) {
                return Err(TwoStageError::Unsampleable("dependent defined through another dependent".into()));
            }
        }
        if free.iter().any(|&j| !(self.lower[j].is_finite() && self.upper[j].is_finite())) {
            return Err(TwoStageError::Unsampleable("infinite box".into()));
        }
        Ok(())
    }

    /// Uniform draws of the free box coordinates with dependents completed.
    pub fn sample_uniform(
        &self,
        count: usize,
        rng: &mut impl rand::Rng,
    ) -> Result<Vec<Vec<f64>>, TwoStageError> {
        self.check_sampleable()?;
        let free = self.free_indices();
        Ok((0..count)
            .map(|_| {
                let mut x = vec![0.0; self.dim()];
                for &j in &free {
                    x[j] = if self.lower[j] < self.upper[j] {
                        rng.random_range(self.lower[j]..=self.upper[j])
                    } else {
                        self.lower[j]
                    };
                }
                self.complete(&mut x);
                x
            })
            .collect())
    }
}

/// `Σ quad_j x_j² + Σ lin_j x_j + constant`.
#[derive(Clone, Debug, PartialEq)]
pub struct SeparableQuadratic {
    pub quad: Vec<f64>,
    pub lin: Vec<f64>,
    pub constant: f64,
}

impl SeparableQuadratic {
    pub fn evaluate(&self, x: &[f64]) -> f64 {
        let mut total = self.constant;
        for ((q, l), v) in self.quad.iter().zip(&self.lin).zip(x) {
            total += q * v * v + l * v;
        }
        total
    }
}

/// A two-stage problem whose recourse is a MILP in the first-stage vector.
pub trait TwoStageProblem: Sync {
    type Scenario: Clone + fmt::Debug + Send + Sync;

    fn polytope(&self) -> &PolytopeSpec;

    fn first_stage_cost(&self) -> &SeparableQuadratic;

    /// Appends one recourse block for `scenario` to `model`, coupled to the
    /// existing first-stage columns `x_vars`, with its objective scaled by `weight`.
    fn add_recourse(
        &self,
        model: &mut MilpModel,
        x_vars: &[usize],
        scenario: &Self::Scenario,
        weight: f64,
        prefix: &str,
    ) -> Result<(), MilpError>;

    /// Draws `m` scenarios from the stream seeded by `seed`.
    fn sample_scenarios(&self, m: usize, seed: u64) -> Result<Vec<Self::Scenario>, TwoStageError>;
}

/// Recourse model for a fixed `x`: the first-stage columns are pinned by their bounds.
pub fn second_stage_model<P: TwoStageProblem>(
    problem: &P,
    x: &[f64],
    scenario: &P::Scenario,
) -> Result<MilpModel, TwoStageError> {
    let poly = problem.polytope();
    if x.len() != poly.dim() {
        return Err(TwoStageError::Dimension { expected: poly.dim(), got: x.len() });
    }
    let mut model = MilpModel::new();
    let x_vars = poly
        .names
        .iter()
        .zip(x)
        .map(|(name, &v)| model.add_continuous(name.clone(), v, v, 0.0))
        .collect::<Result<Vec<_>, _>>()?;
    problem.add_recourse(&mut model, &x_vars, scenario, 1.0, "")?;
    Ok(model)
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct EvalOptions {
    pub milp: MilpOptions,
    /// Value substituted for an infeasible recourse problem; `None` aborts instead.
    pub penalty: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScenarioSet<S> {
    pub scenarios: Vec<S>,
    pub seed: u64,
}

impl<S> ScenarioSet<S> {
    pub fn len(&self) -> usize {
        self.scenarios.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scenarios.is_empty()
    }
}

fn value_with<P: TwoStageProblem>(
    problem: &P,
    x: &[f64],
    scenario: &P::Scenario,
    index: usize,
    opts: &EvalOptions,
    warm: &mut WarmStart,
) -> Result<f64, TwoStageError> {
    let model = second_stage_model(problem, x, scenario)?;
    let out = solve_milp_warm(&model, &opts.milp, None, warm)?;
    match out.status {
        MilpStatus::Optimal | MilpStatus::GapLimit => {
            if out.status == MilpStatus::GapLimit {
                log::warn!("scenario {index}: recourse stopped at relative gap {:.2e}", out.relative_gap());
            }
            Ok(out.objective)
        }
        MilpStatus::Infeasible => match opts.penalty {
            Some(p) => Ok(p),
            None => Err(TwoStageError::RecourseInfeasible {
                x: x.to_vec(),
                scenario: index,
                detail: format!("{scenario:?}"),
            }),
        },
        MilpStatus::NodeLimit => Err(TwoStageError::SolverLimit { scenario: index, status: out.status }),
    }
}

/// Optimal recourse cost `Q(x, ξ)`.
pub fn value<P: TwoStageProblem>(
    problem: &P,
    x: &[f64],
    scenario: &P::Scenario,
    opts: &EvalOptions,
) -> Result<f64, TwoStageError> {
    value_with(problem, x, scenario, 0, opts, &mut WarmStart::new())
}

/// `Q(x, ξ_j)` for every scenario, solved in index order along one warm-start chain.
pub fn scenario_values<P: TwoStageProblem>(
    problem: &P,
    x: &[f64],
    scenarios: &[P::Scenario],
    opts: &EvalOptions,
) -> Result<Vec<f64>, TwoStageError> {
    if scenarios.is_empty() {
        return Err(TwoStageError::NoScenarios);
    }
    let mut warm = WarmStart::new();
    scenarios
        .iter()
        .enumerate()
        .map(|(j, s)| value_with(problem, x, s, j, opts, &mut warm))
        .collect()
}

/// Sample average `Q̂(x) = (1/m) Σ_j Q(x, ξ_j)`, summed in scenario order.
pub fn expected_value<P: TwoStageProblem>(
    problem: &P,
    x: &[f64],
    scenarios: &[P::Scenario],
    opts: &EvalOptions,
) -> Result<f64, TwoStageError> {
    let values = scenario_values(problem, x, scenarios, opts)?;
    Ok(mean_in_order(&values))
}

pub fn mean_in_order(values: &[f64]) -> f64 {
    values.iter().fold(0.0, |acc, v| acc + v) / values.len() as f64
}

/// `G(x) + Q̂(x)` with the exact quadratic `G`.
pub fn sampled_objective<P: TwoStageProblem>(
    problem: &P,
    x: &[f64],
    scenarios: &[P::Scenario],
    opts: &EvalOptions,
) -> Result<f64, TwoStageError> {
    Ok(problem.first_stage_cost().evaluate(x) + expected_value(problem, x, scenarios, opts)?)
}

/// Labels every point with `Q̂(x)`. Points are distributed over the worker
/// pool; each point's scenarios are solved in order, so the result does not
/// depend on the number of workers.
pub fn label_dataset<P: TwoStageProblem>(
    problem: &P,
    xs: &[Vec<f64>],
    scenarios: &[P::Scenario],
    opts: &EvalOptions,
) -> Result<Dataset, TwoStageError> {
    let labels = parallel::try_map(xs, |x| expected_value(problem, x, scenarios, opts))?;
    to_dataset(problem.polytope().dim(), xs, labels)
}

/// Single-threaded reference for [`label_dataset`].
pub fn label_dataset_sequential<P: TwoStageProblem>(
    problem: &P,
    xs: &[Vec<f64>],
    scenarios: &[P::Scenario],
    opts: &EvalOptions,
) -> Result<Dataset, TwoStageError> {
    let labels = parallel::map_sequential(xs, |x| expected_value(problem, x, scenarios, opts))
        .into_iter()
        .collect::<Result<Vec<_>, _>>()?;
    to_dataset(problem.polytope().dim(), xs, labels)
}

fn to_dataset(dim: usize, xs: &[Vec<f64>], labels: Vec<f64>) -> Result<Dataset, TwoStageError> {
    let rows = xs.iter().cloned().zip(labels).collect();
    Ok(Dataset::from_rows(dim, rows)?)
}

#[derive(Clone, Debug)]
pub struct DeterministicEquivalent {
    pub model: MilpModel,
    pub x_vars: Vec<usize>,
    pub epigraph_vars: Vec<Option<usize>>,
    pub n_scenarios: usize,
}

impl DeterministicEquivalent {
    /// Copy of the model with the first stage pinned to `x`.
    pub fn pinned(&self, x: &[f64]) -> Result<MilpModel, MilpError> {
        let mut m = self.model.clone();
        for (&j, &v) in self.x_vars.iter().zip(x) {
            m.set_bounds(j, v, v)?;
        }
        Ok(m)
    }

    pub fn first_stage(&self, solution: &[f64]) -> Vec<f64> {
        self.x_vars.iter().map(|&j| solution[j]).collect()
    }
}

/// One monolithic MILP: first stage with the PWL cost plus `(1/m)`-weighted
/// recourse copies for every scenario.
pub fn build_deterministic_equivalent<P: TwoStageProblem>(
    problem: &P,
    scenarios: &[P::Scenario],
    cost: &PwlCost,
) -> Result<DeterministicEquivalent, TwoStageError> {
    if scenarios.is_empty() {
        return Err(TwoStageError::NoScenarios);
    }
    let mut model = MilpModel::new();
    let x_vars = problem.polytope().add_to_model(&mut model)?;
    let epigraph_vars = cost.add_to_model(&mut model, &x_vars, "G")?;
    let weight = 1.0 / scenarios.len() as f64;
    for (j, s) in scenarios.iter().enumerate() {
        problem.add_recourse(&mut model, &x_vars, s, weight, &format!("s{j}_"))?;
    }
    Ok(DeterministicEquivalent { model, x_vars, epigraph_vars, n_scenarios: scenarios.len() })
}

/// Writes `x_0..x_{d-1},q` rows with shortest round-trip decimals.
pub fn write_dataset_csv(data: &Dataset, out: impl Write) -> Result<(), TwoStageError> {
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<String> = (0..data.dim()).map(|j| format!("x_{j}")).collect();
    header.push("q".into());
    w.write_record(&header)?;
    for (x, q) in data.iter() {
        let mut rec: Vec<String> = x.iter().map(|v| v.to_string()).collect();
        rec.push(q.to_string());
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| TwoStageError::Csv(e.to_string()))?;
    Ok(())
}

pub fn read_dataset_csv(input: impl Read) -> Result<Dataset, TwoStageError> {
    let mut r = csv::Reader::from_reader(input);
    let headers = r.headers()?.clone();
    let n = headers.len();
    let expected: Vec<String> =
        (0..n.saturating_sub(1)).map(|j| format!("x_{j}")).chain(["q".to_string()]).collect();
    if n == 0 || headers.iter().ne(expected.iter().map(String::as_str)) {
        return Err(TwoStageError::Csv(format!("unexpected header {headers:?}")));
    }
    let mut data = Dataset::new(n - 1);
    for rec in r.records() {
        let rec = rec?;
        let vals = rec
            .iter()
            .map(|s| s.trim().parse::<f64>().map_err(|e| TwoStageError::Csv(format!("{s:?}: {e}"))))
            .collect::<Result<Vec<_>, _>>()?;
        let q = vals[n - 1];
        data.push(vals[..n - 1].to_vec(), q)?;
    }
    Ok(data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lp::Relation;

    fn square() -> PolytopeSpec {
        PolytopeSpec {
            names: vec!["a".into(), "b".into(), "c".into()],
            lower: vec![0.0, 0.0, -2.0],
            upper: vec![1.0, 1.0, 1.0],
            rows: vec![Constraint { terms: vec![(0, 1.0), (1, 1.0), (2, 1.0)], relation: Relation::Eq, rhs: 1.0 }],
            row_names: vec!["balance".into()],
            dependents: vec![AffineDependent { index: 2, constant: 1.0, terms: vec![(0, -1.0), (1, -1.0)] }],
        }
    }

    #[test]
    fn uniform_samples_satisfy_rows() {
        use rand::SeedableRng;
        let p = square();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let xs = p.sample_uniform(200, &mut rng).unwrap();
        for x in &xs {
            p.check(x, 1e-12).unwrap();
        }
        assert!(p.sample_uniform(0, &mut rng).unwrap().is_empty());
    }

    #[test]
    fn check_names_the_violation() {
        let p = square();
        let err = p.check(&[0.5, 0.5, 0.5], 1e-9).unwrap_err().to_string();
        assert!(err.contains("balance"), "{err}");
        let err = p.check(&[1.5, -0.5, 0.0], 1e-9).unwrap_err().to_string();
        assert!(err.contains("<= a <="), "{err}");
    }

    #[test]
    fn dataset_csv_round_trip() {
        let d = Dataset::from_rows(2, vec![(vec![0.1, 1.0 / 3.0], -2.5e7), (vec![1e-300, 7.0], 0.0)]).unwrap();
        let mut buf = Vec::new();
        write_dataset_csv(&d, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("x_0,x_1,q\n"));
        assert_eq!(read_dataset_csv(buf.as_slice()).unwrap(), d);
    }

    #[test]
    fn quadratic_evaluation() {
        let q = SeparableQuadratic { quad: vec![1.0], lin: vec![0.0], constant: 0.0 };
        assert_eq!(q.evaluate(&[2.0]), 4.0);
        let q = SeparableQuadratic { quad: vec![0.0, 0.0], lin: vec![0.0, 0.0], constant: 5.0 };
        assert_eq!(q.evaluate(&[3.0, -1.0]), 5.0);
    }
}
