//! Interval bounds and big-M MILP encoding of ReLU networks, plus assembly
//! and solution of the surrogate master problem.

use thiserror::Error;

use crate::lp::{solve_lp, LpStatus, Relation};
use crate::milp::{solve_milp_with, MilpError, MilpModel, MilpOptions, MilpOutcome, MilpStatus, PrimalHeuristic};
use crate::neural::{Layer, NeuralError, ReluNetwork};
use crate::two_stage::{PolytopeSpec, SeparableQuadratic};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EncoderError {
    #[error(transparent)]
    Milp(#[from] MilpError),
    #[error(transparent)]
    Neural(#[from] NeuralError),
    #[error("input box coordinate {0} is not finite")]
    InfiniteBox(usize),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("at least one tangent per coordinate is required")]
    NoSegments,
    #[error("master problem is infeasible")]
    MasterInfeasible,
    #[error("master solve stopped without a solution ({0:?})")]
    MasterLimit(MilpStatus),
}

/// Convex piecewise-linear underestimator of a separable quadratic: each
/// coordinate with positive curvature is replaced by the maximum of tangents
/// at equally spaced points of its box.
#[derive(Clone, Debug, PartialEq)]
pub struct PwlCost {
    pub constant: f64,
    pub linear: Vec<f64>,
    /// Per coordinate `(slope, intercept)` tangents; empty when the coordinate is linear.
    pub tangents: Vec<Vec<(f64, f64)>>,
    /// Worst-case `G - PWL(G)` over the box.
    pub max_error: f64,
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl PwlCost {
    pub fn from_quadratic(
        q: &SeparableQuadratic,
        lower: &[f64],
        upper: &[f64],
        segments: usize,
    ) -> Result<Self, EncoderError> {
        if segments == 0 {
            return Err(EncoderError::NoSegments);
        }
        let n = q.quad.len();
        if q.lin.len() != n || lower.len() != n || upper.len() != n {
            return Err(EncoderError::Dimension { expected: n, got: lower.len() });
        }
        let mut tangents = vec![Vec::new(); n];
        let mut linear = q.lin.clone();
        let mut max_error = 0.0;
        for j in 0..n {
            let c2 = q.quad[j];
            if c2 == 0.0 {
                continue;
            }
            let (lo, hi) = (lower[j], upper[j]);
            if !(lo.is_finite() && hi.is_finite()) {
                return Err(EncoderError::InfiniteBox(j));
            }
            let points: Vec<f64> = if segments == 1 || lo == hi {
                vec![0.5 * (lo + hi)]
            } else {
                (0..segments).map(|k| lo + (hi - lo) * k as f64 / (segments - 1) as f64).collect()
            };
            let c1 = q.lin[j];
            tangents[j] = points.iter().map(|&a| (2.0 * c2 * a + c1, -c2 * a * a)).collect();
            linear[j] = 0.0;
            let h = if points.len() == 1 { hi - lo } else { (hi - lo) / (segments - 1) as f64 };
            // Between neighbouring tangency points the gap peaks at the midpoint.
            max_error += c2.abs() * h * h / 4.0;
        }
        Ok(Self { constant: q.constant, linear, tangents, max_error, lower: lower.to_vec(), upper: upper.to_vec() })
    }

    pub fn evaluate(&self, x: &[f64]) -> f64 {
        let mut total = self.constant;
        for (j, &v) in x.iter().enumerate() {
            total += self.linear[j] * v;
            if let Some(best) = self.tangents[j].iter().map(|&(s, c)| s * v + c).reduce(f64::max) {
                total += best;
            }
        }
        total
    }

    /// Adds epigraph columns and tangent rows; the objective gains
    /// `PWL(G)(x)` in terms of the columns `x_vars`.
    pub fn add_to_model(
        &self,
        model: &mut MilpModel,
        x_vars: &[usize],
        prefix: &str,
    ) -> Result<Vec<Option<usize>>, EncoderError> {
        model.add_offset(self.constant);
        let mut epi = Vec::with_capacity(x_vars.len());
        for (j, &xv) in x_vars.iter().enumerate() {
            let cur = model.lp().objective()[xv];
            model.set_cost(xv, cur + self.linear[j]);
            if self.tangents[j].is_empty() {
                epi.push(None);
                continue;
            }
            let at = |v: f64| self.tangents[j].iter().map(|&(s, c)| s * v + c).fold(f64::NEG_INFINITY, f64::max);
            let top = at(self.lower[j]).max(at(self.upper[j]));
            let z = model.add_continuous(format!("{prefix}epi[{j}]"), f64::NEG_INFINITY, top, 1.0)?;
            for &(slope, intercept) in &self.tangents[j] {
                model.add_constraint(&[(z, 1.0), (xv, -slope)], Relation::Ge, intercept)?;
            }
            epi.push(Some(z));
        }
        Ok(epi)
    }
}

/// Pre-activation bounds of every layer, output layer included.
#[derive(Clone, Debug, PartialEq)]
pub struct ActivationBounds {
    pub lower: Vec<Vec<f64>>,
    pub upper: Vec<Vec<f64>>,
}

impl ActivationBounds {
    pub fn n_layers(&self) -> usize {
        self.lower.len()
    }

    pub fn n_unstable(&self) -> usize {
        let hidden = self.lower.len() - 1;
        (0..hidden)
            .map(|l| self.lower[l].iter().zip(&self.upper[l]).filter(|(lb, ub)| **lb < 0.0 && **ub > 0.0).count())
            .sum()
    }
}

// Relative outward widening that absorbs rounding in the interval sums.
const WIDEN: f64 = 1e-10;

/// One pass of interval arithmetic from the input box through every layer.
pub fn propagate_bounds(
    net: &ReluNetwork,
    lower: &[f64],
    upper: &[f64],
) -> Result<ActivationBounds, EncoderError> {
    let n = net.input_dim();
    if lower.len() != n || upper.len() != n {
        return Err(EncoderError::Dimension { expected: n, got: lower.len() });
    }
    if let Some(j) = (0..n).find(|&j| !(lower[j].is_finite() && upper[j].is_finite())) {
        return Err(EncoderError::InfiniteBox(j));
    }
    let mut lo = lower.to_vec();
    let mut hi = upper.to_vec();
    let mut out = ActivationBounds { lower: Vec::new(), upper: Vec::new() };
    let last = net.layers().len() - 1;
    for (l, layer) in net.layers().iter().enumerate() {
        let mut lb = Vec::with_capacity(layer.outputs());
        let mut ub = Vec::with_capacity(layer.outputs());
        for i in 0..layer.outputs() {
            let (mut a, mut b) = (layer.bias()[i], layer.bias()[i]);
            let mut mag = layer.bias()[i].abs();
            for (j, &w) in layer.row(i).iter().enumerate() {
                let (p, q) = (w * lo[j], w * hi[j]);
                a += p.min(q);
                b += p.max(q);
                mag += p.abs().max(q.abs());
            }
            lb.push(a - WIDEN * (1.0 + mag));
            ub.push(b + WIDEN * (1.0 + mag));
        }
        if l < last {
            lo = lb.iter().map(|v| v.max(0.0)).collect();
            hi = ub.iter().map(|v| v.max(0.0)).collect();
        }
        out.lower.push(lb);
        out.upper.push(ub);
    }
    Ok(out)
}

/// Like [`propagate_bounds`], but the first layer is bounded over the free
/// coordinates of `polytope` with its dependent coordinates substituted, so
/// inputs tied together by an equality are not treated as independent.
pub fn propagate_bounds_on(net: &ReluNetwork, polytope: &PolytopeSpec) -> Result<ActivationBounds, EncoderError> {
    let mut out = propagate_bounds(net, &polytope.lower, &polytope.upper)?;
    let first = &net.layers()[0];
    let free = polytope.free_indices();
    for i in 0..first.outputs() {
        let w = first.row(i);
        let mut eff = w.to_vec();
        let mut c = first.bias()[i];
        for d in &polytope.dependents {
            let wd = w[d.index];
            if wd == 0.0 {
                continue;
            }
            eff[d.index] = 0.0;
            c += wd * d.constant;
            for &(j, a) in &d.terms {
                eff[j] += wd * a;
            }
        }
        let (mut a, mut b, mut mag) = (c, c, c.abs());
        for &j in &free {
            let (p, q) = (eff[j] * polytope.lower[j], eff[j] * polytope.upper[j]);
            a += p.min(q);
            b += p.max(q);
            mag += p.abs().max(q.abs());
        }
        for (j, &wj) in w.iter().enumerate() {
            mag += (wj * polytope.lower[j]).abs().max((wj * polytope.upper[j]).abs());
        }
        out.lower[0][i] = out.lower[0][i].max(a - WIDEN * (1.0 + mag));
        out.upper[0][i] = out.upper[0][i].min(b + WIDEN * (1.0 + mag));
    }
    repropagate(net, &mut out, 1);
    Ok(out)
}

/// Recomputes interval bounds of layers `from..` from the bounds of layer `from - 1`,
/// keeping whichever bound is tighter.
fn repropagate(net: &ReluNetwork, bounds: &mut ActivationBounds, from: usize) {
    let last = net.layers().len() - 1;
    for l in from..=last {
        let lo: Vec<f64> = bounds.lower[l - 1].iter().map(|v| v.max(0.0)).collect();
        let hi: Vec<f64> = bounds.upper[l - 1].iter().map(|v| v.max(0.0)).collect();
        let layer = &net.layers()[l];
        for i in 0..layer.outputs() {
            let (mut a, mut b) = (layer.bias()[i], layer.bias()[i]);
            let mut mag = layer.bias()[i].abs();
            for (j, &w) in layer.row(i).iter().enumerate() {
                let (p, q) = (w * lo[j], w * hi[j]);
                a += p.min(q);
                b += p.max(q);
                mag += p.abs().max(q.abs());
            }
            bounds.lower[l][i] = bounds.lower[l][i].max(a - WIDEN * (1.0 + mag));
            bounds.upper[l][i] = bounds.upper[l][i].min(b + WIDEN * (1.0 + mag));
        }
    }
}

// Outward margin on LP-derived bounds, relative to the bound's magnitude.
const LP_BOUND_MARGIN: f64 = 1e-6;

/// Tightens the hidden pre-activation bounds of layers `1..` by optimizing each
/// neuron over the LP relaxation of the encoding of the layers below it, on
/// the first-stage polytope. Each bound only ever moves inward.
pub fn tighten_bounds(
    net: &ReluNetwork,
    polytope: &PolytopeSpec,
    bounds: &ActivationBounds,
) -> Result<ActivationBounds, EncoderError> {
    let mut out = bounds.clone();
    let hidden = net.layers().len() - 1;
    for l in 1..hidden {
        let layer = &net.layers()[l];
        for i in 0..layer.outputs() {
            // Truncated network whose output is neuron (l, i).
            let mut layers: Vec<Layer> = net.layers()[..l].to_vec();
            layers.push(Layer::new(vec![layer.row(i).to_vec()], vec![layer.bias()[i]])?);
            let sub = ReluNetwork::new(layers)?;
            let sub_bounds = ActivationBounds {
                lower: out.lower[..l].iter().cloned().chain([vec![out.lower[l][i]]]).collect(),
                upper: out.upper[..l].iter().cloned().chain([vec![out.upper[l][i]]]).collect(),
            };
            let mut model = MilpModel::new();
            let x_vars = polytope.add_to_model(&mut model)?;
            let enc = encode_network(&sub, &sub_bounds, &mut model, &x_vars, EncodeOptions::default(), "")?;
            for sign in [1.0, -1.0] {
                model.set_cost(enc.output, sign);
                let res = solve_lp(model.lp(), 1e-9).map_err(MilpError::from)?;
                if res.status != LpStatus::Optimal {
                    continue;
                }
                let v = sign * res.objective;
                let margin = LP_BOUND_MARGIN * (1.0 + v.abs());
                if sign > 0.0 {
                    out.lower[l][i] = out.lower[l][i].max(v - margin);
                } else {
                    out.upper[l][i] = out.upper[l][i].min(v + margin);
                }
            }
        }
        repropagate(net, &mut out, l + 1);
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EncodeOptions {
    /// Replace neurons with `LB >= 0` by their affine map and `UB <= 0` by zero.
    pub stabilize: bool,
}

impl Default for EncodeOptions {
    fn default() -> Self {
        Self { stabilize: true }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Neuron {
    /// Provably inactive: contributes nothing downstream.
    Zero,
    /// Provably active: post-activation column equals the pre-activation.
    Linear { out: usize },
    Relu { out: usize, sigma: usize },
}

impl Neuron {
    pub fn column(&self) -> Option<usize> {
        match *self {
            Neuron::Zero => None,
            Neuron::Linear { out } | Neuron::Relu { out, .. } => Some(out),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncodedNetwork {
    pub hidden: Vec<Vec<Neuron>>,
    pub output: usize,
}

impl EncodedNetwork {
    pub fn binaries(&self) -> Vec<usize> {
        self.hidden
            .iter()
            .flatten()
            .filter_map(|n| match *n {
                Neuron::Relu { sigma, .. } => Some(sigma),
                _ => None,
            })
            .collect()
    }

    /// Fills every network column of `values` from a forward pass at `input`.
    pub fn complete(&self, net: &ReluNetwork, input: &[f64], values: &mut [f64]) -> Result<(), EncoderError> {
        let pre = net.pre_activations(input)?;
        for (l, neurons) in self.hidden.iter().enumerate() {
            for (i, n) in neurons.iter().enumerate() {
                let z = pre[l][i];
                match *n {
                    Neuron::Zero => {}
                    Neuron::Linear { out } => values[out] = z,
                    Neuron::Relu { out, sigma } => {
                        values[out] = z.max(0.0);
                        values[sigma] = if z > 0.0 { 1.0 } else { 0.0 };
                    }
                }
            }
        }
        values[self.output] = pre[pre.len() - 1][0];
        Ok(())
    }
}

/// Adds the big-M representation of `net` over the input columns `inputs`.
/// Per unstable hidden neuron with bounds `LB < 0 < UB`:
/// `h >= a`, `h <= a - (1 - σ) LB`, `h <= σ UB`, `h >= 0`, where `a` is the
/// affine pre-activation. The output column equals the final affine map.
pub fn encode_network(
    net: &ReluNetwork,
    bounds: &ActivationBounds,
    model: &mut MilpModel,
    inputs: &[usize],
    opts: EncodeOptions,
    prefix: &str,
) -> Result<EncodedNetwork, EncoderError> {
    if inputs.len() != net.input_dim() {
        return Err(EncoderError::Dimension { expected: net.input_dim(), got: inputs.len() });
    }
    if bounds.n_layers() != net.layers().len() {
        return Err(EncoderError::Dimension { expected: net.layers().len(), got: bounds.n_layers() });
    }
    // Columns feeding the current layer; `None` is a constant zero.
    let mut prev: Vec<Option<usize>> = inputs.iter().copied().map(Some).collect();
    let mut hidden = Vec::new();
    let last = net.layers().len() - 1;
    for (l, layer) in net.layers().iter().enumerate() {
        if layer.outputs() != bounds.lower[l].len() {
            return Err(EncoderError::Dimension { expected: layer.outputs(), got: bounds.lower[l].len() });
        }
        let affine = |i: usize| -> Vec<(usize, f64)> {
            layer
                .row(i)
                .iter()
                .zip(&prev)
                .filter_map(|(&w, p)| p.filter(|_| w != 0.0).map(|c| (c, w)))
                .collect()
        };
        if l == last {
            let y = model.add_continuous(format!("{prefix}y"), f64::NEG_INFINITY, f64::INFINITY, 0.0)?;
            let mut terms = vec![(y, 1.0)];
            terms.extend(affine(0).into_iter().map(|(c, w)| (c, -w)));
            model.add_constraint(&terms, Relation::Eq, layer.bias()[0])?;
            return Ok(EncodedNetwork { hidden, output: y });
        }
        let mut neurons = Vec::with_capacity(layer.outputs());
        for i in 0..layer.outputs() {
            let (lb, ub) = (bounds.lower[l][i], bounds.upper[l][i]);
            let b = layer.bias()[i];
            let a = affine(i);
            let neg: Vec<(usize, f64)> = a.iter().map(|&(c, w)| (c, -w)).collect();
            let name = format!("{prefix}h[{l},{i}]");
            if opts.stabilize && ub <= 0.0 {
                neurons.push(Neuron::Zero);
                continue;
            }
            if opts.stabilize && lb >= 0.0 {
                let h = model.add_continuous(name, lb, ub, 0.0)?;
                let mut terms = vec![(h, 1.0)];
                terms.extend(&neg);
                model.add_constraint(&terms, Relation::Eq, b)?;
                neurons.push(Neuron::Linear { out: h });
                continue;
            }
            let h = model.add_continuous(name, 0.0, ub.max(0.0), 0.0)?;
            let sigma = model.add_binary(format!("{prefix}sigma[{l},{i}]"), 0.0)?;
            let mut lower_cut = vec![(h, 1.0)];
            lower_cut.extend(&neg);
            model.add_constraint(&lower_cut, Relation::Ge, b)?;
            let mut upper_cut = vec![(h, 1.0), (sigma, -lb)];
            upper_cut.extend(&neg);
            model.add_constraint(&upper_cut, Relation::Le, b - lb)?;
            model.add_constraint(&[(h, 1.0), (sigma, -ub)], Relation::Le, 0.0)?;
            neurons.push(Neuron::Relu { out: h, sigma });
        }
        prev = neurons.iter().map(Neuron::column).collect();
        hidden.push(neurons);
    }
    unreachable!("the output layer returns")
}

/// `min PWL(G)(x) + NN(x)` over the first-stage polytope.
#[derive(Clone, Debug)]
pub struct MasterProblem {
    pub model: MilpModel,
    pub x_vars: Vec<usize>,
    pub epigraph_vars: Vec<Option<usize>>,
    pub network: EncodedNetwork,
    net: ReluNetwork,
    cost: PwlCost,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MasterSolution {
    pub x: Vec<f64>,
    /// Optimal master objective `PWL(G)(x) + NN(x)`.
    pub objective: f64,
    /// Network output at `x` by forward pass.
    pub nn_value: f64,
    pub pwl_value: f64,
    pub outcome: MilpOutcome,
}

/// Builds the master problem for a network in raw units (scaler already folded in).
pub fn build_master(
    net: &ReluNetwork,
    bounds: &ActivationBounds,
    polytope: &PolytopeSpec,
    cost: &PwlCost,
    opts: EncodeOptions,
) -> Result<MasterProblem, EncoderError> {
    if net.input_dim() != polytope.dim() || cost.linear.len() != polytope.dim() {
        return Err(EncoderError::Dimension { expected: polytope.dim(), got: net.input_dim() });
    }
    let mut model = MilpModel::new();
    let x_vars = polytope.add_to_model(&mut model)?;
    let epigraph_vars = cost.add_to_model(&mut model, &x_vars, "G")?;
    let network = encode_network(net, bounds, &mut model, &x_vars, opts, "nn_")?;
    model.set_cost(network.output, 1.0);
    Ok(MasterProblem { model, x_vars, epigraph_vars, network, net: net.clone(), cost: cost.clone() })
}

/// Completes a relaxation point into a MILP point: keeps its first stage and
/// recomputes the network and epigraph columns exactly.
struct ForwardCompletion<'a> {
    master: &'a MasterProblem,
    hint: Option<&'a [f64]>,
}

impl ForwardCompletion<'_> {
    fn complete(&self, x: Vec<f64>, mut values: Vec<f64>) -> Option<Vec<f64>> {
        let m = self.master;
        for (&j, &v) in m.x_vars.iter().zip(&x) {
            values[j] = v;
        }
        m.network.complete(&m.net, &x, &mut values).ok()?;
        for (j, z) in m.epigraph_vars.iter().enumerate() {
            if let Some(z) = *z {
                values[z] = m.cost.tangents[j].iter().map(|&(s, c)| s * x[j] + c).fold(f64::NEG_INFINITY, f64::max);
            }
        }
        Some(values)
    }
}

impl PrimalHeuristic for ForwardCompletion<'_> {
    fn propose(&self, relaxation: &[f64]) -> Option<Vec<f64>> {
        let x: Vec<f64> = self.master.x_vars.iter().map(|&j| relaxation[j]).collect();
        self.complete(x, relaxation.to_vec())
    }

    fn initial(&self) -> Option<Vec<f64>> {
        let x = self.hint?;
        if x.len() != self.master.x_vars.len() {
            return None;
        }
        self.complete(x.to_vec(), vec![0.0; self.master.model.n_vars()])
    }
}

impl MasterProblem {
    pub fn n_binaries(&self) -> usize {
        self.model.n_binaries()
    }

    pub fn solve(&self, opts: &MilpOptions) -> Result<MasterSolution, EncoderError> {
        self.solve_from(opts, None)
    }

    /// Solves with `hint`, a first-stage point such as the previous optimum,
    /// offered as the starting incumbent.
    pub fn solve_from(&self, opts: &MilpOptions, hint: Option<&[f64]>) -> Result<MasterSolution, EncoderError> {
        let heuristic = ForwardCompletion { master: self, hint };
        let outcome = solve_milp_with(&self.model, opts, Some(&heuristic))?;
        let sol = match (&outcome.solution, outcome.status) {
            (Some(sol), _) => sol,
            (None, MilpStatus::Infeasible) => return Err(EncoderError::MasterInfeasible),
            (None, status) => return Err(EncoderError::MasterLimit(status)),
        };
        let x: Vec<f64> = self.x_vars.iter().map(|&j| sol[j]).collect();
        let nn_value = self.net.forward(&x)?;
        let pwl_value = self.cost.evaluate(&x);
        Ok(MasterSolution { x, objective: outcome.objective, nn_value, pwl_value, outcome })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::milp::solve_milp;
    use crate::neural::Layer;

    fn single_neuron() -> ReluNetwork {
        ReluNetwork::new(vec![
            Layer::new(vec![vec![1.0, -1.0]], vec![0.0]).unwrap(),
            Layer::new(vec![vec![1.0]], vec![0.0]).unwrap(),
        ])
        .unwrap()
    }

    #[test]
    fn endpoint_arithmetic() {
        let net = ReluNetwork::new(vec![
            Layer::new(vec![vec![1.0, 1.0]], vec![-1.0]).unwrap(),
            Layer::new(vec![vec![1.0]], vec![0.0]).unwrap(),
        ])
        .unwrap();
        let b = propagate_bounds(&net, &[0.0, 0.0], &[1.0, 1.0]).unwrap();
        assert!((b.lower[0][0] + 1.0).abs() < 1e-9 && (b.upper[0][0] - 1.0).abs() < 1e-9);
        let zero = ReluNetwork::new(vec![
            Layer::new(vec![vec![0.0, 0.0]], vec![2.5]).unwrap(),
            Layer::new(vec![vec![1.0]], vec![0.0]).unwrap(),
        ])
        .unwrap();
        let b = propagate_bounds(&zero, &[-3.0, -3.0], &[3.0, 3.0]).unwrap();
        assert!((b.lower[0][0] - 2.5).abs() < 1e-9 && (b.upper[0][0] - 2.5).abs() < 1e-9);
        assert_eq!(
            propagate_bounds(&zero, &[f64::NEG_INFINITY, 0.0], &[0.0, 0.0]),
            Err(EncoderError::InfiniteBox(0))
        );
    }

    fn pinned_output(input: [f64; 2]) -> (f64, f64) {
        let net = single_neuron();
        let bounds = propagate_bounds(&net, &[0.0, 0.0], &[4.0, 4.0]).unwrap();
        let mut model = MilpModel::new();
        let xs: Vec<usize> = input
            .iter()
            .enumerate()
            .map(|(j, &v)| model.add_continuous(format!("x{j}"), v, v, 0.0).unwrap())
            .collect();
        let enc = encode_network(&net, &bounds, &mut model, &xs, EncodeOptions::default(), "").unwrap();
        let sol = solve_milp(&model, &MilpOptions::default()).unwrap().solution.unwrap();
        let Neuron::Relu { sigma, .. } = enc.hidden[0][0] else { panic!("neuron should be unstable") };
        (sol[enc.output], sol[sigma])
    }

    #[test]
    fn pinned_single_neuron() {
        assert_eq!(pinned_output([3.0, 2.0]), (1.0, 1.0));
        assert_eq!(pinned_output([2.0, 3.0]), (0.0, 0.0));
    }

    #[test]
    fn pwl_touches_at_tangency_points() {
        let q = SeparableQuadratic { quad: vec![0.5, 0.0], lin: vec![3.0, 2.0], constant: 7.0 };
        let pwl = PwlCost::from_quadratic(&q, &[0.0, -1.0], &[10.0, 1.0], 6).unwrap();
        for k in 0..6 {
            let x = [2.0 * k as f64, 0.3];
            assert!((pwl.evaluate(&x) - q.evaluate(&x)).abs() < 1e-12);
        }
        let mid = [1.0, 0.3];
        let gap = q.evaluate(&mid) - pwl.evaluate(&mid);
        assert!(gap > 0.0 && (gap - pwl.max_error).abs() < 1e-12);
    }
}
