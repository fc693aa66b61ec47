//! Fully connected ReLU regression network with a linear output layer, plus a
//! minibatch Adam trainer on z-scored inputs and labels.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const FORMAT_NAME: &str = "surro2sp-relu-network";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NeuralError {
    #[error("input has dimension {got}, network expects {expected}")]
    Dimension { expected: usize, got: usize },
    #[error("layer {layer} expects {expected} inputs but the previous layer has {got} outputs")]
    Chain { layer: usize, expected: usize, got: usize },
    #[error("network must have at least one layer and a scalar output")]
    Shape,
    #[error("non-finite parameter in layer {0}")]
    NonFinite(usize),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("training diverged at epoch {epoch}: loss {loss} (learning rate {lr})")]
    Divergence { epoch: usize, loss: f64, lr: f64 },
    #[error("unsupported network document: {0}")]
    Format(String),
    #[error("json: {0}")]
    Json(String),
}

/// Affine map `y = W x + b` with `W` stored row-major as `rows × cols`.
#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    rows: usize,
    cols: usize,
    w: Vec<f64>,
    b: Vec<f64>,
}

impl Layer {
    pub fn new(weights: Vec<Vec<f64>>, bias: Vec<f64>) -> Result<Self, NeuralError> {
        let rows = weights.len();
        let cols = weights.first().map_or(0, Vec::len);
        if rows == 0 || cols == 0 || bias.len() != rows || weights.iter().any(|r| r.len() != cols)
        {
            return Err(NeuralError::Shape);
        }
        Ok(Self { rows, cols, w: weights.concat(), b: bias })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, w: vec![0.0; rows * cols], b: vec![0.0; rows] }
    }

    pub fn outputs(&self) -> usize {
        self.rows
    }

    pub fn inputs(&self) -> usize {
        self.cols
    }

    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.w[i * self.cols + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.w[i * self.cols..(i + 1) * self.cols]
    }

    pub fn bias(&self) -> &[f64] {
        &self.b
    }

    pub fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.w
    }

    pub fn bias_mut(&mut self) -> &mut [f64] {
        &mut self.b
    }

    fn apply(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend(self.b.iter().enumerate().map(|(i, &bi)| {
            bi + self.row(i).iter().zip(x).map(|(w, v)| w * v).sum::<f64>()
        }));
    }

    fn is_finite(&self) -> bool {
        self.w.iter().chain(&self.b).all(|v| v.is_finite())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReluNetwork {
    layers: Vec<Layer>,
}

impl ReluNetwork {
    pub fn new(layers: Vec<Layer>) -> Result<Self, NeuralError> {
        if layers.is_empty() || layers.last().unwrap().rows != 1 {
            return Err(NeuralError::Shape);
        }
        for (l, pair) in layers.windows(2).enumerate() {
            if pair[1].cols != pair[0].rows {
                return Err(NeuralError::Chain {
                    layer: l + 1,
                    expected: pair[1].cols,
                    got: pair[0].rows,
                });
            }
        }
        if let Some(l) = layers.iter().position(|l| !l.is_finite()) {
            return Err(NeuralError::NonFinite(l));
        }
        Ok(Self { layers })
    }

    /// He-uniform weights, zero biases. `hidden` lists the hidden layer widths.
    pub fn he_uniform(input_dim: usize, hidden: &[usize], rng: &mut impl Rng) -> Self {
        let mut layers = Vec::with_capacity(hidden.len() + 1);
        let mut fan_in = input_dim;
        for &width in hidden.iter().chain(std::iter::once(&1)) {
            let limit = (6.0 / fan_in as f64).sqrt();
            let mut layer = Layer::zeros(width, fan_in);
            for w in &mut layer.w {
                *w = rng.random_range(-limit..limit);
            }
            layers.push(layer);
            fan_in = width;
        }
        Self { layers }
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].cols
    }

    pub fn hidden_widths(&self) -> Vec<usize> {
        self.layers[..self.layers.len() - 1].iter().map(|l| l.rows).collect()
    }

    pub fn n_hidden_neurons(&self) -> usize {
        self.hidden_widths().iter().sum()
    }

    pub fn forward(&self, x: &[f64]) -> Result<f64, NeuralError> {
        self.check_input(x)?;
        let mut cur = x.to_vec();
        let mut next = Vec::new();
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            layer.apply(&cur, &mut next);
            if l < last {
                next.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            std::mem::swap(&mut cur, &mut next);
        }
        Ok(cur[0])
    }

    /// Pre-activation vectors of every layer, output layer included.
    pub fn pre_activations(&self, x: &[f64]) -> Result<Vec<Vec<f64>>, NeuralError> {
        self.check_input(x)?;
        let mut out: Vec<Vec<f64>> = Vec::with_capacity(self.layers.len());
        let mut cur = x.to_vec();
        for layer in &self.layers {
            let mut z = Vec::new();
            layer.apply(&cur, &mut z);
            cur = z.iter().map(|v| v.max(0.0)).collect();
            out.push(z);
        }
        Ok(out)
    }

    fn check_input(&self, x: &[f64]) -> Result<(), NeuralError> {
        if x.len() != self.input_dim() {
            return Err(NeuralError::Dimension { expected: self.input_dim(), got: x.len() });
        }
        Ok(())
    }

    /// Mean squared error over `(xs, ys)` and its gradient with respect to every
    /// weight and bias, laid out like the network's layers.
    pub fn mse_with_gradient(
        &self,
        xs: &[Vec<f64>],
        ys: &[f64],
    ) -> Result<(f64, Vec<Layer>), NeuralError> {
        if xs.is_empty() || xs.len() != ys.len() {
            return Err(NeuralError::EmptyDataset);
        }
        for x in xs {
            self.check_input(x)?;
        }
        let idx: Vec<usize> = (0..xs.len()).collect();
        let mut ws = Workspace::new(self);
        let mut grad: Vec<Layer> = self.layers.iter().map(|l| Layer::zeros(l.rows, l.cols)).collect();
        let loss = ws.batch(self, xs, ys, &idx, &mut grad);
        Ok((loss, grad))
    }
}

struct Workspace {
    acts: Vec<Vec<f64>>,
    deltas: Vec<Vec<f64>>,
}

impl Workspace {
    fn new(net: &ReluNetwork) -> Self {
        let mut acts = vec![vec![0.0; net.input_dim()]];
        acts.extend(net.layers.iter().map(|l| vec![0.0; l.rows]));
        let deltas = net.layers.iter().map(|l| vec![0.0; l.rows]).collect();
        Self { acts, deltas }
    }

    /// Accumulates the mean-squared-error gradient of the rows `idx` into `grad`
    /// (which is overwritten) and returns the batch loss.
    fn batch(
        &mut self,
        net: &ReluNetwork,
        xs: &[Vec<f64>],
        ys: &[f64],
        idx: &[usize],
        grad: &mut [Layer],
    ) -> f64 {
        for g in grad.iter_mut() {
            g.w.iter_mut().for_each(|v| *v = 0.0);
            g.b.iter_mut().for_each(|v| *v = 0.0);
        }
        let n_layers = net.layers.len();
        let scale = 1.0 / idx.len() as f64;
        let mut loss = 0.0;
        for &r in idx {
            self.acts[0].copy_from_slice(&xs[r]);
            for (l, layer) in net.layers.iter().enumerate() {
                let (head, tail) = self.acts.split_at_mut(l + 1);
                let input = &head[l];
                let out = &mut tail[0];
                for i in 0..layer.rows {
                    let z = layer.b[i]
                        + layer.row(i).iter().zip(input.iter()).map(|(w, v)| w * v).sum::<f64>();
                    out[i] = if l + 1 < n_layers { z.max(0.0) } else { z };
                }
            }
            let err = self.acts[n_layers][0] - ys[r];
            loss += err * err;
            self.deltas[n_layers - 1][0] = 2.0 * err * scale;
            for l in (0..n_layers).rev() {
                let layer = &net.layers[l];
                let g = &mut grad[l];
                let input = &self.acts[l];
                for i in 0..layer.rows {
                    let d = self.deltas[l][i];
                    if d == 0.0 {
                        continue;
                    }
                    g.b[i] += d;
                    let row = &mut g.w[i * layer.cols..(i + 1) * layer.cols];
                    row.iter_mut().zip(input).for_each(|(gw, v)| *gw += d * v);
                }
                if l > 0 {
                    let (prev, cur) = self.deltas.split_at_mut(l);
                    let back = &mut prev[l - 1];
                    back.iter_mut().for_each(|v| *v = 0.0);
                    for i in 0..layer.rows {
                        let d = cur[0][i];
                        if d != 0.0 {
                            back.iter_mut().zip(layer.row(i)).for_each(|(b, w)| *b += d * w);
                        }
                    }
                    // ReLU derivative, taking 0 at the kink.
                    for (b, a) in back.iter_mut().zip(&self.acts[l]) {
                        if *a <= 0.0 {
                            *b = 0.0;
                        }
                    }
                }
            }
        }
        loss * scale
    }
}

/// Per-feature z-score statistics for inputs and the label.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub x_mean: Vec<f64>,
    pub x_std: Vec<f64>,
    pub y_mean: f64,
    pub y_std: f64,
}

const MIN_STD: f64 = 1e-12;

impl Scaler {
    pub fn identity(dim: usize) -> Self {
        Self { x_mean: vec![0.0; dim], x_std: vec![1.0; dim], y_mean: 0.0, y_std: 1.0 }
    }

    pub fn scale_x(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(&self.x_mean).zip(&self.x_std).map(|((v, m), s)| (v - m) / s).collect()
    }

    pub fn scale_y(&self, y: f64) -> f64 {
        (y - self.y_mean) / self.y_std
    }

    pub fn unscale_y(&self, y: f64) -> f64 {
        y * self.y_std + self.y_mean
    }
}

fn mean_std(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count() as f64;
    let mean = values.clone().sum::<f64>() / n;
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    (mean, if std < MIN_STD { 1.0 } else { std })
}

pub fn fit_scaler(data: &Dataset) -> Result<Scaler, NeuralError> {
    if data.is_empty() {
        return Err(NeuralError::EmptyDataset);
    }
    let (x_mean, x_std) = (0..data.dim).map(|j| mean_std(data.xs.iter().map(move |x| x[j]))).unzip();
    let (y_mean, y_std) = mean_std(data.ys.iter().copied());
    Ok(Scaler { x_mean, x_std, y_mean, y_std })
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Dataset {
    dim: usize,
    xs: Vec<Vec<f64>>,
    ys: Vec<f64>,
}

impl Dataset {
    pub fn new(dim: usize) -> Self {
        Self { dim, xs: Vec::new(), ys: Vec::new() }
    }

    pub fn from_rows(dim: usize, rows: Vec<(Vec<f64>, f64)>) -> Result<Self, NeuralError> {
        let mut d = Self::new(dim);
        for (x, y) in rows {
            d.push(x, y)?;
        }
        Ok(d)
    }

    pub fn push(&mut self, x: Vec<f64>, label: f64) -> Result<(), NeuralError> {
        if x.len() != self.dim {
            return Err(NeuralError::Dimension { expected: self.dim, got: x.len() });
        }
        self.xs.push(x);
        self.ys.push(label);
        Ok(())
    }

    pub fn extend(&mut self, other: &Dataset) -> Result<(), NeuralError> {
        for (x, y) in other.iter() {
            self.push(x.to_vec(), y)?;
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ys.is_empty()
    }

    pub fn xs(&self) -> &[Vec<f64>] {
        &self.xs
    }

    pub fn labels(&self) -> &[f64] {
        &self.ys
    }

    pub fn iter(&self) -> impl Iterator<Item = (&[f64], f64)> {
        self.xs.iter().map(Vec::as_slice).zip(self.ys.iter().copied())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub warm_start: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { epochs: 500, batch_size: 64, learning_rate: 1e-3, seed: 0, warm_start: false }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<(), NeuralError> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(NeuralError::Config("epochs and batch size must be positive".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(NeuralError::Config("learning rate must be positive".into()));
        }
        Ok(())
    }
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// Trains on scaled inputs and labels with minibatch Adam. Returns the trained
/// network (in scaled units) and the mean batch loss of every epoch.
pub fn train(
    net: &ReluNetwork,
    data: &Dataset,
    scaler: &Scaler,
    cfg: &TrainConfig,
) -> Result<(ReluNetwork, Vec<f64>), NeuralError> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(NeuralError::EmptyDataset);
    }
    if data.dim != net.input_dim() {
        return Err(NeuralError::Dimension { expected: net.input_dim(), got: data.dim });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut net = if cfg.warm_start {
        net.clone()
    } else {
        ReluNetwork::he_uniform(net.input_dim(), &net.hidden_widths(), &mut rng)
    };
    let xs: Vec<Vec<f64>> = data.xs.iter().map(|x| scaler.scale_x(x)).collect();
    let ys: Vec<f64> = data.ys.iter().map(|&y| scaler.scale_y(y)).collect();

    let zeros = || -> Vec<Layer> { net.layers.iter().map(|l| Layer::zeros(l.rows, l.cols)).collect() };
    let mut grad = zeros();
    let mut m1 = zeros();
    let mut m2 = zeros();
    let mut ws = Workspace::new(&net);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut step = 0i32;
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let loss = ws.batch(&net, &xs, &ys, chunk, &mut grad);
            total += loss * chunk.len() as f64;
            step += 1;
            let c1 = 1.0 - BETA1.powi(step);
            let c2 = 1.0 - BETA2.powi(step);
            for ((layer, g), (a, b)) in net.layers.iter_mut().zip(&grad).zip(m1.iter_mut().zip(m2.iter_mut())) {
                let params = layer.w.iter_mut().chain(layer.b.iter_mut());
                let grads = g.w.iter().chain(&g.b);
                let firsts = a.w.iter_mut().chain(a.b.iter_mut());
                let seconds = b.w.iter_mut().chain(b.b.iter_mut());
                for (((p, &gv), m), v) in params.zip(grads).zip(firsts).zip(seconds) {
                    *m = BETA1 * *m + (1.0 - BETA1) * gv;
                    *v = BETA2 * *v + (1.0 - BETA2) * gv * gv;
                    *p -= cfg.learning_rate * (*m / c1) / ((*v / c2).sqrt() + ADAM_EPS);
                }
            }
        }
        let loss = total / data.len() as f64;
        if !loss.is_finite() {
            return Err(NeuralError::Divergence { epoch: epoch + 1, loss, lr: cfg.learning_rate });
        }
        history.push(loss);
    }
    Ok((net, history))
}

/// A network trained in scaled units together with its scaler.
#[derive(Clone, Debug, PartialEq)]
pub struct Surrogate {
    pub net: ReluNetwork,
    pub scaler: Scaler,
}

impl Surrogate {
    /// Prediction in raw label units.
    pub fn predict(&self, x: &[f64]) -> Result<f64, NeuralError> {
        Ok(self.scaler.unscale_y(self.net.forward(&self.scaler.scale_x(x))?))
    }

    /// Equivalent network in raw units: the input standardization is absorbed
    /// into the first layer and the label de-standardization into the last.
    pub fn folded(&self) -> ReluNetwork {
        let mut net = self.net.clone();
        let first = &mut net.layers[0];
        for i in 0..first.rows {
            for j in 0..first.cols {
                let w = first.w[i * first.cols + j] / self.scaler.x_std[j];
                first.w[i * first.cols + j] = w;
                first.b[i] -= w * self.scaler.x_mean[j];
            }
        }
        let last = net.layers.last_mut().unwrap();
        last.w.iter_mut().for_each(|w| *w *= self.scaler.y_std);
        last.b[0] = last.b[0] * self.scaler.y_std + self.scaler.y_mean;
        net
    }

    pub fn to_json(&self) -> String {
        let doc = Document {
            format: FORMAT_NAME.into(),
            version: FORMAT_VERSION,
            layers: self
                .net
                .layers
                .iter()
                .map(|l| LayerDoc {
                    weights: (0..l.rows).map(|i| l.row(i).to_vec()).collect(),
                    bias: l.b.clone(),
                })
                .collect(),
            scaler: self.scaler.clone(),
        };
        serde_json::to_string_pretty(&doc).expect("network serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, NeuralError> {
        let doc: Document = serde_json::from_str(text).map_err(|e| NeuralError::Json(e.to_string()))?;
        if doc.format != FORMAT_NAME {
            return Err(NeuralError::Format(format!("unknown format {:?}", doc.format)));
        }
        if doc.version != FORMAT_VERSION {
            return Err(NeuralError::Format(format!("unsupported version {}", doc.version)));
        }
        let layers = doc
            .layers
            .into_iter()
            .map(|l| Layer::new(l.weights, l.bias))
            .collect::<Result<Vec<_>, _>>()?;
        let net = ReluNetwork::new(layers)?;
        let s = &doc.scaler;
        if s.x_mean.len() != net.input_dim() || s.x_std.len() != net.input_dim() {
            return Err(NeuralError::Format("scaler dimension does not match network".into()));
        }
        if s.x_std.iter().chain([&s.y_std]).any(|v| !(*v > 0.0)) {
            return Err(NeuralError::Format("scaler deviations must be positive".into()));
        }
        Ok(Self { net, scaler: doc.scaler })
    }
}

#[derive(Serialize, Deserialize)]
struct LayerDoc {
    weights: Vec<Vec<f64>>,
    bias: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct Document {
    format: String,
    version: u32,
    layers: Vec<LayerDoc>,
    scaler: Scaler,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single_neuron() -> ReluNetwork {
        ReluNetwork::new(vec![
            Layer::new(vec![vec![1.0, -1.0]], vec![0.0]).unwrap(),
            Layer::new(vec![vec![1.0]], vec![0.0]).unwrap(),
        ])
        .unwrap()
    }

    #[test]
    fn single_neuron_forward() {
        let net = single_neuron();
        assert_eq!(net.forward(&[2.0, 3.0]).unwrap(), 0.0);
        assert_eq!(net.forward(&[3.0, 2.0]).unwrap(), 1.0);
        assert!(matches!(net.forward(&[1.0]), Err(NeuralError::Dimension { .. })));
    }

    #[test]
    fn layer_chain_is_checked() {
        let bad = ReluNetwork::new(vec![
            Layer::new(vec![vec![1.0, 1.0]], vec![0.0]).unwrap(),
            Layer::new(vec![vec![1.0, 1.0]], vec![0.0]).unwrap(),
        ]);
        assert!(matches!(bad, Err(NeuralError::Chain { .. })));
        let nan = ReluNetwork::new(vec![Layer::new(vec![vec![f64::NAN]], vec![0.0]).unwrap()]);
        assert_eq!(nan, Err(NeuralError::NonFinite(0)));
    }

    #[test]
    fn scaler_population_convention_and_clamp() {
        let d = Dataset::from_rows(2, vec![(vec![0.0, 5.0], 1.0), (vec![2.0, 5.0], 3.0)]).unwrap();
        let s = fit_scaler(&d).unwrap();
        assert_eq!(s.x_mean, vec![1.0, 5.0]);
        assert_eq!(s.x_std, vec![1.0, 1.0]);
        assert_eq!((s.y_mean, s.y_std), (2.0, 1.0));
        assert_eq!(fit_scaler(&Dataset::new(2)), Err(NeuralError::EmptyDataset));
    }

    #[test]
    fn fold_matches_scaled_prediction() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let net = ReluNetwork::he_uniform(3, &[5, 4], &mut rng);
        let scaler = Scaler {
            x_mean: vec![1.0, -2.0, 30.0],
            x_std: vec![0.5, 2.0, 10.0],
            y_mean: 1000.0,
            y_std: 250.0,
        };
        let s = Surrogate { net, scaler };
        let folded = s.folded();
        for _ in 0..20 {
            let x: Vec<f64> = (0..3).map(|_| rng.random_range(-50.0..50.0)).collect();
            let a = s.predict(&x).unwrap();
            let b = folded.forward(&x).unwrap();
            assert!((a - b).abs() <= 1e-9 * (1.0 + a.abs()));
        }
    }

    #[test]
    fn json_round_trip_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let net = ReluNetwork::he_uniform(4, &[3, 3], &mut rng);
        let s = Surrogate {
            net,
            scaler: Scaler { x_mean: vec![0.1; 4], x_std: vec![0.3; 4], y_mean: 1.0 / 3.0, y_std: 7.0 },
        };
        let back = Surrogate::from_json(&s.to_json()).unwrap();
        assert_eq!(back, s);
        let wrong = s.to_json().replace("\"version\": 1", "\"version\": 2");
        assert!(matches!(Surrogate::from_json(&wrong), Err(NeuralError::Format(_))));
    }

    #[test]
    fn training_rejects_bad_input() {
        let net = single_neuron();
        let s = Scaler::identity(2);
        assert!(matches!(train(&net, &Dataset::new(2), &s, &TrainConfig::default()), Err(NeuralError::EmptyDataset)));
        let d = Dataset::from_rows(2, vec![(vec![1.0, 2.0], 1.0)]).unwrap();
        let cfg = TrainConfig { learning_rate: 0.0, ..TrainConfig::default() };
        assert!(matches!(train(&net, &d, &s, &cfg), Err(NeuralError::Config(_))));
        let cfg = TrainConfig { learning_rate: 1e300, epochs: 50, ..TrainConfig::default() };
        let d = Dataset::from_rows(2, vec![(vec![1e200, 2.0], 1e300), (vec![-1e200, 0.0], -1e300)]).unwrap();
        assert!(matches!(train(&net, &d, &s, &cfg), Err(NeuralError::Divergence { .. })));
    }
}
