//! Dense multilayer perceptron used for the local classifiers and for the
//! policy/value networks of the adaptive weighting strategy.
//!
//! Parameter layout: for each layer in order, the weight matrix
//! (`in_dim x out_dim`, row-major, so `W[i][j]` is at `i * out_dim + j`)
//! followed by that layer's `out_dim` biases. Every node uses the same
//! layout, which is what makes elementwise aggregation meaningful.
//!
//! Hidden layers use ReLU; the output layer returns raw logits.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row-major dense matrix of `f64`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "matrix data has {} entries, expected {rows}x{cols}",
                data.len()
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(Error::Shape("ragged rows".into()));
            }
            data.extend_from_slice(r);
        }
        Ok(Matrix {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    /// Copies the given rows, in order, into a new matrix.
    pub fn select_rows(&self, indices: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        Matrix {
            rows: indices.len(),
            cols: self.cols,
            data,
        }
    }

    /// Index of the largest entry in each row (first on ties).
    pub fn argmax_rows(&self) -> Vec<usize> {
        (0..self.rows)
            .map(|i| {
                let row = self.row(i);
                let mut best = 0;
                for (j, &v) in row.iter().enumerate() {
                    if v > row[best] {
                        best = j;
                    }
                }
                best
            })
            .collect()
    }
}

/// Features plus integer class labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Batch {
    pub features: Matrix,
    pub labels: Vec<usize>,
}

impl Batch {
    pub fn new(features: Matrix, labels: Vec<usize>) -> Result<Self> {
        if features.rows() != labels.len() {
            return Err(Error::Shape(format!(
                "{} feature rows but {} labels",
                features.rows(),
                labels.len()
            )));
        }
        Ok(Batch { features, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn subset(&self, indices: &[usize]) -> Batch {
        Batch {
            features: self.features.select_rows(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    /// Number of distinct labels present.
    pub fn n_distinct_labels(&self) -> usize {
        let mut seen: Vec<usize> = self.labels.clone();
        seen.sort_unstable();
        seen.dedup();
        seen.len()
    }
}

/// Flat MLP parameters plus the layer shapes that give them meaning.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    layer_shapes: Vec<(usize, usize)>,
    values: Vec<f64>,
}

/// Number of parameters for the given layer shapes.
pub fn param_count(layer_shapes: &[(usize, usize)]) -> usize {
    layer_shapes.iter().map(|&(i, o)| i * o + o).sum()
}

fn check_shapes(layer_shapes: &[(usize, usize)]) -> Result<()> {
    if layer_shapes.is_empty() {
        return Err(Error::Config("empty layer shape list".into()));
    }
    for (l, &(i, o)) in layer_shapes.iter().enumerate() {
        if i == 0 || o == 0 {
            return Err(Error::Config(format!("layer {l} has a zero dimension")));
        }
    }
    for w in layer_shapes.windows(2) {
        if w[0].1 != w[1].0 {
            return Err(Error::Config(format!(
                "layer output {} does not feed next layer input {}",
                w[0].1, w[1].0
            )));
        }
    }
    Ok(())
}

impl ModelParams {
    pub fn new(layer_shapes: Vec<(usize, usize)>, values: Vec<f64>) -> Result<Self> {
        check_shapes(&layer_shapes)?;
        let expected = param_count(&layer_shapes);
        if values.len() != expected {
            return Err(Error::Shape(format!(
                "{} values for layer shapes needing {expected}",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite parameter".into()));
        }
        Ok(ModelParams {
            layer_shapes,
            values,
        })
    }

    /// All-zero parameters for the given shapes.
    pub fn zeros(layer_shapes: Vec<(usize, usize)>) -> Result<Self> {
        check_shapes(&layer_shapes)?;
        let n = param_count(&layer_shapes);
        Ok(ModelParams {
            layer_shapes,
            values: vec![0.0; n],
        })
    }

    pub fn layer_shapes(&self) -> &[(usize, usize)] {
        &self.layer_shapes
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.layer_shapes[0].0
    }

    pub fn output_dim(&self) -> usize {
        self.layer_shapes[self.layer_shapes.len() - 1].1
    }

    /// Offsets of (weights, biases) for each layer.
    fn offsets(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::with_capacity(self.layer_shapes.len());
        let mut pos = 0;
        for &(i, o) in &self.layer_shapes {
            out.push((pos, pos + i * o));
            pos += i * o + o;
        }
        out
    }

    /// Whether `other` has identical layer shapes.
    pub fn same_shape(&self, other: &ModelParams) -> bool {
        self.layer_shapes == other.layer_shapes
    }

    /// Euclidean distance between two same-shaped parameter vectors.
    pub fn l2_distance(&self, other: &ModelParams) -> Result<f64> {
        if !self.same_shape(other) {
            return Err(Error::Shape("l2 distance between different shapes".into()));
        }
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt())
    }
}

/// Gradient with the same layout as [`ModelParams::values`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient(pub Vec<f64>);

impl Gradient {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn scale(&mut self, s: f64) {
        self.0.iter_mut().for_each(|g| *g *= s);
    }

    pub fn add_scaled(&mut self, other: &Gradient, s: f64) {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            *a += s * b;
        }
    }
}

/// Glorot-uniform weights, zero biases. Deterministic for a fixed seed.
pub fn mlp_init(layer_shapes: &[(usize, usize)], seed: u64) -> Result<ModelParams> {
    check_shapes(layer_shapes)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut values = Vec::with_capacity(param_count(layer_shapes));
    for &(i, o) in layer_shapes {
        let bound = (6.0 / (i + o) as f64).sqrt();
        for _ in 0..i * o {
            values.push(rng.random_range(-bound..bound));
        }
        values.extend(std::iter::repeat_n(0.0, o));
    }
    Ok(ModelParams {
        layer_shapes: layer_shapes.to_vec(),
        values,
    })
}

fn dense(x: &Matrix, w: &[f64], b: &[f64], out_dim: usize, relu: bool) -> Matrix {
    let in_dim = x.cols();
    let mut out = Matrix::zeros(x.rows(), out_dim);
    for r in 0..x.rows() {
        let xr = x.row(r);
        let yr = out.row_mut(r);
        yr.copy_from_slice(b);
        for (i, &xi) in xr.iter().enumerate().take(in_dim) {
            if xi == 0.0 {
                continue;
            }
            let wrow = &w[i * out_dim..(i + 1) * out_dim];
            for (y, &wij) in yr.iter_mut().zip(wrow) {
                *y += xi * wij;
            }
        }
        if relu {
            yr.iter_mut().for_each(|v| *v = v.max(0.0));
        }
    }
    out
}

/// Activations of every layer; the first is the input, the last the logits.
fn forward_cached(params: &ModelParams, x: &Matrix) -> Result<Vec<Matrix>> {
    if x.cols() != params.input_dim() {
        return Err(Error::Shape(format!(
            "input has {} features, model expects {}",
            x.cols(),
            params.input_dim()
        )));
    }
    let n_layers = params.layer_shapes.len();
    let mut acts = Vec::with_capacity(n_layers + 1);
    acts.push(x.clone());
    for (l, ((_, o), (wo, bo))) in params
        .layer_shapes
        .iter()
        .zip(params.offsets())
        .enumerate()
    {
        let w = &params.values[wo..bo];
        let b = &params.values[bo..bo + o];
        let next = dense(&acts[l], w, b, *o, l + 1 < n_layers);
        acts.push(next);
    }
    Ok(acts)
}

/// Logits for a raw feature matrix.
pub fn forward_features(params: &ModelParams, x: &Matrix) -> Result<Matrix> {
    let mut acts = forward_cached(params, x)?;
    let logits = acts.pop().expect("at least one layer");
    if logits.as_slice().iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite logits".into()));
    }
    Ok(logits)
}

/// Logits (`n_samples x n_classes`) for a batch.
pub fn forward(params: &ModelParams, batch: &Batch) -> Result<Matrix> {
    forward_features(params, &batch.features)
}

/// Row-wise softmax with max subtraction.
pub fn softmax(logits: &Matrix) -> Matrix {
    let mut probs = logits.clone();
    for r in 0..probs.rows() {
        let row = probs.row_mut(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        row.iter_mut().for_each(|v| *v /= sum);
    }
    probs
}

/// Mean cross-entropy of `labels` under `softmax(logits)`, plus the probabilities.
pub fn softmax_cross_entropy(logits: &Matrix, labels: &[usize]) -> Result<(f64, Matrix)> {
    if logits.rows() != labels.len() {
        return Err(Error::Shape(format!(
            "{} logit rows but {} labels",
            logits.rows(),
            labels.len()
        )));
    }
    if labels.is_empty() {
        return Err(Error::Input("empty label vector".into()));
    }
    let k = logits.cols();
    if let Some(&bad) = labels.iter().find(|&&y| y >= k) {
        return Err(Error::Input(format!("label {bad} out of range for {k} classes")));
    }
    let mut total = 0.0;
    for (r, &y) in labels.iter().enumerate() {
        let row = logits.row(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = row.iter().map(|v| (v - max).exp()).sum::<f64>().ln() + max;
        total += lse - row[y];
    }
    let loss = (total / labels.len() as f64).max(0.0);
    Ok((loss, softmax(logits)))
}

/// Mean cross-entropy of `params` on `batch`.
pub fn loss(params: &ModelParams, batch: &Batch) -> Result<f64> {
    let logits = forward(params, batch)?;
    softmax_cross_entropy(&logits, &batch.labels).map(|(l, _)| l)
}

/// Backpropagates an arbitrary output-layer gradient through the network.
///
/// `output_grad` receives the network outputs and returns the loss together
/// with dLoss/dOutputs (same shape as the outputs).
pub fn backward_with<F>(params: &ModelParams, x: &Matrix, output_grad: F) -> Result<(f64, Gradient)>
where
    F: FnOnce(&Matrix) -> Result<(f64, Matrix)>,
{
    let acts = forward_cached(params, x)?;
    let n_layers = params.layer_shapes.len();
    let (loss, mut delta) = output_grad(&acts[n_layers])?;
    if delta.rows() != x.rows() || delta.cols() != params.output_dim() {
        return Err(Error::Shape("output gradient has the wrong shape".into()));
    }

    let offsets = params.offsets();
    let mut grad = vec![0.0; params.values.len()];
    for l in (0..n_layers).rev() {
        let (in_dim, out_dim) = params.layer_shapes[l];
        let (wo, bo) = offsets[l];
        let a = &acts[l];
        {
            let (gw, rest) = grad[wo..].split_at_mut(bo - wo);
            let gb = &mut rest[..out_dim];
            for r in 0..a.rows() {
                let ar = a.row(r);
                let dr = delta.row(r);
                for (g, &d) in gb.iter_mut().zip(dr) {
                    *g += d;
                }
                for (i, &ai) in ar.iter().enumerate() {
                    if ai == 0.0 {
                        continue;
                    }
                    let grow = &mut gw[i * out_dim..(i + 1) * out_dim];
                    for (g, &d) in grow.iter_mut().zip(dr) {
                        *g += ai * d;
                    }
                }
            }
        }
        if l > 0 {
            let w = &params.values[wo..bo];
            let mut prev = Matrix::zeros(a.rows(), in_dim);
            for r in 0..a.rows() {
                let dr = delta.row(r);
                let ar = a.row(r);
                let pr = prev.row_mut(r);
                for i in 0..in_dim {
                    // ReLU derivative: the activation is positive iff its pre-activation was.
                    if ar[i] > 0.0 {
                        let wrow = &w[i * out_dim..(i + 1) * out_dim];
                        pr[i] = wrow.iter().zip(dr).map(|(w, d)| w * d).sum();
                    }
                }
            }
            delta = prev;
        }
    }
    if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::Numeric("non-finite loss or gradient".into()));
    }
    Ok((loss, Gradient(grad)))
}

/// Loss and exact gradient of mean softmax cross-entropy with respect to `params`.
pub fn backward(params: &ModelParams, batch: &Batch) -> Result<(f64, Gradient)> {
    if batch.features.rows() != batch.labels.len() {
        return Err(Error::Shape("batch rows and labels disagree".into()));
    }
    backward_with(params, &batch.features, |logits| {
        let (loss, mut probs) = softmax_cross_entropy(logits, &batch.labels)?;
        let n = batch.labels.len() as f64;
        for (r, &y) in batch.labels.iter().enumerate() {
            let row = probs.row_mut(r);
            row[y] -= 1.0;
            row.iter_mut().for_each(|v| *v /= n);
        }
        Ok((loss, probs))
    })
}

fn check_update(params: &ModelParams, grad: &Gradient, lr: f64) -> Result<()> {
    if grad.0.len() != params.values.len() {
        return Err(Error::Shape(format!(
            "gradient has {} entries, params {}",
            grad.0.len(),
            params.values.len()
        )));
    }
    if !(lr >= 0.0 && lr.is_finite()) {
        return Err(Error::Config(format!("invalid learning rate {lr}")));
    }
    if grad.0.iter().any(|g| !g.is_finite()) {
        return Err(Error::Numeric("non-finite gradient".into()));
    }
    Ok(())
}

/// In-place plain gradient descent step.
pub fn sgd_step_in_place(params: &mut ModelParams, grad: &Gradient, lr: f64) -> Result<()> {
    check_update(params, grad, lr)?;
    for (p, g) in params.values.iter_mut().zip(&grad.0) {
        *p -= lr * g;
    }
    Ok(())
}

pub fn sgd_step(params: &ModelParams, grad: &Gradient, lr: f64) -> Result<ModelParams> {
    let mut out = params.clone();
    sgd_step_in_place(&mut out, grad, lr)?;
    Ok(out)
}

/// Adam hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First/second moment estimates and step counter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn new(n_params: usize) -> Self {
        AdamState {
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            t: 0,
        }
    }
}

pub fn adam_step_in_place(
    params: &mut ModelParams,
    grad: &Gradient,
    state: &mut AdamState,
    lr: f64,
    cfg: AdamConfig,
) -> Result<()> {
    check_update(params, grad, lr)?;
    if state.m.len() != params.values.len() || state.v.len() != params.values.len() {
        return Err(Error::Shape("adam state does not match params".into()));
    }
    state.t += 1;
    let t = state.t as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for (((p, &g), m), v) in params
        .values
        .iter_mut()
        .zip(&grad.0)
        .zip(state.m.iter_mut())
        .zip(state.v.iter_mut())
    {
        *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
        *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *p -= lr * m_hat / (v_hat.sqrt() + cfg.eps);
    }
    Ok(())
}

pub fn adam_step(
    params: &ModelParams,
    grad: &Gradient,
    state: &AdamState,
    lr: f64,
    cfg: AdamConfig,
) -> Result<(ModelParams, AdamState)> {
    let mut p = params.clone();
    let mut s = state.clone();
    adam_step_in_place(&mut p, grad, &mut s, lr, cfg)?;
    Ok((p, s))
}
