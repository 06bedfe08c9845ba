//! Dense feed-forward networks with ReLU hidden layers.
//!
//! Weights of layer `l` are stored as an `in × out` matrix so a batch of
//! row-vector inputs propagates as `Z = A·W + b`. The output layer is either a
//! softmax (classifiers) or a single sigmoid unit (membership-attack models).
//!
//! All gradients are of *weighted sums* of per-example losses, which is what
//! every weighted-risk trainer in this crate needs: the mean loss is the
//! special case where every example carries weight `1/B`.

use rand::distr::{Distribution, Uniform};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::matrix::Matrix;
use crate::error::{Error, Result};

/// Clamp applied inside every logarithm of a probability.
pub const LOG_CLAMP: f64 = 1e-12;

#[inline]
pub fn clamped_ln(p: f64) -> f64 {
    p.max(LOG_CLAMP).ln()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputActivation {
    /// Probability vector over classes.
    Softmax,
    /// A single unit in `(0, 1)`.
    Sigmoid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpModel {
    layer_sizes: Vec<usize>,
    weights: Vec<Matrix>,
    biases: Vec<Vec<f64>>,
    output: OutputActivation,
}

/// Activations recorded by [`MlpModel::forward`]; enough to run any backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// `inputs[l]` is the input to layer `l` (the batch itself for `l = 0`).
    inputs: Vec<Matrix>,
    outputs: Matrix,
}

impl ForwardCache {
    pub fn outputs(&self) -> &Matrix {
        &self.outputs
    }

    pub fn batch_size(&self) -> usize {
        self.outputs.rows()
    }
}

/// Gradient of a scalar objective with respect to every parameter of a model.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Matrix>,
    pub biases: Vec<Vec<f64>>,
}

impl MlpModel {
    /// Glorot-uniform weights drawn from `rng`, zero biases.
    pub fn new<R: Rng + ?Sized>(
        layer_sizes: &[usize],
        output: OutputActivation,
        rng: &mut R,
    ) -> Result<Self> {
        let mut model = Self::zeros(layer_sizes, output)?;
        for w in &mut model.weights {
            let limit = (6.0 / (w.rows() + w.cols()) as f64).sqrt();
            let dist = Uniform::new_inclusive(-limit, limit).expect("finite limits");
            for v in w.as_mut_slice() {
                *v = dist.sample(rng);
            }
        }
        Ok(model)
    }

    pub fn zeros(layer_sizes: &[usize], output: OutputActivation) -> Result<Self> {
        if layer_sizes.len() < 2 {
            return Err(Error::Config(
                "a network needs at least an input and an output layer".into(),
            ));
        }
        if layer_sizes.contains(&0) {
            return Err(Error::Config(format!(
                "layer sizes must be positive: {layer_sizes:?}"
            )));
        }
        let out = *layer_sizes.last().unwrap();
        if output == OutputActivation::Sigmoid && out != 1 {
            return Err(Error::Config(format!(
                "a sigmoid output layer has one unit, got {out}"
            )));
        }
        let weights = layer_sizes
            .windows(2)
            .map(|p| Matrix::zeros(p[0], p[1]))
            .collect();
        let biases = layer_sizes[1..].iter().map(|&n| vec![0.0; n]).collect();
        Ok(Self {
            layer_sizes: layer_sizes.to_vec(),
            weights,
            biases,
            output,
        })
    }

    /// Reassembles a model from raw parts, checking that dimensions agree.
    pub fn from_parts(
        layer_sizes: Vec<usize>,
        weights: Vec<Matrix>,
        biases: Vec<Vec<f64>>,
        output: OutputActivation,
    ) -> Result<Self> {
        let template = Self::zeros(&layer_sizes, output)?;
        let shapes_ok = weights.len() == template.weights.len()
            && biases.len() == template.biases.len()
            && weights
                .iter()
                .zip(&template.weights)
                .all(|(w, t)| w.rows() == t.rows() && w.cols() == t.cols())
            && biases
                .iter()
                .zip(&template.biases)
                .all(|(b, t)| b.len() == t.len());
        if !shapes_ok {
            return Err(Error::Shape(format!(
                "parameters do not match layer sizes {layer_sizes:?}"
            )));
        }
        Ok(Self {
            layer_sizes,
            weights,
            biases,
            output,
        })
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    pub fn output_activation(&self) -> OutputActivation {
        self.output
    }

    pub fn layer_count(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[Matrix] {
        &self.weights
    }

    pub fn biases(&self) -> &[Vec<f64>] {
        &self.biases
    }

    pub fn weights_mut(&mut self) -> &mut [Matrix] {
        &mut self.weights
    }

    pub fn biases_mut(&mut self) -> &mut [Vec<f64>] {
        &mut self.biases
    }

    pub fn parameter_count(&self) -> usize {
        self.layer_sizes
            .windows(2)
            .map(|p| p[0] * p[1] + p[1])
            .sum()
    }

    fn check_input(&self, batch: &Matrix) -> Result<()> {
        if batch.cols() != self.input_dim() {
            return Err(Error::Shape(format!(
                "batch has {} features, model expects {}",
                batch.cols(),
                self.input_dim()
            )));
        }
        Ok(())
    }

    /// Output probabilities for each row, plus the cache needed by backward.
    pub fn forward(&self, batch: &Matrix) -> Result<(Matrix, ForwardCache)> {
        self.check_input(batch)?;
        let mut inputs = Vec::with_capacity(self.layer_count());
        let mut current = batch.clone();
        let last = self.layer_count() - 1;
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let mut z = current.matmul(w)?;
            add_bias(&mut z, b);
            inputs.push(current);
            if l < last {
                z.as_mut_slice().iter_mut().for_each(|v| *v = v.max(0.0));
            } else {
                self.activate_output(&mut z);
            }
            current = z;
        }
        let cache = ForwardCache {
            inputs,
            outputs: current.clone(),
        };
        Ok((current, cache))
    }

    /// Forward pass without keeping activations.
    pub fn predict(&self, batch: &Matrix) -> Result<Matrix> {
        self.check_input(batch)?;
        let mut current = batch.matmul(&self.weights[0])?;
        add_bias(&mut current, &self.biases[0]);
        for l in 1..self.layer_count() {
            current.as_mut_slice().iter_mut().for_each(|v| *v = v.max(0.0));
            let mut z = current.matmul(&self.weights[l])?;
            add_bias(&mut z, &self.biases[l]);
            current = z;
        }
        self.activate_output(&mut current);
        Ok(current)
    }

    fn activate_output(&self, z: &mut Matrix) {
        match self.output {
            OutputActivation::Softmax => {
                for r in 0..z.rows() {
                    softmax_in_place(z.row_mut(r));
                }
            }
            OutputActivation::Sigmoid => {
                z.as_mut_slice().iter_mut().for_each(|v| *v = sigmoid(*v));
            }
        }
    }

    /// Gradient of `Σ_i example_weights[i] · ℓ_i`, where `ℓ_i` is the
    /// cross-entropy of row `i` (binary cross-entropy for a sigmoid output,
    /// with labels in `{0, 1}`).
    pub fn backward(
        &self,
        cache: &ForwardCache,
        labels: &[usize],
        example_weights: &[f64],
    ) -> Result<Gradients> {
        let dlogits = self.loss_logit_gradient(cache.outputs(), labels, example_weights)?;
        Ok(self.backward_from_logits(cache, &dlogits, false)?.0)
    }

    /// `∂(Σ_i w_i ℓ_i)/∂z` for the output pre-activations `z`.
    pub fn loss_logit_gradient(
        &self,
        outputs: &Matrix,
        labels: &[usize],
        example_weights: &[f64],
    ) -> Result<Matrix> {
        let n = outputs.rows();
        if labels.len() != n || example_weights.len() != n {
            return Err(Error::Shape(format!(
                "{} outputs, {} labels, {} weights",
                n,
                labels.len(),
                example_weights.len()
            )));
        }
        let k = outputs.cols();
        let mut d = outputs.clone();
        for (i, (&y, &wt)) in labels.iter().zip(example_weights).enumerate() {
            let row = d.row_mut(i);
            match self.output {
                OutputActivation::Softmax => {
                    if y >= k {
                        return Err(Error::Index(format!("label {y} with {k} classes")));
                    }
                    row[y] -= 1.0;
                }
                OutputActivation::Sigmoid => {
                    if y > 1 {
                        return Err(Error::Index(format!("binary label {y}")));
                    }
                    row[0] -= y as f64;
                }
            }
            row.iter_mut().for_each(|v| *v *= wt);
        }
        Ok(d)
    }

    /// Backpropagates an arbitrary output-pre-activation gradient. When
    /// `want_input_grad` is set, also returns the gradient with respect to the
    /// batch itself.
    pub fn backward_from_logits(
        &self,
        cache: &ForwardCache,
        dlogits: &Matrix,
        want_input_grad: bool,
    ) -> Result<(Gradients, Option<Matrix>)> {
        if dlogits.rows() != cache.batch_size() || dlogits.cols() != self.output_dim() {
            return Err(Error::Shape(format!(
                "output gradient is {}x{}, expected {}x{}",
                dlogits.rows(),
                dlogits.cols(),
                cache.batch_size(),
                self.output_dim()
            )));
        }
        let layers = self.layer_count();
        let mut dw = Vec::with_capacity(layers);
        let mut db = Vec::with_capacity(layers);
        let mut delta = dlogits.clone();
        let mut input_grad = None;
        for l in (0..layers).rev() {
            let a = &cache.inputs[l];
            dw.push(a.t_matmul(&delta)?);
            db.push(delta.column_sums());
            if l > 0 {
                let mut prev = delta.matmul_t(&self.weights[l])?;
                // ReLU derivative: the stored input of layer l is the
                // post-activation of layer l-1.
                for (g, &act) in prev.as_mut_slice().iter_mut().zip(a.as_slice()) {
                    if act <= 0.0 {
                        *g = 0.0;
                    }
                }
                delta = prev;
            } else if want_input_grad {
                input_grad = Some(delta.matmul_t(&self.weights[0])?);
            }
        }
        dw.reverse();
        db.reverse();
        Ok((
            Gradients {
                weights: dw,
                biases: db,
            },
            input_grad,
        ))
    }

    /// One gradient record per example, each equal to `backward` on the
    /// singleton batch with weight 1.
    pub fn per_example_gradients(&self, batch: &Matrix, labels: &[usize]) -> Result<Vec<Gradients>> {
        if batch.rows() == 0 {
            return Err(Error::Shape("per-example gradients of an empty batch".into()));
        }
        if labels.len() != batch.rows() {
            return Err(Error::Shape(format!(
                "{} rows, {} labels",
                batch.rows(),
                labels.len()
            )));
        }
        (0..batch.rows())
            .map(|i| {
                let single = batch.select_rows(&[i]);
                let (_, cache) = self.forward(&single)?;
                self.backward(&cache, &labels[i..=i], &[1.0])
            })
            .collect()
    }

    /// Applies `θ ← θ + scale · g`.
    pub fn apply_update(&mut self, grads: &Gradients, scale: f64) {
        for (w, g) in self.weights.iter_mut().zip(&grads.weights) {
            for (p, d) in w.as_mut_slice().iter_mut().zip(g.as_slice()) {
                *p += scale * d;
            }
        }
        for (b, g) in self.biases.iter_mut().zip(&grads.biases) {
            for (p, d) in b.iter_mut().zip(g) {
                *p += scale * d;
            }
        }
    }

    /// Flat view over all parameters, layer by layer (weights then bias).
    pub fn parameters_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.weights
            .iter_mut()
            .zip(self.biases.iter_mut())
            .flat_map(|(w, b)| w.as_mut_slice().iter_mut().chain(b.iter_mut()))
    }

    pub fn parameters(&self) -> impl Iterator<Item = &f64> {
        self.weights
            .iter()
            .zip(self.biases.iter())
            .flat_map(|(w, b)| w.as_slice().iter().chain(b.iter()))
    }
}

fn add_bias(z: &mut Matrix, bias: &[f64]) {
    for r in 0..z.rows() {
        for (v, b) in z.row_mut(r).iter_mut().zip(bias) {
            *v += b;
        }
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    row.iter_mut().for_each(|v| *v /= sum);
}

/// Pulls a gradient with respect to softmax probabilities back to the logits:
/// `dz_j = p_j (dp_j − Σ_i p_i dp_i)`.
pub fn softmax_backward(probs: &Matrix, dprobs: &Matrix) -> Result<Matrix> {
    if probs.rows() != dprobs.rows() || probs.cols() != dprobs.cols() {
        return Err(Error::Shape("softmax backward shapes differ".into()));
    }
    let mut out = Matrix::zeros(probs.rows(), probs.cols());
    for r in 0..probs.rows() {
        let p = probs.row(r);
        let dp = dprobs.row(r);
        let dot: f64 = p.iter().zip(dp).map(|(a, b)| a * b).sum();
        for (o, (pi, dpi)) in out.row_mut(r).iter_mut().zip(p.iter().zip(dp)) {
            *o = pi * (dpi - dot);
        }
    }
    Ok(out)
}

/// Mean and per-example cross-entropy `−ln max(p_y, 1e-12)`.
pub fn cross_entropy(confidences: &Matrix, labels: &[usize]) -> Result<(f64, Vec<f64>)> {
    if labels.len() != confidences.rows() {
        return Err(Error::Shape(format!(
            "{} rows, {} labels",
            confidences.rows(),
            labels.len()
        )));
    }
    let k = confidences.cols();
    let per_example = labels
        .iter()
        .enumerate()
        .map(|(i, &y)| {
            if y >= k {
                Err(Error::Index(format!("label {y} with {k} classes")))
            } else {
                Ok(-clamped_ln(confidences.get(i, y)))
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let mean = if per_example.is_empty() {
        0.0
    } else {
        per_example.iter().sum::<f64>() / per_example.len() as f64
    };
    Ok((mean, per_example))
}

/// Fraction of rows whose argmax equals the label.
pub fn accuracy(confidences: &Matrix, labels: &[usize]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    let hits = confidences
        .argmax_rows()
        .iter()
        .zip(labels)
        .filter(|(p, y)| p == y)
        .count();
    hits as f64 / labels.len() as f64
}

impl Gradients {
    pub fn zeros_like(model: &MlpModel) -> Self {
        Self {
            weights: model
                .weights
                .iter()
                .map(|w| Matrix::zeros(w.rows(), w.cols()))
                .collect(),
            biases: model.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
        }
    }

    pub fn layer_count(&self) -> usize {
        self.weights.len()
    }

    pub fn values(&self) -> impl Iterator<Item = &f64> {
        self.weights
            .iter()
            .zip(&self.biases)
            .flat_map(|(w, b)| w.as_slice().iter().chain(b.iter()))
    }

    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.weights
            .iter_mut()
            .zip(self.biases.iter_mut())
            .flat_map(|(w, b)| w.as_mut_slice().iter_mut().chain(b.iter_mut()))
    }

    pub fn len(&self) -> usize {
        self.weights.iter().map(|w| w.as_slice().len()).sum::<usize>()
            + self.biases.iter().map(Vec::len).sum::<usize>()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn l2_norm(&self) -> f64 {
        self.values().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn scale(&mut self, factor: f64) {
        self.values_mut().for_each(|v| *v *= factor);
    }

    /// `self += factor · other`.
    pub fn add_scaled(&mut self, other: &Gradients, factor: f64) {
        for (a, b) in self.values_mut().zip(other.values()) {
            *a += factor * b;
        }
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.values_mut().zip(other.values()) {
            *a += b;
        }
    }

    pub fn max_abs_diff(&self, other: &Gradients) -> f64 {
        self.values()
            .zip(other.values())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Index of the first layer holding a non-finite entry.
    pub fn first_non_finite_layer(&self) -> Option<usize> {
        (0..self.layer_count()).find(|&l| {
            !self.weights[l].is_finite() || self.biases[l].iter().any(|v| !v.is_finite())
        })
    }

    pub fn matches_shape(&self, model: &MlpModel) -> bool {
        self.weights.len() == model.weights.len()
            && self
                .weights
                .iter()
                .zip(&model.weights)
                .all(|(g, w)| g.rows() == w.rows() && g.cols() == w.cols())
            && self
                .biases
                .iter()
                .zip(&model.biases)
                .all(|(g, b)| g.len() == b.len())
    }
}
