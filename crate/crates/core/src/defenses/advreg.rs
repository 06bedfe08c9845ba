//! Adversarial regularisation.
//!
//! An attack model `h` sees `(one-hot label ⊕ confidence vector)` and is
//! trained to tell training members from reference non-members. The
//! classifier descends its cross-entropy plus `λ` times the attack gain on
//! its own members; the RT variant also includes the gain's reference term.
//! For every training batch a Bernoulli draw with `p = 1/(ratio+1)` decides
//! whether the classifier (1) or the attack model (0) is updated.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::werm::weighted_gradient;
use super::{DefenseKind, Session};
use crate::datasets::{Batch, BatchStream};
use crate::error::{Error, Result};
use crate::numeric::{
    clamped_ln, cross_entropy, softmax_backward, Gradients, Matrix, MlpModel, OptimizerState,
    OutputActivation,
};
use crate::seed;

/// Bernoulli schedule choosing which player moves on each batch.
#[derive(Debug, Clone)]
pub struct UpdateSchedule {
    rng: ChaCha8Rng,
    p_classifier: f64,
}

impl UpdateSchedule {
    pub fn new(update_ratio: usize, seed: u64) -> Self {
        Self {
            rng: seed::rng(seed),
            p_classifier: 1.0 / (update_ratio as f64 + 1.0),
        }
    }

    /// True when the classifier should be updated.
    pub fn next_is_classifier(&mut self) -> bool {
        self.rng.random_bool(self.p_classifier)
    }
}

/// Attack-model inputs: one-hot labels joined with confidence vectors.
pub fn attack_features(confidences: &Matrix, labels: &[usize]) -> Result<Matrix> {
    let k = confidences.cols();
    let mut onehot = Matrix::zeros(labels.len(), k);
    for (i, &y) in labels.iter().enumerate() {
        if y >= k {
            return Err(Error::Index(format!("label {y} with {k} classes")));
        }
        onehot.set(i, y, 1.0);
    }
    onehot.hstack(confidences)
}

/// Attack gain `mean log h(members) + mean log(1 − h(nonmembers))`.
pub fn attack_gain(attack: &MlpModel, members: &Matrix, nonmembers: &Matrix) -> Result<f64> {
    let hm = attack.predict(members)?;
    let hn = attack.predict(nonmembers)?;
    let mean = |v: &[f64], f: &dyn Fn(f64) -> f64| {
        if v.is_empty() {
            0.0
        } else {
            v.iter().map(|&x| f(x)).sum::<f64>() / v.len() as f64
        }
    };
    Ok(mean(hm.as_slice(), &clamped_ln) + mean(hn.as_slice(), &|h| clamped_ln(1.0 - h)))
}

/// One ascent step of the attack gain on the given feature batches.
pub fn attack_step(
    attack: &mut MlpModel,
    optimizer: &mut OptimizerState,
    members: &Matrix,
    nonmembers: &Matrix,
) -> Result<()> {
    let (m, n) = (members.rows(), nonmembers.rows());
    if m == 0 || n == 0 {
        return Ok(());
    }
    let x = members.vstack(nonmembers)?;
    let labels: Vec<usize> = (0..m + n).map(|i| usize::from(i < m)).collect();
    let weights: Vec<f64> = (0..m + n)
        .map(|i| if i < m { 1.0 / m as f64 } else { 1.0 / n as f64 })
        .collect();
    let (_, cache) = attack.forward(&x)?;
    let grads = attack.backward(&cache, &labels, &weights)?;
    optimizer.step(attack, &grads)
}

/// Gradient of `λ · scale · Σ log g(h(x_i))` pulled back to the classifier
/// logits of `probs`, where `g = h` for members and `g = 1 − h` otherwise.
fn gain_logit_gradient(
    attack: &MlpModel,
    probs: &Matrix,
    labels: &[usize],
    member: bool,
    scale: f64,
) -> Result<(Matrix, f64)> {
    let k = probs.cols();
    let x = attack_features(probs, labels)?;
    let (h, cache) = attack.forward(&x)?;
    let mut dz = Matrix::zeros(h.rows(), 1);
    let mut value = 0.0;
    for i in 0..h.rows() {
        let hi = h.get(i, 0);
        // d log σ(z)/dz = 1 − σ(z) and d log(1 − σ(z))/dz = −σ(z).
        let (v, d) = if member {
            (clamped_ln(hi), 1.0 - hi)
        } else {
            (clamped_ln(1.0 - hi), -hi)
        };
        value += v;
        dz.set(i, 0, scale * d);
    }
    let (_, dx) = attack.backward_from_logits(&cache, &dz, true)?;
    let dx = dx.expect("input gradient requested");
    let dprobs_rows: Vec<&[f64]> = dx.row_iter().map(|r| &r[k..]).collect();
    let dprobs = Matrix::from_rows(&dprobs_rows)?;
    Ok((softmax_backward(probs, &dprobs)?, scale * value))
}

/// Classifier objective gradient: mean cross-entropy on `bt` plus `λ` times
/// the member gain term, plus the reference term when `br` is given.
pub fn classifier_gradient(
    model: &MlpModel,
    attack: &MlpModel,
    bt: &Batch,
    br: Option<&Batch>,
    lambda: f64,
) -> Result<(Gradients, f64)> {
    if lambda == 0.0 {
        return weighted_gradient(model, Some(bt), None, 0.0);
    }
    let m = bt.len() as f64;
    let (probs, cache) = model.forward(&bt.features)?;
    let (ce, _) = cross_entropy(&probs, &bt.labels)?;
    let mut dlogits = model.loss_logit_gradient(&probs, &bt.labels, &vec![1.0 / m; bt.len()])?;
    let (dreg, gain_t) = gain_logit_gradient(attack, &probs, &bt.labels, true, lambda / m)?;
    for (a, b) in dlogits.as_mut_slice().iter_mut().zip(dreg.as_slice()) {
        *a += b;
    }
    let (mut grads, _) = model.backward_from_logits(&cache, &dlogits, false)?;
    let mut loss = ce + gain_t;
    if let Some(br) = br.filter(|b| !b.is_empty()) {
        let n = br.len() as f64;
        let (probs_r, cache_r) = model.forward(&br.features)?;
        let (dr, gain_r) = gain_logit_gradient(attack, &probs_r, &br.labels, false, lambda / n)?;
        let (gr, _) = model.backward_from_logits(&cache_r, &dr, false)?;
        grads.add_assign(&gr);
        loss += gain_r;
    }
    Ok((grads, loss))
}

pub(crate) struct AdvRegState {
    attack: MlpModel,
    attack_optimizer: OptimizerState,
    schedule: UpdateSchedule,
    train_stream: BatchStream,
    reference_stream: BatchStream,
    classifier_updates: u64,
    attack_updates: u64,
}

impl AdvRegState {
    pub fn new(s: &Session<'_>, run_seed: u64) -> Result<Self> {
        if s.train.is_empty() || s.reference.is_empty() {
            return Err(Error::Config(
                "adversarial regularisation needs training and reference data".into(),
            ));
        }
        let k = s.model.output_dim();
        let mut sizes = vec![2 * k];
        sizes.extend_from_slice(&s.spec.attack_hidden);
        sizes.push(1);
        let mut init = seed::rng(seed::derive(run_seed, &[seed::stream::ATTACK_INIT]));
        let attack = MlpModel::new(&sizes, OutputActivation::Sigmoid, &mut init)?;
        let batch_seed = seed::derive(run_seed, &[seed::stream::BATCHES]);
        let ref_seed = seed::derive(run_seed, &[seed::stream::REFERENCE_BATCHES]);
        Ok(Self {
            attack,
            attack_optimizer: OptimizerState::new(s.spec.optimizer, s.spec.learning_rate),
            schedule: UpdateSchedule::new(
                s.spec.update_ratio,
                seed::derive(run_seed, &[seed::stream::SCHEDULE]),
            ),
            train_stream: BatchStream::new(s.train.len(), s.spec.batch_size, batch_seed)?,
            reference_stream: BatchStream::new(s.reference.len(), s.spec.batch_size, ref_seed)?,
            classifier_updates: 0,
            attack_updates: 0,
        })
    }

    pub fn epoch(&mut self, s: &mut Session<'_>) -> Result<(f64, u64)> {
        let batches = self.train_stream.batches_per_epoch();
        let warmup = s.epoch < s.spec.warmup_epochs;
        let rt = s.spec.kind == DefenseKind::AdvRegRt;
        let mut total = 0.0;
        let mut steps = 0;
        for _ in 0..batches {
            let bt = self.train_stream.next_batch(s.train);
            if warmup {
                let (g, loss) = weighted_gradient(&s.model, Some(&bt), None, 0.0)?;
                s.optimizer.step(&mut s.model, &g)?;
                total += loss;
                steps += 1;
                continue;
            }
            let br = Batch::gather(s.reference, self.reference_stream.take(bt.len()));
            if self.schedule.next_is_classifier() {
                let (g, loss) = classifier_gradient(
                    &s.model,
                    &self.attack,
                    &bt,
                    rt.then_some(&br),
                    s.spec.lambda,
                )?;
                s.optimizer.step(&mut s.model, &g)?;
                total += loss;
                steps += 1;
                self.classifier_updates += 1;
            } else {
                let pt = s.model.predict(&bt.features)?;
                let pr = s.model.predict(&br.features)?;
                let (ce, _) = cross_entropy(&pt, &bt.labels)?;
                attack_step(
                    &mut self.attack,
                    &mut self.attack_optimizer,
                    &attack_features(&pt, &bt.labels)?,
                    &attack_features(&pr, &br.labels)?,
                )?;
                total += ce;
                self.attack_updates += 1;
            }
        }
        Ok((total / batches.max(1) as f64, steps))
    }
}
