//! Weighted empirical risk minimisation.
//!
//! Each step pairs a training batch `B_T` with a reference batch `B_R` of
//! size `round(|B_T|·N_R/N_T)` and descends
//! `(1−w)·mean_{B_T} ℓ + w·mean_{B_R} ℓ`, an unbiased estimate of the
//! weighted risk. Both batch streams share one permutation seed, so swapping
//! the datasets (and `w` for `1−w`) replays the same index sequence.

use super::Session;
use crate::datasets::{Batch, BatchStream, LabeledDataset};
use crate::error::{Error, Result};
use crate::numeric::{cross_entropy, Gradients, MlpModel};
use crate::seed;

pub(crate) struct WermState {
    train_stream: BatchStream,
    reference_stream: BatchStream,
}

impl WermState {
    pub fn new(s: &Session<'_>, run_seed: u64) -> Result<Self> {
        let w = s.spec.reference_weight();
        check_sides(s.train, s.reference, w)?;
        let batch_seed = seed::derive(run_seed, &[seed::stream::BATCHES]);
        Ok(Self {
            train_stream: BatchStream::new(s.train.len(), s.spec.batch_size, batch_seed)?,
            reference_stream: BatchStream::new(s.reference.len(), s.spec.batch_size, batch_seed)?,
        })
    }

    pub fn epoch(&mut self, s: &mut Session<'_>) -> Result<(f64, u64)> {
        let w = s.spec.reference_weight();
        let batches = if w < 1.0 {
            self.train_stream.batches_per_epoch()
        } else {
            self.reference_stream.batches_per_epoch()
        };
        let mut total = 0.0;
        for _ in 0..batches {
            let (bt, br) = paired_batches(
                &mut self.train_stream,
                &mut self.reference_stream,
                s.train,
                s.reference,
                w,
            );
            let (grads, loss) = weighted_gradient(&s.model, bt.as_ref(), br.as_ref(), w)?;
            s.optimizer.step(&mut s.model, &grads)?;
            total += loss;
        }
        Ok((total / batches.max(1) as f64, batches as u64))
    }
}

pub(crate) fn check_sides(train: &LabeledDataset, reference: &LabeledDataset, w: f64) -> Result<()> {
    if w < 1.0 && train.is_empty() {
        return Err(Error::Config(format!("training split is empty but w = {w} < 1")));
    }
    if w > 0.0 && reference.is_empty() {
        return Err(Error::Config(format!("reference split is empty but w = {w} > 0")));
    }
    Ok(())
}

/// Reference batch size paired with a training batch of `bt` examples.
pub(crate) fn reference_batch_len(bt: usize, n_train: usize, n_reference: usize) -> usize {
    if n_reference == 0 || n_train == 0 {
        return 0;
    }
    ((bt as f64 * n_reference as f64 / n_train as f64).round() as usize).max(1)
}

/// Draws the next batch pair. Sides with zero weight are not drawn at all.
pub(crate) fn paired_batches(
    train_stream: &mut BatchStream,
    reference_stream: &mut BatchStream,
    train: &LabeledDataset,
    reference: &LabeledDataset,
    w: f64,
) -> (Option<Batch>, Option<Batch>) {
    if w >= 1.0 {
        let br = reference_stream.next_indices();
        return (None, Some(Batch::gather(reference, br)));
    }
    let bt = train_stream.next_indices();
    let br = if w > 0.0 {
        let m = reference_batch_len(bt.len(), train.len(), reference.len());
        Some(Batch::gather(reference, reference_stream.take(m)))
    } else {
        None
    };
    (Some(Batch::gather(train, bt)), br)
}

/// Gradient and value of `(1−w)·mean_{B_T} ℓ + w·mean_{B_R} ℓ`. A side is
/// skipped entirely when its weight is zero or its batch is absent.
pub fn weighted_gradient(
    model: &MlpModel,
    train_batch: Option<&Batch>,
    reference_batch: Option<&Batch>,
    w: f64,
) -> Result<(Gradients, f64)> {
    let side = |batch: Option<&Batch>, weight: f64| -> Result<Option<(Gradients, f64)>> {
        match batch {
            Some(b) if weight > 0.0 && !b.is_empty() => {
                let (probs, cache) = model.forward(&b.features)?;
                let (mean, _) = cross_entropy(&probs, &b.labels)?;
                let per = weight / b.len() as f64;
                let g = model.backward(&cache, &b.labels, &vec![per; b.len()])?;
                Ok(Some((g, weight * mean)))
            }
            _ => Ok(None),
        }
    };
    let t = side(train_batch, 1.0 - w)?;
    let r = side(reference_batch, w)?;
    Ok(match (t, r) {
        (Some((mut g, lt)), Some((gr, lr))) => {
            g.add_assign(&gr);
            (g, lt + lr)
        }
        (Some(x), None) | (None, Some(x)) => x,
        (None, None) => (Gradients::zeros_like(model), 0.0),
    })
}
