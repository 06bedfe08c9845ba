//! Weighted DP-SGD.
//!
//! Lots of `L_T = round(α·N_T)` training and `L_R = round(α·N_R)` reference
//! examples are drawn per step. Per-example gradients are clipped to norm
//! `C`, summed with weights `(1−w)/L_T` and `w/L_R`, and isotropic Gaussian
//! noise of standard deviation `σC` is added to the sum.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::werm::{check_sides, paired_batches};
use super::{DpParams, Session};
use crate::datasets::{Batch, BatchStream};
use crate::error::Result;
use crate::numeric::{cross_entropy, Gradients, MlpModel};
use crate::seed;

/// Scales `g` by `1 / max(1, ‖g‖/C)`.
pub fn clip_gradient(g: &mut Gradients, clip_norm: f64) {
    let norm = g.l2_norm();
    let factor = (norm / clip_norm).max(1.0);
    if factor > 1.0 {
        g.scale(1.0 / factor);
    }
}

/// Adds `N(0, std²)` independently to every coordinate.
pub fn gaussian_noise<R: Rng + ?Sized>(g: &mut Gradients, std: f64, rng: &mut R) {
    for v in g.values_mut() {
        let z: f64 = rng.sample(StandardNormal);
        *v += std * z;
    }
}

/// Lot size `round(α·n)`, at least one for a non-empty split.
pub fn lot_size(sampling_ratio: f64, n: usize) -> usize {
    if n == 0 {
        0
    } else {
        ((sampling_ratio * n as f64).round() as usize).clamp(1, n)
    }
}

/// The noisy weighted gradient of one step. Sides with zero weight or no
/// batch are skipped.
pub fn dp_gradient<R: Rng + ?Sized>(
    model: &MlpModel,
    train_batch: Option<&Batch>,
    reference_batch: Option<&Batch>,
    w: f64,
    dp: &DpParams,
    noise: &mut R,
) -> Result<(Gradients, f64)> {
    let mut total = Gradients::zeros_like(model);
    let mut loss = 0.0;
    for (batch, weight) in [(train_batch, 1.0 - w), (reference_batch, w)] {
        let Some(b) = batch.filter(|b| weight > 0.0 && !b.is_empty()) else {
            continue;
        };
        let per = weight / b.len() as f64;
        let mut side = Gradients::zeros_like(model);
        for mut g in model.per_example_gradients(&b.features, &b.labels)? {
            clip_gradient(&mut g, dp.clip_norm);
            side.add_assign(&g);
        }
        total.add_scaled(&side, per);
        let (mean, _) = cross_entropy(&model.predict(&b.features)?, &b.labels)?;
        loss += weight * mean;
    }
    if dp.noise_scale > 0.0 {
        gaussian_noise(&mut total, dp.noise_scale * dp.clip_norm, noise);
    }
    Ok((total, loss))
}

pub(crate) struct DpSgdState {
    train_stream: BatchStream,
    reference_stream: BatchStream,
    noise: ChaCha8Rng,
    dp: DpParams,
}

impl DpSgdState {
    pub fn new(s: &Session<'_>, run_seed: u64) -> Result<Self> {
        let w = s.spec.reference_weight();
        check_sides(s.train, s.reference, w)?;
        let dp = s.spec.dp.expect("validated spec carries dp parameters");
        let batch_seed = seed::derive(run_seed, &[seed::stream::BATCHES]);
        let lt = lot_size(dp.sampling_ratio, s.train.len()).max(1);
        let lr = lot_size(dp.sampling_ratio, s.reference.len()).max(1);
        Ok(Self {
            train_stream: BatchStream::new(s.train.len(), lt, batch_seed)?,
            reference_stream: BatchStream::new(s.reference.len(), lr, batch_seed)?,
            noise: seed::rng(seed::derive(run_seed, &[seed::stream::NOISE])),
            dp,
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
            let (g, loss) = dp_gradient(&s.model, bt.as_ref(), br.as_ref(), w, &self.dp, &mut self.noise)?;
            s.optimizer.step(&mut s.model, &g)?;
            total += loss;
        }
        Ok((total / batches.max(1) as f64, batches as u64))
    }
}
