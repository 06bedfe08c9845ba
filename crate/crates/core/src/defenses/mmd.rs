//! Maximum-mean-discrepancy regularisation.
//!
//! Each step draws equal-size batches from the training and reference
//! splits. For every label present in both batches the biased MMD² between
//! the two groups of confidence vectors is computed under a Gaussian kernel;
//! the classifier minimises its mean cross-entropy plus `λ` times the average
//! over those labels. Labels missing from the reference batch are skipped.

use super::werm::weighted_gradient;
use super::Session;
use crate::datasets::{Batch, BatchStream};
use crate::error::{Error, Result};
use crate::numeric::{cross_entropy, softmax_backward, Gradients, Matrix, MlpModel};
use crate::seed;

/// `exp(−‖a−b‖² / (2·variance))`.
pub fn gaussian_kernel(a: &[f64], b: &[f64], variance: f64) -> f64 {
    (-squared_distance(a, b) / (2.0 * variance)).exp()
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Biased estimator of MMD² between the rows of `x` and the rows of `y`.
pub fn mmd2(x: &Matrix, y: &Matrix, variance: f64) -> f64 {
    mmd2_with_gradient(x, y, variance).0
}

/// MMD² and its gradients with respect to every row of `x` and `y`.
pub fn mmd2_with_gradient(x: &Matrix, y: &Matrix, variance: f64) -> (f64, Matrix, Matrix) {
    let (n, m) = (x.rows(), y.rows());
    let mut dx = Matrix::zeros(n, x.cols());
    let mut dy = Matrix::zeros(m, y.cols());
    if n == 0 || m == 0 {
        return (0.0, dx, dy);
    }
    let (nf, mf) = (n as f64, m as f64);
    let mut value = 0.0;

    // Within-sample terms; ∂k(a,b)/∂a = −k·(a−b)/variance.
    let within = |z: &Matrix, dz: &mut Matrix, coef: f64| -> f64 {
        let mut total = 0.0;
        for i in 0..z.rows() {
            for j in 0..z.rows() {
                let k = gaussian_kernel(z.row(i), z.row(j), variance);
                total += k;
                if i != j {
                    let g = -2.0 * coef * k / variance;
                    for (c, (&a, &b)) in z.row(i).iter().zip(z.row(j)).enumerate() {
                        let cur = dz.get(i, c);
                        dz.set(i, c, cur + g * (a - b));
                    }
                }
            }
        }
        coef * total
    };
    value += within(x, &mut dx, 1.0 / (nf * nf));
    value += within(y, &mut dy, 1.0 / (mf * mf));

    let cross = -2.0 / (nf * mf);
    let mut total = 0.0;
    for i in 0..n {
        for j in 0..m {
            let k = gaussian_kernel(x.row(i), y.row(j), variance);
            total += k;
            let g = -cross * k / variance;
            for c in 0..x.cols() {
                let diff = x.get(i, c) - y.get(j, c);
                let cur = dx.get(i, c);
                dx.set(i, c, cur + g * diff);
                let cur = dy.get(j, c);
                dy.set(j, c, cur - g * diff);
            }
        }
    }
    value += cross * total;
    (value.max(0.0), dx, dy)
}

/// Average per-label MMD² over labels present in both groups, with gradients
/// for every row of both confidence matrices.
pub fn classwise_mmd2(
    x: &Matrix,
    x_labels: &[usize],
    y: &Matrix,
    y_labels: &[usize],
    variance: f64,
) -> Result<(f64, Matrix, Matrix, usize)> {
    if x.rows() != x_labels.len() || y.rows() != y_labels.len() || x.cols() != y.cols() {
        return Err(Error::Shape("classwise MMD inputs disagree".into()));
    }
    let mut dx = Matrix::zeros(x.rows(), x.cols());
    let mut dy = Matrix::zeros(y.rows(), y.cols());
    let mut labels: Vec<usize> = x_labels.to_vec();
    labels.sort_unstable();
    labels.dedup();
    let mut total = 0.0;
    let mut counted = 0;
    for c in labels {
        let xi: Vec<usize> = (0..x.rows()).filter(|&i| x_labels[i] == c).collect();
        let yi: Vec<usize> = (0..y.rows()).filter(|&i| y_labels[i] == c).collect();
        if yi.is_empty() {
            continue;
        }
        let (v, gx, gy) = mmd2_with_gradient(&x.select_rows(&xi), &y.select_rows(&yi), variance);
        total += v;
        counted += 1;
        for (r, &i) in xi.iter().enumerate() {
            for (d, g) in dx.row_mut(i).iter_mut().zip(gx.row(r)) {
                *d += g;
            }
        }
        for (r, &i) in yi.iter().enumerate() {
            for (d, g) in dy.row_mut(i).iter_mut().zip(gy.row(r)) {
                *d += g;
            }
        }
    }
    if counted > 0 {
        let inv = 1.0 / counted as f64;
        total *= inv;
        dx.as_mut_slice().iter_mut().for_each(|v| *v *= inv);
        dy.as_mut_slice().iter_mut().for_each(|v| *v *= inv);
    }
    Ok((total, dx, dy, counted))
}

/// Gradient of `mean CE(bt) + λ · classwise MMD²(bt, br)`.
pub fn mmd_gradient(
    model: &MlpModel,
    bt: &Batch,
    br: &Batch,
    lambda: f64,
    variance: f64,
) -> Result<(Gradients, f64)> {
    if lambda == 0.0 || br.is_empty() {
        return weighted_gradient(model, Some(bt), None, 0.0);
    }
    let m = bt.len() as f64;
    let (pt, cache_t) = model.forward(&bt.features)?;
    let (pr, cache_r) = model.forward(&br.features)?;
    let (ce, _) = cross_entropy(&pt, &bt.labels)?;
    let (reg, mut dpt, mut dpr, _) = classwise_mmd2(&pt, &bt.labels, &pr, &br.labels, variance)?;
    dpt.as_mut_slice().iter_mut().for_each(|v| *v *= lambda);
    dpr.as_mut_slice().iter_mut().for_each(|v| *v *= lambda);

    let mut dt = model.loss_logit_gradient(&pt, &bt.labels, &vec![1.0 / m; bt.len()])?;
    let reg_t = softmax_backward(&pt, &dpt)?;
    for (a, b) in dt.as_mut_slice().iter_mut().zip(reg_t.as_slice()) {
        *a += b;
    }
    let (mut grads, _) = model.backward_from_logits(&cache_t, &dt, false)?;
    let dr = softmax_backward(&pr, &dpr)?;
    let (gr, _) = model.backward_from_logits(&cache_r, &dr, false)?;
    grads.add_assign(&gr);
    Ok((grads, ce + lambda * reg))
}

pub(crate) struct MmdState {
    train_stream: BatchStream,
    reference_stream: BatchStream,
}

impl MmdState {
    pub fn new(s: &Session<'_>, run_seed: u64) -> Result<Self> {
        if s.train.is_empty() || s.reference.is_empty() {
            return Err(Error::Config(
                "MMD regularisation needs training and reference data".into(),
            ));
        }
        Ok(Self {
            train_stream: BatchStream::new(
                s.train.len(),
                s.spec.batch_size,
                seed::derive(run_seed, &[seed::stream::BATCHES]),
            )?,
            reference_stream: BatchStream::new(
                s.reference.len(),
                s.spec.batch_size,
                seed::derive(run_seed, &[seed::stream::REFERENCE_BATCHES]),
            )?,
        })
    }

    pub fn epoch(&mut self, s: &mut Session<'_>) -> Result<(f64, u64)> {
        let batches = self.train_stream.batches_per_epoch();
        let lambda = if s.epoch < s.spec.warmup_epochs {
            0.0
        } else {
            s.spec.lambda
        };
        let mut total = 0.0;
        for _ in 0..batches {
            let bt = self.train_stream.next_batch(s.train);
            let (g, loss) = if lambda == 0.0 {
                weighted_gradient(&s.model, Some(&bt), None, 0.0)?
            } else {
                let br = Batch::gather(s.reference, self.reference_stream.take(bt.len()));
                mmd_gradient(&s.model, &bt, &br, lambda, s.spec.kernel_variance)?
            };
            s.optimizer.step(&mut s.model, &g)?;
            total += loss;
        }
        Ok((total / batches.max(1) as f64, batches as u64))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::OutputActivation;
    use proptest::prelude::*;
    use rand::Rng;

    /// Direct triple double sum of the biased estimator.
    fn brute_mmd2(x: &[Vec<f64>], y: &[Vec<f64>], var: f64) -> f64 {
        let k = |a: &Vec<f64>, b: &Vec<f64>| {
            let mut d = 0.0;
            for i in 0..a.len() {
                d += (a[i] - b[i]).powi(2);
            }
            (-d / (2.0 * var)).exp()
        };
        let (n, m) = (x.len() as f64, y.len() as f64);
        let mut xx = 0.0;
        for a in x {
            for b in x {
                xx += k(a, b);
            }
        }
        let mut yy = 0.0;
        for a in y {
            for b in y {
                yy += k(a, b);
            }
        }
        let mut xy = 0.0;
        for a in x {
            for b in y {
                xy += k(a, b);
            }
        }
        xx / (n * n) + yy / (m * m) - 2.0 * xy / (n * m)
    }

    fn probs(rows: usize, k: usize, rng: &mut impl Rng) -> Vec<Vec<f64>> {
        (0..rows)
            .map(|_| {
                let mut v: Vec<f64> = (0..k).map(|_| rng.random_range(-2.0..2.0)).collect();
                crate::numeric::softmax_in_place(&mut v);
                v
            })
            .collect()
    }

    #[test]
    fn kernel_of_self_is_one() {
        assert_eq!(gaussian_kernel(&[0.3, 0.7], &[0.3, 0.7], 1.0), 1.0);
        let expected = (-0.5f64 / 2.0).exp();
        assert!((gaussian_kernel(&[0.0, 0.0], &[0.5, 0.5], 1.0) - expected).abs() < 1e-15);
    }

    #[test]
    fn identical_batches_give_zero() {
        let mut rng = seed::rng(1);
        let x = Matrix::from_rows(&probs(6, 4, &mut rng)).unwrap();
        assert!(mmd2(&x, &x, 1.0).abs() < 1e-9);
    }

    #[test]
    fn two_class_toy_matches_double_sum() {
        let xt = [vec![0.9, 0.1], vec![0.8, 0.2], vec![0.3, 0.7], vec![0.1, 0.9]];
        let yr = [vec![0.6, 0.4], vec![0.5, 0.5], vec![0.45, 0.55], vec![0.2, 0.8]];
        let labels = [0, 0, 1, 1];
        let x = Matrix::from_rows(&xt).unwrap();
        let y = Matrix::from_rows(&yr).unwrap();
        let (v, _, _, counted) = classwise_mmd2(&x, &labels, &y, &labels, 1.0).unwrap();
        let expected =
            (brute_mmd2(&xt[..2], &yr[..2], 1.0) + brute_mmd2(&xt[2..], &yr[2..], 1.0)) / 2.0;
        assert_eq!(counted, 2);
        assert!((v - expected).abs() < 1e-12);
    }

    #[test]
    fn absent_reference_labels_are_skipped() {
        let x = Matrix::from_rows(&[[0.9, 0.1], [0.2, 0.8]]).unwrap();
        let y = Matrix::from_rows(&[[0.7, 0.3]]).unwrap();
        let (v, dx, _, counted) = classwise_mmd2(&x, &[0, 1], &y, &[0], 1.0).unwrap();
        assert_eq!(counted, 1);
        assert!((v - brute_mmd2(&[vec![0.9, 0.1]], &[vec![0.7, 0.3]], 1.0)).abs() < 1e-15);
        assert_eq!(dx.row(1), &[0.0, 0.0]);
    }

    #[test]
    fn estimator_gradient_matches_finite_differences() {
        let mut rng = seed::rng(7);
        let x = Matrix::from_rows(&probs(3, 3, &mut rng)).unwrap();
        let y = Matrix::from_rows(&probs(4, 3, &mut rng)).unwrap();
        let (_, dx, dy) = mmd2_with_gradient(&x, &y, 0.5);
        let h = 1e-6;
        for (target, grad, is_x) in [(&x, &dx, true), (&y, &dy, false)] {
            for i in 0..target.as_slice().len() {
                let mut p = target.clone();
                p.as_mut_slice()[i] += h;
                let mut m = target.clone();
                m.as_mut_slice()[i] -= h;
                let (fp, fm) = if is_x {
                    (mmd2(&p, &y, 0.5), mmd2(&m, &y, 0.5))
                } else {
                    (mmd2(&x, &p, 0.5), mmd2(&x, &m, 0.5))
                };
                let num = (fp - fm) / (2.0 * h);
                assert!((num - grad.as_slice()[i]).abs() < 1e-7, "{num} vs {}", grad.as_slice()[i]);
            }
        }
    }

    #[test]
    fn full_objective_gradient_matches_finite_differences() {
        let mut rng = seed::rng(8);
        let model = MlpModel::new(&[5, 4, 3], OutputActivation::Softmax, &mut rng).unwrap();
        let feats = |rng: &mut rand_chacha::ChaCha8Rng| {
            let rows: Vec<Vec<f64>> = (0..6)
                .map(|_| (0..5).map(|_| rng.random_range(0.0..1.0)).collect())
                .collect();
            Matrix::from_rows(&rows).unwrap()
        };
        let labels = vec![0, 1, 2, 0, 1, 1];
        let bt = Batch {
            indices: (0..6).collect(),
            features: feats(&mut rng),
            labels: labels.clone(),
        };
        let br = Batch {
            indices: (0..6).collect(),
            features: feats(&mut rng),
            labels: vec![0, 0, 1, 2, 2, 1],
        };
        let (g, _) = mmd_gradient(&model, &bt, &br, 3.0, 1.0).unwrap();
        let analytic: Vec<f64> = g.values().copied().collect();
        let h = 1e-5;
        for idx in 0..model.parameter_count() {
            let mut p = model.clone();
            *p.parameters_mut().nth(idx).unwrap() += h;
            let mut m = model.clone();
            *m.parameters_mut().nth(idx).unwrap() -= h;
            let num = (mmd_gradient(&p, &bt, &br, 3.0, 1.0).unwrap().1
                - mmd_gradient(&m, &bt, &br, 3.0, 1.0).unwrap().1)
                / (2.0 * h);
            let scale = num.abs().max(analytic[idx].abs());
            assert!(
                (num - analytic[idx]).abs() <= 1e-5 * scale.max(1e-3),
                "param {idx}: {num} vs {}",
                analytic[idx]
            );
        }
    }

    proptest! {
        #[test]
        fn estimator_properties(seed in any::<u64>(), n in 1usize..6, m in 1usize..6, var in 0.1f64..3.0) {
            let mut rng = seed::rng(seed);
            let xs = probs(n, 3, &mut rng);
            let ys = probs(m, 3, &mut rng);
            let x = Matrix::from_rows(&xs).unwrap();
            let y = Matrix::from_rows(&ys).unwrap();
            let v = mmd2(&x, &y, var);
            prop_assert!(v >= -1e-12);
            prop_assert!((v - mmd2(&y, &x, var)).abs() < 1e-12);
            prop_assert!((v - brute_mmd2(&xs, &ys, var)).abs() < 1e-10);
        }
    }
}
