//! Acceptance suite. Prints one `PASS n`, `FAIL n` or `SKIP n` line per
//! criterion and fails if any criterion failed.
//!
//! Criterion 11 needs a Purchase100 file. Point `PURCHASE100_CSV` at it and
//! run `cargo test -p werm-core --test acceptance -- --ignored full_scale`.

use std::path::Path;
use std::time::Instant;

use rand::Rng;
use werm_core::attacks::{
    gap_attack, gap_attack_closed_form, score, threshold_attack, AttackInput, ConfidenceSet,
    ScoreKind, TargetSplit,
};
use werm_core::datasets::{
    load_tabular, split, synthesize, SplitSpec, SyntheticParams, TabularFormat,
};

use werm_core::defenses::mmd::{gaussian_kernel, mmd2};
use werm_core::defenses::{
    clip_gradient, dp_gradient, lot_size, train, train_dpsgd_werm, train_werm, DefenseKind,
    DefenseSpec, DpParams, TrainingRun,
};
use werm_core::harness::{pcc_rows, report_sweep, run_sweep, ExperimentConfig, SweepResult};
use werm_core::numeric::{Matrix, MlpModel, OutputActivation};
use werm_core::seed;
use werm_core::theory::{
    effective_samples, noise_multiplier, optimal_weight, privacy_budget, relative_privacy_ratio,
    spearman, DpConstants, PrivacyRatio,
};

struct Outcome {
    id: u32,
    pass: bool,
    detail: String,
}

fn check(results: &mut Vec<Outcome>, id: u32, name: &str, f: impl FnOnce() -> (bool, String)) {
    let start = Instant::now();
    let (pass, detail) = f();
    let line = format!(
        "{} {id:>2} {name}: {detail} [{:.1} s]",
        if pass { "PASS" } else { "FAIL" },
        start.elapsed().as_secs_f64()
    );
    println!("{line}");
    results.push(Outcome { id, pass, detail });
}

fn rel_err(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b).abs() / a.abs().max(b.abs())
    }
}

// ---------------------------------------------------------------- 1

fn loss_oracle(model: &MlpModel, x: &Matrix, labels: &[usize], weights: &[f64]) -> f64 {
    let p = model.predict(x).unwrap();
    let mut total = 0.0;
    for (i, (&y, &wt)) in labels.iter().zip(weights).enumerate() {
        let row = p.row(i);
        let l = match model.output_activation() {
            OutputActivation::Softmax => -row[y].ln(),
            OutputActivation::Sigmoid => {
                if y == 1 {
                    -row[0].ln()
                } else {
                    -(1.0 - row[0]).ln()
                }
            }
        };
        total += wt * l;
    }
    total
}

fn min_hidden_preactivation(model: &MlpModel, x: &Matrix) -> f64 {
    let mut a = x.clone();
    let mut least = f64::INFINITY;
    for (l, (w, b)) in model.weights().iter().zip(model.biases()).enumerate() {
        let mut z = a.matmul(w).unwrap();
        for r in 0..z.rows() {
            for (v, bias) in z.row_mut(r).iter_mut().zip(b) {
                *v += bias;
            }
        }
        if l + 1 == model.layer_count() {
            break;
        }
        least = z.as_slice().iter().fold(least, |m, v| m.min(v.abs()));
        z.as_mut_slice().iter_mut().for_each(|v| *v = v.max(0.0));
        a = z;
    }
    least
}

fn random_mlp(rng: &mut impl Rng) -> (MlpModel, Matrix, Vec<usize>, Vec<f64>) {
    loop {
        let sigmoid = rng.random_bool(0.3);
        let mut sizes = vec![rng.random_range(2..=6)];
        for _ in 0..rng.random_range(0..=2) {
            sizes.push(rng.random_range(2..=8));
        }
        let classes = if sigmoid { 1 } else { rng.random_range(2..=5) };
        sizes.push(classes);
        let act = if sigmoid {
            OutputActivation::Sigmoid
        } else {
            OutputActivation::Softmax
        };
        let mut model = MlpModel::new(&sizes, act, rng).unwrap();
        if model.parameter_count() > 200 {
            continue;
        }
        for b in model.parameters_mut() {
            *b += rng.random_range(-0.1..0.1);
        }
        let n = rng.random_range(1..=6);
        let data: Vec<f64> = (0..n * sizes[0])
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        let x = Matrix::from_vec(n, sizes[0], data).unwrap();
        let span = if sigmoid { 2 } else { classes };
        let labels = (0..n).map(|_| rng.random_range(0..span)).collect();
        let weights = (0..n).map(|_| rng.random_range(0.1..1.0)).collect();
        // Finite differences straddling a ReLU kink are meaningless.
        if min_hidden_preactivation(&model, &x) < 1e-3 {
            continue;
        }
        return (model, x, labels, weights);
    }
}

fn criterion_1() -> (bool, String) {
    let start = Instant::now();
    let mut rng = seed::rng(101);
    let mut worst: f64 = 0.0;
    let mut sigmoids = 0;
    let h = 1e-5;
    for _ in 0..50 {
        let (model, x, labels, weights) = random_mlp(&mut rng);
        if model.output_activation() == OutputActivation::Sigmoid {
            sigmoids += 1;
        }
        let (_, cache) = model.forward(&x).unwrap();
        let analytic: Vec<f64> = model
            .backward(&cache, &labels, &weights)
            .unwrap()
            .values()
            .copied()
            .collect();
        let mut numeric = Vec::with_capacity(analytic.len());
        let count = model.parameter_count();
        for k in 0..count {
            let mut plus = model.clone();
            let mut minus = model.clone();
            *plus.parameters_mut().nth(k).unwrap() += h;
            *minus.parameters_mut().nth(k).unwrap() -= h;
            numeric.push(
                (loss_oracle(&plus, &x, &labels, &weights)
                    - loss_oracle(&minus, &x, &labels, &weights))
                    / (2.0 * h),
            );
        }
        let diff: f64 = analytic
            .iter()
            .zip(&numeric)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt();
        let na: f64 = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
        let nn: f64 = numeric.iter().map(|a| a * a).sum::<f64>().sqrt();
        let denom = na.max(nn);
        let err = if denom == 0.0 { diff } else { diff / denom };
        worst = worst.max(err);
    }
    let secs = start.elapsed().as_secs_f64();
    (
        worst < 1e-5 && secs < 30.0,
        format!(
            "worst relative error {worst:.3e} over 50 networks ({sigmoids} sigmoid), {secs:.2} s"
        ),
    )
}

// ---------------------------------------------------------------- 2, 3

fn random_confidences(
    rng: &mut impl Rng,
    n: usize,
    k: usize,
    levels: Option<u32>,
) -> ConfidenceSet {
    let mut data = Vec::with_capacity(n * k);
    for _ in 0..n {
        let raw: Vec<f64> = (0..k)
            .map(|_| match levels {
                Some(l) => rng.random_range(1..=l) as f64,
                None => rng.random_range(0.0..1.0f64).powi(3) + 1e-9,
            })
            .collect();
        let s: f64 = raw.iter().sum();
        data.extend(raw.iter().map(|v| v / s));
    }
    let labels = (0..n).map(|_| rng.random_range(0..k)).collect();
    ConfidenceSet::new(
        Matrix::from_vec(n, k, data).unwrap(),
        labels,
        (0..n).collect(),
    )
    .unwrap()
}

fn criterion_2() -> (bool, String) {
    let mut rng = seed::rng(202);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let n = rng.random_range(1..=400);
        let k = rng.random_range(2..=10);
        let members = random_confidences(&mut rng, n, k, Some(4));
        let nonmembers = random_confidences(&mut rng, n, k, None);
        let input = AttackInput::new(members.clone(), nonmembers.clone()).unwrap();
        let direct = gap_attack(&input, TargetSplit::Training).accuracy();
        let closed = gap_attack_closed_form(members.accuracy(), nonmembers.accuracy());
        worst = worst.max((direct - closed).abs());
    }
    (
        worst <= 1e-12,
        format!("max |direct − closed form| = {worst:.2e} over 100 set pairs"),
    )
}

fn brute_force(kind: ScoreKind, members: &[f64], nonmembers: &[f64]) -> usize {
    let mut candidates: Vec<f64> = members.iter().chain(nonmembers).copied().collect();
    candidates.push(f64::INFINITY);
    candidates.push(f64::NEG_INFINITY);
    candidates
        .iter()
        .map(|&tau| {
            let member = |s: f64| {
                if kind == ScoreKind::Confidence {
                    s >= tau
                } else {
                    s < tau
                }
            };
            members.iter().filter(|&&s| member(s)).count()
                + nonmembers.iter().filter(|&&s| !member(s)).count()
        })
        .max()
        .unwrap()
}

fn criterion_3() -> (bool, String) {
    let mut rng = seed::rng(303);
    let mut mismatches = 0;
    let mut cases = 0;
    for trial in 0..60 {
        let n = rng.random_range(1..=500);
        let m = rng.random_range(1..=500);
        let k = rng.random_range(2..=6);
        let levels = if trial % 2 == 0 { Some(3) } else { None };
        let members = random_confidences(&mut rng, n, k, levels);
        let nonmembers = random_confidences(&mut rng, m, k, levels);
        let input = AttackInput::new(members.clone(), nonmembers.clone()).unwrap();
        for kind in [
            ScoreKind::Confidence,
            ScoreKind::Entropy,
            ScoreKind::ModifiedEntropy,
        ] {
            let sc = |set: &ConfidenceSet| -> Vec<f64> {
                (0..set.len())
                    .map(|i| score(kind, set.confidences.row(i), set.labels[i]))
                    .collect()
            };
            let (ms, ns) = (sc(&members), sc(&nonmembers));
            let best = brute_force(kind, &ms, &ns);
            let report = threshold_attack(&input, kind, TargetSplit::Training);
            let swept = report.member_hits + report.nonmember_rejects;
            let tau = report.threshold.unwrap();
            let replay = ms.iter().filter(|&&s| kind.predicts_member(s, tau)).count()
                + ns.iter()
                    .filter(|&&s| !kind.predicts_member(s, tau))
                    .count();
            let exact = best as f64 / (n + m) as f64 == report.accuracy();
            if swept != best || replay != best || !exact {
                mismatches += 1;
            }
            cases += 1;
        }
    }
    (
        mismatches == 0,
        format!("{cases} sweeps, {mismatches} differ from the exhaustive maximum"),
    )
}

// ---------------------------------------------------------------- 4

fn criterion_4() -> (bool, String) {
    let mut rng = seed::rng(404);
    let mut bad_bound = 0;
    let mut bad_zero = 0;
    let mut bad_opt = 0;
    let mut worst_naive: f64 = 0.0;
    for _ in 0..1000 {
        let nt = rng.random_range(1..=1_000_000) as f64;
        let nr = rng.random_range(1..=1_000_000) as f64;
        let w: f64 = rng.random_range(0.0..=1.0);
        let n = nt + nr;
        let ne = effective_samples(nt, nr, w);
        let ws = optimal_weight(nt, nr);
        if ne > n || (ne == n && w != ws) {
            bad_bound += 1;
        }
        if effective_samples(nt, nr, ws) != n {
            bad_opt += 1;
        }
        if effective_samples(nt, nr, 0.0) != nt {
            bad_zero += 1;
        }
        let naive = 1.0 / ((1.0 - w).powi(2) / nt + w * w / nr);
        worst_naive = worst_naive.max(rel_err(ne, naive));
    }
    let (nt, nr) = (5000.0, 5000.0);
    let grid: Vec<f64> = (0..=100).map(|i| i as f64 / 100.0).collect();
    let values: Vec<f64> = grid.iter().map(|&w| effective_samples(nt, nr, w)).collect();
    let band = (nt * nr / 3.0f64).sqrt() / (nt + nr);
    let ws = optimal_weight(nt, nr);
    let (mut negative, mut negative_in_band, mut in_band) = (0, 0, 0);
    for i in 1..100 {
        let d2 = values[i + 1] - 2.0 * values[i] + values[i - 1];
        if d2 < 0.0 {
            negative += 1;
        }
        if (grid[i] - ws).abs() < band {
            in_band += 1;
            if d2 < 0.0 {
                negative_in_band += 1;
            }
        }
    }
    let formula_ok = bad_bound == 0 && bad_zero == 0 && bad_opt == 0 && worst_naive < 1e-12;
    let concave = negative == 99;
    (
        formula_ok && concave,
        format!(
            "bound violations {bad_bound}, N_eff(w*) != N {bad_opt}, N_eff(0) != N_T {bad_zero}, \
             max deviation from direct formula {worst_naive:.1e}; second difference negative at \
             {negative}/99 interior grid points (N_T = N_R = 5000). N_eff(w) is concave only for \
             |w − w*| < √(N_T N_R/3)/N = {band:.4}, negative at {negative_in_band}/{in_band} points there, \
             so the full-grid requirement cannot hold for any sizes"
        ),
    )
}

// ---------------------------------------------------------------- 5

fn criterion_5() -> (bool, String) {
    let mut rng = seed::rng(505);
    let mut worst_ratio: f64 = 0.0;
    let mut worst_inv: f64 = 0.0;
    let dp = DpConstants::default();
    for _ in 0..1000 {
        let nt = rng.random_range(1..=100_000) as f64;
        let nr = rng.random_range(1..=100_000) as f64;
        let w: f64 = rng.random_range(0.001..0.999);
        let want = (1.0 - w) / w * (nr / nt);
        let ratios: Vec<f64> = [1.0, 1e3, 1e6]
            .iter()
            .map(|&e0| {
                let b = privacy_budget(nt, nr, w, e0, &dp);
                b.epsilon_t / b.epsilon_r
            })
            .collect();
        for r in &ratios {
            worst_ratio = worst_ratio.max(rel_err(*r, want));
            worst_inv = worst_inv.max(rel_err(*r, ratios[0]));
        }
        if let PrivacyRatio::Finite(r) = relative_privacy_ratio(nt, nr, w) {
            worst_ratio = worst_ratio.max(rel_err(r, want));
        } else {
            worst_ratio = f64::INFINITY;
        }
    }
    let mut worst_sigma: f64 = 0.0;
    for _ in 0..10 {
        let alpha: f64 = rng.random_range(0.001..1.0);
        let k: usize = rng.random_range(1..=10_000);
        let c: f64 = rng.random_range(0.1..10.0);
        let e0: f64 = rng.random_range(0.1..1e4);
        let delta: f64 = 10f64.powf(rng.random_range(-9.0..-1.0));
        let log_term = (1.25 / delta).ln();
        let hand = (2.0 * log_term * k as f64).sqrt() * c * alpha / e0;
        let dpc = DpConstants {
            delta,
            steps: k,
            clip_norm: c,
            sampling_ratio: alpha,
            vc_dim: 100.0,
        };
        let sigma = privacy_budget(1000.0, 1000.0, 0.5, e0, &dpc).sigma;
        worst_sigma = worst_sigma.max(rel_err(sigma, hand));
    }
    // 2·ln(1.25/δ) = 1 reduces σ to α√K·C/ε₀.
    let cancel = noise_multiplier(2.0, 1.25 / 0.5f64.exp(), 16, 3.0, 0.5);
    worst_sigma = worst_sigma.max(rel_err(cancel, 0.5 * 4.0 * 3.0 / 2.0));
    (
        worst_ratio <= 1e-12 && worst_inv <= 1e-12 && worst_sigma <= 1e-12,
        format!("ratio error {worst_ratio:.1e}, ε₀ invariance {worst_inv:.1e}, σ error {worst_sigma:.1e}"),
    )
}

// ---------------------------------------------------------------- 6

fn dp_training_data() -> (
    werm_core::datasets::LabeledDataset,
    werm_core::datasets::LabeledDataset,
) {
    let data = synthesize(
        &SyntheticParams {
            classes: 5,
            per_class: 40,
            dim: 20,
            cluster_tightness: 0.3,
            flip_prob: 0.1,
        },
        6,
    )
    .unwrap();
    let sp = split(
        &data,
        &SplitSpec {
            n_train: 80,
            n_reference: 60,
            n_test: 60,
            n_attacker: 0,
            seed: 6,
        },
    )
    .unwrap();
    (sp.train, sp.reference)
}

fn criterion_6() -> (bool, String) {
    let (train_set, reference) = dp_training_data();
    let mut rng = seed::rng(606);
    let model = MlpModel::new(&[20, 16, 5], OutputActivation::Softmax, &mut rng).unwrap();
    let mut worst_excess = f64::NEG_INFINITY;
    let mut clipped = 0;
    for c in [1e-4, 1e-2, 0.1, 1.0, 10.0] {
        for mut g in model
            .per_example_gradients(train_set.features(), train_set.labels())
            .unwrap()
        {
            let before = g.l2_norm();
            clip_gradient(&mut g, c);
            if before > c {
                clipped += 1;
            }
            worst_excess = worst_excess.max(g.l2_norm() - c);
        }
    }
    let clip_ok = worst_excess <= 1e-12;

    let (sigma, c) = (2.0, 1.5);
    let dp = DpParams {
        clip_norm: c,
        noise_scale: sigma,
        sampling_ratio: 0.1,
        delta: 1e-5,
        steps: 1,
    };
    let big = MlpModel::zeros(&[100, 100, 10], OutputActivation::Softmax).unwrap();
    let mut noise = seed::rng(607);
    let mut samples: Vec<f64> = Vec::new();
    while samples.len() < 100_000 {
        let (g, _) = dp_gradient(&big, None, None, 0.5, &dp, &mut noise).unwrap();
        samples.extend(g.values().copied());
    }
    samples.truncate(100_000);
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let sd = (samples.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    let sd_err = (sd - sigma * c).abs() / (sigma * c);

    let disabled = DpParams {
        clip_norm: 1e9,
        noise_scale: 0.0,
        sampling_ratio: 0.125,
        delta: 1e-5,
        steps: 0,
    };
    let mut dp_spec = DefenseSpec::new(DefenseKind::DpSgdWerm);
    dp_spec.w = 0.4;
    dp_spec.dp = Some(disabled);
    dp_spec.epochs = 3;
    dp_spec.hidden_layers = vec![12];
    dp_spec.learning_rate = 0.01;
    let mut werm = DefenseSpec::werm(0.4);
    werm.epochs = 3;
    werm.batch_size = lot_size(0.125, train_set.len());
    werm.hidden_layers = vec![12];
    werm.learning_rate = 0.01;
    let a = train_dpsgd_werm(&train_set, &reference, &dp_spec, 17).unwrap();
    let b = train_werm(&train_set, &reference, &werm, 17).unwrap();
    let diff = a
        .model
        .parameters()
        .zip(b.model.parameters())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max);

    (
        clip_ok && sd_err < 0.05 && diff <= 1e-8 && a.steps == b.steps,
        format!(
            "max ‖clipped‖ − C = {worst_excess:.1e} ({clipped} clipped); noise sd {sd:.4} vs σC = {:.1} \
             ({:.2}% off); σ=0, C=1e9 vs WERM max parameter diff {diff:.1e} over {} steps",
            sigma * c,
            100.0 * sd_err,
            a.steps
        ),
    )
}

// ---------------------------------------------------------------- 7

fn random_batch(rng: &mut impl Rng, n: usize, k: usize) -> Matrix {
    let data = (0..n * k).map(|_| rng.random_range(0.0..1.0)).collect();
    Matrix::from_vec(n, k, data).unwrap()
}

fn mmd_oracle(x: &Matrix, y: &Matrix, variance: f64) -> f64 {
    let mean_k = |a: &Matrix, b: &Matrix| {
        let mut s = 0.0;
        for i in 0..a.rows() {
            for j in 0..b.rows() {
                let d2: f64 = a
                    .row(i)
                    .iter()
                    .zip(b.row(j))
                    .map(|(p, q)| (p - q) * (p - q))
                    .sum();
                s += (-d2 / (2.0 * variance)).exp();
            }
        }
        s / (a.rows() * b.rows()) as f64
    };
    mean_k(x, x) + mean_k(y, y) - 2.0 * mean_k(x, y)
}

fn criterion_7() -> (bool, String) {
    let mut rng = seed::rng(707);
    let mut worst_same: f64 = 0.0;
    let mut worst_oracle: f64 = 0.0;
    let mut min_value = f64::INFINITY;
    for trial in 0..200 {
        let k = rng.random_range(1..=10);
        let n = rng.random_range(1..=12);
        let m = rng.random_range(1..=12);
        let variance = rng.random_range(0.05..4.0);
        let x = random_batch(&mut rng, n, k);
        let y = random_batch(&mut rng, m, k);
        worst_same = worst_same.max(mmd2(&x, &x, variance).abs());
        let v = mmd2(&x, &y, variance);
        min_value = min_value.min(v);
        if trial < 20 {
            worst_oracle = worst_oracle.max((v - mmd_oracle(&x, &y, variance).max(0.0)).abs());
        }
    }
    let k_self = gaussian_kernel(&[0.3, 0.7], &[0.3, 0.7], 1.0);
    (
        worst_same <= 1e-9 && worst_oracle <= 1e-10 && min_value >= 0.0 && k_self == 1.0,
        format!(
            "identical batches ≤ {worst_same:.1e}, oracle difference ≤ {worst_oracle:.1e} on 20 batches, \
             min over 200 random batches {min_value:.3e}"
        ),
    )
}

// ---------------------------------------------------------------- 8, 10

const DESK_SEEDS: usize = 5;

fn desk_sweep() -> (SweepResult, f64) {
    let text = format!(
        r#"
        master_seed = 2024
        seeds = {DESK_SEEDS}
        attacks = ["confidence"]
        [dataset]
        synthetic = {{ classes = 100, per_class = 150, dim = 600, cluster_tightness = 0.98, flip_prob = 0.1 }}
        seed = 1
        [split]
        n_train = 5000
        n_reference = 5000
        n_test = 5000
        [model]
        hidden_layers = [256, 128]
        epochs = 20
        batch_size = 128
        [[defense]]
        kind = "werm"
        w = [0.0, 0.1, 0.3, 0.5]
        "#
    );
    let config = ExperimentConfig::from_toml_str(&text, Path::new(".")).unwrap();
    let start = Instant::now();
    let result = run_sweep(&config).unwrap();
    (result, start.elapsed().as_secs_f64())
}

fn criterion_8(result: &SweepResult, seconds: f64) -> (bool, String) {
    let pts = &result.points;
    let ws: Vec<f64> = pts.iter().map(|p| p.parameter.unwrap()).collect();
    let tr: Vec<f64> = pts.iter().map(|p| p.mia_train.mean).collect();
    let rf: Vec<f64> = pts.iter().map(|p| p.mia_ref.mean).collect();
    let acc: Vec<f64> = pts.iter().map(|p| p.test_accuracy.mean).collect();
    let rho_ref = spearman(&ws, &rf).unwrap_or(f64::NAN);
    let rho_tr = spearman(&ws, &tr).unwrap_or(f64::NAN);
    let a = (0.48..=0.52).contains(&rf[0]);
    let b = rho_ref >= 0.8 && rho_tr <= -0.8;
    let c = acc[3] >= acc[0];
    let rows: Vec<String> = pts
        .iter()
        .map(|p| {
            format!(
                "w={} acc {:.3} tr {:.3} ref {:.3}",
                p.parameter.unwrap(),
                p.test_accuracy.mean,
                p.mia_train.mean,
                p.mia_ref.mean
            )
        })
        .collect();
    (
        a && b && c && seconds < 600.0 && pts.iter().all(|p| p.seeds_failed == 0),
        format!(
            "(a) MIA-ref(0) = {:.4}; (b) ρ(w, ref) = {rho_ref:.2}, ρ(w, train) = {rho_tr:.2}; \
             (c) acc(0.5) {:.4} vs acc(0) {:.4}; {DESK_SEEDS} seeds in {seconds:.0} s; {}",
            rf[0],
            acc[3],
            acc[0],
            rows.join(", ")
        ),
    )
}

fn criterion_10(result: &SweepResult) -> (bool, String) {
    let rows = pcc_rows(&result.points);
    let Some(row) = rows.iter().find(|r| r.defense == DefenseKind::Werm) else {
        return (false, "no WERM correlation row".into());
    };
    let r = row.pearson.unwrap_or(f64::NAN);
    (
        r >= 0.7,
        format!(
            "Pearson r = {r:.3} over {} weights (w = 0 has an infinite ratio)",
            row.desired.len()
        ),
    )
}

// ---------------------------------------------------------------- 9

fn criterion_9() -> (bool, String) {
    let data = synthesize(
        &SyntheticParams {
            cluster_tightness: 0.98,
            ..Default::default()
        },
        1,
    )
    .unwrap();
    let sp = split(
        &data,
        &SplitSpec {
            n_train: 5000,
            n_reference: 5000,
            n_test: 5000,
            n_attacker: 0,
            seed: 9,
        },
    )
    .unwrap();
    let matched = |mut s: DefenseSpec| {
        s.batch_size = 512;
        s.hidden_layers = vec![256, 128];
        s.warmup_epochs = 0;
        s.epochs = 5;
        s
    };
    let specs = [
        matched(DefenseSpec::werm(0.5)),
        matched(DefenseSpec::with_lambda(DefenseKind::AdvReg, 1.0)),
        matched(DefenseSpec::with_lambda(DefenseKind::Mmd, 1.0)),
    ];
    let mut runs: Vec<TrainingRun> = specs
        .iter()
        .map(|s| TrainingRun::new(s, &sp.train, &sp.reference, 9).unwrap())
        .collect();
    let mut totals = [0.0; 3];
    for _ in 0..5 {
        for (t, run) in totals.iter_mut().zip(runs.iter_mut()) {
            *t += run.run_epoch().unwrap().seconds;
        }
    }
    let [werm, advreg, mmd] = totals.map(|t| t / 5.0);
    (
        werm < advreg && werm < mmd,
        format!("per-epoch seconds at batch 512: WERM {werm:.3}, AdvReg {advreg:.3}, MMD {mmd:.3}"),
    )
}

// ---------------------------------------------------------------- 12

const REPRO_CONFIG: &str = r#"
master_seed = 99
seeds = 2
workers = 2
attacks = ["gap", "confidence", "entropy", "modified_entropy", "nn"]
[dataset]
synthetic = { classes = 5, per_class = 80, dim = 24, cluster_tightness = 0.4, flip_prob = 0.1 }
seed = 3
[split]
n_train = 100
n_reference = 100
n_test = 100
n_attacker = 80
[model]
hidden_layers = [16]
epochs = 3
batch_size = 32
[nn_attack]
hidden = [8]
epochs = 3
batch_size = 32
learning_rate = 0.001
[[defense]]
kind = "erm"
[[defense]]
kind = "werm"
w = [0.0, 0.5]
[[defense]]
kind = "adv_reg"
lambda = 1.0
attack_hidden = [8]
update_ratio = 2
[[defense]]
kind = "mmd"
lambda = 0.5
batch_size = 64
[[defense]]
kind = "dp_sgd_werm"
w = 0.3
dp = { clip_norm = 1.0, noise_scale = 0.5, sampling_ratio = 0.2, delta = 1e-5 }
"#;

fn criterion_12() -> (bool, String) {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("repro.toml");
    std::fs::write(&path, REPRO_CONFIG).unwrap();
    let mut outputs = Vec::new();
    for run in ["first", "second"] {
        let mut config = ExperimentConfig::load(&path).unwrap();
        config.output_dir = dir.path().join(run);
        let result = run_sweep(&config).unwrap();
        report_sweep(&config, &result).unwrap();
        outputs.push(std::fs::read(config.output_dir.join("results.csv")).unwrap());
    }
    let same = outputs[0] == outputs[1];
    let rows = String::from_utf8_lossy(&outputs[0])
        .lines()
        .count()
        .saturating_sub(1);
    (
        same && rows == 6,
        format!(
            "{rows} rows, {} bytes, byte-identical: {same}",
            outputs[0].len()
        ),
    )
}

// ---------------------------------------------------------------- 11

fn full_scale_check(path: &Path) -> (bool, String) {
    let data = load_tabular(path, TabularFormat::purchase100()).unwrap();
    let n_split = data.len() / 10;
    let seeds: usize = std::env::var("FULL_SCALE_SEEDS")
        .ok()
        .and_then(|s| s.parse().ok())
        .unwrap_or(1);
    let mut spec = DefenseSpec::werm(0.5);
    spec.epochs = 20;
    spec.batch_size = 512;
    spec.hidden_layers = vec![1024, 512, 256];
    let (mut acc, mut tr, mut rf) = (0.0, 0.0, 0.0);
    for i in 0..seeds {
        let run_seed = seed::derive(11, &[i as u64]);
        let sp = split(
            &data,
            &SplitSpec {
                n_train: n_split,
                n_reference: n_split,
                n_test: n_split,
                n_attacker: 0,
                seed: run_seed,
            },
        )
        .unwrap();
        let inst = train(&spec, &sp.train, &sp.reference, Some(&sp.test), run_seed).unwrap();
        let conf = |d| werm_core::harness::confidences(&inst.model, d).unwrap();
        let (ct, cr, cte) = (conf(&sp.train), conf(&sp.reference), conf(&sp.test));
        let attack = |m: ConfidenceSet, t| {
            let input = AttackInput::new(m, cte.clone()).unwrap().balanced();
            threshold_attack(&input, ScoreKind::Confidence, t).accuracy()
        };
        acc += inst.test.unwrap().accuracy;
        tr += attack(ct, TargetSplit::Training);
        rf += attack(cr, TargetSplit::Reference);
    }
    let s = seeds as f64;
    let (acc, tr, rf) = (acc / s, tr / s, rf / s);
    (
        (acc - 0.870).abs() <= 0.03 && (tr - 0.615).abs() <= 0.04 && (rf - 0.615).abs() <= 0.04,
        format!("test {acc:.4}, MIA-train {tr:.4}, MIA-ref {rf:.4} over {seeds} seed(s)"),
    )
}

#[test]
#[ignore = "full scale: needs PURCHASE100_CSV"]
fn full_scale() {
    let path =
        std::env::var("PURCHASE100_CSV").expect("PURCHASE100_CSV must name the Purchase100 file");
    let mut results = Vec::new();
    check(&mut results, 11, "full-scale WERM w=0.5", || {
        full_scale_check(Path::new(&path))
    });
    assert!(results[0].pass, "{}", results[0].detail);
}

// ----------------------------------------------------------------

#[test]
fn acceptance() {
    let mut results = Vec::new();
    check(&mut results, 1, "gradient check", criterion_1);
    check(&mut results, 2, "gap attack identity", criterion_2);
    check(&mut results, 3, "threshold sweep oracle", criterion_3);
    check(&mut results, 4, "effective sample size", criterion_4);
    check(&mut results, 5, "privacy budget formulas", criterion_5);
    check(&mut results, 6, "DP mechanism", criterion_6);
    check(&mut results, 7, "MMD estimator", criterion_7);
    let (sweep, seconds) = desk_sweep();
    check(&mut results, 8, "desk-scale tradeoff shape", || {
        criterion_8(&sweep, seconds)
    });
    check(&mut results, 9, "timing ordering", criterion_9);
    check(&mut results, 10, "configurability", || criterion_10(&sweep));
    println!("SKIP 11 full-scale reproduction: run the ignored `full_scale` test with PURCHASE100_CSV set");
    check(&mut results, 12, "reproducibility", criterion_12);

    let failed: Vec<String> = results
        .iter()
        .filter(|r| !r.pass)
        .map(|r| format!("{}: {}", r.id, r.detail))
        .collect();
    assert!(failed.is_empty(), "failed criteria:\n{}", failed.join("\n"));
}
