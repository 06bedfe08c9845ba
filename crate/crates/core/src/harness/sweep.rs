//! Defense × seed sweeps and per-point aggregation.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use crate::attacks::{nn_attack, run_attack, AttackInput, AttackKind, AttackReport, ConfidenceSet, TargetSplit};
use crate::datasets::{split, LabeledDataset, SplitSpec};
use crate::defenses::{train, DefenseKind, DefenseSpec, TrainingRun};
use crate::error::{Error, Result};
use crate::numeric::MlpModel;
use crate::seed;

/// Mean and sample standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
}

impl Stat {
    pub fn of(values: &[f64]) -> Stat {
        if values.is_empty() {
            return Stat { mean: f64::NAN, std: f64::NAN };
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Stat { mean, std }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunMetrics {
    pub test_correct: usize,
    pub test_total: usize,
    pub train_correct: usize,
    pub train_total: usize,
    pub attacks: Vec<AttackReport>,
    pub per_epoch_seconds: Vec<f64>,
    pub epochs_run: usize,
}

impl RunMetrics {
    pub fn test_accuracy(&self) -> f64 {
        self.test_correct as f64 / self.test_total as f64
    }

    pub fn train_accuracy(&self) -> f64 {
        self.train_correct as f64 / self.train_total as f64
    }

    pub fn attack(&self, kind: AttackKind, target: TargetSplit) -> Option<&AttackReport> {
        self.attacks.iter().find(|r| r.kind == kind && r.target == target)
    }
}

/// One trained model: a defense spec under one seed.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub spec_index: usize,
    pub seed_index: usize,
    pub seed: u64,
    /// Metrics, or the diagnostics of a numerical failure.
    pub outcome: std::result::Result<RunMetrics, String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TradeoffPoint {
    pub label: String,
    pub kind: DefenseKind,
    pub parameter: Option<f64>,
    pub n_train: usize,
    pub n_reference: usize,
    pub headline_attack: AttackKind,
    pub seeds_ok: usize,
    pub seeds_failed: usize,
    pub diagnostics: Option<String>,
    pub test_accuracy: Stat,
    pub train_accuracy: Stat,
    pub mia_train: Stat,
    pub mia_ref: Stat,
    pub per_epoch_seconds: Option<Stat>,
    /// Per-seed records; empty when the point was read back from a report.
    pub runs: Vec<RunRecord>,
}

impl TradeoffPoint {
    pub fn is_ok(&self) -> bool {
        self.seeds_ok > 0
    }

    pub fn status(&self) -> String {
        match (&self.diagnostics, self.seeds_ok) {
            (None, _) => "ok".into(),
            (Some(d), 0) => format!("failed: {d}"),
            (Some(d), _) => format!("partial: {d}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub points: Vec<TradeoffPoint>,
    pub master_seed: u64,
    pub run_seeds: Vec<u64>,
    pub input_dim: usize,
    pub class_count: usize,
}

/// Seed shared by every defense at seed index `i`.
pub fn run_seed(master_seed: u64, i: usize) -> u64 {
    seed::derive(master_seed, &[i as u64])
}

pub fn confidences(model: &MlpModel, data: &LabeledDataset) -> Result<ConfidenceSet> {
    ConfidenceSet::new(model.predict(data.features())?, data.labels().to_vec(), data.ids().to_vec())
}

fn shadow_spec(spec: &DefenseSpec) -> DefenseSpec {
    DefenseSpec {
        epochs: spec.epochs,
        batch_size: spec.batch_size,
        learning_rate: spec.learning_rate,
        optimizer: spec.optimizer,
        hidden_layers: spec.hidden_layers.clone(),
        ..DefenseSpec::new(DefenseKind::Erm)
    }
}

/// Trains and attacks one model.
pub fn run_one(config: &ExperimentConfig, data: &LabeledDataset, spec: &DefenseSpec, run_seed: u64) -> Result<RunMetrics> {
    let s = config.split;
    let splits = split(
        data,
        &SplitSpec {
            n_train: s.n_train,
            n_reference: s.n_reference,
            n_test: s.n_test,
            n_attacker: s.n_attacker,
            seed: run_seed,
        },
    )?;
    let inst = train(spec, &splits.train, &splits.reference, None, run_seed)?;
    let tr = confidences(&inst.model, &splits.train)?;
    let rf = confidences(&inst.model, &splits.reference)?;
    let te = confidences(&inst.model, &splits.test)?;
    let inputs = [
        (TargetSplit::Training, AttackInput::new(tr.clone(), te.clone())?.balanced()),
        (TargetSplit::Reference, AttackInput::new(rf, te.clone())?.balanced()),
    ];

    let mut attacks = Vec::new();
    let mut known = None;
    for &kind in &config.attacks {
        for (target, input) in &inputs {
            if kind == AttackKind::NeuralNetwork {
                if known.is_none() {
                    known = Some(shadow_knowledge(spec, &splits.attacker, run_seed)?);
                }
                let k = known.as_ref().expect("shadow knowledge");
                let nn_seed = seed::derive(run_seed, &[seed::stream::NN_ATTACK]);
                attacks.push(nn_attack(input, k, &config.nn_attack, nn_seed, *target)?);
            } else {
                attacks.push(run_attack(kind, input, *target)?);
            }
        }
    }
    Ok(RunMetrics {
        test_correct: te.correct_count(),
        test_total: te.len(),
        train_correct: tr.correct_count(),
        train_total: tr.len(),
        attacks,
        per_epoch_seconds: inst.per_epoch_seconds,
        epochs_run: inst.epochs_run,
    })
}

/// Shadow model trained on one half of the attacker slice; its confidences on
/// both halves are the attacker's known members and non-members.
fn shadow_knowledge(spec: &DefenseSpec, attacker: &LabeledDataset, run_seed: u64) -> Result<AttackInput> {
    let half = attacker.len() / 2;
    let inside = attacker.subset(&(0..half).collect::<Vec<_>>());
    let outside = attacker.subset(&(half..attacker.len()).collect::<Vec<_>>());
    let shadow_seed = seed::derive(run_seed, &[seed::stream::NN_ATTACK, seed::stream::TRAIN]);
    let shadow_spec = shadow_spec(spec);
    let mut run = TrainingRun::new(&shadow_spec, &inside, &outside, shadow_seed)?;
    while !run.is_done() {
        run.run_epoch()?;
    }
    let shadow = run.finish(None)?;
    Ok(AttackInput::new(confidences(&shadow.model, &inside)?, confidences(&shadow.model, &outside)?)?.balanced())
}

fn is_numeric_failure(e: &Error) -> bool {
    matches!(e, Error::Diverged { .. } | Error::NonFiniteGradient { .. })
}

pub fn aggregate(config: &ExperimentConfig, spec: &DefenseSpec, runs: Vec<RunRecord>) -> TradeoffPoint {
    let ok: Vec<&RunMetrics> = runs.iter().filter_map(|r| r.outcome.as_ref().ok()).collect();
    let failures: Vec<String> = runs
        .iter()
        .filter_map(|r| r.outcome.as_ref().err().map(|e| format!("seed {}: {e}", r.seed_index)))
        .collect();
    let head = |target| -> Vec<f64> {
        ok.iter()
            .filter_map(|m| m.attack(config.headline_attack, target).map(AttackReport::accuracy))
            .collect()
    };
    let seconds: Vec<f64> = ok
        .iter()
        .filter(|m| !m.per_epoch_seconds.is_empty())
        .map(|m| m.per_epoch_seconds.iter().sum::<f64>() / m.per_epoch_seconds.len() as f64)
        .collect();
    TradeoffPoint {
        label: spec.label(),
        kind: spec.kind,
        parameter: spec.parameter(),
        n_train: config.split.n_train,
        n_reference: config.split.n_reference,
        headline_attack: config.headline_attack,
        seeds_ok: ok.len(),
        seeds_failed: failures.len(),
        diagnostics: (!failures.is_empty()).then(|| failures.join("; ")),
        test_accuracy: Stat::of(&ok.iter().map(|m| m.test_accuracy()).collect::<Vec<_>>()),
        train_accuracy: Stat::of(&ok.iter().map(|m| m.train_accuracy()).collect::<Vec<_>>()),
        mia_train: Stat::of(&head(TargetSplit::Training)),
        mia_ref: Stat::of(&head(TargetSplit::Reference)),
        per_epoch_seconds: (!seconds.is_empty()).then(|| Stat::of(&seconds)),
        runs,
    }
}

pub fn run_sweep(config: &ExperimentConfig) -> Result<SweepResult> {
    let data = config.dataset.load()?;
    run_sweep_on(config, &data, &|_, _| {})
}

/// Runs every defense × seed job on `config.workers` threads. `progress` is
/// called once per finished job with the spec and its record.
pub fn run_sweep_on(
    config: &ExperimentConfig,
    data: &LabeledDataset,
    progress: &(dyn Fn(&DefenseSpec, &RunRecord) + Sync),
) -> Result<SweepResult> {
    config.validate()?;
    let seeds: Vec<u64> = (0..config.seeds).map(|i| run_seed(config.master_seed, i)).collect();
    let jobs: Vec<(usize, usize)> = (0..config.defenses.len())
        .flat_map(|d| (0..config.seeds).map(move |s| (d, s)))
        .collect();
    let slots: Mutex<Vec<Option<Result<RunRecord>>>> = Mutex::new((0..jobs.len()).map(|_| None).collect());
    let next = AtomicUsize::new(0);
    let worker = || loop {
        let j = next.fetch_add(1, Ordering::SeqCst);
        let Some(&(d, s)) = jobs.get(j) else { break };
        let spec = &config.defenses[d];
        let result = match run_one(config, data, spec, seeds[s]) {
            Ok(m) => Ok(Ok(m)),
            Err(e) if is_numeric_failure(&e) => Ok(Err(e.to_string())),
            Err(e) => Err(e),
        }
        .map(|outcome| RunRecord {
            spec_index: d,
            seed_index: s,
            seed: seeds[s],
            outcome,
        });
        if let Ok(r) = &result {
            progress(spec, r);
        }
        let failed = result.is_err();
        slots.lock().expect("result slots")[j] = Some(result);
        if failed {
            // Stop handing out work after a hard error.
            next.store(jobs.len(), Ordering::SeqCst);
        }
    };
    if config.workers <= 1 {
        worker();
    } else {
        std::thread::scope(|scope| {
            for _ in 0..config.workers.min(jobs.len()) {
                scope.spawn(worker);
            }
        });
    }

    let mut per_spec: Vec<Vec<RunRecord>> = vec![Vec::new(); config.defenses.len()];
    for slot in slots.into_inner().expect("result slots") {
        match slot {
            Some(Ok(r)) => per_spec[r.spec_index].push(r),
            Some(Err(e)) => return Err(e),
            None => {}
        }
    }
    let points = config
        .defenses
        .iter()
        .zip(per_spec)
        .map(|(spec, runs)| aggregate(config, spec, runs))
        .collect();
    Ok(SweepResult {
        points,
        master_seed: config.master_seed,
        run_seeds: seeds,
        input_dim: data.dim(),
        class_count: data.class_count(),
    })
}
