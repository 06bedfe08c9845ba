//! Trainers for defended classifiers.
//!
//! Every defense consumes a training split and a reference split drawn from
//! the same distribution. Plain ERM is WERM with `w = 0`: the reference split
//! is never read. The weighted objective `(1−w)·L_T + w·L_R` can be seen as
//! the Lagrangian of a risk minimisation with separate constraints on the
//! training and reference risks; the constraint constants never need numeric
//! values, so they are not represented here.
//!
//! Training is driven epoch by epoch through [`TrainingRun`], which also
//! records the wall time of every epoch.

mod advreg;
mod dpsgd;
pub mod mmd;
mod model_file;
mod werm;

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::datasets::LabeledDataset;
use crate::error::{Error, Result};
use crate::numeric::{accuracy, cross_entropy, MlpModel, OptimizerKind, OptimizerState, OutputActivation};
use crate::seed;

pub use advreg::{attack_features, attack_gain, attack_step, classifier_gradient, UpdateSchedule};
pub use dpsgd::{clip_gradient, dp_gradient, gaussian_noise, lot_size};
pub use model_file::{read_model_file, write_model_file};
pub use werm::weighted_gradient;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DefenseKind {
    Erm,
    Werm,
    WermEs,
    AdvReg,
    AdvRegRt,
    Mmd,
    DpSgdWerm,
}

impl DefenseKind {
    pub fn name(self) -> &'static str {
        match self {
            DefenseKind::Erm => "erm",
            DefenseKind::Werm => "werm",
            DefenseKind::WermEs => "werm_es",
            DefenseKind::AdvReg => "adv_reg",
            DefenseKind::AdvRegRt => "adv_reg_rt",
            DefenseKind::Mmd => "mmd",
            DefenseKind::DpSgdWerm => "dp_sgd_werm",
        }
    }

    pub fn uses_weight(self) -> bool {
        matches!(
            self,
            DefenseKind::Werm | DefenseKind::WermEs | DefenseKind::DpSgdWerm
        )
    }

    pub fn uses_lambda(self) -> bool {
        matches!(
            self,
            DefenseKind::AdvReg | DefenseKind::AdvRegRt | DefenseKind::Mmd
        )
    }

    /// Default epoch budget at full scale.
    pub fn default_epochs(self) -> usize {
        match self {
            DefenseKind::WermEs => 7,
            _ => 20,
        }
    }
}

impl std::fmt::Display for DefenseKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for DefenseKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let all = [
            DefenseKind::Erm,
            DefenseKind::Werm,
            DefenseKind::WermEs,
            DefenseKind::AdvReg,
            DefenseKind::AdvRegRt,
            DefenseKind::Mmd,
            DefenseKind::DpSgdWerm,
        ];
        all.into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown defense {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DpParams {
    pub clip_norm: f64,
    pub noise_scale: f64,
    pub sampling_ratio: f64,
    pub delta: f64,
    /// Step count `K` assumed by privacy accounting. Training itself always
    /// runs `epochs` passes over the data.
    #[serde(default)]
    pub steps: usize,
}

impl DpParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.clip_norm > 0.0) {
            return Err(Error::Config(format!("clip_norm must be > 0, got {}", self.clip_norm)));
        }
        if !(self.noise_scale >= 0.0) || !self.noise_scale.is_finite() {
            return Err(Error::Config(format!(
                "noise_scale must be >= 0, got {}",
                self.noise_scale
            )));
        }
        if !(self.sampling_ratio > 0.0 && self.sampling_ratio <= 1.0) {
            return Err(Error::Config(format!(
                "sampling_ratio must lie in (0, 1], got {}",
                self.sampling_ratio
            )));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::Config(format!("delta must lie in (0, 1), got {}", self.delta)));
        }
        Ok(())
    }
}

fn default_update_ratio() -> usize {
    20
}

fn default_kernel_variance() -> f64 {
    1.0
}

fn default_warmup() -> usize {
    1
}

fn default_attack_hidden() -> Vec<usize> {
    vec![1024, 512, 64]
}

fn default_hidden() -> Vec<usize> {
    vec![256, 128]
}

fn default_lr() -> f64 {
    0.001
}

/// Everything needed to train one defended model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DefenseSpec {
    pub kind: DefenseKind,
    /// Reference-loss weight for the WERM family.
    #[serde(default)]
    pub w: f64,
    /// Regularisation strength for AdvReg and MMD.
    #[serde(default)]
    pub lambda: f64,
    pub epochs: usize,
    pub batch_size: usize,
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default)]
    pub optimizer: OptimizerKind,
    /// Hidden layer sizes of the classifier.
    #[serde(default = "default_hidden")]
    pub hidden_layers: Vec<usize>,
    /// Hidden layer sizes of the AdvReg attack model; its input is the
    /// one-hot label joined with the confidence vector, its output one unit.
    #[serde(default = "default_attack_hidden")]
    pub attack_hidden: Vec<usize>,
    /// Attack-model updates per classifier update (AdvReg).
    #[serde(default = "default_update_ratio")]
    pub update_ratio: usize,
    #[serde(default = "default_kernel_variance")]
    pub kernel_variance: f64,
    /// Leading epochs of plain ERM for AdvReg and MMD.
    #[serde(default = "default_warmup")]
    pub warmup_epochs: usize,
    #[serde(default)]
    pub dp: Option<DpParams>,
}

impl DefenseSpec {
    pub fn new(kind: DefenseKind) -> Self {
        Self {
            kind,
            w: 0.0,
            lambda: 0.0,
            epochs: kind.default_epochs(),
            batch_size: if kind == DefenseKind::Mmd { 512 } else { 128 },
            learning_rate: default_lr(),
            optimizer: OptimizerKind::Adam,
            hidden_layers: default_hidden(),
            attack_hidden: default_attack_hidden(),
            update_ratio: default_update_ratio(),
            kernel_variance: default_kernel_variance(),
            warmup_epochs: if kind.uses_lambda() { default_warmup() } else { 0 },
            dp: None,
        }
    }

    pub fn werm(w: f64) -> Self {
        Self {
            w,
            ..Self::new(DefenseKind::Werm)
        }
    }

    pub fn with_lambda(kind: DefenseKind, lambda: f64) -> Self {
        Self {
            lambda,
            ..Self::new(kind)
        }
    }

    /// Value of the swept defense parameter (w or λ), if the kind has one.
    pub fn parameter(&self) -> Option<f64> {
        if self.kind.uses_weight() {
            Some(self.w)
        } else if self.kind.uses_lambda() {
            Some(self.lambda)
        } else {
            None
        }
    }

    /// Short human-readable label such as `werm(w=0.3)`.
    pub fn label(&self) -> String {
        if self.kind.uses_weight() {
            format!("{}(w={})", self.kind, self.w)
        } else if self.kind.uses_lambda() {
            format!("{}(lambda={})", self.kind, self.lambda)
        } else {
            self.kind.to_string()
        }
    }

    /// Effective reference weight of the WERM objective.
    pub(crate) fn reference_weight(&self) -> f64 {
        if self.kind.uses_weight() {
            self.w
        } else {
            0.0
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.kind.uses_weight() && !(0.0..=1.0).contains(&self.w) {
            return Err(Error::Config(format!("w must lie in [0, 1], got {}", self.w)));
        }
        if self.kind.uses_lambda() && !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning_rate must be > 0, got {}",
                self.learning_rate
            )));
        }
        if self.hidden_layers.contains(&0) || self.attack_hidden.contains(&0) {
            return Err(Error::Config("layer sizes must be positive".into()));
        }
        match self.kind {
            DefenseKind::AdvReg | DefenseKind::AdvRegRt if self.update_ratio == 0 => {
                return Err(Error::Config("update_ratio must be at least 1".into()));
            }
            DefenseKind::Mmd if !(self.kernel_variance > 0.0) => {
                return Err(Error::Config(format!(
                    "kernel_variance must be > 0, got {}",
                    self.kernel_variance
                )));
            }
            DefenseKind::DpSgdWerm => match &self.dp {
                Some(dp) => dp.validate()?,
                None => return Err(Error::Config("dp_sgd_werm needs dp parameters".into())),
            },
            _ => {}
        }
        Ok(())
    }
}

/// Loss and accuracy of a model on one split.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitMetrics {
    pub loss: f64,
    pub accuracy: f64,
}

impl SplitMetrics {
    pub fn measure(model: &MlpModel, data: &LabeledDataset) -> Result<SplitMetrics> {
        let probs = model.predict(data.features())?;
        let (loss, _) = cross_entropy(&probs, data.labels())?;
        Ok(SplitMetrics {
            loss,
            accuracy: accuracy(&probs, data.labels()),
        })
    }
}

/// A trained model plus the bookkeeping of how it was obtained.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedInstance {
    pub model: MlpModel,
    pub spec: DefenseSpec,
    pub seed: u64,
    pub epochs_run: usize,
    pub steps: u64,
    pub per_epoch_seconds: Vec<f64>,
    pub train: SplitMetrics,
    pub reference: Option<SplitMetrics>,
    pub test: Option<SplitMetrics>,
}

impl TrainedInstance {
    pub fn mean_epoch_seconds(&self) -> f64 {
        if self.per_epoch_seconds.is_empty() {
            0.0
        } else {
            self.per_epoch_seconds.iter().sum::<f64>() / self.per_epoch_seconds.len() as f64
        }
    }
}

/// Test loss minus train loss; `None` when no test split was evaluated.
pub fn generalization_gap(instance: &TrainedInstance) -> Option<f64> {
    instance.test.map(|t| t.loss - instance.train.loss)
}

/// Summary of one completed epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    /// Mean objective over the epoch's parameter updates.
    pub loss: f64,
    pub seconds: f64,
    pub steps: u64,
}

enum Algorithm {
    Werm(werm::WermState),
    AdvReg(advreg::AdvRegState),
    Mmd(mmd::MmdState),
    DpSgd(dpsgd::DpSgdState),
}

/// Shared state handed to every trainer step.
pub(crate) struct Session<'a> {
    pub spec: &'a DefenseSpec,
    pub train: &'a LabeledDataset,
    pub reference: &'a LabeledDataset,
    pub model: MlpModel,
    pub optimizer: OptimizerState,
    pub epoch: usize,
}

/// An in-progress training run, advanced one epoch at a time.
pub struct TrainingRun<'a> {
    session: Session<'a>,
    algorithm: Algorithm,
    seed: u64,
    steps: u64,
    per_epoch_seconds: Vec<f64>,
}

impl<'a> TrainingRun<'a> {
    pub fn new(
        spec: &'a DefenseSpec,
        train: &'a LabeledDataset,
        reference: &'a LabeledDataset,
        seed: u64,
    ) -> Result<Self> {
        spec.validate()?;
        let (dim, classes) = if !train.is_empty() || reference.is_empty() {
            (train.dim(), train.class_count())
        } else {
            (reference.dim(), reference.class_count())
        };
        if !reference.is_empty() && !train.is_empty() && reference.dim() != train.dim() {
            return Err(Error::Shape(format!(
                "train has {} features, reference {}",
                train.dim(),
                reference.dim()
            )));
        }
        let classes = classes.max(reference.class_count());
        if dim == 0 || classes == 0 {
            return Err(Error::Config("cannot train on empty data".into()));
        }
        let mut sizes = vec![dim];
        sizes.extend_from_slice(&spec.hidden_layers);
        sizes.push(classes);
        let mut init = seed::rng(seed::derive(seed, &[seed::stream::INIT]));
        let model = MlpModel::new(&sizes, OutputActivation::Softmax, &mut init)?;
        let optimizer = OptimizerState::new(spec.optimizer, spec.learning_rate);
        let session = Session {
            spec,
            train,
            reference,
            model,
            optimizer,
            epoch: 0,
        };
        let algorithm = match spec.kind {
            DefenseKind::Erm | DefenseKind::Werm | DefenseKind::WermEs => {
                Algorithm::Werm(werm::WermState::new(&session, seed)?)
            }
            DefenseKind::AdvReg | DefenseKind::AdvRegRt => {
                Algorithm::AdvReg(advreg::AdvRegState::new(&session, seed)?)
            }
            DefenseKind::Mmd => Algorithm::Mmd(mmd::MmdState::new(&session, seed)?),
            DefenseKind::DpSgdWerm => Algorithm::DpSgd(dpsgd::DpSgdState::new(&session, seed)?),
        };
        Ok(Self {
            session,
            algorithm,
            seed,
            steps: 0,
            per_epoch_seconds: Vec::new(),
        })
    }

    pub fn model(&self) -> &MlpModel {
        &self.session.model
    }

    pub fn epochs_run(&self) -> usize {
        self.session.epoch
    }

    pub fn is_done(&self) -> bool {
        self.session.epoch >= self.session.spec.epochs
    }

    /// Runs one epoch and records its wall time.
    pub fn run_epoch(&mut self) -> Result<EpochStats> {
        let start = Instant::now();
        let s = &mut self.session;
        let (loss, steps) = match &mut self.algorithm {
            Algorithm::Werm(state) => state.epoch(s)?,
            Algorithm::AdvReg(state) => state.epoch(s)?,
            Algorithm::Mmd(state) => state.epoch(s)?,
            Algorithm::DpSgd(state) => state.epoch(s)?,
        };
        let seconds = start.elapsed().as_secs_f64();
        if !loss.is_finite() {
            return Err(Error::Diverged {
                epoch: s.epoch,
                loss,
            });
        }
        let epoch = s.epoch;
        s.epoch += 1;
        self.steps += steps;
        self.per_epoch_seconds.push(seconds);
        Ok(EpochStats {
            epoch,
            loss,
            seconds,
            steps,
        })
    }

    /// Evaluates the current model and packages the run.
    pub fn finish(self, test: Option<&LabeledDataset>) -> Result<TrainedInstance> {
        let s = self.session;
        let train = if s.train.is_empty() {
            SplitMetrics {
                loss: 0.0,
                accuracy: 0.0,
            }
        } else {
            SplitMetrics::measure(&s.model, s.train)?
        };
        let reference = if s.reference.is_empty() {
            None
        } else {
            Some(SplitMetrics::measure(&s.model, s.reference)?)
        };
        let test = test.map(|t| SplitMetrics::measure(&s.model, t)).transpose()?;
        Ok(TrainedInstance {
            model: s.model,
            spec: s.spec.clone(),
            seed: self.seed,
            epochs_run: s.epoch,
            steps: self.steps,
            per_epoch_seconds: self.per_epoch_seconds,
            train,
            reference,
            test,
        })
    }
}

/// Trains `spec.epochs` epochs and evaluates on `test` when given.
pub fn train(
    spec: &DefenseSpec,
    train: &LabeledDataset,
    reference: &LabeledDataset,
    test: Option<&LabeledDataset>,
    seed: u64,
) -> Result<TrainedInstance> {
    let mut run = TrainingRun::new(spec, train, reference, seed)?;
    while !run.is_done() {
        run.run_epoch()?;
    }
    run.finish(test)
}

/// Weighted-risk training; `spec.kind` must be one of the WERM family or ERM.
pub fn train_werm(
    train_set: &LabeledDataset,
    reference: &LabeledDataset,
    spec: &DefenseSpec,
    seed: u64,
) -> Result<TrainedInstance> {
    expect_kind(spec, &[DefenseKind::Erm, DefenseKind::Werm, DefenseKind::WermEs])?;
    train(spec, train_set, reference, None, seed)
}

pub fn train_advreg(
    train_set: &LabeledDataset,
    reference: &LabeledDataset,
    spec: &DefenseSpec,
    seed: u64,
) -> Result<TrainedInstance> {
    expect_kind(spec, &[DefenseKind::AdvReg, DefenseKind::AdvRegRt])?;
    train(spec, train_set, reference, None, seed)
}

pub fn train_mmd(
    train_set: &LabeledDataset,
    reference: &LabeledDataset,
    spec: &DefenseSpec,
    seed: u64,
) -> Result<TrainedInstance> {
    expect_kind(spec, &[DefenseKind::Mmd])?;
    train(spec, train_set, reference, None, seed)
}

pub fn train_dpsgd_werm(
    train_set: &LabeledDataset,
    reference: &LabeledDataset,
    spec: &DefenseSpec,
    seed: u64,
) -> Result<TrainedInstance> {
    expect_kind(spec, &[DefenseKind::DpSgdWerm])?;
    train(spec, train_set, reference, None, seed)
}

fn expect_kind(spec: &DefenseSpec, kinds: &[DefenseKind]) -> Result<()> {
    if kinds.contains(&spec.kind) {
        Ok(())
    } else {
        Err(Error::Config(format!(
            "{} is not handled by this trainer",
            spec.kind
        )))
    }
}
