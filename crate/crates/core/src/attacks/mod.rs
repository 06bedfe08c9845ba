//! Black-box membership-inference attacks.
//!
//! Every attack turns confidence vectors (plus true labels) into a membership
//! bit per example and is scored by the balanced accuracy
//! `(Σ member bits + Σ (1 − non-member bits)) / (|members| + |non-members|)`.
//! Reports keep the raw counts so accuracies can always be recomputed exactly.

mod dump;
mod nn;
mod threshold;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{argmax, Matrix};

pub use dump::{read_confidence_csv, write_confidence_csv, ConfidenceDump, SplitTag};
pub use nn::{nn_attack, NnAttackConfig};
pub use threshold::{score, threshold_attack, ScoreKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackKind {
    Gap,
    #[serde(rename = "confidence")]
    ConfidenceThreshold,
    #[serde(rename = "entropy")]
    EntropyThreshold,
    #[serde(rename = "modified_entropy")]
    ModifiedEntropyThreshold,
    #[serde(rename = "nn")]
    NeuralNetwork,
}

impl AttackKind {
    pub const ALL: [AttackKind; 5] = [
        AttackKind::Gap,
        AttackKind::ConfidenceThreshold,
        AttackKind::EntropyThreshold,
        AttackKind::ModifiedEntropyThreshold,
        AttackKind::NeuralNetwork,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AttackKind::Gap => "gap",
            AttackKind::ConfidenceThreshold => "confidence",
            AttackKind::EntropyThreshold => "entropy",
            AttackKind::ModifiedEntropyThreshold => "modified_entropy",
            AttackKind::NeuralNetwork => "nn",
        }
    }
}

impl std::fmt::Display for AttackKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for AttackKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        AttackKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown attack {s:?}")))
    }
}

/// Which split played the member role.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetSplit {
    Training,
    Reference,
}

impl TargetSplit {
    pub fn name(self) -> &'static str {
        match self {
            TargetSplit::Training => "training",
            TargetSplit::Reference => "reference",
        }
    }
}

/// Confidence vectors of a set of examples with their true labels.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfidenceSet {
    pub confidences: Matrix,
    pub labels: Vec<usize>,
    /// Example identifiers, used to detect overlap between attacker
    /// knowledge and evaluation data.
    pub ids: Vec<usize>,
}

impl ConfidenceSet {
    pub fn new(confidences: Matrix, labels: Vec<usize>, ids: Vec<usize>) -> Result<Self> {
        if confidences.rows() != labels.len() || ids.len() != labels.len() {
            return Err(Error::Shape(format!(
                "{} confidence rows, {} labels, {} ids",
                confidences.rows(),
                labels.len(),
                ids.len()
            )));
        }
        let k = confidences.cols();
        if let Some(&y) = labels.iter().find(|&&y| y >= k) {
            return Err(Error::Index(format!("label {y} with {k} classes")));
        }
        Ok(Self {
            confidences,
            labels,
            ids,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn class_count(&self) -> usize {
        self.confidences.cols()
    }

    pub fn subset(&self, rows: &[usize]) -> ConfidenceSet {
        ConfidenceSet {
            confidences: self.confidences.select_rows(rows),
            labels: rows.iter().map(|&i| self.labels[i]).collect(),
            ids: rows.iter().map(|&i| self.ids[i]).collect(),
        }
    }

    pub fn truncated(&self, n: usize) -> ConfidenceSet {
        self.subset(&(0..n.min(self.len())).collect::<Vec<_>>())
    }

    /// Fraction of rows whose argmax is the true label.
    pub fn accuracy(&self) -> f64 {
        if self.is_empty() {
            return 0.0;
        }
        self.correct().iter().filter(|&&c| c).count() as f64 / self.len() as f64
    }

    pub fn correct_count(&self) -> usize {
        self.correct().iter().filter(|&&c| c).count()
    }

    fn correct(&self) -> Vec<bool> {
        self.confidences
            .row_iter()
            .zip(&self.labels)
            .map(|(row, &y)| argmax(row) == y)
            .collect()
    }
}

/// Members and non-members presented to an attack.
#[derive(Debug, Clone, PartialEq)]
pub struct AttackInput {
    pub members: ConfidenceSet,
    pub nonmembers: ConfidenceSet,
}

impl AttackInput {
    pub fn new(members: ConfidenceSet, nonmembers: ConfidenceSet) -> Result<Self> {
        if members.is_empty() || nonmembers.is_empty() {
            return Err(Error::Validation("attack needs members and non-members".into()));
        }
        if members.class_count() != nonmembers.class_count() {
            return Err(Error::Shape("member and non-member class counts differ".into()));
        }
        Ok(Self {
            members,
            nonmembers,
        })
    }

    pub fn is_balanced(&self) -> bool {
        self.members.len() == self.nonmembers.len()
    }

    /// Truncates the larger side so both have the same size.
    pub fn balanced(&self) -> AttackInput {
        let n = self.members.len().min(self.nonmembers.len());
        AttackInput {
            members: self.members.truncated(n),
            nonmembers: self.nonmembers.truncated(n),
        }
    }
}

/// Outcome of one attack on one target split.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttackReport {
    pub kind: AttackKind,
    pub target: TargetSplit,
    /// Members predicted as members.
    pub member_hits: usize,
    pub members: usize,
    /// Non-members predicted as non-members.
    pub nonmember_rejects: usize,
    pub nonmembers: usize,
    pub threshold: Option<f64>,
}

impl AttackReport {
    pub fn from_predictions(
        kind: AttackKind,
        target: TargetSplit,
        member_bits: &[bool],
        nonmember_bits: &[bool],
        threshold: Option<f64>,
    ) -> Self {
        Self {
            kind,
            target,
            member_hits: member_bits.iter().filter(|&&b| b).count(),
            members: member_bits.len(),
            nonmember_rejects: nonmember_bits.iter().filter(|&&b| !b).count(),
            nonmembers: nonmember_bits.len(),
            threshold,
        }
    }

    pub fn accuracy(&self) -> f64 {
        count_accuracy(
            self.member_hits,
            self.members,
            self.nonmember_rejects,
            self.nonmembers,
        )
    }
}

pub(crate) fn count_accuracy(hits: usize, m: usize, rejects: usize, n: usize) -> f64 {
    if m + n == 0 {
        return 0.0;
    }
    (hits + rejects) as f64 / (m + n) as f64
}

/// Balanced membership accuracy of the predicted bits.
pub fn mia_accuracy(member_predictions: &[bool], nonmember_predictions: &[bool]) -> f64 {
    let hits = member_predictions.iter().filter(|&&b| b).count();
    let rejects = nonmember_predictions.iter().filter(|&&b| !b).count();
    count_accuracy(
        hits,
        member_predictions.len(),
        rejects,
        nonmember_predictions.len(),
    )
}

/// Predicts "member" exactly for correctly classified examples.
pub fn gap_attack(input: &AttackInput, target: TargetSplit) -> AttackReport {
    AttackReport::from_predictions(
        AttackKind::Gap,
        target,
        &input.members.correct(),
        &input.nonmembers.correct(),
        None,
    )
}

/// Closed-form gap-attack accuracy for equal-size sets:
/// `1/2 + (acc_members − acc_nonmembers)/2`.
pub fn gap_attack_closed_form(member_accuracy: f64, nonmember_accuracy: f64) -> f64 {
    0.5 + (member_accuracy - nonmember_accuracy) / 2.0
}

/// Runs one attack kind. The neural-network attack needs attacker knowledge
/// and is handled by [`nn_attack`] instead.
pub fn run_attack(kind: AttackKind, input: &AttackInput, target: TargetSplit) -> Result<AttackReport> {
    match kind {
        AttackKind::Gap => Ok(gap_attack(input, target)),
        AttackKind::ConfidenceThreshold => Ok(threshold_attack(input, ScoreKind::Confidence, target)),
        AttackKind::EntropyThreshold => Ok(threshold_attack(input, ScoreKind::Entropy, target)),
        AttackKind::ModifiedEntropyThreshold => {
            Ok(threshold_attack(input, ScoreKind::ModifiedEntropy, target))
        }
        AttackKind::NeuralNetwork => Err(Error::Config(
            "the neural-network attack needs known member and non-member sets".into(),
        )),
    }
}
