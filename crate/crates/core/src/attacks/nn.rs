//! Neural-network membership attack.
//!
//! An MLP with a sigmoid output is trained on the attacker's known members
//! and non-members, using `one-hot label ⊕ confidence vector` as input, and
//! predicts "member" when its output exceeds 1/2.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use super::{AttackInput, AttackKind, AttackReport, ConfidenceSet, TargetSplit};
use crate::datasets::BatchStream;
use crate::defenses::attack_features;
use crate::error::{Error, Result};
use crate::numeric::{Matrix, MlpModel, OptimizerState, OutputActivation};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NnAttackConfig {
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
}

impl Default for NnAttackConfig {
    fn default() -> Self {
        Self {
            hidden: vec![64],
            epochs: 30,
            batch_size: 64,
            learning_rate: 0.001,
        }
    }
}

fn features(set: &ConfidenceSet) -> Result<Matrix> {
    attack_features(&set.confidences, &set.labels)
}

pub fn nn_attack(
    input: &AttackInput,
    known: &AttackInput,
    config: &NnAttackConfig,
    seed: u64,
    target: TargetSplit,
) -> Result<AttackReport> {
    let eval_ids: HashSet<usize> = input
        .members
        .ids
        .iter()
        .chain(&input.nonmembers.ids)
        .copied()
        .collect();
    if let Some(id) = known
        .members
        .ids
        .iter()
        .chain(&known.nonmembers.ids)
        .find(|id| eval_ids.contains(id))
    {
        return Err(Error::Validation(format!(
            "example {id} is both attacker knowledge and evaluation data"
        )));
    }
    if known.members.class_count() != input.members.class_count() {
        return Err(Error::Shape("attacker and target class counts differ".into()));
    }
    if config.batch_size == 0 || config.hidden.contains(&0) {
        return Err(Error::Config("invalid neural-network attack configuration".into()));
    }

    let x = features(&known.members)?.vstack(&features(&known.nonmembers)?)?;
    let (m, n) = (known.members.len(), known.nonmembers.len());
    let labels: Vec<usize> = (0..m + n).map(|i| usize::from(i < m)).collect();
    // Balance the two classes regardless of their sizes.
    let class_weight = [0.5 / n as f64, 0.5 / m as f64];

    let mut sizes = vec![x.cols()];
    sizes.extend_from_slice(&config.hidden);
    sizes.push(1);
    let mut init = seed::rng(seed::derive(seed, &[seed::stream::NN_ATTACK, seed::stream::INIT]));
    let mut model = MlpModel::new(&sizes, OutputActivation::Sigmoid, &mut init)?;
    let mut opt = OptimizerState::adam(config.learning_rate);
    let mut stream = BatchStream::new(
        m + n,
        config.batch_size,
        seed::derive(seed, &[seed::stream::NN_ATTACK, seed::stream::BATCHES]),
    )?;
    for _ in 0..config.epochs {
        for _ in 0..stream.batches_per_epoch() {
            let idx = stream.next_indices();
            let xb = x.select_rows(&idx);
            let yb: Vec<usize> = idx.iter().map(|&i| labels[i]).collect();
            // Rescale so each batch carries unit total weight.
            let raw: Vec<f64> = yb.iter().map(|&y| class_weight[y]).collect();
            let total: f64 = raw.iter().sum();
            let wb: Vec<f64> = raw.iter().map(|w| w / total).collect();
            let (_, cache) = model.forward(&xb)?;
            let g = model.backward(&cache, &yb, &wb)?;
            opt.step(&mut model, &g)?;
        }
    }

    let predict = |set: &ConfidenceSet| -> Result<Vec<bool>> {
        Ok(model
            .predict(&features(set)?)?
            .as_slice()
            .iter()
            .map(|&h| h > 0.5)
            .collect())
    };
    Ok(AttackReport::from_predictions(
        AttackKind::NeuralNetwork,
        target,
        &predict(&input.members)?,
        &predict(&input.nonmembers)?,
        None,
    ))
}
