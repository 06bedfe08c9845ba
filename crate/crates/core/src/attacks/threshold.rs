//! Class-independent threshold attacks on per-example scores.
//!
//! The threshold is chosen by an exhaustive sweep over every observed score
//! (plus both infinities) on the attacked sets themselves, which measures the
//! worst-case leakage of the score.

use serde::{Deserialize, Serialize};

use super::{AttackInput, AttackKind, AttackReport, ConfidenceSet, TargetSplit};
use crate::numeric::clamped_ln;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreKind {
    /// `p_y`; member iff `score ≥ τ`.
    Confidence,
    /// `−Σ p log p`; member iff `score < τ`.
    Entropy,
    /// `−(1−p_y) log p_y − Σ_{y'≠y} p_{y'} log(1−p_{y'})`; member iff `score < τ`.
    ModifiedEntropy,
}

impl ScoreKind {
    fn attack_kind(self) -> AttackKind {
        match self {
            ScoreKind::Confidence => AttackKind::ConfidenceThreshold,
            ScoreKind::Entropy => AttackKind::EntropyThreshold,
            ScoreKind::ModifiedEntropy => AttackKind::ModifiedEntropyThreshold,
        }
    }

    /// True when large scores indicate membership.
    pub fn high_is_member(self) -> bool {
        self == ScoreKind::Confidence
    }

    /// Membership decision for `score` under threshold `tau`.
    pub fn predicts_member(self, score: f64, tau: f64) -> bool {
        if self.high_is_member() {
            score >= tau
        } else {
            score < tau
        }
    }
}

pub fn score(kind: ScoreKind, probs: &[f64], label: usize) -> f64 {
    match kind {
        ScoreKind::Confidence => probs[label],
        ScoreKind::Entropy => -probs.iter().map(|&p| p * clamped_ln(p)).sum::<f64>(),
        ScoreKind::ModifiedEntropy => {
            let py = probs[label];
            let mut s = -(1.0 - py) * clamped_ln(py);
            for (j, &p) in probs.iter().enumerate() {
                if j != label {
                    s -= p * clamped_ln(1.0 - p);
                }
            }
            s
        }
    }
}

fn scores(kind: ScoreKind, set: &ConfidenceSet) -> Vec<f64> {
    set.confidences
        .row_iter()
        .zip(&set.labels)
        .map(|(row, &y)| score(kind, row, y))
        .collect()
}

/// Best `(τ, member hits, non-member rejects)` over all candidate thresholds.
/// Ties keep the smallest threshold.
pub(crate) fn sweep(kind: ScoreKind, members: &[f64], nonmembers: &[f64]) -> (f64, usize, usize) {
    let (m, n) = (members.len(), nonmembers.len());
    let mut all: Vec<(f64, bool)> = members
        .iter()
        .map(|&s| (s, true))
        .chain(nonmembers.iter().map(|&s| (s, false)))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));

    // For every candidate τ, track how many members / non-members lie strictly below it.
    let high = kind.high_is_member();
    let outcome = |mem_below: usize, non_below: usize| {
        if high {
            (m - mem_below, non_below)
        } else {
            (mem_below, n - non_below)
        }
    };
    let (h0, r0) = outcome(0, 0);
    let mut best = (f64::NEG_INFINITY, h0, r0);
    let (mut mem_below, mut non_below) = (0, 0);
    let mut i = 0;
    while i < all.len() {
        let v = all[i].0;
        let (h, r) = outcome(mem_below, non_below);
        if h + r > best.1 + best.2 {
            best = (v, h, r);
        }
        while i < all.len() && all[i].0 == v {
            if all[i].1 {
                mem_below += 1;
            } else {
                non_below += 1;
            }
            i += 1;
        }
    }
    let (h, r) = outcome(mem_below, non_below);
    if h + r > best.1 + best.2 {
        best = (f64::INFINITY, h, r);
    }
    best
}

pub fn threshold_attack(input: &AttackInput, kind: ScoreKind, target: TargetSplit) -> AttackReport {
    let ms = scores(kind, &input.members);
    let ns = scores(kind, &input.nonmembers);
    let (tau, hits, rejects) = sweep(kind, &ms, &ns);
    AttackReport {
        kind: kind.attack_kind(),
        target,
        member_hits: hits,
        members: ms.len(),
        nonmember_rejects: rejects,
        nonmembers: ns.len(),
        threshold: Some(tau),
    }
}

#[cfg(test)]
mod tests {
    use super::super::tests::set;
    use super::super::*;
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn direct(kind: ScoreKind, ms: &[f64], ns: &[f64], tau: f64) -> f64 {
        let mb: Vec<bool> = ms.iter().map(|&s| kind.predicts_member(s, tau)).collect();
        let nb: Vec<bool> = ns.iter().map(|&s| kind.predicts_member(s, tau)).collect();
        mia_accuracy(&mb, &nb)
    }

    fn brute(kind: ScoreKind, ms: &[f64], ns: &[f64]) -> f64 {
        let mut candidates = vec![f64::NEG_INFINITY, f64::INFINITY];
        candidates.extend_from_slice(ms);
        candidates.extend_from_slice(ns);
        candidates
            .into_iter()
            .map(|t| direct(kind, ms, ns, t))
            .fold(0.0, f64::max)
    }

    fn conf_input(members: &[f64], nonmembers: &[f64]) -> AttackInput {
        let rows = |v: &[f64]| v.iter().map(|&p| vec![p, 1.0 - p]).collect::<Vec<_>>();
        AttackInput::new(
            set(&rows(members), &vec![0; members.len()], 0),
            set(&rows(nonmembers), &vec![0; nonmembers.len()], 100),
        )
        .unwrap()
    }

    #[test]
    fn separable_confidences() {
        let r = threshold_attack(&conf_input(&[0.9, 0.8], &[0.6, 0.4]), ScoreKind::Confidence, TargetSplit::Training);
        assert_eq!(r.accuracy(), 1.0);
        let tau = r.threshold.unwrap();
        assert!(tau > 0.6 && tau <= 0.8, "{tau}");
    }

    #[test]
    fn identical_multisets_are_chance() {
        let v = [0.3, 0.5, 0.5, 0.9];
        for kind in [ScoreKind::Confidence, ScoreKind::Entropy, ScoreKind::ModifiedEntropy] {
            let r = threshold_attack(&conf_input(&v, &v), kind, TargetSplit::Training);
            assert_eq!(r.accuracy(), 0.5);
        }
    }

    #[test]
    fn score_values() {
        let p = [0.5, 0.25, 0.25];
        assert_eq!(score(ScoreKind::Confidence, &p, 1), 0.25);
        let h = -(0.5f64 * 0.5f64.ln() + 2.0 * 0.25 * 0.25f64.ln());
        assert!((score(ScoreKind::Entropy, &p, 0) - h).abs() < 1e-15);
        let me = -(0.5 * 0.5f64.ln()) - 2.0 * 0.25 * 0.75f64.ln();
        assert!((score(ScoreKind::ModifiedEntropy, &p, 0) - me).abs() < 1e-15);
        // A one-hot correct prediction has zero modified entropy; a confident
        // mistake is large but finite thanks to the clamp.
        assert_eq!(score(ScoreKind::ModifiedEntropy, &[1.0, 0.0], 0), 0.0);
        assert!(score(ScoreKind::ModifiedEntropy, &[1.0, 0.0], 1).is_finite());
    }

    #[test]
    fn entropy_direction() {
        // Members are confident (low entropy).
        let r = threshold_attack(&conf_input(&[0.99, 0.01], &[0.5, 0.55]), ScoreKind::Entropy, TargetSplit::Reference);
        assert_eq!(r.accuracy(), 1.0);
        assert_eq!(r.target, TargetSplit::Reference);
    }

    proptest! {
        #[test]
        fn sweep_equals_brute_force(
            ms in prop::collection::vec(0u8..20, 1..60),
            ns in prop::collection::vec(0u8..20, 1..60),
        ) {
            let ms: Vec<f64> = ms.into_iter().map(|v| v as f64 / 20.0).collect();
            let ns: Vec<f64> = ns.into_iter().map(|v| v as f64 / 20.0).collect();
            for kind in [ScoreKind::Confidence, ScoreKind::Entropy] {
                let (tau, h, r) = sweep(kind, &ms, &ns);
                let acc = super::super::count_accuracy(h, ms.len(), r, ns.len());
                prop_assert_eq!(acc, brute(kind, &ms, &ns));
                prop_assert_eq!(acc, direct(kind, &ms, &ns, tau));
            }
        }

        #[test]
        fn sweep_beats_random_thresholds(seed in any::<u64>()) {
            let mut rng = crate::seed::rng(seed);
            let ms: Vec<f64> = (0..50).map(|_| rng.random_range(0.2..1.0)).collect();
            let ns: Vec<f64> = (0..50).map(|_| rng.random_range(0.0..0.8)).collect();
            let (_, h, r) = sweep(ScoreKind::Confidence, &ms, &ns);
            let best = super::super::count_accuracy(h, 50, r, 50);
            prop_assert!(best >= 0.5);
            for _ in 0..1000 {
                let tau = rng.random_range(-0.1..1.1);
                prop_assert!(best >= direct(ScoreKind::Confidence, &ms, &ns, tau));
            }
        }

        #[test]
        fn label_permutation_equivariance(seed in any::<u64>()) {
            let mut rng = crate::seed::rng(seed);
            let k = 4;
            let perm = [2usize, 0, 3, 1];
            let mut make = |id0: usize| {
                let rows: Vec<Vec<f64>> = (0..12).map(|_| {
                    let mut v: Vec<f64> = (0..k).map(|_| rng.random_range(-3.0..3.0)).collect();
                    crate::numeric::softmax_in_place(&mut v);
                    v
                }).collect();
                let labels: Vec<usize> = (0..12).map(|_| rng.random_range(0..k)).collect();
                let permuted: Vec<Vec<f64>> = rows.iter().map(|r| {
                    let mut out = vec![0.0; k];
                    for (j, &p) in r.iter().enumerate() { out[perm[j]] = p; }
                    out
                }).collect();
                let plabels: Vec<usize> = labels.iter().map(|&y| perm[y]).collect();
                (set(&rows, &labels, id0), set(&permuted, &plabels, id0))
            };
            let (m, pm) = make(0);
            let (n, pn) = make(100);
            let a = AttackInput::new(m, n).unwrap();
            let b = AttackInput::new(pm, pn).unwrap();
            for kind in [AttackKind::Gap, AttackKind::ConfidenceThreshold, AttackKind::EntropyThreshold, AttackKind::ModifiedEntropyThreshold] {
                let ra = run_attack(kind, &a, TargetSplit::Training).unwrap();
                let rb = run_attack(kind, &b, TargetSplit::Training).unwrap();
                prop_assert_eq!(ra.accuracy(), rb.accuracy());
            }
        }
    }
}
