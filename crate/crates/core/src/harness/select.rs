//! Instance selection under the three privacy regimes.

use serde::{Deserialize, Serialize};

use super::sweep::TradeoffPoint;
use crate::defenses::DefenseKind;

/// Largest MIA accuracy treated as "no leakage".
pub const MIA_CEILING: f64 = 0.51;
/// Largest train/reference MIA difference treated as "equal privacy".
pub const EQUAL_PRIVACY_GAP: f64 = 0.04;
// Absorbs float error in values such as 0.615 − 0.575.
const SLACK: f64 = 1e-12;

pub const NO_MATCH: &str = "no model instances that met the criteria";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    PublicReference,
    EqualPrivacy,
    HighReferencePrivacy,
}

impl Regime {
    pub const ALL: [Regime; 3] = [Regime::PublicReference, Regime::EqualPrivacy, Regime::HighReferencePrivacy];

    pub fn name(self) -> &'static str {
        match self {
            Regime::PublicReference => "public_reference",
            Regime::EqualPrivacy => "equal_privacy",
            Regime::HighReferencePrivacy => "high_reference_privacy",
        }
    }

    pub fn admits(self, p: &TradeoffPoint) -> bool {
        let (tr, rf) = (p.mia_train.mean, p.mia_ref.mean);
        match self {
            Regime::PublicReference => tr <= MIA_CEILING + SLACK,
            Regime::EqualPrivacy => (tr - rf).abs() <= EQUAL_PRIVACY_GAP + SLACK,
            Regime::HighReferencePrivacy => rf <= MIA_CEILING + SLACK,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegimeSelection {
    pub defense: Option<DefenseKind>,
    pub regime: Regime,
    pub chosen: Option<TradeoffPoint>,
    pub reason: String,
}

/// Highest test accuracy among admitted points; ties go to the lowest
/// `mia_train`, then the lowest `mia_ref`, then the earliest point.
pub fn select_instance(points: &[TradeoffPoint], regime: Regime) -> RegimeSelection {
    let mut best: Option<&TradeoffPoint> = None;
    for p in points.iter().filter(|p| p.is_ok() && regime.admits(p)) {
        let better = match best {
            None => true,
            Some(b) => {
                let key = |q: &TradeoffPoint| (-q.test_accuracy.mean, q.mia_train.mean, q.mia_ref.mean);
                key(p).partial_cmp(&key(b)) == Some(std::cmp::Ordering::Less)
            }
        };
        if better {
            best = Some(p);
        }
    }
    let defense = points.first().map(|p| p.kind);
    match best {
        Some(p) => RegimeSelection {
            defense,
            regime,
            chosen: Some(p.clone()),
            reason: format!("highest test accuracy among {} admitted", points.iter().filter(|q| q.is_ok() && regime.admits(q)).count()),
        },
        None => RegimeSelection {
            defense,
            regime,
            chosen: None,
            reason: NO_MATCH.into(),
        },
    }
}

/// One selection per defense kind and regime, kinds in order of first appearance.
pub fn select_table(points: &[TradeoffPoint]) -> Vec<RegimeSelection> {
    let mut kinds: Vec<DefenseKind> = Vec::new();
    for p in points {
        if !kinds.contains(&p.kind) {
            kinds.push(p.kind);
        }
    }
    let mut out = Vec::new();
    for kind in kinds {
        let group: Vec<TradeoffPoint> = points.iter().filter(|p| p.kind == kind).cloned().collect();
        for regime in Regime::ALL {
            let mut s = select_instance(&group, regime);
            s.defense = Some(kind);
            out.push(s);
        }
    }
    out
}
