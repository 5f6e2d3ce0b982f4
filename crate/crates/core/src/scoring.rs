//! Task reward `r` and structural score `u` of a response.
//!
//! `r` is the fraction of predicted IDs that hit the target set. `u` only
//! ranks responses inside a group: each predicted ID is credited with its
//! best prefix match against the target.

use serde::{Deserialize, Serialize};

use crate::sid::{IdSet, SemanticId};

/// Weights of the prefix-match score.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhiWeights {
    pub exact: f64,
    /// Same `(a, b)`, different `c`.
    pub prefix_ab: f64,
    /// Same `a`, different `b`.
    pub prefix_a: f64,
}

impl Default for PhiWeights {
    fn default() -> Self {
        PhiWeights { exact: 1.0, prefix_ab: 0.1, prefix_a: 0.01 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResponseScore {
    pub reward: f64,
    pub structural: f64,
}

/// `|P ∩ T| / |P|`, or 0 when either set is empty.
pub fn task_reward(predicted: &IdSet, target: &IdSet) -> f64 {
    if predicted.is_empty() || target.is_empty() {
        return 0.0;
    }
    predicted.intersection_len(target) as f64 / predicted.len() as f64
}

pub fn phi(p: SemanticId, t: SemanticId) -> f64 {
    phi_weighted(p, t, &PhiWeights::default())
}

pub fn phi_weighted(p: SemanticId, t: SemanticId, w: &PhiWeights) -> f64 {
    if p == t {
        w.exact
    } else if p.a == t.a && p.b == t.b {
        w.prefix_ab
    } else if p.a == t.a {
        w.prefix_a
    } else {
        0.0
    }
}

pub fn structural_score(predicted: &IdSet, target: &IdSet) -> f64 {
    structural_score_weighted(predicted, target, &PhiWeights::default())
}

/// Mean over predicted IDs of the best `phi` against any target ID.
pub fn structural_score_weighted(predicted: &IdSet, target: &IdSet, w: &PhiWeights) -> f64 {
    if predicted.is_empty() || target.is_empty() {
        return 0.0;
    }
    let total: f64 = predicted
        .iter()
        .map(|&p| target.iter().map(|&t| phi_weighted(p, t, w)).fold(0.0, f64::max))
        .sum();
    total / predicted.len() as f64
}

pub fn score_response(predicted: &IdSet, target: &IdSet, w: &PhiWeights) -> ResponseScore {
    ResponseScore {
        reward: task_reward(predicted, target),
        structural: structural_score_weighted(predicted, target, w),
    }
}
