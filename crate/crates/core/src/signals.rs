//! Within-group learning signals.
//!
//! Two signal paths share one entry point, [`build_signal`]:
//!
//! - reward normalization over the whole group, `(r_i - μ) / (σ + ε)` with the
//!   population standard deviation;
//! - repair-then-contrast: an all-zero group first has its least informative
//!   response (lowest structural score) replaced by an anchor rendered from
//!   the target, then only the strongest positive and the hardest negative
//!   receive `+w` and `-w`.
//!
//! [`SignalMode`] selects the baseline, either component alone, or both.
//! Every argmax/argmin breaks ties toward the lowest index.

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math;
use crate::scoring::{score_response, PhiWeights};
use crate::sid::{parse_response, push_sid, CatalogShape, IdSet, ResponseText};

/// Ablation variant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignalMode {
    Grpo,
    RepairOnly,
    BoundaryOnly,
    Recast,
}

impl SignalMode {
    pub const ALL: [SignalMode; 4] =
        [SignalMode::Grpo, SignalMode::RepairOnly, SignalMode::BoundaryOnly, SignalMode::Recast];

    pub fn repairs(self) -> bool {
        matches!(self, SignalMode::RepairOnly | SignalMode::Recast)
    }

    /// Whether advantages come from the boundary pair rather than normalization.
    pub fn contrastive(self) -> bool {
        matches!(self, SignalMode::BoundaryOnly | SignalMode::Recast)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SignalMode::Grpo => "grpo",
            SignalMode::RepairOnly => "repair_only",
            SignalMode::BoundaryOnly => "boundary_only",
            SignalMode::Recast => "recast",
        }
    }
}

impl core::str::FromStr for SignalMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "grpo" => Ok(SignalMode::Grpo),
            "repair_only" => Ok(SignalMode::RepairOnly),
            "boundary_only" => Ok(SignalMode::BoundaryOnly),
            "recast" => Ok(SignalMode::Recast),
            _ => Err(Error::InvalidConfig("unknown signal mode")),
        }
    }
}

impl core::fmt::Display for SignalMode {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SignalConfig {
    pub mode: SignalMode,
    /// Contrastive weight, `> 0`.
    pub w: f64,
    /// Normalization stabilizer, `> 0`.
    pub epsilon: f64,
    #[serde(default)]
    pub phi: PhiWeights,
}

impl SignalConfig {
    pub fn new(mode: SignalMode) -> Self {
        SignalConfig { mode, w: 1.0, epsilon: 1e-6, phi: PhiWeights::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.w > 0.0 && self.w.is_finite()) {
            return Err(Error::InvalidConfig("w must be a finite positive number"));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::InvalidConfig("epsilon must be a finite positive number"));
        }
        Ok(())
    }
}

impl Default for SignalConfig {
    fn default() -> Self {
        SignalConfig::new(SignalMode::Recast)
    }
}

/// A scored rollout group, possibly repaired.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredGroup {
    pub prompt_id: usize,
    pub responses: Vec<ResponseText>,
    pub id_sets: Vec<IdSet>,
    pub rewards: Vec<f64>,
    pub structurals: Vec<f64>,
    pub target: IdSet,
    pub repaired: bool,
    pub replaced_index: Option<usize>,
    pub anchor_index: Option<usize>,
}

impl ScoredGroup {
    /// Parses and scores every response against `target`.
    pub fn score(
        prompt_id: usize,
        responses: Vec<ResponseText>,
        target: IdSet,
        shape: &CatalogShape,
        phi: &PhiWeights,
    ) -> Result<Self> {
        if responses.len() < 2 {
            return Err(Error::LengthMismatch { expected: 2, found: responses.len() });
        }
        let id_sets: Vec<IdSet> =
            responses.iter().map(|r| parse_response(r.as_str(), shape)).collect();
        let (rewards, structurals) = id_sets
            .iter()
            .map(|p| {
                let s = score_response(p, &target, phi);
                (s.reward, s.structural)
            })
            .unzip();
        Ok(ScoredGroup {
            prompt_id,
            responses,
            id_sets,
            rewards,
            structurals,
            target,
            repaired: false,
            replaced_index: None,
            anchor_index: None,
        })
    }

    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    /// Checks the structural invariants of the record.
    pub fn validate(&self) -> Result<()> {
        let g = self.rewards.len();
        if g < 2 {
            return Err(Error::LengthMismatch { expected: 2, found: g });
        }
        for n in [self.responses.len(), self.id_sets.len(), self.structurals.len()] {
            if n != g {
                return Err(Error::LengthMismatch { expected: g, found: n });
            }
        }
        match (self.repaired, self.replaced_index, self.anchor_index) {
            (false, None, None) => Ok(()),
            (true, Some(r), Some(a)) if r == a && a < g && self.rewards[a] > 0.0 => Ok(()),
            _ => Err(Error::InvalidConfig("inconsistent repair metadata")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdvantageVector {
    pub values: Vec<f64>,
    pub mode: SignalMode,
    /// Indices with a nonzero value, ascending.
    pub active: Vec<usize>,
    /// The contrastive update was skipped for lack of a pair.
    pub skipped: bool,
}

impl AdvantageVector {
    pub fn new(values: Vec<f64>, mode: SignalMode, skipped: bool) -> Self {
        let active = values
            .iter()
            .enumerate()
            .filter(|(_, &v)| v != 0.0)
            .map(|(i, _)| i)
            .collect();
        AdvantageVector { values, mode, active, skipped }
    }

    fn skipped(len: usize, mode: SignalMode) -> Self {
        AdvantageVector::new(alloc::vec![0.0; len], mode, true)
    }
}

/// Number of responses with a strictly positive reward.
pub fn hit_count(group: &ScoredGroup) -> usize {
    group.rewards.iter().filter(|&&r| r > 0.0).count()
}

/// Group reward normalization with population standard deviation.
pub fn grpo_advantages(rewards: &[f64], epsilon: f64) -> Result<AdvantageVector> {
    let g = rewards.len();
    if g < 2 {
        return Err(Error::LengthMismatch { expected: 2, found: g });
    }
    let n = g as f64;
    let mean = rewards.iter().sum::<f64>() / n;
    let var = rewards.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / n;
    let denom = math::sqrt(var) + epsilon;
    let values = rewards.iter().map(|r| (r - mean) / denom).collect();
    Ok(AdvantageVector::new(values, SignalMode::Grpo, false))
}

/// Positive anchor response: the target IDs rendered in lexicographic order.
pub fn make_anchor(target: &IdSet, shape: &CatalogShape) -> Result<ResponseText> {
    if target.is_empty() {
        return Err(Error::EmptyTarget);
    }
    let mut text = String::new();
    for id in target.iter() {
        if !id.in_bounds(shape) {
            return Err(Error::OutOfBounds { a: id.a, b: id.b, c: id.c });
        }
        push_sid(&mut text, *id);
    }
    Ok(ResponseText::new(text))
}

fn argmax_by<I: Iterator<Item = (usize, f64)>>(items: I) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, v) in items {
        match best {
            Some((_, bv)) if v <= bv => {}
            _ => best = Some((i, v)),
        }
    }
    best.map(|(i, _)| i)
}

/// Replaces the lowest-`u` response of an all-zero group with the anchor.
///
/// Groups with at least one hit come back untouched.
pub fn repair_group(
    group: &ScoredGroup,
    shape: &CatalogShape,
    phi: &PhiWeights,
) -> Result<ScoredGroup> {
    if hit_count(group) > 0 {
        return Ok(group.clone());
    }
    let anchor = make_anchor(&group.target, shape)?;
    let j = argmax_by(group.structurals.iter().map(|&u| -u).enumerate())
        .ok_or(Error::LengthMismatch { expected: 2, found: 0 })?;
    let ids = parse_response(anchor.as_str(), shape);
    let score = score_response(&ids, &group.target, phi);
    let mut out = group.clone();
    out.responses[j] = anchor;
    out.id_sets[j] = ids;
    out.rewards[j] = score.reward;
    out.structurals[j] = score.structural;
    out.repaired = true;
    out.replaced_index = Some(j);
    out.anchor_index = Some(j);
    Ok(out)
}

/// Strongest positive and hardest zero-reward negative.
///
/// `Ok(None)` means the group has no zero-reward response and the
/// contrastive update is skipped.
pub fn select_boundary(group: &ScoredGroup) -> Result<Option<(usize, usize)>> {
    let positives = group.rewards.iter().enumerate().filter(|(_, &r)| r > 0.0);
    let i_plus = argmax_by(positives.map(|(i, &r)| (i, r))).ok_or(Error::NoPositive)?;
    let negatives = group
        .rewards
        .iter()
        .zip(&group.structurals)
        .enumerate()
        .filter(|(_, (&r, _))| r == 0.0)
        .map(|(i, (_, &u))| (i, u));
    Ok(argmax_by(negatives).map(|i_minus| (i_plus, i_minus)))
}

/// `+w` on the boundary positive, `-w` on the boundary negative, 0 elsewhere.
pub fn recast_advantages(group: &ScoredGroup, config: &SignalConfig) -> Result<AdvantageVector> {
    let g = group.len();
    match select_boundary(group)? {
        None => Ok(AdvantageVector::skipped(g, config.mode)),
        Some((i_plus, i_minus)) => {
            let mut values = alloc::vec![0.0; g];
            values[i_plus] = config.w;
            values[i_minus] = -config.w;
            Ok(AdvantageVector::new(values, config.mode, false))
        }
    }
}

/// Runs the configured ablation variant on one scored group.
pub fn build_signal(
    group: &ScoredGroup,
    config: &SignalConfig,
    shape: &CatalogShape,
) -> Result<(ScoredGroup, AdvantageVector)> {
    config.validate()?;
    group.validate()?;
    let group = if config.mode.repairs() {
        repair_group(group, shape, &config.phi)?
    } else {
        group.clone()
    };
    let adv = if config.mode.contrastive() {
        if hit_count(&group) == 0 {
            AdvantageVector::skipped(group.len(), config.mode)
        } else {
            recast_advantages(&group, config)?
        }
    } else {
        let mut adv = grpo_advantages(&group.rewards, config.epsilon)?;
        adv.mode = config.mode;
        adv
    };
    Ok((group, adv))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sid::{render_sid, SemanticId};
    use crate::scoring::task_reward;
    use alloc::vec;

    fn shape() -> CatalogShape {
        CatalogShape::new(8, 8, 8).unwrap()
    }

    fn id(a: u32, b: u32, c: u32) -> SemanticId {
        SemanticId { a, b, c }
    }

    /// Group with explicit scores; response texts are placeholders.
    fn group(rewards: &[f64], structurals: &[f64]) -> ScoredGroup {
        let g = rewards.len();
        ScoredGroup {
            prompt_id: 0,
            responses: (0..g).map(|i| ResponseText::new(alloc::format!("r{i}"))).collect(),
            id_sets: vec![IdSet::new(); g],
            rewards: rewards.to_vec(),
            structurals: structurals.to_vec(),
            target: IdSet::single(id(3, 5, 7)),
            repaired: false,
            replaced_index: None,
            anchor_index: None,
        }
    }

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn hit_count_examples() {
        assert_eq!(hit_count(&group(&[0.0; 4], &[0.0; 4])), 0);
        assert_eq!(hit_count(&group(&[1.0, 0.0, 0.0, 0.0], &[0.0; 4])), 1);
        assert_eq!(hit_count(&group(&[1.0, 0.5, 0.0, 0.0], &[0.0; 4])), 2);
    }

    #[test]
    fn grpo_examples() {
        let a = grpo_advantages(&[1.0, 0.0, 0.0, 0.0], 1e-6).unwrap();
        assert!(close(&a.values, &[1.73205, -0.57735, -0.57735, -0.57735], 5e-6));
        assert_eq!(a.active, vec![0, 1, 2, 3]);
        let z = grpo_advantages(&[0.0; 4], 1e-6).unwrap();
        assert_eq!(z.values, vec![0.0; 4]);
        assert!(z.active.is_empty());
        assert_eq!(grpo_advantages(&[1.0, 1.0], 1e-6).unwrap().values, vec![0.0, 0.0]);
        assert!(grpo_advantages(&[1.0], 1e-6).is_err());
    }

    #[test]
    fn anchor_examples() {
        let s = shape();
        assert_eq!(make_anchor(&IdSet::single(id(3, 5, 7)), &s).unwrap().as_str(), "<a_3><b_5><c_7>");
        let t: IdSet = [id(1, 2, 3), id(0, 0, 0)].into_iter().collect();
        let text = make_anchor(&t, &s).unwrap();
        assert_eq!(text.as_str(), "<a_0><b_0><c_0><a_1><b_2><c_3>");
        assert_eq!(parse_response(text.as_str(), &s), t);
        assert_eq!(task_reward(&parse_response(text.as_str(), &s), &t), 1.0);
        assert_eq!(make_anchor(&IdSet::new(), &s), Err(Error::EmptyTarget));
    }

    #[test]
    fn repair_replaces_argmin() {
        let s = shape();
        let phi = PhiWeights::default();
        let g = group(&[0.0; 3], &[0.01, 0.0, 0.1]);
        let r = repair_group(&g, &s, &phi).unwrap();
        assert!(r.repaired);
        assert_eq!(r.replaced_index, Some(1));
        assert_eq!(hit_count(&r), 1);
        assert_eq!(r.responses[1].as_str(), "<a_3><b_5><c_7>");
        assert_eq!((r.rewards[1], r.structurals[1]), (1.0, 1.0));
        r.validate().unwrap();

        let tie = repair_group(&group(&[0.0; 3], &[0.0; 3]), &s, &phi).unwrap();
        assert_eq!(tie.replaced_index, Some(0));

        let hit = group(&[0.0, 1.0, 0.0], &[0.0, 1.0, 0.0]);
        assert_eq!(repair_group(&hit, &s, &phi).unwrap(), hit);

        let mut empty = group(&[0.0; 2], &[0.0; 2]);
        empty.target = IdSet::new();
        assert_eq!(repair_group(&empty, &s, &phi), Err(Error::EmptyTarget));
    }

    #[test]
    fn boundary_examples() {
        let g = group(&[0.0, 0.5, 1.0, 0.0], &[0.2, 0.9, 1.0, 0.4]);
        assert_eq!(select_boundary(&g).unwrap(), Some((2, 3)));
        assert_eq!(select_boundary(&group(&[1.0, 1.0], &[1.0, 1.0])).unwrap(), None);
        assert_eq!(select_boundary(&group(&[0.0, 0.0], &[0.0, 0.0])), Err(Error::NoPositive));

        let repaired =
            repair_group(&group(&[0.0; 4], &[0.1, 0.01, 0.0, 0.1]), &shape(), &PhiWeights::default())
                .unwrap();
        let (plus, minus) = select_boundary(&repaired).unwrap().unwrap();
        assert_eq!(Some(plus), repaired.anchor_index);
        assert_eq!(minus, 0);
    }

    #[test]
    fn recast_examples() {
        let cfg = SignalConfig::new(SignalMode::Recast);
        let a = recast_advantages(&group(&[0.0, 1.0, 0.0], &[0.1, 1.0, 0.01]), &cfg).unwrap();
        assert_eq!(a.values, vec![-1.0, 1.0, 0.0]);
        assert_eq!(a.active, vec![0, 1]);
        assert!(!a.skipped);

        let s = recast_advantages(&group(&[1.0, 1.0], &[1.0, 1.0]), &cfg).unwrap();
        assert_eq!(s.values, vec![0.0, 0.0]);
        assert!(s.skipped && s.active.is_empty());

        let wide = SignalConfig { w: 2.5, ..cfg };
        let a = recast_advantages(&group(&[0.0, 1.0], &[0.0, 1.0]), &wide).unwrap();
        assert_eq!(a.values, vec![-2.5, 2.5]);
    }

    #[test]
    fn build_signal_modes_on_all_zero_group() {
        let s = shape();
        let g = group(&[0.0; 4], &[0.01, 0.1, 0.0, 0.0]);

        let (rg, a) = build_signal(&g, &SignalConfig::new(SignalMode::Recast), &s).unwrap();
        assert!(rg.repaired);
        assert_eq!(rg.anchor_index, Some(2));
        assert_eq!(a.active, vec![1, 2]);
        assert_eq!(a.values[2], 1.0);
        assert_eq!(a.values[1], -1.0);

        let (gg, a) = build_signal(&g, &SignalConfig::new(SignalMode::Grpo), &s).unwrap();
        assert_eq!(gg, g);
        assert_eq!(a.values, vec![0.0; 4]);
        assert!(!a.skipped);

        let (bg, a) = build_signal(&g, &SignalConfig::new(SignalMode::BoundaryOnly), &s).unwrap();
        assert_eq!(bg, g);
        assert!(a.skipped && a.active.is_empty());

        let (ro, a) = build_signal(&g, &SignalConfig::new(SignalMode::RepairOnly), &s).unwrap();
        assert!(ro.repaired);
        assert_eq!(a.mode, SignalMode::RepairOnly);
        assert_eq!(a.active.len(), 4);
        assert!(a.values[2] > 0.0);
    }

    #[test]
    fn scored_group_from_text() {
        let s = shape();
        let t = IdSet::single(id(3, 5, 7));
        let texts = vec![
            render_sid(id(3, 5, 7)),
            render_sid(id(3, 5, 1)),
            ResponseText::new("<c_0><b_0><a_0>"),
        ];
        let g = ScoredGroup::score(4, texts, t, &s, &PhiWeights::default()).unwrap();
        assert_eq!(g.rewards, vec![1.0, 0.0, 0.0]);
        assert_eq!(g.structurals, vec![1.0, 0.1, 0.0]);
        assert!(g.id_sets[2].is_empty());
    }

    #[test]
    fn invalid_config_rejected() {
        let g = group(&[0.0, 1.0], &[0.0, 1.0]);
        let bad = SignalConfig { w: 0.0, ..SignalConfig::default() };
        assert!(build_signal(&g, &bad, &shape()).is_err());
        let bad = SignalConfig { epsilon: -1.0, ..SignalConfig::default() };
        assert!(build_signal(&g, &bad, &shape()).is_err());
    }
}
