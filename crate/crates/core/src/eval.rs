//! Evaluation metrics and degeneracy diagnostics.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::env::{Dataset, TabularPolicy};
use crate::error::{Error, Result};
use crate::math;
use crate::rng::{stream_rng, Stream};
use crate::sid::{parse_response, render_sid, IdSet};
use crate::signals::{hit_count, ScoredGroup};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub k_values: Vec<usize>,
    /// Responses drawn per prompt; must cover the largest K.
    pub eval_samples: usize,
    pub eval_seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig { k_values: vec![1, 32], eval_samples: 32, eval_seed: 1_000_003 }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k_values.contains(&0) {
            return Err(Error::InvalidConfig("K values must be at least 1"));
        }
        if self.k_values.iter().any(|&k| k > self.eval_samples) {
            return Err(Error::InvalidConfig("K exceeds eval_samples"));
        }
        Ok(())
    }
}

/// Parsed ID sets of `eval_samples` fresh draws per prompt.
///
/// Draws are i.i.d. from the policy with one stream per prompt keyed by the
/// eval seed, so a table depends only on `(policy, dataset, eval_seed)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleTable {
    pub rows: Vec<Vec<IdSet>>,
}

pub fn sample_table(policy: &TabularPolicy, dataset: &Dataset, cfg: &EvalConfig) -> Result<SampleTable> {
    cfg.validate()?;
    let rows = dataset
        .prompts
        .iter()
        .map(|p| {
            let mut rng = stream_rng(cfg.eval_seed, Stream::Eval, 0, p.prompt_id as u64);
            (0..cfg.eval_samples)
                .map(|_| {
                    let id = policy.sample_id(p.prompt_id, &mut rng)?;
                    Ok(parse_response(render_sid(id).as_str(), &dataset.shape))
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SampleTable { rows })
}

impl SampleTable {
    fn check(&self, dataset: &Dataset, k: usize) -> Result<()> {
        if self.rows.len() != dataset.len() {
            return Err(Error::LengthMismatch { expected: dataset.len(), found: self.rows.len() });
        }
        if k == 0 || self.rows.iter().any(|r| r.len() < k) {
            return Err(Error::InvalidConfig("K exceeds the sampled responses"));
        }
        Ok(())
    }

    /// Fraction of prompts whose target shows up in the first `k` responses.
    pub fn pass_at_k(&self, dataset: &Dataset, k: usize) -> Result<f64> {
        self.check(dataset, k)?;
        if dataset.is_empty() {
            return Ok(0.0);
        }
        let hits = self
            .rows
            .iter()
            .zip(&dataset.prompts)
            .filter(|(row, p)| row[..k].iter().any(|ids| ids.contains(&p.target)))
            .count();
        Ok(hits as f64 / dataset.len() as f64)
    }

    /// Mean coverage of each prompt's target set by the union of the first
    /// `k` parsed responses.
    pub fn recall_at_k(&self, dataset: &Dataset, k: usize) -> Result<f64> {
        self.check(dataset, k)?;
        let targets: Vec<IdSet> = dataset.prompts.iter().map(|p| p.target_set()).collect();
        recall_of_rows(&self.rows, &targets, k)
    }
}

/// Recall@K for arbitrary target sets; empty targets count as 0.
pub fn recall_of_rows(rows: &[Vec<IdSet>], targets: &[IdSet], k: usize) -> Result<f64> {
    if rows.len() != targets.len() {
        return Err(Error::LengthMismatch { expected: targets.len(), found: rows.len() });
    }
    if rows.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for (row, target) in rows.iter().zip(targets) {
        if target.is_empty() {
            continue;
        }
        let mut union = IdSet::new();
        for ids in row.iter().take(k) {
            union.extend_from(ids);
        }
        total += union.intersection_len(target) as f64 / target.len() as f64;
    }
    Ok(total / rows.len() as f64)
}

pub fn pass_at_k(policy: &TabularPolicy, dataset: &Dataset, k: usize, cfg: &EvalConfig) -> Result<f64> {
    if k > cfg.eval_samples {
        return Err(Error::InvalidConfig("K exceeds eval_samples"));
    }
    sample_table(policy, dataset, cfg)?.pass_at_k(dataset, k)
}

pub fn recall_at_k(policy: &TabularPolicy, dataset: &Dataset, k: usize, cfg: &EvalConfig) -> Result<f64> {
    if k > cfg.eval_samples {
        return Err(Error::InvalidConfig("K exceeds eval_samples"));
    }
    sample_table(policy, dataset, cfg)?.recall_at_k(dataset, k)
}

/// Expected sampled Pass@1: mean target probability over prompts.
pub fn exact_pass_at_1(policy: &TabularPolicy, dataset: &Dataset) -> Result<f64> {
    if dataset.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for p in &dataset.prompts {
        total += math::exp(policy.log_prob(p.prompt_id, p.target)?);
    }
    Ok(total / dataset.len() as f64)
}

/// Pre-repair group composition.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CompositionStats {
    pub all_zero_ratio: f64,
    pub single_hit_ratio: f64,
    pub zero_reward_sample_ratio: f64,
}

pub fn composition_stats(groups: &[ScoredGroup]) -> CompositionStats {
    if groups.is_empty() {
        return CompositionStats::default();
    }
    let n = groups.len() as f64;
    let mut all_zero = 0usize;
    let mut single = 0usize;
    let mut zero_samples = 0usize;
    let mut samples = 0usize;
    for g in groups {
        match hit_count(g) {
            0 => all_zero += 1,
            1 => single += 1,
            _ => {}
        }
        zero_samples += g.rewards.iter().filter(|&&r| r == 0.0).count();
        samples += g.len();
    }
    CompositionStats {
        all_zero_ratio: all_zero as f64 / n,
        single_hit_ratio: single as f64 / n,
        zero_reward_sample_ratio: if samples == 0 { 0.0 } else { zero_samples as f64 / samples as f64 },
    }
}

/// Named metric recorded at strictly increasing steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearningCurve {
    pub metric: String,
    pub points: Vec<(usize, f64)>,
}

impl LearningCurve {
    pub fn new(metric: impl Into<String>) -> Self {
        LearningCurve { metric: metric.into(), points: Vec::new() }
    }

    pub fn push(&mut self, step: usize, value: f64) -> Result<()> {
        if let Some(&(last, _)) = self.points.last() {
            if step <= last {
                return Err(Error::InvalidConfig("curve steps must be strictly increasing"));
            }
        }
        self.points.push((step, value));
        Ok(())
    }

    pub fn last_value(&self) -> Option<f64> {
        self.points.last().map(|&(_, v)| v)
    }

    /// First recorded step with value `≥ threshold`.
    pub fn first_crossing(&self, threshold: f64) -> Option<usize> {
        self.points.iter().find(|&&(_, v)| v >= threshold).map(|&(s, _)| s)
    }
}

/// Steps the candidate needs to reach `reference_value`, as a fraction of
/// the reference budget. First crossing at a recorded point, no interpolation.
pub fn matched_budget_ratio(
    candidate: &LearningCurve,
    reference_value: f64,
    reference_steps: usize,
) -> Option<f64> {
    if reference_steps == 0 {
        return None;
    }
    candidate.first_crossing(reference_value).map(|s| s as f64 / reference_steps as f64)
}
