//! KL-regularized policy-gradient training on the tabular policy.
//!
//! The per-batch objective is
//!
//! ```text
//! J(θ) = 1/B Σ_q [ 1/G Σ_i A_i log π_θ(R_i | q) − β KL(π_θ(·|q) ‖ π_ref(·|q)) ]
//! ```
//!
//! where `A_i` comes from whichever signal mode is configured. Gradients are
//! exact and reported in the ascent direction; a step is `θ ← θ + lr · ∇J`.
//! Losses in [`StepReport`] are reported with the usual sign: `loss_pg = −(PG
//! term)` and `loss_kl = mean KL` (not multiplied by `β`).
//!
//! No ratio clipping is applied. Injected anchors are updated through
//! `log π_θ` of the target triple like any sampled member.

use alloc::vec;
use alloc::vec::Vec;

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::env::{sample_group, Dataset, TabularPolicy};
use crate::error::{Error, Result};
use crate::math;
use crate::rng::{stream_rng, Stream};
use crate::scoring::PhiWeights;
use crate::sid::SemanticId;
use crate::signals::{
    build_signal, hit_count, AdvantageVector, ScoredGroup, SignalConfig, SignalMode,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub mode: SignalMode,
    /// Rollout group size `G` (≥ 2).
    #[serde(alias = "G")]
    pub group_size: usize,
    pub beta: f64,
    pub learning_rate: f64,
    pub steps: usize,
    pub prompts_per_step: usize,
    pub w: f64,
    pub epsilon: f64,
    pub c_roll: f64,
    pub c_upd: f64,
    pub refresh_old_every: usize,
    pub seed: u64,
    /// Probability that a sampled response is emitted as unparseable text.
    pub malform_rate: f64,
    pub phi: PhiWeights,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            mode: SignalMode::Recast,
            group_size: 8,
            beta: 0.01,
            learning_rate: 4.0,
            steps: 2000,
            prompts_per_step: 32,
            w: 1.0,
            epsilon: 1e-6,
            c_roll: 1.0,
            c_upd: 1.0,
            refresh_old_every: 1,
            seed: 0,
            malform_rate: 0.02,
            phi: PhiWeights::default(),
        }
    }
}

impl TrainConfig {
    pub fn signal(&self) -> SignalConfig {
        SignalConfig { mode: self.mode, w: self.w, epsilon: self.epsilon, phi: self.phi }
    }

    pub fn validate(&self) -> Result<()> {
        if self.group_size < 2 {
            return Err(Error::InvalidConfig("group_size must be at least 2"));
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(Error::InvalidConfig("beta must be finite and non-negative"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidConfig("learning_rate must be finite and positive"));
        }
        if self.prompts_per_step == 0 {
            return Err(Error::InvalidConfig("prompts_per_step must be at least 1"));
        }
        if self.refresh_old_every == 0 {
            return Err(Error::InvalidConfig("refresh_old_every must be at least 1"));
        }
        if !(self.c_roll > 0.0 && self.c_upd > 0.0) {
            return Err(Error::InvalidConfig("rollout and update costs must be positive"));
        }
        if !(0.0..1.0).contains(&self.malform_rate) {
            return Err(Error::InvalidConfig("malform_rate must lie in [0, 1)"));
        }
        self.signal().validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    pub policy: TabularPolicy,
    pub old_policy: TabularPolicy,
    pub ref_policy: TabularPolicy,
    /// Number of completed steps.
    pub step: usize,
}

impl TrainState {
    /// Starts with `π_θ = π_old = π_ref = initial`.
    pub fn new(initial: TabularPolicy) -> Self {
        TrainState {
            old_policy: initial.clone(),
            ref_policy: initial.clone(),
            policy: initial,
            step: 0,
        }
    }
}

/// Per-step metrics. Field order is the `steps.csv` column order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepReport {
    pub step: usize,
    pub loss_pg: f64,
    pub loss_kl: f64,
    pub grad_norm: f64,
    pub groups_total: usize,
    /// Pre-repair groups with no hit.
    pub groups_all_zero: usize,
    /// Pre-repair groups with exactly one hit.
    pub groups_single_hit: usize,
    /// Pre-repair responses with zero reward.
    pub zero_reward_samples: usize,
    pub repair_triggers: usize,
    /// Pre-repair groups with at least one hit.
    pub naturally_trainable: usize,
    pub skipped_contrasts: usize,
    /// Responses entering the actor-side update: the whole group under
    /// normalization modes, the nonzero-advantage pair under contrastive ones.
    pub active_responses: usize,
    pub active_tokens: usize,
    pub total_tokens: usize,
    pub cost_base: f64,
    pub cost_method: f64,
}

impl StepReport {
    pub const COLUMNS: [&'static str; 16] = [
        "step",
        "loss_pg",
        "loss_kl",
        "grad_norm",
        "groups_total",
        "groups_all_zero",
        "groups_single_hit",
        "zero_reward_samples",
        "repair_triggers",
        "naturally_trainable",
        "skipped_contrasts",
        "active_responses",
        "active_tokens",
        "total_tokens",
        "cost_base",
        "cost_method",
    ];
}

/// Ascent-direction gradient in the policy's flat parameter layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientRecord {
    pub values: Vec<f64>,
}

impl GradientRecord {
    pub fn zeros(len: usize) -> Self {
        GradientRecord { values: vec![0.0; len] }
    }

    pub fn norm(&self) -> f64 {
        math::sqrt(self.values.iter().map(|g| g * g).sum())
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, g| f64::max(m, g.abs()))
    }
}

/// One prompt's contribution to an update: the (possibly repaired) group,
/// the triple behind each response, and its advantages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignaledGroup {
    pub group: ScoredGroup,
    /// Triple whose log-probability carries each response's advantage.
    pub sampled_ids: Vec<SemanticId>,
    pub advantages: AdvantageVector,
}

impl SignaledGroup {
    pub fn validate(&self) -> Result<()> {
        let g = self.group.len();
        for n in [self.sampled_ids.len(), self.advantages.values.len()] {
            if n != g {
                return Err(Error::LengthMismatch { expected: g, found: n });
            }
        }
        Ok(())
    }
}

/// Exact `KL(π(·|q) ‖ π_ref(·|q))` over the full item distribution.
pub fn kl_divergence(policy: &TabularPolicy, reference: &TabularPolicy, prompt_id: usize) -> Result<f64> {
    if !policy.same_layout(reference) {
        return Err(Error::PolicyMismatch);
    }
    let p = policy.item_distribution(prompt_id)?;
    let r = reference.item_distribution(prompt_id)?;
    Ok(p.iter()
        .zip(&r)
        .filter(|(&pi, _)| pi > 0.0)
        .map(|(&pi, &ri)| pi * (math::ln(pi) - math::ln(ri)))
        .sum::<f64>()
        .max(0.0))
}

/// Policy-gradient and KL parts of the objective, evaluated directly from
/// log-probabilities and item distributions.
pub fn objective_terms(
    policy: &TabularPolicy,
    reference: &TabularPolicy,
    batch: &[SignaledGroup],
) -> Result<(f64, f64)> {
    if batch.is_empty() {
        return Ok((0.0, 0.0));
    }
    let b = batch.len() as f64;
    let mut pg = 0.0;
    let mut kl = 0.0;
    for sg in batch {
        sg.validate()?;
        let q = sg.group.prompt_id;
        let g = sg.group.len() as f64;
        let mut inner = 0.0;
        for (&a, &id) in sg.advantages.values.iter().zip(&sg.sampled_ids) {
            if a != 0.0 {
                inner += a * policy.log_prob(q, id)?;
            }
        }
        pg += inner / g;
        kl += kl_divergence(policy, reference, q)?;
    }
    Ok((pg / b, kl / b))
}

/// Scalar objective `J = PG − β · KL` for the batch.
pub fn objective(
    policy: &TabularPolicy,
    reference: &TabularPolicy,
    batch: &[SignaledGroup],
    beta: f64,
) -> Result<f64> {
    let (pg, kl) = objective_terms(policy, reference, batch)?;
    Ok(pg - beta * kl)
}

/// Exact `∇J` with respect to every logit.
///
/// With `filter_inactive` set, responses with zero advantage are dropped
/// before any log-probability work; otherwise every member is visited.
pub fn objective_gradient(
    policy: &TabularPolicy,
    reference: &TabularPolicy,
    batch: &[SignaledGroup],
    beta: f64,
    filter_inactive: bool,
) -> Result<GradientRecord> {
    if !policy.same_layout(reference) {
        return Err(Error::PolicyMismatch);
    }
    let mut grad = GradientRecord::zeros(policy.num_params());
    if batch.is_empty() {
        return Ok(grad);
    }
    let b = batch.len() as f64;
    for sg in batch {
        sg.validate()?;
        let q = sg.group.prompt_id;
        if q >= policy.num_prompts {
            return Err(Error::PromptOutOfRange { prompt_id: q, num_prompts: policy.num_prompts });
        }
        let scale = 1.0 / (sg.group.len() as f64 * b);
        for (i, (&adv, &id)) in sg.advantages.values.iter().zip(&sg.sampled_ids).enumerate() {
            if filter_inactive && !sg.advantages.active.contains(&i) {
                continue;
            }
            add_log_prob_gradient(policy, q, id, adv * scale, &mut grad.values)?;
        }
        if beta != 0.0 {
            add_kl_gradient(policy, reference, q, -beta / b, &mut grad.values);
        }
    }
    Ok(grad)
}

/// `out += coeff · ∇ log π(id | q)`.
fn add_log_prob_gradient(
    policy: &TabularPolicy,
    q: usize,
    id: SemanticId,
    coeff: f64,
    out: &mut [f64],
) -> Result<()> {
    if !id.in_bounds(&policy.shape) {
        return Err(Error::OutOfBounds { a: id.a, b: id.b, c: id.c });
    }
    let (a, b, c) = (id.a as usize, id.b as usize, id.c as usize);
    let base_b = policy.logits_a.len();
    let base_c = base_b + policy.logits_b.len();
    add_softmax_score(policy.row_a(q), a, coeff, &mut out[policy.offset_a(q)..]);
    add_softmax_score(policy.row_b(q, a), b, coeff, &mut out[base_b + policy.offset_b(q, a)..]);
    add_softmax_score(policy.row_c(q, a, b), c, coeff, &mut out[base_c + policy.offset_c(q, a, b)..]);
    Ok(())
}

/// `out[j] += coeff · (δ_jk − softmax(z)_j)`.
fn add_softmax_score(logits: &[f64], k: usize, coeff: f64, out: &mut [f64]) {
    let mut p = vec![0.0; logits.len()];
    math::softmax_into(logits, &mut p);
    for (j, pj) in p.iter().enumerate() {
        let indicator = if j == k { 1.0 } else { 0.0 };
        out[j] += coeff * (indicator - pj);
    }
}

fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + math::ln(logits.iter().map(|&z| math::exp(z - max)).sum::<f64>());
    logits.iter().map(|&z| z - lse).collect()
}

/// Accumulates `coeff · ∇ KL(π(·|q) ‖ π_ref(·|q))` via the chain rule over
/// levels.
///
/// For a softmax level with child values `V_k`,
/// `f = Σ_k p_k (ln p_k − ln r_k + V_k)` has `∂f/∂z_j = p_j (ln p_j − ln r_j + V_j − f)`; each deeper level
/// is weighted by the probability of reaching its row.
fn add_kl_gradient(
    policy: &TabularPolicy,
    reference: &TabularPolicy,
    q: usize,
    coeff: f64,
    out: &mut [f64],
) {
    let n_a = policy.shape.n_a() as usize;
    let n_b = policy.shape.n_b() as usize;
    let base_b = policy.logits_a.len();
    let base_c = base_b + policy.logits_b.len();

    let lp_a = log_softmax(policy.row_a(q));
    let lr_a = log_softmax(reference.row_a(q));
    let mut value_a = vec![0.0; n_a];
    for a in 0..n_a {
        let p_a = math::exp(lp_a[a]);
        let lp_b = log_softmax(policy.row_b(q, a));
        let lr_b = log_softmax(reference.row_b(q, a));
        let mut value_b = vec![0.0; n_b];
        for b in 0..n_b {
            let p_ab = p_a * math::exp(lp_b[b]);
            let lp_c = log_softmax(policy.row_c(q, a, b));
            let lr_c = log_softmax(reference.row_c(q, a, b));
            let kl_c = level_kl(&lp_c, &lr_c, None);
            value_b[b] = kl_c;
            let off = base_c + policy.offset_c(q, a, b);
            add_level_gradient(&lp_c, &lr_c, None, kl_c, coeff * p_ab, &mut out[off..]);
        }
        let kl_b = level_kl(&lp_b, &lr_b, Some(&value_b));
        value_a[a] = kl_b;
        let off = base_b + policy.offset_b(q, a);
        add_level_gradient(&lp_b, &lr_b, Some(&value_b), kl_b, coeff * p_a, &mut out[off..]);
    }
    let kl_a = level_kl(&lp_a, &lr_a, Some(&value_a));
    let off = policy.offset_a(q);
    add_level_gradient(&lp_a, &lr_a, Some(&value_a), kl_a, coeff, &mut out[off..]);
}

fn level_kl(lp: &[f64], lr: &[f64], child: Option<&[f64]>) -> f64 {
    (0..lp.len())
        .map(|k| math::exp(lp[k]) * (lp[k] - lr[k] + child.map_or(0.0, |v| v[k])))
        .sum()
}

fn add_level_gradient(
    lp: &[f64],
    lr: &[f64],
    child: Option<&[f64]>,
    level_value: f64,
    coeff: f64,
    out: &mut [f64],
) {
    for j in 0..lp.len() {
        let g = lp[j] - lr[j] + child.map_or(0.0, |v| v[j]);
        out[j] += coeff * math::exp(lp[j]) * (g - level_value);
    }
}

/// Per-group cost of the baseline and of the configured method.
///
/// `cost_base = G·c_roll + G·c_upd`; contrastive modes update only the
/// boundary pair, so their method cost is `G·c_roll + 2·c_upd`.
pub fn cost_model(group_size: usize, c_roll: f64, c_upd: f64, mode: SignalMode) -> (f64, f64) {
    let g = group_size as f64;
    let base = g * c_roll + g * c_upd;
    let method = if mode.contrastive() { g * c_roll + 2.0 * c_upd } else { base };
    (base, method)
}

/// Everything one step produced, for callers that want more than the report.
#[derive(Debug, Clone)]
pub struct StepOutput {
    pub report: StepReport,
    /// Pre-repair scored groups, sorted by prompt id.
    pub sampled: Vec<ScoredGroup>,
    pub batch: Vec<SignaledGroup>,
}

/// Prompt ids for step `step`, ascending.
pub fn select_prompts(num_prompts: usize, config: &TrainConfig, step: usize) -> Vec<usize> {
    if config.prompts_per_step >= num_prompts {
        return (0..num_prompts).collect();
    }
    let mut rng = stream_rng(config.seed, Stream::Batch, step as u64, 0);
    let mut ids = index::sample(&mut rng, num_prompts, config.prompts_per_step).into_vec();
    ids.sort_unstable();
    ids
}

/// Samples and scores groups from `π_old`, then builds signals.
pub fn collect_batch(
    state: &TrainState,
    dataset: &Dataset,
    config: &TrainConfig,
    step: usize,
) -> Result<(Vec<ScoredGroup>, Vec<SignaledGroup>)> {
    let shape = dataset.shape;
    let signal = config.signal();
    let mut sampled = Vec::new();
    let mut batch = Vec::new();
    for q in select_prompts(dataset.len(), config, step) {
        let prompt = dataset.prompt(q)?;
        let mut rng = stream_rng(config.seed, Stream::Rollout, step as u64, q as u64);
        let responses =
            sample_group(&state.old_policy, prompt, config.group_size, &mut rng, config.malform_rate)?;
        let mut sampled_ids: Vec<SemanticId> = responses.iter().map(|r| r.id).collect();
        let texts = responses.into_iter().map(|r| r.text).collect();
        let group = ScoredGroup::score(q, texts, prompt.target_set(), &shape, &config.phi)?;
        let (signaled, advantages) = build_signal(&group, &signal, &shape)?;
        if let Some(j) = signaled.anchor_index {
            sampled_ids[j] = prompt.target;
        }
        sampled.push(group);
        batch.push(SignaledGroup { group: signaled, sampled_ids, advantages });
    }
    Ok((sampled, batch))
}

/// One sample → score → signal → ascent step.
pub fn train_step(state: &mut TrainState, dataset: &Dataset, config: &TrainConfig) -> Result<StepReport> {
    train_step_detailed(state, dataset, config).map(|o| o.report)
}

pub fn train_step_detailed(
    state: &mut TrainState,
    dataset: &Dataset,
    config: &TrainConfig,
) -> Result<StepOutput> {
    config.validate()?;
    if state.policy.shape != dataset.shape || state.policy.num_prompts != dataset.len() {
        return Err(Error::PolicyMismatch);
    }
    let step = state.step;
    if step.is_multiple_of(config.refresh_old_every) {
        state.old_policy.clone_from(&state.policy);
    }
    let (sampled, batch) = collect_batch(state, dataset, config, step)?;

    let (pg, kl) = objective_terms(&state.policy, &state.ref_policy, &batch)?;
    let grad = objective_gradient(&state.policy, &state.ref_policy, &batch, config.beta, true)?;
    for (p, g) in state.policy.params_mut().zip(&grad.values) {
        *p += config.learning_rate * g;
    }
    state.step += 1;

    let mut report = StepReport {
        step: step + 1,
        loss_pg: -pg,
        loss_kl: kl,
        grad_norm: grad.norm(),
        groups_total: batch.len(),
        groups_all_zero: 0,
        groups_single_hit: 0,
        zero_reward_samples: 0,
        repair_triggers: 0,
        naturally_trainable: 0,
        skipped_contrasts: 0,
        active_responses: 0,
        active_tokens: 0,
        total_tokens: 0,
        cost_base: 0.0,
        cost_method: 0.0,
    };
    for g in &sampled {
        match hit_count(g) {
            0 => report.groups_all_zero += 1,
            1 => report.groups_single_hit += 1,
            _ => {}
        }
        report.zero_reward_samples += g.rewards.iter().filter(|&&r| r == 0.0).count();
    }
    report.naturally_trainable = report.groups_total - report.groups_all_zero;
    for sg in &batch {
        let tokens: Vec<usize> = sg.group.responses.iter().map(|r| r.token_length()).collect();
        report.total_tokens += tokens.iter().sum::<usize>();
        report.repair_triggers += sg.group.repaired as usize;
        report.skipped_contrasts += sg.advantages.skipped as usize;
        if config.mode.contrastive() {
            report.active_responses += sg.advantages.active.len();
            report.active_tokens += sg.advantages.active.iter().map(|&i| tokens[i]).sum::<usize>();
        } else {
            report.active_responses += tokens.len();
            report.active_tokens += tokens.iter().sum::<usize>();
        }
        let (base, method) = cost_model(sg.group.len(), config.c_roll, config.c_upd, config.mode);
        report.cost_base += base;
        report.cost_method += method;
    }
    Ok(StepOutput { report, sampled, batch })
}
