//! Controlled comparison runs.
//!
//! Every run in an experiment starts from the same uniform policy on the same
//! dataset and uses the same rollout and eval seeds; only the signal mode and
//! group size vary.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use recast_core::env::generate_dataset;
use recast_core::eval::{composition_stats, exact_pass_at_1, matched_budget_ratio, sample_table, CompositionStats};
use recast_core::trainer::{cost_model, train_step_detailed};
use recast_core::{
    CatalogShape, Dataset, EvalConfig, LearningCurve, SignalMode, StepReport, TabularPolicy,
    TrainConfig, TrainState,
};
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::formats;

pub const EXACT_PASS1: &str = "pass1_exact";

pub fn pass_metric(k: usize) -> String {
    format!("pass_at_{k}")
}

pub fn recall_metric(k: usize) -> String {
    format!("recall_at_{k}")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub shape: CatalogShape,
    pub num_prompts: usize,
    pub seed: u64,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec {
            shape: CatalogShape::new(8, 8, 8).expect("valid default shape"),
            num_prompts: 256,
            seed: 7,
        }
    }
}

impl DatasetSpec {
    pub fn generate(&self) -> Result<Dataset> {
        Ok(generate_dataset(self.shape, self.num_prompts, self.seed)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentManifest {
    pub run_id: String,
    pub output_dir: PathBuf,
    pub dataset: DatasetSpec,
    /// Shared training config; `mode` and `group_size` are overridden per run.
    pub train: TrainConfig,
    pub eval: EvalConfig,
    /// Eval cadence in steps. Matched-budget ratios are quantized to it.
    pub eval_every: usize,
    pub modes: Vec<SignalMode>,
    /// Rollout widths to sweep; empty means `train.group_size` only.
    pub group_sizes: Vec<usize>,
    pub reference_mode: SignalMode,
    pub budget_metric: String,
    pub write_checkpoints: bool,
}

impl Default for ExperimentManifest {
    fn default() -> Self {
        ExperimentManifest {
            run_id: "default".to_owned(),
            output_dir: PathBuf::from("runs"),
            dataset: DatasetSpec::default(),
            train: TrainConfig::default(),
            eval: EvalConfig::default(),
            eval_every: 25,
            modes: vec![SignalMode::Grpo, SignalMode::Recast],
            group_sizes: Vec::new(),
            reference_mode: SignalMode::Grpo,
            budget_metric: EXACT_PASS1.to_owned(),
            write_checkpoints: true,
        }
    }
}

impl ExperimentManifest {
    pub fn group_sizes(&self) -> Vec<usize> {
        if self.group_sizes.is_empty() {
            vec![self.train.group_size]
        } else {
            self.group_sizes.clone()
        }
    }

    pub fn experiment_dir(&self) -> PathBuf {
        self.output_dir.join(&self.run_id)
    }

    /// Fails fast on inconsistent settings.
    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.eval.validate()?;
        if self.eval_every == 0 {
            return Err(LabError::Manifest("eval_every must be at least 1".into()));
        }
        if self.modes.is_empty() {
            return Err(LabError::Manifest("no modes configured".into()));
        }
        if self.dataset.num_prompts == 0 {
            return Err(LabError::Manifest("dataset needs at least one prompt".into()));
        }
        if self.group_sizes().iter().any(|&g| g < 2) {
            return Err(LabError::Manifest("group sizes must be at least 2".into()));
        }
        if self.run_id.is_empty() || self.run_id.contains(['/', '\\']) {
            return Err(LabError::Manifest("run_id must be a plain directory name".into()));
        }
        let known = self.metric_names();
        if !known.contains(&self.budget_metric) {
            return Err(LabError::Manifest(format!(
                "budget_metric {:?} is not one of {:?}",
                self.budget_metric, known
            )));
        }
        Ok(())
    }

    pub fn metric_names(&self) -> Vec<String> {
        metric_names(&self.eval)
    }

    /// `(mode, group_size)` pairs in output order.
    pub fn grid(&self) -> Vec<(SignalMode, usize)> {
        let mut out = Vec::new();
        for &g in &self.group_sizes() {
            for &m in &self.modes {
                out.push((m, g));
            }
        }
        out
    }

    pub fn run_label(&self, mode: SignalMode, group_size: usize) -> String {
        if self.group_sizes.is_empty() {
            mode.as_str().to_owned()
        } else {
            format!("{}_g{}", mode.as_str(), group_size)
        }
    }
}

pub fn metric_names(eval: &EvalConfig) -> Vec<String> {
    let mut names = vec![EXACT_PASS1.to_owned()];
    for &k in &eval.k_values {
        names.push(pass_metric(k));
        names.push(recall_metric(k));
    }
    names
}

/// Repair and trainability over one contiguous slice of training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseStats {
    pub first_step: usize,
    pub last_step: usize,
    pub repair_trigger_ratio: f64,
    pub naturally_trainable_ratio: f64,
    pub all_zero_ratio: f64,
    pub single_hit_ratio: f64,
    pub zero_reward_sample_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub label: String,
    pub mode: SignalMode,
    pub group_size: usize,
    pub steps: usize,
    pub seed: u64,
    pub dataset_seed: u64,
    pub eval_seed: u64,
    pub eval_every: usize,
    pub initial_metrics: BTreeMap<String, f64>,
    pub final_metrics: BTreeMap<String, f64>,
    pub first_step_composition: CompositionStats,
    pub thirds: Vec<PhaseStats>,
    pub total_tokens: usize,
    pub active_tokens: usize,
    pub active_responses: usize,
    pub repair_triggers: usize,
    pub skipped_contrasts: usize,
    pub cost_base: f64,
    pub cost_method: f64,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub summary: RunSummary,
    pub reports: Vec<StepReport>,
    pub curves: Vec<LearningCurve>,
    pub policy: TabularPolicy,
}

impl RunOutcome {
    pub fn curve(&self, metric: &str) -> Option<&LearningCurve> {
        self.curves.iter().find(|c| c.metric == metric)
    }
}

/// All configured metrics for `policy`.
pub fn evaluate(policy: &TabularPolicy, dataset: &Dataset, eval: &EvalConfig) -> Result<BTreeMap<String, f64>> {
    let mut out = BTreeMap::new();
    out.insert(EXACT_PASS1.to_owned(), exact_pass_at_1(policy, dataset)?);
    let table = sample_table(policy, dataset, eval)?;
    for &k in &eval.k_values {
        out.insert(pass_metric(k), table.pass_at_k(dataset, k)?);
        out.insert(recall_metric(k), table.recall_at_k(dataset, k)?);
    }
    Ok(out)
}

fn phase(reports: &[StepReport], group_size: usize) -> PhaseStats {
    let sum = |f: fn(&StepReport) -> usize| reports.iter().map(f).sum::<usize>() as f64;
    let groups = sum(|r| r.groups_total).max(1.0);
    let responses = (sum(|r| r.groups_total) * group_size as f64).max(1.0);
    PhaseStats {
        first_step: reports.first().map_or(0, |r| r.step),
        last_step: reports.last().map_or(0, |r| r.step),
        repair_trigger_ratio: sum(|r| r.repair_triggers) / groups,
        naturally_trainable_ratio: sum(|r| r.naturally_trainable) / groups,
        all_zero_ratio: sum(|r| r.groups_all_zero) / groups,
        single_hit_ratio: sum(|r| r.groups_single_hit) / groups,
        zero_reward_sample_ratio: sum(|r| r.zero_reward_samples) / responses,
    }
}

/// Splits training into first, middle and last thirds.
pub fn thirds(reports: &[StepReport], group_size: usize) -> Vec<PhaseStats> {
    let n = reports.len();
    if n < 3 {
        return Vec::new();
    }
    let cuts = [0, n / 3, 2 * n / 3, n];
    cuts.windows(2).map(|w| phase(&reports[w[0]..w[1]], group_size)).collect()
}

/// Trains one configuration from the uniform policy and evaluates it every
/// `eval_every` steps (and at step 0 and the final step).
pub fn run_training(
    dataset: &Dataset,
    config: &TrainConfig,
    eval: &EvalConfig,
    eval_every: usize,
    label: &str,
) -> Result<RunOutcome> {
    config.validate()?;
    eval.validate()?;
    if eval_every == 0 {
        return Err(LabError::Manifest("eval_every must be at least 1".into()));
    }
    let mut state = TrainState::new(TabularPolicy::uniform(dataset.shape, dataset.len()));
    let names = metric_names(eval);
    let mut curves: Vec<LearningCurve> = names.iter().map(LearningCurve::new).collect();
    let mut record = |step: usize, policy: &TabularPolicy| -> Result<BTreeMap<String, f64>> {
        let metrics = evaluate(policy, dataset, eval)?;
        for c in curves.iter_mut() {
            c.push(step, metrics[&c.metric])?;
        }
        Ok(metrics)
    };
    let initial_metrics = record(0, &state.policy)?;
    let mut final_metrics = initial_metrics.clone();
    let mut reports = Vec::with_capacity(config.steps);
    let mut first_composition = CompositionStats::default();
    for _ in 0..config.steps {
        let out = train_step_detailed(&mut state, dataset, config)?;
        if out.report.step == 1 {
            first_composition = composition_stats(&out.sampled);
        }
        let step = out.report.step;
        reports.push(out.report);
        if step % eval_every == 0 || step == config.steps {
            final_metrics = record(step, &state.policy)?;
        }
    }
    let total = |f: fn(&StepReport) -> usize| reports.iter().map(f).sum::<usize>();
    let summary = RunSummary {
        label: label.to_owned(),
        mode: config.mode,
        group_size: config.group_size,
        steps: config.steps,
        seed: config.seed,
        dataset_seed: dataset.seed,
        eval_seed: eval.eval_seed,
        eval_every,
        initial_metrics,
        final_metrics,
        first_step_composition: first_composition,
        thirds: thirds(&reports, config.group_size),
        total_tokens: total(|r| r.total_tokens),
        active_tokens: total(|r| r.active_tokens),
        active_responses: total(|r| r.active_responses),
        repair_triggers: total(|r| r.repair_triggers),
        skipped_contrasts: total(|r| r.skipped_contrasts),
        cost_base: reports.iter().map(|r| r.cost_base).sum(),
        cost_method: reports.iter().map(|r| r.cost_method).sum(),
    };
    Ok(RunOutcome { summary, reports, curves, policy: state.policy })
}

/// Writes `steps.csv`, curves, plot data, `summary.json` and optionally the
/// final checkpoint for one run.
pub fn write_run(dir: &Path, outcome: &RunOutcome, checkpoint: bool) -> Result<()> {
    formats::save_steps(&dir.join("steps.csv"), &outcome.reports)?;
    for c in &outcome.curves {
        formats::save_curve(&dir.join("curves").join(format!("{}.csv", c.metric)), c)?;
        let rows: Vec<Vec<f64>> = c.points.iter().map(|&(s, v)| vec![s as f64, v]).collect();
        formats::save_dat(&dir.join("plots").join(format!("curve_{}.dat", c.metric)), &["step", &c.metric], &rows)?;
    }
    let g = outcome.summary.group_size as f64;
    let composition: Vec<Vec<f64>> = outcome
        .reports
        .iter()
        .map(|r| {
            let n = r.groups_total.max(1) as f64;
            vec![
                r.step as f64,
                r.groups_all_zero as f64 / n,
                r.groups_single_hit as f64 / n,
                r.zero_reward_samples as f64 / (n * g),
                r.repair_triggers as f64 / n,
                r.naturally_trainable as f64 / n,
            ]
        })
        .collect();
    formats::save_dat(
        &dir.join("plots").join("composition.dat"),
        &["step", "all_zero_ratio", "single_hit_ratio", "zero_reward_sample_ratio", "repair_trigger_ratio", "naturally_trainable_ratio"],
        &composition,
    )?;
    let stability: Vec<Vec<f64>> = outcome
        .reports
        .iter()
        .map(|r| vec![r.step as f64, r.loss_kl, r.grad_norm, r.loss_pg])
        .collect();
    formats::save_dat(&dir.join("plots").join("stability.dat"), &["step", "loss_kl", "grad_norm", "loss_pg"], &stability)?;
    formats::save_json(&dir.join("summary.json"), &outcome.summary)?;
    if checkpoint {
        formats::save_checkpoint(&dir.join("checkpoint.json"), &outcome.policy)?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BudgetRow {
    pub label: String,
    pub mode: SignalMode,
    pub group_size: usize,
    pub metric: String,
    pub reference_label: String,
    pub reference_value: f64,
    pub reference_steps: usize,
    /// Absent when the candidate never reaches the reference value.
    pub ratio: Option<f64>,
    pub eval_every: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostRow {
    pub group_size: usize,
    pub cost_base: f64,
    pub cost_method: f64,
    pub update_cost_base: f64,
    pub update_cost_method: f64,
    /// `update_cost_method / update_cost_base`, i.e. `2 / G`.
    pub update_cost_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub run_id: String,
    pub manifest: ExperimentManifest,
    pub dataset_seed: u64,
    pub runs: Vec<RunSummary>,
    pub matched_budget: Vec<BudgetRow>,
    pub cost_table: Vec<CostRow>,
}

pub fn cost_table(group_sizes: &[usize], c_roll: f64, c_upd: f64) -> Vec<CostRow> {
    group_sizes
        .iter()
        .map(|&g| {
            let (cost_base, cost_method) = cost_model(g, c_roll, c_upd, SignalMode::Recast);
            let update_cost_base = cost_base - g as f64 * c_roll;
            let update_cost_method = cost_method - g as f64 * c_roll;
            CostRow {
                group_size: g,
                cost_base,
                cost_method,
                update_cost_base,
                update_cost_method,
                update_cost_ratio: update_cost_method / update_cost_base,
            }
        })
        .collect()
}

/// Matched-budget ratios of every run against the reference mode at the same
/// group size.
pub fn budget_rows(manifest: &ExperimentManifest, outcomes: &[RunOutcome]) -> Vec<BudgetRow> {
    let metric = &manifest.budget_metric;
    let mut rows = Vec::new();
    for reference in outcomes.iter().filter(|o| o.summary.mode == manifest.reference_mode) {
        let Some(reference_value) = reference.summary.final_metrics.get(metric).copied() else {
            continue;
        };
        for cand in outcomes.iter().filter(|o| o.summary.group_size == reference.summary.group_size) {
            let ratio = cand
                .curve(metric)
                .and_then(|c| matched_budget_ratio(c, reference_value, reference.summary.steps));
            rows.push(BudgetRow {
                label: cand.summary.label.clone(),
                mode: cand.summary.mode,
                group_size: cand.summary.group_size,
                metric: metric.clone(),
                reference_label: reference.summary.label.clone(),
                reference_value,
                reference_steps: reference.summary.steps,
                ratio,
                eval_every: manifest.eval_every,
            });
        }
    }
    rows
}

/// Runs `jobs` on up to `threads` workers, returning results in input order.
fn parallel_map<T: Sync, R: Send>(jobs: &[T], threads: usize, f: impl Fn(&T) -> R + Sync) -> Vec<R> {
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<R>>> = Mutex::new((0..jobs.len()).map(|_| None).collect());
    let workers = threads.clamp(1, jobs.len().max(1));
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= jobs.len() {
                    break;
                }
                let r = f(&jobs[i]);
                results.lock().expect("result lock poisoned")[i] = Some(r);
            });
        }
    });
    results
        .into_inner()
        .expect("result lock poisoned")
        .into_iter()
        .map(|r| r.expect("every job ran"))
        .collect()
}

pub fn default_threads() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

/// Trains every `(mode, G)` pair of the manifest, writes all artifacts and
/// returns the experiment summary. Output bytes do not depend on `threads`.
pub fn run_experiment(manifest: &ExperimentManifest, threads: usize) -> Result<(ExperimentSummary, Vec<RunOutcome>)> {
    manifest.validate()?;
    let dataset = manifest.dataset.generate()?;
    let root = manifest.experiment_dir();
    formats::save_dataset(&root.join("dataset.jsonl"), &dataset)?;
    let grid = manifest.grid();
    let outcomes = parallel_map(&grid, threads, |&(mode, g)| {
        let config = TrainConfig { mode, group_size: g, ..manifest.train.clone() };
        let label = manifest.run_label(mode, g);
        let outcome = run_training(&dataset, &config, &manifest.eval, manifest.eval_every, &label)?;
        write_run(&root.join(&label), &outcome, manifest.write_checkpoints)?;
        Ok::<_, LabError>(outcome)
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;

    let cost = cost_table(&manifest.group_sizes(), manifest.train.c_roll, manifest.train.c_upd);
    let rows: Vec<Vec<f64>> = cost
        .iter()
        .map(|c| vec![c.group_size as f64, c.cost_base, c.cost_method, c.update_cost_ratio])
        .collect();
    formats::save_dat(
        &root.join("plots").join("cost_vs_g.dat"),
        &["group_size", "cost_base", "cost_method", "update_cost_ratio"],
        &rows,
    )?;
    let summary = ExperimentSummary {
        run_id: manifest.run_id.clone(),
        manifest: manifest.clone(),
        dataset_seed: dataset.seed,
        runs: outcomes.iter().map(|o| o.summary.clone()).collect(),
        matched_budget: budget_rows(manifest, &outcomes),
        cost_table: cost,
    };
    formats::save_json(&root.join("summary.json"), &summary)?;
    Ok((summary, outcomes))
}
