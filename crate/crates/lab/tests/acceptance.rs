//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit on any
//! failure.

use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use recast_core::env::generate_dataset;
use recast_core::scoring::{phi, task_reward, structural_score, PhiWeights};
use recast_core::sid::render_sid;
use recast_core::signals::{build_signal, hit_count};
use recast_core::trainer::{cost_model, objective_gradient, train_step_detailed, SignaledGroup};
use recast_core::{
    AdvantageVector, CatalogShape, IdSet, ResponseText, ScoredGroup, SemanticId, SignalConfig, SignalMode,
    TabularPolicy, TrainConfig, TrainState,
};
use recast_lab::experiment::{cost_table, EXACT_PASS1};
use recast_lab::{run_experiment, ExperimentManifest};

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict { pass, detail: detail.into() }
}

type Criterion = (&'static str, fn() -> Verdict);

fn main() {
    let criteria: [Criterion; 9] = [
        ("phi and reward exhaustive sweep", c1_formulas),
        ("repair completeness", c2_repair),
        ("constant active support / grpo zero-sum", c3_support),
        ("gradient vs finite differences", c4_gradient),
        ("cost model and active-token accounting", c5_cost),
        ("step-0 all-zero ratio", c6_degenerate),
        ("matched-budget advantage", c7_budget),
        ("repair dynamics over thirds", c8_dynamics),
        ("determinism", c9_determinism),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let v = run();
        let tag = if v.pass { "PASS" } else { "FAIL" };
        failed += usize::from(!v.pass);
        println!("criterion {}: {tag} {name} ({:.1}s) {}", i + 1, start.elapsed().as_secs_f64(), v.detail);
    }
    println!("acceptance: {}/{} passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}

fn small_shape() -> CatalogShape {
    CatalogShape::new(3, 3, 3).unwrap()
}

fn oracle_phi(p: (u32, u32, u32), t: (u32, u32, u32)) -> f64 {
    if p == t {
        1.0
    } else if (p.0, p.1) == (t.0, t.1) {
        0.1
    } else if p.0 == t.0 {
        0.01
    } else {
        0.0
    }
}

fn c1_formulas() -> Verdict {
    let shape = small_shape();
    let ids: Vec<SemanticId> = shape.ids().collect();
    let t3 = |s: SemanticId| (s.a, s.b, s.c);
    let mut checked = 0;
    let mut bad = 0;
    for &p in &ids {
        for &t in &ids {
            bad += usize::from(phi(p, t) != oracle_phi(t3(p), t3(t)));
            checked += 1;
        }
    }
    // Single predictions against two-element targets.
    for &p in &ids {
        for &t1 in &ids {
            for &t2 in &ids {
                let target: IdSet = [t1, t2].into_iter().collect();
                let pred = IdSet::single(p);
                let want_r = if p == t1 || p == t2 { 1.0 } else { 0.0 };
                let want_u = oracle_phi(t3(p), t3(t1)).max(oracle_phi(t3(p), t3(t2)));
                bad += usize::from(task_reward(&pred, &target) != want_r);
                bad += usize::from(structural_score(&pred, &target) != want_u);
                checked += 1;
            }
        }
    }
    verdict(bad == 0, format!("{checked} cases, {bad} mismatches"))
}

fn random_text(rng: &mut ChaCha8Rng, shape: &CatalogShape) -> ResponseText {
    let id = |rng: &mut ChaCha8Rng| shape.id_at(rng.gen_range(0..shape.size()));
    match rng.gen_range(0..8) {
        0 => ResponseText::new("<c_0><b_0><a_0>"),
        1 => {
            let (x, y) = (id(rng), id(rng));
            ResponseText::new(format!("{}{}", render_sid(x).as_str(), render_sid(y).as_str()))
        }
        _ => render_sid(id(rng)),
    }
}

/// Random, all-zero and all-tie groups in rotation.
fn random_group(rng: &mut ChaCha8Rng, g: usize, kind: usize) -> ScoredGroup {
    let shape = small_shape();
    let target_id = shape.id_at(rng.gen_range(0..shape.size()));
    let texts: Vec<ResponseText> = match kind % 3 {
        0 => (0..g).map(|_| random_text(rng, &shape)).collect(),
        1 => (0..g)
            .map(|_| loop {
                let id = shape.id_at(rng.gen_range(0..shape.size()));
                if id != target_id {
                    break render_sid(id);
                }
            })
            .collect(),
        _ => {
            let miss = SemanticId { a: (target_id.a + 1) % 3, ..target_id };
            (0..g).map(|_| render_sid(miss)).collect()
        }
    };
    ScoredGroup::score(0, texts, IdSet::single(target_id), &shape, &PhiWeights::default()).unwrap()
}

fn c2_repair() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut bad = 0;
    let n = 12_000;
    for k in 0..n {
        let g = rng.gen_range(2..=32);
        let group = random_group(&mut rng, g, k);
        for mode in [SignalMode::RepairOnly, SignalMode::Recast] {
            let (out, _) = build_signal(&group, &SignalConfig::new(mode), &small_shape()).unwrap();
            let changed = (0..g).filter(|&i| out.responses[i] != group.responses[i]).count();
            let ok = hit_count(&out) >= 1
                && if hit_count(&group) == 0 { changed == 1 && out.repaired } else { changed == 0 && !out.repaired };
            bad += usize::from(!ok);
        }
    }
    verdict(bad == 0, format!("{n} groups x 2 modes, {bad} violations"))
}

fn c3_support() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut bad = 0;
    let mut groups = 0;
    let mut max_sum = 0.0f64;
    for g in [2, 4, 8, 16, 32, 64] {
        for k in 0..1000 {
            let group = random_group(&mut rng, g, k);
            groups += 1;
            let (out, adv) = build_signal(&group, &SignalConfig::new(SignalMode::Recast), &small_shape()).unwrap();
            let no_zero = out.rewards.iter().all(|&r| r > 0.0);
            let ok = match adv.active.len() {
                2 => adv.values.iter().sum::<f64>() == 0.0,
                0 => no_zero && adv.skipped,
                _ => false,
            };
            bad += usize::from(!ok);

            let (_, grpo) = build_signal(&group, &SignalConfig::new(SignalMode::Grpo), &small_shape()).unwrap();
            let sum: f64 = grpo.values.iter().sum();
            max_sum = max_sum.max(sum.abs());
            let mean = group.rewards.iter().sum::<f64>() / g as f64;
            let signs_ok = group.rewards.iter().zip(&grpo.values).all(|(&r, &a)| {
                if r > mean {
                    a > 0.0
                } else if r < mean {
                    a < 0.0
                } else {
                    a == 0.0
                }
            });
            bad += usize::from(sum.abs() > 1e-9 || !signs_ok);
        }
    }
    verdict(bad == 0, format!("{groups} groups, {bad} violations, max |sum A| {max_sum:.2e}"))
}

fn oracle_objective(policy: &TabularPolicy, reference: &TabularPolicy, batch: &[SignaledGroup], beta: f64) -> f64 {
    let shape = policy.shape;
    let mut total = 0.0;
    for sg in batch {
        let q = sg.group.prompt_id;
        let p = policy.item_distribution(q).unwrap();
        let r = reference.item_distribution(q).unwrap();
        let pg: f64 = sg
            .advantages
            .values
            .iter()
            .zip(&sg.sampled_ids)
            .map(|(&a, &id)| a * p[shape.index_of(id)].ln())
            .sum::<f64>()
            / sg.group.len() as f64;
        let kl: f64 = p.iter().zip(&r).map(|(&pi, &ri)| pi * (pi / ri).ln()).sum();
        total += pg - beta * kl;
    }
    total / batch.len() as f64
}

fn c4_gradient() -> Verdict {
    let shape = CatalogShape::new(4, 4, 4).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let h = 1e-5;
    let mut worst = 0.0f64;
    let mut worst_filter = 0.0f64;
    let mut coords = 0;
    for instance in 0..10 {
        let beta = if instance < 5 { 0.0 } else { 0.05 };
        let policy = TabularPolicy::random(shape, 2, 1.5, &mut rng);
        let reference = TabularPolicy::random(shape, 2, 1.5, &mut rng);
        let batch: Vec<SignaledGroup> = (0..2)
            .map(|q| {
                let ids: Vec<SemanticId> = (0..8).map(|_| shape.id_at(rng.gen_range(0..shape.size()))).collect();
                let target = IdSet::single(shape.id_at(rng.gen_range(0..shape.size())));
                let texts = ids.iter().map(|&id| render_sid(id)).collect();
                let group = ScoredGroup::score(q, texts, target, &shape, &PhiWeights::default()).unwrap();
                let mut values = vec![0.0; 8];
                if instance % 2 == 0 {
                    values[rng.gen_range(0..4)] = 1.0;
                    values[4 + rng.gen_range(0..4)] = -1.0;
                } else {
                    values.iter_mut().for_each(|v| *v = rng.gen_range(-1.5..1.5));
                }
                SignaledGroup { group, sampled_ids: ids, advantages: AdvantageVector::new(values, SignalMode::Recast, false) }
            })
            .collect();
        let grad = objective_gradient(&policy, &reference, &batch, beta, true).unwrap();
        let full = objective_gradient(&policy, &reference, &batch, beta, false).unwrap();
        for (x, y) in grad.values.iter().zip(&full.values) {
            worst_filter = worst_filter.max((x - y).abs());
        }
        for k in 0..policy.num_params() {
            let g = grad.values[k];
            if g.abs() <= 1e-8 {
                continue;
            }
            let mut plus = policy.clone();
            *plus.param_mut(k) += h;
            let mut minus = policy.clone();
            *minus.param_mut(k) -= h;
            let fd = (oracle_objective(&plus, &reference, &batch, beta) - oracle_objective(&minus, &reference, &batch, beta))
                / (2.0 * h);
            worst = worst.max((g - fd).abs() / g.abs());
            coords += 1;
        }
    }
    verdict(
        worst <= 1e-4 && worst_filter <= 1e-12,
        format!("{coords} coordinates, max rel err {worst:.2e}, filter diff {worst_filter:.2e}"),
    )
}

fn c5_cost() -> Verdict {
    let mut ok = true;
    for g in 2..=64usize {
        let (c_roll, c_upd) = (1.5, 0.75);
        let (base, method) = cost_model(g, c_roll, c_upd, SignalMode::Recast);
        ok &= base == g as f64 * (c_roll + c_upd) && method == g as f64 * c_roll + 2.0 * c_upd;
    }
    let row = &cost_table(&[32], 1.0, 1.0)[0];
    let speedup = row.update_cost_base / row.update_cost_method;
    ok &= speedup == 16.0;

    let shape = CatalogShape::new(8, 8, 8).unwrap();
    let dataset = generate_dataset(shape, 64, 5).unwrap();
    let mut ratios = Vec::new();
    for g in [4, 8, 16, 32] {
        let cfg = TrainConfig { group_size: g, malform_rate: 0.0, prompts_per_step: 16, ..TrainConfig::default() };
        let mut state = TrainState::new(TabularPolicy::uniform(shape, dataset.len()));
        let r = train_step_detailed(&mut state, &dataset, &cfg).unwrap().report;
        ok &= r.skipped_contrasts == 0 && r.active_tokens * g == 2 * r.total_tokens;
        ratios.push(format!("G={g}:{}/{}", r.active_tokens, r.total_tokens));
    }
    verdict(ok, format!("G=32 update speedup {speedup}x, tokens {}", ratios.join(" ")))
}

fn c6_degenerate() -> Verdict {
    let cfg = TrainConfig::default();
    let shape = CatalogShape::new(8, 8, 8).unwrap();
    let dataset = generate_dataset(shape, 256, 7).unwrap();
    let expected = (1.0 - 1.0 / 512.0f64).powi(cfg.group_size as i32);
    // Step 0 over all prompts, pooled across independent rollout seeds.
    let (mut zero, mut total) = (0usize, 0usize);
    let mut first = 0.0;
    for seed in 0..40 {
        let cfg = TrainConfig { seed, prompts_per_step: dataset.len(), ..cfg.clone() };
        let mut state = TrainState::new(TabularPolicy::uniform(shape, dataset.len()));
        let r = train_step_detailed(&mut state, &dataset, &cfg).unwrap().report;
        if seed == 0 {
            first = r.groups_all_zero as f64 / r.groups_total as f64;
        }
        zero += r.groups_all_zero;
        total += r.groups_total;
    }
    let pooled = zero as f64 / total as f64;
    verdict(
        (pooled - expected).abs() <= 0.01,
        format!("pooled {pooled:.4} over {total} groups (seed 0 alone {first:.4}), closed form {expected:.4}"),
    )
}

/// Per seed: (recast final, grpo final, ratio, recast thirds).
type BudgetResult = (f64, f64, Option<f64>, Vec<(f64, f64)>);

fn budget_runs() -> &'static Vec<BudgetResult> {
    static RUNS: std::sync::OnceLock<Vec<BudgetResult>> = std::sync::OnceLock::new();
    RUNS.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        (0..3u64)
            .map(|seed| {
                let m = ExperimentManifest {
                    run_id: format!("seed{seed}"),
                    output_dir: dir.path().to_path_buf(),
                    train: TrainConfig { seed, ..TrainConfig::default() },
                    write_checkpoints: false,
                    ..ExperimentManifest::default()
                };
                let (summary, _) = run_experiment(&m, recast_lab::experiment::default_threads()).unwrap();
                let run = |mode| summary.runs.iter().find(|r| r.mode == mode).unwrap();
                let recast = run(SignalMode::Recast);
                let grpo = run(SignalMode::Grpo);
                let ratio = summary
                    .matched_budget
                    .iter()
                    .find(|b| b.mode == SignalMode::Recast)
                    .and_then(|b| b.ratio);
                let thirds = recast.thirds.iter().map(|t| (t.repair_trigger_ratio, t.naturally_trainable_ratio)).collect();
                (recast.final_metrics[EXACT_PASS1], grpo.final_metrics[EXACT_PASS1], ratio, thirds)
            })
            .collect()
    })
}

fn c7_budget() -> Verdict {
    let runs = budget_runs();
    let agree = runs.iter().filter(|(r, g, ratio, _)| r > g && ratio.is_some_and(|x| x < 0.5)).count();
    let detail: Vec<String> = runs
        .iter()
        .enumerate()
        .map(|(s, (r, g, ratio, _))| {
            let ratio = ratio.map_or("never".to_owned(), |x| format!("{x:.3}"));
            format!("seed{s}: recast {r:.4} grpo {g:.4} ratio {ratio}")
        })
        .collect();
    verdict(agree * 2 > runs.len(), format!("{agree}/3 seeds agree; {}", detail.join("; ")))
}

fn c8_dynamics() -> Verdict {
    let runs = budget_runs();
    let monotone = |t: &Vec<(f64, f64)>| t.len() == 3 && t.windows(2).all(|w| w[1].0 <= w[0].0 && w[1].1 >= w[0].1);
    let agree = runs.iter().filter(|r| monotone(&r.3)).count();
    let detail: Vec<String> = runs
        .iter()
        .enumerate()
        .map(|(s, r)| {
            let t: Vec<String> = r.3.iter().map(|(a, b)| format!("{a:.3}/{b:.3}")).collect();
            format!("seed{s}: {}", t.join(" -> "))
        })
        .collect();
    verdict(agree * 2 > runs.len(), format!("{agree}/3 seeds monotone (trigger/natural); {}", detail.join("; ")))
}

fn snapshot(root: &Path, labels: &[String]) -> Vec<Vec<u8>> {
    let mut out = vec![std::fs::read(root.join("summary.json")).unwrap()];
    for l in labels {
        out.push(std::fs::read(root.join(l).join("steps.csv")).unwrap());
        out.push(std::fs::read(root.join(l).join("summary.json")).unwrap());
    }
    out
}

fn c9_determinism() -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let mut m = ExperimentManifest {
        run_id: "det".into(),
        output_dir: dir.path().to_path_buf(),
        train: TrainConfig { steps: 150, ..TrainConfig::default() },
        modes: SignalMode::ALL.to_vec(),
        group_sizes: vec![4, 8],
        ..ExperimentManifest::default()
    };
    m.dataset.num_prompts = 64;
    let labels: Vec<String> = m.grid().iter().map(|&(mode, g)| m.run_label(mode, g)).collect();
    run_experiment(&m, 1).unwrap();
    let first = snapshot(&m.experiment_dir(), &labels);
    std::fs::remove_dir_all(m.experiment_dir()).unwrap();
    run_experiment(&m, 4).unwrap();
    let second = snapshot(&m.experiment_dir(), &labels);
    let same = first == second;
    verdict(same, format!("{} files compared across reruns (1 vs 4 threads)", first.len()))
}
