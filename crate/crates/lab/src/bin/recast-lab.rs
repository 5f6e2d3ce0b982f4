use std::io::{self, BufWriter};
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use recast_core::env::generate_dataset;
use recast_core::eval::matched_budget_ratio;
use recast_core::{CatalogShape, EvalConfig, SignalConfig, SignalMode, TrainConfig};
use recast_lab::experiment::{self, default_threads, ExperimentManifest, RunSummary};
use recast_lab::formats;

#[derive(Parser)]
#[command(name = "recast-lab", about = "Sparse-hit group RL testbed: GRPO vs repair-then-contrast signals")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic prompt dataset (JSON lines).
    Generate {
        #[arg(long, default_value = "8,8,8", value_parser = parse_shape)]
        shape: CatalogShape,
        #[arg(long, default_value_t = 256)]
        num_prompts: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one signal mode and write a run directory.
    Train(TrainArgs),
    /// Train every mode × group size of a manifest.
    Sweep {
        /// Experiment manifest (JSON). Defaults are used when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Overrides the manifest's output directory.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        run_id: Option<String>,
        /// Overrides the training seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_delimiter = ',')]
        modes: Option<Vec<SignalMode>>,
        #[arg(long, value_delimiter = ',')]
        group_sizes: Option<Vec<usize>>,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long, default_value_t = default_threads())]
        threads: usize,
    },
    /// Evaluate a checkpoint on a dataset and print metrics as JSON.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[command(flatten)]
        eval: EvalArgs,
    },
    /// Matched-budget table of candidate runs against a reference run.
    Report {
        #[arg(long)]
        reference: PathBuf,
        #[arg(long, num_args = 1..)]
        candidate: Vec<PathBuf>,
        #[arg(long, default_value = experiment::EXACT_PASS1)]
        metric: String,
        /// Also write the table as CSV.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Filter: scored or raw groups (JSON lines) on stdin, signals on stdout.
    Signal {
        #[arg(long, default_value = "recast")]
        mode: SignalMode,
        #[arg(long, default_value_t = 1.0)]
        w: f64,
        #[arg(long, default_value_t = 1e-6)]
        epsilon: f64,
        #[arg(long, default_value = "8,8,8", value_parser = parse_shape)]
        shape: CatalogShape,
    },
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long, value_delimiter = ',', default_value = "1,32")]
    k: Vec<usize>,
    #[arg(long, default_value_t = 32)]
    eval_samples: usize,
    #[arg(long, default_value_t = EvalConfig::default().eval_seed)]
    eval_seed: u64,
}

impl EvalArgs {
    fn config(&self) -> EvalConfig {
        EvalConfig { k_values: self.k.clone(), eval_samples: self.eval_samples, eval_seed: self.eval_seed }
    }
}

#[derive(Args)]
struct TrainArgs {
    /// Training config (JSON mirroring the TrainConfig fields).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dataset file; generated from the shape flags when omitted.
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long, default_value = "8,8,8", value_parser = parse_shape)]
    shape: CatalogShape,
    #[arg(long, default_value_t = 256)]
    num_prompts: usize,
    #[arg(long, default_value_t = 7)]
    dataset_seed: u64,
    #[arg(long)]
    mode: Option<SignalMode>,
    #[arg(long)]
    group_size: Option<usize>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    prompts_per_step: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value_t = 25)]
    eval_every: usize,
    #[command(flatten)]
    eval: EvalArgs,
    #[arg(long)]
    out: PathBuf,
}

fn parse_shape(s: &str) -> Result<CatalogShape, String> {
    let parts: Vec<u32> = s
        .split(',')
        .map(|p| p.trim().parse::<u32>().map_err(|e| format!("{p:?}: {e}")))
        .collect::<Result<_, _>>()?;
    match parts[..] {
        [a, b, c] => CatalogShape::new(a, b, c).map_err(|e| e.to_string()),
        _ => Err("expected three comma-separated counts, e.g. 8,8,8".to_owned()),
    }
}

fn train(args: TrainArgs) -> Result<()> {
    let mut config: TrainConfig = match &args.config {
        Some(p) => formats::load_json(p)?,
        None => TrainConfig::default(),
    };
    if let Some(v) = args.mode {
        config.mode = v;
    }
    if let Some(v) = args.group_size {
        config.group_size = v;
    }
    if let Some(v) = args.steps {
        config.steps = v;
    }
    if let Some(v) = args.prompts_per_step {
        config.prompts_per_step = v;
    }
    if let Some(v) = args.learning_rate {
        config.learning_rate = v;
    }
    if let Some(v) = args.beta {
        config.beta = v;
    }
    if let Some(v) = args.seed {
        config.seed = v;
    }
    let dataset = match &args.dataset {
        Some(p) => formats::load_dataset(p)?,
        None => generate_dataset(args.shape, args.num_prompts, args.dataset_seed)?,
    };
    let eval = args.eval.config();
    let label = config.mode.as_str().to_owned();
    let outcome = experiment::run_training(&dataset, &config, &eval, args.eval_every, &label)?;
    experiment::write_run(&args.out, &outcome, true)?;
    formats::save_json(&args.out.join("config.json"), &config)?;
    print_run(&outcome.summary);
    Ok(())
}

fn print_run(s: &RunSummary) {
    let metrics: Vec<String> = s.final_metrics.iter().map(|(k, v)| format!("{k}={v:.4}")).collect();
    println!(
        "{:<16} G={:<3} steps={:<6} repairs={:<7} active/total tokens={}/{}  {}",
        s.label,
        s.group_size,
        s.steps,
        s.repair_triggers,
        s.active_tokens,
        s.total_tokens,
        metrics.join(" ")
    );
}

fn report(reference: PathBuf, candidates: Vec<PathBuf>, metric: String, out: Option<PathBuf>) -> Result<()> {
    let ref_summary: RunSummary = formats::load_json(&reference.join("summary.json"))?;
    let ref_curve = formats::load_curve(&reference.join("curves").join(format!("{metric}.csv")))?;
    let Some(reference_value) = ref_curve.last_value() else {
        bail!("reference curve {} is empty", metric);
    };
    let mut rows = Vec::new();
    for dir in &candidates {
        let curve = formats::load_curve(&dir.join("curves").join(format!("{metric}.csv")))
            .with_context(|| format!("loading candidate {}", dir.display()))?;
        let ratio = matched_budget_ratio(&curve, reference_value, ref_summary.steps);
        rows.push((dir.display().to_string(), curve.last_value().unwrap_or(f64::NAN), ratio));
    }
    println!("reference {} final {metric} = {reference_value:.6} over {} steps", reference.display(), ref_summary.steps);
    println!("{:<40} {:>12} {:>14}", "candidate", "final", "budget_ratio");
    for (name, last, ratio) in &rows {
        let r = ratio.map_or("never".to_owned(), |r| format!("{r:.4}"));
        println!("{name:<40} {last:>12.6} {r:>14}");
    }
    if let Some(path) = out {
        formats::create_parent(&path)?;
        let mut w = csv::Writer::from_path(&path)?;
        w.write_record(["candidate", "final", "reference_value", "reference_steps", "budget_ratio"])?;
        for (name, last, ratio) in rows {
            w.write_record([
                name,
                last.to_string(),
                reference_value.to_string(),
                ref_summary.steps.to_string(),
                ratio.map_or(String::new(), |r| r.to_string()),
            ])?;
        }
        w.flush()?;
    }
    Ok(())
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Generate { shape, num_prompts, seed, out } => {
            let d = generate_dataset(shape, num_prompts, seed)?;
            formats::save_dataset(&out, &d)?;
            eprintln!("wrote {} prompts to {}", d.len(), out.display());
        }
        Command::Train(args) => train(args)?,
        Command::Sweep { config, out, run_id, seed, modes, group_sizes, steps, threads } => {
            let mut m: ExperimentManifest = match &config {
                Some(p) => formats::load_json(p)?,
                None => ExperimentManifest::default(),
            };
            if let Some(v) = out {
                m.output_dir = v;
            }
            if let Some(v) = run_id {
                m.run_id = v;
            }
            if let Some(v) = seed {
                m.train.seed = v;
            }
            if let Some(v) = modes {
                m.modes = v;
            }
            if let Some(v) = group_sizes {
                m.group_sizes = v;
            }
            if let Some(v) = steps {
                m.train.steps = v;
            }
            let (summary, _) = experiment::run_experiment(&m, threads)?;
            for r in &summary.runs {
                print_run(r);
            }
            for b in &summary.matched_budget {
                let r = b.ratio.map_or("never".to_owned(), |r| format!("{r:.4}"));
                println!("budget {:<16} vs {:<16} {}={:.6}: {r}", b.label, b.reference_label, b.metric, b.reference_value);
            }
            eprintln!("wrote {}", m.experiment_dir().display());
        }
        Command::Eval { checkpoint, dataset, eval } => {
            let policy = formats::load_checkpoint(&checkpoint)?;
            let dataset = formats::load_dataset(&dataset)?;
            if !(policy.shape == dataset.shape && policy.num_prompts == dataset.len()) {
                bail!("checkpoint does not match dataset shape or prompt count");
            }
            let metrics = experiment::evaluate(&policy, &dataset, &eval.config())?;
            println!("{}", serde_json::to_string_pretty(&metrics)?);
        }
        Command::Report { reference, candidate, metric, out } => report(reference, candidate, metric, out)?,
        Command::Signal { mode, w, epsilon, shape } => {
            let config = SignalConfig { mode, w, epsilon, ..SignalConfig::new(mode) };
            let stdin = io::stdin().lock();
            let stdout = BufWriter::new(io::stdout().lock());
            let n = formats::signal_filter(stdin, stdout, &shape, &config)?;
            eprintln!("{n} groups");
        }
    }
    Ok(())
}
