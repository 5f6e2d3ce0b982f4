//! On-disk formats.
//!
//! - Dataset: JSON lines. The first line is a header
//!   `{"shape":{..},"seed":..,"num_prompts":..}`; each following line is
//!   `{"prompt_id":..,"target":[a,b,c],"ground_truth_text":".."}`.
//! - Checkpoint: one JSON document with a format tag, the catalog shape, the
//!   prompt count and the three flat logit arrays.
//! - Steps: CSV with the columns of [`StepReport::COLUMNS`].
//! - Curves: CSV `step,<metric>`.
//! - Plot data: whitespace-separated columns with a `#` header line.
//! - Signals: JSON lines, groups in and `{group, advantages}` records out.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use recast_core::env::PromptSpec;
use recast_core::signals::build_signal;
use recast_core::{
    CatalogShape, Dataset, IdSet, LearningCurve, ResponseText, ScoredGroup, SemanticId,
    SignalConfig, StepReport, TabularPolicy,
};
use serde::{Deserialize, Serialize};

use crate::error::{IoContext, LabError, Result};

pub const CHECKPOINT_FORMAT: &str = "recast-policy-v1";

#[derive(Debug, Serialize, Deserialize)]
struct DatasetHeader {
    shape: CatalogShape,
    seed: u64,
    num_prompts: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct PromptLine {
    prompt_id: usize,
    target: [u32; 3],
    ground_truth_text: String,
}

fn json_err(path: &Path, line: usize) -> impl FnOnce(serde_json::Error) -> LabError + '_ {
    move |source| LabError::Json { path: path.to_path_buf(), line, source }
}

pub fn create_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).at(dir)?;
        }
    }
    Ok(())
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    create_parent(path)?;
    Ok(BufWriter::new(File::create(path).at(path)?))
}

pub fn write_dataset<W: Write>(dataset: &Dataset, mut out: W) -> std::io::Result<()> {
    let header = DatasetHeader {
        shape: dataset.shape,
        seed: dataset.seed,
        num_prompts: dataset.len(),
    };
    serde_json::to_writer(&mut out, &header)?;
    out.write_all(b"\n")?;
    for p in &dataset.prompts {
        let line = PromptLine {
            prompt_id: p.prompt_id,
            target: [p.target.a, p.target.b, p.target.c],
            ground_truth_text: p.ground_truth_text.as_str().to_owned(),
        };
        serde_json::to_writer(&mut out, &line)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

pub fn read_dataset<R: BufRead>(input: R, path: &Path) -> Result<Dataset> {
    let mut lines = input.lines().enumerate().filter(|(_, l)| {
        l.as_ref().map(|s| !s.trim().is_empty()).unwrap_or(true)
    });
    let (_, first) = lines
        .next()
        .ok_or_else(|| LabError::Format(format!("{}: empty dataset file", path.display())))?;
    let header: DatasetHeader = serde_json::from_str(&first.at(path)?).map_err(json_err(path, 1))?;
    let mut prompts = Vec::with_capacity(header.num_prompts);
    for (i, line) in lines {
        let line: PromptLine = serde_json::from_str(&line.at(path)?).map_err(json_err(path, i + 1))?;
        let [a, b, c] = line.target;
        let target = SemanticId::new(a, b, c, &header.shape)?;
        let spec = PromptSpec::new(line.prompt_id, target);
        if spec.ground_truth_text.as_str() != line.ground_truth_text {
            return Err(LabError::Format(format!(
                "{}:{}: ground-truth text does not match target",
                path.display(),
                i + 1
            )));
        }
        prompts.push(spec);
    }
    if prompts.len() != header.num_prompts {
        return Err(LabError::Format(format!(
            "{}: header announces {} prompts, found {}",
            path.display(),
            header.num_prompts,
            prompts.len()
        )));
    }
    let dataset = Dataset { shape: header.shape, prompts, seed: header.seed };
    dataset.validate()?;
    Ok(dataset)
}

pub fn save_dataset(path: &Path, dataset: &Dataset) -> Result<()> {
    write_dataset(dataset, create(path)?).at(path)
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    read_dataset(BufReader::new(File::open(path).at(path)?), path)
}

#[derive(Debug, Serialize, Deserialize)]
struct Checkpoint {
    format: String,
    #[serde(flatten)]
    policy: TabularPolicy,
}

pub fn save_checkpoint(path: &Path, policy: &TabularPolicy) -> Result<()> {
    let ckpt = Checkpoint { format: CHECKPOINT_FORMAT.to_owned(), policy: policy.clone() };
    let mut out = create(path)?;
    serde_json::to_writer(&mut out, &ckpt).map_err(json_err(path, 1))?;
    out.write_all(b"\n").at(path)?;
    out.flush().at(path)
}

pub fn load_checkpoint(path: &Path) -> Result<TabularPolicy> {
    let text = fs::read_to_string(path).at(path)?;
    let ckpt: Checkpoint = serde_json::from_str(&text).map_err(json_err(path, 1))?;
    if ckpt.format != CHECKPOINT_FORMAT {
        return Err(LabError::Format(format!(
            "{}: unsupported checkpoint format {:?}",
            path.display(),
            ckpt.format
        )));
    }
    ckpt.policy.validate()?;
    Ok(ckpt.policy)
}

pub fn load_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).at(path)?;
    serde_json::from_str(&text).map_err(json_err(path, 1))
}

pub fn save_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut out = create(path)?;
    serde_json::to_writer_pretty(&mut out, value).map_err(json_err(path, 1))?;
    out.write_all(b"\n").at(path)?;
    out.flush().at(path)
}

pub fn write_steps<W: Write>(reports: &[StepReport], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in reports {
        w.serialize(r)?;
    }
    if reports.is_empty() {
        w.write_record(StepReport::COLUMNS)?;
    }
    w.flush().map_err(|e| LabError::Csv(e.into()))?;
    Ok(())
}

pub fn save_steps(path: &Path, reports: &[StepReport]) -> Result<()> {
    write_steps(reports, create(path)?)
}

pub fn read_steps<R: Read>(input: R) -> Result<Vec<StepReport>> {
    let mut r = csv::Reader::from_reader(input);
    r.deserialize().map(|row| row.map_err(LabError::from)).collect()
}

pub fn save_curve(path: &Path, curve: &LearningCurve) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record(["step", curve.metric.as_str()])?;
    for &(step, value) in &curve.points {
        w.write_record([step.to_string(), value.to_string()])?;
    }
    w.flush().at(path)
}

pub fn load_curve(path: &Path) -> Result<LearningCurve> {
    let mut r = csv::Reader::from_path(path)?;
    let metric = r
        .headers()?
        .get(1)
        .ok_or_else(|| LabError::Format(format!("{}: missing metric column", path.display())))?
        .to_owned();
    let mut curve = LearningCurve::new(metric);
    for row in r.records() {
        let row = row?;
        let parse_err = || LabError::Format(format!("{}: bad curve row {:?}", path.display(), row));
        let step: usize = row.get(0).and_then(|s| s.parse().ok()).ok_or_else(parse_err)?;
        let value: f64 = row.get(1).and_then(|s| s.parse().ok()).ok_or_else(parse_err)?;
        curve.push(step, value)?;
    }
    Ok(curve)
}

/// Columnar plot data: a `# name name ...` line, then one row per point.
pub fn save_dat(path: &Path, columns: &[&str], rows: &[Vec<f64>]) -> Result<()> {
    let mut out = create(path)?;
    writeln!(out, "# {}", columns.join(" ")).at(path)?;
    for row in rows {
        let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        writeln!(out, "{}", cells.join(" ")).at(path)?;
    }
    out.flush().at(path)
}

/// A raw group for the signal filter: texts plus target triples.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RawGroup {
    pub prompt_id: usize,
    pub responses: Vec<String>,
    pub target: Vec<[u32; 3]>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum GroupRecord {
    Scored(ScoredGroup),
    Raw(RawGroup),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SignalRecord {
    pub group: ScoredGroup,
    pub advantages: recast_core::AdvantageVector,
}

impl GroupRecord {
    pub fn into_scored(self, shape: &CatalogShape, config: &SignalConfig) -> Result<ScoredGroup> {
        match self {
            GroupRecord::Scored(g) => {
                g.validate()?;
                Ok(g)
            }
            GroupRecord::Raw(raw) => {
                let target = raw
                    .target
                    .iter()
                    .map(|&[a, b, c]| SemanticId::new(a, b, c, shape))
                    .collect::<recast_core::Result<IdSet>>()?;
                let texts = raw.responses.into_iter().map(ResponseText::new).collect();
                Ok(ScoredGroup::score(raw.prompt_id, texts, target, shape, &config.phi)?)
            }
        }
    }
}

/// Reads group records line by line and writes one signal record per group.
/// Returns the number of groups processed.
pub fn signal_filter<R: BufRead, W: Write>(
    input: R,
    mut out: W,
    shape: &CatalogShape,
    config: &SignalConfig,
) -> Result<usize> {
    let stdin = Path::new("<input>");
    let mut n = 0;
    for (i, line) in input.lines().enumerate() {
        let line = line.at(stdin)?;
        if line.trim().is_empty() {
            continue;
        }
        let record: GroupRecord = serde_json::from_str(&line).map_err(json_err(stdin, i + 1))?;
        let group = record.into_scored(shape, config)?;
        let (group, advantages) = build_signal(&group, config, shape)?;
        serde_json::to_writer(&mut out, &SignalRecord { group, advantages })
            .map_err(json_err(stdin, i + 1))?;
        out.write_all(b"\n").at(stdin)?;
        n += 1;
    }
    out.flush().at(stdin)?;
    Ok(n)
}
