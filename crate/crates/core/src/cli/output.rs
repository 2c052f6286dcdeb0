//! Files written and read by the commands.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use crate::data::FeatureStats;
use crate::error::{Error, Result};
use crate::metrics::{Decision, ABSTAIN};
use crate::ssl::{IterationLog, PseudoLabelResult, ThresholdVector};

pub const MANIFEST: &str = "manifest.json";
pub const CHECKPOINT: &str = "checkpoint.json";
pub const LAST_GOOD_CHECKPOINT: &str = "last_good_checkpoint.json";
pub const PSEUDO_LABELS: &str = "pseudo_labels.csv";
pub const METRICS_JSON: &str = "metrics.json";
pub const METRICS_CSV: &str = "metrics.csv";
pub const HIDDEN_TRUTH: &str = "hidden_truth.csv";
pub const UNLABELED: &str = "unlabeled.csv";

pub fn hash_comment(hash: &str) -> String {
    format!("config_hash: {hash}")
}

/// The config hash named in a file's leading comment, if any.
pub fn read_hash_comment(path: &Path) -> Option<String> {
    let text = fs::read_to_string(path).ok()?;
    text.lines()
        .take_while(|l| l.starts_with('#'))
        .find_map(|l| l.trim_start_matches('#').trim().strip_prefix("config_hash:").map(|h| h.trim().to_string()))
}

pub(crate) fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::InvalidValue(e.to_string()))?;
    write_file(path, text + "\n")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DataSummary {
    pub mode: String,
    pub channels: usize,
    pub length: usize,
    pub class_names: Vec<String>,
    pub labeled: usize,
    pub validation: usize,
    pub unlabeled: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochCounts {
    pub warmup_supervised: usize,
    pub warmup_consistency: usize,
}

/// Everything needed to reproduce or reuse a run. Contains no timings, so
/// identical runs produce identical bytes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool_version: String,
    pub config_hash: String,
    pub config: RunConfig,
    pub data: DataSummary,
    pub param_count: usize,
    pub feature_stats: FeatureStats,
    pub thresholds: ThresholdVector,
    pub epochs: EpochCounts,
    pub curriculum: Vec<IterationLog>,
    pub abstained: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub accuracy: Option<f64>,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Schema(format!("{}: {e}", path.display())))
    }
}

/// Columns: `sample_id`, `p_<class>`…, `decision`, `confidence`,
/// `first_selected` (curriculum iteration, empty if never pooled).
pub fn write_pseudo_labels(
    path: &Path,
    ids: &[String],
    class_names: &[String],
    result: &PseudoLabelResult,
    first_selected: Option<&[Option<usize>]>,
    config_hash: &str,
) -> Result<()> {
    let mut buf = Vec::new();
    writeln!(buf, "# {}", hash_comment(config_hash)).expect("write to vec");
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        let mut header = vec!["sample_id".to_string()];
        header.extend(class_names.iter().map(|c| format!("p_{c}")));
        header.extend(["decision", "confidence", "first_selected"].map(String::from));
        w.write_record(&header).map_err(|e| Error::InvalidValue(e.to_string()))?;
        for (i, id) in ids.iter().enumerate() {
            let mut row = vec![id.clone()];
            row.extend(result.probs.row(i).iter().map(|p| p.to_string()));
            row.push(match result.decisions[i] {
                Decision::Class(c) => class_names[c].clone(),
                Decision::Abstain => ABSTAIN.to_string(),
            });
            row.push((result.confidence[i] as f32).to_string());
            row.push(
                first_selected
                    .and_then(|f| f[i])
                    .map(|it| it.to_string())
                    .unwrap_or_default(),
            );
            w.write_record(&row).map_err(|e| Error::InvalidValue(e.to_string()))?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
    }
    write_file(path, buf)
}

fn reader(path: &Path) -> Result<csv::Reader<fs::File>> {
    csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            other => Error::Parse {
                line: 0,
                message: format!("{}: {other:?}", path.display()),
            },
        })
}

fn column(headers: &csv::StringRecord, name: &str, path: &Path) -> Result<usize> {
    headers
        .iter()
        .position(|h| h == name)
        .ok_or_else(|| Error::Schema(format!("{}: missing column {name:?}", path.display())))
}

/// Decisions read back from a pseudo-label file, keyed by class name order
/// of its `p_` columns.
pub struct DecisionFile {
    pub class_names: Vec<String>,
    pub ids: Vec<String>,
    pub decisions: Vec<Decision>,
}

pub fn read_decisions(path: &Path) -> Result<DecisionFile> {
    let mut r = reader(path)?;
    let headers = r
        .headers()
        .map_err(|e| Error::Parse {
            line: 1,
            message: e.to_string(),
        })?
        .clone();
    let id_col = column(&headers, "sample_id", path)?;
    let dec_col = column(&headers, "decision", path)?;
    let class_names: Vec<String> = headers
        .iter()
        .filter_map(|h| h.strip_prefix("p_").map(String::from))
        .collect();
    let index: HashMap<&str, usize> = class_names.iter().enumerate().map(|(i, c)| (c.as_str(), i)).collect();
    let mut ids = Vec::new();
    let mut decisions = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| Error::Parse {
            line: e.position().map(|p| p.line()).unwrap_or(0),
            message: e.to_string(),
        })?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        let d = &rec[dec_col];
        decisions.push(if d == ABSTAIN {
            Decision::Abstain
        } else {
            Decision::Class(*index.get(d).ok_or_else(|| {
                Error::Schema(format!("{}:{line}: unknown class {d:?}", path.display()))
            })?)
        });
        ids.push(rec[id_col].to_string());
    }
    Ok(DecisionFile {
        class_names,
        ids,
        decisions,
    })
}

pub fn write_truth(path: &Path, ids: &[String], labels: &[usize], class_names: &[String], config_hash: &str) -> Result<()> {
    let mut buf = Vec::new();
    writeln!(buf, "# {}", hash_comment(config_hash)).expect("write to vec");
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        w.write_record(["sample_id", "label"]).map_err(|e| Error::InvalidValue(e.to_string()))?;
        for (id, &l) in ids.iter().zip(labels) {
            w.write_record([id.as_str(), class_names[l].as_str()])
                .map_err(|e| Error::InvalidValue(e.to_string()))?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
    }
    write_file(path, buf)
}

/// `sample_id → class name` from a truth file (`sample_id,label`).
pub fn read_truth(path: &Path) -> Result<HashMap<String, String>> {
    let mut r = reader(path)?;
    let headers = r
        .headers()
        .map_err(|e| Error::Parse {
            line: 1,
            message: e.to_string(),
        })?
        .clone();
    let id_col = column(&headers, "sample_id", path)?;
    let label_col = column(&headers, "label", path)?;
    let mut out = HashMap::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| Error::Parse {
            line: e.position().map(|p| p.line()).unwrap_or(0),
            message: e.to_string(),
        })?;
        out.insert(rec[id_col].to_string(), rec[label_col].to_string());
    }
    Ok(out)
}
