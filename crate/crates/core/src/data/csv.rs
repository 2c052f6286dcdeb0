//! CSV ingestion driven by a TOML schema.
//!
//! ```toml
//! channels = 3
//! label_column = "label"        # omit for unlabeled files
//! id_column = "sample_id"       # omit to number windows
//! class_names = ["normal", "dos"]
//!
//! [window]
//! kind = "prewindowed"          # one row per window, columns c0_t0..c0_t{N-1}, c1_t0, ...
//! length = 32
//! # or: kind = "rolling", length = 32, stride = 16  (one row per timestep)
//! ```
//!
//! Feature columns are every column other than the id and label columns, in
//! header order. Lines starting with `#` are comments.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum WindowPolicy {
    Prewindowed {
        length: usize,
    },
    /// Rows are single timesteps; a window takes its label and id from its last row.
    Rolling {
        #[serde(default = "default_rolling_length")]
        length: usize,
        #[serde(default = "default_rolling_stride")]
        stride: usize,
    },
}

fn default_rolling_length() -> usize {
    32
}

fn default_rolling_stride() -> usize {
    16
}

impl Default for WindowPolicy {
    fn default() -> Self {
        WindowPolicy::Rolling {
            length: default_rolling_length(),
            stride: default_rolling_stride(),
        }
    }
}

impl WindowPolicy {
    pub fn length(&self) -> usize {
        match self {
            WindowPolicy::Prewindowed { length } | WindowPolicy::Rolling { length, .. } => *length,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsvSchema {
    pub channels: usize,
    #[serde(default)]
    pub window: WindowPolicy,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label_column: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id_column: Option<String>,
    pub class_names: Vec<String>,
}

pub const ID_COLUMN: &str = "sample_id";
pub const LABEL_COLUMN: &str = "label";

impl CsvSchema {
    /// The schema matching files produced by [`write_csv`].
    pub fn for_dataset(d: &Dataset) -> Self {
        Self {
            channels: d.channels(),
            window: WindowPolicy::Prewindowed { length: d.length() },
            label_column: d.labels().map(|_| LABEL_COLUMN.to_string()),
            id_column: Some(ID_COLUMN.to_string()),
            class_names: d.class_names().to_vec(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let s: Self = toml::from_str(text).map_err(|e| Error::Schema(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| Error::Schema(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("schema serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 || self.window.length() == 0 {
            return Err(Error::Schema("channels and window length must be positive".into()));
        }
        if let WindowPolicy::Rolling { stride: 0, .. } = self.window {
            return Err(Error::Schema("rolling window stride must be positive".into()));
        }
        if self.class_names.len() < 2 {
            return Err(Error::Schema("at least two class names are required".into()));
        }
        let mut seen = std::collections::HashSet::new();
        if let Some(dup) = self.class_names.iter().find(|n| !seen.insert(n.as_str())) {
            return Err(Error::Schema(format!("class name {dup:?} is declared twice")));
        }
        Ok(())
    }

    fn feature_count(&self) -> usize {
        match self.window {
            WindowPolicy::Prewindowed { length } => self.channels * length,
            WindowPolicy::Rolling { .. } => self.channels,
        }
    }
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map(|p| p.line()).unwrap_or(0);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        csv::ErrorKind::UnequalLengths { expected_len, len, .. } => Error::Parse {
            line,
            message: format!("row has {len} fields but the header has {expected_len}"),
        },
        other => Error::Parse {
            line,
            message: format!("{other:?}"),
        },
    }
}

/// Loads windows described by `schema`. A declared label column that is
/// missing from the header yields an unlabeled dataset.
pub fn load_csv(path: &Path, schema: &CsvSchema) -> Result<Dataset> {
    schema.validate()?;
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_err(path, e))?;
    let header = reader.headers().map_err(|e| csv_err(path, e))?.clone();
    let find = |name: &Option<String>, what: &str| -> Result<Option<usize>> {
        match name {
            None => Ok(None),
            Some(n) => match header.iter().position(|h| h == n) {
                Some(i) => Ok(Some(i)),
                None if what == "label" => {
                    log::info!("{}: no {n:?} column; loading as unlabeled", path.display());
                    Ok(None)
                }
                None => Err(Error::Schema(format!("{}: {what} column {n:?} not in header", path.display()))),
            },
        }
    };
    let id_col = find(&schema.id_column, "id")?;
    let label_col = find(&schema.label_column, "label")?;
    let features: Vec<usize> = (0..header.len())
        .filter(|&i| Some(i) != id_col && Some(i) != label_col)
        .collect();
    if features.len() != schema.feature_count() {
        return Err(Error::Schema(format!(
            "{}: {} feature columns but the schema expects {}",
            path.display(),
            features.len(),
            schema.feature_count()
        )));
    }

    let mut values: Vec<f32> = Vec::new();
    let mut labels: Vec<usize> = Vec::new();
    let mut ids: Vec<String> = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| csv_err(path, e))?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        for &i in &features {
            let cell = &record[i];
            let v: f32 = cell.parse().map_err(|_| Error::Parse {
                line,
                message: format!("column {:?} holds non-numeric value {cell:?}", &header[i]),
            })?;
            values.push(v);
        }
        if let Some(i) = label_col {
            let name = &record[i];
            let c = schema.class_names.iter().position(|n| n == name).ok_or_else(|| {
                Error::Schema(format!("{}:{line}: unknown class name {name:?}", path.display()))
            })?;
            labels.push(c);
        }
        ids.push(match id_col {
            Some(i) => record[i].to_string(),
            None => format!("row{}", ids.len()),
        });
    }

    let k = schema.channels;
    let (x, labels, ids) = match schema.window {
        WindowPolicy::Prewindowed { length } => {
            let n = ids.len();
            (Tensor::new(vec![n, k, length], values)?, labels, ids)
        }
        WindowPolicy::Rolling { length, stride } => {
            let rows = ids.len();
            let starts: Vec<usize> = if rows >= length {
                (0..=rows - length).step_by(stride).collect()
            } else {
                Vec::new()
            };
            let mut data = Vec::with_capacity(starts.len() * k * length);
            for &s in &starts {
                for c in 0..k {
                    data.extend((s..s + length).map(|r| values[r * k + c]));
                }
            }
            let last = |s: &usize| s + length - 1;
            let wl = if label_col.is_some() {
                starts.iter().map(|s| labels[last(s)]).collect()
            } else {
                Vec::new()
            };
            let wid = starts
                .iter()
                .map(|s| match id_col {
                    Some(_) => ids[last(s)].clone(),
                    None => format!("w{s}"),
                })
                .collect();
            (Tensor::new(vec![starts.len(), k, length], data)?, wl, wid)
        }
    };
    let ds = Dataset::new(x, label_col.map(|_| labels), ids, schema.class_names.clone())?;
    if let Some(counts) = ds.class_counts() {
        let summary: Vec<String> = schema
            .class_names
            .iter()
            .zip(&counts)
            .map(|(n, c)| format!("{n}={c}"))
            .collect();
        log::info!("{}: {} windows ({})", path.display(), ds.len(), summary.join(", "));
    } else {
        log::info!("{}: {} unlabeled windows", path.display(), ds.len());
    }
    Ok(ds)
}

/// Writes `dataset` in the pre-windowed layout, preceded by `# ` comment lines.
pub fn write_csv(dataset: &Dataset, path: &Path, comments: &[String]) -> Result<()> {
    let mut buf: Vec<u8> = Vec::new();
    for c in comments {
        writeln!(buf, "# {c}").expect("write to vec");
    }
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        let (k, len) = (dataset.channels(), dataset.length());
        let mut header = vec![ID_COLUMN.to_string()];
        if dataset.labels().is_some() {
            header.push(LABEL_COLUMN.to_string());
        }
        for c in 0..k {
            header.extend((0..len).map(|t| format!("c{c}_t{t}")));
        }
        w.write_record(&header).map_err(|e| csv_err(path, e))?;
        for i in 0..dataset.len() {
            let mut row = vec![dataset.ids()[i].clone()];
            if let Some(l) = dataset.labels() {
                row.push(dataset.class_names()[l[i]].clone());
            }
            row.extend(dataset.x().row(i).iter().map(|v| v.to_string()));
            w.write_record(&row).map_err(|e| csv_err(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn schema(k: usize, n: usize, labeled: bool) -> CsvSchema {
        CsvSchema {
            channels: k,
            window: WindowPolicy::Prewindowed { length: n },
            label_column: labeled.then(|| "label".into()),
            id_column: Some("sample_id".into()),
            class_names: vec!["normal".into(), "dos".into()],
        }
    }

    fn write(dir: &tempfile::TempDir, text: &str) -> std::path::PathBuf {
        let p = dir.path().join("d.csv");
        fs::write(&p, text).unwrap();
        p
    }

    #[test]
    fn two_labeled_rows() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "sample_id,label,a,b,c,d\nx,normal,1,2,3,4\ny,dos,5,6,7,8\n");
        let d = load_csv(&p, &schema(1, 4, true)).unwrap();
        assert_eq!(d.len(), 2);
        assert_eq!(d.labels(), Some(&[0, 1][..]));
        assert_eq!(d.x().row(1), &[5.0, 6.0, 7.0, 8.0]);
    }

    #[test]
    fn non_numeric_cell_names_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "# comment\nsample_id,label,a,b,c,d\nx,normal,1,2,3,4\ny,dos,5,oops,7,8\n");
        match load_csv(&p, &schema(1, 4, true)) {
            Err(Error::Parse { line, message }) => {
                assert_eq!(line, 4);
                assert!(message.contains("oops"));
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn ragged_row_names_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "sample_id,label,a,b,c,d\nx,normal,1,2,3\n");
        assert!(matches!(load_csv(&p, &schema(1, 4, true)), Err(Error::Parse { line: 2, .. })));
    }

    #[test]
    fn unknown_class_is_a_schema_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "sample_id,label,a,b,c,d\nx,worm,1,2,3,4\n");
        assert!(matches!(load_csv(&p, &schema(1, 4, true)), Err(Error::Schema(_))));
    }

    #[test]
    fn rolling_windows_take_last_row_label() {
        let dir = tempfile::tempdir().unwrap();
        let mut text = String::from("t,label,v0,v1\n");
        for r in 0..10 {
            let l = if r >= 5 { "dos" } else { "normal" };
            text += &format!("{r},{l},{r},{}\n", 100 + r);
        }
        let p = write(&dir, &text);
        let s = CsvSchema {
            channels: 2,
            window: WindowPolicy::Rolling { length: 4, stride: 3 },
            label_column: Some("label".into()),
            id_column: Some("t".into()),
            class_names: vec!["normal".into(), "dos".into()],
        };
        let d = load_csv(&p, &s).unwrap();
        // starts 0, 3, 6
        assert_eq!(d.len(), 3);
        assert_eq!(d.labels(), Some(&[0, 1, 1][..]));
        assert_eq!(d.ids(), &["3", "6", "9"]);
        assert_eq!(d.x().row(1), &[3.0, 4.0, 5.0, 6.0, 103.0, 104.0, 105.0, 106.0]);
    }

    #[test]
    fn schema_toml_round_trip() {
        let s = CsvSchema::from_toml(
            "channels = 2\nclass_names = [\"a\", \"b\"]\nlabel_column = \"label\"\n[window]\nkind = \"rolling\"\n",
        )
        .unwrap();
        assert_eq!(s.window, WindowPolicy::Rolling { length: 32, stride: 16 });
        assert_eq!(CsvSchema::from_toml(&s.to_toml()).unwrap(), s);
        assert!(CsvSchema::from_toml("channels = 2\nclass_names = [\"a\", \"b\"]\nbogus = 1\n").is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn write_then_load_is_value_identical(
            vals in proptest::collection::vec(any::<f32>().prop_filter("finite", |v| v.is_finite()), 12),
            labeled in any::<bool>(),
        ) {
            let dir = tempfile::tempdir().unwrap();
            let x = Tensor::new(vec![3, 2, 2], vals).unwrap();
            let labels = labeled.then(|| vec![1, 0, 1]);
            let d = Dataset::new(x, labels, vec!["a".into(), "b".into(), "c".into()], vec!["normal".into(), "dos".into()]).unwrap();
            let p = dir.path().join("rt.csv");
            write_csv(&d, &p, &["config_hash: abc".into()]).unwrap();
            let back = load_csv(&p, &CsvSchema::for_dataset(&d)).unwrap();
            prop_assert_eq!(back, d);
        }
    }
}
