//! Line-delimited JSON dataset files.
//!
//! ```text
//! {"format":1}
//! {"id":"cook-01","goal":"Bake Bread","steps":["..."],"hint":{"text":"...","constraint_subtype":"preference","expertise":"beginner","critical_type":"constraint"},"source":"real"}
//! ```

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eval::Percent;
use crate::procedure::{
    ConstraintSubtype, CriticalType, CustomizationHint, CustomizationRecord, Expertise, Goal,
    Procedure, Source,
};
use crate::topology::BatchItem;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("reading {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("line {}: {}", .0.line, .0.message)]
    Malformed(Diagnostic),
}

/// A problem with one line of a dataset file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Diagnostic {
    pub line: usize,
    pub record_id: Option<String>,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.record_id {
            Some(id) => write!(f, "line {} (record `{id}`): {}", self.line, self.message),
            None => write!(f, "line {}: {}", self.line, self.message),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LoadMode {
    /// Bad lines become diagnostics and are skipped.
    #[default]
    Lenient,
    /// The first bad line is an error.
    Strict,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    format: u32,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct HintLine {
    text: String,
    constraint_subtype: ConstraintSubtype,
    expertise: Expertise,
    critical_type: CriticalType,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RecordLine {
    id: String,
    goal: String,
    steps: Vec<String>,
    hint: HintLine,
    source: Source,
}

impl RecordLine {
    fn from_record(r: &CustomizationRecord) -> Self {
        Self {
            id: r.id.clone(),
            goal: r.goal.as_str().to_string(),
            steps: r.procedure.steps().to_vec(),
            hint: HintLine {
                text: r.hint.text().to_string(),
                constraint_subtype: r.hint.constraint_subtype,
                expertise: r.hint.expertise,
                critical_type: r.hint.critical_type,
            },
            source: r.source,
        }
    }

    fn into_record(self) -> Result<CustomizationRecord, String> {
        let id = self.id.trim().to_string();
        if id.is_empty() {
            return Err("id is empty".into());
        }
        let goal = Goal::new(&self.goal).map_err(|e| e.to_string())?;
        if self.steps.is_empty() {
            return Err("procedure has no steps".into());
        }
        let procedure = Procedure::new(&self.steps).map_err(|e| e.to_string())?;
        let hint = CustomizationHint::new(
            &self.hint.text,
            self.hint.constraint_subtype,
            self.hint.expertise,
            self.hint.critical_type,
        )
        .map_err(|e| e.to_string())?;
        Ok(CustomizationRecord {
            id,
            goal,
            procedure,
            hint,
            source: self.source,
        })
    }
}

/// Parse result for one record line, in file order.
#[derive(Debug, Clone)]
pub enum Entry {
    Record(CustomizationRecord),
    Invalid(Diagnostic),
}

/// Reads every line, reporting bad ones without stopping.
pub fn parse_entries(text: &str) -> (Vec<Entry>, Vec<Diagnostic>) {
    let mut entries = Vec::new();
    let mut file_diagnostics = Vec::new();
    let mut seen = HashSet::new();
    let mut header_seen = false;

    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value = match serde_json::from_str(line) {
            Ok(v) => v,
            Err(e) => {
                entries.push(Entry::Invalid(Diagnostic {
                    line: line_no,
                    record_id: None,
                    message: format!("invalid JSON: {e}"),
                }));
                header_seen = true;
                continue;
            }
        };
        if value.get("format").is_some() {
            let message = match serde_json::from_value::<Header>(value) {
                Ok(_) if header_seen => Some("format header must be the first line".to_string()),
                Ok(h) if h.format != FORMAT_VERSION => {
                    Some(format!("unsupported format version {}", h.format))
                }
                Ok(_) => None,
                Err(e) => Some(format!("invalid format header: {e}")),
            };
            header_seen = true;
            if let Some(message) = message {
                file_diagnostics.push(Diagnostic {
                    line: line_no,
                    record_id: None,
                    message,
                });
            }
            continue;
        }
        if !header_seen {
            file_diagnostics.push(Diagnostic {
                line: line_no,
                record_id: None,
                message: "missing format header".into(),
            });
            header_seen = true;
        }
        let record_id = value.get("id").and_then(|v| v.as_str()).map(str::to_string);
        let parsed = serde_json::from_value::<RecordLine>(value)
            .map_err(|e| e.to_string())
            .and_then(RecordLine::into_record);
        let entry = match parsed {
            Ok(record) if !seen.insert(record.id.clone()) => Entry::Invalid(Diagnostic {
                line: line_no,
                record_id: Some(record.id.clone()),
                message: format!("duplicate id `{}`", record.id),
            }),
            Ok(record) => Entry::Record(record),
            Err(message) => Entry::Invalid(Diagnostic {
                line: line_no,
                record_id,
                message,
            }),
        };
        entries.push(entry);
    }
    (entries, file_diagnostics)
}

/// Records and the diagnostics for every line that was skipped.
#[derive(Debug, Clone, Default)]
pub struct LoadedDataset {
    pub records: Vec<CustomizationRecord>,
    pub diagnostics: Vec<Diagnostic>,
}

pub fn parse_records(text: &str, mode: LoadMode) -> Result<LoadedDataset, DatasetError> {
    let (entries, file_diagnostics) = parse_entries(text);
    let mut loaded = LoadedDataset {
        diagnostics: file_diagnostics,
        ..LoadedDataset::default()
    };
    for entry in entries {
        match entry {
            Entry::Record(r) => loaded.records.push(r),
            Entry::Invalid(d) => loaded.diagnostics.push(d),
        }
    }
    loaded.diagnostics.sort_by_key(|d| d.line);
    if mode == LoadMode::Strict {
        if let Some(first) = loaded.diagnostics.first() {
            return Err(DatasetError::Malformed(first.clone()));
        }
    }
    Ok(loaded)
}

fn read(path: &Path) -> Result<String, DatasetError> {
    std::fs::read_to_string(path).map_err(|source| DatasetError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn load_records(path: impl AsRef<Path>, mode: LoadMode) -> Result<LoadedDataset, DatasetError> {
    parse_records(&read(path.as_ref())?, mode)
}

/// Batch work items in file order; bad lines become failure items so a
/// batch reports them alongside the good records.
pub fn load_batch_items(
    path: impl AsRef<Path>,
) -> Result<(Vec<BatchItem>, Vec<Diagnostic>), DatasetError> {
    let (entries, file_diagnostics) = parse_entries(&read(path.as_ref())?);
    let items = entries
        .into_iter()
        .map(|e| match e {
            Entry::Record(r) => BatchItem::Record(r),
            Entry::Invalid(d) => BatchItem::Invalid {
                record_id: d
                    .record_id
                    .clone()
                    .unwrap_or_else(|| format!("line-{}", d.line)),
                reason: d.to_string(),
            },
        })
        .collect();
    Ok((items, file_diagnostics))
}

/// Canonical text: header line, then one record per line, each ending in
/// a newline.
pub fn records_to_string(records: &[CustomizationRecord]) -> String {
    let mut out = serde_json::to_string(&Header {
        format: FORMAT_VERSION,
    })
    .unwrap();
    out.push('\n');
    for r in records {
        out.push_str(
            &serde_json::to_string(&RecordLine::from_record(r)).expect("record serializes"),
        );
        out.push('\n');
    }
    out
}

pub fn save_records(
    path: impl AsRef<Path>,
    records: &[CustomizationRecord],
) -> Result<(), DatasetError> {
    let path = path.as_ref();
    std::fs::write(path, records_to_string(records)).map_err(|source| DatasetError::Io {
        path: path.display().to_string(),
        source,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CategoryCount {
    pub value: &'static str,
    pub count: usize,
    pub percent: Percent,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DatasetStats {
    pub records: usize,
    pub unique_goals: usize,
    pub unique_hints: usize,
    pub constraint_subtype: Vec<CategoryCount>,
    pub expertise: Vec<CategoryCount>,
    pub critical_type: Vec<CategoryCount>,
    pub source: Vec<CategoryCount>,
}

fn breakdown<T: Copy + Ord>(
    records: &[CustomizationRecord],
    all: &[T],
    name: fn(T) -> &'static str,
    key: impl Fn(&CustomizationRecord) -> T,
) -> Vec<CategoryCount> {
    let mut counts: BTreeMap<T, usize> = all.iter().map(|v| (*v, 0)).collect();
    for r in records {
        *counts.entry(key(r)).or_default() += 1;
    }
    all.iter()
        .map(|v| CategoryCount {
            value: name(*v),
            count: counts[v],
            percent: Percent::new(counts[v], records.len()),
        })
        .collect()
}

pub fn dataset_stats(records: &[CustomizationRecord]) -> DatasetStats {
    let unique_goals = records
        .iter()
        .map(|r| r.goal.as_str())
        .collect::<HashSet<_>>()
        .len();
    let unique_hints = records
        .iter()
        .map(|r| r.hint.text())
        .collect::<HashSet<_>>()
        .len();
    DatasetStats {
        records: records.len(),
        unique_goals,
        unique_hints,
        constraint_subtype: breakdown(
            records,
            ConstraintSubtype::ALL,
            ConstraintSubtype::as_str,
            |r| r.hint.constraint_subtype,
        ),
        expertise: breakdown(records, Expertise::ALL, Expertise::as_str, |r| {
            r.hint.expertise
        }),
        critical_type: breakdown(records, CriticalType::ALL, CriticalType::as_str, |r| {
            r.hint.critical_type
        }),
        source: breakdown(records, Source::ALL, Source::as_str, |r| r.source),
    }
}

impl fmt::Display for DatasetStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "records: {}", self.records)?;
        writeln!(f, "unique goals: {}", self.unique_goals)?;
        writeln!(f, "unique hints: {}", self.unique_hints)?;
        for (title, rows) in [
            ("constraint_subtype", &self.constraint_subtype),
            ("expertise", &self.expertise),
            ("critical_type", &self.critical_type),
            ("source", &self.source),
        ] {
            writeln!(f, "{title}:")?;
            for row in rows {
                writeln!(
                    f,
                    "  {:<14} {:>5}  {:>6}%",
                    row.value, row.count, row.percent
                )?;
            }
        }
        Ok(())
    }
}
