//! Aggregation of human judgments into Customized / Executable /
//! FullyCorrect percentages.
//!
//! Each item gets one panel of annotator verdicts per criterion. The
//! majority of the panel decides the criterion; an item is fully correct
//! when both criteria pass. Percentages are `100 * count / n` rounded half
//! up to two decimals, computed in integer arithmetic.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize, Serializer};
use thiserror::Error;

use crate::procedure::{ConstraintSubtype, CriticalType, CustomizationHint, Expertise};

/// `count / n` as a percentage with two decimals.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Percent {
    hundredths: u64,
}

impl Percent {
    /// Rounds half up. An empty denominator gives 0.00.
    pub fn new(count: usize, n: usize) -> Self {
        if n == 0 {
            return Self { hundredths: 0 };
        }
        let (count, n) = (count as u64, n as u64);
        Self {
            hundredths: (20_000 * count + n) / (2 * n),
        }
    }

    pub fn hundredths(self) -> u64 {
        self.hundredths
    }

    pub fn value(self) -> f64 {
        self.hundredths as f64 / 100.0
    }
}

impl fmt::Display for Percent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = format!("{}.{:02}", self.hundredths / 100, self.hundredths % 100);
        f.pad(&s)
    }
}

impl Serialize for Percent {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_f64(self.value())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Criterion {
    Customized,
    Executable,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCategory {
    MissingSteps,
    ExtraSteps,
    UnderspecifiedSteps,
    IncorrectSteps,
    WrongOrder,
}

impl ErrorCategory {
    pub const ALL: [ErrorCategory; 5] = [
        ErrorCategory::MissingSteps,
        ErrorCategory::ExtraSteps,
        ErrorCategory::UnderspecifiedSteps,
        ErrorCategory::IncorrectSteps,
        ErrorCategory::WrongOrder,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ErrorCategory::MissingSteps => "missing_steps",
            ErrorCategory::ExtraSteps => "extra_steps",
            ErrorCategory::UnderspecifiedSteps => "underspecified_steps",
            ErrorCategory::IncorrectSteps => "incorrect_steps",
            ErrorCategory::WrongOrder => "wrong_order",
        }
    }
}

/// One annotator's verdict on one criterion for one system output.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JudgmentRecord {
    /// System (topology) that produced the judged procedure.
    pub method: String,
    pub record_id: String,
    pub annotator_id: String,
    pub criterion: Criterion,
    pub verdict: bool,
    #[serde(default)]
    pub error_categories: BTreeSet<ErrorCategory>,
}

impl JudgmentRecord {
    pub fn check(&self) -> Result<(), String> {
        match (self.verdict, self.error_categories.is_empty()) {
            (true, false) => Err("positive verdict with error categories".into()),
            (false, true) => Err("negative verdict without error categories".into()),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EvalError {
    #[error("panel is empty")]
    EmptyPanel,
    #[error("panel of {0} annotators has no strict majority")]
    EvenPanel(usize),
    #[error("record `{record_id}` has no {criterion:?} judgments")]
    MissingCriterion {
        record_id: String,
        criterion: Criterion,
    },
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("reading {path}: {message}")]
    Io { path: String, message: String },
}

/// What to do when a panel splits evenly.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TieRule {
    #[default]
    Refuse,
    Negative,
    Positive,
}

/// True iff strictly more positives than negatives.
pub fn majority(verdicts: &[bool]) -> Result<bool, EvalError> {
    majority_with(verdicts, TieRule::Refuse)
}

pub fn majority_with(verdicts: &[bool], tie: TieRule) -> Result<bool, EvalError> {
    if verdicts.is_empty() {
        return Err(EvalError::EmptyPanel);
    }
    let positives = verdicts.iter().filter(|v| **v).count();
    let negatives = verdicts.len() - positives;
    match positives.cmp(&negatives) {
        std::cmp::Ordering::Greater => Ok(true),
        std::cmp::Ordering::Less => Ok(false),
        std::cmp::Ordering::Equal => match tie {
            TieRule::Refuse => Err(EvalError::EvenPanel(verdicts.len())),
            TieRule::Negative => Ok(false),
            TieRule::Positive => Ok(true),
        },
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ItemVerdict {
    pub customized: bool,
    pub executable: bool,
    pub fully_correct: bool,
}

/// Majority verdicts for one item from all its judgments.
pub fn item_verdicts(
    record_id: &str,
    judgments: &[&JudgmentRecord],
    tie: TieRule,
) -> Result<ItemVerdict, EvalError> {
    let panel = |criterion| -> Result<bool, EvalError> {
        let verdicts: Vec<bool> = judgments
            .iter()
            .filter(|j| j.criterion == criterion)
            .map(|j| j.verdict)
            .collect();
        if verdicts.is_empty() {
            return Err(EvalError::MissingCriterion {
                record_id: record_id.to_string(),
                criterion,
            });
        }
        majority_with(&verdicts, tie)
    };
    let customized = panel(Criterion::Customized)?;
    let executable = panel(Criterion::Executable)?;
    Ok(ItemVerdict {
        customized,
        executable,
        fully_correct: customized && executable,
    })
}

/// Hint metadata dimension for grouped reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Dimension {
    ConstraintSubtype,
    Expertise,
    CriticalType,
}

impl Dimension {
    pub fn as_str(self) -> &'static str {
        match self {
            Dimension::ConstraintSubtype => "constraint_subtype",
            Dimension::Expertise => "expertise",
            Dimension::CriticalType => "critical_type",
        }
    }

    fn values(self) -> Vec<&'static str> {
        match self {
            Dimension::ConstraintSubtype => {
                ConstraintSubtype::ALL.iter().map(|v| v.as_str()).collect()
            }
            Dimension::Expertise => Expertise::ALL.iter().map(|v| v.as_str()).collect(),
            Dimension::CriticalType => CriticalType::ALL.iter().map(|v| v.as_str()).collect(),
        }
    }

    fn value_of(self, hint: &CustomizationHint) -> &'static str {
        match self {
            Dimension::ConstraintSubtype => hint.constraint_subtype.as_str(),
            Dimension::Expertise => hint.expertise.as_str(),
            Dimension::CriticalType => hint.critical_type.as_str(),
        }
    }
}

impl FromStr for Dimension {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.replace('-', "_").as_str() {
            "constraint_subtype" | "constraint" => Ok(Dimension::ConstraintSubtype),
            "expertise" => Ok(Dimension::Expertise),
            "critical_type" | "critical" => Ok(Dimension::CriticalType),
            other => Err(format!("unknown dimension `{other}`")),
        }
    }
}

/// Groups items by a hint dimension, looking hints up by record id.
pub struct Grouping<'a> {
    pub dimension: Dimension,
    pub hints: &'a HashMap<String, CustomizationHint>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct MetricsRow {
    pub method: String,
    pub group: Option<String>,
    pub n: usize,
    pub customized_count: usize,
    pub executable_count: usize,
    pub fully_correct_count: usize,
    pub customized_pct: Percent,
    pub executable_pct: Percent,
    pub fully_correct_pct: Percent,
}

impl MetricsRow {
    fn from_items(method: &str, group: Option<&str>, items: &[ItemVerdict]) -> Self {
        let n = items.len();
        let c = items.iter().filter(|v| v.customized).count();
        let e = items.iter().filter(|v| v.executable).count();
        let fc = items.iter().filter(|v| v.fully_correct).count();
        Self {
            method: method.to_string(),
            group: group.map(str::to_string),
            n,
            customized_count: c,
            executable_count: e,
            fully_correct_count: fc,
            customized_pct: Percent::new(c, n),
            executable_pct: Percent::new(e, n),
            fully_correct_pct: Percent::new(fc, n),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct MetricsReport {
    pub dimension: Option<&'static str>,
    pub rows: Vec<MetricsRow>,
    /// Skipped items and empty groups.
    pub notes: Vec<String>,
}

type ByRecord<'a> = Vec<(&'a str, Vec<&'a JudgmentRecord>)>;

/// Methods in order of first appearance, each with its judgments grouped
/// by record in order of first appearance.
fn by_method_and_record(judgments: &[JudgmentRecord]) -> Vec<(&str, ByRecord<'_>)> {
    let mut methods: Vec<(&str, ByRecord<'_>)> = Vec::new();
    for j in judgments {
        let mi = match methods.iter().position(|(m, _)| *m == j.method) {
            Some(i) => i,
            None => {
                methods.push((&j.method, Vec::new()));
                methods.len() - 1
            }
        };
        let records = &mut methods[mi].1;
        match records.iter_mut().find(|(r, _)| *r == j.record_id) {
            Some((_, js)) => js.push(j),
            None => records.push((&j.record_id, vec![j])),
        }
    }
    methods
}

/// One row per method, or per (method, group value) when grouping.
/// Items whose verdicts cannot be decided are skipped with a note.
pub fn aggregate(
    judgments: &[JudgmentRecord],
    grouping: Option<&Grouping<'_>>,
    tie: TieRule,
) -> MetricsReport {
    let mut report = MetricsReport {
        dimension: grouping.map(|g| g.dimension.as_str()),
        ..MetricsReport::default()
    };
    for (method, records) in by_method_and_record(judgments) {
        let mut decided: Vec<(&str, ItemVerdict)> = Vec::new();
        for (record_id, js) in records {
            match item_verdicts(record_id, &js, tie) {
                Ok(v) => decided.push((record_id, v)),
                Err(e) => report
                    .notes
                    .push(format!("{method}: skipped `{record_id}`: {e}")),
            }
        }
        match grouping {
            None => {
                let items: Vec<_> = decided.iter().map(|(_, v)| *v).collect();
                if items.is_empty() {
                    report.notes.push(format!("{method}: no decidable items"));
                } else {
                    report
                        .rows
                        .push(MetricsRow::from_items(method, None, &items));
                }
            }
            Some(g) => {
                let mut groups: BTreeMap<&str, Vec<ItemVerdict>> = BTreeMap::new();
                for (record_id, v) in &decided {
                    match g.hints.get(*record_id) {
                        Some(hint) => groups
                            .entry(g.dimension.value_of(hint))
                            .or_default()
                            .push(*v),
                        None => report.notes.push(format!(
                            "{method}: record `{record_id}` not in dataset; left out of groups"
                        )),
                    }
                }
                for value in g.dimension.values() {
                    match groups.get(value) {
                        Some(items) => {
                            report
                                .rows
                                .push(MetricsRow::from_items(method, Some(value), items))
                        }
                        None => report.notes.push(format!(
                            "{method}: no records with {}={value}",
                            g.dimension.as_str()
                        )),
                    }
                }
            }
        }
    }
    report
}

impl fmt::Display for MetricsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let group_header = self.dimension.unwrap_or("");
        if self.dimension.is_some() {
            writeln!(
                f,
                "{:<20} {:<14} {:>5} {:>11} {:>11} {:>14}",
                "method", group_header, "n", "customized", "executable", "fully_correct"
            )?;
        } else {
            writeln!(
                f,
                "{:<20} {:>5} {:>11} {:>11} {:>14}",
                "method", "n", "customized", "executable", "fully_correct"
            )?;
        }
        for row in &self.rows {
            let c = format!("{}%", row.customized_pct);
            let e = format!("{}%", row.executable_pct);
            let fc = format!("{}%", row.fully_correct_pct);
            match &row.group {
                Some(g) => writeln!(
                    f,
                    "{:<20} {:<14} {:>5} {:>11} {:>11} {:>14}",
                    row.method, g, row.n, c, e, fc
                )?,
                None => writeln!(
                    f,
                    "{:<20} {:>5} {:>11} {:>11} {:>14}",
                    row.method, row.n, c, e, fc
                )?,
            }
        }
        for note in &self.notes {
            writeln!(f, "note: {note}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ErrorShare {
    pub category: &'static str,
    pub customized: usize,
    pub executable: usize,
    pub total: usize,
    /// Share of all error marks for the method.
    pub percent: Percent,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ErrorDistribution {
    pub method: String,
    pub total_marks: usize,
    pub categories: Vec<ErrorShare>,
}

/// Counts every error category an annotator marked, per criterion. One
/// judgment may mark several categories; each counts once.
pub fn error_distribution(judgments: &[JudgmentRecord], method: &str) -> ErrorDistribution {
    let mut counts: BTreeMap<(ErrorCategory, Criterion), usize> = BTreeMap::new();
    for j in judgments.iter().filter(|j| j.method == method) {
        for c in &j.error_categories {
            *counts.entry((*c, j.criterion)).or_default() += 1;
        }
    }
    let total_marks = counts.values().sum();
    let categories = ErrorCategory::ALL
        .iter()
        .map(|&cat| {
            let customized = counts
                .get(&(cat, Criterion::Customized))
                .copied()
                .unwrap_or(0);
            let executable = counts
                .get(&(cat, Criterion::Executable))
                .copied()
                .unwrap_or(0);
            let total = customized + executable;
            ErrorShare {
                category: cat.as_str(),
                customized,
                executable,
                total,
                percent: Percent::new(total, total_marks),
            }
        })
        .collect();
    ErrorDistribution {
        method: method.to_string(),
        total_marks,
        categories,
    }
}

impl fmt::Display for ErrorDistribution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "errors for {} ({} marks)", self.method, self.total_marks)?;
        writeln!(
            f,
            "{:<22} {:>10} {:>10} {:>6} {:>8}",
            "category", "customized", "executable", "total", "share"
        )?;
        for c in &self.categories {
            writeln!(
                f,
                "{:<22} {:>10} {:>10} {:>6} {:>8}",
                c.category,
                c.customized,
                c.executable,
                c.total,
                format!("{}%", c.percent)
            )?;
        }
        Ok(())
    }
}

/// Methods in order of first appearance.
pub fn methods(judgments: &[JudgmentRecord]) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for j in judgments {
        if !out.contains(&j.method) {
            out.push(j.method.clone());
        }
    }
    out
}

pub fn parse_judgments(text: &str) -> Result<Vec<JudgmentRecord>, EvalError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let malformed = |message: String| EvalError::Malformed {
            line: i + 1,
            message,
        };
        let j: JudgmentRecord = serde_json::from_str(line).map_err(|e| malformed(e.to_string()))?;
        j.check().map_err(malformed)?;
        out.push(j);
    }
    Ok(out)
}

pub fn load_judgments(path: impl AsRef<Path>) -> Result<Vec<JudgmentRecord>, EvalError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| EvalError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    parse_judgments(&text)
}
