//! Deterministic validation, application, conflict detection, merging and
//! diffing of edit bags.
//!
//! Every anchor refers to the numbering of the procedure the bag was written
//! against, never to an intermediate state. A bag is applied in one pass:
//! for k = 0..=n, emit step k (replaced, deleted or untouched), then every
//! insert anchored at k in bag order.

use std::collections::{HashMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::edit::{Edit, EditBag, EditKind};
use crate::procedure::Procedure;

/// Why an edit cannot be applied to a procedure.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    AnchorOutOfRange,
    EmptyInsert,
    MultilineText,
    DuplicateReplaceAnchor,
}

impl fmt::Display for RejectReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RejectReason::AnchorOutOfRange => "anchor out of range",
            RejectReason::EmptyInsert => "insert with empty text",
            RejectReason::MultilineText => "text spans more than one line",
            RejectReason::DuplicateReplaceAnchor => "duplicate replace on the same anchor",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rejection {
    pub edit: Edit,
    pub reason: RejectReason,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ValidationReport {
    pub applicable: EditBag,
    pub rejected: Vec<Rejection>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.rejected.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("edit `{}` rejected: {}", .0.edit, .0.reason)]
pub struct StrictValidationError(pub Rejection);

/// Splits a bag into the edits that apply cleanly to `procedure` and the
/// rest. Among several replaces of one anchor only the last survives.
pub fn validate(bag: &EditBag, procedure: &Procedure) -> ValidationReport {
    let n = procedure.len();
    let mut last_replace: HashMap<usize, usize> = HashMap::new();
    let mut verdicts: Vec<Option<RejectReason>> = Vec::with_capacity(bag.len());

    for (i, edit) in bag.iter().enumerate() {
        let verdict = match edit.kind {
            EditKind::Insert if edit.anchor > n => Some(RejectReason::AnchorOutOfRange),
            EditKind::Insert if edit.text.trim().is_empty() => Some(RejectReason::EmptyInsert),
            EditKind::Replace if edit.anchor == 0 || edit.anchor > n => {
                Some(RejectReason::AnchorOutOfRange)
            }
            _ if edit.text.contains(['\n', '\r']) => Some(RejectReason::MultilineText),
            EditKind::Replace => {
                if let Some(prev) = last_replace.insert(edit.anchor, i) {
                    verdicts[prev] = Some(RejectReason::DuplicateReplaceAnchor);
                }
                None
            }
            EditKind::Insert => None,
        };
        verdicts.push(verdict);
    }

    let mut report = ValidationReport::default();
    for (edit, verdict) in bag.iter().zip(verdicts) {
        match verdict {
            None => report.applicable.push(edit.clone()),
            Some(reason) => report.rejected.push(Rejection {
                edit: edit.clone(),
                reason,
            }),
        }
    }
    report
}

/// Like [`validate`] but fails on the first rejected edit.
pub fn validate_strict(
    bag: &EditBag,
    procedure: &Procedure,
) -> Result<EditBag, StrictValidationError> {
    let report = validate(bag, procedure);
    match report.rejected.into_iter().next() {
        Some(rejection) => Err(StrictValidationError(rejection)),
        None => Ok(report.applicable),
    }
}

/// Applies `bag` to `procedure`, silently dropping edits that fail
/// validation. Use [`apply_reporting`] to see what was dropped.
pub fn apply(bag: &EditBag, procedure: &Procedure) -> Procedure {
    apply_reporting(bag, procedure).0
}

pub fn apply_reporting(bag: &EditBag, procedure: &Procedure) -> (Procedure, Vec<Rejection>) {
    let report = validate(bag, procedure);
    (
        apply_validated(&report.applicable, procedure),
        report.rejected,
    )
}

fn apply_validated(bag: &EditBag, procedure: &Procedure) -> Procedure {
    let n = procedure.len();
    let mut replacements: HashMap<usize, &str> = HashMap::new();
    let mut inserts: Vec<Vec<&str>> = vec![Vec::new(); n + 1];
    for edit in bag {
        match edit.kind {
            EditKind::Replace => {
                replacements.insert(edit.anchor, edit.text.trim());
            }
            EditKind::Insert => inserts[edit.anchor].push(edit.text.trim()),
        }
    }

    let mut steps = Vec::with_capacity(n + bag.insert_count());
    for (k, inserted) in inserts.into_iter().enumerate() {
        if k >= 1 {
            match replacements.get(&k) {
                Some(&"") => {}
                Some(text) => steps.push(text.to_string()),
                None => steps.push(procedure.steps()[k - 1].clone()),
            }
        }
        steps.extend(inserted.into_iter().map(str::to_string));
    }
    Procedure::from_trusted(steps)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConflictReason {
    /// Both sides rewrite the same step differently (a deletion counts as
    /// a rewrite to nothing).
    ContradictoryText,
    /// One side deletes a step the other side inserts after.
    InsertAfterDeletion,
}

impl fmt::Display for ConflictReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ConflictReason::ContradictoryText => "contradictory_text",
            ConflictReason::InsertAfterDeletion => "insert_after_deletion",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Conflict {
    pub left: Edit,
    pub right: Edit,
    pub reason: ConflictReason,
}

fn conflict_between(a: &Edit, b: &Edit) -> Option<ConflictReason> {
    if a == b || a.anchor != b.anchor {
        return None;
    }
    match (a.kind, b.kind) {
        (EditKind::Replace, EditKind::Replace) => Some(ConflictReason::ContradictoryText),
        (EditKind::Replace, EditKind::Insert) if a.is_deletion() => {
            Some(ConflictReason::InsertAfterDeletion)
        }
        (EditKind::Insert, EditKind::Replace) if b.is_deletion() => {
            Some(ConflictReason::InsertAfterDeletion)
        }
        _ => None,
    }
}

/// Pairs of edits from the two bags that cannot both hold. Edits present in
/// both bags are not conflicts.
pub fn detect_conflicts(left: &EditBag, right: &EditBag) -> Vec<Conflict> {
    let mut seen = HashSet::new();
    let mut conflicts = Vec::new();
    for l in left {
        for r in right {
            if let Some(reason) = conflict_between(l, r) {
                if seen.insert((l, r)) {
                    conflicts.push(Conflict {
                        left: l.clone(),
                        right: r.clone(),
                        reason,
                    });
                }
            }
        }
    }
    conflicts
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MergePolicy {
    #[default]
    CustomizeWins,
    ExecuteWins,
    RejectConflicts,
}

impl MergePolicy {
    pub fn as_str(self) -> &'static str {
        match self {
            MergePolicy::CustomizeWins => "customize_wins",
            MergePolicy::ExecuteWins => "execute_wins",
            MergePolicy::RejectConflicts => "reject_conflicts",
        }
    }
}

impl std::str::FromStr for MergePolicy {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.replace('-', "_").as_str() {
            "customize_wins" => Ok(MergePolicy::CustomizeWins),
            "execute_wins" => Ok(MergePolicy::ExecuteWins),
            "reject_conflicts" => Ok(MergePolicy::RejectConflicts),
            other => Err(format!("unknown merge policy `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct MergeOutcome {
    pub merged: EditBag,
    /// Edits left out because they lost a conflict.
    pub discarded: Vec<Edit>,
    pub conflicts: Vec<Conflict>,
}

/// Merges a customization bag and an executability bag without an LLM.
///
/// Output order is the customize bag followed by the execute bag, with
/// duplicates and conflict losers removed.
pub fn merge_deterministic(
    customize: &EditBag,
    execute: &EditBag,
    policy: MergePolicy,
) -> MergeOutcome {
    let conflicts = detect_conflicts(customize, execute);
    let mut losers: HashSet<&Edit> = HashSet::new();
    for c in &conflicts {
        match policy {
            MergePolicy::CustomizeWins => {
                losers.insert(&c.right);
            }
            MergePolicy::ExecuteWins => {
                losers.insert(&c.left);
            }
            MergePolicy::RejectConflicts => {
                losers.insert(&c.left);
                losers.insert(&c.right);
            }
        }
    }

    let mut outcome = MergeOutcome {
        conflicts: conflicts.clone(),
        ..MergeOutcome::default()
    };
    let mut emitted: HashSet<&Edit> = HashSet::new();
    for edit in customize.iter().chain(execute.iter()) {
        if losers.contains(edit) {
            if !outcome.discarded.contains(edit) {
                outcome.discarded.push(edit.clone());
            }
            continue;
        }
        if emitted.insert(edit) {
            outcome.merged.push(edit.clone());
        }
    }
    outcome
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Step {
    Keep,
    Substitute(usize),
    Delete,
    Insert(usize),
}

/// Smallest bag (insert/replace/delete each counting one) that turns `from`
/// into `to`, anchored on `from`. Steps match by exact text.
///
/// This is a longest-common-subsequence alignment in which an unmatched
/// source step and an unmatched target step may pair up as one replace.
pub fn diff(from: &Procedure, to: &Procedure) -> EditBag {
    let a = from.steps();
    let b = to.steps();
    let (n, m) = (a.len(), b.len());

    // cost[i][j]: edits needed to turn a[i..] into b[j..].
    let mut cost = vec![vec![0usize; m + 1]; n + 1];
    for i in (0..=n).rev() {
        for j in (0..=m).rev() {
            cost[i][j] = if i == n {
                m - j
            } else if j == m {
                n - i
            } else if a[i] == b[j] {
                cost[i + 1][j + 1]
            } else {
                1 + cost[i + 1][j + 1].min(cost[i + 1][j]).min(cost[i][j + 1])
            };
        }
    }

    let mut script = Vec::with_capacity(n.max(m));
    let (mut i, mut j) = (0, 0);
    while i < n || j < m {
        if i < n && j < m && a[i] == b[j] && cost[i][j] == cost[i + 1][j + 1] {
            script.push(Step::Keep);
            i += 1;
            j += 1;
        } else if i < n && j < m && cost[i][j] == 1 + cost[i + 1][j + 1] {
            script.push(Step::Substitute(j));
            i += 1;
            j += 1;
        } else if i < n && cost[i][j] == 1 + cost[i + 1][j] {
            script.push(Step::Delete);
            i += 1;
        } else {
            script.push(Step::Insert(j));
            j += 1;
        }
    }

    let mut bag = EditBag::default();
    let mut consumed = 0;
    for step in script {
        match step {
            Step::Keep => consumed += 1,
            Step::Substitute(j) => {
                consumed += 1;
                bag.push(Edit::replace(consumed, b[j].clone()));
            }
            Step::Delete => {
                consumed += 1;
                bag.push(Edit::delete(consumed));
            }
            Step::Insert(j) => bag.push(Edit::insert(consumed, b[j].clone())),
        }
    }
    bag
}
