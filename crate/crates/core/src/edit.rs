//! The two-operation edit language agents speak.
//!
//! ```text
//! insert(2, Add a layer of mulch.)   new step after step 2 (0 = prepend)
//! replace(3, Use neem oil.)          new text for step 3
//! replace(4, )                       delete step 4
//! ```
//!
//! The body runs to the last `)` on the line, so step texts may contain
//! commas and parentheses. One edit per line.

use std::fmt;

use once_cell::sync::Lazy;
use regex::Regex;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EditKind {
    Insert,
    Replace,
}

impl EditKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EditKind::Insert => "insert",
            EditKind::Replace => "replace",
        }
    }
}

/// A single edit anchored on the original procedure's numbering.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Edit {
    pub kind: EditKind,
    /// Insert: new step goes after this step (0 = before step 1).
    /// Replace: 1-based step being rewritten.
    pub anchor: usize,
    /// Empty for a deletion.
    pub text: String,
}

impl Edit {
    pub fn insert(anchor: usize, text: impl Into<String>) -> Self {
        Self {
            kind: EditKind::Insert,
            anchor,
            text: text.into(),
        }
    }

    pub fn replace(anchor: usize, text: impl Into<String>) -> Self {
        Self {
            kind: EditKind::Replace,
            anchor,
            text: text.into(),
        }
    }

    pub fn delete(anchor: usize) -> Self {
        Self::replace(anchor, "")
    }

    pub fn is_insert(&self) -> bool {
        self.kind == EditKind::Insert
    }

    pub fn is_deletion(&self) -> bool {
        self.kind == EditKind::Replace && self.text.trim().is_empty()
    }

    /// Canonical one-line form, e.g. `insert(2, XX)` or `replace(3, )`.
    ///
    /// Texts that already look quoted get an extra pair of quotes so that
    /// parsing strips exactly the added pair.
    pub fn serialize(&self) -> String {
        let text = if looks_quoted(&self.text) {
            format!("\"{}\"", self.text)
        } else {
            self.text.clone()
        };
        format!("{}({}, {})", self.kind.as_str(), self.anchor, text)
    }

    /// Parses one edit line.
    pub fn parse(line: &str) -> Result<Self, EditParseError> {
        let line = line.trim();
        let open = line
            .find('(')
            .ok_or(EditParseError::Malformed("missing opening parenthesis"))?;
        let kind = match line[..open].trim().to_ascii_lowercase().as_str() {
            "insert" => EditKind::Insert,
            "replace" => EditKind::Replace,
            "" => return Err(EditParseError::Malformed("missing operation")),
            _ => return Err(EditParseError::Malformed("unknown operation")),
        };
        let close = line
            .rfind(')')
            .filter(|&c| c > open)
            .ok_or(EditParseError::Malformed("missing closing parenthesis"))?;
        if !line[close + 1..].trim().is_empty() {
            return Err(EditParseError::Malformed("text after closing parenthesis"));
        }
        let inner = &line[open + 1..close];
        let comma = inner
            .find(',')
            .ok_or(EditParseError::Malformed("missing comma after anchor"))?;
        let anchor = inner[..comma]
            .trim()
            .parse::<usize>()
            .map_err(|_| EditParseError::Malformed("anchor not an integer"))?;
        let mut text = inner[comma + 1..].trim();
        if looks_quoted(text) {
            text = text[1..text.len() - 1].trim();
        }
        if kind == EditKind::Insert && text.is_empty() {
            return Err(EditParseError::Malformed("insert text is empty"));
        }
        Ok(Self {
            kind,
            anchor,
            text: text.to_string(),
        })
    }
}

fn looks_quoted(text: &str) -> bool {
    let bytes = text.as_bytes();
    bytes.len() >= 2 && matches!(bytes[0], b'"' | b'\'') && bytes[bytes.len() - 1] == bytes[0]
}

impl fmt::Display for Edit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.serialize())
    }
}

impl Serialize for Edit {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&Edit::serialize(self))
    }
}

impl<'de> Deserialize<'de> for Edit {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        Edit::parse(&s).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EditParseError {
    #[error("{0}")]
    Malformed(&'static str),
}

/// Edits in emission order.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EditBag {
    edits: Vec<Edit>,
}

impl EditBag {
    pub fn new(edits: Vec<Edit>) -> Self {
        Self { edits }
    }

    pub fn edits(&self) -> &[Edit] {
        &self.edits
    }

    pub fn len(&self) -> usize {
        self.edits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edits.is_empty()
    }

    pub fn push(&mut self, edit: Edit) {
        self.edits.push(edit);
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Edit> {
        self.edits.iter()
    }

    pub fn insert_count(&self) -> usize {
        self.edits.iter().filter(|e| e.is_insert()).count()
    }

    pub fn deletion_count(&self) -> usize {
        self.edits.iter().filter(|e| e.is_deletion()).count()
    }

    /// One canonical edit per line, no trailing newline.
    pub fn to_text(&self) -> String {
        self.edits
            .iter()
            .map(Edit::serialize)
            .collect::<Vec<_>>()
            .join("\n")
    }
}

impl FromIterator<Edit> for EditBag {
    fn from_iter<T: IntoIterator<Item = Edit>>(iter: T) -> Self {
        Self::new(iter.into_iter().collect())
    }
}

impl IntoIterator for EditBag {
    type Item = Edit;
    type IntoIter = std::vec::IntoIter<Edit>;
    fn into_iter(self) -> Self::IntoIter {
        self.edits.into_iter()
    }
}

impl<'a> IntoIterator for &'a EditBag {
    type Item = &'a Edit;
    type IntoIter = std::slice::Iter<'a, Edit>;
    fn into_iter(self) -> Self::IntoIter {
        self.edits.iter()
    }
}

/// A line of agent output that did not parse as an edit.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParseDiagnostic {
    pub line_number: usize,
    pub raw_line: String,
    pub reason: String,
}

static LIST_MARKER: Lazy<Regex> = Lazy::new(|| Regex::new(r"^\s*(?:[-*•]\s+|\d+[.)]\s+)").unwrap());

/// Parses every non-blank line; failures become diagnostics.
pub fn parse_edit_bag(text: &str) -> (EditBag, Vec<ParseDiagnostic>) {
    let mut bag = EditBag::default();
    let mut diagnostics = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        if raw.trim().is_empty() {
            continue;
        }
        let candidate = LIST_MARKER.replace(raw, "");
        match Edit::parse(&candidate) {
            Ok(edit) => bag.push(edit),
            Err(err) => diagnostics.push(ParseDiagnostic {
                line_number: i + 1,
                raw_line: raw.to_string(),
                reason: err.to_string(),
            }),
        }
    }
    (bag, diagnostics)
}
