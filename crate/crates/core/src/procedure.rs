//! Goals, procedures, customization hints and dataset records.
//!
//! A [`Procedure`] is an ordered list of step texts. Steps are 1-indexed
//! whenever they are shown to a user or an agent, and 0-indexed internally.

use std::fmt;
use std::str::FromStr;

use once_cell::sync::Lazy;
use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProcedureError {
    /// 1-based index of the offending entry.
    #[error("step {0} is empty")]
    EmptyStep(usize),
    #[error("step {0} spans more than one line")]
    MultilineStep(usize),
    #[error("goal text is empty")]
    EmptyGoal,
    #[error("hint text is empty")]
    EmptyHint,
    #[error("no numbered steps found")]
    NoStepsFound,
    /// 1-based line number.
    #[error("line {0} is not a numbered step")]
    MalformedLine(usize),
    #[error("line {line}: expected step number {expected}, found {found}")]
    UnexpectedNumber {
        line: usize,
        expected: usize,
        found: usize,
    },
}

/// Natural-language statement of what a procedure achieves.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Goal(String);

impl Goal {
    pub fn new(text: impl AsRef<str>) -> Result<Self, ProcedureError> {
        let text = text.as_ref().trim();
        if text.is_empty() {
            return Err(ProcedureError::EmptyGoal);
        }
        Ok(Self(text.to_string()))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for Goal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl TryFrom<String> for Goal {
    type Error = ProcedureError;
    fn try_from(value: String) -> Result<Self, Self::Error> {
        Self::new(value)
    }
}

impl From<Goal> for String {
    fn from(goal: Goal) -> Self {
        goal.0
    }
}

/// How strictly numbered text is parsed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ParseMode {
    /// Skip unnumbered lines and accept any numbering.
    #[default]
    Lenient,
    /// Every non-blank line must be a step numbered 1, 2, 3, ...
    Strict,
}

static NUMBERED_LINE: Lazy<Regex> =
    Lazy::new(|| Regex::new(r"^\s*(\d+)(?:\.|\)|:)\s+(\S.*)$").unwrap());

/// An ordered list of trimmed, non-empty, single-line steps.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct Procedure {
    steps: Vec<String>,
}

impl Procedure {
    /// Builds a procedure from step texts, trimming each one.
    pub fn new<I, S>(steps: I) -> Result<Self, ProcedureError>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let steps = steps
            .into_iter()
            .enumerate()
            .map(|(i, s)| {
                let s = s.as_ref().trim();
                if s.is_empty() {
                    Err(ProcedureError::EmptyStep(i + 1))
                } else if s.contains(['\n', '\r']) {
                    Err(ProcedureError::MultilineStep(i + 1))
                } else {
                    Ok(s.to_string())
                }
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self { steps })
    }

    /// Wraps steps already known to satisfy the invariants.
    pub(crate) fn from_trusted(steps: Vec<String>) -> Self {
        debug_assert!(steps
            .iter()
            .all(|s| !s.is_empty() && s.trim() == s && !s.contains(['\n', '\r'])));
        Self { steps }
    }

    pub fn steps(&self) -> &[String] {
        &self.steps
    }

    /// Step text by 1-based index.
    pub fn step(&self, index: usize) -> Option<&str> {
        index
            .checked_sub(1)
            .and_then(|i| self.steps.get(i))
            .map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Renders `1. first\n2. second` with no trailing newline.
    pub fn to_numbered_text(&self) -> String {
        self.steps
            .iter()
            .enumerate()
            .map(|(i, s)| format!("{}. {}", i + 1, s))
            .collect::<Vec<_>>()
            .join("\n")
    }

    /// Parses numbered plain text (`1. a`, `2) b`, `3: c`).
    ///
    /// Input numbers are discarded; steps are renumbered in order of
    /// appearance.
    pub fn parse_numbered_text(text: &str, mode: ParseMode) -> Result<Self, ProcedureError> {
        let mut steps = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            match NUMBERED_LINE.captures(line) {
                Some(caps) => {
                    if mode == ParseMode::Strict {
                        let expected = steps.len() + 1;
                        let found = caps[1].parse::<usize>().unwrap_or(0);
                        if found != expected {
                            return Err(ProcedureError::UnexpectedNumber {
                                line: i + 1,
                                expected,
                                found,
                            });
                        }
                    }
                    steps.push(caps[2].trim().to_string());
                }
                None if mode == ParseMode::Strict => {
                    return Err(ProcedureError::MalformedLine(i + 1))
                }
                None => {}
            }
        }
        if steps.is_empty() {
            return Err(ProcedureError::NoStepsFound);
        }
        Ok(Self { steps })
    }
}

impl TryFrom<Vec<String>> for Procedure {
    type Error = ProcedureError;
    fn try_from(value: Vec<String>) -> Result<Self, Self::Error> {
        Self::new(value)
    }
}

impl From<Procedure> for Vec<String> {
    fn from(p: Procedure) -> Self {
        p.steps
    }
}

impl fmt::Display for Procedure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_numbered_text())
    }
}

macro_rules! metadata_enum {
    ($(#[$meta:meta])* $name:ident { $($variant:ident => $text:literal),+ $(,)? }) => {
        $(#[$meta])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
        #[serde(rename_all = "snake_case")]
        pub enum $name {
            $($variant),+
        }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

            pub fn as_str(self) -> &'static str {
                match self {
                    $($name::$variant => $text),+
                }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl FromStr for $name {
            type Err = String;
            fn from_str(s: &str) -> Result<Self, Self::Err> {
                match s {
                    $($text => Ok($name::$variant),)+
                    other => Err(format!(
                        "unknown {} `{}`", stringify!($name), other
                    )),
                }
            }
        }
    };
}

metadata_enum!(
    /// Kind of constraint a hint places on the procedure.
    ConstraintSubtype {
        Prerequisite => "prerequisite",
        Preference => "preference",
        Refinement => "refinement",
        None => "none",
    }
);

metadata_enum!(
    /// Expertise needed to carry out the customized procedure.
    Expertise {
        Beginner => "beginner",
        Intermediate => "intermediate",
        Expert => "expert",
        Unspecified => "unspecified",
    }
);

metadata_enum!(
    /// Which aspect of the hint is critical to get right.
    CriticalType {
        Constraint => "constraint",
        Expertise => "expertise",
        Both => "both",
        Unspecified => "unspecified",
    }
);

metadata_enum!(
    /// Where a dataset record came from.
    Source {
        Real => "real",
        Simulated => "simulated",
        Other => "other",
    }
);

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CustomizationHint {
    text: String,
    pub constraint_subtype: ConstraintSubtype,
    pub expertise: Expertise,
    pub critical_type: CriticalType,
}

impl CustomizationHint {
    pub fn new(
        text: impl AsRef<str>,
        constraint_subtype: ConstraintSubtype,
        expertise: Expertise,
        critical_type: CriticalType,
    ) -> Result<Self, ProcedureError> {
        let text = text.as_ref().trim();
        if text.is_empty() {
            return Err(ProcedureError::EmptyHint);
        }
        Ok(Self {
            text: text.to_string(),
            constraint_subtype,
            expertise,
            critical_type,
        })
    }

    /// A hint with no metadata, as typed on the command line.
    pub fn plain(text: impl AsRef<str>) -> Result<Self, ProcedureError> {
        Self::new(
            text,
            ConstraintSubtype::None,
            Expertise::Unspecified,
            CriticalType::Unspecified,
        )
    }

    pub fn text(&self) -> &str {
        &self.text
    }
}

/// One goal/procedure/hint triple.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CustomizationRecord {
    pub id: String,
    pub goal: Goal,
    pub procedure: Procedure,
    pub hint: CustomizationHint,
    pub source: Source,
}
