//! Prompt templates with `{{placeholder}}` slots.

use std::fmt;
use std::path::Path;

use once_cell::sync::Lazy;
use regex::Regex;
use thiserror::Error;

use crate::edit::EditBag;
use crate::procedure::{Goal, Procedure};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Placeholder {
    Goal,
    Procedure,
    Hint,
    EditsCustomize,
    EditsExecute,
}

impl Placeholder {
    pub fn name(self) -> &'static str {
        match self {
            Placeholder::Goal => "goal",
            Placeholder::Procedure => "procedure",
            Placeholder::Hint => "hint",
            Placeholder::EditsCustomize => "edits_customize",
            Placeholder::EditsExecute => "edits_execute",
        }
    }

    fn from_name(name: &str) -> Option<Self> {
        Some(match name {
            "goal" => Placeholder::Goal,
            "procedure" => Placeholder::Procedure,
            "hint" => Placeholder::Hint,
            "edits_customize" => Placeholder::EditsCustomize,
            "edits_execute" => Placeholder::EditsExecute,
            _ => return None,
        })
    }
}

impl fmt::Display for Placeholder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Error)]
pub enum TemplateError {
    #[error("template `{template}` references unknown placeholder `{{{{{name}}}}}`")]
    UnknownPlaceholder { template: String, name: String },
    #[error("template `{template}` needs `{placeholder}` but no value was given")]
    UnboundPlaceholder {
        template: String,
        placeholder: Placeholder,
    },
    #[error("reading template {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

static SLOT: Lazy<Regex> = Lazy::new(|| Regex::new(r"\{\{\s*([A-Za-z0-9_]+)\s*\}\}").unwrap());

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    name: String,
    body: String,
}

impl PromptTemplate {
    /// Fails if the body names a placeholder outside the known five.
    pub fn new(name: impl Into<String>, body: impl Into<String>) -> Result<Self, TemplateError> {
        let name = name.into();
        let body = body.into();
        for caps in SLOT.captures_iter(&body) {
            if Placeholder::from_name(&caps[1]).is_none() {
                return Err(TemplateError::UnknownPlaceholder {
                    template: name,
                    name: caps[1].to_string(),
                });
            }
        }
        Ok(Self { name, body })
    }

    pub fn load(name: impl Into<String>, path: impl AsRef<Path>) -> Result<Self, TemplateError> {
        let path = path.as_ref();
        let body = std::fs::read_to_string(path).map_err(|source| TemplateError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::new(name, body)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn body(&self) -> &str {
        &self.body
    }

    pub fn placeholders(&self) -> Vec<Placeholder> {
        let mut found: Vec<_> = SLOT
            .captures_iter(&self.body)
            .filter_map(|c| Placeholder::from_name(&c[1]))
            .collect();
        found.sort();
        found.dedup();
        found
    }

    /// Substitutes every placeholder in one pass; substituted values are
    /// never rescanned.
    pub fn render(&self, inputs: &PromptInputs<'_>) -> Result<String, TemplateError> {
        let mut values = Vec::new();
        for placeholder in self.placeholders() {
            match inputs.value(placeholder) {
                Some(v) => values.push((placeholder, v)),
                None => {
                    return Err(TemplateError::UnboundPlaceholder {
                        template: self.name.clone(),
                        placeholder,
                    })
                }
            }
        }
        Ok(SLOT
            .replace_all(&self.body, |caps: &regex::Captures<'_>| {
                let placeholder = Placeholder::from_name(&caps[1]).expect("checked in new");
                values
                    .iter()
                    .find(|(p, _)| *p == placeholder)
                    .map(|(_, v)| v.clone())
                    .expect("bound above")
            })
            .into_owned())
    }
}

/// Values available to a template. Absent fields leave their placeholder
/// unbound.
#[derive(Debug, Clone, Copy, Default)]
pub struct PromptInputs<'a> {
    pub goal: Option<&'a Goal>,
    pub procedure: Option<&'a Procedure>,
    pub hint: Option<&'a str>,
    pub edits_customize: Option<&'a EditBag>,
    pub edits_execute: Option<&'a EditBag>,
}

impl<'a> PromptInputs<'a> {
    pub fn new(goal: &'a Goal, procedure: &'a Procedure) -> Self {
        Self {
            goal: Some(goal),
            procedure: Some(procedure),
            ..Self::default()
        }
    }

    pub fn with_hint(mut self, hint: &'a str) -> Self {
        self.hint = Some(hint);
        self
    }

    pub fn with_edits(mut self, customize: &'a EditBag, execute: &'a EditBag) -> Self {
        self.edits_customize = Some(customize);
        self.edits_execute = Some(execute);
        self
    }

    fn value(&self, placeholder: Placeholder) -> Option<String> {
        match placeholder {
            Placeholder::Goal => self.goal.map(|g| g.as_str().to_string()),
            Placeholder::Procedure => self.procedure.map(Procedure::to_numbered_text),
            Placeholder::Hint => self.hint.map(str::to_string),
            Placeholder::EditsCustomize => self.edits_customize.map(render_bag),
            Placeholder::EditsExecute => self.edits_execute.map(render_bag),
        }
    }
}

fn render_bag(bag: &EditBag) -> String {
    if bag.is_empty() {
        "(no edits)".to_string()
    } else {
        bag.to_text()
    }
}

/// Template names, also used as file stems in a template directory.
pub const MODIFY: &str = "modify";
pub const VERIFY: &str = "verify";
pub const VERIFY_WITH_HINT: &str = "verify_with_hint";
pub const UNIFIED: &str = "unified";
pub const RESOLVE: &str = "resolve";
pub const E2E: &str = "e2e";

/// The full set of templates used by the agents.
#[derive(Debug, Clone)]
pub struct TemplateSet {
    pub modify: PromptTemplate,
    pub verify: PromptTemplate,
    pub verify_with_hint: PromptTemplate,
    pub unified: PromptTemplate,
    pub resolve: PromptTemplate,
    pub e2e: PromptTemplate,
}

impl TemplateSet {
    /// The templates shipped in `templates/`.
    pub fn builtin() -> Self {
        let t = |name, body: &str| PromptTemplate::new(name, body).expect("builtin template");
        Self {
            modify: t(MODIFY, include_str!("../templates/modify.txt")),
            verify: t(VERIFY, include_str!("../templates/verify.txt")),
            verify_with_hint: t(
                VERIFY_WITH_HINT,
                include_str!("../templates/verify_with_hint.txt"),
            ),
            unified: t(UNIFIED, include_str!("../templates/unified.txt")),
            resolve: t(RESOLVE, include_str!("../templates/resolve.txt")),
            e2e: t(E2E, include_str!("../templates/e2e.txt")),
        }
    }

    /// Loads `<name>.txt` files from `dir`, falling back to the builtin
    /// template for any file that is absent.
    pub fn from_dir(dir: impl AsRef<Path>) -> Result<Self, TemplateError> {
        let dir = dir.as_ref();
        let mut set = Self::builtin();
        for (name, slot) in [
            (MODIFY, &mut set.modify),
            (VERIFY, &mut set.verify),
            (VERIFY_WITH_HINT, &mut set.verify_with_hint),
            (UNIFIED, &mut set.unified),
            (RESOLVE, &mut set.resolve),
            (E2E, &mut set.e2e),
        ] {
            let path = dir.join(format!("{name}.txt"));
            if path.exists() {
                *slot = PromptTemplate::load(name, &path)?;
            }
        }
        Ok(set)
    }
}

impl Default for TemplateSet {
    fn default() -> Self {
        Self::builtin()
    }
}
