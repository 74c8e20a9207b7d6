//! LLM agent roles.
//!
//! Each role renders its template, asks a [`LanguageModel`] for a
//! completion and parses the answer: edit bags for Modify, Verify, Unified
//! and the resolver; a numbered procedure for E2E. Agents never apply
//! edits themselves.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::edit::{parse_edit_bag, EditBag, ParseDiagnostic};
use crate::engine::{self, MergeOutcome, MergePolicy, Rejection};
use crate::gateway::{CompletionRequest, Gateway, GatewayError, GenerationSettings};
use crate::procedure::{Goal, ParseMode, Procedure};
use crate::template::{PromptInputs, PromptTemplate, TemplateError, TemplateSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Modify,
    Verify,
    Unified,
    Resolver,
    E2e,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::Modify => "modify",
            Role::Verify => "verify",
            Role::Unified => "unified",
            Role::Resolver => "resolver",
            Role::E2e => "e2e",
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Role {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "modify" => Ok(Role::Modify),
            "verify" => Ok(Role::Verify),
            "unified" => Ok(Role::Unified),
            "resolver" => Ok(Role::Resolver),
            "e2e" => Ok(Role::E2e),
            other => Err(format!("unknown role `{other}`")),
        }
    }
}

/// One completion request as seen by a model backend.
#[derive(Debug, Clone, Copy)]
pub struct AgentCall<'a> {
    pub role: Role,
    pub record_id: &'a str,
    pub prompt: &'a str,
}

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("no scripted output for role `{role}` on record `{record_id}`")]
    MissingFixture { role: Role, record_id: String },
}

pub trait LanguageModel: Send + Sync {
    fn complete(&self, call: &AgentCall<'_>) -> Result<String, ModelError>;
}

/// Sends prompts through a [`Gateway`] with fixed settings.
pub struct GatewayModel {
    gateway: Arc<Gateway>,
    settings: GenerationSettings,
}

impl GatewayModel {
    pub fn new(gateway: Arc<Gateway>, settings: GenerationSettings) -> Self {
        Self { gateway, settings }
    }
}

impl LanguageModel for GatewayModel {
    fn complete(&self, call: &AgentCall<'_>) -> Result<String, ModelError> {
        let request = CompletionRequest::new(self.settings.clone(), call.prompt)?;
        Ok(self.gateway.complete(&request)?)
    }
}

#[derive(Debug, Deserialize, Serialize)]
struct FixtureLine {
    role: Role,
    record_id: String,
    output: String,
}

#[derive(Debug, Error)]
pub enum FixtureError {
    #[error("reading {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Malformed {
        path: String,
        line: usize,
        message: String,
    },
}

/// Canned outputs keyed by (role, record id). Prompts are ignored.
#[derive(Debug, Default)]
pub struct ScriptedModel {
    outputs: HashMap<(Role, String), String>,
    calls: AtomicUsize,
}

impl ScriptedModel {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(
        mut self,
        role: Role,
        record_id: impl Into<String>,
        output: impl Into<String>,
    ) -> Self {
        self.outputs.insert((role, record_id.into()), output.into());
        self
    }

    /// Reads a JSON lines file of `{"role", "record_id", "output"}` objects.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, FixtureError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| FixtureError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let mut model = Self::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let entry: FixtureLine =
                serde_json::from_str(line).map_err(|e| FixtureError::Malformed {
                    path: path.display().to_string(),
                    line: i + 1,
                    message: e.to_string(),
                })?;
            model
                .outputs
                .insert((entry.role, entry.record_id), entry.output);
        }
        Ok(model)
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl LanguageModel for ScriptedModel {
    fn complete(&self, call: &AgentCall<'_>) -> Result<String, ModelError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.outputs
            .get(&(call.role, call.record_id.to_string()))
            .cloned()
            .ok_or_else(|| ModelError::MissingFixture {
                role: call.role,
                record_id: call.record_id.to_string(),
            })
    }
}

/// What one agent call produced. Exactly one of `parsed_edits` (edit
/// roles) and `parsed_procedure` (E2E) carries the payload.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AgentOutput {
    pub role: Role,
    pub prompt: String,
    pub raw: String,
    pub parsed_edits: EditBag,
    pub parsed_procedure: Option<Procedure>,
    pub diagnostics: Vec<ParseDiagnostic>,
}

#[derive(Debug, Error)]
pub enum AgentError {
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("output contains no numbered steps")]
    NoStepsFound,
}

/// A failed agent call, with whatever was produced before the failure.
#[derive(Debug)]
pub struct AgentFailure {
    pub role: Role,
    pub prompt: Option<String>,
    pub raw: Option<String>,
    pub error: AgentError,
}

impl fmt::Display for AgentFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} agent: {}", self.role, self.error)
    }
}

impl std::error::Error for AgentFailure {}

pub type AgentResult = Result<AgentOutput, AgentFailure>;

/// Identifies the record being customized.
#[derive(Debug, Clone, Copy)]
pub struct AgentContext<'a> {
    pub record_id: &'a str,
    pub goal: &'a Goal,
    pub hint: &'a str,
}

/// Result of the edit-resolution step. `merged` always validates against
/// the procedure it was resolved for.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Resolution {
    /// Absent when the model call failed and the deterministic merge ran.
    pub output: Option<AgentOutput>,
    pub merged: EditBag,
    /// Edits the model proposed that could not be applied.
    pub rejected: Vec<Rejection>,
    pub fallback: Option<Fallback>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Fallback {
    pub reason: String,
    pub policy: MergePolicy,
    pub outcome: MergeOutcome,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct AgentOptions {
    /// Show the hint to the Verify agent.
    pub verify_sees_hint: bool,
    /// Policy for the deterministic merge used when the resolver fails.
    pub merge_policy: MergePolicy,
}

/// All agent roles sharing one model backend.
#[derive(Clone)]
pub struct Agents {
    model: Arc<dyn LanguageModel>,
    templates: TemplateSet,
    options: AgentOptions,
}

impl Agents {
    pub fn new(
        model: Arc<dyn LanguageModel>,
        templates: TemplateSet,
        options: AgentOptions,
    ) -> Self {
        Self {
            model,
            templates,
            options,
        }
    }

    pub fn options(&self) -> AgentOptions {
        self.options
    }

    fn ask(
        &self,
        role: Role,
        ctx: &AgentContext<'_>,
        template: &PromptTemplate,
        inputs: PromptInputs<'_>,
    ) -> Result<(String, String), AgentFailure> {
        let prompt = template.render(&inputs).map_err(|e| AgentFailure {
            role,
            prompt: None,
            raw: None,
            error: e.into(),
        })?;
        let call = AgentCall {
            role,
            record_id: ctx.record_id,
            prompt: &prompt,
        };
        match self.model.complete(&call) {
            Ok(raw) => Ok((prompt, raw)),
            Err(e) => Err(AgentFailure {
                role,
                prompt: Some(prompt),
                raw: None,
                error: e.into(),
            }),
        }
    }

    fn edit_agent(
        &self,
        role: Role,
        ctx: &AgentContext<'_>,
        template: &PromptTemplate,
        inputs: PromptInputs<'_>,
    ) -> AgentResult {
        let (prompt, raw) = self.ask(role, ctx, template, inputs)?;
        let (parsed_edits, diagnostics) = parse_edit_bag(&raw);
        Ok(AgentOutput {
            role,
            prompt,
            raw,
            parsed_edits,
            parsed_procedure: None,
            diagnostics,
        })
    }

    /// Edits that adapt `procedure` to the hint.
    pub fn modify(&self, ctx: &AgentContext<'_>, procedure: &Procedure) -> AgentResult {
        let inputs = PromptInputs::new(ctx.goal, procedure).with_hint(ctx.hint);
        self.edit_agent(Role::Modify, ctx, &self.templates.modify, inputs)
    }

    /// Edits that make `procedure` executable.
    pub fn verify(&self, ctx: &AgentContext<'_>, procedure: &Procedure) -> AgentResult {
        let inputs = PromptInputs::new(ctx.goal, procedure);
        if self.options.verify_sees_hint {
            let inputs = inputs.with_hint(ctx.hint);
            self.edit_agent(Role::Verify, ctx, &self.templates.verify_with_hint, inputs)
        } else {
            self.edit_agent(Role::Verify, ctx, &self.templates.verify, inputs)
        }
    }

    /// Edits that both customize and keep `procedure` executable.
    pub fn unified(&self, ctx: &AgentContext<'_>, procedure: &Procedure) -> AgentResult {
        let inputs = PromptInputs::new(ctx.goal, procedure).with_hint(ctx.hint);
        self.edit_agent(Role::Unified, ctx, &self.templates.unified, inputs)
    }

    /// A whole new procedure, written directly by the model.
    pub fn e2e(&self, ctx: &AgentContext<'_>, procedure: &Procedure) -> AgentResult {
        let inputs = PromptInputs::new(ctx.goal, procedure).with_hint(ctx.hint);
        let (prompt, raw) = self.ask(Role::E2e, ctx, &self.templates.e2e, inputs)?;
        match Procedure::parse_numbered_text(&raw, ParseMode::Lenient) {
            Ok(parsed) => Ok(AgentOutput {
                role: Role::E2e,
                prompt,
                raw,
                parsed_edits: EditBag::default(),
                parsed_procedure: Some(parsed),
                diagnostics: Vec::new(),
            }),
            Err(_) => Err(AgentFailure {
                role: Role::E2e,
                prompt: Some(prompt),
                raw: Some(raw),
                error: AgentError::NoStepsFound,
            }),
        }
    }

    /// Merges a customization bag and an executability bag for
    /// `procedure`. The model's answer is filtered down to edits that
    /// apply; if the model cannot be reached the bags are merged
    /// deterministically under the configured policy.
    pub fn resolve(
        &self,
        ctx: &AgentContext<'_>,
        procedure: &Procedure,
        customize: &EditBag,
        execute: &EditBag,
    ) -> Resolution {
        let inputs = PromptInputs::new(ctx.goal, procedure)
            .with_hint(ctx.hint)
            .with_edits(customize, execute);
        match self.edit_agent(Role::Resolver, ctx, &self.templates.resolve, inputs) {
            Ok(output) => {
                let report = engine::validate(&output.parsed_edits, procedure);
                Resolution {
                    merged: report.applicable,
                    rejected: report.rejected,
                    output: Some(output),
                    fallback: None,
                }
            }
            Err(failure) => {
                let policy = self.options.merge_policy;
                let outcome = engine::merge_deterministic(customize, execute, policy);
                let report = engine::validate(&outcome.merged, procedure);
                Resolution {
                    output: None,
                    merged: report.applicable,
                    rejected: report.rejected,
                    fallback: Some(Fallback {
                        reason: failure.to_string(),
                        policy,
                        outcome,
                    }),
                }
            }
        }
    }
}
