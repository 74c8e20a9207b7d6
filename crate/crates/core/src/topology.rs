//! Pipelines that wire agents together, and the traces they leave.
//!
//! | topology             | flow                                                   |
//! |----------------------|--------------------------------------------------------|
//! | `e2e`                | model rewrites the procedure directly                  |
//! | `unified`            | one agent edits for both hint and executability        |
//! | `sequential`         | Modify on P, apply, Verify on the result, apply        |
//! | `reverse_sequential` | Verify on P, apply, Modify on the result, apply        |
//! | `parallel`           | Modify and Verify both on P, resolver merges, apply    |
//!
//! Trace stage labels are fixed: `input`, `<agent>.output`, `<agent>.edits`,
//! `<agent>.applied`, `e2e.procedure`, `resolve.merged` and
//! `resolve.fallback`, where `<agent>` is one of `modify`, `verify`,
//! `unified`, `resolve`, `e2e`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::{
    AgentContext, AgentError, AgentFailure, AgentOutput, AgentResult, Agents, ModelError, Role,
};
use crate::edit::{Edit, EditBag, ParseDiagnostic};
use crate::engine::{self, Rejection};
use crate::procedure::{CustomizationRecord, Procedure};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Topology {
    E2e,
    Unified,
    Sequential,
    ReverseSequential,
    Parallel,
}

impl Topology {
    pub const ALL: [Topology; 5] = [
        Topology::E2e,
        Topology::Unified,
        Topology::Sequential,
        Topology::ReverseSequential,
        Topology::Parallel,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Topology::E2e => "e2e",
            Topology::Unified => "unified",
            Topology::Sequential => "sequential",
            Topology::ReverseSequential => "reverse_sequential",
            Topology::Parallel => "parallel",
        }
    }

    /// Agent roles the topology calls.
    pub fn roles(self) -> &'static [Role] {
        match self {
            Topology::E2e => &[Role::E2e],
            Topology::Unified => &[Role::Unified],
            Topology::Sequential | Topology::ReverseSequential => &[Role::Modify, Role::Verify],
            Topology::Parallel => &[Role::Modify, Role::Verify, Role::Resolver],
        }
    }
}

impl fmt::Display for Topology {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Topology {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let normalized = s.trim().to_ascii_lowercase().replace('-', "_");
        Topology::ALL
            .into_iter()
            .find(|t| t.as_str() == normalized)
            .ok_or_else(|| format!("unknown topology `{s}`"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StagePayload {
    Procedure {
        steps: Procedure,
    },
    Edits {
        edits: EditBag,
    },
    Agent {
        role: Role,
        prompt: Option<String>,
        raw: Option<String>,
        diagnostics: Vec<ParseDiagnostic>,
    },
    Note {
        message: String,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Stage {
    pub label: String,
    #[serde(flatten)]
    pub payload: StagePayload,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DroppedEdit {
    pub stage: String,
    pub edit: Edit,
    pub reason: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureKind {
    InvalidRecord,
    MissingFixture,
    Endpoint,
    NoStepsFound,
    Template,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceFailure {
    pub kind: FailureKind,
    pub message: String,
}

impl From<&AgentFailure> for TraceFailure {
    fn from(failure: &AgentFailure) -> Self {
        let kind = match &failure.error {
            AgentError::Template(_) => FailureKind::Template,
            AgentError::Model(ModelError::MissingFixture { .. }) => FailureKind::MissingFixture,
            AgentError::Model(ModelError::Gateway(_)) => FailureKind::Endpoint,
            AgentError::NoStepsFound => FailureKind::NoStepsFound,
        };
        Self {
            kind,
            message: failure.to_string(),
        }
    }
}

/// Complete record of one pipeline run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PipelineTrace {
    pub record_id: String,
    pub topology: Topology,
    pub stages: Vec<Stage>,
    #[serde(rename = "final")]
    pub final_procedure: Option<Procedure>,
    pub dropped_edits: Vec<DroppedEdit>,
    pub failure: Option<TraceFailure>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ReplayError {
    #[error("trace does not start with an `input` procedure stage")]
    MissingInput,
    #[error("stage `{label}` does not match re-applying the preceding edits")]
    StageMismatch { label: String },
    #[error("final procedure does not match the last procedure stage")]
    FinalMismatch,
    #[error("trace has neither a final procedure nor a failure")]
    Incomplete,
}

impl PipelineTrace {
    fn new(record_id: &str, topology: Topology) -> Self {
        Self {
            record_id: record_id.to_string(),
            topology,
            stages: Vec::new(),
            final_procedure: None,
            dropped_edits: Vec::new(),
            failure: None,
        }
    }

    pub fn is_failure(&self) -> bool {
        self.failure.is_some()
    }

    pub fn stage(&self, label: &str) -> Option<&Stage> {
        self.stages.iter().find(|s| s.label == label)
    }

    pub fn stage_labels(&self) -> Vec<&str> {
        self.stages.iter().map(|s| s.label.as_str()).collect()
    }

    /// One JSON object, no trailing newline.
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("trace serializes")
    }

    /// Re-applies every recorded bag to its predecessor procedure and checks
    /// that the recorded successor (and finally the recorded final
    /// procedure) comes out. Procedure stages not preceded by a bag, such
    /// as an E2E rewrite, are taken as given.
    pub fn check_replay(&self) -> Result<(), ReplayError> {
        if self.failure.is_some() {
            return Ok(());
        }
        let mut stages = self.stages.iter();
        let mut current = match stages.next() {
            Some(Stage {
                label,
                payload: StagePayload::Procedure { steps },
            }) if label == "input" => steps.clone(),
            _ => return Err(ReplayError::MissingInput),
        };
        let mut pending: Option<&EditBag> = None;
        for stage in stages {
            match &stage.payload {
                StagePayload::Edits { edits } => pending = Some(edits),
                StagePayload::Procedure { steps } => {
                    if let Some(bag) = pending.take() {
                        let report = engine::validate(bag, &current);
                        if !report.is_clean() || engine::apply(bag, &current) != *steps {
                            return Err(ReplayError::StageMismatch {
                                label: stage.label.clone(),
                            });
                        }
                    }
                    current = steps.clone();
                }
                StagePayload::Agent { .. } | StagePayload::Note { .. } => {}
            }
        }
        match &self.final_procedure {
            Some(p) if *p == current => Ok(()),
            Some(_) => Err(ReplayError::FinalMismatch),
            None => Err(ReplayError::Incomplete),
        }
    }
}

struct Recorder {
    trace: PipelineTrace,
}

impl Recorder {
    fn push(&mut self, label: String, payload: StagePayload) {
        self.trace.stages.push(Stage { label, payload });
    }

    fn procedure(&mut self, label: impl Into<String>, p: &Procedure) {
        self.push(label.into(), StagePayload::Procedure { steps: p.clone() });
    }

    fn agent(&mut self, prefix: &str, result: AgentResult) -> Result<AgentOutput, ()> {
        match result {
            Ok(out) => {
                self.push(
                    format!("{prefix}.output"),
                    StagePayload::Agent {
                        role: out.role,
                        prompt: Some(out.prompt.clone()),
                        raw: Some(out.raw.clone()),
                        diagnostics: out.diagnostics.clone(),
                    },
                );
                Ok(out)
            }
            Err(failure) => {
                self.push(
                    format!("{prefix}.output"),
                    StagePayload::Agent {
                        role: failure.role,
                        prompt: failure.prompt.clone(),
                        raw: failure.raw.clone(),
                        diagnostics: Vec::new(),
                    },
                );
                self.trace.failure = Some(TraceFailure::from(&failure));
                Err(())
            }
        }
    }

    fn drop_rejected(&mut self, prefix: &str, rejected: Vec<Rejection>) {
        self.trace
            .dropped_edits
            .extend(rejected.into_iter().map(|r| DroppedEdit {
                stage: prefix.to_string(),
                edit: r.edit,
                reason: r.reason.to_string(),
            }));
    }

    /// Records the applicable part of `bag` against `base`.
    fn validated(&mut self, prefix: &str, bag: &EditBag, base: &Procedure) -> EditBag {
        let report = engine::validate(bag, base);
        self.push(
            format!("{prefix}.edits"),
            StagePayload::Edits {
                edits: report.applicable.clone(),
            },
        );
        self.drop_rejected(prefix, report.rejected);
        report.applicable
    }

    fn applied(&mut self, label: String, bag: &EditBag, base: &Procedure) -> Procedure {
        let next = engine::apply(bag, base);
        self.procedure(label, &next);
        next
    }

    /// Agent output → validated bag → applied procedure.
    fn edit_step(
        &mut self,
        prefix: &str,
        result: AgentResult,
        base: &Procedure,
    ) -> Result<Procedure, ()> {
        let out = self.agent(prefix, result)?;
        let bag = self.validated(prefix, &out.parsed_edits, base);
        Ok(self.applied(format!("{prefix}.applied"), &bag, base))
    }

    fn finish(mut self, outcome: Result<Procedure, ()>) -> PipelineTrace {
        if let Ok(p) = outcome {
            self.trace.final_procedure = Some(p);
        }
        self.trace
    }
}

/// Runs one record through `topology`. Agent failures end up in the
/// trace's `failure` field; this never panics on bad model output.
pub fn run_pipeline(
    topology: Topology,
    record: &CustomizationRecord,
    agents: &Agents,
) -> PipelineTrace {
    let ctx = AgentContext {
        record_id: &record.id,
        goal: &record.goal,
        hint: record.hint.text(),
    };
    let p = &record.procedure;
    let mut rec = Recorder {
        trace: PipelineTrace::new(&record.id, topology),
    };
    rec.procedure("input", p);

    let outcome = match topology {
        Topology::E2e => rec.agent("e2e", agents.e2e(&ctx, p)).map(|out| {
            let rewritten = out
                .parsed_procedure
                .expect("e2e output carries a procedure");
            rec.procedure("e2e.procedure", &rewritten);
            rewritten
        }),
        Topology::Unified => rec.edit_step("unified", agents.unified(&ctx, p), p),
        Topology::Sequential => {
            rec.edit_step("modify", agents.modify(&ctx, p), p)
                .and_then(|customized| {
                    rec.edit_step("verify", agents.verify(&ctx, &customized), &customized)
                })
        }
        Topology::ReverseSequential => {
            rec.edit_step("verify", agents.verify(&ctx, p), p)
                .and_then(|executable| {
                    rec.edit_step("modify", agents.modify(&ctx, &executable), &executable)
                })
        }
        Topology::Parallel => run_parallel(&mut rec, &ctx, p, agents),
    };
    rec.finish(outcome)
}

fn run_parallel(
    rec: &mut Recorder,
    ctx: &AgentContext<'_>,
    p: &Procedure,
    agents: &Agents,
) -> Result<Procedure, ()> {
    let customize = rec.agent("modify", agents.modify(ctx, p))?;
    let customize = rec.validated("modify", &customize.parsed_edits, p);
    let execute = rec.agent("verify", agents.verify(ctx, p))?;
    let execute = rec.validated("verify", &execute.parsed_edits, p);

    let resolution = agents.resolve(ctx, p, &customize, &execute);
    match (resolution.output, resolution.fallback) {
        (Some(out), _) => {
            rec.agent("resolve", Ok(out))?;
        }
        (None, Some(fallback)) => {
            rec.push(
                "resolve.fallback".to_string(),
                StagePayload::Note {
                    message: format!(
                        "resolver unavailable ({}); merged deterministically with {}",
                        fallback.reason,
                        fallback.policy.as_str()
                    ),
                },
            );
            let reason = format!("lost conflict under {}", fallback.policy.as_str());
            rec.trace
                .dropped_edits
                .extend(
                    fallback
                        .outcome
                        .discarded
                        .into_iter()
                        .map(|edit| DroppedEdit {
                            stage: "resolve".to_string(),
                            edit,
                            reason: reason.clone(),
                        }),
                );
        }
        (None, None) => unreachable!("resolution has either an output or a fallback"),
    }
    rec.drop_rejected("resolve", resolution.rejected);
    rec.push(
        "resolve.merged".to_string(),
        StagePayload::Edits {
            edits: resolution.merged.clone(),
        },
    );
    Ok(rec.applied("resolve.applied".to_string(), &resolution.merged, p))
}

/// One unit of batch work: a valid record, or a line that failed to load.
#[derive(Debug, Clone)]
pub enum BatchItem {
    Record(CustomizationRecord),
    Invalid { record_id: String, reason: String },
}

/// Runs every item on a pool of `parallelism` threads. Output order
/// matches input order.
pub fn run_batch(
    topology: Topology,
    items: &[BatchItem],
    agents: &Agents,
    parallelism: usize,
) -> Vec<PipelineTrace> {
    use rayon::prelude::*;

    let run = |item: &BatchItem| match item {
        BatchItem::Record(record) => run_pipeline(topology, record, agents),
        BatchItem::Invalid { record_id, reason } => {
            let mut trace = PipelineTrace::new(record_id, topology);
            trace.failure = Some(TraceFailure {
                kind: FailureKind::InvalidRecord,
                message: reason.clone(),
            });
            trace
        }
    };
    match rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism.max(1))
        .build()
    {
        Ok(pool) => pool.install(|| items.par_iter().map(run).collect()),
        Err(err) => {
            log::warn!("could not start worker pool ({err}); running sequentially");
            items.iter().map(run).collect()
        }
    }
}
