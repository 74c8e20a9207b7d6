//! Customizing how-to procedures with edit-producing LLM agents.
//!
//! Agents emit `insert(k, text)` / `replace(k, text)` edits against a
//! numbered procedure; the [`engine`] applies them deterministically. The
//! [`topology`] module wires agents into pipelines and [`eval`] aggregates
//! human judgments of the results.

pub mod agent;
pub mod dataset;
pub mod edit;
pub mod engine;
pub mod eval;
pub mod gateway;
pub mod procedure;
pub mod template;
pub mod topology;

pub use edit::{parse_edit_bag, Edit, EditBag, EditKind, ParseDiagnostic};
pub use engine::{apply, detect_conflicts, diff, merge_deterministic, validate, MergePolicy};
pub use procedure::{CustomizationHint, CustomizationRecord, Goal, ParseMode, Procedure};
pub use topology::{run_batch, run_pipeline, PipelineTrace, Topology};
