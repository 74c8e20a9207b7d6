//! The `planedit` command line.
//!
//! [`run`] takes its environment, output streams and HTTP transport from a
//! [`Context`] so tests can drive it in-process.

use std::collections::HashMap;
use std::ffi::OsString;
use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};

use planedit_core::agent::{AgentOptions, Agents, GatewayModel, LanguageModel, ScriptedModel};
use planedit_core::dataset::{self, LoadMode};
use planedit_core::engine;
use planedit_core::eval::{self, Dimension, Grouping, TieRule};
use planedit_core::gateway::{
    Gateway, GatewayConfig, GenerationSettings, HttpTransport, Transport,
};
use planedit_core::procedure::Source;
use planedit_core::template::TemplateSet;
use planedit_core::topology::FailureKind;
use planedit_core::{
    parse_edit_bag, run_batch, run_pipeline, CustomizationHint, CustomizationRecord, Goal,
    MergePolicy, ParseMode, PipelineTrace, Procedure, Topology,
};

pub mod config;

use config::{CliConfig, FileConfig, FlagConfig, Mode, ENV_PREFIX};

/// A failure mapped to a process exit code.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Input(String),
    Endpoint(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Input(_) => EXIT_INPUT,
            CliError::Endpoint(_) => EXIT_ENDPOINT,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Input(m) | CliError::Endpoint(m) => f.write_str(m),
        }
    }
}

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_ENDPOINT: i32 = 3;

/// Process-level inputs and outputs for one invocation.
pub struct Context<'a> {
    pub env: HashMap<String, String>,
    /// Used for live and record modes. `None` means a real HTTP client.
    pub transport: Option<Arc<dyn Transport>>,
    pub stdout: &'a mut dyn Write,
    pub stderr: &'a mut dyn Write,
}

#[derive(Debug, Parser)]
#[command(
    name = "planedit",
    version,
    about = "Customize how-to procedures with edit-producing agents"
)]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Debug, Args)]
struct GlobalArgs {
    /// TOML config file (also PLANEDIT_CONFIG).
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// live, record, replay or mock.
    #[arg(long, global = true)]
    mode: Option<Mode>,
    /// Base URL of an OpenAI-compatible API.
    #[arg(long, global = true, value_name = "URL")]
    endpoint: Option<String>,
    /// Environment variable holding the API key.
    #[arg(long, global = true, value_name = "VAR")]
    api_key_env: Option<String>,
    #[arg(long, global = true)]
    model: Option<String>,
    /// Directory of prompt template overrides.
    #[arg(long, global = true, value_name = "DIR")]
    templates: Option<PathBuf>,
    /// Response cache for record and replay modes.
    #[arg(long, global = true, value_name = "FILE")]
    cache: Option<PathBuf>,
    /// Scripted outputs for mock mode.
    #[arg(long, global = true, value_name = "FILE")]
    mock_fixtures: Option<PathBuf>,
    #[arg(long, global = true)]
    parallelism: Option<usize>,
    /// Cap on concurrent HTTP requests.
    #[arg(long, global = true)]
    max_in_flight: Option<usize>,
    /// customize_wins, execute_wins or reject_conflicts.
    #[arg(long, global = true)]
    merge_policy: Option<MergePolicy>,
    #[arg(long, global = true, num_args = 0..=1, default_missing_value = "true", value_name = "BOOL")]
    verify_sees_hint: Option<bool>,
    /// Print the resolved configuration.
    #[arg(long, global = true)]
    show_config: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Customize one procedure and print the result.
    Customize(CustomizeArgs),
    /// Run a topology over a dataset and write one trace per record.
    Batch(BatchArgs),
    /// Apply an edit file to a procedure file.
    ApplyEdits(ApplyEditsArgs),
    /// Print edits in canonical form, with diagnostics for bad lines.
    ParseEdits(ParseEditsArgs),
    /// Print a minimal edit bag turning one procedure into another.
    Diff(DiffArgs),
    /// Summarize a dataset.
    Stats(StatsArgs),
    /// Aggregate human judgments into metric tables.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
struct CustomizeArgs {
    #[arg(long)]
    goal: String,
    /// Numbered procedure file.
    #[arg(long, value_name = "FILE")]
    procedure: PathBuf,
    #[arg(long)]
    hint: String,
    #[arg(long)]
    topology: Option<Topology>,
    #[arg(long, default_value = "cli")]
    record_id: String,
    /// Write the pipeline trace here as one JSON line.
    #[arg(long, value_name = "FILE")]
    trace_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct BatchArgs {
    #[arg(long, value_name = "FILE")]
    dataset: PathBuf,
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
    #[arg(long)]
    topology: Option<Topology>,
}

#[derive(Debug, Args)]
struct ApplyEditsArgs {
    procedure: PathBuf,
    edits: PathBuf,
    /// Fail instead of skipping edits that cannot be applied.
    #[arg(long)]
    strict: bool,
}

#[derive(Debug, Args)]
struct ParseEditsArgs {
    /// Edit text; `-` reads standard input.
    #[arg(default_value = "-")]
    input: PathBuf,
}

#[derive(Debug, Args)]
struct DiffArgs {
    from: PathBuf,
    to: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Format {
    Text,
    Json,
}

#[derive(Debug, Args)]
struct StatsArgs {
    dataset: PathBuf,
    #[arg(long, value_enum, default_value = "text")]
    format: Format,
    /// Fail on the first malformed line.
    #[arg(long)]
    strict: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Tie {
    Refuse,
    Negative,
    Positive,
}

impl From<Tie> for TieRule {
    fn from(t: Tie) -> Self {
        match t {
            Tie::Refuse => TieRule::Refuse,
            Tie::Negative => TieRule::Negative,
            Tie::Positive => TieRule::Positive,
        }
    }
}

#[derive(Debug, Args)]
struct ReportArgs {
    judgments: PathBuf,
    /// Dataset supplying hint metadata for --group-by.
    #[arg(long, value_name = "FILE")]
    dataset: Option<PathBuf>,
    /// constraint_subtype, expertise or critical_type.
    #[arg(long, requires = "dataset")]
    group_by: Option<Dimension>,
    #[arg(long, value_enum, default_value = "text")]
    format: Format,
    /// How to settle an evenly split panel.
    #[arg(long, value_enum, default_value = "refuse")]
    tie: Tie,
    /// Also print error-category shares per method.
    #[arg(long)]
    errors: bool,
}

/// Parses `args` (including the program name) and runs the command.
/// Returns the process exit code.
pub fn run<I, T>(args: I, ctx: &mut Context<'_>) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if e.use_stderr() {
                ctx.stderr.write_all(text.as_bytes())
            } else {
                ctx.stdout.write_all(text.as_bytes())
            };
            return code;
        }
    };
    match dispatch(cli, ctx) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(ctx.stderr, "error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(cli: Cli, ctx: &mut Context<'_>) -> Result<i32, CliError> {
    let topology = match &cli.command {
        Some(Command::Customize(a)) => a.topology,
        Some(Command::Batch(a)) => a.topology,
        _ => None,
    };
    let config = CliConfig::resolve(
        FlagConfig {
            topology,
            ..flags_of(&cli.global)
        },
        &ctx.env,
        file_of(&cli.global, ctx)?,
    )?;
    let Some(command) = cli.command else {
        if cli.global.show_config {
            out(ctx, &config.render(&ctx.env))?;
            return Ok(EXIT_OK);
        }
        return Err(CliError::Usage(
            "no command given; see `planedit --help`".into(),
        ));
    };
    if cli.global.show_config {
        let text = config.render(&ctx.env);
        ctx.stderr.write_all(text.as_bytes()).map_err(io_err)?;
    }
    match command {
        Command::Customize(args) => customize(args, &config, ctx),
        Command::Batch(args) => batch(args, &config, ctx),
        Command::ApplyEdits(args) => apply_edits(args, ctx),
        Command::ParseEdits(args) => parse_edits(args, ctx),
        Command::Diff(args) => diff(args, ctx),
        Command::Stats(args) => stats(args, ctx),
        Command::Report(args) => report(args, ctx),
    }
}

fn flags_of(global: &GlobalArgs) -> FlagConfig {
    FlagConfig {
        mode: global.mode,
        endpoint: global.endpoint.clone(),
        api_key_env: global.api_key_env.clone(),
        model: global.model.clone(),
        topology: None,
        templates: global.templates.clone(),
        cache: global.cache.clone(),
        mock_fixtures: global.mock_fixtures.clone(),
        parallelism: global.parallelism,
        max_in_flight: global.max_in_flight,
        merge_policy: global.merge_policy,
        verify_sees_hint: global.verify_sees_hint,
    }
}

fn file_of(global: &GlobalArgs, ctx: &Context<'_>) -> Result<FileConfig, CliError> {
    match global.config.clone().or_else(|| {
        ctx.env
            .get(&format!("{ENV_PREFIX}CONFIG"))
            .map(PathBuf::from)
    }) {
        Some(p) => FileConfig::load(&p),
        None => Ok(FileConfig::default()),
    }
}

fn io_err(e: std::io::Error) -> CliError {
    CliError::Input(format!("writing output: {e}"))
}

fn out(ctx: &mut Context<'_>, text: &str) -> Result<(), CliError> {
    ctx.stdout.write_all(text.as_bytes()).map_err(io_err)
}

fn read_file(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path)
        .map_err(|e| CliError::Input(format!("reading {}: {e}", path.display())))
}

fn read_input(path: &Path) -> Result<String, CliError> {
    if path.as_os_str() == "-" {
        let mut text = String::new();
        std::io::Read::read_to_string(&mut std::io::stdin(), &mut text)
            .map_err(|e| CliError::Input(format!("reading standard input: {e}")))?;
        Ok(text)
    } else {
        read_file(path)
    }
}

fn read_procedure(path: &Path) -> Result<Procedure, CliError> {
    Procedure::parse_numbered_text(&read_file(path)?, ParseMode::Strict)
        .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

fn write_file(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text)
        .map_err(|e| CliError::Input(format!("writing {}: {e}", path.display())))
}

fn build_agents(config: &CliConfig, ctx: &Context<'_>) -> Result<Agents, CliError> {
    let templates = match &config.templates {
        Some(dir) => TemplateSet::from_dir(dir).map_err(|e| CliError::Input(e.to_string()))?,
        None => TemplateSet::builtin(),
    };
    let model: Arc<dyn LanguageModel> = match config.mode {
        Mode::Mock => {
            let path = config.mock_fixtures.as_deref().ok_or_else(|| {
                CliError::Input(format!(
                    "mock mode needs --mock-fixtures, {ENV_PREFIX}MOCK_FIXTURES or `mock_fixtures` in the config file"
                ))
            })?;
            Arc::new(ScriptedModel::load(path).map_err(|e| CliError::Input(e.to_string()))?)
        }
        Mode::Replay => {
            let settings = GenerationSettings::new(config.require_model()?);
            let gateway = Gateway::replay_mode(config.require_cache()?)
                .map_err(|e| CliError::Input(e.to_string()))?;
            Arc::new(GatewayModel::new(Arc::new(gateway), settings))
        }
        Mode::Live | Mode::Record => {
            let settings = GenerationSettings::new(config.require_model()?);
            let api_key = ctx
                .env
                .get(&config.api_key_env)
                .filter(|k| !k.is_empty())
                .ok_or_else(|| {
                    CliError::Input(format!(
                        "{} mode needs an API key in ${}",
                        config.mode, config.api_key_env
                    ))
                })?
                .clone();
            let gateway_config = GatewayConfig {
                base_url: config.endpoint.clone(),
                api_key: Some(api_key),
                max_in_flight: config.max_in_flight,
                ..GatewayConfig::default()
            };
            let transport: Arc<dyn Transport> = match &ctx.transport {
                Some(t) => t.clone(),
                None => {
                    Arc::new(HttpTransport::new().map_err(|e| CliError::Endpoint(e.to_string()))?)
                }
            };
            let gateway = if config.mode == Mode::Record {
                Gateway::recording(gateway_config, transport, config.require_cache()?)
                    .map_err(|e| CliError::Input(e.to_string()))?
            } else {
                Gateway::live(gateway_config, transport)
            };
            Arc::new(GatewayModel::new(Arc::new(gateway), settings))
        }
    };
    Ok(Agents::new(
        model,
        templates,
        AgentOptions {
            verify_sees_hint: config.verify_sees_hint,
            merge_policy: config.merge_policy,
        },
    ))
}

fn failure_exit_code(kind: FailureKind) -> i32 {
    match kind {
        FailureKind::InvalidRecord | FailureKind::MissingFixture | FailureKind::Template => {
            EXIT_INPUT
        }
        FailureKind::Endpoint | FailureKind::NoStepsFound => EXIT_ENDPOINT,
    }
}

fn customize(
    args: CustomizeArgs,
    config: &CliConfig,
    ctx: &mut Context<'_>,
) -> Result<i32, CliError> {
    let invalid = |e: planedit_core::procedure::ProcedureError| CliError::Input(e.to_string());
    let record = CustomizationRecord {
        id: args.record_id,
        goal: Goal::new(args.goal).map_err(invalid)?,
        procedure: read_procedure(&args.procedure)?,
        hint: CustomizationHint::plain(&args.hint).map_err(invalid)?,
        source: Source::Other,
    };
    let agents = build_agents(config, ctx)?;
    let trace = run_pipeline(config.topology, &record, &agents);
    if let Some(path) = &args.trace_out {
        write_file(path, &format!("{}\n", trace.to_json_line()))?;
    }
    report_dropped(&trace, ctx)?;
    match (&trace.failure, &trace.final_procedure) {
        (Some(failure), _) => {
            writeln!(
                ctx.stderr,
                "error: record `{}`: {}",
                trace.record_id, failure.message
            )
            .map_err(io_err)?;
            Ok(failure_exit_code(failure.kind))
        }
        (None, Some(p)) => {
            out(ctx, &format!("{}\n", p.to_numbered_text()))?;
            Ok(EXIT_OK)
        }
        (None, None) => Err(CliError::Endpoint("pipeline produced no procedure".into())),
    }
}

fn report_dropped(trace: &PipelineTrace, ctx: &mut Context<'_>) -> Result<(), CliError> {
    for d in &trace.dropped_edits {
        writeln!(
            ctx.stderr,
            "warning: {}: {}: dropped `{}`: {}",
            trace.record_id,
            d.stage,
            d.edit.serialize(),
            d.reason
        )
        .map_err(io_err)?;
    }
    Ok(())
}

fn batch(args: BatchArgs, config: &CliConfig, ctx: &mut Context<'_>) -> Result<i32, CliError> {
    let (items, diagnostics) =
        dataset::load_batch_items(&args.dataset).map_err(|e| CliError::Input(e.to_string()))?;
    for d in &diagnostics {
        writeln!(ctx.stderr, "warning: {}: {d}", args.dataset.display()).map_err(io_err)?;
    }
    let agents = build_agents(config, ctx)?;
    let traces = run_batch(config.topology, &items, &agents, config.parallelism);
    let mut text = String::new();
    for t in &traces {
        text.push_str(&t.to_json_line());
        text.push('\n');
    }
    write_file(&args.out, &text)?;
    let mut code = EXIT_OK;
    for t in &traces {
        report_dropped(t, ctx)?;
        if let Some(f) = &t.failure {
            writeln!(ctx.stderr, "error: record `{}`: {}", t.record_id, f.message)
                .map_err(io_err)?;
            code = code.max(failure_exit_code(f.kind));
        }
    }
    let failed = traces.iter().filter(|t| t.is_failure()).count();
    writeln!(
        ctx.stderr,
        "{} records, {} customized, {} failed ({} topology)",
        traces.len(),
        traces.len() - failed,
        failed,
        config.topology
    )
    .map_err(io_err)?;
    Ok(code)
}

fn apply_edits(args: ApplyEditsArgs, ctx: &mut Context<'_>) -> Result<i32, CliError> {
    let procedure = read_procedure(&args.procedure)?;
    let (bag, diagnostics) = parse_edit_bag(&read_file(&args.edits)?);
    if let Some(d) = diagnostics.first() {
        return Err(CliError::Input(format!(
            "{}:{}: {}: {}",
            args.edits.display(),
            d.line_number,
            d.reason,
            d.raw_line
        )));
    }
    let (result, rejected) = engine::apply_reporting(&bag, &procedure);
    for r in &rejected {
        writeln!(
            ctx.stderr,
            "warning: skipped `{}`: {}",
            r.edit.serialize(),
            r.reason
        )
        .map_err(io_err)?;
    }
    if args.strict && !rejected.is_empty() {
        return Err(CliError::Input(format!(
            "{} edit(s) cannot be applied",
            rejected.len()
        )));
    }
    out(ctx, &format!("{}\n", result.to_numbered_text()))?;
    Ok(EXIT_OK)
}

fn parse_edits(args: ParseEditsArgs, ctx: &mut Context<'_>) -> Result<i32, CliError> {
    let (bag, diagnostics) = parse_edit_bag(&read_input(&args.input)?);
    for edit in bag.iter() {
        out(ctx, &format!("{}\n", edit.serialize()))?;
    }
    for d in &diagnostics {
        writeln!(
            ctx.stderr,
            "line {}: {}: {}",
            d.line_number, d.reason, d.raw_line
        )
        .map_err(io_err)?;
    }
    Ok(EXIT_OK)
}

fn diff(args: DiffArgs, ctx: &mut Context<'_>) -> Result<i32, CliError> {
    let from = read_procedure(&args.from)?;
    let to = read_procedure(&args.to)?;
    let bag = engine::diff(&from, &to);
    if !bag.is_empty() {
        out(ctx, &format!("{}\n", bag.to_text()))?;
    }
    Ok(EXIT_OK)
}

fn stats(args: StatsArgs, ctx: &mut Context<'_>) -> Result<i32, CliError> {
    let mode = if args.strict {
        LoadMode::Strict
    } else {
        LoadMode::Lenient
    };
    let loaded =
        dataset::load_records(&args.dataset, mode).map_err(|e| CliError::Input(e.to_string()))?;
    for d in &loaded.diagnostics {
        writeln!(ctx.stderr, "warning: {}: {d}", args.dataset.display()).map_err(io_err)?;
    }
    let stats = dataset::dataset_stats(&loaded.records);
    match args.format {
        Format::Text => out(ctx, &stats.to_string())?,
        Format::Json => out(
            ctx,
            &format!(
                "{}\n",
                serde_json::to_string(&stats).expect("stats serialize")
            ),
        )?,
    }
    Ok(EXIT_OK)
}

fn report(args: ReportArgs, ctx: &mut Context<'_>) -> Result<i32, CliError> {
    let judgments =
        eval::load_judgments(&args.judgments).map_err(|e| CliError::Input(e.to_string()))?;
    let hints: HashMap<String, CustomizationHint> = match &args.dataset {
        Some(path) => {
            let loaded = dataset::load_records(path, LoadMode::Lenient)
                .map_err(|e| CliError::Input(e.to_string()))?;
            for d in &loaded.diagnostics {
                writeln!(ctx.stderr, "warning: {}: {d}", path.display()).map_err(io_err)?;
            }
            loaded.records.into_iter().map(|r| (r.id, r.hint)).collect()
        }
        None => HashMap::new(),
    };
    let grouping = args.group_by.map(|dimension| Grouping {
        dimension,
        hints: &hints,
    });
    let metrics = eval::aggregate(&judgments, grouping.as_ref(), args.tie.into());
    let errors: Vec<_> = if args.errors {
        eval::methods(&judgments)
            .iter()
            .map(|m| eval::error_distribution(&judgments, m))
            .collect()
    } else {
        Vec::new()
    };
    match args.format {
        Format::Text => {
            out(ctx, &metrics.to_string())?;
            for e in &errors {
                out(ctx, &format!("\n{e}"))?;
            }
        }
        Format::Json => {
            let value = serde_json::json!({ "metrics": metrics, "errors": errors });
            out(ctx, &format!("{value}\n"))?;
        }
    }
    Ok(EXIT_OK)
}
