//! Acceptance run: one PASS/FAIL line per criterion, non-zero exit if any
//! criterion fails.
//!
//! Set `PLANEDIT_BLESS=1` to rewrite the golden trace files instead of
//! comparing against them.

#[path = "../../core/tests/support/engine_suite.rs"]
mod engine_suite;
#[path = "../../core/tests/support/stub_responder.rs"]
mod stub_responder;

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::Arc;
use std::time::{Duration, Instant};

use planedit_core::agent::{AgentOptions, Agents, Role, ScriptedModel};
use planedit_core::dataset::{load_records, DatasetError, LoadMode};
use planedit_core::engine::{detect_conflicts, ConflictReason};
use planedit_core::gateway::testing::StubServer;
use planedit_core::gateway::{CompletionRequest, GenerationSettings, RefusingTransport, Transport};
use planedit_core::template::TemplateSet;
use planedit_core::topology::{Stage, StagePayload};
use planedit_core::{
    parse_edit_bag, run_pipeline, MergePolicy, PipelineTrace, Procedure, Topology,
};

type Outcome = Result<String, String>;

fn core_data(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../core/data")
        .join(name)
}

fn golden(topology: Topology) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/golden")
        .join(format!("{}.jsonl", topology.as_str()))
}

struct Captured {
    code: i32,
    stdout: String,
    stderr: String,
}

fn run_cli(args: &[&str], env: &[(&str, &str)], transport: Option<Arc<dyn Transport>>) -> Captured {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let code = {
        let mut ctx = planedit::Context {
            env: env
                .iter()
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .collect(),
            transport,
            stdout: &mut out,
            stderr: &mut err,
        };
        planedit::run(
            std::iter::once("planedit").chain(args.iter().copied()),
            &mut ctx,
        )
    };
    Captured {
        code,
        stdout: String::from_utf8(out).unwrap(),
        stderr: String::from_utf8(err).unwrap(),
    }
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

// ---------------------------------------------------------------- 1

/// Majority counts per method: customized, executable, fully correct.
const TABLE: [(&str, usize, usize, usize); 4] = [
    ("Sequential", 125, 149, 107),
    ("Unified", 113, 147, 97),
    ("Parallel", 111, 146, 94),
    ("Reverse-Sequential", 87, 131, 71),
];

const EXPECTED_ROWS: [(&str, &str, &str, &str); 4] = [
    ("Sequential", "60.68%", "72.33%", "51.94%"),
    ("Unified", "54.85%", "71.36%", "47.09%"),
    ("Parallel", "53.88%", "70.87%", "45.63%"),
    ("Reverse-Sequential", "42.23%", "63.59%", "34.47%"),
];

const CATEGORIES: [&str; 5] = [
    "missing_steps",
    "extra_steps",
    "underspecified_steps",
    "incorrect_steps",
    "wrong_order",
];

/// Three annotator verdicts whose majority is `positive`, varied by `i`.
fn panel(positive: bool, i: usize) -> [bool; 3] {
    let patterns = [
        [true, true, true],
        [true, true, false],
        [true, false, true],
        [false, true, true],
    ];
    let p = patterns[i % 4];
    if positive {
        p
    } else {
        [!p[0], !p[1], !p[2]]
    }
}

fn judgment_line(
    method: &str,
    record: &str,
    annotator: usize,
    criterion: &str,
    verdict: bool,
    category: &str,
) -> String {
    let categories: Vec<&str> = if verdict { vec![] } else { vec![category] };
    serde_json::json!({
        "method": method,
        "record_id": record,
        "annotator_id": format!("a{annotator}"),
        "criterion": criterion,
        "verdict": verdict,
        "error_categories": categories,
    })
    .to_string()
}

/// n items per method laid out as: both criteria met, customized only,
/// executable only, neither.
fn table_fixture(n: usize) -> String {
    let mut lines = Vec::new();
    for (method, c, e, fc) in TABLE {
        assert!(fc <= c.min(e) && c + e - fc <= n);
        for i in 0..n {
            let customized = i < c;
            let executable = i < fc || (c..c + e - fc).contains(&i);
            let record = format!("item-{i:03}");
            for (criterion, positive) in [("customized", customized), ("executable", executable)] {
                for (a, v) in panel(positive, i).into_iter().enumerate() {
                    lines.push(judgment_line(
                        method,
                        &record,
                        a,
                        criterion,
                        v,
                        CATEGORIES[(i + a) % 5],
                    ));
                }
            }
        }
    }
    lines.join("\n") + "\n"
}

fn criterion_1(dir: &Path) -> Outcome {
    let path = dir.join("table.jsonl");
    std::fs::write(&path, table_fixture(206)).unwrap();
    let start = Instant::now();
    let output = Command::new(env!("CARGO_BIN_EXE_planedit"))
        .arg("report")
        .arg(&path)
        .output()
        .map_err(|e| format!("cannot run planedit: {e}"))?;
    let elapsed = start.elapsed();
    ensure(output.status.success(), || {
        format!("exit {:?}", output.status.code())
    })?;
    let stdout = String::from_utf8_lossy(&output.stdout);
    for (method, c, e, fc) in EXPECTED_ROWS {
        let row: Vec<&str> = stdout
            .lines()
            .find(|l| l.split_whitespace().next() == Some(method))
            .ok_or_else(|| format!("no row for {method}"))?
            .split_whitespace()
            .collect();
        ensure(row == [method, "206", c, e, fc], || {
            format!("{method}: got {row:?}")
        })?;
    }
    // Same counts through the JSON report.
    let json = run_cli(
        &["report", path.to_str().unwrap(), "--format", "json"],
        &[],
        None,
    );
    let v: serde_json::Value = serde_json::from_str(&json.stdout).map_err(|e| e.to_string())?;
    for (row, (method, c, e, fc)) in v["metrics"]["rows"].as_array().unwrap().iter().zip(TABLE) {
        let got = (
            row["method"].as_str().unwrap(),
            row["customized_count"].as_u64().unwrap() as usize,
            row["executable_count"].as_u64().unwrap() as usize,
            row["fully_correct_count"].as_u64().unwrap() as usize,
        );
        ensure(got == (method, c, e, fc), || format!("counts {got:?}"))?;
    }
    ensure(elapsed < Duration::from_secs(1), || {
        format!("took {elapsed:?}")
    })?;
    Ok(format!(
        "4 rows exact, report took {} ms",
        elapsed.as_millis()
    ))
}

// ---------------------------------------------------------------- 2

fn criterion_2(dir: &Path) -> Outcome {
    // 40 items, each with exactly one negative judgment carrying one mark.
    let marks: Vec<&str> = std::iter::repeat_n("extra_steps", 13)
        .chain(std::iter::repeat_n("missing_steps", 11))
        .chain(std::iter::repeat_n("underspecified_steps", 8))
        .chain(std::iter::repeat_n("incorrect_steps", 5))
        .chain(std::iter::repeat_n("wrong_order", 3))
        .collect();
    assert_eq!(marks.len(), 40);
    let mut lines = Vec::new();
    for (i, mark) in marks.iter().enumerate() {
        let record = format!("e2e-{i:02}");
        let failing = if i % 2 == 0 {
            "customized"
        } else {
            "executable"
        };
        for criterion in ["customized", "executable"] {
            for a in 0..3 {
                let verdict = !(criterion == failing && a == 0);
                lines.push(judgment_line("E2E", &record, a, criterion, verdict, mark));
            }
        }
    }
    let path = dir.join("e2e_errors.jsonl");
    std::fs::write(&path, lines.join("\n")).unwrap();
    let start = Instant::now();
    let text = run_cli(&["report", path.to_str().unwrap(), "--errors"], &[], None);
    let json = run_cli(
        &[
            "report",
            path.to_str().unwrap(),
            "--errors",
            "--format",
            "json",
        ],
        &[],
        None,
    );
    let elapsed = start.elapsed();
    ensure(text.code == 0 && json.code == 0, || {
        format!("exit {} / {}", text.code, json.code)
    })?;
    let row: Vec<&str> = text
        .stdout
        .lines()
        .find(|l| l.starts_with("extra_steps"))
        .ok_or("no extra_steps row")?
        .split_whitespace()
        .collect();
    ensure(row.last() == Some(&"32.50%"), || format!("row {row:?}"))?;
    let v: serde_json::Value = serde_json::from_str(&json.stdout).map_err(|e| e.to_string())?;
    let dist = &v["errors"][0];
    ensure(dist["total_marks"] == 40, || {
        format!("total marks {}", dist["total_marks"])
    })?;
    let share = dist["categories"]
        .as_array()
        .unwrap()
        .iter()
        .find(|c| c["category"] == "extra_steps")
        .unwrap();
    ensure(share["total"] == 13 && share["percent"] == 32.5, || {
        format!("share {share}")
    })?;
    ensure(elapsed < Duration::from_secs(1), || {
        format!("took {elapsed:?}")
    })?;
    Ok("extra_steps 13/40 = 32.50%".into())
}

// ---------------------------------------------------------------- 3

fn criterion_3() -> Outcome {
    let start = Instant::now();
    for name in engine_suite::PROPERTIES {
        engine_suite::run_property(name, 1000)?;
    }
    let pairs = engine_suite::exhaustive_diff(&["a", "b", "c"], 4)?;
    ensure(pairs == 121 * 121, || format!("checked {pairs} pairs"))?;
    let elapsed = start.elapsed();
    ensure(elapsed < Duration::from_secs(60), || {
        format!("took {elapsed:?}")
    })?;
    Ok(format!(
        "{} properties x 1000 cases, {pairs} diff pairs, {:.1} s",
        engine_suite::PROPERTIES.len(),
        elapsed.as_secs_f64()
    ))
}

// ---------------------------------------------------------------- 4

/// Finals worked out by hand from the fixture outputs.
fn hand_finals() -> Vec<(Topology, &'static str, Option<Vec<&'static str>>)> {
    vec![
        (
            Topology::Sequential,
            "cook-bread",
            Some(vec![
                "Preheat the oven to 350F.",
                "Dissolve yeast in water.",
                "Mix the flour, sugar, cinnamon and yeast mixture.",
                "Fold in chopped walnuts and a handful of raisins.",
                "Knead the dough.",
                "Let the dough rise for one hour.",
                "Put dough into greased pan.",
                "Bake for 30 minutes.",
            ]),
        ),
        (
            Topology::ReverseSequential,
            "cook-bread",
            Some(vec![
                "Preheat the oven to 350F.",
                "Mix the flour, sugar, cinnamon and yeast mixture.",
                "Fold in chopped walnuts and a handful of raisins.",
                "Mix the ingredients.",
                "Knead the dough.",
                "Put dough into greased pan.",
                "Let the dough rise for one hour.",
                "Bake for 30 minutes.",
            ]),
        ),
        (
            Topology::Sequential,
            "fit-run",
            Some(vec![
                "Buy running shoes.",
                "Warm up for five minutes.",
                "Walk briskly for twenty minutes.",
                "Drink water.",
                "Cool down and stretch.",
            ]),
        ),
        (
            Topology::Unified,
            "garden-tomato",
            Some(vec![
                "Buy tomato seedlings.",
                "Fill large pots with potting mix (one per plant).",
                "Plant the seedlings.",
                "Place the pots where they get 6 hours of sun.",
                "Water deeply twice a week.",
                "Harvest when red.",
            ]),
        ),
        (
            Topology::E2e,
            "garden-tomato",
            Some(vec![
                "Buy a cherry tomato seedling.",
                "Plant it in a large pot.",
                "Place it in the sunniest part of the balcony.",
                "Water daily in summer.",
                "Harvest when red.",
            ]),
        ),
        (Topology::E2e, "fit-yoga", None),
        (
            Topology::Parallel,
            "craft-shoes",
            Some(vec![
                "Identify areas of discomfort.",
                "doodle on shoes.",
                "change out laces for ribbon.",
                "glue rhinestones on straps.",
                "wrap ribbon around straps.",
                "Add gel pads under the straps.",
            ]),
        ),
        (
            Topology::Parallel,
            "cook-tea",
            Some(vec![
                "Boil four cups of water.",
                "Steep six tea bags for five minutes.",
                "Chill in the refrigerator.",
                "Serve over ice.",
                "Garnish with lemon slices.",
            ]),
        ),
    ]
}

/// Re-derives every bag-produced procedure stage with the naive reference
/// applier instead of the engine.
fn reference_replay(trace: &PipelineTrace) -> Result<(), String> {
    let mut current: Option<Procedure> = None;
    let mut pending = None;
    for Stage { label, payload } in &trace.stages {
        match payload {
            StagePayload::Edits { edits } => pending = Some(edits),
            StagePayload::Procedure { steps } => {
                if let (Some(bag), Some(prev)) = (pending.take(), &current) {
                    let expected = engine_suite::reference_apply(bag, prev);
                    if steps.steps() != expected.as_slice() {
                        return Err(format!(
                            "{}: stage {label} differs from reference",
                            trace.record_id
                        ));
                    }
                }
                current = Some(steps.clone());
            }
            _ => {}
        }
    }
    Ok(())
}

fn mock_args<'a>(
    fixtures: &'a str,
    dataset: &'a str,
    out: &'a str,
    topology: &'a str,
) -> Vec<&'a str> {
    vec![
        "--mode",
        "mock",
        "--mock-fixtures",
        fixtures,
        "batch",
        "--dataset",
        dataset,
        "--out",
        out,
        "--topology",
        topology,
        "--parallelism",
        "4",
    ]
}

fn criterion_4(dir: &Path) -> Outcome {
    let start = Instant::now();
    let bless = std::env::var("PLANEDIT_BLESS").is_ok_and(|v| v == "1");
    let fixtures = core_data("sample_mocks.jsonl");
    let dataset = core_data("sample_dataset.jsonl");
    let refusing = Arc::new(RefusingTransport::new());
    let mut traces_checked = 0;
    let mut by_key: HashMap<(Topology, String), PipelineTrace> = HashMap::new();
    for topology in Topology::ALL {
        let out = dir.join(format!("{}.jsonl", topology.as_str()));
        let args = mock_args(
            fixtures.to_str().unwrap(),
            dataset.to_str().unwrap(),
            out.to_str().unwrap(),
            topology.as_str(),
        );
        run_cli(&args, &[], Some(refusing.clone()));
        let produced = std::fs::read_to_string(&out).map_err(|e| e.to_string())?;
        if bless {
            std::fs::write(golden(topology), &produced).unwrap();
        }
        let frozen =
            std::fs::read_to_string(golden(topology)).map_err(|e| format!("{topology}: {e}"))?;
        ensure(produced == frozen, || {
            format!("{topology}: trace bytes differ from golden")
        })?;
        let lines: Vec<&str> = frozen.lines().collect();
        ensure(lines.len() == 10, || {
            format!("{topology}: {} traces", lines.len())
        })?;
        for line in lines {
            let trace: PipelineTrace = serde_json::from_str(line).map_err(|e| e.to_string())?;
            trace
                .check_replay()
                .map_err(|e| format!("{topology}/{}: {e}", trace.record_id))?;
            reference_replay(&trace)?;
            ensure(trace.to_json_line() == line, || {
                format!("{topology}: trace does not re-serialize")
            })?;
            traces_checked += 1;
            by_key.insert((topology, trace.record_id.clone()), trace);
        }
    }
    for (topology, id, expected) in hand_finals() {
        let trace = &by_key[&(topology, id.to_string())];
        let got = trace.final_procedure.as_ref().map(|p| p.steps().to_vec());
        let want = expected.map(|v| v.iter().map(|s| s.to_string()).collect::<Vec<_>>());
        ensure(got == want, || format!("{topology}/{id}: final {got:?}"))?;
    }
    ensure(refusing.attempts() == 0, || "network was used".into())?;
    let elapsed = start.elapsed();
    ensure(elapsed < Duration::from_secs(30), || {
        format!("took {elapsed:?}")
    })?;
    Ok(format!(
        "{traces_checked} traces byte-exact and replayable, {} hand-checked finals{}",
        hand_finals().len(),
        if bless { " (goldens rewritten)" } else { "" }
    ))
}

// ---------------------------------------------------------------- 5

fn criterion_5() -> Outcome {
    let records = load_records(core_data("sample_dataset.jsonl"), LoadMode::Strict)
        .map_err(|e| e.to_string())?
        .records;
    let pancake = records.iter().find(|r| r.id == "cook-pancake").unwrap();
    let compost = records.iter().find(|r| r.id == "garden-compost").unwrap();
    let fixture_text = std::fs::read_to_string(core_data("sample_mocks.jsonl")).unwrap();
    let mut without_resolver = ScriptedModel::new();
    let mut outputs: HashMap<(String, String), String> = HashMap::new();
    for line in fixture_text.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        let (role, id, out) = (
            v["role"].as_str().unwrap(),
            v["record_id"].as_str().unwrap(),
            v["output"].as_str().unwrap(),
        );
        outputs.insert((role.to_string(), id.to_string()), out.to_string());
        if role != "resolver" {
            without_resolver = without_resolver.with(role.parse::<Role>().unwrap(), id, out);
        }
    }
    let modify_bag =
        parse_edit_bag(&outputs[&("modify".to_string(), "cook-pancake".to_string())]).0;
    let verify_bag =
        parse_edit_bag(&outputs[&("verify".to_string(), "cook-pancake".to_string())]).0;
    let conflicts = detect_conflicts(&modify_bag, &verify_bag);
    ensure(
        conflicts.len() == 1
            && conflicts[0].reason == ConflictReason::ContradictoryText
            && conflicts[0].left.anchor == 2,
        || format!("conflicts {conflicts:?}"),
    )?;
    let modify_text = &conflicts[0].left.text;
    let verify_text = &conflicts[0].right.text;

    let model: Arc<ScriptedModel> = Arc::new(without_resolver);
    let step2 = |policy| {
        let agents = Agents::new(
            model.clone(),
            TemplateSet::builtin(),
            AgentOptions {
                merge_policy: policy,
                ..AgentOptions::default()
            },
        );
        let trace = run_pipeline(Topology::Parallel, pancake, &agents);
        (
            trace.final_procedure.clone().unwrap().steps()[1].clone(),
            trace,
        )
    };
    let (kept, trace) = step2(MergePolicy::CustomizeWins);
    ensure(&kept == modify_text, || {
        format!("customize_wins kept {kept:?}")
    })?;
    ensure(trace.stage("resolve.fallback").is_some(), || {
        "no fallback note".into()
    })?;
    ensure(
        trace.dropped_edits.iter().any(|d| {
            d.edit.text == *verify_text && d.reason == "lost conflict under customize_wins"
        }),
        || format!("dropped {:?}", trace.dropped_edits),
    )?;
    let (kept, _) = step2(MergePolicy::ExecuteWins);
    ensure(&kept == verify_text, || {
        format!("execute_wins kept {kept:?}")
    })?;
    let (kept, _) = step2(MergePolicy::RejectConflicts);
    ensure(kept == pancake.procedure.steps()[1], || {
        format!("reject_conflicts kept {kept:?}")
    })?;

    // The scripted resolver output for this record plants replace(12, ...)
    // on a five-step procedure.
    let full = Agents::new(
        Arc::new(ScriptedModel::load(core_data("sample_mocks.jsonl")).map_err(|e| e.to_string())?),
        TemplateSet::builtin(),
        AgentOptions::default(),
    );
    let trace = run_pipeline(Topology::Parallel, compost, &full);
    let planted = trace
        .dropped_edits
        .iter()
        .find(|d| d.stage == "resolve" && d.edit.anchor == 12)
        .ok_or("planted edit not reported as dropped")?;
    ensure(planted.reason == "anchor out of range", || {
        planted.reason.clone()
    })?;
    let merged = match &trace
        .stage("resolve.merged")
        .ok_or("no merged stage")?
        .payload
    {
        StagePayload::Edits { edits } => edits.clone(),
        _ => return Err("merged stage is not a bag".into()),
    };
    ensure(
        merged.iter().all(|e| e.anchor <= compost.procedure.len()),
        || format!("merged {merged:?}"),
    )?;
    let fin = trace.final_procedure.as_ref().unwrap();
    ensure(
        fin.len() == 6 && !fin.steps().iter().any(|s| s.contains("Sift")),
        || format!("final {fin:?}"),
    )?;
    Ok("customize_wins/execute_wins/reject_conflicts resolved; replace(12, ...) filtered".into())
}

// ---------------------------------------------------------------- 6

fn criterion_6(dir: &Path) -> Outcome {
    let dataset = core_data("sample_dataset.jsonl");
    let stub = StubServer::start(stub_responder::responder(
        &dataset,
        &core_data("sample_mocks.jsonl"),
    ));
    let cache = dir.join("cache.jsonl");
    let base = stub.base_url();
    let common = |mode: &'static str| {
        vec![
            "--mode".to_string(),
            mode.to_string(),
            "--model".into(),
            "stub-model".into(),
            "--endpoint".into(),
            base.clone(),
            "--cache".into(),
            cache.display().to_string(),
        ]
    };
    let env = [("OPENAI_API_KEY", "test-key")];
    let mut recorded = Vec::new();
    for topology in Topology::ALL {
        let out = dir.join(format!("rec-{}.jsonl", topology.as_str()));
        let mut args = common("record");
        args.extend(
            [
                "batch",
                "--dataset",
                dataset.to_str().unwrap(),
                "--out",
                out.to_str().unwrap(),
            ]
            .map(String::from),
        );
        args.extend(["--topology".to_string(), topology.as_str().to_string()]);
        let r = run_cli(
            &args.iter().map(String::as_str).collect::<Vec<_>>(),
            &env,
            None,
        );
        ensure(r.code == 0 || topology == Topology::E2e, || {
            format!("record {topology}: exit {} {}", r.code, r.stderr)
        })?;
        recorded.push((topology, std::fs::read_to_string(&out).unwrap()));
    }
    let hits = stub.hits();
    ensure(hits > 0, || "stub saw no requests".into())?;

    let refusing = Arc::new(RefusingTransport::new());
    for round in 0..2 {
        for (topology, expected) in &recorded {
            let out = dir.join(format!("replay{round}-{}.jsonl", topology.as_str()));
            let mut args = common("replay");
            args.extend(
                [
                    "batch",
                    "--dataset",
                    dataset.to_str().unwrap(),
                    "--out",
                    out.to_str().unwrap(),
                ]
                .map(String::from),
            );
            args.extend(["--topology".to_string(), topology.as_str().to_string()]);
            // No credential in the environment: replay must not need one.
            run_cli(
                &args.iter().map(String::as_str).collect::<Vec<_>>(),
                &[],
                Some(refusing.clone()),
            );
            let got = std::fs::read_to_string(&out).unwrap();
            ensure(&got == expected, || {
                format!("replay {round} of {topology} differs")
            })?;
        }
    }
    // Single-shot customize in replay mode, twice.
    let proc_file = dir.join("bread.txt");
    std::fs::write(
        &proc_file,
        "1. Dissolve yeast in water.\n2. Mix the ingredients.\n3. Knead the dough.\n4. Put dough into greased pan.\n5. Bake for 30 minutes.\n",
    )
    .unwrap();
    let customize = |mode: &'static str,
                     trace: &Path,
                     env: &[(&str, &str)],
                     transport: Option<Arc<dyn Transport>>| {
        let mut args = common(mode);
        args.extend(
            [
                "customize",
                "--goal",
                "Bake Bread",
                "--procedure",
                proc_file.to_str().unwrap(),
                "--hint",
                "I would like to make something sweet and I also like nuts.",
                "--topology",
                "sequential",
                "--record-id",
                "cook-bread",
                "--trace-out",
                trace.to_str().unwrap(),
            ]
            .map(String::from),
        );
        run_cli(
            &args.iter().map(String::as_str).collect::<Vec<_>>(),
            env,
            transport,
        )
    };
    let live = customize("record", &dir.join("c0.jsonl"), &env, None);
    let a = customize("replay", &dir.join("c1.jsonl"), &[], Some(refusing.clone()));
    let b = customize("replay", &dir.join("c2.jsonl"), &[], Some(refusing.clone()));
    ensure(live.code == 0 && a.code == 0 && b.code == 0, || {
        format!("{} {} {}", live.stderr, a.stderr, b.stderr)
    })?;
    let read = |n: &str| std::fs::read_to_string(dir.join(n)).unwrap();
    ensure(
        read("c0.jsonl") == read("c1.jsonl") && read("c1.jsonl") == read("c2.jsonl"),
        || "customize traces differ".into(),
    )?;
    ensure(live.stdout == a.stdout && a.stdout == b.stdout, || {
        "customize output differs".into()
    })?;
    ensure(refusing.attempts() == 0, || {
        format!("replay attempted {} requests", refusing.attempts())
    })?;
    Ok(format!(
        "5 topologies recorded ({hits} requests) and replayed twice byte-identical, 0 replay requests"
    ))
}

// ---------------------------------------------------------------- 7

fn criterion_7() -> Outcome {
    let s = GenerationSettings::new("any-model");
    let got = (
        s.temperature,
        s.max_tokens,
        s.top_p,
        s.frequency_penalty,
        s.presence_penalty,
    );
    ensure(got == (0.0, 500, 1.0, 0.1, 0.0), || {
        format!("settings {got:?}")
    })?;
    let body = CompletionRequest::new(s, "hello")
        .map_err(|e| e.to_string())?
        .body();
    let wire = (
        &body["temperature"],
        &body["max_tokens"],
        &body["top_p"],
        &body["frequency_penalty"],
        &body["presence_penalty"],
    );
    ensure(
        body["temperature"] == 0.0
            && body["max_tokens"] == 500
            && body["top_p"] == 1.0
            && body["frequency_penalty"] == 0.1
            && body["presence_penalty"] == 0.0,
        || format!("request body {wire:?}"),
    )?;
    ensure(body["messages"].as_array().map(Vec::len) == Some(1), || {
        "expected one message".into()
    })?;
    let shown = run_cli(&["--show-config"], &[], None);
    ensure(
        shown.code == 0 && shown.stdout.contains("# model unset"),
        || format!("a model name is built in: {}", shown.stdout),
    )?;
    Ok("temperature 0, max_tokens 500, top_p 1, frequency_penalty 0.1, presence_penalty 0".into())
}

// ---------------------------------------------------------------- 8

const MALFORMED: [(usize, &str); 12] = [
    (3, "invalid JSON"),
    (4, "missing field `steps`"),
    (5, "unknown field `title`"),
    (6, "procedure has no steps"),
    (7, "step 2 is empty"),
    (8, "step 1 spans more than one line"),
    (9, "goal text is empty"),
    (10, "hint text is empty"),
    (11, "unknown variant `guru`"),
    (12, "duplicate id `ok-1`"),
    (13, "id is empty"),
    (14, "format header must be the first line"),
];

fn criterion_8() -> Outcome {
    let sample = load_records(core_data("sample_dataset.jsonl"), LoadMode::Lenient)
        .map_err(|e| e.to_string())?;
    ensure(
        sample.records.len() == 10 && sample.diagnostics.is_empty(),
        || format!("{} records, {:?}", sample.records.len(), sample.diagnostics),
    )?;
    let bad = core_data("malformed_dataset.jsonl");
    let lenient = load_records(&bad, LoadMode::Lenient).map_err(|e| e.to_string())?;
    ensure(lenient.diagnostics.len() == 12, || {
        format!("{} diagnostics", lenient.diagnostics.len())
    })?;
    for (d, (line, fragment)) in lenient.diagnostics.iter().zip(MALFORMED) {
        ensure(d.line == line && d.message.contains(fragment), || {
            format!("expected line {line} `{fragment}`, got {d}")
        })?;
    }
    match load_records(&bad, LoadMode::Strict) {
        Err(DatasetError::Malformed(d)) if d.line == 3 => {}
        other => return Err(format!("strict mode gave {other:?}")),
    }
    let cli = run_cli(&["stats", bad.to_str().unwrap()], &[], None);
    let warnings = cli
        .stderr
        .lines()
        .filter(|l| l.starts_with("warning:"))
        .count();
    ensure(cli.code == 0 && warnings == 12, || {
        format!("stats: exit {}, {warnings} warnings", cli.code)
    })?;
    let strict = run_cli(&["stats", "--strict", bad.to_str().unwrap()], &[], None);
    ensure(strict.code == 2, || {
        format!("stats --strict exit {}", strict.code)
    })?;
    Ok("sample clean; 12/12 diagnostics lenient; strict fails at line 3".into())
}

fn main() {
    let dir = tempfile::tempdir().unwrap();
    type Check<'a> = Box<dyn Fn() -> Outcome + 'a>;
    let criteria: Vec<(&str, Check)> = vec![
        (
            "metric arithmetic (206-item table fixture)",
            Box::new(|| criterion_1(dir.path())),
        ),
        (
            "error share (40-item fixture)",
            Box::new(|| criterion_2(dir.path())),
        ),
        (
            "edit-engine properties and exhaustive diff",
            Box::new(criterion_3),
        ),
        (
            "golden pipeline traces",
            Box::new(|| criterion_4(dir.path())),
        ),
        ("parallel conflict handling", Box::new(criterion_5)),
        (
            "record/replay determinism",
            Box::new(|| criterion_6(dir.path())),
        ),
        ("generation defaults", Box::new(criterion_7)),
        ("dataset validation", Box::new(criterion_8)),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let outcome = std::panic::catch_unwind(std::panic::AssertUnwindSafe(check))
            .unwrap_or_else(|_| Err("panicked".into()));
        match outcome {
            Ok(detail) => println!("criterion {}: PASS {name}: {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("criterion {}: FAIL {name}: {why}", i + 1);
            }
        }
    }
    println!(
        "acceptance: {} passed, {failed} failed",
        criteria.len() - failed
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
