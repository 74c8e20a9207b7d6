//! Edit-engine properties, shared by the core tests and the acceptance run.

#![allow(dead_code)]

use std::collections::HashSet;

use planedit_core::engine::{
    detect_conflicts, diff, merge_deterministic, validate, Conflict, MergePolicy,
};
use planedit_core::{apply, parse_edit_bag, Edit, EditBag, EditKind, Procedure};
use proptest::prelude::*;
use proptest::test_runner::{Config, TestCaseResult, TestRunner};

/// Applies one edit at a time, highest anchor first, to a plain vector.
/// Working downward means earlier anchors still point at their original
/// steps. Expects a validated bag.
pub fn reference_apply(bag: &EditBag, p: &Procedure) -> Vec<String> {
    let mut steps: Vec<String> = p.steps().to_vec();
    for k in (0..=p.len()).rev() {
        let inserts: Vec<&Edit> = bag
            .iter()
            .filter(|e| e.kind == EditKind::Insert && e.anchor == k)
            .collect();
        for (offset, e) in inserts.iter().enumerate() {
            steps.insert(k + offset, e.text.trim().to_string());
        }
        if k == 0 {
            continue;
        }
        if let Some(r) = bag
            .iter()
            .rfind(|e| e.kind == EditKind::Replace && e.anchor == k)
        {
            if r.text.trim().is_empty() {
                steps.remove(k - 1);
            } else {
                steps[k - 1] = r.text.trim().to_string();
            }
        }
    }
    steps
}

fn step_text() -> impl Strategy<Value = String> {
    prop::sample::select(vec![
        "mix",
        "bake",
        "stir well",
        "add salt",
        "wait",
        "serve",
    ])
    .prop_map(str::to_string)
}

fn procedure() -> impl Strategy<Value = Procedure> {
    prop::collection::vec(step_text(), 0..7).prop_map(|s| Procedure::new(s).unwrap())
}

fn edit_for(n: usize) -> impl Strategy<Value = Edit> {
    (
        any::<bool>(),
        0..=n + 2,
        prop::sample::select(vec!["", "chop", "boil water", "rest", "  padded  ", "mix"]),
    )
        .prop_map(|(insert, anchor, text)| {
            if insert {
                Edit::insert(anchor, text)
            } else {
                Edit::replace(anchor, text)
            }
        })
}

fn procedure_and_bag() -> impl Strategy<Value = (Procedure, EditBag)> {
    procedure().prop_flat_map(|p| {
        let n = p.len();
        (
            Just(p),
            prop::collection::vec(edit_for(n), 0..10).prop_map(EditBag::new),
        )
    })
}

fn procedure_and_two_bags() -> impl Strategy<Value = (Procedure, EditBag, EditBag)> {
    procedure().prop_flat_map(|p| {
        let n = p.len();
        let bag = || prop::collection::vec(edit_for(n), 0..10).prop_map(EditBag::new);
        (Just(p), bag(), bag())
    })
}

/// A validated bag plus a shuffled copy that keeps same-anchor inserts in
/// their original relative order.
fn validated_and_permuted() -> impl Strategy<Value = (Procedure, EditBag, EditBag)> {
    procedure_and_bag()
        .prop_map(|(p, bag)| {
            let valid = validate(&bag, &p).applicable;
            (p, valid)
        })
        .prop_flat_map(|(p, valid)| {
            let len = valid.len();
            (
                Just(p),
                Just(valid),
                Just((0..len).collect::<Vec<_>>()).prop_shuffle(),
            )
        })
        .prop_map(|(p, valid, order)| {
            let edits = valid.edits();
            let shuffled: Vec<Edit> = order.iter().map(|&i| edits[i].clone()).collect();
            // Restore the relative order of inserts sharing an anchor.
            let mut fixed = shuffled.clone();
            let anchors: HashSet<usize> = edits
                .iter()
                .filter(|e| e.is_insert())
                .map(|e| e.anchor)
                .collect();
            for a in anchors {
                let original: Vec<&Edit> = edits
                    .iter()
                    .filter(|e| e.is_insert() && e.anchor == a)
                    .collect();
                let slots: Vec<usize> = shuffled
                    .iter()
                    .enumerate()
                    .filter(|(_, e)| e.is_insert() && e.anchor == a)
                    .map(|(i, _)| i)
                    .collect();
                for (slot, e) in slots.into_iter().zip(original) {
                    fixed[slot] = e.clone();
                }
            }
            (p, valid, EditBag::new(fixed))
        })
}

fn dsl_text() -> impl Strategy<Value = String> {
    "[A-Za-z0-9 ,.;:()'\"/&%-]{0,40}".prop_map(|s| s.trim().to_string())
}

fn any_edit() -> impl Strategy<Value = Edit> {
    (any::<bool>(), 0usize..1000, dsl_text()).prop_filter_map(
        "insert needs text",
        |(insert, anchor, text)| {
            if insert {
                (!text.is_empty()).then(|| Edit::insert(anchor, text))
            } else {
                Some(Edit::replace(anchor, text))
            }
        },
    )
}

fn check_identity(p: Procedure) -> TestCaseResult {
    prop_assert_eq!(apply(&EditBag::default(), &p), p);
    Ok(())
}

fn check_length_accounting((p, bag): (Procedure, EditBag)) -> TestCaseResult {
    let valid = validate(&bag, &p).applicable;
    let inserts = valid.iter().filter(|e| e.is_insert()).count();
    let deletions = valid.iter().filter(|e| e.is_deletion()).count();
    prop_assert_eq!(apply(&valid, &p).len(), p.len() + inserts - deletions);
    Ok(())
}

fn check_permutation((p, valid, permuted): (Procedure, EditBag, EditBag)) -> TestCaseResult {
    prop_assert_eq!(apply(&valid, &p), apply(&permuted, &p));
    Ok(())
}

fn check_reference((p, bag): (Procedure, EditBag)) -> TestCaseResult {
    let valid = validate(&bag, &p).applicable;
    prop_assert_eq!(
        apply(&valid, &p).steps().to_vec(),
        reference_apply(&valid, &p)
    );
    Ok(())
}

fn check_dsl_round_trip(e: Edit) -> TestCaseResult {
    prop_assert_eq!(Edit::parse(&e.serialize()), Ok(e));
    Ok(())
}

fn check_bag_text_round_trip(edits: Vec<Edit>) -> TestCaseResult {
    let bag = EditBag::new(edits);
    let (parsed, diags) = parse_edit_bag(&bag.to_text());
    prop_assert!(diags.is_empty());
    prop_assert_eq!(parsed, bag);
    Ok(())
}

fn check_conflict_symmetry(((p, a), seed): ((Procedure, EditBag), Vec<usize>)) -> TestCaseResult {
    let n = p.len();
    let pool = a.edits().to_vec();
    let b: EditBag = seed
        .iter()
        .map(|&i| {
            if pool.is_empty() || i % 3 == 0 {
                Edit::replace(i % (n + 1), if i % 2 == 0 { "" } else { "other" })
            } else {
                pool[i % pool.len()].clone()
            }
        })
        .collect();
    let pairs = |cs: Vec<Conflict>, flip: bool| -> HashSet<(String, String, String)> {
        cs.into_iter()
            .map(|c| {
                let (x, y) = if flip {
                    (c.right, c.left)
                } else {
                    (c.left, c.right)
                };
                (x.serialize(), y.serialize(), c.reason.to_string())
            })
            .collect()
    };
    prop_assert_eq!(
        pairs(detect_conflicts(&a, &b), false),
        pairs(detect_conflicts(&b, &a), true)
    );
    Ok(())
}

fn check_merge_validates(
    ((p, a, b), policy): ((Procedure, EditBag, EditBag), usize),
) -> TestCaseResult {
    let a = validate(&a, &p).applicable;
    let b = validate(&b, &p).applicable;
    let policy = [
        MergePolicy::CustomizeWins,
        MergePolicy::ExecuteWins,
        MergePolicy::RejectConflicts,
    ][policy];
    let merged = merge_deterministic(&a, &b, policy).merged;
    let report = validate(&merged, &p);
    prop_assert!(report.is_clean(), "{:?}", report.rejected);
    Ok(())
}

pub const PROPERTIES: [&str; 8] = [
    "identity",
    "length_accounting",
    "permutation_invariance",
    "reference_applier",
    "dsl_round_trip",
    "bag_text_round_trip",
    "conflict_symmetry",
    "merge_validates",
];

/// Runs one named property for `cases` generated inputs.
pub fn run_property(name: &str, cases: u32) -> Result<(), String> {
    let mut runner = TestRunner::new(Config {
        cases,
        failure_persistence: None,
        ..Config::default()
    });
    let outcome = match name {
        "identity" => runner
            .run(&procedure(), check_identity)
            .map_err(|e| e.to_string()),
        "length_accounting" => runner
            .run(&procedure_and_bag(), check_length_accounting)
            .map_err(|e| e.to_string()),
        "permutation_invariance" => runner
            .run(&validated_and_permuted(), check_permutation)
            .map_err(|e| e.to_string()),
        "reference_applier" => runner
            .run(&procedure_and_bag(), check_reference)
            .map_err(|e| e.to_string()),
        "dsl_round_trip" => runner
            .run(&any_edit(), check_dsl_round_trip)
            .map_err(|e| e.to_string()),
        "bag_text_round_trip" => runner
            .run(
                &prop::collection::vec(any_edit(), 0..8),
                check_bag_text_round_trip,
            )
            .map_err(|e| e.to_string()),
        "conflict_symmetry" => runner
            .run(
                &(
                    procedure_and_bag(),
                    prop::collection::vec(0usize..100, 0..10),
                ),
                check_conflict_symmetry,
            )
            .map_err(|e| e.to_string()),
        "merge_validates" => runner
            .run(
                &(procedure_and_two_bags(), 0..3usize),
                check_merge_validates,
            )
            .map_err(|e| e.to_string()),
        other => return Err(format!("no property named {other}")),
    };
    outcome.map_err(|e| format!("{name}: {e}"))
}

/// Every sequence of at most `max_len` steps over `alphabet`, shortest first.
pub fn all_procedures(alphabet: &[&str], max_len: usize) -> Vec<Procedure> {
    let mut out = vec![Vec::<String>::new()];
    let mut frontier = out.clone();
    for _ in 0..max_len {
        let mut next = Vec::new();
        for seq in &frontier {
            for s in alphabet {
                let mut longer = seq.clone();
                longer.push(s.to_string());
                next.push(longer);
            }
        }
        out.extend(next.iter().cloned());
        frontier = next;
    }
    out.into_iter()
        .map(|s| Procedure::new(s).unwrap())
        .collect()
}

/// Levenshtein distance with unit costs, by plain recursion over suffixes.
/// A replace edits one original step and an insert adds one, so no edit bag
/// turning `a` into `b` can be shorter than this.
pub fn edit_distance(a: &[String], b: &[String]) -> usize {
    fn go(
        a: &[String],
        b: &[String],
        memo: &mut std::collections::HashMap<(usize, usize), usize>,
    ) -> usize {
        if a.is_empty() {
            return b.len();
        }
        if b.is_empty() {
            return a.len();
        }
        if let Some(&d) = memo.get(&(a.len(), b.len())) {
            return d;
        }
        let d = if a[0] == b[0] {
            go(&a[1..], &b[1..], memo)
        } else {
            1 + go(&a[1..], b, memo)
                .min(go(a, &b[1..], memo))
                .min(go(&a[1..], &b[1..], memo))
        };
        memo.insert((a.len(), b.len()), d);
        d
    }
    go(a, b, &mut std::collections::HashMap::new())
}

/// Checks apply(diff(p, q), p) == q and minimality for every ordered pair.
/// Returns the number of pairs checked.
pub fn exhaustive_diff(alphabet: &[&str], max_len: usize) -> Result<usize, String> {
    let all = all_procedures(alphabet, max_len);
    let mut checked = 0;
    for p in &all {
        for q in &all {
            let bag = diff(p, q);
            let report = validate(&bag, p);
            if !report.is_clean() {
                return Err(format!("diff({p:?}, {q:?}) = {bag:?} does not validate"));
            }
            if apply(&bag, p) != *q {
                return Err(format!("apply(diff({p:?}, {q:?})) != q"));
            }
            let lower = edit_distance(p.steps(), q.steps());
            if bag.len() != lower {
                return Err(format!(
                    "diff({p:?}, {q:?}) has {} edits, minimum is {lower}",
                    bag.len()
                ));
            }
            checked += 1;
        }
    }
    Ok(checked)
}
