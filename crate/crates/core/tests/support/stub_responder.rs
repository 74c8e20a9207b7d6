//! Serves the scripted sample outputs over HTTP by reading the role and
//! goal back out of each prompt.

#![allow(dead_code)]

use std::collections::HashMap;
use std::path::Path;

use planedit_core::agent::Role;
use planedit_core::dataset::{load_records, LoadMode};
use planedit_core::gateway::testing::{chat_response, prompt_of};

pub fn role_of_prompt(prompt: &str) -> Role {
    let last = prompt.trim_end().lines().last().unwrap_or("");
    match last {
        "Merged edits:" => Role::Resolver,
        "Customized procedure:" => Role::E2e,
        _ if prompt.starts_with("You are checking") => Role::Verify,
        _ if prompt.contains("can still be followed step by step") => Role::Unified,
        _ => Role::Modify,
    }
}

pub fn goal_of_prompt(prompt: &str) -> Option<&str> {
    prompt.lines().find_map(|l| l.strip_prefix("Goal: "))
}

/// Outputs keyed by (role, goal). Prompts with no scripted output get an
/// empty completion.
pub fn responder(
    dataset: &Path,
    fixtures: &Path,
) -> impl Fn(&serde_json::Value) -> (u16, String) + Send + Sync + 'static {
    let records = load_records(dataset, LoadMode::Strict).unwrap().records;
    let goal_by_id: HashMap<String, String> = records
        .into_iter()
        .map(|r| (r.id, r.goal.as_str().to_string()))
        .collect();
    let mut outputs: HashMap<(Role, String), String> = HashMap::new();
    for line in std::fs::read_to_string(fixtures)
        .unwrap()
        .lines()
        .filter(|l| !l.trim().is_empty())
    {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        let role: Role = v["role"].as_str().unwrap().parse().unwrap();
        let goal = goal_by_id[v["record_id"].as_str().unwrap()].clone();
        outputs.insert((role, goal), v["output"].as_str().unwrap().to_string());
    }
    move |body| {
        let prompt = prompt_of(body);
        let key = (
            role_of_prompt(prompt),
            goal_of_prompt(prompt).unwrap_or("").to_string(),
        );
        (
            200,
            chat_response(outputs.get(&key).map_or("", String::as_str)),
        )
    }
}
