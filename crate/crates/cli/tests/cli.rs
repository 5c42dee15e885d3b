use std::fs;
use std::path::Path;
use std::process::Command;

fn lab(args: &[&str]) -> String {
    let out = Command::new(env!("CARGO_BIN_EXE_lab")).args(args).output().unwrap();
    assert!(
        out.status.success(),
        "lab {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

const GRID: &str = r#"{
  "cells": [
    {"scenario": {"kind": "dog", "n_states": 2, "n_actions": 4, "steps_per_state": 5},
     "trainer": {"kind": "model_following"}, "learner": {"kind": "abluf"}},
    {"scenario": {"kind": "dog", "n_states": 2, "n_actions": 4, "steps_per_state": 5},
     "trainer": {"kind": "model_following"}, "learner": {"kind": "ucb"}}
  ],
  "seeds": 3,
  "compare": ["policy_gap"]
}"#;

#[test]
fn run_then_summarize() {
    let dir = tempfile::tempdir().unwrap();
    let config = write(dir.path(), "grid.json", GRID);
    let out = dir.path().join("results");
    let out_s = out.to_str().unwrap();
    lab(&["run", "--config", &config, "--out", out_s, "--workers", "2", "--master-seed", "9"]);

    let episodes = fs::read_to_string(out.join("episodes.csv")).unwrap();
    let mut lines = episodes.lines();
    assert_eq!(
        lines.next().unwrap(),
        "cell_id,scenario,learner,trainer,n_states,n_actions,seed,steps_used,rats_per_step,policy_gap,accum_distance,sigma_final"
    );
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 6);
    // UCB has no sigma
    assert!(rows.iter().filter(|r| r.contains(",UCB,")).all(|r| r.ends_with(',')));
    assert!(out.join("summary.csv").exists());
    assert!(out.join("comparisons.csv").exists());

    let summary = lab(&["summarize", out_s]);
    assert_eq!(summary, fs::read_to_string(out.join("summary.csv")).unwrap());

    // same master seed, same bytes
    let again = dir.path().join("again");
    lab(&["run", "--config", &config, "--out", again.to_str().unwrap(), "--master-seed", "9"]);
    assert_eq!(episodes, fs::read_to_string(again.join("episodes.csv")).unwrap());
}

#[test]
fn episode_log_replays() {
    let dir = tempfile::tempdir().unwrap();
    let config = write(
        dir.path(),
        "episode.json",
        r#"{"scenario": {"kind": "lighting", "n_states": 3, "n_actions": 10, "steps_per_state": 15},
            "trainer": {"kind": "model_following"}, "learner": {"kind": "abluf"}}"#,
    );
    let log = dir.path().join("ep.jsonl");
    let result: serde_json::Value =
        serde_json::from_str(&lab(&["episode", "--config", &config, "--seed", "4", "--log", log.to_str().unwrap()]))
            .unwrap();

    let out = lab(&["replay", "--log", log.to_str().unwrap()]);
    let lines: Vec<serde_json::Value> = out.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 46);
    let last_step = &lines[44];
    assert_eq!(last_step["policy"], result["final_policy"]);
    assert_eq!(last_step["sigma"], result["sigma_trace"].as_array().unwrap().last().unwrap().clone());
    assert_eq!(lines[45]["policy_gap"], result["metrics"]["policy_gap"]);
}

#[test]
fn replay_rejects_foreign_learner() {
    let dir = tempfile::tempdir().unwrap();
    let log = write(
        dir.path(),
        "h.jsonl",
        "{\"t\":0,\"s\":0,\"a\":3,\"f\":\"+\"}\n",
    );
    let out = Command::new(env!("CARGO_BIN_EXE_lab"))
        .args(["replay", "--log", &log, "--learner", r#"{"kind":"ucb"}"#, "--seed", "1", "--n-states", "1", "--n-actions", "4"])
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("diverged"));
}
