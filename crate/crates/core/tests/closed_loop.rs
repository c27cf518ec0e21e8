//! End-to-end tests over the shipped scenario files: episode determinism,
//! task switching on the low-noise scenario, and scenario validation.

use dsnav_core::certify::build_certificates;
use dsnav_core::harness::{
    load_scenario, monte_carlo, scenario_from_json, trace_to_csv, EpisodeOptions, HarnessError,
};
use dsnav_core::{run_episode, Certificates, Scenario};
use std::path::PathBuf;

fn scenario_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name)
}

fn load(name: &str) -> (Scenario, Certificates) {
    let scenario = load_scenario(scenario_path(name)).expect("scenario loads");
    let certs = build_certificates(
        &scenario.model,
        &scenario.k_gain,
        &scenario.tasks,
        &scenario.sensors,
        true,
    )
    .expect("certificates build");
    (scenario, certs)
}

fn benign_json() -> serde_json::Value {
    let text = std::fs::read_to_string(scenario_path("benign.json")).unwrap();
    serde_json::from_str(&text).unwrap()
}

#[test]
fn low_noise_scenario_completes_all_tasks() {
    let (scenario, certs) = load("benign.json");
    let trace = run_episode(&scenario, &certs, 1, &EpisodeOptions::default());
    assert!(trace.completed, "episode did not finish its task sequence");
    assert_eq!(trace.tasks_accomplished, scenario.tasks.len());
    assert_eq!(trace.switch_times.len(), scenario.tasks.len());
    let mut prev = 0;
    for &t in &trace.switch_times {
        assert!(t > prev, "switch times must be strictly increasing");
        prev = t;
    }
    // The final reference point of the last task meets its target set.
    let last = trace.records.last().unwrap();
    let task = scenario.tasks.last().unwrap();
    assert!((&task.d * &last.x - &task.c).norm() <= task.radius);
}

#[test]
fn episodes_are_deterministic_per_seed() {
    let (scenario, certs) = load("benign.json");
    let opts = EpisodeOptions::default();
    let a = run_episode(&scenario, &certs, 9, &opts);
    let b = run_episode(&scenario, &certs, 9, &opts);
    assert_eq!(trace_to_csv(&a, &scenario), trace_to_csv(&b, &scenario));
    let c = run_episode(&scenario, &certs, 10, &opts);
    assert_ne!(trace_to_csv(&a, &scenario), trace_to_csv(&c, &scenario));
}

#[test]
fn monte_carlo_results_are_ordered_by_seed() {
    let (scenario, certs) = load("benign.json");
    let opts = EpisodeOptions::default();
    let (_, traces) = monte_carlo(&scenario, &certs, 4, 100, &opts);
    let seeds: Vec<u64> = traces.iter().map(|t| t.seed).collect();
    assert_eq!(seeds, vec![100, 101, 102, 103]);
}

#[test]
fn reference_scenario_loads_with_twelve_sensors() {
    let (scenario, certs) = load("default.json");
    assert_eq!(scenario.sensor_union.len(), 12);
    assert_eq!(scenario.tasks.len(), 3);
    assert_eq!(certs.tasks.len(), 3);
    // Each ring task shares sensors with its neighbor in the sequence.
    for pair in scenario.tasks.windows(2) {
        let shared = pair[0]
            .graph
            .vertex_set
            .iter()
            .filter(|v| pair[1].graph.vertex_set.contains(v))
            .count();
        assert!(shared >= 1, "consecutive tasks share no sensor");
    }
}

#[test]
fn disconnected_network_is_rejected() {
    let mut doc = benign_json();
    // Remove one edge of the first triangle, isolating sensor 1.
    doc["tasks"][0]["edges"] = serde_json::json!([[2, 3]]);
    let err = scenario_from_json(&doc.to_string()).unwrap_err();
    match err {
        HarnessError::AssumptionViolated(msg) => assert!(msg.contains("connectivity")),
        other => panic!("expected a connectivity violation, got {other}"),
    }
}

#[test]
fn unactuated_plant_is_rejected() {
    let mut doc = benign_json();
    doc["model"]["b"] = serde_json::json!([[0.0], [0.0]]);
    let err = scenario_from_json(&doc.to_string()).unwrap_err();
    match err {
        HarnessError::AssumptionViolated(msg) => assert!(msg.contains("stabilizability")),
        other => panic!("expected a stabilizability violation, got {other}"),
    }
}

#[test]
fn oversized_initial_gap_is_rejected() {
    let mut doc = benign_json();
    // The synthesized reference start copies the constrained position, so the
    // gap must come from the free coordinate (the velocity).
    doc["initial_state"] = serde_json::json!([0.0, 5.0]);
    let err = scenario_from_json(&doc.to_string()).unwrap_err();
    match err {
        HarnessError::AssumptionViolated(msg) => assert!(msg.contains("initial bounds")),
        other => panic!("expected an initial-bounds violation, got {other}"),
    }
}

#[test]
fn unknown_designated_sensor_is_rejected() {
    let mut doc = benign_json();
    doc["tasks"][0]["designated"] = serde_json::json!(99);
    let err = scenario_from_json(&doc.to_string()).unwrap_err();
    assert!(matches!(err, HarnessError::Invalid(_)));
}
