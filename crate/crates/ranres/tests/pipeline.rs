//! Cross-module integration: the reference scenario end to end, trained
//! rollout logs, and the checked-in fuzz corpus staying valid.

use std::collections::BTreeSet;
use std::path::Path;

use ranres::checkpoint;
use ranres::config::ScenarioConfig;
use ranres::dynamics::parse_metrics_csv;
use ranres::env::{OutageScenario, SimSetup};
use ranres::layout::{build_hex_layout, NetworkLayout};
use ranres::link::{evaluate_network, uniform_configs, LinkParams, LinkReport};
use ranres::marl::{infer, train, TrainConfig};
use ranres::radio::RadioParams;
use ranres::resilience::{ResilienceSnapshot, ResilienceState, ResilienceThresholds};

/// Frozen golden snapshot of the all-operational reference scenario
/// (seed 7, 2500 users). The numbers come from one audited run of the
/// composed chain and guard against regressions anywhere in it.
#[test]
fn reference_scenario_golden_snapshot() {
    let layout = build_hex_layout(1, 300.0, 7, 2500).unwrap();
    let configs = uniform_configs(21, 7.0, 30.0).unwrap();
    let report = evaluate_network(
        &layout,
        &configs,
        &RadioParams::default(),
        &LinkParams::default(),
    )
    .unwrap();

    assert_eq!(report.covered_users(), 2500);
    assert_eq!(report.satisfied_users(), 2497);
    let frozen_sum = 4.764_379e10;
    assert!(
        (report.sum_throughput_bps - frozen_sum).abs() / frozen_sum < 1e-4,
        "sum throughput {}",
        report.sum_throughput_bps
    );

    let covered_frac = report.covered_users() as f64 / report.n_users as f64;
    assert!(covered_frac >= 0.95);

    let snapshot =
        ResilienceSnapshot::from_report(&report, &ResilienceThresholds::default()).unwrap();
    assert_eq!(snapshot.coverage_state, ResilienceState::G);
    assert_eq!(snapshot.service_state, ResilienceState::G);
    assert!(snapshot.gate_z);
}

#[test]
fn trained_rollout_writes_consistent_logs() {
    let layout = build_hex_layout(1, 300.0, 2, 40).unwrap();
    let setup = SimSetup::default();
    let cfg = TrainConfig {
        episodes: 2,
        steps_per_episode: 3,
        hidden: vec![8],
        minibatch: 4,
        replay_warmup: 4,
        seed: 5,
        ..TrainConfig::default()
    };
    let result = train(&layout, &setup, &cfg, None).unwrap();
    let scenario = OutageScenario::sites([1, 5]);
    let traj = infer(&result.agents, &layout, &setup, &scenario, 4).unwrap();
    assert_eq!(traj.steps.len(), 4);

    let text = traj.to_jsonl();
    assert_eq!(text.lines().count(), 4);
    for (i, line) in text.lines().enumerate() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert_eq!(v["step"], i as u64);
        assert_eq!(v["policy"], "multi_agent");
        assert_eq!(v["off_sites"], serde_json::json!([1, 5]));
        // Outage sites never act.
        assert!(v["actions"].get("1").is_none());
        assert!(v["actions"].get("5").is_none());
        assert_eq!(v["actions"].as_object().unwrap().len(), 5);
    }

    // The per-step report round-trips through its CSV form.
    let final_report = traj.final_report();
    let parsed = LinkReport::from_csv(&final_report.to_csv()).unwrap();
    assert_eq!(final_report, &parsed);
}

#[test]
fn checkpoint_file_round_trips_through_inference() {
    let dir = tempfile::tempdir().unwrap();
    let layout = build_hex_layout(1, 300.0, 9, 30).unwrap();
    let setup = SimSetup::default();
    let cfg = TrainConfig {
        episodes: 1,
        steps_per_episode: 2,
        hidden: vec![8],
        seed: 1,
        checkpoint_every: 1,
        ..TrainConfig::default()
    };
    let result = train(&layout, &setup, &cfg, Some(dir.path())).unwrap();
    assert!(dir.path().join("model.bin").exists());
    assert!(dir.path().join("model.json").exists());
    assert!(dir.path().join("train_log.jsonl").exists());
    assert!(dir.path().join("checkpoint_ep00001.bin").exists());

    let (loaded, meta) = checkpoint::load(&dir.path().join("model.bin")).unwrap();
    assert_eq!(meta.n_cells, 21);
    let scenario = OutageScenario::sites([0]);
    let from_memory = infer(&result.agents, &layout, &setup, &scenario, 3).unwrap();
    let from_disk = infer(&loaded, &layout, &setup, &scenario, 3).unwrap();
    for (a, b) in from_memory.steps.iter().zip(&from_disk.steps) {
        assert_eq!(a.actions, b.actions);
        assert_eq!(a.reward, b.reward);
    }

    let sidecar = checkpoint::read_sidecar(&dir.path().join("model.json")).unwrap();
    assert_eq!(sidecar, cfg);
}

fn corpus_dir(name: &str) -> std::path::PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../fuzz/corpus")
        .join(name)
}

fn corpus_files(name: &str) -> Vec<std::path::PathBuf> {
    let dir = corpus_dir(name);
    let mut files: Vec<_> = std::fs::read_dir(&dir)
        .unwrap_or_else(|_| panic!("corpus dir {dir:?}"))
        .map(|e| e.unwrap().path())
        .collect();
    files.sort();
    assert!(!files.is_empty(), "no seeds in {dir:?}");
    files
}

/// The checked-in fuzz corpus seeds must stay parseable; each exercises
/// the same round-trip its fuzz target asserts.
#[test]
fn fuzz_corpus_seeds_are_valid() {
    for path in corpus_files("scenario_config") {
        let text = std::fs::read_to_string(&path).unwrap();
        let cfg = ScenarioConfig::from_text(&text).unwrap_or_else(|e| panic!("{path:?}: {e}"));
        assert_eq!(cfg, ScenarioConfig::from_text(&cfg.snapshot_text()).unwrap());
    }
    for path in corpus_files("layout_json") {
        let text = std::fs::read_to_string(&path).unwrap();
        let layout = NetworkLayout::from_json(&text).unwrap_or_else(|e| panic!("{path:?}: {e}"));
        assert_eq!(layout, NetworkLayout::from_json(&layout.to_json()).unwrap());
    }
    for path in corpus_files("checkpoint_decode") {
        let bytes = std::fs::read(&path).unwrap();
        let (agents, meta) = checkpoint::decode(&bytes).unwrap_or_else(|e| panic!("{path:?}: {e}"));
        assert_eq!(checkpoint::encode(&agents, meta.n_cells).unwrap(), bytes);
    }
    for path in corpus_files("report_csv") {
        let text = std::fs::read_to_string(&path).unwrap();
        let report = LinkReport::from_csv(&text).unwrap_or_else(|e| panic!("{path:?}: {e}"));
        assert_eq!(report, LinkReport::from_csv(&report.to_csv()).unwrap());
    }
    for path in corpus_files("metrics_csv") {
        let text = std::fs::read_to_string(&path).unwrap();
        let records = parse_metrics_csv(&text).unwrap_or_else(|e| panic!("{path:?}: {e}"));
        assert!(!records.is_empty());
    }
}

#[test]
fn neighbor_masked_rollout_only_moves_neighbors() {
    let layout = build_hex_layout(1, 2500.0, 17, 60).unwrap();
    let setup = SimSetup {
        initial_power_dbm: 5.0,
        ..SimSetup::default()
    };
    let cfg = TrainConfig {
        episodes: 1,
        steps_per_episode: 2,
        hidden: vec![8],
        seed: 2,
        ..TrainConfig::default()
    };
    let agents = train(&layout, &setup, &cfg, None).unwrap().agents;
    let scenario = OutageScenario::sites([3]);
    let traj =
        ranres::baselines::neighbor_only_rollout(&agents, &layout, &setup, &scenario, 3).unwrap();
    let mask: BTreeSet<usize> = ranres::baselines::neighbor_mask(&layout, &scenario).unwrap();
    for step in &traj.steps {
        for (site, action) in &step.actions {
            if !mask.contains(site) {
                assert_eq!(*action, ranres::env::NO_OP_ACTION);
            }
        }
    }
}
