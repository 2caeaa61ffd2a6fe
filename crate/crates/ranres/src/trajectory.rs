//! Rollout trajectories and their JSON-lines log format.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::env::OutageScenario;
use crate::link::LinkReport;
use crate::resilience::ResilienceSnapshot;

/// One environment step of a rollout.
#[derive(Debug, Clone)]
pub struct TrajStep {
    pub step: usize,
    /// Action index submitted per acting site.
    pub actions: BTreeMap<usize, u16>,
    pub reward: f64,
    pub report: LinkReport,
    pub snapshot: ResilienceSnapshot,
}

/// A full rollout from a post-outage state.
#[derive(Debug, Clone)]
pub struct Trajectory {
    /// Policy that produced the rollout: multi_agent, neighbor_only or
    /// no_action.
    pub policy: String,
    pub scenario: OutageScenario,
    /// Post-outage state before any action was taken.
    pub initial_report: LinkReport,
    pub initial_snapshot: ResilienceSnapshot,
    pub steps: Vec<TrajStep>,
}

#[derive(Serialize)]
struct TrajLine<'a> {
    step: usize,
    policy: &'a str,
    off_sites: Vec<usize>,
    actions: &'a BTreeMap<usize, u16>,
    reward: f64,
    p_coverage: f64,
    p_service: f64,
    coverage_state: char,
    service_state: char,
}

impl Trajectory {
    pub fn final_snapshot(&self) -> &ResilienceSnapshot {
        self.steps
            .last()
            .map(|s| &s.snapshot)
            .unwrap_or(&self.initial_snapshot)
    }

    pub fn final_report(&self) -> &LinkReport {
        self.steps
            .last()
            .map(|s| &s.report)
            .unwrap_or(&self.initial_report)
    }

    /// One JSON object per step: step, actions per site, reward, both
    /// availabilities, and the state letters.
    pub fn to_jsonl(&self) -> String {
        let off_sites: Vec<usize> = self.scenario.off_sites.iter().copied().collect();
        let mut out = String::new();
        for s in &self.steps {
            let line = TrajLine {
                step: s.step,
                policy: &self.policy,
                off_sites: off_sites.clone(),
                actions: &s.actions,
                reward: s.reward,
                p_coverage: s.snapshot.p_coverage,
                p_service: s.snapshot.p_service,
                coverage_state: s.snapshot.coverage_state.letter(),
                service_state: s.snapshot.service_state.letter(),
            };
            out.push_str(&serde_json::to_string(&line).expect("trajectory line serializes"));
            out.push('\n');
        }
        out
    }
}
