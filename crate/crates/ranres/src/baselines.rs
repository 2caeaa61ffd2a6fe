//! Reference policies for the comparisons: holding everything still, and
//! reconfiguring only the failed sites' first-ring neighbors with the same
//! trained agents.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::env::{OutageScenario, SimSetup, SiteAction};
use crate::layout::NetworkLayout;
use crate::marl::{infer_masked, AgentBundle, MarlError};
use crate::trajectory::{TrajStep, Trajectory};

/// Which reference policy to roll out.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineKind {
    NoAction,
    NeighborOnly,
}

/// Roll the outage forward with every surviving site frozen.
pub fn no_action_rollout(
    layout: &NetworkLayout,
    setup: &SimSetup,
    scenario: &OutageScenario,
    k_steps: usize,
) -> Result<Trajectory, MarlError> {
    let mut env = setup.make_env(layout, scenario)?;
    let initial_report = env.report().clone();
    let initial_snapshot = env.snapshot().clone();
    let mut steps = Vec::with_capacity(k_steps);
    for step in 0..k_steps {
        let actions: BTreeMap<usize, SiteAction> = env
            .active_sites()
            .into_iter()
            .map(|s| (s, SiteAction::no_op()))
            .collect();
        let outcome = env.step(&actions)?;
        steps.push(TrajStep {
            step,
            actions: actions.iter().map(|(s, a)| (*s, a.index())).collect(),
            reward: outcome.reward,
            report: outcome.report,
            snapshot: outcome.snapshot,
        });
    }
    Ok(Trajectory {
        policy: "no_action".into(),
        scenario: scenario.clone(),
        initial_report,
        initial_snapshot,
        steps,
    })
}

/// Sites allowed to act under neighbor-only compensation: the union of
/// the failed sites' neighbor rings, minus the failed sites themselves.
pub fn neighbor_mask(
    layout: &NetworkLayout,
    scenario: &OutageScenario,
) -> Result<BTreeSet<usize>, MarlError> {
    let mut mask = BTreeSet::new();
    for &off in &scenario.off_sites {
        mask.extend(
            layout
                .neighbor_sites(off)
                .map_err(|e| MarlError::CheckpointMismatch(e.to_string()))?,
        );
    }
    Ok(&mask - &scenario.off_sites)
}

/// Greedy rollout of the trained agents restricted to the failed sites'
/// neighbors; every other operational site holds its configuration.
pub fn neighbor_only_rollout(
    agents: &[AgentBundle],
    layout: &NetworkLayout,
    setup: &SimSetup,
    scenario: &OutageScenario,
    k_steps: usize,
) -> Result<Trajectory, MarlError> {
    let mask = neighbor_mask(layout, scenario)?;
    infer_masked(
        agents,
        layout,
        setup,
        scenario,
        k_steps,
        Some(&mask),
        "neighbor_only",
    )
}
