//! The reconfiguration MDP: network state encoding, the per-site
//! 729-action space, bounded action application, the piecewise reward, and
//! random outage injection.
//!
//! One environment instance is single-threaded within an episode; distinct
//! instances with distinct seeds may run concurrently.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::layout::NetworkLayout;
use crate::link::{
    evaluate_with_geometry, LinkError, LinkGeometry, LinkParams, LinkReport,
};
use crate::radio::{CellConfig, RadioParams, ETILT_RANGE_DEG, TX_POWER_RANGE_DBM};
use crate::resilience::{ResilienceError, ResilienceSnapshot, ResilienceThresholds};

/// Number of joint actions per site: 9 per cell, 3 cells.
pub const ACTIONS_PER_SITE: usize = 729;

/// The all-cells (0 degrees, 0 dB) action index: digit 4 on every cell.
pub const NO_OP_ACTION: u16 = 364;

/// Tilt step per action increment, degrees.
pub const TILT_STEP_DEG: f64 = 1.0;

/// Power step per action increment, dB.
pub const POWER_STEP_DB: f64 = 5.0;

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("action index {0} outside [0, 728]")]
    InvalidActionIndex(u16),
    #[error("action submitted for outage site {0}")]
    ActionForOutageSite(usize),
    #[error("action submitted for unknown site {0}")]
    UnknownSite(usize),
    #[error("outage budget l_max={l_max} invalid for {n_sites} sites (need 1 <= l_max <= n_sites - 2)")]
    InvalidOutageBudget { l_max: usize, n_sites: usize },
    #[error(transparent)]
    Link(#[from] LinkError),
    #[error(transparent)]
    Resilience(#[from] ResilienceError),
}

/// Per-cell deltas of one decoded action digit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellDelta {
    pub dtilt_deg: f64,
    pub dpower_db: f64,
}

/// One site's joint action over its three cells, packed as a base-9 index.
///
/// The least-significant digit drives the site's first cell in ascending
/// cell-id order. Digit k maps to (k div 3 - 1) tilt steps and
/// (k mod 3 - 1) power steps, so digit 0 is (-1 degree, -5 dB), digit 4 is
/// the no-op and digit 8 is (+1 degree, +5 dB). Checkpoints record this
/// convention.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SiteAction {
    index: u16,
}

/// Convention tag stored in checkpoints next to the weights.
pub const ACTION_CONVENTION: &str = "base9-lsd-cell0-tilt1deg-power5db";

impl SiteAction {
    pub fn index(self) -> u16 {
        self.index
    }

    pub fn no_op() -> Self {
        Self { index: NO_OP_ACTION }
    }

    pub fn decoded(self) -> [CellDelta; 3] {
        let mut deltas = [CellDelta {
            dtilt_deg: 0.0,
            dpower_db: 0.0,
        }; 3];
        let mut rest = self.index as usize;
        for delta in &mut deltas {
            let digit = rest % 9;
            rest /= 9;
            delta.dtilt_deg = ((digit / 3) as f64 - 1.0) * TILT_STEP_DEG;
            delta.dpower_db = ((digit % 3) as f64 - 1.0) * POWER_STEP_DB;
        }
        deltas
    }

    pub fn from_digits(digits: [u8; 3]) -> Result<Self, EnvError> {
        let mut index = 0u16;
        for (pos, d) in digits.iter().enumerate() {
            if *d > 8 {
                return Err(EnvError::InvalidActionIndex(u16::MAX));
            }
            index += (*d as u16) * 9u16.pow(pos as u32);
        }
        Ok(Self { index })
    }
}

/// Decode and validate an action index.
pub fn decode_action(index: u16) -> Result<SiteAction, EnvError> {
    if index as usize >= ACTIONS_PER_SITE {
        return Err(EnvError::InvalidActionIndex(index));
    }
    Ok(SiteAction { index })
}

/// The MDP state: every cell's (tilt, power) row plus the frozen outage set.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvState {
    pub configs: Vec<CellConfig>,
    pub outage_sites: BTreeSet<usize>,
}

impl EnvState {
    pub fn new(configs: Vec<CellConfig>, outage_sites: BTreeSet<usize>) -> Self {
        Self {
            configs,
            outage_sites,
        }
    }

    /// Flattened M x 2 view normalized to [0, 1]: tilt over 14, power
    /// over 40, one (tilt, power) pair per cell in cell-id order.
    pub fn normalized_view(&self) -> Vec<f64> {
        let mut view = Vec::with_capacity(2 * self.configs.len());
        for cfg in &self.configs {
            view.push(cfg.etilt_deg / ETILT_RANGE_DEG.1);
            view.push(cfg.tx_power_dbm / TX_POWER_RANGE_DBM.1);
        }
        view
    }
}

/// Encode cell configs as the MDP state matrix.
pub fn encode_state(configs: &[CellConfig], outage_sites: &BTreeSet<usize>) -> EnvState {
    EnvState::new(configs.to_vec(), outage_sites.clone())
}

/// Apply per-site actions, clamping each cell to the tilt and power boxes.
/// Outage-site rows are frozen; submitting an action for one is an error.
/// The input state is not mutated.
pub fn apply_actions(
    state: &EnvState,
    actions: &BTreeMap<usize, SiteAction>,
    layout: &NetworkLayout,
) -> Result<EnvState, EnvError> {
    let mut next = state.clone();
    for (&site_id, action) in actions {
        if site_id >= layout.n_sites() {
            return Err(EnvError::UnknownSite(site_id));
        }
        if state.outage_sites.contains(&site_id) {
            return Err(EnvError::ActionForOutageSite(site_id));
        }
        let cells = layout.cells_of_site(site_id);
        let deltas = action.decoded();
        for (cell_id, delta) in cells.into_iter().zip(deltas) {
            let cfg = &mut next.configs[cell_id];
            cfg.etilt_deg =
                (cfg.etilt_deg + delta.dtilt_deg).clamp(ETILT_RANGE_DEG.0, ETILT_RANGE_DEG.1);
            cfg.tx_power_dbm = (cfg.tx_power_dbm + delta.dpower_db)
                .clamp(TX_POWER_RANGE_DBM.0, TX_POWER_RANGE_DBM.1);
        }
    }
    Ok(next)
}

/// How the state reward scales total throughput.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RewardConfig {
    /// Divide total throughput by N times the requested rate. The penalty
    /// branch is already a product of fractions and stays untouched.
    pub normalize: bool,
}

/// Piecewise state reward: total throughput when the gate holds, else the
/// coverage-times-service penalty.
pub fn reward_state(
    report: &LinkReport,
    snapshot: &ResilienceSnapshot,
    params: &LinkParams,
    reward: RewardConfig,
) -> f64 {
    if snapshot.gate_z {
        if reward.normalize {
            report.sum_throughput_bps / (report.n_users as f64 * params.demand_bps)
        } else {
            report.sum_throughput_bps
        }
    } else {
        snapshot.p_coverage * snapshot.p_service
    }
}

/// Transition reward: the difference of state rewards.
pub fn reward_transition(r_prev: f64, r_next: f64) -> f64 {
    r_next - r_prev
}

/// A set of sites in outage.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutageScenario {
    pub off_sites: BTreeSet<usize>,
}

impl OutageScenario {
    pub fn none() -> Self {
        Self {
            off_sites: BTreeSet::new(),
        }
    }

    pub fn sites(ids: impl IntoIterator<Item = usize>) -> Self {
        Self {
            off_sites: ids.into_iter().collect(),
        }
    }

    pub fn n_off(&self) -> usize {
        self.off_sites.len()
    }
}

/// Draw a random outage: the count uniform on {1..l_max}, the sites a
/// uniform subset. Deterministic under a seeded generator.
pub fn inject_outage<R: Rng>(
    rng: &mut R,
    n_sites: usize,
    l_max: usize,
) -> Result<OutageScenario, EnvError> {
    if l_max < 1 || n_sites < 3 || l_max > n_sites - 2 {
        return Err(EnvError::InvalidOutageBudget { l_max, n_sites });
    }
    let n_off = rng.random_range(1..=l_max);
    let off_sites = rand::seq::index::sample(rng, n_sites, n_off)
        .into_iter()
        .collect();
    Ok(OutageScenario { off_sites })
}

/// All the fixed knobs that, together with a layout and an outage
/// scenario, define one environment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimSetup {
    pub radio: RadioParams,
    pub link: LinkParams,
    pub thresholds: ResilienceThresholds,
    pub reward: RewardConfig,
    /// Electrical tilt every cell starts from, degrees.
    pub initial_etilt_deg: f64,
    /// Transmit power every cell starts from, dBm.
    pub initial_power_dbm: f64,
}

impl Default for SimSetup {
    fn default() -> Self {
        Self {
            radio: RadioParams::default(),
            link: LinkParams::default(),
            thresholds: ResilienceThresholds::default(),
            reward: RewardConfig::default(),
            initial_etilt_deg: 7.0,
            initial_power_dbm: 30.0,
        }
    }
}

impl SimSetup {
    pub fn initial_configs(&self, n_cells: usize) -> Result<Vec<CellConfig>, crate::radio::RadioError> {
        (0..n_cells)
            .map(|id| CellConfig::new(id, self.initial_etilt_deg, self.initial_power_dbm))
            .collect()
    }

    pub fn make_env<'a>(
        &self,
        layout: &'a NetworkLayout,
        scenario: &OutageScenario,
    ) -> Result<Env<'a>, EnvError> {
        let configs = self
            .initial_configs(layout.n_cells())
            .map_err(LinkError::Radio)?;
        Env::new(
            layout,
            self.radio.clone(),
            self.link.clone(),
            self.thresholds.clone(),
            self.reward,
            configs,
            scenario,
        )
    }
}

/// Everything one environment step returns.
#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub reward: f64,
    pub report: LinkReport,
    pub snapshot: ResilienceSnapshot,
    /// State reward of the new state (the minuend of the transition).
    pub state_reward: f64,
}

/// The simulation environment: fixed layout plus mutable network state.
pub struct Env<'a> {
    layout: &'a NetworkLayout,
    geometry: LinkGeometry,
    radio: RadioParams,
    link_params: LinkParams,
    thresholds: ResilienceThresholds,
    reward: RewardConfig,
    state: EnvState,
    report: LinkReport,
    snapshot: ResilienceSnapshot,
    state_reward: f64,
}

impl<'a> Env<'a> {
    /// Build the post-outage initial state and evaluate it once.
    pub fn new(
        layout: &'a NetworkLayout,
        radio: RadioParams,
        link_params: LinkParams,
        thresholds: ResilienceThresholds,
        reward: RewardConfig,
        mut initial_configs: Vec<CellConfig>,
        scenario: &OutageScenario,
    ) -> Result<Self, EnvError> {
        for cfg in &mut initial_configs {
            let site = layout.cells[cfg.cell_id].site_id;
            cfg.operational = !scenario.off_sites.contains(&site);
        }
        let geometry = LinkGeometry::compute(layout, &radio)?;
        let state = EnvState::new(initial_configs, scenario.off_sites.clone());
        let report = evaluate_with_geometry(&geometry, &state.configs, &radio, &link_params)?;
        let snapshot = ResilienceSnapshot::from_report(&report, &thresholds)?;
        let state_reward = reward_state(&report, &snapshot, &link_params, reward);
        Ok(Self {
            layout,
            geometry,
            radio,
            link_params,
            thresholds,
            reward,
            state,
            report,
            snapshot,
            state_reward,
        })
    }

    pub fn layout(&self) -> &NetworkLayout {
        self.layout
    }

    pub fn state(&self) -> &EnvState {
        &self.state
    }

    pub fn report(&self) -> &LinkReport {
        &self.report
    }

    pub fn snapshot(&self) -> &ResilienceSnapshot {
        &self.snapshot
    }

    pub fn state_reward(&self) -> f64 {
        self.state_reward
    }

    /// Operational (agent-bearing) sites, ascending.
    pub fn active_sites(&self) -> Vec<usize> {
        (0..self.layout.n_sites())
            .filter(|s| !self.state.outage_sites.contains(s))
            .collect()
    }

    /// Evaluate one step without committing it.
    pub fn peek(
        &self,
        actions: &BTreeMap<usize, SiteAction>,
    ) -> Result<(EnvState, StepOutcome), EnvError> {
        let next_state = apply_actions(&self.state, actions, self.layout)?;
        let report =
            evaluate_with_geometry(&self.geometry, &next_state.configs, &self.radio, &self.link_params)?;
        let snapshot = ResilienceSnapshot::from_report(&report, &self.thresholds)?;
        let state_reward = reward_state(&report, &snapshot, &self.link_params, self.reward);
        let reward = reward_transition(self.state_reward, state_reward);
        Ok((
            next_state,
            StepOutcome {
                reward,
                report,
                snapshot,
                state_reward,
            },
        ))
    }

    /// Apply actions from the operational sites, evaluate the network, and
    /// return the shared global transition reward.
    pub fn step(&mut self, actions: &BTreeMap<usize, SiteAction>) -> Result<StepOutcome, EnvError> {
        let (next_state, outcome) = self.peek(actions)?;
        self.state = next_state;
        self.report = outcome.report.clone();
        self.snapshot = outcome.snapshot.clone();
        self.state_reward = outcome.state_reward;
        Ok(outcome)
    }
}
