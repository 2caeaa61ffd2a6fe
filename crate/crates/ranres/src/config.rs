//! Scenario configuration: a flat, commented key = value text format with
//! keys mirroring the reference network table. Unknown keys are errors.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;
use thiserror::Error;

use crate::env::{OutageScenario, RewardConfig, SimSetup};
use crate::layout::HexLayoutParams;
use crate::marl::TrainConfig;
use crate::radio::ChannelModel;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("config line {line}: unknown key {key:?}")]
    UnknownKey { line: usize, key: String },
    #[error("config line {line}: duplicate key {key:?}")]
    DuplicateKey { line: usize, key: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Which policy drives reconfiguration after an outage.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PolicyKind {
    MultiAgent,
    NeighborOnly,
    NoAction,
}

impl PolicyKind {
    pub fn as_str(self) -> &'static str {
        match self {
            PolicyKind::MultiAgent => "multi_agent",
            PolicyKind::NeighborOnly => "neighbor_only",
            PolicyKind::NoAction => "no_action",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "multi_agent" => Some(PolicyKind::MultiAgent),
            "neighbor_only" => Some(PolicyKind::NeighborOnly),
            "no_action" => Some(PolicyKind::NoAction),
            _ => None,
        }
    }
}

/// Outage specification: a site count drawn at run time, or explicit ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum OutageSpec {
    Count(usize),
    Sites(Vec<usize>),
}

/// The timed evaluation protocol, all in whole seconds.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Timeline {
    pub duration_s: u64,
    pub outage_at_s: u64,
    pub trigger_delay_s: u64,
    pub actions_budget: u32,
    pub tick_s: u64,
}

impl Default for Timeline {
    fn default() -> Self {
        Self {
            duration_s: 80,
            outage_at_s: 30,
            trigger_delay_s: 5,
            actions_budget: 5,
            tick_s: 1,
        }
    }
}

impl Timeline {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.tick_s == 0 {
            return Err(ConfigError::Invalid("tick_s must be positive".into()));
        }
        let needed = self.outage_at_s
            + self.trigger_delay_s
            + self.actions_budget as u64 * self.tick_s;
        if needed > self.duration_s {
            return Err(ConfigError::Invalid(format!(
                "timeline infeasible: outage_at + trigger_delay + budget * tick = {needed} s exceeds duration {} s",
                self.duration_s
            )));
        }
        Ok(())
    }
}

/// A full scenario: layout, radio/link/threshold blocks, outage spec,
/// timeline, policy, and training hyper-parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub layout: HexLayoutParams,
    pub setup: SimSetup,
    pub outage: OutageSpec,
    pub timeline: Timeline,
    /// Random-walk speed in km/h; absent keeps users fixed.
    pub user_speed_kmh: Option<f64>,
    pub policy: PolicyKind,
    pub seed: u64,
    pub inference_steps: usize,
    pub train: TrainConfig,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            layout: HexLayoutParams::default(),
            setup: SimSetup::default(),
            outage: OutageSpec::Count(1),
            timeline: Timeline::default(),
            user_speed_kmh: None,
            policy: PolicyKind::MultiAgent,
            seed: 0,
            inference_steps: 10,
            train: TrainConfig::default(),
        }
    }
}

impl ScenarioConfig {
    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)?;
        Self::from_text(&text)
    }

    /// Parse the key = value format. Lines are `key = value`, `#` starts a
    /// comment, blank lines are skipped, unknown and duplicate keys fail.
    pub fn from_text(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = ScenarioConfig::default();
        let mut seen: BTreeMap<String, usize> = BTreeMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = match raw.find('#') {
                Some(pos) => &raw[..pos],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(ConfigError::Parse {
                    line: line_no,
                    msg: format!("expected `key = value`, got {line:?}"),
                });
            };
            let key = key.trim();
            let value = value.trim();
            if value.is_empty() {
                return Err(ConfigError::Parse {
                    line: line_no,
                    msg: format!("key {key:?} has no value"),
                });
            }
            if seen.insert(key.to_string(), line_no).is_some() {
                return Err(ConfigError::DuplicateKey {
                    line: line_no,
                    key: key.to_string(),
                });
            }
            cfg.apply(key, value, line_no)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn apply(&mut self, key: &str, value: &str, line: usize) -> Result<(), ConfigError> {
        fn num<T: std::str::FromStr>(value: &str, line: usize, key: &str) -> Result<T, ConfigError> {
            value.parse().map_err(|_| ConfigError::Parse {
                line,
                msg: format!("bad value {value:?} for {key}"),
            })
        }
        fn fnum(value: &str, line: usize, key: &str) -> Result<f64, ConfigError> {
            let v: f64 = num(value, line, key)?;
            if !v.is_finite() {
                return Err(ConfigError::Parse {
                    line,
                    msg: format!("{key} must be finite, got {value:?}"),
                });
            }
            Ok(v)
        }
        let b = |value: &str| -> Result<bool, ConfigError> {
            match value {
                "true" | "on" | "1" => Ok(true),
                "false" | "off" | "0" => Ok(false),
                _ => Err(ConfigError::Parse {
                    line,
                    msg: format!("bad boolean {value:?}"),
                }),
            }
        };
        match key {
            // Layout block.
            "n_rings" => self.layout.n_rings = num(value, line, key)?,
            "inter_site_distance_m" => self.layout.inter_site_distance_m = fnum(value, line, key)?,
            "n_users" => self.layout.n_users = num(value, line, key)?,
            "bs_height_m" => self.layout.bs_height_m = fnum(value, line, key)?,
            "ut_height_m" => self.layout.ut_height_m = fnum(value, line, key)?,
            // Radio block.
            "carrier_frequency_ghz" => self.setup.radio.carrier_frequency_ghz = fnum(value, line, key)?,
            "effective_env_height_m" => self.setup.radio.effective_env_height_m = fnum(value, line, key)?,
            "antenna_max_gain_dbi" => self.setup.radio.g_max_dbi = fnum(value, line, key)?,
            "theta_3db_deg" => self.setup.radio.theta_3db_deg = fnum(value, line, key)?,
            "phi_3db_deg" => self.setup.radio.phi_3db_deg = fnum(value, line, key)?,
            "sll_v_db" => self.setup.radio.sll_v_db = fnum(value, line, key)?,
            "sll_h_db" => self.setup.radio.sll_h_db = fnum(value, line, key)?,
            "user_antenna_gain_dbi" => self.setup.radio.g_r_dbi = fnum(value, line, key)?,
            "light_speed_mps" => self.setup.radio.light_speed_mps = fnum(value, line, key)?,
            "channel" => {
                self.setup.radio.channel = match value {
                    "los" => ChannelModel::Los,
                    "nlos" => ChannelModel::Nlos,
                    _ => {
                        return Err(ConfigError::Parse {
                            line,
                            msg: format!("channel must be los or nlos, got {value:?}"),
                        })
                    }
                }
            }
            // Link block.
            "prb_bandwidth_hz" => self.setup.link.prb_bandwidth_hz = fnum(value, line, key)?,
            "bits_per_symbol" => self.setup.link.bits_per_symbol = fnum(value, line, key)?,
            "prbs_per_cell" => self.setup.link.prbs_per_cell = num(value, line, key)?,
            "noise_per_prb_dbm" => self.setup.link.noise_per_prb_dbm = fnum(value, line, key)?,
            "rsrp_min_dbm" => self.setup.link.rsrp_min_dbm = fnum(value, line, key)?,
            "demand_bps" => self.setup.link.demand_bps = fnum(value, line, key)?,
            "max_users_per_cell" => {
                self.setup.link.max_users_per_cell = if value == "auto" {
                    None
                } else {
                    Some(num(value, line, key)?)
                }
            }
            // Resilience thresholds.
            "p_coverage_hat" => self.setup.thresholds.p_cov_hat = fnum(value, line, key)?,
            "p_service_hat" => self.setup.thresholds.p_serv_hat = fnum(value, line, key)?,
            "good_rsrp_min_dbm" => self.setup.thresholds.good_rsrp_min_dbm = fnum(value, line, key)?,
            // Initial state and reward.
            "initial_etilt_deg" => self.setup.initial_etilt_deg = fnum(value, line, key)?,
            "initial_power_dbm" => self.setup.initial_power_dbm = fnum(value, line, key)?,
            "normalize_reward" => self.setup.reward = RewardConfig { normalize: b(value)? },
            // Outage spec.
            "outage_l" => self.outage = OutageSpec::Count(num(value, line, key)?),
            "outage_sites" => {
                let sites = value
                    .split(',')
                    .map(|s| num::<usize>(s.trim(), line, key))
                    .collect::<Result<Vec<_>, _>>()?;
                self.outage = OutageSpec::Sites(sites);
            }
            // Timeline.
            "duration_s" => self.timeline.duration_s = num(value, line, key)?,
            "outage_at_s" => self.timeline.outage_at_s = num(value, line, key)?,
            "trigger_delay_s" => self.timeline.trigger_delay_s = num(value, line, key)?,
            "actions_budget" => self.timeline.actions_budget = num(value, line, key)?,
            "tick_s" => self.timeline.tick_s = num(value, line, key)?,
            // Mobility.
            "user_speed_kmh" => {
                self.user_speed_kmh = if value == "off" {
                    None
                } else {
                    Some(fnum(value, line, key)?)
                }
            }
            // Policy, seed, inference.
            "policy" => {
                self.policy = PolicyKind::parse(value).ok_or_else(|| ConfigError::Parse {
                    line,
                    msg: format!(
                        "policy must be multi_agent, neighbor_only or no_action, got {value:?}"
                    ),
                })?
            }
            "seed" => self.set_seed(num(value, line, key)?),
            "inference_steps" => self.inference_steps = num(value, line, key)?,
            // Training block.
            "episodes" => self.train.episodes = num(value, line, key)?,
            "steps_per_episode" => self.train.steps_per_episode = num(value, line, key)?,
            "gamma" => self.train.gamma = fnum(value, line, key)?,
            "learning_rate" => self.train.learning_rate = fnum(value, line, key)?,
            "minibatch" => self.train.minibatch = num(value, line, key)?,
            "replay_capacity" => self.train.replay_capacity = num(value, line, key)?,
            "target_sync" => self.train.target_sync = num(value, line, key)?,
            "epsilon_start" => self.train.epsilon_start = fnum(value, line, key)?,
            "epsilon_end" => self.train.epsilon_end = fnum(value, line, key)?,
            "epsilon_decay_frac" => self.train.epsilon_decay_frac = fnum(value, line, key)?,
            "l_max" => self.train.l_max = num(value, line, key)?,
            "replay_warmup" => self.train.replay_warmup = num(value, line, key)?,
            "hidden" => {
                let dims = value
                    .split(',')
                    .map(|s| num::<usize>(s.trim(), line, key))
                    .collect::<Result<Vec<_>, _>>()?;
                if dims.is_empty() || dims.contains(&0) {
                    return Err(ConfigError::Parse {
                        line,
                        msg: "hidden widths must be positive".into(),
                    });
                }
                self.train.hidden = dims;
            }
            "grad_clip_norm" => self.train.grad_clip_norm = fnum(value, line, key)?,
            "checkpoint_every" => self.train.checkpoint_every = num(value, line, key)?,
            _ => {
                return Err(ConfigError::UnknownKey {
                    line,
                    key: key.to_string(),
                })
            }
        }
        Ok(())
    }

    /// One seed drives layout sampling, outage draws, and training.
    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.layout.rng_seed = seed;
        self.train.seed = seed;
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.timeline.validate()?;
        let n_sites = crate::layout::hex_site_count(self.layout.n_rings);
        match &self.outage {
            OutageSpec::Count(l) => {
                if *l == 0 || n_sites < 3 || *l > n_sites - 2 {
                    return Err(ConfigError::Invalid(format!(
                        "outage count {l} invalid for {n_sites} sites (need 1 <= L <= n_sites - 2)"
                    )));
                }
            }
            OutageSpec::Sites(sites) => {
                let mut dedup = sites.clone();
                dedup.sort_unstable();
                dedup.dedup();
                if dedup.len() != sites.len() {
                    return Err(ConfigError::Invalid("outage_sites has duplicates".into()));
                }
                if sites.iter().any(|&s| s >= n_sites) {
                    return Err(ConfigError::Invalid(format!(
                        "outage_sites mentions a site >= {n_sites}"
                    )));
                }
                if n_sites < 3 || sites.len() > n_sites - 2 {
                    return Err(ConfigError::Invalid(format!(
                        "{} outage sites invalid for {n_sites} sites",
                        sites.len()
                    )));
                }
            }
        }
        if let Some(v) = self.user_speed_kmh {
            if !(3.0..=10.0).contains(&v) {
                return Err(ConfigError::Invalid(format!(
                    "user_speed_kmh {v} outside the supported 3-10 km/h"
                )));
            }
        }
        if self.inference_steps == 0 {
            return Err(ConfigError::Invalid("inference_steps must be positive".into()));
        }
        self.train
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(())
    }

    /// Resolve the outage spec into concrete failed sites.
    pub fn resolve_outage<R: Rng>(&self, rng: &mut R) -> OutageScenario {
        match &self.outage {
            OutageSpec::Sites(sites) => OutageScenario::sites(sites.iter().copied()),
            OutageSpec::Count(l) => {
                let n_sites = crate::layout::hex_site_count(self.layout.n_rings);
                let off = rand::seq::index::sample(rng, n_sites, *l)
                    .into_iter()
                    .collect();
                OutageScenario { off_sites: off }
            }
        }
    }

    /// The outage draw every run subcommand shares for a given seed.
    pub fn outage_for_run(&self) -> OutageScenario {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(self.seed ^ 0x6f75_7461_6765);
        self.resolve_outage(&mut rng)
    }

    /// Byte-stable snapshot of every key, sufficient to reproduce a run.
    pub fn snapshot_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# scenario snapshot (all keys explicit)");
        let _ = writeln!(s, "n_rings = {}", self.layout.n_rings);
        let _ = writeln!(s, "inter_site_distance_m = {}", self.layout.inter_site_distance_m);
        let _ = writeln!(s, "n_users = {}", self.layout.n_users);
        let _ = writeln!(s, "bs_height_m = {}", self.layout.bs_height_m);
        let _ = writeln!(s, "ut_height_m = {}", self.layout.ut_height_m);
        let _ = writeln!(s, "carrier_frequency_ghz = {}", self.setup.radio.carrier_frequency_ghz);
        let _ = writeln!(s, "effective_env_height_m = {}", self.setup.radio.effective_env_height_m);
        let _ = writeln!(s, "antenna_max_gain_dbi = {}", self.setup.radio.g_max_dbi);
        let _ = writeln!(s, "theta_3db_deg = {}", self.setup.radio.theta_3db_deg);
        let _ = writeln!(s, "phi_3db_deg = {}", self.setup.radio.phi_3db_deg);
        let _ = writeln!(s, "sll_v_db = {}", self.setup.radio.sll_v_db);
        let _ = writeln!(s, "sll_h_db = {}", self.setup.radio.sll_h_db);
        let _ = writeln!(s, "user_antenna_gain_dbi = {}", self.setup.radio.g_r_dbi);
        let _ = writeln!(s, "light_speed_mps = {}", self.setup.radio.light_speed_mps);
        let _ = writeln!(
            s,
            "channel = {}",
            match self.setup.radio.channel {
                ChannelModel::Los => "los",
                ChannelModel::Nlos => "nlos",
            }
        );
        let _ = writeln!(s, "prb_bandwidth_hz = {}", self.setup.link.prb_bandwidth_hz);
        let _ = writeln!(s, "bits_per_symbol = {}", self.setup.link.bits_per_symbol);
        let _ = writeln!(s, "prbs_per_cell = {}", self.setup.link.prbs_per_cell);
        let _ = writeln!(s, "noise_per_prb_dbm = {}", self.setup.link.noise_per_prb_dbm);
        let _ = writeln!(s, "rsrp_min_dbm = {}", self.setup.link.rsrp_min_dbm);
        let _ = writeln!(s, "demand_bps = {}", self.setup.link.demand_bps);
        let _ = writeln!(
            s,
            "max_users_per_cell = {}",
            self.setup
                .link
                .max_users_per_cell
                .map(|v| v.to_string())
                .unwrap_or_else(|| "auto".into())
        );
        let _ = writeln!(s, "p_coverage_hat = {}", self.setup.thresholds.p_cov_hat);
        let _ = writeln!(s, "p_service_hat = {}", self.setup.thresholds.p_serv_hat);
        let _ = writeln!(s, "good_rsrp_min_dbm = {}", self.setup.thresholds.good_rsrp_min_dbm);
        let _ = writeln!(s, "initial_etilt_deg = {}", self.setup.initial_etilt_deg);
        let _ = writeln!(s, "initial_power_dbm = {}", self.setup.initial_power_dbm);
        let _ = writeln!(s, "normalize_reward = {}", self.setup.reward.normalize);
        match &self.outage {
            OutageSpec::Count(l) => {
                let _ = writeln!(s, "outage_l = {l}");
            }
            OutageSpec::Sites(sites) => {
                let list: Vec<String> = sites.iter().map(|v| v.to_string()).collect();
                let _ = writeln!(s, "outage_sites = {}", list.join(","));
            }
        }
        let _ = writeln!(s, "duration_s = {}", self.timeline.duration_s);
        let _ = writeln!(s, "outage_at_s = {}", self.timeline.outage_at_s);
        let _ = writeln!(s, "trigger_delay_s = {}", self.timeline.trigger_delay_s);
        let _ = writeln!(s, "actions_budget = {}", self.timeline.actions_budget);
        let _ = writeln!(s, "tick_s = {}", self.timeline.tick_s);
        let _ = writeln!(
            s,
            "user_speed_kmh = {}",
            self.user_speed_kmh
                .map(|v| v.to_string())
                .unwrap_or_else(|| "off".into())
        );
        let _ = writeln!(s, "policy = {}", self.policy.as_str());
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "inference_steps = {}", self.inference_steps);
        let _ = writeln!(s, "episodes = {}", self.train.episodes);
        let _ = writeln!(s, "steps_per_episode = {}", self.train.steps_per_episode);
        let _ = writeln!(s, "gamma = {}", self.train.gamma);
        let _ = writeln!(s, "learning_rate = {}", self.train.learning_rate);
        let _ = writeln!(s, "minibatch = {}", self.train.minibatch);
        let _ = writeln!(s, "replay_capacity = {}", self.train.replay_capacity);
        let _ = writeln!(s, "target_sync = {}", self.train.target_sync);
        let _ = writeln!(s, "epsilon_start = {}", self.train.epsilon_start);
        let _ = writeln!(s, "epsilon_end = {}", self.train.epsilon_end);
        let _ = writeln!(s, "epsilon_decay_frac = {}", self.train.epsilon_decay_frac);
        let _ = writeln!(s, "l_max = {}", self.train.l_max);
        let _ = writeln!(s, "replay_warmup = {}", self.train.replay_warmup);
        let hidden: Vec<String> = self.train.hidden.iter().map(|v| v.to_string()).collect();
        let _ = writeln!(s, "hidden = {}", hidden.join(","));
        let _ = writeln!(s, "grad_clip_norm = {}", self.train.grad_clip_norm);
        let _ = writeln!(s, "checkpoint_every = {}", self.train.checkpoint_every);
        s
    }
}
