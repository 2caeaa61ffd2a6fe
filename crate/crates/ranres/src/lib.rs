//! # ranres
//!
//! A desk-scale 5G RAN simulator with a multi-agent deep-Q resilience
//! optimizer. The crate models a sectorized small-cell network with
//! standardized urban-micro propagation, injects base-station outages, and
//! trains one DQN agent per site to jointly retune antenna electrical tilt
//! and transmit power so that coverage and service availability recover
//! while total throughput stays high.
//!
//! Module map:
//! - [`layout`]: hexagonal multi-site geometry, user placement, adjacency
//! - [`radio`]: path loss, arrival angles, sectorized 3D antenna gain, RSRP
//! - [`link`]: cell attachment, interference, SINR, per-user throughput
//! - [`resilience`]: availabilities, coverage/service state machine, gate
//! - [`env`]: the MDP: state encoding, 729-action space, rewards, outages
//! - [`marl`]: per-site Q-networks, replay, training and inference loops
//! - [`baselines`]: no-action and neighbor-only reference policies
//! - [`config`] / [`dynamics`]: scenario files, the timed outage runner,
//!   metrics export

pub mod baselines;
pub mod checkpoint;
pub mod config;
pub mod dynamics;
pub mod env;
pub mod layout;
pub mod link;
pub mod marl;
pub mod nn;
pub mod radio;
pub mod resilience;
pub mod trajectory;
pub mod units;
