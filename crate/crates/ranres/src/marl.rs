//! Multi-agent deep Q-learning: one agent per site, each with its own
//! replay memory and target network, trained against the shared global
//! reward of the environment.
//!
//! Environment stepping is serialized; the per-agent gradient steps within
//! one environment step run in parallel because agents share no mutable
//! state.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::checkpoint::{self, CheckpointError};
use crate::env::{decode_action, inject_outage, EnvError, OutageScenario, SimSetup, SiteAction, ACTIONS_PER_SITE};
use crate::layout::NetworkLayout;
use crate::nn::{Mlp, NnError};
use crate::trajectory::{TrajStep, Trajectory};

#[derive(Debug, Error)]
pub enum MarlError {
    #[error("replay holds {have} transitions, need {need}")]
    InsufficientReplay { have: usize, need: usize },
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("checkpoint does not match the scenario: {0}")]
    CheckpointMismatch(String),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One stored experience tuple.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: Box<[f64]>,
    pub action: u16,
    pub reward: f64,
    pub next_state: Box<[f64]>,
    pub terminal: bool,
}

/// Fixed-capacity ring buffer of transitions with uniform sampling
/// (without replacement inside a minibatch).
#[derive(Debug, Clone)]
pub struct ReplayMemory {
    buf: Vec<Transition>,
    capacity: usize,
    next: usize,
}

impl ReplayMemory {
    pub fn new(capacity: usize) -> Self {
        Self {
            buf: Vec::new(),
            capacity: capacity.max(1),
            next: 0,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.buf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buf.is_empty()
    }

    pub fn push(&mut self, t: Transition) {
        if self.buf.len() < self.capacity {
            self.buf.push(t);
        } else {
            self.buf[self.next] = t;
        }
        self.next = (self.next + 1) % self.capacity;
    }

    pub fn get(&self, index: usize) -> &Transition {
        &self.buf[index]
    }

    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        self.buf.iter()
    }

    /// Uniform sample of distinct stored indices.
    pub fn sample_indices<R: Rng>(&self, rng: &mut R, amount: usize) -> Vec<usize> {
        rand::seq::index::sample(rng, self.buf.len(), amount).into_vec()
    }
}

/// Linear exploration schedule clamped at its endpoints.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpsilonSchedule {
    pub start: f64,
    pub end: f64,
    pub decay_steps: u64,
}

impl EpsilonSchedule {
    pub fn value(&self, step: u64) -> f64 {
        if self.decay_steps == 0 || step >= self.decay_steps {
            return self.end;
        }
        let frac = step as f64 / self.decay_steps as f64;
        self.start + (self.end - self.start) * frac
    }
}

/// One site's learner: online and target networks, replay, and the
/// agent-local random stream.
#[derive(Debug, Clone)]
pub struct AgentBundle {
    pub site_id: usize,
    pub online: Mlp,
    pub target: Mlp,
    pub replay: ReplayMemory,
    pub grad_steps: u64,
    rng: ChaCha8Rng,
}

impl AgentBundle {
    pub fn new(
        site_id: usize,
        dims: &[usize],
        replay_capacity: usize,
        seed: u64,
    ) -> Result<Self, MarlError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let online = Mlp::new(dims, &mut rng)?;
        let target = online.clone();
        Ok(Self {
            site_id,
            online,
            target,
            replay: ReplayMemory::new(replay_capacity),
            grad_steps: 0,
            rng,
        })
    }

    /// Rebuild an inference-only agent from checkpointed weights.
    pub fn from_params(site_id: usize, online: Mlp) -> Self {
        let target = online.clone();
        Self {
            site_id,
            online,
            target,
            replay: ReplayMemory::new(1),
            grad_steps: 0,
            rng: ChaCha8Rng::seed_from_u64(0),
        }
    }
}

/// Hyper-parameters of the training loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub episodes: usize,
    pub steps_per_episode: usize,
    pub gamma: f64,
    pub learning_rate: f64,
    pub minibatch: usize,
    pub replay_capacity: usize,
    /// Target-network sync period, in gradient steps.
    pub target_sync: u64,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    /// Fraction of total environment steps over which epsilon decays.
    pub epsilon_decay_frac: f64,
    /// Most sites that may fail per episode; 0 disables outage injection.
    pub l_max: usize,
    /// Transitions collected before learning starts.
    pub replay_warmup: usize,
    pub hidden: Vec<usize>,
    pub grad_clip_norm: f64,
    /// Emit a checkpoint every this many episodes; 0 keeps only the final.
    pub checkpoint_every: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            episodes: 1000,
            steps_per_episode: 500,
            gamma: 0.95,
            learning_rate: 1e-3,
            minibatch: 64,
            replay_capacity: 100_000,
            target_sync: 500,
            epsilon_start: 1.0,
            epsilon_end: 0.05,
            epsilon_decay_frac: 0.5,
            l_max: 5,
            replay_warmup: 1000,
            hidden: vec![256, 256],
            grad_clip_norm: 10.0,
            checkpoint_every: 0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), MarlError> {
        let bad = |msg: &str| Err(MarlError::InvalidConfig(msg.into()));
        if self.episodes == 0 || self.steps_per_episode == 0 {
            return bad("episodes and steps_per_episode must be positive");
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return bad("gamma must lie in [0, 1]");
        }
        if !(self.learning_rate > 0.0) {
            return bad("learning_rate must be positive");
        }
        if self.minibatch == 0 || self.replay_capacity == 0 {
            return bad("minibatch and replay_capacity must be positive");
        }
        if self.target_sync == 0 {
            return bad("target_sync must be positive");
        }
        if !(0.0..=1.0).contains(&self.epsilon_start)
            || !(0.0..=1.0).contains(&self.epsilon_end)
            || !(0.0..=1.0).contains(&self.epsilon_decay_frac)
        {
            return bad("epsilon parameters must lie in [0, 1]");
        }
        if !(self.grad_clip_norm > 0.0) {
            return bad("grad_clip_norm must be positive");
        }
        Ok(())
    }

    pub fn network_dims(&self, n_cells: usize) -> Vec<usize> {
        let mut dims = Vec::with_capacity(self.hidden.len() + 2);
        dims.push(2 * n_cells);
        dims.extend(&self.hidden);
        dims.push(ACTIONS_PER_SITE);
        dims
    }
}

/// The Q-network forward pass over the flattened normalized state.
pub fn qnet_forward(net: &Mlp, state_view: &[f64]) -> Result<Vec<f64>, MarlError> {
    Ok(net.forward(state_view)?)
}

/// Greedy action with lowest-index tie breaking.
pub fn greedy_action(net: &Mlp, state_view: &[f64]) -> Result<u16, MarlError> {
    let q = qnet_forward(net, state_view)?;
    let mut best = 0usize;
    for (i, v) in q.iter().enumerate() {
        if *v > q[best] {
            best = i;
        }
    }
    Ok(best as u16)
}

/// Epsilon-greedy action selection.
pub fn select_action<R: Rng>(
    net: &Mlp,
    state_view: &[f64],
    epsilon: f64,
    rng: &mut R,
) -> Result<u16, MarlError> {
    if rng.random::<f64>() < epsilon {
        return Ok(rng.random_range(0..net.n_outputs()) as u16);
    }
    greedy_action(net, state_view)
}

/// One gradient-descent step on a uniformly sampled minibatch: Bellman
/// targets from the lagged network (plain rewards on terminal
/// transitions), squared-error loss on the chosen actions, and the
/// periodic target sync. Returns the pre-step loss.
pub fn train_step(
    agent: &mut AgentBundle,
    minibatch: usize,
    gamma: f64,
    learning_rate: f64,
    grad_clip_norm: f64,
    target_sync: u64,
) -> Result<f64, MarlError> {
    let AgentBundle {
        online,
        target,
        replay,
        grad_steps,
        rng,
        ..
    } = agent;
    if replay.len() < minibatch {
        return Err(MarlError::InsufficientReplay {
            have: replay.len(),
            need: minibatch,
        });
    }
    let indices = replay.sample_indices(rng, minibatch);
    let mut batch: Vec<(&[f64], usize, f64)> = Vec::with_capacity(minibatch);
    for i in indices {
        let tr = replay.get(i);
        let y = if tr.terminal {
            tr.reward
        } else {
            let next_q = target.forward(&tr.next_state)?;
            let max_next = next_q.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            tr.reward + gamma * max_next
        };
        batch.push((tr.state.as_ref(), tr.action as usize, y));
    }
    let (loss, grads) = online.q_loss_and_grads(&batch)?;
    online.apply_grads(&grads, learning_rate, grad_clip_norm);
    *grad_steps += 1;
    if *grad_steps % target_sync == 0 {
        *target = online.clone();
    }
    Ok(loss)
}

/// Per-episode line of the training log.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpisodeLog {
    pub episode: usize,
    pub off_sites: Vec<usize>,
    pub total_reward: f64,
    /// Mean loss over all gradient steps this episode, absent before the
    /// replay warm-up completes.
    pub mean_loss: Option<f64>,
    pub p_coverage: f64,
    pub p_service: f64,
    pub coverage_state: char,
    pub service_state: char,
}

/// Everything training produces.
pub struct TrainResult {
    pub agents: Vec<AgentBundle>,
    pub episodes: Vec<EpisodeLog>,
    /// Loss of every gradient step, per site.
    pub step_losses: Vec<Vec<f64>>,
}

fn agent_seed(seed: u64, site_id: usize) -> u64 {
    seed.wrapping_add((site_id as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// Train one DQN agent per site with random outage injection per episode.
/// Agents at failed sites sit each episode out; active agents act every
/// step, store the shared global reward with their own action, and take
/// one gradient step per environment step once warm-up is reached.
pub fn train(
    layout: &NetworkLayout,
    setup: &SimSetup,
    cfg: &TrainConfig,
    out_dir: Option<&Path>,
) -> Result<TrainResult, MarlError> {
    cfg.validate()?;
    let n_sites = layout.n_sites();
    let dims = cfg.network_dims(layout.n_cells());
    let mut agents = (0..n_sites)
        .map(|site| AgentBundle::new(site, &dims, cfg.replay_capacity, agent_seed(cfg.seed, site)))
        .collect::<Result<Vec<_>, _>>()?;

    let mut outage_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let total_steps = (cfg.episodes * cfg.steps_per_episode) as u64;
    let schedule = EpsilonSchedule {
        start: cfg.epsilon_start,
        end: cfg.epsilon_end,
        decay_steps: (total_steps as f64 * cfg.epsilon_decay_frac).round() as u64,
    };
    let warmup = cfg.replay_warmup.max(cfg.minibatch);

    let mut episodes = Vec::with_capacity(cfg.episodes);
    let mut step_losses: Vec<Vec<f64>> = vec![Vec::new(); n_sites];
    let mut global_step: u64 = 0;

    for episode in 0..cfg.episodes {
        let scenario = if cfg.l_max >= 1 && n_sites >= 3 {
            inject_outage(&mut outage_rng, n_sites, cfg.l_max.min(n_sites - 2))?
        } else {
            OutageScenario::none()
        };
        let mut env = setup.make_env(layout, &scenario)?;
        let active = env.active_sites();
        let mut total_reward = 0.0;
        let mut episode_losses: Vec<f64> = Vec::new();

        for t in 0..cfg.steps_per_episode {
            let epsilon = schedule.value(global_step);
            let view = env.state().normalized_view();
            let mut actions: BTreeMap<usize, SiteAction> = BTreeMap::new();
            for &site in &active {
                let agent = &mut agents[site];
                let index = select_action(&agent.online, &view, epsilon, &mut agent.rng)?;
                actions.insert(site, decode_action(index)?);
            }
            let outcome = env.step(&actions)?;
            total_reward += outcome.reward;
            let terminal = t + 1 == cfg.steps_per_episode;
            let next_view = env.state().normalized_view();
            for &site in &active {
                agents[site].replay.push(Transition {
                    state: view.clone().into_boxed_slice(),
                    action: actions[&site].index(),
                    reward: outcome.reward,
                    next_state: next_view.clone().into_boxed_slice(),
                    terminal,
                });
            }

            let mut learners: Vec<&mut AgentBundle> = agents
                .iter_mut()
                .filter(|a| active.contains(&a.site_id) && a.replay.len() >= warmup)
                .collect();
            let losses: Result<Vec<(usize, f64)>, MarlError> = learners
                .par_iter_mut()
                .map(|agent| {
                    let loss = train_step(
                        agent,
                        cfg.minibatch,
                        cfg.gamma,
                        cfg.learning_rate,
                        cfg.grad_clip_norm,
                        cfg.target_sync,
                    )?;
                    Ok((agent.site_id, loss))
                })
                .collect();
            for (site, loss) in losses? {
                step_losses[site].push(loss);
                episode_losses.push(loss);
            }
            global_step += 1;
        }

        let snapshot = env.snapshot();
        episodes.push(EpisodeLog {
            episode,
            off_sites: scenario.off_sites.iter().copied().collect(),
            total_reward,
            mean_loss: if episode_losses.is_empty() {
                None
            } else {
                Some(episode_losses.iter().sum::<f64>() / episode_losses.len() as f64)
            },
            p_coverage: snapshot.p_coverage,
            p_service: snapshot.p_service,
            coverage_state: snapshot.coverage_state.letter(),
            service_state: snapshot.service_state.letter(),
        });

        if let Some(dir) = out_dir {
            if cfg.checkpoint_every > 0 && (episode + 1) % cfg.checkpoint_every == 0 {
                let path = dir.join(format!("checkpoint_ep{:05}.bin", episode + 1));
                checkpoint::save(&path, &agents, layout.n_cells())?;
            }
        }
    }

    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)?;
        checkpoint::save(&dir.join("model.bin"), &agents, layout.n_cells())?;
        checkpoint::write_sidecar(&dir.join("model.json"), cfg)?;
        let mut log = String::new();
        for e in &episodes {
            log.push_str(&serde_json::to_string(e).expect("episode log serializes"));
            log.push('\n');
        }
        std::fs::write(dir.join("train_log.jsonl"), log)?;
    }

    Ok(TrainResult {
        agents,
        episodes,
        step_losses,
    })
}

/// Greedy rollout of the trained agents from a post-outage state.
pub fn infer(
    agents: &[AgentBundle],
    layout: &NetworkLayout,
    setup: &SimSetup,
    scenario: &OutageScenario,
    k_steps: usize,
) -> Result<Trajectory, MarlError> {
    infer_masked(agents, layout, setup, scenario, k_steps, None, "multi_agent")
}

/// Greedy rollout where only `acting_sites` (when given) may act; all
/// other operational sites hold their configuration.
pub fn infer_masked(
    agents: &[AgentBundle],
    layout: &NetworkLayout,
    setup: &SimSetup,
    scenario: &OutageScenario,
    k_steps: usize,
    acting_sites: Option<&BTreeSet<usize>>,
    policy: &str,
) -> Result<Trajectory, MarlError> {
    validate_agents(agents, layout)?;
    let mut env = setup.make_env(layout, scenario)?;
    let initial_report = env.report().clone();
    let initial_snapshot = env.snapshot().clone();
    let mut steps = Vec::with_capacity(k_steps);
    for step in 0..k_steps {
        let view = env.state().normalized_view();
        let mut actions: BTreeMap<usize, SiteAction> = BTreeMap::new();
        for site in env.active_sites() {
            let act = match acting_sites {
                Some(mask) if !mask.contains(&site) => SiteAction::no_op(),
                _ => decode_action(greedy_action(&agents[site].online, &view)?)?,
            };
            actions.insert(site, act);
        }
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
        policy: policy.to_string(),
        scenario: scenario.clone(),
        initial_report,
        initial_snapshot,
        steps,
    })
}

pub(crate) fn validate_agents(
    agents: &[AgentBundle],
    layout: &NetworkLayout,
) -> Result<(), MarlError> {
    if agents.len() != layout.n_sites() {
        return Err(MarlError::CheckpointMismatch(format!(
            "{} agents for {} sites",
            agents.len(),
            layout.n_sites()
        )));
    }
    for (i, agent) in agents.iter().enumerate() {
        if agent.site_id != i {
            return Err(MarlError::CheckpointMismatch(format!(
                "agent at position {i} carries site id {}",
                agent.site_id
            )));
        }
        if agent.online.n_inputs() != 2 * layout.n_cells() {
            return Err(MarlError::CheckpointMismatch(format!(
                "network expects {} inputs, layout provides {}",
                agent.online.n_inputs(),
                2 * layout.n_cells()
            )));
        }
        if agent.online.n_outputs() != ACTIONS_PER_SITE {
            return Err(MarlError::CheckpointMismatch(format!(
                "network emits {} actions, expected {ACTIONS_PER_SITE}",
                agent.online.n_outputs()
            )));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layout::build_hex_layout;

    #[test]
    fn epsilon_schedule_is_linear_then_flat() {
        let s = EpsilonSchedule {
            start: 1.0,
            end: 0.05,
            decay_steps: 100,
        };
        assert_eq!(s.value(0), 1.0);
        assert!((s.value(50) - 0.525).abs() < 1e-12);
        assert_eq!(s.value(100), 0.05);
        assert_eq!(s.value(10_000), 0.05);
    }

    fn transition(marker: f64, dim: usize) -> Transition {
        Transition {
            state: vec![marker; dim].into_boxed_slice(),
            action: 0,
            reward: marker,
            next_state: vec![marker; dim].into_boxed_slice(),
            terminal: false,
        }
    }

    #[test]
    fn replay_ring_evicts_oldest() {
        let mut replay = ReplayMemory::new(10);
        for i in 0..15 {
            replay.push(transition(i as f64, 2));
        }
        assert_eq!(replay.len(), 10);
        let stored: BTreeSet<i64> = replay.iter().map(|t| t.reward as i64).collect();
        assert_eq!(stored, (5..15).collect::<BTreeSet<i64>>());
    }

    #[test]
    fn replay_sampling_is_uniform_without_replacement() {
        let mut replay = ReplayMemory::new(64);
        for i in 0..64 {
            replay.push(transition(i as f64, 2));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let mut hits = vec![0usize; 64];
        for _ in 0..10_000 {
            let sample = replay.sample_indices(&mut rng, 16);
            let distinct: BTreeSet<usize> = sample.iter().copied().collect();
            assert_eq!(distinct.len(), 16);
            for i in sample {
                hits[i] += 1;
            }
        }
        // Every index is reachable; counts concentrate near 2500 each.
        assert!(hits.iter().all(|&h| h > 0));
        for h in hits {
            assert!((h as f64 - 2500.0).abs() < 500.0, "count {h}");
        }
    }

    #[test]
    fn select_action_examples() {
        let mut net = Mlp::zeros(&[4, 729]).unwrap();
        let view = [0.5, 0.5, 0.5, 0.5];

        // Pure exploration: histogram over the 9 digit groups is uniform
        // within 2 percent, and the chi-square statistic stays sane.
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut counts = vec![0usize; 729];
        let draws = 100_000;
        for _ in 0..draws {
            let a = select_action(&net, &view, 1.0, &mut rng).unwrap() as usize;
            counts[a] += 1;
        }
        let expected = draws as f64 / 729.0;
        let chi2: f64 = counts
            .iter()
            .map(|&c| {
                let d = c as f64 - expected;
                d * d / expected
            })
            .sum();
        // dof = 728, std = sqrt(2 * 728) ~ 38; allow five sigma.
        assert!(chi2 < 728.0 + 5.0 * 38.2, "chi-square {chi2}");
        for group in 0..9 {
            let total: usize = (0..729).filter(|a| a % 9 == group).map(|a| counts[a]).sum();
            let frac = total as f64 / draws as f64;
            assert!((frac - 1.0 / 9.0).abs() < 0.02 / 9.0 + 0.002, "group {group}: {frac}");
        }

        // Pure exploitation with a unique maximum.
        net.layers[0].b[17] = 1.0;
        for _ in 0..50 {
            assert_eq!(select_action(&net, &view, 0.0, &mut rng).unwrap(), 17);
        }

        // Ties break to the lowest index.
        net.layers[0].b[3] = 2.0;
        net.layers[0].b[40] = 2.0;
        assert_eq!(select_action(&net, &view, 0.0, &mut rng).unwrap(), 3);
    }

    #[test]
    fn greedy_action_invariant_under_bias_shift() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let net = Mlp::new(&[6, 32, 729], &mut rng).unwrap();
        let view: Vec<f64> = (0..6).map(|_| rng.random_range(0.0..1.0)).collect();
        let before = greedy_action(&net, &view).unwrap();
        let mut shifted = net.clone();
        for b in &mut shifted.layers.last_mut().unwrap().b {
            *b += 123.456;
        }
        assert_eq!(greedy_action(&shifted, &view).unwrap(), before);
    }

    fn filled_agent(dims: &[usize], n: usize) -> AgentBundle {
        let mut agent = AgentBundle::new(0, dims, 1000, 99).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(123);
        for _ in 0..n {
            agent.replay.push(Transition {
                state: (0..dims[0])
                    .map(|_| rng.random_range(0.0..1.0))
                    .collect::<Vec<f64>>()
                    .into_boxed_slice(),
                action: rng.random_range(0..dims[dims.len() - 1]) as u16,
                reward: rng.random_range(-1.0..1.0),
                next_state: (0..dims[0])
                    .map(|_| rng.random_range(0.0..1.0))
                    .collect::<Vec<f64>>()
                    .into_boxed_slice(),
                terminal: rng.random_range(0.0..1.0) < 0.1,
            });
        }
        agent
    }

    #[test]
    fn train_step_requires_enough_replay() {
        let mut agent = filled_agent(&[4, 8, 9], 3);
        assert!(matches!(
            train_step(&mut agent, 8, 0.95, 1e-3, 10.0, 100),
            Err(MarlError::InsufficientReplay { have: 3, need: 8 })
        ));
    }

    #[test]
    fn train_step_with_gamma_zero_targets_rewards() {
        // With gamma = 0 the target is the reward itself; training a
        // single repeated transition drives its Q-value toward the reward.
        let dims = [2, 8, 4];
        let mut agent = AgentBundle::new(0, &dims, 100, 5).unwrap();
        let state = vec![0.3, 0.8].into_boxed_slice();
        for _ in 0..32 {
            agent.replay.push(Transition {
                state: state.clone(),
                action: 2,
                reward: 0.7,
                next_state: state.clone(),
                terminal: false,
            });
        }
        let mut last = f64::INFINITY;
        for _ in 0..400 {
            last = train_step(&mut agent, 16, 0.0, 0.05, 10.0, 50).unwrap();
        }
        assert!(last < 1e-3, "loss {last}");
        let q = agent.online.forward(&state).unwrap();
        assert!((q[2] - 0.7).abs() < 0.05, "q {q:?}");
    }

    #[test]
    fn terminal_targets_equal_rewards_exactly() {
        let dims = [2, 4, 3];
        let mut agent = AgentBundle::new(0, &dims, 10, 7).unwrap();
        // Make the target network scream so a non-terminal target would
        // differ wildly from the raw reward.
        for b in &mut agent.target.layers.last_mut().unwrap().b {
            *b = 1e6;
        }
        let state = vec![0.1, 0.2].into_boxed_slice();
        agent.replay.push(Transition {
            state: state.clone(),
            action: 0,
            reward: 0.25,
            next_state: state.clone(),
            terminal: true,
        });
        // Fit the single terminal transition: converges to the plain reward.
        for _ in 0..500 {
            train_step(&mut agent, 1, 0.95, 0.05, 10.0, 1_000_000).unwrap();
        }
        let q = agent.online.forward(&state).unwrap();
        assert!((q[0] - 0.25).abs() < 0.01, "q {q:?}");
    }

    #[test]
    fn target_network_is_stable_between_syncs() {
        let mut agent = filled_agent(&[4, 8, 9], 64);
        let sync = 10u64;
        let before = agent.target.digest();
        for step in 1..=25u64 {
            train_step(&mut agent, 16, 0.9, 1e-2, 10.0, sync).unwrap();
            if step < sync {
                assert_eq!(agent.target.digest(), before);
                assert_ne!(agent.online.digest(), agent.target.digest());
            }
            if step == sync {
                assert_eq!(agent.target.digest(), agent.online.digest());
            }
        }
    }

    #[test]
    fn minimal_train_run_stores_at_most_one_transition_per_agent() {
        let layout = build_hex_layout(1, 300.0, 0, 20).unwrap();
        let cfg = TrainConfig {
            episodes: 1,
            steps_per_episode: 1,
            hidden: vec![8],
            replay_warmup: 1000,
            l_max: 5,
            seed: 3,
            ..TrainConfig::default()
        };
        let result = train(&layout, &SimSetup::default(), &cfg, None).unwrap();
        let total: usize = result.agents.iter().map(|a| a.replay.len()).sum();
        assert!(total <= 7);
        assert!(total >= 2); // at least two sites survive any <=5-site outage
        assert_eq!(result.episodes.len(), 1);
        // Terminal flag set on the only step of the episode.
        for agent in &result.agents {
            for t in agent.replay.iter() {
                assert!(t.terminal);
            }
        }
    }

    #[test]
    fn identical_seeds_reproduce_identical_logs() {
        let layout = build_hex_layout(1, 300.0, 1, 30).unwrap();
        let cfg = TrainConfig {
            episodes: 3,
            steps_per_episode: 4,
            hidden: vec![8],
            minibatch: 4,
            replay_warmup: 4,
            seed: 11,
            ..TrainConfig::default()
        };
        let setup = SimSetup::default();
        let a = train(&layout, &setup, &cfg, None).unwrap();
        let b = train(&layout, &setup, &cfg, None).unwrap();
        assert_eq!(
            serde_json::to_string(&a.episodes).unwrap(),
            serde_json::to_string(&b.episodes).unwrap()
        );
        assert_eq!(a.step_losses, b.step_losses);
        for (x, y) in a.agents.iter().zip(&b.agents) {
            assert_eq!(x.online.digest(), y.online.digest());
        }
    }

    #[test]
    fn shared_reward_is_identical_across_agents() {
        let layout = build_hex_layout(1, 300.0, 2, 30).unwrap();
        let cfg = TrainConfig {
            episodes: 2,
            steps_per_episode: 5,
            hidden: vec![8],
            l_max: 1,
            seed: 21,
            ..TrainConfig::default()
        };
        let result = train(&layout, &SimSetup::default(), &cfg, None).unwrap();
        // Agents active in the same episodes stored the same rewards.
        let active: Vec<&AgentBundle> = result
            .agents
            .iter()
            .filter(|a| a.replay.len() == 10)
            .collect();
        assert!(active.len() >= 2);
        for pair in active.windows(2) {
            let r0: Vec<f64> = pair[0].replay.iter().map(|t| t.reward).collect();
            let r1: Vec<f64> = pair[1].replay.iter().map(|t| t.reward).collect();
            assert_eq!(r0, r1);
        }
    }

    #[test]
    fn infer_rolls_out_k_steps() {
        let layout = build_hex_layout(1, 300.0, 5, 25).unwrap();
        let dims = TrainConfig {
            hidden: vec![8],
            ..TrainConfig::default()
        }
        .network_dims(layout.n_cells());
        let agents: Vec<AgentBundle> = (0..7)
            .map(|s| AgentBundle::new(s, &dims, 1, agent_seed(4, s)).unwrap())
            .collect();
        let scenario = OutageScenario::sites([3]);
        let traj = infer(&agents, &layout, &SimSetup::default(), &scenario, 10).unwrap();
        assert_eq!(traj.steps.len(), 10);
        assert_eq!(traj.policy, "multi_agent");
        for s in &traj.steps {
            assert_eq!(s.actions.len(), 6);
            assert!(!s.actions.contains_key(&3));
        }
    }

    #[test]
    fn no_op_policy_leaves_state_unchanged() {
        // A checkpoint whose bias singles out the no-op action holds the
        // network configuration exactly still.
        let layout = build_hex_layout(1, 300.0, 6, 25).unwrap();
        let dims = vec![42, 729];
        let agents: Vec<AgentBundle> = (0..7)
            .map(|s| {
                let mut net = Mlp::zeros(&dims).unwrap();
                net.layers[0].b[crate::env::NO_OP_ACTION as usize] = 1.0;
                AgentBundle::from_params(s, net)
            })
            .collect();
        let scenario = OutageScenario::sites([2]);
        let traj = infer(&agents, &layout, &SimSetup::default(), &scenario, 1).unwrap();
        assert_eq!(traj.steps.len(), 1);
        assert_eq!(traj.steps[0].reward, 0.0);
        for (_, &a) in &traj.steps[0].actions {
            assert_eq!(a, crate::env::NO_OP_ACTION);
        }
        assert_eq!(
            traj.steps[0].snapshot.p_coverage,
            traj.initial_snapshot.p_coverage
        );
    }

    #[test]
    fn infer_rejects_mismatched_checkpoints() {
        let layout = build_hex_layout(1, 300.0, 5, 10).unwrap();
        let agents: Vec<AgentBundle> = (0..3)
            .map(|s| AgentBundle::new(s, &[42, 8, 729], 1, s as u64).unwrap())
            .collect();
        assert!(matches!(
            infer(&agents, &layout, &SimSetup::default(), &OutageScenario::none(), 1),
            Err(MarlError::CheckpointMismatch(_))
        ));
        let wrong_dims: Vec<AgentBundle> = (0..7)
            .map(|s| AgentBundle::new(s, &[10, 8, 729], 1, s as u64).unwrap())
            .collect();
        assert!(matches!(
            infer(&wrong_dims, &layout, &SimSetup::default(), &OutageScenario::none(), 1),
            Err(MarlError::CheckpointMismatch(_))
        ));
    }
}
