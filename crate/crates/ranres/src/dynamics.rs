//! The timed evaluation runner: simulate the network tick by tick, switch
//! the failed sites off mid-run, detect the outage through the resilience
//! classifier, trigger the chosen policy after the configured delay, and
//! emit one metrics record per tick.

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::baselines::neighbor_mask;
use crate::config::{PolicyKind, ScenarioConfig};
use crate::env::{apply_actions, decode_action, encode_state, EnvError, OutageScenario, SiteAction};
use crate::layout::{build_hex_layout_with, LayoutError, NetworkLayout};
use crate::link::{evaluate_with_geometry, LinkError, LinkGeometry};
use crate::marl::{greedy_action, AgentBundle, MarlError};
use crate::resilience::{ResilienceError, ResilienceSnapshot, ResilienceState};

#[derive(Debug, Error)]
pub enum DynamicsError {
    #[error("policy {0} needs trained checkpoints")]
    MissingCheckpoints(&'static str),
    #[error(transparent)]
    Layout(#[from] LayoutError),
    #[error(transparent)]
    Link(#[from] LinkError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Marl(#[from] MarlError),
    #[error(transparent)]
    Resilience(#[from] ResilienceError),
    #[error("metrics CSV line {line}: {msg}")]
    CsvParse { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One per-tick row of the metrics stream.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRecord {
    pub t_s: u64,
    pub mean_rsrp_dbm: f64,
    pub mean_throughput_bps: f64,
    pub p_coverage: f64,
    pub p_service: f64,
    pub coverage_state: ResilienceState,
    pub service_state: ResilienceState,
    pub rsrp_good: f64,
    pub rsrp_fair: f64,
    pub rsrp_poor: f64,
}

impl MetricsRecord {
    fn from_snapshot(t_s: u64, mean_rsrp: f64, mean_th: f64, snap: &ResilienceSnapshot) -> Self {
        Self {
            t_s,
            mean_rsrp_dbm: mean_rsrp,
            mean_throughput_bps: mean_th,
            p_coverage: snap.p_coverage,
            p_service: snap.p_service,
            coverage_state: snap.coverage_state,
            service_state: snap.service_state,
            rsrp_good: snap.rsrp_mix.good,
            rsrp_fair: snap.rsrp_mix.fair,
            rsrp_poor: snap.rsrp_mix.poor,
        }
    }
}

/// Bookkeeping of one dynamic run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunInfo {
    pub off_sites: Vec<usize>,
    pub outage_tick: u64,
    pub detection_tick: Option<u64>,
    pub action_ticks: Vec<u64>,
}

/// Run the timed scenario. Ticks run from 0 through the configured
/// duration inclusive; the outage switches sites off at its tick,
/// detection is the first tick classified as outage on either chain, and
/// one policy action per tick follows the trigger delay until the budget
/// is spent.
pub fn run_dynamic(
    cfg: &ScenarioConfig,
    agents: Option<&[AgentBundle]>,
) -> Result<(Vec<MetricsRecord>, RunInfo), DynamicsError> {
    let layout = build_hex_layout_with(&cfg.layout)?;
    let scenario = cfg.outage_for_run();
    run_dynamic_with(cfg, &layout, &scenario, agents)
}

/// [`run_dynamic`] against an existing layout and resolved outage.
pub fn run_dynamic_with(
    cfg: &ScenarioConfig,
    base_layout: &NetworkLayout,
    scenario: &OutageScenario,
    agents: Option<&[AgentBundle]>,
) -> Result<(Vec<MetricsRecord>, RunInfo), DynamicsError> {
    if matches!(cfg.policy, PolicyKind::MultiAgent | PolicyKind::NeighborOnly) && agents.is_none()
    {
        return Err(DynamicsError::MissingCheckpoints(cfg.policy.as_str()));
    }
    if let Some(agents) = agents {
        crate::marl::validate_agents(agents, base_layout)?;
    }

    let timeline = &cfg.timeline;
    let mut layout = base_layout.clone();
    let mut geometry = LinkGeometry::compute(&layout, &cfg.setup.radio)?;
    let mut configs = cfg
        .setup
        .initial_configs(layout.n_cells())
        .map_err(LinkError::Radio)?;
    let mut mobility_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x6d6f_7665);
    let step_m = cfg
        .user_speed_kmh
        .map(|kmh| kmh / 3.6 * timeline.tick_s as f64);
    let act_mask = match cfg.policy {
        PolicyKind::NeighborOnly => Some(neighbor_mask(&layout, scenario)?),
        _ => None,
    };

    let mut records = Vec::new();
    let mut detection_tick: Option<u64> = None;
    let mut action_ticks: Vec<u64> = Vec::new();
    let mut outage_applied = false;
    let mut t = 0u64;
    while t <= timeline.duration_s {
        if let Some(step) = step_m {
            if t > 0 {
                move_users(&mut layout, step, &mut mobility_rng);
                geometry = LinkGeometry::compute(&layout, &cfg.setup.radio)?;
            }
        }
        if !outage_applied && t >= timeline.outage_at_s {
            for cfg_cell in &mut configs {
                let site = layout.cells[cfg_cell.cell_id].site_id;
                if scenario.off_sites.contains(&site) {
                    cfg_cell.operational = false;
                }
            }
            outage_applied = true;
        }

        let act_now = matches!(cfg.policy, PolicyKind::MultiAgent | PolicyKind::NeighborOnly)
            && detection_tick
                .is_some_and(|d| t >= d + timeline.trigger_delay_s)
            && (action_ticks.len() as u32) < timeline.actions_budget;
        if act_now {
            let agents = agents.expect("checked above");
            let state = encode_state(&configs, &scenario.off_sites);
            let view = state.normalized_view();
            let mut actions: BTreeMap<usize, SiteAction> = BTreeMap::new();
            for site in 0..layout.n_sites() {
                if scenario.off_sites.contains(&site) {
                    continue;
                }
                let action = match &act_mask {
                    Some(mask) if !mask.contains(&site) => SiteAction::no_op(),
                    _ => decode_action(greedy_action(&agents[site].online, &view)?)?,
                };
                actions.insert(site, action);
            }
            let next = apply_actions(&state, &actions, &layout)?;
            configs = next.configs;
            action_ticks.push(t);
        }

        let report = evaluate_with_geometry(&geometry, &configs, &cfg.setup.radio, &cfg.setup.link)?;
        let snapshot = ResilienceSnapshot::from_report(&report, &cfg.setup.thresholds)?;
        if detection_tick.is_none()
            && (snapshot.coverage_state == ResilienceState::O
                || snapshot.service_state == ResilienceState::O)
        {
            detection_tick = Some(t);
        }

        let n = report.n_users.max(1) as f64;
        let mean_rsrp = report.users.iter().map(|u| u.rsrp_dbm).sum::<f64>() / n;
        let mean_th = report.sum_throughput_bps / n;
        records.push(MetricsRecord::from_snapshot(t, mean_rsrp, mean_th, &snapshot));
        t += timeline.tick_s;
    }

    Ok((
        records,
        RunInfo {
            off_sites: scenario.off_sites.iter().copied().collect(),
            outage_tick: timeline.outage_at_s,
            detection_tick,
            action_ticks,
        },
    ))
}

/// Random-walk step with reflection at the user-region bounds.
fn move_users<R: Rng>(layout: &mut NetworkLayout, step_m: f64, rng: &mut R) {
    let region = layout.user_region();
    for user in &mut layout.users {
        let heading: f64 = rng.random_range(0.0..std::f64::consts::TAU);
        let mut x = user.x_m + step_m * heading.cos();
        let mut y = user.y_m + step_m * heading.sin();
        if x < region.min_x {
            x = (2.0 * region.min_x - x).min(region.max_x);
        } else if x > region.max_x {
            x = (2.0 * region.max_x - x).max(region.min_x);
        }
        if y < region.min_y {
            y = (2.0 * region.min_y - y).min(region.max_y);
        } else if y > region.max_y {
            y = (2.0 * region.max_y - y).max(region.min_y);
        }
        user.x_m = x;
        user.y_m = y;
    }
}

pub const METRICS_CSV_HEADER: &str = "t_s,mean_rsrp_dbm,mean_throughput_bps,p_coverage,p_service,coverage_state,service_state,rsrp_good,rsrp_fair,rsrp_poor";

/// Render the metrics stream as CSV; byte-stable for fixed inputs.
pub fn metrics_to_csv(records: &[MetricsRecord]) -> String {
    let mut out = String::from(METRICS_CSV_HEADER);
    out.push('\n');
    for r in records {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{}\n",
            r.t_s,
            r.mean_rsrp_dbm,
            r.mean_throughput_bps,
            r.p_coverage,
            r.p_service,
            r.coverage_state.letter(),
            r.service_state.letter(),
            r.rsrp_good,
            r.rsrp_fair,
            r.rsrp_poor,
        ));
    }
    out
}

/// Parse a metrics CSV back into records.
pub fn parse_metrics_csv(text: &str) -> Result<Vec<MetricsRecord>, DynamicsError> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header == METRICS_CSV_HEADER => {}
        Some((_, other)) => {
            return Err(DynamicsError::CsvParse {
                line: 1,
                msg: format!("unexpected header {other:?}"),
            })
        }
        None => {
            return Err(DynamicsError::CsvParse {
                line: 1,
                msg: "empty file".into(),
            })
        }
    }
    let mut records = Vec::new();
    for (idx, line) in lines {
        let line_no = idx + 1;
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 10 {
            return Err(DynamicsError::CsvParse {
                line: line_no,
                msg: format!("expected 10 fields, got {}", fields.len()),
            });
        }
        let f = |s: &str, what: &str| -> Result<f64, DynamicsError> {
            let v: f64 = s.parse().map_err(|_| DynamicsError::CsvParse {
                line: line_no,
                msg: format!("bad {what} {s:?}"),
            })?;
            if v.is_nan() {
                return Err(DynamicsError::CsvParse {
                    line: line_no,
                    msg: format!("{what} is NaN"),
                });
            }
            Ok(v)
        };
        let state = |s: &str, what: &str| -> Result<ResilienceState, DynamicsError> {
            let mut chars = s.chars();
            match (chars.next().and_then(ResilienceState::from_letter), chars.next()) {
                (Some(st), None) => Ok(st),
                _ => Err(DynamicsError::CsvParse {
                    line: line_no,
                    msg: format!("bad {what} {s:?}"),
                }),
            }
        };
        records.push(MetricsRecord {
            t_s: fields[0].parse().map_err(|_| DynamicsError::CsvParse {
                line: line_no,
                msg: format!("bad t_s {:?}", fields[0]),
            })?,
            mean_rsrp_dbm: f(fields[1], "mean_rsrp_dbm")?,
            mean_throughput_bps: f(fields[2], "mean_throughput_bps")?,
            p_coverage: f(fields[3], "p_coverage")?,
            p_service: f(fields[4], "p_service")?,
            coverage_state: state(fields[5], "coverage_state")?,
            service_state: state(fields[6], "service_state")?,
            rsrp_good: f(fields[7], "rsrp_good")?,
            rsrp_fair: f(fields[8], "rsrp_fair")?,
            rsrp_poor: f(fields[9], "rsrp_poor")?,
        });
    }
    Ok(records)
}

fn stats_json(values: impl Iterator<Item = f64> + Clone) -> serde_json::Value {
    let mut min = f64::INFINITY;
    let mut max = f64::NEG_INFINITY;
    let mut sum = 0.0;
    let mut n = 0usize;
    for v in values {
        min = min.min(v);
        max = max.max(v);
        sum += v;
        n += 1;
    }
    if n == 0 {
        return serde_json::json!(null);
    }
    serde_json::json!({
        "min": min,
        "max": max,
        "mean": sum / n as f64,
    })
}

/// JSON summary (min/max/mean per numeric field) of a metrics stream.
pub fn metrics_summary_json(records: &[MetricsRecord], info: Option<&RunInfo>) -> String {
    let mut doc = serde_json::json!({
        "n_records": records.len(),
        "mean_rsrp_dbm": stats_json(records.iter().map(|r| r.mean_rsrp_dbm)),
        "mean_throughput_bps": stats_json(records.iter().map(|r| r.mean_throughput_bps)),
        "p_coverage": stats_json(records.iter().map(|r| r.p_coverage)),
        "p_service": stats_json(records.iter().map(|r| r.p_service)),
        "rsrp_good": stats_json(records.iter().map(|r| r.rsrp_good)),
        "rsrp_fair": stats_json(records.iter().map(|r| r.rsrp_fair)),
        "rsrp_poor": stats_json(records.iter().map(|r| r.rsrp_poor)),
    });
    if let Some(info) = info {
        doc["off_sites"] = serde_json::json!(info.off_sites);
        doc["outage_tick"] = serde_json::json!(info.outage_tick);
        doc["detection_tick"] = serde_json::json!(info.detection_tick);
        doc["action_ticks"] = serde_json::json!(info.action_ticks);
    }
    serde_json::to_string_pretty(&doc).expect("summary serializes")
}

/// Write metrics.csv and summary.json under `dir`.
pub fn export_metrics(
    records: &[MetricsRecord],
    info: Option<&RunInfo>,
    dir: &Path,
) -> Result<(), DynamicsError> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("metrics.csv"), metrics_to_csv(records))?;
    std::fs::write(dir.join("summary.json"), metrics_summary_json(records, info))?;
    Ok(())
}

/// Emit one small CSV per curve family, matching the evaluation figures:
/// average received power, average throughput, covered-user fraction with
/// the condition mix, and satisfied-user fraction.
pub fn export_plot_data(records: &[MetricsRecord], dir: &Path) -> Result<(), DynamicsError> {
    std::fs::create_dir_all(dir)?;
    let mut rsrp = String::from("t_s,mean_rsrp_dbm\n");
    let mut th = String::from("t_s,mean_throughput_bps\n");
    let mut cov = String::from("t_s,p_coverage,rsrp_good,rsrp_fair,rsrp_poor,coverage_state\n");
    let mut serv = String::from("t_s,p_service,service_state\n");
    for r in records {
        rsrp.push_str(&format!("{},{}\n", r.t_s, r.mean_rsrp_dbm));
        th.push_str(&format!("{},{}\n", r.t_s, r.mean_throughput_bps));
        cov.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.t_s,
            r.p_coverage,
            r.rsrp_good,
            r.rsrp_fair,
            r.rsrp_poor,
            r.coverage_state.letter()
        ));
        serv.push_str(&format!("{},{},{}\n", r.t_s, r.p_service, r.service_state.letter()));
    }
    std::fs::write(dir.join("plot_rsrp.csv"), rsrp)?;
    std::fs::write(dir.join("plot_throughput.csv"), th)?;
    std::fs::write(dir.join("plot_coverage.csv"), cov)?;
    std::fs::write(dir.join("plot_service.csv"), serv)?;
    Ok(())
}
