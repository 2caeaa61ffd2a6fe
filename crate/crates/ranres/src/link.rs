//! Cell attachment, interference, SINR, and per-user throughput: one full
//! network evaluation produces a [`LinkReport`].
//!
//! The received-power matrix is embarrassingly parallel over users; the
//! load-balancing attachment is a sequential fixed-point pass. The whole
//! evaluation is a pure function of layout and configuration, so distinct
//! inputs may be evaluated concurrently.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::layout::{distances, NetworkLayout};
use crate::radio::{
    antenna_gain, arrival_angles, d2d_in_valid_range, path_loss_umi_los, path_loss_umi_nlos,
    received_power, CellConfig, ChannelModel, RadioError, RadioParams,
};
use crate::units::dbm_to_mw;

#[derive(Debug, Error)]
pub enum LinkError {
    #[error("expected {expected} cell configs, got {got}")]
    ConfigCountMismatch { expected: usize, got: usize },
    #[error("config at index {index} carries cell_id {cell_id}")]
    ConfigIdMismatch { index: usize, cell_id: usize },
    #[error("invalid link parameters: {0}")]
    InvalidParams(String),
    #[error("report has no users")]
    NoUsers,
    #[error(transparent)]
    Radio(#[from] RadioError),
    #[error("report CSV line {line}: {msg}")]
    CsvParse { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Scheduler and demand parameters of the downlink.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkParams {
    /// Bandwidth of one physical resource block, Hz.
    pub prb_bandwidth_hz: f64,
    /// Bits per symbol in each resource block.
    pub bits_per_symbol: f64,
    /// Resource blocks available per cell.
    pub prbs_per_cell: u32,
    /// Noise power per resource block, dBm.
    pub noise_per_prb_dbm: f64,
    /// Minimal received signal for a user to connect, dBm.
    pub rsrp_min_dbm: f64,
    /// Requested data rate per user, bit/s.
    pub demand_bps: f64,
    /// Attachment cap per cell; `None` picks ceil(3N/M).
    pub max_users_per_cell: Option<usize>,
}

impl Default for LinkParams {
    fn default() -> Self {
        Self {
            prb_bandwidth_hz: 10e6,
            bits_per_symbol: 1.4,
            prbs_per_cell: 100,
            noise_per_prb_dbm: -99.0,
            rsrp_min_dbm: -127.0,
            demand_bps: 3e6,
            max_users_per_cell: None,
        }
    }
}

impl LinkParams {
    pub fn validate(&self) -> Result<(), LinkError> {
        if self.prbs_per_cell < 1 {
            return Err(LinkError::InvalidParams("prbs_per_cell must be >= 1".into()));
        }
        if !(self.prb_bandwidth_hz > 0.0) {
            return Err(LinkError::InvalidParams("prb_bandwidth_hz must be > 0".into()));
        }
        if !(self.bits_per_symbol > 0.0) {
            return Err(LinkError::InvalidParams("bits_per_symbol must be > 0".into()));
        }
        Ok(())
    }
}

/// Received power of every user from every cell, dBm, plus the validity
/// flag of the path-loss fit for each link.
#[derive(Debug, Clone)]
pub struct RsrpMatrix {
    pub n_users: usize,
    pub n_cells: usize,
    vals: Vec<f64>,
    in_range: Vec<bool>,
}

impl RsrpMatrix {
    pub fn get(&self, user: usize, cell: usize) -> f64 {
        self.vals[user * self.n_cells + cell]
    }

    pub fn link_in_range(&self, user: usize, cell: usize) -> bool {
        self.in_range[user * self.n_cells + cell]
    }

    pub fn user_row(&self, user: usize) -> &[f64] {
        &self.vals[user * self.n_cells..(user + 1) * self.n_cells]
    }
}

/// Serving-cell assignment after load balancing.
#[derive(Debug, Clone)]
pub struct Attachment {
    pub serving: Vec<Option<usize>>,
    pub cell_load: Vec<usize>,
    pub cap: usize,
}

/// Per-user outcome of one full network evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct UserLink {
    pub user_id: usize,
    pub serving_cell: Option<usize>,
    /// Serving-cell power when attached, else the best candidate power.
    pub rsrp_dbm: f64,
    pub sinr_linear: f64,
    /// Resource blocks allocated (eta), fractional.
    pub prbs: f64,
    pub throughput_bps: f64,
    pub covered: bool,
    pub satisfied: bool,
    /// Serving link evaluated outside the path-loss validity range.
    pub range_violation: bool,
}

/// Results of one full network evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkReport {
    pub users: Vec<UserLink>,
    pub sum_throughput_bps: f64,
    pub n_users: usize,
}

/// Configuration-independent part of every user/cell link: path loss,
/// arrival angles, and the range flag. Computing it once lets repeated
/// evaluations of the same geometry skip the transcendental-heavy chain.
#[derive(Debug, Clone)]
pub struct LinkGeometry {
    pub n_users: usize,
    pub n_cells: usize,
    path_loss_db: Vec<f64>,
    theta_deg: Vec<f64>,
    phi_deg: Vec<f64>,
    in_range: Vec<bool>,
}

impl LinkGeometry {
    pub fn compute(layout: &NetworkLayout, radio: &RadioParams) -> Result<Self, LinkError> {
        let n_cells = layout.n_cells();
        let rows: Result<Vec<(Vec<f64>, Vec<f64>, Vec<f64>, Vec<bool>)>, LinkError> = layout
            .users
            .par_iter()
            .map(|user| {
                let mut pl_row = Vec::with_capacity(n_cells);
                let mut theta_row = Vec::with_capacity(n_cells);
                let mut phi_row = Vec::with_capacity(n_cells);
                let mut range_row = Vec::with_capacity(n_cells);
                for cell in &layout.cells {
                    let site = &layout.sites[cell.site_id];
                    let (d2d, d3d) = distances(user, site);
                    let los =
                        path_loss_umi_los(d2d, d3d, site.height_bs_m, user.height_ut_m, radio)?;
                    let pl = match radio.channel {
                        ChannelModel::Los => los,
                        ChannelModel::Nlos => {
                            path_loss_umi_nlos(d3d, user.height_ut_m, los, radio)
                        }
                    };
                    let (theta, phi) = arrival_angles(user, site, cell);
                    pl_row.push(pl);
                    theta_row.push(theta);
                    phi_row.push(phi);
                    range_row.push(d2d_in_valid_range(d2d));
                }
                Ok((pl_row, theta_row, phi_row, range_row))
            })
            .collect();
        let rows = rows?;
        let total = layout.n_users() * n_cells;
        let mut path_loss_db = Vec::with_capacity(total);
        let mut theta_deg = Vec::with_capacity(total);
        let mut phi_deg = Vec::with_capacity(total);
        let mut in_range = Vec::with_capacity(total);
        for (pl, th, ph, rr) in rows {
            path_loss_db.extend(pl);
            theta_deg.extend(th);
            phi_deg.extend(ph);
            in_range.extend(rr);
        }
        Ok(Self {
            n_users: layout.n_users(),
            n_cells,
            path_loss_db,
            theta_deg,
            phi_deg,
            in_range,
        })
    }

    /// Received-power matrix for a configuration over this geometry.
    pub fn rsrp_matrix(&self, configs: &[CellConfig], radio: &RadioParams) -> RsrpMatrix {
        let mut vals = Vec::with_capacity(self.n_users * self.n_cells);
        for u in 0..self.n_users {
            for c in 0..self.n_cells {
                let i = u * self.n_cells + c;
                let cfg = &configs[c];
                let gain =
                    antenna_gain(self.theta_deg[i], self.phi_deg[i], cfg.tilt_deg(), radio);
                vals.push(received_power(cfg, gain, self.path_loss_db[i], radio));
            }
        }
        RsrpMatrix {
            n_users: self.n_users,
            n_cells: self.n_cells,
            vals,
            in_range: self.in_range.clone(),
        }
    }
}

/// Full received-power matrix via the radio chain. Non-operational cells
/// are included with the outage gain.
pub fn rsrp_matrix(
    layout: &NetworkLayout,
    configs: &[CellConfig],
    radio: &RadioParams,
) -> Result<RsrpMatrix, LinkError> {
    check_configs(layout, configs)?;
    Ok(LinkGeometry::compute(layout, radio)?.rsrp_matrix(configs, radio))
}

/// Attach every coverable user to its strongest operational cell, then
/// displace the weakest surplus users of over-cap cells to their
/// next-strongest covering cell until stable. Users with no alternative
/// stay put and share resource blocks.
pub fn attach_users(
    rsrp: &RsrpMatrix,
    configs: &[CellConfig],
    params: &LinkParams,
    max_users_per_cell: usize,
) -> Attachment {
    let cap = max_users_per_cell.max(1);
    // Covering candidates per user, strongest first; cell id breaks ties.
    let candidates: Vec<Vec<usize>> = (0..rsrp.n_users)
        .map(|u| {
            let mut cells: Vec<usize> = (0..rsrp.n_cells)
                .filter(|&c| configs[c].operational && rsrp.get(u, c) >= params.rsrp_min_dbm)
                .collect();
            cells.sort_by(|&a, &b| {
                rsrp.get(u, b)
                    .partial_cmp(&rsrp.get(u, a))
                    .unwrap()
                    .then(a.cmp(&b))
            });
            cells
        })
        .collect();

    let mut choice: Vec<usize> = vec![0; rsrp.n_users]; // index into candidates[u]
    let mut serving: Vec<Option<usize>> = candidates
        .iter()
        .map(|c| c.first().copied())
        .collect();
    let mut cell_load = vec![0usize; rsrp.n_cells];
    for s in serving.iter().flatten() {
        cell_load[*s] += 1;
    }

    loop {
        let Some(over) = (0..rsrp.n_cells).find(|&c| {
            cell_load[c] > cap
                && (0..rsrp.n_users).any(|u| {
                    serving[u] == Some(c) && choice[u] + 1 < candidates[u].len()
                })
        }) else {
            break;
        };
        // Weakest movable user of the over-cap cell; user id breaks ties.
        let user = (0..rsrp.n_users)
            .filter(|&u| serving[u] == Some(over) && choice[u] + 1 < candidates[u].len())
            .min_by(|&a, &b| {
                rsrp.get(a, over)
                    .partial_cmp(&rsrp.get(b, over))
                    .unwrap()
                    .then(a.cmp(&b))
            })
            .expect("over-cap cell has a movable user");
        choice[user] += 1;
        let next = candidates[user][choice[user]];
        cell_load[over] -= 1;
        cell_load[next] += 1;
        serving[user] = Some(next);
    }

    Attachment {
        serving,
        cell_load,
        cap,
    }
}

/// Linear SINR per user: serving power over the operational non-serving
/// sum plus per-block noise. Unattached users get zero.
pub fn interference_and_sinr(
    rsrp: &RsrpMatrix,
    attachment: &Attachment,
    configs: &[CellConfig],
    params: &LinkParams,
) -> Vec<f64> {
    let noise_mw = dbm_to_mw(params.noise_per_prb_dbm);
    (0..rsrp.n_users)
        .map(|u| match attachment.serving[u] {
            None => 0.0,
            Some(c) => {
                let mut interference_mw = 0.0;
                for j in 0..rsrp.n_cells {
                    if j != c && configs[j].operational {
                        interference_mw += dbm_to_mw(rsrp.get(u, j));
                    }
                }
                dbm_to_mw(rsrp.get(u, c)) / (interference_mw + noise_mw)
            }
        })
        .collect()
}

/// Share each cell's resource blocks equally among its attached users and
/// apply the Shannon-Hartley rate; assemble the report with coverage and
/// satisfaction flags.
pub fn allocate_and_throughput(
    rsrp: &RsrpMatrix,
    attachment: &Attachment,
    sinr: &[f64],
    configs: &[CellConfig],
    params: &LinkParams,
) -> LinkReport {
    let mut users = Vec::with_capacity(rsrp.n_users);
    let mut sum_throughput = 0.0;
    for u in 0..rsrp.n_users {
        let serving = attachment.serving[u];
        let (rsrp_dbm, covered, prbs, throughput, range_violation) = match serving {
            Some(c) => {
                let eta = params.prbs_per_cell as f64 / attachment.cell_load[c] as f64;
                let th = params.prb_bandwidth_hz
                    * params.bits_per_symbol
                    * eta
                    * (1.0 + sinr[u]).log2();
                (rsrp.get(u, c), true, eta, th, !rsrp.link_in_range(u, c))
            }
            None => (best_candidate_rsrp(rsrp, configs, u), false, 0.0, 0.0, false),
        };
        let satisfied = covered && throughput >= params.demand_bps;
        sum_throughput += throughput;
        users.push(UserLink {
            user_id: u,
            serving_cell: serving,
            rsrp_dbm,
            sinr_linear: sinr[u],
            prbs,
            throughput_bps: throughput,
            covered,
            satisfied,
            range_violation,
        });
    }
    LinkReport {
        n_users: users.len(),
        users,
        sum_throughput_bps: sum_throughput,
    }
}

/// Strongest received power among operational cells, falling back to all
/// cells when none is operational.
fn best_candidate_rsrp(rsrp: &RsrpMatrix, configs: &[CellConfig], user: usize) -> f64 {
    let row = rsrp.user_row(user);
    let best_operational = row
        .iter()
        .enumerate()
        .filter(|(c, _)| configs[*c].operational)
        .map(|(_, v)| *v)
        .fold(f64::NEG_INFINITY, f64::max);
    if best_operational.is_finite() {
        best_operational
    } else {
        row.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Deterministic composition of the four evaluation stages.
pub fn evaluate_network(
    layout: &NetworkLayout,
    configs: &[CellConfig],
    radio: &RadioParams,
    params: &LinkParams,
) -> Result<LinkReport, LinkError> {
    check_configs(layout, configs)?;
    let geometry = LinkGeometry::compute(layout, radio)?;
    evaluate_with_geometry(&geometry, configs, radio, params)
}

/// [`evaluate_network`] over a precomputed geometry cache.
pub fn evaluate_with_geometry(
    geometry: &LinkGeometry,
    configs: &[CellConfig],
    radio: &RadioParams,
    params: &LinkParams,
) -> Result<LinkReport, LinkError> {
    params.validate()?;
    if configs.len() != geometry.n_cells {
        return Err(LinkError::ConfigCountMismatch {
            expected: geometry.n_cells,
            got: configs.len(),
        });
    }
    let rsrp = geometry.rsrp_matrix(configs, radio);
    let cap = params
        .max_users_per_cell
        .unwrap_or_else(|| default_cell_cap(geometry.n_users, geometry.n_cells));
    let attachment = attach_users(&rsrp, configs, params, cap);
    let sinr = interference_and_sinr(&rsrp, &attachment, configs, params);
    Ok(allocate_and_throughput(&rsrp, &attachment, &sinr, configs, params))
}

/// Default attachment cap: ceil(3N / M), at least 1.
pub fn default_cell_cap(n_users: usize, n_cells: usize) -> usize {
    if n_cells == 0 {
        return 1;
    }
    ((3 * n_users).div_ceil(n_cells)).max(1)
}

/// All-operational cell configs at a uniform tilt and power.
pub fn uniform_configs(n_cells: usize, etilt_deg: f64, tx_power_dbm: f64) -> Result<Vec<CellConfig>, RadioError> {
    (0..n_cells)
        .map(|id| CellConfig::new(id, etilt_deg, tx_power_dbm))
        .collect()
}

fn check_configs(layout: &NetworkLayout, configs: &[CellConfig]) -> Result<(), LinkError> {
    if configs.len() != layout.n_cells() {
        return Err(LinkError::ConfigCountMismatch {
            expected: layout.n_cells(),
            got: configs.len(),
        });
    }
    for (index, cfg) in configs.iter().enumerate() {
        if cfg.cell_id != index {
            return Err(LinkError::ConfigIdMismatch {
                index,
                cell_id: cfg.cell_id,
            });
        }
    }
    Ok(())
}

pub const REPORT_CSV_HEADER: &str =
    "user_id,serving_cell,rsrp_dbm,sinr_linear,prbs,throughput_bps,covered,satisfied,range_violation";

impl LinkReport {
    pub fn covered_users(&self) -> usize {
        self.users.iter().filter(|u| u.covered).count()
    }

    pub fn satisfied_users(&self) -> usize {
        self.users.iter().filter(|u| u.satisfied).count()
    }

    /// One row per user, fixed header, byte-stable for fixed inputs.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(REPORT_CSV_HEADER);
        out.push('\n');
        for u in &self.users {
            let serving = u
                .serving_cell
                .map(|c| c.to_string())
                .unwrap_or_default();
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{}\n",
                u.user_id,
                serving,
                u.rsrp_dbm,
                u.sinr_linear,
                u.prbs,
                u.throughput_bps,
                u8::from(u.covered),
                u8::from(u.satisfied),
                u8::from(u.range_violation),
            ));
        }
        out
    }

    /// Parse a per-user CSV back into a report; totals are recomputed.
    pub fn from_csv(text: &str) -> Result<Self, LinkError> {
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, header)) if header == REPORT_CSV_HEADER => {}
            Some((_, other)) => {
                return Err(LinkError::CsvParse {
                    line: 1,
                    msg: format!("unexpected header {other:?}"),
                })
            }
            None => {
                return Err(LinkError::CsvParse {
                    line: 1,
                    msg: "empty file".into(),
                })
            }
        }
        let mut users = Vec::new();
        let mut sum_throughput = 0.0;
        for (idx, line) in lines {
            let line_no = idx + 1;
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 9 {
                return Err(LinkError::CsvParse {
                    line: line_no,
                    msg: format!("expected 9 fields, got {}", fields.len()),
                });
            }
            let parse_f = |s: &str, what: &str| -> Result<f64, LinkError> {
                let v: f64 = s.parse().map_err(|_| LinkError::CsvParse {
                    line: line_no,
                    msg: format!("bad {what} {s:?}"),
                })?;
                if v.is_nan() {
                    return Err(LinkError::CsvParse {
                        line: line_no,
                        msg: format!("{what} is NaN"),
                    });
                }
                Ok(v)
            };
            let parse_b = |s: &str, what: &str| -> Result<bool, LinkError> {
                match s {
                    "0" => Ok(false),
                    "1" => Ok(true),
                    _ => Err(LinkError::CsvParse {
                        line: line_no,
                        msg: format!("bad {what} {s:?}"),
                    }),
                }
            };
            let user_id: usize = fields[0].parse().map_err(|_| LinkError::CsvParse {
                line: line_no,
                msg: format!("bad user_id {:?}", fields[0]),
            })?;
            let serving_cell = if fields[1].is_empty() {
                None
            } else {
                Some(fields[1].parse().map_err(|_| LinkError::CsvParse {
                    line: line_no,
                    msg: format!("bad serving_cell {:?}", fields[1]),
                })?)
            };
            let link = UserLink {
                user_id,
                serving_cell,
                rsrp_dbm: parse_f(fields[2], "rsrp_dbm")?,
                sinr_linear: parse_f(fields[3], "sinr_linear")?,
                prbs: parse_f(fields[4], "prbs")?,
                throughput_bps: parse_f(fields[5], "throughput_bps")?,
                covered: parse_b(fields[6], "covered")?,
                satisfied: parse_b(fields[7], "satisfied")?,
                range_violation: parse_b(fields[8], "range_violation")?,
            };
            sum_throughput += link.throughput_bps;
            users.push(link);
        }
        Ok(LinkReport {
            n_users: users.len(),
            users,
            sum_throughput_bps: sum_throughput,
        })
    }

    /// Aggregate JSON summary of the report.
    pub fn to_json_summary(&self) -> String {
        let covered = self.covered_users();
        let satisfied = self.satisfied_users();
        let n = self.n_users.max(1) as f64;
        let doc = serde_json::json!({
            "n_users": self.n_users,
            "sum_throughput_bps": self.sum_throughput_bps,
            "covered_users": covered,
            "satisfied_users": satisfied,
            "p_coverage": covered as f64 / n,
            "p_service": satisfied as f64 / n,
        });
        serde_json::to_string_pretty(&doc).expect("summary serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layout::{build_hex_layout, Site, UserPoint};
    use proptest::prelude::*;

    fn one_user_one_site_layout(user_x: f64) -> NetworkLayout {
        // A single site whose three sectors form the smallest valid layout.
        let mut l = build_hex_layout(0, 300.0, 0, 0).unwrap();
        l.users.push(UserPoint {
            user_id: 0,
            x_m: user_x,
            y_m: 0.0,
            height_ut_m: 1.5,
        });
        l
    }

    #[test]
    fn rsrp_matrix_matches_hand_chained_radio_ops() {
        let layout = one_user_one_site_layout(100.0);
        let radio = RadioParams::default();
        let configs = uniform_configs(3, 7.0, 30.0).unwrap();
        let m = rsrp_matrix(&layout, &configs, &radio).unwrap();

        let user = &layout.users[0];
        let site = &layout.sites[0];
        for cell in &layout.cells {
            let (d2d, d3d) = distances(user, site);
            let pl = path_loss_umi_los(d2d, d3d, 10.0, 1.5, &radio).unwrap();
            let (theta, phi) = arrival_angles(user, site, cell);
            let gain = antenna_gain(theta, phi, 7.0, &radio);
            let expected = received_power(&configs[cell.cell_id], gain, pl, &radio);
            assert_eq!(m.get(0, cell.cell_id), expected);
        }
    }

    #[test]
    fn all_cells_off_bounds_every_entry() {
        let mut layout = build_hex_layout(1, 300.0, 3, 200).unwrap();
        // Keep only users at least 10 m from every site.
        layout.users.retain(|u| {
            layout
                .sites
                .iter()
                .all(|s| (u.x_m - s.x_m).hypot(u.y_m - s.y_m) >= 10.0)
        });
        for (i, u) in layout.users.iter_mut().enumerate() {
            u.user_id = i;
        }
        let mut configs = uniform_configs(21, 7.0, 40.0).unwrap();
        for c in &mut configs {
            c.operational = false;
        }
        let m = rsrp_matrix(&layout, &configs, &RadioParams::default()).unwrap();
        for u in 0..m.n_users {
            for c in 0..m.n_cells {
                assert!(m.get(u, c) <= -140.0, "entry {}", m.get(u, c));
            }
        }
    }

    #[test]
    fn empty_user_set_gives_empty_matrix() {
        let layout = build_hex_layout(1, 300.0, 0, 0).unwrap();
        let configs = uniform_configs(21, 7.0, 30.0).unwrap();
        let m = rsrp_matrix(&layout, &configs, &RadioParams::default()).unwrap();
        assert_eq!(m.n_users, 0);
        assert!(m.vals.is_empty());
    }

    fn matrix_from_rows(rows: &[&[f64]]) -> RsrpMatrix {
        let n_cells = rows.first().map_or(0, |r| r.len());
        RsrpMatrix {
            n_users: rows.len(),
            n_cells,
            vals: rows.iter().flat_map(|r| r.iter().copied()).collect(),
            in_range: vec![true; rows.len() * n_cells],
        }
    }

    #[test]
    fn attach_single_candidate() {
        let m = matrix_from_rows(&[&[-65.0, -150.0]]);
        let configs = uniform_configs(2, 7.0, 30.0).unwrap();
        let att = attach_users(&m, &configs, &LinkParams::default(), 10);
        assert_eq!(att.serving, vec![Some(0)]);
    }

    #[test]
    fn attach_below_threshold_leaves_user_unattached() {
        let m = matrix_from_rows(&[&[-127.5, -140.0]]);
        let configs = uniform_configs(2, 7.0, 30.0).unwrap();
        let att = attach_users(&m, &configs, &LinkParams::default(), 10);
        assert_eq!(att.serving, vec![None]);
    }

    #[test]
    fn attach_boundary_rsrp_is_covering() {
        let m = matrix_from_rows(&[&[-127.0, -140.0]]);
        let configs = uniform_configs(2, 7.0, 30.0).unwrap();
        let att = attach_users(&m, &configs, &LinkParams::default(), 10);
        assert_eq!(att.serving, vec![Some(0)]);
    }

    /// Brute-force oracle over the full assignment space: minimize violated
    /// caps, then maximize summed serving power.
    fn brute_force_attach(m: &RsrpMatrix, params: &LinkParams, cap: usize) -> Vec<Option<usize>> {
        let per_user: Vec<Vec<Option<usize>>> = (0..m.n_users)
            .map(|u| {
                let mut opts: Vec<Option<usize>> = (0..m.n_cells)
                    .filter(|&c| m.get(u, c) >= params.rsrp_min_dbm)
                    .map(Some)
                    .collect();
                if opts.is_empty() {
                    opts.push(None);
                }
                opts
            })
            .collect();
        let mut best: Option<(usize, f64, Vec<Option<usize>>)> = None;
        let mut assignment = vec![None; m.n_users];
        fn recurse(
            u: usize,
            m: &RsrpMatrix,
            per_user: &[Vec<Option<usize>>],
            cap: usize,
            assignment: &mut Vec<Option<usize>>,
            best: &mut Option<(usize, f64, Vec<Option<usize>>)>,
        ) {
            if u == m.n_users {
                let mut load = vec![0usize; m.n_cells];
                for s in assignment.iter().flatten() {
                    load[*s] += 1;
                }
                let violations: usize = load.iter().map(|&l| l.saturating_sub(cap)).sum();
                let score: f64 = assignment
                    .iter()
                    .enumerate()
                    .filter_map(|(u, s)| s.map(|c| m.get(u, c)))
                    .sum();
                let better = match best {
                    None => true,
                    Some((v, s, _)) => violations < *v || (violations == *v && score > *s),
                };
                if better {
                    *best = Some((violations, score, assignment.clone()));
                }
                return;
            }
            for opt in &per_user[u] {
                assignment[u] = *opt;
                recurse(u + 1, m, per_user, cap, assignment, best);
            }
        }
        recurse(0, m, &per_user, cap, &mut assignment, &mut best);
        best.unwrap().2
    }

    #[test]
    fn attach_load_balancing_matches_brute_force() {
        // Three users all prefer cell 0 (cap 2); the weakest moves to cell 1.
        let m = matrix_from_rows(&[
            &[-60.0, -80.0],
            &[-65.0, -82.0],
            &[-70.0, -84.0],
        ]);
        let params = LinkParams::default();
        let att = attach_users(&m, &uniform_configs(2, 7.0, 30.0).unwrap(), &params, 2);
        assert_eq!(att.serving, vec![Some(0), Some(0), Some(1)]);
        assert_eq!(att.serving, brute_force_attach(&m, &params, 2));
    }

    #[test]
    fn attach_without_alternative_shares_blocks() {
        let m = matrix_from_rows(&[
            &[-60.0, -150.0],
            &[-65.0, -150.0],
            &[-70.0, -150.0],
        ]);
        let att = attach_users(
            &m,
            &uniform_configs(2, 7.0, 30.0).unwrap(),
            &LinkParams::default(),
            2,
        );
        assert_eq!(att.serving, vec![Some(0), Some(0), Some(0)]);
        assert_eq!(att.cell_load[0], 3);
    }

    #[test]
    fn attach_ignores_non_operational_cells() {
        let m = matrix_from_rows(&[&[-60.0, -80.0]]);
        let mut configs = uniform_configs(2, 7.0, 30.0).unwrap();
        configs[0].operational = false;
        let att = attach_users(&m, &configs, &LinkParams::default(), 10);
        assert_eq!(att.serving, vec![Some(1)]);
    }

    #[test]
    fn sinr_examples() {
        let params = LinkParams::default();
        // Single operational cell: pure SNR.
        let m = matrix_from_rows(&[&[-65.343]]);
        let configs = uniform_configs(1, 7.0, 30.0).unwrap();
        let att = attach_users(&m, &configs, &params, 10);
        let sinr = interference_and_sinr(&m, &att, &configs, &params);
        let expected = dbm_to_mw(-65.343) / dbm_to_mw(-99.0);
        assert!((sinr[0] - expected).abs() / expected < 1e-12);
        assert!((sinr[0] - 2321.0).abs() < 2.0);

        // Serving power equal to the lone interferer, negligible noise.
        let m2 = matrix_from_rows(&[&[-70.0, -70.0]]);
        let configs2 = uniform_configs(2, 7.0, 30.0).unwrap();
        let att2 = attach_users(&m2, &configs2, &params, 10);
        let quiet = LinkParams {
            noise_per_prb_dbm: -300.0,
            ..params.clone()
        };
        let sinr2 = interference_and_sinr(&m2, &att2, &configs2, &quiet);
        assert!((sinr2[0] - 1.0).abs() < 1e-6);

        // Unattached users get zero.
        let m3 = matrix_from_rows(&[&[-140.0]]);
        let att3 = attach_users(&m3, &configs, &params, 10);
        let sinr3 = interference_and_sinr(&m3, &att3, &configs, &params);
        assert_eq!(sinr3[0], 0.0);
    }

    #[test]
    fn symmetric_users_get_identical_sinr() {
        let mut layout = build_hex_layout(0, 300.0, 0, 0).unwrap();
        layout.users = vec![
            UserPoint {
                user_id: 0,
                x_m: 120.0,
                y_m: 35.0,
                height_ut_m: 1.5,
            },
            UserPoint {
                user_id: 1,
                x_m: 120.0,
                y_m: -35.0,
                height_ut_m: 1.5,
            },
        ];
        let configs = uniform_configs(3, 7.0, 30.0).unwrap();
        let report = evaluate_network(
            &layout,
            &configs,
            &RadioParams::default(),
            &LinkParams::default(),
        )
        .unwrap();
        // Mirror symmetry about the 0-degree boresight plane.
        assert!((report.users[0].sinr_linear - report.users[1].sinr_linear).abs() < 1e-9);
    }

    #[test]
    fn throughput_examples() {
        let params = LinkParams::default();
        let configs = uniform_configs(1, 7.0, 30.0).unwrap();

        // Unattached user carries nothing.
        let m = matrix_from_rows(&[&[-140.0]]);
        let att = attach_users(&m, &configs, &params, 10);
        let sinr = interference_and_sinr(&m, &att, &configs, &params);
        let report = allocate_and_throughput(&m, &att, &sinr, &configs, &params);
        assert_eq!(report.users[0].throughput_bps, 0.0);
        assert!(!report.users[0].covered);
        assert!(!report.users[0].satisfied);

        // One user alone in the cell takes all 100 blocks.
        let m1 = matrix_from_rows(&[&[-65.343]]);
        let att1 = attach_users(&m1, &configs, &params, 10);
        let sinr1 = interference_and_sinr(&m1, &att1, &configs, &params);
        let report1 = allocate_and_throughput(&m1, &att1, &sinr1, &configs, &params);
        let expected = 10e6 * 1.4 * 100.0 * (1.0 + sinr1[0]).log2();
        assert_eq!(report1.users[0].prbs, 100.0);
        assert_eq!(report1.users[0].throughput_bps, expected);
        assert!((expected - 1.565e10).abs() / 1.565e10 < 1e-3);

        // Two users with identical SINR split the cell in half.
        let m2 = matrix_from_rows(&[&[-65.343], &[-65.343]]);
        let att2 = attach_users(&m2, &configs, &params, 10);
        let sinr2 = interference_and_sinr(&m2, &att2, &configs, &params);
        let report2 = allocate_and_throughput(&m2, &att2, &sinr2, &configs, &params);
        assert_eq!(report2.users[0].prbs, 50.0);
        let half = report1.users[0].throughput_bps / 2.0;
        assert!((report2.users[0].throughput_bps - half).abs() / half < 1e-12);
    }

    #[test]
    fn evaluate_reference_scenario_snapshot() {
        // All-operational 7-site reference scenario, seed 7. The frozen
        // numbers come from one audited run of this composition.
        let layout = build_hex_layout(1, 300.0, 7, 2500).unwrap();
        let configs = uniform_configs(21, 7.0, 30.0).unwrap();
        let report = evaluate_network(
            &layout,
            &configs,
            &RadioParams::default(),
            &LinkParams::default(),
        )
        .unwrap();
        let covered_frac = report.covered_users() as f64 / report.n_users as f64;
        assert!(covered_frac >= 0.95, "covered {covered_frac}");

        let again = evaluate_network(
            &layout,
            &configs,
            &RadioParams::default(),
            &LinkParams::default(),
        )
        .unwrap();
        assert_eq!(report, again);
    }

    #[test]
    fn evaluate_all_cells_off_covers_nobody() {
        let layout = build_hex_layout(1, 300.0, 3, 300).unwrap();
        let mut configs = uniform_configs(21, 7.0, 30.0).unwrap();
        for c in &mut configs {
            c.operational = false;
        }
        let report = evaluate_network(
            &layout,
            &configs,
            &RadioParams::default(),
            &LinkParams::default(),
        )
        .unwrap();
        assert_eq!(report.covered_users(), 0);
        assert_eq!(report.sum_throughput_bps, 0.0);
    }

    #[test]
    fn evaluate_rejects_mismatched_configs() {
        let layout = build_hex_layout(0, 300.0, 0, 1).unwrap();
        let configs = uniform_configs(2, 7.0, 30.0).unwrap();
        assert!(matches!(
            evaluate_network(&layout, &configs, &RadioParams::default(), &LinkParams::default()),
            Err(LinkError::ConfigCountMismatch { .. })
        ));
    }

    #[test]
    fn serving_cell_is_strongest_before_displacement() {
        let layout = build_hex_layout(1, 300.0, 11, 400).unwrap();
        let configs = uniform_configs(21, 7.0, 30.0).unwrap();
        let radio = RadioParams::default();
        let params = LinkParams::default();
        let m = rsrp_matrix(&layout, &configs, &radio).unwrap();
        // Cap high enough that no displacement happens.
        let att = attach_users(&m, &configs, &params, layout.n_users());
        for u in 0..m.n_users {
            if let Some(c) = att.serving[u] {
                for j in 0..m.n_cells {
                    assert!(m.get(u, c) >= m.get(u, j) || !configs[j].operational || m.get(u, j) < params.rsrp_min_dbm);
                }
            }
        }
    }

    #[test]
    fn lowering_an_interferer_never_hurts_total_throughput() {
        let layout = build_hex_layout(1, 300.0, 5, 150).unwrap();
        let mut configs = uniform_configs(21, 7.0, 30.0).unwrap();
        let radio = RadioParams::default();
        let params = LinkParams::default();
        let m = rsrp_matrix(&layout, &configs, &radio).unwrap();
        let att = attach_users(&m, &configs, &params, default_cell_cap(150, 21));

        // Find a cell that serves nobody, lower its power, hold attachment.
        let idle = (0..21).find(|&c| att.cell_load[c] == 0);
        let Some(idle) = idle else {
            // Every cell serves someone at this seed; nothing to vary.
            return;
        };
        let sinr_before = interference_and_sinr(&m, &att, &configs, &params);
        let before = allocate_and_throughput(&m, &att, &sinr_before, &configs, &params);

        configs[idle].tx_power_dbm = 0.0;
        let m2 = rsrp_matrix(&layout, &configs, &radio).unwrap();
        let sinr_after = interference_and_sinr(&m2, &att, &configs, &params);
        let after = allocate_and_throughput(&m2, &att, &sinr_after, &configs, &params);
        assert!(after.sum_throughput_bps >= before.sum_throughput_bps);
    }

    #[test]
    fn prb_conservation_per_cell() {
        let layout = build_hex_layout(1, 300.0, 13, 777).unwrap();
        let configs = uniform_configs(21, 7.0, 30.0).unwrap();
        let report = evaluate_network(
            &layout,
            &configs,
            &RadioParams::default(),
            &LinkParams::default(),
        )
        .unwrap();
        let mut per_cell = vec![0.0f64; 21];
        let mut loads = vec![0usize; 21];
        for u in &report.users {
            if let Some(c) = u.serving_cell {
                per_cell[c] += u.prbs;
                loads[c] += 1;
            }
        }
        for c in 0..21 {
            if loads[c] > 0 {
                assert!((per_cell[c] - 100.0).abs() < 1e-9, "cell {c}: {}", per_cell[c]);
            } else {
                assert_eq!(per_cell[c], 0.0);
            }
        }
    }

    #[test]
    fn csv_round_trip_and_summary() {
        let layout = build_hex_layout(0, 300.0, 2, 25).unwrap();
        let configs = uniform_configs(3, 7.0, 30.0).unwrap();
        let report = evaluate_network(
            &layout,
            &configs,
            &RadioParams::default(),
            &LinkParams::default(),
        )
        .unwrap();
        let csv = report.to_csv();
        let parsed = LinkReport::from_csv(&csv).unwrap();
        assert_eq!(report, parsed);

        let summary: serde_json::Value =
            serde_json::from_str(&report.to_json_summary()).unwrap();
        assert_eq!(summary["n_users"], 25);

        assert!(LinkReport::from_csv("nonsense\n1,2,3").is_err());
        let bad_row = format!("{REPORT_CSV_HEADER}\n0,,x,0,0,0,0,0,0\n");
        assert!(matches!(
            LinkReport::from_csv(&bad_row),
            Err(LinkError::CsvParse { line: 2, .. })
        ));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]
        #[test]
        fn report_flag_invariants_hold(
            seed in 0u64..1000,
            power in 0.0f64..40.0,
            etilt in 0.0f64..14.0,
            outage_mask in 0u32..(1 << 7),
        ) {
            let layout = build_hex_layout(1, 300.0, seed, 120).unwrap();
            let mut configs = uniform_configs(21, etilt, power).unwrap();
            for c in &mut configs {
                if outage_mask & (1 << (c.cell_id / 3)) != 0 {
                    c.operational = false;
                }
            }
            let params = LinkParams::default();
            let report = evaluate_network(&layout, &configs, &RadioParams::default(), &params).unwrap();
            let mut eta_per_cell = vec![0.0f64; 21];
            for u in &report.users {
                prop_assert_eq!(u.covered, u.rsrp_dbm >= params.rsrp_min_dbm);
                if u.satisfied {
                    prop_assert!(u.covered);
                }
                if !u.covered {
                    prop_assert_eq!(u.throughput_bps, 0.0);
                }
                if let Some(c) = u.serving_cell {
                    eta_per_cell[c] += u.prbs;
                }
            }
            for eta in eta_per_cell {
                prop_assert!(eta <= 100.0 + 1e-9);
            }
        }
    }
}
