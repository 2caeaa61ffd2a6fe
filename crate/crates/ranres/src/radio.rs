//! Link-budget chain: urban-micro path loss, arrival angles, sectorized 3D
//! antenna gain, and received power.
//!
//! All operations are pure functions of their inputs and safe for
//! data-parallel evaluation over users and cells. Log-domain path-loss
//! terms take the carrier frequency in GHz (the 32.4-constant form of the
//! UMi equations); the breakpoint distance takes it in Hz per its own
//! definition.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::layout::{distances, CellGeometry, Site, UserPoint};
use crate::units::wrap_deg;

/// Antenna pattern gain substituted for cells in outage; models a site
/// that is off from transmitting any signal.
pub const OUTAGE_GAIN_DBI: f64 = -100.0;

/// Electrical tilt bounds, degrees.
pub const ETILT_RANGE_DEG: (f64, f64) = (0.0, 14.0);

/// Transmit power bounds, dBm.
pub const TX_POWER_RANGE_DBM: (f64, f64) = (0.0, 40.0);

/// Validity range of the planar distance for the UMi path-loss fit, meters.
pub const UMI_D2D_VALID_RANGE_M: (f64, f64) = (10.0, 5000.0);

#[derive(Debug, Error)]
pub enum RadioError {
    #[error("path loss needs a positive distance, got {0}")]
    NonPositiveDistance(f64),
    #[error("electrical tilt {0} outside [0, 14] degrees")]
    TiltOutOfRange(f64),
    #[error("transmit power {0} outside [0, 40] dBm")]
    PowerOutOfRange(f64),
}

/// Propagation channel used for every link.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelModel {
    #[default]
    Los,
    Nlos,
}

/// Fixed radio-environment and antenna-pattern parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadioParams {
    /// Carrier frequency f_c, GHz.
    pub carrier_frequency_ghz: f64,
    /// Effective environment height h_e, meters.
    pub effective_env_height_m: f64,
    /// Maximum antenna element gain G_max, dBi.
    pub g_max_dbi: f64,
    /// Elevation half-power beamwidth, degrees.
    pub theta_3db_deg: f64,
    /// Azimuth half-power beamwidth, degrees.
    pub phi_3db_deg: f64,
    /// Vertical side-lobe level, dB.
    pub sll_v_db: f64,
    /// Horizontal side-lobe level, dB.
    pub sll_h_db: f64,
    /// User terminal antenna gain G_r, dBi.
    pub g_r_dbi: f64,
    /// Speed of light, m/s.
    pub light_speed_mps: f64,
    pub channel: ChannelModel,
}

impl Default for RadioParams {
    fn default() -> Self {
        Self {
            carrier_frequency_ghz: 28.0,
            effective_env_height_m: 1.0,
            g_max_dbi: 8.0,
            theta_3db_deg: 65.0,
            phi_3db_deg: 65.0,
            sll_v_db: 30.0,
            sll_h_db: 30.0,
            g_r_dbi: 0.0,
            light_speed_mps: 3.0e8,
            channel: ChannelModel::Los,
        }
    }
}

/// Tunable per-cell radio state plus the operational flag.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellConfig {
    pub cell_id: usize,
    /// Electrical downtilt, degrees, in [0, 14].
    pub etilt_deg: f64,
    /// Mechanical downtilt, degrees; fixed at install time.
    pub mtilt_deg: f64,
    /// Transmit power P_t, dBm, in [0, 40].
    pub tx_power_dbm: f64,
    pub operational: bool,
}

impl CellConfig {
    pub fn new(cell_id: usize, etilt_deg: f64, tx_power_dbm: f64) -> Result<Self, RadioError> {
        if !(ETILT_RANGE_DEG.0..=ETILT_RANGE_DEG.1).contains(&etilt_deg) {
            return Err(RadioError::TiltOutOfRange(etilt_deg));
        }
        if !(TX_POWER_RANGE_DBM.0..=TX_POWER_RANGE_DBM.1).contains(&tx_power_dbm) {
            return Err(RadioError::PowerOutOfRange(tx_power_dbm));
        }
        Ok(Self {
            cell_id,
            etilt_deg,
            mtilt_deg: 0.0,
            tx_power_dbm,
            operational: true,
        })
    }

    /// Total downtilt: mechanical plus electrical.
    pub fn tilt_deg(&self) -> f64 {
        self.mtilt_deg + self.etilt_deg
    }
}

/// Breakpoint distance d'_Bp = 4 h'_BS h'_UT f_c / c, with effective
/// heights floored at 0.01 m above the environment height.
pub fn breakpoint_distance(params: &RadioParams, h_bs_m: f64, h_ut_m: f64) -> f64 {
    let h_bs_eff = (h_bs_m - params.effective_env_height_m).max(0.01);
    let h_ut_eff = (h_ut_m - params.effective_env_height_m).max(0.01);
    let f_hz = params.carrier_frequency_ghz * 1e9;
    4.0 * h_bs_eff * h_ut_eff * f_hz / params.light_speed_mps
}

/// Urban-micro line-of-sight path loss in dB.
///
/// Below the breakpoint the 21 log10 slope applies; beyond it the 40 log10
/// slope with the breakpoint correction. The two branches agree at the
/// breakpoint. Callers are expected to check
/// [`d2d_in_valid_range`] and flag out-of-range evaluations.
pub fn path_loss_umi_los(
    d2d_m: f64,
    d3d_m: f64,
    h_bs_m: f64,
    h_ut_m: f64,
    params: &RadioParams,
) -> Result<f64, RadioError> {
    if !(d3d_m > 0.0) {
        return Err(RadioError::NonPositiveDistance(d3d_m));
    }
    let f_ghz = params.carrier_frequency_ghz;
    let bp = breakpoint_distance(params, h_bs_m, h_ut_m);
    let pl = if d2d_m <= bp {
        32.4 + 21.0 * d3d_m.log10() + 20.0 * f_ghz.log10()
    } else {
        let dh = h_bs_m - h_ut_m;
        32.4 + 40.0 * d3d_m.log10() + 20.0 * f_ghz.log10() - 9.5 * (bp * bp + dh * dh).log10()
    };
    Ok(pl)
}

/// Urban-micro non-line-of-sight path loss in dB: the standard fit floored
/// by the line-of-sight value.
pub fn path_loss_umi_nlos(d3d_m: f64, h_ut_m: f64, los_value_db: f64, params: &RadioParams) -> f64 {
    let f_ghz = params.carrier_frequency_ghz;
    let nlos = 35.3 * d3d_m.log10() + 22.4 + 21.3 * f_ghz.log10() - 0.3 * (h_ut_m - 1.5);
    los_value_db.max(nlos)
}

/// True when the planar distance lies inside the path-loss validity range.
pub fn d2d_in_valid_range(d2d_m: f64) -> bool {
    (UMI_D2D_VALID_RANGE_M.0..=UMI_D2D_VALID_RANGE_M.1).contains(&d2d_m)
}

/// Elevation and azimuth angles of arrival from a sector antenna to a user,
/// both in degrees. The elevation is measured downward from the horizon;
/// the azimuth is the user's bearing relative to the sector boresight,
/// wrapped to (-180, 180].
pub fn arrival_angles(user: &UserPoint, site: &Site, cell: &CellGeometry) -> (f64, f64) {
    let (d2d, _) = distances(user, site);
    let theta = if d2d == 0.0 {
        90.0
    } else {
        ((site.height_bs_m - user.height_ut_m) / d2d).atan().to_degrees()
    };
    let bearing = (user.y_m - site.y_m).atan2(user.x_m - site.x_m).to_degrees();
    let phi = wrap_deg(bearing - cell.boresight_azimuth_deg);
    (theta, phi)
}

/// Sectorized 3D antenna gain in dBi: the maximum element gain minus the
/// vertical and horizontal pattern attenuations, each capped at its
/// side-lobe level.
pub fn antenna_gain(theta_deg: f64, phi_deg: f64, tilt_deg: f64, params: &RadioParams) -> f64 {
    let dv = (theta_deg - tilt_deg) / params.theta_3db_deg;
    let dh = phi_deg / params.phi_3db_deg;
    let a_v = (12.0 * dv * dv).min(params.sll_v_db);
    let a_h = (12.0 * dh * dh).min(params.sll_h_db);
    params.g_max_dbi - (a_v + a_h)
}

/// Received signal strength in dBm. Cells in outage substitute the
/// pattern gain with [`OUTAGE_GAIN_DBI`].
pub fn received_power(cfg: &CellConfig, gain_dbi: f64, path_loss_db: f64, params: &RadioParams) -> f64 {
    let gain = if cfg.operational { gain_dbi } else { OUTAGE_GAIN_DBI };
    cfg.tx_power_dbm + gain + params.g_r_dbi - path_loss_db
}
