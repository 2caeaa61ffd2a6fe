//! Availability metrics, the five-level coverage/service state machine,
//! and the resilience constraint gate derived from a [`LinkReport`].

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::link::LinkReport;

#[derive(Debug, Error)]
pub enum ResilienceError {
    #[error("availabilities need at least one user")]
    ZeroUsers,
    #[error("malformed RSRP mix: {0}")]
    MalformedMix(String),
    #[error("satisfied fraction {0} outside [0, 1]")]
    FractionOutOfRange(f64),
}

/// Coverage and service state labels, from best to worst.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ResilienceState {
    G,
    F,
    A,
    P,
    O,
}

impl ResilienceState {
    pub fn letter(self) -> char {
        match self {
            ResilienceState::G => 'G',
            ResilienceState::F => 'F',
            ResilienceState::A => 'A',
            ResilienceState::P => 'P',
            ResilienceState::O => 'O',
        }
    }

    pub fn from_letter(c: char) -> Option<Self> {
        match c {
            'G' => Some(ResilienceState::G),
            'F' => Some(ResilienceState::F),
            'A' => Some(ResilienceState::A),
            'P' => Some(ResilienceState::P),
            'O' => Some(ResilienceState::O),
            _ => None,
        }
    }

    /// Every non-outage state counts as resilient.
    pub fn is_resilient(self) -> bool {
        self != ResilienceState::O
    }
}

impl std::fmt::Display for ResilienceState {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.letter())
    }
}

/// Operator thresholds for the gate and the RSRP condition bins.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResilienceThresholds {
    /// Required coverage availability.
    pub p_cov_hat: f64,
    /// Required service availability.
    pub p_serv_hat: f64,
    /// Users at or above this RSRP are in good radio conditions, dBm.
    pub good_rsrp_min_dbm: f64,
    /// Users below this RSRP are in poor conditions (uncoverable), dBm.
    pub cover_min_dbm: f64,
}

impl Default for ResilienceThresholds {
    fn default() -> Self {
        Self {
            p_cov_hat: 0.95,
            p_serv_hat: 0.5,
            good_rsrp_min_dbm: -90.0,
            cover_min_dbm: -127.0,
        }
    }
}

/// Fractions of users in good / fair / poor radio conditions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RsrpMix {
    pub good: f64,
    pub fair: f64,
    pub poor: f64,
}

impl RsrpMix {
    pub fn validate(&self) -> Result<(), ResilienceError> {
        for (name, v) in [("good", self.good), ("fair", self.fair), ("poor", self.poor)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(ResilienceError::MalformedMix(format!("{name} = {v}")));
            }
        }
        let sum = self.good + self.fair + self.poor;
        if (sum - 1.0).abs() > 1e-9 {
            return Err(ResilienceError::MalformedMix(format!("fractions sum to {sum}")));
        }
        Ok(())
    }
}

/// Availabilities, state labels, and the constraint gate of one evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResilienceSnapshot {
    pub p_coverage: f64,
    pub p_service: f64,
    pub rsrp_mix: RsrpMix,
    /// Fraction of users receiving at least their requested rate.
    pub d_satisfied: f64,
    pub coverage_state: ResilienceState,
    pub service_state: ResilienceState,
    pub gate_z: bool,
}

/// Coverage and service availability: the covered and satisfied fractions.
pub fn availabilities(report: &LinkReport) -> Result<(f64, f64), ResilienceError> {
    if report.n_users == 0 {
        return Err(ResilienceError::ZeroUsers);
    }
    let n = report.n_users as f64;
    Ok((
        report.covered_users() as f64 / n,
        report.satisfied_users() as f64 / n,
    ))
}

/// Classify the coverage chain from the (good, fair, poor) mix.
///
/// The arms are evaluated in exactly this order; the good/fair arms accept
/// the measure-zero tie good == fair so the partition is total. The final
/// fallback is unreachable for a true simplex point (it would force
/// poor >= 1/3, which the outage arm already captured) and exists only to
/// keep the match conservative and total.
pub fn classify_coverage(mix: &RsrpMix) -> Result<ResilienceState, ResilienceError> {
    mix.validate()?;
    let (x, y, z) = (mix.good, mix.fair, mix.poor);
    let state = if z >= 0.05 {
        ResilienceState::O
    } else if x >= y && x >= z && x > y + z {
        ResilienceState::G
    } else if x >= y && x >= z {
        ResilienceState::F
    } else if y > x && y >= z && z < 0.04 {
        ResilienceState::A
    } else if y > x && y >= z && (0.04..0.05).contains(&z) {
        ResilienceState::P
    } else {
        ResilienceState::P
    };
    Ok(state)
}

/// Classify the service chain from the satisfied-user fraction.
pub fn classify_service(d: f64) -> Result<ResilienceState, ResilienceError> {
    if !(0.0..=1.0).contains(&d) {
        return Err(ResilienceError::FractionOutOfRange(d));
    }
    let state = if d >= 0.80 {
        ResilienceState::G
    } else if d >= 0.65 {
        ResilienceState::F
    } else if d >= 0.50 {
        ResilienceState::A
    } else if d >= 0.30 {
        ResilienceState::P
    } else {
        ResilienceState::O
    };
    Ok(state)
}

/// The resilience constraint gate: both availabilities at or above their
/// thresholds.
pub fn gate(p_coverage: f64, p_service: f64, thresholds: &ResilienceThresholds) -> bool {
    p_coverage >= thresholds.p_cov_hat && p_service >= thresholds.p_serv_hat
}

impl ResilienceSnapshot {
    /// Derive the full snapshot from a link report.
    pub fn from_report(
        report: &LinkReport,
        thresholds: &ResilienceThresholds,
    ) -> Result<Self, ResilienceError> {
        let (p_coverage, p_service) = availabilities(report)?;
        let n = report.n_users as f64;
        let mut good = 0usize;
        let mut fair = 0usize;
        let mut poor = 0usize;
        for u in &report.users {
            if !u.covered {
                poor += 1;
            } else if u.rsrp_dbm >= thresholds.good_rsrp_min_dbm {
                good += 1;
            } else {
                fair += 1;
            }
        }
        let rsrp_mix = RsrpMix {
            good: good as f64 / n,
            fair: fair as f64 / n,
            poor: poor as f64 / n,
        };
        let coverage_state = classify_coverage(&rsrp_mix)?;
        let service_state = classify_service(p_service)?;
        Ok(Self {
            p_coverage,
            p_service,
            rsrp_mix,
            d_satisfied: p_service,
            coverage_state,
            service_state,
            gate_z: gate(p_coverage, p_service, thresholds),
        })
    }
}
