//! Small unit-conversion helpers shared across the link budget chain.

/// dBm to linear milliwatts.
pub fn dbm_to_mw(dbm: f64) -> f64 {
    10f64.powf(dbm / 10.0)
}

/// Linear milliwatts to dBm.
pub fn mw_to_dbm(mw: f64) -> f64 {
    10.0 * mw.log10()
}

/// Wrap an angle in degrees to the half-open interval (-180, 180].
pub fn wrap_deg(angle: f64) -> f64 {
    let w = (angle + 180.0).rem_euclid(360.0) - 180.0;
    if w == -180.0 {
        180.0
    } else {
        w
    }
}
