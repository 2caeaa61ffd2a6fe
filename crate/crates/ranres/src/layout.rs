//! Hexagonal multi-site geometry: site/cell/user placement and all
//! distance and adjacency queries.
//!
//! Sites sit on a flat hex grid centered at the origin; every site carries
//! three sector cells at boresights 0, 120 and -120 degrees. Users are
//! sampled
//! uniformly over the bounding box of the outermost sites plus half an
//! inter-site distance of margin, so edge cells carry load too.

use std::collections::BTreeSet;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Current on-disk layout document version.
pub const LAYOUT_FORMAT_VERSION: u32 = 1;

/// Sector boresights of a three-sector site, in degrees.
pub const SECTOR_AZIMUTHS_DEG: [f64; 3] = [0.0, 120.0, -120.0];

/// Validity range for user terminal heights, meters.
pub const UT_HEIGHT_RANGE_M: (f64, f64) = (1.5, 22.5);

/// Sites closer than this multiple of the inter-site distance are neighbors.
pub const NEIGHBOR_RADIUS_FACTOR: f64 = 1.2;

#[derive(Debug, Error)]
pub enum LayoutError {
    #[error("inter-site distance must be positive, got {0}")]
    NonPositiveIsd(f64),
    #[error("unknown site id {0}")]
    UnknownSite(usize),
    #[error("base station height must be positive, got {0}")]
    NonPositiveBsHeight(f64),
    #[error("user height {0} m outside the validity range [1.5, 22.5] m")]
    UserHeightOutOfRange(f64),
    #[error("unsupported layout format version {0}")]
    UnsupportedVersion(u32),
    #[error("layout invariant violated: {0}")]
    Invariant(String),
    #[error("layout JSON: {0}")]
    Json(#[from] serde_json::Error),
}

/// A base-station location hosting three sector antennas.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Site {
    pub id: usize,
    pub x_m: f64,
    pub y_m: f64,
    /// Antenna height above ground (h_BS).
    pub height_bs_m: f64,
}

/// One sector antenna of a site.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellGeometry {
    pub cell_id: usize,
    pub site_id: usize,
    /// Boresight azimuth of the sector (Phi_BS), degrees.
    pub boresight_azimuth_deg: f64,
}

/// A fixed user test point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserPoint {
    pub user_id: usize,
    pub x_m: f64,
    pub y_m: f64,
    /// Terminal height above ground (h_UT).
    pub height_ut_m: f64,
}

/// Immutable site/cell/user geometry of the service area.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkLayout {
    pub sites: Vec<Site>,
    pub cells: Vec<CellGeometry>,
    pub users: Vec<UserPoint>,
    pub inter_site_distance_m: f64,
}

/// Axis-aligned rectangle bounding the user placement region.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Region {
    pub min_x: f64,
    pub max_x: f64,
    pub min_y: f64,
    pub max_y: f64,
}

/// Parameters for [`build_hex_layout_with`]; heights default to the
/// reference configuration (10 m sites, 1.5 m terminals).
#[derive(Debug, Clone, PartialEq)]
pub struct HexLayoutParams {
    pub n_rings: usize,
    pub inter_site_distance_m: f64,
    pub n_users: usize,
    pub rng_seed: u64,
    pub bs_height_m: f64,
    pub ut_height_m: f64,
}

impl Default for HexLayoutParams {
    fn default() -> Self {
        Self {
            n_rings: 1,
            inter_site_distance_m: 300.0,
            n_users: 2500,
            rng_seed: 0,
            bs_height_m: 10.0,
            ut_height_m: 1.5,
        }
    }
}

/// Number of sites on a hex grid with `n_rings` rings: 1 + 3r(r+1).
pub fn hex_site_count(n_rings: usize) -> usize {
    1 + 3 * n_rings * (n_rings + 1)
}

/// Build the hex layout with reference heights. Deterministic for a fixed
/// seed; see [`build_hex_layout_with`] for the full parameter set.
pub fn build_hex_layout(
    n_rings: usize,
    inter_site_distance_m: f64,
    rng_seed: u64,
    n_users: usize,
) -> Result<NetworkLayout, LayoutError> {
    build_hex_layout_with(&HexLayoutParams {
        n_rings,
        inter_site_distance_m,
        n_users,
        rng_seed,
        ..HexLayoutParams::default()
    })
}

pub fn build_hex_layout_with(p: &HexLayoutParams) -> Result<NetworkLayout, LayoutError> {
    if !(p.inter_site_distance_m > 0.0) {
        return Err(LayoutError::NonPositiveIsd(p.inter_site_distance_m));
    }
    if !(p.bs_height_m > 0.0) {
        return Err(LayoutError::NonPositiveBsHeight(p.bs_height_m));
    }
    if p.ut_height_m < UT_HEIGHT_RANGE_M.0 || p.ut_height_m > UT_HEIGHT_RANGE_M.1 {
        return Err(LayoutError::UserHeightOutOfRange(p.ut_height_m));
    }

    let isd = p.inter_site_distance_m;
    let mut sites = Vec::with_capacity(hex_site_count(p.n_rings));
    for (q, r) in hex_axial_coords(p.n_rings) {
        let (x, y) = axial_to_xy(q, r, isd);
        sites.push(Site {
            id: sites.len(),
            x_m: x,
            y_m: y,
            height_bs_m: p.bs_height_m,
        });
    }

    let mut cells = Vec::with_capacity(3 * sites.len());
    for site in &sites {
        for az in SECTOR_AZIMUTHS_DEG {
            cells.push(CellGeometry {
                cell_id: cells.len(),
                site_id: site.id,
                boresight_azimuth_deg: az,
            });
        }
    }

    let region = region_of(&sites, isd);
    let mut rng = ChaCha8Rng::seed_from_u64(p.rng_seed);
    let mut users = Vec::with_capacity(p.n_users);
    for user_id in 0..p.n_users {
        let x = rng.random_range(region.min_x..=region.max_x);
        let y = rng.random_range(region.min_y..=region.max_y);
        users.push(UserPoint {
            user_id,
            x_m: x,
            y_m: y,
            height_ut_m: p.ut_height_m,
        });
    }

    let layout = NetworkLayout {
        sites,
        cells,
        users,
        inter_site_distance_m: isd,
    };
    layout.check_invariants()?;
    Ok(layout)
}

/// Axial hex coordinates of rings 0..=n, center first, each ring walked in
/// a fixed direction order so enumeration is deterministic.
fn hex_axial_coords(n_rings: usize) -> Vec<(i64, i64)> {
    const DIRS: [(i64, i64); 6] = [(1, 0), (1, -1), (0, -1), (-1, 0), (-1, 1), (0, 1)];
    let mut coords = vec![(0i64, 0i64)];
    for ring in 1..=n_rings as i64 {
        let (mut q, mut r) = (-ring, ring);
        for dir in DIRS {
            for _ in 0..ring {
                coords.push((q, r));
                q += dir.0;
                r += dir.1;
            }
        }
    }
    coords
}

fn axial_to_xy(q: i64, r: i64, isd: f64) -> (f64, f64) {
    let x = isd * (q as f64 + r as f64 / 2.0);
    let y = isd * (3f64.sqrt() / 2.0) * r as f64;
    (x, y)
}

fn region_of(sites: &[Site], isd: f64) -> Region {
    let margin = isd / 2.0;
    let mut min_x = f64::INFINITY;
    let mut max_x = f64::NEG_INFINITY;
    let mut min_y = f64::INFINITY;
    let mut max_y = f64::NEG_INFINITY;
    for s in sites {
        min_x = min_x.min(s.x_m);
        max_x = max_x.max(s.x_m);
        min_y = min_y.min(s.y_m);
        max_y = max_y.max(s.y_m);
    }
    Region {
        min_x: min_x - margin,
        max_x: max_x + margin,
        min_y: min_y - margin,
        max_y: max_y + margin,
    }
}

/// Planar and slant distances between a user and a site antenna.
pub fn distances(user: &UserPoint, site: &Site) -> (f64, f64) {
    let dx = user.x_m - site.x_m;
    let dy = user.y_m - site.y_m;
    let d2d = (dx * dx + dy * dy).sqrt();
    let dh = site.height_bs_m - user.height_ut_m;
    let d3d = (d2d * d2d + dh * dh).sqrt();
    (d2d, d3d)
}

impl NetworkLayout {
    pub fn n_sites(&self) -> usize {
        self.sites.len()
    }

    pub fn n_cells(&self) -> usize {
        self.cells.len()
    }

    pub fn n_users(&self) -> usize {
        self.users.len()
    }

    /// Cell ids hosted by a site, ascending.
    pub fn cells_of_site(&self, site_id: usize) -> Vec<usize> {
        self.cells
            .iter()
            .filter(|c| c.site_id == site_id)
            .map(|c| c.cell_id)
            .collect()
    }

    /// User placement region (outer-site bounding box plus isd/2 margin).
    pub fn user_region(&self) -> Region {
        region_of(&self.sites, self.inter_site_distance_m)
    }

    /// Sites within 1.2 inter-site distances of `site_id`, excluding itself.
    pub fn neighbor_sites(&self, site_id: usize) -> Result<BTreeSet<usize>, LayoutError> {
        let site = self
            .sites
            .get(site_id)
            .ok_or(LayoutError::UnknownSite(site_id))?;
        let radius = NEIGHBOR_RADIUS_FACTOR * self.inter_site_distance_m;
        Ok(self
            .sites
            .iter()
            .filter(|other| {
                other.id != site_id
                    && (other.x_m - site.x_m).hypot(other.y_m - site.y_m) <= radius
            })
            .map(|other| other.id)
            .collect())
    }

    pub fn check_invariants(&self) -> Result<(), LayoutError> {
        if !self.inter_site_distance_m.is_finite() || !(self.inter_site_distance_m > 0.0) {
            return Err(LayoutError::NonPositiveIsd(self.inter_site_distance_m));
        }
        if self.cells.len() != 3 * self.sites.len() {
            return Err(LayoutError::Invariant(format!(
                "expected {} cells for {} sites, got {}",
                3 * self.sites.len(),
                self.sites.len(),
                self.cells.len()
            )));
        }
        for (i, site) in self.sites.iter().enumerate() {
            if site.id != i {
                return Err(LayoutError::Invariant(format!(
                    "site id {} at position {}",
                    site.id, i
                )));
            }
            if !site.x_m.is_finite() || !site.y_m.is_finite() || !site.height_bs_m.is_finite() {
                return Err(LayoutError::Invariant(format!(
                    "site {} has a non-finite field",
                    site.id
                )));
            }
            if !(site.height_bs_m > 0.0) {
                return Err(LayoutError::NonPositiveBsHeight(site.height_bs_m));
            }
        }
        for (i, cell) in self.cells.iter().enumerate() {
            if cell.cell_id != i {
                return Err(LayoutError::Invariant(format!(
                    "cell id {} at position {}",
                    cell.cell_id, i
                )));
            }
            if cell.site_id >= self.sites.len() {
                return Err(LayoutError::UnknownSite(cell.site_id));
            }
            if !SECTOR_AZIMUTHS_DEG.contains(&cell.boresight_azimuth_deg) {
                return Err(LayoutError::Invariant(format!(
                    "cell {} boresight {} not in {{0, 120, -120}}",
                    cell.cell_id, cell.boresight_azimuth_deg
                )));
            }
        }
        for site in &self.sites {
            let azimuths: Vec<f64> = self
                .cells
                .iter()
                .filter(|c| c.site_id == site.id)
                .map(|c| c.boresight_azimuth_deg)
                .collect();
            if azimuths != SECTOR_AZIMUTHS_DEG {
                return Err(LayoutError::Invariant(format!(
                    "site {} sectors {:?} != {:?}",
                    site.id, azimuths, SECTOR_AZIMUTHS_DEG
                )));
            }
        }
        for a in &self.sites {
            for b in &self.sites {
                if a.id < b.id {
                    let d = (a.x_m - b.x_m).hypot(a.y_m - b.y_m);
                    if d < self.inter_site_distance_m - 1e-6 {
                        return Err(LayoutError::Invariant(format!(
                            "sites {} and {} are {:.3} m apart, below the {:.3} m inter-site distance",
                            a.id, b.id, d, self.inter_site_distance_m
                        )));
                    }
                }
            }
        }
        for (i, user) in self.users.iter().enumerate() {
            if user.user_id != i {
                return Err(LayoutError::Invariant(format!(
                    "user id {} at position {}",
                    user.user_id, i
                )));
            }
            if !user.x_m.is_finite() || !user.y_m.is_finite() || !user.height_ut_m.is_finite() {
                return Err(LayoutError::Invariant(format!(
                    "user {} has a non-finite field",
                    user.user_id
                )));
            }
            if user.height_ut_m < UT_HEIGHT_RANGE_M.0 || user.height_ut_m > UT_HEIGHT_RANGE_M.1 {
                return Err(LayoutError::UserHeightOutOfRange(user.height_ut_m));
            }
        }
        Ok(())
    }

    /// Serialize to the versioned layout JSON document.
    pub fn to_json(&self) -> String {
        let doc = LayoutDocument {
            format_version: LAYOUT_FORMAT_VERSION,
            layout: self.clone(),
        };
        serde_json::to_string_pretty(&doc).expect("layout serializes")
    }

    /// Parse and validate a layout JSON document.
    pub fn from_json(text: &str) -> Result<Self, LayoutError> {
        let doc: LayoutDocument = serde_json::from_str(text)?;
        if doc.format_version != LAYOUT_FORMAT_VERSION {
            return Err(LayoutError::UnsupportedVersion(doc.format_version));
        }
        doc.layout.check_invariants()?;
        Ok(doc.layout)
    }
}

#[derive(Serialize, Deserialize)]
struct LayoutDocument {
    format_version: u32,
    #[serde(flatten)]
    layout: NetworkLayout,
}
