//! Physical scenario parameters and their long-term realization.

use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::channel::{
    pathloss_db, ArrayGeometry, BlockageModel, ClusterGeometry, Direction, PathDirections, Rician,
};
use crate::error::{Error, Result};

/// Propagation parameters shared by one class of links.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkClass {
    pub rician: Rician,
    pub pathloss_exponent: f64,
    pub shadow_sigma_db: f64,
}

impl LinkClass {
    /// NLoS-only BS-user links (κ = 0, α = 3.5, σ = 8.2 dB).
    pub fn umi_nlos() -> Self {
        Self {
            rician: Rician::Factor(0.0),
            pathloss_exponent: 3.5,
            shadow_sigma_db: 8.2,
        }
    }

    /// LoS-only RIS links (κ → ∞, α = 2, σ = 4 dB).
    pub fn umi_los() -> Self {
        Self {
            rician: Rician::LosOnly,
            pathloss_exponent: 2.0,
            shadow_sigma_db: 4.0,
        }
    }
}

/// Polar layout: BS at the origin, RISs on an arc, users dropped in an annular sector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Layout {
    pub ris_radius_m: f64,
    /// Angular width of the sector holding RISs and users.
    pub sector_rad: f64,
    pub user_radius_min_m: f64,
    pub user_radius_max_m: f64,
}

impl Default for Layout {
    fn default() -> Self {
        Self {
            ris_radius_m: 50.0,
            sector_rad: PI / 6.0,
            user_radius_min_m: 50.0,
            user_radius_max_m: 80.0,
        }
    }
}

impl Layout {
    /// Polar angle of RIS `u` out of `count`, spread evenly over the sector.
    pub fn ris_angle(&self, u: usize, count: usize) -> f64 {
        if count <= 1 {
            0.0
        } else {
            self.sector_rad * u as f64 / (count - 1) as f64
        }
    }
}

/// Every physical and array parameter of a simulated downlink. Powers are linear watts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub n_tx: usize,
    pub n_ris: usize,
    pub elems_per_ris: usize,
    pub n_users: usize,
    pub bs_rows: Option<usize>,
    pub ris_rows: Option<usize>,
    pub element_spacing: f64,
    pub p_max_w: f64,
    pub noise_w: f64,
    pub fc_ghz: f64,
    /// SINR threshold γ shared by all users.
    pub target_sinr: f64,
    pub blockage: BlockageModel,
    pub clusters: usize,
    pub subpaths: usize,
    pub angular_spread_rad: f64,
    pub direct_link: LinkClass,
    pub ris_link: LinkClass,
    pub layout: Layout,
}

pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

/// γ = 2^R - 1.
pub fn sinr_threshold(target_rate_bps_hz: f64) -> f64 {
    2f64.powf(target_rate_bps_hz) - 1.0
}

impl ScenarioConfig {
    /// 28 GHz, 30 dBm transmit power, -94 dBm noise, L = 5, I = 20, 0.5 bps/Hz target.
    pub fn new(n_tx: usize, n_ris: usize, elems_per_ris: usize, n_users: usize) -> Self {
        Self {
            n_tx,
            n_ris,
            elems_per_ris,
            n_users,
            bs_rows: None,
            ris_rows: None,
            element_spacing: 0.5,
            p_max_w: dbm_to_watts(30.0),
            noise_w: dbm_to_watts(-94.0),
            fc_ghz: 28.0,
            target_sinr: sinr_threshold(0.5),
            blockage: BlockageModel::Fixed(0.0),
            clusters: 5,
            subpaths: 20,
            angular_spread_rad: 5f64.to_radians(),
            direct_link: LinkClass::umi_nlos(),
            ris_link: LinkClass::umi_los(),
            layout: Layout::default(),
        }
    }

    pub fn with_blockage(mut self, blockage: BlockageModel) -> Self {
        self.blockage = blockage;
        self
    }

    pub fn with_target_rate(mut self, rate_bps_hz: f64) -> Self {
        self.target_sinr = sinr_threshold(rate_bps_hz);
        self
    }

    /// Number of reflecting elements over all RISs (UM).
    pub fn total_elements(&self) -> usize {
        self.n_ris * self.elems_per_ris
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidScenario(msg.to_string()));
        if self.n_tx == 0 || self.n_users == 0 {
            return bad("n_tx and n_users must be positive");
        }
        if self.n_ris > 0 && self.elems_per_ris == 0 {
            return bad("elems_per_ris must be positive when RISs are deployed");
        }
        if self.clusters == 0 || self.subpaths == 0 {
            return bad("cluster and subpath counts must be positive");
        }
        if !(self.p_max_w > 0.0 && self.p_max_w.is_finite()) {
            return bad("p_max must be positive and finite");
        }
        if !(self.noise_w > 0.0 && self.noise_w.is_finite()) {
            return bad("noise power must be positive and finite");
        }
        if !(self.target_sinr > 0.0 && self.target_sinr.is_finite()) {
            return bad("SINR threshold must be positive");
        }
        if !(self.fc_ghz > 0.0) {
            return bad("carrier frequency must be positive");
        }
        if let BlockageModel::Fixed(p) = self.blockage {
            if !(0.0..=1.0).contains(&p) {
                return bad("p_block must lie in [0, 1]");
            }
        }
        let l = &self.layout;
        if !(l.user_radius_min_m > 0.0 && l.user_radius_max_m >= l.user_radius_min_m) {
            return bad("user radius range must be positive and ordered");
        }
        self.bs_array()?;
        self.ris_array()?;
        Ok(())
    }

    pub fn bs_array(&self) -> Result<ArrayGeometry> {
        match self.bs_rows {
            Some(r) => ArrayGeometry::with_rows(self.n_tx, r, self.element_spacing),
            None => Ok(ArrayGeometry::most_square(self.n_tx, self.element_spacing)),
        }
    }

    pub fn ris_array(&self) -> Result<ArrayGeometry> {
        match self.ris_rows {
            Some(r) if self.elems_per_ris > 0 => {
                ArrayGeometry::with_rows(self.elems_per_ris, r, self.element_spacing)
            }
            _ => Ok(ArrayGeometry::most_square(self.elems_per_ris, self.element_spacing)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UserSite {
    pub radius_m: f64,
    pub angle_rad: f64,
    pub blockage_prob: f64,
}

impl UserSite {
    fn position(&self) -> (f64, f64) {
        polar(self.radius_m, self.angle_rad)
    }
}

fn polar(r: f64, angle: f64) -> (f64, f64) {
    (r * angle.cos(), r * angle.sin())
}

fn bearing(from: (f64, f64), to: (f64, f64)) -> f64 {
    (to.1 - from.1).atan2(to.0 - from.0)
}

fn distance(a: (f64, f64), b: (f64, f64)) -> f64 {
    (a.0 - b.0).hypot(a.1 - b.1)
}

const HORIZON: f64 = PI / 2.0;

/// A scenario with its long-term parameters drawn: user drop, shadowing,
/// cluster central angles. Small-scale fading is drawn per sample from this.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub config: ScenarioConfig,
    pub bs_array: ArrayGeometry,
    pub ris_array: ArrayGeometry,
    pub users: Vec<UserSite>,
    /// BS-user links, one per user.
    pub direct: Vec<ClusterGeometry>,
    /// `ris_user[u][k]`.
    pub ris_user: Vec<Vec<ClusterGeometry>>,
    /// BS-RIS links, one per RIS.
    pub bs_ris: Vec<ClusterGeometry>,
}

impl Scenario {
    pub fn realize<R: Rng + ?Sized>(config: &ScenarioConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let layout = config.layout;
        let bs = (0.0, 0.0);

        let users: Vec<UserSite> = (0..config.n_users)
            .map(|_| {
                let radius_m = rng.random_range(layout.user_radius_min_m..=layout.user_radius_max_m);
                let angle_rad = rng.random_range(0.0..=layout.sector_rad);
                UserSite {
                    radius_m,
                    angle_rad,
                    blockage_prob: config.blockage.probability(radius_m),
                }
            })
            .collect();

        let direct = users
            .iter()
            .map(|user| {
                let to = user.position();
                let los = PathDirections {
                    departure: Direction::new(bearing(bs, to), HORIZON),
                    arrival: None,
                };
                let clusters = (0..config.clusters)
                    .map(|_| PathDirections {
                        departure: sector_direction(los.departure, layout.sector_rad, rng),
                        arrival: None,
                    })
                    .collect();
                link(config, config.direct_link, los, clusters, distance(bs, to), rng)
            })
            .collect::<Result<Vec<_>>>()?;

        let ris_sites: Vec<(f64, f64)> = (0..config.n_ris)
            .map(|u| polar(layout.ris_radius_m, layout.ris_angle(u, config.n_ris)))
            .collect();

        let bs_ris = ris_sites
            .iter()
            .map(|&site| {
                let los = PathDirections {
                    departure: Direction::new(bearing(bs, site), HORIZON),
                    arrival: Some(Direction::new(bearing(site, bs), HORIZON)),
                };
                let clusters = (0..config.clusters)
                    .map(|_| PathDirections {
                        departure: sector_direction(los.departure, layout.sector_rad, rng),
                        arrival: Some(sector_direction(
                            los.arrival.expect("set above"),
                            layout.sector_rad,
                            rng,
                        )),
                    })
                    .collect();
                link(config, config.ris_link, los, clusters, distance(bs, site), rng)
            })
            .collect::<Result<Vec<_>>>()?;

        let ris_user = ris_sites
            .iter()
            .map(|&site| {
                users
                    .iter()
                    .map(|user| {
                        let to = user.position();
                        let los = PathDirections {
                            departure: Direction::new(bearing(site, to), HORIZON),
                            arrival: None,
                        };
                        let clusters = (0..config.clusters)
                            .map(|_| PathDirections {
                                departure: sector_direction(los.departure, layout.sector_rad, rng),
                                arrival: None,
                            })
                            .collect();
                        link(config, config.ris_link, los, clusters, distance(site, to), rng)
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;

        Ok(Self {
            config: config.clone(),
            bs_array: config.bs_array()?,
            ris_array: config.ris_array()?,
            users,
            direct,
            ris_user,
            bs_ris,
        })
    }

    pub fn n_users(&self) -> usize {
        self.users.len()
    }

    pub fn n_tx(&self) -> usize {
        self.bs_array.len()
    }

    /// Length of the phase vector, UM + 1.
    pub fn phase_len(&self) -> usize {
        self.bs_ris.len() * self.ris_array.len() + 1
    }

    /// Replaces the blockage law while keeping every long-term draw.
    pub fn with_blockage(&self, blockage: BlockageModel) -> Self {
        let mut out = self.clone();
        out.config.blockage = blockage;
        for user in &mut out.users {
            user.blockage_prob = blockage.probability(user.radius_m);
        }
        out
    }
}

/// Central direction drawn uniformly in a window of width `2 * sector` around `center`
/// (azimuth) and `sector` around it (elevation).
fn sector_direction<R: Rng + ?Sized>(center: Direction, sector: f64, rng: &mut R) -> Direction {
    let az = center.azimuth + rng.random_range(-sector..=sector);
    let el = center.elevation + rng.random_range(-sector / 2.0..=sector / 2.0);
    Direction::new(az, el)
}

fn link<R: Rng + ?Sized>(
    config: &ScenarioConfig,
    class: LinkClass,
    los: PathDirections,
    clusters: Vec<PathDirections>,
    distance_m: f64,
    rng: &mut R,
) -> Result<ClusterGeometry> {
    // the model is only defined from 1 m on; closer drops are pinned to it
    let distance_m = distance_m.max(1.0);
    let pl = pathloss_db(
        config.fc_ghz,
        distance_m,
        class.pathloss_exponent,
        class.shadow_sigma_db,
        rng,
    )?;
    Ok(ClusterGeometry {
        los,
        clusters,
        subpaths: config.subpaths,
        angular_spread_rad: config.angular_spread_rad,
        rician: class.rician,
        distance_m,
        pathloss_db: pl,
    })
}
