//! Clustered mmWave channel generation.
//!
//! Links follow a Saleh-Valenzuela model: an optional line-of-sight path plus
//! `L` scattering clusters of `I` subpaths each, observed through uniform
//! planar arrays. Direct BS-user links are additionally thinned by a
//! per-cluster Bernoulli blockage mask; links through the RISs never are.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::{Rng, RngCore};
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{stream, SimRng};
use crate::scenario::Scenario;

/// Uniform planar array, elements indexed row-major with zero-based `(r, c)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArrayGeometry {
    pub rows: usize,
    pub cols: usize,
    pub element_spacing_wavelengths: f64,
}

impl ArrayGeometry {
    pub fn new(rows: usize, cols: usize, element_spacing_wavelengths: f64) -> Self {
        Self {
            rows,
            cols,
            element_spacing_wavelengths,
        }
    }

    /// Most-square factorization `rows * cols = n` with `rows <= cols`.
    pub fn most_square(n: usize, element_spacing_wavelengths: f64) -> Self {
        let mut rows = (n as f64).sqrt().floor() as usize;
        while rows > 1 && !n.is_multiple_of(rows) {
            rows -= 1;
        }
        let rows = rows.max(1);
        Self::new(rows, n / rows, element_spacing_wavelengths)
    }

    /// Factorization with a fixed number of rows, if it divides `n`.
    pub fn with_rows(n: usize, rows: usize, element_spacing_wavelengths: f64) -> Result<Self> {
        if rows == 0 || !n.is_multiple_of(rows) {
            return Err(Error::InvalidScenario(format!(
                "{rows} rows do not divide an array of {n} elements"
            )));
        }
        Ok(Self::new(rows, n / rows, element_spacing_wavelengths))
    }

    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Array response toward `direction`.
    pub fn steering(&self, direction: Direction) -> DVector<Complex64> {
        steering_vector(self, direction.azimuth, direction.elevation)
    }
}

/// Unit-modulus steering vector of a UPA.
///
/// Element `(r, c)` carries phase
/// `2π·d·(r·sin(el)·cos(az) + c·sin(el)·sin(az))`.
pub fn steering_vector(geometry: &ArrayGeometry, azimuth: f64, elevation: f64) -> DVector<Complex64> {
    let k = 2.0 * PI * geometry.element_spacing_wavelengths;
    let (sin_el, _) = elevation.sin_cos();
    let (sin_az, cos_az) = azimuth.sin_cos();
    let row_step = k * sin_el * cos_az;
    let col_step = k * sin_el * sin_az;
    // separable: one phasor per row times one per column
    let cols: Vec<Complex64> = (0..geometry.cols)
        .map(|c| Complex64::from_polar(1.0, c as f64 * col_step))
        .collect();
    let mut out = DVector::zeros(geometry.len());
    for r in 0..geometry.rows {
        let row = Complex64::from_polar(1.0, r as f64 * row_step);
        for (c, col) in cols.iter().enumerate() {
            out[r * geometry.cols + c] = row * col;
        }
    }
    out
}

/// Large-scale UMi street-canyon path loss in dB, `fc` in GHz.
pub fn pathloss_db<R: Rng + ?Sized>(
    fc_ghz: f64,
    distance_m: f64,
    alpha: f64,
    shadow_sigma_db: f64,
    rng: &mut R,
) -> Result<f64> {
    if !(distance_m >= 1.0) {
        return Err(Error::DistanceOutOfDomain(distance_m));
    }
    let shadow = if shadow_sigma_db > 0.0 {
        let z: f64 = StandardNormal.sample(rng);
        shadow_sigma_db * z
    } else {
        0.0
    };
    Ok(32.4 + 20.0 * fc_ghz.log10() + 10.0 * alpha * distance_m.log10() + shadow)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum BlockageModel {
    /// `p(d) = max(0, 1 - exp(-a_out d + b_out))`.
    Distance { a_out: f64, b_out: f64 },
    Fixed(f64),
}

impl BlockageModel {
    pub fn probability(&self, distance_m: f64) -> f64 {
        match *self {
            BlockageModel::Distance { a_out, b_out } => {
                (1.0 - (-a_out * distance_m + b_out).exp()).clamp(0.0, 1.0)
            }
            BlockageModel::Fixed(p) => p.clamp(0.0, 1.0),
        }
    }
}

/// Rician factor of a link; `LosOnly` encodes κ → ∞.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Rician {
    Factor(f64),
    LosOnly,
}

impl Rician {
    /// ζ_0 = κ / (1 + κ).
    pub fn los_fraction(&self) -> f64 {
        match *self {
            Rician::Factor(k) => k / (1.0 + k),
            Rician::LosOnly => 1.0,
        }
    }

    /// ζ_l = 1 / ((L - 1)(1 + κ)); a single cluster takes the whole NLoS share.
    pub fn nlos_fraction(&self, clusters: usize) -> f64 {
        match *self {
            Rician::Factor(k) if clusters > 1 => 1.0 / ((clusters - 1) as f64 * (1.0 + k)),
            Rician::Factor(k) => 1.0 / (1.0 + k),
            Rician::LosOnly => 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Direction {
    pub azimuth: f64,
    pub elevation: f64,
}

impl Direction {
    pub fn new(azimuth: f64, elevation: f64) -> Self {
        Self { azimuth, elevation }
    }

    fn jitter<R: Rng + ?Sized>(&self, spread: &Normal<f64>, rng: &mut R) -> Self {
        Self {
            azimuth: self.azimuth + spread.sample(rng),
            elevation: self.elevation + spread.sample(rng),
        }
    }

    fn shifted(&self, delta_az: f64, delta_el: f64) -> Self {
        Self::new(self.azimuth + delta_az, self.elevation + delta_el)
    }
}

/// Departure (and, for BS-RIS links, arrival) directions of one path or cluster.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathDirections {
    pub departure: Direction,
    pub arrival: Option<Direction>,
}

impl PathDirections {
    fn perturbed(&self, sign: &mut impl FnMut() -> f64, err: f64) -> Self {
        Self {
            departure: self.departure.shifted(sign() * err, sign() * err),
            arrival: self.arrival.map(|a| a.shifted(sign() * err, sign() * err)),
        }
    }
}

/// Long-term description of one link.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterGeometry {
    /// Line-of-sight directions, fixed by the geometry.
    pub los: PathDirections,
    /// Central directions of the scattering clusters.
    pub clusters: Vec<PathDirections>,
    pub subpaths: usize,
    pub angular_spread_rad: f64,
    pub rician: Rician,
    pub distance_m: f64,
    pub pathloss_db: f64,
}

impl ClusterGeometry {
    /// Linear large-scale power gain `10^(-PL/10)`.
    pub fn path_gain(&self) -> f64 {
        10f64.powf(-self.pathloss_db / 10.0)
    }

    /// ζ_0 and ζ_l, counting the LoS path as group 0 so that `ζ_0 + L·ζ_l = 1`
    /// over the `L` scattering clusters.
    pub fn power_fractions(&self) -> (f64, f64) {
        (
            self.rician.los_fraction(),
            self.rician.nlos_fraction(self.clusters.len() + 1),
        )
    }

    fn spread(&self) -> Normal<f64> {
        Normal::new(0.0, self.angular_spread_rad.max(0.0)).expect("finite spread")
    }

    fn nlos_scale(&self) -> f64 {
        let paths = (self.subpaths * self.clusters.len()).max(1);
        (1.0 / paths as f64).sqrt()
    }

    /// Draws a vector channel. `mask[l]` (cluster 0 = LoS) switches paths off.
    pub fn sample_vector<R: Rng + ?Sized>(
        &self,
        array: &ArrayGeometry,
        mask: Option<&[bool]>,
        rng: &mut R,
    ) -> DVector<Complex64> {
        let gain = self.path_gain();
        let (zeta_los, zeta_nlos) = self.power_fractions();
        let open = |l: usize| mask.is_none_or(|m| m[l]);
        let mut h = DVector::zeros(array.len());
        if zeta_los > 0.0 {
            let g = complex_gaussian(zeta_los * gain, rng);
            if open(0) {
                h.axpy(g, &array.steering(self.los.departure), Complex64::new(1.0, 0.0));
            }
        }
        if zeta_nlos > 0.0 {
            let spread = self.spread();
            let scale = Complex64::new(self.nlos_scale(), 0.0);
            for (l, cluster) in self.clusters.iter().enumerate() {
                for _ in 0..self.subpaths {
                    let g = complex_gaussian(zeta_nlos * gain, rng);
                    let dir = cluster.departure.jitter(&spread, rng);
                    if open(l + 1) {
                        h.axpy(g * scale, &array.steering(dir), Complex64::new(1.0, 0.0));
                    }
                }
            }
        }
        h
    }

    /// Draws a matrix channel `rx_array.len() x tx_array.len()`.
    pub fn sample_matrix<R: Rng + ?Sized>(
        &self,
        rx_array: &ArrayGeometry,
        tx_array: &ArrayGeometry,
        rng: &mut R,
    ) -> DMatrix<Complex64> {
        let gain = self.path_gain();
        let (zeta_los, zeta_nlos) = self.power_fractions();
        let mut h = DMatrix::zeros(rx_array.len(), tx_array.len());
        let add_path = |h: &mut DMatrix<Complex64>, g: Complex64, rx: Direction, tx: Direction| {
            let a_rx = rx_array.steering(rx);
            let a_tx = tx_array.steering(tx);
            h.gerc(g, &a_rx, &a_tx, Complex64::new(1.0, 0.0));
        };
        if zeta_los > 0.0 {
            let g = complex_gaussian(zeta_los * gain, rng);
            let rx = self.los.arrival.unwrap_or(self.los.departure);
            add_path(&mut h, g, rx, self.los.departure);
        }
        if zeta_nlos > 0.0 {
            let spread = self.spread();
            let scale = self.nlos_scale();
            for cluster in &self.clusters {
                let rx_center = cluster.arrival.unwrap_or(cluster.departure);
                for _ in 0..self.subpaths {
                    let g = complex_gaussian(zeta_nlos * gain, rng) * scale;
                    let tx = cluster.departure.jitter(&spread, rng);
                    let rx = rx_center.jitter(&spread, rng);
                    add_path(&mut h, g, rx, tx);
                }
            }
        }
        h
    }

    /// Shifts every central angle by `±err`, with an independent random sign per angle.
    pub fn perturb_angles<R: Rng + ?Sized>(&mut self, err: f64, rng: &mut R) {
        let mut sign = || if rng.random::<bool>() { 1.0 } else { -1.0 };
        self.los = self.los.perturbed(&mut sign, err);
        for c in &mut self.clusters {
            *c = c.perturbed(&mut sign, err);
        }
    }
}

/// Circularly-symmetric complex Gaussian with total variance `variance`.
pub fn complex_gaussian<R: Rng + ?Sized>(variance: f64, rng: &mut R) -> Complex64 {
    let s = (variance / 2.0).sqrt();
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    Complex64::new(s * re, s * im)
}

/// One small-scale realization of every link.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelSample {
    /// Blockage-masked direct channels `h_{b,k}`.
    pub direct: Vec<DVector<Complex64>>,
    /// `ris_user[u][k]` is `h_{u,k}`.
    pub ris_user: Vec<Vec<DVector<Complex64>>>,
    /// `bs_ris[u]` is `H_u` (M x N).
    pub bs_ris: Vec<DMatrix<Complex64>>,
    /// Equivalent channels `G_k`, (UM+1) x N.
    pub equivalent: Vec<DMatrix<Complex64>>,
    /// `blockage_mask[k][l]`, true = cluster `l` of the direct link is unblocked.
    pub blockage_mask: Vec<Vec<bool>>,
}

impl ChannelSample {
    /// Wraps prebuilt equivalent channels, e.g. for synthetic evaluation streams.
    pub fn from_equivalent(equivalent: Vec<DMatrix<Complex64>>) -> Self {
        Self {
            direct: Vec::new(),
            ris_user: Vec::new(),
            bs_ris: Vec::new(),
            blockage_mask: Vec::new(),
            equivalent,
        }
    }

    pub fn n_users(&self) -> usize {
        self.equivalent.len()
    }
}

/// `G_k = [diag(h_k^H) H ; h_{b,k}^H]` with the RIS blocks stacked in order `u = 0..U`.
pub fn assemble_equivalent(
    direct: &DVector<Complex64>,
    ris_user: &[DVector<Complex64>],
    bs_ris: &[DMatrix<Complex64>],
) -> Result<DMatrix<Complex64>> {
    if ris_user.len() != bs_ris.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} RIS-user links but {} BS-RIS links",
            ris_user.len(),
            bs_ris.len()
        )));
    }
    let n = direct.len();
    let mut rows = 0;
    for (h, big) in ris_user.iter().zip(bs_ris) {
        if big.ncols() != n || big.nrows() != h.len() {
            return Err(Error::DimensionMismatch(format!(
                "RIS block is {}x{}, expected {}x{}",
                big.nrows(),
                big.ncols(),
                h.len(),
                n
            )));
        }
        rows += h.len();
    }
    let mut g = DMatrix::zeros(rows + 1, n);
    let mut offset = 0;
    for (h, big) in ris_user.iter().zip(bs_ris) {
        for m in 0..h.len() {
            let w = h[m].conj();
            for col in 0..n {
                g[(offset + m, col)] = w * big[(m, col)];
            }
        }
        offset += h.len();
    }
    for col in 0..n {
        g[(rows, col)] = direct[col].conj();
    }
    Ok(g)
}

/// Draws one realization of every link of `scenario`.
///
/// Consumes exactly three words from `rng`; each link then runs on its own
/// derived stream, so realizations stay paired across scenarios that differ
/// only in RIS count, RIS size or blockage law.
pub fn sample_channel<R: RngCore + ?Sized>(scenario: &Scenario, rng: &mut R) -> ChannelSample {
    let direct_seed = rng.next_u64();
    let ris_seed = rng.next_u64();
    let blockage_seed = rng.next_u64();

    let k_users = scenario.users.len();
    let n_ris = scenario.bs_ris.len();

    let bs_ris: Vec<DMatrix<Complex64>> = scenario
        .bs_ris
        .iter()
        .enumerate()
        .map(|(u, link)| {
            let mut r: SimRng = stream(ris_seed, &[u as u64, u64::MAX]);
            link.sample_matrix(&scenario.ris_array, &scenario.bs_array, &mut r)
        })
        .collect();

    let ris_user: Vec<Vec<DVector<Complex64>>> = scenario
        .ris_user
        .iter()
        .enumerate()
        .map(|(u, links)| {
            links
                .iter()
                .enumerate()
                .map(|(k, link)| {
                    let mut r: SimRng = stream(ris_seed, &[u as u64, k as u64]);
                    link.sample_vector(&scenario.ris_array, None, &mut r)
                })
                .collect()
        })
        .collect();

    let mut direct = Vec::with_capacity(k_users);
    let mut blockage_mask = Vec::with_capacity(k_users);
    for (k, link) in scenario.direct.iter().enumerate() {
        let p = scenario.users[k].blockage_prob;
        let mut br: SimRng = stream(blockage_seed, &[k as u64]);
        let mask: Vec<bool> = (0..=link.clusters.len())
            .map(|_| br.random::<f64>() >= p)
            .collect();
        let mut r: SimRng = stream(direct_seed, &[k as u64]);
        direct.push(link.sample_vector(&scenario.bs_array, Some(&mask), &mut r));
        blockage_mask.push(mask);
    }

    let equivalent = (0..k_users)
        .map(|k| {
            let per_user: Vec<DVector<Complex64>> =
                (0..n_ris).map(|u| ris_user[u][k].clone()).collect();
            assemble_equivalent(&direct[k], &per_user, &bs_ris).expect("scenario dimensions")
        })
        .collect();

    ChannelSample {
        direct,
        ris_user,
        bs_ris,
        equivalent,
        blockage_mask,
    }
}
