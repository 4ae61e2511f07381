//! SINR, sigmoid-smoothed outage indicators and their gradients.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::channel::{complex_gaussian, ChannelSample};
use crate::error::{Error, Result};
use crate::{CMatrix, CVector};

const ONE: Complex64 = Complex64::new(1.0, 0.0);

/// Precoder `F` (N x K, column k is f_k) and phase vector `e` (UM + 1).
#[derive(Debug, Clone, PartialEq)]
pub struct BeamformingState {
    pub f: CMatrix,
    pub e: CVector,
}

impl BeamformingState {
    pub fn new(f: CMatrix, e: CVector) -> Self {
        Self { f, e }
    }

    pub fn n_users(&self) -> usize {
        self.f.ncols()
    }

    /// Random point of `S_f x S_e` with full power.
    pub fn random<R: Rng + ?Sized>(
        n_tx: usize,
        n_users: usize,
        phase_len: usize,
        p_max: f64,
        rng: &mut R,
    ) -> Self {
        let mut f = DMatrix::from_fn(n_tx, n_users, |_, _| complex_gaussian(1.0, rng));
        let norm = f.norm();
        f *= Complex64::new(p_max.sqrt() / norm, 0.0);
        let e = CVector::from_fn(phase_len, |m, _| {
            if m + 1 == phase_len {
                ONE
            } else {
                Complex64::from_polar(1.0, rng.random_range(0.0..std::f64::consts::TAU))
            }
        });
        Self { f, e }
    }

    /// Checks `‖F‖_F² <= P_max` and the unit-modulus constraints up to `tol`.
    pub fn check_feasible(&self, p_max: f64, tol: f64) -> Result<()> {
        let power = self.f.norm_squared();
        if power > p_max * (1.0 + tol) {
            return Err(Error::Infeasible(format!(
                "precoder power {power} exceeds {p_max}"
            )));
        }
        let last = self.e.len() - 1;
        for (m, z) in self.e.iter().enumerate() {
            if (z.norm() - 1.0).abs() > tol {
                return Err(Error::Infeasible(format!("|e_{m}| = {}", z.norm())));
            }
            if m == last && (z - ONE).norm() > tol {
                return Err(Error::Infeasible(format!("last phase entry is {z}")));
            }
        }
        Ok(())
    }
}

/// Smoothing and link parameters of the outage objective.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmoothingParams {
    pub theta: f64,
    pub mu: f64,
    /// Per-user SINR thresholds γ_k.
    pub gamma: Vec<f64>,
    /// Per-user noise powers σ_k² in watts.
    pub noise: Vec<f64>,
}

impl SmoothingParams {
    pub fn uniform(theta: f64, mu: f64, gamma: f64, noise: f64, n_users: usize) -> Self {
        Self {
            theta,
            mu,
            gamma: vec![gamma; n_users],
            noise: vec![noise; n_users],
        }
    }

    pub fn n_users(&self) -> usize {
        self.gamma.len()
    }

    /// `Υ_k`: γ_k on the diagonal except −1 at position k.
    pub fn upsilon(&self, k: usize) -> Vec<f64> {
        (0..self.n_users())
            .map(|i| if i == k { -1.0 } else { self.gamma[k] })
            .collect()
    }
}

/// Power budget and per-user link targets shared by every solver.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkBudget {
    pub p_max: f64,
    pub gamma: Vec<f64>,
    pub noise: Vec<f64>,
}

impl LinkBudget {
    pub fn uniform(p_max: f64, gamma: f64, noise: f64, n_users: usize) -> Self {
        Self {
            p_max,
            gamma: vec![gamma; n_users],
            noise: vec![noise; n_users],
        }
    }

    pub fn from_config(config: &crate::scenario::ScenarioConfig) -> Self {
        Self::uniform(config.p_max_w, config.target_sinr, config.noise_w, config.n_users)
    }

    pub fn n_users(&self) -> usize {
        self.gamma.len()
    }

    pub fn smoothing(&self, theta: f64, mu: f64) -> SmoothingParams {
        SmoothingParams {
            theta,
            mu,
            gamma: self.gamma.clone(),
            noise: self.noise.clone(),
        }
    }
}

/// `1 / (1 + exp(−θx))`, branch-stable for large `|θx|`.
pub fn sigmoid(x: f64, theta: f64) -> f64 {
    let t = theta * x;
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let z = t.exp();
        z / (1.0 + z)
    }
}

/// Derivative of [`sigmoid`] in `x`: `θ e^{−θx} / (1 + e^{−θx})²`.
pub fn sigmoid_slope(x: f64, theta: f64) -> f64 {
    let u = sigmoid(x, theta);
    let tail = sigmoid(-x, theta);
    theta * u * tail
}

/// `e^H G_k f` for every column of `F`.
fn gains(e: &CVector, g: &CMatrix, f: &CMatrix) -> Vec<Complex64> {
    let a = g.ad_mul(e);
    (0..f.ncols()).map(|i| a.dotc(&f.column(i))).collect()
}

/// `Γ_k = |e^H G_k f_k|² / (Σ_{i≠k} |e^H G_k f_i|² + σ_k²)`.
pub fn sinr(state: &BeamformingState, sample: &ChannelSample, k: usize, noise: f64) -> f64 {
    let gk = gains(&state.e, &sample.equivalent[k], &state.f);
    let interference: f64 = gk
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != k)
        .map(|(_, z)| z.norm_sqr())
        .sum();
    gk[k].norm_sqr() / (interference + noise)
}

/// `x_k = γ_k Σ_{i≠k} |e^H G_k f_i|² − |e^H G_k f_k|² + γ_k σ_k²`, positive iff user k is in outage.
pub fn quad_arg(state: &BeamformingState, sample: &ChannelSample, params: &SmoothingParams, k: usize) -> f64 {
    let gk = gains(&state.e, &sample.equivalent[k], &state.f);
    let gamma = params.gamma[k];
    let mut x = gamma * params.noise[k];
    for (i, z) in gk.iter().enumerate() {
        x += if i == k { -z.norm_sqr() } else { gamma * z.norm_sqr() };
    }
    x
}

/// Single-user smoothed indicator `u(γσ² − |e^H G f|²)`.
pub fn smooth_single(
    f: &CVector,
    e: &CVector,
    sample: &ChannelSample,
    params: &SmoothingParams,
) -> Result<f64> {
    if sample.n_users() != 1 {
        return Err(Error::NotSingleUser(sample.n_users()));
    }
    let a = sample.equivalent[0].ad_mul(e);
    let x = params.gamma[0] * params.noise[0] - a.dotc(f).norm_sqr();
    Ok(sigmoid(x, params.theta))
}

/// Smoothed outage indicator of user `k`.
pub fn smooth_multi(state: &BeamformingState, sample: &ChannelSample, params: &SmoothingParams, k: usize) -> f64 {
    sigmoid(quad_arg(state, sample, params, k), params.theta)
}

/// `μ ln Σ_k exp(v_k / μ)` with max subtraction.
pub fn logsumexp_max(values: &[f64], mu: f64) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if values.len() == 1 || !max.is_finite() {
        return max;
    }
    let sum: f64 = values.iter().map(|v| ((v - max) / mu).exp()).sum();
    max + mu * sum.ln()
}

fn softmax(values: &[f64], mu: f64) -> Vec<f64> {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = values.iter().map(|v| ((v - max) / mu).exp()).collect();
    let total: f64 = w.iter().sum();
    w.into_iter().map(|x| x / total).collect()
}

/// Per-sample smoothed max-outage objective `F(F, e | G)`.
pub fn smoothed_objective(state: &BeamformingState, sample: &ChannelSample, params: &SmoothingParams) -> f64 {
    let v: Vec<f64> = (0..sample.n_users())
        .map(|k| smooth_multi(state, sample, params, k))
        .collect();
    logsumexp_max(&v, params.mu)
}

/// `l_k = softmax_k(f_k / μ) · u'(x_k)`: sensitivity of the objective to each quadratic argument.
pub fn softmax_sigmoid_weights(state: &BeamformingState, sample: &ChannelSample, params: &SmoothingParams) -> Vec<f64> {
    let xs: Vec<f64> = (0..sample.n_users())
        .map(|k| quad_arg(state, sample, params, k))
        .collect();
    let v: Vec<f64> = xs.iter().map(|&x| sigmoid(x, params.theta)).collect();
    softmax(&v, params.mu)
        .into_iter()
        .zip(&xs)
        .map(|(s, &x)| s * sigmoid_slope(x, params.theta))
        .collect()
}

/// `W_f = Σ_k l_k G_k^H e e^H G_k F Υ_k`, the gradient of the objective in `F*`.
pub fn gradient_f(state: &BeamformingState, sample: &ChannelSample, params: &SmoothingParams, weights: &[f64]) -> CMatrix {
    let (n, k_users) = state.f.shape();
    let mut w = CMatrix::zeros(n, k_users);
    for (k, &l) in weights.iter().enumerate() {
        if l == 0.0 {
            continue;
        }
        let a = sample.equivalent[k].ad_mul(&state.e);
        // row vector a^H F Υ_k, then rank-one update
        let ups = params.upsilon(k);
        let row = CVector::from_fn(k_users, |i, _| a.dotc(&state.f.column(i)) * ups[i]);
        w.gerc(Complex64::new(l, 0.0), &a, &row.map(|z| z.conj()), ONE);
    }
    w
}

/// `w_e = Σ_k l_k G_k F Υ_k F^H G_k^H e`, the gradient of the objective in `e*`.
pub fn gradient_e(state: &BeamformingState, sample: &ChannelSample, params: &SmoothingParams, weights: &[f64]) -> CVector {
    let mut w = CVector::zeros(state.e.len());
    for (k, &l) in weights.iter().enumerate() {
        if l == 0.0 {
            continue;
        }
        let g = &sample.equivalent[k];
        let a = g.ad_mul(&state.e);
        let ups = params.upsilon(k);
        // F Υ_k F^H a
        let mut v = CVector::zeros(state.f.nrows());
        for i in 0..state.f.ncols() {
            let coef = state.f.column(i).dotc(&a) * ups[i];
            v.axpy(coef, &state.f.column(i), ONE);
        }
        w.axpy(Complex64::new(l, 0.0), &(g * v), ONE);
    }
    w
}

/// `θ = 1 / max_k |x_k|` at the given state and sample.
pub fn default_theta(state: &BeamformingState, sample: &ChannelSample, gamma: &[f64], noise: &[f64]) -> f64 {
    let params = SmoothingParams {
        theta: 1.0,
        mu: 1.0,
        gamma: gamma.to_vec(),
        noise: noise.to_vec(),
    };
    let max = (0..sample.n_users())
        .map(|k| quad_arg(state, sample, &params, k).abs())
        .fold(0.0, f64::max);
    if max > 0.0 && max.is_finite() {
        1.0 / max
    } else {
        1.0
    }
}

pub fn default_mu(n_users: usize) -> f64 {
    1.0 / (100.0 * n_users as f64)
}

/// Entrywise unit-modulus projection with the last entry pinned to 1; zero entries become 1.
pub fn project_phases(e: &CVector) -> CVector {
    let last = e.len() - 1;
    CVector::from_fn(e.len(), |m, _| {
        let z = e[m];
        if m == last || z.norm() == 0.0 {
            ONE
        } else {
            z / z.norm()
        }
    })
}

/// Entrywise projection that keeps `fallback[m]` wherever `e[m]` vanishes.
pub fn project_phases_or(e: &CVector, fallback: &CVector) -> CVector {
    let last = e.len() - 1;
    CVector::from_fn(e.len(), |m, _| {
        let z = e[m];
        if m == last {
            ONE
        } else if z.norm() == 0.0 {
            fallback[m]
        } else {
            z / z.norm()
        }
    })
}
