#![allow(dead_code)]

pub mod checks;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;
use ris_outmin::channel::{complex_gaussian, ChannelSample};
use ris_outmin::objective::{BeamformingState, SmoothingParams};
use ris_outmin::rng::{stream, SimRng};
use ris_outmin::{CMatrix, CVector};

pub const ONE: Complex64 = Complex64::new(1.0, 0.0);

pub fn rng(seed: u64) -> SimRng {
    stream(seed, &[0xfeed])
}

pub fn gaussian_vec(n: usize, rng: &mut SimRng) -> CVector {
    CVector::from_fn(n, |_, _| complex_gaussian(1.0, rng))
}

pub fn gaussian_mat(r: usize, c: usize, rng: &mut SimRng) -> CMatrix {
    CMatrix::from_fn(r, c, |_, _| complex_gaussian(1.0, rng))
}

pub fn random_phases(len: usize, rng: &mut SimRng) -> CVector {
    CVector::from_fn(len, |m, _| {
        if m + 1 == len {
            ONE
        } else {
            Complex64::from_polar(1.0, rng.random_range(0.0..std::f64::consts::TAU))
        }
    })
}

/// Uniform direction, radius drawn so points cover the interior and the boundary of the ball.
pub fn random_in_ball(n: usize, p_max: f64, rng: &mut SimRng) -> CVector {
    let v = gaussian_vec(n, rng);
    let r = if rng.random_bool(0.2) { 1.0 } else { rng.random::<f64>() };
    &v * Complex64::new(p_max.sqrt() * r / v.norm(), 0.0)
}

pub fn random_precoder(n: usize, k: usize, p_max: f64, rng: &mut SimRng) -> CMatrix {
    let f = gaussian_mat(n, k, rng);
    let norm = f.norm();
    f * Complex64::new(p_max.sqrt() / norm, 0.0)
}

/// Synthetic instance with O(1) channel entries and a noise floor comparable to the signal.
pub struct Instance {
    pub sample: ChannelSample,
    pub state: BeamformingState,
    pub params: SmoothingParams,
    pub p_max: f64,
}

pub fn random_instance(n: usize, len: usize, k: usize, rng: &mut SimRng) -> Instance {
    let p_max = rng.random_range(0.5..2.0);
    let gs: Vec<DMatrix<Complex64>> = (0..k).map(|_| gaussian_mat(len, n, rng)).collect();
    let sample = ChannelSample::from_equivalent(gs);
    let state = BeamformingState::new(random_precoder(n, k, p_max, rng), random_phases(len, rng));
    let gamma: Vec<f64> = (0..k).map(|_| rng.random_range(0.3..3.0)).collect();
    let noise: Vec<f64> = (0..k)
        .map(|_| rng.random_range(0.2..2.0) * (len * n) as f64 * p_max / k as f64)
        .collect();
    let mut params = SmoothingParams {
        theta: 1.0,
        mu: ris_outmin::objective::default_mu(k),
        gamma,
        noise,
    };
    params.theta = ris_outmin::objective::default_theta(&state, &sample, &params.gamma, &params.noise)
        * rng.random_range(0.5..2.0);
    Instance {
        sample,
        state,
        params,
        p_max,
    }
}

/// Central-difference gradient in the conjugate variable: `(∂/∂Re + j ∂/∂Im) / 2`.
pub fn fd_gradient(x: &CVector, h: f64, f: impl Fn(&CVector) -> f64) -> CVector {
    let mut g = CVector::zeros(x.len());
    let mut xp = x.clone();
    for i in 0..x.len() {
        let base = x[i];
        xp[i] = base + Complex64::new(h, 0.0);
        let fp = f(&xp);
        xp[i] = base - Complex64::new(h, 0.0);
        let fm = f(&xp);
        let dre = (fp - fm) / (2.0 * h);
        xp[i] = base + Complex64::new(0.0, h);
        let fp = f(&xp);
        xp[i] = base - Complex64::new(0.0, h);
        let fm = f(&xp);
        let dim = (fp - fm) / (2.0 * h);
        xp[i] = base;
        g[i] = Complex64::new(0.5 * dre, 0.5 * dim);
    }
    g
}

pub fn fd_gradient_mat(x: &CMatrix, h: f64, f: impl Fn(&CMatrix) -> f64) -> CMatrix {
    let (r, c) = x.shape();
    let flat = CVector::from_iterator(r * c, x.iter().copied());
    let g = fd_gradient(&flat, h, |v| f(&CMatrix::from_iterator(r, c, v.iter().copied())));
    CMatrix::from_iterator(r, c, g.iter().copied())
}

pub fn rel_err(a: &CVector, b: &CVector) -> f64 {
    (a - b).norm() / b.norm().max(1e-300)
}

/// Largest eigenvalue of a Hermitian matrix by shifted power iteration.
pub fn power_iteration_max(m: &CMatrix, iters: usize) -> f64 {
    let n = m.nrows();
    let shift = m.norm();
    let shifted = m + CMatrix::identity(n, n) * Complex64::new(shift, 0.0);
    let mut v = CVector::from_fn(n, |i, _| Complex64::new(1.0 + 0.1 * i as f64, 0.05 * i as f64));
    v /= Complex64::new(v.norm(), 0.0);
    let mut lambda = 0.0;
    for _ in 0..iters {
        let w = &shifted * &v;
        let norm = w.norm();
        if norm == 0.0 {
            return -shift;
        }
        let next = w / Complex64::new(norm, 0.0);
        let rq = next.dotc(&(&shifted * &next)).re;
        let done = (rq - lambda).abs() <= 1e-15 * rq.abs();
        lambda = rq;
        v = next;
        if done {
            break;
        }
    }
    lambda - shift
}

/// Projected gradient descent for `min 2 Re⟨d, x⟩ + (c/2)‖x‖² s.t. ‖x‖² <= p_max`.
pub fn pgd_ball(d: &CVector, c: f64, p_max: f64) -> CVector {
    let lipschitz = c.max(1e-12);
    let step = 0.3 / lipschitz;
    let radius = p_max.sqrt();
    let project = |x: CVector| {
        let n = x.norm();
        if n > radius {
            x * Complex64::new(radius / n, 0.0)
        } else {
            x
        }
    };
    let mut x = CVector::zeros(d.len());
    for _ in 0..200_000 {
        // gradient in x* of the objective is d + (c/2) x, real gradient is twice that
        let grad = d + &x * Complex64::new(0.5 * c, 0.0);
        let next = project(&x - grad * Complex64::new(2.0 * step, 0.0));
        let moved = (&next - &x).norm();
        x = next;
        if moved < 1e-15 * radius.max(1.0) {
            break;
        }
    }
    x
}

/// Exhaustive minimization of `2 Re{d^H e}` over `points` phases per free entry (last entry 1).
pub fn phase_grid_min(d: &CVector, points: usize, objective: impl Fn(&CVector) -> f64) -> f64 {
    let len = d.len();
    let free = len - 1;
    let phasors: Vec<Complex64> = (0..points)
        .map(|i| Complex64::from_polar(1.0, std::f64::consts::TAU * i as f64 / (points - 1).max(1) as f64))
        .collect();
    let mut idx = vec![0usize; free];
    let mut e = CVector::from_element(len, ONE);
    let mut best = f64::INFINITY;
    loop {
        for (m, &i) in idx.iter().enumerate() {
            e[m] = phasors[i];
        }
        best = best.min(objective(&e));
        let mut pos = 0;
        loop {
            if pos == free {
                return best;
            }
            idx[pos] += 1;
            if idx[pos] < points {
                break;
            }
            idx[pos] = 0;
            pos += 1;
        }
    }
}
