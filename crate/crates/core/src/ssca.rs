//! Multiuser stochastic successive convex approximation.
//!
//! Each iteration builds a strongly convex proximal-gradient surrogate of the
//! smoothed max-outage objective, minimizes the running average of those
//! surrogates in closed form, and moves toward the minimizer with an Armijo
//! step evaluated on the current sample.

use std::time::Instant;

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::channel::{complex_gaussian, ChannelSample};
use crate::error::{Error, Result};
use crate::objective::{
    default_mu, default_theta, gradient_e, gradient_f, project_phases_or, smoothed_objective,
    softmax_sigmoid_weights, BeamformingState, LinkBudget, SmoothingParams,
};
use crate::smm::{solve_e_subproblem, PhaseRule, PrecoderRule};
use crate::trace::{RunTrace, StoppingRule, TraceRow};
use crate::{CMatrix, CVector};

const ONE: Complex64 = Complex64::new(1.0, 0.0);
const MAX_PASSES: usize = 20;

/// Backtracking rule `ξ ∈ {ξ0 c2^t}` with sufficient-decrease constant `c1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepSizeRule {
    pub xi0: f64,
    pub c1: f64,
    pub c2: f64,
    pub max_backtracks: usize,
}

impl Default for StepSizeRule {
    fn default() -> Self {
        Self {
            xi0: 1.0,
            c1: 0.01,
            c2: 0.5,
            max_backtracks: 30,
        }
    }
}

impl StepSizeRule {
    pub fn validate(&self) -> Result<()> {
        let ok = self.xi0 > 0.0
            && self.xi0 <= 1.0
            && self.c1 > 0.0
            && self.c1 < 1.0
            && self.c2 > 0.0
            && self.c2 < 1.0
            && self.max_backtracks > 0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidScenario(format!("step-size rule out of range: {self:?}")))
        }
    }
}

/// `2 Re ⟨g, d⟩` for a gradient `g` taken in the conjugate variable.
pub fn directional_slope(grad_conj: &[Complex64], direction: &[Complex64]) -> f64 {
    2.0 * grad_conj
        .iter()
        .zip(direction)
        .map(|(g, d)| (g.conj() * d).re)
        .sum::<f64>()
}

/// Largest `ξ0 c2^t` with `F(x + ξd) <= F(x) + c1 ξ slope`, where `d = x_hat − x_prev`.
/// Returns `ξ0` for a zero direction and 0 for ascent directions or when no step qualifies.
pub fn armijo_step(
    x_prev: &[Complex64],
    x_hat: &[Complex64],
    grad_conj: &[Complex64],
    objective: impl Fn(&[Complex64]) -> f64,
    rule: &StepSizeRule,
) -> f64 {
    let d: Vec<Complex64> = x_hat.iter().zip(x_prev).map(|(h, p)| h - p).collect();
    if d.iter().all(|z| z.norm() == 0.0) {
        return rule.xi0;
    }
    let slope = directional_slope(grad_conj, &d);
    if slope > 0.0 {
        return 0.0;
    }
    let f0 = objective(x_prev);
    let mut xi = rule.xi0;
    let mut trial = vec![Complex64::new(0.0, 0.0); d.len()];
    for _ in 0..=rule.max_backtracks {
        for ((t, p), dz) in trial.iter_mut().zip(x_prev).zip(&d) {
            *t = p + dz * xi;
        }
        if objective(&trial) <= f0 + rule.c1 * xi * slope {
            return xi;
        }
        xi *= rule.c2;
    }
    0.0
}

/// Proximal surrogate `2 Re⟨P, X⟩ + (τ/2)‖X‖² + c` of one sample, tangent at `center`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProximalSurrogate<T> {
    pub p: T,
    pub tau: f64,
    pub constant: f64,
    /// Gradient of the sample objective in the conjugate variable at `center`.
    pub grad: T,
    pub center: T,
    pub value_at_center: f64,
}

impl ProximalSurrogate<CMatrix> {
    pub fn value(&self, x: &CMatrix) -> f64 {
        2.0 * self.p.dotc(x).re + 0.5 * self.tau * x.norm_squared() + self.constant
    }
}

impl ProximalSurrogate<CVector> {
    /// Value on the feasible phase set, where `‖e‖²` is fixed and folded into the constant.
    pub fn value(&self, e: &CVector) -> f64 {
        2.0 * self.p.dotc(e).re + self.constant
    }

    /// `F(e0) + 2 Re{w^H (e − e0)} + (τ/2)‖e − e0‖²` for any `e`.
    pub fn expanded_value(&self, e: &CVector) -> f64 {
        let diff = e - &self.center;
        self.value_at_center + 2.0 * self.grad.dotc(&diff).re + 0.5 * self.tau * diff.norm_squared()
    }
}

/// Precoder surrogate at `state.f`: `P_f = W_f − (τ/2) F`.
pub fn ssca_f_params(
    state: &BeamformingState,
    sample: &ChannelSample,
    params: &SmoothingParams,
    weights: &[f64],
    tau: f64,
) -> ProximalSurrogate<CMatrix> {
    let w = gradient_f(state, sample, params, weights);
    let value = smoothed_objective(state, sample, params);
    let p = &w - &state.f * Complex64::new(0.5 * tau, 0.0);
    let constant = value + 0.5 * tau * state.f.norm_squared() - 2.0 * w.dotc(&state.f).re;
    ProximalSurrogate {
        p,
        tau,
        constant,
        grad: w,
        center: state.f.clone(),
        value_at_center: value,
    }
}

/// Phase surrogate at `state.e`: `p_e = w_e − (τ/2) e`.
pub fn ssca_e_params(
    state: &BeamformingState,
    sample: &ChannelSample,
    params: &SmoothingParams,
    weights: &[f64],
    tau: f64,
) -> ProximalSurrogate<CVector> {
    let w = gradient_e(state, sample, params, weights);
    let value = smoothed_objective(state, sample, params);
    let len = state.e.len() as f64;
    let p = &w - &state.e * Complex64::new(0.5 * tau, 0.0);
    let constant = value + tau * len - 2.0 * w.dotc(&state.e).re;
    ProximalSurrogate {
        p,
        tau,
        constant,
        grad: w,
        center: state.e.clone(),
        value_at_center: value,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SscaAccumulator {
    pub n: usize,
    pub sum_p_f: CMatrix,
    pub sum_tau_f: f64,
    pub sum_const_f: f64,
    pub sum_p_e: CVector,
    pub sum_const_e: f64,
}

impl SscaAccumulator {
    pub fn new(n_tx: usize, n_users: usize, phase_len: usize) -> Self {
        Self {
            n: 0,
            sum_p_f: CMatrix::zeros(n_tx, n_users),
            sum_tau_f: 0.0,
            sum_const_f: 0.0,
            sum_p_e: CVector::zeros(phase_len),
            sum_const_e: 0.0,
        }
    }

    pub fn add_f(&mut self, s: &ProximalSurrogate<CMatrix>) {
        self.sum_p_f += &s.p;
        self.sum_tau_f += s.tau;
        self.sum_const_f += s.constant;
    }

    pub fn add_e(&mut self, s: &ProximalSurrogate<CVector>) {
        self.sum_p_e += &s.p;
        self.sum_const_e += s.constant;
    }

    pub fn value_f(&self, f: &CMatrix) -> f64 {
        (2.0 * self.sum_p_f.dotc(f).re + 0.5 * self.sum_tau_f * f.norm_squared() + self.sum_const_f)
            / self.n.max(1) as f64
    }

    pub fn value_e(&self, e: &CVector) -> f64 {
        (2.0 * self.sum_p_e.dotc(e).re + self.sum_const_e) / self.n.max(1) as f64
    }
}

/// Minimizer of `2 Re⟨ΣP, F⟩ + (Στ/2)‖F‖²` over `‖F‖_F² <= P_max`.
pub fn solve_f_subproblem_ssca(sum_p: &CMatrix, sum_tau: f64, p_max: f64) -> CMatrix {
    let norm = sum_p.norm();
    if norm == 0.0 {
        return CMatrix::zeros(sum_p.nrows(), sum_p.ncols());
    }
    if sum_tau > 0.0 && 4.0 * norm * norm / (sum_tau * sum_tau) <= p_max {
        sum_p * Complex64::new(-2.0 / sum_tau, 0.0)
    } else {
        sum_p * Complex64::new(-p_max.sqrt() / norm, 0.0)
    }
}

/// Minimizer of `2 Re{(Σp)^H e}` over the feasible phase set.
pub fn solve_e_subproblem_ssca(sum_p: &CVector, rule: PhaseRule) -> CVector {
    solve_e_subproblem(sum_p, rule)
}

/// `min_k ‖e^H G_k‖²`.
pub fn min_gain(e: &CVector, sample: &ChannelSample) -> f64 {
    sample
        .equivalent
        .iter()
        .map(|g| g.ad_mul(e).norm_squared())
        .fold(f64::INFINITY, f64::min)
}

fn random_phases<R: Rng + ?Sized>(len: usize, rng: &mut R) -> CVector {
    CVector::from_fn(len, |m, _| {
        if m + 1 == len {
            ONE
        } else {
            Complex64::from_polar(1.0, rng.random_range(0.0..std::f64::consts::TAU))
        }
    })
}

/// Randomized max-min channel-gain phase initialization: `trials` random feasible
/// vectors, each refined by coordinate passes over `grid` equally spaced phases; the
/// best refined vector wins.
pub fn init_phases<R: Rng + ?Sized>(sample: &ChannelSample, trials: usize, grid: usize, rng: &mut R) -> CVector {
    let len = sample.equivalent[0].nrows();
    let grams: Vec<CMatrix> = sample.equivalent.iter().map(|g| g * g.adjoint()).collect();
    let phasors: Vec<Complex64> = (0..grid.max(1))
        .map(|i| Complex64::from_polar(1.0, std::f64::consts::TAU * i as f64 / grid.max(1) as f64))
        .collect();
    let mut best: Option<(CVector, f64)> = None;
    for _ in 0..trials.max(1) {
        let (e, score) = coordinate_ascent(random_phases(len, rng), &grams, &phasors);
        if best.as_ref().is_none_or(|b| score > b.1) {
            best = Some((e, score));
        }
    }
    best.map(|b| b.0).unwrap_or_else(|| CVector::from_element(len, ONE))
}

/// Coordinate ascent on `min_k e^H R_k e` with `R_k e` maintained incrementally.
fn coordinate_ascent(mut e: CVector, grams: &[CMatrix], phasors: &[Complex64]) -> (CVector, f64) {
    let len = e.len();
    let mut re: Vec<CVector> = grams.iter().map(|r| r * &e).collect();
    let mut gains: Vec<f64> = re.iter().map(|v| e.dotc(v).re).collect();
    for _ in 0..MAX_PASSES {
        let mut changed = false;
        for m in 0..len.saturating_sub(1) {
            let current = gains.iter().copied().fold(f64::INFINITY, f64::min);
            let mut choice: Option<(Complex64, f64)> = None;
            for &z in phasors {
                let delta = z - e[m];
                let trial = grams
                    .iter()
                    .zip(&re)
                    .zip(&gains)
                    .map(|((r, v), g)| g + 2.0 * (delta.conj() * v[m]).re + delta.norm_sqr() * r[(m, m)].re)
                    .fold(f64::INFINITY, f64::min);
                if trial > choice.map_or(current, |c| c.1) * (1.0 + 1e-12) {
                    choice = Some((z, trial));
                }
            }
            if let Some((z, _)) = choice {
                changed = true;
                let delta = z - e[m];
                e[m] = z;
                for ((r, v), g) in grams.iter().zip(re.iter_mut()).zip(gains.iter_mut()) {
                    v.axpy(delta, &r.column(m), ONE);
                    *g = e.dotc(v).re;
                }
            }
        }
        if !changed {
            break;
        }
    }
    let score = gains.iter().copied().fold(f64::INFINITY, f64::min);
    (e, score)
}

/// Per-user MRT columns `√(P_max/K) G_k^H e / ‖G_k^H e‖`; a vanishing effective channel gets a
/// random direction.
pub fn init_precoder<R: Rng + ?Sized>(sample: &ChannelSample, e: &CVector, p_max: f64, rng: &mut R) -> CMatrix {
    let k_users = sample.n_users();
    let n = sample.equivalent[0].ncols();
    let scale = (p_max / k_users as f64).sqrt();
    let mut f = CMatrix::zeros(n, k_users);
    for (k, g) in sample.equivalent.iter().enumerate() {
        let mut a = g.ad_mul(e);
        if a.norm() == 0.0 {
            a = CVector::from_fn(n, |_, _| complex_gaussian(1.0, rng));
        }
        let norm = a.norm();
        f.set_column(k, &(a * Complex64::new(scale / norm, 0.0)));
    }
    f
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SscaOptions {
    pub theta: Option<f64>,
    pub mu: Option<f64>,
    pub tau: f64,
    pub rule_f: StepSizeRule,
    pub rule_e: StepSizeRule,
    pub phase_rule: PhaseRule,
    pub stop: StoppingRule,
    pub optimize_phases: bool,
    pub precoder: PrecoderRule,
}

impl Default for SscaOptions {
    fn default() -> Self {
        Self {
            theta: None,
            mu: None,
            tau: 1.0,
            rule_f: StepSizeRule::default(),
            rule_e: StepSizeRule::default(),
            phase_rule: PhaseRule::Minimizer,
            stop: StoppingRule::default(),
            optimize_phases: true,
            precoder: PrecoderRule::Surrogate,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SscaSolver {
    pub state: BeamformingState,
    pub params: SmoothingParams,
    pub acc: SscaAccumulator,
    p_max: f64,
    options: SscaOptions,
    theta_set: bool,
    smrt_sum: CMatrix,
}

impl SscaSolver {
    pub fn new(init: &BeamformingState, budget: &LinkBudget, options: SscaOptions) -> Result<Self> {
        options.rule_f.validate()?;
        options.rule_e.validate()?;
        if !(options.tau > 0.0) {
            return Err(Error::InvalidScenario("tau must be positive".into()));
        }
        if init.n_users() != budget.n_users() {
            return Err(Error::DimensionMismatch(format!(
                "state has {} users, budget {}",
                init.n_users(),
                budget.n_users()
            )));
        }
        let (n, k) = init.f.shape();
        Ok(Self {
            params: budget.smoothing(
                options.theta.unwrap_or(1.0),
                options.mu.unwrap_or_else(|| default_mu(k)),
            ),
            theta_set: options.theta.is_some(),
            acc: SscaAccumulator::new(n, k, init.e.len()),
            state: init.clone(),
            p_max: budget.p_max,
            smrt_sum: CMatrix::zeros(n, k),
            options,
        })
    }

    pub fn step(&mut self, sample: &ChannelSample) -> TraceRow {
        if !self.theta_set {
            self.params.theta = default_theta(&self.state, sample, &self.params.gamma, &self.params.noise);
            self.theta_set = true;
        }
        self.acc.n += 1;
        let tau = self.options.tau;
        let params = &self.params;
        let prev = self.state.clone();

        let weights = softmax_sigmoid_weights(&prev, sample, params);
        let sf = ssca_f_params(&prev, sample, params, &weights, tau);
        self.acc.add_f(&sf);
        let f_hat = solve_f_subproblem_ssca(&self.acc.sum_p_f, self.acc.sum_tau_f, self.p_max);
        let residual = (&f_hat - &prev.f).norm();
        let (f_new, step_f) = match self.options.precoder {
            PrecoderRule::Surrogate => {
                let xi = armijo_step(
                    prev.f.as_slice(),
                    f_hat.as_slice(),
                    sf.grad.as_slice(),
                    |x| {
                        let trial = BeamformingState::new(
                            CMatrix::from_column_slice(prev.f.nrows(), prev.f.ncols(), x),
                            prev.e.clone(),
                        );
                        smoothed_objective(&trial, sample, params)
                    },
                    &self.options.rule_f,
                );
                (&prev.f + (&f_hat - &prev.f) * Complex64::new(xi, 0.0), xi)
            }
            PrecoderRule::Smrt => {
                let scale = (self.p_max / prev.f.ncols() as f64).sqrt();
                let mut f = prev.f.clone();
                for (k, g) in sample.equivalent.iter().enumerate() {
                    let mut col = self.smrt_sum.column_mut(k);
                    col += g.ad_mul(&prev.e);
                    let norm = col.norm();
                    if norm > 0.0 {
                        f.set_column(k, &(self.smrt_sum.column(k) * Complex64::new(scale / norm, 0.0)));
                    }
                }
                (f, 1.0)
            }
        };
        self.state.f = f_new;
        let objective_f = self.acc.value_f(&self.state.f);

        let (objective_e, step_e) = if self.options.optimize_phases {
            let mid = self.state.clone();
            let weights = softmax_sigmoid_weights(&mid, sample, params);
            let se = ssca_e_params(&mid, sample, params, &weights, tau);
            self.acc.add_e(&se);
            let e_hat = solve_e_subproblem_ssca(&self.acc.sum_p_e, self.options.phase_rule);
            let xi = armijo_step(
                mid.e.as_slice(),
                e_hat.as_slice(),
                se.grad.as_slice(),
                |x| {
                    let trial = BeamformingState::new(mid.f.clone(), CVector::from_column_slice(x));
                    smoothed_objective(&trial, sample, params)
                },
                &self.options.rule_e,
            );
            let moved = &mid.e + (&e_hat - &mid.e) * Complex64::new(xi, 0.0);
            self.state.e = project_phases_or(&moved, &mid.e);
            (self.acc.value_e(&self.state.e), xi)
        } else {
            (objective_f, 0.0)
        };

        TraceRow {
            iter: self.acc.n,
            objective_f,
            objective_e,
            step_f,
            step_e,
            residual,
            gap: None,
            wall_ns: 0,
        }
    }

    pub fn run(mut self, mut draw: impl FnMut() -> ChannelSample) -> (BeamformingState, RunTrace) {
        let mut monitor = self.options.stop.monitor();
        let mut trace = RunTrace::default();
        let f_scale = self.p_max.sqrt();
        let e_scale = (self.state.e.len() as f64).sqrt();
        loop {
            let start = Instant::now();
            let sample = draw();
            let prev = self.state.clone();
            let mut row = self.step(&sample);
            row.wall_ns = start.elapsed().as_nanos() as u64;
            let change = ((&self.state.f - &prev.f).norm() / f_scale)
                .max((&self.state.e - &prev.e).norm() / e_scale);
            trace.rows.push(row);
            if let Some(converged) = monitor.update(change) {
                trace.converged = converged;
                break;
            }
        }
        trace.theta = self.params.theta;
        (self.state, trace)
    }
}

pub fn run_ssca(
    init: &BeamformingState,
    budget: &LinkBudget,
    options: SscaOptions,
    draw: impl FnMut() -> ChannelSample,
) -> Result<(BeamformingState, RunTrace)> {
    Ok(SscaSolver::new(init, budget, options)?.run(draw))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SimRng;
    use approx::assert_relative_eq;
    use rand::SeedableRng;

    fn c(re: f64) -> Complex64 {
        Complex64::new(re, 0.0)
    }

    #[test]
    fn armijo_cases() {
        let rule = StepSizeRule { xi0: 1.0, c1: 0.1, c2: 0.5, max_backtracks: 30 };
        let sq = |x: &[Complex64]| x[0].norm_sqr();
        // ∂|x|²/∂x* = x
        assert_eq!(armijo_step(&[c(1.0)], &[c(0.0)], &[c(1.0)], sq, &rule), 1.0);
        assert_eq!(armijo_step(&[c(1.0)], &[c(1.0)], &[c(1.0)], sq, &rule), 1.0);
        assert_eq!(armijo_step(&[c(1.0)], &[c(2.0)], &[c(1.0)], sq, &rule), 0.0);
        // overshooting target needs a shorter step
        let xi = armijo_step(&[c(1.0)], &[c(-3.0)], &[c(1.0)], sq, &rule);
        assert_eq!(xi, 0.25);
    }

    #[test]
    fn f_subproblem_branches() {
        let zero = CMatrix::zeros(2, 2);
        assert_eq!(solve_f_subproblem_ssca(&zero, 2.0, 4.0).norm(), 0.0);
        let mut p = CMatrix::zeros(2, 2);
        p[(0, 1)] = c(0.6);
        p[(1, 0)] = Complex64::new(0.0, 0.8);
        let f = solve_f_subproblem_ssca(&p, 2.0, 4.0);
        assert_relative_eq!((f + &p).norm(), 0.0, epsilon = 1e-15);
        let f = solve_f_subproblem_ssca(&(&p * c(100.0)), 2.0, 4.0);
        assert_relative_eq!(f.norm_squared(), 4.0, epsilon = 1e-12);
    }

    #[test]
    fn init_precoder_has_full_power() {
        let mut rng = SimRng::seed_from_u64(2);
        let sample = ChannelSample::from_equivalent(
            (0..3)
                .map(|_| CMatrix::from_fn(5, 4, |_, _| complex_gaussian(1.0, &mut rng)))
                .collect(),
        );
        let e = random_phases(5, &mut rng);
        let f = init_precoder(&sample, &e, 2.5, &mut rng);
        assert_relative_eq!(f.norm_squared(), 2.5, epsilon = 1e-12);
        let zero = ChannelSample::from_equivalent(vec![CMatrix::zeros(5, 4)]);
        let f = init_precoder(&zero, &e, 1.0, &mut rng);
        assert_relative_eq!(f.norm_squared(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn init_phases_is_feasible_and_improves() {
        let mut rng = SimRng::seed_from_u64(4);
        let sample = ChannelSample::from_equivalent(
            (0..2)
                .map(|_| CMatrix::from_fn(6, 3, |_, _| complex_gaussian(1.0, &mut rng)))
                .collect(),
        );
        let e = init_phases(&sample, 1, 16, &mut SimRng::seed_from_u64(9));
        let first = random_phases(6, &mut SimRng::seed_from_u64(9));
        assert!(min_gain(&e, &sample) >= min_gain(&first, &sample) - 1e-12);
        assert_eq!(e[5], ONE);
        for z in e.iter() {
            assert_relative_eq!(z.norm(), 1.0, epsilon = 1e-12);
        }
    }
}
