//! Single-user stochastic majorization-minimization with SQUAREM acceleration.
//!
//! Each iteration draws one channel, adds a quadratic upper bound of the
//! smoothed outage indicator (expanded at the previous iterate) to a running
//! sum, and minimizes the averaged bound in closed form, first over the
//! precoder with the phases fixed, then over the phases.

use std::time::Instant;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::channel::ChannelSample;
use crate::error::{Error, Result};
use crate::objective::{default_theta, sigmoid, sigmoid_slope, BeamformingState, LinkBudget, SmoothingParams};
use crate::trace::{RunTrace, StoppingRule, TraceRow};
use crate::{CMatrix, CVector};

const ONE: Complex64 = Complex64::new(1.0, 0.0);

/// Closed-form minimizer of `2 Re{d^H e}` over unit-modulus `e` with last entry 1.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhaseRule {
    /// `e_m = −exp(j∠d_m)`, the exact separable minimizer.
    #[default]
    Minimizer,
    /// `e = exp(j∠(d / d_last))`, the rotated form some derivations state.
    RotateByLast,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SquaremVariant {
    /// Plain SMM update.
    Off,
    /// Extrapolate, project, keep if the averaged surrogate does not increase.
    #[default]
    Standard,
    /// As `Standard` but with the projected precoder negated before the guard.
    Literal,
}

/// Quadratic upper bound `q(x) = 2 Re{d^H x} + α‖x‖² + c` of one sample's smoothed indicator,
/// tangent at `center`.
#[derive(Debug, Clone, PartialEq)]
pub struct Surrogate {
    pub d: CVector,
    pub alpha: f64,
    pub constant: f64,
    /// Gradient in `x*` of the true function at `center`.
    pub m: CVector,
    pub center: CVector,
    /// True function value at `center`.
    pub value_at_center: f64,
}

impl Surrogate {
    fn build(m: CVector, alpha: f64, center: &CVector, value: f64, norm_term: f64) -> Self {
        let d = &m - center * Complex64::new(alpha, 0.0);
        let constant = value - 2.0 * m.dotc(center).re + alpha * norm_term;
        Self {
            d,
            alpha,
            constant,
            m,
            center: center.clone(),
            value_at_center: value,
        }
    }

    /// `2 Re{d^H x} + α‖x‖² + c`, the full quadratic bound.
    pub fn value(&self, x: &CVector) -> f64 {
        2.0 * self.d.dotc(x).re + self.alpha * x.norm_squared() + self.constant
    }

    /// `f(x0) + 2 Re{m^H (x − x0)} + α‖x − x0‖²`, algebraically equal to [`Self::value`].
    pub fn expanded_value(&self, x: &CVector) -> f64 {
        let diff = x - &self.center;
        self.value_at_center + 2.0 * self.m.dotc(&diff).re + self.alpha * diff.norm_squared()
    }
}

/// Bound in `f` for fixed `a = G^H e`.
pub(crate) fn f_bound(a: &CVector, f_prev: &CVector, params: &SmoothingParams, p_max: f64) -> Surrogate {
    let inner = a.dotc(f_prev);
    let x = params.gamma[0] * params.noise[0] - inner.norm_sqr();
    let slope = sigmoid_slope(x, params.theta);
    let m = a * Complex64::new(-slope, 0.0) * inner;
    let alpha = 0.5 * params.theta.powi(2) * p_max * a.norm_squared().powi(2);
    Surrogate::build(m, alpha, f_prev, sigmoid(x, params.theta), f_prev.norm_squared())
}

/// Bound in `e` for fixed `b = G f`; the constant assumes `‖e‖² = UM + 1`.
pub(crate) fn e_bound(b: &CVector, e_prev: &CVector, params: &SmoothingParams) -> Surrogate {
    let len = e_prev.len() as f64;
    let inner = b.dotc(e_prev);
    let x = params.gamma[0] * params.noise[0] - inner.norm_sqr();
    let slope = sigmoid_slope(x, params.theta);
    let m = b * Complex64::new(-slope, 0.0) * inner;
    let alpha = 0.5 * params.theta.powi(2) * len * b.norm_squared().powi(2);
    // α‖e‖² is the constant α(UM+1) on the feasible set
    let mut s = Surrogate::build(m, alpha, e_prev, sigmoid(x, params.theta), len);
    s.constant += alpha * len;
    s
}

fn single_channel(sample: &ChannelSample) -> Result<&CMatrix> {
    if sample.n_users() != 1 {
        return Err(Error::NotSingleUser(sample.n_users()));
    }
    Ok(&sample.equivalent[0])
}

/// Precoder bound around `f_prev` with the phases fixed at `e`.
pub fn f_surrogate_params(
    f_prev: &CVector,
    e: &CVector,
    sample: &ChannelSample,
    params: &SmoothingParams,
    p_max: f64,
) -> Result<Surrogate> {
    let g = single_channel(sample)?;
    Ok(f_bound(&g.ad_mul(e), f_prev, params, p_max))
}

/// Phase bound around `e_prev` with the precoder fixed at `f`. On the feasible set
/// [`Surrogate::value`] is only meaningful through [`e_surrogate_value`].
pub fn e_surrogate_params(
    f: &CVector,
    e_prev: &CVector,
    sample: &ChannelSample,
    params: &SmoothingParams,
) -> Result<Surrogate> {
    let g = single_channel(sample)?;
    Ok(e_bound(&(g * f), e_prev, params))
}

/// The phase bound at feasible `e`. Equal to `2 Re{d^H e} + c` there, but evaluated around
/// the center since `c` is large and cancels.
pub fn e_surrogate_value(s: &Surrogate, e: &CVector) -> f64 {
    s.expanded_value(e)
}

/// Running sums of bound parameters; the averaged bound defines each subproblem.
#[derive(Debug, Clone, PartialEq)]
pub struct SmmAccumulator {
    pub n: usize,
    pub sum_alpha_f: f64,
    pub sum_d_f: CVector,
    pub sum_const_f: f64,
    pub sum_d_e: CVector,
    pub sum_const_e: f64,
}

impl SmmAccumulator {
    pub fn new(n_tx: usize, phase_len: usize) -> Self {
        Self {
            n: 0,
            sum_alpha_f: 0.0,
            sum_d_f: CVector::zeros(n_tx),
            sum_const_f: 0.0,
            sum_d_e: CVector::zeros(phase_len),
            sum_const_e: 0.0,
        }
    }

    pub fn add_f(&mut self, s: &Surrogate) {
        self.sum_alpha_f += s.alpha;
        self.sum_d_f += &s.d;
        self.sum_const_f += s.constant;
    }

    pub fn add_e(&mut self, s: &Surrogate) {
        self.sum_d_e += &s.d;
        self.sum_const_e += s.constant;
    }

    /// Averaged precoder bound at `f` over `count` samples.
    pub fn value_f(&self, f: &CVector, count: usize) -> f64 {
        (self.sum_alpha_f * f.norm_squared() + 2.0 * self.sum_d_f.dotc(f).re + self.sum_const_f)
            / count.max(1) as f64
    }

    /// Averaged phase bound at feasible `e` over `count` samples.
    pub fn value_e(&self, e: &CVector, count: usize) -> f64 {
        (2.0 * self.sum_d_e.dotc(e).re + self.sum_const_e) / count.max(1) as f64
    }

    fn with_f(&self, s: &Surrogate) -> Self {
        let mut out = self.clone();
        out.add_f(s);
        out
    }

    fn with_e(&self, s: &Surrogate) -> Self {
        let mut out = self.clone();
        out.add_e(s);
        out
    }
}

/// Minimizer of `2 Re{d^H f} + α‖f‖²` over `‖f‖² <= P_max`.
pub fn solve_f_subproblem(sum_d: &CVector, sum_alpha: f64, p_max: f64) -> CVector {
    let norm = sum_d.norm();
    if norm == 0.0 {
        return CVector::zeros(sum_d.len());
    }
    if sum_alpha > 0.0 && (norm / sum_alpha).powi(2) <= p_max {
        sum_d * Complex64::new(-1.0 / sum_alpha, 0.0)
    } else {
        sum_d * Complex64::new(-p_max.sqrt() / norm, 0.0)
    }
}

/// Closed-form phase update from the summed linear coefficient `d`.
pub fn solve_e_subproblem(sum_d: &CVector, rule: PhaseRule) -> CVector {
    let len = sum_d.len();
    let last = len - 1;
    match rule {
        PhaseRule::Minimizer => CVector::from_fn(len, |m, _| {
            let z = sum_d[m];
            if m == last || z.norm() == 0.0 {
                ONE
            } else {
                -z / z.norm()
            }
        }),
        PhaseRule::RotateByLast => {
            let pivot = sum_d[last];
            let rot = if pivot.norm() > 0.0 { pivot.conj() / pivot.norm() } else { ONE };
            CVector::from_fn(len, |m, _| {
                let z = sum_d[m] * rot;
                if m == last || z.norm() == 0.0 {
                    ONE
                } else {
                    z / z.norm()
                }
            })
        }
    }
}

/// Result of one accelerated update.
#[derive(Debug, Clone, PartialEq)]
pub struct SquaremOutcome {
    pub x: CVector,
    /// Accepted extrapolation length; `-1` means the plain double step.
    pub omega: f64,
    pub backtracks: usize,
}

/// One SQUAREM step: two applications of `map`, squared extrapolation, projection,
/// and backtracking `ω ← (ω − 1)/2` until `objective` does not exceed its value at `x0`.
/// Falls back to the double step `map(map(x0))` after `max_backtracks` halvings.
pub fn squarem_step(
    x0: &CVector,
    mut map: impl FnMut(&CVector) -> CVector,
    project: impl Fn(&CVector, &CVector) -> CVector,
    objective: impl Fn(&CVector) -> f64,
    max_backtracks: usize,
) -> SquaremOutcome {
    let x1 = map(x0);
    let x2 = map(&x1);
    let j1 = &x1 - x0;
    let j2 = &x2 - &x1 - &j1;
    let (n1, n2) = (j1.norm(), j2.norm());
    let plain = |backtracks| SquaremOutcome {
        x: x2.clone(),
        omega: -1.0,
        backtracks,
    };
    if n2 == 0.0 {
        return plain(0);
    }
    let mut omega = -n1 / n2;
    if omega >= -1.0 {
        return plain(0);
    }
    let reference = objective(x0);
    for t in 0..=max_backtracks {
        let raw = x0 - &j1 * Complex64::new(2.0 * omega, 0.0) + &j2 * Complex64::new(omega * omega, 0.0);
        let candidate = project(&raw, &x2);
        if objective(&candidate) <= reference {
            return SquaremOutcome {
                x: candidate,
                omega,
                backtracks: t,
            };
        }
        omega = (omega - 1.0) / 2.0;
    }
    plain(max_backtracks)
}

/// Radial projection onto the sphere through `anchor`.
pub fn project_radial(x: &CVector, anchor: &CVector) -> CVector {
    let norm = x.norm();
    if norm == 0.0 {
        anchor.clone()
    } else {
        x * Complex64::new(anchor.norm() / norm, 0.0)
    }
}

/// Unit-modulus projection rotated so the last entry is exactly 1.
pub fn project_unit_modulus(x: &CVector, anchor: &CVector) -> CVector {
    let last = x.len() - 1;
    let pivot = x[last];
    let rot = if pivot.norm() > 0.0 { pivot.conj() / pivot.norm() } else { ONE };
    CVector::from_fn(x.len(), |m, _| {
        let z = x[m] * rot;
        if m == last {
            ONE
        } else if z.norm() == 0.0 {
            anchor[m]
        } else {
            z / z.norm()
        }
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum PrecoderRule {
    /// Minimize the averaged bound.
    #[default]
    Surrogate,
    /// Stochastic MRT along the running mean of `G^H e`.
    Smrt,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmmOptions {
    /// Smoothing slope; `None` picks `1 / |x^0|` at the initial point and first sample.
    pub theta: Option<f64>,
    pub squarem: SquaremVariant,
    pub phase_rule: PhaseRule,
    pub max_backtracks: usize,
    pub stop: StoppingRule,
    pub optimize_phases: bool,
    pub precoder: PrecoderRule,
    /// Keep the per-sample effective channels to report the bound gap each iteration.
    pub track_gap: bool,
}

impl Default for SmmOptions {
    fn default() -> Self {
        Self {
            theta: None,
            squarem: SquaremVariant::Standard,
            phase_rule: PhaseRule::Minimizer,
            max_backtracks: 20,
            stop: StoppingRule::default(),
            optimize_phases: true,
            precoder: PrecoderRule::Surrogate,
            track_gap: false,
        }
    }
}

/// Iteration state of the single-user solver.
#[derive(Debug, Clone)]
pub struct SmmSolver {
    pub f: CVector,
    pub e: CVector,
    pub params: SmoothingParams,
    pub acc: SmmAccumulator,
    p_max: f64,
    options: SmmOptions,
    theta_set: bool,
    smrt_sum: CVector,
    history_a: Vec<CVector>,
    history_b: Vec<CVector>,
    last_objective: Option<f64>,
}

impl SmmSolver {
    pub fn new(init: &BeamformingState, budget: &LinkBudget, options: SmmOptions) -> Result<Self> {
        if init.n_users() != 1 || budget.n_users() != 1 {
            return Err(Error::NotSingleUser(init.n_users().max(budget.n_users())));
        }
        let f = init.f.column(0).into_owned();
        let n_tx = f.len();
        let phase_len = init.e.len();
        Ok(Self {
            params: budget.smoothing(options.theta.unwrap_or(1.0), 1.0),
            theta_set: options.theta.is_some(),
            f,
            e: init.e.clone(),
            acc: SmmAccumulator::new(n_tx, phase_len),
            p_max: budget.p_max,
            smrt_sum: CVector::zeros(n_tx),
            history_a: Vec::new(),
            history_b: Vec::new(),
            last_objective: None,
            options,
        })
    }

    pub fn state(&self) -> BeamformingState {
        BeamformingState::new(CMatrix::from_column_slice(self.f.len(), 1, self.f.as_slice()), self.e.clone())
    }

    pub fn theta(&self) -> f64 {
        self.params.theta
    }

    /// One iteration on `sample`. Returns the trace row (with `wall_ns` left at 0).
    pub fn step(&mut self, sample: &ChannelSample) -> Result<TraceRow> {
        let g = single_channel(sample)?;
        if !self.theta_set {
            self.params.theta = default_theta(&self.state(), sample, &self.params.gamma, &self.params.noise);
            self.theta_set = true;
        }
        self.acc.n += 1;
        let n = self.acc.n;
        let p_max = self.p_max;
        let params = &self.params;

        // precoder block, phases fixed at e^{n-1}
        let a = g.ad_mul(&self.e);
        let f_prev = self.f.clone();
        let committed = self.acc.with_f(&f_bound(&a, &f_prev, params, p_max));
        let (f_new, step_f) = match self.options.precoder {
            PrecoderRule::Surrogate => {
                let map = |x: &CVector| {
                    let s = f_bound(&a, x, params, p_max);
                    let acc = self.acc.with_f(&s);
                    solve_f_subproblem(&acc.sum_d_f, acc.sum_alpha_f, p_max)
                };
                match self.options.squarem {
                    SquaremVariant::Off => (map(&f_prev), 1.0),
                    variant => {
                        let negate = variant == SquaremVariant::Literal;
                        let out = squarem_step(
                            &f_prev,
                            map,
                            |x, anchor| {
                                let p = project_radial(x, anchor);
                                if negate {
                                    -p
                                } else {
                                    p
                                }
                            },
                            |x| committed.value_f(x, n),
                            self.options.max_backtracks,
                        );
                        (out.x, -out.omega)
                    }
                }
            }
            PrecoderRule::Smrt => {
                self.smrt_sum += &a;
                let norm = self.smrt_sum.norm();
                let f = if norm > 0.0 {
                    &self.smrt_sum * Complex64::new(p_max.sqrt() / norm, 0.0)
                } else {
                    f_prev.clone()
                };
                (f, 1.0)
            }
        };
        self.acc = committed;
        let objective_f = self.acc.value_f(&f_new, n);
        let residual = (&f_new - &f_prev).norm();
        self.f = f_new;

        // phase block, precoder fixed at f^n
        let b = g * &self.f;
        let e_prev = self.e.clone();
        let (objective_e, step_e) = if self.options.optimize_phases {
            let committed = self.acc.with_e(&e_bound(&b, &e_prev, params));
            let rule = self.options.phase_rule;
            let map = |x: &CVector| {
                let acc = self.acc.with_e(&e_bound(&b, x, params));
                solve_e_subproblem(&acc.sum_d_e, rule)
            };
            let (e_new, step) = match self.options.squarem {
                SquaremVariant::Off => (map(&e_prev), 1.0),
                _ => {
                    let out = squarem_step(
                        &e_prev,
                        map,
                        project_unit_modulus,
                        |x| committed.value_e(x, n),
                        self.options.max_backtracks,
                    );
                    (out.x, -out.omega)
                }
            };
            self.acc = committed;
            self.e = e_new;
            (self.acc.value_e(&self.e, n), step)
        } else {
            (objective_f, 0.0)
        };

        let gap = if self.options.track_gap {
            self.history_a.push(a);
            self.history_b.push(b);
            Some(self.bound_gap())
        } else {
            None
        };
        Ok(TraceRow {
            iter: n,
            objective_f,
            objective_e,
            step_f,
            step_e,
            residual,
            gap,
            wall_ns: 0,
        })
    }

    /// Averaged bound minus averaged smoothed indicator at the current iterate, summed
    /// over both blocks. Nonnegative by construction.
    fn bound_gap(&self) -> f64 {
        let n = self.acc.n;
        let target = self.params.gamma[0] * self.params.noise[0];
        let theta = self.params.theta;
        let true_f: f64 = self
            .history_a
            .iter()
            .map(|a| sigmoid(target - a.dotc(&self.f).norm_sqr(), theta))
            .sum::<f64>()
            / n as f64;
        let mut gap = self.acc.value_f(&self.f, n) - true_f;
        if self.options.optimize_phases {
            let true_e: f64 = self
                .history_b
                .iter()
                .map(|b| sigmoid(target - b.dotc(&self.e).norm_sqr(), theta))
                .sum::<f64>()
                / n as f64;
            gap += self.acc.value_e(&self.e, n) - true_e;
        }
        gap
    }

    /// Runs until the stopping rule fires, drawing one sample per iteration.
    pub fn run(mut self, mut draw: impl FnMut() -> ChannelSample) -> Result<(BeamformingState, RunTrace)> {
        let mut monitor = self.options.stop.monitor();
        let mut trace = RunTrace::default();
        loop {
            let start = Instant::now();
            let sample = draw();
            let mut row = self.step(&sample)?;
            row.wall_ns = start.elapsed().as_nanos() as u64;
            let change = self
                .last_objective
                .map_or(f64::INFINITY, |prev| (row.objective_e - prev).abs());
            self.last_objective = Some(row.objective_e);
            trace.rows.push(row);
            if let Some(converged) = monitor.update(change) {
                trace.converged = converged;
                break;
            }
        }
        trace.theta = self.params.theta;
        Ok((self.state(), trace))
    }
}

/// Runs the single-user solver from `init`, drawing training channels from `draw`.
pub fn run_smm(
    init: &BeamformingState,
    budget: &LinkBudget,
    options: SmmOptions,
    draw: impl FnMut() -> ChannelSample,
) -> Result<(BeamformingState, RunTrace)> {
    SmmSolver::new(init, budget, options)?.run(draw)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn zero_channel_gives_flat_bound() {
        let sample = ChannelSample::from_equivalent(vec![CMatrix::zeros(3, 2)]);
        let params = SmoothingParams::uniform(2.0, 0.01, 1.0, 1.0, 1);
        let f = CVector::from_vec(vec![c(1.0, 0.0), c(0.0, 1.0)]);
        let e = CVector::from_element(3, ONE);
        let s = f_surrogate_params(&f, &e, &sample, &params, 1.0).unwrap();
        assert_eq!(s.alpha, 0.0);
        assert_eq!(s.d.norm(), 0.0);
        let s = e_surrogate_params(&CVector::zeros(2), &e, &sample, &params).unwrap();
        assert_eq!(s.alpha, 0.0);
        assert_eq!(s.d.norm(), 0.0);
    }

    #[test]
    fn f_subproblem_branches() {
        assert_eq!(solve_f_subproblem(&CVector::zeros(3), 0.0, 1.0).norm(), 0.0);
        let u = CVector::from_vec(vec![c(0.6, 0.0), c(0.0, 0.8)]);
        let f = solve_f_subproblem(&u, 1.0, 4.0);
        assert_relative_eq!((f + &u).norm(), 0.0, epsilon = 1e-15);
        let f = solve_f_subproblem(&(&u * c(10.0, 0.0)), 1.0, 4.0);
        assert_relative_eq!(f.norm_squared(), 4.0, epsilon = 1e-12);
    }

    #[test]
    fn e_subproblem_all_negative_real() {
        let d = CVector::from_vec(vec![c(-2.0, 0.0), c(-0.5, 0.0), c(-3.0, 0.0)]);
        let e = solve_e_subproblem(&d, PhaseRule::Minimizer);
        for z in e.iter() {
            assert_relative_eq!((z - ONE).norm(), 0.0, epsilon = 1e-15);
        }
        let d = CVector::from_vec(vec![c(0.0, 0.0), c(0.0, 2.0), c(5.0, 0.0)]);
        let e = solve_e_subproblem(&d, PhaseRule::Minimizer);
        assert_eq!(e[0], ONE);
        assert_relative_eq!((e[1] - c(0.0, -1.0)).norm(), 0.0, epsilon = 1e-15);
        assert_eq!(e[2], ONE);
        let e = solve_e_subproblem(&d, PhaseRule::RotateByLast);
        assert_relative_eq!((e[1] - c(0.0, 1.0)).norm(), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn squarem_fixed_point_and_degenerate_cases() {
        let x0 = CVector::from_vec(vec![c(1.0, 2.0)]);
        let out = squarem_step(&x0, |x| x.clone(), |x, _| x.clone(), |_| 0.0, 20);
        assert_eq!(out.x, x0);
        // constant shift: j2 = 0
        let shift = CVector::from_vec(vec![c(1.0, 0.0)]);
        let out = squarem_step(&x0, |x| x + &shift, |x, _| x.clone(), |_| 0.0, 20);
        assert_relative_eq!((out.x - (&x0 + &shift * c(2.0, 0.0))).norm(), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn squarem_beats_plain_iteration_on_contraction() {
        let map = |x: &CVector| x * c(0.5, 0.0);
        let obj = |x: &CVector| x.norm_squared();
        let mut accel = CVector::from_vec(vec![c(1.0, 0.0)]);
        let mut plain = accel.clone();
        for _ in 0..3 {
            accel = squarem_step(&accel, map, |x, _| x.clone(), obj, 20).x;
            plain = map(&map(&plain));
        }
        assert!(accel.norm() < plain.norm());
        assert!(accel.norm() < 1e-12);
    }

    #[test]
    fn projections_are_feasible() {
        let x = CVector::from_vec(vec![c(3.0, 4.0), c(0.0, 0.0), c(0.0, 2.0)]);
        let anchor = CVector::from_vec(vec![c(0.0, 1.0); 3]);
        let p = project_unit_modulus(&x, &anchor);
        assert_eq!(p[2], ONE);
        assert_eq!(p[1], anchor[1]);
        assert_relative_eq!(p[0].norm(), 1.0, epsilon = 1e-15);
        let r = project_radial(&x, &anchor);
        assert_relative_eq!(r.norm(), anchor.norm(), epsilon = 1e-12);
    }
}
