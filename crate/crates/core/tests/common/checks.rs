//! Oracle checks shared by the property suites and the acceptance run. Each returns
//! the first failure as an error message.

use num_complex::Complex64;
use rand::Rng;
use ris_outmin::objective::*;
use ris_outmin::rng::SimRng;
use ris_outmin::smm::*;
use ris_outmin::ssca::*;
use ris_outmin::{CMatrix, CVector};

use super::*;

pub type Check = Result<(), String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Check {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

pub fn single(inst: &Instance) -> (CVector, CVector) {
    (inst.state.f.column(0).into_owned(), inst.state.e.clone())
}

pub fn small_instance(rng: &mut SimRng) -> Instance {
    let n = rng.random_range(1..=8);
    let len = rng.random_range(2..=9);
    random_instance(n, len, 1, rng)
}

pub fn multi_instance(r: &mut SimRng) -> Instance {
    let n = r.random_range(1..=6);
    let len = r.random_range(2..=7);
    let k = r.random_range(1..=3);
    random_instance(n, len, k, r)
}

pub fn objective_at_f(inst: &Instance, f: &CMatrix) -> f64 {
    smoothed_objective(&BeamformingState::new(f.clone(), inst.state.e.clone()), &inst.sample, &inst.params)
}

pub fn objective_at_e(inst: &Instance, e: &CVector) -> f64 {
    smoothed_objective(&BeamformingState::new(inst.state.f.clone(), e.clone()), &inst.sample, &inst.params)
}

/// Precoder bound: tangent at the center, above the smoothed indicator on the ball.
pub fn f_bound_tangent_and_dominating(seed: u64, instances: usize, points: usize) -> Check {
    let mut r = rng(seed);
    for i in 0..instances {
        let inst = small_instance(&mut r);
        let (f0, e) = single(&inst);
        let s = f_surrogate_params(&f0, &e, &inst.sample, &inst.params, inst.p_max).map_err(|e| e.to_string())?;
        let truth = |f: &CVector| smooth_single(f, &e, &inst.sample, &inst.params).unwrap();
        let gap = (s.value(&f0) - truth(&f0)).abs();
        ensure(gap <= 1e-10, || format!("instance {i}: tangency gap {gap}"))?;
        for _ in 0..points {
            let f = random_in_ball(f0.len(), inst.p_max, &mut r);
            let (v, t) = (s.value(&f), truth(&f));
            ensure(v >= t - 1e-10, || format!("instance {i}: bound {v} below {t}"))?;
            let diff = (v - s.expanded_value(&f)).abs();
            ensure(diff <= 1e-9, || format!("instance {i}: linear form off by {diff}"))?;
        }
    }
    Ok(())
}

/// Phase bound: tangent at the center, above the smoothed indicator on the torus.
pub fn e_bound_tangent_and_dominating(seed: u64, instances: usize, points: usize) -> Check {
    let mut r = rng(seed);
    for i in 0..instances {
        let inst = small_instance(&mut r);
        let (f, e0) = single(&inst);
        let s = e_surrogate_params(&f, &e0, &inst.sample, &inst.params).map_err(|e| e.to_string())?;
        let truth = |e: &CVector| smooth_single(&f, e, &inst.sample, &inst.params).unwrap();
        let gap = (e_surrogate_value(&s, &e0) - truth(&e0)).abs();
        ensure(gap <= 1e-10, || format!("instance {i}: tangency gap {gap}"))?;
        for _ in 0..points {
            let e = random_phases(e0.len(), &mut r);
            let (v, t) = (e_surrogate_value(&s, &e), truth(&e));
            ensure(v >= t - 1e-10, || format!("instance {i}: bound {v} below {t}"))?;
            let linear = 2.0 * s.d.dotc(&e).re + s.constant;
            ensure((linear - v).abs() <= 1e-12 * s.constant.abs().max(1.0), || {
                format!("instance {i}: linear form {linear} vs {v}")
            })?;
        }
    }
    Ok(())
}

/// Gradients of both bounds at their centers against central differences.
pub fn bound_gradients(seed: u64, instances: usize) -> Check {
    let mut r = rng(seed);
    for i in 0..instances {
        let inst = small_instance(&mut r);
        let (f0, e0) = single(&inst);
        let sf = f_surrogate_params(&f0, &e0, &inst.sample, &inst.params, inst.p_max).map_err(|e| e.to_string())?;
        let fd = fd_gradient(&f0, 1e-5, |f| smooth_single(f, &e0, &inst.sample, &inst.params).unwrap());
        let err = rel_err(&sf.m, &fd);
        ensure(err <= 1e-4, || format!("instance {i}: f gradient error {err}"))?;
        let se = e_surrogate_params(&f0, &e0, &inst.sample, &inst.params).map_err(|e| e.to_string())?;
        let fd = fd_gradient(&e0, 1e-5, |e| smooth_single(&f0, e, &inst.sample, &inst.params).unwrap());
        let err = rel_err(&se.m, &fd);
        ensure(err <= 1e-4, || format!("instance {i}: e gradient error {err}"))?;
    }
    Ok(())
}

/// Explicit 2N x 2N curvature matrix of `ξ ↦ u(γσ² − |a^H (f0 + ξt)|²)` at the point `p`,
/// acting on the stacked vector `[t; t*]`.
pub fn curvature_matrix(a: &CVector, p: &CVector, target: f64, theta: f64) -> CMatrix {
    let n = a.len();
    let inner = a.dotc(p);
    let l = target - inner.norm_sqr();
    let g = sigmoid_slope(l, theta);
    let ex = (-theta * l).exp();
    let coef = if ex.is_finite() { g * (2.0 * (1.0 + ex) * g - theta) } else { -g * theta };
    let q = a * inner;
    let mut stacked = CVector::zeros(2 * n);
    for i in 0..n {
        stacked[i] = q[i];
        stacked[n + i] = q[i].conj();
    }
    let big_theta = a * a.adjoint();
    let mut phi = &stacked * stacked.adjoint() * Complex64::new(coef, 0.0);
    for i in 0..n {
        for j in 0..n {
            phi[(i, j)] -= big_theta[(i, j)] * g;
            phi[(n + i, n + j)] -= big_theta[(i, j)].conj() * g;
        }
    }
    phi
}

/// Largest curvature eigenvalue along the ball never exceeds the precoder bound constant.
pub fn f_curvature_dominates(seed: u64, instances: usize, points: usize) -> Check {
    let mut r = rng(seed);
    let mut violations = 0;
    let mut worst = 0.0f64;
    for _ in 0..instances {
        let inst = small_instance(&mut r);
        let (f0, e) = single(&inst);
        let s = f_surrogate_params(&f0, &e, &inst.sample, &inst.params, inst.p_max).map_err(|e| e.to_string())?;
        let a = inst.sample.equivalent[0].ad_mul(&e);
        let target = inst.params.gamma[0] * inst.params.noise[0];
        for _ in 0..points {
            let p = random_in_ball(f0.len(), inst.p_max, &mut r);
            let phi = curvature_matrix(&a, &p, target, inst.params.theta);
            let lambda = power_iteration_max(&phi, 5000);
            worst = worst.max(lambda / s.alpha);
            if lambda > s.alpha * (1.0 + 1e-9) {
                violations += 1;
            }
        }
    }
    ensure(violations == 0, || format!("{violations} violations, worst ratio {worst}"))
}

/// SSCA bounds: value and gradient match the sample objective at the center.
pub fn ssca_bounds_first_order(seed: u64, instances: usize) -> Check {
    let mut r = rng(seed);
    for i in 0..instances {
        let inst = multi_instance(&mut r);
        let tau = r.random_range(0.1..3.0);
        let w = softmax_sigmoid_weights(&inst.state, &inst.sample, &inst.params);

        let s = ssca_f_params(&inst.state, &inst.sample, &inst.params, &w, tau);
        let truth = objective_at_f(&inst, &inst.state.f);
        let gap = (s.value(&inst.state.f) - truth).abs();
        ensure(gap <= 1e-10 * truth.abs().max(1.0), || format!("instance {i}: F value gap {gap}"))?;
        // gradient of the quadratic at the center is P + (τ/2) F0
        let grad = &s.p + &inst.state.f * Complex64::new(0.5 * tau, 0.0);
        let fd = fd_gradient_mat(&inst.state.f, 1e-5, |f| objective_at_f(&inst, f));
        let err = (&grad - &fd).norm() / fd.norm().max(1e-300);
        ensure(err <= 1e-4, || format!("instance {i}: F gradient error {err}"))?;

        let s = ssca_e_params(&inst.state, &inst.sample, &inst.params, &w, tau);
        let truth = objective_at_e(&inst, &inst.state.e);
        let gap = (s.value(&inst.state.e) - truth).abs();
        ensure(gap <= 1e-10 * truth.abs().max(1.0), || format!("instance {i}: e value gap {gap}"))?;
        let gap = (s.expanded_value(&inst.state.e) - truth).abs();
        ensure(gap <= 1e-12, || format!("instance {i}: e centered value gap {gap}"))?;
        let grad = &s.p + &inst.state.e * Complex64::new(0.5 * tau, 0.0);
        let fd = fd_gradient(&inst.state.e, 1e-5, |e| objective_at_e(&inst, e));
        let err = rel_err(&grad, &fd);
        ensure(err <= 1e-4, || format!("instance {i}: e gradient error {err}"))?;
        for _ in 0..20 {
            let e = random_phases(inst.state.e.len(), &mut r);
            let diff = (s.value(&e) - s.expanded_value(&e)).abs();
            ensure(diff <= 1e-9 * s.constant.abs().max(1.0), || format!("instance {i}: e forms differ by {diff}"))?;
        }
    }
    Ok(())
}

/// SSCA precoder bound is (τ/2)-strongly convex: the Bregman excess is exactly quadratic.
pub fn ssca_strong_convexity(seed: u64, instances: usize) -> Check {
    let mut r = rng(seed);
    for i in 0..instances {
        let inst = multi_instance(&mut r);
        let tau = r.random_range(0.1..3.0);
        let w = softmax_sigmoid_weights(&inst.state, &inst.sample, &inst.params);
        let s = ssca_f_params(&inst.state, &inst.sample, &inst.params, &w, tau);
        let (n, k) = inst.state.f.shape();
        for _ in 0..20 {
            let x = random_precoder(n, k, inst.p_max, &mut r);
            let y = random_precoder(n, k, inst.p_max * 0.5, &mut r);
            let grad_y = &s.p + &y * Complex64::new(0.5 * tau, 0.0);
            let excess = s.value(&x) - s.value(&y) - 2.0 * grad_y.dotc(&(&x - &y)).re;
            let expected = 0.5 * tau * (&x - &y).norm_squared();
            ensure((excess - expected).abs() <= 1e-9 * (1.0 + expected), || {
                format!("instance {i}: excess {excess} vs {expected}")
            })?;
        }
    }
    Ok(())
}

/// Stochastic precoder subproblem against projected gradient descent.
pub fn smm_f_closed_form(seed: u64, instances: usize) -> Check {
    let mut r = rng(seed);
    for i in 0..instances {
        let n = r.random_range(1..=8);
        let d = gaussian_vec(n, &mut r) * Complex64::new(r.random_range(0.01..5.0), 0.0);
        let alpha = r.random_range(0.05..5.0);
        let p_max = r.random_range(0.1..4.0);
        let closed = solve_f_subproblem(&d, alpha, p_max);
        let oracle = pgd_ball(&d, 2.0 * alpha, p_max);
        let dist = (&closed - &oracle).norm();
        ensure(dist <= 1e-6, || format!("instance {i}: distance {dist}"))?;
        ensure(closed.norm_squared() <= p_max * (1.0 + 1e-12), || format!("instance {i}: infeasible"))?;
    }
    Ok(())
}

/// Stochastic phase subproblem against an exhaustive grid.
pub fn smm_e_closed_form(seed: u64, instances: usize) -> Check {
    let mut r = rng(seed);
    for i in 0..instances {
        let d = gaussian_vec(3, &mut r);
        let obj = |e: &CVector| 2.0 * d.dotc(e).re;
        let closed = obj(&solve_e_subproblem(&d, PhaseRule::Minimizer));
        let grid = phase_grid_min(&d, 721, obj);
        ensure(closed <= grid + 1e-4, || format!("instance {i}: closed {closed} grid {grid}"))?;
    }
    Ok(())
}

/// Multiuser precoder subproblem against projected gradient descent.
pub fn ssca_f_closed_form(seed: u64, instances: usize) -> Check {
    let mut r = rng(seed);
    for i in 0..instances {
        let (n, k) = (r.random_range(1..=6), r.random_range(1..=3));
        let p = gaussian_mat(n, k, &mut r) * Complex64::new(r.random_range(0.01..4.0), 0.0);
        let tau = r.random_range(0.1..5.0);
        let p_max = r.random_range(0.1..4.0);
        let closed = solve_f_subproblem_ssca(&p, tau, p_max);
        let flat = CVector::from_iterator(n * k, p.iter().copied());
        let oracle = pgd_ball(&flat, tau, p_max);
        let closed_flat = CVector::from_iterator(n * k, closed.iter().copied());
        let dist = (&closed_flat - &oracle).norm();
        ensure(dist <= 1e-6, || format!("instance {i}: distance {dist}"))?;
    }
    Ok(())
}

/// Multiuser phase subproblem against an exhaustive grid.
pub fn ssca_e_closed_form(seed: u64, instances: usize) -> Check {
    let mut r = rng(seed);
    for i in 0..instances {
        let p = gaussian_vec(3, &mut r);
        let obj = |e: &CVector| 2.0 * p.dotc(e).re;
        let closed = obj(&solve_e_subproblem_ssca(&p, PhaseRule::Minimizer));
        let grid = phase_grid_min(&p, 721, obj);
        ensure(closed <= grid + 1e-4, || format!("instance {i}: closed {closed} grid {grid}"))?;
    }
    Ok(())
}

/// Full-objective gradients used by the line search against central differences.
pub fn line_search_gradients(seed: u64, instances: usize) -> Check {
    let mut r = rng(seed);
    for i in 0..instances {
        let inst = multi_instance(&mut r);
        let w = softmax_sigmoid_weights(&inst.state, &inst.sample, &inst.params);
        let gf = gradient_f(&inst.state, &inst.sample, &inst.params, &w);
        let fd = fd_gradient_mat(&inst.state.f, 1e-5, |f| objective_at_f(&inst, f));
        let err = (&gf - &fd).norm() / fd.norm().max(1e-300);
        ensure(err <= 1e-4, || format!("instance {i}: F gradient error {err}"))?;
        let ge = gradient_e(&inst.state, &inst.sample, &inst.params, &w);
        let fd = fd_gradient(&inst.state.e, 1e-5, |e| objective_at_e(&inst, e));
        let err = rel_err(&ge, &fd);
        ensure(err <= 1e-4, || format!("instance {i}: e gradient error {err}"))?;
    }
    Ok(())
}

/// Softmax-of-sigmoids weights against differences of the outer function.
pub fn softmax_weights(seed: u64, instances: usize) -> Check {
    let mut r = rng(seed);
    for i in 0..instances {
        let inst = random_instance(r.random_range(1..=4), r.random_range(2..=5), 3, &mut r);
        let w = softmax_sigmoid_weights(&inst.state, &inst.sample, &inst.params);
        let xs: Vec<f64> = (0..3).map(|k| quad_arg(&inst.state, &inst.sample, &inst.params, k)).collect();
        let outer = |xs: &[f64]| {
            let v: Vec<f64> = xs.iter().map(|&x| sigmoid(x, inst.params.theta)).collect();
            logsumexp_max(&v, inst.params.mu)
        };
        let mut fd = vec![0.0; 3];
        for k in 0..3 {
            let h = 1e-6 * xs[k].abs().max(1e-3);
            let mut up = xs.clone();
            let mut down = xs.clone();
            up[k] += h;
            down[k] -= h;
            fd[k] = (outer(&up) - outer(&down)) / (2.0 * h);
        }
        let err: f64 = w.iter().zip(&fd).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let norm: f64 = fd.iter().map(|b| b * b).sum::<f64>().sqrt();
        ensure(err <= 1e-4 * norm, || format!("instance {i}: {w:?} vs {fd:?}"))?;
    }
    Ok(())
}
