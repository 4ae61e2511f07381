//! Comparison schemes and the scheme dispatcher.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::channel::{sample_channel, BlockageModel, ChannelSample};
use crate::error::{Error, Result};
use crate::objective::{default_theta, sigmoid, BeamformingState, LinkBudget};
use crate::rng::{stream, CSI_ERROR_STREAM, SOLVER_STREAM};
use crate::scenario::Scenario;
use crate::smm::{
    e_bound, f_bound, solve_e_subproblem, solve_f_subproblem, PhaseRule, PrecoderRule, SmmAccumulator, SmmOptions,
    SmmSolver, SquaremVariant,
};
use crate::ssca::{init_phases, init_precoder, SscaOptions, SscaSolver};
use crate::trace::{RunTrace, StoppingRule, TraceRow};
use crate::{CMatrix, CVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchemeId {
    Smm,
    Ssca,
    Smrt,
    NoRis,
    NonRobust,
    ImperfectCsi,
    Saa,
}

impl SchemeId {
    pub const ALL: [SchemeId; 7] = [
        SchemeId::Smm,
        SchemeId::Ssca,
        SchemeId::Smrt,
        SchemeId::NoRis,
        SchemeId::NonRobust,
        SchemeId::ImperfectCsi,
        SchemeId::Saa,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            SchemeId::Smm => "smm",
            SchemeId::Ssca => "ssca",
            SchemeId::Smrt => "smrt",
            SchemeId::NoRis => "noris",
            SchemeId::NonRobust => "nonrobust",
            SchemeId::ImperfectCsi => "imperfect_csi",
            SchemeId::Saa => "saa",
        }
    }
}

impl fmt::Display for SchemeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SchemeId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_lowercase().replace('-', "_");
        SchemeId::ALL
            .into_iter()
            .find(|id| id.name() == key || (key == "no_ris" && *id == SchemeId::NoRis))
            .ok_or_else(|| Error::UnknownScheme(s.to_string()))
    }
}

/// Removes every RIS; the phase vector degenerates to `[1]`.
pub fn make_noris_scenario(scenario: &Scenario) -> Scenario {
    let mut out = scenario.clone();
    out.config.n_ris = 0;
    out.bs_ris.clear();
    out.ris_user.clear();
    out
}

/// Training view that ignores blockage; evaluation keeps the true law.
pub fn make_nonrobust_scenario(scenario: &Scenario) -> Scenario {
    scenario.with_blockage(BlockageModel::Fixed(0.0))
}

/// Training view whose central cluster angles are all off by `±err` radians.
pub fn make_imperfect_csi_scenario(scenario: &Scenario, err: f64, seed: u64) -> Scenario {
    let mut out = scenario.clone();
    if err == 0.0 {
        return out;
    }
    let mut rng = stream(seed, &[CSI_ERROR_STREAM]);
    for link in out
        .direct
        .iter_mut()
        .chain(out.bs_ris.iter_mut())
        .chain(out.ris_user.iter_mut().flatten())
    {
        link.perturb_angles(err, &mut rng);
    }
    out
}

/// Stochastic MRT: each column along the running sum of `G_k^H e`.
#[derive(Debug, Clone, PartialEq)]
pub struct SmrtAccumulator {
    sum: CMatrix,
}

impl SmrtAccumulator {
    pub fn new(n_tx: usize, n_users: usize) -> Self {
        Self {
            sum: CMatrix::zeros(n_tx, n_users),
        }
    }

    pub fn add(&mut self, sample: &ChannelSample, e: &CVector) {
        for (k, g) in sample.equivalent.iter().enumerate() {
            let mut col = self.sum.column_mut(k);
            col += g.ad_mul(e);
        }
    }

    /// `None` while some column is still zero.
    pub fn precoder(&self, p_max: f64) -> Option<CMatrix> {
        smrt_precoder(&self.sum, p_max)
    }
}

/// Per-user columns `√(P_max/K) m_k / ‖m_k‖` of the summed matched filters `m_k`.
pub fn smrt_precoder(sum: &CMatrix, p_max: f64) -> Option<CMatrix> {
    let scale = (p_max / sum.ncols() as f64).sqrt();
    let mut f = sum.clone();
    for mut col in f.column_iter_mut() {
        let norm = col.norm();
        if norm == 0.0 {
            return None;
        }
        col *= num_complex::Complex64::new(scale / norm, 0.0);
    }
    Some(f)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainOptions {
    pub stop: StoppingRule,
    pub theta: Option<f64>,
    pub mu: Option<f64>,
    pub tau: f64,
    pub squarem: SquaremVariant,
    pub phase_rule: PhaseRule,
    pub saa_samples: usize,
    pub init_trials: usize,
    pub init_grid: usize,
    pub csi_error_rad: f64,
    pub track_gap: bool,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            stop: StoppingRule::default(),
            theta: None,
            mu: None,
            tau: 1.0,
            squarem: SquaremVariant::Standard,
            phase_rule: PhaseRule::Minimizer,
            saa_samples: 300,
            init_trials: 32,
            init_grid: 16,
            csi_error_rad: 0.01,
            track_gap: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainedScheme {
    pub scheme: SchemeId,
    pub state: BeamformingState,
    pub trace: RunTrace,
    /// Scenario the state must be evaluated on (true channel law, RIS-free for `NoRis`).
    pub eval_scenario: Scenario,
}

/// Initial point from the first training sample: max-min phases, then per-user MRT.
pub fn initial_state(sample: &ChannelSample, budget: &LinkBudget, options: &TrainOptions, seed: u64) -> BeamformingState {
    let mut rng = stream(seed, &[SOLVER_STREAM, 1]);
    let len = sample.equivalent[0].nrows();
    let e = if len > 1 {
        init_phases(sample, options.init_trials, options.init_grid, &mut rng)
    } else {
        CVector::from_element(1, num_complex::Complex64::new(1.0, 0.0))
    };
    let f = init_precoder(sample, &e, budget.p_max, &mut rng);
    BeamformingState::new(f, e)
}

/// Trains `scheme` on `scenario` with all randomness derived from `seed`.
pub fn train(scheme: SchemeId, scenario: &Scenario, options: &TrainOptions, seed: u64) -> Result<TrainedScheme> {
    let k_users = scenario.n_users();
    let budget = LinkBudget::from_config(&scenario.config);
    let (train_scenario, eval_scenario) = match scheme {
        SchemeId::NoRis => {
            let s = make_noris_scenario(scenario);
            (s.clone(), s)
        }
        SchemeId::NonRobust => (make_nonrobust_scenario(scenario), scenario.clone()),
        SchemeId::ImperfectCsi => (
            make_imperfect_csi_scenario(scenario, options.csi_error_rad, seed),
            scenario.clone(),
        ),
        _ => (scenario.clone(), scenario.clone()),
    };
    if matches!(scheme, SchemeId::Smm | SchemeId::Saa) && k_users != 1 {
        return Err(Error::NotSingleUser(k_users));
    }

    let mut rng = stream(seed, &[SOLVER_STREAM]);
    let mut draw = || sample_channel(&train_scenario, &mut rng);
    let first = draw();
    let init = initial_state(&first, &budget, options, seed);
    let optimize_phases = train_scenario.phase_len() > 1;
    let precoder = if scheme == SchemeId::Smrt {
        PrecoderRule::Smrt
    } else {
        PrecoderRule::Surrogate
    };

    let (state, trace) = if scheme == SchemeId::Saa {
        let mut samples = vec![first];
        samples.extend((1..options.saa_samples.max(1)).map(|_| draw()));
        run_saa(&init, &budget, options, &samples)?
    } else if k_users == 1 && scheme != SchemeId::Ssca {
        let smm = SmmOptions {
            theta: options.theta,
            squarem: options.squarem,
            phase_rule: options.phase_rule,
            stop: options.stop,
            optimize_phases,
            precoder,
            track_gap: options.track_gap,
            ..SmmOptions::default()
        };
        let mut pending = Some(first);
        let feed = || pending.take().unwrap_or_else(&mut draw);
        SmmSolver::new(&init, &budget, smm)?.run(feed)?
    } else {
        let ssca = SscaOptions {
            theta: options.theta,
            mu: options.mu,
            tau: options.tau,
            phase_rule: options.phase_rule,
            stop: options.stop,
            optimize_phases,
            precoder,
            ..SscaOptions::default()
        };
        let mut pending = Some(first);
        let feed = || pending.take().unwrap_or_else(&mut draw);
        SscaSolver::new(&init, &budget, ssca)?.run(feed)
    };
    Ok(TrainedScheme {
        scheme,
        state,
        trace,
        eval_scenario,
    })
}

/// Sample-average approximation: plain MM on a fixed sample set, with every
/// bound re-expanded at the current iterate. The trace records the exact
/// sample-average smoothed objective, which MM keeps non-increasing.
pub fn run_saa(
    init: &BeamformingState,
    budget: &LinkBudget,
    options: &TrainOptions,
    samples: &[ChannelSample],
) -> Result<(BeamformingState, RunTrace)> {
    if samples.is_empty() {
        return Err(Error::NoSamples);
    }
    if init.n_users() != 1 || samples[0].n_users() != 1 {
        return Err(Error::NotSingleUser(init.n_users().max(samples[0].n_users())));
    }
    let theta = options
        .theta
        .unwrap_or_else(|| default_theta(init, &samples[0], &budget.gamma, &budget.noise));
    let params = budget.smoothing(theta, 1.0);
    let target = budget.gamma[0] * budget.noise[0];
    let count = samples.len() as f64;
    let optimize_phases = init.e.len() > 1;
    let mut f = init.f.column(0).into_owned();
    let mut e = init.e.clone();
    let average = |f: &CVector, e: &CVector| {
        samples
            .iter()
            .map(|s| {
                let a = s.equivalent[0].ad_mul(e);
                sigmoid(target - a.dotc(f).norm_sqr(), theta)
            })
            .sum::<f64>()
            / count
    };

    let mut monitor = options.stop.monitor();
    let mut trace = RunTrace {
        theta,
        ..RunTrace::default()
    };
    let mut previous = average(&f, &e);
    let mut iter = 0;
    loop {
        iter += 1;
        let start = Instant::now();
        let mut acc = SmmAccumulator::new(f.len(), e.len());
        for s in samples {
            acc.add_f(&f_bound(&s.equivalent[0].ad_mul(&e), &f, &params, budget.p_max));
        }
        let f_new = solve_f_subproblem(&acc.sum_d_f, acc.sum_alpha_f, budget.p_max);
        let residual = (&f_new - &f).norm();
        f = f_new;
        let objective_f = average(&f, &e);
        if optimize_phases {
            for s in samples {
                acc.add_e(&e_bound(&(&s.equivalent[0] * &f), &e, &params));
            }
            e = solve_e_subproblem(&acc.sum_d_e, options.phase_rule);
        }
        let objective_e = average(&f, &e);
        trace.rows.push(TraceRow {
            iter,
            objective_f,
            objective_e,
            step_f: 1.0,
            step_e: if optimize_phases { 1.0 } else { 0.0 },
            residual,
            gap: None,
            wall_ns: start.elapsed().as_nanos() as u64,
        });
        let change = (objective_e - previous).abs();
        previous = objective_e;
        if let Some(converged) = monitor.update(change) {
            trace.converged = converged;
            break;
        }
    }
    let state = BeamformingState::new(CMatrix::from_column_slice(f.len(), 1, f.as_slice()), e);
    Ok((state, trace))
}
