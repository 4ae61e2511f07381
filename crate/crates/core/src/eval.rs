//! Monte Carlo outage / effective-rate estimation and scenario sweeps.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{train, SchemeId, TrainOptions};
use crate::channel::{sample_channel, BlockageModel, ChannelSample};
use crate::error::{Error, Result};
use crate::objective::{sinr, BeamformingState, LinkBudget};
use crate::rng::{derive_seed, stream, SimRng, EVAL_STREAM, SCENARIO_STREAM};
use crate::scenario::{Scenario, ScenarioConfig};
use crate::trace::RunTrace;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub outage: Vec<f64>,
    pub max_outage: f64,
    /// Mean of `log2(1 + Γ_k)` over samples meeting the target, zero otherwise.
    pub eff_rate: Vec<f64>,
    pub min_eff_rate: f64,
    pub n_samples: usize,
    pub seed: u64,
    /// Binomial standard error of `max_outage`.
    pub std_err: f64,
}

impl EvalReport {
    fn from_counts(outages: &[usize], rates: &[f64], n_samples: usize, seed: u64) -> Self {
        let n = n_samples as f64;
        let outage: Vec<f64> = outages.iter().map(|&c| c as f64 / n).collect();
        let eff_rate: Vec<f64> = rates.iter().map(|r| r / n).collect();
        let max_outage = outage.iter().copied().fold(0.0, f64::max);
        let min_eff_rate = eff_rate.iter().copied().fold(f64::INFINITY, f64::min);
        Self {
            std_err: binomial_std_err(max_outage, n_samples),
            outage,
            max_outage,
            eff_rate,
            min_eff_rate,
            n_samples,
            seed,
        }
    }

    /// Pools reports over the same number of users, weighting by sample count.
    pub fn pooled(reports: &[EvalReport]) -> Result<Self> {
        let first = reports.first().ok_or(Error::NoSamples)?;
        let users = first.outage.len();
        let total: usize = reports.iter().map(|r| r.n_samples).sum();
        let mut outages = vec![0.0; users];
        let mut rates = vec![0.0; users];
        for r in reports {
            if r.outage.len() != users {
                return Err(Error::DimensionMismatch("pooled reports differ in user count".into()));
            }
            for k in 0..users {
                outages[k] += r.outage[k] * r.n_samples as f64;
                rates[k] += r.eff_rate[k] * r.n_samples as f64;
            }
        }
        let n = total as f64;
        let outage: Vec<f64> = outages.iter().map(|c| c / n).collect();
        let eff_rate: Vec<f64> = rates.iter().map(|c| c / n).collect();
        let max_outage = outage.iter().copied().fold(0.0, f64::max);
        Ok(Self {
            std_err: binomial_std_err(max_outage, total),
            min_eff_rate: eff_rate.iter().copied().fold(f64::INFINITY, f64::min),
            outage,
            max_outage,
            eff_rate,
            n_samples: total,
            seed: first.seed,
        })
    }
}

pub fn binomial_std_err(p: f64, n: usize) -> f64 {
    (p * (1.0 - p) / n.max(1) as f64).sqrt()
}

/// Per-user outage flags and effective-rate contributions for one channel sample.
pub fn sample_outcome(state: &BeamformingState, sample: &ChannelSample, budget: &LinkBudget) -> Vec<(bool, f64)> {
    (0..sample.n_users())
        .map(|k| {
            let g = sinr(state, sample, k, budget.noise[k]);
            let gamma = budget.gamma[k];
            (g <= gamma, if g >= gamma { (1.0 + g).log2() } else { 0.0 })
        })
        .collect()
}

/// Evaluates `state` on `n_samples` channels from `sampler`; sample `i` uses the stream
/// derived from `(seed, i)`, so results do not depend on thread scheduling.
pub fn monte_carlo_eval_with<S>(
    state: &BeamformingState,
    budget: &LinkBudget,
    n_samples: usize,
    seed: u64,
    sampler: S,
) -> Result<EvalReport>
where
    S: Fn(&mut SimRng) -> ChannelSample + Sync,
{
    if n_samples == 0 {
        return Err(Error::NoSamples);
    }
    let outcomes: Vec<Vec<(bool, f64)>> = (0..n_samples)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream(seed, &[EVAL_STREAM, i as u64]);
            sample_outcome(state, &sampler(&mut rng), budget)
        })
        .collect();
    let users = budget.n_users();
    let mut outages = vec![0usize; users];
    let mut rates = vec![0.0; users];
    for row in &outcomes {
        for (k, &(out, rate)) in row.iter().enumerate() {
            outages[k] += out as usize;
            rates[k] += rate;
        }
    }
    Ok(EvalReport::from_counts(&outages, &rates, n_samples, seed))
}

/// Evaluates `state` on channels drawn from `scenario` under its true blockage law.
pub fn monte_carlo_eval(state: &BeamformingState, scenario: &Scenario, n_samples: usize, seed: u64) -> Result<EvalReport> {
    if state.e.len() != scenario.phase_len() || state.f.nrows() != scenario.n_tx() {
        return Err(Error::DimensionMismatch(format!(
            "state is {}x{} with {} phases, scenario needs {} antennas and {} phases",
            state.f.nrows(),
            state.f.ncols(),
            state.e.len(),
            scenario.n_tx(),
            scenario.phase_len()
        )));
    }
    let budget = LinkBudget::from_config(&scenario.config);
    monte_carlo_eval_with(state, &budget, n_samples, seed, |rng| sample_channel(scenario, rng))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    PBlock,
    M,
    N,
    K,
}

impl fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SweepAxis::PBlock => "p_block",
            SweepAxis::M => "M",
            SweepAxis::N => "N",
            SweepAxis::K => "K",
        })
    }
}

impl FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "p_block" | "pblock" => Ok(SweepAxis::PBlock),
            "M" | "m" | "elems_per_ris" => Ok(SweepAxis::M),
            "N" | "n" | "n_tx" => Ok(SweepAxis::N),
            "K" | "k" | "n_users" => Ok(SweepAxis::K),
            other => Err(Error::InvalidSweep(format!("unknown axis `{other}`"))),
        }
    }
}

impl SweepAxis {
    /// Copy of `base` with this axis set to `value`.
    pub fn apply(&self, base: &ScenarioConfig, value: f64) -> Result<ScenarioConfig> {
        let mut cfg = base.clone();
        let count = || {
            if value >= 1.0 && value.fract() == 0.0 {
                Ok(value as usize)
            } else {
                Err(Error::InvalidSweep(format!("{self} needs a positive integer, got {value}")))
            }
        };
        match self {
            SweepAxis::PBlock => {
                if !(0.0..=1.0).contains(&value) {
                    return Err(Error::InvalidSweep(format!("p_block {value} outside [0, 1]")));
                }
                cfg.blockage = BlockageModel::Fixed(value);
            }
            SweepAxis::M => cfg.elems_per_ris = count()?,
            SweepAxis::N => cfg.n_tx = count()?,
            SweepAxis::K => cfg.n_users = count()?,
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub axis: SweepAxis,
    pub values: Vec<f64>,
    pub schemes: Vec<SchemeId>,
    /// Independent scenario drops per cell; reports are pooled over them.
    pub reps: usize,
    pub mc_samples: usize,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct SweepCell {
    pub axis_value: f64,
    pub scheme: SchemeId,
    pub report: EvalReport,
    /// Per-drop reports before pooling.
    pub drops: Vec<EvalReport>,
    /// Training trace of the first drop.
    pub trace: RunTrace,
}

/// Seed of the long-term draw for drop `rep`, shared by every axis value and scheme.
pub fn drop_seed(seed: u64, rep: usize) -> u64 {
    derive_seed(seed, &[SCENARIO_STREAM, rep as u64])
}

/// Seed of the evaluation stream for drop `rep`, shared by every axis value and scheme.
pub fn eval_seed(seed: u64, rep: usize) -> u64 {
    derive_seed(seed, &[EVAL_STREAM, rep as u64])
}

/// Trains and evaluates one scheme on drop `rep` of `config`.
pub fn run_cell(
    config: &ScenarioConfig,
    scheme: SchemeId,
    options: &TrainOptions,
    mc_samples: usize,
    seed: u64,
    rep: usize,
) -> Result<(EvalReport, RunTrace)> {
    let scenario = Scenario::realize(config, &mut stream(drop_seed(seed, rep), &[]))?;
    let trained = train(scheme, &scenario, options, derive_seed(seed, &[rep as u64]))?;
    let report = monte_carlo_eval(&trained.state, &trained.eval_scenario, mc_samples, eval_seed(seed, rep))?;
    Ok((report, trained.trace))
}

/// Runs every `(value, scheme)` cell of `spec`, in parallel, returning cells in grid order.
pub fn sweep(base: &ScenarioConfig, spec: &SweepSpec, options: &TrainOptions) -> Result<Vec<SweepCell>> {
    if spec.values.is_empty() || spec.schemes.is_empty() || spec.reps == 0 {
        return Err(Error::InvalidSweep("empty sweep".into()));
    }
    let configs = spec
        .values
        .iter()
        .map(|&v| spec.axis.apply(base, v))
        .collect::<Result<Vec<_>>>()?;
    let jobs: Vec<(usize, usize, usize)> = (0..configs.len())
        .flat_map(|v| (0..spec.schemes.len()).flat_map(move |s| (0..spec.reps).map(move |r| (v, s, r))))
        .collect();
    let results = jobs
        .par_iter()
        .map(|&(v, s, r)| run_cell(&configs[v], spec.schemes[s], options, spec.mc_samples, spec.seed, r))
        .collect::<Result<Vec<_>>>()?;
    let mut cells = Vec::with_capacity(configs.len() * spec.schemes.len());
    for (chunk, block) in results.chunks(spec.reps).zip(jobs.chunks(spec.reps)) {
        let (v, s, _) = block[0];
        let drops: Vec<EvalReport> = chunk.iter().map(|(r, _)| r.clone()).collect();
        cells.push(SweepCell {
            axis_value: spec.values[v],
            scheme: spec.schemes[s],
            report: EvalReport::pooled(&drops)?,
            drops,
            trace: chunk[0].1.clone(),
        });
    }
    Ok(cells)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::CVector;
    use nalgebra::DMatrix;
    use num_complex::Complex64;

    #[test]
    fn pooled_weights_by_samples() {
        let a = EvalReport::from_counts(&[10], &[0.0], 100, 1);
        let b = EvalReport::from_counts(&[30], &[0.0], 100, 1);
        let p = EvalReport::pooled(&[a, b]).unwrap();
        assert!((p.max_outage - 0.2).abs() < 1e-15);
        assert_eq!(p.n_samples, 200);
    }

    #[test]
    fn deterministic_channel_rate() {
        let g = DMatrix::from_element(1, 1, Complex64::new(2.0, 0.0));
        let state = BeamformingState::new(DMatrix::from_element(1, 1, Complex64::new(1.0, 0.0)), CVector::from_element(1, Complex64::new(1.0, 0.0)));
        let budget = LinkBudget::uniform(1.0, 1.0, 1.0, 1);
        let r = monte_carlo_eval_with(&state, &budget, 50, 0, |_| ChannelSample::from_equivalent(vec![g.clone()])).unwrap();
        assert_eq!(r.max_outage, 0.0);
        assert!((r.min_eff_rate - 5f64.log2()).abs() < 1e-12);
        assert!(matches!(
            monte_carlo_eval_with(&state, &budget, 0, 0, |_| ChannelSample::from_equivalent(vec![g.clone()])),
            Err(Error::NoSamples)
        ));
    }

    #[test]
    fn axis_parsing_and_application() {
        assert_eq!("p_block".parse::<SweepAxis>().unwrap(), SweepAxis::PBlock);
        assert!("L".parse::<SweepAxis>().is_err());
        let base = ScenarioConfig::new(4, 1, 8, 1);
        assert_eq!(SweepAxis::M.apply(&base, 32.0).unwrap().elems_per_ris, 32);
        assert!(SweepAxis::M.apply(&base, 2.5).is_err());
        assert!(SweepAxis::PBlock.apply(&base, 1.5).is_err());
    }
}
