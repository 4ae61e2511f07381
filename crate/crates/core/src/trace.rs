//! Per-iteration solver diagnostics and stopping rules.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iter: usize,
    /// Averaged surrogate after the precoder update.
    pub objective_f: f64,
    /// Averaged surrogate after the phase update.
    pub objective_e: f64,
    /// Accepted step in `F` (SSCA line search, SQUAREM extrapolation length for SMM).
    pub step_f: f64,
    pub step_e: f64,
    /// `‖F̂^n − F^{n−1}‖_F` for SSCA, `‖f^n − f^{n−1}‖` otherwise.
    pub residual: f64,
    /// Averaged surrogate minus averaged true objective at the iterate, when tracked.
    pub gap: Option<f64>,
    pub wall_ns: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunTrace {
    pub rows: Vec<TraceRow>,
    /// Smoothing parameter actually used.
    pub theta: f64,
    pub converged: bool,
}

impl RunTrace {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn objective(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.objective_e).collect()
    }

    pub fn residuals(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.residual).collect()
    }

    pub fn gaps(&self) -> Vec<f64> {
        self.rows.iter().filter_map(|r| r.gap).collect()
    }

    pub fn total_wall_ns(&self) -> u64 {
        self.rows.iter().map(|r| r.wall_ns).sum()
    }
}

/// Stops when a monitored change stays below `tol` for `patience` consecutive
/// iterations, or after `max_iter` iterations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StoppingRule {
    pub max_iter: usize,
    pub tol: f64,
    pub patience: usize,
}

impl Default for StoppingRule {
    fn default() -> Self {
        Self {
            max_iter: 1000,
            tol: 1e-4,
            patience: 50,
        }
    }
}

impl StoppingRule {
    pub fn fixed(iterations: usize) -> Self {
        Self {
            max_iter: iterations,
            tol: 0.0,
            patience: usize::MAX,
        }
    }

    pub fn with_max_iter(mut self, max_iter: usize) -> Self {
        self.max_iter = max_iter;
        self
    }

    pub fn monitor(&self) -> StopMonitor {
        StopMonitor {
            rule: *self,
            quiet: 0,
            iterations: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct StopMonitor {
    rule: StoppingRule,
    quiet: usize,
    iterations: usize,
}

impl StopMonitor {
    /// Records one iteration's change; returns `Some(converged)` when the run should end.
    pub fn update(&mut self, change: f64) -> Option<bool> {
        self.iterations += 1;
        if change < self.rule.tol {
            self.quiet += 1;
        } else {
            self.quiet = 0;
        }
        if self.quiet >= self.rule.patience {
            Some(true)
        } else if self.iterations >= self.rule.max_iter {
            Some(false)
        } else {
            None
        }
    }
}

/// Trailing moving average with window `w` (shorter at the start).
pub fn moving_average(values: &[f64], w: usize) -> Vec<f64> {
    let w = w.max(1);
    let mut out = Vec::with_capacity(values.len());
    let mut sum = 0.0;
    for i in 0..values.len() {
        sum += values[i];
        if i >= w {
            sum -= values[i - w];
        }
        out.push(sum / (i + 1).min(w) as f64);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn patience_and_cap() {
        let rule = StoppingRule { max_iter: 10, tol: 0.1, patience: 3 };
        let mut m = rule.monitor();
        assert_eq!(m.update(1.0), None);
        assert_eq!(m.update(0.01), None);
        assert_eq!(m.update(0.01), None);
        assert_eq!(m.update(0.01), Some(true));

        let mut m = StoppingRule::fixed(2).monitor();
        assert_eq!(m.update(0.0), None);
        assert_eq!(m.update(0.0), Some(false));
    }

    #[test]
    fn moving_average_window() {
        let ma = moving_average(&[2.0, 4.0, 6.0, 8.0], 2);
        assert_eq!(ma, vec![2.0, 3.0, 5.0, 7.0]);
    }
}
