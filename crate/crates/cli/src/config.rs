//! Flat `key = value` run configuration.

use std::fmt;
use std::str::FromStr;

use ris_outmin::scenario::{dbm_to_watts, sinr_threshold};
use ris_outmin::smm::{PhaseRule, SquaremVariant};
use ris_outmin::{BlockageModel, ScenarioConfig, SchemeId, StoppingRule, SweepAxis, TrainOptions};
use serde::{Deserialize, Serialize};

/// Keys that must appear in every config file.
pub const REQUIRED_KEYS: [&str; 4] = ["n_tx", "n_ris", "elems_per_ris", "n_users"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub n_tx: usize,
    pub n_ris: usize,
    pub elems_per_ris: usize,
    pub n_users: usize,
    pub p_max_dbm: f64,
    pub noise_dbm: f64,
    pub fc_ghz: f64,
    pub target_rate_bps_hz: f64,
    /// Fixed blockage probability. Mutually exclusive with `a_out`/`b_out`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_block: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a_out: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b_out: Option<f64>,
    pub clusters: usize,
    pub subpaths: usize,
    pub element_spacing: f64,
    pub ris_radius_m: f64,
    pub sector_deg: f64,
    pub user_radius_min_m: f64,
    pub user_radius_max_m: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu: Option<f64>,
    pub tau: f64,
    pub squarem: SquaremVariant,
    pub phase_rule: PhaseRule,
    pub scheme: SchemeId,
    pub max_iter: usize,
    pub tol: f64,
    pub patience: usize,
    pub saa_samples: usize,
    pub csi_error_deg: f64,
    pub mc_samples: usize,
    /// Independent scenario drops per run; reports are pooled over them.
    pub reps: usize,
    pub seed: u64,
    pub output_dir: String,
}

impl Default for RunConfig {
    fn default() -> Self {
        let stop = StoppingRule::default();
        let train = TrainOptions::default();
        Self {
            n_tx: 8,
            n_ris: 1,
            elems_per_ris: 64,
            n_users: 1,
            p_max_dbm: 30.0,
            noise_dbm: -94.0,
            fc_ghz: 28.0,
            target_rate_bps_hz: 0.5,
            p_block: Some(0.0),
            a_out: None,
            b_out: None,
            clusters: 5,
            subpaths: 20,
            element_spacing: 0.5,
            ris_radius_m: 50.0,
            sector_deg: 30.0,
            user_radius_min_m: 50.0,
            user_radius_max_m: 80.0,
            theta: None,
            mu: None,
            tau: train.tau,
            squarem: train.squarem,
            phase_rule: train.phase_rule,
            scheme: SchemeId::Smm,
            max_iter: stop.max_iter,
            tol: stop.tol,
            patience: stop.patience,
            saa_samples: train.saa_samples,
            csi_error_deg: train.csi_error_rad.to_degrees(),
            mc_samples: 1000,
            reps: 1,
            seed: 0,
            output_dir: "out".into(),
        }
    }
}

/// A config problem, pinned to the offending key and, when known, its line.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub key: Option<String>,
    pub line: Option<usize>,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (&self.line, &self.key) {
            (Some(line), Some(key)) => write!(f, "line {line}, key `{key}`: {}", self.message),
            (None, Some(key)) => write!(f, "key `{key}`: {}", self.message),
            (Some(line), None) => write!(f, "line {line}: {}", self.message),
            (None, None) => f.write_str(&self.message),
        }
    }
}

impl std::error::Error for ConfigError {}

/// 1-based line on which `key` is assigned.
fn line_of(text: &str, key: &str) -> Option<usize> {
    text.lines().position(|l| {
        l.trim_start()
            .strip_prefix(key)
            .is_some_and(|rest| rest.trim_start().starts_with('='))
    })
    .map(|i| i + 1)
}

fn line_at(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

fn key_in_message(message: &str) -> Option<String> {
    let start = message.find('`')? + 1;
    let len = message[start..].find('`')?;
    Some(message[start..start + len].to_string())
}

impl RunConfig {
    /// Parses a config file. Keys not in [`REQUIRED_KEYS`] fall back to the defaults.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let table: toml::Table = text.parse().map_err(|e: toml::de::Error| ConfigError {
            key: None,
            line: e.span().map(|s| line_at(text, s.start)),
            message: e.message().to_string(),
        })?;
        for key in REQUIRED_KEYS {
            if !table.contains_key(key) {
                return Err(ConfigError {
                    key: Some(key.into()),
                    line: None,
                    message: "required key is missing".into(),
                });
            }
        }
        let mut merged = toml::Table::try_from(Self::default()).expect("defaults serialize");
        // blockage keys replace each other rather than merge
        if ["p_block", "a_out", "b_out"].iter().any(|k| table.contains_key(*k)) {
            merged.remove("p_block");
        }
        merged.extend(table);
        let config: Self = merged.try_into().map_err(|e: toml::de::Error| {
            let key = key_in_message(e.message());
            ConfigError {
                line: key.as_deref().and_then(|k| line_of(text, k)),
                key,
                message: e.message().to_string(),
            }
        })?;
        config.validate().map_err(|(key, message)| ConfigError {
            line: line_of(text, key),
            key: Some(key.into()),
            message,
        })?;
        Ok(config)
    }

    /// Writes every key, so that `parse(render(c)) == c`.
    pub fn render(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    fn validate(&self) -> Result<(), (&'static str, String)> {
        let positive = [
            ("n_tx", self.n_tx),
            ("n_users", self.n_users),
            ("clusters", self.clusters),
            ("subpaths", self.subpaths),
            ("max_iter", self.max_iter),
            ("saa_samples", self.saa_samples),
            ("mc_samples", self.mc_samples),
            ("reps", self.reps),
            ("patience", self.patience),
        ];
        for (key, value) in positive {
            if value == 0 {
                return Err((key, "must be positive".into()));
            }
        }
        if self.n_ris > 0 && self.elems_per_ris == 0 {
            return Err(("elems_per_ris", "must be positive when n_ris > 0".into()));
        }
        for (key, value) in [("p_max_dbm", self.p_max_dbm), ("noise_dbm", self.noise_dbm)] {
            if !value.is_finite() {
                return Err((key, format!("must be finite, got {value}")));
            }
        }
        let strictly_positive = [
            ("fc_ghz", self.fc_ghz),
            ("target_rate_bps_hz", self.target_rate_bps_hz),
            ("element_spacing", self.element_spacing),
            ("ris_radius_m", self.ris_radius_m),
            ("user_radius_min_m", self.user_radius_min_m),
            ("tau", self.tau),
        ];
        for (key, value) in strictly_positive {
            if !(value > 0.0 && value.is_finite()) {
                return Err((key, format!("must be positive, got {value}")));
            }
        }
        if self.user_radius_max_m < self.user_radius_min_m {
            return Err(("user_radius_max_m", "must not be below user_radius_min_m".into()));
        }
        for (key, value) in [("tol", self.tol), ("csi_error_deg", self.csi_error_deg), ("sector_deg", self.sector_deg)] {
            if !(value >= 0.0 && value.is_finite()) {
                return Err((key, format!("must be non-negative, got {value}")));
            }
        }
        for (key, value) in [("theta", self.theta), ("mu", self.mu)] {
            if let Some(v) = value {
                if !(v > 0.0 && v.is_finite()) {
                    return Err((key, format!("must be positive, got {v}")));
                }
            }
        }
        match (self.p_block, self.a_out, self.b_out) {
            (Some(p), None, None) if (0.0..=1.0).contains(&p) => {}
            (Some(p), None, None) => return Err(("p_block", format!("must lie in [0, 1], got {p}"))),
            (None, Some(a), Some(b)) if a >= 0.0 && a.is_finite() && b.is_finite() => {}
            (None, Some(_), Some(_)) => return Err(("a_out", "must be non-negative and finite".into())),
            (Some(_), _, _) => return Err(("p_block", "conflicts with a_out/b_out".into())),
            (None, None, _) => return Err(("a_out", "distance blockage needs both a_out and b_out".into())),
            (None, Some(_), None) => return Err(("b_out", "distance blockage needs both a_out and b_out".into())),
        }
        Ok(())
    }

    pub fn blockage(&self) -> BlockageModel {
        match (self.p_block, self.a_out, self.b_out) {
            (Some(p), _, _) => BlockageModel::Fixed(p),
            (None, Some(a_out), Some(b_out)) => BlockageModel::Distance { a_out, b_out },
            _ => BlockageModel::Fixed(0.0),
        }
    }

    pub fn scenario(&self) -> ScenarioConfig {
        let mut s = ScenarioConfig::new(self.n_tx, self.n_ris, self.elems_per_ris, self.n_users)
            .with_blockage(self.blockage())
            .with_target_rate(self.target_rate_bps_hz);
        s.p_max_w = dbm_to_watts(self.p_max_dbm);
        s.noise_w = dbm_to_watts(self.noise_dbm);
        s.fc_ghz = self.fc_ghz;
        s.clusters = self.clusters;
        s.subpaths = self.subpaths;
        s.element_spacing = self.element_spacing;
        s.layout.ris_radius_m = self.ris_radius_m;
        s.layout.sector_rad = self.sector_deg.to_radians();
        s.layout.user_radius_min_m = self.user_radius_min_m;
        s.layout.user_radius_max_m = self.user_radius_max_m;
        s
    }

    pub fn target_sinr(&self) -> f64 {
        sinr_threshold(self.target_rate_bps_hz)
    }

    pub fn train_options(&self) -> TrainOptions {
        TrainOptions {
            stop: StoppingRule {
                max_iter: self.max_iter,
                tol: self.tol,
                patience: self.patience,
            },
            theta: self.theta,
            mu: self.mu,
            tau: self.tau,
            squarem: self.squarem,
            phase_rule: self.phase_rule,
            saa_samples: self.saa_samples,
            csi_error_rad: self.csi_error_deg.to_radians(),
            ..TrainOptions::default()
        }
    }
}

/// `AXIS=lo:hi:steps`, expanded to `steps` evenly spaced values.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepArg {
    pub axis: SweepAxis,
    pub values: Vec<f64>,
}

impl FromStr for SweepArg {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let (axis, range) = s.split_once('=').ok_or("expected AXIS=lo:hi:steps")?;
        let axis: SweepAxis = axis.parse().map_err(|e: ris_outmin::Error| e.to_string())?;
        let parts: Vec<&str> = range.split(':').collect();
        let [lo, hi, steps] = parts[..] else {
            return Err("expected lo:hi:steps".into());
        };
        let lo: f64 = lo.trim().parse().map_err(|_| format!("bad lower bound `{lo}`"))?;
        let hi: f64 = hi.trim().parse().map_err(|_| format!("bad upper bound `{hi}`"))?;
        let steps: usize = steps.trim().parse().map_err(|_| format!("bad step count `{steps}`"))?;
        if steps == 0 || !lo.is_finite() || !hi.is_finite() {
            return Err("need finite bounds and at least one step".into());
        }
        let values = if steps == 1 {
            vec![lo]
        } else {
            (0..steps)
                .map(|i| lo + (hi - lo) * i as f64 / (steps - 1) as f64)
                .collect()
        };
        Ok(Self { axis, values })
    }
}
