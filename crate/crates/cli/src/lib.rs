//! Config parsing and output writing for the `ris-outmin` binary.

pub mod config;

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use ris_outmin::eval::run_cell;
use ris_outmin::{sweep, EvalReport, RunTrace, SchemeId, SweepAxis, SweepSpec};
use serde::Serialize;

pub use config::{ConfigError, RunConfig, SweepArg};

pub const VERSION: &str = concat!(env!("CARGO_PKG_VERSION"), " (", env!("RIS_OUTMIN_GIT_DESCRIBE"), ")");

/// One evaluated `(axis value, scheme)` cell.
#[derive(Debug, Clone, Serialize)]
pub struct CellRecord {
    pub axis: Option<SweepAxis>,
    pub axis_value: Option<f64>,
    pub scheme: SchemeId,
    pub report: EvalReport,
}

#[derive(Debug, Serialize)]
pub struct RunReport<'a> {
    pub version: &'static str,
    pub config: &'a RunConfig,
    pub cells: Vec<CellRecord>,
}

/// What to run beyond the config itself.
#[derive(Debug, Clone, Default)]
pub struct RunPlan {
    pub sweep: Option<SweepArg>,
    /// Schemes to compare; the config's scheme when empty.
    pub schemes: Vec<SchemeId>,
}

pub struct RunOutput {
    pub cells: Vec<CellRecord>,
    /// Training trace of the first cell, first drop.
    pub trace: RunTrace,
    pub dir: PathBuf,
}

/// Trains, evaluates and writes `trace.csv`, `report.json` and `sweep.csv` to the
/// config's output directory.
pub fn run(config: &RunConfig, plan: &RunPlan) -> Result<RunOutput> {
    let schemes = if plan.schemes.is_empty() {
        vec![config.scheme]
    } else {
        plan.schemes.clone()
    };
    let scenario = config.scenario();
    let options = config.train_options();
    let (cells, trace) = match &plan.sweep {
        Some(arg) => {
            let spec = SweepSpec {
                axis: arg.axis,
                values: arg.values.clone(),
                schemes,
                reps: config.reps,
                mc_samples: config.mc_samples,
                seed: config.seed,
            };
            let mut cells = sweep(&scenario, &spec, &options)?;
            let trace = std::mem::take(&mut cells[0].trace);
            let records = cells
                .into_iter()
                .map(|c| CellRecord {
                    axis: Some(arg.axis),
                    axis_value: Some(c.axis_value),
                    scheme: c.scheme,
                    report: c.report,
                })
                .collect();
            (records, trace)
        }
        None => {
            scenario.validate()?;
            let mut records = Vec::new();
            let mut first_trace = None;
            for scheme in schemes {
                let mut drops = Vec::new();
                for rep in 0..config.reps {
                    let (report, trace) = run_cell(&scenario, scheme, &options, config.mc_samples, config.seed, rep)
                        .with_context(|| format!("scheme {scheme}, drop {rep}"))?;
                    first_trace.get_or_insert(trace);
                    drops.push(report);
                }
                records.push(CellRecord {
                    axis: None,
                    axis_value: None,
                    scheme,
                    report: EvalReport::pooled(&drops)?,
                });
            }
            (records, first_trace.unwrap_or_default())
        }
    };

    let dir = PathBuf::from(&config.output_dir);
    fs::create_dir_all(&dir).with_context(|| format!("creating output directory {}", dir.display()))?;
    write_trace(&dir.join("trace.csv"), &trace)?;
    write_sweep(&dir.join("sweep.csv"), &cells)?;
    let report = RunReport {
        version: VERSION,
        config,
        cells: cells.clone(),
    };
    let json = serde_json::to_string_pretty(&report)?;
    fs::write(dir.join("report.json"), json + "\n").with_context(|| format!("writing {}/report.json", dir.display()))?;
    Ok(RunOutput { cells, trace, dir })
}

pub fn write_trace(path: &Path, trace: &RunTrace) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("writing {}", path.display()))?;
    w.write_record(["iter", "objective", "step_size_f", "step_size_e", "wall_ns"])?;
    for row in &trace.rows {
        w.write_record([
            row.iter.to_string(),
            row.objective_e.to_string(),
            row.step_f.to_string(),
            row.step_e.to_string(),
            row.wall_ns.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_sweep(path: &Path, cells: &[CellRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("writing {}", path.display()))?;
    w.write_record(["axis_value", "scheme", "max_outage", "min_eff_rate", "std_err"])?;
    for c in cells {
        w.write_record([
            c.axis_value.map(|v| v.to_string()).unwrap_or_default(),
            c.scheme.name().to_string(),
            c.report.max_outage.to_string(),
            c.report.min_eff_rate.to_string(),
            c.report.std_err.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
