//! Outage-minimizing joint active/passive beamforming for multi-RIS mmWave
//! downlinks with random direct-link blockage.
//!
//! The crate holds the channel generator, the smoothed outage objectives,
//! the single-user SMM solver (with SQUAREM acceleration), the multiuser
//! SSCA solver, the comparison schemes and a Monte Carlo evaluator.

pub mod baselines;
pub mod channel;
pub mod error;
pub mod eval;
pub mod objective;
pub mod rng;
pub mod scenario;
pub mod smm;
pub mod ssca;
pub mod trace;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

pub type CVector = DVector<Complex64>;
pub type CMatrix = DMatrix<Complex64>;

pub use baselines::{train, SchemeId, TrainOptions, TrainedScheme};
pub use channel::{
    assemble_equivalent, sample_channel, steering_vector, ArrayGeometry, BlockageModel,
    ChannelSample, ClusterGeometry, Rician,
};
pub use error::{Error, Result};
pub use eval::{monte_carlo_eval, sweep, EvalReport, SweepAxis, SweepCell, SweepSpec};
pub use objective::{BeamformingState, SmoothingParams};
pub use scenario::{Scenario, ScenarioConfig};
pub use smm::{PhaseRule, SmmOptions, SquaremVariant};
pub use ssca::{SscaOptions, StepSizeRule};
pub use trace::{RunTrace, StoppingRule, TraceRow};
