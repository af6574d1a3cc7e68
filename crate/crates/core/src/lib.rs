//! Particle simulation and mean-field solution of many TCP Reno flows in
//! congestion avoidance sharing a bottleneck queue that runs RED.
//!
//! The crate is organised bottom-up:
//!
//! * [`red`] and [`model`] hold the drop-probability policies, link and flow
//!   class parameters, and configuration validation.
//! * [`delay`] stores the queue trajectory and inverts the implicit
//!   round-trip-time equation `R = T + Q(t - R) / L`.
//! * [`particle`] simulates the N-flow stochastic system.
//! * [`meanfield`] solves the deterministic limit with gridded window
//!   measures and one-step transition kernels.
//! * [`metrics`] measures the distance between the two.
//! * [`harness`] reads experiment documents, orchestrates runs and writes
//!   result bundles.
//!
//! All queue quantities are per flow (queue divided by the number of flows)
//! and all rates are per flow as well.

pub mod delay;
pub mod error;
pub mod harness;
pub mod meanfield;
pub mod metrics;
pub mod model;
pub mod particle;
pub mod record;
pub mod red;

mod rng;

pub use delay::{past_state, rtt_at_arrival, PastState, QueuePath, RttSolution};
pub use error::{Error, Result};
pub use harness::{ExperimentSpec, Mode, ResultBundle};
pub use meanfield::{
    fixed_point, Closure, FixedPoint, KernelRing, MeanFieldOptions, MeanFieldSolution,
    MeanFieldState, Regime, StepKernel, WindowMeasure,
};
pub use metrics::{
    fluctuation_scaling, loss_distance, path_distance, ScalingFit, WeakMetric, WindowLaw,
};
pub use model::{validate_config, FlowClass, InitialLaw, ModelConfig, Violation};
pub use particle::{SimOptions, SimState};
pub use record::RunRecord;
pub use red::{boundary_loss, drop_prob, window_bound, DropPolicy, RedConfig};
