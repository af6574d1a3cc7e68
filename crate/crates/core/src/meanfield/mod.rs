//! Deterministic solver for the many-flow limit.

mod fixed_point;
mod kernel;
mod measure;
mod solver;

pub use fixed_point::{fixed_point, FixedPoint, Regime};
pub use kernel::{DenseMatrix, KernelRing, StepKernel};
pub use measure::{init_measure, WindowMeasure};
pub use solver::{
    queue_rhs, solve, Closure, Diagnostics, MeanFieldOptions, MeanFieldSolution, MeanFieldState,
    MeasureSnapshot,
};
