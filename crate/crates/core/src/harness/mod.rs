//! Experiment documents, orchestration and result files.

mod bundle;
mod experiments;
mod spec;

pub use bundle::{
    emit_plotdata, read_plotdata, series_header, Metadata, PlotTable, ResultBundle, Series,
    Snapshot,
};
pub use experiments::{
    execute, run_compare, run_fixed_point, run_gentle_sweep, run_simulate, run_solve,
};
pub use spec::{parse_spec, parse_spec_with, ExperimentSpec, Mode, Overrides};
