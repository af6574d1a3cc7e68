//! Fixtures shared by the solver benchmarks.

use tcp_meanfield::{FlowClass, InitialLaw, ModelConfig, RedConfig};

/// 200-source reference setup normalised per flow.
pub fn reference_config(horizon: f64) -> ModelConfig {
    ModelConfig {
        classes: vec![FlowClass {
            delay: 0.1,
            weight: 1.0,
            initial: InitialLaw::Uniform { lo: 0.0, hi: 20.0 },
        }],
        red: RedConfig::red(5.0 / 3.0, 5.0, 0.05, 10.0, 10433.0 / 200.0),
        w_max: 20.0,
        q0: 0.0,
        horizon,
    }
}
