//! Flow classes, initial window laws and the full model configuration.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::red::{window_bound, RedConfig};

/// Law of the initial windows of one class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialLaw {
    Point(f64),
    Uniform {
        lo: f64,
        hi: f64,
    },
    /// Explicit window values. Used verbatim when the class has exactly
    /// this many flows, otherwise resampled uniformly.
    Explicit(Vec<f64>),
}

impl InitialLaw {
    /// Smallest interval containing the support.
    pub fn support(&self) -> (f64, f64) {
        match self {
            InitialLaw::Point(w) => (*w, *w),
            InitialLaw::Uniform { lo, hi } => (*lo, *hi),
            InitialLaw::Explicit(v) => v
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &w| {
                    (a.min(w), b.max(w))
                }),
        }
    }

    pub fn mean(&self) -> f64 {
        match self {
            InitialLaw::Point(w) => *w,
            InitialLaw::Uniform { lo, hi } => 0.5 * (lo + hi),
            InitialLaw::Explicit(v) => v.iter().sum::<f64>() / v.len() as f64,
        }
    }

    /// Draw one window from the law given a uniform variate in `[0, 1)`.
    pub(crate) fn sample(&self, u: f64) -> f64 {
        match self {
            InitialLaw::Point(w) => *w,
            InitialLaw::Uniform { lo, hi } => lo + (hi - lo) * u,
            InitialLaw::Explicit(v) => v[((u * v.len() as f64) as usize).min(v.len() - 1)],
        }
    }

    fn is_zero(&self) -> bool {
        let (_, hi) = self.support();
        hi <= 0.0
    }
}

/// Flows sharing a propagation delay.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowClass {
    /// Propagation delay `T_c` in seconds.
    pub delay: f64,
    /// Share of the flows in this class.
    pub weight: f64,
    pub initial: InitialLaw,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub classes: Vec<FlowClass>,
    pub red: RedConfig,
    /// Bound on every initial window.
    pub w_max: f64,
    /// Initial per-flow queue, also used as the queue prehistory.
    pub q0: f64,
    /// Simulated time span in seconds.
    pub horizon: f64,
}

impl ModelConfig {
    pub fn t_min(&self) -> f64 {
        self.classes
            .iter()
            .map(|c| c.delay)
            .fold(f64::INFINITY, f64::min)
    }

    pub fn t_max(&self) -> f64 {
        self.classes.iter().map(|c| c.delay).fold(0.0, f64::max)
    }

    /// Window bound `a(t)` for this configuration.
    pub fn window_bound(&self, t: f64) -> f64 {
        window_bound(t, self.w_max, self.t_min())
    }

    /// Longest possible round trip time.
    pub fn max_rtt(&self) -> f64 {
        self.t_max() + self.red.ceiling() / self.red.link_rate
    }

    /// Initial loss probability, also used for the prehistory.
    pub fn initial_loss(&self) -> f64 {
        match self.red.boundary_level() {
            // Starting on the boundary: balance is unknown before time 0,
            // take the drop curve value just below the level.
            Some(level) if self.q0 >= level => self.red.p_max,
            _ => self.red.curve(self.q0.clamp(0.0, self.red.buffer)),
        }
    }
}

/// A single broken invariant, reported as data.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub kind: &'static str,
    pub detail: String,
}

impl Violation {
    pub fn new(kind: &'static str, detail: impl Into<String>) -> Self {
        Violation {
            kind,
            detail: detail.into(),
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.kind, self.detail)
    }
}

/// Check every invariant of the configuration and return all violations.
pub fn validate_config(cfg: &ModelConfig) -> Result<(), Vec<Violation>> {
    let mut out = cfg.red.violations();

    if cfg.classes.is_empty() {
        out.push(Violation::new(
            "classes",
            "at least one flow class is required",
        ));
    }
    for (i, class) in cfg.classes.iter().enumerate() {
        if !(class.delay > 0.0 && class.delay.is_finite()) {
            out.push(Violation::new(
                "propagation delay",
                format!("class {i}: delay must be positive, got {}", class.delay),
            ));
        }
        if !(0.0..=1.0).contains(&class.weight) {
            out.push(Violation::new(
                "class weights",
                format!("class {i}: weight {} outside [0, 1]", class.weight),
            ));
        }
        let (lo, hi) = class.initial.support();
        let empty_list = matches!(&class.initial, InitialLaw::Explicit(v) if v.is_empty());
        if empty_list || !(lo >= 0.0 && hi <= cfg.w_max * (1.0 + 1e-12) && lo <= hi) {
            out.push(Violation::new(
                "initial window law",
                format!(
                    "class {i}: support [{lo}, {hi}] not inside [0, w_max = {}]",
                    cfg.w_max
                ),
            ));
        }
    }
    if !cfg.classes.is_empty() {
        let total: f64 = cfg.classes.iter().map(|c| c.weight).sum();
        if (total - 1.0).abs() > 1e-12 {
            out.push(Violation::new(
                "class weights",
                format!("weights sum to {total}, expected 1"),
            ));
        }
        if cfg.classes.iter().all(|c| c.initial.is_zero()) {
            out.push(Violation::new(
                "initial window law",
                "at least one class needs positive initial windows",
            ));
        }
    }
    if !(cfg.w_max > 0.0 && cfg.w_max.is_finite()) {
        out.push(Violation::new(
            "w_max",
            format!("must be positive, got {}", cfg.w_max),
        ));
    }
    if !(cfg.q0 >= 0.0 && cfg.q0 <= cfg.red.q_max) {
        out.push(Violation::new(
            "initial queue",
            format!("q0 = {} outside [0, q_max = {}]", cfg.q0, cfg.red.q_max),
        ));
    }
    if !(cfg.horizon >= 0.0 && cfg.horizon.is_finite()) {
        out.push(Violation::new(
            "horizon",
            format!("must be non-negative, got {}", cfg.horizon),
        ));
    }

    if out.is_empty() {
        Ok(())
    } else {
        Err(out)
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::red::DropPolicy;

    /// Per-flow version of the 200-source T3 experiment.
    pub(crate) fn reference_config() -> ModelConfig {
        ModelConfig {
            classes: vec![FlowClass {
                delay: 0.1,
                weight: 1.0,
                initial: InitialLaw::Uniform { lo: 0.0, hi: 20.0 },
            }],
            red: RedConfig::red(5.0 / 3.0, 5.0, 0.05, 10.0, 10433.0 / 200.0),
            w_max: 20.0,
            q0: 0.0,
            horizon: 60.0,
        }
    }

    #[test]
    fn default_config_is_valid() {
        assert_eq!(validate_config(&reference_config()), Ok(()));
    }

    #[test]
    fn weights_must_sum_to_one() {
        let mut cfg = reference_config();
        cfg.classes[0].weight = 0.9;
        let v = validate_config(&cfg).unwrap_err();
        assert!(v.iter().any(|v| v.kind == "class weights"));
    }

    #[test]
    fn reports_every_violation() {
        let mut cfg = reference_config();
        cfg.classes[0].weight = 0.9;
        cfg.red.policy = DropPolicy::Gentle { delta: 6.0 };
        cfg.q0 = 7.0;
        let v = validate_config(&cfg).unwrap_err();
        let kinds: Vec<_> = v.iter().map(|v| v.kind).collect();
        assert!(kinds.contains(&"class weights"));
        assert!(kinds.contains(&"gentle ramp exceeds buffer"));
        assert!(kinds.contains(&"initial queue"));
    }

    #[test]
    fn initial_support_checked() {
        let mut cfg = reference_config();
        cfg.classes[0].initial = InitialLaw::Uniform { lo: 0.0, hi: 30.0 };
        assert!(validate_config(&cfg).is_err());
        cfg.classes[0].initial = InitialLaw::Point(0.0);
        let v = validate_config(&cfg).unwrap_err();
        assert!(v
            .iter()
            .any(|v| v.detail.contains("positive initial windows")));
    }

    #[test]
    fn derived_bounds() {
        let cfg = reference_config();
        assert_eq!(cfg.t_min(), 0.1);
        assert!((cfg.max_rtt() - (0.1 + 5.0 / 52.165)).abs() < 1e-12);
        assert!((cfg.window_bound(1.0) - 30.0).abs() < 1e-12);
    }
}
