//! Drop-probability policies at the bottleneck and the a-priori bounds
//! that follow from them.
//!
//! Queue levels are per flow (packets/flow) and the link rate is per flow
//! (packets/second/flow).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Violation;

/// Shape of the drop curve above `q_min`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DropPolicy {
    /// Linear ramp from 0 at `q_min` to `p_max` at `q_max`, then 1.
    Red,
    /// Same as `Red` below `q_max`, then a second ramp from `p_max` at
    /// `q_max` to 1 at `q_max + delta`.
    Gentle { delta: f64 },
    /// Drop only when the buffer is full. Uses `q_min = 0`,
    /// `q_max = buffer`, `p_max = 0`.
    TailDrop,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RedConfig {
    pub q_min: f64,
    pub q_max: f64,
    pub p_max: f64,
    /// Buffer capacity per flow.
    pub buffer: f64,
    /// Service rate per flow.
    pub link_rate: f64,
    pub policy: DropPolicy,
}

impl RedConfig {
    pub fn red(q_min: f64, q_max: f64, p_max: f64, buffer: f64, link_rate: f64) -> Self {
        RedConfig {
            q_min,
            q_max,
            p_max,
            buffer,
            link_rate,
            policy: DropPolicy::Red,
        }
    }

    pub fn gentle(
        q_min: f64,
        q_max: f64,
        p_max: f64,
        buffer: f64,
        link_rate: f64,
        delta: f64,
    ) -> Self {
        RedConfig {
            policy: DropPolicy::Gentle { delta },
            ..Self::red(q_min, q_max, p_max, buffer, link_rate)
        }
    }

    pub fn tail_drop(buffer: f64, link_rate: f64) -> Self {
        RedConfig {
            q_min: 0.0,
            q_max: buffer,
            p_max: 0.0,
            buffer,
            link_rate,
            policy: DropPolicy::TailDrop,
        }
    }

    /// Same parameters with the policy swapped.
    pub fn with_policy(&self, policy: DropPolicy) -> Self {
        RedConfig {
            policy,
            ..self.clone()
        }
    }

    /// Queue level at which the queue sticks and the loss probability is
    /// set by flow balance instead of the drop curve. Gentle RED has a
    /// continuous curve and no such level.
    pub fn boundary_level(&self) -> Option<f64> {
        match self.policy {
            DropPolicy::Red | DropPolicy::TailDrop => Some(self.q_max),
            DropPolicy::Gentle { .. } => None,
        }
    }

    /// Largest queue level the dynamics can reach.
    pub fn ceiling(&self) -> f64 {
        match self.policy {
            DropPolicy::Red | DropPolicy::TailDrop => self.q_max,
            DropPolicy::Gentle { delta } => (self.q_max + delta).min(self.buffer),
        }
    }

    pub fn violations(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        let finite = [
            self.q_min,
            self.q_max,
            self.p_max,
            self.buffer,
            self.link_rate,
        ]
        .iter()
        .all(|v| v.is_finite());
        if !finite {
            out.push(Violation::new(
                "red parameters",
                "all values must be finite",
            ));
            return out;
        }
        if !(0.0 <= self.q_min && self.q_min < self.q_max && self.q_max <= self.buffer) {
            out.push(Violation::new(
                "queue thresholds",
                format!(
                    "need 0 <= q_min < q_max <= buffer, got q_min={} q_max={} buffer={}",
                    self.q_min, self.q_max, self.buffer
                ),
            ));
        }
        if !(0.0..=1.0).contains(&self.p_max) {
            out.push(Violation::new(
                "p_max",
                format!("must lie in [0, 1], got {}", self.p_max),
            ));
        }
        if self.link_rate <= 0.0 {
            out.push(Violation::new(
                "link rate",
                format!("must be positive, got {}", self.link_rate),
            ));
        }
        match self.policy {
            DropPolicy::Gentle { delta } => {
                if !(delta > 0.0) {
                    out.push(Violation::new(
                        "gentle ramp width",
                        format!("delta must be positive, got {delta}"),
                    ));
                } else if self.q_max + delta > self.buffer * (1.0 + 1e-12) {
                    out.push(Violation::new(
                        "gentle ramp exceeds buffer",
                        format!(
                            "q_max + delta = {} exceeds buffer {}",
                            self.q_max + delta,
                            self.buffer
                        ),
                    ));
                }
            }
            DropPolicy::TailDrop => {
                if self.q_min != 0.0 || self.q_max != self.buffer || self.p_max != 0.0 {
                    out.push(Violation::new(
                        "tail drop",
                        "requires q_min = 0, q_max = buffer and p_max = 0",
                    ));
                }
            }
            DropPolicy::Red => {}
        }
        out
    }

    /// Drop curve without range checks. Callers must pass `0 <= q <= buffer`.
    pub(crate) fn curve(&self, q: f64) -> f64 {
        let ramp = |q: f64| {
            if q <= self.q_min {
                0.0
            } else {
                self.p_max * (q - self.q_min) / (self.q_max - self.q_min)
            }
        };
        match self.policy {
            DropPolicy::Red => {
                if q >= self.q_max {
                    1.0
                } else {
                    ramp(q)
                }
            }
            DropPolicy::TailDrop => {
                if q >= self.buffer {
                    1.0
                } else {
                    0.0
                }
            }
            DropPolicy::Gentle { delta } => {
                if q < self.q_max {
                    ramp(q)
                } else if q >= self.q_max + delta {
                    1.0
                } else {
                    self.p_max + (1.0 - self.p_max) * (q - self.q_max) / delta
                }
            }
        }
    }
}

/// Probability that an arriving packet is dropped when the per-flow queue
/// is `q`.
///
/// RED is right-continuous at `q_max` (returns 1 there). The simulators
/// never evaluate it on that level; they use [`boundary_loss`] instead.
pub fn drop_prob(cfg: &RedConfig, q: f64) -> Result<f64> {
    let tol = 1e-12 * cfg.buffer.max(1.0);
    if !(q >= -tol && q <= cfg.buffer + tol) {
        return Err(Error::domain(format!(
            "queue level {q} outside [0, {}]",
            cfg.buffer
        )));
    }
    Ok(cfg.curve(q.clamp(0.0, cfg.buffer)))
}

/// Loss probability while the queue is pinned on its boundary level with
/// aggregate per-flow sending rate `s_bar`: `max(p_max, 1 - L / s_bar)`.
///
/// When the result is `p_max` the inflow no longer saturates the link and
/// the queue must be allowed to leave the boundary.
pub fn boundary_loss(cfg: &RedConfig, s_bar: f64) -> Result<f64> {
    if !(s_bar > 0.0) {
        return Err(Error::domain(format!(
            "sending rate must be positive on the boundary, got {s_bar}"
        )));
    }
    Ok(cfg.p_max.max(1.0 - cfg.link_rate / s_bar))
}

/// Deterministic upper bound on every window at time `t`:
/// `w_max + t / t_min`. Divided by `t_min` it also bounds every loss
/// intensity.
pub fn window_bound(t: f64, w_max: f64, t_min: f64) -> f64 {
    w_max + t / t_min
}

/// Upper bound on the loss probability up to time `t`, so that
/// `1 - K >= 1 - k_max > 0`.
pub fn loss_bound(cfg: &RedConfig, t: f64, w_max: f64, t_min: f64) -> f64 {
    let a = window_bound(t, w_max, t_min);
    cfg.p_max.max(1.0 - cfg.link_rate * t_min / a)
}
