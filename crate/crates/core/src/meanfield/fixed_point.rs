//! Equilibrium of the mean-window and queue equations under the closure
//! `E[W(t) W(t - R)] = W^2`: per class `W_c = sqrt(2 / K)`, and the queue is
//! stationary when `sum_c kappa_c W_c (1 - K) / R_c = L`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{validate_config, ModelConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    /// `q*` strictly inside the drop ramp with `K* = F(q*)`.
    Interior,
    /// No interior balance exists; the queue sits on the boundary level
    /// and `K*` is set by flow balance.
    Boundary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixedPoint {
    pub queue: f64,
    pub loss: f64,
    pub mean_windows: Vec<f64>,
    pub rtts: Vec<f64>,
    pub regime: Regime,
}

impl FixedPoint {
    /// Absolute residuals: rate balance, drop-curve consistency, then the
    /// stationary window relation of every class.
    pub fn residuals(&self, cfg: &ModelConfig) -> Vec<f64> {
        let link = cfg.red.link_rate;
        let rate: f64 = cfg
            .classes
            .iter()
            .enumerate()
            .map(|(c, cl)| cl.weight * self.mean_windows[c] * (1.0 - self.loss) / self.rtts[c])
            .sum();
        let curve = match self.regime {
            Regime::Interior => self.loss - cfg.red.curve(self.queue),
            Regime::Boundary => (cfg.red.p_max - self.loss).max(0.0),
        };
        let mut out = vec![rate - link, curve];
        for (c, cl) in cfg.classes.iter().enumerate() {
            let r = self.rtts[c];
            let w = self.mean_windows[c];
            out.push(
                (r - (cl.delay + self.queue / link))
                    .abs()
                    .max((1.0 / r - w * w * self.loss / (2.0 * r)).abs()),
            );
        }
        out.into_iter().map(f64::abs).collect()
    }
}

/// Aggregate throughput at queue `q` and loss `k` with stationary windows.
fn balance(cfg: &ModelConfig, q: f64, k: f64) -> f64 {
    let link = cfg.red.link_rate;
    let w = (2.0 / k).sqrt();
    cfg.classes
        .iter()
        .map(|c| c.weight * w * (1.0 - k) / (c.delay + q / link))
        .sum::<f64>()
        - link
}

/// Bisection for a sign change of `f` on `[lo, hi]`, `f(lo) > 0 > f(hi)`,
/// run until the bracket stops shrinking.
fn bisect(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if f(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    if f(lo).abs() <= f(hi).abs() {
        lo
    } else {
        hi
    }
}

pub fn fixed_point(cfg: &ModelConfig) -> Result<FixedPoint> {
    validate_config(cfg).map_err(Error::Config)?;
    let red = &cfg.red;
    let link = red.link_rate;
    let top = red.boundary_level().unwrap_or_else(|| red.ceiling());
    // Right end of the ramp, approached from below.
    let top_loss = match red.boundary_level() {
        Some(_) => red.p_max,
        None => red.curve(top),
    };

    let interior = top_loss > 0.0 && balance(cfg, top, top_loss) < 0.0;
    let (queue, loss, regime) = if interior {
        // F vanishes at q_min, so the balance is +inf there.
        let h = |q: f64| {
            let k = if q >= top { top_loss } else { red.curve(q) };
            if k <= 0.0 {
                f64::INFINITY
            } else {
                balance(cfg, q, k)
            }
        };
        let q = bisect(h, red.q_min, top);
        let k = if q >= top { top_loss } else { red.curve(q) };
        (q, k, Regime::Interior)
    } else {
        let lo = red.p_max.max(f64::MIN_POSITIVE);
        let k = if balance(cfg, top, lo) <= 0.0 {
            lo
        } else {
            bisect(|k| balance(cfg, top, k), lo, 1.0)
        };
        (top, k, Regime::Boundary)
    };
    let w = (2.0 / loss).sqrt();
    Ok(FixedPoint {
        queue,
        loss,
        mean_windows: vec![w; cfg.classes.len()],
        rtts: cfg.classes.iter().map(|c| c.delay + queue / link).collect(),
        regime,
    })
}
