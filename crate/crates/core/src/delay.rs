//! Queue trajectory storage and the round-trip-time inversion.
//!
//! A packet that reaches the router at time `t` left its source at
//! `s = t - R(t)`, where `R(t) = T + Q(s) / L`. Because `s + T + Q(s) / L` is
//! strictly increasing whenever `Q' > -L`, the departure time is found by
//! bisection on `g(s) = s + T + Q(s) / L - t`.

use crate::error::{Error, Result};

const BISECTION_STEPS: usize = 60;

#[derive(Debug, Clone, PartialEq)]
enum Spacing {
    Uniform { dt: f64 },
    Irregular { times: Vec<f64> },
}

/// Time-indexed record of the per-flow queue `Q` and the loss probability
/// `K`, with a constant prehistory before the first sample.
///
/// `K` is stored next to `Q` because on the boundary level it is set by flow
/// balance and is not a function of `Q`.
#[derive(Debug, Clone, PartialEq)]
pub struct QueuePath {
    t0: f64,
    spacing: Spacing,
    queue: Vec<f64>,
    loss: Vec<f64>,
    prehistory: (f64, f64),
    link_rate: f64,
    peak: f64,
}

impl QueuePath {
    /// Path sampled every `dt` seconds starting at `t0`.
    pub fn uniform(t0: f64, dt: f64, prehistory: (f64, f64), link_rate: f64) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::usage(format!(
                "sample spacing must be positive, got {dt}"
            )));
        }
        Self::new(t0, Spacing::Uniform { dt }, prehistory, link_rate)
    }

    /// Path sampled at strictly increasing but otherwise arbitrary times.
    pub fn irregular(t0: f64, prehistory: (f64, f64), link_rate: f64) -> Result<Self> {
        Self::new(
            t0,
            Spacing::Irregular { times: Vec::new() },
            prehistory,
            link_rate,
        )
    }

    fn new(t0: f64, spacing: Spacing, prehistory: (f64, f64), link_rate: f64) -> Result<Self> {
        if !(link_rate > 0.0) {
            return Err(Error::usage(format!(
                "link rate must be positive, got {link_rate}"
            )));
        }
        if !(prehistory.0 >= 0.0) {
            return Err(Error::usage("prehistory queue must be non-negative"));
        }
        Ok(QueuePath {
            t0,
            spacing,
            queue: Vec::new(),
            loss: Vec::new(),
            prehistory,
            link_rate,
            peak: prehistory.0,
        })
    }

    pub fn len(&self) -> usize {
        self.queue.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queue.is_empty()
    }

    pub fn start(&self) -> f64 {
        self.t0
    }

    pub fn link_rate(&self) -> f64 {
        self.link_rate
    }

    pub fn prehistory(&self) -> (f64, f64) {
        self.prehistory
    }

    /// Largest queue value seen, prehistory included.
    pub fn peak(&self) -> f64 {
        self.peak
    }

    pub fn time(&self, i: usize) -> f64 {
        match &self.spacing {
            Spacing::Uniform { dt } => self.t0 + i as f64 * dt,
            Spacing::Irregular { times } => times[i],
        }
    }

    pub fn queue(&self, i: usize) -> f64 {
        self.queue[i]
    }

    pub fn loss(&self, i: usize) -> f64 {
        self.loss[i]
    }

    pub fn queues(&self) -> &[f64] {
        &self.queue
    }

    pub fn losses(&self) -> &[f64] {
        &self.loss
    }

    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.len()).map(move |i| self.time(i))
    }

    /// Time of the newest sample, or `None` before the first write.
    pub fn last_time(&self) -> Option<f64> {
        (!self.is_empty()).then(|| self.time(self.len() - 1))
    }

    fn tolerance(&self) -> f64 {
        match &self.spacing {
            Spacing::Uniform { dt } => 1e-9 * dt,
            Spacing::Irregular { .. } => {
                1e-12
                    * self
                        .t0
                        .abs()
                        .max(self.last_time().unwrap_or(0.0).abs())
                        .max(1.0)
            }
        }
    }

    /// Append the sample at time `t`. Tiny negative queue values left by
    /// floating point reflection are clamped to zero.
    pub fn record(&mut self, t: f64, q: f64, k: f64) -> Result<()> {
        let tol = self.tolerance();
        match &mut self.spacing {
            Spacing::Uniform { dt } => {
                let expected = self.t0 + self.queue.len() as f64 * *dt;
                if (t - expected).abs() > 1e-9 * *dt {
                    return Err(Error::usage(format!(
                        "sample at t = {t} but next grid time is {expected}"
                    )));
                }
            }
            Spacing::Irregular { times } => {
                match times.last() {
                    None if (t - self.t0).abs() > tol => {
                        return Err(Error::usage(format!(
                            "first sample must be at t0 = {}, got {t}",
                            self.t0
                        )))
                    }
                    Some(&last) if !(t > last) => {
                        return Err(Error::usage(format!(
                            "sample at t = {t} does not follow last sample at {last}"
                        )))
                    }
                    _ => {}
                }
                times.push(t);
            }
        }
        if !(q >= -1e-9) || !q.is_finite() {
            self.rollback();
            return Err(Error::usage(format!(
                "queue sample {q} at t = {t} is negative"
            )));
        }
        if !(-1e-12..=1.0 + 1e-12).contains(&k) {
            self.rollback();
            return Err(Error::usage(format!(
                "loss sample {k} at t = {t} is not a probability"
            )));
        }
        let q = q.max(0.0);
        self.peak = self.peak.max(q);
        self.queue.push(q);
        self.loss.push(k.clamp(0.0, 1.0));
        Ok(())
    }

    /// Replace the loss value of the newest sample. Lets a writer record
    /// the queue first and fill in a loss probability that depends on
    /// round trip times reaching up to that sample.
    pub(crate) fn amend_last_loss(&mut self, k: f64) -> Result<()> {
        if !(-1e-12..=1.0 + 1e-12).contains(&k) {
            return Err(Error::usage(format!(
                "loss sample {k} is not a probability"
            )));
        }
        match self.loss.last_mut() {
            Some(last) => {
                *last = k.clamp(0.0, 1.0);
                Ok(())
            }
            None => Err(Error::usage("no sample to amend")),
        }
    }

    fn rollback(&mut self) {
        if let Spacing::Irregular { times } = &mut self.spacing {
            times.pop();
        }
    }

    /// Locate `s`: index of the last sample at or before `s` and the
    /// fractional position towards the next one.
    fn locate(&self, s: f64) -> Result<Option<(usize, f64)>> {
        if s < self.t0 {
            return Ok(None);
        }
        let Some(last) = self.last_time() else {
            if s - self.t0 <= self.tolerance() {
                return Ok(None);
            }
            return Err(Error::usage(format!("lookup at {s} on an empty path")));
        };
        let tol = self.tolerance();
        if s > last + tol {
            return Err(Error::usage(format!(
                "lookup at {s} beyond the latest sample at {last}"
            )));
        }
        let n = self.len();
        let (i, frac) = match &self.spacing {
            Spacing::Uniform { dt } => {
                let x = (s - self.t0) / dt;
                let mut i = x.floor();
                let mut frac = x - i;
                if frac > 1.0 - 1e-9 {
                    i += 1.0;
                    frac = 0.0;
                }
                (i as usize, frac)
            }
            Spacing::Irregular { times } => {
                let i = times.partition_point(|&t| t <= s + tol).max(1) - 1;
                let frac = if i + 1 < n {
                    ((s - times[i]) / (times[i + 1] - times[i])).max(0.0)
                } else {
                    0.0
                };
                (i, frac)
            }
        };
        if i >= n - 1 {
            Ok(Some((n - 1, 0.0)))
        } else {
            Ok(Some((i, frac)))
        }
    }

    /// Queue at time `s`, linearly interpolated.
    pub fn queue_at(&self, s: f64) -> Result<f64> {
        Ok(match self.locate(s)? {
            None => self.prehistory.0,
            Some((i, frac)) if frac > 0.0 => {
                self.queue[i] + frac * (self.queue[i + 1] - self.queue[i])
            }
            Some((i, _)) => self.queue[i],
        })
    }

    /// `(Q, K)` at time `s`: `Q` interpolated, `K` from the last sample at or
    /// before `s` since it may jump.
    pub fn lookup(&self, s: f64) -> Result<(f64, f64)> {
        Ok(match self.locate(s)? {
            None => self.prehistory,
            Some((i, frac)) if frac > 0.0 => (
                self.queue[i] + frac * (self.queue[i + 1] - self.queue[i]),
                self.loss[i],
            ),
            Some((i, _)) => (self.queue[i], self.loss[i]),
        })
    }
}

/// Solution of `R = T + Q(t - R) / L` for packets arriving at time `t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RttSolution {
    pub rtt: f64,
    pub arrival: f64,
    pub departure: f64,
}

/// Round trip time of a class with propagation delay `delay` for packets
/// reaching the router at time `t`.
pub fn rtt_at_arrival(path: &QueuePath, t: f64, delay: f64) -> Result<RttSolution> {
    let link = path.link_rate;
    let mut hi = t - delay;
    if let Some(last) = path.last_time() {
        if hi > last + path.tolerance() {
            return Err(Error::usage(format!(
                "rtt at {t} needs the queue at {hi}, history ends at {last}"
            )));
        }
        hi = hi.min(last);
    } else if hi > path.t0 {
        return Err(Error::usage(format!("rtt at {t} on an empty path")));
    }
    let g = |s: f64| -> Result<f64> { Ok(s + delay + path.queue_at(s)? / link - t) };

    let mut g_hi = g(hi)?;
    if g_hi <= 0.0 {
        return Ok(solution(t, hi));
    }
    let mut lo = t - delay - path.peak / link;
    let mut g_lo = g(lo)?;
    if g_lo >= 0.0 {
        return Ok(solution(t, lo));
    }
    for _ in 0..BISECTION_STEPS {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let g_mid = g(mid)?;
        if g_mid <= 0.0 {
            lo = mid;
            g_lo = g_mid;
        } else {
            hi = mid;
            g_hi = g_mid;
        }
    }
    // g is piecewise linear; finish with the secant through the bracket.
    let s = if g_hi > g_lo {
        lo - g_lo * (hi - lo) / (g_hi - g_lo)
    } else {
        lo
    };
    let s = s.clamp(lo, hi);
    let best = [lo, s, hi]
        .into_iter()
        .map(|x| (x, g(x).map(f64::abs).unwrap_or(f64::INFINITY)))
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .map(|(x, _)| x)
        .unwrap_or(s);
    Ok(solution(t, best))
}

fn solution(t: f64, departure: f64) -> RttSolution {
    RttSolution {
        rtt: t - departure,
        arrival: t,
        departure,
    }
}

/// Delayed quantities entering the loss intensity at time `t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PastState {
    /// `R(t)`.
    pub rtt: f64,
    /// `t - R(t)`.
    pub departure: f64,
    pub queue: f64,
    pub loss: f64,
    /// `R(t - R(t))`.
    pub rtt_past: f64,
}

pub fn past_state(path: &QueuePath, t: f64, delay: f64) -> Result<PastState> {
    let now = rtt_at_arrival(path, t, delay)?;
    let (queue, loss) = path.lookup(now.departure)?;
    let before = rtt_at_arrival(path, now.departure, delay)?;
    Ok(PastState {
        rtt: now.rtt,
        departure: now.departure,
        queue,
        loss,
        rtt_past: before.rtt,
    })
}
