//! Time series produced by the particle simulator and the mean-field solver.

use serde::{Deserialize, Serialize};

use crate::delay::QueuePath;
use crate::error::Result;

/// Full window vectors of every class at one instant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowSnapshot {
    pub time: f64,
    pub classes: Vec<Vec<f64>>,
}

/// Columns aligned on one time grid.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RunRecord {
    pub times: Vec<f64>,
    pub queue: Vec<f64>,
    pub loss: Vec<f64>,
    /// Mean per-flow sending rate `S = sum_c kappa_c * W_c / R_c`.
    pub rate: Vec<f64>,
    /// `mean_window[c][i]`.
    pub mean_window: Vec<Vec<f64>>,
    /// `rtt[c][i]`.
    pub rtt: Vec<Vec<f64>>,
    /// Realised class proportions.
    pub class_share: Vec<f64>,
    pub link_rate: f64,
    pub snapshots: Vec<WindowSnapshot>,
}

impl RunRecord {
    pub(crate) fn new(classes: usize, class_share: Vec<f64>, link_rate: f64) -> Self {
        RunRecord {
            mean_window: vec![Vec::new(); classes],
            rtt: vec![Vec::new(); classes],
            class_share,
            link_rate,
            ..Default::default()
        }
    }

    pub(crate) fn push(&mut self, t: f64, q: f64, k: f64, rate: f64, wbar: &[f64], rtt: &[f64]) {
        self.times.push(t);
        self.queue.push(q);
        self.loss.push(k);
        self.rate.push(rate);
        for (col, v) in self.mean_window.iter_mut().zip(wbar) {
            col.push(*v);
        }
        for (col, v) in self.rtt.iter_mut().zip(rtt) {
            col.push(*v);
        }
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn classes(&self) -> usize {
        self.mean_window.len()
    }

    /// Queue and loss columns as a path, for distances and lookups.
    pub fn queue_path(&self) -> Result<QueuePath> {
        let t0 = self.times.first().copied().unwrap_or(0.0);
        let pre = (
            self.queue.first().copied().unwrap_or(0.0),
            self.loss.first().copied().unwrap_or(0.0),
        );
        let mut path = QueuePath::irregular(t0, pre, self.link_rate)?;
        for i in 0..self.len() {
            path.record(self.times[i], self.queue[i], self.loss[i])?;
        }
        Ok(path)
    }

    /// Largest gap between the stored rate and `sum_c kappa_c W_c / R_c`.
    pub fn rate_identity_gap(&self) -> f64 {
        (0..self.len())
            .map(|i| {
                let s: f64 = (0..self.classes())
                    .map(|c| self.class_share[c] * self.mean_window[c][i] / self.rtt[c][i])
                    .sum();
                (s - self.rate[i]).abs()
            })
            .fold(0.0, f64::max)
    }
}
