//! Kernel scheme for the limit system.
//!
//! Every class has its own time grid on which one round trip spans exactly
//! `substeps` intervals: `t_{k+s} = t_k + T_c + Q(t_k) / L`. The global
//! clock visits the union of the class grids in increasing order. At each
//! visit the classes whose grid point it is move their window measure by
//! one transition kernel, and the queue is integrated by one Euler step.
//!
//! Because `t_m - R_c(t_m)` is itself the grid point `t_{m-s}`, the window
//! law one round trip ago is the tail marginal of the kernel ring and the
//! joint law of (past, present) windows is that marginal times the ring's
//! product kernel.

use std::collections::VecDeque;

use log::warn;
use serde::{Deserialize, Serialize};

use super::kernel::{KernelRing, StepKernel};
use super::measure::{init_measure, WindowMeasure};
use crate::delay::{rtt_at_arrival, QueuePath};
use crate::error::{Error, Result};
use crate::model::{validate_config, ModelConfig};
use crate::record::RunRecord;
use crate::red::{boundary_loss, RedConfig};

/// How the expected window one round trip ago, given the current window,
/// is obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Closure {
    /// Bayes' rule on the joint law carried by the kernel ring.
    #[default]
    Bayes,
    /// Current window minus one round trip of growth, doubled with the
    /// probability that a loss occurred in between.
    Heuristic,
    /// Past and present windows taken as equal.
    Decorrelated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanFieldOptions {
    /// Grid intervals per round trip; also the number of kernels in a ring.
    pub substeps: usize,
    /// Window grid spacing in packets.
    pub dw: f64,
    pub closure: Closure,
    pub snapshot_times: Vec<f64>,
    /// Maintain the dense product kernel and check it against the ring.
    /// Costs `O(nodes^2)` memory per class.
    pub track_product: bool,
}

impl MeanFieldOptions {
    /// 32 intervals per round trip, `dw = a(T) / 2000`.
    pub fn default_for(cfg: &ModelConfig) -> Self {
        MeanFieldOptions {
            substeps: 32,
            dw: cfg.window_bound(cfg.horizon) / 2000.0,
            closure: Closure::Bayes,
            snapshot_times: Vec::new(),
            track_product: false,
        }
    }
}

/// Worst values of the numerical health checks seen during a solve.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Diagnostics {
    pub steps: u64,
    /// `max |total mass - 1|` over all measures produced.
    pub mass_error: f64,
    /// Largest row-sum or sign defect of any kernel.
    pub row_error: f64,
    /// Largest gap between maintained and recomputed product kernels.
    pub product_error: Option<f64>,
    /// Kernel rows whose halving probability had to be clamped at 1.
    pub clamped_rows: u64,
}

/// All class measures at one global time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasureSnapshot {
    pub time: f64,
    pub classes: Vec<WindowMeasure>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanFieldSolution {
    pub record: RunRecord,
    pub snapshots: Vec<MeasureSnapshot>,
    pub diagnostics: Diagnostics,
}

#[derive(Debug, Clone)]
struct ClassState {
    /// `t_{m-2s} ..= t_m`.
    times: VecDeque<f64>,
    ring: KernelRing,
    next: f64,
    pushes: usize,
}

impl ClassState {
    fn now(&self) -> f64 {
        *self.times.back().unwrap()
    }

    /// `t_{m-k}`.
    fn back(&self, k: usize) -> f64 {
        self.times[self.times.len() - 1 - k]
    }
}

/// Queue drift with reflection at zero and the pinning rule on the
/// boundary level.
pub fn queue_rhs(red: &RedConfig, q: f64, k: f64, rate: f64) -> f64 {
    let drift = rate * (1.0 - k) - red.link_rate;
    if q <= 0.0 && drift < 0.0 {
        return 0.0;
    }
    match red.boundary_level() {
        Some(level) if q >= level && drift > 0.0 => 0.0,
        _ => drift,
    }
}

#[derive(Debug, Clone)]
pub struct MeanFieldState {
    cfg: ModelConfig,
    span: usize,
    dw: f64,
    nodes: usize,
    closure: Closure,
    classes: Vec<ClassState>,
    path: QueuePath,
    t: f64,
    rate: f64,
    rtt: Vec<f64>,
    diagnostics: Diagnostics,
    warned_clamp: bool,
}

impl MeanFieldState {
    pub fn init(cfg: &ModelConfig, opts: &MeanFieldOptions) -> Result<Self> {
        validate_config(cfg).map_err(Error::Config)?;
        let span = opts.substeps;
        if span < 2 {
            return Err(Error::config(
                "substeps",
                "need at least 2 intervals per round trip",
            ));
        }
        if !(opts.dw > 0.0) {
            return Err(Error::config("window grid", "dw must be positive"));
        }
        let dw = opts.dw;
        let top = cfg.window_bound(cfg.horizon);
        let nodes = (top / dw * (1.0 - 1e-12)).ceil() as usize + 1;
        let nodes = nodes.max(2);

        let link = cfg.red.link_rate;
        let k0 = cfg.initial_loss();
        let mut path = QueuePath::irregular(0.0, (cfg.q0, k0), link)?;

        let mut classes = Vec::with_capacity(cfg.classes.len());
        let mut means = Vec::with_capacity(cfg.classes.len());
        for (c, class) in cfg.classes.iter().enumerate() {
            let m = init_measure(&class.initial, c, dw, nodes)?;
            means.push(m.mean());
            let r0 = class.delay + cfg.q0 / link;
            let times = (0..=2 * span)
                .map(|k| (k as f64 - 2.0 * span as f64) * r0 / span as f64)
                .collect();
            classes.push(ClassState {
                times,
                ring: KernelRing::new(m.weights, nodes, span, opts.track_product),
                next: r0 / span as f64,
                pushes: 0,
            });
        }

        let rtt: Vec<f64> = cfg
            .classes
            .iter()
            .map(|c| c.delay + cfg.q0 / link)
            .collect();
        let rate = weighted_rate(cfg, &means, &rtt);
        let k = match cfg.red.boundary_level() {
            Some(level) if cfg.q0 >= level => boundary_loss(&cfg.red, rate.max(f64::MIN_POSITIVE))?,
            _ => cfg.red.curve(cfg.q0),
        };
        path.record(0.0, cfg.q0, k)?;

        Ok(MeanFieldState {
            cfg: cfg.clone(),
            span,
            dw,
            nodes,
            closure: opts.closure,
            classes,
            path,
            t: 0.0,
            rate,
            rtt,
            diagnostics: Diagnostics::default(),
            warned_clamp: false,
        })
    }

    pub fn time(&self) -> f64 {
        self.t
    }

    pub fn queue(&self) -> f64 {
        self.path.queue(self.path.len() - 1)
    }

    pub fn loss(&self) -> f64 {
        self.path.loss(self.path.len() - 1)
    }

    pub fn path(&self) -> &QueuePath {
        &self.path
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    pub fn rtts(&self) -> &[f64] {
        &self.rtt
    }

    pub fn nodes(&self) -> usize {
        self.nodes
    }

    pub fn dw(&self) -> f64 {
        self.dw
    }

    pub fn diagnostics(&self) -> Diagnostics {
        self.diagnostics
    }

    pub fn ring(&self, c: usize) -> &KernelRing {
        &self.classes[c].ring
    }

    /// Grid times `t_{m-2s} ..= t_m` of class `c`.
    pub fn class_times(&self, c: usize) -> Vec<f64> {
        self.classes[c].times.iter().copied().collect()
    }

    pub fn measure(&self, c: usize) -> WindowMeasure {
        WindowMeasure {
            class_id: c,
            time: self.classes[c].now(),
            dw: self.dw,
            nodes: self.nodes,
            weights: self.classes[c].ring.current().to_vec(),
        }
    }

    pub fn mean_windows(&self) -> Vec<f64> {
        self.classes
            .iter()
            .map(|cs| mean_of(cs.ring.current(), self.dw))
            .collect()
    }

    /// Current queue drift.
    pub fn queue_rhs(&self) -> f64 {
        queue_rhs(&self.cfg.red, self.queue(), self.loss(), self.rate)
    }

    /// Expected window one round trip ago given the current window, for
    /// every node of class `c`'s current support.
    pub fn conditional_expectation(&self, c: usize) -> Result<Vec<f64>> {
        let cs = &self.classes[c];
        let current = cs.ring.current();
        Ok(match self.closure {
            Closure::Bayes => cs.ring.conditional_expectation(self.dw),
            Closure::Decorrelated => (0..current.len()).map(|j| j as f64 * self.dw).collect(),
            Closure::Heuristic => {
                let k_past = self.path.lookup(cs.back(self.span))?.1;
                (0..current.len())
                    .map(|j| {
                        let b = (j as f64 * self.dw - 1.0).max(0.0);
                        let pi = (k_past * b).min(1.0);
                        (1.0 - pi) * b + pi * 2.0 * b
                    })
                    .collect()
            }
        })
    }

    /// Transition kernel of class `c` from its current grid point to the
    /// next one.
    pub fn build_step_kernel(&mut self, c: usize) -> Result<StepKernel> {
        let span = self.span;
        let e = self.conditional_expectation(c)?;
        let cs = &self.classes[c];
        let t_m = cs.now();
        let h = cs.next - t_m;
        let rtt_now = t_m - cs.back(span);
        let rtt_past = cs.back(span) - cs.back(2 * span);
        let k_past = self.path.lookup(cs.back(span))?.1;
        let scale = h * k_past / rtt_past;
        let mut clamped = 0;
        let probs: Vec<f64> = e
            .iter()
            .map(|&e| {
                let p = scale * e;
                if p > 1.0 {
                    clamped += 1;
                }
                p.clamp(0.0, 1.0)
            })
            .collect();
        if clamped > 0 {
            self.diagnostics.clamped_rows += clamped;
            if !self.warned_clamp {
                warn!("halving probability above 1 in {clamped} rows at t = {t_m}; sub-step too coarse");
                self.warned_clamp = true;
            }
        }
        Ok(StepKernel::transport(
            self.nodes,
            self.dw,
            h / rtt_now,
            &probs,
        ))
    }

    /// Next time on the global grid.
    pub fn next_time(&self) -> f64 {
        self.classes
            .iter()
            .map(|c| c.next)
            .fold(f64::INFINITY, f64::min)
    }

    /// Move to the next global grid time.
    pub fn advance(&mut self) -> Result<()> {
        let t_next = self.next_time();
        let h = t_next - self.t;
        let red = self.cfg.red.clone();
        let link = red.link_rate;

        let q = self.queue();
        let drift = queue_rhs(&red, q, self.loss(), self.rate);
        let cap = red.boundary_level().unwrap_or_else(|| red.ceiling());
        let q_next = (q + h * drift).clamp(0.0, cap);

        for c in 0..self.classes.len() {
            if self.classes[c].next != t_next {
                continue;
            }
            let kernel = self.build_step_kernel(c)?;
            self.diagnostics.row_error = self.diagnostics.row_error.max(kernel.stochastic_error());
            let cs = &mut self.classes[c];
            let mass: f64 = cs.ring.push(kernel).iter().sum();
            self.diagnostics.mass_error = self.diagnostics.mass_error.max((mass - 1.0).abs());
            cs.times.pop_front();
            cs.times.push_back(t_next);
            cs.pushes += 1;
            if cs.pushes % self.span == 0 {
                if let Some(err) = cs.ring.product_error() {
                    let worst = self.diagnostics.product_error.unwrap_or(0.0);
                    self.diagnostics.product_error = Some(worst.max(err));
                }
            }
        }

        // Queue first: a long interval can put t_next - T_c past t, and the
        // round trip then reads the new sample. K follows from those RTTs.
        self.path
            .record(t_next, q_next, red.curve(q_next.min(red.buffer)))?;
        self.rtt = self
            .cfg
            .classes
            .iter()
            .map(|c| rtt_at_arrival(&self.path, t_next, c.delay).map(|r| r.rtt))
            .collect::<Result<_>>()?;
        self.rate = weighted_rate(&self.cfg, &self.mean_windows(), &self.rtt);
        if let Some(level) = red.boundary_level() {
            if q_next >= level {
                self.path
                    .amend_last_loss(boundary_loss(&red, self.rate.max(f64::MIN_POSITIVE))?)?;
            }
        }
        self.t = t_next;

        for (cs, class) in self.classes.iter_mut().zip(&self.cfg.classes) {
            if cs.now() == t_next {
                // t_{m+1} = t_{m+1-s} + T_c + Q(t_{m+1-s}) / L
                let anchor = cs.back(self.span - 1);
                cs.next = anchor + class.delay + self.path.queue_at(anchor)? / link;
            }
        }
        self.diagnostics.steps += 1;
        Ok(())
    }

    fn push_record(&self, record: &mut RunRecord) {
        record.push(
            self.t,
            self.queue(),
            self.loss(),
            self.rate,
            &self.mean_windows(),
            &self.rtt,
        );
    }

    fn snapshot(&self) -> MeasureSnapshot {
        MeasureSnapshot {
            time: self.t,
            classes: (0..self.classes.len()).map(|c| self.measure(c)).collect(),
        }
    }
}

fn mean_of(weights: &[f64], dw: f64) -> f64 {
    weights
        .iter()
        .enumerate()
        .map(|(j, m)| m * j as f64 * dw)
        .sum()
}

fn weighted_rate(cfg: &ModelConfig, means: &[f64], rtt: &[f64]) -> f64 {
    cfg.classes
        .iter()
        .zip(means.iter().zip(rtt))
        .map(|(c, (w, r))| c.weight * w / r)
        .sum()
}

/// Run the scheme up to the configured horizon.
pub fn solve(cfg: &ModelConfig, opts: &MeanFieldOptions) -> Result<MeanFieldSolution> {
    let mut state = MeanFieldState::init(cfg, opts)?;
    let shares = cfg.classes.iter().map(|c| c.weight).collect();
    let mut record = RunRecord::new(cfg.classes.len(), shares, cfg.red.link_rate);
    let mut snaps = opts.snapshot_times.clone();
    snaps.sort_by(f64::total_cmp);
    let mut snapshots = Vec::with_capacity(snaps.len());
    let mut next_snap = 0;

    state.push_record(&mut record);
    let eps = 1e-9 * cfg.horizon.max(1.0);
    while next_snap < snaps.len() && snaps[next_snap] <= eps {
        snapshots.push(state.snapshot());
        next_snap += 1;
    }
    while state.time() < cfg.horizon - eps {
        state.advance()?;
        state.push_record(&mut record);
        // Snapshots are taken at the first grid time at or after the request.
        while next_snap < snaps.len() && snaps[next_snap] <= state.time() + eps {
            snapshots.push(state.snapshot());
            next_snap += 1;
        }
    }
    while next_snap < snaps.len() {
        snapshots.push(state.snapshot());
        next_snap += 1;
    }
    Ok(MeanFieldSolution {
        record,
        snapshots,
        diagnostics: state.diagnostics(),
    })
}
