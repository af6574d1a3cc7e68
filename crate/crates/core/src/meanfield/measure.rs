//! Window distributions on a uniform grid `w_j = j * dw`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::InitialLaw;

/// Masses below this value at the top of the support are folded into the
/// node beneath, which bounds the support without losing mass.
pub(crate) const NEGLIGIBLE_MASS: f64 = 1e-40;

/// Probability measure on the window grid. `weights` may be shorter than
/// the grid; missing nodes carry no mass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowMeasure {
    pub class_id: usize,
    /// Time of the class grid point this measure belongs to.
    pub time: f64,
    pub dw: f64,
    /// Number of grid nodes, `J + 1`.
    pub nodes: usize,
    pub weights: Vec<f64>,
}

impl WindowMeasure {
    pub fn node(&self, j: usize) -> f64 {
        j as f64 * self.dw
    }

    pub fn weight(&self, j: usize) -> f64 {
        self.weights.get(j).copied().unwrap_or(0.0)
    }

    pub fn total(&self) -> f64 {
        self.weights.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        self.integrate(|w| w)
    }

    pub fn integrate(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.weights
            .iter()
            .enumerate()
            .filter(|(_, &m)| m != 0.0)
            .map(|(j, &m)| m * f(self.node(j)))
            .sum()
    }

    /// `(w_j, mass_j)` for every node with mass.
    pub fn atoms(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.weights
            .iter()
            .enumerate()
            .filter(|(_, &m)| m != 0.0)
            .map(|(j, &m)| (self.node(j), m))
    }
}

/// Add `mass` at position `x` by splitting it between the two bracketing
/// nodes in proportion to proximity. Keeps total mass and first moment.
pub(crate) fn deposit(weights: &mut Vec<f64>, nodes: usize, dw: f64, x: f64, mass: f64) {
    let (lo, frac) = bracket(x, dw, nodes);
    let need = if frac > 0.0 { lo + 2 } else { lo + 1 };
    if weights.len() < need {
        weights.resize(need, 0.0);
    }
    weights[lo] += mass * (1.0 - frac);
    if frac > 0.0 {
        weights[lo + 1] += mass * frac;
    }
}

/// Lower node index and fractional distance towards the next node, with
/// `x` clamped onto the grid.
pub(crate) fn bracket(x: f64, dw: f64, nodes: usize) -> (usize, f64) {
    let top = (nodes - 1) as f64;
    let pos = (x / dw).clamp(0.0, top);
    let lo = pos.floor();
    let frac = pos - lo;
    // Snap positions within rounding of a node.
    if frac < 1e-12 {
        (lo as usize, 0.0)
    } else if frac > 1.0 - 1e-12 {
        ((lo as usize + 1).min(nodes - 1), 0.0)
    } else {
        (lo as usize, frac)
    }
}

/// Integral of the hat function of node `j` over `[a, b]`, in units of mass
/// per unit density.
fn hat_integral(j: usize, dw: f64, a: f64, b: f64) -> f64 {
    let anti = |w: f64| {
        let x = (w - j as f64 * dw) / dw;
        if x <= -1.0 {
            0.0
        } else if x <= 0.0 {
            0.5 * (x + 1.0) * (x + 1.0)
        } else if x <= 1.0 {
            1.0 - 0.5 * (1.0 - x) * (1.0 - x)
        } else {
            1.0
        }
    };
    dw * (anti(b) - anti(a))
}

/// Discretise an initial law onto `nodes` grid nodes of spacing `dw` by
/// linear allocation. Uniform laws are integrated exactly against the hat
/// functions.
pub fn init_measure(
    law: &InitialLaw,
    class_id: usize,
    dw: f64,
    nodes: usize,
) -> Result<WindowMeasure> {
    if !(dw > 0.0) || nodes < 2 {
        return Err(Error::config(
            "window grid",
            "need dw > 0 and at least two nodes",
        ));
    }
    let (lo, hi) = law.support();
    let top = (nodes - 1) as f64 * dw;
    if lo < 0.0 || hi > top * (1.0 + 1e-12) {
        return Err(Error::config(
            "window grid",
            format!("initial support [{lo}, {hi}] exceeds grid [0, {top}]"),
        ));
    }
    let mut weights = Vec::new();
    match law {
        InitialLaw::Point(w) => deposit(&mut weights, nodes, dw, *w, 1.0),
        InitialLaw::Uniform { lo, hi } if hi - lo <= 0.0 => {
            deposit(&mut weights, nodes, dw, *lo, 1.0)
        }
        InitialLaw::Uniform { lo, hi } => {
            let first = ((lo / dw).floor() as usize).saturating_sub(1);
            let last = (((hi / dw).ceil() as usize) + 1).min(nodes - 1);
            weights.resize(last + 1, 0.0);
            for (j, m) in weights.iter_mut().enumerate().skip(first) {
                *m = hat_integral(j, dw, *lo, *hi) / (hi - lo);
            }
        }
        InitialLaw::Explicit(values) => {
            let m = 1.0 / values.len() as f64;
            for &w in values {
                deposit(&mut weights, nodes, dw, w, m);
            }
        }
    }
    Ok(WindowMeasure {
        class_id,
        time: 0.0,
        dw,
        nodes,
        weights,
    })
}
