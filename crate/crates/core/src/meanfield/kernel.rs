//! One-step transition kernels on the window grid and the ring of the last
//! round trip's worth of them.
//!
//! A kernel is row-stochastic: row `j` says where the mass sitting at `w_j`
//! goes over one class sub-step. Each row has at most four targets (two
//! for growth, two for halving), so kernels are stored sparsely. Rows past
//! the stored ones are identity rows.

use std::collections::VecDeque;

use super::measure::{bracket, NEGLIGIBLE_MASS};

#[derive(Debug, Clone, Copy, PartialEq, Default)]
struct Entry {
    col: u32,
    weight: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepKernel {
    nodes: usize,
    rows: Vec<[Entry; 4]>,
    reach: usize,
}

impl StepKernel {
    pub fn identity(nodes: usize) -> Self {
        StepKernel {
            nodes,
            rows: Vec::new(),
            reach: 0,
        }
    }

    /// Growth by `growth` packets plus halving of the mass at `w_j` with
    /// probability `halving[j]`, for the first `halving.len()` rows.
    /// Targets between nodes are split linearly between the two neighbours.
    pub fn transport(nodes: usize, dw: f64, growth: f64, halving: &[f64]) -> Self {
        let mut reach = 0;
        let rows: Vec<[Entry; 4]> = halving
            .iter()
            .enumerate()
            .map(|(j, &p)| {
                let p = p.clamp(0.0, 1.0);
                let stay = 1.0 - p;
                let (lo, frac) = bracket(j as f64 * dw + growth, dw, nodes);
                let hi = (lo + 1).min(nodes - 1);
                let (half_lo, half_hi) = (j / 2, j.div_ceil(2));
                let half_split = if half_lo == half_hi { 1.0 } else { 0.5 };
                reach = reach.max(hi + 1).max(half_hi + 1);
                [
                    Entry {
                        col: lo as u32,
                        weight: stay * (1.0 - frac),
                    },
                    Entry {
                        col: hi as u32,
                        weight: stay * frac,
                    },
                    Entry {
                        col: half_lo as u32,
                        weight: p * half_split,
                    },
                    Entry {
                        col: half_hi as u32,
                        weight: if half_lo == half_hi { 0.0 } else { p * 0.5 },
                    },
                ]
            })
            .collect();
        StepKernel { nodes, rows, reach }
    }

    pub fn nodes(&self) -> usize {
        self.nodes
    }

    /// Number of explicitly stored rows.
    pub fn active_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn entry(&self, i: usize, j: usize) -> f64 {
        match self.rows.get(i) {
            Some(row) => row
                .iter()
                .filter(|e| e.col as usize == j)
                .map(|e| e.weight)
                .sum(),
            None => f64::from(u8::from(i == j)),
        }
    }

    /// Largest `|row sum - 1|` or negative entry magnitude.
    pub fn stochastic_error(&self) -> f64 {
        self.rows
            .iter()
            .map(|row| {
                let sum: f64 = row.iter().map(|e| e.weight).sum();
                let neg = row.iter().map(|e| (-e.weight).max(0.0)).fold(0.0, f64::max);
                (sum - 1.0).abs().max(neg)
            })
            .fold(0.0, f64::max)
    }

    /// Row vector times kernel, `v T`.
    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; v.len().max(self.reach)];
        for (j, &x) in v.iter().enumerate() {
            if x == 0.0 {
                continue;
            }
            match self.rows.get(j) {
                Some(row) => {
                    for e in row {
                        if e.weight != 0.0 {
                            out[e.col as usize] += x * e.weight;
                        }
                    }
                }
                None => out[j] += x,
            }
        }
        out
    }

    pub fn to_dense(&self) -> DenseMatrix {
        let mut m = DenseMatrix::identity(self.nodes);
        for (i, row) in self.rows.iter().enumerate() {
            m.data[i * self.nodes + i] = 0.0;
            for e in row {
                m.data[i * self.nodes + e.col as usize] += e.weight;
            }
        }
        m
    }
}

/// Square row-major matrix, used only for product bookkeeping and checks.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    pub n: usize,
    pub data: Vec<f64>,
}

impl DenseMatrix {
    pub fn identity(n: usize) -> Self {
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            data[i * n + i] = 1.0;
        }
        DenseMatrix { n, data }
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    /// `self * kernel`.
    pub fn mul_kernel(&self, k: &StepKernel) -> DenseMatrix {
        let n = self.n;
        let mut out = vec![0.0; n * n];
        for r in 0..n {
            let src = &self.data[r * n..(r + 1) * n];
            let dst = &mut out[r * n..(r + 1) * n];
            for (j, &x) in src.iter().enumerate() {
                if x == 0.0 {
                    continue;
                }
                match k.rows.get(j) {
                    Some(row) => {
                        for e in row {
                            dst[e.col as usize] += x * e.weight;
                        }
                    }
                    None => dst[j] += x,
                }
            }
        }
        DenseMatrix { n, data: out }
    }

    /// `kernel * self`.
    pub fn kernel_mul(k: &StepKernel, rhs: &DenseMatrix) -> DenseMatrix {
        let n = rhs.n;
        let mut out = vec![0.0; n * n];
        for i in 0..n {
            let dst = &mut out[i * n..(i + 1) * n];
            match k.rows.get(i) {
                Some(row) => {
                    for e in row {
                        if e.weight == 0.0 {
                            continue;
                        }
                        let src = &rhs.data[e.col as usize * n..(e.col as usize + 1) * n];
                        for (d, s) in dst.iter_mut().zip(src) {
                            *d += e.weight * s;
                        }
                    }
                }
                None => dst.copy_from_slice(&rhs.data[i * n..(i + 1) * n]),
            }
        }
        DenseMatrix { n, data: out }
    }

    pub fn mul(&self, rhs: &DenseMatrix) -> DenseMatrix {
        let n = self.n;
        let mut out = vec![0.0; n * n];
        for i in 0..n {
            for k in 0..n {
                let a = self.data[i * n + k];
                if a == 0.0 {
                    continue;
                }
                let src = &rhs.data[k * n..(k + 1) * n];
                for (d, s) in out[i * n..(i + 1) * n].iter_mut().zip(src) {
                    *d += a * s;
                }
            }
        }
        DenseMatrix { n, data: out }
    }

    pub fn max_abs_diff(&self, other: &DenseMatrix) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Running product of the kernels in the ring, kept without inverting any
/// kernel: `front` holds suffix products of the oldest block of kernels,
/// `back` the product of kernels pushed since that block was formed.
#[derive(Debug, Clone)]
struct ProductTracker {
    front: VecDeque<DenseMatrix>,
    back: DenseMatrix,
}

impl ProductTracker {
    fn product(&self) -> DenseMatrix {
        match self.front.front() {
            Some(f) => f.mul(&self.back),
            None => self.back.clone(),
        }
    }
}

/// The last `span` kernels of one class and the marginals between them.
///
/// With kernels `T_{m-n} .. T_m` and tail marginal `M(t_{m-n-1})`, the
/// joint law of the window one ring span ago and the window now is
/// `M(t_{m-n-1})(i) * S(i, j)` with `S = T_{m-n} ... T_m`.
#[derive(Debug, Clone)]
pub struct KernelRing {
    span: usize,
    nodes: usize,
    kernels: VecDeque<StepKernel>,
    marginals: VecDeque<Vec<f64>>,
    tracker: Option<ProductTracker>,
}

impl KernelRing {
    /// Ring filled with identity kernels: before time zero windows do not
    /// move, so the joint law is the diagonal of the initial measure.
    pub fn new(initial: Vec<f64>, nodes: usize, span: usize, track_product: bool) -> Self {
        assert!(span >= 1, "kernel ring needs at least one slot");
        let kernels = (0..span).map(|_| StepKernel::identity(nodes)).collect();
        let marginals = (0..=span).map(|_| initial.clone()).collect();
        KernelRing {
            span,
            nodes,
            kernels,
            marginals,
            tracker: track_product.then(|| ProductTracker {
                front: VecDeque::new(),
                back: DenseMatrix::identity(nodes),
            }),
        }
    }

    pub fn span(&self) -> usize {
        self.span
    }

    pub fn kernels(&self) -> impl Iterator<Item = &StepKernel> {
        self.kernels.iter()
    }

    /// Marginal before the oldest kernel.
    pub fn tail(&self) -> &[f64] {
        self.marginals.front().expect("ring holds marginals")
    }

    /// Marginal after the newest kernel.
    pub fn current(&self) -> &[f64] {
        self.marginals.back().expect("ring holds marginals")
    }

    /// Apply `kernel` to the current marginal, push it and drop the oldest.
    pub fn push(&mut self, kernel: StepKernel) -> &[f64] {
        let mut next = kernel.apply(self.current());
        fold_negligible_tail(&mut next);
        if let Some(tr) = &mut self.tracker {
            tr.back = tr.back.mul_kernel(&kernel);
        }
        self.kernels.push_back(kernel);
        self.marginals.push_back(next);
        while self.kernels.len() > self.span {
            if let Some(tr) = &mut self.tracker {
                if tr.front.is_empty() {
                    // Rebuild: suffix products of every kernel currently held.
                    let mut suffix = VecDeque::with_capacity(self.kernels.len());
                    let mut acc = DenseMatrix::identity(self.nodes);
                    for k in self.kernels.iter().rev() {
                        acc = DenseMatrix::kernel_mul(k, &acc);
                        suffix.push_front(acc.clone());
                    }
                    tr.front = suffix;
                    tr.back = DenseMatrix::identity(self.nodes);
                }
                tr.front.pop_front();
            }
            self.kernels.pop_front();
            self.marginals.pop_front();
        }
        self.current()
    }

    /// `E[window one span ago | window now = w_j]` for every node of the
    /// current marginal, by Bayes' rule on the joint law. Nodes without
    /// mass fall back to `w_j`.
    pub fn conditional_expectation(&self, dw: f64) -> Vec<f64> {
        let tail = self.tail();
        let mut num: Vec<f64> = tail
            .iter()
            .enumerate()
            .map(|(i, m)| m * i as f64 * dw)
            .collect();
        let mut den = tail.to_vec();
        for k in &self.kernels {
            num = k.apply(&num);
            den = k.apply(&den);
        }
        bayes_ratio(&num, &den, self.current().len(), dw)
    }

    /// Maintained product `S`, if tracking was requested.
    pub fn product(&self) -> Option<DenseMatrix> {
        self.tracker.as_ref().map(ProductTracker::product)
    }

    /// Product of the ring's kernels, multiplied out from scratch.
    pub fn explicit_product(&self) -> DenseMatrix {
        self.kernels
            .iter()
            .fold(DenseMatrix::identity(self.nodes), |acc, k| {
                acc.mul_kernel(k)
            })
    }

    /// Largest elementwise gap between maintained and explicit products.
    pub fn product_error(&self) -> Option<f64> {
        self.product()
            .map(|s| s.max_abs_diff(&self.explicit_product()))
    }

    /// Conditional expectation computed from the maintained product.
    pub fn conditional_expectation_from_product(&self, dw: f64) -> Option<Vec<f64>> {
        let s = self.product()?;
        let n = self.nodes;
        let mut num = vec![0.0; n];
        let mut den = vec![0.0; n];
        for (i, &m) in self.tail().iter().enumerate() {
            if m == 0.0 {
                continue;
            }
            for j in 0..n {
                let x = m * s.get(i, j);
                num[j] += x * i as f64 * dw;
                den[j] += x;
            }
        }
        Some(bayes_ratio(&num, &den, self.current().len(), dw))
    }
}

fn bayes_ratio(num: &[f64], den: &[f64], len: usize, dw: f64) -> Vec<f64> {
    (0..len)
        .map(|j| {
            let d = den.get(j).copied().unwrap_or(0.0);
            if d > 0.0 {
                num[j] / d
            } else {
                j as f64 * dw
            }
        })
        .collect()
}

/// Fold trailing negligible masses into the node below.
pub(crate) fn fold_negligible_tail(v: &mut Vec<f64>) {
    while v.len() > 1 {
        let last = *v.last().unwrap();
        if last > NEGLIGIBLE_MASS {
            break;
        }
        v.pop();
        *v.last_mut().unwrap() += last;
    }
}
