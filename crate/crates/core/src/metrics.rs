//! Distances between the particle system and the limit.

use serde::{Deserialize, Serialize};

use crate::delay::QueuePath;
use crate::error::{Error, Result};
use crate::meanfield::WindowMeasure;

/// A probability law on window sizes that test functions can be
/// integrated against.
pub trait WindowLaw {
    fn expect(&self, f: &dyn Fn(f64) -> f64) -> f64;
}

/// Equally weighted samples, e.g. an empirical class measure.
impl WindowLaw for [f64] {
    fn expect(&self, f: &dyn Fn(f64) -> f64) -> f64 {
        if self.is_empty() {
            return 0.0;
        }
        self.iter().map(|&w| f(w)).sum::<f64>() / self.len() as f64
    }
}

impl WindowLaw for Vec<f64> {
    fn expect(&self, f: &dyn Fn(f64) -> f64) -> f64 {
        self.as_slice().expect(f)
    }
}

/// `(position, mass)` atoms.
impl WindowLaw for [(f64, f64)] {
    fn expect(&self, f: &dyn Fn(f64) -> f64) -> f64 {
        self.iter().map(|&(w, m)| m * f(w)).sum()
    }
}

impl WindowLaw for WindowMeasure {
    fn expect(&self, f: &dyn Fn(f64) -> f64) -> f64 {
        self.integrate(f)
    }
}

/// `sum_k min(1, |<f_k, mu> - <f_k, nu>|) 2^-k` with `f_k(w) = exp(-w / k)`,
/// `k = 1..=k_max`. Every `f_k` takes values in `(0, 1]` on `[0, inf)` and
/// is Lipschitz with constant `1 / k`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WeakMetric {
    pub k_max: usize,
}

impl Default for WeakMetric {
    fn default() -> Self {
        WeakMetric { k_max: 16 }
    }
}

impl WeakMetric {
    pub fn test_function(k: usize, w: f64) -> f64 {
        (-w / k as f64).exp()
    }

    /// `<f_k, law>` for `k = 1..=k_max`.
    pub fn moments<L: WindowLaw + ?Sized>(&self, law: &L) -> Vec<f64> {
        (1..=self.k_max)
            .map(|k| law.expect(&|w| Self::test_function(k, w)))
            .collect()
    }

    pub fn distance<A, B>(&self, a: &A, b: &B) -> f64
    where
        A: WindowLaw + ?Sized,
        B: WindowLaw + ?Sized,
    {
        self.moments(a)
            .into_iter()
            .zip(self.moments(b))
            .enumerate()
            .map(|(i, (x, y))| (x - y).abs().min(1.0) * 0.5f64.powi(i as i32 + 1))
            .sum()
    }
}

fn common_span(a: &QueuePath, b: &QueuePath) -> Result<(f64, f64)> {
    let (Some(ea), Some(eb)) = (a.last_time(), b.last_time()) else {
        return Err(Error::usage("path distance needs non-empty paths"));
    };
    let lo = a.start().max(b.start());
    let hi = ea.min(eb);
    if lo > hi {
        return Err(Error::usage(format!(
            "paths do not overlap: [{}, {ea}] and [{}, {eb}]",
            a.start(),
            b.start()
        )));
    }
    Ok((lo, hi))
}

/// Every sample time of either path inside `[lo, hi]`, plus both ends.
fn union_knots(a: &QueuePath, b: &QueuePath, lo: f64, hi: f64) -> Vec<f64> {
    let mut knots: Vec<f64> = a
        .times()
        .chain(b.times())
        .filter(|&t| t > lo && t < hi)
        .collect();
    knots.push(lo);
    knots.push(hi);
    knots.sort_by(f64::total_cmp);
    knots.dedup();
    knots
}

/// `sup_t |Q_A(t) - Q_B(t)|` over the common time span. Both queues are
/// piecewise linear, so the supremum is attained on the union of their
/// sample times.
pub fn path_distance(a: &QueuePath, b: &QueuePath) -> Result<f64> {
    let (lo, hi) = common_span(a, b)?;
    union_knots(a, b, lo, hi)
        .into_iter()
        .map(|t| Ok((a.queue_at(t)? - b.queue_at(t)?).abs()))
        .try_fold(0.0, |acc: f64, d: Result<f64>| Ok(acc.max(d?)))
}

/// Times at which the queue of `path` reaches or leaves `level`.
fn level_crossings(path: &QueuePath, level: f64) -> Vec<f64> {
    let tol = 1e-12 * level.max(1.0);
    let mut out = Vec::new();
    let mut above = None;
    for i in 0..path.len() {
        let now = path.queue(i) >= level - tol;
        if above.is_some_and(|prev| prev != now) {
            out.push(path.time(i));
        }
        above = Some(now);
    }
    out
}

/// `sup_t |K_A(t) - K_B(t)|` over the common span, ignoring times within
/// `guard` (exclusive) of any moment either queue reaches or leaves `level`, where the
/// loss probability jumps.
pub fn loss_distance(a: &QueuePath, b: &QueuePath, level: f64, guard: f64) -> Result<f64> {
    let (lo, hi) = common_span(a, b)?;
    let mut jumps = level_crossings(a, level);
    jumps.extend(level_crossings(b, level));
    jumps.sort_by(f64::total_cmp);
    let mut worst: f64 = 0.0;
    for t in union_knots(a, b, lo, hi) {
        let i = jumps.partition_point(|&j| j <= t - guard);
        if jumps.get(i).is_some_and(|&j| j < t + guard) {
            continue;
        }
        worst = worst.max((a.lookup(t)?.1 - b.lookup(t)?.1).abs());
    }
    Ok(worst)
}

/// Root-mean-square sup-norm queue error per population size and its
/// log-log slope.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingFit {
    pub flows: Vec<usize>,
    pub rms: Vec<f64>,
    pub slope: f64,
    pub intercept: f64,
}

/// Least-squares line through `(x, y)`: `(slope, intercept)`.
fn fit_line(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

/// RMS over seeds of `path_distance(Q^N, Q)` for each `N`, and the slope
/// of `log RMS` against `log N`. Needs at least three population sizes
/// with at least five runs each.
pub fn fluctuation_scaling(
    runs: &[(usize, Vec<QueuePath>)],
    reference: &QueuePath,
) -> Result<ScalingFit> {
    if runs.len() < 3 {
        return Err(Error::usage(format!(
            "scaling needs at least 3 population sizes, got {}",
            runs.len()
        )));
    }
    if let Some((n, paths)) = runs.iter().find(|(_, p)| p.len() < 5) {
        return Err(Error::usage(format!(
            "scaling needs at least 5 runs per population size, N = {n} has {}",
            paths.len()
        )));
    }
    let mut flows = Vec::with_capacity(runs.len());
    let mut rms = Vec::with_capacity(runs.len());
    for (n, paths) in runs {
        let sq: f64 = paths
            .iter()
            .map(|p| path_distance(p, reference).map(|d| d * d))
            .sum::<Result<f64>>()?;
        flows.push(*n);
        rms.push((sq / paths.len() as f64).sqrt());
    }
    let (slope, intercept) = if rms.iter().all(|&r| r > 0.0) {
        let x: Vec<f64> = flows.iter().map(|&n| (n as f64).ln()).collect();
        let y: Vec<f64> = rms.iter().map(|r| r.ln()).collect();
        fit_line(&x, &y)
    } else {
        (f64::NAN, f64::NAN)
    };
    Ok(ScalingFit {
        flows,
        rms,
        slope,
        intercept,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::CounterRng;
    use proptest::prelude::*;

    fn path_from(t0: f64, dt: f64, q: &[f64]) -> QueuePath {
        let mut p = QueuePath::uniform(t0, dt, (q[0], 0.0), 50.0).unwrap();
        for (i, &v) in q.iter().enumerate() {
            p.record(t0 + i as f64 * dt, v, 0.0).unwrap();
        }
        p
    }

    #[test]
    fn identical_laws_are_at_distance_zero() {
        let s = vec![1.0, 2.0, 3.5];
        assert_eq!(WeakMetric::default().distance(&s, &s), 0.0);
    }

    #[test]
    fn point_masses_closed_form() {
        let m = WeakMetric::default();
        for w in [0.5, 3.0, 40.0] {
            let expect: f64 = (1..=16)
                .map(|k| (1.0 - (-w / k as f64).exp()).min(1.0) * 0.5f64.powi(k))
                .sum();
            let got = m.distance(&vec![0.0], &vec![w]);
            assert!((got - expect).abs() < 1e-15, "{got} vs {expect}");
        }
        // Far apart: every term saturates near 2^-k.
        let far = m.distance(&vec![0.0], &vec![1e6]);
        assert!((far - (1.0 - 0.5f64.powi(16))).abs() < 1e-6);
    }

    #[test]
    fn grid_measure_and_samples_agree() {
        let grid = WindowMeasure {
            class_id: 0,
            time: 0.0,
            dw: 0.5,
            nodes: 10,
            weights: vec![0.0, 0.5, 0.0, 0.5],
        };
        let samples = vec![0.5, 1.5];
        assert!(WeakMetric::default().distance(&grid, &samples) < 1e-15);
    }

    #[test]
    fn empirical_laws_approach_their_source() {
        // Exponential(1/5) samples: <f_k, nu> = 1 / (1 + 5 / k).
        let rng = CounterRng::new(11);
        let m = WeakMetric::default();
        let truth: Vec<f64> = (1..=16).map(|k| 1.0 / (1.0 + 5.0 / k as f64)).collect();
        let dist = |n: usize, rep: u64| {
            let s: Vec<f64> = (0..n)
                .map(|i| -5.0 * (1.0 - rng.uniform(rep, i as u64, n as u64)).ln())
                .collect();
            m.moments(&s)
                .iter()
                .zip(&truth)
                .enumerate()
                .map(|(i, (a, b))| (a - b).abs().min(1.0) * 0.5f64.powi(i as i32 + 1))
                .sum::<f64>()
        };
        let avg = |n: usize| (0..20).map(|r| dist(n, r)).sum::<f64>() / 20.0;
        let (a, b, c) = (avg(100), avg(1000), avg(10000));
        assert!(a > b && b > c, "{a} {b} {c}");
    }

    #[test]
    fn path_distance_basics() {
        let a = path_from(0.0, 0.1, &[1.0, 2.0, 3.0, 2.0]);
        assert_eq!(path_distance(&a, &a).unwrap(), 0.0);
        let b = path_from(0.0, 0.1, &[1.25, 2.25, 3.25, 2.25]);
        assert!((path_distance(&a, &b).unwrap() - 0.25).abs() < 1e-15);
        let c = path_from(1.0, 0.1, &[0.0, 0.0]);
        assert!(matches!(path_distance(&a, &c), Err(Error::Usage(_))));
    }

    #[test]
    fn mixed_resolution_matches_dense_evaluation() {
        let coarse: Vec<f64> = (0..11).map(|i| ((i * 7) % 5) as f64 * 0.3).collect();
        let fine: Vec<f64> = (0..31).map(|i| (i as f64 * 0.37).sin().abs()).collect();
        let a = path_from(0.0, 0.3, &coarse);
        let b = path_from(0.0, 0.1, &fine);
        let got = path_distance(&a, &b).unwrap();
        // Dense oracle: both are linear between multiples of 0.1 in [0, 3].
        let mut dense: f64 = 0.0;
        for i in 0..=3000 {
            let t = i as f64 * 1e-3;
            dense = dense.max((a.queue_at(t).unwrap() - b.queue_at(t).unwrap()).abs());
        }
        assert!((got - dense).abs() < 1e-12, "{got} vs {dense}");
    }

    #[test]
    fn loss_distance_skips_jumps() {
        let mut a = QueuePath::uniform(0.0, 0.1, (0.0, 0.0), 50.0).unwrap();
        let mut b = QueuePath::uniform(0.0, 0.1, (0.0, 0.0), 50.0).unwrap();
        for i in 0..20 {
            let t = i as f64 * 0.1;
            a.record(
                t,
                if i >= 10 { 5.0 } else { 4.0 },
                if i >= 10 { 0.3 } else { 0.04 },
            )
            .unwrap();
            b.record(
                t,
                if i >= 11 { 5.0 } else { 4.0 },
                if i >= 11 { 0.3 } else { 0.04 },
            )
            .unwrap();
        }
        assert!((loss_distance(&a, &b, 5.0, 0.0).unwrap() - 0.26).abs() < 1e-12);
        assert_eq!(loss_distance(&a, &b, 5.0, 0.2).unwrap(), 0.0);
    }

    #[test]
    fn scaling_of_identical_runs_is_zero() {
        let r = path_from(0.0, 0.1, &[1.0, 2.0, 1.0]);
        let runs: Vec<(usize, Vec<QueuePath>)> = [100, 200, 400]
            .iter()
            .map(|&n| (n, vec![r.clone(); 5]))
            .collect();
        let fit = fluctuation_scaling(&runs, &r).unwrap();
        assert_eq!(fit.rms, vec![0.0; 3]);
    }

    #[test]
    fn synthetic_root_n_noise_has_slope_minus_half() {
        let rng = CounterRng::new(3);
        let base: Vec<f64> = (0..200).map(|i| 3.0 + (i as f64 * 0.05).sin()).collect();
        let reference = path_from(0.0, 0.05, &base);
        let runs: Vec<(usize, Vec<QueuePath>)> = [100usize, 400, 1600, 6400]
            .iter()
            .map(|&n| {
                let paths = (0..40)
                    .map(|s| {
                        // Same noise shape at every N, scaled by 1/sqrt(N).
                        let xi = 2.0 * rng.uniform(s, 0, 0) - 1.0;
                        let q: Vec<f64> = base
                            .iter()
                            .enumerate()
                            .map(|(i, &v)| v + xi * (i as f64 * 0.1).cos() / (n as f64).sqrt())
                            .collect();
                        path_from(0.0, 0.05, &q)
                    })
                    .collect();
                (n, paths)
            })
            .collect();
        let fit = fluctuation_scaling(&runs, &reference).unwrap();
        assert!((fit.slope + 0.5).abs() < 1e-9, "{}", fit.slope);
    }

    #[test]
    fn scaling_needs_enough_runs() {
        let r = path_from(0.0, 0.1, &[1.0, 2.0]);
        let two: Vec<(usize, Vec<QueuePath>)> =
            vec![(1, vec![r.clone(); 5]), (2, vec![r.clone(); 5])];
        assert!(fluctuation_scaling(&two, &r).is_err());
        let few: Vec<(usize, Vec<QueuePath>)> = vec![
            (1, vec![r.clone(); 5]),
            (2, vec![r.clone(); 4]),
            (3, vec![r.clone(); 5]),
        ];
        assert!(fluctuation_scaling(&few, &r).is_err());
    }

    fn law() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(0.0f64..50.0, 1..20)
    }

    proptest! {
        #[test]
        fn weak_metric_is_a_bounded_symmetric_metric(a in law(), b in law(), c in law()) {
            let m = WeakMetric::default();
            let (ab, ba) = (m.distance(&a, &b), m.distance(&b, &a));
            prop_assert_eq!(ab, ba);
            prop_assert!(ab <= 1.0);
            prop_assert!(m.distance(&a, &c) <= ab + m.distance(&b, &c) + 1e-15);
        }

        #[test]
        fn path_distance_triangle(
            x in prop::collection::vec(0.0f64..5.0, 4..12),
            y in prop::collection::vec(0.0f64..5.0, 4..12),
            z in prop::collection::vec(0.0f64..5.0, 4..12),
        ) {
            let a = path_from(0.0, 1.0 / (x.len() - 1) as f64, &x);
            let b = path_from(0.0, 1.0 / (y.len() - 1) as f64, &y);
            let c = path_from(0.0, 1.0 / (z.len() - 1) as f64, &z);
            let ab = path_distance(&a, &b).unwrap();
            prop_assert!(path_distance(&a, &c).unwrap() <= ab + path_distance(&b, &c).unwrap() + 1e-12);
            prop_assert_eq!(ab, path_distance(&b, &a).unwrap());
        }
    }
}
