//! Acceptance criteria, one pass/fail line each. Runs as a plain binary so
//! that every line is printed; exits non-zero if any criterion fails.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use serde_json::Value;
use tcp_meanfield::harness::{emit_plotdata, execute, parse_spec, ResultBundle};
use tcp_meanfield::meanfield::{self, MeanFieldOptions, MeanFieldState};
use tcp_meanfield::particle::{self, SimOptions};
use tcp_meanfield::{
    fixed_point, rtt_at_arrival, FlowClass, InitialLaw, ModelConfig, QueuePath, RedConfig, Result,
};

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Result<Verdict> {
    Ok(Verdict {
        pass,
        detail: detail.into(),
    })
}

/// The reference experiment in absolute units: 200 flows sharing a
/// 10433 pkt/s link with a 1000 packet RED threshold.
fn reference_document(mode: &str, extra: &str) -> String {
    format!(
        r#"{{
            "mode": "{mode}",
            "units": "absolute",
            "reference_flows": 200,
            "horizon": 60,
            "red": {{ "q_max": 1000, "p_max": 0.05, "link_rate": 10433 }},
            "classes": [ {{ "delay": 0.1, "initial": {{ "uniform": [0, 20] }} }} ]{sep}
            {extra}
        }}"#,
        sep = if extra.is_empty() { "" } else { "," }
    )
}

fn fmt_list(v: &[f64]) -> String {
    let items: Vec<String> = v.iter().map(|x| format!("{x:.4}")).collect();
    format!("[{}]", items.join(", "))
}

fn f64s(v: &Value) -> Vec<f64> {
    v.as_array()
        .map(|a| a.iter().filter_map(Value::as_f64).collect())
        .unwrap_or_default()
}

fn convergence_experiment() -> Result<ResultBundle> {
    let spec = parse_spec(&reference_document(
        "compare",
        r#""flows": [200, 400, 800], "seeds": [0, 1, 2, 3, 4], "snapshot_times": [20, 40, 60]"#,
    ))?;
    execute(&spec)
}

fn mean_field_convergence(bundle: &ResultBundle) -> Result<Verdict> {
    let rms: Vec<f64> = bundle.summary["rms"]
        .as_array()
        .unwrap()
        .iter()
        .map(|r| r["rms_queue_distance"].as_f64().unwrap())
        .collect();
    let slope = bundle.summary["scaling"]["slope"]
        .as_f64()
        .unwrap_or(f64::NAN);
    let decreasing = rms.windows(2).all(|w| w[1] < w[0]);
    let in_band = (-0.8..=-0.2).contains(&slope);
    verdict(
        decreasing && in_band,
        format!(
            "RMS sup|Q^N - Q| at N = 200, 400, 800: {}; strictly decreasing: {decreasing}; slope {slope:.3} in [-0.8, -0.2]: {in_band}",
            fmt_list(&rms)
        ),
    )
}

fn measure_convergence(bundle: &ResultBundle) -> Result<Verdict> {
    let weak = bundle.summary["weak"].as_array().unwrap();
    let at = |n: u64| -> Vec<f64> {
        let entry = weak.iter().find(|w| w["flows"] == n).unwrap();
        entry["mean_distance"]
            .as_array()
            .unwrap()
            .iter()
            .map(|per_class| per_class[0].as_f64().unwrap())
            .collect()
    };
    let (d200, d800) = (at(200), at(800));
    let times = f64s(&weak[0]["times"]);
    let pass = d800.iter().zip(&d200).all(|(a, b)| a < b);
    verdict(
        pass,
        format!(
            "mean weak distance at t = {}: N = 200 {}, N = 800 {}",
            fmt_list(&times),
            fmt_list(&d200),
            fmt_list(&d800)
        ),
    )
}

fn gentle_to_red() -> Result<Verdict> {
    let spec = parse_spec(&reference_document(
        "gentle-sweep",
        r#""flows": [400], "seeds": [1], "deltas": [200, 100, 50, 25]"#,
    ))?;
    let bundle = execute(&spec)?;
    let d = f64s(&bundle.summary["runs"][0]["queue_distance_to_red"]);
    let inversions: Vec<f64> = d
        .windows(2)
        .filter(|w| w[1] >= w[0])
        .map(|w| w[1] / w[0] - 1.0)
        .collect();
    let pass = inversions.is_empty() || (inversions.len() == 1 && inversions[0] <= 0.10);
    verdict(
        pass,
        format!(
            "sup|Q^delta - Q^RED| for delta = 1, 0.5, 0.25, 0.125 pkt/flow: {}; inversions: {}",
            fmt_list(&d),
            inversions.len()
        ),
    )
}

fn conservation(bundle: &ResultBundle) -> Result<Verdict> {
    let diag = &bundle.summary["meanfield"]["diagnostics"];
    let mass = diag["mass_error"].as_f64().unwrap();
    let rows = diag["row_error"].as_f64().unwrap();

    // The dense product is quadratic in the grid size; track it on a
    // coarser grid over the same horizon.
    let spec = parse_spec(&reference_document("solve", ""))?;
    let opts = MeanFieldOptions {
        dw: spec.dw * 10.0,
        track_product: true,
        ..MeanFieldOptions::default_for(&spec.model)
    };
    let tracked = meanfield::solve(&spec.model, &opts)?.diagnostics;
    let product = tracked.product_error.unwrap_or(f64::INFINITY);
    let pass = mass <= 1e-6
        && rows <= 1e-12
        && tracked.mass_error <= 1e-6
        && tracked.row_error <= 1e-12
        && product <= 1e-9;
    verdict(
        pass,
        format!(
            "default grid: mass {mass:.2e}, rows {rows:.2e}; tracked grid ({} steps): mass {:.2e}, rows {:.2e}, product {product:.2e}",
            tracked.steps, tracked.mass_error, tracked.row_error
        ),
    )
}

/// Root of the piecewise linear `s + delay + Q(s)/L - t`, found by scanning
/// a grid ten times finer than the path and interpolating in the
/// bracketing cell. The fine grid contains every path knot, so `g` is
/// linear on each cell.
fn brute_force_departure(path: &QueuePath, t: f64, delay: f64, dt: f64) -> f64 {
    let link = path.link_rate();
    let g = |s: f64| s + delay + path.queue_at(s).unwrap() / link - t;
    let fine = dt / 10.0;
    let hi = t - delay;
    let mut k = ((hi - path.peak() / link) / fine).floor() as i64 - 1;
    let mut s = k as f64 * fine;
    let mut gs = g(s);
    while s < hi {
        k += 1;
        let next = (k as f64 * fine).min(hi);
        let gn = g(next);
        if gs <= 0.0 && gn >= 0.0 {
            return if gn == gs {
                s
            } else {
                s - gs * (next - s) / (gn - gs)
            };
        }
        s = next;
        gs = gn;
    }
    hi
}

fn delay_solver() -> Result<Verdict> {
    let mut rng = StdRng::seed_from_u64(7);
    let (mut worst_residual, mut worst_gap): (f64, f64) = (0.0, 0.0);
    for _ in 0..1000 {
        let link = rng.gen_range(5.0..100.0);
        let delay = rng.gen_range(0.01..0.3);
        let dt = rng.gen_range(0.002..0.02);
        let q0 = rng.gen_range(0.0..10.0);
        let mut path = QueuePath::uniform(0.0, dt, (q0, 0.0), link)?;
        let mut q: f64 = q0;
        let samples = 400;
        for i in 0..samples {
            path.record(i as f64 * dt, q, 0.0)?;
            // Slopes stay below the link rate, so the root is unique.
            q = (q + dt * rng.gen_range(-0.9..0.9) * link).max(0.0);
        }
        let end = (samples - 1) as f64 * dt;
        let t = rng.gen_range(0.0..end) + delay;
        let sol = rtt_at_arrival(&path, t, delay)?;
        let s = sol.departure;
        let residual = (s + delay + path.queue_at(s)? / link - t).abs();
        let brute = brute_force_departure(&path, t, delay, dt);
        worst_residual = worst_residual.max(residual);
        worst_gap = worst_gap.max((brute - s).abs());
    }
    verdict(
        worst_residual <= 1e-9 && worst_gap <= 1e-6,
        format!("1000 paths: worst residual {worst_residual:.2e} s, worst gap to brute force {worst_gap:.2e} s"),
    )
}

fn small_instance_oracle() -> Result<Verdict> {
    // a(T) = 2 + 0.5 / 0.1 = 7 with dw = 7/4 gives five nodes.
    let cfg = ModelConfig {
        classes: vec![FlowClass {
            delay: 0.1,
            weight: 1.0,
            initial: InitialLaw::Uniform { lo: 0.0, hi: 2.0 },
        }],
        red: RedConfig::red(1.0, 3.0, 0.5, 6.0, 10.0),
        w_max: 2.0,
        q0: 2.0,
        horizon: 0.5,
    };
    let opts = MeanFieldOptions {
        substeps: 3,
        dw: 1.75,
        track_product: true,
        ..MeanFieldOptions::default_for(&cfg)
    };
    let mut state = MeanFieldState::init(&cfg, &opts)?;
    assert_eq!(state.nodes(), 5);
    let dw = state.dw();
    let (mut worst_e, mut worst_s, mut checks): (f64, f64, usize) = (0.0, 0.0, 0);
    while state.time() < cfg.horizon {
        state.advance()?;
        let ring = state.ring(0);
        let kernels: Vec<_> = ring.kernels().collect();
        let tail = ring.tail();
        let n = state.nodes();
        // Every path i0 -> i1 -> ... -> i_s through the ring.
        let mut product = vec![vec![0.0; n]; n];
        let paths = n.pow(kernels.len() as u32 + 1);
        for code in 0..paths {
            let mut idx = Vec::with_capacity(kernels.len() + 1);
            let mut c = code;
            for _ in 0..=kernels.len() {
                idx.push(c % n);
                c /= n;
            }
            let p: f64 = kernels
                .iter()
                .enumerate()
                .map(|(k, kern)| kern.entry(idx[k], idx[k + 1]))
                .product();
            product[idx[0]][idx[kernels.len()]] += p;
        }
        let mut num = vec![0.0; n];
        let mut den = vec![0.0; n];
        for i in 0..n {
            let m = tail.get(i).copied().unwrap_or(0.0);
            for j in 0..n {
                num[j] += m * product[i][j] * i as f64 * dw;
                den[j] += m * product[i][j];
            }
        }
        let e = state.conditional_expectation(0)?;
        for (j, &ej) in e.iter().enumerate() {
            let oracle = if den[j] > 0.0 {
                num[j] / den[j]
            } else {
                j as f64 * dw
            };
            worst_e = worst_e.max((ej - oracle).abs());
        }
        let s = ring.product().expect("product tracked");
        for i in 0..n {
            for j in 0..n {
                worst_s = worst_s.max((s.get(i, j) - product[i][j]).abs());
            }
        }
        checks += 1;
    }
    verdict(
        worst_e <= 1e-14 && worst_s <= 1e-15,
        format!("{checks} steps on 5 nodes: conditional expectation gap {worst_e:.2e}, product gap {worst_s:.2e}"),
    )
}

fn interpolate(ts: &[f64], ys: &[f64], t: f64) -> f64 {
    let i = ts.partition_point(|&x| x <= t);
    if i == 0 {
        return ys[0];
    }
    if i == ts.len() {
        return ys[i - 1];
    }
    let a = (t - ts[i - 1]) / (ts[i] - ts[i - 1]);
    ys[i - 1] + a * (ys[i] - ys[i - 1])
}

fn transport_only() -> Result<Verdict> {
    // No losses anywhere: p_max = 0 and a threshold the queue never reaches.
    // The link is slow enough that a queue builds after 0.3 s, which makes
    // the RTT time dependent and the discretisation error visible.
    let cfg = ModelConfig {
        classes: vec![FlowClass {
            delay: 0.1,
            weight: 1.0,
            initial: InitialLaw::Point(2.0),
        }],
        red: RedConfig::red(1e5, 1e6, 0.0, 2e6, 50.0),
        w_max: 2.0,
        q0: 0.0,
        horizon: 3.0,
    };
    let mut errors = Vec::new();
    let mut worst_slope: f64 = 0.0;
    for refine in [1.0, 2.0] {
        let sim = SimOptions {
            losses: false,
            ..SimOptions::new(2e-3 / refine)
        };
        let p = particle::run(&cfg, 1, 0, &sim)?;
        let opts = MeanFieldOptions {
            substeps: (8.0 * refine) as usize,
            ..MeanFieldOptions::default_for(&cfg)
        };
        let m = meanfield::solve(&cfg, &opts)?.record;
        let err = p
            .times
            .iter()
            .zip(&p.mean_window[0])
            .map(|(&t, &w)| (w - interpolate(&m.times, &m.mean_window[0], t)).abs())
            .fold(0.0, f64::max);
        errors.push(err);
        // Empty queue up to 0.3 s: slope exactly 1/T_c.
        for r in [&p, &m] {
            let i = r.times.partition_point(|&t| t <= 0.25) - 1;
            let slope = (r.mean_window[0][i] - r.mean_window[0][0]) / r.times[i];
            worst_slope = worst_slope.max((slope - 10.0).abs());
        }
    }
    let ratio = errors[0] / errors[1];
    verdict(
        (1.5..=3.0).contains(&ratio) && worst_slope <= 1e-9,
        format!(
            "sup|Wbar_particle - Wbar_mf|: {:.3e} then {:.3e}, ratio {ratio:.3}; slope error while the queue is empty {worst_slope:.1e}",
            errors[0], errors[1]
        ),
    )
}

fn fixed_point_check() -> Result<Verdict> {
    let reference = parse_spec(&reference_document("fixed-point", ""))?.model;
    let fp = fixed_point(&reference)?;
    let residual = fp.residuals(&reference).into_iter().fold(0.0, f64::max);

    // Shallow drop curve and a long delay keep the loop far from
    // oscillation.
    let mut cfg = ModelConfig {
        classes: vec![FlowClass {
            delay: 0.2,
            weight: 1.0,
            initial: InitialLaw::Point(1.0),
        }],
        red: RedConfig::red(50.0 / 3.0, 50.0, 0.1, 100.0, 20.0),
        w_max: 1.0,
        q0: 0.0,
        horizon: 1.0,
    };
    let stable = fixed_point(&cfg)?;
    let stable_residual = stable.residuals(&cfg).into_iter().fold(0.0, f64::max);
    cfg.classes[0].initial = InitialLaw::Point(stable.mean_windows[0]);
    cfg.w_max = stable.mean_windows[0];
    cfg.q0 = stable.queue;
    cfg.horizon = 10.0 * stable.rtts[0];
    let sol = meanfield::solve(&cfg, &MeanFieldOptions::default_for(&cfg))?;
    let drift = sol
        .record
        .queue
        .iter()
        .map(|q| (q - stable.queue).abs() / stable.queue)
        .fold(0.0, f64::max);
    verdict(
        residual <= 1e-10 && stable_residual <= 1e-10 && drift <= 0.05,
        format!(
            "reference q* = {:.4}, K* = {:.4}, Wbar* = {:.3}, residual {residual:.1e}; stable case residual {stable_residual:.1e}, queue within {:.2}% of q* = {:.3} for 10 RTTs",
            fp.queue,
            fp.loss,
            fp.mean_windows[0],
            100.0 * drift,
            stable.queue
        ),
    )
}

fn read_csvs(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .map(|p| {
            (
                p.file_name().unwrap().to_string_lossy().into_owned(),
                fs::read(&p).unwrap(),
            )
        })
        .collect()
}

fn determinism() -> Result<Verdict> {
    let mut spec = parse_spec(&reference_document(
        "compare",
        r#""flows": [200, 400], "seeds": [0, 1]"#,
    ))?;
    spec.model.horizon = 5.0;
    spec.snapshot_times = vec![5.0];
    let mut outputs = Vec::new();
    for threads in [1, 8, 8] {
        spec.threads = Some(threads);
        let dir = tempfile::tempdir().unwrap();
        emit_plotdata(&execute(&spec)?, dir.path())?;
        outputs.push(read_csvs(dir.path()));
    }
    let same = outputs.windows(2).all(|w| w[0] == w[1]);
    verdict(
        same,
        format!(
            "{} CSV files compared across runs on 1, 8 and 8 threads: {}",
            outputs[0].len(),
            if same { "byte-identical" } else { "differ" }
        ),
    )
}

fn report(id: u8, name: &str, started: Instant, outcome: Result<Verdict>) -> bool {
    let secs = started.elapsed().as_secs_f64();
    match outcome {
        Ok(v) => {
            let tag = if v.pass { "PASS" } else { "FAIL" };
            println!("criterion {id} [{tag}] {name} ({secs:.1} s): {}", v.detail);
            v.pass
        }
        Err(e) => {
            println!("criterion {id} [FAIL] {name} ({secs:.1} s): error: {e}");
            false
        }
    }
}

fn main() -> ExitCode {
    let mut all = true;

    let started = Instant::now();
    let compare = convergence_experiment();
    match &compare {
        Ok(bundle) => {
            all &= report(
                1,
                "mean-field convergence",
                started,
                mean_field_convergence(bundle),
            );
            let started = Instant::now();
            all &= report(
                3,
                "measure convergence",
                started,
                measure_convergence(bundle),
            );
        }
        Err(e) => {
            for (id, name) in [(1, "mean-field convergence"), (3, "measure convergence")] {
                println!("criterion {id} [FAIL] {name}: error: {e}");
            }
            all = false;
        }
    }

    let t = Instant::now();
    all &= report(2, "gentle RED to RED", t, gentle_to_red());
    let t = Instant::now();
    all &= report(
        4,
        "conservation",
        t,
        compare
            .as_ref()
            .map_err(|e| tcp_meanfield::Error::Usage(e.to_string()))
            .and_then(conservation),
    );
    let t = Instant::now();
    all &= report(5, "delay solver oracle", t, delay_solver());
    let t = Instant::now();
    all &= report(6, "small-instance oracle", t, small_instance_oracle());
    let t = Instant::now();
    all &= report(7, "transport only", t, transport_only());
    let t = Instant::now();
    all &= report(8, "fixed point", t, fixed_point_check());
    let t = Instant::now();
    all &= report(9, "determinism", t, determinism());

    if all {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
