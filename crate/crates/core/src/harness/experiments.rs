//! Experiment runners. Each returns a [`ResultBundle`]; nothing is written
//! to disk here.

use log::{info, warn};
use rayon::prelude::*;
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::harness::bundle::{Metadata, ResultBundle, Series, Snapshot};
use crate::harness::spec::{ExperimentSpec, Mode};
use crate::meanfield::{self, MeanFieldOptions, MeanFieldSolution};
use crate::metrics::{fluctuation_scaling, loss_distance, path_distance, WeakMetric};
use crate::particle::{self, SimOptions};
use crate::record::RunRecord;
use crate::red::DropPolicy;

/// Run the experiment named by `spec.mode`, on a dedicated pool when
/// `spec.threads` is set.
pub fn execute(spec: &ExperimentSpec) -> Result<ResultBundle> {
    let run = || match spec.mode {
        Mode::Simulate => run_simulate(spec),
        Mode::Solve => run_solve(spec),
        Mode::Compare => run_compare(spec),
        Mode::GentleSweep => run_gentle_sweep(spec),
        Mode::FixedPoint => run_fixed_point(spec),
    };
    match spec.threads {
        None => run(),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::usage(format!("cannot build a pool of {n} threads: {e}")))?
            .install(run),
    }
}

fn expect_mode(spec: &ExperimentSpec, modes: &[Mode]) -> Result<()> {
    if modes.contains(&spec.mode) {
        Ok(())
    } else {
        Err(Error::usage(format!("spec has mode {}", spec.mode)))
    }
}

fn sim_options(spec: &ExperimentSpec) -> SimOptions {
    SimOptions {
        dt: spec.dt,
        snapshot_times: spec.snapshot_times.clone(),
        parallel: true,
        losses: true,
    }
}

fn mf_options(spec: &ExperimentSpec) -> MeanFieldOptions {
    MeanFieldOptions {
        substeps: spec.substeps,
        dw: spec.dw,
        closure: spec.closure,
        snapshot_times: spec.snapshot_times.clone(),
        track_product: false,
    }
}

fn run_name(n: usize, seed: u64, many_seeds: bool) -> String {
    if many_seeds {
        format!("fig_N{n}_seed{seed}")
    } else {
        format!("fig_N{n}")
    }
}

/// Every `(N, seed)` pair, N-major.
fn jobs(spec: &ExperimentSpec) -> Vec<(usize, u64)> {
    spec.flows
        .iter()
        .flat_map(|&n| spec.seeds.iter().map(move |&s| (n, s)))
        .collect()
}

/// Move the window snapshots out of a particle record.
fn particle_snapshots(source: &str, record: &mut RunRecord) -> Vec<Snapshot> {
    std::mem::take(&mut record.snapshots)
        .into_iter()
        .flat_map(|s| {
            let time = s.time;
            s.classes.into_iter().enumerate().map(move |(c, w)| {
                let m = 1.0 / w.len().max(1) as f64;
                Snapshot {
                    source: source.to_string(),
                    time,
                    class_id: c,
                    atoms: w.into_iter().map(|x| (x, m)).collect(),
                }
            })
        })
        .collect()
}

fn meanfield_snapshots(sol: &MeanFieldSolution) -> Vec<Snapshot> {
    sol.snapshots
        .iter()
        .flat_map(|s| {
            s.classes.iter().map(move |m| Snapshot {
                source: "fig_meanfield".into(),
                time: s.time,
                class_id: m.class_id,
                atoms: m.atoms().collect(),
            })
        })
        .collect()
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len().max(1) as f64
}

fn record_summary(r: &RunRecord) -> Value {
    json!({
        "mean_queue": mean(&r.queue),
        "max_queue": r.queue.iter().copied().fold(0.0, f64::max),
        "mean_loss": mean(&r.loss),
        "mean_rate": mean(&r.rate),
        "final_mean_windows": r.mean_window.iter().map(|c| c.last().copied().unwrap_or(f64::NAN)).collect::<Vec<_>>(),
        "rate_identity_gap": r.rate_identity_gap(),
    })
}

fn bundle(
    spec: &ExperimentSpec,
    series: Vec<Series>,
    snapshots: Vec<Snapshot>,
    summary: Value,
) -> ResultBundle {
    ResultBundle {
        metadata: Metadata::for_spec(spec),
        series,
        snapshots,
        summary,
    }
}

fn simulate_all(spec: &ExperimentSpec) -> Result<Vec<(usize, u64, RunRecord)>> {
    let opts = sim_options(spec);
    jobs(spec)
        .into_par_iter()
        .map(|(n, seed)| {
            info!("particle run N = {n}, seed = {seed}");
            particle::run(&spec.model, n, seed, &opts).map(|r| (n, seed, r))
        })
        .collect()
}

pub fn run_simulate(spec: &ExperimentSpec) -> Result<ResultBundle> {
    expect_mode(spec, &[Mode::Simulate])?;
    let many = spec.seeds.len() > 1;
    let mut series = Vec::new();
    let mut snapshots = Vec::new();
    let mut runs = Vec::new();
    for (n, seed, mut record) in simulate_all(spec)? {
        let name = run_name(n, seed, many);
        snapshots.extend(particle_snapshots(&name, &mut record));
        let mut s = record_summary(&record);
        s["flows"] = json!(n);
        s["seed"] = json!(seed);
        runs.push(s);
        series.push(Series { name, record });
    }
    Ok(bundle(spec, series, snapshots, json!({ "runs": runs })))
}

fn solve_summary(sol: &MeanFieldSolution) -> Value {
    let mut s = record_summary(&sol.record);
    s["diagnostics"] = json!(sol.diagnostics);
    s
}

pub fn run_solve(spec: &ExperimentSpec) -> Result<ResultBundle> {
    expect_mode(spec, &[Mode::Solve])?;
    let sol = meanfield::solve(&spec.model, &mf_options(spec))?;
    let summary = json!({ "meanfield": solve_summary(&sol) });
    let snapshots = meanfield_snapshots(&sol);
    let series = vec![Series {
        name: "fig_meanfield".into(),
        record: sol.record,
    }];
    Ok(bundle(spec, series, snapshots, summary))
}

/// Runs the mean-field solve once and the particle system for every
/// `(N, seed)`, then measures queue, loss and weak distances.
pub fn run_compare(spec: &ExperimentSpec) -> Result<ResultBundle> {
    expect_mode(spec, &[Mode::Compare])?;
    let (sol, runs) = rayon::join(
        || meanfield::solve(&spec.model, &mf_options(spec)),
        || simulate_all(spec),
    );
    let sol = sol?;
    let runs = runs?;
    let reference = sol.record.queue_path()?;
    let metric = WeakMetric { k_max: spec.k_max };
    let level = spec.model.red.boundary_level().unwrap_or(f64::INFINITY);
    let guard = 2.0 * spec.dt;
    let many = spec.seeds.len() > 1;

    let mut series = Vec::new();
    let mut snapshots = meanfield_snapshots(&sol);
    let mut per_run = Vec::new();
    let mut paths_by_n: Vec<(usize, Vec<_>)> = Vec::new();
    // weak[n_index][snapshot][class] summed over seeds.
    let mut weak =
        vec![vec![vec![0.0; spec.model.classes.len()]; sol.snapshots.len()]; spec.flows.len()];
    for (n, seed, mut record) in runs {
        let name = run_name(n, seed, many);
        let path = record.queue_path()?;
        let queue_dist = path_distance(&path, &reference)?;
        let loss_dist = loss_distance(&path, &reference, level, guard)?;
        let ni = spec
            .flows
            .iter()
            .position(|&f| f == n)
            .expect("job from flows");
        let mut weak_run = Vec::new();
        for (si, (ps, ms)) in record.snapshots.iter().zip(&sol.snapshots).enumerate() {
            let per_class: Vec<f64> = ps
                .classes
                .iter()
                .zip(&ms.classes)
                .map(|(w, m)| metric.distance(w.as_slice(), m))
                .collect();
            for (c, d) in per_class.iter().enumerate() {
                weak[ni][si][c] += d / spec.seeds.len() as f64;
            }
            weak_run.push(json!({ "time": ms.time, "distance": per_class }));
        }
        snapshots.extend(particle_snapshots(&name, &mut record));
        per_run.push(json!({
            "flows": n,
            "seed": seed,
            "queue_distance": queue_dist,
            "loss_distance": loss_dist,
            "weak_distance": weak_run,
        }));
        match paths_by_n.last_mut() {
            Some((m, paths)) if *m == n => paths.push(path),
            _ => paths_by_n.push((n, vec![path])),
        }
        series.push(Series { name, record });
    }

    let rms: Vec<Value> = paths_by_n
        .iter()
        .map(|(n, paths)| {
            let sq: Result<f64> = paths
                .iter()
                .map(|p| path_distance(p, &reference).map(|d| d * d))
                .sum();
            sq.map(
                |sq| json!({ "flows": n, "rms_queue_distance": (sq / paths.len() as f64).sqrt() }),
            )
        })
        .collect::<Result<_>>()?;
    let scaling = match fluctuation_scaling(&paths_by_n, &reference) {
        Ok(fit) => json!(fit),
        Err(Error::Usage(reason)) => {
            warn!("fluctuation scaling skipped: {reason}");
            json!({ "skipped": reason })
        }
        Err(e) => return Err(e),
    };
    let weak_mean: Vec<Value> = spec
        .flows
        .iter()
        .zip(&weak)
        .map(|(n, per_t)| {
            json!({
                "flows": n,
                "times": sol.snapshots.iter().map(|s| s.time).collect::<Vec<_>>(),
                "mean_distance": per_t,
            })
        })
        .collect();

    let summary = json!({
        "meanfield": solve_summary(&sol),
        "runs": per_run,
        "rms": rms,
        "scaling": scaling,
        "weak": weak_mean,
    });
    series.push(Series {
        name: "fig_meanfield".into(),
        record: sol.record,
    });
    Ok(bundle(spec, series, snapshots, summary))
}

fn delta_label(delta: f64) -> String {
    format!("d{delta}")
}

/// Coupled particle runs under plain RED and under Gentle RED for every
/// ramp width. All runs with the same seed share their loss points.
pub fn run_gentle_sweep(spec: &ExperimentSpec) -> Result<ResultBundle> {
    expect_mode(spec, &[Mode::GentleSweep])?;
    if spec.deltas.is_empty() {
        return Err(Error::usage("gentle-sweep needs at least one ramp width"));
    }
    let opts = SimOptions {
        snapshot_times: Vec::new(),
        ..sim_options(spec)
    };
    let mut variants = vec![(None, spec.model.clone())];
    for &d in &spec.deltas {
        let mut cfg = spec.model.clone();
        cfg.red = cfg.red.with_policy(DropPolicy::Gentle { delta: d });
        if let Some(v) = cfg.red.violations().into_iter().next() {
            return Err(Error::Config(vec![v]));
        }
        variants.push((Some(d), cfg));
    }
    let tasks: Vec<(usize, u64, usize)> = jobs(spec)
        .into_iter()
        .flat_map(|(n, s)| (0..variants.len()).map(move |v| (n, s, v)))
        .collect();
    let records: Vec<RunRecord> = tasks
        .par_iter()
        .map(|&(n, seed, v)| particle::run(&variants[v].1, n, seed, &opts))
        .collect::<Result<_>>()?;

    let many = spec.seeds.len() > 1;
    let mut series = Vec::new();
    let mut runs = Vec::new();
    for (chunk, block) in tasks
        .chunks(variants.len())
        .zip(records.chunks(variants.len()))
    {
        let (n, seed, _) = chunk[0];
        let red_path = block[0].queue_path()?;
        let distances: Vec<f64> = block[1..]
            .iter()
            .map(|r| path_distance(&r.queue_path()?, &red_path))
            .collect::<Result<_>>()?;
        runs.push(json!({
            "flows": n,
            "seed": seed,
            "deltas": spec.deltas,
            "queue_distance_to_red": distances,
        }));
        let base = run_name(n, seed, many);
        for ((d, _), record) in variants.iter().zip(block) {
            let name = match d {
                None => format!("{base}_red"),
                Some(d) => format!("{base}_gentle_{}", delta_label(*d)),
            };
            series.push(Series {
                name,
                record: record.clone(),
            });
        }
    }
    Ok(bundle(spec, series, Vec::new(), json!({ "runs": runs })))
}

pub fn run_fixed_point(spec: &ExperimentSpec) -> Result<ResultBundle> {
    expect_mode(spec, &[Mode::FixedPoint])?;
    let fp = meanfield::fixed_point(&spec.model)?;
    let residuals = fp.residuals(&spec.model);
    let summary = json!({ "fixed_point": fp, "residuals": residuals });
    Ok(bundle(spec, Vec::new(), Vec::new(), summary))
}
