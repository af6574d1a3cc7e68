//! Experiment documents.
//!
//! A document is a JSON object. Queue levels and the link rate are per flow
//! unless `"units": "absolute"` is given together with `reference_flows`,
//! in which case they are divided by that flow count on reading. Every
//! setting that is left out and takes a default is listed in
//! [`ExperimentSpec::defaults`].

use std::collections::BTreeSet;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::meanfield::Closure;
use crate::model::{validate_config, FlowClass, InitialLaw, ModelConfig, Violation};
use crate::red::{DropPolicy, RedConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Simulate,
    Solve,
    Compare,
    GentleSweep,
    FixedPoint,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Simulate => "simulate",
            Mode::Solve => "solve",
            Mode::Compare => "compare",
            Mode::GentleSweep => "gentle-sweep",
            Mode::FixedPoint => "fixed-point",
        }
    }

    fn needs_flows(self) -> bool {
        matches!(self, Mode::Simulate | Mode::Compare | Mode::GentleSweep)
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "simulate" => Mode::Simulate,
            "solve" => Mode::Solve,
            "compare" => Mode::Compare,
            "gentle-sweep" => Mode::GentleSweep,
            "fixed-point" => Mode::FixedPoint,
            other => {
                return Err(Error::Parse(format!(
                    "unknown mode {other:?}; expected simulate, solve, compare, gentle-sweep or fixed-point"
                )))
            }
        })
    }
}

/// Fully resolved experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub mode: Mode,
    pub model: ModelConfig,
    /// Population sizes for particle runs.
    pub flows: Vec<usize>,
    pub seeds: Vec<u64>,
    /// Particle time step.
    pub dt: f64,
    /// Mean-field grid intervals per round trip.
    pub substeps: usize,
    /// Mean-field window grid spacing.
    pub dw: f64,
    pub closure: Closure,
    /// Number of test functions of the weak metric.
    pub k_max: usize,
    /// Gentle RED ramp widths for the sweep, per flow.
    pub deltas: Vec<f64>,
    pub snapshot_times: Vec<f64>,
    pub output: Option<PathBuf>,
    /// Worker threads; `None` uses the global pool. Results do not depend
    /// on it, so it is not part of the serialised spec.
    #[serde(skip)]
    pub threads: Option<usize>,
    /// `key = value` for every setting that took its default.
    pub defaults: Vec<String>,
}

impl ExperimentSpec {
    /// SHA-256 of the serialised spec without the output location.
    pub fn config_hash(&self) -> String {
        let mut canonical = self.clone();
        canonical.output = None;
        let bytes = serde_json::to_vec(&canonical).expect("spec serialises");
        hex::encode(Sha256::digest(bytes))
    }
}

/// Values that take precedence over the document, e.g. from the command
/// line.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub mode: Option<Mode>,
    pub flows: Option<Vec<usize>>,
    pub seeds: Option<Vec<u64>>,
    pub dt: Option<f64>,
    pub dw: Option<f64>,
    pub substeps: Option<usize>,
    pub output: Option<PathBuf>,
    pub threads: Option<usize>,
}

pub fn parse_spec(text: &str) -> Result<ExperimentSpec> {
    parse_spec_with(text, &Overrides::default())
}

fn syntax_error(text: &str, err: &serde_json::Error) -> Error {
    let line = err.line();
    let context = text
        .lines()
        .nth(line.saturating_sub(1))
        .map(|l| format!("\n  {line} | {l}"))
        .unwrap_or_default();
    Error::Parse(format!(
        "malformed document at line {line}, column {}: {err}{context}",
        err.column()
    ))
}

/// Collects unknown and missing keys across the whole document so that
/// all of them can be reported at once.
#[derive(Default)]
struct Problems {
    unknown: Vec<String>,
    missing: Vec<String>,
}

struct Obj<'a> {
    path: String,
    map: &'a Map<String, Value>,
    used: BTreeSet<&'static str>,
}

impl<'a> Obj<'a> {
    fn new(path: impl Into<String>, value: &'a Value) -> Result<Self> {
        let path = path.into();
        match value.as_object() {
            Some(map) => Ok(Obj {
                path,
                map,
                used: BTreeSet::new(),
            }),
            None => Err(Error::Parse(format!(
                "{} must be an object",
                display(&path)
            ))),
        }
    }

    fn key(&self, k: &str) -> String {
        if self.path.is_empty() {
            k.to_string()
        } else {
            format!("{}.{k}", self.path)
        }
    }

    fn get(&mut self, k: &'static str) -> Option<&'a Value> {
        self.used.insert(k);
        self.map.get(k).filter(|v| !v.is_null())
    }

    fn f64(&mut self, k: &'static str) -> Result<Option<f64>> {
        match self.get(k) {
            None => Ok(None),
            Some(v) => v
                .as_f64()
                .map(Some)
                .ok_or_else(|| Error::Parse(format!("{} must be a number, got {v}", self.key(k)))),
        }
    }

    fn required_f64(&mut self, k: &'static str, p: &mut Problems) -> Result<f64> {
        let v = self.f64(k)?;
        if v.is_none() {
            p.missing.push(self.key(k));
        }
        Ok(v.unwrap_or(f64::NAN))
    }

    fn uint(&mut self, k: &'static str) -> Result<Option<u64>> {
        match self.get(k) {
            None => Ok(None),
            Some(v) => v.as_u64().map(Some).ok_or_else(|| {
                Error::Parse(format!(
                    "{} must be a non-negative integer, got {v}",
                    self.key(k)
                ))
            }),
        }
    }

    fn string(&mut self, k: &'static str) -> Result<Option<&'a str>> {
        match self.get(k) {
            None => Ok(None),
            Some(v) => v
                .as_str()
                .map(Some)
                .ok_or_else(|| Error::Parse(format!("{} must be a string, got {v}", self.key(k)))),
        }
    }

    fn array(&mut self, k: &'static str) -> Result<Option<&'a Vec<Value>>> {
        match self.get(k) {
            None => Ok(None),
            Some(v) => v
                .as_array()
                .map(Some)
                .ok_or_else(|| Error::Parse(format!("{} must be an array, got {v}", self.key(k)))),
        }
    }

    fn f64_list(&mut self, k: &'static str) -> Result<Option<Vec<f64>>> {
        let key = self.key(k);
        self.array(k)?
            .map(|a| {
                a.iter()
                    .map(|v| {
                        v.as_f64().ok_or_else(|| {
                            Error::Parse(format!("{key} must hold numbers, got {v}"))
                        })
                    })
                    .collect()
            })
            .transpose()
    }

    fn uint_list(&mut self, k: &'static str) -> Result<Option<Vec<u64>>> {
        let key = self.key(k);
        self.array(k)?
            .map(|a| {
                a.iter()
                    .map(|v| {
                        v.as_u64().ok_or_else(|| {
                            Error::Parse(format!("{key} must hold non-negative integers, got {v}"))
                        })
                    })
                    .collect()
            })
            .transpose()
    }

    fn finish(self, p: &mut Problems) {
        for k in self.map.keys() {
            if !self.used.contains(k.as_str()) {
                p.unknown.push(self.key(k));
            }
        }
    }
}

fn display(path: &str) -> &str {
    if path.is_empty() {
        "the document"
    } else {
        path
    }
}

fn parse_initial(path: String, v: &Value) -> Result<InitialLaw> {
    let map = v.as_object().filter(|m| m.len() == 1).ok_or_else(|| {
        Error::Parse(format!(
            "{path} must be an object with one of point, uniform, explicit"
        ))
    })?;
    let (kind, body) = map.iter().next().unwrap();
    let numbers =
        |v: &Value| -> Option<Vec<f64>> { v.as_array()?.iter().map(Value::as_f64).collect() };
    match kind.as_str() {
        "point" => body
            .as_f64()
            .map(InitialLaw::Point)
            .ok_or_else(|| Error::Parse(format!("{path}.point must be a number"))),
        "uniform" => match numbers(body).as_deref() {
            Some(&[lo, hi]) => Ok(InitialLaw::Uniform { lo, hi }),
            _ => Err(Error::Parse(format!("{path}.uniform must be [lo, hi]"))),
        },
        "explicit" => numbers(body)
            .filter(|v| !v.is_empty())
            .map(InitialLaw::Explicit)
            .ok_or_else(|| {
                Error::Parse(format!(
                    "{path}.explicit must be a non-empty list of numbers"
                ))
            }),
        other => Err(Error::Parse(format!(
            "{path}: unknown initial law {other:?}; expected point, uniform or explicit"
        ))),
    }
}

fn fmt_list<T: fmt::Display>(v: &[T]) -> String {
    let items: Vec<String> = v.iter().map(ToString::to_string).collect();
    format!("[{}]", items.join(", "))
}

/// Read a document, apply `over` on top of it, fill defaults and validate.
pub fn parse_spec_with(text: &str, over: &Overrides) -> Result<ExperimentSpec> {
    let root_value: Value = serde_json::from_str(text).map_err(|e| syntax_error(text, &e))?;
    let mut p = Problems::default();
    let mut defaults = Vec::new();
    let mut root = Obj::new("", &root_value)?;

    let mode = match (over.mode, root.string("mode")?) {
        (Some(m), _) => Some(m),
        (None, Some(s)) => Some(s.parse()?),
        (None, None) => {
            p.missing.push("mode".into());
            None
        }
    };

    let units = root.string("units")?;
    let scale = match units {
        None | Some("per_flow") => {
            if units.is_none() {
                defaults.push("units = per_flow".to_string());
            }
            if root.get("reference_flows").is_some() {
                return Err(Error::Parse(
                    "reference_flows is only meaningful with \"units\": \"absolute\"".into(),
                ));
            }
            1.0
        }
        Some("absolute") => match root.uint("reference_flows")? {
            Some(n) if n > 0 => n as f64,
            Some(_) => return Err(Error::Parse("reference_flows must be positive".into())),
            None => {
                p.missing.push("reference_flows".into());
                1.0
            }
        },
        Some(other) => {
            return Err(Error::Parse(format!(
                "units must be \"per_flow\" or \"absolute\", got {other:?}"
            )))
        }
    };

    let horizon = root.required_f64("horizon", &mut p)?;

    // Link and drop curve.
    let red = match root.get("red") {
        None => {
            p.missing.push("red".into());
            None
        }
        Some(v) => {
            let mut o = Obj::new("red", v)?;
            let q_max = o.required_f64("q_max", &mut p)? / scale;
            let p_max = o.required_f64("p_max", &mut p)?;
            let link_rate = o.required_f64("link_rate", &mut p)? / scale;
            let policy_name = o.string("policy")?;
            let delta = o.f64("delta")?.map(|d| d / scale);
            let policy = match (policy_name, delta) {
                (None | Some("red"), None) => {
                    if policy_name.is_none() {
                        defaults.push("red.policy = red".into());
                    }
                    DropPolicy::Red
                }
                (Some("gentle"), Some(delta)) => DropPolicy::Gentle { delta },
                (Some("gentle"), None) => {
                    p.missing.push("red.delta".into());
                    DropPolicy::Gentle { delta: f64::NAN }
                }
                (Some("tail_drop"), None) => DropPolicy::TailDrop,
                (None | Some("red" | "tail_drop"), Some(_)) => {
                    return Err(Error::Parse(format!(
                        "red.delta only applies to policy \"gentle\", not {:?}",
                        policy_name.unwrap_or("red")
                    )))
                }
                (Some(other), _) => {
                    return Err(Error::Parse(format!(
                        "red.policy must be red, gentle or tail_drop, got {other:?}"
                    )))
                }
            };
            let q_min = match o.f64("q_min")? {
                Some(v) => v / scale,
                None if policy == DropPolicy::TailDrop => 0.0,
                None => {
                    defaults.push(format!("red.q_min = {} (q_max / 3)", q_max / 3.0));
                    q_max / 3.0
                }
            };
            let buffer = match o.f64("buffer")? {
                Some(v) => v / scale,
                None => {
                    let b = match policy {
                        DropPolicy::TailDrop => q_max,
                        DropPolicy::Gentle { delta } => (2.0 * q_max).max(q_max + delta),
                        DropPolicy::Red => 2.0 * q_max,
                    };
                    defaults.push(format!("red.buffer = {b}"));
                    b
                }
            };
            let p_max = if policy == DropPolicy::TailDrop && p_max.is_nan() {
                p.missing.retain(|k| k != "red.p_max");
                0.0
            } else {
                p_max
            };
            o.finish(&mut p);
            Some(RedConfig {
                q_min,
                q_max,
                p_max,
                buffer,
                link_rate,
                policy,
            })
        }
    };

    // Flow classes.
    let mut classes = Vec::new();
    match root.array("classes")? {
        None => p.missing.push("classes".into()),
        Some(list) => {
            let single = list.len() == 1;
            for (i, v) in list.iter().enumerate() {
                let mut o = Obj::new(format!("classes[{i}]"), v)?;
                let delay = o.required_f64("delay", &mut p)?;
                let weight = match o.f64("weight")? {
                    Some(w) => w,
                    None if single => {
                        defaults.push("classes[0].weight = 1".into());
                        1.0
                    }
                    None => {
                        p.missing.push(o.key("weight"));
                        f64::NAN
                    }
                };
                let initial = match o.get("initial") {
                    Some(v) => parse_initial(o.key("initial"), v)?,
                    None => {
                        p.missing.push(o.key("initial"));
                        InitialLaw::Point(0.0)
                    }
                };
                o.finish(&mut p);
                classes.push(FlowClass {
                    delay,
                    weight,
                    initial,
                });
            }
        }
    }

    let w_max = match root.f64("w_max")? {
        Some(v) => v,
        None => {
            let w = classes
                .iter()
                .map(|c| c.initial.support().1)
                .fold(0.0, f64::max);
            defaults.push(format!("w_max = {w} (largest initial window)"));
            w
        }
    };
    let q0 = match root.f64("q0")? {
        Some(v) => v / scale,
        None => {
            defaults.push("q0 = 0".into());
            0.0
        }
    };

    let doc_flows = root.uint_list("flows")?;
    let doc_seeds = root.uint_list("seeds")?;
    let doc_dt = root.f64("dt")?;
    let doc_substeps = root.uint("substeps")?;
    let doc_dw = root.f64("dw")?;
    let closure = match root.string("closure")? {
        None => {
            defaults.push("closure = bayes".into());
            Closure::Bayes
        }
        Some("bayes") => Closure::Bayes,
        Some("heuristic") => Closure::Heuristic,
        Some("decorrelated") => Closure::Decorrelated,
        Some(other) => {
            return Err(Error::Parse(format!(
                "closure must be bayes, heuristic or decorrelated, got {other:?}"
            )))
        }
    };
    let k_max = match root.uint("k_max")? {
        Some(k) => k as usize,
        None => {
            defaults.push("k_max = 16".into());
            16
        }
    };
    let deltas: Vec<f64> = root
        .f64_list("deltas")?
        .unwrap_or_default()
        .into_iter()
        .map(|d| d / scale)
        .collect();
    let doc_snapshots = root.f64_list("snapshot_times")?;
    let doc_output = root.string("output")?.map(PathBuf::from);
    let doc_threads = root.uint("threads")?;

    root.finish(&mut p);
    if !p.unknown.is_empty() || !p.missing.is_empty() {
        let mut parts = Vec::new();
        if !p.unknown.is_empty() {
            parts.push(format!("unknown keys: {}", p.unknown.join(", ")));
        }
        if !p.missing.is_empty() {
            parts.push(format!("missing required keys: {}", p.missing.join(", ")));
        }
        return Err(Error::Parse(parts.join("; ")));
    }
    let mode = mode.expect("checked above");
    let red = red.expect("checked above");

    let model = ModelConfig {
        classes,
        red,
        w_max,
        q0,
        horizon,
    };
    let mut violations = match validate_config(&model) {
        Ok(()) => Vec::new(),
        Err(v) => v,
    };

    let flows: Vec<usize> = match over
        .flows
        .clone()
        .or(doc_flows.map(|v| v.into_iter().map(|n| n as usize).collect()))
    {
        Some(f) => f,
        None if mode.needs_flows() => {
            return Err(Error::Parse(format!(
                "missing required keys: flows (mode {mode})"
            )));
        }
        None => Vec::new(),
    };
    let seeds = match over.seeds.clone().or(doc_seeds) {
        Some(s) => s,
        None => {
            defaults.push("seeds = [0]".into());
            vec![0]
        }
    };
    let t_min = model.t_min();
    let dt = match over.dt.or(doc_dt) {
        Some(v) => v,
        None => {
            let v = t_min / 100.0;
            defaults.push(format!("dt = {v} (T_min / 100)"));
            v
        }
    };
    let substeps = match over.substeps.or(doc_substeps.map(|s| s as usize)) {
        Some(s) => s,
        None => {
            defaults.push("substeps = 32".into());
            32
        }
    };
    let dw = match over.dw.or(doc_dw) {
        Some(v) => v,
        None => {
            let v = model.window_bound(horizon) / 2000.0;
            defaults.push(format!("dw = {v} (a(T) / 2000)"));
            v
        }
    };
    let snapshot_times = match doc_snapshots {
        Some(s) => s,
        None if mode == Mode::Compare => {
            let s = vec![horizon / 3.0, 2.0 * horizon / 3.0, horizon];
            defaults.push(format!("snapshot_times = {}", fmt_list(&s)));
            s
        }
        None => Vec::new(),
    };

    if mode.needs_flows() && flows.is_empty() {
        violations.push(Violation::new(
            "flows",
            "at least one population size is required",
        ));
    }
    if flows.contains(&0) {
        violations.push(Violation::new("flows", "population sizes must be positive"));
    }
    if seeds.is_empty() {
        violations.push(Violation::new("seeds", "at least one seed is required"));
    }
    if !(dt > 0.0 && dt < t_min) {
        violations.push(Violation::new(
            "dt",
            format!("dt = {dt} must lie in (0, T_min = {t_min})"),
        ));
    }
    if substeps < 2 {
        violations.push(Violation::new(
            "substeps",
            "need at least 2 intervals per round trip",
        ));
    }
    if !(dw > 0.0) {
        violations.push(Violation::new("dw", "window grid spacing must be positive"));
    }
    if k_max == 0 {
        violations.push(Violation::new("k_max", "need at least one test function"));
    }
    if mode == Mode::GentleSweep {
        if deltas.is_empty() {
            violations.push(Violation::new(
                "deltas",
                "gentle-sweep needs a non-empty list of ramp widths",
            ));
        }
        for &d in &deltas {
            let gentle = model.red.with_policy(DropPolicy::Gentle { delta: d });
            violations.extend(gentle.violations());
        }
    }
    if snapshot_times
        .iter()
        .any(|&t| !(0.0..=horizon).contains(&t))
    {
        violations.push(Violation::new(
            "snapshot_times",
            "snapshot times must lie in [0, horizon]",
        ));
    }
    if !violations.is_empty() {
        return Err(Error::Config(violations));
    }

    Ok(ExperimentSpec {
        mode,
        model,
        flows,
        seeds,
        dt,
        substeps,
        dw,
        closure,
        k_max,
        deltas,
        snapshot_times,
        output: over.output.clone().or(doc_output),
        threads: over.threads.or(doc_threads.map(|t| t as usize)),
        defaults,
    })
}
