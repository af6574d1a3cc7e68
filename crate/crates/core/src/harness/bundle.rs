//! Result bundles and plot data files.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::harness::spec::{ExperimentSpec, Mode};
use crate::record::RunRecord;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metadata {
    pub crate_version: String,
    pub mode: Mode,
    pub config_hash: String,
    pub seeds: Vec<u64>,
    pub defaults: Vec<String>,
    pub spec: ExperimentSpec,
}

impl Metadata {
    pub fn for_spec(spec: &ExperimentSpec) -> Self {
        Metadata {
            crate_version: env!("CARGO_PKG_VERSION").to_string(),
            mode: spec.mode,
            config_hash: spec.config_hash(),
            seeds: spec.seeds.clone(),
            defaults: spec.defaults.clone(),
            spec: spec.clone(),
        }
    }
}

/// One time series, written to `<name>.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Series {
    pub name: String,
    pub record: RunRecord,
}

/// Window law of one class at one time, as `(window, mass)` atoms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    /// Name of the series it belongs to.
    pub source: String,
    pub time: f64,
    pub class_id: usize,
    pub atoms: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultBundle {
    pub metadata: Metadata,
    pub series: Vec<Series>,
    pub snapshots: Vec<Snapshot>,
    pub summary: Value,
}

impl ResultBundle {
    pub fn series(&self, name: &str) -> Option<&RunRecord> {
        self.series
            .iter()
            .find(|s| s.name == name)
            .map(|s| &s.record)
    }
}

pub fn series_header(classes: usize) -> Vec<String> {
    let mut h: Vec<String> = ["t", "queue", "loss", "rate"].map(String::from).to_vec();
    h.extend((0..classes).map(|c| format!("wbar_{c}")));
    h.extend((0..classes).map(|c| format!("rtt_{c}")));
    h
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Parse(format!("{}: {other:?}", path.display())),
    }
}

fn write_series(path: &Path, hash: &str, record: &RunRecord) -> Result<()> {
    let mut out = create(path)?;
    writeln!(out, "# config_hash: {hash}").map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(out);
    let c = record.classes();
    w.write_record(series_header(c))
        .map_err(|e| csv_error(path, e))?;
    let mut row = Vec::with_capacity(4 + 2 * c);
    for i in 0..record.len() {
        row.clear();
        row.extend([
            record.times[i],
            record.queue[i],
            record.loss[i],
            record.rate[i],
        ]);
        row.extend(record.mean_window.iter().map(|col| col[i]));
        row.extend(record.rtt.iter().map(|col| col[i]));
        w.write_record(row.iter().map(f64::to_string))
            .map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn write_snapshots(path: &Path, hash: &str, snaps: &[Snapshot]) -> Result<()> {
    let mut out = create(path)?;
    writeln!(out, "# config_hash: {hash}").map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["source", "time", "class", "window", "mass"])
        .map_err(|e| csv_error(path, e))?;
    for s in snaps {
        for &(x, m) in &s.atoms {
            w.write_record([
                s.source.clone(),
                s.time.to_string(),
                s.class_id.to_string(),
                x.to_string(),
                m.to_string(),
            ])
            .map_err(|e| csv_error(path, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut out = create(path)?;
    serde_json::to_writer_pretty(&mut out, value).map_err(|e| Error::io(path, e.into()))?;
    writeln!(out)
        .and_then(|_| out.flush())
        .map_err(|e| Error::io(path, e))
}

/// Write every series as CSV plus `snapshots.csv`, `metadata.json` and
/// `summary.json` into `dir`. Returns the files written, in order.
pub fn emit_plotdata(bundle: &ResultBundle, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let hash = &bundle.metadata.config_hash;
    let mut written = Vec::new();
    for s in &bundle.series {
        let path = dir.join(format!("{}.csv", s.name));
        write_series(&path, hash, &s.record)?;
        written.push(path);
    }
    if !bundle.snapshots.is_empty() {
        let path = dir.join("snapshots.csv");
        write_snapshots(&path, hash, &bundle.snapshots)?;
        written.push(path);
    }
    let path = dir.join("metadata.json");
    write_json(&path, &bundle.metadata)?;
    written.push(path);
    let path = dir.join("summary.json");
    write_json(&path, &bundle.summary)?;
    written.push(path);
    Ok(written)
}

/// A series file read back.
#[derive(Debug, Clone, PartialEq)]
pub struct PlotTable {
    pub config_hash: String,
    pub header: Vec<String>,
    /// `columns[j][i]`.
    pub columns: Vec<Vec<f64>>,
}

impl PlotTable {
    pub fn column(&self, name: &str) -> Option<&[f64]> {
        let j = self.header.iter().position(|h| h == name)?;
        Some(&self.columns[j])
    }
}

pub fn read_plotdata(path: &Path) -> Result<PlotTable> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let config_hash = text
        .lines()
        .next()
        .and_then(|l| l.strip_prefix("# config_hash: "))
        .ok_or_else(|| Error::Parse(format!("{}: missing config_hash line", path.display())))?
        .to_string();
    let mut r = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let header: Vec<String> = r
        .headers()
        .map_err(|e| csv_error(path, e))?
        .iter()
        .map(String::from)
        .collect();
    let mut columns = vec![Vec::new(); header.len()];
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        for (col, field) in columns.iter_mut().zip(rec.iter()) {
            let v = field.parse().map_err(|_| {
                Error::Parse(format!(
                    "{}: row {}: bad number {field:?}",
                    path.display(),
                    line + 1
                ))
            })?;
            col.push(v);
        }
    }
    Ok(PlotTable {
        config_hash,
        header,
        columns,
    })
}
