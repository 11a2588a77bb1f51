//! Observation datasets: sampling trajectories onto an observation grid and
//! the CSV + JSON-sidecar file format.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::simulate::Trajectory;

pub const DATASET_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DatasetKind {
    /// `I_i(t_d)`, infectious persons at each observation time.
    InfectiousCounts,
    /// `ΔJ_i(t_d) = J_i(t_{d+1}) - J_i(t_d)`, new cases per interval.
    NewCases,
}

/// A `D × n` block of observations on a uniform grid `t_d = t0 + d·Δt`.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeriesDataset {
    pub kind: DatasetKind,
    pub delta_t: f64,
    pub t0: f64,
    pub values: DMatrix<f64>,
    /// `J_i(t_0)` for new-case datasets; `None` means zero.
    pub baseline: Option<Vec<f64>>,
    pub node_names: Option<Vec<String>>,
}

impl TimeSeriesDataset {
    pub fn new(kind: DatasetKind, delta_t: f64, values: DMatrix<f64>) -> Result<Self> {
        if !(delta_t > 0.0) {
            return Err(invalid("observation interval must be positive"));
        }
        if values.nrows() < 2 {
            return Err(invalid("a dataset needs at least two observations"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("dataset values"));
        }
        Ok(Self {
            kind,
            delta_t,
            t0: 0.0,
            values,
            baseline: None,
            node_names: None,
        })
    }

    pub fn with_baseline(mut self, baseline: Vec<f64>) -> Result<Self> {
        if baseline.len() != self.n() {
            return Err(Error::DimensionMismatch {
                expected: self.n(),
                got: baseline.len(),
            });
        }
        self.baseline = Some(baseline);
        Ok(self)
    }

    pub fn with_node_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.n() {
            return Err(Error::DimensionMismatch {
                expected: self.n(),
                got: names.len(),
            });
        }
        self.node_names = Some(names);
        Ok(self)
    }

    /// Number of observation rows `D`.
    pub fn d(&self) -> usize {
        self.values.nrows()
    }

    pub fn n(&self) -> usize {
        self.values.ncols()
    }

    pub fn row(&self, d: usize) -> DVector<f64> {
        self.values.row(d).transpose()
    }

    pub fn time(&self, d: usize) -> f64 {
        self.t0 + d as f64 * self.delta_t
    }

    /// Node sums per row: `I(t_d)` or `ΔJ(t_d)` depending on the kind.
    pub fn row_totals(&self) -> Vec<f64> {
        (0..self.d()).map(|d| self.values.row(d).sum()).collect()
    }

    /// Per-node cumulative counts `J_i(t_0), …, J_i(t_D)` (`D + 1` rows).
    pub fn cumulative(&self) -> Result<DMatrix<f64>> {
        if self.kind != DatasetKind::NewCases {
            return Err(invalid("cumulative counts need a new-cases dataset"));
        }
        let n = self.n();
        let mut out = DMatrix::zeros(self.d() + 1, n);
        for i in 0..n {
            let mut acc = self.baseline.as_ref().map_or(0.0, |b| b[i]);
            out[(0, i)] = acc;
            for d in 0..self.d() {
                acc += self.values[(d, i)];
                out[(d + 1, i)] = acc;
            }
        }
        Ok(out)
    }

    /// Aggregate cumulative counts `J(t_0), …, J(t_D)`.
    pub fn cumulative_totals(&self) -> Result<Vec<f64>> {
        let c = self.cumulative()?;
        Ok((0..c.nrows()).map(|d| c.row(d).sum()).collect())
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("t");
        for i in 0..self.n() {
            let _ = write!(s, ",node_{i}");
        }
        s.push('\n');
        for d in 0..self.d() {
            let _ = write!(s, "{}", self.time(d));
            for i in 0..self.n() {
                let _ = write!(s, ",{}", self.values[(d, i)]);
            }
            s.push('\n');
        }
        s
    }

    pub fn metadata(&self) -> DatasetMeta {
        DatasetMeta {
            schema_version: DATASET_SCHEMA_VERSION,
            kind: self.kind,
            n: self.n(),
            d: self.d(),
            delta_t: self.delta_t,
            t0: self.t0,
            baseline: self.baseline.clone(),
            node_names: self.node_names.clone(),
            provenance: None,
        }
    }

    /// Parses the CSV body and attaches the sidecar metadata.
    pub fn from_csv(text: &str, meta: &DatasetMeta) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines.next().ok_or(Error::Parse {
            line: 1,
            message: "empty CSV".into(),
        })?;
        let cols: Vec<&str> = header.split(',').map(str::trim).collect();
        if cols.first() != Some(&"t") || cols.len() != meta.n + 1 {
            return Err(Error::Parse {
                line: 1,
                message: format!("unexpected header `{header}`"),
            });
        }
        let mut rows = Vec::new();
        for (lineno, line) in lines {
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != meta.n + 1 {
                return Err(Error::Parse {
                    line: lineno + 1,
                    message: format!("expected {} fields, got {}", meta.n + 1, fields.len()),
                });
            }
            for f in &fields[1..] {
                let v: f64 = f.parse().map_err(|_| Error::Parse {
                    line: lineno + 1,
                    message: format!("not a number: `{f}`"),
                })?;
                rows.push(v);
            }
        }
        let d = rows.len() / meta.n.max(1);
        if d != meta.d {
            return Err(invalid(format!(
                "sidecar says {} rows, CSV has {d}",
                meta.d
            )));
        }
        let values = DMatrix::from_row_slice(d, meta.n, &rows);
        let mut ds = Self::new(meta.kind, meta.delta_t, values)?;
        ds.t0 = meta.t0;
        ds.baseline = meta.baseline.clone();
        ds.node_names = meta.node_names.clone();
        Ok(ds)
    }

    /// Writes `<stem>.csv` and `<stem>.json`; returns the CSV path.
    pub fn save(&self, stem: &Path, provenance: Option<serde_json::Value>) -> Result<PathBuf> {
        let csv_path = stem.with_extension("csv");
        let mut meta = self.metadata();
        meta.provenance = provenance;
        fs::write(&csv_path, self.to_csv())?;
        fs::write(
            stem.with_extension("json"),
            serde_json::to_string_pretty(&meta)?,
        )?;
        Ok(csv_path)
    }

    /// Reads a CSV and its `.json` sidecar.
    pub fn load(csv_path: &Path) -> Result<(Self, DatasetMeta)> {
        let meta: DatasetMeta =
            serde_json::from_str(&fs::read_to_string(csv_path.with_extension("json"))?)?;
        let ds = Self::from_csv(&fs::read_to_string(csv_path)?, &meta)?;
        Ok((ds, meta))
    }
}

/// JSON sidecar accompanying a dataset CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub schema_version: u32,
    pub kind: DatasetKind,
    pub n: usize,
    pub d: usize,
    pub delta_t: f64,
    #[serde(default)]
    pub t0: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub baseline: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub node_names: Option<Vec<String>>,
    /// Free-form record of how the data was produced (parameters, seed, integrator settings).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<serde_json::Value>,
}

/// Samples a trajectory every `delta_t` for `d` observations.
///
/// Infectious-count datasets take `I_i(t_d)` at `t_d = d·Δt`; new-case
/// datasets take `J_i(t_{d+1}) - J_i(t_d)` and record `J_i(t_0)` as the
/// baseline. `round` rounds every reported value to the nearest integer.
pub fn observe(
    traj: &Trajectory,
    delta_t: f64,
    d: usize,
    kind: DatasetKind,
    round: bool,
) -> Result<TimeSeriesDataset> {
    let stride = (delta_t / traj.dt).round();
    if stride < 1.0 || (stride * traj.dt - delta_t).abs() > 1e-9 * delta_t {
        return Err(Error::Grid(format!(
            "observation interval {delta_t} is not a multiple of the step {}",
            traj.dt
        )));
    }
    let stride = stride as usize;
    if d < 2 {
        return Err(invalid("need at least two observations"));
    }
    if d * stride > traj.steps() {
        return Err(Error::Grid(format!(
            "{d} observations every {delta_t} exceed trajectory length {}",
            traj.t_end()
        )));
    }
    let n = traj.states[0].n();
    let fix = |v: f64| if round { v.round() } else { v };
    let values = match kind {
        DatasetKind::InfectiousCounts => {
            DMatrix::from_fn(d, n, |row, i| fix(traj.states[row * stride].i[i]))
        }
        DatasetKind::NewCases => DMatrix::from_fn(d, n, |row, i| {
            let next = fix(traj.states[(row + 1) * stride].j[i]);
            let cur = fix(traj.states[row * stride].j[i]);
            next - cur
        }),
    };
    let mut ds = TimeSeriesDataset::new(kind, delta_t, values)?;
    if kind == DatasetKind::NewCases {
        ds.baseline = Some(traj.states[0].j.iter().map(|&v| fix(v)).collect());
    }
    Ok(ds)
}
