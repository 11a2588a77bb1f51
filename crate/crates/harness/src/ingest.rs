//! Cumulative case-count tables to new-case datasets.
//!
//! Input is a CSV with a `date` column (`YYYY-MM-DD`) followed by one column
//! of cumulative counts per region. Every adjustment made on the way in is
//! returned as a warning.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use chrono::{Days, NaiveDate};
use epinet_core::dataset::{DatasetKind, TimeSeriesDataset};
use nalgebra::DMatrix;

use crate::error::{io_err, HarnessError, Result};

#[derive(Debug, Clone)]
pub struct Ingested {
    pub dataset: TimeSeriesDataset,
    pub window_start: NaiveDate,
    pub dropped: Vec<String>,
    pub warnings: Vec<String>,
}

pub fn ingest_cumulative_cases(
    path: &Path,
    window_start: NaiveDate,
    window_end: NaiveDate,
    min_cases: f64,
) -> Result<Ingested> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    ingest_str(&text, path, window_start, window_end, min_cases)
}

fn ingest_str(
    text: &str,
    path: &Path,
    window_start: NaiveDate,
    window_end: NaiveDate,
    min_cases: f64,
) -> Result<Ingested> {
    let fail = |line: usize, message: String| HarnessError::Ingest {
        path: path.to_path_buf(),
        line,
        message,
    };
    let days = (window_end - window_start).num_days();
    if days < 2 {
        return Err(fail(
            0,
            format!("window {window_start}..{window_end} holds fewer than two increments"),
        ));
    }
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header = reader
        .headers()
        .map_err(|e| fail(1, e.to_string()))?
        .clone();
    if header.get(0) != Some("date") || header.len() < 2 {
        return Err(fail(
            1,
            "expected a `date` column followed by region columns".into(),
        ));
    }
    let regions: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
    let mut rows: BTreeMap<NaiveDate, (usize, Vec<Option<f64>>)> = BTreeMap::new();
    for rec in reader.records() {
        let rec =
            rec.map_err(|e| fail(e.position().map_or(0, |p| p.line() as usize), e.to_string()))?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        if rec.len() != regions.len() + 1 {
            return Err(fail(
                line,
                format!("expected {} fields, found {}", regions.len() + 1, rec.len()),
            ));
        }
        let date = NaiveDate::parse_from_str(&rec[0], "%Y-%m-%d")
            .map_err(|e| fail(line, format!("bad date `{}`: {e}", &rec[0])))?;
        let mut vals = Vec::with_capacity(regions.len());
        for (k, cell) in rec.iter().skip(1).enumerate() {
            if cell.is_empty() {
                vals.push(None);
                continue;
            }
            let v: f64 = cell
                .parse()
                .map_err(|_| fail(line, format!("bad count `{cell}` for {}", regions[k])))?;
            if !v.is_finite() || v < 0.0 {
                return Err(fail(
                    line,
                    format!(
                        "count `{cell}` for {} is not a nonnegative number",
                        regions[k]
                    ),
                ));
            }
            vals.push(Some(v));
        }
        if let Some((first, _)) = rows.insert(date, (line, vals)) {
            return Err(fail(
                line,
                format!("date {date} already given on line {first}"),
            ));
        }
    }

    let mut warnings = Vec::new();
    let n = regions.len();
    // cumulative level per region on each day of the window, forward-filled
    let mut grid = vec![vec![0.0; n]; days as usize + 1];
    let mut last: Vec<Option<(f64, NaiveDate)>> = vec![None; n];
    for (date, (_, vals)) in rows.range(..window_start) {
        for (k, v) in vals.iter().enumerate() {
            if let Some(v) = v {
                last[k] = Some((*v, *date));
            }
        }
    }
    for (d, row) in grid.iter_mut().enumerate() {
        let date = window_start + Days::new(d as u64);
        match rows.get(&date) {
            Some((_, vals)) => {
                for (k, v) in vals.iter().enumerate() {
                    match v {
                        Some(v) => last[k] = Some((*v, date)),
                        None => match last[k] {
                            Some((_, from)) => warnings.push(format!(
                                "{}: {date} blank, carried forward from {from}",
                                regions[k]
                            )),
                            None => warnings.push(format!(
                                "{}: {date} blank with no earlier value, taken as 0",
                                regions[k]
                            )),
                        },
                    }
                }
            }
            None => warnings.push(format!("{date}: missing day, every region carried forward")),
        }
        for (k, cell) in row.iter_mut().enumerate() {
            *cell = last[k].map_or(0.0, |(v, _)| v);
        }
    }

    // increments, with downward revisions clamped against the running level
    let mut increments = vec![vec![0.0; n]; days as usize];
    let mut baseline = grid[0].clone();
    for k in 0..n {
        let mut level = grid[0][k];
        for d in 0..days as usize {
            let next = grid[d + 1][k];
            if next < level {
                let date = window_start + Days::new(d as u64 + 1);
                warnings.push(format!(
                    "{}: {date} revised down from {level} to {next}, increment clamped to 0",
                    regions[k]
                ));
                increments[d][k] = 0.0;
            } else {
                increments[d][k] = next - level;
                level = next;
            }
        }
    }

    let keep: Vec<usize> = (0..n)
        .filter(|&k| increments.iter().map(|r| r[k]).sum::<f64>() >= min_cases)
        .collect();
    let dropped: Vec<String> = (0..n)
        .filter(|k| !keep.contains(k))
        .map(|k| regions[k].clone())
        .collect();
    for r in &dropped {
        warnings.push(format!(
            "{r}: fewer than {min_cases} new cases in the window, dropped"
        ));
    }
    if keep.is_empty() {
        return Err(fail(0, "no region meets the case threshold".into()));
    }
    let values = DMatrix::from_fn(days as usize, keep.len(), |d, c| increments[d][keep[c]]);
    baseline = keep.iter().map(|&k| baseline[k]).collect();
    let names = keep.iter().map(|&k| regions[k].clone()).collect();
    let dataset = TimeSeriesDataset::new(DatasetKind::NewCases, 1.0, values)?
        .with_baseline(baseline)?
        .with_node_names(names)?;
    for w in &warnings {
        log::warn!("{}: {w}", path.display());
    }
    Ok(Ingested {
        dataset,
        window_start,
        dropped,
        warnings,
    })
}

/// Writes the cumulative counts of a daily new-case dataset in the format
/// [`ingest_cumulative_cases`] reads, starting at `start`.
pub fn write_cumulative_csv(ds: &TimeSeriesDataset, start: NaiveDate, path: &Path) -> Result<()> {
    if ds.delta_t != 1.0 {
        return Err(HarnessError::Config(
            "cumulative tables are daily; delta_t must be 1".into(),
        ));
    }
    let cum = ds.cumulative()?;
    let names: Vec<String> = match &ds.node_names {
        Some(n) => n.clone(),
        None => (0..ds.n()).map(|i| format!("node_{i}")).collect(),
    };
    let mut out = String::from("date");
    for n in &names {
        out.push(',');
        out.push_str(n);
    }
    out.push('\n');
    for d in 0..cum.nrows() {
        out.push_str(&(start + Days::new(d as u64)).format("%Y-%m-%d").to_string());
        for i in 0..ds.n() {
            out.push(',');
            out.push_str(&format!("{:?}", cum[(d, i)]));
        }
        out.push('\n');
    }
    let mut f = std::fs::File::create(path).map_err(io_err(path))?;
    f.write_all(out.as_bytes()).map_err(io_err(path))?;
    Ok(())
}
