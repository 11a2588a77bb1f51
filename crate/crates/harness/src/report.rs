//! Report files: per-trial CSV, JSON summary and whitespace-separated plot
//! data (`x y sigma`) for external plotting.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::Serialize;

use crate::casestudy::CaseStudyReport;
use crate::error::{io_err, Result};
use crate::experiment::ExperimentReport;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    Json,
    Plot,
}

pub const ALL_FORMATS: [Format; 3] = [Format::Csv, Format::Json, Format::Plot];

pub const CSV_HEADER: [&str; 15] = [
    "trial",
    "seed",
    "estimator",
    "e_l",
    "e_r",
    "loglik",
    "gamma_hat",
    "links",
    "alpha_hat",
    "beta_hat",
    "r_hat",
    "i0_hat",
    "e_l_sd",
    "e_r_sd",
    "error",
];

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:?}")).unwrap_or_default()
}

fn finish(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w
        .into_inner()
        .map_err(|e| csv::Error::from(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn experiment_csv(report: &ExperimentReport) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(CSV_HEADER)?;
    for t in &report.trials {
        let rates = t.rates.as_ref();
        let common = |w: &mut csv::Writer<Vec<u8>>,
                      est: &str,
                      e_l,
                      loglik,
                      gamma,
                      links: Option<usize>,
                      err: &str| {
            w.write_record([
                t.trial.to_string(),
                t.seed.to_string(),
                est.to_string(),
                opt(e_l),
                opt(t.e_r),
                opt(loglik),
                opt(gamma),
                links.map(|l| l.to_string()).unwrap_or_default(),
                opt(rates.map(|r| r.alpha_hat)),
                opt(rates.map(|r| r.beta_hat)),
                opt(rates.and_then(|r| r.r_hat)),
                opt(rates.and_then(|r| r.i0_hat)),
                String::new(),
                String::new(),
                err.to_string(),
            ])
        };
        if t.scores.is_empty() {
            common(
                &mut w,
                "",
                None,
                None,
                None,
                None,
                t.error.as_deref().unwrap_or(""),
            )?;
        }
        for s in &t.scores {
            common(
                &mut w,
                &s.estimator,
                s.e_l,
                s.loglik,
                s.gamma_hat,
                s.links,
                s.error.as_deref().unwrap_or(""),
            )?;
        }
    }
    if !report.trials.is_empty() {
        for a in &report.summary {
            w.write_record([
                "aggregate".to_string(),
                String::new(),
                a.estimator.clone(),
                opt(a.e_l_mean),
                opt(a.e_r_mean),
                String::new(),
                String::new(),
                String::new(),
                String::new(),
                String::new(),
                String::new(),
                String::new(),
                opt(a.e_l_sd),
                opt(a.e_r_sd),
                if a.failed > 0 {
                    format!("{} failed", a.failed)
                } else {
                    String::new()
                },
            ])?;
        }
    }
    finish(w)
}

/// One `x y sigma` line per point, preceded by a comment naming the axes.
pub fn plot_data(x_label: &str, y_label: &str, points: &[(f64, f64, f64)]) -> String {
    let mut s = format!("# {x_label} {y_label} sigma\n");
    for (x, y, e) in points {
        s.push_str(&format!("{x:?} {y:?} {e:?}\n"));
    }
    s
}

fn write(path: PathBuf, contents: &str) -> Result<PathBuf> {
    fs::write(&path, contents).map_err(io_err(&path))?;
    Ok(path)
}

pub fn write_json<T: Serialize>(path: PathBuf, value: &T) -> Result<PathBuf> {
    let text = serde_json::to_string_pretty(value)?;
    write(path, &text)
}

/// Writes the requested formats as `<dir>/<stem>.*` and returns the paths.
pub fn emit_report(
    report: &ExperimentReport,
    dir: &Path,
    stem: &str,
    formats: &[Format],
) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut out = Vec::new();
    for f in formats {
        match f {
            Format::Csv => out.push(write(
                dir.join(format!("{stem}.csv")),
                &experiment_csv(report)?,
            )?),
            Format::Json => out.push(write_json(dir.join(format!("{stem}.json")), report)?),
            Format::Plot => {
                let c = &report.config;
                let x = c.avg_degree / (c.n - 1) as f64;
                for a in &report.summary {
                    if let (Some(m), Some(s)) = (a.e_l_mean, a.e_l_sd) {
                        let p = plot_data("normalized_degree", "E_l", &[(x, m, s)]);
                        out.push(write(
                            dir.join(format!("{stem}_{}_el.dat", a.estimator)),
                            &p,
                        )?);
                    }
                }
                if let Some(a) = report.summary.first() {
                    if let (Some(m), Some(s)) = (a.e_r_mean, a.e_r_sd) {
                        let p = plot_data("normalized_degree", "E_r", &[(x, m, s)]);
                        out.push(write(dir.join(format!("{stem}_er.dat")), &p)?);
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Wall-clock time per trial, kept apart from the reproducible report.
pub fn write_timings(dir: &Path, stem: &str, times: &[Duration]) -> Result<PathBuf> {
    let mut s = String::from("trial,seconds\n");
    for (t, d) in times.iter().enumerate() {
        s.push_str(&format!("{t},{:.3}\n", d.as_secs_f64()));
    }
    write(dir.join(format!("{stem}_timings.csv")), &s)
}

pub fn emit_case_study(report: &CaseStudyReport, dir: &Path, stem: &str) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "rank",
        "loglik",
        "gamma_total",
        "multiplicity",
        "e_l",
        "links",
    ])?;
    for r in &report.ranking {
        let links: Vec<String> = r.links.iter().map(|(a, b)| format!("{a}-{b}")).collect();
        w.write_record([
            r.rank.to_string(),
            format!("{:?}", r.loglik),
            format!("{:?}", r.gamma_total),
            r.multiplicity.to_string(),
            opt(r.e_l),
            links.join(";"),
        ])?;
    }
    let csv_text = finish(w)?;
    Ok(vec![
        write(dir.join(format!("{stem}_ranking.csv")), &csv_text)?,
        write_json(dir.join(format!("{stem}.json")), report)?,
    ])
}
