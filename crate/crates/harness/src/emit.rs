//! CSV, JSON and SVG output.
//!
//! CSV schema, version 1:
//!
//! * `<arm>.csv`: `run,trial,target,re,sot,fme_true,fme_est,wall_ms`, one
//!   row per played trial.
//! * `summary.csv`: `arm,trial,n,fme_true_mean,fme_true_ci,fme_est_mean,`
//!   `fme_est_ci,sot_mean,sot_ci`; `*_ci` is the 95% half width
//!   `1.96 s / sqrt(n)`.
//! * `thresholds.csv`: `arm,run,trials,censored`; trials until the
//!   estimated FME first reaches the threshold, or the run length when it
//!   never does.
//! * `ucm.csv` (ucm scenario): `group,phase,n_runs,mean,ci_low,ci_high`.
//! * `filters.csv` (filters scenario): `run,ekf,ukf,pf`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::run::{Outcome, RunManifest, TrialRow};
use crate::HarnessError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
    Svg,
}

impl std::str::FromStr for Format {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            "svg" => Ok(Format::Svg),
            _ => Err(HarnessError::InvalidSpec(format!("unknown format {s:?}"))),
        }
    }
}

/// Mean and 95% confidence half width `1.96 s / sqrt(n)` (sample standard
/// deviation). A single value has a zero-width interval.
pub fn mean_ci(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let m = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (m, 0.0);
    }
    let var = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0);
    (m, 1.96 * var.sqrt() / n.sqrt())
}

/// Per-trial statistics of one arm across its runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesPoint {
    pub trial: usize,
    pub n: usize,
    pub fme_true: (f64, f64),
    pub fme_est: (f64, f64),
    pub sot: (f64, f64),
}

/// Groups manifests by arm, keeping the arms in first-seen order.
pub fn by_arm(manifests: &[RunManifest]) -> Vec<(String, Vec<&RunManifest>)> {
    let mut out: Vec<(String, Vec<&RunManifest>)> = Vec::new();
    for m in manifests {
        match out.iter_mut().find(|(a, _)| *a == m.arm) {
            Some((_, v)) => v.push(m),
            None => out.push((m.arm.clone(), vec![m])),
        }
    }
    out
}

/// Mean and CI of FME and SoT at every trial index reached by any run.
pub fn series(runs: &[&RunManifest]) -> Vec<SeriesPoint> {
    let len = runs.iter().map(|m| m.rows.len()).max().unwrap_or(0);
    (0..len)
        .map(|i| {
            let rows: Vec<&TrialRow> = runs.iter().filter_map(|m| m.rows.get(i)).collect();
            let col = |f: fn(&TrialRow) -> f64| mean_ci(&rows.iter().map(|r| f(r)).collect::<Vec<_>>());
            SeriesPoint {
                trial: i + 1,
                n: rows.len(),
                fme_true: col(|r| r.fme_true),
                fme_est: col(|r| r.fme_est),
                sot: col(|r| r.sot),
            }
        })
        .collect()
}

/// Trials to threshold per run; runs that never reach it count their
/// length and are flagged censored.
pub fn thresholds(runs: &[&RunManifest], threshold: f64) -> Vec<(usize, bool)> {
    runs.iter()
        .map(|m| match m.trials_to_threshold(threshold) {
            Some(t) => (t, false),
            None => (m.rows.len(), true),
        })
        .collect()
}

#[derive(Debug, Serialize, Deserialize)]
struct CsvRow {
    run: usize,
    trial: usize,
    target: usize,
    re: f64,
    sot: f64,
    fme_true: f64,
    fme_est: f64,
    wall_ms: f64,
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> HarnessError {
    HarnessError::Io(format!("{}: {e}", path.display()))
}

fn file_name(arm: &str) -> String {
    arm.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '.' { c } else { '_' }).collect()
}

/// Writes the per-trial rows of one arm.
pub fn write_arm_csv(path: &Path, runs: &[&RunManifest]) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| io_err(path, e))?;
    for m in runs {
        for r in &m.rows {
            w.serialize(CsvRow {
                run: m.run,
                trial: r.trial,
                target: r.target,
                re: r.re,
                sot: r.sot,
                fme_true: r.fme_true,
                fme_est: r.fme_est,
                wall_ms: r.wall_ms,
            })
            .map_err(|e| io_err(path, e))?;
        }
    }
    w.flush().map_err(|e| io_err(path, e))
}

/// Reads an arm CSV back into per-run rows.
pub fn read_arm_csv(path: &Path) -> Result<BTreeMap<usize, Vec<TrialRow>>, HarnessError> {
    let mut r = csv::Reader::from_path(path).map_err(|e| io_err(path, e))?;
    let mut out: BTreeMap<usize, Vec<TrialRow>> = BTreeMap::new();
    for row in r.deserialize::<CsvRow>() {
        let row = row.map_err(|e| io_err(path, e))?;
        out.entry(row.run).or_default().push(TrialRow {
            trial: row.trial,
            target: row.target,
            re: row.re,
            sot: row.sot,
            fme_true: row.fme_true,
            fme_est: row.fme_est,
            wall_ms: row.wall_ms,
        });
    }
    Ok(out)
}

fn write_text(path: &Path, text: &str) -> Result<(), HarnessError> {
    fs::write(path, text).map_err(|e| io_err(path, e))
}

fn write_csv_records<I, R>(path: &Path, header: &[&str], rows: I) -> Result<(), HarnessError>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator<Item = String>,
{
    let mut w = csv::Writer::from_path(path).map_err(|e| io_err(path, e))?;
    w.write_record(header).map_err(|e| io_err(path, e))?;
    for r in rows {
        w.write_record(r).map_err(|e| io_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

/// Writes an outcome in the requested formats and returns the written files.
pub fn emit_outputs(
    outcome: &Outcome,
    threshold: f64,
    formats: &[Format],
    dir: &Path,
) -> Result<Vec<PathBuf>, HarnessError> {
    if let Outcome::Curriculum { manifests } | Outcome::Ucm { manifests, .. } = outcome {
        if manifests.is_empty() {
            return Err(HarnessError::InvalidSpec("no manifests to emit".into()));
        }
    }
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let mut files = Vec::new();
    let arms = by_arm(outcome.manifests());
    for f in formats {
        match f {
            Format::Json => {
                let p = dir.join("outcome.json");
                write_text(&p, &serde_json::to_string_pretty(outcome).expect("outcome serializes"))?;
                files.push(p);
            }
            Format::Csv => {
                for (arm, runs) in &arms {
                    let p = dir.join(format!("{}.csv", file_name(arm)));
                    write_arm_csv(&p, runs)?;
                    files.push(p);
                }
                if !arms.is_empty() {
                    let p = dir.join("summary.csv");
                    let rows = arms.iter().flat_map(|(arm, runs)| {
                        series(runs).into_iter().map(move |s| {
                            vec![
                                arm.clone(),
                                s.trial.to_string(),
                                s.n.to_string(),
                                s.fme_true.0.to_string(),
                                s.fme_true.1.to_string(),
                                s.fme_est.0.to_string(),
                                s.fme_est.1.to_string(),
                                s.sot.0.to_string(),
                                s.sot.1.to_string(),
                            ]
                        })
                    });
                    let header = [
                        "arm", "trial", "n", "fme_true_mean", "fme_true_ci", "fme_est_mean", "fme_est_ci", "sot_mean",
                        "sot_ci",
                    ];
                    write_csv_records(&p, &header, rows)?;
                    files.push(p);

                    let p = dir.join("thresholds.csv");
                    let rows = arms.iter().flat_map(|(arm, runs)| {
                        runs.iter().zip(thresholds(runs, threshold)).map(move |(m, (t, c))| {
                            vec![arm.clone(), m.run.to_string(), t.to_string(), c.to_string()]
                        })
                    });
                    write_csv_records(&p, &["arm", "run", "trials", "censored"], rows)?;
                    files.push(p);
                }
                match outcome {
                    Outcome::Ucm { phases, .. } => {
                        let p = dir.join("ucm.csv");
                        let rows = phases.iter().map(|s| {
                            vec![
                                s.group.clone(),
                                s.phase.to_string(),
                                s.n_runs.to_string(),
                                s.mean.to_string(),
                                s.ci_low.to_string(),
                                s.ci_high.to_string(),
                            ]
                        });
                        write_csv_records(&p, &["group", "phase", "n_runs", "mean", "ci_low", "ci_high"], rows)?;
                        files.push(p);
                    }
                    Outcome::Filters { bench } => {
                        let p = dir.join("filters.csv");
                        let rows = (0..bench.pf.len()).map(|i| {
                            vec![i.to_string(), bench.ekf[i].to_string(), bench.ukf[i].to_string(), bench.pf[i].to_string()]
                        });
                        write_csv_records(&p, &["run", "ekf", "ukf", "pf"], rows)?;
                        files.push(p);
                    }
                    _ => {}
                }
            }
            Format::Svg => {
                if arms.is_empty() {
                    continue;
                }
                let all: Vec<(String, Vec<SeriesPoint>)> = arms.iter().map(|(a, r)| (a.clone(), series(r))).collect();
                for (name, ylabel, pick) in [
                    ("fme.svg", "FME", (|s: &SeriesPoint| s.fme_true) as fn(&SeriesPoint) -> (f64, f64)),
                    ("fme_est.svg", "estimated FME", |s: &SeriesPoint| s.fme_est),
                    ("sot.svg", "SoT", |s: &SeriesPoint| s.sot),
                ] {
                    let lines: Vec<(String, Vec<(f64, f64, f64)>)> = all
                        .iter()
                        .map(|(a, ser)| {
                            let pts = ser.iter().map(|s| {
                                let (m, c) = pick(s);
                                (s.trial as f64, m, c)
                            });
                            (a.clone(), pts.collect())
                        })
                        .collect();
                    let p = dir.join(name);
                    write_text(&p, &band_plot(&lines, "trial", ylabel))?;
                    files.push(p);
                }
            }
        }
    }
    Ok(files)
}

const COLORS: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#17becf"];

/// Line plot of `mean` with a shaded `mean +/- ci` band per series.
/// Points are `(x, mean, ci)`.
pub fn band_plot(series: &[(String, Vec<(f64, f64, f64)>)], xlabel: &str, ylabel: &str) -> String {
    let (w, h) = (720.0, 440.0);
    let (left, right, top, bottom) = (60.0, 170.0, 20.0, 45.0);
    let finite = |v: f64| v.is_finite();
    let pts = series.iter().flat_map(|(_, p)| p.iter());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, 0.0f64, f64::NEG_INFINITY);
    for &(x, m, c) in pts {
        if finite(x) && finite(m) && finite(c) {
            x0 = x0.min(x);
            x1 = x1.max(x);
            y0 = y0.min(m - c);
            y1 = y1.max(m + c);
        }
    }
    if !(x1 > x0) {
        x1 = x0 + 1.0;
    }
    if !x0.is_finite() {
        (x0, x1) = (0.0, 1.0);
    }
    if !(y1 > y0) {
        y1 = y0 + 1.0;
    }
    let sx = |x: f64| left + (x - x0) / (x1 - x0) * (w - left - right);
    let sy = |y: f64| h - bottom - (y - y0) / (y1 - y0) * (h - top - bottom);

    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let (ax0, ax1, ay0, ay1) = (sx(x0), sx(x1), sy(y0), sy(y1));
    let _ = writeln!(s, r#"<path d="M{ax0:.1},{ay1:.1}V{ay0:.1}H{ax1:.1}" fill="none" stroke="black"/>"#);
    for k in 0..=4 {
        let y = y0 + (y1 - y0) * k as f64 / 4.0;
        let x = x0 + (x1 - x0) * k as f64 / 4.0;
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{:.3}</text>"#, ax0 - 6.0, sy(y) + 4.0, y);
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{:.0}</text>"#, sx(x), ay0 + 16.0, x);
    }
    let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{xlabel}</text>"#, (ax0 + ax1) / 2.0, h - 8.0);
    let _ = writeln!(
        s,
        r#"<text x="14" y="{:.1}" text-anchor="middle" transform="rotate(-90 14 {:.1})">{ylabel}</text>"#,
        (ay0 + ay1) / 2.0,
        (ay0 + ay1) / 2.0
    );
    for (i, (label, p)) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let p: Vec<&(f64, f64, f64)> = p.iter().filter(|(x, m, c)| finite(*x) && finite(*m) && finite(*c)).collect();
        if p.is_empty() {
            continue;
        }
        let upper = p.iter().map(|(x, m, c)| format!("{:.2},{:.2}", sx(*x), sy(m + c)));
        let lower = p.iter().rev().map(|(x, m, c)| format!("{:.2},{:.2}", sx(*x), sy(m - c)));
        let band: Vec<String> = upper.chain(lower).collect();
        let _ = writeln!(s, r#"<polygon points="{}" fill="{color}" fill-opacity="0.2" stroke="none"/>"#, band.join(" "));
        let line: Vec<String> = p.iter().map(|(x, m, _)| format!("{:.2},{:.2}", sx(*x), sy(*m))).collect();
        let _ = writeln!(s, r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#, line.join(" "));
        let ly = top + 16.0 * i as f64 + 8.0;
        let lx = w - right + 12.0;
        let _ = writeln!(s, r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="3"/>"#, lx + 18.0);
        let _ = writeln!(s, r#"<text x="{}" y="{}">{}</text>"#, lx + 24.0, ly + 4.0, escape(label));
    }
    s.push_str("</svg>\n");
    s
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Loads an outcome written in JSON form.
pub fn read_outcome(path: &Path) -> Result<Outcome, HarnessError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    serde_json::from_str(&text).map_err(|e| io_err(path, e))
}
