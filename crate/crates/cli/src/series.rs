//! CSV emission of monitor series and result tables.
//!
//! Every CSV starts with one comment line `# config_hash=<hex>; grid=<desc>`,
//! then a header row. Numbers are printed like C's `%.17g`, which round-trips
//! binary64 exactly. Wall time is kept out of CSVs so that they stay
//! byte-identical across runs.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use krflow::{MonitorRecord, MONITOR_COLUMNS};

/// `printf("%.17g", x)`.
pub fn fmt_g17(x: f64) -> String {
    const P: i32 = 17;
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return if x.is_sign_negative() {
            "-0".into()
        } else {
            "0".into()
        };
    }
    let sci = format!("{:.*e}", (P - 1) as usize, x);
    let (mant, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    let trim = |s: &str| -> String {
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s.to_string()
        }
    };
    if exp < -4 || exp >= P {
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{}e{}{:02}", trim(mant), sign, exp.abs())
    } else {
        trim(&format!("{:.*}", (P - 1 - exp) as usize, x))
    }
}

/// Parse a number written by [`fmt_g17`].
pub fn parse_g17(s: &str) -> Option<f64> {
    s.trim().parse().ok()
}

/// Run metadata. The config hash and grid are written into the CSV; the wall
/// time only into the run manifest.
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesMeta {
    pub config_hash: String,
    pub grid: String,
    pub wall_time: Option<f64>,
}

impl SeriesMeta {
    pub fn preamble(&self) -> String {
        format!("# config_hash={}; grid={}\n", self.config_hash, self.grid)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MonitorSeries {
    pub records: Vec<MonitorRecord>,
    pub meta: SeriesMeta,
}

#[derive(Debug, thiserror::Error)]
pub enum SeriesError {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("monitor times must increase strictly: t = {prev} followed by t = {next}")]
    NonIncreasing { prev: f64, next: f64 },
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
}

impl MonitorSeries {
    pub fn new(records: Vec<MonitorRecord>, meta: SeriesMeta) -> Result<Self, SeriesError> {
        for w in records.windows(2) {
            if !(w[1].t > w[0].t) {
                return Err(SeriesError::NonIncreasing {
                    prev: w[0].t,
                    next: w[1].t,
                });
            }
        }
        Ok(Self { records, meta })
    }
}

/// Header row plus formatted rows, with the hash preamble.
pub fn render_table(meta: &SeriesMeta, columns: &[&str], rows: &[Vec<String>]) -> String {
    let mut out = meta.preamble();
    out.push_str(&columns.join(","));
    out.push('\n');
    for r in rows {
        debug_assert_eq!(r.len(), columns.len());
        out.push_str(&r.join(","));
        out.push('\n');
    }
    out
}

pub fn render_series(series: &MonitorSeries) -> String {
    let rows: Vec<Vec<String>> = series
        .records
        .iter()
        .map(|r| r.values().iter().map(|&v| fmt_g17(v)).collect())
        .collect();
    render_table(&series.meta, &MONITOR_COLUMNS, &rows)
}

/// Path of the plot script that accompanies `csv`.
pub fn plot_script_path(csv: &Path) -> PathBuf {
    let stem = csv.file_stem().and_then(|s| s.to_str()).unwrap_or("series");
    csv.with_file_name(format!("{stem}_plot.py"))
}

/// Plot script reading the CSV by column name.
pub fn plot_script(csv_name: &str, meta: &SeriesMeta) -> String {
    format!(
        r##"# config_hash={hash}; grid={grid}
# Standard plots for {csv_name}. Usage: python3 {stem}_plot.py
import csv
import os

import matplotlib.pyplot as plt

here = os.path.dirname(os.path.abspath(__file__))
with open(os.path.join(here, "{csv_name}")) as fh:
    rows = [r for r in csv.DictReader(line for line in fh if not line.startswith("#"))]
col = lambda name: [float(r[name]) for r in rows]
t = col("t")

fig, ax = plt.subplots(1, 3, figsize=(15, 4))
ax[0].semilogy(t, col("fiber_norm_sup"))
ax[0].set_title("fiber collapse: sup g_zz")
ax[0].set_xlabel("t")
ax[1].semilogy(t, [abs(v) for v in col("dphi_sup")], label="sup dphi/dt")
ax[1].semilogy(t, [abs(v) for v in col("dphi_region_sup")], label="sup dphi/dt on region")
ax[1].set_title("dphi/dt decay")
ax[1].legend()
ax[2].plot(t, col("r_min"), label="R min")
ax[2].plot(t, col("r_max"), label="R max")
ax[2].set_title("scalar curvature bounds")
ax[2].legend()
fig.tight_layout()
fig.savefig(os.path.join(here, "{stem}.png"), dpi=120)
"##,
        hash = meta.config_hash,
        grid = meta.grid,
        stem = csv_name.trim_end_matches(".csv"),
    )
}

/// Write the series CSV and its plot script; returns both paths.
pub fn emit_series(series: &MonitorSeries, path: &Path) -> Result<(PathBuf, PathBuf), SeriesError> {
    fs::write(path, render_series(series))?;
    let script = plot_script_path(path);
    let name = path
        .file_name()
        .and_then(|s| s.to_str())
        .unwrap_or("series.csv");
    fs::write(&script, plot_script(name, &series.meta))?;
    Ok((path.to_path_buf(), script))
}

/// Split a hashed CSV into (hash, grid, header, rows).
pub fn parse_table(
    text: &str,
) -> Result<(String, String, Vec<String>, Vec<Vec<String>>), SeriesError> {
    let mut lines = text.lines();
    let first = lines.next().ok_or(SeriesError::Parse {
        line: 1,
        reason: "empty file".into(),
    })?;
    let body = first
        .strip_prefix("# config_hash=")
        .ok_or(SeriesError::Parse {
            line: 1,
            reason: "missing config hash comment".into(),
        })?;
    let (hash, grid) = body.split_once("; grid=").ok_or(SeriesError::Parse {
        line: 1,
        reason: "missing grid description".into(),
    })?;
    let header: Vec<String> = lines
        .next()
        .ok_or(SeriesError::Parse {
            line: 2,
            reason: "missing header".into(),
        })?
        .split(',')
        .map(str::to_string)
        .collect();
    let mut rows = Vec::new();
    for (k, l) in lines.enumerate() {
        let row: Vec<String> = l.split(',').map(str::to_string).collect();
        if row.len() != header.len() {
            return Err(SeriesError::Parse {
                line: k + 3,
                reason: format!("{} fields, header has {}", row.len(), header.len()),
            });
        }
        rows.push(row);
    }
    Ok((hash.to_string(), grid.to_string(), header, rows))
}

pub fn parse_series(text: &str) -> Result<MonitorSeries, SeriesError> {
    let (config_hash, grid, header, rows) = parse_table(text)?;
    if header != MONITOR_COLUMNS {
        return Err(SeriesError::Parse {
            line: 2,
            reason: format!("unexpected header {header:?}"),
        });
    }
    let mut records = Vec::with_capacity(rows.len());
    for (k, row) in rows.iter().enumerate() {
        let vals = row
            .iter()
            .map(|s| {
                parse_g17(s).ok_or(SeriesError::Parse {
                    line: k + 3,
                    reason: format!("bad number {s:?}"),
                })
            })
            .collect::<Result<Vec<f64>, _>>()?;
        records.push(
            MonitorRecord::from_values(&vals).map_err(|e| SeriesError::Parse {
                line: k + 3,
                reason: e.to_string(),
            })?,
        );
    }
    MonitorSeries::new(
        records,
        SeriesMeta {
            config_hash,
            grid,
            wall_time: None,
        },
    )
}

pub fn read_series(path: &Path) -> Result<MonitorSeries, SeriesError> {
    parse_series(&fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn g17_matches_printf() {
        let cases: [(f64, &str); 12] = [
            (1.0, "1"),
            (0.1, "0.10000000000000001"),
            (-2.5, "-2.5"),
            (1e-5, "1.0000000000000001e-05"),
            (1.5e-4, "0.00014999999999999999"),
            (123456.0, "123456"),
            (1e17, "1e+17"),
            (1e16, "10000000000000000"),
            (std::f64::consts::PI, "3.1415926535897931"),
            (6.02214076e23, "6.0221407599999999e+23"),
            (f64::MIN_POSITIVE, "2.2250738585072014e-308"),
            (-0.0, "-0"),
        ];
        for (x, want) in cases {
            assert_eq!(fmt_g17(x), want, "{x:e}");
        }
    }

    #[test]
    fn g17_roundtrips() {
        let mut x = 1.234e-300f64;
        while x < 1e300 {
            for v in [x, -x, x * (1.0 + f64::EPSILON), 1.0 / x] {
                assert_eq!(parse_g17(&fmt_g17(v)).unwrap().to_bits(), v.to_bits());
            }
            x *= 7.77;
        }
    }

    #[test]
    fn decreasing_times_are_rejected() {
        let meta = SeriesMeta {
            config_hash: "x".into(),
            grid: "g".into(),
            wall_time: None,
        };
        let a = MonitorRecord {
            t: 1.0,
            ..Default::default()
        };
        let b = MonitorRecord {
            t: 1.0,
            ..Default::default()
        };
        assert!(MonitorSeries::new(vec![a, b], meta).is_err());
    }
}
