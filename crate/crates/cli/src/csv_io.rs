//! CSV formats: datasets, risk tables, family manifests and campaign results.
//!
//! Floats are written as `{:.16e}` (17 significant digits), which parses back
//! to the same bits.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use causal_risk_core::candidates::CandidateFamily;
use causal_risk_core::risks::RiskTable;
use causal_risk_core::{Dataset, Matrix, Oracle};

use crate::error::{CliError, Result};

pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

fn csv_writer<W: Write>(w: W) -> csv::Writer<W> {
    csv::WriterBuilder::new()
        .has_headers(false)
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(w)
}

fn csv_to_io(e: csv::Error) -> std::io::Error {
    match e.into_kind() {
        csv::ErrorKind::Io(e) => e,
        other => std::io::Error::other(format!("{other:?}")),
    }
}

/// Writes `body` to `path` through a buffered file.
pub fn write_file(
    path: &Path,
    body: impl FnOnce(&mut dyn Write) -> std::io::Result<()>,
) -> Result<()> {
    let file = File::create(path).map_err(|e| CliError::io(path, e))?;
    let mut w = BufWriter::new(file);
    body(&mut w)
        .and_then(|_| w.flush())
        .map_err(|e| CliError::io(path, e))
}

pub fn write_dataset<W: Write>(w: W, data: &Dataset) -> std::io::Result<()> {
    let mut out = csv_writer(w);
    let d = data.dim();
    let mut header: Vec<String> = (0..d).map(|j| format!("x_{j}")).collect();
    header.extend(["a", "y"].map(String::from));
    if data.oracle.is_some() {
        header.extend(["mu_0", "mu_1", "e", "cate"].map(String::from));
    }
    out.write_record(&header).map_err(csv_to_io)?;
    let mut rec: Vec<String> = Vec::with_capacity(header.len());
    for i in 0..data.n() {
        rec.clear();
        rec.extend(data.x.row(i).iter().map(|&v| fmt_f64(v)));
        rec.push(if data.treatment[i] { "1" } else { "0" }.into());
        rec.push(fmt_f64(data.y[i]));
        if let Some(o) = &data.oracle {
            rec.extend([o.mu0[i], o.mu1[i], o.e[i], o.cate[i]].map(fmt_f64));
        }
        out.write_record(&rec).map_err(csv_to_io)?;
    }
    out.flush()
}

pub fn save_dataset(path: &Path, data: &Dataset) -> Result<()> {
    write_file(path, |w| write_dataset(w, data))
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let file = File::open(path).map_err(|e| CliError::io(path, e))?;
    read_dataset(file, path)
}

struct Columns {
    x: Vec<usize>,
    a: usize,
    y: usize,
    mu0: Option<usize>,
    mu1: Option<usize>,
    e: Option<usize>,
    cate: Option<usize>,
}

fn locate_columns(header: &csv::StringRecord, origin: &Path) -> Result<Columns> {
    let find = |name: &str| header.iter().position(|h| h.trim() == name);
    let mut xs: Vec<(usize, usize)> = Vec::new();
    for (pos, h) in header.iter().enumerate() {
        if let Some(idx) = h
            .trim()
            .strip_prefix("x_")
            .and_then(|s| s.parse::<usize>().ok())
        {
            if xs.iter().any(|&(i, _)| i == idx) {
                return Err(CliError::data(origin, format!("duplicate column x_{idx}")));
            }
            xs.push((idx, pos));
        }
    }
    if xs.is_empty() {
        return Err(CliError::data(origin, "missing covariate columns x_0.."));
    }
    xs.sort_unstable();
    let need = |name: &str| {
        find(name).ok_or_else(|| CliError::data(origin, format!("missing column {name}")))
    };
    Ok(Columns {
        x: xs.into_iter().map(|(_, p)| p).collect(),
        a: need("a")?,
        y: need("y")?,
        mu0: find("mu_0"),
        mu1: find("mu_1"),
        e: find("e"),
        cate: find("cate"),
    })
}

fn parse_cell(
    rec: &csv::StringRecord,
    col: usize,
    name: &str,
    line: u64,
    origin: &Path,
) -> Result<f64> {
    let raw = rec.get(col).unwrap_or("").trim();
    match raw.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(CliError::Csv {
            path: origin.into(),
            line,
            msg: format!("column {name}: expected a finite number, got {raw:?}"),
        }),
    }
}

/// Reads a dataset CSV. Column order is free; `x_*` columns are ordered by
/// index. Oracle columns are used only when `mu_0`, `mu_1` and `e` are all
/// present and filled on every row; `cate` is derived from them.
pub fn read_dataset<R: Read>(r: R, origin: &Path) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(r);
    let header = reader
        .headers()
        .map_err(|e| CliError::Csv {
            path: origin.into(),
            line: 1,
            msg: e.to_string(),
        })?
        .clone();
    let cols = locate_columns(&header, origin)?;
    let d = cols.x.len();
    let oracle_cols = match (cols.mu0, cols.mu1, cols.e) {
        (Some(m0), Some(m1), Some(e)) => Some((m0, m1, e)),
        _ => None,
    };
    let (mut xs, mut a, mut y) = (Vec::new(), Vec::new(), Vec::new());
    let (mut mu0, mut mu1, mut e, mut cate) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    let mut oracle_complete = oracle_cols.is_some();
    for rec in reader.records() {
        let rec = rec.map_err(|err| CliError::Csv {
            path: origin.into(),
            line: err.position().map_or(0, |p| p.line()),
            msg: err.to_string(),
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        for &c in &cols.x {
            xs.push(parse_cell(&rec, c, &header[c], line, origin)?);
        }
        let raw_a = rec.get(cols.a).unwrap_or("").trim();
        a.push(match raw_a.parse::<f64>() {
            Ok(v) if v == 0.0 => false,
            Ok(v) if v == 1.0 => true,
            _ => {
                return Err(CliError::Csv {
                    path: origin.into(),
                    line,
                    msg: format!("column a: expected 0 or 1, got {raw_a:?}"),
                })
            }
        });
        y.push(parse_cell(&rec, cols.y, "y", line, origin)?);
        if let (true, Some((c0, c1, ce))) = (oracle_complete, oracle_cols) {
            let cell = |c: usize| {
                rec.get(c)
                    .and_then(|s| s.trim().parse::<f64>().ok())
                    .filter(|v| v.is_finite())
            };
            match (cell(c0), cell(c1), cell(ce)) {
                (Some(m0), Some(m1), Some(ev)) => {
                    if !(ev > 0.0 && ev < 1.0) {
                        return Err(CliError::Csv {
                            path: origin.into(),
                            line,
                            msg: format!("column e: propensity {ev} outside (0, 1)"),
                        });
                    }
                    mu0.push(m0);
                    mu1.push(m1);
                    e.push(ev);
                    cate.push(cols.cate.and_then(cell));
                }
                _ => {
                    log::warn!(
                        "{}: incomplete oracle columns at line {line}; ignoring ground truth",
                        origin.display()
                    );
                    oracle_complete = false;
                }
            }
        }
    }
    let n = y.len();
    if n == 0 {
        return Err(CliError::data(origin, "no data rows"));
    }
    let oracle = if oracle_complete {
        let o = Oracle::from_responses(mu0, mu1, e);
        for (i, stored) in cate.iter().enumerate() {
            if let Some(c) = stored {
                if (c - o.cate[i]).abs() > 1e-9 * c.abs().max(1.0) {
                    return Err(CliError::data(
                        origin,
                        format!("column cate: row {i} differs from mu_1 - mu_0"),
                    ));
                }
            }
        }
        Some(o)
    } else {
        None
    };
    let x = Matrix::new(n, d, xs)?;
    Ok(Dataset::new(x, a, y, oracle, None)?)
}

pub fn write_risk_table<W: Write>(w: W, table: &RiskTable) -> std::io::Result<()> {
    let mut out = csv_writer(w);
    out.write_record(["candidate_id", "risk_name", "nuisance_mode", "value"])
        .map_err(csv_to_io)?;
    for e in &table.entries {
        out.write_record([
            e.candidate_id.as_str(),
            e.risk.as_str(),
            e.mode.as_str(),
            &fmt_f64(e.value),
        ])
        .map_err(csv_to_io)?;
    }
    out.flush()
}

pub fn write_manifest<W: Write>(w: W, family: &CandidateFamily) -> std::io::Result<()> {
    let mut out = csv_writer(w);
    out.write_record(["id", "meta", "params"])
        .map_err(csv_to_io)?;
    for m in &family.members {
        out.write_record([m.id.as_str(), m.meta.as_str(), &m.params()])
            .map_err(csv_to_io)?;
    }
    out.flush()
}

/// One agreement row of a campaign.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub instance_id: usize,
    /// Absent for file-backed datasets.
    pub theta: Option<f64>,
    pub ntv: f64,
    pub procedure: String,
    pub risk_name: String,
    pub nuisance_mode: String,
    pub kendall: f64,
    pub relative_kendall: f64,
    pub excess_tau_risk: f64,
    pub selected_candidate: String,
}

pub const RESULT_HEADER: [&str; 10] = [
    "instance_id",
    "theta",
    "ntv",
    "procedure",
    "risk_name",
    "nuisance_mode",
    "kendall",
    "relative_kendall",
    "excess_tau_risk",
    "selected_candidate",
];

pub fn write_results<W: Write>(w: W, rows: &[ResultRow]) -> std::io::Result<()> {
    let mut out = csv_writer(w);
    out.write_record(RESULT_HEADER).map_err(csv_to_io)?;
    for r in rows {
        out.write_record([
            r.instance_id.to_string(),
            fmt_opt(r.theta),
            fmt_f64(r.ntv),
            r.procedure.clone(),
            r.risk_name.clone(),
            r.nuisance_mode.clone(),
            fmt_f64(r.kendall),
            fmt_f64(r.relative_kendall),
            fmt_f64(r.excess_tau_risk),
            r.selected_candidate.clone(),
        ])
        .map_err(csv_to_io)?;
    }
    out.flush()
}

/// One row of a split-ratio sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepResultRow {
    pub instance_id: usize,
    pub theta: Option<f64>,
    pub ntv: f64,
    pub ratio: f64,
    pub metric: String,
    pub value: f64,
    pub selected_candidate: String,
}

pub const SWEEP_HEADER: [&str; 7] = [
    "instance_id",
    "theta",
    "ntv",
    "ratio",
    "metric",
    "value",
    "selected_candidate",
];

pub fn write_sweep<W: Write>(w: W, rows: &[SweepResultRow]) -> std::io::Result<()> {
    let mut out = csv_writer(w);
    out.write_record(SWEEP_HEADER).map_err(csv_to_io)?;
    for r in rows {
        out.write_record([
            r.instance_id.to_string(),
            fmt_opt(r.theta),
            fmt_f64(r.ntv),
            fmt_f64(r.ratio),
            r.metric.clone(),
            fmt_f64(r.value),
            r.selected_candidate.clone(),
        ])
        .map_err(csv_to_io)?;
    }
    out.flush()
}

/// Reads back a results file written by [`write_results`].
pub fn read_results(path: &Path) -> Result<Vec<ResultRow>> {
    let file = File::open(path).map_err(|e| CliError::io(path, e))?;
    let mut reader = csv::Reader::from_reader(file);
    let mut rows = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| CliError::Csv {
            path: path.into(),
            line: e.position().map_or(0, |p| p.line()),
            msg: e.to_string(),
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        let bad = |what: &str| CliError::Csv {
            path: path.into(),
            line,
            msg: format!("column {what}: malformed value"),
        };
        let num = |i: usize, what: &str| {
            rec.get(i)
                .and_then(|s| s.parse::<f64>().ok())
                .ok_or_else(|| bad(what))
        };
        if rec.len() != RESULT_HEADER.len() {
            return Err(bad("count"));
        }
        rows.push(ResultRow {
            instance_id: rec[0].parse().map_err(|_| bad("instance_id"))?,
            theta: if rec[1].is_empty() {
                None
            } else {
                Some(num(1, "theta")?)
            },
            ntv: num(2, "ntv")?,
            procedure: rec[3].to_string(),
            risk_name: rec[4].to_string(),
            nuisance_mode: rec[5].to_string(),
            kendall: num(6, "kendall")?,
            relative_kendall: num(7, "relative_kendall")?,
            excess_tau_risk: num(8, "excess_tau_risk")?,
            selected_candidate: rec[9].to_string(),
        });
    }
    Ok(rows)
}
