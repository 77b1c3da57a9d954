//! CSV input and output keyed by agent id.
//!
//! Input tables carry a header row whose first column is `id`; ids must
//! cover `0..n` exactly once, in any order. Lines starting with `#` are
//! ignored. Numbers are written with 17 significant digits.

use std::fs::{self, File};
use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::network::Coordinates;

/// Columns of an id-keyed table, rows ordered by id.
#[derive(Debug, Clone, PartialEq)]
pub struct IdTable {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl IdTable {
    pub fn n(&self) -> usize {
        self.rows.len()
    }

    pub fn column(&self, c: usize) -> Vec<f64> {
        self.rows.iter().map(|r| r[c]).collect()
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

/// Read an `id,<col>...` table with `expected` value columns (any number if `None`).
pub fn read_id_table(path: &Path, expected: Option<usize>) -> Result<IdTable> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    parse_id_table(&text, expected).map_err(|e| match e {
        Error::Parse { line, msg, .. } => parse_err(path, line, msg),
        other => other,
    })
}

pub fn parse_id_table(text: &str, expected: Option<usize>) -> Result<IdTable> {
    let here = Path::new("<input>");
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header = reader.headers()?.clone();
    if header.get(0) != Some("id") {
        return Err(parse_err(here, 1, "first header column must be `id`"));
    }
    let columns: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
    if columns.is_empty() {
        return Err(parse_err(here, 1, "no value columns"));
    }
    if let Some(k) = expected {
        if columns.len() != k {
            return Err(parse_err(here, 1, format!("expected {k} value column(s), found {}", columns.len())));
        }
    }
    let mut keyed: Vec<(usize, usize, Vec<f64>)> = Vec::new();
    for record in reader.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        if record.len() != columns.len() + 1 {
            return Err(parse_err(here, line, format!("expected {} fields, found {}", columns.len() + 1, record.len())));
        }
        let id: usize = record[0]
            .parse()
            .map_err(|_| parse_err(here, line, format!("invalid id `{}`", &record[0])))?;
        let values = record
            .iter()
            .skip(1)
            .map(|f| {
                f.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| parse_err(here, line, format!("invalid number `{f}`")))
            })
            .collect::<Result<Vec<f64>>>()?;
        keyed.push((id, line, values));
    }
    let n = keyed.len();
    let mut rows: Vec<Option<Vec<f64>>> = vec![None; n];
    for (id, line, values) in keyed {
        if id >= n {
            return Err(parse_err(here, line, format!("id {id} out of range for {n} rows")));
        }
        if rows[id].is_some() {
            return Err(parse_err(here, line, format!("duplicate id {id}")));
        }
        rows[id] = Some(values);
    }
    Ok(IdTable {
        columns,
        rows: rows.into_iter().map(|r| r.expect("ids cover 0..n")).collect(),
    })
}

fn check_len(path: &Path, table: &IdTable, n: Option<usize>) -> Result<()> {
    match n {
        Some(n) if table.n() != n => Err(Error::Validation(format!(
            "{}: {} rows, expected {n}",
            path.display(),
            table.n()
        ))),
        _ => Ok(()),
    }
}

/// Covariate names and the `n x k` matrix.
pub fn read_covariates(path: &Path) -> Result<(Vec<String>, DMatrix<f64>)> {
    let t = read_id_table(path, None)?;
    let k = t.columns.len();
    let x = DMatrix::from_fn(t.n(), k, |i, j| t.rows[i][j]);
    Ok((t.columns, x))
}

pub fn read_coords(path: &Path) -> Result<Coordinates> {
    let t = read_id_table(path, Some(2))?;
    Coordinates::new(t.rows.iter().map(|r| [r[0], r[1]]).collect())
}

/// A single 0/1 column.
pub fn read_binary(path: &Path, n: Option<usize>) -> Result<Vec<bool>> {
    let t = read_id_table(path, Some(1))?;
    check_len(path, &t, n)?;
    t.rows
        .iter()
        .enumerate()
        .map(|(id, r)| match r[0] {
            v if v == 0.0 => Ok(false),
            v if v == 1.0 => Ok(true),
            v => Err(Error::Validation(format!("{}: id {id}: expected 0 or 1, found {v}", path.display()))),
        })
        .collect()
}

/// A single real column.
pub fn read_values(path: &Path, n: Option<usize>) -> Result<Vec<f64>> {
    let t = read_id_table(path, Some(1))?;
    check_len(path, &t, n)?;
    Ok(t.column(0))
}

/// Round-trip formatting with 17 significant digits.
pub fn fmt_num(v: f64) -> String {
    format!("{v:.16e}")
}

/// Write a CSV with a header; fields are written verbatim.
pub fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.flush().map_err(io_err(path))?;
    Ok(())
}

/// Write an id-keyed table of numbers.
pub fn write_id_table(path: &Path, columns: &[&str], values: &[Vec<f64>]) -> Result<()> {
    let mut header = vec!["id"];
    header.extend_from_slice(columns);
    let rows: Vec<Vec<String>> = values
        .iter()
        .enumerate()
        .map(|(i, r)| std::iter::once(i.to_string()).chain(r.iter().map(|&v| fmt_num(v))).collect())
        .collect();
    write_csv(path, &header, &rows)
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    let mut f = File::create(path).map_err(io_err(path))?;
    f.write_all(text.as_bytes()).map_err(io_err(path))
}
