//! Reading and writing accuracy tables.
//!
//! Required columns are `model_id, ref_dataset, ref_accuracy, shift_name,
//! shift_accuracy, m_ref, m_shift`; any `meta_*` column becomes a metadata
//! entry keyed without the prefix. Other columns are ignored.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::table::{emit_csv, Cell, Table};
use crate::numerics::Probability;
use crate::trend::AccuracyRecord;

pub const REQUIRED_COLUMNS: [&str; 7] = [
    "model_id",
    "ref_dataset",
    "ref_accuracy",
    "shift_name",
    "shift_accuracy",
    "m_ref",
    "m_shift",
];

const META_PREFIX: &str = "meta_";

/// A rejected row. `line` is the 1-based line in the file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RowError {
    pub line: u64,
    pub message: String,
}

impl fmt::Display for RowError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}: {}", self.line, self.message)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Ingested {
    pub records: Vec<AccuracyRecord>,
    pub errors: Vec<RowError>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Op {
    Eq,
    Ne,
}

/// Conjunction of `key=value` / `key!=value` terms separated by commas.
/// Keys are column names; `meta_x` and `x` both address metadata key `x`.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct FilterExpr {
    terms: Vec<(String, Op, String)>,
}

impl FilterExpr {
    pub fn parse(expr: &str) -> Result<Self> {
        let mut terms = Vec::new();
        for raw in expr.split(',') {
            let t = raw.trim();
            if t.is_empty() {
                continue;
            }
            let (key, op, value) = if let Some((k, v)) = t.split_once("!=") {
                (k, Op::Ne, v)
            } else if let Some((k, v)) = t.split_once('=') {
                (k, Op::Eq, v)
            } else {
                return Err(Error::Config(vec![format!("filter term {t:?} has no '=' or '!='")]));
            };
            let key = key.trim();
            if key.is_empty() {
                return Err(Error::Config(vec![format!("filter term {t:?} has an empty key")]));
            }
            terms.push((key.to_owned(), op, value.trim().to_owned()));
        }
        Ok(Self { terms })
    }

    pub fn matches(&self, rec: &AccuracyRecord) -> bool {
        self.terms.iter().all(|(key, op, want)| {
            let got = match key.as_str() {
                "model_id" => Some(rec.model_id.as_str()),
                "ref_dataset" => Some(rec.ref_dataset.as_str()),
                "shift_name" => Some(rec.shift_name.as_str()),
                k => rec
                    .metadata
                    .get(k.strip_prefix(META_PREFIX).unwrap_or(k))
                    .map(String::as_str),
            };
            match op {
                Op::Eq => got == Some(want.as_str()),
                Op::Ne => got != Some(want.as_str()),
            }
        })
    }
}

/// Reads `path`, keeping well-formed rows that match `filter_expr` in file
/// order. Malformed rows are reported and skipped; a missing file or
/// required column fails the whole read.
pub fn ingest_accuracies(path: &Path, filter_expr: &str) -> Result<Ingested> {
    let filter = FilterExpr::parse(filter_expr)?;
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new().flexible(true).from_reader(file);
    let header = reader
        .headers()
        .map_err(|e| Error::Csv { path: path.into(), source: e })?
        .clone();
    let col = |name: &str| header.iter().position(|h| h.trim() == name);
    let mut missing = Vec::new();
    let mut idx = [0usize; 7];
    for (slot, name) in idx.iter_mut().zip(REQUIRED_COLUMNS) {
        match col(name) {
            Some(i) => *slot = i,
            None => missing.push(format!("{}: line 1: missing required column {name}", path.display())),
        }
    }
    if !missing.is_empty() {
        return Err(Error::Config(missing));
    }
    let meta: Vec<(usize, String)> = header
        .iter()
        .enumerate()
        .filter_map(|(i, h)| h.trim().strip_prefix(META_PREFIX).map(|k| (i, k.to_owned())))
        .collect();

    let mut out = Ingested::default();
    for row in reader.records() {
        let row = match row {
            Ok(r) => r,
            Err(e) => {
                let line = e.position().map_or(0, |p| p.line());
                out.errors.push(RowError { line, message: e.to_string() });
                continue;
            }
        };
        let line = row.position().map_or(0, |p| p.line());
        match parse_row(&row, &idx, &meta, header.len()) {
            Ok(rec) => {
                if filter.matches(&rec) {
                    out.records.push(rec);
                }
            }
            Err(problems) => out.errors.extend(
                problems.into_iter().map(|message| RowError { line, message }),
            ),
        }
    }
    Ok(out)
}

fn parse_row(
    row: &csv::StringRecord,
    idx: &[usize; 7],
    meta: &[(usize, String)],
    width: usize,
) -> std::result::Result<AccuracyRecord, Vec<String>> {
    if row.len() != width {
        return Err(vec![format!("expected {width} fields, found {}", row.len())]);
    }
    let field = |i: usize| row.get(idx[i]).unwrap_or("").trim();
    let mut problems = Vec::new();
    let mut text = |i: usize| {
        let v = field(i);
        if v.is_empty() {
            problems.push(format!("{} is empty", REQUIRED_COLUMNS[i]));
        }
        v.to_owned()
    };
    let model_id = text(0);
    let ref_dataset = text(1);
    let shift_name = text(3);

    let mut acc = |i: usize| -> Option<Probability> {
        let name = REQUIRED_COLUMNS[i];
        let raw = field(i);
        match raw.parse::<f64>() {
            Ok(v) if v.is_finite() => match Probability::new(v) {
                Ok(p) => Some(p),
                Err(_) => {
                    problems.push(format!("{name} = {raw} is outside [0, 1]"));
                    None
                }
            },
            _ => {
                problems.push(format!("{name} = {raw:?} is not a number"));
                None
            }
        }
    };
    let ref_accuracy = acc(2);
    let shift_accuracy = acc(4);
    let mut count = |i: usize| -> Option<u64> {
        let name = REQUIRED_COLUMNS[i];
        let raw = field(i);
        match raw.parse::<u64>() {
            Ok(v) if v > 0 => Some(v),
            _ => {
                problems.push(format!("{name} = {raw:?} is not a positive integer"));
                None
            }
        }
    };
    let m_ref = count(5);
    let m_shift = count(6);
    if !problems.is_empty() {
        return Err(problems);
    }
    let metadata: BTreeMap<String, String> = meta
        .iter()
        .map(|(i, k)| (k.clone(), row.get(*i).unwrap_or("").to_owned()))
        .collect();
    Ok(AccuracyRecord {
        model_id,
        ref_dataset,
        ref_accuracy: ref_accuracy.expect("checked"),
        shift_name,
        shift_accuracy: shift_accuracy.expect("checked"),
        m_ref: m_ref.expect("checked"),
        m_shift: m_shift.expect("checked"),
        metadata,
    })
}

/// Canonical table for `records`: required columns, then the union of
/// metadata keys in sorted order.
pub fn accuracy_table(records: &[AccuracyRecord]) -> Table {
    let mut keys: Vec<&String> = records.iter().flat_map(|r| r.metadata.keys()).collect();
    keys.sort();
    keys.dedup();
    let meta_cols: Vec<String> = keys.iter().map(|k| format!("{META_PREFIX}{k}")).collect();
    let mut header: Vec<&str> = REQUIRED_COLUMNS.to_vec();
    header.extend(meta_cols.iter().map(String::as_str));
    let mut t = Table::new(&header);
    for r in records {
        let mut row: Vec<Cell> = vec![
            r.model_id.as_str().into(),
            r.ref_dataset.as_str().into(),
            r.ref_accuracy.value().into(),
            r.shift_name.as_str().into(),
            r.shift_accuracy.value().into(),
            r.m_ref.into(),
            r.m_shift.into(),
        ];
        row.extend(
            keys.iter()
                .map(|k| r.metadata.get(*k).map_or(Cell::Empty, |v| v.as_str().into())),
        );
        t.push(row);
    }
    t
}

pub fn write_accuracies(records: &[AccuracyRecord], path: &Path) -> Result<()> {
    emit_csv(&accuracy_table(records), path)
}
