//! Feature tables on disk.
//!
//! CSV: an optional `#classes,<name>,...` record fixing the class order,
//! then the header `id,label,f0,...,f{d-1}` and one row per sample. Labels
//! are class names; `__unknown__` marks open-set rows. Values are written in
//! shortest round-trip form. Row numbers in CSV errors are 1-based file lines.
//!
//! Binary (`NCMF`): `n: u64`, `d: u64`, class names, then per row the id,
//! the label as `i64` (-1 for unknown) and `d` reals.

use std::collections::{HashMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::binary::{BinReader, BinWriter, FORMAT_VERSION};
use crate::error::{Error, Result};
use crate::real::Real;
use crate::table::{FeatureTable, Label, Matrix, UNKNOWN_LABEL};

const MAGIC: &[u8; 4] = b"NCMF";
const CLASSES_TAG: &str = "#classes";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Storage {
    Csv,
    Binary,
}

impl std::str::FromStr for Storage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(Storage::Csv),
            "bin" | "binary" => Ok(Storage::Binary),
            _ => Err(Error::Configuration(format!(
                "unknown storage `{s}` (csv | binary)"
            ))),
        }
    }
}

/// Summary of a feature file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureFileHeader {
    pub format_version: u16,
    pub n_samples: usize,
    pub feature_dim: usize,
    pub class_names: Vec<String>,
    pub storage: Storage,
}

fn is_binary(bytes: &[u8]) -> bool {
    bytes.len() >= 4 && &bytes[..4] == MAGIC
}

/// Loads a CSV or `NCMF` file, detected by its first bytes.
pub fn load_features<T: Real>(
    path: impl AsRef<Path>,
    expected_dim: Option<usize>,
) -> Result<FeatureTable<T>> {
    let bytes = super::read_file(path.as_ref())?;
    let table = if is_binary(&bytes) {
        decode_binary(&bytes)?
    } else {
        let text =
            String::from_utf8(bytes).map_err(|_| Error::Format("feature CSV is not valid UTF-8".into()))?;
        parse_csv(&text, expected_dim)?
    };
    if let Some(d) = expected_dim {
        if table.dim() != d {
            return Err(Error::DimensionMismatch {
                row: 0,
                expected: d,
                found: table.dim(),
            });
        }
    }
    Ok(table)
}

pub fn inspect_features(path: impl AsRef<Path>) -> Result<FeatureFileHeader> {
    let bytes = super::read_file(path.as_ref())?;
    let storage = if is_binary(&bytes) {
        Storage::Binary
    } else {
        Storage::Csv
    };
    let table: FeatureTable<f64> = if storage == Storage::Binary {
        decode_binary(&bytes)?
    } else {
        parse_csv(&String::from_utf8_lossy(&bytes), None)?
    };
    Ok(FeatureFileHeader {
        format_version: FORMAT_VERSION,
        n_samples: table.len(),
        feature_dim: table.dim(),
        class_names: table.class_names().to_vec(),
        storage,
    })
}

pub fn save_features<T: Real>(
    table: &FeatureTable<T>,
    path: impl AsRef<Path>,
    storage: Storage,
) -> Result<()> {
    match storage {
        Storage::Csv => save_features_csv(table, path),
        Storage::Binary => save_features_binary(table, path),
    }
}

pub fn save_features_csv<T: Real>(table: &FeatureTable<T>, path: impl AsRef<Path>) -> Result<()> {
    super::write_file(path.as_ref(), encode_csv(table)?)?;
    Ok(())
}

pub fn save_features_binary<T: Real>(table: &FeatureTable<T>, path: impl AsRef<Path>) -> Result<()> {
    super::write_file(path.as_ref(), encode_binary(table))?;
    Ok(())
}

pub(crate) fn encode_csv<T: Real>(table: &FeatureTable<T>) -> Result<Vec<u8>> {
    let mut w = csv::WriterBuilder::new()
        .flexible(true)
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    let mut classes = vec![CLASSES_TAG.to_string()];
    classes.extend(table.class_names().iter().cloned());
    w.write_record(&classes)?;
    let mut header = vec!["id".to_string(), "label".to_string()];
    header.extend((0..table.dim()).map(|j| format!("f{j}")));
    w.write_record(&header)?;
    let mut record = Vec::with_capacity(table.dim() + 2);
    for i in 0..table.len() {
        record.clear();
        record.push(table.ids()[i].clone());
        record.push(table.labels()[i].name(table.class_names()).to_string());
        record.extend(table.row(i).iter().map(|v| format!("{}", v.as_f64())));
        w.write_record(&record)?;
    }
    w.into_inner()
        .map_err(|e| Error::Io(std::io::Error::other(e.to_string())))
}

pub(crate) fn parse_csv<T: Real>(text: &str, expected_dim: Option<usize>) -> Result<FeatureTable<T>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(text.as_bytes());
    let mut records = reader.records();
    let line_of = |r: &csv::StringRecord| r.position().map_or(0, |p| p.line() as usize);

    let mut first = records
        .next()
        .ok_or_else(|| Error::Format("empty feature CSV".into()))??;
    let mut declared: Option<Vec<String>> = None;
    if first.get(0) == Some(CLASSES_TAG) {
        declared = Some(first.iter().skip(1).map(str::to_string).collect());
        first = records
            .next()
            .ok_or_else(|| Error::Format("feature CSV has no header".into()))??;
    }
    if first.len() < 3 || &first[0] != "id" || &first[1] != "label" {
        return Err(Error::Format(format!(
            "line {}: header must be `id,label,f0,...`",
            line_of(&first)
        )));
    }
    let d = first.len() - 2;
    for (j, name) in first.iter().skip(2).enumerate() {
        if name != format!("f{j}") {
            return Err(Error::Format(format!(
                "line {}: feature column {j} is named `{name}`, expected `f{j}`",
                line_of(&first)
            )));
        }
    }
    if let Some(e) = expected_dim {
        if e != d {
            return Err(Error::DimensionMismatch {
                row: line_of(&first),
                expected: e,
                found: d,
            });
        }
    }

    let mut class_names = declared.clone().unwrap_or_default();
    let mut class_index: HashMap<String, usize> = class_names
        .iter()
        .enumerate()
        .map(|(i, n)| (n.clone(), i))
        .collect();
    let mut ids = Vec::new();
    let mut labels = Vec::new();
    let mut values = Vec::new();
    let mut seen = HashSet::new();
    for record in records {
        let record = record?;
        let row = line_of(&record);
        if record.len() != d + 2 {
            return Err(Error::DimensionMismatch {
                row,
                expected: d,
                found: record.len().saturating_sub(2),
            });
        }
        let id = record[0].to_string();
        if !seen.insert(id.clone()) {
            return Err(Error::DuplicateId { row, id });
        }
        let label = match &record[1] {
            UNKNOWN_LABEL => Label::Unknown,
            name => match class_index.get(name) {
                Some(&c) => Label::Class(c),
                None if declared.is_some() => {
                    return Err(Error::BadRow {
                        row,
                        message: format!("label `{name}` is not a declared class"),
                    })
                }
                None => {
                    let c = class_names.len();
                    class_names.push(name.to_string());
                    class_index.insert(name.to_string(), c);
                    Label::Class(c)
                }
            },
        };
        for (j, field) in record.iter().skip(2).enumerate() {
            let v: f64 = field.trim().parse().map_err(|_| Error::BadRow {
                row,
                message: format!("column f{j}: `{field}` is not a number"),
            })?;
            if !v.is_finite() {
                return Err(Error::NonFinite { row, column: j });
            }
            values.push(T::of(v));
        }
        ids.push(id);
        labels.push(label);
    }
    if ids.is_empty() {
        return Err(Error::Format("feature CSV has no data rows".into()));
    }
    FeatureTable::new(
        ids.clone(),
        Matrix::from_vec(ids.len(), d, values)?,
        labels,
        class_names,
    )
}

pub(crate) fn encode_binary<T: Real>(table: &FeatureTable<T>) -> Vec<u8> {
    let mut w = BinWriter::new(MAGIC);
    w.u64(table.len() as u64);
    w.u64(table.dim() as u64);
    w.strings(table.class_names());
    for i in 0..table.len() {
        w.str(&table.ids()[i]);
        w.i64(table.labels()[i].to_code());
        for v in table.row(i) {
            w.f64(v.as_f64());
        }
    }
    w.finish()
}

pub(crate) fn decode_binary<T: Real>(bytes: &[u8]) -> Result<FeatureTable<T>> {
    let mut r = BinReader::open(bytes, MAGIC, "NCMF")?;
    let n = r.count("sample count")?;
    let d = r.count("feature dimension")?;
    let class_names = r.strings("class names")?;
    let mut ids = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    let mut values = Vec::with_capacity(n.saturating_mul(d));
    for row in 0..n {
        let ctx = format!("row {row}");
        ids.push(r.str(&ctx)?);
        let code = r.i64(&ctx)?;
        let label = Label::from_code(code)
            .filter(|l| l.class().is_none_or(|c| c < class_names.len()))
            .ok_or_else(|| Error::BadRow {
                row,
                message: format!("label code {code} is invalid"),
            })?;
        labels.push(label);
        for (column, v) in r.f64s(d, &ctx)?.into_iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::NonFinite { row, column });
            }
            values.push(T::of(v));
        }
    }
    r.finish()?;
    FeatureTable::new(ids, Matrix::from_vec(n, d, values)?, labels, class_names)
}
