//! Feature tables: the universal input of the crate.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::real::Real;

/// Reserved label for rows that belong to no known class.
pub const UNKNOWN_LABEL: &str = "__unknown__";

/// A class index, or the open-set sentinel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Label {
    Class(usize),
    Unknown,
}

impl Label {
    pub fn class(self) -> Option<usize> {
        match self {
            Label::Class(c) => Some(c),
            Label::Unknown => None,
        }
    }

    pub fn is_unknown(self) -> bool {
        self == Label::Unknown
    }

    /// Index used by binary formats: class index, or -1.
    pub fn to_code(self) -> i64 {
        match self {
            Label::Class(c) => c as i64,
            Label::Unknown => -1,
        }
    }

    pub fn from_code(code: i64) -> Option<Self> {
        match code {
            -1 => Some(Label::Unknown),
            c if c >= 0 => Some(Label::Class(c as usize)),
            _ => None,
        }
    }

    pub fn name(self, class_names: &[String]) -> &str {
        match self {
            Label::Class(c) => &class_names[c],
            Label::Unknown => UNKNOWN_LABEL,
        }
    }
}

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real + Serialize + serde::de::DeserializeOwned")]
pub struct Matrix<T: Real> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Real> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::InvalidInput(format!(
                "{rows}x{cols} matrix needs {} values, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != cols {
                return Err(Error::DimensionMismatch {
                    row: i,
                    expected: cols,
                    found: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> T {
        self.data[r * self.cols + c]
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn iter_rows(&self) -> impl ExactSizeIterator<Item = &[T]> + '_ {
        (0..self.rows).map(move |i| self.row(i))
    }

    pub fn select_rows(&self, indices: &[usize]) -> Self {
        let mut data = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        Self {
            rows: indices.len(),
            cols: self.cols,
            data,
        }
    }

    pub fn map<U: Real>(&self, f: impl Fn(T) -> U) -> Matrix<U> {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }
}

/// `N` samples with `d` features each, their labels and the class-name index.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTable<T: Real> {
    ids: Vec<String>,
    features: Matrix<T>,
    labels: Vec<Label>,
    class_names: Vec<String>,
}

impl<T: Real> FeatureTable<T> {
    pub fn new(
        ids: Vec<String>,
        features: Matrix<T>,
        labels: Vec<Label>,
        class_names: Vec<String>,
    ) -> Result<Self> {
        let n = features.rows();
        if n == 0 || features.cols() == 0 {
            return Err(Error::InvalidInput(format!(
                "a feature table needs N >= 1 and d >= 1, got {n}x{}",
                features.cols()
            )));
        }
        if ids.len() != n || labels.len() != n {
            return Err(Error::InvalidInput(format!(
                "{n} feature rows but {} ids and {} labels",
                ids.len(),
                labels.len()
            )));
        }
        validate_class_names(&class_names)?;
        let mut seen = HashSet::with_capacity(n);
        for (row, id) in ids.iter().enumerate() {
            if !seen.insert(id.as_str()) {
                return Err(Error::DuplicateId { row, id: id.clone() });
            }
        }
        for (row, values) in features.iter_rows().enumerate() {
            if let Some(column) = values.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite { row, column });
            }
        }
        for (row, label) in labels.iter().enumerate() {
            if let Label::Class(c) = label {
                if *c >= class_names.len() {
                    return Err(Error::BadRow {
                        row,
                        message: format!("label {c} out of range for {} classes", class_names.len()),
                    });
                }
            }
        }
        Ok(Self {
            ids,
            features,
            labels,
            class_names,
        })
    }

    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn n_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn features(&self) -> &Matrix<T> {
        &self.features
    }

    pub fn labels(&self) -> &[Label] {
        &self.labels
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn row(&self, i: usize) -> &[T] {
        self.features.row(i)
    }

    /// Rows in the given order. Class names are kept.
    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            ids: indices.iter().map(|&i| self.ids[i].clone()).collect(),
            features: self.features.select_rows(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            class_names: self.class_names.clone(),
        }
    }

    /// Per-class sample counts (UNKNOWN rows excluded).
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_classes()];
        for l in &self.labels {
            if let Label::Class(c) = l {
                counts[*c] += 1;
            }
        }
        counts
    }

    /// Fails with the first missing class, or on any UNKNOWN row.
    pub fn require_closed_set(&self) -> Result<()> {
        if let Some(row) = self.labels.iter().position(|l| l.is_unknown()) {
            return Err(Error::InvalidFitSet(format!(
                "row {row} (`{}`) carries the UNKNOWN label",
                self.ids[row]
            )));
        }
        if let Some(c) = self.class_counts().iter().position(|&k| k == 0) {
            return Err(Error::MissingClass(self.class_names[c].clone()));
        }
        Ok(())
    }

    /// Re-indexes labels against another class-name list, matching by name.
    pub fn with_class_names(&self, target: &[String]) -> Result<Self> {
        let mapping: Vec<usize> = self
            .class_names
            .iter()
            .map(|name| {
                target.iter().position(|t| t == name).ok_or_else(|| {
                    Error::InvalidInput(format!("class `{name}` is not among the model's classes"))
                })
            })
            .collect::<Result<_>>()?;
        let labels = self
            .labels
            .iter()
            .map(|l| match l {
                Label::Class(c) => Label::Class(mapping[*c]),
                Label::Unknown => Label::Unknown,
            })
            .collect();
        Ok(Self {
            ids: self.ids.clone(),
            features: self.features.clone(),
            labels,
            class_names: target.to_vec(),
        })
    }

    pub fn cast<U: Real>(&self) -> FeatureTable<U> {
        FeatureTable {
            ids: self.ids.clone(),
            features: self.features.map(|v| U::of(v.as_f64())),
            labels: self.labels.clone(),
            class_names: self.class_names.clone(),
        }
    }
}

pub(crate) fn validate_class_names(names: &[String]) -> Result<()> {
    let mut seen = HashSet::new();
    for name in names {
        if name == UNKNOWN_LABEL {
            return Err(Error::InvalidInput(format!(
                "`{UNKNOWN_LABEL}` is reserved and cannot be a class name"
            )));
        }
        if name.is_empty() {
            return Err(Error::InvalidInput("empty class name".into()));
        }
        if !seen.insert(name) {
            return Err(Error::InvalidInput(format!("duplicate class name `{name}`")));
        }
    }
    Ok(())
}
