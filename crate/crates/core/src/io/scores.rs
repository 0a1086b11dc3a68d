//! Score streams.
//!
//! CSV columns: `sample_id,true_label,predicted_class,scorer,score,js,h_dist,h_prob`.
//! Labels are written as class names (`__unknown__` for open-set rows, empty
//! when the truth is not known). JSON-lines carry the same fields plus the
//! numeric class index.

use std::collections::BTreeSet;
use std::io::Write;
use std::path::Path;

use serde::Serialize;

use crate::agreement::ScoreRecord;
use crate::error::{Error, Result};
use crate::real::Real;
use crate::table::{Label, UNKNOWN_LABEL};

const HEADER: [&str; 8] = [
    "sample_id",
    "true_label",
    "predicted_class",
    "scorer",
    "score",
    "js",
    "h_dist",
    "h_prob",
];

pub(crate) fn encode_scores_csv<T: Real>(
    records: &[ScoreRecord<T>],
    class_names: &[String],
) -> Result<Vec<u8>> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    w.write_record(HEADER)?;
    for r in records {
        w.write_record([
            r.sample_id.as_str(),
            r.true_label.map_or("", |l| l.name(class_names)),
            class_names[r.predicted_class].as_str(),
            r.scorer_name.as_str(),
            &r.score.as_f64().to_string(),
            &r.js.as_f64().to_string(),
            &r.v_dist_entropy_norm.as_f64().to_string(),
            &r.v_prob_entropy_norm.as_f64().to_string(),
        ])?;
    }
    w.into_inner()
        .map_err(|e| Error::Io(std::io::Error::other(e.to_string())))
}

pub fn write_scores_csv<T: Real>(
    records: &[ScoreRecord<T>],
    class_names: &[String],
    path: impl AsRef<Path>,
) -> Result<()> {
    super::write_file(path.as_ref(), encode_scores_csv(records, class_names)?)?;
    Ok(())
}

#[derive(Serialize)]
struct JsonRecord<'a> {
    sample_id: &'a str,
    true_label: Option<&'a str>,
    predicted_class: usize,
    predicted_name: &'a str,
    scorer: &'a str,
    score: f64,
    js: f64,
    h_dist: f64,
    h_prob: f64,
}

pub fn write_scores_jsonl<T: Real>(
    records: &[ScoreRecord<T>],
    class_names: &[String],
    path: impl AsRef<Path>,
) -> Result<()> {
    let mut out = Vec::new();
    for r in records {
        let line = JsonRecord {
            sample_id: &r.sample_id,
            true_label: r.true_label.map(|l| l.name(class_names)),
            predicted_class: r.predicted_class,
            predicted_name: &class_names[r.predicted_class],
            scorer: &r.scorer_name,
            score: r.score.as_f64(),
            js: r.js.as_f64(),
            h_dist: r.v_dist_entropy_norm.as_f64(),
            h_prob: r.v_prob_entropy_norm.as_f64(),
        };
        serde_json::to_writer(&mut out, &line)?;
        out.write_all(b"\n")?;
    }
    super::write_file(path.as_ref(), out)?;
    Ok(())
}

/// Reads a score CSV back.
///
/// With `class_names` absent, the class list is the sorted set of names
/// seen in `true_label` and `predicted_class`.
pub fn read_scores_csv<T: Real>(
    path: impl AsRef<Path>,
    class_names: Option<&[String]>,
) -> Result<(Vec<ScoreRecord<T>>, Vec<String>)> {
    let text = String::from_utf8(super::read_file(path.as_ref())?)
        .map_err(|_| Error::Format("score CSV is not valid UTF-8".into()))?;
    parse_scores_csv(&text, class_names)
}

pub(crate) fn parse_scores_csv<T: Real>(
    text: &str,
    class_names: Option<&[String]>,
) -> Result<(Vec<ScoreRecord<T>>, Vec<String>)> {
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let header = reader.headers()?.clone();
    if header.iter().ne(HEADER.iter().copied()) {
        return Err(Error::Format(format!(
            "score CSV header must be `{}`",
            HEADER.join(",")
        )));
    }
    let rows: Vec<csv::StringRecord> = reader.records().collect::<std::result::Result<_, _>>()?;
    let names: Vec<String> = match class_names {
        Some(n) => n.to_vec(),
        None => {
            let mut set = BTreeSet::new();
            for r in &rows {
                for name in [&r[1], &r[2]] {
                    if !name.is_empty() && name != UNKNOWN_LABEL {
                        set.insert(name.to_string());
                    }
                }
            }
            set.into_iter().collect()
        }
    };
    let index = |name: &str, row: usize| -> Result<usize> {
        names.iter().position(|n| n == name).ok_or_else(|| Error::BadRow {
            row,
            message: format!("unknown class `{name}`"),
        })
    };
    let number = |field: &str, row: usize| -> Result<T> {
        let v: f64 = field.parse().map_err(|_| Error::BadRow {
            row,
            message: format!("`{field}` is not a number"),
        })?;
        if !v.is_finite() {
            return Err(Error::BadRow {
                row,
                message: "score values must be finite".into(),
            });
        }
        Ok(T::of(v))
    };
    let mut records = Vec::with_capacity(rows.len());
    for r in &rows {
        let row = r.position().map_or(0, |p| p.line() as usize);
        let true_label = match &r[1] {
            "" => None,
            UNKNOWN_LABEL => Some(Label::Unknown),
            name => Some(Label::Class(index(name, row)?)),
        };
        records.push(ScoreRecord {
            sample_id: r[0].to_string(),
            predicted_class: index(&r[2], row)?,
            scorer_name: r[3].to_string(),
            score: number(&r[4], row)?,
            js: number(&r[5], row)?,
            v_dist_entropy_norm: number(&r[6], row)?,
            v_prob_entropy_norm: number(&r[7], row)?,
            true_label,
        });
    }
    Ok((records, names))
}
