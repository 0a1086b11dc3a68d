//! Open-set evaluation metrics.
//!
//! Scores are oriented higher-is-more-known. Conventions:
//!
//! * AUROC gives ties half credit (Mann-Whitney).
//! * A sample is accepted as known when `score >= threshold`.
//! * Precision-recall curves start at `(recall 0, precision 1)`, visit one
//!   point per distinct score, and are integrated with the trapezoid rule.
//! * F1 cells with a zero denominator are 0 and are listed in the report.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::agreement::ScoreRecord;
use crate::error::{Error, Result};
use crate::real::Real;
use crate::table::{Label, UNKNOWN_LABEL};

fn check_partitions<T: Real>(known: &[T], unknown: &[T]) -> Result<()> {
    if known.is_empty() || unknown.is_empty() {
        return Err(Error::InvalidInput(format!(
            "both partitions must be non-empty (known {}, unknown {})",
            known.len(),
            unknown.len()
        )));
    }
    if known.iter().chain(unknown).any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("scores must be finite".into()));
    }
    Ok(())
}

fn cmp<T: Real>(a: &T, b: &T) -> Ordering {
    a.partial_cmp(b).expect("finite scores")
}

/// Probability that a random known score beats a random unknown score.
pub fn auroc<T: Real>(known_scores: &[T], unknown_scores: &[T]) -> Result<f64> {
    check_partitions(known_scores, unknown_scores)?;
    let mut unknown = unknown_scores.to_vec();
    unknown.sort_by(cmp);
    // Twice the Mann-Whitney U statistic, kept integral.
    let mut doubled_wins: u64 = 0;
    for s in known_scores {
        let below = unknown.partition_point(|u| u < s) as u64;
        let not_above = unknown.partition_point(|u| u <= s) as u64;
        doubled_wins += 2 * below + (not_above - below);
    }
    let doubled_pairs = 2 * known_scores.len() as u64 * unknown_scores.len() as u64;
    // Dividing the smaller side keeps auroc(a, b) + auroc(b, a) == 1 exactly.
    Ok(if 2 * doubled_wins <= doubled_pairs {
        doubled_wins as f64 / doubled_pairs as f64
    } else {
        1.0 - (doubled_pairs - doubled_wins) as f64 / doubled_pairs as f64
    })
}

/// Number of accepted samples needed to reach `target` out of `total`.
pub(crate) fn required_hits(total: usize, target: f64) -> usize {
    let n = total as f64;
    let mut k = ((target * n).ceil() as usize).min(total);
    while k > 0 && (k - 1) as f64 / n >= target {
        k -= 1;
    }
    while k < total && (k as f64 / n) < target {
        k += 1;
    }
    k.max(1)
}

/// Largest threshold at which at least `target_tpr` of the known scores are
/// accepted (`score >= threshold`).
pub fn threshold_at_tpr<T: Real>(known_scores: &[T], target_tpr: f64) -> Result<T> {
    if known_scores.is_empty() {
        return Err(Error::InvalidInput("no known scores".into()));
    }
    if !(target_tpr > 0.0 && target_tpr <= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "target TPR must be in (0, 1], got {target_tpr}"
        )));
    }
    if known_scores.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("scores must be finite".into()));
    }
    let mut sorted = known_scores.to_vec();
    sorted.sort_by(|a, b| cmp(b, a));
    Ok(sorted[required_hits(sorted.len(), target_tpr) - 1])
}

/// False-positive rate on unknowns at [`threshold_at_tpr`].
pub fn fpr_at_tpr<T: Real>(known_scores: &[T], unknown_scores: &[T], target_tpr: f64) -> Result<f64> {
    check_partitions(known_scores, unknown_scores)?;
    let threshold = threshold_at_tpr(known_scores, target_tpr)?;
    let accepted = unknown_scores.iter().filter(|&&u| u >= threshold).count();
    Ok(accepted as f64 / unknown_scores.len() as f64)
}

/// Which partition counts as the positive class for precision-recall.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Positives {
    /// Known samples are positive.
    In,
    /// Unknown samples are positive; low scores rank first.
    Out,
}

/// Area under the precision-recall curve.
pub fn aupr<T: Real>(known_scores: &[T], unknown_scores: &[T], positives: Positives) -> Result<f64> {
    check_partitions(known_scores, unknown_scores)?;
    let mut ranked: Vec<(T, bool)> = match positives {
        Positives::In => known_scores
            .iter()
            .map(|&s| (s, true))
            .chain(unknown_scores.iter().map(|&s| (s, false)))
            .collect(),
        Positives::Out => unknown_scores
            .iter()
            .map(|&s| (-s, true))
            .chain(known_scores.iter().map(|&s| (-s, false)))
            .collect(),
    };
    ranked.sort_by(|a, b| cmp(&b.0, &a.0));
    let n_pos = match positives {
        Positives::In => known_scores.len(),
        Positives::Out => unknown_scores.len(),
    } as f64;

    let (mut tp, mut fp) = (0usize, 0usize);
    let (mut prev_recall, mut prev_precision) = (0.0f64, 1.0f64);
    let mut area = 0.0f64;
    let mut i = 0;
    while i < ranked.len() {
        let t = ranked[i].0;
        while i < ranked.len() && ranked[i].0 == t {
            if ranked[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let recall = tp as f64 / n_pos;
        let precision = tp as f64 / (tp + fp) as f64;
        area += (recall - prev_recall) * (precision + prev_precision) / 2.0;
        prev_recall = recall;
        prev_precision = precision;
    }
    Ok(area)
}

/// Per-class and averaged F1 over the known classes plus UNKNOWN.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct F1Summary {
    pub f1_macro: f64,
    pub f1_weighted: f64,
    /// Recall per class with non-zero support.
    pub per_class_accuracy: BTreeMap<String, f64>,
    pub per_class_f1: BTreeMap<String, f64>,
    /// Classes whose F1 had a zero denominator and was set to 0.
    pub zero_division: Vec<String>,
}

/// F1 scores for `predicted` against `truth`. UNKNOWN is scored as its own class.
pub fn f1_scores(predicted: &[Label], truth: &[Label], class_names: &[String]) -> Result<F1Summary> {
    if predicted.len() != truth.len() {
        return Err(Error::InvalidInput(format!(
            "{} predictions but {} true labels",
            predicted.len(),
            truth.len()
        )));
    }
    let n = class_names.len();
    let slot = |l: &Label| -> Result<usize> {
        match *l {
            Label::Class(c) if c < n => Ok(c),
            Label::Class(c) => Err(Error::InvalidInput(format!("label {c} out of range"))),
            Label::Unknown => Ok(n),
        }
    };
    let mut tp = vec![0usize; n + 1];
    let mut fp = vec![0usize; n + 1];
    let mut fneg = vec![0usize; n + 1];
    for (p, t) in predicted.iter().zip(truth) {
        let (p, t) = (slot(p)?, slot(t)?);
        if p == t {
            tp[p] += 1;
        } else {
            fp[p] += 1;
            fneg[t] += 1;
        }
    }
    let name = |k: usize| -> String {
        if k == n {
            UNKNOWN_LABEL.to_string()
        } else {
            class_names[k].clone()
        }
    };
    let mut summary = F1Summary {
        f1_macro: 0.0,
        f1_weighted: 0.0,
        per_class_accuracy: BTreeMap::new(),
        per_class_f1: BTreeMap::new(),
        zero_division: Vec::new(),
    };
    let mut f1 = vec![0.0f64; n + 1];
    for k in 0..=n {
        let denom = 2 * tp[k] + fp[k] + fneg[k];
        if denom == 0 {
            summary.zero_division.push(name(k));
            continue;
        }
        f1[k] = 2.0 * tp[k] as f64 / denom as f64;
        let support = tp[k] + fneg[k];
        if support > 0 {
            summary.per_class_f1.insert(name(k), f1[k]);
            summary
                .per_class_accuracy
                .insert(name(k), tp[k] as f64 / support as f64);
        } else {
            summary.per_class_f1.insert(name(k), f1[k]);
        }
    }
    let supported: Vec<usize> = (0..=n).filter(|&k| tp[k] + fneg[k] > 0).collect();
    if supported.is_empty() {
        return Ok(summary);
    }
    let total_support: usize = supported.iter().map(|&k| tp[k] + fneg[k]).sum();
    // Both averages are weighted sums in the same order, so equal supports
    // give bit-identical results.
    let uniform = 1.0 / supported.len() as f64;
    for &k in &supported {
        let w = (tp[k] + fneg[k]) as f64 / total_support as f64;
        summary.f1_macro += uniform * f1[k];
        summary.f1_weighted += w * f1[k];
    }
    Ok(summary)
}

/// `|a - b|` for two AUROC values in `[0, 1]`.
pub fn auroc_difference(auroc_a: f64, auroc_b: f64) -> Result<f64> {
    for v in [auroc_a, auroc_b] {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::InvalidInput(format!("AUROC {v} is outside [0, 1]")));
        }
    }
    Ok((auroc_a - auroc_b).abs())
}

/// All metrics for one scorer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub scorer_name: String,
    pub auroc: f64,
    pub fpr_at_95tpr: f64,
    pub aupr_in: f64,
    pub aupr_out: f64,
    pub f1_macro: f64,
    pub f1_weighted: f64,
    pub per_class_accuracy: BTreeMap<String, f64>,
    pub per_class_f1: BTreeMap<String, f64>,
    pub zero_division: Vec<String>,
    pub n_known: usize,
    pub n_unknown: usize,
    pub threshold_used: f64,
}

impl EvalReport {
    /// True when every metric matches, ignoring the scorer name.
    pub fn same_metrics(&self, other: &EvalReport) -> bool {
        EvalReport {
            scorer_name: other.scorer_name.clone(),
            ..self.clone()
        } == *other
    }
}

/// Evaluates scored records that carry their ground truth.
pub fn evaluate<T: Real>(
    records: &[ScoreRecord<T>],
    class_names: &[String],
    threshold: T,
) -> Result<EvalReport> {
    let first = records
        .first()
        .ok_or_else(|| Error::InvalidInput("no records to evaluate".into()))?;
    let mut known = Vec::new();
    let mut unknown = Vec::new();
    let mut truth = Vec::with_capacity(records.len());
    for r in records {
        let label = r
            .true_label
            .ok_or_else(|| Error::InvalidInput(format!("record `{}` has no true label", r.sample_id)))?;
        match label {
            Label::Class(_) => known.push(r.score),
            Label::Unknown => unknown.push(r.score),
        }
        truth.push(label);
    }
    let predicted = crate::agreement::classify_with_rejection(records, threshold)?;
    let f1 = f1_scores(&predicted, &truth, class_names)?;
    Ok(EvalReport {
        scorer_name: first.scorer_name.clone(),
        auroc: auroc(&known, &unknown)?,
        fpr_at_95tpr: fpr_at_tpr(&known, &unknown, 0.95)?,
        aupr_in: aupr(&known, &unknown, Positives::In)?,
        aupr_out: aupr(&known, &unknown, Positives::Out)?,
        f1_macro: f1.f1_macro,
        f1_weighted: f1.f1_weighted,
        per_class_accuracy: f1.per_class_accuracy,
        per_class_f1: f1.per_class_f1,
        zero_division: f1.zero_division,
        n_known: known.len(),
        n_unknown: unknown.len(),
        threshold_used: threshold.as_f64(),
    })
}

/// Aligned text table, metrics in percent with two decimals.
pub fn render_table(reports: &[EvalReport]) -> String {
    let header = [
        "Scorer",
        "AUROC ↑",
        "FPR95-TPR ↓",
        "AUPR-IN ↑",
        "AUPR-OUT ↑",
        "F1 macro ↑",
        "F1 weighted ↑",
    ];
    let rows: Vec<Vec<String>> = reports
        .iter()
        .map(|r| {
            let mut row = vec![r.scorer_name.clone()];
            row.extend(
                [
                    r.auroc,
                    r.fpr_at_95tpr,
                    r.aupr_in,
                    r.aupr_out,
                    r.f1_macro,
                    r.f1_weighted,
                ]
                .iter()
                .map(|v| percent(*v)),
            );
            row
        })
        .collect();
    let widths: Vec<usize> = (0..header.len())
        .map(|c| {
            rows.iter()
                .map(|r| r[c].chars().count())
                .chain([header[c].chars().count()])
                .max()
                .unwrap_or(0)
        })
        .collect();
    let mut out = String::new();
    let line = |cells: &[&str], out: &mut String| {
        for (c, cell) in cells.iter().enumerate() {
            let pad = widths[c] - cell.chars().count();
            if c == 0 {
                let _ = write!(out, "{cell}{}", " ".repeat(pad));
            } else {
                let _ = write!(out, "  {}{cell}", " ".repeat(pad));
            }
        }
        out.push('\n');
    };
    line(&header, &mut out);
    let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
    line(&rule.iter().map(String::as_str).collect::<Vec<_>>(), &mut out);
    for r in &rows {
        line(&r.iter().map(String::as_str).collect::<Vec<_>>(), &mut out);
    }
    out
}

/// A fraction rendered as a percentage with two decimals.
pub fn percent(v: f64) -> String {
    format!("{:.2}", v * 100.0)
}
