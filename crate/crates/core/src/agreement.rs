//! Known-vs-unknown scores: NCM agreement and the softmax baselines.
//!
//! Every scorer is oriented higher-is-more-known.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::head::{head_forward, HeadParameters};
use crate::numerics::{js_bits, normalized_entropy, stable_softmax, ProbabilityDistribution};
use crate::prototypes::{distance_distribution, distance_vector, ClassPrototypes, DEFAULT_EPSILON};
use crate::real::Real;
use crate::table::{FeatureTable, Label};

/// Agreement between the prototype-distance and classifier distributions:
/// `(1 - JS) * (1 - H(v_dist)/log2 n) * (1 - H(v_prob)/log2 n)`.
pub fn ncm_agreement<T: Real>(
    v_dist: &ProbabilityDistribution<T>,
    v_prob: &ProbabilityDistribution<T>,
) -> Result<T> {
    Ok(agreement_parts(v_dist, v_prob)?.score)
}

#[derive(Debug, Clone, Copy)]
struct AgreementParts<T> {
    score: T,
    js: T,
    h_dist: T,
    h_prob: T,
}

fn agreement_parts<T: Real>(
    v_dist: &ProbabilityDistribution<T>,
    v_prob: &ProbabilityDistribution<T>,
) -> Result<AgreementParts<T>> {
    let js = js_bits(v_dist, v_prob)?;
    let h_dist = normalized_entropy(v_dist);
    let h_prob = normalized_entropy(v_prob);
    // The inner product is commutative, which keeps the score exactly symmetric.
    let score = (T::one() - js) * ((T::one() - h_dist) * (T::one() - h_prob));
    Ok(AgreementParts {
        score: score.max(T::zero()).min(T::one()),
        js,
        h_dist,
        h_prob,
    })
}

/// Maximum softmax probability.
pub fn max_softmax_score<T: Real>(logits: &[T]) -> Result<T> {
    Ok(stable_softmax(logits, T::one())?.max())
}

/// Maximum softmax probability after dividing the logits by `temperature`.
pub fn temp_scaled_score<T: Real>(logits: &[T], temperature: T) -> Result<T> {
    Ok(stable_softmax(logits, temperature)?.max())
}

/// A scoring rule and its parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum Scorer {
    NcmAgreement {
        #[serde(default = "default_epsilon")]
        epsilon: f64,
    },
    MaxSoftmax,
    TempScaling {
        #[serde(default = "default_temperature")]
        temperature: f64,
    },
}

fn default_epsilon() -> f64 {
    DEFAULT_EPSILON
}

fn default_temperature() -> f64 {
    1.0
}

impl Scorer {
    pub fn name(&self) -> &'static str {
        match self {
            Scorer::NcmAgreement { .. } => "ncm_agreement",
            Scorer::MaxSoftmax => "max_softmax",
            Scorer::TempScaling { .. } => "temp_scaling",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            Scorer::NcmAgreement { epsilon } if !(epsilon > 0.0 && epsilon.is_finite()) => Err(
                Error::InvalidParameter(format!("epsilon must be positive, got {epsilon}")),
            ),
            Scorer::TempScaling { temperature } if !(temperature > 0.0 && temperature.is_finite()) => Err(
                Error::InvalidParameter(format!("temperature must be positive, got {temperature}")),
            ),
            _ => Ok(()),
        }
    }
}

impl fmt::Display for Scorer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Scorer::NcmAgreement { epsilon } => write!(f, "ncm_agreement:{epsilon}"),
            Scorer::MaxSoftmax => write!(f, "max_softmax"),
            Scorer::TempScaling { temperature } => write!(f, "temp_scaling:{temperature}"),
        }
    }
}

/// Parses `name` or `name:parameter`, e.g. `temp_scaling:1.5`.
impl FromStr for Scorer {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (name, arg) = match s.split_once(':') {
            Some((n, a)) => (n.trim(), Some(a.trim())),
            None => (s.trim(), None),
        };
        let param = |default: f64| -> Result<f64> {
            arg.map_or(Ok(default), |a| {
                a.parse::<f64>()
                    .map_err(|_| Error::Configuration(format!("bad parameter `{a}` for scorer `{name}`")))
            })
        };
        let scorer = match name {
            "ncm_agreement" => Scorer::NcmAgreement {
                epsilon: param(DEFAULT_EPSILON)?,
            },
            "max_softmax" if arg.is_none() => Scorer::MaxSoftmax,
            "temp_scaling" => Scorer::TempScaling {
                temperature: param(1.0)?,
            },
            _ => return Err(Error::Configuration(format!("unknown scorer `{s}`"))),
        };
        scorer.validate()?;
        Ok(scorer)
    }
}

/// Which distribution picks the predicted class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictFrom {
    #[default]
    Head,
    Ncm,
}

impl FromStr for PredictFrom {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "head" => Ok(PredictFrom::Head),
            "ncm" => Ok(PredictFrom::Ncm),
            _ => Err(Error::Configuration(format!("unknown prediction source `{s}`"))),
        }
    }
}

/// One scored sample.
///
/// The diagnostic fields are normalized entropies and the JS divergence for
/// `ncm_agreement`; they are zero for the softmax scorers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real + Serialize + serde::de::DeserializeOwned")]
pub struct ScoreRecord<T: Real> {
    pub sample_id: String,
    pub predicted_class: usize,
    pub score: T,
    pub scorer_name: String,
    pub v_dist_entropy_norm: T,
    pub v_prob_entropy_norm: T,
    pub js: T,
    /// Ground truth, when scored from a labelled table.
    #[serde(default)]
    pub true_label: Option<Label>,
}

fn check_models<T: Real>(prototypes: &ClassPrototypes<T>, params: &HeadParameters<T>) -> Result<()> {
    if prototypes.dim() != params.input_dim() {
        return Err(Error::InvalidInput(format!(
            "prototypes have dimension {}, head expects {}",
            prototypes.dim(),
            params.input_dim()
        )));
    }
    if prototypes.class_names != params.class_names {
        return Err(Error::InvalidInput(
            "prototypes and head disagree on the class list".into(),
        ));
    }
    Ok(())
}

/// Scores a single feature vector.
pub fn score_sample<T: Real>(
    sample_id: &str,
    x: &[T],
    prototypes: &ClassPrototypes<T>,
    params: &HeadParameters<T>,
    scorer: &Scorer,
    predict_from: PredictFrom,
) -> Result<ScoreRecord<T>> {
    scorer.validate()?;
    check_models(prototypes, params)?;
    score_unchecked(sample_id, x, prototypes, params, scorer, predict_from)
}

fn score_unchecked<T: Real>(
    sample_id: &str,
    x: &[T],
    prototypes: &ClassPrototypes<T>,
    params: &HeadParameters<T>,
    scorer: &Scorer,
    predict_from: PredictFrom,
) -> Result<ScoreRecord<T>> {
    let logits = head_forward(x, params)?;
    let v_prob = stable_softmax(&logits, T::one())?;
    let needs_dist = matches!(scorer, Scorer::NcmAgreement { .. }) || predict_from == PredictFrom::Ncm;
    let v_dist = if needs_dist {
        let epsilon = match scorer {
            Scorer::NcmAgreement { epsilon } => *epsilon,
            _ => DEFAULT_EPSILON,
        };
        let distances = distance_vector(&prototypes.prepare(x), prototypes)?;
        Some(distance_distribution(&distances, T::of(epsilon))?)
    } else {
        None
    };
    let predicted_class = match (predict_from, &v_dist) {
        (PredictFrom::Ncm, Some(d)) => d.argmax(),
        _ => v_prob.argmax(),
    };
    let zero = T::zero();
    let (score, h_dist, h_prob, js) = match scorer {
        Scorer::NcmAgreement { .. } => {
            let parts = agreement_parts(v_dist.as_ref().expect("computed above"), &v_prob)?;
            (parts.score, parts.h_dist, parts.h_prob, parts.js)
        }
        Scorer::MaxSoftmax => (v_prob.max(), zero, zero, zero),
        Scorer::TempScaling { temperature } => {
            (temp_scaled_score(&logits, T::of(*temperature))?, zero, zero, zero)
        }
    };
    Ok(ScoreRecord {
        sample_id: sample_id.to_string(),
        predicted_class,
        score,
        scorer_name: scorer.name().to_string(),
        v_dist_entropy_norm: h_dist,
        v_prob_entropy_norm: h_prob,
        js,
        true_label: None,
    })
}

/// Scores every row of `table`. Output order equals row order.
///
/// Labels are matched to the model's classes by name.
pub fn score_table<T: Real>(
    table: &FeatureTable<T>,
    prototypes: &ClassPrototypes<T>,
    params: &HeadParameters<T>,
    scorer: &Scorer,
    predict_from: PredictFrom,
) -> Result<Vec<ScoreRecord<T>>> {
    scorer.validate()?;
    check_models(prototypes, params)?;
    let aligned;
    let table = if table.class_names() == prototypes.class_names.as_slice() {
        table
    } else {
        aligned = table.with_class_names(&prototypes.class_names)?;
        &aligned
    };
    (0..table.len())
        .into_par_iter()
        .map(|i| {
            let mut r = score_unchecked(
                &table.ids()[i],
                table.row(i),
                prototypes,
                params,
                scorer,
                predict_from,
            )?;
            r.true_label = Some(table.labels()[i]);
            Ok(r)
        })
        .collect()
}

/// Keeps the predicted class when `score >= threshold`, otherwise UNKNOWN.
pub fn classify_with_rejection<T: Real>(records: &[ScoreRecord<T>], threshold: T) -> Result<Vec<Label>> {
    if let Some(first) = records.first() {
        if let Some(other) = records.iter().find(|r| r.scorer_name != first.scorer_name) {
            return Err(Error::InvalidInput(format!(
                "records mix scorers `{}` and `{}`",
                first.scorer_name, other.scorer_name
            )));
        }
    }
    Ok(records
        .iter()
        .map(|r| {
            if r.score >= threshold {
                Label::Class(r.predicted_class)
            } else {
                Label::Unknown
            }
        })
        .collect())
}

/// Temperature minimizing the mean negative log-likelihood of `labels`
/// under `softmax(logits / T)`, searched over `[0.05, 20]` in log space.
pub fn fit_temperature<T: Real>(logits: &[Vec<T>], labels: &[usize]) -> Result<f64> {
    if logits.is_empty() || logits.len() != labels.len() {
        return Err(Error::InvalidInput(format!(
            "{} logit rows but {} labels",
            logits.len(),
            labels.len()
        )));
    }
    let nll = |log_t: f64| -> f64 {
        let t = log_t.exp();
        logits
            .iter()
            .zip(labels)
            .map(|(row, &y)| {
                let scaled: Vec<f64> = row.iter().map(|v| v.as_f64() / t).collect();
                let m = scaled.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let lse = m + scaled.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
                lse - scaled[y]
            })
            .sum::<f64>()
    };
    let (mut lo, mut hi) = (0.05f64.ln(), 20f64.ln());
    let ratio = (5f64.sqrt() - 1.0) / 2.0;
    let mut a = hi - ratio * (hi - lo);
    let mut b = lo + ratio * (hi - lo);
    let (mut fa, mut fb) = (nll(a), nll(b));
    for _ in 0..80 {
        if fa <= fb {
            hi = b;
            b = a;
            fb = fa;
            a = hi - ratio * (hi - lo);
            fa = nll(a);
        } else {
            lo = a;
            a = b;
            fa = fb;
            b = lo + ratio * (hi - lo);
            fb = nll(b);
        }
    }
    Ok(((lo + hi) / 2.0).exp())
}
