//! Open-set recognition by agreement between a nearest-class-mean view and a
//! trained classification head.
//!
//! For a feature vector `x` the library builds two distributions over the
//! known classes: `v_dist`, a softmax over inverse distances to the class
//! means, and `v_prob`, the softmax of a small MLP head. A sample is trusted
//! when both are confident and they agree:
//!
//! ```text
//! score = (1 - JS(v_dist, v_prob)) * (1 - H(v_dist)/log2 n) * (1 - H(v_prob)/log2 n)
//! ```
//!
//! Everything numeric is generic over [`Real`] (`f32` or `f64`); the `*F64`
//! and `*F32` aliases below fix the scalar.
//!
//! ```
//! use ncm_agreement::{ncm_agreement, DistributionF64};
//!
//! let p = DistributionF64::new(vec![0.9, 0.05, 0.05]).unwrap();
//! let u = DistributionF64::uniform(3).unwrap();
//! assert!(ncm_agreement(&p, &p).unwrap() > 0.0);
//! assert_eq!(ncm_agreement(&p, &u).unwrap(), 0.0);
//! ```

// `!(x > 0.0)` guards are written that way so NaN fails them.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod agreement;
pub mod error;
pub mod head;
pub mod io;
pub mod metrics;
pub mod numerics;
pub mod pipeline;
pub mod prototypes;
pub mod real;
pub mod split;
pub mod synth;
pub mod table;

pub use agreement::{
    classify_with_rejection, fit_temperature, max_softmax_score, ncm_agreement, score_sample, score_table,
    temp_scaled_score, PredictFrom, ScoreRecord, Scorer,
};
pub use error::{Error, ErrorKind, Result};
pub use head::{
    accuracy, cosine_warmup_lr, head_forward, head_probabilities, loss_and_gradients, mean_cross_entropy,
    train_head, EpochLog, Gradients, HeadParameters, TrainConfig, TrainedHead,
};
pub use metrics::{
    aupr, auroc, auroc_difference, evaluate, f1_scores, fpr_at_tpr, render_table, threshold_at_tpr,
    EvalReport, F1Summary, Positives,
};
pub use numerics::{
    entropy_bits, js_bits, kl_bits, normalized_entropy, stable_softmax, ProbabilityDistribution,
};
pub use pipeline::{run_pipeline, FitSplit, Manifest, RunConfig, RunOutcome, ThresholdPolicy};
pub use prototypes::{
    distance_distribution, distance_vector, fit_prototypes, fit_prototypes_l2, l2_normalize, ClassPrototypes,
    DEFAULT_EPSILON,
};
pub use real::{compensated_sum, Real};
pub use split::stratified_split;
pub use synth::{generate_synthetic, SyntheticSpec, UnknownPlacement};
pub use table::{FeatureTable, Label, Matrix, UNKNOWN_LABEL};

pub type DistributionF64 = ProbabilityDistribution<f64>;
pub type DistributionF32 = ProbabilityDistribution<f32>;
pub type FeatureTableF64 = FeatureTable<f64>;
pub type FeatureTableF32 = FeatureTable<f32>;
pub type ClassPrototypesF64 = ClassPrototypes<f64>;
pub type ClassPrototypesF32 = ClassPrototypes<f32>;
pub type HeadParametersF64 = HeadParameters<f64>;
pub type HeadParametersF32 = HeadParameters<f32>;
pub type ScoreRecordF64 = ScoreRecord<f64>;
pub type ScoreRecordF32 = ScoreRecord<f32>;
