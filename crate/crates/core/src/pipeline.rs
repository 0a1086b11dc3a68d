//! End-to-end run: split, train the head, fit prototypes, calibrate a
//! threshold, score the evaluation set with every scorer and evaluate.
//!
//! Everything a run produces lands in the output directory, together with a
//! `manifest.json` recording the config hash, seeds, stage outcomes and the
//! SHA-256 of every artifact. Reruns with the same config reproduce every
//! file byte for byte.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::agreement::{fit_temperature, score_table, PredictFrom, ScoreRecord, Scorer};
use crate::error::{Error, Result};
use crate::head::{head_forward, train_head, HeadParameters, TrainConfig, TrainedHead};
use crate::io::{self, sha256_hex};
use crate::metrics::{evaluate, render_table, threshold_at_tpr, EvalReport};
use crate::prototypes::{fit_prototypes, fit_prototypes_l2, ClassPrototypes, DEFAULT_EPSILON};
use crate::real::Real;
use crate::split::stratified_split;
use crate::synth::{generate_synthetic, SyntheticSpec};
use crate::table::{FeatureTable, Label};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FitSplit {
    Train,
    #[default]
    Validation,
}

impl std::str::FromStr for FitSplit {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(FitSplit::Train),
            "validation" => Ok(FitSplit::Validation),
            _ => Err(Error::Configuration(format!(
                "unknown fit split `{s}` (train | validation)"
            ))),
        }
    }
}

/// How the accept/reject threshold is chosen for each scorer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "snake_case")]
pub enum ThresholdPolicy {
    /// Largest threshold accepting `target` of the validation knowns.
    TprTarget {
        target: f64,
    },
    Fixed {
        value: f64,
    },
}

impl Default for ThresholdPolicy {
    fn default() -> Self {
        ThresholdPolicy::TprTarget { target: 0.95 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    /// Closed-set feature file; split into train/validation/test.
    pub known_features: Option<PathBuf>,
    /// Open-set feature file; every row is evaluated as UNKNOWN.
    pub unknown_features: Option<PathBuf>,
    /// Used instead of the two files when set.
    pub synthetic: Option<SyntheticSpec>,
    pub split_fractions: [f64; 3],
    /// Seed of the stratified split.
    pub seed: u64,
    pub train: TrainConfig,
    pub scorers: Vec<Scorer>,
    pub fit_split: FitSplit,
    pub l2_normalize: bool,
    pub predict_from: PredictFrom,
    pub threshold: ThresholdPolicy,
    /// Replace every `temp_scaling` temperature by one fitted on validation.
    pub calibrate_temperature: bool,
    /// Not serialized: where a run is written does not change what it computes.
    #[serde(skip_serializing)]
    pub output_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            known_features: None,
            unknown_features: None,
            synthetic: None,
            split_fractions: [0.6, 0.2, 0.2],
            seed: 0,
            train: TrainConfig::default(),
            scorers: vec![
                Scorer::NcmAgreement {
                    epsilon: DEFAULT_EPSILON,
                },
                Scorer::MaxSoftmax,
                Scorer::TempScaling { temperature: 1.0 },
            ],
            fit_split: FitSplit::Validation,
            l2_normalize: false,
            predict_from: PredictFrom::Head,
            threshold: ThresholdPolicy::default(),
            calibrate_temperature: false,
            output_dir: PathBuf::from("ncm-run"),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        let cfg = |m: String| Err(Error::Configuration(m));
        match (&self.synthetic, &self.known_features, &self.unknown_features) {
            (Some(s), None, None) => s.validate()?,
            (None, Some(k), Some(u)) => {
                for p in [k, u] {
                    if !p.exists() {
                        return cfg(format!("input `{}` does not exist", p.display()));
                    }
                }
            }
            (Some(_), _, _) => return cfg("give either `synthetic` or feature files, not both".into()),
            _ => return cfg("both `known_features` and `unknown_features` are required".into()),
        }
        if self.scorers.is_empty() {
            return cfg("no scorers configured".into());
        }
        for s in &self.scorers {
            s.validate()?;
        }
        if let ThresholdPolicy::TprTarget { target } = self.threshold {
            if !(target > 0.0 && target <= 1.0) {
                return cfg(format!("threshold target must be in (0, 1], got {target}"));
            }
        }
        self.train.validate()
    }

    /// SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> Result<String> {
        Ok(sha256_hex(&serde_json::to_vec(self)?))
    }

    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text =
            fs::read_to_string(path).map_err(|e| Error::Configuration(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| Error::Configuration(format!("{}: {e}", path.display())))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub name: String,
    pub ok: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config_hash: String,
    pub split_seed: u64,
    pub train_seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub synthetic_seed: Option<u64>,
    pub precision: String,
    pub split_sizes: [usize; 3],
    pub n_unknown: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fitted_temperature: Option<f64>,
    pub stages: Vec<StageRecord>,
    /// File name to SHA-256.
    pub artifacts: BTreeMap<String, String>,
}

#[derive(Debug, Clone)]
pub struct RunOutcome<T: Real> {
    pub reports: Vec<EvalReport>,
    pub records: Vec<Vec<ScoreRecord<T>>>,
    pub head: TrainedHead<T>,
    pub prototypes: ClassPrototypes<T>,
    pub manifest: Manifest,
}

struct Run {
    dir: PathBuf,
    manifest: Manifest,
}

impl Run {
    fn stage<R>(&mut self, name: &str, f: impl FnOnce(&mut Self) -> Result<R>) -> Result<R> {
        match f(self) {
            Ok(v) => {
                self.manifest.stages.push(StageRecord {
                    name: name.into(),
                    ok: true,
                    error: None,
                });
                Ok(v)
            }
            Err(e) => {
                self.manifest.stages.push(StageRecord {
                    name: name.into(),
                    ok: false,
                    error: Some(e.to_string()),
                });
                // The manifest is best effort once a stage has failed.
                let _ = self.write_manifest();
                Err(e.in_stage(name))
            }
        }
    }

    fn write(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        io::write_file(&self.dir.join(name), bytes)?;
        self.manifest
            .artifacts
            .insert(name.to_string(), sha256_hex(bytes));
        Ok(())
    }

    fn record(&mut self, name: &str) -> Result<()> {
        let bytes = io::read_file(&self.dir.join(name))?;
        self.manifest
            .artifacts
            .insert(name.to_string(), sha256_hex(&bytes));
        Ok(())
    }

    fn write_manifest(&self) -> Result<()> {
        let json = serde_json::to_string_pretty(&self.manifest)? + "\n";
        io::write_file(&self.dir.join("manifest.json"), json)
    }
}

fn precision_name<T: Real>() -> &'static str {
    if std::mem::size_of::<T>() == 4 {
        "f32"
    } else {
        "f64"
    }
}

/// File stem per scorer: the scorer name, suffixed with its position when
/// the same scorer appears twice.
pub fn scorer_file_stems(scorers: &[Scorer]) -> Vec<String> {
    scorers
        .iter()
        .enumerate()
        .map(|(i, s)| {
            if scorers.iter().filter(|o| o.name() == s.name()).count() > 1 {
                format!("{}_{i}", s.name())
            } else {
                s.name().to_string()
            }
        })
        .collect()
}

fn closed_set_rows<T: Real>(table: &FeatureTable<T>) -> (FeatureTable<T>, Vec<usize>) {
    let (known, open): (Vec<usize>, Vec<usize>) =
        (0..table.len()).partition(|&i| !table.labels()[i].is_unknown());
    (table.subset(&known), open)
}

fn label_indices<T: Real>(table: &FeatureTable<T>) -> Vec<usize> {
    table
        .labels()
        .iter()
        .map(|l| match l {
            Label::Class(c) => *c,
            Label::Unknown => unreachable!("closed-set table"),
        })
        .collect()
}

/// Runs the whole pipeline and writes its artifacts.
pub fn run_pipeline<T: Real>(config: &RunConfig) -> Result<RunOutcome<T>> {
    config.validate()?;
    fs::create_dir_all(&config.output_dir)?;
    let mut run = Run {
        dir: config.output_dir.clone(),
        manifest: Manifest {
            config_hash: config.hash()?,
            split_seed: config.seed,
            train_seed: config.train.seed,
            synthetic_seed: config.synthetic.as_ref().map(|s| s.seed),
            precision: precision_name::<T>().into(),
            split_sizes: [0; 3],
            n_unknown: 0,
            fitted_temperature: None,
            stages: Vec::new(),
            artifacts: BTreeMap::new(),
        },
    };
    run.write(
        "config.json",
        (serde_json::to_string_pretty(config)? + "\n").as_bytes(),
    )?;

    let (known_all, unknown) = run.stage("load", |_| match &config.synthetic {
        Some(spec) => generate_synthetic::<T>(spec),
        None => {
            let known: FeatureTable<T> = io::load_features(config.known_features.as_ref().unwrap(), None)?;
            let unknown: FeatureTable<T> =
                io::load_features(config.unknown_features.as_ref().unwrap(), Some(known.dim()))?;
            Ok((known, unknown))
        }
    })?;

    let [train, validation, test, extra_unknown] = run.stage("split", |run| {
        let (closed, open_rows) = closed_set_rows(&known_all);
        let [train, validation, test] = stratified_split(&closed, config.split_fractions, config.seed)?;
        run.manifest.split_sizes = [train.len(), validation.len(), test.len()];
        Ok([train, validation, test, known_all.subset(&open_rows)])
    })?;

    let head = run.stage("train-head", |run| {
        let trained = train_head(&train, &config.train)?;
        run.write("head.ncmh", &io::models::encode_head(&trained.params))?;
        io::save_training_log(&trained.log, run.dir.join("training_log.json"))?;
        run.record("training_log.json")?;
        Ok(trained)
    })?;

    let prototypes = run.stage("fit-prototypes", |run| {
        let fit_set = match config.fit_split {
            FitSplit::Train => &train,
            FitSplit::Validation => &validation,
        };
        let p = if config.l2_normalize {
            fit_prototypes_l2(fit_set)?
        } else {
            fit_prototypes(fit_set)?
        };
        run.write("prototypes.ncmp", &io::models::encode_prototypes(&p))?;
        run.write("prototypes.json", (io::prototypes_json(&p)? + "\n").as_bytes())?;
        Ok(p)
    })?;

    let scorers = run.stage("calibrate-temperature", |run| {
        if !config.calibrate_temperature {
            return Ok(config.scorers.clone());
        }
        let logits = (0..validation.len())
            .map(|i| head_forward(validation.row(i), &head.params))
            .collect::<Result<Vec<_>>>()?;
        let t = fit_temperature(&logits, &label_indices(&validation))?;
        run.manifest.fitted_temperature = Some(t);
        Ok(config
            .scorers
            .iter()
            .map(|s| match s {
                Scorer::TempScaling { .. } => Scorer::TempScaling { temperature: t },
                other => other.clone(),
            })
            .collect())
    })?;

    let stems = scorer_file_stems(&scorers);
    let class_names = prototypes.class_names.clone();
    let mut reports = Vec::with_capacity(scorers.len());
    let mut all_records = Vec::with_capacity(scorers.len());
    for (scorer, stem) in scorers.iter().zip(&stems) {
        let stage = format!("score:{stem}");
        let (records, report) = run.stage(&stage, |run| {
            let threshold = match config.threshold {
                ThresholdPolicy::Fixed { value } => T::of(value),
                ThresholdPolicy::TprTarget { target } => {
                    let calib = score_table(
                        &validation,
                        &prototypes,
                        &head.params,
                        scorer,
                        config.predict_from,
                    )?;
                    let scores: Vec<T> = calib.iter().map(|r| r.score).collect();
                    threshold_at_tpr(&scores, target)?
                }
            };
            let mut records = score_table(&test, &prototypes, &head.params, scorer, config.predict_from)?;
            records.extend(score_table(
                &unknown,
                &prototypes,
                &head.params,
                scorer,
                config.predict_from,
            )?);
            if !extra_unknown.is_empty() {
                records.extend(score_table(
                    &extra_unknown,
                    &prototypes,
                    &head.params,
                    scorer,
                    config.predict_from,
                )?);
            }
            run.manifest.n_unknown = records
                .iter()
                .filter(|r| r.true_label == Some(Label::Unknown))
                .count();
            let report = evaluate(&records, &class_names, threshold)?;
            run.write(
                &format!("scores_{stem}.csv"),
                &io::scores::encode_scores_csv(&records, &class_names)?,
            )?;
            let jsonl = format!("scores_{stem}.jsonl");
            io::write_scores_jsonl(&records, &class_names, run.dir.join(&jsonl))?;
            run.record(&jsonl)?;
            run.write(
                &format!("report_{stem}.json"),
                (serde_json::to_string_pretty(&report)? + "\n").as_bytes(),
            )?;
            Ok((records, report))
        })?;
        reports.push(report);
        all_records.push(records);
    }

    run.stage("report", |run| {
        run.write(
            "reports.json",
            (serde_json::to_string_pretty(&reports)? + "\n").as_bytes(),
        )?;
        run.write("report.txt", render_table(&reports).as_bytes())?;
        Ok(())
    })?;
    run.write_manifest()?;

    Ok(RunOutcome {
        reports,
        records: all_records,
        head,
        prototypes,
        manifest: run.manifest,
    })
}

/// Checks that a head and prototypes describe the same classes and features.
pub fn check_compatible<T: Real>(head: &HeadParameters<T>, prototypes: &ClassPrototypes<T>) -> Result<()> {
    if head.class_names != prototypes.class_names || head.input_dim() != prototypes.dim() {
        return Err(Error::InvalidInput(
            "head and prototypes were built for different classes or feature dimensions".into(),
        ));
    }
    Ok(())
}
