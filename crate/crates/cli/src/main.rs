//! `ncm`: command-line front end for ncm-agreement.
//!
//! Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric or
//! training failure.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use ncm_agreement::io::{self, Storage};
use ncm_agreement::pipeline::scorer_file_stems;
use ncm_agreement::{
    evaluate, fit_prototypes, fit_prototypes_l2, generate_synthetic, render_table, run_pipeline, score_table,
    stratified_split, threshold_at_tpr, train_head, Error, FeatureTable, FitSplit, Label, PredictFrom, Real,
    Result, RunConfig, Scorer, SyntheticSpec, ThresholdPolicy, UnknownPlacement,
};

#[derive(Parser)]
#[command(name = "ncm", version, about = "Open-set scoring by NCM/classifier agreement")]
struct Cli {
    /// Seed for splitting, head initialization, shuffling and synthesis.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// JSON run config; command-line flags override its fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Where outputs are written (default: current directory, or the
    /// config's output_dir for `run`).
    #[arg(long, global = true)]
    output_dir: Option<PathBuf>,
    /// Scalar type used for every computation.
    #[arg(long, global = true, value_enum, default_value_t = Precision::F64)]
    precision: Precision,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Precision {
    F32,
    F64,
}

// Parsed once per process; variant size does not matter.
#[allow(clippy::large_enum_variant)]
#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic known/unknown benchmark.
    Synth {
        #[command(flatten)]
        synth: SynthArgs,
        #[arg(long, default_value = "csv")]
        format: Storage,
    },
    /// Stratified train/validation/test split of a feature file.
    Split {
        features: PathBuf,
        /// Three comma-separated fractions summing to 1.
        #[arg(long, value_delimiter = ',')]
        fractions: Option<Vec<f64>>,
        #[arg(long, default_value = "csv")]
        format: Storage,
    },
    /// Train the classification head on a closed-set feature file.
    TrainHead {
        features: PathBuf,
        #[command(flatten)]
        train: TrainArgs,
    },
    /// Fit class prototypes (per-class means).
    FitPrototypes {
        features: PathBuf,
        #[arg(long)]
        l2_normalize: bool,
    },
    /// Score feature files with one or more scorers.
    Score {
        #[arg(required = true)]
        features: Vec<PathBuf>,
        #[arg(long)]
        head: PathBuf,
        #[arg(long)]
        prototypes: PathBuf,
        #[command(flatten)]
        scoring: ScoringArgs,
    },
    /// Evaluate score files (one per scorer).
    Eval {
        #[arg(required = true)]
        scores: Vec<PathBuf>,
        /// Fixed accept threshold.
        #[arg(long, conflicts_with = "calibration")]
        threshold: Option<f64>,
        /// Score file whose known rows calibrate the threshold, matched to
        /// the evaluated files by position.
        #[arg(long)]
        calibration: Vec<PathBuf>,
        #[arg(long, default_value_t = 0.95)]
        target_tpr: f64,
        /// Prototype file supplying the class order; otherwise class names
        /// are sorted.
        #[arg(long)]
        prototypes: Option<PathBuf>,
    },
    /// Full pipeline: split, train, fit prototypes, score, evaluate.
    Run {
        #[arg(long, requires = "unknown")]
        known: Option<PathBuf>,
        #[arg(long, requires = "known")]
        unknown: Option<PathBuf>,
        /// Use a synthetic benchmark (tuned by the synthesis flags).
        #[arg(long, conflicts_with = "known")]
        synthetic: bool,
        #[command(flatten)]
        synth: SynthArgs,
        #[arg(long, value_delimiter = ',')]
        fractions: Option<Vec<f64>>,
        #[arg(long)]
        fit_split: Option<FitSplit>,
        #[arg(long)]
        l2_normalize: bool,
        #[arg(long, conflicts_with = "threshold")]
        target_tpr: Option<f64>,
        #[arg(long)]
        threshold: Option<f64>,
        /// Fit one temperature on validation for every temp_scaling scorer.
        #[arg(long)]
        calibrate_temperature: bool,
        #[command(flatten)]
        train: TrainArgs,
        #[command(flatten)]
        scoring: ScoringArgs,
    },
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    classes: Option<usize>,
    #[arg(long)]
    unknown_clusters: Option<usize>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    samples_per_class: Option<usize>,
    #[arg(long)]
    separation: Option<f64>,
    #[arg(long)]
    stddev: Option<f64>,
    #[arg(long)]
    placement: Option<UnknownPlacement>,
}

impl SynthArgs {
    fn any(&self) -> bool {
        self.classes.is_some()
            || self.unknown_clusters.is_some()
            || self.dim.is_some()
            || self.samples_per_class.is_some()
            || self.separation.is_some()
            || self.stddev.is_some()
            || self.placement.is_some()
    }

    fn apply(&self, base: Option<SyntheticSpec>, seed: Option<u64>) -> SyntheticSpec {
        let mut s = base.unwrap_or(SyntheticSpec {
            n_known_classes: 10,
            n_unknown_clusters: 4,
            feature_dim: 32,
            samples_per_class: 500,
            class_separation: 10.0,
            cluster_stddev: 1.0,
            unknown_placement: UnknownPlacement::Far,
            seed: 0,
        });
        set(&mut s.n_known_classes, self.classes);
        set(&mut s.n_unknown_clusters, self.unknown_clusters);
        set(&mut s.feature_dim, self.dim);
        set(&mut s.samples_per_class, self.samples_per_class);
        set(&mut s.class_separation, self.separation);
        set(&mut s.cluster_stddev, self.stddev);
        set(&mut s.unknown_placement, self.placement);
        set(&mut s.seed, seed);
        s
    }
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    warmup_fraction: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    weight_decay: Option<f64>,
    #[arg(long)]
    beta1: Option<f64>,
    #[arg(long)]
    beta2: Option<f64>,
    #[arg(long)]
    adam_eps: Option<f64>,
    #[arg(long)]
    hidden_dim: Option<usize>,
    /// Stop after this many epochs without improvement.
    #[arg(long)]
    patience: Option<usize>,
}

#[derive(Args)]
struct ScoringArgs {
    /// `ncm_agreement[:eps]`, `max_softmax` or `temp_scaling[:T]`; repeatable.
    #[arg(long = "scorer")]
    scorers: Vec<Scorer>,
    #[arg(long)]
    predict_from: Option<PredictFrom>,
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

impl Cli {
    fn base_config(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::from_json_file(p)?,
            None => RunConfig::default(),
        };
        if let Some(seed) = self.seed {
            cfg.seed = seed;
            cfg.train.seed = seed;
        }
        Ok(cfg)
    }

    fn out_dir(&self) -> Result<PathBuf> {
        let dir = self.output_dir.clone().unwrap_or_else(|| PathBuf::from("."));
        fs::create_dir_all(&dir)?;
        Ok(dir)
    }
}

fn apply_train(cfg: &mut RunConfig, t: &TrainArgs) {
    let c = &mut cfg.train;
    set(&mut c.learning_rate, t.learning_rate);
    set(&mut c.max_epochs, t.epochs);
    set(&mut c.warmup_fraction, t.warmup_fraction);
    set(&mut c.batch_size, t.batch_size);
    set(&mut c.weight_decay, t.weight_decay);
    set(&mut c.adam_beta1, t.beta1);
    set(&mut c.adam_beta2, t.beta2);
    set(&mut c.adam_eps, t.adam_eps);
    if t.hidden_dim.is_some() {
        c.hidden_dim = t.hidden_dim;
    }
    if t.patience.is_some() {
        c.patience = t.patience;
    }
}

fn apply_scoring(cfg: &mut RunConfig, s: &ScoringArgs) {
    if !s.scorers.is_empty() {
        cfg.scorers = s.scorers.clone();
    }
    set(&mut cfg.predict_from, s.predict_from);
}

fn fractions(v: &Option<Vec<f64>>, default: [f64; 3]) -> Result<[f64; 3]> {
    match v.as_deref() {
        None => Ok(default),
        Some(&[a, b, c]) => Ok([a, b, c]),
        Some(f) => Err(Error::Configuration(format!(
            "--fractions needs 3 values, got {}",
            f.len()
        ))),
    }
}

fn extension(storage: Storage) -> &'static str {
    match storage {
        Storage::Csv => "csv",
        Storage::Binary => "bin",
    }
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

fn execute<T: Real>(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Synth { synth, format } => {
            let base = cli.base_config()?;
            let spec = synth.apply(base.synthetic, cli.seed);
            let (known, unknown) = generate_synthetic::<T>(&spec)?;
            let dir = cli.out_dir()?;
            let ext = extension(*format);
            io::save_features(&known, dir.join(format!("known.{ext}")), *format)?;
            io::save_features(&unknown, dir.join(format!("unknown.{ext}")), *format)?;
            write_json(&dir.join("synth_spec.json"), &spec)?;
            println!(
                "known: {} rows, unknown: {} rows, d = {}",
                known.len(),
                unknown.len(),
                known.dim()
            );
        }
        Command::Split {
            features,
            fractions: f,
            format,
        } => {
            let cfg = cli.base_config()?;
            let fractions = fractions(f, cfg.split_fractions)?;
            let table: FeatureTable<T> = io::load_features(features, None)?;
            let parts = stratified_split(&table, fractions, cfg.seed)?;
            let dir = cli.out_dir()?;
            for (name, part) in ["train", "validation", "test"].iter().zip(&parts) {
                io::save_features(part, dir.join(format!("{name}.{}", extension(*format))), *format)?;
                println!("{name}: {} rows", part.len());
            }
        }
        Command::TrainHead { features, train } => {
            let mut cfg = cli.base_config()?;
            apply_train(&mut cfg, train);
            let table: FeatureTable<T> = io::load_features(features, None)?;
            let trained = train_head(&table, &cfg.train)?;
            let dir = cli.out_dir()?;
            io::save_head(&trained.params, dir.join("head.ncmh"))?;
            io::save_training_log(&trained.log, dir.join("training_log.json"))?;
            if let Some(last) = trained.log.last() {
                println!("trained {} epochs, final loss {:.6}", last.epoch, last.loss);
            }
        }
        Command::FitPrototypes {
            features,
            l2_normalize,
        } => {
            let cfg = cli.base_config()?;
            let table: FeatureTable<T> = io::load_features(features, None)?;
            let protos = if *l2_normalize || cfg.l2_normalize {
                fit_prototypes_l2(&table)?
            } else {
                fit_prototypes(&table)?
            };
            let dir = cli.out_dir()?;
            io::save_prototypes(&protos, dir.join("prototypes.ncmp"))?;
            fs::write(dir.join("prototypes.json"), io::prototypes_json(&protos)? + "\n")?;
            println!("{} prototypes, d = {}", protos.n_classes(), protos.dim());
        }
        Command::Score {
            features,
            head,
            prototypes,
            scoring,
        } => {
            let mut cfg = cli.base_config()?;
            apply_scoring(&mut cfg, scoring);
            let head = io::load_head::<T>(head)?;
            let protos = io::load_prototypes::<T>(prototypes)?;
            ncm_agreement::pipeline::check_compatible(&head, &protos)?;
            let tables = features
                .iter()
                .map(|p| io::load_features::<T>(p, Some(protos.dim())))
                .collect::<Result<Vec<_>>>()?;
            let dir = cli.out_dir()?;
            for (scorer, stem) in cfg.scorers.iter().zip(scorer_file_stems(&cfg.scorers)) {
                let mut records = Vec::new();
                for t in &tables {
                    records.extend(score_table(t, &protos, &head, scorer, cfg.predict_from)?);
                }
                io::write_scores_csv(
                    &records,
                    &protos.class_names,
                    dir.join(format!("scores_{stem}.csv")),
                )?;
                io::write_scores_jsonl(
                    &records,
                    &protos.class_names,
                    dir.join(format!("scores_{stem}.jsonl")),
                )?;
                println!("{scorer}: {} rows", records.len());
            }
        }
        Command::Eval {
            scores,
            threshold,
            calibration,
            target_tpr,
            prototypes,
        } => {
            if threshold.is_none() && calibration.len() != scores.len() {
                return Err(Error::Configuration(
                    "give --threshold, or one --calibration file per score file".into(),
                ));
            }
            let names = match prototypes {
                Some(p) => Some(io::load_prototypes::<T>(p)?.class_names),
                None => None,
            };
            let mut reports = Vec::new();
            for (i, path) in scores.iter().enumerate() {
                let (records, class_names) = io::read_scores_csv::<T>(path, names.as_deref())?;
                let t = match threshold {
                    Some(t) => T::of(*t),
                    None => {
                        let (calib, _) = io::read_scores_csv::<T>(&calibration[i], Some(&class_names))?;
                        let known: Vec<T> = calib
                            .iter()
                            .filter(|r| matches!(r.true_label, Some(Label::Class(_))))
                            .map(|r| r.score)
                            .collect();
                        threshold_at_tpr(&known, *target_tpr)?
                    }
                };
                reports.push(evaluate(&records, &class_names, t)?);
            }
            let dir = cli.out_dir()?;
            write_json(&dir.join("reports.json"), &reports)?;
            let table = render_table(&reports);
            fs::write(dir.join("report.txt"), &table)?;
            print!("{table}");
        }
        Command::Run {
            known,
            unknown,
            synthetic,
            synth,
            fractions: f,
            fit_split,
            l2_normalize,
            target_tpr,
            threshold,
            calibrate_temperature,
            train,
            scoring,
        } => {
            let mut cfg = cli.base_config()?;
            if known.is_some() {
                cfg.known_features = known.clone();
                cfg.unknown_features = unknown.clone();
                cfg.synthetic = None;
            } else if *synthetic || synth.any() || cfg.synthetic.is_some() {
                let base = cfg.synthetic.take();
                let seed = cli.seed.or(base.as_ref().map(|s| s.seed));
                cfg.synthetic = Some(synth.apply(base, seed));
                cfg.known_features = None;
                cfg.unknown_features = None;
            }
            cfg.split_fractions = fractions(f, cfg.split_fractions)?;
            set(&mut cfg.fit_split, *fit_split);
            cfg.l2_normalize |= *l2_normalize;
            cfg.calibrate_temperature |= *calibrate_temperature;
            if let Some(target) = target_tpr {
                cfg.threshold = ThresholdPolicy::TprTarget { target: *target };
            }
            if let Some(value) = threshold {
                cfg.threshold = ThresholdPolicy::Fixed { value: *value };
            }
            apply_train(&mut cfg, train);
            apply_scoring(&mut cfg, scoring);
            set(&mut cfg.output_dir, cli.output_dir.clone());
            let outcome = run_pipeline::<T>(&cfg)?;
            print!("{}", render_table(&outcome.reports));
            println!("artifacts in {}", cfg.output_dir.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.precision {
        Precision::F32 => execute::<f32>(&cli),
        Precision::F64 => execute::<f64>(&cli),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
