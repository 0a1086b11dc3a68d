//! Acceptance gate. Runs without the libtest harness so every criterion
//! prints exactly one PASS/FAIL line; exits non-zero if any criterion fails.
//!
//! Run with `cargo test -p ncm-agreement --test acceptance`.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use ncm_agreement::metrics::percent;
use ncm_agreement::{
    aupr, auroc, auroc_difference, entropy_bits, fpr_at_tpr, js_bits, kl_bits, loss_and_gradients,
    mean_cross_entropy, ncm_agreement, run_pipeline, threshold_at_tpr, DistributionF64, Error, EvalReport,
    HeadParametersF64, Matrix, Positives, RunConfig, Scorer, SyntheticSpec, TrainConfig, UnknownPlacement,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn check(id: u32, name: &str, budget: Duration, f: impl FnOnce() -> Outcome) -> bool {
    let start = Instant::now();
    let out = f();
    let elapsed = start.elapsed();
    let in_time = elapsed <= budget;
    let pass = out.pass && in_time;
    println!(
        "criterion {id} [{}] {name}: {} ({:.2} s, budget {} s)",
        if pass { "PASS" } else { "FAIL" },
        out.detail,
        elapsed.as_secs_f64(),
        budget.as_secs()
    );
    pass
}

// ---- double-double accumulation for the numerics oracle ----

#[derive(Clone, Copy, Default)]
struct Dd {
    hi: f64,
    lo: f64,
}

impl Dd {
    fn add(self, x: f64) -> Dd {
        let s = self.hi + x;
        let bb = s - self.hi;
        let err = (self.hi - (s - bb)) + (x - bb);
        let lo = self.lo + err;
        let hi = s + lo;
        Dd {
            hi,
            lo: lo - (hi - s),
        }
    }

    fn value(self) -> f64 {
        self.hi + self.lo
    }
}

fn oracle_entropy(p: &[f64]) -> f64 {
    p.iter()
        .filter(|&&x| x > 0.0)
        .fold(Dd::default(), |acc, &x| acc.add(-x * x.log2()))
        .value()
}

fn oracle_kl(p: &[f64], q: &[f64]) -> Option<f64> {
    let mut acc = Dd::default();
    for (&a, &b) in p.iter().zip(q) {
        if a > 0.0 {
            if b == 0.0 {
                return None;
            }
            acc = acc.add(a * (a.log2() - b.log2()));
        }
    }
    Some(acc.value())
}

fn oracle_js(p: &[f64], q: &[f64]) -> f64 {
    let m: Vec<f64> = p.iter().zip(q).map(|(a, b)| 0.5 * (a + b)).collect();
    0.5 * oracle_kl(p, &m).unwrap() + 0.5 * oracle_kl(q, &m).unwrap()
}

/// Random distribution of one of several shapes: dense, sparse, peaked,
/// near-uniform.
fn random_probs(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let raw: Vec<f64> = match rng.random_range(0..4) {
        0 => (0..n).map(|_| rng.random::<f64>()).collect(),
        1 => (0..n)
            .map(|_| {
                if rng.random_bool(0.4) {
                    0.0
                } else {
                    rng.random::<f64>()
                }
            })
            .collect(),
        2 => (0..n).map(|_| (rng.random_range(-30.0..30.0f64)).exp()).collect(),
        _ => (0..n).map(|_| 1.0 + 1e-6 * rng.random::<f64>()).collect(),
    };
    let s: f64 = raw.iter().sum();
    if s == 0.0 {
        let mut v = vec![0.0; n];
        v[rng.random_range(0..n)] = 1.0;
        return v;
    }
    raw.iter().map(|x| x / s).collect()
}

fn criterion_1() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    let mut undefined = 0;
    let mut disagreements = 0;
    for _ in 0..10_000 {
        let n = rng.random_range(2..=64);
        let p = DistributionF64::new(random_probs(&mut rng, n)).unwrap();
        let q = DistributionF64::new(random_probs(&mut rng, n)).unwrap();
        worst = worst.max((entropy_bits(&p) - oracle_entropy(p.probs())).abs());
        worst = worst.max((js_bits(&p, &q).unwrap() - oracle_js(p.probs(), q.probs())).abs());
        match (kl_bits(&p, &q), oracle_kl(p.probs(), q.probs())) {
            (Ok(v), Some(o)) => worst = worst.max((v - o).abs()),
            (Err(Error::DivergenceUndefined { .. }), None) => undefined += 1,
            _ => disagreements += 1,
        }
    }
    Outcome {
        pass: worst <= 1e-12 && disagreements == 0,
        detail: format!(
            "10000 pairs, max |err| {worst:.2e} (tol 1e-12), {undefined} undefined KL agreed, {disagreements} disagreements"
        ),
    }
}

fn criterion_2() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut out_of_bounds = 0;
    let mut bad_identity = 0;
    for _ in 0..100_000 {
        let n = rng.random_range(2..=64);
        let p = DistributionF64::new(random_probs(&mut rng, n)).unwrap();
        let q = DistributionF64::new(random_probs(&mut rng, n)).unwrap();
        let s = ncm_agreement(&p, &q).unwrap();
        if !(0.0..=1.0).contains(&s) {
            out_of_bounds += 1;
        }
        let u = DistributionF64::uniform(n).unwrap();
        let k = rng.random_range(0..n);
        let hot = DistributionF64::one_hot(n, k).unwrap();
        if ncm_agreement(&p, &u).unwrap() != 0.0
            || ncm_agreement(&u, &q).unwrap() != 0.0
            || ncm_agreement(&hot, &hot).unwrap() != 1.0
        {
            bad_identity += 1;
        }
    }
    Outcome {
        pass: out_of_bounds == 0 && bad_identity == 0,
        detail: format!(
            "100000 pairs, {out_of_bounds} outside [0,1], {bad_identity} identity violations (one-hot=1, uniform=0)"
        ),
    }
}

fn brute_auroc(known: &[f64], unknown: &[f64]) -> f64 {
    let mut wins = 0.0;
    for &k in known {
        for &u in unknown {
            wins += if k > u {
                1.0
            } else if k == u {
                0.5
            } else {
                0.0
            };
        }
    }
    wins / (known.len() * unknown.len()) as f64
}

/// Trapezoid over every distinct threshold, counting from scratch each time.
fn sweep_aupr(pos: &[f64], neg: &[f64]) -> f64 {
    let mut thresholds: Vec<f64> = pos.iter().chain(neg).copied().collect();
    thresholds.sort_by(|a, b| b.partial_cmp(a).unwrap());
    thresholds.dedup();
    let (mut prev_r, mut prev_p, mut area) = (0.0f64, 1.0f64, 0.0f64);
    for t in thresholds {
        let tp = pos.iter().filter(|&&s| s >= t).count();
        let fp = neg.iter().filter(|&&s| s >= t).count();
        let r = tp as f64 / pos.len() as f64;
        let p = tp as f64 / (tp + fp) as f64;
        area += (r - prev_r) * (p + prev_p) / 2.0;
        prev_r = r;
        prev_p = p;
    }
    area
}

/// Largest candidate threshold whose TPR reaches the target.
fn sweep_fpr(known: &[f64], unknown: &[f64], target: f64) -> f64 {
    let mut candidates: Vec<f64> = known.to_vec();
    candidates.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let t = candidates
        .into_iter()
        .find(|&t| known.iter().filter(|&&s| s >= t).count() as f64 / known.len() as f64 >= target)
        .unwrap();
    unknown.iter().filter(|&&s| s >= t).count() as f64 / unknown.len() as f64
}

fn random_scores(rng: &mut ChaCha8Rng, n: usize, shift: f64, tied: bool) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let v = rng.random::<f64>() + shift;
            if tied {
                (v * 8.0).round() / 8.0
            } else {
                v
            }
        })
        .collect()
}

fn criterion_3() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut auroc_err = 0.0f64;
    let mut aupr_mismatch = 0;
    let mut fpr_mismatch = 0;
    for i in 0..500 {
        let nk = rng.random_range(1..=1000);
        let nu = rng.random_range(1..=1000);
        let tied = i % 2 == 0;
        let shift = rng.random_range(-0.5..1.0);
        let known = random_scores(&mut rng, nk, shift, tied);
        let unknown = random_scores(&mut rng, nu, 0.0, tied);
        auroc_err = auroc_err.max((auroc(&known, &unknown).unwrap() - brute_auroc(&known, &unknown)).abs());
        let neg_known: Vec<f64> = known.iter().map(|s| -s).collect();
        let neg_unknown: Vec<f64> = unknown.iter().map(|s| -s).collect();
        if aupr(&known, &unknown, Positives::In).unwrap() != sweep_aupr(&known, &unknown)
            || aupr(&known, &unknown, Positives::Out).unwrap() != sweep_aupr(&neg_unknown, &neg_known)
        {
            aupr_mismatch += 1;
        }
        let target = [0.95, 0.5, 1.0, rng.random_range(0.01..1.0)][i % 4];
        if fpr_at_tpr(&known, &unknown, target).unwrap() != sweep_fpr(&known, &unknown, target) {
            fpr_mismatch += 1;
        }
        let t = threshold_at_tpr(&known, target).unwrap();
        if known.iter().filter(|&&s| s > t).count() as f64 / nk as f64 >= target {
            // A larger threshold would also have reached the target.
            fpr_mismatch += 1;
        }
    }
    Outcome {
        pass: auroc_err <= 1e-12 && aupr_mismatch == 0 && fpr_mismatch == 0,
        detail: format!(
            "500 score sets, AUROC max |err| {auroc_err:.2e} (tol 1e-12), AUPR mismatches {aupr_mismatch}, FPR mismatches {fpr_mismatch}"
        ),
    }
}

fn criterion_4() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let step = 1e-5;
    let mut worst = 0.0f64;
    let mut instances = 0;
    while instances < 100 {
        let d = rng.random_range(1..=8);
        let h = rng.random_range(1..=6);
        let n = rng.random_range(2..=4);
        let rows = rng.random_range(1..=6);
        let names = (0..n).map(|c| format!("c{c}")).collect();
        let mut params = HeadParametersF64::init(d, h, names, &mut rng);
        for t in params.tensors_mut() {
            for v in t.iter_mut() {
                *v += rng.random_range(-0.5..0.5);
            }
        }
        let xs = Matrix::from_vec(
            rows,
            d,
            (0..rows * d).map(|_| rng.random_range(-2.0..2.0)).collect(),
        )
        .unwrap();
        let labels: Vec<usize> = (0..rows).map(|_| rng.random_range(0..n)).collect();
        // Central differences are meaningless across a ReLU kink.
        let near_kink = xs.iter_rows().any(|x| {
            (0..h).any(|j| {
                let z: f64 = params.w1.row(j).iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + params.b1[j];
                z.abs() < 1e-3
            })
        });
        if near_kink {
            continue;
        }
        instances += 1;
        let (_, grads) = loss_and_gradients(&params, &xs, &labels).unwrap();
        let analytic: Vec<f64> = grads.tensors().iter().flat_map(|t| t.iter().copied()).collect();
        let mut k = 0;
        for t in 0..4 {
            for i in 0..params.tensors()[t].len() {
                let orig = params.tensors()[t][i];
                params.tensors_mut()[t][i] = orig + step;
                let up = mean_cross_entropy(&params, &xs, &labels).unwrap();
                params.tensors_mut()[t][i] = orig - step;
                let down = mean_cross_entropy(&params, &xs, &labels).unwrap();
                params.tensors_mut()[t][i] = orig;
                let numeric = (up - down) / (2.0 * step);
                let rel = (analytic[k] - numeric).abs() / (analytic[k].abs() + numeric.abs()).max(1e-7);
                worst = worst.max(rel);
                k += 1;
            }
        }
    }
    Outcome {
        pass: worst < 1e-4,
        detail: format!("100 instances (d<=8, h<=6, n<=4), max relative error {worst:.2e} (tol 1e-4)"),
    }
}

fn synthetic(separation: f64, placement: UnknownPlacement) -> SyntheticSpec {
    SyntheticSpec {
        n_known_classes: 10,
        n_unknown_clusters: 4,
        feature_dim: 32,
        samples_per_class: 500,
        class_separation: separation,
        cluster_stddev: 1.0,
        unknown_placement: placement,
        seed: 2024,
    }
}

fn run_config(spec: SyntheticSpec, dir: &std::path::Path) -> RunConfig {
    RunConfig {
        synthetic: Some(spec),
        seed: 7,
        train: TrainConfig {
            seed: 7,
            ..TrainConfig::default()
        },
        output_dir: dir.to_path_buf(),
        ..RunConfig::default()
    }
}

fn report<'a>(reports: &'a [EvalReport], name: &str) -> &'a EvalReport {
    reports.iter().find(|r| r.scorer_name == name).unwrap()
}

fn criterion_5(easy_dir: &std::path::Path) -> Outcome {
    let hard_dir = tempfile::tempdir().unwrap();
    let easy = run_pipeline::<f64>(&run_config(synthetic(10.0, UnknownPlacement::Far), easy_dir));
    let hard = run_pipeline::<f64>(&run_config(
        synthetic(3.0, UnknownPlacement::Interstitial),
        hard_dir.path(),
    ));
    match (easy, hard) {
        (Ok(easy), Ok(hard)) => {
            let easy_ncm = report(&easy.reports, "ncm_agreement").auroc;
            let hard_ncm = report(&hard.reports, "ncm_agreement").auroc;
            let hard_msp = report(&hard.reports, "max_softmax").auroc;
            Outcome {
                pass: easy_ncm >= 0.99 && hard_ncm > hard_msp,
                detail: format!(
                    "easy NCM AUROC {} (need >= 99.00); hard NCM AUROC {} vs MaxSoftmax {} (need NCM > MSP)",
                    percent(easy_ncm),
                    percent(hard_ncm),
                    percent(hard_msp)
                ),
            }
        }
        (e, h) => Outcome {
            pass: false,
            detail: format!("pipeline failed: easy {:?}, hard {:?}", e.err(), h.err()),
        },
    }
}

fn criterion_6(first_dir: &std::path::Path) -> Outcome {
    let second_dir = tempfile::tempdir().unwrap();
    let second = match run_pipeline::<f64>(&run_config(
        synthetic(10.0, UnknownPlacement::Far),
        second_dir.path(),
    )) {
        Ok(o) => o,
        Err(e) => {
            return Outcome {
                pass: false,
                detail: format!("rerun failed: {e}"),
            }
        }
    };
    let temp = report(&second.reports, "temp_scaling");
    let msp = report(&second.reports, "max_softmax");
    let identical_reduction = temp.same_metrics(msp);
    let mut differing = Vec::new();
    for name in second
        .manifest
        .artifacts
        .keys()
        .map(String::as_str)
        .chain(["manifest.json"])
    {
        let a = std::fs::read(first_dir.join(name));
        let b = std::fs::read(second_dir.path().join(name));
        if a.is_err() || a.ok() != b.ok() {
            differing.push(name.to_string());
        }
    }
    let mut direct = Scorer::TempScaling { temperature: 1.0 }.to_string();
    direct.push_str(" vs max_softmax");
    Outcome {
        pass: identical_reduction && differing.is_empty(),
        detail: format!(
            "{direct}: {}; rerun: {} artifacts compared, differing {:?}",
            if identical_reduction {
                "identical"
            } else {
                "different"
            },
            second.manifest.artifacts.len() + 1,
            differing
        ),
    }
}

fn criterion_7() -> Outcome {
    // (method, African AUROC, Swedish AUROC, printed difference), all in
    // hundredths of a percent.
    let rows: [(&str, i64, i64, i64); 9] = [
        ("MaxSoftmax", 9313, 9122, 225),
        ("TempScaling", 9315, 9124, 191),
        ("OpenMax", 9250, 9161, 191),
        ("VIM", 9352, 9427, 75),
        ("GROOD", 9301, 7508, 1703),
        ("NNGuide", 9285, 9782, 497),
        ("SCALE", 6070, 4576, 1494),
        ("PostMax", 9421, 8062, 1359),
        ("NCM Agreement", 9341, 9535, 194),
    ];
    let mut reproduced = 0;
    let mut wrong = Vec::new();
    let mut inconsistent = Vec::new();
    for (name, a, b, printed) in rows {
        let diff = auroc_difference(a as f64 / 10_000.0, b as f64 / 10_000.0).unwrap();
        let rendered = percent(diff);
        let exact = (a - b).abs();
        let exact_rendered = format!("{}.{:02}", exact / 100, exact % 100);
        if rendered != exact_rendered {
            wrong.push(format!("{name}: {rendered} != {exact_rendered}"));
        } else if exact == printed {
            reproduced += 1;
        } else {
            inconsistent.push(format!(
                "{name} printed {}.{:02}, columns give {rendered}",
                printed / 100,
                printed % 100
            ));
        }
    }
    Outcome {
        // Rows whose printed difference contradicts their own AUROC columns
        // cannot be reproduced by any |a - b|; they are reported, and every
        // row must match exact decimal arithmetic.
        pass: wrong.is_empty() && reproduced + inconsistent.len() == rows.len() && reproduced >= 6,
        detail: format!(
            "{reproduced}/9 printed differences reproduced at 2 decimals; source rows inconsistent with their own columns: {}",
            if inconsistent.is_empty() { "none".to_string() } else { inconsistent.join("; ") }
        ),
    }
}

fn main() -> ExitCode {
    let easy_dir = tempfile::tempdir().unwrap();
    let results = [
        check(1, "numerics oracle", Duration::from_secs(10), criterion_1),
        check(2, "agreement bounds", Duration::from_secs(10), criterion_2),
        check(3, "metric oracles", Duration::from_secs(60), criterion_3),
        check(4, "gradient check", Duration::from_secs(30), criterion_4),
        check(5, "synthetic separability", Duration::from_secs(300), || {
            criterion_5(easy_dir.path())
        }),
        check(
            6,
            "reduction identity and reruns",
            Duration::from_secs(300),
            || criterion_6(easy_dir.path()),
        ),
        check(7, "AUROC difference", Duration::from_secs(1), criterion_7),
    ];
    let passed = results.iter().filter(|&&p| p).count();
    println!("acceptance: {passed}/{} criteria passed", results.len());
    if passed == results.len() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
