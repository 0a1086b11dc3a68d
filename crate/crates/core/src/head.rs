//! Two-layer ReLU classification head trained on frozen features.
//!
//! `logits = W2 · relu(W1 · x + b1) + b2`. Training minimizes mean softmax
//! cross-entropy with Adam and decoupled weight decay under a linear-warmup,
//! cosine-decay learning-rate schedule. Training is single-threaded and
//! bit-reproducible for a given seed.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{stable_softmax, ProbabilityDistribution};
use crate::real::{argmax, Real};
use crate::table::{FeatureTable, Label, Matrix};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real + Serialize + serde::de::DeserializeOwned")]
pub struct HeadParameters<T: Real> {
    /// `h x d`
    pub w1: Matrix<T>,
    pub b1: Vec<T>,
    /// `n x h`
    pub w2: Matrix<T>,
    pub b2: Vec<T>,
    pub class_names: Vec<String>,
}

impl<T: Real> HeadParameters<T> {
    pub fn zeros(input_dim: usize, hidden_dim: usize, class_names: Vec<String>) -> Self {
        let n = class_names.len();
        Self {
            w1: Matrix::zeros(hidden_dim, input_dim),
            b1: vec![T::zero(); hidden_dim],
            w2: Matrix::zeros(n, hidden_dim),
            b2: vec![T::zero(); n],
            class_names,
        }
    }

    /// He-style uniform fan-in initialization, zero biases.
    pub fn init(input_dim: usize, hidden_dim: usize, class_names: Vec<String>, rng: &mut impl Rng) -> Self {
        let mut p = Self::zeros(input_dim, hidden_dim, class_names);
        let a1 = (6.0 / input_dim as f64).sqrt();
        for w in p.w1.as_mut_slice() {
            *w = T::of(rng.random_range(-a1..a1));
        }
        let a2 = (6.0 / hidden_dim as f64).sqrt();
        for w in p.w2.as_mut_slice() {
            *w = T::of(rng.random_range(-a2..a2));
        }
        p
    }

    pub fn input_dim(&self) -> usize {
        self.w1.cols()
    }

    pub fn hidden_dim(&self) -> usize {
        self.w1.rows()
    }

    pub fn n_classes(&self) -> usize {
        self.w2.rows()
    }

    pub fn validate(&self) -> Result<()> {
        let (h, d, n) = (self.hidden_dim(), self.input_dim(), self.n_classes());
        if h == 0 || d == 0 || n == 0 {
            return Err(Error::InvalidInput(format!(
                "degenerate head shape d={d} h={h} n={n}"
            )));
        }
        if self.b1.len() != h || self.w2.cols() != h || self.b2.len() != n || self.class_names.len() != n {
            return Err(Error::InvalidInput(format!(
                "inconsistent head shapes: w1 {h}x{d}, b1 {}, w2 {n}x{}, b2 {}, {} class names",
                self.b1.len(),
                self.w2.cols(),
                self.b2.len(),
                self.class_names.len()
            )));
        }
        if self.tensors().iter().any(|t| t.iter().any(|v| !v.is_finite())) {
            return Err(Error::InvalidInput("head parameters must be finite".into()));
        }
        Ok(())
    }

    /// `[w1, b1, w2, b2]` as flat slices.
    pub fn tensors(&self) -> [&[T]; 4] {
        [self.w1.as_slice(), &self.b1, self.w2.as_slice(), &self.b2]
    }

    pub fn tensors_mut(&mut self) -> [&mut [T]; 4] {
        [
            self.w1.as_mut_slice(),
            &mut self.b1,
            self.w2.as_mut_slice(),
            &mut self.b2,
        ]
    }

    fn check_input(&self, x: &[T]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::InvalidInput(format!(
                "feature vector has dimension {}, head expects {}",
                x.len(),
                self.input_dim()
            )));
        }
        Ok(())
    }
}

/// Gradients of the loss, shaped like [`HeadParameters`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T: Real> {
    pub w1: Matrix<T>,
    pub b1: Vec<T>,
    pub w2: Matrix<T>,
    pub b2: Vec<T>,
}

impl<T: Real> Gradients<T> {
    fn zeros_like(p: &HeadParameters<T>) -> Self {
        Self {
            w1: Matrix::zeros(p.hidden_dim(), p.input_dim()),
            b1: vec![T::zero(); p.hidden_dim()],
            w2: Matrix::zeros(p.n_classes(), p.hidden_dim()),
            b2: vec![T::zero(); p.n_classes()],
        }
    }

    pub fn tensors(&self) -> [&[T]; 4] {
        [self.w1.as_slice(), &self.b1, self.w2.as_slice(), &self.b2]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub max_epochs: usize,
    pub warmup_fraction: f64,
    pub batch_size: usize,
    pub weight_decay: f64,
    pub seed: u64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    /// Defaults to the input dimension.
    pub hidden_dim: Option<usize>,
    /// Stop after this many epochs without a lower epoch loss.
    pub patience: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.005,
            max_epochs: 500,
            warmup_fraction: 0.1,
            batch_size: 256,
            weight_decay: 0.01,
            seed: 0,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            hidden_dim: None,
            patience: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParameter(msg));
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return bad(format!("learning_rate must be > 0, got {}", self.learning_rate));
        }
        if !(self.warmup_fraction > 0.0 && self.warmup_fraction < 1.0) {
            return bad(format!(
                "warmup_fraction must be in (0, 1), got {}",
                self.warmup_fraction
            ));
        }
        if self.max_epochs == 0 || self.batch_size == 0 {
            return bad("max_epochs and batch_size must be positive".into());
        }
        if !(self.weight_decay >= 0.0) || !self.weight_decay.is_finite() {
            return bad(format!("weight_decay must be >= 0, got {}", self.weight_decay));
        }
        for (name, b) in [("adam_beta1", self.adam_beta1), ("adam_beta2", self.adam_beta2)] {
            if !(0.0..1.0).contains(&b) {
                return bad(format!("{name} must be in [0, 1), got {b}"));
            }
        }
        if !(self.adam_eps > 0.0) {
            return bad(format!("adam_eps must be > 0, got {}", self.adam_eps));
        }
        if self.hidden_dim == Some(0) {
            return bad("hidden_dim must be positive".into());
        }
        Ok(())
    }
}

/// Learning rate at optimizer step `step` of `total_steps`.
///
/// Linear ramp from 0 to `learning_rate` over the first
/// `ceil(warmup_fraction * total_steps)` steps, then half-cosine decay to 0
/// at `total_steps`.
pub fn cosine_warmup_lr(step: usize, total_steps: usize, config: &TrainConfig) -> Result<f64> {
    if total_steps == 0 {
        return Err(Error::InvalidParameter("total_steps must be positive".into()));
    }
    if step > total_steps {
        return Err(Error::InvalidParameter(format!(
            "step {step} is past total_steps {total_steps}"
        )));
    }
    Ok(lr_at(step as f64, total_steps, config))
}

pub(crate) fn warmup_steps(total_steps: usize, config: &TrainConfig) -> usize {
    ((config.warmup_fraction * total_steps as f64).ceil() as usize).clamp(1, total_steps)
}

/// Schedule evaluated at a real-valued step position.
pub(crate) fn lr_at(step: f64, total_steps: usize, config: &TrainConfig) -> f64 {
    let warmup = warmup_steps(total_steps, config) as f64;
    let total = total_steps as f64;
    if step >= total {
        return 0.0;
    }
    if step < warmup {
        return config.learning_rate * step / warmup;
    }
    let progress = (step - warmup) / (total - warmup).max(1.0);
    config.learning_rate * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
}

struct Activations<T> {
    pre: Vec<T>,
    hidden: Vec<T>,
    logits: Vec<T>,
}

fn forward_full<T: Real>(x: &[T], p: &HeadParameters<T>) -> Activations<T> {
    let pre: Vec<T> = p.w1.iter_rows().zip(&p.b1).map(|(w, &b)| dot(w, x) + b).collect();
    let hidden: Vec<T> = pre.iter().map(|&z| z.max(T::zero())).collect();
    let logits =
        p.w2.iter_rows()
            .zip(&p.b2)
            .map(|(w, &b)| dot(w, &hidden) + b)
            .collect();
    Activations { pre, hidden, logits }
}

#[inline]
fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&u, &v)| acc + u * v)
}

/// Logits of the head for one feature vector.
pub fn head_forward<T: Real>(x: &[T], params: &HeadParameters<T>) -> Result<Vec<T>> {
    params.check_input(x)?;
    Ok(forward_full(x, params).logits)
}

/// Softmax of the head's logits at temperature 1.
pub fn head_probabilities<T: Real>(
    x: &[T],
    params: &HeadParameters<T>,
) -> Result<ProbabilityDistribution<T>> {
    stable_softmax(&head_forward(x, params)?, T::one())
}

fn log_sum_exp<T: Real>(v: &[T]) -> T {
    let m = v[argmax(v)];
    m + v
        .iter()
        .map(|&x| (x - m).exp())
        .fold(T::zero(), |a, b| a + b)
        .ln()
}

fn check_batch<T: Real>(params: &HeadParameters<T>, xs: &Matrix<T>, labels: &[usize]) -> Result<()> {
    if xs.rows() != labels.len() || xs.rows() == 0 {
        return Err(Error::InvalidInput(format!(
            "{} rows but {} labels",
            xs.rows(),
            labels.len()
        )));
    }
    if xs.cols() != params.input_dim() {
        return Err(Error::InvalidInput(format!(
            "features have dimension {}, head expects {}",
            xs.cols(),
            params.input_dim()
        )));
    }
    if let Some(&l) = labels.iter().find(|&&l| l >= params.n_classes()) {
        return Err(Error::InvalidInput(format!("label {l} out of range")));
    }
    Ok(())
}

/// Mean softmax cross-entropy in nats.
pub fn mean_cross_entropy<T: Real>(
    params: &HeadParameters<T>,
    xs: &Matrix<T>,
    labels: &[usize],
) -> Result<T> {
    check_batch(params, xs, labels)?;
    let total = xs
        .iter_rows()
        .zip(labels)
        .map(|(x, &y)| {
            let logits = forward_full(x, params).logits;
            log_sum_exp(&logits) - logits[y]
        })
        .fold(T::zero(), |a, b| a + b);
    Ok(total / T::of_usize(labels.len()))
}

/// Mean cross-entropy and its gradient over all rows of `xs`.
pub fn loss_and_gradients<T: Real>(
    params: &HeadParameters<T>,
    xs: &Matrix<T>,
    labels: &[usize],
) -> Result<(T, Gradients<T>)> {
    check_batch(params, xs, labels)?;
    let rows: Vec<usize> = (0..xs.rows()).collect();
    Ok(batch_gradients(params, xs, labels, &rows))
}

fn batch_gradients<T: Real>(
    params: &HeadParameters<T>,
    xs: &Matrix<T>,
    labels: &[usize],
    rows: &[usize],
) -> (T, Gradients<T>) {
    let mut g = Gradients::zeros_like(params);
    let scale = T::one() / T::of_usize(rows.len());
    let mut loss = T::zero();
    let (n, h) = (params.n_classes(), params.hidden_dim());
    let mut delta_out = vec![T::zero(); n];
    let mut delta_hidden = vec![T::zero(); h];
    for &i in rows {
        let x = xs.row(i);
        let y = labels[i];
        let act = forward_full(x, params);
        let lse = log_sum_exp(&act.logits);
        loss += lse - act.logits[y];
        for (c, d) in delta_out.iter_mut().enumerate() {
            let p = (act.logits[c] - lse).exp();
            *d = (if c == y { p - T::one() } else { p }) * scale;
        }
        for (c, &d) in delta_out.iter().enumerate() {
            g.b2[c] += d;
            for (gw, &a) in g.w2.row_mut(c).iter_mut().zip(&act.hidden) {
                *gw += d * a;
            }
        }
        for (j, dh) in delta_hidden.iter_mut().enumerate() {
            *dh = if act.pre[j] > T::zero() {
                (0..n).fold(T::zero(), |acc, c| acc + params.w2.get(c, j) * delta_out[c])
            } else {
                T::zero()
            };
        }
        for (j, &dh) in delta_hidden.iter().enumerate() {
            if dh == T::zero() {
                continue;
            }
            g.b1[j] += dh;
            for (gw, &xv) in g.w1.row_mut(j).iter_mut().zip(x) {
                *gw += dh * xv;
            }
        }
    }
    (loss * scale, g)
}

/// Adam with decoupled weight decay applied to the weight matrices only.
struct AdamW<T: Real> {
    m: [Vec<T>; 4],
    v: [Vec<T>; 4],
    t: i32,
    beta1: T,
    beta2: T,
    eps: T,
    weight_decay: T,
}

const DECAYED: [bool; 4] = [true, false, true, false];

impl<T: Real> AdamW<T> {
    fn new(params: &HeadParameters<T>, config: &TrainConfig) -> Self {
        let zeros = |s: &[T]| vec![T::zero(); s.len()];
        let t = params.tensors();
        Self {
            m: [zeros(t[0]), zeros(t[1]), zeros(t[2]), zeros(t[3])],
            v: [zeros(t[0]), zeros(t[1]), zeros(t[2]), zeros(t[3])],
            t: 0,
            beta1: T::of(config.adam_beta1),
            beta2: T::of(config.adam_beta2),
            eps: T::of(config.adam_eps),
            weight_decay: T::of(config.weight_decay),
        }
    }

    fn step(&mut self, params: &mut HeadParameters<T>, grads: &Gradients<T>, lr: T) {
        self.t += 1;
        let c1 = T::one() - self.beta1.powi(self.t);
        let c2 = T::one() - self.beta2.powi(self.t);
        let grads = grads.tensors();
        for (k, p) in params.tensors_mut().into_iter().enumerate() {
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for i in 0..p.len() {
                let g = grads[k][i];
                m[i] = self.beta1 * m[i] + (T::one() - self.beta1) * g;
                v[i] = self.beta2 * v[i] + (T::one() - self.beta2) * g * g;
                let mut update = (m[i] / c1) / ((v[i] / c2).sqrt() + self.eps);
                if DECAYED[k] {
                    update += self.weight_decay * p[i];
                }
                p[i] -= lr * update;
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedHead<T: Real> {
    pub params: HeadParameters<T>,
    pub log: Vec<EpochLog>,
}

/// Relative loss decrease that counts as progress for `patience`.
const MIN_RELATIVE_IMPROVEMENT: f64 = 1e-6;

/// Trains a fresh head on a closed-set table.
pub fn train_head<T: Real>(train_set: &FeatureTable<T>, config: &TrainConfig) -> Result<TrainedHead<T>> {
    config.validate()?;
    train_set.require_closed_set()?;
    if train_set.n_classes() < 2 {
        return Err(Error::InvalidInput("training needs at least 2 classes".into()));
    }
    let labels: Vec<usize> = train_set
        .labels()
        .iter()
        .map(|l| l.class().expect("closed set checked"))
        .collect();
    let d = train_set.dim();
    let h = config.hidden_dim.unwrap_or(d);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut params = HeadParameters::init(d, h, train_set.class_names().to_vec(), &mut rng);
    let mut opt = AdamW::new(&params, config);

    let n_rows = train_set.len();
    let batches_per_epoch = n_rows.div_ceil(config.batch_size);
    let total_steps = config.max_epochs * batches_per_epoch;
    let mut order: Vec<usize> = (0..n_rows).collect();
    let mut step = 0usize;
    let mut log = Vec::with_capacity(config.max_epochs);
    let mut best = f64::INFINITY;
    let mut stale = 0usize;

    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = T::zero();
        let mut lr = 0.0;
        for batch in order.chunks(config.batch_size) {
            let (loss, grads) = batch_gradients(&params, train_set.features(), &labels, batch);
            if !loss.is_finite() {
                return Err(Error::TrainingDiverged { epoch });
            }
            epoch_loss += loss * T::of_usize(batch.len());
            step += 1;
            lr = lr_at(step as f64, total_steps, config);
            opt.step(&mut params, &grads, T::of(lr));
        }
        let loss = (epoch_loss / T::of_usize(n_rows)).as_f64();
        if !loss.is_finite() || params.tensors().iter().any(|t| t.iter().any(|v| !v.is_finite())) {
            return Err(Error::TrainingDiverged { epoch });
        }
        log.push(EpochLog { epoch, loss, lr });
        if let Some(patience) = config.patience {
            if best.is_infinite() || loss < best - MIN_RELATIVE_IMPROVEMENT * best {
                best = loss;
                stale = 0;
            } else {
                stale += 1;
                if stale >= patience {
                    break;
                }
            }
        }
    }
    Ok(TrainedHead { params, log })
}

/// Fraction of closed-set rows whose argmax logit matches the label.
pub fn accuracy<T: Real>(params: &HeadParameters<T>, table: &FeatureTable<T>) -> Result<f64> {
    let mut hits = 0usize;
    let mut total = 0usize;
    for (i, l) in table.labels().iter().enumerate() {
        if let Label::Class(c) = l {
            total += 1;
            if argmax(&head_forward(table.row(i), params)?) == *c {
                hits += 1;
            }
        }
    }
    if total == 0 {
        return Err(Error::InvalidInput("no labelled rows".into()));
    }
    Ok(hits as f64 / total as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, Normal};

    fn names(n: usize) -> Vec<String> {
        (0..n).map(|c| format!("c{c}")).collect()
    }

    fn random_params(d: usize, h: usize, n: usize, seed: u64) -> HeadParameters<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = HeadParameters::init(d, h, names(n), &mut rng);
        for b in p.b1.iter_mut().chain(p.b2.iter_mut()) {
            *b = rng.random_range(-0.5..0.5);
        }
        p
    }

    /// Naive triple loop, written independently of `forward_full`.
    #[allow(clippy::needless_range_loop)]
    fn oracle_forward(x: &[f64], p: &HeadParameters<f64>) -> Vec<f64> {
        let (h, d, n) = (p.hidden_dim(), p.input_dim(), p.n_classes());
        let mut hidden = vec![0.0; h];
        for j in 0..h {
            let mut s = p.b1[j];
            for k in 0..d {
                s += p.w1.get(j, k) * x[k];
            }
            hidden[j] = if s > 0.0 { s } else { 0.0 };
        }
        let mut out = vec![0.0; n];
        for c in 0..n {
            let mut s = p.b2[c];
            for j in 0..h {
                s += p.w2.get(c, j) * hidden[j];
            }
            out[c] = s;
        }
        out
    }

    #[test]
    fn zero_head_gives_zero_logits() {
        let p = HeadParameters::<f64>::zeros(3, 2, names(4));
        assert_eq!(head_forward(&[1.0, -2.0, 3.0], &p).unwrap(), vec![0.0; 4]);
        let probs = head_probabilities(&[1.0, -2.0, 3.0], &p).unwrap();
        assert_eq!(probs.probs(), &[0.25; 4]);
    }

    #[test]
    fn relu_clamps_negative_preactivation() {
        let mut p = HeadParameters::<f64>::zeros(1, 1, names(1));
        p.w1 = Matrix::from_vec(1, 1, vec![-2.0]).unwrap();
        p.w2 = Matrix::from_vec(1, 1, vec![1.0]).unwrap();
        assert_eq!(head_forward(&[3.0], &p).unwrap(), vec![0.0]);
    }

    #[test]
    fn forward_matches_triple_loop() {
        let p = random_params(8, 4, 3, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..20 {
            let x: Vec<f64> = (0..8).map(|_| rng.random_range(-3.0..3.0)).collect();
            let got = head_forward(&x, &p).unwrap();
            for (a, b) in got.iter().zip(oracle_forward(&x, &p)) {
                assert!((a - b).abs() < 1e-12);
            }
            let probs = head_probabilities(&x, &p).unwrap();
            let logits = oracle_forward(&x, &p);
            let z: f64 = logits.iter().map(|l| l.exp()).sum();
            for (q, l) in probs.probs().iter().zip(&logits) {
                assert!((q - l.exp() / z).abs() < 1e-12);
            }
        }
        assert!(head_forward(&[0.0; 7], &p).is_err());
    }

    #[test]
    fn analytic_probabilities() {
        let mut p = HeadParameters::<f64>::zeros(1, 1, names(2));
        p.b2 = vec![0.0, 3f64.ln()];
        let probs = head_probabilities(&[1.0], &p).unwrap();
        assert!((probs.probs()[0] - 0.25).abs() < 1e-15);
    }

    #[test]
    fn positively_homogeneous_without_biases() {
        let mut p = random_params(6, 5, 3, 9);
        p.b1.iter_mut().for_each(|b| *b = 0.0);
        p.b2.iter_mut().for_each(|b| *b = 0.0);
        let x = [0.3, -1.2, 2.0, 0.7, -0.1, 1.5];
        let base = head_forward(&x, &p).unwrap();
        for alpha in [0.01, 0.5, 3.0, 1e3] {
            let xs: Vec<f64> = x.iter().map(|v| v * alpha).collect();
            for (a, b) in head_forward(&xs, &p).unwrap().iter().zip(&base) {
                assert!((a - alpha * b).abs() < 1e-10 * alpha.max(1.0));
            }
        }
    }

    #[test]
    fn schedule_endpoints() {
        let cfg = TrainConfig::default();
        let total = 1000;
        let w = warmup_steps(total, &cfg);
        assert_eq!(w, 100);
        assert_eq!(cosine_warmup_lr(0, total, &cfg).unwrap(), 0.0);
        assert_eq!(cosine_warmup_lr(w, total, &cfg).unwrap(), cfg.learning_rate);
        assert_eq!(cosine_warmup_lr(total, total, &cfg).unwrap(), 0.0);
        assert!((lr_at(w as f64 - 1e-7, total, &cfg) - cfg.learning_rate).abs() < 1e-10);
        assert!((lr_at(w as f64 + 1e-7, total, &cfg) - cfg.learning_rate).abs() < 1e-10);
        assert!(cosine_warmup_lr(1, 0, &cfg).is_err());
        assert!(cosine_warmup_lr(11, 10, &cfg).is_err());
        let mut prev = f64::INFINITY;
        for s in w..=total {
            let lr = cosine_warmup_lr(s, total, &cfg).unwrap();
            assert!(lr <= prev);
            prev = lr;
        }
    }

    #[test]
    fn zero_output_layer_gives_log_n_loss() {
        let mut p = random_params(4, 3, 5, 1);
        p.w2 = Matrix::zeros(5, 3);
        p.b2 = vec![0.0; 5];
        let xs = Matrix::from_rows(&[vec![1.0, 2.0, 3.0, 4.0], vec![-1.0, 0.0, 0.5, 2.0]]).unwrap();
        let loss = mean_cross_entropy(&p, &xs, &[0, 3]).unwrap();
        assert!((loss - 5f64.ln()).abs() < 1e-14);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (d, h, n, b) = (5, 4, 3, 7);
        let p = random_params(d, h, n, 4);
        let rows: Vec<Vec<f64>> = (0..b)
            .map(|_| (0..d).map(|_| rng.random_range(-2.0..2.0)).collect())
            .collect();
        let xs = Matrix::from_rows(&rows).unwrap();
        let labels: Vec<usize> = (0..b).map(|i| i % n).collect();
        let (_, g) = loss_and_gradients(&p, &xs, &labels).unwrap();
        let step = 1e-5;
        for k in 0..4 {
            for i in 0..p.tensors()[k].len() {
                let mut plus = p.clone();
                plus.tensors_mut()[k][i] += step;
                let mut minus = p.clone();
                minus.tensors_mut()[k][i] -= step;
                let fd = (mean_cross_entropy(&plus, &xs, &labels).unwrap()
                    - mean_cross_entropy(&minus, &xs, &labels).unwrap())
                    / (2.0 * step);
                let an = g.tensors()[k][i];
                assert!(
                    (fd - an).abs() <= 1e-6 * (1.0 + an.abs()),
                    "tensor {k} entry {i}: {an} vs {fd}"
                );
            }
        }
    }

    fn blobs(per_class: usize, seed: u64) -> FeatureTable<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, 1.0).unwrap();
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for (c, cx) in [3.0, -3.0].into_iter().enumerate() {
            for _ in 0..per_class {
                rows.push(vec![cx + noise.sample(&mut rng), noise.sample(&mut rng)]);
                labels.push(Label::Class(c));
            }
        }
        FeatureTable::new(
            (0..rows.len()).map(|i| format!("s{i}")).collect(),
            Matrix::from_rows(&rows).unwrap(),
            labels,
            names(2),
        )
        .unwrap()
    }

    #[test]
    fn separates_two_blobs() {
        let table = blobs(200, 42);
        let cfg = TrainConfig {
            max_epochs: 50,
            batch_size: 32,
            ..TrainConfig::default()
        };
        let trained = train_head(&table, &cfg).unwrap();
        assert_eq!(trained.log.len(), 50);
        assert!(trained.log.iter().all(|e| e.loss.is_finite()));
        assert!(trained.log.last().unwrap().loss < trained.log[0].loss);
        assert!(accuracy(&trained.params, &table).unwrap() >= 0.99);
    }

    #[test]
    fn training_is_deterministic() {
        let table = blobs(50, 1);
        let cfg = TrainConfig {
            max_epochs: 5,
            batch_size: 16,
            seed: 99,
            ..TrainConfig::default()
        };
        let a = train_head(&table, &cfg).unwrap();
        let b = train_head(&table, &cfg).unwrap();
        assert_eq!(a, b);
        let c = train_head(&table, &TrainConfig { seed: 100, ..cfg }).unwrap();
        assert_ne!(a.params, c.params);
    }

    #[test]
    fn patience_stops_early() {
        let table = blobs(20, 2);
        let cfg = TrainConfig {
            max_epochs: 400,
            learning_rate: 1e-12,
            batch_size: 40,
            patience: Some(3),
            ..TrainConfig::default()
        };
        let trained = train_head(&table, &cfg).unwrap();
        assert!(trained.log.len() < 400);
    }

    #[test]
    fn patience_lets_improving_runs_continue() {
        let table = blobs(100, 2);
        let cfg = TrainConfig {
            max_epochs: 30,
            batch_size: 32,
            patience: Some(3),
            ..TrainConfig::default()
        };
        let trained = train_head(&table, &cfg).unwrap();
        assert!(
            trained.log.len() > 20,
            "stopped after {} epochs",
            trained.log.len()
        );
    }

    #[test]
    fn divergence_is_reported() {
        let table = blobs(20, 3);
        let cfg = TrainConfig {
            max_epochs: 50,
            learning_rate: 1e300,
            ..TrainConfig::default()
        };
        assert!(matches!(
            train_head(&table, &cfg),
            Err(Error::TrainingDiverged { .. })
        ));
    }

    #[test]
    fn rejects_bad_config_and_open_set_rows() {
        let table = blobs(5, 4);
        let cfg = TrainConfig {
            warmup_fraction: 1.0,
            ..TrainConfig::default()
        };
        assert!(matches!(
            train_head(&table, &cfg),
            Err(Error::InvalidParameter(_))
        ));
        let mut labels = table.labels().to_vec();
        labels[0] = Label::Unknown;
        let open =
            FeatureTable::new(table.ids().to_vec(), table.features().clone(), labels, names(2)).unwrap();
        assert!(matches!(
            train_head(&open, &TrainConfig::default()),
            Err(Error::InvalidFitSet(_))
        ));
    }

    #[test]
    fn trains_in_single_precision() {
        let wide = blobs(50, 8);
        let table = wide.cast::<f32>();
        let cfg = TrainConfig {
            max_epochs: 100,
            batch_size: 16,
            ..TrainConfig::default()
        };
        let trained = train_head(&table, &cfg).unwrap();
        let reference = train_head(&wide, &cfg).unwrap();
        let (a, b) = (
            trained.log.last().unwrap().loss,
            reference.log.last().unwrap().loss,
        );
        assert!((a - b).abs() < 1e-3 * b.max(1e-3), "{a} vs {b}");
        assert!(accuracy(&trained.params, &table).unwrap() > 0.95);
    }
}
