//! Softmax, entropy and divergence kernels.
//!
//! All logarithms are base 2, so entropies are in bits, normalized entropy
//! `H(p) / log2(n)` lies in `[0, 1]` and the Jensen-Shannon divergence is
//! bounded by 1. Terms with zero probability contribute nothing
//! (`0 * log 0 = 0`).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::real::{compensated_sum, Real};

/// A probability vector over `n >= 2` classes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real + Serialize + serde::de::DeserializeOwned")]
pub struct ProbabilityDistribution<T: Real> {
    probs: Vec<T>,
}

impl<T: Real> ProbabilityDistribution<T> {
    /// Validates `probs`.
    ///
    /// Entries may be negative, and the total may differ from 1, by at most
    /// [`Real::prob_tolerance`]; such drift is clamped and renormalized.
    /// Anything worse is rejected.
    pub fn new(mut probs: Vec<T>) -> Result<Self> {
        let tol = T::prob_tolerance();
        if probs.len() < 2 {
            return Err(Error::InvalidInput(format!(
                "a distribution needs at least 2 entries, got {}",
                probs.len()
            )));
        }
        for (i, p) in probs.iter_mut().enumerate() {
            if !p.is_finite() {
                return Err(Error::InvalidInput(format!("entry {i} is not finite")));
            }
            if *p < T::zero() {
                if *p < -tol {
                    return Err(Error::InvalidInput(format!("entry {i} is negative ({p})")));
                }
                *p = T::zero();
            }
        }
        let total = compensated_sum(probs.iter().copied());
        if (total - T::one()).abs() > tol {
            return Err(Error::InvalidInput(format!("entries sum to {total}, not 1")));
        }
        if total != T::one() {
            for p in probs.iter_mut() {
                *p /= total;
            }
        }
        Ok(Self { probs })
    }

    /// Caller guarantees the invariants hold.
    pub(crate) fn from_normalized(probs: Vec<T>) -> Self {
        debug_assert!(probs.len() >= 2);
        Self { probs }
    }

    pub fn uniform(n: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidInput(format!(
                "a distribution needs at least 2 entries, got {n}"
            )));
        }
        Ok(Self {
            probs: vec![T::one() / T::of_usize(n); n],
        })
    }

    pub fn one_hot(n: usize, hot: usize) -> Result<Self> {
        if n < 2 || hot >= n {
            return Err(Error::InvalidInput(format!(
                "one-hot index {hot} invalid for {n} classes"
            )));
        }
        let mut probs = vec![T::zero(); n];
        probs[hot] = T::one();
        Ok(Self { probs })
    }

    pub fn probs(&self) -> &[T] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn argmax(&self) -> usize {
        crate::real::argmax(&self.probs)
    }

    pub fn max(&self) -> T {
        self.probs[self.argmax()]
    }

    pub fn into_vec(self) -> Vec<T> {
        self.probs
    }

    fn is_flat(&self) -> bool {
        let first = self.probs[0];
        self.probs.iter().all(|&p| p == first)
    }
}

/// `softmax(values / temperature)` with max subtraction.
pub fn stable_softmax<T: Real>(values: &[T], temperature: T) -> Result<ProbabilityDistribution<T>> {
    if !(temperature > T::zero()) || !temperature.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "temperature must be positive and finite, got {temperature}"
        )));
    }
    if values.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "softmax needs at least 2 values, got {}",
            values.len()
        )));
    }
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::InvalidInput(format!("value {i} is not finite")));
    }
    let max = values[crate::real::argmax(values)];
    // Subtract before dividing: (v - max) stays finite for |v| up to ~1e307.
    let mut exps: Vec<T> = values.iter().map(|&v| ((v - max) / temperature).exp()).collect();
    let total = compensated_sum(exps.iter().copied());
    for e in exps.iter_mut() {
        *e /= total;
    }
    Ok(ProbabilityDistribution::from_normalized(exps))
}

/// Shannon entropy in bits, in `[0, log2(n)]`.
///
/// A distribution with all entries equal returns exactly `log2(n)`.
pub fn entropy_bits<T: Real>(p: &ProbabilityDistribution<T>) -> T {
    let max = T::of_usize(p.len()).log2();
    if p.is_flat() {
        return max;
    }
    let h = -compensated_sum(p.probs.iter().filter(|&&x| x > T::zero()).map(|&x| x * x.log2()));
    h.max(T::zero()).min(max)
}

/// `H(p) / log2(n)`, in `[0, 1]`.
pub fn normalized_entropy<T: Real>(p: &ProbabilityDistribution<T>) -> T {
    entropy_bits(p) / T::of_usize(p.len()).log2()
}

/// Kullback-Leibler divergence `D(p || q)` in bits.
pub fn kl_bits<T: Real>(p: &ProbabilityDistribution<T>, q: &ProbabilityDistribution<T>) -> Result<T> {
    check_same_len(p, q)?;
    if let Some(index) = p
        .probs
        .iter()
        .zip(&q.probs)
        .position(|(&a, &b)| a > T::zero() && b <= T::zero())
    {
        return Err(Error::DivergenceUndefined { index });
    }
    Ok(kl_unchecked(&p.probs, &q.probs))
}

fn kl_unchecked<T: Real>(p: &[T], q: &[T]) -> T {
    compensated_sum(
        p.iter()
            .zip(q)
            .filter(|(&a, _)| a > T::zero())
            .map(|(&a, &b)| a * (a / b).log2()),
    )
    .max(T::zero())
}

/// Jensen-Shannon divergence in bits, in `[0, 1]`, symmetric in its arguments.
pub fn js_bits<T: Real>(p: &ProbabilityDistribution<T>, q: &ProbabilityDistribution<T>) -> Result<T> {
    check_same_len(p, q)?;
    let mid: Vec<T> = p
        .probs
        .iter()
        .zip(&q.probs)
        .map(|(&a, &b)| (a + b) * T::half())
        .collect();
    let js = T::half() * (kl_unchecked(&p.probs, &mid) + kl_unchecked(&q.probs, &mid));
    Ok(js.max(T::zero()).min(T::one()))
}

fn check_same_len<T: Real>(p: &ProbabilityDistribution<T>, q: &ProbabilityDistribution<T>) -> Result<()> {
    if p.len() != q.len() {
        return Err(Error::InvalidInput(format!(
            "distribution lengths differ: {} vs {}",
            p.len(),
            q.len()
        )));
    }
    Ok(())
}
