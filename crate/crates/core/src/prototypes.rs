//! Nearest-class-mean prototypes and the inverse-distance distribution.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{stable_softmax, ProbabilityDistribution};
use crate::real::{compensated_sum, Real};
use crate::table::{FeatureTable, Label, Matrix};

/// Smoothing constant added to every distance before inversion.
pub const DEFAULT_EPSILON: f64 = 1e-8;

/// One mean feature vector per known class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real + Serialize + serde::de::DeserializeOwned")]
pub struct ClassPrototypes<T: Real> {
    pub means: Matrix<T>,
    pub counts: Vec<usize>,
    pub class_names: Vec<String>,
    /// Whether the fit features were scaled to unit L2 norm. Query vectors
    /// must be normalized the same way before measuring distances.
    #[serde(default)]
    pub l2_normalized: bool,
}

impl<T: Real> ClassPrototypes<T> {
    pub fn new(
        means: Matrix<T>,
        counts: Vec<usize>,
        class_names: Vec<String>,
        l2_normalized: bool,
    ) -> Result<Self> {
        if means.rows() != class_names.len() || counts.len() != class_names.len() {
            return Err(Error::InvalidInput(format!(
                "{} prototype rows, {} counts, {} class names",
                means.rows(),
                counts.len(),
                class_names.len()
            )));
        }
        crate::table::validate_class_names(&class_names)?;
        if let Some(c) = counts.iter().position(|&k| k == 0) {
            return Err(Error::MissingClass(class_names[c].clone()));
        }
        if means.as_slice().iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("prototype entries must be finite".into()));
        }
        Ok(Self {
            means,
            counts,
            class_names,
            l2_normalized,
        })
    }

    pub fn n_classes(&self) -> usize {
        self.means.rows()
    }

    pub fn dim(&self) -> usize {
        self.means.cols()
    }

    pub fn mean(&self, class: usize) -> &[T] {
        self.means.row(class)
    }

    /// Applies the fit-time normalization to a query vector.
    pub fn prepare<'a>(&self, x: &'a [T]) -> std::borrow::Cow<'a, [T]> {
        if self.l2_normalized {
            std::borrow::Cow::Owned(l2_normalize(x))
        } else {
            std::borrow::Cow::Borrowed(x)
        }
    }
}

/// Averages the feature rows of each class.
pub fn fit_prototypes<T: Real>(fit_set: &FeatureTable<T>) -> Result<ClassPrototypes<T>> {
    fit_set.require_closed_set()?;
    let n = fit_set.n_classes();
    let d = fit_set.dim();
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (i, l) in fit_set.labels().iter().enumerate() {
        if let Label::Class(c) = l {
            members[*c].push(i);
        }
    }
    let mut means = Matrix::zeros(n, d);
    for (c, rows) in members.iter().enumerate() {
        let count = T::of_usize(rows.len());
        let out = means.row_mut(c);
        for (j, slot) in out.iter_mut().enumerate() {
            *slot = compensated_sum(rows.iter().map(|&i| fit_set.features().get(i, j))) / count;
        }
    }
    ClassPrototypes::new(
        means,
        members.iter().map(Vec::len).collect(),
        fit_set.class_names().to_vec(),
        false,
    )
}

/// Like [`fit_prototypes`] but on unit-norm copies of the features.
pub fn fit_prototypes_l2<T: Real>(fit_set: &FeatureTable<T>) -> Result<ClassPrototypes<T>> {
    let normalized = FeatureTable::new(
        fit_set.ids().to_vec(),
        {
            let mut m = fit_set.features().clone();
            for i in 0..m.rows() {
                let r = l2_normalize(m.row(i));
                m.row_mut(i).copy_from_slice(&r);
            }
            m
        },
        fit_set.labels().to_vec(),
        fit_set.class_names().to_vec(),
    )?;
    let mut p = fit_prototypes(&normalized)?;
    p.l2_normalized = true;
    Ok(p)
}

pub fn l2_normalize<T: Real>(x: &[T]) -> Vec<T> {
    let norm = compensated_sum(x.iter().map(|&v| v * v)).sqrt();
    if norm > T::zero() {
        x.iter().map(|&v| v / norm).collect()
    } else {
        x.to_vec()
    }
}

/// Euclidean distance from `x` to every prototype.
pub fn distance_vector<T: Real>(x: &[T], prototypes: &ClassPrototypes<T>) -> Result<Vec<T>> {
    if x.len() != prototypes.dim() {
        return Err(Error::InvalidInput(format!(
            "feature vector has dimension {}, prototypes have {}",
            x.len(),
            prototypes.dim()
        )));
    }
    Ok(prototypes
        .means
        .iter_rows()
        .map(|mu| {
            compensated_sum(x.iter().zip(mu).map(|(&a, &b)| {
                let diff = a - b;
                diff * diff
            }))
            .sqrt()
        })
        .collect())
}

/// `softmax([1 / (d_c + epsilon)])`: closer prototypes get more mass.
pub fn distance_distribution<T: Real>(distances: &[T], epsilon: T) -> Result<ProbabilityDistribution<T>> {
    if !(epsilon > T::zero()) || !epsilon.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "epsilon must be positive and finite, got {epsilon}"
        )));
    }
    if let Some(i) = distances
        .iter()
        .position(|d| !(*d >= T::zero()) || !d.is_finite())
    {
        return Err(Error::InvalidInput(format!(
            "distance {i} is negative or not finite ({})",
            distances[i]
        )));
    }
    let inverse: Vec<T> = distances.iter().map(|&d| T::one() / (d + epsilon)).collect();
    stable_softmax(&inverse, T::one())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn table(rows: Vec<Vec<f64>>, labels: Vec<usize>, n: usize) -> FeatureTable<f64> {
        let ids = (0..rows.len()).map(|i| format!("s{i}")).collect();
        FeatureTable::new(
            ids,
            Matrix::from_rows(&rows).unwrap(),
            labels.into_iter().map(Label::Class).collect(),
            (0..n).map(|c| format!("c{c}")).collect(),
        )
        .unwrap()
    }

    #[test]
    fn mean_of_one_and_midpoint() {
        let p = fit_prototypes(&table(vec![vec![1.0, 2.0]], vec![0], 1)).unwrap();
        assert_eq!(p.mean(0), &[1.0, 2.0]);
        let p = fit_prototypes(&table(vec![vec![0.0, 0.0], vec![2.0, 2.0]], vec![0, 0], 1)).unwrap();
        assert_eq!(p.mean(0), &[1.0, 1.0]);
        assert_eq!(p.counts, vec![2]);
    }

    #[test]
    fn matches_naive_column_means() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let (n, d, per) = (3, 16, 100);
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for c in 0..n {
            for _ in 0..per {
                rows.push(
                    (0..d)
                        .map(|_| rng.random_range(-10.0..10.0))
                        .collect::<Vec<f64>>(),
                );
                labels.push(c);
            }
        }
        let p = fit_prototypes(&table(rows.clone(), labels.clone(), n)).unwrap();
        for c in 0..n {
            for j in 0..d {
                let mut s = 0.0;
                let mut k = 0;
                for (r, &l) in rows.iter().zip(&labels) {
                    if l == c {
                        s += r[j];
                        k += 1;
                    }
                }
                assert!((p.mean(c)[j] - s / k as f64).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn fit_errors() {
        let t = table(vec![vec![1.0]], vec![0], 2);
        assert!(matches!(fit_prototypes(&t), Err(Error::MissingClass(name)) if name == "c1"));
        let t = FeatureTable::new(
            vec!["a".into(), "b".into()],
            Matrix::from_vec(2, 1, vec![0.0, 1.0]).unwrap(),
            vec![Label::Class(0), Label::Unknown],
            vec!["c0".into()],
        )
        .unwrap();
        assert!(matches!(fit_prototypes(&t), Err(Error::InvalidFitSet(_))));
    }

    #[test]
    fn distance_examples() {
        let p = fit_prototypes(&table(vec![vec![0.0, 0.0], vec![1.0, 1.0]], vec![0, 1], 2)).unwrap();
        assert_eq!(distance_vector(&[3.0, 4.0], &p).unwrap()[0], 5.0);
        assert_eq!(distance_vector(&[1.0, 1.0], &p).unwrap()[1], 0.0);
        assert!(distance_vector(&[1.0], &p).is_err());
    }

    #[test]
    fn distance_matches_direct_norm() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (n, d) = (10, 32);
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..d).map(|_| rng.random_range(-5.0..5.0)).collect())
            .collect();
        let p = fit_prototypes(&table(rows.clone(), (0..n).collect(), n)).unwrap();
        let x: Vec<f64> = (0..d).map(|_| rng.random_range(-5.0..5.0)).collect();
        let got = distance_vector(&x, &p).unwrap();
        for (c, mu) in rows.iter().enumerate() {
            let direct = x.iter().zip(mu).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            assert!((got[c] - direct).abs() < 1e-10);
        }
    }

    #[test]
    fn distribution_examples() {
        let p = distance_distribution(&[1.0, 1.0], 0.3).unwrap();
        assert_eq!(p.probs(), &[0.5, 0.5]);
        let p = distance_distribution(&[0.0, 10.0], 1e-8).unwrap();
        assert!(p.probs()[0] >= 1.0 - 1e-12);
        // e / (e + e^(1/3)) evaluated in closed form
        let p = distance_distribution(&[1.0, 3.0], 1e-300).unwrap();
        let expected = 1.0 / (1.0 + (1.0f64 / 3.0 - 1.0).exp());
        assert!((p.probs()[0] - expected).abs() < 1e-15);
        assert!((p.probs()[0] - 0.66076).abs() < 5e-6);
        assert!(distance_distribution(&[-1.0, 1.0], 1e-8).is_err());
        assert!(distance_distribution(&[1.0, 1.0], 0.0).is_err());
    }

    #[test]
    fn singleton_class_has_zero_self_distance() {
        let t = table(
            vec![vec![0.5, -2.0], vec![1.0, 1.0], vec![3.0, 3.0]],
            vec![0, 1, 1],
            2,
        );
        let p = fit_prototypes(&t).unwrap();
        assert_eq!(distance_vector(t.row(0), &p).unwrap()[0], 0.0);
    }

    #[test]
    fn l2_variant_normalizes_rows() {
        let t = table(vec![vec![3.0, 4.0], vec![0.0, 2.0]], vec![0, 1], 2);
        let p = fit_prototypes_l2(&t).unwrap();
        assert!(p.l2_normalized);
        assert_eq!(p.mean(0), &[0.6, 0.8]);
        assert_eq!(p.prepare(&[0.0, 5.0]).as_ref(), &[0.0, 1.0]);
    }

    proptest! {
        #[test]
        fn closest_prototype_gets_most_mass(d in prop::collection::vec(0.0f64..100.0, 2..20)) {
            let p = distance_distribution(&d, DEFAULT_EPSILON).unwrap();
            let closest = d.iter().cloned().fold(f64::INFINITY, f64::min);
            let top = p.argmax();
            prop_assert_eq!(d[top], closest);
        }

        #[test]
        fn permuting_classes_permutes_outputs(
            rows in prop::collection::vec(prop::collection::vec(-5.0f64..5.0, 4), 3),
            x in prop::collection::vec(-5.0f64..5.0, 4),
        ) {
            let fwd = fit_prototypes(&table(rows.clone(), vec![0, 1, 2], 3)).unwrap();
            let rev_rows: Vec<_> = rows.iter().rev().cloned().collect();
            let rev = fit_prototypes(&table(rev_rows, vec![0, 1, 2], 3)).unwrap();
            let a = distance_vector(&x, &fwd).unwrap();
            let b = distance_vector(&x, &rev).unwrap();
            prop_assert_eq!(a[0], b[2]);
            prop_assert_eq!(a[2], b[0]);
            let pa = distance_distribution(&a, 1e-8).unwrap();
            let pb = distance_distribution(&b, 1e-8).unwrap();
            prop_assert_eq!(pa.probs()[1], pb.probs()[1]);
        }

        #[test]
        fn uniform_scaling_keeps_argmax(
            rows in prop::collection::vec(prop::collection::vec(-5.0f64..5.0, 3), 4),
            x in prop::collection::vec(-5.0f64..5.0, 3),
            scale in 0.01f64..100.0,
        ) {
            let p = fit_prototypes(&table(rows.clone(), vec![0, 1, 2, 3], 4)).unwrap();
            let scaled_rows: Vec<Vec<f64>> = rows.iter().map(|r| r.iter().map(|v| v * scale).collect()).collect();
            let ps = fit_prototypes(&table(scaled_rows, vec![0, 1, 2, 3], 4)).unwrap();
            let xs: Vec<f64> = x.iter().map(|v| v * scale).collect();
            let a = distance_vector(&x, &p).unwrap();
            let b = distance_vector(&xs, &ps).unwrap();
            let amin = crate::real::argmax(&a.iter().map(|v| -v).collect::<Vec<_>>());
            let bmin = crate::real::argmax(&b.iter().map(|v| -v).collect::<Vec<_>>());
            // Near-ties can flip under rounding; only check clear winners.
            let mut sorted = a.clone();
            sorted.sort_by(|u, v| u.partial_cmp(v).unwrap());
            prop_assume!(sorted[1] - sorted[0] > 1e-9);
            prop_assert_eq!(amin, bmin);
            let da = distance_distribution(&a, 1e-8).unwrap();
            let db = distance_distribution(&b, 1e-8).unwrap();
            // Ordering survives in the inverse-distance softmax unless the
            // largest inverse saturates to equality.
            prop_assert_eq!(da.argmax(), amin);
            if db.probs().iter().filter(|&&q| q == db.max()).count() == 1 {
                prop_assert_eq!(db.argmax(), bmin);
            }
        }
    }
}
