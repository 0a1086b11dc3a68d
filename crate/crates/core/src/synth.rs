//! Synthetic open-set benchmarks: isotropic Gaussian clusters on a lattice.
//!
//! Known class `c` is centred at the binary expansion of `c` over the first
//! `ceil(log2 n)` axes, scaled by `class_separation`, so adjacent classes
//! differ along exactly one axis. Unknown clusters sit either at the midpoint
//! of two adjacent known centres (`interstitial`, hard) or three lattice
//! radii from the lattice centroid along an axis the lattice does not use
//! (`far`, easy).

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::real::Real;
use crate::table::{FeatureTable, Label, Matrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UnknownPlacement {
    Interstitial,
    Far,
}

impl std::str::FromStr for UnknownPlacement {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "interstitial" => Ok(Self::Interstitial),
            "far" => Ok(Self::Far),
            _ => Err(Error::Configuration(format!(
                "unknown placement `{s}` (interstitial | far)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n_known_classes: usize,
    pub n_unknown_clusters: usize,
    pub feature_dim: usize,
    pub samples_per_class: usize,
    pub class_separation: f64,
    pub cluster_stddev: f64,
    pub unknown_placement: UnknownPlacement,
    pub seed: u64,
}

impl SyntheticSpec {
    /// Axes used by the known-class lattice.
    pub fn lattice_bits(&self) -> usize {
        (usize::BITS - (self.n_known_classes.max(1) - 1).leading_zeros()) as usize
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if self.n_known_classes < 2 {
            return bad("at least 2 known classes are needed".into());
        }
        if self.n_unknown_clusters == 0 || self.samples_per_class == 0 {
            return bad("cluster and sample counts must be positive".into());
        }
        if self.feature_dim < self.lattice_bits() + 1 {
            return bad(format!(
                "{} classes need feature_dim >= {}",
                self.n_known_classes,
                self.lattice_bits() + 1
            ));
        }
        if !(self.class_separation > 0.0 && self.class_separation.is_finite())
            || !(self.cluster_stddev > 0.0 && self.cluster_stddev.is_finite())
        {
            return bad("class_separation and cluster_stddev must be positive".into());
        }
        Ok(())
    }

    pub fn known_centers(&self) -> Vec<Vec<f64>> {
        let bits = self.lattice_bits();
        (0..self.n_known_classes)
            .map(|c| {
                let mut v = vec![0.0; self.feature_dim];
                for (b, slot) in v.iter_mut().enumerate().take(bits) {
                    if (c >> b) & 1 == 1 {
                        *slot = self.class_separation;
                    }
                }
                v
            })
            .collect()
    }

    pub fn unknown_centers(&self) -> Vec<Vec<f64>> {
        let known = self.known_centers();
        match self.unknown_placement {
            UnknownPlacement::Interstitial => {
                let n = self.n_known_classes;
                let pairs: Vec<(usize, usize)> = (0..n)
                    .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
                    .filter(|(i, j)| (i ^ j).count_ones() == 1)
                    .collect();
                (0..self.n_unknown_clusters)
                    .map(|k| {
                        let (i, j) = pairs[k % pairs.len()];
                        known[i]
                            .iter()
                            .zip(&known[j])
                            .map(|(a, b)| (a + b) / 2.0)
                            .collect()
                    })
                    .collect()
            }
            UnknownPlacement::Far => {
                let d = self.feature_dim;
                let n = known.len() as f64;
                let centroid: Vec<f64> = (0..d)
                    .map(|j| known.iter().map(|c| c[j]).sum::<f64>() / n)
                    .collect();
                let radius = known
                    .iter()
                    .map(|c| {
                        c.iter()
                            .zip(&centroid)
                            .map(|(a, b)| (a - b).powi(2))
                            .sum::<f64>()
                            .sqrt()
                    })
                    .fold(0.0, f64::max);
                let first_free = self.lattice_bits();
                let free = d - first_free;
                (0..self.n_unknown_clusters)
                    .map(|k| {
                        let mut v = centroid.clone();
                        let axis = first_free + (k / 2) % free;
                        let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
                        v[axis] += sign * 3.0 * radius;
                        v
                    })
                    .collect()
            }
        }
    }
}

/// Draws the known and unknown tables. Both share the known class names;
/// every unknown row is labelled UNKNOWN.
pub fn generate_synthetic<T: Real>(spec: &SyntheticSpec) -> Result<(FeatureTable<T>, FeatureTable<T>)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let noise = Normal::new(0.0, spec.cluster_stddev).map_err(|e| Error::InvalidParameter(e.to_string()))?;
    let class_names: Vec<String> = (0..spec.n_known_classes)
        .map(|c| format!("class_{c:02}"))
        .collect();
    let mut draw = |centers: &[Vec<f64>], prefix: &str, label: &dyn Fn(usize) -> Label| {
        let per = spec.samples_per_class;
        let mut ids = Vec::with_capacity(centers.len() * per);
        let mut labels = Vec::with_capacity(centers.len() * per);
        let mut values = Vec::with_capacity(centers.len() * per * spec.feature_dim);
        for (c, center) in centers.iter().enumerate() {
            for i in 0..per {
                ids.push(format!("{prefix}{c:02}_{i:05}"));
                labels.push(label(c));
                values.extend(center.iter().map(|&m| T::of(m + noise.sample(&mut rng))));
            }
        }
        let rows = ids.len();
        FeatureTable::new(
            ids,
            Matrix::from_vec(rows, spec.feature_dim, values)?,
            labels,
            class_names.clone(),
        )
    };
    let known = draw(&spec.known_centers(), "known_", &Label::Class)?;
    let unknown = draw(&spec.unknown_centers(), "unknown_", &|_| Label::Unknown)?;
    Ok((known, unknown))
}
