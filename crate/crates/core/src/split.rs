//! Stratified train/validation/test splitting.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::real::Real;
use crate::table::{FeatureTable, Label, UNKNOWN_LABEL};

/// Splits `table` into `(train, validation, test)` preserving per-class ratios.
///
/// Each class (and the UNKNOWN rows, if any) is shuffled independently and
/// cut with largest-remainder rounding, so every split is within one sample
/// of exact proportion per class. Rows keep their original relative order.
pub fn stratified_split<T: Real>(
    table: &FeatureTable<T>,
    fractions: [f64; 3],
    seed: u64,
) -> Result<[FeatureTable<T>; 3]> {
    if fractions.iter().any(|f| !(*f > 0.0) || !f.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "split fractions must be positive, got {fractions:?}"
        )));
    }
    if (fractions.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidParameter(format!(
            "split fractions must sum to 1, got {fractions:?}"
        )));
    }
    let n = table.n_classes();
    let mut strata: Vec<Vec<usize>> = vec![Vec::new(); n + 1];
    for (i, l) in table.labels().iter().enumerate() {
        strata[match l {
            Label::Class(c) => *c,
            Label::Unknown => n,
        }]
        .push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut parts: [Vec<usize>; 3] = Default::default();
    for (k, mut members) in strata.into_iter().enumerate() {
        if members.is_empty() {
            continue;
        }
        if members.len() < 3 {
            let class = if k == n {
                UNKNOWN_LABEL.to_string()
            } else {
                table.class_names()[k].clone()
            };
            return Err(Error::StratificationInfeasible {
                class,
                count: members.len(),
            });
        }
        members.shuffle(&mut rng);
        let sizes = allocate(members.len(), &fractions);
        let mut start = 0;
        for (part, size) in parts.iter_mut().zip(sizes) {
            part.extend_from_slice(&members[start..start + size]);
            start += size;
        }
    }
    Ok(parts.map(|mut idx| {
        idx.sort_unstable();
        table.subset(&idx)
    }))
}

/// Largest-remainder apportionment of `total` items, at least one per part.
fn allocate(total: usize, fractions: &[f64; 3]) -> [usize; 3] {
    let exact: Vec<f64> = fractions.iter().map(|f| f * total as f64).collect();
    let mut sizes = [0usize; 3];
    for (s, e) in sizes.iter_mut().zip(&exact) {
        *s = e.floor() as usize;
    }
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.partial_cmp(&ra).unwrap().then(a.cmp(&b))
    });
    let mut remaining = total - sizes.iter().sum::<usize>();
    for &k in order.iter().cycle() {
        if remaining == 0 {
            break;
        }
        sizes[k] += 1;
        remaining -= 1;
    }
    for k in 0..3 {
        if sizes[k] == 0 {
            let donor = (0..3).max_by_key(|&j| (sizes[j], usize::MAX - j)).unwrap();
            sizes[donor] -= 1;
            sizes[k] += 1;
        }
    }
    sizes
}
