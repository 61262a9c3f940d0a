//! Class balancing: SMOTE oversampling of the minority class and random
//! downsampling of the majority class.

use super::features::FeatureSequence;
use super::{PreprocessError, Result};
use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// A synthetic minority sequence with the pair it was interpolated from.
#[derive(Debug, Clone, PartialEq)]
pub struct SmoteSample {
    pub sequence: FeatureSequence,
    /// Index of the originating minority item.
    pub parent: usize,
    /// Index of the neighbour interpolated towards.
    pub neighbor: usize,
    pub lambda: f64,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Synthetic Minority Oversampling over flattened sequences.
///
/// Emits `floor(percent / 100 * n)` samples. Every minority item yields
/// `floor(percent / 100)` of them and a random subset of items one more to
/// cover the remainder. Each sample is `x + lambda * (nb - x)` with
/// `lambda ~ U[0, 1)` and `nb` drawn from the `k` nearest minority items by
/// Euclidean distance. The mask of a sample is the union of its parents'
/// masks, so rows that are padding in both stay zero.
pub fn smote(minority: &[&FeatureSequence], percent: f64, k: usize, seed: u64) -> Result<Vec<SmoteSample>> {
    let n = minority.len();
    if k == 0 || n <= k {
        return Err(PreprocessError::TooFewMinority { have: n, k });
    }
    if !(percent >= 0.0) {
        return Err(PreprocessError::InvalidConfig("SMOTE percent must be nonnegative".into()));
    }
    let len = minority[0].values.len();
    if minority.iter().any(|s| s.values.len() != len) {
        return Err(PreprocessError::InvalidConfig(
            "SMOTE needs sequences of equal length".into(),
        ));
    }
    let total = (percent / 100.0 * n as f64).floor() as usize;
    let per_item = total / n;
    let remainder = total - per_item * n;

    let mut dist = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let d = sq_dist(&minority[i].values, &minority[j].values);
            dist[i * n + j] = d;
            dist[j * n + i] = d;
        }
    }
    let neighbours: Vec<Vec<usize>> = (0..n)
        .map(|i| {
            let mut idx: Vec<usize> = (0..n).filter(|&j| j != i).collect();
            // ties broken by index for determinism
            idx.sort_by(|&a, &b| dist[i * n + a].total_cmp(&dist[i * n + b]).then(a.cmp(&b)));
            idx.truncate(k);
            idx
        })
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut extra = vec![false; n];
    for i in sample_indices(&mut rng, n, remainder) {
        extra[i] = true;
    }
    let mut out = Vec::with_capacity(total);
    for i in 0..n {
        let count = per_item + usize::from(extra[i]);
        for _ in 0..count {
            let nb = neighbours[i][rng.random_range(0..k)];
            let lambda: f64 = rng.random();
            let (a, b) = (minority[i], minority[nb]);
            let values = a
                .values
                .iter()
                .zip(&b.values)
                .map(|(x, y)| x + lambda * (y - x))
                .collect();
            let mask = a.mask.iter().zip(&b.mask).map(|(p, q)| *p || *q).collect();
            out.push(SmoteSample {
                sequence: FeatureSequence { values, mask },
                parent: i,
                neighbor: nb,
                lambda,
            });
        }
    }
    Ok(out)
}

/// Keeps a uniform random subset of `target` majority items, without
/// replacement, and every minority item. Relative order is preserved.
pub fn downsample_majority<T>(items: Vec<T>, is_majority: impl Fn(&T) -> bool, target: usize, seed: u64) -> Vec<T> {
    let majority: Vec<usize> = items
        .iter()
        .enumerate()
        .filter(|(_, it)| is_majority(it))
        .map(|(i, _)| i)
        .collect();
    if target >= majority.len() {
        return items;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut keep = vec![true; items.len()];
    for &i in &majority {
        keep[i] = false;
    }
    for j in sample_indices(&mut rng, majority.len(), target) {
        keep[majority[j]] = true;
    }
    items
        .into_iter()
        .zip(keep)
        .filter_map(|(it, k)| k.then_some(it))
        .collect()
}
