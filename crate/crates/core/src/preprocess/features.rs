//! Fixed-length per-step feature arrays for the recurrent branch.

use super::{PreprocessError, Result};
use crate::data::{EyeSample, Meta, RawSample};
use serde::{Deserialize, Serialize};

/// Features per time step.
pub const N_FEATURES: usize = 8;

/// Column names in storage order.
pub const FEATURE_NAMES: [&str; N_FEATURES] = [
    "left_x",
    "left_y",
    "left_pupil",
    "left_dist",
    "right_x",
    "right_y",
    "right_pupil",
    "right_dist",
];

/// Columns that are z-scored (pupil and distance of both eyes).
pub const ZSCORE_COLUMNS: [usize; 4] = [2, 3, 6, 7];

const SD_FLOOR: f64 = 1e-6;

/// A `len x 8` row-major array with a validity mask. Padding occupies a
/// prefix of the rows and is all zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSequence {
    pub values: Vec<f64>,
    pub mask: Vec<bool>,
}

impl FeatureSequence {
    pub fn len(&self) -> usize {
        self.mask.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mask.is_empty()
    }

    pub fn length_valid(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    /// Index of the first real row, `len()` when everything is padding.
    pub fn first_valid(&self) -> usize {
        self.mask.iter().position(|&m| m).unwrap_or(self.len())
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.values[t * N_FEATURES..(t + 1) * N_FEATURES]
    }

    /// Left-pads `rows` with zeros up to `seq_len`, keeping the most recent
    /// `seq_len` rows when there are more.
    pub fn from_rows(rows: &[[f64; N_FEATURES]], seq_len: usize) -> Self {
        let kept = &rows[rows.len().saturating_sub(seq_len)..];
        let pad = seq_len - kept.len();
        let mut values = vec![0.0; seq_len * N_FEATURES];
        for (i, r) in kept.iter().enumerate() {
            values[(pad + i) * N_FEATURES..(pad + i + 1) * N_FEATURES].copy_from_slice(r);
        }
        let mut mask = vec![false; seq_len];
        mask[pad..].iter_mut().for_each(|m| *m = true);
        FeatureSequence { values, mask }
    }
}

/// Converts raw samples to feature rows in raw units.
///
/// An invalid eye reuses the last valid values of the same eye, falling back
/// to the other eye of the same sample, then to zeros. Only past samples are
/// consulted.
pub fn feature_rows(samples: &[RawSample]) -> Vec<[f64; N_FEATURES]> {
    let mut last: [Option<[f64; 4]>; 2] = [None, None];
    let as_arr = |e: &EyeSample| [e.x, e.y, e.pupil, e.dist];
    samples
        .iter()
        .map(|s| {
            let eyes = [&s.left, &s.right];
            let mut row = [0.0; N_FEATURES];
            for e in 0..2 {
                let vals = if eyes[e].valid {
                    let v = as_arr(eyes[e]);
                    last[e] = Some(v);
                    v
                } else if let Some(v) = last[e] {
                    v
                } else if eyes[1 - e].valid {
                    as_arr(eyes[1 - e])
                } else {
                    [0.0; 4]
                };
                row[e * 4..e * 4 + 4].copy_from_slice(&vals);
            }
            row
        })
        .collect()
}

/// Normalization constants computed from training sequences.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureStats {
    /// Means of [`ZSCORE_COLUMNS`].
    pub mean: [f64; 4],
    /// Population standard deviations of [`ZSCORE_COLUMNS`], floored.
    pub sd: [f64; 4],
    pub screen_width: f64,
    pub screen_height: f64,
}

/// Column means and population standard deviations over unmasked rows.
pub fn compute_stats<'a, I>(train: I, meta: &Meta) -> Result<FeatureStats>
where
    I: IntoIterator<Item = &'a FeatureSequence>,
{
    let mut n = 0usize;
    let mut sum = [0.0; 4];
    let mut seqs = Vec::new();
    for seq in train {
        for t in 0..seq.len() {
            if seq.mask[t] {
                let r = seq.row(t);
                for (c, &col) in ZSCORE_COLUMNS.iter().enumerate() {
                    sum[c] += r[col];
                }
                n += 1;
            }
        }
        seqs.push(seq);
    }
    if n == 0 {
        return Err(PreprocessError::EmptyInput);
    }
    let mean = sum.map(|s| s / n as f64);
    // two-pass variance
    let mut ss = [0.0; 4];
    for seq in seqs {
        for t in 0..seq.len() {
            if seq.mask[t] {
                let r = seq.row(t);
                for (c, &col) in ZSCORE_COLUMNS.iter().enumerate() {
                    let d = r[col] - mean[c];
                    ss[c] += d * d;
                }
            }
        }
    }
    let sd = ss.map(|s| (s / n as f64).sqrt().max(SD_FLOOR));
    Ok(FeatureStats {
        mean,
        sd,
        screen_width: meta.screen_width as f64,
        screen_height: meta.screen_height as f64,
    })
}

/// Scales gaze coordinates into `[0, 1]` by screen size and z-scores pupil
/// and distance columns. Padding rows stay zero.
pub fn normalize(seq: &FeatureSequence, stats: &FeatureStats) -> FeatureSequence {
    let mut out = seq.clone();
    for t in 0..seq.len() {
        if !seq.mask[t] {
            continue;
        }
        let r = &mut out.values[t * N_FEATURES..(t + 1) * N_FEATURES];
        for eye in 0..2 {
            r[eye * 4] /= stats.screen_width;
            r[eye * 4 + 1] /= stats.screen_height;
        }
        for (c, &col) in ZSCORE_COLUMNS.iter().enumerate() {
            r[col] = (r[col] - stats.mean[c]) / stats.sd[c];
        }
    }
    out
}
