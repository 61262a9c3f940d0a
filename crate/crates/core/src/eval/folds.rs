//! User-level fold assignment and validation holdouts.

use super::{EvalError, Result};
use crate::data::Dataset;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// User sets of one cross-validation iteration.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub run: usize,
    pub fold: usize,
    /// Users whose items are fitted on.
    pub train_users: Vec<String>,
    pub val_users: Vec<String>,
    pub test_users: Vec<String>,
}

/// `(confused, total)` task counts per user.
pub fn user_item_counts(dataset: &Dataset) -> BTreeMap<String, (usize, usize)> {
    let mut counts = BTreeMap::new();
    for t in &dataset.tasks {
        let e = counts.entry(t.user_id.clone()).or_insert((0, 0));
        e.0 += usize::from(t.label.is_confused());
        e.1 += 1;
    }
    counts
}

/// Partitions users into `n_folds` groups.
///
/// Users are shuffled with `seed`, stably sorted by confused count
/// (descending), then each goes to the lightest fold. Users with confused
/// tasks compare folds by `(confused, total, index)`, the rest by
/// `(total, confused, index)` so they fill up the smaller folds.
pub fn make_folds(dataset: &Dataset, n_folds: usize, seed: u64) -> Result<Vec<Vec<String>>> {
    let counts = user_item_counts(dataset);
    if n_folds == 0 || counts.len() < n_folds {
        return Err(EvalError::TooFewUsers {
            have: counts.len(),
            need: n_folds.max(1),
        });
    }
    let mut users: Vec<(&String, (usize, usize))> = counts.iter().map(|(u, &c)| (u, c)).collect();
    users.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    users.sort_by(|a, b| b.1 .0.cmp(&a.1 .0));
    let mut load = vec![(0usize, 0usize); n_folds];
    let mut folds = vec![Vec::new(); n_folds];
    for (user, (c, n)) in users {
        let f = (0..n_folds)
            .min_by_key(|&f| {
                let (fc, fnn) = load[f];
                if c > 0 {
                    (fc, fnn, f)
                } else {
                    (fnn, fc, f)
                }
            })
            .expect("at least one fold");
        load[f].0 += c;
        load[f].1 += n;
        folds[f].push(user.clone());
    }
    Ok(folds)
}

/// Splits users into fit and validation sets.
///
/// Users are shuffled with `seed`; the validation set is the shortest prefix
/// whose item count reaches `frac` of the total, always leaving at least one
/// user to fit on.
pub fn split_validation(
    users: &[String],
    item_count: impl Fn(&str) -> usize,
    frac: f64,
    seed: u64,
) -> Result<(Vec<String>, Vec<String>)> {
    if !(frac > 0.0 && frac < 1.0) {
        return Err(EvalError::InvalidConfig(format!(
            "validation fraction must lie in (0, 1), got {frac}"
        )));
    }
    if users.len() < 2 {
        return Err(EvalError::TooFewUsers {
            have: users.len(),
            need: 2,
        });
    }
    let mut order = users.to_vec();
    order.sort();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let total: usize = order.iter().map(|u| item_count(u)).sum();
    let goal = frac * total as f64;
    let mut taken = 0usize;
    let mut cut = 0;
    while cut < order.len() - 1 && (taken as f64) < goal {
        taken += item_count(&order[cut]);
        cut += 1;
    }
    let cut = cut.max(1);
    let fit = order.split_off(cut);
    Ok((fit, order))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_generate, Meta, SignalMode, SynthConfig};
    use crate::data::test_util::task;
    use std::collections::HashSet;

    fn equal_users(n: usize, tasks: usize) -> Dataset {
        let mut all = Vec::new();
        for u in 0..n {
            for t in 0..tasks {
                let report = (t == 0).then_some(5000.0);
                all.push(task(&format!("u{u}_t{t}"), &format!("u{u:02}"), &[0.0, 10.0], report));
            }
        }
        Dataset {
            meta: Meta::default(),
            tasks: all,
        }
    }

    #[test]
    fn ten_users_ten_folds() {
        let folds = make_folds(&equal_users(10, 3), 10, 4).unwrap();
        assert!(folds.iter().all(|f| f.len() == 1));
        let all: HashSet<_> = folds.iter().flatten().collect();
        assert_eq!(all.len(), 10);
        assert!(matches!(
            make_folds(&equal_users(9, 3), 10, 4),
            Err(EvalError::TooFewUsers { have: 9, need: 10 })
        ));
    }

    #[test]
    fn identical_users_spread_evenly() {
        for seed in 0..5 {
            let folds = make_folds(&equal_users(47, 2), 10, seed).unwrap();
            let sizes: Vec<usize> = folds.iter().map(Vec::len).collect();
            assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        }
    }

    #[test]
    fn confused_fraction_is_balanced() {
        for seed in 0..20 {
            let ds = synth_generate(&SynthConfig {
                n_users: 40,
                tasks_per_user: 10,
                confused_fraction: 0.1,
                signal_mode: SignalMode::None,
                mean_duration_s: 1.0,
                sd_duration_s: 0.2,
                min_duration_s: 0.5,
                meta: Meta {
                    screen_width: 320,
                    screen_height: 240,
                    sampling_rate_hz: 20.0,
                },
                seed,
                ..SynthConfig::default()
            })
            .unwrap();
            let counts = user_item_counts(&ds);
            let global = ds.confused_count() as f64 / ds.tasks.len() as f64;
            for fold in make_folds(&ds, 10, seed).unwrap() {
                let (c, n) = fold.iter().fold((0, 0), |a, u| (a.0 + counts[u].0, a.1 + counts[u].1));
                let frac = c as f64 / n as f64;
                assert!((frac - global).abs() <= 0.5 * global, "seed {seed}: {frac} vs {global}");
            }
        }
    }

    #[test]
    fn validation_takes_a_fifth() {
        let users: Vec<String> = (0..10).map(|i| format!("u{i}")).collect();
        let (fit, val) = split_validation(&users, |_| 7, 0.2, 3).unwrap();
        assert_eq!(val.len(), 2);
        assert_eq!(fit.len(), 8);
        assert_eq!(split_validation(&users, |_| 7, 0.2, 3).unwrap(), (fit, val));
        assert!(matches!(
            split_validation(&users, |_| 7, 0.0, 3),
            Err(EvalError::InvalidConfig(_))
        ));
        assert!(split_validation(&users[..1], |_| 7, 0.2, 3).is_err());
        let (fit, val) = split_validation(&users[..2], |_| 7, 0.9, 3).unwrap();
        assert_eq!((fit.len(), val.len()), (1, 1));
    }
}
