//! The cross-validation driver.

use super::folds::{make_folds, split_validation};
use super::metrics::{compute_metrics, select_threshold, vote_metrics, Metrics};
use super::report::{aggregate, EvalReport};
use super::{EvalError, FoldPlan, Result};
use crate::data::{Dataset, Label};
use crate::model::{init_model, Variant, VtnetConfig};
use crate::preprocess::{
    build_items, compute_stats, downsample_majority, grid_size, normalize, smote, DataItem, FeatureStats,
    PreprocessConfig,
};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashSet};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvConfig {
    pub runs: usize,
    pub folds: usize,
    /// Share of training items held out (by user) for early stopping and
    /// threshold selection.
    pub val_frac: f64,
    /// Fresh validation draws tried until both classes are present.
    pub val_retries: usize,
    pub smote_percent: f64,
    pub smote_k: usize,
    pub task_votes: bool,
    pub preprocess: PreprocessConfig,
    /// Template for every fold model; variant, seed and image size are set
    /// per job.
    pub model: VtnetConfig,
    /// Worker threads. Results do not depend on it.
    #[serde(skip)]
    pub jobs: usize,
}

impl Default for CvConfig {
    fn default() -> Self {
        CvConfig {
            runs: 10,
            folds: 10,
            val_frac: 0.2,
            val_retries: 20,
            smote_percent: 200.0,
            smote_k: 5,
            task_votes: false,
            preprocess: PreprocessConfig::default(),
            model: VtnetConfig::default(),
            jobs: 1,
        }
    }
}

impl CvConfig {
    pub fn validate(&self) -> Result<()> {
        if self.runs == 0 || self.folds < 2 {
            return Err(EvalError::InvalidConfig("need at least one run and two folds".into()));
        }
        if !(self.smote_percent >= 0.0) {
            return Err(EvalError::InvalidConfig("smote_percent must be nonnegative".into()));
        }
        if self.smote_k == 0 {
            return Err(EvalError::InvalidConfig("smote_k must be at least 1".into()));
        }
        if !(self.val_frac > 0.0 && self.val_frac < 1.0) {
            return Err(EvalError::InvalidConfig(format!(
                "val_frac must lie in (0, 1), got {}",
                self.val_frac
            )));
        }
        self.preprocess.validate()?;
        Ok(())
    }
}

/// Result of one (run, fold, variant) job.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldEntry {
    pub run: usize,
    pub fold: usize,
    pub variant: Variant,
    pub metrics: Metrics,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vote_metrics: Option<Metrics>,
    pub model_seed: u64,
    pub epochs: usize,
    pub best_epoch: Option<usize>,
    pub n_fit: usize,
    pub n_train: usize,
    pub n_synthetic: usize,
    pub n_val: usize,
    pub n_test: usize,
    /// Synthetic items among the validation and test items. Always zero.
    pub scored_synthetic: usize,
    /// Normalization constants, computed from the fit users' items.
    pub stats: FeatureStats,
    pub fit_users: Vec<String>,
    pub val_users: Vec<String>,
    pub test_users: Vec<String>,
}

/// SplitMix64 over the parts, for independent per-job streams.
pub fn derive_seed(base: u64, parts: &[u64]) -> u64 {
    let mix = |mut z: u64| {
        z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    };
    parts.iter().fold(mix(base), |acc, &p| mix(acc ^ mix(p)))
}

const SEED_VAL: u64 = 1;
const SEED_BALANCE: u64 = 2;
const SEED_MODEL: u64 = 3;

fn variant_tag(v: Variant) -> u64 {
    match v {
        Variant::GruOnly => 0,
        Variant::CnnOnly => 1,
        Variant::Vtnet => 2,
    }
}

/// Balances a training set for `variant`.
///
/// The GRU-only model gets SMOTE on the confused class first. Every variant
/// then has its majority class downsampled to the size of the (possibly
/// oversampled) confused class. Synthetic items copy their parent's image and
/// ids and are flagged `synthetic`.
pub fn balance_training_set(
    items: Vec<DataItem>,
    variant: Variant,
    smote_percent: f64,
    smote_k: usize,
    seed: u64,
) -> Result<Vec<DataItem>> {
    let mut items = items;
    let minority: Vec<&DataItem> = items.iter().filter(|it| it.label.is_confused()).collect();
    if minority.is_empty() {
        log::warn!("training set has no confused items; leaving it unbalanced");
        return Ok(items);
    }
    if variant == Variant::GruOnly && smote_percent > 0.0 {
        let n = minority.len();
        if n < 2 {
            log::warn!("a single confused item cannot be oversampled; skipping SMOTE");
        } else {
            let k = smote_k.min(n - 1);
            if k < smote_k {
                log::warn!("only {n} confused items; SMOTE uses k={k}");
            }
            let seqs: Vec<_> = minority.iter().map(|it| &it.sequence).collect();
            let synthetic: Vec<DataItem> = smote(&seqs, smote_percent, k, seed)?
                .into_iter()
                .map(|s| DataItem {
                    sequence: s.sequence,
                    synthetic: true,
                    ..minority[s.parent].clone()
                })
                .collect();
            items.extend(synthetic);
        }
    }
    let target = items.iter().filter(|it| it.label.is_confused()).count();
    Ok(downsample_majority(
        items,
        |it| it.label == Label::NotConfused,
        target,
        derive_seed(seed, &[SEED_BALANCE]),
    ))
}

fn normalized(items: &[&DataItem], stats: &FeatureStats) -> Vec<DataItem> {
    items
        .iter()
        .map(|it| DataItem {
            sequence: normalize(&it.sequence, stats),
            ..(*it).clone()
        })
        .collect()
}

struct Job {
    plan: FoldPlan,
    variant: Variant,
}

fn run_job(job: &Job, dataset: &Dataset, items: &[DataItem], cfg: &CvConfig, base_seed: u64) -> Result<FoldEntry> {
    let Job { plan, variant } = job;
    let members = |users: &[String]| -> Vec<&DataItem> {
        let set: HashSet<&str> = users.iter().map(String::as_str).collect();
        items.iter().filter(|it| set.contains(&*it.user_id)).collect()
    };
    let fit_raw = members(&plan.train_users);
    let val_raw = members(&plan.val_users);
    let test_raw = members(&plan.test_users);
    if fit_raw.is_empty() || test_raw.is_empty() {
        return Err(EvalError::EmptyInput("fold has no fit or no test items".into()));
    }
    let stats = compute_stats(fit_raw.iter().map(|it| &it.sequence), &dataset.meta)?;
    let fit = normalized(&fit_raw, &stats);
    let val = normalized(&val_raw, &stats);
    let test = normalized(&test_raw, &stats);
    let parts = [plan.run as u64, plan.fold as u64, variant_tag(*variant)];

    let n_fit = fit.len();
    let train = balance_training_set(
        fit,
        *variant,
        cfg.smote_percent,
        cfg.smote_k,
        derive_seed(base_seed, &[&parts[..], &[SEED_BALANCE]].concat()),
    )?;
    let n_synthetic = train.iter().filter(|it| it.synthetic).count();

    let (w, h) = grid_size(&dataset.meta, cfg.preprocess.raster.downsize);
    let model_seed = derive_seed(base_seed, &[&parts[..], &[SEED_MODEL]].concat());
    let mcfg = VtnetConfig {
        variant: *variant,
        seed: model_seed,
        image_width: w,
        image_height: h,
        ..cfg.model.clone()
    };
    let mut model = init_model(&mcfg)?;
    let epochs = model.fit(&train, &val)?;

    let threshold = if val.is_empty() {
        0.5
    } else {
        match select_threshold(&model.predict(&val)?) {
            Ok(t) => t,
            Err(EvalError::OneClassOnly) => {
                log::warn!("run {} fold {}: one-class validation set, using 0.5", plan.run, plan.fold);
                0.5
            }
            Err(e) => return Err(e),
        }
    };
    let preds = model.predict(&test)?;
    let metrics = compute_metrics(&preds, threshold)?;
    let vote = if cfg.task_votes {
        Some(vote_metrics(&preds, threshold)?)
    } else {
        None
    };
    log::info!(
        "run {} fold {} {}: sens {:.3} spec {:.3} combined {:.3} ({} epochs)",
        plan.run,
        plan.fold,
        variant,
        metrics.sensitivity,
        metrics.specificity,
        metrics.combined,
        epochs
    );
    Ok(FoldEntry {
        run: plan.run,
        fold: plan.fold,
        variant: *variant,
        metrics,
        vote_metrics: vote,
        model_seed,
        epochs,
        best_epoch: model.best_epoch(),
        n_fit,
        n_train: train.len(),
        n_synthetic,
        n_val: val.len(),
        n_test: test.len(),
        scored_synthetic: val.iter().chain(&test).filter(|it| it.synthetic).count(),
        stats,
        fit_users: plan.train_users.clone(),
        val_users: plan.val_users.clone(),
        test_users: plan.test_users.clone(),
    })
}

/// Fold plans of one run. The validation draw is repeated with fresh seeds
/// until it holds both classes, when possible.
fn plan_run(
    dataset: &Dataset,
    by_user: &BTreeMap<&str, (usize, usize)>,
    run: usize,
    cfg: &CvConfig,
    base_seed: u64,
) -> Result<Vec<FoldPlan>> {
    let groups = make_folds(dataset, cfg.folds, base_seed.wrapping_add(run as u64))?;
    let mut plans = Vec::with_capacity(groups.len());
    for (fold, test_users) in groups.iter().enumerate() {
        let rest: Vec<String> = groups
            .iter()
            .enumerate()
            .filter(|&(g, _)| g != fold)
            .flat_map(|(_, us)| us.iter().cloned())
            .collect();
        let count = |u: &str| by_user.get(u).map_or(0, |c| c.1);
        let confused = |us: &[String]| us.iter().map(|u| by_user.get(u.as_str()).map_or(0, |c| c.0)).sum::<usize>();
        let total = |us: &[String]| us.iter().map(|u| count(u)).sum::<usize>();
        let mut chosen = None;
        for attempt in 0..=cfg.val_retries {
            let seed = derive_seed(base_seed, &[run as u64, fold as u64, SEED_VAL, attempt as u64]);
            let (fit, val) = split_validation(&rest, count, cfg.val_frac, seed)?;
            let both = |us: &[String]| {
                let c = confused(us);
                c > 0 && c < total(us)
            };
            let good = both(&val) && confused(&fit) > 0;
            chosen = Some((fit, val));
            if good {
                break;
            }
            if attempt == cfg.val_retries {
                log::warn!("run {run} fold {fold}: no validation draw holds both classes");
            }
        }
        let (fit, val) = chosen.expect("at least one attempt");
        plans.push(FoldPlan {
            run,
            fold,
            train_users: fit,
            val_users: val,
            test_users: test_users.clone(),
        });
    }
    Ok(plans)
}

/// Repeated user-grouped cross-validation of every requested variant.
///
/// Run `r` assigns folds with seed `base_seed + r`. Each job builds its
/// normalization from its fit users only, balances the training items,
/// trains with early stopping on the validation users, picks the ROC
/// threshold on them and scores the untouched test fold.
pub fn run_cv(dataset: &Dataset, variants: &[Variant], cfg: &CvConfig, base_seed: u64) -> Result<EvalReport> {
    cfg.validate()?;
    dataset
        .validate()
        .map_err(|e| EvalError::Preprocess(e.into()))?;
    let built = build_items(dataset, &cfg.preprocess)?;
    let mut by_user: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
    for it in &built.items {
        let e = by_user.entry(&it.user_id).or_insert((0, 0));
        e.0 += usize::from(it.label.is_confused());
        e.1 += 1;
    }
    let mut jobs = Vec::new();
    for run in 0..cfg.runs {
        for plan in plan_run(dataset, &by_user, run, cfg, base_seed)? {
            for &variant in variants {
                jobs.push(Job {
                    plan: plan.clone(),
                    variant,
                });
            }
        }
    }
    let exec = |job: &Job| {
        run_job(job, dataset, &built.items, cfg, base_seed).map_err(|e| EvalError::Fold {
            run: job.plan.run,
            fold: job.plan.fold,
            variant: job.variant,
            source: Box::new(e),
        })
    };
    let results: Vec<Result<FoldEntry>> = if cfg.jobs > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.jobs)
            .build()
            .map_err(|e| EvalError::InvalidConfig(format!("thread pool: {e}")))?;
        pool.install(|| jobs.par_iter().map(exec).collect())
    } else {
        jobs.iter().map(exec).collect()
    };
    let entries = results.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(EvalReport {
        config: cfg.clone(),
        base_seed,
        variants: variants.to_vec(),
        n_items: built.items.len(),
        dropped_tasks: built.dropped.iter().map(|d| d.task_id.clone()).collect(),
        aggregates: aggregate(&entries, variants),
        entries,
    })
}
