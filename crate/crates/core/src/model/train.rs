//! Mini-batch training with linear learning-rate decay and early stopping.

use super::{ModelError, Result, VtnetModel};
use crate::eval::{nan_as_null, Metrics};
use crate::nn::{Adam, NnError, Tensor};
use crate::preprocess::DataItem;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;

/// Keeps the shuffling stream apart from the initialization stream.
const SHUFFLE_STREAM: u64 = 0x05ee_d0fb_a7c4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    #[serde(with = "nan_as_null")]
    pub val_sensitivity: f64,
    #[serde(with = "nan_as_null")]
    pub val_specificity: f64,
    #[serde(with = "nan_as_null")]
    pub val_combined: f64,
}

/// Tab-separated training log, one line per epoch.
pub fn format_history(history: &[EpochRecord]) -> String {
    let mut out = String::new();
    for r in history {
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}",
            r.epoch, r.lr, r.train_loss, r.val_sensitivity, r.val_specificity, r.val_combined
        );
    }
    out
}

/// Combined accuracy used for model selection. With one class missing from
/// the validation set the rate of the present class stands in.
fn monitor(m: &Metrics) -> f64 {
    match (m.sensitivity.is_nan(), m.specificity.is_nan()) {
        (false, false) => m.combined,
        (true, false) => m.specificity,
        (false, true) => m.sensitivity,
        (true, true) => f64::NAN,
    }
}

impl VtnetModel {
    /// Validation metrics at the 0.5 threshold.
    pub fn validation_metrics(&self, val: &[DataItem]) -> Result<Option<Metrics>> {
        if val.is_empty() {
            return Ok(None);
        }
        let preds = self.predict(val)?;
        let m = crate::eval::compute_metrics(&preds, 0.5).map_err(|e| ModelError::InvalidConfig(e.to_string()))?;
        Ok(Some(m))
    }

    /// Trains in place and restores the parameters of the best validation
    /// epoch. Without validation items every epoch counts as an improvement.
    /// Returns the number of epochs run.
    pub fn fit(&mut self, train: &[DataItem], val: &[DataItem]) -> Result<usize> {
        if train.is_empty() {
            return Err(ModelError::EmptyTrainingSet);
        }
        let cfg = self.config.clone();
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ SHUFFLE_STREAM);
        let mut adam = Adam::new(self.named_params().iter().map(|(_, t)| t.len()));
        let mut order: Vec<usize> = (0..train.len()).collect();
        let mut best: Option<(f64, Vec<Tensor>)> = None;
        let mut since_best = 0;
        let mut epochs = 0;

        for e in 0..cfg.max_epochs {
            let lr = cfg.lr_at(e);
            order.shuffle(&mut rng);
            let mut loss_sum = 0.0;
            for chunk in order.chunks(cfg.batch_size) {
                let batch: Vec<&DataItem> = chunk.iter().map(|&i| &train[i]).collect();
                let (loss, grad) = self.loss_and_grad(&batch)?;
                if !loss.is_finite() {
                    return Err(NnError::NonFinite(format!("training loss in epoch {e}")).into());
                }
                loss_sum += loss * batch.len() as f64;
                let grads: Vec<&Tensor> = grad.named_params().into_iter().map(|(_, t)| t).collect();
                adam.step(&mut self.params_mut(), &grads, lr)?;
            }
            epochs += 1;

            let vm = self.validation_metrics(val)?;
            let score = vm.as_ref().map_or(f64::NAN, monitor);
            let (sens, spec, comb) = vm.map_or((f64::NAN, f64::NAN, f64::NAN), |m| {
                (m.sensitivity, m.specificity, m.combined)
            });
            self.history.push(EpochRecord {
                epoch: e,
                lr,
                train_loss: loss_sum / train.len() as f64,
                val_sensitivity: sens,
                val_specificity: spec,
                val_combined: comb,
            });
            log::debug!("epoch {e} lr {lr:.6} loss {:.5} val {score:.4}", loss_sum / train.len() as f64);

            let improved = match &best {
                None => true,
                Some((b, _)) => score.is_nan() || score > *b,
            };
            if improved {
                let snapshot = self.named_params().into_iter().map(|(_, t)| t.clone()).collect();
                best = Some((score, snapshot));
                since_best = 0;
            } else {
                since_best += 1;
                if since_best >= cfg.patience {
                    break;
                }
            }
        }
        if let Some((_, snapshot)) = best {
            for (p, s) in self.params_mut().into_iter().zip(snapshot) {
                *p = s;
            }
        }
        Ok(epochs)
    }

    /// Index of the epoch whose parameters `fit` kept.
    pub fn best_epoch(&self) -> Option<usize> {
        let mut best: Option<(f64, usize)> = None;
        for r in &self.history {
            let s = r.val_combined_for_selection();
            if best.is_none_or(|(b, _)| s.is_nan() || s > b) {
                best = Some((s, r.epoch));
            }
        }
        best.map(|b| b.1)
    }
}

impl EpochRecord {
    fn val_combined_for_selection(&self) -> f64 {
        monitor(&Metrics {
            sensitivity: self.val_sensitivity,
            specificity: self.val_specificity,
            combined: self.val_combined,
            auc: None,
            threshold: 0.5,
            tp: 0,
            fp: 0,
            tn: 0,
            fn_: 0,
        })
    }
}
