//! Forward and backward passes of the full network.

use super::{ModelError, Prediction, Result, VtnetConfig, VtnetModel};
use crate::nn::{
    log_softmax, log_softmax_nll, maxpool2d, maxpool2d_backward, relu_backward_inplace, relu_inplace, Conv2d,
    GruTrace, NnError, Tensor,
};
use crate::preprocess::{DataItem, ScanPathImage};
use rand::Rng;
use std::collections::HashMap;

/// Gradients share the layout of the model they belong to.
pub type Gradients = VtnetModel;

/// conv -> ReLU -> 2x2 max-pool, twice.
#[derive(Debug, Clone, PartialEq)]
pub struct Cnn {
    pub conv1: Conv2d,
    pub conv2: Conv2d,
}

struct CnnCache {
    input: Tensor,
    a1: Tensor,
    arg1: Vec<usize>,
    p1: Tensor,
    a2: Tensor,
    arg2: Vec<usize>,
    out_shape: Vec<usize>,
}

impl Cnn {
    pub fn new(cfg: &VtnetConfig, rng: &mut impl Rng) -> Self {
        Cnn {
            conv1: Conv2d::new(1, cfg.conv_filters.0, cfg.kernel_size, rng),
            conv2: Conv2d::new(cfg.conv_filters.0, cfg.conv_filters.1, cfg.kernel_size, rng),
        }
    }

    fn forward(&self, image: &ScanPathImage) -> Result<(Vec<f64>, CnnCache)> {
        let input = Tensor::from_vec(&[1, image.height, image.width], image.pixels.clone())?;
        let mut a1 = self.conv1.forward(&input)?;
        relu_inplace(&mut a1);
        let (p1, arg1) = maxpool2d(&a1)?;
        let mut a2 = self.conv2.forward(&p1)?;
        relu_inplace(&mut a2);
        let (p2, arg2) = maxpool2d(&a2)?;
        let out_shape = p2.shape().to_vec();
        Ok((
            p2.into_data(),
            CnnCache {
                input,
                a1,
                arg1,
                p1,
                a2,
                arg2,
                out_shape,
            },
        ))
    }

    fn backward(&self, c: &CnnCache, dflat: &[f64], grad: &mut Cnn) -> Result<()> {
        let dp2 = Tensor::from_vec(&c.out_shape, dflat.to_vec())?;
        let mut da2 = maxpool2d_backward(c.a2.shape(), &c.arg2, &dp2);
        relu_backward_inplace(&c.a2, &mut da2);
        let dp1 = self
            .conv2
            .backward(&c.p1, &da2, &mut grad.conv2, true)
            .expect("input gradient requested");
        let mut da1 = maxpool2d_backward(c.a1.shape(), &c.arg1, &dp1);
        relu_backward_inplace(&c.a1, &mut da1);
        self.conv1.backward(&c.input, &da1, &mut grad.conv1, false);
        Ok(())
    }
}

/// Everything the backward pass of one item needs.
struct ItemCache {
    trace: Option<GruTrace>,
    image_slot: Option<usize>,
    feat: Vec<f64>,
    hid: Vec<f64>,
    logits: Vec<f64>,
}

/// Distinct images of a batch, in first-use order.
fn image_slots(items: &[&DataItem]) -> (Vec<usize>, Vec<usize>) {
    let mut seen: HashMap<*const ScanPathImage, usize> = HashMap::new();
    let mut firsts = Vec::new();
    let slots = items
        .iter()
        .enumerate()
        .map(|(i, it)| {
            *seen.entry(std::sync::Arc::as_ptr(&it.image)).or_insert_with(|| {
                firsts.push(i);
                firsts.len() - 1
            })
        })
        .collect();
    (slots, firsts)
}

impl VtnetModel {
    fn check_item(&self, item: &DataItem) -> Result<()> {
        let cfg = &self.config;
        if cfg.variant.has_cnn() && (item.image.width != cfg.image_width || item.image.height != cfg.image_height) {
            return Err(NnError::ShapeMismatch(format!(
                "model expects {}x{} images, item {} has {}x{}",
                cfg.image_width,
                cfg.image_height,
                item.id(),
                item.image.width,
                item.image.height
            ))
            .into());
        }
        Ok(())
    }

    fn item_forward(&self, item: &DataItem, cnn_feat: Option<&[f64]>) -> Result<ItemCache> {
        let mut feat = Vec::with_capacity(self.fc1.in_dim());
        let trace = match &self.gru {
            Some(g) => {
                let (h, trace) = g.forward(&item.sequence.values, &item.sequence.mask)?;
                feat.extend_from_slice(&h);
                Some(trace)
            }
            None => None,
        };
        if let Some(f) = cnn_feat {
            feat.extend_from_slice(f);
        }
        let mut hid = self.fc1.forward(&feat)?;
        hid.iter_mut().for_each(|v| *v = v.max(0.0));
        let logits = self.fc2.forward(&hid)?;
        Ok(ItemCache {
            trace,
            image_slot: None,
            feat,
            hid,
            logits,
        })
    }

    /// Per-item log-probabilities `[not confused, confused]`.
    ///
    /// CNN features are computed once per distinct image.
    pub fn log_probs(&self, items: &[DataItem]) -> Result<Vec<[f64; 2]>> {
        let mut features: HashMap<*const ScanPathImage, Vec<f64>> = HashMap::new();
        let mut out = Vec::with_capacity(items.len());
        for item in items {
            self.check_item(item)?;
            let cnn_feat = match &self.cnn {
                Some(cnn) => {
                    let key = std::sync::Arc::as_ptr(&item.image);
                    if !features.contains_key(&key) {
                        features.insert(key, cnn.forward(&item.image)?.0);
                    }
                    Some(features[&key].as_slice())
                }
                None => None,
            };
            let c = self.item_forward(item, cnn_feat)?;
            let lp = log_softmax(&c.logits);
            out.push([lp[0], lp[1]]);
        }
        Ok(out)
    }

    /// Probability of the confused class for every item.
    pub fn predict(&self, items: &[DataItem]) -> Result<Vec<Prediction>> {
        Ok(self
            .log_probs(items)?
            .into_iter()
            .zip(items)
            .map(|(lp, item)| Prediction {
                item_id: item.id(),
                task_id: item.parent_task_id.to_string(),
                score: lp[1].exp().clamp(0.0, 1.0),
                label: item.label,
            })
            .collect())
    }

    /// Mean negative log-likelihood of a batch.
    pub fn loss(&self, items: &[&DataItem]) -> Result<f64> {
        let owned: Vec<DataItem> = items.iter().map(|&i| i.clone()).collect();
        let lps = self.log_probs(&owned)?;
        let total: f64 = lps.iter().zip(items).map(|(lp, it)| -lp[it.label.class_index()]).sum();
        Ok(total / items.len().max(1) as f64)
    }

    /// Mean batch loss and its gradient with respect to every parameter.
    pub fn loss_and_grad(&self, items: &[&DataItem]) -> Result<(f64, Gradients)> {
        if items.is_empty() {
            return Err(ModelError::EmptyTrainingSet);
        }
        let scale = 1.0 / items.len() as f64;
        let mut grad = self.zeroed();
        let (slots, firsts) = image_slots(items);
        let mut cnn_caches = Vec::new();
        if let Some(cnn) = &self.cnn {
            for &i in &firsts {
                self.check_item(items[i])?;
                cnn_caches.push(cnn.forward(&items[i].image)?);
            }
        }
        let mut dflat: Vec<Vec<f64>> = cnn_caches.iter().map(|(f, _)| vec![0.0; f.len()]).collect();

        let hidden = self.gru.as_ref().map_or(0, |g| g.hidden_size());
        let mut total = 0.0;
        let mut dhid = vec![0.0; self.fc1.out_dim()];
        let mut dfeat = vec![0.0; self.fc1.in_dim()];
        for (item, &slot) in items.iter().zip(&slots) {
            let cnn_feat = cnn_caches.get(slot).map(|(f, _)| f.as_slice());
            let mut c = self.item_forward(item, cnn_feat)?;
            c.image_slot = self.cnn.as_ref().map(|_| slot);
            let (loss, mut dlogits) = log_softmax_nll(&c.logits, item.label.class_index())?;
            total += loss;
            dlogits.iter_mut().for_each(|v| *v *= scale);

            self.fc2.backward(&c.hid, &dlogits, &mut grad.fc2, Some(&mut dhid));
            for (d, &h) in dhid.iter_mut().zip(&c.hid) {
                if h <= 0.0 {
                    *d = 0.0;
                }
            }
            self.fc1.backward(&c.feat, &dhid, &mut grad.fc1, Some(&mut dfeat));
            if let (Some(g), Some(trace)) = (&self.gru, &c.trace) {
                g.backward(
                    &item.sequence.values,
                    trace,
                    &dfeat[..hidden],
                    grad.gru.as_mut().expect("gradient mirrors model"),
                );
            }
            if let Some(s) = c.image_slot {
                crate::nn::axpy(1.0, &dfeat[hidden..], &mut dflat[s]);
            }
        }
        if let (Some(cnn), Some(gcnn)) = (&self.cnn, grad.cnn.as_mut()) {
            for ((_, cache), d) in cnn_caches.iter().zip(&dflat) {
                cnn.backward(cache, d, gcnn)?;
            }
        }
        Ok((total * scale, grad))
    }
}
