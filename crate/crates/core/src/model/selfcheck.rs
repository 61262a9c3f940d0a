//! Finite-difference checks of every layer and of the full loss, used by the
//! `gradcheck` command and the acceptance suite.

use super::{init_model, Variant, VtnetConfig};
use crate::data::Label;
use crate::nn::{
    dot, grad_check, log_softmax_nll, maxpool2d, maxpool2d_backward, Conv2d, Gru, Linear, Result, Tensor,
};
use crate::preprocess::{DataItem, FeatureSequence, ScanPathImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::sync::Arc;

/// Largest relative error seen for one component.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: String,
    pub max_error: f64,
}

fn uniform(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn check_linear(rng: &mut ChaCha8Rng) -> Result<f64> {
    let l = Linear::new(5, 3, rng);
    let l = Linear::from_parts(l.weight, Tensor::uniform(&[3], 0.5, rng))?;
    let x = uniform(5, rng);
    let proj = uniform(3, rng);
    let mut g = Linear::zeros(5, 3);
    let mut dx = vec![0.0; 5];
    l.backward(&x, &proj, &mut g, Some(&mut dx));
    let f = |m: &Linear, x: &[f64]| dot(&m.forward(x).expect("shapes fixed"), &proj);
    let mut worst = grad_check(|p| f(&l, p), &x, &dx)?;
    let mut probe = l.clone();
    worst = worst.max(grad_check(
        |p| {
            probe.weight.data_mut().copy_from_slice(p);
            f(&probe, &x)
        },
        l.weight.data(),
        g.weight.data(),
    )?);
    Ok(worst)
}

fn check_conv(rng: &mut ChaCha8Rng) -> Result<f64> {
    let conv = Conv2d::new(1, 2, 5, rng);
    let conv = Conv2d::from_parts(conv.kernel, Tensor::uniform(&[2], 0.5, rng))?;
    let x = Tensor::uniform(&[1, 8, 8], 1.0, rng);
    let proj = Tensor::uniform(&[2, 4, 4], 1.0, rng);
    let mut g = Conv2d::zeros(1, 2, 5);
    let dx = conv.backward(&x, &proj, &mut g, true).expect("requested");
    let f = |c: &Conv2d, x: &Tensor| dot(c.forward(x).expect("shapes fixed").data(), proj.data());
    let mut worst = grad_check(
        |p| f(&conv, &Tensor::from_vec(&[1, 8, 8], p.to_vec()).expect("shape")),
        x.data(),
        dx.data(),
    )?;
    let mut probe = conv.clone();
    worst = worst.max(grad_check(
        |p| {
            probe.kernel.data_mut().copy_from_slice(p);
            f(&probe, &x)
        },
        conv.kernel.data(),
        g.kernel.data(),
    )?);
    let mut probe = conv.clone();
    worst = worst.max(grad_check(
        |p| {
            probe.bias.data_mut().copy_from_slice(p);
            f(&probe, &x)
        },
        conv.bias.data(),
        g.bias.data(),
    )?);
    Ok(worst)
}

fn check_pool(rng: &mut ChaCha8Rng) -> Result<f64> {
    let x = Tensor::uniform(&[2, 6, 7], 1.0, rng);
    let (y, arg) = maxpool2d(&x)?;
    let proj = Tensor::uniform(y.shape(), 1.0, rng);
    let dx = maxpool2d_backward(x.shape(), &arg, &proj);
    grad_check(
        |p| {
            let t = Tensor::from_vec(&[2, 6, 7], p.to_vec()).expect("shape");
            dot(maxpool2d(&t).expect("shape").0.data(), proj.data())
        },
        x.data(),
        dx.data(),
    )
}

fn check_gru(rng: &mut ChaCha8Rng) -> Result<f64> {
    let (i, h, t) = (3, 4, 6);
    let mut g = Gru::new(i, h, rng);
    for (_, b) in g.named_mut().into_iter().skip(6) {
        *b = Tensor::uniform(&[h], 0.5, rng);
    }
    let xs = uniform(t * i, rng);
    let mask = vec![true; t];
    let proj = uniform(h, rng);
    let (_, trace) = g.forward(&xs, &mask)?;
    let mut grad = Gru::zeros(i, h);
    g.backward(&xs, &trace, &proj, &mut grad);
    let mut worst = 0.0f64;
    for k in 0..9 {
        let mut probe = g.clone();
        worst = worst.max(grad_check(
            |p| {
                probe.named_mut()[k].1.data_mut().copy_from_slice(p);
                dot(&probe.forward(&xs, &mask).expect("shapes fixed").0, &proj)
            },
            g.named()[k].1.data(),
            grad.named()[k].1.data(),
        )?);
    }
    Ok(worst)
}

fn check_softmax(rng: &mut ChaCha8Rng) -> Result<f64> {
    let logits = uniform(2, rng).iter().map(|v| v * 5.0).collect::<Vec<_>>();
    let target = rng.random_range(0..2);
    let (_, grad) = log_softmax_nll(&logits, target)?;
    grad_check(
        |p| log_softmax_nll(p, target).expect("target in range").0,
        &logits,
        &grad,
    )
}

fn toy_item(rng: &mut ChaCha8Rng, label: Label, image: Option<Arc<ScanPathImage>>, tag: usize) -> DataItem {
    let valid = rng.random_range(2..=6);
    let rows: Vec<[f64; 8]> = (0..valid)
        .map(|_| std::array::from_fn(|_| rng.random_range(-1.0..1.0)))
        .collect();
    let image = image.unwrap_or_else(|| {
        Arc::new(ScanPathImage {
            width: 16,
            height: 16,
            pixels: (0..256)
                .map(|_| if rng.random_bool(0.4) { rng.random_range(0.0..1.0) } else { 0.0 })
                .collect(),
        })
    });
    DataItem {
        sequence: FeatureSequence::from_rows(&rows, 6),
        image,
        label,
        parent_task_id: Arc::from(format!("check{tag}").as_str()),
        user_id: Arc::from("check"),
        split_index: tag,
        synthetic: false,
    }
}

/// Loss of a two-item batch against every parameter of a small model.
fn check_end_to_end(variant: Variant, seed: u64, rng: &mut ChaCha8Rng) -> super::Result<f64> {
    let cfg = VtnetConfig {
        variant,
        hidden_size: 5,
        conv_filters: (2, 3),
        image_width: 16,
        image_height: 16,
        head_hidden: 6,
        seed,
        ..VtnetConfig::default()
    };
    let mut model = init_model(&cfg)?;
    for t in model.params_mut() {
        if t.shape().len() == 1 {
            *t = Tensor::uniform(t.shape(), 0.3, rng);
        }
    }
    let a = toy_item(rng, Label::Confused, None, 0);
    let b = toy_item(rng, Label::NotConfused, None, 1);
    let batch = [&a, &b];
    let (_, grad) = model.loss_and_grad(&batch)?;
    let n = model.named_params().len();
    let mut worst = 0.0f64;
    for k in 0..n {
        let point = model.named_params()[k].1.data().to_vec();
        let analytic = grad.named_params()[k].1.data().to_vec();
        let mut probe = model.clone();
        worst = worst.max(grad_check(
            |p| {
                probe.params_mut()[k].data_mut().copy_from_slice(p);
                probe.loss(&batch).expect("shapes fixed")
            },
            &point,
            &analytic,
        )?);
    }
    Ok(worst)
}

/// Runs every check over `seeds` random instances and reports the worst
/// relative error per component.
pub fn gradient_suite(seeds: u64) -> super::Result<Vec<CheckResult>> {
    let mut worst = [0.0f64; 8];
    for seed in 0..seeds {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        worst[0] = worst[0].max(check_linear(&mut rng)?);
        worst[1] = worst[1].max(check_conv(&mut rng)?);
        worst[2] = worst[2].max(check_pool(&mut rng)?);
        worst[3] = worst[3].max(check_gru(&mut rng)?);
        worst[4] = worst[4].max(check_softmax(&mut rng)?);
        for (j, v) in Variant::ALL.into_iter().enumerate() {
            worst[5 + j] = worst[5 + j].max(check_end_to_end(v, seed, &mut rng)?);
        }
    }
    let names = [
        "linear",
        "conv2d",
        "maxpool2d",
        "gru",
        "log_softmax_nll",
        "end_to_end_gru_only",
        "end_to_end_cnn_only",
        "end_to_end_vtnet",
    ];
    Ok(names
        .iter()
        .zip(worst)
        .map(|(n, e)| CheckResult {
            name: n.to_string(),
            max_error: e,
        })
        .collect())
}
