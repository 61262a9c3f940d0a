use super::{NnError, Result};

/// Index of the largest logit and `ln(sum exp(l - max))`, the latter via
/// `ln_1p` so that confident predictions keep their precision.
fn shifted_lse(logits: &[f64]) -> (f64, f64) {
    let (arg, max) = logits
        .iter()
        .copied()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, v)| if v > best.1 { (i, v) } else { best });
    let rest: f64 = logits
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != arg)
        .map(|(_, v)| (v - max).exp())
        .sum();
    (max, rest.ln_1p())
}

/// Numerically stable log-softmax.
pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let (max, tail) = shifted_lse(logits);
    logits.iter().map(|v| (v - max) - tail).collect()
}

/// Negative log-likelihood of `target` under softmax(`logits`), with the
/// gradient `softmax - onehot`.
pub fn log_softmax_nll(logits: &[f64], target: usize) -> Result<(f64, Vec<f64>)> {
    if target >= logits.len() {
        return Err(NnError::BadTarget {
            target,
            classes: logits.len(),
        });
    }
    let (max, tail) = shifted_lse(logits);
    let mut grad: Vec<f64> = logits.iter().map(|v| ((v - max) - tail).exp()).collect();
    grad[target] -= 1.0;
    Ok(((max - logits[target]) + tail, grad))
}
