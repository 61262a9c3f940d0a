use super::tensor::{axpy, dot, Tensor};
use super::{NnError, Result};
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Fully connected layer `y = W x + b` with `W` of shape `out x in`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Linear {
    pub fn new(input: usize, output: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (input.max(1) as f64).sqrt();
        Linear {
            weight: Tensor::uniform(&[output, input], bound, rng),
            bias: Tensor::zeros(&[output]),
        }
    }

    pub fn zeros(input: usize, output: usize) -> Self {
        Linear {
            weight: Tensor::zeros(&[output, input]),
            bias: Tensor::zeros(&[output]),
        }
    }

    pub fn from_parts(weight: Tensor, bias: Tensor) -> Result<Self> {
        let s = weight.shape();
        if s.len() != 2 || bias.shape() != [s[0]] {
            return Err(NnError::ShapeMismatch(format!(
                "linear weight {:?} with bias {:?}",
                s,
                bias.shape()
            )));
        }
        Ok(Linear { weight, bias })
    }

    pub fn in_dim(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn out_dim(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.in_dim() {
            return Err(NnError::ShapeMismatch(format!(
                "linear expects {} inputs, got {}",
                self.in_dim(),
                x.len()
            )));
        }
        let mut y = vec![0.0; self.out_dim()];
        self.forward_into(x, &mut y);
        Ok(y)
    }

    pub(crate) fn forward_into(&self, x: &[f64], y: &mut [f64]) {
        let n = self.in_dim();
        let w = self.weight.data();
        for (i, (yi, bi)) in y.iter_mut().zip(self.bias.data()).enumerate() {
            *yi = bi + dot(&w[i * n..(i + 1) * n], x);
        }
    }

    /// Accumulates parameter gradients into `grad` and, when asked, writes
    /// the input gradient into `dx`.
    pub fn backward(&self, x: &[f64], dy: &[f64], grad: &mut Linear, dx: Option<&mut [f64]>) {
        let n = self.in_dim();
        {
            let gw = grad.weight.data_mut();
            for (i, &d) in dy.iter().enumerate() {
                if d != 0.0 {
                    axpy(d, x, &mut gw[i * n..(i + 1) * n]);
                }
            }
        }
        axpy(1.0, dy, grad.bias.data_mut());
        if let Some(dx) = dx {
            dx.iter_mut().for_each(|v| *v = 0.0);
            let w = self.weight.data();
            for (i, &d) in dy.iter().enumerate() {
                if d != 0.0 {
                    axpy(d, &w[i * n..(i + 1) * n], dx);
                }
            }
        }
    }
}
