//! Valid (unpadded) stride-1 2-D correlation, ReLU and 2x2 max pooling over
//! `channels x height x width` tensors.

use super::tensor::{axpy, dot, Tensor};
use super::{NnError, Result};
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Conv2d {
    /// `out_ch x in_ch x k x k`
    pub kernel: Tensor,
    pub bias: Tensor,
}

fn chw(t: &Tensor, what: &str) -> Result<(usize, usize, usize)> {
    match *t.shape() {
        [c, h, w] => Ok((c, h, w)),
        ref s => Err(NnError::ShapeMismatch(format!("{what}: expected C x H x W, got {s:?}"))),
    }
}

impl Conv2d {
    pub fn new(in_ch: usize, out_ch: usize, k: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / ((in_ch * k * k).max(1) as f64).sqrt();
        Conv2d {
            kernel: Tensor::uniform(&[out_ch, in_ch, k, k], bound, rng),
            bias: Tensor::zeros(&[out_ch]),
        }
    }

    pub fn zeros(in_ch: usize, out_ch: usize, k: usize) -> Self {
        Conv2d {
            kernel: Tensor::zeros(&[out_ch, in_ch, k, k]),
            bias: Tensor::zeros(&[out_ch]),
        }
    }

    pub fn from_parts(kernel: Tensor, bias: Tensor) -> Result<Self> {
        let s = kernel.shape();
        if s.len() != 4 || s[2] != s[3] || bias.shape() != [s[0]] {
            return Err(NnError::ShapeMismatch(format!(
                "conv kernel {:?} with bias {:?}",
                s,
                bias.shape()
            )));
        }
        Ok(Conv2d { kernel, bias })
    }

    pub fn out_channels(&self) -> usize {
        self.kernel.shape()[0]
    }

    pub fn in_channels(&self) -> usize {
        self.kernel.shape()[1]
    }

    pub fn kernel_size(&self) -> usize {
        self.kernel.shape()[2]
    }

    /// Output spatial size for an input of `h x w`.
    pub fn output_size(&self, h: usize, w: usize) -> Option<(usize, usize)> {
        let k = self.kernel_size();
        (h >= k && w >= k).then(|| (h - k + 1, w - k + 1))
    }

    pub fn forward(&self, input: &Tensor) -> Result<Tensor> {
        let (c, h, w) = chw(input, "conv2d input")?;
        if c != self.in_channels() {
            return Err(NnError::ShapeMismatch(format!(
                "conv2d expects {} channels, got {c}",
                self.in_channels()
            )));
        }
        let (oh, ow) = self.output_size(h, w).ok_or_else(|| {
            NnError::ShapeMismatch(format!("conv2d input {h}x{w} smaller than kernel"))
        })?;
        let k = self.kernel_size();
        let oc = self.out_channels();
        let mut out = Tensor::zeros(&[oc, oh, ow]);
        let x = input.data();
        let kern = self.kernel.data();
        let o = out.data_mut();
        for co in 0..oc {
            let plane = &mut o[co * oh * ow..(co + 1) * oh * ow];
            plane.iter_mut().for_each(|v| *v = self.bias.data()[co]);
            for ci in 0..c {
                let xin = &x[ci * h * w..(ci + 1) * h * w];
                let kk = &kern[(co * c + ci) * k * k..(co * c + ci + 1) * k * k];
                for ky in 0..k {
                    for kx in 0..k {
                        let wgt = kk[ky * k + kx];
                        for y in 0..oh {
                            let src = &xin[(y + ky) * w + kx..(y + ky) * w + kx + ow];
                            axpy(wgt, src, &mut plane[y * ow..(y + 1) * ow]);
                        }
                    }
                }
            }
        }
        Ok(out)
    }

    /// Accumulates kernel and bias gradients into `grad`; returns the input
    /// gradient when `want_input` is set.
    pub fn backward(&self, input: &Tensor, dout: &Tensor, grad: &mut Conv2d, want_input: bool) -> Option<Tensor> {
        let (c, h, w) = (input.shape()[0], input.shape()[1], input.shape()[2]);
        let (oc, oh, ow) = (dout.shape()[0], dout.shape()[1], dout.shape()[2]);
        let k = self.kernel_size();
        let x = input.data();
        let d = dout.data();
        for co in 0..oc {
            let dplane = &d[co * oh * ow..(co + 1) * oh * ow];
            grad.bias.data_mut()[co] += dplane.iter().sum::<f64>();
            for ci in 0..c {
                let xin = &x[ci * h * w..(ci + 1) * h * w];
                let base = (co * c + ci) * k * k;
                for ky in 0..k {
                    for kx in 0..k {
                        let mut s = 0.0;
                        for y in 0..oh {
                            s += dot(
                                &dplane[y * ow..(y + 1) * ow],
                                &xin[(y + ky) * w + kx..(y + ky) * w + kx + ow],
                            );
                        }
                        grad.kernel.data_mut()[base + ky * k + kx] += s;
                    }
                }
            }
        }
        if !want_input {
            return None;
        }
        let mut dx = Tensor::zeros(&[c, h, w]);
        let dxd = dx.data_mut();
        let kern = self.kernel.data();
        for co in 0..oc {
            let dplane = &d[co * oh * ow..(co + 1) * oh * ow];
            for ci in 0..c {
                let dxin = &mut dxd[ci * h * w..(ci + 1) * h * w];
                let kk = &kern[(co * c + ci) * k * k..(co * c + ci + 1) * k * k];
                for ky in 0..k {
                    for kx in 0..k {
                        let wgt = kk[ky * k + kx];
                        for y in 0..oh {
                            axpy(
                                wgt,
                                &dplane[y * ow..(y + 1) * ow],
                                &mut dxin[(y + ky) * w + kx..(y + ky) * w + kx + ow],
                            );
                        }
                    }
                }
            }
        }
        Some(dx)
    }
}

pub fn relu_inplace(t: &mut Tensor) {
    t.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
}

/// Zeroes `grad` where the ReLU output was not positive.
pub fn relu_backward_inplace(output: &Tensor, grad: &mut Tensor) {
    for (g, &o) in grad.data_mut().iter_mut().zip(output.data()) {
        if o <= 0.0 {
            *g = 0.0;
        }
    }
}

/// 2x2 max pooling with stride 2. Also returns, for every output element, the
/// flat input index it was taken from; ties go to the first element in
/// row-major window order.
pub fn maxpool2d(input: &Tensor) -> Result<(Tensor, Vec<usize>)> {
    let (c, h, w) = chw(input, "maxpool2d input")?;
    if h < 2 || w < 2 {
        return Err(NnError::ShapeMismatch(format!("maxpool2d input {h}x{w} below 2x2")));
    }
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Tensor::zeros(&[c, oh, ow]);
    let mut arg = vec![0usize; c * oh * ow];
    let x = input.data();
    let o = out.data_mut();
    for ch in 0..c {
        for y in 0..oh {
            for xo in 0..ow {
                let mut best = ch * h * w + (2 * y) * w + 2 * xo;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let idx = ch * h * w + (2 * y + dy) * w + 2 * xo + dx;
                    if x[idx] > x[best] {
                        best = idx;
                    }
                }
                let oi = (ch * oh + y) * ow + xo;
                o[oi] = x[best];
                arg[oi] = best;
            }
        }
    }
    Ok((out, arg))
}

pub fn maxpool2d_backward(input_shape: &[usize], argmax: &[usize], dout: &Tensor) -> Tensor {
    let mut dx = Tensor::zeros(input_shape);
    let d = dx.data_mut();
    for (&i, &g) in argmax.iter().zip(dout.data()) {
        d[i] += g;
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::grad_check;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
        Tensor::uniform(shape, 1.0, rng)
    }

    #[test]
    fn averaging_kernel_on_constant_image() {
        let mut conv = Conv2d::zeros(1, 1, 5);
        conv.kernel.fill(1.0 / 25.0);
        let mut x = Tensor::zeros(&[1, 9, 7]);
        x.fill(0.37);
        let y = conv.forward(&x).unwrap();
        assert_eq!(y.shape(), &[1, 5, 3]);
        assert!(y.data().iter().all(|v| (v - 0.37).abs() < 1e-12));
    }

    #[test]
    fn zero_kernel_yields_bias() {
        let mut conv = Conv2d::zeros(2, 3, 5);
        conv.bias.data_mut().copy_from_slice(&[0.5, -1.0, 2.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let y = conv.forward(&random(&[2, 6, 6], &mut rng)).unwrap();
        assert_eq!(y.shape(), &[3, 2, 2]);
        assert!(y.data()[..4].iter().all(|&v| v == 0.5));
        assert!(y.data()[8..].iter().all(|&v| v == 2.0));
    }

    #[test]
    fn shape_errors() {
        let conv = Conv2d::zeros(1, 1, 5);
        assert!(conv.forward(&Tensor::zeros(&[1, 4, 8])).is_err());
        assert!(conv.forward(&Tensor::zeros(&[2, 8, 8])).is_err());
        assert!(conv.forward(&Tensor::zeros(&[8, 8])).is_err());
        assert!(maxpool2d(&Tensor::zeros(&[1, 1, 4])).is_err());
    }

    #[test]
    fn conv_is_linear_in_its_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let conv = Conv2d::new(2, 3, 5, &mut rng);
        let (x, y) = (random(&[2, 9, 8], &mut rng), random(&[2, 9, 8], &mut rng));
        let (a, b) = (0.7, -1.3);
        let mut mix = x.clone();
        mix.data_mut().iter_mut().zip(y.data()).for_each(|(m, v)| *m = a * *m + b * v);
        let nobias = Conv2d { bias: Tensor::zeros(&[3]), ..conv };
        let fx = nobias.forward(&x).unwrap();
        let fy = nobias.forward(&y).unwrap();
        let fm = nobias.forward(&mix).unwrap();
        for i in 0..fm.len() {
            assert!((fm.data()[i] - (a * fx.data()[i] + b * fy.data()[i])).abs() < 1e-9);
        }
    }

    #[test]
    fn conv_gradients_match_finite_differences() {
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let conv = Conv2d::new(1, 2, 5, &mut rng);
            let conv = Conv2d { bias: random(&[2], &mut rng), ..conv };
            let x = random(&[1, 8, 8], &mut rng);
            let proj = random(&[2, 4, 4], &mut rng);
            let loss = |c: &Conv2d, x: &Tensor| -> f64 { dot(c.forward(x).unwrap().data(), proj.data()) };
            let mut g = Conv2d::zeros(1, 2, 5);
            let dx = conv.backward(&x, &proj, &mut g, true).unwrap();

            let with_x = |p: &[f64]| loss(&conv, &Tensor::from_vec(&[1, 8, 8], p.to_vec()).unwrap());
            assert!(grad_check(with_x, x.data(), dx.data()).unwrap() < 1e-4);
            let with_k = |p: &[f64]| {
                let mut c = conv.clone();
                c.kernel.data_mut().copy_from_slice(p);
                loss(&c, &x)
            };
            assert!(grad_check(with_k, conv.kernel.data(), g.kernel.data()).unwrap() < 1e-4);
            let with_b = |p: &[f64]| {
                let mut c = conv.clone();
                c.bias.data_mut().copy_from_slice(p);
                loss(&c, &x)
            };
            assert!(grad_check(with_b, conv.bias.data(), g.bias.data()).unwrap() < 1e-4);
        }
    }

    #[test]
    fn pool_picks_max() {
        let x = Tensor::from_vec(&[1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let (y, arg) = maxpool2d(&x).unwrap();
        assert_eq!(y.data(), &[4.0]);
        assert_eq!(arg, vec![3]);
    }

    #[test]
    fn pool_ties_route_to_first_element() {
        let mut x = Tensor::zeros(&[2, 4, 5]);
        x.fill(1.5);
        let (y, arg) = maxpool2d(&x).unwrap();
        assert_eq!(y.shape(), &[2, 2, 2]);
        assert!(y.data().iter().all(|&v| v == 1.5));
        let mut d = Tensor::zeros(&[2, 2, 2]);
        d.fill(1.0);
        let dx = maxpool2d_backward(x.shape(), &arg, &d);
        // top-left of each window receives everything
        assert_eq!(dx.data()[0], 1.0);
        assert_eq!(dx.data()[1], 0.0);
        assert_eq!(dx.data()[2], 1.0);
        assert_eq!(dx.data()[5], 0.0);
        assert_eq!(dx.data().iter().sum::<f64>(), 8.0);
    }

    #[test]
    fn pool_gradient_matches_finite_differences() {
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
            // distinct values keep every window away from ties
            let x = random(&[2, 6, 7], &mut rng);
            let (y, arg) = maxpool2d(&x).unwrap();
            let proj = random(y.shape(), &mut rng);
            let dx = maxpool2d_backward(x.shape(), &arg, &proj);
            let f = |p: &[f64]| {
                let t = Tensor::from_vec(&[2, 6, 7], p.to_vec()).unwrap();
                dot(maxpool2d(&t).unwrap().0.data(), proj.data())
            };
            assert!(grad_check(f, x.data(), dx.data()).unwrap() < 1e-4);
        }
    }

    #[test]
    fn relu_masks_gradient() {
        let mut t = Tensor::from_vec(&[3], vec![-1.0, 0.0, 2.0]).unwrap();
        relu_inplace(&mut t);
        assert_eq!(t.data(), &[0.0, 0.0, 2.0]);
        let mut g = Tensor::from_vec(&[3], vec![1.0, 1.0, 1.0]).unwrap();
        relu_backward_inplace(&t, &mut g);
        assert_eq!(g.data(), &[0.0, 0.0, 1.0]);
    }
}
