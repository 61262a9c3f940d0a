//! Single-layer GRU with masked steps and backpropagation through time.
//!
//! Update rule: `h = (1 - z) * h_prev + z * tanh(W_h x + U_h (r * h_prev) + b_h)`.
//! A step whose mask is false leaves the hidden state untouched.

use super::tensor::{axpy, dot, Tensor};
use super::{NnError, Result};
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gru {
    pub w_z: Tensor,
    pub w_r: Tensor,
    pub w_h: Tensor,
    pub u_z: Tensor,
    pub u_r: Tensor,
    pub u_h: Tensor,
    pub b_z: Tensor,
    pub b_r: Tensor,
    pub b_h: Tensor,
}

/// Activations of one unmasked step, kept for the backward pass.
#[derive(Debug, Clone)]
struct StepCache {
    t: usize,
    h_prev: Vec<f64>,
    z: Vec<f64>,
    r: Vec<f64>,
    n: Vec<f64>,
    rh: Vec<f64>,
}

/// Forward trace of a sequence.
#[derive(Debug, Clone)]
pub struct GruTrace {
    steps: Vec<StepCache>,
}

fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

/// `y[i] = b[i] + W[i,:] . x`
fn affine(w: &Tensor, x: &[f64], b: &[f64], y: &mut [f64]) {
    let n = x.len();
    let wd = w.data();
    for (i, yi) in y.iter_mut().enumerate() {
        *yi = b[i] + dot(&wd[i * n..(i + 1) * n], x);
    }
}

/// `y[i] += W[i,:] . x`
fn add_matvec(w: &Tensor, x: &[f64], y: &mut [f64]) {
    let n = x.len();
    let wd = w.data();
    for (i, yi) in y.iter_mut().enumerate() {
        *yi += dot(&wd[i * n..(i + 1) * n], x);
    }
}

/// `y += W^T d`
fn add_matvec_t(w: &Tensor, d: &[f64], y: &mut [f64]) {
    let n = y.len();
    let wd = w.data();
    for (i, &di) in d.iter().enumerate() {
        if di != 0.0 {
            axpy(di, &wd[i * n..(i + 1) * n], y);
        }
    }
}

/// `G += d x^T`
fn add_outer(g: &mut Tensor, d: &[f64], x: &[f64]) {
    let n = x.len();
    let gd = g.data_mut();
    for (i, &di) in d.iter().enumerate() {
        if di != 0.0 {
            axpy(di, x, &mut gd[i * n..(i + 1) * n]);
        }
    }
}

impl Gru {
    pub fn new(input: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        let a_in = 1.0 / (input.max(1) as f64).sqrt();
        let a_h = 1.0 / (hidden.max(1) as f64).sqrt();
        Gru {
            w_z: Tensor::uniform(&[hidden, input], a_in, rng),
            w_r: Tensor::uniform(&[hidden, input], a_in, rng),
            w_h: Tensor::uniform(&[hidden, input], a_in, rng),
            u_z: Tensor::uniform(&[hidden, hidden], a_h, rng),
            u_r: Tensor::uniform(&[hidden, hidden], a_h, rng),
            u_h: Tensor::uniform(&[hidden, hidden], a_h, rng),
            b_z: Tensor::zeros(&[hidden]),
            b_r: Tensor::zeros(&[hidden]),
            b_h: Tensor::zeros(&[hidden]),
        }
    }

    pub fn zeros(input: usize, hidden: usize) -> Self {
        Gru {
            w_z: Tensor::zeros(&[hidden, input]),
            w_r: Tensor::zeros(&[hidden, input]),
            w_h: Tensor::zeros(&[hidden, input]),
            u_z: Tensor::zeros(&[hidden, hidden]),
            u_r: Tensor::zeros(&[hidden, hidden]),
            u_h: Tensor::zeros(&[hidden, hidden]),
            b_z: Tensor::zeros(&[hidden]),
            b_r: Tensor::zeros(&[hidden]),
            b_h: Tensor::zeros(&[hidden]),
        }
    }

    pub fn input_size(&self) -> usize {
        self.w_z.shape()[1]
    }

    pub fn hidden_size(&self) -> usize {
        self.w_z.shape()[0]
    }

    /// Parameter tensors with stable names, in a fixed order.
    pub fn named(&self) -> [(&'static str, &Tensor); 9] {
        [
            ("w_z", &self.w_z),
            ("w_r", &self.w_r),
            ("w_h", &self.w_h),
            ("u_z", &self.u_z),
            ("u_r", &self.u_r),
            ("u_h", &self.u_h),
            ("b_z", &self.b_z),
            ("b_r", &self.b_r),
            ("b_h", &self.b_h),
        ]
    }

    pub fn named_mut(&mut self) -> [(&'static str, &mut Tensor); 9] {
        [
            ("w_z", &mut self.w_z),
            ("w_r", &mut self.w_r),
            ("w_h", &mut self.w_h),
            ("u_z", &mut self.u_z),
            ("u_r", &mut self.u_r),
            ("u_h", &mut self.u_h),
            ("b_z", &mut self.b_z),
            ("b_r", &mut self.b_r),
            ("b_h", &mut self.b_h),
        ]
    }

    pub fn check_shapes(&self) -> Result<()> {
        let (h, i) = (self.hidden_size(), self.input_size());
        let ok = self.named().iter().all(|(name, t)| {
            let want: &[usize] = match name.as_bytes()[0] {
                b'w' => &[h, i],
                b'u' => &[h, h],
                _ => &[h],
            };
            t.shape() == want
        });
        if ok {
            Ok(())
        } else {
            Err(NnError::ShapeMismatch(format!("inconsistent GRU parameters for I={i}, H={h}")))
        }
    }

    fn step_inner(&self, x: &[f64], h_prev: &[f64]) -> StepCache {
        let hs = self.hidden_size();
        let mut z = vec![0.0; hs];
        let mut r = vec![0.0; hs];
        let mut n = vec![0.0; hs];
        affine(&self.w_z, x, self.b_z.data(), &mut z);
        add_matvec(&self.u_z, h_prev, &mut z);
        affine(&self.w_r, x, self.b_r.data(), &mut r);
        add_matvec(&self.u_r, h_prev, &mut r);
        z.iter_mut().for_each(|v| *v = sigmoid(*v));
        r.iter_mut().for_each(|v| *v = sigmoid(*v));
        let rh: Vec<f64> = r.iter().zip(h_prev).map(|(a, b)| a * b).collect();
        affine(&self.w_h, x, self.b_h.data(), &mut n);
        add_matvec(&self.u_h, &rh, &mut n);
        n.iter_mut().for_each(|v| *v = v.tanh());
        StepCache {
            t: 0,
            h_prev: h_prev.to_vec(),
            z,
            r,
            n,
            rh,
        }
    }

    fn check_step(&self, x: &[f64], h_prev: &[f64]) -> Result<()> {
        if x.len() != self.input_size() || h_prev.len() != self.hidden_size() {
            return Err(NnError::ShapeMismatch(format!(
                "gru step expects x[{}], h[{}], got x[{}], h[{}]",
                self.input_size(),
                self.hidden_size(),
                x.len(),
                h_prev.len()
            )));
        }
        Ok(())
    }

    /// One step. With `mask == false` this returns `h_prev` unchanged.
    pub fn step(&self, x: &[f64], h_prev: &[f64], mask: bool) -> Result<Vec<f64>> {
        self.check_step(x, h_prev)?;
        if !mask {
            return Ok(h_prev.to_vec());
        }
        let c = self.step_inner(x, h_prev);
        Ok(combine(&c))
    }

    /// Runs a row-major `T x I` sequence from a zero state and returns the
    /// final hidden state together with the trace needed by [`Gru::backward`].
    pub fn forward(&self, xs: &[f64], mask: &[bool]) -> Result<(Vec<f64>, GruTrace)> {
        let i = self.input_size();
        if xs.len() != mask.len() * i {
            return Err(NnError::ShapeMismatch(format!(
                "gru sequence of {} values for {} steps of width {i}",
                xs.len(),
                mask.len()
            )));
        }
        let mut h = vec![0.0; self.hidden_size()];
        let mut steps = Vec::new();
        for (t, &m) in mask.iter().enumerate() {
            if !m {
                continue;
            }
            let mut c = self.step_inner(&xs[t * i..(t + 1) * i], &h);
            c.t = t;
            h = combine(&c);
            steps.push(c);
        }
        Ok((h, GruTrace { steps }))
    }

    /// Backpropagates `dh` (gradient of the loss w.r.t. the final hidden
    /// state) through the trace, accumulating parameter gradients into `grad`.
    pub fn backward(&self, xs: &[f64], trace: &GruTrace, dh: &[f64], grad: &mut Gru) {
        let i = self.input_size();
        let hs = self.hidden_size();
        let mut dh = dh.to_vec();
        let mut da_n = vec![0.0; hs];
        let mut da_z = vec![0.0; hs];
        let mut da_r = vec![0.0; hs];
        let mut d_rh = vec![0.0; hs];
        for c in trace.steps.iter().rev() {
            let x = &xs[c.t * i..(c.t + 1) * i];
            let mut dh_prev = vec![0.0; hs];
            for k in 0..hs {
                let dn = dh[k] * c.z[k];
                da_n[k] = dn * (1.0 - c.n[k] * c.n[k]);
                let dz = dh[k] * (c.n[k] - c.h_prev[k]);
                da_z[k] = dz * c.z[k] * (1.0 - c.z[k]);
                dh_prev[k] = dh[k] * (1.0 - c.z[k]);
            }
            add_outer(&mut grad.w_h, &da_n, x);
            add_outer(&mut grad.u_h, &da_n, &c.rh);
            axpy(1.0, &da_n, grad.b_h.data_mut());
            d_rh.iter_mut().for_each(|v| *v = 0.0);
            add_matvec_t(&self.u_h, &da_n, &mut d_rh);
            for k in 0..hs {
                dh_prev[k] += d_rh[k] * c.r[k];
                let dr = d_rh[k] * c.h_prev[k];
                da_r[k] = dr * c.r[k] * (1.0 - c.r[k]);
            }
            add_outer(&mut grad.w_z, &da_z, x);
            add_outer(&mut grad.u_z, &da_z, &c.h_prev);
            axpy(1.0, &da_z, grad.b_z.data_mut());
            add_outer(&mut grad.w_r, &da_r, x);
            add_outer(&mut grad.u_r, &da_r, &c.h_prev);
            axpy(1.0, &da_r, grad.b_r.data_mut());
            add_matvec_t(&self.u_z, &da_z, &mut dh_prev);
            add_matvec_t(&self.u_r, &da_r, &mut dh_prev);
            dh = dh_prev;
        }
    }
}

fn combine(c: &StepCache) -> Vec<f64> {
    (0..c.z.len())
        .map(|k| (1.0 - c.z[k]) * c.h_prev[k] + c.z[k] * c.n[k])
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::grad_check;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_params_halve_the_state() {
        let g = Gru::zeros(3, 4);
        assert_eq!(g.step(&[1.0, 2.0, 3.0], &[0.0; 4], true).unwrap(), vec![0.0; 4]);
        let v = [1.0, -2.0, 0.5, 4.0];
        assert_eq!(g.step(&[1.0, 2.0, 3.0], &v, true).unwrap(), vec![0.5, -1.0, 0.25, 2.0]);
    }

    #[test]
    fn masked_step_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let g = Gru::new(3, 5, &mut rng);
        let h = [0.1, -0.2, 0.3, 0.9, -0.7];
        assert_eq!(g.step(&[5.0, 5.0, 5.0], &h, false).unwrap(), h.to_vec());
    }

    #[test]
    fn leading_padding_does_not_change_the_result() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let g = Gru::new(2, 3, &mut rng);
        let xs = [0.3, -0.1, 0.8, 0.2];
        let (h1, _) = g.forward(&xs, &[true, true]).unwrap();
        let mut padded = vec![9.0; 6];
        padded.extend_from_slice(&xs);
        let (h2, trace) = g.forward(&padded, &[false, false, false, true, true]).unwrap();
        assert_eq!(h1, h2);
        assert_eq!(trace.steps.len(), 2);
    }

    #[test]
    fn shape_errors() {
        let g = Gru::zeros(3, 4);
        assert!(g.step(&[1.0], &[0.0; 4], true).is_err());
        assert!(g.forward(&[0.0; 5], &[true, true]).is_err());
        assert!(g.check_shapes().is_ok());
        let mut bad = g.clone();
        bad.u_h = Tensor::zeros(&[4, 3]);
        assert!(bad.check_shapes().is_err());
    }

    #[test]
    fn bptt_matches_finite_differences() {
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (i, hs, t) = (3, 4, 6);
            let mut g = Gru::new(i, hs, &mut rng);
            for (_, p) in g.named_mut().into_iter().skip(6) {
                *p = Tensor::uniform(&[hs], 0.5, &mut rng);
            }
            let xs: Vec<f64> = (0..t * i).map(|_| rng.random_range(-1.0..1.0)).collect();
            let mask = [false, true, true, false, true, true];
            let proj: Vec<f64> = (0..hs).map(|_| rng.random_range(-1.0..1.0)).collect();
            let loss = |g: &Gru| dot(&g.forward(&xs, &mask).unwrap().0, &proj);

            let (_, trace) = g.forward(&xs, &mask).unwrap();
            let mut grad = Gru::zeros(i, hs);
            g.backward(&xs, &trace, &proj, &mut grad);

            for k in 0..9 {
                let point = g.named()[k].1.data().to_vec();
                let analytic = grad.named()[k].1.data().to_vec();
                let err = grad_check(
                    |p| {
                        let mut m = g.clone();
                        m.named_mut()[k].1.data_mut().copy_from_slice(p);
                        loss(&m)
                    },
                    &point,
                    &analytic,
                )
                .unwrap();
                assert!(err < 1e-4, "seed {seed} param {} err {err}", g.named()[k].0);
            }
        }
    }
}
