use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::param::{join, kaiming_uniform, Param, Parameters};
use super::tensor::{gemm, Tensor};
use crate::error::{Error, Result};

/// Fully connected layer, `y = x W^T + b` over a batch of rows.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: Param,
    pub bias: Param,
    has_bias: bool,
    input: Option<Tensor>,
}

impl Linear {
    pub fn new(in_dim: usize, out_dim: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            weight: Param::new(kaiming_uniform(&[out_dim, in_dim], in_dim, rng)),
            bias: Param::zeros(&[out_dim]),
            has_bias: true,
            input: None,
        }
    }

    /// A layer whose bias stays fixed at zero and is not a parameter.
    pub fn without_bias(in_dim: usize, out_dim: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut l = Self::new(in_dim, out_dim, rng);
        l.has_bias = false;
        l
    }

    pub fn in_dim(&self) -> usize {
        self.weight.value.dim(1)
    }

    pub fn out_dim(&self) -> usize {
        self.weight.value.dim(0)
    }

    pub fn infer(&self, x: &Tensor) -> Result<Tensor> {
        if x.shape().len() != 2 || x.dim(1) != self.in_dim() {
            return Err(Error::Shape(format!(
                "linear expects [N, {}], got {:?}",
                self.in_dim(),
                x.shape()
            )));
        }
        let n = x.dim(0);
        let out = self.out_dim();
        let mut y = vec![0.0; n * out];
        for row in y.chunks_mut(out) {
            row.copy_from_slice(self.bias.value.data());
        }
        gemm(n, self.in_dim(), out, x.data(), false, self.weight.value.data(), true, 1.0, &mut y);
        Tensor::from_vec(&[n, out], y)
    }

    pub fn forward(&mut self, x: &Tensor) -> Result<Tensor> {
        let y = self.infer(x)?;
        self.input = Some(x.clone());
        Ok(y)
    }

    /// Accumulates parameter gradients and returns the input gradient.
    pub fn backward(&mut self, dy: &Tensor) -> Tensor {
        let x = self.input.as_ref().expect("linear backward before forward");
        let n = x.dim(0);
        let (out, inp) = (self.out_dim(), self.in_dim());
        gemm(out, n, inp, dy.data(), true, x.data(), false, 1.0, self.weight.grad.data_mut());
        let db = self.bias.grad.data_mut();
        for row in dy.data().chunks(out) {
            for (g, d) in db.iter_mut().zip(row) {
                *g += d;
            }
        }
        let mut dx = vec![0.0; n * inp];
        gemm(n, out, inp, dy.data(), false, self.weight.value.data(), false, 0.0, &mut dx);
        Tensor::from_vec(&[n, inp], dx).expect("shape")
    }
}

impl Parameters for Linear {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        f(&join(prefix, "weight"), &mut self.weight);
        if self.has_bias {
            f(&join(prefix, "bias"), &mut self.bias);
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct Relu {
    masks: Vec<Vec<bool>>,
}

impl Relu {
    pub fn apply(x: &Tensor) -> Tensor {
        let mut y = x.clone();
        y.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
        y
    }

    pub fn forward(&mut self, xs: &[Tensor]) -> Vec<Tensor> {
        self.masks = xs
            .iter()
            .map(|x| x.data().iter().map(|&v| v > 0.0).collect())
            .collect();
        xs.iter().map(Self::apply).collect()
    }

    pub fn forward_one(&mut self, x: &Tensor) -> Tensor {
        self.forward(std::slice::from_ref(x)).pop().expect("one")
    }

    pub fn backward(&self, dys: &[Tensor]) -> Vec<Tensor> {
        dys.iter()
            .zip(&self.masks)
            .map(|(dy, mask)| {
                let mut dx = dy.clone();
                for (d, &m) in dx.data_mut().iter_mut().zip(mask) {
                    if !m {
                        *d = 0.0;
                    }
                }
                dx
            })
            .collect()
    }

    pub fn backward_one(&self, dy: &Tensor) -> Tensor {
        self.backward(std::slice::from_ref(dy)).pop().expect("one")
    }
}

/// Inverted dropout: kept units are scaled by `1/(1-p)` at train time, the
/// layer is the identity at inference.
#[derive(Debug, Clone)]
pub struct Dropout {
    pub p: f64,
    mask: Option<Vec<f64>>,
}

impl Dropout {
    pub fn new(p: f64) -> Self {
        Self { p, mask: None }
    }

    pub fn forward(&mut self, x: &Tensor, train: bool, rng: &mut ChaCha8Rng) -> Tensor {
        if !train || self.p <= 0.0 {
            self.mask = None;
            return x.clone();
        }
        let keep = 1.0 - self.p;
        let mask: Vec<f64> = (0..x.len())
            .map(|_| if rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 })
            .collect();
        let mut y = x.clone();
        for (v, m) in y.data_mut().iter_mut().zip(&mask) {
            *v *= m;
        }
        self.mask = Some(mask);
        y
    }

    pub fn backward(&self, dy: &Tensor) -> Tensor {
        match &self.mask {
            None => dy.clone(),
            Some(mask) => {
                let mut dx = dy.clone();
                for (v, m) in dx.data_mut().iter_mut().zip(mask) {
                    *v *= m;
                }
                dx
            }
        }
    }
}

/// Numerically stable softmax of one logit vector.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

pub fn log_sum_exp(logits: &[f64]) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + logits.iter().map(|&z| (z - max).exp()).sum::<f64>().ln()
}

/// Row-wise softmax of a rank-2 tensor.
pub fn softmax_rows(x: &Tensor) -> Tensor {
    let cols = x.dim(1);
    let data = x.data().chunks(cols).flat_map(softmax).collect();
    Tensor::from_vec(x.shape(), data).expect("shape")
}

/// Mean over the spatial axes of each `[C, H, W]` map; output `[N, C]`.
pub fn global_avg_pool(xs: &[Tensor]) -> Tensor {
    let c = xs.first().map(|x| x.dim(0)).unwrap_or(0);
    let mut out = Vec::with_capacity(xs.len() * c);
    for x in xs {
        let hw = x.dim(1) * x.dim(2);
        for ch in x.data().chunks(hw) {
            out.push(ch.iter().sum::<f64>() / hw as f64);
        }
    }
    Tensor::from_vec(&[xs.len(), c], out).expect("shape")
}

pub fn global_avg_pool_backward(dy: &Tensor, shapes: &[Vec<usize>]) -> Vec<Tensor> {
    shapes
        .iter()
        .enumerate()
        .map(|(n, shape)| {
            let hw = shape[1] * shape[2];
            let mut dx = Tensor::zeros(shape);
            for (c, ch) in dx.data_mut().chunks_mut(hw).enumerate() {
                let g = dy.row(n)[c] / hw as f64;
                ch.iter_mut().for_each(|v| *v = g);
            }
            dx
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;

    #[test]
    fn dropout_is_identity_at_inference() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut d = Dropout::new(0.5);
        let x = Tensor::from_vec(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(d.forward(&x, false, &mut rng), x);
        let y = d.forward(&x, true, &mut rng);
        for (a, b) in y.data().iter().zip(x.data()) {
            assert!(*a == 0.0 || (*a - 2.0 * b).abs() < 1e-12);
        }
    }

    #[test]
    fn linear_shape_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let l = Linear::new(3, 2, &mut rng);
        assert!(l.infer(&Tensor::zeros(&[1, 4])).is_err());
    }

    proptest! {
        #[test]
        fn softmax_is_a_distribution(v in proptest::collection::vec(-1e4f64..1e4, 1..8)) {
            let p = softmax(&v);
            prop_assert!(p.iter().all(|&x| x >= 0.0));
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
    }
}
