use rand_chacha::ChaCha8Rng;

use super::param::{join, kaiming_uniform, Param, Parameters};
use super::tensor::{gemm, Tensor};
use crate::error::{Error, Result};

/// Square-kernel 2-D convolution with "same" padding (`k / 2`) and no bias,
/// applied independently to each `[C, H, W]` map of a batch.
#[derive(Debug, Clone)]
pub struct Conv2d {
    pub weight: Param,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    cache: Vec<(Vec<f64>, Vec<usize>)>,
}

fn out_size(len: usize, kernel: usize, stride: usize) -> usize {
    let pad = kernel / 2;
    (len + 2 * pad - kernel) / stride + 1
}

impl Conv2d {
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        assert!(kernel % 2 == 1 && stride >= 1);
        let fan_in = in_channels * kernel * kernel;
        Self {
            weight: Param::new(kaiming_uniform(
                &[out_channels, fan_in],
                fan_in,
                rng,
            )),
            in_channels,
            out_channels,
            kernel,
            stride,
            cache: Vec::new(),
        }
    }

    pub fn output_shape(&self, shape: &[usize]) -> [usize; 3] {
        [
            self.out_channels,
            out_size(shape[1], self.kernel, self.stride),
            out_size(shape[2], self.kernel, self.stride),
        ]
    }

    /// Output columns `lo..hi` whose input column `oj * s + kj - pad` is in range.
    fn valid_cols(&self, kj: usize, w: usize, wo: usize) -> (usize, usize) {
        let pad = self.kernel / 2;
        let s = self.stride;
        let lo = if kj >= pad { 0 } else { (pad - kj).div_ceil(s) };
        let hi = if w + pad > kj { ((w + pad - kj - 1) / s + 1).min(wo) } else { 0 };
        (lo, hi.max(lo))
    }

    fn im2col(&self, x: &Tensor, ho: usize, wo: usize) -> Vec<f64> {
        let mut out = Vec::new();
        self.im2col_into(x, ho, wo, &mut out);
        out
    }

    fn im2col_into(&self, x: &Tensor, ho: usize, wo: usize, out: &mut Vec<f64>) {
        let (c, h, w) = (x.dim(0), x.dim(1), x.dim(2));
        let k = self.kernel;
        let pad = k / 2;
        let s = self.stride;
        let cols = ho * wo;
        out.clear();
        out.resize(c * k * k * cols, 0.0);
        let xd = x.data();
        for ch in 0..c {
            for ki in 0..k {
                for kj in 0..k {
                    let row = (ch * k + ki) * k + kj;
                    let (lo, hi) = self.valid_cols(kj, w, wo);
                    let dst = &mut out[row * cols..(row + 1) * cols];
                    for oi in 0..ho {
                        let ii = oi * s + ki;
                        if ii < pad || ii - pad >= h {
                            continue;
                        }
                        let src = &xd[(ch * h + ii - pad) * w..(ch * h + ii - pad + 1) * w];
                        let d = &mut dst[oi * wo + lo..oi * wo + hi];
                        let first = lo * s + kj - pad;
                        if s == 1 {
                            d.copy_from_slice(&src[first..first + (hi - lo)]);
                        } else {
                            for (j, v) in d.iter_mut().enumerate() {
                                *v = src[first + j * s];
                            }
                        }
                    }
                }
            }
        }
    }

    fn col2im(&self, cols: &[f64], shape: &[usize], ho: usize, wo: usize) -> Tensor {
        let (c, h, w) = (shape[0], shape[1], shape[2]);
        let k = self.kernel;
        let pad = k / 2;
        let s = self.stride;
        let n = ho * wo;
        let mut dx = Tensor::zeros(shape);
        let xd = dx.data_mut();
        for ch in 0..c {
            for ki in 0..k {
                for kj in 0..k {
                    let row = (ch * k + ki) * k + kj;
                    let (lo, hi) = self.valid_cols(kj, w, wo);
                    let src = &cols[row * n..(row + 1) * n];
                    for oi in 0..ho {
                        let ii = oi * s + ki;
                        if ii < pad || ii - pad >= h {
                            continue;
                        }
                        let base = (ch * h + ii - pad) * w;
                        let first = lo * s + kj - pad;
                        let sv = &src[oi * wo + lo..oi * wo + hi];
                        if s == 1 {
                            for (d, v) in xd[base + first..base + first + (hi - lo)].iter_mut().zip(sv) {
                                *d += v;
                            }
                        } else {
                            for (j, v) in sv.iter().enumerate() {
                                xd[base + first + j * s] += v;
                            }
                        }
                    }
                }
            }
        }
        dx
    }

    fn check(&self, x: &Tensor) -> Result<()> {
        if x.shape().len() != 3 || x.dim(0) != self.in_channels {
            return Err(Error::Shape(format!(
                "conv expects [{}, H, W], got {:?}",
                self.in_channels,
                x.shape()
            )));
        }
        Ok(())
    }

    fn apply_cols(&self, cols: &[f64], ho: usize, wo: usize) -> Result<Tensor> {
        let kk = self.in_channels * self.kernel * self.kernel;
        let co = self.out_channels;
        let mut y = vec![0.0; co * ho * wo];
        gemm(co, kk, ho * wo, self.weight.value.data(), false, cols, false, 0.0, &mut y);
        Tensor::from_vec(&[co, ho, wo], y)
    }

    pub fn infer_one(&self, x: &Tensor) -> Result<Tensor> {
        self.check(x)?;
        let [_, ho, wo] = self.output_shape(x.shape());
        self.apply_cols(&self.im2col(x, ho, wo), ho, wo)
    }

    pub fn infer(&self, xs: &[Tensor]) -> Result<Vec<Tensor>> {
        xs.iter().map(|x| self.infer_one(x)).collect()
    }

    /// Caches the column matrices for [`Conv2d::backward`].
    pub fn forward(&mut self, xs: &[Tensor]) -> Result<Vec<Tensor>> {
        let mut cache = std::mem::take(&mut self.cache);
        cache.resize_with(xs.len(), Default::default);
        let mut ys = Vec::with_capacity(xs.len());
        for (x, (cols, shape)) in xs.iter().zip(cache.iter_mut()) {
            self.check(x)?;
            let [_, ho, wo] = self.output_shape(x.shape());
            self.im2col_into(x, ho, wo, cols);
            ys.push(self.apply_cols(cols, ho, wo)?);
            shape.clear();
            shape.extend_from_slice(x.shape());
        }
        self.cache = cache;
        Ok(ys)
    }

    pub fn backward(&mut self, dys: &[Tensor]) -> Vec<Tensor> {
        let kk = self.in_channels * self.kernel * self.kernel;
        let cache = std::mem::take(&mut self.cache);
        let mut dxs = Vec::with_capacity(dys.len());
        let mut dcols = Vec::new();
        for ((cols, shape), dy) in cache.iter().zip(dys) {
            let (ho, wo) = (dy.dim(1), dy.dim(2));
            let n = ho * wo;
            gemm(
                self.out_channels,
                n,
                kk,
                dy.data(),
                false,
                cols,
                true,
                1.0,
                self.weight.grad.data_mut(),
            );
            dcols.resize(kk * n, 0.0);
            gemm(
                kk,
                self.out_channels,
                n,
                self.weight.value.data(),
                true,
                dy.data(),
                false,
                0.0,
                &mut dcols,
            );
            dxs.push(self.col2im(&dcols, shape, ho, wo));
        }
        self.cache = cache;
        dxs
    }
}

impl Parameters for Conv2d {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        f(&join(prefix, "weight"), &mut self.weight);
    }
}

/// Per-channel batch normalization over every position of every map in a
/// batch. Running statistics use momentum 0.1 and the unbiased variance.
#[derive(Debug, Clone)]
pub struct BatchNorm2d {
    pub gamma: Param,
    pub beta: Param,
    pub running_mean: Param,
    pub running_var: Param,
    pub momentum: f64,
    pub eps: f64,
    cache: Option<BnCache>,
}

#[derive(Debug, Clone)]
struct BnCache {
    xhat: Vec<Tensor>,
    inv_std: Vec<f64>,
}

/// Per-channel batch statistics `(mean, biased variance, count)`.
pub fn channel_stats(xs: &[Tensor]) -> (Vec<f64>, Vec<f64>, usize) {
    let c = xs[0].dim(0);
    let mut mean = vec![0.0; c];
    let mut count = 0usize;
    for x in xs {
        let hw = x.dim(1) * x.dim(2);
        count += hw;
        for (ch, vals) in x.data().chunks(hw).enumerate() {
            mean[ch] += vals.iter().sum::<f64>();
        }
    }
    mean.iter_mut().for_each(|m| *m /= count as f64);
    let mut var = vec![0.0; c];
    for x in xs {
        let hw = x.dim(1) * x.dim(2);
        for (ch, vals) in x.data().chunks(hw).enumerate() {
            var[ch] += vals.iter().map(|v| (v - mean[ch]).powi(2)).sum::<f64>();
        }
    }
    var.iter_mut().for_each(|v| *v /= count as f64);
    (mean, var, count)
}

impl BatchNorm2d {
    pub fn new(channels: usize) -> Self {
        let mut gamma = Tensor::zeros(&[channels]);
        gamma.fill(1.0);
        let mut rv = Tensor::zeros(&[channels]);
        rv.fill(1.0);
        Self {
            gamma: Param::new(gamma),
            beta: Param::zeros(&[channels]),
            running_mean: Param::buffer(Tensor::zeros(&[channels])),
            running_var: Param::buffer(rv),
            momentum: 0.1,
            eps: 1e-5,
            cache: None,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.value.len()
    }

    /// Inference-mode affine map using the running statistics.
    pub fn infer(&self, xs: &[Tensor]) -> Vec<Tensor> {
        let g = self.gamma.value.data();
        let b = self.beta.value.data();
        let rm = self.running_mean.value.data();
        let rv = self.running_var.value.data();
        xs.iter()
            .map(|x| {
                let hw = x.dim(1) * x.dim(2);
                let mut y = x.clone();
                for (ch, vals) in y.data_mut().chunks_mut(hw).enumerate() {
                    let scale = g[ch] / (rv[ch] + self.eps).sqrt();
                    let shift = b[ch] - rm[ch] * scale;
                    vals.iter_mut().for_each(|v| *v = *v * scale + shift);
                }
                y
            })
            .collect()
    }

    pub fn forward(&mut self, xs: &[Tensor], train: bool) -> Vec<Tensor> {
        if !train {
            self.cache = None;
            return self.infer(xs);
        }
        let (mean, var, count) = channel_stats(xs);
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + self.eps).sqrt()).collect();
        let unbias = if count > 1 {
            count as f64 / (count - 1) as f64
        } else {
            1.0
        };
        let m = self.momentum;
        for ch in 0..mean.len() {
            let rm = &mut self.running_mean.value.data_mut()[ch];
            *rm = (1.0 - m) * *rm + m * mean[ch];
            let rv = &mut self.running_var.value.data_mut()[ch];
            *rv = (1.0 - m) * *rv + m * var[ch] * unbias;
        }
        let g = self.gamma.value.data();
        let b = self.beta.value.data();
        let mut xhat = Vec::with_capacity(xs.len());
        let mut ys = Vec::with_capacity(xs.len());
        for x in xs {
            let hw = x.dim(1) * x.dim(2);
            let mut xh = x.clone();
            let mut y = x.clone();
            for (ch, (hv, yv)) in xh
                .data_mut()
                .chunks_mut(hw)
                .zip(y.data_mut().chunks_mut(hw))
                .enumerate()
            {
                for (h, yy) in hv.iter_mut().zip(yv.iter_mut()) {
                    *h = (*h - mean[ch]) * inv_std[ch];
                    *yy = g[ch] * *h + b[ch];
                }
            }
            xhat.push(xh);
            ys.push(y);
        }
        self.cache = Some(BnCache { xhat, inv_std });
        ys
    }

    pub fn backward(&mut self, dys: &[Tensor]) -> Vec<Tensor> {
        let cache = self.cache.as_ref().expect("batchnorm backward without train forward");
        let c = self.channels();
        let mut dbeta = vec![0.0; c];
        let mut dgamma = vec![0.0; c];
        let mut count = 0usize;
        for (dy, xh) in dys.iter().zip(&cache.xhat) {
            let hw = dy.dim(1) * dy.dim(2);
            count += hw;
            for ch in 0..c {
                let d = &dy.data()[ch * hw..(ch + 1) * hw];
                let h = &xh.data()[ch * hw..(ch + 1) * hw];
                dbeta[ch] += d.iter().sum::<f64>();
                dgamma[ch] += d.iter().zip(h).map(|(a, b)| a * b).sum::<f64>();
            }
        }
        for ch in 0..c {
            self.beta.grad.data_mut()[ch] += dbeta[ch];
            self.gamma.grad.data_mut()[ch] += dgamma[ch];
        }
        let m = count as f64;
        let g = self.gamma.value.data();
        dys.iter()
            .zip(&cache.xhat)
            .map(|(dy, xh)| {
                let hw = dy.dim(1) * dy.dim(2);
                let mut dx = dy.clone();
                for ch in 0..c {
                    let k = g[ch] * cache.inv_std[ch] / m;
                    let h = &xh.data()[ch * hw..(ch + 1) * hw];
                    for (v, hh) in dx.data_mut()[ch * hw..(ch + 1) * hw].iter_mut().zip(h) {
                        *v = k * (m * *v - dbeta[ch] - hh * dgamma[ch]);
                    }
                }
                dx
            })
            .collect()
    }
}

impl Parameters for BatchNorm2d {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        f(&join(prefix, "gamma"), &mut self.gamma);
        f(&join(prefix, "beta"), &mut self.beta);
        f(&join(prefix, "running_mean"), &mut self.running_mean);
        f(&join(prefix, "running_var"), &mut self.running_var);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn random_maps(n: usize, shape: [usize; 3], seed: u64) -> Vec<Tensor> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let len = shape.iter().product();
                Tensor::from_vec(&shape, (0..len).map(|_| rng.gen_range(-2.0..3.0)).collect())
                    .unwrap()
            })
            .collect()
    }

    #[test]
    fn conv_output_shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let c = Conv2d::new(3, 4, 3, 2, &mut rng);
        assert_eq!(c.output_shape(&[3, 40, 7]), [4, 20, 4]);
        assert_eq!(c.output_shape(&[3, 1, 1]), [4, 1, 1]);
        let c1 = Conv2d::new(3, 4, 1, 2, &mut rng);
        assert_eq!(c1.output_shape(&[3, 5, 3]), [4, 3, 2]);
    }

    #[test]
    fn conv_matches_direct_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let conv = Conv2d::new(2, 3, 3, 2, &mut rng);
        let x = random_maps(1, [2, 5, 6], 2).pop().unwrap();
        let y = conv.infer_one(&x).unwrap();
        let w = conv.weight.value.data();
        for co in 0..3 {
            for oi in 0..y.dim(1) {
                for oj in 0..y.dim(2) {
                    let mut s = 0.0;
                    for ci in 0..2 {
                        for ki in 0..3 {
                            for kj in 0..3 {
                                let ii = (oi * 2 + ki) as isize - 1;
                                let jj = (oj * 2 + kj) as isize - 1;
                                if ii >= 0 && ii < 5 && jj >= 0 && jj < 6 {
                                    s += w[co * 18 + ci * 9 + ki * 3 + kj]
                                        * x.data()[(ci * 5 + ii as usize) * 6 + jj as usize];
                                }
                            }
                        }
                    }
                    let got = y.data()[(co * y.dim(1) + oi) * y.dim(2) + oj];
                    assert!((got - s).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn batchnorm_train_stats_match_empirical() {
        let xs = random_maps(3, [2, 4, 5], 7);
        let mut bn = BatchNorm2d::new(2);
        let ys = bn.forward(&xs, true);
        let (mean, var, _) = channel_stats(&ys);
        for ch in 0..2 {
            assert!(mean[ch].abs() < 1e-6);
            // normalized variance is var / (var + eps)
            assert!((var[ch] - 1.0).abs() < 1e-4);
        }
        let (m, v, n) = channel_stats(&xs);
        let rm = bn.running_mean.value.data();
        let rv = bn.running_var.value.data();
        for ch in 0..2 {
            assert!((rm[ch] - 0.1 * m[ch]).abs() < 1e-12);
            assert!((rv[ch] - (0.9 + 0.1 * v[ch] * n as f64 / (n - 1) as f64)).abs() < 1e-12);
        }
    }

    #[test]
    fn batchnorm_inference_is_affine_and_deterministic() {
        let xs = random_maps(2, [2, 3, 3], 9);
        let mut bn = BatchNorm2d::new(2);
        bn.forward(&xs, true);
        let a = bn.forward(&xs, false);
        let b = bn.forward(&xs, false);
        assert_eq!(a, b);
        // affine: f(x + y) - f(y) = f(x) - f(0) per channel
        let zero = vec![Tensor::zeros(&[2, 3, 3])];
        let f0 = bn.infer(&zero);
        let fx = bn.infer(&xs[..1]);
        let mut doubled = xs[0].clone();
        doubled.scale(2.0);
        let f2x = bn.infer(&[doubled]);
        for i in 0..18 {
            let lhs = f2x[0].data()[i] - f0[0].data()[i];
            let rhs = 2.0 * (fx[0].data()[i] - f0[0].data()[i]);
            assert!((lhs - rhs).abs() < 1e-9);
        }
    }
}
