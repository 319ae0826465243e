//! Central finite-difference verification of analytic gradients.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::attention::SelfAttention;
use super::conv::{BatchNorm2d, Conv2d};
use super::layers::{global_avg_pool, global_avg_pool_backward, Linear, Relu};
use super::loss::{cross_entropy, cross_entropy_grad, kl_from_logits};
use super::lstm::{BiLstm, Lstm};
use super::param::{Param, Parameters};
use super::tensor::Tensor;
use crate::error::Result;

/// A model reduced to a scalar loss of one input tensor.
pub trait Differentiable: Parameters {
    fn loss(&mut self, input: &Tensor) -> Result<f64>;

    /// Zeroes and refills parameter gradients; returns `dL/dinput`.
    fn loss_and_grad(&mut self, input: &Tensor) -> Result<(f64, Tensor)>;
}

#[derive(Debug, Clone)]
pub struct GradCheckConfig {
    pub step: f64,
    /// Check every coordinate when there are at most this many.
    pub exhaustive_limit: usize,
    /// Otherwise check this many seeded random coordinates (at least 200).
    pub sample_size: usize,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            step: 1e-5,
            exhaustive_limit: 1500,
            sample_size: 300,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub checked: usize,
    pub worst: String,
}

impl GradCheckReport {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_rel_error < tolerance
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

#[derive(Clone, Copy)]
enum Coord {
    Param(usize, usize),
    Input(usize),
}

fn param_sizes(m: &mut dyn Parameters) -> Vec<(String, usize)> {
    let mut out = Vec::new();
    m.visit("", &mut |name, p| {
        if p.trainable {
            out.push((name.to_string(), p.value.len()))
        }
    });
    out
}

fn with_param(m: &mut dyn Parameters, which: usize, f: &mut dyn FnMut(&mut Param)) {
    let mut i = 0;
    m.visit("", &mut |_, p| {
        if p.trainable {
            if i == which {
                f(p);
            }
            i += 1;
        }
    });
}

/// Compares analytic gradients of `model` at `input` against central
/// differences for parameters and input coordinates.
pub fn grad_check<M: Differentiable>(
    model: &mut M,
    input: &Tensor,
    config: &GradCheckConfig,
) -> Result<GradCheckReport> {
    let (_, dinput) = model.loss_and_grad(input)?;
    let sizes = param_sizes(model);
    let mut analytic_params: Vec<Vec<f64>> = Vec::new();
    model.visit("", &mut |_, p| {
        if p.trainable {
            analytic_params.push(p.grad.data().to_vec())
        }
    });

    let mut coords = Vec::new();
    for (pi, (_, n)) in sizes.iter().enumerate() {
        coords.extend((0..*n).map(|e| Coord::Param(pi, e)));
    }
    coords.extend((0..input.len()).map(Coord::Input));
    if coords.len() > config.exhaustive_limit {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let k = config.sample_size.max(200).min(coords.len());
        let mut picked: Vec<usize> = sample(&mut rng, coords.len(), k).into_vec();
        picked.sort_unstable();
        coords = picked.into_iter().map(|i| coords[i]).collect();
    }

    let h = config.step;
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        checked: 0,
        worst: String::new(),
    };
    for c in coords {
        let (analytic, numeric, label) = match c {
            Coord::Param(pi, e) => {
                let mut orig = 0.0;
                with_param(model, pi, &mut |p| {
                    orig = p.value.data()[e];
                    p.value.data_mut()[e] = orig + h;
                });
                let plus = model.loss(input)?;
                with_param(model, pi, &mut |p| p.value.data_mut()[e] = orig - h);
                let minus = model.loss(input)?;
                with_param(model, pi, &mut |p| p.value.data_mut()[e] = orig);
                (
                    analytic_params[pi][e],
                    (plus - minus) / (2.0 * h),
                    format!("{}[{}]", sizes[pi].0, e),
                )
            }
            Coord::Input(e) => {
                let mut x = input.clone();
                x.data_mut()[e] += h;
                let plus = model.loss(&x)?;
                x.data_mut()[e] -= 2.0 * h;
                let minus = model.loss(&x)?;
                (dinput.data()[e], (plus - minus) / (2.0 * h), format!("input[{e}]"))
            }
        };
        let err = relative_error(analytic, numeric);
        report.checked += 1;
        if err > report.max_rel_error || report.worst.is_empty() {
            report.max_rel_error = report.max_rel_error.max(err);
            if err >= report.max_rel_error {
                report.worst = label;
            }
        }
    }
    Ok(report)
}

/// Fixed random weights used to reduce a layer output to a scalar loss.
pub fn projection(len: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

fn project(y: &[f64], seed: u64) -> (f64, Vec<f64>) {
    let w = projection(y.len(), seed);
    (y.iter().zip(&w).map(|(a, b)| a * b).sum(), w)
}

/// Splits `[N, C, H, W]` into per-sample maps.
pub fn split_maps(x: &Tensor) -> Vec<Tensor> {
    let s = x.shape();
    let per = s[1] * s[2] * s[3];
    x.data()
        .chunks(per)
        .map(|c| Tensor::from_vec(&s[1..], c.to_vec()).expect("shape"))
        .collect()
}

fn stack_maps(xs: &[Tensor]) -> Tensor {
    let mut shape = vec![xs.len()];
    shape.extend_from_slice(xs[0].shape());
    Tensor::from_vec(&shape, xs.iter().flat_map(|x| x.data().to_vec()).collect()).expect("shape")
}

fn flat(xs: &[Tensor]) -> Vec<f64> {
    xs.iter().flat_map(|x| x.data().to_vec()).collect()
}

fn unflat(g: &[f64], like: &[Tensor]) -> Vec<Tensor> {
    let mut off = 0;
    like.iter()
        .map(|x| {
            let t = Tensor::from_vec(x.shape(), g[off..off + x.len()].to_vec()).expect("shape");
            off += x.len();
            t
        })
        .collect()
}

macro_rules! probe_params {
    ($probe:ty, $field:ident) => {
        impl Parameters for $probe {
            fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
                self.$field.visit(prefix, f);
            }
        }
    };
}

/// `L = <w, Linear(x)>` over `[N, in]` inputs.
pub struct LinearProbe {
    pub layer: Linear,
}
probe_params!(LinearProbe, layer);

impl Differentiable for LinearProbe {
    fn loss(&mut self, x: &Tensor) -> Result<f64> {
        Ok(project(self.layer.infer(x)?.data(), 1).0)
    }

    fn loss_and_grad(&mut self, x: &Tensor) -> Result<(f64, Tensor)> {
        self.zero_grad();
        let y = self.layer.forward(x)?;
        let (l, w) = project(y.data(), 1);
        let dy = Tensor::from_vec(y.shape(), w)?;
        Ok((l, self.layer.backward(&dy)))
    }
}

/// `L = <w, Conv(x)>` over `[N, C, H, W]` inputs.
pub struct ConvProbe {
    pub layer: Conv2d,
}
probe_params!(ConvProbe, layer);

impl Differentiable for ConvProbe {
    fn loss(&mut self, x: &Tensor) -> Result<f64> {
        Ok(project(&flat(&self.layer.infer(&split_maps(x))?), 2).0)
    }

    fn loss_and_grad(&mut self, x: &Tensor) -> Result<(f64, Tensor)> {
        self.zero_grad();
        let ys = self.layer.forward(&split_maps(x))?;
        let (l, w) = project(&flat(&ys), 2);
        let dxs = self.layer.backward(&unflat(&w, &ys));
        Ok((l, stack_maps(&dxs)))
    }
}

/// `L = <w, BN_train(x)>`; batch statistics depend on the whole batch.
pub struct BatchNormProbe {
    pub layer: BatchNorm2d,
}
probe_params!(BatchNormProbe, layer);

impl Differentiable for BatchNormProbe {
    fn loss(&mut self, x: &Tensor) -> Result<f64> {
        let mut bn = self.layer.clone();
        Ok(project(&flat(&bn.forward(&split_maps(x), true)), 3).0)
    }

    fn loss_and_grad(&mut self, x: &Tensor) -> Result<(f64, Tensor)> {
        self.zero_grad();
        let ys = self.layer.forward(&split_maps(x), true);
        let (l, w) = project(&flat(&ys), 3);
        let dxs = self.layer.backward(&unflat(&w, &ys));
        Ok((l, stack_maps(&dxs)))
    }
}

/// `L = <w, relu(x)>` followed by global average pooling, `[N, C, H, W]`.
pub struct ReluPoolProbe;

impl Parameters for ReluPoolProbe {
    fn visit(&mut self, _: &str, _: &mut dyn FnMut(&str, &mut Param)) {}
}

impl Differentiable for ReluPoolProbe {
    fn loss(&mut self, x: &Tensor) -> Result<f64> {
        let ys: Vec<Tensor> = split_maps(x).iter().map(Relu::apply).collect();
        Ok(project(global_avg_pool(&ys).data(), 4).0)
    }

    fn loss_and_grad(&mut self, x: &Tensor) -> Result<(f64, Tensor)> {
        let maps = split_maps(x);
        let mut relu = Relu::default();
        let ys = relu.forward(&maps);
        let pooled = global_avg_pool(&ys);
        let (l, w) = project(pooled.data(), 4);
        let shapes: Vec<Vec<usize>> = ys.iter().map(|y| y.shape().to_vec()).collect();
        let dys = global_avg_pool_backward(&Tensor::from_vec(pooled.shape(), w)?, &shapes);
        Ok((l, stack_maps(&relu.backward(&dys))))
    }
}

/// `L = <w, LSTM(x)>` over one `[T, in]` sequence.
pub struct LstmProbe {
    pub layer: Lstm,
}
probe_params!(LstmProbe, layer);

impl Differentiable for LstmProbe {
    fn loss(&mut self, x: &Tensor) -> Result<f64> {
        Ok(project(self.layer.infer(x)?.data(), 5).0)
    }

    fn loss_and_grad(&mut self, x: &Tensor) -> Result<(f64, Tensor)> {
        self.zero_grad();
        let y = self.layer.forward(x)?;
        let (l, w) = project(y.data(), 5);
        Ok((l, self.layer.backward(&Tensor::from_vec(y.shape(), w)?)))
    }
}

pub struct BiLstmProbe {
    pub layer: BiLstm,
}
probe_params!(BiLstmProbe, layer);

impl Differentiable for BiLstmProbe {
    fn loss(&mut self, x: &Tensor) -> Result<f64> {
        Ok(project(self.layer.infer(x)?.data(), 6).0)
    }

    fn loss_and_grad(&mut self, x: &Tensor) -> Result<(f64, Tensor)> {
        self.zero_grad();
        let y = self.layer.forward(x)?;
        let (l, w) = project(y.data(), 6);
        Ok((l, self.layer.backward(&Tensor::from_vec(y.shape(), w)?)))
    }
}

pub struct AttentionProbe {
    pub layer: SelfAttention,
}
probe_params!(AttentionProbe, layer);

impl Differentiable for AttentionProbe {
    fn loss(&mut self, x: &Tensor) -> Result<f64> {
        Ok(project(self.layer.infer(x)?.data(), 7).0)
    }

    fn loss_and_grad(&mut self, x: &Tensor) -> Result<(f64, Tensor)> {
        self.zero_grad();
        let y = self.layer.forward(x)?;
        let (l, w) = project(y.data(), 7);
        Ok((l, self.layer.backward(&Tensor::from_vec(y.shape(), w)?)))
    }
}

/// Mean cross-entropy of softmax over `[N, K]` logits against fixed classes.
pub struct SoftmaxCrossEntropyProbe {
    pub classes: Vec<usize>,
}

impl Parameters for SoftmaxCrossEntropyProbe {
    fn visit(&mut self, _: &str, _: &mut dyn FnMut(&str, &mut Param)) {}
}

impl Differentiable for SoftmaxCrossEntropyProbe {
    fn loss(&mut self, x: &Tensor) -> Result<f64> {
        Ok(self.loss_and_grad(x)?.0)
    }

    fn loss_and_grad(&mut self, x: &Tensor) -> Result<(f64, Tensor)> {
        let k = x.dim(1);
        let n = x.dim(0) as f64;
        let mut loss = 0.0;
        let mut grad = Vec::with_capacity(x.len());
        for (row, &c) in x.data().chunks(k).zip(&self.classes) {
            loss += cross_entropy(row, c)? / n;
            grad.extend(cross_entropy_grad(row, c).into_iter().map(|g| g / n));
        }
        Ok((loss, Tensor::from_vec(x.shape(), grad)?))
    }
}

/// Mean KL divergence of softmax over `[N, K]` logits from fixed targets.
pub struct SoftmaxKlProbe {
    pub targets: Vec<Vec<f64>>,
}

impl Parameters for SoftmaxKlProbe {
    fn visit(&mut self, _: &str, _: &mut dyn FnMut(&str, &mut Param)) {}
}

impl Differentiable for SoftmaxKlProbe {
    fn loss(&mut self, x: &Tensor) -> Result<f64> {
        Ok(self.loss_and_grad(x)?.0)
    }

    fn loss_and_grad(&mut self, x: &Tensor) -> Result<(f64, Tensor)> {
        let k = x.dim(1);
        let n = x.dim(0) as f64;
        let mut loss = 0.0;
        let mut grad = Vec::with_capacity(x.len());
        for (row, t) in x.data().chunks(k).zip(&self.targets) {
            let (l, g) = kl_from_logits(t, row);
            loss += l / n;
            grad.extend(g.into_iter().map(|v| v / n));
        }
        Ok((loss, Tensor::from_vec(x.shape(), grad)?))
    }
}

/// Seeded uniform(-1, 1) tensor for gradient-check inputs.
pub fn random_input(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).expect("shape")
}
