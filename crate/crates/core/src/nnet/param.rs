use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::tensor::Tensor;

/// A named value with its accumulated gradient. Non-trainable parameters
/// (running statistics) are persisted but never touched by the optimizer.
#[derive(Debug, Clone)]
pub struct Param {
    pub value: Tensor,
    pub grad: Tensor,
    pub trainable: bool,
}

impl Param {
    pub fn new(value: Tensor) -> Self {
        let grad = Tensor::zeros(value.shape());
        Self {
            value,
            grad,
            trainable: true,
        }
    }

    pub fn buffer(value: Tensor) -> Self {
        let mut p = Self::new(value);
        p.trainable = false;
        p
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::new(Tensor::zeros(shape))
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }
}

/// Anything that owns parameters. `visit` walks them in a fixed order with
/// hierarchical names; that order defines optimizer state and checkpoints.
pub trait Parameters {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param));

    fn zero_grad(&mut self) {
        self.visit("", &mut |_, p| p.zero_grad());
    }

    fn param_count(&mut self) -> usize {
        let mut n = 0;
        self.visit("", &mut |_, p| {
            if p.trainable {
                n += p.value.len()
            }
        });
        n
    }

    /// Snapshot of every parameter value (trainable or not), in visit order.
    fn snapshot(&mut self) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        self.visit("", &mut |name, p| out.push((name.to_string(), p.value.clone())));
        out
    }

    /// Restore values captured by [`Parameters::snapshot`].
    fn restore(&mut self, snap: &[(String, Tensor)]) {
        let mut i = 0;
        self.visit("", &mut |name, p| {
            debug_assert_eq!(snap[i].0, name);
            p.value = snap[i].1.clone();
            i += 1;
        });
    }

    fn grad_norm(&mut self) -> f64 {
        let mut s = 0.0;
        self.visit("", &mut |_, p| {
            if p.trainable {
                s += p.grad.sum_sq()
            }
        });
        s.sqrt()
    }

    fn clip_grad_norm(&mut self, max_norm: f64) {
        let norm = self.grad_norm();
        if norm > max_norm && norm.is_finite() {
            let s = max_norm / norm;
            self.visit("", &mut |_, p| {
                if p.trainable {
                    p.grad.scale(s)
                }
            });
        }
    }
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

/// Kaiming-uniform initialization for ReLU fan-in `fan_in`.
pub fn kaiming_uniform(shape: &[usize], fan_in: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let bound = (6.0 / fan_in.max(1) as f64).sqrt();
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(-bound..bound)).collect();
    Tensor::from_vec(shape, data).expect("shape")
}

/// Random orthogonal `n × n` matrix (Gram-Schmidt on a Gaussian draw).
pub fn orthogonal(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    loop {
        let mut m: Vec<f64> = (0..n * n).map(|_| rng.sample(StandardNormal)).collect();
        let mut ok = true;
        for i in 0..n {
            for j in 0..i {
                let dot: f64 = (0..n).map(|k| m[i * n + k] * m[j * n + k]).sum();
                for k in 0..n {
                    m[i * n + k] -= dot * m[j * n + k];
                }
            }
            let norm: f64 = (0..n).map(|k| m[i * n + k].powi(2)).sum::<f64>().sqrt();
            if norm < 1e-10 {
                ok = false;
                break;
            }
            for k in 0..n {
                m[i * n + k] /= norm;
            }
        }
        if ok {
            return m;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn orthogonal_rows_are_orthonormal() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 6;
        let m = orthogonal(n, &mut rng);
        for i in 0..n {
            for j in 0..n {
                let dot: f64 = (0..n).map(|k| m[i * n + k] * m[j * n + k]).sum();
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((dot - want).abs() < 1e-10);
            }
        }
    }
}
