use rand_chacha::ChaCha8Rng;

use super::layers::{softmax, Linear};
use super::param::{join, Param, Parameters};
use super::tensor::{gemm, Tensor};
use crate::error::Result;

/// Scaled dot-product self-attention over one sequence `[T, d] -> [T, d]`,
/// with learned query, key and value projections of width `d`. The key
/// projection has no bias: a shared key offset cancels inside the softmax.
/// Returns the attended context only; callers add any residual.
#[derive(Debug, Clone)]
pub struct SelfAttention {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    cache: Option<AttnCache>,
}

#[derive(Debug, Clone)]
struct AttnCache {
    q: Tensor,
    k: Tensor,
    v: Tensor,
    weights: Vec<f64>,
}

impl SelfAttention {
    pub fn new(dim: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            query: Linear::new(dim, dim, rng),
            key: Linear::without_bias(dim, dim, rng),
            value: Linear::new(dim, dim, rng),
            cache: None,
        }
    }

    pub fn dim(&self) -> usize {
        self.query.in_dim()
    }

    fn attend(q: &Tensor, k: &Tensor, v: &Tensor) -> (Vec<f64>, Tensor) {
        let (t_len, d) = (q.dim(0), q.dim(1));
        let scale = 1.0 / (d as f64).sqrt();
        let mut scores = vec![0.0; t_len * t_len];
        gemm(t_len, d, t_len, q.data(), false, k.data(), true, 0.0, &mut scores);
        let mut weights = Vec::with_capacity(t_len * t_len);
        for row in scores.chunks(t_len.max(1)) {
            let scaled: Vec<f64> = row.iter().map(|s| s * scale).collect();
            weights.extend(softmax(&scaled));
        }
        let mut ctx = vec![0.0; t_len * d];
        gemm(t_len, t_len, d, &weights, false, v.data(), false, 0.0, &mut ctx);
        (weights, Tensor::from_vec(&[t_len, d], ctx).expect("shape"))
    }

    pub fn infer(&self, x: &Tensor) -> Result<Tensor> {
        let q = self.query.infer(x)?;
        let k = self.key.infer(x)?;
        let v = self.value.infer(x)?;
        Ok(Self::attend(&q, &k, &v).1)
    }

    pub fn forward(&mut self, x: &Tensor) -> Result<Tensor> {
        let q = self.query.forward(x)?;
        let k = self.key.forward(x)?;
        let v = self.value.forward(x)?;
        let (weights, ctx) = Self::attend(&q, &k, &v);
        self.cache = Some(AttnCache { q, k, v, weights });
        Ok(ctx)
    }

    pub fn backward(&mut self, dctx: &Tensor) -> Tensor {
        let c = self.cache.take().expect("attention backward before forward");
        let (t_len, d) = (c.q.dim(0), c.q.dim(1));
        let scale = 1.0 / (d as f64).sqrt();
        // dA = dC V^T, dV = A^T dC
        let mut da = vec![0.0; t_len * t_len];
        gemm(t_len, d, t_len, dctx.data(), false, c.v.data(), true, 0.0, &mut da);
        let mut dv = vec![0.0; t_len * d];
        gemm(t_len, t_len, d, &c.weights, true, dctx.data(), false, 0.0, &mut dv);
        // softmax backward per row, folding in the score scale
        let mut ds = vec![0.0; t_len * t_len];
        for i in 0..t_len {
            let a = &c.weights[i * t_len..(i + 1) * t_len];
            let g = &da[i * t_len..(i + 1) * t_len];
            let dot: f64 = a.iter().zip(g).map(|(x, y)| x * y).sum();
            for j in 0..t_len {
                ds[i * t_len + j] = a[j] * (g[j] - dot) * scale;
            }
        }
        let mut dq = vec![0.0; t_len * d];
        gemm(t_len, t_len, d, &ds, false, c.k.data(), false, 0.0, &mut dq);
        let mut dk = vec![0.0; t_len * d];
        gemm(t_len, t_len, d, &ds, true, c.q.data(), false, 0.0, &mut dk);
        let shape = [t_len, d];
        let mut dx = self
            .query
            .backward(&Tensor::from_vec(&shape, dq).expect("shape"));
        dx.add_assign(&self.key.backward(&Tensor::from_vec(&shape, dk).expect("shape")));
        dx.add_assign(&self.value.backward(&Tensor::from_vec(&shape, dv).expect("shape")));
        dx
    }
}

impl Parameters for SelfAttention {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        self.query.visit(&join(prefix, "query"), f);
        self.key.visit(&join(prefix, "key"), f);
        self.value.visit(&join(prefix, "value"), f);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn single_token_attends_to_itself() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let attn = SelfAttention::new(3, &mut rng);
        let x = Tensor::from_vec(&[1, 3], vec![0.3, -0.2, 0.9]).unwrap();
        let ctx = attn.infer(&x).unwrap();
        let v = attn.value.infer(&x).unwrap();
        for (a, b) in ctx.data().iter().zip(v.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
