use rand_chacha::ChaCha8Rng;

use super::param::{join, kaiming_uniform, orthogonal, Param, Parameters};
use super::tensor::{gemm, Tensor};
use crate::error::{Error, Result};

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Unidirectional LSTM over one sequence `[T, in] -> [T, H]`.
/// Gate layout in the stacked weights is `i, f, g, o`.
#[derive(Debug, Clone)]
pub struct Lstm {
    pub w_ih: Param,
    pub w_hh: Param,
    pub bias: Param,
    pub hidden: usize,
    cache: Option<LstmCache>,
}

#[derive(Debug, Clone)]
struct LstmCache {
    x: Tensor,
    /// post-activation gates per step, `[T, 4H]`
    gates: Vec<f64>,
    cells: Vec<f64>,
    hs: Vec<f64>,
}

impl Lstm {
    pub fn new(input: usize, hidden: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut w_hh = Vec::with_capacity(4 * hidden * hidden);
        for _ in 0..4 {
            w_hh.extend(orthogonal(hidden, rng));
        }
        Self {
            w_ih: Param::new(kaiming_uniform(&[4 * hidden, input], input, rng)),
            w_hh: Param::new(Tensor::from_vec(&[4 * hidden, hidden], w_hh).expect("shape")),
            bias: Param::zeros(&[4 * hidden]),
            hidden,
            cache: None,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w_ih.value.dim(1)
    }

    fn run(&self, x: &Tensor) -> Result<LstmCache> {
        if x.shape().len() != 2 || x.dim(1) != self.input_dim() {
            return Err(Error::Shape(format!(
                "lstm expects [T, {}], got {:?}",
                self.input_dim(),
                x.shape()
            )));
        }
        let t_len = x.dim(0);
        let h = self.hidden;
        let g4 = 4 * h;
        let mut pre = vec![0.0; t_len * g4];
        for row in pre.chunks_mut(g4) {
            row.copy_from_slice(self.bias.value.data());
        }
        gemm(t_len, self.input_dim(), g4, x.data(), false, self.w_ih.value.data(), true, 1.0, &mut pre);
        let mut gates = vec![0.0; t_len * g4];
        let mut cells = vec![0.0; t_len * h];
        let mut hs = vec![0.0; t_len * h];
        let whh = self.w_hh.value.data();
        let mut h_prev = vec![0.0; h];
        let mut c_prev = vec![0.0; h];
        for t in 0..t_len {
            let z = &mut pre[t * g4..(t + 1) * g4];
            for (zr, w) in z.iter_mut().zip(whh.chunks(h)) {
                *zr += dot(w, &h_prev);
            }
            let g = &mut gates[t * g4..(t + 1) * g4];
            for j in 0..h {
                g[j] = sigmoid(z[j]);
                g[h + j] = sigmoid(z[h + j]);
                g[2 * h + j] = z[2 * h + j].tanh();
                g[3 * h + j] = sigmoid(z[3 * h + j]);
            }
            for j in 0..h {
                let c = g[h + j] * c_prev[j] + g[j] * g[2 * h + j];
                cells[t * h + j] = c;
                hs[t * h + j] = g[3 * h + j] * c.tanh();
            }
            h_prev.copy_from_slice(&hs[t * h..(t + 1) * h]);
            c_prev.copy_from_slice(&cells[t * h..(t + 1) * h]);
        }
        Ok(LstmCache {
            x: x.clone(),
            gates,
            cells,
            hs,
        })
    }

    pub fn infer(&self, x: &Tensor) -> Result<Tensor> {
        let c = self.run(x)?;
        Tensor::from_vec(&[x.dim(0), self.hidden], c.hs)
    }

    pub fn forward(&mut self, x: &Tensor) -> Result<Tensor> {
        let c = self.run(x)?;
        let out = Tensor::from_vec(&[x.dim(0), self.hidden], c.hs.clone())?;
        self.cache = Some(c);
        Ok(out)
    }

    /// Backpropagation through time; returns `dL/dx`.
    pub fn backward(&mut self, dy: &Tensor) -> Tensor {
        let cache = self.cache.take().expect("lstm backward before forward");
        let t_len = cache.x.dim(0);
        let h = self.hidden;
        let g4 = 4 * h;
        let mut dz_all = vec![0.0; t_len * g4];
        let mut dh_next = vec![0.0; h];
        let mut dc_next = vec![0.0; h];
        let whh = self.w_hh.value.data().to_vec();
        for t in (0..t_len).rev() {
            let g = &cache.gates[t * g4..(t + 1) * g4];
            let c = &cache.cells[t * h..(t + 1) * h];
            let dz = &mut dz_all[t * g4..(t + 1) * g4];
            for j in 0..h {
                let c_prev = if t > 0 { cache.cells[(t - 1) * h + j] } else { 0.0 };
                let dh = dy.data()[t * h + j] + dh_next[j];
                let tc = c[j].tanh();
                let (i, f, gg, o) = (g[j], g[h + j], g[2 * h + j], g[3 * h + j]);
                let dc = dh * o * (1.0 - tc * tc) + dc_next[j];
                dz[j] = dc * gg * i * (1.0 - i);
                dz[h + j] = dc * c_prev * f * (1.0 - f);
                dz[2 * h + j] = dc * i * (1.0 - gg * gg);
                dz[3 * h + j] = dh * tc * o * (1.0 - o);
                dc_next[j] = dc * f;
            }
            if t > 0 {
                let h_prev = &cache.hs[(t - 1) * h..t * h];
                for (grow, &d) in self.w_hh.grad.data_mut().chunks_mut(h).zip(dz.iter()) {
                    for (gv, hv) in grow.iter_mut().zip(h_prev) {
                        *gv += d * hv;
                    }
                }
            }
            dh_next.iter_mut().for_each(|v| *v = 0.0);
            for (w, &d) in whh.chunks(h).zip(dz.iter()) {
                for (acc, wv) in dh_next.iter_mut().zip(w) {
                    *acc += d * wv;
                }
            }
        }
        let inp = self.input_dim();
        gemm(g4, t_len, inp, &dz_all, true, cache.x.data(), false, 1.0, self.w_ih.grad.data_mut());
        for row in dz_all.chunks(g4) {
            for (b, d) in self.bias.grad.data_mut().iter_mut().zip(row) {
                *b += d;
            }
        }
        let mut dx = vec![0.0; t_len * inp];
        gemm(t_len, g4, inp, &dz_all, false, self.w_ih.value.data(), false, 0.0, &mut dx);
        Tensor::from_vec(&[t_len, inp], dx).expect("shape")
    }
}

impl Parameters for Lstm {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        f(&join(prefix, "w_ih"), &mut self.w_ih);
        f(&join(prefix, "w_hh"), &mut self.w_hh);
        f(&join(prefix, "bias"), &mut self.bias);
    }
}

fn reverse_rows(x: &Tensor) -> Tensor {
    let cols = x.dim(1);
    let data: Vec<f64> = x.data().chunks(cols).rev().flatten().copied().collect();
    Tensor::from_vec(x.shape(), data).expect("shape")
}

/// Forward and backward LSTMs with outputs concatenated per step, `[T, 2H]`.
#[derive(Debug, Clone)]
pub struct BiLstm {
    pub fwd: Lstm,
    pub bwd: Lstm,
}

impl BiLstm {
    pub fn new(input: usize, hidden: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            fwd: Lstm::new(input, hidden, rng),
            bwd: Lstm::new(input, hidden, rng),
        }
    }

    pub fn hidden(&self) -> usize {
        self.fwd.hidden
    }

    fn concat(a: &Tensor, b_rev: &Tensor) -> Tensor {
        let h = a.dim(1);
        let t_len = a.dim(0);
        let b = reverse_rows(b_rev);
        let mut out = Vec::with_capacity(t_len * 2 * h);
        for t in 0..t_len {
            out.extend_from_slice(a.row(t));
            out.extend_from_slice(b.row(t));
        }
        Tensor::from_vec(&[t_len, 2 * h], out).expect("shape")
    }

    pub fn infer(&self, x: &Tensor) -> Result<Tensor> {
        let a = self.fwd.infer(x)?;
        let b = self.bwd.infer(&reverse_rows(x))?;
        Ok(Self::concat(&a, &b))
    }

    pub fn forward(&mut self, x: &Tensor) -> Result<Tensor> {
        let a = self.fwd.forward(x)?;
        let b = self.bwd.forward(&reverse_rows(x))?;
        Ok(Self::concat(&a, &b))
    }

    pub fn backward(&mut self, dy: &Tensor) -> Tensor {
        let h = self.hidden();
        let t_len = dy.dim(0);
        let mut da = Vec::with_capacity(t_len * h);
        let mut db = Vec::with_capacity(t_len * h);
        for t in 0..t_len {
            da.extend_from_slice(&dy.row(t)[..h]);
        }
        for t in (0..t_len).rev() {
            db.extend_from_slice(&dy.row(t)[h..]);
        }
        let mut dx = self
            .fwd
            .backward(&Tensor::from_vec(&[t_len, h], da).expect("shape"));
        let dx_b = reverse_rows(
            &self
                .bwd
                .backward(&Tensor::from_vec(&[t_len, h], db).expect("shape")),
        );
        dx.add_assign(&dx_b);
        dx
    }
}

impl Parameters for BiLstm {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        self.fwd.visit(&join(prefix, "fwd"), f);
        self.bwd.visit(&join(prefix, "bwd"), f);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn bilstm_backward_direction_sees_future() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let lstm = BiLstm::new(2, 3, &mut rng);
        let x = Tensor::from_vec(&[3, 2], vec![0.1, 0.2, 0.3, -0.1, 0.5, 0.9]).unwrap();
        let mut x2 = x.clone();
        x2.data_mut()[5] = -0.7; // change only the last step
        let a = lstm.infer(&x).unwrap();
        let b = lstm.infer(&x2).unwrap();
        // forward half of step 0 unchanged, backward half changed
        assert_eq!(&a.row(0)[..3], &b.row(0)[..3]);
        assert_ne!(&a.row(0)[3..], &b.row(0)[3..]);
    }

    #[test]
    fn empty_sequence_is_empty_output() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let lstm = BiLstm::new(2, 3, &mut rng);
        let y = lstm.infer(&Tensor::zeros(&[0, 2])).unwrap();
        assert_eq!(y.shape(), &[0, 6]);
    }
}
