use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::Label;
use crate::error::{Error, Result};
use crate::nnet::loss::{cross_entropy, cross_entropy_grad};
use crate::nnet::param::join;
use crate::nnet::{
    softmax, Checkpoint, Differentiable, Linear, OversampleStream, Param, Parameters, Relu, Sgd, Tensor,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LateMethod {
    Fcnn,
    Logreg,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LateFusionConfig {
    pub hidden: usize,
    pub lr: f64,
    pub momentum: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for LateFusionConfig {
    fn default() -> Self {
        Self {
            hidden: 16,
            lr: 0.05,
            momentum: 0.9,
            epochs: 30,
            batch_size: 32,
            seed: 0,
        }
    }
}

/// Learned combiner over the concatenated `[A1, T1]` logit pairs.
#[derive(Debug, Clone)]
pub struct LateFusion {
    pub method: LateMethod,
    pub first: Linear,
    pub second: Option<Linear>,
    relu: Relu,
}

impl LateFusion {
    pub fn new(method: LateMethod, hidden: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        match method {
            LateMethod::Fcnn => Self {
                method,
                first: Linear::new(4, hidden, &mut rng),
                second: Some(Linear::new(hidden, 2, &mut rng)),
                relu: Relu::default(),
            },
            LateMethod::Logreg => Self {
                method,
                first: Linear::new(4, 2, &mut rng),
                second: None,
                relu: Relu::default(),
            },
        }
    }

    pub fn hidden(&self) -> usize {
        match &self.second {
            Some(_) => self.first.out_dim(),
            None => 0,
        }
    }

    pub fn to_checkpoint(&mut self) -> Checkpoint {
        let mut ck = Checkpoint::from_model(self);
        let code = match self.method {
            LateMethod::Fcnn => 0,
            LateMethod::Logreg => 1,
        };
        ck.set_meta_u64("late.method", code);
        ck.set_meta_u64("late.hidden", self.hidden() as u64);
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let method = match ck.meta_u64("late.method")? {
            0 => LateMethod::Fcnn,
            1 => LateMethod::Logreg,
            c => return Err(Error::Checkpoint(format!("unknown late fusion method code {c}"))),
        };
        let hidden = ck.meta_u64("late.hidden")? as usize;
        if method == LateMethod::Fcnn && hidden == 0 {
            return Err(Error::Checkpoint("late fusion hidden size is zero".into()));
        }
        let mut model = Self::new(method, hidden.max(1), 0);
        ck.load_into(&mut model, "")?;
        Ok(model)
    }

    pub fn infer(&self, x: &Tensor) -> Result<Tensor> {
        let h = self.first.infer(x)?;
        match &self.second {
            Some(l) => l.infer(&Relu::apply(&h)),
            None => Ok(h),
        }
    }

    pub fn forward(&mut self, x: &Tensor) -> Result<Tensor> {
        let h = self.first.forward(x)?;
        match self.second.as_mut() {
            Some(l) => {
                let a = self.relu.forward_one(&h);
                l.forward(&a)
            }
            None => Ok(h),
        }
    }

    pub fn backward(&mut self, dy: &Tensor) -> Tensor {
        let dh = match self.second.as_mut() {
            Some(l) => {
                let da = l.backward(dy);
                self.relu.backward_one(&da)
            }
            None => dy.clone(),
        };
        self.first.backward(&dh)
    }

    /// `p_I` per row of `[N, 4]` inputs.
    pub fn predict(&self, inputs: &[[f64; 4]]) -> Result<Vec<f64>> {
        if inputs.is_empty() {
            return Ok(Vec::new());
        }
        let y = self.infer(&stack(inputs)?)?;
        Ok((0..inputs.len()).map(|i| softmax(y.row(i))[0]).collect())
    }

    fn batch_loss_grad(&mut self, x: &Tensor, labels: &[usize]) -> Result<(f64, Tensor)> {
        let y = self.forward(x)?;
        let n = labels.len() as f64;
        let mut dy = Tensor::zeros(y.shape());
        let mut loss = 0.0;
        for (i, &c) in labels.iter().enumerate() {
            loss += cross_entropy(y.row(i), c)?;
            for (d, g) in dy.row_mut(i).iter_mut().zip(cross_entropy_grad(y.row(i), c)) {
                *d = g / n;
            }
        }
        let dx = self.backward(&dy);
        Ok((loss / n, dx))
    }
}

impl Parameters for LateFusion {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        self.first.visit(&join(prefix, "first"), f);
        if let Some(l) = self.second.as_mut() {
            l.visit(&join(prefix, "second"), f);
        }
    }
}

/// Input rows are `[N, 4]`; targets alternate I, O, I, ...
impl Differentiable for LateFusion {
    fn loss(&mut self, input: &Tensor) -> Result<f64> {
        let y = self.infer(input)?;
        let n = input.dim(0);
        let mut s = 0.0;
        for i in 0..n {
            s += cross_entropy(y.row(i), i % 2)?;
        }
        Ok(s / n as f64)
    }

    fn loss_and_grad(&mut self, input: &Tensor) -> Result<(f64, Tensor)> {
        self.zero_grad();
        let labels: Vec<usize> = (0..input.dim(0)).map(|i| i % 2).collect();
        self.batch_loss_grad(input, &labels)
    }
}

fn stack(rows: &[[f64; 4]]) -> Result<Tensor> {
    Tensor::from_vec(&[rows.len(), 4], rows.iter().flatten().copied().collect())
}

/// Packs aligned acoustic and lexical logits into `[A_I, A_O, T_I, T_O]` rows.
pub fn pack_logits(acoustic: &[[f64; 2]], lexical: &[[f64; 2]]) -> Result<Vec<[f64; 4]>> {
    if acoustic.len() != lexical.len() {
        return Err(Error::Shape(format!(
            "late fusion streams differ: {} acoustic vs {} lexical",
            acoustic.len(),
            lexical.len()
        )));
    }
    Ok(acoustic
        .iter()
        .zip(lexical)
        .map(|(a, t)| [a[0], a[1], t[0], t[1]])
        .collect())
}

/// Cross-entropy training with class-balanced oversampling; one epoch draws
/// as many samples as there are training rows.
pub fn train_late_fusion(
    method: LateMethod,
    inputs: &[[f64; 4]],
    labels: &[Label],
    config: &LateFusionConfig,
) -> Result<LateFusion> {
    if inputs.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} inputs vs {} labels",
            inputs.len(),
            labels.len()
        )));
    }
    if config.batch_size == 0 || config.hidden == 0 {
        return Err(Error::InvalidArgument("late fusion sizes must be positive".into()));
    }
    let positive: Vec<bool> = labels.iter().map(|l| l.is_ec()).collect();
    let mut stream = OversampleStream::new(&positive, config.seed)?;
    let mut model = LateFusion::new(method, config.hidden, config.seed);
    let mut opt = Sgd::new(config.lr, config.momentum);
    let per_epoch = inputs.len().max(config.batch_size);
    for _ in 0..config.epochs {
        let mut drawn = 0;
        while drawn < per_epoch {
            let b = config.batch_size.min(per_epoch - drawn);
            let idx: Vec<usize> = stream.by_ref().take(b).collect();
            let rows: Vec<[f64; 4]> = idx.iter().map(|&i| inputs[i]).collect();
            let ys: Vec<usize> = idx.iter().map(|&i| labels[i].index()).collect();
            model.zero_grad();
            let (loss, _) = model.batch_loss_grad(&stack(&rows)?, &ys)?;
            if !loss.is_finite() {
                return Err(Error::NonFinite("late fusion loss".into()));
            }
            opt.step(&mut model)?;
            drawn += b;
        }
    }
    Ok(model)
}

pub fn predict_late_fusion(model: &LateFusion, inputs: &[[f64; 4]]) -> Result<Vec<f64>> {
    model.predict(inputs)
}
