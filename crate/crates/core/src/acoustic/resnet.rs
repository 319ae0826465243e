use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nnet::layers::{global_avg_pool, global_avg_pool_backward};
use crate::nnet::param::{join, Param, Parameters};
use crate::nnet::{BatchNorm2d, Conv2d, Linear, Relu, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ResNetConfig {
    pub stage_channels: [usize; 4],
    pub blocks_per_stage: usize,
    pub embedding_dim: usize,
    pub n_classes: usize,
    pub include_initial_maxpool: bool,
    pub in_channels: usize,
}

impl Default for ResNetConfig {
    fn default() -> Self {
        Self {
            stage_channels: [64, 128, 256, 512],
            blocks_per_stage: 2,
            embedding_dim: 512,
            n_classes: 2,
            include_initial_maxpool: false,
            in_channels: 3,
        }
    }
}

impl ResNetConfig {
    /// Reduced widths for CPU-scale runs.
    pub fn desk() -> Self {
        Self {
            stage_channels: [16, 32, 64, 128],
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.include_initial_maxpool {
            return Err(Error::InvalidArgument(
                "the initial max-pool must stay disabled".into(),
            ));
        }
        if self.stage_channels.contains(&0)
            || self.blocks_per_stage == 0
            || self.embedding_dim == 0
            || self.in_channels == 0
        {
            return Err(Error::InvalidArgument("resnet sizes must be positive".into()));
        }
        if self.n_classes != 2 {
            return Err(Error::InvalidArgument("the classifier is binary (I/O)".into()));
        }
        Ok(())
    }
}

fn add_maps(a: &mut [Tensor], b: &[Tensor]) {
    for (x, y) in a.iter_mut().zip(b) {
        x.add_assign(y);
    }
}

/// conv-BN-ReLU-conv-BN plus identity or 1x1 projection skip, then ReLU.
#[derive(Debug, Clone)]
pub struct BasicBlock {
    pub conv1: Conv2d,
    pub bn1: BatchNorm2d,
    pub conv2: Conv2d,
    pub bn2: BatchNorm2d,
    pub projection: Option<(Conv2d, BatchNorm2d)>,
    relu1: Relu,
    relu_out: Relu,
}

impl BasicBlock {
    pub fn new(cin: usize, cout: usize, stride: usize, rng: &mut ChaCha8Rng) -> Self {
        let projection = (stride != 1 || cin != cout)
            .then(|| (Conv2d::new(cin, cout, 1, stride, rng), BatchNorm2d::new(cout)));
        Self {
            conv1: Conv2d::new(cin, cout, 3, stride, rng),
            bn1: BatchNorm2d::new(cout),
            conv2: Conv2d::new(cout, cout, 3, 1, rng),
            bn2: BatchNorm2d::new(cout),
            projection,
            relu1: Relu::default(),
            relu_out: Relu::default(),
        }
    }

    /// Inference output together with the (projected) skip input.
    pub fn infer_with_skip(&self, xs: &[Tensor]) -> Result<(Vec<Tensor>, Vec<Tensor>)> {
        let h = self.bn1.infer(&self.conv1.infer(xs)?);
        let h: Vec<Tensor> = h.iter().map(Relu::apply).collect();
        let mut h = self.bn2.infer(&self.conv2.infer(&h)?);
        let skip = match &self.projection {
            Some((c, b)) => b.infer(&c.infer(xs)?),
            None => xs.to_vec(),
        };
        add_maps(&mut h, &skip);
        Ok((h.iter().map(Relu::apply).collect(), skip))
    }

    pub fn infer(&self, xs: &[Tensor]) -> Result<Vec<Tensor>> {
        Ok(self.infer_with_skip(xs)?.0)
    }

    pub fn forward(&mut self, xs: &[Tensor], train: bool) -> Result<Vec<Tensor>> {
        let h = self.conv1.forward(xs)?;
        let h = self.bn1.forward(&h, train);
        let h = self.relu1.forward(&h);
        let h = self.conv2.forward(&h)?;
        let mut h = self.bn2.forward(&h, train);
        let skip = match &mut self.projection {
            Some((c, b)) => {
                let s = c.forward(xs)?;
                b.forward(&s, train)
            }
            None => xs.to_vec(),
        };
        add_maps(&mut h, &skip);
        Ok(self.relu_out.forward(&h))
    }

    pub fn backward(&mut self, dys: &[Tensor]) -> Vec<Tensor> {
        let d = self.relu_out.backward(dys);
        let dh = self.bn2.backward(&d);
        let dh = self.conv2.backward(&dh);
        let dh = self.relu1.backward(&dh);
        let dh = self.bn1.backward(&dh);
        let mut dx = self.conv1.backward(&dh);
        let ds = match &mut self.projection {
            Some((c, b)) => {
                let t = b.backward(&d);
                c.backward(&t)
            }
            None => d,
        };
        add_maps(&mut dx, &ds);
        dx
    }

    /// Zeroes the weights feeding the residual branch output.
    pub fn zero_residual(&mut self) {
        self.conv1.weight.value.fill(0.0);
        self.conv2.weight.value.fill(0.0);
    }
}

impl Parameters for BasicBlock {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        self.conv1.visit(&join(prefix, "conv1"), f);
        self.bn1.visit(&join(prefix, "bn1"), f);
        self.conv2.visit(&join(prefix, "conv2"), f);
        self.bn2.visit(&join(prefix, "bn2"), f);
        if let Some((c, b)) = &mut self.projection {
            c.visit(&join(prefix, "proj_conv"), f);
            b.visit(&join(prefix, "proj_bn"), f);
        }
    }
}

/// Output of a forward pass over a batch of maps.
#[derive(Debug, Clone)]
pub struct ResNetOutput {
    /// `[N, 2]`, class order `[I, O]`.
    pub logits: Tensor,
    /// `[N, embedding_dim]`, post-ReLU embedding layer.
    pub embedding: Tensor,
}

/// ResNet-18 style classifier/encoder over `[C, 40, T]` maps with global
/// average pooling, so any `T >= 1` is accepted.
#[derive(Debug, Clone)]
pub struct ResNet {
    pub config: ResNetConfig,
    pub stem: Conv2d,
    pub stem_bn: BatchNorm2d,
    pub blocks: Vec<BasicBlock>,
    pub embed: Linear,
    pub head: Linear,
    frozen: bool,
    stem_relu: Relu,
    embed_relu: Relu,
    pooled_shapes: Vec<Vec<usize>>,
}

impl ResNet {
    pub fn new(config: ResNetConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c0 = config.stage_channels[0];
        let stem = Conv2d::new(config.in_channels, c0, 3, 1, &mut rng);
        let mut blocks = Vec::new();
        let mut cin = c0;
        for (s, &cout) in config.stage_channels.iter().enumerate() {
            for b in 0..config.blocks_per_stage {
                let stride = if s > 0 && b == 0 { 2 } else { 1 };
                blocks.push(BasicBlock::new(cin, cout, stride, &mut rng));
                cin = cout;
            }
        }
        let embed = Linear::new(cin, config.embedding_dim, &mut rng);
        let head = Linear::new(config.embedding_dim, config.n_classes, &mut rng);
        Ok(Self {
            stem_bn: BatchNorm2d::new(c0),
            config,
            stem,
            blocks,
            embed,
            head,
            frozen: false,
            stem_relu: Relu::default(),
            embed_relu: Relu::default(),
            pooled_shapes: Vec::new(),
        })
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    /// Marks the model immutable: every parameter stops being trainable.
    pub fn freeze(&mut self) {
        self.frozen = true;
        self.visit("", &mut |_, p| p.trainable = false);
    }

    fn check_inputs(&self, xs: &[Tensor]) -> Result<()> {
        for x in xs {
            let s = x.shape();
            if s.len() != 3 || s[0] != self.config.in_channels || s[1] == 0 || s[2] == 0 {
                return Err(Error::Shape(format!(
                    "resnet expects [{}, H, W] maps, got {s:?}",
                    self.config.in_channels
                )));
            }
            x.ensure_finite("resnet input")?;
        }
        if xs.is_empty() {
            return Err(Error::Shape("empty batch".into()));
        }
        Ok(())
    }

    /// Deterministic inference-mode pass.
    pub fn infer(&self, xs: &[Tensor]) -> Result<ResNetOutput> {
        self.check_inputs(xs)?;
        let h = self.stem_bn.infer(&self.stem.infer(xs)?);
        let mut h: Vec<Tensor> = h.iter().map(Relu::apply).collect();
        for b in &self.blocks {
            h = b.infer(&h)?;
        }
        let pooled = global_avg_pool(&h);
        let embedding = Relu::apply(&self.embed.infer(&pooled)?);
        let logits = self.head.infer(&embedding)?;
        Ok(ResNetOutput { logits, embedding })
    }

    /// Caching pass; `train` selects batch statistics in BatchNorm.
    pub fn forward(&mut self, xs: &[Tensor], train: bool) -> Result<ResNetOutput> {
        self.check_inputs(xs)?;
        let h = self.stem.forward(xs)?;
        let h = self.stem_bn.forward(&h, train);
        let mut h = self.stem_relu.forward(&h);
        for b in &mut self.blocks {
            h = b.forward(&h, train)?;
        }
        self.pooled_shapes = h.iter().map(|t| t.shape().to_vec()).collect();
        let pooled = global_avg_pool(&h);
        let e = self.embed.forward(&pooled)?;
        let embedding = self.embed_relu.forward_one(&e);
        let logits = self.head.forward(&embedding)?;
        Ok(ResNetOutput { logits, embedding })
    }

    /// Back-propagates `dlogits` (`[N, 2]`); returns input gradients.
    pub fn backward(&mut self, dlogits: &Tensor) -> Vec<Tensor> {
        let de = self.head.backward(dlogits);
        let de = self.embed_relu.backward_one(&de);
        let dp = self.embed.backward(&de);
        let mut d = global_avg_pool_backward(&dp, &self.pooled_shapes);
        for b in self.blocks.iter_mut().rev() {
            d = b.backward(&d);
        }
        let d = self.stem_relu.backward(&d);
        let d = self.stem_bn.backward(&d);
        self.stem.backward(&d)
    }

    pub fn zero_residual_branches(&mut self) {
        self.blocks.iter_mut().for_each(BasicBlock::zero_residual);
    }
}

impl Parameters for ResNet {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        self.stem.visit(&join(prefix, "stem"), f);
        self.stem_bn.visit(&join(prefix, "stem_bn"), f);
        for (i, b) in self.blocks.iter_mut().enumerate() {
            b.visit(&join(prefix, &format!("block{i}")), f);
        }
        self.embed.visit(&join(prefix, "embed"), f);
        self.head.visit(&join(prefix, "head"), f);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nnet::gradcheck::random_input;

    fn tiny() -> ResNetConfig {
        ResNetConfig {
            stage_channels: [2, 3, 4, 4],
            blocks_per_stage: 1,
            embedding_dim: 6,
            ..Default::default()
        }
    }

    #[test]
    fn rejects_maxpool() {
        let cfg = ResNetConfig { include_initial_maxpool: true, ..tiny() };
        assert!(ResNet::new(cfg, 0).is_err());
    }

    #[test]
    fn variable_lengths() {
        let m = ResNet::new(tiny(), 1).unwrap();
        for t in [1, 2, 7, 30] {
            let out = m.infer(&[random_input(&[3, 40, t], t as u64)]).unwrap();
            assert_eq!(out.logits.shape(), &[1, 2]);
            assert_eq!(out.embedding.shape(), &[1, 6]);
        }
    }

    #[test]
    fn block_count_and_strides() {
        let m = ResNet::new(ResNetConfig::desk(), 0).unwrap();
        assert_eq!(m.blocks.len(), 8);
        let projections = m.blocks.iter().filter(|b| b.projection.is_some()).count();
        assert_eq!(projections, 3);
    }

    #[test]
    fn bad_shape_is_error() {
        let m = ResNet::new(tiny(), 1).unwrap();
        assert!(m.infer(&[random_input(&[2, 40, 5], 0)]).is_err());
    }
}
