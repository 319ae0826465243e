//! Word-level acoustic classifier/encoder: a ResNet-18 layout without the
//! initial max-pool and with a 512-d embedding layer before the classifier.

mod resnet;
mod train;

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::Label;
use crate::dsp::FeatTensor;
use crate::error::{Error, Result};
use crate::nnet::layers::softmax;
use crate::nnet::{Checkpoint, Tensor};

pub use resnet::{BasicBlock, ResNet, ResNetConfig, ResNetOutput};
pub use train::{finetune, pretrain, train_classifier, DevMetric, EpochStats, TrainConfig, TrainReport};

/// Two-class output; index 0 is I.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Posterior {
    pub p_i: f64,
    pub p_o: f64,
    pub logits: [f64; 2],
}

impl Posterior {
    pub fn from_logits(logits: [f64; 2]) -> Self {
        let p = softmax(&logits);
        Self {
            p_i: p[0],
            p_o: p[1],
            logits,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Wae {
    pub vector: Vec<f64>,
    pub word_ref: Option<(String, usize)>,
}

/// `[3, 40, T]` input map for a feature tensor.
pub fn feat_to_map(f: &FeatTensor) -> Tensor {
    let [c, t, m] = f.shape();
    Tensor::from_vec(&[m, c, t], f.to_channels_first()).expect("shape")
}

fn posteriors(out: &ResNetOutput) -> Vec<Posterior> {
    out.logits
        .data()
        .chunks(2)
        .map(|l| Posterior::from_logits([l[0], l[1]]))
        .collect()
}

pub fn predict_word(model: &ResNet, tensor: &FeatTensor) -> Result<Posterior> {
    Ok(posteriors(&model.infer(&[feat_to_map(tensor)])?)[0])
}

/// Inference over many tensors in fixed-size chunks.
pub fn predict_words(model: &ResNet, tensors: &[FeatTensor]) -> Result<Vec<Posterior>> {
    let mut out = Vec::with_capacity(tensors.len());
    for chunk in tensors.chunks(64) {
        let maps: Vec<Tensor> = chunk.iter().map(feat_to_map).collect();
        out.extend(posteriors(&model.infer(&maps)?));
    }
    Ok(out)
}

pub fn embed_word(model: &ResNet, tensor: &FeatTensor) -> Result<Wae> {
    Ok(embed_words(model, std::slice::from_ref(tensor))?.pop().expect("one"))
}

pub fn embed_words(model: &ResNet, tensors: &[FeatTensor]) -> Result<Vec<Wae>> {
    Ok(predict_and_embed(model, tensors)?.into_iter().map(|(_, w)| w).collect())
}

/// Posteriors and embeddings from a single inference pass of a frozen model.
pub fn predict_and_embed(model: &ResNet, tensors: &[FeatTensor]) -> Result<Vec<(Posterior, Wae)>> {
    if !model.is_frozen() {
        return Err(Error::NotFrozen);
    }
    let mut out = Vec::with_capacity(tensors.len());
    for chunk in tensors.chunks(64) {
        let maps: Vec<Tensor> = chunk.iter().map(feat_to_map).collect();
        let res = model.infer(&maps)?;
        let d = res.embedding.dim(1);
        let post = posteriors(&res);
        for ((row, t), p) in res.embedding.data().chunks(d).zip(chunk).zip(post) {
            let wae = Wae {
                vector: row.to_vec(),
                word_ref: t.word_ref.clone(),
            };
            out.push((p, wae));
        }
    }
    Ok(out)
}

pub fn resnet_checkpoint(model: &mut ResNet) -> Checkpoint {
    let mut ck = Checkpoint::from_model(model);
    let c = &model.config;
    let dims: Vec<f64> = c
        .stage_channels
        .iter()
        .chain([&c.blocks_per_stage, &c.embedding_dim, &c.n_classes, &c.in_channels])
        .map(|&v| v as f64)
        .collect();
    ck.set_meta_f64s("resnet.config", &dims);
    ck.set_meta_u64("resnet.frozen", model.is_frozen() as u64);
    ck
}

pub fn resnet_from_checkpoint(ck: &Checkpoint) -> Result<ResNet> {
    let d = ck.meta_f64s("resnet.config")?;
    if d.len() != 8 {
        return Err(Error::Checkpoint("bad resnet config".into()));
    }
    let u = |i: usize| d[i] as usize;
    let config = ResNetConfig {
        stage_channels: [u(0), u(1), u(2), u(3)],
        blocks_per_stage: u(4),
        embedding_dim: u(5),
        n_classes: u(6),
        in_channels: u(7),
        include_initial_maxpool: false,
    };
    let mut model = ResNet::new(config, 0)?;
    ck.load_into(&mut model, "")?;
    if ck.meta_u64("resnet.frozen")? == 1 {
        model.freeze();
    }
    Ok(model)
}

pub fn save_resnet(model: &mut ResNet, path: &Path) -> Result<()> {
    resnet_checkpoint(model).save(path)
}

pub fn load_resnet(path: &Path) -> Result<ResNet> {
    resnet_from_checkpoint(&Checkpoint::load(path)?)
}

/// One row per occurrence: word, narrative_id, token_index, label, vector.
pub fn wae_csv(rows: &[(String, String, usize, Label, Vec<f64>)]) -> String {
    let mut s = String::from("word,narrative_id,token_index,label");
    if let Some(r) = rows.first() {
        for i in 0..r.4.len() {
            let _ = write!(s, ",e{i}");
        }
    }
    s.push('\n');
    for (word, nid, idx, label, v) in rows {
        let _ = write!(s, "{word},{nid},{idx},{label}");
        for x in v {
            let _ = write!(s, ",{x}");
        }
        s.push('\n');
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn posterior_from_logits() {
        let p = Posterior::from_logits([0.0, 0.0]);
        assert_eq!(p.p_i, 0.5);
        let p = Posterior::from_logits([2.0, 0.0]);
        assert!((p.p_i - 1.0 / (1.0 + (-2.0f64).exp())).abs() < 1e-12);
        assert!((p.p_i + p.p_o - 1.0).abs() < 1e-12);
    }

    #[test]
    fn embed_requires_frozen() {
        let mut m = ResNet::new(
            ResNetConfig {
                stage_channels: [2, 2, 2, 2],
                blocks_per_stage: 1,
                embedding_dim: 4,
                ..Default::default()
            },
            0,
        )
        .unwrap();
        let f = FeatTensor::zeros(6);
        assert!(matches!(embed_word(&m, &f), Err(Error::NotFrozen)));
        m.freeze();
        assert_eq!(embed_word(&m, &f).unwrap().vector.len(), 4);
    }
}
