use std::collections::BTreeSet;

use crate::acoustic::{
    finetune, predict_and_embed, pretrain, resnet_checkpoint, resnet_from_checkpoint, ResNet, TrainConfig,
    TrainReport,
};
use crate::config::{derive_seed, PipelineConfig};
use crate::corpus::{synth_utterances, Corpus, FoldPlan, FoldRoles, Label};
use crate::dsp::wav::read_wav;
use crate::dsp::{apply_norm, cut_word_segment, extract_mfcc_tensor, fit_norm_stats, FeatTensor, NormStats};
use crate::error::{Error, Result};
use crate::nnet::{Checkpoint, Tensor};
use crate::tagger::{
    load_word_embeddings_file, token_target, train_tagger, EmbeddingTable, InputKind, Tagger, TaggerReport,
    TaggerSequence, TokenPrediction,
};

/// Dense global ids for every token, in corpus order.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenIndex {
    offsets: Vec<usize>,
    total: usize,
}

impl TokenIndex {
    pub fn new(corpus: &Corpus) -> Self {
        let mut offsets = Vec::with_capacity(corpus.narratives.len());
        let mut total = 0;
        for n in &corpus.narratives {
            offsets.push(total);
            total += n.tokens.len();
        }
        Self { offsets, total }
    }

    pub fn len(&self) -> usize {
        self.total
    }

    pub fn is_empty(&self) -> bool {
        self.total == 0
    }

    pub fn id(&self, narrative: usize, token: usize) -> usize {
        self.offsets[narrative] + token
    }

    pub fn ids_of(&self, corpus: &Corpus, narratives: &[usize]) -> Vec<usize> {
        narratives
            .iter()
            .flat_map(|&n| (0..corpus.narratives[n].tokens.len()).map(move |t| self.offsets[n] + t))
            .collect()
    }
}

pub fn gold_labels(corpus: &Corpus) -> Vec<Label> {
    corpus.tokens().map(|t| t.label).collect()
}

/// Narrative indices for the train, dev and test roles of one test fold.
#[derive(Debug, Clone, PartialEq)]
pub struct FoldSplit {
    pub roles: FoldRoles,
    pub train: Vec<usize>,
    pub dev: Vec<usize>,
    pub test: Vec<usize>,
}

pub fn fold_split(corpus: &Corpus, plan: &FoldPlan, test_fold: usize) -> Result<FoldSplit> {
    if !plan.covers(corpus) {
        return Err(Error::InvalidArgument("fold plan does not cover every speaker".into()));
    }
    let roles = plan.roles(test_fold)?;
    let (train_s, dev_s, test_s) = plan.role_speakers(&roles);
    assert!(
        train_s.is_disjoint(&test_s) && train_s.is_disjoint(&dev_s) && dev_s.is_disjoint(&test_s),
        "speaker leakage between fold roles"
    );
    let pick = |set: &BTreeSet<String>| -> Vec<usize> {
        (0..corpus.narratives.len())
            .filter(|&i| set.contains(&corpus.narratives[i].speaker_id))
            .collect()
    };
    Ok(FoldSplit {
        train: pick(&train_s),
        dev: pick(&dev_s),
        test: pick(&test_s),
        roles,
    })
}

/// MFCC tensors for every token, in [`TokenIndex`] order.
pub fn extract_corpus_features(corpus: &Corpus) -> Result<Vec<FeatTensor>> {
    let mut out = Vec::with_capacity(corpus.stats.n_tokens);
    for n in &corpus.narratives {
        let signal = read_wav(&n.audio_path)?;
        for (i, t) in n.tokens.iter().enumerate() {
            let seg = cut_word_segment(&signal, t.start, t.end)?;
            out.push(extract_mfcc_tensor(&seg)?.with_ref(&n.narrative_id, i));
        }
    }
    Ok(out)
}

fn feature_key(nid: &str, idx: usize) -> String {
    format!("feat/{nid}/{idx}")
}

/// Feature archive keyed by `(narrative_id, token_index)`.
pub fn features_checkpoint(features: &[FeatTensor]) -> Result<Checkpoint> {
    let mut ck = Checkpoint::new();
    for f in features {
        let (nid, idx) = f
            .word_ref
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument("feature tensor without a word reference".into()))?;
        let [c, t, m] = f.shape();
        ck.push(feature_key(nid, *idx), Tensor::from_vec(&[c, t, m], f.data.clone())?);
    }
    Ok(ck)
}

pub fn features_from_checkpoint(corpus: &Corpus, ck: &Checkpoint) -> Result<Vec<FeatTensor>> {
    let mut out = Vec::with_capacity(corpus.stats.n_tokens);
    for n in &corpus.narratives {
        for i in 0..n.tokens.len() {
            let t = ck.require(&feature_key(&n.narrative_id, i))?;
            let mut f = FeatTensor::zeros(t.dim(1));
            if t.shape() != f.shape() {
                return Err(Error::Checkpoint(format!("feature {}/{i} has shape {:?}", n.narrative_id, t.shape())));
            }
            f.data.copy_from_slice(t.data());
            out.push(f.with_ref(&n.narrative_id, i));
        }
    }
    Ok(out)
}

/// Pretrains a fresh model on synthetic neutral/emotional utterances.
pub fn pretrain_model(cfg: &PipelineConfig) -> Result<(ResNet, TrainReport)> {
    let p = &cfg.model.pretrain;
    let utts = synth_utterances(&p.utterances, derive_seed(cfg.seed, "utterances", 0))?;
    let feats: Vec<(FeatTensor, bool)> = utts
        .iter()
        .map(|(s, emo)| Ok((extract_mfcc_tensor(s)?, *emo)))
        .collect::<Result<_>>()?;
    let n_dev = ((feats.len() as f64) * p.dev_fraction).round() as usize;
    let stride = if n_dev == 0 { usize::MAX } else { (feats.len() / n_dev).max(1) };
    let (dev, train): (Vec<_>, Vec<_>) = feats
        .into_iter()
        .enumerate()
        .partition(|(i, _)| stride != usize::MAX && i % stride == 0 && i / stride < n_dev);
    let train: Vec<(FeatTensor, bool)> = train.into_iter().map(|(_, x)| x).collect();
    let mut dev: Vec<(FeatTensor, bool)> = dev.into_iter().map(|(_, x)| x).collect();
    if dev.is_empty() {
        dev = train.clone();
    }
    let tensors: Vec<FeatTensor> = train.iter().map(|(f, _)| f.clone()).collect();
    let norm = fit_norm_stats(&tensors)?;
    let normed = |v: &[(FeatTensor, bool)]| -> Vec<(FeatTensor, bool)> {
        v.iter().map(|(f, b)| (apply_norm(f, &norm), *b)).collect()
    };
    let mut model = ResNet::new(cfg.model.resnet.clone(), derive_seed(cfg.seed, "resnet", 0))?;
    let tc = TrainConfig {
        seed: derive_seed(cfg.seed, "pretrain", 0),
        ..p.train.clone()
    };
    let report = pretrain(&mut model, &normed(&train), &normed(&dev), &tc)?;
    Ok((model, report))
}

/// A fine-tuned, frozen acoustic model with the normalization it was
/// trained under.
#[derive(Debug, Clone)]
pub struct AcousticFold {
    pub model: ResNet,
    pub norm: NormStats,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AcousticOutputs {
    pub logits: Vec<[f64; 2]>,
    pub p_i: Vec<f64>,
    pub wae: Vec<Vec<f64>>,
}

impl AcousticFold {
    pub fn outputs(&self, features: &[FeatTensor]) -> Result<AcousticOutputs> {
        let mut out = AcousticOutputs {
            logits: Vec::with_capacity(features.len()),
            p_i: Vec::with_capacity(features.len()),
            wae: Vec::with_capacity(features.len()),
        };
        for chunk in features.chunks(256) {
            let normed: Vec<FeatTensor> = chunk.iter().map(|f| apply_norm(f, &self.norm)).collect();
            for (p, w) in predict_and_embed(&self.model, &normed)? {
                out.logits.push(p.logits);
                out.p_i.push(p.p_i);
                out.wae.push(w.vector);
            }
        }
        Ok(out)
    }

    pub fn to_checkpoint(&mut self) -> Result<Checkpoint> {
        let mut ck = resnet_checkpoint(&mut self.model);
        let n = self.norm.mean.len();
        ck.push("norm.mean", Tensor::from_vec(&[n], self.norm.mean.clone())?);
        ck.push("norm.std", Tensor::from_vec(&[n], self.norm.std.clone())?);
        Ok(ck)
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let model = resnet_from_checkpoint(ck)?;
        if !model.is_frozen() {
            return Err(Error::Checkpoint("acoustic fold model is not frozen".into()));
        }
        Ok(Self {
            model,
            norm: NormStats {
                mean: ck.require("norm.mean")?.data().to_vec(),
                std: ck.require("norm.std")?.data().to_vec(),
            },
        })
    }
}

/// Fine-tunes (a copy of) `pretrained`, or a fresh model, on the training
/// folds with dev-fold early stopping, then freezes it.
pub fn train_acoustic_fold(
    cfg: &PipelineConfig,
    corpus: &Corpus,
    split: &FoldSplit,
    features: &[FeatTensor],
    pretrained: Option<&ResNet>,
) -> Result<(AcousticFold, TrainReport)> {
    let fold = split.roles.test;
    let index = TokenIndex::new(corpus);
    let gold = gold_labels(corpus);
    let train_ids = index.ids_of(corpus, &split.train);
    let dev_ids = index.ids_of(corpus, &split.dev);
    let train_feats: Vec<FeatTensor> = train_ids.iter().map(|&i| features[i].clone()).collect();
    let norm = fit_norm_stats(&train_feats)?;
    let pairs = |ids: &[usize]| -> Vec<(FeatTensor, Label)> {
        ids.iter().map(|&i| (apply_norm(&features[i], &norm), gold[i])).collect()
    };
    let mut model = match pretrained {
        Some(m) => m.clone(),
        None => ResNet::new(cfg.model.resnet.clone(), derive_seed(cfg.seed, "resnet", fold + 1))?,
    };
    let tc = TrainConfig {
        seed: derive_seed(cfg.seed, "finetune", fold),
        ..cfg.model.finetune.clone()
    };
    let report = finetune(&mut model, &pairs(&train_ids), &pairs(&dev_ids), &tc)?;
    model.freeze();
    Ok((AcousticFold { model, norm }, report))
}

pub fn load_embedding_table(cfg: &PipelineConfig, corpus: &Corpus) -> Result<EmbeddingTable> {
    load_word_embeddings_file(
        &cfg.embeddings_path(),
        &corpus.vocabulary(),
        cfg.tagger.wte_dim,
        derive_seed(cfg.seed, "oov", 0),
    )
}

/// Tagger inputs for the given narratives; `wae` is indexed by token id.
pub fn tagger_sequences(corpus: &Corpus, narratives: &[usize], wae: Option<&[Vec<f64>]>) -> Vec<TaggerSequence> {
    let index = TokenIndex::new(corpus);
    let pool = corpus.annotator_pool();
    narratives
        .iter()
        .map(|&n| {
            let narr = &corpus.narratives[n];
            TaggerSequence {
                narrative_id: narr.narrative_id.clone(),
                words: narr.tokens.iter().map(|t| t.word.clone()).collect(),
                wae: match wae {
                    Some(w) => (0..narr.tokens.len()).map(|t| w[index.id(n, t)].clone()).collect(),
                    None => Vec::new(),
                },
                targets: narr.tokens.iter().map(|t| token_target(t, pool)).collect(),
                gold: narr.tokens.iter().map(|t| t.label).collect(),
            }
        })
        .collect()
}

pub fn train_tagger_fold(
    cfg: &PipelineConfig,
    corpus: &Corpus,
    split: &FoldSplit,
    kind: InputKind,
    table: Option<&EmbeddingTable>,
    wae: Option<&[Vec<f64>]>,
) -> Result<(Tagger, TaggerReport)> {
    let fold = split.roles.test;
    if kind.uses_text() && table.is_none() {
        return Err(Error::MissingArtifact("word embeddings".into()));
    }
    if kind.uses_audio() && wae.is_none() {
        return Err(Error::MissingArtifact("acoustic model".into()));
    }
    let wae = if kind.uses_audio() { wae } else { None };
    let tc = crate::tagger::TaggerConfig {
        input: kind,
        seed: derive_seed(cfg.seed, &format!("tagger_{kind:?}"), fold),
        ..cfg.tagger.clone()
    };
    let train = tagger_sequences(corpus, &split.train, wae);
    let dev = tagger_sequences(corpus, &split.dev, wae);
    let emb = if kind.uses_text() { table.cloned() } else { None };
    train_tagger(&tc, emb, &train, &dev)
}

/// Predictions for every token, in [`TokenIndex`] order.
pub fn tagger_outputs(tagger: &Tagger, corpus: &Corpus, wae: Option<&[Vec<f64>]>) -> Result<Vec<TokenPrediction>> {
    let all: Vec<usize> = (0..corpus.narratives.len()).collect();
    let wae = if tagger.config.input.uses_audio() { wae } else { None };
    if tagger.config.input.uses_audio() && wae.is_none() {
        return Err(Error::MissingArtifact("acoustic model".into()));
    }
    let mut out = Vec::new();
    for s in tagger_sequences(corpus, &all, wae) {
        out.extend(tagger.predict_sequence(&s)?);
    }
    Ok(out)
}
