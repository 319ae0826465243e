use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{decide, EmbeddingTable, InputKind, TaggerConfig};
use crate::corpus::Label;
use crate::error::{Error, Result};
use crate::eval::prf1_class_i;
use crate::nnet::loss::kl_from_logits;
use crate::nnet::param::join;
use crate::nnet::{softmax, BiLstm, Checkpoint, Dropout, Linear, Param, Parameters, SelfAttention, Sgd, Tensor};

pub const PAD_WORD: &str = "<pad>";
const EMB_PREFIX: &str = "emb/";

/// One narrative as tagger input. `wae` is empty when the input kind does
/// not use acoustic vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct TaggerSequence {
    pub narrative_id: String,
    pub words: Vec<String>,
    pub wae: Vec<Vec<f64>>,
    pub targets: Vec<[f64; 2]>,
    pub gold: Vec<Label>,
}

impl TaggerSequence {
    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }
}

/// Sequences padded to a common length. `lengths` holds the real lengths;
/// positions at or beyond them never reach the network or the loss.
#[derive(Debug, Clone, PartialEq)]
pub struct PaddedBatch {
    pub sequences: Vec<TaggerSequence>,
    pub lengths: Vec<usize>,
}

impl PaddedBatch {
    pub fn new(seqs: &[&TaggerSequence]) -> Self {
        let max_len = seqs.iter().map(|s| s.len()).max().unwrap_or(0);
        let mut sequences = Vec::with_capacity(seqs.len());
        let mut lengths = Vec::with_capacity(seqs.len());
        for s in seqs {
            let mut p = (*s).clone();
            let pad = max_len - s.len();
            let wae_dim = s.wae.first().map_or(0, Vec::len);
            p.words.extend(std::iter::repeat(PAD_WORD.to_string()).take(pad));
            if !s.wae.is_empty() {
                p.wae.extend(std::iter::repeat(vec![0.0; wae_dim]).take(pad));
            }
            p.targets.extend(std::iter::repeat([0.0, 1.0]).take(pad));
            p.gold.extend(std::iter::repeat(Label::O).take(pad));
            lengths.push(s.len());
            sequences.push(p);
        }
        Self { sequences, lengths }
    }

    pub fn padded_len(&self) -> usize {
        self.sequences.first().map_or(0, TaggerSequence::len)
    }

    pub fn mask(&self) -> Vec<Vec<bool>> {
        let t = self.padded_len();
        self.lengths.iter().map(|&n| (0..t).map(|i| i < n).collect()).collect()
    }

    pub fn n_tokens(&self) -> usize {
        self.lengths.iter().sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TokenPrediction {
    pub p_i: f64,
    pub logits: [f64; 2],
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaggerEpoch {
    pub train_loss: f64,
    pub dev_f1: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaggerReport {
    pub best_epoch: usize,
    pub best_dev_f1: f64,
    pub history: Vec<TaggerEpoch>,
}

/// BiLSTM, self-attention with a residual add, dropout and a per-token
/// linear read-out to `[I, O]` logits.
#[derive(Debug, Clone)]
pub struct Tagger {
    pub config: TaggerConfig,
    pub embeddings: Option<EmbeddingTable>,
    pub bilstm: BiLstm,
    pub attention: SelfAttention,
    pub out: Linear,
    dropout: Dropout,
    rng: ChaCha8Rng,
}

impl Tagger {
    pub fn new(config: TaggerConfig, embeddings: Option<EmbeddingTable>) -> Result<Self> {
        config.validate()?;
        match (&embeddings, config.input.uses_text()) {
            (None, true) => {
                return Err(Error::InvalidArgument(
                    "text input needs an embedding table".into(),
                ))
            }
            (Some(e), true) if e.dim != config.wte_dim => {
                return Err(Error::Shape(format!(
                    "embedding dim {} != configured {}",
                    e.dim, config.wte_dim
                )))
            }
            _ => {}
        }
        let embeddings = if config.input.uses_text() { embeddings } else { None };
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let h = config.lstm_hidden;
        let bilstm = BiLstm::new(config.input_dim(), h, &mut rng);
        let attention = SelfAttention::new(2 * h, &mut rng);
        let out = Linear::new(2 * h, 2, &mut rng);
        Ok(Self {
            dropout: Dropout::new(config.dropout),
            config,
            embeddings,
            bilstm,
            attention,
            out,
            rng,
        })
    }

    /// Input matrix `[len, input_dim]` for the first `len` tokens, plus the
    /// embedding rows used.
    fn build_input(&self, seq: &TaggerSequence, len: usize) -> Result<(Tensor, Vec<usize>)> {
        let kind = self.config.input;
        if seq.words.len() < len || seq.targets.len() < len || seq.gold.len() < len {
            return Err(Error::Shape(format!(
                "sequence {}: fewer than {len} words, targets or labels",
                seq.narrative_id
            )));
        }
        let rows = match &self.embeddings {
            Some(e) if kind.uses_text() => e.rows_for(&seq.words[..len])?,
            _ => Vec::new(),
        };
        if kind.uses_audio() {
            if seq.wae.len() < len {
                return Err(Error::Shape(format!(
                    "sequence {}: {} acoustic vectors for {len} tokens",
                    seq.narrative_id,
                    seq.wae.len()
                )));
            }
            if let Some(v) = seq.wae[..len].iter().find(|v| v.len() != self.config.wae_dim) {
                return Err(Error::Shape(format!(
                    "acoustic vector has {} values, expected {}",
                    v.len(),
                    self.config.wae_dim
                )));
            }
        }
        let dim = self.config.input_dim();
        let mut data = Vec::with_capacity(len * dim);
        for t in 0..len {
            if let (Some(e), Some(&r)) = (&self.embeddings, rows.get(t)) {
                data.extend_from_slice(e.table.value.row(r));
            }
            if kind.uses_audio() {
                data.extend_from_slice(&seq.wae[t]);
            }
        }
        Ok((Tensor::from_vec(&[len, dim], data)?, rows))
    }

    fn infer_logits(&self, x: &Tensor) -> Result<Tensor> {
        let h = self.bilstm.infer(x)?;
        let mut r = self.attention.infer(&h)?;
        r.add_assign(&h);
        self.out.infer(&r)
    }

    /// Per-token `p_I` and logits.
    pub fn predict_sequence(&self, seq: &TaggerSequence) -> Result<Vec<TokenPrediction>> {
        if seq.is_empty() {
            return Ok(Vec::new());
        }
        let (x, _) = self.build_input(seq, seq.len())?;
        let logits = self.infer_logits(&x)?;
        Ok((0..seq.len())
            .map(|t| {
                let l = logits.row(t);
                TokenPrediction {
                    p_i: softmax(l)[0],
                    logits: [l[0], l[1]],
                }
            })
            .collect())
    }

    pub fn decide_sequence(&self, seq: &TaggerSequence) -> Result<Vec<Label>> {
        Ok(self
            .predict_sequence(seq)?
            .iter()
            .map(|p| decide(p.p_i, self.config.decision_threshold))
            .collect())
    }

    /// Mean per-token KL over the unpadded positions, without dropout.
    pub fn batch_loss(&self, batch: &PaddedBatch) -> Result<f64> {
        let mut total = 0.0;
        for (seq, &len) in batch.sequences.iter().zip(&batch.lengths) {
            if len == 0 {
                continue;
            }
            let (x, _) = self.build_input(seq, len)?;
            let logits = self.infer_logits(&x)?;
            for t in 0..len {
                total += kl_from_logits(&seq.targets[t], logits.row(t)).0;
            }
        }
        Ok(total / batch.n_tokens().max(1) as f64)
    }

    /// Training-mode forward and backward over a batch; accumulates
    /// gradients and returns the mean per-token loss.
    pub fn train_batch(&mut self, batch: &PaddedBatch) -> Result<f64> {
        let n = batch.n_tokens().max(1) as f64;
        let mut total = 0.0;
        for (seq, &len) in batch.sequences.iter().zip(&batch.lengths) {
            if len == 0 {
                continue;
            }
            let (x, rows) = self.build_input(seq, len)?;
            let h = self.bilstm.forward(&x)?;
            let mut r = self.attention.forward(&h)?;
            r.add_assign(&h);
            let d = self.dropout.forward(&r, true, &mut self.rng);
            let logits = self.out.forward(&d)?;
            let mut dlogits = Tensor::zeros(&[len, 2]);
            for t in 0..len {
                let (l, g) = kl_from_logits(&seq.targets[t], logits.row(t));
                total += l;
                for (o, gi) in dlogits.row_mut(t).iter_mut().zip(g) {
                    *o = gi / n;
                }
            }
            let dd = self.out.backward(&dlogits);
            let dr = self.dropout.backward(&dd);
            let mut dh = self.attention.backward(&dr);
            dh.add_assign(&dr);
            let dx = self.bilstm.backward(&dh);
            if let Some(e) = self.embeddings.as_mut() {
                if e.table.trainable {
                    e.accumulate(&rows, &dx);
                }
            }
        }
        Ok(total / n)
    }

    fn visit_network(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        self.bilstm.visit(&join(prefix, "bilstm"), f);
        self.attention.visit(&join(prefix, "attention"), f);
        self.out.visit(&join(prefix, "out"), f);
    }
}

impl Parameters for Tagger {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        if let Some(e) = self.embeddings.as_mut() {
            e.visit(&join(prefix, "embeddings"), f);
        }
        self.visit_network(prefix, f);
    }
}

struct Network<'a>(&'a mut Tagger);

impl Parameters for Network<'_> {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        self.0.visit_network(prefix, f);
    }
}

fn length_buckets(seqs: &[TaggerSequence], batch_size: usize) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..seqs.len()).collect();
    order.sort_by_key(|&i| seqs[i].len());
    order.chunks(batch_size).map(<[usize]>::to_vec).collect()
}

pub fn dev_f1(model: &Tagger, dev: &[TaggerSequence]) -> Result<f64> {
    Ok(dev_scores(model, dev)?.0)
}

/// F1-I at the decision threshold and mean per-token KL over `dev`.
fn dev_scores(model: &Tagger, dev: &[TaggerSequence]) -> Result<(f64, f64)> {
    let thr = model.config.decision_threshold;
    let mut gold = Vec::new();
    let mut pred = Vec::new();
    let mut loss = 0.0;
    for s in dev {
        gold.extend_from_slice(&s.gold);
        for (p, target) in model.predict_sequence(s)?.iter().zip(&s.targets) {
            pred.push(decide(p.p_i, thr));
            loss += kl_from_logits(target, &p.logits).0;
        }
    }
    let f1 = prf1_class_i(&gold, &pred)?.f1_i;
    Ok((f1, loss / gold.len().max(1) as f64))
}

/// Trains with momentum SGD over length-bucketed batches and returns the
/// model restored to its best dev F1-I epoch.
pub fn train_tagger(
    config: &TaggerConfig,
    embeddings: Option<EmbeddingTable>,
    train: &[TaggerSequence],
    dev: &[TaggerSequence],
) -> Result<(Tagger, TaggerReport)> {
    if train.iter().all(TaggerSequence::is_empty) {
        return Err(Error::InvalidArgument("empty tagger training set".into()));
    }
    if dev.iter().all(TaggerSequence::is_empty) {
        return Err(Error::InvalidArgument("empty tagger dev set".into()));
    }
    let mut model = Tagger::new(config.clone(), embeddings)?;
    let mut opt = Sgd::new(config.lr, config.momentum);
    let mut order_rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x7a66_0e5d);
    let mut batches = length_buckets(train, config.batch_size);
    // (epoch, dev F1, dev loss, snapshot)
    let mut best: Option<(usize, f64, f64, Vec<(String, Tensor)>)> = None;
    let mut history = Vec::new();
    let mut stall = 0;
    for epoch in 0..config.max_epochs {
        batches.shuffle(&mut order_rng);
        let mut loss_sum = 0.0;
        let mut n_tokens = 0;
        for b in &batches {
            let refs: Vec<&TaggerSequence> = b.iter().map(|&i| &train[i]).collect();
            let batch = PaddedBatch::new(&refs);
            model.zero_grad();
            let loss = model.train_batch(&batch)?;
            if !loss.is_finite() {
                return Err(Error::NonFinite(format!("tagger loss at epoch {epoch}")));
            }
            if let Some(c) = config.clip_norm {
                model.clip_grad_norm(c);
            }
            opt.step(&mut model)?;
            loss_sum += loss * batch.n_tokens() as f64;
            n_tokens += batch.n_tokens();
        }
        let (f1, dev_loss) = dev_scores(&model, dev)?;
        let train_loss = loss_sum / n_tokens.max(1) as f64;
        log::info!(
            "tagger epoch {epoch}: loss {train_loss:.5} dev loss {dev_loss:.5} dev F1 {f1:.4} lr {}",
            opt.lr
        );
        history.push(TaggerEpoch {
            train_loss,
            dev_f1: f1,
            lr: opt.lr,
        });
        // Equal F1 (typically 0 early on) counts as progress while dev loss falls.
        let improved = best
            .as_ref()
            .map_or(true, |b| f1 > b.1 || (f1 == b.1 && dev_loss < b.2));
        if improved {
            best = Some((epoch, f1, dev_loss, model.snapshot()));
            stall = 0;
        } else {
            stall += 1;
            if stall >= config.patience {
                break;
            }
            if config.lr_decay_patience > 0 && stall % config.lr_decay_patience == 0 {
                opt.lr *= 0.5;
            }
        }
    }
    let (best_epoch, best_dev_f1, _, snap) = best.expect("at least one epoch");
    model.restore(&snap);
    Ok((
        model,
        TaggerReport {
            best_epoch,
            best_dev_f1,
            history,
        },
    ))
}

pub fn save_tagger(model: &mut Tagger, path: &Path) -> Result<()> {
    let mut ck = Checkpoint::from_model(&mut Network(model));
    if let Some(e) = &model.embeddings {
        for w in e.words() {
            let v = e.vector(w).expect("own word").to_vec();
            ck.push(format!("{EMB_PREFIX}{w}"), Tensor::from_vec(&[v.len()], v)?);
        }
    }
    let c = &model.config;
    ck.set_meta_u64("tagger.input", c.input.code());
    ck.set_meta_f64s(
        "tagger.dims",
        &[c.wte_dim as f64, c.wae_dim as f64, c.lstm_hidden as f64],
    );
    ck.set_meta_f64s("tagger.probs", &[c.decision_threshold, c.dropout]);
    ck.save(path)
}

pub fn load_tagger(path: &Path) -> Result<Tagger> {
    let ck = Checkpoint::load(path)?;
    let dims = ck.meta_f64s("tagger.dims")?;
    let probs = ck.meta_f64s("tagger.probs")?;
    if dims.len() != 3 || probs.len() != 2 {
        return Err(Error::Checkpoint("bad tagger metadata".into()));
    }
    let config = TaggerConfig {
        input: InputKind::from_code(ck.meta_u64("tagger.input")?)?,
        wte_dim: dims[0] as usize,
        wae_dim: dims[1] as usize,
        lstm_hidden: dims[2] as usize,
        decision_threshold: probs[0],
        dropout: probs[1],
        ..TaggerConfig::default()
    };
    let rows: Vec<(String, Vec<f64>)> = ck
        .params()
        .filter_map(|(n, t)| n.strip_prefix(EMB_PREFIX).map(|w| (w.to_string(), t.data().to_vec())))
        .collect();
    let embeddings = if rows.is_empty() {
        None
    } else {
        Some(EmbeddingTable::from_rows(config.wte_dim, rows)?)
    };
    let mut model = Tagger::new(config, embeddings)?;
    ck.load_into(&mut Network(&mut model), "")?;
    Ok(model)
}

/// Prediction dump: narrative_id, token_index, word, gold, p_I, logit_I, logit_O.
pub fn prediction_tsv(rows: &[(&TaggerSequence, Vec<TokenPrediction>)]) -> String {
    let mut s = String::from("narrative_id\ttoken_index\tword\tgold\tp_I\tlogit_I\tlogit_O\n");
    for (seq, preds) in rows {
        for (t, p) in preds.iter().enumerate() {
            s.push_str(&format!(
                "{}\t{t}\t{}\t{}\t{:.6}\t{:.6}\t{:.6}\n",
                seq.narrative_id, seq.words[t], seq.gold[t], p.p_i, p.logits[0], p.logits[1]
            ));
        }
    }
    s
}
