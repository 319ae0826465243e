//! Attention BiLSTM sequence tagger over per-word vectors.

mod embeddings;
mod model;

pub use embeddings::{load_word_embeddings, load_word_embeddings_file, EmbeddingTable, OOV_RANGE};
pub use model::{
    dev_f1, load_tagger, prediction_tsv, save_tagger, train_tagger, TaggerEpoch, PaddedBatch, Tagger, TaggerReport, TaggerSequence, TokenPrediction,
};

use serde::{Deserialize, Serialize};

use crate::corpus::{Label, Token};
use crate::error::{Error, Result};

/// Which per-word vectors feed the tagger.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputKind {
    Wte,
    Wae,
    Ef,
}

impl InputKind {
    pub fn uses_text(self) -> bool {
        matches!(self, InputKind::Wte | InputKind::Ef)
    }

    pub fn uses_audio(self) -> bool {
        matches!(self, InputKind::Wae | InputKind::Ef)
    }

    fn code(self) -> u64 {
        match self {
            InputKind::Wte => 0,
            InputKind::Wae => 1,
            InputKind::Ef => 2,
        }
    }

    fn from_code(c: u64) -> Result<Self> {
        match c {
            0 => Ok(InputKind::Wte),
            1 => Ok(InputKind::Wae),
            2 => Ok(InputKind::Ef),
            _ => Err(Error::Checkpoint(format!("unknown tagger input kind {c}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TaggerConfig {
    pub input: InputKind,
    pub wte_dim: usize,
    pub wae_dim: usize,
    pub lstm_hidden: usize,
    pub dropout: f64,
    pub decision_threshold: f64,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub lr_decay_patience: usize,
    pub clip_norm: Option<f64>,
    pub seed: u64,
}

impl Default for TaggerConfig {
    fn default() -> Self {
        Self {
            input: InputKind::Wte,
            wte_dim: 100,
            wae_dim: 512,
            lstm_hidden: 128,
            dropout: 0.2,
            decision_threshold: 0.15,
            batch_size: 8,
            lr: 0.05,
            momentum: 0.9,
            max_epochs: 30,
            patience: 5,
            lr_decay_patience: 3,
            clip_norm: Some(1.0),
            seed: 0,
        }
    }
}

impl TaggerConfig {
    pub fn input_dim(&self) -> usize {
        match self.input {
            InputKind::Wte => self.wte_dim,
            InputKind::Wae => self.wae_dim,
            InputKind::Ef => self.wte_dim + self.wae_dim,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(format!("tagger config: {m}")));
        if !(self.decision_threshold > 0.0 && self.decision_threshold < 1.0) {
            return bad("decision_threshold must lie in (0, 1)");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must lie in [0, 1)");
        }
        if self.lstm_hidden == 0 || self.batch_size == 0 || self.max_epochs == 0 {
            return bad("hidden size, batch size and epochs must be positive");
        }
        if self.input_dim() == 0 {
            return bad("input dimension is zero");
        }
        if !(self.lr > 0.0) || !(0.0..1.0).contains(&self.momentum) {
            return bad("lr must be positive and momentum in [0, 1)");
        }
        Ok(())
    }
}

/// I iff `p_i > threshold`.
pub fn decide(p_i: f64, threshold: f64) -> Label {
    Label::from_bool(p_i > threshold)
}

/// Soft target `[p_I, p_O]`: `count / pool` when counts exist, else the hard label.
pub fn token_target(token: &Token, pool: Option<u32>) -> [f64; 2] {
    let p = match (token.annotator_count, pool) {
        (Some(c), Some(a)) if a > 0 => (c as f64 / a as f64).clamp(0.0, 1.0),
        _ => {
            if token.label.is_ec() {
                1.0
            } else {
                0.0
            }
        }
    };
    [p, 1.0 - p]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tok(label: Label, count: Option<u32>) -> Token {
        Token {
            word: "w".into(),
            start: 0.0,
            end: 0.1,
            label,
            annotator_count: count,
            pos: None,
        }
    }

    #[test]
    fn decide_is_strict() {
        assert_eq!(decide(0.16, 0.15), Label::I);
        assert_eq!(decide(0.15, 0.15), Label::O);
        assert_eq!(decide(0.0, 0.15), Label::O);
    }

    #[test]
    fn targets() {
        assert_eq!(token_target(&tok(Label::I, Some(3)), Some(4)), [0.75, 0.25]);
        assert_eq!(token_target(&tok(Label::I, None), None), [1.0, 0.0]);
        assert_eq!(token_target(&tok(Label::O, Some(0)), Some(4)), [0.0, 1.0]);
    }

    #[test]
    fn config_validation() {
        assert!(TaggerConfig::default().validate().is_ok());
        let c = TaggerConfig {
            decision_threshold: 1.0,
            ..Default::default()
        };
        assert!(c.validate().is_err());
        assert_eq!(TaggerConfig { input: InputKind::Ef, ..Default::default() }.input_dim(), 612);
    }
}
