//! Combining the acoustic and lexical channels: early fusion of word
//! vectors, learned late fusion over logits, the certainty cascade and the
//! oracle combiner.

mod late;

pub use late::{
    pack_logits, predict_late_fusion, train_late_fusion, LateFusion, LateFusionConfig, LateMethod,
};

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::corpus::Label;
use crate::error::{Error, Result};

pub const WTE_DIM: usize = 100;
pub const WAE_DIM: usize = 512;

#[derive(Debug, Clone, PartialEq)]
pub struct FusedVector {
    pub vector: Vec<f64>,
    pub word_ref: Option<(String, usize)>,
}

/// Concatenates a text vector and an acoustic vector, text first.
pub fn early_fuse(wte: &[f64], wae: &[f64]) -> Result<FusedVector> {
    early_fuse_dims(wte, wae, WTE_DIM, WAE_DIM)
}

pub fn early_fuse_dims(wte: &[f64], wae: &[f64], wte_dim: usize, wae_dim: usize) -> Result<FusedVector> {
    if wte.len() != wte_dim || wae.len() != wae_dim {
        return Err(Error::Shape(format!(
            "early fusion expects {wte_dim} + {wae_dim} values, got {} + {}",
            wte.len(),
            wae.len()
        )));
    }
    let mut vector = Vec::with_capacity(wte_dim + wae_dim);
    vector.extend_from_slice(wte);
    vector.extend_from_slice(wae);
    Ok(FusedVector {
        vector,
        word_ref: None,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CertaintyState {
    CertainPositive,
    Uncertain,
    CertainNegative,
}

impl fmt::Display for CertaintyState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CertaintyState::CertainPositive => "certain_positive",
            CertaintyState::Uncertain => "uncertain",
            CertaintyState::CertainNegative => "certain_negative",
        })
    }
}

/// Positive above `p_db + epsilon`, negative below `p_db - epsilon`,
/// uncertain on the closed interval between.
pub fn certainty(p_ec: f64, p_db: f64, epsilon: f64) -> CertaintyState {
    if p_ec > p_db + epsilon {
        CertaintyState::CertainPositive
    } else if p_ec < p_db - epsilon {
        CertaintyState::CertainNegative
    } else {
        CertaintyState::Uncertain
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DlfConfig {
    pub lexical_p_db: f64,
    pub lexical_epsilon: f64,
    pub acoustic_p_db: f64,
    pub acoustic_epsilon: f64,
}

impl Default for DlfConfig {
    fn default() -> Self {
        Self {
            lexical_p_db: 0.15,
            lexical_epsilon: 0.05,
            acoustic_p_db: 0.75,
            acoustic_epsilon: 0.05,
        }
    }
}

impl DlfConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, p, e) in [
            ("lexical", self.lexical_p_db, self.lexical_epsilon),
            ("acoustic", self.acoustic_p_db, self.acoustic_epsilon),
        ] {
            if !(e >= 0.0 && p - e > 0.0 && p + e < 1.0) {
                return Err(Error::InvalidArgument(format!(
                    "{name} interval {p} +- {e} must lie inside (0, 1)"
                )));
            }
        }
        Ok(())
    }

    pub fn lexical_state(&self, p_lex: f64) -> CertaintyState {
        certainty(p_lex, self.lexical_p_db, self.lexical_epsilon)
    }

    pub fn acoustic_state(&self, p_ac: f64) -> CertaintyState {
        certainty(p_ac, self.acoustic_p_db, self.acoustic_epsilon)
    }

    pub fn decide(&self, p_lex: f64, p_ac: f64) -> DlfDecision {
        let lexical = self.lexical_state(p_lex);
        let acoustic = self.acoustic_state(p_ac);
        DlfDecision {
            p_lex,
            p_ac,
            lexical,
            acoustic,
            label: dlf_merge(lexical, acoustic),
        }
    }
}

/// The lexical channel decides when certain; the acoustic channel only
/// breaks lexical uncertainty, and only towards I.
pub fn dlf_merge(lexical: CertaintyState, acoustic: CertaintyState) -> Label {
    use CertaintyState::*;
    Label::from_bool(matches!(
        (lexical, acoustic),
        (CertainPositive, _) | (Uncertain, CertainPositive)
    ))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DlfDecision {
    pub p_lex: f64,
    pub p_ac: f64,
    pub lexical: CertaintyState,
    pub acoustic: CertaintyState,
    pub label: Label,
}

/// Gold when either prediction matches it, otherwise the shared wrong label.
pub fn oracle_combine(gold: Label, pred_a: Label, pred_t: Label) -> Label {
    if pred_a == gold || pred_t == gold {
        gold
    } else {
        pred_a
    }
}

pub fn oracle_stream(gold: &[Label], pred_a: &[Label], pred_t: &[Label]) -> Result<Vec<Label>> {
    if gold.len() != pred_a.len() || gold.len() != pred_t.len() {
        return Err(Error::Shape(format!(
            "oracle streams differ in length: {} / {} / {}",
            gold.len(),
            pred_a.len(),
            pred_t.len()
        )));
    }
    Ok(gold
        .iter()
        .zip(pred_a)
        .zip(pred_t)
        .map(|((&g, &a), &t)| oracle_combine(g, a, t))
        .collect())
}

/// Decision dump: narrative_id, token_index, p_lex, p_ac, states, decision.
pub fn fusion_tsv(rows: &[(String, usize, DlfDecision)]) -> String {
    let mut s = String::from("narrative_id\ttoken_index\tp_lex\tp_ac\tlexical_state\tacoustic_state\tdecision\n");
    for (nid, idx, d) in rows {
        s.push_str(&format!(
            "{nid}\t{idx}\t{:.6}\t{:.6}\t{}\t{}\t{}\n",
            d.p_lex, d.p_ac, d.lexical, d.acoustic, d.label
        ));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use CertaintyState::*;

    #[test]
    fn fuse_layout() {
        let wte: Vec<f64> = (0..100).map(|i| i as f64).collect();
        let wae = vec![0.0; 512];
        let f = early_fuse(&wte, &wae).unwrap();
        assert_eq!(f.vector.len(), 612);
        assert_eq!(&f.vector[..100], &wte[..]);
        assert!(f.vector[100..].iter().all(|&v| v == 0.0));
        assert!(early_fuse(&wte[..99], &wae).is_err());
    }

    #[test]
    fn certainty_examples() {
        assert_eq!(certainty(0.30, 0.15, 0.05), CertainPositive);
        assert_eq!(certainty(0.20, 0.15, 0.05), Uncertain);
        assert_eq!(certainty(0.10, 0.15, 0.05), Uncertain);
        assert_eq!(certainty(0.05, 0.15, 0.05), CertainNegative);
    }

    #[test]
    fn merge_examples() {
        let c = DlfConfig::default();
        assert_eq!(dlf_merge(CertainPositive, CertainNegative), Label::I);
        assert_eq!(c.decide(0.17, 0.90).label, Label::I);
        assert_eq!(dlf_merge(CertainNegative, CertainPositive), Label::O);
        assert_eq!(dlf_merge(Uncertain, Uncertain), Label::O);
    }

    #[test]
    fn oracle_examples() {
        assert_eq!(oracle_combine(Label::I, Label::O, Label::I), Label::I);
        assert_eq!(oracle_combine(Label::I, Label::O, Label::O), Label::O);
        assert_eq!(oracle_combine(Label::O, Label::I, Label::I), Label::I);
        assert!(oracle_stream(&[Label::I], &[], &[Label::I]).is_err());
    }

    #[test]
    fn config_bounds() {
        assert!(DlfConfig::default().validate().is_ok());
        let bad = DlfConfig {
            acoustic_p_db: 0.97,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}
