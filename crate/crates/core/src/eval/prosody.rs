use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::stats::{ttest_ind, TTestResult};
use crate::corpus::Corpus;
use crate::dsp::prosody::ProsodyRow;
use crate::dsp::wav::read_wav;
use crate::dsp::{cut_word_segment, extract_f0, prosodic_features, ProsodicFeatures};
use crate::error::Result;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureTest {
    pub feature: String,
    pub n_ec: usize,
    pub n_other: usize,
    pub mean_ec: Option<f64>,
    pub mean_other: Option<f64>,
    /// `None` when the feature could not be tested.
    pub result: Option<TTestResult>,
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProsodyReport {
    pub n_ec_nouns: usize,
    pub n_other_nouns: usize,
    pub features: Vec<FeatureTest>,
}

impl ProsodyReport {
    pub fn feature(&self, name: &str) -> Option<&FeatureTest> {
        self.features.iter().find(|f| f.feature == name)
    }

    pub fn significant(&self) -> Vec<&str> {
        self.features
            .iter()
            .filter(|f| f.result.is_some_and(|r| r.significant))
            .map(|f| f.feature.as_str())
            .collect()
    }
}

fn mean(x: &[f64]) -> Option<f64> {
    (!x.is_empty()).then(|| x.iter().sum::<f64>() / x.len() as f64)
}

/// Per-noun prosodic features, read from each narrative's audio.
pub fn noun_prosody(corpus: &Corpus) -> Result<Vec<ProsodyRow>> {
    let mut rows = Vec::new();
    for n in &corpus.narratives {
        if !n.tokens.iter().any(|t| t.is_noun()) {
            continue;
        }
        let signal = read_wav(&n.audio_path)?;
        for (i, t) in n.tokens.iter().enumerate().filter(|(_, t)| t.is_noun()) {
            let seg = cut_word_segment(&signal, t.start, t.end)?;
            let f0 = extract_f0(&seg);
            rows.push(ProsodyRow {
                narrative_id: n.narrative_id.clone(),
                token_index: i,
                word: t.word.clone(),
                label: t.label.to_string(),
                features: prosodic_features(&seg, &f0)?,
            });
        }
    }
    Ok(rows)
}

/// t-tests of every prosodic feature between EC nouns and other nouns.
/// `features` is keyed by (narrative_id, token_index); non-noun entries
/// are ignored.
pub fn prosody_analysis(corpus: &Corpus, features: &BTreeMap<(String, usize), ProsodicFeatures>) -> ProsodyReport {
    let mut ec = Vec::new();
    let mut other = Vec::new();
    for n in &corpus.narratives {
        for (i, t) in n.tokens.iter().enumerate().filter(|(_, t)| t.is_noun()) {
            if let Some(f) = features.get(&(n.narrative_id.clone(), i)) {
                if t.label.is_ec() {
                    ec.push(f);
                } else {
                    other.push(f);
                }
            }
        }
    }
    let column = |group: &[&ProsodicFeatures], k: usize| -> Vec<f64> {
        group.iter().filter_map(|f| f.values()[k]).collect()
    };
    let features = ProsodicFeatures::FIELDS
        .iter()
        .enumerate()
        .map(|(k, name)| {
            let a = column(&ec, k);
            let b = column(&other, k);
            let (result, note) = if a.len() < 2 || b.len() < 2 {
                (None, Some("fewer than 2 samples in a group".to_string()))
            } else {
                match ttest_ind(&a, &b) {
                    Ok(r) => (Some(r), None),
                    Err(e) => (None, Some(e.to_string())),
                }
            };
            FeatureTest {
                feature: name.to_string(),
                n_ec: a.len(),
                n_other: b.len(),
                mean_ec: mean(&a),
                mean_other: mean(&b),
                result,
                note,
            }
        })
        .collect();
    ProsodyReport {
        n_ec_nouns: ec.len(),
        n_other_nouns: other.len(),
        features,
    }
}

pub fn rows_to_map(rows: &[ProsodyRow]) -> BTreeMap<(String, usize), ProsodicFeatures> {
    rows.iter()
        .map(|r| ((r.narrative_id.clone(), r.token_index), r.features.clone()))
        .collect()
}
