//! Narrative and token data model, alignment/annotation ingestion,
//! speaker-disjoint fold planning and the synthetic corpus generator.

mod folds;
mod formats;
pub mod synth;

use std::collections::{BTreeSet, HashSet};
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use folds::{split_folds, split_speakers, FoldPlan, FoldRoles};
pub use formats::{
    ingest, ingest_files, parse_annotations, parse_ctm, write_annotations, write_ctm,
    write_speakers, AnnotationRow, CtmEntry, SPEAKERS_FILE,
};
pub use synth::{synth_generate, synth_utterances, SynthConfig, SynthCorpus, SynthTruth, UtteranceConfig};

/// Part-of-speech tag that marks nouns for the prosody analysis.
pub const NOUN: &str = "NOUN";

/// Inside/outside label of a token. `I` is class index 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Label {
    I,
    O,
}

impl Label {
    pub fn index(self) -> usize {
        match self {
            Label::I => 0,
            Label::O => 1,
        }
    }

    pub fn from_index(i: usize) -> Self {
        if i == 0 {
            Label::I
        } else {
            Label::O
        }
    }

    pub fn is_ec(self) -> bool {
        self == Label::I
    }

    pub fn from_bool(ec: bool) -> Self {
        if ec {
            Label::I
        } else {
            Label::O
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Label::I => "I",
            Label::O => "O",
        })
    }
}

impl FromStr for Label {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "I" => Ok(Label::I),
            "O" => Ok(Label::O),
            other => Err(Error::InvalidArgument(format!("unknown label {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Token {
    pub word: String,
    pub start: f64,
    pub end: f64,
    pub label: Label,
    pub annotator_count: Option<u32>,
    pub pos: Option<String>,
}

impl Token {
    pub fn duration(&self) -> f64 {
        self.end - self.start
    }

    pub fn is_noun(&self) -> bool {
        self.pos.as_deref() == Some(NOUN)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Narrative {
    pub narrative_id: String,
    pub speaker_id: String,
    pub tokens: Vec<Token>,
    pub audio_path: PathBuf,
}

impl Narrative {
    pub fn validate(&self) -> Result<()> {
        let err = |message: String| Error::Ingest {
            narrative: self.narrative_id.clone(),
            message,
        };
        let mut prev_end = f64::NEG_INFINITY;
        let mut prev_start = f64::NEG_INFINITY;
        for (i, t) in self.tokens.iter().enumerate() {
            if !(t.end > t.start) || !t.start.is_finite() || t.start < 0.0 {
                return Err(err(format!("token {i} has invalid span {}..{}", t.start, t.end)));
            }
            if t.start <= prev_start || t.start < prev_end {
                return Err(err(format!("token {i} overlaps or is out of order")));
            }
            if t.label == Label::I && t.annotator_count == Some(0) {
                return Err(err(format!("token {i} is I with zero annotators")));
            }
            prev_start = t.start;
            prev_end = t.end;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub n_speakers: usize,
    pub n_narratives: usize,
    pub n_tokens: usize,
    pub ec_token_fraction: f64,
    pub vocabulary_size: usize,
    pub n_nouns: usize,
    pub n_ec_nouns: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Corpus {
    pub narratives: Vec<Narrative>,
    pub stats: CorpusStats,
}

impl Corpus {
    /// Validates narratives and computes statistics.
    pub fn new(narratives: Vec<Narrative>) -> Result<Self> {
        if narratives.is_empty() {
            return Err(Error::NoNarratives);
        }
        let mut seen = HashSet::new();
        for n in &narratives {
            if !seen.insert(n.narrative_id.as_str()) {
                return Err(Error::Ingest {
                    narrative: n.narrative_id.clone(),
                    message: "duplicate narrative id".into(),
                });
            }
            n.validate()?;
        }
        let stats = corpus_stats(&narratives);
        Ok(Self { narratives, stats })
    }

    pub fn speakers(&self) -> Vec<String> {
        let set: BTreeSet<&str> = self.narratives.iter().map(|n| n.speaker_id.as_str()).collect();
        set.into_iter().map(String::from).collect()
    }

    pub fn tokens(&self) -> impl Iterator<Item = &Token> {
        self.narratives.iter().flat_map(|n| n.tokens.iter())
    }

    pub fn narrative(&self, id: &str) -> Option<&Narrative> {
        self.narratives.iter().find(|n| n.narrative_id == id)
    }

    /// Sorted distinct word types.
    pub fn vocabulary(&self) -> Vec<String> {
        let set: BTreeSet<&str> = self.tokens().map(|t| t.word.as_str()).collect();
        set.into_iter().map(String::from).collect()
    }

    /// Maximum annotator count seen, if any counts are present.
    pub fn annotator_pool(&self) -> Option<u32> {
        self.tokens().filter_map(|t| t.annotator_count).max()
    }
}

/// Exact counts over a set of narratives.
pub fn corpus_stats(narratives: &[Narrative]) -> CorpusStats {
    let speakers: BTreeSet<&str> = narratives.iter().map(|n| n.speaker_id.as_str()).collect();
    let tokens = narratives.iter().flat_map(|n| n.tokens.iter());
    let mut n_tokens = 0;
    let mut n_ec = 0;
    let mut n_nouns = 0;
    let mut n_ec_nouns = 0;
    let mut vocab = BTreeSet::new();
    for t in tokens {
        n_tokens += 1;
        vocab.insert(t.word.as_str());
        if t.label.is_ec() {
            n_ec += 1;
        }
        if t.is_noun() {
            n_nouns += 1;
            if t.label.is_ec() {
                n_ec_nouns += 1;
            }
        }
    }
    CorpusStats {
        n_speakers: speakers.len(),
        n_narratives: narratives.len(),
        n_tokens,
        ec_token_fraction: if n_tokens == 0 {
            0.0
        } else {
            n_ec as f64 / n_tokens as f64
        },
        vocabulary_size: vocab.len(),
        n_nouns,
        n_ec_nouns,
    }
}
