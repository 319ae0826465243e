//! The single JSON document that drives a pipeline run.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::acoustic::{ResNetConfig, TrainConfig};
use crate::corpus::{SynthConfig, UtteranceConfig};
use crate::error::{Error, Result};
use crate::fusion::{DlfConfig, LateFusionConfig};
use crate::tagger::TaggerConfig;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct PathsConfig {
    /// Directory holding `alignment.ctm`, `annotations.tsv` and `audio/`;
    /// defaults to `<workdir>/corpus`.
    pub corpus: Option<PathBuf>,
    /// Word-vector text file; defaults to `<corpus>/embeddings.txt`.
    pub embeddings: Option<PathBuf>,
    /// Audio directory; defaults to `<corpus>/audio`.
    pub audio: Option<PathBuf>,
    pub workdir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PretrainConfig {
    pub enabled: bool,
    pub utterances: UtteranceConfig,
    /// Share of the utterances held out for early stopping.
    pub dev_fraction: f64,
    pub train: TrainConfig,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            utterances: UtteranceConfig::default(),
            dev_fraction: 0.2,
            train: TrainConfig {
                max_epochs: 20,
                ..TrainConfig::default()
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub resnet: ResNetConfig,
    pub pretrain: PretrainConfig,
    pub finetune: TrainConfig,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct FusionConfig {
    pub dlf: DlfConfig,
    pub late: LateFusionConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub k: usize,
    /// Experiments run by `evaluate` when none is named.
    pub experiments: Vec<String>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            k: 5,
            experiments: crate::eval::Experiment::ALL.iter().map(|e| e.name().to_string()).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub seed: u64,
    pub paths: PathsConfig,
    pub synth: SynthConfig,
    pub model: ModelConfig,
    pub tagger: TaggerConfig,
    pub fusion: FusionConfig,
    pub eval: EvalConfig,
}

impl PipelineConfig {
    /// Reduced model sizes and epoch budgets for single-core runs.
    pub fn desk() -> Self {
        let mut c = Self::default();
        c.model.resnet.stage_channels = [8, 16, 32, 64];
        c.model.pretrain.utterances.n_per_class = 100;
        c.model.pretrain.train = TrainConfig {
            max_epochs: 6,
            samples_per_epoch: Some(256),
            ..TrainConfig::default()
        };
        c.model.finetune = TrainConfig {
            max_epochs: 8,
            patience: 4,
            samples_per_epoch: Some(512),
            dev_limit: Some(600),
            ..TrainConfig::default()
        };
        c.tagger.lstm_hidden = 32;
        c.tagger.max_epochs = 60;
        c.tagger.patience = 10;
        c
    }

    pub fn from_json(text: &str, origin: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| {
            Error::parse(format!("{origin}:{}:{}", e.line(), e.column()), e.to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text, &path.display().to_string())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.synth.validate()?;
        self.model.resnet.validate()?;
        self.tagger.validate()?;
        self.fusion.dlf.validate()?;
        if self.eval.k < 3 {
            return Err(Error::InvalidArgument("eval.k must be at least 3".into()));
        }
        if !(0.0..1.0).contains(&self.model.pretrain.dev_fraction) {
            return Err(Error::InvalidArgument("pretrain.dev_fraction must lie in [0, 1)".into()));
        }
        for e in &self.eval.experiments {
            e.parse::<crate::eval::Experiment>()?;
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form, excluding paths.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.paths = PathsConfig::default();
        let bytes = serde_json::to_vec(&c).expect("config serializes");
        hex::encode(Sha256::digest(&bytes))
    }

    pub fn corpus_dir(&self) -> PathBuf {
        self.paths
            .corpus
            .clone()
            .unwrap_or_else(|| self.paths.workdir.join("corpus"))
    }

    pub fn audio_dir(&self) -> PathBuf {
        self.paths
            .audio
            .clone()
            .unwrap_or_else(|| self.corpus_dir().join(crate::corpus::synth::AUDIO_DIR))
    }

    pub fn embeddings_path(&self) -> PathBuf {
        self.paths
            .embeddings
            .clone()
            .unwrap_or_else(|| self.corpus_dir().join(crate::corpus::synth::EMBEDDINGS_FILE))
    }
}

/// Mixes a base seed with a stage tag and fold index.
pub fn derive_seed(base: u64, tag: &str, fold: usize) -> u64 {
    let mut h = Sha256::new();
    h.update(base.to_le_bytes());
    h.update(tag.as_bytes());
    h.update((fold as u64).to_le_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("8 bytes"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_round_trip_and_hash() {
        let c = PipelineConfig::desk();
        let back = PipelineConfig::from_json(&c.to_json(), "mem").unwrap();
        assert_eq!(back, c);
        assert_eq!(back.hash(), c.hash());
        let mut d = c.clone();
        d.seed = 1;
        assert_ne!(d.hash(), c.hash());
    }

    #[test]
    fn partial_json_uses_defaults() {
        let c = PipelineConfig::from_json(r#"{"seed": 9, "tagger": {"lstm_hidden": 16}}"#, "mem").unwrap();
        assert_eq!(c.seed, 9);
        assert_eq!(c.tagger.lstm_hidden, 16);
        assert_eq!(c.tagger.decision_threshold, 0.15);
    }

    #[test]
    fn parse_error_has_location() {
        let e = PipelineConfig::from_json("{\n  \"seed\": \"x\"\n}", "c.json").unwrap_err();
        assert!(e.to_string().contains("c.json:2"), "{e}");
    }

    #[test]
    fn seeds_differ_by_fold_and_tag() {
        assert_ne!(derive_seed(1, "a", 0), derive_seed(1, "a", 1));
        assert_ne!(derive_seed(1, "a", 0), derive_seed(1, "b", 0));
        assert_eq!(derive_seed(1, "a", 0), derive_seed(1, "a", 0));
    }
}
