use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::data::{
    fold_split, gold_labels, tagger_outputs, train_acoustic_fold, train_tagger_fold, AcousticOutputs, FoldSplit,
    TokenIndex,
};
use super::metrics::{baseline_predictions, prf1_class_i, BaselinePolicy, FoldMetrics, Metrics};
use crate::acoustic::ResNet;
use crate::config::{derive_seed, PipelineConfig};
use crate::corpus::{Corpus, FoldPlan, Label};
use crate::dsp::FeatTensor;
use crate::error::{Error, Result};
use crate::fusion::{oracle_stream, pack_logits, train_late_fusion, LateFusion, LateFusionConfig, LateMethod};
use crate::tagger::{decide, EmbeddingTable, InputKind, TokenPrediction};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Experiment {
    Resnet,
    StWte,
    StWae,
    StEf,
    LfFcnn,
    LfLogreg,
    Dlf,
    Oracle,
    BaselineEqual,
    BaselineClass,
}

impl Experiment {
    pub const ALL: [Experiment; 10] = [
        Experiment::BaselineEqual,
        Experiment::BaselineClass,
        Experiment::Resnet,
        Experiment::StWte,
        Experiment::StWae,
        Experiment::StEf,
        Experiment::LfFcnn,
        Experiment::LfLogreg,
        Experiment::Dlf,
        Experiment::Oracle,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Experiment::Resnet => "resnet",
            Experiment::StWte => "st_wte",
            Experiment::StWae => "st_wae",
            Experiment::StEf => "st_ef",
            Experiment::LfFcnn => "lf_fcnn",
            Experiment::LfLogreg => "lf_logreg",
            Experiment::Dlf => "dlf",
            Experiment::Oracle => "oracle",
            Experiment::BaselineEqual => "baseline_equal",
            Experiment::BaselineClass => "baseline_class",
        }
    }

    pub fn needs_acoustic(self) -> bool {
        !matches!(
            self,
            Experiment::StWte | Experiment::BaselineEqual | Experiment::BaselineClass
        )
    }

    /// Tagger variants whose predictions the experiment reads.
    pub fn tagger_kinds(self) -> Vec<InputKind> {
        match self {
            Experiment::StWae => vec![InputKind::Wae],
            Experiment::StEf => vec![InputKind::Ef],
            Experiment::Resnet | Experiment::BaselineEqual | Experiment::BaselineClass => Vec::new(),
            _ => vec![InputKind::Wte],
        }
    }

    pub fn late_method(self) -> Option<LateMethod> {
        match self {
            Experiment::LfFcnn => Some(LateMethod::Fcnn),
            Experiment::LfLogreg => Some(LateMethod::Logreg),
            _ => None,
        }
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Experiment {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_lowercase().replace('-', "_");
        Experiment::ALL
            .into_iter()
            .find(|e| e.name() == norm)
            .ok_or_else(|| {
                let names: Vec<&str> = Experiment::ALL.iter().map(|e| e.name()).collect();
                Error::InvalidArgument(format!("unknown experiment {s:?}; expected one of {}", names.join(", ")))
            })
    }
}

/// Model outputs over every token of the corpus for one fold.
#[derive(Debug, Clone, Default)]
pub struct FoldOutputs {
    pub acoustic: Option<AcousticOutputs>,
    pub lexical: BTreeMap<InputKind, Vec<TokenPrediction>>,
}

impl FoldOutputs {
    fn acoustic(&self) -> Result<&AcousticOutputs> {
        self.acoustic
            .as_ref()
            .ok_or_else(|| Error::MissingArtifact("acoustic model".into()))
    }

    fn lexical(&self, kind: InputKind) -> Result<&[TokenPrediction]> {
        self.lexical
            .get(&kind)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::MissingArtifact(format!("tagger ({kind:?})")))
    }
}

fn prior_i(gold: &[Label], ids: &[usize]) -> f64 {
    ids.iter().filter(|&&i| gold[i].is_ec()).count() as f64 / ids.len().max(1) as f64
}

/// Learned late fusion trained on the training-fold logit pairs.
pub fn train_late_fold(
    method: LateMethod,
    cfg: &PipelineConfig,
    corpus: &Corpus,
    split: &FoldSplit,
    outputs: &FoldOutputs,
) -> Result<LateFusion> {
    let index = TokenIndex::new(corpus);
    let gold = gold_labels(corpus);
    let ids = index.ids_of(corpus, &split.train);
    let ac = outputs.acoustic()?;
    let lex = outputs.lexical(InputKind::Wte)?;
    let a: Vec<[f64; 2]> = ids.iter().map(|&i| ac.logits[i]).collect();
    let t: Vec<[f64; 2]> = ids.iter().map(|&i| lex[i].logits).collect();
    let labels: Vec<Label> = ids.iter().map(|&i| gold[i]).collect();
    let lc = LateFusionConfig {
        seed: derive_seed(cfg.seed, &format!("late_{method:?}"), split.roles.test),
        ..cfg.fusion.late.clone()
    };
    train_late_fusion(method, &pack_logits(&a, &t)?, &labels, &lc)
}

/// Test-fold predictions of one experiment.
pub fn fold_predictions(
    exp: Experiment,
    cfg: &PipelineConfig,
    corpus: &Corpus,
    split: &FoldSplit,
    outputs: &FoldOutputs,
    late: Option<&LateFusion>,
) -> Result<(Vec<Label>, Vec<Label>)> {
    let index = TokenIndex::new(corpus);
    let all_gold = gold_labels(corpus);
    let ids = index.ids_of(corpus, &split.test);
    let gold: Vec<Label> = ids.iter().map(|&i| all_gold[i]).collect();
    let acoustic_preds = || -> Result<Vec<Label>> {
        let ac = outputs.acoustic()?;
        Ok(ids.iter().map(|&i| Label::from_bool(ac.p_i[i] > 0.5)).collect())
    };
    let lexical_preds = |kind| -> Result<Vec<Label>> {
        let lex = outputs.lexical(kind)?;
        Ok(ids
            .iter()
            .map(|&i| decide(lex[i].p_i, cfg.tagger.decision_threshold))
            .collect())
    };
    let pred = match exp {
        Experiment::Resnet => acoustic_preds()?,
        Experiment::StWte => lexical_preds(InputKind::Wte)?,
        Experiment::StWae => lexical_preds(InputKind::Wae)?,
        Experiment::StEf => lexical_preds(InputKind::Ef)?,
        Experiment::LfFcnn | Experiment::LfLogreg => {
            let model = late.ok_or_else(|| Error::MissingArtifact(format!("late fusion model ({exp})")))?;
            let ac = outputs.acoustic()?;
            let lex = outputs.lexical(InputKind::Wte)?;
            let a: Vec<[f64; 2]> = ids.iter().map(|&i| ac.logits[i]).collect();
            let t: Vec<[f64; 2]> = ids.iter().map(|&i| lex[i].logits).collect();
            model
                .predict(&pack_logits(&a, &t)?)?
                .into_iter()
                .map(|p| Label::from_bool(p > 0.5))
                .collect()
        }
        Experiment::Dlf => {
            let ac = outputs.acoustic()?;
            let lex = outputs.lexical(InputKind::Wte)?;
            ids.iter()
                .map(|&i| cfg.fusion.dlf.decide(lex[i].p_i, ac.p_i[i]).label)
                .collect()
        }
        Experiment::Oracle => oracle_stream(&gold, &acoustic_preds()?, &lexical_preds(InputKind::Wte)?)?,
        Experiment::BaselineEqual | Experiment::BaselineClass => {
            let policy = if exp == Experiment::BaselineEqual {
                BaselinePolicy::EqualPriors
            } else {
                BaselinePolicy::ClassPriors
            };
            let prior = prior_i(&all_gold, &index.ids_of(corpus, &split.train));
            baseline_predictions(
                gold.len(),
                prior,
                policy,
                derive_seed(cfg.seed, exp.name(), split.roles.test),
            )
        }
    };
    Ok((gold, pred))
}

pub fn score_fold(
    exp: Experiment,
    cfg: &PipelineConfig,
    corpus: &Corpus,
    split: &FoldSplit,
    outputs: &FoldOutputs,
    late: Option<&LateFusion>,
) -> Result<Metrics> {
    let (gold, pred) = fold_predictions(exp, cfg, corpus, split, outputs, late)?;
    prf1_class_i(&gold, &pred)
}

/// Cross-validation result of one experiment, as written to disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub experiment: String,
    pub seed: u64,
    pub config_hash: String,
    pub k: usize,
    pub per_fold: Vec<Metrics>,
    pub mean: Metrics,
    pub std: Metrics,
}

impl ExperimentResult {
    pub fn new(exp: Experiment, cfg: &PipelineConfig, folds: FoldMetrics) -> Self {
        Self {
            experiment: exp.name().to_string(),
            seed: cfg.seed,
            config_hash: cfg.hash(),
            k: folds.per_fold.len(),
            per_fold: folds.per_fold,
            mean: folds.mean,
            std: folds.std,
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("result serializes");
        s.push('\n');
        s
    }
}

/// Plain-text table: mean(std) of P and R in percent and F1 as a fraction.
pub fn results_table(results: &[ExperimentResult]) -> String {
    let mut s = format!("{:<16} {:>14} {:>14} {:>14}\n", "model", "P", "R", "F1");
    for r in results {
        s.push_str(&format!(
            "{:<16} {:>14} {:>14} {:>14}\n",
            r.experiment,
            format!("{:.1} ({:.1})", r.mean.precision_i, r.std.precision_i),
            format!("{:.1} ({:.1})", r.mean.recall_i, r.std.recall_i),
            format!("{:.2} ({:.2})", r.mean.f1_i, r.std.f1_i),
        ));
    }
    s
}

/// Everything a full in-memory run needs besides the config.
#[derive(Debug, Clone, Copy)]
pub struct CvInputs<'a> {
    pub corpus: &'a Corpus,
    pub plan: &'a FoldPlan,
    pub features: Option<&'a [FeatTensor]>,
    pub embeddings: Option<&'a EmbeddingTable>,
    pub pretrained: Option<&'a ResNet>,
}

/// Trains every component the experiments need, fold by fold, and scores
/// each experiment on the held-out fold.
pub fn run_cv(cfg: &PipelineConfig, inputs: CvInputs<'_>, experiments: &[Experiment]) -> Result<Vec<ExperimentResult>> {
    if experiments.is_empty() {
        return Err(Error::InvalidArgument("no experiments to run".into()));
    }
    let corpus = inputs.corpus;
    let need_acoustic = experiments.iter().any(|e| e.needs_acoustic());
    let mut kinds: Vec<InputKind> = experiments.iter().flat_map(|e| e.tagger_kinds()).collect();
    kinds.sort();
    kinds.dedup();
    let mut per_exp: BTreeMap<Experiment, Vec<Metrics>> = BTreeMap::new();
    for fold in 0..inputs.plan.k {
        let split = fold_split(corpus, inputs.plan, fold)?;
        let mut outputs = FoldOutputs::default();
        if need_acoustic {
            let feats = inputs
                .features
                .ok_or_else(|| Error::MissingArtifact("features".into()))?;
            let (ac, report) = train_acoustic_fold(cfg, corpus, &split, feats, inputs.pretrained)?;
            log::info!("fold {fold}: acoustic best dev F1 {:.4}", report.best_dev);
            outputs.acoustic = Some(ac.outputs(feats)?);
        }
        let wae = outputs.acoustic.as_ref().map(|a| a.wae.as_slice());
        for &kind in &kinds {
            let (tagger, report) = train_tagger_fold(cfg, corpus, &split, kind, inputs.embeddings, wae)?;
            log::info!("fold {fold}: tagger {kind:?} best dev F1 {:.4}", report.best_dev_f1);
            let preds = tagger_outputs(&tagger, corpus, wae)?;
            outputs.lexical.insert(kind, preds);
        }
        for &exp in experiments {
            let late = match exp.late_method() {
                Some(m) => Some(train_late_fold(m, cfg, corpus, &split, &outputs)?),
                None => None,
            };
            let m = score_fold(exp, cfg, corpus, &split, &outputs, late.as_ref())?;
            log::info!("fold {fold}: {exp} F1 {:.4}", m.f1_i);
            per_exp.entry(exp).or_default().push(m);
        }
    }
    experiments
        .iter()
        .map(|&e| {
            let folds = FoldMetrics::aggregate(per_exp[&e].clone())?;
            Ok(ExperimentResult::new(e, cfg, folds))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn experiment_names_round_trip() {
        for e in Experiment::ALL {
            assert_eq!(e.name().parse::<Experiment>().unwrap(), e);
        }
        assert_eq!("baseline-equal".parse::<Experiment>().unwrap(), Experiment::BaselineEqual);
        assert!("resnet50".parse::<Experiment>().is_err());
    }

    #[test]
    fn requirements() {
        assert!(!Experiment::StWte.needs_acoustic());
        assert!(Experiment::Dlf.needs_acoustic());
        assert_eq!(Experiment::Oracle.tagger_kinds(), vec![InputKind::Wte]);
        assert!(Experiment::BaselineClass.tagger_kinds().is_empty());
    }
}
