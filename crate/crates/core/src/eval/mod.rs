//! Class-I metrics, random baselines, significance tests and
//! speaker-disjoint cross-validation.

mod cv;
mod data;
mod metrics;
mod prosody;
mod stats;

pub use metrics::{
    baseline_expected, baseline_predictions, f1_from_pr, prf1_class_i, simulate_baseline,
    BaselinePolicy, FoldMetrics, Metrics,
};
pub use prosody::{noun_prosody, prosody_analysis, rows_to_map, FeatureTest, ProsodyReport};
pub use stats::{ttest_ind, TTestResult, ALPHA};
pub use cv::{
    fold_predictions, results_table, run_cv, score_fold, train_late_fold, CvInputs, Experiment, ExperimentResult,
    FoldOutputs,
};
pub use data::{
    extract_corpus_features, features_checkpoint, features_from_checkpoint, fold_split, gold_labels,
    load_embedding_table, pretrain_model, tagger_outputs, tagger_sequences, train_acoustic_fold, train_tagger_fold,
    AcousticFold, AcousticOutputs, FoldSplit, TokenIndex,
};
