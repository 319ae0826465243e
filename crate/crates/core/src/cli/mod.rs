//! The `ecpipe` command line: one subcommand per pipeline stage, with
//! artifacts passed between stages through a work directory.

use std::collections::{BTreeMap, BTreeSet};
use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::acoustic::{resnet_checkpoint, resnet_from_checkpoint, wae_csv, ResNet};
use crate::config::PipelineConfig;
use crate::corpus::synth::{ALIGNMENT_FILE, ANNOTATION_FILE};
use crate::corpus::{ingest_files, split_folds, synth_generate, Corpus, FoldPlan};
use crate::dsp::prosody::prosody_csv;
use crate::dsp::FeatTensor;
use crate::error::{Error, Result};
use crate::eval::{
    extract_corpus_features, features_checkpoint, features_from_checkpoint, fold_split, load_embedding_table,
    noun_prosody, pretrain_model, prosody_analysis, results_table, rows_to_map, score_fold, tagger_outputs,
    tagger_sequences, train_acoustic_fold, train_late_fold, train_tagger_fold, AcousticFold, Experiment,
    ExperimentResult, FoldMetrics, FoldOutputs, FoldSplit, TokenIndex,
};
use crate::fusion::{fusion_tsv, LateFusion, LateMethod};
use crate::nnet::Checkpoint;
use crate::tagger::{load_tagger, prediction_tsv, save_tagger, EmbeddingTable, InputKind};

pub const CORPUS_JSON: &str = "corpus.json";
pub const FOLDS_JSON: &str = "folds.json";
pub const FEATURES_CKPT: &str = "features.ckpt";
pub const DEFAULT_WORKDIR: &str = "ecpipe-work";

#[derive(Debug, Parser)]
#[command(name = "ecpipe", version, about = "Emotion carrier detection pipeline")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Option<Command>,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// Pipeline configuration (JSON).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Overrides the configured work directory.
    #[arg(long, global = true)]
    pub workdir: Option<PathBuf>,
    /// Starts from the reduced single-core configuration instead of the full one.
    #[arg(long, global = true)]
    pub desk: bool,
    /// Prints the default configuration and exits.
    #[arg(long)]
    pub print_default_config: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generates a synthetic corpus (audio, alignments, annotations, word vectors).
    Synth,
    /// Reads alignments, annotations and audio from the corpus directory.
    Ingest,
    /// Extracts MFCC tensors for every token.
    Features,
    /// Pretrains the acoustic model on synthetic neutral/emotional utterances.
    Pretrain,
    /// Fine-tunes one acoustic model per fold.
    TrainAcoustic,
    /// Trains the sequence taggers each selected experiment needs.
    TrainTagger(ExperimentArgs),
    /// Trains late fusion models and writes decision-level fusion predictions.
    Fuse(ExperimentArgs),
    /// Scores experiments over all folds and writes results JSON.
    Evaluate(ExperimentArgs),
    /// Compares prosodic features of EC nouns against other nouns.
    Prosody,
    /// Writes word acoustic embeddings to CSV.
    ExportWae(ExportArgs),
}

#[derive(Debug, Args)]
pub struct ExperimentArgs {
    /// Experiment name; repeat or comma-separate. Defaults to the configured list.
    #[arg(long, value_delimiter = ',')]
    pub experiment: Vec<String>,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    /// Restrict the export to one word type.
    #[arg(long)]
    pub word: Option<String>,
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return code;
        }
    };
    if cli.global.print_default_config {
        let cfg = if cli.global.desk { PipelineConfig::desk() } else { PipelineConfig::default() };
        println!("{}", cfg.to_json());
        return 0;
    }
    let Some(command) = cli.command else {
        eprintln!("error: a subcommand is required\n\nFor more information, try '--help'.");
        return 2;
    };
    match load_config(&cli.global).and_then(|cfg| execute(&cfg, &command)) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

pub fn load_config(g: &GlobalArgs) -> Result<PipelineConfig> {
    let mut cfg = match &g.config {
        Some(p) => PipelineConfig::load(p)?,
        None if g.desk => PipelineConfig::desk(),
        None => PipelineConfig::default(),
    };
    if let Some(s) = g.seed {
        cfg.seed = s;
    }
    if let Some(w) = &g.workdir {
        cfg.paths.workdir = w.clone();
    }
    if cfg.paths.workdir.as_os_str().is_empty() {
        cfg.paths.workdir = PathBuf::from(DEFAULT_WORKDIR);
    }
    Ok(cfg)
}

pub fn execute(cfg: &PipelineConfig, command: &Command) -> Result<()> {
    let w = Workdir::new(&cfg.paths.workdir);
    match command {
        Command::Synth => cmd_synth(cfg, &w),
        Command::Ingest => cmd_ingest(cfg, &w),
        Command::Features => cmd_features(&w),
        Command::Pretrain => cmd_pretrain(cfg, &w),
        Command::TrainAcoustic => cmd_train_acoustic(cfg, &w),
        Command::TrainTagger(a) => cmd_train_tagger(cfg, &w, &experiments(cfg, a)?),
        Command::Fuse(a) => cmd_fuse(cfg, &w, &experiments(cfg, a)?),
        Command::Evaluate(a) => cmd_evaluate(cfg, &w, &experiments(cfg, a)?),
        Command::Prosody => cmd_prosody(&w),
        Command::ExportWae(a) => cmd_export_wae(&w, a.word.as_deref()),
    }
}

fn experiments(cfg: &PipelineConfig, a: &ExperimentArgs) -> Result<Vec<Experiment>> {
    let names = if a.experiment.is_empty() { &cfg.eval.experiments } else { &a.experiment };
    let mut out = Vec::new();
    for n in names {
        let e: Experiment = n.parse()?;
        if !out.contains(&e) {
            out.push(e);
        }
    }
    if out.is_empty() {
        return Err(Error::InvalidArgument("no experiments selected".into()));
    }
    Ok(out)
}

/// Artifact locations inside a work directory.
#[derive(Debug, Clone)]
pub struct Workdir {
    pub root: PathBuf,
}

impl Workdir {
    pub fn new(root: &Path) -> Self {
        Self { root: root.to_path_buf() }
    }

    pub fn corpus_json(&self) -> PathBuf {
        self.root.join(CORPUS_JSON)
    }

    pub fn folds_json(&self) -> PathBuf {
        self.root.join(FOLDS_JSON)
    }

    pub fn features(&self) -> PathBuf {
        self.root.join(FEATURES_CKPT)
    }

    pub fn model(&self, name: &str) -> PathBuf {
        self.root.join("models").join(name)
    }

    pub fn pretrained(&self) -> PathBuf {
        self.model("pretrained.ckpt")
    }

    pub fn acoustic(&self, fold: usize) -> PathBuf {
        self.model(&format!("acoustic_fold{fold}.ckpt"))
    }

    pub fn tagger(&self, kind: InputKind, fold: usize) -> PathBuf {
        self.model(&format!("tagger_{}_fold{fold}.ckpt", kind_name(kind)))
    }

    pub fn late(&self, method: LateMethod, fold: usize) -> PathBuf {
        self.model(&format!("lf_{}_fold{fold}.ckpt", method_name(method)))
    }

    pub fn predictions(&self, name: &str) -> PathBuf {
        self.root.join("predictions").join(name)
    }

    pub fn results(&self, name: &str) -> PathBuf {
        self.root.join("results").join(name)
    }
}

fn kind_name(kind: InputKind) -> &'static str {
    match kind {
        InputKind::Wte => "wte",
        InputKind::Wae => "wae",
        InputKind::Ef => "ef",
    }
}

fn method_name(method: LateMethod) -> &'static str {
    match method {
        LateMethod::Fcnn => "fcnn",
        LateMethod::Logreg => "logreg",
    }
}

fn write_file(path: &Path, contents: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))?;
    log::info!("wrote {}", path.display());
    Ok(())
}

fn save_ck(ck: &Checkpoint, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    ck.save(path)?;
    log::info!("wrote {}", path.display());
    Ok(())
}

fn read_input(path: &Path) -> Result<String> {
    if !path.exists() {
        return Err(Error::MissingInput(path.to_path_buf()));
    }
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn json_line<T: serde::Serialize>(v: &T) -> Vec<u8> {
    let mut s = serde_json::to_string_pretty(v).expect("value serializes");
    s.push('\n');
    s.into_bytes()
}

fn load_corpus(w: &Workdir) -> Result<Corpus> {
    let p = w.corpus_json();
    let c: Corpus = serde_json::from_str(&read_input(&p)?)?;
    Ok(c)
}

fn load_folds(w: &Workdir, corpus: &Corpus) -> Result<FoldPlan> {
    let p = w.folds_json();
    let plan: FoldPlan = serde_json::from_str(&read_input(&p)?)?;
    if !plan.covers(corpus) {
        return Err(Error::InvalidArgument(format!("{} does not cover the corpus", p.display())));
    }
    Ok(plan)
}

fn load_features(w: &Workdir, corpus: &Corpus) -> Result<Vec<FeatTensor>> {
    let p = w.features();
    if !p.exists() {
        return Err(Error::MissingInput(p));
    }
    features_from_checkpoint(corpus, &Checkpoint::load(&p)?)
}

fn write_corpus(cfg: &PipelineConfig, w: &Workdir, corpus: &Corpus) -> Result<()> {
    let plan = split_folds(corpus, cfg.eval.k, cfg.seed)?;
    write_file(&w.corpus_json(), &json_line(corpus))?;
    write_file(&w.folds_json(), &json_line(&plan))?;
    log::info!(
        "{} narratives, {} tokens, EC fraction {:.4}, fold sizes {:?}",
        corpus.stats.n_narratives,
        corpus.stats.n_tokens,
        corpus.stats.ec_token_fraction,
        plan.fold_sizes()
    );
    Ok(())
}

fn cmd_synth(cfg: &PipelineConfig, w: &Workdir) -> Result<()> {
    let sc = synth_generate(&cfg.synth, cfg.seed, &cfg.corpus_dir())?;
    write_corpus(cfg, w, &sc.corpus)
}

fn cmd_ingest(cfg: &PipelineConfig, w: &Workdir) -> Result<()> {
    let dir = cfg.corpus_dir();
    let (ctm, ann) = (dir.join(ALIGNMENT_FILE), dir.join(ANNOTATION_FILE));
    for p in [&ctm, &ann] {
        if !p.exists() {
            return Err(Error::MissingInput(p.clone()));
        }
    }
    let corpus = ingest_files(&ctm, &ann, &cfg.audio_dir())?;
    write_corpus(cfg, w, &corpus)
}

fn cmd_features(w: &Workdir) -> Result<()> {
    let corpus = load_corpus(w)?;
    let feats = extract_corpus_features(&corpus)?;
    save_ck(&features_checkpoint(&feats)?, &w.features())
}

fn cmd_pretrain(cfg: &PipelineConfig, w: &Workdir) -> Result<()> {
    let (mut model, report) = pretrain_model(cfg)?;
    log::info!("pretraining: best dev accuracy {:.4} at epoch {:?}", report.best_dev, report.best_epoch);
    let mut ck = resnet_checkpoint(&mut model);
    ck.set_meta_u64("seed", cfg.seed);
    save_ck(&ck, &w.pretrained())
}

fn load_pretrained(cfg: &PipelineConfig, w: &Workdir) -> Result<Option<ResNet>> {
    if !cfg.model.pretrain.enabled {
        return Ok(None);
    }
    Ok(Some(resnet_from_checkpoint(&Checkpoint::load(&w.pretrained())?)?))
}

fn cmd_train_acoustic(cfg: &PipelineConfig, w: &Workdir) -> Result<()> {
    let corpus = load_corpus(w)?;
    let plan = load_folds(w, &corpus)?;
    let feats = load_features(w, &corpus)?;
    let pretrained = load_pretrained(cfg, w)?;
    for fold in 0..plan.k {
        let split = fold_split(&corpus, &plan, fold)?;
        let (mut ac, report) = train_acoustic_fold(cfg, &corpus, &split, &feats, pretrained.as_ref())?;
        log::info!("fold {fold}: acoustic best dev F1 {:.4}", report.best_dev);
        save_ck(&ac.to_checkpoint()?, &w.acoustic(fold))?;
    }
    Ok(())
}

fn load_acoustic(w: &Workdir, fold: usize) -> Result<AcousticFold> {
    AcousticFold::from_checkpoint(&Checkpoint::load(&w.acoustic(fold))?)
}

fn tagger_kinds(exps: &[Experiment]) -> Vec<InputKind> {
    let set: BTreeSet<InputKind> = exps.iter().flat_map(|e| e.tagger_kinds()).collect();
    set.into_iter().collect()
}

fn cmd_train_tagger(cfg: &PipelineConfig, w: &Workdir, exps: &[Experiment]) -> Result<()> {
    let kinds = tagger_kinds(exps);
    if kinds.is_empty() {
        log::info!("no selected experiment uses a sequence tagger");
        return Ok(());
    }
    let corpus = load_corpus(w)?;
    let plan = load_folds(w, &corpus)?;
    let table: Option<EmbeddingTable> = if kinds.iter().any(|k| k.uses_text()) {
        Some(load_embedding_table(cfg, &corpus)?)
    } else {
        None
    };
    let feats = if kinds.iter().any(|k| k.uses_audio()) {
        Some(load_features(w, &corpus)?)
    } else {
        None
    };
    for fold in 0..plan.k {
        let split = fold_split(&corpus, &plan, fold)?;
        let wae = match &feats {
            Some(f) => Some(load_acoustic(w, fold)?.outputs(f)?.wae),
            None => None,
        };
        for &kind in &kinds {
            let (mut tagger, report) =
                train_tagger_fold(cfg, &corpus, &split, kind, table.as_ref(), wae.as_deref())?;
            log::info!("fold {fold}: tagger {} best dev F1 {:.4}", kind_name(kind), report.best_dev_f1);
            let path = w.tagger(kind, fold);
            if let Some(dir) = path.parent() {
                std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            }
            save_tagger(&mut tagger, &path)?;
            log::info!("wrote {}", path.display());
            let wae = if kind.uses_audio() { wae.as_deref() } else { None };
            let seqs = tagger_sequences(&corpus, &split.test, wae);
            let rows = seqs
                .iter()
                .map(|s| Ok((s, tagger.predict_sequence(s)?)))
                .collect::<Result<Vec<_>>>()?;
            let name = format!("tagger_{}_fold{fold}.tsv", kind_name(kind));
            write_file(&w.predictions(&name), prediction_tsv(&rows).as_bytes())?;
        }
    }
    Ok(())
}

/// Loads the fold outputs that `exps` need from stored checkpoints.
fn fold_outputs(
    w: &Workdir,
    corpus: &Corpus,
    fold: usize,
    exps: &[Experiment],
    feats: Option<&[FeatTensor]>,
) -> Result<FoldOutputs> {
    let mut out = FoldOutputs::default();
    let kinds = tagger_kinds(exps);
    let need_acoustic = exps.iter().any(|e| e.needs_acoustic()) || kinds.iter().any(|k| k.uses_audio());
    if need_acoustic {
        let ac = load_acoustic(w, fold)?;
        let feats = feats.ok_or_else(|| Error::MissingInput(w.features()))?;
        out.acoustic = Some(ac.outputs(feats)?);
    }
    let wae = out.acoustic.as_ref().map(|a| a.wae.as_slice());
    for kind in kinds {
        let tagger = load_tagger(&w.tagger(kind, fold))?;
        if tagger.config.input != kind {
            return Err(Error::Checkpoint(format!(
                "{} holds a {:?} tagger",
                w.tagger(kind, fold).display(),
                tagger.config.input
            )));
        }
        out.lexical.insert(kind, tagger_outputs(&tagger, corpus, wae)?);
    }
    Ok(out)
}

fn needs_features(exps: &[Experiment]) -> bool {
    exps.iter().any(|e| e.needs_acoustic())
}

/// Checkpoints are checked before any heavy work so a missing model fails fast.
fn require_checkpoints(w: &Workdir, k: usize, exps: &[Experiment]) -> Result<()> {
    let kinds = tagger_kinds(exps);
    for fold in 0..k {
        let mut paths = Vec::new();
        if exps.iter().any(|e| e.needs_acoustic()) {
            paths.push(w.acoustic(fold));
        }
        paths.extend(kinds.iter().map(|&kind| w.tagger(kind, fold)));
        paths.extend(exps.iter().filter_map(|e| e.late_method()).map(|m| w.late(m, fold)));
        if let Some(p) = paths.into_iter().find(|p| !p.exists()) {
            return Err(Error::MissingArtifact(p.display().to_string()));
        }
    }
    Ok(())
}

fn cmd_fuse(cfg: &PipelineConfig, w: &Workdir, exps: &[Experiment]) -> Result<()> {
    let methods: Vec<LateMethod> = exps.iter().filter_map(|e| e.late_method()).collect();
    let dlf = exps.contains(&Experiment::Dlf);
    if methods.is_empty() && !dlf {
        log::info!("no selected experiment uses fusion");
        return Ok(());
    }
    let corpus = load_corpus(w)?;
    let plan = load_folds(w, &corpus)?;
    let base = [Experiment::Dlf];
    require_checkpoints(w, plan.k, &base)?;
    let feats = load_features(w, &corpus)?;
    let index = TokenIndex::new(&corpus);
    for fold in 0..plan.k {
        let split = fold_split(&corpus, &plan, fold)?;
        let outputs = fold_outputs(w, &corpus, fold, &base, Some(&feats))?;
        for &m in &methods {
            let mut late = train_late_fold(m, cfg, &corpus, &split, &outputs)?;
            save_ck(&late.to_checkpoint(), &w.late(m, fold))?;
        }
        if dlf {
            let tsv = dlf_rows(cfg, &corpus, &index, &split, &outputs)?;
            write_file(&w.predictions(&format!("dlf_fold{fold}.tsv")), tsv.as_bytes())?;
        }
    }
    Ok(())
}

fn dlf_rows(
    cfg: &PipelineConfig,
    corpus: &Corpus,
    index: &TokenIndex,
    split: &FoldSplit,
    outputs: &FoldOutputs,
) -> Result<String> {
    let ac = outputs
        .acoustic
        .as_ref()
        .ok_or_else(|| Error::MissingArtifact("acoustic model".into()))?;
    let lex = outputs
        .lexical
        .get(&InputKind::Wte)
        .ok_or_else(|| Error::MissingArtifact("tagger (wte)".into()))?;
    let mut rows = Vec::new();
    for &n in &split.test {
        let narr = &corpus.narratives[n];
        for t in 0..narr.tokens.len() {
            let i = index.id(n, t);
            rows.push((narr.narrative_id.clone(), t, cfg.fusion.dlf.decide(lex[i].p_i, ac.p_i[i])));
        }
    }
    Ok(fusion_tsv(&rows))
}

fn cmd_evaluate(cfg: &PipelineConfig, w: &Workdir, exps: &[Experiment]) -> Result<()> {
    let corpus = load_corpus(w)?;
    let plan = load_folds(w, &corpus)?;
    require_checkpoints(w, plan.k, exps)?;
    let feats = if needs_features(exps) { Some(load_features(w, &corpus)?) } else { None };
    let mut per_exp: BTreeMap<Experiment, Vec<_>> = BTreeMap::new();
    for fold in 0..plan.k {
        let split = fold_split(&corpus, &plan, fold)?;
        let outputs = fold_outputs(w, &corpus, fold, exps, feats.as_deref())?;
        for &exp in exps {
            let late = match exp.late_method() {
                Some(m) => Some(LateFusion::from_checkpoint(&Checkpoint::load(&w.late(m, fold))?)?),
                None => None,
            };
            let m = score_fold(exp, cfg, &corpus, &split, &outputs, late.as_ref())?;
            log::info!("fold {fold}: {exp} F1 {:.4}", m.f1_i);
            per_exp.entry(exp).or_default().push(m);
        }
    }
    let mut results = Vec::new();
    for &exp in exps {
        let folds = FoldMetrics::aggregate(per_exp.remove(&exp).unwrap_or_default())?;
        let r = ExperimentResult::new(exp, cfg, folds);
        write_file(&w.results(&format!("{}.json", exp.name())), r.to_json().as_bytes())?;
        results.push(r);
    }
    let table = results_table(&results);
    print!("{table}");
    write_file(&w.results("table.txt"), table.as_bytes())
}

fn cmd_prosody(w: &Workdir) -> Result<()> {
    let corpus = load_corpus(w)?;
    let rows = noun_prosody(&corpus)?;
    write_file(&w.root.join("prosody.csv"), prosody_csv(&rows).as_bytes())?;
    let report = prosody_analysis(&corpus, &rows_to_map(&rows));
    for f in &report.features {
        match &f.result {
            Some(r) => log::info!("{}: t {:.3} p {:.4}{}", f.feature, r.t, r.p, if r.significant { " *" } else { "" }),
            None => log::info!("{}: untested ({})", f.feature, f.note.as_deref().unwrap_or("")),
        }
    }
    write_file(&w.root.join("prosody.json"), &json_line(&report))
}

fn cmd_export_wae(w: &Workdir, word: Option<&str>) -> Result<()> {
    let corpus = load_corpus(w)?;
    let plan = load_folds(w, &corpus)?;
    let feats = load_features(w, &corpus)?;
    let index = TokenIndex::new(&corpus);
    let mut rows = Vec::new();
    for fold in 0..plan.k {
        let split = fold_split(&corpus, &plan, fold)?;
        let ac = load_acoustic(w, fold)?;
        let mut ids = Vec::new();
        for &n in &split.test {
            let narr = &corpus.narratives[n];
            for (t, tok) in narr.tokens.iter().enumerate() {
                if word.map_or(true, |wd| tok.word == wd) {
                    ids.push((n, t, index.id(n, t)));
                }
            }
        }
        let sel: Vec<FeatTensor> = ids.iter().map(|&(_, _, i)| feats[i].clone()).collect();
        let out = ac.outputs(&sel)?;
        for ((n, t, _), v) in ids.into_iter().zip(out.wae) {
            let narr = &corpus.narratives[n];
            let tok = &narr.tokens[t];
            rows.push((tok.word.clone(), narr.narrative_id.clone(), t, tok.label, v));
        }
    }
    if rows.is_empty() {
        return Err(Error::InvalidArgument(format!("word {:?} does not occur in the corpus", word.unwrap_or(""))));
    }
    rows.sort_by(|a, b| (&a.1, a.2).cmp(&(&b.1, b.2)));
    let name = match word {
        Some(wd) => format!("wae_{wd}.csv"),
        None => "wae.csv".to_string(),
    };
    write_file(&w.root.join(name), wae_csv(&rows).as_bytes())
}
