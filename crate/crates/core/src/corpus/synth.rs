//! Synthetic corpora with planted lexical and acoustic EC cues.
//!
//! Every token is a three-harmonic tone on its own f0 contour, separated by
//! 50 ms of noise-only gaps, so alignments are known exactly.

use std::collections::BTreeSet;
use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, WeightedIndex};
use serde::{Deserialize, Serialize};

use super::{
    write_annotations, write_ctm, write_speakers, Corpus, CorpusStats, Label, Narrative, Token,
    NOUN, SPEAKERS_FILE,
};
use crate::dsp::wav::write_wav;
use crate::dsp::{Signal, SAMPLE_RATE};
use crate::error::{Error, Result};

pub const AUDIO_DIR: &str = "audio";
pub const ALIGNMENT_FILE: &str = "alignment.ctm";
pub const ANNOTATION_FILE: &str = "annotations.tsv";
pub const EMBEDDINGS_FILE: &str = "embeddings.txt";
pub const TRUTH_FILE: &str = "truth.json";

const HARMONICS: [f64; 3] = [1.0, 0.5, 0.25];
const BASE_AMPLITUDE: f64 = 0.1;
/// Embedding offset of EC-vocabulary words along the EC direction.
const EC_SHIFT: f64 = 2.5;
const RAMP: f64 = 0.010;
const GAP: f64 = 0.050;
const LEAD: f64 = 0.100;
const COUNT_WEIGHTS: [f64; 4] = [0.15, 0.25, 0.30, 0.30];
const SYLLABLES: [&str; 16] = [
    "ka", "lo", "mi", "ne", "tu", "ra", "se", "po", "di", "fu", "ba", "ge", "hi", "jo", "wu", "ze",
];
const OTHER_POS: [&str; 6] = ["VERB", "ADJ", "ADV", "DET", "ADP", "PRON"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_speakers: usize,
    pub narratives_per_speaker: usize,
    pub tokens_per_narrative: usize,
    pub ec_fraction: f64,
    /// P(EC | word) for words of the EC vocabulary.
    pub lexical_signal: f64,
    /// P(EC | word) for the ambiguous vocabulary.
    pub ambiguous_ec_rate: f64,
    /// Share of EC tokens drawn from the ambiguous vocabulary.
    pub acoustic_only_fraction: f64,
    /// Scales every acoustic EC cue; 0 disables them.
    pub acoustic_strength: f64,
    /// Extra cue scale for ECs drawn from the EC vocabulary. Acoustic-only
    /// ECs always get the full cue.
    pub lexical_ec_cue_scale: f64,
    pub ec_f0_offset_hz: f64,
    pub ec_f0_rise_hz: f64,
    pub ec_energy_db: f64,
    pub token_f0_jitter_hz: f64,
    pub gain_jitter_db: f64,
    pub speaker_f0_range: (f64, f64),
    pub snr_db: f64,
    pub word_duration_range: (f64, f64),
    pub n_annotators: u32,
    pub ec_vocab_size: usize,
    pub ambiguous_vocab_size: usize,
    pub neutral_vocab_size: usize,
    pub ec_noun_rate: f64,
    pub other_noun_rate: f64,
    pub embedding_dim: usize,
    pub oov_rate: f64,
    /// Skip writing audio (labels and alignments only).
    pub write_audio: bool,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_speakers: 40,
            narratives_per_speaker: 2,
            tokens_per_narrative: 100,
            ec_fraction: 0.08,
            lexical_signal: 0.6,
            ambiguous_ec_rate: 0.22,
            acoustic_only_fraction: 0.3,
            acoustic_strength: 1.0,
            lexical_ec_cue_scale: 0.2,
            ec_f0_offset_hz: 40.0,
            ec_f0_rise_hz: 30.0,
            ec_energy_db: 6.0,
            token_f0_jitter_hz: 8.0,
            gain_jitter_db: 1.5,
            speaker_f0_range: (100.0, 200.0),
            snr_db: 30.0,
            word_duration_range: (0.15, 0.35),
            n_annotators: 4,
            ec_vocab_size: 40,
            ambiguous_vocab_size: 40,
            neutral_vocab_size: 300,
            ec_noun_rate: 0.8,
            other_noun_rate: 0.3,
            embedding_dim: 100,
            oov_rate: 0.1,
            write_audio: true,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        if !(self.ec_fraction > 0.0 && self.ec_fraction < 1.0) {
            return bad("ec_fraction must lie in (0, 1)");
        }
        if !(self.lexical_signal > 0.0 && self.lexical_signal <= 1.0) {
            return bad("lexical_signal must lie in (0, 1]");
        }
        if !(self.ambiguous_ec_rate > 0.0 && self.ambiguous_ec_rate <= 1.0) {
            return bad("ambiguous_ec_rate must lie in (0, 1]");
        }
        if !(0.0..=1.0).contains(&self.acoustic_only_fraction) {
            return bad("acoustic_only_fraction must lie in [0, 1]");
        }
        if self.acoustic_strength < 0.0 {
            return bad("acoustic_strength must be non-negative");
        }
        if !(0.0..=1.0).contains(&self.lexical_ec_cue_scale) {
            return bad("lexical_ec_cue_scale must lie in [0, 1]");
        }
        if self.n_speakers == 0 || self.narratives_per_speaker == 0 || self.tokens_per_narrative == 0 {
            return bad("corpus dimensions must be positive");
        }
        if self.ec_vocab_size == 0 || self.ambiguous_vocab_size == 0 || self.neutral_vocab_size == 0 {
            return bad("vocabulary sizes must be positive");
        }
        let (lo, hi) = self.speaker_f0_range;
        if !(lo > 0.0 && lo <= hi) {
            return bad("speaker_f0_range must be positive and ordered");
        }
        let (dlo, dhi) = self.word_duration_range;
        if !(dlo >= 0.03 && dlo <= dhi) {
            return bad("word_duration_range must be ordered and at least 30 ms");
        }
        if self.n_annotators == 0 {
            return bad("n_annotators must be positive");
        }
        if !(0.0..1.0).contains(&self.oov_rate) || self.embedding_dim == 0 {
            return bad("invalid embedding settings");
        }
        Ok(())
    }
}

/// Ground truth recorded while generating.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenTruth {
    pub narrative_id: String,
    pub token_index: usize,
    pub acoustic_only: bool,
    pub f0_hz: f64,
    pub gain_db: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthTruth {
    pub stats: CorpusStats,
    pub n_ec: usize,
    pub n_acoustic_only: usize,
    pub ec_vocab: Vec<String>,
    pub ambiguous_vocab: Vec<String>,
    pub oov_words: Vec<String>,
    pub tokens: Vec<TokenTruth>,
}

#[derive(Debug, Clone)]
pub struct SynthCorpus {
    pub corpus: Corpus,
    pub truth: SynthTruth,
    pub root: PathBuf,
}

impl SynthCorpus {
    pub fn audio_dir(&self) -> PathBuf {
        self.root.join(AUDIO_DIR)
    }
    pub fn alignment_path(&self) -> PathBuf {
        self.root.join(ALIGNMENT_FILE)
    }
    pub fn annotation_path(&self) -> PathBuf {
        self.root.join(ANNOTATION_FILE)
    }
    pub fn embeddings_path(&self) -> PathBuf {
        self.root.join(EMBEDDINGS_FILE)
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Category {
    Ec,
    Ambiguous,
    Neutral,
}

struct Vocab {
    words: Vec<(String, &'static str, Category)>,
}

impl Vocab {
    fn of(&self, cat: Category) -> Vec<usize> {
        (0..self.words.len()).filter(|&i| self.words[i].2 == cat).collect()
    }
}

fn make_word(mut idx: usize) -> String {
    let mut s = String::new();
    loop {
        s.push_str(SYLLABLES[idx % 16]);
        idx /= 16;
        if idx == 0 {
            break;
        }
    }
    if s.len() < 4 {
        s.push('n');
    }
    s
}

fn build_vocab(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> Vocab {
    let total = cfg.ec_vocab_size + cfg.ambiguous_vocab_size + cfg.neutral_vocab_size;
    // a random permutation of indices keeps the word form uninformative
    let order = sample(rng, total * 4, total).into_vec();
    let mut words = Vec::with_capacity(total);
    for (i, &idx) in order.iter().enumerate() {
        let cat = if i < cfg.ec_vocab_size {
            Category::Ec
        } else if i < cfg.ec_vocab_size + cfg.ambiguous_vocab_size {
            Category::Ambiguous
        } else {
            Category::Neutral
        };
        let noun_rate = if cat == Category::Ec { cfg.ec_noun_rate } else { cfg.other_noun_rate };
        let pos = if rng.gen_bool(noun_rate.clamp(0.0, 1.0)) {
            NOUN
        } else {
            OTHER_POS[rng.gen_range(0..OTHER_POS.len())]
        };
        words.push((make_word(idx + 17), pos, cat));
    }
    Vocab { words }
}

/// Marks `n_ec` positions of `len` as EC, grouped in spans of 1 to 3 tokens.
fn place_spans(len: usize, n_ec: usize, rng: &mut ChaCha8Rng) -> Vec<bool> {
    let mut ec = vec![false; len];
    let mut left = n_ec.min(len);
    let mut attempts = 0;
    while left > 0 && attempts < 50 * len {
        attempts += 1;
        let span = rng.gen_range(1..=3usize).min(left);
        if span > len {
            continue;
        }
        let start = rng.gen_range(0..=len - span);
        let lo = start.saturating_sub(1);
        let hi = (start + span + 1).min(len);
        if ec[lo..hi].iter().any(|&b| b) {
            continue;
        }
        ec[start..start + span].iter_mut().for_each(|b| *b = true);
        left -= span;
    }
    // dense narratives: fill whatever is free
    let mut i = 0;
    while left > 0 && i < len {
        if !ec[i] {
            ec[i] = true;
            left -= 1;
        }
        i += 1;
    }
    ec
}

struct PlannedToken {
    word: usize,
    ec: bool,
    acoustic_only: bool,
    count: u32,
}

fn db_to_gain(db: f64) -> f64 {
    10f64.powf(db / 20.0)
}

/// Renders one harmonic token with integrated phase and raised-cosine ramps.
fn render_tone(out: &mut [f64], f0: impl Fn(f64) -> f64, amplitude: f64) {
    let n = out.len();
    let sr = SAMPLE_RATE as f64;
    let ramp = ((RAMP * sr) as usize).min(n / 2).max(1);
    let mut phase = 0.0;
    for (i, o) in out.iter_mut().enumerate() {
        let u = if n > 1 { i as f64 / (n - 1) as f64 } else { 0.0 };
        let env = if i < ramp {
            0.5 - 0.5 * (PI * i as f64 / ramp as f64).cos()
        } else if i >= n - ramp {
            0.5 - 0.5 * (PI * (n - 1 - i) as f64 / ramp as f64).cos()
        } else {
            1.0
        };
        let mut v = 0.0;
        for (h, a) in HARMONICS.iter().enumerate() {
            v += a * ((h + 1) as f64 * phase).sin();
        }
        *o += amplitude * env * v;
        phase += 2.0 * PI * f0(u) / sr;
        if phase > 2.0 * PI * 1e6 {
            phase %= 2.0 * PI;
        }
    }
}

fn noise_sigma(snr_db: f64) -> f64 {
    let power: f64 = HARMONICS.iter().map(|a| a * a / 2.0).sum();
    BASE_AMPLITUDE * power.sqrt() / db_to_gain(snr_db)
}

/// Generates a corpus under `root` and returns it with its ground truth.
pub fn synth_generate(cfg: &SynthConfig, seed: u64, root: &Path) -> Result<SynthCorpus> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let vocab = build_vocab(cfg, &mut rng);
    let ec_words = vocab.of(Category::Ec);
    let amb_words = vocab.of(Category::Ambiguous);
    let neutral_words = vocab.of(Category::Neutral);

    let speakers: Vec<(String, f64)> = (0..cfg.n_speakers)
        .map(|i| {
            let (lo, hi) = cfg.speaker_f0_range;
            let f = if hi > lo { rng.gen_range(lo..hi) } else { lo };
            (format!("s{i:03}"), f)
        })
        .collect();
    let n_narr = cfg.n_speakers * cfg.narratives_per_speaker;
    let len = cfg.tokens_per_narrative;
    let total = n_narr * len;

    // EC counts per narrative by error diffusion, then spans
    let mut plan: Vec<Vec<PlannedToken>> = Vec::with_capacity(n_narr);
    let mut prev_target = 0usize;
    for j in 0..n_narr {
        let target = (cfg.ec_fraction * ((j + 1) * len) as f64).round() as usize;
        let n_ec = target - prev_target;
        prev_target = target;
        let flags = place_spans(len, n_ec, &mut rng);
        plan.push(
            flags
                .into_iter()
                .map(|ec| PlannedToken { word: 0, ec, acoustic_only: false, count: 0 })
                .collect(),
        );
    }
    let positions: Vec<(usize, usize)> = plan
        .iter()
        .enumerate()
        .flat_map(|(j, toks)| (0..toks.len()).map(move |i| (j, i)))
        .collect();
    let ec_pos: Vec<(usize, usize)> = positions.iter().copied().filter(|&(j, i)| plan[j][i].ec).collect();
    let o_pos: Vec<(usize, usize)> = positions.iter().copied().filter(|&(j, i)| !plan[j][i].ec).collect();
    let n_ec = ec_pos.len();
    let n_amb_ec = (cfg.acoustic_only_fraction * n_ec as f64).round() as usize;
    let n_lex_ec = n_ec - n_amb_ec;
    for k in sample(&mut rng, n_ec, n_amb_ec).into_iter() {
        let (j, i) = ec_pos[k];
        plan[j][i].acoustic_only = true;
    }
    let n_o_ec_vocab =
        (n_lex_ec as f64 * (1.0 - cfg.lexical_signal) / cfg.lexical_signal).round() as usize;
    let n_o_amb =
        (n_amb_ec as f64 * (1.0 - cfg.ambiguous_ec_rate) / cfg.ambiguous_ec_rate).round() as usize;
    if n_o_ec_vocab + n_o_amb > o_pos.len() {
        return Err(Error::InvalidArgument(format!(
            "vocabulary rates need {} non-EC tokens but only {} exist",
            n_o_ec_vocab + n_o_amb,
            o_pos.len()
        )));
    }
    let mut o_cat = vec![Category::Neutral; o_pos.len()];
    let chosen = sample(&mut rng, o_pos.len(), n_o_ec_vocab + n_o_amb).into_vec();
    for (r, &k) in chosen.iter().enumerate() {
        o_cat[k] = if r < n_o_ec_vocab { Category::Ec } else { Category::Ambiguous };
    }
    let count_dist = WeightedIndex::new(COUNT_WEIGHTS).expect("static weights");
    let pick = |rng: &mut ChaCha8Rng, pool: &[usize]| pool[rng.gen_range(0..pool.len())];
    for &(j, i) in &ec_pos {
        let t = &mut plan[j][i];
        t.word = if t.acoustic_only { pick(&mut rng, &amb_words) } else { pick(&mut rng, &ec_words) };
        let c = count_dist.sample(&mut rng) as u32 + 1;
        t.count = ((c as f64 * cfg.n_annotators as f64 / 4.0).round() as u32).clamp(1, cfg.n_annotators);
    }
    for (k, &(j, i)) in o_pos.iter().enumerate() {
        let pool = match o_cat[k] {
            Category::Ec => &ec_words,
            Category::Ambiguous => &amb_words,
            Category::Neutral => &neutral_words,
        };
        plan[j][i].word = pick(&mut rng, pool);
    }
    let narrative_seeds: Vec<u64> = (0..n_narr).map(|_| rng.gen()).collect();

    let audio_dir = root.join(AUDIO_DIR);
    std::fs::create_dir_all(&audio_dir).map_err(|e| Error::io(&audio_dir, e))?;
    let sigma = noise_sigma(cfg.snr_db);
    let noise = Normal::new(0.0, sigma).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let sr = SAMPLE_RATE as f64;
    let s = cfg.acoustic_strength;

    let mut narratives = Vec::with_capacity(n_narr);
    let mut truth_tokens = Vec::with_capacity(total);
    let mut used_words = BTreeSet::new();
    let (mut n_nouns, mut n_ec_nouns) = (0, 0);
    for (j, toks) in plan.iter().enumerate() {
        let (speaker, base_f0) = &speakers[j / cfg.narratives_per_speaker];
        let id = format!("{speaker}_n{}", j % cfg.narratives_per_speaker + 1);
        let mut nrng = ChaCha8Rng::seed_from_u64(narrative_seeds[j]);
        let mut spans = Vec::with_capacity(toks.len());
        let mut cursor = (LEAD * sr) as usize;
        for _ in toks {
            let (lo, hi) = cfg.word_duration_range;
            let d = if hi > lo { nrng.gen_range(lo..hi) } else { lo };
            let n = (d * sr).round() as usize;
            spans.push((cursor, cursor + n));
            cursor += n + (GAP * sr) as usize;
        }
        let total_len = cursor - (GAP * sr) as usize + (LEAD * sr) as usize;
        let mut audio = vec![0.0; total_len];
        let mut tokens = Vec::with_capacity(toks.len());
        for (i, (t, &(a, b))) in toks.iter().zip(&spans).enumerate() {
            let s = match (t.ec, t.acoustic_only) {
                (false, _) => 0.0,
                (true, true) => s,
                (true, false) => s * cfg.lexical_ec_cue_scale,
            };
            let jitter = cfg.token_f0_jitter_hz * nrng.sample::<f64, _>(rand_distr::StandardNormal);
            let gain_db = cfg.gain_jitter_db * nrng.sample::<f64, _>(rand_distr::StandardNormal)
                + s * cfg.ec_energy_db;
            let centre = base_f0 + jitter + s * cfg.ec_f0_offset_hz;
            let rise = s * cfg.ec_f0_rise_hz;
            render_tone(
                &mut audio[a..b],
                |u| centre + rise * (u - 0.5),
                BASE_AMPLITUDE * db_to_gain(gain_db),
            );
            let (word, pos, _) = &vocab.words[t.word];
            used_words.insert(word.clone());
            if *pos == NOUN {
                n_nouns += 1;
                if t.ec {
                    n_ec_nouns += 1;
                }
            }
            // Stored as start + duration so the CTM form reproduces it exactly.
            let start = a as f64 / sr;
            tokens.push(Token {
                word: word.clone(),
                start,
                end: start + (b as f64 / sr - start),
                label: Label::from_bool(t.ec),
                annotator_count: Some(t.count),
                pos: Some(pos.to_string()),
            });
            truth_tokens.push(TokenTruth {
                narrative_id: id.clone(),
                token_index: i,
                acoustic_only: t.acoustic_only,
                f0_hz: centre,
                gain_db,
            });
        }
        let audio_path = audio_dir.join(format!("{id}.wav"));
        if cfg.write_audio {
            for v in audio.iter_mut() {
                *v += noise.sample(&mut nrng);
            }
            write_wav(&audio_path, &Signal::from_samples(audio)?)?;
        } else {
            write_wav(&audio_path, &Signal::from_samples(vec![0.0; total_len])?)?;
        }
        narratives.push(Narrative {
            narrative_id: id,
            speaker_id: speaker.clone(),
            tokens,
            audio_path,
        });
    }

    let corpus = Corpus::new(narratives)?;
    let stats = CorpusStats {
        n_speakers: cfg.n_speakers,
        n_narratives: n_narr,
        n_tokens: total,
        ec_token_fraction: n_ec as f64 / total as f64,
        vocabulary_size: used_words.len(),
        n_nouns,
        n_ec_nouns,
    };

    let embeddings = render_embeddings(cfg, &vocab, &used_words, &mut rng);
    let truth = SynthTruth {
        stats,
        n_ec,
        n_acoustic_only: n_amb_ec,
        ec_vocab: ec_words.iter().map(|&i| vocab.words[i].0.clone()).collect(),
        ambiguous_vocab: amb_words.iter().map(|&i| vocab.words[i].0.clone()).collect(),
        oov_words: embeddings.1,
        tokens: truth_tokens,
    };
    let write = |name: &str, text: &str| -> Result<()> {
        let p = root.join(name);
        std::fs::write(&p, text).map_err(|e| Error::io(&p, e))
    };
    write(ALIGNMENT_FILE, &write_ctm(&corpus))?;
    write(ANNOTATION_FILE, &write_annotations(&corpus))?;
    write(EMBEDDINGS_FILE, &embeddings.0)?;
    write(TRUTH_FILE, &serde_json::to_string_pretty(&truth)?)?;
    let sp = audio_dir.join(SPEAKERS_FILE);
    std::fs::write(&sp, write_speakers(&corpus)).map_err(|e| Error::io(&sp, e))?;
    Ok(SynthCorpus {
        corpus,
        truth,
        root: root.to_path_buf(),
    })
}

/// Word vectors where EC-vocabulary words share a common direction and a
/// fraction of corpus words is left out. Returns the text and the OOV list.
fn render_embeddings(
    cfg: &SynthConfig,
    vocab: &Vocab,
    used: &BTreeSet<String>,
    rng: &mut ChaCha8Rng,
) -> (String, Vec<String>) {
    let dim = cfg.embedding_dim;
    let unit = |rng: &mut ChaCha8Rng| -> Vec<f64> {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample(rand_distr::StandardNormal)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.into_iter().map(|x| x / n).collect()
    };
    let ec_dir = unit(rng);
    // Norms land near those of common pretrained word vectors (about 2-3).
    let noise = Normal::new(0.0, 2.0 / (dim as f64).sqrt()).expect("positive std");
    let used_list: Vec<&String> = used.iter().collect();
    let n_oov = (cfg.oov_rate * used_list.len() as f64).round() as usize;
    let oov: BTreeSet<&String> = sample(rng, used_list.len(), n_oov)
        .into_iter()
        .map(|i| used_list[i])
        .collect();
    let mut text = String::new();
    for (word, _, cat) in &vocab.words {
        if oov.contains(word) {
            continue;
        }
        // Offset along the EC direction grows with the square root of the
        // word's P(EC) relative to the EC vocabulary.
        let shift = match cat {
            Category::Ec => EC_SHIFT,
            Category::Ambiguous => EC_SHIFT * (cfg.ambiguous_ec_rate / cfg.lexical_signal).min(1.0).sqrt(),
            Category::Neutral => 0.0,
        };
        let _ = write!(text, "{word}");
        for d in 0..dim {
            let _ = write!(text, " {:.6}", shift * ec_dir[d] + noise.sample(rng));
        }
        text.push('\n');
    }
    (text, oov.into_iter().cloned().collect())
}

/// Pretraining utterances: neutral tones are flat, emotional ones carry a
/// wide f0 modulation and raised energy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct UtteranceConfig {
    pub n_per_class: usize,
    pub duration_range: (f64, f64),
    pub f0_range: (f64, f64),
    pub modulation_depth_hz: (f64, f64),
    pub modulation_rate_hz: (f64, f64),
    pub emotional_energy_db: f64,
    pub snr_db: f64,
}

impl Default for UtteranceConfig {
    fn default() -> Self {
        Self {
            n_per_class: 200,
            duration_range: (0.3, 0.5),
            f0_range: (100.0, 200.0),
            modulation_depth_hz: (30.0, 60.0),
            modulation_rate_hz: (3.0, 6.0),
            emotional_energy_db: 6.0,
            snr_db: 30.0,
        }
    }
}

/// Returns `(signal, emotional)` pairs alternating neutral and emotional.
pub fn synth_utterances(cfg: &UtteranceConfig, seed: u64) -> Result<Vec<(Signal, bool)>> {
    if cfg.n_per_class == 0 || cfg.duration_range.0 <= 0.0 || cfg.duration_range.0 > cfg.duration_range.1 {
        return Err(Error::InvalidArgument("invalid utterance config".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, noise_sigma(cfg.snr_db)).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let range = |rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)| if hi > lo { rng.gen_range(lo..hi) } else { lo };
    let mut out = Vec::with_capacity(2 * cfg.n_per_class);
    for _ in 0..cfg.n_per_class {
        for emotional in [false, true] {
            let dur = range(&mut rng, cfg.duration_range);
            let n = (dur * SAMPLE_RATE as f64).round() as usize;
            let base = range(&mut rng, cfg.f0_range);
            let depth = range(&mut rng, cfg.modulation_depth_hz);
            let rate = range(&mut rng, cfg.modulation_rate_hz);
            let phase0 = rng.gen_range(0.0..2.0 * PI);
            let gain_db = rng.sample::<f64, _>(rand_distr::StandardNormal) * 1.5
                + if emotional { cfg.emotional_energy_db } else { 0.0 };
            let mut x = vec![0.0; n];
            if emotional {
                render_tone(&mut x, |u| base + depth * (2.0 * PI * rate * u * dur + phase0).sin(), BASE_AMPLITUDE * db_to_gain(gain_db));
            } else {
                render_tone(&mut x, |_| base, BASE_AMPLITUDE * db_to_gain(gain_db));
            }
            for v in x.iter_mut() {
                *v += noise.sample(&mut rng);
            }
            out.push((Signal::from_samples(x)?, emotional));
        }
    }
    Ok(out)
}
