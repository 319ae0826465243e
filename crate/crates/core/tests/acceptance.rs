//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit on
//! any failure. Runs as a plain binary (`harness = false`).

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fs;
use std::panic::{self, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

use ecpipe::acoustic::{resnet_checkpoint, resnet_from_checkpoint};
use ecpipe::cli::main_with_args;
use ecpipe::config::PipelineConfig;
use ecpipe::corpus::{split_speakers, synth_generate, Label};
use ecpipe::dsp::mfcc::{deltas, mel_filterbank_energies, power_spectrum, N_FFT, N_MELS};
use ecpipe::dsp::pitch::f0_frame_count;
use ecpipe::dsp::prosody::local_perturbation;
use ecpipe::dsp::{extract_f0, extract_mfcc_tensor, prosodic_features, PitchTrack, Signal};
use ecpipe::eval::{
    noun_prosody, prf1_class_i, prosody_analysis, rows_to_map, simulate_baseline, AcousticFold, BaselinePolicy,
};
use ecpipe::fusion::{certainty, dlf_merge, oracle_stream, CertaintyState, DlfConfig, LateFusion};
use ecpipe::nnet::gradcheck::{
    random_input, AttentionProbe, BatchNormProbe, BiLstmProbe, ConvProbe, LinearProbe, LstmProbe, ReluPoolProbe,
    SoftmaxCrossEntropyProbe, SoftmaxKlProbe,
};
use ecpipe::nnet::{
    grad_check, BatchNorm2d, BiLstm, Checkpoint, Conv2d, Differentiable, GradCheckConfig, Linear, Lstm, SelfAttention,
};
use ecpipe::tagger::{load_tagger, save_tagger};

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn ok<T, E: std::fmt::Display>(r: std::result::Result<T, E>, what: &str) -> Result<T, String> {
    r.map_err(|e| format!("{what}: {e}"))
}

fn within(elapsed: Duration, limit_s: u64) -> Outcome {
    ensure!(
        elapsed.as_secs_f64() < limit_s as f64,
        "took {:.1}s, limit {limit_s}s",
        elapsed.as_secs_f64()
    );
    Ok(String::new())
}

// 1. Analytic baselines.

fn baselines() -> Outcome {
    let t = Instant::now();
    let prior = 0.066;
    let n = 200_000;
    let eq = simulate_baseline(prior, BaselinePolicy::EqualPriors, n, 2024);
    let cl = simulate_baseline(prior, BaselinePolicy::ClassPriors, n, 2024);
    ensure!((eq.precision_i - 6.6).abs() <= 0.5, "equal priors P {:.3}", eq.precision_i);
    ensure!((eq.recall_i - 50.0).abs() <= 2.0, "equal priors R {:.3}", eq.recall_i);
    ensure!((eq.f1_i - 0.117).abs() <= 0.01, "equal priors F1 {:.4}", eq.f1_i);
    ensure!((cl.precision_i - 6.6).abs() <= 0.5, "class priors P {:.3}", cl.precision_i);
    ensure!((cl.recall_i - 6.6).abs() <= 0.5, "class priors R {:.3}", cl.recall_i);
    ensure!((cl.f1_i - 0.066).abs() <= 0.01, "class priors F1 {:.4}", cl.f1_i);
    within(t.elapsed(), 10)?;
    Ok(format!(
        "equal P {:.2} R {:.2} F1 {:.3}; class P {:.2} R {:.2} F1 {:.3}",
        eq.precision_i, eq.recall_i, eq.f1_i, cl.precision_i, cl.recall_i, cl.f1_i
    ))
}

// 2. Gradient verification.

fn check_layer<M: Differentiable>(name: &str, probe: &mut M, shape: &[usize], seed: u64, tol: f64) -> Outcome {
    let r = ok(grad_check(probe, &random_input(shape, seed), &GradCheckConfig::default()), name)?;
    ensure!(r.passes(tol), "{name}: max rel error {:.2e} >= {tol:.0e} at {}", r.max_rel_error, r.worst);
    Ok(format!("{name} {:.1e}", r.max_rel_error))
}

fn gradients() -> Outcome {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut bn = BatchNormProbe { layer: BatchNorm2d::new(3) };
    bn.layer.gamma.value.data_mut().copy_from_slice(&[1.3, 0.7, -0.4]);
    bn.layer.beta.value.data_mut().copy_from_slice(&[0.1, -0.2, 0.5]);
    let parts = [
        check_layer("linear", &mut LinearProbe { layer: Linear::new(6, 4, &mut rng) }, &[3, 6], 1, 1e-5)?,
        check_layer("conv", &mut ConvProbe { layer: Conv2d::new(2, 3, 3, 2, &mut rng) }, &[2, 2, 7, 6], 2, 1e-5)?,
        check_layer("conv1x1", &mut ConvProbe { layer: Conv2d::new(3, 2, 1, 2, &mut rng) }, &[2, 3, 5, 4], 3, 1e-5)?,
        check_layer("batchnorm", &mut bn, &[3, 3, 4, 3], 4, 1e-5)?,
        check_layer("relu+pool", &mut ReluPoolProbe, &[2, 3, 4, 5], 5, 1e-5)?,
        check_layer("lstm", &mut LstmProbe { layer: Lstm::new(3, 4, &mut rng) }, &[6, 3], 6, 1e-4)?,
        check_layer("bilstm", &mut BiLstmProbe { layer: BiLstm::new(3, 4, &mut rng) }, &[5, 3], 7, 1e-4)?,
        check_layer("attention", &mut AttentionProbe { layer: SelfAttention::new(4, &mut rng) }, &[5, 4], 8, 1e-4)?,
        check_layer(
            "softmax+ce",
            &mut SoftmaxCrossEntropyProbe { classes: vec![0, 1, 1, 0, 1] },
            &[5, 2],
            9,
            1e-5,
        )?,
        check_layer(
            "softmax+kl",
            &mut SoftmaxKlProbe {
                targets: vec![vec![0.25, 0.75], vec![0.0, 1.0], vec![1.0, 0.0], vec![0.5, 0.5]],
            },
            &[4, 2],
            10,
            1e-4,
        )?,
    ];
    within(t.elapsed(), 120)?;
    Ok(parts.join(", "))
}

// 3. DSP oracles.

fn oracle_mel_argmax(frame: &[f64]) -> (usize, Vec<f64>) {
    // Naive DFT of the Hamming-windowed, zero-padded frame.
    let n = frame.len();
    let bins = N_FFT / 2 + 1;
    let power: Vec<f64> = (0..bins)
        .map(|k| {
            let (mut re, mut im) = (0.0, 0.0);
            for (i, &x) in frame.iter().enumerate() {
                let w = 0.54 - 0.46 * (2.0 * PI * i as f64 / (n - 1) as f64).cos();
                let a = -2.0 * PI * (k * i) as f64 / N_FFT as f64;
                re += x * w * a.cos();
                im += x * w * a.sin();
            }
            re * re + im * im
        })
        .collect();
    let mel = |f: f64| 2595.0 * (1.0 + f / 700.0).log10();
    let inv = |m: f64| 700.0 * (10f64.powf(m / 2595.0) - 1.0);
    let top = mel(8000.0);
    let edges: Vec<f64> = (0..N_MELS + 2).map(|i| inv(top * i as f64 / (N_MELS + 1) as f64)).collect();
    let energies: Vec<f64> = (0..N_MELS)
        .map(|m| {
            (0..bins)
                .map(|k| {
                    let f = k as f64 * 16000.0 / N_FFT as f64;
                    let (lo, c, hi) = (edges[m], edges[m + 1], edges[m + 2]);
                    let w = if f > lo && f <= c {
                        (f - lo) / (c - lo)
                    } else if f > c && f < hi {
                        (hi - f) / (hi - c)
                    } else {
                        0.0
                    };
                    w * power[k]
                })
                .sum()
        })
        .collect();
    (argmax(&energies), energies)
}

fn argmax(v: &[f64]) -> usize {
    (0..v.len()).fold(0, |b, i| if v[i] > v[b] { i } else { b })
}

fn sine(freq: f64, n: usize, amp: f64) -> Vec<f64> {
    (0..n).map(|i| amp * (2.0 * PI * freq * i as f64 / 16000.0).sin()).collect()
}

fn dsp_oracles() -> Outcome {
    let t = Instant::now();
    let mut notes = Vec::new();
    for f in [250.0, 700.0, 1500.0, 3100.0, 6000.0] {
        let frame = sine(f, 400, 0.5);
        let (want, oracle) = oracle_mel_argmax(&frame);
        let got = mel_filterbank_energies(&power_spectrum(&frame));
        ensure!(argmax(&got) == want, "{f} Hz: dominant filter {} vs oracle {want}", argmax(&got));
        let peak = oracle[want];
        for (a, b) in got.iter().zip(&oracle) {
            ensure!((a - b).abs() <= 1e-9 * peak, "{f} Hz: filter energies differ ({a} vs {b})");
        }
        notes.push(format!("{f}->{want}"));
    }
    for f in [80.0, 120.0, 200.0, 300.0, 400.0] {
        let s = ok(Signal::from_samples(sine(f, 8000, 0.5)), "signal")?;
        let track = extract_f0(&s);
        let mut voiced: Vec<f64> = track.f0.iter().copied().filter(|&v| v > 0.0).collect();
        ensure!(voiced.len() * 2 > track.len(), "{f} Hz: only {} of {} frames voiced", voiced.len(), track.len());
        voiced.sort_by(f64::total_cmp);
        for v in [voiced[0], voiced[voiced.len() - 1]] {
            ensure!((v - f).abs() / f < 0.02, "{f} Hz sine tracked at {v:.2} Hz");
        }
    }
    // Periods alternating 5.0 / 5.5 ms through the full feature path.
    let len = (4000..4800).find(|&l| f0_frame_count(l) % 2 == 0).ok_or("no even frame count")?;
    let s = ok(Signal::from_samples(sine(190.0, len, 0.5)), "signal")?;
    let n = f0_frame_count(len);
    let track = PitchTrack {
        f0: (0..n).map(|i| if i % 2 == 0 { 1.0 / 0.005 } else { 1.0 / 0.0055 }).collect(),
        strength: vec![0.9; n],
    };
    let jitter = ok(prosodic_features(&s, &track), "prosodic features")?
        .jitter
        .ok_or("jitter absent")?;
    let want_j = 0.5 / 5.25;
    let alt: Vec<Option<f64>> = (0..10).map(|i| Some(if i % 2 == 0 { 0.005 } else { 0.0055 })).collect();
    let jitter_direct = local_perturbation(&alt).ok_or("jitter absent")?;
    let amps: Vec<Option<f64>> = (0..10).map(|i| Some(if i % 2 == 0 { 1.0 } else { 0.8 })).collect();
    let shimmer = local_perturbation(&amps).ok_or("shimmer absent")?;
    let want_s = 0.2 / 0.9;
    ensure!((jitter - want_j).abs() < 1e-6, "jitter {jitter} vs {want_j}");
    ensure!((jitter_direct - want_j).abs() < 1e-6, "jitter {jitter_direct} vs {want_j}");
    ensure!((shimmer - want_s).abs() < 1e-6, "shimmer {shimmer} vs {want_s}");
    ensure!((want_j - 0.0952).abs() < 1e-4 && (want_s - 0.2222).abs() < 1e-4, "hand values drifted");
    let zero = ok(Signal::from_samples(vec![0.0; 6000]), "signal")?;
    let feats = ok(extract_mfcc_tensor(&zero), "mfcc")?;
    for c in 0..feats.shape()[0] {
        for f in 0..feats.n_frames {
            ensure!(feats.get(c, f, 1) == 0.0 && feats.get(c, f, 2) == 0.0, "non-zero delta at ({c}, {f})");
        }
    }
    ensure!(deltas(&[3.25; 17]).iter().all(|&d| d == 0.0), "constant input gives non-zero deltas");
    within(t.elapsed(), 30)?;
    Ok(format!(
        "mel {}; f0 80-400 Hz ok; jitter {jitter_direct:.4} (track {jitter:.4}), shimmer {shimmer:.4}",
        notes.join(" ")
    ))
}

// 4. Decision-level fusion rule.

fn dlf_rule() -> Outcome {
    use CertaintyState::*;
    let states = [CertainPositive, Uncertain, CertainNegative];
    for lex in states {
        for ac in states {
            let want = match (lex, ac) {
                (CertainPositive, _) => Label::I,
                (Uncertain, CertainPositive) => Label::I,
                _ => Label::O,
            };
            ensure!(dlf_merge(lex, ac) == want, "merge({lex}, {ac}) != {want}");
        }
    }
    let mut checked = 0;
    for i in 0..22 {
        for j in 0..22 {
            for k in 0..21 {
                let p = i as f64 / 21.0;
                let db = 0.02 + 0.96 * j as f64 / 21.0;
                let eps = 0.2 * k as f64 / 20.0;
                let (lo, hi) = (db - eps, db + eps);
                let holds = [p > hi, lo <= p && p <= hi, p < lo];
                ensure!(holds.iter().filter(|&&h| h).count() == 1, "trichotomy fails at ({p}, {db}, {eps})");
                let want = if holds[0] {
                    CertainPositive
                } else if holds[1] {
                    Uncertain
                } else {
                    CertainNegative
                };
                ensure!(certainty(p, db, eps) == want, "certainty({p}, {db}, {eps})");
                checked += 1;
            }
        }
    }
    ensure!(checked >= 10_000, "grid too small");
    let cfg = DlfConfig::default();
    ensure!(
        cfg.lexical_p_db == 0.15 && cfg.lexical_epsilon == 0.05,
        "lexical thresholds"
    );
    ensure!(
        cfg.acoustic_p_db == 0.75 && cfg.acoustic_epsilon == 0.05,
        "acoustic thresholds"
    );
    ensure!(certainty(0.30, 0.15, 0.05) == CertainPositive, "0.30 not certain positive");
    ensure!(certainty(0.20, 0.15, 0.05) == Uncertain, "0.20 not uncertain");
    ensure!(certainty(0.05, 0.15, 0.05) == CertainNegative, "0.05 not certain negative");
    ensure!(dlf_merge(CertainPositive, CertainNegative) == Label::I, "certain lexical positive overridden");
    ensure!(dlf_merge(CertainNegative, CertainPositive) == Label::O, "certain lexical negative overridden");
    let d = cfg.decide(0.17, 0.90);
    ensure!(
        d.lexical == Uncertain && d.acoustic == CertainPositive && d.label == Label::I,
        "decide(0.17, 0.90) = {d:?}"
    );
    Ok(format!("9 merge cells, {checked} grid points, worked examples hold"))
}

// 5. Oracle dominance.

fn oracle_dominance() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(55);
    let mut min_gain = f64::INFINITY;
    for trial in 0..100 {
        let n = rng.gen_range(20..600);
        let prior = rng.gen_range(0.02..0.5);
        let (ea, et) = (rng.gen_range(0.0..0.6), rng.gen_range(0.0..0.6));
        let gold: Vec<Label> = (0..n).map(|_| Label::from_bool(rng.gen_bool(prior))).collect();
        let mut noisy = |err: f64| -> Vec<Label> {
            gold.iter()
                .map(|&g| {
                    if rng.gen_bool(err) {
                        Label::from_bool(!g.is_ec())
                    } else {
                        g
                    }
                })
                .collect()
        };
        let a = noisy(ea);
        let t = noisy(et);
        let o = ok(oracle_stream(&gold, &a, &t), "oracle")?;
        let f = |p: &[Label]| prf1_class_i(&gold, p).map(|m| m.f1_i);
        let (fa, ft, fo) = (ok(f(&a), "f1")?, ok(f(&t), "f1")?, ok(f(&o), "f1")?);
        ensure!(fo >= fa.max(ft), "trial {trial}: oracle {fo:.4} < max({fa:.4}, {ft:.4})");
        min_gain = min_gain.min(fo - fa.max(ft));
    }
    Ok(format!("100 triples, smallest margin {min_gain:.4}"))
}

// 6. Cross-validation hygiene.

fn cv_hygiene() -> Outcome {
    for n in 5..=200 {
        let speakers: Vec<String> = (0..n).map(|i| format!("S{i:03}")).collect();
        let seed = n as u64 * 31;
        let plan = ok(split_speakers(&speakers, 5, seed), "split")?;
        ensure!(plan == ok(split_speakers(&speakers, 5, seed), "split")?, "{n} speakers: plan not reproducible");
        ensure!(plan.assignments.len() == n, "{n} speakers: {} assigned", plan.assignments.len());
        for test in 0..plan.k {
            let roles = ok(plan.roles(test), "roles")?;
            let (train, dev, test_set) = plan.role_speakers(&roles);
            ensure!(
                train.is_disjoint(&dev) && train.is_disjoint(&test_set) && dev.is_disjoint(&test_set),
                "{n} speakers, test fold {test}: roles overlap"
            );
            ensure!(train.len() + dev.len() + test_set.len() == n, "{n} speakers: roles do not cover");
        }
    }
    let speakers: Vec<String> = (0..66).map(|i| format!("S{i:03}")).collect();
    let mut sizes = ok(split_speakers(&speakers, 5, 0), "split")?.fold_sizes();
    sizes.sort_unstable_by(|a, b| b.cmp(a));
    ensure!(sizes == [14, 13, 13, 13, 13], "66 speakers gave {sizes:?}");
    Ok("5..=200 speakers disjoint and reproducible; 66 -> [14, 13, 13, 13, 13]".into())
}

// 7. Oversampling.

fn oversampling() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let positive: Vec<bool> = (0..8000).map(|_| rng.gen_bool(0.066)).collect();
    let stream = ok(ecpipe::nnet::OversampleStream::new(&positive, 11), "stream")?;
    let draws: Vec<usize> = stream.take(positive.len()).collect();
    let fractions: Vec<f64> = draws
        .chunks(32)
        .map(|b| b.iter().filter(|&&i| positive[i]).count() as f64 / b.len() as f64)
        .collect();
    let mean = fractions.iter().sum::<f64>() / fractions.len() as f64;
    ensure!((0.45..=0.55).contains(&mean), "mean batch I fraction {mean:.4}");
    Ok(format!("{} batches, mean I fraction {mean:.4}", fractions.len()))
}

// 8. End-to-end desk run through the command line.

fn cli(args: &[&str]) -> Outcome {
    let mut full = vec!["ecpipe"];
    full.extend_from_slice(args);
    let code = main_with_args(full);
    ensure!(code == 0, "`{}` exited with {code}", args.join(" "));
    Ok(String::new())
}

fn run_stages(pre: &[&str]) -> Outcome {
    for stage in ["synth", "features", "pretrain", "train-acoustic", "train-tagger", "fuse", "evaluate"] {
        let t = Instant::now();
        let mut args = pre.to_vec();
        args.push(stage);
        cli(&args)?;
        eprintln!("  {stage}: {:.1}s", t.elapsed().as_secs_f64());
    }
    Ok(String::new())
}

fn mean_metrics(work: &Path) -> Result<BTreeMap<String, (f64, f64, f64)>, String> {
    let mut out = BTreeMap::new();
    for e in ok(fs::read_dir(work.join("results")), "results dir")? {
        let p = ok(e, "entry")?.path();
        if p.extension().and_then(|s| s.to_str()) != Some("json") {
            continue;
        }
        let v: Value = ok(serde_json::from_str(&ok(fs::read_to_string(&p), "read")?), "json")?;
        let m = &v["mean"];
        let get = |k: &str| m[k].as_f64().ok_or(format!("{} lacks mean.{k}", p.display()));
        out.insert(
            v["experiment"].as_str().unwrap_or_default().to_string(),
            (get("precision_i")?, get("recall_i")?, get("f1_i")?),
        );
    }
    Ok(out)
}

fn desk_run(work: &Path) -> Outcome {
    let t = Instant::now();
    let dir = work.to_str().ok_or("non-utf8 path")?;
    run_stages(&["--desk", "--workdir", dir])?;
    let elapsed = t.elapsed();
    let m = mean_metrics(work)?;
    let corpus: Value = ok(serde_json::from_str(&ok(fs::read_to_string(work.join("corpus.json")), "corpus")?), "json")?;
    let prior = corpus["stats"]["ec_token_fraction"].as_f64().ok_or("corpus lacks EC fraction")?;
    let f1 = |e: &str| m.get(e).map(|x| x.2).ok_or(format!("no result for {e}"));
    let (wte, class, dlf, oracle) = (f1("st_wte")?, f1("baseline_class")?, f1("dlf")?, f1("oracle")?);
    let (rp, rr, _) = *m.get("resnet").ok_or("no result for resnet")?;
    let mut fails = Vec::new();
    if wte < class + 0.20 {
        fails.push(format!("(a) st_wte {wte:.3} < class baseline {class:.3} + 0.20"));
    }
    if !(rr > 50.0 && rp > 100.0 * prior) {
        fails.push(format!("(b) resnet P {rp:.1} R {rr:.1}, prior {:.1}", 100.0 * prior));
    }
    if dlf < wte + 0.02 {
        fails.push(format!("(c) dlf {dlf:.3} < st_wte {wte:.3} + 0.02"));
    }
    for (e, v) in &m {
        if e != "oracle" && v.2 > oracle {
            fails.push(format!("(d) {e} {:.3} > oracle {oracle:.3}", v.2));
        }
    }
    if elapsed.as_secs() >= 1800 {
        fails.push(format!("runtime {:.0}s", elapsed.as_secs_f64()));
    }
    let summary: Vec<String> = m.iter().map(|(e, v)| format!("{e} {:.3}", v.2)).collect();
    ensure!(fails.is_empty(), "{}; F1: {}", fails.join("; "), summary.join(", "));
    Ok(format!(
        "resnet P {rp:.1} R {rr:.1}; F1: {}; {:.0}s",
        summary.join(", "),
        elapsed.as_secs_f64()
    ))
}

// 9. Prosody analysis.

fn prosody(work: &Path) -> Outcome {
    let dir = work.to_str().ok_or("non-utf8 path")?;
    if !work.join("corpus.json").exists() {
        cli(&["--desk", "--workdir", dir, "synth"])?;
    }
    cli(&["--desk", "--workdir", dir, "prosody"])?;
    let report: Value = ok(serde_json::from_str(&ok(fs::read_to_string(work.join("prosody.json")), "read")?), "json")?;
    let mut planted = Vec::new();
    for f in report["features"].as_array().ok_or("no features")? {
        let name = f["feature"].as_str().unwrap_or_default();
        if name == "f0_mean" || name == "energy_mean" {
            let p = f["result"]["p"].as_f64().ok_or(format!("{name} untested"))?;
            ensure!(p < 0.05, "{name} not significant (p {p:.4})");
            planted.push(format!("{name} p {p:.1e}"));
        }
    }
    ensure!(planted.len() == 2, "planted features missing from report");

    let mut cfg = PipelineConfig::desk().synth;
    cfg.n_speakers = 8;
    cfg.narratives_per_speaker = 1;
    cfg.tokens_per_narrative = 60;
    cfg.acoustic_strength = 0.0;
    let (mut rejected, mut tests) = (0usize, 0usize);
    for seed in 0..40 {
        let tmp = ok(tempfile::tempdir(), "tempdir")?;
        let sc = ok(synth_generate(&cfg, seed, tmp.path()), "synth")?;
        let rows = ok(noun_prosody(&sc.corpus), "prosody")?;
        let rep = prosody_analysis(&sc.corpus, &rows_to_map(&rows));
        for r in rep.features.iter().filter_map(|f| f.result.as_ref()) {
            tests += 1;
            rejected += r.significant as usize;
        }
    }
    let rate = rejected as f64 / tests as f64;
    ensure!((0.01..=0.09).contains(&rate), "null rejection rate {rate:.3} ({rejected}/{tests})");
    Ok(format!(
        "{}; null rate {:.1}% ({rejected}/{tests} over 40 seeds)",
        planted.join(", "),
        100.0 * rate
    ))
}

// 10. Determinism and persistence.

fn tiny_config() -> PipelineConfig {
    let mut c = PipelineConfig::desk();
    c.seed = 17;
    c.synth.n_speakers = 6;
    c.synth.narratives_per_speaker = 1;
    c.synth.tokens_per_narrative = 40;
    c.synth.ec_fraction = 0.15;
    c.model.resnet.stage_channels = [4, 4, 8, 8];
    c.model.resnet.embedding_dim = 16;
    c.tagger.wae_dim = 16;
    c.model.pretrain.utterances.n_per_class = 6;
    c.model.pretrain.train.max_epochs = 1;
    c.model.pretrain.train.samples_per_epoch = Some(16);
    c.model.finetune.max_epochs = 2;
    c.model.finetune.samples_per_epoch = Some(32);
    c.model.finetune.dev_limit = Some(40);
    c.tagger.lstm_hidden = 4;
    c.tagger.max_epochs = 2;
    c.eval.k = 3;
    c
}

fn files_under(root: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).into_iter().flatten().flatten() {
            let p = e.path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p);
            }
        }
    }
    out.sort();
    out
}

fn same_params(a: &Checkpoint, b: &Checkpoint) -> bool {
    let pa: Vec<_> = a.params().collect();
    let pb: Vec<_> = b.params().collect();
    pa.len() == pb.len()
        && pa.iter().zip(&pb).all(|(x, y)| {
            x.0 == y.0
                && x.1.shape() == y.1.shape()
                && x.1.data().iter().zip(y.1.data()).all(|(u, v)| u.to_bits() == v.to_bits())
        })
}

fn determinism(root: &Path) -> Outcome {
    let cfg_path = root.join("tiny.json");
    ok(fs::write(&cfg_path, tiny_config().to_json()), "write config")?;
    let cfg = cfg_path.to_str().ok_or("non-utf8 path")?;
    let work = root.join("run");
    let ws = work.to_str().ok_or("non-utf8 path")?;
    run_stages(&["--config", cfg, "--workdir", ws])?;
    let mut first = BTreeMap::new();
    for p in files_under(&work) {
        first.insert(p.clone(), ok(fs::read(&p), "read")?);
    }
    ensure!(files_under(&work.join("results")).len() >= 11, "missing result files");
    ok(fs::remove_dir_all(&work), "clear workdir")?;
    run_stages(&["--config", cfg, "--workdir", ws])?;
    let second = files_under(&work);
    ensure!(second.len() == first.len(), "{} artifacts, then {}", first.len(), second.len());
    for (p, bytes) in &first {
        ensure!(&ok(fs::read(p), "read")? == bytes, "{} differs between runs", p.display());
    }
    let compared = first.len();

    let models = work.join("models");
    let mut round_trips = 0;
    for p in files_under(&models) {
        let bytes = ok(fs::read(&p), "read")?;
        let ck = ok(Checkpoint::from_bytes(&bytes), "parse")?;
        ensure!(ck.to_bytes() == bytes, "{} does not re-serialize bit-exactly", p.display());
        let name = p.file_name().and_then(|s| s.to_str()).unwrap_or_default();
        let again = if name.starts_with("pretrained") {
            resnet_checkpoint(&mut ok(resnet_from_checkpoint(&ck), name)?)
        } else if name.starts_with("acoustic") {
            ok(ok(AcousticFold::from_checkpoint(&ck), name)?.to_checkpoint(), name)?
        } else if name.starts_with("lf_") {
            ok(LateFusion::from_checkpoint(&ck), name)?.to_checkpoint()
        } else if name.starts_with("tagger") {
            let mut t = ok(load_tagger(&p), name)?;
            let out = root.join("resaved.ckpt");
            ok(save_tagger(&mut t, &out), name)?;
            ensure!(ok(fs::read(&out), "read")? == bytes, "{name} re-saves differently");
            ok(Checkpoint::load(&out), name)?
        } else {
            continue;
        };
        ensure!(same_params(&ck, &again), "{name}: parameters change through load/save");
        round_trips += 1;
    }
    let feats = work.join("features.ckpt");
    let bytes = ok(fs::read(&feats), "read")?;
    ensure!(ok(Checkpoint::from_bytes(&bytes), "parse")?.to_bytes() == bytes, "features checkpoint");
    ensure!(round_trips >= 10, "only {round_trips} model checkpoints");
    Ok(format!("{compared} artifacts identical across runs; {round_trips} model round trips bit-exact"))
}

fn run(name: &str, f: impl FnOnce() -> Outcome) -> bool {
    let t = Instant::now();
    let r = panic::catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
        let msg = e
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_default();
        Err(format!("panicked: {msg}"))
    });
    let secs = t.elapsed().as_secs_f64();
    match &r {
        Ok(d) => println!("{name}: PASS {d} [{secs:.1}s]"),
        Err(d) => println!("{name}: FAIL {d} [{secs:.1}s]"),
    }
    r.is_ok()
}

/// Criterion numbers given on the command line select a subset.
fn main() {
    let only: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let scratch = tempfile::tempdir().expect("tempdir");
    let desk = scratch.path().join("desk");
    let tiny = scratch.path().join("tiny");
    fs::create_dir_all(&tiny).expect("mkdir");
    let criteria: Vec<(&str, Box<dyn FnOnce() -> Outcome + '_>)> = vec![
        ("analytic baselines", Box::new(baselines)),
        ("gradient checks", Box::new(gradients)),
        ("dsp oracles", Box::new(dsp_oracles)),
        ("dlf rule", Box::new(dlf_rule)),
        ("oracle dominance", Box::new(oracle_dominance)),
        ("cv hygiene", Box::new(cv_hygiene)),
        ("oversampling", Box::new(oversampling)),
        ("desk end-to-end", Box::new(|| desk_run(&desk))),
        ("prosody analysis", Box::new(|| prosody(&desk))),
        ("determinism and persistence", Box::new(|| determinism(&tiny))),
    ];
    let mut results = Vec::new();
    for (i, (name, f)) in criteria.into_iter().enumerate() {
        if only.is_empty() || only.contains(&(i + 1)) {
            results.push(run(&format!("criterion {} ({name})", i + 1), f));
        }
    }
    let failed = results.iter().filter(|&&r| !r).count();
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
