use std::fs;
use std::path::Path;

use ecpipe::cli::main_with_args;
use ecpipe::config::PipelineConfig;
use serde_json::Value;

fn run(args: &[&str]) -> i32 {
    main_with_args(std::iter::once("ecpipe").chain(args.iter().copied()))
}

fn baseline_config(dir: &Path) -> String {
    let mut cfg = PipelineConfig::default();
    cfg.seed = 3;
    cfg.synth.ec_fraction = 0.066;
    cfg.synth.n_speakers = 40;
    cfg.synth.narratives_per_speaker = 1;
    cfg.synth.tokens_per_narrative = 250;
    cfg.synth.write_audio = false;
    let path = dir.join("c.json");
    fs::write(&path, cfg.to_json()).unwrap();
    path.display().to_string()
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(run(&["no-such-command"]), 2);
    assert_eq!(run(&[]), 2);
    assert_eq!(run(&["evaluate", "--no-such-flag"]), 2);
}

#[test]
fn print_default_config_parses_back() {
    assert_eq!(run(&["--print-default-config"]), 0);
    let cfg = PipelineConfig::default();
    assert_eq!(PipelineConfig::from_json(&cfg.to_json(), "mem").unwrap(), cfg);
}

#[test]
fn bad_config_is_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("bad.json");
    fs::write(&p, "{\"seed\": \"x\"}").unwrap();
    let w = dir.path().join("w");
    assert_eq!(run(&["--config", p.to_str().unwrap(), "--workdir", w.to_str().unwrap(), "synth"]), 1);
    assert_eq!(run(&["--config", "/nonexistent/c.json", "synth"]), 1);
}

#[test]
fn missing_inputs_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let w = dir.path().to_str().unwrap();
    assert_eq!(run(&["--workdir", w, "evaluate", "--experiment", "dlf"]), 1);
    assert_eq!(run(&["--workdir", w, "ingest"]), 1);
    assert_eq!(run(&["--workdir", w, "features"]), 1);
}

#[test]
fn dlf_without_models_after_synth_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = baseline_config(dir.path());
    let w = dir.path().join("w");
    let w = w.to_str().unwrap();
    assert_eq!(run(&["--config", &cfg, "--workdir", w, "synth"]), 0);
    assert_eq!(run(&["--config", &cfg, "--workdir", w, "evaluate", "--experiment", "dlf"]), 1);
    assert_eq!(run(&["--config", &cfg, "--workdir", w, "evaluate", "--experiment", "nonsense"]), 1);
}

#[test]
fn baseline_evaluation_after_synth() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = baseline_config(dir.path());
    let w = dir.path().join("w");
    let ws = w.to_str().unwrap();
    assert_eq!(run(&["--config", &cfg, "--workdir", ws, "synth"]), 0);
    let args = ["--config", &cfg, "--workdir", ws, "evaluate", "--experiment", "baseline-equal,baseline-class"];
    assert_eq!(run(&args), 0);
    let path = w.join("results").join("baseline_equal.json");
    let first = fs::read(&path).unwrap();
    let v: Value = serde_json::from_slice(&first).unwrap();
    let p = v["mean"]["precision_i"].as_f64().unwrap();
    let r = v["mean"]["recall_i"].as_f64().unwrap();
    assert!((p - 6.6).abs() < 1.5, "P {p}");
    assert!((r - 50.0).abs() < 6.0, "R {r}");
    assert_eq!(v["seed"].as_u64(), Some(3));
    assert_eq!(v["k"].as_u64(), Some(5));
    assert_eq!(v["config_hash"].as_str().map(str::len), Some(64));

    assert_eq!(run(&args), 0);
    assert_eq!(fs::read(&path).unwrap(), first);
    assert!(w.join("results").join("table.txt").exists());
}
