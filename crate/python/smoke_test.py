"""Smoke test for the ecpipe_py extension.

Build and install first:

    pip install --no-build-isolation ./crates/py
    python python/smoke_test.py
"""

import json
import math
import tempfile

import ecpipe_py as ec


def sine(freq, seconds=0.3, sr=16000, amp=0.5):
    n = int(seconds * sr)
    return [amp * math.sin(2 * math.pi * freq * i / sr) for i in range(n)]


def check_dsp():
    shape, data = ec.mfcc(sine(440.0))
    assert shape[0] == 40 and shape[2] == 3, shape
    assert len(data) == shape[0] * shape[1] * shape[2]
    voiced = [f for f in ec.extract_f0(sine(200.0)) if f > 0]
    assert voiced, "no voiced frames"
    mid = sorted(voiced)[len(voiced) // 2]
    assert abs(mid - 200.0) / 200.0 < 0.02, mid
    feats = ec.prosodic_features(sine(150.0))
    assert feats["f0_mean"] is not None and abs(feats["f0_mean"] - 150.0) < 3.0, feats


def check_fusion():
    assert ec.certainty(0.30, 0.15, 0.05) == "certain_positive"
    assert ec.certainty(0.20, 0.15, 0.05) == "uncertain"
    assert ec.certainty(0.05, 0.15, 0.05) == "certain_negative"
    assert ec.dlf_decide(0.17, 0.90) == "I"
    assert ec.dlf_decide(0.17, 0.60) == "O"
    assert ec.dlf_merge("certain_negative", "certain_positive") == "O"
    gold = ["I", "O", "I", "O"]
    merged = ec.oracle_stream(gold, ["I", "I", "O", "O"], ["O", "O", "I", "I"])
    assert merged == ["I", "O", "I", "O"], merged


def check_eval():
    m = ec.prf1(["I", "I", "O", "O"], ["I", "O", "I", "O"])
    assert m["tp"] == 1 and abs(m["f1"] - 0.5) < 1e-12, m
    exp = ec.baseline_expected(0.066, "equal")
    assert abs(exp["recall"] - 50.0) < 1e-9 and abs(exp["f1"] - 0.117) < 0.001, exp
    sim = ec.simulate_baseline(0.066, "class", 200000, 7)
    assert abs(sim["precision"] - 6.6) < 0.5 and abs(sim["recall"] - 6.6) < 0.5, sim
    t, p = ec.ttest_ind([1, 2, 3, 4, 5], [3, 4, 5, 6, 7])
    assert abs(t + 2.0) < 1e-9 and 0.07 < p < 0.09, (t, p)


def check_corpus():
    cfg = ec.PipelineConfig(desk=True)
    text = cfg.to_json()
    synth = json.loads(text)["synth"]
    synth.update(n_speakers=4, narratives_per_speaker=1, tokens_per_narrative=20)
    cfg = ec.PipelineConfig.from_json(json.dumps({"seed": 3, "synth": synth}))
    assert cfg.seed == 3 and len(cfg.hash()) == 64
    with tempfile.TemporaryDirectory() as root:
        corpus = ec.synth_generate(cfg, root)
        assert corpus.n_narratives == 4 and corpus.n_tokens == 80
        assert len(corpus.speakers()) == 4
        folds = corpus.split_folds(2, 0)
        assert sorted(folds.values()) == [0, 0, 1, 1], folds
        back = ec.Corpus.from_json(corpus.to_json())
        assert back.tokens() == corpus.tokens()


def check_cli():
    with tempfile.TemporaryDirectory() as work:
        assert ec.run_cli(["evaluate", "--workdir", work, "--experiment", "dlf"]) == 1
        assert ec.run_cli(["no-such-command"]) == 2


def main():
    check_dsp()
    check_fusion()
    check_eval()
    check_corpus()
    check_cli()
    print("ok")


if __name__ == "__main__":
    main()
