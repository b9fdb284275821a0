"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

The trained-model criteria share one desk-preset run on the default corpus
(seed 0), so the whole module takes a while on a single core.
"""

import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest

from dvfa.cli import main as cli_main
from dvfa.codec import perturb_transcript
from dvfa.synth import CorpusConfig, build_lexicon, gen_corpus, generate_split, load_corpus
from dvfa.trainer import TrainConfig, evaluate_model, fit, load_model, train

from conftest import DESK, OracleModel

ROOT = Path(__file__).resolve().parents[1]
TESTS = Path(__file__).resolve().parent
TIME_BUDGET_S = 30 * 60


def report(capsys, n, ok, detail):
    with capsys.disabled():
        print(f"\n[criterion {n}] {'PASS' if ok else 'FAIL'}: {detail}")
    assert ok, f"criterion {n}: {detail}"


def run_pytest(*targets):
    start = time.perf_counter()
    proc = subprocess.run([sys.executable, "-m", "pytest", "-q", "-p", "no:cacheprovider", *targets],
                          cwd=ROOT, capture_output=True, text=True)
    return proc.returncode, time.perf_counter() - start, proc.stdout.strip().splitlines()[-1]


# -- shared runs ------------------------------------------------------------------

@pytest.fixture(scope="module")
def ctc_report(desk_corpus_dir, tmp_path_factory):
    out = tmp_path_factory.mktemp("accept_ctc")
    train(TrainConfig(method="ctc", **DESK), desk_corpus_dir, out)
    model, task, _ = load_model(out / "best.npz")
    return evaluate_model(model, task, load_corpus(desk_corpus_dir).split("test"), "clean")


# -- criteria -----------------------------------------------------------------------

def test_criterion_01_scope_statement(capsys):
    text = (ROOT / "README.md").read_text()
    ok = "not reproduced" in text and "synthetic" in text
    report(capsys, 1, ok, "README states that absolute results on real lip-reading corpora are not reproduced")


def test_criterion_02_gradient_suite(capsys):
    code, seconds, summary = run_pytest(str(TESTS / "test_autodiff.py"), str(TESTS / "test_nn.py"),
                                        str(TESTS / "test_ctc.py") + "::test_loss_gradient_matches_finite_differences",
                                        str(TESTS / "test_model.py") + "::test_end_to_end_gradient_check")
    report(capsys, 2, code == 0 and seconds < 60, f"{summary}; {seconds:.1f} s (limit 60 s)")


def test_criterion_03_codec_oracle(capsys):
    code, _, summary = run_pytest(
        str(TESTS / "test_codec.py") + "::test_worked_example_durations_1_3_2",
        str(TESTS / "test_codec.py") + "::test_round_trip_on_1000_random_configurations",
        str(TESTS / "test_codec.py") + "::test_repair_matches_exhaustive_search")
    report(capsys, 3, code == 0, f"worked example, 1000 round trips, exhaustive repair T<=6 S<=3: {summary}")


def test_criterion_04_ctc_oracle(capsys):
    code, _, summary = run_pytest(str(TESTS / "test_ctc.py") + "::test_loss_and_best_path_match_enumeration")
    report(capsys, 4, code == 0, f"brute-force enumeration T<=6, V<=4: {summary}")


def test_criterion_05_synthetic_reproduction(desk_run, capsys):
    r = desk_run["clean"]
    ok = r.frame_accuracy >= 0.90 and r.mae_frames <= 1.5 and desk_run["seconds"] <= TIME_BUDGET_S
    report(capsys, 5, ok, f"ACC {r.frame_accuracy:.4f} (>= 0.90), MAE {r.mae_frames:.3f} frames "
                          f"= {r.mae_ms:.1f} ms (<= 1.5), training {desk_run['seconds'] / 60:.1f} min (<= 30)")


def test_criterion_06_beats_ctc_baseline(desk_run, ctc_report, capsys):
    d = desk_run["clean"]
    ok = d.mae_frames <= ctc_report.mae_frames and d.frame_accuracy >= ctc_report.frame_accuracy
    report(capsys, 6, ok, f"DVFA MAE {d.mae_frames:.3f} / ACC {d.frame_accuracy:.4f} vs "
                          f"CTC MAE {ctc_report.mae_frames:.3f} / ACC {ctc_report.frame_accuracy:.4f}")


def test_criterion_07_anomaly_detection(desk_run, capsys):
    a = desk_run["anomaly"].anomaly
    chance = evaluate_model(OracleModel(desk_run["task"].config, blind=True), desk_run["task"], desk_run["test"],
                            "anomaly").anomaly
    ok = (a["addition"] >= 0.90 and a["deletion"] >= 0.75 and min(a["addition"], a["deletion"]) > 0.55
          and a["addition"] > a["deletion"]
          and all(abs(chance[k] - 0.5) <= 0.01 for k in ("addition", "deletion")))
    report(capsys, 7, ok, f"addition {a['addition']:.3f} (>= 0.90), deletion {a['deletion']:.3f} (>= 0.75), "
                          f"chance {chance['addition']:.3f}/{chance['deletion']:.3f} (0.50 +- 0.01); "
                          f"per-word addition {a['addition_word']:.3f}")


def test_criterion_08_position_beats_word_targets(tmp_path, capsys):
    gen_corpus(CorpusConfig(holdout_words=3, n_train=600, n_val=50, n_test=100), 0, tmp_path)
    corpus = load_corpus(tmp_path)
    acc = {}
    for target in ("position", "word"):
        tcfg = TrainConfig(target=target, epochs=12)
        model, task, _ = fit(tcfg, corpus.lexicon, corpus.split("train"), corpus.split("val"))
        acc[target] = evaluate_model(model, task, corpus.split("test"), "clean").frame_accuracy
    report(capsys, 8, acc["position"] > acc["word"],
           f"held-out-word split: position ACC {acc['position']:.4f} vs word ACC {acc['word']:.4f}")


def test_criterion_09_perturbation_rates(capsys):
    lexicon = build_lexicon(0)
    utts = generate_split(CorpusConfig(noise_sigma=0.0), lexicon, 0, "train", 10_000)
    rng = np.random.default_rng(0)
    counts = {"addition": 0, "deletion": 0, "substitution": 0}
    n_words = 0
    for u in utts:
        for r in perturb_transcript(u, rng, 0.1, 0.1, 0.1, lexicon.words).records:
            counts[r.kind] += 1
        n_words += u.n_words
    rates = {k: v / n_words for k, v in counts.items()}
    ok = all(0.09 <= r <= 0.11 for r in rates.values())
    report(capsys, 9, ok, ", ".join(f"{k} {v:.4f}" for k, v in rates.items()) + f" over {n_words} words")


def test_criterion_10_determinism(tiny_corpus_dir, tmp_path, capsys):
    logs, reports = [], []
    for k in range(2):
        out = tmp_path / f"run{k}"
        assert cli_main(["train", "--data", str(tiny_corpus_dir), "--out", str(out), "--epochs", "2",
                         "--batch-size", "8"]) == 0
        logs.append((out / "metrics.jsonl").read_bytes())
        for mode in ("clean", "anomaly"):
            path = tmp_path / f"{mode}{k}.json"
            assert cli_main(["eval", "--checkpoint", str(out / "best.npz"), "--data", str(tiny_corpus_dir),
                             "--mode", mode, "--out", str(path)]) == 0
            reports.append(path.read_bytes())
    ok = logs[0] == logs[1] and reports[:2] == reports[2:]
    report(capsys, 10, ok, "repeated train and eval commands give byte-identical metrics.jsonl and reports")
