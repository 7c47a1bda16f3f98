import json
import os

import numpy as np
import pytest

from tempoguard.cli import EXIT_ATTACKED, EXIT_BENIGN, EXIT_IO, EXIT_USAGE, main
from tempoguard.frameio import load_frames

FAST = ["--extent", "6", "--spacing", "1.0", "--objects", "0"]


def _gen(tmp_path, name, attack="none", extra=()):
    out = tmp_path / name
    argv = ["gen", "--out", str(out), "--attack", attack, *FAST, *extra]
    assert main(argv) == EXIT_BENIGN
    return out


def test_gen_writes_frames_and_ground_truth(tmp_path):
    out = _gen(tmp_path, "scene.tgpc", extra=["--duration", "3"])
    frames = load_frames(out)
    assert len(frames) == 3
    assert (tmp_path / "scene.tgpc.gt.json").exists()


def test_gen_is_seed_deterministic(tmp_path):
    a = _gen(tmp_path, "a.tgpc", extra=["--duration", "3", "--seed", "7"])
    b = _gen(tmp_path, "b.tgpc", extra=["--duration", "3", "--seed", "7"])
    c = _gen(tmp_path, "c.tgpc", extra=["--duration", "3", "--seed", "8"])
    assert a.read_bytes() == b.read_bytes()
    assert a.read_bytes() != c.read_bytes()


def test_env_seed_override(tmp_path, monkeypatch):
    monkeypatch.setenv("TEMPO_GUARD_SEED", "7")
    via_env = _gen(tmp_path, "env.tgpc", extra=["--duration", "3"])
    monkeypatch.delenv("TEMPO_GUARD_SEED")
    via_flag = _gen(tmp_path, "flag.tgpc", extra=["--duration", "3", "--seed", "7"])
    assert via_env.read_bytes() == via_flag.read_bytes()


def test_detect_requires_frames_flag():
    assert main(["detect"]) == EXIT_USAGE


def test_detect_missing_file_is_io_error(tmp_path):
    assert main(["detect", "--frames", str(tmp_path / "absent.tgpc")]) == EXIT_IO


def test_detect_rejects_short_sequences(tmp_path):
    out = _gen(tmp_path, "short.tgpc", extra=["--duration", "3"])
    assert main(["detect", "--frames", str(out), "--history", "5"]) == EXIT_USAGE


def test_unknown_flag_is_usage_error():
    assert main(["detect", "--bogus"]) == EXIT_USAGE


def test_detect_benign_scene(tmp_path, capsys):
    out = _gen(tmp_path, "benign.tgpc", extra=["--duration", "4"])
    capsys.readouterr()  # drop the gen message
    code = main(["detect", "--frames", str(out), "--history", "3"])
    assert code == EXIT_BENIGN
    lines = [json.loads(l) for l in capsys.readouterr().out.strip().split("\n")]
    assert len(lines) == 1
    assert lines[0]["decision"] == "BENIGN" and lines[0]["score"] == 0.0


def _gen_attacked(tmp_path, name):
    # Full-scale scene: the detector's history alignment needs realistic
    # cloud sizes, so the attacked-path tests use the gen defaults.
    out = tmp_path / name
    assert main(["gen", "--out", str(out), "--attack", "dense", "--objects", "0",
                 "--attack-template", "PEDESTRIAN"]) == EXIT_BENIGN
    return out


def test_detect_attacked_scene_and_out_file(tmp_path):
    out = _gen_attacked(tmp_path, "attacked.tgpc")
    report = tmp_path / "report.jsonl"
    code = main(["detect", "--frames", str(out), "--out", str(report)])
    assert code == EXIT_ATTACKED
    payload = json.loads(report.read_text().strip())
    assert payload["decision"] == "ATTACKED"
    assert payload["score"] > 15.0
    # Flagged raw indices point at the injected tail of the final frame.
    frames = load_frames(out)
    n_original = len(frames[-1].points) - 200
    assert all(i >= n_original for c in payload["residual_indices"] for i in c)


def test_yaml_config_keys_and_flag_precedence(tmp_path):
    out = _gen_attacked(tmp_path, "cfg.tgpc")
    cfg = tmp_path / "cfg.yaml"
    cfg.write_text("threshold: 1000000\n")
    # Config raises the threshold above any score: benign verdict.
    assert main(["detect", "--frames", str(out), "--config", str(cfg),
                 "--out", str(tmp_path / "r1.jsonl")]) == EXIT_BENIGN
    # An explicit flag overrides the config key.
    assert main(["detect", "--frames", str(out), "--config", str(cfg), "--threshold", "15",
                 "--out", str(tmp_path / "r2.jsonl")]) == EXIT_ATTACKED


def test_config_must_be_mapping(tmp_path):
    out = _gen(tmp_path, "m.tgpc", extra=["--duration", "4"])
    cfg = tmp_path / "bad.yaml"
    cfg.write_text("- just\n- a list\n")
    assert main(["detect", "--frames", str(out), "--config", str(cfg)]) == EXIT_USAGE


def test_benchmark_csv_and_plot(tmp_path, capsys):
    out = tmp_path / "bench.csv"
    code = main(["benchmark", "--kind", "dense", "--n-benign", "1", "--n-poisoned", "1",
                 "--history", "4", "--out", str(out)])
    assert code == EXIT_BENIGN
    lines = out.read_text().strip().split("\n")
    assert lines[0] == "scenario,label,score,decision,wall_ms"
    assert len(lines) == 3
    assert out.with_suffix(".png").exists()
    assert "FPR:" in capsys.readouterr().out


def test_no_plot_skips_figure(tmp_path):
    out = tmp_path / "bench.csv"
    assert main(["benchmark", "--kind", "dense", "--n-benign", "1", "--n-poisoned", "0",
                 "--history", "4", "--no-plot", "--out", str(out)]) == EXIT_BENIGN
    assert out.exists() and not out.with_suffix(".png").exists()
