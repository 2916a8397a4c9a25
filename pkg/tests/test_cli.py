import json
import math
import re
import xml.etree.ElementTree as ET
from importlib.resources import files

import numpy as np
import pytest

from rgan_lab import cli, theory
from rgan_lab.cli import main
from rgan_lab.config import default_config_text, load_config
from rgan_lab.experiment import (
    METRIC_COLUMNS,
    SUMMARY_COLUMNS,
    CheckpointError,
    checkpoint_from_json,
    checkpoint_to_json,
    evaluate,
    load_checkpoint,
    read_metrics_csv,
    run_one,
    state_from_checkpoint,
)
from rgan_lab.plotting import PLOT_HEIGHT, PLOT_LEFT, PLOT_TOP, PLOT_WIDTH, line_chart, scatter_chart
from rgan_lab.robust import rgan_train_step

SVG = "{http://www.w3.org/2000/svg}"

TINY = """\
arms = {arms}
seeds = {seeds}
eval_interval = 10
data.train_size = 16
gan.m = 16
gan.steps = 20
gan.hidden = 8
gan.lr_g = {lr}
gan.lr_d = {lr}
eval.samples = 200
eval.mmd_samples = 50
eval.stress_repeats = 2
eval.gap_fresh = 800
"""


def tiny_config(tmp_path, arms="baseline", seeds="42", lr=0.001, name="tiny.cfg"):
    path = tmp_path / name
    path.write_text(TINY.format(arms=arms, seeds=seeds, lr=lr))
    return path


def reference_path():
    return files("rgan_lab").joinpath("reference/reference_checkpoint.json")


class TestTrain:
    def test_byte_identical_reruns(self, tmp_path):
        cfg = tiny_config(tmp_path)
        assert main(["train", "--config", str(cfg), "--out", str(tmp_path / "a")]) == 0
        assert main(["train", "--config", str(cfg), "--out", str(tmp_path / "b")]) == 0
        for rel in ("metrics/baseline_seed42.csv", "summary.csv", "runs.csv", "checkpoints/baseline_seed42.json"):
            assert (tmp_path / "a" / rel).read_bytes() == (tmp_path / "b" / rel).read_bytes()

    def test_packaged_config_by_name(self, monkeypatch, tmp_path):
        seen = []
        monkeypatch.setattr(cli, "run_experiment", lambda exp, out, parallel=False, log=None: seen.append(exp) or [])
        assert main(["train", "--config", "image_scale", "--out", str(tmp_path / "o")]) == 0
        assert seen[0].robust.eps2 == 4.0

    def test_csv_format(self, tmp_path):
        cfg = tiny_config(tmp_path)
        main(["train", "--config", str(cfg), "--out", str(tmp_path / "a")])
        raw = (tmp_path / "a/metrics/baseline_seed42.csv").read_bytes()
        assert b"\r" not in raw
        lines = raw.decode().splitlines()
        assert lines[0] == ",".join(METRIC_COLUMNS)
        assert [line.split(",")[0] for line in lines[1:]] == ["0", "10", "20"]
        rows = read_metrics_csv(tmp_path / "a/metrics/baseline_seed42.csv")
        assert all(math.isfinite(r["mmd"]) and math.isfinite(r["gen_gap_d"]) for r in rows)

    def test_five_arm_ablation(self, tmp_path):
        arms = "baseline, rgan, ablation_g_only, ablation_d_only, ablation_random_noise"
        cfg = tiny_config(tmp_path, arms=arms, seeds="1")
        assert main(["train", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 0
        assert len(list((tmp_path / "o/metrics").glob("*.csv"))) == 5
        summary = (tmp_path / "o/summary.csv").read_text().splitlines()
        assert summary[0] == ",".join(SUMMARY_COLUMNS)
        assert [line.split(",")[0] for line in summary[1:]] == [a.strip() for a in arms.split(",")]

    def test_seed_and_arm_overrides(self, tmp_path):
        cfg = tiny_config(tmp_path, arms="baseline, rgan", seeds="1, 2")
        assert main(["train", "--config", str(cfg), "--out", str(tmp_path / "o"), "--seed", "9", "--arm", "rgan"]) == 0
        assert [p.name for p in (tmp_path / "o/metrics").iterdir()] == ["rgan_seed9.csv"]

    def test_parallel_matches_sequential(self, tmp_path):
        cfg = tiny_config(tmp_path, arms="baseline, rgan", seeds="1, 2")
        main(["train", "--config", str(cfg), "--out", str(tmp_path / "s")])
        main(["train", "--config", str(cfg), "--out", str(tmp_path / "p"), "--parallel-seeds"])
        for f in sorted((tmp_path / "s/metrics").iterdir()):
            assert f.read_bytes() == (tmp_path / "p/metrics" / f.name).read_bytes()
        assert (tmp_path / "s/summary.csv").read_bytes() == (tmp_path / "p/summary.csv").read_bytes()

    def test_logs_hyperparameters(self, tmp_path, caplog):
        caplog.set_level("INFO", logger="rgan_lab")
        path = tmp_path / "image.cfg"
        text = default_config_text("image_scale")
        text = re.sub(r"gan.steps = \d+", "gan.steps = 2", text)
        text = re.sub(r"seeds = .*", "seeds = 1", text)
        text = re.sub(r"arms = .*", "arms = rgan", text)
        text = re.sub(r"data.train_size = \d+", "data.train_size = 0", text)
        text = re.sub(r"eval.samples = \d+", "eval.samples = 100", text)
        text = re.sub(r"eval.mmd_samples = \d+", "eval.mmd_samples = 20", text)
        text = re.sub(r"eval.stress_repeats = \d+", "eval.stress_repeats = 1", text)
        path.write_text(text)
        assert main(["train", "--config", str(path), "--out", str(tmp_path / "o")]) == 0
        assert "lambda=0.1 eps1=0.01 eps2=4" in caplog.text

    def test_invalid_config(self, tmp_path, capsys):
        bad = tmp_path / "bad.cfg"
        bad.write_text("seeds = 1\ngan.m = zero\n")
        assert main(["train", "--config", str(bad)]) == 2
        assert "bad.cfg:2:" in capsys.readouterr().err

    def test_missing_config(self, tmp_path):
        assert main(["train", "--config", str(tmp_path / "absent.cfg")]) == 2

    def test_unknown_arm(self, tmp_path):
        assert main(["train", "--config", str(tiny_config(tmp_path)), "--arm", "wgan"]) == 2

    def test_divergence_exit_code(self, tmp_path, capsys):
        cfg = tiny_config(tmp_path, lr=1e300)
        assert main(["train", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 3
        assert "diverged" in capsys.readouterr().err


class TestCheckpoint:
    def test_round_trip_exact(self, tmp_path):
        exp = load_config(tiny_config(tmp_path, arms="rgan"))
        result = run_one(exp, "rgan", 3)
        ck = result.checkpoint
        text = checkpoint_to_json(ck)
        back = checkpoint_from_json(text)
        assert checkpoint_to_json(back) == text
        assert back.G.params == ck.G.params and back.D.params == ck.D.params
        assert np.array_equal(back.opt_d.v, ck.opt_d.v) and back.opt_g.t == ck.opt_g.t
        assert back.config == exp

    def test_resume_matches_uninterrupted(self, tmp_path):
        exp = load_config(tiny_config(tmp_path, arms="rgan"))
        cfg = exp.rgan_config("rgan")
        full = run_one(exp, "rgan", 3).checkpoint
        half = run_one(exp.with_overrides(gan=exp.gan.__class__(**{**exp.gan.__dict__, "steps": 10})), "rgan", 3)
        state = state_from_checkpoint(checkpoint_from_json(checkpoint_to_json(half.checkpoint)))
        for _ in range(10):
            rgan_train_step(state, cfg)
        assert state.G.params == full.G.params and state.D.params == full.D.params

    @pytest.mark.parametrize(
        "text",
        ["not json", "{}", '{"format": "rgan-lab-checkpoint", "version": 99}',
         '{"format": "rgan-lab-checkpoint", "version": 1, "arm": "rgan"}'],
    )
    def test_corrupt(self, text):
        with pytest.raises(CheckpointError):
            checkpoint_from_json(text)


class TestEval:
    def test_reference_checkpoint_reproduces_recorded_metrics(self):
        ck = load_checkpoint(reference_path())
        assert ck.metrics is not None and ck.step == 300
        record = evaluate(ck.G, ck.D, ck.config, ck.arm, ck.seed, ck.step)
        assert record == ck.metrics

    def test_reference_checkpoint_regenerates(self, tmp_path):
        path = tmp_path / "ref.cfg"
        path.write_text(default_config_text("reference"))
        assert main(["train", "--config", str(path), "--out", str(tmp_path / "o")]) == 0
        fresh = (tmp_path / "o/checkpoints/rgan_seed7.json").read_text()
        assert fresh == reference_path().read_text()

    def test_cli_eval_prints_and_appends(self, tmp_path, capsys):
        out = tmp_path / "eval.csv"
        ref = str(reference_path())
        assert main(["eval", "--checkpoint", ref, "--out", str(out)]) == 0
        first = capsys.readouterr().out
        assert main(["eval", "--checkpoint", ref, "--out", str(out)]) == 0
        assert capsys.readouterr().out == first
        lines = out.read_text().splitlines()
        assert len(lines) == 3 and lines[1] == lines[2]
        rows = read_metrics_csv(out)
        ck = load_checkpoint(ref)
        assert rows[0]["mmd"] == ck.metrics["mmd"]

    def test_eval_seed_changes_sampling(self, capsys):
        ref = str(reference_path())
        main(["eval", "--checkpoint", ref, "--seed", "1"])
        a = capsys.readouterr().out
        main(["eval", "--checkpoint", ref, "--seed", "2"])
        assert capsys.readouterr().out != a

    def test_untrained_checkpoint(self, tmp_path, capsys):
        cfg = tiny_config(tmp_path)
        text = cfg.read_text().replace("gan.steps = 20", "gan.steps = 0")
        cfg.write_text(text)
        assert main(["train", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 0
        assert main(["eval", "--checkpoint", str(tmp_path / "o/checkpoints/baseline_seed42.json")]) == 0
        values = capsys.readouterr().out.splitlines()[1].split(",")
        assert all(math.isfinite(float(v)) for i, v in enumerate(values) if i != 2)

    def test_corrupt_checkpoint_exit_code(self, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text('{"format": "something-else"}')
        assert main(["eval", "--checkpoint", str(bad)]) == 2
        assert main(["eval", "--checkpoint", str(tmp_path / "absent.json")]) == 2


class TestTheoryCheck:
    def test_passes(self, capsys):
        assert main(["theory-check"]) == 0
        out = capsys.readouterr().out
        assert out.splitlines()[0].split()[:5] == ["check", "lhs", "rhs", "tol", "result"]
        assert out.count("PASS") == 6 and "FAIL" not in out

    def test_perturbed_optimal_discriminator_fails(self, monkeypatch, capsys):
        monkeypatch.setattr(theory, "optimal_discriminator", lambda p, q: np.full(len(p.probs), 0.5))
        assert main(["theory-check", "--trials", "10"]) == 1
        captured = capsys.readouterr()
        assert "FAIL" in captured.out and "value_at_optimum_identity" in captured.err


def parse_svg(text):
    root = ET.fromstring(text)
    assert root.tag == SVG + "svg"
    return root


class TestPlot:
    def test_empty_metrics(self, tmp_path):
        csv_path = tmp_path / "m.csv"
        csv_path.write_text(",".join(METRIC_COLUMNS) + "\n")
        assert main(["plot", "--metrics", str(csv_path), "--out", str(tmp_path / "p")]) == 0
        root = parse_svg((tmp_path / "p/curve_mmd.svg").read_text())
        assert root.find(f".//{SVG}g[@class='axes']") is not None
        assert root.findall(f".//{SVG}polyline") == []

    def test_polyline_affine_mapping(self, tmp_path):
        csv_path = tmp_path / "m.csv"
        rows = [(0, 0.5), (10, 0.25), (20, 1.0)]
        lines = [",".join(METRIC_COLUMNS)]
        for step, mmd in rows:
            values = {c: "0.0" for c in METRIC_COLUMNS}
            values.update(step=str(step), seed="1", arm="baseline", mmd=repr(mmd))
            lines.append(",".join(values[c] for c in METRIC_COLUMNS))
        csv_path.write_text("\n".join(lines) + "\n")
        assert main(["plot", "--metrics", str(csv_path), "--out", str(tmp_path / "p")]) == 0
        poly = parse_svg((tmp_path / "p/curve_mmd.svg").read_text()).findall(f".//{SVG}polyline")
        assert len(poly) == 1
        pts = [tuple(map(float, p.split(","))) for p in poly[0].get("points").split()]
        for (step, mmd), (px, py) in zip(rows, pts):
            assert px == pytest.approx(PLOT_LEFT + step / 20 * PLOT_WIDTH, abs=1e-3)
            assert py == pytest.approx(PLOT_TOP + PLOT_HEIGHT - (mmd - 0.25) / 0.75 * PLOT_HEIGHT, abs=1e-3)

    def test_scatter_circle_count(self, tmp_path):
        ref = str(reference_path())
        assert main(["plot", "--checkpoint", ref, "--out", str(tmp_path / "p"), "--n", "37"]) == 0
        for name in ("scatter_real_vs_generated.svg", "scatter_clean_vs_worst_latent.svg"):
            root = parse_svg((tmp_path / "p" / name).read_text())
            assert len(root.findall(f".//{SVG}circle")) == 74
            assert all(c.get("r") for c in root.findall(f".//{SVG}circle"))

    def test_scatter_chart_direct(self):
        pts = np.random.default_rng(0).normal(size=(13, 2))
        root = parse_svg(scatter_chart({"a": pts}))
        assert len(root.findall(f".//{SVG}circle")) == 13

    def test_self_contained(self):
        text = line_chart({"a": ([0, 1], [2, 3])})
        assert "href" not in text and "<image" not in text and "<script" not in text

    def test_malformed_csv(self, tmp_path):
        bad = tmp_path / "bad.csv"
        bad.write_text("step,arm,mmd\n0,baseline\n")
        assert main(["plot", "--metrics", str(bad), "--out", str(tmp_path / "p")]) == 2
        bad.write_text("step,arm,mmd\n0,baseline,lots\n")
        assert main(["plot", "--metrics", str(bad), "--out", str(tmp_path / "p")]) == 2
        bad.write_text("")
        assert main(["plot", "--metrics", str(bad), "--out", str(tmp_path / "p")]) == 2
        assert main(["plot", "--metrics", str(tmp_path / "absent.csv"), "--out", str(tmp_path / "p")]) == 2


def test_module_entry_point():
    import subprocess
    import sys

    proc = subprocess.run([sys.executable, "-m", "rgan_lab", "theory-check", "--trials", "5"],
                          capture_output=True, text=True)
    assert proc.returncode == 0 and "PASS" in proc.stdout
