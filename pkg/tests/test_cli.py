import json
import subprocess
import sys

import pytest

from ggmixer.cli import build_parser, run
from ggmixer.network import count_parameters
from ggmixer.training import load_checkpoint


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    data, out = root / "d", root / "m"
    assert run(["gen-data", "--seed", "0", "--joints", "8", "--frames", "400", "--out", str(data)]) == 0
    cfg = root / "c.json"
    cfg.write_text(json.dumps({"network": {"input_frames": 16, "output_frames": 8, "middle_blocks": 2},
                               "training": {"iterations": 20, "batch_size": 8}}))
    assert run(["train", "--data", str(data), "--config", str(cfg), "--out", str(out)]) == 0
    return root, data, out, cfg


def test_end_to_end(pipeline, capsys):
    _, data, out, _ = pipeline
    assert run(["eval", "--checkpoint", str(out / "final.ckpt"), "--data", str(data),
                "--protocol", "averaged"]) == 0
    csv = (out / "metrics_averaged.csv").read_text()
    assert csv.startswith("ms,frame,mpjpe_mm,protocol,samples\n80,2,")
    for name in ("final.ckpt", "config.json", "history.csv", "manifest.json", "manifest_eval_averaged.json"):
        assert (out / name).exists()


def test_gen_data_layout(pipeline):
    _, data, _, _ = pipeline
    assert json.loads((data / "skeleton.json").read_text())["joint_count"] == 8
    seeds = json.loads((data / "manifest.json").read_text())["config"]["split_seeds"]
    flat = [s for v in seeds.values() for s in v]
    assert len(flat) == len(set(flat))  # disjoint splits
    assert len(list((data / "train").glob("*.ggms"))) == 4


def test_manifest_fields(pipeline):
    _, _, out, _ = pipeline
    doc = json.loads((out / "manifest.json").read_text())
    assert {"config", "seed", "version", "timings_s"} <= set(doc)
    assert doc["config"]["training"]["iterations"] == 20


def test_flag_overrides_config(pipeline):
    root, data, _, cfg = pipeline
    out = root / "override"
    assert run(["train", "--data", str(data), "--config", str(cfg), "--out", str(out),
                "--iterations", "3", "--middle-blocks", "0"]) == 0
    doc = json.loads((out / "manifest.json").read_text())
    assert doc["config"]["training"]["iterations"] == 3
    assert doc["config"]["network"]["middle_blocks"] == 0
    assert len((out / "history.csv").read_text().strip().split("\n")) == 4


def test_byte_identical_metrics(pipeline):
    root, data, out, cfg = pipeline
    csvs = []
    for k in range(2):
        o = root / f"repeat{k}"
        assert run(["train", "--data", str(data), "--config", str(cfg), "--out", str(o), "--seed", "4"]) == 0
        assert run(["eval", "--checkpoint", str(o / "final.ckpt"), "--data", str(data)]) == 0
        csvs.append((o / "metrics_per-frame.csv").read_bytes())
    assert csvs[0] == csvs[1]


def test_inspect_count(pipeline, capsys):
    _, _, out, _ = pipeline
    assert run(["inspect", "--checkpoint", str(out / "final.ckpt")]) == 0
    printed = capsys.readouterr().out
    model, _ = load_checkpoint(out / "final.ckpt")
    assert f"parameters: {count_parameters(model)}\n" in printed


def test_zero_guidance_eval(pipeline):
    _, data, out, _ = pipeline
    assert run(["eval", "--checkpoint", str(out / "final.ckpt"), "--data", str(data), "--zero-guidance"]) == 0
    assert (out / "metrics_per-frame_zero_guidance.csv").exists()


def test_ablate(pipeline):
    root, data, _, cfg = pipeline
    out = root / "ablate"
    assert run(["ablate", "--data", str(data), "--config", str(cfg), "--out", str(out),
                "--settings", "baseline,abcdef", "--seeds", "0", "--iterations", "2"]) == 0
    summary = json.loads((out / "ablation.json").read_text())
    assert set(summary) == {"baseline", "abcdef"}


def test_ablate_unknown_setting(pipeline, capsys):
    root, data, _, _ = pipeline
    assert run(["ablate", "--data", str(data), "--out", str(root / "x"), "--settings", "zz"]) == 2
    assert "--settings" in capsys.readouterr().err


@pytest.mark.parametrize("cmd", [[], ["gen-data"], ["train"], ["eval"], ["gradcheck"], ["ablate"], ["inspect"]])
def test_help(cmd, capsys):
    assert run(cmd + ["--help"]) == 0
    assert "usage:" in capsys.readouterr().out


def test_negative_lr(capsys, tmp_path):
    assert run(["train", "--data", str(tmp_path), "--out", str(tmp_path / "o"), "--lr", "-1"]) == 2
    assert "--lr" in capsys.readouterr().err
    assert not (tmp_path / "o").exists()


@pytest.mark.parametrize("argv", [["frobnicate"], ["train", "--bogus"], ["eval", "--protocol", "median"]])
def test_usage_errors(argv):
    assert run(argv) == 2


def test_runtime_failure(tmp_path, capsys):
    assert run(["eval", "--checkpoint", str(tmp_path / "none.ckpt"), "--data", str(tmp_path)]) == 1
    assert "none.ckpt" in capsys.readouterr().err


def test_bad_thread_env(monkeypatch, tmp_path):
    monkeypatch.setenv("GGMIXER_THREADS", "lots")
    assert run(["inspect", "--checkpoint", str(tmp_path / "x")]) == 2


def test_module_entry_point():
    out = subprocess.run([sys.executable, "-m", "ggmixer.cli", "--help"], capture_output=True, text=True)
    assert out.returncode == 0 and "gen-data" in out.stdout


def test_precedence_documented():
    assert "later winning" in build_parser().description
