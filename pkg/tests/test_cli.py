import json

import numpy as np
import pytest

from unishade import cli, io
from unishade.assets import data_path


def run(capsys, *argv):
    code = cli.main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def test_print_config_lists_sections(capsys):
    code, out, _ = run(capsys, "--print-config")
    assert code == 0
    keys = [ln.split(" = ")[0] for ln in out.splitlines()]
    assert {k.split(".")[0] for k in keys} == set(cli.SECTIONS)
    assert "train.lambda_normal" in keys and "grid.face_resolution" in keys


def test_usage_errors_exit_2(capsys):
    assert run(capsys, "render")[0] == 2  # --out missing
    assert run(capsys, "frobnicate")[0] == 2
    assert run(capsys)[0] == 2


def test_missing_checkpoint_exit_3(capsys, tmp_path):
    code, _, err = run(capsys, "render", "--checkpoint", str(tmp_path / "none.ck"), "--out", str(tmp_path))
    assert code == 3 and "no such file" in err


def test_unknown_config_key_exit_6(capsys, tmp_path):
    (tmp_path / "c.cfg").write_text("train.nonsense = 1\n")
    code, _, err = run(capsys, "render", "--config", str(tmp_path / "c.cfg"), "--out", str(tmp_path / "o"))
    assert code == 6 and "nonsense" in err


def test_bad_environment_exit_4(capsys, tmp_path):
    (tmp_path / "e.hdr").write_bytes(b"not an image")
    code, _, _ = run(capsys, "render", "--env", str(tmp_path / "e.hdr"), "--out", str(tmp_path / "o"))
    assert code == 4


def test_oracle_budget_exit_7(capsys, tmp_path):
    code, _, err = run(capsys, "oracle", "--views", "1", "--size", "200", "--out", str(tmp_path))
    assert code == 7 and "limited" in err


def test_render_writes_images_and_summary(capsys, tmp_path):
    out = tmp_path / "r"
    code, text, _ = run(capsys, "render", "--views", "2", "--size", "12", "--out", str(out),
                        "--summary", str(tmp_path / "s.json"))
    assert code == 0
    summary = json.loads(text)
    assert summary == json.loads((tmp_path / "s.json").read_text())
    assert [v["name"] for v in summary["views"]] == ["view_000", "view_001"]
    img = io.read_pfm(out / "view_001.pfm")
    assert img.shape == (12, 12, 3)
    assert summary["views"][1]["mean"] == pytest.approx(float(img.astype(np.float64).mean()), rel=1e-6)


def test_relight_scales_linearly(capsys, tmp_path):
    env = data_path("two_tone.pfm")
    base = json.loads(run(capsys, "relight", "--env", env, "--views", "1", "--size", "10",
                          "--out", str(tmp_path / "a"))[1])
    twice = json.loads(run(capsys, "relight", "--env", env, "--env-scale", "2", "--views", "1", "--size", "10",
                           "--out", str(tmp_path / "b"))[1])
    assert twice["views"][0]["mean"] == pytest.approx(2 * base["views"][0]["mean"], rel=1e-12)


def test_metrics_command(capsys, tmp_path, rng):
    img = rng.uniform(0, 1, (6, 6, 3))
    io.write_pfm(tmp_path / "a.pfm", img)
    code, text, _ = run(capsys, "metrics", "--rendered", str(tmp_path / "a.pfm"), "--reference",
                        str(tmp_path / "a.pfm"))
    out = json.loads(text)
    assert code == 0 and out["psnr"] == "inf" and out["ssim"] == pytest.approx(1.0)


def test_gradcheck_passes_and_fails_by_rate(capsys, tmp_path, monkeypatch):
    args = ("gradcheck", "--size", "12", "--stage", "2", "--report", str(tmp_path / "g.tsv"))
    code, text, _ = run(capsys, *args)
    s = json.loads(text)
    assert code == 0 and s["pass_rate"] >= cli.GRADCHECK_PASS_RATE
    rows = (tmp_path / "g.tsv").read_text().splitlines()
    assert len(rows) == s["parameters"] + 1
    monkeypatch.setattr(cli, "GRADCHECK_PASS_RATE", 1.01)
    assert run(capsys, *args)[0] == cli.EXIT_GRADCHECK_FAILED


def test_bake_summary_and_cache(capsys, tmp_path):
    (tmp_path / "c.cfg").write_text("grid.resolution = 2, 2, 2\ngrid.face_resolution = 4\n")
    code, text, _ = run(capsys, "bake", "--config", str(tmp_path / "c.cfg"), "--out", str(tmp_path / "p.bin"))
    s = json.loads(text)
    assert code == 0 and s["probes"] == 8 and s["face_resolution"] == 4
    from unishade.probes import load_probe_cache

    assert load_probe_cache(tmp_path / "p.bin").probe_count == 8


def test_threads_env_variable(monkeypatch, capsys, tmp_path):
    monkeypatch.setenv(cli.THREADS_ENV, "lots")
    assert run(capsys, "render", "--out", str(tmp_path))[0] == 6
