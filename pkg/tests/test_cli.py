import json

import numpy as np
import pytest

from pumpmap.cli import main, parse_count, read_report
from pumpmap.config import builtin_dir
from pumpmap.errors import InvalidArgumentError
from pumpmap.formats import read_vgd


def small_config(tmp_path, name="butt", seed=True, rays=20000):
    text = (builtin_dir() / f"{name}.yaml").read_text()
    text = text.replace("rays: 10000000", f"rays: {rays}").replace("pitch_mm: 0.1", "pitch_mm: 0.25")
    text = text.replace("batch_size: 100000", "batch_size: 5000")
    if not seed:
        text = text.replace("  seed: 42\n", "")
    p = tmp_path / f"{name}.yaml"
    p.write_text(text)
    return p


def test_parse_count():
    assert parse_count("1e7") == 10_000_000
    assert parse_count("1_000_000") == 1_000_000
    for bad in ("0", "-5", "1.5", "abc", "inf"):
        with pytest.raises(InvalidArgumentError):
            parse_count(bad)


def test_trace_zero_rays_exit_code(tmp_path):
    cfg = small_config(tmp_path)
    assert main(["trace", "--config", str(cfg), "--rays", "0", "--out", str(tmp_path / "g.vgd")]) == 2


def test_missing_and_bad_config_exit_codes(tmp_path):
    assert main(["trace", "--config", str(tmp_path / "none.yaml"), "--out", str(tmp_path / "g.vgd")]) == 4
    bad = tmp_path / "bad.yaml"
    bad.write_text(small_config(tmp_path).read_text().replace("tip_style: flat", "tip_style: round"))
    assert main(["trace", "--config", str(bad), "--out", str(tmp_path / "g.vgd")]) == 3


def test_trace_is_byte_identical(tmp_path):
    cfg = small_config(tmp_path)
    outs = []
    for k in range(2):
        out = tmp_path / f"g{k}.vgd"
        assert main(["trace", "--config", str(cfg), "--out", str(out), "--project", "y"]) == 0
        outs.append(out)
    assert outs[0].read_bytes() == outs[1].read_bytes()
    g = read_vgd(outs[0])
    assert g.values.sum() > 0
    man = json.loads((tmp_path / "g0.vgd.manifest.json").read_text())
    assert man["seed"] == 42 and man["schema"] == "pumpmap-manifest/1"


def test_seed_flag_overrides_config(tmp_path):
    cfg = small_config(tmp_path)
    a, b = tmp_path / "a.vgd", tmp_path / "b.vgd"
    main(["trace", "--config", str(cfg), "--out", str(a)])
    main(["trace", "--config", str(cfg), "--out", str(b), "--seed", "7"])
    assert a.read_bytes() != b.read_bytes()
    assert json.loads((tmp_path / "b.vgd.manifest.json").read_text())["seed"] == 7


def test_seed_environment_fallback(tmp_path, monkeypatch):
    cfg = small_config(tmp_path, seed=False)
    monkeypatch.setenv("PUMPMAP_SEED", "11")
    out = tmp_path / "env.vgd"
    assert main(["trace", "--config", str(cfg), "--out", str(out)]) == 0
    assert json.loads((tmp_path / "env.vgd.manifest.json").read_text())["seed"] == 11
    monkeypatch.setenv("PUMPMAP_SEED", "x")
    assert main(["trace", "--config", str(cfg), "--out", str(out)]) == 2
    monkeypatch.delenv("PUMPMAP_SEED")
    assert main(["trace", "--config", str(cfg), "--out", str(out)]) == 0
    assert json.loads((tmp_path / "env.vgd.manifest.json").read_text())["seed"] == 0


def test_trace_replay_matches(tmp_path, capsys):
    cfg = small_config(tmp_path)
    out = tmp_path / "g.vgd"
    main(["trace", "--config", str(cfg), "--out", str(out)])
    capsys.readouterr()
    assert main(["replay", str(tmp_path / "g.vgd.manifest.json"), "--out-dir", str(tmp_path / "rep")]) == 0
    assert "MISMATCH" not in capsys.readouterr().out
    assert (tmp_path / "rep" / "outputs" / "g.vgd").read_bytes() == out.read_bytes()


def test_sweep_steps_and_single_point(tmp_path):
    cfg = small_config(tmp_path, rays=5000)
    out = tmp_path / "s.csv"
    args = ["sweep", "--config", str(cfg), "--param", "alpha", "--start", "1", "--stop", "3",
            "--steps", "9", "--out", str(out)]
    assert main(args) == 0
    lines = [l for l in out.read_text().splitlines() if not l.startswith("#")]
    assert len(lines) == 10
    vals = [float(l.split(",")[2]) for l in lines[1:]]
    assert vals == pytest.approx(list(np.linspace(1, 3, 9)))
    seeds = [int(l.split(",")[3]) for l in lines[1:]]
    assert len(set(seeds)) == 9
    assert main(["sweep", "--config", str(cfg), "--param", "alpha", "--values", "2.0", "--out", str(out)]) == 0
    assert len([l for l in out.read_text().splitlines() if not l.startswith("#")]) == 2
    assert main(["sweep", "--config", str(cfg), "--param", "colour", "--values", "1", "--out", str(out)]) == 2
    assert main(["sweep", "--config", str(cfg), "--param", "alpha", "--out", str(out)]) == 2


def test_mode_overlap_and_inspect(tmp_path, capsys):
    cav = builtin_dir() / "cavity.yaml"
    fmp = tmp_path / "f.fmp"
    assert main(["mode", "--config", str(cav), "--tune", "off", "--out", str(fmp)]) == 0
    cfg = small_config(tmp_path)
    vgd = tmp_path / "g.vgd"
    main(["trace", "--config", str(cfg), "--out", str(vgd)])
    rep = tmp_path / "r.csv"
    assert main(["overlap", "--grid", str(vgd), "--field", str(fmp), "--out", str(rep)]) == 0
    rows = read_report(rep)
    assert float(rows[0]["delta_T2W"]) > 0
    capsys.readouterr()
    assert main(["inspect", str(vgd), str(fmp)]) == 0
    heads = [json.loads(l) for l in capsys.readouterr().out.splitlines()]
    assert [h["format"] for h in heads] == ["VGD1", "FMP1"]
    assert main(["inspect", str(cfg)]) == 4
