import json
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gredux import ConfigError
from gredux.cli import fmt, main, run_experiment
from gredux.config import SCHEMAS, default_config, emit_config, parse_config


def write(tmp_path, text, name="exp.cfg"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


@pytest.mark.parametrize("kind", sorted(SCHEMAS))
def test_defaults_round_trip(kind):
    cfg = default_config(kind)
    assert parse_config(emit_config(cfg)) == cfg


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(1e-6, 1e3, allow_nan=False), min_size=1, max_size=5),
       st.floats(0.01, 10.0), st.integers(0, 2**31), st.booleans())
def test_round_trip_property(eps, horizon, seed, plot):
    cfg = default_config("worst_case", **{"model.epsilons": tuple(eps), "model.horizon": horizon})
    cfg.seed, cfg.plot_script = seed, plot
    assert parse_config(emit_config(cfg)) == cfg


@pytest.mark.parametrize("text", [
    "[experiment]\nkind = lq_table\n[model]\nepsilon = 0.1\n",        # unknown key
    "[experiment]\nkind = lq_table\n[grid]\n",                          # unknown section
    "[experiment]\nkind = lq_table\ncolour = red\n",                    # unknown experiment key
    "[experiment]\nkind = nope\n",
    "[model]\nsigma = 0.8, 1.0\n",                                      # no kind
    "[experiment]\nkind = lq_table\n[model]\nsigma = 1.0, 0.8\n",       # inverted interval
    "[experiment]\nkind = lq_table\n[model]\nsigma = 0.8, x\n",
    "[experiment]\nkind = triad_case\n[model]\nA = 1.0, 1.0, -1.0\n",   # not energy conserving
    "[experiment]\nkind = strong_rate\n[model]\nepsilons = 0.2, 0.1\n",
    "[experiment]\nkind = worst_case\n[model]\ntheta_range = 0.0, 1.0\n",
    "[experiment]\nkind = lq_table\nkind = lq_table\n",
    "kind = lq_table\n",
])
def test_rejects_bad_configs(text):
    with pytest.raises(ConfigError):
        parse_config(text)


def test_comments_and_defaults():
    cfg = parse_config("# header\n[experiment]\nkind = pitchfork_scan  # trailing\nseed = 3\n")
    assert cfg.seed == 3 and cfg.model["thetas"] == (0.0, 1.0 / 3.0, 1.0)


def test_validate_exit_codes(tmp_path, capsys):
    good = write(tmp_path, "[experiment]\nkind = pitchfork_scan\n")
    assert main(["validate", good]) == 0
    assert "kind = pitchfork_scan" in capsys.readouterr().out
    bad = write(tmp_path, "[experiment]\nkind = pitchfork_scan\n[model]\nthetas = 2.0\n", "bad.cfg")
    assert main(["validate", bad]) == 2
    assert main(["validate", str(tmp_path / "missing.cfg")]) == 2


def test_solver_error_exit_code(tmp_path, capsys):
    # dt = 2 eps^2 is beyond the explicit stability limit of the fast block
    cfg = write(tmp_path, "[experiment]\nkind = strong_rate\n[model]\nepsilons = 0.4, 0.2, 0.05\nhorizon = 1.0\n"
                          "[solver]\nn_paths = 2\ndt_factor = 2.0\n")
    assert main(["run", cfg, "--out", str(tmp_path / "o")]) == 3
    assert "blew up" in capsys.readouterr().err
    assert not (tmp_path / "o").exists()


def _numbers_in(path: Path):
    out = set()
    for f in path.glob("*.csv"):
        for line in f.read_text().splitlines()[1:]:
            out.update(line.split(","))
    return out


def _walk(obj):
    if isinstance(obj, dict):
        for v in obj.values():
            yield from _walk(v)
    elif isinstance(obj, list):
        for v in obj:
            yield from _walk(v)
    else:
        yield obj


@pytest.mark.parametrize("kind,extra", [
    ("pitchfork_scan", ""),
    ("worst_case", "[model]\nepsilons = 0.2, 0.1\nhorizon = 0.2\n[solver]\nn_paths = 20\n"),
    ("sigma_star", "[solver]\ncells = 16\nn_slices = 3\n"),
    ("lq_table", "[model]\nepsilons = 0.5, 10.0\n[solver]\ncells = 16, 16\nreduced_cells = 16\n"),
])
def test_run_outputs(tmp_path, kind, extra):
    cfg = write(tmp_path, f"[experiment]\nkind = {kind}\nplot_script = true\n{extra}")
    outs = []
    for name in ("a", "b"):
        out = tmp_path / name
        assert main(["run", cfg, "--out", str(out), "--seed", "17", "--threads", "2"]) == 0
        outs.append(out)
    report = json.loads((outs[0] / "report.json").read_text())
    assert report["seed"] == 17
    cells = _numbers_in(outs[0])
    for key in ("inputs", "headline", "diagnostics"):
        for v in _walk(report[key]):
            if isinstance(v, (int, float)):
                assert fmt(v) in cells, (key, v)
    for f in outs[0].glob("*.csv"):
        text = f.read_bytes()
        assert text == (outs[1] / f.name).read_bytes()
        assert b"\r" not in text and text.endswith(b"\n")
    assert (outs[0] / "plot.py").exists()
    assert not list(outs[0].glob(".*.tmp"))


def test_pitchfork_census_in_report():
    rep = run_experiment(default_config("pitchfork_scan"))
    assert rep.headline["n_roots[theta=0.0]"] == 3
    assert rep.headline["n_roots[theta=1.0]"] == 1


def test_sigma_star_convex_reduced():
    rep = run_experiment(default_config("sigma_star", **{"solver.cells": (32,)}))
    assert rep.headline["fraction_upper"] == 1.0
    assert "sigma_star_field.csv" in rep.tables
