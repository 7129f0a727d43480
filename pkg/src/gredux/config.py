"""Experiment configuration files.

Plain text, one ``[section]`` header followed by ``key = value`` lines; ``#``
starts a comment. Lists are comma separated. Every experiment kind has a
fixed schema and unknown sections or keys are rejected.

    [experiment]
    kind = lq_table
    seed = 2024

    [model]
    epsilons = 0.3, 0.2, 0.1
    sigma = 0.8, 1.0
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

from gredux.errors import ConfigError

FLOAT, INT, FLOATS, INTS, STR, BOOL = "float", "int", "floats", "ints", "str", "bool"

# kind -> section -> key -> (type, default)
SCHEMAS = {
    "lq_table": {
        "model": {
            "epsilons": (FLOATS, (0.3, 0.2, 0.1)),
            "sigma": (FLOATS, (0.8, 1.0)),
            "horizon": (FLOAT, 0.1),
            "x0": (FLOATS, (1.0, 0.5)),
            "scaling_exponent": (INT, 2),
        },
        "solver": {
            "slow_domain": (FLOATS, (-1.0, 3.0)),
            "fast_domain": (FLOATS, (-4.0, 4.0)),
            "cells": (INTS, (64, 64)),
            "reduced_cells": (INT, 128),
        },
    },
    "triad_case": {
        "model": {
            "A": (FLOATS, (1.0, 1.0, -2.0)),
            "lam": (FLOATS, (0.8, 1.2)),
            "epsilon": (FLOAT, 0.2),
            "horizon": (FLOAT, 0.1),
            "x0": (FLOATS, (1.0, -2.0, -2.0)),
            "gamma": (FLOAT, 1.0),
        },
        "solver": {
            "n_steps": (INT, 50),
            "n_samples": (INT, 100_000),
            "degree": (INT, 3),
            "spread": (FLOAT, 0.3),
            "fd": (BOOL, True),
            "fd_domain": (FLOATS, (-2.0, 4.0, -5.0, 1.0)),
            "fd_cells": (INTS, (96, 96)),
        },
    },
    "strong_rate": {
        "model": {
            "epsilons": (FLOATS, (0.4, 0.2, 0.1, 0.05)),
            "sigma": (FLOATS, (1.0, 1.0)),
            "theta_points": (INT, 1),
            "horizon": (FLOAT, 0.1),
            "x0": (FLOATS, (1.0, 0.5)),
            "scaling_exponent": (INT, 2),
        },
        "solver": {
            "n_paths": (INT, 4000),
            "dt_factor": (FLOAT, 1e-2),
        },
    },
    "sigma_star": {
        "model": {
            "problem": (STR, "lq_reduced"),
            "terminal_sign": (FLOAT, 1.0),
            "sigma": (FLOATS, (0.8, 1.0)),
            "epsilon": (FLOAT, 0.2),
            "A": (FLOATS, (1.0, 1.0, -2.0)),
            "horizon": (FLOAT, 0.1),
            "x0": (FLOATS, (1.0,)),
        },
        "solver": {
            "domain": (FLOATS, (-1.0, 3.0)),
            "cells": (INTS, (64,)),
            "n_slices": (INT, 11),
            "n_steps": (INT, 50),
            "n_samples": (INT, 20_000),
            "degree": (INT, 3),
            "spread": (FLOAT, 0.3),
        },
    },
    "pitchfork_scan": {
        "model": {
            "thetas": (FLOATS, (0.0, 1.0 / 3.0, 1.0)),
            "r_range": (FLOATS, (-1.5, 1.5)),
        },
        "solver": {"n_points": (INT, 301)},
    },
    "worst_case": {
        "model": {
            "epsilons": (FLOATS, (0.2, 0.1, 0.05)),
            "theta_range": (FLOATS, (0.1, 1.0)),
            "theta_points": (INT, 5),
            "horizon": (FLOAT, 1.0),
            "x0": (FLOATS, (0.5, 0.5)),
        },
        "solver": {
            "n_paths": (INT, 400),
            "dt_factor": (FLOAT, 1e-2),
        },
    },
}

EXPERIMENT_KEYS = {"kind": STR, "seed": INT, "output": STR, "plot_script": BOOL}
DEFAULT_SEEDS = {"lq_table": 4101, "triad_case": 4201, "strong_rate": 4301, "sigma_star": 4401,
                 "pitchfork_scan": 4501, "worst_case": 4601}


@dataclass
class ExperimentConfig:
    kind: str
    seed: int
    output: str = "out"
    plot_script: bool = False
    model: dict = field(default_factory=dict)
    solver: dict = field(default_factory=dict)

    def section(self, name: str) -> dict:
        return {"model": self.model, "solver": self.solver}[name]


def _parse_value(kind: str, raw: str, where: str):
    try:
        if kind == FLOAT:
            return float(raw)
        if kind == INT:
            return int(raw)
        if kind == FLOATS:
            return tuple(float(v) for v in raw.split(",") if v.strip())
        if kind == INTS:
            return tuple(int(v) for v in raw.split(",") if v.strip())
        if kind == BOOL:
            low = raw.strip().lower()
            if low in ("true", "yes", "1"):
                return True
            if low in ("false", "no", "0"):
                return False
            raise ValueError(raw)
        return raw.strip()
    except ValueError:
        raise ConfigError(f"{where}: cannot parse {raw!r} as {kind}") from None


def _format_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return ", ".join(repr(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def parse_config(text: str) -> ExperimentConfig:
    sections: dict[str, dict[str, str]] = {}
    current = None
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            current = line[1:-1].strip()
            if current in sections:
                raise ConfigError(f"line {lineno}: duplicate section [{current}]")
            sections[current] = {}
            continue
        if current is None or "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value' inside a section")
        key, val = (s.strip() for s in line.split("=", 1))
        if key in sections[current]:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        sections[current][key] = val

    exp = sections.pop("experiment", None)
    if exp is None or "kind" not in exp:
        raise ConfigError("missing [experiment] section with a 'kind' key")
    kind = exp["kind"]
    if kind not in SCHEMAS:
        raise ConfigError(f"unknown experiment kind {kind!r}")
    for key in exp:
        if key not in EXPERIMENT_KEYS:
            raise ConfigError(f"unknown key {key!r} in [experiment]")
    cfg = ExperimentConfig(
        kind=kind,
        seed=_parse_value(INT, exp["seed"], "experiment.seed") if "seed" in exp else DEFAULT_SEEDS[kind],
        output=exp.get("output", "out"),
        plot_script=_parse_value(BOOL, exp["plot_script"], "experiment.plot_script") if "plot_script" in exp else False,
    )
    schema = SCHEMAS[kind]
    for name in sections:
        if name not in schema:
            raise ConfigError(f"unknown section [{name}] for kind {kind!r}")
    for name, keys in schema.items():
        given = sections.get(name, {})
        for key in given:
            if key not in keys:
                raise ConfigError(f"unknown key {key!r} in [{name}]")
        target = cfg.section(name)
        for key, (typ, default) in keys.items():
            target[key] = _parse_value(typ, given[key], f"{name}.{key}") if key in given else default
    validate(cfg)
    return cfg


def emit_config(cfg: ExperimentConfig) -> str:
    lines = ["[experiment]", f"kind = {cfg.kind}", f"seed = {cfg.seed}", f"output = {cfg.output}",
             f"plot_script = {_format_value(cfg.plot_script)}"]
    for name in ("model", "solver"):
        lines += ["", f"[{name}]"]
        lines += [f"{k} = {_format_value(v)}" for k, v in cfg.section(name).items()]
    return "\n".join(lines) + "\n"


def default_config(kind: str, **overrides) -> ExperimentConfig:
    if kind not in SCHEMAS:
        raise ConfigError(f"unknown experiment kind {kind!r}")
    cfg = ExperimentConfig(kind, DEFAULT_SEEDS[kind])
    for name, keys in SCHEMAS[kind].items():
        cfg.section(name).update({k: d for k, (_, d) in keys.items()})
    for key, val in overrides.items():
        sec, _, k = key.partition(".")
        if sec not in ("model", "solver") or k not in cfg.section(sec):
            raise ConfigError(f"unknown override {key!r}")
        cfg.section(sec)[k] = val
    validate(cfg)
    return cfg


def load_config(path) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from None
    return parse_config(text)


def _need(cond, msg):
    if not cond:
        raise ConfigError(msg)


def validate(cfg: ExperimentConfig) -> None:
    """Check value ranges that the schema types cannot express."""
    m, s = cfg.model, cfg.solver
    if "sigma" in m:
        _need(len(m["sigma"]) == 2 and 0 < m["sigma"][0] <= m["sigma"][1], "sigma must be 'lo, hi' with 0 < lo <= hi")
    if "lam" in m:
        _need(len(m["lam"]) == 2 and 0 < m["lam"][0] <= m["lam"][1], "lam must be 'lo, hi' with 0 < lo <= hi")
    if "epsilons" in m:
        _need(len(m["epsilons"]) > 0 and all(e > 0 for e in m["epsilons"]), "epsilons must be positive and non-empty")
    if "horizon" in m:
        _need(m["horizon"] > 0, "horizon must be positive")
    if "A" in m:
        _need(len(m["A"]) == 3 and abs(sum(m["A"])) <= 1e-12, "A must hold three coefficients summing to zero")
    if "scaling_exponent" in m:
        _need(m["scaling_exponent"] in (1, 2), "scaling_exponent must be 1 or 2")
    if cfg.kind == "lq_table":
        _need(len(m["x0"]) == 2, "x0 must be two-dimensional")
        _need(len(s["cells"]) == 2 and min(s["cells"]) >= 8 and s["reduced_cells"] >= 8, "need at least 8 cells per axis")
    if cfg.kind == "triad_case":
        _need(len(m["x0"]) == 3, "x0 must be three-dimensional")
        _need(m["epsilon"] > 0 and m["gamma"] > 0, "epsilon and gamma must be positive")
        _need(s["n_steps"] >= 2 and s["n_samples"] >= 10 and s["degree"] >= 1, "bad 2BSDE settings")
        _need(len(s["fd_domain"]) == 4 and len(s["fd_cells"]) == 2, "fd_domain needs 4 numbers, fd_cells 2")
    if cfg.kind == "strong_rate":
        eps = m["epsilons"]
        _need(len(eps) >= 3 and max(eps) / min(eps) >= 4, "need at least 3 epsilons spanning a factor of 4")
        _need(m["theta_points"] >= 1 and s["n_paths"] >= 2, "bad ensemble settings")
    if cfg.kind == "sigma_star":
        _need(m["problem"] in ("lq_reduced", "lq_full", "triad_limit", "triad_full"), f"unknown problem {m['problem']!r}")
        _need(m["terminal_sign"] != 0, "terminal_sign must be non-zero")
    if cfg.kind == "pitchfork_scan":
        _need(all(0 <= t <= 1 for t in m["thetas"]) and len(m["thetas"]) > 0, "thetas must lie in [0, 1]")
        _need(len(m["r_range"]) == 2 and m["r_range"][0] < m["r_range"][1], "bad r_range")
    if cfg.kind == "worst_case":
        lo, hi = m["theta_range"]
        _need(0 < lo <= hi <= 1, "theta_range must satisfy 0 < lo <= hi <= 1")
        _need(m["theta_points"] >= 1 and s["n_paths"] >= 2, "bad ensemble settings")
