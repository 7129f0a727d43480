"""Command-line experiment runner.

    gredux run CONFIG [--out DIR] [--seed N] [--threads N]
    gredux validate CONFIG

Every run writes its tables as CSV files plus ``report.json`` into the output
directory. Headline numbers in the report are also written to
``summary.csv`` and the configuration values to ``inputs.csv``; the
wall-clock time is the only report entry without a CSV counterpart.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from gredux import hjb_fd, models, sde_sim, twobsde
from gredux.config import ExperimentConfig, emit_config, load_config
from gredux.errors import ConfigError, GreduxError, SolverError
from gredux.sublinear import ThetaGrid, UncertaintyInterval, worst_case_expectation

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER = 0, 2, 3


def fmt(v) -> str:
    """Canonical text form shared by CSV cells and report numbers."""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


@dataclass
class Table:
    header: list
    rows: list = field(default_factory=list)

    def to_csv(self) -> str:
        lines = [",".join(self.header)] + [",".join(fmt(c) for c in row) for row in self.rows]
        return "\n".join(lines) + "\n"


@dataclass
class ExperimentReport:
    kind: str
    seed: int
    inputs: dict
    headline: dict
    diagnostics: dict = field(default_factory=dict)
    tables: dict = field(default_factory=dict)  # file name -> Table or raw CSV text
    wall_clock_s: float = float("nan")

    def summary_table(self) -> Table:
        rows = [[k, v] for k, v in self.headline.items()] + [[k, v] for k, v in self.diagnostics.items()]
        return Table(["quantity", "value"], rows)

    def inputs_table(self) -> Table:
        rows = [["experiment.seed", self.seed]]
        for sec, vals in self.inputs.items():
            for k, v in vals.items():
                for i, x in enumerate(np.atleast_1d(v)):
                    rows.append([f"{sec}.{k}" + (f"[{i}]" if isinstance(v, tuple) else ""), x])
        return Table(["key", "value"], rows)

    def to_json(self) -> str:
        def clean(d):
            return {k: (v.item() if isinstance(v, np.generic) else v) for k, v in d.items()}

        return json.dumps({
            "kind": self.kind,
            "seed": self.seed,
            "inputs": self.inputs,
            "headline": clean(self.headline),
            "diagnostics": clean(self.diagnostics),
            "files": sorted(list(self.tables) + ["summary.csv", "inputs.csv"]),
            "wall_clock_s": self.wall_clock_s,
        }, indent=2) + "\n"


def write_atomic(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_report(report: ExperimentReport, out_dir) -> Path:
    out = Path(out_dir)
    files = dict(report.tables)
    files["summary.csv"] = report.summary_table()
    files["inputs.csv"] = report.inputs_table()
    for name, tab in files.items():
        write_atomic(out / name, tab if isinstance(tab, str) else tab.to_csv())
    write_atomic(out / "report.json", report.to_json())
    return out


def _inputs(cfg: ExperimentConfig) -> dict:
    return {"model": dict(cfg.model), "solver": dict(cfg.solver)}


def _with_eps(exc: SolverError, eps) -> SolverError:
    err = type(exc)(f"epsilon={eps}: {exc}")
    err.step = exc.step
    return err


def _unsquare(arr, squared: UncertaintyInterval, theta: UncertaintyInterval):
    """Map endpoints of the squared interval back to the original endpoints."""
    return np.where(np.asarray(arr) == squared.sigma_hi, theta.sigma_hi, theta.sigma_lo)


# ---------------------------------------------------------------------- runners

def run_lq_table(cfg: ExperimentConfig) -> ExperimentReport:
    """Full 2-D and reduced 1-D G-HJB values of the regulator for each epsilon."""
    m, s = cfg.model, cfg.solver
    x0 = np.array(m["x0"])
    sig = tuple(m["sigma"])
    table = Table(["epsilon", "v_full", "v_reduced", "delta_v", "riccati_full", "riccati_reduced",
                   "riccati_delta_v", "n_time_steps_full", "n_time_steps_reduced"])
    deltas = []
    for eps in m["epsilons"]:
        model = models.regulator_example(eps, sig, m["horizon"], m["scaling_exponent"])
        red = models.reduce_lq(model)
        try:
            g_full = hjb_fd.GridSpec((s["slow_domain"] + (s["cells"][0],), s["fast_domain"] + (s["cells"][1],)),
                                     m["horizon"])
            g_red = hjb_fd.GridSpec((s["slow_domain"] + (s["reduced_cells"],),), m["horizon"])
            vf = hjb_fd.solve_ghjb(hjb_fd.full_lq_problem(model), model.sigma, g_full)
            vr = hjb_fd.solve_ghjb(hjb_fd.reduced_lq_problem(red), red.sigma, g_red)
            # convex value: the worst case sits at the upper endpoint, where Riccati is exact
            rf = hjb_fd.lq_riccati_value(model, sig[1], 0.0, x0)
            rr = hjb_fd.lq_riccati_value(red, sig[1], 0.0, x0[:1])
        except SolverError as exc:
            raise _with_eps(exc, eps) from exc
        v_full, v_red = vf.value_at(0.0, x0), vr.value_at(0.0, x0[:1])
        d = abs(v_full - v_red)
        deltas.append(d)
        table.rows.append([eps, v_full, v_red, d, rf, rr, abs(rf - rr), vf.n_time_steps, vr.n_time_steps])
    order = np.argsort(m["epsilons"])[::-1]
    ds = [deltas[i] for i in order]
    mono = bool(all(a > b for a, b in zip(ds, ds[1:])))
    headline = {f"delta_v[eps={fmt(m['epsilons'][i])}]": deltas[i] for i in range(len(deltas))}
    headline["delta_v_decreasing"] = mono
    return ExperimentReport(cfg.kind, cfg.seed, _inputs(cfg), headline, tables={"lq_table.csv": table})


def _triad_model(m) -> models.TriadModel:
    A1, A2, A3 = m["A"]
    return models.TriadModel(A1, A2, A3, UncertaintyInterval(*m["lam"]), m["epsilon"], m["gamma"])


def run_triad_case(cfg: ExperimentConfig) -> ExperimentReport:
    """Worst-case mean of ``r1(T)`` for the full triad and its limit."""
    m, s = cfg.model, cfg.solver
    model = _triad_model(m)
    x0 = tuple(m["x0"])
    approx = twobsde.ApproximatorSpec(degree=s["degree"])
    sols = {}
    for which, start in (("full", x0), ("limit", x0[:2])):
        prob = twobsde.make_triad_qoi_problem(model, which, m["horizon"], start, spread=s["spread"])
        sols[which] = twobsde.solve_2bsde(prob, approx, s["n_steps"], s["n_samples"], cfg.seed)
    v_full, v_lim = sols["full"].y0, sols["limit"].y0
    headline = {
        "v_full_2bsde": v_full,
        "v_limit_2bsde": v_lim,
        "relative_gap_2bsde": abs(v_full - v_lim) / abs(v_lim),
    }
    diagnostics = {
        "v_full_2bsde_std_error": sols["full"].y0_std_error,
        "v_limit_2bsde_std_error": sols["limit"].y0_std_error,
        "terminal_mismatch_full": sols["full"].terminal_mismatch,
        "terminal_mismatch_limit": sols["limit"].terminal_mismatch,
    }
    tables = {
        "triad_full_2bsde.csv": sols["full"].report_csv(),
        "triad_limit_2bsde.csv": sols["limit"].report_csv(),
    }
    if s["fd"]:
        a, b, c, d = s["fd_domain"]
        grid = hjb_fd.GridSpec(((a, b, s["fd_cells"][0]), (c, d, s["fd_cells"][1])), m["horizon"])
        prob = hjb_fd.triad_limit_problem(model.A1, model.A2, model.A3, model.gamma)
        vf = hjb_fd.solve_ghjb(prob, model.lam, grid)
        v_fd = vf.value_at(0.0, x0[:2])
        headline["v_limit_fd"] = v_fd
        headline["relative_gap_fd"] = abs(v_full - v_fd) / abs(v_fd)
        tables["triad_limit_fd.csv"] = Table(["t", "x0", "x1", "value", "n_time_steps"],
                                             [[0.0, x0[0], x0[1], v_fd, vf.n_time_steps]])
    return ExperimentReport(cfg.kind, cfg.seed, _inputs(cfg), headline, diagnostics, tables)


def run_strong_rate(cfg: ExperimentConfig) -> ExperimentReport:
    """Coupled full/reduced regulator paths; log-log slope of the strong error."""
    m, s = cfg.model, cfg.solver
    p, T = m["scaling_exponent"], m["horizon"]
    grid = ThetaGrid(UncertaintyInterval(*m["sigma"]), m["theta_points"])

    def family(eps, theta):
        return sde_sim.lq_systems(models.regulator_example(eps, tuple(m["sigma"]), T, p), theta)

    def config_for_eps(eps):
        return sde_sim.SimConfig(s["dt_factor"] * eps**p, T, s["n_paths"], cfg.seed, m["x0"])

    rep = sde_sim.strong_error_rate(family, m["epsilons"], config_for_eps(max(m["epsilons"])), grid,
                                    config_for_eps)
    headline = {f"error[eps={fmt(e)}]": err for e, err in zip(rep.epsilons, rep.errors)}
    headline["slope"] = rep.fitted_slope
    return ExperimentReport(cfg.kind, cfg.seed, _inputs(cfg), headline,
                            {"intercept": rep.intercept}, {"strong_rate.csv": rep.to_csv()})


def run_sigma_star(cfg: ExperimentConfig) -> ExperimentReport:
    """Worst-case endpoint field (finite differences) or series (2BSDE).

    For the LQ problems the terminal weight is multiplied by
    ``terminal_sign``; for triad problems the ``sigma`` interval is the noise
    level interval and the terminal payoff is ``terminal_sign * r1``.
    """
    m, s = cfg.model, cfg.solver
    theta = UncertaintyInterval(*m["sigma"])
    T, sign, prob_name = m["horizon"], m["terminal_sign"], m["problem"]
    tables, headline = {}, {}
    if prob_name == "triad_full":
        A1, A2, A3 = m["A"]
        model = models.TriadModel(A1, A2, A3, theta, m["epsilon"])
        if len(m["x0"]) != 3:
            raise ConfigError("triad_full needs a three-dimensional x0")
        x0 = tuple(m["x0"])
        prob = twobsde.make_triad_qoi_problem(model, "full", T, x0, spread=s["spread"])
        if sign != 1.0:
            base = prob.terminal
            prob = twobsde.TwoBsdeProblem(prob.forward, prob.driver, lambda x: sign * base(x), T, x0,
                                          prob.theta, prob.max_forward_dt)
        sol = twobsde.solve_2bsde(prob, twobsde.ApproximatorSpec(degree=s["degree"]), s["n_steps"],
                                  s["n_samples"], cfg.seed)
        # the full driver carries the squared level: report it on the squared interval
        th2 = theta.squared()
        times, series = twobsde.sigma_star_series(sol, twobsde.triad_full_bracket(model), th2)
        series = _unsquare(series, th2, theta)
        tables["sigma_star_series.csv"] = Table(["t", "sigma_star"], [[t, v] for t, v in zip(times, series)])
        headline["fraction_upper"] = float(np.mean(series == theta.sigma_hi))
        return ExperimentReport(cfg.kind, cfg.seed, _inputs(cfg), headline, tables=tables)

    if prob_name in ("lq_reduced", "lq_full"):
        model = models.regulator_example(m["epsilon"], tuple(m["sigma"]), T)
        red = models.reduce_lq(model)
        lo, hi = s["domain"]
        if prob_name == "lq_full":
            A, B, C = model.scaled()
            problem = hjb_fd.lq_problem(A, B, C, model.running_weight(), sign * model.terminal_weight())
            dims = ((lo, hi, s["cells"][0]), (-4.0, 4.0, s["cells"][-1]))
        else:
            problem = hjb_fd.lq_problem(red.A_bar, red.B_bar, red.C_bar, red.Q0, sign * red.Q1)
            dims = ((lo, hi, s["cells"][0]),)
        interval = theta
    else:
        A1, A2, A3 = m["A"]
        problem = hjb_fd.triad_limit_problem(A1, A2, A3, terminal=lambda x: sign * x[..., 0])
        lo, hi = s["domain"]
        n = s["cells"][0]
        dims = ((lo, hi, n), (lo, hi, s["cells"][-1]))
        interval = theta
    grid = hjb_fd.GridSpec(dims, T)
    save = np.linspace(0.0, T, s["n_slices"])
    vf = hjb_fd.solve_ghjb(problem, interval, grid, save_times=save)
    field_ = hjb_fd.sigma_star_field(vf, problem.effective_interval(interval), hjb_fd.lq_bracket(problem, grid))
    if problem.param_power == 2:
        field_.sigma_star = _unsquare(field_.sigma_star, problem.effective_interval(interval), theta)
    tables["sigma_star_field.csv"] = field_.to_csv()
    # time series at the grid node nearest to x0
    x0 = np.resize(np.array(m["x0"], dtype=float), grid.ndim)
    idx = tuple(int(np.argmin(np.abs(ax - c))) for ax, c in zip(grid.axes, x0))
    tables["sigma_star_series.csv"] = Table(
        ["t"] + [f"x{i}" for i in range(grid.ndim)] + ["sigma_star"],
        [[t] + [grid.axes[k][idx[k]] for k in range(grid.ndim)] + [field_.sigma_star[i][idx]]
         for i, t in enumerate(field_.times)])
    headline["fraction_upper"] = float(np.mean(field_.sigma_star == theta.sigma_hi))
    headline["fraction_lower"] = float(np.mean(field_.sigma_star == theta.sigma_lo))
    return ExperimentReport(cfg.kind, cfg.seed, _inputs(cfg), headline, tables=tables)


def run_pitchfork_scan(cfg: ExperimentConfig) -> ExperimentReport:
    """Limit vector field samples and root census per theta."""
    m, s = cfg.model, cfg.solver
    r = np.linspace(*m["r_range"], s["n_points"])
    field_tab = Table(["theta", "r", "F"])
    census = Table(["theta", "root", "stable"])
    headline = {}
    for th in m["thetas"]:
        for ri, fi in zip(r, models.pitchfork_limit_vector_field(th, r)):
            field_tab.rows.append([th, ri, fi])
        roots = models.pitchfork_roots(th)
        stable = models.pitchfork_stable_roots(th)
        for root in roots:
            census.rows.append([th, root, bool(np.any(stable == root))])
        headline[f"n_roots[theta={fmt(th)}]"] = len(roots)
        headline[f"n_stable[theta={fmt(th)}]"] = len(stable)
    return ExperimentReport(cfg.kind, cfg.seed, _inputs(cfg), headline,
                            tables={"pitchfork_field.csv": field_tab, "pitchfork_roots.csv": census})


def run_worst_case(cfg: ExperimentConfig) -> ExperimentReport:
    """Worst-case mean of ``|R_eps(T) - r(T)|`` for the pitchfork over a theta grid."""
    m, s = cfg.model, cfg.solver
    grid = ThetaGrid(UncertaintyInterval(*m["theta_range"]), m["theta_points"])
    T, x0 = m["horizon"], tuple(m["x0"])
    table = Table(["epsilon", "theta", "mean", "std_error", "worst_case", "argmax_theta"])
    headline = {}
    for eps in m["epsilons"]:
        conf = sde_sim.SimConfig(s["dt_factor"] * eps, T, s["n_paths"], cfg.seed, x0)

        def ensemble(theta, eps=eps, conf=conf):
            full = models.PitchforkModel(theta, eps)
            fs = sde_sim.SDESystem(full.drift, full.diffusion, 1, slow=(0,))
            lim = sde_sim.SDESystem(lambda x, th=theta: models.pitchfork_limit_vector_field(th, x),
                                    lambda x: np.zeros(x.shape + (1,)), 1)
            ef, er = sde_sim.simulate_coupled(fs, lim, conf, record_every=conf.n_steps)
            return np.abs(ef.terminal[:, 0] - er.terminal[:, 0])

        try:
            est = worst_case_expectation(None, ensemble, grid)
        except SolverError as exc:
            raise _with_eps(exc, eps) from exc
        for th, mean, se in est.per_theta_means:
            table.rows.append([eps, th, mean, se, est.value, est.argmax_theta])
        headline[f"worst_case[eps={fmt(eps)}]"] = est.value
    vals = [headline[f"worst_case[eps={fmt(e)}]"] for e in sorted(m["epsilons"], reverse=True)]
    headline["worst_case_decreasing"] = bool(all(a > b for a, b in zip(vals, vals[1:])))
    return ExperimentReport(cfg.kind, cfg.seed, _inputs(cfg), headline, tables={"worst_case.csv": table})


RUNNERS = {
    "lq_table": run_lq_table,
    "triad_case": run_triad_case,
    "strong_rate": run_strong_rate,
    "sigma_star": run_sigma_star,
    "pitchfork_scan": run_pitchfork_scan,
    "worst_case": run_worst_case,
}

PLOT_SCRIPT = '''"""Plot the CSV tables in this directory (needs matplotlib)."""
import csv
import glob

import matplotlib.pyplot as plt

for path in sorted(glob.glob("*.csv")):
    if path in ("summary.csv", "inputs.csv"):
        continue
    with open(path) as fh:
        rows = list(csv.reader(fh))
    head, data = rows[0], rows[1:]
    try:
        cols = [[float(v) for v in col] for col in zip(*data)]
    except ValueError:
        continue
    if len(cols) < 2:
        continue
    fig, ax = plt.subplots()
    for j in range(1, len(cols)):
        ax.plot(cols[0], cols[j], ".", label=head[j])
    ax.set_xlabel(head[0])
    ax.legend()
    fig.savefig(path[:-4] + ".png", dpi=120)
'''


def run_experiment(cfg: ExperimentConfig, out_dir=None) -> ExperimentReport:
    start = time.perf_counter()
    report = RUNNERS[cfg.kind](cfg)
    report.wall_clock_s = time.perf_counter() - start
    if out_dir is not None:
        write_report(report, out_dir)
        if cfg.plot_script:
            write_atomic(Path(out_dir) / "plot.py", PLOT_SCRIPT)
    return report


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="gredux", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run an experiment")
    run.add_argument("config")
    run.add_argument("--out", help="output directory (default: the config's 'output')")
    run.add_argument("--seed", type=int, help="override the configured seed")
    run.add_argument("--threads", type=int, default=1, help="accepted for compatibility; runs are single-process")
    val = sub.add_parser("validate", help="parse and check a config file")
    val.add_argument("config")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        if args.command == "validate":
            sys.stdout.write(emit_config(cfg))
            return EXIT_OK
        if args.seed is not None:
            cfg.seed = args.seed
        if args.threads is not None and args.threads < 1:
            raise ConfigError("--threads must be positive")
        out = args.out or cfg.output
        report = run_experiment(cfg, out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except GreduxError as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    for k, v in report.headline.items():
        print(f"{k} = {fmt(v)}")
    print(f"wrote {out}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
