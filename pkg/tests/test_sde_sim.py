import numpy as np
import pytest

from gredux import ConfigError, SimulationError, ThetaGrid
from gredux.models import TriadLimit, conserved_quantity, regulator_example
from gredux.sde_sim import (SDESystem, SimConfig, fit_loglog, lq_systems, simulate, simulate_coupled,
                            strong_error_rate, sup_squared_error, triad_limit_system)


def ou(a=-1.0, s=0.5):
    return SDESystem(lambda x: a * x, lambda x: np.full(x.shape + (1,), s), 1)


def test_ou_moments():
    # X_T = e^{aT} x0 + noise with variance s^2 (1 - e^{2aT}) / (-2a)
    cfg = SimConfig(1e-3, 1.0, 20_000, 11, (1.0,))
    xT = simulate(ou(), cfg, record_every=1000, keep_increments=False).terminal[:, 0]
    assert xT.mean() == pytest.approx(np.exp(-1.0), abs=0.01)
    assert xT.var() == pytest.approx(0.25 * (1 - np.exp(-2.0)) / 2.0, rel=0.03)


def test_reproducible_and_path_prefix_stable():
    a = simulate(ou(), SimConfig(0.01, 0.5, 40, 5, (0.2,)))
    b = simulate(ou(), SimConfig(0.01, 0.5, 40, 5, (0.2,)))
    c = simulate(ou(), SimConfig(0.01, 0.5, 10, 5, (0.2,)))
    np.testing.assert_array_equal(a.states, b.states)
    np.testing.assert_array_equal(a.states[:10], c.states)
    assert a.to_csv() == b.to_csv()
    assert a.to_csv().splitlines()[0] == "path,step,t,x0"


def test_coupled_share_increments():
    full, red = lq_systems(regulator_example(0.2), 1.0)
    ef, er = simulate_coupled(full, red, SimConfig(1e-3, 0.1, 8, 3, (1.0, 0.5)))
    assert er.brownian_increments is ef.brownian_increments
    assert er.states.shape == (8, 101, 1)
    assert sup_squared_error(ef, er, (0,)).shape == (8,)


def test_blowup_raises():
    sys = SDESystem(lambda x: x**3, lambda x: np.zeros(x.shape + (1,)), 1)
    with pytest.raises(SimulationError):
        simulate(sys, SimConfig(0.1, 10.0, 2, 0, (2.0,)))


def test_config_validation():
    with pytest.raises(ConfigError):
        SimConfig(0.0, 1.0, 1, 0, (0.0,))
    with pytest.raises(ConfigError):
        SimConfig(2.0, 1.0, 1, 0, (0.0,))
    with pytest.raises(ConfigError):
        simulate(SDESystem(lambda x: x, lambda x: np.zeros(x.shape + (2,)), 1), SimConfig(0.1, 1, 1, 0, (0.0,)))


def test_strong_rate_input_checks():
    cfg = SimConfig(1e-3, 0.1, 4, 0, (1.0, 0.5))
    fam = lambda e, th: lq_systems(regulator_example(e), th)
    with pytest.raises(ConfigError):
        strong_error_rate(fam, [0.2, 0.1], cfg, ThetaGrid.single(1.0))
    with pytest.raises(ConfigError):
        strong_error_rate(fam, [0.2, 0.15, 0.1], cfg, ThetaGrid.single(1.0))


def test_strong_rate_zero_error_slope_undefined():
    cfg = SimConfig(1e-2, 0.1, 4, 0, (1.0,))
    fam = lambda e, th: (SDESystem(ou().drift, ou().diffusion, 1, slow=(0,)), ou())
    rep = strong_error_rate(fam, [0.4, 0.2, 0.1], cfg, ThetaGrid.single(1.0))
    assert rep.errors == (0.0, 0.0, 0.0) and np.isnan(rep.fitted_slope)
    assert rep.to_csv().startswith("epsilon,error,slope_overall\n")


def test_fit_loglog_exact():
    x = np.array([0.4, 0.2, 0.1])
    slope, icpt = fit_loglog(x, 3 * x**1.5)
    assert slope == pytest.approx(1.5) and icpt == pytest.approx(np.log(3))


def test_milstein_beats_euler_on_invariant():
    lim = TriadLimit(1.0, 1.0, -2.0, 1.0)
    cfg = SimConfig(1e-3, 0.2, 200, 9, (1.0, -2.0))
    I0 = conserved_quantity(1, 1, np.array([1.0, -2.0]))
    err = {}
    for mil in (True, False):
        xT = simulate(triad_limit_system(lim, mil), cfg, record_every=1000).terminal
        err[mil] = np.median(np.abs(conserved_quantity(1, 1, xT) - I0))
    assert err[True] < 0.2 * err[False]
