import numpy as np
import pytest

from gredux import ConfigError, SolverError, UncertaintyInterval
from gredux.hjb_fd import lq_riccati_value
from gredux.models import reduce_lq, regulator_example
from gredux.sde_sim import SDESystem
from gredux.twobsde import (ApproximatorSpec, TwoBsdeProblem, fit_surrogate, make_lq_problem,
                            monomial_exponents, polynomial_features, solve_2bsde)

TH = UncertaintyInterval(1.0, 1.0)


def brownian(d):
    return SDESystem(lambda x: np.zeros_like(x), lambda x: np.broadcast_to(np.eye(d), x.shape + (d,)), d)


def test_monomials():
    e = monomial_exponents(2, 2)
    assert len(e) == 6 and tuple(e[0]) == (0, 0)
    assert ApproximatorSpec(degree=3).n_features(3) == 20


def test_feature_derivatives_match_finite_differences():
    rs = np.random.default_rng(0)
    z = rs.normal(size=(5, 2))
    e = monomial_exponents(2, 3)
    phi, dphi, d2phi = polynomial_features(z, e)
    h = 1e-5
    for i in range(2):
        dz = np.zeros(2)
        dz[i] = h
        p1, g1, _ = polynomial_features(z + dz, e)
        p0, g0, _ = polynomial_features(z - dz, e)
        np.testing.assert_allclose(dphi[:, :, i], (p1 - p0) / (2 * h), atol=1e-8)
        np.testing.assert_allclose(d2phi[:, :, :, i], (g1 - g0) / (2 * h), atol=1e-7)


def test_surrogate_recovers_quadratic():
    rs = np.random.default_rng(1)
    x = rs.normal(size=(500, 2)) * [1.0, 3.0] + [2.0, -1.0]
    y = 1 + x[:, 0] - 2 * x[:, 0] * x[:, 1] + 0.5 * x[:, 1] ** 2
    v, g, H = fit_surrogate(x, y, ApproximatorSpec(degree=2, ridge=0.0)).evaluate(np.array([[0.5, 1.0]]))
    assert v[0] == pytest.approx(1 + 0.5 - 1.0 + 0.5, abs=1e-8)
    np.testing.assert_allclose(g[0], [1 - 2.0, -1.0 + 1.0], atol=1e-8)
    np.testing.assert_allclose(H[0], [[0, -2], [-2, 1]], atol=1e-8)


def test_rank_deficiency_detected():
    x = np.random.default_rng(2).normal(size=(200, 1))
    with pytest.raises(SolverError):
        fit_surrogate(np.hstack([x, 2 * x]), x[:, 0], ApproximatorSpec(degree=2))


def test_heat_equation():
    # v_t + tr(D2v)/2 = 0, v(T) = |x|^2  =>  v(0, x) = |x|^2 + d T
    prob = TwoBsdeProblem(brownian(2), lambda t, x, y, z, S: 0.5 * np.trace(S, axis1=1, axis2=2),
                          lambda x: np.sum(x**2, axis=1), 0.5, (0.3, -0.2), TH)
    sol = solve_2bsde(prob, ApproximatorSpec(degree=2), 20, 4000, seed=3)
    # Y_0 carries the quadratic variation of each path, so only the mean is exact
    assert abs(sol.y0 - 1.13) < 4 * sol.y0_std_error
    assert sol.y0_std_error < 0.005


def test_input_checks():
    prob = TwoBsdeProblem(brownian(1), lambda t, x, y, z, S: 0 * y, lambda x: x[:, 0], 1.0, (0.0,), TH)
    with pytest.raises(ConfigError):
        solve_2bsde(prob, n_steps=1)
    with pytest.raises(ConfigError):
        solve_2bsde(prob, ApproximatorSpec(degree=2), n_samples=20)


def test_reduced_lq_matches_riccati_and_is_reproducible():
    red = reduce_lq(regulator_example(0.1, sigma=(0.8, 0.8)))
    prob = make_lq_problem(red, (1.0,), spread=0.3)
    a = solve_2bsde(prob, ApproximatorSpec(degree=2), 20, 4000, seed=5)
    b = solve_2bsde(prob, ApproximatorSpec(degree=2), 20, 4000, seed=5)
    assert a.report_csv() == b.report_csv()
    assert a.report_csv().splitlines()[0] == "y0,z0_0,terminal_mismatch,n_steps,n_samples,seed"
    assert a.y0 == pytest.approx(lq_riccati_value(red, 0.8, 0.0, [1.0]), rel=0.01)
