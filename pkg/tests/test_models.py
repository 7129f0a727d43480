import numpy as np
import pytest
from hypothesis import given, strategies as st

from gredux import ConfigError, DomainError, UncertaintyInterval
from gredux.models import (BlockMatrices, MultiscaleLQModel, PitchforkModel, TriadLimit, TriadModel,
                           conserved_quantity, pitchfork_roots, pitchfork_stable_roots, reduce_lq,
                           regulator_example, triad_equilibria, triad_full_drift, triad_limit_diffusion,
                           triad_limit_diffusion_jvp, triad_limit_drift, triad_limit_drift_split)


def test_regulator_reduction_by_hand():
    # K = A12 A22^-1 = 0.5, so A_bar = -2 - 0.5, B_bar = C_bar = 0.1 - 0.5 * 2
    red = reduce_lq(regulator_example(0.1))
    np.testing.assert_allclose(red.A_bar, [[-2.5]])
    np.testing.assert_allclose(red.B_bar, [[-0.9]])
    np.testing.assert_allclose(red.C_bar, [[-0.9]])
    np.testing.assert_allclose(red.D_bar, [[1.0, -0.5]])


def test_scaling():
    m = regulator_example(0.1, fast_scaling_exponent=2)
    A, B, C = m.scaled()
    np.testing.assert_allclose(A, [[-2, -10], [10, -200]])
    np.testing.assert_allclose(B, [[0.1], [20.0]])
    A1, _, _ = regulator_example(0.25, fast_scaling_exponent=1).scaled()
    np.testing.assert_allclose(A1, [[-2, -2], [2, -8]])


def test_reduction_is_epsilon_free_and_decoupled():
    b = BlockMatrices(A11=[[-1.0]], A12=[[0.0]], A21=[[3.0]], A22=[[-4.0]],
                      B1=[[1.0]], B2=[[1.0]], C1=[[0.5]], C2=[[1.0]])
    for eps in (1.0, 0.01):
        red = reduce_lq(MultiscaleLQModel(b, eps))
        np.testing.assert_allclose(red.A_bar, [[-1.0]])
        np.testing.assert_allclose(red.C_bar, [[0.5]])


def test_block_validation():
    with pytest.raises(ConfigError):
        BlockMatrices(A11=[[-1.0]], A12=[[0.0]], A21=[[0.0]], A22=[[1.0]],
                      B1=[[1.0]], B2=[[1.0]], C1=[[1.0]], C2=[[1.0]])
    with pytest.raises(ConfigError):
        BlockMatrices(A11=[[-1.0]], A12=[[0.0, 1.0]], A21=[[0.0]], A22=[[-1.0]],
                      B1=[[1.0]], B2=[[1.0]], C1=[[1.0]], C2=[[1.0]])
    with pytest.raises(ConfigError):
        MultiscaleLQModel(regulator_example(0.1).blocks, 0.1, Q1=[[-1.0]])


def test_triad_coefficients_must_sum_to_zero():
    with pytest.raises(ConfigError):
        TriadLimit(1.0, 1.0, -1.0, 1.0)
    with pytest.raises(ConfigError):
        TriadModel(1.0, 1.0, -1.5, UncertaintyInterval(1, 1), 0.1)


triads = st.tuples(st.floats(0.1, 3), st.floats(0.1, 3)).map(lambda a: (a[0], a[1], -(a[0] + a[1])))


@given(triads, st.floats(0.1, 3))
def test_equilibria_are_zeros(A, lam):
    lim = TriadLimit(*A, lam)
    for r in triad_equilibria(*A, lam):
        assert np.linalg.norm(triad_limit_drift(lim, r)) <= 1e-12 * max(1.0, lam**2 * max(A))


def test_equilibria_domain():
    with pytest.raises(DomainError):
        triad_equilibria(-1.0, 2.0, -1.0, 1.0)


@given(triads, st.floats(0.1, 2), st.floats(-3, 3), st.floats(-3, 3))
def test_conserved_quantity_invariance(A, lam, r1, r2):
    """Drift and noise are tangent to the level sets of I up to the Ito term."""
    lim = TriadLimit(*A, lam)
    r = np.array([r1, r2])
    grad = np.array([-2 * A[1] * r1, 2 * A[0] * r2])
    s = triad_limit_diffusion(lim, r)
    assert abs(grad @ s) <= 1e-9 * (1 + np.abs(grad).max() * np.abs(s).max())
    # Ito: <grad I, b> + 1/2 s' D2I s = 0
    hess = np.diag([-2 * A[1], 2 * A[0]])
    ito = grad @ triad_limit_drift(lim, r) + 0.5 * s @ hess @ s
    assert abs(ito) <= 1e-9 * (1 + np.abs(r).max() ** 4 * 30)


def test_drift_split_and_jvp():
    lim = TriadLimit(1.0, 2.0, -3.0, 0.7)
    r = np.array([[0.3, -1.2], [2.0, 0.5]])
    f0, f1 = triad_limit_drift_split(lim, r)
    np.testing.assert_allclose(f0 + 0.5 * lim.lambda_value**2 * f1, triad_limit_drift(lim, r), atol=1e-14)
    # jvp = (s . grad) s, checked by finite differences
    h = 1e-6
    s = triad_limit_diffusion(lim, r)
    fd = (triad_limit_diffusion(lim, r + h * s) - triad_limit_diffusion(lim, r - h * s)) / (2 * h)
    np.testing.assert_allclose(triad_limit_diffusion_jvp(lim, r), fd, rtol=1e-7)


def test_full_triad_energy():
    m = TriadModel(1.0, 2.0, -3.0, UncertaintyInterval(1, 1), 0.2)
    x = np.array([[0.3, -1.0, 0.7]])
    r1, r2, u = x[0]
    quad = triad_full_drift(m, x)[0] + np.array([0, 0, u / 0.04])
    # the bilinear part conserves energy
    assert abs(x[0] @ quad) < 1e-12


def test_pitchfork():
    np.testing.assert_allclose(pitchfork_roots(0.0), [-1, 0, 1])
    assert len(pitchfork_roots(0.5)) == 1
    assert len(pitchfork_stable_roots(0.2)) == 2
    np.testing.assert_allclose(pitchfork_stable_roots(0.5), [0.0])
    with pytest.raises(DomainError):
        PitchforkModel(1.5, 0.1)
    pm = PitchforkModel(0.3, 0.1)
    assert pm.diffusion(np.zeros((4, 2))).shape == (4, 2, 1)


def test_conserved_quantity_shape():
    assert conserved_quantity(1.0, 2.0, np.zeros((3, 2))).shape == (3,)
