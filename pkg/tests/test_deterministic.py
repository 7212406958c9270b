import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from nullrec.coefficients import CoefficientSet, build_catalog_entry
from nullrec.deterministic import (
    diffusion_kernel,
    drift_integral,
    fundamental_matrix,
    psd_sqrt,
    solve_ode,
)
from nullrec.errors import BlowUpError, NumericalDegeneracyError
from nullrec.paths import make_grid


def linear(M):
    M = np.asarray(M, dtype=float)
    d = M.shape[0]
    return CoefficientSet(dim=d, b1=lambda y: np.asarray(y) @ M.T,
                          Db1=lambda y: np.broadcast_to(M, np.shape(y)[:-1] + (d, d)))


def test_zero_drift_keeps_initial_value():
    ode = solve_ode(linear(np.zeros((3, 3))), [1.0, -2.0, 0.5], make_grid(0, 1, 50))
    assert np.all(ode.y == [1.0, -2.0, 0.5])


def test_oscillator_flow_is_rotation():
    cs = build_catalog_entry("oscillator")
    g = make_grid(0, 2 * math.pi, round(2 * math.pi / 1e-3))
    ode = solve_ode(cs, [1.0, 0.0], g)
    t = g.nodes
    assert np.max(np.abs(ode.y - np.column_stack([np.cos(t), np.sin(t)]))) <= 1e-6
    assert ode.residual(cs) < 1e-5


def test_exponential_decay():
    ode = solve_ode(linear([[-1.0]]), [1.0], make_grid(0, 1, 100))
    assert ode.y[-1, 0] == pytest.approx(math.exp(-1), abs=1e-6)


def test_rk4_order():
    cs = build_catalog_entry("oscillator")
    errs = []
    for n in (200, 400):
        g = make_grid(0, 2 * math.pi, n)
        y = solve_ode(cs, [1.0, 0.0], g).y[-1]
        errs.append(np.linalg.norm(y - [1.0, 0.0]))
    assert 12 <= errs[0] / errs[1] <= 20


def test_blow_up_reports_index():
    cs = CoefficientSet(dim=1, b1=lambda y: np.asarray(y) ** 2, Db1=lambda y: 2 * np.asarray(y)[..., None])
    with pytest.raises(BlowUpError) as exc:
        solve_ode(cs, [1.0], make_grid(0, 2, 200))
    assert 100 <= exc.value.index <= 200


def test_fundamental_matrix_trivial_and_rotation():
    g = make_grid(0, 3, 3000)
    zero = fundamental_matrix(linear(np.zeros((2, 2))), solve_ode(linear(np.zeros((2, 2))), [1, 1], g))
    assert np.allclose(zero.phi0, np.eye(2))
    cs = build_catalog_entry("oscillator")
    Phi = fundamental_matrix(cs, solve_ode(cs, [1.0, 0.0], g))
    for k, j in [(3000, 0), (2000, 500), (700, 700)]:
        dt = g.node(k) - g.node(j)
        R = np.array([[math.cos(dt), -math.sin(dt)], [math.sin(dt), math.cos(dt)]])
        assert np.max(np.abs(Phi(k, j) - R)) <= 1e-6
    assert np.array_equal(Phi(5, 5), np.eye(2))
    with pytest.raises(ValueError):
        Phi(1, 2)


def test_fundamental_matrix_diagonal_generator():
    a, b = 0.7, -1.3
    cs = linear(np.diag([a, b]))
    g = make_grid(0, 1, 1000)
    Phi = fundamental_matrix(cs, solve_ode(cs, [1.0, 1.0], g))
    dt = g.node(900) - g.node(300)
    assert np.allclose(Phi(900, 300), np.diag([math.exp(a * dt), math.exp(b * dt)]), atol=1e-6)


def test_fundamental_matrix_singular():
    cs = linear(np.diag([-40.0, 0.0]))
    with pytest.raises(NumericalDegeneracyError):
        fundamental_matrix(cs, solve_ode(cs, [1.0, 1.0], make_grid(0, 1, 1000)))


@given(st.lists(st.integers(0, 400), min_size=3, max_size=3))
def test_cocycle_property(ks):
    cs = build_catalog_entry("gaussian_bump", {"d": 2, "kappa": 1.5})
    Phi = _bump_phi()
    s, u, t = sorted(ks)
    lhs = Phi(t, s)
    rhs = Phi(t, u) @ Phi(u, s)
    assert np.linalg.norm(lhs - rhs, 2) <= 1e-6


_cache = {}


def _bump_phi():
    if "phi" not in _cache:
        cs = build_catalog_entry("gaussian_bump", {"d": 2, "kappa": 1.5})
        _cache["phi"] = fundamental_matrix(cs, solve_ode(cs, [1.0, -0.5], make_grid(0, 2, 400)))
    return _cache["phi"]


def test_propagators_match_call():
    Phi = _bump_phi()
    P = Phi.propagators(250)
    assert P.shape == (251, 1 * 2, 2)
    assert np.allclose(P[100], Phi(250, 100))
    assert np.array_equal(P[250], np.eye(2))


def test_oscillator_diffusion_kernel():
    cs = build_catalog_entry("oscillator")
    K = diffusion_kernel(cs, solve_ode(cs, [1.0, 0.0], make_grid(0, 1, 10)))
    assert np.allclose(K.A, np.diag([math.sqrt(math.pi), 0.0]), atol=1e-9)
    assert np.allclose(K.sqrtA, np.diag([math.pi**0.25, 0.0]), atol=1e-9)
    assert math.pi**0.25 == pytest.approx(1.33133, abs=1e-5)


def test_zero_diffusion_kernel():
    cs = build_catalog_entry("drift_only")
    K = diffusion_kernel(cs, solve_ode(cs, [0.0, 0.0], make_grid(0, 1, 10)))
    assert np.all(K.A == 0) and np.all(K.sqrtA == 0)


def test_bump_kernel_closed_form():
    cs = build_catalog_entry("gaussian_bump", {"S": 1.5, "d": 2})
    ode = solve_ode(cs, [0.4, -0.2], make_grid(0, 1, 20))
    K = diffusion_kernel(cs, ode)
    m = (2 + np.sin(ode.y)) / 3
    expect = 1.5**2 / 2 * math.sqrt(math.pi) * m**2
    assert np.allclose(np.diagonal(K.A, axis1=1, axis2=2), expect, rtol=1e-9)
    assert np.allclose(K.A, np.swapaxes(K.A, 1, 2), atol=1e-12)


def test_drift_integral_closed_form():
    cs = build_catalog_entry("drift_only", {"c": 2.0})
    B = drift_integral(cs, solve_ode(cs, [0.0, 0.0], make_grid(0, 1, 5)))
    assert np.allclose(B, 2.0 * math.sqrt(2 * math.pi) / math.sqrt(2), rtol=1e-9)


def test_psd_sqrt_example():
    R = psd_sqrt(np.array([[2.0, 1.0], [1.0, 2.0]]))
    assert np.allclose(R, [[1.36603, 0.36603], [0.36603, 1.36603]], atol=1e-5)


def test_psd_sqrt_rejects_indefinite_and_clamps_roundoff():
    with pytest.raises(ValueError):
        psd_sqrt(np.array([[1.0, 0.0], [0.0, -0.1]]))
    R = psd_sqrt(np.array([[1.0, 0.0], [0.0, -1e-13]]))
    assert np.allclose(R, np.diag([1.0, 0.0]))


@given(arrays(np.float64, (3, 3), elements=st.floats(-3, 3)))
def test_psd_sqrt_round_trip(M):
    A = M @ M.T
    R = psd_sqrt(A)
    assert np.allclose(R, R.T, atol=1e-12)
    assert np.min(np.linalg.eigvalsh(R)) >= -1e-10
    scale = max(np.linalg.norm(A, 2), 1e-300)
    assert np.linalg.norm(R @ R - A, 2) <= 1e-8 * max(scale, 1.0)
