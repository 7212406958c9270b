import io
import math

import numpy as np
import pytest

from nullrec.coefficients import build_catalog_entry
from nullrec.deterministic import DiffusionKernel, diffusion_kernel, fundamental_matrix, solve_ode
from nullrec.limit import (
    V_ensemble,
    corollary_ensemble,
    inner_step,
    integrate_against_dL,
    integrate_against_V,
    resample_V,
    sample_corollary_pair,
    sample_V,
    sample_zeta0,
    sample_zeta_tilde0,
    zeta0_ensemble,
    zeta_tilde0_ensemble,
)
from nullrec.localtime import LocalTimeCurve
from nullrec.paths import SeedSpec, make_grid
from nullrec.stats import normality_pvalue

SQ = math.sqrt(2 / math.pi)


def setup(entry, y0, n=200, T=1.0, **params):
    cs = build_catalog_entry(entry, params)
    ode = solve_ode(cs, y0, make_grid(0, T, n))
    return cs, ode, fundamental_matrix(cs, ode)


def test_inner_step_rules():
    g = make_grid(0, 1, 100)
    assert inner_step(g, None) == (10, pytest.approx(1e-3))
    assert inner_step(g, 2.5e-3)[0] == 4
    for bad in (0.0, 0.02, 3e-3):
        with pytest.raises(ValueError):
            inner_step(g, bad)


def test_V_structure():
    g = make_grid(0, 1, 200)
    V = sample_V(g, 2, SeedSpec(4), h_inner=5e-4)
    assert np.all(V.V[0] == 0) and V.L.L[0] == 0
    dL = np.diff(V.L.L)
    moving = np.any(V.increments != 0, axis=1)
    assert np.all(dL[moving] > 0)
    assert np.all(V.increments[dL == 0] == 0)
    # outer steps whose fine path stays away from 0 carry no local time
    m, hf = inner_step(g, 5e-4)
    seg = np.abs(V.w1_fine[:-1]).reshape(g.n_steps, m).min(axis=1)
    far = seg > math.sqrt(hf)
    assert far.sum() > 0.2 * g.n_steps
    assert np.all(dL[far] == 0) and np.all(V.increments[far] == 0)
    again = sample_V(g, 2, SeedSpec(4), h_inner=5e-4)
    assert np.array_equal(V.V, again.V)


def test_V_second_moment():
    g = make_grid(0, 1, 100)
    V, L = V_ensemble(g, 1, 40_000, 7, h_inner=1e-4)
    assert V[:, -1, 0].var() == pytest.approx(SQ, rel=0.03)
    assert L[:, -1].mean() == pytest.approx(SQ, rel=0.02)
    single = sample_V(g, 1, SeedSpec(7, 123), h_inner=1e-4)
    assert np.array_equal(V[123], single.V)


def test_integrate_against_V_trivial():
    g = make_grid(0, 1, 100)
    V = sample_V(g, 2, SeedSpec(1))
    assert np.all(integrate_against_V(np.zeros((101, 2, 2)), V) == 0)
    eye = np.broadcast_to(np.eye(2), (101, 2, 2))
    assert np.allclose(integrate_against_V(eye, V), V.V[-1], atol=1e-12)
    assert np.allclose(integrate_against_V(np.ones(100), V), V.V[-1], atol=1e-12)
    with pytest.raises(ValueError):
        integrate_against_V(np.ones(50), V)


def test_conditional_variance_and_gaussianity_given_W1():
    g = make_grid(0, 1, 100)
    V = sample_V(g, 1, SeedSpec(2))
    assert V.L.terminal > 0.3
    f = np.ones(101)
    vals = np.array([integrate_against_V(f, resample_V(V, SeedSpec(2, k, (9,))))[0] for k in range(20_000)])
    assert vals.var() == pytest.approx(V.L.terminal, rel=0.03)
    phi = np.sin(3 * g.nodes)
    sub = np.array([integrate_against_V(phi, resample_V(V, SeedSpec(3, k)))[0] for k in range(1000)])
    assert normality_pvalue(sub) >= 1.0


def test_integrate_against_dL():
    g = make_grid(0, 1, 100)
    L = LocalTimeCurve(g, 0.0, np.sqrt(g.nodes), "occupation", 0.1)
    assert np.allclose(integrate_against_dL(np.ones((101, 3)), L), [1, 1, 1])
    zero = LocalTimeCurve(g, 0.0, np.zeros(101), "occupation", 0.1)
    assert np.all(integrate_against_dL(g.nodes, zero) == 0)
    stair = LocalTimeCurve(g, 0.0, (g.nodes > 0.5 + 1e-12).astype(float), "occupation", 0.1)
    assert integrate_against_dL(g.nodes, stair) == pytest.approx(0.5)
    with pytest.raises(ValueError):
        integrate_against_dL(np.ones(7), L)


def test_zeta0_zero_sigma_and_identity_kernel():
    cs, ode, Phi = setup("drift_only", [0, 0])
    V = sample_V(ode.grid, 2, SeedSpec(0))
    z = sample_zeta0(diffusion_kernel(cs, ode), Phi, V)
    assert np.all(z.zeta == 0)
    cs, ode, Phi = setup("drift_only", [0.0], d=1, c=0.0)
    n = ode.grid.n_nodes
    ker = DiffusionKernel(ode.grid, np.ones((n, 1, 1)), np.ones((n, 1, 1)))
    V = sample_V(ode.grid, 1, SeedSpec(5))
    for c in ("variation_of_parameters", "integral_equation"):
        z = sample_zeta0(ker, Phi, V, c)
        assert np.allclose(z.zeta, V.V, atol=1e-12) and z.construction == c
    with pytest.raises(ValueError):
        sample_zeta0(ker, Phi, V, "bogus")
    with pytest.raises(ValueError):
        sample_zeta0(ker, Phi, sample_V(make_grid(0, 1, 50), 1, SeedSpec(5)))


def test_construction_gap_shrinks_with_h():
    gaps = []
    for n in (200, 800):
        cs, ode, Phi = setup("oscillator", [1, 0], n=n)
        V = sample_V(ode.grid, 2, SeedSpec(6), h_inner=ode.grid.h / 8)
        z = sample_zeta0(diffusion_kernel(cs, ode), Phi, V)
        dV = np.max(np.abs(V.increments))
        assert z.zeta[0].tolist() == [0, 0]
        assert z.construction_gap <= 5 * (ode.grid.h + dV)
        gaps.append(z.construction_gap)
    assert gaps[1] < gaps[0]


def test_oscillator_limit_second_moment():
    cs, ode, Phi = setup("oscillator", [1, 0], n=1000)
    ens = zeta0_ensemble(diffusion_kernel(cs, ode), Phi, 20_000, 8, h_inner=1e-4)
    m2 = np.sum(ens["zeta"][:, 0] ** 2, axis=1).mean()
    assert m2 == pytest.approx(math.sqrt(2), rel=0.05)


def test_zeta0_ensemble_matches_single_path():
    cs, ode, Phi = setup("oscillator", [1, 0], n=100)
    K = diffusion_kernel(cs, ode)
    ens = zeta0_ensemble(K, Phi, 3, 9, record=range(101))
    z = sample_zeta0(K, Phi, sample_V(ode.grid, 2, SeedSpec(9, 2)))
    assert np.allclose(ens["zeta"][2], z.zeta, atol=1e-12)


def test_zeta_tilde0():
    cs, ode, Phi = setup("drift_only", [0, 0], c=0.0)
    V = sample_V(ode.grid, 2, SeedSpec(1))
    assert np.all(sample_zeta_tilde0(cs, Phi, ode, V.L).zeta == 0)
    cs, ode, Phi = setup("drift_only", [0, 0], c=2.0)
    B = 2.0 * math.sqrt(2 * math.pi) / math.sqrt(2)
    z = sample_zeta_tilde0(cs, Phi, ode, V.L)
    assert np.allclose(z.zeta, B * V.L.L[:, None], atol=1e-10)
    ens = zeta_tilde0_ensemble(cs, Phi, ode, 10_000, 3, h_inner=1e-3)
    assert np.allclose(ens["zeta"][:, 0].mean(axis=0), B * SQ, rtol=0.03)
    osc, o_ode, o_Phi = setup("oscillator", [1, 0])
    with pytest.raises(ValueError):
        sample_zeta_tilde0(osc, o_Phi, o_ode, V.L)


def test_state_dependent_pair_reduces_to_unit_case():
    cs, ode, Phi = setup("constant_psi", [1, 0], c=1.0)
    X0, z = sample_corollary_pair(cs, ode, ode.grid, SeedSpec(3, 1))
    V = sample_V(ode.grid, 2, SeedSpec(3, 1))
    ref = sample_zeta0(diffusion_kernel(build_catalog_entry("oscillator"), ode), Phi, V)
    assert np.allclose(X0.values[:, 0], V.w1, atol=1e-12)
    assert np.allclose(z.zeta, ref.zeta, atol=1e-12)


def test_state_dependent_pair_time_changed_local_time():
    cs = build_catalog_entry("constant_psi", {"c": 2.0})
    ode = solve_ode(cs, [1, 0], make_grid(0, 1, 100))
    ens = corollary_ensemble(cs, ode, 10_000, 4, h_inner=1e-4)
    assert ens["L"][:, -1].mean() == pytest.approx(math.sqrt(8 / math.pi), rel=0.03)
    assert ens["X0"][:, -1].var() == pytest.approx(4.0, rel=0.05)


def test_state_dependent_pair_zero_sigma():
    cs = build_catalog_entry("drift_only")
    ode = solve_ode(cs, [0, 0], make_grid(0, 1, 100))
    _, z = sample_corollary_pair(cs, ode, ode.grid, SeedSpec(0))
    assert np.all(z.zeta == 0)
    with pytest.raises(ValueError):
        sample_corollary_pair(cs, ode, make_grid(0, 1, 50), SeedSpec(0))


def test_csv_outputs():
    g = make_grid(0, 1, 10)
    V = sample_V(g, 2, SeedSpec(0))
    text = V.to_csv()
    assert "t,V1,V2,L,W1" in text.splitlines()
    data = np.loadtxt(io.StringIO(text), delimiter=",", comments="#", skiprows=text.splitlines().index("t,V1,V2,L,W1") + 1)
    assert data.shape == (11, 5)
