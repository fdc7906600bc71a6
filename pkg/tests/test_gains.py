import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, settings, strategies as st

from formctl.errors import DefectiveW, NotDetectable, UnstablePole
from formctl.gains import (axis_block, build_plant, companion, compute_leader_bound, design_beta,
                           is_detectable, lmi_weights, riccati_residual, select_coupling_gains, solve_care,
                           solve_output_lmi, synthesize)


def test_design_beta_places_poles():
    for poles in ([-2.0], [-1.0, -3.0], [-3.0, -4.0, -5.0], [-1.0, -2.0, -2.5, -4.0]):
        W1, W2 = companion(design_beta(poles))
        np.testing.assert_allclose(np.sort(np.linalg.eigvals(W1).real), np.sort(poles), rtol=1e-9)
        assert np.all(W2[:-1] == 0) and np.array_equal(W2[-1], W1[-1])
    np.testing.assert_allclose(design_beta([-3, -4, -5]), [-60, -47, -12])


def test_design_beta_rejects_unstable():
    with pytest.raises(UnstablePole):
        design_beta([-1.0, 0.5])


@pytest.mark.parametrize("m", [1, 2, 3, 4])
def test_care_matches_scipy(m):
    rng = np.random.default_rng(m)
    A = np.eye(m, k=1)
    B = np.eye(m)[:, [m - 1]]
    G = rng.normal(size=(m, m))
    Q = G @ G.T + np.eye(m)
    R = np.array([[0.5]])
    X = solve_care(A, B, Q, R)
    ref = scipy.linalg.solve_continuous_are(A, B, Q, R)
    np.testing.assert_allclose(X, ref, rtol=1e-8, atol=1e-10)
    assert np.max(np.abs(riccati_residual(A, B, Q, R, X))) < 1e-8 * max(1.0, np.abs(X).max())


def test_detectability():
    A = np.kron(np.eye(2, k=1), np.eye(3))
    assert is_detectable(A, np.kron(np.eye(2)[[0]], np.eye(3)))
    assert not is_detectable(A, np.kron(np.eye(2)[[1]], np.eye(3)))
    with pytest.raises(NotDetectable):
        build_plant(2, orders=[1])


def test_axis_block():
    M = np.arange(4.0).reshape(2, 2)
    np.testing.assert_array_equal(axis_block(np.kron(M, np.eye(3))), M)
    assert axis_block(np.ones((6, 6))) is None


def test_gains_are_kronecker_structured(passages):
    g = passages.gains
    for M in (g.K, g.L, g.P, g.H):
        assert axis_block(M) is not None


def test_defective_w_raises_and_synthesis_spreads(passages):
    plant = build_plant(2)
    L = -np.linalg.solve(solve_output_lmi(plant), plant.C.T)
    with pytest.raises(DefectiveW):
        compute_leader_bound(design_beta([-1.0, -1.0]), plant, L, 1.0, 0.0)
    from formctl.scenario import build_pipeline, load_scenario
    mats = build_pipeline(load_scenario("equilibrium"), synthesize_gains=False).mats
    g = synthesize(mats, plant, poles=[-1.0, -1.0], zeta=1.0)
    assert g.notes and not np.allclose(g.poles, [-1.0, -1.0])
    assert g.all_pass()


def test_leader_bound_formula(passages):
    g = passages.gains
    m = g.plant.m
    # independent axis model of W
    W1, W2 = companion(g.beta)
    La = g.L[::3, ::3]
    Ca = g.plant.C[::3, ::3]
    Am = np.eye(m, k=1)
    W = np.block([[W1, W2], [np.zeros((m, m)), Am + La @ Ca]])
    lam, V = np.linalg.eig(W)
    assert np.min(np.abs(lam[:, None] - lam[None, :]) + np.eye(2 * m) * 1e9) > 1e-6
    expected = 4 * g.zeta * np.linalg.norm(g.beta) * np.linalg.cond(V) + g.gamma_m
    assert g.psi == 1.0
    assert g.gamma_u == pytest.approx(expected, rel=1e-6)


def test_coupling_gains(passages):
    mats = passages.mats
    lam = np.linalg.eigvalsh(mats.omega_ff.T @ mats.omega_ff)[0]
    hat = select_coupling_gains(mats, 10.0, 4, "omega-hat")
    bar = select_coupling_gains(mats, 10.0, 4, "omega-bar")
    assert hat.c1 * lam > 1.0 and hat.c1 == pytest.approx(1.1 * max(1.0, 1.0 / lam))
    assert bar.c1 == pytest.approx(1.1)
    sigma = np.max(np.abs(np.linalg.solve(mats.omega_ff, mats.omega_fl)))
    assert sigma == pytest.approx(1.5)
    assert hat.c2 == pytest.approx(1.1 * 4 * sigma * 10.0)


def test_lmi_weights_shape():
    Qs, Qo = lmi_weights(3, 2.0)
    assert Qs.shape == (9, 9) and Qo.shape == (9, 9)
    assert np.all(np.linalg.eigvalsh(Qs) > 0) and np.all(np.linalg.eigvalsh(Qo) > 0)


@settings(max_examples=15, deadline=None)
@given(m=st.integers(1, 3), bandwidth=st.floats(0.5, 5.0),
       base=st.floats(0.5, 4.0), spread=st.floats(0.2, 2.0))
def test_certificates_hold(passages, m, bandwidth, base, spread):
    poles = -(base + spread * np.arange(m))
    g = synthesize(passages.mats, build_plant(m), poles=poles, zeta=0.1, gamma_m=1.0, bandwidth=bandwidth)
    assert g.all_pass(), {k: v for k, v in g.certificates().items() if not v["pass"]}
