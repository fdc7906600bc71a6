import os
import subprocess
import sys

import numpy as np
import pytest

from formctl.agents import (AgentState, follower_step_absolute, follower_step_relative,
                            follower_step_state_feedback, leader_step)
from formctl.formation import edge_weights
from formctl.kernel import BACKEND, CompiledClosedLoop, PythonClosedLoop
from formctl.maneuver import DesiredState
from formctl.sim import MODES, build_closed_loop, coupling_matrix, follower_edges

from conftest import pipeline

VARIANTS = ("omega-hat", "omega-bar", "relative", "state-feedback")
needs_c = pytest.mark.skipif(CompiledClosedLoop is None, reason="compiled kernel not built")


def _loop(cls, pl, eps=1e-3):
    g, mats = pl.gains, pl.mats
    Wc = coupling_matrix(mats, pl.variant)
    edges = follower_edges(mats) if MODES[pl.variant] == 1 else []
    loop = cls(g.plant.A, g.plant.B, g.plant.C, g.L, g.K, g.beta_row, Wc, mats.n_l, MODES[pl.variant],
               g.c1, g.c2, eps, [e[0] for e in edges], [e[1] for e in edges], [e[2] for e in edges])
    return loop, edges


def _random_state(loop, seed):
    rng = np.random.default_rng(seed)
    z = rng.normal(size=loop.nz)
    xs = rng.normal(size=(loop.n_l, loop.dim))
    ff = rng.normal(size=(loop.n_l, 3))
    return z, xs, ff


@needs_c
@pytest.mark.parametrize("variant", VARIANTS)
def test_backends_agree_on_rhs(variant):
    pl = pipeline("paper_sec5", variant)
    py, _ = _loop(PythonClosedLoop, pl)
    cy, _ = _loop(CompiledClosedLoop, pl)
    assert (py.nz, py.n_obs) == (cy.nz, cy.n_obs)
    for seed in range(5):
        z, xs, ff = _random_state(py, seed)
        z *= 10.0 ** (seed - 3)          # inside and outside the boundary layer
        dz_p, u_p = py.rhs(z, xs, ff)
        dz_c, u_c = cy.rhs(z, xs, ff)
        scale = max(1.0, np.abs(dz_p).max())
        np.testing.assert_allclose(dz_c, dz_p, rtol=0, atol=1e-12 * scale)
        np.testing.assert_allclose(u_c, u_p, rtol=0, atol=1e-12 * max(1.0, np.abs(u_p).max()))


@needs_c
@pytest.mark.parametrize("method", [0, 1])
@pytest.mark.parametrize("variant", VARIANTS)
def test_backends_agree_on_integrate(variant, method):
    pl = pipeline("line_m1", variant)
    py, _ = _loop(PythonClosedLoop, pl, eps=0.5)
    cy, _ = _loop(CompiledClosedLoop, pl, eps=0.5)
    plan = pl.scenario.plan
    n_steps, dt = 200, 1e-3
    half = plan.t_start + np.arange(2 * n_steps + 1) * dt / 2
    xs, ff = plan.leader_states(half, 1)
    z0 = np.random.default_rng(4).normal(size=py.nz) * 0.1
    Zp, Up, sp, _ = py.integrate(z0, xs, ff, dt, n_steps, 7, method)
    Zc, Uc, sc, _ = cy.integrate(z0, xs, ff, dt, n_steps, 7, method)
    assert sp == sc == 0
    assert Zp.shape == Zc.shape == (-(-n_steps // 7) + 1, py.nz)
    np.testing.assert_allclose(Zc, Zp, rtol=0, atol=1e-12)
    np.testing.assert_allclose(Uc, Up, rtol=0, atol=1e-11)


@pytest.mark.parametrize("cls", [PythonClosedLoop, CompiledClosedLoop])
def test_blowup_status(cls):
    if cls is None:
        pytest.skip("compiled kernel not built")
    pl = pipeline("line_m1")
    loop, _ = _loop(cls, pl)
    plan = pl.scenario.plan
    half = np.linspace(0, 1, 2001)
    xs, ff = plan.leader_states(half, 1)
    z0 = np.full(loop.nz, 1e8)
    Z, U, status, fail = loop.integrate(z0, xs * 0 + 1e12, ff, 1e-3, 1000, 10, 1, blowup=1e9)
    assert status == 1 and 1 <= fail <= 1000 and Z.shape[0] <= fail // 10 + 1


@pytest.mark.parametrize("variant", VARIANTS)
def test_kernel_matches_agent_functions(variant):
    """The vectorized right-hand side equals the per-agent laws."""
    pl = pipeline("paper_sec5", variant)
    g, mats = pl.gains, pl.mats
    eps = 1e-3
    loop, edges = _loop(PythonClosedLoop, pl, eps)
    z, xs, ff = _random_state(loop, 11)
    dz, U = loop.rhs(z, xs, ff)
    n, n_l, dim = loop.n, loop.n_l, loop.dim
    X = z[: n * dim].reshape(n, dim)
    E = z[n * dim:].reshape(-1, dim)
    dE = dz[n * dim:].reshape(-1, dim)
    C = g.plant.C
    for i in range(n_l):
        u, deta = leader_step(AgentState(i, "leader", X[i]), E[i], DesiredState(np.vstack([xs[i].reshape(3, 3), ff[i]])), g)
        np.testing.assert_allclose(U[i], u, atol=1e-10)
        np.testing.assert_allclose(dE[i], deta, atol=1e-9)
    Wc = coupling_matrix(mats, variant)
    for i in range(n_l, n):
        agent = AgentState(i, "follower", X[i])
        w = edge_weights(Wc, i)
        if variant in ("omega-hat", "omega-bar"):
            u, deta = follower_step_absolute(agent, E[i], {j: E[j] for j in w}, w, C @ X[i],
                                             {j: C @ X[j] for j in w}, g, eps)
            np.testing.assert_allclose(dE[i], deta, rtol=1e-10, atol=1e-9)
        elif variant == "relative":
            rows = {dst: n_l + k for k, (src, dst, _) in enumerate(edges) if src == i}
            u, deriv = follower_step_relative(agent, {j: E[rows[j]] for j in w},
                                              {j: C @ (X[i] - X[j]) for j in w}, {j: U[j] for j in w},
                                              w, g, eps)
            for j in w:
                np.testing.assert_allclose(dE[rows[j]], deriv[j], rtol=1e-10, atol=1e-9)
        else:
            u = follower_step_state_feedback(agent, {j: X[j] for j in w}, w, g, eps)
        np.testing.assert_allclose(U[i], u, rtol=1e-10, atol=1e-9)


def test_build_closed_loop_uses_selected_backend():
    pl = pipeline("paper_sec5")
    loop, _, _ = build_closed_loop(pl.mats, pl.gains, pl.variant, 1e-3)
    assert loop.backend == BACKEND


@pytest.mark.parametrize("flag,expected", [("1", "python"), ("0", None), ("", None)])
def test_backend_selection_env(flag, expected):
    env = dict(os.environ, FORMCTL_PURE_PYTHON=flag)
    out = subprocess.run([sys.executable, "-c", "import formctl; print(formctl.BACKEND)"],
                         env=env, capture_output=True, text=True, check=True).stdout.strip()
    if expected is None:
        expected = "cython" if CompiledClosedLoop is not None else "python"
    assert out == expected
