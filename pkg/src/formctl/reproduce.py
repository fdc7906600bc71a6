"""Regression of computed matrices and vectors against bundled fixtures.

A fixture is a scenario with an ``expected`` section.  Rows of the follower
matrix blocks are compared up to a per-row scale (a displacement constraint
is only defined up to a nonzero factor); everything downstream of that scale
is compared directly.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import RegressionMismatch
from .formation import build_follower_matrices
from .maneuver import desired_formation, solve_shape
from .scenario import Scenario, bundled_scenarios, load_scenario

DEFAULT_TOL = 1e-9


@dataclass(frozen=True)
class RegressionEntry:
    fixture: str
    item: str
    error: float
    tol: float

    @property
    def ok(self) -> bool:
        return bool(self.error <= self.tol)


def row_scaled_error(computed, expected) -> float:
    """Largest entry error after scaling each computed row by its best factor."""
    C = np.atleast_2d(np.asarray(computed, dtype=float))
    E = np.atleast_2d(np.asarray(expected, dtype=float))
    if C.shape != E.shape:
        return float("inf")
    worst = 0.0
    for c, e in zip(C, E):
        cc = float(c @ c)
        if cc == 0.0:
            worst = max(worst, float(np.max(np.abs(e))))
            continue
        s = float(c @ e) / cc
        worst = max(worst, float(np.max(np.abs(s * c - e))))
    return worst


def check_scenario(scn: Scenario, tol: float = DEFAULT_TOL) -> list[RegressionEntry]:
    exp = scn.expected
    if not exp:
        return []
    mats, cert = build_follower_matrices(scn.formation)
    out = []
    if "omega_fl" in exp and "omega_ff" in exp:
        # both blocks share the row scale
        got = np.hstack([mats.omega_fl, mats.omega_ff])
        want = np.hstack([exp["omega_fl"], exp["omega_ff"]])
        out.append(RegressionEntry(scn.name, "omega_fl|omega_ff (per-row scale)",
                                   row_scaled_error(got, want), tol))
    if "omega_hat" in exp:
        err = (float(np.max(np.abs(mats.omega_hat - exp["omega_hat"])))
               if mats.omega_hat is not None else float("inf"))
        out.append(RegressionEntry(scn.name, "omega_hat", err, tol))
    for k, (g_l, g_f) in enumerate(exp.get("shapes", [])):
        err = float(np.max(np.abs(solve_shape(g_l, mats) - g_f))) if cert.localizable else float("inf")
        out.append(RegressionEntry(scn.name, f"shape[{k}] g_f", err, tol))
    for t, p in exp.get("desired", []):
        got = desired_formation(t, scn.plan, mats).reshape(-1) if cert.localizable else np.full_like(p, np.inf)
        out.append(RegressionEntry(scn.name, f"p*(t={t:g})", float(np.max(np.abs(got - p))), tol))
    return out


def reproduce(paths=None, tol: float = DEFAULT_TOL, raise_on_mismatch: bool = False) -> list[RegressionEntry]:
    """Check every fixture (all bundled scenarios with expectations by default)."""
    if paths is None:
        scns = [load_scenario(p) for p in bundled_scenarios()]
    else:
        scns = [p if isinstance(p, Scenario) else load_scenario(p) for p in paths]
    entries = []
    for scn in scns:
        entries.extend(check_scenario(scn, tol))
    bad = [e for e in entries if not e.ok]
    if bad and raise_on_mismatch:
        raise RegressionMismatch(
            "; ".join(f"{e.fixture}: {e.item} off by {e.error:.3e}" for e in bad), entries=bad)
    return entries
