"""Vectorized NumPy implementation of the closed-loop right-hand side.

Used when the compiled extension is unavailable or when
``FORMCTL_PURE_PYTHON=1``.  The interface mirrors ``_ckernel.ClosedLoop``.
"""
from __future__ import annotations

import numpy as np

MODE_ABSOLUTE = 0
MODE_RELATIVE = 1
MODE_STATE = 2

STATUS_OK = 0
STATUS_BLOWUP = 1


def _sgn_rows(V, eps):
    norms = np.linalg.norm(V, axis=1)
    if eps > 0.0:
        denom = np.maximum(norms, eps)
    else:
        denom = np.where(norms > 0.0, norms, 1.0)
    return V / denom[:, None]


class ClosedLoop:
    """Stacked closed-loop dynamics of all agents.

    State layout: ``z = [x_0 .. x_{n-1}, eta_0 .. eta_{r-1}]``, each block of
    length ``3m``.  The estimate rows are the ``n`` agent observers in mode
    0, ``n_l`` leader observers followed by one observer per edge in mode 1,
    and the ``n_l`` leader observers only in mode 2.
    """

    backend = "python"

    def __init__(self, A, B, C, L, K, Kb, Wc, n_l, mode, c1, c2, eps,
                 edge_src=None, edge_dst=None, edge_w=None):
        self.A = np.ascontiguousarray(A, dtype=float)
        self.B = np.ascontiguousarray(B, dtype=float)
        self.C = np.ascontiguousarray(C, dtype=float)
        self.L = np.ascontiguousarray(L, dtype=float)
        self.K = np.ascontiguousarray(K, dtype=float)
        self.Kb = np.ascontiguousarray(Kb, dtype=float)
        self.Wc = np.ascontiguousarray(Wc, dtype=float)
        self.n_l = int(n_l)
        self.mode = int(mode)
        self.c1 = float(c1)
        self.c2 = float(c2)
        self.eps = float(eps)
        self.dim = self.A.shape[0]
        self.n_f = self.Wc.shape[0]
        self.n = self.n_l + self.n_f
        if self.n_f and self.Wc.shape[1] != self.n:
            raise ValueError("coupling matrix must have n columns")
        self.edge_src = np.asarray(edge_src if edge_src is not None else [], dtype=np.int64)
        self.edge_dst = np.asarray(edge_dst if edge_dst is not None else [], dtype=np.int64)
        self.edge_w = np.asarray(edge_w if edge_w is not None else [], dtype=float)
        self.n_edges = self.edge_src.size
        if self.mode == MODE_ABSOLUTE:
            self.n_obs = self.n
        elif self.mode == MODE_RELATIVE:
            self.n_obs = self.n_l + self.n_edges
        elif self.mode == MODE_STATE:
            self.n_obs = self.n_l
        else:
            raise ValueError(f"unknown mode {mode}")
        self.nz = (self.n + self.n_obs) * self.dim
        # follower-local index of each edge source, for scatter-add
        self._edge_f = self.edge_src - self.n_l

    def _split(self, z):
        nx = self.n * self.dim
        X = z[:nx].reshape(self.n, self.dim)
        E = z[nx:].reshape(self.n_obs, self.dim)
        return X, E

    def inputs(self, z, xstar, ff):
        """Inputs of all agents, shape ``(n, 3)``."""
        X, E = self._split(np.asarray(z, dtype=float))
        return self._inputs(X, E, np.asarray(xstar, dtype=float), np.asarray(ff, dtype=float))

    def _inputs(self, X, E, xstar, ff):
        n_l = self.n_l
        U = np.empty((self.n, 3))
        U[:n_l] = (E[:n_l] - xstar) @ self.Kb.T + ff
        if self.n_f:
            if self.mode == MODE_ABSOLUTE:
                S = self.Wc @ E
            elif self.mode == MODE_STATE:
                S = self.Wc @ X
            else:
                S = np.zeros((self.n_f, self.dim))
                np.add.at(S, self._edge_f, self.edge_w[:, None] * E[n_l:])
            V = S @ self.K.T
            U[n_l:] = self.c1 * V + self.c2 * _sgn_rows(V, self.eps)
        return U

    def rhs(self, z, xstar, ff):
        """Return ``(dz, U)`` for state ``z`` and leader references."""
        z = np.asarray(z, dtype=float)
        X, E = self._split(z)
        U = self._inputs(X, E, xstar, ff)
        A, B, C, L = self.A, self.B, self.C, self.L
        n_l = self.n_l
        dX = X @ A.T + U @ B.T
        dE = np.empty_like(E)
        R = (E[:n_l] - X[:n_l]) @ C.T
        dE[:n_l] = E[:n_l] @ A.T + U[:n_l] @ B.T + R @ L.T
        if self.mode == MODE_ABSOLUTE:
            Rall = (E - X) @ C.T
            Rf = Rall[n_l:] + self.c1 * (self.Wc @ Rall)
            dE[n_l:] = E[n_l:] @ A.T + U[n_l:] @ B.T + Rf @ L.T
        elif self.mode == MODE_RELATIVE and self.n_edges:
            Ee = E[n_l:]
            dU = U[self.edge_src] - U[self.edge_dst]
            dXe = X[self.edge_src] - X[self.edge_dst]
            dE[n_l:] = Ee @ A.T + dU @ B.T + ((Ee - dXe) @ C.T) @ L.T
        return np.concatenate([dX.reshape(-1), dE.reshape(-1)]), U

    def integrate(self, z0, xstar_half, ff_half, dt, n_steps, sample_every, method=0, blowup=1e9):
        """Fixed-step integration.

        ``xstar_half``/``ff_half`` hold leader references on the half-step
        grid ``t0 + k dt/2``, ``k = 0..2 n_steps``.  ``method`` 0 is RK4 and
        1 is forward Euler.  Returns ``(Z, U, status, fail_step)`` with one
        row per sample (every ``sample_every`` steps plus the final step).
        """
        z = np.array(z0, dtype=float)
        n_samples = -(-n_steps // sample_every) + 1
        Z = np.empty((n_samples, self.nz))
        U = np.empty((n_samples, self.n, 3))
        s = 0
        h = float(dt)
        for k in range(n_steps):
            i0 = 2 * k
            k1, u = self.rhs(z, xstar_half[i0], ff_half[i0])
            if k % sample_every == 0:
                Z[s] = z
                U[s] = u
                s += 1
            if method == 0:
                k2, _ = self.rhs(z + 0.5 * h * k1, xstar_half[i0 + 1], ff_half[i0 + 1])
                k3, _ = self.rhs(z + 0.5 * h * k2, xstar_half[i0 + 1], ff_half[i0 + 1])
                k4, _ = self.rhs(z + h * k3, xstar_half[i0 + 2], ff_half[i0 + 2])
                z = z + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            else:
                z = z + h * k1
            if not np.all(np.isfinite(z)) or np.max(np.abs(z)) > blowup:
                return Z[:s], U[:s], STATUS_BLOWUP, k + 1
        _, u = self.rhs(z, xstar_half[2 * n_steps], ff_half[2 * n_steps])
        Z[s] = z
        U[s] = u
        return Z, U, STATUS_OK, n_steps
