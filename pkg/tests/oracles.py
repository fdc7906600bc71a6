"""Reference computations that share no code with the package."""
from fractions import Fraction

import numpy as np
import scipy.linalg


def exact_nullspace(rows):
    """Null space of a rational matrix by Gauss-Jordan elimination over Fractions."""
    M = [[Fraction(v) for v in r] for r in rows]
    n_rows, n_cols = len(M), len(M[0])
    pivots = []
    r = 0
    for c in range(n_cols):
        p = next((i for i in range(r, n_rows) if M[i][c] != 0), None)
        if p is None:
            continue
        M[r], M[p] = M[p], M[r]
        piv = M[r][c]
        M[r] = [v / piv for v in M[r]]
        for i in range(n_rows):
            if i != r and M[i][c] != 0:
                f = M[i][c]
                M[i] = [a - f * b for a, b in zip(M[i], M[r])]
        pivots.append(c)
        r += 1
        if r == n_rows:
            break
    free = [c for c in range(n_cols) if c not in pivots]
    basis = []
    for fc in free:
        v = [Fraction(0)] * n_cols
        v[fc] = Fraction(1)
        for row, pc in enumerate(pivots):
            v[pc] = -M[row][fc]
        basis.append(v)
    return basis


def exact_weights(agent, neighbors):
    """Displacement weights with the largest-magnitude (first on ties) weight set to +1."""
    edges = [[Fraction(a) - Fraction(b) for a, b in zip(agent, nb)] for nb in neighbors]
    # rows: coordinates, columns: edges
    basis = exact_nullspace([[e[d] for e in edges] for d in range(3)])
    assert len(basis) == 1, "weights not unique"
    w = basis[0]
    big = max(abs(v) for v in w)
    k = next(i for i, v in enumerate(w) if abs(v) == big)
    return [v / w[k] for v in w]


def exact_follower_matrix(positions, n_l, neighbors, scales=None):
    scales = scales or {}
    n = len(positions)
    out = [[Fraction(0)] * n for _ in range(n - n_l)]
    for i in range(n_l, n):
        nb = neighbors[i]
        w = exact_weights(positions[i], [positions[j] for j in nb])
        s = Fraction(scales.get(i, 1))
        w = [s * v for v in w]
        for j, wj in zip(nb, w):
            out[i - n_l][j] = -wj
        out[i - n_l][i] = sum(w)
    return out


def qr_rank(M, rtol=1e-9):
    """Numerical rank from a column-pivoted QR (an SVD-free rank test)."""
    _, R, _ = scipy.linalg.qr(np.asarray(M, dtype=float), pivoting=True)
    d = np.abs(np.diag(R))
    return int(np.sum(d > rtol * d[0])) if d.size and d[0] > 0 else 0


def chain_error_propagator(beta, t):
    """``exp((W1 kron I3) t)`` for the companion matrix with last row ``beta``."""
    m = len(beta)
    W1 = np.zeros((m, m))
    W1[:-1, 1:] = np.eye(m - 1)
    W1[-1] = beta
    return np.kron(scipy.linalg.expm(W1 * t), np.eye(3))
