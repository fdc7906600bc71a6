"""Displacement constraints and follower matrices.

Agents are indexed from 0.  Leaders occupy ``0 .. n_l-1`` and followers
``n_l .. n-1``.  A follower matrix has one row per follower and one column
per agent; row ``k`` belongs to agent ``n_l + k``.
"""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    CollocatedAgents,
    DegenerateGeometry,
    IndexOutOfRange,
    MissingConstraint,
    NotLocalizable,
    NullSpaceEmpty,
    ValidationError,
)

RANK_RTOL = 1e-9
LOCALIZABLE_RTOL = 1e-9


@dataclass(frozen=True)
class NominalFormation:
    """Nominal positions plus the neighbor list used by each follower.

    ``neighbors`` maps a follower index to the ordered tuple of agents its
    displacement constraint is built from.  ``scales`` optionally rescales a
    follower's normalized weight vector (weights are only defined up to a
    nonzero factor).
    """

    positions: np.ndarray
    n_l: int
    neighbors: dict[int, tuple[int, ...]]
    scales: dict[int, float] = field(default_factory=dict)

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=float)
        if pos.ndim != 2 or pos.shape[1] != 3:
            raise ValidationError(f"positions must be an (n, 3) array, got shape {pos.shape}")
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "neighbors", {int(k): tuple(int(j) for j in v)
                                               for k, v in self.neighbors.items()})
        object.__setattr__(self, "scales", {int(k): float(v) for k, v in self.scales.items()})
        self.validate()

    @property
    def n(self) -> int:
        return self.positions.shape[0]

    @property
    def n_f(self) -> int:
        return self.n - self.n_l

    @property
    def followers(self) -> range:
        return range(self.n_l, self.n)

    @property
    def r_l(self) -> np.ndarray:
        return self.positions[: self.n_l]

    @property
    def r_f(self) -> np.ndarray:
        return self.positions[self.n_l:]

    def affine_dimension(self) -> int:
        """Dimension of the affine hull of the nominal positions (0 to 3)."""
        centered = self.positions - self.positions.mean(axis=0)
        s = np.linalg.svd(centered, compute_uv=False)
        return int(np.sum(s > RANK_RTOL * max(s[0], 1.0)))

    def is_planar(self) -> bool:
        return self.affine_dimension() <= 2

    def validate(self):
        n, n_l = self.n, self.n_l
        if self.n_f < 1:
            raise ValidationError("formation needs at least one follower")
        d = self.affine_dimension()
        min_leaders = max(d, 1) + 1
        if n_l < min_leaders:
            kind = {1: "colinear", 2: "planar"}.get(d, "3-D")
            raise ValidationError(f"{kind} formation needs at least {min_leaders} leaders, got {n_l}")
        diff = self.positions[:, None, :] - self.positions[None, :, :]
        dist = np.linalg.norm(diff, axis=-1)
        scale = max(dist.max(), 1.0)
        iu = np.triu_indices(n, 1)
        close = dist[iu] <= 1e-12 * scale
        if close.any():
            k = int(np.argmax(close))
            raise ValidationError(f"agents {iu[0][k]} and {iu[1][k]} are collocated")
        for i, nbrs in self.neighbors.items():
            if not n_l <= i < n:
                raise ValidationError(f"constraint given for agent {i}, which is not a follower")
            if not 2 <= len(nbrs) <= 4:
                raise ValidationError(f"follower {i} lists {len(nbrs)} neighbors; expected 2 to 4")
            if len(set(nbrs)) != len(nbrs):
                raise ValidationError(f"follower {i} lists a neighbor twice")
            for j in nbrs:
                if not 0 <= j < n:
                    raise ValidationError(f"follower {i} references agent {j} outside 0..{n - 1}")
                if j == i:
                    raise ValidationError(f"follower {i} lists itself as a neighbor")
        for i, s in self.scales.items():
            if not np.isfinite(s) or s == 0.0:
                raise ValidationError(f"weight scale for follower {i} must be finite and nonzero")


@dataclass(frozen=True)
class DisplacementConstraint:
    agent: int
    neighbors: tuple[int, ...]
    weights: np.ndarray

    def residual(self, positions) -> np.ndarray:
        """``sum_j w_ij (r_i - r_j)``; zero for a valid constraint."""
        positions = np.asarray(positions, dtype=float)
        edges = positions[self.agent] - positions[list(self.neighbors)]
        return self.weights @ edges


@dataclass(frozen=True)
class Localizability:
    localizable: bool
    sigma_min: float
    sigma_max: float
    residual: float | None = None

    def __bool__(self):
        return self.localizable


@dataclass(frozen=True)
class FollowerMatrixSet:
    omega_f: np.ndarray
    n_l: int
    omega_bar: np.ndarray | None = None
    omega_hat: np.ndarray | None = None
    localizable: bool | None = None

    @property
    def n_f(self) -> int:
        return self.omega_f.shape[0]

    @property
    def n(self) -> int:
        return self.omega_f.shape[1]

    @property
    def omega_fl(self) -> np.ndarray:
        return self.omega_f[:, : self.n_l]

    @property
    def omega_ff(self) -> np.ndarray:
        return self.omega_f[:, self.n_l:]

    @property
    def sigma(self) -> np.ndarray:
        """``inv(Omega_ff) @ Omega_fl``; followers sit at ``-sigma @ leaders``."""
        if not is_nonsingular(self.omega_ff):
            raise NotLocalizable("follower block of the follower matrix is singular")
        return np.linalg.solve(self.omega_ff, self.omega_fl)

    def variant(self, name: str) -> np.ndarray:
        """Return the matrix named ``omega``, ``omega-bar`` or ``omega-hat``."""
        table = {"omega": self.omega_f, "omega-bar": self.omega_bar, "omega-hat": self.omega_hat}
        try:
            mat = table[name]
        except KeyError:
            raise ValueError(f"unknown follower matrix {name!r}") from None
        if mat is None:
            raise NotLocalizable(f"{name} is not available; call derive_variants first")
        return mat


def is_nonsingular(mat, rtol=LOCALIZABLE_RTOL) -> bool:
    s = np.linalg.svd(np.asarray(mat, dtype=float), compute_uv=False)
    return s.size > 0 and s[-1] > rtol * s[0]


def normalize_weights(w) -> np.ndarray:
    """Scale ``w`` so that its first largest-magnitude entry equals +1.

    Ties (within a relative 1e-9) go to the earliest entry, so symmetric
    geometries give the same sign regardless of SVD round-off.
    """
    w = np.asarray(w, dtype=float)
    mags = np.abs(w)
    k = int(np.flatnonzero(mags >= mags.max() * (1.0 - 1e-9))[0])
    return w / w[k]


def compute_displacement_parameters(agent_pos, neighbor_pos) -> np.ndarray:
    """Weights ``w`` with ``sum_j w_j (agent - neighbor_j) = 0``.

    The geometric case (colinear, coplanar or general) is read off the
    numerical rank of the edge matrix.  The weight vector spans its
    one-dimensional null space and is normalized by :func:`normalize_weights`.

    Raises
    ------
    NullSpaceEmpty
        The edges are linearly independent, so no constraint exists.
    DegenerateGeometry
        The null space has dimension above one, so the weights are not
        unique up to scale.
    """
    agent = np.asarray(agent_pos, dtype=float).reshape(3)
    nbrs = np.atleast_2d(np.asarray(neighbor_pos, dtype=float))
    k = nbrs.shape[0]
    if not 2 <= k <= 4:
        raise ValueError(f"need 2 to 4 neighbors, got {k}")
    edges = agent - nbrs                     # row j is e_ij
    lengths = np.linalg.norm(edges, axis=1)
    if np.any(lengths <= 1e-12 * max(lengths.max(), 1.0)):
        raise CollocatedAgents("agent is collocated with one of its neighbors")
    E = edges.T                              # 3 x k, columns are edges
    _, s, vt = np.linalg.svd(E)
    rank = int(np.sum(s > RANK_RTOL * s[0]))
    nullity = k - rank
    if nullity == 0:
        raise NullSpaceEmpty(f"{k} edges of rank {rank} admit no displacement constraint")
    if nullity > 1:
        raise DegenerateGeometry(f"null space of dimension {nullity}; weights not unique")
    return normalize_weights(vt[-1])


def build_constraints(formation: NominalFormation) -> list[DisplacementConstraint]:
    out = []
    for i in formation.followers:
        if i not in formation.neighbors:
            raise MissingConstraint(f"follower {i} has no displacement constraint")
        nbrs = formation.neighbors[i]
        w = compute_displacement_parameters(formation.positions[i], formation.positions[list(nbrs)])
        w = w * formation.scales.get(i, 1.0)
        out.append(DisplacementConstraint(i, nbrs, w))
    return out


def assemble_follower_matrix(formation: NominalFormation,
                             constraints: list[DisplacementConstraint]) -> FollowerMatrixSet:
    by_agent = {c.agent: c for c in constraints}
    omega = np.zeros((formation.n_f, formation.n))
    for row, i in enumerate(formation.followers):
        c = by_agent.get(i)
        if c is None:
            raise MissingConstraint(f"follower {i} has no displacement constraint")
        for j, w in zip(c.neighbors, c.weights):
            omega[row, j] = -w
        omega[row, i] = math.fsum(c.weights)
    return FollowerMatrixSet(omega_f=omega, n_l=formation.n_l)


def check_localizable(mats: FollowerMatrixSet, formation: NominalFormation | None = None) -> Localizability:
    """Certify that the follower block is nonsingular.

    When it is and ``formation`` is given, the residual of reconstructing the
    nominal followers from the nominal leaders is recorded too.
    """
    s = np.linalg.svd(mats.omega_ff, compute_uv=False)
    ok = bool(s[-1] > LOCALIZABLE_RTOL * s[0])
    residual = None
    if ok and formation is not None:
        recon = -np.linalg.solve(mats.omega_ff, mats.omega_fl) @ formation.r_l
        residual = float(np.linalg.norm(recon - formation.r_f))
    return Localizability(ok, float(s[-1]), float(s[0]), residual)


def derive_variants(mats: FollowerMatrixSet) -> FollowerMatrixSet:
    if not is_nonsingular(mats.omega_ff):
        raise NotLocalizable("cannot derive variants: follower block is singular")
    omega_ff = mats.omega_ff
    omega_bar = np.linalg.solve(omega_ff, mats.omega_f)
    # the follower block is the identity by construction; set it exactly
    omega_bar[:, mats.n_l:] = np.eye(mats.n_f)
    omega_hat = omega_ff.T @ mats.omega_f
    return dataclasses.replace(mats, omega_bar=omega_bar, omega_hat=omega_hat, localizable=True)


def edge_weights(matrix, follower: int) -> dict[int, float]:
    """Neighbor weights ``{j: w_ij}`` of agent ``follower`` read from a follower matrix."""
    matrix = np.asarray(matrix, dtype=float)
    n_f, n = matrix.shape
    n_l = n - n_f
    if not n_l <= follower < n:
        raise IndexOutOfRange(f"agent {follower} is not a follower (followers are {n_l}..{n - 1})")
    row = matrix[follower - n_l]
    return {j: -float(row[j]) for j in range(n) if j != follower and row[j] != 0.0}


def matrix_from_edge_weights(weights: dict[int, dict[int, float]], n_l: int, n: int) -> np.ndarray:
    """Inverse of :func:`edge_weights` over all followers."""
    out = np.zeros((n - n_l, n))
    for i, row in weights.items():
        for j, w in row.items():
            out[i - n_l, j] = -w
        out[i - n_l, i] = math.fsum(row.values())
    return out


def build_follower_matrices(formation: NominalFormation) -> tuple[FollowerMatrixSet, Localizability]:
    """Constraints, assembly, certification and variants in one call."""
    mats = assemble_follower_matrix(formation, build_constraints(formation))
    cert = check_localizable(mats, formation)
    if cert.localizable:
        mats = derive_variants(mats)
    else:
        mats = dataclasses.replace(mats, localizable=False)
    return mats, cert
