"""Plant matrices and controller/observer gain synthesis.

The two matrix inequalities the controllers need,

    A P + P A' - 2 B B' < 0        (feedback gain K = -B' inv(P))
    A'H + H A - 2 C'C < 0          (observer gain L = -inv(H) C')

are solved through algebraic Riccati equations: if X > 0 solves
``A'X + XA - 2 X B B' X + Q = 0`` with ``Q > 0`` then ``P = inv(X)`` gives
``AP + PA' - 2BB' = -P Q P < 0``; the observer side is the dual.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .errors import DefectiveW, NotDetectable, NotLocalizable, RiccatiDiverged, UnstablePole
from .formation import FollowerMatrixSet, is_nonsingular

VARIANTS = ("omega-bar", "omega-hat", "relative", "state-feedback")
COUPLING_MATRIX = {
    "omega-bar": "omega-bar",
    "omega-hat": "omega-hat",
    "relative": "omega-bar",
    "state-feedback": "omega-bar",
}
DEFAULT_MARGIN = 1.1
DEFECTIVE_COND = 1e8
HURWITZ_TOL = 1e-6


@dataclass(frozen=True)
class PlantMatrices:
    m: int
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray

    @property
    def dim(self) -> int:
        return 3 * self.m

    @property
    def q(self) -> int:
        return self.C.shape[0]


def chain_matrix(m: int) -> np.ndarray:
    return np.eye(m, k=1)


def output_matrix(m: int, orders=(0,)) -> np.ndarray:
    """Output that measures the listed derivative orders (0 is position)."""
    rows = []
    for k in orders:
        if not 0 <= k < m:
            raise ValueError(f"output order {k} outside 0..{m - 1}")
        rows.append(np.kron(np.eye(m)[[k]], np.eye(3)))
    return np.vstack(rows)


def is_detectable(A, C, tol=1e-9) -> bool:
    """PBH test on every eigenvalue with nonnegative real part."""
    n = A.shape[0]
    for lam in np.linalg.eigvals(A):
        if lam.real < -tol:
            continue
        M = np.vstack([lam * np.eye(n) - A, C])
        if np.linalg.matrix_rank(M, tol=tol * max(1.0, np.abs(M).max())) < n:
            return False
    return True


def build_plant(m: int, C=None, orders=None) -> PlantMatrices:
    """Integrator-chain plant ``p^(m) = u`` in 3-D with output ``y = C x``.

    ``C`` may be given explicitly or through ``orders``, the derivative orders
    that are measured.  The default measures position only.
    """
    if m < 1:
        raise ValueError("integrator order m must be at least 1")
    A = np.kron(chain_matrix(m), np.eye(3))
    B = np.kron(np.eye(m)[:, [m - 1]], np.eye(3))
    if C is None:
        C = output_matrix(m, (0,) if orders is None else tuple(orders))
    C = np.atleast_2d(np.asarray(C, dtype=float))
    if C.shape[1] != 3 * m:
        raise ValueError(f"C must have {3 * m} columns, got {C.shape[1]}")
    if not is_detectable(A, C):
        raise NotDetectable("(A, C) is not detectable; the observer inequality has no solution")
    return PlantMatrices(m, A, B, C)


def design_beta(poles) -> np.ndarray:
    """Gain ``beta`` placing the companion matrix ``W1`` at ``poles``.

    ``prod(s - p_k) = s^m - beta_{m-1} s^{m-1} - ... - beta_0``.
    """
    poles = np.atleast_1d(np.asarray(poles, dtype=complex))
    if np.any(poles.real >= 0):
        raise UnstablePole(f"poles must have negative real part: {poles}")
    coeffs = np.poly(poles)                       # [1, c_1, ..., c_m]
    if np.max(np.abs(coeffs.imag)) > 1e-9 * np.max(np.abs(coeffs)):
        raise UnstablePole("complex poles must come in conjugate pairs")
    return -coeffs.real[1:][::-1].copy()


def companion(beta) -> tuple[np.ndarray, np.ndarray]:
    """Leader error-system blocks ``W1`` and ``W2`` for gain ``beta``."""
    beta = np.asarray(beta, dtype=float)
    m = beta.size
    W1 = np.eye(m, k=1)
    W1[-1] = beta
    W2 = np.zeros((m, m))
    W2[-1] = beta
    return W1, W2


def riccati_residual(A, B, Q, R, X) -> np.ndarray:
    return A.T @ X + X @ A - X @ B @ np.linalg.solve(R, B.T) @ X + Q


def solve_care(A, B, Q, R, tol=1e-10, max_iter=100, accept=1e-8) -> np.ndarray:
    """Stabilizing solution of ``A'X + XA - X B inv(R) B' X + Q = 0``.

    Ordered real Schur form of the Hamiltonian gives the initial solution;
    Newton-Kleinman iterations polish it until the relative residual drops
    below ``tol``.
    """
    A, B, Q, R = (np.atleast_2d(np.asarray(M, dtype=float)) for M in (A, B, Q, R))
    n = A.shape[0]
    G = B @ np.linalg.solve(R, B.T)
    ham = np.block([[A, -G], [-Q, -A.T]])
    _, Z, sdim = sla.schur(ham, output="real", sort="lhp")
    if sdim != n:
        raise RiccatiDiverged(f"Hamiltonian has {sdim} stable eigenvalues, expected {n}")
    U11, U21 = Z[:n, :n], Z[n:, :n]
    if not is_nonsingular(U11, 1e-12):
        raise RiccatiDiverged("stable invariant subspace is not a graph; no stabilizing solution")
    X = np.linalg.solve(U11.T, U21.T).T
    X = 0.5 * (X + X.T)

    def rel_residual(X):
        return np.linalg.norm(riccati_residual(A, B, Q, R, X)) / max(1.0, np.linalg.norm(X))

    for _ in range(max_iter):
        if rel_residual(X) <= tol:
            break
        K = np.linalg.solve(R, B.T @ X)
        Ak = A - B @ K
        X_new = sla.solve_continuous_lyapunov(Ak.T, -(Q + K.T @ R @ K))
        X_new = 0.5 * (X_new + X_new.T)
        if not np.all(np.isfinite(X_new)):
            raise RiccatiDiverged("Newton refinement produced non-finite values")
        X = X_new
    if rel_residual(X) > accept:
        raise RiccatiDiverged(f"Riccati residual {rel_residual(X):.3e} above {accept:.0e}")
    return X


def lmi_weights(m: int, bandwidth: float = 1.0) -> tuple[np.ndarray, np.ndarray]:
    """Riccati weights for the feedback and observer equations.

    ``bandwidth`` scales every closed-loop pole of ``A + BK`` and ``A + LC``
    (position output) by the same factor; 1 gives identity weights.
    """
    w = float(bandwidth)
    if not w > 0:
        raise ValueError("bandwidth must be positive")
    state = np.diag([w ** (2 * (m - k)) for k in range(m)])
    observer = np.diag([w ** (2 * (k + 1)) for k in range(m)])
    return np.kron(state, np.eye(3)), np.kron(observer, np.eye(3))


def axis_block(M, tol=0.0):
    """``Ma`` with ``M == kron(Ma, I3)`` (to ``tol``), or ``None``."""
    M = np.asarray(M, dtype=float)
    if M.shape[0] % 3 or M.shape[1] % 3:
        return None
    Ma = M[::3, ::3]
    if np.max(np.abs(np.kron(Ma, np.eye(3)) - M), initial=0.0) <= tol * max(1.0, np.max(np.abs(M))):
        return Ma
    return None


def _solve_care_3d(A, B, Q):
    """Riccati solution with ``R = I/2``, solved per axis when everything is ``kron(., I3)``.

    Working per axis keeps the Kronecker structure of the gains exact.
    """
    blocks = [axis_block(M) for M in (A, B, Q)]
    if all(b is not None for b in blocks):
        Aa, Ba, Qa = blocks
        Xa = solve_care(Aa, Ba, Qa, 0.5 * np.eye(Ba.shape[1]))
        return np.kron(Xa, np.eye(3))
    return solve_care(A, B, Q, 0.5 * np.eye(B.shape[1]))


def _sym_inv(X):
    Xa = axis_block(X)
    return np.linalg.inv(X) if Xa is None else np.kron(np.linalg.inv(Xa), np.eye(3))


def _feedback_gains(plant: PlantMatrices, P, H):
    """``K = -B' inv(P)`` and ``L = -inv(H) C'``, per axis when possible."""
    blocks = [axis_block(M) for M in (plant.B, plant.C, P, H)]
    if all(b is not None for b in blocks):
        Ba, Ca, Pa, Ha = blocks
        I3 = np.eye(3)
        return np.kron(-Ba.T @ np.linalg.inv(Pa), I3), np.kron(-np.linalg.solve(Ha, Ca.T), I3)
    return -plant.B.T @ np.linalg.inv(P), -np.linalg.solve(H, plant.C.T)


def solve_state_lmi(plant: PlantMatrices, weight=None) -> np.ndarray:
    """``P > 0`` with ``AP + PA' - 2BB' < 0``."""
    Q = np.eye(plant.dim) if weight is None else weight
    P = _sym_inv(_solve_care_3d(plant.A, plant.B, Q))
    return 0.5 * (P + P.T)


def solve_output_lmi(plant: PlantMatrices, weight=None) -> np.ndarray:
    """``H > 0`` with ``A'H + HA - 2C'C < 0``."""
    if not is_detectable(plant.A, plant.C):
        raise NotDetectable("(A, C) is not detectable")
    Q = np.eye(plant.dim) if weight is None else weight
    H = _sym_inv(_solve_care_3d(plant.A.T, plant.C.T, Q))
    return 0.5 * (H + H.T)


def leader_error_matrix(beta, plant: PlantMatrices, L) -> np.ndarray:
    """Closed-loop matrix of the leader tracking and estimation errors."""
    W1, W2 = companion(beta)
    I3 = np.eye(3)
    top = np.hstack([np.kron(W1, I3), np.kron(W2, I3)])
    bottom = np.hstack([np.zeros((plant.dim, plant.dim)), plant.A + L @ plant.C])
    return np.vstack([top, bottom])


def _axis_reduction(W):
    """Return ``W_axis`` when ``W == kron(W_axis, I3)`` up to round-off, else ``None``."""
    return axis_block(W, 1e-12)


@dataclass(frozen=True)
class LeaderBound:
    gamma_u: float
    psi: float
    cond_M: float
    eigenvalues: np.ndarray
    distinct: bool


def psi_general(m: int, eigenvalues) -> float:
    """Transient bound on ``||exp(Jt)||`` for a possibly defective Jordan form."""
    d = 6 * m
    lam = eigenvalues[np.argmax(eigenvalues.real)]
    ratio = (d - 1) / (abs(lam) * math.e)
    return math.sqrt(d + 3 * m * (d - 1) * ratio ** (d - 1))


def compute_leader_bound(beta, plant: PlantMatrices, L, zeta: float, gamma_m: float,
                         distinct_rtol: float = 1e-6) -> LeaderBound:
    """Upper bound on leader input norms, ``4 psi zeta ||beta|| cond(M) + gamma_m``.

    ``M`` diagonalizes the leader error matrix ``W``.  When ``W`` has the
    per-axis Kronecker structure the eigenproblem is solved on the
    ``2m x 2m`` axis block, which has the same condition number.

    Raises
    ------
    DefectiveW
        If the eigenvector matrix is too ill-conditioned to be useful.
    """
    if zeta < 0 or gamma_m < 0:
        raise ValueError("zeta and gamma_m must be nonnegative")
    W = leader_error_matrix(beta, plant, L)
    Wa = _axis_reduction(W)
    target = W if Wa is None else Wa
    lam, M = np.linalg.eig(target)
    if np.max(lam.real) >= 0:
        raise DefectiveW("leader error matrix W is not Hurwitz")
    cond = float(np.linalg.cond(M))
    if not math.isfinite(cond) or cond > DEFECTIVE_COND:
        raise DefectiveW(f"eigenvector matrix of W has condition number {cond:.3e}")
    gaps = np.abs(lam[:, None] - lam[None, :])
    np.fill_diagonal(gaps, np.inf)
    distinct = bool(np.min(gaps) > distinct_rtol * np.max(np.abs(lam)))
    psi = 1.0 if distinct else psi_general(plant.m, lam)
    gamma_u = 4.0 * psi * zeta * np.linalg.norm(beta) * cond + gamma_m
    return LeaderBound(float(gamma_u), psi, cond, lam, distinct)


@dataclass(frozen=True)
class CouplingGains:
    c1: float
    c2: float
    sigma: float
    lambda_min: float


def select_coupling_gains(mats: FollowerMatrixSet, gamma_u: float, n_l: int,
                          variant: str = "omega-hat", margin: float = DEFAULT_MARGIN) -> CouplingGains:
    if variant not in VARIANTS:
        raise ValueError(f"unknown follower variant {variant!r}; expected one of {VARIANTS}")
    if not is_nonsingular(mats.omega_ff):
        raise NotLocalizable("coupling gains need a localizable formation")
    sigma = float(np.max(np.abs(mats.sigma)))
    lam_min = float(np.linalg.eigvalsh(mats.omega_ff.T @ mats.omega_ff)[0])
    c1 = margin * (max(1.0, 1.0 / lam_min) if variant == "omega-hat" else 1.0)
    c2 = margin * n_l * sigma * gamma_u
    return CouplingGains(c1, c2, sigma, lam_min)


def spectral_abscissa(M) -> float:
    return float(np.max(np.linalg.eigvals(M).real))


@dataclass(frozen=True)
class GainSet:
    plant: PlantMatrices
    poles: np.ndarray
    beta: np.ndarray
    P: np.ndarray
    H: np.ndarray
    K: np.ndarray
    L: np.ndarray
    c1: float
    c2: float
    sigma: float
    lambda_min: float
    gamma_u: float
    gamma_m: float
    psi: float
    zeta: float
    cond_M: float
    W_eigenvalues: np.ndarray
    variant: str
    margin: float
    bandwidth: float
    c2_required: float = 0.0
    notes: tuple[str, ...] = field(default=())

    @property
    def W1(self):
        return companion(self.beta)[0]

    @property
    def W2(self):
        return companion(self.beta)[1]

    @property
    def W(self):
        return leader_error_matrix(self.beta, self.plant, self.L)

    @property
    def beta_row(self) -> np.ndarray:
        """``(beta kron I3)'`` as a ``3 x 3m`` matrix."""
        return np.kron(self.beta[None, :], np.eye(3))

    def certificates(self) -> dict[str, dict]:
        A, B, C = self.plant.A, self.plant.B, self.plant.C
        lmi_obs = A.T @ self.H + self.H @ A - 2 * C.T @ C
        lmi_state = A @ self.P + self.P @ A.T - 2 * B @ B.T
        checks = {
            "W1 Hurwitz": spectral_abscissa(self.W1),
            "A+LC Hurwitz": spectral_abscissa(A + self.L @ C),
            "A+BK Hurwitz": spectral_abscissa(A + B @ self.K),
            "W Hurwitz": spectral_abscissa(self.W),
            "observer LMI": float(np.linalg.eigvalsh(0.5 * (lmi_obs + lmi_obs.T))[-1]),
            "state LMI": float(np.linalg.eigvalsh(0.5 * (lmi_state + lmi_state.T))[-1]),
            "H positive definite": -float(np.linalg.eigvalsh(self.H)[0]),
            "P positive definite": -float(np.linalg.eigvalsh(self.P)[0]),
        }
        out = {}
        for name, value in checks.items():
            limit = -HURWITZ_TOL if "Hurwitz" in name else 0.0
            out[name] = {"value": value, "limit": limit, "pass": bool(value < limit)}
        out["c1 > 1"] = {"value": self.c1, "limit": 1.0, "pass": self.c1 > 1.0}
        if self.variant == "omega-hat":
            prod = self.c1 * self.lambda_min
            out["c1 * lambda_min > 1"] = {"value": prod, "limit": 1.0, "pass": prod > 1.0}
        need = self.c2_required
        out["c2 >= n_l sigma gamma_u"] = {"value": self.c2, "limit": need, "pass": self.c2 >= need}
        return out

    def all_pass(self) -> bool:
        return all(c["pass"] for c in self.certificates().values())


def synthesize(mats: FollowerMatrixSet, plant: PlantMatrices, poles=None, zeta: float = 0.0,
               gamma_m: float = 0.0, variant: str = "omega-hat", margin: float = DEFAULT_MARGIN,
               bandwidth: float = 1.0, retries: int = 3) -> GainSet:
    """Full gain design for one scenario.

    If the leader error matrix turns out defective, the poles are spread by
    5% per attempt and the design repeated up to ``retries`` times.
    """
    m = plant.m
    poles = -np.arange(1.0, m + 1.0) if poles is None else np.asarray(poles, dtype=float)
    if poles.size != m:
        raise ValueError(f"need {m} poles, got {poles.size}")
    Qs, Qo = lmi_weights(m, bandwidth)
    P = solve_state_lmi(plant, Qs)
    H = solve_output_lmi(plant, Qo)
    K, L = _feedback_gains(plant, P, H)
    notes = []
    used = poles
    for attempt in range(retries + 1):
        beta = design_beta(used)
        try:
            bound = compute_leader_bound(beta, plant, L, zeta, gamma_m)
            break
        except DefectiveW:
            if attempt == retries:
                raise
            used = poles * (1.0 + 0.05 * (attempt + 1) * np.arange(1, m + 1))
            notes.append(f"W defective; poles spread to {used.tolist()}")
    coupling = select_coupling_gains(mats, bound.gamma_u, mats.n_l, variant, margin)
    return GainSet(
        plant=plant, poles=used, beta=beta, P=P, H=H, K=K, L=L,
        c1=coupling.c1, c2=coupling.c2, sigma=coupling.sigma, lambda_min=coupling.lambda_min,
        gamma_u=bound.gamma_u, gamma_m=gamma_m, psi=bound.psi, zeta=zeta, cond_M=bound.cond_M,
        W_eigenvalues=bound.eigenvalues, variant=variant, margin=margin, bandwidth=bandwidth,
        c2_required=mats.n_l * coupling.sigma * bound.gamma_u, notes=tuple(notes),
    )
