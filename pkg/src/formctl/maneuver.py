"""Time-varying maneuver parameters and the desired formation they induce.

A plan is a contiguous list of segments.  Inside a segment every parameter
(scale, rotation angle, translation, leader shape) is a :class:`Signal`, a
polynomial plus optional sinusoids, so derivatives of any order are exact.
Derivatives are propagated with truncated Taylor series ("jets"): arrays of
shape ``(T, K, ...)`` whose entry ``[:, k]`` is the k-th derivative divided
by ``k!``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial import polynomial as P

from .errors import TimeOutOfRange, ValidationError
from .formation import FollowerMatrixSet

BOUNDARY_RTOL = 1e-12

# smoothstep profiles on [0, 1], ascending coefficients
BLEND_PROFILES = {
    "step": [1.0],
    "linear": [0.0, 1.0],
    "cubic": [0.0, 0.0, 3.0, -2.0],
    "quintic": [0.0, 0.0, 0.0, 10.0, -15.0, 6.0],
    "septic": [0.0, 0.0, 0.0, 0.0, 35.0, -84.0, 70.0, -20.0],
}


@dataclass(frozen=True)
class Signal:
    """Scalar function ``poly(t - origin) + sum amp*sin(freq*(t - origin) + phase)``."""

    poly: tuple[float, ...] = (0.0,)
    sines: tuple[tuple[float, float, float], ...] = ()
    origin: float = 0.0

    def __post_init__(self):
        poly = tuple(float(c) for c in np.atleast_1d(self.poly))
        sines = tuple(tuple(float(v) for v in s) for s in self.sines)
        if not poly:
            poly = (0.0,)
        for s in sines:
            if len(s) != 3:
                raise ValidationError("sinusoid terms are [amplitude, frequency, phase]")
        if not all(math.isfinite(v) for v in poly + sum(sines, ()) + (self.origin,)):
            raise ValidationError("signal coefficients must be finite")
        object.__setattr__(self, "poly", poly)
        object.__setattr__(self, "sines", sines)
        object.__setattr__(self, "origin", float(self.origin))

    @classmethod
    def constant(cls, value):
        return cls((float(value),))

    @classmethod
    def blend(cls, start, end, t0, duration, profile="septic"):
        """Move from ``start`` to ``end`` over ``[t0, t0 + duration]``.

        ``septic`` keeps derivatives one to three zero at both ends.
        """
        try:
            base = BLEND_PROFILES[profile]
        except KeyError:
            raise ValidationError(f"unknown blend profile {profile!r}") from None
        if duration <= 0:
            raise ValidationError("blend duration must be positive")
        delta = float(end) - float(start)
        coeffs = [delta * c / duration**p for p, c in enumerate(base)]
        coeffs[0] += float(start)
        return cls(tuple(coeffs), (), t0)

    def __call__(self, t):
        return self.taylor(np.atleast_1d(np.asarray(t, dtype=float)), 0)[:, 0]

    def taylor(self, ts, order: int) -> np.ndarray:
        """Taylor coefficients ``f^(k)(t)/k!`` for ``k = 0..order``; shape ``(T, order+1)``."""
        tau = np.asarray(ts, dtype=float) - self.origin
        out = np.zeros((tau.size, order + 1))
        c = np.array(self.poly)
        for k in range(order + 1):
            if c.size:
                out[:, k] = P.polyval(tau, c) / math.factorial(k)
            c = P.polyder(c) if c.size > 1 else np.array([])
        for amp, freq, phase in self.sines:
            arg = freq * tau + phase
            for k in range(order + 1):
                out[:, k] += amp * freq**k * np.sin(arg + k * np.pi / 2) / math.factorial(k)
        return out


def jet_mul(a, b):
    """Cauchy product of two scalar jets of shape ``(T, K, ...)`` (broadcasting trailing axes)."""
    K = a.shape[1]
    out = np.zeros(np.broadcast_shapes(a.shape, b.shape))
    for k in range(K):
        for j in range(k + 1):
            out[:, k] += a[:, j] * b[:, k - j]
    return out


def jet_sincos(u):
    """Jets of ``sin(u)`` and ``cos(u)`` for a scalar jet ``u`` of shape ``(T, K)``."""
    s = np.zeros_like(u)
    c = np.zeros_like(u)
    s[:, 0] = np.sin(u[:, 0])
    c[:, 0] = np.cos(u[:, 0])
    for k in range(1, u.shape[1]):
        acc_s = np.zeros(u.shape[0])
        acc_c = np.zeros(u.shape[0])
        for j in range(1, k + 1):
            acc_s += j * u[:, j] * c[:, k - j]
            acc_c += j * u[:, j] * s[:, k - j]
        s[:, k] = acc_s / k
        c[:, k] = -acc_c / k
    return s, c


def skew(v):
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


@dataclass(frozen=True)
class Segment:
    """One maneuver interval ``[t_start, t_end)``.

    ``shape`` holds ``n_l x 3`` signals for the leader shape; ``None`` means
    the nominal leader positions.
    """

    t_start: float
    t_end: float
    scale: Signal = field(default_factory=lambda: Signal.constant(1.0))
    axis: tuple[float, float, float] = (0.0, 0.0, 1.0)
    angle: Signal = field(default_factory=lambda: Signal.constant(0.0))
    translation: tuple[Signal, Signal, Signal] = field(
        default_factory=lambda: (Signal.constant(0.0),) * 3)
    shape: tuple[tuple[Signal, Signal, Signal], ...] | None = None

    def __post_init__(self):
        if not (math.isfinite(self.t_start) and math.isfinite(self.t_end)) or self.t_end <= self.t_start:
            raise ValidationError(f"segment [{self.t_start}, {self.t_end}) is empty or not finite")
        axis = np.asarray(self.axis, dtype=float)
        norm = np.linalg.norm(axis)
        if axis.shape != (3,) or not norm > 0:
            raise ValidationError("rotation axis must be a nonzero 3-vector")
        object.__setattr__(self, "axis", tuple(axis / norm))
        if len(self.translation) != 3:
            raise ValidationError("translation needs one signal per axis")

    def shape_jets(self, ts, order, r_l) -> np.ndarray:
        if self.shape is None:
            out = np.zeros((len(ts), order + 1, r_l.shape[0], 3))
            out[:, 0] = r_l
            return out
        if len(self.shape) != r_l.shape[0]:
            raise ValidationError(f"segment shape lists {len(self.shape)} leaders, expected {r_l.shape[0]}")
        return np.stack([np.stack([sig.taylor(ts, order) for sig in row], axis=-1)
                         for row in self.shape], axis=2)

    def rotation_jets(self, ts, order) -> np.ndarray:
        theta = self.angle.taylor(ts, order)
        s, c = jet_sincos(theta)
        Kx = skew(self.axis)
        Kx2 = Kx @ Kx
        one_minus_c = -c
        one_minus_c[:, 0] += 1.0
        Q = s[:, :, None, None] * Kx + one_minus_c[:, :, None, None] * Kx2
        Q[:, 0] += np.eye(3)
        return Q

    def leader_jets(self, ts, order, r_l) -> np.ndarray:
        """Taylor jets of ``a Q g_i + b`` for every leader; shape ``(T, K, n_l, 3)``."""
        a = self.scale.taylor(ts, order)
        Q = self.rotation_jets(ts, order)
        g = self.shape_jets(ts, order, r_l)
        b = np.stack([sig.taylor(ts, order) for sig in self.translation], axis=-1)
        K = order + 1
        Qg = np.zeros_like(g)
        for k in range(K):
            for j in range(k + 1):
                Qg[:, k] += np.einsum("tab,tlb->tla", Q[:, j], g[:, k - j])
        p = jet_mul(a[:, :, None, None], Qg)
        return p + b[:, :, None, :]


@dataclass(frozen=True)
class ManeuverPlan:
    segments: tuple[Segment, ...]
    r_l: np.ndarray

    def __post_init__(self):
        segs = tuple(self.segments)
        if not segs:
            raise ValidationError("maneuver plan has no segments")
        for a, b in zip(segs, segs[1:]):
            if abs(a.t_end - b.t_start) > BOUNDARY_RTOL * max(1.0, abs(a.t_end)):
                raise ValidationError(
                    f"segments must be contiguous: one ends at {a.t_end}, next starts at {b.t_start}")
        r_l = np.asarray(self.r_l, dtype=float)
        object.__setattr__(self, "segments", segs)
        object.__setattr__(self, "r_l", r_l)
        for seg in segs:
            if seg.shape is not None and len(seg.shape) != r_l.shape[0]:
                raise ValidationError(
                    f"segment at t={seg.t_start} lists {len(seg.shape)} leader shapes, expected {r_l.shape[0]}")

    @property
    def n_l(self) -> int:
        return self.r_l.shape[0]

    @property
    def t_start(self) -> float:
        return self.segments[0].t_start

    @property
    def t_end(self) -> float:
        return self.segments[-1].t_end

    @property
    def boundaries(self) -> list[float]:
        return [s.t_start for s in self.segments] + [self.t_end]

    def segment_index(self, ts) -> np.ndarray:
        ts = np.atleast_1d(np.asarray(ts, dtype=float))
        tol = BOUNDARY_RTOL * max(1.0, abs(self.t_end))
        if np.any(ts < self.t_start - tol) or np.any(ts > self.t_end + tol):
            bad = ts[(ts < self.t_start - tol) | (ts > self.t_end + tol)][0]
            raise TimeOutOfRange(f"t={bad} outside plan horizon [{self.t_start}, {self.t_end}]")
        starts = np.array([s.t_start for s in self.segments[1:]])
        # a time within tol of a switch belongs to the later segment
        return np.searchsorted(starts, ts + tol, side="right")

    def leader_jets(self, ts, order: int) -> np.ndarray:
        ts = np.atleast_1d(np.asarray(ts, dtype=float))
        idx = self.segment_index(ts)
        out = np.zeros((ts.size, order + 1, self.n_l, 3))
        for k in np.unique(idx):
            sel = idx == k
            out[sel] = self.segments[k].leader_jets(ts[sel], order, self.r_l)
        return out

    def leader_derivatives(self, ts, order: int) -> np.ndarray:
        """``p*_i^(k)(t)`` for ``k = 0..order``; shape ``(T, order+1, n_l, 3)``."""
        jets = self.leader_jets(ts, order)
        fact = np.array([math.factorial(k) for k in range(order + 1)], dtype=float)
        return jets * fact[None, :, None, None]

    def leader_states(self, ts, m: int) -> tuple[np.ndarray, np.ndarray]:
        """Stacked reference states ``(T, n_l, 3m)`` and feedforward ``(T, n_l, 3)``."""
        d = self.leader_derivatives(ts, m)
        T = d.shape[0]
        x = np.transpose(d[:, :m], (0, 2, 1, 3)).reshape(T, self.n_l, 3 * m)
        return x, d[:, m]

    def shape_leaders(self, ts) -> np.ndarray:
        ts = np.atleast_1d(np.asarray(ts, dtype=float))
        idx = self.segment_index(ts)
        out = np.zeros((ts.size, self.n_l, 3))
        for k in np.unique(idx):
            sel = idx == k
            out[sel] = self.segments[k].shape_jets(ts[sel], 0, self.r_l)[:, 0]
        return out

    def parameters(self, t):
        """``(a, Q, b)`` at a single time."""
        k = int(self.segment_index(t)[0])
        seg = self.segments[k]
        ts = np.array([float(t)])
        a = seg.scale.taylor(ts, 0)[0, 0]
        Q = seg.rotation_jets(ts, 0)[0, 0]
        b = np.array([sig.taylor(ts, 0)[0, 0] for sig in seg.translation])
        return a, Q, b


@dataclass(frozen=True)
class ShapeSolution:
    g_l: np.ndarray
    g_f: np.ndarray

    @property
    def g(self) -> np.ndarray:
        return np.vstack([self.g_l, self.g_f])


@dataclass(frozen=True)
class DesiredState:
    """Reference derivatives ``p*, p*', ..., p*^(m)`` of one agent, shape ``(m+1, 3)``."""

    derivatives: np.ndarray

    @property
    def m(self) -> int:
        return self.derivatives.shape[0] - 1

    @property
    def x(self) -> np.ndarray:
        return self.derivatives[:-1].reshape(-1)

    @property
    def feedforward(self) -> np.ndarray:
        return self.derivatives[-1]


def solve_shape(g_l, mats: FollowerMatrixSet) -> np.ndarray:
    """Follower shape ``g_f = -(inv(Omega_ff) Omega_fl kron I3) g_l``.

    Accepts the leader shape stacked (``3 n_l``) or as rows (``n_l x 3``) and
    returns the follower shape in the same layout.
    """
    g_l = np.asarray(g_l, dtype=float)
    flat = g_l.ndim == 1
    rows = g_l.reshape(-1, 3)
    g_f = -mats.sigma @ rows
    return g_f.reshape(-1) if flat else g_f


def shape_solution(t, plan: ManeuverPlan, mats: FollowerMatrixSet) -> ShapeSolution:
    g_l = plan.shape_leaders([t])[0]
    return ShapeSolution(g_l, solve_shape(g_l, mats))


def desired_formation(t, plan: ManeuverPlan, mats: FollowerMatrixSet) -> np.ndarray:
    """``p*_i(t) = a(t) Q(t) g_i(t) + b(t)`` for all agents; shape ``(n, 3)``."""
    shape = shape_solution(t, plan, mats)
    a, Q, b = plan.parameters(t)
    return a * shape.g @ Q.T + b


def desired_leader_state(t, i: int, plan: ManeuverPlan, m: int) -> DesiredState:
    if not 0 <= i < plan.n_l:
        raise IndexError(f"leader index {i} outside 0..{plan.n_l - 1}")
    d = plan.leader_derivatives([t], m)[0, :, i]
    return DesiredState(d)


def desired_follower_state(t, plan: ManeuverPlan, mats: FollowerMatrixSet, m: int) -> np.ndarray:
    """Follower reference states ``x*_f = -(sigma kron I_3m) x*_l``; shape ``(n_f, 3m)``."""
    x_l, _ = plan.leader_states([t], m)
    return -mats.sigma @ x_l[0]


def derivative_bounds(plan: ManeuverPlan, m: int, horizon: tuple[float, float] | None = None,
                      samples_per_segment: int = 2001) -> np.ndarray:
    """Sampled sup of ``||p*_i^(k)||`` over leaders, ``k = 1..m``.

    Each segment is sampled on its closed interval with its own formulas, so
    switch discontinuities do not create spurious spikes.  The grid step is
    at most 1e-3 of the horizon.
    """
    t0, t1 = horizon if horizon is not None else (plan.t_start, plan.t_end)
    total = t1 - t0
    gamma = np.zeros(m)
    for seg in plan.segments:
        a, b = max(seg.t_start, t0), min(seg.t_end, t1)
        if b < a:
            continue
        count = max(samples_per_segment, int(np.ceil((b - a) / (1e-3 * total))) + 1)
        ts = np.linspace(a, b, count)
        jets = seg.leader_jets(ts, m, plan.r_l)
        for k in range(1, m + 1):
            norms = np.linalg.norm(jets[:, k] * math.factorial(k), axis=-1)
            gamma[k - 1] = max(gamma[k - 1], norms.max())
    return gamma
