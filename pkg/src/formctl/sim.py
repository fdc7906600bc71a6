"""Closed-loop simulation, tracking errors and runtime bound checks."""
from __future__ import annotations

import logging
import math
import time as _time
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import BoundViolated, NumericalBlowup, ValidationError, ZetaViolated
from .formation import FollowerMatrixSet, edge_weights
from .gains import COUPLING_MATRIX, GainSet
from .kernel import (ClosedLoop, MODE_ABSOLUTE, MODE_RELATIVE, MODE_STATE, STATUS_BLOWUP)
from .maneuver import ManeuverPlan

log = logging.getLogger(__name__)

INTEGRATORS = {"rk4": 0, "euler": 1}
# RK4 is stable on the negative real axis up to |h lambda| ~ 2.78, Euler up to 2
STABILITY_MARGIN = {"rk4": 2.0, "euler": 1.0}
MAX_DT = 1e-2
ESTIMATE_INIT = ("zero", "state", "reference")
TAIL_FRACTION = 0.2

MODES = {
    "omega-bar": MODE_ABSOLUTE,
    "omega-hat": MODE_ABSOLUTE,
    "relative": MODE_RELATIVE,
    "state-feedback": MODE_STATE,
}


@dataclass(frozen=True)
class SimConfig:
    """Integration and initialization settings.

    ``leader_error``, ``estimate_error`` and ``follower_error`` are radii of
    the balls the initial errors are drawn from (uniformly, using ``seed``).
    ``estimate_init`` picks the centre of the observer initialization: the
    origin, the agent's true state, or its reference state.

    When ``stiff_floor`` is set the sign boundary layer is widened to the
    smallest value for which the high-gain part of the follower law stays
    inside the integrator's stability region at step ``floor_dt``
    (defaults to ``dt``).
    """

    dt: float = 1e-3
    t_end: float | None = None
    epsilon: float = 1e-3
    integrator: str = "rk4"
    seed: int = 0
    assert_bounds: bool = False
    sample_every: int = 10
    estimate_init: str = "zero"
    leader_error: float = 0.0
    estimate_error: float = 0.0
    follower_error: float = 0.0
    stiff_floor: bool = True
    floor_dt: float | None = None
    blowup: float = 1e9

    def __post_init__(self):
        if not (self.dt > 0 and math.isfinite(self.dt)):
            raise ValidationError(f"dt must be positive, got {self.dt}")
        if self.dt > MAX_DT:
            raise ValidationError(f"dt = {self.dt} exceeds the stability guard {MAX_DT}")
        if self.integrator not in INTEGRATORS:
            raise ValidationError(f"integrator must be one of {sorted(INTEGRATORS)}")
        if self.estimate_init not in ESTIMATE_INIT:
            raise ValidationError(f"estimate_init must be one of {ESTIMATE_INIT}")
        if self.epsilon < 0:
            raise ValidationError("epsilon must be nonnegative")
        if self.sample_every < 1:
            raise ValidationError("sample_every must be at least 1")
        for name in ("leader_error", "estimate_error", "follower_error"):
            if getattr(self, name) < 0:
                raise ValidationError(f"{name} must be nonnegative")


@dataclass(frozen=True)
class InitialState:
    x: np.ndarray       # (n, 3m)
    eta: np.ndarray     # (n_obs, 3m)


@dataclass
class SimTrace:
    """Sampled closed-loop run.

    ``eta`` rows follow the kernel layout: one estimate per agent for the
    absolute-output variants, leader estimates followed by one estimate per
    edge (see ``edges``) for the relative-output variant, and leader
    estimates only for state feedback.
    """

    times: np.ndarray
    x: np.ndarray
    eta: np.ndarray
    u: np.ndarray
    xstar: np.ndarray
    leader_error: np.ndarray
    follower_error: np.ndarray
    n_l: int
    m: int
    variant: str
    epsilon: float
    epsilon_eff: float
    dt: float
    integrator: str
    backend: str
    edges: tuple[tuple[int, int], ...] = ()
    wall_time: float = 0.0

    @property
    def n(self) -> int:
        return self.x.shape[1]

    @property
    def n_f(self) -> int:
        return self.n - self.n_l

    @property
    def dim(self) -> int:
        return self.x.shape[2]

    def agent_estimate(self, i: int) -> np.ndarray | None:
        """Estimate series of agent ``i``, or ``None`` if it keeps no own estimate."""
        if i < self.n_l or self.variant in ("omega-bar", "omega-hat"):
            return self.eta[:, i]
        return None


def coupling_matrix(mats: FollowerMatrixSet, variant: str) -> np.ndarray:
    if variant == "omega-hat":
        return mats.variant("omega-hat")
    return mats.variant("omega-bar")


def follower_edges(mats: FollowerMatrixSet) -> list[tuple[int, int, float]]:
    """``(i, j, w_ij)`` for every nonzero follower weight of the coupling matrix used by relative outputs."""
    bar = mats.variant("omega-bar")
    out = []
    for i in range(mats.n_l, mats.n):
        for j, w in edge_weights(bar, i).items():
            out.append((i, j, w))
    return out


def effective_epsilon(gains: GainSet, Wc: np.ndarray, n_l: int, epsilon: float, dt: float,
                      integrator: str = "rk4") -> float:
    """Boundary layer wide enough for the fixed-step integrator.

    Inside the layer the follower gain is ``c1 + c2/eps`` along ``K B``,
    coupled through the follower block of the coupling matrix.  The layer is
    widened until ``h * (c1 + c2/eps) * ||KB|| * ||Wc_ff|| <= kappa``.
    """
    if Wc.shape[0] == 0 or gains.c2 == 0.0:
        return epsilon
    kb = float(np.linalg.norm(gains.K @ gains.plant.B, 2))
    rho = float(np.linalg.norm(Wc[:, n_l:], 2))
    kappa = STABILITY_MARGIN[integrator]
    denom = kappa - gains.c1 * kb * rho * dt
    if denom <= 0:
        raise ValidationError(
            f"dt = {dt} is too large for the linear follower gain c1 = {gains.c1:.3g}")
    return max(epsilon, gains.c2 * kb * rho * dt / denom)


def _ball(rng, radius, count, dim):
    if radius == 0.0 or count == 0:
        return np.zeros((count, dim))
    v = rng.standard_normal((count, dim))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    r = radius * rng.random(count) ** (1.0 / dim)
    return v * r[:, None]


def build_closed_loop(mats: FollowerMatrixSet | None, gains: GainSet, variant: str,
                      epsilon: float, n_l: int | None = None):
    """Kernel object plus the edge list it uses (relative variant only)."""
    plant = gains.plant
    mode = MODES[variant]
    edges: list[tuple[int, int, float]] = []
    if mats is None:
        Wc = np.zeros((0, n_l))
    else:
        n_l = mats.n_l
        Wc = coupling_matrix(mats, variant)
        if mode == MODE_RELATIVE:
            edges = follower_edges(mats)
    src = [e[0] for e in edges]
    dst = [e[1] for e in edges]
    w = [e[2] for e in edges]
    loop = ClosedLoop(plant.A, plant.B, plant.C, gains.L, gains.K, gains.beta_row, Wc, n_l, mode,
                      gains.c1, gains.c2, epsilon, src, dst, w)
    return loop, edges, Wc


def initial_state(loop, edges, mats: FollowerMatrixSet | None, plan: ManeuverPlan, m: int,
                  config: SimConfig) -> InitialState:
    rng = np.random.default_rng(config.seed)
    n_l, n, dim = loop.n_l, loop.n, loop.dim
    xs_l, _ = plan.leader_states([plan.t_start], m)
    xs_l = xs_l[0]
    xstar = xs_l if mats is None else np.vstack([xs_l, -mats.sigma @ xs_l])
    x = xstar.copy()
    x[:n_l] += _ball(rng, config.leader_error, n_l, dim)
    x[n_l:] += _ball(rng, config.follower_error, n - n_l, dim)
    if loop.mode == MODE_RELATIVE:
        src = np.array([e[0] for e in edges], dtype=int)
        dst = np.array([e[1] for e in edges], dtype=int)
        true_rows = np.vstack([x[:n_l], x[src] - x[dst]])
        ref_rows = np.vstack([xstar[:n_l], xstar[src] - xstar[dst]])
    elif loop.mode == MODE_STATE:
        true_rows, ref_rows = x[:n_l], xstar[:n_l]
    else:
        true_rows, ref_rows = x, xstar
    if config.estimate_init == "zero":
        eta = np.zeros_like(true_rows)
    else:
        centre = true_rows if config.estimate_init == "state" else ref_rows
        eta = centre + _ball(rng, config.estimate_error, centre.shape[0], dim)
    return InitialState(x, eta)


def check_zeta(init: InitialState, xstar_l: np.ndarray, zeta: float, n_l: int):
    """Raise :class:`ZetaViolated` if a leader starts outside the ``zeta`` ball."""
    tol = 1e-12 * max(1.0, zeta)
    e = np.linalg.norm(init.x[:n_l] - xstar_l, axis=1)
    e_eta = np.linalg.norm(init.eta[:n_l] - init.x[:n_l], axis=1)
    for i in range(n_l):
        if e[i] > zeta + tol or e_eta[i] > zeta + tol:
            raise ZetaViolated(
                f"leader {i} starts with |e| = {e[i]:.6g}, |e_eta| = {e_eta[i]:.6g} "
                f"outside zeta = {zeta:.6g}")


def _grid(plan: ManeuverPlan, config: SimConfig):
    t0 = plan.t_start
    t1 = plan.t_end if config.t_end is None else float(config.t_end)
    if t1 <= t0:
        raise ValidationError(f"t_end = {t1} must exceed the plan start {t0}")
    if t1 > plan.t_end + 1e-12:
        raise ValidationError(f"t_end = {t1} is past the plan horizon {plan.t_end}")
    span = t1 - t0
    n_steps = int(round(span / config.dt))
    if n_steps < 1 or abs(n_steps * config.dt - span) > 1e-9 * max(span, 1.0):
        raise ValidationError(f"horizon {span} is not a whole number of steps of {config.dt}")
    return t0, n_steps


def _follower_error(x, eta, n_l, sigma, mode):
    """Stacked consensus error ``z_f + (sigma kron I) z_l`` per sample.

    ``z`` joins state and own estimate for the absolute-output variants;
    the other variants carry no per-follower estimate and use the state.
    """
    if mode == MODE_ABSOLUTE:
        z = np.concatenate([x, eta], axis=2)
    else:
        z = x
    return z[:, n_l:] + np.einsum("fl,sld->sfd", sigma, z[:, :n_l])


def run_scenario(mats: FollowerMatrixSet | None, plan: ManeuverPlan, gains: GainSet,
                 config: SimConfig = SimConfig(), variant: str | None = None,
                 initial: InitialState | None = None, formation=None) -> SimTrace:
    """Integrate the closed loop over the plan horizon.

    ``mats=None`` simulates the leaders alone.  ``variant`` defaults to the
    one the gains were designed for; asking for another raises
    :class:`ValidationError`, since ``c1`` depends on it.

    Raises
    ------
    ZetaViolated
        ``assert_bounds`` is set and a leader starts outside the ``zeta`` ball.
    NumericalBlowup
        A state entry exceeds ``config.blowup``; the partial trace is attached.
    """
    variant = gains.variant if variant is None else variant
    if variant not in MODES:
        raise ValidationError(f"unknown variant {variant!r}")
    if COUPLING_MATRIX[variant] != COUPLING_MATRIX[gains.variant]:
        raise ValidationError(
            f"gains were synthesized for {gains.variant!r}, which uses a different coupling matrix")
    m = gains.plant.m
    n_l = plan.n_l
    if mats is not None and mats.n_l != n_l:
        raise ValidationError(f"plan has {n_l} leaders, follower matrix {mats.n_l}")
    t0, n_steps = _grid(plan, config)
    dt = config.dt

    probe, edges, Wc = build_closed_loop(mats, gains, variant, config.epsilon, n_l)
    eps_eff = config.epsilon
    if config.stiff_floor:
        eps_eff = effective_epsilon(gains, Wc, n_l, config.epsilon,
                                    config.floor_dt or dt, config.integrator)
    loop = probe if eps_eff == config.epsilon else build_closed_loop(mats, gains, variant, eps_eff, n_l)[0]
    if eps_eff > config.epsilon:
        log.info("sign boundary layer widened from %.3g to %.3g for dt = %.3g",
                 config.epsilon, eps_eff, dt)

    half = t0 + np.arange(2 * n_steps + 1) * (0.5 * dt)
    xs_half, ff_half = plan.leader_states(half, m)

    init = initial if initial is not None else initial_state(loop, edges, mats, plan, m, config)
    if init.x.shape != (loop.n, loop.dim) or init.eta.shape != (loop.n_obs, loop.dim):
        raise ValidationError("initial state does not match the closed-loop layout")
    if config.assert_bounds:
        check_zeta(init, xs_half[0], gains.zeta, n_l)
    z0 = np.concatenate([init.x.reshape(-1), init.eta.reshape(-1)])

    started = _time.perf_counter()
    Z, U, status, fail_step = loop.integrate(z0, xs_half, ff_half, dt, n_steps, config.sample_every,
                                             INTEGRATORS[config.integrator], config.blowup)
    wall = _time.perf_counter() - started

    steps = np.arange(0, n_steps, config.sample_every)
    steps = np.append(steps, n_steps) if status != STATUS_BLOWUP else steps[: Z.shape[0]]
    times = t0 + steps * dt
    nx = loop.n * loop.dim
    X = Z[:, :nx].reshape(-1, loop.n, loop.dim)
    E = Z[:, nx:].reshape(-1, loop.n_obs, loop.dim)
    xs_l = xs_half[2 * steps]
    sigma = mats.sigma if mats is not None else np.zeros((0, n_l))
    xstar = np.concatenate([xs_l, np.einsum("fl,sld->sfd", -sigma, xs_l)], axis=1)
    trace = SimTrace(
        times=times, x=X, eta=E, u=U, xstar=xstar,
        leader_error=X[:, :n_l] - xs_l,
        follower_error=_follower_error(X, E, n_l, sigma, loop.mode),
        n_l=n_l, m=m, variant=variant, epsilon=config.epsilon, epsilon_eff=eps_eff,
        dt=dt, integrator=config.integrator, backend=loop.backend,
        edges=tuple((e[0], e[1]) for e in edges), wall_time=wall,
    )
    if status == STATUS_BLOWUP:
        err = NumericalBlowup(f"state exceeded {config.blowup:g} at t = {t0 + fail_step * dt:.6g}")
        err.trace = trace
        raise err
    return trace


# ---------------------------------------------------------------- summaries

@dataclass(frozen=True)
class SegmentErrors:
    index: int
    t_start: float
    t_end: float
    tail_start: float
    tail_leader_max: float
    tail_follower_max: float
    terminal_leader: float
    terminal_follower: float
    tail_formation_max: float


@dataclass
class ErrorSummary:
    times: np.ndarray
    leader: np.ndarray          # (S, n_l) norms of x_i - x*_i
    follower: np.ndarray        # (S,) norm of the stacked consensus error
    formation: np.ndarray       # (S, n) position error against p*
    observer: np.ndarray        # (S, k) norms of eta_i - x_i where defined
    segments: list[SegmentErrors] = field(default_factory=list)

    def segment(self, t_start: float) -> SegmentErrors:
        for s in self.segments:
            if abs(s.t_start - t_start) < 1e-9:
                return s
        raise KeyError(f"no segment starts at t = {t_start}")


def tracking_errors(trace: SimTrace, plan: ManeuverPlan | None = None,
                    tail_fraction: float = TAIL_FRACTION) -> ErrorSummary:
    """Error norms per sample and per-segment tail statistics.

    A sample taken exactly on a segment boundary belongs to the later
    segment, so a segment's tail is ``[end - f*len, end)`` (closed at the
    plan end).
    """
    leader = np.linalg.norm(trace.leader_error, axis=2)
    follower = np.linalg.norm(trace.follower_error.reshape(len(trace.times), -1), axis=1)
    formation = np.linalg.norm(trace.x[:, :, :3] - trace.xstar[:, :, :3], axis=2)
    if trace.variant in ("omega-bar", "omega-hat"):
        observer = np.linalg.norm(trace.eta - trace.x, axis=2)
    else:
        observer = np.linalg.norm(trace.eta[:, : trace.n_l] - trace.x[:, : trace.n_l], axis=2)
    summary = ErrorSummary(trace.times, leader, follower, formation, observer)
    if plan is None:
        return summary
    t = trace.times
    last_t = t[-1]
    for k, seg in enumerate(plan.segments):
        a, b = seg.t_start, min(seg.t_end, last_t)
        if b <= a:
            continue
        tail = b - tail_fraction * (b - a)
        closed = b >= plan.t_end - 1e-12 or b == last_t
        sel = (t >= tail - 1e-12) & ((t <= b + 1e-12) if closed else (t < b - 1e-12))
        if not sel.any():
            continue
        idx = np.flatnonzero(sel)
        summary.segments.append(SegmentErrors(
            index=k, t_start=a, t_end=b, tail_start=tail,
            tail_leader_max=float(leader[idx].max()) if leader.size else 0.0,
            tail_follower_max=float(follower[idx].max()) if follower.size else 0.0,
            terminal_leader=float(leader[idx[-1]].max()) if leader.size else 0.0,
            terminal_follower=float(follower[idx[-1]]),
            tail_formation_max=float(formation[idx].max()),
        ))
    return summary


@dataclass(frozen=True)
class BoundReport:
    gamma_u: float
    sup_norm: np.ndarray        # per leader
    argmax_time: np.ndarray
    violations: tuple[tuple[float, int, float], ...]

    @property
    def slack(self) -> float:
        return float(self.gamma_u - self.sup_norm.max()) if self.sup_norm.size else self.gamma_u

    @property
    def ok(self) -> bool:
        return not self.violations


def _bound_report(norms, times, gamma_u, rtol=1e-9) -> BoundReport:
    limit = gamma_u * (1.0 + rtol) + rtol
    bad = np.argwhere(norms > limit)
    violations = tuple((float(times[s]), int(i), float(norms[s, i])) for s, i in bad)
    return BoundReport(gamma_u, norms.max(axis=0), times[norms.argmax(axis=0)], violations)


def verify_bounds(trace: SimTrace, gains: GainSet, raise_on_violation: bool = True,
                  rtol: float = 1e-9) -> BoundReport:
    """Check ``sup_t ||u_i(t)|| <= gamma_u`` for every leader.

    The bound presumes leaders start within ``zeta``; a violation is
    reported with that precondition named.
    """
    norms = np.linalg.norm(trace.u[:, : trace.n_l], axis=2)
    report = _bound_report(norms, trace.times, gains.gamma_u, rtol)
    violations = report.violations
    if violations and raise_on_violation:
        t, i, val = violations[0]
        raise BoundViolated(
            f"leader {i} input norm {val:.6g} exceeds gamma_u = {gains.gamma_u:.6g} at t = {t:.6g}; "
            f"the bound only holds for initial errors within zeta = {gains.zeta:g}",
            time=t, leader=i)
    return report


def _batch_plan(plan: ManeuverPlan, copies: int) -> ManeuverPlan:
    return ManeuverPlan(
        tuple(replace(s, shape=None if s.shape is None else s.shape * copies) for s in plan.segments),
        np.tile(plan.r_l, (copies, 1)),
    )


def leader_runs(plan: ManeuverPlan, gains: GainSet, run_ids, config: SimConfig = SimConfig(),
                zeta: float | None = None) -> SimTrace:
    """Leaders of independent runs integrated as one batch (leaders do not interact).

    Run ``k`` draws ``e_i(0)`` and ``e_eta_i(0)`` uniformly from the ``zeta``
    ball with a generator seeded by ``(config.seed, k)``, so results do not
    depend on how runs are grouped.
    """
    zeta = gains.zeta if zeta is None else zeta
    run_ids = list(run_ids)
    n_l, dim, m = plan.n_l, gains.plant.dim, gains.plant.m
    batch = _batch_plan(plan, len(run_ids))
    xs_l, _ = plan.leader_states([plan.t_start], m)
    xs = np.tile(xs_l[0], (len(run_ids), 1))
    e = np.empty_like(xs)
    e_eta = np.empty_like(xs)
    for r, k in enumerate(run_ids):
        rng = np.random.default_rng([config.seed, k])
        e[r * n_l:(r + 1) * n_l] = _ball(rng, zeta, n_l, dim)
        e_eta[r * n_l:(r + 1) * n_l] = _ball(rng, zeta, n_l, dim)
    x = xs + e
    init = InitialState(x, x + e_eta)
    return run_scenario(None, batch, gains, replace(config, sample_every=1), initial=init)


def _runs_chunk(args):
    plan, gains, ids, config, zeta = args
    tr = leader_runs(plan, gains, ids, config, zeta)
    return np.linalg.norm(tr.u, axis=2), tr.times


def leader_monte_carlo(plan: ManeuverPlan, gains: GainSet, runs: int, config: SimConfig = SimConfig(),
                       zeta: float | None = None, jobs: int = 1) -> BoundReport:
    """Check the leader input bound over ``runs`` random initial conditions inside ``zeta``.

    ``jobs > 1`` splits the runs over worker processes.  Violations name the
    leader as ``run * n_l + i``.
    """
    chunks = [list(c) for c in np.array_split(np.arange(runs), max(1, min(jobs, runs))) if len(c)]
    args = [(plan, gains, c, config, zeta) for c in chunks]
    if len(chunks) > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(len(chunks)) as pool:
            results = list(pool.map(_runs_chunk, args))
    else:
        results = [_runs_chunk(a) for a in args]
    norms = np.concatenate([r[0] for r in results], axis=1)
    report = _bound_report(norms, results[0][1], gains.gamma_u)
    log.info("leader Monte-Carlo: %d runs, worst slack %.4g", runs, report.slack)
    return report


def run_dt_ladder(mats, plan, gains, config: SimConfig, dts=(4e-3, 2e-3, 1e-3), variant=None):
    """Run the scenario at each step size and estimate the observed order.

    The boundary layer is fixed at the value required by the coarsest step
    so that every run integrates the same vector field.
    """
    coarse = max(dts)
    traces = []
    for dt in dts:
        cfg = replace(config, dt=dt, floor_dt=coarse,
                      sample_every=max(1, int(round(config.sample_every * config.dt / dt))))
        traces.append(run_scenario(mats, plan, gains, cfg, variant))
    finals = [np.concatenate([tr.x[-1].reshape(-1), tr.eta[-1].reshape(-1)]) for tr in traces]
    diffs = [float(np.linalg.norm(finals[k] - finals[k + 1])) for k in range(len(finals) - 1)]
    orders = []
    for k in range(len(diffs) - 1):
        ratio = dts[k] / dts[k + 1]
        if diffs[k + 1] > 0 and diffs[k] > 0:
            orders.append(math.log(diffs[k] / diffs[k + 1]) / math.log(ratio))
        else:
            orders.append(float("nan"))
    return traces, diffs, orders
