"""Per-agent dynamics, observers and control laws.

These functions evaluate one agent at a time from its own state and a
snapshot of its neighbors, exactly as a deployed agent would.  The simulator
uses the vectorized kernels in :mod:`formctl.kernel`; the test-suite checks
that both agree.

Neighbor data is passed as ``{agent index: value}`` maps and ``weights`` as
``{agent index: w_ij}`` (see :func:`formctl.formation.edge_weights`).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, MissingEdgeEstimate, MissingNeighbor, RoleMismatch
from .gains import GainSet, PlantMatrices
from .maneuver import DesiredState

DEFAULT_EPSILON = 1e-3


@dataclass
class AgentState:
    id: int
    role: str
    x: np.ndarray

    def __post_init__(self):
        if self.role not in ("leader", "follower"):
            raise ValueError(f"role must be 'leader' or 'follower', got {self.role!r}")
        self.x = np.asarray(self.x, dtype=float)


def sgn_eps(v, eps=DEFAULT_EPSILON) -> np.ndarray:
    """Boundary-layer sign ``v / max(||v||, eps)``.

    Equals the unit vector ``v/||v||`` outside the layer and is linear inside
    it; ``eps = 0`` gives the discontinuous version with ``sgn(0) = 0``.
    """
    v = np.asarray(v, dtype=float)
    norm = np.linalg.norm(v)
    if eps <= 0.0 and norm == 0.0:
        return np.zeros_like(v)
    return v / max(norm, eps)


def _check_dim(vec, dim, what):
    if vec.shape != (dim,):
        raise DimensionMismatch(f"{what} has shape {vec.shape}, expected ({dim},)")


def plant_rhs(x, u, plant: PlantMatrices) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    _check_dim(x, plant.dim, "state")
    _check_dim(u, 3, "input")
    return plant.A @ x + plant.B @ u


def measure_output(x, plant: PlantMatrices) -> np.ndarray:
    return plant.C @ np.asarray(x, dtype=float)


def _require(agent: AgentState, role: str):
    if agent.role != role:
        raise RoleMismatch(f"agent {agent.id} is a {agent.role}, expected a {role}")


def leader_step(agent: AgentState, eta, desired: DesiredState, gains: GainSet):
    """Leader input from its own estimate and the observer derivative.

    ``u = (beta kron I3)'(eta - x*) + p*^(m)`` and
    ``eta' = A eta + B u + L (C eta - y)``.
    """
    _require(agent, "leader")
    plant = gains.plant
    eta = np.asarray(eta, dtype=float)
    _check_dim(eta, plant.dim, "estimate")
    u = gains.beta_row @ (eta - desired.x) + desired.feedforward
    y = plant.C @ agent.x
    deta = plant.A @ eta + plant.B @ u + gains.L @ (plant.C @ eta - y)
    return u, deta


def _consensus_input(gains: GainSet, s, eps):
    v = gains.K @ s
    return gains.c1 * v + gains.c2 * sgn_eps(v, eps)


def follower_step_absolute(agent: AgentState, eta, neighbor_estimates, weights, y,
                           neighbor_outputs, gains: GainSet, eps=DEFAULT_EPSILON):
    """Observer-based follower law using absolute outputs.

    The same law serves both follower matrices; pass the weights of the one
    in use (``omega-bar`` or ``omega-hat``).
    """
    _require(agent, "follower")
    plant = gains.plant
    eta = np.asarray(eta, dtype=float)
    y = np.asarray(y, dtype=float)
    s = np.zeros(plant.dim)
    innov = np.zeros(plant.q)
    for j, w in weights.items():
        if j not in neighbor_estimates or j not in neighbor_outputs:
            raise MissingNeighbor(f"follower {agent.id} has no data from neighbor {j}")
        eta_j = np.asarray(neighbor_estimates[j], dtype=float)
        s += w * (eta - eta_j)
        innov += w * (plant.C @ (eta - eta_j) - (y - np.asarray(neighbor_outputs[j], dtype=float)))
    u = _consensus_input(gains, s, eps)
    deta = (plant.A @ eta + plant.B @ u + gains.L @ (plant.C @ eta - y)
            + gains.c1 * gains.L @ innov)
    return u, deta


def follower_input_relative(agent: AgentState, eta_edges, weights, gains: GainSet, eps=DEFAULT_EPSILON):
    _require(agent, "follower")
    s = np.zeros(gains.plant.dim)
    for j, w in weights.items():
        if j not in eta_edges:
            raise MissingEdgeEstimate(f"follower {agent.id} keeps no estimate for edge to {j}")
        s += w * np.asarray(eta_edges[j], dtype=float)
    return _consensus_input(gains, s, eps)


def follower_step_relative(agent: AgentState, eta_edges, relative_outputs, neighbor_inputs,
                           weights, gains: GainSet, eps=DEFAULT_EPSILON):
    """Follower law that only sees relative outputs ``y_i - y_j``.

    One estimate ``eta_ij`` of the relative state is kept per neighbor.  The
    input is evaluated from the current estimates first and then reused in
    every edge observer.
    """
    plant = gains.plant
    u = follower_input_relative(agent, eta_edges, weights, gains, eps)
    deriv = {}
    for j in weights:
        if j not in relative_outputs:
            raise MissingEdgeEstimate(f"follower {agent.id} has no relative output for edge to {j}")
        if j not in neighbor_inputs:
            raise MissingNeighbor(f"follower {agent.id} has no input of neighbor {j}")
        eta_ij = np.asarray(eta_edges[j], dtype=float)
        dy = np.asarray(relative_outputs[j], dtype=float)
        deriv[j] = (plant.A @ eta_ij + plant.B @ (u - np.asarray(neighbor_inputs[j], dtype=float))
                    + gains.L @ (plant.C @ eta_ij - dy))
    return u, deriv


def follower_step_state_feedback(agent: AgentState, neighbor_states, weights, gains: GainSet,
                                 eps=DEFAULT_EPSILON):
    """Follower law with relative state measurements; no observer."""
    _require(agent, "follower")
    s = np.zeros(gains.plant.dim)
    for j, w in weights.items():
        if j not in neighbor_states:
            raise MissingNeighbor(f"follower {agent.id} has no state of neighbor {j}")
        s += w * (agent.x - np.asarray(neighbor_states[j], dtype=float))
    return _consensus_input(gains, s, eps)
