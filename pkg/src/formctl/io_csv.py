"""Trace CSV writer and reader.

One row per (sample, agent).  Agents are numbered from 1, as in scenario
files.  Floats use 17 significant digits, so a written trace parses back to
the same doubles.  Estimate columns are ``nan`` for agents that keep no
estimate of their own state (followers in the relative-output and
state-feedback variants).
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .sim import SimTrace

_BLOCK_NAMES = ("p", "v", "a")
_AXES = ("x", "y", "z")


def block_name(k: int) -> str:
    return _BLOCK_NAMES[k] if k < len(_BLOCK_NAMES) else f"d{k}"


def header(m: int) -> list[str]:
    cols = ["t", "agent", "role"]
    cols += [f"{block_name(k)}{ax}" for k in range(m) for ax in _AXES]
    cols += [f"eta_{block_name(k)}{ax}" for k in range(m) for ax in _AXES]
    cols += ["ux", "uy", "uz", "err_norm"]
    return cols


def _f(v: float) -> str:
    return format(float(v), ".17g")


@dataclass
class CsvTrace:
    times: np.ndarray        # (S,)
    x: np.ndarray            # (S, n, 3m)
    eta: np.ndarray          # (S, n, 3m), nan where absent
    u: np.ndarray            # (S, n, 3)
    err_norm: np.ndarray     # (S, n)
    roles: tuple[str, ...]


def trace_table(trace: SimTrace) -> CsvTrace:
    """The CSV view of a trace: own estimates per agent and reference error norms."""
    S, n, dim = trace.x.shape
    eta = np.full((S, n, dim), np.nan)
    for i in range(n):
        est = trace.agent_estimate(i)
        if est is not None:
            eta[:, i] = est
    err = np.linalg.norm(trace.x - trace.xstar, axis=2)
    roles = tuple("leader" if i < trace.n_l else "follower" for i in range(n))
    return CsvTrace(trace.times.copy(), trace.x.copy(), eta, trace.u.copy(), err, roles)


def write_trace_csv(trace: SimTrace, path_or_buf) -> None:
    table = trace_table(trace)
    own = isinstance(path_or_buf, (str, Path))
    fh = open(path_or_buf, "w", newline="") if own else path_or_buf
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header(trace.m))
        S, n, _ = table.x.shape
        for s in range(S):
            t = _f(table.times[s])
            for i in range(n):
                row = [t, str(i + 1), table.roles[i]]
                row += [_f(v) for v in table.x[s, i]]
                row += [_f(v) for v in table.eta[s, i]]
                row += [_f(v) for v in table.u[s, i]]
                row.append(_f(table.err_norm[s, i]))
                w.writerow(row)
    finally:
        if own:
            fh.close()


def trace_csv_text(trace: SimTrace) -> str:
    buf = io.StringIO()
    write_trace_csv(trace, buf)
    return buf.getvalue()


def read_trace_csv(path_or_buf) -> CsvTrace:
    own = isinstance(path_or_buf, (str, Path))
    fh = open(path_or_buf, newline="") if own else path_or_buf
    try:
        rows = list(csv.reader(fh))
    finally:
        if own:
            fh.close()
    if not rows:
        raise ValueError("empty trace CSV")
    head = rows[0]
    dim = (len(head) - 7) // 2
    if dim < 3 or dim % 3 or head != header(dim // 3):
        raise ValueError("unrecognized trace CSV header")
    body = rows[1:]
    agents = [int(r[1]) for r in body]
    n = max(agents) if agents else 0
    if n == 0 or len(body) % n:
        raise ValueError("row count is not a multiple of the agent count")
    S = len(body) // n
    data = np.array([[float(v) for v in r[3:]] for r in body]).reshape(S, n, -1)
    times = np.array([float(body[s * n][0]) for s in range(S)])
    for s in range(S):
        for i in range(n):
            r = body[s * n + i]
            if int(r[1]) != i + 1 or float(r[0]) != times[s]:
                raise ValueError(f"rows out of order at sample {s}, agent {i + 1}")
    if np.any(np.diff(times) <= 0):
        raise ValueError("sample times are not strictly increasing")
    roles = tuple(body[i][2] for i in range(n))
    return CsvTrace(times, data[:, :, :dim], data[:, :, dim:2 * dim], data[:, :, 2 * dim:2 * dim + 3],
                    data[:, :, -1], roles)


def tables_equal(a: CsvTrace, b: CsvTrace) -> bool:
    """Exact equality, treating matching ``nan`` entries as equal."""
    if a.roles != b.roles:
        return False
    for name in ("times", "x", "eta", "u", "err_norm"):
        if not np.array_equal(getattr(a, name), getattr(b, name), equal_nan=True):
            return False
    return True
