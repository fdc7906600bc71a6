"""Compare the compiled and NumPy closed-loop kernels.

    python3 benchmarks/bench_kernels.py [--steps N] [--repeat R]

Both backends integrate the same bundled scenario from the same initial
state; the script reports wall time per step, the speed-up and the largest
difference between the two final states.
"""
from __future__ import annotations

import argparse
import time

import numpy as np

from formctl.kernel import CompiledClosedLoop, PythonClosedLoop
from formctl.scenario import build_pipeline, load_scenario
from formctl.sim import build_closed_loop, effective_epsilon, initial_state


def setup(name, variant):
    scn = load_scenario(name)
    pl = build_pipeline(scn, variant=variant)
    loop, edges, Wc = build_closed_loop(pl.mats, pl.gains, pl.variant, scn.sim.epsilon)
    eps = effective_epsilon(pl.gains, Wc, pl.mats.n_l, scn.sim.epsilon, scn.sim.dt)
    init = initial_state(loop, edges, pl.mats, scn.plan, scn.plant.m, scn.sim)
    z0 = np.concatenate([init.x.reshape(-1), init.eta.reshape(-1)])
    return scn, pl, edges, Wc, eps, z0


def make(cls, pl, edges, Wc, eps):
    g = pl.gains
    p = g.plant
    return cls(p.A, p.B, p.C, g.L, g.K, g.beta_row, Wc, pl.mats.n_l,
               {"omega-bar": 0, "omega-hat": 0, "relative": 1, "state-feedback": 2}[pl.variant],
               g.c1, g.c2, eps, [e[0] for e in edges], [e[1] for e in edges], [e[2] for e in edges])


def bench(loop, z0, xs, ff, dt, steps, repeat):
    best = float("inf")
    out = None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = loop.integrate(z0, xs, ff, dt, steps, 100)
        best = min(best, time.perf_counter() - t0)
    return best, out


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--scenario", default="paper_sec5")
    ap.add_argument("--steps", type=int, default=4000)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()
    print(f"{'variant':16s} {'backend':8s} {'us/step':>10s} {'speed-up':>9s} {'max |dz|':>10s}")
    for variant in ("omega-hat", "omega-bar", "relative", "state-feedback"):
        scn, pl, edges, Wc, eps, z0 = setup(args.scenario, variant)
        dt = scn.sim.dt
        half = scn.plan.t_start + np.arange(2 * args.steps + 1) * (0.5 * dt)
        xs, ff = scn.plan.leader_states(half, scn.plant.m)
        t_py, (Zp, *_) = bench(make(PythonClosedLoop, pl, edges, Wc, eps), z0, xs, ff, dt, args.steps, args.repeat)
        print(f"{variant:16s} {'python':8s} {1e6 * t_py / args.steps:10.2f} {'1.0':>9s} {'':>10s}")
        if CompiledClosedLoop is None:
            print(f"{variant:16s} {'cython':8s} {'not built':>10s}")
            continue
        t_c, (Zc, *_) = bench(make(CompiledClosedLoop, pl, edges, Wc, eps), z0, xs, ff, dt, args.steps, args.repeat)
        diff = float(np.max(np.abs(Zp[-1] - Zc[-1])))
        print(f"{variant:16s} {'cython':8s} {1e6 * t_c / args.steps:10.2f} {t_py / t_c:9.1f} {diff:10.2e}")


if __name__ == "__main__":
    main()
