"""Scenario files.

A scenario is a YAML document; agents are numbered from 1 in the file and
from 0 everywhere in the Python API.  The grammar is documented in
``docs/scenario-format.md``.  Every mapping rejects unknown keys and every
number must be finite.  Errors carry the field path and, when known, the
source line.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import yaml

from .errors import NotLocalizable, ParseError, ValidationError
from .formation import FollowerMatrixSet, Localizability, NominalFormation, build_follower_matrices
from .gains import VARIANTS, GainSet, PlantMatrices, build_plant, synthesize
from .maneuver import BLEND_PROFILES, ManeuverPlan, Segment, Signal, derivative_bounds
from .sim import ESTIMATE_INIT, INTEGRATORS, SimConfig

BUNDLED_DIR = Path(__file__).with_name("scenarios")

TOP_KEYS = {"name", "description", "formation", "plant", "gains", "maneuver", "sim", "outputs", "expected"}


@dataclass(frozen=True)
class GainSpec:
    poles: tuple[float, ...] | None = None
    zeta: float = 0.0
    gamma_m: float | None = None        # None: sampled from the plan
    margin: float = 1.1
    bandwidth: float = 1.0
    epsilon: float = 1e-3


@dataclass(frozen=True)
class Scenario:
    name: str
    formation: NominalFormation
    plant: PlantMatrices
    gains: GainSpec
    plan: ManeuverPlan
    sim: SimConfig
    variant: str = "omega-hat"
    outputs: dict = field(default_factory=dict)
    expected: dict = field(default_factory=dict)
    source: str = "<string>"
    description: str = ""


@dataclass(frozen=True)
class Pipeline:
    scenario: Scenario
    mats: FollowerMatrixSet
    certificate: Localizability
    gains: GainSet | None
    variant: str
    gamma_m: float


class _Lines:
    """Map from a field path to its line in the source."""

    def __init__(self, text: str):
        self.lines: dict[tuple, int] = {}
        try:
            root = yaml.compose(text, Loader=yaml.SafeLoader)
        except yaml.YAMLError:
            root = None
        if root is not None:
            self._walk(root, ())

    def _walk(self, node, path):
        self.lines[path] = node.start_mark.line + 1
        if isinstance(node, yaml.MappingNode):
            for k, v in node.value:
                self.lines[path + (k.value,)] = k.start_mark.line + 1
                self._walk(v, path + (k.value,))
        elif isinstance(node, yaml.SequenceNode):
            for i, v in enumerate(node.value):
                self._walk(v, path + (i,))

    def find(self, path) -> int | None:
        path = tuple(path)
        while path:
            if path in self.lines:
                return self.lines[path]
            path = path[:-1]
        return self.lines.get(())


def _fmt(path) -> str:
    out = ""
    for p in path:
        out += f"[{p}]" if isinstance(p, int) else (f".{p}" if out else str(p))
    return out or "<root>"


class _Reader:
    def __init__(self, source: str, lines: _Lines):
        self.source = source
        self.lines = lines

    def fail(self, path, msg, cls=ValidationError):
        line = self.lines.find(path)
        where = f"{self.source}:{line}" if line else self.source
        err = cls(f"{where}: {_fmt(path)}: {msg}")
        err.line = line
        err.field = _fmt(path)
        return err

    def mapping(self, obj, path, allowed, required=()):
        if not isinstance(obj, dict):
            raise self.fail(path, f"expected a mapping, got {type(obj).__name__}")
        unknown = sorted(set(map(str, obj)) - set(allowed))
        if unknown:
            raise self.fail(path + (unknown[0],), f"unknown key {unknown[0]!r}")
        for k in required:
            if k not in obj:
                raise self.fail(path, f"missing required key {k!r}")
        return obj

    def number(self, obj, path, positive=False, nonneg=False):
        if isinstance(obj, bool) or not isinstance(obj, (int, float)):
            raise self.fail(path, f"expected a number, got {obj!r}")
        v = float(obj)
        if not math.isfinite(v):
            raise self.fail(path, "must be finite")
        if positive and v <= 0:
            raise self.fail(path, "must be positive")
        if nonneg and v < 0:
            raise self.fail(path, "must be nonnegative")
        return v

    def integer(self, obj, path, minimum=None):
        if isinstance(obj, bool) or not isinstance(obj, int):
            raise self.fail(path, f"expected an integer, got {obj!r}")
        if minimum is not None and obj < minimum:
            raise self.fail(path, f"must be at least {minimum}")
        return int(obj)

    def vector(self, obj, path, length=None):
        if not isinstance(obj, list):
            raise self.fail(path, "expected a list")
        if length is not None and len(obj) != length:
            raise self.fail(path, f"expected {length} entries, got {len(obj)}")
        return [self.number(v, path + (i,)) for i, v in enumerate(obj)]

    def matrix(self, obj, path, cols=None):
        if not isinstance(obj, list) or not obj:
            raise self.fail(path, "expected a nonempty list of rows")
        rows = [self.vector(r, path + (i,), cols) for i, r in enumerate(obj)]
        if len({len(r) for r in rows}) != 1:
            raise self.fail(path, "rows have different lengths")
        return np.array(rows, dtype=float)

    def choice(self, obj, path, options):
        if obj not in options:
            raise self.fail(path, f"must be one of {sorted(options)}, got {obj!r}")
        return obj


# ------------------------------------------------------------------ sections

def _formation(rd: _Reader, obj):
    path = ("formation",)
    rd.mapping(obj, path, {"leaders", "positions", "constraints"}, ("leaders", "positions", "constraints"))
    pos = rd.matrix(obj["positions"], path + ("positions",), 3)
    n = pos.shape[0]
    n_l = rd.integer(obj["leaders"], path + ("leaders",), 1)
    if n_l >= n:
        raise rd.fail(path + ("leaders",), f"{n_l} leaders leaves no followers among {n} agents")
    cons = obj["constraints"]
    if not isinstance(cons, list):
        raise rd.fail(path + ("constraints",), "expected a list")
    neighbors, scales = {}, {}
    for k, c in enumerate(cons):
        cp = path + ("constraints", k)
        rd.mapping(c, cp, {"agent", "neighbors", "scale"}, ("agent", "neighbors"))
        i = rd.integer(c["agent"], cp + ("agent",))
        if not n_l < i <= n:
            raise rd.fail(cp + ("agent",), f"agent {i} is not a follower (followers are {n_l + 1}..{n})")
        if i - 1 in neighbors:
            raise rd.fail(cp + ("agent",), f"agent {i} has two constraints")
        nb = c["neighbors"]
        if not isinstance(nb, list):
            raise rd.fail(cp + ("neighbors",), "expected a list")
        idx = []
        for q, j in enumerate(nb):
            j = rd.integer(j, cp + ("neighbors", q))
            if not 1 <= j <= n:
                raise rd.fail(cp + ("neighbors", q), f"agent {j} is outside 1..{n}")
            idx.append(j - 1)
        neighbors[i - 1] = tuple(idx)
        if "scale" in c:
            scales[i - 1] = rd.number(c["scale"], cp + ("scale",))
    for i in range(n_l, n):
        if i not in neighbors:
            raise rd.fail(path + ("constraints",), f"follower {i + 1} has no constraint")
    try:
        return NominalFormation(pos, n_l, neighbors, scales)
    except ValidationError as exc:
        raise rd.fail(path, str(exc)) from None


def _plant(rd: _Reader, obj):
    path = ("plant",)
    rd.mapping(obj, path, {"order", "outputs", "C"}, ("order",))
    m = rd.integer(obj["order"], path + ("order",), 1)
    if "outputs" in obj and "C" in obj:
        raise rd.fail(path, "give either outputs or C, not both")
    try:
        if "C" in obj:
            C = rd.matrix(obj["C"], path + ("C",), 3 * m)
            return build_plant(m, C=C)
        orders = obj.get("outputs", [0])
        if not isinstance(orders, list) or not orders:
            raise rd.fail(path + ("outputs",), "expected a nonempty list of derivative orders")
        orders = [rd.integer(o, path + ("outputs", k), 0) for k, o in enumerate(orders)]
        for k, o in enumerate(orders):
            if o >= m:
                raise rd.fail(path + ("outputs", k), f"derivative order {o} not below plant order {m}")
        return build_plant(m, orders=orders)
    except ValueError as exc:
        raise rd.fail(path, str(exc)) from None


def _gains(rd: _Reader, obj, m):
    path = ("gains",)
    obj = {} if obj is None else obj
    rd.mapping(obj, path, {"poles", "zeta", "gamma_m", "margin", "bandwidth", "epsilon"})
    poles = None
    if "poles" in obj:
        poles = tuple(rd.vector(obj["poles"], path + ("poles",), m))
        for k, p in enumerate(poles):
            if p >= 0:
                raise rd.fail(path + ("poles", k), "poles must be negative")
    gm = obj.get("gamma_m", "auto")
    gamma_m = None if gm == "auto" else rd.number(gm, path + ("gamma_m",), nonneg=True)
    return GainSpec(
        poles=poles,
        zeta=rd.number(obj.get("zeta", 0.0), path + ("zeta",), nonneg=True),
        gamma_m=gamma_m,
        margin=rd.number(obj.get("margin", 1.1), path + ("margin",), positive=True),
        bandwidth=rd.number(obj.get("bandwidth", 1.0), path + ("bandwidth",), positive=True),
        epsilon=rd.number(obj.get("epsilon", 1e-3), path + ("epsilon",), nonneg=True),
    )


def _signal(rd: _Reader, obj, path, seg_start, seg_len):
    if isinstance(obj, (int, float)) and not isinstance(obj, bool):
        return Signal.constant(rd.number(obj, path))
    rd.mapping(obj, path, {"poly", "origin", "sines", "blend", "profile"})
    if "blend" in obj:
        if set(obj) - {"blend", "profile"}:
            raise rd.fail(path, "a blend takes only 'blend' and 'profile'")
        ends = rd.vector(obj["blend"], path + ("blend",), 2)
        profile = rd.choice(obj.get("profile", "septic"), path + ("profile",), BLEND_PROFILES)
        return Signal.blend(ends[0], ends[1], seg_start, seg_len, profile)
    if "profile" in obj:
        raise rd.fail(path + ("profile",), "profile only applies to blends")
    poly = rd.vector(obj.get("poly", [0.0]), path + ("poly",))
    sines = obj.get("sines", [])
    if not isinstance(sines, list):
        raise rd.fail(path + ("sines",), "expected a list of [amplitude, frequency, phase]")
    sines = [tuple(rd.vector(s, path + ("sines", k), 3)) for k, s in enumerate(sines)]
    origin = rd.number(obj.get("origin", 0.0), path + ("origin",))
    return Signal(tuple(poly), tuple(sines), origin)


def _shape_rows(rd, obj, path, r_l):
    if obj == "nominal":
        return r_l.copy()
    mat = rd.matrix(obj, path, 3)
    if mat.shape[0] != r_l.shape[0]:
        raise rd.fail(path, f"expected {r_l.shape[0]} leader rows, got {mat.shape[0]}")
    return mat


def _shape(rd: _Reader, obj, path, r_l, seg_start, seg_len):
    if obj is None or obj == "nominal":
        return None
    if isinstance(obj, dict):
        rd.mapping(obj, path, {"blend", "profile"}, ("blend",))
        bl = rd.mapping(obj["blend"], path + ("blend",), {"from", "to"}, ("from", "to"))
        a = _shape_rows(rd, bl["from"], path + ("blend", "from"), r_l)
        b = _shape_rows(rd, bl["to"], path + ("blend", "to"), r_l)
        profile = rd.choice(obj.get("profile", "septic"), path + ("profile",), BLEND_PROFILES)
        return tuple(tuple(Signal.blend(a[i, d], b[i, d], seg_start, seg_len, profile) for d in range(3))
                     for i in range(r_l.shape[0]))
    if not isinstance(obj, list) or len(obj) != r_l.shape[0]:
        raise rd.fail(path, f"expected 'nominal', a blend, or {r_l.shape[0]} leader rows")
    rows = []
    for i, row in enumerate(obj):
        if not isinstance(row, list) or len(row) != 3:
            raise rd.fail(path + (i,), "each leader row needs 3 signals")
        rows.append(tuple(_signal(rd, v, path + (i, d), seg_start, seg_len) for d, v in enumerate(row)))
    return tuple(rows)


def _maneuver(rd: _Reader, obj, r_l):
    path = ("maneuver",)
    if not isinstance(obj, list):
        raise rd.fail(path, "expected a list of segments")
    if not obj:
        raise rd.fail(path, "maneuver plan has no segments")
    segs = []
    for k, s in enumerate(obj):
        sp = path + (k,)
        rd.mapping(s, sp, {"t", "scale", "axis", "angle", "translation", "shape"}, ("t",))
        t0, t1 = rd.vector(s["t"], sp + ("t",), 2)
        if t1 <= t0:
            raise rd.fail(sp + ("t",), f"segment end {t1} not after start {t0}")
        if segs and abs(segs[-1].t_end - t0) > 1e-12 * max(1.0, abs(t0)):
            raise rd.fail(sp + ("t",), f"segment starts at {t0} but the previous one ends at {segs[-1].t_end}")
        L = t1 - t0
        kw = {}
        if "scale" in s:
            kw["scale"] = _signal(rd, s["scale"], sp + ("scale",), t0, L)
        if "angle" in s:
            kw["angle"] = _signal(rd, s["angle"], sp + ("angle",), t0, L)
        if "axis" in s:
            kw["axis"] = tuple(rd.vector(s["axis"], sp + ("axis",), 3))
        if "translation" in s:
            tr = s["translation"]
            if not isinstance(tr, list) or len(tr) != 3:
                raise rd.fail(sp + ("translation",), "expected 3 signals")
            kw["translation"] = tuple(_signal(rd, v, sp + ("translation", d), t0, L) for d, v in enumerate(tr))
        kw["shape"] = _shape(rd, s.get("shape"), sp + ("shape",), r_l, t0, L)
        try:
            segs.append(Segment(t0, t1, **kw))
        except ValidationError as exc:
            raise rd.fail(sp, str(exc)) from None
    return ManeuverPlan(tuple(segs), r_l)


def _sim(rd: _Reader, obj, epsilon):
    path = ("sim",)
    obj = {} if obj is None else obj
    keys = {"dt", "t_end", "integrator", "seed", "assert_bounds", "sample_every", "variant",
            "estimate_init", "leader_error", "estimate_error", "follower_error", "stiff_floor"}
    rd.mapping(obj, path, keys)
    kw = {"epsilon": epsilon}
    for k in ("dt", "t_end"):
        if k in obj:
            kw[k] = rd.number(obj[k], path + (k,), positive=True)
    for k in ("leader_error", "estimate_error", "follower_error"):
        if k in obj:
            kw[k] = rd.number(obj[k], path + (k,), nonneg=True)
    if "seed" in obj:
        kw["seed"] = rd.integer(obj["seed"], path + ("seed",), 0)
    if "sample_every" in obj:
        kw["sample_every"] = rd.integer(obj["sample_every"], path + ("sample_every",), 1)
    if "integrator" in obj:
        kw["integrator"] = rd.choice(obj["integrator"], path + ("integrator",), INTEGRATORS)
    if "estimate_init" in obj:
        kw["estimate_init"] = rd.choice(obj["estimate_init"], path + ("estimate_init",), ESTIMATE_INIT)
    for k in ("assert_bounds", "stiff_floor"):
        if k in obj:
            if not isinstance(obj[k], bool):
                raise rd.fail(path + (k,), "expected true or false")
            kw[k] = obj[k]
    variant = rd.choice(obj.get("variant", "omega-hat"), path + ("variant",), VARIANTS)
    try:
        return SimConfig(**kw), variant
    except ValidationError as exc:
        raise rd.fail(path, str(exc)) from None


def _expected(rd: _Reader, obj, n_l, n):
    path = ("expected",)
    if obj is None:
        return {}
    rd.mapping(obj, path, {"omega_fl", "omega_ff", "omega_hat", "shapes", "desired"})
    out = {}
    n_f = n - n_l
    dims = {"omega_fl": (n_f, n_l), "omega_ff": (n_f, n_f), "omega_hat": (n_f, n)}
    for k, shape in dims.items():
        if k in obj:
            mat = rd.matrix(obj[k], path + (k,))
            if mat.shape != shape:
                raise rd.fail(path + (k,), f"expected shape {shape}, got {mat.shape}")
            out[k] = mat
    if "shapes" in obj:
        out["shapes"] = []
        for i, item in enumerate(obj["shapes"]):
            ip = path + ("shapes", i)
            rd.mapping(item, ip, {"g_l", "g_f"}, ("g_l", "g_f"))
            out["shapes"].append((np.array(rd.vector(item["g_l"], ip + ("g_l",), 3 * n_l)),
                                  np.array(rd.vector(item["g_f"], ip + ("g_f",), 3 * n_f))))
    if "desired" in obj:
        out["desired"] = []
        for i, item in enumerate(obj["desired"]):
            ip = path + ("desired", i)
            rd.mapping(item, ip, {"t", "p"}, ("t", "p"))
            out["desired"].append((rd.number(item["t"], ip + ("t",)),
                                   np.array(rd.vector(item["p"], ip + ("p",), 3 * n))))
    return out


def parse_scenario(text: str, source: str = "<string>") -> Scenario:
    """Parse and validate scenario text."""
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        line = mark.line + 1 if mark is not None else None
        err = ParseError(f"{source}:{line or '?'}: {getattr(exc, 'problem', None) or exc}")
        err.line = line
        raise err from None
    rd = _Reader(source, _Lines(text))
    if data is None:
        raise rd.fail((), "empty scenario")
    rd.mapping(data, (), TOP_KEYS, ("formation", "plant", "maneuver"))
    formation = _formation(rd, data["formation"])
    plant = _plant(rd, data["plant"])
    gains = _gains(rd, data.get("gains"), plant.m)
    plan = _maneuver(rd, data["maneuver"], formation.r_l)
    sim, variant = _sim(rd, data.get("sim"), gains.epsilon)
    if sim.t_end is not None and sim.t_end > plan.t_end + 1e-12:
        raise rd.fail(("sim", "t_end"), f"t_end = {sim.t_end} is past the plan end {plan.t_end}")
    outputs = data.get("outputs") or {}
    rd.mapping(outputs, ("outputs",), {"trace", "summary"})
    for k, v in outputs.items():
        if not isinstance(v, str):
            raise rd.fail(("outputs", k), "expected a path")
    name = data.get("name", Path(source).stem)
    if not isinstance(name, str):
        raise rd.fail(("name",), "expected a string")
    return Scenario(
        name=name, formation=formation, plant=plant, gains=gains, plan=plan, sim=sim,
        variant=variant, outputs=dict(outputs),
        expected=_expected(rd, data.get("expected"), formation.n_l, formation.n),
        source=source, description=str(data.get("description", "")),
    )


def load_scenario(path) -> Scenario:
    """Load a scenario file; a bare name resolves to a bundled scenario."""
    p = Path(path)
    if not p.exists():
        bundled = BUNDLED_DIR / (p.name if p.suffix else p.name + ".scenario")
        if bundled.exists():
            p = bundled
        else:
            raise FileNotFoundError(f"scenario {path} not found")
    return parse_scenario(p.read_text(), str(p))


def bundled_scenarios() -> list[Path]:
    return sorted(BUNDLED_DIR.glob("*.scenario"))


def build_pipeline(scn: Scenario, variant: str | None = None, synthesize_gains: bool = True) -> Pipeline:
    """Follower matrices and gains for a scenario.

    ``gamma_m`` defaults to the sampled sup of the m-th reference derivative.
    """
    variant = scn.variant if variant is None else variant
    if variant not in VARIANTS:
        raise ValidationError(f"unknown variant {variant!r}")
    mats, cert = build_follower_matrices(scn.formation)
    knobs = scn.gains
    gamma_m = knobs.gamma_m
    if gamma_m is None:
        gamma_m = float(derivative_bounds(scn.plan, scn.plant.m)[-1])
    gains = None
    if synthesize_gains:
        if not cert.localizable:
            raise NotLocalizable(
                f"follower block is singular (sigma_min = {cert.sigma_min:.3e}); formation not localizable")
        gains = synthesize(mats, scn.plant, poles=knobs.poles, zeta=knobs.zeta, gamma_m=gamma_m,
                           variant=variant, margin=knobs.margin, bandwidth=knobs.bandwidth)
    return Pipeline(scn, mats, cert, gains, variant, gamma_m)


__all__ = [
    "GainSpec", "Scenario", "Pipeline", "parse_scenario", "load_scenario", "bundled_scenarios",
    "build_pipeline", "BUNDLED_DIR",
]
