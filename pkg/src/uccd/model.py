"""Continuous-time co-design problems and their trapezoidal transcription.

A problem is declared as a JSON-compatible document and built into an immutable
:class:`UccdProblem`.  Dynamics come from a small registry or a linear form;
costs and constraints are affine/quadratic polynomials over named symbols.

Symbols available to polynomials
--------------------------------
path context (Lagrange term, path/initial/final constraints)
    state names and ``x[i]``, control names and ``u[j]``, static names, data
    constants, signals, and ``t``.
endpoint context (Mayer term, ``where: once`` constraints)
    ``x0[i]``, ``xf[i]``, static names and data constants.
"""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field, replace
from typing import Any, Mapping, Sequence

import numpy as np

from . import usets

SCHEMA_VERSION = 1

REGISTRY = {
    "double_integrator": {
        "states": ("x", "v"),
        "controls": ("u",),
        "coefficients": {"mass": 1.0, "damping": 0.0},
    },
    "scalar_linear": {
        "states": ("x",),
        "controls": ("u",),
        "coefficients": {"a": 0.0, "b": 1.0},
    },
    "pendulum": {
        "states": ("theta", "omega"),
        "controls": ("torque",),
        "coefficients": {"mass": 1.0, "length": 1.0, "gravity": 9.81, "damping": 0.0},
    },
}

WHERE = ("path", "initial", "final", "once")
TREATMENTS = ("expectation", "mean-std", "cvar", "chance", "worst-case")


class ProblemValidationError(ValueError):
    """Raised by :func:`build_problem`; ``findings`` is a list of ``(path, message)``."""

    def __init__(self, findings):
        self.findings = list(findings)
        super().__init__("; ".join(f"{p}: {m}" for p, m in self.findings))


# ---------------------------------------------------------------------------
# domain types
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TimeGrid:
    t0: float
    tf: float
    n_nodes: int
    nodes: tuple
    uniform: bool = True

    @classmethod
    def uniform_grid(cls, t0: float, tf: float, n_nodes: int) -> "TimeGrid":
        if n_nodes < 2:
            raise ValueError("grid needs at least two nodes")
        if not tf > t0:
            raise ValueError("grid requires tf > t0")
        return cls(float(t0), float(tf), int(n_nodes), tuple(np.linspace(t0, tf, n_nodes).tolist()), True)

    @classmethod
    def from_nodes(cls, nodes) -> "TimeGrid":
        t = np.asarray(nodes, dtype=float)
        if t.size < 2 or np.any(np.diff(t) <= 0):
            raise ValueError("grid nodes must be strictly increasing with at least two entries")
        return cls(float(t[0]), float(t[-1]), int(t.size), tuple(t.tolist()), False)

    @property
    def times(self) -> np.ndarray:
        return np.asarray(self.nodes)

    @property
    def h(self) -> np.ndarray:
        return np.diff(self.times)

    @property
    def weights(self) -> np.ndarray:
        """Trapezoid quadrature weights."""
        h = self.h
        q = np.zeros(self.n_nodes)
        q[:-1] += h / 2
        q[1:] += h / 2
        return q


@dataclass(frozen=True)
class Trajectory:
    values: np.ndarray
    names: tuple
    kind: str = "state"

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim == 1:
            v = v[:, None]
        object.__setattr__(self, "values", v)
        if v.shape[1] != len(self.names):
            raise ValueError("trajectory channel count does not match names")
        if not np.all(np.isfinite(v)):
            raise ValueError("trajectory has non-finite entries")


@dataclass(frozen=True)
class StaticVar:
    name: str
    lower: float = -math.inf
    upper: float = math.inf
    tag: str = "plant"
    initial: float | None = None


@dataclass(frozen=True)
class StaticVars:
    vars: tuple = ()

    @property
    def names(self) -> tuple:
        return tuple(v.name for v in self.vars)

    @property
    def lower(self) -> np.ndarray:
        return np.array([v.lower for v in self.vars], dtype=float)

    @property
    def upper(self) -> np.ndarray:
        return np.array([v.upper for v in self.vars], dtype=float)

    def __len__(self):
        return len(self.vars)


@dataclass(frozen=True)
class ProblemData:
    constants: tuple = ()  # (name, float)
    signals: tuple = ()  # (name, tuple of node values)

    @property
    def constant_names(self) -> tuple:
        return tuple(n for n, _ in self.constants)

    @property
    def constant_values(self) -> np.ndarray:
        return np.array([v for _, v in self.constants], dtype=float)

    @property
    def signal_names(self) -> tuple:
        return tuple(n for n, _ in self.signals)

    def signal_matrix(self, n_nodes: int) -> np.ndarray:
        if not self.signals:
            return np.zeros((n_nodes, 0))
        return np.column_stack([np.asarray(v, dtype=float) for _, v in self.signals])


@dataclass(frozen=True)
class BoundaryConditions:
    """``None`` entries leave that component free."""

    xi0: tuple = ()
    xif: tuple = ()

    @property
    def mask0(self) -> np.ndarray:
        return np.array([v is not None for v in self.xi0], dtype=bool)

    @property
    def maskf(self) -> np.ndarray:
        return np.array([v is not None for v in self.xif], dtype=bool)

    def values0(self) -> np.ndarray:
        return np.array([np.nan if v is None else v for v in self.xi0], dtype=float)

    def valuesf(self) -> np.ndarray:
        return np.array([np.nan if v is None else v for v in self.xif], dtype=float)


@dataclass(frozen=True)
class Poly:
    """``constant + sum c * s + sum c * a * b`` over named symbols."""

    linear: tuple = ()  # ((sym, coef), ...)
    quadratic: tuple = ()  # ((a, b, coef), ...)
    constant: float = 0.0

    @classmethod
    def make(cls, linear=None, quadratic=None, constant=0.0) -> "Poly":
        lin: dict = {}
        for s, c in (linear.items() if isinstance(linear, Mapping) else (linear or ())):
            lin[s] = lin.get(s, 0.0) + float(c)
        quad: dict = {}
        for a, b, c in quadratic or ():
            key = tuple(sorted((a, b)))
            quad[key] = quad.get(key, 0.0) + float(c)
        return cls(
            tuple(sorted((s, c) for s, c in lin.items() if c != 0.0)),
            tuple(sorted((a, b, c) for (a, b), c in quad.items() if c != 0.0)),
            float(constant),
        )

    def symbols(self) -> set:
        out = {s for s, _ in self.linear}
        for a, b, _ in self.quadratic:
            out |= {a, b}
        return out

    def is_zero(self) -> bool:
        return not self.linear and not self.quadratic and self.constant == 0.0

    def __add__(self, other: "Poly") -> "Poly":
        return Poly.make(
            list(self.linear) + list(other.linear),
            list(self.quadratic) + list(other.quadratic),
            self.constant + other.constant,
        )

    def scaled(self, k: float) -> "Poly":
        return Poly.make(
            [(s, k * c) for s, c in self.linear],
            [(a, b, k * c) for a, b, c in self.quadratic],
            k * self.constant,
        )

    def evaluate(self, env: Mapping[str, Any], shape) -> np.ndarray:
        out = np.full(shape, self.constant)
        for s, c in self.linear:
            out = out + c * env[s]
        for a, b, c in self.quadratic:
            out = out + c * env[a] * env[b]
        return out

    def to_doc(self) -> dict:
        return {
            "linear": {s: c for s, c in self.linear},
            "quadratic": [[a, b, c] for a, b, c in self.quadratic],
            "constant": self.constant,
        }


ZERO = Poly()


@dataclass(frozen=True)
class Inequality:
    """``poly <= 0`` (path rows) or ``integral(integrand) + poly <= 0`` (once rows).

    A Type II equality keeps ``tol`` and is evaluated as the pair
    ``poly - tol <= 0`` and ``-poly - tol <= 0``.
    """

    name: str
    poly: Poly
    where: str = "path"
    tol: float | None = None
    treatment: str | None = None
    integrand: Poly | None = None

    @property
    def n_rows(self) -> int:
        return 1 if self.tol is None else 2


@dataclass(frozen=True)
class Equality:
    """Type I relation ``poly = 0`` that must hold in every scenario."""

    name: str
    poly: Poly
    where: str = "path"


@dataclass(frozen=True)
class ConstraintSpec:
    inequalities: tuple = ()
    equalities: tuple = ()
    control_bounds: tuple = ()  # (name, lo, hi)
    state_bounds: tuple = ()


@dataclass(frozen=True)
class CostSpec:
    lagrange: Poly = ZERO
    mayer: Poly = ZERO


@dataclass(frozen=True)
class DynamicsSpec:
    kind: str
    states: tuple
    controls: tuple
    A: tuple = ()
    B: tuple = ()
    c: tuple = ()
    id: str | None = None
    coefficients: tuple = ()  # (name, number | symbol)
    diffusion: tuple | None = None  # ("constant", matrix) | ("diagonal_state", scale)

    @property
    def n_s(self) -> int:
        return len(self.states)

    @property
    def n_u(self) -> int:
        return len(self.controls)


@dataclass(frozen=True)
class Binding:
    """Uncertainty attached to one or more targets, with an optional paired rendering."""

    target: tuple
    model: usets.UncertaintyModel
    paired: usets.UncertaintyModel | None = None

    def rendering(self, family: str) -> usets.UncertaintyModel | None:
        for m in (self.model, self.paired):
            if m is not None and m.family == family:
                return m
        return None

    @property
    def families(self) -> set:
        return {m.family for m in (self.model, self.paired) if m is not None}


@dataclass(frozen=True)
class FormulationSpec:
    type: str = "det"
    structure: str = "olsc"
    params: tuple = ()

    def get(self, key, default=None):
        return dict(self.params).get(key, default)


@dataclass(frozen=True)
class UccdProblem:
    grid: TimeGrid
    dynamics: DynamicsSpec
    cost: CostSpec
    constraints: ConstraintSpec
    statics: StaticVars
    data: ProblemData
    boundary: BoundaryConditions
    bindings: tuple = ()
    formulation: FormulationSpec = FormulationSpec()
    original_costs: tuple = ()  # objectives replaced by epigraph transforms, innermost first

    @property
    def n_s(self) -> int:
        return self.dynamics.n_s

    @property
    def n_u(self) -> int:
        return self.dynamics.n_u

    @property
    def n_p(self) -> int:
        return len(self.statics)

    @property
    def binding_names(self) -> tuple:
        return tuple(t for b in self.bindings for t in b.target)

    def kernel(self) -> "Kernel":
        return _kernel_cache(self)


# ---------------------------------------------------------------------------
# document parsing
# ---------------------------------------------------------------------------

_TOP_KEYS = ("schema", "grid", "dynamics", "cost", "constraints", "statics", "data",
             "boundary", "uncertainty", "formulation")
_REQUIRED_TOP = ("schema", "grid", "dynamics", "cost")
FORMULATION_TYPES = ("det", "se", "scc", "pr-w", "pr-c", "wcr", "fe", "pcc")
STRUCTURES = ("olsc", "olmc")


class _Findings:
    def __init__(self):
        self.items = []

    def add(self, path, msg):
        self.items.append((path, msg))

    def keys(self, path, block, allowed, required=()):
        if not isinstance(block, Mapping):
            self.add(path, "expected an object")
            return False
        for k in block:
            if k not in allowed:
                self.add(f"{path}.{k}", "unknown field")
        for k in required:
            if k not in block:
                self.add(f"{path}.{k}", "required field is missing")
        return True


def _num(x, default=math.inf):
    return default if x is None else float(x)


def _parse_poly(block, path, f: _Findings) -> Poly:
    if block is None:
        return ZERO
    if not f.keys(path, block, ("linear", "quadratic", "constant")):
        return ZERO
    quad = block.get("quadratic", [])
    for i, term in enumerate(quad):
        if not (isinstance(term, (list, tuple)) and len(term) == 3):
            f.add(f"{path}.quadratic[{i}]", "expected [symbol, symbol, coefficient]")
            return ZERO
    return Poly.make(block.get("linear", {}), quad, block.get("constant", 0.0))


def _matrix_cost(block, states, controls, path, f) -> Poly:
    lin, quad = [], []
    for key, names in (("Q", states), ("R", controls)):
        if key in block:
            m = np.atleast_2d(np.asarray(block[key], dtype=float))
            if m.shape != (len(names), len(names)):
                f.add(f"{path}.{key}", f"expected {len(names)}x{len(names)} matrix")
                continue
            if not np.allclose(m, m.T):
                f.add(f"{path}.{key}", "weight matrix must be symmetric")
            quad += [(names[i], names[j], m[i, j]) for i in range(len(names)) for j in range(len(names))]
    for key, names in (("q", states), ("r", controls)):
        if key in block:
            v = np.atleast_1d(np.asarray(block[key], dtype=float))
            if v.size != len(names):
                f.add(f"{path}.{key}", f"expected {len(names)} entries")
                continue
            lin += list(zip(names, v.tolist()))
    return Poly.make(lin, quad)


def _terminal_cost(block, n_s, path, f) -> Poly:
    m = np.atleast_2d(np.asarray(block["terminal_Q"], dtype=float))
    ref = np.asarray(block.get("terminal_ref", [0.0] * n_s), dtype=float)
    if m.shape != (n_s, n_s) or ref.size != n_s:
        f.add(path, f"terminal_Q must be {n_s}x{n_s} and terminal_ref length {n_s}")
        return ZERO
    if not np.allclose(m, m.T):
        f.add(f"{path}.terminal_Q", "weight matrix must be symmetric")
    xf = [f"xf[{i}]" for i in range(n_s)]
    quad = [(xf[i], xf[j], m[i, j]) for i in range(n_s) for j in range(n_s)]
    g = m @ ref
    lin = [(xf[i], -2.0 * g[i]) for i in range(n_s)]
    return Poly.make(lin, quad, float(ref @ m @ ref))


def _parse_cost_term(block, which, dyn, path, f) -> Poly:
    if block is None:
        return ZERO
    if not isinstance(block, Mapping):
        f.add(path, "expected an object")
        return ZERO
    if "registry" in block:
        f.keys(path, block, ("registry",))
        if block["registry"] == "control_energy" and which == "lagrange":
            return Poly.make(quadratic=[(u, u, 1.0) for u in dyn.controls])
        if block["registry"] == "zero":
            return ZERO
        f.add(f"{path}.registry", f"unknown cost registry id {block['registry']!r}")
        return ZERO
    if which == "lagrange" and any(k in block for k in ("Q", "R", "q", "r")):
        f.keys(path, block, ("Q", "R", "q", "r"))
        return _matrix_cost(block, dyn.states, dyn.controls, path, f)
    if which == "mayer" and "terminal_Q" in block:
        f.keys(path, block, ("terminal_Q", "terminal_ref"))
        return _terminal_cost(block, dyn.n_s, path, f)
    return _parse_poly(block, path, f)


def _parse_dynamics(block, f: _Findings) -> DynamicsSpec:
    path = "dynamics"
    if not isinstance(block, Mapping) or "kind" not in block:
        f.add(path, "dynamics needs a kind")
        return DynamicsSpec("none", (), ())
    kind = block["kind"]
    diffusion = None
    if block.get("diffusion") is not None:
        d = block["diffusion"]
        if f.keys(f"{path}.diffusion", d, ("kind", "matrix", "scale"), ("kind",)):
            if d["kind"] == "constant" and "matrix" in d:
                diffusion = ("constant", tuple(tuple(float(v) for v in r) for r in np.atleast_2d(d["matrix"]).tolist()))
            elif d["kind"] == "diagonal_state" and "scale" in d:
                diffusion = ("diagonal_state", tuple(float(v) for v in np.atleast_1d(d["scale"])))
            else:
                f.add(f"{path}.diffusion", "expected constant {matrix} or diagonal_state {scale}")
    if kind == "linear":
        f.keys(path, block, ("kind", "A", "B", "c", "states", "controls", "diffusion"), ("A", "B"))
        A = [list(r) for r in np.atleast_2d(np.asarray(block.get("A", [[0.0]]), dtype=object)).tolist()]
        B = [list(r) for r in np.atleast_2d(np.asarray(block.get("B", [[0.0]]), dtype=object)).tolist()]
        n_s = len(A)
        if any(len(r) != n_s for r in A):
            f.add(f"{path}.A", "A must be square")
        n_u = len(B[0]) if B else 0
        if len(B) != n_s:
            f.add(f"{path}.B", f"B has {len(B)} rows but the state dimension is {n_s}")
        if any(len(r) != n_u for r in B):
            f.add(f"{path}.B", "B rows have unequal length")
        states = tuple(block.get("states", [f"x{i + 1}" for i in range(n_s)]))
        controls = tuple(block.get("controls", [f"u{j + 1}" for j in range(n_u)]))
        if len(states) != n_s:
            f.add(f"{path}.states", f"{len(states)} names for {n_s} states")
        if len(controls) != n_u:
            f.add(f"{path}.controls", f"{len(controls)} names given but B has {n_u} columns")
        c = tuple(block.get("c", [0.0] * n_s))
        if len(c) != n_s:
            f.add(f"{path}.c", "offset length does not match the state dimension")
        conv = lambda v: v if isinstance(v, str) else float(v)
        return DynamicsSpec(
            "linear", states, controls,
            tuple(tuple(conv(v) for v in r) for r in A),
            tuple(tuple(conv(v) for v in r) for r in B),
            tuple(conv(v) for v in c), None, (), diffusion,
        )
    if kind == "registry":
        f.keys(path, block, ("kind", "id", "coefficients", "states", "controls", "diffusion"), ("id",))
        rid = block.get("id")
        if rid not in REGISTRY:
            f.add(f"{path}.id", f"unknown registry id {rid!r}")
            return DynamicsSpec("none", (), ())
        reg = REGISTRY[rid]
        coefs = dict(reg["coefficients"])
        for k, v in (block.get("coefficients") or {}).items():
            if k not in coefs:
                f.add(f"{path}.coefficients.{k}", f"{rid} has no coefficient {k!r}")
            else:
                coefs[k] = v if isinstance(v, str) else float(v)
        states = tuple(block.get("states", reg["states"]))
        controls = tuple(block.get("controls", reg["controls"]))
        if len(states) != len(reg["states"]) or len(controls) != len(reg["controls"]):
            f.add(path, f"{rid} has {len(reg['states'])} states and {len(reg['controls'])} controls")
        return DynamicsSpec("registry", states, controls, id=rid,
                            coefficients=tuple(sorted(coefs.items())), diffusion=diffusion)
    if kind == "none":
        f.keys(path, block, ("kind", "controls"))
        return DynamicsSpec("none", (), tuple(block.get("controls", ())))
    f.add(f"{path}.kind", f"unknown dynamics kind {kind!r}")
    return DynamicsSpec("none", (), ())


def _parse_entry(e, path, f, is_eq, dyn):
    allowed = ["name", "kind", "linear", "quadratic", "constant", "where"]
    if not is_eq:
        allowed += ["tol", "treatment", "integrand", "channel", "limit"]
    if not f.keys(path, e, allowed):
        return None
    kind = e.get("kind", "poly")
    name = e.get("name", path)
    where = e.get("where", "path")
    if where not in WHERE:
        f.add(f"{path}.where", f"where must be one of {WHERE}")
    if is_eq:
        if kind != "poly":
            f.add(f"{path}.kind", "equalities must be polynomial")
        return Equality(name, _parse_poly({k: e[k] for k in ("linear", "quadratic", "constant") if k in e}, path, f), where)
    if kind in ("state_magnitude", "control_magnitude"):
        names = dyn.states if kind == "state_magnitude" else dyn.controls
        ch, lim = e.get("channel"), e.get("limit")
        if ch not in names or lim is None:
            f.add(path, f"{kind} needs a known channel and a limit")
            return None
        poly = Poly.make(quadratic=[(ch, ch, 1.0)], constant=-float(lim) ** 2)
    elif kind in ("poly", "type2"):
        poly = _parse_poly({k: e[k] for k in ("linear", "quadratic", "constant") if k in e}, path, f)
    else:
        f.add(f"{path}.kind", f"unknown constraint kind {kind!r}")
        return None
    tol = None
    if kind == "type2":
        if e.get("tol") is None or float(e["tol"]) < 0:
            f.add(f"{path}.tol", "a Type II equality needs a relaxation tolerance >= 0")
            return None
        tol = float(e["tol"])
    treatment = e.get("treatment")
    if treatment is not None and treatment not in TREATMENTS:
        f.add(f"{path}.treatment", f"treatment must be one of {TREATMENTS}")
    integrand = None
    if e.get("integrand") is not None:
        if where != "once":
            f.add(f"{path}.integrand", "an integrand is only allowed on once constraints")
        integrand = _parse_poly(e["integrand"], f"{path}.integrand", f)
    return Inequality(name, poly, where, tol, treatment, integrand)


def _bounds(block, names, path, f):
    out = []
    for k, v in (block or {}).items():
        if k not in names:
            f.add(f"{path}.{k}", "unknown channel")
            continue
        lo, hi = _num(v[0], -math.inf), _num(v[1], math.inf)
        if lo > hi:
            f.add(f"{path}.{k}", "lower bound exceeds upper bound")
        out.append((k, lo, hi))
    return tuple(sorted(out))


def build_problem(document: Mapping) -> UccdProblem:
    """Validate a problem document and build the immutable problem."""
    f = _Findings()
    doc = document
    if not isinstance(doc, Mapping):
        raise ProblemValidationError([("$", "document must be an object")])
    for k in doc:
        if k not in _TOP_KEYS:
            f.add(k, "unknown top-level key")
    for k in _REQUIRED_TOP:
        if k not in doc:
            f.add(k, "required top-level key is missing")
    if f.items:
        raise ProblemValidationError(f.items)
    if doc["schema"] != SCHEMA_VERSION:
        f.add("schema", f"unsupported schema version {doc['schema']!r}")

    g = doc["grid"]
    grid = None
    if f.keys("grid", g, ("t0", "tf", "n_nodes", "nodes")):
        try:
            grid = TimeGrid.from_nodes(g["nodes"]) if "nodes" in g else TimeGrid.uniform_grid(
                g.get("t0", 0.0), g["tf"], g["n_nodes"])
        except (KeyError, ValueError, TypeError) as exc:
            f.add("grid", str(exc))
    if grid is None:
        raise ProblemValidationError(f.items or [("grid", "invalid grid")])

    dyn = _parse_dynamics(doc["dynamics"], f)

    cost_block = doc["cost"]
    cost = CostSpec()
    if f.keys("cost", cost_block, ("lagrange", "mayer")):
        cost = CostSpec(_parse_cost_term(cost_block.get("lagrange"), "lagrange", dyn, "cost.lagrange", f),
                        _parse_cost_term(cost_block.get("mayer"), "mayer", dyn, "cost.mayer", f))

    statics = []
    for i, s in enumerate(doc.get("statics") or []):
        p = f"statics[{i}]"
        if f.keys(p, s, ("name", "lower", "upper", "tag", "initial"), ("name",)):
            lo, hi = _num(s.get("lower"), -math.inf), _num(s.get("upper"), math.inf)
            if lo > hi:
                f.add(p, "lower bound exceeds upper bound")
            tag = s.get("tag", "plant")
            if tag not in ("plant", "control", "aux"):
                f.add(f"{p}.tag", "tag must be plant, control or aux")
            init = s.get("initial")
            statics.append(StaticVar(s["name"], lo, hi, tag, None if init is None else float(init)))
    statics = StaticVars(tuple(statics))

    data_block = doc.get("data") or {}
    consts, signals = [], []
    if f.keys("data", data_block, ("constants", "signals")):
        for k, v in (data_block.get("constants") or {}).items():
            arr = np.atleast_1d(np.asarray(v, dtype=float))
            if np.ndim(v) == 0:
                consts.append((k, float(v)))
            else:
                consts += [(f"{k}[{i}]", float(x)) for i, x in enumerate(arr)]
        for k, v in (data_block.get("signals") or {}).items():
            if len(v) != grid.n_nodes:
                f.add(f"data.signals.{k}", f"signal has {len(v)} values for {grid.n_nodes} nodes")
            signals.append((k, tuple(float(x) for x in v)))
    data = ProblemData(tuple(consts), tuple(signals))

    bnd = doc.get("boundary") or {}
    boundary = BoundaryConditions((None,) * dyn.n_s, (None,) * dyn.n_s)
    if f.keys("boundary", bnd, ("xi0", "xif")):
        vals = []
        for key in ("xi0", "xif"):
            v = bnd.get(key)
            if v is None:
                vals.append((None,) * dyn.n_s)
            elif len(v) != dyn.n_s:
                f.add(f"boundary.{key}", f"length {len(v)} does not match {dyn.n_s} states")
                vals.append((None,) * dyn.n_s)
            else:
                vals.append(tuple(None if x is None else float(x) for x in v))
        boundary = BoundaryConditions(*vals)

    cb = doc.get("constraints") or {}
    cons = ConstraintSpec()
    if f.keys("constraints", cb, ("inequalities", "equalities", "control_bounds", "state_bounds")):
        ineq = [_parse_entry(e, f"constraints.inequalities[{i}]", f, False, dyn)
                for i, e in enumerate(cb.get("inequalities") or [])]
        eqs = [_parse_entry(e, f"constraints.equalities[{i}]", f, True, dyn)
               for i, e in enumerate(cb.get("equalities") or [])]
        cons = ConstraintSpec(
            tuple(e for e in ineq if e is not None), tuple(e for e in eqs if e is not None),
            _bounds(cb.get("control_bounds"), dyn.controls, "constraints.control_bounds", f),
            _bounds(cb.get("state_bounds"), dyn.states, "constraints.state_bounds", f),
        )

    bindings = []
    for i, u in enumerate(doc.get("uncertainty") or []):
        p = f"uncertainty[{i}]"
        if not f.keys(p, u, ("target", "kind", "params", "paired"), ("target", "kind", "params")):
            continue
        try:
            model = usets.model_from_block(u["kind"], u["params"])
            paired = None
            if u.get("paired") is not None:
                pb = u["paired"]
                f.keys(f"{p}.paired", pb, ("kind", "params"), ("kind", "params"))
                paired = usets.model_from_block(pb["kind"], pb["params"])
        except (ValueError, TypeError) as exc:
            f.add(f"{p}.params", str(exc))
            continue
        target = tuple(u["target"]) if isinstance(u["target"], (list, tuple)) else (u["target"],)
        if len(target) != model.dim or (paired is not None and paired.dim != model.dim):
            f.add(f"{p}.target", f"{len(target)} targets for a {model.dim}-dimensional model")
            continue
        bindings.append(Binding(target, model, paired))

    fb = doc.get("formulation") or {}
    form = FormulationSpec()
    if f.keys("formulation", fb, ("type", "structure", "params")):
        ftype = fb.get("type", "det")
        if ftype not in FORMULATION_TYPES:
            f.add("formulation.type", f"type must be one of {FORMULATION_TYPES}")
        st = fb.get("structure", "olsc")
        if st not in STRUCTURES:
            f.add("formulation.structure", "structure must be olsc or olmc")
        form = FormulationSpec(ftype, st, _freeze_params(fb.get("params") or {}))

    problem = UccdProblem(grid, dyn, cost, cons, statics, data, boundary, tuple(bindings), form)
    if not f.items:
        _validate_semantics(problem, f)
    if f.items:
        raise ProblemValidationError(f.items)
    return problem


def _freeze_params(p: Mapping) -> tuple:
    def freeze(v):
        if isinstance(v, (list, tuple)):
            return tuple(freeze(x) for x in v)
        if isinstance(v, Mapping):
            return tuple(sorted((k, freeze(x)) for k, x in v.items()))
        return v
    return tuple(sorted((k, freeze(v)) for k, v in p.items()))


def _thaw(v):
    if isinstance(v, tuple):
        return [_thaw(x) for x in v]
    if isinstance(v, float) and math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return v


def path_symbols(problem: UccdProblem) -> set:
    d = problem.dynamics
    out = set(d.states) | set(d.controls) | {"t"}
    out |= {f"x[{i}]" for i in range(d.n_s)} | {f"u[{j}]" for j in range(d.n_u)}
    out |= set(problem.statics.names) | set(problem.data.constant_names) | set(problem.data.signal_names)
    return out


def endpoint_symbols(problem: UccdProblem) -> set:
    n = problem.n_s
    out = {f"x0[{i}]" for i in range(n)} | {f"xf[{i}]" for i in range(n)}
    return out | set(problem.statics.names) | set(problem.data.constant_names)


def _validate_semantics(problem: UccdProblem, f: _Findings):
    d = problem.dynamics
    names = list(d.states) + list(d.controls) + list(problem.statics.names) \
        + list(problem.data.constant_names) + list(problem.data.signal_names)
    dup = {n for n in names if names.count(n) > 1}
    if dup:
        f.add("$", f"names used more than once: {sorted(dup)}")
    params = set(problem.statics.names) | set(problem.data.constant_names)
    for k, v in d.coefficients:
        if isinstance(v, str) and v not in params:
            f.add(f"dynamics.coefficients.{k}", f"unknown symbol {v!r}")
    for label, mat in (("A", d.A), ("B", d.B), ("c", (d.c,))):
        for row in mat:
            for v in row:
                if isinstance(v, str) and v not in params:
                    f.add(f"dynamics.{label}", f"unknown symbol {v!r}")
    if d.diffusion is not None:
        kind, val = d.diffusion
        if kind == "constant" and len(val) != d.n_s:
            f.add("dynamics.diffusion.matrix", f"diffusion needs {d.n_s} rows")
        if kind == "diagonal_state" and len(val) != d.n_s:
            f.add("dynamics.diffusion.scale", f"diffusion scale needs {d.n_s} entries")
    psym, esym = path_symbols(problem), endpoint_symbols(problem)
    for label, poly, allowed in (("cost.lagrange", problem.cost.lagrange, psym),
                                 ("cost.mayer", problem.cost.mayer, esym)):
        bad = poly.symbols() - allowed
        if bad:
            f.add(label, f"unknown symbols {sorted(bad)}")
    for kind, entries in (("inequalities", problem.constraints.inequalities),
                          ("equalities", problem.constraints.equalities)):
        for i, e in enumerate(entries):
            allowed = esym if e.where == "once" else psym
            bad = e.poly.symbols() - allowed
            if getattr(e, "integrand", None) is not None:
                bad |= e.integrand.symbols() - psym
            if bad:
                f.add(f"constraints.{kind}[{i}]", f"unknown symbols {sorted(bad)}")
    seen = set()
    targets = set(problem.statics.names) | set(problem.data.constant_names) | set(problem.data.signal_names)
    targets |= {f"xi0[{i}]" for i in range(d.n_s)} | {f"noise[{i}]" for i in range(d.n_s)}
    for i, b in enumerate(problem.bindings):
        for t in b.target:
            if t not in targets:
                f.add(f"uncertainty[{i}].target", f"unknown binding target {t!r}")
            if t in seen:
                f.add(f"uncertainty[{i}].target", f"target {t!r} is bound twice")
            seen.add(t)
            if t.startswith("xi0[") and t in targets:
                if problem.boundary.xi0[int(t[4:-1])] is None:
                    f.add(f"uncertainty[{i}].target", f"{t} binds a free initial state")


def serialize(problem: UccdProblem) -> dict:
    """Inverse of :func:`build_problem` (matrix cost forms come back as polynomials)."""
    d = problem.dynamics
    if d.kind == "linear":
        dyn = {"kind": "linear", "A": [list(r) for r in d.A], "B": [list(r) for r in d.B],
               "c": list(d.c), "states": list(d.states), "controls": list(d.controls)}
    elif d.kind == "registry":
        dyn = {"kind": "registry", "id": d.id, "coefficients": dict(d.coefficients),
               "states": list(d.states), "controls": list(d.controls)}
    else:
        dyn = {"kind": "none", "controls": list(d.controls)}
    if d.diffusion is not None:
        kind, val = d.diffusion
        dyn["diffusion"] = {"kind": kind, ("matrix" if kind == "constant" else "scale"): _thaw(val)}

    def ineq(e: Inequality):
        out = {"name": e.name, "kind": "poly" if e.tol is None else "type2", "where": e.where, **e.poly.to_doc()}
        if e.tol is not None:
            out["tol"] = e.tol
        if e.treatment is not None:
            out["treatment"] = e.treatment
        if e.integrand is not None:
            out["integrand"] = e.integrand.to_doc()
        return out

    def bnds(items):
        return {k: [None if math.isinf(lo) else lo, None if math.isinf(hi) else hi] for k, lo, hi in items}

    doc = {
        "schema": SCHEMA_VERSION,
        "grid": ({"t0": problem.grid.t0, "tf": problem.grid.tf, "n_nodes": problem.grid.n_nodes}
                 if problem.grid.uniform else {"nodes": list(problem.grid.nodes)}),
        "dynamics": dyn,
        "cost": {"lagrange": problem.cost.lagrange.to_doc(), "mayer": problem.cost.mayer.to_doc()},
        "constraints": {
            "inequalities": [ineq(e) for e in problem.constraints.inequalities],
            "equalities": [{"name": e.name, "where": e.where, **e.poly.to_doc()}
                           for e in problem.constraints.equalities],
            "control_bounds": bnds(problem.constraints.control_bounds),
            "state_bounds": bnds(problem.constraints.state_bounds),
        },
        "statics": [{"name": s.name, "lower": None if math.isinf(s.lower) else s.lower,
                     "upper": None if math.isinf(s.upper) else s.upper, "tag": s.tag,
                     "initial": s.initial} for s in problem.statics.vars],
        "data": {"constants": dict(problem.data.constants),
                 "signals": {k: list(v) for k, v in problem.data.signals}},
        "boundary": {"xi0": list(problem.boundary.xi0), "xif": list(problem.boundary.xif)},
        "uncertainty": [
            {"target": list(b.target) if len(b.target) > 1 else b.target[0], **b.model.to_block(),
             **({"paired": b.paired.to_block()} if b.paired is not None else {})}
            for b in problem.bindings
        ],
        "formulation": {"type": problem.formulation.type, "structure": problem.formulation.structure,
                        "params": {k: _thaw(v) for k, v in problem.formulation.params}},
    }
    return copy.deepcopy(doc)


def with_formulation(problem: UccdProblem, type: str | None = None, structure: str | None = None,
                     **params) -> UccdProblem:
    """Copy of ``problem`` with formulation fields overridden."""
    form = problem.formulation
    merged = dict(form.params)
    merged.update({k: v for k, v in params.items() if v is not None})
    return replace(problem, formulation=FormulationSpec(type or form.type, structure or form.structure,
                                                         _freeze_params(merged)))


def epigraph_transform(problem: UccdProblem) -> UccdProblem:
    """Minimize a new static ``v`` subject to ``o - v <= 0``.

    The replaced objective is kept in ``original_costs``.
    """
    existing = set(problem.statics.names) | set(problem.data.constant_names)
    name, k = "epi_v", 1
    while name in existing:
        k += 1
        name = f"epi_v{k}"
    v = StaticVar(name, -math.inf, math.inf, "aux", None)
    row = Inequality(f"epigraph_{name}", problem.cost.mayer + Poly.make({name: -1.0}), "once",
                     None, "worst-case" if problem.formulation.type == "wcr" else None,
                     problem.cost.lagrange)
    return replace(
        problem,
        statics=StaticVars(problem.statics.vars + (v,)),
        cost=CostSpec(ZERO, Poly.make({name: 1.0})),
        constraints=replace(problem.constraints, inequalities=problem.constraints.inequalities + (row,)),
        original_costs=problem.original_costs + (problem.cost,),
    )


# ---------------------------------------------------------------------------
# evaluation kernel
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RowInfo:
    """One scalar constraint row of a scenario: entry index, node (or -1) and sign."""

    entry: int
    name: str
    node: int
    sign: float
    treatment: str | None


def spec_drift(d: DynamicsSpec, X, U, resolve=None) -> np.ndarray:
    """Evaluate ``f(x, u)`` of a dynamics spec on stacked arrays.

    ``X`` is ``(..., n_s)`` and ``U`` is ``(..., n_u)``.  ``resolve`` maps a coefficient
    entry (number or symbol name) to a value; by default entries must be numbers.
    """
    if resolve is None:
        def resolve(v):
            if isinstance(v, str):
                raise ValueError(f"symbol {v!r} needs a value")
            return v
    if d.kind == "none":
        return np.zeros(np.shape(X)[:-1] + (0,))
    xs = [X[..., i] for i in range(d.n_s)]
    us = [U[..., j] for j in range(d.n_u)]
    if d.kind == "linear":
        out = []
        for i in range(d.n_s):
            acc = resolve(d.c[i]) + 0.0 * xs[0]
            for j in range(d.n_s):
                a = resolve(d.A[i][j])
                if not (isinstance(a, float) and a == 0.0):
                    acc = acc + a * xs[j]
            for j in range(d.n_u):
                b = resolve(d.B[i][j])
                if not (isinstance(b, float) and b == 0.0):
                    acc = acc + b * us[j]
            out.append(acc)
        return np.stack(out, axis=-1)
    c = {k: resolve(v) for k, v in d.coefficients}
    if d.id == "double_integrator":
        return np.stack([xs[1] + 0.0 * us[0], (us[0] - c["damping"] * xs[1]) / c["mass"]], axis=-1)
    if d.id == "scalar_linear":
        return (c["a"] * xs[0] + c["b"] * us[0])[..., None]
    # pendulum
    ml2 = c["mass"] * c["length"] ** 2
    return np.stack([
        xs[1] + 0.0 * us[0],
        -(c["gravity"] / c["length"]) * np.sin(xs[0]) - c["damping"] * xs[1] / ml2 + us[0] / ml2,
    ], axis=-1)


class Kernel:
    """Batched evaluators built once per problem.

    ``local`` returns the node-local channel stack ``Y[..., k, c]``::

        [lagrange | once-row integrands | path g rows | path h rows | f]

    and ``endpoint`` returns ``E[..., c] = [mayer | once g rows | once h rows]``.
    Leading dimensions broadcast, so scenarios and finite-difference copies are
    evaluated together.
    """

    def __init__(self, problem: UccdProblem):
        self.problem = problem
        d = problem.dynamics
        self.n_s, self.n_u, self.n_p = d.n_s, d.n_u, problem.n_p
        self.N = problem.grid.n_nodes
        self.t = problem.grid.times
        self.q = problem.grid.weights
        self.states, self.controls = d.states, d.controls
        self.statics = problem.statics.names
        self.constants = problem.data.constant_names
        self.signals = problem.data.signal_names
        cons = problem.constraints

        # local channels
        self.integrands = []  # (ineq entry index, poly)
        self.path_g = []  # (entry, poly, sign, offset, mask-kind)
        self.once_g = []
        for i, e in enumerate(cons.inequalities):
            pieces = [(1.0, -e.tol), (-1.0, -e.tol)] if e.tol is not None else [(1.0, 0.0)]
            for sign, off in pieces:
                rec = (i, e.poly, sign, off, e.where)
                (self.once_g if e.where == "once" else self.path_g).append(rec)
            if e.where == "once" and e.integrand is not None:
                self.integrands.append((i, e.integrand))
        self.path_h = [(i, e.poly, e.where) for i, e in enumerate(cons.equalities) if e.where != "once"]
        self.once_h = [(i, e.poly) for i, e in enumerate(cons.equalities) if e.where == "once"]

        self.n_int = len(self.integrands)
        self.c_lag = 0
        self.c_int = 1
        self.c_g = 1 + self.n_int
        self.c_h = self.c_g + len(self.path_g)
        self.c_f = self.c_h + len(self.path_h)
        self.n_local = self.c_f + self.n_s
        self.n_end = 1 + len(self.once_g) + len(self.once_h)

        # integrand channel for each once-g row (or -1)
        int_of = {e: 1 + j for j, (e, _) in enumerate(self.integrands)}
        self.once_int_channel = np.array([int_of.get(r[0], -1) for r in self.once_g], dtype=int)

        # flattened row tables
        nodes_for = {"path": np.arange(self.N), "initial": np.array([0]), "final": np.array([self.N - 1])}
        gn, gc, rows = [], [], []
        for j, (ent, _, sign, _, where) in enumerate(self.path_g):
            for k in nodes_for[where]:
                gn.append(k)
                gc.append(self.c_g + j)
                rows.append(RowInfo(ent, cons.inequalities[ent].name, int(k), sign, cons.inequalities[ent].treatment))
        self.g_nodes, self.g_chan = np.array(gn, dtype=int), np.array(gc, dtype=int)
        for ent, _, sign, _, _ in self.once_g:
            rows.append(RowInfo(ent, cons.inequalities[ent].name, -1, sign, cons.inequalities[ent].treatment))
        self.g_rows = tuple(rows)
        hn, hc, hrows = [], [], []
        for j, (ent, _, where) in enumerate(self.path_h):
            for k in nodes_for[where]:
                hn.append(k)
                hc.append(self.c_h + j)
                hrows.append(RowInfo(ent, cons.equalities[ent].name, int(k), 1.0, None))
        self.h_nodes, self.h_chan = np.array(hn, dtype=int), np.array(hc, dtype=int)
        for ent, _ in self.once_h:
            hrows.append(RowInfo(ent, cons.equalities[ent].name, -1, 1.0, None))
        self.h_rows = tuple(hrows)
        self.n_g = len(self.g_rows)
        self.n_h = len(self.h_rows)
        self.n_gp = len(gn)
        self.n_hp = len(hn)

    # -- symbol environments -------------------------------------------------

    def _param_env(self, P, C, axis_pad):
        env = {}
        pad = (None,) * axis_pad
        for m, n in enumerate(self.statics):
            env[n] = P[(..., m) + pad]
        for m, n in enumerate(self.constants):
            env[n] = C[(..., m) + pad]
        return env

    def _resolve(self, v, env):
        return env[v] if isinstance(v, str) else v

    def drift(self, X, U, env):
        return spec_drift(self.problem.dynamics, X, U, lambda v: self._resolve(v, env))

    def local(self, t, X, U, P, C, SIG, NOISE) -> np.ndarray:
        """Node-local channel stack for nodes at times ``t`` (last-but-one axis of X)."""
        shape = np.broadcast_shapes(X.shape[:-1], U.shape[:-1], SIG.shape[:-1],
                                    P.shape[:-1] + (1,), C.shape[:-1] + (1,), NOISE.shape[:-1] + (1,),
                                    np.shape(t))
        env = self._param_env(P, C, 1)
        env["t"] = t
        for i, n in enumerate(self.states):
            env[n] = env[f"x[{i}]"] = X[..., i]
        for j, n in enumerate(self.controls):
            env[n] = env[f"u[{j}]"] = U[..., j]
        for j, n in enumerate(self.signals):
            env[n] = SIG[..., j]
        ch = [self.problem.cost.lagrange.evaluate(env, shape)]
        ch += [p.evaluate(env, shape) for _, p in self.integrands]
        ch += [sign * p.evaluate(env, shape) + off for _, p, sign, off, _ in self.path_g]
        ch += [p.evaluate(env, shape) for _, p, _ in self.path_h]
        out = np.stack(ch, axis=-1)
        if self.n_s:
            f = np.broadcast_to(self.drift(X, U, env), shape + (self.n_s,)) + NOISE[..., None, :]
            out = np.concatenate([out, f], axis=-1)
        return out

    def endpoint(self, X0, XF, P, C) -> np.ndarray:
        shape = np.broadcast_shapes(X0.shape[:-1], XF.shape[:-1], P.shape[:-1], C.shape[:-1])
        env = self._param_env(P, C, 0)
        for i in range(self.n_s):
            env[f"x0[{i}]"] = X0[..., i]
            env[f"xf[{i}]"] = XF[..., i]
        ch = [self.problem.cost.mayer.evaluate(env, shape)]
        ch += [sign * p.evaluate(env, shape) + off for _, p, sign, off, _ in self.once_g]
        ch += [p.evaluate(env, shape) for _, p in self.once_h]
        return np.stack(ch, axis=-1)

    # -- assembled quantities --------------------------------------------------

    def assemble(self, Y, E, X):
        """Per-scenario objective, flat g rows, flat h rows and defects."""
        o = np.einsum("...k,k->...", Y[..., self.c_lag], self.q) + E[..., 0]
        G = Y[..., self.g_nodes, self.g_chan]
        if self.once_g:
            once = E[..., 1:1 + len(self.once_g)].copy()
            for r, c in enumerate(self.once_int_channel):
                if c >= 0:
                    once[..., r] += np.einsum("...k,k->...", Y[..., c], self.q)
            G = np.concatenate([G, once], axis=-1)
        H = Y[..., self.h_nodes, self.h_chan]
        if self.once_h:
            H = np.concatenate([H, E[..., 1 + len(self.once_g):]], axis=-1)
        D = self.defects(Y[..., self.c_f:], X)
        return o, G, H, D

    def defects(self, F, X):
        h = self.problem.grid.h[:, None]
        return X[..., 1:, :] - X[..., :-1, :] - 0.5 * h * (F[..., 1:, :] + F[..., :-1, :])


_KERNELS: dict = {}


def _kernel_cache(problem: UccdProblem) -> Kernel:
    key = id(problem)
    hit = _KERNELS.get(key)
    if hit is not None and hit[0] is problem:
        return hit[1]
    k = Kernel(problem)
    if len(_KERNELS) > 64:
        _KERNELS.clear()
    _KERNELS[key] = (problem, k)
    return k


# ---------------------------------------------------------------------------
# scenario data and trajectory-level evaluation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ScenarioData:
    """Per-scenario realizations of the bound quantities (leading axis = scenario)."""

    p_shift: np.ndarray  # (S, n_p)
    constants: np.ndarray  # (S, n_c)
    signals: np.ndarray  # (S, N, n_sig)
    noise: np.ndarray  # (S, n_s)
    xi0: np.ndarray  # (S, n_s) boundary initial state, nan where free

    @property
    def n(self) -> int:
        return self.p_shift.shape[0]


def scenario_data(problem: UccdProblem, names: Sequence[str] = (), points=None) -> ScenarioData:
    """Apply scenario points (columns ordered as ``names``) to the problem data."""
    pts = np.zeros((1, 0)) if points is None else np.atleast_2d(np.asarray(points, dtype=float))
    S = pts.shape[0]
    N = problem.grid.n_nodes
    p_shift = np.zeros((S, problem.n_p))
    consts = np.tile(problem.data.constant_values, (S, 1)).reshape(S, -1)
    sig = np.tile(problem.data.signal_matrix(N)[None], (S, 1, 1))
    noise = np.zeros((S, problem.n_s))
    xi0 = np.tile(problem.boundary.values0(), (S, 1)).reshape(S, -1)
    statics, cn, sn = problem.statics.names, problem.data.constant_names, problem.data.signal_names
    for j, name in enumerate(names):
        col = pts[:, j]
        if name in statics:
            p_shift[:, statics.index(name)] += col
        elif name in cn:
            consts[:, cn.index(name)] = col
        elif name in sn:
            sig[:, :, sn.index(name)] += col[:, None]
        elif name.startswith("xi0["):
            xi0[:, int(name[4:-1])] = col
        elif name.startswith("noise["):
            noise[:, int(name[6:-1])] = col
        else:
            raise ValueError(f"unknown binding target {name!r}")
    return ScenarioData(p_shift, consts, sig, noise, xi0)


def nominal_points(problem: UccdProblem) -> tuple[tuple, np.ndarray]:
    names = problem.binding_names
    if not names:
        return (), np.zeros((1, 0))
    return names, np.concatenate([np.atleast_1d(b.model.nominal()) for b in problem.bindings])[None, :]


def _values(a, n_cols=None):
    if isinstance(a, Trajectory):
        return a.values
    v = np.asarray(a, dtype=float)
    if v.ndim == 1 and n_cols is not None:
        v = v.reshape(-1, n_cols)
    return v


def _pvec(problem, p):
    if p is None:
        return np.zeros(problem.n_p)
    if isinstance(p, Mapping):
        return np.array([float(p[n]) for n in problem.statics.names])
    return np.asarray(p, dtype=float).reshape(problem.n_p)


def _data_arrays(problem, d):
    d = problem.data if d is None else d
    return d.constant_values, d.signal_matrix(problem.grid.n_nodes)


def _eval_all(problem, u, xi, p, d):
    k = problem.kernel()
    U = _values(u, problem.n_u).reshape(problem.grid.n_nodes, problem.n_u)
    X = _values(xi, problem.n_s).reshape(problem.grid.n_nodes, problem.n_s)
    P = _pvec(problem, p)
    C, SIG = _data_arrays(problem, d)
    Y = k.local(k.t, X, U, P, C, SIG, np.zeros(problem.n_s))
    E = k.endpoint(X[0], X[-1], P, C)
    if not (np.all(np.isfinite(Y)) and np.all(np.isfinite(E))):
        raise FloatingPointError("non-finite intermediate value")
    return k, X, Y, E


def eval_objective(problem: UccdProblem, u, xi, p=None, d=None) -> float:
    """Trapezoidal integral of the Lagrange term plus the Mayer term."""
    k, X, Y, E = _eval_all(problem, u, xi, p, d)
    return float(np.dot(Y[:, k.c_lag], k.q) + E[0])


def eval_defects(problem: UccdProblem, u, xi, p=None, d=None) -> np.ndarray:
    """Trapezoidal collocation defects, shape ``(n_nodes - 1, n_s)``."""
    k, X, Y, E = _eval_all(problem, u, xi, p, d)
    return k.defects(Y[:, k.c_f:], X)


def eval_constraints(problem: UccdProblem, u, xi, p=None, d=None) -> dict:
    """Inequality values (g <= 0 feasible), Type I residuals and boundary residuals.

    ``g`` maps each inequality name to an array over its nodes (path rows) or a
    scalar (once rows); Type II entries give a ``(rows, 2)`` pair.
    """
    k, X, Y, E = _eval_all(problem, u, xi, p, d)
    _, G, H, _ = k.assemble(Y, E, X)
    g: dict = {}
    for val, row in zip(G, k.g_rows):
        g.setdefault(row.name, []).append(val)
    for e in problem.constraints.inequalities:
        v = np.asarray(g[e.name])
        if e.tol is not None:
            v = v.reshape(2, -1).T
            g[e.name] = v[0] if v.shape[0] == 1 else v
        else:
            g[e.name] = v if e.where == "path" else float(v[0])
    h: dict = {}
    for val, row in zip(H, k.h_rows):
        h.setdefault(row.name, []).append(val)
    h = {n: np.asarray(v) if len(v) > 1 else float(v[0]) for n, v in h.items()}
    b = problem.boundary
    return {
        "g": g,
        "h": h,
        "boundary": {
            "xi0": (X[0] - b.values0())[b.mask0],
            "xif": (X[-1] - b.valuesf())[b.maskf],
        },
    }


def simulate(problem: UccdProblem, U, P, scen: ScenarioData, X0, tol: float = 1e-13,
             max_iter: int = 50) -> np.ndarray:
    """Forward trapezoidal integration; states satisfy the defect equations.

    ``U`` is ``(S, N, n_u)`` or ``(N, n_u)``, ``P`` is ``(S, n_p)`` or ``(n_p,)``
    (decided values; scenario shifts are added here) and ``X0`` is ``(S, n_s)``.
    Each step solves the implicit trapezoid relation by Newton's method with a
    finite-difference Jacobian.
    """
    k = problem.kernel()
    S, N, n = scen.n, k.N, k.n_s
    U = np.asarray(U, dtype=float)
    U = np.zeros((S, N, 0)) if k.n_u == 0 else np.broadcast_to(U.reshape((-1, N, k.n_u)), (S, N, k.n_u))
    P = np.asarray(P, dtype=float)
    P = (np.zeros((1, 0)) if k.n_p == 0 else P.reshape(-1, k.n_p)) + scen.p_shift
    X = np.zeros((S, N, n))
    X[:, 0] = X0
    if n == 0:
        return X
    h = problem.grid.h
    t = k.t

    def f_at(x, j):
        Y = k.local(t[j:j + 1], x[:, None, :], U[:, j:j + 1], P, scen.constants,
                    scen.signals[:, j:j + 1], scen.noise)
        return Y[:, 0, k.c_f:]

    f_prev = f_at(X[:, 0], 0)
    eye = np.eye(n)
    for j in range(N - 1):
        z = X[:, j] + h[j] * f_prev
        base = X[:, j] + 0.5 * h[j] * f_prev
        for _ in range(max_iter):
            fz = f_at(z, j + 1)
            r = z - base - 0.5 * h[j] * fz
            if np.max(np.abs(r)) <= tol * (1.0 + np.max(np.abs(z))):
                break
            step = 1e-7 * np.maximum(1.0, np.abs(z))
            J = np.empty((S, n, n))
            for i in range(n):
                zp = z.copy()
                zm = z.copy()
                zp[:, i] += step[:, i]
                zm[:, i] -= step[:, i]
                J[:, :, i] = (f_at(zp, j + 1) - f_at(zm, j + 1)) / (2 * step[:, i:i + 1])
            z = z - np.linalg.solve(eye - 0.5 * h[j] * J, r[..., None])[..., 0]
        X[:, j + 1] = z
        f_prev = f_at(z, j + 1)
    if not np.all(np.isfinite(X)):
        raise FloatingPointError("forward simulation diverged")
    return X
