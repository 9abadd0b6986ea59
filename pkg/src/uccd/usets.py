"""Uncertainty representations and their finite scenario parameterizations.

Three families are supported:

* stochastic models (``Gaussian``, ``Uniform``, ``Discrete``) sampled by Monte Carlo,
* crisp sets (``Box``, ``Ellipsoid``, ``Polytope``) used by worst-case formulations,
* fuzzy sets (``Triangular``, ``Trapezoidal``, ``GaussianMembership``) handled through
  alpha-cuts.

Each family reduces to a :class:`ScenarioSet`, a matrix of realizations with one
column per binding target.
"""

from __future__ import annotations

import csv
import io
import itertools
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy.optimize import linprog

#: default number of alpha levels and the floor substituted for alpha = 0
DEFAULT_LEVELS = 11
ALPHA_FLOOR = 0.01


class UncertaintyModel:
    """Common base; ``family`` is one of ``stochastic``, ``crisp``, ``fuzzy``."""

    family: str = ""
    kind: str = ""

    @property
    def dim(self) -> int:
        return 1

    def nominal(self) -> np.ndarray:
        raise NotImplementedError

    def to_block(self) -> dict:
        raise NotImplementedError


# ---------------------------------------------------------------------------
# stochastic
# ---------------------------------------------------------------------------


class StochasticModel(UncertaintyModel):
    family = "stochastic"

    def mean(self) -> float:
        raise NotImplementedError

    def std(self) -> float:
        raise NotImplementedError

    def nominal(self) -> np.ndarray:
        return np.array([self.mean()])

    def draw(self, rng: np.random.Generator, n: int) -> np.ndarray:
        raise NotImplementedError


@dataclass(frozen=True)
class Gaussian(StochasticModel):
    mu: float
    sigma: float
    kind = "gaussian"

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError(f"gaussian sigma must be > 0, got {self.sigma}")

    def mean(self):
        return float(self.mu)

    def std(self):
        return float(self.sigma)

    def draw(self, rng, n):
        return self.mu + self.sigma * rng.standard_normal(n)

    def to_block(self):
        return {"kind": "gaussian", "params": {"mu": self.mu, "sigma": self.sigma}}


@dataclass(frozen=True)
class Uniform(StochasticModel):
    lo: float
    hi: float
    kind = "uniform"

    def __post_init__(self):
        if not self.lo < self.hi:
            raise ValueError(f"uniform requires lo < hi, got [{self.lo}, {self.hi}]")

    def mean(self):
        return 0.5 * (self.lo + self.hi)

    def std(self):
        return (self.hi - self.lo) / math.sqrt(12.0)

    def draw(self, rng, n):
        return self.lo + (self.hi - self.lo) * rng.random(n)

    def to_block(self):
        return {"kind": "uniform", "params": {"lo": self.lo, "hi": self.hi}}


@dataclass(frozen=True)
class Discrete(StochasticModel):
    values: tuple
    probabilities: tuple
    kind = "discrete"

    def __post_init__(self):
        object.__setattr__(self, "values", tuple(float(v) for v in self.values))
        object.__setattr__(self, "probabilities", tuple(float(p) for p in self.probabilities))
        if len(self.values) == 0 or len(self.values) != len(self.probabilities):
            raise ValueError("discrete model needs matching, nonempty values and probabilities")
        if any(p < 0 for p in self.probabilities):
            raise ValueError("discrete probabilities must be nonnegative")
        if abs(sum(self.probabilities) - 1.0) > 1e-12:
            raise ValueError(f"discrete probabilities sum to {sum(self.probabilities)}, not 1")

    def mean(self):
        return float(np.dot(self.values, self.probabilities))

    def std(self):
        v = np.asarray(self.values)
        p = np.asarray(self.probabilities)
        return float(np.sqrt(max(np.dot(p, (v - self.mean()) ** 2), 0.0)))

    def draw(self, rng, n):
        # cumulative-inverse sampling
        cdf = np.cumsum(self.probabilities)
        idx = np.searchsorted(cdf, rng.random(n), side="right")
        return np.asarray(self.values)[np.minimum(idx, len(self.values) - 1)]

    def to_block(self):
        return {
            "kind": "discrete",
            "params": {"values": list(self.values), "probabilities": list(self.probabilities)},
        }


# ---------------------------------------------------------------------------
# crisp
# ---------------------------------------------------------------------------

_NORMS = ("l1", "l2", "linf")


def _as_vector(x) -> tuple:
    return tuple(float(v) for v in np.atleast_1d(np.asarray(x, dtype=float)).ravel())


class CrispSet(UncertaintyModel):
    """Closed, bounded set; membership is 0/1 valued and boundary points are members."""

    family = "crisp"
    norm: str = "linf"

    def contains(self, q) -> bool:
        raise NotImplementedError

    def has_vertices(self) -> bool:
        return False

    def vertices(self) -> np.ndarray:
        raise ValueError(f"{self.kind} set has no finite vertex set")

    # parameterization used by projected ascent: q = to_point(y) with y in a unit ball
    def to_point(self, y: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def project(self, y: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def random_params(self, rng: np.random.Generator, n: int) -> np.ndarray:
        raise NotImplementedError

    def center_params(self) -> np.ndarray:
        raise NotImplementedError


@dataclass(frozen=True)
class Box(CrispSet):
    center: tuple
    halfwidth: tuple
    kind = "box"
    norm = "linf"

    def __post_init__(self):
        c, h = _as_vector(self.center), _as_vector(self.halfwidth)
        if len(h) == 1 and len(c) > 1:
            h = h * len(c)
        if len(c) != len(h):
            raise ValueError("box center and halfwidth dimensions differ")
        if any(v < 0 for v in h):
            raise ValueError("box halfwidth must be >= 0")
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "halfwidth", h)

    @property
    def dim(self):
        return len(self.center)

    def nominal(self):
        return np.asarray(self.center)

    def contains(self, q):
        q = np.asarray(q, dtype=float).ravel()
        if q.size != self.dim:
            raise ValueError(f"point has dimension {q.size}, set has {self.dim}")
        return bool(np.all(np.abs(np.asarray(self.center) - q) <= np.asarray(self.halfwidth)))

    def has_vertices(self):
        return True

    def vertices(self):
        c, h = np.asarray(self.center), np.asarray(self.halfwidth)
        corners = itertools.product(*[(ci - hi, ci + hi) for ci, hi in zip(c, h)])
        return np.array(list(corners), dtype=float).reshape(-1, self.dim)

    def to_point(self, y):
        return np.asarray(self.center) + np.asarray(self.halfwidth) * y

    def project(self, y):
        return np.clip(y, -1.0, 1.0)

    def random_params(self, rng, n):
        return rng.uniform(-1.0, 1.0, size=(n, self.dim))

    def center_params(self):
        return np.zeros(self.dim)

    def to_block(self):
        return {"kind": "box", "params": {"center": list(self.center), "halfwidth": list(self.halfwidth)}}


@dataclass(frozen=True)
class Ellipsoid(CrispSet):
    """``{q : z(L^-1 (q - center)) <= radius}`` with ``shape = L L^T`` and z the tagged norm."""

    center: tuple
    shape: tuple
    radius: float
    norm: str = "l2"
    kind = "ellipsoid"

    def __post_init__(self):
        c = _as_vector(self.center)
        m = np.atleast_2d(np.asarray(self.shape, dtype=float))
        if m.shape != (len(c), len(c)):
            raise ValueError("ellipsoid shape matrix must be square and match the center")
        if not np.allclose(m, m.T):
            raise ValueError("ellipsoid shape matrix must be symmetric")
        if np.linalg.eigvalsh(m).min() <= 0:
            raise ValueError("ellipsoid shape matrix must be positive definite")
        if self.radius < 0:
            raise ValueError("ellipsoid radius must be >= 0")
        if self.norm not in _NORMS:
            raise ValueError(f"unknown norm tag {self.norm!r}")
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "shape", tuple(tuple(r) for r in m.tolist()))

    @property
    def dim(self):
        return len(self.center)

    @property
    def _chol(self):
        return np.linalg.cholesky(np.asarray(self.shape))

    def nominal(self):
        return np.asarray(self.center)

    def _norm(self, v):
        order = {"l1": 1, "l2": 2, "linf": np.inf}[self.norm]
        return float(np.linalg.norm(v, ord=order))

    def contains(self, q):
        q = np.asarray(q, dtype=float).ravel()
        if q.size != self.dim:
            raise ValueError(f"point has dimension {q.size}, set has {self.dim}")
        y = np.linalg.solve(self._chol, q - np.asarray(self.center))
        return self._norm(y) <= self.radius * (1 + 1e-12) + 1e-15

    def to_point(self, y):
        return np.asarray(self.center) + self.radius * (np.asarray(y) @ self._chol.T)

    def project(self, y):
        y = np.asarray(y, dtype=float)
        if self.norm == "linf":
            return np.clip(y, -1.0, 1.0)
        if self.norm == "l2":
            n = np.linalg.norm(y, axis=-1, keepdims=True)
            return y / np.maximum(n, 1.0)
        return _project_l1_ball(y)

    def random_params(self, rng, n):
        z = rng.standard_normal((n, self.dim))
        z /= np.linalg.norm(z, axis=1, keepdims=True)
        return self.project(z * rng.random((n, 1)) ** (1.0 / self.dim))

    def center_params(self):
        return np.zeros(self.dim)

    def to_block(self):
        return {
            "kind": "ellipsoid",
            "params": {
                "center": list(self.center),
                "shape": [list(r) for r in self.shape],
                "radius": self.radius,
                "norm": self.norm,
            },
        }


def _project_l1_ball(y):
    """Euclidean projection onto the unit l1 ball (sort-based)."""
    y = np.atleast_1d(np.asarray(y, dtype=float))
    if np.abs(y).sum() <= 1.0:
        return y
    a = np.sort(np.abs(y))[::-1]
    cs = np.cumsum(a)
    k = np.nonzero(a * np.arange(1, a.size + 1) > cs - 1.0)[0][-1]
    theta = (cs[k] - 1.0) / (k + 1)
    return np.sign(y) * np.maximum(np.abs(y) - theta, 0.0)


def _project_simplex(w):
    w = np.asarray(w, dtype=float)
    u = np.sort(w)[::-1]
    cs = np.cumsum(u)
    k = np.nonzero(u * np.arange(1, u.size + 1) > cs - 1.0)[0][-1]
    theta = (cs[k] - 1.0) / (k + 1)
    return np.maximum(w - theta, 0.0)


@dataclass(frozen=True)
class Polytope(CrispSet):
    """Convex hull of an explicit vertex list."""

    vertex_list: tuple
    kind = "polytope"
    norm = "linf"

    def __post_init__(self):
        v = np.asarray(self.vertex_list, dtype=float)
        if v.ndim == 1:
            v = v[:, None]
        if v.shape[0] < 1:
            raise ValueError("polytope needs at least one vertex")
        object.__setattr__(self, "vertex_list", tuple(tuple(r) for r in v.tolist()))

    @property
    def dim(self):
        return len(self.vertex_list[0])

    def nominal(self):
        return np.asarray(self.vertex_list).mean(axis=0)

    def contains(self, q):
        q = np.asarray(q, dtype=float).ravel()
        if q.size != self.dim:
            raise ValueError(f"point has dimension {q.size}, set has {self.dim}")
        v = np.asarray(self.vertex_list)
        n = v.shape[0]
        a_eq = np.vstack([v.T, np.ones((1, n))])
        b_eq = np.concatenate([q, [1.0]])
        res = linprog(np.zeros(n), A_eq=a_eq, b_eq=b_eq, bounds=[(0, None)] * n, method="highs")
        return bool(res.status == 0)

    def has_vertices(self):
        return True

    def vertices(self):
        return np.asarray(self.vertex_list, dtype=float)

    # ascent runs over convex weights on the vertices
    def to_point(self, y):
        return np.asarray(y) @ np.asarray(self.vertex_list)

    def project(self, y):
        y = np.asarray(y, dtype=float)
        if y.ndim == 1:
            return _project_simplex(y)
        return np.array([_project_simplex(r) for r in y])

    def random_params(self, rng, n):
        return rng.dirichlet(np.ones(len(self.vertex_list)), size=n)

    def center_params(self):
        k = len(self.vertex_list)
        return np.full(k, 1.0 / k)

    def to_block(self):
        return {"kind": "polytope", "params": {"vertices": [list(r) for r in self.vertex_list]}}


def crisp_contains(crisp: CrispSet, q) -> bool:
    return crisp.contains(q)


# ---------------------------------------------------------------------------
# fuzzy
# ---------------------------------------------------------------------------


class FuzzySet(UncertaintyModel):
    family = "fuzzy"

    def membership(self, x):
        raise NotImplementedError

    def alpha_cut(self, alpha: float) -> tuple[float, float]:
        raise NotImplementedError

    def nominal(self):
        lo, hi = self.alpha_cut(1.0)
        return np.array([0.5 * (lo + hi)])


def _check_alpha(alpha):
    if not 0.0 < alpha <= 1.0:
        raise ValueError(f"alpha must lie in (0, 1], got {alpha}")


@dataclass(frozen=True)
class Triangular(FuzzySet):
    a: float
    b: float
    c: float
    kind = "triangular"

    def __post_init__(self):
        if not self.a <= self.b <= self.c:
            raise ValueError("triangular set requires a <= b <= c")

    def membership(self, x):
        x = np.asarray(x, dtype=float)
        a, b, c = self.a, self.b, self.c
        m = np.zeros_like(x)
        if b > a:
            m = np.where((x >= a) & (x < b), (x - a) / (b - a), m)
        if c > b:
            m = np.where((x > b) & (x <= c), (c - x) / (c - b), m)
        return np.where(x == b, 1.0, m)

    def alpha_cut(self, alpha):
        _check_alpha(alpha)
        return (self.a + alpha * (self.b - self.a), self.c - alpha * (self.c - self.b))

    def to_block(self):
        return {"kind": "triangular", "params": {"a": self.a, "b": self.b, "c": self.c}}


@dataclass(frozen=True)
class Trapezoidal(FuzzySet):
    a: float
    b: float
    c: float
    d: float
    kind = "trapezoidal"

    def __post_init__(self):
        if not self.a <= self.b <= self.c <= self.d:
            raise ValueError("trapezoidal set requires a <= b <= c <= d")

    def membership(self, x):
        x = np.asarray(x, dtype=float)
        a, b, c, d = self.a, self.b, self.c, self.d
        m = np.where((x >= b) & (x <= c), 1.0, 0.0)
        if b > a:
            m = np.where((x >= a) & (x < b), (x - a) / (b - a), m)
        if d > c:
            m = np.where((x > c) & (x <= d), (d - x) / (d - c), m)
        return m

    def alpha_cut(self, alpha):
        _check_alpha(alpha)
        return (self.a + alpha * (self.b - self.a), self.d - alpha * (self.d - self.c))

    def to_block(self):
        return {"kind": "trapezoidal", "params": {"a": self.a, "b": self.b, "c": self.c, "d": self.d}}


@dataclass(frozen=True)
class GaussianMembership(FuzzySet):
    center: float
    width: float
    kind = "gaussian-membership"

    def __post_init__(self):
        if not self.width > 0:
            raise ValueError("gaussian-membership width must be > 0")

    def membership(self, x):
        x = np.asarray(x, dtype=float)
        return np.exp(-(((x - self.center) / self.width) ** 2))

    def alpha_cut(self, alpha):
        _check_alpha(alpha)
        r = self.width * math.sqrt(-math.log(alpha))
        return (self.center - r, self.center + r)

    def to_block(self):
        return {"kind": "gaussian-membership", "params": {"center": self.center, "width": self.width}}


def membership(fuzzy: FuzzySet, x):
    m = fuzzy.membership(x)
    return float(m) if np.ndim(m) == 0 else m


def alpha_cut(fuzzy: FuzzySet, alpha: float) -> tuple[float, float]:
    return fuzzy.alpha_cut(alpha)


# ---------------------------------------------------------------------------
# block <-> model
# ---------------------------------------------------------------------------

_REQUIRED = {
    "gaussian": ("mu", "sigma"),
    "uniform": ("lo", "hi"),
    "discrete": ("values", "probabilities"),
    "box": ("center", "halfwidth"),
    "ellipsoid": ("center", "shape", "radius"),
    "polytope": ("vertices",),
    "triangular": ("a", "b", "c"),
    "trapezoidal": ("a", "b", "c", "d"),
    "gaussian-membership": ("center", "width"),
}

KINDS = tuple(_REQUIRED)


def model_from_block(kind: str, params: dict) -> UncertaintyModel:
    """Build a model from the ``{kind, params}`` part of an uncertainty block."""
    if kind not in _REQUIRED:
        raise ValueError(f"unknown uncertainty kind {kind!r}")
    missing = [k for k in _REQUIRED[kind] if k not in params]
    if missing:
        raise ValueError(f"{kind} block is missing params {missing}")
    extra = set(params) - set(_REQUIRED[kind]) - ({"norm"} if kind == "ellipsoid" else set())
    if extra:
        raise ValueError(f"{kind} block has unknown params {sorted(extra)}")
    p = params
    if kind == "gaussian":
        return Gaussian(float(p["mu"]), float(p["sigma"]))
    if kind == "uniform":
        return Uniform(float(p["lo"]), float(p["hi"]))
    if kind == "discrete":
        return Discrete(tuple(p["values"]), tuple(p["probabilities"]))
    if kind == "box":
        return Box(p["center"], p["halfwidth"])
    if kind == "ellipsoid":
        return Ellipsoid(p["center"], p["shape"], float(p["radius"]), p.get("norm", "l2"))
    if kind == "polytope":
        return Polytope(p["vertices"])
    if kind == "triangular":
        return Triangular(float(p["a"]), float(p["b"]), float(p["c"]))
    if kind == "trapezoidal":
        return Trapezoidal(float(p["a"]), float(p["b"]), float(p["c"]), float(p["d"]))
    return GaussianMembership(float(p["center"]), float(p["width"]))


# ---------------------------------------------------------------------------
# scenario sets
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ScenarioSet:
    """Finite parameterization of the uncertain dimension.

    ``points[s, j]`` is the realization of binding target ``names[j]`` in scenario
    ``s``.  For Monte Carlo sets ``weights`` are probabilities; for alpha-grid sets
    they are the alpha level of each point.
    """

    points: np.ndarray
    weights: np.ndarray
    provenance: str
    names: tuple = ()
    seed: int | None = None
    levels: tuple = ()
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "weights", np.asarray(self.weights, dtype=float))
        if not self.names:
            object.__setattr__(self, "names", tuple(f"q{j}" for j in range(pts.shape[1])))
        if len(self.names) != pts.shape[1]:
            raise ValueError("scenario column count does not match binding order")
        if self.weights.shape != (pts.shape[0],):
            raise ValueError("one weight per scenario required")

    @property
    def n(self) -> int:
        return self.points.shape[0]

    def column(self, name: str) -> np.ndarray:
        return self.points[:, self.names.index(name)]

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.names)
        for row in self.points:
            w.writerow([repr(float(v)) for v in row])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="") as fh:
                fh.write(text)
        return text

    @classmethod
    def from_csv(cls, text: str, provenance: str = "mcs") -> "ScenarioSet":
        rows = list(csv.reader(io.StringIO(text)))
        names = tuple(rows[0])
        pts = np.array([[float(v) for v in r] for r in rows[1:]], dtype=float).reshape(-1, len(names))
        return cls(pts, np.full(pts.shape[0], 1.0 / max(pts.shape[0], 1)), provenance, names)


def nominal_scenarios(models: Sequence[UncertaintyModel], names: Sequence[str] | None = None) -> ScenarioSet:
    pts = np.concatenate([np.atleast_1d(m.nominal()) for m in models]) if models else np.zeros(0)
    return ScenarioSet(pts[None, :], np.ones(1), "nominal", tuple(names or ()) or _default_names(pts.size))


def _default_names(k):
    return tuple(f"q{j}" for j in range(k))


def sample_stochastic(
    models: Sequence[StochasticModel],
    n: int,
    seed: int = 0,
    names: Sequence[str] | None = None,
    moment_match: bool = False,
) -> ScenarioSet:
    """Monte Carlo draws, one independent Philox stream per model column.

    With ``moment_match`` the Gaussian and uniform columns are shifted and rescaled
    so the sample mean and population standard deviation equal the model's.
    """
    if n < 1:
        raise ValueError("need at least one sample")
    streams = np.random.SeedSequence(seed).spawn(len(models))
    cols = []
    for model, ss in zip(models, streams):
        x = np.asarray(model.draw(np.random.Generator(np.random.Philox(ss)), n), dtype=float)
        if moment_match and not isinstance(model, Discrete):
            if n == 1:
                x = np.array([model.mean()])
            else:
                s = x.std()
                x = model.mean() + (x - x.mean()) * (model.std() / s if s > 0 else 0.0)
        cols.append(x)
    pts = np.column_stack(cols) if cols else np.zeros((n, 0))
    return ScenarioSet(pts, np.full(n, 1.0 / n), "mcs", tuple(names or ()) or _default_names(len(models)), seed)


def enumerate_vertices(crisp: CrispSet | Sequence[CrispSet], names: Sequence[str] | None = None) -> ScenarioSet:
    """Vertices of one set, or of the Cartesian product of several, in lexicographic order."""
    sets = [crisp] if isinstance(crisp, CrispSet) else list(crisp)
    for s in sets:
        if not s.has_vertices():
            raise ValueError(f"{s.kind} set has no finite vertex set")
    blocks = [s.vertices() for s in sets]
    rows = [np.concatenate(combo) for combo in itertools.product(*blocks)]
    pts = np.array(rows, dtype=float).reshape(len(rows), -1)
    return ScenarioSet(pts, np.full(len(rows), 1.0 / len(rows)), "vertices",
                       tuple(names or ()) or _default_names(pts.shape[1]))


def alpha_levels(n_levels: int = DEFAULT_LEVELS, floor: float = ALPHA_FLOOR) -> np.ndarray:
    if n_levels < 2:
        raise ValueError("need at least two alpha levels")
    return np.maximum(np.linspace(0.0, 1.0, n_levels), floor)


def alpha_cut_scenarios(sets: Sequence[FuzzySet], alpha: float) -> np.ndarray:
    """Corners of the product of the sets' alpha-cuts, lexicographic (lo before hi)."""
    cuts = [s.alpha_cut(alpha) for s in sets]
    return np.array(list(itertools.product(*cuts)), dtype=float).reshape(-1, len(sets))


def alpha_grid_scenarios(
    sets: Sequence[FuzzySet],
    n_levels: int = DEFAULT_LEVELS,
    names: Sequence[str] | None = None,
    floor: float = ALPHA_FLOOR,
) -> ScenarioSet:
    """Interval endpoints at every alpha level; weights carry each point's level."""
    levels = alpha_levels(n_levels, floor)
    pts, wts = [], []
    for a in levels:
        corners = alpha_cut_scenarios(sets, float(a))
        pts.append(corners)
        wts.append(np.full(corners.shape[0], a))
    pts = np.vstack(pts)
    return ScenarioSet(pts, np.concatenate(wts), "alpha-grid",
                       tuple(names or ()) or _default_names(len(sets)), levels=tuple(levels.tolist()))


def concat_scenarios(first: ScenarioSet, second: ScenarioSet) -> ScenarioSet:
    if first.names != second.names:
        raise ValueError("cannot concatenate scenario sets with different binding order")
    return ScenarioSet(np.vstack([first.points, second.points]),
                       np.concatenate([first.weights, second.weights]),
                       first.provenance, first.names, first.seed, first.levels, dict(first.meta))


def families(models: Iterable[UncertaintyModel]) -> set[str]:
    return {m.family for m in models}
