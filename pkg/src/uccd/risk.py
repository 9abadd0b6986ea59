"""Scalar risk measures and constraint treatments over scenario-evaluated quantities."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from scipy.stats import norm

from .usets import ALPHA_FLOOR, FuzzySet, alpha_levels


@dataclass(frozen=True)
class SampleStats:
    mean: float
    std: float
    n: int
    min: float
    max: float


def sample_stats(values) -> SampleStats:
    """Mean and unbiased (n - 1) standard deviation."""
    v = np.asarray(values, dtype=float).ravel()
    if v.size < 2:
        raise ValueError("standard deviation needs at least two values")
    return SampleStats(float(v.mean()), float(v.std(ddof=1)), int(v.size), float(v.min()), float(v.max()))


def population_std(values, weights=None, axis=-1):
    """``sqrt(E[g^2] - E[g]^2)`` evaluated as the weighted mean squared deviation."""
    v = np.asarray(values, dtype=float)
    if weights is None:
        weights = np.full(v.shape[axis], 1.0 / v.shape[axis])
    w = np.asarray(weights, dtype=float)
    v = np.moveaxis(v, axis, -1)
    mu = v @ w
    return np.sqrt(np.maximum(((v - mu[..., None]) ** 2) @ w, 0.0))


def _tail_weights(values, gamma, weights=None):
    """Weights (summing to one) of the upper ``1 - gamma`` probability mass."""
    v = np.asarray(values, dtype=float).ravel()
    w = np.full(v.size, 1.0 / v.size) if weights is None else np.asarray(weights, dtype=float).ravel()
    order = np.argsort(v, kind="stable")[::-1]
    beta = 1.0 - gamma
    taken = np.zeros(v.size)
    remaining = beta
    for i in order:
        if remaining <= 0:
            break
        take = min(w[i], remaining)
        taken[i] = take
        remaining -= take
    return taken / beta


def cvar(values, gamma: float, weights=None) -> float:
    """Conditional value-at-risk of the upper tail (fractional-tail convention)."""
    if not 0.0 < gamma < 1.0:
        raise ValueError("confidence level must lie in (0, 1)")
    v = np.asarray(values, dtype=float).ravel()
    if v.size == 0:
        raise ValueError("cvar of an empty sample")
    return float(np.dot(_tail_weights(v, gamma, weights), v))


def cvar_weights(values, gamma: float, weights=None) -> np.ndarray:
    """Gradient of :func:`cvar` with respect to the sample values."""
    return _tail_weights(values, gamma, weights)


def value_at_risk(values, gamma: float, weights=None) -> float:
    """Lower ``gamma``-quantile: smallest value whose cumulative mass reaches ``gamma``."""
    v = np.asarray(values, dtype=float).ravel()
    w = np.full(v.size, 1.0 / v.size) if weights is None else np.asarray(weights, dtype=float).ravel()
    order = np.argsort(v, kind="stable")
    cum = np.cumsum(w[order])
    k = min(int(np.searchsorted(cum, gamma - 1e-12, side="left")), v.size - 1)
    return float(v[order][k])


def empirical_failure_prob(g_values, weights=None) -> float:
    g = np.asarray(g_values, dtype=float).ravel()
    if g.size == 0:
        raise ValueError("no samples")
    if weights is None:
        return float(np.count_nonzero(g >= 0) / g.size)
    return float(np.dot(np.asarray(weights, dtype=float), g >= 0))


def gaussian_chance_margin(mu, sigma, p_fail: float):
    """Deterministic equivalent ``mu + z_{1-P_f} sigma`` of ``P[g >= 0] <= P_f``."""
    if not 0.0 < p_fail < 1.0:
        raise ValueError("target failure probability must lie in (0, 1)")
    return mu + norm.ppf(1.0 - p_fail) * sigma


def system_failure_prob(g_matrix, weights=None) -> float:
    """Probability that any constraint fails (series system)."""
    g = np.atleast_2d(np.asarray(g_matrix, dtype=float))
    if g.size == 0:
        raise ValueError("no samples")
    return empirical_failure_prob(np.where(np.any(g >= 0, axis=1), 0.0, -1.0), weights)


def crra_utility(o_value, rho: float):
    """Constant relative risk-averse utility ``(o^(1-rho) - 1) / (1 - rho)``."""
    o = np.asarray(o_value, dtype=float)
    if np.any(o <= 0):
        raise ValueError("utility is defined for positive outcomes only")
    if rho < 0:
        raise ValueError("rho must be >= 0")
    if abs(1.0 - rho) < 1e-9:
        u = np.log(o)
    else:
        u = (o ** (1.0 - rho) - 1.0) / (1.0 - rho)
    return float(u) if u.ndim == 0 else u


def expected_utility(o_samples, rho: float, weights=None) -> float:
    u = np.atleast_1d(crra_utility(np.asarray(o_samples, dtype=float), rho))
    if weights is None:
        return float(u.mean())
    return float(np.dot(weights, u))


def certainty_equivalent(o_samples, rho: float) -> float:
    """Outcome whose utility equals the expected utility."""
    eu = expected_utility(o_samples, rho)
    if abs(1.0 - rho) < 1e-9:
        return math.exp(eu)
    return (1.0 + (1.0 - rho) * eu) ** (1.0 / (1.0 - rho))


def discounted_expectation(g_series, gamma: float, times) -> float:
    """Scenario mean of the exponentially discounted, normalized time average.

    Finite-horizon stand-in for the long-run discounted expectation; each scenario
    contributes ``int e^{-gamma t} g dt / int e^{-gamma t} dt`` with trapezoidal
    quadrature on ``times``.
    """
    if gamma < 0:
        raise ValueError("discount must be >= 0")
    g = np.atleast_2d(np.asarray(g_series, dtype=float))
    t = np.asarray(getattr(times, "times", times), dtype=float)
    if g.shape[1] != t.size:
        raise ValueError("series length does not match the time grid")
    h = np.diff(t)
    q = np.zeros(t.size)
    q[:-1] += h / 2
    q[1:] += h / 2
    w = q * np.exp(-gamma * (t - t[0]))
    return float(np.mean(g @ w) / w.sum())


def possibility_of_failure(pairs) -> float:
    """``POS[g >= 0]`` from ``(g_value, alpha_level)`` pairs of alpha-grid propagation."""
    arr = np.asarray(list(pairs), dtype=float).reshape(-1, 2)
    hit = arr[arr[:, 0] >= 0]
    return float(hit[:, 1].max()) if hit.size else 0.0


def necessity_of_failure(pairs) -> float:
    """``NEC[g >= 0] = 1 - POS[g < 0]``."""
    arr = np.asarray(list(pairs), dtype=float).reshape(-1, 2)
    ok = arr[arr[:, 0] < 0]
    return 1.0 - (float(ok[:, 1].max()) if ok.size else 0.0)


@dataclass(frozen=True)
class Bpa:
    """Basic probability assignment: focal subsets of a finite frame with masses."""

    focal: tuple

    def __post_init__(self):
        items = tuple((frozenset(s), float(m)) for s, m in self.focal)
        if any(m <= 0 for _, m in items):
            raise ValueError("focal element masses must be positive")
        if abs(sum(m for _, m in items) - 1.0) > 1e-12:
            raise ValueError("masses must sum to one")
        object.__setattr__(self, "focal", items)

    @property
    def frame(self) -> frozenset:
        return frozenset().union(*(s for s, _ in self.focal))


def belief_plausibility(bpa: Bpa, event: Iterable) -> tuple[float, float]:
    e = frozenset(event)
    bel = sum(m for s, m in bpa.focal if s <= e)
    pl = sum(m for s, m in bpa.focal if s & e)
    return float(bel), float(pl)


def consonant_bpa(levels: Sequence[float], members: Sequence[Iterable]) -> Bpa:
    """Nested focal elements from alpha levels (ascending) and their cut members."""
    lv = np.asarray(levels, dtype=float)
    masses = np.diff(np.concatenate([[0.0], lv]))
    items = [(frozenset(m), w) for m, w in zip(members, masses) if w > 0]
    total = sum(w for _, w in items)
    return Bpa(tuple((s, w / total) for s, w in items))


def alpha_quadrature_weights(n_levels: int) -> np.ndarray:
    """Trapezoid weights on the unclamped grid ``alpha_j = j/(n_levels-1)``."""
    h = 1.0 / (n_levels - 1)
    q = np.full(n_levels, h)
    q[0] = q[-1] = h / 2
    return q


def level_envelopes(values, levels, grid):
    """Lower/upper envelopes of the output alpha-cuts.

    ``values[..., s]`` is the output at scenario ``s`` whose alpha level is
    ``levels[s]``.  The cut at grid level ``a`` spans every scenario with level
    ``>= a`` so the envelopes are nested even for non-monotone propagation.
    Returns ``(lo, hi, arg_lo, arg_hi)`` with the level axis last.
    """
    v = np.asarray(values, dtype=float)
    lv = np.asarray(levels, dtype=float)
    lo, hi, alo, ahi = [], [], [], []
    for a in grid:
        idx = np.nonzero(lv >= a - 1e-12)[0]
        sub = v[..., idx]
        i_lo = np.argmin(sub, axis=-1)
        i_hi = np.argmax(sub, axis=-1)
        lo.append(np.take_along_axis(sub, i_lo[..., None], -1)[..., 0])
        hi.append(np.take_along_axis(sub, i_hi[..., None], -1)[..., 0])
        alo.append(idx[i_lo])
        ahi.append(idx[i_hi])
    return np.stack(lo, -1), np.stack(hi, -1), np.stack(alo, -1), np.stack(ahi, -1)


def level_expectation(values, levels, grid):
    """Fuzzy expected value ``1/2 int_0^1 (L(a) + U(a)) da`` of alpha-propagated outputs."""
    lo, hi, _, _ = level_envelopes(values, levels, grid)
    q = alpha_quadrature_weights(len(grid))
    return 0.5 * (lo + hi) @ q


def fuzzy_expected_value(fuzzy: FuzzySet, n_levels: int = 1001, floor: float = ALPHA_FLOOR) -> float:
    """Credibility expected value of a fuzzy number by alpha-grid quadrature.

    Changing variables in ``int Cr{x >= r} dr - int Cr{x <= r} dr`` from ``r`` to the
    alpha level gives ``1/2 int_0^1 (lo(a) + hi(a)) da`` over the alpha-cuts.
    """
    levels = alpha_levels(n_levels, floor)
    cuts = np.array([fuzzy.alpha_cut(float(a)) for a in levels])
    return float(0.5 * (cuts[:, 0] + cuts[:, 1]) @ alpha_quadrature_weights(n_levels))


TREATMENTS = (
    "nominal", "expectation", "discounted", "mean-std", "cvar", "utility", "chance",
    "system-chance", "worst-case", "possibilistic", "evidence",
)


@dataclass(frozen=True)
class RiskConfig:
    """Constraint treatment with its parameters.

    ``params`` keys by treatment: mean-std ``k_s`` or ``sigma_a``; cvar ``gamma``;
    utility ``rho``; chance ``p_f`` (and ``mode``); system-chance ``p_f_sys``;
    discounted ``gamma``; possibilistic ``pos_f``; evidence ``measure`` and ``level``.
    """

    treatment: str = "expectation"
    params: tuple = ()

    def __post_init__(self):
        if isinstance(self.params, dict):
            object.__setattr__(self, "params", tuple(sorted(self.params.items())))
        if self.treatment not in TREATMENTS:
            raise ValueError(f"unknown treatment {self.treatment!r}")
        p = dict(self.params)
        t = self.treatment
        if t == "cvar" and not 0 < p.get("gamma", 0.9) < 1:
            raise ValueError("cvar gamma must lie in (0, 1)")
        if t == "chance" and not 0 < p.get("p_f", 0.05) < 1:
            raise ValueError("chance p_f must lie in (0, 1)")
        if t == "system-chance" and not 0 < p.get("p_f_sys", 0.05) < 1:
            raise ValueError("system p_f must lie in (0, 1)")
        if t == "utility" and p.get("rho", 0.0) < 0:
            raise ValueError("rho must be >= 0")
        if t == "mean-std" and p.get("k_s", 0.0) < 0:
            raise ValueError("k_s must be >= 0")
        if t == "discounted" and p.get("gamma", 0.0) < 0:
            raise ValueError("discount must be >= 0")
        if t == "possibilistic" and not 0 < p.get("pos_f", 0.5) <= 1:
            raise ValueError("pos_f must lie in (0, 1]")
        if t == "evidence" and p.get("measure", "belief") not in ("belief", "plausibility"):
            raise ValueError("evidence measure must be belief or plausibility")

    def get(self, key, default=None):
        return dict(self.params).get(key, default)
