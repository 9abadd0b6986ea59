"""Stochastic simulation and linear-quadratic regulator machinery.

Euler-Maruyama ensembles for ``dx = f(x, u) dt + b(x) dw`` and a Newton-Kleinman
solver for the continuous algebraic Riccati equation, combined into closed-loop
rollout ensembles.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np
from scipy import linalg

from . import usets
from .model import DynamicsSpec, TimeGrid, spec_drift

__all__ = [
    "SdeModel",
    "PathEnsemble",
    "euler_maruyama",
    "LqrSpec",
    "NotStabilizableError",
    "care_residual",
    "lqr_gain",
    "seed_gain",
    "solve_care",
    "LqrEnsemble",
    "lqr_rollout_ensemble",
]


# ---------------------------------------------------------------------------
# stochastic differential equations
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SdeModel:
    """Drift from a :class:`DynamicsSpec` plus a diffusion ``b(x)`` of shape ``(n_s, n_w)``.

    Parameters
    ----------
    drift : DynamicsSpec
        Deterministic part. Symbolic coefficients are looked up in ``values``.
    diffusion : tuple or array_like or None
        ``("constant", matrix)``, ``("diagonal_state", scale)`` (``b = diag(scale * x)``),
        a plain ``(n_s, n_w)`` matrix, or None for the drift spec's own diffusion
        (zero when that is absent too).
    values : mapping, optional
        Numbers for symbolic drift coefficients.
    control : callable, optional
        Feedback ``u = control(t, X)`` with ``X`` of shape ``(n_paths, n_s)``; zero
        controls when omitted.
    """

    drift: DynamicsSpec
    diffusion: object = None
    values: Mapping = field(default_factory=dict)
    control: Callable | None = None

    def __post_init__(self):
        diff = self.drift.diffusion if self.diffusion is None else self.diffusion
        if diff is None:
            diff = ("constant", np.zeros((self.drift.n_s, 1)))
        elif not (isinstance(diff, tuple) and len(diff) == 2 and isinstance(diff[0], str)):
            diff = ("constant", diff)
        kind, val = diff
        if kind == "constant":
            val = np.atleast_2d(np.asarray(val, dtype=float))
            if val.shape[0] != self.drift.n_s:
                raise ValueError(f"diffusion has {val.shape[0]} rows for {self.drift.n_s} states")
        elif kind == "diagonal_state":
            val = np.atleast_1d(np.asarray(val, dtype=float))
            if val.size != self.drift.n_s:
                raise ValueError(f"diagonal diffusion needs {self.drift.n_s} scales")
        else:
            raise ValueError(f"unknown diffusion kind {kind!r}")
        object.__setattr__(self, "diffusion", (kind, val))

    @property
    def n_s(self) -> int:
        return self.drift.n_s

    @property
    def n_w(self) -> int:
        kind, val = self.diffusion
        return val.shape[1] if kind == "constant" else val.size

    def f(self, t, X) -> np.ndarray:
        n = X.shape[0]
        U = np.zeros((n, self.drift.n_u)) if self.control is None else np.broadcast_to(
            np.asarray(self.control(t, X), dtype=float), (n, self.drift.n_u))

        def resolve(v):
            return float(self.values[v]) if isinstance(v, str) else v

        return spec_drift(self.drift, X, U, resolve)

    def b_dw(self, X, dW) -> np.ndarray:
        """Diffusion increment ``b(x) dW`` for stacked paths."""
        kind, val = self.diffusion
        if kind == "constant":
            return dW @ val.T
        return val * X * dW

    @classmethod
    def linear(cls, A, B=None, diffusion=None, control=None) -> "SdeModel":
        """Numeric linear drift ``A x + B u``."""
        A = np.atleast_2d(np.asarray(A, dtype=float))
        B = np.zeros((A.shape[0], 0)) if B is None else np.atleast_2d(np.asarray(B, dtype=float))
        n, m = A.shape[0], B.shape[1]
        spec = DynamicsSpec("linear", tuple(f"x{i + 1}" for i in range(n)), tuple(f"u{j + 1}" for j in range(m)),
                            tuple(tuple(float(v) for v in r) for r in A),
                            tuple(tuple(float(v) for v in r) for r in B), (0.0,) * n)
        return cls(spec, diffusion, {}, control)


@dataclass
class PathEnsemble:
    """Simulated paths ``paths[p, k, i]`` at times ``t[k]``."""

    t: np.ndarray
    paths: np.ndarray
    diverged: np.ndarray
    seed: int

    @property
    def mean(self) -> np.ndarray:
        return np.nanmean(self.paths[~self.diverged], axis=0)

    @property
    def std(self) -> np.ndarray:
        return np.nanstd(self.paths[~self.diverged], axis=0)


def _times(grid) -> np.ndarray:
    t = grid.times if isinstance(grid, TimeGrid) else np.asarray(grid, dtype=float)
    t = np.asarray(t, dtype=float)
    if t.ndim != 1 or t.size < 2 or np.any(np.diff(t) <= 0):
        raise ValueError("grid needs at least two strictly increasing times")
    return t


def noise_block(seed: int, n_paths: int, steps: int, n_w: int) -> np.ndarray:
    """Standard normal increments ``(n_paths, steps, n_w)`` from one Philox stream.

    The block is filled path by path, so path ``p`` sees the same numbers whatever
    the total number of paths.
    """
    gen = np.random.Generator(np.random.Philox(seed))
    return gen.standard_normal((n_paths, steps, n_w))


def euler_maruyama(model: SdeModel, x0, grid, n_paths: int, seed: int = 0) -> PathEnsemble:
    """Explicit Euler-Maruyama ensemble.

    ``x_{k+1} = x_k + f(t_k, x_k) h_k + b(x_k) sqrt(h_k) z_k`` with independent standard
    normal ``z_k``.  ``x0`` is one state or one state per path.  Paths whose state
    becomes non-finite are flagged in ``diverged`` and held at NaN.
    """
    if n_paths < 1:
        raise ValueError("n_paths must be >= 1")
    t = _times(grid)
    h = np.diff(t)
    n = model.n_s
    X = np.broadcast_to(np.asarray(x0, dtype=float).reshape(-1, n), (n_paths, n)).copy()
    out = np.empty((n_paths, t.size, n))
    out[:, 0] = X
    Z = noise_block(seed, n_paths, h.size, model.n_w)
    diverged = ~np.all(np.isfinite(X), axis=1)
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(h.size):
            X = X + model.f(t[k], X) * h[k] + model.b_dw(X, np.sqrt(h[k]) * Z[:, k])
            bad = ~np.all(np.isfinite(X), axis=1)
            diverged |= bad
            X[diverged] = np.nan
            out[:, k + 1] = X
    return PathEnsemble(t, out, diverged, seed)


# ---------------------------------------------------------------------------
# Riccati
# ---------------------------------------------------------------------------


class NotStabilizableError(ValueError):
    """No stabilizing Riccati solution was found."""


@dataclass(frozen=True)
class LqrSpec:
    """Infinite-horizon regulator data; ``ref`` is the state reference."""

    A: np.ndarray
    B: np.ndarray
    Q: np.ndarray
    R: np.ndarray
    ref: np.ndarray | None = None

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        n = A.shape[0]
        B = np.asarray(self.B, dtype=float).reshape(n, -1)
        Q = np.atleast_2d(np.asarray(self.Q, dtype=float))
        R = np.atleast_2d(np.asarray(self.R, dtype=float))
        if A.shape != (n, n) or Q.shape != (n, n) or R.shape != (B.shape[1],) * 2:
            raise ValueError("inconsistent LQR dimensions")
        if not (np.allclose(Q, Q.T) and np.allclose(R, R.T)):
            raise ValueError("Q and R must be symmetric")
        if np.min(np.linalg.eigvalsh(Q)) < -1e-12:
            raise ValueError("Q must be positive semidefinite")
        if np.min(np.linalg.eigvalsh(R)) <= 0:
            raise ValueError("R must be positive definite")
        ref = np.zeros(n) if self.ref is None else np.asarray(self.ref, dtype=float).reshape(n)
        for k, v in (("A", A), ("B", B), ("Q", Q), ("R", R), ("ref", ref)):
            object.__setattr__(self, k, v)

    @classmethod
    def scalar(cls, a=1.0, b=1.0, q=1.0, r=1.0, ref=0.0) -> "LqrSpec":
        return cls([[a]], [[b]], [[q]], [[r]], [ref])


def care_residual(spec: LqrSpec, P) -> float:
    """Frobenius norm of ``A'P + PA - P B R^-1 B' P + Q``."""
    A, B, Q, R = spec.A, spec.B, spec.Q, spec.R
    res = A.T @ P + P @ A - P @ B @ np.linalg.solve(R, B.T @ P) + Q
    return float(np.linalg.norm(res, "fro"))


def lqr_gain(spec: LqrSpec, P) -> np.ndarray:
    """``K = R^-1 B' P``."""
    return np.linalg.solve(spec.R, spec.B.T @ P)


def _stable(M, margin: float = 0.0) -> bool:
    """All eigenvalues have real part below ``-margin``."""
    return bool(np.max(np.linalg.eigvals(M).real) < -margin) if M.size else True


def seed_gain(spec: LqrSpec) -> np.ndarray:
    """Stabilizing starting gain: zero for stable ``A``, otherwise Bass's method.

    Bass's gain ``K = R^-1 B' Z^-1`` uses the Gramian-like ``Z`` solving
    ``(A + beta I) Z + Z (A + beta I)' = 2 B R^-1 B'`` with ``beta`` above the
    spectral abscissa of ``-A``, and needs ``(A, B)`` controllable.
    """
    A, B, R = spec.A, spec.B, spec.R
    n = A.shape[0]
    # a nearly marginal A makes the first Lyapunov solve singular, so demand a margin
    if _stable(A, 1e-6 * max(1.0, np.linalg.norm(A))):
        return np.zeros((B.shape[1], n))
    beta = float(np.max(np.abs(np.linalg.eigvals(A)))) + 1.0
    Ab = A + beta * np.eye(n)
    W = 2.0 * B @ np.linalg.solve(R, B.T)
    Z = linalg.solve_continuous_lyapunov(Ab, W)
    Z = 0.5 * (Z + Z.T)
    if np.min(np.linalg.eigvalsh(Z)) <= 1e-12 * max(1.0, np.max(np.abs(Z))):
        raise NotStabilizableError("(A, B) is not controllable; no stabilizing seed gain")
    K = np.linalg.solve(R, B.T @ np.linalg.inv(Z))
    if not _stable(A - B @ K):
        raise NotStabilizableError("seed gain does not stabilize A - BK")
    return K


def solve_care(spec: LqrSpec, tol: float = 1e-13, max_iter: int = 100, K0=None) -> np.ndarray:
    """Stabilizing solution of the continuous algebraic Riccati equation.

    Newton-Kleinman: from a stabilizing ``K_i`` solve the Lyapunov equation
    ``(A - B K_i)' P + P (A - B K_i) = -(Q + K_i' R K_i)`` and set ``K_{i+1} = R^-1 B' P``.

    Raises
    ------
    NotStabilizableError
        No stabilizing seed, loss of stability, or no convergence within ``max_iter``.
    """
    A, B, Q, R = spec.A, spec.B, spec.Q, spec.R
    K = seed_gain(spec) if K0 is None else np.atleast_2d(np.asarray(K0, dtype=float))
    if not _stable(A - B @ K):
        raise NotStabilizableError("initial gain is not stabilizing")
    P_prev = None
    for _ in range(max_iter):
        Ak = A - B @ K
        P = linalg.solve_continuous_lyapunov(Ak.T, -(Q + K.T @ R @ K))
        P = 0.5 * (P + P.T)
        K = lqr_gain(spec, P)
        if not _stable(A - B @ K):
            raise NotStabilizableError("Newton-Kleinman iterate lost stability")
        if P_prev is not None and np.linalg.norm(P - P_prev) <= tol * max(1.0, np.linalg.norm(P)):
            break
        P_prev = P
    else:
        raise NotStabilizableError(f"Newton-Kleinman did not converge in {max_iter} iterations")
    res = care_residual(spec, P)
    if res > 1e-8 * max(1.0, np.linalg.norm(Q), np.linalg.norm(P)):
        raise NotStabilizableError(f"Riccati residual {res:.3e} too large")
    return P


# ---------------------------------------------------------------------------
# closed-loop ensembles
# ---------------------------------------------------------------------------


@dataclass
class LqrEnsemble:
    t: np.ndarray
    paths: np.ndarray
    mean: np.ndarray
    std: np.ndarray
    P: np.ndarray
    K: np.ndarray
    residual: float
    closed_loop_eigs: np.ndarray
    diverged: np.ndarray


def default_horizon(spec: LqrSpec, K, constants: float = 5.0) -> float:
    """``constants`` times the slowest closed-loop time constant."""
    lam = np.linalg.eigvals(spec.A - spec.B @ K).real
    slow = float(np.min(np.abs(lam))) if lam.size else 1.0
    return constants / slow if slow > 0 else constants


def _initial_states(x0, n, n_paths, seed):
    if isinstance(x0, usets.UncertaintyModel):
        x0 = [x0]
    if isinstance(x0, (list, tuple)) and x0 and all(isinstance(m, usets.UncertaintyModel) for m in x0):
        if len(x0) != n:
            raise ValueError(f"need one initial-state model per state ({n})")
        s = int(np.random.SeedSequence([seed, 1]).generate_state(1)[0])
        return usets.sample_stochastic(list(x0), n_paths, s).points
    arr = np.asarray(x0, dtype=float)
    if arr.size == n:
        return np.broadcast_to(arr.reshape(1, n), (n_paths, n)).copy()
    return arr.reshape(n_paths, n)


def lqr_rollout_ensemble(spec: LqrSpec, noise, x0, grid=None, n_paths: int = 1000, seed: int = 0,
                         feedback: bool = True, n_nodes: int = 501) -> LqrEnsemble:
    """Monte Carlo rollouts of ``u = -K (x - ref)`` with ``K = R^-1 B' P``.

    Parameters
    ----------
    noise : array_like or None
        Constant process-noise matrix ``b`` (``(n_s, n_w)``); None or 0 for none.
    x0 : array_like or sequence of uncertainty models
        Fixed start, per-path starts, or one stochastic model per state.
    grid : TimeGrid or array_like, optional
        Defaults to ``n_nodes`` uniform nodes over five slowest closed-loop time constants.
    feedback : bool
        With False the gain is zero (open loop) while ``P`` and ``K`` are still reported.
    """
    P = solve_care(spec)
    K = lqr_gain(spec, P)
    K_used = K if feedback else np.zeros_like(K)
    n = spec.A.shape[0]
    if grid is None:
        grid = np.linspace(0.0, default_horizon(spec, K), n_nodes)
    b = np.zeros((n, 1)) if noise is None or np.ndim(noise) == 0 and float(noise) == 0.0 else noise
    if np.ndim(b) == 0:
        b = float(b) * np.eye(n)
    ref = spec.ref

    def control(t, X):
        return -(X - ref) @ K_used.T

    model = SdeModel.linear(spec.A, spec.B, ("constant", np.atleast_2d(np.asarray(b, dtype=float)).reshape(n, -1)),
                            control)
    ens = euler_maruyama(model, _initial_states(x0, n, n_paths, seed), grid, n_paths, seed)
    ok = ~ens.diverged
    mean = ens.paths[ok].mean(axis=0) if ok.any() else np.full(ens.paths.shape[1:], np.nan)
    std = ens.paths[ok].std(axis=0) if ok.any() else np.full(ens.paths.shape[1:], np.nan)
    return LqrEnsemble(ens.t, ens.paths, mean, std, P, K, care_residual(spec, P),
                       np.linalg.eigvals(spec.A - spec.B @ K), ens.diverged)
