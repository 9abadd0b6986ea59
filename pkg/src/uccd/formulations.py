"""Compile an uncertain problem into a deterministic NLP under each formulation.

Every scenario carries its own state trajectory and its own defect block, so the
dynamics hold at every parameterized point.  Formulations only differ in how the
per-scenario objective values ``o[s]`` and constraint rows ``G[s, r]`` are reduced
over scenarios.

Gradients are assembled in reverse: each reduction supplies the derivative of its
outputs with respect to ``o`` and ``G`` analytically, and the node-local problem
functions are differentiated by central differences.  Because every node-local
channel depends on one node only, perturbing one input channel at all nodes and
all scenarios at once yields a full Jacobian column block per evaluation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Mapping, Sequence

import numpy as np
from scipy.special import expit
from scipy.stats import norm

from . import model as M
from . import usets
from .risk import alpha_quadrature_weights, cvar_weights, level_envelopes

STRUCTURES = ("olsc", "olmc")


class CompatibilityError(ValueError):
    """The formulation cannot use the problem's uncertainty renderings."""


# ---------------------------------------------------------------------------
# scenario reductions
# ---------------------------------------------------------------------------


class Reduction:
    """Maps ``V[s, r]`` (scenarios x rows) to constraint or objective values."""

    label = ""

    def value(self, V):
        raise NotImplementedError

    def vjp(self, V, y):
        raise NotImplementedError


class Mean(Reduction):
    label = "expectation"

    def __init__(self, w):
        self.w = np.asarray(w, dtype=float)

    def value(self, V):
        return self.w @ V

    def vjp(self, V, y):
        return self.w[:, None] * y[None, :]


def _pop_std(w, V):
    mu = w @ V
    dev = V - mu
    sig = np.sqrt(np.maximum(w @ (dev * dev), 0.0))
    return mu, dev, sig


class MeanStd(Reduction):
    """``mean + k * std`` with the population (weighted) standard deviation."""

    label = "mean-std"

    def __init__(self, w, k):
        self.w = np.asarray(w, dtype=float)
        self.k = np.asarray(k, dtype=float)

    def value(self, V):
        mu, _, sig = _pop_std(self.w, V)
        return mu + self.k * sig

    def vjp(self, V, y):
        _, dev, sig = _pop_std(self.w, V)
        safe = np.where(sig > 1e-300, sig, 1.0)
        dsig = np.where(sig > 1e-300, 1.0, 0.0) * self.w[:, None] * dev / safe
        return self.w[:, None] * y[None, :] + dsig * (self.k * y)[None, :]


class Std(Reduction):
    """``std - cap``."""

    label = "std-cap"

    def __init__(self, w, cap):
        self.w = np.asarray(w, dtype=float)
        self.cap = np.asarray(cap, dtype=float)

    def value(self, V):
        return _pop_std(self.w, V)[2] - self.cap

    def vjp(self, V, y):
        _, dev, sig = _pop_std(self.w, V)
        safe = np.where(sig > 1e-300, sig, 1.0)
        return np.where(sig > 1e-300, 1.0, 0.0) * self.w[:, None] * dev / safe * y[None, :]


class SmoothChance(Reduction):
    """``sum_s w_s sigmoid(V / tau) - p_f`` with ``tau = factor * scale``.

    :func:`uccd.solve.solve` sets ``factor = base_factor * 0.5**r`` on restart ``r``.
    """

    label = "chance-saa"

    def __init__(self, w, p_f, scale, factor=0.05):
        self.w = np.asarray(w, dtype=float)
        self.p_f = np.asarray(p_f, dtype=float)
        self.scale = np.asarray(scale, dtype=float)
        self.base_factor = self.factor = factor

    @property
    def tau(self):
        return self.factor * self.scale

    def value(self, V):
        return self.w @ expit(V / self.tau) - self.p_f

    def vjp(self, V, y):
        s = expit(V / self.tau)
        return self.w[:, None] * s * (1 - s) / self.tau * y[None, :]


class Cvar(Reduction):
    label = "cvar"

    def __init__(self, w, gamma):
        self.w = np.asarray(w, dtype=float)
        self.gamma = float(gamma)

    def value(self, V):
        return np.array([cvar_weights(V[:, r], self.gamma, self.w) @ V[:, r] for r in range(V.shape[1])])

    def vjp(self, V, y):
        return np.column_stack([cvar_weights(V[:, r], self.gamma, self.w) * y[r] for r in range(V.shape[1])])


class Each(Reduction):
    """Every scenario enforced separately (row-major: scenario, then row)."""

    label = "worst-case"

    def value(self, V):
        return V.ravel()

    def vjp(self, V, y):
        return y.reshape(V.shape)


class LevelExpectation(Reduction):
    """Fuzzy expected value ``1/2 int (L + U) d alpha`` over alpha-grid scenarios."""

    label = "fuzzy-expectation"

    def __init__(self, levels, grid):
        self.levels = np.asarray(levels, dtype=float)
        self.grid = np.asarray(grid, dtype=float)
        self.qw = alpha_quadrature_weights(len(self.grid))

    def value(self, V):
        lo, hi, _, _ = level_envelopes(V.T, self.levels, self.grid)
        return 0.5 * (lo + hi) @ self.qw

    def vjp(self, V, y):
        _, _, alo, ahi = level_envelopes(V.T, self.levels, self.grid)
        out = np.zeros_like(V)
        R = V.shape[1]
        for r in range(R):
            np.add.at(out[:, r], alo[r], 0.5 * self.qw * y[r])
            np.add.at(out[:, r], ahi[r], 0.5 * self.qw * y[r])
        return out


@dataclass
class Group:
    """A reduction applied to selected rows of selected scenarios."""

    red: Reduction
    rows: np.ndarray
    scen: np.ndarray
    name: str = ""

    def value(self, G):
        return self.red.value(G[np.ix_(self.scen, self.rows)])

    def vjp_into(self, G, y, out):
        out[np.ix_(self.scen, self.rows)] += self.red.vjp(G[np.ix_(self.scen, self.rows)], y)

    def size(self, S):
        n = len(self.rows)
        return n * len(self.scen) if isinstance(self.red, Each) else n


@dataclass
class ObjectiveTerm:
    coef: float
    red: Reduction
    scen: np.ndarray


# ---------------------------------------------------------------------------
# compiled NLP
# ---------------------------------------------------------------------------


@dataclass
class Layout:
    slices: dict
    shapes: dict
    n: int

    def view(self, x, name):
        return x[self.slices[name]].reshape(self.shapes[name])


@dataclass
class Evaluation:
    x: np.ndarray
    U: np.ndarray
    X: np.ndarray
    P: np.ndarray
    Y: np.ndarray
    E: np.ndarray
    o: np.ndarray
    G: np.ndarray
    H: np.ndarray
    D: np.ndarray
    T: np.ndarray
    f: float
    c_eq: np.ndarray
    c_in: np.ndarray


@dataclass
class WcrSubproblem:
    """Inner maximization of one inequality entry over crisp sets.

    ``evaluate(x, Q)`` returns the entry's maximum over nodes for each row of the
    scenario matrix ``Q`` at outer point ``x``.
    """

    index: int
    name: str
    sets: tuple
    mode: str
    evaluate: Callable
    names: tuple = ()


class CompiledNlp:
    """Flat deterministic NLP over ``[controls | states | statics]``."""

    def __init__(self, problem: M.UccdProblem, scenarios: usets.ScenarioSet, structure: str, tag: str,
                 objective: Sequence[ObjectiveTerm] | None = None, groups: Sequence[Group] | None = None,
                 flags: Sequence[str] = (), meta: dict | None = None):
        if structure not in STRUCTURES:
            raise ValueError(f"structure must be one of {STRUCTURES}")
        if scenarios.n < 1:
            raise ValueError("need at least one scenario")
        self.problem = problem
        self.kernel = problem.kernel()
        self.scenarios = scenarios
        self.structure = structure
        self.tag = tag
        self.flags = list(flags)
        self.meta = dict(meta or {})
        self.scen = M.scenario_data(problem, scenarios.names, scenarios.points)
        k = self.kernel
        S, N = scenarios.n, k.N
        self.S, self.N = S, N
        self.n_ctrl = 1 if structure == "olsc" else S
        self.ctrl_of = np.zeros(S, dtype=int) if structure == "olsc" else np.arange(S)
        sizes = [("controls", (self.n_ctrl, N, k.n_u)), ("states", (S, N, k.n_s)), ("statics", (k.n_p,))]
        slices, shapes, off = {}, {}, 0
        for name, shape in sizes:
            size = int(np.prod(shape))
            slices[name] = slice(off, off + size)
            shapes[name] = shape
            off += size
        self.layout = Layout(slices, shapes, off)
        w = np.full(S, 1.0 / S)
        self.objective = list(objective) if objective is not None else [ObjectiveTerm(1.0, Mean(w), np.arange(S))]
        self.groups = list(groups) if groups is not None else [
            Group(Mean(w), np.arange(k.n_g), np.arange(S), "expectation")] if k.n_g else []
        # terminal handling: fixed per scenario unless OLSC with several scenarios
        b = problem.boundary
        self.terminal_mean = structure == "olsc" and S > 1 and bool(b.maskf.any())
        if self.terminal_mean:
            self.flags.append("olsc-terminal-mean")
        self._bounds()
        self._jac_cache = None
        self.fd_step = 1e-6

    # -- layout -------------------------------------------------------------

    @property
    def n(self) -> int:
        return self.layout.n

    def unpack(self, x):
        lay = self.layout
        return lay.view(x, "controls"), lay.view(x, "states"), lay.view(x, "statics")

    def pack(self, U, X, P):
        return np.concatenate([np.ravel(U), np.ravel(X), np.ravel(P)]).astype(float)

    def _bounds(self):
        p, k = self.problem, self.kernel
        S, N = self.S, self.N
        Ul = np.full((self.n_ctrl, N, k.n_u), -np.inf)
        Uh = np.full_like(Ul, np.inf)
        for name, lo, hi in p.constraints.control_bounds:
            j = k.controls.index(name)
            Ul[..., j], Uh[..., j] = lo, hi
        Xl = np.full((S, N, k.n_s), -np.inf)
        Xh = np.full_like(Xl, np.inf)
        for name, lo, hi in p.constraints.state_bounds:
            j = k.states.index(name)
            Xl[..., j], Xh[..., j] = lo, hi
        x0 = self.scen.xi0
        fixed0 = ~np.isnan(x0)
        Xl[:, 0][fixed0] = x0[fixed0]
        Xh[:, 0][fixed0] = x0[fixed0]
        if not self.terminal_mean:
            xf = p.boundary.valuesf()
            mf = p.boundary.maskf
            Xl[:, -1, mf] = xf[mf]
            Xh[:, -1, mf] = xf[mf]
        self.lower = self.pack(Ul, Xl, p.statics.lower)
        self.upper = self.pack(Uh, Xh, p.statics.upper)

    def fixed_mask(self):
        return self.lower == self.upper

    # -- evaluation -----------------------------------------------------------

    def _local(self, U, X, P):
        k, sc = self.kernel, self.scen
        Us = U[self.ctrl_of]
        return k.local(k.t, X, Us, P[None, :] + sc.p_shift, sc.constants, sc.signals, sc.noise)

    def _endpoint(self, X0, XF, P):
        return self.kernel.endpoint(X0, XF, P[None, :] + self.scen.p_shift, self.scen.constants)

    def evaluate(self, x) -> Evaluation:
        x = np.asarray(x, dtype=float)
        U, X, P = self.unpack(x)
        Y = self._local(U, X, P)
        E = self._endpoint(X[:, 0], X[:, -1], P)
        return self._finish(x, U, X, P, Y, E)

    def _finish(self, x, U, X, P, Y, E):
        o, G, H, D = self.kernel.assemble(Y, E, X)
        T = self._terminal(X)
        f = float(sum(t.coef * t.red.value(o[t.scen][:, None])[0] for t in self.objective))
        c_in = np.concatenate([g.value(G) for g in self.groups]) if self.groups else np.zeros(0)
        c_eq = np.concatenate([D.ravel(), H.ravel(), T])
        return Evaluation(x, U, X, P, Y, E, o, G, H, D, T, f, c_eq, c_in)

    def _terminal(self, X):
        if not self.terminal_mean:
            return np.zeros(0)
        b = self.problem.boundary
        return X[:, -1, b.maskf].mean(axis=0) - b.valuesf()[b.maskf]

    @property
    def n_eq(self):
        k = self.kernel
        return self.S * ((self.N - 1) * k.n_s + k.n_h) + (int(self.problem.boundary.maskf.sum()) if self.terminal_mean else 0)

    # -- derivatives ------------------------------------------------------------

    def _jacobians(self, ev: Evaluation):
        """Central-difference Jacobian blocks of the node-local and endpoint channels."""
        key = ev.x.tobytes()
        if self._jac_cache is not None and self._jac_cache[0] == key:
            return self._jac_cache[1]
        k, sc = self.kernel, self.scen
        U, X, P = ev.U, ev.X, ev.P
        Us = U[self.ctrl_of]
        n_s, n_u, n_p = k.n_s, k.n_u, k.n_p
        nb = 2 * (n_s + n_u + n_p)
        # one batched call: perturbation index on a new leading axis
        XB = np.broadcast_to(X, (nb,) + X.shape).copy()
        UB = np.broadcast_to(Us, (nb,) + Us.shape).copy()
        PB = np.broadcast_to(P[None, :] + sc.p_shift, (nb, self.S, n_p)).copy()
        steps = []
        b = 0
        for i in range(n_s):
            d = self.fd_step * np.maximum(1.0, np.abs(X[..., i]))
            XB[b, ..., i] += d
            XB[b + 1, ..., i] -= d
            steps.append(d)
            b += 2
        for j in range(n_u):
            d = (self.fd_step * np.maximum(1.0, np.abs(U[..., j])))[self.ctrl_of]
            UB[b, ..., j] += d
            UB[b + 1, ..., j] -= d
            steps.append(d)
            b += 2
        for m in range(n_p):
            d = self.fd_step * max(1.0, abs(P[m]))
            PB[b, :, m] += d
            PB[b + 1, :, m] -= d
            steps.append(d)
            b += 2
        YB = k.local(k.t, XB, UB, PB, sc.constants, sc.signals, sc.noise) if nb else None
        diffs = [(YB[2 * q] - YB[2 * q + 1]) / (2 * np.asarray(steps[q])[..., None]) for q in range(nb // 2)]
        jx, ju = diffs[:n_s], diffs[n_s:n_s + n_u]
        # endpoint channels: initial states, final states and statics in one call
        ne = 4 * n_s + 2 * n_p
        Pe = P[None, :] + sc.p_shift
        A0 = np.broadcast_to(X[:, 0], (ne,) + X[:, 0].shape).copy()
        Af = np.broadcast_to(X[:, -1], (ne,) + X[:, -1].shape).copy()
        PE = np.broadcast_to(Pe, (ne,) + Pe.shape).copy()
        esteps = []
        b = 0
        for i in range(n_s):
            d0, df = steps[i][:, 0], steps[i][:, -1]
            A0[b, :, i] += d0
            A0[b + 1, :, i] -= d0
            Af[b + 2, :, i] += df
            Af[b + 3, :, i] -= df
            esteps += [d0, df]
            b += 4
        for m in range(n_p):
            d = steps[n_s + n_u + m]
            PE[b, :, m] += d
            PE[b + 1, :, m] -= d
            esteps.append(d)
            b += 2
        EB = k.endpoint(A0, Af, PE, sc.constants) if ne else None
        ed = [(EB[2 * q] - EB[2 * q + 1]) / (2 * np.asarray(esteps[q])[..., None]) for q in range(ne // 2)]
        e0, ef = ed[0:2 * n_s:2], ed[1:2 * n_s:2]
        jp = [(diffs[n_s + n_u + m], ed[2 * n_s + m]) for m in range(n_p)]
        out = (jx, ju, jp, e0, ef)
        self._jac_cache = (key, out)
        return out

    def gradient(self, ev: Evaluation, w_f: float, y_eq, y_in) -> np.ndarray:
        """``w_f * grad f + J_eq^T y_eq + J_in^T y_in``."""
        k = self.kernel
        S, N = self.S, self.N
        # weights on per-scenario quantities
        w_o = np.zeros(S)
        for t in self.objective:
            w_o[t.scen] += w_f * t.coef * t.red.vjp(ev.o[t.scen][:, None], np.ones(1))[:, 0]
        W_G = np.zeros_like(ev.G)
        off = 0
        for g in self.groups:
            m = g.size(S)
            g.vjp_into(ev.G, np.asarray(y_in[off:off + m]), W_G)
            off += m
        nd = ev.D.size
        W_D = np.asarray(y_eq[:nd]).reshape(ev.D.shape)
        W_H = np.asarray(y_eq[nd:nd + ev.H.size]).reshape(ev.H.shape)
        W_T = np.asarray(y_eq[nd + ev.H.size:])

        W_Y = np.zeros_like(ev.Y)
        W_E = np.zeros_like(ev.E)
        W_Y[..., k.c_lag] += w_o[:, None] * k.q
        W_E[..., 0] += w_o
        W_Y[:, k.g_nodes, k.g_chan] += W_G[:, :k.n_gp]
        n_og = len(k.once_g)
        if n_og:
            W_once = W_G[:, k.n_gp:]
            W_E[:, 1:1 + n_og] += W_once
            for r, c in enumerate(k.once_int_channel):
                if c >= 0:
                    W_Y[:, :, c] += W_once[:, r:r + 1] * k.q
        W_Y[:, k.h_nodes, k.h_chan] += W_H[:, :k.n_hp]
        W_E[:, 1 + n_og:] += W_H[:, k.n_hp:]
        gX = np.zeros_like(ev.X)
        if k.n_s:
            h = self.problem.grid.h[:, None]
            W_F = np.zeros((S, N, k.n_s))
            W_F[:, :-1] -= 0.5 * h * W_D
            W_F[:, 1:] -= 0.5 * h * W_D
            W_Y[..., k.c_f:] += W_F
            gX[:, 1:] += W_D
            gX[:, :-1] -= W_D
            if self.terminal_mean:
                mf = self.problem.boundary.maskf
                gX[:, -1, mf] += W_T[None, :] / S

        jx, ju, jp, e0, ef = self._jacobians(ev)
        for i in range(k.n_s):
            gX[..., i] += np.einsum("snc,snc->sn", W_Y, jx[i])
            gX[:, 0, i] += np.einsum("sc,sc->s", W_E, e0[i])
            gX[:, -1, i] += np.einsum("sc,sc->s", W_E, ef[i])
        gU = np.zeros_like(ev.U)
        for j in range(k.n_u):
            per = np.einsum("snc,snc->sn", W_Y, ju[j])
            if self.structure == "olsc":
                gU[0, :, j] = per.sum(axis=0)
            else:
                gU[:, :, j] = per
        gP = np.zeros(k.n_p)
        for m in range(k.n_p):
            jl, je = jp[m]
            gP[m] = np.einsum("snc,snc->", W_Y, jl) + np.einsum("sc,sc->", W_E, je)
        return self.pack(gU, gX, gP)

    # -- helpers ------------------------------------------------------------------

    def initial_guess(self) -> np.ndarray:
        """States interpolated between boundary values, zero controls, statics at midpoints."""
        p, k = self.problem, self.kernel
        S, N = self.S, self.N
        tau = (k.t - k.t[0]) / (k.t[-1] - k.t[0])
        x0 = np.where(np.isnan(self.scen.xi0), np.nan, self.scen.xi0)
        xf = np.tile(p.boundary.valuesf(), (S, 1))
        a = np.where(np.isnan(x0), np.where(np.isnan(xf), 0.0, xf), x0)
        b = np.where(np.isnan(xf), a, xf)
        X = a[:, None, :] + tau[None, :, None] * (b - a)[:, None, :]
        U = np.zeros((self.n_ctrl, N, k.n_u))
        P = np.array([_static_guess(v) for v in p.statics.vars])
        x = np.clip(self.pack(U, X, P), self.lower, self.upper)
        # epigraph variables start at the largest objective value they bound
        aux = [i for i, v in enumerate(p.statics.vars) if v.tag == "aux" and v.initial is None]
        if aux:
            ev = self.evaluate(x)
            _, _, Pv = self.unpack(x)
            for i in aux:
                name = p.statics.names[i]
                for r, row in enumerate(k.g_rows):
                    e = p.constraints.inequalities[row.entry]
                    if row.node < 0 and dict(e.poly.linear).get(name) == -1.0:
                        Pv[i] = float(np.max(ev.G[:, r]) + Pv[i])
        return x

    def max_violation(self, ev: Evaluation) -> float:
        v_eq = np.max(np.abs(ev.c_eq)) if ev.c_eq.size else 0.0
        v_in = np.max(np.maximum(ev.c_in, 0.0)) if ev.c_in.size else 0.0
        return float(max(v_eq, v_in))

    def trajectories(self, x) -> dict:
        U, X, P = self.unpack(np.asarray(x, dtype=float))
        return {"time": self.kernel.t, "controls": U, "states": X, "statics": P}

    def warm_start_from(self, other: "CompiledNlp", x) -> np.ndarray:
        """Map a solution of ``other`` onto this NLP; scenarios beyond ``other``'s are simulated."""
        U, X, P = other.unpack(np.asarray(x, dtype=float))
        S_old = min(other.S, self.S)
        Xn = np.empty((self.S, self.N, self.kernel.n_s))
        Xn[:S_old] = X[:S_old]
        if self.S > S_old:
            sc = M.scenario_data(self.problem, self.scenarios.names, self.scenarios.points[S_old:])
            x0 = np.where(np.isnan(sc.xi0), X[0, 0][None, :], sc.xi0)
            Xn[S_old:] = M.simulate(self.problem, U[0], P, sc, x0)
        Un = U if self.n_ctrl == other.n_ctrl else np.broadcast_to(U.mean(axis=0), (self.n_ctrl,) + U.shape[1:])
        return np.clip(self.pack(Un, Xn, P), self.lower, self.upper)

    def with_scenarios(self, scenarios: usets.ScenarioSet) -> "CompiledNlp":
        """Recompile for a different scenario set (used by scenario generation)."""
        return self.meta["rebuild"](scenarios)

    def scenario_rows(self, x, names, points) -> np.ndarray:
        """Constraint rows at new scenarios, states re-simulated with the decided controls.

        Free initial states are taken from the first scenario of ``x``.
        """
        U, X, P = self.unpack(np.asarray(x, dtype=float))
        sc = M.scenario_data(self.problem, names, points)
        x0 = np.where(np.isnan(sc.xi0), X[0, 0][None, :], sc.xi0)
        Uc = U[0] if self.structure == "olsc" else U.mean(axis=0)
        Xs = M.simulate(self.problem, Uc, P, sc, x0)
        k = self.kernel
        Pe = P[None, :] + sc.p_shift
        Y = k.local(k.t, Xs, Uc[None], Pe, sc.constants, sc.signals, sc.noise)
        E = k.endpoint(Xs[:, 0], Xs[:, -1], Pe, sc.constants)
        o, G, _, _ = k.assemble(Y, E, Xs)
        return G

    def entry_rows(self, index: int) -> np.ndarray:
        return np.array([r for r, row in enumerate(self.kernel.g_rows) if row.entry == index], dtype=int)


def _static_guess(v: M.StaticVar) -> float:
    if v.initial is not None:
        return v.initial
    lo, hi = v.lower, v.upper
    if math.isfinite(lo) and math.isfinite(hi):
        return 0.5 * (lo + hi)
    if math.isfinite(lo):
        return max(lo, 0.0)
    if math.isfinite(hi):
        return min(hi, 0.0)
    return 0.0


# ---------------------------------------------------------------------------
# scenario construction
# ---------------------------------------------------------------------------


def renderings(problem: M.UccdProblem, family: str):
    """Models of the requested family for every binding, with their target names."""
    models, names = [], []
    for b in problem.bindings:
        m = b.rendering(family)
        if m is None:
            raise CompatibilityError(
                f"binding {list(b.target)} has no {family} rendering ({sorted(b.families)} given)")
        models.append(m)
        names.extend(b.target)
    return models, tuple(names)


def _param(problem, key, value, default):
    if value is not None:
        return value
    return problem.formulation.get(key, default)


def stochastic_scenarios(problem, samples=None, seed=None, moment_match=None) -> usets.ScenarioSet:
    models, names = renderings(problem, "stochastic")
    if not models:
        return usets.ScenarioSet(np.zeros((1, 0)), np.ones(1), "nominal", ())
    n = int(_param(problem, "samples", samples, 100))
    return usets.sample_stochastic(models, n, int(_param(problem, "seed", seed, 0)), names,
                                   bool(_param(problem, "moment_match", moment_match, False)))


def expand_scenarios(problem: M.UccdProblem, scenarios: usets.ScenarioSet | None = None,
                     structure: str | None = None, tag: str = "skeleton", **kw) -> CompiledNlp:
    """Allocate control/state blocks for a scenario set (expectation reductions by default)."""
    if scenarios is None:
        names, pts = M.nominal_points(problem)
        scenarios = usets.ScenarioSet(pts, np.ones(1), "nominal", names)
    if scenarios.n < 1:
        raise ValueError("scenario set is empty")
    return CompiledNlp(problem, scenarios, structure or problem.formulation.structure, tag, **kw)


def _per_row(value, kernel, default):
    """Scalar, or mapping from inequality name to value, expanded over g rows."""
    if isinstance(value, Mapping):
        return np.array([float(value.get(r.name, default)) for r in kernel.g_rows])
    if isinstance(value, (tuple, list)) and value and isinstance(value[0], tuple):
        return _per_row(dict(value), kernel, default)
    return np.full(kernel.n_g, float(default if value is None else value))


def _treatment_groups(problem, scen_w, default: str, params: dict, scenarios: np.ndarray, G0=None):
    """Groups by per-row treatment for the stochastic formulations."""
    k = problem.kernel()
    groups = []
    treat = np.array([r.treatment or default for r in k.g_rows], dtype=object)
    w = scen_w
    for t in dict.fromkeys(treat.tolist()):
        rows = np.nonzero(treat == t)[0]
        if t == "expectation":
            red = Mean(w)
        elif t == "mean-std":
            red = MeanStd(w, _per_row(params.get("k_s"), k, 0.0)[rows])
        elif t == "cvar":
            red = Cvar(w, float(params.get("gamma", 0.9)))
        elif t == "worst-case":
            red = Each()
        elif t == "chance":
            p_f = _per_row(params.get("p_f"), k, 0.05)[rows]
            if np.any((p_f <= 0) | (p_f >= 1)):
                raise ValueError("P_f must lie in (0, 1)")
            if params.get("mode", "gaussian") == "gaussian":
                red = MeanStd(w, norm.ppf(1.0 - p_f))
            else:
                scale = np.ones(len(rows))
                if G0 is not None:
                    sd = _pop_std(w, G0[:, rows])[2]
                    scale = np.where(sd > 1e-9, sd, 1.0)
                red = SmoothChance(w, p_f, scale)
        else:
            raise ValueError(f"unsupported treatment {t!r}")
        groups.append(Group(red, rows, scenarios, t))
    return groups


def merge_duplicates(scenarios: usets.ScenarioSet) -> usets.ScenarioSet:
    """Collapse repeated probability-weighted points into one point carrying the summed weight.

    Every stochastic reduction is a weighted functional of the scenario values, so the
    merged set is exactly equivalent and a degenerate distribution becomes one scenario.
    """
    pts = scenarios.points
    if pts.shape[1] == 0:
        _, first, inv = np.zeros(1), np.zeros(1, dtype=int), np.zeros(pts.shape[0], dtype=int)
    else:
        _, first, inv = np.unique(pts, axis=0, return_index=True, return_inverse=True)
    if first.size == scenarios.n:
        return scenarios
    order = np.argsort(first)
    rank = np.empty_like(order)
    rank[order] = np.arange(order.size)
    w = np.zeros(order.size)
    np.add.at(w, rank[np.ravel(inv)], scenarios.weights)
    meta = dict(scenarios.meta, merged_from=scenarios.n)
    return replace(scenarios, points=pts[first[order]], weights=w, meta=meta)


def _stochastic_compile(problem, scenarios, structure, tag, objective_fn, default, params, flags=()):
    if scenarios is None:
        scenarios = stochastic_scenarios(problem, params.get("samples"), params.get("seed"),
                                         params.get("moment_match"))
    else:
        renderings(problem, "stochastic")
    n_drawn = scenarios.meta.get("merged_from", scenarios.n)
    scenarios = merge_duplicates(scenarios)
    structure = structure or problem.formulation.structure
    S = scenarios.n
    w = np.asarray(scenarios.weights, dtype=float)
    w = w / w.sum()
    base = expand_scenarios(problem, scenarios, structure, tag)
    G0 = None
    if params.get("mode") == "saa":
        G0 = base.evaluate(base.initial_guess()).G
    groups = _treatment_groups(problem, w, default, params, np.arange(S), G0)
    flags = list(flags)
    if any(isinstance(g.red, SmoothChance) for g in groups):
        flags.append("sigmoid-smoothed-chance")
        if n_drawn < 1.0 / np.min(np.concatenate([g.red.p_f for g in groups if isinstance(g.red, SmoothChance)])):
            flags.append("saa-too-few-samples")

    def rebuild(sc):
        return _stochastic_compile(problem, sc, structure, tag, objective_fn, default, params, flags)

    return CompiledNlp(problem, scenarios, structure, tag, objective_fn(w, S), groups, flags,
                       {"rebuild": rebuild, "params": dict(params)})


def _merged(problem, overrides: dict) -> dict:
    params = dict(problem.formulation.params)
    params.update({k: v for k, v in overrides.items() if v is not None})
    return params


# ---------------------------------------------------------------------------
# formulations
# ---------------------------------------------------------------------------


def compile_deterministic(problem: M.UccdProblem) -> CompiledNlp:
    """Single nominal scenario; bound quantities sit at their nominal values."""
    names, pts = M.nominal_points(problem)
    sc = usets.ScenarioSet(pts, np.ones(1), "nominal", names)
    k = problem.kernel()
    groups = [Group(Mean(np.ones(1)), np.arange(k.n_g), np.arange(1), "nominal")] if k.n_g else []
    return CompiledNlp(problem, sc, problem.formulation.structure, "det",
                       [ObjectiveTerm(1.0, Mean(np.ones(1)), np.arange(1))], groups,
                       meta={"rebuild": lambda s: expand_scenarios(problem, s, tag="det")})


def compile_se(problem, scenarios=None, structure=None, **params) -> CompiledNlp:
    """Expected objective with every constraint imposed on its scenario mean."""
    params = _merged(problem, params)
    return _stochastic_compile(problem, scenarios, structure, "se",
                               lambda w, S: [ObjectiveTerm(1.0, Mean(w), np.arange(S))], "expectation", params)


def compile_scc(problem, scenarios=None, structure=None, p_f=None, mode=None, **params) -> CompiledNlp:
    """Chance constraints ``P[g >= 0] <= P_f`` in gaussian or smoothed-SAA form."""
    params = _merged(problem, dict(params, p_f=p_f, mode=mode))
    params.setdefault("mode", "gaussian")
    if params["mode"] not in ("gaussian", "saa"):
        raise ValueError("mode must be gaussian or saa")
    # the gaussian margin uses the sample moments of g; matching the input moments
    # removes sampling error from them whenever g is affine in the uncertainty
    params.setdefault("moment_match", params["mode"] == "gaussian")
    p = params.get("p_f", 0.05)
    vals = dict(p).values() if isinstance(p, (Mapping, tuple)) else [p]
    if any(not 0 < float(v) < 1 for v in vals):
        raise ValueError("P_f must lie in (0, 1)")
    return _stochastic_compile(problem, scenarios, structure, "scc",
                               lambda w, S: [ObjectiveTerm(1.0, Mean(w), np.arange(S))], "chance", params)


def compile_pr_weighted(problem, scenarios=None, structure=None, alpha_w=None, k_s=None, **params) -> CompiledNlp:
    """``alpha_w * o_mu + (1 - alpha_w) * o_sigma`` with ``g_mu + k_s g_sigma <= 0``."""
    params = _merged(problem, dict(params, alpha_w=alpha_w, k_s=k_s))
    a = float(params.get("alpha_w", 1.0))
    if not 0.0 <= a <= 1.0:
        raise ValueError("alpha_w must lie in [0, 1]")
    ks = params.get("k_s", 0.0)
    if not isinstance(ks, (Mapping, tuple)) and float(ks) < 0:
        raise ValueError("k_s must be >= 0")
    params["k_s"] = ks

    def obj(w, S):
        return [ObjectiveTerm(a, Mean(w), np.arange(S)), ObjectiveTerm(1.0 - a, Std(w, 0.0), np.arange(S))]

    return _stochastic_compile(problem, scenarios, structure, "pr-w", obj, "mean-std", params)


def compile_pr_constrained(problem, scenarios=None, structure=None, alpha_w=None, sigma_a=None,
                           **params) -> CompiledNlp:
    """Mean feasibility plus separate caps ``g_sigma - sigma_a <= 0``; infinite caps are dropped."""
    params = _merged(problem, dict(params, alpha_w=alpha_w, sigma_a=sigma_a))
    a = float(params.get("alpha_w", 1.0))
    if not 0.0 <= a <= 1.0:
        raise ValueError("alpha_w must lie in [0, 1]")

    def obj(w, S):
        return [ObjectiveTerm(a, Mean(w), np.arange(S)), ObjectiveTerm(1.0 - a, Std(w, 0.0), np.arange(S))]

    nlp = _stochastic_compile(problem, scenarios, structure, "pr-c", obj, "expectation", params)
    k = nlp.kernel
    cap = _per_row(params.get("sigma_a", math.inf), k, math.inf)
    if np.any(cap < 0):
        raise ValueError("sigma_a must be >= 0")
    rows = np.nonzero(np.isfinite(cap))[0]
    if rows.size:
        w = np.asarray(nlp.scenarios.weights, dtype=float)
        nlp.groups.append(Group(Std(w / w.sum(), cap[rows]), rows, np.arange(nlp.S), "std-cap"))
    nlp.meta["rebuild"] = lambda sc: compile_pr_constrained(problem, sc, structure, **params)
    return nlp


def crisp_scenarios(problem, mode="vertex"):
    models, names = renderings(problem, "crisp")
    if mode == "vertex":
        if not models:
            return usets.ScenarioSet(np.zeros((1, 0)), np.ones(1), "nominal", ()), models, names
        for m in models:
            if not m.has_vertices():
                raise CompatibilityError(f"{m.kind} set has no finite vertex set; use scenario-generation mode")
        sc = usets.enumerate_vertices(models, names)
        _, idx = np.unique(sc.points, axis=0, return_index=True)
        idx = np.sort(idx)
        pts = sc.points[idx]
        return usets.ScenarioSet(pts, np.full(len(idx), 1.0 / len(idx)), "vertices", names), models, names
    centers = np.concatenate([np.atleast_1d(m.nominal()) for m in models]) if models else np.zeros(0)
    return usets.ScenarioSet(centers[None, :], np.ones(1), "pool", names), models, names


def compile_wcr(problem, mode: str = "vertex", structure: str | None = None, inner_mode: str = "ascent",
                initial_pool=None):
    """Robust counterpart in epigraph form.

    ``vertex`` enforces every constraint at every vertex of the product of the
    crisp sets (exact for constraints affine in the uncertainty).  In
    ``scenario-generation`` mode the NLP is built on a scenario pool (set centers
    unless ``initial_pool`` is given) and one :class:`WcrSubproblem` per inequality
    entry is returned for :func:`uccd.solve.solve_wcr`.
    """
    if mode not in ("vertex", "scenario-generation"):
        raise ValueError("mode must be vertex or scenario-generation")
    structure = structure or "olsc"
    if problem.formulation.type != "wcr":
        problem = M.with_formulation(problem, "wcr")
    scen, models, names = crisp_scenarios(problem, mode)
    if initial_pool is not None:
        pts = np.atleast_2d(np.asarray(initial_pool, dtype=float))
        scen = usets.ScenarioSet(pts, np.full(pts.shape[0], 1.0 / pts.shape[0]), "pool", names)
    if mode == "scenario-generation" and structure != "olsc":
        raise CompatibilityError("scenario generation re-simulates the shared control and requires olsc")
    # the worst case over a single fixed scenario is that scenario's cost; the epigraph
    # form would only slow the solver down
    epi = problem if (mode == "vertex" and scen.n == 1) else M.epigraph_transform(problem)

    def build(sc):
        k = epi.kernel()
        groups = [Group(Each(), np.arange(k.n_g), np.arange(sc.n), "worst-case")] if k.n_g else []
        nlp = CompiledNlp(epi, sc, structure, "wcr", [ObjectiveTerm(1.0, Mean(np.full(sc.n, 1.0 / sc.n)), np.arange(sc.n))],
                          groups, ["exactness: affine-only"] if mode == "vertex" else [],
                          {"rebuild": build, "mode": mode, "exactness": "affine-only" if mode == "vertex" else "certified"})
        return nlp

    nlp = build(scen)
    if mode == "vertex":
        return nlp
    subs = [WcrSubproblem(i, e.name, tuple(models), inner_mode, _entry_evaluator(i, nlp), names)
            for i, e in enumerate(epi.constraints.inequalities)]
    return nlp, subs


def _entry_evaluator(index, nlp):
    rows = nlp.entry_rows(index)

    def evaluate(x, Q):
        G = nlp.scenario_rows(x, nlp.scenarios.names, np.atleast_2d(Q))
        return G[:, rows].max(axis=1)
    return evaluate


def bind_subproblem(sub: WcrSubproblem, nlp: CompiledNlp) -> WcrSubproblem:
    """Re-target a subproblem's evaluator at a recompiled outer NLP."""
    return replace(sub, evaluate=_entry_evaluator(sub.index, nlp))


def fuzzy_scenarios(problem, n_levels=None):
    models, names = renderings(problem, "fuzzy")
    n = int(_param(problem, "n_levels", n_levels, usets.DEFAULT_LEVELS))
    if not models:
        lv = usets.alpha_levels(n)
        return usets.ScenarioSet(np.zeros((n, 0)), lv, "alpha-grid", (), levels=tuple(lv.tolist())), models, names
    return merge_level_duplicates(usets.alpha_grid_scenarios(models, n, names)), models, names


def merge_level_duplicates(sc: usets.ScenarioSet) -> usets.ScenarioSet:
    """Keep one copy of each repeated alpha-grid point, at its highest level.

    A cut at level ``a`` spans every point whose level is ``>= a``, so a lower copy
    of a point never changes an envelope.  Degenerate (zero-width) fuzzy sets would
    otherwise produce tied envelopes that the smooth solver handles badly.
    """
    if sc.n == 0:
        return sc
    _, first, inverse = np.unique(sc.points, axis=0, return_index=True, return_inverse=True)
    inverse = inverse.ravel()
    if first.size == sc.n:
        return sc
    top = np.full(first.size, -np.inf)
    np.maximum.at(top, inverse, sc.weights)
    order = np.argsort(first)
    return usets.ScenarioSet(sc.points[first[order]], top[order], sc.provenance, sc.names, sc.seed,
                             sc.levels, dict(sc.meta, merged_from=sc.n))


def compile_fe(problem, structure=None, n_levels=None) -> CompiledNlp:
    """Fuzzy expected value of the objective and of every constraint."""
    sc, _, _ = fuzzy_scenarios(problem, n_levels)
    structure = structure or problem.formulation.structure

    def build(s):
        red = LevelExpectation(s.weights, s.levels)
        k = problem.kernel()
        groups = [Group(red, np.arange(k.n_g), np.arange(s.n), "fuzzy-expectation")] if k.n_g else []
        return CompiledNlp(problem, s, structure, "fe", [ObjectiveTerm(1.0, red, np.arange(s.n))], groups,
                           meta={"rebuild": build})

    return build(sc)


def compile_pcc(problem, structure=None, pos_f=None, n_levels=None) -> CompiledNlp:
    """``POS[g > 0] <= POS_f`` enforced at the corners of the ``POS_f``-cut; FE objective."""
    pos_f = float(_param(problem, "pos_f", pos_f, 0.5))
    if not 0.0 < pos_f <= 1.0:
        raise ValueError("POS_f must lie in (0, 1]")
    grid, models, names = fuzzy_scenarios(problem, n_levels)
    structure = structure or problem.formulation.structure
    if models:
        corners = usets.alpha_cut_scenarios(models, pos_f)
        _, idx = np.unique(corners, axis=0, return_index=True)
        corners = corners[np.sort(idx)]
    else:
        corners = np.zeros((1, 0))
    n_obj = grid.n
    # corners that coincide with an alpha-grid point reuse that scenario
    where = [np.flatnonzero(np.all(grid.points == c, axis=1)) for c in corners]
    extra = np.array([c for c, w in zip(corners, where) if w.size == 0]).reshape(-1, corners.shape[1])
    cols, nxt = [], n_obj
    for w in where:
        if w.size:
            cols.append(int(w[0]))
        else:
            cols.append(nxt)
            nxt += 1
    pts = np.vstack([grid.points, extra])
    levels = np.concatenate([grid.weights, np.full(extra.shape[0], pos_f)])
    sc = usets.ScenarioSet(pts, levels, "alpha-grid", names, levels=grid.levels, meta={"n_objective": n_obj})
    k = problem.kernel()
    red = LevelExpectation(grid.weights, grid.levels)
    groups = [Group(Each(), np.arange(k.n_g), np.array(cols), "possibilistic")] if k.n_g else []
    return CompiledNlp(problem, sc, structure, "pcc", [ObjectiveTerm(1.0, red, np.arange(n_obj))], groups,
                       meta={"rebuild": None, "pos_f": pos_f})


COMPILERS = {
    "det": lambda p, **kw: compile_deterministic(p),
    "se": compile_se,
    "scc": compile_scc,
    "pr-w": compile_pr_weighted,
    "pr-c": compile_pr_constrained,
    "fe": compile_fe,
    "pcc": compile_pcc,
}

FAMILY_OF = {"se": "stochastic", "scc": "stochastic", "pr-w": "stochastic", "pr-c": "stochastic",
             "wcr": "crisp", "fe": "fuzzy", "pcc": "fuzzy", "det": None}


def check_compatible(problem: M.UccdProblem, ftype: str):
    fam = FAMILY_OF[ftype]
    if fam is None:
        return
    renderings(problem, fam)


def compile_problem(problem: M.UccdProblem, ftype: str | None = None, structure: str | None = None, **params):
    """Dispatch on the formulation type (defaults from the problem document)."""
    ftype = ftype or problem.formulation.type
    problem = M.with_formulation(problem, ftype, structure, **params)
    check_compatible(problem, ftype)
    form = problem.formulation
    if ftype == "wcr":
        return compile_wcr(problem, form.get("mode", "vertex"), form.structure,
                           form.get("inner_mode", "ascent"))
    if ftype == "fe":
        return compile_fe(problem, form.structure)
    if ftype == "pcc":
        return compile_pcc(problem, form.structure)
    if ftype == "det":
        return compile_deterministic(problem)
    return COMPILERS[ftype](problem, structure=form.structure)
