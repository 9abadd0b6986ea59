"""Augmented-Lagrangian NLP solver, worst-case inner maximization and a grid oracle."""

from __future__ import annotations

import itertools
import time
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import sparse
from scipy.optimize import minimize
from scipy.sparse.linalg import splu
from scipy.stats import norm

from . import model as M
from . import risk, usets
from .formulations import CompiledNlp, MeanStd, SmoothChance, WcrSubproblem, bind_subproblem, renderings


@dataclass(frozen=True)
class SolverOptions:
    max_outer_iters: int = 60
    penalty_init: float = 10.0
    penalty_growth: float = 10.0
    penalty_max: float = 1e9
    shrink: float = 0.25
    ctol: float = 1e-6
    gtol: float = 1e-6
    fd_step: float = 1e-6
    seed: int = 0
    max_line_search: int = 40
    max_inner_iters: int = 20000
    restarts: int = 4  # sigmoid annealing rounds for sampled chance constraints
    max_rounds: int = 10  # scenario-generation rounds

    def __post_init__(self):
        for k in ("ctol", "gtol", "fd_step", "penalty_init"):
            if not getattr(self, k) > 0:
                raise ValueError(f"{k} must be > 0")
        if self.penalty_growth <= 1:
            raise ValueError("penalty_growth must exceed 1")


@dataclass
class SolveReport:
    status: str
    objective: float
    x: np.ndarray
    slices: dict
    residuals: dict
    diagnostics: dict
    trace: list
    wall_time: float
    flags: list = field(default_factory=list)
    multipliers: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    @property
    def optimal(self) -> bool:
        return self.status == "optimal"


class NonFiniteEvaluation(FloatingPointError):
    pass


class _DefectCoordinates:
    """Solver-side change of variables that trades intermediate states for defects.

    At a reference point ``xr`` the first ``N - 2`` defects of every scenario are
    linearized, ``zeta ~ zeta_r + M (x_mid - xr_mid) + K (x_rest - xr_rest)``, where
    ``x_mid`` are the state nodes strictly inside the grid.  The inner solver works
    on ``e = zeta_lin`` in place of ``x_mid``; every other entry is unchanged, so
    bounds carry over.  The map is affine and invertible (``M`` is block
    bidiagonal with blocks ``I - h/2 A``), which leaves the NLP itself untouched
    while the defect penalty becomes nearly diagonal.  Inactive when there are no
    intermediate nodes or when they carry bounds.
    """

    def __init__(self, nlp: CompiledNlp):
        lay = nlp.layout
        self.nlp = nlp
        S, N, n = lay.shapes["states"]
        self.dims = (S, N, n)
        st = lay.slices["states"].start
        idx = st + np.arange(S * N * n).reshape(S, N, n)
        self.mid = idx[:, 1:-1].ravel()
        self.active = N > 2 and n > 0 and bool(
            np.all(np.isinf(nlp.lower[self.mid])) and np.all(np.isinf(nlp.upper[self.mid])))
        if self.active:
            rest = np.ones(nlp.n, dtype=bool)
            rest[self.mid] = False
            self.rest = np.nonzero(rest)[0]

    def refresh(self, x):
        if not self.active:
            return
        nlp = self.nlp
        S, N, n = self.dims
        lay = nlp.layout
        k = nlp.kernel
        ev = nlp.evaluate(x)
        jx, ju, jp, _, _ = nlp._jacobians(ev)
        cf = k.c_f
        A = np.stack([j[..., cf:cf + n] for j in jx], axis=-1)  # (S, N, n, n): d f_r / d x_i
        B = np.stack([j[..., cf:cf + n] for j in ju], axis=-1) if ju else np.zeros((S, N, n, 0))
        F = np.stack([j[0][..., cf:cf + n] for j in jp], axis=-1) if jp else np.zeros((S, N, n, 0))
        hh = 0.5 * nlp.problem.grid.h[: N - 2]  # defects 0 .. N-3
        st = lay.slices["states"].start
        uo = lay.slices["controls"].start
        po = lay.slices["statics"].start
        s_, kk, r = np.meshgrid(np.arange(S), np.arange(N - 2), np.arange(n), indexing="ij")
        row = ((s_ * (N - 2) + kk) * n + r)
        rows, cols, vals = [], [], []

        def add(rw, cl, vl):
            rows.append(np.broadcast_to(rw, np.shape(vl)).ravel())
            cols.append(np.broadcast_to(cl, np.shape(vl)).ravel())
            vals.append(np.ravel(vl))

        h3 = hh[None, :, None, None]
        eye = np.eye(n)[None, None]
        Ak, Ak1 = A[:, : N - 2], A[:, 1: N - 1]
        i = np.arange(n)[None, None, None, :]
        base = (s_[..., None] * N) * n
        add(row[..., None], st + base + (kk[..., None] + 1) * n + i, eye - h3 * Ak1)
        add(row[..., None], st + base + kk[..., None] * n + i, -eye - h3 * Ak)
        if B.shape[-1]:
            nu = B.shape[-1]
            j = np.arange(nu)[None, None, None, :]
            c = nlp.ctrl_of[s_][..., None]
            add(row[..., None], uo + (c * N + kk[..., None]) * nu + j, -h3 * B[:, : N - 2])
            add(row[..., None], uo + (c * N + kk[..., None] + 1) * nu + j, -h3 * B[:, 1: N - 1])
        if F.shape[-1]:
            m = np.arange(F.shape[-1])[None, None, None, :]
            add(row[..., None], po + m, -h3 * (F[:, : N - 2] + F[:, 1: N - 1]))
        J = sparse.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                              shape=(S * (N - 2) * n, nlp.n))
        Mx = J[:, self.mid]
        self.Mx = Mx.tocsr()
        self.M = splu(Mx.tocsc())
        self.K = J[:, self.rest].tocsr()
        self.KT = self.K.T.tocsr()
        self.xr = np.array(x, dtype=float)
        self.zeta = ev.D[:, : N - 2].ravel()

    def to_z(self, x):
        if not self.active:
            return x
        z = x.copy()
        z[self.mid] = (self.zeta + self.Mx @ (x[self.mid] - self.xr[self.mid])
                       + self.K @ (x[self.rest] - self.xr[self.rest]))
        return z

    def to_x(self, z):
        if not self.active:
            return z
        x = z.copy()
        rhs = z[self.mid] - self.zeta - self.K @ (z[self.rest] - self.xr[self.rest])
        x[self.mid] = self.xr[self.mid] + self.M.solve(rhs)
        return x

    def grad_z(self, gx):
        if not self.active:
            return gx
        v = self.M.solve(gx[self.mid], trans="T")
        gz = gx.copy()
        gz[self.mid] = v
        gz[self.rest] = gx[self.rest] - self.KT @ v
        return gz


def _projected_gradient(x, g, lo, hi):
    return x - np.clip(x - g, lo, hi)


def _check_finite(nlp: CompiledNlp, ev):
    for name, arr in (("objective", ev.o), ("inequalities", ev.G), ("equalities", ev.H), ("defects", ev.D)):
        if not np.all(np.isfinite(arr)):
            bad = np.argwhere(~np.isfinite(arr))[0]
            raise NonFiniteEvaluation(f"non-finite {name} value at index {tuple(int(i) for i in bad)}")


def solve_nlp(nlp: CompiledNlp, x0=None, opts: SolverOptions | None = None) -> SolveReport:
    """Augmented Lagrangian outer loop around L-BFGS-B.

    Multipliers follow ``lam += mu c`` and ``nu = max(0, nu + mu g)``; the penalty
    starts at ``penalty_init`` and grows whenever the violation fails to shrink by
    the factor ``shrink``.
    """
    opts = opts or SolverOptions()
    t_start = time.perf_counter()
    nlp.fd_step = opts.fd_step
    lo, hi = nlp.lower, nlp.upper
    x = nlp.initial_guess() if x0 is None else np.clip(np.asarray(x0, dtype=float).copy(), lo, hi)
    if x.shape != (nlp.n,):
        raise ValueError(f"x0 has {x.size} entries, layout has {nlp.n}")
    ev = nlp.evaluate(x)
    _check_finite(nlp, ev)
    lam = np.zeros(ev.c_eq.size)
    nu = np.zeros(ev.c_in.size)
    mu = opts.penalty_init
    bounds = list(zip(np.where(np.isinf(lo), None, lo), np.where(np.isinf(hi), None, hi)))
    tr = _DefectCoordinates(nlp)
    trace = []
    prev_viol = np.inf
    status = "iteration-limit"

    def fg(z):
        e = nlp.evaluate(tr.to_x(z))
        if not (np.isfinite(e.f) and np.all(np.isfinite(e.c_eq)) and np.all(np.isfinite(e.c_in))):
            return np.inf, np.zeros_like(z)
        c, g = e.c_eq, e.c_in
        sh = np.maximum(0.0, nu + mu * g)
        val = e.f + lam @ c + 0.5 * mu * (c @ c) + (sh @ sh - nu @ nu) / (2 * mu)
        return val, tr.grad_z(nlp.gradient(e, 1.0, lam + mu * c, sh))

    # inexact inner solves while far from feasible, tightened as the violation drops
    omega = 1e-2
    viol = nlp.max_violation(ev)
    for it in range(opts.max_outer_iters):
        omega = max(0.1 * opts.gtol, min(omega, 0.1 * viol))
        tr.refresh(x)
        res = minimize(fg, tr.to_z(x), jac=True, method="L-BFGS-B", bounds=bounds,
                       options={"maxiter": opts.max_inner_iters, "maxls": opts.max_line_search,
                                "gtol": omega, "ftol": 1e-15, "maxcor": 20})
        x = tr.to_x(res.x)
        ev = nlp.evaluate(x)
        _check_finite(nlp, ev)
        c, g = ev.c_eq, ev.c_in
        viol = nlp.max_violation(ev)
        lam = lam + mu * c
        nu = np.maximum(0.0, nu + mu * g)
        grad = nlp.gradient(ev, 1.0, lam, nu)
        pg = float(np.max(np.abs(_projected_gradient(x, grad, lo, hi)))) if x.size else 0.0
        comp = float(np.max(nu * np.abs(g))) if g.size else 0.0
        trace.append({"iter": it, "objective": ev.f, "violation": viol, "stationarity": pg,
                      "complementarity": comp, "penalty": mu, "inner_iters": int(res.nit)})
        if viol <= opts.ctol and pg <= 10 * opts.gtol and comp <= opts.ctol:
            status = "optimal"
            break
        if viol > opts.shrink * prev_viol and viol > opts.ctol:
            mu *= opts.penalty_growth
            if mu > opts.penalty_max:
                status = "infeasible"
                break
        prev_viol = min(prev_viol, viol) if viol > opts.ctol else viol
    return _report(nlp, ev, status, trace, time.perf_counter() - t_start, lam, nu)


def _report(nlp: CompiledNlp, ev, status, trace, wall, lam, nu) -> SolveReport:
    U, X, P = nlp.unpack(ev.x)
    k = nlp.kernel
    b = nlp.problem.boundary
    term = X[:, -1, b.maskf] - b.valuesf()[b.maskf][None, :]
    residuals = {
        "max_equality": float(np.max(np.abs(ev.c_eq))) if ev.c_eq.size else 0.0,
        "max_inequality": float(np.max(np.maximum(ev.c_in, 0.0))) if ev.c_in.size else 0.0,
        "max_defect": float(np.max(np.abs(ev.D))) if ev.D.size else 0.0,
        "terminal_residual": np.abs(term).max(axis=1).tolist() if term.size else [0.0] * nlp.S,
        "terminal_spread": (X[:, -1].max(axis=0) - X[:, -1].min(axis=0)).tolist(),
        "groups": _group_values(nlp, ev),
    }
    slices = {"controls": U.copy(), "states": X.copy(), "statics": dict(zip(nlp.problem.statics.names, P.tolist()))}
    return SolveReport(status, float(ev.f), ev.x.copy(), slices, residuals, diagnostics(nlp, ev), trace, wall,
                       list(nlp.flags), {"equality": lam, "inequality": nu},
                       {"tag": nlp.tag, "structure": nlp.structure, "n_scenarios": nlp.S})


def _group_values(nlp, ev):
    out, off = {}, 0
    for g in nlp.groups:
        m = g.size(nlp.S)
        vals = ev.c_in[off:off + m]
        off += m
        names = [nlp.kernel.g_rows[r].name for r in g.rows]
        per = {}
        if m == len(g.rows):
            for n, v in zip(names, vals):
                per[n] = max(per.get(n, -np.inf), float(v))
        else:
            V = vals.reshape(len(g.scen), len(g.rows))
            for j, n in enumerate(names):
                per[n] = max(per.get(n, -np.inf), float(V[:, j].max()))
        out[g.name] = per
    return out


def entry_values(nlp: CompiledNlp, G) -> dict:
    """Per-scenario maximum over rows (nodes, Type II pairs) of each inequality entry."""
    out = {}
    for i, e in enumerate(nlp.problem.constraints.inequalities):
        rows = nlp.entry_rows(i)
        if rows.size:
            out[e.name] = G[:, rows].max(axis=1)
    return out


def scenario_bpa(scenarios: usets.ScenarioSet, family: str) -> risk.Bpa:
    """Evidence over scenario indices: nested cuts, singletons or the whole set."""
    S = scenarios.n
    if family == "fuzzy" and scenarios.levels:
        lv = np.asarray(scenarios.weights)
        grid = np.unique(lv)
        members = [np.nonzero(lv >= a - 1e-12)[0].tolist() for a in grid]
        return risk.consonant_bpa(grid, members)
    if family == "crisp":
        return risk.Bpa(((frozenset(range(S)), 1.0),))
    w = np.asarray(scenarios.weights, dtype=float)
    w = w / w.sum()
    return risk.Bpa(tuple((frozenset([s]), float(v)) for s, v in enumerate(w) if v > 0))


def diagnostics(nlp: CompiledNlp, ev) -> dict:
    """Risk measures of each inequality entry over the compiled scenarios."""
    sc = nlp.scenarios
    fam = {"mcs": "stochastic", "vertices": "crisp", "pool": "crisp", "alpha-grid": "fuzzy"}.get(sc.provenance)
    w = np.asarray(sc.weights, dtype=float)
    prob_w = w / w.sum() if fam == "stochastic" else np.full(sc.n, 1.0 / sc.n)
    out = {"objective": _stats(ev.o, prob_w), "constraints": {}}
    bpa = scenario_bpa(sc, fam) if fam else None
    for name, g in entry_values(nlp, ev.G).items():
        d = _stats(g, prob_w)
        d["pfail"] = risk.empirical_failure_prob(g, prob_w)
        if fam == "fuzzy":
            d["pos_fail"] = risk.possibility_of_failure(zip(g, w))
        if bpa is not None:
            bel, pl = risk.belief_plausibility(bpa, np.nonzero(g >= 0)[0].tolist())
            d["belief"], d["plausibility"] = bel, pl
        out["constraints"][name] = d
    chance = [g for g in nlp.groups if isinstance(g.red, SmoothChance)]
    if chance:
        hard = {}
        for grp in chance:
            for j, r in enumerate(grp.rows):
                row = nlp.kernel.g_rows[r]
                p = float(np.dot(grp.red.w, ev.G[grp.scen, r] >= 0))
                key = row.name if row.node < 0 else f"{row.name}@{row.node}"
                hard[key] = {"pfail": p, "target": float(grp.red.p_f[j]), "met": p <= grp.red.p_f[j] + 1e-12}
        out["hard_chance"] = hard
    return out


def _stats(v, w):
    v = np.asarray(v, dtype=float)
    mu = float(w @ v)
    sd = float(np.sqrt(max(w @ (v - mu) ** 2, 0.0)))
    out = {"mean": mu, "std": sd, "min": float(v.min()), "max": float(v.max())}
    out["cvar"] = risk.cvar(v, 0.9, w) if v.size > 1 else float(v[0])
    return out


def solve(nlp, x0=None, opts: SolverOptions | None = None) -> SolveReport:
    """Solve any compiled formulation: plain NLP, annealed chance NLP or scenario generation."""
    opts = opts or SolverOptions()
    if isinstance(nlp, tuple):
        return solve_wcr(nlp[0], nlp[1], opts, x0)
    chance = [g for g in nlp.groups if isinstance(g.red, SmoothChance)]
    if not chance:
        return solve_nlp(nlp, x0, opts)
    t0 = time.perf_counter()
    trace = []
    # warm-up on the gaussian margin ``mean + z_{1-P_f} std <= 0``: it lands next to the
    # chance boundary, where the sharp sigmoid still has usable gradients
    saved = [g.red for g in chance]
    for g in chance:
        g.red = MeanStd(g.red.w, norm.ppf(1.0 - g.red.p_f))
    rep = solve_nlp(nlp, x0, opts)
    for g, red in zip(chance, saved):
        g.red = red
    trace.append({"restart": "warm-up", "tau_factor": None, "status": rep.status, "objective": rep.objective})
    start = rep.x if np.all(np.isfinite(rep.x)) else x0
    for r in range(opts.restarts + 1):
        for g in chance:
            g.red.factor = g.red.base_factor * 0.5 ** r
        rep = solve_nlp(nlp, start, opts)
        trace.append({"restart": r, "tau_factor": chance[0].red.factor, "status": rep.status,
                      "objective": rep.objective})
        start = rep.x
    rep.meta["annealing"] = trace
    rep.wall_time = time.perf_counter() - t0
    return rep


# ---------------------------------------------------------------------------
# worst-case machinery
# ---------------------------------------------------------------------------


@dataclass
class InnerResult:
    q: np.ndarray
    value: float
    center_value: float
    evaluations: int


def _set_dims(sets):
    return [len(s.center_params()) for s in sets]


def inner_maximize(sub: WcrSubproblem, outer_point, opts: SolverOptions | None = None,
                   max_iter: int = 200) -> InnerResult:
    """Maximize ``sub.evaluate(outer_point, q)`` over the product of crisp sets.

    ``vertex`` mode scans all vertices (ties go to the first in lexicographic
    order).  ``ascent`` mode runs projected gradient ascent with an Armijo line
    search from the center and eight seeded random starts.
    """
    opts = opts or SolverOptions()
    sets = list(sub.sets)
    for s in sets:
        if isinstance(s, usets.Box) and not np.all(np.isfinite(s.halfwidth)):
            raise ValueError("unbounded set")
    fn = lambda Q: np.asarray(sub.evaluate(outer_point, np.atleast_2d(Q)), dtype=float).ravel()
    centers = np.concatenate([np.atleast_1d(s.nominal()) for s in sets])
    center_val = float(fn(centers[None, :])[0])
    if sub.mode == "vertex":
        V = usets.enumerate_vertices(sets).points
        vals = fn(V)
        i = int(np.argmax(vals))
        return InnerResult(V[i], float(vals[i]), center_val, len(V) + 1)

    dims = _set_dims(sets)
    cuts = np.cumsum([0] + dims)

    def to_q(Yp):
        Yp = np.atleast_2d(Yp)
        return np.column_stack([np.atleast_2d(s.to_point(Yp[:, a:b])) for s, a, b in zip(sets, cuts[:-1], cuts[1:])])

    def proj(y):
        return np.concatenate([np.atleast_1d(s.project(y[a:b])) for s, a, b in zip(sets, cuts[:-1], cuts[1:])])

    rng = np.random.Generator(np.random.Philox(opts.seed))
    starts = [np.concatenate([s.center_params() for s in sets])]
    rand = [s.random_params(rng, 8) for s in sets]
    starts += [np.concatenate([r[i] for r in rand]) for i in range(8)]
    n_eval = 1
    best_y, best_v = None, -np.inf
    d = cuts[-1]
    h = 1e-6
    for y in starts:
        y = proj(np.asarray(y, dtype=float))
        v = float(fn(to_q(y))[0])
        n_eval += 1
        for _ in range(max_iter):
            Yp = np.vstack([y + h * np.eye(d), y - h * np.eye(d)])
            vals = fn(to_q(Yp))
            n_eval += 2 * d
            grad = (vals[:d] - vals[d:]) / (2 * h)
            if not np.any(grad):
                break
            step, moved = 1.0, False
            for _ls in range(opts.max_line_search):
                y_new = proj(y + step * grad)
                dy = y_new - y
                if not np.any(dy):
                    break
                v_new = float(fn(to_q(y_new))[0])
                n_eval += 1
                if v_new >= v + 1e-4 * grad @ dy:
                    moved = True
                    break
                step *= 0.5
            if not moved or np.max(np.abs(dy)) < 1e-12:
                break
            gain = v_new - v
            y, v = y_new, v_new
            if gain <= 1e-15 * max(1.0, abs(v)):
                break
        if v > best_v:
            best_y, best_v = y, v
    q = to_q(best_y)[0]
    return InnerResult(q, best_v, center_val, n_eval)


def solve_wcr(outer: CompiledNlp, subs, opts: SolverOptions | None = None, x0=None) -> SolveReport:
    """Cutting-scenario loop with a mandatory certification pass.

    Each round solves the outer NLP on the current pool, maximizes every
    constraint entry over the crisp sets at the outer solution and appends the
    violating worst cases to the pool.
    """
    opts = opts or SolverOptions()
    t0 = time.perf_counter()
    nlp = outer
    rounds, log = 0, []
    while True:
        rep = solve_nlp(nlp, x0, opts)
        worst = [inner_maximize(bind_subproblem(s, nlp), rep.x, opts) for s in subs]
        # the inner problem re-simulates states, so it differs from the collocated
        # outer states by up to the defect tolerance
        offenders = [(s, w) for s, w in zip(subs, worst) if w.value > 10 * opts.ctol]
        log.append({"round": rounds, "pool": nlp.S, "objective": rep.objective, "status": rep.status,
                    "worst": {s.name: w.value for s, w in zip(subs, worst)}})
        if not offenders or rounds >= opts.max_rounds:
            break
        pool = nlp.scenarios.points
        new = [w.q for _, w in offenders]
        added = []
        for q in new:
            if not any(np.max(np.abs(q - p)) <= 1e-9 for p in list(pool) + added):
                added.append(q)
        if not added:
            break
        pts = np.vstack([pool] + [a[None, :] for a in added])
        sc = usets.ScenarioSet(pts, np.full(pts.shape[0], 1.0 / pts.shape[0]), "pool", nlp.scenarios.names)
        new_nlp = nlp.with_scenarios(sc)
        x0 = new_nlp.warm_start_from(nlp, rep.x)
        nlp = new_nlp
        rounds += 1
    certified = {s.name: w.value for s, w in zip(subs, worst)}
    rep.meta.update({"rounds": rounds, "generation": log, "certified_worst": certified,
                     "worst_offender": max(certified, key=certified.get) if certified else None})
    if offenders and rep.status == "optimal":
        rep.status = "iteration-limit"
    rep.wall_time = time.perf_counter() - t0
    rep.meta["nlp"] = nlp
    return rep


def _original_entries(problem: M.UccdProblem):
    """Inequality entries of the user's problem (epigraph rows are appended last)."""
    ineq = problem.constraints.inequalities
    return list(enumerate(ineq[: len(ineq) - len(problem.original_costs)]))


def _rows_evaluator(nlp: CompiledNlp, index: int, names):
    rows = nlp.entry_rows(index)

    def evaluate(x, Q):
        return nlp.scenario_rows(x, names, np.atleast_2d(Q))[:, rows].max(axis=1)
    return evaluate


def monte_carlo_failure(nlp: CompiledNlp, x, samples: int = 10000, seed: int = 1,
                        chunk: int = 20000) -> dict:
    """Fraction of fresh stochastic draws for which each inequality entry is violated.

    States are re-simulated with the decided controls and statics, so the estimate
    never reuses the scenarios the problem was solved on.  ``"any"`` is the
    fraction with at least one violated entry.
    """
    models, names = renderings(nlp.problem, "stochastic")
    sc = usets.sample_stochastic(models, samples, seed, names)
    entries = _original_entries(nlp.problem)
    fails = {e.name: 0 for _, e in entries}
    any_fail = 0
    rows = {e.name: nlp.entry_rows(i) for i, e in entries}
    for a in range(0, samples, chunk):
        G = nlp.scenario_rows(x, names, sc.points[a:a + chunk])
        hit = np.zeros(G.shape[0], dtype=bool)
        for name, r in rows.items():
            f = np.any(G[:, r] > 0.0, axis=1) if r.size else np.zeros(G.shape[0], dtype=bool)
            fails[name] += int(f.sum())
            hit |= f
        any_fail += int(hit.sum())
    out = {k: v / samples for k, v in fails.items()}
    out["any"] = any_fail / samples
    return out


def worst_case_entries(nlp: CompiledNlp, x, opts: SolverOptions | None = None, mode: str = "ascent") -> dict:
    """Worst value of every inequality entry over the crisp rendering at the decision ``x``."""
    models, names = renderings(nlp.problem, "crisp")
    out = {}
    for i, e in _original_entries(nlp.problem):
        sub = WcrSubproblem(i, e.name, tuple(models), mode, _rows_evaluator(nlp, i, names), names)
        out[e.name] = inner_maximize(sub, x, opts)
    return out


# ---------------------------------------------------------------------------
# grid oracle
# ---------------------------------------------------------------------------


@dataclass
class OracleResult:
    feasible: bool
    point: np.ndarray | None
    value: float
    x: np.ndarray | None
    names: tuple
    cell: np.ndarray
    evaluated: int


def free_variables(nlp: CompiledNlp):
    """Indices and labels of the decisions the oracle scans.

    Controls, statics and unfixed initial states are free; all later state nodes
    are completed by forward simulation.
    """
    lay = nlp.layout
    fixed = nlp.fixed_mask()
    idx, names = [], []
    U_idx = np.arange(lay.slices["controls"].start, lay.slices["controls"].stop).reshape(lay.shapes["controls"])
    X_idx = np.arange(lay.slices["states"].start, lay.slices["states"].stop).reshape(lay.shapes["states"])
    P_idx = np.arange(lay.slices["statics"].start, lay.slices["statics"].stop)
    k = nlp.kernel
    for c, kk, j in itertools.product(range(U_idx.shape[0]), range(U_idx.shape[1]), range(U_idx.shape[2])):
        if not fixed[U_idx[c, kk, j]]:
            idx.append(U_idx[c, kk, j])
            names.append(f"{k.controls[j]}[{c},{kk}]")
    for s, i in itertools.product(range(X_idx.shape[0]), range(X_idx.shape[2])):
        if not fixed[X_idx[s, 0, i]]:
            idx.append(X_idx[s, 0, i])
            names.append(f"{k.states[i]}0[{s}]")
    for m, n in enumerate(nlp.problem.statics.names):
        if not fixed[P_idx[m]]:
            idx.append(P_idx[m])
            names.append(n)
    return np.array(idx, dtype=int), tuple(names)


def grid_oracle(nlp: CompiledNlp, bounds=None, resolution: int = 11, span: float = 5.0,
                tol: float = 1e-6, max_dim: int = 6) -> OracleResult:
    """Exhaustive tensor-grid scan over the free decisions.

    Infinite bounds are replaced by ``[-span, span]``.  A point is admitted when
    its constraint violation (including bounds of the simulated states) is at
    most ``tol``; ties go to the lexicographically smallest point.
    """
    if resolution < 3:
        raise ValueError("resolution must be >= 3")
    idx, names = free_variables(nlp)
    if idx.size > max_dim:
        raise ValueError(f"oracle dimension {idx.size} exceeds {max_dim}")
    if bounds is None:
        lo = np.where(np.isfinite(nlp.lower[idx]), nlp.lower[idx], -span)
        hi = np.where(np.isfinite(nlp.upper[idx]), nlp.upper[idx], span)
    else:
        b = np.asarray(bounds, dtype=float).reshape(-1, 2)
        lo, hi = b[:, 0], b[:, 1]
    axes = [np.linspace(a, b, resolution) for a, b in zip(lo, hi)]
    cell = (hi - lo) / (resolution - 1)
    base = nlp.initial_guess()
    lay = nlp.layout
    U_sl, X_sl = lay.slices["controls"], lay.slices["states"]
    best = (np.inf, None, None)
    count = 0
    feasible_any = False
    sc = nlp.scen
    for pt in itertools.product(*axes):
        x = base.copy()
        x[idx] = pt
        U, X, P = nlp.unpack(x)
        if nlp.kernel.n_s:
            x0 = X[:, 0]
            Xs = M.simulate(nlp.problem, U[nlp.ctrl_of], P, sc, x0)
            x[X_sl] = Xs.ravel()
        ev = nlp.evaluate(x)
        count += 1
        viol = nlp.max_violation(ev)
        bviol = float(np.max(np.maximum(nlp.lower - x, 0.0) + np.maximum(x - nlp.upper, 0.0)))
        if max(viol, bviol) <= tol:
            feasible_any = True
            if ev.f < best[0]:
                best = (ev.f, np.array(pt), x)
    if not feasible_any:
        return OracleResult(False, None, np.inf, None, names, cell, count)
    return OracleResult(True, best[1], float(best[0]), best[2], names, cell, count)
