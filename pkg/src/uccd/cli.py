"""Command-line entry point.

Commands: ``validate``, ``solve``, ``pareto``, ``compare``, ``oracle`` and ``lqr-demo``.
Exit codes are a stable contract: 0 success, 2 validation, 3 compatibility,
4 solver non-optimal, 5 internal error.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import math
import os
import sys
import tempfile
import traceback
from contextlib import nullcontext
from pathlib import Path

import numpy as np

from . import __version__
from . import dynamics as D
from . import formulations as F
from . import model as M
from . import solve as S

EXIT_OK, EXIT_VALIDATION, EXIT_COMPAT, EXIT_NONOPTIMAL, EXIT_INTERNAL = 0, 2, 3, 4, 5


class CliError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


# ---------------------------------------------------------------------------
# artifact plumbing
# ---------------------------------------------------------------------------


def _clean(obj):
    """JSON-ready copy: arrays to lists, non-finite floats to strings."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items() if not callable(v)}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else repr(v)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if obj is None or isinstance(obj, (str, int, bool)):
        return obj
    return repr(obj)


def dumps(obj) -> str:
    """Deterministic JSON text (sorted keys, shortest round-trip floats)."""
    return json.dumps(_clean(obj), sort_keys=True, indent=2) + "\n"


def write_atomic(path: Path, text: str):
    """Write through a temporary file in the same directory and rename over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])
    return buf.getvalue()


def _thread_limit():
    n = os.environ.get("UCCD_THREADS")
    if not n:
        return nullcontext()
    try:
        limit = int(n)
    except ValueError:
        raise CliError(EXIT_VALIDATION, f"UCCD_THREADS must be an integer, got {n!r}") from None
    if limit < 1:
        raise CliError(EXIT_VALIDATION, "UCCD_THREADS must be >= 1")
    from threadpoolctl import threadpool_info, threadpool_limits
    # A ceiling only: OpenBLAS crashes when asked for more threads than its pool was built with.
    current = max((lib["num_threads"] for lib in threadpool_info()), default=limit)
    return threadpool_limits(limits=min(limit, current))


def _serial():
    """Single-threaded BLAS for the optimizer.

    Threaded BLAS reductions may round differently per thread count; pinning the
    solver to one thread makes ``solution.json`` independent of ``UCCD_THREADS``.
    """
    from threadpoolctl import threadpool_limits
    return threadpool_limits(limits=1, user_api="blas")


def _solve(nlp, x0=None, opts=None):
    with _serial():
        return S.solve(nlp, x0, opts)


# ---------------------------------------------------------------------------
# document loading and validation
# ---------------------------------------------------------------------------


def _anchor(text: str, path: str) -> int:
    """Line (1-based) where the last resolvable key of a finding path appears."""
    lines = text.splitlines()
    line, pos = 0, 0
    for part in path.replace("[", ".[").split("."):
        if not part or part.startswith("["):
            continue
        needle = f'"{part}"'
        for i in range(line, len(lines)):
            start = pos if i == line else 0
            if needle in lines[i][start:]:
                line, pos = i, lines[i].index(needle, start) + len(needle)
                break
    return line + 1


def read_document(path):
    """Parse a problem document; returns ``(raw bytes, text, document)``."""
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise CliError(EXIT_VALIDATION, f"{path}: cannot read: {exc.strerror}") from None
    text = raw.decode("utf-8", errors="replace")
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise CliError(EXIT_VALIDATION, f"{path}:{exc.lineno}:{exc.colno}: parse error: {exc.msg}") from None
    return raw, text, doc


def findings_text(path, text, findings) -> str:
    return "\n".join(f"{path}:{_anchor(text, p)}: {p}: {m}" for p, m in findings)


def load_problem(path):
    raw, text, doc = read_document(path)
    try:
        return raw, M.build_problem(doc)
    except M.ProblemValidationError as exc:
        raise CliError(EXIT_VALIDATION, findings_text(path, text, exc.findings)) from None


def cmd_validate(args) -> int:
    load_problem(args.path)
    print(f"{args.path}: valid")
    return EXIT_OK


# ---------------------------------------------------------------------------
# solving
# ---------------------------------------------------------------------------

_PARAM_FLAGS = ("samples", "seed", "mode", "p_f", "alpha_w", "k_s", "sigma_a", "gamma", "n_levels",
                "pos_f", "inner_mode", "moment_match")


def _overrides(args) -> dict:
    out = {}
    for k in _PARAM_FLAGS:
        v = getattr(args, k, None)
        if v is not None:
            out[k] = v
    if getattr(args, "wcr_mode", None):
        out["mode"] = args.wcr_mode
    return out


def _options(args) -> S.SolverOptions:
    kw = {}
    for k in ("ctol", "gtol", "max_outer_iters"):
        v = getattr(args, k, None)
        if v is not None:
            kw[k] = v
    seed = getattr(args, "seed", None)
    if seed is not None:
        kw["seed"] = seed
    return S.SolverOptions(**kw)


def _seed(problem, args) -> int:
    if getattr(args, "seed", None) is not None:
        return int(args.seed)
    return int(problem.formulation.get("seed", 0))


def _compile(problem, ftype, structure, params):
    try:
        return F.compile_problem(problem, ftype, structure, **params)
    except F.CompatibilityError as exc:
        raise CliError(EXIT_COMPAT, f"incompatible formulation {ftype!r}: {exc}") from None


def _manifest(args, command, raw, ftype, seed, overrides) -> dict:
    return {
        "command": command,
        "problem_path": str(args.path),
        "problem_sha256": hashlib.sha256(raw).hexdigest(),
        "formulation": ftype,
        "structure": getattr(args, "structure", None),
        "seed": seed,
        "overrides": overrides,
        "solver": {k: getattr(args, k, None) for k in ("ctol", "gtol", "max_outer_iters")},
        "output_dir": str(args.out),
        "tool_version": __version__,
    }


def _outer_nlp(nlp_or_tuple, rep):
    if isinstance(nlp_or_tuple, tuple):
        return rep.meta.get("nlp", nlp_or_tuple[0])
    return nlp_or_tuple


def solution_document(nlp, rep, ftype) -> dict:
    """Machine-readable optimum; contains nothing run-dependent such as timings."""
    k = nlp.kernel
    U, X = rep.slices["controls"], rep.slices["states"]
    return {
        "status": rep.status,
        "objective": rep.objective,
        "formulation": ftype,
        "structure": nlp.structure,
        "n_scenarios": nlp.S,
        "flags": rep.flags,
        "time": k.t,
        "controls": {c: U[..., j] for j, c in enumerate(k.controls)},
        "states": {s: X[..., i] for i, s in enumerate(k.states)},
        "statics": rep.slices["statics"],
        "residuals": rep.residuals,
    }


def trajectories_csv(nlp, rep) -> str:
    k = nlp.kernel
    U, X = rep.slices["controls"], rep.slices["states"]
    rows = []
    for s in range(nlp.S):
        c = nlp.ctrl_of[s]
        for n in range(nlp.N):
            rows.append([s, float(k.t[n])] + [float(v) for v in X[s, n]] + [float(v) for v in U[c, n]])
    return csv_text(["scenario", "time"] + list(k.states) + list(k.controls), rows)


def _reliability(nlp, rep, seed, samples):
    try:
        F.renderings(nlp.problem, "stochastic")
    except F.CompatibilityError:
        return None
    if not nlp.problem.bindings:
        return None
    return {"seed": seed + 1, "samples": samples,
            "failure_probability": S.monte_carlo_failure(nlp, rep.x, samples, seed + 1)}


def run_solve(problem, ftype, structure, params, opts):
    nlp = _compile(problem, ftype, structure, params)
    rep = _solve(nlp, opts=opts)
    return _outer_nlp(nlp, rep), rep


def cmd_solve(args) -> int:
    raw, problem = load_problem(args.path)
    ftype = args.formulation or problem.formulation.type
    overrides = _overrides(args)
    seed = _seed(problem, args)
    out = Path(args.out)
    write_atomic(out / "manifest.json", dumps(_manifest(args, "solve", raw, ftype, seed, overrides)))
    nlp, rep = run_solve(problem, ftype, args.structure, overrides, _options(args))
    write_atomic(out / "solution.json", dumps(solution_document(nlp, rep, ftype)))
    write_atomic(out / "trajectories.csv", trajectories_csv(nlp, rep))
    report = {
        "status": rep.status,
        "objective": rep.objective,
        "diagnostics": rep.diagnostics,
        "trace": rep.trace,
        "wall_time": rep.wall_time,
        "flags": rep.flags,
        "meta": {k: v for k, v in rep.meta.items() if k != "nlp"},
        "reliability": _reliability(nlp, rep, seed, args.mc_samples),
    }
    write_atomic(out / "report.json", dumps(report))
    print(f"status={rep.status} objective={rep.objective!r} scenarios={nlp.S}")
    return EXIT_OK if rep.status == "optimal" else EXIT_NONOPTIMAL


def pareto_sweep(problem, K: int, structure=None, params=None, opts=None):
    """Weighted mean/std solves over ``alpha_w = 0, 1/(K-1), ..., 1``.

    Each weight is solved from a cold start and from the neighbouring solution;
    the better scalarized optimum is kept.
    """
    if K < 2:
        raise CliError(EXIT_VALIDATION, "--alpha-grid needs at least 2 points")
    params = dict(params or {})
    params.pop("alpha_w", None)
    alphas = np.round(np.linspace(0.0, 1.0, K), 12)
    rows, statuses, x_prev = [None] * K, [None] * K, None
    for i in range(K - 1, -1, -1):
        nlp = _compile(problem, "pr-w", structure, dict(params, alpha_w=float(alphas[i])))
        best = _solve(nlp, opts=opts)
        if x_prev is not None:
            warm = _solve(nlp, x_prev, opts)
            if warm.status == "optimal" and (best.status != "optimal" or warm.objective < best.objective):
                best = warm
        d = best.diagnostics["objective"]
        rows[i] = (float(alphas[i]), d["mean"], d["std"])
        statuses[i] = best.status
        x_prev = best.x
    return rows, statuses


def cmd_pareto(args) -> int:
    raw, problem = load_problem(args.path)
    overrides = _overrides(args)
    seed = _seed(problem, args)
    out = Path(args.out)
    man = _manifest(args, "pareto", raw, "pr-w", seed, dict(overrides, alpha_grid=args.alpha_grid))
    write_atomic(out / "manifest.json", dumps(man))
    rows, statuses = pareto_sweep(problem, args.alpha_grid, args.structure, overrides, _options(args))
    write_atomic(out / "pareto.csv", csv_text(["alpha_w", "o_mu", "o_sigma", "status"],
                                              [r + (s,) for r, s in zip(rows, statuses)]))
    for (a, m, sd), st in zip(rows, statuses):
        print(f"alpha_w={a:.4f} o_mu={m:.8g} o_sigma={sd:.8g} {st}")
    return EXIT_OK if all(s == "optimal" for s in statuses) else EXIT_NONOPTIMAL


def compare_formulations(problem, formulations, params, opts, seed, mc_samples, structure=None):
    """Solve each formulation and re-evaluate it on the crisp sets and on fresh samples."""
    table = {}
    for ftype in formulations:
        nlp, rep = run_solve(problem, ftype, structure, params, opts)
        worst = S.worst_case_entries(nlp, rep.x, opts) if _has_family(problem, "crisp") else {}
        fresh = (S.monte_carlo_failure(nlp, rep.x, mc_samples, seed + 1)
                 if _has_family(problem, "stochastic") else {})
        table[ftype] = {
            "status": rep.status,
            "objective": rep.objective,
            "worst_case_g": {k: v.value for k, v in worst.items()},
            "worst_case_point": {k: v.q for k, v in worst.items()},
            "empirical_failure": fresh,
            "flags": rep.flags,
        }
    return table


def _has_family(problem, family):
    if not problem.bindings:
        return False
    try:
        F.renderings(problem, family)
        return True
    except F.CompatibilityError:
        return False


def cmd_compare(args) -> int:
    raw, problem = load_problem(args.path)
    forms = [f.strip() for f in args.formulations.split(",") if f.strip()]
    bad = [f for f in forms if f not in M.FORMULATION_TYPES]
    if bad:
        raise CliError(EXIT_VALIDATION, f"unknown formulation(s) {bad}; choose from {list(M.FORMULATION_TYPES)}")
    overrides = _overrides(args)
    seed = _seed(problem, args)
    out = Path(args.out)
    man = _manifest(args, "compare", raw, ",".join(forms), seed, dict(overrides, mc_samples=args.mc_samples))
    write_atomic(out / "manifest.json", dumps(man))
    table = compare_formulations(problem, forms, overrides, _options(args), seed, args.mc_samples, args.structure)
    write_atomic(out / "comparison.json", dumps({"mc_seed": seed + 1, "mc_samples": args.mc_samples,
                                                  "formulations": table}))
    for f, row in table.items():
        print(f"{f}: status={row['status']} objective={row['objective']:.8g} "
              f"worst_g={row['worst_case_g']} p_fail={row['empirical_failure'].get('any')}")
    return EXIT_OK if all(r["status"] == "optimal" for r in table.values()) else EXIT_NONOPTIMAL


def oracle_check(problem, resolution, ftype=None, opts=None, span=5.0):
    ftype = ftype or "det"
    nlp = _compile(problem, ftype, None, {})
    if isinstance(nlp, tuple):
        raise CliError(EXIT_COMPAT, "the oracle needs a single NLP, not a scenario-generation loop")
    idx, names = S.free_variables(nlp)
    if idx.size > 6:
        raise CliError(EXIT_VALIDATION, f"oracle dimension {idx.size} exceeds 6; reduce grid.n_nodes")
    orc = S.grid_oracle(nlp, resolution=resolution, span=span)
    with _serial():
        rep = S.solve_nlp(nlp, opts=opts)
    solver_feasible = rep.status == "optimal"
    out = {"dimension": int(idx.size), "names": names, "resolution": resolution,
           "oracle_feasible": orc.feasible, "solver_status": rep.status,
           "oracle_value": orc.value if orc.feasible else None, "solver_value": rep.objective,
           "cell": orc.cell, "oracle_point": orc.point, "solver_point": rep.x[idx]}
    if orc.feasible and solver_feasible:
        gap = rep.x[idx] - orc.point
        out["objective_gap"] = abs(orc.value - rep.objective)
        out["argmin_distance_cells"] = float(np.max(np.abs(gap) / np.where(orc.cell > 0, orc.cell, 1.0)))
    out["agree"] = (orc.feasible == solver_feasible) and (
        not orc.feasible or out["argmin_distance_cells"] <= 1.0 + 1e-9)
    return out


def cmd_oracle(args) -> int:
    raw, problem = load_problem(args.path)
    out = Path(args.out)
    write_atomic(out / "manifest.json", dumps(_manifest(args, "oracle", raw, args.formulation or "det", 0,
                                                        {"resolution": args.resolution})))
    res = oracle_check(problem, args.resolution, args.formulation, _options(args))
    write_atomic(out / "oracle.json", dumps(res))
    if res.get("objective_gap") is not None:
        print(f"dimension={res['dimension']} objective_gap={res['objective_gap']:.3e} "
              f"argmin_distance_cells={res['argmin_distance_cells']:.3f}")
    else:
        print(f"dimension={res['dimension']} oracle_feasible={res['oracle_feasible']} "
              f"solver_status={res['solver_status']}")
    return EXIT_OK if res["agree"] else EXIT_NONOPTIMAL


def _matrix_arg(text, shape=None):
    arr = np.atleast_2d(np.asarray(json.loads(text) if text.strip().startswith("[") else float(text), dtype=float))
    return arr


def lqr_demo(a, b, q, r, noise, paths, seed, x0_mean=1.0, x0_std=0.5, ref=0.0, n_nodes=501, horizon=None,
             keep_paths=10):
    A, B, Q, R = (_matrix_arg(str(v)) if not isinstance(v, np.ndarray) else v for v in (a, b, q, r))
    n = A.shape[0]
    if n > 2:
        raise CliError(EXIT_VALIDATION, "lqr-demo handles scalar and 2-D systems")
    try:
        spec = D.LqrSpec(A, B.reshape(n, -1), Q, R, np.full(n, ref))
    except ValueError as exc:
        raise CliError(EXIT_VALIDATION, str(exc)) from None
    from . import usets
    x0 = [usets.Gaussian(x0_mean, x0_std) for _ in range(n)] if x0_std > 0 else np.full(n, x0_mean)
    try:
        P = D.solve_care(spec)
    except D.NotStabilizableError as exc:
        raise CliError(EXIT_NONOPTIMAL, f"unstabilizable spec: {exc}") from None
    K = D.lqr_gain(spec, P)
    T = horizon or D.default_horizon(spec, K)
    grid = np.linspace(0.0, T, n_nodes)
    noise_m = None if noise == 0 else noise * np.eye(n)
    ens = D.lqr_rollout_ensemble(spec, noise_m, x0, grid, paths, seed)
    header = ["time"] + [f"mean_{i}" for i in range(n)] + [f"std_{i}" for i in range(n)]
    keep = min(keep_paths, paths)
    header += [f"path{p}_{i}" for p in range(keep) for i in range(n)]
    rows = []
    for kk, t in enumerate(ens.t):
        rows.append([float(t)] + list(map(float, ens.mean[kk])) + list(map(float, ens.std[kk]))
                    + [float(ens.paths[p, kk, i]) for p in range(keep) for i in range(n)])
    return ens, csv_text(header, rows)


def cmd_lqr_demo(args) -> int:
    out = Path(args.out)
    ens, text = lqr_demo(args.a, args.b, args.q, args.r, args.noise, args.paths, args.seed,
                         args.x0_mean, args.x0_std, args.ref, args.nodes, args.horizon)
    write_atomic(out / "lqr_ensemble.csv", text)
    print(f"gain={np.array2string(ens.K.ravel(), precision=10)} care_residual={ens.residual:.3e}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------


def _solver_flags(p):
    g = p.add_argument_group("solver")
    g.add_argument("--ctol", type=float, help="constraint tolerance")
    g.add_argument("--gtol", type=float, help="stationarity tolerance")
    g.add_argument("--max-outer-iters", type=int, dest="max_outer_iters")


def _formulation_flags(p):
    g = p.add_argument_group("formulation")
    g.add_argument("--structure", choices=M.STRUCTURES)
    g.add_argument("--samples", type=int, help="Monte Carlo scenarios for stochastic formulations")
    g.add_argument("--seed", type=int)
    g.add_argument("--mode", choices=("gaussian", "saa"), help="chance-constraint mode")
    g.add_argument("--wcr-mode", choices=("vertex", "scenario-generation"), dest="wcr_mode")
    g.add_argument("--inner-mode", choices=("ascent", "vertex"), dest="inner_mode")
    g.add_argument("--p-f", type=float, dest="p_f")
    g.add_argument("--alpha-w", type=float, dest="alpha_w")
    g.add_argument("--k-s", type=float, dest="k_s")
    g.add_argument("--sigma-a", type=float, dest="sigma_a")
    g.add_argument("--gamma", type=float)
    g.add_argument("--n-levels", type=int, dest="n_levels")
    g.add_argument("--pos-f", type=float, dest="pos_f")
    g.add_argument("--moment-match", action="store_const", const=True, dest="moment_match")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="uccd", description="Control co-design under uncertainty")
    ap.add_argument("--version", action="version", version=f"uccd {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="check a problem document")
    p.add_argument("path")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("solve", help="solve a problem document")
    p.add_argument("path")
    p.add_argument("--formulation", choices=M.FORMULATION_TYPES)
    p.add_argument("--out", default="uccd-out")
    p.add_argument("--mc-samples", type=int, default=10000, dest="mc_samples",
                   help="fresh samples for the reported failure probabilities")
    _formulation_flags(p)
    _solver_flags(p)
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("pareto", help="sweep the mean/std weight")
    p.add_argument("path")
    p.add_argument("--alpha-grid", type=int, default=11, dest="alpha_grid")
    p.add_argument("--out", default="uccd-out")
    _formulation_flags(p)
    _solver_flags(p)
    p.set_defaults(func=cmd_pareto)

    p = sub.add_parser("compare", help="compare formulations on one document")
    p.add_argument("path")
    p.add_argument("--formulations", default="se,scc,wcr")
    p.add_argument("--out", default="uccd-out")
    p.add_argument("--mc-samples", type=int, default=100000, dest="mc_samples")
    _formulation_flags(p)
    _solver_flags(p)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("oracle", help="cross-check the solver against a grid search")
    p.add_argument("path")
    p.add_argument("--resolution", type=int, default=41)
    p.add_argument("--formulation", choices=M.FORMULATION_TYPES)
    p.add_argument("--out", default="uccd-out")
    _solver_flags(p)
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser("lqr-demo", help="closed-loop ensemble of a scalar or 2-D regulator")
    p.add_argument("--a", default="1.0", help="A as a number or JSON matrix")
    p.add_argument("--b", default="1.0")
    p.add_argument("--q", default="1.0")
    p.add_argument("--r", default="1.0")
    p.add_argument("--noise", type=float, default=0.0, help="process-noise intensity")
    p.add_argument("--paths", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--x0-mean", type=float, default=1.0, dest="x0_mean")
    p.add_argument("--x0-std", type=float, default=0.5, dest="x0_std")
    p.add_argument("--ref", type=float, default=0.0)
    p.add_argument("--nodes", type=int, default=501)
    p.add_argument("--horizon", type=float)
    p.add_argument("--out", default="uccd-out")
    p.set_defaults(func=cmd_lqr_demo)
    return ap


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        with _thread_limit():
            return int(args.func(args))
    except CliError as exc:
        print(f"uccd: {exc}", file=sys.stderr)
        return exc.code
    except F.CompatibilityError as exc:
        print(f"uccd: incompatible: {exc}", file=sys.stderr)
        return EXIT_COMPAT
    except M.ProblemValidationError as exc:
        print(f"uccd: invalid: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except Exception:  # noqa: BLE001 - the exit-code contract needs a catch-all
        traceback.print_exc()
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
