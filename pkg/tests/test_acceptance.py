"""Acceptance criteria 1 to 10, each checked at its stated tolerance.

Every test prints exactly one ``PASS``/``FAIL`` line (outside pytest's capture)
before asserting, so ``pytest tests/test_acceptance.py`` doubles as a report.
"""

import csv
import json
import os
import subprocess
import sys
import time

import numpy as np
import pytest
from scipy.optimize import minimize
from scipy.stats import norm

from uccd import cli
from uccd import dynamics as D
from uccd import formulations as F
from uccd import library as L
from uccd import model as M
from uccd import risk as R
from uccd import solve as S
from uccd import usets as U


@pytest.fixture
def verdict(capsys):
    def emit(tag, ok, detail):
        with capsys.disabled():
            print(f"\n[{'PASS' if ok else 'FAIL'}] {tag}: {detail}")
        assert ok, f"{tag}: {detail}"
    return emit


def _solve(doc, ftype, structure=None, **kw):
    return S.solve(F.compile_problem(M.build_problem(doc), ftype, structure, **kw))


def test_c1_reduction_identities(verdict):
    # 241 nodes put the transcribed optimum within 1e-3 of the analytic 12 as well
    base = L.double_integrator(241)
    point = {
        "se": ({"kind": "discrete", "params": {"values": [1.0], "probabilities": [1.0]}}, {"samples": 5}),
        "wcr": ({"kind": "box", "params": {"center": [1.0], "halfwidth": [0.0]}}, {}),
        "pcc": ({"kind": "triangular", "params": {"a": 1.0, "b": 1.0, "c": 1.0}}, {}),
        "pr-w": ({"kind": "discrete", "params": {"values": [1.0], "probabilities": [1.0]}},
                 {"samples": 5, "alpha_w": 1.0, "k_s": 0.0}),
    }
    t0 = time.perf_counter()
    det = _solve(base, "det")
    gaps = {}
    for ftype, (block, kw) in point.items():
        doc = dict(base, uncertainty=[dict(block, target=["m"])])
        rep = _solve(doc, ftype, **kw)
        gaps[ftype] = abs(rep.objective - det.objective) if rep.status == "optimal" else np.inf
    wall = time.perf_counter() - t0
    ok = (det.status == "optimal" and abs(det.objective - 12.0) <= 1e-3
          and max(gaps.values()) <= 1e-3 and wall <= 10.0)
    verdict("C1 reduction identities", ok,
            f"J_det={det.objective:.6f} max|dJ|={max(gaps.values()):.2e} ({gaps}) wall={wall:.1f}s")


def test_c2_vertex_exactness(verdict):
    h = 0.1
    vertices = [(1 + s1 * h, 0.5 + s2 * h) for s1 in (-1, 1) for s2 in (-1, 1)]
    cons = [{"type": "ineq", "fun": (lambda p, v=v: 1.0 - v[0] * p[0] - v[1] * p[1])} for v in vertices]
    oracle = minimize(lambda p: np.sum((p - 1.0) ** 2), np.zeros(2), method="SLSQP", constraints=cons,
                      bounds=[(0, None), (0, None)], options={"ftol": 1e-15, "maxiter": 500})
    vert = _solve(L.static_box_problem(h), "wcr", mode="vertex")
    gen = _solve(L.static_box_problem(h), "wcr", mode="scenario-generation")
    rounds = gen.meta["rounds"]
    ok = (vert.status == gen.status == "optimal" and abs(vert.objective - oracle.fun) <= 1e-6
          and abs(gen.objective - oracle.fun) <= 1e-6 and rounds <= 5)
    verdict("C2 vertex exactness", ok,
            f"oracle={oracle.fun:.9f} vertex={vert.objective:.9f} generation={gen.objective:.9f} rounds={rounds}")


def test_c3_chance_calibration(verdict):
    mu, sigma, n = 1.0, 0.5, 10_000
    rows, ok = [], True
    for p_f in (0.5, 0.1, 0.02275):
        exact = mu + norm.ppf(1 - p_f) * sigma
        g = _solve(L.chance_problem(mu, sigma, n), "scc", mode="gaussian", p_f=p_f)
        s = _solve(L.chance_problem(mu, sigma, n), "scc", mode="saa", p_f=p_f)
        true_fail = norm.sf((s.objective - mu) / sigma)
        band = 2 * np.sqrt(p_f * (1 - p_f) / n)
        ok &= (g.status == s.status == "optimal" and abs(g.objective - exact) <= 1e-4
               and abs(true_fail - p_f) <= band)
        rows.append(f"P_f={p_f}: gauss dc={g.objective - exact:+.1e} saa P={true_fail:.4f}+-{band:.4f}")
    verdict("C3 chance calibration", ok, "; ".join(rows))


def test_c4_risk_oracles(verdict):
    x = np.random.default_rng(0).uniform(size=1_000_000)
    cv = R.cvar(x, 0.9)
    fe = R.fuzzy_expected_value(U.Triangular(0.0, 1.0, 3.0))
    bp = R.belief_plausibility(R.Bpa(((("a",), 0.6), (("a", "b"), 0.4))), {"a"})
    ok = abs(cv - 0.95) <= 0.002 and abs(fe - 1.25) <= 1e-3 and bp == (0.6, 1.0)
    verdict("C4 risk oracles", ok, f"CVaR={cv:.5f} FEV={fe:.6f} Bel/Pl={bp}")


def _nondecreasing(vals, slack=1e-5):
    return all(b >= a - slack for a, b in zip(vals, vals[1:]))


def test_c5_monotone_conservatism(verdict):
    ks = [_solve(L.paired_problem(), "pr-w", alpha_w=1.0, k_s=k) for k in (0.0, 1.0, 3.0)]
    hw = [_solve(L.static_box_problem(h), "wcr") for h in (0.0, 0.1, 0.2)]
    pf = [_solve(L.paired_problem(), "scc", mode="gaussian", p_f=p) for p in (0.5, 0.1, 0.01)]
    sweeps = {"k_s": ks, "halfwidth": hw, "P_f": pf}
    vals = {k: [r.objective for r in v] for k, v in sweeps.items()}
    ok = all(r.status == "optimal" for v in sweeps.values() for r in v)
    ok &= all(_nondecreasing(v) for v in vals.values())
    verdict("C5 monotone conservatism", ok,
            "; ".join(f"{k}: " + ", ".join(f"{x:.6f}" for x in v) for k, v in vals.items()))


def test_c6_structure_contract(verdict):
    t0 = time.perf_counter()
    olmc = _solve(L.initial_spread_problem(samples=5, structure="olmc"), "se", "olmc")
    olsc = _solve(L.initial_spread_problem(samples=5, structure="olsc"), "se", "olsc")
    wall = time.perf_counter() - t0
    res = max(olmc.residuals["terminal_residual"])
    spread = olsc.residuals["terminal_spread"]
    ok = (olmc.status == olsc.status == "optimal" and olmc.meta["n_scenarios"] == 5 and res <= 1e-6
          and max(spread) > 0 and wall <= 30.0)
    verdict("C6 OLSC/OLMC contract", ok,
            f"OLMC max terminal residual={res:.1e}; OLSC terminal spread={spread[0]:.4f} (x), "
            f"{spread[1]:.1e} (v); wall={wall:.1f}s")


def test_c7_lqr(verdict):
    spec = D.LqrSpec.scalar(1.0, 1.0, 1.0, 1.0)
    P = D.solve_care(spec)
    res = D.care_residual(spec, P)
    quiet = D.lqr_rollout_ensemble(spec, None, [U.Gaussian(1.0, 0.5)], n_paths=10_000, seed=0)
    std = quiet.std[:, 0]
    shrinking = bool(np.all(np.diff(std) <= 1e-12))
    # open-loop stationarity needs a stable A, so the noisy comparison uses a = -1
    stable = D.LqrSpec.scalar(a=-1.0)
    grid = np.linspace(0.0, 8.0, 801)
    kw = dict(noise=[[1.0]], x0=[0.0], grid=grid, n_paths=10_000, seed=4)
    closed = D.lqr_rollout_ensemble(stable, feedback=True, **kw).std[-1, 0]
    opened = D.lqr_rollout_ensemble(stable, feedback=False, **kw).std[-1, 0]
    ok = abs(P[0, 0] - (1 + np.sqrt(2))) <= 1e-8 and res <= 1e-8 and shrinking and closed < opened
    verdict("C7 LQR", ok,
            f"P={P[0, 0]:.10f} residual={res:.1e} std {std[0]:.3f}->{std[-1]:.5f} monotone={shrinking}; "
            f"noisy std closed={closed:.4f} < open={opened:.4f} (theory {np.sqrt(0.5):.4f})")


def test_c8_oracle_equivalence(verdict):
    nlp = F.compile_problem(M.build_problem(L.two_node_double_integrator()), "det")
    idx, _ = S.free_variables(nlp)
    orc = S.grid_oracle(nlp, resolution=41)
    rep = S.solve_nlp(nlp)
    cells = float(np.max(np.abs(rep.x[idx] - orc.point) / orc.cell))
    gap = abs(orc.value - rep.objective)
    ok = orc.feasible and rep.status == "optimal" and idx.size <= 4 and cells <= 1.0 and gap <= 1e-3
    verdict("C8 oracle equivalence", ok, f"dim={idx.size} argmin distance={cells:.3f} cells gap={gap:.1e}")


def test_c9_determinism(verdict, tmp_path):
    doc = tmp_path / "tradeoff.json"
    doc.write_text(json.dumps(L.tradeoff_problem(), indent=1))
    digests = []
    for n in ("1", "2", "8"):
        # size the BLAS pool as well, otherwise the ceiling collapses to the core count
        env = dict(os.environ, UCCD_THREADS=n, OPENBLAS_NUM_THREADS=n)
        out = tmp_path / f"t{n}"
        proc = subprocess.run([sys.executable, "-m", "uccd.cli", "solve", str(doc), "--out", str(out)],
                              env=env, capture_output=True, text=True)
        assert proc.returncode == 0, proc.stderr
        digests.append((out / "solution.json").read_bytes())
    ok = digests[0] == digests[1] == digests[2]
    verdict("C9 determinism", ok, f"solution.json identical across 1/2/8 threads: {ok}")


def test_c10_pareto(verdict, tmp_path):
    doc = tmp_path / "tradeoff.json"
    doc.write_text(json.dumps(L.tradeoff_problem(), indent=1))
    code = cli.main(["pareto", str(doc), "--alpha-grid", "11", "--out", str(tmp_path / "p")])
    rows = list(csv.DictReader((tmp_path / "p" / "pareto.csv").open()))
    mu = [float(r["o_mu"]) for r in rows]
    sd = [float(r["o_sigma"]) for r in rows]
    # independent endpoint solves: the sweep must be at least as good at each end
    problem = M.build_problem(L.tradeoff_problem())
    ends = [S.solve(F.compile_problem(problem, "pr-w", alpha_w=a)).objective for a in (0.0, 1.0)]
    ok = (code == 0 and len(rows) == 11 and _nondecreasing([-m for m in mu]) and _nondecreasing(sd)
          and sd[0] <= ends[0] + 1e-5 and mu[-1] <= ends[1] + 1e-5)
    verdict("C10 Pareto sweep", ok,
            f"o_mu {mu[0]:.5f}->{mu[-1]:.5f} o_sigma {sd[0]:.5f}->{sd[-1]:.5f}; "
            f"endpoint oracles {ends[0]:.5f}, {ends[1]:.5f}")
