"""One overshoot-limited move, several treatments of the same uncertain mass.

The mass is gaussian (sigma 0.05) and paired with its 3-sigma box, so stochastic
and worst-case formulations read the same document.  Each optimum is re-checked
on fresh samples and on the box.
"""

from uccd import formulations as F
from uccd import library as L
from uccd import model as M
from uccd import solve as S

problem = M.build_problem(L.paired_problem(samples=100))
for ftype, kw in [("det", {}), ("se", {}), ("scc", {"p_f": 0.05}), ("pr-w", {"alpha_w": 1.0, "k_s": 2.0}),
                  ("wcr", {})]:
    nlp = F.compile_problem(problem, ftype, **kw)
    rep = S.solve(nlp)
    fail = S.monte_carlo_failure(nlp, rep.x, samples=20_000, seed=1) if ftype != "det" else {}
    worst = S.worst_case_entries(nlp, rep.x)["overshoot"].value
    print(f"{ftype:5s} {rep.status:9s} J={rep.objective:.5f}  worst g={worst:+.4f}"
          f"  P_fail={fail.get('any', float('nan')):.4f}")
