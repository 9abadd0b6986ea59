"""Shared versus per-scenario controls under a 10% spread of the start position.

With one control per scenario (olmc) each scenario reaches the target exactly.
A single shared control (olsc) can only steer the scenario mean there, and the
remaining terminal spread is what the uncertainty costs.
"""

from uccd import formulations as F
from uccd import library as L
from uccd import model as M
from uccd import solve as S

for structure in ("olmc", "olsc"):
    problem = M.build_problem(L.initial_spread_problem(samples=5, structure=structure))
    rep = S.solve(F.compile_problem(problem, "se", structure))
    print(f"{structure}: J={rep.objective:.5f} terminal residuals="
          f"{[round(r, 4) for r in rep.residuals['terminal_residual']]} spread={rep.residuals['terminal_spread']}"
          f" flags={rep.flags}")
