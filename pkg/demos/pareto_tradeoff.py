"""Mean versus spread of the objective as the robustness weight moves.

``alpha_w = 1`` minimizes the scenario mean only; ``alpha_w = 0`` the standard
deviation only.  The sweep traces the trade-off between the two.
"""

from uccd import cli
from uccd import library as L
from uccd import model as M

rows, status = cli.pareto_sweep(M.build_problem(L.tradeoff_problem()), 6)
print("alpha_w   o_mu      o_sigma")
for (a, mu, sd), st in zip(rows, status):
    print(f"{a:6.2f}  {mu:.5f}  {sd:.5f}  {st}")
