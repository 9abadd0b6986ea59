"""Control co-design under uncertainty by direct transcription.

Modules
-------
model
    Problem documents, time grids and the collocation kernel.
usets
    Stochastic, crisp and fuzzy uncertainty models and scenario sets.
risk
    Risk measures, fuzzy quadrature and evidence-theory summaries.
formulations
    Compilers from an uncertain problem to a deterministic NLP.
solve
    Augmented-Lagrangian solver, worst-case inner maximization and a grid oracle.
dynamics
    Euler-Maruyama ensembles and Riccati-based regulators.
cli
    The ``uccd`` command.
"""

__version__ = "0.1.0"

from .model import ProblemValidationError, UccdProblem, build_problem  # noqa: E402
from .formulations import CompatibilityError, compile_problem  # noqa: E402
from .solve import SolveReport, SolverOptions, solve_nlp  # noqa: E402

__all__ = [
    "__version__",
    "ProblemValidationError",
    "UccdProblem",
    "build_problem",
    "CompatibilityError",
    "compile_problem",
    "SolveReport",
    "SolverOptions",
    "solve_nlp",
]
