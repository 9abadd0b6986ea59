"""Canned problem documents used by the demos, the CLI smoke tests and the test-suite."""

from __future__ import annotations

import copy

__all__ = [
    "double_integrator",
    "two_node_double_integrator",
    "tradeoff_problem",
    "paired_problem",
    "static_box_problem",
    "chance_problem",
    "initial_spread_problem",
    "DOCUMENTS",
    "document",
]


def double_integrator(n_nodes: int = 21, mass=1.0) -> dict:
    """Rest-to-rest unit move of a unit mass in unit time with minimum control energy.

    The continuous optimum is ``u(t) = 6 - 12 t`` with cost 12.
    """
    return {
        "schema": 1,
        "grid": {"t0": 0.0, "tf": 1.0, "n_nodes": n_nodes},
        "dynamics": {"kind": "registry", "id": "double_integrator", "coefficients": {"mass": "m"}},
        "data": {"constants": {"m": mass}},
        "cost": {"lagrange": {"registry": "control_energy"}},
        "boundary": {"xi0": [0.0, 0.0], "xif": [1.0, 0.0]},
    }


def two_node_double_integrator(u_bound: float = 1.0) -> dict:
    """Two collocation nodes, soft terminal target: two free controls and nothing else.

    With ``u0 = u1 = u`` the discrete cost is ``u^2 + (u/2 - 1)^2 + u^2``, minimized at
    ``u = 2/9`` with value ``8/9``.
    """
    return {
        "schema": 1,
        "grid": {"t0": 0.0, "tf": 1.0, "n_nodes": 2},
        "dynamics": {"kind": "registry", "id": "double_integrator"},
        "cost": {"lagrange": {"registry": "control_energy"},
                 "mayer": {"terminal_Q": [[1.0, 0.0], [0.0, 1.0]], "terminal_ref": [1.0, 0.0]}},
        "boundary": {"xi0": [0.0, 0.0]},
        "constraints": {"control_bounds": {"u": [-u_bound, u_bound]}},
    }


def tradeoff_problem(n_nodes: int = 11, samples: int = 20, seed: int = 0) -> dict:
    """Double integrator with an uncertain mass and start position and a soft terminal target.

    Shared control (olsc).  The terminal penalty is what carries the spread of the
    objective over the scenarios, so the mean/std trade-off is non-trivial.
    """
    return {
        "schema": 1,
        "grid": {"t0": 0.0, "tf": 1.0, "n_nodes": n_nodes},
        "dynamics": {"kind": "registry", "id": "double_integrator", "coefficients": {"mass": "m"}},
        "data": {"constants": {"m": 1.0}},
        "cost": {"lagrange": {"R": [[0.1]]},
                 "mayer": {"terminal_Q": [[10.0, 0.0], [0.0, 1.0]], "terminal_ref": [1.0, 0.0]}},
        "boundary": {"xi0": [0.0, 0.0]},
        "constraints": {"control_bounds": {"u": [-20.0, 20.0]}},
        "uncertainty": [
            {"target": ["m"], "kind": "gaussian", "params": {"mu": 1.0, "sigma": 0.1}},
            {"target": ["xi0[0]"], "kind": "gaussian", "params": {"mu": 0.0, "sigma": 0.1}},
        ],
        "formulation": {"type": "pr-w", "structure": "olsc", "params": {"samples": samples, "seed": seed}},
    }


def paired_problem(n_nodes: int = 11, sigma: float = 0.05, samples: int = 200, seed: int = 0) -> dict:
    """Overshoot limit under a gaussian mass that is paired with its 3-sigma box.

    The terminal target 1.2 lies beyond the limit ``x(1) <= 1.1``, so the
    limit is active and its margin depends on how the mass spread is treated.
    Both stochastic (gaussian) and crisp (box) renderings are present, so the same
    document drives the stochastic and the worst-case formulations.
    """
    return {
        "schema": 1,
        "grid": {"t0": 0.0, "tf": 1.0, "n_nodes": n_nodes},
        "dynamics": {"kind": "registry", "id": "double_integrator", "coefficients": {"mass": "m"}},
        "data": {"constants": {"m": 1.0}},
        "cost": {"lagrange": {"R": [[0.01]]},
                 "mayer": {"terminal_Q": [[1.0, 0.0], [0.0, 0.0]], "terminal_ref": [1.2, 0.0]}},
        "boundary": {"xi0": [0.0, 0.0]},
        "constraints": {
            "inequalities": [{"name": "overshoot", "where": "final", "linear": {"x": 1.0}, "constant": -1.1}],
        },
        "uncertainty": [
            {"target": ["m"], "kind": "gaussian", "params": {"mu": 1.0, "sigma": sigma},
             "paired": {"kind": "box", "params": {"center": [1.0], "halfwidth": [3.0 * sigma]}}},
        ],
        "formulation": {"type": "scc", "structure": "olsc",
                        "params": {"samples": samples, "seed": seed, "p_f": 0.05}},
    }


def static_box_problem(halfwidth: float = 0.1) -> dict:
    """Static design under an affine constraint with a 2-D box of coefficients.

    ``min (p1 - 1)^2 + (p2 - 1)^2`` subject to ``q1 p1 + q2 p2 <= 1`` for every
    ``(q1, q2)`` in the box centered at ``(1, 0.5)``.
    """
    return {
        "schema": 1,
        "grid": {"t0": 0.0, "tf": 1.0, "n_nodes": 2},
        "dynamics": {"kind": "none"},
        "statics": [{"name": "p1", "lower": 0.0}, {"name": "p2", "lower": 0.0}],
        "data": {"constants": {"q1": 1.0, "q2": 0.5}},
        "cost": {"mayer": {"linear": {"p1": -2.0, "p2": -2.0},
                           "quadratic": [["p1", "p1", 1.0], ["p2", "p2", 1.0]], "constant": 2.0}},
        "constraints": {"inequalities": [{"name": "cap", "where": "once",
                                          "quadratic": [["q1", "p1", 1.0], ["q2", "p2", 1.0]],
                                          "constant": -1.0}]},
        "uncertainty": [{"target": ["q1", "q2"], "kind": "box",
                         "params": {"center": [1.0, 0.5], "halfwidth": [halfwidth, halfwidth]}}],
        "formulation": {"type": "wcr", "structure": "olsc"},
    }


def chance_problem(mu: float = 1.0, sigma: float = 0.5, samples: int = 10000, seed: int = 0) -> dict:
    """Smallest ``c`` with ``P[xi - c > 0] <= P_f`` for ``xi ~ N(mu, sigma^2)``.

    Written as ``min c`` subject to ``g = xi - c <= 0`` in chance form, where
    ``xi`` is a data constant bound to the gaussian.  The exact boundary is
    ``c = mu + z_{1-P_f} sigma``.
    """
    return {
        "schema": 1,
        "grid": {"t0": 0.0, "tf": 1.0, "n_nodes": 2},
        "dynamics": {"kind": "none"},
        "statics": [{"name": "c", "lower": -20.0, "upper": 20.0, "initial": 0.0}],
        "data": {"constants": {"xi": mu}},
        "cost": {"mayer": {"linear": {"c": 1.0}}},
        "constraints": {"inequalities": [{"name": "g", "where": "once", "linear": {"xi": 1.0, "c": -1.0}}]},
        "uncertainty": [{"target": ["xi"], "kind": "gaussian", "params": {"mu": mu, "sigma": sigma}}],
        "formulation": {"type": "scc", "structure": "olsc", "params": {"samples": samples, "seed": seed}},
    }


def initial_spread_problem(n_nodes: int = 21, samples: int = 5, seed: int = 0, structure: str = "olsc") -> dict:
    """Rest-to-rest move from ``x = 1`` to ``x = 2`` with the start position uniform within 10%.

    With one control per scenario every scenario can hit the target exactly; a
    shared control can only steer the scenario mean there.
    """
    doc = double_integrator(n_nodes)
    doc["boundary"] = {"xi0": [1.0, 0.0], "xif": [2.0, 0.0]}
    doc["uncertainty"] = [{"target": ["xi0[0]"], "kind": "uniform", "params": {"lo": 0.9, "hi": 1.1}}]
    doc["formulation"] = {"type": "se", "structure": structure, "params": {"samples": samples, "seed": seed}}
    return doc


DOCUMENTS = {
    "double-integrator": double_integrator,
    "two-node": two_node_double_integrator,
    "tradeoff": tradeoff_problem,
    "paired": paired_problem,
    "static-box": static_box_problem,
    "chance": chance_problem,
    "initial-spread": initial_spread_problem,
}


def document(name: str, **kw) -> dict:
    """A fresh copy of a canned document."""
    try:
        return copy.deepcopy(DOCUMENTS[name](**kw))
    except KeyError:
        raise KeyError(f"unknown document {name!r}; choose from {sorted(DOCUMENTS)}") from None
