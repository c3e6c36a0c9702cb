"""Small bundled instances for demos and tests."""

import numpy as np

from .nominal import Selection
from .scenarios import Dimension, ScenarioSet

# ten scenarios of five project costs; pick two projects
PORTFOLIO_COSTS = np.array(
    [
        [4, 7, 8, 6, 4],
        [6, 7, 3, 10, 2],
        [3, 8, 1, 10, 4],
        [7, 1, 7, 3, 7],
        [2, 9, 8, 10, 3],
        [1, 3, 4, 8, 6],
        [10, 3, 3, 9, 10],
        [8, 4, 7, 2, 3],
        [10, 4, 2, 10, 5],
        [8, 9, 5, 6, 1],
    ],
    dtype=float,
)


def portfolio_example():
    """Return ``(scenarios, problem)`` for the 10-scenario, choose-2-of-5 demo."""
    dims = tuple(Dimension(f"c{i + 1}") for i in range(PORTFOLIO_COSTS.shape[1]))
    return ScenarioSet(dims, PORTFOLIO_COSTS), Selection(5, 2)
