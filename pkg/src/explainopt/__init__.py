"""Interpretable prepared solutions: shallow decision trees that map an
observed scenario to one of a few precomputed solutions of a combinatorial
problem."""

from .baselines import min_sum_min, nominal_solution, performance
from .builder import BuildOptions, build_exact, build_greedy, build_tree, fit_leaves
from .nominal import ExplicitDag, GridShortestPath, Selection, Solution
from .scenarios import Dimension, Kind, ScenarioSet, load_scenarios, save_scenarios
from .tree import DecisionTree, Split, assign, evaluate, render_rule

__version__ = "0.1.0"
FORMAT_VERSION = 1

__all__ = [
    "BuildOptions",
    "DecisionTree",
    "Dimension",
    "ExplicitDag",
    "FORMAT_VERSION",
    "GridShortestPath",
    "Kind",
    "ScenarioSet",
    "Selection",
    "Solution",
    "Split",
    "assign",
    "build_exact",
    "build_greedy",
    "build_tree",
    "evaluate",
    "fit_leaves",
    "load_scenarios",
    "min_sum_min",
    "nominal_solution",
    "performance",
    "render_rule",
    "save_scenarios",
]
