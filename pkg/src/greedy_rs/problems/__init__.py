"""Benchmark problems: synthetic normal configurations and the flow-line testbed."""

from .flowline import (
    FlowLineDesign,
    enumerate_flowline,
    flowline_exact_mean,
    flowline_simulate,
)
from .gaussian import GaussianConfig, make_gaussian
from .instance import GoodSet, ProblemInstance, good_set, scripted_instance
from .throughput import flowline_means, make_flowline, table_row

__all__ = [
    "FlowLineDesign",
    "GaussianConfig",
    "GoodSet",
    "ProblemInstance",
    "enumerate_flowline",
    "flowline_exact_mean",
    "flowline_means",
    "flowline_simulate",
    "good_set",
    "make_flowline",
    "make_gaussian",
    "scripted_instance",
    "table_row",
]
