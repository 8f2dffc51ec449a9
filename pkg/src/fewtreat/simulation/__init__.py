"""Monte Carlo harness: data-generating processes, replication engine, reports."""

from .dgp import (
    DgpKind,
    DgpSpec,
    Decomposition,
    Draw,
    draw,
    draw_effects,
    draw_outcomes,
    error_decomposition,
)
from .engine import MethodSpec, SimReport, appendix_b_iota, run, welch_interval

__all__ = [
    "DgpKind",
    "DgpSpec",
    "Decomposition",
    "Draw",
    "MethodSpec",
    "SimReport",
    "appendix_b_iota",
    "draw",
    "draw_effects",
    "draw_outcomes",
    "error_decomposition",
    "run",
    "welch_interval",
]
