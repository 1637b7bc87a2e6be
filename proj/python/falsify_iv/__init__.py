"""Falsification frontiers and adaptive sets for instrumental variable models.

Thin wrapper over the C++ library. Arrays are NumPy; errors raise
FalsifyIvError, whose ``code`` attribute names the failure.
"""

import json as _json

from ._falsify_iv import (
    DiscreteJoint,
    FalsifyIvError,
    ReducedMoments,
    ate_bounds,
    bernstein_basis,
    continuous_frontier,
    estimate_fas,
    falsification_frontier_grid,
    falsification_frontier_k1,
    falsification_point_single,
    fas_ate,
    fas_general,
    fas_k1,
    fas_projection,
    ff_two_instruments,
    full_2sls,
    identified_set_linear,
    is_falsified_at,
    potential_outcome_bounds,
    qmt_star,
    reduced_from_sample,
    sargan_falsified,
    twosls_weights,
)
from ._falsify_iv import run_analysis as _run_analysis


def run_analysis(config, out_dir=None):
    """Run a JSON-configured analysis and return the report as a dict."""
    return _json.loads(_run_analysis(config, out_dir))


__all__ = [
    "DiscreteJoint",
    "FalsifyIvError",
    "ReducedMoments",
    "ate_bounds",
    "bernstein_basis",
    "continuous_frontier",
    "estimate_fas",
    "falsification_frontier_grid",
    "falsification_frontier_k1",
    "falsification_point_single",
    "fas_ate",
    "fas_general",
    "fas_k1",
    "fas_projection",
    "ff_two_instruments",
    "full_2sls",
    "identified_set_linear",
    "is_falsified_at",
    "potential_outcome_bounds",
    "qmt_star",
    "reduced_from_sample",
    "run_analysis",
    "sargan_falsified",
    "twosls_weights",
]
