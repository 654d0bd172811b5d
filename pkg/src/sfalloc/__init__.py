"""Solvency II standard-formula aggregation and Euler capital allocation."""
from importlib import resources

from .aggregation import (
    AggregationResult,
    Calibration,
    IndefiniteAggregationError,
    NodeAggregate,
    aggregate_excluding,
    aggregate_full_base,
    aggregate_level,
    aggregate_tree,
    block_diagonal_base,
    calibrate_rho,
    diversification_effect,
    leaf_block_tree,
    leaf_order,
)
from .allocation import (
    AllocationResult,
    LevelAllocation,
    NodeAllocation,
    allocate,
    covariance_allocate,
    euler_allocate_level,
    euler_allocate_tree,
    haircut_allocate,
    marginal_allocate,
    market_driven_allocate,
    redistribute,
    scr_total,
)
from .model import (
    CorrelationMatrix,
    Finding,
    PrincipleSpec,
    RiskNode,
    RiskTree,
    TreeError,
    dumps,
    load_tree,
    parse_tree,
    serialize_tree,
    validate_tree,
)

FIXTURES = ("toy_3x2", "nonlife_case")


def load_fixture(name: str) -> RiskTree:
    """Load one of the bundled trees: ``toy_3x2`` or ``nonlife_case``."""
    if name not in FIXTURES:
        raise KeyError(f"unknown fixture {name!r}; available: {FIXTURES}")
    return parse_tree(resources.files(__package__).joinpath("fixtures", f"{name}.json").read_text())


__version__ = "0.1.0"
