"""TreeLSTM cells (top-down, Child-Sum, N-ary) for isomorphic tree transductions."""

from .cells import ChildSumCellParams, NaryCellParams, NodeState, TDCellParams, encode, make_cell
from .transduction import TaskSpec, compose
from .tree import NodeLabel, Tree, is_isomorphic, schedule, skeleton, validate

__version__ = "0.1.0"

__all__ = [
    "ChildSumCellParams", "NaryCellParams", "NodeState", "TDCellParams", "encode", "make_cell",
    "TaskSpec", "compose",
    "NodeLabel", "Tree", "is_isomorphic", "schedule", "skeleton", "validate",
]
