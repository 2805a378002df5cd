"""Inventory control and dispensing at a point of dispensing: exact DP and learning methods."""

from .model import DemandModel, ExogenousModel, Instance, PatientBatch, State, UtilityTable
from .exact import ExactSolution, backward_dp, verify_reformulation

__all__ = [
    "DemandModel", "ExogenousModel", "Instance", "PatientBatch", "State", "UtilityTable",
    "ExactSolution", "backward_dp", "verify_reformulation",
]
__version__ = "0.1.0"
