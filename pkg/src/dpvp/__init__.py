"""Dual period-varying preference model for takeaway store recommendation.

Users, stores and foods form a period-tagged interaction multigraph.  The
model learns food-level and store-level representations on the full graph
and on one subgraph per time period, fuses them with a user-aware food gate
and a time-aware period gate, and scores (user, store, period) with an MLP
trained by BPR.
"""
from .errors import ConfigError, DataError, DPVPError, UnscorableError

__version__ = "0.1.0"

__all__ = ["ConfigError", "DataError", "DPVPError", "UnscorableError", "__version__"]
