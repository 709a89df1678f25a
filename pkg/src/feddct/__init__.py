"""Deterministic simulator for federated divide-and-co-training.

A large model is replaced by an ensemble of ``S`` width-divided sub-models;
clusters of ``S`` clients co-train one ensemble per round over a simulated,
byte-accounted transport, and the server averages the cluster ensembles.
"""

__version__ = "0.1.0"

from .estimators import FedAvgClassifier, FedDCTClassifier  # noqa: E402

__all__ = ["FedAvgClassifier", "FedDCTClassifier", "__version__"]
