"""Round engines: cluster co-training, the FedAvg baseline, aggregation and inference."""

from .accounting import ClientTraffic, comm_report, round_traffic
from .config import ClusteringError, RoundConfig
from .ensemble import (
    EnsembleModel,
    cluster_aggregate,
    ensemble_predict,
    merge,
    merge_states,
    split_at_cut,
    split_state,
    weighted_average,
)
from .fedavg import FedAvgTrainer, fedavg_round, local_sgd
from .feddct import (
    Cluster,
    FedDCTTrainer,
    PortionCodec,
    RoundAborted,
    RoundResult,
    cluster_partition,
    distribute,
    fed_co_training,
    main_device_backprop,
    main_device_forward,
    proxy_devices_update,
    server_objective,
)
from .models import Architecture, build_sub_models

__all__ = [
    "Architecture",
    "ClientTraffic",
    "Cluster",
    "ClusteringError",
    "EnsembleModel",
    "FedAvgTrainer",
    "FedDCTTrainer",
    "PortionCodec",
    "RoundAborted",
    "RoundConfig",
    "RoundResult",
    "build_sub_models",
    "cluster_aggregate",
    "cluster_partition",
    "comm_report",
    "distribute",
    "ensemble_predict",
    "fed_co_training",
    "fedavg_round",
    "local_sgd",
    "main_device_backprop",
    "main_device_forward",
    "merge",
    "merge_states",
    "proxy_devices_update",
    "round_traffic",
    "server_objective",
    "split_at_cut",
    "split_state",
    "weighted_average",
]
