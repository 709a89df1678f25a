"""scikit-learn style front end for the simulator.

>>> clf = FedDCTClassifier(n_clients=8, split_factor=4, n_rounds=20).fit(X, y)
>>> clf.predict(X_test)

``fit`` partitions the training set across simulated clients, runs the
federated rounds and keeps the trained global model; predictions come from
the server-side model without any further communication.
"""

from __future__ import annotations

import numbers

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.preprocessing import LabelEncoder
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .data import AugmentPolicy, LabeledDataset, make_clients, partition_iid, partition_noniid
from .orchestration import Architecture, FedAvgTrainer, FedDCTTrainer, RoundConfig
from .protocol import Network


def _check_positive_int(value, name: str, minimum: int = 1) -> int:
    if not isinstance(value, numbers.Integral) or isinstance(value, bool) or value < minimum:
        raise ValueError(f"{name} must be an integer >= {minimum}, got {value!r}")
    return int(value)


def _check_fraction(value, name: str) -> float:
    if not isinstance(value, numbers.Real) or not 0 <= value < 1:
        raise ValueError(f"{name} must lie in [0, 1), got {value!r}")
    return float(value)


class _FederatedClassifier(ClassifierMixin, BaseEstimator):
    algorithm = ""

    def __init__(self, n_clients=8, split_factor=4, architecture="mlp", hidden_widths=(128, 128),
                 image_shape=None, dropout=0.0, n_rounds=50, local_epochs=1, batch_size=16, learning_rate=0.05,
                 momentum=0.9, weight_decay=0.0, lambda_cot=0.5, warmup_rounds=0, partition="iid",
                 augment_noise=0.1, augment_erase=0.25, augment_flip=True, rotation="sequential",
                 cut_layer=None, random_state=0, trace_path=None, verbose=False):
        self.n_clients = n_clients
        self.split_factor = split_factor
        self.architecture = architecture
        self.hidden_widths = hidden_widths
        self.image_shape = image_shape
        self.dropout = dropout
        self.n_rounds = n_rounds
        self.local_epochs = local_epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.lambda_cot = lambda_cot
        self.warmup_rounds = warmup_rounds
        self.partition = partition
        self.augment_noise = augment_noise
        self.augment_erase = augment_erase
        self.augment_flip = augment_flip
        self.rotation = rotation
        self.cut_layer = cut_layer
        self.random_state = random_state
        self.trace_path = trace_path
        self.verbose = verbose

    # -- validation helpers --------------------------------------------------------
    def _validate_params(self) -> None:
        _check_positive_int(self.n_clients, "n_clients")
        _check_positive_int(self.split_factor, "split_factor")
        _check_positive_int(self.n_rounds, "n_rounds")
        _check_positive_int(self.local_epochs, "local_epochs")
        _check_positive_int(self.batch_size, "batch_size")
        _check_positive_int(self.warmup_rounds, "warmup_rounds", minimum=0)
        _check_fraction(self.dropout, "dropout")
        _check_fraction(self.momentum, "momentum")
        if self.learning_rate <= 0:
            raise ValueError(f"learning_rate must be positive, got {self.learning_rate!r}")
        if self.lambda_cot < 0:
            raise ValueError(f"lambda_cot must be nonnegative, got {self.lambda_cot!r}")
        if self.partition not in ("iid", "noniid"):
            raise ValueError(f"partition must be 'iid' or 'noniid', got {self.partition!r}")
        if self.architecture not in ("mlp", "dctnet"):
            raise ValueError(f"architecture must be 'mlp' or 'dctnet', got {self.architecture!r}")
        if self.architecture == "dctnet" and self.image_shape is None:
            raise ValueError("architecture='dctnet' needs image_shape=(channels, height, width)")

    def _round_config(self, S: int) -> RoundConfig:
        return RoundConfig(n_clients=self.n_clients, split_factor=S, local_epochs=self.local_epochs,
                           batch_size=self.batch_size, learning_rate=self.learning_rate, momentum=self.momentum,
                           weight_decay=self.weight_decay, lambda_cot=self.lambda_cot, total_rounds=self.n_rounds,
                           warmup_rounds=self.warmup_rounds, seed=self.random_state, rotation=self.rotation,
                           augment=AugmentPolicy(flip=self.augment_flip, noise_std=self.augment_noise,
                                                 erase_prob=self.augment_erase, image_shape=self.image_shape))

    def _architecture(self, n_features: int, n_classes: int) -> Architecture:
        if self.architecture == "dctnet":
            shape = tuple(self.image_shape)
            if int(np.prod(shape)) != n_features:
                raise ValueError(f"image_shape {shape} holds {int(np.prod(shape))} values, X has {n_features} features")
        else:
            shape = (n_features,)
        return Architecture(self.architecture, shape, n_classes, tuple(self.hidden_widths), self.dropout)

    def _make_trainer(self, arch, clients, cfg, network):
        raise NotImplementedError

    # -- estimator API -----------------------------------------------------------------
    def fit(self, X, y, eval_set=None, on_round=None):
        """Simulate ``n_rounds`` federated rounds on ``(X, y)``.

        ``eval_set=(X_val, y_val)`` adds a per-round accuracy to ``history_``;
        ``on_round(estimator, row)`` is called after every round.
        """
        self._validate_params()
        X, y = check_X_y(X, y, dtype=np.float64)
        self._encoder = LabelEncoder().fit(y)
        self.classes_ = self._encoder.classes_
        y_enc = self._encoder.transform(y)
        self.n_features_in_ = X.shape[1]
        if len(X) < self.n_clients:
            raise ValueError(f"{len(X)} samples cannot be shared among {self.n_clients} clients")
        ds = LabeledDataset(X, y_enc, len(self.classes_))
        split = partition_iid if self.partition == "iid" else partition_noniid
        self.partition_ = split(ds, self.n_clients, seed=self.random_state)
        clients = make_clients(ds, self.partition_)
        cfg = self._round_config(self._split_factor())
        self.network_ = Network(self.trace_path)
        self.trainer_ = self._make_trainer(self._architecture(X.shape[1], len(self.classes_)), clients, cfg,
                                           self.network_)
        if eval_set is not None:
            X_val, y_val = check_X_y(*eval_set, dtype=np.float64)
        self.history_ = []
        try:
            for _ in range(self.n_rounds):
                res = self.trainer_.run_round()
                row = {"round": res.round, "algorithm": self.algorithm, "S": cfg.split_factor, "K": cfg.n_clients,
                       "train_loss": res.train_loss, "cot_loss": res.cot_loss,
                       "bytes_per_client": res.bytes_per_client, "wall_time": res.wall_time}
                if eval_set is not None:
                    row["test_accuracy"] = float(np.mean(self.predict(X_val) == y_val))
                self.history_.append(row)
                if self.verbose:
                    print(" ".join(f"{k}={v}" for k, v in row.items()))
                if on_round is not None:
                    on_round(self, row)
        finally:
            self.network_.close()
        return self

    def _split_factor(self) -> int:
        return self.split_factor

    def _check_input(self, X) -> np.ndarray:
        check_is_fitted(self, "trainer_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, the model was fitted with {self.n_features_in_}")
        return X

    def predict_proba(self, X) -> np.ndarray:
        X = self._check_input(X)
        return self.trainer_.predict_proba(X)

    def decision_function(self, X) -> np.ndarray:
        """Log of the predicted class distribution."""
        return np.log(np.clip(self.predict_proba(X), 1e-300, None))

    def predict(self, X) -> np.ndarray:
        proba = self.predict_proba(X)
        return self.classes_[np.argmax(proba, axis=1)]

    def state_dicts(self):
        """Parameter states of the trained global model (one per sub-model)."""
        check_is_fitted(self, "trainer_")
        return self.trainer_.states()


class FedDCTClassifier(_FederatedClassifier):
    """Clusters of ``split_factor`` clients co-train an ensemble of
    width-divided sub-models; prediction averages the sub-models' logits."""

    algorithm = "feddct"

    def _make_trainer(self, arch, clients, cfg, network):
        return FedDCTTrainer(arch, clients, cfg, cut_layer=self.cut_layer, network=network)


class FedAvgClassifier(_FederatedClassifier):
    """Every client trains the full-width model; the server averages the
    updates weighted by shard size. ``split_factor`` and ``lambda_cot`` are
    ignored."""

    algorithm = "fedavg"

    def _split_factor(self) -> int:
        return 1

    def _make_trainer(self, arch, clients, cfg, network):
        return FedAvgTrainer(arch, clients, cfg, network=network)


__all__ = ["FedAvgClassifier", "FedDCTClassifier"]
