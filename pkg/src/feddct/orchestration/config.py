"""Round configuration and the labelled random streams every algorithm shares.

Batch order, augmentation views and dropout masks are keyed by
``(seed, round, client, epoch, batch)`` so that different training paths over
the same data draw identical randomness.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

from ..data import AugmentPolicy
from ..nn import RngStream, cosine_lr


class ClusteringError(ValueError):
    """The selected clients cannot be grouped into clusters of size S."""


@dataclass
class RoundConfig:
    n_clients: int = 8
    split_factor: int = 4
    local_epochs: int = 1
    batch_size: int = 16
    learning_rate: float = 0.05
    momentum: float = 0.9
    weight_decay: float = 0.0
    lambda_cot: float = 0.5
    total_rounds: int = 50
    warmup_rounds: int = 0
    seed: int = 0
    rotation: str = "sequential"
    augment: AugmentPolicy = field(default_factory=AugmentPolicy)

    def validate(self) -> "RoundConfig":
        if self.split_factor < 1:
            raise ValueError(f"split_factor must be >= 1, got {self.split_factor}")
        if self.n_clients < 1:
            raise ValueError(f"n_clients must be >= 1, got {self.n_clients}")
        if self.n_clients % self.split_factor:
            raise ClusteringError(
                f"cannot form clusters: K={self.n_clients} clients is not divisible by S={self.split_factor}")
        if self.local_epochs < 1:
            raise ValueError(f"local_epochs must be >= 1, got {self.local_epochs}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.learning_rate <= 0:
            raise ValueError(f"learning_rate must be positive, got {self.learning_rate}")
        if not 0 <= self.momentum < 1:
            raise ValueError(f"momentum must be in [0, 1), got {self.momentum}")
        if self.lambda_cot < 0:
            raise ValueError(f"lambda_cot must be nonnegative, got {self.lambda_cot}")
        if self.rotation not in ("sequential", "random"):
            raise ValueError(f"rotation must be 'sequential' or 'random', got {self.rotation!r}")
        return self

    def lr(self, round: int) -> float:
        return cosine_lr(round, self.total_rounds, self.learning_rate, self.warmup_rounds)

    def to_dict(self) -> dict:
        return asdict(self)


def batch_stream(seed: int, rnd: int, client: int, epoch: int) -> RngStream:
    return RngStream(seed, f"batches/r{rnd}/c{client}/e{epoch}")


def step_stream(seed: int, rnd: int, client: int, epoch: int, batch: int) -> RngStream:
    """Parent of the per-step ``view/k`` and ``dropout/k`` streams."""
    return RngStream(seed, f"step/r{rnd}/c{client}/e{epoch}/b{batch}")


def cluster_stream(seed: int, rnd: int) -> RngStream:
    return RngStream(seed, f"clusters/r{rnd}")


def rotation_stream(seed: int, rnd: int, cluster_head: int, epoch: int) -> RngStream:
    return RngStream(seed, f"rotation/r{rnd}/c{cluster_head}/e{epoch}")
