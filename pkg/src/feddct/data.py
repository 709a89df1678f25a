"""Synthetic data, client partitioning and per-sub-model augmented views."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .nn.rng import RngStream, as_stream


@dataclass
class LabeledDataset:
    X: np.ndarray
    y: np.ndarray
    class_count: int

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.int64)
        if len(self.X) == 0:
            raise ValueError("dataset is empty")
        if len(self.X) != len(self.y):
            raise ValueError(f"{len(self.X)} samples but {len(self.y)} labels")
        if self.y.min() < 0 or self.y.max() >= self.class_count:
            raise ValueError(f"labels must lie in [0, {self.class_count})")

    def __len__(self) -> int:
        return len(self.y)

    def __getitem__(self, idx):
        return self.X[idx], int(self.y[idx])

    @property
    def samples(self) -> list[tuple[np.ndarray, int]]:
        return [(self.X[i], int(self.y[i])) for i in range(len(self))]

    def subset(self, indices) -> "LabeledDataset":
        indices = np.asarray(indices, dtype=np.int64)
        return LabeledDataset(self.X[indices], self.y[indices], self.class_count)


@dataclass
class Partition:
    assignments: list[np.ndarray]
    scheme: str
    seed: int
    label: str = ""
    n_samples: int = 0

    def __post_init__(self):
        self.assignments = [np.asarray(a, dtype=np.int64) for a in self.assignments]
        flat = np.concatenate(self.assignments) if self.assignments else np.empty(0, np.int64)
        if any(len(a) == 0 for a in self.assignments):
            raise ValueError("every client shard must be nonempty")
        if self.n_samples and (len(flat) != self.n_samples or len(np.unique(flat)) != self.n_samples):
            raise ValueError("partition must cover every sample exactly once")

    @property
    def n_clients(self) -> int:
        return len(self.assignments)

    def sizes(self) -> list[int]:
        return [len(a) for a in self.assignments]

    def shards(self, ds: LabeledDataset) -> list[LabeledDataset]:
        return [ds.subset(a) for a in self.assignments]

    def to_json(self) -> str:
        return json.dumps({"scheme": self.scheme, "seed": self.seed, "label": self.label,
                           "n_samples": self.n_samples,
                           "assignments": [a.tolist() for a in self.assignments]})

    @classmethod
    def from_json(cls, text: str) -> "Partition":
        doc = json.loads(text)
        return cls(doc["assignments"], doc["scheme"], doc["seed"], doc.get("label", ""), doc.get("n_samples", 0))


def synth_blobs(n: int, classes: int, dim: int, seed=0, separation: float = 6.0,
                sigma: float = 1.0) -> LabeledDataset:
    """Isotropic Gaussian clusters, one per class, with pairwise centre distance
    ``separation * sigma``.

    Centres sit on scaled, randomly rotated basis vectors (a regular simplex),
    so ``classes <= dim`` is required. Class counts differ by at most one.
    """
    if n < classes:
        raise ValueError(f"need n >= classes, got n={n}, classes={classes}")
    if classes > dim:
        raise ValueError(f"need classes <= dim for equidistant centres, got {classes} > {dim}")
    rng = as_stream(seed, "blobs")
    q, r = np.linalg.qr(rng.child("rotation").normal(size=(dim, dim)))
    rotation = q * np.sign(np.diag(r))
    centres = (separation * sigma / np.sqrt(2.0)) * rotation[:classes]
    labels = np.arange(n) % classes
    labels = labels[rng.child("labels").permutation(n)]
    X = centres[labels] + sigma * rng.child("noise").normal(size=(n, dim))
    return LabeledDataset(X, labels, classes)


def train_test_split(ds: LabeledDataset, n_test: int, seed=0) -> tuple[LabeledDataset, LabeledDataset]:
    order = as_stream(seed, "split").permutation(len(ds))
    return ds.subset(np.sort(order[n_test:])), ds.subset(np.sort(order[:n_test]))


def load_csv(path, class_count: int | None = None) -> LabeledDataset:
    """Rows of ``feature, ..., feature, label``; a non-numeric first row is a header."""
    text = Path(path).read_text().strip().splitlines()
    first = text[0].split(",")
    try:
        [float(v) for v in first]
        skip = 0
    except ValueError:
        skip = 1
    arr = np.loadtxt(path, delimiter=",", skiprows=skip, ndmin=2)
    X, y = arr[:, :-1], arr[:, -1]
    if not np.all(y == np.round(y)):
        raise ValueError("last CSV column must hold integer class labels")
    y = y.astype(np.int64)
    return LabeledDataset(X, y, class_count or int(y.max()) + 1)


def partition_iid(ds: LabeledDataset, K: int, seed=0) -> Partition:
    if not 1 <= K <= len(ds):
        raise ValueError(f"need 1 <= K <= {len(ds)}, got K={K}")
    stream = as_stream(seed, "partition/iid")
    order = stream.permutation(len(ds))
    return Partition(np.array_split(order, K), "iid", stream.seed, stream.label, len(ds))


def partition_noniid(ds: LabeledDataset, K: int, seed=0, max_retries: int = 100) -> Partition:
    """Each client draws a random number of classes and a random class subset;
    each class's samples are then split among its holders with random
    proportions. Classes no client drew go to one random client.
    """
    if not 1 <= K <= len(ds):
        raise ValueError(f"need 1 <= K <= {len(ds)}, got K={K}")
    base = as_stream(seed, "partition/noniid")
    if K == 1:
        return Partition([np.arange(len(ds))], "noniid", base.seed, base.label, len(ds))
    n_cls = ds.class_count
    for attempt in range(max_retries):
        rng = base.child("attempt", attempt)
        holders: dict[int, list[int]] = {c: [] for c in range(n_cls)}
        for k in range(K):
            m = int(rng.integers(1, n_cls + 1))
            for c in np.sort(rng.permutation(n_cls)[:m]):
                holders[int(c)].append(k)
        shards: list[list[int]] = [[] for _ in range(K)]
        for c in range(n_cls):
            idx = np.flatnonzero(ds.y == c)
            if len(idx) == 0:
                continue
            idx = idx[rng.permutation(len(idx))]
            owners = holders[c] or [int(rng.integers(0, K))]
            weights = rng.generator.dirichlet(np.ones(len(owners)))
            cuts = np.round(np.cumsum(weights)[:-1] * len(idx)).astype(int)
            for owner, part in zip(owners, np.split(idx, cuts)):
                shards[owner].extend(part.tolist())
        if all(shards):
            return Partition([np.sort(s) for s in shards], "noniid", base.seed, f"{base.label}/attempt/{attempt}",
                             len(ds))
    raise RuntimeError(f"non-IID partition left a client empty after {max_retries} retries")


@dataclass(frozen=True)
class AugmentPolicy:
    """Desk-scale augmentation: horizontal flip (image inputs only), additive
    Gaussian noise, and random erasing of a contiguous block."""

    flip: bool = True
    noise_std: float = 0.1
    erase_prob: float = 0.25
    erase_frac: float = 0.25
    image_shape: tuple[int, ...] | None = None

    @classmethod
    def identity(cls) -> "AugmentPolicy":
        return cls(flip=False, noise_std=0.0, erase_prob=0.0)

    @property
    def is_identity(self) -> bool:
        return not self.flip and self.noise_std == 0 and self.erase_prob == 0


def augment(x: np.ndarray, policy: AugmentPolicy, rng: RngStream) -> np.ndarray:
    """Augment a batch ``x`` of shape ``(B, ...)`` sample by sample."""
    x = np.array(x, dtype=np.float64)
    if policy.is_identity:
        return x
    b = x.shape[0]
    image = x.ndim == 4 or policy.image_shape is not None
    if image and x.ndim == 2:
        work = x.reshape((b,) + tuple(policy.image_shape))
    else:
        work = x
    if policy.flip and image:
        flips = rng.child("flip").random(b) < 0.5
        work[flips] = work[flips][..., ::-1]
    if policy.noise_std > 0:
        work = work + policy.noise_std * rng.child("noise").normal(size=work.shape)
    if policy.erase_prob > 0:
        erase_rng = rng.child("erase")
        hit = erase_rng.random(b) < policy.erase_prob
        flat = work.reshape(b, -1)
        width = max(1, int(round(policy.erase_frac * flat.shape[1])))
        starts = erase_rng.integers(0, flat.shape[1] - width + 1, size=b)
        for i in np.flatnonzero(hit):
            flat[i, starts[i] : starts[i] + width] = 0.0
        work = flat.reshape(work.shape)
    return work.reshape(x.shape)


def generate_views(x, S: int, seeds: Sequence[RngStream], policy: AugmentPolicy = AugmentPolicy()) -> list[np.ndarray]:
    """``S`` independently augmented copies of ``x``, view ``k`` drawn from ``seeds[k]``."""
    if len(seeds) != S:
        raise ValueError(f"need one seed per view: S={S}, got {len(seeds)} seeds")
    x = np.asarray(x, dtype=np.float64)
    return [augment(x, policy, seeds[k]) for k in range(S)]


@dataclass
class ClientData:
    """One client's shard as seen by the simulation."""

    client_id: int
    X: np.ndarray
    y: np.ndarray
    meta: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.y)


def make_clients(ds: LabeledDataset, partition: Partition) -> list[ClientData]:
    return [ClientData(k, ds.X[a], ds.y[a]) for k, a in enumerate(partition.assignments)]


def batch_indices(n: int, batch_size: int, rng: RngStream) -> list[np.ndarray]:
    order = rng.permutation(n)
    return [order[i : i + batch_size] for i in range(0, n, batch_size)]
