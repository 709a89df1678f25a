import numpy as np
import pytest
from scipy.stats import chisquare
from sklearn.linear_model import LogisticRegression

from feddct.data import (AugmentPolicy, LabeledDataset, Partition, batch_indices, generate_views, load_csv,
                         make_clients, partition_iid, partition_noniid, synth_blobs, train_test_split)
from feddct.nn import RngStream


def test_blobs_balanced_and_deterministic():
    ds = synth_blobs(100, 2, 8, seed=3)
    counts = np.bincount(ds.y)
    assert abs(counts[0] - 50) <= 1 and abs(counts[1] - 50) <= 1
    again = synth_blobs(100, 2, 8, seed=3)
    assert ds.X.tobytes() == again.X.tobytes() and ds.y.tobytes() == again.y.tobytes()
    assert synth_blobs(100, 2, 8, seed=4).X.tobytes() != ds.X.tobytes()


def test_blobs_centre_separation():
    ds = synth_blobs(4000, 4, 16, seed=0, separation=6.0)
    centres = np.stack([ds.X[ds.y == c].mean(axis=0) for c in range(4)])
    d = [np.linalg.norm(centres[i] - centres[j]) for i in range(4) for j in range(i + 1, 4)]
    assert min(d) > 5.5


def test_linear_classifier_separates_blobs():
    train, test = train_test_split(synth_blobs(1200, 4, 16, seed=1), 400, seed=1)
    clf = LogisticRegression(max_iter=1000).fit(train.X, train.y)
    assert clf.score(test.X, test.y) >= 0.95


def test_dataset_validation():
    with pytest.raises(ValueError):
        LabeledDataset(np.zeros((2, 3)), np.array([0, 3]), 3)
    with pytest.raises(ValueError):
        synth_blobs(3, 4, 8)


def test_iid_single_shard_and_equal_sizes():
    ds = synth_blobs(50, 2, 4, seed=0)
    assert sorted(partition_iid(ds, 1, seed=0).assignments[0].tolist()) == list(range(50))
    big = synth_blobs(50000, 10, 16, seed=0)
    part = partition_iid(big, 20, seed=0)
    assert part.sizes() == [2500] * 20


def test_iid_shards_follow_global_histogram():
    ds = synth_blobs(5000, 5, 8, seed=2)
    part = partition_iid(ds, 10, seed=2)
    glob = np.bincount(ds.y, minlength=5) / len(ds)
    for shard in part.shards(ds):
        obs = np.bincount(shard.y, minlength=5)
        assert chisquare(obs, glob * len(shard.y)).pvalue > 1e-3


@pytest.mark.parametrize("scheme", [partition_iid, partition_noniid])
def test_partition_exact_cover(scheme):
    ds = synth_blobs(997, 10, 16, seed=5)
    part = scheme(ds, 20, seed=5)
    allidx = np.concatenate(part.assignments)
    assert len(allidx) == len(ds) and len(np.unique(allidx)) == len(ds)
    assert all(len(a) > 0 for a in part.assignments)


def test_noniid_single_client_and_heterogeneity():
    ds = synth_blobs(2000, 10, 16, seed=0)
    assert len(partition_noniid(ds, 1, seed=0).assignments[0]) == len(ds)
    for seed in range(10):
        part = partition_noniid(ds, 20, seed=seed)
        assert min(len(np.unique(ds.y[a])) for a in part.assignments) < 10


def test_partition_json_round_trip():
    ds = synth_blobs(60, 3, 4, seed=0)
    part = partition_noniid(ds, 4, seed=1)
    back = Partition.from_json(part.to_json())
    assert all(np.array_equal(a, b) for a, b in zip(part.assignments, back.assignments))
    assert back.scheme == "noniid"


def test_partition_rejects_overlap():
    with pytest.raises(ValueError):
        Partition([np.array([0, 1]), np.array([1, 2])], "iid", 0, "x", 3)


def test_views_identity_policy():
    x = RngStream(0, "x").normal(size=(4, 6))
    views = generate_views(x, 3, [RngStream(0, f"v{k}") for k in range(3)], AugmentPolicy.identity())
    assert all(np.array_equal(v, x) for v in views)


def test_views_deterministic_and_distinct():
    x = RngStream(0, "x").normal(size=(4, 6))
    seeds = [RngStream(9, f"v{k}") for k in range(4)]
    a = generate_views(x, 4, seeds, AugmentPolicy(noise_std=0.1))
    b = generate_views(x, 4, seeds, AugmentPolicy(noise_std=0.1))
    assert all(np.array_equal(u, v) for u, v in zip(a, b))
    for i in range(4):
        for j in range(i + 1, 4):
            assert np.linalg.norm(a[i] - a[j]) > 0


def test_views_seed_count_checked():
    with pytest.raises(ValueError):
        generate_views(np.zeros((2, 2)), 3, [RngStream(0, "a")])


def test_image_flip_applies_to_width_axis():
    x = np.arange(2 * 1 * 2 * 3, dtype=float).reshape(2, 1, 2, 3)
    pol = AugmentPolicy(flip=True, noise_std=0.0, erase_prob=0.0)
    out = generate_views(x, 1, [RngStream(0, "f")], pol)[0]
    for i in range(2):
        assert np.array_equal(out[i], x[i]) or np.array_equal(out[i], x[i][..., ::-1])


def test_csv_import(tmp_path):
    path = tmp_path / "d.csv"
    path.write_text("f1,f2,label\n0.5,1.0,0\n-1.0,2.0,1\n3.0,0.0,2\n")
    ds = load_csv(path)
    assert ds.X.shape == (3, 2) and ds.y.tolist() == [0, 1, 2] and ds.class_count == 3


def test_batches_cover_shard_once():
    batches = batch_indices(37, 8, RngStream(0, "b"))
    assert [len(b) for b in batches] == [8, 8, 8, 8, 5]
    assert sorted(np.concatenate(batches).tolist()) == list(range(37))


def test_clients_carry_their_shards():
    ds = synth_blobs(40, 2, 4, seed=0)
    clients = make_clients(ds, partition_iid(ds, 4, seed=0))
    assert [c.client_id for c in clients] == [0, 1, 2, 3] and sum(map(len, clients)) == 40
