import numpy as np
import pytest
from scipy import stats

from latent_imagination.replay import (
    PRIORITY_FLOOR, LatentBuffer, LatentTransition, PixelBuffer, PixelTransition,
    PrioritizedBuffer, SumTree,
)


def scalar_buffer(capacity, alpha=1.0, beta0=0.4):
    return PrioritizedBuffer(capacity, {"x": ((), np.float64)}, alpha=alpha, beta0=beta0)


def fill(buf, priorities):
    ids = [buf.store_fields(x=float(i)) for i in range(len(priorities))]
    buf.update_priorities(ids, np.asarray(priorities, dtype=float) - buf.eps)
    return ids


def test_first_insert_gets_unit_priority():
    buf = scalar_buffer(4)
    buf.store_fields(x=1.0)
    assert buf.tree.total == 1.0
    assert buf.priorities()[0] == 1.0


def test_ring_eviction():
    buf = scalar_buffer(2)
    for v in (1.0, 2.0, 3.0):
        buf.store_fields(x=v)
    assert len(buf) == 2
    assert sorted(buf.data["x"]) == [2.0, 3.0]


def test_new_items_get_running_max_priority():
    buf = scalar_buffer(8, alpha=0.6)
    ids = fill(buf, [1.0, 5.0])
    new = buf.store_fields(x=9.0)
    assert buf.priorities()[new % 8] == pytest.approx(5.0)


def test_root_matches_brute_force_after_random_inserts():
    rng = np.random.default_rng(0)
    buf = scalar_buffer(300, alpha=0.6)
    for i in range(1000):
        k = buf.store_fields(x=float(i))
        if rng.random() < 0.5:
            buf.update_priorities([k], [rng.uniform(0, 10)])
    leaves = buf.tree.leaves()
    assert buf.tree.total == pytest.approx(leaves.sum(), rel=1e-9)
    assert buf.tree.total == pytest.approx(np.sum(buf.priorities() ** 0.6), rel=1e-9)


def test_internal_nodes_equal_sum_of_children():
    rng = np.random.default_rng(1)
    tree = SumTree(37)
    for _ in range(2000):
        if rng.random() < 0.5:
            tree.set(rng.integers(37), rng.uniform(0, 3))
        else:
            k = rng.integers(1, 10)
            tree.update(rng.integers(37, size=k), rng.uniform(0, 3, size=k))
    t = tree.tree
    for i in range(1, tree.leaf_offset):
        assert t[i] == pytest.approx(t[2 * i] + t[2 * i + 1], rel=1e-9, abs=1e-12)


def draw_counts(buf, n_draws, k=64, seed=0):
    rng = np.random.default_rng(seed)
    counts = np.zeros(len(buf))
    for _ in range(n_draws // k):
        _, ids, _ = buf.sample(k, rng)
        np.add.at(counts, ids % buf.capacity, 1)
    return counts


def test_sampling_frequencies_two_items():
    buf = scalar_buffer(2, alpha=1.0)
    fill(buf, [1.0, 3.0])
    counts = draw_counts(buf, 10_000)
    freq = counts / counts.sum()
    assert freq == pytest.approx([0.25, 0.75], abs=0.02)


def test_alpha_zero_is_uniform():
    buf = scalar_buffer(4, alpha=0.0)
    fill(buf, [1.0, 10.0, 100.0, 1000.0])
    counts = draw_counts(buf, 10_000)
    assert counts / counts.sum() == pytest.approx([0.25] * 4, abs=0.02)


def test_uniform_priorities_give_unit_weights():
    buf = scalar_buffer(5, alpha=0.6)
    fill(buf, [2.0] * 5)
    _, _, w = buf.sample(32, np.random.default_rng(0))
    np.testing.assert_allclose(w, 1.0)


def test_importance_weights_formula():
    buf = scalar_buffer(3, alpha=1.0, beta0=0.5)
    fill(buf, [1.0, 2.0, 5.0])
    _, ids, w = buf.sample(30, np.random.default_rng(1))
    p = np.array([1.0, 2.0, 5.0]) / 8.0
    raw = (3 * p[ids % 3]) ** -0.5
    np.testing.assert_allclose(w, raw / raw.max())


def test_beta_anneals_to_one():
    buf = PrioritizedBuffer(4, {"x": ((), float)}, beta0=0.4, beta_horizon=100)
    assert buf.beta == 0.4
    buf.progress = 50
    assert buf.beta == pytest.approx(0.7)
    buf.progress = 1000
    assert buf.beta == 1.0


def test_zero_delta_gets_floor_priority():
    buf = scalar_buffer(2, alpha=1.0)
    ids = [buf.store_fields(x=0.0), buf.store_fields(x=1.0)]
    buf.update_priorities([ids[0]], [0.0])
    assert buf.priorities()[0] == pytest.approx(PRIORITY_FLOOR)
    assert buf.probabilities()[0] > 0


def test_raising_delta_raises_probability():
    buf = scalar_buffer(5, alpha=0.6)
    ids = fill(buf, [1.0, 2.0, 3.0, 4.0, 5.0])
    before = buf.probabilities()[2]
    buf.update_priorities([ids[2]], [7.0])
    after = buf.probabilities()[2]
    brute = np.array([1, 2, 7 + PRIORITY_FLOOR, 4, 5]) ** 0.6
    assert after > before
    assert after == pytest.approx(brute[2] / brute.sum())


def test_stale_ids_are_skipped_and_counted():
    buf = scalar_buffer(2, alpha=1.0)
    old = buf.store_fields(x=0.0)
    buf.store_fields(x=1.0)
    buf.store_fields(x=2.0)  # overwrites slot of `old`
    total = buf.tree.total
    buf.update_priorities([old], [50.0])
    assert buf.stale_updates == 1
    assert buf.tree.total == total


def test_root_consistency_after_many_updates():
    rng = np.random.default_rng(2)
    buf = scalar_buffer(100, alpha=0.6)
    ids = [buf.store_fields(x=float(i)) for i in range(100)]
    for _ in range(10_000):
        k = rng.integers(1, 5)
        buf.update_priorities(rng.choice(ids, size=k), rng.exponential(2.0, size=k))
    assert buf.tree.total == pytest.approx(buf.tree.leaves().sum(), rel=1e-9)


def test_empty_buffer_rejects_sampling():
    with pytest.raises(ValueError):
        scalar_buffer(3).sample(1, np.random.default_rng(0))


@pytest.mark.parametrize("priorities", [[1.0, 3.0], [1.0, 1.0, 1.0, 1.0], "random100"])
def test_sampling_chi_square(priorities):
    if priorities == "random100":
        priorities = np.random.default_rng(7).uniform(0.1, 5.0, size=100)
    buf = scalar_buffer(len(priorities), alpha=0.6)
    fill(buf, priorities)
    counts = draw_counts(buf, 64 * 1000, seed=3)
    expected = np.asarray(priorities) ** 0.6
    expected = expected / expected.sum() * counts.sum()
    assert stats.chisquare(counts, expected).pvalue > 0.01


def test_pixel_and_latent_buffers():
    pix = PixelBuffer(10, obs_dim=4, action_dim=2)
    k = pix.store(PixelTransition(np.ones(4), np.zeros(2), 1.5, np.zeros(4), True))
    batch, ids, _ = pix.sample(3, np.random.default_rng(0))
    assert set(batch) == {"s", "a", "r", "s_next", "terminal"}
    assert np.all(ids == k) and np.all(batch["terminal"])
    lat = LatentBuffer(10, latent_dim=3, action_dim=2)
    lat.store(LatentTransition(np.ones(3), np.zeros(2), 0.0, np.zeros(3)))
    lat.store(LatentTransition(np.ones(3), np.zeros(2), 0.0, np.zeros(3), imagined=True))
    assert lat.imagined_count() == 1
    assert "imagined" not in PixelBuffer(2, 4, 2).data


def test_default_capacities_honoured():
    pix = PixelBuffer(60_000, 256, 2)
    lat = LatentBuffer(200_000, 16, 2)
    assert pix.capacity == 60_000 and lat.capacity == 200_000
    for i in range(5):
        pix.store(PixelTransition(np.zeros(256), np.zeros(2), 0.0, np.zeros(256)))
    assert len(pix) == 5
