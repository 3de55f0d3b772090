import numpy as np
import pytest

from pdhash.data import LabeledDataset, make_blobs
from pdhash.model import init_params, preset
from pdhash.numerics import SgdConfig, SplitMix64
from pdhash.trainer import (
    AugmentConfig,
    TrainConfig,
    TrainingDiverged,
    augment,
    sample_npair_batch,
    shift_image,
    steps_per_epoch,
    train,
)


@pytest.fixture(scope="module")
def blobs():
    return make_blobs(10, 200, 2, 10.0, seed=1)[0]


def test_two_by_two_batch_is_unique_pairing():
    ds = LabeledDataset(np.arange(4.0)[:, None], [0, 1, 0, 1], 2)
    for seed in range(20):
        b = sample_npair_batch(ds, SplitMix64(seed))
        assert b.classes.tolist() == [0, 1]
        assert {b.anchors[0], b.positives[0]} == {0, 2}
        assert {b.anchors[1], b.positives[1]} == {1, 3}


def test_batch_is_seeded_and_pairs_distinct(blobs):
    a = sample_npair_batch(blobs, SplitMix64(9))
    b = sample_npair_batch(blobs, SplitMix64(9))
    assert np.array_equal(a.anchors, b.anchors) and np.array_equal(a.positives, b.positives)
    assert np.all(a.anchors != a.positives)
    assert np.array_equal(blobs.labels[a.anchors], np.arange(10))
    assert np.array_equal(blobs.labels[a.positives], np.arange(10))


def test_singleton_class_is_named():
    ds = LabeledDataset(np.zeros((5, 1)), [0, 0, 1, 2, 2], 3)
    with pytest.raises(ValueError, match="class 1"):
        sample_npair_batch(ds, SplitMix64(0))


def test_sampler_is_uniform_within_class():
    ds = LabeledDataset(np.zeros((4, 1)), [0, 0, 0, 0], 1)
    rng = SplitMix64(3)
    counts = np.zeros(4)
    for _ in range(4000):
        b = sample_npair_batch(ds, rng)
        counts[b.anchors[0]] += 1
        counts[b.positives[0]] += 1
    assert np.all(np.abs(counts / 8000 - 0.25) < 0.03)


def test_augment_examples():
    img = SplitMix64(1).uniform((6, 6, 1))
    assert augment(img, AugmentConfig(), SplitMix64(0)) is img
    hot = np.zeros((5, 5, 1))
    hot[2, 2] = 1.0
    moved = shift_image(hot, 1, 0)
    assert moved[2, 3, 0] == 1.0 and moved.sum() == 1.0
    sym = np.zeros((4, 6, 1))
    sym[:, 1] = sym[:, 4] = 0.7
    flipped = augment(sym, AugmentConfig(horizontal_flip=True), SplitMix64(0))
    assert np.array_equal(flipped, sym)
    with pytest.raises(ValueError):
        AugmentConfig(shift_pixels=5)


def test_augment_keeps_range():
    rng = SplitMix64(2)
    cfg = AugmentConfig(shift_pixels=3, horizontal_flip=True)
    for _ in range(20):
        out = augment(rng.uniform((8, 8, 2)), cfg, rng)
        assert out.shape == (8, 8, 2) and out.min() >= 0 and out.max() <= 1


def test_steps_per_epoch():
    assert steps_per_epoch(make_blobs(10, 200, 2, 1.0, 0)[0]) == 100
    assert steps_per_epoch(LabeledDataset(np.zeros((3, 1)), [0, 0, 0], 1)) == 1


def test_zero_learning_rate_keeps_init(blobs):
    mcfg = preset("mlp-small", (2,), 12)
    tcfg = TrainConfig(12, SgdConfig(0.0, 0.9), epochs=1, seed=5)
    result = train(blobs, mcfg, tcfg)
    init = init_params(mcfg, SplitMix64(5).split())
    assert all(a.tobytes() == b.tobytes() for a, b in zip(result.params, init))
    assert len(result.losses) == 100


def test_same_seed_same_history(blobs):
    mcfg = preset("mlp-small", (2,), 8)
    tcfg = TrainConfig(8, epochs=1, seed=3)
    a, b = train(blobs, mcfg, tcfg), train(blobs, mcfg, tcfg)
    assert a.losses == b.losses
    assert all(x.tobytes() == y.tobytes() for x, y in zip(a.params, b.params))


def test_loss_trend_decreases(blobs):
    result = train(blobs, preset("mlp-small", (2,), 12), TrainConfig(12, epochs=2, seed=0))
    assert len(result.losses) == 200
    assert np.mean(result.losses[-10:]) < np.mean(result.losses[:10])


@pytest.mark.xfail(strict=True, reason="cross-class hinge terms keep the 200-batch loss near 10% of the start")
def test_two_hundred_batches_reach_five_percent(blobs):
    result = train(blobs, preset("mlp-small", (2,), 12), TrainConfig(12, epochs=2, seed=0))
    assert result.losses[-1] < 0.05 * result.losses[0]


def test_config_mismatches_rejected(blobs):
    with pytest.raises(ValueError):
        train(blobs, preset("mlp-small", (2,), 12), TrainConfig(8))
    with pytest.raises(ValueError):
        train(blobs, preset("mlp-small", (3,), 12), TrainConfig(12))
    with pytest.raises(ValueError):
        TrainConfig(epochs=0)


def test_divergence_aborts(blobs):
    mcfg = preset("mlp-small", (2,), 4)
    params = [np.full(s, np.nan) for s in mcfg.param_shapes()]
    with pytest.raises(TrainingDiverged):
        train(blobs, mcfg, TrainConfig(4, epochs=1), params=params)


def test_conv_training_smoke():
    rng = SplitMix64(0)
    ds = LabeledDataset(rng.uniform((12, 16, 16, 1)), np.arange(12) % 3, 3)
    cfg = TrainConfig(6, epochs=2, augment=AugmentConfig(2, True), seed=1)
    a = train(ds, preset("conv-small", (16, 16, 1), 6), cfg)
    b = train(ds, preset("conv-small", (16, 16, 1), 6), cfg)
    assert a.losses == b.losses and all(np.isfinite(a.losses))
