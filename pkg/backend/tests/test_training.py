"""
Training loop: curriculum schedule, determinism and convergence on smooth data
"""
import numpy as np
import pytest

from ride.core.exceptions import ShapeError
from ride.schemas.training import TrainConfig
from ride.services import imgio, training
from ride.services.ride_model import init_model
from ride.utils.numeric import make_rng


def smooth_images(count: int = 3, size: int = 16, seed: int = 0):
    gen = make_rng(seed).generator
    rows, cols = np.mgrid[0:size, 0:size] / size
    return [
        np.clip(0.3 + 0.4 * (a * rows + (1 - a) * cols) + 0.01 * gen.normal(size=(size, size)), 0.0, 1.0)
        for a in gen.uniform(size=count)
    ]


def tiny_config(**overrides) -> TrainConfig:
    values = dict(
        epochs=2,
        patch_start=4,
        patch_end=6,
        patch_step=2,
        learning_rate=0.01,
        batch_size=4,
        patches_per_epoch=8,
        max_workers=1,
        seed=3,
    )
    values.update(overrides)
    return TrainConfig(**values)


@pytest.fixture
def tiny_model():
    return init_model(make_rng(1), num_components=2, num_scales=2, hidden_dim=3)


def same_params(a, b) -> bool:
    return all(np.array_equal(x, y) for x, y in zip(a.param_arrays(), b.param_arrays()))


class TestSchedule:
    def test_patch_sizes_grow_and_cap(self):
        config = TrainConfig(epochs=10, patch_start=8, patch_end=22, patch_step=2)
        assert [config.patch_size(e) for e in range(10)] == [8, 10, 12, 14, 16, 18, 20, 22, 22, 22]

    def test_learning_rate_decays(self):
        config = TrainConfig(learning_rate=1e-4, lr_decay=0.5)
        assert config.epoch_learning_rate(0) == 1e-4
        assert config.epoch_learning_rate(3) == pytest.approx(1.25e-5)

    def test_rejects_inverted_schedule(self):
        with pytest.raises(ValueError):
            TrainConfig(patch_start=10, patch_end=8)


def test_zero_epochs_returns_unchanged_copy(tiny_model):
    model, trace = training.train(tiny_model, smooth_images(), tiny_config(epochs=0))
    assert trace == []
    assert model is not tiny_model
    assert same_params(model, tiny_model)


def test_trace_follows_curriculum(tiny_model):
    model, trace = training.train(tiny_model, smooth_images(), tiny_config(epochs=3, lr_decay=0.5))
    assert [s.epoch for s in trace] == [0, 1, 2]
    assert [s.patch_size for s in trace] == [4, 6, 6]
    assert [s.learning_rate for s in trace] == pytest.approx([0.01, 0.005, 0.0025])
    assert all(np.isfinite(s.train_loglik_per_pixel) for s in trace)
    assert all(s.holdout_loglik_per_pixel is None for s in trace)
    assert not same_params(model, tiny_model)


def test_same_seed_same_model(tiny_model):
    a, trace_a = training.train(tiny_model, smooth_images(), tiny_config())
    b, trace_b = training.train(tiny_model, smooth_images(), tiny_config())
    assert same_params(a, b)
    assert trace_a == trace_b


def test_fixed_worker_count_is_reproducible(tiny_model):
    a, _ = training.train(tiny_model, smooth_images(), tiny_config(max_workers=2))
    b, _ = training.train(tiny_model, smooth_images(), tiny_config(max_workers=2))
    assert same_params(a, b)


def test_worker_chunks_cover_batch():
    slices = training._chunks(5, 3)
    assert sum(s.stop - s.start for s in slices) == 5
    assert training._chunks(2, 8) == [slice(0, 1), slice(1, 2)]


def test_images_smaller_than_final_patch_rejected(tiny_model):
    with pytest.raises(ShapeError):
        training.train(tiny_model, [np.zeros((5, 5))], tiny_config())


@pytest.mark.slow
def test_holdout_likelihood_improves(tiny_model):
    images = smooth_images(count=4, size=20)
    holdout = smooth_images(count=4, size=6, seed=9)
    before = training.average_log_likelihood(tiny_model, holdout)
    config = tiny_config(epochs=3, patch_start=6, patch_end=6, learning_rate=0.05, lr_decay=1.0, patches_per_epoch=64)
    model, trace = training.train(tiny_model, images, config, holdout=holdout)
    assert trace[-1].holdout_loglik_per_pixel == pytest.approx(training.average_log_likelihood(model, holdout))
    assert trace[-1].holdout_loglik_per_pixel > before


@pytest.mark.slow
def test_gaussian_data_reaches_its_differential_entropy():
    gen = make_rng(11).generator
    images = [gen.standard_normal((64, 64)) for _ in range(4)]
    holdout_images = [make_rng(12).generator.standard_normal((32, 32))]
    holdout = imgio.extract_patches(holdout_images, 8, 64, make_rng(13))
    model = init_model(make_rng(2), num_components=1, num_scales=1, hidden_dim=4)
    config = TrainConfig(epochs=4, patch_start=4, patch_end=8, patch_step=2, learning_rate=0.05, lr_decay=0.7,
                         batch_size=16, patches_per_epoch=1024, dequantize=False, max_workers=1, seed=4)
    _, trace = training.train(model, images, config, holdout=holdout)
    # -h(N(0, 1)) = -0.5 ln(2πe)
    assert trace[-1].holdout_loglik_per_pixel == pytest.approx(-0.5 * np.log(2 * np.pi * np.e), abs=0.1)
