"""
Spatial LSTM: forward semantics, causality and backprop against finite differences
"""
import numpy as np
import pytest

from ride.core.exceptions import ShapeError
from ride.services import slstm
from ride.services.slstm import CausalWindow, SlstmParams
from ride.utils.numeric import finite_diff_grad, make_rng


@pytest.fixture
def params():
    return slstm.init_slstm(CausalWindow().size, make_rng(3), hidden_dim=3)


def hidden_energy(params: SlstmParams, image) -> float:
    cache = slstm.forward(params, image)
    return float(np.sum(cache.hidden ** 2))


class TestCausalWindow:
    def test_rejects_non_causal_offsets(self):
        with pytest.raises(ShapeError):
            CausalWindow(((0, 1),))
        with pytest.raises(ShapeError):
            CausalWindow(((0, 0),))
        with pytest.raises(ShapeError):
            CausalWindow(((-1, 0), (-1, 0)))

    def test_gather_zero_pads(self):
        image = np.arange(1.0, 10.0).reshape(3, 3)
        windows = CausalWindow().gather(image[None])[0]
        # offsets (-1,-1), (-1,0), (-1,1), (0,-1)
        assert np.array_equal(windows[0, 0], [0, 0, 0, 0])
        assert np.array_equal(windows[1, 1], [1, 2, 3, 4])
        assert np.array_equal(windows[2, 2], [5, 6, 0, 8])
        for i in range(3):
            for j in range(3):
                assert np.array_equal(windows[i, j], CausalWindow().at(image, i, j))

    def test_scatter_is_adjoint_of_gather(self):
        gen = make_rng(0).generator
        window = CausalWindow()
        x = gen.normal(size=(2, 4, 5))
        u = gen.normal(size=(2, 4, 5, window.size))
        assert np.sum(window.gather(x) * u) == pytest.approx(np.sum(x * window.scatter(u)), abs=1e-12)


class TestForward:
    def test_zero_network_gives_zero_state(self):
        params = SlstmParams.zeros(3, 4)
        cache = slstm.forward(params, make_rng(1).generator.uniform(size=(5, 5)))
        assert np.array_equal(cache.hidden, np.zeros((5, 5, 3)))
        assert np.array_equal(cache.cell, np.zeros((5, 5, 3)))

    def test_causality(self, params):
        image = make_rng(2).generator.uniform(size=(6, 6))
        base = slstm.forward(params, image).hidden
        changed = image.copy()
        changed[3, 2] += 0.5
        after = slstm.forward(params, changed).hidden
        for k in range(6):
            for l in range(6):
                # (3, 2) enters the window of (3, 3), (4, 1), (4, 2) and (4, 3)
                if (k, l) <= (3, 2):
                    assert np.array_equal(base[k, l], after[k, l])
        assert not np.array_equal(base[3, 3], after[3, 3])

    def test_translation_invariance_on_constant_image(self):
        params = slstm.init_slstm(4, make_rng(5), hidden_dim=3)
        # small weights and forget gates make the recurrence contractive
        params.weights *= 0.1
        params.biases[slstm.GATE_FORGET_LEFT] = -3.0
        params.biases[slstm.GATE_FORGET_TOP] = -3.0
        hidden = slstm.forward(params, np.full((24, 24), 0.4)).hidden
        np.testing.assert_allclose(hidden[20, 20], hidden[20, 21], atol=1e-10)
        np.testing.assert_allclose(hidden[20, 20], hidden[21, 20], atol=1e-10)

    def test_batch_matches_single_images(self, params):
        stack = make_rng(4).generator.uniform(size=(3, 5, 4))
        batched = slstm.forward(params, stack).hidden
        for b in range(3):
            np.testing.assert_allclose(batched[b], slstm.forward(params, stack[b]).hidden, rtol=0, atol=1e-12)

    def test_step_matches_forward(self, params):
        image = make_rng(6).generator.uniform(size=(4, 4))
        cache = slstm.forward(params, image)
        hp, cp = cache.hidden_padded[0], cache.cell_padded[0]
        h, c = slstm.step(params, CausalWindow().at(image, 2, 3), hp[3, 3], hp[2, 4], cp[3, 3], cp[2, 4])
        np.testing.assert_allclose(h, cache.hidden[2, 3], atol=1e-12)
        np.testing.assert_allclose(c, cache.cell[2, 3], atol=1e-12)

    def test_window_size_mismatch(self):
        params = slstm.init_slstm(3, make_rng(0), hidden_dim=2)
        with pytest.raises(ShapeError):
            slstm.forward(params, np.zeros((3, 3)))


class TestBackward:
    def test_zero_upstream(self, params):
        cache = slstm.forward(params, make_rng(7).generator.uniform(size=(4, 4)))
        d_image, grads = slstm.backward(params, cache, np.zeros_like(cache.hidden))
        assert np.array_equal(d_image, np.zeros((4, 4)))
        assert not np.any(grads.weights) and not np.any(grads.biases)

    def test_image_gradient_matches_finite_differences(self, params):
        image = make_rng(8).generator.uniform(size=(6, 6))
        cache = slstm.forward(params, image)
        d_image, _ = slstm.backward(params, cache, 2.0 * cache.hidden)
        fd = finite_diff_grad(lambda x: hidden_energy(params, x), image)
        np.testing.assert_allclose(d_image, fd, rtol=1e-6, atol=1e-7)

    @pytest.mark.parametrize("name", SlstmParams.FIELDS)
    def test_param_gradient_matches_finite_differences(self, params, name):
        image = make_rng(9).generator.uniform(size=(6, 6))
        cache = slstm.forward(params, image)
        _, grads = slstm.backward(params, cache, 2.0 * cache.hidden)

        def f(value):
            perturbed = params.copy()
            setattr(perturbed, name, value)
            return hidden_energy(perturbed, image)

        fd = finite_diff_grad(f, getattr(params, name))
        np.testing.assert_allclose(getattr(grads, name), fd, rtol=1e-6, atol=1e-7)

    def test_upstream_shape_checked(self, params):
        cache = slstm.forward(params, np.zeros((3, 3)))
        with pytest.raises(ShapeError):
            slstm.backward(params, cache, np.zeros((3, 3, 5)))
