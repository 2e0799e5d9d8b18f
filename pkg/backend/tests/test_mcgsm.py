"""
MCGSM tests against brute-force per-(c, s) evaluation
"""
import math

import numpy as np
import pytest

from ride.services import mcgsm
from ride.services.mcgsm import McgsmParams
from ride.utils.numeric import finite_diff_grad, make_rng

LOG_2PI = math.log(2.0 * math.pi)


def random_params(seed: int, C: int = 3, S: int = 2, D: int = 4, R: int = 3) -> McgsmParams:
    gen = make_rng(seed).generator
    return McgsmParams(
        gate_bias=gen.normal(size=(C, S)),
        log_precision=gen.uniform(-1.0, 2.0, size=(C, S)),
        quad_factors=0.5 * gen.normal(size=(C, R, D)),
        predictors=gen.normal(size=(C, D)),
    )


def random_instance(seed: int):
    """Random (C, S, D, R) with C, S <= 4 and R <= D <= 8, plus a feature vector and pixel."""
    gen = make_rng(seed).generator
    C, S = (int(v) for v in gen.integers(1, 5, size=2))
    D = int(gen.integers(1, 9))
    R = int(gen.integers(1, D + 1))
    params = McgsmParams(
        gate_bias=gen.normal(size=(C, S)),
        log_precision=gen.uniform(-1.0, 1.5, size=(C, S)),
        quad_factors=0.5 / math.sqrt(D) * gen.normal(size=(C, R, D)),
        predictors=gen.normal(size=(C, D)) / math.sqrt(D),
    )
    return params, gen.normal(size=D), float(gen.normal())


def brute_force_joint(params: McgsmParams, h, x):
    """Unnormalized gate weights and joint densities, one (c, s) at a time."""
    C, S = params.gate_bias.shape
    weights = np.zeros((C, S))
    joint = np.zeros((C, S))
    for c in range(C):
        bh = params.quad_factors[c] @ h
        mean = float(params.predictors[c] @ h)
        for s in range(S):
            alpha = params.log_precision[c, s]
            weights[c, s] = math.exp(params.gate_bias[c, s] - 0.5 * math.exp(alpha) * float(bh @ bh))
            expert = math.exp(0.5 * alpha - 0.5 * LOG_2PI - 0.5 * math.exp(alpha) * (x - mean) ** 2)
            joint[c, s] = weights[c, s] * expert
    gate = weights / weights.sum()
    return gate, gate * (joint / weights)


def single(C: int, S: int, D: int, alpha: float = 0.0) -> McgsmParams:
    return McgsmParams(
        gate_bias=np.zeros((C, S)),
        log_precision=np.full((C, S), alpha),
        quad_factors=np.zeros((C, D, D)),
        predictors=np.zeros((C, D)),
    )


class TestGate:
    def test_single_component(self):
        assert mcgsm.gate_log_probs(single(1, 1, 2), np.ones(2))[0, 0] == 0.0

    def test_symmetric_gate_is_uniform(self):
        logp = mcgsm.gate_log_probs(single(3, 4, 2), np.array([0.3, -0.7]))
        np.testing.assert_allclose(logp, -math.log(12), atol=1e-12)

    def test_matches_brute_force(self):
        params = random_params(0)
        h = make_rng(1).generator.normal(size=4)
        gate, _ = brute_force_joint(params, h, 0.0)
        logp = mcgsm.gate_log_probs(params, h)
        assert np.exp(logp).sum() == pytest.approx(1.0, abs=1e-12)
        np.testing.assert_allclose(np.exp(logp), gate, rtol=1e-12, atol=1e-14)


class TestConditionalDensity:
    def test_standard_normal_at_mode(self):
        assert mcgsm.cond_log_density(single(1, 1, 2), np.zeros(2), 0.0) == pytest.approx(-0.5 * LOG_2PI, abs=1e-12)

    def test_standard_normal_at_one(self):
        assert mcgsm.cond_log_density(single(1, 1, 2), np.zeros(2), 1.0) == pytest.approx(-0.5 * LOG_2PI - 0.5, abs=1e-12)

    def test_brute_force_oracle(self):
        gen = make_rng(2).generator
        for trial in range(100):
            params = random_params(100 + trial, C=2, S=2)
            h = gen.normal(size=4)
            x = float(gen.normal())
            _, joint = brute_force_joint(params, h, x)
            assert mcgsm.cond_log_density(params, h, x) == pytest.approx(math.log(joint.sum()), abs=1e-12)

    def test_batch_matches_single(self):
        params = random_params(3)
        gen = make_rng(4).generator
        features = gen.normal(size=(5, 4))
        pixels = gen.normal(size=5)
        batch = mcgsm.cond_log_density_batch(params, features, pixels)
        for n in range(5):
            assert batch[n] == pytest.approx(mcgsm.cond_log_density(params, features[n], pixels[n]), abs=1e-13)


class TestPosterior:
    def test_single_component(self):
        assert np.array_equal(mcgsm.posterior(single(1, 1, 2), np.ones(2), 0.4), [[1.0]])

    def test_mirrored_experts_give_uniform_posterior(self):
        params = single(2, 1, 2)
        params.predictors[0] = [1.0, 0.0]
        params.predictors[1] = [-1.0, 0.0]
        post = mcgsm.posterior(params, np.array([0.8, 0.3]), 0.0)
        np.testing.assert_allclose(post, 0.5, atol=1e-15)

    def test_bayes_rule_oracle(self):
        gen = make_rng(5).generator
        for trial in range(100):
            params = random_params(200 + trial)
            h = gen.normal(size=4)
            x = float(gen.normal())
            _, joint = brute_force_joint(params, h, x)
            np.testing.assert_allclose(mcgsm.posterior(params, h, x), joint / joint.sum(), rtol=1e-10, atol=1e-12)


class TestEntropy:
    def test_single_component_is_zero(self):
        assert mcgsm.posterior_entropy(single(1, 1, 2), np.ones(2), 0.1) == 0.0

    def test_uniform_posterior_is_max(self):
        assert mcgsm.posterior_entropy(single(12, 4, 3), np.ones(3), 0.2) == pytest.approx(math.log(48), abs=1e-12)

    def test_brute_force_oracle(self):
        gen = make_rng(6).generator
        for trial in range(100):
            params = random_params(300 + trial)
            h = gen.normal(size=4)
            x = float(gen.normal())
            _, joint = brute_force_joint(params, h, x)
            post = joint / joint.sum()
            expected = -sum(p * math.log(p) for p in post.ravel() if p > 0)
            assert mcgsm.posterior_entropy(params, h, x) == pytest.approx(expected, abs=1e-12)

    def test_bounds(self):
        params = random_params(7)
        gen = make_rng(8).generator
        entropy = mcgsm.posterior_entropy_batch(params, gen.normal(size=(200, 4)), gen.normal(size=200))
        assert np.all(entropy >= 0.0)
        assert np.all(entropy <= math.log(6) + 1e-15)


class TestGradients:
    def test_gaussian_score(self):
        d_pixel, _, _ = mcgsm.cond_grads(single(1, 1, 2), np.zeros(2), 0.3)
        assert d_pixel == pytest.approx(-0.3, abs=1e-15)

    def test_zero_at_single_component_mode(self):
        params = single(1, 1, 2, alpha=1.0)
        params.predictors[0] = [0.5, -0.25]
        h = np.array([0.4, 0.2])
        d_pixel, _, _ = mcgsm.cond_grads(params, h, float(params.predictors[0] @ h))
        assert d_pixel == pytest.approx(0.0, abs=1e-15)

    def test_pixel_and_feature_grads_match_finite_differences(self):
        for seed in range(100):
            params, h, x = random_instance(seed)
            d_pixel, d_h, _ = mcgsm.cond_grads(params, h, x)

            fd_h = finite_diff_grad(lambda v: mcgsm.cond_log_density(params, v, x), h)
            np.testing.assert_allclose(d_h, fd_h, rtol=1e-6, atol=1e-7, err_msg=f"instance {seed}")
            fd_x = finite_diff_grad(lambda v: mcgsm.cond_log_density(params, h, float(v[0])), np.array([x]))
            assert d_pixel == pytest.approx(fd_x[0], rel=1e-6, abs=1e-7)

    def test_param_grads_match_finite_differences(self):
        for seed in range(100):
            params, h, x = random_instance(1000 + seed)
            _, _, grads = mcgsm.cond_grads(params, h, x)
            for name in McgsmParams.FIELDS:
                def f(value):
                    perturbed = params.copy()
                    setattr(perturbed, name, value)
                    return mcgsm.cond_log_density(perturbed, h, x)

                fd = finite_diff_grad(f, getattr(params, name))
                np.testing.assert_allclose(getattr(grads, name), fd, rtol=1e-6, atol=1e-7, err_msg=f"{name}, instance {seed}")


class TestSampling:
    def test_vanishing_variance(self):
        params = single(1, 1, 2, alpha=30.0)
        assert abs(mcgsm.sample_pixel(params, np.ones(2), make_rng(0))) < 1e-4

    def test_deterministic(self):
        params = random_params(10)
        h = np.ones(4)
        assert mcgsm.sample_pixel(params, h, make_rng(3)) == mcgsm.sample_pixel(params, h, make_rng(3))

    def test_monte_carlo_moments(self):
        params = single(1, 1, 2, alpha=math.log(1.0 / 0.04))
        params.predictors[0] = [0.3, 0.0]
        features = np.tile([1.0, 5.0], (100_000, 1))
        draws = mcgsm.sample_batch(params, features, make_rng(11))
        assert draws.mean() == pytest.approx(0.3, rel=0.02)
        assert draws.std() == pytest.approx(0.2, rel=0.02)


class TestPermutation:
    def test_density_ignores_component_and_scale_order(self):
        for seed in range(20):
            params, h, x = random_instance(2000 + seed)
            C, S = params.gate_bias.shape
            gen = make_rng(seed).generator
            components = gen.permutation(C)
            scales = gen.permutation(S)
            permuted = McgsmParams(
                gate_bias=params.gate_bias[components][:, scales],
                log_precision=params.log_precision[components][:, scales],
                quad_factors=params.quad_factors[components],
                predictors=params.predictors[components],
            )
            assert mcgsm.cond_log_density(permuted, h, x) == pytest.approx(mcgsm.cond_log_density(params, h, x), abs=1e-12)
            assert mcgsm.posterior_entropy(permuted, h, x) == pytest.approx(mcgsm.posterior_entropy(params, h, x), abs=1e-12)
            np.testing.assert_allclose(
                mcgsm.posterior(permuted, h, x), mcgsm.posterior(params, h, x)[components][:, scales], atol=1e-12
            )
