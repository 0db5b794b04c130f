import functools

import numpy as np
import pytest

from motionsrc.diffusion import (
    NoiseSchedule,
    SamplerSpec,
    cosine_schedule,
    ddim_sample,
    ddim_timestep_subset,
    ddpm_sample,
    eps_to_x0,
    make_denoiser,
    q_sample,
    training_loss_dm,
    x0_to_eps,
)
from motionsrc.exceptions import DimensionError, DivisionGuardError, MotionSrcError
from motionsrc.lossmetrics import LossWeights, foot_contact_mask, geometric_losses
from motionsrc.network import diffusion_config, init_params
from motionsrc.numerics import numerical_gradient, relative_error

from .conftest import random_motion


class CountingRng:
    def __init__(self, seed):
        self.inner = np.random.default_rng(seed)
        self.calls = 0

    def standard_normal(self, *args, **kwargs):
        self.calls += 1
        return self.inner.standard_normal(*args, **kwargs)


def oracle(x0):
    """A denoiser that always knows the answer."""
    return lambda x, p, t: x0.copy()


class TestSchedule:
    def test_cosine_shape(self):
        sched = cosine_schedule(1000)
        ab = sched.alpha_bars
        assert sched.T == 1000
        assert np.all(np.diff(ab) < 0)
        assert ab[0] > 0.999
        assert ab[-1] < 0.01
        assert np.all(ab > 0)
        assert np.all((sched.betas > 0) & (sched.betas <= 0.999))

    def test_alpha_bar_is_running_product(self):
        sched = cosine_schedule(50)
        np.testing.assert_allclose(sched.alpha_bars, np.cumprod(1.0 - sched.betas))

    def test_bad_T(self):
        with pytest.raises(MotionSrcError):
            cosine_schedule(0)

    def test_timestep_range(self):
        with pytest.raises(MotionSrcError):
            cosine_schedule(10).check_t(10)


class TestForwardNoising:
    def test_zero_noise_scales_signal(self, rng):
        sched = cosine_schedule(100)
        x0 = rng.normal(size=(4, 6))
        np.testing.assert_allclose(q_sample(x0, 40, np.zeros_like(x0), sched), np.sqrt(sched.alpha_bars[40]) * x0)

    def test_noise_variance(self, rng):
        sched = cosine_schedule(1000)
        eps = rng.standard_normal((200, 500))
        x_t = q_sample(np.zeros_like(eps), 500, eps, sched)
        assert x_t.var() == pytest.approx(1.0 - sched.alpha_bars[500], rel=0.02)

    def test_last_step_is_almost_pure_noise(self, rng):
        sched = cosine_schedule(1000)
        x0 = np.ones((200, 500))
        x_t = q_sample(x0, 999, rng.standard_normal(x0.shape), sched)
        assert abs(x_t.mean()) < 0.01

    def test_per_sample_timesteps(self, rng):
        sched = cosine_schedule(100)
        x0 = rng.normal(size=(2, 3, 4))
        eps = rng.normal(size=(2, 3, 4))
        both = q_sample(x0, np.array([5, 80]), eps, sched)
        np.testing.assert_allclose(both[1], q_sample(x0[1], 80, eps[1], sched))

    def test_noise_shape_checked(self, rng):
        with pytest.raises(DimensionError):
            q_sample(np.zeros((2, 3)), 1, np.zeros((3, 2)), cosine_schedule(10))

    def test_noise_recovery_every_timestep(self, rng):
        sched = cosine_schedule(1000)
        x0 = rng.normal(size=(5, 3))
        eps = rng.normal(size=(5, 3))
        for t in range(1000):
            x_t = q_sample(x0, t, eps, sched)
            np.testing.assert_allclose(x0_to_eps(x_t, x0, t, sched), eps, atol=1e-5)
            np.testing.assert_allclose(eps_to_x0(x_t, eps, t, sched), x0, atol=1e-5)

    def test_noise_undefined_without_noise(self):
        sched = NoiseSchedule(np.zeros(1), np.ones(1), np.ones(1))
        with pytest.raises(DivisionGuardError):
            x0_to_eps(np.ones(3), np.ones(3), 0, sched)


class TestTimestepSubset:
    def test_examples(self):
        assert ddim_timestep_subset(1000, 5) == [999, 799, 599, 399, 199]
        assert ddim_timestep_subset(1000, 1) == [999]
        assert ddim_timestep_subset(10, 10) == list(range(9, -1, -1))

    def test_strictly_decreasing(self):
        for K in (2, 3, 7, 100, 999):
            steps = ddim_timestep_subset(1000, K)
            assert len(steps) == K and steps[0] == 999
            assert all(a > b for a, b in zip(steps, steps[1:]))
            assert steps[-1] >= 0

    def test_bad_K(self):
        with pytest.raises(MotionSrcError):
            ddim_timestep_subset(10, 11)
        with pytest.raises(MotionSrcError):
            SamplerSpec("ddim", 0)

    def test_ddpm_uses_every_step(self):
        assert SamplerSpec("ddpm").timesteps(cosine_schedule(4)) == [3, 2, 1, 0]


class TestDdim:
    @pytest.mark.parametrize("K", [1, 5, 1000])
    def test_oracle_denoiser(self, K, rng):
        x0 = rng.normal(size=(6, 132))
        p = rng.normal(size=(6, 54))
        out = ddim_sample(oracle(x0), p, SamplerSpec("ddim", K), cosine_schedule(1000), rng=0)
        np.testing.assert_array_equal(out, x0)

    def test_single_step_sees_seeded_noise(self, rng):
        seen = []

        def denoiser(x, p, t):
            seen.append((x.copy(), t))
            return np.zeros_like(x)

        p = rng.normal(size=(4, 54))
        ddim_sample(denoiser, p, SamplerSpec("ddim", 1), cosine_schedule(100), rng=42)
        (x, t), = seen
        assert t == 99
        np.testing.assert_array_equal(x, np.random.default_rng(42).standard_normal((4, 132)))

    def test_reads_generator_once(self, rng):
        counter = CountingRng(3)
        ddim_sample(lambda x, p, t: 0.5 * x, rng.normal(size=(4, 54)), SamplerSpec("ddim", 5), cosine_schedule(100), rng=counter)
        assert counter.calls == 1

    def test_step_callback(self, rng):
        steps = []
        ddim_sample(lambda x, p, t: x, rng.normal(size=(4, 54)), SamplerSpec("ddim", 5), cosine_schedule(1000),
                    on_step=lambda k, t: steps.append(t))
        assert steps == [999, 799, 599, 399, 199]

    def test_deterministic_with_network(self, float64_params, rng):
        config = diffusion_config(2, 8, 4, "repin")
        params = float64_params(config)
        sched = cosine_schedule(100)
        denoiser = make_denoiser(params, config)
        p = rng.normal(size=(4, 54))
        a = ddim_sample(denoiser, p, SamplerSpec("ddim", 5), sched, rng=7)
        b = ddim_sample(denoiser, p, SamplerSpec("ddim", 5), sched, rng=7)
        c = ddim_sample(denoiser, p, SamplerSpec("ddim", 5), sched, rng=8)
        np.testing.assert_array_equal(a, b)
        assert not np.array_equal(a, c)


class TestDdpm:
    def test_oracle_without_noise(self, rng):
        x0 = rng.normal(size=(4, 132))
        out = ddpm_sample(oracle(x0), rng.normal(size=(4, 54)), cosine_schedule(100), stochastic=False)
        np.testing.assert_allclose(out, x0, atol=1e-5)

    def test_generator_reads(self, rng):
        p = rng.normal(size=(4, 54))
        counter = CountingRng(0)
        ddpm_sample(lambda x, p, t: 0.5 * x, p, cosine_schedule(20), rng=counter)
        assert counter.calls == 20
        counter = CountingRng(0)
        ddpm_sample(lambda x, p, t: 0.5 * x, p, cosine_schedule(20), rng=counter, stochastic=False)
        assert counter.calls == 1

    def test_single_step_matches_ddim(self, rng):
        p = rng.normal(size=(4, 54))

        def denoiser(x, p, t):
            return np.tanh(x) * 0.3 + p[..., :1]

        sched = cosine_schedule(1)
        a = ddpm_sample(denoiser, p, sched, rng=11, stochastic=False)
        b = ddim_sample(denoiser, p, SamplerSpec("ddim", 1), sched, rng=11)
        np.testing.assert_allclose(a, b, atol=1e-8)


class TestTrainingObjective:
    def _inputs(self, rng, B=2, N=4):
        return rng.normal(size=(B, N, 132)), rng.normal(size=(B, N, 54)), np.array([3, 61])[:B], rng.normal(size=(B, N, 132))

    def test_zero_output_model(self, rng):
        config = diffusion_config(2, 8, 4, "repin")
        params = init_params(config, rng=0, dtype=np.float64)
        x0, p, t, eps = self._inputs(rng)
        total, terms = training_loss_dm(params, config, x0, p, t, eps, cosine_schedule(100))
        assert total == pytest.approx(np.mean(x0**2))
        assert set(terms) == {"dm", "total"}

    def test_predict_noise_target(self, rng):
        config = diffusion_config(1, 8, 4, "add")
        params = init_params(config, rng=0, dtype=np.float64)
        x0, p, t, eps = self._inputs(rng)
        total, _ = training_loss_dm(params, config, x0, p, t, eps, cosine_schedule(100), predict_noise=True)
        assert total == pytest.approx(np.mean(eps**2))

    @pytest.mark.parametrize("predict_noise", [False, True])
    def test_gradients_with_geometric_terms(self, predict_noise, tree, float64_params, rng):
        config = diffusion_config(1, 8, 4, "repin")
        params = float64_params(config, seed=3)
        sched = cosine_schedule(100)
        motions, roots = zip(*(random_motion(tree, rng, 4) for _ in range(2)))
        x0, root = np.stack(motions), np.stack(roots)
        p = rng.normal(size=(2, 4, 54))
        eps = rng.normal(size=x0.shape)
        t = np.array([2, 30])
        mask = foot_contact_mask(tree, x0, root, speed_threshold=0.5)
        geometric = functools.partial(
            geometric_losses, tree, x0, root_trans=root, weights=LossWeights(1.0, 1.0, 1.0), mask=mask
        )

        def loss():
            return training_loss_dm(params, config, x0, p, t, eps, sched, predict_noise, geometric)[0]

        _, terms = training_loss_dm(params, config, x0, p, t, eps, sched, predict_noise, geometric)
        assert {"dm", "pos", "vel", "foot", "total"} <= set(terms)
        analytic = {name: params.grad(name).copy() for name in params.names()}
        a, n = [], []
        for name in ("fc0.W", "block0.temporal.W", "block0.time.b", "output.W", "time_mlp.fc1.W"):
            idx = rng.choice(params[name].size, size=min(12, params[name].size), replace=False)
            n.append(numerical_gradient(loss, params[name], h=1e-5, indices=idx).reshape(-1)[idx])
            a.append(analytic[name].reshape(-1)[idx])
        assert relative_error(np.concatenate(a), np.concatenate(n)) < 1e-4
