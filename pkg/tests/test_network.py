import numpy as np
import pytest

from motionsrc.exceptions import CheckpointError, DimensionError, MotionSrcError
from motionsrc.network import (
    MlpConfig,
    diffusion_backward,
    diffusion_config,
    diffusion_forward,
    init_params,
    load_checkpoint,
    mlp_backward,
    mlp_block_forward,
    mlp_forward,
    parameter_breakdown,
    parameter_count,
    predictive_config,
    save_checkpoint,
    timestep_embed,
)
from motionsrc.numerics import numerical_gradient, relative_error


def _grad_check(params, loss, backward, rng, samples=24):
    """Compare analytic parameter gradients against central differences."""
    params.zero_grad()
    backward()
    analytic, numeric = [], []
    for name in params.names():
        value = params[name]
        idx = rng.choice(value.size, size=min(samples, value.size), replace=False)
        num = numerical_gradient(loss, value, h=1e-5, indices=idx)
        analytic.append(params.grad(name).reshape(-1)[idx])
        numeric.append(num.reshape(-1)[idx])
    return relative_error(np.concatenate(analytic), np.concatenate(numeric))


class TestConfig:
    def test_odd_latent_rejected_for_diffusion(self):
        with pytest.raises(DimensionError):
            diffusion_config(2, 7, 4)

    def test_predictive_takes_no_timestep(self):
        with pytest.raises(DimensionError):
            MlpConfig(cond_dim=0, timestep_mode="add")

    def test_unknown_mode(self):
        with pytest.raises(MotionSrcError):
            diffusion_config(2, 8, 4, "film")

    def test_text_round_trip(self):
        config = diffusion_config(3, 16, 10, "concat")
        assert MlpConfig.from_text(config.to_text()) == config

    def test_concat_extends_temporal_axis(self):
        assert diffusion_config(1, 8, 10, "concat").temporal_len == 11
        assert diffusion_config(1, 8, 10, "add").temporal_len == 10


class TestParameters:
    def test_default_diffusion_count(self):
        count = parameter_count(diffusion_config())
        assert count == 7_432_820
        assert abs(count - 7.48e6) / 7.48e6 < 0.05

    def test_breakdown_sums_to_total(self):
        config = diffusion_config(2, 8, 4, "add")
        assert sum(parameter_breakdown(config).values()) == parameter_count(config)

    def test_init_is_seeded(self, tiny_diffusion):
        a, b = init_params(tiny_diffusion, rng=5), init_params(tiny_diffusion, rng=5)
        for name in a.names():
            np.testing.assert_array_equal(a[name], b[name])
        assert a.count() == parameter_count(tiny_diffusion)

    def test_output_layer_starts_at_zero(self, tiny_predictive, rng):
        params = init_params(tiny_predictive, rng=0)
        out, _ = mlp_forward(params, tiny_predictive, rng.normal(size=(8, 54)).astype(np.float32))
        assert not out.any()


class TestTimestepEmbedding:
    def test_zero_timestep(self):
        emb = timestep_embed(0, 8)
        np.testing.assert_array_equal(emb[0::2], 0.0)
        np.testing.assert_array_equal(emb[1::2], 1.0)

    def test_first_pair(self):
        emb = timestep_embed(1, 4)
        assert emb[0] == pytest.approx(np.sin(1.0))
        assert emb[1] == pytest.approx(np.cos(1.0))
        assert emb[2] == pytest.approx(np.sin(0.01))

    def test_batched(self):
        assert timestep_embed(np.array([3, 7]), 6).shape == (2, 6)

    def test_odd_size(self):
        with pytest.raises(DimensionError):
            timestep_embed(1, 5)


class TestBlock:
    def test_zeroed_maps_are_identity(self, rng):
        config = predictive_config(1, 6, 5)
        params = init_params(config, rng=0, dtype=np.float64)
        for name in ("block0.temporal.W", "block0.temporal.b", "block0.feature.W", "block0.feature.b"):
            params[name][...] = 0.0
        h = rng.normal(size=(5, 6))
        out, _ = mlp_block_forward(params, 0, h)
        np.testing.assert_array_equal(out, h)

    def test_wrong_width(self, rng):
        config = predictive_config(1, 6, 5)
        params = init_params(config, rng=0)
        with pytest.raises(DimensionError):
            mlp_block_forward(params, 0, rng.normal(size=(5, 7)))


class TestForward:
    def test_shapes(self, tiny_diffusion, float64_params, rng):
        params = float64_params(tiny_diffusion)
        out, _ = diffusion_forward(params, tiny_diffusion, rng.normal(size=(3, 4, 132)), rng.normal(size=(3, 4, 54)), np.array([1, 5, 9]))
        assert out.shape == (3, 4, 132)

    def test_batch_matches_single(self, tiny_diffusion, float64_params, rng):
        params = float64_params(tiny_diffusion)
        x, p, t = rng.normal(size=(2, 4, 132)), rng.normal(size=(2, 4, 54)), np.array([3, 40])
        batched, _ = diffusion_forward(params, tiny_diffusion, x, p, t)
        single, _ = diffusion_forward(params, tiny_diffusion, x[1], p[1], 40)
        np.testing.assert_allclose(batched[1], single, atol=1e-10)

    def test_timestep_changes_output(self, tiny_diffusion, float64_params, rng):
        params = float64_params(tiny_diffusion)
        x, p = rng.normal(size=(4, 132)), rng.normal(size=(4, 54))
        a, _ = diffusion_forward(params, tiny_diffusion, x, p, 3)
        b, _ = diffusion_forward(params, tiny_diffusion, x, p, 700)
        assert not np.allclose(a, b)

    def test_zero_time_projections_match_untimed_model(self, float64_params, rng):
        repin = diffusion_config(2, 8, 4, "repin")
        plain = diffusion_config(2, 8, 4, "none")
        params = float64_params(repin)
        for j in range(repin.num_blocks):
            params[f"block{j}.time.W"][...] = 0.0
            params[f"block{j}.time.b"][...] = 0.0
        untimed = init_params(plain, dtype=np.float64)
        for name in untimed.names():
            untimed[name][...] = params[name]
        x, p = rng.normal(size=(4, 132)), rng.normal(size=(4, 54))
        a, _ = diffusion_forward(params, repin, x, p, 17)
        b, _ = diffusion_forward(untimed, plain, x, p, 17)
        np.testing.assert_array_equal(a, b)

    def test_frame_count_checked(self, tiny_diffusion, float64_params, rng):
        params = float64_params(tiny_diffusion)
        with pytest.raises(DimensionError):
            diffusion_forward(params, tiny_diffusion, rng.normal(size=(5, 132)), rng.normal(size=(5, 54)), 0)

    def test_predictive_rejects_diffusion_config(self, tiny_diffusion, float64_params, rng):
        with pytest.raises(DimensionError):
            mlp_forward(float64_params(tiny_diffusion), tiny_diffusion, rng.normal(size=(4, 54)))


class TestGradients:
    def test_predictive(self, tiny_predictive, float64_params, rng):
        params = float64_params(tiny_predictive)
        inp = rng.normal(size=(2, 8, 54))
        G = rng.normal(size=(2, 8, 132))

        def loss():
            return float(np.sum(mlp_forward(params, tiny_predictive, inp)[0] * G))

        def backward():
            _, cache = mlp_forward(params, tiny_predictive, inp)
            mlp_backward(params, tiny_predictive, cache, G)

        assert _grad_check(params, loss, backward, rng) < 1e-4

    @pytest.mark.parametrize("mode", ["none", "add", "concat", "repin"])
    def test_diffusion_modes(self, mode, float64_params, rng):
        config = diffusion_config(2, 8, 4, mode)
        params = float64_params(config)
        x, p = rng.normal(size=(2, 4, 132)), rng.normal(size=(2, 4, 54))
        t = np.array([4, 250])
        G = rng.normal(size=(2, 4, 132))

        def loss():
            return float(np.sum(diffusion_forward(params, config, x, p, t)[0] * G))

        def backward():
            _, cache = diffusion_forward(params, config, x, p, t)
            diffusion_backward(params, config, cache, G)

        assert _grad_check(params, loss, backward, rng) < 1e-4


class TestCheckpoint:
    def test_round_trip(self, tiny_diffusion, float64_params, tmp_path):
        params = float64_params(tiny_diffusion).astype(np.float32)
        extra = {"opt.m.output.W": np.ones((8, 132), dtype=np.float32)}
        path = str(tmp_path / "model.ckpt")
        save_checkpoint(path, params, {"iteration": 12}, extra)
        loaded, meta, loaded_extra = load_checkpoint(path)
        assert loaded.config == tiny_diffusion
        assert meta == {"iteration": 12}
        for name in params.names():
            np.testing.assert_array_equal(loaded[name], params[name])
        np.testing.assert_array_equal(loaded_extra["opt.m.output.W"], extra["opt.m.output.W"])

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "model.ckpt"
        path.write_bytes(b"NOPE" + bytes(16))
        with pytest.raises(CheckpointError):
            load_checkpoint(str(path))

    def test_truncated(self, tiny_diffusion, tmp_path):
        path = tmp_path / "model.ckpt"
        save_checkpoint(str(path), init_params(tiny_diffusion))
        path.write_bytes(path.read_bytes()[:-10])
        with pytest.raises(CheckpointError):
            load_checkpoint(str(path))

    def test_missing_file(self, tmp_path):
        with pytest.raises(CheckpointError):
            load_checkpoint(str(tmp_path / "absent.ckpt"))
