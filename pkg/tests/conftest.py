import numpy as np
import pytest

from motionsrc.network import diffusion_config, init_params, predictive_config
from motionsrc.skeleton import default_test_skeleton


@pytest.fixture
def tree():
    return default_test_skeleton()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_diffusion():
    return diffusion_config(2, 8, 4, "repin")


@pytest.fixture
def tiny_predictive():
    return predictive_config(2, 16, 8)


def randomize(params, rng, scale=0.5):
    """Fill every parameter with random values, output layer included."""
    for name in params.names():
        value = params[name]
        value[...] = rng.uniform(-scale, scale, size=value.shape)
        if name.endswith("gamma"):
            value += 1.0
    return params


def random_motion(tree, rng, frames, max_angle=0.6):
    """[frames, J*6] of random local rotations plus a [frames, 3] root path."""
    from motionsrc.rotations import matrix_to_rot6d, random_rotations

    J = tree.joint_count
    R = random_rotations(rng, frames * J, max_angle).reshape(frames, J, 3, 3)
    motion = matrix_to_rot6d(R).reshape(frames, J * 6)
    root = np.cumsum(rng.normal(0.0, 0.01, size=(frames, 3)), axis=0) + [0.0, 0.9, 0.0]
    return motion, root


@pytest.fixture
def float64_params():
    def build(config, seed=0):
        return randomize(init_params(config, rng=seed, dtype=np.float64), np.random.default_rng(seed))

    return build
