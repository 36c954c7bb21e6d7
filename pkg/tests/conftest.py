import numpy as np
import pytest

from formation_ddqn import TrainConfig, init_network, save_weights


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture
def make_const_net():
    """Factory for nets that output a fixed q-row for every input.

    Zero weights kill the input path; the output bias carries the q-values.
    Handy for forcing known argmax behaviour in action-selection tests.
    """

    def _make(q_row, arch=(8, 64, 64, 8)):
        net = init_network(0, arch)
        for w in net.weights:
            w[:] = 0.0
        for b in net.biases:
            b[:] = 0.0
        net.biases[-1][:] = np.asarray(q_row, dtype=float)
        return net

    return _make


@pytest.fixture
def tiny_cfg():
    """Training config small enough for sub-second runs."""
    return TrainConfig(
        model_kind="keep",
        episodes=3,
        rng_seed=1,
        batch_size=8,
        replay_capacity=500,
        replay_min=40,
        max_steps_per_episode=30,
    )


@pytest.fixture
def weight_files(tmp_path):
    """Fresh (untrained) reach/keep weight files with matching d_max."""
    reach = tmp_path / "reach.json"
    keep = tmp_path / "keep.json"
    save_weights(init_network(11), {"d_max": 5.0}, str(reach))
    save_weights(init_network(22), {"d_max": 5.0}, str(keep))
    return str(reach), str(keep)
