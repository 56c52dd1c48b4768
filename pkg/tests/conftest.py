from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pytest

from parkourpy.config import RunConfig
from parkourpy.neural.policy import OraclePolicy, PolicyDims, StudentPolicy
from parkourpy.terrain import HeightField

TINY_POLICY = {
    "actor_hidden": 8,
    "actor_mlp": [16, 8],
    "estimator_hidden": 8,
    "estimator_mlp": [8],
    "scandot_mlp": [16],
    "embedding": 4,
}


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_dims():
    return PolicyDims.tiny()


@pytest.fixture
def flat_field():
    return HeightField(np.zeros((81, 41)), 0.05)


def small_config_dict(exchange_dir: Path) -> dict:
    return {
        "seed": 7,
        "terrain": {"rows": 2, "cols": 2, "noise_amplitude": 0.0},
        "perception": {"render_resolution": [96, 128]},
        "policy": dict(TINY_POLICY),
        "ppo": {"num_envs": 4, "steps_per_batch": 8, "minibatches": 2, "epochs": 1},
        "train": {"iterations": 2, "checkpoint_every": 1},
        "distill": {"num_envs": 2, "steps_per_file": 10, "publish_every": 2, "lr": 1e-3},
        "orchestration": {
            "exchange_dir": str(exchange_dir),
            "collectors": 2,
            "poll_interval": 0.01,
            "retry_attempts": 3,
            "retry_backoff": 0.01,
        },
    }


@pytest.fixture
def small_config(tmp_path):
    return RunConfig.from_dict(small_config_dict(tmp_path / "exchange"), environ={})


@dataclass
class Policies:
    dims: PolicyDims
    oracle: OraclePolicy
    student: StudentPolicy


@pytest.fixture
def policies(small_config):
    dims = small_config.policy
    oracle = OraclePolicy(dims, np.random.default_rng(0))
    student = StudentPolicy.from_oracle(oracle, np.random.default_rng(1))
    return Policies(dims, oracle, student)
