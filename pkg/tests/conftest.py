import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from crnsim.model import SystemParams

settings.register_profile(
    "ci",
    deadline=None,
    derandomize=True,
    max_examples=60,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("ci")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def tiny_params():
    # single channel, zero delay tolerance, one user slot
    return SystemParams(
        n_channels=1,
        p_stay_on=0.5,
        q_stay_off=0.5,
        max_delay=0,
        p_complete=1.0,
        reward_complete=1.0,
        reward_maintain=0.0,
        drop_penalty=0.0,
        max_users=1,
    )


@pytest.fixture
def small_params():
    return SystemParams(
        n_channels=2,
        p_stay_on=0.5,
        q_stay_off=0.5,
        max_delay=1,
        p_complete=0.3,
        reward_complete=10.0,
        reward_maintain=1.0,
        drop_penalty=10.0,
        max_users=2,
    )


@pytest.fixture
def fig8_params():
    return SystemParams(
        n_channels=5,
        p_stay_on=0.5,
        q_stay_off=0.5,
        max_delay=5,
        p_complete=0.01,
        reward_complete=10.0,
        reward_maintain=1.0,
        drop_penalty=10.0,
    )


def combined_se(*errs: float) -> float:
    return float(np.sqrt(sum(e * e for e in errs)))
