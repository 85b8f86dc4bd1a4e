import os

import numpy as np
import pytest

from fptlik.engine import EngineConfig
from fptlik.inference import AddmParams
from fptlik.model import PointMass, StageSchedule

RUN_SLOW = os.environ.get("FPTLIK_RUN_SLOW") == "1"


def pytest_collection_modifyitems(config, items):
    skip_slow = pytest.mark.skip(reason="full-scale study; set FPTLIK_RUN_SLOW=1 to run")
    if not RUN_SLOW:
        for item in items:
            if "slow" in item.keywords:
                item.add_marker(skip_slow)


@pytest.fixture(scope="session", autouse=True)
def _warm_jit():
    from fptlik import fastpath

    fastpath.warm_up()


@pytest.fixture(scope="session")
def piecewise_schedule():
    """Collapsing-boundary schedule with five constant-drift stages."""
    bp = np.array([0.0, 1.0, 2.5, 3.5, 4.0, 5.0])
    return StageSchedule(
        breakpoints=bp,
        mu=np.array([1.0, -0.2, 1.5, 0.5, -1.0]),
        sigma=np.ones(5),
        upper_values=1.5 - 0.3 * bp,
        lower_values=-1.5 + 0.3 * bp,
        initial=PointMass(-0.5),
    )


@pytest.fixture(scope="session")
def addm_truth():
    return AddmParams(eta=0.7, kappa=0.5, a=2.1, b=0.3, x0=-0.2)


@pytest.fixture(scope="session")
def addm_trials_5k(addm_truth):
    from fptlik.simulate import FixationProcess, simulate_addm_dataset

    return simulate_addm_dataset(addm_truth, 5000, FixationProcess(), seed=101, step=2.5e-4)


@pytest.fixture(scope="session")
def addm_trials_50k(addm_truth):
    from fptlik.simulate import FixationProcess, simulate_addm_dataset

    return simulate_addm_dataset(addm_truth, 50_000, FixationProcess(), seed=202, step=2.5e-4)


@pytest.fixture(scope="session")
def fast_cfg():
    """Lower-order engine for statistically-dominated tests."""
    return EngineConfig(interior_order=15, final_order=20)
