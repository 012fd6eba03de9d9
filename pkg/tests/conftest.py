import sys

import numpy as np
import pytest

from linn.config import ModelConfig, merge
from linn.model import BinauralRenderer
from linn.pose import PoseTrack


def small_config(**over):
    """A narrow model that keeps gradient checks and training quick."""
    base = {"ibc": {"hidden": 16}, "warp": {"neural_channels": 4}}
    for k, v in over.items():
        base.setdefault(k, {}).update(v) if isinstance(v, dict) else base.__setitem__(k, v)
    return merge(ModelConfig(), base)


def moving_track(seconds, rate=120.0, radius=1.5, turns=0.5, phase=0.3):
    """Source circling the listener in the horizontal plane, yaw drifting slowly."""
    k = int(np.ceil(seconds * rate)) + 2
    t = np.arange(k) / rate
    az = phase + 2 * np.pi * turns * t / max(seconds, 1e-9)
    yaw = 0.4 * np.sin(2 * np.pi * 0.7 * t)
    vals = np.stack([radius * np.cos(az), radius * np.sin(az), 0.1 * np.sin(t),
                     np.zeros_like(t), np.zeros_like(t), np.sin(yaw / 2), np.cos(yaw / 2)], axis=1)
    return PoseTrack(vals, rate)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_model():
    return BinauralRenderer(small_config(), seed=3)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in mod.summary_lines():
        terminalreporter.write_line(line)
