import numpy as np
import pytest

from evball.pipeline import PipelineConfig, run_pipeline
from evball.simcam import SimConfig, default_cameras, simulate


@pytest.fixture(scope="session")
def cams():
    return default_cameras()


@pytest.fixture(scope="session")
def scene(cams):
    """Default 4 m/s stereo simulation: (streams, gt)."""
    return simulate(SimConfig(), cams)


@pytest.fixture(scope="session")
def det_runs(scene, cams):
    """Deterministic pipeline result per detector on the default scene."""
    streams, _ = scene
    out = {}
    for name in ("eros_hough", "median", "particle"):
        cfg = PipelineConfig(detector=name, deterministic=25)
        out[name] = run_pipeline(streams["cam_a"], streams["cam_b"], cams, cfg)
    return out


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
