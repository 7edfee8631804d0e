import sys
from pathlib import Path

import numpy as np
import pytest

ROOT = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(ROOT))

from dmp_basis import new_basis  # noqa: E402
from dmp_data_models import reset_runtime_settings  # noqa: E402
from dmp_model import train_model  # noqa: E402
from synthetic_demos import min_jerk_1d, s_curve_2d  # noqa: E402
import scenario_runner  # noqa: E402
import trajectory_store  # noqa: E402

SCENARIO_DIR = ROOT / "scenarios"


@pytest.fixture(autouse=True)
def isolated_settings(tmp_path, monkeypatch):
    """Fresh env-driven singletons writing under tmp_path"""
    monkeypatch.setenv("DMPP_OUT_DIR", str(tmp_path / "outputs"))
    monkeypatch.delenv("DMPP_DT", raising=False)
    reset_runtime_settings()
    trajectory_store.trajectory_store = None
    scenario_runner.scenario_runner = None
    yield
    reset_runtime_settings()
    trajectory_store.trajectory_store = None
    scenario_runner.scenario_runner = None


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def model_1d():
    return train_model(min_jerk_1d(0.0, 1.0, duration=2.0), new_basis(30, 1.5))


@pytest.fixture
def model_2d():
    return train_model(s_curve_2d(), new_basis(30, 1.5))


@pytest.fixture
def write_scenario(tmp_path):
    """Write a scenario mapping to YAML and return its path"""
    import yaml

    def _write(data, name="scenario.yaml"):
        path = tmp_path / name
        path.write_text(yaml.safe_dump(data), encoding="utf-8")
        return str(path)

    return _write
