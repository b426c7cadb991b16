"""
Shared fixtures. app/ goes on sys.path so tests import utils the way the app does.
"""
import sys
from pathlib import Path

import numpy as np
import pytest

app_dir = Path(__file__).resolve().parent.parent / "app"
sys.path.append(str(app_dir))

from utils.config import get_settings  # noqa: E402
from utils.harness import derive_seed, gen_matrix, gen_signal  # noqa: E402
from utils.core import matvec  # noqa: E402
from utils.schemas import DesignMatrix, SignalSpec  # noqa: E402


@pytest.fixture(autouse=True)
def isolated_settings(tmp_path, monkeypatch):
    """Point results and the trial store at a temporary directory"""
    monkeypatch.setenv("GMP_RESULTS_DIR", str(tmp_path / "results"))
    monkeypatch.setenv("GMP_STATE_DIR", str(tmp_path / "state"))
    monkeypatch.delenv("GMP_WORKERS", raising=False)
    monkeypatch.delenv("GMP_GRAM_CAP", raising=False)
    monkeypatch.delenv("GMP_RIP_CAP", raising=False)
    get_settings.cache_clear()
    yield
    get_settings.cache_clear()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def identity4():
    return DesignMatrix(np.eye(4))


def make_instance(n: int, m: int, k: int, seed: int, kind: str = "gaussian"):
    """Gaussian A with a k-sparse signal and noiseless b"""
    A = gen_matrix(n, m, seed)
    x = gen_signal(SignalSpec(kind, k, m, derive_seed(seed, kind, k, 0)))
    return A, x, matvec(A, x)


@pytest.fixture
def small_instance():
    return make_instance(32, 128, 4, seed=7)
