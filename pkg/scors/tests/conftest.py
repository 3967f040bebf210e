import numpy as np
import pytest

from scors.objectives import make_noisy_quadratic, synthesize_logistic
from scors.settings import settings


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def quadratic3():
    """d=3 quadratic with eigenvalues in [0.75, 2] and unit noise."""
    return make_noisy_quadratic(3, (0.75, 2.0), 1.0, 200, seed=7)


@pytest.fixture
def noiseless_identity3():
    """d=3 quadratic with A = I and no noise."""
    return make_noisy_quadratic(3, (1.0, 1.0), 0.0, 50, seed=3)


@pytest.fixture
def logistic_small():
    return synthesize_logistic(300, 4, seed=11, refine=True)


@pytest.fixture(autouse=True)
def isolated_output_dir(tmp_path, monkeypatch):
    monkeypatch.setattr(settings, "OUTPUT_DIR", str(tmp_path / "runs"))
    return tmp_path / "runs"


def random_spd(rng, d, lo=0.5, hi=2.0):
    basis, _ = np.linalg.qr(rng.standard_normal((d, d)))
    eigenvalues = rng.uniform(lo, hi, size=d)
    m = (basis * eigenvalues) @ basis.T
    return 0.5 * (m + m.T)


def random_psd(rng, d):
    b = rng.standard_normal((d, d + 1))
    m = b @ b.T
    return 0.5 * (m + m.T)
