import logging

import numpy as np
import pytest

from atomics.measures import make_atomic


@pytest.fixture(autouse=True)
def isolated_workspace(tmp_path, monkeypatch):
    """Logs and CLI output land in a per-test directory."""
    monkeypatch.setenv("ATOMICS_LOG_DIR", str(tmp_path / "logs"))
    monkeypatch.delenv("LOG_CFG", raising=False)
    monkeypatch.delenv("ATOMICS_LOG_LEVEL", raising=False)
    monkeypatch.chdir(tmp_path)
    yield tmp_path
    # the CLI reconfigures the root logger on every run
    root = logging.getLogger()
    for handler in list(root.handlers):
        if not type(handler).__module__.startswith("_pytest"):
            root.removeHandler(handler)
            handler.close()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def three_atoms():
    """The (0.5, 0.3, 0.2) measure on the line."""
    return make_atomic([0.5, 0.3, 0.2], [[0.0], [1.0], [2.5]])


def random_measure(rng, n: int, d: int, scale: float = 1.0):
    return make_atomic(rng.dirichlet(np.ones(n)), scale * rng.normal(size=(n, d)))


def moved(mu, i: int, v, s: float):
    """mu with atom i shifted by s * v; weights keep their order."""
    loc = np.array(mu.locations)
    loc[i] = loc[i] + s * np.asarray(v, dtype=float)
    return make_atomic(mu.a, loc)


def directional_fd(functional, mu, i: int, v, h: float = 1e-6) -> float:
    """Central difference of functional(mu) along a single-atom move."""
    return (functional(moved(mu, i, v, h)) - functional(moved(mu, i, v, -h))) / (2.0 * h)
