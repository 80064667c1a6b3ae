"""Shared fixtures and helpers for the test suite."""
from __future__ import annotations

import subprocess
import sys

import numpy as np
import pytest


def run_cli(*args: str, cwd=None) -> subprocess.CompletedProcess:
    """Invoke the command-line interface in a subprocess."""
    return subprocess.run([sys.executable, "-m", "modalforce", *map(str, args)],
                          capture_output=True, text=True, cwd=cwd)


def orthonormal_columns(n: int, k: int, rng: np.random.Generator,
                        complex_valued: bool = True) -> np.ndarray:
    """Random matrix with orthonormal columns via QR."""
    a = rng.normal(size=(n, k))
    if complex_valued:
        a = a + 1j * rng.normal(size=(n, k))
    q, _ = np.linalg.qr(a)
    return q[:, :k]


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(12345)
