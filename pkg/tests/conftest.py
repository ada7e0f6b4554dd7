import numpy as np
import pytest

from twoway_cvqkd.gaussian import beam_splitter


def random_symplectic(rng, n, depth=6, squeeze=1.0):
    """Product of random beam splitters, single-mode squeezers and phase rotations."""
    S = np.eye(2 * n)
    for _ in range(depth):
        if n > 1:
            i, j = rng.choice(n, 2, replace=False)
            S = beam_splitter(rng.uniform(), i, j, n) @ S
        m = rng.integers(n)
        r = rng.uniform(-squeeze, squeeze)
        sq = np.eye(2 * n)
        sq[2 * m, 2 * m], sq[2 * m + 1, 2 * m + 1] = np.exp(-r), np.exp(r)
        S = sq @ S
        m = rng.integers(n)
        th = rng.uniform(0, 2 * np.pi)
        rot = np.eye(2 * n)
        rot[2 * m : 2 * m + 2, 2 * m : 2 * m + 2] = [[np.cos(th), np.sin(th)], [-np.sin(th), np.cos(th)]]
        S = rot @ S
    return S


def random_physical_cm(rng, n=4, lo=1.0, hi=5.0, squeeze=1.0):
    """Thermal state with spectrum drawn from [lo, hi] dressed by a random symplectic."""
    lam = rng.uniform(lo, hi, n)
    S = random_symplectic(rng, n, squeeze=squeeze)
    return S @ np.diag(np.repeat(lam, 2)) @ S.T, np.sort(lam)[::-1]


BASELINE = dict(V=100.0, V_A=100.0, T_A=0.8, beta=0.99, eps=0.2)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
