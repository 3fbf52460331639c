import numpy as np
import pytest
import scipy.sparse as sp

from sagif.graph import GraphBundle

ACCEPTANCE_LINES = []


def random_adjacency(n, p, rng, ensure_edge=True):
    upper = np.triu(rng.random((n, n)) < p, k=1)
    if ensure_edge and not upper.any() and n > 1:
        upper[0, 1] = True
    dense = (upper | upper.T).astype(float)
    return sp.csr_matrix(dense)


def random_bundle(n=12, d=5, classes=3, p=0.3, seed=0, nonneg=False):
    rng = np.random.default_rng(seed)
    adj = random_adjacency(n, p, rng)
    x = rng.random((n, d)) if nonneg else rng.standard_normal((n, d))
    y = np.arange(n) % classes
    perm = rng.permutation(n)
    n_tr = max(2, n // 4)
    n_va = max(1, n // 6)
    return GraphBundle(adj, x, y, np.sort(perm[:n_tr]), np.sort(perm[n_tr:n_tr + n_va]),
                       np.sort(perm[n_tr + n_va:]))


def central_difference(fn, arr, h=1e-5):
    """Numerical gradient of scalar ``fn()`` w.r.t. every entry of ``arr`` (mutated in place)."""
    grad = np.zeros_like(arr)
    it = np.nditer(arr, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        old = arr[idx]
        arr[idx] = old + h
        up = fn()
        arr[idx] = old - h
        down = fn()
        arr[idx] = old
        grad[idx] = (up - down) / (2 * h)
    return grad


def assert_grad_close(analytic, numeric, rtol=1e-4, atol=1e-8):
    err = np.abs(analytic - numeric)
    bound = atol + rtol * np.maximum(np.abs(analytic), np.abs(numeric))
    assert np.all(err <= bound), f"max violation {np.max(err - bound):.3e}"


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def acceptance_log():
    return ACCEPTANCE_LINES


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
