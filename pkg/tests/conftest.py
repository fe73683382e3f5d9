import numpy as np
import pytest

from hssnb.tensor import make_rng


@pytest.fixture
def rng():
    return make_rng(1234)


def central_diff(f, arrays, eps=1e-5):
    """Numeric gradient of scalar ``f()`` w.r.t. each array in ``arrays`` (perturbed in place)."""
    out = []
    for arr in arrays:
        g = np.zeros(arr.shape)
        flat = arr.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            fp = f()
            flat[i] = orig - eps
            fm = f()
            flat[i] = orig
            g.flat[i] = float((fp - fm) / (2 * eps))
        out.append(g)
    return out


def rel_err(a, n):
    a = np.asarray(a, dtype=np.float64)
    n = np.asarray(n, dtype=np.float64)
    return float((np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-8)).max(initial=0.0))


_ACCEPTANCE = pytest.StashKey[list]()


@pytest.fixture
def acceptance_log(request):
    """List shared across the session; each entry is one printed criterion line."""
    return request.config.stash.setdefault(_ACCEPTANCE, [])


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
