import numpy as np
import pytest

from tactic import HeadDump


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_head(rng, n, d, m=1, scale=1.0):
    return HeadDump(
        scale * rng.standard_normal((n, d)),
        rng.standard_normal((n, d)),
        scale * rng.standard_normal((m, d)),
    )


def head_from_logits(logits, values=None):
    """Head whose query-0 scaled logits equal ``logits`` (up to f32 rounding).

    Uses d = 4 and q = (2, 0, 0, 0) so that q.k / sqrt(d) == k[0].
    """
    z = np.asarray(logits, dtype=np.float64)
    n = z.shape[0]
    keys = np.zeros((n, 4))
    keys[:, 0] = z
    if values is None:
        values = np.ones((n, 4))
    return HeadDump(keys, values, np.array([[2.0, 0.0, 0.0, 0.0]]))


# --------------------------------------------------------------------------
# acceptance report: one pass/fail line per criterion, printed at the end

SUITE_LIMIT_S = 300.0
_ACCEPTANCE = {}
_START = {}


def pytest_sessionstart(session):
    import time

    _START["t"] = time.perf_counter()


@pytest.fixture
def acceptance():
    def record(num, ok, detail):
        _ACCEPTANCE[num] = (bool(ok), detail)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    import time

    if not _ACCEPTANCE:
        return
    elapsed = time.perf_counter() - _START.get("t", time.perf_counter())
    tr = terminalreporter
    tr.section("acceptance criteria")
    for num in sorted(_ACCEPTANCE):
        ok, detail = _ACCEPTANCE[num]
        if num == 9:
            fast = elapsed < SUITE_LIMIT_S
            detail += f"; suite runtime {elapsed:.0f} s (limit {SUITE_LIMIT_S:.0f} s)"
            ok = ok and fast
        tr.write_line(f"criterion {num}: {'PASS' if ok else 'FAIL'}  {detail}")
