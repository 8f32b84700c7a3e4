import math

import numpy as np
import pytest


def within_sigma(est, target, sigma, k=3.0):
    return abs(est - target) <= k * sigma


def binomial_sigma(p, n):
    return math.sqrt(p * (1 - p) / n)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# acceptance bookkeeping: criterion -> {part: (ok, detail)}
ACCEPTANCE = {}


def record(criterion, part, ok, detail=""):
    ACCEPTANCE.setdefault(criterion, {})[part] = (bool(ok), detail)
    print(f"criterion {criterion} [{part}]: {'PASS' if ok else 'FAIL'} {detail}")
    return ok


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for c in sorted(ACCEPTANCE):
        parts = ACCEPTANCE[c]
        ok = all(v[0] for v in parts.values())
        detail = "; ".join(f"{p}: {'ok' if v[0] else 'failed'} {v[1]}".rstrip()
                           for p, v in parts.items())
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'} criterion {c:2d}  {detail}")
