import numpy as np
import pytest

from attnkern.attention import FeatureMap
from attnkern.toy import QKDump


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_fm(rng, M, d, spread=0.5):
    return FeatureMap(rng.standard_normal((M, d)), spread * rng.standard_normal(M))


def small_dump(rng, S=2, H=2, d=4, T=3, L=5, scale=0.5):
    q = scale * rng.standard_normal((S, H, T * L, d))
    k = scale * rng.standard_normal((S, H, T * L, d))
    return QKDump(q.astype(np.float32), k.astype(np.float32), T, L)


ACCEPTANCE_LINES = []


def record(number, ok, detail):
    line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
