import numpy as np
import pytest

from dpvp.data import build_dataset

H = 3600
DAY = 86400


@pytest.fixture
def fixture_rows():
    # r1=(u1,s1,{o1,o2},Morning), r2=(u1,s2,{o1},Noon), r3=(u2,s1,{o2},Morning)
    return [
        ("u1", "s1", [1, 2], 8 * H),
        ("u1", "s2", [1], 12 * H),
        ("u2", "s1", [2], 7 * H),
    ]


@pytest.fixture
def fixture_ds(fixture_rows):
    return build_dataset(fixture_rows)


def random_rows(rng, n_users=6, n_stores=4, n_foods=8, n_records=30, n_days=1, max_foods=3):
    rows = []
    for _ in range(n_records):
        k = int(rng.integers(1, max_foods + 1))
        foods = [int(f) for f in rng.integers(0, n_foods, size=k)]
        t = int(rng.integers(0, n_days * DAY))
        rows.append((f"u{rng.integers(n_users)}", f"s{rng.integers(n_stores)}", foods, t))
    return rows


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# pass/fail lines from tests/test_acceptance.py, echoed after the run
ACCEPTANCE_KEY = pytest.StashKey[list]()


@pytest.fixture
def acceptance(request):
    lines = request.config.stash.setdefault(ACCEPTANCE_KEY, [])

    def record(n, ok, detail):
        line = f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}"
        lines.append(line)
        print(line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(ACCEPTANCE_KEY, [])
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(lines, key=lambda x: int(x.split()[1].rstrip(":"))):
        terminalreporter.write_line(line)
