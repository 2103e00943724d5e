import numpy as np
import pytest

from fedloge import config
from fedloge.pipeline import run

BENCH = """
[experiment]
method = {method}
seed = {seed}
eval_every = 0
[dataset]
n_classes = 10
feature_dim = 20
n_max = 500
imbalance_factor = 100
[partition]
n_clients = 8
alpha = 0.5
[federation]
rounds = 200
"""


@pytest.fixture(scope="session")
def bench():
    """Cached full runs of the desk-scale long-tailed benchmark, keyed by (method, seed)."""
    cache = {}

    def get(method, seed):
        key = (method, seed)
        if key not in cache:
            cfg, _ = config.loads(BENCH.format(method=method, seed=seed))
            cache[key] = run(cfg)
        return cache[key]

    return get


@pytest.fixture
def rng_np():
    return np.random.default_rng(12345)


_VERDICTS = pytest.StashKey[list]()


@pytest.fixture
def verdict(request):
    """``verdict(criterion, ok, detail)`` prints one PASS/FAIL line and returns ``ok``."""
    lines = request.config.stash.setdefault(_VERDICTS, [])

    def record(criterion, ok, detail=""):
        line = f"[{'PASS' if ok else 'FAIL'}] criterion {criterion}: {detail}"
        print(line)
        lines.append(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_VERDICTS, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
