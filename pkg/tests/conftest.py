import numpy as np
import pytest

from dgunlearn.ctdg import EventLog
from dgunlearn.perf import tune_malloc

tune_malloc()

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def random_log(n_events: int, num_nodes: int, seed: int = 0, feat_dim: int = 0,
               integer_times: bool = True) -> EventLog:
    rng = np.random.default_rng(seed)
    src = rng.integers(0, num_nodes, size=n_events)
    dst = (src + rng.integers(1, num_nodes, size=n_events)) % num_nodes
    if integer_times:
        time = np.sort(rng.integers(0, max(1, n_events // 2), size=n_events)).astype(float)
    else:
        time = np.sort(rng.uniform(0, 100, size=n_events))
    feat = rng.normal(size=(n_events, feat_dim)) if feat_dim else None
    return EventLog(src, dst, time, feat, num_nodes=num_nodes, feat_dim=feat_dim)


@pytest.fixture
def small_log() -> EventLog:
    return random_log(60, 8, seed=1, feat_dim=2)


PLANTED_SEEDS = range(5)


def planted_run(seed: int):
    """One planted-graph comparison with every seed set to ``seed``."""
    from dgunlearn.baselines import FinetuneConfig
    from dgunlearn.experiment import RequestConfig, Seeds, compare_methods, future_request, prepare
    from dgunlearn.model import BackboneConfig
    from dgunlearn.synth import planted_triadic
    from dgunlearn.unlearner import UnlearnConfig

    seeds = Seeds(seed, seed, seed, seed)
    request = RequestConfig(m=20, depth=1)
    ucfg = UnlearnConfig(seed=seed)
    prep = prepare(planted_triadic(num_nodes=50, num_events=2000, seed=seed),
                   BackboneConfig(seed=seed), request, seeds)
    comp = compare_methods(prep, ucfg, FinetuneConfig(seed=seed), seeds)
    comp.future = future_request(prep, comp.results["gradtrans"].phi, ucfg, request, seeds)
    return comp


@pytest.fixture(scope="session")
def planted_runs():
    """Planted-graph comparisons for seeds 0-4 (a few minutes on one core)."""
    return [planted_run(s) for s in PLANTED_SEEDS]
