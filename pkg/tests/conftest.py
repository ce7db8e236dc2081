import numpy as np
import pytest

from autoslo.simcluster import MetricsSnapshot, ServiceMetrics


def make_snapshot(qps=100.0, services=None, latency=250.0, success=1.0):
    """Hand-built snapshot; ``services`` maps name -> (replicas, cpu_demand)."""
    services = services or {"a": (2, 1.0), "b": (2, 1.0)}
    svcs = []
    for name, (replicas, demand) in services.items():
        cpu = min(1.0, demand / replicas)
        svcs.append(ServiceMetrics(name, cpu, 0.05 * replicas, replicas, demand, cpu / 0.5, 0))
    return MetricsSnapshot(0.0, 15.0, qps, tuple(svcs), latency, success,
                           int(qps * 15), int(qps * 15), 0, int(qps * 15), int(qps * 15), 0, 0)


class FuncSurrogate:
    """Frozen deterministic surrogate backed by a closed-form function.

    ``fn(snapshot, counts) -> predicted SLO value``. Counts every
    allocation it is asked about.
    """

    def __init__(self, bottlenecks, fn):
        self.bottlenecks = list(bottlenecks)
        self.fn = fn
        self.calls = 0

    def predict_many(self, snap, allocations, bottlenecks=None):
        self.calls += len(allocations)
        return np.array([self.fn(snap, tuple(c)) for c in allocations], dtype=float)


def queue_latency(demands, base=200.0):
    """Latency-like landscape: each service adds a term that explodes near saturation."""
    def fn(snap, counts):
        total = base
        for d, n in zip(demands, counts):
            rho = d / n
            total += 1000.0 if rho >= 1 else 60.0 * rho / (1 - rho)
        return total
    return fn


@pytest.fixture
def snapshot():
    return make_snapshot()


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
