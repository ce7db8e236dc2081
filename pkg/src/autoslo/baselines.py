"""Comparison scalers: a CPU-utilization autoscaler and random search."""

from __future__ import annotations

import math
import random
from collections import deque
from dataclasses import dataclass

import numpy as np

from .planner import GpConfig, PlanningError, PodAllocation, fitness
from .simcluster import Cluster, MetricsSnapshot
from .slo import SloSpec


@dataclass(frozen=True)
class HpaConfig:
    target: float = 0.80
    sync_s: float = 15.0
    stabilization_s: float = 300.0

    def __post_init__(self):
        if not 0.0 < self.target <= 1.0:
            raise ValueError(f"cpu target must lie in (0, 1], got {self.target}")
        if self.sync_s <= 0 or self.stabilization_s < 0:
            raise ValueError("sync period must be positive and the window non-negative")


def hpa_desired(current: int, utilization: float, target: float) -> int:
    """Proportional rule ``ceil(current * utilization / target)``.

    The small slack absorbs floating error so that a utilization exactly at
    target maps back onto ``current``.
    """
    return int(math.ceil(current * utilization / target - 1e-9))


class Hpa:
    """Per-service utilization scaler with a scale-down stabilization window.

    Scale-ups apply at once. A scale-down goes to the highest recommendation
    seen during the window (both ends included), so it only happens after
    load has stayed low for the whole window.
    """

    def __init__(self, cfg: HpaConfig, bounds: dict[str, tuple[int, int]]):
        self.cfg = cfg
        self.bounds = dict(bounds)
        self.history: dict[str, deque] = {name: deque() for name in bounds}

    def step(self, t: float, snapshot: MetricsSnapshot, targets: dict[str, int]) -> dict[str, int]:
        """Return the new replica target for every service that should change."""
        out = {}
        for name, (lo, hi) in self.bounds.items():
            s = snapshot.service(name)
            current = targets[name]
            base = s.replicas if s.replicas else current
            desired = min(hi, max(lo, hpa_desired(base, s.cpu_utilization, self.cfg.target)))
            hist = self.history[name]
            hist.append((t, desired))
            while hist and hist[0][0] < t - self.cfg.stabilization_s - 1e-9:
                hist.popleft()
            if desired > current:
                out[name] = desired
            else:
                stable = max(d for _, d in hist)
                if stable < current:
                    out[name] = stable
        return out


def hpa_step(cluster: Cluster, hpa: Hpa, window: float | None = None) -> dict[str, int]:
    """Take a snapshot of ``cluster``, run one HPA sync and issue its requests."""
    snap = cluster.snapshot(window or hpa.cfg.sync_s)
    targets = {n: cluster.replicas(n) + cluster.pending(n) for n in hpa.bounds}
    changes = hpa.step(cluster.now, snap, targets)
    for name, n in changes.items():
        cluster.request_scale(name, n)
    return changes


def random_search(slo: SloSpec, cfg: GpConfig, metrics: MetricsSnapshot, surrogate,
                  rng: random.Random, bottlenecks=None) -> tuple[PodAllocation, float]:
    """Best of ``population_size * generations`` uniformly drawn allocations."""
    names = list(bottlenecks if bottlenecks is not None else surrogate.bottlenecks)
    budget = cfg.population_size * cfg.generations
    allocs = [tuple(rng.randint(cfg.pod_min, cfg.pod_max) for _ in names) for _ in range(budget)]
    # repeated draws share one prediction: the snapshot is fixed
    unique = list(dict.fromkeys(allocs))
    try:
        preds = np.asarray(surrogate.predict_many(metrics, unique, names), dtype=float)
    except Exception as exc:
        raise PlanningError(f"surrogate prediction failed: {exc}") from exc
    if not np.isfinite(preds).all():
        raise PlanningError("surrogate returned non-finite predictions")
    predicted = dict(zip(unique, preds))
    best, best_fit = None, math.inf
    for counts in allocs:
        alloc = PodAllocation(counts)
        f = fitness(float(predicted[counts]), slo, alloc, cfg)
        if f < best_fit:
            best, best_fit = alloc, f
    return best, best_fit


def random_plan(slo: SloSpec, cfg: GpConfig, metrics: MetricsSnapshot, surrogate,
                rng: random.Random, bottlenecks=None) -> PodAllocation:
    return random_search(slo, cfg, metrics, surrogate, rng, bottlenecks)[0]
