"""Discrete-event stand-in for a Kubernetes-hosted microservice chain.

Requests enter at the first service of the chain and visit every service in
order. Each service runs a set of replicas; a replica serves up to
``concurrency`` requests at once and buffers up to ``queue_capacity`` more
in FIFO order. A request is routed to the least-loaded replica and fails
outright when every replica's buffer is full.

All randomness is drawn at arrival time from two dedicated streams (arrival
gaps and per-hop service times), so two clusters fed the same seed and plan
see exactly the same requests regardless of how they are scaled.
"""

from __future__ import annotations

import heapq
import math
import random
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Sequence

EXPONENTIAL, DETERMINISTIC = "exponential", "deterministic"
POISSON, PERIODIC = "poisson", "periodic"

_ARRIVAL, _DEPART, _READY = 0, 1, 2


class SimulationError(RuntimeError):
    pass


@dataclass(frozen=True)
class ServiceSpec:
    """Static description of one microservice.

    ``cpu_request`` is the replica's CPU request as a share of the CPU it can
    actually burn; utilization-driven autoscalers measure usage against it.
    """

    name: str
    service_time_ms: float
    queue_capacity: int = 50
    concurrency: int = 1
    cpu_per_request: float | None = None
    cpu_request: float = 1.0
    memory_per_replica: float = 0.05
    pod_min: int = 1
    pod_max: int = 10
    provisioning_delay_s: float = 10.0
    service_time_dist: str = EXPONENTIAL

    def __post_init__(self):
        if self.service_time_ms <= 0 or self.concurrency < 1 or self.queue_capacity < 0:
            raise ValueError(f"service {self.name!r}: non-positive timing or capacity")
        if not 1 <= self.pod_min <= self.pod_max:
            raise ValueError(f"service {self.name!r}: bad pod bounds [{self.pod_min}, {self.pod_max}]")
        if self.provisioning_delay_s < 0 or self.memory_per_replica <= 0 or self.cpu_request <= 0:
            raise ValueError(f"service {self.name!r}: bad delay, memory or cpu request")
        if self.service_time_dist not in (EXPONENTIAL, DETERMINISTIC):
            raise ValueError(f"unknown service time distribution {self.service_time_dist!r}")

    @property
    def cpu_cost(self) -> float:
        """CPU share of one replica used by one in-service request."""
        if self.cpu_per_request is None:
            return 1.0 / self.concurrency
        return self.cpu_per_request


@dataclass(frozen=True)
class Phase:
    duration_s: float
    rate: float
    process: str = POISSON

    def __post_init__(self):
        if self.duration_s <= 0 or self.rate < 0:
            raise ValueError(f"bad phase {self}")
        if self.process not in (POISSON, PERIODIC):
            raise ValueError(f"unknown arrival process {self.process!r}")


@dataclass(frozen=True)
class WorkloadPlan:
    """Piecewise-constant open-loop arrival schedule. Nothing arrives after the last phase."""

    phases: tuple[Phase, ...]

    def __post_init__(self):
        object.__setattr__(self, "phases", tuple(self.phases))
        if not self.phases:
            raise ValueError("workload plan has no phases")

    @property
    def duration(self) -> float:
        return sum(p.duration_s for p in self.phases)

    @classmethod
    def alternating(cls, normal_rate: float, high_rate: float, phase_s: float = 300.0,
                    total_s: float = 3600.0) -> "WorkloadPlan":
        phases = []
        t, high = 0.0, False
        while t < total_s - 1e-9:
            d = min(phase_s, total_s - t)
            phases.append(Phase(d, high_rate if high else normal_rate))
            t += d
            high = not high
        return cls(tuple(phases))

    def boundaries(self) -> list[tuple[float, float, Phase]]:
        out, t = [], 0.0
        for p in self.phases:
            out.append((t, t + p.duration_s, p))
            t += p.duration_s
        return out

    def rate_at(self, t: float) -> float:
        for start, end, p in self.boundaries():
            if start <= t < end:
                return p.rate
        return 0.0


@dataclass(frozen=True)
class ServiceMetrics:
    name: str
    cpu: float
    mem: float
    replicas: int
    cpu_demand: float
    cpu_utilization: float
    failures: int


@dataclass(frozen=True)
class MetricsSnapshot:
    """Operational and SLO metrics over the window ``[start, end)``.

    ``cpu`` is the busy share of replica capacity (capped at 1);
    ``cpu_demand`` is the work offered to the service in replica units
    (uncapped); ``cpu_utilization`` is per-replica usage relative to the
    CPU request, as a utilization-based autoscaler would read it.
    """

    start: float
    end: float
    qps: float
    services: tuple[ServiceMetrics, ...]
    latency_p90_ms: float
    success_rate: float
    arrivals: int
    completions: int
    failures: int
    total_arrivals: int
    total_completions: int
    total_failures: int
    in_flight: int

    def service(self, name: str) -> ServiceMetrics:
        for s in self.services:
            if s.name == name:
                return s
        raise KeyError(name)

    def value(self, metric: str) -> float:
        if metric == "latency_p90_ms":
            return self.latency_p90_ms
        if metric == "success_rate":
            return self.success_rate
        raise KeyError(metric)

    @property
    def total_replicas(self) -> int:
        return sum(s.replicas for s in self.services)


def nearest_rank(values: Sequence[float], q: float) -> float:
    """Nearest-rank percentile: the ceil(q*n)-th smallest value."""
    if not values:
        raise ValueError("empty sample")
    if not 0 < q <= 1:
        raise ValueError(f"q must be in (0, 1], got {q}")
    ordered = sorted(values)
    k = max(1, math.ceil(q * len(ordered) - 1e-12))
    return ordered[k - 1]


class _Replica:
    __slots__ = ("id", "busy", "queue", "retiring")

    def __init__(self, rid: int):
        self.id = rid
        self.busy = 0
        self.queue = deque()
        self.retiring = False


class _Service:
    __slots__ = ("spec", "index", "active", "retiring", "pending", "busy",
                 "area_busy", "area_replicas", "last_t", "next_id")

    def __init__(self, spec: ServiceSpec, index: int, replicas: int):
        self.spec = spec
        self.index = index
        self.active = [_Replica(i) for i in range(replicas)]
        self.retiring: list[_Replica] = []
        self.pending: list[list] = []  # [ready_time, cancelled]
        self.busy = 0
        self.area_busy = 0.0
        self.area_replicas = 0.0
        self.last_t = 0.0
        self.next_id = replicas

    def flush(self, now: float):
        dt = now - self.last_t
        if dt > 0:
            self.area_busy += self.busy * dt
            self.area_replicas += len(self.active) * dt
            self.last_t = now


class _Bucket:
    __slots__ = ("latencies", "failures", "svc_failures", "arrivals", "work")

    def __init__(self, n: int):
        self.latencies: list[float] = []
        self.failures = 0
        self.svc_failures = [0] * n
        self.arrivals = 0
        self.work = [0.0] * n


class Cluster:
    """Mutable simulation state: services, event queue, clock and metrics logs."""

    def __init__(self, services: Sequence[ServiceSpec], plan: WorkloadPlan, seed: int,
                 replicas: dict[str, int] | None = None):
        names = [s.name for s in services]
        if len(set(names)) != len(names) or not names:
            raise ValueError(f"service names must be unique and non-empty: {names}")
        replicas = replicas or {}
        self.specs = tuple(services)
        self.plan = plan
        self.seed = seed
        self.now = 0.0
        self._services = []
        for i, spec in enumerate(services):
            n = replicas.get(spec.name, spec.pod_min)
            if not spec.pod_min <= n <= spec.pod_max:
                raise ValueError(f"initial replicas for {spec.name!r} outside bounds")
            self._services.append(_Service(spec, i, n))
        self._index = {s.spec.name: s for s in self._services}
        self._arrival_rng = random.Random(f"{seed}:arrivals")
        self._service_rng = random.Random(f"{seed}:service")
        self._events: list = []
        self._seq = 0
        self._phases = plan.boundaries()
        self._last_arrival = 0.0
        self.total_arrivals = 0
        self.total_completions = 0
        self.total_failures = 0
        self._buckets: dict[int, _Bucket] = {}
        self._checkpoints: dict[int, tuple] = {0: self._cumulative()}
        self._next_tick = 1
        self._schedule_next_arrival()

    # -- public -----------------------------------------------------------

    @property
    def service_names(self) -> list[str]:
        return [s.spec.name for s in self._services]

    def replicas(self, name: str) -> int:
        return len(self._svc(name).active)

    def pending(self, name: str) -> int:
        return sum(1 for p in self._svc(name).pending if not p[1])

    @property
    def in_flight(self) -> int:
        return self.total_arrivals - self.total_completions - self.total_failures

    def advance(self, until: float) -> "Cluster":
        """Process every event with timestamp < ``until`` and move the clock there."""
        if until < self.now:
            raise SimulationError(f"cannot rewind clock from {self.now} to {until}")
        events = self._events
        pop = heapq.heappop
        while events and events[0][0] < until:
            t = events[0][0]
            if t >= self._next_tick:
                self._tick(t)
            _, _, kind, a, b = pop(events)
            self.now = t
            if kind == _DEPART:
                self._depart(a, b, t)
            elif kind == _ARRIVAL:
                self._arrive(b, t)
            else:
                self._ready(a, b, t)
        self._tick(until)
        self.now = until
        return self

    def request_scale(self, name: str, target: int) -> "Cluster":
        """Asynchronously move service ``name`` toward ``target`` replicas."""
        svc = self._svc(name)
        spec = svc.spec
        if not spec.pod_min <= target <= spec.pod_max:
            raise ValueError(f"target {target} outside [{spec.pod_min}, {spec.pod_max}] for {name!r}")
        now = self.now
        svc.flush(now)
        live_pending = [p for p in svc.pending if not p[1]]
        effective = len(svc.active) + len(live_pending)
        if target > effective:
            for _ in range(target - effective):
                entry = [now + spec.provisioning_delay_s, False]
                svc.pending.append(entry)
                self._push(entry[0], _READY, svc, entry)
        elif target < effective:
            surplus = effective - target
            for entry in sorted(live_pending, key=lambda p: -p[0]):
                if surplus == 0:
                    break
                entry[1] = True
                surplus -= 1
            svc.pending = [p for p in svc.pending if not p[1]]
            for _ in range(surplus):
                self._retire_one(svc)
        return self

    def snapshot(self, window: float) -> MetricsSnapshot:
        """Metrics over the last ``window`` seconds (both ends on whole seconds)."""
        end = self.now
        start = end - window
        if window <= 0 or start < 0:
            raise ValueError(f"window {window} does not fit in elapsed time {end}")
        t0, t1 = int(round(start)), int(round(end))
        if abs(t0 - start) > 1e-9 or abs(t1 - end) > 1e-9:
            raise ValueError("snapshot windows must start and end on whole seconds")
        c0 = self._checkpoints.get(t0)
        if c0 is None:
            raise ValueError(f"no metrics checkpoint at t={t0}")
        c1 = self._cumulative()
        n = len(self._services)
        latencies: list[float] = []
        failures = 0
        svc_failures = [0] * n
        arrivals = 0
        work = [0.0] * n
        for sec in range(t0, t1):
            b = self._buckets.get(sec)
            if b is None:
                continue
            latencies.extend(b.latencies)
            failures += b.failures
            arrivals += b.arrivals
            for i in range(n):
                svc_failures[i] += b.svc_failures[i]
                work[i] += b.work[i]
        services = []
        for i, svc in enumerate(self._services):
            spec = svc.spec
            busy = c1[i][0] - c0[i][0]
            rep_area = c1[i][1] - c0[i][1]
            usage = busy * spec.cpu_cost / rep_area if rep_area > 0 else 0.0
            cpu = min(1.0, usage)
            services.append(ServiceMetrics(
                name=spec.name,
                cpu=cpu,
                mem=min(1.0, len(svc.active) * spec.memory_per_replica),
                replicas=len(svc.active),
                cpu_demand=work[i] / (window * spec.concurrency),
                cpu_utilization=usage / spec.cpu_request,
                failures=svc_failures[i],
            ))
        completions = len(latencies)
        resolved = completions + failures
        return MetricsSnapshot(
            start=start,
            end=end,
            qps=arrivals / window,
            services=tuple(services),
            latency_p90_ms=nearest_rank(latencies, 0.9) * 1000.0 if latencies else 0.0,
            success_rate=completions / resolved if resolved else 1.0,
            arrivals=arrivals,
            completions=completions,
            failures=failures,
            total_arrivals=self.total_arrivals,
            total_completions=self.total_completions,
            total_failures=self.total_failures,
            in_flight=self.in_flight,
        )

    # -- internals --------------------------------------------------------

    def _svc(self, name: str) -> _Service:
        try:
            return self._index[name]
        except KeyError:
            raise KeyError(f"unknown service {name!r}") from None

    def _push(self, t: float, kind: int, a, b):
        self._seq += 1
        heapq.heappush(self._events, (t, self._seq, kind, a, b))

    def _cumulative(self) -> tuple:
        return tuple((s.area_busy, s.area_replicas) for s in self._services)

    def _tick(self, t: float):
        """Record integral checkpoints at every whole second up to ``t``."""
        while self._next_tick <= t:
            tick = self._next_tick
            for s in self._services:
                s.flush(tick)
            self._checkpoints[tick] = self._cumulative()
            self._next_tick += 1
        for s in self._services:
            s.flush(t)
        if len(self._checkpoints) > 7300:
            horizon = self._next_tick - 7200
            self._checkpoints = {k: v for k, v in self._checkpoints.items() if k >= horizon}
            self._buckets = {k: v for k, v in self._buckets.items() if k >= horizon}

    def _bucket(self, t: float) -> _Bucket:
        sec = int(t)
        b = self._buckets.get(sec)
        if b is None:
            b = self._buckets[sec] = _Bucket(len(self._services))
        return b

    def _next_arrival_time(self) -> float | None:
        t = self._last_arrival
        rng = self._arrival_rng
        for start, end, phase in self._phases:
            if t >= end:
                continue
            t = max(t, start)
            if phase.rate <= 0:
                t = end
                continue
            if phase.process == PERIODIC:
                k = math.floor((t - start) * phase.rate + 1e-9) + 1
                nxt = start + k / phase.rate
            else:
                nxt = t + rng.expovariate(phase.rate)
            if nxt < end:
                return nxt
            t = end
        return None

    def _schedule_next_arrival(self):
        t = self._next_arrival_time()
        if t is None:
            return
        self._last_arrival = t
        rng = self._service_rng
        times = []
        for s in self._services:
            mean = s.spec.service_time_ms / 1000.0
            if s.spec.service_time_dist == DETERMINISTIC:
                times.append(mean)
            else:
                times.append(rng.expovariate(1.0 / mean))
        self._push(t, _ARRIVAL, None, (t, tuple(times)))

    def _arrive(self, req, t: float):
        self.total_arrivals += 1
        b = self._bucket(t)
        b.arrivals += 1
        times = req[1]
        for i in range(len(times)):
            b.work[i] += times[i]
        self._dispatch(self._services[0], req, t)
        self._schedule_next_arrival()

    def _dispatch(self, svc: _Service, req, t: float):
        spec = svc.spec
        conc = spec.concurrency
        best = None
        best_load = conc + spec.queue_capacity
        for r in svc.active:
            load = r.busy + len(r.queue)
            if load < best_load:
                best, best_load = r, load
        if best is None:
            self.total_failures += 1
            b = self._bucket(t)
            b.failures += 1
            b.svc_failures[svc.index] += 1
            return
        if best.busy < conc:
            svc.flush(t)
            best.busy += 1
            svc.busy += 1
            self._push(t + req[1][svc.index], _DEPART, svc, (best, req))
        else:
            best.queue.append(req)

    def _depart(self, svc: _Service, payload, t: float):
        replica, req = payload
        if replica.queue:
            nxt = replica.queue.popleft()
            self._push(t + nxt[1][svc.index], _DEPART, svc, (replica, nxt))
        else:
            svc.flush(t)
            replica.busy -= 1
            svc.busy -= 1
            if replica.retiring and replica.busy == 0:
                svc.retiring.remove(replica)
        nxt_index = svc.index + 1
        if nxt_index < len(self._services):
            self._dispatch(self._services[nxt_index], req, t)
        else:
            self.total_completions += 1
            self._bucket(t).latencies.append(t - req[0])

    def _ready(self, svc: _Service, entry, t: float):
        if entry[1]:
            return
        svc.pending.remove(entry)
        svc.flush(t)
        svc.active.append(_Replica(svc.next_id))
        svc.next_id += 1

    def _retire_one(self, svc: _Service):
        if len(svc.active) <= 1:
            raise SimulationError(f"cannot retire the last replica of {svc.spec.name!r}")
        idle = [r for r in svc.active if r.busy == 0 and not r.queue]
        if idle:
            victim = idle[-1]
        else:
            victim = min(reversed(svc.active), key=lambda r: r.busy + len(r.queue))
        svc.active.remove(victim)
        if victim.busy or victim.queue:
            victim.retiring = True
            svc.retiring.append(victim)


def run_plan(services: Sequence[ServiceSpec], plan: WorkloadPlan, seed: int,
             window: float = 15.0, replicas: dict[str, int] | None = None) -> list[MetricsSnapshot]:
    """Run the whole plan with fixed replicas, one snapshot per window."""
    cluster = Cluster(services, plan, seed, replicas=replicas)
    snaps = []
    t = 0.0
    while t + window <= plan.duration + 1e-9:
        t += window
        cluster.advance(t)
        snaps.append(cluster.snapshot(window))
    return snaps


def scale_all(cluster: Cluster, targets: Iterable[tuple[str, int]]):
    for name, target in targets:
        if cluster.replicas(name) + cluster.pending(name) != target:
            cluster.request_scale(name, target)
