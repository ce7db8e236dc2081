"""Self-adaptation loop: monitor, check the SLO, plan, update.

The loop runs against the simulated cluster. Every update period it takes a
metrics snapshot and classifies it; a violated or over-provisioned SLO
triggers at most one planning round per control cycle, and the most recent
plan is applied at every update.
"""

from __future__ import annotations

import csv
import io
import random
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from . import expr as ex
from .baselines import Hpa, random_search
from .config import ExperimentConfig
from .planner import GpConfig, Individual, PlanningError, append_best, decode, gpplan
from .simcluster import Cluster, MetricsSnapshot
from .slo import SloSpec, Status, check_slo
from .surrogate import feature_names

SCALERS = ("autoslo", "ran", "hpa")


@dataclass(frozen=True)
class ControllerConfig:
    slo: SloSpec
    gp: GpConfig
    bottlenecks: tuple[str, ...]
    cycle_s: float = 60.0
    update_s: float = 15.0

    def __post_init__(self):
        if not 0 < self.update_s <= self.cycle_s:
            raise ValueError("need 0 < update period <= cycle period")
        if not self.bottlenecks:
            raise ValueError("no bottleneck services configured")


@dataclass(frozen=True)
class Event:
    t: float
    kind: str
    detail: str = ""


@dataclass
class ControllerState:
    best_sol: Individual | None = None
    held: tuple[int, ...] | None = None
    last_snapshot: MetricsSnapshot | None = None
    last_status: Status | None = None
    planned_cycle: int = -1
    events: list[Event] = field(default_factory=list)
    plan_seconds: list[float] = field(default_factory=list)

    def log(self, t, kind, detail=""):
        self.events.append(Event(t, kind, detail))


def _targets(cluster: Cluster, names) -> dict[str, int]:
    return {n: cluster.replicas(n) + cluster.pending(n) for n in names}


def _apply(state: ControllerState, cluster: Cluster, names, counts, t):
    current = _targets(cluster, names)
    for name, n in zip(names, counts):
        if n != current[name]:
            cluster.request_scale(name, n)
            state.log(t, "scale", f"{name} {current[name]}->{n}")


def update(state: ControllerState, cluster: Cluster, cfg: ControllerConfig, surrogate,
           rng: random.Random, mode: str = "autoslo", best_log=None) -> Status:
    """One update period: snapshot, SLO check, maybe plan, then apply the plan.

    ``mode`` is ``"autoslo"`` (formulas re-applied every period) or ``"ran"``
    (random search; the planned pod counts are held until the next round).
    """
    t = cluster.now
    snap = cluster.snapshot(cfg.update_s)
    status = check_slo(snap, cfg.slo)
    state.last_snapshot, state.last_status = snap, status
    if status == Status.VIOLATED:
        state.log(t, "violation", f"{cfg.slo.metric}={snap.value(cfg.slo.metric):.6g}")
    cycle = int((t - 1e-9) // cfg.cycle_s)
    names = list(cfg.bottlenecks)
    if status != Status.OK and state.planned_cycle != cycle:
        state.planned_cycle = cycle
        started = time.perf_counter()
        try:
            if mode == "autoslo":
                best = gpplan(cfg.slo, cfg.gp, snap, state.best_sol, surrogate, rng, names)
                state.best_sol = best
                state.log(t, "plan", f"{status.value} fitness={best.fitness:.6g} "
                          + " | ".join(best.texts()))
                if best_log is not None:
                    append_best(best_log, t, best, names)
            else:
                alloc, fit = random_search(cfg.slo, cfg.gp, snap, surrogate, rng, names)
                state.held = alloc.counts
                state.log(t, "plan", f"{status.value} fitness={fit:.6g} counts={list(alloc.counts)}")
        except (PlanningError, ex.ExprError) as exc:
            state.log(t, "plan_failed", str(exc))
        state.plan_seconds.append(time.perf_counter() - started)
    if mode == "autoslo" and state.best_sol is not None:
        _apply(state, cluster, names, decode(state.best_sol, snap, cfg.gp, names).counts, t)
    elif mode == "ran" and state.held is not None:
        _apply(state, cluster, names, state.held, t)
    return status


def run_cycle(state: ControllerState, cluster: Cluster, cfg: ControllerConfig, surrogate,
              rng: random.Random, mode: str = "autoslo", on_update=None) -> ControllerState:
    """Advance ``cluster`` to the next cycle boundary, updating every period."""
    end = (int(cluster.now // cfg.cycle_s) + 1) * cfg.cycle_s
    t = cluster.now
    while t + cfg.update_s <= end + 1e-9:
        t += cfg.update_s
        cluster.advance(t)
        status = update(state, cluster, cfg, surrogate, rng, mode)
        if on_update is not None:
            on_update(state, status)
    return state


# -- experiments --------------------------------------------------------------------------

@dataclass
class RunResult:
    scaler: str
    seed: int
    violations: int
    mean_pods: float
    plans: int
    trace: list[dict]
    events: list[Event]
    plan_seconds: list[float]

    def episodes(self) -> list[tuple[float, float, int]]:
        return violation_episodes([(r["time_s"], r["status"]) for r in self.trace])


def violation_episodes(rows: Sequence[tuple[float, str]]) -> list[tuple[float, float, int]]:
    """(first, last, count) for each run of consecutive violating snapshots."""
    out = []
    start = last = None
    count = 0
    for t, status in rows:
        if status == Status.VIOLATED.value:
            if start is None:
                start, count = t, 0
            last = t
            count += 1
        elif start is not None:
            out.append((start, last, count))
            start = None
    if start is not None:
        out.append((start, last, count))
    return out


def trace_columns(cfg: ExperimentConfig) -> list[str]:
    cols = ["time_s"] + list(feature_names(cfg.bottlenecks)) + ["slo_value", "status"]
    cols += [f"replicas_{s.name}" for s in cfg.services] + ["total_pods"]
    return cols


def _trace_row(t, snap: MetricsSnapshot, status: Status, cfg: ExperimentConfig) -> dict:
    row = {"time_s": t}
    svcs = [snap.service(b) for b in cfg.bottlenecks]
    for b, s in zip(cfg.bottlenecks, svcs):
        row[f"cpu_{b}"] = s.cpu
    for b, s in zip(cfg.bottlenecks, svcs):
        row[f"mem_{b}"] = s.mem
    row["qps"] = snap.qps
    for b, s in zip(cfg.bottlenecks, svcs):
        row[f"pods_{b}"] = s.replicas
    row["slo_value"] = snap.value(cfg.slo.metric)
    row["status"] = status.value
    for s in snap.services:
        row[f"replicas_{s.name}"] = s.replicas
    row["total_pods"] = snap.total_replicas
    return row


def _fmt(v) -> str:
    if isinstance(v, float):
        return f"{v:.6f}"
    return str(v)


def trace_csv(rows: list[dict], columns: Sequence[str]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_fmt(r[c]) for c in columns])
    return buf.getvalue()


def controller_config(cfg: ExperimentConfig) -> ControllerConfig:
    return ControllerConfig(cfg.slo, cfg.gp, cfg.bottlenecks, cfg.cycle_s, cfg.update_s)


def run_single(cfg: ExperimentConfig, scaler: str, seed: int, surrogate=None,
               best_log=None) -> RunResult:
    """One seeded run of ``scaler`` over the configured workload."""
    if scaler not in SCALERS:
        raise ValueError(f"unknown scaler {scaler!r}; choose from {SCALERS}")
    if scaler != "hpa" and surrogate is None:
        raise ValueError(f"scaler {scaler!r} needs a surrogate model")
    if scaler != "hpa" and list(surrogate.bottlenecks) != list(cfg.bottlenecks):
        raise ValueError(f"surrogate was trained for {surrogate.bottlenecks}, "
                         f"config names {list(cfg.bottlenecks)}")
    cluster = Cluster(cfg.services, cfg.workload, seed, cfg.initial_replicas)
    ccfg = controller_config(cfg)
    state = ControllerState()
    rng = random.Random(f"{seed}:planner")
    hpa = Hpa(cfg.hpa, cfg.bounds()) if scaler == "hpa" else None
    step = cfg.hpa.sync_s if scaler == "hpa" else cfg.update_s
    rows = []
    t = 0.0
    duration = cfg.workload.duration
    while t + step <= duration + 1e-9:
        t += step
        cluster.advance(t)
        if hpa is not None:
            snap = cluster.snapshot(step)
            status = check_slo(snap, cfg.slo)
            if status == Status.VIOLATED:
                state.log(t, "violation", f"{cfg.slo.metric}={snap.value(cfg.slo.metric):.6g}")
            targets = _targets(cluster, hpa.bounds)
            for name, n in hpa.step(t, snap, targets).items():
                cluster.request_scale(name, n)
                state.log(t, "scale", f"{name} {targets[name]}->{n}")
        else:
            status = update(state, cluster, ccfg, surrogate, rng, scaler, best_log)
            snap = state.last_snapshot
        rows.append(_trace_row(t, snap, status, cfg))
    violations = sum(1 for r in rows if r["status"] == Status.VIOLATED.value)
    mean_pods = sum(r["total_pods"] for r in rows) / len(rows) if rows else 0.0
    plans = sum(1 for e in state.events if e.kind == "plan")
    return RunResult(scaler, seed, violations, mean_pods, plans, rows, state.events, state.plan_seconds)


SUMMARY_COLUMNS = ("case", "scaler", "seed", "violations", "mean_pods", "plans")


@dataclass
class ExperimentResult:
    case: str
    runs: list[RunResult]

    def by_scaler(self) -> dict[str, dict[str, list[float]]]:
        out: dict[str, dict[str, list[float]]] = {}
        for r in self.runs:
            d = out.setdefault(r.scaler, {"pods": [], "violations": []})
            d["pods"].append(r.mean_pods)
            d["violations"].append(float(r.violations))
        return out

    def summary_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(SUMMARY_COLUMNS)
        for r in self.runs:
            w.writerow([self.case, r.scaler, r.seed, r.violations, f"{r.mean_pods:.6f}", r.plans])
        for scaler, d in self.by_scaler().items():
            n = len(d["pods"])
            w.writerow([self.case, scaler, "mean", f"{sum(d['violations']) / n:.6f}",
                        f"{sum(d['pods']) / n:.6f}", ""])
        return buf.getvalue()


def run_experiment(cfg: ExperimentConfig, scalers: Sequence[str], repetitions: int, seed: int = 0,
                   surrogate=None, out_dir=None) -> ExperimentResult:
    """``repetitions`` seeded runs per scaler; seeds are ``seed .. seed+repetitions-1``.

    With ``out_dir`` each run writes ``trace_<scaler>_<seed>.csv`` (plus the
    event log and best-formula log) and the experiment writes ``summary.csv``.
    """
    if repetitions < 1:
        raise ValueError("repetitions must be positive")
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    runs = []
    cols = trace_columns(cfg)
    for scaler in scalers:
        for s in range(seed, seed + repetitions):
            best_log = None
            if out is not None and scaler == "autoslo":
                best_log = out / f"best_{scaler}_{s}.csv"
                best_log.unlink(missing_ok=True)
            r = run_single(cfg, scaler, s, surrogate, best_log)
            runs.append(r)
            if out is not None:
                (out / f"trace_{scaler}_{s}.csv").write_text(trace_csv(r.trace, cols))
                write_events(out / f"events_{scaler}_{s}.csv", r)
    result = ExperimentResult(cfg.name, runs)
    if out is not None:
        (out / "summary.csv").write_text(result.summary_csv())
    return result


def write_events(path, run: RunResult):
    """Event log plus per-round planning wall time (not part of the summary)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["time_s", "kind", "detail"])
        for e in run.events:
            w.writerow([f"{e.t:g}", e.kind, e.detail])
        for i, sec in enumerate(run.plan_seconds):
            w.writerow(["", "plan_wall_s", f"round={i} seconds={sec:.4f}"])
