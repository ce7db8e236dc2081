"""Experiment configuration: built-in presets and YAML loading.

A configuration file may name a ``preset`` and override any of its keys;
nested mappings are merged key by key, lists are replaced whole.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass
from typing import Any

import yaml

from .baselines import HpaConfig
from .planner import GpConfig
from .simcluster import Phase, ServiceSpec, WorkloadPlan
from .slo import SloSpec

CONFIG_VERSION = 1


class ConfigError(ValueError):
    pass


# Shop: a CPU-bound two-service chain. Replicas run two requests at a time and
# request half of their CPU limit, as the demo shop manifests do.
SHOP = {
    "version": CONFIG_VERSION,
    "name": "shop",
    "services": [
        {"name": "frontend", "service_time_ms": 50.0, "concurrency": 2, "queue_capacity": 20,
         "cpu_request": 0.5, "memory_per_replica": 0.05, "pod_min": 1, "pod_max": 10,
         "provisioning_delay_s": 10.0},
        {"name": "productcatalog", "service_time_ms": 70.0, "concurrency": 2, "queue_capacity": 20,
         "cpu_request": 0.5, "memory_per_replica": 0.05, "pod_min": 1, "pod_max": 10,
         "provisioning_delay_s": 10.0},
    ],
    "bottlenecks": ["frontend", "productcatalog"],
    "initial_replicas": {"frontend": 4, "productcatalog": 6},
    "workload": {"normal_rate": 56.0, "high_rate": 120.0, "phase_s": 300.0, "total_s": 3600.0},
    "slo": {"metric": "latency_p90_ms", "threshold": 500.0, "margin": 300.0},
    "controller": {"cycle_s": 60.0, "update_s": 15.0},
    "gp": {"population_size": 50, "generations": 30, "crossover_rate": 0.9, "mutation_rate": 0.1,
           "tournament_size": 3, "max_tree_depth": 15, "init_grow_depth": 4,
           "vocabulary": ["qps", "cpu"]},
    "hpa": {"target": 0.8, "sync_s": 15.0, "stabilization_s": 300.0},
    "surrogate": {"model": "forest", "n_trees": 100, "max_depth": None, "min_leaf": 2,
                  "bootstrap": True, "seed": 0},
    "traindata": {"hours": 10.0, "max_rate": 160.0, "interval_s": 15.0, "hold_s": 120.0},
}

# Chatbot: one GPU-bound inference service. Few slow requests fit at once, the
# queue is short, pods take long to start and request little CPU.
CHATBOT = {
    "version": CONFIG_VERSION,
    "name": "chatbot",
    "services": [
        {"name": "llm", "service_time_ms": 1000.0, "concurrency": 4, "queue_capacity": 2,
         "cpu_request": 0.2, "memory_per_replica": 0.3, "pod_min": 1, "pod_max": 3,
         "provisioning_delay_s": 30.0},
    ],
    "bottlenecks": ["llm"],
    "initial_replicas": {"llm": 3},
    "workload": {"normal_rate": 1.5, "high_rate": 7.0, "phase_s": 300.0, "total_s": 3600.0},
    "slo": {"metric": "success_rate", "threshold": 0.95, "margin": 0.98},
    "controller": {"cycle_s": 60.0, "update_s": 15.0},
    "gp": {"population_size": 50, "generations": 20, "crossover_rate": 0.9, "mutation_rate": 0.1,
           "tournament_size": 3, "max_tree_depth": 15, "init_grow_depth": 4,
           "vocabulary": ["qps", "cpu"]},
    "hpa": {"target": 0.8, "sync_s": 15.0, "stabilization_s": 300.0},
    "surrogate": {"model": "forest", "n_trees": 100, "max_depth": None, "min_leaf": 2,
                  "bootstrap": True, "seed": 0},
    "traindata": {"hours": 10.0, "max_rate": 10.0, "interval_s": 15.0, "hold_s": 120.0},
}

PRESETS = {"shop": SHOP, "chatbot": CHATBOT}


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


@dataclass(frozen=True)
class ExperimentConfig:
    name: str
    services: tuple[ServiceSpec, ...]
    bottlenecks: tuple[str, ...]
    initial_replicas: dict
    workload: WorkloadPlan
    slo: SloSpec
    cycle_s: float
    update_s: float
    gp: GpConfig
    hpa: HpaConfig
    surrogate: dict
    traindata: dict
    raw: dict

    def bounds(self) -> dict[str, tuple[int, int]]:
        return {s.name: (s.pod_min, s.pod_max) for s in self.services}

    def with_seed(self, seed: int) -> "ExperimentConfig":
        d = _merge(self.raw, {"gp": {"seed": seed}})
        return build_config(d)


def _workload(d: dict) -> WorkloadPlan:
    if "phases" in d:
        return WorkloadPlan(tuple(Phase(float(p["duration_s"]), float(p["rate"]),
                                        p.get("process", "poisson")) for p in d["phases"]))
    return WorkloadPlan.alternating(float(d["normal_rate"]), float(d["high_rate"]),
                                    float(d.get("phase_s", 300.0)), float(d.get("total_s", 3600.0)))


def build_config(d: dict) -> ExperimentConfig:
    """Validate a merged configuration mapping."""
    try:
        if d.get("version", CONFIG_VERSION) != CONFIG_VERSION:
            raise ConfigError(f"unsupported config version {d.get('version')}")
        services = tuple(ServiceSpec(**s) for s in d["services"])
        names = [s.name for s in services]
        bottlenecks = tuple(d["bottlenecks"])
        if not bottlenecks:
            raise ConfigError("at least one bottleneck service is required")
        for b in bottlenecks:
            if b not in names:
                raise ConfigError(f"bottleneck {b!r} is not a configured service")
        bspecs = [s for s in services if s.name in bottlenecks]
        lo, hi = {s.pod_min for s in bspecs}, {s.pod_max for s in bspecs}
        if len(lo) != 1 or len(hi) != 1:
            raise ConfigError("bottleneck services must share the same pod bounds")
        initial = dict(d.get("initial_replicas") or {})
        for name, n in initial.items():
            spec = next((s for s in services if s.name == name), None)
            if spec is None or not spec.pod_min <= int(n) <= spec.pod_max:
                raise ConfigError(f"bad initial replicas {name}={n}")
        slo = SloSpec(**d["slo"])
        ctl = d.get("controller", {})
        cycle_s, update_s = float(ctl.get("cycle_s", 60.0)), float(ctl.get("update_s", 15.0))
        if not 0 < update_s <= cycle_s:
            raise ConfigError("need 0 < update period <= cycle period")
        if update_s != int(update_s) or cycle_s != int(cycle_s):
            raise ConfigError("controller periods must be whole seconds")
        gp_d = dict(d.get("gp", {}))
        gp_d["vocabulary"] = tuple(gp_d.get("vocabulary", ("qps", "cpu")))
        gp = GpConfig(pod_min=lo.pop(), pod_max=hi.pop(), **gp_d)
        unknown = set(gp.vocabulary) - {"qps", "cpu", "mem"}
        if unknown:
            raise ConfigError(f"unknown formula metrics {sorted(unknown)}")
        hpa = HpaConfig(**d.get("hpa", {}))
        return ExperimentConfig(
            name=str(d.get("name", "custom")), services=services, bottlenecks=bottlenecks,
            initial_replicas=initial, workload=_workload(d["workload"]), slo=slo,
            cycle_s=cycle_s, update_s=update_s, gp=gp, hpa=hpa,
            surrogate=dict(d.get("surrogate", {})), traindata=dict(d.get("traindata", {})), raw=d)
    except ConfigError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"invalid configuration: {exc!r}") from None


def preset(name: str, **overrides) -> ExperimentConfig:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    return build_config(_merge(PRESETS[name], overrides))


def load_config(path) -> ExperimentConfig:
    try:
        with open(path) as fh:
            data = yaml.safe_load(fh) or {}
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    base = {}
    if "preset" in data:
        name = data.pop("preset")
        if name not in PRESETS:
            raise ConfigError(f"unknown preset {name!r}")
        base = PRESETS[name]
    return build_config(_merge(base, data))


def dump_preset(name: str) -> str:
    return yaml.safe_dump(PRESETS[name], sort_keys=False)
