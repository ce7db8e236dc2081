"""SLO surrogate: predicts the SLO metric for a candidate pod allocation.

Training records pair the operational metrics observed in one monitoring
window (per-service cpu and memory, ingress qps, bottleneck pod counts) with
the SLO value measured in that window. The default regressor is a bagged
ensemble of squared-error regression trees; a least-squares linear model and
a mean predictor are kept around for model selection.
"""

from __future__ import annotations

import csv
import io
import json
import math
import random
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .simcluster import Cluster, MetricsSnapshot, Phase, ServiceSpec, WorkloadPlan

MODEL_FORMAT_VERSION = 1
MIN_RECORDS = 50
TARGET_COLUMN = "slo_value"


class SurrogateError(RuntimeError):
    pass


class UndefinedR2Warning(RuntimeWarning):
    pass


# -- feature schema -----------------------------------------------------------

def feature_names(bottlenecks: Sequence[str]) -> tuple[str, ...]:
    """Column layout ``cpu_*, mem_*, qps, pods_*`` in bottleneck order."""
    names = [f"cpu_{b}" for b in bottlenecks]
    names += [f"mem_{b}" for b in bottlenecks]
    names.append("qps")
    names += [f"pods_{b}" for b in bottlenecks]
    return tuple(names)


def bottlenecks_from_schema(schema: Sequence[str]) -> list[str]:
    return [name[len("pods_"):] for name in schema if name.startswith("pods_")]


@dataclass(frozen=True)
class TrainingRecord:
    features: tuple[float, ...]
    target: float

    def __post_init__(self):
        if not math.isfinite(self.target) or self.target < 0:
            raise ValueError(f"target must be finite and non-negative, got {self.target}")


def record_from_snapshot(snap: MetricsSnapshot, bottlenecks: Sequence[str],
                         slo_metric: str) -> TrainingRecord:
    svcs = [snap.service(b) for b in bottlenecks]
    feats = [s.cpu for s in svcs] + [s.mem for s in svcs] + [snap.qps]
    feats += [float(s.replicas) for s in svcs]
    return TrainingRecord(tuple(feats), snap.value(slo_metric))


def candidate_features(snap: MetricsSnapshot, bottlenecks: Sequence[str],
                       counts: Sequence[int]) -> list[float]:
    """Feature row describing ``snap`` as if the bottlenecks ran ``counts`` pods.

    Per-replica metrics are re-expressed for the candidate replica count:
    memory scales with the number of replicas and cpu is the offered work
    spread over the candidate replicas, capped at full utilization.
    """
    cpu, mem = [], []
    for name, n in zip(bottlenecks, counts):
        s = snap.service(name)
        cpu.append(min(1.0, s.cpu_demand / n))
        per_replica = s.mem / s.replicas if s.replicas else 0.0
        mem.append(min(1.0, per_replica * n))
    return cpu + mem + [snap.qps] + [float(n) for n in counts]


# -- CSV ------------------------------------------------------------------------

def write_records_csv(path, schema: Sequence[str], records: Sequence[TrainingRecord]):
    with open(path, "w", newline="") as fh:
        fh.write(records_to_csv(schema, records))


def records_to_csv(schema: Sequence[str], records: Sequence[TrainingRecord]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(list(schema) + [TARGET_COLUMN])
    for r in records:
        w.writerow([repr(float(v)) for v in r.features] + [repr(float(r.target))])
    return buf.getvalue()


def read_records_csv(path) -> tuple[tuple[str, ...], list[TrainingRecord]]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0][-1] != TARGET_COLUMN:
        raise SurrogateError(f"{path}: missing header or '{TARGET_COLUMN}' column")
    schema = tuple(rows[0][:-1])
    records = []
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != len(schema) + 1:
            raise SurrogateError(f"{path}:{lineno}: expected {len(schema) + 1} fields")
        try:
            vals = [float(v) for v in row]
        except ValueError as exc:
            raise SurrogateError(f"{path}:{lineno}: {exc}") from None
        records.append(TrainingRecord(tuple(vals[:-1]), vals[-1]))
    return schema, records


# -- regressors -------------------------------------------------------------------

def _build_tree(X: np.ndarray, y: np.ndarray, max_depth: int | None, min_leaf: int):
    """Grow one CART regression tree; returns parallel node arrays.

    Splits maximize the reduction of squared error; thresholds sit halfway
    between adjacent distinct feature values.
    """
    feature, threshold, left, right, value = [], [], [], [], []

    def new_node(idx) -> int:
        feature.append(-1)
        threshold.append(np.inf)
        left.append(-1)
        right.append(-1)
        value.append(float(y[idx].mean()))
        return len(value) - 1

    root = new_node(np.arange(len(y)))
    stack = [(root, np.arange(len(y)), 1)]
    while stack:
        node, idx, depth = stack.pop()
        n = len(idx)
        if n < 2 * min_leaf or (max_depth is not None and depth >= max_depth):
            continue
        yn = y[idx]
        if np.ptp(yn) <= 1e-12 * max(1.0, abs(float(yn[0]))):
            continue
        Xn = X[idx]
        order = np.argsort(Xn, axis=0, kind="stable")
        xs = np.take_along_axis(Xn, order, axis=0)
        # centered targets: the score below is exactly the drop in squared error
        ys = yn[order] - yn.mean()
        csum = np.cumsum(ys, axis=0)[:-1]
        nl = np.arange(1, n, dtype=float)[:, None]
        nr = n - nl
        score = csum ** 2 / nl + csum ** 2 / nr
        valid = xs[:-1] < xs[1:]
        if min_leaf > 1:
            valid[: min_leaf - 1] = False
            valid[n - min_leaf:] = False
        if not valid.any():
            continue
        score = np.where(valid, score, -np.inf)
        best = float(score.max())
        if best <= 1e-14 * float(np.sum(ys[:, 0] ** 2)):
            continue
        # gains equal up to rounding count as tied; the first in scan order wins
        flat = int(np.argmax(score >= best * (1.0 - 1e-10)))
        k, f = divmod(flat, score.shape[1])
        lo, hi = xs[k, f], xs[k + 1, f]
        thr = (lo + hi) / 2.0
        if thr >= hi:
            thr = lo
        mask = Xn[:, f] <= thr
        li, ri = idx[mask], idx[~mask]
        feature[node] = f
        threshold[node] = thr
        lnode = new_node(li)
        rnode = new_node(ri)
        left[node] = lnode
        right[node] = rnode
        stack.append((rnode, ri, depth + 1))
        stack.append((lnode, li, depth + 1))
    return (np.array(feature, dtype=np.int64), np.array(threshold, dtype=float),
            np.array(left, dtype=np.int64), np.array(right, dtype=np.int64),
            np.array(value, dtype=float))


class ForestRegressor:
    """Bagged squared-error regression trees stored as one flat node table."""

    kind = "forest"

    def __init__(self, n_trees: int = 100, max_depth: int | None = None, min_leaf: int = 2,
                 bootstrap: bool = True, seed: int = 0):
        if n_trees < 1 or min_leaf < 1:
            raise ValueError("n_trees and min_leaf must be positive")
        self.n_trees = n_trees
        self.max_depth = max_depth
        self.min_leaf = min_leaf
        self.bootstrap = bootstrap
        self.seed = seed
        self.arrays: dict[str, np.ndarray] = {}

    def fit(self, X: np.ndarray, y: np.ndarray) -> "ForestRegressor":
        X = np.asarray(X, dtype=float)
        y = np.asarray(y, dtype=float)
        rng = np.random.default_rng(self.seed)
        parts = []
        offset = 0
        roots = []
        for _ in range(self.n_trees):
            if self.bootstrap:
                sample = rng.integers(0, len(y), size=len(y))
            else:
                sample = np.arange(len(y))
            feat, thr, lft, rgt, val = _build_tree(X[sample], y[sample], self.max_depth, self.min_leaf)
            leaf = feat < 0
            nodes = np.arange(len(val))
            lft = np.where(leaf, nodes, lft) + offset
            rgt = np.where(leaf, nodes, rgt) + offset
            parts.append((np.where(leaf, 0, feat), thr, lft, rgt, val, self._depth(feat, lft - offset, rgt - offset)))
            roots.append(offset)
            offset += len(val)
        self.arrays = {
            "feature": np.concatenate([p[0] for p in parts]),
            "threshold": np.concatenate([p[1] for p in parts]),
            "left": np.concatenate([p[2] for p in parts]),
            "right": np.concatenate([p[3] for p in parts]),
            "value": np.concatenate([p[4] for p in parts]),
            "roots": np.array(roots, dtype=np.int64),
            "depth": np.array([max(p[5] for p in parts)], dtype=np.int64),
        }
        return self

    @staticmethod
    def _depth(feat, left, right) -> int:
        depth = {0: 1}
        deepest = 1
        for node in range(len(feat)):
            d = depth[node]
            deepest = max(deepest, d)
            if feat[node] >= 0:
                depth[int(left[node])] = d + 1
                depth[int(right[node])] = d + 1
        return deepest

    def predict(self, X: np.ndarray) -> np.ndarray:
        a = self.arrays
        X = np.atleast_2d(np.asarray(X, dtype=float))
        rows = np.arange(X.shape[0])[None, :]
        nodes = np.repeat(a["roots"][:, None], X.shape[0], axis=1)
        feat, thr, left, right = a["feature"], a["threshold"], a["left"], a["right"]
        for _ in range(int(a["depth"][0]) - 1):
            go_left = X[rows, feat[nodes]] <= thr[nodes]
            nodes = np.where(go_left, left[nodes], right[nodes])
        return a["value"][nodes].mean(axis=0)

    def params(self) -> dict:
        return {"n_trees": self.n_trees, "max_depth": self.max_depth, "min_leaf": self.min_leaf,
                "bootstrap": self.bootstrap, "seed": self.seed}


class LinearRegressor:
    kind = "linear"

    def __init__(self, **_):
        self.arrays: dict[str, np.ndarray] = {}

    def fit(self, X, y):
        X = np.asarray(X, dtype=float)
        A = np.hstack([X, np.ones((X.shape[0], 1))])
        coef, *_ = np.linalg.lstsq(A, np.asarray(y, dtype=float), rcond=None)
        self.arrays = {"coef": coef}
        return self

    def predict(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        coef = self.arrays["coef"]
        return X @ coef[:-1] + coef[-1]

    def params(self):
        return {}


class MeanRegressor:
    kind = "mean"

    def __init__(self, **_):
        self.arrays: dict[str, np.ndarray] = {}

    def fit(self, X, y):
        self.arrays = {"mean": np.array([float(np.mean(y))])}
        return self

    def predict(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return np.full(X.shape[0], self.arrays["mean"][0])

    def params(self):
        return {}


REGRESSORS = {"forest": ForestRegressor, "linear": LinearRegressor, "mean": MeanRegressor}


# -- surrogate model ------------------------------------------------------------------

@dataclass
class SurrogateModel:
    regressor: object
    schema: tuple[str, ...]
    n_records: int = 0
    r2: float | None = None
    mae: float | None = None
    calls: int = field(default=0, compare=False)

    @property
    def kind(self) -> str:
        return self.regressor.kind

    @property
    def bottlenecks(self) -> list[str]:
        return bottlenecks_from_schema(self.schema)

    def predict_rows(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != len(self.schema):
            raise SurrogateError(f"expected {len(self.schema)} features, got {X.shape[1]}")
        self.calls += X.shape[0]
        return self.regressor.predict(X)

    def predict_many(self, snap: MetricsSnapshot, allocations: Sequence[Sequence[int]],
                     bottlenecks: Sequence[str] | None = None) -> np.ndarray:
        names = self.bottlenecks
        if bottlenecks is not None and list(bottlenecks) != names:
            raise SurrogateError(f"schema bottlenecks {names} != requested {list(bottlenecks)}")
        try:
            rows = [candidate_features(snap, names, counts) for counts in allocations]
        except KeyError as exc:
            raise SurrogateError(f"snapshot lacks service {exc}") from None
        if not rows:
            return np.zeros(0)
        return self.predict_rows(rows)

    def save(self, path):
        meta = {
            "format_version": MODEL_FORMAT_VERSION,
            "kind": self.kind,
            "schema": list(self.schema),
            "n_records": self.n_records,
            "r2": self.r2,
            "mae": self.mae,
            "params": self.regressor.params(),
        }
        with open(path, "wb") as fh:
            np.savez(fh, meta=np.array(json.dumps(meta)), **self.regressor.arrays)

    @classmethod
    def load(cls, path) -> "SurrogateModel":
        try:
            with np.load(path, allow_pickle=False) as data:
                meta = json.loads(str(data["meta"]))
                arrays = {k: data[k] for k in data.files if k != "meta"}
        except (OSError, ValueError, KeyError) as exc:
            raise SurrogateError(f"cannot read model file {path}: {exc}") from None
        if meta.get("format_version") != MODEL_FORMAT_VERSION:
            raise SurrogateError(f"unsupported model format {meta.get('format_version')}")
        reg = REGRESSORS[meta["kind"]](**meta["params"])
        reg.arrays = arrays
        return cls(reg, tuple(meta["schema"]), meta["n_records"], meta["r2"], meta["mae"])


def _matrix(records: Sequence[TrainingRecord]) -> tuple[np.ndarray, np.ndarray]:
    widths = {len(r.features) for r in records}
    if len(widths) != 1:
        raise SurrogateError(f"inconsistent feature vector lengths {sorted(widths)}")
    X = np.array([r.features for r in records], dtype=float)
    if not np.isfinite(X).all():
        raise SurrogateError("training features contain non-finite values")
    y = np.array([r.target for r in records], dtype=float)
    return X, y


def split_records(records: Sequence[TrainingRecord], holdout: float, seed: int):
    """Seeded shuffle, then the last ``holdout`` share becomes the held-out set."""
    order = list(range(len(records)))
    random.Random(seed).shuffle(order)
    n_test = int(round(len(records) * holdout))
    test = [records[i] for i in order[len(order) - n_test:]] if n_test else []
    train = [records[i] for i in order[: len(order) - n_test]]
    return train, test


def fit(records: Sequence[TrainingRecord], schema: Sequence[str], kind: str = "forest",
        n_trees: int = 100, max_depth: int | None = None, min_leaf: int = 2,
        bootstrap: bool = True, seed: int = 0, holdout: float = 0.2) -> SurrogateModel:
    """Train a surrogate, reporting R^2 and MAE on a seeded held-out share."""
    if len(records) < MIN_RECORDS:
        raise SurrogateError(f"need at least {MIN_RECORDS} records, got {len(records)}")
    if kind not in REGRESSORS:
        raise SurrogateError(f"unknown model kind {kind!r}")
    schema = tuple(schema)
    train, test = split_records(records, holdout, seed)
    X, y = _matrix(train)
    if X.shape[1] != len(schema):
        raise SurrogateError(f"records have {X.shape[1]} features, schema names {len(schema)}")
    if kind == "forest":
        reg = ForestRegressor(n_trees, max_depth, min_leaf, bootstrap, seed)
    else:
        reg = REGRESSORS[kind]()
    reg.fit(X, y)
    model = SurrogateModel(reg, schema, n_records=len(records))
    if test:
        model.r2, model.mae = evaluate_model(model, test)
        model.calls = 0
    return model


def r2_mae(y_true, y_pred) -> tuple[float, float]:
    y_true = np.asarray(y_true, dtype=float)
    y_pred = np.asarray(y_pred, dtype=float)
    if len(y_true) == 0:
        raise ValueError("empty evaluation set")
    mae = float(np.mean(np.abs(y_pred - y_true)))
    ss_tot = float(np.sum((y_true - y_true.mean()) ** 2))
    if ss_tot == 0.0:
        warnings.warn("R^2 is undefined for a constant target", UndefinedR2Warning, stacklevel=2)
        return math.nan, mae
    ss_res = float(np.sum((y_true - y_pred) ** 2))
    return 1.0 - ss_res / ss_tot, mae


def evaluate_model(model: SurrogateModel, held_out: Sequence[TrainingRecord]) -> tuple[float, float]:
    """R^2 (NaN when the held-out target is constant) and mean absolute error."""
    if not held_out:
        raise SurrogateError("held-out set is empty")
    X, y = _matrix(held_out)
    return r2_mae(y, model.predict_rows(X))


def select_model(records, schema, seed: int = 0, kinds=("forest", "linear", "mean"), **forest_kw):
    """Fit each model kind and keep the highest R^2, then the lowest MAE."""
    fitted = []
    for kind in kinds:
        kw = forest_kw if kind == "forest" else {}
        model = fit(records, schema, kind=kind, seed=seed, **kw)
        fitted.append(model)

    def key(m):
        r2 = m.r2 if m.r2 is not None and not math.isnan(m.r2) else -math.inf
        return (-r2, m.mae if m.mae is not None else math.inf)

    return min(fitted, key=key), fitted


# -- training data collection ------------------------------------------------------------

def collect_training_data(services: Sequence[ServiceSpec], bottlenecks: Sequence[str],
                          slo_metric: str, duration: float, seed: int,
                          max_rate: float, interval: float = 15.0, hold: float = 60.0,
                          out=None) -> list[TrainingRecord]:
    """Sample one record per ``interval`` under randomized load and pod counts.

    Every ``hold`` seconds a new arrival rate is drawn uniformly from
    ``[0, max_rate]`` and every bottleneck gets a uniformly drawn in-bounds
    replica count.
    """
    if duration <= 0 or interval <= 0 or hold <= 0:
        raise ValueError("duration, interval and hold must be positive")
    rng = random.Random(f"{seed}:traindata")
    n_holds = math.ceil(duration / hold)
    phases = tuple(Phase(hold, rng.uniform(0.0, max_rate)) for _ in range(n_holds))
    cluster = Cluster(services, WorkloadPlan(phases), seed)
    specs = {s.name: s for s in services}
    for b in bottlenecks:
        if b not in specs:
            raise ValueError(f"bottleneck {b!r} is not a configured service")
    records = []
    n_samples = int(round(duration / interval))
    next_hold = 0.0
    t = 0.0
    for _ in range(n_samples):
        if t >= next_hold - 1e-9:
            for b in bottlenecks:
                target = rng.randint(specs[b].pod_min, specs[b].pod_max)
                if cluster.replicas(b) + cluster.pending(b) != target:
                    cluster.request_scale(b, target)
            next_hold += hold
        t += interval
        cluster.advance(t)
        records.append(record_from_snapshot(cluster.snapshot(interval), bottlenecks, slo_metric))
    if out is not None:
        write_records_csv(out, feature_names(bottlenecks), records)
    return records
