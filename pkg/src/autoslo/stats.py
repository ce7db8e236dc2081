"""Rank-sum test, Vargha-Delaney effect size and comparison tables."""

from __future__ import annotations

import csv
import itertools
import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

EXACT_LIMIT = 12
SIGNIFICANCE = 0.01
LABEL_THRESHOLDS = ((0.21, "L"), (0.14, "M"), (0.06, "S"))


def midranks(values: Sequence[float]) -> np.ndarray:
    """1-based ranks with ties sharing their average rank."""
    x = np.asarray(values, dtype=float)
    order = np.argsort(x, kind="stable")
    ranks = np.empty(len(x))
    i = 0
    while i < len(x):
        j = i
        while j + 1 < len(x) and x[order[j + 1]] == x[order[i]]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def wilcoxon_rank_sum(a: Sequence[float], b: Sequence[float], alternative: str = "two-sided") -> float:
    """p-value of the rank-sum test of ``a`` against ``b``.

    For ``len(a) + len(b) <= 12`` the null distribution of the rank sum is
    enumerated over every assignment of the pooled midranks to ``a``;
    otherwise a normal approximation with tie and continuity corrections
    is used.
    ``alternative`` is ``"two-sided"``, ``"greater"`` (a tends larger) or
    ``"less"``.
    """
    n, m = len(a), len(b)
    if n == 0 or m == 0:
        raise ValueError("both samples must be non-empty")
    if alternative not in ("two-sided", "greater", "less"):
        raise ValueError(f"unknown alternative {alternative!r}")
    ranks = midranks(list(a) + list(b))
    w = ranks[:n].sum()
    mean = n * (n + m + 1) / 2.0
    if n + m <= EXACT_LIMIT:
        sums = np.array([ranks[list(c)].sum() for c in itertools.combinations(range(n + m), n)])
        tol = 1e-9
        if alternative == "greater":
            hits = np.sum(sums >= w - tol)
        elif alternative == "less":
            hits = np.sum(sums <= w + tol)
        else:
            hits = np.sum(np.abs(sums - mean) >= abs(w - mean) - tol)
        return float(hits) / len(sums)
    N = n + m
    _, counts = np.unique(ranks, return_counts=True)
    tie = float(np.sum(counts ** 3 - counts))
    var = n * m / 12.0 * ((N + 1) - tie / (N * (N - 1)))
    if var <= 0:
        return 1.0
    sd = math.sqrt(var)
    if alternative == "greater":
        p = 0.5 * math.erfc((w - mean - 0.5) / sd / math.sqrt(2))
    elif alternative == "less":
        p = 0.5 * math.erfc((mean - w - 0.5) / sd / math.sqrt(2))
    else:
        z = max(0.0, abs(w - mean) - 0.5) / sd
        p = math.erfc(z / math.sqrt(2))
    return min(1.0, p)


def magnitude(a12: float) -> str:
    d = abs(a12 - 0.5)
    for cut, label in LABEL_THRESHOLDS:
        # slack so that e.g. 0.71 - 0.5 still reaches 0.21
        if d >= cut - 1e-12:
            return label
    return "N"


def vargha_delaney_a12(a: Sequence[float], b: Sequence[float]) -> tuple[float, str]:
    """Probability that a draw from ``a`` exceeds one from ``b`` (ties count half)."""
    if len(a) == 0 or len(b) == 0:
        raise ValueError("both samples must be non-empty")
    x = np.asarray(a, dtype=float)[:, None]
    y = np.asarray(b, dtype=float)[None, :]
    a12 = (np.sum(x > y) + 0.5 * np.sum(x == y)) / (x.size * y.size)
    return float(a12), magnitude(float(a12))


@dataclass(frozen=True)
class ComparisonRow:
    case: str
    metric: str
    baseline: str
    autoslo_mean: float
    baseline_mean: float
    p_value: float
    a12: float
    label: str

    @property
    def significant(self) -> bool:
        return self.p_value < SIGNIFICANCE


TABLE_COLUMNS = ("case", "metric", "baseline", "autoslo_mean", "baseline_mean",
                 "p_value", "a12", "magnitude", "significant")


def build_table(results: Mapping[str, Mapping[str, Mapping[str, Sequence[float]]]],
                main: str = "autoslo", baselines: Sequence[str] = ("hpa", "ran"),
                metrics: Sequence[str] = ("pods", "violations")) -> list[ComparisonRow]:
    """Rows comparing ``main`` against each baseline.

    ``results[case][scaler][metric]`` holds one value per repetition. A12 is
    the chance that the baseline exceeds AutoSLO, so values above 0.5 favour
    AutoSLO when lower is better.
    """
    rows = []
    for case, by_scaler in results.items():
        if main not in by_scaler:
            raise ValueError(f"case {case!r} has no {main!r} results")
        for metric in metrics:
            ours = list(by_scaler[main][metric])
            for base in baselines:
                if base not in by_scaler:
                    continue
                theirs = list(by_scaler[base][metric])
                if len(theirs) != len(ours):
                    raise ValueError(f"{case}/{metric}: {base} has {len(theirs)} repetitions, "
                                     f"{main} has {len(ours)}")
                p = wilcoxon_rank_sum(ours, theirs)
                a12, label = vargha_delaney_a12(theirs, ours)
                rows.append(ComparisonRow(case, metric, base, float(np.mean(ours)),
                                          float(np.mean(theirs)), p, a12, label))
    return rows


def write_table(path, rows: Sequence[ComparisonRow]):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TABLE_COLUMNS)
        for r in rows:
            w.writerow([r.case, r.metric, r.baseline, f"{r.autoslo_mean:.4f}", f"{r.baseline_mean:.4f}",
                        f"{r.p_value:.6g}", f"{r.a12:.4f}", r.label, int(r.significant)])
