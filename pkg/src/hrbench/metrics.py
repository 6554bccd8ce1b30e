"""Evaluation metrics and record-grouped bootstrap confidence intervals."""

from __future__ import annotations

import math
from dataclasses import dataclass
from collections.abc import Callable

import numpy as np

from .errors import CIUndefined, ContractViolation, UndefinedMetric

_ERF = np.frompyfunc(math.erf, 1, 1)


def _average_ranks(x: np.ndarray) -> np.ndarray:
    order = np.argsort(x, kind="mergesort")
    sx = x[order]
    ranks = np.empty(len(x))
    i = 0
    while i < len(sx):
        j = i
        while j + 1 < len(sx) and sx[j + 1] == sx[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def auroc(probs, labels) -> float:
    """Mann-Whitney statistic; tied scores contribute one half."""
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels)
    n_pos = int((labels == 1).sum())
    n_neg = int((labels == 0).sum())
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetric("AUROC needs both classes")
    ranks = _average_ranks(probs)
    rank_sum = ranks[labels == 1].sum()
    return float((rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def auprc(probs, labels) -> float:
    """Average precision: recall-increment weighted precision over the PR curve."""
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels)
    n_pos = int((labels == 1).sum())
    if n_pos == 0:
        raise UndefinedMetric("AUPRC needs at least one positive")
    order = np.argsort(-probs, kind="mergesort")
    sorted_probs = probs[order]
    sorted_labels = labels[order]
    ap = 0.0
    tp = 0
    seen = 0
    i = 0
    n = len(probs)
    while i < n:
        # tied probabilities form a single PR-curve vertex
        j = i
        while j + 1 < n and sorted_probs[j + 1] == sorted_probs[i]:
            j += 1
        group_tp = int(sorted_labels[i : j + 1].sum())
        tp += group_tp
        seen += j - i + 1
        if group_tp:
            ap += (group_tp / n_pos) * (tp / seen)
        i = j + 1
    return float(ap)


def brier(probs, labels) -> float:
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    return float(np.mean((probs - labels) ** 2))


def ece(probs, labels, n_bins: int = 10) -> float:
    """Expected calibration error over equal-width bins.

    Bins are left-closed/right-open with the last bin closed; empty bins
    contribute nothing.
    """
    if n_bins < 1:
        raise ContractViolation("n_bins must be >= 1")
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    n = len(probs)
    if n == 0:
        return 0.0
    bins = np.minimum((probs * n_bins).astype(int), n_bins - 1)
    total = 0.0
    for b in range(n_bins):
        member = bins == b
        count = int(member.sum())
        if count == 0:
            continue
        gap = abs(labels[member].mean() - probs[member].mean())
        total += (count / n) * gap
    return float(total)


def f1_at_threshold(probs, labels, tau: float) -> float:
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels)
    predicted = probs >= tau
    tp = int((predicted & (labels == 1)).sum())
    fp = int((predicted & (labels == 0)).sum())
    fn = int((~predicted & (labels == 1)).sum())
    if tp == 0:
        return 0.0
    precision = tp / (tp + fp)
    recall = tp / (tp + fn)
    return float(2.0 * precision * recall / (precision + recall))


def mae_rmse(mu_bpm, targets_bpm) -> tuple[float, float]:
    err = np.asarray(mu_bpm, dtype=np.float64) - np.asarray(targets_bpm, dtype=np.float64)
    return float(np.mean(np.abs(err))), float(np.sqrt(np.mean(err**2)))


def crps_gaussian(mu, sigma, y):
    """Closed-form CRPS of a Gaussian forecast, in the units of its inputs."""
    mu = np.asarray(mu, dtype=np.float64)
    sigma = np.asarray(sigma, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if np.any(sigma <= 0):
        raise ContractViolation("sigma must be > 0")
    z = (y - mu) / sigma
    erf = np.asarray(_ERF(z / math.sqrt(2.0)), dtype=np.float64)
    cdf = 0.5 * (1.0 + erf)
    pdf = np.exp(-0.5 * z * z) / math.sqrt(2.0 * math.pi)
    out = sigma * (z * (2.0 * cdf - 1.0) + 2.0 * pdf - 1.0 / math.sqrt(math.pi))
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class PredictionSet:
    """Aligned per-example columns plus the record each example came from."""

    record_ids: tuple[str, ...]
    arrays: dict[str, np.ndarray]

    def __post_init__(self):
        for name, arr in self.arrays.items():
            if len(arr) != len(self.record_ids):
                raise ContractViolation(f"column {name!r} misaligned with record_ids")

    def __len__(self) -> int:
        return len(self.record_ids)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.arrays[name]

    def take(self, idx: np.ndarray) -> "PredictionSet":
        return PredictionSet(
            record_ids=tuple(self.record_ids[i] for i in idx),
            arrays={k: v[idx] for k, v in self.arrays.items()},
        )

    def groups(self) -> dict[str, np.ndarray]:
        out: dict[str, list[int]] = {}
        for i, r in enumerate(self.record_ids):
            out.setdefault(r, []).append(i)
        return {r: np.array(ix, dtype=np.int64) for r, ix in out.items()}


@dataclass(frozen=True)
class BootstrapResult:
    point: float
    ci_low: float
    ci_high: float
    n_valid_draws: int


def grouped_bootstrap(
    predictions: PredictionSet,
    metric: Callable[[PredictionSet], float],
    n_draws: int = 1000,
    seed: int = 0,
) -> BootstrapResult:
    """Resample record ids with replacement; CI from 2.5/97.5 percentiles.

    Each draw owns an RNG stream keyed by (seed, draw index), so the result
    does not depend on execution order. Draws where the metric is undefined
    are skipped and only the remaining draws enter the percentiles.
    """
    if len(predictions) == 0:
        raise ContractViolation("empty prediction set")
    point = metric(predictions)
    groups = predictions.groups()
    records = sorted(groups)
    values = []
    for draw in range(n_draws):
        rng = np.random.default_rng([seed, draw])
        picks = rng.integers(0, len(records), size=len(records))
        idx = np.concatenate([groups[records[p]] for p in picks])
        try:
            values.append(metric(predictions.take(idx)))
        except UndefinedMetric:
            continue
    if not values:
        raise CIUndefined("metric undefined on every bootstrap draw")
    lo, hi = np.percentile(values, [2.5, 97.5], method="linear")
    return BootstrapResult(
        point=float(point), ci_low=float(lo), ci_high=float(hi), n_valid_draws=len(values)
    )
