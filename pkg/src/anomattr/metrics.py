"""Anomaly scoring and consistency metrics between attribution vectors."""

from __future__ import annotations

from dataclasses import dataclass, field
from math import ceil

import numpy as np
from scipy import stats

from .dataio import TestSet
from .models import ModelHandle

__all__ = [
    "MetricUndefinedError",
    "AnomalyScore",
    "ConsistencyReport",
    "anomaly_score",
    "collective_anomaly_score",
    "kendall_tau",
    "spearman_rho",
    "sign_match_ratio",
    "hit_ratio_25",
    "consistency_report",
]


class MetricUndefinedError(ValueError):
    """Rank correlation is undefined (a constant input vector)."""


@dataclass(frozen=True)
class AnomalyScore:
    """Negative log-likelihood (nats) of one sample, or of the whole test set
    when ``sample_index`` is ``"collective"``."""

    value: float
    sample_index: int | str


def anomaly_score(
    model: ModelHandle, x_t, y_t: float, noise_variance: float,
    sample_index: int | str = 0,
) -> AnomalyScore:
    """Gaussian plug-in negative log-likelihood:
    0.5 ln(2 pi v) + (y - f(x))^2 / (2 v)."""
    if noise_variance <= 0:
        raise ValueError("noise_variance must be positive")
    resid = y_t - model.evaluate(x_t)
    value = 0.5 * np.log(2.0 * np.pi * noise_variance) + resid**2 / (2.0 * noise_variance)
    return AnomalyScore(float(value), sample_index)


def collective_anomaly_score(
    model: ModelHandle, testset: TestSet, noise_variance: float
) -> AnomalyScore:
    """Mean of the per-sample scores over the test set."""
    if testset.n_test == 0:
        raise ValueError("testset must be nonempty")
    values = [
        anomaly_score(model, testset.x[t], testset.y[t], noise_variance, t).value
        for t in range(testset.n_test)
    ]
    return AnomalyScore(float(np.mean(values)), "collective")


def _abs_pair(a, b):
    a = np.abs(np.asarray(a, dtype=float))
    b = np.abs(np.asarray(b, dtype=float))
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError("inputs must be 1-d vectors of equal length")
    if a.shape[0] < 2:
        raise ValueError("need at least two entries")
    for name, v in (("first", a), ("second", b)):
        if np.all(v == v[0]):
            raise MetricUndefinedError(
                f"{name} vector is constant in absolute value; rank "
                "correlation is undefined"
            )
    return a, b


def kendall_tau(a, b) -> float:
    """Tie-corrected (tau-b) rank correlation of the absolute values."""
    a, b = _abs_pair(a, b)
    return float(stats.kendalltau(a, b, variant="b").statistic)


def spearman_rho(a, b) -> float:
    """Spearman rank correlation of the absolute values (average ranks for
    ties)."""
    a, b = _abs_pair(a, b)
    return float(stats.spearmanr(a, b).statistic)


def sign_match_ratio(reference, candidate) -> float:
    """1 - (fraction of coordinates whose signs strictly oppose), with
    sign(0) = 0, so zero entries never penalize.  An all-zero reference
    scores 1 regardless of the candidate."""
    r = np.sign(np.asarray(reference, dtype=float))
    u = np.sign(np.asarray(candidate, dtype=float))
    if r.shape != u.shape or r.ndim != 1 or r.shape[0] < 1:
        raise ValueError("inputs must be 1-d vectors of equal length")
    return float(1.0 - np.mean(r * u == -1.0))


def _top_quarter(v: np.ndarray) -> set[int]:
    k = ceil(len(v) / 4)
    # stable sort on -|v|: ties resolve to the lower index
    order = np.argsort(-np.abs(v), kind="stable")
    return set(int(i) for i in order[:k])


def hit_ratio_25(reference, candidate) -> float:
    """Overlap of the top-25% absolute entries (set size ceil(M/4), ties
    broken toward lower indices)."""
    r = np.asarray(reference, dtype=float)
    u = np.asarray(candidate, dtype=float)
    if r.shape != u.shape or r.ndim != 1 or r.shape[0] < 1:
        raise ValueError("inputs must be 1-d vectors of equal length")
    top_r = _top_quarter(r)
    top_u = _top_quarter(u)
    return len(top_r & top_u) / len(top_r)


@dataclass
class ConsistencyReport:
    """Four-way consistency of a candidate attribution against a reference.
    Rank correlations are None when undefined; ``notes`` says why."""

    kendall_tau: float | None
    spearman_rho: float | None
    smr: float
    hit25: float
    notes: dict[str, str] = field(default_factory=dict)


def consistency_report(reference, candidate) -> ConsistencyReport:
    notes: dict[str, str] = {}
    try:
        tau = kendall_tau(reference, candidate)
    except MetricUndefinedError as exc:
        tau = None
        notes["kendall_tau"] = str(exc)
    try:
        rho = spearman_rho(reference, candidate)
    except MetricUndefinedError as exc:
        rho = None
        notes["spearman_rho"] = str(exc)
    return ConsistencyReport(
        kendall_tau=tau,
        spearman_rho=rho,
        smr=sign_match_ratio(reference, candidate),
        hit25=hit_ratio_25(reference, candidate),
        notes=notes,
    )
