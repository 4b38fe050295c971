"""Summary statistics and bootstrap intervals for experiment columns."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import numpy as np
from scipy import stats

from app.config import BOOTSTRAP_RESAMPLES
from app.errors import InvalidArgumentError


@dataclass(frozen=True)
class Interval:
    """Bootstrap percentile interval of a mean."""

    mean: float
    low: float
    high: float
    level: float = 0.95

    def excludes(self, value: float) -> bool:
        return value < self.low or value > self.high

    def to_dict(self) -> dict:
        return {"mean": self.mean, "low": self.low, "high": self.high, "level": self.level}


@dataclass(frozen=True)
class ColumnSummary:
    """Aggregated metrics of one numeric column."""

    count: int
    mean: float
    std: float
    coefficient_of_variation: float
    interval: Interval

    def to_dict(self) -> dict:
        return {
            "count": self.count,
            "mean": self.mean,
            "std": self.std,
            "cv": self.coefficient_of_variation,
            "ci": self.interval.to_dict(),
        }


def bootstrap_mean(
    values: Iterable[float],
    resamples: int = BOOTSTRAP_RESAMPLES,
    level: float = 0.95,
    seed: int = 0,
) -> Interval:
    """Percentile bootstrap of the mean via scipy; deterministic for a given seed."""
    data = np.asarray(list(values), dtype=np.float64)
    if data.size == 0:
        raise InvalidArgumentError("No hay datos para el bootstrap.")
    if not 0 < level < 1:
        raise InvalidArgumentError("El nivel de confianza debe estar en (0, 1).")
    mean = float(data.mean())
    # scipy needs two distinct observations; a constant column has a degenerate interval.
    if data.size < 2 or np.ptp(data) == 0:
        return Interval(mean, mean, mean, level)
    result = stats.bootstrap(
        (data,),
        np.mean,
        n_resamples=resamples,
        confidence_level=level,
        method="percentile",
        random_state=np.random.default_rng(seed),
    )
    ci = result.confidence_interval
    return Interval(mean, float(ci.low), float(ci.high), level)


def summarize_column(values: Iterable[float], seed: int = 0) -> ColumnSummary:
    """Mean, sample deviation, coefficient of variation and bootstrap interval."""
    data = np.asarray(list(values), dtype=np.float64)
    if data.size == 0:
        raise InvalidArgumentError("Columna vacia.")
    mean = float(data.mean())
    std = float(data.std(ddof=1)) if data.size > 1 else 0.0
    cv = std / abs(mean) if mean else 0.0
    return ColumnSummary(int(data.size), mean, std, cv, bootstrap_mean(data, seed=seed))
