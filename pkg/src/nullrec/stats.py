"""Small statistical helpers shared by the verification harness."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import stats

__all__ = ["EmpiricalLaw", "loglog_fit", "mean_se", "ks_distance", "normality_pvalue"]


def mean_se(a, axis=0):
    """Sample mean and its standard error along ``axis``."""
    a = np.asarray(a, dtype=float)
    n = a.shape[axis]
    m = a.mean(axis=axis)
    se = a.std(axis=axis, ddof=1) / math.sqrt(n) if n > 1 else np.full_like(m, np.nan)
    return m, se


def loglog_fit(x, y, level: float = 0.95) -> tuple[float, tuple[float, float]]:
    """Least-squares slope of ``log y`` on ``log x`` with a t-based confidence interval."""
    lx, ly = np.log(np.asarray(x, dtype=float)), np.log(np.asarray(y, dtype=float))
    res = stats.linregress(lx, ly)
    dof = len(lx) - 2
    if dof < 1:
        return float(res.slope), (math.nan, math.nan)
    q = stats.t.ppf(0.5 + level / 2, dof) * res.stderr
    return float(res.slope), (float(res.slope - q), float(res.slope + q))


def ks_distance(a, b) -> float:
    """Two-sample Kolmogorov-Smirnov statistic; 0 when both samples are constant and equal."""
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    return float(stats.ks_2samp(a, b).statistic)


def normality_pvalue(a) -> float:
    """Anderson-Darling test for normality: returns the largest tabulated
    significance level (in percent) at which normality is *not* rejected, or 0."""
    res = stats.anderson(np.asarray(a, dtype=float), dist="norm")
    ok = res.critical_values > res.statistic
    return float(res.significance_level[ok].max()) if ok.any() else 0.0


@dataclass(frozen=True)
class EmpiricalLaw:
    """Sorted samples per coordinate at one time, shape ``(n, d)``."""

    values: np.ndarray
    t: float | None = None

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim == 1:
            v = v[:, None]
        if not np.all(np.isfinite(v)):
            raise ValueError("samples must be finite")
        v = np.sort(v, axis=0)
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def size(self) -> int:
        return self.values.shape[0]

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    def ks(self, other: "EmpiricalLaw") -> np.ndarray:
        """Coordinatewise two-sample KS distances."""
        if other.dim != self.dim:
            raise ValueError("laws have different dimensions")
        return np.array([ks_distance(self.values[:, i], other.values[:, i]) for i in range(self.dim)])
