"""Rank-agreement and significance statistics.

Spearman correlation with average-rank ties, Welch's unequal-variance
t-test with a continued-fraction regularized incomplete beta for the
p-value, and Jaccard similarity for top-k feature sets. Everything here
is dependency-free and pure.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np


class StatsError(ValueError):
    pass


def rank_with_ties(values: Sequence[float]) -> np.ndarray:
    """1-based ranks, equal values share the average of their ranks."""
    x = np.asarray(values, dtype=np.float64)
    order = np.argsort(x, kind="mergesort")
    ranks = np.empty(len(x), dtype=np.float64)
    i = 0
    while i < len(x):
        j = i
        while j + 1 < len(x) and x[order[j + 1]] == x[order[i]]:
            j += 1
        mean_rank = 0.5 * (i + j) + 1.0
        for q in range(i, j + 1):
            ranks[order[q]] = mean_rank
        i = j + 1
    return ranks


def spearman_rho(x: Sequence[float], y: Sequence[float]) -> float:
    """Pearson correlation of average-tie ranks, in [-1, 1]."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if len(x) != len(y):
        raise StatsError("inputs must have equal length")
    if len(x) < 2:
        raise StatsError("need at least 2 observations")
    if (x == x[0]).all() or (y == y[0]).all():
        raise StatsError("correlation undefined for a constant vector")
    rx = rank_with_ties(x)
    ry = rank_with_ties(y)
    rx -= rx.mean()
    ry -= ry.mean()
    denom = math.sqrt(float(rx @ rx) * float(ry @ ry))
    rho = float(rx @ ry) / denom
    return max(-1.0, min(1.0, rho))


_BETA_TOL = 1e-10
_BETA_MAX_ITER = 500


def _betacf(a: float, b: float, x: float) -> float:
    """Continued fraction for the incomplete beta (modified Lentz)."""
    tiny = 1e-300
    qab = a + b
    qap = a + 1.0
    qam = a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < tiny:
        d = tiny
    d = 1.0 / d
    h = d
    for m in range(1, _BETA_MAX_ITER + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _BETA_TOL:
            return h
    raise StatsError("incomplete beta did not converge")


def regularized_incomplete_beta(a: float, b: float, x: float) -> float:
    """I_x(a, b) for a, b > 0 and x in [0, 1]."""
    if a <= 0 or b <= 0:
        raise StatsError("beta parameters must be positive")
    if x < 0 or x > 1:
        raise StatsError("x out of [0, 1]")
    if x == 0.0 or x == 1.0:
        return x
    ln_front = (
        math.lgamma(a + b)
        - math.lgamma(a)
        - math.lgamma(b)
        + a * math.log(x)
        + b * math.log1p(-x)
    )
    front = math.exp(ln_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def student_t_sf_two_sided(t: float, df: float) -> float:
    """P(|T| >= |t|) for Student's t with ``df`` degrees of freedom."""
    if df <= 0:
        raise StatsError("degrees of freedom must be positive")
    if t == 0.0:
        return 1.0
    x = df / (df + t * t)
    return regularized_incomplete_beta(0.5 * df, 0.5, x)


@dataclass(frozen=True)
class WelchResult:
    t: float
    df: float
    p_two_sided: float

    def to_dict(self) -> dict:
        return {"t": self.t, "df": self.df, "p_two_sided": self.p_two_sided}


def welch_t(a: Sequence[float], b: Sequence[float]) -> WelchResult:
    """Welch's unequal-variance t-test (two-sided).

    Degrees of freedom via Welch-Satterthwaite. Two zero-variance groups
    with equal means give t = 0 by convention; a zero denominator with
    differing means is an error.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    na, nb = len(a), len(b)
    if na < 2 or nb < 2:
        raise StatsError("each group needs at least 2 observations")
    ma, mb = float(a.mean()), float(b.mean())
    va = float(a.var(ddof=1))
    vb = float(b.var(ddof=1))
    sea = va / na
    seb = vb / nb
    denom_sq = sea + seb
    if denom_sq == 0.0:
        if ma == mb:
            return WelchResult(t=0.0, df=float(na + nb - 2), p_two_sided=1.0)
        raise StatsError("zero variance in both groups with differing means")
    t = (ma - mb) / math.sqrt(denom_sq)
    df = denom_sq * denom_sq / (sea * sea / (na - 1) + seb * seb / (nb - 1))
    return WelchResult(t=t, df=df, p_two_sided=student_t_sf_two_sided(t, df))


def set_jaccard(a: Iterable, b: Iterable) -> float:
    """|a intersect b| / |a union b|; two empty sets count as identical."""
    sa, sb = set(a), set(b)
    if not sa and not sb:
        return 1.0
    return len(sa & sb) / len(sa | sb)
