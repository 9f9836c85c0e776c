"""Statistical protocol: percentile bootstrap, one-way ANOVA, Tukey HSD.

The bootstrap is the percentile variant (the bias-corrected accelerated
flavour is out of scope and reports are labelled accordingly).  Tukey
adjusted p-values come from a seeded Monte Carlo sample of the studentized
range distribution rather than quadrature; the sampler is independently
checkable against published critical values.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import betainc

__all__ = ["bootstrap_ci", "anova_oneway", "tukey_hsd", "TestResult"]


def bootstrap_ci(samples, iters: int = 10000, rng: np.random.Generator | None = None,
                 alpha: float = 0.05) -> tuple[float, float, float]:
    """Percentile bootstrap CI of the mean: (low, point mean, high)."""
    x = np.asarray(samples, dtype=np.float64)
    if x.ndim != 1 or x.size == 0:
        raise ValueError("bootstrap_ci needs a non-empty 1D sample")
    if rng is None:
        rng = np.random.default_rng(0)
    n = x.size
    idx = rng.integers(0, n, size=(iters, n))
    means = x[idx].mean(axis=1)
    low, high = np.quantile(means, [alpha / 2.0, 1.0 - alpha / 2.0])
    return float(low), float(x.mean()), float(high)


def _f_sf(f: float, d1: int, d2: int) -> float:
    """Upper tail of the F distribution via the regularized incomplete beta."""
    if f <= 0:
        return 1.0
    x = d2 / (d2 + d1 * f)
    return float(betainc(d2 / 2.0, d1 / 2.0, x))


def anova_oneway(groups: list[np.ndarray]) -> tuple[float, float]:
    """Classical one-way F test of equal group means: returns (F, p)."""
    gs = [np.asarray(g, dtype=np.float64) for g in groups]
    if len(gs) < 2:
        raise ValueError("ANOVA needs at least two groups")
    if any(g.size < 2 for g in gs):
        raise ValueError("every group needs at least two observations")
    k = len(gs)
    n_total = sum(g.size for g in gs)
    grand = sum(g.sum() for g in gs) / n_total
    ss_between = sum(g.size * (g.mean() - grand) ** 2 for g in gs)
    ss_within = sum(((g - g.mean()) ** 2).sum() for g in gs)
    df_b = k - 1
    df_w = n_total - k
    if ss_within == 0.0:
        if ss_between == 0.0:
            return 0.0, 1.0
        return float("inf"), 0.0
    f = (ss_between / df_b) / (ss_within / df_w)
    return float(f), _f_sf(f, df_b, df_w)


@dataclass
class TestResult:
    """ANOVA statistic plus Tukey pairwise comparisons."""

    anova_f: float
    anova_p: float
    pairwise: list[tuple[tuple[int, int], float, float]] = field(default_factory=list)


def _studentized_range_draws(k: int, df: int, n_draws: int,
                             rng: np.random.Generator) -> np.ndarray:
    """Monte Carlo sample of the studentized range statistic Q(k, df)."""
    out = np.empty(n_draws, dtype=np.float64)
    chunk = 200_000
    pos = 0
    while pos < n_draws:
        m = min(chunk, n_draws - pos)
        z = rng.standard_normal((m, k))
        rng_span = z.max(axis=1) - z.min(axis=1)
        s = np.sqrt(rng.chisquare(df, size=m) / df)
        out[pos : pos + m] = rng_span / s
        pos += m
    return out


def tukey_hsd(groups: list[np.ndarray], alpha: float = 0.05,
              rng: np.random.Generator | None = None,
              n_draws: int = 200_000) -> TestResult:
    """Tukey-Kramer pairwise comparisons after a one-way ANOVA.

    Adjusted p-values are tail probabilities of the studentized range,
    estimated from ``n_draws`` seeded Monte Carlo samples.
    """
    gs = [np.asarray(g, dtype=np.float64) for g in groups]
    if len(gs) < 2:
        raise ValueError("Tukey HSD needs at least two groups")
    if any(g.size < 2 for g in gs):
        raise ValueError("every group needs at least two observations")
    if rng is None:
        rng = np.random.default_rng(0)
    f, p = anova_oneway(gs)
    k = len(gs)
    df_w = sum(g.size for g in gs) - k
    msw = sum(((g - g.mean()) ** 2).sum() for g in gs) / df_w
    draws = _studentized_range_draws(k, df_w, n_draws, rng)

    pairwise = []
    for i in range(k):
        for j in range(i + 1, k):
            se = np.sqrt(msw / 2.0 * (1.0 / gs[i].size + 1.0 / gs[j].size))
            q = abs(gs[i].mean() - gs[j].mean()) / se if se > 0 else 0.0
            if se == 0.0 and gs[i].mean() != gs[j].mean():
                q = float("inf")
            p_adj = float(np.mean(draws >= q)) if np.isfinite(q) else 0.0
            pairwise.append(((i, j), float(q), p_adj))
    return TestResult(anova_f=f, anova_p=p, pairwise=pairwise)
