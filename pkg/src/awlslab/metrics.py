"""Ranking and optimality-gap metrics for surrogate evaluation."""

from __future__ import annotations

import numpy as np
from scipy import stats


def kendall_tau(a, b) -> float:
    """Kendall tau-b (pairwise concordance with tie correction)."""
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    if a.shape != b.shape or a.ndim != 1 or len(a) < 2:
        raise ValueError("need two aligned 1-d tables of length >= 2")
    t = stats.kendalltau(a, b, variant="b").statistic
    return float(t) if np.isfinite(t) else 0.0


def spearman_rho(a, b) -> float:
    """Spearman rank correlation, average ranks for ties."""
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    if a.shape != b.shape or a.ndim != 1 or len(a) < 2:
        raise ValueError("need two aligned 1-d tables of length >= 2")
    r = stats.spearmanr(a, b).statistic
    return float(r) if np.isfinite(r) else 0.0


def optimality_gap(realized: float, best: float) -> float | None:
    """|eta_hat - eta(x*)| / eta(x*) * 100; None when the max shed is zero."""
    if best <= 0.0:
        return None
    return abs(realized - best) / best * 100.0
