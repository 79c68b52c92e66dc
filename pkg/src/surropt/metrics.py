"""Evaluation metrics: average number of calls and average minimum objective.

Episodes supply ``total_calls`` and ``objective_trace_at_calls`` (one oracle
objective value per simulator call, in call order).
"""
from dataclasses import dataclass

import numpy as np

__all__ = ["compute_anc", "compute_amo", "amo_curve", "metrics_report",
           "AmoPoint", "MetricsReport"]


@dataclass
class AmoPoint:
    k: int
    value: float
    std: float
    vmin: float
    vmax: float
    contributors: int


@dataclass
class MetricsReport:
    anc: float
    anc_std: float
    anc_min: int
    anc_max: int
    amo: list
    episode_count: int


def compute_anc(episodes):
    """Mean total_calls over all evaluation episodes (pooled over seeds)."""
    episodes = list(episodes)
    if not episodes:
        raise ValueError("ANC of an empty episode set")
    return float(np.mean([e.total_calls for e in episodes]))


def compute_amo(episodes, k):
    """Mean over episodes with >= k calls of min(first k call-time objectives).

    Returns None when no episode contributes.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    mins = [min(e.objective_trace_at_calls[:k]) for e in episodes
            if e.total_calls >= k]
    if not mins:
        return None
    return float(np.mean(mins))


def amo_curve(episodes):
    episodes = list(episodes)
    max_k = max((e.total_calls for e in episodes), default=0)
    curve = []
    for k in range(1, max_k + 1):
        mins = [min(e.objective_trace_at_calls[:k]) for e in episodes
                if e.total_calls >= k]
        if not mins:
            continue
        curve.append(AmoPoint(k=k, value=float(np.mean(mins)),
                              std=float(np.std(mins)), vmin=float(np.min(mins)),
                              vmax=float(np.max(mins)), contributors=len(mins)))
    return curve


def metrics_report(episodes):
    episodes = list(episodes)
    calls = [e.total_calls for e in episodes]
    return MetricsReport(anc=compute_anc(episodes),
                         anc_std=float(np.std(calls)),
                         anc_min=int(np.min(calls)),
                         anc_max=int(np.max(calls)),
                         amo=amo_curve(episodes),
                         episode_count=len(episodes))
