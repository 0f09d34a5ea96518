"""Routing-budget sensitivity sweep.

Traces store full routing distributions, so committees can be re-extracted
under any budget k without touching the model; retention scores how much
of the reference-budget committee survives each alternative budget.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .committee import (
    DEFAULT_GAMMA,
    DEFAULT_THETA_S,
    Committee,
    committees_from_profiles,
)
from .profiles import compute_profiles
from .specificity import compute_specificity, filter_domains
from .trace import RoutingTrace

DEFAULT_SWEEP_KS = (4, 6, 8, 12, 16)


@dataclass
class BudgetEntry:
    k: int
    committees: list[Committee]
    retention: list[float | None]  # None where the reference committee is empty
    mean_retention: float
    coverage: list[float]
    sizes: list[int]


@dataclass
class SweepResult:
    reference_k: int
    entries: dict[int, BudgetEntry]
    excluded_layers: list[int]  # layers with an empty reference committee


def _retention(current: Committee, reference: Committee) -> float | None:
    if not reference.members:
        return None
    return len(current.members & reference.members) / len(reference.members)


def run_sweep(
    trace: RoutingTrace,
    k_values: list[int],
    reference_k: int | None = None,
    *,
    gamma: float = DEFAULT_GAMMA,
    theta_s: float = DEFAULT_THETA_S,
    apply_specificity_filter: bool = False,
) -> SweepResult:
    """Extract committees at every budget and score retention against the
    reference budget. Layers whose reference committee is empty are
    excluded from retention means rather than scored zero."""
    if reference_k is None:
        reference_k = trace.header.routing_budget
    budgets = sorted(set(k_values) | {reference_k})
    for k in budgets:
        if not 1 <= k <= trace.header.num_experts:
            raise ValueError(f"budget {k} out of range [1, {trace.header.num_experts}]")

    profiles = compute_profiles(trace)
    active = None
    if apply_specificity_filter:
        scores = compute_specificity(trace, threshold=theta_s)
        active = [
            sorted(filter_domains(scores, layer, theta_s))
            for layer in range(trace.header.num_layers)
        ]

    per_budget = {
        k: committees_from_profiles(profiles, k=k, gamma=gamma, active_domains_per_layer=active)
        for k in budgets
    }
    reference = per_budget[reference_k]
    excluded = [c.layer for c in reference if not c.members]
    if len(excluded) == trace.header.num_layers:
        raise ValueError(f"no reference committee: all layers empty at k={reference_k}")

    entries = {}
    for k in budgets:
        committees = per_budget[k]
        retention = [_retention(c, r) for c, r in zip(committees, reference)]
        counted = [r for r in retention if r is not None]
        entries[k] = BudgetEntry(
            k=k,
            committees=committees,
            retention=retention,
            mean_retention=float(np.mean(counted)),
            coverage=[c.eci_coverage if c.eci_coverage is not None else 0.0 for c in committees],
            sizes=[c.size for c in committees],
        )
    return SweepResult(reference_k=reference_k, entries=entries, excluded_layers=excluded)
