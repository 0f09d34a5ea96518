"""Stage I: per-(layer, domain) expert contribution profiles.

The contribution index of expert ``i`` for a domain is the mean routing
weight it receives over that domain's samples, so each (layer, domain)
profile is itself a point on the probability simplex.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .trace import RoutingTrace


@dataclass
class TaskProfileSet:
    eci: np.ndarray  # (num_layers, num_domains, num_experts) float64
    sample_counts: np.ndarray  # (num_domains,) int
    domain_names: list[str]
    default_budget: int  # routing budget carried over from the trace header

    @property
    def num_layers(self) -> int:
        return self.eci.shape[0]

    @property
    def num_domains(self) -> int:
        return self.eci.shape[1]

    @property
    def num_experts(self) -> int:
        return self.eci.shape[2]


def compute_profiles(trace: RoutingTrace) -> TaskProfileSet:
    """Mean routing weight per (layer, domain, expert).

    Accumulation is float64 (numpy's pairwise summation), so profiles stay
    faithful to a naive summation oracle at the 1e-12 level even for large
    sample counts. Raises if any declared domain has no samples.
    """
    stacked = trace.stacked()  # (N, L, E)
    domains = trace.domain_ids()
    num_domains = trace.header.num_domains
    counts = np.bincount(domains, minlength=num_domains)
    for domain_id in np.nonzero(counts == 0)[0]:
        name = trace.domain_names[domain_id]
        raise ValueError(f"domain {int(domain_id)} ({name!r}) has no samples; contribution mean is undefined")

    num_layers, num_experts = trace.header.num_layers, trace.header.num_experts
    eci = np.empty((num_layers, num_domains, num_experts), dtype=np.float64)
    for domain_id in range(num_domains):
        eci[:, domain_id, :] = stacked[domains == domain_id].mean(axis=0)
    return TaskProfileSet(
        eci=eci,
        sample_counts=counts,
        domain_names=list(trace.domain_names),
        default_budget=trace.header.routing_budget,
    )


def global_contribution(
    profiles: TaskProfileSet,
    layer: int,
    *,
    weighting: str = "uniform",
) -> np.ndarray:
    """Average contribution vector across domains at one layer.

    ``uniform`` (the reference behavior) counts each domain once regardless
    of its sample count; ``samples`` weights domains by sample count.
    """
    if not 0 <= layer < profiles.num_layers:
        raise IndexError(f"layer {layer} out of range [0, {profiles.num_layers})")
    if weighting == "uniform":
        return profiles.eci[layer].mean(axis=0)
    if weighting == "samples":
        return np.average(profiles.eci[layer], axis=0, weights=profiles.sample_counts)
    raise ValueError(f"unknown weighting {weighting!r}")
