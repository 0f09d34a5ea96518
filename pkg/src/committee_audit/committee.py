"""Stage III: cross-domain expert ranking and Pareto committee extraction.

Experts are ranked 1..k per domain by contribution (rank k+1 outside the
top-k), experts present in enough domains' top-k become consensus
candidates, and the committee is the Pareto front of candidates under
minimization of (mean rank, rank variance).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .profiles import TaskProfileSet, compute_profiles, global_contribution
from .specificity import compute_specificity, filter_domains
from .trace import RoutingTrace
from .util import parallel_map

DEFAULT_GAMMA = 0.8
DEFAULT_THETA_S = 0.0


def top_k_indices(values: np.ndarray, k: int) -> np.ndarray:
    """Indices of the k largest entries, descending; ties broken by
    ascending index so rankings are reproducible across platforms."""
    order = np.lexsort((np.arange(len(values)), -np.asarray(values, dtype=np.float64)))
    return order[:k]


def rank_experts(profiles: TaskProfileSet, layer: int, k: int) -> np.ndarray:
    """Per-domain ranks at one layer: (num_domains, num_experts) ints.

    Rank 1 is the highest contribution; experts outside a domain's top-k
    all hold the penalty rank k+1.
    """
    if k > profiles.num_experts:
        raise ValueError(f"budget {k} exceeds expert count {profiles.num_experts}")
    num_domains, num_experts = profiles.num_domains, profiles.num_experts
    ranks = np.full((num_domains, num_experts), k + 1, dtype=np.int64)
    for domain_id in range(num_domains):
        top = top_k_indices(profiles.eci[layer, domain_id], k)
        ranks[domain_id, top] = np.arange(1, k + 1)
    return ranks


@dataclass
class CandidateStats:
    expert: int
    presence: float  # fraction of domains with rank <= k
    mean_rank: float
    rank_variance: float  # population variance over all domains


def candidate_set(ranks: np.ndarray, k: int, gamma: float) -> list[CandidateStats]:
    """Consensus candidates: experts in the top-k of at least a ``gamma``
    fraction of domains (inclusive), with rank mean/variance taken over all
    domains, penalty ranks included."""
    if not 0.0 <= gamma <= 1.0:
        raise ValueError(f"gamma must be in [0, 1], got {gamma}")
    num_domains = ranks.shape[0]
    in_top = ranks <= k
    presence = in_top.sum(axis=0) / num_domains
    means = ranks.mean(axis=0)
    variances = ranks.var(axis=0)
    return [
        CandidateStats(
            expert=int(i),
            presence=float(presence[i]),
            mean_rank=float(means[i]),
            rank_variance=float(variances[i]),
        )
        for i in np.nonzero(presence >= gamma)[0]
    ]


def pareto_front(candidates: list[CandidateStats]) -> set[int]:
    """Experts not dominated on (mean_rank, rank_variance), both minimized.

    A candidate is dominated when another is no worse on both objectives
    and strictly better on at least one; exact ties on both are all kept.
    """
    if not candidates:
        return set()
    ordered = sorted(candidates, key=lambda c: (c.mean_rank, c.rank_variance, c.expert))
    front: set[int] = set()
    best_var_strictly_before = math.inf  # min variance over strictly smaller means
    i = 0
    while i < len(ordered):
        j = i
        while j < len(ordered) and ordered[j].mean_rank == ordered[i].mean_rank:
            j += 1
        group_min_var = ordered[i].rank_variance  # group sorted by variance
        for candidate in ordered[i:j]:
            if candidate.rank_variance == group_min_var and candidate.rank_variance < best_var_strictly_before:
                front.add(candidate.expert)
        best_var_strictly_before = min(best_var_strictly_before, group_min_var)
        i = j
    return front


def influence_ratio(coverage: float, committee_size: int, num_experts: int) -> float:
    """Per-member contribution density of the committee relative to the
    per-member density of everything outside it."""
    if committee_size <= 0:
        raise ValueError("committee_size must be positive")
    if not 0 <= committee_size <= num_experts:
        raise ValueError("committee_size out of range")
    inside = coverage / committee_size
    remaining = num_experts - committee_size
    if remaining == 0:
        return 1.0 if coverage == 1.0 else math.inf
    outside = (1.0 - coverage) / remaining
    if outside <= 0.0:
        return math.inf
    return inside / outside


def uniform_ratio(coverage: float, committee_size: int, num_experts: int) -> float:
    """Naive alternative: committee per-member density over 1/num_experts."""
    return coverage * num_experts / committee_size


def committee_stats(
    members: set[int],
    profiles: TaskProfileSet,
    layer: int,
    *,
    domain_subset: list[int] | None = None,
) -> tuple[float, float]:
    """(coverage, ratio) of a member set at one layer.

    Coverage is the summed global contribution of members; the ratio
    compares member and non-member per-expert contribution densities.
    """
    if not members:
        raise ValueError("committee_stats needs a non-empty member set")
    num_experts = profiles.num_experts
    if any(not 0 <= m < num_experts for m in members):
        raise ValueError("member index out of range")
    if domain_subset is None:
        contribution = global_contribution(profiles, layer)
    else:
        contribution = profiles.eci[layer, sorted(domain_subset), :].mean(axis=0)
    coverage = float(contribution[sorted(members)].sum())
    return coverage, influence_ratio(coverage, len(members), num_experts)


@dataclass
class Committee:
    layer: int
    members: set[int]
    member_stats: list[CandidateStats] = field(default_factory=list)
    avg_mu: float | None = None
    avg_var: float | None = None
    eci_coverage: float | None = None
    ratio: float | None = None
    ratio_uniform_naive: float | None = None
    active_domains: list[int] = field(default_factory=list)
    candidate_count: int = 0
    empty_reason: str | None = None

    @property
    def size(self) -> int:
        return len(self.members)


def _committee_for_layer(
    profiles: TaskProfileSet,
    layer: int,
    k: int,
    gamma: float,
    active_domains: list[int],
) -> Committee:
    if not active_domains:
        return Committee(
            layer=layer,
            members=set(),
            active_domains=[],
            empty_reason="all domains filtered out by the specificity threshold",
        )
    if sorted(active_domains) == list(range(profiles.num_domains)):
        layer_profiles = profiles
        subset: list[int] | None = None
    else:
        subset = sorted(active_domains)
        layer_profiles = TaskProfileSet(
            eci=profiles.eci[:, subset, :],
            sample_counts=profiles.sample_counts[subset],
            domain_names=[profiles.domain_names[d] for d in subset],
            default_budget=profiles.default_budget,
        )
    ranks = rank_experts(layer_profiles, layer, k)
    candidates = candidate_set(ranks, k, gamma)
    members = pareto_front(candidates)
    if not members:
        return Committee(
            layer=layer,
            members=set(),
            active_domains=sorted(active_domains),
            candidate_count=len(candidates),
            empty_reason="no expert met the cross-domain presence threshold",
        )
    stats = sorted((c for c in candidates if c.expert in members), key=lambda c: c.expert)
    coverage, ratio = committee_stats(members, profiles, layer, domain_subset=subset)
    return Committee(
        layer=layer,
        members=members,
        member_stats=stats,
        avg_mu=float(np.mean([c.mean_rank for c in stats])),
        avg_var=float(np.mean([c.rank_variance for c in stats])),
        eci_coverage=coverage,
        ratio=ratio,
        ratio_uniform_naive=uniform_ratio(coverage, len(members), profiles.num_experts),
        active_domains=sorted(active_domains),
        candidate_count=len(candidates),
    )


def committees_from_profiles(
    profiles: TaskProfileSet,
    *,
    k: int,
    gamma: float = DEFAULT_GAMMA,
    active_domains_per_layer: list[list[int]] | None = None,
) -> list[Committee]:
    all_domains = list(range(profiles.num_domains))

    def one_layer(layer: int) -> Committee:
        active = all_domains if active_domains_per_layer is None else active_domains_per_layer[layer]
        return _committee_for_layer(profiles, layer, k, gamma, active)

    return parallel_map(one_layer, range(profiles.num_layers))


def extract_committees(
    trace: RoutingTrace,
    *,
    k: int | None = None,
    gamma: float = DEFAULT_GAMMA,
    theta_s: float = DEFAULT_THETA_S,
    apply_specificity_filter: bool = False,
    profiles: TaskProfileSet | None = None,
) -> list[Committee]:
    """Full pipeline: profiles, optional specificity gate, ranks,
    candidates, Pareto front, one committee per layer."""
    if trace.header.num_domains < 2:
        raise ValueError("committee extraction needs at least 2 domains")
    if profiles is None:
        profiles = compute_profiles(trace)
    budget = trace.header.routing_budget if k is None else k
    active: list[list[int]] | None = None
    if apply_specificity_filter:
        scores = compute_specificity(trace, threshold=theta_s)
        active = [
            sorted(filter_domains(scores, layer, theta_s))
            for layer in range(trace.header.num_layers)
        ]
    return committees_from_profiles(profiles, k=budget, gamma=gamma, active_domains_per_layer=active)
