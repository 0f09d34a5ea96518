"""Stage II: silhouette-based task-specificity of routing vectors.

A domain scores high when its samples' routing vectors form a compact
cluster that is well separated (under cosine distance) from every other
domain's samples. Domains below the threshold can be excluded from
committee extraction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .trace import RoutingTrace
from .util import parallel_map

# Distances this small are floating-point residue of identical vectors;
# snapping keeps the max(a, b) == 0 degenerate convention reachable.
_ZERO_SNAP = 1e-12


def cosine_distance(u: np.ndarray, v: np.ndarray) -> float:
    """1 - cos(u, v), in [0, 1] for non-negative vectors.

    Computed through the squared-cosine ratio so that identical inputs give
    exactly 0.0 rather than rounding residue.
    """
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    uu = float(np.dot(u, u))
    vv = float(np.dot(v, v))
    if uu == 0.0 or vv == 0.0:
        raise ValueError("cosine distance undefined for a zero vector")
    uv = float(np.dot(u, v))
    ratio = (uv * uv) / (uu * vv)
    if ratio >= 1.0:
        return 0.0
    d = 1.0 - math.copysign(math.sqrt(ratio), uv)
    return max(d, 0.0)


@dataclass
class LayerSpecificity:
    layer: int
    sample_scores: np.ndarray  # silhouette per sample, trace order
    sample_domains: np.ndarray  # domain id per sample, trace order
    domain_scores: dict[int, float]  # mean silhouette per participating domain


@dataclass
class SpecificityScores:
    layers: list[LayerSpecificity]
    threshold: float

    def layer(self, layer: int) -> LayerSpecificity:
        return self.layers[layer]


def _pairwise_cosine_distances(vectors: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(vectors, axis=1)
    if np.any(norms == 0.0):
        raise ValueError("cosine distance undefined for a zero vector")
    unit = vectors / norms[:, None]
    dist = 1.0 - unit @ unit.T
    np.clip(dist, 0.0, None, out=dist)
    dist[dist < _ZERO_SNAP] = 0.0
    np.fill_diagonal(dist, 0.0)
    return dist


def silhouette_scores(
    trace: RoutingTrace,
    layer: int,
    *,
    max_samples: int | None = None,
    seed: int = 0,
) -> LayerSpecificity:
    """Silhouette of every sample at one layer, plus per-domain means.

    ``a`` is the mean distance to same-domain samples (excluding self),
    ``b`` the smallest mean distance to any other domain, and the score is
    ``(b - a) / max(a, b)`` with 0 substituted for singleton domains and
    for the all-zero-distance case. Exact over all sample pairs; pass
    ``max_samples`` for a seeded subsample of very large traces.
    """
    vectors = trace.stacked()[:, layer, :]
    domains = trace.domain_ids()
    if max_samples is not None and len(vectors) > max_samples:
        rng = np.random.default_rng(seed)
        keep = np.sort(rng.choice(len(vectors), size=max_samples, replace=False))
        vectors = vectors[keep]
        domains = domains[keep]

    num_domains = trace.header.num_domains
    counts = np.bincount(domains, minlength=num_domains)
    participating = np.nonzero(counts > 0)[0]
    if len(participating) < 2:
        raise ValueError("task-specificity needs at least 2 domains with samples")

    dist = _pairwise_cosine_distances(vectors)
    # Column-group sums: total distance from each sample to each domain.
    group_sums = np.zeros((len(vectors), num_domains), dtype=np.float64)
    for domain_id in participating:
        group_sums[:, domain_id] = dist[:, domains == domain_id].sum(axis=1)

    own_counts = counts[domains]
    own_sums = group_sums[np.arange(len(vectors)), domains]
    with np.errstate(invalid="ignore", divide="ignore"):
        a = np.where(own_counts > 1, own_sums / np.maximum(own_counts - 1, 1), 0.0)

    mean_to_domain = group_sums[:, participating] / counts[participating]
    other = mean_to_domain.copy()
    for column, domain_id in enumerate(participating):
        other[domains == domain_id, column] = np.inf
    b = other.min(axis=1)

    denom = np.maximum(a, b)
    scores = np.zeros(len(vectors), dtype=np.float64)
    usable = (own_counts > 1) & (denom > 0.0)
    scores[usable] = (b[usable] - a[usable]) / denom[usable]

    domain_scores = {int(d): float(scores[domains == d].mean()) for d in participating}
    return LayerSpecificity(
        layer=layer,
        sample_scores=scores,
        sample_domains=domains,
        domain_scores=domain_scores,
    )


def compute_specificity(
    trace: RoutingTrace,
    *,
    threshold: float = 0.0,
    max_samples: int | None = None,
    seed: int = 0,
) -> SpecificityScores:
    layers = parallel_map(
        lambda layer: silhouette_scores(trace, layer, max_samples=max_samples, seed=seed),
        range(trace.header.num_layers),
    )
    return SpecificityScores(layers=layers, threshold=threshold)


def filter_domains(scores: SpecificityScores, layer: int, threshold: float) -> set[int]:
    """Domains whose specificity at ``layer`` reaches the threshold."""
    layer_scores = scores.layer(layer)
    return {d for d, s in layer_scores.domain_scores.items() if s >= threshold}
