"""Cross-domain sharing and contribution-concentration metrics.

Jaccard overlap of per-domain top-k expert sets measures how much domains
reuse the same experts; the Gini coefficient and Lorenz curve of the
layer's average contribution vector measure how unevenly routing mass is
spread over the expert pool.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .committee import top_k_indices
from .profiles import TaskProfileSet, global_contribution


def topk_set(profiles: TaskProfileSet, layer: int, domain: int, k: int) -> set[int]:
    """The k highest-contribution experts for (layer, domain); ties go to
    the lower expert index."""
    if k > profiles.num_experts:
        raise ValueError(f"budget {k} exceeds expert count {profiles.num_experts}")
    return set(int(i) for i in top_k_indices(profiles.eci[layer, domain], k))


def jaccard(a: set[int], b: set[int]) -> float:
    """|a ∩ b| / |a ∪ b|; undefined (raises) when both sets are empty."""
    union = a | b
    if not union:
        raise ValueError("Jaccard undefined for two empty sets")
    return len(a & b) / len(union)


def gini(contributions: np.ndarray) -> float:
    """Mean absolute contribution difference over twice the mean.

    Evaluated through the sorted pairing identity

        sum_{i<j} (x_(j) - x_(i)) = sum_i (n-1-2i) * (x_(n-1-i) - x_(i))

    whose terms are non-negative, so a uniform vector yields exactly 0.0
    and a one-hot vector exactly (n-1)/n.
    """
    x = np.asarray(contributions, dtype=np.float64)
    if x.ndim != 1 or len(x) == 0:
        raise ValueError("contributions must be a non-empty 1-D vector")
    if np.any(x < 0):
        raise ValueError("contributions must be non-negative")
    total = float(x.sum())
    if total == 0.0:
        raise ValueError("Gini undefined for an all-zero vector")
    n = len(x)
    s = np.sort(x)
    half = n // 2
    coefficients = n - 1 - 2 * np.arange(half, dtype=np.float64)
    pair_gaps = s[n - 1 - np.arange(half)] - s[np.arange(half)]
    return float((coefficients * pair_gaps).sum() / (n * total))


@dataclass
class LorenzCurve:
    points: np.ndarray  # (n+1, 2): (population share, contribution share)
    gini: float
    used_fraction: float

    def area_gini(self) -> float:
        """Gini recomputed from the curve by trapezoid integration."""
        y = self.points[:, 1]
        widths = np.diff(self.points[:, 0])
        area = float(((y[:-1] + y[1:]) / 2.0 * widths).sum())
        return 1.0 - 2.0 * area


def lorenz(contributions: np.ndarray, *, used_fraction: float | None = None) -> LorenzCurve:
    """Cumulative contribution share versus population share.

    Entries are sorted ascending; the curve starts at (0, 0) and ends at
    exactly (1, 1). If ``used_fraction`` is not supplied (no top-k
    structure available) it falls back to the share of entries above a
    tenth of the uniform allocation.
    """
    x = np.asarray(contributions, dtype=np.float64)
    g = gini(x)  # shares input validation
    n = len(x)
    s = np.sort(x)
    cumulative = np.cumsum(s)
    shares = cumulative / cumulative[-1]
    points = np.empty((n + 1, 2), dtype=np.float64)
    points[:, 0] = np.arange(n + 1) / n
    points[0, 1] = 0.0
    points[1:, 1] = shares
    if used_fraction is None:
        used_fraction = float(np.count_nonzero(x > 1.0 / (10.0 * n)) / n)
    return LorenzCurve(points=points, gini=g, used_fraction=used_fraction)


def used_expert_fraction(profiles: TaskProfileSet, layer: int, k: int) -> float:
    """Share of experts inside at least one domain's top-k at this layer."""
    used: set[int] = set()
    for domain in range(profiles.num_domains):
        used |= topk_set(profiles, layer, domain, k)
    return len(used) / profiles.num_experts


@dataclass
class JaccardReport:
    per_layer: np.ndarray  # (L, T, T) symmetric, unit diagonal
    cell_max: float
    cell_min: float
    overall: float  # mean over all layer x unordered-pair cells
    layer_mean_max: float
    layer_mean_min: float
    layer_means: np.ndarray  # (L,)


def jaccard_report(profiles: TaskProfileSet, k: int) -> JaccardReport:
    """All pairwise domain overlaps per layer plus summary statistics.

    The overall figure is the unweighted mean over every layer and
    unordered domain pair (diagonal excluded); extrema are reported both
    over raw cells and over per-layer means since either aggregation is a
    reasonable reading of a summary table.
    """
    num_layers, num_domains = profiles.num_layers, profiles.num_domains
    if num_domains < 2:
        raise ValueError("Jaccard report needs at least 2 domains")
    matrices = np.ones((num_layers, num_domains, num_domains), dtype=np.float64)
    cells = []
    layer_means = np.empty(num_layers, dtype=np.float64)
    for layer in range(num_layers):
        sets = [topk_set(profiles, layer, d, k) for d in range(num_domains)]
        layer_cells = []
        for a in range(num_domains):
            for b in range(a + 1, num_domains):
                value = jaccard(sets[a], sets[b])
                matrices[layer, a, b] = value
                matrices[layer, b, a] = value
                layer_cells.append(value)
        layer_means[layer] = float(np.mean(layer_cells))
        cells.extend(layer_cells)
    cells_arr = np.array(cells)
    return JaccardReport(
        per_layer=matrices,
        cell_max=float(cells_arr.max()),
        cell_min=float(cells_arr.min()),
        overall=float(cells_arr.mean()),
        layer_mean_max=float(layer_means.max()),
        layer_mean_min=float(layer_means.min()),
        layer_means=layer_means,
    )


def gini_by_layer(profiles: TaskProfileSet) -> np.ndarray:
    """Gini of the cross-domain average contribution vector, per layer."""
    return np.array(
        [gini(global_contribution(profiles, layer)) for layer in range(profiles.num_layers)]
    )


def lorenz_by_layer(profiles: TaskProfileSet, k: int) -> list[LorenzCurve]:
    """Lorenz curve of each layer's average contribution vector, with the
    structural used-expert fraction derived from the domain top-k sets."""
    return [
        lorenz(
            global_contribution(profiles, layer),
            used_fraction=used_expert_fraction(profiles, layer, k),
        )
        for layer in range(profiles.num_layers)
    ]
