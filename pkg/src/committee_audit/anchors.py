"""Token-anchor analysis over committee experts.

Builds the token x expert matrix marking (token, expert) pairs where the
token activates the expert in enough distinct domains to count as a
reliable anchor rather than a one-off routing event.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .committee import top_k_indices
from .trace import RoutingTrace


@dataclass
class AnchorMatrix:
    tokens: list[str]  # rows
    experts: list[int]  # columns (committee members, ascending)
    marked: np.ndarray  # bool (len(tokens), len(experts))
    domain_counts: np.ndarray  # int, distinct domains with an activation
    domain_sets: list[list[list[int]]]  # per-cell sorted domain ids
    min_domains: int
    layer: int | None  # None when activations are unioned over all layers
    missing_tokens: list[str]  # requested tokens never seen in the trace


def _activated(
    vectors: np.ndarray,
    layer: int | None,
    k: int,
    weight_threshold: float | None,
) -> set[int]:
    layers = range(vectors.shape[0]) if layer is None else (layer,)
    hit: set[int] = set()
    for l in layers:
        row = vectors[l]
        if weight_threshold is not None:
            hit.update(int(i) for i in np.nonzero(row >= weight_threshold)[0])
        else:
            hit.update(int(i) for i in top_k_indices(row, k))
    return hit


def anchor_matrix(
    trace: RoutingTrace,
    layer: int | None,
    committee: set[int],
    token_list: list[str],
    min_domains: int = 3,
    *,
    k: int | None = None,
    weight_threshold: float | None = None,
) -> AnchorMatrix:
    """Count, per (token, committee expert), the distinct domains in which
    the token activates the expert; mark cells reaching ``min_domains``.

    A token activates an expert when the expert sits in the top-k of the
    token's routing vector at the given layer (the trace's own budget by
    default), or at any layer when ``layer`` is None. Pass
    ``weight_threshold`` to use a raw-weight cutoff instead of top-k
    membership. Token matching is exact: no normalization or merging.
    """
    if not trace.header.has_tokens:
        raise ValueError("trace carries no token records")
    if not committee:
        raise ValueError("committee must be non-empty")
    if min_domains < 1:
        raise ValueError("min_domains must be >= 1")
    if layer is not None and not 0 <= layer < trace.header.num_layers:
        raise IndexError(f"layer {layer} out of range [0, {trace.header.num_layers})")
    budget = trace.header.routing_budget if k is None else k

    experts = sorted(committee)
    column = {e: j for j, e in enumerate(experts)}
    wanted = set(token_list)
    cells: dict[tuple[str, int], set[int]] = {}
    seen_tokens: set[str] = set()

    for sample in trace.samples:
        for token in sample.tokens:
            if token.text not in wanted:
                continue
            seen_tokens.add(token.text)
            hit = _activated(token.vectors, layer, budget, weight_threshold)
            for expert in hit & committee:
                cells.setdefault((token.text, expert), set()).add(sample.domain_id)

    counts = np.zeros((len(token_list), len(experts)), dtype=np.int64)
    domain_sets: list[list[list[int]]] = []
    for row, text in enumerate(token_list):
        row_sets = []
        for expert in experts:
            domains = sorted(cells.get((text, expert), set()))
            counts[row, column[expert]] = len(domains)
            row_sets.append(domains)
        domain_sets.append(row_sets)

    return AnchorMatrix(
        tokens=list(token_list),
        experts=experts,
        marked=counts >= min_domains,
        domain_counts=counts,
        domain_sets=domain_sets,
        min_domains=min_domains,
        layer=layer,
        missing_tokens=[t for t in token_list if t not in seen_tokens],
    )
