"""Report emission: deterministic CSV/JSON artifacts for every analysis.

Output rules are fixed so identical inputs produce byte-identical files:
comma-separated CSV with a header row, "." decimals, 6-significant-digit
floats, LF endings, UTF-8; JSON with sorted keys and full-precision
floats. Every file opens with a metadata block echoing the tool version,
the configuration, and the convention switches that shaped the numbers.
No timestamps or locale-dependent content ever reach a data file.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .anchors import AnchorMatrix
from .committee import Committee, extract_committees
from .metrics import JaccardReport, LorenzCurve, gini_by_layer, jaccard_report, lorenz_by_layer
from .profiles import TaskProfileSet, compute_profiles
from .specificity import SpecificityScores, compute_specificity
from .sweep import DEFAULT_SWEEP_KS, SweepResult, run_sweep
from .trace import RoutingTrace

CONVENTIONS = {
    "rank_variance": "population",
    "ratio_formula": "committee_vs_periphery_density",
    "rank_tie_break": "ascending_expert_index",
    "domain_average": "unweighted_over_domains",
    "committee_aggregates": "mean_over_members",
    "jaccard_overall": "mean_over_layer_pair_cells",
    "gini_overall": "mean_over_layers",
    "presence_threshold": "inclusive",
    "used_fraction": "member_of_any_domain_top_k",
}


@dataclass
class AuditConfig:
    k_override: int | None = None
    gamma: float = 0.8
    theta_s: float = 0.0
    apply_specificity_filter: bool = False
    sweep_ks: list[int] = field(default_factory=lambda: list(DEFAULT_SWEEP_KS))
    reference_k: int | None = None
    min_domains: int = 3
    output_dir: str = "."
    format: str = "both"  # csv | json | both
    renormalize: bool = False
    anchor_tokens: list[str] | None = None
    anchor_layer: int | None = None  # None: union over layers

    def budget(self, trace: RoutingTrace) -> int:
        return self.k_override if self.k_override is not None else trace.header.routing_budget

    def to_dict(self) -> dict:
        return {
            "k_override": self.k_override,
            "gamma": self.gamma,
            "theta_s": self.theta_s,
            "apply_specificity_filter": self.apply_specificity_filter,
            "sweep_ks": list(self.sweep_ks),
            "reference_k": self.reference_k,
            "min_domains": self.min_domains,
            "format": self.format,
            "renormalize": self.renormalize,
        }


def jsonable(value):
    """Convert to plain JSON-safe types; non-finite floats become strings."""
    if isinstance(value, dict):
        return {str(k): jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple, set, frozenset)):
        items = sorted(value) if isinstance(value, (set, frozenset)) else value
        return [jsonable(v) for v in items]
    if isinstance(value, np.ndarray):
        return [jsonable(v) for v in value.tolist()]
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (np.floating,)):
        value = float(value)
    if isinstance(value, float):
        if math.isinf(value):
            return "inf" if value > 0 else "-inf"
        if math.isnan(value):
            return "nan"
        return value
    if isinstance(value, (np.bool_,)):
        return bool(value)
    return value


def fmt_cell(value) -> str:
    """CSV cell: 6 significant digits for floats, locale-independent."""
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        value = float(value)
        if math.isinf(value):
            return "inf" if value > 0 else "-inf"
        if math.isnan(value):
            return "nan"
        return f"{value:.6g}"
    return str(value)


def metadata_block(config: AuditConfig | None) -> dict:
    return {
        "tool": "committee-audit",
        "tool_version": __version__,
        "config": config.to_dict() if config is not None else None,
        "conventions": CONVENTIONS,
    }


def write_csv(path: Path, columns: list[str], rows: list[list], config: AuditConfig | None) -> None:
    lines = ["# " + json.dumps(metadata_block(config), sort_keys=True)]
    lines.append(",".join(columns))
    for row in rows:
        lines.append(",".join(fmt_cell(cell) for cell in row))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")


def write_json(path: Path, payload: dict, config: AuditConfig | None) -> None:
    document = {"metadata": metadata_block(config), **payload}
    path.write_text(
        json.dumps(jsonable(document), sort_keys=True, indent=2) + "\n",
        encoding="utf-8",
        newline="\n",
    )


def _emit(config: AuditConfig, out_dir: Path, stem: str, columns, rows, payload) -> list[Path]:
    written = []
    if config.format in ("csv", "both"):
        path = out_dir / f"{stem}.csv"
        write_csv(path, columns, rows, config)
        written.append(path)
    if config.format in ("json", "both"):
        path = out_dir / f"{stem}.json"
        write_json(path, payload, config)
        written.append(path)
    return written


# ---------------------------------------------------------------------------
# Per-analysis emitters
# ---------------------------------------------------------------------------

def emit_profiles(profiles: TaskProfileSet, config: AuditConfig, out_dir: Path) -> list[Path]:
    rows = [
        [layer, profiles.domain_names[domain], expert, profiles.eci[layer, domain, expert]]
        for layer in range(profiles.num_layers)
        for domain in range(profiles.num_domains)
        for expert in range(profiles.num_experts)
    ]
    payload = {
        "domains": profiles.domain_names,
        "sample_counts": profiles.sample_counts,
        "eci": profiles.eci,
    }
    return _emit(config, out_dir, "profiles", ["layer", "domain", "expert", "eci"], rows, payload)


def emit_specificity(scores: SpecificityScores, domain_names: list[str], config: AuditConfig, out_dir: Path) -> list[Path]:
    rows = []
    per_layer = {}
    for layer_scores in scores.layers:
        layer_payload = {}
        for domain, value in sorted(layer_scores.domain_scores.items()):
            rows.append([layer_scores.layer, domain_names[domain], value, value >= scores.threshold])
            layer_payload[domain_names[domain]] = value
        per_layer[str(layer_scores.layer)] = layer_payload
    payload = {"threshold": scores.threshold, "scores": per_layer}
    return _emit(config, out_dir, "specificity", ["layer", "domain", "score", "passes"], rows, payload)


def _committee_row(committee: Committee) -> list:
    return [
        committee.layer,
        ";".join(str(m) for m in sorted(committee.members)),
        committee.size,
        committee.avg_mu,
        committee.avg_var,
        committee.eci_coverage,
        committee.ratio,
    ]


def _committee_payload(committee: Committee) -> dict:
    return {
        "layer": committee.layer,
        "members": sorted(committee.members),
        "size": committee.size,
        "avg_mu": committee.avg_mu,
        "avg_var": committee.avg_var,
        "eci_coverage": committee.eci_coverage,
        "ratio": committee.ratio,
        "ratio_uniform_naive": committee.ratio_uniform_naive,
        "candidate_count": committee.candidate_count,
        "active_domains": committee.active_domains,
        "empty_reason": committee.empty_reason,
        "member_stats": [
            {
                "expert": s.expert,
                "presence": s.presence,
                "mean_rank": s.mean_rank,
                "rank_variance": s.rank_variance,
            }
            for s in committee.member_stats
        ],
    }


def emit_committees(committees: list[Committee], config: AuditConfig, out_dir: Path) -> list[Path]:
    columns = ["layer", "members", "size", "avg_mu", "avg_var", "eci_coverage", "ratio"]
    rows = [_committee_row(c) for c in committees]
    payload = {"committees": [_committee_payload(c) for c in committees]}
    return _emit(config, out_dir, "committee", columns, rows, payload)


def emit_metrics(
    jreport: JaccardReport,
    ginis: np.ndarray,
    lorenzes: list[LorenzCurve],
    config: AuditConfig,
    out_dir: Path,
) -> list[Path]:
    written = []
    summary_rows = [
        ["jaccard", "max", jreport.cell_max],
        ["jaccard", "min", jreport.cell_min],
        ["jaccard", "overall", jreport.overall],
        ["jaccard_layer_mean", "max", jreport.layer_mean_max],
        ["jaccard_layer_mean", "min", jreport.layer_mean_min],
        ["gini", "max", float(ginis.max())],
        ["gini", "min", float(ginis.min())],
        ["gini", "overall", float(ginis.mean())],
    ]
    payload = {
        "jaccard": {
            "cell_extrema": {"max": jreport.cell_max, "min": jreport.cell_min},
            "layer_mean_extrema": {"max": jreport.layer_mean_max, "min": jreport.layer_mean_min},
            "overall": jreport.overall,
            "layer_means": jreport.layer_means,
            "per_layer": jreport.per_layer,
        },
        "gini": {
            "per_layer": ginis,
            "max": float(ginis.max()),
            "min": float(ginis.min()),
            "overall": float(ginis.mean()),
        },
        "lorenz": [
            {
                "layer": layer,
                "points": curve.points,
                "gini": curve.gini,
                "used_fraction": curve.used_fraction,
            }
            for layer, curve in enumerate(lorenzes)
        ],
    }
    written += _emit(config, out_dir, "metrics_summary", ["metric", "statistic", "value"], summary_rows, payload)
    if config.format in ("csv", "both"):
        gini_rows = [[layer, float(g)] for layer, g in enumerate(ginis)]
        path = out_dir / "gini.csv"
        write_csv(path, ["layer", "gini"], gini_rows, config)
        written.append(path)
        for layer in range(jreport.per_layer.shape[0]):
            rows = [
                [a, b, jreport.per_layer[layer, a, b]]
                for a in range(jreport.per_layer.shape[1])
                for b in range(jreport.per_layer.shape[2])
            ]
            path = out_dir / f"jaccard_layer_{layer}.csv"
            write_csv(path, ["domain_a", "domain_b", "jaccard"], rows, config)
            written.append(path)
        for layer, curve in enumerate(lorenzes):
            rows = [[x, y] for x, y in curve.points]
            path = out_dir / f"lorenz_layer_{layer}.csv"
            write_csv(path, ["population_share", "contribution_share"], rows, config)
            written.append(path)
    return written


def emit_sweep(result: SweepResult, config: AuditConfig, out_dir: Path) -> list[Path]:
    rows = []
    for k in sorted(result.entries):
        entry = result.entries[k]
        for layer, (retention, coverage, size) in enumerate(
            zip(entry.retention, entry.coverage, entry.sizes)
        ):
            rows.append([k, layer, retention, coverage, size])
    payload = {
        "reference_k": result.reference_k,
        "excluded_layers": result.excluded_layers,
        "per_k": {
            str(k): {
                "mean_retention": entry.mean_retention,
                "retention": entry.retention,
                "coverage": entry.coverage,
                "sizes": entry.sizes,
                "members": [sorted(c.members) for c in entry.committees],
            }
            for k, entry in result.entries.items()
        },
    }
    return _emit(
        config, out_dir, "sweep", ["k", "layer", "retention", "coverage", "committee_size"], rows, payload
    )


def emit_anchors(matrix: AnchorMatrix, config: AuditConfig, out_dir: Path) -> list[Path]:
    written = []
    expert_columns = [f"expert_{e}" for e in matrix.experts]
    if config.format in ("csv", "both"):
        marked_rows = [
            [token] + [int(v) for v in matrix.marked[i]] for i, token in enumerate(matrix.tokens)
        ]
        path = out_dir / "anchors_marked.csv"
        write_csv(path, ["token"] + expert_columns, marked_rows, config)
        written.append(path)
        count_rows = [
            [token] + [int(v) for v in matrix.domain_counts[i]] for i, token in enumerate(matrix.tokens)
        ]
        path = out_dir / "anchors_counts.csv"
        write_csv(path, ["token"] + expert_columns, count_rows, config)
        written.append(path)
    if config.format in ("json", "both"):
        payload = {
            "layer": matrix.layer,
            "min_domains": matrix.min_domains,
            "experts": matrix.experts,
            "tokens": matrix.tokens,
            "missing_tokens": matrix.missing_tokens,
            "cells": [
                {
                    "token": token,
                    "expert": expert,
                    "marked": bool(matrix.marked[i, j]),
                    "domain_count": int(matrix.domain_counts[i, j]),
                    "domains": matrix.domain_sets[i][j],
                }
                for i, token in enumerate(matrix.tokens)
                for j, expert in enumerate(matrix.experts)
            ],
        }
        path = out_dir / "anchors.json"
        write_json(path, payload, config)
        written.append(path)
    return written


# ---------------------------------------------------------------------------
# Full audit
# ---------------------------------------------------------------------------

def run_audit(trace: RoutingTrace, config: AuditConfig, out_dir: Path) -> dict:
    """Run every analysis on one trace and write all artifacts plus a
    combined summary.json; returns the summary payload."""
    out_dir.mkdir(parents=True, exist_ok=True)
    k = config.budget(trace)

    profiles = compute_profiles(trace)
    emit_profiles(profiles, config, out_dir)

    scores = compute_specificity(trace, threshold=config.theta_s)
    emit_specificity(scores, trace.domain_names, config, out_dir)

    committees = extract_committees(
        trace,
        k=k,
        gamma=config.gamma,
        theta_s=config.theta_s,
        apply_specificity_filter=config.apply_specificity_filter,
        profiles=profiles,
    )
    emit_committees(committees, config, out_dir)

    jreport = jaccard_report(profiles, k)
    ginis = gini_by_layer(profiles)
    lorenzes = lorenz_by_layer(profiles, k)
    emit_metrics(jreport, ginis, lorenzes, config, out_dir)

    feasible_ks = [k_ for k_ in config.sweep_ks if 1 <= k_ <= trace.header.num_experts]
    skipped_ks = [k_ for k_ in config.sweep_ks if k_ not in feasible_ks]
    sweep_result = None
    sweep_error = None
    try:
        sweep_result = run_sweep(
            trace,
            feasible_ks,
            config.reference_k if config.reference_k is not None else k,
            gamma=config.gamma,
            theta_s=config.theta_s,
            apply_specificity_filter=config.apply_specificity_filter,
        )
        emit_sweep(sweep_result, config, out_dir)
    except ValueError as exc:
        # keep the full audit usable on traces with no extractable committee
        sweep_error = str(exc)

    anchor_summary = None
    if trace.header.has_tokens:
        tokens = config.anchor_tokens
        if tokens is None:
            tokens = sorted({t.text for s in trace.samples for t in s.tokens})
        members = sorted(set().union(*(c.members for c in committees)) or set())
        if tokens and members:
            from .anchors import anchor_matrix  # local import keeps module load light

            matrix = anchor_matrix(
                trace,
                config.anchor_layer,
                set(members),
                tokens,
                config.min_domains,
                k=k,
            )
            emit_anchors(matrix, config, out_dir)
            anchor_summary = {
                "tokens": len(tokens),
                "experts": members,
                "marked_cells": int(matrix.marked.sum()),
            }

    summary = {
        "trace": {
            "num_experts": trace.header.num_experts,
            "num_layers": trace.header.num_layers,
            "routing_budget": trace.header.routing_budget,
            "num_domains": trace.header.num_domains,
            "num_samples": trace.header.num_samples,
            "domains": trace.domain_names,
        },
        "budget_used": k,
        "committees": [_committee_payload(c) for c in committees],
        "specificity": {
            str(layer.layer): {
                trace.domain_names[d]: v for d, v in sorted(layer.domain_scores.items())
            }
            for layer in scores.layers
        },
        "jaccard_overall": jreport.overall,
        "gini_overall": float(ginis.mean()),
        "sweep_mean_retention": (
            {str(k_): entry.mean_retention for k_, entry in sweep_result.entries.items()}
            if sweep_result is not None
            else None
        ),
        "sweep_error": sweep_error,
        "sweep_ks_skipped": skipped_ks,
        "anchors": anchor_summary,
    }
    write_json(out_dir / "summary.json", summary, config)
    return summary
