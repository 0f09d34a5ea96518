"""Extraction jobs: prompts in, CMTA trace + sidecar out."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .domains import DomainMap, load_domain_map
from .format import Sample, TokenRow, save_trace
from .models import ModelAdapter, load_model

POOLING_MODES = ("last_token", "mean")


@dataclass
class ExtractionJob:
    model: str
    prompts_path: str | Path
    map_path: str | Path | None = None
    pooling: str = "last_token"
    capture_tokens: bool = False
    max_samples_per_domain: int | None = None
    output_path: str | Path = "trace.cmta"
    gate_pattern: str | None = None


def load_prompts(path: str | Path) -> list[tuple[str, str]]:
    """Read a JSON-lines prompt file with 'text' and 'subject' fields."""
    prompts = []
    for line_no, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        record = json.loads(line)
        if "text" not in record or "subject" not in record:
            raise ValueError(f"{path}:{line_no}: prompt records need 'text' and 'subject'")
        prompts.append((record["text"], record["subject"]))
    if not prompts:
        raise ValueError(f"{path}: no prompts found")
    return prompts


def _assign_domains(
    prompts: list[tuple[str, str]],
    domain_map: DomainMap,
    cap: int | None,
) -> list[tuple[str, int]]:
    # Resolve every subject before any inference so bad prompt files fail fast.
    assigned = [(text, domain_map.domain_of(subject)) for text, subject in prompts]
    if cap is None:
        return assigned
    kept, counts = [], {}
    for text, domain in assigned:
        if counts.get(domain, 0) < cap:
            counts[domain] = counts.get(domain, 0) + 1
            kept.append((text, domain))
    return kept


def _pool(distributions: np.ndarray, pooling: str) -> np.ndarray:
    # distributions: (L, T, E)
    if pooling == "last_token":
        return distributions[:, -1, :]
    return distributions.mean(axis=1)


def extract(job: ExtractionJob) -> tuple[Path, Path]:
    """Run the job; returns (trace path, sidecar path)."""
    if job.pooling not in POOLING_MODES:
        raise ValueError(f"pooling must be one of {POOLING_MODES}, got {job.pooling!r}")
    prompts = load_prompts(job.prompts_path)
    domain_map = load_domain_map(job.map_path)
    assigned = _assign_domains(prompts, domain_map, job.max_samples_per_domain)

    adapter: ModelAdapter = load_model(job.model, job.gate_pattern)
    samples = []
    for text, domain in assigned:
        tokens, distributions = adapter.capture(text)
        token_rows = []
        if job.capture_tokens:
            token_rows = [
                TokenRow(text=token, weights=distributions[:, position, :])
                for position, token in enumerate(tokens)
            ]
        samples.append(
            Sample(domain_id=domain, weights=_pool(distributions, job.pooling), tokens=token_rows)
        )

    sidecar = {
        "tool": "cmta-extract",
        "tool_version": __version__,
        "model": adapter.model_name,
        "dataset": Path(job.prompts_path).name,
        "pooling": job.pooling,
        "prompt_template": "{text}",
        "shared_experts": adapter.shared_experts,
        "gate_modules": adapter.gate_names,
        "capture_tokens": job.capture_tokens,
    }
    trace_path = save_trace(
        job.output_path,
        num_experts=adapter.num_experts,
        num_layers=adapter.num_layers,
        routing_budget=adapter.routing_budget,
        domain_names=domain_map.domain_names,
        samples=samples,
        with_tokens=job.capture_tokens,
        sidecar=sidecar,
    )
    return trace_path, Path(str(trace_path) + ".meta.json")
