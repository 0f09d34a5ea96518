"""CMTA v1 trace encoder.

Standalone implementation of the trace wire format (the contract shared
with the analysis toolchain): little-endian header
(magic "CMTA", u32 version=1, u32 flags, u32 E, u32 L, u32 k,
u32 num_domains, u64 num_samples), a domain table of u16-length-prefixed
UTF-8 names, then per sample a u32 domain id, L*E float32 weights in
layer-major order, and, when flags bit 0 is set, a u32 token count
followed by length-prefixed token text and another L*E float32 block per
token. The ".meta.json" sidecar carries free-form provenance.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import BinaryIO

import numpy as np

MAGIC = b"CMTA"
VERSION = 1
FLAG_TOKENS = 1

_HEADER = struct.Struct("<4sIIIIIIQ")


@dataclass
class TokenRow:
    text: str
    weights: np.ndarray  # (num_layers, num_experts)


@dataclass
class Sample:
    domain_id: int
    weights: np.ndarray  # (num_layers, num_experts)
    tokens: list[TokenRow] = field(default_factory=list)


def _check_simplex(weights: np.ndarray, where: str) -> None:
    if np.any(weights < 0):
        raise ValueError(f"{where}: negative routing weight")
    drift = np.abs(weights.sum(axis=-1) - 1.0).max()
    if drift > 1e-4:
        raise ValueError(f"{where}: routing weights off the simplex by {drift:.2e}")


def _write_str(sink: BinaryIO, text: str) -> None:
    raw = text.encode("utf-8")
    if len(raw) > 0xFFFF:
        raise ValueError(f"string too long for u16 length prefix: {len(raw)} bytes")
    sink.write(struct.pack("<H", len(raw)))
    sink.write(raw)


def write_cmta(
    sink: BinaryIO,
    *,
    num_experts: int,
    num_layers: int,
    routing_budget: int,
    domain_names: list[str],
    samples: list[Sample],
    with_tokens: bool,
) -> None:
    flags = FLAG_TOKENS if with_tokens else 0
    sink.write(
        _HEADER.pack(
            MAGIC, VERSION, flags, num_experts, num_layers,
            routing_budget, len(domain_names), len(samples),
        )
    )
    for name in domain_names:
        _write_str(sink, name)
    expected_shape = (num_layers, num_experts)
    for index, sample in enumerate(samples):
        if sample.weights.shape != expected_shape:
            raise ValueError(
                f"sample {index}: expected weights {expected_shape}, got {tuple(sample.weights.shape)}"
            )
        _check_simplex(sample.weights, f"sample {index}")
        sink.write(struct.pack("<I", sample.domain_id))
        sink.write(np.ascontiguousarray(sample.weights, dtype="<f4").tobytes())
        if with_tokens:
            sink.write(struct.pack("<I", len(sample.tokens)))
            for token in sample.tokens:
                if token.weights.shape != expected_shape:
                    raise ValueError(f"sample {index}, token {token.text!r}: bad weight shape")
                _check_simplex(token.weights, f"sample {index} token {token.text!r}")
                _write_str(sink, token.text)
                sink.write(np.ascontiguousarray(token.weights, dtype="<f4").tobytes())


def save_trace(
    path: str | Path,
    *,
    num_experts: int,
    num_layers: int,
    routing_budget: int,
    domain_names: list[str],
    samples: list[Sample],
    with_tokens: bool,
    sidecar: dict | None = None,
) -> Path:
    path = Path(path)
    with open(path, "wb") as sink:
        write_cmta(
            sink,
            num_experts=num_experts,
            num_layers=num_layers,
            routing_budget=routing_budget,
            domain_names=domain_names,
            samples=samples,
            with_tokens=with_tokens,
        )
    if sidecar is not None:
        sidecar_path = Path(str(path) + ".meta.json")
        sidecar_path.write_text(json.dumps(sidecar, sort_keys=True, indent=2) + "\n", encoding="utf-8")
    return path
