"""Routing-trace data model and the CMTA v1 binary format.

A trace holds, for every sample, one full routing probability vector per
MoE layer (and optionally one per token). The on-disk layout, all integers
little-endian:

    offset  size  field
    0       4     magic  b"CMTA"
    4       4     u32 version (= 1)
    8       4     u32 flags (bit 0: token records present)
    12      4     u32 num_experts
    16      4     u32 num_layers
    20      4     u32 routing_budget
    24      4     u32 num_domains
    28      8     u64 num_samples

then the domain table (per name: u16 byte length + UTF-8 bytes), then one
record per sample:

    u32 domain_id
    num_layers * num_experts float32 weights, layer-major
    [flags bit 0] u32 token_count, then per token:
        u16 byte length + UTF-8 bytes
        num_layers * num_experts float32 weights, layer-major

Weights are float32 on disk and float64 in memory (the widening conversion
is exact, so write -> read is field-exact and read -> write is byte-exact).
Free-form provenance (pooling mode, model, dataset) lives in an optional
JSON sidecar next to the trace file: same basename plus ".meta.json".
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
SIMPLEX_TOL = 1e-4

_HEADER = struct.Struct("<4sIIIIIIQ")


class TraceFormatError(ValueError):
    """Malformed container: bad magic, wrong version, trailing bytes."""


class TraceValidationError(ValueError):
    """Structurally parseable trace that violates a data invariant."""


class TraceReadError(IOError):
    """Truncated or unreadable payload; carries the failing byte offset."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


@dataclass
class TraceHeader:
    num_experts: int
    num_layers: int
    routing_budget: int
    num_domains: int
    num_samples: int
    flags: int = 0
    version: int = VERSION

    @property
    def has_tokens(self) -> bool:
        return bool(self.flags & FLAG_TOKENS)


@dataclass(eq=False)
class TokenRecord:
    text: str
    vectors: np.ndarray  # (num_layers, num_experts) float64

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, TokenRecord):
            return NotImplemented
        return self.text == other.text and np.array_equal(self.vectors, other.vectors)


@dataclass(eq=False)
class SampleRecord:
    domain_id: int
    vectors: np.ndarray  # (num_layers, num_experts) float64
    tokens: list[TokenRecord] = field(default_factory=list)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, SampleRecord):
            return NotImplemented
        return (
            self.domain_id == other.domain_id
            and np.array_equal(self.vectors, other.vectors)
            and self.tokens == other.tokens
        )


@dataclass(eq=False)
class RoutingTrace:
    header: TraceHeader
    domain_names: list[str]
    samples: list[SampleRecord]
    renormalized_count: int = 0  # vectors repaired on read; not part of identity

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, RoutingTrace):
            return NotImplemented
        return (
            self.header == other.header
            and self.domain_names == other.domain_names
            and self.samples == other.samples
        )

    @classmethod
    def from_samples(
        cls,
        routing_budget: int,
        domain_names: list[str],
        samples: list[SampleRecord],
        *,
        with_tokens: bool | None = None,
    ) -> "RoutingTrace":
        """Build a trace with a header derived from the payload."""
        if not samples:
            raise TraceValidationError("trace needs at least one sample")
        num_layers, num_experts = samples[0].vectors.shape
        if with_tokens is None:
            with_tokens = any(s.tokens for s in samples)
        header = TraceHeader(
            num_experts=num_experts,
            num_layers=num_layers,
            routing_budget=routing_budget,
            num_domains=len(domain_names),
            num_samples=len(samples),
            flags=FLAG_TOKENS if with_tokens else 0,
        )
        return cls(header=header, domain_names=list(domain_names), samples=samples)

    def stacked(self) -> np.ndarray:
        """All sample vectors as one (num_samples, L, E) float64 array."""
        return np.stack([s.vectors for s in self.samples])

    def domain_ids(self) -> np.ndarray:
        return np.array([s.domain_id for s in self.samples], dtype=np.intp)


@dataclass
class ValidationReport:
    violations: list[str] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)
    violation_counts: dict[str, int] = field(default_factory=dict)
    warning_counts: dict[str, int] = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return not self.violations

    def _add(self, kind: str, category: str, message: str) -> None:
        if kind == "violation":
            self.violations.append(message)
            self.violation_counts[category] = self.violation_counts.get(category, 0) + 1
        else:
            self.warnings.append(message)
            self.warning_counts[category] = self.warning_counts.get(category, 0) + 1

    def to_dict(self) -> dict:
        return {
            "ok": self.ok,
            "violations": self.violations,
            "warnings": self.warnings,
            "violation_counts": self.violation_counts,
            "warning_counts": self.warning_counts,
        }


def _check_vector_block(report: ValidationReport, vectors: np.ndarray, where: str, header: TraceHeader) -> None:
    expected = (header.num_layers, header.num_experts)
    if vectors.shape != expected:
        report._add("violation", "shape", f"{where}: expected shape {expected}, got {tuple(vectors.shape)}")
        return
    if np.any(vectors < 0):
        layer = int(np.argwhere(vectors < 0)[0][0])
        report._add("violation", "simplex", f"{where}[layer {layer}]: negative weight")
    sums = vectors.sum(axis=1)
    bad = np.abs(sums - 1.0) > SIMPLEX_TOL
    for layer in np.nonzero(bad)[0]:
        report._add(
            "violation",
            "simplex",
            f"{where}[layer {int(layer)}]: weights sum {sums[layer]:.6f}, off the simplex by more than {SIMPLEX_TOL:g}",
        )


def validate_trace(trace: RoutingTrace) -> ValidationReport:
    """Check every data invariant; violations are errors, unused domains warn."""
    report = ValidationReport()
    h = trace.header

    if h.version != VERSION:
        report._add("violation", "header", f"header.version: expected {VERSION}, got {h.version}")
    if h.num_experts < 2:
        report._add("violation", "header", f"header.num_experts: must be >= 2, got {h.num_experts}")
    if h.num_layers < 1:
        report._add("violation", "header", f"header.num_layers: must be >= 1, got {h.num_layers}")
    if not 1 <= h.routing_budget <= h.num_experts:
        report._add(
            "violation",
            "header",
            f"header.routing_budget: must be in [1, {h.num_experts}], got {h.routing_budget}",
        )
    if h.num_domains < 1:
        report._add("violation", "header", f"header.num_domains: must be >= 1, got {h.num_domains}")
    if len(trace.domain_names) != h.num_domains:
        report._add(
            "violation",
            "header",
            f"domain_names: header declares {h.num_domains} domains, table has {len(trace.domain_names)}",
        )
    if len(trace.samples) != h.num_samples:
        report._add(
            "violation",
            "header",
            f"samples: header declares {h.num_samples} samples, payload has {len(trace.samples)}",
        )

    seen_domains: set[int] = set()
    total_tokens = 0
    for idx, sample in enumerate(trace.samples):
        where = f"samples[{idx}]"
        if not 0 <= sample.domain_id < h.num_domains:
            report._add("violation", "domain", f"{where}.domain_id: {sample.domain_id} out of range [0, {h.num_domains})")
        else:
            seen_domains.add(sample.domain_id)
        _check_vector_block(report, sample.vectors, f"{where}.vectors", h)
        if sample.tokens and not h.has_tokens:
            report._add("violation", "tokens", f"{where}: tokens present without token flag")
        for tidx, token in enumerate(sample.tokens):
            total_tokens += 1
            _check_vector_block(report, token.vectors, f"{where}.tokens[{tidx}].vectors", h)

    if h.has_tokens and total_tokens == 0:
        report._add("violation", "tokens", "token flag without tokens")

    for domain_id in range(h.num_domains):
        if domain_id not in seen_domains:
            name = trace.domain_names[domain_id] if domain_id < len(trace.domain_names) else str(domain_id)
            report._add("warning", "empty_domain", f"domain {domain_id} ({name!r}) has no samples")

    return report


def trace_byte_size(trace: RoutingTrace) -> int:
    """Exact serialized size, derivable from header fields and string lengths."""
    h = trace.header
    block = 4 * h.num_layers * h.num_experts
    size = _HEADER.size + sum(2 + len(name.encode("utf-8")) for name in trace.domain_names)
    for sample in trace.samples:
        size += 4 + block
        if h.has_tokens:
            size += 4 + sum(2 + len(t.text.encode("utf-8")) + block for t in sample.tokens)
    return size


def _write_str(sink: BinaryIO, text: str) -> int:
    raw = text.encode("utf-8")
    if len(raw) > 0xFFFF:
        raise TraceValidationError(f"string too long for u16 length prefix: {len(raw)} bytes")
    sink.write(struct.pack("<H", len(raw)))
    sink.write(raw)
    return 2 + len(raw)


def write_trace(trace: RoutingTrace, sink: BinaryIO) -> int:
    """Serialize to the CMTA v1 layout; returns the byte count written."""
    report = validate_trace(trace)
    if not report.ok:
        raise TraceValidationError(report.violations[0])

    h = trace.header
    written = 0
    sink.write(
        _HEADER.pack(
            MAGIC, h.version, h.flags, h.num_experts, h.num_layers,
            h.routing_budget, h.num_domains, h.num_samples,
        )
    )
    written += _HEADER.size
    for name in trace.domain_names:
        written += _write_str(sink, name)
    for sample in trace.samples:
        sink.write(struct.pack("<I", sample.domain_id))
        block = np.ascontiguousarray(sample.vectors, dtype="<f4").tobytes()
        sink.write(block)
        written += 4 + len(block)
        if h.has_tokens:
            sink.write(struct.pack("<I", len(sample.tokens)))
            written += 4
            for token in sample.tokens:
                written += _write_str(sink, token.text)
                tblock = np.ascontiguousarray(token.vectors, dtype="<f4").tobytes()
                sink.write(tblock)
                written += len(tblock)
    return written


class _Reader:
    def __init__(self, source: BinaryIO):
        self.source = source
        self.offset = 0

    def take(self, n: int, what: str) -> bytes:
        data = self.source.read(n)
        if len(data) != n:
            raise TraceReadError(f"truncated trace while reading {what}", self.offset)
        self.offset += n
        return data

    def u16(self, what: str) -> int:
        return struct.unpack("<H", self.take(2, what))[0]

    def u32(self, what: str) -> int:
        return struct.unpack("<I", self.take(4, what))[0]


def _read_vectors(reader: _Reader, num_layers: int, num_experts: int, what: str) -> np.ndarray:
    raw = reader.take(4 * num_layers * num_experts, what)
    return np.frombuffer(raw, dtype="<f4").reshape(num_layers, num_experts).astype(np.float64)


def _repair_simplex(vectors: np.ndarray, where: str, renormalize: bool) -> tuple[np.ndarray, int]:
    if np.any(vectors < 0):
        raise TraceValidationError(f"{where}: negative weight")
    sums = vectors.sum(axis=1)
    drifted = int(np.count_nonzero(np.abs(sums - 1.0) > SIMPLEX_TOL))
    if drifted and not renormalize:
        layer = int(np.nonzero(np.abs(sums - 1.0) > SIMPLEX_TOL)[0][0])
        raise TraceValidationError(
            f"{where}[layer {layer}]: weights sum {sums[layer]:.6f}, off the simplex by more than {SIMPLEX_TOL:g}"
        )
    if renormalize:
        if np.any(sums == 0.0):
            raise TraceValidationError(f"{where}: zero-sum vector cannot be renormalized")
        vectors = vectors / sums[:, None]
    return vectors, drifted


def read_trace(source: BinaryIO, *, renormalize: bool = False) -> RoutingTrace:
    """Parse a CMTA v1 byte stream.

    With ``renormalize`` every vector is divided by its sum (restoring exact
    simplex membership) and vectors whose drift exceeded the on-disk
    tolerance are counted in ``renormalized_count`` instead of rejected.
    """
    reader = _Reader(source)
    raw_header = reader.take(_HEADER.size, "header")
    magic, version, flags, num_experts, num_layers, routing_budget, num_domains, num_samples = _HEADER.unpack(raw_header)
    if magic != MAGIC:
        raise TraceFormatError(f"bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise TraceFormatError(f"unsupported version {version}, expected {VERSION}")
    header = TraceHeader(
        num_experts=num_experts,
        num_layers=num_layers,
        routing_budget=routing_budget,
        num_domains=num_domains,
        num_samples=num_samples,
        flags=flags,
        version=version,
    )
    probe = validate_trace(RoutingTrace(header=header, domain_names=[""] * num_domains, samples=[]))
    header_violations = [v for v in probe.violations if v.startswith("header.")]
    if header_violations:
        raise TraceValidationError(header_violations[0])

    domain_names = []
    for i in range(num_domains):
        length = reader.u16(f"domain name {i}")
        domain_names.append(reader.take(length, f"domain name {i}").decode("utf-8"))

    repaired = 0
    samples = []
    for i in range(num_samples):
        domain_id = reader.u32(f"samples[{i}].domain_id")
        if domain_id >= num_domains:
            raise TraceValidationError(f"samples[{i}].domain_id: {domain_id} out of range [0, {num_domains})")
        vectors = _read_vectors(reader, num_layers, num_experts, f"samples[{i}].vectors")
        vectors, drifted = _repair_simplex(vectors, f"samples[{i}].vectors", renormalize)
        repaired += drifted
        tokens = []
        if header.has_tokens:
            count = reader.u32(f"samples[{i}].token_count")
            for t in range(count):
                length = reader.u16(f"samples[{i}].tokens[{t}].text")
                text = reader.take(length, f"samples[{i}].tokens[{t}].text").decode("utf-8")
                tvecs = _read_vectors(reader, num_layers, num_experts, f"samples[{i}].tokens[{t}].vectors")
                tvecs, drifted = _repair_simplex(tvecs, f"samples[{i}].tokens[{t}].vectors", renormalize)
                repaired += drifted
                tokens.append(TokenRecord(text=text, vectors=tvecs))
        samples.append(SampleRecord(domain_id=domain_id, vectors=vectors, tokens=tokens))

    if source.read(1):
        raise TraceFormatError(f"trailing data after last sample (expected EOF at byte {reader.offset})")

    return RoutingTrace(
        header=header,
        domain_names=domain_names,
        samples=samples,
        renormalized_count=repaired,
    )


def save_trace(trace: RoutingTrace, path: str | Path) -> int:
    with open(path, "wb") as f:
        return write_trace(trace, f)


def load_trace(path: str | Path, *, renormalize: bool = False) -> RoutingTrace:
    with open(path, "rb") as f:
        return read_trace(f, renormalize=renormalize)


def sidecar_path(trace_path: str | Path) -> Path:
    return Path(str(trace_path) + ".meta.json")


def write_sidecar(trace_path: str | Path, metadata: dict) -> Path:
    path = sidecar_path(trace_path)
    path.write_text(json.dumps(metadata, sort_keys=True, indent=2) + "\n", encoding="utf-8")
    return path


def read_sidecar(trace_path: str | Path) -> dict | None:
    path = sidecar_path(trace_path)
    if not path.exists():
        return None
    return json.loads(path.read_text(encoding="utf-8"))
