import io
import struct

import numpy as np
import pytest

from committee_audit.trace import (
    FLAG_TOKENS,
    RoutingTrace,
    SampleRecord,
    TokenRecord,
    TraceFormatError,
    TraceReadError,
    TraceValidationError,
    load_trace,
    read_trace,
    save_trace,
    trace_byte_size,
    validate_trace,
    write_trace,
)
from conftest import build_random_trace


def roundtrip(trace: RoutingTrace, **read_kwargs) -> tuple[RoutingTrace, bytes]:
    buf = io.BytesIO()
    write_trace(trace, buf)
    data = buf.getvalue()
    return read_trace(io.BytesIO(data), **read_kwargs), data


def tiny_trace(weights=(0.25, 0.25, 0.25, 0.25)) -> RoutingTrace:
    sample = SampleRecord(domain_id=0, vectors=np.array([list(weights)]))
    return RoutingTrace.from_samples(1, ["only"], [sample])


def test_identity_roundtrip():
    trace = tiny_trace()
    back, _ = roundtrip(trace)
    assert back == trace


def test_simplex_violation_rejected_on_write():
    trace = tiny_trace((0.3, 0.3, 0.2, 0.1))
    trace.samples[0].vectors[0, 0] = 0.2  # sum 0.9
    with pytest.raises(TraceValidationError, match="simplex"):
        write_trace(trace, io.BytesIO())


def test_seeded_roundtrips_field_and_byte_exact():
    for seed in range(30):
        trace = build_random_trace(seed, with_tokens=seed % 3 == 0)
        back, data = roundtrip(trace)
        assert back == trace
        again = io.BytesIO()
        write_trace(back, again)
        assert again.getvalue() == data
        assert len(data) == trace_byte_size(trace)


def test_bad_magic_rejected():
    _, data = roundtrip(tiny_trace())
    with pytest.raises(TraceFormatError, match="magic"):
        read_trace(io.BytesIO(b"XXXX" + data[4:]))


def test_bad_version_rejected():
    _, data = roundtrip(tiny_trace())
    mangled = data[:4] + struct.pack("<I", 9) + data[8:]
    with pytest.raises(TraceFormatError, match="version"):
        read_trace(io.BytesIO(mangled))


def test_truncation_reports_offset():
    _, data = roundtrip(tiny_trace())
    with pytest.raises(TraceReadError) as err:
        read_trace(io.BytesIO(data[:-3]))
    assert err.value.offset > 0


def test_trailing_bytes_rejected():
    _, data = roundtrip(tiny_trace())
    with pytest.raises(TraceFormatError, match="trailing"):
        read_trace(io.BytesIO(data + b"\x00"))


def test_renormalize_within_tolerance_vector():
    # 1.00005 is inside the on-disk tolerance but still gets renormalized.
    trace = tiny_trace((0.25005, 0.25, 0.25, 0.25))
    back, _ = roundtrip(trace, renormalize=True)
    assert abs(back.samples[0].vectors[0].sum() - 1.0) <= 1e-9
    assert back.renormalized_count == 0


def test_renormalize_repairs_drifted_vector():
    trace = tiny_trace()
    buf = io.BytesIO()
    write_trace(trace, buf)
    data = bytearray(buf.getvalue())
    # Overwrite the first float with 0.3 (sum becomes 1.05, beyond 1e-4).
    block_start = len(data) - 4 * 4
    data[block_start : block_start + 4] = struct.pack("<f", 0.30)
    with pytest.raises(TraceValidationError):
        read_trace(io.BytesIO(bytes(data)))
    repaired = read_trace(io.BytesIO(bytes(data)), renormalize=True)
    assert repaired.renormalized_count == 1
    assert abs(repaired.samples[0].vectors[0].sum() - 1.0) <= 1e-9


def test_validate_clean_trace_is_empty():
    report = validate_trace(build_random_trace(5, with_tokens=True))
    assert report.ok
    assert report.violations == []


def test_validate_token_flag_without_tokens():
    trace = tiny_trace()
    trace.header.flags |= FLAG_TOKENS
    report = validate_trace(trace)
    assert any("token flag without tokens" in v for v in report.violations)
    assert report.violation_counts.get("tokens") == 1


def test_validate_tokens_without_flag():
    trace = tiny_trace()
    trace.samples[0].tokens.append(
        TokenRecord(text="x", vectors=np.array([[0.25, 0.25, 0.25, 0.25]]))
    )
    report = validate_trace(trace)
    assert any("without token flag" in v for v in report.violations)


def test_validate_unused_domain_is_warning_only():
    sample = SampleRecord(domain_id=0, vectors=np.array([[0.5, 0.5]]))
    trace = RoutingTrace.from_samples(1, ["used", "unused"], [sample])
    report = validate_trace(trace)
    assert report.ok
    assert report.warning_counts.get("empty_domain") == 1


def test_file_roundtrip_on_disk(tmp_path):
    trace = build_random_trace(11, with_tokens=True)
    path = tmp_path / "trace.cmta"
    written = save_trace(trace, path)
    assert path.stat().st_size == written == trace_byte_size(trace)
    assert load_trace(path) == trace


def test_negative_weight_rejected_on_read():
    trace = tiny_trace()
    buf = io.BytesIO()
    write_trace(trace, buf)
    data = bytearray(buf.getvalue())
    block_start = len(data) - 4 * 4
    data[block_start : block_start + 4] = struct.pack("<f", -0.25)
    with pytest.raises(TraceValidationError, match="negative"):
        read_trace(io.BytesIO(bytes(data)), renormalize=True)
