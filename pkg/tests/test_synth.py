import io
import json

import numpy as np
import pytest

from committee_audit.committee import candidate_set, rank_experts
from committee_audit.metrics import jaccard_report
from committee_audit.profiles import compute_profiles
from committee_audit.synth import SeededStream, SynthSpec, TokenPlant, generate, generate_disjoint
from committee_audit.trace import validate_trace, write_trace


def test_full_committee_mass_is_fully_determined():
    spec = SynthSpec(
        num_experts=6, num_layers=2, routing_budget=2, num_domains=3,
        samples_per_domain=4, planted_committee=(0, 1), committee_mass=1.0, seed=9,
    )
    trace = generate(spec)
    expected = np.array([0.5, 0.5, 0.0, 0.0, 0.0, 0.0])
    for sample in trace.samples:
        assert np.array_equal(sample.vectors, np.tile(expected, (2, 1)))


def test_fixed_seed_is_byte_deterministic():
    spec = SynthSpec(
        num_experts=12, num_layers=2, routing_budget=3, num_domains=4,
        samples_per_domain=6, planted_committee=(2, 5), committee_mass=0.5,
        token_plants=(TokenPlant(text="t", expert=2, mass=0.4),), seed=1234,
    )
    first, second = io.BytesIO(), io.BytesIO()
    write_trace(generate(spec), first)
    write_trace(generate(spec), second)
    assert first.getvalue() == second.getvalue()


def test_different_seeds_differ():
    base = dict(
        num_experts=12, num_layers=1, routing_budget=3, num_domains=2, samples_per_domain=4
    )
    a = generate(SynthSpec(**base, seed=1))
    b = generate(SynthSpec(**base, seed=2))
    assert a != b


def test_generated_traces_validate_cleanly():
    planted = generate(
        SynthSpec(
            num_experts=24, num_layers=3, routing_budget=4, num_domains=5,
            samples_per_domain=8, planted_committee=(1, 2, 3), committee_mass=0.55,
            domain_specialists={0: (10, 11)}, specialist_mass=0.2,
            token_plants=(TokenPlant(text="q", expert=1, mass=0.3),), seed=77,
        )
    )
    assert validate_trace(planted).ok
    disjoint = generate_disjoint(
        SynthSpec(
            num_experts=24, num_layers=2, routing_budget=4, num_domains=4,
            samples_per_domain=8, seed=78,
        )
    )
    assert validate_trace(disjoint).ok


def test_planted_mean_contribution_within_three_standard_errors():
    spec = SynthSpec(
        num_experts=32, num_layers=1, routing_budget=4, num_domains=1,
        samples_per_domain=600, planted_committee=(3, 8), committee_mass=0.5, seed=11,
    )
    trace = generate(spec)
    stacked = trace.stacked()[:, 0, :]
    member_means = stacked[:, [3, 8]].mean(axis=0)
    per_member = spec.committee_mass / 2
    # Committee entries are deterministic aside from the rotation bonus, so
    # the tolerance is dominated by the bonus budget, not sampling noise.
    standard_error = stacked[:, [3, 8]].std(axis=0).max() / np.sqrt(len(stacked)) + 1e-9
    tilt_budget = 0.01
    assert np.all(np.abs(member_means - per_member) <= tilt_budget + 3 * standard_error)


def test_specialists_receive_their_mass():
    spec = SynthSpec(
        num_experts=16, num_layers=1, routing_budget=4, num_domains=2,
        samples_per_domain=50, domain_specialists={0: (12,), 1: (13,)},
        specialist_mass=0.6, seed=21,
    )
    profiles = compute_profiles(generate(spec))
    assert profiles.eci[0, 0, 12] > 0.55
    assert profiles.eci[0, 1, 13] > 0.55
    assert profiles.eci[0, 1, 12] < 0.2


def test_token_plants_set_flag_and_records():
    spec = SynthSpec(
        num_experts=8, num_layers=2, routing_budget=2, num_domains=2,
        samples_per_domain=3, token_plants=(TokenPlant(text="the", expert=5, mass=0.5),),
        seed=3,
    )
    trace = generate(spec)
    assert trace.header.has_tokens
    for sample in trace.samples:
        assert [t.text for t in sample.tokens] == ["the"]
        assert int(np.argmax(sample.tokens[0].vectors[0])) == 5


def test_infeasible_masses_rejected():
    with pytest.raises(ValueError, match="infeasible|committee_mass"):
        generate(
            SynthSpec(
                num_experts=8, num_layers=1, routing_budget=2, num_domains=2,
                samples_per_domain=2, planted_committee=(0,), committee_mass=0.7,
                domain_specialists={0: (1,)}, specialist_mass=0.5, seed=0,
            )
        )
    with pytest.raises(ValueError, match="out of range"):
        generate(
            SynthSpec(
                num_experts=8, num_layers=1, routing_budget=2, num_domains=2,
                samples_per_domain=2, planted_committee=(99,), committee_mass=0.5, seed=0,
            )
        )


def test_disjoint_trace_properties():
    spec = SynthSpec(
        num_experts=16, num_layers=2, routing_budget=4, num_domains=2,
        samples_per_domain=20, seed=5,
    )
    trace = generate_disjoint(spec)
    profiles = compute_profiles(trace)
    report = jaccard_report(profiles, 4)
    assert report.cell_max == 0.0
    for layer in range(2):
        ranks = rank_experts(profiles, layer, 4)
        assert candidate_set(ranks, 4, 0.8) == []
    # each domain keeps at least 95% of its mass in its own block
    for sample in trace.samples:
        block = slice(sample.domain_id * 4, (sample.domain_id + 1) * 4)
        assert sample.vectors[:, block].sum(axis=1).min() >= 0.95


def test_disjoint_preconditions():
    base = dict(num_experts=16, num_layers=1, routing_budget=4, samples_per_domain=2, seed=0)
    with pytest.raises(ValueError, match="2 domains"):
        generate_disjoint(SynthSpec(num_domains=1, **base))
    with pytest.raises(ValueError, match="infeasible partition"):
        generate_disjoint(SynthSpec(num_domains=5, **base))
    with pytest.raises(ValueError, match="planted"):
        generate_disjoint(
            SynthSpec(num_domains=2, planted_committee=(1,), committee_mass=0.5, **base)
        )


def test_spec_json_round_trip(tmp_path):
    payload = {
        "num_experts": 16,
        "num_layers": 2,
        "routing_budget": 4,
        "num_domains": 3,
        "samples_per_domain": 5,
        "planted_committee": [2, 7],
        "committee_mass": 0.5,
        "domain_specialists": {"0": [9]},
        "specialist_mass": 0.1,
        "noise_concentration": 2.0,
        "token_plants": [["the", 2, 0.4]],
        "seed": 99,
    }
    path = tmp_path / "spec.json"
    path.write_text(json.dumps(payload))
    spec = SynthSpec.from_json(path)
    assert spec.planted_committee == (2, 7)
    assert spec.domain_specialists == {0: (9,)}
    assert spec.token_plants == (TokenPlant(text="the", expert=2, mass=0.4),)
    assert validate_trace(generate(spec)).ok

    path.write_text(json.dumps({**payload, "bogus": 1}))
    with pytest.raises(ValueError, match="bogus"):
        SynthSpec.from_json(path)


def test_seeded_stream_is_position_based():
    a = SeededStream(7)
    first = a.take(10)
    b = SeededStream(7)
    chunks = np.concatenate([b.take(3), b.take(7)])
    assert np.array_equal(first, chunks)
    assert np.all((first > 0.0) & (first <= 1.0))
