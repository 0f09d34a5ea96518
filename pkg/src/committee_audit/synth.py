"""Seeded synthetic trace generation with planted structure.

Every draw comes from a counter-mode splitmix64 stream (constants below),
so traces are bit-reproducible across platforms and numpy versions. The
planted-committee generator is built so the downstream pipeline provably
recovers the planted set:

  * committee mass is split exactly equally among members, and a small
    rank bonus funded from the residual mass rotates through the members
    by domain index. When the committee size divides the domain count,
    every member therefore holds an identical multiset of within-committee
    ranks, giving bit-equal (mean rank, rank variance) pairs that the
    Pareto front keeps in full. (An exactly equal split alone would tie
    every member and collapse the front to the lowest index; random noise
    instead makes survival of all members a coin flip.)
  * residual noise is drawn only over non-planted experts, so committee
    coverage stays within the tilt budget of the planted mass.

Generated weight values are float32-quantized, so write -> read -> write
round-trips are exact.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .trace import FLAG_TOKENS, RoutingTrace, SampleRecord, TokenRecord, TraceHeader

# splitmix64 constants (Steele, Lea & Flood's mix function).
_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)

# Fraction of the residual mass spent on the rotating committee rank bonus.
_TILT_CAP = 0.01
_TILT_SHARE = 0.25

DISJOINT_BLOCK_MASS = 0.96


class SeededStream:
    """Counter-mode splitmix64 producing float64 uniforms in (0, 1]."""

    def __init__(self, seed: int):
        self.seed = np.uint64(seed & 0xFFFFFFFFFFFFFFFF)
        self.position = 0

    def take(self, count: int) -> np.ndarray:
        index = np.arange(self.position + 1, self.position + count + 1, dtype=np.uint64)
        self.position += count
        z = self.seed + index * _GOLDEN
        z = (z ^ (z >> np.uint64(30))) * _MIX1
        z = (z ^ (z >> np.uint64(27))) * _MIX2
        z = z ^ (z >> np.uint64(31))
        return ((z >> np.uint64(11)).astype(np.float64) + 1.0) * 2.0**-53


@dataclass
class TokenPlant:
    text: str
    expert: int
    mass: float


@dataclass
class SynthSpec:
    num_experts: int
    num_layers: int
    routing_budget: int
    num_domains: int
    samples_per_domain: int
    planted_committee: tuple[int, ...] = ()
    committee_mass: float = 0.0
    domain_specialists: dict[int, tuple[int, ...]] = field(default_factory=dict)
    specialist_mass: float = 0.0
    noise_concentration: float = 1.0
    token_plants: tuple[TokenPlant, ...] = ()
    seed: int = 0

    @classmethod
    def from_json(cls, path: str | Path) -> "SynthSpec":
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        data.pop("mode", None)
        plants = tuple(
            TokenPlant(text=p[0], expert=int(p[1]), mass=float(p[2]))
            for p in data.pop("token_plants", [])
        )
        specialists = {
            int(domain): tuple(int(e) for e in experts)
            for domain, experts in data.pop("domain_specialists", {}).items()
        }
        committee = tuple(int(e) for e in data.pop("planted_committee", []))
        known = {f for f in cls.__dataclass_fields__ if f not in
                 ("planted_committee", "token_plants", "domain_specialists")}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown synth spec keys: {sorted(unknown)}")
        return cls(
            planted_committee=committee,
            token_plants=plants,
            domain_specialists=specialists,
            **data,
        )


def _validate_common(spec: SynthSpec) -> None:
    if spec.num_experts < 2 or spec.num_layers < 1:
        raise ValueError("need num_experts >= 2 and num_layers >= 1")
    if not 1 <= spec.routing_budget <= spec.num_experts:
        raise ValueError("routing_budget out of range")
    if spec.num_domains < 1 or spec.samples_per_domain < 1:
        raise ValueError("need num_domains >= 1 and samples_per_domain >= 1")
    if spec.noise_concentration <= 0:
        raise ValueError("noise_concentration must be positive")


def _dirichlet_like(stream: SeededStream, count: int, concentration: float) -> np.ndarray:
    """Normalized exponentials raised to 1/concentration: exact symmetric
    Dirichlet at concentration 1, flatter above, spikier below."""
    draws = -np.log(stream.take(count))
    if concentration != 1.0:
        draws = draws ** (1.0 / concentration)
    return draws / draws.sum()


def _quantize(vector: np.ndarray) -> np.ndarray:
    return vector.astype(np.float32).astype(np.float64)


def _domain_names(count: int) -> list[str]:
    return [f"domain_{i}" for i in range(count)]


def generate(spec: SynthSpec) -> RoutingTrace:
    """Sample a trace with the planted committee/specialist structure."""
    _validate_common(spec)
    committee = tuple(sorted(spec.planted_committee))
    for expert in committee:
        if not 0 <= expert < spec.num_experts:
            raise ValueError(f"planted expert {expert} out of range [0, {spec.num_experts})")
    if committee and not 0.0 < spec.committee_mass <= 1.0:
        raise ValueError("committee_mass must be in (0, 1] when a committee is planted")
    if spec.specialist_mass < 0 or spec.committee_mass + spec.specialist_mass > 1.0:
        raise ValueError("infeasible mass split: committee_mass + specialist_mass > 1")
    for domain, experts in spec.domain_specialists.items():
        if not 0 <= domain < spec.num_domains:
            raise ValueError(f"specialist domain {domain} out of range")
        for expert in experts:
            if not 0 <= expert < spec.num_experts:
                raise ValueError(f"specialist expert {expert} out of range")

    stream = SeededStream(spec.seed)
    size = len(committee)
    token_blocks = [_token_vectors(spec, plant) for plant in spec.token_plants]
    samples = []
    for domain in range(spec.num_domains):
        specialists = tuple(spec.domain_specialists.get(domain, ()))
        specialist_mass = spec.specialist_mass if specialists else 0.0
        residual = 1.0 - (spec.committee_mass if committee else 0.0) - specialist_mass
        if residual < -1e-12:
            raise ValueError("infeasible mass split")
        residual = max(residual, 0.0)

        tilt_total = min(_TILT_CAP, residual * _TILT_SHARE) if size >= 2 else 0.0
        base = np.zeros(spec.num_experts)
        if committee:
            base[list(committee)] = spec.committee_mass / size
            for position in range(size):
                member = committee[(position + domain) % size]
                if tilt_total > 0.0:
                    base[member] += tilt_total * 2.0 * (size - 1 - position) / (size * (size - 1))
        if specialists:
            base[list(specialists)] += specialist_mass / len(specialists)

        noise_support = np.array(
            [e for e in range(spec.num_experts) if e not in committee],
            dtype=np.intp,
        )
        noise_mass = residual - tilt_total
        if noise_mass > 0 and len(noise_support) == 0:
            raise ValueError("infeasible mass split: residual mass but no free experts")

        for _ in range(spec.samples_per_domain):
            vectors = np.zeros((spec.num_layers, spec.num_experts))
            for layer in range(spec.num_layers):
                row = base.copy()
                if noise_mass > 0:
                    row[noise_support] += noise_mass * _dirichlet_like(
                        stream, len(noise_support), spec.noise_concentration
                    )
                # Parts sum to 1 by construction; quantization drift stays
                # orders of magnitude inside the on-disk simplex tolerance.
                vectors[layer] = _quantize(row)
            tokens = [
                TokenRecord(text=plant.text, vectors=token_blocks[j])
                for j, plant in enumerate(spec.token_plants)
            ]
            samples.append(SampleRecord(domain_id=domain, vectors=vectors, tokens=tokens))

    header = TraceHeader(
        num_experts=spec.num_experts,
        num_layers=spec.num_layers,
        routing_budget=spec.routing_budget,
        num_domains=spec.num_domains,
        num_samples=len(samples),
        flags=FLAG_TOKENS if spec.token_plants else 0,
    )
    return RoutingTrace(header=header, domain_names=_domain_names(spec.num_domains), samples=samples)


def _token_vectors(spec: SynthSpec, plant: TokenPlant) -> np.ndarray:
    if not 0 <= plant.expert < spec.num_experts:
        raise ValueError(f"token plant expert {plant.expert} out of range")
    if not 0.0 < plant.mass <= 1.0:
        raise ValueError("token plant mass must be in (0, 1]")
    row = np.full(spec.num_experts, (1.0 - plant.mass) / (spec.num_experts - 1))
    row[plant.expert] = plant.mass
    return np.tile(_quantize(row), (spec.num_layers, 1))


def generate_disjoint(spec: SynthSpec) -> RoutingTrace:
    """Trace where each domain routes almost all mass into its own private
    expert block, so candidate sets come out empty and cross-domain overlap
    is zero."""
    _validate_common(spec)
    if spec.planted_committee or spec.domain_specialists:
        raise ValueError("generate_disjoint takes a spec without planted structure")
    if spec.num_domains < 2:
        raise ValueError("disjoint routing needs at least 2 domains")
    k = spec.routing_budget
    if spec.num_domains * k > spec.num_experts:
        raise ValueError(
            f"infeasible partition: {spec.num_domains} domains x budget {k} exceeds {spec.num_experts} experts"
        )

    stream = SeededStream(spec.seed)
    outside_mass = 1.0 - DISJOINT_BLOCK_MASS
    samples = []
    for domain in range(spec.num_domains):
        block = np.arange(domain * k, (domain + 1) * k, dtype=np.intp)
        outside = np.array([e for e in range(spec.num_experts) if e not in set(block.tolist())], dtype=np.intp)
        for _ in range(spec.samples_per_domain):
            vectors = np.zeros((spec.num_layers, spec.num_experts))
            for layer in range(spec.num_layers):
                row = np.zeros(spec.num_experts)
                row[block] = DISJOINT_BLOCK_MASS * _dirichlet_like(stream, k, spec.noise_concentration)
                row[outside] = outside_mass * _dirichlet_like(stream, len(outside), spec.noise_concentration)
                vectors[layer] = _quantize(row)
            samples.append(SampleRecord(domain_id=domain, vectors=vectors))

    header = TraceHeader(
        num_experts=spec.num_experts,
        num_layers=spec.num_layers,
        routing_budget=spec.routing_budget,
        num_domains=spec.num_domains,
        num_samples=len(samples),
        flags=0,
    )
    return RoutingTrace(header=header, domain_names=_domain_names(spec.num_domains), samples=samples)
