import numpy as np
import pytest

from committee_audit.synth import SynthSpec, generate
from committee_audit.trace import RoutingTrace, SampleRecord, TokenRecord


def f32_exact(matrix: np.ndarray) -> np.ndarray:
    """Quantize to float32 values held in float64, as the file format does."""
    return matrix.astype(np.float32).astype(np.float64)


def random_simplex(rng: np.random.Generator, shape: tuple[int, ...]) -> np.ndarray:
    raw = rng.exponential(size=shape)
    return f32_exact(raw / raw.sum(axis=-1, keepdims=True))


def build_random_trace(seed: int, *, with_tokens: bool = False) -> RoutingTrace:
    """A small structurally-valid trace with randomized sizes and weights."""
    rng = np.random.default_rng(seed)
    num_experts = int(rng.integers(2, 17))
    num_layers = int(rng.integers(1, 5))
    budget = int(rng.integers(1, num_experts + 1))
    num_domains = int(rng.integers(1, 5))
    names = [f"dom{i}" for i in range(num_domains)]
    samples = []
    for i in range(int(rng.integers(num_domains, num_domains + 12))):
        domain = i % num_domains  # every domain referenced
        tokens = []
        if with_tokens:
            for t in range(int(rng.integers(0, 4))):
                tokens.append(
                    TokenRecord(
                        text=f"tok{t}_{chr(0x3b1 + t)}",  # exercise multi-byte UTF-8
                        vectors=random_simplex(rng, (num_layers, num_experts)),
                    )
                )
        samples.append(
            SampleRecord(
                domain_id=domain,
                vectors=random_simplex(rng, (num_layers, num_experts)),
                tokens=tokens,
            )
        )
    return RoutingTrace.from_samples(budget, names, samples, with_tokens=with_tokens)


def build_trace(vectors_by_domain: dict[int, list[np.ndarray]], budget: int = 1) -> RoutingTrace:
    """Trace from explicit per-domain lists of (L, E) float arrays."""
    num_domains = max(vectors_by_domain) + 1
    samples = [
        SampleRecord(domain_id=domain, vectors=np.asarray(block, dtype=np.float64))
        for domain in sorted(vectors_by_domain)
        for block in vectors_by_domain[domain]
    ]
    names = [f"dom{i}" for i in range(num_domains)]
    return RoutingTrace.from_samples(budget, names, samples)


PLANTED_SPEC = SynthSpec(
    num_experts=64,
    num_layers=8,
    routing_budget=8,
    num_domains=9,
    samples_per_domain=200,
    planted_committee=(5, 9, 21),
    committee_mass=0.6,
    seed=20240917,
)


@pytest.fixture(scope="session")
def planted_trace() -> RoutingTrace:
    return generate(PLANTED_SPEC)
