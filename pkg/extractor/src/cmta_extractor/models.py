"""Model adapters: run a prompt through an MoE model and capture the full
per-layer gate distribution.

Two model schemes are supported:

  toy://E=8,L=2,k=2,seed=0[,vocab=257,dim=32]
      A randomly initialized in-package MoE used for smoke tests and for
      exercising the capture machinery end to end.

  hf://<checkpoint>
      A HuggingFace causal LM whose gate submodules match --gate-pattern
      (default: module names ending in ".gate" or ".router"). Requires the
      optional transformers dependency. Gate discovery is best effort;
      checkpoints whose gates emit anything but logits or full
      distributions need a custom pattern or are rejected.

Captured gate outputs are converted to float64 softmax distributions. If a
gate emits already-normalized probabilities with a hard top-k mask (more
zeros than the budget leaves possible), extraction fails: the analysis
format requires the full distribution.
"""

from __future__ import annotations

import re
import zlib
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import torch
from torch import nn

DEFAULT_GATE_PATTERN = r"\.(gate|router)$"


class GateCaptureError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# Toy model
# ---------------------------------------------------------------------------

class _ToyMoELayer(nn.Module):
    def __init__(self, dim: int, num_experts: int, budget: int):
        super().__init__()
        self.gate = nn.Linear(dim, num_experts)
        self.experts = nn.ModuleList(nn.Linear(dim, dim) for _ in range(num_experts))
        self.budget = budget

    def forward(self, hidden: torch.Tensor) -> torch.Tensor:
        logits = self.gate(hidden)
        weights = torch.softmax(logits, dim=-1)
        top_w, top_i = torch.topk(weights, self.budget, dim=-1)
        mixed = torch.zeros_like(hidden)
        for slot in range(self.budget):
            idx = top_i[:, slot]
            w = top_w[:, slot].unsqueeze(-1)
            expert_out = torch.stack([self.experts[int(e)](hidden[t]) for t, e in enumerate(idx)])
            mixed = mixed + w * expert_out
        return hidden + torch.tanh(mixed)


class ToyMoE(nn.Module):
    def __init__(self, vocab: int, dim: int, num_experts: int, num_layers: int, budget: int):
        super().__init__()
        self.embed = nn.Embedding(vocab, dim)
        self.layers = nn.ModuleList(
            _ToyMoELayer(dim, num_experts, budget) for _ in range(num_layers)
        )

    def forward(self, token_ids: torch.Tensor) -> torch.Tensor:
        hidden = self.embed(token_ids)
        for layer in self.layers:
            hidden = layer(hidden)
        return hidden


def _parse_toy_spec(spec: str) -> dict:
    params = {"E": 8, "L": 2, "k": 2, "seed": 0, "vocab": 257, "dim": 32}
    body = spec[len("toy://"):]
    if body:
        for part in body.split(","):
            key, _, value = part.partition("=")
            if key not in params:
                raise ValueError(f"unknown toy model parameter {key!r}")
            params[key] = int(value)
    if not 1 <= params["k"] <= params["E"]:
        raise ValueError("toy model needs 1 <= k <= E")
    return params


def _toy_tokenizer(vocab: int) -> Callable[[str], tuple[list[str], torch.Tensor]]:
    def tokenize(text: str) -> tuple[list[str], torch.Tensor]:
        tokens = text.split()
        if not tokens:
            raise ValueError("empty prompt")
        ids = torch.tensor([zlib.crc32(t.encode("utf-8")) % vocab for t in tokens], dtype=torch.long)
        return tokens, ids

    return tokenize


# ---------------------------------------------------------------------------
# Capture machinery
# ---------------------------------------------------------------------------

@dataclass
class ModelAdapter:
    model: nn.Module
    tokenize: Callable[[str], tuple[list[str], torch.Tensor]]
    gate_names: list[str]
    num_experts: int
    routing_budget: int
    shared_experts: int
    model_name: str
    _captured: dict[str, torch.Tensor] = field(default_factory=dict)

    @property
    def num_layers(self) -> int:
        return len(self.gate_names)

    def __post_init__(self):
        for name in self.gate_names:
            module = dict(self.model.named_modules())[name]
            module.register_forward_hook(self._hook(name))

    def _hook(self, name: str):
        def capture(_module, _inputs, output):
            if isinstance(output, (tuple, list)):
                output = output[0]
            if not isinstance(output, torch.Tensor):
                raise GateCaptureError(f"gate output at layer {name!r} is not a tensor")
            self._captured[name] = output.detach().to(torch.float64).cpu()

        return capture

    def _to_distribution(self, raw: torch.Tensor, name: str, num_tokens: int) -> np.ndarray:
        if raw.shape[-1] != self.num_experts:
            raise GateCaptureError(
                f"gate output shape mismatch at layer {name!r}: expected last dim "
                f"{self.num_experts}, got {tuple(raw.shape)}"
            )
        matrix = raw.reshape(-1, self.num_experts).numpy()
        if matrix.shape[0] != num_tokens:
            raise GateCaptureError(
                f"gate output shape mismatch at layer {name!r}: {matrix.shape[0]} rows "
                f"for {num_tokens} tokens"
            )
        looks_normalized = bool(
            np.all(matrix >= 0.0) and np.all(np.abs(matrix.sum(axis=1) - 1.0) < 1e-3)
        )
        if looks_normalized:
            zero_counts = (matrix == 0.0).sum(axis=1)
            if self.routing_budget < self.num_experts and np.all(
                zero_counts >= self.num_experts - self.routing_budget
            ):
                raise GateCaptureError(
                    f"full distribution unavailable: layer {name!r} emits hard top-k "
                    "probabilities; capture the pre-softmax logits instead"
                )
            return matrix / matrix.sum(axis=1, keepdims=True)
        shifted = matrix - matrix.max(axis=1, keepdims=True)
        exp = np.exp(shifted)
        return exp / exp.sum(axis=1, keepdims=True)

    def capture(self, text: str) -> tuple[list[str], np.ndarray]:
        """Run one prompt; returns (tokens, float64 distributions (L, T, E))."""
        tokens, ids = self.tokenize(text)
        self._captured.clear()
        with torch.no_grad():
            self.model(ids)
        missing = [name for name in self.gate_names if name not in self._captured]
        if missing:
            raise GateCaptureError(f"no gate output captured at layer {missing[0]!r}")
        stacked = np.stack(
            [
                self._to_distribution(self._captured[name], name, len(tokens))
                for name in self.gate_names
            ]
        )
        return tokens, stacked


def _discover_gates(model: nn.Module, pattern: str) -> list[str]:
    regex = re.compile(pattern)
    names = [name for name, _ in model.named_modules() if name and regex.search(name)]
    if not names:
        raise GateCaptureError(f"no gate modules match pattern {pattern!r}")
    return names


def build_toy_adapter(spec: str, gate_pattern: str | None = None) -> ModelAdapter:
    params = _parse_toy_spec(spec)
    torch.manual_seed(params["seed"])
    model = ToyMoE(params["vocab"], params["dim"], params["E"], params["L"], params["k"])
    model.eval()
    return ModelAdapter(
        model=model,
        tokenize=_toy_tokenizer(params["vocab"]),
        gate_names=_discover_gates(model, gate_pattern or r"\.gate$"),
        num_experts=params["E"],
        routing_budget=params["k"],
        shared_experts=0,
        model_name=spec,
    )


def build_hf_adapter(spec: str, gate_pattern: str | None = None) -> ModelAdapter:
    try:
        from transformers import AutoModelForCausalLM, AutoTokenizer
    except ImportError as exc:  # pragma: no cover - optional dependency
        raise GateCaptureError("transformers is required for hf:// models") from exc

    checkpoint = spec[len("hf://"):]
    tokenizer = AutoTokenizer.from_pretrained(checkpoint)
    model = AutoModelForCausalLM.from_pretrained(checkpoint)
    model.eval()
    config = model.config

    num_experts = None
    for attr in ("num_experts", "num_local_experts", "n_routed_experts", "moe_num_experts"):
        if hasattr(config, attr):
            num_experts = int(getattr(config, attr))
            break
    budget = None
    for attr in ("num_experts_per_tok", "top_k", "moe_top_k", "num_selected_experts"):
        if hasattr(config, attr):
            budget = int(getattr(config, attr))
            break
    if num_experts is None or budget is None:
        raise GateCaptureError(
            "could not read the expert count / routing budget from the model config"
        )
    shared = 0
    for attr in ("n_shared_experts", "num_shared_experts", "moe_num_shared_experts"):
        if hasattr(config, attr) and getattr(config, attr):
            shared = int(getattr(config, attr))
            break

    def tokenize(text: str) -> tuple[list[str], torch.Tensor]:
        encoding = tokenizer(text, return_tensors="pt", add_special_tokens=True)
        ids = encoding["input_ids"][0]
        tokens = tokenizer.convert_ids_to_tokens(ids)
        return tokens, ids.unsqueeze(0)

    return ModelAdapter(
        model=model,
        tokenize=tokenize,
        gate_names=_discover_gates(model, gate_pattern or DEFAULT_GATE_PATTERN),
        num_experts=num_experts,
        routing_budget=budget,
        shared_experts=shared,
        model_name=checkpoint,
    )


def load_model(spec: str, gate_pattern: str | None = None) -> ModelAdapter:
    if spec.startswith("toy://"):
        return build_toy_adapter(spec, gate_pattern)
    if spec.startswith("hf://"):
        return build_hf_adapter(spec, gate_pattern)
    raise ValueError(f"unknown model scheme {spec!r} (use toy:// or hf://)")
