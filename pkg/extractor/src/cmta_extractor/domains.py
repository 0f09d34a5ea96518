"""Subject-to-domain mapping for prompt sets.

The default map aggregates the 57 MMLU subjects into nine domains. The
"Lang-Ling" domain has no standard MMLU subject, so it stays empty under
the default map (the trace validator reports unused domains as warnings,
not errors); custom map files can populate it.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

DEFAULT_MAP_RESOURCE = "mmlu_domains.json"


@dataclass
class DomainMap:
    domain_names: list[str]
    subject_to_domain: dict[str, int]

    def domain_of(self, subject: str) -> int:
        if subject not in self.subject_to_domain:
            raise ValueError(f"subject {subject!r} is not mapped to any domain")
        return self.subject_to_domain[subject]


def _parse(payload: dict, where: str) -> DomainMap:
    domains = payload.get("domains")
    subjects = payload.get("subjects")
    if not isinstance(domains, list) or not domains:
        raise ValueError(f"{where}: 'domains' must be a non-empty list")
    if not isinstance(subjects, dict):
        raise ValueError(f"{where}: 'subjects' must be an object")
    index = {name: i for i, name in enumerate(domains)}
    if len(index) != len(domains):
        raise ValueError(f"{where}: duplicate domain names")
    mapping = {}
    for subject, domain in subjects.items():
        if domain not in index:
            raise ValueError(f"{where}: subject {subject!r} maps to unknown domain {domain!r}")
        mapping[subject] = index[domain]
    return DomainMap(domain_names=list(domains), subject_to_domain=mapping)


def load_domain_map(path: str | Path | None = None) -> DomainMap:
    """Load a subject map from a JSON file, or the bundled MMLU default."""
    if path is None:
        raw = resources.files("cmta_extractor").joinpath("data", DEFAULT_MAP_RESOURCE).read_text("utf-8")
        return _parse(json.loads(raw), DEFAULT_MAP_RESOURCE)
    text = Path(path).read_text(encoding="utf-8")
    return _parse(json.loads(text), str(path))
