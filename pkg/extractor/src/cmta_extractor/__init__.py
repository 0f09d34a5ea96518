"""Capture MoE gate routing distributions and write CMTA v1 traces."""

__version__ = "0.1.0"

from .domains import DomainMap, load_domain_map
from .extract import ExtractionJob, extract, load_prompts
from .format import Sample, TokenRow, save_trace, write_cmta
from .models import GateCaptureError, ModelAdapter, ToyMoE, load_model

__all__ = [
    "DomainMap",
    "ExtractionJob",
    "GateCaptureError",
    "ModelAdapter",
    "Sample",
    "TokenRow",
    "ToyMoE",
    "extract",
    "load_domain_map",
    "load_model",
    "load_prompts",
    "save_trace",
    "write_cmta",
]
