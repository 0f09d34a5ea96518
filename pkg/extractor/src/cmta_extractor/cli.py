"""cmta-extract: run prompts through an MoE model and write a trace."""

from __future__ import annotations

import json
import sys

import click

from .extract import ExtractionJob, extract
from .models import GateCaptureError


@click.command()
@click.option("--model", required=True, help="toy://E=8,L=2,k=2,seed=0 or hf://<checkpoint>.")
@click.option("--prompts", "prompts_path", required=True, type=click.Path(exists=True, dir_okay=False),
              help="JSON-lines file with 'text' and 'subject' fields.")
@click.option("--map", "map_path", type=click.Path(exists=True, dir_okay=False), default=None,
              help="Subject-to-domain map JSON (default: bundled MMLU aggregation).")
@click.option("--pooling", type=click.Choice(["last_token", "mean"]), default="last_token",
              show_default=True)
@click.option("--tokens", "capture_tokens", is_flag=True, help="Also record per-token vectors.")
@click.option("--max-per-domain", type=int, default=None, help="Cap samples per domain.")
@click.option("--out", "output_path", required=True, help="Trace file to write.")
@click.option("--gate-pattern", default=None,
              help="Regex matched against module names to find gate modules.")
@click.version_option(package_name="cmta-extractor")
def main(model, prompts_path, map_path, pooling, capture_tokens, max_per_domain, output_path, gate_pattern):
    """Capture per-layer routing distributions over a labeled prompt set."""
    job = ExtractionJob(
        model=model,
        prompts_path=prompts_path,
        map_path=map_path,
        pooling=pooling,
        capture_tokens=capture_tokens,
        max_samples_per_domain=max_per_domain,
        output_path=output_path,
        gate_pattern=gate_pattern,
    )
    try:
        trace_path, sidecar_path = extract(job)
    except (ValueError, GateCaptureError) as exc:
        click.echo(json.dumps({"error": {"category": "extraction", "message": str(exc)}}), err=True)
        sys.exit(1)
    click.echo(str(trace_path))
    click.echo(str(sidecar_path))


if __name__ == "__main__":
    main()
