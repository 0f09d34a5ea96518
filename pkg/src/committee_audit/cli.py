"""Command-line interface.

One analysis per subcommand, plus ``audit`` which runs everything. Errors
leave a machine-readable JSON object on stderr; exit codes: 0 success,
1 validation/precondition failure, 2 malformed trace container.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click

from .anchors import anchor_matrix
from .committee import extract_committees
from .metrics import gini_by_layer, jaccard_report, lorenz_by_layer
from .profiles import compute_profiles
from .report import (
    AuditConfig,
    emit_anchors,
    emit_committees,
    emit_metrics,
    emit_profiles,
    emit_specificity,
    emit_sweep,
    run_audit,
    write_json,
)
from .specificity import compute_specificity
from .sweep import DEFAULT_SWEEP_KS, run_sweep
from .synth import SynthSpec, generate, generate_disjoint
from .trace import (
    TraceFormatError,
    TraceReadError,
    TraceValidationError,
    load_trace,
    save_trace,
    validate_trace,
)

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_FORMAT = 2


def _fail(category: str, message: str, code: int) -> None:
    click.echo(json.dumps({"error": {"category": category, "message": message}}), err=True)
    sys.exit(code)


def _guarded(fn):
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except TraceFormatError as exc:
            _fail("format", str(exc), EXIT_FORMAT)
        except TraceValidationError as exc:
            _fail("validation", str(exc), EXIT_INVALID)
        except TraceReadError as exc:
            _fail("io", str(exc), EXIT_INVALID)
        except (ValueError, IndexError) as exc:
            _fail("precondition", str(exc), EXIT_INVALID)
        except OSError as exc:
            _fail("io", str(exc), EXIT_INVALID)

    wrapper.__name__ = fn.__name__
    wrapper.__doc__ = fn.__doc__
    return wrapper


def _out_dir(out: str) -> Path:
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


trace_argument = click.argument("trace_path", type=click.Path(exists=True, dir_okay=False))
out_option = click.option("--out", default="audit_out", show_default=True, help="Output directory.")
format_option = click.option(
    "--format", "fmt", type=click.Choice(["csv", "json", "both"]), default="both", show_default=True
)
renormalize_option = click.option(
    "--renormalize", is_flag=True, help="Repair simplex drift on read instead of rejecting."
)
k_option = click.option("--k", type=int, default=None, help="Routing budget override (default: trace header).")
gamma_option = click.option("--gamma", type=float, default=0.8, show_default=True, help="Cross-domain presence threshold.")
theta_option = click.option("--theta-s", type=float, default=0.0, show_default=True, help="Task-specificity threshold.")
filter_option = click.option(
    "--filter-specificity", is_flag=True, help="Drop low-specificity domains before committee extraction."
)


@click.group()
@click.version_option(package_name="committee-audit")
def main() -> None:
    """Audit expert-coalition structure in MoE routing traces."""


@main.command()
@trace_argument
@renormalize_option
@_guarded
def validate(trace_path: str, renormalize: bool) -> None:
    """Check a trace file against every format and data invariant."""
    trace = load_trace(trace_path, renormalize=renormalize)
    report = validate_trace(trace)
    result = report.to_dict()
    result["renormalized_vectors"] = trace.renormalized_count
    click.echo(json.dumps(result, sort_keys=True, indent=2))
    if not report.ok:
        sys.exit(EXIT_INVALID)


@main.command()
@trace_argument
@out_option
@format_option
@renormalize_option
@_guarded
def profile(trace_path: str, out: str, fmt: str, renormalize: bool) -> None:
    """Emit per-(layer, domain) expert contribution profiles."""
    config = AuditConfig(format=fmt, renormalize=renormalize)
    trace = load_trace(trace_path, renormalize=renormalize)
    profiles = compute_profiles(trace)
    for path in emit_profiles(profiles, config, _out_dir(out)):
        click.echo(str(path))


@main.command()
@trace_argument
@theta_option
@out_option
@format_option
@renormalize_option
@_guarded
def specificity(trace_path: str, theta_s: float, out: str, fmt: str, renormalize: bool) -> None:
    """Emit silhouette-based task-specificity scores."""
    config = AuditConfig(theta_s=theta_s, format=fmt, renormalize=renormalize)
    trace = load_trace(trace_path, renormalize=renormalize)
    scores = compute_specificity(trace, threshold=theta_s)
    for path in emit_specificity(scores, trace.domain_names, config, _out_dir(out)):
        click.echo(str(path))


@main.command()
@trace_argument
@k_option
@gamma_option
@theta_option
@filter_option
@out_option
@format_option
@renormalize_option
@_guarded
def committee(
    trace_path: str,
    k: int | None,
    gamma: float,
    theta_s: float,
    filter_specificity: bool,
    out: str,
    fmt: str,
    renormalize: bool,
) -> None:
    """Extract the per-layer expert committees and their statistics."""
    config = AuditConfig(
        k_override=k,
        gamma=gamma,
        theta_s=theta_s,
        apply_specificity_filter=filter_specificity,
        format=fmt,
        renormalize=renormalize,
    )
    trace = load_trace(trace_path, renormalize=renormalize)
    committees = extract_committees(
        trace, k=k, gamma=gamma, theta_s=theta_s, apply_specificity_filter=filter_specificity
    )
    for path in emit_committees(committees, config, _out_dir(out)):
        click.echo(str(path))
    if all(not c.members for c in committees):
        click.echo("warning: every layer produced an empty committee", err=True)


@main.command()
@trace_argument
@k_option
@out_option
@format_option
@renormalize_option
@_guarded
def metrics(trace_path: str, k: int | None, out: str, fmt: str, renormalize: bool) -> None:
    """Emit Jaccard sharing, per-layer Gini, and Lorenz curve data."""
    config = AuditConfig(k_override=k, format=fmt, renormalize=renormalize)
    trace = load_trace(trace_path, renormalize=renormalize)
    profiles = compute_profiles(trace)
    budget = config.budget(trace)
    for path in emit_metrics(
        jaccard_report(profiles, budget),
        gini_by_layer(profiles),
        lorenz_by_layer(profiles, budget),
        config,
        _out_dir(out),
    ):
        click.echo(str(path))


@main.command()
@trace_argument
@click.option(
    "--sweep-ks",
    default=",".join(str(k) for k in DEFAULT_SWEEP_KS),
    show_default=True,
    help="Comma-separated routing budgets to sweep.",
)
@click.option("--reference-k", type=int, default=None, help="Reference budget (default: trace header).")
@gamma_option
@theta_option
@filter_option
@out_option
@format_option
@renormalize_option
@_guarded
def sweep(
    trace_path: str,
    sweep_ks: str,
    reference_k: int | None,
    gamma: float,
    theta_s: float,
    filter_specificity: bool,
    out: str,
    fmt: str,
    renormalize: bool,
) -> None:
    """Re-extract committees across routing budgets and score retention."""
    k_values = [int(item) for item in sweep_ks.split(",") if item.strip()]
    config = AuditConfig(
        gamma=gamma,
        theta_s=theta_s,
        apply_specificity_filter=filter_specificity,
        sweep_ks=k_values,
        reference_k=reference_k,
        format=fmt,
        renormalize=renormalize,
    )
    trace = load_trace(trace_path, renormalize=renormalize)
    result = run_sweep(
        trace,
        k_values,
        reference_k,
        gamma=gamma,
        theta_s=theta_s,
        apply_specificity_filter=filter_specificity,
    )
    for path in emit_sweep(result, config, _out_dir(out)):
        click.echo(str(path))


@main.command()
@trace_argument
@click.option("--tokens", "tokens_path", type=click.Path(exists=True, dir_okay=False), required=True,
              help="Token list: one token per line, UTF-8.")
@click.option("--layer", type=int, default=None, help="Layer to analyze (default: union over all layers).")
@click.option("--min-domains", type=int, default=3, show_default=True,
              help="Distinct domains required to mark a (token, expert) cell.")
@k_option
@gamma_option
@out_option
@format_option
@renormalize_option
@_guarded
def anchors(
    trace_path: str,
    tokens_path: str,
    layer: int | None,
    min_domains: int,
    k: int | None,
    gamma: float,
    out: str,
    fmt: str,
    renormalize: bool,
) -> None:
    """Build the token-anchor activation matrix over committee experts."""
    config = AuditConfig(
        k_override=k, gamma=gamma, min_domains=min_domains, format=fmt,
        renormalize=renormalize, anchor_layer=layer,
    )
    trace = load_trace(trace_path, renormalize=renormalize)
    token_list = [
        line for line in Path(tokens_path).read_text(encoding="utf-8").splitlines() if line
    ]
    committees = extract_committees(trace, k=k, gamma=gamma)
    if layer is not None:
        members = set(committees[layer].members)
    else:
        members = set().union(*(c.members for c in committees))
    if not members:
        _fail("precondition", "no committee members found; anchor matrix is undefined", EXIT_INVALID)
    matrix = anchor_matrix(
        trace, layer, members, token_list, min_domains, k=config.budget(trace)
    )
    for path in emit_anchors(matrix, config, _out_dir(out)):
        click.echo(str(path))
    for token in matrix.missing_tokens:
        click.echo(f"warning: token {token!r} never appears in the trace", err=True)


@main.command()
@click.argument("spec_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--out", "out_path", required=True, help="Trace file to write.")
@click.option("--seed", type=int, default=None, help="Override the seed in the spec file.")
@_guarded
def synth(spec_path: str, out_path: str, seed: int | None) -> None:
    """Generate a synthetic trace from a JSON spec file.

    The spec is a JSON object with keys: num_experts, num_layers,
    routing_budget, num_domains, samples_per_domain, seed, and optionally
    mode ("planted"|"disjoint"), planted_committee, committee_mass,
    domain_specialists, specialist_mass, noise_concentration, token_plants
    ([[text, expert, mass], ...]).
    """
    raw = json.loads(Path(spec_path).read_text(encoding="utf-8"))
    mode = raw.get("mode", "planted")
    spec = SynthSpec.from_json(spec_path)
    if seed is not None:
        spec.seed = seed
    trace = generate_disjoint(spec) if mode == "disjoint" else generate(spec)
    written = save_trace(trace, out_path)
    click.echo(f"{out_path}: {written} bytes, {trace.header.num_samples} samples")


@main.command()
@trace_argument
@k_option
@gamma_option
@theta_option
@filter_option
@click.option("--sweep-ks", default=",".join(str(k) for k in DEFAULT_SWEEP_KS), show_default=True)
@click.option("--reference-k", type=int, default=None)
@click.option("--min-domains", type=int, default=3, show_default=True)
@click.option("--tokens", "tokens_path", type=click.Path(exists=True, dir_okay=False), default=None,
              help="Token list for the anchor matrix (default: every token in the trace).")
@out_option
@format_option
@renormalize_option
@_guarded
def audit(
    trace_path: str,
    k: int | None,
    gamma: float,
    theta_s: float,
    filter_specificity: bool,
    sweep_ks: str,
    reference_k: int | None,
    min_domains: int,
    tokens_path: str | None,
    out: str,
    fmt: str,
    renormalize: bool,
) -> None:
    """Run every analysis and write all artifacts plus summary.json."""
    anchor_tokens = None
    if tokens_path is not None:
        anchor_tokens = [
            line for line in Path(tokens_path).read_text(encoding="utf-8").splitlines() if line
        ]
    config = AuditConfig(
        k_override=k,
        gamma=gamma,
        theta_s=theta_s,
        apply_specificity_filter=filter_specificity,
        sweep_ks=[int(item) for item in sweep_ks.split(",") if item.strip()],
        reference_k=reference_k,
        min_domains=min_domains,
        format=fmt,
        renormalize=renormalize,
        anchor_tokens=anchor_tokens,
    )
    trace = load_trace(trace_path, renormalize=renormalize)
    summary = run_audit(trace, config, _out_dir(out))
    click.echo(str(Path(out) / "summary.json"))
    if all(not c["members"] for c in summary["committees"]):
        click.echo("warning: every layer produced an empty committee", err=True)


if __name__ == "__main__":
    main()
