import json
from pathlib import Path

import numpy as np
import pytest
from click.testing import CliRunner

from committee_audit.cli import main
from committee_audit.report import AuditConfig, fmt_cell, jsonable
from committee_audit.synth import SynthSpec, TokenPlant, generate, generate_disjoint
from committee_audit.trace import save_trace
from conftest import PLANTED_SPEC


@pytest.fixture()
def runner():
    return CliRunner()


@pytest.fixture(scope="module")
def planted_path(tmp_path_factory):
    path = tmp_path_factory.mktemp("traces") / "planted.cmta"
    spec = SynthSpec(
        num_experts=32, num_layers=3, routing_budget=6, num_domains=6,
        samples_per_domain=30, planted_committee=(4, 9), committee_mass=0.6,
        token_plants=(TokenPlant(text="the", expert=4, mass=0.5),), seed=500,
    )
    save_trace(generate(spec), path)
    return path


@pytest.fixture(scope="module")
def disjoint_path(tmp_path_factory):
    path = tmp_path_factory.mktemp("traces") / "disjoint.cmta"
    spec = SynthSpec(
        num_experts=32, num_layers=2, routing_budget=4, num_domains=4,
        samples_per_domain=20, seed=501,
    )
    save_trace(generate_disjoint(spec), path)
    return path


def test_validate_ok(runner, planted_path):
    result = runner.invoke(main, ["validate", str(planted_path)])
    assert result.exit_code == 0, result.output
    payload = json.loads(result.output)
    assert payload["ok"] is True
    assert payload["violations"] == []


def test_validate_bad_magic_exits_with_format_error(runner, tmp_path, planted_path):
    data = bytearray(planted_path.read_bytes())
    data[:4] = b"XXXX"
    bad = tmp_path / "bad.cmta"
    bad.write_bytes(bytes(data))
    result = runner.invoke(main, ["validate", str(bad)])
    assert result.exit_code == 2
    error = json.loads(result.stderr)
    assert error["error"]["category"] == "format"


def test_validate_renormalize_flag(runner, tmp_path, planted_path):
    import struct

    data = bytearray(planted_path.read_bytes())
    # corrupt the very last float of the final token block
    data[-4:] = struct.pack("<f", 0.5)
    drifted = tmp_path / "drift.cmta"
    drifted.write_bytes(bytes(data))
    rejected = runner.invoke(main, ["validate", str(drifted)])
    assert rejected.exit_code == 1
    repaired = runner.invoke(main, ["validate", str(drifted), "--renormalize"])
    assert repaired.exit_code == 0
    assert json.loads(repaired.output)["renormalized_vectors"] == 1


def test_profile_outputs(runner, planted_path, tmp_path):
    result = runner.invoke(
        main, ["profile", str(planted_path), "--out", str(tmp_path), "--format", "both"]
    )
    assert result.exit_code == 0, result.output
    csv_text = (tmp_path / "profiles.csv").read_text()
    lines = csv_text.splitlines()
    assert lines[0].startswith("# {")
    assert lines[1] == "layer,domain,expert,eci"
    assert not csv_text.endswith("\r\n")
    payload = json.loads((tmp_path / "profiles.json").read_text())
    assert payload["metadata"]["tool"] == "committee-audit"
    assert len(payload["eci"]) == 3  # layers


def test_committee_command_and_table_columns(runner, planted_path, tmp_path):
    result = runner.invoke(main, ["committee", str(planted_path), "--out", str(tmp_path)])
    assert result.exit_code == 0, result.output
    lines = (tmp_path / "committee.csv").read_text().splitlines()
    assert lines[1] == "layer,members,size,avg_mu,avg_var,eci_coverage,ratio"
    first = lines[2].split(",")
    assert first[1] == "4;9"
    payload = json.loads((tmp_path / "committee.json").read_text())
    assert payload["committees"][0]["members"] == [4, 9]
    assert payload["metadata"]["conventions"]["rank_variance"] == "population"


def test_committee_gamma_one_on_disjoint_warns(runner, disjoint_path, tmp_path):
    result = runner.invoke(
        main,
        ["committee", str(disjoint_path), "--gamma", "1.0", "--out", str(tmp_path)],
    )
    assert result.exit_code == 0, result.output
    assert "empty committee" in result.stderr
    payload = json.loads((tmp_path / "committee.json").read_text())
    assert all(c["members"] == [] for c in payload["committees"])


def test_specificity_command(runner, planted_path, tmp_path):
    result = runner.invoke(
        main, ["specificity", str(planted_path), "--theta-s", "0.1", "--out", str(tmp_path)]
    )
    assert result.exit_code == 0, result.output
    lines = (tmp_path / "specificity.csv").read_text().splitlines()
    assert lines[1] == "layer,domain,score,passes"


def test_metrics_command(runner, planted_path, tmp_path):
    result = runner.invoke(main, ["metrics", str(planted_path), "--out", str(tmp_path)])
    assert result.exit_code == 0, result.output
    assert (tmp_path / "metrics_summary.csv").exists()
    assert (tmp_path / "gini.csv").exists()
    for layer in range(3):
        assert (tmp_path / f"jaccard_layer_{layer}.csv").exists()
        assert (tmp_path / f"lorenz_layer_{layer}.csv").exists()
    payload = json.loads((tmp_path / "metrics_summary.json").read_text())
    assert set(payload["jaccard"]) >= {"cell_extrema", "layer_mean_extrema", "overall"}


def test_sweep_command(runner, planted_path, tmp_path):
    result = runner.invoke(
        main,
        ["sweep", str(planted_path), "--sweep-ks", "4,6", "--reference-k", "6", "--out", str(tmp_path)],
    )
    assert result.exit_code == 0, result.output
    payload = json.loads((tmp_path / "sweep.json").read_text())
    assert payload["per_k"]["6"]["mean_retention"] == 1.0


def test_anchors_command(runner, planted_path, tmp_path):
    tokens = tmp_path / "tokens.txt"
    tokens.write_text("the\nghost\n")
    result = runner.invoke(
        main,
        ["anchors", str(planted_path), "--tokens", str(tokens), "--min-domains", "3",
         "--out", str(tmp_path)],
    )
    assert result.exit_code == 0, result.output
    assert "ghost" in result.stderr
    payload = json.loads((tmp_path / "anchors.json").read_text())
    the_cells = [c for c in payload["cells"] if c["token"] == "the" and c["expert"] == 4]
    assert the_cells and the_cells[0]["marked"] is True
    assert the_cells[0]["domain_count"] == 6


def test_synth_command_roundtrip(runner, tmp_path):
    spec = {
        "mode": "planted",
        "num_experts": 8,
        "num_layers": 2,
        "routing_budget": 2,
        "num_domains": 2,
        "samples_per_domain": 3,
        "planted_committee": [1, 2],
        "committee_mass": 0.6,
        "seed": 7,
    }
    spec_path = tmp_path / "spec.json"
    spec_path.write_text(json.dumps(spec))
    out_path = tmp_path / "synth.cmta"
    result = runner.invoke(main, ["synth", str(spec_path), "--out", str(out_path)])
    assert result.exit_code == 0, result.output
    check = runner.invoke(main, ["validate", str(out_path)])
    assert check.exit_code == 0

    spec["mode"] = "disjoint"
    del spec["planted_committee"]
    del spec["committee_mass"]
    spec_path.write_text(json.dumps(spec))
    result = runner.invoke(main, ["synth", str(spec_path), "--out", str(out_path), "--seed", "8"])
    assert result.exit_code == 0, result.output


def test_audit_summary_lists_planted_members(runner, planted_path, tmp_path):
    result = runner.invoke(main, ["audit", str(planted_path), "--out", str(tmp_path)])
    assert result.exit_code == 0, result.output
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert [c["members"] for c in summary["committees"]] == [[4, 9]] * 3
    assert summary["anchors"] is not None
    assert (tmp_path / "sweep.csv").exists()


def test_audit_is_byte_deterministic(runner, planted_path, tmp_path):
    out_a = tmp_path / "a"
    out_b = tmp_path / "b"
    for out in (out_a, out_b):
        result = runner.invoke(
            main, ["audit", str(planted_path), "--out", str(out), "--sweep-ks", "4,6"]
        )
        assert result.exit_code == 0, result.output
    files_a = sorted(p.name for p in out_a.iterdir())
    files_b = sorted(p.name for p in out_b.iterdir())
    assert files_a == files_b and files_a
    for name in files_a:
        assert (out_a / name).read_bytes() == (out_b / name).read_bytes(), name


def test_thread_cap_does_not_change_outputs(runner, planted_path, tmp_path, monkeypatch):
    outputs = {}
    for workers in ("1", "4"):
        monkeypatch.setenv("COMMITTEEAUDIT_THREADS", workers)
        out = tmp_path / f"threads_{workers}"
        result = runner.invoke(
            main, ["audit", str(planted_path), "--out", str(out), "--sweep-ks", "4"]
        )
        assert result.exit_code == 0, result.output
        outputs[workers] = {p.name: p.read_bytes() for p in out.iterdir()}
    assert outputs["1"] == outputs["4"]


def test_fmt_cell_and_jsonable_conventions():
    assert fmt_cell(0.123456789) == "0.123457"
    assert fmt_cell(float("inf")) == "inf"
    assert fmt_cell(None) == ""
    assert fmt_cell(True) == "1"
    assert jsonable(float("inf")) == "inf"
    assert jsonable({1, 3, 2}) == [1, 2, 3]
    assert jsonable(np.float64(0.5)) == 0.5
    assert jsonable(np.array([1, 2])) == [1, 2]


def test_audit_config_budget_default(planted_path):
    from committee_audit.trace import load_trace

    trace = load_trace(planted_path)
    assert AuditConfig().budget(trace) == 6
    assert AuditConfig(k_override=3).budget(trace) == 3
