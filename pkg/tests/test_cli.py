import csv
import json
import subprocess
import sys

import pytest

from mrcoord.cli import EXIT_CONFIG, EXIT_OK, EXIT_RUNTIME, EXIT_USAGE, main
from mrcoord.config import config_hash, parse_config


@pytest.fixture
def short_cfg(tmp_path):
    p = tmp_path / "short.yaml"
    p.write_text("match_length: 10.0\nbudget: 10\n")
    return p


def _rows(path):
    with open(path) as fh:
        return list(csv.reader(fh))


def test_run_desk_writes_outputs(tmp_path):
    out = tmp_path / "run"
    assert main(["run", "--preset", "desk", "--mode", "EventELVD", "--seed", "1", "--out", str(out), "--quiet"]) == 0
    assert {p.name for p in out.iterdir()} == {"metrics.json", "roles.csv", "packets.trace", "config.yaml",
                                               "manifest.json"}
    m = json.loads((out / "manifest.json").read_text())
    assert m["config_hash"] == config_hash(parse_config(out / "config.yaml"))
    assert m["mode"] == "EventELVD" and m["seed"] == 1
    metrics = json.loads((out / "metrics.json").read_text())
    assert metrics["packets_sent"] <= 120
    rows = _rows(out / "roles.csv")
    assert rows[0] == ["tick", "time"] + [f"agent_{i}" for i in range(7)]
    assert len(rows) == 1 + 2400


def test_run_is_byte_identical(tmp_path, short_cfg):
    for name in ("a", "b"):
        assert main(["run", "--config", str(short_cfg), "--mode", "EventVD", "--out", str(tmp_path / name),
                     "--quiet"]) == 0
    for f in ("metrics.json", "roles.csv", "packets.trace", "manifest.json"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_bad_mode_is_usage_error(tmp_path, capsys):
    assert main(["run", "--mode", "Telepathy", "--out", str(tmp_path / "x")]) == EXIT_USAGE
    assert "unknown mode" in capsys.readouterr().err
    assert not (tmp_path / "x").exists()


def test_missing_arguments_are_usage_errors():
    assert main([]) == EXIT_USAGE
    assert main(["run"]) == EXIT_USAGE
    assert main(["compare", "--seeds", "a-b"]) == EXIT_USAGE


def test_config_errors(tmp_path, capsys):
    bad = tmp_path / "bad.yaml"
    bad.write_text("team_size: 7\nwhatever: 3\n")
    assert main(["validate-config", "--config", str(bad)]) == EXIT_CONFIG
    assert "line 2" in capsys.readouterr().err
    assert main(["validate-config", "--config", str(tmp_path / "missing.yaml")]) == EXIT_CONFIG


def test_runtime_errors_leave_no_partial_output(tmp_path, short_cfg):
    blocker = tmp_path / "file"
    blocker.write_text("")
    assert main(["run", "--config", str(short_cfg), "--mode", "EventBased", "--out", str(blocker / "sub"),
                 "--quiet"]) == EXIT_RUNTIME


def test_validate_config_dump(tmp_path, capsys, short_cfg):
    assert main(["validate-config", "--config", str(short_cfg), "--dump"]) == EXIT_OK
    out = capsys.readouterr().out
    assert out.startswith("ok: ") and "match_length: 10.0" in out


def test_compare_outputs(tmp_path, short_cfg):
    out = tmp_path / "cmp"
    assert main(["compare", "--config", str(short_cfg), "--seeds", "1-2", "--out", str(out), "--quiet"]) == 0
    rows = _rows(out / "summary.csv")
    roles = [t.id for t in parse_config(short_cfg).tasks]
    assert len(rows) == 1 + len(roles)
    assert len(rows[0]) == 1 + 2 * 4
    plot = _rows(out / "plot_data.csv")
    assert plot[0][:3] == ["role", "mode", "overlap_s_per_min"] and len(plot) == 1 + 4 * len(roles)
    result = json.loads((out / "result.json").read_text())
    assert result["seeds"] == [1, 2]
    assert set(result["striker_mean_s_per_min"]) == {"FixedRate", "EventBased", "EventVD", "EventELVD"}
    assert len((out / "records.jsonl").read_text().splitlines()) == 8


def test_compare_perfect_information_reports_zero(tmp_path):
    cfg = tmp_path / "perfect.yaml"
    cfg.write_text(
        "match_length: 5.0\nbudget: 5\nteam_size: 2\n"
        "channel: {loss: 0.0, latency_mean: 0.0, latency_jitter: 0.0}\n"
        "sensing: {sigma_obs: 0.0, sigma_pose: 0.0, sigma_axis_deg: 0.0, p_fp: 0.0, p_miss: 0.0}\n"
        "tasks:\n"
        "  - {id: striker, kind: striker, target: [0, 0], priority: 0, ball_gain: [1, 1]}\n"
        "  - {id: keeper, kind: keeper, target: [-4, 0], priority: 1}\n"
    )
    out = tmp_path / "p"
    assert main(["compare", "--config", str(cfg), "--seeds", "1", "--out", str(out), "--quiet"]) == 0
    assert json.loads((out / "result.json").read_text())["striker_reduction_elvd_vs_event"] == 0.0


def _geometry(tmp_path, name, *extra):
    out = tmp_path / name
    assert main(["geometry-debug", "--out", str(out), "--quiet", *extra]) == 0
    return _rows(out / "geometry.csv"), out


def test_geometry_debug_at_start_lists_opponents(tmp_path):
    rows, out = _geometry(tmp_path, "g", "--mode", "EventVD", "--time", "0")
    n_opp = 7  # default opponent count
    assert rows[0] == ["kind", "id", "x0", "y0", "x1", "y1"]
    kinds = [r[0] for r in rows[1:]]
    assert kinds.count("site") == n_opp
    assert "delaunay_edge" in kinds and "node" in kinds and "edge" in kinds
    assert "focal_pair" not in kinds


def test_geometry_debug_elvd_has_focal_pairs(tmp_path):
    rows, _ = _geometry(tmp_path, "e", "--mode", "EventELVD", "--time", "0")
    pairs = [r for r in rows[1:] if r[0] == "focal_pair"]
    sites = [r for r in rows[1:] if r[0] == "site"]
    assert len(pairs) == len(sites) == 7
    assert all(p[2:4] == s[2:4] for p, s in zip(pairs, sites))


def test_geometry_debug_is_reproducible(tmp_path):
    a, _ = _geometry(tmp_path, "a", "--time", "2", "--source", "dwm")
    b, _ = _geometry(tmp_path, "b", "--time", "2", "--source", "dwm")
    assert a == b


def test_geometry_debug_rejects_non_diagram_mode(tmp_path):
    assert main(["geometry-debug", "--mode", "FixedRate", "--out", str(tmp_path / "x")]) == EXIT_USAGE


def test_output_root_env(tmp_path, monkeypatch, short_cfg):
    monkeypatch.setenv("MRCOORD_OUTPUT_ROOT", str(tmp_path / "root"))
    assert main(["run", "--config", str(short_cfg), "--mode", "FixedRate", "--seed", "4", "--quiet"]) == 0
    assert (tmp_path / "root" / "run-FixedRate-4" / "metrics.json").exists()


def test_module_entry_point():
    out = subprocess.run([sys.executable, "-m", "mrcoord", "--help"], capture_output=True, text=True)
    assert out.returncode == 0
    for cmd in ("run", "compare", "geometry-debug", "validate-config"):
        assert cmd in out.stdout
