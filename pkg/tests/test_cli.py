import json

import pytest
from click.testing import CliRunner

from spillover.cli import cli


@pytest.fixture
def runner():
    return CliRunner()


@pytest.fixture
def toy(tmp_path):
    (tmp_path / "edges.csv").write_text("cluster_id,src_unit,dst_unit\n")
    (tmp_path / "units.csv").write_text("cluster_id,unit_id,x,z,y\n1,0,1,1,3\n1,1,0,0,5\n")
    (tmp_path / "pairwise.yaml").write_text("estimate:\n  estimands: [pairwise]\n")
    return tmp_path


def estimate_json(runner, *args):
    result = runner.invoke(cli, ["estimate", *map(str, args)])
    assert result.exit_code == 0, result.output
    return json.loads(result.stdout)


def test_two_unit_toy(runner, toy):
    report = estimate_json(runner, toy / "edges.csv", toy / "units.csv", "--config", toy / "pairwise.yaml")
    assert report["schema_version"] == 1
    records = report["records"]
    assert [r["formulation"] for r in records] == ["dyadic", "receiver", "sender"]
    for r in records:
        assert r["estimate"] == pytest.approx(2.0)
        assert r["se"] == pytest.approx(0.0, abs=1e-12)


def chain_data(tmp_path):
    edges = ["cluster_id,src_unit,dst_unit"]
    units = ["cluster_id,unit_id,x,z,y"]
    for c in range(6):
        for u in range(5):
            edges.append(f"{c},{u},{(u + 1) % 5}")
            edges.append(f"{c},{u},{(u + 2) % 5}")
            units.append(f"{c},{u},{(u * 7 + c) % 2},{(u + c) % 2},{(u * 1.3 + c * 0.7) % 3:.3f}")
    (tmp_path / "e.csv").write_text("\n".join(edges) + "\n")
    (tmp_path / "u.csv").write_text("\n".join(units) + "\n")
    return tmp_path / "e.csv", tmp_path / "u.csv"


def test_three_formulations_report_the_same_average(runner, tmp_path):
    e, u = chain_data(tmp_path)
    records = estimate_json(runner, e, u)["records"]
    est = [r["estimate"] for r in records]
    assert len(est) == 3
    assert est[1] == pytest.approx(est[0], rel=1e-9) and est[2] == pytest.approx(est[0], rel=1e-9)


@pytest.mark.parametrize("strategy", ["parametric", "stratified"])
def test_conditional_records(runner, tmp_path, strategy):
    e, u = chain_data(tmp_path)
    cfg = tmp_path / "c.yaml"
    cfg.write_text(f"cse:\n  x: [0, 1, 3]\n  strategy: {strategy}\nestimate:\n  estimands: [inward]\n")
    result = runner.invoke(cli, ["estimate", str(e), str(u), "--config", str(cfg)])
    assert result.exit_code == 0, result.output
    records = json.loads(result.stdout)["records"]
    cond = [r for r in records if r.get("x") is not None]
    assert len(cond) == 9
    assert all(r["mode"] == "cse" and r["strategy"] == strategy for r in cond if "error" not in r)
    outside = [r for r in cond if r["x"] == 3]
    assert all(r["diagnostics"]["extrapolated"] for r in outside if "error" not in r)
    assert "outside the observed covariate range" in result.stderr


def test_bad_treatment_value_exits_with_input_error(runner, toy):
    (toy / "units.csv").write_text("cluster_id,unit_id,x,z,y\n1,0,1,2,3\n1,1,0,0,5\n")
    result = runner.invoke(cli, ["estimate", str(toy / "edges.csv"), str(toy / "units.csv")])
    assert result.exit_code == 2
    assert "units.csv:2" in result.stderr and "z must be 0 or 1" in result.stderr


def test_custom_weights_need_a_file(runner, toy):
    (toy / "c.yaml").write_text("estimate:\n  estimands: [custom]\n")
    result = runner.invoke(cli, ["estimate", str(toy / "edges.csv"), str(toy / "units.csv"), "--config",
                                 str(toy / "c.yaml")])
    assert result.exit_code == 2


def test_custom_weights_file_relative_to_config(runner, toy):
    (toy / "w.csv").write_text("cluster_id,receiver,sender,weight\n1,0,1,0.5\n1,1,0,0.5\n")
    (toy / "c.yaml").write_text("estimate:\n  estimands: [custom]\n  weights_file: w.csv\n")
    report = estimate_json(runner, toy / "edges.csv", toy / "units.csv", "--config", toy / "c.yaml")
    assert report["records"][0]["estimate"] == pytest.approx(2.0)


def test_simulate_is_deterministic(runner, tmp_path):
    cfg = tmp_path / "s.yaml"
    cfg.write_text("simulate:\n  preset: smoke\n  replications: 8\n")
    a = runner.invoke(cli, ["simulate", "--config", str(cfg)])
    b = runner.invoke(cli, ["simulate", "--config", str(cfg), "--workers", "3"])
    assert a.exit_code == 0 and b.exit_code == 0
    assert a.stdout == b.stdout
    assert "config digest:" in a.stderr


def test_single_replication_simulation(runner, tmp_path):
    cfg = tmp_path / "s.yaml"
    cfg.write_text("simulate:\n  preset: smoke\n  replications: 1\n")
    out = tmp_path / "t.csv"
    result = runner.invoke(cli, ["simulate", "--config", str(cfg), "--output", str(out)])
    assert result.exit_code == 0
    rows = out.read_text().splitlines()[1:]
    assert all(line.split(",")[6] in ("0", "1") for line in rows)


def test_simulate_rejects_unknown_keys(runner, tmp_path):
    cfg = tmp_path / "s.yaml"
    cfg.write_text("simulate:\n  preset: smoke\n  replicas: 1\n")
    assert runner.invoke(cli, ["simulate", "--config", str(cfg)]).exit_code == 2


def small_verify(tmp_path, extra=""):
    cfg = tmp_path / "v.yaml"
    cfg.write_text("verify:\n  seeds: 3\n  max_cluster_size: 6\n  residual_cluster_size: 5\n" + extra)
    return cfg


def test_verify_passes(runner, tmp_path):
    out = tmp_path / "v.json"
    result = runner.invoke(cli, ["verify", "--config", str(small_verify(tmp_path)), "--output", str(out)])
    assert result.exit_code == 0, result.output
    assert result.stdout.count("PASS") == 6
    assert json.loads(out.read_text())["passed"] is True


def test_injected_bug_is_caught_only_by_the_residual_check(runner, tmp_path):
    result = runner.invoke(cli, ["verify", "--config", str(small_verify(tmp_path)), "--inject-bug"])
    assert result.exit_code == 1
    failed = [line.split()[1] for line in result.stdout.splitlines() if line.startswith("FAIL")]
    assert failed == ["residual_moments_zero"]


def test_verify_cap_is_an_input_error(runner, tmp_path):
    result = runner.invoke(cli, ["verify", "--config", str(small_verify(tmp_path, "  cap: 5\n"))])
    assert result.exit_code == 2
