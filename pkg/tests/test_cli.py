#  Copyright (c) 2024 ltc-stability developers

import csv
import json
import math

import pytest

from ltc_stability.cli import bundled_networks, digest, main, parse_network_document, read_network_file
from ltc_stability.common import NetworkFileError


def run_cli(capsys, *argv):
    code = main([str(x) for x in argv])
    return code, json.loads(capsys.readouterr().out)


def read_csv(path):
    with open(path) as f:
        return list(csv.reader(f))


def test_bundled_networks():
    assert bundled_networks() == ["one_load", "six_bus_mesh", "two_load_chain", "two_load_symmetric"]
    for name in bundled_networks():
        loaded = read_network_file(name)
        assert loaded.name == name
        assert loaded.r0 is not None
        assert set(loaded.partition) == set(loaded.network.bus_ids)


def test_network_document_errors():
    document = read_network_file("one_load").document
    with pytest.raises(NetworkFileError):
        parse_network_document({**document, "colour": "blue"})
    with pytest.raises(NetworkFileError):
        parse_network_document({**document, "version": 2})
    with pytest.raises(NetworkFileError):
        parse_network_document({**document, "partition": {"G": "A", "X": "A"}})
    with pytest.raises(NetworkFileError):
        parse_network_document({**document, "events": [{"time": 1.0}]})
    with pytest.raises(NetworkFileError):
        parse_network_document([document])
    with pytest.raises(NetworkFileError):
        parse_network_document({**document, "events": [{"time": 1.0, "action": "remove_line", "target": "G"}]})


def test_twobus_feasible(capsys):
    code, result = run_cli(capsys, "twobus", "--GL", 0.8, "--BL", 0.4)
    assert code == 0
    assert result["command"] == "twobus"
    assert result["verdict"] == "Feasible"
    assert result["outputs"]["equilibria"]["r_plus"] == pytest.approx(1.0, abs=1e-9)
    assert result["outputs"]["equilibria"]["r_minus"] == pytest.approx(2 / math.sqrt(5), abs=1e-9)
    assert result["outputs"]["critical_susceptance"] == pytest.approx((1 + math.sqrt(5)) / 8, abs=1e-8)


def test_twobus_infeasible(capsys):
    code, result = run_cli(capsys, "twobus", "--GL", 1.0, "--BL", 0.5)
    assert code == 2
    assert result["verdict"] == "Infeasible"
    assert result["outputs"]["equilibria"] is None


def test_twobus_curve_csv(capsys, tmp_path):
    path = tmp_path / "curve.csv"
    code, result = run_cli(capsys, "twobus", "--kappa", 2.0, "--curve", "--samples", 10, "--csv", path)
    assert code == 0
    rows = read_csv(path)
    assert rows[0] == ["B_L", "r_minus", "r_plus"]
    assert len(rows) == 11
    assert result["outputs"]["curve_rows"] == 10

    code, result = run_cli(capsys, "twobus", "--kappa", 2.0, "--curve", "--samples", 10, "--x-scale", 1.2)
    assert result["outputs"]["curve_rows"] == 20
    assert {row["case"] for row in result["outputs"]["curve"]} == {"base", "post"}


def test_twobus_simulation(capsys, tmp_path):
    code, result = run_cli(capsys, "twobus", "--GL", 0.8, "--BL", 0.4, "--simulate", "--r0", 0.89)
    assert code == 2
    assert result["verdict"] == "Collapsed"

    path = tmp_path / "trip.csv"
    args = ["twobus", "--GL", 0.8, "--BL", 0.4, "--simulate", "--r0", 1.0, "--horizon", 100]
    code, result = run_cli(capsys, *args, "--event", "10:1.2:1", "--event", "11:1:0.7", "--csv", path)
    assert code == 0
    assert result["verdict"] == "Converged"
    assert read_csv(path)[0] == ["t", "r", "V1", "V2"]


def test_twobus_rejects_malformed_event(capsys):
    with pytest.raises(SystemExit):
        main(["twobus", "--simulate", "--event", "10:1.2"])


def test_simulate(capsys, tmp_path):
    path = tmp_path / "trajectory.csv"
    code, result = run_cli(capsys, "simulate", "one_load", "--csv", path)
    assert code == 0
    assert result["verdict"] == "Converged"
    assert result["outputs"]["final_r"] == pytest.approx([0.75], abs=1e-4)
    assert read_csv(path)[0] == ["t", "r_L", "Vs_L"]

    code, result = run_cli(capsys, "simulate", "one_load", "--r0", 0.2, "--model", "both")
    assert code == 2
    assert result["outputs"]["agree"] is True
    assert result["outputs"]["discrete"]["verdict"] == "Collapsed"


def test_simulate_with_file_events(capsys):
    code, result = run_cli(capsys, "simulate", "six_bus_mesh", "--r0", 1.2, "--horizon", 1000)
    assert code == 0
    assert result["verdict"] == "Converged"


def test_alpha(capsys):
    code, result = run_cli(capsys, "alpha", "one_load", "--brute-force")
    assert code == 0
    assert result["verdict"] == "stable"
    assert result["outputs"]["alpha"] == pytest.approx([0.75], abs=1e-9)
    assert [eq["stability"] for eq in result["outputs"]["equilibria"]] == ["unstable", "stable"]

    code, result = run_cli(capsys, "alpha", "one_load", "--load-scale", 1.6)
    assert code == 2
    assert result["verdict"] == "Infeasible"


def test_roa(capsys, tmp_path):
    code, result = run_cli(capsys, "roa", "one_load")
    assert code == 0
    assert result["outputs"]["witnesses"][0]["r"] == pytest.approx([0.25], abs=1e-6)

    path = tmp_path / "corners.csv"
    code, result = run_cli(capsys, "roa", "two_load_symmetric", "--pair", "L1,L2", "--csv", path)
    assert code == 0
    rows = read_csv(path)
    assert rows[0] == ["pair", "r_i", "r_j"]
    assert len(rows) == result["outputs"]["corners"] + 1


def test_monitor(capsys):
    code, result = run_cli(capsys, "monitor", "one_load")
    assert code == 0
    assert result["verdict"] == "Stable"
    assert result["outputs"]["witness"]["underline_r"] == pytest.approx([0.5])

    code, result = run_cli(capsys, "monitor", "one_load", "--r0", 0.2)
    assert code == 2
    assert result["verdict"] == "NeedsSupport"
    assert result["outputs"]["cost"] == pytest.approx(0.01890625, abs=1e-7)


def test_support(capsys, tmp_path):
    path = tmp_path / "support.csv"
    code, result = run_cli(capsys, "support", "one_load", "--r0", 0.2, "--csv", path)
    assert code == 2
    assert result["outputs"]["d"] == pytest.approx([0.0275], abs=1e-5)
    rows = read_csv(path)
    assert rows[0] == ["bus", "b_s", "d", "demand", "reduction"]
    assert rows[1][0] == "L"

    code, result = run_cli(capsys, "support", "one_load")
    assert code == 0
    assert result["verdict"] == "Stable"


def test_admm(capsys, tmp_path):
    code, result = run_cli(capsys, "admm", "two_load_chain")
    assert result["verdict"] in ("Converged", "MaxIter")
    assert code == (0 if result["verdict"] == "Converged" else 2)

    code, result = run_cli(capsys, "admm", "two_load_chain", "--max-iter", 1)
    assert code == 2
    assert result["verdict"] == "MaxIter"

    partition = tmp_path / "partition.json"
    partition.write_text(json.dumps({"G": 0, "L1": 0, "L2": 0}))
    history = tmp_path / "history.csv"
    code, result = run_cli(capsys, "admm", "two_load_chain", "--partition", partition, "--csv", history)
    assert code == 0
    assert result["outputs"]["iterations"] <= 2
    assert read_csv(history)[0] == ["iter", "objective", "primal_res", "dual_res"]


def test_sweep(capsys):
    code, result = run_cli(capsys, "sweep", "one_load", "--start", 0.2, "--stop", 0.8, "--num", 4)
    assert code == 0
    assert result["verdict"] == "Sound"
    points = result["outputs"]["points"]
    assert [p["certificate"] for p in points] == ["NeedsSupport", "Stable", "Stable", "Stable"]
    assert [p["simulation"] for p in points] == ["Collapsed", "Converged", "Converged", "Converged"]


def test_errors_are_reported(capsys, tmp_path):
    code, result = run_cli(capsys, "alpha", tmp_path / "missing.json")
    assert code == 1
    assert result["error"] == "FileNotFoundError"

    broken = tmp_path / "broken.json"
    broken.write_text("{")
    code, result = run_cli(capsys, "alpha", broken)
    assert code == 1
    assert result["error"] == "NetworkFileError"


@pytest.mark.parametrize(
    "change",
    [
        {"buses": [{"kind": "gen", "V_G": 1.0}, {"id": "L", "kind": "load", "b_s": 0.1875, "V_0": 1.0, "T": 1.0}]},
        {"buses": [{"id": "G", "kind": "gen", "V_G": 1.0}, {"id": "L", "kind": "load", "b_s": 0.1875, "V_0": 1.0, "T": 1.0, "Vo": 2}]},
        {"events": [{"time": 1.0, "action": "scale_line", "target": "L", "factor": 2.0}]},
        {"lines": [{"from": "G", "to": "L", "b": 1.0, "r": 0.1}]},
    ],
)
def test_malformed_files_are_reported(capsys, tmp_path, change):
    document = read_network_file("one_load").document
    path = tmp_path / "malformed.json"
    path.write_text(json.dumps({**document, **change}))
    code, result = run_cli(capsys, "alpha", path)
    assert code == 1
    assert result["command"] == "alpha"
    assert result["error"] in ("NetworkFileError", "NetworkError")


def test_inputs_digest(capsys):
    _, first = run_cli(capsys, "monitor", "one_load", "--r0", 0.5)
    _, second = run_cli(capsys, "monitor", "one_load", "--r0", 0.5)
    _, third = run_cli(capsys, "monitor", "one_load", "--r0", 0.4)
    assert first["inputs"] == second["inputs"] != third["inputs"]
    assert len(first["inputs"]) == 64
    assert digest({"b": 1, "a": [1.0]}) == digest({"a": [1.0], "b": 1})
