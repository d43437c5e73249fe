import csv
import io
import json

import pytest

from qmemdim.cli import RunConfig, main


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def rows(text):
    return list(csv.DictReader(io.StringIO(text)))


def test_ladder_csv(capsys):
    code, out, _ = run(capsys, "ladder", "--f0", "0.9", "--d", "2")
    assert code == 0
    table = rows(out)
    assert out.splitlines()[0] == "level,a,b,c,d,p_next"
    assert round(float(table[0]["p_next"]), 4) == 0.8756
    assert round(float(table[1]["p_next"]), 4) == 0.8680
    assert table[2]["p_next"] == ""


def test_ladder_perfect_state_warns(capsys, caplog):
    code, out, _ = run(capsys, "ladder", "--f0", "1", "--d", "3")
    assert code == 0
    table = rows(out)
    assert all(float(r["a"]) == 1.0 for r in table)
    assert all(float(r["p_next"]) == 1.0 for r in table[:3])
    assert "perfect" in caplog.text


def test_ladder_explicit_coefficients(capsys):
    code, out, _ = run(capsys, "ladder", "--a", "0.25", "--b", "0.25", "--c", "0.25", "--d-coef", "0.25", "--d", "1")
    assert code == 0
    assert float(rows(out)[0]["p_next"]) == 0.5


def test_ladder_json(capsys):
    code, out, _ = run(capsys, "ladder", "--f0", "0.9", "--d", "1", "--format", "json")
    assert code == 0
    assert json.loads(out)["levels"][0]["a"] == 0.9


def test_stationary_states_and_marginal(capsys):
    code, out, _ = run(capsys, "stationary", "--f0", "0.9", "--m", "16", "--d", "2")
    assert code == 0
    table = rows(out)
    assert len(table) == 153
    assert list(table[0])[:3] == ["n0", "n1", "n2"]
    assert sum(float(r["p"]) for r in table) == pytest.approx(1.0, abs=1e-10)
    code, out, _ = run(capsys, "stationary", "--f0", "0.9", "--m", "16", "--d", "2", "--table", "marginal")
    marginal = [float(r["p"]) for r in rows(out)]
    assert max(range(len(marginal)), key=marginal.__getitem__) in {6, 7, 8}


def test_stationary_d0_point_mass(capsys):
    code, out, _ = run(capsys, "stationary", "--f0", "0.9", "--m", "4", "--d", "0")
    assert code == 0
    assert rows(out) == [{"n0": "4", "p": "1"}]


def test_stationary_direct_cross_check(capsys):
    code, out, _ = run(capsys, "stationary", "--f0", "0.9", "--m", "8", "--d", "1", "--direct", "--format", "json")
    assert code == 0
    assert json.loads(out)["meta"]["direct_l1_difference"] < 1e-10


def test_outage_thresholds(capsys):
    _, out, _ = run(capsys, "outage", "--f0", "0.9", "--m", "13", "--d", "2", "--consumption", "1")
    assert float(rows(out)[0]["outage"]) <= 1e-3
    _, out, _ = run(capsys, "outage", "--f0", "0.9", "--m", "12", "--d", "2", "--consumption", "1")
    assert float(rows(out)[0]["outage"]) > 1e-3


def test_outage_bootstrap_and_measure_flag(capsys):
    base = ["outage", "--f0", "0.9", "--m", "32", "--d", "2", "--consumption", "13", "--wait", "12"]
    _, out, _ = run(capsys, *base)
    row = rows(out)[0]
    assert row["measure"] == "cycle_start"
    assert float(row["outage"]) == pytest.approx(1.36778187709508e-4, rel=1e-6)
    _, out, _ = run(capsys, *base, "--measure", "pre_consumption")
    assert float(rows(out)[0]["outage"]) < 1e-20


def test_output_is_byte_stable(capsys, tmp_path):
    args = ["stationary", "--f0", "0.9", "--m", "10", "--d", "2"]
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    assert main(args + ["--out", str(a)]) == 0
    assert main(args + ["--out", str(b)]) == 0
    assert a.read_bytes() == b.read_bytes()
    assert a.read_text().startswith("n0,n1,n2,p\n")


def test_config_file_and_override(capsys, tmp_path):
    cfg = tmp_path / "run.json"
    cfg.write_text(json.dumps({"memory_size": 12, "max_steps": 2, "consumption": 1, "f0": 0.9}))
    _, out, _ = run(capsys, "outage", "--config", str(cfg))
    assert float(rows(out)[0]["outage"]) > 1e-3
    _, out, _ = run(capsys, "outage", "--config", str(cfg), "--m", "13")
    assert float(rows(out)[0]["outage"]) <= 1e-3


def test_saved_config_round_trips(capsys, tmp_path):
    saved = tmp_path / "saved.json"
    code, _, _ = run(
        capsys, "outage", "--a", "0.85", "--b", "0.05", "--c", "0.05", "--d-coef", "0.05",
        "--m", "9", "--d", "2", "--consumption", "2", "--wait", "1", "--save-config", str(saved),
    )
    assert code == 0
    cfg = RunConfig.from_dict(json.loads(saved.read_text()))
    assert cfg.coefficients == (0.85, 0.05, 0.05, 0.05)
    assert cfg.f0 is None and cfg.bootstrap_wait == 1
    assert RunConfig.from_dict(cfg.to_dict()) == cfg


def test_validation_exit_code(capsys):
    code, _, err = run(capsys, "outage", "--m", "5", "--d", "2")
    assert code == 2
    assert "f0" in err
    code, _, err = run(capsys, "outage", "--f0", "1.5", "--m", "5")
    assert code == 2
    code, _, err = run(capsys, "ladder", "--a", "0.5", "--d", "1")
    assert code == 2
    assert "coefficients" in err


def test_unknown_config_field(capsys, tmp_path):
    cfg = tmp_path / "bad.json"
    cfg.write_text(json.dumps({"memory": 3}))
    code, _, err = run(capsys, "outage", "--config", str(cfg))
    assert code == 2
    assert "memory" in err


def test_convergence_exit_code(capsys):
    code, _, err = run(capsys, "outage", "--f0", "0.9", "--m", "10", "--max-iters", "2")
    assert code == 3
    assert "residual" in err


def test_capacity_exit_code(capsys):
    code, _, _ = run(capsys, "outage", "--f0", "0.9", "--m", "200", "--d", "6")
    assert code == 4


def test_sweep_csv_and_json(capsys, tmp_path):
    spec = tmp_path / "spec.json"
    spec.write_text(json.dumps({"f0": [0.9, 0.99], "c": 1, "d": 2, "w": [0], "m_min": 9, "m_max": 13, "target": 1e-3}))
    code, out, _ = run(capsys, "sweep", str(spec), "--workers", "1")
    assert code == 0
    table = rows(out)
    assert list(table[0]) == ["f0", "w", "m", "outage", "iterations", "status"]
    assert len(table) == 10
    code, out, _ = run(capsys, "sweep", str(spec), "--workers", "1", "--format", "json")
    summary = {(s["f0"], s["w"]): s["min_memory"] for s in json.loads(out)["min_memory"]}
    assert summary == {(0.9, 0): 13, (0.99, 0): 10}


def test_sweep_bad_spec(capsys, tmp_path):
    spec = tmp_path / "spec.json"
    spec.write_text(json.dumps({"f0": [0.9], "c": 1, "d": 2}))
    code, _, _ = run(capsys, "sweep", str(spec))
    assert code == 2


def test_simulate(capsys):
    args = ["simulate", "--f0", "0.9", "--m", "16", "--d", "2", "--rounds", "20000", "--seed", "9"]
    code, out, _ = run(capsys, *args)
    assert code == 0
    row = rows(out)[0]
    assert float(row["tv_distance"]) < 0.05
    assert float(row["analytical_outage"]) == pytest.approx(7.2027e-9, rel=1e-3)
    _, again, _ = run(capsys, *args)
    assert again == out
