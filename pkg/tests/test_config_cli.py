import csv
import json

import pytest

from inrange.cli import main
from inrange.config import ConfigError, load_config, parse_config, shipped_config, shipped_configs
from inrange.runner import _atomic_write


def _write(tmp_path, doc, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(doc))
    return str(p)


def _shipped_doc(name):
    return json.loads(shipped_config(name).read_text())


def test_all_shipped_configs_validate():
    names = {p.stem for p in shipped_configs()}
    assert {"single_1d_nair", "multi_1d_mpcc", "fixedwing_3d_air_hard"} <= names
    for p in shipped_configs():
        rc = load_config(p)
        assert rc.name == p.stem


def test_defaults_are_filled():
    rc = load_config(shipped_config("single_1d_nair"))
    assert rc.mode == "smooth_max"
    s = rc.schedule()
    assert len(s.stages()) >= 2


def test_unknown_key_is_rejected():
    doc = _shipped_doc("single_1d_nair")
    doc["bogus"] = 1
    with pytest.raises(ConfigError):
        parse_config(doc)


def test_solve_writes_artifacts(tmp_path, capsys):
    out = tmp_path / "out"
    code = main(["solve", "--config", str(shipped_config("single_1d_nair")), "--out", str(out)])
    assert code == 0
    rows = list(csv.DictReader((out / "trajectory.csv").open()))
    K = load_config(shipped_config("single_1d_nair")).data["mesh"]["K"]
    assert len(rows) == K + 1
    assert set(rows[0]) >= {"t", "agent", "x", "v", "E", "u", "in_range"}
    doc = json.loads((out / "metrics.json").read_text())
    assert doc["status"] == "converged"
    assert (out / "continuation.log").read_text().count("# stage") >= 1
    assert "converged" in capsys.readouterr().out


def test_repeated_solve_is_byte_identical(tmp_path):
    cfg = str(shipped_config("single_1d_nair"))
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["solve", "--config", cfg, "--out", str(a)]) == 0
    assert main(["solve", "--config", cfg, "--out", str(b)]) == 0
    assert (a / "metrics.json").read_bytes() == (b / "metrics.json").read_bytes()
    assert (a / "trajectory.csv").read_bytes() == (b / "trajectory.csv").read_bytes()


def test_bad_schedule_is_config_error(tmp_path, capsys):
    doc = _shipped_doc("single_1d_nair")
    doc["schedule"] = {"k2": [1e5, 1e3]}
    code = main(["solve", "--config", _write(tmp_path, doc), "--out", str(tmp_path / "o")])
    assert code == 1
    assert "schedule" in capsys.readouterr().err
    assert not (tmp_path / "o").exists()


def test_bad_mesh_is_config_error(tmp_path, capsys):
    doc = _shipped_doc("single_1d_nair")
    doc["mesh"] = {"K": "x"}
    assert main(["solve", "--config", _write(tmp_path, doc)]) == 1
    assert "mesh" in capsys.readouterr().err


def test_mpcc_with_three_agents_is_config_error(tmp_path):
    doc = _shipped_doc("multi_1d_mpcc")
    doc["agents"] = 3
    assert main(["solve", "--config", _write(tmp_path, doc), "--out", str(tmp_path / "o")]) == 1


def test_missing_file(tmp_path):
    assert main(["solve", "--config", str(tmp_path / "none.json")]) == 1


def test_infeasible_exits_2_with_artifacts(tmp_path):
    out = tmp_path / "o"
    assert main(["solve", "--config", str(shipped_config("single_1d_air_hard")), "--out", str(out)]) == 2
    assert json.loads((out / "metrics.json").read_text())["status"] == "diverged"


def test_compare_with_itself(tmp_path, capsys):
    cfg = str(shipped_config("single_1d_setpoint"))
    out = tmp_path / "cmp"
    assert main(["compare", "--configs", cfg, cfg, "--out", str(out)]) == 0
    rows = json.loads((out / "comparison.json").read_text())
    assert len(rows) == 2
    for r in rows:
        assert r["in_range_delta_pct"] == 0.0
        assert r["energy_delta_pct"] == 0.0
        assert r["duration_delta_pct"] == 0.0
    assert len((out / "comparison.csv").read_text().splitlines()) == 3
    assert "in_range_time" in capsys.readouterr().out


def test_compare_two_formulations(tmp_path):
    cfgs = [str(shipped_config(f"single_1d_{f}")) for f in ("setpoint", "nair")]
    out = tmp_path / "cmp"
    assert main(["compare", "--configs", *cfgs, "--out", str(out)]) == 0
    rows = json.loads((out / "comparison.json").read_text())
    assert [r["formulation"] for r in rows] == ["setpoint", "nair"]
    assert rows[1]["in_range_delta_pct"] > 0
    assert (out / "single_1d_nair" / "metrics.json").exists()


def test_compare_rejects_mixed_scenarios(tmp_path, capsys):
    cfgs = [str(shipped_config("single_1d_nair")), str(shipped_config("multi_1d_nocharge"))]
    assert main(["compare", "--configs", *cfgs, "--out", str(tmp_path / "c")]) == 1
    assert "scenario" in capsys.readouterr().err


def test_compare_rejects_budget_mismatch(tmp_path):
    doc = _shipped_doc("single_1d_nair")
    doc["mission"]["final_soc_min"] = 50.0
    cfgs = [str(shipped_config("single_1d_nair")), _write(tmp_path, doc)]
    assert main(["compare", "--configs", *cfgs, "--out", str(tmp_path / "c")]) == 1


def test_compare_needs_two(tmp_path):
    assert main(["compare", "--configs", str(shipped_config("single_1d_nair")), "--out", str(tmp_path)]) == 1


def test_check_gradients_passes(capsys):
    assert main(["check-gradients", "--config", str(shipped_config("single_1d_nair")), "--samples", "10"]) == 0
    assert "worst offender" in capsys.readouterr().out


def test_check_gradients_detects_corruption(capsys):
    code = main(["check-gradients", "--config", str(shipped_config("single_1d_nair")), "--samples", "5", "--corrupt", "defects"])
    out = capsys.readouterr().out
    assert code == 2
    assert "worst offender: defects" in out


def test_check_gradients_unknown_block():
    assert main(["check-gradients", "--config", str(shipped_config("single_1d_nair")), "--samples", "1", "--corrupt", "nope"]) == 1


def test_atomic_write_leaves_no_temporaries(tmp_path):
    p = tmp_path / "sub" / "f.txt"
    _atomic_write(p, "one")
    _atomic_write(p, "two")
    assert p.read_text() == "two"
    assert [q.name for q in p.parent.iterdir()] == ["f.txt"]


def test_atomic_write_keeps_old_file_on_failure(tmp_path):
    p = tmp_path / "f.txt"
    _atomic_write(p, "old")
    with pytest.raises(TypeError):
        _atomic_write(p, 123)
    assert p.read_text() == "old"
    assert [q.name for q in tmp_path.iterdir()] == ["f.txt"]
