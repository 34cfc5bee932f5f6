import json

import pytest

from bspde_lab import ConfigFileError
from bspde_lab.cli import catalog_entries, main
from bspde_lab.harness import Config, run

RANDOM = {"random": {"amplitude": 1.0}}


def write(tmp_path, text, name="cfg.json"):
    path = tmp_path / name
    path.write_text(text, encoding="utf-8")
    return path


def test_zero_data_solve(tmp_path):
    out = run({"kind": "solve", "tree": {"levels": 3}, "grid": {"points": 6}}, tmp_path / "run")
    row = out.summary["runs"][0]
    assert out.passed and row["sup_y"] == 0.0 and row["sup_Y"] == 0.0 and row["l2_y0"] == 0.0
    assert {p.name for p in (tmp_path / "run").iterdir()} == {"config.json", "summary.json", "runs.csv",
                                                              "solution.csv"}


def test_outputs_are_stable_and_record_the_seed(tmp_path):
    cfg = {"kind": "solve", "seed": 4, "battery": 2, "tree": {"levels": 3}, "grid": {"points": 5},
           "coefficients": {"alpha": RANDOM}, "data": {"yT": RANDOM, "F": RANDOM}}
    run(cfg, tmp_path / "a")
    run(cfg, tmp_path / "b", seed=9)
    a = json.loads((tmp_path / "a" / "summary.json").read_text())
    b = json.loads((tmp_path / "b" / "summary.json").read_text())
    assert a["seed"] == 4 and b["seed"] == 9
    assert [r["seed"] for r in b["runs"]] == [9, 10]
    raw = (tmp_path / "a" / "summary.json").read_text()
    assert raw == json.dumps(json.loads(raw), indent=2, sort_keys=True) + "\n"
    csv_bytes = (tmp_path / "a" / "runs.csv").read_bytes()
    assert b"\r" not in csv_bytes and csv_bytes.startswith(b"seed,")


def test_parallel_battery_matches_serial(tmp_path):
    cfg = {"kind": "estimates", "battery": 4, "tree": {"levels": 4}, "grid": {"points": 8},
           "coefficients": {"alpha": RANDOM, "beta": RANDOM}, "data": {"yT": RANDOM, "F": RANDOM},
           "p_list": [2, 4]}
    run(cfg, tmp_path / "serial")
    run(cfg, tmp_path / "parallel", jobs=2)
    assert (tmp_path / "serial" / "summary.json").read_bytes() == (tmp_path / "parallel" / "summary.json").read_bytes()


@pytest.mark.parametrize("text,fragment", [
    ('{\n  "kind": "solve",\n  "tree": {\n    "levels": "eight"\n  }\n}', ":4: field 'tree.levels'"),
    ('{\n  "kind": "solvee"\n}', ":2: field 'kind'"),
    ('{\n  "kind": "solve",\n  "trees": {}\n}', ":3: field 'trees'"),
    ('{\n  "kind": "solve",\n  "data": {\n    "yT": "sin(pi*z)"\n  }\n}', ":4: field 'data.yT'"),
    ('{\n  "kind": "control",\n  "p_list": [2, 1]\n}', ":3: field 'p_list'"),
    ('{"kind": "solve",\n "tree": {,}}', ":2:11: invalid JSON"),
])
def test_config_diagnostics_name_line_and_field(tmp_path, text, fragment):
    path = write(tmp_path, text)
    with pytest.raises(ConfigFileError) as exc:
        run(Config.load(path))
    assert fragment in str(exc.value)


def test_refinement_study_rejects_random_data():
    with pytest.raises(ConfigFileError, match="formula data"):
        run({"kind": "ito-check", "data": {"yT": RANDOM}, "options": {"checks": ["order"]}})


def test_control_rejects_source_term():
    with pytest.raises(ConfigFileError, match="source"):
        run({"kind": "control", "data": {"yT": "sin(pi*x)", "F": 1.0}})


def test_cli_exit_codes(tmp_path, capsys):
    good = write(tmp_path, json.dumps({"kind": "solve", "tree": {"levels": 2}, "grid": {"points": 4}}), "good.json")
    assert main(["solve", "--config", str(good), "--out", str(tmp_path / "o1")]) == 0
    assert "PASS" in capsys.readouterr().out
    failing = write(tmp_path, json.dumps({"kind": "ito-check", "tree": {"horizon": 1.0}, "p": 4,
                                          "coefficients": {"alpha": "0.5*cos(W)"},
                                          "data": {"yT": "sin(pi*x)*(1+0.5*sin(W))"},
                                          "options": {"checks": ["order"]}, "tolerances": {"min_order": 1.5}}),
                    "fail.json")
    assert main(["run", "--config", str(failing), "--out", str(tmp_path / "o2")]) == 1
    assert main(["control", "--config", str(good)]) == 2
    assert main(["run", "--config", str(tmp_path / "missing.json")]) == 2
    assert main(["run", "--catalog", "no_such_entry"]) == 2
    beta = write(tmp_path, json.dumps({"kind": "control", "coefficients": {"beta": 1.0},
                                       "data": {"yT": "sin(pi*x)"}}), "beta.json")
    assert main(["run", "--config", str(beta), "--out", str(tmp_path / "o3")]) == 3
    err = capsys.readouterr().err
    assert "config error" in err and "UnsupportedConfigurationError" in err


def test_catalog_is_shipped_and_listed(capsys):
    names = catalog_entries()
    prefixes = {name.split("_")[0].rstrip("ab") for name in names}
    assert {f"c{k:02d}" for k in range(1, 12)} <= prefixes
    assert main(["catalog"]) == 0
    listing = capsys.readouterr().out
    assert all(name in listing for name in names)
    for path in names.values():
        Config.load(path)
