"""End-to-end CLI behavior: exit codes, reports, determinism, workers."""

import json

import pytest

from ocrs.cli import ExperimentConfig, InstanceError, main, run

K4 = {"matroid": {"type": "graphic", "vertices": 4,
                  "edges": [[0, 1], [0, 2], [0, 3], [1, 2], [1, 3], [2, 3]]}}


def _write(tmp_path, name, payload):
    path = tmp_path / name
    path.write_text(json.dumps(payload))
    return str(path)


def test_verify_selectability_pass(tmp_path):
    inst = _write(tmp_path, "k4.json", K4)
    out = tmp_path / "rep.json"
    csv_out = tmp_path / "rep.csv"
    code = main(["verify-selectability", "--scheme", "matroid", "--b", "0.5",
                 "--trials", "20000", "--seed", "7", inst,
                 "--out-json", str(out), "--out-csv", str(csv_out)])
    assert code == 0
    payload = json.loads(out.read_text())
    assert payload["all_pass"] and payload["bound_expr"] == "1-b"
    assert len(payload["elements"]) == 6
    header = csv_out.read_text().splitlines()[0]
    assert header == "element,estimate,ci_halfwidth,bound,pass"


def test_verify_selectability_matching_and_knapsack(tmp_path):
    graph = _write(tmp_path, "tri.json",
                   {"graph": {"vertices": 3,
                              "edges": [[0, 1], [1, 2], [0, 2]]}})
    code = main(["verify-selectability", "--scheme", "matching", "--b", "0.5",
                 "--trials", "5000", "--seed", "1", graph,
                 "--out-json", str(tmp_path / "m.json")])
    assert code == 0
    knap = _write(tmp_path, "knap.json", {"sizes": [0.6, 0.3, 0.3]})
    code = main(["verify-selectability", "--scheme", "knapsack", "--b", "0.25",
                 "--trials", "5000", "--seed", "1", knap,
                 "--out-json", str(tmp_path / "k.json")])
    assert code == 0


def test_verify_selectability_intersect(tmp_path):
    inst = _write(tmp_path, "inter.json", {
        "parts": [
            {"scheme": "matroid",
             "matroid": {"type": "uniform", "n": 3, "k": 2}},
            {"scheme": "knapsack", "sizes": [0.6, 0.4, 0.3]},
        ],
        "x": [0.05, 0.05, 0.05],
    })
    code = main(["verify-selectability", "--scheme", "intersect", "--b",
                 "0.25", "--trials", "5000", "--seed", "1", inst,
                 "--out-json", str(tmp_path / "i.json")])
    assert code == 0
    payload = json.loads((tmp_path / "i.json").read_text())
    assert payload["bound_expr"] == "(1-b) * ((1-2b)/(2-2b))"


def test_byte_identical_reports(tmp_path):
    inst = _write(tmp_path, "k4.json", K4)
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    for out in (a, b):
        assert main(["verify-selectability", "--scheme", "matroid", "--b",
                     "0.5", "--trials", "10000", "--seed", "99", inst,
                     "--out-json", str(out)]) == 0
    assert a.read_bytes() == b.read_bytes()


def test_workers_do_not_change_results(tmp_path):
    inst = _write(tmp_path, "k4.json", K4)
    a, b = tmp_path / "w1.json", tmp_path / "w2.json"
    assert main(["verify-selectability", "--scheme", "matroid", "--b", "0.5",
                 "--trials", "20000", "--seed", "5", inst,
                 "--out-json", str(a)]) == 0
    assert main(["verify-selectability", "--scheme", "matroid", "--b", "0.5",
                 "--trials", "20000", "--seed", "5", "--workers", "3", inst,
                 "--out-json", str(b)]) == 0
    assert a.read_bytes() == b.read_bytes()


def test_malformed_input_exit_codes(tmp_path):
    missing = str(tmp_path / "nope.json")
    assert main(["verify-selectability", "--scheme", "matroid", missing]) == 2
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert main(["probing", str(bad)]) == 2
    nofield = _write(tmp_path, "nofield.json", {"w": [1.0]})
    assert main(["probing", nofield]) == 2


def test_error_names_offending_field(tmp_path, capsys):
    nofield = _write(tmp_path, "nofield.json", {"p": [1.0]})
    assert main(["probing", nofield]) == 2
    err = capsys.readouterr().err
    assert "'w'" in err


def test_impossibility_command(tmp_path, capsys):
    assert main(["impossibility", "--n", "3", "--b", "0.5"]) == 0
    payload = json.loads(capsys.readouterr().out)
    assert payload["best_selectability_float"] == 0.25
    assert payload["matches_closed_form"]
    assert main(["impossibility", "--n", "2", "--b", "1/4"]) == 0
    payload = json.loads(capsys.readouterr().out)
    assert payload["best_selectability"] == "3/4"


def test_prophet_command(tmp_path):
    inst = _write(tmp_path, "p.json", {
        "matroid": {"type": "uniform", "n": 2, "k": 1},
        "dists": [{"support": [1], "probs": [1.0]},
                  {"support": [0, 100], "probs": [0.99, 0.01]}],
    })
    out = tmp_path / "p_out.json"
    code = main(["prophet", inst, "--b", "0.5", "--trials", "20000", "--seed",
                 "3", "--out-json", str(out)])
    assert code == 0
    payload = json.loads(out.read_text())
    assert payload["pass"] and payload["bound"] == 0.25
    assert payload["benchmark_expected_max"] == pytest.approx(1.99)


def test_probing_commands(tmp_path):
    inst = _write(tmp_path, "pr.json", {
        "p": [1.0, 1.0], "w": [3.0, 2.0],
        "inner": {"type": "uniform", "n": 2, "k": 1},
        "outer": {"type": "uniform", "n": 2, "k": 2}, "b": 0.5,
    })
    out = tmp_path / "pr_out.json"
    csv_out = tmp_path / "pr_vals.csv"
    code = main(["probing", inst, "--trials", "20000", "--seed", "3",
                 "--out-json", str(out), "--out-csv", str(csv_out),
                 "--dump-lp", str(tmp_path / "lp.txt")])
    assert code == 0
    assert json.loads(out.read_text())["pass"]
    assert csv_out.read_text().splitlines()[0] == "trial,value"
    assert "max" in (tmp_path / "lp.txt").read_text()

    dl = _write(tmp_path, "dl.json", {
        "p": [1.0, 0.7], "w": [3.0, 2.0],
        "inner": {"type": "uniform", "n": 2, "k": 1},
        "outer": {"type": "uniform", "n": 2, "k": 2}, "b": 0.5,
        "deadlines": [1, 2],
    })
    code = main(["probing-deadlines", dl, "--trials", "10000", "--seed", "3",
                 "--out-json", str(tmp_path / "dl_out.json")])
    assert code == 0
    # plain probing on a deadline instance is a usage error
    assert main(["probing", dl, "--trials", "10"]) == 2
    assert main(["probing-deadlines", inst, "--trials", "10"]) == 2


def test_submodular_commands(tmp_path):
    ocrs_inst = _write(tmp_path, "cov.json", {
        "f": {"universe_weights": [1.0, 2.0, 1.5, 0.5, 1.0],
              "covers": [[0, 1], [1, 2], [2, 3], [3, 4]]},
        "matroid": {"type": "uniform", "n": 4, "k": 2},
        "x": [0.25, 0.25, 0.25, 0.25], "b": 0.5,
    })
    out = tmp_path / "cov_out.json"
    assert main(["submodular", ocrs_inst, "--trials", "20000", "--seed", "3",
                 "--out-json", str(out)]) == 0
    assert json.loads(out.read_text())["mode"] == "monotone"

    cut_inst = _write(tmp_path, "cut.json", {
        "f": {"arcs": [[0, 1, 1.0], [1, 2, 2.0], [2, 3, 1.0], [3, 0, 0.5]]},
        "matroid": {"type": "uniform", "n": 4, "k": 2},
        "x": [0.25, 0.25, 0.25, 0.25], "b": 0.5,
    })
    out2 = tmp_path / "cut_out.json"
    assert main(["submodular", cut_inst, "--trials", "20000", "--seed", "3",
                 "--out-json", str(out2)]) == 0
    assert json.loads(out2.read_text())["mode"] == "half-subsample"

    probe_inst = _write(tmp_path, "sp.json", {
        "f": {"universe_weights": [1.0, 1.0, 2.0],
              "covers": [[0], [1], [2, 0]]},
        "p": [0.8, 0.6, 0.9],
        "inner": {"type": "uniform", "n": 3, "k": 2},
        "outer": {"type": "uniform", "n": 3, "k": 1}, "b": 0.5,
    })
    out3 = tmp_path / "sp_out.json"
    assert main(["submodular", probe_inst, "--trials", "20000", "--seed", "3",
                 "--out-json", str(out3)]) == 0
    assert json.loads(out3.read_text())["mode"] == "probing"


def test_validate_matroid_command(tmp_path):
    inst = _write(tmp_path, "k4.json", K4)
    out = tmp_path / "val.json"
    assert main(["validate-matroid", inst, "--out-json", str(out)]) == 0
    payload = json.loads(out.read_text())
    assert payload["pass"] and payload["checks"]["axioms"]


def test_experiment_config_api(tmp_path):
    inst = _write(tmp_path, "k4.json", K4)
    out = tmp_path / "cfg.json"
    config = ExperimentConfig(command="verify-selectability", instance=inst,
                              scheme="matroid", b=0.5, trials=5000, seed=7,
                              out_json=str(out))
    assert run(config) == 0
    assert json.loads(out.read_text())["all_pass"]
    with pytest.raises(InstanceError):
        ExperimentConfig(command="probing", instance=inst, trials=0)
    with pytest.raises(InstanceError):
        ExperimentConfig(command="probing",
                         instance=str(tmp_path / "absent.json"))
    with pytest.raises(InstanceError):
        run(ExperimentConfig(command="mystery", instance=inst))
    assert run(ExperimentConfig(command="impossibility", n=2, b="0.5")) == 0
