import csv
import json
import os
import subprocess
import sys

import pytest

from rbs.cli import main
from rbs.io import atomic_write, load_problem, load_scenario, scenario_from_dict


def run_cli(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture
def scenario_file(tmp_path):
    data = {
        "schema": 1,
        "cells": {"ref": "fixture:icr18650", "count": 3},
        "design": "d",
        "dt_s": 0.5,
        "initial_soc": [0.9, 0.85, 0.8],
        "load": {"kind": "power", "value": 8.0},
        "schedule": [{"duration_s": 2.0, "native": [1, 0, 0, 1, 0, 0, 1]},
                     {"duration_s": 1.0, "config_index": 0}],
    }
    path = tmp_path / "sc.json"
    path.write_text(json.dumps(data))
    return path


class TestCount:
    def test_ten_cells(self, capsys):
        code, out, _ = run_cli(capsys, "count", "--cells", "10")
        assert code == 0
        assert "22978" in out and "1.633e-10" in out

    def test_csv_table(self, capsys):
        code, out, _ = run_cli(capsys, "count", "--cells", "2", "3", "4", "--format", "csv")
        rows = list(csv.reader(out.splitlines()))
        assert rows[0] == ["n_cells", "v1", "v2", "v3", "v4", "total", "ratio"]
        assert rows[1] == ["2", "3", "1", "", "", "4", "3.125e-02"]
        assert rows[3][-2] == "41"

    def test_single_voltage(self, capsys):
        code, out, _ = run_cli(capsys, "count", "--cells", "6", "--v", "3")
        assert code == 0 and "103" in out

    def test_usage_error(self, capsys):
        code, _, err = run_cli(capsys, "count")
        assert code == 2 and "--cells" in err

    def test_unknown_flag(self, capsys):
        code, _, err = run_cli(capsys, "count", "--cells", "3", "--bogus")
        assert code == 2 and "usage" in err

    def test_domain_error_is_json(self, capsys):
        code, _, err = run_cli(capsys, "count", "--cells", "20")
        assert code == 1
        body = json.loads(err.strip().splitlines()[-1])
        assert body["schema"] == 1 and body["error"] == "ValueError"


class TestEnumerate:
    def test_writes_space(self, capsys, tmp_path):
        out = tmp_path / "space.json"
        code, _, _ = run_cli(capsys, "enumerate", "--cells", "4", "-o", str(out))
        assert code == 0
        data = json.loads(out.read_text())
        assert data["schema"] == 1 and data["total"] == 41
        assert [e["count"] for e in data["per_voltage"]] == [15, 18, 7, 1]

    def test_design_and_range(self, capsys):
        code, out, _ = run_cli(capsys, "enumerate", "--cells", "3", "--design", "d")
        assert code == 0
        assert json.loads(out)["total"] == 5

    def test_byte_identical_reruns(self, capsys, tmp_path):
        a, b = tmp_path / "a.json", tmp_path / "b.json"
        run_cli(capsys, "enumerate", "--cells", "5", "--v-min", "2", "-o", str(a))
        run_cli(capsys, "enumerate", "--cells", "5", "--v-min", "2", "-o", str(b))
        assert a.read_bytes() == b.read_bytes()

    def test_unknown_design(self, capsys):
        code, _, err = run_cli(capsys, "enumerate", "--cells", "3", "--design", "zz")
        assert code == 1 and "zz" in err

    def test_missing_mask_file(self, capsys, tmp_path):
        code, _, err = run_cli(capsys, "enumerate", "--cells", "3", "--masks",
                               str(tmp_path / "none.json"))
        assert code == 1
        assert json.loads(err)["path"].endswith("none.json")


class TestValidate:
    def test_six_cells(self, capsys):
        code, out, _ = run_cli(capsys, "validate", "--cells", "6")
        assert code == 0
        assert out.count("ok") == 6

    def test_beyond_naive_limit(self, capsys):
        code, _, err = run_cli(capsys, "validate", "--cells", "9")
        assert code == 1 and json.loads(err)["error"] == "ValueError"


class TestSimulate:
    def test_missing_config(self, capsys, tmp_path):
        missing = tmp_path / "missing.json"
        code, _, err = run_cli(capsys, "simulate", "--config", str(missing))
        assert code == 1
        body = json.loads(err)
        assert body["path"] == str(missing)

    def test_trace_and_summary(self, capsys, tmp_path, scenario_file):
        out, summ = tmp_path / "t.csv", tmp_path / "s.json"
        code, _, _ = run_cli(capsys, "simulate", "--config", str(scenario_file), "-o", str(out),
                             "--summary", str(summ))
        assert code == 0
        rows = list(csv.reader(out.read_text().splitlines()))
        assert len(rows) == 1 + 6
        s = json.loads(summ.read_text())
        assert s["ok"] and s["samples"] == 6 and s["schema"] == 1

    def test_aborted_run_reports_error(self, capsys, tmp_path, scenario_file):
        data = json.loads(scenario_file.read_text())
        data["load"] = {"kind": "power", "value": 1e5}
        scenario_file.write_text(json.dumps(data))
        out = tmp_path / "t.csv"
        code, _, err = run_cli(capsys, "simulate", "--config", str(scenario_file), "-o", str(out))
        assert code == 1
        assert json.loads(err)["type"] == "PowerInfeasibleError"

    def test_invalid_json(self, capsys, tmp_path):
        p = tmp_path / "bad.json"
        p.write_text("{nope")
        code, _, err = run_cli(capsys, "simulate", "--config", str(p))
        assert code == 1 and json.loads(err)["path"] == str(p)

    def test_bad_schedule_entry(self, tmp_path, scenario_file):
        data = json.loads(scenario_file.read_text())
        data["schedule"] = [{"duration_s": 1.0}]
        with pytest.raises(ValueError, match="need one of"):
            scenario_from_dict(data, tmp_path)
        data["schedule"] = [{"duration_s": 1.0, "config_index": 99}]
        with pytest.raises(ValueError, match="config_index"):
            scenario_from_dict(data, tmp_path)

    def test_cell_list_and_explicit_ssv(self, tmp_path):
        data = {"cells": ["fixture:linear", "fixture:linear"], "initial_soc": [0.5, 0.5],
                "load": {"kind": "current", "value": 1.0},
                "schedule": [{"duration_s": 1.0, "ssv": [0, 1, 0, 0, 1, 1, 0]}]}
        sc = scenario_from_dict(data, tmp_path)
        assert len(sc.models) == 2 and sc.mask is None

    def test_unsupported_schema(self, tmp_path, scenario_file):
        data = json.loads(scenario_file.read_text())
        data["schema"] = 2
        with pytest.raises(ValueError, match="schema"):
            scenario_from_dict(data, tmp_path)


class TestReplay:
    def test_bundled_replay(self, capsys, tmp_path):
        out, summ = tmp_path / "r.csv", tmp_path / "r.json"
        code, _, _ = run_cli(capsys, "replay", "--dt", "1.0", "-o", str(out), "--summary", str(summ))
        assert code == 0
        assert json.loads(summ.read_text())["samples"] == 240

    def test_custom_cell_file(self, capsys, tmp_path):
        from importlib import resources
        src = resources.files("rbs.data").joinpath("cell_linear.json").read_text()
        cell = tmp_path / "c.json"
        cell.write_text(src)
        code, out, _ = run_cli(capsys, "replay", "--cell", str(cell), "--dt", "2.0")
        assert code == 0 and out.startswith("t,v_t,i_t")

    def test_missing_cell_file(self, capsys, tmp_path):
        code, _, err = run_cli(capsys, "replay", "--cell", str(tmp_path / "x.json"))
        assert code == 1 and "x.json" in json.loads(err)["path"]


class TestDumpModel:
    def test_matrices(self, capsys, tmp_path):
        code, _, _ = run_cli(capsys, "dump-model", "--ssv", "0100111", "--soc", "0.5",
                             "--out-dir", str(tmp_path))
        assert code == 0
        meta = json.loads((tmp_path / "meta.json").read_text())
        assert meta["n_cells"] == 2 and "A" in meta["matrices"]
        rows = (tmp_path / "A.csv").read_text().splitlines()
        assert len(rows) == 6 and len(rows[0].split(",")) == 6

    def test_table(self, capsys):
        code, out, _ = run_cli(capsys, "dump-model", "--pattern-table")
        rows = json.loads(out)["rows"]
        assert code == 0 and len(rows) == 8 and rows[0]["bits"] == [0, 1, 0, 0, 1]

    def test_bad_ssv(self, capsys, tmp_path):
        assert run_cli(capsys, "dump-model", "--ssv", "01x", "--out-dir", str(tmp_path))[0] == 1
        assert run_cli(capsys, "dump-model", "--ssv", "0100111", "--soc", "0.1", "0.2", "0.3",
                       "--out-dir", str(tmp_path))[0] == 1
        assert run_cli(capsys, "dump-model", "--out-dir", str(tmp_path))[0] == 1


def _tiny_problem(tmp_path, **over):
    data = {
        "schema": 1,
        "scenario": {"cells": {"ref": "fixture:icr18650", "count": 3}, "design": "a",
                     "initial_soc": [0.8, 0.7, 0.75], "load": {"kind": "power", "value": 6.0},
                     "dt_s": 10.0, "method": "zoh"},
        "n_steps": 3, "step_duration_s": 20.0, "v_norm_min": 1,
        "ga": {"pop": 8, "gens": 3, "pc": 0.8, "pm": 0.1, "seed": 2},
    }
    data.update(over)
    path = tmp_path / "problem.json"
    path.write_text(json.dumps(data))
    return path


class TestOptimize:
    def test_result_and_traces(self, capsys, tmp_path):
        prob = _tiny_problem(tmp_path)
        out, traces = tmp_path / "res.json", tmp_path / "traces"
        code, _, _ = run_cli(capsys, "optimize", "--problem", str(prob), "-o", str(out),
                             "--trace-dir", str(traces))
        assert code == 0
        res = json.loads(out.read_text())
        assert res["schema"] == 1 and res["search_space"] == "feasible"
        assert len(res["best_ssv_sequence"]) == 3 and len(res["fitness_history"]) == 4
        assert len(res["final_socs"]) == 3
        assert {c["step"] for c in res["per_step_configs"]} == {0, 1, 2}
        files = sorted(p.name for p in traces.iterdir())
        assert files == ["step_00.csv", "step_01.csv", "step_02.csv"]
        rows = list(csv.reader((traces / "step_01.csv").read_text().splitlines()))
        assert float(rows[1][0]) == pytest.approx(20.0)

    def test_reproducible(self, capsys, tmp_path):
        prob = _tiny_problem(tmp_path)
        a, b = tmp_path / "a.json", tmp_path / "b.json"
        run_cli(capsys, "optimize", "--problem", str(prob), "-o", str(a))
        run_cli(capsys, "optimize", "--problem", str(prob), "-o", str(b))
        assert a.read_bytes() == b.read_bytes()

    def test_overrides_and_complete_space(self, capsys, tmp_path):
        prob = _tiny_problem(tmp_path)
        code, out, _ = run_cli(capsys, "optimize", "--problem", str(prob), "--complete-space",
                               "--pop", "4", "--gens", "1", "--timing")
        res = json.loads(out)
        assert code == 0 and res["search_space"] == "complete"
        assert res["n_options"] == 2 ** 12 and res["ga"]["pop_size"] == 4
        assert "elapsed_s" in res

    def test_scenario_by_reference(self, tmp_path):
        sc = {"cells": {"ref": "fixture:linear", "count": 2}, "initial_soc": [0.5, 0.6],
              "load": {"kind": "current", "value": 1.0}, "dt_s": 5.0}
        (tmp_path / "sc.json").write_text(json.dumps(sc))
        prob = _tiny_problem(tmp_path, scenario="sc.json")
        pb, params, space = load_problem(prob)
        assert pb.n_options == space.total and params.pop_size == 8

    def test_bundled_case_study_parses(self):
        from importlib import resources
        path = resources.files("rbs.data").joinpath("case_study.json")
        pb, params, space = load_problem(str(path))
        assert pb.n_options == 1291 and pb.n_steps == 20
        assert (params.pop_size, params.generations) == (100, 220)


class TestPlumbing:
    def test_atomic_write_leaves_no_partial_file(self, tmp_path, monkeypatch):
        target = tmp_path / "out.txt"
        atomic_write(target, "first")

        def boom(*a, **k):
            raise OSError("disk full")

        monkeypatch.setattr(os, "replace", boom)
        with pytest.raises(OSError):
            atomic_write(target, "second")
        assert target.read_text() == "first"
        assert [p.name for p in tmp_path.iterdir()] == ["out.txt"]

    def test_threads_and_log_level(self, capsys, monkeypatch):
        monkeypatch.setenv("RBS_LOG", "debug")
        code, _, _ = run_cli(capsys, "--threads", "1", "count", "--cells", "3")
        assert code == 0 and os.environ["OMP_NUM_THREADS"] == "1"

    def test_console_entry_point(self):
        proc = subprocess.run([sys.executable, "-m", "rbs.cli", "count", "--cells", "2"],
                              capture_output=True, text=True)
        assert proc.returncode == 0 and "3.125e-02" in proc.stdout

    def test_load_scenario_relative_cells(self, tmp_path):
        from importlib import resources
        (tmp_path / "cell.json").write_text(
            resources.files("rbs.data").joinpath("cell_linear.json").read_text())
        sc = {"cells": {"ref": "cell.json", "count": 2}, "initial_soc": [0.5, 0.6],
              "load": {"kind": "current", "value": 1.0}, "schedule": []}
        (tmp_path / "s.json").write_text(json.dumps(sc))
        # the cell file's own name field wins over its file name
        assert load_scenario(tmp_path / "s.json").models[0].name == "linear"
