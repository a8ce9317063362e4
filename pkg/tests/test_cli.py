import json

import numpy as np
import pytest

from wcmdp.cli import main, ratio_chart_svg
from wcmdp.model import WcmdpInstance
from wcmdp.simulator import CSV_COLUMNS

from oracles import two_cycle_arm


def run(argv):
    return main(argv)


class TestGenerate:
    def test_fully_het_happy_path(self, tmp_path):
        out = tmp_path / "inst.json"
        code = run(["generate", "--family", "fully-het", "--n", "12",
                    "--states", "4", "--actions", "3", "--k", "2",
                    "--seed", "0", "--out", str(out)])
        assert code == 0
        instance = WcmdpInstance.load(out)
        assert instance.num_arms == 12
        manifest = json.loads((tmp_path / "inst.json.manifest.json").read_text())
        assert manifest["command"] == "generate"
        assert manifest["flags"]["seed"] == 0
        assert len(manifest["instance_hash"]) == 64

    def test_typed_action_only(self, tmp_path):
        out = tmp_path / "typed.json"
        code = run(["generate", "--family", "typed", "--n", "20", "--types",
                    "10", "--k", "1", "--cost-mode", "action-only",
                    "--states", "3", "--actions", "2", "--out", str(out)])
        assert code == 0
        instance = WcmdpInstance.load(out)
        for arm in instance.arms:
            assert np.all(arm.cost == arm.cost[:, :1, :])

    def test_missing_required_flag_exits_2(self, capsys):
        assert run(["generate", "--out", "x.json"]) == 2
        assert "usage" in capsys.readouterr().err

    def test_bad_divisibility_exits_2(self, tmp_path):
        code = run(["generate", "--family", "typed", "--n", "15", "--types",
                    "10", "--states", "3", "--actions", "2",
                    "--out", str(tmp_path / "x.json")])
        assert code == 2

    def test_invalid_instance_file_exits_3(self, tmp_path, capsys):
        from oracles import single_state_arm
        arm = single_state_arm([0.0, 1.0], [[0.4, 1.0]])  # costed free action
        instance = WcmdpInstance.from_arms([arm], [0.5])
        path = tmp_path / "bad.json"
        instance.save(path)
        code = run(["solve", "--instance", str(path),
                    "--out", str(tmp_path / "sol.json")])
        assert code == 3
        assert "cost" in capsys.readouterr().err


class TestPipelineCommands:
    @pytest.fixture()
    def instance_file(self, tmp_path):
        out = tmp_path / "inst.json"
        assert run(["generate", "--n", "10", "--states", "3", "--actions",
                    "2", "--k", "1", "--seed", "1", "--out", str(out)]) == 0
        return out

    def test_solve_writes_solution(self, instance_file, tmp_path, capsys):
        out = tmp_path / "sol.json"
        assert run(["solve", "--instance", str(instance_file),
                    "--out", str(out)]) == 0
        sol = json.loads(out.read_text())
        assert set(sol) == {"R_rel", "y", "duals"}
        assert "R_rel" in capsys.readouterr().out

    def test_simulate_writes_csv_row(self, instance_file, tmp_path):
        out = tmp_path / "sim.csv"
        assert run(["simulate", "--instance", str(instance_file),
                    "--policy", "id", "--horizon", "400", "--reps", "1",
                    "--batch-size", "200", "--out", str(out)]) == 0
        lines = out.read_text().splitlines()
        assert lines[0].split(",") == CSV_COLUMNS
        assert len(lines) == 2

    def test_sweep_csv_and_svg(self, tmp_path):
        out = tmp_path / "sweep.csv"
        svg = tmp_path / "sweep.svg"
        code = run(["sweep", "--n", "8", "--states", "3", "--actions", "2",
                    "--k", "1", "--seed", "0", "--n-list", "8,16",
                    "--policies", "id,erc", "--horizon", "200", "--reps", "1",
                    "--batch-size", "100", "--out", str(out),
                    "--svg", str(svg)])
        assert code == 0
        lines = out.read_text().splitlines()
        assert lines[0].split(",") == CSV_COLUMNS
        assert len(lines) == 1 + 4
        assert svg.read_text().startswith("<svg")
        assert (tmp_path / "sweep.csv.manifest.json").exists()

    def test_sweep_rerun_reproduces_csv(self, tmp_path):
        args = ["sweep", "--n", "8", "--states", "3", "--actions", "2",
                "--k", "1", "--seed", "0", "--n-list", "8", "--horizon",
                "200", "--reps", "1", "--batch-size", "100"]
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        assert run(args + ["--out", str(a)]) == 0
        assert run(args + ["--out", str(b)]) == 0
        assert a.read_text() == b.read_text()

    def test_compare_runs_both_policies(self, instance_file, capsys):
        assert run(["compare", "--instance", str(instance_file), "--horizon",
                    "200", "--reps", "1", "--batch-size", "100"]) == 0
        out = capsys.readouterr().out
        assert "id" in out and "erc" in out

    def test_oracle_check_small(self, capsys):
        assert run(["oracle-check", "--n", "2", "--states", "2", "--actions",
                    "2", "--k", "1", "--seeds", "3"]) == 0
        assert "upper bound holds" in capsys.readouterr().out


class TestDiagnose:
    def test_healthy_instance_emits_json(self, tmp_path):
        inst = tmp_path / "inst.json"
        run(["generate", "--n", "6", "--states", "3", "--actions", "2",
             "--k", "1", "--seed", "2", "--out", str(inst)])
        out = tmp_path / "diag.json"
        assert run(["diagnose", "--instance", str(inst),
                    "--out", str(out)]) == 0
        payload = json.loads(out.read_text())
        assert payload["assumption_ok"] is True
        assert all(isinstance(t, int) for t in payload["tau"])
        assert 0 < payload["gamma"] < 1

    def test_probe_drift_outputs_bound(self, tmp_path):
        inst = tmp_path / "inst.json"
        run(["generate", "--n", "6", "--states", "3", "--actions", "2",
             "--k", "1", "--seed", "2", "--out", str(inst)])
        out = tmp_path / "diag.json"
        assert run(["diagnose", "--instance", str(inst), "--probe-drift",
                    "--samples", "20", "--out", str(out)]) == 0
        payload = json.loads(out.read_text())
        assert payload["probes"][0]["within_bound"] is True

    def test_strict_exits_5_on_periodic_chain(self, tmp_path):
        # a single-action two-cycle arm induces a periodic chain
        instance = WcmdpInstance.from_arms([two_cycle_arm(0.2, 0.8)], [0.3])
        inst = tmp_path / "periodic.json"
        instance.save(inst)
        out = tmp_path / "diag.json"
        code = run(["diagnose", "--instance", str(inst), "--strict",
                    "--out", str(out)])
        assert code == 5

    def test_non_strict_still_reports(self, tmp_path):
        instance = WcmdpInstance.from_arms(
            [two_cycle_arm(0.2, 0.8)], [0.3])
        inst = tmp_path / "periodic.json"
        instance.save(inst)
        out = tmp_path / "diag.json"
        assert run(["diagnose", "--instance", str(inst),
                    "--out", str(out)]) == 0
        payload = json.loads(out.read_text())
        assert payload["assumption_ok"] is False
        assert payload["tau"][0] is None


class TestSvgChart:
    def test_polylines_per_policy(self):
        rows = [{"N": 100, "policy": "id", "ratio": 0.95},
                {"N": 200, "policy": "id", "ratio": 0.97},
                {"N": 100, "policy": "erc", "ratio": 0.94},
                {"N": 200, "policy": "erc", "ratio": 0.95}]
        svg = ratio_chart_svg(rows)
        assert svg.count("<polyline") == 2
        assert "id" in svg and "erc" in svg
