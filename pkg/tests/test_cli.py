import json
import os

import pytest

from microcity.cli import main, parse_args
from microcity.canonical import canonical_json
from microcity.sim_core import standard_grid_scenario


@pytest.fixture()
def scenario_file(tmp_path):
    path = tmp_path / "standard.scenario.json"
    path.write_text(canonical_json(
        standard_grid_scenario("defensive", seed=7, duration_s=5.0).to_obj()) + "\n")
    return str(path)


class TestParseArgs:
    def test_run_with_seed(self):
        args = parse_args(["run", "--scenario", "s.toml", "--seed", "7"])
        assert args.subcommand == "run"
        assert args.seed == 7
        assert args.scenario == "s.toml"

    def test_unknown_subcommand_exits_2(self, capsys):
        with pytest.raises(SystemExit) as exc:
            parse_args(["frobnicate"])
        assert exc.value.code == 2

    def test_unknown_flag_exits_2(self):
        with pytest.raises(SystemExit) as exc:
            parse_args(["run", "--scenario", "x", "--warp", "9"])
        assert exc.value.code == 2

    def test_compare_positional(self):
        args = parse_args(["compare", "a_dir", "b_dir", "--out", "report.txt"])
        assert args.subcommand == "compare"
        assert args.session_a == "a_dir"
        assert args.out == "report.txt"

    def test_help_exits_0(self):
        with pytest.raises(SystemExit) as exc:
            parse_args(["--help"])
        assert exc.value.code == 0


class TestExecute:
    def test_run_then_replay_ok(self, tmp_path, scenario_file, capsys):
        out = str(tmp_path / "sessions")
        assert main(["run", "--scenario", scenario_file, "--out", out]) == 0
        summary = json.loads(capsys.readouterr().out)
        prefix = summary["files"]
        for suffix in (".header", ".telemetry.csv", ".events"):
            assert os.path.exists(prefix + suffix)
        assert main(["replay", "--session", prefix]) == 0

    def test_replay_tamper_exits_1(self, tmp_path, scenario_file, capsys):
        out = str(tmp_path / "sessions")
        main(["run", "--scenario", scenario_file, "--out", out])
        prefix = json.loads(capsys.readouterr().out)["files"]
        csv_path = prefix + ".telemetry.csv"
        lines = open(csv_path).read().splitlines()
        cells = lines[300].split(",")
        cells[6] = f"{float(cells[6]) + 0.000002:.6f}"  # nudge one speed value
        lines[300] = ",".join(cells)
        with open(csv_path, "w") as f:
            f.write("\n".join(lines) + "\n")
        code = main(["replay", "--session", prefix])
        err = capsys.readouterr().err
        assert code == 1
        assert "tick 300" in err

    def test_analyze_outputs_all_metrics(self, tmp_path, scenario_file, capsys):
        out = str(tmp_path / "sessions")
        main(["run", "--scenario", scenario_file, "--out", out])
        prefix = json.loads(capsys.readouterr().out)["files"]
        assert main(["analyze", "--session", prefix]) == 0
        metrics = json.loads(capsys.readouterr().out)
        for key in ("mean_speed", "rms_jerk", "aggressiveness_index",
                    "frac_time_over_limit", "red_light_entries"):
            assert key in metrics
        assert metrics["aggressiveness_index"] is not None

    def test_domain_error_exits_1(self, tmp_path, capsys):
        assert main(["replay", "--session", str(tmp_path / "nope")]) == 1
        assert "error:" in capsys.readouterr().err

    def test_gen_map_roundtrips(self, tmp_path, capsys):
        out = str(tmp_path / "g.map.json")
        assert main(["gen-map", "--rows", "3", "--cols", "4", "--out", out]) == 0
        from microcity.map_model import build_graph, parse_map

        graph = build_graph(parse_map(open(out).read()))
        assert len(graph.spec.nodes) == 12

    def test_analyze_shipped_demo(self, capsys):
        demo = os.path.join(os.path.dirname(__import__("microcity").__file__),
                            "data", "demo", "defensive-demo")
        if not os.path.exists(demo + ".header"):
            pytest.skip("demo session not generated yet")
        assert main(["analyze", "--session", demo]) == 0
        metrics = json.loads(capsys.readouterr().out)
        assert all(v is None or isinstance(v, (int, float)) for v in metrics.values())
