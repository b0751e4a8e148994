import csv
import io
import subprocess
import sys

import pytest

from ccmpc.cli import ScenarioError, main, parse_scenario, scenario_from_dict, serialize_scenario, trajectory_svg
from ccmpc.experiments import default_scenario, run_closed_loop


def write(tmp_path, text, name="scenario.yaml"):
    path = tmp_path / name
    path.write_text(text, encoding="utf-8")
    return str(path)


def read_rows(path):
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.reader(fh))


class TestScenarioFile:
    def test_empty_file_gives_defaults(self, tmp_path):
        sc = parse_scenario(write(tmp_path, ""))
        assert sc == default_scenario()
        assert (sc.dt, sc.k_max, sc.horizon, sc.p_weight, sc.q_weight, sc.r_weight) == (0.1, 200, 15, 1000, 1000, 1)
        assert (sc.state_bound, sc.input_bound, sc.gamma, sc.delta) == (5.0, 4.0, 0.5, 0.97)
        assert [o.sigma2 for o in sc.obstacles] == [0.1, 0.1]
        assert [o.radius for o in sc.obstacles] == [0.8, 0.8]
        assert [o.omega for o in sc.obstacles] == [0.8, 0.4]

    def test_partial_sections(self, tmp_path):
        sc = parse_scenario(write(tmp_path, "barrier:\n  gamma: 0.3\nrun:\n  seed: 9\n"))
        assert sc.gamma == 0.3 and sc.seed == 9 and sc.horizon == 15

    def test_gamma_out_of_range(self, tmp_path):
        with pytest.raises(ScenarioError, match="0 < gamma <= 1"):
            parse_scenario(write(tmp_path, "barrier:\n  gamma: 1.5\n"))

    def test_round_trip(self, tmp_path):
        sc = default_scenario(gamma=0.7, horizon=10, controller="sequential", seed=3).with_noise(0.25)
        text = serialize_scenario(sc)
        again = parse_scenario(write(tmp_path, text))
        assert again == sc
        assert serialize_scenario(again) == text

    def test_obstacle_list(self, tmp_path):
        text = "obstacles:\n  - center: [1, 2, 3]\n    radius: 0.5\n"
        sc = parse_scenario(write(tmp_path, text))
        assert len(sc.obstacles) == 1 and sc.obstacles[0].center == (1.0, 2.0, 3.0)
        assert sc.obstacles[0].radius == 0.5 and sc.obstacles[0].omega == 0.8

    @pytest.mark.parametrize("data, fragment", [
        ({"mpc": {"horizon": 2.5}}, "[mpc] horizon: expected an integer"),
        ({"mpc": {"horizn": 5}}, "unknown key 'horizn'"),
        ({"solver": {}}, "unknown section 'solver'"),
        ({"barrier": {"delta": "high"}}, "[barrier] delta: expected a number"),
        ({"model": {"start": [0, 0]}}, "[model] start: expected a list of 3 numbers"),
        ({"obstacles": [{"radius": -1.0}]}, "[obstacles[0]] invariant violated"),
        ({"obstacles": []}, "[obstacles]"),
        ({"run": {"controller": "pid"}}, "controller must be one of"),
    ])
    def test_errors_name_section_and_key(self, data, fragment):
        with pytest.raises(ScenarioError) as err:
            scenario_from_dict(data)
        assert fragment in str(err.value)

    def test_malformed_yaml(self, tmp_path):
        with pytest.raises(ScenarioError):
            parse_scenario(write(tmp_path, "mpc: [unclosed\n"))


class TestMain:
    def test_unknown_subcommand(self, capsys):
        assert main(["fly"]) == 2
        assert "usage" in capsys.readouterr().err

    def test_unknown_flag(self):
        assert main(["run", "--warp"]) == 2

    def test_config_error_exit_code(self, tmp_path, capsys):
        assert main(["run", "--scenario", write(tmp_path, "barrier:\n  gamma: 1.5\n"), "--out", str(tmp_path)]) == 2
        assert "gamma" in capsys.readouterr().err

    def test_missing_scenario_file(self, tmp_path):
        assert main(["run", "--scenario", str(tmp_path / "missing.yaml")]) == 2

    def test_bad_gamma_flag(self, tmp_path):
        assert main(["run", "--gamma", "0", "--out", str(tmp_path)]) == 2

    def test_help_exits_zero(self):
        assert main(["--help"]) == 0

    def test_run_sequential_200_rows(self, tmp_path, capsys):
        out = tmp_path / "out"
        code = main(["run", "--scenario", "default", "--controller", "sequential", "--seed", "7", "--out", str(out)])
        assert code == 0
        rows = read_rows(out / "trajectory.csv")
        assert rows[0][:2] == ["k", "x0"] and rows[0][-3:] == ["margin_min", "status", "solve_ms"]
        assert len(rows) == 201
        assert [int(r[0]) for r in rows[1:]] == list(range(200))
        line = capsys.readouterr().out
        assert "controller=sequential" in line and "seed=7" in line and "steps=200" in line

    def test_run_is_byte_reproducible_and_svg_is_separate(self, tmp_path):
        args = ["run", "--controller", "cc-mpc-cbf", "--seed", "2", "--k-max", "25"]
        assert main(args + ["--out", str(tmp_path / "a")]) == 0
        assert main(args + ["--out", str(tmp_path / "b"), "--svg"]) == 0
        a = (tmp_path / "a" / "trajectory.csv").read_bytes()
        b = (tmp_path / "b" / "trajectory.csv").read_bytes()
        assert a == b
        svg = (tmp_path / "b" / "trajectory.svg").read_text()
        assert svg.startswith("<svg") and "polyline" in svg and "circle" in svg
        assert not (tmp_path / "a" / "trajectory.svg").exists()

    def test_run_assert_on_failure(self, tmp_path):
        code = main(["run", "--sigma2", "1", "--k-max", "3", "--assert", "--out", str(tmp_path)])
        assert code == 3

    def test_timing_flag(self, tmp_path):
        assert main(["run", "--controller", "nominal", "--k-max", "3", "--timing", "--out", str(tmp_path)]) == 0
        rows = read_rows(tmp_path / "trajectory.csv")
        assert all(r[-1] != "nan" for r in rows[1:])

    def test_sweep_sigma2_assert(self, tmp_path, capsys):
        code = main(["sweep", "--axis", "sigma2", "--values", "1,4", "--trials", "2", "--assert",
                     "--out", str(tmp_path)])
        text = (tmp_path / "table.csv").read_text()
        rows = list(csv.reader(io.StringIO(text)))
        assert rows[0] == ["parameter", "controller", "trials", "success_pct", "feasible_pct",
                           "mean_infeasible_k", "mean_wall_s"]
        assert {(r[0], r[1]) for r in rows[1:]} == {("1", "cc-mpc-cbf"), ("1", "sequential"),
                                                     ("4", "cc-mpc-cbf"), ("4", "sequential")}
        assert all(r[-1] == "nan" for r in rows[1:])
        seq_ok = all(float(s[4]) >= float(o[4]) for s, o in zip(rows[2::2], rows[1::2]))
        assert code == (0 if seq_ok else 3)
        assert "PASS" in capsys.readouterr().out

    def test_sweep_rejects_bad_values(self, tmp_path):
        assert main(["sweep", "--axis", "gamma", "--values", "0.5,2", "--out", str(tmp_path)]) == 2
        assert main(["sweep", "--axis", "horizon", "--values", "2.5", "--out", str(tmp_path)]) == 2
        assert main(["sweep", "--axis", "sigma2", "--values", "a,b", "--out", str(tmp_path)]) == 2

    def test_validate_passes(self, capsys):
        assert main(["validate", "--samples", "1000000", "--seed", "1", "--assert"]) == 0
        out = capsys.readouterr().out
        assert out.count("PASS instance") == 10 and "all pass" in out

    def test_validate_sample_floor(self):
        assert main(["validate", "--samples", "10"]) == 2

    def test_console_script_module(self, tmp_path):
        proc = subprocess.run([sys.executable, "-m", "ccmpc.cli", "bogus"], capture_output=True, text=True)
        assert proc.returncode == 2


def test_svg_contains_reference_and_paths():
    sc = default_scenario(controller="nominal", k_max=10)
    svg = trajectory_svg(sc, run_closed_loop(sc, 0))
    assert svg.count("<polyline") >= 2 + len(sc.obstacles)
    assert svg.rstrip().endswith("</svg>")
