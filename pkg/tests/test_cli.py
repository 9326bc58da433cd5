"""Tests for configuration parsing, file emission, and the command line."""

import dataclasses
import json
import subprocess
import sys
import xml.etree.ElementTree as ET
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

import tilqr.validation
from tilqr import ConfigError, LqrParams, TimeGrid, equilibrium_gain, exact_cost, solve_equilibrium_riccati
from tilqr.cli import (
    ModelSection,
    NumericsSection,
    OutputSection,
    PdeSection,
    RunConfig,
    SweepSection,
    config_echo,
    default_config,
    main,
    parse_config,
    parse_config_text,
    parse_header_config,
)
from tilqr.errors import EXIT_CONFIG, EXIT_NUMERIC, EXIT_OK, EXIT_VALIDATION
from tilqr.validation import CheckResult

SMALL_CONFIG = """\
[numerics]
ode_steps = 50
sim_steps = 50
n_paths = 200

[pde]
n_t = 25
n_x = 40
n_y = 40

[sweep]
gamma_steps = 5
"""


@pytest.fixture
def small_config(tmp_path):
    path = tmp_path / "run.ini"
    path.write_text(SMALL_CONFIG, encoding="utf-8")
    return path


def run_cli(args, config, out):
    return main([*args, "--config", str(config), "--out", str(out)])


def read_csv(path):
    comments, columns, rows = [], None, []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line.startswith("# "):
            comments.append(line[2:])
        elif columns is None:
            columns = line.split(",")
        else:
            rows.append(line.split(","))
    return comments, columns, rows


class TestParseConfig:
    def test_empty_text_yields_the_defaults(self):
        assert parse_config_text("") == default_config()

    def test_comments_and_blank_lines_are_skipped(self):
        text = "\n# comment\n; other comment\n[model]\n\nsigma = 0.25\n"
        assert parse_config_text(text).model.sigma == 0.25

    def test_values_are_typed_per_key(self):
        text = ("[model]\ngamma = 2.5\n[numerics]\nantithetic = yes\n"
                "n_paths = 4\n[output]\nformats = json , csv\n")
        config = parse_config_text(text)
        assert config.model.gamma == 2.5
        assert config.numerics.antithetic is True
        assert config.numerics.n_paths == 4
        # formats come back in canonical order whatever the input order
        assert config.output.formats == ("csv", "json")

    @pytest.mark.parametrize("text, match", [
        ("[bogus]\n", r"cfg:1: unknown section 'bogus'"),
        ("[model\n", r"cfg:1: malformed section header"),
        ("sigma = 1\n", r"cfg:1: key outside any \[section\]"),
        ("[model]\nzap = 1\n", r"cfg:2: unknown key 'zap'"),
        ("[model]\nsigma = 1\nsigma = 2\n", r"cfg:3: duplicate key 'sigma'"),
        ("[model]\nnonsense\n", r"cfg:2: expected 'key = value'"),
        ("[numerics]\nseed = pi\n", r"cfg:2: bad value for 'seed': expected an integer"),
        ("[numerics]\nantithetic = maybe\n", r"expected a boolean"),
        ("[output]\nformats = xml\n", r"unknown format 'xml'"),
        ("[output]\ndirectory =\n", r"nonempty"),
    ])
    def test_parse_errors_name_the_file_and_line(self, text, match):
        with pytest.raises(ConfigError, match=match):
            parse_config_text(text, source="cfg")

    @pytest.mark.parametrize("text, match", [
        ("[model]\nsigma = -1\n", "sigma must be positive"),
        ("[model]\nhorizon = 0\n", "horizon must be positive"),
        ("[pde]\ntol = 0\n", "tol must be positive"),
        ("[pde]\nmax_iter = 1\n", "max_iter"),
        ("[sweep]\ngamma_min = 2\ngamma_max = 1\n", "sweep range"),
        ("[sweep]\ngamma_steps = 0\n", "gamma_steps"),
        ("[numerics]\nn_paths = 3\nantithetic = true\n", "even"),
    ])
    def test_domain_errors_surface_at_parse_time(self, text, match):
        with pytest.raises(ConfigError, match=match):
            parse_config_text(text)

    def test_missing_file_is_a_config_error(self, tmp_path):
        with pytest.raises(ConfigError, match="cannot read"):
            parse_config(tmp_path / "absent.ini")


def section_strategies():
    models = st.builds(
        ModelSection,
        a_bar=st.floats(-5, 5), b_bar=st.floats(-5, 5),
        sigma=st.floats(1e-3, 5), gamma=st.floats(0, 20),
        horizon=st.floats(0.1, 5), x0=st.floats(-5, 5))
    numerics = st.builds(
        NumericsSection,
        ode_steps=st.integers(1, 10 ** 6), sim_steps=st.integers(1, 10 ** 6),
        n_paths=st.integers(1, 10 ** 8).map(lambda n: 2 * n),
        seed=st.integers(0, 2 ** 64 - 1), antithetic=st.booleans())
    pdes = st.builds(
        lambda n_t, n_x, n_y, x_lo, width, tol, max_iter: PdeSection(
            n_t=n_t, n_x=n_x, n_y=n_y, x_lo=x_lo, x_hi=x_lo + width,
            tol=tol, max_iter=max_iter),
        n_t=st.integers(1, 10 ** 5), n_x=st.integers(4, 512),
        n_y=st.integers(4, 512), x_lo=st.floats(-10, 10),
        width=st.floats(0.5, 10), tol=st.floats(1e-14, 1.0),
        max_iter=st.integers(2, 10 ** 4))
    sweeps = st.builds(
        lambda lo, extra, steps: SweepSection(
            gamma_min=lo, gamma_max=lo + extra, gamma_steps=steps),
        lo=st.floats(0, 10), extra=st.floats(0, 10), steps=st.integers(1, 10 ** 4))
    outputs = st.builds(
        OutputSection,
        directory=st.text("abcdefghijklmnopqrstuvwxyz0123456789_-./", min_size=1, max_size=20),
        formats=st.sampled_from([("csv",), ("json",), ("csv", "json")]))
    return st.builds(RunConfig, model=models, numerics=numerics, pde=pdes,
                     sweep=sweeps, output=outputs)


class TestConfigEcho:
    def test_header_states_tool_and_version_then_all_sections(self):
        lines = config_echo(default_config())
        assert lines[0] == "tilqr 0.1.0"
        assert lines[1] == "[model]"
        assert "a_bar = 0.5" in lines
        assert "formats = csv" in lines
        assert "antithetic = false" in lines

    def test_default_config_round_trips(self):
        lines = config_echo(default_config())
        assert parse_config_text("\n".join(lines[1:])) == default_config()

    @given(section_strategies())
    def test_every_valid_config_round_trips_exactly(self, config):
        lines = config_echo(config)
        assert parse_config_text("\n".join(lines[1:])) == config


class TestOutputFiles:
    def test_gains_table_reaches_the_terminal_conditions(self, small_config, tmp_path):
        out = tmp_path / "out"
        assert run_cli(["gains"], small_config, out) == EXIT_OK
        comments, columns, rows = read_csv(out / "gains.csv")
        assert columns == ["t", "k_equilibrium", "k_naive", "k_pre_state", "c_pre_offset"]
        assert len(rows) == 51
        assert comments[0] == "tilqr 0.1.0"
        assert "ode_steps = 50" in comments
        last = [float(v) for v in rows[-1]]
        assert last[0] == 1.0
        assert last[1] == 0.0   # equilibrium and naive gains vanish at T
        assert last[2] == 0.0
        assert last[3] == 5.0   # precommitted terminal gain 2*b_bar*gamma/2
        assert last[4] == -5.0

    def test_cost_table_matches_the_library_bit_for_bit(self, small_config, tmp_path):
        out = tmp_path / "out"
        assert run_cli(["cost", "--strategy", "equilibrium"], small_config, out) == EXIT_OK
        _, columns, rows = read_csv(out / "cost.csv")
        assert columns == ["strategy", "running_cost", "terminal_cost", "total"]
        params = LqrParams()
        grid = TimeGrid(50, params.horizon)
        gain = equilibrium_gain(solve_equilibrium_riccati(params, grid), params)
        report = exact_cost(gain, params)
        assert rows[0][0] == "equilibrium"
        assert rows[0][3] == repr(float(report.total))

    def test_sweep_emits_dominance_ordered_rows_and_a_plot(self, small_config, tmp_path):
        out = tmp_path / "out"
        assert run_cli(["sweep"], small_config, out) == EXIT_OK
        _, columns, rows = read_csv(out / "sweep.csv")
        assert columns == ["gamma", "j_equilibrium", "j_naive", "j_precommitted"]
        assert len(rows) == 5
        for row in rows:
            gamma, j_eq, j_nav, j_pre = (float(v) for v in row)
            assert j_eq <= j_nav + 1e-12
            assert j_pre <= j_eq + 1e-12
        svg = (out / "sweep.svg").read_text(encoding="utf-8")
        ET.fromstring(svg)
        assert "tilqr 0.1.0" in svg

    def test_simulate_thins_paths_and_flags_agreement(self, small_config, tmp_path):
        out = tmp_path / "out"
        assert run_cli(["simulate", "--strategy", "naive"], small_config, out) == EXIT_OK
        _, columns, rows = read_csv(out / "simulate.csv")
        assert columns == ["strategy", "mc_mean", "mc_stderr", "n_paths",
                           "exact_total", "abs_error", "within_three_stderr"]
        assert rows[0][3] == "200"
        assert rows[0][6] == "true"
        comments, pcols, prows = read_csv(out / "simulate_paths.csv")
        assert pcols == ["path", "t", "state", "control"]
        assert len(prows) == 8 * 51
        assert "note: first 8 of 200 paths" in comments
        # the terminal row repeats the last control sample
        assert prows[50][3] == prows[49][3]

    def test_compare_labels_all_three_strategies(self, small_config, tmp_path):
        out = tmp_path / "out"
        assert run_cli(["compare"], small_config, out) == EXIT_OK
        comments, columns, rows = read_csv(out / "compare.csv")
        assert columns == ["t",
                           "mean_state_equilibrium", "mean_state_naive",
                           "mean_state_precommitted",
                           "mean_abs_control_equilibrium", "mean_abs_control_naive",
                           "mean_abs_control_precommitted"]
        assert len(rows) == 51
        assert any("common random numbers" in c for c in comments)
        ET.fromstring((out / "compare.svg").read_text(encoding="utf-8"))

    def test_pde_reports_scheme_diagnostics(self, small_config, tmp_path):
        out = tmp_path / "out"
        assert run_cli(["pde", "--mode", "sweep"], small_config, out) == EXIT_OK
        comments, columns, rows = read_csv(out / "pde.csv")
        assert columns == ["t", "k_state", "c_offset", "fit_residual"]
        assert "report: mode = sweep" in comments
        assert any(c.startswith("report: stability_ratio = ") for c in comments)
        k0 = float(rows[0][1])
        assert abs(k0 - 0.5437) < 0.03

    def test_pde_picard_reports_its_windows(self, small_config, tmp_path):
        out = tmp_path / "out"
        assert run_cli(["pde", "--mode", "picard"], small_config, out) == EXIT_OK
        comments, _, _ = read_csv(out / "pde.csv")
        assert "report: mode = picard" in comments
        assert any(c.startswith("report: windows = [") for c in comments)

    def test_json_mirror_carries_the_same_table(self, tmp_path):
        config = tmp_path / "run.ini"
        config.write_text(SMALL_CONFIG + "\n[output]\nformats = csv,json\n",
                          encoding="utf-8")
        out = tmp_path / "out"
        assert run_cli(["cost", "--strategy", "naive"], config, out) == EXIT_OK
        doc = json.loads((out / "cost.json").read_text(encoding="utf-8"))
        assert doc["version"] == "0.1.0"
        assert doc["columns"] == ["strategy", "running_cost", "terminal_cost", "total"]
        assert doc["config"]["numerics"]["n_paths"] == 200
        _, _, rows = read_csv(out / "cost.csv")
        assert doc["rows"][0][3] == float(rows[0][3])

    def test_reruns_are_byte_identical(self, small_config, tmp_path):
        out = tmp_path / "out"
        assert run_cli(["sweep"], small_config, out) == EXIT_OK
        first = {p.name: p.read_bytes() for p in out.iterdir()}
        assert run_cli(["sweep"], small_config, out) == EXIT_OK
        second = {p.name: p.read_bytes() for p in out.iterdir()}
        assert first == second
        assert set(first) == {"sweep.csv", "sweep.svg"}

    def test_emitted_header_recovers_the_config(self, small_config, tmp_path):
        out = tmp_path / "out"
        assert run_cli(["pde", "--mode", "sweep"], small_config, out) == EXIT_OK
        recovered = parse_header_config(out / "pde.csv")
        expected = dataclasses.replace(
            parse_config(small_config),
            output=dataclasses.replace(parse_config(small_config).output,
                                       directory=str(out)))
        assert recovered == expected

    def test_header_recovery_requires_the_tool_line(self, tmp_path):
        path = tmp_path / "stray.csv"
        path.write_text("# [model]\n# sigma = 1.0\ncol\n", encoding="utf-8")
        with pytest.raises(ConfigError, match="missing toolkit header"):
            parse_header_config(path)


class TestMainEntry:
    def test_seed_override_works_in_both_flag_positions(self, small_config, tmp_path):
        out_a, out_b = tmp_path / "a", tmp_path / "b"
        assert main(["--seed", "7", "gains", "--config", str(small_config),
                     "--out", str(out_a)]) == EXIT_OK
        assert main(["gains", "--seed", "7", "--config", str(small_config),
                     "--out", str(out_b)]) == EXIT_OK
        comments_a, _, _ = read_csv(out_a / "gains.csv")
        comments_b, _, _ = read_csv(out_b / "gains.csv")
        assert "seed = 7" in comments_a
        assert [c for c in comments_a if not c.startswith("directory")] == \
               [c for c in comments_b if not c.startswith("directory")]

    def test_unknown_subcommand_exits_config(self, capsys):
        assert main(["frobnicate"]) == EXIT_CONFIG
        record = json.loads(capsys.readouterr().err)
        assert record["error"] == "config"

    def test_missing_required_flag_exits_config(self, capsys):
        assert main(["cost"]) == EXIT_CONFIG
        assert json.loads(capsys.readouterr().err)["error"] == "config"

    def test_no_arguments_exits_config(self, capsys):
        assert main([]) == EXIT_CONFIG
        capsys.readouterr()

    def test_missing_config_file_exits_config(self, capsys, tmp_path):
        assert main(["gains", "--config", str(tmp_path / "nope.ini"),
                     "--out", str(tmp_path / "o")]) == EXIT_CONFIG
        record = json.loads(capsys.readouterr().err)
        assert "cannot read" in record["message"]

    def test_numeric_failure_exits_three(self, capsys, tmp_path):
        # a strongly unstable drift from a state near the float ceiling sends
        # every path to infinity within one step
        config = tmp_path / "run.ini"
        config.write_text("[model]\na_bar = 10\nx0 = 1e308\n[numerics]\n"
                          "ode_steps = 4\nsim_steps = 4\nn_paths = 10\n",
                          encoding="utf-8")
        rc = main(["simulate", "--strategy", "naive", "--config", str(config),
                   "--out", str(tmp_path / "o")])
        assert rc == EXIT_NUMERIC
        assert json.loads(capsys.readouterr().err)["error"] == "numeric"

    def test_unwritable_output_directory_exits_config(self, capsys, small_config, tmp_path):
        blocker = tmp_path / "blocked"
        blocker.write_text("a file, not a directory", encoding="utf-8")
        rc = run_cli(["gains"], small_config, blocker)
        assert rc == EXIT_CONFIG
        assert json.loads(capsys.readouterr().err)["error"] == "io"

    def test_validation_failure_exits_four(self, monkeypatch, tmp_path, capsys):
        fake = [CheckResult(1, "fake-check", False, "synthetic failure")]
        monkeypatch.setattr(tilqr.validation, "run_all", lambda: (fake, {"fake-check": 0.0}))
        rc = main(["validate", "--out", str(tmp_path / "o")])
        assert rc == EXIT_VALIDATION
        out = capsys.readouterr().out
        assert "FAIL  1 fake-check: synthetic failure" in out
        _, _, rows = read_csv(tmp_path / "o" / "validation.csv")
        assert rows[0][2] == "false"

    def test_validation_success_exits_zero(self, monkeypatch, tmp_path, capsys):
        fake = [CheckResult(1, "fake-check", True, "fine")]
        monkeypatch.setattr(tilqr.validation, "run_all", lambda: (fake, {"fake-check": 0.0}))
        assert main(["validate", "--out", str(tmp_path / "o")]) == EXIT_OK
        assert "all 1 checks passed" in capsys.readouterr().out

    def test_module_invocation_prints_help(self):
        proc = subprocess.run([sys.executable, "-m", "tilqr", "--help"],
                              capture_output=True, text=True)
        assert proc.returncode == 0
        assert "SUBCOMMAND" in proc.stdout

    def test_module_invocation_without_arguments_fails_cleanly(self):
        proc = subprocess.run([sys.executable, "-m", "tilqr"],
                              capture_output=True, text=True)
        assert proc.returncode == EXIT_CONFIG
        assert json.loads(proc.stderr)["error"] == "config"
