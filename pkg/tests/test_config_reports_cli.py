import csv
import json
import math
import subprocess
import sys
from pathlib import Path

import jsonschema
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from folhe import reports
from folhe.cli import EXIT_ERROR, EXIT_OK, EXIT_UNDECIDED, run
from folhe.config import ConfigError, load
from folhe.stability import UNSTABLE

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


@pytest.fixture
def small_model(tmp_path):
    p = tmp_path / "model.cfg"
    p.write_text("[model]\nn = 1\nN = 4\n")
    return str(p)


def write(tmp_path, text, name="c.cfg"):
    p = tmp_path / name
    p.write_text(text)
    return p


def validate(path):
    rep = json.loads(Path(path).read_text())
    jsonschema.validate(rep, reports.load_schema())
    return rep


class TestConfig:
    def test_defaults_and_override(self, tmp_path):
        a = write(tmp_path, "[model]\nn = 1\nN = 6\n", "a.cfg")
        b = write(tmp_path, "[model]\nN = 5\n", "b.cfg")
        cfg = load([a, b])
        assert cfg.model["N"] == 5 and cfg.model["n"] == 1
        assert cfg.solver.tol == 1e-8

    @pytest.mark.parametrize("text,key", [
        ("[model]\nfoo = 1\n", "model.foo"),
        ("[model]\nN = 3\n", "model.N"),
        ("[model]\nN = many\n", "model.N"),
        ("[bundle]\nfactors = 1, x\n", "bundle.factors"),
        ("[bundle]\n", "bundle.factors"),
        ("[solver]\nschedule = 1, 0.5, 0.7\n", "solver.schedule"),
        ("[solver]\nschedule = 0.5, 0.1\n", "solver.schedule"),
        ("[solver]\ntol = -1\n", "solver.tol"),
        ("[moduli]\ncount = 1\n", "moduli.xi"),
        ("[bundle]\nfactors = 0\n[twist:a]\ni = 0\nj = 0\nk = 1,0,0\n", "twist:a.value"),
        ("[widget]\nx = 1\n", "widget"),
    ])
    def test_errors_name_the_key(self, tmp_path, text, key):
        with pytest.raises(ConfigError, match=key.replace(".", r"\.")):
            load([write(tmp_path, text)])

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError, match="does not exist"):
            load([tmp_path / "absent.cfg"])

    def test_shipped_configs_parse(self):
        for p in sorted(CONFIGS.glob("*.cfg")):
            load([p])

    def test_bundle_builds(self, small_model):
        cfg = load([small_model, CONFIGS / "unstable_l1_l0.cfg"])
        spec = cfg.build_bundle(cfg.build_model())
        assert spec.rank == 2


class TestReports:
    @given(st.floats(allow_nan=False, allow_infinity=False))
    def test_floats_round_trip(self, x):
        assert json.loads(reports.dumps({"x": x}))["x"] == x

    def test_seventeen_digits(self):
        assert "0.10000000000000001" in reports.dumps([0.1])
        assert reports.dumps(2.0).strip() == "2.0"

    def test_non_finite(self):
        out = json.loads(reports.dumps([math.nan, math.inf, -math.inf]))
        assert out == ["NaN", "Infinity", "-Infinity"]

    def test_numpy_values(self):
        out = json.loads(reports.dumps({"a": np.arange(3), "z": np.complex128(1 + 2j),
                                        "b": np.bool_(True), "t": (1, 2)}))
        assert out == {"a": [0, 1, 2], "z": [1.0, 2.0], "b": True, "t": [1, 2]}

    def test_report_validates(self):
        rep = reports.make_report("degree", {}, verdicts={"x": "PASS"})
        jsonschema.validate(json.loads(reports.dumps(rep)), reports.load_schema())

    def test_bad_command_rejected_by_schema(self):
        rep = reports.make_report("nonsense", {})
        with pytest.raises(jsonschema.ValidationError):
            jsonschema.validate(rep, reports.load_schema())

    def test_history_csv(self, tmp_path):
        path = reports.write_history_csv([{"eps": 1.0, "residual": 0.5, "newton_iters": 3}],
                                         tmp_path / "h.csv")
        rows = list(csv.DictReader(path.open()))
        assert rows[0]["eps"] == "1.0" and rows[0]["newton_iters"] == "3"
        assert rows[0]["rho"] == "NaN"


class TestCLI:
    def test_degree_trivial_prints_zero(self, capsys, tmp_path, small_model):
        out = tmp_path / "deg.json"
        code = run(["degree", "--model", small_model, "--bundle",
                    str(CONFIGS / "trivial_line.cfg"), "--out", str(out)])
        assert code == EXIT_OK
        assert capsys.readouterr().out.splitlines()[0] == "0"
        rep = validate(out)
        assert rep["command"] == "degree" and rep["tables"]["degree"] == 0.0

    def test_degree_line(self, capsys, small_model):
        assert run(["degree", "--model", small_model, "--bundle",
                    str(CONFIGS / "line_c1.cfg")]) == EXIT_OK
        assert float(capsys.readouterr().out.splitlines()[0]) == pytest.approx(1.0, abs=1e-12)

    def test_verdicts(self, capsys, tmp_path, small_model):
        out = tmp_path / "v.json"
        assert run(["verdict", "--model", small_model, "--bundle",
                    str(CONFIGS / "unstable_l1_l0.cfg"), "--out", str(out)]) == EXIT_OK
        assert validate(out)["verdicts"]["stability"] == UNSTABLE

    def test_unsupported_exits_2(self, tmp_path):
        m = write(tmp_path, "[model]\nn = 2\nN = 4\n", "m.cfg")
        b = write(tmp_path, "[bundle]\nfactors = 0,0; 0,0\n[extension:e]\ni = 0\nj = 1\n"
                  "k = 0,0,0,0,0\ncoeffs = 0.5, 0\n", "b.cfg")
        assert run(["verdict", "--model", str(m), "--bundle", str(b)]) == EXIT_UNDECIDED

    def test_hn(self, tmp_path, small_model):
        out = tmp_path / "hn.json"
        assert run(["hn", "--model", small_model, "--bundle",
                    str(CONFIGS / "hn_l2_l1_l0.cfg"), "--out", str(out)]) == EXIT_OK
        validate(out)

    def test_solve_he_csv(self, tmp_path, small_model):
        out, hist = tmp_path / "s.json", tmp_path / "s.csv"
        code = run(["solve-he", "--model", small_model, "--bundle",
                    str(CONFIGS / "line_c1.cfg"), "--out", str(out), "--csv", str(hist)])
        assert code == EXIT_OK
        rep = validate(out)
        assert rep["verdicts"]["solver"] == "CONVERGED"
        assert "final_metric" in rep["tables"]
        header = next(csv.reader(hist.open()))
        assert header[:3] == ["eps", "residual", "m_eps"]

    def test_solve_he_blowup_has_destabilizer(self, tmp_path, small_model):
        out = tmp_path / "b.json"
        run(["solve-he", "--model", small_model, "--bundle",
             str(CONFIGS / "unstable_l1_l0.cfg"), "--out", str(out)])
        rep = validate(out)
        assert rep["verdicts"]["solver"] == "BLOWUP"
        assert "destabilizer" in rep["tables"]

    def test_deterministic_reports(self, tmp_path, small_model):
        reps = []
        for name in ("a.json", "b.json"):
            out = tmp_path / name
            run(["solve-he", "--model", small_model, "--bundle",
                 str(CONFIGS / "polystable_l1_l1.cfg"), "--out", str(out)])
            rep = json.loads(out.read_text())
            rep.pop("wall_clock_seconds")
            reps.append(rep)
        assert reps[0] == reps[1]

    def test_moduli(self, tmp_path):
        out = tmp_path / "mod.json"
        assert run(["moduli-t3", "--xi", "1,sqrt(2),sqrt(3)", "--count", "3",
                    "--out", str(out)]) == EXIT_OK
        validate(out)
        assert run(["moduli-t3", "--xi", "1,2,3"]) == EXIT_ERROR

    def test_instanton_no_solve(self, tmp_path):
        out = tmp_path / "i.json"
        m = write(tmp_path, "[model]\nn = 2\nN = 4\n", "m.cfg")
        assert run(["instanton-check", "--no-solve", "--model", str(m), "--bundle",
                    str(CONFIGS / "instanton_t4.cfg"), "--out", str(out)]) == EXIT_OK
        validate(out)

    def test_kernel_check(self, tmp_path, small_model):
        out = tmp_path / "k.json"
        assert run(["kernel-check", "--model", small_model, "--count", "5",
                    "--out", str(out)]) == EXIT_OK
        assert validate(out)["verdicts"]["exactness"] == "PASS"

    def test_config_error_exit_1(self, capsys, tmp_path):
        bad = write(tmp_path, "[model]\nfoo = 1\n")
        assert run(["degree", "--model", str(bad)]) == EXIT_ERROR
        assert "model.foo" in capsys.readouterr().err

    def test_usage_error_exit_1(self):
        with pytest.raises(SystemExit) as exc:
            run(["degree", "--bogus"])
        assert exc.value.code == EXIT_ERROR

    def test_plot(self, tmp_path, small_model):
        pytest.importorskip("matplotlib")
        out = tmp_path / "s.json"
        run(["solve-he", "--model", small_model, "--bundle", str(CONFIGS / "line_c1.cfg"),
             "--out", str(out)])
        assert run(["plot", str(out), "-o", str(tmp_path / "s.png")]) == EXIT_OK
        assert (tmp_path / "s.png").stat().st_size > 0

    def test_module_entry_point(self):
        r = subprocess.run([sys.executable, "-m", "folhe", "--help"], capture_output=True,
                           text=True)
        assert r.returncode == 0 and "solve-he" in r.stdout
