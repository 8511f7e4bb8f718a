import json
import subprocess
import sys

import numpy as np
import pytest

import reference_values as ref
from conftest import data_path, run_cli
from parsimony import cli
from parsimony.documents import InputError, dumps, fmt_float, parse_input, parse_matrix


def write(tmp_path, name, payload):
    path = tmp_path / name
    path.write_text(payload if isinstance(payload, str) else json.dumps(payload))
    return str(path)


class TestComplete:
    def test_example2(self, capsys):
        code, doc, _ = run_cli(capsys, "complete", data_path("example2.json"), "--starts", "400", "--seed", "42", "--range", "10")
        assert code == 0
        assert len(doc["solutions"]) >= 5
        for s in doc["solutions"]:
            assert any(np.max(np.abs(np.subtract(s["x"], c))) < 1e-6 for c in ref.EX2_COMPLETIONS.values())
        assert doc["diagnostics"]["config"]["seed"] == 42
        assert doc["input"]["specified"][0] == {"i": 1, "j": 1, "v": 5}

    def test_fully_specified(self, capsys):
        code, doc, _ = run_cli(capsys, "complete", data_path("identity3.json"))
        assert code == 0 and len(doc["solutions"]) == 1
        assert doc["solutions"][0]["flags"]["positive_definite"]

    def test_nonsolvable(self, capsys):
        code, doc, _ = run_cli(capsys, "complete", data_path("nonsolvable_2x2.json"), "--starts", "20")
        assert code == 2 and doc["solutions"] == [] and doc["diagnostics"]["warnings"]

    def test_tall_is_reported_in_user_orientation(self, capsys):
        code, doc, _ = run_cli(capsys, "complete", data_path("tall_3x2.json"), "--starts", "40")
        assert code == 0 and doc["transposed"]
        s = doc["solutions"][0]
        assert np.shape(s["sigma"]) == (3, 2) and np.shape(s["inverse_or_pinv"]) == (2, 3)
        pinv = np.array(s["inverse_or_pinv"])
        for r in s["residual_map"]:
            assert r["value"] == pytest.approx(pinv[r["j"] - 1, r["i"] - 1])
            assert abs(r["value"]) < 1e-9

    def test_text_format_carries_the_same_numbers(self, capsys):
        args = ("complete", data_path("example1.json"), "--starts", "20")
        _, doc, _ = run_cli(capsys, *args)
        code, text, _ = run_cli(capsys, *args, "--format", "text")
        assert code == 0 and isinstance(text, str)
        s = doc["solutions"][0]
        numbers = [*s["x"], s["objective"], s["grad_norm"], *np.ravel(s["sigma"]), *np.ravel(s["inverse_or_pinv"])]
        for v in numbers:
            assert fmt_float(v) in text

    def test_out_file(self, capsys, tmp_path):
        target = tmp_path / "result.json"
        code, out, _ = run_cli(capsys, "complete", data_path("example1.json"), "--starts", "10", "--out", target)
        assert code == 0 and out == ""
        assert json.loads(target.read_text())["command"] == "complete"


class TestDempster:
    def test_example1(self, capsys):
        code, doc, _ = run_cli(capsys, "dempster", data_path("example1.json"))
        assert code == 0
        s = doc["solutions"][0]
        assert s["x"][0] == pytest.approx(ref.EX1_X_DEMPSTER, abs=1e-9)
        assert "entropy" in s

    def test_example2_symmetric(self, capsys):
        code, doc, _ = run_cli(capsys, "dempster", data_path("example2_symmetric.json"))
        assert code == 0
        np.testing.assert_allclose(doc["solutions"][0]["x"], [1.0, 1.0], atol=1e-9)

    def test_fully_specified_spd(self, capsys):
        code, doc, _ = run_cli(capsys, "dempster", data_path("spd_full.json"))
        assert code == 0
        assert doc["solutions"][0]["entropy"] == pytest.approx(0.5 * np.log(11) + (1 + np.log(2 * np.pi)))

    def test_asymmetric_is_an_input_error(self, capsys):
        code, _, err = run_cli(capsys, "dempster", data_path("example2.json"))
        assert code == 1 and "class" in err

    def test_no_positive_definite_start(self, capsys, tmp_path):
        path = write(
            tmp_path,
            "bad.json",
            {
                "rows": 3,
                "cols": 3,
                "specified": [
                    {"i": i, "j": j, "v": v}
                    for (i, j), v in {(1, 1): 1, (1, 2): 5, (2, 1): 5, (2, 2): 1, (2, 3): 0, (3, 2): 0, (3, 3): 1}.items()
                ],
                "classes": [[[1, 3], [3, 1]]],
            },
        )
        code, doc, _ = run_cli(capsys, "dempster", path)
        assert code == 2 and doc["diagnostics"]["failures"] == {"no-PD-start-found": 1}


class TestVerify:
    def test_pathological_point_with_negative_fraction(self, capsys):
        code, doc, _ = run_cli(capsys, "verify", data_path("example1.json"), "--x", "-16/929")
        assert code == 0
        s = doc["solutions"][0]
        assert s["flags"]["zero_count"] == 6
        assert s["gradient"] == pytest.approx([2.0], abs=1e-9)

    def test_sixth_completion_as_decimals(self, capsys):
        x = ",".join(f"{v:.17g}" for v in ref.EX2_COMPLETIONS[6])
        code, doc, _ = run_cli(capsys, "verify", data_path("example2.json"), f"--x={x}")
        assert code == 0
        assert all(abs(r["value"]) < 1e-9 for r in doc["solutions"][0]["residual_map"])
        assert doc["solutions"][0]["flags"]["toeplitz"]

    def test_random_point_has_residuals(self, capsys):
        code, doc, _ = run_cli(capsys, "verify", data_path("example2.json"), "--x", "0.3,0.1,-0.7,2")
        assert code == 0
        assert max(abs(r["value"]) for r in doc["solutions"][0]["residual_map"]) > 1e-3

    def test_singular_point_is_informational(self, capsys):
        code, doc, _ = run_cli(capsys, "verify", data_path("nonsolvable_2x2.json"), "--x", "3,9")
        assert code == 0 and doc["solutions"] == [] and doc["diagnostics"]["warnings"]

    @pytest.mark.parametrize("x", ["1,2", "a", "1/0"])
    def test_bad_x(self, capsys, x):
        code, _, err = run_cli(capsys, "verify", data_path("example1.json"), "--x", x)
        assert code == 1 and "--x" in err

    def test_round_trip_of_grad_norm(self, capsys):
        _, doc, _ = run_cli(capsys, "complete", data_path("example2.json"), "--starts", "60", "--range", "10")
        for s in doc["solutions"]:
            x = ",".join(fmt_float(v) for v in s["x"])
            _, again, _ = run_cli(capsys, "verify", data_path("example2.json"), f"--x={x}")
            assert again["solutions"][0]["grad_norm"] == pytest.approx(s["grad_norm"], abs=1e-12)


class TestGradcheck:
    @pytest.mark.parametrize("name", ["example2.json", "rect_3x5.json", "single_row.json", "tall_3x2.json"])
    def test_passes(self, capsys, name):
        code, doc, _ = run_cli(capsys, "gradcheck", data_path(name))
        assert code == 0 and doc["report"]["passed"] and doc["report"]["checked"] > 0

    def test_failure_exit_code(self, capsys, monkeypatch):
        monkeypatch.setattr(cli, "GRADCHECK_RTOL", 0.0)
        code, doc, _ = run_cli(capsys, "gradcheck", data_path("example2.json"), "--samples", "3")
        assert code == 3 and "worst" in doc["report"]

    def test_all_probes_singular(self, capsys, tmp_path):
        path = write(
            tmp_path,
            "always_singular.json",
            {"rows": 2, "cols": 2, "specified": [{"i": 1, "j": 1, "v": 1}, {"i": 2, "j": 1, "v": 1}], "classes": [[[1, 2], [2, 2]]]},
        )
        code, _, err = run_cli(capsys, "gradcheck", path)
        assert code == 1 and "singular" in err

    def test_text_report(self, capsys):
        code, text, _ = run_cli(capsys, "gradcheck", data_path("example2.json"), "--format", "text")
        assert code == 0 and "max_rel_error" in text


class TestSolve:
    def test_example1_with_fixed_point(self, capsys):
        code, doc, _ = run_cli(capsys, "solve", data_path("example1.json"), data_path("identity4_B.json"), "--x", "-79/58527")
        assert code == 0
        np.testing.assert_allclose(doc["solution_matrix"], ref.EX1_INV_DEMPSTER, atol=1e-8)
        assert doc["zeros_exploited"] == 2 and doc["side"] == "left"

    def test_identity(self, capsys, tmp_path):
        b = write(tmp_path, "b.json", [[1, 2], [3, 4], [5, 6]])
        code, doc, _ = run_cli(capsys, "solve", data_path("identity3.json"), b)
        assert code == 0
        np.testing.assert_allclose(doc["solution_matrix"], [[1, 2], [3, 4], [5, 6]])

    def test_rectangular_right_side(self, capsys, tmp_path):
        b = write(tmp_path, "b.json", {"rows": 1, "cols": 3, "data": [[1, "1/2", 0]]})
        code, doc, _ = run_cli(capsys, "solve", data_path("rect_2x3.json"), b, "--starts", "40")
        assert code == 0 and doc["side"] == "right"
        pinv = np.array(doc["solutions"][0]["inverse_or_pinv"])
        np.testing.assert_allclose(doc["solution_matrix"], np.array([[1, 0.5, 0]]) @ pinv, atol=1e-12)

    def test_incompatible_b(self, capsys):
        code, _, err = run_cli(capsys, "solve", data_path("example1.json"), data_path("identity2_B.json"), "--x", "0")
        assert code == 1 and "rows" in err

    def test_nonsolvable(self, capsys):
        code, doc, _ = run_cli(capsys, "solve", data_path("nonsolvable_2x2.json"), data_path("identity2_B.json"), "--starts", "10")
        assert code == 2


class TestInputErrors:
    @pytest.mark.parametrize(
        "payload, fragment",
        [
            ('{"rows": 2,\n "cols": 2,, }', "line 2 column"),
            ({"rows": 2, "cols": 2}, "missing field 'specified'"),
            ({"rows": 2, "cols": 2, "specified": [], "extra": 1}, "unknown field"),
            ({"rows": 0, "cols": 2, "specified": []}, "rows"),
            ({"rows": 2, "cols": 2, "specified": [{"i": 1, "j": 1, "v": 1}, {"i": 3, "j": 1, "v": 2}]}, "specified[1].i"),
            ({"rows": 2, "cols": 2, "specified": [{"i": 1, "j": 1, "v": 1}, {"i": 1, "j": 1, "v": 2}]}, "specified twice"),
            ({"rows": 2, "cols": 2, "specified": [{"i": 1, "j": 1, "v": "x/y"}]}, "specified[0].v"),
            ({"rows": 2, "cols": 2, "specified": [{"i": 1, "j": 1}]}, "keys i, j, v"),
            ({"rows": 2, "cols": 2, "specified": [], "mode": "rectangular"}, "contradicts"),
            ({"rows": 2, "cols": 2, "specified": [], "mode": "round"}, "mode must be"),
            ({"rows": 2, "cols": 2, "specified": [{"i": 1, "j": 1, "v": 1}], "classes": [[[1, 1]]]}, "also specified"),
            ({"rows": 2, "cols": 2, "specified": [], "classes": [[[1, 1], [1, 2]], [[1, 2]]]}, "already belongs"),
            ({"rows": 2, "cols": 2, "specified": [], "classes": [[[1, 1]]]}, "neither specified nor in a class"),
            ({"rows": 2, "cols": 2, "specified": [], "classes": [[]]}, "classes[0]"),
        ],
    )
    def test_messages(self, capsys, tmp_path, payload, fragment):
        code, _, err = run_cli(capsys, "complete", write(tmp_path, "in.json", payload))
        assert code == 1
        assert fragment in err

    def test_missing_file(self, capsys, tmp_path):
        code, _, err = run_cli(capsys, "complete", tmp_path / "nope.json")
        assert code == 1 and "nope.json" in err

    @pytest.mark.parametrize(
        "argv",
        [[], ["frobnicate"], ["complete"], ["verify", "f.json"], ["gradcheck", "f.json", "--samples", "0"], ["complete", "f.json", "--starts", "0"]],
    )
    def test_usage_errors(self, capsys, argv, tmp_path):
        argv = [data_path("example1.json") if a == "f.json" else a for a in argv]
        code, _, _ = run_cli(capsys, *argv)
        assert code == 1

    def test_bad_matrix_file(self, tmp_path):
        with pytest.raises(InputError, match="row 2"):
            parse_matrix("[[1, 2], [3]]")
        with pytest.raises(InputError, match="declared shape"):
            parse_matrix('{"rows": 3, "data": [[1]]}')


class TestDocuments:
    def test_fraction_values(self):
        with open(data_path("example1.json")) as fh:
            doc = parse_input(fh.read())
        assert doc.pattern.specified[(0, 0)] == 120 / 929
        assert doc.raw["specified"][0]["v"] == "120/929"
        assert doc.pattern.classes == (((0, 3), (3, 0)),)

    def test_floats_round_trip(self):
        for v in (1 / 3, -79 / 58527, 1e-300, 123456789.125, 0.0, 2.0):
            assert float(fmt_float(v)) == v

    def test_dumps_layout(self):
        text = dumps({"a": [[1.0, 2.5]], "b": {"i": 1, "v": 0.1}})
        assert "[1, 2.5]" in text and '{"i": 1, "v": 0.10000000000000001}' in text
        assert json.loads(text)["b"]["v"] == 0.1


def test_module_entry_point():
    out = subprocess.run(
        [sys.executable, "-m", "parsimony", "verify", data_path("example1.json"), "--x", "-16/929", "--format", "text"],
        capture_output=True,
        text=True,
    )
    assert out.returncode == 0
    assert "zero_count=6" in out.stdout
