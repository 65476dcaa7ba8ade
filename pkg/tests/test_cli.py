import csv
import json
import math

import pytest

from ermlimits.errors import EXIT_OK, EXIT_USER
from ermlimits.commands.reproduce import KNOWN_DEVIATIONS, cell_matches
from ermlimits.main import build_parser, main
from ermlimits.services import binlim, linlim
from ermlimits.services.smooth import FISHER_CACHE
from ermlimits.utils.file_utils import BASE_DIR


def run(capsys, *argv):
    code = main(["-q", *argv])
    out = capsys.readouterr().out.strip()
    return code, (json.loads(out.splitlines()[-1]) if code == EXIT_OK else None)


def records(path):
    return json.loads(open(path).read())["records"]


@pytest.fixture
def fresh_caches():
    """模拟新进程：清空 Fisher 剖面与缓存"""
    linlim._PROFILES.clear()
    binlim._PROFILES.clear()
    FISHER_CACHE.clear()
    yield


class TestBound:

    def test_gaussian_reference_point(self, tmp_path, capsys):
        code, result = run(capsys, "bound", "--model", "linear", "--noise", "gaussian:1", "--delta", "2", "--out", str(tmp_path))
        assert code == EXIT_OK
        (path,) = result["files"]
        rec = records(path)[0]
        assert rec["alpha_star_sq"] == pytest.approx(math.sqrt(2.0) - 1.0, abs=1e-6)
        assert rec["rls_opt"] == pytest.approx(math.sqrt(2.0) - 1.0, abs=1e-12)
        assert rec["ls_unregularized"] == pytest.approx(1.0)
        meta = json.loads(open(path).read())["metadata"]
        assert meta["fisher_achieved"] <= meta["tolerances"]["fisher"]

    def test_csv_format(self, tmp_path, capsys):
        code, result = run(capsys, "bound", "--model", "binary", "--link", "sign", "--delta", "0.5,2", "--format", "csv", "--out", str(tmp_path))
        assert code == EXIT_OK
        lines = [l for l in open(result["files"][0]).read().splitlines() if not l.startswith("#")]
        assert lines[0].startswith("delta,")
        assert len(lines) == 3

    def test_even_link_is_rejected(self, tmp_path, capsys, even_link_csv):
        code, _ = run(capsys, "bound", "--model", "binary", "--link", f"custom:{even_link_csv}", "--delta", "2", "--out", str(tmp_path))
        assert code == EXIT_USER

    def test_missing_noise(self, tmp_path, capsys):
        code, _ = run(capsys, "bound", "--model", "linear", "--delta", "2", "--out", str(tmp_path))
        assert code == EXIT_USER

    def test_reproducible_rerun_is_byte_identical(self, tmp_path, capsys, fresh_caches):
        argv = ["bound", "--model", "linear", "--noise", "laplace:1", "--delta", "2", "--reproducible"]
        _, first = run(capsys, *argv, "--out", str(tmp_path / "a"))
        linlim._PROFILES.clear()
        FISHER_CACHE.clear()
        _, second = run(capsys, *argv, "--out", str(tmp_path / "b"))
        assert open(first["files"][0], "rb").read() == open(second["files"][0], "rb").read()


class TestSolve:

    def test_square_loss_closed_form(self, tmp_path, capsys):
        code, result = run(
            capsys, "solve", "--model", "linear", "--noise", "gaussian:1", "--delta", "2",
            "--loss", "square", "--lambda", "1", "--out", str(tmp_path),
        )
        assert code == EXIT_OK
        rec = records(result["files"][0])[0]
        assert rec["alpha_sq"] == pytest.approx(rec["closed_form"], abs=1e-6)
        assert rec["closed_form"] == pytest.approx(math.sqrt(2.0) - 1.0)

    def test_missing_loss_table(self, tmp_path, capsys):
        code, _ = run(
            capsys, "solve", "--model", "linear", "--noise", "gaussian:1", "--delta", "2",
            "--loss", str(tmp_path / "none.csv"), "--lambda", "1", "--out", str(tmp_path),
        )
        assert code == EXIT_USER

    def test_lambda_must_be_numeric(self, tmp_path, capsys):
        code, _ = run(
            capsys, "solve", "--model", "binary", "--link", "sign", "--delta", "2",
            "--loss", "square-margin", "--lambda", "opt", "--out", str(tmp_path),
        )
        assert code == EXIT_USER


class TestDesignLoss:

    def test_gaussian_table_feeds_back(self, tmp_path, capsys):
        code, result = run(capsys, "design-loss", "--model", "linear", "--noise", "gaussian:1", "--delta", "2", "--out", str(tmp_path))
        assert code == EXIT_OK
        table = tmp_path / "lstar_linear_gaussian-1_d2.csv"
        assert str(table) in result["files"]
        summary = records(next(f for f in result["files"] if f.endswith(".json") and "design_" in f))[0]
        assert summary["near_quadratic"] is True
        assert summary["resolve_gap"] < 1e-4

        code, result = run(
            capsys, "solve", "--model", "linear", "--noise", "gaussian:1", "--delta", "2",
            "--loss", str(table), "--lambda", str(summary["lambda_star"]), "--out", str(tmp_path / "solve"),
        )
        assert code == EXIT_OK
        rec = records(result["files"][0])[0]
        assert rec["alpha_sq"] == pytest.approx(math.sqrt(2.0) - 1.0, abs=1e-4)


class TestSimulate:

    def test_small_ridge_run(self, tmp_path, capsys):
        code, result = run(
            capsys, "simulate", "--config", str(BASE_DIR / "configs" / "ridge_check.toml"),
            "--delta", "2", "--trials", "2", "--n", "20", "--out", str(tmp_path),
        )
        assert code == EXIT_OK
        names = sorted(p.rsplit("/", 1)[-1] for p in result["files"])
        assert names == ["simulate_ridge_check.csv", "simulate_ridge_check.json"]
        payload = json.loads((tmp_path / "simulate_ridge_check.json").read_text())
        assert payload["metadata"]["seed"] == 7
        assert len(payload["records"]["trials"]) == 2

    def test_missing_config(self, tmp_path, capsys):
        code, _ = run(capsys, "simulate", "--config", str(tmp_path / "none.toml"), "--out", str(tmp_path))
        assert code == EXIT_USER


class TestReproduce:

    def test_curves_theory_only(self, tmp_path, capsys):
        code, result = run(capsys, "reproduce", "fig1-left", "--theory-only", "--delta", "0.5,2", "--out", str(tmp_path))
        assert code == EXIT_OK
        assert [p.rsplit("/", 1)[-1] for p in result["files"]] == ["fig1-left_curves.csv"]

    def test_known_deviation_cells(self):
        assert cell_matches("sign", 2.0, 0.8525, 0.0006)
        assert cell_matches("sign", 4.0, 0.6121, 0.0078)
        assert not cell_matches("sign", 6.0, 0.4502, 0.0100)
        assert not cell_matches("laplace-1", 6.0, 0.7300, 0.0390)

    def test_unknown_target(self):
        with pytest.raises(SystemExit) as exc:
            build_parser().parse_args(["reproduce", "fig9"])
        assert exc.value.code == 2

    @pytest.mark.slow
    def test_table_theory_only(self, tmp_path, capsys):
        code, result = run(capsys, "reproduce", "table1", "--theory-only", "--out", str(tmp_path))
        assert code == EXIT_OK
        with open(tmp_path / "table1.csv") as f:
            rows = list(csv.DictReader(l for l in f if not l.startswith("#")))
        selected = [r for r in rows if r["selected"] == "True"]
        assert len(selected) == 20
        assert all(r["cell_matches"] == "True" and r["matches"] == "True" for r in selected)
        off = {(r["block"], float(r["delta"])) for r in selected if float(r["abs_diff"]) > 5e-3}
        assert off <= set(KNOWN_DEVIATIONS)
