import json
import logging

import pytest
from pydantic import ValidationError

from ermlimits.errors import EXIT_NUMERICAL, ConfigError, NonCoercive, with_delta
from ermlimits.utils.config import (
    CommandSpec,
    ExperimentConfig,
    ModelKind,
    build_experiment_config,
    is_loss_path,
    load_experiment_config,
    parse_delta_list,
    parse_lambda,
)
from ermlimits.utils.file_utils import (
    BASE_DIR,
    THREADS_ENV,
    RunClock,
    build_metadata,
    resolve_n_jobs,
    write_records,
)


class TestParsing:

    @pytest.mark.parametrize("spec,expected", [
        ("2", [2.0]),
        ("0.5,2,4", [0.5, 2.0, 4.0]),
        ("1:2:0.5", [1.0, 1.5, 2.0]),
        ("0.25:1:0.25", [0.25, 0.5, 0.75, 1.0]),
        (3, [3.0]),
        ([0.5, 8], [0.5, 8.0]),
    ])
    def test_delta_list(self, spec, expected):
        assert parse_delta_list(spec) == pytest.approx(expected)

    @pytest.mark.parametrize("spec", ["", "a,b", "1:2", "2:1:0.5", "1:2:0", "0,1", "-1"])
    def test_bad_delta_list(self, spec):
        with pytest.raises(ConfigError):
            parse_delta_list(spec)

    def test_lambda(self):
        assert parse_lambda("opt") == "opt"
        assert parse_lambda("Optimal") == "opt"
        assert parse_lambda("0.5") == 0.5
        assert parse_lambda(2) == 2.0
        for bad in ("-1", "abc", float("inf")):
            with pytest.raises(ConfigError):
                parse_lambda(bad)

    def test_loss_path(self):
        assert is_loss_path("lstar.csv")
        assert is_loss_path("out/lstar")
        assert not is_loss_path("huber:1.5")


class TestExperimentConfig:

    def test_defaults(self):
        config = build_experiment_config({"model": "binary", "link": "sign", "delta": "2"})
        assert config.loss == "optimal"
        assert config.lam == "opt"
        assert config.trials == 50 and config.n == 100
        assert config.source == "sign"
        assert config.sample_size(0.5) == 50

    def test_overrides_win(self):
        config = build_experiment_config(
            {"model": "linear", "noise": "laplace:1", "delta": [2], "trials": 50},
            {"trials": 3, "lambda": 0.2},
        )
        assert config.trials == 3
        assert config.lam == 0.2

    @pytest.mark.parametrize("data", [
        {"model": "linear", "delta": [2]},
        {"model": "binary", "noise": "gaussian:1", "delta": [2]},
        {"model": "linear", "noise": "gaussian:1", "delta": [0.01], "n": 10},
        {"model": "linear", "noise": "gaussian:1", "delta": [2], "loss": "missing/lstar.csv"},
        {"model": "linear", "noise": "gaussian:1", "delta": [2], "unknown": 1},
        {"model": "linear", "noise": "gaussian:1", "delta": [2], "gd": {"armijo": 2.0}},
    ])
    def test_invalid(self, data):
        with pytest.raises(ConfigError):
            build_experiment_config(data)

    def test_shipped_configs_load(self):
        for path in sorted((BASE_DIR / "configs").glob("*.toml")):
            config = load_experiment_config(path)
            assert isinstance(config, ExperimentConfig)
            assert config.source

    def test_missing_and_broken_files(self, tmp_path):
        with pytest.raises(ConfigError):
            load_experiment_config(tmp_path / "none.toml")
        bad = tmp_path / "bad.toml"
        bad.write_text("model = [linear\n")
        with pytest.raises(ConfigError):
            load_experiment_config(bad)


class TestCommandSpec:

    def test_bound(self):
        spec = CommandSpec(subcommand="bound", model=ModelKind.LINEAR, noise="gaussian:1", delta="0.5,2")
        assert spec.delta == [0.5, 2.0]
        assert spec.overrides()["model"] == "linear"

    @pytest.mark.parametrize("kwargs", [
        {"subcommand": "bound", "noise": "gaussian:1", "delta": "2"},
        {"subcommand": "bound", "model": "binary", "delta": "2"},
        {"subcommand": "solve", "model": "linear", "noise": "gaussian:1", "delta": "2", "loss": "square", "lam": "opt"},
        {"subcommand": "solve", "model": "linear", "noise": "gaussian:1", "delta": "2", "loss": "nope/l.csv", "lam": 1},
        {"subcommand": "simulate"},
        {"subcommand": "bound", "model": "linear", "noise": "gaussian:1", "delta": "2", "tol": 0},
    ])
    def test_invalid(self, kwargs):
        with pytest.raises(ValidationError):
            CommandSpec(**kwargs)

    def test_lambda_override_key(self):
        spec = CommandSpec(subcommand="reproduce", target="table1", lam="0.3", trials=2)
        assert spec.overrides() == {"lambda": 0.3, "trials": 2}


class TestOutput:

    def test_thread_cap(self, monkeypatch, caplog):
        monkeypatch.setenv(THREADS_ENV, "2")
        assert resolve_n_jobs(8) == 2
        monkeypatch.setenv(THREADS_ENV, "bogus")
        with caplog.at_level(logging.WARNING, logger="ermlimits.utils.file_utils"):
            assert resolve_n_jobs(3) == 3
        assert THREADS_ENV in caplog.text
        monkeypatch.delenv(THREADS_ENV)
        assert resolve_n_jobs(None) >= 1

    def test_json_and_csv(self, tmp_path):
        meta = build_metadata("bound", 7, {"residual": 1e-7}, RunClock(reproducible=True), source="laplace:1.5")
        records = [{"delta": 2.0, "value": float("nan")}]
        path = write_records(tmp_path / "bound_laplace-1.5", "json", records, meta)
        assert path.name == "bound_laplace-1.5.json"
        payload = json.loads(path.read_text())
        assert payload["metadata"]["seed"] == 7
        assert payload["metadata"]["wall_time_s"] == 0.0
        assert payload["records"][0]["value"] == "nan"

        csv_path = write_records(tmp_path / "bound", "csv", records, meta)
        lines = csv_path.read_text().splitlines()
        assert lines[0].startswith("# command")
        assert "delta,value" in lines

    def test_bad_format(self, tmp_path):
        with pytest.raises(ConfigError):
            write_records(tmp_path / "x", "xml", [], {})


class TestErrors:

    def test_with_delta_tags_in_place(self):
        exc = NonCoercive("Ψ 不可强制", x=0.2)
        assert with_delta(exc, 2.0) is exc
        assert exc.delta == 2.0 and exc.x == 0.2
        assert str(exc).startswith("δ=2: ")
        assert exc.exit_code == EXIT_NUMERICAL
        with_delta(exc, 3.0)
        assert exc.delta == 2.0

    def test_reraise_keeps_type(self):
        with pytest.raises(NonCoercive) as info:
            try:
                raise NonCoercive("x", x=1.0)
            except NonCoercive as exc:
                with_delta(exc, 0.5)
                raise
        assert info.value.delta == 0.5
