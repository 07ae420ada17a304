"""End-to-end tests for the command-line pipeline."""

import json

import pytest

from manifold_intercept.cli import EXIT_CONFIG, EXIT_NUMERICAL, EXIT_OK, build_parser, main


@pytest.fixture
def cli_config(tmp_path):
    """Small, fast settings file."""
    path = tmp_path / "config.json"
    path.write_text(
        json.dumps(
            {
                "env": "test",
                "seed": 11,
                "n_samples": 60,
                "decoder_epochs": 5,
                "decoder_batch_size": 16,
                "graph_k": 6,
            }
        )
    )
    return path


def _args(cli_config, tmp_path, *extra) -> list[str]:
    return [*extra, "--config", str(cli_config), "--artifacts", str(tmp_path / "artifacts")]


def _last_json(capsys) -> dict:
    return json.loads(capsys.readouterr().out)


class TestParser:
    """Tests for argument parsing."""

    def test_batch_accepts_repeated_scenarios(self):
        """Test --scenario may be given several times for batches."""
        args = build_parser().parse_args(["batch", "--scenario", "a.json", "--scenario", "b.json", "--runs", "3"])
        assert [str(p) for p in args.scenario] == ["a.json", "b.json"]
        assert args.runs == 3

    def test_command_required(self):
        """Test a subcommand is mandatory."""
        with pytest.raises(SystemExit):
            build_parser().parse_args([])


class TestPipeline:
    """Tests for the full artifact pipeline through main()."""

    def test_build_and_run(self, cli_config, tmp_path, capsys):
        """Test every stage writes its artifact and a run leaves a trace."""
        artifacts = tmp_path / "artifacts"

        assert main(_args(cli_config, tmp_path, "gen-data")) == EXIT_OK
        summary = _last_json(capsys)
        assert summary["samples"] == 60
        assert (artifacts / "dataset.csv").exists()

        assert main(_args(cli_config, tmp_path, "embed")) == EXIT_OK
        summary = _last_json(capsys)
        assert summary["sparse"] is False
        assert len(summary["eigenvalues"]) == 2

        assert main(_args(cli_config, tmp_path, "train-decoder")) == EXIT_OK
        assert _last_json(capsys)["gradient_check"] < 1e-3

        assert main(_args(cli_config, tmp_path, "build-graph")) == EXIT_OK
        summary = _last_json(capsys)
        assert summary["k"] == 6
        assert 0 < summary["routable"] <= summary["nodes"]

        trace = tmp_path / "trace.csv"
        assert main(_args(cli_config, tmp_path, "run", "--out", str(trace))) == EXIT_OK
        summary = _last_json(capsys)
        assert summary["scenario"] == "default-throw"
        assert trace.read_text().startswith("time,")

        metrics = tmp_path / "metrics.csv"
        assert main(_args(cli_config, tmp_path, "batch", "--runs", "2", "--out", str(metrics))) == EXIT_OK
        assert _last_json(capsys)["runs"] == 2
        assert len(metrics.read_text().splitlines()) == 3

    def test_missing_dataset_is_config_error(self, cli_config, tmp_path):
        """Test a missing artifact exits with the configuration code."""
        assert main(_args(cli_config, tmp_path, "embed")) == EXIT_CONFIG

    def test_disconnected_kernel_is_numerical_error(self, cli_config, tmp_path, capsys):
        """Test a vanishing bandwidth exits with the numerical code."""
        assert main(_args(cli_config, tmp_path, "gen-data")) == EXIT_OK
        capsys.readouterr()
        assert main(_args(cli_config, tmp_path, "embed", "--alpha", "1e-9")) == EXIT_NUMERICAL

    def test_bad_alpha_is_config_error(self, cli_config, tmp_path, capsys):
        """Test a non-positive bandwidth exits with the configuration code."""
        assert main(_args(cli_config, tmp_path, "gen-data")) == EXIT_OK
        capsys.readouterr()
        assert main(_args(cli_config, tmp_path, "embed", "--alpha", "-1")) == EXIT_CONFIG

    def test_invalid_config_file(self, tmp_path):
        """Test an unreadable or invalid config file exits with the configuration code."""
        bad = tmp_path / "bad.json"
        bad.write_text(json.dumps({"n_samples": 0}))
        assert main(["gen-data", "--config", str(bad)]) == EXIT_CONFIG
        assert main(["gen-data", "--config", str(tmp_path / "absent.json")]) == EXIT_CONFIG
