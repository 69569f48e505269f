"""Integration tests driving the ``dks`` command line."""

import csv
import json
from pathlib import Path

import pytest
from typer.testing import CliRunner

from dks_lab import __version__
from dks_lab.cli.app import app
from dks_lab.core.trainer import FINAL_CHECKPOINT_NAME, METRICS_NAME
from dks_lab.models.checkpoint import MANIFEST_NAME
from dks_lab.models.config import RESOLVED_CONFIG_NAME

pytestmark = pytest.mark.integration

runner = CliRunner()


@pytest.fixture
def dataset(tmp_path: Path) -> Path:
    """A two-class 8x8 dataset written by ``gen-data``."""
    root = tmp_path / "data"
    result = runner.invoke(
        app,
        [
            "gen-data",
            str(root),
            "--classes",
            "2",
            "--per-class",
            "4",
            "--test-per-class",
            "2",
            "--image-size",
            "8",
        ],
    )
    assert result.exit_code == 0, result.output
    return root


@pytest.fixture
def config(tmp_path: Path, dataset: Path) -> Path:
    """One epoch over ``dataset`` with a narrow model."""
    path = tmp_path / "config.json"
    payload = {
        "model": {"width_multiplier": 0.25},
        "train": {"epochs": 1, "batch_size": 4},
        "data": {"source": "directory", "path": str(dataset)},
    }
    path.write_text(json.dumps(payload), encoding="utf-8")
    return path


@pytest.fixture
def trained(tmp_path: Path, config: Path) -> Path:
    """Output directory of a finished ``train`` run."""
    out = tmp_path / "run"
    result = runner.invoke(app, ["train", "--config", str(config), "--out", str(out)])
    assert result.exit_code == 0, result.output
    return out


class TestTrainCommand:
    """Test suite for dks train."""

    def test_writes_artifacts(self, trained: Path) -> None:
        """Test metrics, checkpoint and the resolved config."""
        for name in (METRICS_NAME, FINAL_CHECKPOINT_NAME, RESOLVED_CONFIG_NAME):
            assert (trained / name).exists()
        resolved = json.loads((trained / RESOLVED_CONFIG_NAME).read_text(encoding="utf-8"))
        assert resolved["output_dir"] == str(trained)

    def test_unknown_config_key(self, tmp_path: Path) -> None:
        """Test a config typo exits with the configuration code."""
        path = tmp_path / "bad.json"
        path.write_text('{"train": {"epoch": 1}}', encoding="utf-8")
        result = runner.invoke(app, ["train", "--config", str(path)])
        assert result.exit_code == 2
        assert "train.epoch" in result.output

    def test_missing_dataset(self, tmp_path: Path) -> None:
        """Test an absent data directory exits with the I/O code."""
        path = tmp_path / "config.json"
        path.write_text(
            json.dumps({"data": {"source": "directory", "path": str(tmp_path / "none")}}),
            encoding="utf-8",
        )
        result = runner.invoke(app, ["train", "--config", str(path), "--out", str(tmp_path / "r")])
        assert result.exit_code == 4


class TestCheckpointCommands:
    """Test suite for dks export and dks eval."""

    def test_export_then_eval(self, tmp_path: Path, trained: Path, dataset: Path) -> None:
        """Test the stripped checkpoint evaluates with a single head."""
        stripped = tmp_path / "deploy.ckpt"
        result = runner.invoke(app, ["export", str(trained / FINAL_CHECKPOINT_NAME), str(stripped)])
        assert result.exit_code == 0, result.output
        assert (stripped / MANIFEST_NAME).exists()

        result = runner.invoke(app, ["eval", str(stripped), str(dataset)])
        assert result.exit_code == 0, result.output
        snapshot = json.loads(
            (tmp_path / "eval-deploy.ckpt" / RESOLVED_CONFIG_NAME).read_text(encoding="utf-8")
        )
        assert list(snapshot["errors"]) == ["C1"]

    def test_eval_reports_every_head(self, trained: Path, dataset: Path) -> None:
        """Test a full checkpoint lists C1 to C3."""
        result = runner.invoke(
            app, ["eval", str(trained / FINAL_CHECKPOINT_NAME), str(dataset / "test")]
        )
        assert result.exit_code == 0, result.output
        for head_id in ("C1", "C2", "C3"):
            assert head_id in result.output

    def test_corrupt_checkpoint(self, tmp_path: Path) -> None:
        """Test a directory without a manifest exits with the checkpoint code."""
        (tmp_path / "broken.ckpt").mkdir()
        result = runner.invoke(
            app, ["export", str(tmp_path / "broken.ckpt"), str(tmp_path / "out.ckpt")]
        )
        assert result.exit_code == 4


class TestAblateCommand:
    """Test suite for dks ablate."""

    def test_strategy_ablation(self, tmp_path: Path, config: Path) -> None:
        """Test one summary row per strategy."""
        out = tmp_path / "ablation"
        result = runner.invoke(
            app,
            [
                "ablate",
                "strategy",
                "top-down",
                "bottom-up",
                "--config",
                str(config),
                "--out",
                str(out),
            ],
        )
        assert result.exit_code == 0, result.output
        with (out / "summary.csv").open(encoding="utf-8") as handle:
            values = [row["value"] for row in csv.DictReader(handle)]
        assert values == ["top-down", "bottom-up"]

    def test_no_values(self, tmp_path: Path) -> None:
        """Test an ablation without values is a usage error."""
        result = runner.invoke(app, ["ablate", "scheme", "--out", str(tmp_path)])
        assert result.exit_code == 2


class TestVerifyCommand:
    """Test suite for dks verify."""

    def test_synergy_suite(self, tmp_path: Path) -> None:
        """Test the synergy suite writes its reports and a snapshot."""
        out = tmp_path / "verify"
        result = runner.invoke(
            app,
            [
                "verify",
                "synergy",
                "--out",
                str(out),
                "--samples",
                "2000",
                "--sigma",
                "0.2",
                "--sigma",
                "0.1",
            ],
        )
        assert result.exit_code in (0, 1), result.output
        for name in ("synergy.csv", "loss_split.csv", "slope.csv", RESOLVED_CONFIG_NAME):
            assert (out / name).exists()

    def test_unknown_suite(self, tmp_path: Path) -> None:
        """Test an unknown suite name exits with the configuration code."""
        result = runner.invoke(app, ["verify", "everything", "--out", str(tmp_path)])
        assert result.exit_code == 2


class TestDataCommands:
    """Test suite for dks gen-data and dks convert-data."""

    def test_gen_data_layout(self, dataset: Path) -> None:
        """Test both splits and the snapshot exist."""
        assert (dataset / "train" / "meta.json").exists()
        assert (dataset / "test" / "meta.json").exists()
        assert (dataset / RESOLVED_CONFIG_NAME).exists()

    def test_convert_missing_input(self, tmp_path: Path) -> None:
        """Test an absent raw file exits with the I/O code."""
        result = runner.invoke(
            app,
            [
                "convert-data",
                "cifar10",
                str(tmp_path / "out"),
                "--train",
                str(tmp_path / "a.bin"),
                "--test",
                str(tmp_path / "b.bin"),
            ],
        )
        assert result.exit_code == 4


class TestVersion:
    """Test suite for version reporting."""

    @pytest.mark.parametrize("args", [["version"], ["--version"]])
    def test_version(self, args: list[str]) -> None:
        """Test the command and the flag."""
        result = runner.invoke(app, args)
        assert result.exit_code == 0
        assert __version__ in result.output
