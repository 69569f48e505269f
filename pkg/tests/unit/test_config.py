"""Unit tests for run configuration files."""

import json
from pathlib import Path

import pytest

from dks_lab.core.losses import Strategy
from dks_lab.exceptions import ConfigurationException
from dks_lab.models.config import (
    RESOLVED_CONFIG_NAME,
    RunConfig,
    Scheme,
    load_run_config,
    parse_run_config,
    write_resolved_config,
)


def _write(tmp_path: Path, payload: object) -> Path:
    path = tmp_path / "config.json"
    path.write_text(json.dumps(payload), encoding="utf-8")
    return path


class TestRunConfig:
    """Test suite for config validation."""

    def test_defaults(self) -> None:
        """Test an empty document gives bi-directional DKS on cifar-mini."""
        config = parse_run_config({})
        assert config.scheme == Scheme.DKS
        assert config.strategy == Strategy.BI_DIRECTIONAL
        assert config.model.preset == "cifar-mini"
        assert config.precision == 32

    def test_unknown_key_fails_closed(self) -> None:
        """Test typos are errors naming the field."""
        with pytest.raises(ConfigurationException) as info:
            parse_run_config({"train": {"epoch": 3}})
        assert "train.epoch" in info.value.message

    def test_wrong_version(self) -> None:
        """Test only version 1 is accepted."""
        with pytest.raises(ConfigurationException):
            parse_run_config({"version": 2})

    def test_baseline_rejects_heads(self) -> None:
        """Test baseline trains without auxiliary heads."""
        with pytest.raises(ConfigurationException):
            parse_run_config({"scheme": "baseline", "model": {"heads": ["C2"]}})

    def test_baseline_has_no_aux_heads(self) -> None:
        """Test baseline builds an empty head list."""
        assert parse_run_config({"scheme": "baseline"}).aux_heads() == []

    def test_custom_strategy_needs_pairs(self) -> None:
        """Test custom matching needs an explicit list."""
        with pytest.raises(ConfigurationException):
            parse_run_config({"strategy": "custom"})
        config = parse_run_config({"strategy": "custom", "pairs": [["C1", "C2"]]})
        assert config.pairs == [("C1", "C2")]

    def test_pairs_only_with_custom(self) -> None:
        """Test pairs are refused with a generated strategy or a non-DKS scheme."""
        with pytest.raises(ConfigurationException):
            parse_run_config({"pairs": [["C1", "C2"]]})
        with pytest.raises(ConfigurationException):
            parse_run_config({"scheme": "ds", "pairs": [["C1", "C2"]]})

    def test_negative_beta(self) -> None:
        """Test loss weights must be non-negative."""
        with pytest.raises(ConfigurationException):
            parse_run_config({"train": {"loss": {"beta": {"C1->C2": -1.0}}}})

    @pytest.mark.parametrize("schedule", [[4, 2], [0, 3], 0])
    def test_bad_schedule(self, schedule) -> None:
        """Test milestones must increase and periods be positive."""
        with pytest.raises(ConfigurationException):
            parse_run_config({"train": {"lr_decay_epochs": schedule}})

    def test_directory_source_needs_path(self) -> None:
        """Test a directory source names its path."""
        with pytest.raises(ConfigurationException):
            parse_run_config({"data": {"source": "directory"}})


class TestOverrides:
    """Test suite for command-line overrides."""

    def test_seed_sets_model_and_train(self) -> None:
        """Test --seed overrides both seeds and leaves the data seed."""
        config = RunConfig().with_overrides(seed=7)
        assert config.model.seed == 7
        assert config.train.seed == 7
        assert config.data.seed == 0

    def test_precision_is_validated(self) -> None:
        """Test --precision only accepts 32 or 64."""
        assert RunConfig().with_overrides(precision=64).precision == 64
        with pytest.raises(ConfigurationException):
            RunConfig().with_overrides(precision=16)

    def test_output_dir(self, tmp_path: Path) -> None:
        """Test --out replaces the output directory."""
        assert RunConfig().with_overrides(output_dir=tmp_path).output_dir == tmp_path


class TestFiles:
    """Test suite for reading and writing config files."""

    def test_round_trip(self, tmp_path: Path) -> None:
        """Test the resolved snapshot reloads to an equal config."""
        config = parse_run_config({"scheme": "ds", "train": {"epochs": 2}})
        path = write_resolved_config(config, tmp_path / "run")
        assert path.name == RESOLVED_CONFIG_NAME
        assert load_run_config(path) == config

    def test_missing_file(self, tmp_path: Path) -> None:
        """Test a missing file is a configuration error."""
        with pytest.raises(ConfigurationException):
            load_run_config(tmp_path / "absent.json")

    def test_invalid_json(self, tmp_path: Path) -> None:
        """Test malformed JSON is reported."""
        path = tmp_path / "config.json"
        path.write_text("{not json", encoding="utf-8")
        with pytest.raises(ConfigurationException):
            load_run_config(path)

    def test_non_object(self, tmp_path: Path) -> None:
        """Test the document must be an object."""
        with pytest.raises(ConfigurationException):
            load_run_config(_write(tmp_path, [1, 2]))
