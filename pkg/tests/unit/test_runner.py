"""Unit tests for single runs and ablations."""

import csv
from pathlib import Path

import pytest

from dks_lab.core.losses import Strategy
from dks_lab.core.runner import (
    SUMMARY_MEAN_NAME,
    SUMMARY_NAME,
    AblationAxis,
    build_model,
    build_pairs,
    prepare_data,
    run_ablation,
    run_experiment,
    variant_config,
)
from dks_lab.core.trainer import FINAL_CHECKPOINT_NAME, METRICS_NAME
from dks_lab.exceptions import ConfigurationException
from dks_lab.models.config import RESOLVED_CONFIG_NAME, RunConfig, Scheme, parse_run_config


@pytest.fixture
def base(tmp_path: Path) -> RunConfig:
    """One epoch of a narrow cifar-mini on eight 8x8 training images."""
    return parse_run_config(
        {
            "model": {"width_multiplier": 0.25},
            "train": {"epochs": 1, "batch_size": 4},
            "data": {"classes": 2, "per_class": 4, "test_per_class": 2, "image_size": 8},
            "output_dir": str(tmp_path / "run"),
        }
    )


class TestRunExperiment:
    """Test suite for run_experiment."""

    def test_artifacts(self, base: RunConfig) -> None:
        """Test the resolved config, metrics and final checkpoint are written."""
        result = run_experiment(base)
        for name in (RESOLVED_CONFIG_NAME, METRICS_NAME, FINAL_CHECKPOINT_NAME):
            assert (base.output_dir / name).exists()
        assert result.head_ids == ["C1", "C2", "C3"]
        assert result.final is not None
        assert result.final.epoch == 1

    def test_directory_source_needs_path(self, base: RunConfig) -> None:
        """Test a directory source without a path."""
        with pytest.raises(ConfigurationException):
            prepare_data(base.data.model_copy(update={"source": "directory"}))

    def test_class_count_mismatch(self, base: RunConfig) -> None:
        """Test model.num_classes must agree with the data."""
        raw = base.model_dump(mode="json")
        raw["model"]["num_classes"] = 5
        with pytest.raises(ConfigurationException):
            run_experiment(parse_run_config(raw))


class TestBuildPairs:
    """Test suite for scheme-dependent pair sets."""

    def test_ds_has_no_pairs(self, base: RunConfig) -> None:
        """Test deep supervision trains without knowledge matching."""
        config = base.model_copy(update={"scheme": Scheme.DS})
        assert len(build_pairs(config, ["C1", "C2", "C3"])) == 0

    def test_top_down(self, base: RunConfig) -> None:
        """Test a named strategy over three heads."""
        config = base.model_copy(update={"strategy": Strategy.TOP_DOWN})
        assert len(build_pairs(config, ["C1", "C2", "C3"])) == 3


class TestVariantConfig:
    """Test suite for deriving ablation runs."""

    def test_strategy(self, base: RunConfig, tmp_path: Path) -> None:
        """Test the strategy axis sets DKS and reseeds the run."""
        config = variant_config(base, "strategy", "top-down", 3, tmp_path / "v")
        assert config.scheme == Scheme.DKS
        assert config.strategy == Strategy.TOP_DOWN
        assert (config.model.seed, config.train.seed) == (3, 3)
        assert config.output_dir == tmp_path / "v"

    def test_custom_strategy_is_not_an_ablation_value(self, base: RunConfig, tmp_path) -> None:
        """Test custom needs explicit pairs and cannot be swept."""
        with pytest.raises(ConfigurationException):
            variant_config(base, AblationAxis.STRATEGY, "custom", 0, tmp_path)

    def test_attachments(self, base: RunConfig, tmp_path: Path) -> None:
        """Test head lists are parsed from concatenated ids."""
        config = variant_config(base, "attachments", "C1C3", 0, tmp_path)
        assert config.model.heads == ["C3"]
        train_set, _ = prepare_data(config.data)
        assert build_model(config, train_set).head_ids == ["C1", "C3"]

    def test_attachment_columns_keep_head_names(self, base: RunConfig, tmp_path: Path) -> None:
        """Test each head's error lands in its own summary column."""
        result = run_ablation(base, "attachments", ["C1C2", "C1C3"], out_dir=tmp_path / "a")
        by_value = {row["value"]: row for row in result.rows}
        assert "test_err_C2" in by_value["C1C2"]
        assert "test_err_C3" not in by_value["C1C2"]
        assert "test_err_C3" in by_value["C1C3"]
        assert "test_err_C2" not in by_value["C1C3"]

    @pytest.mark.parametrize("value", ["C2C3", "C1C1", "C1-C2"])
    def test_invalid_attachments(self, base: RunConfig, tmp_path: Path, value: str) -> None:
        """Test lists without C1, with repeats, or with stray text."""
        with pytest.raises(ConfigurationException):
            variant_config(base, "attachments", value, 0, tmp_path)

    def test_baseline_scheme_drops_heads(self, base: RunConfig, tmp_path: Path) -> None:
        """Test switching to baseline clears auxiliary heads."""
        config = variant_config(base, "scheme", "baseline", 0, tmp_path)
        assert config.aux_heads() == []

    def test_noise(self, base: RunConfig, tmp_path: Path) -> None:
        """Test the noise axis parses a ratio."""
        assert variant_config(base, "noise", "0.25", 0, tmp_path).train.noise_ratio == 0.25
        with pytest.raises(ConfigurationException):
            variant_config(base, "noise", "lots", 0, tmp_path)

    def test_unknown_axis(self, base: RunConfig, tmp_path: Path) -> None:
        """Test only the known axes exist."""
        with pytest.raises(ValueError):
            variant_config(base, "depth", "2", 0, tmp_path)


class TestRunAblation:
    """Test suite for run_ablation."""

    def test_summaries(self, base: RunConfig, tmp_path: Path) -> None:
        """Test one summary row per run and one mean row per value."""
        out = tmp_path / "ablation"
        result = run_ablation(base, "scheme", ["baseline", "dks"], seeds=[0, 1], out_dir=out)

        assert (out / "scheme=dks" / "seed-1" / METRICS_NAME).exists()
        with (out / SUMMARY_NAME).open(encoding="utf-8") as handle:
            rows = list(csv.DictReader(handle))
        assert [(row["value"], row["seed"]) for row in rows] == [
            ("baseline", "0"),
            ("baseline", "1"),
            ("dks", "0"),
            ("dks", "1"),
        ]
        assert list(rows[0])[-3:] == ["test_err_C1", "test_err_C2", "test_err_C3"]
        assert rows[0]["test_err_C2"] == ""
        assert [row["runs"] for row in result.mean_rows] == [2, 2]
        assert result.summary_mean == out / SUMMARY_MEAN_NAME

    def test_empty_values(self, base: RunConfig) -> None:
        """Test an ablation needs values."""
        with pytest.raises(ConfigurationException):
            run_ablation(base, "scheme", [])

    def test_jobs_must_be_positive(self, base: RunConfig) -> None:
        """Test a pool needs at least one worker."""
        with pytest.raises(ConfigurationException):
            run_ablation(base, "scheme", ["dks"], jobs=0)
