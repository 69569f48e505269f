"""Unit tests for the named verification suites."""

import csv
from pathlib import Path

import pytest

from dks_lab.core.suites import (
    GRADS_HEADER,
    SLOPE_HEADER,
    SYNERGY_HEADER,
    FixtureOutcome,
    Outcome,
    SuiteResult,
    run_grads_suite,
    run_suites,
    run_synergy_suite,
)
from dks_lab.exceptions import ConfigurationException


def _header(path: Path) -> list[str]:
    with path.open(encoding="utf-8") as handle:
        return next(csv.reader(handle))


class TestSuiteResult:
    """Test suite for verdict bookkeeping."""

    def test_documented_is_not_a_failure(self) -> None:
        """Test only FAIL outcomes fail a suite."""
        result = SuiteResult("demo")
        result.record("a", ok=True, detail="")
        result.outcomes.append(FixtureOutcome("b", Outcome.DOCUMENTED, "expected"))
        assert result.passed
        result.record("c", ok=False, detail="off")
        assert not result.passed
        assert result.failures() == ["c"]


class TestSynergySuite:
    """Test suite for run_synergy_suite."""

    def test_fixtures_and_files(self, tmp_path: Path) -> None:
        """Test every fixture is reported and the three CSVs are written."""
        result = run_synergy_suite(tmp_path, n_samples=2000, sigmas=[0.2, 0.1])
        names = [item.fixture for item in result.outcomes]
        for expected in ("linear", "identical", "loss-split-linear", "jacobian-tanh"):
            assert expected in names
        documented = [item for item in result.outcomes if item.outcome == Outcome.DOCUMENTED]
        assert len(documented) == 1
        assert [path.name for path in result.files] == [
            "synergy.csv",
            "loss_split.csv",
            "slope.csv",
        ]
        assert _header(tmp_path / "slope.csv") == SLOPE_HEADER
        assert _header(tmp_path / "synergy.csv") == SYNERGY_HEADER
        details = {item.fixture: item.detail for item in result.outcomes}
        assert "raw" in details["linear"]

    def test_exact_fixtures_pass(self) -> None:
        """Test the fixtures with noise-free verdicts."""
        result = run_synergy_suite(n_samples=1000, sigmas=[0.2, 0.1])
        verdicts = {item.fixture: item.outcome for item in result.outcomes}
        assert verdicts["identical"] == Outcome.PASS
        assert verdicts["loss-split-tanh"] == Outcome.PASS
        assert verdicts["jacobian-tanh"] == Outcome.PASS
        assert result.files == []


@pytest.mark.slow
class TestGradsSuite:
    """Test suite for run_grads_suite."""

    def test_all_audits_pass(self, tmp_path: Path) -> None:
        """Test the shipped primitives and fixtures agree with finite differences."""
        result = run_grads_suite(tmp_path, max_coords=2)
        assert result.passed, result.failures()
        names = {item.fixture for item in result.outcomes}
        assert {"primitive:conv2d", "cube", "conv-fc", "cifar-mini-dks", "stop-gradient"} <= names
        assert _header(tmp_path / "grads.csv") == GRADS_HEADER


class TestRunSuites:
    """Test suite for suite selection."""

    def test_unknown_suite(self) -> None:
        """Test an unknown name lists the choices."""
        with pytest.raises(ConfigurationException) as info:
            run_suites("everything")
        assert "synergy" in (info.value.hint or "")

    def test_options_are_filtered_per_suite(self) -> None:
        """Test options meant for another suite are ignored."""
        results = run_suites("synergy", n_samples=1000, sigmas=[0.2, 0.1], max_coords=1)
        assert [result.suite for result in results] == ["synergy"]
