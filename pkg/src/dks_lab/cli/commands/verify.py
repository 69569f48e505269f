"""``verify`` command: finite-difference and synergy-decomposition suites."""

from pathlib import Path
from typing import Annotated

import typer

from dks_lab.cli.commands.common import reporting_errors, write_snapshot
from dks_lab.cli.output import Formatter
from dks_lab.core.suites import DEFAULT_SIGMAS, DEFAULT_SYNERGY_SAMPLES, SuiteResult, run_suites
from dks_lab.exceptions import VerificationException

DEFAULT_VERIFY_DIR = Path("runs/verify")


def _report_suite(formatter: Formatter, result: SuiteResult) -> None:
    formatter.format_table(
        ["fixture", "outcome", "detail"],
        [(item.fixture, str(item.outcome), item.detail) for item in result.outcomes],
        title=f"Suite {result.suite}",
    )
    for path in result.files:
        formatter.info(f"Wrote {path}")


def verify(
    suite: Annotated[str, typer.Argument(help="grads, synergy or all.")] = "all",
    out: Annotated[Path, typer.Option("--out", "-o", help="Report directory.")] = (
        DEFAULT_VERIFY_DIR
    ),
    seed: Annotated[int, typer.Option("--seed", min=0, help="Fixture and noise seed.")] = 0,
    samples: Annotated[
        int, typer.Option("--samples", min=4, help="Monte-Carlo samples per sigma.")
    ] = DEFAULT_SYNERGY_SAMPLES,
    sigmas: Annotated[
        list[float] | None, typer.Option("--sigma", help="Noise scale; repeatable.")
    ] = None,
    max_coords: Annotated[
        int, typer.Option("--max-coords", min=1, help="Coordinates sampled per parameter.")
    ] = 6,
) -> None:
    """Run verification suites; exit 0 only if every fixture passes."""
    formatter = Formatter()
    with reporting_errors(formatter):
        chosen_sigmas = tuple(sigmas) if sigmas else DEFAULT_SIGMAS
        results = run_suites(
            suite,
            out,
            seed=seed,
            n_samples=samples,
            sigmas=chosen_sigmas,
            max_coords=max_coords,
        )
        write_snapshot(
            out,
            {
                "suite": suite,
                "seed": seed,
                "samples": samples,
                "sigmas": list(chosen_sigmas),
                "max_coords": max_coords,
            },
        )
        for result in results:
            _report_suite(formatter, result)

        failed = [name for result in results for name in result.failures()]
        if failed:
            raise VerificationException(
                failed[0], f"{len(failed)} fixture(s) failed: {', '.join(failed)}"
            )
        formatter.success("All verification fixtures passed")


def register(app: typer.Typer) -> None:
    """Attach the command to ``app``."""
    app.command("verify")(verify)
