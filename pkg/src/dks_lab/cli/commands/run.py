"""``train`` and ``ablate`` commands."""

from typing import Annotated

import typer

from dks_lab.cli.commands.common import (
    ConfigOption,
    OutOption,
    PrecisionOption,
    SeedOption,
    reporting_errors,
    resolve_run_config,
)
from dks_lab.cli.output import Formatter
from dks_lab.core.runner import (
    DEFAULT_SEEDS,
    AblationAxis,
    RunResult,
    run_ablation,
    run_experiment,
)


def _report_run(formatter: Formatter, run: RunResult) -> None:
    final = run.final
    if final is None:
        formatter.warning("No epochs were run; the checkpoint holds the initial parameters.")
    else:
        formatter.format_key_value(
            {
                "epochs": final.epoch,
                "final lr": final.lr,
                "loss": final.loss_total,
                "train error %": final.train_error,
                "test error %": final.test_error,
            },
            title="Final epoch",
        )
        formatter.format_table(
            ["head", "test error %"],
            [(head_id, final.head_errors[head_id]) for head_id in run.head_ids],
            title="Per-head test error",
        )
    formatter.success(f"Artifacts written to {run.out_dir}")


def train(
    config: ConfigOption = None,
    seed: SeedOption = None,
    out: OutOption = None,
    precision: PrecisionOption = None,
) -> None:
    """Train one run: metrics.csv, final.ckpt and resolved_config.json."""
    formatter = Formatter()
    with reporting_errors(formatter):
        run_config = resolve_run_config(config, seed=seed, out=out, precision=precision)
        formatter.info(
            f"Training scheme {run_config.scheme} on preset {run_config.model.preset} "
            f"for {run_config.train.epochs} epochs"
        )
        _report_run(formatter, run_experiment(run_config))


def ablate(
    axis: Annotated[AblationAxis, typer.Argument(help="Dimension to vary.")],
    values: Annotated[list[str] | None, typer.Argument(help="Values of the axis.")] = None,
    config: ConfigOption = None,
    seeds: Annotated[
        list[int] | None, typer.Option("--seed", min=0, help="Seed per run; repeatable.")
    ] = None,
    multi_seed: Annotated[
        bool, typer.Option("--multi-seed", help="Run the five fixed seeds 0-4.")
    ] = False,
    jobs: Annotated[int, typer.Option("--jobs", "-j", help="Parallel runs.")] = 1,
    out: OutOption = None,
    precision: PrecisionOption = None,
) -> None:
    """Run the base config once per axis value and seed, then write summary CSVs."""
    formatter = Formatter()
    with reporting_errors(formatter):
        base = resolve_run_config(config, out=out, precision=precision)
        chosen = list(DEFAULT_SEEDS) if multi_seed else seeds
        result = run_ablation(base, axis, values or [], seeds=chosen, out_dir=out, jobs=jobs)
        formatter.format_table(
            ["value", "runs", "train error % (mean)", "std", "test error % (mean)", "std"],
            [
                (
                    row["value"],
                    row["runs"],
                    _as_float(row["train_err_mean"]),
                    _as_float(row["train_err_std"]),
                    _as_float(row["test_err_mean"]),
                    _as_float(row["test_err_std"]),
                )
                for row in result.mean_rows
            ],
            title=f"Ablation over {result.axis}",
        )
        formatter.success(f"Summaries written to {result.summary} and {result.summary_mean}")


def _as_float(value: str) -> float | str:
    return float(value) if value else ""


def register(app: typer.Typer) -> None:
    """Attach the commands to ``app``."""
    app.command("train")(train)
    app.command("ablate")(ablate)

