"""Named verification suites run by ``dks verify``.

``grads`` audits gradients of every primitive, small hand-built models, the full
cifar-mini multi-head model under the bi-directional synergy loss, and the
stop-gradient fixture. ``synergy`` checks the branch-agreement decomposition on
two-head regression fixtures and fits the residual slope over a sigma sweep.

Each suite returns one :class:`FixtureOutcome` per fixture and, given an output
directory, writes its detailed rows as CSV.
"""

from __future__ import annotations

import csv
import logging
from collections.abc import Callable, Mapping, Sequence
from dataclasses import dataclass, field
from enum import StrEnum
from functools import partial
from pathlib import Path
from typing import Any

import numpy as np

from dks_lab.core import ops
from dks_lab.core.losses import (
    LossWeights,
    Strategy,
    build_pair_set,
    cross_entropy_hard,
    knowledge_match,
    total_loss,
)
from dks_lab.core.ops import Mode
from dks_lab.core.tensor import Array, Tensor, precision
from dks_lab.core.verifier import (
    DEFAULT_TOLERANCE,
    RAW_SE_MULTIPLE,
    DecompositionReport,
    GradCheckReport,
    GroupStatus,
    LossSplitReport,
    PerturbationSpec,
    agreeing_cubic_fixture,
    check_primitive,
    cubic_vs_zero_fixture,
    ds_vs_dks_loss_split,
    grad_check,
    jacobian_agreement,
    linear_fixture,
    residual_slope,
    tanh_fixture,
    verify_synergy_decomposition,
)
from dks_lab.exceptions import ConfigurationException
from dks_lab.models.multihead import build
from dks_lab.models.presets import PresetOptions, resolve_preset

logger = logging.getLogger(__name__)

PRIMITIVE_TOLERANCE = 1e-6
CUBE_TOLERANCE = 1e-9
JACOBIAN_TOLERANCE = 1e-6
MIN_RESIDUAL_SLOPE = 3.5
DEFAULT_SIGMAS = (0.2, 0.1, 0.05)
DEFAULT_SYNERGY_SAMPLES = 1_000_000
LINEAR_Z0 = 3.0
LINEAR_SIGMA = 0.1
LINEAR_LHS = 4.505

GRADS_HEADER = [
    "fixture",
    "group",
    "checked",
    "skipped",
    "max_rel_error",
    "analytic_norm",
    "numeric_norm",
    "status",
]
SYNERGY_HEADER = [
    "fixture",
    "sigma",
    "lhs",
    "ci",
    "consistency_term",
    "mismatch_term",
    "residual",
    "bound",
    "raw_lhs",
    "raw_se",
    "passed",
]
SLOPE_HEADER = ["fixture", "sigma", "residual", "slope", "expected"]
SPLIT_HEADER = ["fixture", "sigma", "l_ds", "synergy", "l_dks", "gap", "passed"]


class Outcome(StrEnum):
    """Verdict for one fixture."""

    PASS = "pass"
    FAIL = "fail"
    DOCUMENTED = "documented"


@dataclass
class FixtureOutcome:
    """Verdict and one-line explanation for a fixture."""

    fixture: str
    outcome: Outcome
    detail: str


@dataclass
class SuiteResult:
    """Everything a suite produced."""

    suite: str
    outcomes: list[FixtureOutcome] = field(default_factory=list)
    files: list[Path] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        """Whether no fixture failed."""
        return all(item.outcome != Outcome.FAIL for item in self.outcomes)

    def failures(self) -> list[str]:
        """Names of the failed fixtures."""
        return [item.fixture for item in self.outcomes if item.outcome == Outcome.FAIL]

    def record(self, fixture: str, *, ok: bool, detail: str) -> None:
        """Append a pass/fail verdict."""
        outcome = Outcome.PASS if ok else Outcome.FAIL
        self.outcomes.append(FixtureOutcome(fixture, outcome, detail))
        log = logger.info if ok else logger.error
        log("%s %s: %s", fixture, outcome, detail)


def _write_csv(path: Path, header: Sequence[str], rows: Sequence[Mapping[str, Any]]) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as handle:
        writer = csv.DictWriter(handle, fieldnames=list(header))
        writer.writeheader()
        writer.writerows(rows)
    logger.info("Wrote %s", path)
    return path


# Gradient audits


PrimitiveCase = tuple[str, Callable[..., Tensor], list[Array]]


def _primitive_cases(rng: np.random.Generator) -> list[PrimitiveCase]:
    def normal(*shape: int) -> Array:
        return rng.standard_normal(shape)

    away_from_zero = np.sign(normal(3, 4)) * rng.uniform(0.1, 1.0, (3, 4))
    bn_state = ops.BatchNormState.initial(3)
    bn_state.running_var = rng.uniform(0.5, 1.5, 3)

    return [
        ("add", ops.add, [normal(3, 4), normal(3, 4)]),
        ("sub", ops.sub, [normal(3, 4), normal(3, 4)]),
        ("mul", ops.mul, [normal(3, 4), normal(3, 4)]),
        ("scale", partial(ops.scale, factor=1.7), [normal(3, 4)]),
        ("power", partial(ops.power, exponent=3.0), [normal(3, 4)]),
        ("exp", ops.exp, [normal(3, 4)]),
        ("tanh", ops.tanh, [normal(3, 4)]),
        ("log", ops.log, [rng.uniform(0.5, 2.0, (3, 4))]),
        ("relu", ops.relu, [away_from_zero]),
        ("sum", partial(ops.sum, axis=1), [normal(3, 4)]),
        ("mean", partial(ops.mean, axis=0), [normal(3, 4)]),
        ("reshape", partial(ops.reshape, shape=(4, 3)), [normal(3, 4)]),
        ("flatten", ops.flatten, [normal(2, 3, 2, 2)]),
        ("global_avg_pool", ops.global_avg_pool, [normal(2, 3, 4, 4)]),
        ("max_pool", ops.max_pool, [normal(2, 2, 4, 4)]),
        ("softmax", ops.softmax, [normal(3, 5)]),
        ("log_softmax", ops.log_softmax, [normal(3, 5)]),
        ("matmul", ops.matmul, [normal(3, 4), normal(4, 2)]),
        ("linear", ops.linear, [normal(3, 4), normal(2, 4), normal(2)]),
        (
            "conv2d",
            partial(ops.conv2d, stride=2, padding=1),
            [normal(2, 3, 5, 5), normal(4, 3, 3, 3), normal(4)],
        ),
        (
            "batchnorm_train",
            lambda x, g, b: ops.batchnorm(x, g, b, ops.BatchNormState.initial(3), Mode.TRAIN),
            [normal(4, 3, 3, 3), rng.uniform(0.5, 1.5, 3), normal(3)],
        ),
        (
            "batchnorm_eval",
            lambda x, g, b: ops.batchnorm(x, g, b, bn_state, Mode.EVAL),
            [normal(4, 3, 3, 3), rng.uniform(0.5, 1.5, 3), normal(3)],
        ),
        (
            "dropout",
            lambda x: ops.dropout(x, 0.5, Mode.TRAIN, np.random.default_rng(7)),
            [normal(3, 4)],
        ),
    ]


def _conv_fc_fixture(rng: np.random.Generator) -> tuple[Callable[[], Tensor], dict[str, Tensor]]:
    images = Tensor(rng.standard_normal((2, 2, 5, 5)))
    labels = np.array([1, 3])
    params = {
        "conv.weight": Tensor(0.4 * rng.standard_normal((3, 2, 3, 3)), requires_grad=True),
        "bn.gamma": Tensor(rng.uniform(0.5, 1.5, 3), requires_grad=True),
        "bn.beta": Tensor(0.1 * rng.standard_normal(3), requires_grad=True),
        "fc.weight": Tensor(0.5 * rng.standard_normal((4, 3)), requires_grad=True),
        "fc.bias": Tensor(0.1 * rng.standard_normal(4), requires_grad=True),
    }

    def loss_fn() -> Tensor:
        h = ops.conv2d(images, params["conv.weight"], padding=1)
        h = ops.batchnorm(
            h, params["bn.gamma"], params["bn.beta"], ops.BatchNormState.initial(3), Mode.TRAIN
        )
        h = ops.global_avg_pool(ops.relu(h))
        logits = ops.linear(h, params["fc.weight"], params["fc.bias"])
        return cross_entropy_hard(labels, logits)

    return loss_fn, params


def _multihead_fixture(seed: int) -> tuple[Callable[[], Tensor], dict[str, Tensor]]:
    preset = resolve_preset("cifar-mini")
    spec = preset.make_spec(
        PresetOptions(num_classes=4, input_shape=preset.default_input_shape, seed=seed)
    )
    model = build(spec)
    rng = np.random.default_rng(seed)
    images = Tensor(rng.standard_normal((2, *preset.default_input_shape)))
    labels = np.array([0, 2])
    pairs = build_pair_set(model.head_ids, Strategy.BI_DIRECTIONAL)
    weights = LossWeights()

    def loss_fn() -> Tensor:
        logits = model.forward_all(images, Mode.TRAIN)
        return total_loss(labels, logits, weights, pairs, model.head_ids)[0]

    return loss_fn, dict(model.named_parameters())


def _stop_gradient_fixture(
    rng: np.random.Generator,
) -> tuple[Callable[[], Tensor], dict[str, Tensor]]:
    inputs = Tensor(rng.standard_normal((2, 4)))
    params = {
        "teacher.weight": Tensor(rng.standard_normal((3, 4)), requires_grad=True),
        "student.weight": Tensor(rng.standard_normal((3, 4)), requires_grad=True),
    }

    def loss_fn() -> Tensor:
        teacher = ops.linear(inputs, params["teacher.weight"])
        student = ops.linear(inputs, params["student.weight"])
        return knowledge_match(teacher, student)

    return loss_fn, params


def _grad_rows(report: GradCheckReport) -> list[dict[str, Any]]:
    return [
        {
            "fixture": report.fixture,
            "group": group.name,
            "checked": group.checked,
            "skipped": group.skipped,
            "max_rel_error": repr(group.max_rel_error),
            "analytic_norm": repr(group.analytic_norm),
            "numeric_norm": repr(group.numeric_norm),
            "status": group.status,
        }
        for group in report.groups
    ]


def _record_audit(result: SuiteResult, report: GradCheckReport) -> None:
    failures = report.failures()
    detail = f"max relative error {report.max_rel_error:.3g} (tolerance {report.tolerance:g})"
    if failures:
        detail += f"; failing groups: {', '.join(failures)}"
    result.record(report.fixture, ok=report.passed, detail=detail)


def run_grads_suite(
    out_dir: Path | None = None, *, seed: int = 0, max_coords: int = 6
) -> SuiteResult:
    """Finite-difference audits in 64-bit precision.

    Args:
        out_dir: Where ``grads.csv`` is written; nothing is written when None.
        seed: Seed for fixture values and coordinate sampling.
        max_coords: Coordinates sampled per parameter of the multi-head model.
    """
    result = SuiteResult("grads")
    rows: list[dict[str, Any]] = []
    with precision(64):
        rng = np.random.default_rng(seed)
        for name, op, inputs in _primitive_cases(rng):
            report = check_primitive(
                f"primitive:{name}", op, inputs, seed=seed, tolerance=PRIMITIVE_TOLERANCE
            )
            rows.extend(_grad_rows(report))
            _record_audit(result, report)

        x = Tensor(np.array([2.0]), requires_grad=True)
        report = grad_check(
            lambda: ops.sum(ops.power(x, 3.0)), {"x": x}, fixture="cube", tolerance=CUBE_TOLERANCE
        )
        rows.extend(_grad_rows(report))
        _record_audit(result, report)

        loss_fn, params = _conv_fc_fixture(rng)
        report = grad_check(
            loss_fn, params, fixture="conv-fc", tolerance=PRIMITIVE_TOLERANCE, seed=seed
        )
        rows.extend(_grad_rows(report))
        _record_audit(result, report)

        loss_fn, params = _multihead_fixture(seed)
        report = grad_check(
            loss_fn,
            params,
            fixture="cifar-mini-dks",
            tolerance=DEFAULT_TOLERANCE,
            max_coords=max_coords,
            seed=seed,
        )
        rows.extend(_grad_rows(report))
        _record_audit(result, report)

        loss_fn, params = _stop_gradient_fixture(rng)
        true_derivative = grad_check(
            loss_fn,
            params,
            fixture="stop-gradient",
            stop_gradient={"teacher.weight"},
            freeze_targets=False,
        )
        rows.extend(_grad_rows(true_derivative))
        statuses = {group.name: group.status for group in true_derivative.groups}
        flagged = statuses == {
            "teacher.weight": GroupStatus.STOP_GRADIENT,
            "student.weight": GroupStatus.PASS,
        }
        result.record(
            "stop-gradient",
            ok=flagged,
            detail="teacher-only parameters: zero analytic gradient, non-zero true derivative"
            if flagged
            else f"unexpected group statuses {statuses}",
        )

        frozen = grad_check(loss_fn, params, fixture="stop-gradient-frozen")
        rows.extend(_grad_rows(frozen))
        _record_audit(result, frozen)

    if out_dir is not None:
        result.files.append(_write_csv(out_dir / "grads.csv", GRADS_HEADER, rows))
    return result


# Branch-agreement decomposition


def _synergy_row(report: DecompositionReport) -> dict[str, Any]:
    return {
        "fixture": report.fixture,
        "sigma": report.sigma,
        "lhs": repr(report.lhs),
        "ci": repr(report.ci),
        "consistency_term": repr(report.consistency_term),
        "mismatch_term": repr(report.mismatch_term),
        "residual": repr(report.residual),
        "bound": repr(report.bound),
        "raw_lhs": repr(report.raw_lhs),
        "raw_se": repr(report.raw_se),
        "passed": report.passed,
    }


def _split_row(report: LossSplitReport) -> dict[str, Any]:
    return {
        "fixture": report.fixture,
        "sigma": report.sigma,
        "l_ds": repr(report.l_ds),
        "synergy": repr(report.synergy),
        "l_dks": repr(report.l_dks),
        "gap": repr(report.gap),
        "passed": report.passed,
    }


def run_synergy_suite(
    out_dir: Path | None = None,
    *,
    seed: int = 0,
    n_samples: int = DEFAULT_SYNERGY_SAMPLES,
    sigmas: Sequence[float] = DEFAULT_SIGMAS,
) -> SuiteResult:
    """Decomposition, loss-split and residual-slope checks in 64-bit precision.

    Writes ``synergy.csv``, ``loss_split.csv`` and ``slope.csv`` under ``out_dir``.
    """
    result = SuiteResult("synergy")
    synergy_rows: list[dict[str, Any]] = []
    split_rows: list[dict[str, Any]] = []
    slope_rows: list[dict[str, Any]] = []
    with precision(64):
        spec = PerturbationSpec(sigma=LINEAR_SIGMA, n_samples=n_samples, seed=seed)

        linear = verify_synergy_decomposition(linear_fixture(), [LINEAR_Z0], spec)
        synergy_rows.append(_synergy_row(linear))
        result.record(
            "linear",
            ok=linear.passed
            and abs(linear.lhs - LINEAR_LHS) <= linear.ci + 1e-9
            and abs(linear.raw_lhs - LINEAR_LHS) <= RAW_SE_MULTIPLE * linear.raw_se,
            detail=f"lhs {linear.lhs:.6f} = {linear.consistency_term:.6f} + "
            f"{linear.mismatch_term:.6f} + {linear.residual:.2e}, "
            f"raw {linear.raw_lhs:.6f} +- {linear.raw_se:.1e}",
        )

        identical = linear_fixture(1.0, 1.0, name="identical")
        same = verify_synergy_decomposition(identical, [LINEAR_Z0], spec)
        synergy_rows.append(_synergy_row(same))
        zero = max(abs(same.lhs), abs(same.consistency_term), abs(same.mismatch_term))
        result.record("identical", ok=zero == 0.0, detail=f"largest term {zero:g}")

        for fixture, z0, expected, minimum in (
            (agreeing_cubic_fixture(), [1.0], "sigma^4", MIN_RESIDUAL_SLOPE),
            (cubic_vs_zero_fixture(), [1.0], "sigma^2", None),
        ):
            sweep = residual_slope(fixture, z0, sigmas, n_samples=n_samples, seed=seed)
            synergy_rows.extend(_synergy_row(report) for report in sweep.reports)
            slope_rows.extend(
                {
                    "fixture": sweep.fixture,
                    "sigma": report.sigma,
                    "residual": repr(report.residual),
                    "slope": repr(sweep.slope),
                    "expected": expected,
                }
                for report in sweep.reports
            )
            detail = f"log-log residual slope {sweep.slope:.3f}"
            if minimum is None:
                result.outcomes.append(
                    FixtureOutcome(
                        sweep.fixture,
                        Outcome.DOCUMENTED,
                        f"{detail}; heads disagree at z0 so the residual scales as {expected}",
                    )
                )
                continue
            ok = sweep.slope >= minimum and all(report.passed for report in sweep.reports)
            result.record(sweep.fixture, ok=ok, detail=detail)

        split = ds_vs_dks_loss_split(linear_fixture(), [LINEAR_Z0], [0.0], spec)
        split_rows.append(_split_row(split))
        expected_ds = 2.5 * (LINEAR_Z0**2 + LINEAR_SIGMA**2)
        expected_synergy = 0.5 * (LINEAR_Z0**2 + LINEAR_SIGMA**2)
        ok = (
            split.passed
            and abs(split.l_ds - expected_ds) <= 2 * split.ci["l_ds"] + 1e-12
            and abs(split.synergy - expected_synergy) <= 2 * split.ci["synergy"] + 1e-12
        )
        result.record(
            "loss-split-linear",
            ok=ok,
            detail=f"L_DS {split.l_ds:.6f} (closed form {expected_ds:.6f}), "
            f"synergy {split.synergy:.6f}, gap {split.gap:.1e}",
        )

        smooth = tanh_fixture(seed=seed)
        x0 = np.random.default_rng(seed).standard_normal((1, 3))
        split = ds_vs_dks_loss_split(smooth, x0, np.zeros(2), spec)
        split_rows.append(_split_row(split))
        result.record("loss-split-tanh", ok=split.passed, detail=f"gap {split.gap:.1e}")

        with_features = smooth.outputs(Tensor(x0))[0].data
        worst = jacobian_agreement(smooth, with_features)
        result.record(
            "jacobian-tanh",
            ok=worst <= JACOBIAN_TOLERANCE,
            detail=f"reverse-mode vs finite-difference relative gap {worst:.2e}",
        )

    if out_dir is not None:
        result.files.append(_write_csv(out_dir / "synergy.csv", SYNERGY_HEADER, synergy_rows))
        result.files.append(_write_csv(out_dir / "loss_split.csv", SPLIT_HEADER, split_rows))
        result.files.append(_write_csv(out_dir / "slope.csv", SLOPE_HEADER, slope_rows))
    return result


SUITES: dict[str, Callable[..., SuiteResult]] = {
    "grads": run_grads_suite,
    "synergy": run_synergy_suite,
}


def run_suites(name: str, out_dir: Path | None = None, **options: Any) -> list[SuiteResult]:
    """Run ``name`` (a suite or ``all``) and return one result per suite.

    Options not accepted by a suite are ignored for it.

    Raises:
        ConfigurationException: For an unknown suite name.
    """
    if name == "all":
        selected = list(SUITES)
    elif name in SUITES:
        selected = [name]
    else:
        msg = f"unknown verification suite {name!r}"
        raise ConfigurationException(msg, hint=f"Choose one of: {', '.join([*SUITES, 'all'])}")

    accepted = {
        "grads": {"seed", "max_coords"},
        "synergy": {"seed", "n_samples", "sigmas"},
    }
    results: list[SuiteResult] = []
    for suite in selected:
        kwargs = {key: value for key, value in options.items() if key in accepted[suite]}
        logger.info("Running verification suite %s", suite)
        results.append(SUITES[suite](out_dir, **kwargs))
    return results
