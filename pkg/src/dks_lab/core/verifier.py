"""Numerical verification harness.

Two families of checks live here:

* :func:`grad_check` compares analytic gradients from :func:`~dks_lab.core.tensor.backward`
  with central finite differences, one parameter group at a time.
* :func:`verify_synergy_decomposition` and :func:`ds_vs_dks_loss_split` estimate,
  on a :class:`TwoHeadRegression`, how the branch-agreement term splits into the
  disagreement at the unperturbed feature plus a Jacobian-mismatch penalty when the
  shared feature is perturbed by isotropic Gaussian noise.

Everything here expects 64-bit precision.
"""

from __future__ import annotations

import contextlib
import logging
import math
from collections.abc import Callable, Collection, Iterator, Mapping, Sequence
from dataclasses import dataclass, field
from enum import StrEnum
from functools import partial

import numpy as np
from numpy.typing import ArrayLike

from dks_lab.core import ops
from dks_lab.core.tensor import (
    Array,
    Tensor,
    backward,
    freeze_detached,
    get_precision,
    no_grad,
)
from dks_lab.exceptions import ConfigurationException, UsageException, VerificationException

logger = logging.getLogger(__name__)

DEFAULT_FD_STEP = 1e-5
DEFAULT_TOLERANCE = 1e-5
NORM_FLOOR = 1e-12
STOP_GRADIENT_FLOOR = 1e-9
DEFAULT_RESIDUAL_CONSTANT = 10.0
Z_95 = 1.96
RAW_SE_MULTIPLE = 4.0
LOSS_SPLIT_RTOL = 1e-12

LossFn = Callable[[], Tensor]
HeadFn = Callable[[Tensor], Tensor]


class GroupStatus(StrEnum):
    """Outcome of one parameter group in a gradient audit."""

    PASS = "pass"
    FAIL = "fail"
    STOP_GRADIENT = "stop-gradient"


@dataclass
class GroupResult:
    """Finite-difference comparison for one parameter group.

    Attributes:
        name: Parameter name.
        checked: Coordinates compared.
        skipped: Coordinates whose stencil flipped a ReLU and were left out.
        max_rel_error: ``||analytic - numeric|| / max(||analytic||, ||numeric||)``
            over the checked coordinates.
        analytic_norm: Norm of the analytic gradient on the checked coordinates.
        numeric_norm: Norm of the finite-difference gradient on the same coordinates.
        status: Pass, fail, or an expected stop-gradient divergence.
    """

    name: str
    checked: int
    skipped: int
    max_rel_error: float
    analytic_norm: float
    numeric_norm: float
    status: GroupStatus


@dataclass
class GradCheckReport:
    """Result of :func:`grad_check`."""

    fixture: str
    tolerance: float
    groups: list[GroupResult] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        """Whether no group failed; stop-gradient divergences are not failures."""
        return all(group.status != GroupStatus.FAIL for group in self.groups)

    @property
    def max_rel_error(self) -> float:
        """Largest relative error over groups compared against the true derivative."""
        errors = [g.max_rel_error for g in self.groups if g.status != GroupStatus.STOP_GRADIENT]
        return max(errors, default=0.0)

    def failures(self) -> list[str]:
        """Names of failed groups."""
        return [group.name for group in self.groups if group.status == GroupStatus.FAIL]


def _require_float64(label: str, tensors: Sequence[Tensor] = ()) -> None:
    if get_precision() != 64:  # noqa: PLR2004
        msg = f"{label} needs 64-bit precision"
        hint = "Wrap the call in tensor.precision(64) or pass --precision 64."
        raise UsageException(msg, hint=hint)
    for tensor in tensors:
        if tensor.dtype != np.float64:
            msg = f"{label}: tensor {tensor.name or tensor.shape} is {tensor.dtype}, not float64"
            raise UsageException(msg)


def _same_patterns(a: list[Array], b: list[Array]) -> bool:
    return len(a) == len(b) and all(np.array_equal(x, y) for x, y in zip(a, b, strict=True))


def grad_check(  # noqa: PLR0913
    loss_fn: LossFn,
    params: Mapping[str, Tensor],
    *,
    fixture: str = "grad-check",
    fd_step: float = DEFAULT_FD_STEP,
    tolerance: float = DEFAULT_TOLERANCE,
    max_coords: int | None = None,
    seed: int = 0,
    stop_gradient: Collection[str] = (),
    freeze_targets: bool = True,
) -> GradCheckReport:
    """Audit analytic gradients of ``loss_fn`` against central finite differences.

    Args:
        loss_fn: Rebuilds the scalar loss from the current parameter values.
        params: Parameter groups to audit, by name.
        fixture: Label carried into the report and errors.
        fd_step: Central-difference step.
        tolerance: Largest accepted relative error per group.
        max_coords: Coordinates sampled per group; all when None.
        seed: Seed for coordinate sampling.
        stop_gradient: Groups reachable only through detached values. A zero
            analytic gradient with a non-zero finite difference is reported as an
            expected divergence instead of a failure.
        freeze_targets: Replay the values :func:`~dks_lab.core.tensor.detach`
            returned in the analytic pass during every perturbed evaluation, so the
            finite differences see detached targets as constants.

    Returns:
        Per-group comparison results.

    Raises:
        UsageException: Outside 64-bit mode.
        VerificationException: If an analytic gradient is not finite.
    """
    tensors = list(params.values())
    _require_float64("grad_check", tensors)
    for tensor in tensors:
        tensor.grad = None

    with freeze_detached() as tape, ops.record_activation_patterns() as base_patterns:
        loss = loss_fn()
        backward(loss)

    def evaluate() -> tuple[float, list[Array]]:
        frozen = freeze_detached(tape) if freeze_targets else contextlib.nullcontext()
        with no_grad(), frozen, ops.record_activation_patterns() as patterns:
            value = loss_fn().item()
        return value, patterns

    rng = np.random.default_rng(seed)
    report = GradCheckReport(fixture=fixture, tolerance=tolerance)
    for name, tensor in params.items():
        analytic_full = tensor.grad if tensor.grad is not None else np.zeros_like(tensor.data)
        if not np.all(np.isfinite(analytic_full)):
            raise VerificationException(fixture, f"non-finite analytic gradient for {name}")
        flat = tensor.data.reshape(-1)
        coords = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            coords = np.sort(rng.choice(flat.size, size=max_coords, replace=False))

        analytic: list[float] = []
        numeric: list[float] = []
        skipped = 0
        for index in coords:
            original = float(flat[index])
            flat[index] = original + fd_step
            plus, plus_patterns = evaluate()
            flat[index] = original - fd_step
            minus, minus_patterns = evaluate()
            flat[index] = original
            if not (
                _same_patterns(plus_patterns, base_patterns)
                and _same_patterns(minus_patterns, base_patterns)
            ):
                skipped += 1
                continue
            analytic.append(float(analytic_full.reshape(-1)[index]))
            numeric.append((plus - minus) / (2.0 * fd_step))

        report.groups.append(
            _compare_group(
                name,
                np.array(analytic),
                np.array(numeric),
                skipped,
                tolerance,
                expect_stop=name in stop_gradient,
            )
        )
    logger.info(
        "grad_check %s: %d groups, max relative error %.3g",
        fixture,
        len(report.groups),
        report.max_rel_error,
    )
    return report


def _compare_group(  # noqa: PLR0913
    name: str,
    analytic: Array,
    numeric: Array,
    skipped: int,
    tolerance: float,
    *,
    expect_stop: bool,
) -> GroupResult:
    a_norm = float(np.linalg.norm(analytic))
    n_norm = float(np.linalg.norm(numeric))
    denominator = max(a_norm, n_norm)
    error = float(np.linalg.norm(analytic - numeric))
    rel = error / denominator if denominator > NORM_FLOOR else 0.0
    if expect_stop and a_norm == 0.0 and n_norm > STOP_GRADIENT_FLOOR:
        status = GroupStatus.STOP_GRADIENT
    else:
        status = GroupStatus.PASS if rel < tolerance else GroupStatus.FAIL
    return GroupResult(
        name=name,
        checked=len(analytic),
        skipped=skipped,
        max_rel_error=rel,
        analytic_norm=a_norm,
        numeric_norm=n_norm,
        status=status,
    )


def check_primitive(
    name: str,
    op: Callable[..., Tensor],
    inputs: Sequence[ArrayLike],
    *,
    seed: int = 0,
    tolerance: float = DEFAULT_TOLERANCE,
) -> GradCheckReport:
    """Grad-check ``op`` through a fixed random projection of its output."""
    _require_float64(f"check_primitive({name})")
    leaves = {
        f"{name}.input{i}": Tensor(np.array(value, dtype=np.float64), requires_grad=True)
        for i, value in enumerate(inputs)
    }
    with no_grad():
        shape = op(*leaves.values()).shape
    projection = Tensor(np.random.default_rng(seed).standard_normal(shape))
    return grad_check(
        lambda: ops.sum(ops.mul(op(*leaves.values()), projection)),
        leaves,
        fixture=name,
        tolerance=tolerance,
        seed=seed,
    )


# Two-head regression fixtures


@dataclass(frozen=True)
class TwoHeadRegression:
    """A shared map ``z = f(x)`` feeding two regression heads.

    Heads take an ``S x d`` batch of features and return ``S x m`` outputs, so a
    whole Monte-Carlo chunk is evaluated in one call.

    Attributes:
        name: Fixture label.
        shared: The map ``f``.
        head1: The top-most head ``g1``.
        head2: The auxiliary head ``g2``.
        smooth: Whether both heads are twice differentiable everywhere.
    """

    name: str
    shared: HeadFn
    head1: HeadFn
    head2: HeadFn
    smooth: bool = True

    def outputs(self, x: Tensor) -> tuple[Tensor, Tensor, Tensor]:
        """Return ``z`` and both head outputs; the heads consume the same ``z``."""
        z = self.shared(x)
        return z, self.head1(z), self.head2(z)

    def heads_at(self, z: Array) -> tuple[Array, Array]:
        """Evaluate both heads on a feature batch without recording a graph."""
        with no_grad():
            features = Tensor(z, dtype=np.float64)
            return self.head1(features).data, self.head2(features).data


def _identity(x: Tensor) -> Tensor:
    return x


def _cube(z: Tensor, factor: float = 1.0) -> Tensor:
    return ops.scale(ops.power(z, 3.0), factor)


def _tanh_layer(z: Tensor, weight: Tensor) -> Tensor:
    return ops.tanh(ops.matmul(z, weight))


def linear_fixture(a: float = 2.0, b: float = 1.0, name: str = "linear") -> TwoHeadRegression:
    """``g1(z) = a z`` and ``g2(z) = b z`` on an identity feature map."""
    return TwoHeadRegression(
        name=name,
        shared=_identity,
        head1=partial(ops.scale, factor=a),
        head2=partial(ops.scale, factor=b),
    )


def agreeing_cubic_fixture() -> TwoHeadRegression:
    """``g1(z) = z^3 / 2`` and ``g2(z) = z / 2``; the heads agree at ``z = 1``."""
    return TwoHeadRegression(
        name="agreeing-cubic",
        shared=_identity,
        head1=partial(_cube, factor=0.5),
        head2=partial(ops.scale, factor=0.5),
    )


def cubic_vs_zero_fixture() -> TwoHeadRegression:
    """``g1(z) = z^3`` against ``g2(z) = 0``.

    The heads disagree at every ``z != 0``; the residual then carries an
    ``O(sigma^2)`` cross term.
    """
    return TwoHeadRegression(
        name="cubic-vs-zero",
        shared=_identity,
        head1=_cube,
        head2=partial(ops.scale, factor=0.0),
    )


def tanh_fixture(dim: int = 3, outputs: int = 2, seed: int = 0) -> TwoHeadRegression:
    """A random tanh network: ``z = tanh(x W0)``, ``g1 = tanh(z W1)``, ``g2 = z W2``."""
    rng = np.random.default_rng(seed)
    w0, w1, w2 = (
        Tensor(0.5 * rng.standard_normal(shape), dtype=np.float64)
        for shape in ((dim, dim), (dim, outputs), (dim, outputs))
    )
    return TwoHeadRegression(
        name="tanh",
        shared=partial(_tanh_layer, weight=w0),
        head1=partial(_tanh_layer, weight=w1),
        head2=partial(ops.matmul, b=w2),
    )


def relu_fixture() -> TwoHeadRegression:
    """``g1 = relu(z)``, ``g2 = z / 2``; not smooth, rejected by the decomposition."""
    return TwoHeadRegression(
        name="relu",
        shared=_identity,
        head1=ops.relu,
        head2=partial(ops.scale, factor=0.5),
        smooth=False,
    )


@dataclass(frozen=True)
class PerturbationSpec:
    """Isotropic zero-mean Gaussian noise on the shared feature.

    Attributes:
        sigma: Per-coordinate standard deviation.
        n_samples: Monte-Carlo draws; sampled as ``n_samples // 2`` antithetic pairs.
        seed: Root seed; chunk streams are spawned from it.
        chunk_size: Antithetic pairs evaluated per head call.
    """

    sigma: float
    n_samples: int = 200_000
    seed: int = 0
    chunk_size: int = 50_000

    def __post_init__(self) -> None:
        if not math.isfinite(self.sigma) or self.sigma < 0:
            msg = f"sigma must be a finite non-negative number, got {self.sigma}"
            raise ConfigurationException(msg)
        if self.n_samples < 4:  # noqa: PLR2004
            msg = f"n_samples must be at least 4, got {self.n_samples}"
            raise ConfigurationException(msg)
        if self.chunk_size < 1:
            msg = f"chunk_size must be positive, got {self.chunk_size}"
            raise ConfigurationException(msg)

    @property
    def pairs(self) -> int:
        """Number of antithetic pairs."""
        return self.n_samples // 2


def antithetic_noise(spec: PerturbationSpec, dim: int) -> Iterator[Array]:
    """Yield ``(pairs, dim)`` chunks of ``sigma``-scaled standard normal draws.

    Each chunk uses its own stream spawned from ``spec.seed``; chunks are yielded in
    spawn order, so reductions over them have a fixed summation order.
    """
    counts = [spec.chunk_size] * (spec.pairs // spec.chunk_size)
    if spec.pairs % spec.chunk_size:
        counts.append(spec.pairs % spec.chunk_size)
    streams = np.random.SeedSequence(spec.seed).spawn(len(counts))
    for count, stream in zip(counts, streams, strict=True):
        yield spec.sigma * np.random.default_rng(stream).standard_normal((count, dim))


def _as_feature(z0: Tensor | ArrayLike) -> Array:
    values = z0.data if isinstance(z0, Tensor) else np.asarray(z0)
    return np.asarray(values, dtype=np.float64).reshape(-1)


def head_jacobian(head: HeadFn, z0: Tensor | ArrayLike) -> Array:
    """``m x d`` Jacobian of ``head`` at ``z0``, one reverse pass per output coordinate."""
    _require_float64("head_jacobian")
    point = _as_feature(z0)
    with no_grad():
        outputs = head(Tensor(point[None, :])).shape[1]
    rows: list[Array] = []
    for k in range(outputs):
        z = Tensor(point[None, :].copy(), requires_grad=True)
        selector = np.zeros((1, outputs))
        selector[0, k] = 1.0
        backward(ops.sum(ops.mul(head(z), Tensor(selector))))
        rows.append(z.grad.reshape(-1) if z.grad is not None else np.zeros_like(point))
    return np.stack(rows)


def finite_difference_jacobian(
    head: HeadFn, z0: Tensor | ArrayLike, step: float = 1e-6
) -> Array:
    """``m x d`` Jacobian of ``head`` at ``z0`` by central differences."""
    point = _as_feature(z0)
    columns: list[Array] = []
    with no_grad():
        for j in range(point.size):
            offset = np.zeros_like(point)
            offset[j] = step
            plus = head(Tensor((point + offset)[None, :]))
            minus = head(Tensor((point - offset)[None, :]))
            columns.append((plus.data[0] - minus.data[0]) / (2.0 * step))
    return np.stack(columns, axis=1)


@dataclass
class DecompositionReport:
    """Monte-Carlo check of the branch-agreement decomposition.

    Attributes:
        fixture: Fixture label.
        sigma: Noise level.
        lhs: Estimate of ``E[0.5 ||g1(z0 + e) - g2(z0 + e)||^2]``.
        ci: Half-width of the 95% confidence interval of ``lhs`` and ``residual``.
        consistency_term: ``0.5 ||g1(z0) - g2(z0)||^2``.
        mismatch_term: ``0.5 sigma^2 ||J1(z0) - J2(z0)||_F^2``.
        residual: ``lhs - consistency_term - mismatch_term``.
        bound: ``c sigma^4 + ci``.
        raw_lhs: Plain antithetic mean of the true disagreement, without the
            control variate.
        raw_se: Standard error of ``raw_lhs``.
        raw_passed: Whether ``raw_lhs`` is within ``c sigma^4 + 4 raw_se`` of
            ``consistency_term + mismatch_term``.
        passed: Whether ``|residual| <= bound`` and ``raw_passed``.
    """

    fixture: str
    sigma: float
    lhs: float
    ci: float
    consistency_term: float
    mismatch_term: float
    residual: float
    bound: float
    raw_lhs: float
    raw_se: float
    raw_passed: bool
    passed: bool


def _half_sq_norm(values: Array) -> Array:
    return 0.5 * np.sum(values * values, axis=1)


def verify_synergy_decomposition(
    model: TwoHeadRegression,
    z0: Tensor | ArrayLike,
    spec: PerturbationSpec,
    *,
    c: float = DEFAULT_RESIDUAL_CONSTANT,
) -> DecompositionReport:
    """Estimate how the branch-agreement loss splits under feature noise.

    The expectation is estimated over antithetic pairs ``(e, -e)`` with the
    linearized disagreement ``0.5 ||delta + D e||^2`` as a control variate, where
    ``delta = g1(z0) - g2(z0)`` and ``D = J1 - J2``. Its expectation is exactly
    ``consistency_term + mismatch_term``, so the residual is the sample mean of the
    difference between the true and linearized values.

    The control variate makes the residual vanish identically on linear heads, so
    the plain antithetic mean of the true values is checked against the closed
    form as well, within its own standard error.

    Raises:
        ConfigurationException: If ``spec.sigma`` is not positive or the heads are
            not smooth.
        UsageException: Outside 64-bit mode.
    """
    _require_float64("verify_synergy_decomposition")
    if spec.sigma <= 0:
        msg = f"the decomposition needs sigma > 0, got {spec.sigma}"
        raise ConfigurationException(msg)
    if not model.smooth:
        msg = f"fixture {model.name!r} is not twice differentiable; the expansion does not apply"
        raise ConfigurationException(msg, hint="Use smooth activations such as tanh in both heads.")

    point = _as_feature(z0)
    g1, g2 = model.heads_at(point[None, :])
    delta = (g1 - g2)[0]
    mismatch = head_jacobian(model.head1, point) - head_jacobian(model.head2, point)
    consistency_term = float(0.5 * delta @ delta)
    mismatch_term = float(0.5 * spec.sigma**2 * np.sum(mismatch * mismatch))

    differences: list[Array] = []
    raw: list[Array] = []
    for noise in antithetic_noise(spec, point.size):
        halves: list[Array] = []
        actuals: list[Array] = []
        for signed in (noise, -noise):
            h1, h2 = model.heads_at(point + signed)
            actual = _half_sq_norm(h1 - h2)
            linearized = _half_sq_norm(delta + signed @ mismatch.T)
            actuals.append(actual)
            halves.append(actual - linearized)
        differences.append(0.5 * (halves[0] + halves[1]))
        raw.append(0.5 * (actuals[0] + actuals[1]))
    samples = np.concatenate(differences)
    raw_samples = np.concatenate(raw)

    residual = float(samples.mean())
    ci = Z_95 * float(samples.std(ddof=1)) / math.sqrt(samples.size)
    bound = c * spec.sigma**4 + ci
    raw_lhs = float(raw_samples.mean())
    raw_se = float(raw_samples.std(ddof=1)) / math.sqrt(raw_samples.size)
    closed_form = consistency_term + mismatch_term
    raw_passed = abs(raw_lhs - closed_form) <= c * spec.sigma**4 + RAW_SE_MULTIPLE * raw_se
    report = DecompositionReport(
        fixture=model.name,
        sigma=spec.sigma,
        lhs=closed_form + residual,
        ci=ci,
        consistency_term=consistency_term,
        mismatch_term=mismatch_term,
        residual=residual,
        bound=bound,
        raw_lhs=raw_lhs,
        raw_se=raw_se,
        raw_passed=raw_passed,
        passed=abs(residual) <= bound and raw_passed,
    )
    logger.info(
        "%s sigma=%g: lhs %.6g = %.6g + %.6g + residual %.3g (bound %.3g), raw %.6g +- %.2g",
        model.name,
        spec.sigma,
        report.lhs,
        consistency_term,
        mismatch_term,
        residual,
        bound,
        raw_lhs,
        raw_se,
    )
    return report


@dataclass
class SlopeReport:
    """Log-log fit of ``|residual|`` against ``sigma``."""

    fixture: str
    reports: list[DecompositionReport]
    slope: float

    @property
    def sigmas(self) -> list[float]:
        """Noise levels, in sweep order."""
        return [report.sigma for report in self.reports]

    @property
    def residuals(self) -> list[float]:
        """Residual per noise level."""
        return [report.residual for report in self.reports]


def residual_slope(
    model: TwoHeadRegression,
    z0: Tensor | ArrayLike,
    sigmas: Sequence[float],
    *,
    n_samples: int = 1_000_000,
    seed: int = 0,
    c: float = DEFAULT_RESIDUAL_CONSTANT,
) -> SlopeReport:
    """Run the decomposition at every ``sigma`` and fit ``log|residual|`` on ``log sigma``."""
    if len(sigmas) < 2:  # noqa: PLR2004
        msg = "a slope fit needs at least two sigma values"
        raise ConfigurationException(msg)
    reports = [
        verify_synergy_decomposition(
            model, z0, PerturbationSpec(sigma=sigma, n_samples=n_samples, seed=seed), c=c
        )
        for sigma in sigmas
    ]
    magnitudes = np.maximum(np.abs([r.residual for r in reports]), np.finfo(np.float64).tiny)
    log_sigmas = np.log(np.asarray(sigmas, dtype=np.float64))
    slope = float(np.polyfit(log_sigmas, np.log(magnitudes), 1)[0])
    logger.info("%s residual slope %.3f over sigma %s", model.name, slope, list(sigmas))
    return SlopeReport(fixture=model.name, reports=reports, slope=slope)


@dataclass
class LossSplitReport:
    """Regression losses of both training schemes on shared noise samples.

    Attributes:
        fixture: Fixture label.
        sigma: Noise level.
        l_ds: Mean of ``0.5 ||g1 - y||^2 + 0.5 ||g2 - y||^2``.
        synergy: Mean of ``0.5 ||g1 - g2||^2``.
        l_dks: Mean of the sum of all three terms, accumulated independently.
        gap: ``l_dks - l_ds - synergy``.
        ci: 95% half-widths by quantity name.
        passed: Whether ``|gap| <= 1e-12 * max(1, |l_dks|)``.
    """

    fixture: str
    sigma: float
    l_ds: float
    synergy: float
    l_dks: float
    gap: float
    ci: dict[str, float]
    passed: bool


def _mean_and_ci(samples: Array) -> tuple[float, float]:
    spread = float(samples.std(ddof=1)) if samples.size > 1 else 0.0
    return float(samples.mean()), Z_95 * spread / math.sqrt(samples.size)


def ds_vs_dks_loss_split(
    model: TwoHeadRegression,
    x: Tensor | ArrayLike,
    y: Tensor | ArrayLike,
    spec: PerturbationSpec,
) -> LossSplitReport:
    """Compare the deeply-supervised and synergy-augmented losses on shared samples.

    The feature ``z0 = f(x)`` is perturbed by antithetic Gaussian noise; both losses
    and the synergy term are averaged over the same draws. ``sigma = 0`` evaluates
    the noiseless losses.
    """
    _require_float64("ds_vs_dks_loss_split")
    inputs = x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64).reshape(1, -1))
    with no_grad():
        point = model.shared(inputs).data.reshape(-1)
    target = _as_feature(y)

    ds_parts: list[Array] = []
    syn_parts: list[Array] = []
    dks_parts: list[Array] = []
    for noise in antithetic_noise(spec, point.size):
        ds_halves: list[Array] = []
        syn_halves: list[Array] = []
        dks_halves: list[Array] = []
        for signed in (noise, -noise):
            g1, g2 = model.heads_at(point + signed)
            e1 = _half_sq_norm(g1 - target)
            e2 = _half_sq_norm(g2 - target)
            s = _half_sq_norm(g1 - g2)
            ds_halves.append(e1 + e2)
            syn_halves.append(s)
            dks_halves.append(e1 + e2 + s)
        ds_parts.append(0.5 * (ds_halves[0] + ds_halves[1]))
        syn_parts.append(0.5 * (syn_halves[0] + syn_halves[1]))
        dks_parts.append(0.5 * (dks_halves[0] + dks_halves[1]))

    l_ds, ci_ds = _mean_and_ci(np.concatenate(ds_parts))
    synergy, ci_syn = _mean_and_ci(np.concatenate(syn_parts))
    l_dks, ci_dks = _mean_and_ci(np.concatenate(dks_parts))
    gap = l_dks - l_ds - synergy
    return LossSplitReport(
        fixture=model.name,
        sigma=spec.sigma,
        l_ds=l_ds,
        synergy=synergy,
        l_dks=l_dks,
        gap=gap,
        ci={"l_ds": ci_ds, "synergy": ci_syn, "l_dks": ci_dks},
        passed=abs(gap) <= LOSS_SPLIT_RTOL * max(1.0, abs(l_dks)),
    )


def jacobian_agreement(model: TwoHeadRegression, z0: Tensor | ArrayLike) -> float:
    """Largest relative gap between reverse-mode and finite-difference head Jacobians."""
    worst = 0.0
    for head in (model.head1, model.head2):
        analytic = head_jacobian(head, z0)
        numeric = finite_difference_jacobian(head, z0)
        scale = max(float(np.abs(analytic).max()), float(np.abs(numeric).max()), NORM_FLOOR)
        worst = max(worst, float(np.abs(analytic - numeric).max()) / scale)
    return worst
