"""The three-term training objective.

``total = L_c + L_a + L_s``:

* ``L_c`` is the cross-entropy of the final classifier ``C1``;
* ``L_a`` is the alpha-weighted cross-entropy of every auxiliary head;
* ``L_s`` sums beta-weighted knowledge matching terms over a pair set, where pair
  ``(m, n)`` uses head m's detached softmax as the soft target for head n.

Every term is a batch mean; weights multiply after the reduction.
"""

from __future__ import annotations

from collections.abc import Iterator, Mapping, Sequence
from dataclasses import dataclass, field
from enum import StrEnum
from itertools import combinations, permutations

import numpy as np

from dks_lab.core import ops
from dks_lab.core.tensor import Array, Tensor, detach
from dks_lab.exceptions import ConfigurationException, DataException

PROBABILITY_FLOOR = 1e-12

Pair = tuple[str, str]


class Strategy(StrEnum):
    """Rule generating the knowledge matching pairs."""

    TOP_DOWN = "top-down"
    BOTTOM_UP = "bottom-up"
    BI_DIRECTIONAL = "bi-directional"
    CUSTOM = "custom"


def pair_key(pair: Pair) -> str:
    """Render ``(m, n)`` as ``"m->n"``, the key used in configs and reports."""
    return f"{pair[0]}->{pair[1]}"


@dataclass(frozen=True)
class PairSet:
    """Ordered knowledge matching pairs ``(teacher, student)``.

    Raises:
        ConfigurationException: On a self pair or a duplicate pair.
    """

    pairs: tuple[Pair, ...]
    strategy: Strategy

    def __post_init__(self) -> None:
        for m, n in self.pairs:
            if m == n:
                msg = f"knowledge matching pair ({m}, {n}) matches a head with itself"
                raise ConfigurationException(msg)
        if len(set(self.pairs)) != len(self.pairs):
            msg = f"duplicate knowledge matching pairs in {list(self.pairs)}"
            raise ConfigurationException(msg)

    def __len__(self) -> int:
        return len(self.pairs)

    def __iter__(self) -> Iterator[Pair]:
        return iter(self.pairs)

    @classmethod
    def empty(cls) -> PairSet:
        """The pair set of the baseline and deeply supervised schemes."""
        return cls(pairs=(), strategy=Strategy.CUSTOM)

    @classmethod
    def custom(cls, pairs: Sequence[Pair]) -> PairSet:
        """A user-listed pair set."""
        return cls(pairs=tuple((m, n) for m, n in pairs), strategy=Strategy.CUSTOM)


def build_pair_set(head_ids: Sequence[str], strategy: Strategy | str) -> PairSet:
    """Generate the pair set for ``strategy``.

    Args:
        head_ids: Heads ordered by attachment depth, deepest (``C1``) first.
        strategy: ``top-down`` pairs every deeper head with every shallower one,
            ``bottom-up`` the reverse, ``bi-directional`` both.

    Raises:
        ConfigurationException: For ``custom``, which has no generated pairs.
    """
    strategy = Strategy(strategy)
    top_down = list(combinations(head_ids, 2))
    if strategy == Strategy.TOP_DOWN:
        pairs = top_down
    elif strategy == Strategy.BOTTOM_UP:
        pairs = [(n, m) for m, n in top_down]
    elif strategy == Strategy.BI_DIRECTIONAL:
        pairs = list(permutations(head_ids, 2))
    else:
        msg = "the custom strategy takes an explicit pairs list"
        raise ConfigurationException(msg)
    return PairSet(pairs=tuple(pairs), strategy=strategy)


@dataclass(frozen=True)
class LossWeights:
    """Per-head ``alpha`` and per-pair ``beta``; missing entries default to 1."""

    alpha: Mapping[str, float] = field(default_factory=dict)
    beta: Mapping[Pair, float] = field(default_factory=dict)
    default_alpha: float = 1.0
    default_beta: float = 1.0

    def __post_init__(self) -> None:
        values = [*self.alpha.values(), *self.beta.values(), self.default_alpha, self.default_beta]
        if not all(np.isfinite(v) and v >= 0.0 for v in values):
            msg = f"loss weights must be finite and non-negative, got {values}"
            raise ConfigurationException(msg)

    def alpha_for(self, head_id: str) -> float:
        """Weight of auxiliary head ``head_id``."""
        return self.alpha.get(head_id, self.default_alpha)

    def beta_for(self, pair: Pair) -> float:
        """Weight of matching pair ``pair``."""
        return self.beta.get(pair, self.default_beta)

    @classmethod
    def from_config(
        cls, alpha: float | Mapping[str, float], beta: float | Mapping[str, float]
    ) -> LossWeights:
        """Build weights from config values (scalars, or maps keyed by ``"Cm->Cn"``)."""
        parsed: dict[Pair, float] = {}
        if isinstance(beta, Mapping):
            for key, value in beta.items():
                teacher, sep, student = key.partition("->")
                if not sep or not teacher or not student:
                    msg = f"beta key '{key}' is not of the form 'Cm->Cn'"
                    raise ConfigurationException(msg)
                parsed[(teacher, student)] = float(value)
        return cls(
            alpha=dict(alpha) if isinstance(alpha, Mapping) else {},
            beta=parsed,
            default_alpha=1.0 if isinstance(alpha, Mapping) else float(alpha),
            default_beta=1.0 if isinstance(beta, Mapping) else float(beta),
        )


@dataclass
class LossReport:
    """Itemized objective values for one batch."""

    l_c: float
    l_a: float
    l_s: float
    total: float
    per_head: dict[str, float] = field(default_factory=dict)
    per_pair: dict[str, float] = field(default_factory=dict)


def default_head_ids(count: int) -> list[str]:
    """``["C1", "C2", ...]`` for ``count`` heads."""
    return [f"C{i + 1}" for i in range(count)]


def cross_entropy_hard(labels: Array, logits: Tensor) -> Tensor:
    """Batch mean of ``-log softmax(logits)[label]``.

    Raises:
        ConfigurationException: If ``logits`` is not ``N x K`` with K >= 2 or the
            label count differs from N.
        DataException: If a label is outside ``[0, K)``; names the first bad sample.
    """
    labels = np.asarray(labels)
    if logits.ndim != 2 or logits.shape[1] < 2 or logits.shape[0] != labels.shape[0]:
        msg = f"cross_entropy_hard: {labels.shape[0]} labels do not fit logits {logits.shape}"
        raise ConfigurationException(msg)
    num_classes = logits.shape[1]
    bad = np.flatnonzero((labels < 0) | (labels >= num_classes))
    if bad.size:
        index = int(bad[0])
        msg = f"label {int(labels[index])} of sample {index} is outside [0, {num_classes})"
        raise DataException(msg)
    log_probs = ops.log(ops.softmax(logits), floor=PROBABILITY_FLOOR)
    picked = ops.sum(ops.mul(log_probs, ops.one_hot(labels, num_classes)), axis=1)
    return ops.scale(ops.mean(picked), -1.0)


def knowledge_match(teacher_logits: Tensor, student_logits: Tensor, beta: float = 1.0) -> Tensor:
    """``beta`` times the batch-mean cross-entropy from teacher to student.

    The teacher distribution is detached, so no gradient reaches the teacher head.
    """
    if teacher_logits.shape != student_logits.shape:
        msg = (
            f"knowledge_match: teacher {teacher_logits.shape} and student "
            f"{student_logits.shape} logits differ in shape"
        )
        raise ConfigurationException(msg)
    target = detach(ops.softmax(teacher_logits))
    log_probs = ops.log(ops.softmax(student_logits), floor=PROBABILITY_FLOOR)
    per_sample = ops.sum(ops.mul(target, log_probs), axis=1)
    return ops.scale(ops.mean(per_sample), -beta)


def total_loss(
    labels: Array,
    head_logits: Sequence[Tensor],
    weights: LossWeights,
    pairs: PairSet,
    head_ids: Sequence[str] | None = None,
    *,
    rescale_pairs: bool = False,
) -> tuple[Tensor, LossReport]:
    """Compose ``L_c + L_a + L_s`` for one batch.

    Args:
        labels: Integer class labels.
        head_logits: Logits per head, ``C1`` first.
        weights: alpha and beta weights.
        pairs: Knowledge matching pairs referencing ids in ``head_ids``.
        head_ids: Ids of ``head_logits``; defaults to ``C1, C2, ...``.
        rescale_pairs: Divide ``L_s`` by the number of pairs.

    Returns:
        The differentiable total and its itemized report. With no auxiliary heads
        and no pairs the total is exactly the ``C1`` cross-entropy tensor.

    Raises:
        ConfigurationException: If ``head_logits`` is empty or a pair names an
            unknown head.
    """
    if not head_logits:
        msg = "total_loss needs at least the final classifier's logits"
        raise ConfigurationException(msg)
    ids = list(head_ids) if head_ids is not None else default_head_ids(len(head_logits))
    if len(ids) != len(head_logits):
        msg = f"{len(ids)} head ids given for {len(head_logits)} logit tensors"
        raise ConfigurationException(msg)
    by_id = dict(zip(ids, head_logits, strict=True))
    for m, n in pairs:
        for head_id in (m, n):
            if head_id not in by_id:
                msg = f"pair {pair_key((m, n))} references unknown head {head_id}"
                raise ConfigurationException(msg, hint=f"Known heads: {', '.join(ids)}")

    per_head: dict[str, float] = {}
    per_pair: dict[str, float] = {}

    l_c = cross_entropy_hard(labels, head_logits[0])
    per_head[ids[0]] = l_c.item()
    total = l_c

    l_a_value = 0.0
    for head_id, logits in zip(ids[1:], head_logits[1:], strict=True):
        ce = cross_entropy_hard(labels, logits)
        per_head[head_id] = ce.item()
        alpha = weights.alpha_for(head_id)
        l_a_value += alpha * ce.item()
        total = ops.add(total, ops.scale(ce, alpha))

    l_s_value = 0.0
    pair_scale = 1.0 / len(pairs) if rescale_pairs and len(pairs) else 1.0
    for pair in pairs:
        term = knowledge_match(by_id[pair[0]], by_id[pair[1]], weights.beta_for(pair) * pair_scale)
        per_pair[pair_key(pair)] = term.item()
        l_s_value += term.item()
        total = ops.add(total, term)

    report = LossReport(
        l_c=per_head[ids[0]],
        l_a=l_a_value,
        l_s=l_s_value,
        total=total.item(),
        per_head=per_head,
        per_pair=per_pair,
    )
    return total, report
