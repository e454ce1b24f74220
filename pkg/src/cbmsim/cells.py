"""Constructors for the cell library: KnockBack, the threshold detectors and
the majority pair."""

from __future__ import annotations

import math
from fractions import Fraction
from typing import Callable, Mapping

from .core import (
    BioelectricEvent,
    CellDefinition,
    CellDefinitionError,
    Condition,
    ExpressionRule,
    FiringFunction,
    MembraneFunction,
    MembraneRule,
    Step,
    check_cell,
    rational,
)

#: largest binding bound SmallThreshold may ask for
MAX_BINDING_BOUND = 64

LEADER = "leader"
THRESHOLD_EXCEEDED = "threshold-exceeded"


def knockback() -> CellDefinition:
    half = Fraction(1, 2)
    f = FiringFunction(0, (Step(half, half), Step(1, 1)))
    g = MembraneFunction(1, (MembraneRule((Condition("m"),), Fraction(-3, 2)),))
    return check_cell(CellDefinition(
        name="knockback", q0=0, sigma=2, lam=half, omega=-2,
        membrane=g, events=(BioelectricEvent(f, half, "m"),),
        expression=ExpressionRule(LEADER, 2, suppress_neighbors=True),
    ))


def small_threshold(k: int, max_binding_bound: int = MAX_BINDING_BOUND) -> CellDefinition:
    if not 1 <= k <= max_binding_bound:
        raise CellDefinitionError(
            f"SmallThreshold needs 1 <= k <= {max_binding_bound} (the binding bound), got {k}")
    g = MembraneFunction(k, (MembraneRule((Condition("m", count=k),), 2),))
    return check_cell(CellDefinition(
        name=f"small_threshold_{k}", q0=1, sigma=0, lam=1, omega=0,
        membrane=g, events=(BioelectricEvent(FiringFunction.step_at(1), 0, "m"),),
        expression=ExpressionRule(THRESHOLD_EXCEEDED, 2),
    ))


def general_threshold(k: int) -> CellDefinition:
    if k < 1:
        raise CellDefinitionError(f"GeneralThreshold needs k >= 1, got {k}")
    f = FiringFunction.step_at(1, high=Fraction(1, k))
    g = MembraneFunction(1, (MembraneRule((Condition("m"),), 2),))
    return check_cell(CellDefinition(
        name=f"general_threshold_{k}", q0=1, sigma=0, lam=1, omega=0,
        membrane=g, events=(BioelectricEvent(f, 2, "m"),),
        expression=ExpressionRule(THRESHOLD_EXCEEDED, 2),
    ))


def majority_alpha(epsilon) -> int:
    eps = float(epsilon)
    if not 0 < eps < 1:
        raise ValueError(f"epsilon must lie in (0, 1), got {epsilon}")
    return math.ceil(2 * math.log(2 / eps))


def _round_up_pow2(n: int) -> int:
    return 1 << max(1, (n - 1).bit_length())


def majority_firing(log_n: int, alpha: int) -> FiringFunction:
    """Staircase that spends ``alpha`` potential units at each probability
    1/N, 2/N, ..., 1/2 and reaches 1 at ``alpha * log_n``."""
    steps = [Step(j * alpha, Fraction(1, 2 ** (log_n - j))) for j in range(log_n)]
    steps.append(Step(alpha * log_n, 1))
    return FiringFunction(0, tuple(steps))


def majority_pair(N: int, epsilon) -> tuple[CellDefinition, CellDefinition]:
    """Type A and type B majority cells for networks of at most ``N`` cells.

    ``N`` is rounded up to a power of two so every breakpoint is an integer.
    """
    if N < 2:
        raise ValueError("majority cells need N >= 2")
    alpha = majority_alpha(epsilon)
    log_n = _round_up_pow2(N).bit_length() - 1
    span = alpha * log_n
    f = majority_firing(log_n, alpha)

    def make(me: str, other: str) -> CellDefinition:
        g = MembraneFunction(1, (MembraneRule((Condition(f"m_{other}"),), -2 * span),))
        return check_cell(CellDefinition(
            name=f"majority_{me}", q0=0, sigma=3 * span, lam=1, omega=-3 * span,
            membrane=g, events=(BioelectricEvent(f, span, f"m_{me}"),),
            expression=ExpressionRule(me, 3 * span, suppress_neighbors=True),
        ))

    return make("A", "B"), make("B", "A")


TEMPLATES: Mapping[str, Callable[..., object]] = {
    "knockback": knockback,
    "small_threshold": small_threshold,
    "general_threshold": general_threshold,
    "majority_A": lambda N, epsilon: majority_pair(int(N), rational(epsilon))[0],
    "majority_B": lambda N, epsilon: majority_pair(int(N), rational(epsilon))[1],
}


def from_template(name: str, **params) -> CellDefinition:
    try:
        build = TEMPLATES[name]
    except KeyError:
        raise CellDefinitionError(
            f"unknown cell template {name!r}; known: {', '.join(sorted(TEMPLATES))}") from None
    return build(**params)
