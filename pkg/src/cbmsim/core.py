"""Cell definitions and the pure evaluators used by every round of a simulation.

All potentials, offsets and probabilities are :class:`fractions.Fraction`
values. Nothing in here touches floating point.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Mapping, Optional, Sequence, Union

Ligand = str
Potential = Fraction
RationalLike = Union[Fraction, int, str]

NON_DECREASING = "non-decreasing"
NON_INCREASING = "non-increasing"

#: membrane condition operators
AT_LEAST = ">="
NONE = "==0"

EVENT_WARN_LIMIT = 4
EVENT_ERROR_LIMIT = 8


class CellDefinitionError(ValueError):
    """A cell definition violates a model constraint."""


class CellDefinitionWarning(UserWarning):
    pass


def rational(value: RationalLike) -> Fraction:
    """Parse ``value`` into an exact Fraction.

    Accepts ints, Fractions and strings such as ``"3/2"``, ``"-2"`` or
    ``"0.25"``. Floats are refused: they would silently smuggle rounding error
    into breakpoint comparisons.
    """
    if isinstance(value, bool):
        raise TypeError("booleans are not potentials")
    if isinstance(value, Fraction):
        return value
    if isinstance(value, int):
        return Fraction(value)
    if isinstance(value, str):
        return Fraction(value.strip())
    raise TypeError(f"expected an exact rational, got {type(value).__name__}: {value!r}")


def format_rational(value: Fraction) -> str:
    if value.denominator == 1:
        return str(value.numerator)
    return f"{value.numerator}/{value.denominator}"


@dataclass(frozen=True)
class Step:
    """One breakpoint of a piecewise-constant firing function.

    The step covers ``x >= threshold`` (or ``x > threshold`` when ``strict``)
    up to the next step.
    """

    threshold: Fraction
    probability: Fraction
    strict: bool = False

    def __post_init__(self):
        object.__setattr__(self, "threshold", rational(self.threshold))
        object.__setattr__(self, "probability", rational(self.probability))

    def covers(self, x: Fraction) -> bool:
        return x > self.threshold if self.strict else x >= self.threshold


@dataclass(frozen=True)
class FiringFunction:
    below: Fraction
    steps: tuple[Step, ...] = ()
    direction: str = NON_DECREASING

    def __post_init__(self):
        object.__setattr__(self, "below", rational(self.below))
        object.__setattr__(self, "steps", tuple(self.steps))
        if self.direction not in (NON_DECREASING, NON_INCREASING):
            raise CellDefinitionError(f"unknown direction {self.direction!r}")
        for a, b in zip(self.steps, self.steps[1:]):
            if (b.threshold, b.strict) <= (a.threshold, a.strict):
                raise CellDefinitionError(
                    f"breakpoints must be strictly increasing: {a.threshold} then {b.threshold}")
        for p in self.probabilities:
            if not 0 <= p <= 1:
                raise CellDefinitionError(f"probability {p} outside [0, 1]")

    @property
    def probabilities(self) -> tuple[Fraction, ...]:
        return (self.below,) + tuple(s.probability for s in self.steps)

    @classmethod
    def constant(cls, p: RationalLike) -> "FiringFunction":
        return cls(rational(p))

    @classmethod
    def step_at(cls, threshold: RationalLike, *, strict: bool = False,
                low: RationalLike = 0, high: RationalLike = 1) -> "FiringFunction":
        low, high = rational(low), rational(high)
        direction = NON_DECREASING if low <= high else NON_INCREASING
        return cls(low, (Step(rational(threshold), high, strict),), direction)

    def __call__(self, x: Fraction) -> Fraction:
        return evaluate_firing(self, x)


@dataclass(frozen=True)
class BioelectricEvent:
    firing: FiringFunction
    offset: Fraction
    ligand: Ligand

    def __post_init__(self):
        object.__setattr__(self, "offset", rational(self.offset))


@dataclass(frozen=True)
class Condition:
    ligand: Ligand
    op: str = AT_LEAST
    count: int = 1

    def __post_init__(self):
        if self.op not in (AT_LEAST, NONE):
            raise CellDefinitionError(f"unknown membrane operator {self.op!r}")
        if self.op == AT_LEAST and self.count < 1:
            raise CellDefinitionError("an at-least condition needs a count >= 1")

    def holds(self, capped_count: int) -> bool:
        if self.op == AT_LEAST:
            return capped_count >= self.count
        return capped_count == 0


@dataclass(frozen=True)
class MembraneRule:
    conditions: tuple[Condition, ...]
    offset: Fraction

    def __post_init__(self):
        object.__setattr__(self, "conditions", tuple(self.conditions))
        object.__setattr__(self, "offset", rational(self.offset))

    def satisfied(self, capped: Mapping[Ligand, int]) -> bool:
        return all(c.holds(capped.get(c.ligand, 0)) for c in self.conditions)


@dataclass(frozen=True)
class MembraneFunction:
    binding_bound: int = 1
    rules: tuple[MembraneRule, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "rules", tuple(self.rules))
        if self.binding_bound < 1:
            raise CellDefinitionError("binding bound must be a positive integer")

    @property
    def ligands(self) -> frozenset[Ligand]:
        return frozenset(c.ligand for r in self.rules for c in r.conditions)

    def __call__(self, received) -> Fraction:
        return apply_membrane(self, received)


@dataclass(frozen=True)
class ExpressionRule:
    label: str
    threshold: Fraction
    suppress_neighbors: bool = False

    def __post_init__(self):
        object.__setattr__(self, "threshold", rational(self.threshold))


@dataclass(frozen=True)
class CellDefinition:
    name: str
    q0: Fraction
    sigma: Fraction
    lam: Fraction
    omega: Fraction
    membrane: MembraneFunction = field(default_factory=MembraneFunction)
    events: tuple[BioelectricEvent, ...] = ()
    expression: Optional[ExpressionRule] = None

    def __post_init__(self):
        for attr in ("q0", "sigma", "lam", "omega"):
            object.__setattr__(self, attr, rational(getattr(self, attr)))
        object.__setattr__(self, "events", tuple(self.events))

    @property
    def ligands(self) -> frozenset[Ligand]:
        return self.membrane.ligands | {e.ligand for e in self.events}


@dataclass(frozen=True)
class MonotoneViolation:
    """First pair of adjacent probabilities that breaks monotonicity.

    ``pair`` is 1-based over the probability sequence (below-first value
    included), so ``(2, 3)`` means the first and second breakpoints.
    """

    pair: tuple[int, int]
    values: tuple[Fraction, Fraction]
    direction: str

    def __str__(self):
        a, b = self.values
        return (f"firing function declared {self.direction} but probability "
                f"#{self.pair[0]} = {format_rational(a)} and "
                f"#{self.pair[1]} = {format_rational(b)}")


def evaluate_firing(f: FiringFunction, x: Fraction) -> Fraction:
    p = f.below
    for step in f.steps:
        if not step.covers(x):
            break
        p = step.probability
    return p


def validate_monotone(f: FiringFunction) -> Optional[MonotoneViolation]:
    probs = f.probabilities
    for i, (a, b) in enumerate(zip(probs, probs[1:]), start=1):
        bad = b < a if f.direction == NON_DECREASING else b > a
        if bad:
            return MonotoneViolation((i, i + 1), (a, b), f.direction)
    return None


def count_ligands(received) -> dict[Ligand, int]:
    if isinstance(received, Mapping):
        return {k: int(v) for k, v in received.items() if v}
    counts: dict[Ligand, int] = {}
    for ligand in received:
        counts[ligand] = counts.get(ligand, 0) + 1
    return counts


def cap_counts(counts: Mapping[Ligand, int], bound: int) -> dict[Ligand, int]:
    return {k: min(v, bound) for k, v in counts.items()}


def apply_membrane(g: MembraneFunction, received) -> Fraction:
    """Potential offset for a round in which the ligands ``received`` arrived.

    ``received`` is either an iterable of ligands (a multiset) or a mapping
    from ligand to count. Counts are capped at the binding bound before any
    rule is looked at; every satisfied rule contributes its offset.
    """
    capped = cap_counts(count_ligands(received), g.binding_bound)
    return sum((r.offset for r in g.rules if r.satisfied(capped)), Fraction(0))


def gradient_delta(potential: Fraction, sigma: Fraction, lam: Fraction,
                   paper_literal: bool = False) -> Fraction:
    """Offset that drifts ``potential`` toward ``sigma`` by at most ``lam``.

    With ``paper_literal`` the small-negative-gap case returns ``z`` instead of
    ``-z``, which pushes the potential away from equilibrium. Kept only for
    side-by-side comparison.
    """
    if lam < 0:
        raise ValueError("gradient rate must be non-negative")
    z = potential - sigma
    if z >= lam:
        return -lam
    if z > 0:
        return -z
    if z == 0:
        return Fraction(0)
    if z > -lam:
        return z if paper_literal else -z
    return lam


def validate_cell(cell: CellDefinition) -> list[str]:
    """Return constraint violations for ``cell``; empty means acceptable.

    Having more than EVENT_WARN_LIMIT events only emits a warning.
    """
    problems = []
    if cell.lam < 0:
        problems.append(f"{cell.name}: gradient rate {cell.lam} is negative")
    n_events = len(cell.events)
    if n_events > EVENT_ERROR_LIMIT:
        problems.append(f"{cell.name}: {n_events} bioelectric events exceeds the limit of "
                        f"{EVENT_ERROR_LIMIT}")
    elif n_events > EVENT_WARN_LIMIT:
        warnings.warn(f"{cell.name}: {n_events} bioelectric events is more than "
                      f"{EVENT_WARN_LIMIT}", CellDefinitionWarning, stacklevel=2)
    for i, event in enumerate(cell.events):
        violation = validate_monotone(event.firing)
        if violation is not None:
            problems.append(f"{cell.name}: event {i}: {violation}")
    bound = cell.membrane.binding_bound
    for rule in cell.membrane.rules:
        for cond in rule.conditions:
            if cond.op == AT_LEAST and cond.count > bound:
                problems.append(f"{cell.name}: condition on {cond.ligand} counts to "
                                f"{cond.count} beyond binding bound {bound}")
    return problems


def check_cell(cell: CellDefinition) -> CellDefinition:
    problems = validate_cell(cell)
    if problems:
        raise CellDefinitionError("; ".join(problems))
    return cell


# -- JSON ---------------------------------------------------------------------

def _step_to_json(s: Step) -> dict:
    d = {"threshold": format_rational(s.threshold), "probability": format_rational(s.probability)}
    if s.strict:
        d["strict"] = True
    return d


def firing_to_json(f: FiringFunction) -> dict:
    return {"direction": f.direction, "below": format_rational(f.below),
            "breakpoints": [_step_to_json(s) for s in f.steps]}


def firing_from_json(d: Mapping) -> FiringFunction:
    steps = tuple(Step(rational(s["threshold"]), rational(s["probability"]),
                       bool(s.get("strict", False))) for s in d.get("breakpoints", ()))
    return FiringFunction(rational(d.get("below", 0)), steps,
                          d.get("direction", NON_DECREASING))


def expression_to_json(rule: ExpressionRule) -> dict:
    return {"label": rule.label, "threshold": format_rational(rule.threshold),
            "suppress_neighbors": rule.suppress_neighbors}


def expression_from_json(d: Mapping) -> ExpressionRule:
    return ExpressionRule(d["label"], rational(d["threshold"]),
                          bool(d.get("suppress_neighbors", False)))


def cell_to_json(cell: CellDefinition) -> dict:
    d = {
        "name": cell.name,
        "q0": format_rational(cell.q0),
        "sigma": format_rational(cell.sigma),
        "lambda": format_rational(cell.lam),
        "omega": format_rational(cell.omega),
        "membrane": {
            "binding_bound": cell.membrane.binding_bound,
            "rules": [
                {"conditions": [{"ligand": c.ligand, "op": c.op, "count": c.count}
                                for c in r.conditions],
                 "offset": format_rational(r.offset)}
                for r in cell.membrane.rules
            ],
        },
        "events": [
            {"firing": firing_to_json(e.firing), "offset": format_rational(e.offset),
             "ligand": e.ligand}
            for e in cell.events
        ],
    }
    if cell.expression is not None:
        d["expression"] = expression_to_json(cell.expression)
    return d


def cell_from_json(d: Mapping) -> CellDefinition:
    """Build a CellDefinition from its JSON form. Structure only; call
    :func:`validate_cell` for the model constraints."""
    m = d.get("membrane", {})
    rules = tuple(
        MembraneRule(tuple(Condition(c["ligand"], c.get("op", AT_LEAST), int(c.get("count", 1)))
                           for c in r.get("conditions", ())),
                     rational(r["offset"]))
        for r in m.get("rules", ())
    )
    events = tuple(BioelectricEvent(firing_from_json(e["firing"]), rational(e.get("offset", 0)),
                                    e["ligand"])
                   for e in d.get("events", ()))
    expr = d.get("expression")
    return CellDefinition(
        name=d["name"], q0=rational(d["q0"]), sigma=rational(d["sigma"]),
        lam=rational(d["lambda"]), omega=rational(d["omega"]),
        membrane=MembraneFunction(int(m.get("binding_bound", 1)), rules),
        events=events,
        expression=expression_from_json(expr) if expr else None,
    )


def ligand_namespace(cells: Iterable[CellDefinition]) -> tuple[Ligand, ...]:
    names: set[Ligand] = set()
    for c in cells:
        names |= c.ligands
    return tuple(sorted(names))


__all__: Sequence[str] = [
    "AT_LEAST", "NONE", "NON_DECREASING", "NON_INCREASING",
    "BioelectricEvent", "CellDefinition", "CellDefinitionError", "CellDefinitionWarning",
    "Condition", "ExpressionRule", "FiringFunction", "Ligand", "MembraneFunction",
    "MembraneRule", "MonotoneViolation", "Potential", "Step",
    "apply_membrane", "cell_from_json", "cell_to_json", "check_cell", "evaluate_firing",
    "format_rational", "gradient_delta", "ligand_namespace", "rational",
    "validate_cell", "validate_monotone",
]
